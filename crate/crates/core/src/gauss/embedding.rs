//! Exact factorizations for drawing Gaussian vectors with prescribed
//! covariance: circulant (spectral) embedding for stationary sequences, and
//! a dense symmetric factorization as the general fallback.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Eigenvalues of the embedding circulant more negative than this (relative
/// to the largest) mean the embedding genuinely failed; anything in
/// `(-TOL, 0)` is rounding noise and is clipped to zero.
const NEGATIVE_EIG_TOLERANCE: f64 = 1e-10;

/// Spectral factorization of a stationary covariance sequence on a uniform
/// grid, via embedding into a nonnegative-definite circulant.
///
/// One draw produces an exact sample of `points` consecutive values and
/// consumes exactly `size()` standard normals, where `size()` is the
/// (power-of-two) circulant order.
pub(crate) struct CirculantFactor {
    points: usize,
    size: usize,
    /// `sqrt(lambda_j / size)` for each circulant eigenvalue `lambda_j`.
    scaled_sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    clipped: usize,
    min_eigenvalue: f64,
}

/// Reusable FFT buffers for [`CirculantFactor::draw`]; one per worker.
pub(crate) struct CirculantWorkspace {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl CirculantFactor {
    /// Build the factorization for `cov(lag)`, `lag = 0..=size/2`, doubling
    /// the circulant order up to `max_doublings` times if the embedding has
    /// substantially negative eigenvalues.
    pub fn build(
        points: usize,
        max_doublings: u32,
        cov: &dyn Fn(usize) -> f64,
    ) -> Result<Self> {
        if points < 2 {
            return Err(Error::config(
                "circulant factorization needs at least two grid points".to_string(),
            ));
        }
        let mut planner = FftPlanner::new();
        let mut size = (2 * (points - 1)).next_power_of_two();
        let mut last_min = f64::NAN;
        for attempt in 0..=max_doublings {
            let mut buf: Vec<Complex<f64>> = (0..size)
                .map(|j| Complex::new(cov(j.min(size - j)), 0.0))
                .collect();
            let fft = planner.plan_fft_forward(size);
            let mut scratch = vec![Complex::ZERO; fft.get_inplace_scratch_len()];
            fft.process_with_scratch(&mut buf, &mut scratch);

            let eigs: Vec<f64> = buf.iter().map(|z| z.re).collect();
            let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_eig = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            last_min = min_eig;
            let tol = NEGATIVE_EIG_TOLERANCE * max_eig.max(1.0);
            if min_eig < -tol {
                if attempt < max_doublings {
                    log::debug!(
                        "circulant embedding of order {size} has eigenvalue {min_eig:.3e}; doubling"
                    );
                    size *= 2;
                    continue;
                }
                break;
            }

            let clipped = eigs.iter().filter(|&&l| l < 0.0).count();
            if clipped > 0 {
                log::warn!(
                    "circulant embedding of order {size}: clipped {clipped} slightly negative eigenvalue(s), most negative {min_eig:.3e}"
                );
            }
            let scale = 1.0 / size as f64;
            let scaled_sqrt_eig = eigs
                .iter()
                .map(|&l| (l.max(0.0) * scale).sqrt())
                .collect();
            return Ok(Self {
                points,
                size,
                scaled_sqrt_eig,
                fft,
                clipped,
                min_eigenvalue: min_eig,
            });
        }
        Err(Error::NotPositiveDefinite(format!(
            "circulant embedding still indefinite at order {size} (min eigenvalue {last_min:.3e}) after {max_doublings} doubling(s)"
        )))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn points(&self) -> usize {
        self.points
    }

    #[allow(dead_code)]
    pub fn clipped_eigenvalues(&self) -> usize {
        self.clipped
    }

    #[allow(dead_code)]
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn workspace(&self) -> CirculantWorkspace {
        CirculantWorkspace {
            buf: vec![Complex::ZERO; self.size],
            scratch: vec![Complex::ZERO; self.fft.get_inplace_scratch_len()],
        }
    }

    /// Draw one exact sample into `out[..points]`.
    ///
    /// Consumes `size()` standard normals from `rng` in a fixed order, so a
    /// given stream always produces the same path regardless of context.
    pub fn draw(&self, rng: &mut ChaCha8Rng, ws: &mut CirculantWorkspace, out: &mut [f64]) {
        let m = self.size;
        let half = m / 2;
        let buf = &mut ws.buf;
        let g0: f64 = rng.sample(StandardNormal);
        buf[0] = Complex::new(self.scaled_sqrt_eig[0] * g0, 0.0);
        let gh: f64 = rng.sample(StandardNormal);
        buf[half] = Complex::new(self.scaled_sqrt_eig[half] * gh, 0.0);
        for j in 1..half {
            let s = self.scaled_sqrt_eig[j] * FRAC_1_SQRT_2;
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            buf[j] = Complex::new(s * re, s * im);
            buf[m - j] = Complex::new(s * re, -(s * im));
        }
        self.fft.process_with_scratch(buf, &mut ws.scratch);
        for (o, b) in out[..self.points].iter_mut().zip(buf.iter()) {
            *o = b.re;
        }
    }
}

/// Dense factorization `cov = F F^T` for arbitrary (possibly singular)
/// symmetric nonnegative-definite covariance matrices.
///
/// Tries Cholesky first; on failure falls back to a symmetric
/// eigendecomposition with slightly negative eigenvalues clipped to zero.
pub(crate) struct DenseFactor {
    dim: usize,
    factor: DMatrix<f64>,
}

/// Scratch vector of standard normals for [`DenseFactor::draw`].
pub(crate) struct DenseWorkspace {
    z: Vec<f64>,
}

impl DenseFactor {
    pub fn build(cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || cov.ncols() != dim {
            return Err(Error::config(format!(
                "covariance matrix must be square and non-empty, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
            return Ok(Self {
                dim,
                factor: chol.unpack(),
            });
        }
        // Singular or numerically borderline: symmetric eigendecomposition.
        let eig = cov.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min_eig = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let tol = NEGATIVE_EIG_TOLERANCE * max_eig.max(1.0);
        if min_eig < -tol {
            return Err(Error::NotPositiveDefinite(format!(
                "matrix has eigenvalue {min_eig:.3e} beyond tolerance -{tol:.3e}"
            )));
        }
        if min_eig < 0.0 {
            log::warn!(
                "dense factorization: clipped slightly negative eigenvalue(s), most negative {min_eig:.3e}"
            );
        }
        // Eigenvalues at rounding-noise level are exactly zero as far as the
        // factor is concerned; keeping them would inject spurious noise into
        // otherwise-degenerate directions.
        let clip = 1e-13 * max_eig;
        let mut factor = eig.eigenvectors;
        for (j, l) in eig.eigenvalues.iter().enumerate() {
            let s = if *l <= clip { 0.0 } else { l.sqrt() };
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Self { dim, factor })
    }

    /// Build from a stationary lag covariance (a Toeplitz matrix).
    pub fn from_lags(points: usize, cov: &dyn Fn(usize) -> f64) -> Result<Self> {
        if points == 0 {
            return Err(Error::config(
                "dense factorization needs at least one grid point".to_string(),
            ));
        }
        let m = DMatrix::from_fn(points, points, |i, j| cov(i.abs_diff(j)));
        Self::build(m)
    }

    #[allow(dead_code)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workspace(&self) -> DenseWorkspace {
        DenseWorkspace {
            z: vec![0.0; self.dim],
        }
    }

    /// Draw one sample into `out[..dim]`, consuming `dim` standard normals.
    pub fn draw(&self, rng: &mut ChaCha8Rng, ws: &mut DenseWorkspace, out: &mut [f64]) {
        for z in ws.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        for (i, o) in out[..self.dim].iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, z) in ws.z.iter().enumerate() {
                acc += self.factor[(i, j)] * z;
            }
            *o = acc;
        }
    }
}

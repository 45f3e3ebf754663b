//! Cross-checks of the threshold-crossing Monte Carlo against independent
//! oracles: exact bivariate quadrature on a two-point grid, a dense-route
//! brute-force simulation on the same fine grid, exact statistic identities
//! between variants, and the mixture identity for random clocks.

use supmin::extremes::{
    asymptotic_single_process, brute_force_sup_tail, conditional_excursion_sample,
    limit_companion_sample, mc_sup_tail, ratio_diagnostic, sup_statistic_samples, LadderOptions,
    TailQuery,
};
use supmin::gauss::CorrelationModel;
use supmin::limit::{Atom, EnsembleSpec, LimitVariant, ProcessSpec, TimeChangeLaw};
use supmin::stats::{normal_survival, Estimate, StreamFamily};

fn pe(c: f64, alpha: f64) -> CorrelationModel {
    CorrelationModel::powered_exponential(c, alpha).unwrap()
}

fn z_gap(a: &Estimate, b: &Estimate) -> f64 {
    (a.mean - b.mean).abs() / a.combined_stderr(b)
}

/// Standard normal density.
fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// P(X <= u, Y <= u) for standard bivariate normal with correlation rho,
/// by Simpson quadrature of the conditional representation
/// `int_{-inf}^{u} phi(z) Phi((u - rho z)/sqrt(1-rho^2)) dz`.
fn bivariate_both_below(u: f64, rho: f64) -> f64 {
    let s = (1.0 - rho * rho).sqrt();
    let f = |z: f64| phi(z) * (1.0 - normal_survival((u - rho * z) / s).unwrap());
    let (lo, hi, n) = (-10.0f64, u, 4000usize);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn two_point_grid_matches_exact_bivariate_probability() {
    // u = 2 so q(u) = 1/4; gap 0.8 gives pitch 0.2 and horizon 0.3 keeps
    // exactly two grid points {0, 0.2}.
    let model = pe(1.0, 1.0);
    let query = TailQuery {
        spec: EnsembleSpec::from_models(vec![model]).unwrap(),
        variant: LimitVariant::Standard,
        horizon: 0.3,
        threshold: 2.0,
        gap: 0.8,
        replicas: 400_000,
    };
    let res = mc_sup_tail(
        &query,
        &LadderOptions {
            refinement_levels: 0,
            gate_z: 2.0,
        },
        &StreamFamily::new(11),
    )
    .unwrap();
    assert_eq!(res.estimates.len(), 1);
    let rho = model.correlation(0.2);
    let exact = 1.0 - bivariate_both_below(2.0, rho);
    let z = (res.final_estimate.mean - exact).abs() / res.final_estimate.stderr;
    assert!(
        z < 4.5,
        "two-point crossing: mc {} vs exact {exact} (z = {z:.2})",
        res.final_estimate.mean
    );
}

#[test]
fn ladder_agrees_with_dense_brute_force_on_same_fine_grid() {
    let spec = EnsembleSpec::from_models(vec![pe(1.0, 1.0), pe(2.0, 1.5)]).unwrap();
    let ladder_query = TailQuery {
        spec: spec.clone(),
        variant: LimitVariant::Standard,
        horizon: 1.0,
        threshold: 1.8,
        gap: 0.4,
        replicas: 150_000,
    };
    let res = mc_sup_tail(
        &ladder_query,
        &LadderOptions {
            refinement_levels: 1,
            gate_z: 2.0,
        },
        &StreamFamily::new(21),
    )
    .unwrap();
    // Same fine pitch, sampled through the explicit dense factorization.
    let brute_query = TailQuery {
        gap: 0.2,
        ..ladder_query
    };
    let brute = brute_force_sup_tail(&brute_query, &StreamFamily::new(22)).unwrap();
    let z = z_gap(&res.final_estimate, &brute);
    assert!(
        z < 4.5,
        "ladder {} vs brute force {} (z = {z:.2})",
        res.final_estimate.mean,
        brute.mean
    );
}

#[test]
fn single_process_ratio_against_classical_formula() {
    // For roughness 1 the unit-scale crossing constant is exactly 1, so the
    // classical approximation needs no estimated input. On a discrete grid
    // the Monte Carlo must come out below the continuum value but within a
    // plausible band of it at a moderately high threshold.
    let model = pe(1.0, 1.0);
    let query = TailQuery {
        spec: EnsembleSpec::from_models(vec![model]).unwrap(),
        variant: LimitVariant::Standard,
        horizon: 1.0,
        threshold: 3.0,
        gap: 0.25,
        replicas: 200_000,
    };
    let res = mc_sup_tail(
        &query,
        &LadderOptions {
            refinement_levels: 2,
            gate_z: 2.0,
        },
        &StreamFamily::new(31),
    )
    .unwrap();
    let h1 = Estimate::new(1.0, 0.0, 1);
    let asym = asymptotic_single_process(&model, 1.0, 3.0, &h1).unwrap();
    let ratio = ratio_diagnostic(&res.final_estimate, &asym).unwrap();
    assert!(
        ratio.ratio > 0.5 && ratio.ratio < 1.1,
        "discrete-grid ratio {} outside plausible band",
        ratio.ratio
    );
    assert!(ratio.ci_lower < ratio.ratio && ratio.ci_upper > ratio.ratio);
    // The finer rungs see more of the path, so the ratio improves monotonically.
    assert!(res.estimates[0].mean <= res.estimates[2].mean);
}

#[test]
fn order_stat_with_j_equal_n_is_identical_to_standard() {
    let spec = EnsembleSpec::from_models(vec![pe(1.0, 1.0), pe(1.0, 1.0)]).unwrap();
    let base = TailQuery {
        spec,
        variant: LimitVariant::Standard,
        horizon: 1.0,
        threshold: 1.5,
        gap: 0.5,
        replicas: 30_000,
    };
    let opts = LadderOptions {
        refinement_levels: 1,
        gate_z: 2.0,
    };
    let fam = StreamFamily::new(41);
    let std_res = mc_sup_tail(&base, &opts, &fam).unwrap();
    let os_query = TailQuery {
        variant: LimitVariant::OrderStat { j: 2 },
        ..base.clone()
    };
    let os_res = mc_sup_tail(&os_query, &opts, &fam).unwrap();
    assert_eq!(
        std_res.final_estimate.mean, os_res.final_estimate.mean,
        "minimum of n and n-th largest are the same statistic"
    );
    // j = 1 asks for the maximum instead: strictly more crossings.
    let max_query = TailQuery {
        variant: LimitVariant::OrderStat { j: 1 },
        ..base
    };
    let max_res = mc_sup_tail(&max_query, &opts, &fam).unwrap();
    assert!(max_res.final_estimate.mean > os_res.final_estimate.mean);
}

#[test]
fn scaled_thresholds_reduce_to_standard_at_unit_scale() {
    let models = vec![pe(1.0, 1.0), pe(2.0, 1.0)];
    let std_spec = EnsembleSpec::from_models(models.clone()).unwrap();
    let ns_spec = EnsembleSpec::new(
        models
            .iter()
            .map(|m| ProcessSpec::new(*m).with_scale(1.0))
            .collect(),
    )
    .unwrap();
    let opts = LadderOptions {
        refinement_levels: 0,
        gate_z: 2.0,
    };
    let fam = StreamFamily::new(51);
    let mk = |spec: EnsembleSpec, variant| TailQuery {
        spec,
        variant,
        horizon: 1.0,
        threshold: 1.5,
        gap: 0.4,
        replicas: 30_000,
    };
    let p_std = mc_sup_tail(&mk(std_spec, LimitVariant::Standard), &opts, &fam).unwrap();
    let p_ns = mc_sup_tail(&mk(ns_spec.clone(), LimitVariant::NonStandard), &opts, &fam).unwrap();
    assert_eq!(p_std.final_estimate.mean, p_ns.final_estimate.mean);

    // Doubling one threshold factor can only lose crossings.
    let harder = EnsembleSpec::new(vec![
        ProcessSpec::new(models[0]),
        ProcessSpec::new(models[1]).with_scale(2.0),
    ])
    .unwrap();
    let p_hard = mc_sup_tail(&mk(harder, LimitVariant::NonStandard), &opts, &fam).unwrap();
    assert!(p_hard.final_estimate.mean < p_ns.final_estimate.mean);
}

#[test]
fn random_clock_crossing_is_the_speed_mixture_of_plain_crossings() {
    // One process with speed atoms {1/2, 2}: observing the process at speed
    // v on a pitch-h grid is the same as observing a process with local
    // scale c v^alpha on the same grid, so the crossing probability is the
    // weighted mixture of the two plain runs.
    let law = TimeChangeLaw::Discrete {
        atoms: vec![
            Atom {
                value: 0.5,
                weight: 0.5,
            },
            Atom {
                value: 2.0,
                weight: 0.5,
            },
        ],
    };
    let tc_spec =
        EnsembleSpec::new(vec![ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law)]).unwrap();
    let opts = LadderOptions {
        refinement_levels: 0,
        gate_z: 2.0,
    };
    let mk = |spec, variant| TailQuery {
        spec,
        variant,
        horizon: 1.0,
        threshold: 1.5,
        gap: 0.5,
        replicas: 200_000,
    };
    let p_tc = mc_sup_tail(
        &mk(tc_spec, LimitVariant::TimeChanged),
        &opts,
        &StreamFamily::new(61),
    )
    .unwrap();
    let p_slow = mc_sup_tail(
        &mk(
            EnsembleSpec::from_models(vec![pe(0.5, 1.0)]).unwrap(),
            LimitVariant::Standard,
        ),
        &opts,
        &StreamFamily::new(62),
    )
    .unwrap();
    let p_fast = mc_sup_tail(
        &mk(
            EnsembleSpec::from_models(vec![pe(2.0, 1.0)]).unwrap(),
            LimitVariant::Standard,
        ),
        &opts,
        &StreamFamily::new(63),
    )
    .unwrap();
    let mix = 0.5 * p_slow.final_estimate.mean + 0.5 * p_fast.final_estimate.mean;
    let mix_se = 0.5
        * (p_slow.final_estimate.stderr.powi(2) + p_fast.final_estimate.stderr.powi(2)).sqrt();
    let se = (p_tc.final_estimate.stderr.powi(2) + mix_se * mix_se).sqrt();
    let z = (p_tc.final_estimate.mean - mix).abs() / se;
    assert!(
        z < 4.5,
        "random-clock crossing {} vs mixture {mix} (z = {z:.2})",
        p_tc.final_estimate.mean
    );
}

#[test]
fn continuous_clock_speeds_run_and_land_between_the_extremes() {
    let law = TimeChangeLaw::Uniform { lo: 0.5, hi: 2.0 };
    let spec =
        EnsembleSpec::new(vec![ProcessSpec::new(pe(1.0, 1.0)).with_time_change(law)]).unwrap();
    let query = TailQuery {
        spec,
        variant: LimitVariant::TimeChanged,
        horizon: 1.0,
        threshold: 1.5,
        gap: 0.5,
        replicas: 4_000,
    };
    let res = mc_sup_tail(
        &query,
        &LadderOptions {
            refinement_levels: 0,
            gate_z: 2.0,
        },
        &StreamFamily::new(71),
    )
    .unwrap();
    let p = res.final_estimate.mean;
    assert!(p.is_finite() && p > 0.0 && p < 1.0);
}

#[test]
fn supremum_samples_reproduce_the_ladder_base_rung() {
    let spec = EnsembleSpec::from_models(vec![pe(1.0, 1.0), pe(1.0, 1.5)]).unwrap();
    let query = TailQuery {
        spec: spec.clone(),
        variant: LimitVariant::Standard,
        horizon: 1.0,
        threshold: 1.5,
        gap: 0.5,
        replicas: 20_000,
    };
    let fam = StreamFamily::new(81);
    let res = mc_sup_tail(
        &query,
        &LadderOptions {
            refinement_levels: 0,
            gate_z: 2.0,
        },
        &fam,
    )
    .unwrap();
    // Same grid, same streams, thresholded by hand.
    let q = query.local_scale();
    let pitch = query.gap * q;
    let points = (query.horizon / pitch + 1e-9).floor() as usize + 1;
    let sups =
        sup_statistic_samples(&spec, LimitVariant::Standard, pitch, points, 20_000, &fam).unwrap();
    let hits = sups.iter().filter(|&&s| s > query.threshold).count() as u64;
    let manual = Estimate::from_binomial(hits, 20_000).unwrap();
    assert_eq!(res.final_estimate.mean, manual.mean);
    // Raising the threshold on the same draws can only lose crossings.
    let hits_high = sups.iter().filter(|&&s| s > 2.5).count() as u64;
    assert!(hits_high <= hits);
}

#[test]
fn excursion_sampler_accepts_at_the_predicted_rate() {
    let spec = EnsembleSpec::from_models(vec![pe(1.0, 1.0)]).unwrap();
    let raw = 30_000u64;
    let sample = conditional_excursion_sample(
        &spec,
        1.5,
        &[0.5, 1.0, 2.0],
        raw,
        1_000,
        &StreamFamily::new(91),
    )
    .unwrap();
    let p = sample.acceptance_probability;
    assert!((p - normal_survival(1.5).unwrap()).abs() < 1e-15);
    let mean = raw as f64 * p;
    let sd = (raw as f64 * p * (1.0 - p)).sqrt();
    let z = (sample.accepted as f64 - mean).abs() / sd;
    assert!(
        z < 4.5,
        "accepted {} vs predicted {mean:.0} (z = {z:.2})",
        sample.accepted
    );
    // Rows carry the conditioning time plus the three requested times.
    assert_eq!(sample.row_times(), vec![0.0, 0.5, 1.0, 2.0]);
    assert!(sample.rows.iter().all(|r| r.len() == 4));
    assert!(sample
        .rows
        .iter()
        .flat_map(|r| r.iter())
        .all(|v| v.is_finite()));
    // The time-0 value is n u (min - u) with min > u: strictly positive.
    assert!(sample.column(0).iter().all(|&v| v > 0.0));
}

#[test]
fn companion_limit_draws_have_the_right_shape_and_are_deterministic() {
    let spec = EnsembleSpec::from_models(vec![pe(1.0, 1.0), pe(1.0, 1.0)]).unwrap();
    let times = [0.25, 1.0];
    let a = limit_companion_sample(&spec, &times, 500, &StreamFamily::new(101)).unwrap();
    let b = limit_companion_sample(&spec, &times, 500, &StreamFamily::new(101)).unwrap();
    assert_eq!(a.len(), 500);
    assert!(a.iter().all(|r| r.len() == 2));
    assert_eq!(a, b, "same stream family must reproduce the draws");
}

//! Monte Carlo checks against closed forms and against each other.

use oslab_core::fracdim::{dimension_experiment, DimensionConfig, TimeSet};
use oslab_core::linops::ExponentMatrix;
use oslab_core::process::{scaling_check, scaling_check_exponents, uniform_grid, Process, ProcessSpec};
use oslab_core::sojourn::{
    covering_inequality_check, estimate_expected_sojourn, estimate_sojourn_profile, negative_moment,
};
use oslab_core::stats::{ks_two_sample, mean_stderr, skewness};

/// `E T(a, 1)` for planar Brownian motion: `1 - e^-c + c E_1(c)`, `c = a^2/2`.
/// Evaluated at high precision.
const BROWNIAN_SOJOURN_QUARTER: f64 = 0.12200200873645428;
const BROWNIAN_SOJOURN_EIGHTH: f64 = 0.041239966948203505;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn brownian_sojourn_grid_refinement() {
    let spec = ProcessSpec::brownian(2);
    let coarse = estimate_expected_sojourn(&spec, 0.25, 1.0, 4000, 1.0 / 4096.0, 11).unwrap();
    let fine = estimate_expected_sojourn(&spec, 0.25, 1.0, 4000, 1.0 / 32768.0, 12).unwrap();
    let joint = (coarse.stderr.powi(2) + fine.stderr.powi(2)).sqrt();
    assert!((coarse.mean - fine.mean).abs() <= 2.0 * joint, "{coarse:?} vs {fine:?}");
    assert!((fine.mean - BROWNIAN_SOJOURN_QUARTER).abs() <= 3.0 * fine.stderr, "{fine:?}");
}

#[test]
fn brownian_sojourn_ratio_matches_closed_form() {
    // Planar Brownian motion sits on the boundary alpha = d, so the ratio
    // for halved radii approaches 4 only logarithmically.
    let want = BROWNIAN_SOJOURN_QUARTER / BROWNIAN_SOJOURN_EIGHTH;
    assert!((want - 2.9583439989097502).abs() < 1e-12);
    let est = estimate_sojourn_profile(&ProcessSpec::brownian(2), &[0.25, 0.125], 1.0, 6000, 1.0 / 4096.0, 5).unwrap();
    let ratio = est[0].mean / est[1].mean;
    let se = ratio * ((est[0].stderr / est[0].mean).powi(2) + (est[1].stderr / est[1].mean).powi(2)).sqrt();
    assert!((ratio - want).abs() <= 3.0 * se, "ratio {ratio} +- {se}, want {want}");
}

#[test]
fn marginals_are_symmetric() {
    let specs = [
        ProcessSpec::isotropic_stable(1.3, 1.0, 2).unwrap(),
        ProcessSpec::product(vec![ProcessSpec::stable(1.8).unwrap(), ProcessSpec::stable(0.9).unwrap()]).unwrap(),
        ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).unwrap(),
    ];
    for spec in specs {
        let x = Process::new(spec.clone()).unwrap().sample_marginal(1.0, 20_000, 3).unwrap();
        for k in 0..x.dim() {
            let coord: Vec<f64> = x.iter().map(|p| p[k]).collect();
            let neg: Vec<f64> = coord.iter().map(|v| -v).collect();
            let ks = ks_two_sample(&coord, &neg).unwrap();
            assert!(ks.p_value > 1e-3, "{spec:?} coordinate {k}: {ks:?}");
        }
    }
    let g = Process::new(ProcessSpec::brownian(1)).unwrap().sample_marginal(1.0, 100_000, 9).unwrap();
    // Sample skewness of a normal sample has standard deviation sqrt(6/n).
    assert!(skewness(g.coords()).abs() < 4.0 * (6.0f64 / 100_000.0).sqrt());
}

#[test]
fn increments_are_stationary() {
    // X(1.5) - X(0.5) built from half steps against X(1) drawn in one step.
    let spec = ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).unwrap();
    let process = Process::new(spec).unwrap();
    let grid = [0.0, 0.5, 1.0, 1.5];
    let n = 5000u64;
    let late: Vec<f64> = (0..n)
        .map(|i| {
            let p = process.simulate(&grid, 21, i).unwrap();
            p.values.point(3)[0] - p.values.point(1)[0]
        })
        .collect();
    let early: Vec<f64> = (0..n)
        .map(|i| process.simulate(&[0.0, 1.0], 22, i).unwrap().values.point(1)[0])
        .collect();
    let ks = ks_two_sample(&late, &early).unwrap();
    assert!(ks.p_value > 1e-3, "{ks:?}");
}

#[test]
fn scaling_separates_true_and_broken_exponents() {
    let cases = [
        (ProcessSpec::isotropic_stable(1.5, 1.0, 2).unwrap(), 1.0 / 1.5),
        (ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).unwrap(), 1.0 / 1.5),
    ];
    for (spec, a) in cases {
        let d = spec.dim();
        let good = ExponentMatrix::diagonal(&vec![a; d]).unwrap();
        let bad = ExponentMatrix::diagonal(&vec![1.0 / (1.0 / a + 0.3); d]).unwrap();
        let r = scaling_check_exponents(&spec, &[good, bad], 1.0, 20_000, 8).unwrap();
        assert!(r[0].pass, "{spec:?}: {:?}", r[0].min_adjusted_p);
        assert!(!r[1].pass, "{spec:?}: {:?}", r[1].min_adjusted_p);
    }
    let mixed = ProcessSpec::conjugated(
        vec![vec![1.0, 0.4], vec![-0.2, 1.0]],
        ProcessSpec::product(vec![ProcessSpec::stable(1.8).unwrap(), ProcessSpec::stable(0.9).unwrap()]).unwrap(),
    )
    .unwrap();
    assert!(scaling_check(&mixed, 1.0, 20_000, 4).unwrap().pass);
}

#[test]
fn covering_inequality_holds() {
    let cases = [
        (ProcessSpec::brownian(2), 1.0 / 8.0),
        (ProcessSpec::isotropic_stable(1.2, 1.0, 2).unwrap(), 1.0 / 16.0),
    ];
    for (spec, a) in cases {
        let r = covering_inequality_check(&spec, a, 1.0, 200, 1.0 / 4096.0, 17).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.mean_count >= 1.0);
    }
}

#[test]
fn negative_moment_is_bounded_over_a_period() {
    let spec = ProcessSpec::product(vec![ProcessSpec::stable(1.5).unwrap(), ProcessSpec::stable(1.5).unwrap()]).unwrap();
    let tgrid: Vec<f64> = (0..8).map(|k| 1.0 + k as f64 / 8.0).collect();
    let r = negative_moment(&spec, 1.0, &tgrid, 20_000, 2).unwrap();
    assert!(r.all_finite);
    assert!(r.ratio() < 3.0, "{r:?}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = ProcessSpec::isotropic_stable(1.5, 1.0, 2).unwrap();
    let sojourn = |threads| {
        pool(threads).install(|| estimate_sojourn_profile(&spec, &[0.5, 0.25, 0.125], 1.0, 64, 1.0 / 1024.0, 42).unwrap())
    };
    assert_eq!(sojourn(1), sojourn(3));

    let marginal = |threads| pool(threads).install(|| Process::new(spec.clone()).unwrap().sample_marginal(1.0, 5000, 7).unwrap());
    assert_eq!(marginal(1), marginal(3));

    let cfg = DimensionConfig {
        resolution: 4097,
        n_paths: 6,
        deltagrid: (1..=8).map(|k| 0.5f64.powi(k)).collect(),
        seed: 3,
        band: 0.5,
        pooled_max_points: 20_000,
    };
    let ts = TimeSet::Interval(0.0, 1.0);
    let dim = |threads| pool(threads).install(|| dimension_experiment(&spec, &ts, &cfg).unwrap());
    assert_eq!(dim(1), dim(3));
}

#[test]
fn sojourn_samples_are_independent_across_paths() {
    // Paths with distinct indices must not share increments.
    let process = Process::new(ProcessSpec::brownian(1)).unwrap();
    let grid = uniform_grid(1.0, 0.25).unwrap();
    let ends: Vec<f64> = (0..4000)
        .map(|i| process.simulate(&grid, 77, i).unwrap().values.point(4)[0])
        .collect();
    let (m, se) = mean_stderr(&ends);
    assert!(m.abs() < 4.0 * se);
    let pairs: Vec<f64> = ends.chunks_exact(2).map(|w| w[0] * w[1]).collect();
    let (c, cse) = mean_stderr(&pairs);
    assert!(c.abs() < 4.0 * cse, "lag-one covariance {c} +- {cse}");
}

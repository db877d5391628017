//! The acceptance battery. Every statistical setting and tolerance of the
//! ten criteria is pinned here; criterion `k` runs with seed `seed + k`.

use std::f64::consts::PI;
use std::time::Instant;

use oslab_core::fracdim::{box_dim_fit, range_dim_from_indices, theoretical_range_dim, time_set_points, TimeSet};
use oslab_core::linops::{spectral_decompose, ExponentMatrix, DEFAULT_CLUSTER_TOL};
use oslab_core::points::PointSet;
use oslab_core::process::ProcessSpec;
use oslab_core::rng::Substream;
use oslab_core::zoo::{law_residuals, random_exponent, ZOO_CLUSTER_TOL};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    Config, CoverConfig, DecomposeConfig, DimConfig, NegmomentConfig, PathFormat, Reference, ScalecheckConfig,
    SimulateConfig, SojournConfig, SuiteConfig,
};
use crate::error::CliError;
use crate::run::{execute, Outcome, Provenance, Verdict};

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "operator laws over a randomized exponent zoo"),
    (2, "semistable scaling law with a broken control"),
    (3, "sojourn exponent, case i"),
    (4, "sojourn exponent, case ii"),
    (5, "covering inequality"),
    (6, "negative moment diagnostic"),
    (7, "box-counting oracle"),
    (8, "range dimension end to end"),
    (9, "dimension formula caps"),
    (10, "determinism across thread counts"),
];

/// Operator-law residual tolerance (Frobenius).
pub const LAW_TOL: f64 = 1e-8;
pub const ZOO_SIZE: usize = 50;
pub const ZOO_MAX_DIM: usize = 6;
pub const FORMULA_TUPLES: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub name: String,
    pub elapsed_s: f64,
    pub budget_s: Option<f64>,
}

impl Timing {
    pub fn within(&self) -> bool {
        self.budget_s.is_none_or(|b| self.elapsed_s <= b)
    }
}

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: u32,
    pub title: &'static str,
    /// Deterministic checks; timings are kept apart so result files stay
    /// reproducible.
    pub checks: Vec<Verdict>,
    pub timings: Vec<Timing>,
    pub metrics: Value,
    pub files: Vec<(String, Vec<u8>)>,
}

impl CriterionReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && self.timings.iter().all(Timing::within)
    }

    /// One line: status, number, title and the checks that decided it.
    pub fn summary(&self) -> String {
        let status = if self.pass() { "PASS" } else { "FAIL" };
        let checks: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{}[{}]: {}", c.name, if c.pass { "ok" } else { "FAIL" }, c.detail))
            .collect();
        let times: Vec<String> = self
            .timings
            .iter()
            .map(|t| match t.budget_s {
                Some(b) => format!("{} {:.1}s/{b:.0}s", t.name, t.elapsed_s),
                None => format!("{} {:.1}s", t.name, t.elapsed_s),
            })
            .collect();
        format!(
            "{status} criterion {:>2}: {} | {} | {}",
            self.id,
            self.title,
            checks.join("; "),
            times.join(", ")
        )
    }
}

fn check(name: &str, pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict::new(name, pass, detail)
}

fn title(id: u32) -> &'static str {
    CRITERIA.iter().find(|(k, _)| *k == id).map(|(_, t)| *t).expect("known criterion")
}

fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

fn stable(alpha: f64) -> ProcessSpec {
    ProcessSpec::stable(alpha).expect("valid index")
}

fn isotropic(alpha: f64, dim: usize) -> ProcessSpec {
    ProcessSpec::isotropic_stable(alpha, 1.0, dim).expect("valid index")
}

fn product(a1: f64, a2: f64) -> ProcessSpec {
    ProcessSpec::product(vec![stable(a1), stable(a2)]).expect("valid components")
}

pub fn scalecheck_config(seed: u64) -> ScalecheckConfig {
    ScalecheckConfig {
        seed,
        spec: ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).expect("valid semistable law"),
        t: 1.0,
        n: 100_000,
        // alpha + 0.3 in place of alpha.
        broken_exponents: vec![vec![vec![1.0 / 1.8]]],
    }
}

pub fn sojourn_case_i_config(seed: u64) -> SojournConfig {
    SojournConfig {
        seed,
        spec: isotropic(1.5, 2),
        agrid: (2..=6).map(|k| pow2(-k)).collect(),
        s: 4.0,
        n_paths: 2000,
        dt: None,
        band: 0.15,
    }
}

pub fn sojourn_case_ii_config(seed: u64) -> SojournConfig {
    SojournConfig {
        spec: product(1.8, 0.9),
        ..sojourn_case_i_config(seed)
    }
}

pub fn cover_configs(seed: u64) -> [CoverConfig; 2] {
    let base = CoverConfig {
        seed,
        spec: ProcessSpec::brownian(2),
        agrid: vec![pow2(-3), pow2(-4)],
        s: 1.0,
        n_paths: 400,
        dt: None,
    };
    let stable = CoverConfig {
        spec: isotropic(1.2, 2),
        ..base.clone()
    };
    [base, stable]
}

pub fn negmoment_config(seed: u64) -> NegmomentConfig {
    NegmomentConfig {
        seed,
        spec: ProcessSpec::brownian(2),
        delta: 1.0,
        tgrid: (0..8).map(|k| 1.0 + k as f64 / 8.0).collect(),
        n: 100_000,
        max_ratio: 3.0,
        reference: Some(Reference {
            t: 1.0,
            value: (PI / 2.0).sqrt(),
            tolerance: 0.03,
        }),
    }
}

/// The five range-dimension cases, labelled a to e.
pub fn dim_configs(seed: u64) -> [(char, DimConfig); 5] {
    let base = DimConfig {
        seed,
        spec: ProcessSpec::brownian(2),
        time_set: TimeSet::Interval(0.0, 1.0),
        resolution: (1 << 22) + 1,
        n_paths: 50,
        deltagrid: (4..=13).map(|k| pow2(-k)).collect(),
        band: 0.15,
        pooled_max_points: 10_000_000,
    };
    [
        ('a', base.clone()),
        (
            'b',
            DimConfig {
                spec: isotropic(1.2, 2),
                ..base.clone()
            },
        ),
        (
            'c',
            DimConfig {
                spec: product(1.8, 0.9),
                ..base.clone()
            },
        ),
        (
            'd',
            DimConfig {
                spec: isotropic(1.2, 2),
                time_set: TimeSet::Cantor {
                    ratio: 1.0 / 3.0,
                    level: 16,
                },
                ..base.clone()
            },
        ),
        (
            'e',
            DimConfig {
                spec: stable(1.5),
                band: 0.1,
                ..base
            },
        ),
    ]
}

/// Small configurations of every experiment verb, used by the determinism
/// criterion and shipped as quick examples.
pub fn quick_configs(seed: u64) -> Vec<(&'static str, Config)> {
    vec![
        (
            "decompose",
            Config::Decompose(DecomposeConfig {
                seed,
                exponent: Some(vec![
                    vec![0.6, 0.3, 0.0],
                    vec![0.0, 0.6, 0.0],
                    vec![0.1, 0.0, 0.9],
                ]),
                spec: None,
                tolerance: DEFAULT_CLUSTER_TOL,
            }),
        ),
        (
            "simulate",
            Config::Simulate(SimulateConfig {
                seed,
                spec: ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).expect("valid semistable law"),
                s: 1.0,
                dt: pow2(-8),
                n_paths: 3,
                format: PathFormat::Both,
            }),
        ),
        (
            "scalecheck",
            Config::Scalecheck(ScalecheckConfig {
                seed,
                spec: isotropic(1.5, 2),
                t: 1.0,
                n: 2000,
                broken_exponents: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            }),
        ),
        (
            "sojourn",
            Config::Sojourn(SojournConfig {
                seed,
                spec: isotropic(1.5, 2),
                agrid: (1..=4).map(|k| pow2(-k)).collect(),
                s: 1.0,
                n_paths: 64,
                dt: Some(pow2(-10)),
                band: 0.5,
            }),
        ),
        (
            "cover",
            Config::Cover(CoverConfig {
                seed,
                spec: ProcessSpec::brownian(2),
                agrid: vec![0.25],
                s: 1.0,
                n_paths: 16,
                dt: Some(pow2(-10)),
            }),
        ),
        (
            "negmoment",
            Config::Negmoment(NegmomentConfig {
                seed,
                spec: product(1.5, 1.5),
                delta: 1.0,
                tgrid: vec![1.0, 1.5],
                n: 5000,
                max_ratio: 3.0,
                reference: None,
            }),
        ),
        (
            "dim",
            Config::Dim(DimConfig {
                seed,
                spec: isotropic(1.2, 2),
                time_set: TimeSet::Interval(0.0, 1.0),
                resolution: (1 << 14) + 1,
                n_paths: 4,
                deltagrid: (1..=8).map(|k| pow2(-k)).collect(),
                band: 0.5,
                pooled_max_points: 40_000,
            }),
        ),
    ]
}

/// Runs one verb configuration and files its outputs under `dir`.
fn verb_run(dir: &str, cfg: Config, report: &mut CriterionReport, budget_s: Option<f64>) -> Result<Outcome, CliError> {
    let label = dir.rsplit('/').next().unwrap_or(dir).to_string();
    let start = Instant::now();
    let outcome = execute(&cfg).map_err(|e| e.context(&label))?;
    report.timings.push(Timing {
        name: label,
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s,
    });
    for (name, bytes) in &outcome.files {
        report.files.push((format!("{dir}/{name}"), bytes.clone()));
    }
    Ok(outcome)
}

fn empty(id: u32) -> CriterionReport {
    CriterionReport {
        id,
        title: title(id),
        checks: Vec::new(),
        timings: Vec::new(),
        metrics: Value::Null,
        files: Vec::new(),
    }
}

fn criterion_1(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(1);
    let start = Instant::now();
    let mut rng = Substream::new(seed, 1, 0);
    let ts = [0.1, 0.37, 1.0, 2.5, 10.0];
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..ZOO_SIZE {
        let d = 1 + k % ZOO_MAX_DIM;
        let entry = random_exponent(&mut rng, d);
        let res = law_residuals(&entry, &ts, ZOO_CLUSTER_TOL, &mut rng)?;
        worst = worst.max(res.max());
        if !res.pass(LAW_TOL) {
            failures.push(k);
        }
    }
    r.checks.push(check(
        "laws",
        failures.is_empty(),
        format!("{ZOO_SIZE} exponents, worst residual {worst:.2e}, failing {failures:?}"),
    ));
    r.timings.push(Timing {
        name: "total".into(),
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: Some(10.0),
    });
    r.metrics = json!({ "worst_residual": worst, "failing": failures });
    Ok(r)
}

fn criterion_2(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(2);
    let out = verb_run("c02", Config::Scalecheck(scalecheck_config(seed)), &mut r, Some(60.0))?;
    r.checks.extend(out.verdicts);
    Ok(r)
}

fn sojourn_criterion(id: u32, cfg: SojournConfig) -> Result<CriterionReport, CliError> {
    let mut r = empty(id);
    let out = verb_run(&format!("c{id:02}"), Config::Sojourn(cfg), &mut r, Some(600.0))?;
    r.checks.extend(out.verdicts);
    Ok(r)
}

fn criterion_5(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(5);
    let start = Instant::now();
    for (k, cfg) in cover_configs(seed).into_iter().enumerate() {
        let tag = if k == 0 { "brownian" } else { "stable" };
        let out = verb_run(&format!("c05/{tag}"), Config::Cover(cfg), &mut r, None)?;
        r.checks
            .extend(out.verdicts.into_iter().map(|v| Verdict::new(format!("{tag}_{}", v.name), v.pass, v.detail)));
    }
    r.timings.push(Timing {
        name: "total".into(),
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: Some(300.0),
    });
    Ok(r)
}

fn criterion_6(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(6);
    let out = verb_run("c06", Config::Negmoment(negmoment_config(seed)), &mut r, Some(60.0))?;
    r.checks.extend(out.verdicts);
    Ok(r)
}

fn criterion_7() -> Result<CriterionReport, CliError> {
    let mut r = empty(7);
    let start = Instant::now();
    let cantor = time_set_points(
        &TimeSet::Cantor {
            ratio: 1.0 / 3.0,
            level: 12,
        },
        0,
    )?;
    let cantor = box_dim_fit(
        &PointSet::new(1, cantor.times)?,
        &(2..=10).map(|k| 3f64.powi(-k)).collect::<Vec<_>>(),
    )?;
    let dyadic: Vec<f64> = (1..=10).map(|k| pow2(-k)).collect();
    let n = 1 << 16;
    let segment = PointSet::new(1, (0..=n).map(|k| k as f64 / n as f64).collect())?;
    let segment = box_dim_fit(&segment, &dyadic)?;
    let m = 1024;
    let square = PointSet::new(
        2,
        (0..m * m)
            .flat_map(|k| [(k % m) as f64 / m as f64, (k / m) as f64 / m as f64])
            .collect(),
    )?;
    let square = box_dim_fit(&square, &dyadic)?;
    let target = 2f64.ln() / 3f64.ln();
    r.checks.push(check(
        "cantor",
        (cantor.slope - target).abs() <= 0.02,
        format!("{:.4} vs {target:.4} +- 0.02", cantor.slope),
    ));
    r.checks.push(check(
        "segment",
        (segment.slope - 1.0).abs() <= 0.05,
        format!("{:.4} vs 1 +- 0.05", segment.slope),
    ));
    r.checks.push(check(
        "square",
        (square.slope - 2.0).abs() <= 0.05,
        format!("{:.4} vs 2 +- 0.05", square.slope),
    ));
    r.timings.push(Timing {
        name: "total".into(),
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: Some(30.0),
    });
    r.metrics = json!({ "cantor": cantor, "segment": segment, "square": square });
    Ok(r)
}

fn criterion_8(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(8);
    for (tag, cfg) in dim_configs(seed) {
        let out = verb_run(&format!("c08/{tag}"), Config::Dim(cfg), &mut r, Some(900.0))?;
        r.checks
            .extend(out.verdicts.into_iter().map(|v| Verdict::new(tag.to_string(), v.pass, v.detail)));
    }
    Ok(r)
}

fn criterion_9(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(9);
    let start = Instant::now();
    let mut rng = Substream::new(seed, 9, 0);
    let (mut evaluated, mut uncovered, mut cap_violations, mut branch_checks, mut branch_violations) = (0, 0, 0, 0, 0);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..FORMULA_TUPLES {
        let d = rng.random_range(1..=4usize);
        let d1 = rng.random_range(1..=d);
        let alpha1 = rng.random_range(0.5..=2.0f64);
        let alpha2 = rng.random_range(0.5..=alpha1);
        let dim_b = rng.random_range(0.0..=1.0f64);
        let mut diag = vec![1.0 / alpha1; d1];
        diag.resize(d, 1.0 / alpha2);
        let dec = spectral_decompose(&ExponentMatrix::diagonal(&diag)?, DEFAULT_CLUSTER_TOL)?;
        match theoretical_range_dim(&dec, dim_b, d) {
            Ok(v) => {
                evaluated += 1;
                let a1 = dec.alpha()[0];
                if v > (d as f64).min(a1 * dim_b) + 1e-12 || v < 0.0 {
                    cap_violations += 1;
                }
            }
            Err(oslab_core::Error::NotCovered(_)) => uncovered += 1,
            Err(e) => return Err(e.into()),
        }
        if d >= 2 && alpha1 >= 1.0 && alpha2 < alpha1 {
            // Both branches of the formula at alpha_1 dim B = 1 with d_1 = 1.
            branch_checks += 1;
            let b = 1.0 / alpha1;
            let below = range_dim_from_indices(&[alpha1, alpha2], 1, b, d)?;
            let above = range_dim_from_indices(&[alpha1, alpha2], 1, b.next_up().min(1.0), d)?;
            let gap = (below - above).abs();
            worst_gap = worst_gap.max(gap);
            if gap > 1e-12 {
                branch_violations += 1;
            }
        }
    }
    r.checks.push(check(
        "caps",
        cap_violations == 0 && evaluated > 0,
        format!("{evaluated} evaluated, {uncovered} outside the covered regime, {cap_violations} violations"),
    ));
    r.checks.push(check(
        "branch_agreement",
        branch_violations == 0 && branch_checks > 0,
        format!("{branch_checks} boundary tuples, worst gap {worst_gap:.1e}"),
    ));
    r.timings.push(Timing {
        name: "total".into(),
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: Some(5.0),
    });
    Ok(r)
}

fn criterion_10(seed: u64) -> Result<CriterionReport, CliError> {
    let mut r = empty(10);
    let start = Instant::now();
    for (name, cfg) in quick_configs(seed) {
        let runs: Vec<Outcome> = [1, 2]
            .into_iter()
            .map(|threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| CliError::new("threads", e.to_string()))?
                    .install(|| execute(&cfg))
            })
            .collect::<Result<_, _>>()?;
        let same = runs[0].files == runs[1].files;
        let bytes: usize = runs[0].files.iter().map(|(_, b)| b.len()).sum();
        r.checks.push(check(
            name,
            same && !runs[0].files.is_empty(),
            format!("{} files, {bytes} bytes", runs[0].files.len()),
        ));
    }
    r.timings.push(Timing {
        name: "total".into(),
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: None,
    });
    Ok(r)
}

pub fn run_criterion(id: u32, seed: u64) -> Result<CriterionReport, CliError> {
    let s = seed.wrapping_add(id as u64);
    match id {
        1 => criterion_1(s),
        2 => criterion_2(s),
        3 => sojourn_criterion(3, sojourn_case_i_config(s)),
        4 => sojourn_criterion(4, sojourn_case_ii_config(s)),
        5 => criterion_5(s),
        6 => criterion_6(s),
        7 => criterion_7(),
        8 => criterion_8(s),
        9 => criterion_9(s),
        10 => criterion_10(s),
        _ => Err(CliError::new("schema", format!("unknown criterion {id}"))),
    }
}

/// Runs the selected criteria. A criterion that errors is reported as a
/// failure carrying the error, so the rest of the battery still runs.
pub fn run_criteria(seed: u64, ids: &[u32], mut on_done: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    ids.iter()
        .map(|&id| {
            let start = Instant::now();
            let report = run_criterion(id, seed).unwrap_or_else(|e| {
                let mut r = empty(id);
                r.checks.push(check("error", false, e.to_string()));
                r.timings.push(Timing {
                    name: "total".into(),
                    elapsed_s: start.elapsed().as_secs_f64(),
                    budget_s: None,
                });
                r
            });
            on_done(&report);
            report
        })
        .collect()
}

pub fn run_suite(cfg: &SuiteConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let ids: Vec<u32> = cfg
        .criteria
        .clone()
        .unwrap_or_else(|| CRITERIA.iter().map(|(k, _)| *k).collect());
    let reports = run_criteria(cfg.seed, &ids, |r| eprintln!("{}", r.summary()));
    let mut files = Vec::new();
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "id": r.id, "title": r.title, "checks": r.checks, "metrics": r.metrics }))
        .collect();
    files.push(("suite.json".to_string(), prov.json("criteria", &summary)));
    for r in &reports {
        files.extend(r.files.iter().cloned());
    }
    let verdicts = reports
        .iter()
        .map(|r| Verdict::new(format!("criterion_{}", r.id), r.pass(), r.summary()))
        .collect();
    Ok(Outcome {
        verdicts,
        files,
        result: None,
    })
}

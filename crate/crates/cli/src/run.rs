//! Executes a verb against its configuration and collects the output files
//! in memory, so they can be compared byte for byte before being written.

use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::time::Instant;

use oslab_core::fracdim::{dimension_experiment, DimensionConfig, POINT_BUDGET};
use oslab_core::io::{write_path_binary, write_path_csv};
use oslab_core::linops::{matrix_from_rows, matrix_to_csv, spectral_decompose, ExponentMatrix, DEFAULT_CLUSTER_TOL};
use oslab_core::process::{exponent_of, scaling_check_exponents, uniform_grid, Process, ProcessSpec};
use oslab_core::rng::derive;
use oslab_core::sojourn::{covering_inequality_check, negative_moment, sojourn_exponent, SojournCase};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    Config, CoverConfig, DecomposeConfig, DimConfig, NegmomentConfig, PathFormat, ScalecheckConfig, SimulateConfig,
    SojournConfig,
};
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Verdicts plus output files as `(relative path, bytes)`, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub verdicts: Vec<Verdict>,
    pub files: Vec<(String, Vec<u8>)>,
    /// Extra payload echoed in the run record.
    pub result: Option<Value>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Summary printed on stdout after a run. Output files never carry timings,
/// which keeps them byte-identical across reruns.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub verb: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

/// What every output file records about the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &Config) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed(),
            version: VERSION.to_string(),
        }
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("config_hash={}", self.config_hash),
            format!("seed={}", self.seed),
            format!("oslab={}", self.version),
        ]
    }

    pub fn csv(&self, header: &str, rows: &[Vec<String>]) -> Vec<u8> {
        let mut s = String::new();
        for c in self.comments() {
            writeln!(s, "# {c}").unwrap();
        }
        writeln!(s, "{header}").unwrap();
        for r in rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s.into_bytes()
    }

    pub fn json<T: Serialize>(&self, key: &str, body: &T) -> Vec<u8> {
        let mut doc = serde_json::Map::new();
        doc.insert("provenance".into(), serde_json::to_value(self).expect("provenance serializes"));
        doc.insert(key.into(), serde_json::to_value(body).expect("results serialize"));
        let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("results serialize");
        text.push('\n');
        text.into_bytes()
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Largest power of two not above `a^alpha_1 / 64`, the default Riemann step
/// for resolving sojourns in a ball of radius `a`.
pub fn default_dt(spec: &ProcessSpec, a: f64) -> Result<f64, CliError> {
    let dec = spectral_decompose(&exponent_of(spec)?, DEFAULT_CLUSTER_TOL)?;
    let alpha1 = dec.alpha()[0];
    let target = a.powf(alpha1) / 64.0;
    Ok(2f64.powi(target.log2().floor() as i32))
}

pub fn execute(cfg: &Config) -> Result<Outcome, CliError> {
    let prov = Provenance::of(cfg);
    match cfg {
        Config::Decompose(c) => decompose(c, &prov),
        Config::Simulate(c) => simulate(c, &prov),
        Config::Scalecheck(c) => scalecheck(c, &prov),
        Config::Sojourn(c) => sojourn(c, &prov),
        Config::Cover(c) => cover(c, &prov),
        Config::Negmoment(c) => negmoment(c, &prov),
        Config::Dim(c) => dim(c, &prov),
        Config::Suite(c) => crate::suite::run_suite(c, &prov),
    }
}

/// Runs `cfg` on a pool of `threads` workers (the global pool when `None`),
/// then writes the outputs under `out`.
pub fn run(cfg: &Config, out: Option<&FsPath>, threads: Option<usize>) -> Result<RunRecord, CliError> {
    let start = Instant::now();
    let outcome = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::new("threads", e.to_string()))?
            .install(|| execute(cfg)),
        None => execute(cfg),
    }?;
    if let Some(dir) = out {
        write_outputs(dir, &outcome)?;
    }
    Ok(RunRecord {
        verb: cfg.verb().name().to_string(),
        config_hash: cfg.hash(),
        version: VERSION.to_string(),
        seed: cfg.seed(),
        pass: outcome.pass(),
        verdicts: outcome.verdicts.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: outcome.files.iter().map(|(name, _)| name.clone()).collect(),
        result: outcome.result,
    })
}

pub fn write_outputs(dir: &FsPath, outcome: &Outcome) -> Result<(), CliError> {
    for (name, bytes) in &outcome.files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::from(e).context(parent.display()))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::from(e).context(path.display()))?;
    }
    Ok(())
}

fn decompose(c: &DecomposeConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let e = match (&c.exponent, &c.spec) {
        (Some(rows), _) => ExponentMatrix::new(matrix_from_rows(rows)?)?,
        (None, Some(spec)) => exponent_of(spec)?,
        (None, None) => unreachable!("validated"),
    };
    let dec = spectral_decompose(&e, c.tolerance)?;
    let residual = (dec.reconstruct()? - e.matrix()).norm() / e.matrix().norm().max(1.0);
    let record = dec.to_record();
    let mut exponent_csv = String::new();
    for line in prov.comments() {
        writeln!(exponent_csv, "# {line}").unwrap();
    }
    exponent_csv.push_str(&matrix_to_csv(e.matrix()));
    Ok(Outcome {
        verdicts: vec![Verdict::new(
            "reconstruction",
            residual <= 1e-8,
            format!("relative residual {residual:.3e}"),
        )],
        files: vec![
            ("decomposition.json".into(), prov.json("decomposition", &record)),
            ("exponent.csv".into(), exponent_csv.into_bytes()),
        ],
        result: Some(serde_json::to_value(&record).expect("record serializes")),
    })
}

fn simulate(c: &SimulateConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let process = Process::new(c.spec.clone())?;
    let grid = uniform_grid(c.s, c.dt)?;
    let total = (c.n_paths as u64).saturating_mul(grid.len() as u64);
    if total > POINT_BUDGET {
        return Err(oslab_core::Error::Budget {
            requested: total,
            limit: POINT_BUDGET,
        }
        .into());
    }
    let mut files = Vec::new();
    let mut finite = true;
    for i in 0..c.n_paths as u64 {
        let path = process.simulate(&grid, c.seed, i)?;
        finite &= path.values.coords().iter().all(|x| x.is_finite());
        if matches!(c.format, PathFormat::Csv | PathFormat::Both) {
            let mut comments = prov.comments();
            comments.push(format!("path_index={i}"));
            let mut buf = Vec::new();
            write_path_csv(&path, &comments, &mut buf)?;
            files.push((format!("path_{i:04}.csv"), buf));
        }
        if matches!(c.format, PathFormat::Binary | PathFormat::Both) {
            let trailer = json!({
                "config_hash": prov.config_hash,
                "seed": prov.seed,
                "version": prov.version,
                "path_index": i,
            })
            .to_string();
            let mut buf = Vec::new();
            write_path_binary(&path, Some(&trailer), &mut buf)?;
            files.push((format!("path_{i:04}.oslp"), buf));
        }
    }
    Ok(Outcome {
        verdicts: vec![Verdict::new("finite", finite, format!("{} paths of {} points", c.n_paths, grid.len()))],
        files,
        result: None,
    })
}

fn scalecheck(c: &ScalecheckConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let mut exponents = vec![exponent_of(&c.spec)?];
    for rows in &c.broken_exponents {
        exponents.push(ExponentMatrix::new(matrix_from_rows(rows)?)?);
    }
    let reports = scaling_check_exponents(&c.spec, &exponents, c.t, c.n, c.seed)?;
    let mut verdicts = vec![Verdict::new(
        "scaling",
        reports[0].pass,
        format!("min adjusted p {:.3e}, ecf distance {:.3e}", reports[0].min_adjusted_p, reports[0].ecf_distance),
    )];
    for (k, r) in reports.iter().enumerate().skip(1) {
        verdicts.push(Verdict::new(
            format!("broken_{k}_rejected"),
            !r.pass,
            format!("min adjusted p {:.3e}", r.min_adjusted_p),
        ));
    }
    let mut rows = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        for (j, p) in r.projections.iter().enumerate() {
            rows.push(vec![
                k.to_string(),
                j.to_string(),
                num(p.ks.statistic),
                num(p.ks.p_value),
                num(p.adjusted_p),
            ]);
        }
    }
    Ok(Outcome {
        verdicts,
        files: vec![
            ("scalecheck.csv".into(), prov.csv("exponent,projection,ks_statistic,p_value,adjusted_p", &rows)),
            ("scalecheck.json".into(), prov.json("reports", &reports)),
        ],
        result: None,
    })
}

fn sojourn(c: &SojournConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let a_min = c.agrid.iter().copied().fold(f64::INFINITY, f64::min);
    let dt = match c.dt {
        Some(dt) => dt,
        None => default_dt(&c.spec, a_min)?,
    };
    let fit = sojourn_exponent(&c.spec, &c.agrid, c.s, c.n_paths, dt, c.seed)?;
    let verdict = match (fit.theory, fit.within(c.band)) {
        (Some(t), Some(ok)) => Verdict::new(
            "slope",
            ok,
            format!("slope {:.4} vs {:.4} (case {}), band {}", fit.slope, t.exponent, case_name(t.case), c.band),
        ),
        _ => Verdict::new("slope", false, format!("slope {:.4} has no theoretical counterpart", fit.slope)),
    };
    let rows: Vec<Vec<String>> = (0..fit.agrid.len())
        .map(|k| vec![num(fit.agrid[k]), num(fit.means[k]), num(fit.stderrs[k])])
        .collect();
    Ok(Outcome {
        verdicts: vec![verdict],
        files: vec![
            ("sojourn.csv".into(), prov.csv("a,mean,stderr", &rows)),
            ("fit.json".into(), prov.json("fit", &json!({ "s": c.s, "dt": dt, "n_paths": c.n_paths, "fit": fit }))),
        ],
        result: None,
    })
}

fn case_name(case: SojournCase) -> &'static str {
    match case {
        SojournCase::I => "i",
        SojournCase::Ii => "ii",
    }
}

fn cover(c: &CoverConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let mut reports = Vec::new();
    for (k, &a) in c.agrid.iter().enumerate() {
        let dt = match c.dt {
            Some(dt) => dt,
            None => default_dt(&c.spec, a / 3.0)?,
        };
        let r = covering_inequality_check(&c.spec, a, c.s, c.n_paths, dt, derive(c.seed, k as u64))
            .map_err(|e| CliError::from(e).context(format!("a = {a}")))?;
        reports.push((dt, r));
    }
    let verdicts = reports
        .iter()
        .map(|(_, r)| {
            Verdict::new(
                format!("cover_a={}", r.a),
                r.pass,
                format!("E[M] {:.3} vs bound {:.3} + slack {:.3}", r.mean_count, r.bound, r.slack),
            )
        })
        .collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(_, r)| vec![num(r.a), num(r.mean_count), num(r.bound), r.pass.to_string()])
        .collect();
    let body: Vec<Value> = reports.iter().map(|(dt, r)| json!({ "dt": dt, "report": r })).collect();
    Ok(Outcome {
        verdicts,
        files: vec![
            ("cover.csv".into(), prov.csv("a,mean_count,bound,pass", &rows)),
            ("cover.json".into(), prov.json("reports", &body)),
        ],
        result: None,
    })
}

fn negmoment(c: &NegmomentConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let r = negative_moment(&c.spec, c.delta, &c.tgrid, c.n, c.seed)?;
    let mut verdicts = vec![
        Verdict::new("finite", r.all_finite, format!("max {:.4}", r.max)),
        Verdict::new(
            "bounded_ratio",
            r.ratio() < c.max_ratio,
            format!("max/min {:.4} vs {}", r.ratio(), c.max_ratio),
        ),
    ];
    if let Some(reference) = &c.reference {
        let est = r
            .estimates
            .iter()
            .find(|e| e.t == reference.t)
            .expect("reference time is in the grid");
        verdicts.push(Verdict::new(
            "reference",
            (est.mean - reference.value).abs() <= reference.tolerance,
            format!("{:.4} +- {:.4} vs {} +- {}", est.mean, est.stderr, reference.value, reference.tolerance),
        ));
    }
    let rows: Vec<Vec<String>> = r
        .estimates
        .iter()
        .map(|e| vec![num(e.t), num(e.mean), num(e.stderr)])
        .collect();
    Ok(Outcome {
        verdicts,
        files: vec![
            ("negmoment.csv".into(), prov.csv("t,mean,stderr", &rows)),
            ("negmoment.json".into(), prov.json("report", &r)),
        ],
        result: None,
    })
}

fn dim(c: &DimConfig, prov: &Provenance) -> Result<Outcome, CliError> {
    let cfg = DimensionConfig {
        resolution: c.resolution,
        n_paths: c.n_paths,
        deltagrid: c.deltagrid.clone(),
        seed: c.seed,
        band: c.band,
        pooled_max_points: c.pooled_max_points,
    };
    let r = dimension_experiment(&c.spec, &c.time_set, &cfg)?;
    let counts: Vec<Vec<String>> = r
        .deltas
        .iter()
        .zip(&r.mean_counts)
        .map(|(d, n)| vec![num(*d), num(*n)])
        .collect();
    let slopes: Vec<Vec<String>> = r
        .per_path
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), num(*s)])
        .collect();
    Ok(Outcome {
        verdicts: vec![Verdict::new(
            "dimension",
            r.verdict,
            format!("estimate {:.4} vs {:.4}, band {}", r.est_dim, r.theory_dim, r.band),
        )],
        files: vec![
            ("dim.json".into(), prov.json("report", &r)),
            ("dim_counts.csv".into(), prov.csv("delta,count", &counts)),
            ("dim_paths.csv".into(), prov.csv("path,slope", &slopes)),
        ],
        result: None,
    })
}

//! Per-verb experiment configurations and their canonical hash.

use oslab_core::fracdim::TimeSet;
use oslab_core::process::ProcessSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Decompose,
    Simulate,
    Scalecheck,
    Sojourn,
    Cover,
    Negmoment,
    Dim,
    Suite,
}

impl Verb {
    pub const ALL: [Verb; 8] = [
        Verb::Decompose,
        Verb::Simulate,
        Verb::Scalecheck,
        Verb::Sojourn,
        Verb::Cover,
        Verb::Negmoment,
        Verb::Dim,
        Verb::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Decompose => "decompose",
            Verb::Simulate => "simulate",
            Verb::Scalecheck => "scalecheck",
            Verb::Sojourn => "sojourn",
            Verb::Cover => "cover",
            Verb::Negmoment => "negmoment",
            Verb::Dim => "dim",
            Verb::Suite => "suite",
        }
    }
}

fn default_tolerance() -> f64 {
    oslab_core::linops::DEFAULT_CLUSTER_TOL
}

fn default_band() -> f64 {
    0.15
}

fn default_t() -> f64 {
    1.0
}

fn default_max_ratio() -> f64 {
    3.0
}

fn default_pooled() -> usize {
    1_000_000
}

/// Either an explicit exponent matrix or a process whose exponent is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ProcessSpec>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathFormat {
    Csv,
    Binary,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    pub s: f64,
    pub dt: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub format: PathFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalecheckConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    #[serde(default = "default_t")]
    pub t: f64,
    pub n: usize,
    /// Exponents that should be rejected; each passes its verdict when the
    /// scaling check fails for it.
    #[serde(default)]
    pub broken_exponents: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SojournConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    pub agrid: Vec<f64>,
    pub s: f64,
    pub n_paths: usize,
    /// Defaults to the largest power of two below `a_min^alpha_1 / 64`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_band")]
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    pub agrid: Vec<f64>,
    pub s: f64,
    pub n_paths: usize,
    /// Defaults per radius to the largest power of two below
    /// `(a/3)^alpha_1 / 64`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub t: f64,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegmomentConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    pub delta: f64,
    pub tgrid: Vec<f64>,
    pub n: usize,
    #[serde(default = "default_max_ratio")]
    pub max_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimConfig {
    pub seed: u64,
    pub spec: ProcessSpec,
    pub time_set: TimeSet,
    pub resolution: usize,
    pub n_paths: usize,
    pub deltagrid: Vec<f64>,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_pooled")]
    pub pooled_max_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Criterion numbers to run; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Config {
    Decompose(DecomposeConfig),
    Simulate(SimulateConfig),
    Scalecheck(ScalecheckConfig),
    Sojourn(SojournConfig),
    Cover(CoverConfig),
    Negmoment(NegmomentConfig),
    Dim(DimConfig),
    Suite(SuiteConfig),
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::new("schema", msg)
}

fn parse<T: DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| schema(e.to_string()))
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(schema(format!("{name} must be positive, got {x}")))
    }
}

fn all_positive(name: &str, xs: &[f64]) -> Result<(), CliError> {
    if xs.is_empty() {
        return Err(schema(format!("{name} is empty")));
    }
    xs.iter().try_for_each(|&x| positive(name, x))
}

fn count(name: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(schema(format!("{name} must be positive")));
    }
    Ok(())
}

impl Config {
    pub fn parse(verb: Verb, text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| schema(format!("invalid JSON: {e}")))?;
        Self::from_value(verb, value)
    }

    pub fn from_value(verb: Verb, value: Value) -> Result<Self, CliError> {
        if !value.is_object() {
            return Err(schema("config must be a JSON object"));
        }
        if value.get("seed").is_none() {
            return Err(schema("missing field `seed`"));
        }
        let cfg = match verb {
            Verb::Decompose => Config::Decompose(parse(value)?),
            Verb::Simulate => Config::Simulate(parse(value)?),
            Verb::Scalecheck => Config::Scalecheck(parse(value)?),
            Verb::Sojourn => Config::Sojourn(parse(value)?),
            Verb::Cover => Config::Cover(parse(value)?),
            Verb::Negmoment => Config::Negmoment(parse(value)?),
            Verb::Dim => Config::Dim(parse(value)?),
            Verb::Suite => Config::Suite(parse(value)?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn verb(&self) -> Verb {
        match self {
            Config::Decompose(_) => Verb::Decompose,
            Config::Simulate(_) => Verb::Simulate,
            Config::Scalecheck(_) => Verb::Scalecheck,
            Config::Sojourn(_) => Verb::Sojourn,
            Config::Cover(_) => Verb::Cover,
            Config::Negmoment(_) => Verb::Negmoment,
            Config::Dim(_) => Verb::Dim,
            Config::Suite(_) => Verb::Suite,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Config::Decompose(c) => c.seed,
            Config::Simulate(c) => c.seed,
            Config::Scalecheck(c) => c.seed,
            Config::Sojourn(c) => c.seed,
            Config::Cover(c) => c.seed,
            Config::Negmoment(c) => c.seed,
            Config::Dim(c) => c.seed,
            Config::Suite(c) => c.seed,
        }
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Config::Decompose(c) => serde_json::to_value(c),
            Config::Simulate(c) => serde_json::to_value(c),
            Config::Scalecheck(c) => serde_json::to_value(c),
            Config::Sojourn(c) => serde_json::to_value(c),
            Config::Cover(c) => serde_json::to_value(c),
            Config::Negmoment(c) => serde_json::to_value(c),
            Config::Dim(c) => serde_json::to_value(c),
            Config::Suite(c) => serde_json::to_value(c),
        };
        v.expect("configs serialize")
    }

    /// SHA-256 of the canonical JSON of `{"verb": ..., "config": ...}`, with
    /// defaults filled in, so key order and omitted defaults do not matter.
    pub fn hash(&self) -> String {
        let doc = serde_json::json!({ "verb": self.verb().name(), "config": self.to_value() });
        let mut text = String::new();
        canonical(&doc, &mut text);
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Checks the numeric knobs beyond what the types enforce. Process specs
    /// are validated by the core when they are compiled.
    pub fn validate(&self) -> Result<(), CliError> {
        match self {
            Config::Decompose(c) => {
                if c.exponent.is_some() == c.spec.is_some() {
                    return Err(schema("give exactly one of `exponent` and `spec`"));
                }
                positive("tolerance", c.tolerance)
            }
            Config::Simulate(c) => {
                positive("s", c.s)?;
                positive("dt", c.dt)?;
                count("n_paths", c.n_paths)
            }
            Config::Scalecheck(c) => {
                positive("t", c.t)?;
                count("n", c.n)
            }
            Config::Sojourn(c) => {
                all_positive("agrid", &c.agrid)?;
                positive("s", c.s)?;
                count("n_paths", c.n_paths)?;
                c.dt.map_or(Ok(()), |dt| positive("dt", dt))?;
                positive("band", c.band)
            }
            Config::Cover(c) => {
                all_positive("agrid", &c.agrid)?;
                positive("s", c.s)?;
                count("n_paths", c.n_paths)?;
                c.dt.map_or(Ok(()), |dt| positive("dt", dt))
            }
            Config::Negmoment(c) => {
                positive("delta", c.delta)?;
                all_positive("tgrid", &c.tgrid)?;
                count("n", c.n)?;
                positive("max_ratio", c.max_ratio)?;
                if let Some(r) = &c.reference {
                    positive("reference.tolerance", r.tolerance)?;
                    if !c.tgrid.contains(&r.t) {
                        return Err(schema(format!("reference time {} is not in tgrid", r.t)));
                    }
                }
                Ok(())
            }
            Config::Dim(c) => {
                count("resolution", c.resolution)?;
                count("n_paths", c.n_paths)?;
                all_positive("deltagrid", &c.deltagrid)?;
                positive("band", c.band)?;
                count("pooled_max_points", c.pooled_max_points)
            }
            Config::Suite(c) => match &c.criteria {
                Some(ids) if ids.iter().any(|k| !(1..=10).contains(k)) => {
                    Err(schema("criteria are numbered 1 to 10"))
                }
                _ => Ok(()),
            },
        }
    }
}

/// Compact JSON with object keys in byte order at every level.
pub fn canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_defaults() {
        let a = Config::parse(
            Verb::Sojourn,
            r#"{"seed":42,"spec":{"kind":"StableMarginal","alpha":1.5,"dim":2},"agrid":[0.25,0.125],"s":1,"n_paths":10}"#,
        )
        .unwrap();
        let b = Config::parse(
            Verb::Sojourn,
            r#"{"n_paths":10,"band":0.15,"s":1.0,"agrid":[0.25,0.125],"spec":{"dim":2,"alpha":1.5,"kind":"StableMarginal","scale":1},"seed":42}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::parse(
            Verb::Sojourn,
            r#"{"seed":43,"spec":{"kind":"StableMarginal","alpha":1.5,"dim":2},"agrid":[0.25,0.125],"s":1,"n_paths":10}"#,
        )
        .unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn verb_is_part_of_the_hash() {
        let text = r#"{"seed":1,"spec":{"kind":"Gaussian","covariance":[[1]]},"agrid":[0.5],"s":1,"n_paths":4}"#;
        let a = Config::parse(Verb::Sojourn, text).unwrap();
        let b = Config::parse(Verb::Cover, text).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn schema_violations() {
        let err = |verb, text| Config::parse(verb, text).unwrap_err().code;
        assert_eq!(err(Verb::Decompose, r#"{"exponent":[[0.5]]}"#), "schema");
        assert_eq!(err(Verb::Decompose, r#"{"seed":1}"#), "schema");
        assert_eq!(err(Verb::Decompose, r#"{"seed":1,"exponent":[[0.5]],"extra":true}"#), "schema");
        assert_eq!(err(Verb::Simulate, r#"{"seed":1,"spec":{"kind":"Gaussian","covariance":[[1]]},"s":1,"dt":-0.1,"n_paths":1}"#), "schema");
        assert_eq!(err(Verb::Suite, r#"{"seed":1,"criteria":[11]}"#), "schema");
        assert_eq!(err(Verb::Suite, "[1, 2]"), "schema");
        assert_eq!(err(Verb::Suite, "{"), "schema");
    }

    #[test]
    fn canonical_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b":[{"y":1,"x":2}],"a":"q"}"#).unwrap();
        let mut s = String::new();
        canonical(&v, &mut s);
        assert_eq!(s, r#"{"a":"q","b":[{"x":2,"y":1}]}"#);
    }
}

//! Experiment manifests: what to run, on which body, with which parameters.

use std::collections::BTreeMap;
use std::fmt;

use ellpos_core::{BodySpec, Error as CoreError, SeedSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Moments,
    SuperconcScan,
    EllSolve,
    Balance,
    Deviation,
    SectionsScan,
    JohnCounterexample,
    DvoretzkyDim,
    EllipseCheck,
    SingularValues,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Moments => "moments",
            Self::SuperconcScan => "superconc-scan",
            Self::EllSolve => "ell-solve",
            Self::Balance => "balance",
            Self::Deviation => "deviation",
            Self::SectionsScan => "sections-scan",
            Self::JohnCounterexample => "john-counterexample",
            Self::DvoretzkyDim => "dvoretzky-dim",
            Self::EllipseCheck => "ellipse-check",
            Self::SingularValues => "singular-values",
        }
    }
}

/// A replayable experiment description. `body` is kept as raw JSON so that
/// outputs can embed the manifest exactly as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    /// The manifest or its parameters are malformed.
    Manifest(String),
    Core(CoreError),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Manifest(m) => write!(f, "invalid manifest: {m}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl CliError {
    /// 2 for anything the caller got wrong, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Manifest(_) => 2,
            Self::Core(
                CoreError::InvalidParameter(_)
                | CoreError::InvalidBody(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::WrongFamily { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Manifest(msg.into())
}

impl ExperimentManifest {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment, body: None, params: BTreeMap::new(), output_path: None }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("manifests always serialize")
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    pub fn body(&self) -> CliResult<Option<BodySpec>> {
        self.body
            .as_ref()
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| bad(format!("body: {e}"))))
            .transpose()
    }

    pub fn require_body(&self) -> CliResult<BodySpec> {
        self.body()?.ok_or_else(|| bad(format!("experiment {} needs a body", self.experiment.name())))
    }

    pub fn params(&self) -> Params<'_> {
        Params(&self.params)
    }
}

/// Typed access to manifest parameters with defaults.
pub struct Params<'a>(&'a BTreeMap<String, Value>);

impl Params<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn u64(&self, key: &str, default: u64) -> CliResult<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| bad(format!("{key} must be a nonnegative integer"))),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        self.u64(key, default as u64).map(|v| v as usize)
    }

    pub fn f64(&self, key: &str, default: f64) -> CliResult<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| bad(format!("{key} must be a number"))),
        }
    }

    pub fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        self.get(key).map(|v| v.as_f64().ok_or_else(|| bad(format!("{key} must be a number")))).transpose()
    }

    pub fn string(&self, key: &str, default: &str) -> CliResult<String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v.as_str().map(str::to_string).ok_or_else(|| bad(format!("{key} must be a string"))),
        }
    }

    /// A list, or a single value read as a one-element list.
    fn list<T>(&self, key: &str, default: &[T], one: impl Fn(&Value) -> Option<T>) -> CliResult<Vec<T>>
    where
        T: Clone,
    {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| one(v).ok_or_else(|| bad(format!("{key} has a malformed entry"))))
                .collect(),
            Some(v) => one(v).map(|x| vec![x]).ok_or_else(|| bad(format!("{key} is malformed"))),
        }
    }

    pub fn usizes(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        self.list(key, default, |v| v.as_u64().map(|x| x as usize))
    }

    pub fn f64s(&self, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        self.list(key, default, Value::as_f64)
    }

    pub fn seed(&self) -> CliResult<SeedSpec> {
        Ok(SeedSpec::new(self.u64("seed", 0)?, 0))
    }
}

/// Parses a body given on the command line: either a JSON descriptor or one
/// of `cube`, `euclidean`, `lp:<p>`, `weighted-lp:<p>:<w1>,<w2>,...`,
/// `cylinder:<m>`, with dimension `n`.
pub fn parse_body(text: &str, n: Option<usize>) -> CliResult<Value> {
    let text = text.trim();
    if text.starts_with('{') {
        let v: Value = serde_json::from_str(text).map_err(|e| bad(format!("body: {e}")))?;
        serde_json::from_value::<BodySpec>(v.clone()).map_err(|e| bad(format!("body: {e}")))?;
        return Ok(v);
    }
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("body: cannot parse {s:?}")));
    let need_n = || n.ok_or_else(|| bad("shorthand bodies need --n"));
    let body = match parts.as_slice() {
        ["cube"] => BodySpec::cube(need_n()?),
        ["euclidean"] => BodySpec::euclidean(need_n()?),
        ["lp", p] => BodySpec::lp_ball(need_n()?, num(p)?),
        ["weighted-lp", p, w] => {
            let weights = w.split(',').map(num).collect::<CliResult<Vec<f64>>>()?;
            BodySpec::weighted_lp(num(p)?, weights)
        }
        ["cylinder", m] => {
            let m = m.parse::<usize>().map_err(|_| bad(format!("body: cannot parse m={m:?}")))?;
            BodySpec::cylinder_john(need_n()?, m)
        }
        _ => return Err(bad(format!("unknown body {text:?}"))),
    }
    .map_err(|e| bad(format!("body: {e}")))?;
    serde_json::to_value(&body).map_err(|e| bad(e.to_string()))
}

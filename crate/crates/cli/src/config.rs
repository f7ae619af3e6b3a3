//! Resolved per-subcommand settings. Values come from built-in defaults,
//! then the subcommand's section of the JSON config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use bppm::hawkes::HawkesParams;
use bppm::inference::HorizonMode;

/// Overlays `top` onto `base`, merging nested objects key by key.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

/// Builds the settings for `section` from defaults, the optional config
/// file, and the flags given on the command line.
pub fn resolve<T, O>(section: &str, file: Option<&Path>, flags: &O) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
    O: Serialize,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let root: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(mut sections) = root else {
            bail!("config {} must be a JSON object", path.display());
        };
        if let Some(own) = sections.remove(section) {
            if !own.is_object() {
                bail!("config section `{section}` must be an object");
            }
            merge(&mut value, own);
        }
    }
    merge(&mut value, strip_nulls(serde_json::to_value(flags)?));
    serde_json::from_value(value).with_context(|| format!("invalid `{section}` settings"))
}

/// A Hawkes parameter triple, written `alpha,beta,lambda_inf` on the
/// command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_inf: f64,
}

impl Triple {
    pub fn params(&self) -> Result<HawkesParams> {
        Ok(HawkesParams::new(self.alpha, self.beta, self.lambda_inf)?)
    }
}

pub fn parse_triple(s: &str) -> std::result::Result<Triple, String> {
    let v = parse_list::<f64>(s)?;
    match v[..] {
        [alpha, beta, lambda_inf] => Ok(Triple {
            alpha,
            beta,
            lambda_inf,
        }),
        _ => Err(format!("expected alpha,beta,lambda_inf; got `{s}`")),
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("cannot parse `{x}`")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Window,
    LastEvent,
}

impl From<Horizon> for HorizonMode {
    fn from(h: Horizon) -> Self {
        match h {
            Horizon::Window => HorizonMode::Window,
            Horizon::LastEvent => HorizonMode::LastEvent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Method {
    #[serde(rename = "spectral")]
    #[value(name = "spectral")]
    Spectral,
    #[serde(rename = "spectral+ls")]
    #[value(name = "spectral+ls")]
    SpectralLs,
    #[serde(rename = "spectral+vem")]
    #[value(name = "spectral+vem")]
    SpectralVem,
    #[serde(rename = "random+ls")]
    #[value(name = "random+ls")]
    RandomLs,
    #[serde(rename = "random+vem")]
    #[value(name = "random+vem")]
    RandomVem,
}

fn require<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
    path.as_ref().with_context(|| format!("missing required setting `{name}`"))
}

fn positive(value: f64, name: &str) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        bail!("`{name}` must be positive, got {value}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub nodes: usize,
    pub horizon: f64,
    pub classes: usize,
    /// Uniform when absent.
    pub class_probs: Option<Vec<f64>>,
    pub diagonal: Triple,
    pub off_diagonal: Triple,
    /// Model JSON replacing `classes`, `class_probs` and the parameters.
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            nodes: 128,
            horizon: 80.0,
            classes: 4,
            class_probs: None,
            diagonal: Triple {
                alpha: 0.6,
                beta: 0.8,
                lambda_inf: 1.8,
            },
            off_diagonal: Triple {
                alpha: 0.6,
                beta: 0.8,
                lambda_inf: 0.6,
            },
            model: None,
            seed: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        positive(self.horizon, "horizon")?;
        if self.nodes < 2 || self.classes == 0 {
            bail!("need at least two nodes and one class");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub events: Option<PathBuf>,
    pub classes: usize,
    pub method: Method,
    /// Random initializations for the random+ methods.
    pub restarts: usize,
    /// Spectral regularizer; edges over nodes when absent.
    pub tau: Option<f64>,
    pub scaled: bool,
    /// Observation window end; the last event time when absent.
    pub horizon: Option<f64>,
    /// Compensator end for fitting; per-method default when absent.
    pub horizon_mode: Option<Horizon>,
    pub max_iterations: Option<usize>,
    /// Relative stopping tolerance of variational EM.
    pub tolerance: f64,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            events: None,
            classes: 2,
            method: Method::SpectralLs,
            restarts: 10,
            tau: None,
            scaled: false,
            horizon: None,
            horizon_mode: None,
            max_iterations: None,
            tolerance: 1e-6,
            seed: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<&PathBuf> {
        positive(self.tolerance, "tolerance")?;
        if self.classes == 0 || self.restarts == 0 {
            bail!("`classes` and `restarts` must be at least 1");
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                bail!("`tau` must be nonnegative");
            }
        }
        require(&self.events, "events")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub events: Option<PathBuf>,
    pub classes: usize,
    /// Number of singular values reported for gap inspection.
    pub top: usize,
    pub tau: Option<f64>,
    pub scaled: bool,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            events: None,
            classes: 2,
            top: 15,
            tau: None,
            scaled: false,
            horizon: None,
            seed: None,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub events: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub train_fraction: f64,
    pub windows: usize,
    /// Discrete-baseline snapshot lengths, in hours.
    pub snapshots: Vec<f64>,
    /// Length of one stream time unit in hours.
    pub time_unit_hours: f64,
    pub horizon_mode: Horizon,
    pub out_dir: PathBuf,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            events: None,
            labels: None,
            horizon: None,
            train_fraction: 2.0 / 3.0,
            windows: 16,
            snapshots: vec![1.0, 2.0, 3.0, 6.0, 12.0],
            time_unit_hours: 1.0,
            horizon_mode: Horizon::Window,
            out_dir: PathBuf::from("."),
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<(&PathBuf, &PathBuf)> {
        positive(self.time_unit_hours, "time_unit_hours")?;
        for &s in &self.snapshots {
            positive(s, "snapshots")?;
        }
        Ok((require(&self.events, "events")?, require(&self.labels, "labels")?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckTheoremConfig {
    pub sizes: Vec<usize>,
    pub sims: usize,
    pub horizon: f64,
    pub alpha_per_node: f64,
    pub beta_per_node: f64,
    pub lambda_per_node: f64,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for CheckTheoremConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 50, 200],
            sims: 10_000,
            horizon: 20.0,
            alpha_per_node: 5.0,
            beta_per_node: 10.0,
            lambda_per_node: 0.5,
            seed: None,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalAriConfig {
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateConfig {
    pub events: Option<PathBuf>,
    pub horizon: Option<f64>,
    /// Window start; 0 when absent.
    pub t1: Option<f64>,
    /// Window end (exclusive); the whole stream when absent.
    pub t2: Option<f64>,
    /// Write event counts instead of 0/1 entries.
    pub weighted: bool,
    pub out: PathBuf,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self {
            events: None,
            horizon: None,
            t1: None,
            t2: None,
            weighted: false,
            out: PathBuf::from("adjacency.csv"),
        }
    }
}

pub fn events_path<'a>(p: &'a Option<PathBuf>) -> Result<&'a PathBuf> {
    require(p, "events")
}

/// Drops null entries so that unset flags do not override anything.
pub fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect::<Map<_, _>>(),
        ),
        other => other,
    }
}

//! Experiment configurations. A config file is a JSON object with a
//! `schema_version`, a `command` tag and that command's parameters.

use std::path::PathBuf;

use qtomo::adaptive::{Mse1Rule, WeightRule};
use qtomo::bayes::{BayesQuadrature, RadialMeasure};
use qtomo::bounds::DEMO_LENGTHS;
use qtomo::noisekit::{ReadoutNoiseSpec, SystematicModel};
use qtomo::BlochVector;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandConfig {
    Bound(BoundConfig),
    Povm(PovmConfig),
    Dilate(DilateConfig),
    Simulate(SimulateConfig),
    Fit(FitConfig),
    Adaptive(AdaptiveConfig),
    Bayes(BayesConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::Bound(_) => "bound",
            CommandConfig::Povm(_) => "povm",
            CommandConfig::Dilate(_) => "dilate",
            CommandConfig::Simulate(_) => "simulate",
            CommandConfig::Fit(_) => "fit",
            CommandConfig::Adaptive(_) => "adaptive",
            CommandConfig::Bayes(_) => "bayes",
        }
    }

    /// Top-level seed, if the command is stochastic.
    pub fn seed(&self) -> Option<u64> {
        match self {
            CommandConfig::Bound(_) | CommandConfig::Povm(_) | CommandConfig::Bayes(_) => None,
            CommandConfig::Dilate(c) => Some(c.seed),
            CommandConfig::Simulate(c) => Some(c.seed),
            CommandConfig::Fit(c) => Some(c.seed),
            CommandConfig::Adaptive(c) => Some(c.seed),
        }
    }

    /// Files the command reads besides the config itself.
    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            CommandConfig::Dilate(DilateConfig { povm_file: Some(p), .. }) => vec![p.clone()],
            CommandConfig::Fit(c) => c.records.clone(),
            _ => Vec::new(),
        }
    }

    /// Canonical JSON form, including `schema_version`.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("configs always serialize");
        v.as_object_mut()
            .expect("tagged enum serializes to an object")
            .insert("schema_version".into(), SCHEMA_VERSION.into());
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        match obj.remove("schema_version") {
            Some(serde_json::Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unsupported schema_version {other}; this build reads version {SCHEMA_VERSION}"
                )))
            }
            None => return Err(CliError::Config("missing schema_version".into())),
        }
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }
}

fn default_demo_lengths() -> Vec<f64> {
    DEMO_LENGTHS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default = "default_demo_lengths")]
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmConfig {
    pub r_p: f64,
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "z_axis")]
    pub orientation: BlochVector,
}

fn z_axis() -> BlochVector {
    BlochVector::Z
}

/// The POVM comes either from a POVM JSON file or from ST parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilateConfig {
    #[serde(default)]
    pub povm_file: Option<PathBuf>,
    #[serde(default)]
    pub params: Option<PovmConfig>,
    #[serde(default = "default_check_states")]
    pub n_states: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_check_states() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub states: Vec<BlochVector>,
    /// Fixed stretching; when absent each state gets its matched ST-POVM.
    #[serde(default)]
    pub r_p: Option<f64>,
    #[serde(default)]
    pub phi: f64,
    /// Alignment axis for a fixed `r_p` (default +z).
    #[serde(default)]
    pub orientation: Option<BlochVector>,
    pub shots: usize,
    pub group_size: usize,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub noise: Option<ReadoutNoiseSpec>,
    #[serde(default)]
    pub systematic: SystematicModel,
    #[serde(default)]
    pub mitigate: bool,
    /// Estimate the confusion matrix from this many shots per basis state
    /// instead of using the exact one.
    #[serde(default)]
    pub confusion_shots: Option<usize>,
    #[serde(default = "yes")]
    pub write_records: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

pub(crate) fn default_instances() -> usize {
    qtomo::fitkit::DEFAULT_INSTANCES
}

pub(crate) fn default_resamples() -> usize {
    qtomo::fitkit::DEFAULT_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// One record shared by all group sizes, or one record per group size.
    pub records: Vec<PathBuf>,
    pub group_sizes: Vec<usize>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    /// Invert the exact confusion matrix of each record's noise spec.
    #[serde(default)]
    pub mitigate: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveMode {
    Mc,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub theta: BlochVector,
    pub n_total: u64,
    /// Evaluate this split only; when absent, scan n_sic.
    #[serde(default)]
    pub n_sic: Option<u64>,
    pub mode: AdaptiveMode,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
    #[serde(default = "optimal_weight")]
    pub weight: WeightRule,
    #[serde(default)]
    pub mse1_rule: Mse1Rule,
    #[serde(default)]
    pub seed: u64,
}

fn default_runs() -> usize {
    10_000
}

fn default_scan_points() -> usize {
    25
}

fn optimal_weight() -> WeightRule {
    WeightRule::OptimalPerRun
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub center: BlochVector,
    pub kappa: f64,
    pub alpha: f64,
    #[serde(default)]
    pub measure: RadialMeasure,
    #[serde(default = "default_rp_grid")]
    pub rp_grid: Vec<f64>,
    #[serde(default)]
    pub quadrature: BayesQuadrature,
}

fn default_rp_grid() -> Vec<f64> {
    qtomo::bayes::default_rp_grid(0.01)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let c = CommandConfig::Bound(BoundConfig { r: vec![0.5] });
        let text = c.to_json();
        assert_eq!(CommandConfig::from_json(&text).unwrap(), c);
        assert!(CommandConfig::from_json(r#"{"command":"bound","r":[0.5]}"#).is_err());
        assert!(CommandConfig::from_json(r#"{"schema_version":2,"command":"bound"}"#).is_err());
        assert!(CommandConfig::from_json(r#"{"schema_version":1,"command":"bound","bogus":1}"#).is_err());
        assert!(CommandConfig::from_json(r#"{"schema_version":1,"command":"nope"}"#).is_err());
        let d = CommandConfig::from_json(r#"{"schema_version":1,"command":"bound"}"#).unwrap();
        assert_eq!(d, CommandConfig::Bound(BoundConfig { r: DEMO_LENGTHS.to_vec() }));
    }
}

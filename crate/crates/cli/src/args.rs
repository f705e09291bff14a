use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qtomo::adaptive::{Mse1Rule, WeightRule};
use qtomo::bayes::{BayesQuadrature, RadialMeasure};
use qtomo::bounds::DEMO_LENGTHS;
use qtomo::noisekit::{ReadoutNoiseSpec, SystematicModel};
use qtomo::BlochVector;

use crate::config::*;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "qtomo", version, about = "Single-qubit tomography experiments with squashed-tetrahedron POVMs")]
pub struct Cli {
    /// Output directory for data files and manifest.json.
    #[arg(long, global = true, default_value = "qtomo-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// N-H bound and SIC error for a list of Bloch lengths.
    Bound {
        #[arg(long, value_delimiter = ',')]
        r: Vec<f64>,
    },
    /// Build an ST-POVM and report its elements and estimator.
    Povm(PovmArgs),
    /// Naimark dilation of a POVM JSON file or of ST parameters.
    Dilate(DilateArgs),
    /// Simulate shot records and sub-sampled scaled MSE.
    Simulate(SimulateArgs),
    /// Scaled-MSE curve and N·MSE = C + δN fit from shot records.
    Fit(FitArgs),
    /// Two-step adaptive scheme: one split or a scan over n_sic.
    Adaptive(AdaptiveArgs),
    /// Bayesian risk of the ST family under a Beta × von Mises–Fisher prior.
    Bayes(BayesArgs),
    /// Run a JSON experiment config.
    Run { config: PathBuf },
}

#[derive(Debug, Args)]
pub struct PovmArgs {
    #[arg(long = "r-p")]
    pub r_p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    pub orientation: BlochVector,
}

impl From<&PovmArgs> for PovmConfig {
    fn from(a: &PovmArgs) -> Self {
        PovmConfig {
            r_p: a.r_p,
            phi: a.phi,
            orientation: a.orientation,
        }
    }
}

#[derive(Debug, Args)]
pub struct DilateArgs {
    /// POVM JSON file (as written by `qtomo povm`).
    #[arg(long, conflicts_with = "r_p", required_unless_present = "r_p")]
    pub povm: Option<PathBuf>,
    #[arg(long = "r-p")]
    pub r_p: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    pub orientation: BlochVector,
    #[arg(long, default_value_t = 100)]
    pub states: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Bloch lengths of states on +z (shorthand for several --theta).
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    /// A state as x,y,z; repeatable.
    #[arg(long, value_parser = parse_vec3)]
    pub theta: Vec<BlochVector>,
    /// Fixed stretching for every state; default is the matched ST-POVM.
    #[arg(long = "r-p")]
    pub r_p: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, value_parser = parse_vec3)]
    pub orientation: Option<BlochVector>,
    #[arg(long, default_value_t = 180_000)]
    pub shots: usize,
    #[arg(long = "group-size", default_value_t = 100)]
    pub group_size: usize,
    #[arg(long, default_value_t = default_instances())]
    pub instances: usize,
    #[arg(long, default_value_t = default_resamples())]
    pub resamples: usize,
    /// `none`, a single flip probability, or p01_q0,p10_q0,p01_q1,p10_q1.
    #[arg(long, value_parser = parse_noise, default_value = "none")]
    pub noise: NoiseArg,
    /// Additive θ bias x,y,z injected into every preparation.
    #[arg(long, value_parser = parse_vec3)]
    pub bias: Option<BlochVector>,
    #[arg(long)]
    pub mitigate: bool,
    #[arg(long = "confusion-shots")]
    pub confusion_shots: Option<usize>,
    /// Skip writing the shot records.
    #[arg(long = "no-records")]
    pub no_records: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseArg(pub Option<ReadoutNoiseSpec>);

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Shot-record CSV files: one shared by all group sizes, or one per size.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long = "group-sizes", value_delimiter = ',', required = true)]
    pub group_sizes: Vec<usize>,
    #[arg(long, default_value_t = default_instances())]
    pub instances: usize,
    #[arg(long, default_value_t = default_resamples())]
    pub resamples: usize,
    #[arg(long)]
    pub mitigate: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("split").required(true).args(["n_sic", "scan"]))]
pub struct AdaptiveArgs {
    #[arg(long, value_parser = parse_vec3)]
    pub theta: BlochVector,
    #[arg(long = "n-total", value_parser = parse_count)]
    pub n_total: u64,
    #[arg(long = "n-sic", value_parser = parse_count)]
    pub n_sic: Option<u64>,
    #[arg(long)]
    pub scan: bool,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub mode: AdaptiveMode,
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    #[arg(long = "scan-points", default_value_t = 25)]
    pub scan_points: usize,
    /// `optimal` or a fixed weight in [0, 1].
    #[arg(long, value_parser = parse_weight, default_value = "optimal")]
    pub weight: WeightRule,
    /// Use the realized stage-1 error inside the weight (simulation only).
    #[arg(long = "realized-mse1")]
    pub realized_mse1: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    #[arg(long, value_parser = parse_vec3)]
    pub center: BlochVector,
    #[arg(long)]
    pub kappa: f64,
    #[arg(long)]
    pub alpha: f64,
    /// `start:step:stop` or a comma-separated list.
    #[arg(long = "rp-grid", value_parser = parse_grid, default_value = "0:0.01:0.99")]
    pub rp_grid: Grid,
    #[arg(long, value_enum, default_value = "marginal")]
    pub measure: MeasureArg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MeasureArg {
    Marginal,
    Volume,
}

impl Command {
    /// Resolves flags into a config; `Run` reads the file.
    pub fn into_config(self) -> Result<CommandConfig, CliError> {
        Ok(match self {
            Command::Bound { r } => CommandConfig::Bound(BoundConfig {
                r: if r.is_empty() { DEMO_LENGTHS.to_vec() } else { r },
            }),
            Command::Povm(a) => CommandConfig::Povm((&a).into()),
            Command::Dilate(a) => CommandConfig::Dilate(DilateConfig {
                params: a.r_p.map(|r_p| PovmConfig {
                    r_p,
                    phi: a.phi,
                    orientation: a.orientation,
                }),
                povm_file: a.povm,
                n_states: a.states,
                seed: a.seed,
            }),
            Command::Simulate(a) => {
                let mut states: Vec<BlochVector> = a.r.iter().map(|&r| BlochVector::on_z(r)).collect();
                states.extend(a.theta);
                CommandConfig::Simulate(SimulateConfig {
                    states,
                    r_p: a.r_p,
                    phi: a.phi,
                    orientation: a.orientation,
                    shots: a.shots,
                    group_size: a.group_size,
                    instances: a.instances,
                    resamples: a.resamples,
                    noise: a.noise.0,
                    systematic: match a.bias {
                        Some(b) => SystematicModel::AdditiveThetaBias { bias: b.to_array() },
                        None => SystematicModel::None,
                    },
                    mitigate: a.mitigate,
                    confusion_shots: a.confusion_shots,
                    write_records: !a.no_records,
                    seed: a.seed,
                })
            }
            Command::Fit(a) => CommandConfig::Fit(FitConfig {
                records: a.records,
                group_sizes: a.group_sizes,
                instances: a.instances,
                resamples: a.resamples,
                mitigate: a.mitigate,
                seed: a.seed,
            }),
            Command::Adaptive(a) => CommandConfig::Adaptive(AdaptiveConfig {
                theta: a.theta,
                n_total: a.n_total,
                n_sic: a.n_sic,
                mode: a.mode,
                runs: a.runs,
                scan_points: a.scan_points,
                weight: a.weight,
                mse1_rule: if a.realized_mse1 { Mse1Rule::Realized } else { Mse1Rule::Expected },
                seed: a.seed,
            }),
            Command::Bayes(a) => CommandConfig::Bayes(BayesConfig {
                center: a.center,
                kappa: a.kappa,
                alpha: a.alpha,
                measure: match a.measure {
                    MeasureArg::Marginal => RadialMeasure::Marginal,
                    MeasureArg::Volume => RadialMeasure::Volume,
                },
                rp_grid: a.rp_grid.0,
                quadrature: BayesQuadrature::default(),
            }),
            Command::Run { config } => {
                let text = std::fs::read_to_string(&config)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
                CommandConfig::from_json(&text)?
            }
        })
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

pub fn parse_vec3(s: &str) -> Result<BlochVector, String> {
    let v = s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(BlochVector::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

/// Accepts integers and exact float notation such as `1e6`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.trim().parse::<u64>() {
        return Ok(n);
    }
    let f = parse_f64(s)?;
    if f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(63) {
        Ok(f as u64)
    } else {
        Err(format!("{s:?} is not a non-negative integer"))
    }
}

pub fn parse_noise(s: &str) -> Result<NoiseArg, String> {
    if s.trim().eq_ignore_ascii_case("none") {
        return Ok(NoiseArg(None));
    }
    let v = s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?;
    let spec = match v.as_slice() {
        [p] => ReadoutNoiseSpec::uniform(*p),
        [a, b, c, d] => ReadoutNoiseSpec::new(*a, *b, *c, *d),
        _ => return Err("noise is `none`, p, or p01_q0,p10_q0,p01_q1,p10_q1".into()),
    };
    spec.map(|n| NoiseArg(Some(n))).map_err(|e| e.to_string())
}

pub fn parse_weight(s: &str) -> Result<WeightRule, String> {
    if s.trim() == "optimal" {
        Ok(WeightRule::OptimalPerRun)
    } else {
        Ok(WeightRule::Fixed { w: parse_f64(s)? })
    }
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, h, b] => {
            let (a, h, b) = (parse_f64(a)?, parse_f64(h)?, parse_f64(b)?);
            if !(h > 0.0) || b < a {
                return Err("grid needs step > 0 and stop >= start".into());
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            Ok(Grid((0..=n).map(|i| a + i as f64 * h).collect()))
        }
        [list] => Ok(Grid(list.split(',').map(parse_f64).collect::<Result<_, _>>()?)),
        _ => Err(format!("cannot parse grid {s:?}")),
    }
}

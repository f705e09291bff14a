//! Two-step adaptive tomography: a SIC-POVM preliminary stage followed by an
//! ST-POVM matched to the preliminary estimate, combined as
//! θ̂ = W θ̂⁽¹⁾ + (1 − W) θ̂⁽²⁾.
//!
//! Two evaluation modes are provided. The Monte Carlo mode simulates both
//! stages with multinomial outcome counts. The Gaussian mode integrates the
//! combined error over the normal approximation of the stage-1 estimate,
//! truncated to the Bloch ball.
//!
//! The Gaussian integral factors the stage-1 covariance as L Lᵀ with L lower
//! triangular, so only the last normal coordinate moves θ̂⁽¹⁾ along z. The
//! first two coordinates use Gauss–Hermite nodes; the last one is integrated
//! with Gauss–Legendre over the exact chord of the ball, after the
//! substitution u = mid + half·sin(πv/2), which smooths the square-root
//! behaviour of the stage-2 error at the ball's surface.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bounds::sic_mse;
use crate::error::{Error, Result};
use crate::par;
use crate::povm::StGeometry;
use crate::quadrature::{
    gauss_hermite_normal, gauss_legendre, normal_quantile, radical_inverse, QuadratureScheme,
    QuadratureSpec,
};
use crate::qstate::{BlochVector, RotationSpec};
use crate::rng::{multinomial4, stream_rng, substream_seed};

/// Stage-2 POVMs are built with r_p no larger than this.
pub const MAX_STAGE2_RP: f64 = 1.0 - 1e-6;

/// Below this length the stage-1 estimate has no usable direction and the
/// stage-2 measurement falls back to the SIC-POVM.
const DIRECTION_EPS: f64 = 1e-12;

/// How the combination weight W on the stage-1 estimate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightRule {
    /// W = MSE₂/(MSE₁ + MSE₂) from the model errors of both stages.
    OptimalPerRun,
    /// A fixed W.
    Fixed { w: f64 },
}

/// What MSE₁ means inside the weight rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mse1Rule {
    /// Expected stage-1 error: sic_mse(r)/n_sic. In Monte Carlo runs r is the
    /// estimated length, in the Gaussian integral the true length.
    #[default]
    Expected,
    /// The realized |θ̂⁽¹⁾ − θ|² (needs the true state; simulation only).
    Realized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepPlan {
    pub n_total: u64,
    pub n_sic: u64,
    pub weight_rule: WeightRule,
}

impl TwoStepPlan {
    pub fn new(n_total: u64, n_sic: u64, weight_rule: WeightRule) -> Result<Self> {
        let plan = TwoStepPlan {
            n_total,
            n_sic,
            weight_rule,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sic < 1 || self.n_sic >= self.n_total {
            return Err(Error::param(format!(
                "need 1 <= n_sic < n_total, got n_sic={} n_total={}",
                self.n_sic, self.n_total
            )));
        }
        if let WeightRule::Fixed { w } = self.weight_rule {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::param("fixed weight must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn n_second(&self) -> u64 {
        self.n_total - self.n_sic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    MonteCarlo,
    GaussianIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStepResult {
    /// N · E|θ̂ − θ|².
    pub mean_scaled_mse: f64,
    /// Zero for the Gaussian integral.
    pub std_err: f64,
    pub mode: EvalMode,
}

/// Settings shared by both evaluation modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveSettings {
    /// Alignment axis of the stage-1 SIC-POVM. With the default +z the
    /// tetrahedron's single vertex sits at −z, so it points downward.
    pub sic_orientation: BlochVector,
    pub sic_phi: f64,
    pub mse1_rule: Mse1Rule,
    pub quadrature: QuadratureSpec,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        AdaptiveSettings {
            sic_orientation: BlochVector::Z,
            sic_phi: 0.0,
            mse1_rule: Mse1Rule::Expected,
            quadrature: QuadratureSpec::default(),
        }
    }
}

impl AdaptiveSettings {
    fn sic_geometry(&self) -> Result<StGeometry> {
        StGeometry::new(&crate::povm::StPovmParams::sic(self.sic_orientation, self.sic_phi)?)
    }
}

/// ST geometry matched to a stage-1 estimate (SIC along +z when it has no direction).
fn stage2_geometry(theta1: BlochVector) -> Result<StGeometry> {
    let r = theta1.norm();
    if r < DIRECTION_EPS {
        return StGeometry::with_frame(0.0, &RotationSpec::identity());
    }
    StGeometry::with_frame(r.min(MAX_STAGE2_RP), &RotationSpec::align_to_z(theta1)?)
}

/// Stage errors and weight in one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub theta1: BlochVector,
    pub theta2: BlochVector,
    pub weight: f64,
    pub combined: BlochVector,
}

fn estimate(geom: &StGeometry, c: &[u64; 4]) -> BlochVector {
    let n: u64 = c.iter().sum();
    let s: Vector3<f64> = (0..4).map(|k| geom.columns[k] * c[k] as f64).sum();
    (s / n as f64).into()
}

/// Simulates `n_runs` independent two-step experiments.
pub fn simulate_runs(
    theta: BlochVector,
    plan: &TwoStepPlan,
    n_runs: usize,
    seed: u64,
    settings: &AdaptiveSettings,
) -> Result<Vec<RunOutcome>> {
    plan.validate()?;
    if theta.norm() >= 1.0 || !theta.is_finite() {
        return Err(Error::UnphysicalState { norm: theta.norm() });
    }
    if n_runs == 0 {
        return Err(Error::param("n_runs must be at least 1"));
    }
    let sic = settings.sic_geometry()?;
    let p1 = sic.probabilities(theta);
    let n1 = plan.n_sic;
    let n2 = plan.n_second();
    let run_seed = substream_seed(seed, "two-step");
    let runs = par::map_indexed(n_runs, |i| -> Result<RunOutcome> {
        let mut rng = stream_rng(run_seed, i as u64);
        let theta1 = estimate(&sic, &multinomial4(n1, &p1, &mut rng));
        let g2 = stage2_geometry(theta1)?;
        let p2 = g2.probabilities(theta);
        let theta2 = estimate(&g2, &multinomial4(n2, &p2, &mut rng));
        let weight = match plan.weight_rule {
            WeightRule::Fixed { w } => w,
            WeightRule::OptimalPerRun => {
                let m1 = match settings.mse1_rule {
                    Mse1Rule::Expected => sic_mse(theta1.norm().min(1.0))? / n1 as f64,
                    Mse1Rule::Realized => (theta1 - theta).norm_squared(),
                };
                let r = theta1.norm();
                let at = if r > 1.0 { theta1 * (MAX_STAGE2_RP / r) } else { theta1 };
                let m2 = g2.expected_mse(at) / n2 as f64;
                optimal_weight(m1, m2)
            }
        };
        Ok(RunOutcome {
            theta1,
            theta2,
            weight,
            combined: theta1 * weight + theta2 * (1.0 - weight),
        })
    });
    runs.into_iter().collect()
}

/// W = MSE₂/(MSE₁ + MSE₂).
pub fn optimal_weight(mse1: f64, mse2: f64) -> f64 {
    if mse1 + mse2 <= 0.0 {
        0.5
    } else {
        mse2 / (mse1 + mse2)
    }
}

/// W²·MSE₁ + (1 − W)²·MSE₂ for uncorrelated stages.
pub fn combined_mse(mse1: f64, mse2: f64, w: f64) -> f64 {
    w * w * mse1 + (1.0 - w) * (1.0 - w) * mse2
}

pub fn run_two_step_mc(
    theta: BlochVector,
    plan: &TwoStepPlan,
    n_runs: usize,
    seed: u64,
    settings: &AdaptiveSettings,
) -> Result<TwoStepResult> {
    let runs = simulate_runs(theta, plan, n_runs, seed, settings)?;
    let n = plan.n_total as f64;
    let errs: Vec<f64> = runs.iter().map(|r| n * (r.combined - theta).norm_squared()).collect();
    let k = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let std_err = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        f64::NAN
    };
    Ok(TwoStepResult {
        mean_scaled_mse: mean,
        std_err,
        mode: EvalMode::MonteCarlo,
    })
}

/// Normal model of the stage-1 estimate and the stage-2 error surface.
struct GaussianModel {
    theta: BlochVector,
    n_total: f64,
    n_sic: f64,
    chol: Matrix3<f64>,
    m1_expected: f64,
    weight_rule: WeightRule,
    mse1_rule: Mse1Rule,
}

impl GaussianModel {
    fn new(theta: BlochVector, n_total: f64, n_sic: f64, weight_rule: WeightRule, settings: &AdaptiveSettings) -> Result<Self> {
        let cov = settings.sic_geometry()?.covariance(theta) / n_sic;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::param("stage-1 covariance is not positive definite"))?
            .l();
        Ok(GaussianModel {
            theta,
            n_total,
            n_sic,
            chol,
            m1_expected: sic_mse(theta.norm())? / n_sic,
            weight_rule,
            mse1_rule: settings.mse1_rule,
        })
    }

    fn integrand(&self, theta1: BlochVector) -> f64 {
        let Ok(g2) = stage2_geometry(theta1) else {
            return f64::NAN;
        };
        let m2 = g2.expected_mse(self.theta) / (self.n_total - self.n_sic);
        let m1 = match self.mse1_rule {
            Mse1Rule::Expected => self.m1_expected,
            Mse1Rule::Realized => (theta1 - self.theta).norm_squared(),
        };
        let w = match self.weight_rule {
            WeightRule::OptimalPerRun => optimal_weight(m1, m2),
            WeightRule::Fixed { w } => w,
        };
        combined_mse(m1, m2, w)
    }

    /// Chord of the ball along the third normal coordinate, clipped to ±9σ.
    fn chord(&self, base: &Vector3<f64>) -> Option<(f64, f64)> {
        let rem = 1.0 - base.x * base.x - base.y * base.y;
        if rem <= 0.0 {
            return None;
        }
        let s = rem.sqrt();
        let l33 = self.chol[(2, 2)];
        let lo = ((-s - base.z) / l33).max(-9.0);
        let hi = ((s - base.z) / l33).min(9.0);
        (hi > lo).then_some((lo, hi))
    }

    /// (∫ integrand · pdf, ∫ pdf) over the truncated region.
    fn product_rule(&self, points: usize) -> (f64, f64) {
        let gh = gauss_hermite_normal(points);
        let gl = gauss_legendre(points);
        let t = self.theta.to_vector();
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let parts = par::map_indexed(points * points, |ij| {
            let (i, j) = (ij / points, ij % points);
            let wij = gh.weights[i] * gh.weights[j];
            let base = t + self.chol.column(0) * gh.nodes[i] + self.chol.column(1) * gh.nodes[j];
            let Some((lo, hi)) = self.chord(&base) else {
                return (0.0, 0.0);
            };
            let (mid, half) = (0.5 * (hi + lo), 0.5 * (hi - lo));
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (v, wv) in gl.nodes.iter().zip(&gl.weights) {
                let a = std::f64::consts::FRAC_PI_2 * v;
                let u = mid + half * a.sin();
                let w = wv * half * std::f64::consts::FRAC_PI_2 * a.cos() * inv_sqrt_2pi * (-0.5 * u * u).exp();
                if w == 0.0 {
                    continue;
                }
                let th1 = base + self.chol.column(2) * u;
                acc += w * self.integrand(th1.into());
                mass += w;
            }
            (wij * acc, wij * mass)
        });
        parts.iter().fold((0.0, 0.0), |(a, m), (x, y)| (a + x, m + y))
    }

    /// Halton points in bases 2, 3, 5 mapped through the normal quantile.
    fn quasi_mc(&self, samples: usize) -> (f64, f64) {
        let t = self.theta.to_vector();
        let parts = par::map_indexed(samples, |i| {
            let k = i as u64 + 1;
            let z = Vector3::new(
                normal_quantile(radical_inverse(k, 2)),
                normal_quantile(radical_inverse(k, 3)),
                normal_quantile(radical_inverse(k, 5)),
            );
            let th1 = t + self.chol * z;
            if th1.norm() < 1.0 {
                (self.integrand(th1.into()), 1.0)
            } else {
                (0.0, 0.0)
            }
        });
        let (a, m) = parts.iter().fold((0.0, 0.0), |(a, m), (x, y)| (a + x, m + y));
        (a / samples as f64, m / samples as f64)
    }

    fn scaled_mse(&self, scheme: QuadratureScheme, points: usize) -> f64 {
        let (acc, mass) = match scheme {
            QuadratureScheme::ProductGaussHermite => self.product_rule(points),
            QuadratureScheme::QuasiMonteCarlo => self.quasi_mc(points),
        };
        self.n_total * acc / mass
    }
}

fn check_gaussian_inputs(theta: BlochVector, n_total: f64, n_sic: f64) -> Result<()> {
    if !(theta.norm() < 1.0) || !theta.is_finite() {
        return Err(Error::UnphysicalState { norm: theta.norm() });
    }
    if !(n_sic >= 1.0 && n_sic < n_total) {
        return Err(Error::param(format!("need 1 <= n_sic < n_total, got {n_sic} / {n_total}")));
    }
    Ok(())
}

/// Scaled MSE from the normal approximation of stage 1, for real-valued n_sic.
pub fn gaussian_scaled_mse(
    theta: BlochVector,
    n_total: f64,
    n_sic: f64,
    weight_rule: WeightRule,
    settings: &AdaptiveSettings,
) -> Result<f64> {
    check_gaussian_inputs(theta, n_total, n_sic)?;
    if n_sic < 100.0 {
        log::warn!("n_sic = {n_sic} is small for the normal approximation of stage 1");
    }
    let model = GaussianModel::new(theta, n_total, n_sic, weight_rule, settings)?;
    let q = settings.quadrature;
    q.converge(|n| model.scaled_mse(q.scheme, n))
}

pub fn run_two_step_gaussian(
    theta: BlochVector,
    plan: &TwoStepPlan,
    settings: &AdaptiveSettings,
) -> Result<TwoStepResult> {
    plan.validate()?;
    Ok(TwoStepResult {
        mean_scaled_mse: gaussian_scaled_mse(
            theta,
            plan.n_total as f64,
            plan.n_sic as f64,
            plan.weight_rule,
            settings,
        )?,
        std_err: 0.0,
        mode: EvalMode::GaussianIntegral,
    })
}

/// Result of the allocation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_total: u64,
    pub n_sic: u64,
    pub scaled_mse: f64,
    /// Whether the coarse scan was unimodal (otherwise a dense scan was used).
    pub unimodal: bool,
}

const COARSE_GRID: usize = 25;
const DENSE_GRID: usize = 400;
/// Smallest n_sic searched when n_total allows it; below this the normal
/// approximation of stage 1 breaks down.
const MIN_N_SIC: u64 = 100;

fn log_grid(lo: u64, hi: u64, k: usize) -> Vec<u64> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut g: Vec<u64> = (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp().round() as u64)
        .collect();
    g.dedup();
    g
}

/// argmin over n_sic of the Gaussian-mode scaled MSE with optimal weights.
///
/// A coarse log-spaced scan brackets the minimum and checks unimodality
/// (falling back to a dense log scan otherwise); golden-section search in
/// ln(n_sic) narrows the bracket, and an exhaustive ±5 scan fixes the integer.
/// A minimum on the edge of the admissible range means the optimum diverges.
pub fn optimal_n_sic(theta: BlochVector, n_total: u64, settings: &AdaptiveSettings) -> Result<Allocation> {
    if n_total < 100 {
        return Err(Error::param("n_total must be at least 100"));
    }
    let lo = MIN_N_SIC.min(n_total / 4);
    check_gaussian_inputs(theta, n_total as f64, lo as f64)?;
    if theta.norm() < 1e-9 {
        return Err(Error::DivergentAllocation);
    }
    let coarse_settings = AdaptiveSettings {
        quadrature: settings.quadrature.coarse_only(),
        ..*settings
    };
    let nf = n_total as f64;
    let f = |n_sic: u64| -> Result<f64> {
        let model = GaussianModel::new(theta, nf, n_sic as f64, WeightRule::OptimalPerRun, &coarse_settings)?;
        Ok(model.scaled_mse(settings.quadrature.scheme, settings.quadrature.points))
    };
    let hi = n_total - 1;

    let scan = |grid: &[u64]| -> Result<Vec<f64>> { grid.iter().map(|&n| f(n)).collect() };
    let mut grid = log_grid(lo, hi, COARSE_GRID);
    let mut vals = scan(&grid)?;
    let argmin = |v: &[f64]| {
        v.iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty grid")
    };
    let mut m = argmin(&vals);
    let unimodal = vals[..=m].windows(2).all(|w| w[1] <= w[0]) && vals[m..].windows(2).all(|w| w[1] >= w[0]);
    if !unimodal {
        log::warn!("coarse n_sic scan is not unimodal; using a dense scan");
        grid = log_grid(lo, hi, DENSE_GRID);
        vals = scan(&grid)?;
        m = argmin(&vals);
    }
    if m == 0 || m == grid.len() - 1 {
        return Err(Error::DivergentAllocation);
    }

    // Golden-section on x = ln(n_sic) inside the bracket.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let fx = |x: f64| f(x.exp().round().clamp(lo as f64, hi as f64) as u64);
    let (mut a, mut b) = ((grid[m - 1] as f64).ln(), (grid[m + 1] as f64).ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (fx(c)?, fx(d)?);
    while b.exp() - a.exp() > 4.0 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = fx(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = fx(d)?;
        }
    }
    let center = (0.5 * (a + b)).exp().round() as i64;
    let mut best = (0u64, f64::INFINITY);
    for n in (center - 5)..=(center + 5) {
        if n < lo as i64 || n > hi as i64 {
            continue;
        }
        let v = f(n as u64)?;
        if v < best.1 {
            best = (n as u64, v);
        }
    }
    let scaled_mse = gaussian_scaled_mse(theta, nf, best.0 as f64, WeightRule::OptimalPerRun, settings)?;
    Ok(Allocation {
        n_total,
        n_sic: best.0,
        scaled_mse,
        unimodal,
    })
}

/// N′_SIC ≈ B√N fitted through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BCoefficient {
    pub theta_z: f64,
    pub b: f64,
    pub fit_err: f64,
    pub allocations: Vec<Allocation>,
}

pub fn fit_b_coefficient(theta: BlochVector, n_grid: &[u64], settings: &AdaptiveSettings) -> Result<BCoefficient> {
    if n_grid.len() < 4 {
        return Err(Error::InsufficientData("need at least 4 n_total values".into()));
    }
    let (min, max) = (n_grid.iter().min().copied().unwrap_or(0), n_grid.iter().max().copied().unwrap_or(0));
    if min == 0 || (max as f64) < 100.0 * min as f64 {
        return Err(Error::InsufficientData("n_total grid must span at least two decades".into()));
    }
    if theta.norm() < 1e-9 {
        return Err(Error::DivergentAllocation);
    }
    let allocations = n_grid
        .iter()
        .map(|&n| optimal_n_sic(theta, n, settings))
        .collect::<Result<Vec<_>>>()?;
    let sxx: f64 = allocations.iter().map(|a| a.n_total as f64).sum();
    let sxy: f64 = allocations
        .iter()
        .map(|a| (a.n_total as f64).sqrt() * a.n_sic as f64)
        .sum();
    let b = sxy / sxx;
    let k = allocations.len() as f64;
    let rss: f64 = allocations
        .iter()
        .map(|a| (a.n_sic as f64 - b * (a.n_total as f64).sqrt()).powi(2))
        .sum();
    let fit_err = (rss / (k - 1.0) / sxx).sqrt();
    Ok(BCoefficient {
        theta_z: theta.z,
        b,
        fit_err,
        allocations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::nh_bound;
    use approx::assert_abs_diff_eq;

    fn settings() -> AdaptiveSettings {
        AdaptiveSettings::default()
    }

    #[test]
    fn plan_validation() {
        assert!(TwoStepPlan::new(100, 0, WeightRule::OptimalPerRun).is_err());
        assert!(TwoStepPlan::new(100, 100, WeightRule::OptimalPerRun).is_err());
        assert!(TwoStepPlan::new(100, 10, WeightRule::Fixed { w: 1.5 }).is_err());
        assert!(TwoStepPlan::new(100, 99, WeightRule::Fixed { w: 1.0 }).is_ok());
    }

    #[test]
    fn weight_identity() {
        for (m1, m2) in [(1.0, 2.0), (0.3, 0.01), (5.0, 5.0)] {
            let w = optimal_weight(m1, m2);
            let c = combined_mse(m1, m2, w);
            assert_abs_diff_eq!(c, m1 * m2 / (m1 + m2), epsilon = 1e-14);
            assert!(c <= m1.min(m2));
        }
    }

    #[test]
    fn degenerate_plan_is_pure_sic() {
        let theta = BlochVector::on_z(0.5);
        let plan = TwoStepPlan::new(1000, 999, WeightRule::Fixed { w: 1.0 }).unwrap();
        let r = run_two_step_mc(theta, &plan, 20_000, 3, &settings()).unwrap();
        let want = 9.0 - 0.25;
        assert!((r.mean_scaled_mse * 999.0 / 1000.0 - want).abs() < 3.0 * r.std_err, "{r:?}");
    }

    #[test]
    fn stages_are_uncorrelated() {
        let theta = BlochVector::new(0.2, -0.1, 0.5);
        let plan = TwoStepPlan::new(2000, 300, WeightRule::OptimalPerRun).unwrap();
        let runs = simulate_runs(theta, &plan, 20_000, 11, &settings()).unwrap();
        let n = runs.len() as f64;
        for j in 0..3 {
            let a: Vec<f64> = runs.iter().map(|r| r.theta1.to_vector()[j] - theta.to_vector()[j]).collect();
            let b: Vec<f64> = runs.iter().map(|r| r.theta2.to_vector()[j] - theta.to_vector()[j]).collect();
            let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            let mean = prod.iter().sum::<f64>() / n;
            let se = (prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            assert!(mean.abs() < 4.0 * se, "component {j}: {mean} vs {se}");
        }
    }

    #[test]
    fn mc_reproducible() {
        let theta = BlochVector::on_z(0.5);
        let plan = TwoStepPlan::new(1000, 100, WeightRule::OptimalPerRun).unwrap();
        let a = run_two_step_mc(theta, &plan, 500, 1, &settings()).unwrap();
        let b = run_two_step_mc(theta, &plan, 500, 1, &settings()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_matches_known_optimum_value() {
        let plan = TwoStepPlan::new(10_000, 673, WeightRule::OptimalPerRun).unwrap();
        let r = run_two_step_gaussian(BlochVector::on_z(0.5), &plan, &settings()).unwrap();
        assert!((r.mean_scaled_mse - 8.28).abs() < 0.015 * 8.28, "{r:?}");
        assert!(r.mean_scaled_mse >= nh_bound(0.5).unwrap());
    }

    #[test]
    fn gaussian_and_mc_agree() {
        let theta = BlochVector::on_z(0.5);
        let plan = TwoStepPlan::new(10_000, 673, WeightRule::OptimalPerRun).unwrap();
        let g = run_two_step_gaussian(theta, &plan, &settings()).unwrap();
        let mc = run_two_step_mc(theta, &plan, 10_000, 5, &settings()).unwrap();
        assert!((g.mean_scaled_mse - mc.mean_scaled_mse).abs() < 3.0 * mc.std_err, "{g:?} {mc:?}");
    }

    #[test]
    fn gaussian_and_mc_agree_near_the_surface() {
        let theta = BlochVector::on_z(0.9);
        let plan = TwoStepPlan::new(10_000, 500, WeightRule::OptimalPerRun).unwrap();
        let g = run_two_step_gaussian(theta, &plan, &settings()).unwrap();
        let mc = run_two_step_mc(theta, &plan, 10_000, 11, &settings()).unwrap();
        assert!((g.mean_scaled_mse - mc.mean_scaled_mse).abs() < 3.0 * mc.std_err, "{g:?} {mc:?}");
    }

    #[test]
    fn quasi_monte_carlo_agrees_with_product_rule() {
        let plan = TwoStepPlan::new(10_000, 673, WeightRule::OptimalPerRun).unwrap();
        let product = run_two_step_gaussian(BlochVector::on_z(0.5), &plan, &settings()).unwrap();
        let qmc = AdaptiveSettings {
            quadrature: QuadratureSpec {
                scheme: QuadratureScheme::QuasiMonteCarlo,
                points: 100_000,
                refined: 200_000,
                rtol: 1e-2,
                skip_refinement: false,
            },
            ..settings()
        };
        let q = run_two_step_gaussian(BlochVector::on_z(0.5), &plan, &qmc).unwrap();
        assert!((q.mean_scaled_mse - product.mean_scaled_mse).abs() < 5e-3 * product.mean_scaled_mse);
    }

    #[test]
    fn origin_is_divergent() {
        assert!(matches!(
            optimal_n_sic(BlochVector::ZERO, 10_000, &settings()),
            Err(Error::DivergentAllocation)
        ));
        assert!(matches!(
            fit_b_coefficient(BlochVector::ZERO, &[10_000, 100_000, 1_000_000, 10_000_000], &settings()),
            Err(Error::DivergentAllocation)
        ));
        assert!(fit_b_coefficient(BlochVector::on_z(0.5), &[10_000, 20_000, 30_000, 40_000], &settings()).is_err());
    }

    #[test]
    fn stage2_fallbacks() {
        let g = stage2_geometry(BlochVector::ZERO).unwrap();
        assert_abs_diff_eq!(g.expected_mse(BlochVector::ZERO), 9.0, epsilon = 1e-12);
        assert!(stage2_geometry(BlochVector::new(0.0, 0.9, 0.9)).is_ok());
    }
}

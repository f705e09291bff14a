//! Bayesian risk of the ST family under separable priors on the Bloch ball.
//!
//! A prior is a Beta law on the Bloch length times a von Mises–Fisher law on
//! the direction, with the mean direction given by `center`. The ST-POVM is
//! always aligned with that axis.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::par;
use crate::povm::{StGeometry, StPovmParams};
use crate::quadrature::gauss_legendre;
use crate::qstate::{BlochVector, RotationSpec};
use crate::rng::{stream_rng, substream_seed};

/// Reference measure of the radial factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialMeasure {
    /// f is a density for dr dΩ: the Bloch length is Beta(α, β) distributed.
    #[default]
    Marginal,
    /// f is a density for r² dr dΩ: the Bloch length has density ∝ r²·Beta(r; α, β).
    Volume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub center: BlochVector,
    pub kappa: f64,
    pub alpha: f64,
    #[serde(default)]
    pub measure: RadialMeasure,
}

impl PriorSpec {
    pub fn new(center: BlochVector, kappa: f64, alpha: f64) -> Result<Self> {
        let spec = PriorSpec {
            center,
            kappa,
            alpha,
            measure: RadialMeasure::Marginal,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_measure(mut self, measure: RadialMeasure) -> Self {
        self.measure = measure;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.center.norm();
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::param(format!("prior center length {r} must lie in (0, 1)")));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::param("kappa must be finite and >= 0"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha must be finite and > 0"));
        }
        Ok(())
    }

    pub fn r_center(&self) -> f64 {
        self.center.norm()
    }

    /// β = α(1 − r)/r.
    pub fn beta(&self) -> f64 {
        let r = self.r_center();
        self.alpha * (1.0 - r) / r
    }

    /// Shape parameters of the Bloch-length distribution.
    fn radial_shapes(&self) -> (f64, f64) {
        match self.measure {
            RadialMeasure::Marginal => (self.alpha, self.beta()),
            RadialMeasure::Volume => (self.alpha + 2.0, self.beta()),
        }
    }

    /// E[r^k] of the Bloch length.
    pub fn radial_moment(&self, k: f64) -> f64 {
        let (a, b) = self.radial_shapes();
        (ln_beta(a + k, b) - ln_beta(a, b)).exp()
    }

    /// E[cos] of the angle to the center direction, coth κ − 1/κ.
    pub fn mean_cosine(&self) -> f64 {
        let k = self.kappa;
        if k < 1e-4 {
            k / 3.0
        } else {
            1.0 / k.tanh() - 1.0 / k
        }
    }
}

fn beta_pdf(r: f64, a: f64, b: f64) -> f64 {
    if r <= 0.0 || r >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * r.ln() + (b - 1.0) * (-r).ln_1p() - ln_beta(a, b)).exp()
}

/// von Mises–Fisher density on the unit sphere at cosine `u` to the mean direction.
pub fn vmf_density(kappa: f64, u: f64) -> f64 {
    if kappa == 0.0 {
        return 1.0 / (4.0 * std::f64::consts::PI);
    }
    kappa * (kappa * (u - 1.0)).exp() / (2.0 * std::f64::consts::PI * -(-2.0 * kappa).exp_m1())
}

/// f(r, λ, φ) with λ, φ the polar and azimuthal angles in the laboratory frame.
///
/// Under [`RadialMeasure::Marginal`] the density integrates to 1 against
/// sinλ dr dλ dφ; under [`RadialMeasure::Volume`] against r² sinλ dr dλ dφ.
pub fn prior_density(spec: &PriorSpec, r: f64, lambda: f64, phi: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&r) || !(0.0..=std::f64::consts::PI).contains(&lambda) || !(0.0..std::f64::consts::TAU).contains(&phi) {
        return Err(Error::param("(r, λ, φ) outside [0,1] × [0,π] × [0,2π)"));
    }
    let dir = Vector3::new(lambda.sin() * phi.cos(), lambda.sin() * phi.sin(), lambda.cos());
    let mu = spec.center.unit().ok_or(Error::DegenerateAxis)?.to_vector();
    let angular = vmf_density(spec.kappa, mu.dot(&dir).clamp(-1.0, 1.0));
    let (a, b) = (spec.alpha, spec.beta());
    let radial = match spec.measure {
        RadialMeasure::Marginal => beta_pdf(r, a, b),
        RadialMeasure::Volume => beta_pdf(r, a, b) / (ln_beta(a + 2.0, b) - ln_beta(a, b)).exp(),
    };
    Ok(radial * angular)
}

/// Node counts for the prior integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesQuadrature {
    pub radial: usize,
    pub polar: usize,
    pub azimuthal: usize,
    /// Check evaluation uses `refine_factor` times as many radial and polar nodes.
    pub refine_factor: f64,
    pub rtol: f64,
    /// Use the azimuthal symmetry of the aligned ST error instead of integrating φ.
    pub collapse_azimuth: bool,
}

impl Default for BayesQuadrature {
    fn default() -> Self {
        BayesQuadrature {
            radial: 64,
            polar: 64,
            azimuthal: 32,
            refine_factor: 1.5,
            rtol: 1e-6,
            collapse_azimuth: true,
        }
    }
}

/// Window holding essentially all the mass of a Beta law.
fn beta_window(a: f64, b: f64) -> (f64, f64) {
    let mean = a / (a + b);
    let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt();
    ((mean - 14.0 * sd).max(0.0), (mean + 14.0 * sd).min(1.0))
}

fn risk_with_nodes(spec: &PriorSpec, r_p: f64, n_r: usize, n_u: usize, q: &BayesQuadrature) -> Result<f64> {
    let (a, b) = spec.radial_shapes();
    let (r_lo, r_hi) = beta_window(a, b);
    let r_rule = gauss_legendre(n_r).mapped(r_lo, r_hi);
    let u_lo = if spec.kappa > 0.0 { (1.0 - 40.0 / spec.kappa).max(-1.0) } else { -1.0 };
    let u_rule = gauss_legendre(n_u).mapped(u_lo, 1.0);
    let lab = !q.collapse_azimuth;
    let (geom, to_lab) = if lab {
        let params = StPovmParams::new(r_p, 0.0, spec.center)?;
        (StGeometry::new(&params)?, params.frame().inverse())
    } else {
        (StGeometry::with_frame(r_p, &RotationSpec::identity())?, RotationSpec::identity())
    };
    let phis: Vec<(f64, f64)> = if lab {
        let rule = gauss_legendre(q.azimuthal).mapped(0.0, std::f64::consts::TAU);
        rule.nodes.iter().copied().zip(rule.weights.iter().copied()).collect()
    } else {
        vec![(0.0, std::f64::consts::TAU)]
    };
    let rows = par::map_indexed(r_rule.len(), |i| {
        let r = r_rule.nodes[i];
        let wr = r_rule.weights[i] * beta_pdf(r, a, b);
        let mut acc = 0.0;
        let mut mass = 0.0;
        for (u, wu) in u_rule.nodes.iter().zip(&u_rule.weights) {
            let s = (1.0 - u * u).max(0.0).sqrt();
            let w_ang = wu * vmf_density(spec.kappa, *u);
            for &(phi, wphi) in &phis {
                let aligned = BlochVector::new(r * s * phi.cos(), r * s * phi.sin(), r * u);
                let w = wr * w_ang * wphi;
                acc += w * geom.expected_mse(to_lab.apply(aligned));
                mass += w;
            }
        }
        (acc, mass)
    });
    let (acc, mass) = rows.iter().fold((0.0, 0.0), |(a, m), (x, y)| (a + x, m + y));
    Ok(acc / mass)
}

/// Prior average of the single-probe expected error of the ST-POVM with
/// stretching `r_p`, aligned with the prior axis.
pub fn bayes_risk(spec: &PriorSpec, r_p: f64, q: &BayesQuadrature) -> Result<f64> {
    spec.validate()?;
    if !(0.0..1.0).contains(&r_p) {
        return Err(Error::PureStateDegeneracy { r_p });
    }
    if !(q.rtol > 0.0) || q.radial < 2 || q.polar < 2 || q.azimuthal < 2 || !(q.refine_factor > 1.0) {
        return Err(Error::param("invalid Bayes quadrature settings"));
    }
    let coarse = risk_with_nodes(spec, r_p, q.radial, q.polar, q)?;
    let scale = |n: usize| (n as f64 * q.refine_factor).round() as usize;
    let fine = risk_with_nodes(spec, r_p, scale(q.radial), scale(q.polar), q)?;
    if (fine - coarse).abs() > q.rtol * fine.abs() {
        return Err(Error::QuadratureNonConvergence {
            coarse,
            fine,
            rtol: q.rtol,
        });
    }
    Ok(fine)
}

/// Closed form for the aligned ST error, which is affine in θ apart from −|θ|²:
/// risk(r_p) = Σ_k p_k(m ẑ)|ℰ_k|² − E[r²] with m = E[r]·E[cos].
pub fn bayes_risk_closed_form(spec: &PriorSpec, r_p: f64) -> Result<f64> {
    spec.validate()?;
    let geom = StGeometry::with_frame(r_p, &RotationSpec::identity())?;
    let m = spec.radial_moment(1.0) * spec.mean_cosine();
    let mean_state = BlochVector::on_z(m);
    Ok(geom.expected_mse(mean_state) + m * m - spec.radial_moment(2.0))
}

/// Draws states from the prior.
pub fn sample_prior(spec: &PriorSpec, n: usize, seed: u64) -> Result<Vec<BlochVector>> {
    spec.validate()?;
    let (a, b) = spec.radial_shapes();
    let radial = Beta::new(a, b).map_err(|e| Error::param(e.to_string()))?;
    let to_lab = RotationSpec::align_to_z(spec.center)?.inverse();
    let k = spec.kappa;
    let base = substream_seed(seed, "prior");
    Ok(par::map_indexed(n, |i| {
        let mut rng = stream_rng(base, i as u64);
        let r: f64 = radial.sample(&mut rng);
        let v: f64 = rng.random();
        let u = if k == 0.0 {
            2.0 * v - 1.0
        } else {
            (1.0 + (v * (-2.0 * k).exp_m1()).ln_1p() / k).clamp(-1.0, 1.0)
        };
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - u * u).max(0.0).sqrt();
        to_lab.apply(BlochVector::new(r * s * phi.cos(), r * s * phi.sin(), r * u))
    }))
}

/// Plain Monte Carlo risk estimate: (mean, standard error).
pub fn bayes_risk_mc(spec: &PriorSpec, r_p: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::param("need at least 2 prior samples"));
    }
    let geom = StGeometry::new(&StPovmParams::new(r_p, 0.0, spec.center)?)?;
    let vals: Vec<f64> = sample_prior(spec, n, seed)?
        .into_iter()
        .map(|t| geom.expected_mse(t))
        .collect();
    let k = n as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub points: Vec<(f64, f64)>,
    pub argmin_rp: f64,
    pub min_risk: f64,
}

/// Risk on a grid of r_p, with parabolic refinement around the grid minimum.
pub fn minimize_risk(spec: &PriorSpec, grid: &[f64], q: &BayesQuadrature) -> Result<RiskCurve> {
    if grid.is_empty() {
        return Err(Error::param("r_p grid is empty"));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    let points = g
        .iter()
        .map(|&rp| Ok((rp, bayes_risk(spec, rp, q)?)))
        .collect::<Result<Vec<_>>>()?;
    let i = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let (mut argmin_rp, mut min_risk) = points[i];
    if i > 0 && i + 1 < points.len() {
        let ((x0, y0), (x1, y1), (x2, y2)) = (points[i - 1], points[i], points[i + 1]);
        let denom = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        if denom.abs() > 0.0 {
            let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
            let x = x1 - 0.5 * num / denom;
            if x > x0 && x < x2 {
                let y = bayes_risk(spec, x, q)?;
                if y < min_risk {
                    argmin_rp = x;
                    min_risk = y;
                }
            }
        }
    }
    Ok(RiskCurve {
        points,
        argmin_rp,
        min_risk,
    })
}

/// Evenly spaced r_p grid 0, h, 2h, … below 1.
pub fn default_rp_grid(step: f64) -> Vec<f64> {
    let n = (0.99 / step).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

//! Gaussian quadrature rules via the Golub–Welsch eigenvalue method, plus the
//! integration settings shared by the adaptive and Bayesian modules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a rule on [−1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }
}

fn golub_welsch(n: usize, off_diag: impl Fn(usize) -> f64, mu0: f64) -> Rule {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = off_diag(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize: both weight functions are even, so exact rules are symmetric.
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (pairs[k].0 - pairs[i].0);
        let w = 0.5 * (pairs[k].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

type Cache = Mutex<HashMap<(u8, usize), Arc<Rule>>>;

fn cached(kind: u8, n: usize, build: impl FnOnce() -> Rule) -> Arc<Rule> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().expect("rule cache poisoned").get(&(kind, n)) {
        return Arc::clone(r);
    }
    let rule = Arc::new(build());
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert((kind, n), Arc::clone(&rule));
    rule
}

/// Gauss–Legendre on [−1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    assert!(n >= 1, "rule needs at least one node");
    cached(0, n, || {
        golub_welsch(
            n,
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            2.0,
        )
    })
}

/// Gauss–Hermite for the standard normal density: Σ w_i g(x_i) ≈ E[g(Z)].
pub fn gauss_hermite_normal(n: usize) -> Arc<Rule> {
    assert!(n >= 1, "rule needs at least one node");
    cached(1, n, || golub_welsch(n, |k| (k as f64).sqrt(), 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureScheme {
    ProductGaussHermite,
    QuasiMonteCarlo,
}

/// Integration settings.
///
/// For the product rule `points` is the coarse per-axis count and `refined`
/// the per-axis count of the check evaluation. For quasi-Monte Carlo they
/// are sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub scheme: QuadratureScheme,
    pub points: usize,
    pub refined: usize,
    pub rtol: f64,
    /// Evaluate only the coarse rule (used inside optimizers after a check).
    pub skip_refinement: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            scheme: QuadratureScheme::ProductGaussHermite,
            points: 40,
            refined: 60,
            rtol: 1e-4,
            skip_refinement: false,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) {
            return Err(Error::param("quadrature rtol must be positive"));
        }
        if self.points < 2 || self.refined < 2 {
            return Err(Error::param("quadrature needs at least 2 points"));
        }
        Ok(())
    }

    pub fn coarse_only(mut self) -> Self {
        self.skip_refinement = true;
        self
    }

    /// Evaluates `f(points)` and, unless disabled, `f(refined)`, failing when
    /// the two differ by more than `rtol` relative. Returns the refined value.
    pub fn converge(&self, f: impl Fn(usize) -> f64) -> Result<f64> {
        self.validate()?;
        let coarse = f(self.points);
        if self.skip_refinement {
            return Ok(coarse);
        }
        let fine = f(self.refined);
        if (fine - coarse).abs() > self.rtol * fine.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::QuadratureNonConvergence {
                coarse,
                fine,
                rtol: self.rtol,
            });
        }
        Ok(fine)
    }
}

/// Radical-inverse base-b sequence value for index `i` (van der Corput).
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while i > 0 {
        x += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    x
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    n.inverse_cdf(p.clamp(1e-300, 1.0 - 1e-16))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(10);
        for deg in 0..20 {
            let got: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg)).sum();
            let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert_abs_diff_eq!(got, want, epsilon = 1e-13);
        }
        let m = r.mapped(0.0, 1.0);
        let got: f64 = m.nodes.iter().zip(&m.weights).map(|(x, w)| w * x.exp()).sum();
        assert_abs_diff_eq!(got, 1f64.exp() - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let r = gauss_hermite_normal(40);
        let mom = |p: i32| -> f64 { r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(p)).sum() };
        assert_abs_diff_eq!(mom(0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mom(1), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(mom(2), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mom(4), 3.0, epsilon = 1e-11);
        assert_abs_diff_eq!(mom(6), 15.0, epsilon = 1e-10);
    }

    #[test]
    fn rules_are_cached_and_sorted() {
        let a = gauss_legendre(17);
        let b = gauss_legendre(17);
        assert!(Arc::ptr_eq(&a, &b));
        assert!(a.nodes.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.nodes[8], 0.0);
    }

    #[test]
    fn convergence_check() {
        let spec = QuadratureSpec::default();
        assert_eq!(spec.converge(|_| 2.0).unwrap(), 2.0);
        assert!(matches!(
            spec.converge(|n| n as f64),
            Err(Error::QuadratureNonConvergence { .. })
        ));
        assert_eq!(spec.coarse_only().converge(|n| n as f64).unwrap(), 40.0);
        let bad = QuadratureSpec { rtol: 0.0, ..spec };
        assert!(bad.converge(|_| 1.0).is_err());
    }

    #[test]
    fn low_discrepancy_helpers() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_abs_diff_eq!(radical_inverse(1, 3), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
    }
}

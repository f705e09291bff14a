//! Closed-form benchmarks: the Nagaoka–Hayashi bound for qubit tomography
//! and the SIC-POVM mean squared error.
//!
//! The general semidefinite-program form of the bound is not provided; for
//! this problem it coincides with the Gill–Massar bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_r(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::param(format!("Bloch length r = {r} outside [0, 1]")));
    }
    Ok(())
}

/// C_NH(r) = (2 + √(1 − r²))².
pub fn nh_bound(r: f64) -> Result<f64> {
    check_r(r)?;
    Ok((2.0 + (1.0 - r * r).sqrt()).powi(2))
}

/// MSE of the SIC-POVM linear estimator, 9 − r².
pub fn sic_mse(r: f64) -> Result<f64> {
    check_r(r)?;
    Ok(9.0 - r * r)
}

/// C_NH / N: the best total MSE reachable with `n_probes` separate measurements.
pub fn scaled_bound(r: f64, n_probes: u64) -> Result<f64> {
    if n_probes < 1 {
        return Err(Error::param("n_probes must be at least 1"));
    }
    Ok(nh_bound(r)? / n_probes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub r: f64,
    pub c_nh: f64,
    pub mse_sic: f64,
}

impl BoundReport {
    pub fn at(r: f64) -> Result<Self> {
        Ok(BoundReport {
            r,
            c_nh: nh_bound(r)?,
            mse_sic: sic_mse(r)?,
        })
    }
}

/// Bloch lengths of the hardware demonstration states.
pub const DEMO_LENGTHS: [f64; 6] = [0.15, 0.25, 0.45, 0.55, 0.75, 0.85];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nh_examples() {
        assert_abs_diff_eq!(nh_bound(0.15).unwrap(), 8.932, epsilon = 5e-4);
        assert_eq!(nh_bound(0.0).unwrap(), 9.0);
        assert_eq!(nh_bound(1.0).unwrap(), 4.0);
        assert!(nh_bound(1.01).is_err());
        assert!(nh_bound(-0.1).is_err());
    }

    #[test]
    fn sic_examples() {
        assert_eq!(sic_mse(0.5).unwrap(), 8.75);
        assert_eq!(sic_mse(0.0).unwrap(), 9.0);
        assert_eq!(sic_mse(1.0).unwrap(), 8.0);
        assert!(sic_mse(2.0).is_err());
    }

    #[test]
    fn scaled_examples() {
        let one = scaled_bound(0.5, 1).unwrap();
        assert_abs_diff_eq!(one, (2.0 + 0.75f64.sqrt()).powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(one, 8.2141, epsilon = 1e-4);
        assert_abs_diff_eq!(scaled_bound(0.5, 10_000).unwrap(), 8.2141e-4, epsilon = 1e-8);
        assert_eq!(scaled_bound(0.0, 9).unwrap(), 1.0);
        assert!(scaled_bound(0.5, 0).is_err());
    }

    #[test]
    fn table_column() {
        let want = [8.932, 8.810, 8.370, 8.038, 7.083, 6.385];
        for (r, w) in DEMO_LENGTHS.iter().zip(want) {
            assert_abs_diff_eq!(nh_bound(*r).unwrap(), w, epsilon = 5e-4);
        }
    }

    #[test]
    fn ordering_and_monotonicity() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let r = i as f64 / 1000.0;
            let nh = nh_bound(r).unwrap();
            assert!(nh <= prev);
            prev = nh;
            if i > 0 {
                assert!(nh < sic_mse(r).unwrap());
            }
        }
        assert_abs_diff_eq!(nh_bound(0.0).unwrap(), sic_mse(0.0).unwrap(), epsilon = 1e-14);
        let rep = BoundReport::at(0.3).unwrap();
        assert!(rep.c_nh < rep.mse_sic);
    }
}

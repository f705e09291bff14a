//! Naimark dilation of a four-outcome rank-1 qubit POVM to a two-qubit unitary.
//!
//! Basis ordering is `|probe, ancilla⟩`, index `2·probe + ancilla`, with the
//! ancilla prepared in |0⟩. POVM element k is read out as basis state |e_k⟩
//! (z → |00⟩, 1 → |01⟩, 2 → |10⟩, 3 → |11⟩).
//!
//! The columns of U₂ acting on the ancilla-|0⟩ subspace (indices 0 and 2) are
//! fixed by the isometry ⟨e_i|U₂|m,0⟩ = √r_i ⟨ψ_i|m⟩. The remaining two columns
//! are completed by modified Gram–Schmidt over the canonical basis, always
//! taking the candidate with the largest residual (lowest index on ties), so
//! the output is a pure function of the POVM.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::povm::{outcome_probabilities, Probabilities, QubitPovm};
use crate::qstate::{
    bloch_to_density, hermitian_eigenvalues, BlochVector, DensityMatrix, PureKet, C64, STATE_TOL,
};
use crate::rng::{stream_rng, uniform_in_ball, unit_vector};

/// Basis-state index of the ancilla-|0⟩ column for probe basis state `m`.
const fn fixed_column(m: usize) -> usize {
    2 * m
}

const FREE_COLUMNS: [usize; 2] = [1, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct DilationUnitary {
    u2: Matrix4<C64>,
    source: QubitPovm,
}

impl DilationUnitary {
    /// Wraps an arbitrary unitary as a candidate dilation of `source`.
    pub fn from_parts(u2: Matrix4<C64>, source: QubitPovm) -> Result<Self> {
        let err = unitarity_error(&u2);
        if err > STATE_TOL {
            return Err(Error::param(format!("U2 is not unitary (residual {err:e})")));
        }
        Ok(DilationUnitary { u2, source })
    }

    pub fn unitary(&self) -> &Matrix4<C64> {
        &self.u2
    }

    pub fn source_povm(&self) -> &QubitPovm {
        &self.source
    }

    /// Rows √r_i ⟨ψ_i| read back from the fixed isometry columns.
    pub fn isometry_rows(&self) -> [Vector2<C64>; 4] {
        std::array::from_fn(|i| {
            Vector2::new(self.u2[(i, fixed_column(0))], self.u2[(i, fixed_column(1))])
        })
    }

    pub fn unitarity_error(&self) -> f64 {
        unitarity_error(&self.u2)
    }
}

fn unitarity_error(u: &Matrix4<C64>) -> f64 {
    (u.adjoint() * u - Matrix4::identity()).camax()
}

/// Row vector w with w† w = Π for a rank-1 positive Π (w = √λ ⟨v|).
fn rank_one_row(pi: &Matrix2<C64>, index: usize) -> Result<Vector2<C64>> {
    let [lo, hi] = hermitian_eigenvalues(pi);
    if lo.abs() > STATE_TOL {
        return Err(Error::NotRankOne {
            index,
            second_eigenvalue: lo,
        });
    }
    if hi <= STATE_TOL {
        return Ok(Vector2::zeros());
    }
    let (a, d, b) = (pi[(0, 0)].re, pi[(1, 1)].re, pi[(0, 1)]);
    // Two algebraically equivalent eigenvector forms; keep the better conditioned one.
    let v1 = Vector2::new(b, C64::new(hi - a, 0.0));
    let v2 = Vector2::new(C64::new(hi - d, 0.0), b.conj());
    let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
    let v = v / C64::new(v.norm(), 0.0);
    Ok(v.map(|c| c.conj()) * C64::new(hi.sqrt(), 0.0))
}

/// Builds U₂ for a complete rank-1 POVM.
pub fn dilate(povm: &QubitPovm) -> Result<DilationUnitary> {
    let residual = povm.completeness_residual();
    if residual > STATE_TOL {
        return Err(Error::InvalidPovm(format!(
            "POVM is not complete (residual {residual:e})"
        )));
    }
    let mut u2 = Matrix4::<C64>::zeros();
    for (i, pi) in povm.elements().iter().enumerate() {
        let w = rank_one_row(pi, i)?;
        u2[(i, fixed_column(0))] = w[0];
        u2[(i, fixed_column(1))] = w[1];
    }

    let mut basis: Vec<Vector4<C64>> = vec![
        u2.column(fixed_column(0)).into_owned(),
        u2.column(fixed_column(1)).into_owned(),
    ];
    let gram_err = (basis[0].norm() - 1.0)
        .abs()
        .max((basis[1].norm() - 1.0).abs())
        .max(basis[0].dotc(&basis[1]).norm());
    if gram_err > 1e-10 {
        return Err(Error::RankDeficient);
    }

    for &col in &FREE_COLUMNS {
        let mut best: Option<(f64, Vector4<C64>)> = None;
        for k in 0..4 {
            let mut cand = Vector4::<C64>::zeros();
            cand[k] = C64::new(1.0, 0.0);
            // Two passes of modified Gram–Schmidt for numerical orthogonality.
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dotc(&cand);
                    cand -= q * proj;
                }
            }
            let n = cand.norm();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, cand));
            }
        }
        let (n, v) = best.expect("four candidates");
        if n < 1e-8 {
            return Err(Error::RankDeficient);
        }
        let v = v / C64::new(n, 0.0);
        u2.set_column(col, &v);
        basis.push(v);
    }
    DilationUnitary::from_parts(u2, povm.clone())
}

/// Computational-basis distribution of U₂ (ρ ⊗ |0⟩⟨0|) U₂†.
pub fn apply_dilated_measurement(d: &DilationUnitary, rho: &DensityMatrix) -> Probabilities {
    let mut big = Matrix4::<C64>::zeros();
    let m = rho.matrix();
    for a in 0..2 {
        for b in 0..2 {
            big[(fixed_column(a), fixed_column(b))] = m[(a, b)];
        }
    }
    let out = d.u2 * big * d.u2.adjoint();
    std::array::from_fn(|i| out[(i, i)].re)
}

const VERIFY_SEED: u64 = 0x5eed_da7a;

/// Largest |Tr(ρ⊗|0⟩⟨0| U₂†E_iU₂) − Tr(ρΠ_i)| over `n_random_states` states.
///
/// States alternate between Haar-random pure states and uniform-ball mixed
/// states drawn from a fixed internal seed.
pub fn verify_dilation(d: &DilationUnitary, n_random_states: usize) -> Result<f64> {
    verify_dilation_seeded(d, n_random_states, VERIFY_SEED)
}

pub fn verify_dilation_seeded(d: &DilationUnitary, n_random_states: usize, seed: u64) -> Result<f64> {
    if n_random_states < 1 {
        return Err(Error::param("n_random_states must be at least 1"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for i in 0..n_random_states {
        let theta = if i % 2 == 0 {
            BlochVector::from(unit_vector(&mut rng))
        } else {
            uniform_in_ball(&mut rng, BlochVector::ZERO, 1.0)
        };
        let rho = if i % 2 == 0 {
            DensityMatrix::new(PureKet::from_bloch(theta)?.projector())?
        } else {
            bloch_to_density(theta)?
        };
        let dilated = apply_dilated_measurement(d, &rho);
        let direct = outcome_probabilities(&d.source, &rho);
        for (a, b) in dilated.iter().zip(direct) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Random two-qubit basis outcome from the dilated circuit (used by tests and tools).
pub fn sample_dilated<R: Rng + ?Sized>(d: &DilationUnitary, rho: &DensityMatrix, rng: &mut R) -> usize {
    let p = apply_dilated_measurement(d, rho);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{build_sic_povm, build_st_povm, StPovmParams, ST_LABELS};
    use approx::assert_abs_diff_eq;

    fn st(r_p: f64) -> QubitPovm {
        build_st_povm(&StPovmParams::aligned(r_p).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_povm_on_mixed_state() {
        let d = dilate(&st(0.0)).unwrap();
        let p = apply_dilated_measurement(&d, &DensityMatrix::maximally_mixed());
        for x in p {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-14);
        }
        assert!(d.unitarity_error() < 1e-12);
    }

    #[test]
    fn matches_direct_probabilities() {
        let d = dilate(&st(0.8)).unwrap();
        let rho = bloch_to_density(BlochVector::on_z(0.8)).unwrap();
        let p = apply_dilated_measurement(&d, &rho);
        for (got, want) in p.iter().zip([0.025, 0.325, 0.325, 0.325]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        assert!(verify_dilation(&d, 100).unwrap() < 1e-12);
        assert!(verify_dilation(&dilate(&st(0.3)).unwrap(), 100).unwrap() < 1e-12);
    }

    #[test]
    fn identity_is_not_a_dilation() {
        let sic = build_sic_povm(BlochVector::Z, 0.0).unwrap();
        let d = DilationUnitary::from_parts(Matrix4::identity(), sic).unwrap();
        assert!(verify_dilation(&d, 10).unwrap() >= 0.25);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(verify_dilation(&dilate(&st(0.1)).unwrap(), 0).is_err());
        // Full-rank (non rank-1) but complete POVM: four copies of I/4.
        let quarter = Matrix2::<C64>::identity() * C64::new(0.25, 0.0);
        let povm = QubitPovm::new([quarter; 4], ST_LABELS.map(String::from)).unwrap();
        assert!(matches!(dilate(&povm), Err(Error::NotRankOne { .. })));
    }

    #[test]
    fn fixed_columns_survive_completion() {
        let povm = build_st_povm(
            &StPovmParams::new(0.55, 0.7, BlochVector::new(-0.2, 0.4, 0.1)).unwrap(),
        )
        .unwrap();
        let d = dilate(&povm).unwrap();
        for (w, pi) in d.isometry_rows().iter().zip(povm.elements()) {
            let rebuilt = w.map(|c| c.conj()) * w.transpose();
            assert!((rebuilt - pi).camax() < 1e-12);
        }
    }

    #[test]
    fn deterministic_output() {
        let povm = st(0.42);
        assert_eq!(dilate(&povm).unwrap(), dilate(&povm).unwrap());
    }

    #[test]
    fn sampled_outcomes_follow_distribution() {
        let d = dilate(&st(0.8)).unwrap();
        let rho = bloch_to_density(BlochVector::on_z(0.8)).unwrap();
        let mut rng = stream_rng(9, 0);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_dilated(&d, &rho, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.025, 0.325, 0.325, 0.325]) {
            let f = *c as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 4.0 * sigma);
        }
    }
}

//! Shot-level measurement simulation, readout-confusion noise, mitigation,
//! and calibration offsets.
//!
//! Shots are drawn in chunks of [`CHUNK_SHOTS`]; chunk `c` owns RNG stream `c`
//! of the record seed, so a record is identical whichever backend produced it.
//! Each shot picks one of the two pure states of the mixed-state
//! decomposition, measures the POVM, then (optionally) flips the two readout
//! bits of the dilated outcome label.

use nalgebra::{Matrix4, Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::povm::{build_st_povm, QubitPovm, StMeasurement, StPovmParams};
use crate::qstate::{pauli_x, pauli_y, pauli_z, BlochVector, RotationSpec, STATE_TOL};
use crate::rng::{stream_rng, substream_seed, uniform_in_ball, unit_vector};

pub const CHUNK_SHOTS: usize = 1 << 16;

/// Mitigation refuses confusion matrices with a larger 2-norm condition number.
pub const MAX_CONDITION: f64 = 1e6;

/// Independent per-qubit readout flip probabilities.
///
/// `p01` is the probability of reading 1 when the qubit is in |0⟩, `p10` of
/// reading 0 from |1⟩. Qubit 0 is the probe, qubit 1 the ancilla.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutNoiseSpec {
    pub p01_q0: f64,
    pub p10_q0: f64,
    pub p01_q1: f64,
    pub p10_q1: f64,
}

impl ReadoutNoiseSpec {
    pub fn new(p01_q0: f64, p10_q0: f64, p01_q1: f64, p10_q1: f64) -> Result<Self> {
        let spec = ReadoutNoiseSpec {
            p01_q0,
            p10_q0,
            p01_q1,
            p10_q1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same flip probability everywhere.
    pub fn uniform(p: f64) -> Result<Self> {
        ReadoutNoiseSpec::new(p, p, p, p)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p01_q0, self.p10_q0, self.p01_q1, self.p10_q1] {
            if !(0.0..0.5).contains(&p) {
                return Err(Error::param(format!("flip probability {p} outside [0, 0.5)")));
            }
        }
        Ok(())
    }

    fn flip<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> usize {
        let b0 = label >> 1;
        let b1 = label & 1;
        let p0 = if b0 == 0 { self.p01_q0 } else { self.p10_q0 };
        let p1 = if b1 == 0 { self.p01_q1 } else { self.p10_q1 };
        let o0 = if rng.random::<f64>() < p0 { b0 ^ 1 } else { b0 };
        let o1 = if rng.random::<f64>() < p1 { b1 ^ 1 } else { b1 };
        (o0 << 1) | o1
    }
}

/// Column-stochastic readout matrix: columns are true outcomes, rows observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix(Matrix4<f64>);

impl ConfusionMatrix {
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::param("confusion matrix entries must lie in [0, 1]"));
        }
        for (j, col) in m.column_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > STATE_TOL {
                return Err(Error::param(format!("column {j} sums to {s}")));
            }
        }
        Ok(ConfusionMatrix(m))
    }

    pub fn identity() -> Self {
        ConfusionMatrix(Matrix4::identity())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]))
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        ConfusionMatrix::new(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    /// 2-norm condition number (infinite when singular).
    pub fn condition_number(&self) -> f64 {
        let sv = self.0.singular_values();
        let hi = sv.max();
        let lo = sv.min();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// F' = M F.
    pub fn apply(&self, freqs: &[f64; 4]) -> [f64; 4] {
        (self.0 * Vector4::from(*freqs)).into()
    }

    /// M⁻¹, refusing ill-conditioned matrices.
    pub fn inverse(&self) -> Result<Matrix4<f64>> {
        let condition = self.condition_number();
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        self.0
            .try_inverse()
            .ok_or(Error::IllConditioned { condition })
    }
}

/// Analytic M = M_q0 ⊗ M_q1.
pub fn build_confusion_matrix(noise: &ReadoutNoiseSpec) -> ConfusionMatrix {
    let q = |p01: f64, p10: f64| {
        nalgebra::Matrix2::new(1.0 - p01, p10, p01, 1.0 - p10)
    };
    let m0 = q(noise.p01_q0, noise.p10_q0);
    let m1 = q(noise.p01_q1, noise.p10_q1);
    ConfusionMatrix(m0.kronecker(&m1))
}

/// Empirical M from `shots_per_state` readouts of each basis state.
pub fn estimate_confusion_matrix(
    noise: &ReadoutNoiseSpec,
    shots_per_state: usize,
    seed: u64,
) -> Result<ConfusionMatrix> {
    if shots_per_state == 0 {
        return Err(Error::param("shots_per_state must be positive"));
    }
    noise.validate()?;
    let cols = par::map_indexed(4, |k| {
        let mut rng = stream_rng(substream_seed(seed, "confusion"), k as u64);
        let mut counts = [0u64; 4];
        for _ in 0..shots_per_state {
            counts[noise.flip(k, &mut rng)] += 1;
        }
        counts.map(|c| c as f64 / shots_per_state as f64)
    });
    ConfusionMatrix::new(Matrix4::from_fn(|i, j| cols[j][i]))
}

/// F = M⁻¹ F'. The result is a quasi-probability vector and may be negative.
pub fn mitigate(freqs_observed: &[f64; 4], m: &ConfusionMatrix) -> Result<[f64; 4]> {
    let sum: f64 = freqs_observed.iter().sum();
    if (sum - 1.0).abs() > crate::povm::FREQ_SUM_TOL {
        return Err(Error::FrequencySum { sum });
    }
    let inv = m.inverse()?;
    Ok((inv * Vector4::from(*freqs_observed)).into())
}

/// Systematic errors injected into simulated preparations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystematicModel {
    #[default]
    None,
    /// The POVM is preceded by a fixed rotation of angle `epsilon` about a
    /// random axis drawn from `seed`.
    UnitaryPerturbation { epsilon: f64, seed: u64 },
    /// The prepared state is θ + bias, so estimates are shifted by `bias`.
    AdditiveThetaBias { bias: [f64; 3] },
    /// The prepared state drifts linearly: θ + rate · shot_index.
    Drift { rate: [f64; 3] },
}

impl SystematicModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SystematicModel::UnitaryPerturbation { epsilon, .. } if !(epsilon >= 0.0) => {
                Err(Error::param("unitary perturbation epsilon must be >= 0"))
            }
            SystematicModel::AdditiveThetaBias { bias } if bias.iter().any(|b| !b.is_finite()) => {
                Err(Error::param("bias must be finite"))
            }
            SystematicModel::Drift { rate } if rate.iter().any(|b| !b.is_finite()) => {
                Err(Error::param("drift rate must be finite"))
            }
            _ => Ok(()),
        }
    }

    fn perturbation(&self) -> Option<RotationSpec> {
        match *self {
            SystematicModel::UnitaryPerturbation { epsilon, seed } if epsilon > 0.0 => {
                let mut rng = stream_rng(substream_seed(seed, "perturbation"), 0);
                Some(RotationSpec::about_axis(unit_vector(&mut rng), epsilon))
            }
            _ => None,
        }
    }
}

/// Optional knobs for [`sample_shots_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingOptions {
    pub noise: Option<ReadoutNoiseSpec>,
    pub systematic: SystematicModel,
    /// Prepare a uniformly jittered state within this radius of θ (once per record).
    pub jitter_radius: Option<f64>,
}

/// Two pure states with equal θ_y, θ_z whose mixture is θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureDecomposition {
    pub states: [BlochVector; 2],
    /// Probability of the first state; the second has 1 − p_first.
    pub p_first: f64,
}

pub fn decompose_mixed(theta: BlochVector) -> Result<PureDecomposition> {
    theta.check_physical()?;
    let s = (1.0 - theta.y * theta.y - theta.z * theta.z).max(0.0).sqrt();
    let first = BlochVector::new(s, theta.y, theta.z);
    let second = BlochVector::new(-s, theta.y, theta.z);
    if s < 1e-15 {
        return Ok(PureDecomposition {
            states: [first, second],
            p_first: 1.0,
        });
    }
    // P1 : P2 = |θx − θx⁽²⁾| : |θx − θx⁽¹⁾|
    let p_first = ((theta.x + s) / (2.0 * s)).clamp(0.0, 1.0);
    Ok(PureDecomposition {
        states: [first, second],
        p_first,
    })
}

/// p_k(θ) = c_k + g_k · θ for a fixed POVM.
#[derive(Debug, Clone, Copy)]
struct AffineProbabilities {
    offset: [f64; 4],
    gradient: [Vector3<f64>; 4],
}

impl AffineProbabilities {
    fn new(povm: &QubitPovm) -> Self {
        let (sx, sy, sz) = (pauli_x(), pauli_y(), pauli_z());
        let offset = povm.elements().map(|e| 0.5 * e.trace().re);
        let gradient = povm.elements().map(|e| {
            Vector3::new(
                0.5 * (e * sx).trace().re,
                0.5 * (e * sy).trace().re,
                0.5 * (e * sz).trace().re,
            )
        });
        AffineProbabilities { offset, gradient }
    }

    fn at(&self, u: &Vector3<f64>) -> [f64; 4] {
        std::array::from_fn(|k| self.offset[k] + self.gradient[k].dot(u))
    }
}

fn categorical<R: Rng + ?Sized>(p: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate().take(3) {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    3
}

/// Simulated measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub outcomes: Vec<u8>,
    pub seed: u64,
    pub noise: Option<ReadoutNoiseSpec>,
    #[serde(default)]
    pub systematic: SystematicModel,
    pub povm_params: StPovmParams,
    pub true_theta: BlochVector,
}

impl ShotRecord {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn counts(&self) -> [u64; 4] {
        counts(&self.outcomes)
    }

    pub fn frequencies(&self) -> [f64; 4] {
        frequencies(&self.outcomes)
    }
}

pub fn counts(outcomes: &[u8]) -> [u64; 4] {
    let mut c = [0u64; 4];
    for &o in outcomes {
        c[o as usize] += 1;
    }
    c
}

pub fn frequencies(outcomes: &[u8]) -> [f64; 4] {
    let n = outcomes.len().max(1) as f64;
    counts(outcomes).map(|c| c as f64 / n)
}

/// i.i.d. shots of the ST-POVM `params` on state `theta`.
pub fn sample_shots(
    params: &StPovmParams,
    theta: BlochVector,
    n: usize,
    seed: u64,
    noise: Option<ReadoutNoiseSpec>,
) -> Result<ShotRecord> {
    sample_shots_with(
        params,
        theta,
        n,
        seed,
        &SamplingOptions {
            noise,
            ..SamplingOptions::default()
        },
    )
}

pub fn sample_shots_with(
    params: &StPovmParams,
    theta: BlochVector,
    n: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<ShotRecord> {
    if n == 0 {
        return Err(Error::param("number of shots must be positive"));
    }
    theta.check_physical()?;
    if let Some(noise) = &opts.noise {
        noise.validate()?;
    }
    opts.systematic.validate()?;

    let mut povm = build_st_povm(params)?;
    if let Some(rot) = opts.systematic.perturbation() {
        // Preparation rotated by V before the ideal POVM: Tr[Π VρV†] = Tr[V†ΠV ρ].
        povm = povm.conjugated_by(&rot.su2);
    }
    let probs = AffineProbabilities::new(&povm);

    let mut prepared = theta;
    if let Some(radius) = opts.jitter_radius {
        if !(radius >= 0.0) {
            return Err(Error::param("jitter radius must be >= 0"));
        }
        let mut rng = stream_rng(substream_seed(seed, "jitter"), 0);
        prepared = uniform_in_ball(&mut rng, theta, radius);
    }
    if let SystematicModel::AdditiveThetaBias { bias } = opts.systematic {
        prepared = prepared + BlochVector::from(bias);
    }
    let drift = match opts.systematic {
        SystematicModel::Drift { rate } => Some(BlochVector::from(rate)),
        _ => None,
    };
    let last = drift.map_or(prepared, |r| prepared + r * (n - 1) as f64);
    prepared.check_physical()?;
    last.check_physical()?;

    let fixed = decompose_mixed(prepared)?;
    let fixed_p = fixed.states.map(|s| probs.at(&s.to_vector()));
    let noise = opts.noise;
    let n_chunks = n.div_ceil(CHUNK_SHOTS);
    let chunks = par::map_indexed(n_chunks, |c| -> Result<Vec<u8>> {
        let mut rng = stream_rng(seed, c as u64);
        let start = c * CHUNK_SHOTS;
        let end = (start + CHUNK_SHOTS).min(n);
        let mut out = Vec::with_capacity(end - start);
        for t in start..end {
            let (dec, p) = match drift {
                None => (fixed, fixed_p),
                Some(rate) => {
                    let d = decompose_mixed(prepared + rate * t as f64)?;
                    let p = d.states.map(|s| probs.at(&s.to_vector()));
                    (d, p)
                }
            };
            let which = if rng.random::<f64>() < dec.p_first { 0 } else { 1 };
            let mut k = categorical(&p[which], &mut rng);
            if let Some(noise) = &noise {
                k = noise.flip(k, &mut rng);
            }
            out.push(k as u8);
        }
        Ok(out)
    });
    let mut outcomes = Vec::with_capacity(n);
    for chunk in chunks {
        outcomes.extend(chunk?);
    }
    Ok(ShotRecord {
        outcomes,
        seed,
        noise: opts.noise,
        systematic: opts.systematic,
        povm_params: *params,
        true_theta: theta,
    })
}

/// Systematic offset Δθ̂ estimated from known calibration states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOffset {
    pub delta_theta: BlochVector,
    pub n_calibration_shots: u64,
    /// Standard error of each offset component (spread over calibration states).
    pub std_err: BlochVector,
}

impl CalibrationOffset {
    pub fn zero() -> Self {
        CalibrationOffset {
            delta_theta: BlochVector::ZERO,
            n_calibration_shots: 0,
            std_err: BlochVector::ZERO,
        }
    }

    /// Expected total offset variance C_NH(r)/n_calib for an ideal ST measurement.
    pub fn variance_scale(r: f64, n_calibration_shots: u64) -> Result<f64> {
        crate::bounds::scaled_bound(r, n_calibration_shots)
    }
}

/// Calibration-state radius around the intended state.
pub const CALIBRATION_RADIUS: f64 = 0.1;

/// Fits a slope-1 regression of estimated on known calibration states; the
/// intercept is the mean residual θ̂ − θ per component.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_offsets(
    povm_params: &StPovmParams,
    center_theta: BlochVector,
    n_states: usize,
    shots_per_state: usize,
    seed: u64,
    noise: Option<ReadoutNoiseSpec>,
    systematic: SystematicModel,
) -> Result<CalibrationOffset> {
    if n_states == 0 || shots_per_state == 0 {
        return Err(Error::param("calibration needs at least one state and one shot"));
    }
    center_theta.check_physical()?;
    let meas = StMeasurement::new(*povm_params)?;
    let mitigation = noise.as_ref().map(build_confusion_matrix);
    let state_seed = substream_seed(seed, "calibration-states");
    let residuals = par::map_indexed(n_states, |j| -> Result<Vector3<f64>> {
        let mut rng = stream_rng(state_seed, j as u64);
        let known = loop {
            let cand = uniform_in_ball(&mut rng, center_theta, CALIBRATION_RADIUS);
            if cand.is_physical() {
                break cand;
            }
        };
        let opts = SamplingOptions {
            noise,
            systematic,
            jitter_radius: None,
        };
        let shot_seed = substream_seed(seed, &format!("calibration-shots-{j}"));
        let rec = sample_shots_with(povm_params, known, shots_per_state, shot_seed, &opts)?;
        let mut f = rec.frequencies();
        if let Some(m) = &mitigation {
            f = mitigate(&f, m)?;
        }
        Ok((meas.estimate(&f)? - known).to_vector())
    });
    let residuals = residuals.into_iter().collect::<Result<Vec<_>>>()?;
    let n = residuals.len() as f64;
    let mean: Vector3<f64> = residuals.iter().sum::<Vector3<f64>>() / n;
    let std_err = if residuals.len() > 1 {
        let var = residuals
            .iter()
            .map(|r| (r - mean).component_mul(&(r - mean)))
            .sum::<Vector3<f64>>()
            / (n - 1.0);
        (var / n).map(f64::sqrt)
    } else {
        Vector3::repeat(f64::NAN)
    };
    Ok(CalibrationOffset {
        delta_theta: mean.into(),
        n_calibration_shots: (n_states * shots_per_state) as u64,
        std_err: std_err.into(),
    })
}

/// θ̂ − Δθ̂.
pub fn apply_offset(theta_hat: BlochVector, offset: &CalibrationOffset) -> BlochVector {
    theta_hat - offset.delta_theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::outcome_probabilities;
    use crate::qstate::bloch_to_density;
    use approx::assert_abs_diff_eq;

    fn freq_within(counts: [u64; 4], p: [f64; 4], n: usize, k_sigma: f64) {
        for (c, pk) in counts.iter().zip(p) {
            let f = *c as f64 / n as f64;
            let sigma = (pk * (1.0 - pk) / n as f64).sqrt();
            assert!((f - pk).abs() <= k_sigma * sigma, "f={f} p={pk} σ={sigma}");
        }
    }

    #[test]
    fn sic_on_mixed_state_is_uniform() {
        let n = 1_000_000;
        let rec = sample_shots(&StPovmParams::aligned(0.0).unwrap(), BlochVector::ZERO, n, 1, None)
            .unwrap();
        assert_eq!(rec.len(), n);
        freq_within(rec.counts(), [0.25; 4], n, 3.0);
    }

    #[test]
    fn st_frequencies_follow_probabilities() {
        let n = 1_000_000;
        let rec = sample_shots(
            &StPovmParams::aligned(0.8).unwrap(),
            BlochVector::on_z(0.8),
            n,
            2,
            None,
        )
        .unwrap();
        freq_within(rec.counts(), [0.025, 0.325, 0.325, 0.325], n, 3.0);
    }

    #[test]
    fn decomposition_examples() {
        let pure = decompose_mixed(BlochVector::Z).unwrap();
        assert_eq!(pure.p_first, 1.0);
        assert!((pure.states[0] - BlochVector::Z).norm() < 1e-15);

        let t = BlochVector::new(0.2, -0.3, 0.4);
        let d = decompose_mixed(t).unwrap();
        let mix = d.states[0] * d.p_first + d.states[1] * (1.0 - d.p_first);
        assert!((mix - t).norm() < 1e-15);
        for s in d.states {
            assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-15);
        }
        // Ratio P1 : P2 = |θx − θx2| : |θx − θx1|.
        let ratio = d.p_first / (1.0 - d.p_first);
        let want = (t.x - d.states[1].x).abs() / (t.x - d.states[0].x).abs();
        assert_abs_diff_eq!(ratio, want, epsilon = 1e-12);
    }

    #[test]
    fn mixed_sampling_matches_povm_on_general_state() {
        let params = StPovmParams::new(0.5, 0.3, BlochVector::new(0.3, 0.1, -0.6)).unwrap();
        let theta = BlochVector::new(0.35, 0.1, -0.4);
        let p = outcome_probabilities(&build_st_povm(&params).unwrap(), &bloch_to_density(theta).unwrap());
        let n = 400_000;
        let rec = sample_shots(&params, theta, n, 77, None).unwrap();
        freq_within(rec.counts(), p, n, 4.0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let params = StPovmParams::aligned(0.4).unwrap();
        let theta = BlochVector::new(0.1, 0.2, 0.3);
        let noise = Some(ReadoutNoiseSpec::uniform(0.05).unwrap());
        let a = sample_shots(&params, theta, 200_000, 5, noise).unwrap();
        let b = sample_shots(&params, theta, 200_000, 5, noise).unwrap();
        let c = sample_shots(&params, theta, 200_000, 6, noise).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn confusion_examples() {
        let m = build_confusion_matrix(&ReadoutNoiseSpec::default());
        assert_eq!(*m.matrix(), Matrix4::identity());
        let m = build_confusion_matrix(&ReadoutNoiseSpec::new(0.0, 0.1, 0.0, 0.0).unwrap());
        assert_abs_diff_eq!(m.matrix()[(0, 2)], 0.1);
        assert_abs_diff_eq!(m.matrix()[(2, 2)], 0.9);
        let m = build_confusion_matrix(&ReadoutNoiseSpec::uniform(0.05).unwrap());
        for col in m.matrix().column_iter() {
            assert_abs_diff_eq!(col.sum(), 1.0, epsilon = 1e-15);
        }
        assert!(ConfusionMatrix::new(m.0).is_ok());
        assert!(ReadoutNoiseSpec::uniform(0.5).is_err());
    }

    #[test]
    fn mitigation_inverts_exactly() {
        let m = build_confusion_matrix(&ReadoutNoiseSpec::new(0.05, 0.08, 0.02, 0.1).unwrap());
        let f = [0.1, 0.2, 0.3, 0.4];
        let back = mitigate(&m.apply(&f), &m).unwrap();
        for (a, b) in back.iter().zip(f) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let same = mitigate(&f, &ConfusionMatrix::identity()).unwrap();
        assert_eq!(same, f);
        assert_abs_diff_eq!(back.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(matches!(
            mitigate(&[0.5, 0.1, 0.1, 0.1], &m),
            Err(Error::FrequencySum { .. })
        ));
    }

    #[test]
    fn ill_conditioned_is_rejected() {
        let mut rows = [[0.0; 4]; 4];
        for row in rows.iter_mut().take(2) {
            *row = [0.5, 0.5, 0.0, 0.0];
        }
        rows[2] = [0.0, 0.0, 1.0, 0.0];
        rows[3] = [0.0, 0.0, 0.0, 1.0];
        let m = ConfusionMatrix::from_rows(rows).unwrap();
        assert!(matches!(
            mitigate(&[0.25; 4], &m),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn empirical_confusion_converges() {
        let noise = ReadoutNoiseSpec::new(0.1, 0.05, 0.03, 0.07).unwrap();
        let n = 100_000;
        let emp = estimate_confusion_matrix(&noise, n, 3).unwrap();
        let exact = build_confusion_matrix(&noise);
        for i in 0..4 {
            for j in 0..4 {
                let p = exact.matrix()[(i, j)];
                let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
                assert!((emp.matrix()[(i, j)] - p).abs() <= tol.max(1e-12));
            }
        }
    }

    #[test]
    fn offsets_vanish_without_systematics() {
        let params = StPovmParams::aligned(0.5).unwrap();
        let off = calibrate_offsets(&params, BlochVector::on_z(0.5), 40, 5_000, 8, None, SystematicModel::None)
            .unwrap();
        assert_eq!(off.n_calibration_shots, 200_000);
        for (d, s) in off.delta_theta.to_array().iter().zip(off.std_err.to_array()) {
            assert!(d.abs() < 3.0 * s, "{d} vs {s}");
        }
    }

    #[test]
    fn offsets_recover_injected_bias() {
        let params = StPovmParams::aligned(0.5).unwrap();
        let sys = SystematicModel::AdditiveThetaBias { bias: [0.0, 0.0, 0.01] };
        let off = calibrate_offsets(&params, BlochVector::on_z(0.5), 40, 5_000, 9, None, sys).unwrap();
        assert!((off.delta_theta.z - 0.01).abs() < 3.0 * off.std_err.z);
        assert!(off.delta_theta.x.abs() < 3.0 * off.std_err.x);
    }

    #[test]
    fn offset_application() {
        let zero = CalibrationOffset::zero();
        let t = BlochVector::new(0.1, 0.2, 0.3);
        assert_eq!(apply_offset(t, &zero), t);
        let off = CalibrationOffset {
            delta_theta: BlochVector::on_z(0.01),
            ..CalibrationOffset::zero()
        };
        let got = apply_offset(BlochVector::on_z(0.51), &off);
        assert_abs_diff_eq!(got.z, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn calibration_variance_scale() {
        // C_NH / n_calib at n = 150,000 sits in the 3e-5 .. 7e-5 band across the demo states.
        for r in crate::bounds::DEMO_LENGTHS {
            let v = CalibrationOffset::variance_scale(r, 150_000).unwrap();
            assert!((3e-5..=7e-5).contains(&v), "r={r} v={v}");
            assert!(v.sqrt() < 1e-2);
        }
    }

    #[test]
    fn unitary_perturbation_biases_estimates() {
        let params = StPovmParams::aligned(0.5).unwrap();
        let meas = StMeasurement::new(params).unwrap();
        let theta = BlochVector::on_z(0.5);
        let opts = SamplingOptions {
            systematic: SystematicModel::UnitaryPerturbation { epsilon: 0.2, seed: 1 },
            ..Default::default()
        };
        let rec = sample_shots_with(&params, theta, 400_000, 4, &opts).unwrap();
        let est = meas.estimate(&rec.frequencies()).unwrap();
        // A 0.2 rad rotation moves the state by about 0.5·0.2·sin(angle to axis).
        assert!((est - theta).norm() > 0.02);
        assert_abs_diff_eq!(est.norm(), 0.5, epsilon = 0.03);
    }

    #[test]
    fn drift_leaving_ball_is_rejected() {
        let params = StPovmParams::aligned(0.5).unwrap();
        let opts = SamplingOptions {
            systematic: SystematicModel::Drift { rate: [0.0, 0.0, 1e-3] },
            ..Default::default()
        };
        assert!(matches!(
            sample_shots_with(&params, BlochVector::on_z(0.9), 1000, 1, &opts),
            Err(Error::UnphysicalState { .. })
        ));
        assert!(sample_shots_with(&params, BlochVector::on_z(0.5), 100, 1, &opts).is_ok());
    }
}

//! Squashed-tetrahedron (ST) POVMs, the SIC-POVM, outcome probabilities and
//! the unbiased linear estimator.
//!
//! The ST family is built in an aligned frame where the probe state points
//! along +z and element `z` is `r_z |1⟩⟨1|`. A general orientation is reached
//! by conjugating with the SU(2) rotation that maps the orientation onto +z.
//! The estimator matrix is always the φ = 0 aligned one; frequencies are
//! mapped back through the frame rotation returned by [`StPovmParams::frame`].

use std::f64::consts::{FRAC_PI_3, PI};

use nalgebra::{Matrix2, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{
    bloch_to_density, hermitian_eigenvalues, BlochVector, DensityMatrix, RotationSpec, C64,
    STATE_TOL,
};

/// Outcome labels in estimator column order.
pub const ST_LABELS: [&str; 4] = ["z", "1", "2", "3"];

pub type Probabilities = [f64; 4];

/// A four-outcome qubit POVM.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitPovm {
    elements: [Matrix2<C64>; 4],
    labels: [String; 4],
}

impl QubitPovm {
    /// Validates positivity and completeness (both to 1e-12).
    pub fn new(elements: [Matrix2<C64>; 4], labels: [String; 4]) -> Result<Self> {
        for (i, e) in elements.iter().enumerate() {
            let herm = (e - e.adjoint()).camax();
            if herm > STATE_TOL {
                return Err(Error::InvalidPovm(format!("element {i} is not Hermitian")));
            }
            let [lo, _] = hermitian_eigenvalues(e);
            if lo < -STATE_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {i} has negative eigenvalue {lo:e}"
                )));
            }
        }
        let povm = QubitPovm { elements, labels };
        let res = povm.completeness_residual();
        if res > STATE_TOL {
            return Err(Error::InvalidPovm(format!(
                "elements do not sum to identity (residual {res:e})"
            )));
        }
        Ok(povm)
    }

    pub fn elements(&self) -> &[Matrix2<C64>; 4] {
        &self.elements
    }

    pub fn labels(&self) -> &[String; 4] {
        &self.labels
    }

    /// Largest entrywise deviation of Σ Π_i from the identity.
    pub fn completeness_residual(&self) -> f64 {
        let sum: Matrix2<C64> = self.elements.iter().sum();
        (sum - Matrix2::identity()).camax()
    }

    pub fn traces(&self) -> [f64; 4] {
        self.elements.map(|e| e.trace().re)
    }

    /// Tr[Π_i Π_j] / (Tr Π_i Tr Π_j).
    pub fn normalized_gram(&self) -> [[f64; 4]; 4] {
        let tr = self.traces();
        let mut g = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                g[i][j] = (self.elements[i] * self.elements[j]).trace().re / (tr[i] * tr[j]);
            }
        }
        g
    }

    /// U† Π_i U for every element.
    pub fn conjugated_by(&self, u: &Matrix2<C64>) -> QubitPovm {
        QubitPovm {
            elements: self.elements.map(|e| u.adjoint() * e * u),
            labels: self.labels.clone(),
        }
    }
}

/// Parameters of one member of the ST family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct StPovmParams {
    r_p: f64,
    phi: f64,
    orientation: BlochVector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    r_p: f64,
    phi: f64,
    orientation: BlochVector,
}

impl TryFrom<RawParams> for StPovmParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        StPovmParams::new(r.r_p, r.phi, r.orientation)
    }
}

impl From<StPovmParams> for RawParams {
    fn from(p: StPovmParams) -> Self {
        RawParams {
            r_p: p.r_p,
            phi: p.phi,
            orientation: p.orientation,
        }
    }
}

impl StPovmParams {
    /// `orientation` is the probe-alignment axis; it is normalized here.
    pub fn new(r_p: f64, phi: f64, orientation: BlochVector) -> Result<Self> {
        if !(0.0..1.0).contains(&r_p) {
            return Err(Error::PureStateDegeneracy { r_p });
        }
        if !phi.is_finite() {
            return Err(Error::param("phi must be finite"));
        }
        let orientation = orientation.unit().ok_or(Error::DegenerateAxis)?;
        Ok(StPovmParams {
            r_p,
            phi,
            orientation,
        })
    }

    /// z-aligned, φ = 0.
    pub fn aligned(r_p: f64) -> Result<Self> {
        StPovmParams::new(r_p, 0.0, BlochVector::Z)
    }

    /// The SIC-POVM as the r_p = 0 member.
    pub fn sic(orientation: BlochVector, phi: f64) -> Result<Self> {
        StPovmParams::new(0.0, phi, orientation)
    }

    /// Optimal member for a state: r_p = |θ|, oriented along θ.
    pub fn matched_to(theta: BlochVector) -> Result<Self> {
        match theta.unit() {
            Some(dir) => StPovmParams::new(theta.norm(), 0.0, dir),
            None => StPovmParams::aligned(0.0),
        }
    }

    pub fn r_p(&self) -> f64 {
        self.r_p
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn orientation(&self) -> BlochVector {
        self.orientation
    }

    /// Rotation from the laboratory frame into the φ = 0 aligned frame.
    pub fn frame(&self) -> RotationSpec {
        let align = RotationSpec::align_to_z(self.orientation)
            .expect("orientation is a unit vector by construction");
        if self.phi == 0.0 {
            align
        } else {
            align.then(&RotationSpec::about_axis(Vector3::z(), -self.phi))
        }
    }
}

/// Closed-form amplitudes of the ST family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StAmplitudes {
    pub r_z: f64,
    pub r_1: f64,
    pub a0: f64,
    pub a1: f64,
}

impl StAmplitudes {
    pub fn new(r_p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r_p) {
            return Err(Error::PureStateDegeneracy { r_p });
        }
        let r_z = 1.0 / (1.0 + ((1.0 + r_p) / (1.0 - r_p)).sqrt());
        let r_1 = (2.0 - r_z) / 3.0;
        let a0 = 1.0 / (3.0 * r_1).sqrt();
        let a1 = (1.0 - 1.0 / (3.0 * r_1)).sqrt();
        Ok(StAmplitudes { r_z, r_1, a0, a1 })
    }

    pub fn traces(&self) -> [f64; 4] {
        [self.r_z, self.r_1, self.r_1, self.r_1]
    }
}

/// Builds the ST-POVM for `params` in the laboratory frame.
pub fn build_st_povm(params: &StPovmParams) -> Result<QubitPovm> {
    let amp = StAmplitudes::new(params.r_p)?;
    let zero = C64::new(0.0, 0.0);
    let mut elements = [Matrix2::zeros(); 4];
    elements[0] = Matrix2::new(zero, zero, zero, C64::new(amp.r_z, 0.0));
    for k in 0..3 {
        let phase = params.phi + 2.0 * PI * k as f64 / 3.0;
        let a = C64::new(amp.a0, 0.0);
        let b = C64::from_polar(amp.a1, phase);
        let proj = Matrix2::new(a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj());
        elements[k + 1] = proj * C64::new(amp.r_1, 0.0);
    }
    let labels = ST_LABELS.map(String::from);
    let aligned = QubitPovm::new(elements, labels)?;
    let align = RotationSpec::align_to_z(params.orientation)?;
    Ok(aligned.conjugated_by(&align.su2))
}

/// SIC-POVM: the r_p = 0 member of the ST family.
pub fn build_sic_povm(orientation: BlochVector, phi: f64) -> Result<QubitPovm> {
    build_st_povm(&StPovmParams::sic(orientation, phi)?)
}

/// p_k = Tr[Π_k ρ].
pub fn outcome_probabilities(povm: &QubitPovm, rho: &DensityMatrix) -> Probabilities {
    povm.elements().map(|e| (e * rho.matrix()).trace().re)
}

/// The 3×4 matrix ℰ with θ̂_j = Σ_k ℰ_jk f_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEstimator {
    pub matrix: Matrix3x4<f64>,
}

impl LinearEstimator {
    pub fn new(matrix: Matrix3x4<f64>) -> Self {
        LinearEstimator { matrix }
    }

    /// ℰ f in the estimator's own frame.
    pub fn apply(&self, freqs: &[f64; 4]) -> BlochVector {
        (self.matrix * Vector4::from(*freqs)).into()
    }

    pub fn column(&self, k: usize) -> BlochVector {
        BlochVector::new(self.matrix[(0, k)], self.matrix[(1, k)], self.matrix[(2, k)])
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        let m = &self.matrix;
        std::array::from_fn(|j| std::array::from_fn(|k| m[(j, k)]))
    }
}

/// Estimator for the φ = 0 aligned ST-POVM with stretching `r_p`.
pub fn build_estimator(params: &StPovmParams) -> Result<LinearEstimator> {
    estimator_for(params.r_p)
}

pub(crate) fn estimator_for(r_p: f64) -> Result<LinearEstimator> {
    if !(0.0..1.0).contains(&r_p) {
        return Err(Error::PureStateDegeneracy { r_p });
    }
    let a = (1.0 + ((1.0 - r_p) / (1.0 + r_p)).sqrt()).sqrt();
    let b = -1.0 - 2.0 * ((1.0 + r_p) / (1.0 - r_p)).sqrt();
    let s3 = 3f64.sqrt();
    #[rustfmt::skip]
    let m = Matrix3x4::new(
        0.0, 2.0 * a,  -a,      -a,
        0.0, 0.0,      s3 * a,  -s3 * a,
        b,   1.0,      1.0,     1.0,
    );
    Ok(LinearEstimator::new(m))
}

/// Tolerance on Σ f for frequency vectors.
pub const FREQ_SUM_TOL: f64 = 1e-9;

/// θ̂ = R⁻¹ (ℰ f), where `rotation` is the POVM frame from [`StPovmParams::frame`].
///
/// Quasi-frequencies (negative entries after mitigation) are accepted. The
/// result may be unphysical; check [`BlochVector::is_physical`].
pub fn estimate_from_frequencies(
    est: &LinearEstimator,
    freqs: &[f64; 4],
    rotation: &RotationSpec,
) -> Result<BlochVector> {
    let sum: f64 = freqs.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > FREQ_SUM_TOL {
        return Err(Error::FrequencySum { sum });
    }
    Ok(rotation.apply_inverse(est.apply(freqs)))
}

/// Bloch-ball picture of an ST-POVM in the laboratory frame: element
/// weights r_k, element directions, and estimator columns.
///
/// Equivalent to the matrix construction (p_k = r_k (1 + n_k·θ)/2) but
/// allocation-free, for inner loops.
#[derive(Debug, Clone, Copy)]
pub struct StGeometry {
    pub weights: [f64; 4],
    pub directions: [Vector3<f64>; 4],
    pub columns: [Vector3<f64>; 4],
}

impl StGeometry {
    pub fn new(params: &StPovmParams) -> Result<Self> {
        Self::with_frame(params.r_p, &params.frame())
    }

    /// Geometry for stretching `r_p` with the aligned frame given by `frame`.
    pub fn with_frame(r_p: f64, frame: &RotationSpec) -> Result<Self> {
        let amp = StAmplitudes::new(r_p)?;
        let est = estimator_for(r_p)?;
        let inv = frame.so3.transpose();
        let rho_perp = 2.0 * amp.a0 * amp.a1;
        let nz = amp.a0 * amp.a0 - amp.a1 * amp.a1;
        let mut directions = [Vector3::zeros(); 4];
        directions[0] = inv * Vector3::new(0.0, 0.0, -1.0);
        for k in 0..3 {
            let ang = 2.0 * FRAC_PI_3 * k as f64;
            directions[k + 1] = inv * Vector3::new(rho_perp * ang.cos(), rho_perp * ang.sin(), nz);
        }
        let columns = std::array::from_fn(|k| inv * est.column(k).to_vector());
        Ok(StGeometry {
            weights: amp.traces(),
            directions,
            columns,
        })
    }

    pub fn probabilities(&self, theta: BlochVector) -> Probabilities {
        let t = theta.to_vector();
        std::array::from_fn(|k| 0.5 * self.weights[k] * (1.0 + self.directions[k].dot(&t)))
    }

    /// Σ_k p_k |ℰ_k − θ|².
    pub fn expected_mse(&self, theta: BlochVector) -> f64 {
        let t = theta.to_vector();
        let p = self.probabilities(theta);
        (0..4).map(|k| p[k] * (self.columns[k] - t).norm_squared()).sum()
    }

    /// Single-probe covariance of the estimator, Σ_k p_k e_k e_kᵀ − θθᵀ.
    pub fn covariance(&self, theta: BlochVector) -> nalgebra::Matrix3<f64> {
        let t = theta.to_vector();
        let p = self.probabilities(theta);
        let mut m = nalgebra::Matrix3::zeros();
        for (col, pk) in self.columns.iter().zip(p) {
            m += col * col.transpose() * pk;
        }
        m - t * t.transpose()
    }
}

/// Expected single-probe squared trace-norm error of the ST estimator.
pub fn expected_mse(params: &StPovmParams, theta: BlochVector) -> Result<f64> {
    theta.check_physical()?;
    Ok(StGeometry::new(params)?.expected_mse(theta))
}

/// A ready-to-use ST measurement: POVM, estimator and frame together.
#[derive(Debug, Clone)]
pub struct StMeasurement {
    pub params: StPovmParams,
    pub povm: QubitPovm,
    pub estimator: LinearEstimator,
    pub frame: RotationSpec,
}

impl StMeasurement {
    pub fn new(params: StPovmParams) -> Result<Self> {
        Ok(StMeasurement {
            povm: build_st_povm(&params)?,
            estimator: build_estimator(&params)?,
            frame: params.frame(),
            params,
        })
    }

    pub fn probabilities(&self, theta: BlochVector) -> Result<Probabilities> {
        Ok(outcome_probabilities(&self.povm, &bloch_to_density(theta)?))
    }

    pub fn estimate(&self, freqs: &[f64; 4]) -> Result<BlochVector> {
        estimate_from_frequencies(&self.estimator, freqs, &self.frame)
    }

    /// Laboratory-frame estimator column for outcome `k` (ℰ_k rotated back).
    pub fn lab_column(&self, k: usize) -> BlochVector {
        self.frame.apply_inverse(self.estimator.column(k))
    }
}

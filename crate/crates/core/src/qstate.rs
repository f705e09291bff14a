//! Bloch-vector and density-matrix algebra for a single qubit.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for Hermiticity, trace and positivity checks.
pub const STATE_TOL: f64 = 1e-12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub fn pauli_x() -> Matrix2<C64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y() -> Matrix2<C64> {
    Matrix2::new(ZERO, -I, I, ZERO)
}

pub fn pauli_z() -> Matrix2<C64> {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

/// `n · σ` for a real 3-vector.
pub fn sigma_dot(n: &Vector3<f64>) -> Matrix2<C64> {
    Matrix2::new(
        C64::new(n.z, 0.0),
        C64::new(n.x, -n.y),
        C64::new(n.x, n.y),
        C64::new(-n.z, 0.0),
    )
}

/// Real parameter vector θ of ρ = (I + σ·θ)/2.
///
/// Lengths above one are representable: the linear estimator is unbiased and
/// its output is never clamped. Use [`BlochVector::is_physical`] to flag them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const ZERO: BlochVector = BlochVector { x: 0.0, y: 0.0, z: 0.0 };
    pub const Z: BlochVector = BlochVector { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn on_z(z: f64) -> Self {
        BlochVector::new(0.0, 0.0, z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    /// Bloch length r = |θ|.
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(self, other: BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// True when the vector lies in the closed unit ball (to [`STATE_TOL`]).
    pub fn is_physical(self) -> bool {
        self.norm() <= 1.0 + STATE_TOL
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    /// Direction of `self`; vectors already within 4 ulp of unit length are returned as is.
    pub fn unit(self) -> Option<BlochVector> {
        let n = self.norm();
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Some(self);
        }
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub(crate) fn check_physical(self) -> Result<()> {
        if !self.is_finite() || !self.is_physical() {
            return Err(Error::UnphysicalState { norm: self.norm() });
        }
        Ok(())
    }
}

impl From<[f64; 3]> for BlochVector {
    fn from(a: [f64; 3]) -> Self {
        BlochVector::new(a[0], a[1], a[2])
    }
}

impl From<BlochVector> for [f64; 3] {
    fn from(b: BlochVector) -> Self {
        b.to_array()
    }
}

impl From<Vector3<f64>> for BlochVector {
    fn from(v: Vector3<f64>) -> Self {
        BlochVector::new(v.x, v.y, v.z)
    }
}

impl Add for BlochVector {
    type Output = BlochVector;
    fn add(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for BlochVector {
    type Output = BlochVector;
    fn sub(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for BlochVector {
    type Output = BlochVector;
    fn neg(self) -> BlochVector {
        BlochVector::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for BlochVector {
    type Output = BlochVector;
    fn mul(self, s: f64) -> BlochVector {
        BlochVector::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Validated single-qubit density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix2<C64>);

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity to [`STATE_TOL`].
    pub fn new(m: Matrix2<C64>) -> Result<Self> {
        let herm = (m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if herm > STATE_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (residual {herm:e})"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} != 1")));
        }
        let [lo, _] = hermitian_eigenvalues(&m);
        if lo < -STATE_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {lo:e}"
            )));
        }
        Ok(DensityMatrix(m))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Matrix2::identity() * C64::new(0.5, 0.0))
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        hermitian_eigenvalues(&self.0)
    }

    pub fn bloch(&self) -> BlochVector {
        density_to_bloch(self)
    }

    /// U ρ U†.
    pub fn conjugated(&self, u: &Matrix2<C64>) -> Self {
        DensityMatrix(u * self.0 * u.adjoint())
    }
}

/// Normalized pure state a|0⟩ + b|1⟩.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureKet([C64; 2]);

impl PureKet {
    pub fn new(a: C64, b: C64) -> Result<Self> {
        let n = a.norm_sqr() + b.norm_sqr();
        if (n - 1.0).abs() > STATE_TOL {
            return Err(Error::param(format!("ket norm² {n} != 1")));
        }
        Ok(PureKet([a, b]))
    }

    /// Ket with Bloch vector along the unit direction `n`.
    pub fn from_bloch(n: BlochVector) -> Result<Self> {
        let u = n.unit().ok_or(Error::DegenerateAxis)?;
        let theta = u.z.clamp(-1.0, 1.0).acos();
        let phi = u.y.atan2(u.x);
        Ok(PureKet([
            C64::new((theta / 2.0).cos(), 0.0),
            C64::from_polar((theta / 2.0).sin(), phi),
        ]))
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        self.0
    }

    pub fn projector(&self) -> Matrix2<C64> {
        let [a, b] = self.0;
        Matrix2::new(a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj())
    }

    pub fn bloch(&self) -> BlochVector {
        let [a, b] = self.0;
        let ab = a.conj() * b;
        BlochVector::new(2.0 * ab.re, 2.0 * ab.im, a.norm_sqr() - b.norm_sqr())
    }
}

/// Eigenvalues of a 2×2 Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &Matrix2<C64>) -> [f64; 2] {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let mean = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    [mean - half_gap, mean + half_gap]
}

/// ρ = (I + σ·θ)/2.
pub fn bloch_to_density(theta: BlochVector) -> Result<DensityMatrix> {
    theta.check_physical()?;
    let m = (Matrix2::identity() + sigma_dot(&theta.to_vector())) * C64::new(0.5, 0.0);
    Ok(DensityMatrix(m))
}

/// θ_j = Tr[ρ σ_j].
pub fn density_to_bloch(rho: &DensityMatrix) -> BlochVector {
    let m = rho.matrix();
    let off = m[(1, 0)];
    BlochVector::new(2.0 * off.re, 2.0 * off.im, m[(0, 0)].re - m[(1, 1)].re)
}

/// Tr √((a−b)†(a−b)); for qubits this is the Euclidean distance of Bloch vectors.
pub fn trace_norm_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = a.matrix() - b.matrix();
    let [l0, l1] = hermitian_eigenvalues(&d);
    l0.abs() + l1.abs()
}

/// A proper rotation of the Bloch ball with its SU(2) representative.
///
/// Invariant: `su2 (σ·n) su2† = σ·(so3 n)` for every real `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSpec {
    pub so3: Matrix3<f64>,
    pub su2: Matrix2<C64>,
}

impl RotationSpec {
    pub fn identity() -> Self {
        RotationSpec {
            so3: Matrix3::identity(),
            su2: Matrix2::identity(),
        }
    }

    /// Right-handed rotation by `angle` about the unit `axis`.
    pub fn about_axis(axis: Vector3<f64>, angle: f64) -> Self {
        let k = axis.normalize();
        let (s, c) = angle.sin_cos();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let so3 = Matrix3::identity() + kx * s + kx * kx * (1.0 - c);
        let (sh, ch) = (0.5 * angle).sin_cos();
        let su2 = Matrix2::identity() * C64::new(ch, 0.0) - sigma_dot(&k) * C64::new(0.0, sh);
        RotationSpec { so3, su2 }
    }

    /// Rotation taking the direction of `axis` onto +z.
    ///
    /// Uses the axis-angle rotation about `axis × z`; the antipodal case is a
    /// fixed half-turn about x.
    pub fn align_to_z(axis: BlochVector) -> Result<Self> {
        let a = axis.unit().ok_or(Error::DegenerateAxis)?.to_vector();
        let z = Vector3::z();
        let c = a.dot(&z).clamp(-1.0, 1.0);
        let k = a.cross(&z);
        let s = k.norm();
        if s < 1e-15 {
            return Ok(if c > 0.0 {
                RotationSpec::identity()
            } else {
                RotationSpec::about_axis(Vector3::x(), std::f64::consts::PI)
            });
        }
        Ok(RotationSpec::about_axis(k / s, s.atan2(c)))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RotationSpec) -> RotationSpec {
        RotationSpec {
            so3: next.so3 * self.so3,
            su2: next.su2 * self.su2,
        }
    }

    pub fn inverse(&self) -> RotationSpec {
        RotationSpec {
            so3: self.so3.transpose(),
            su2: self.su2.adjoint(),
        }
    }

    pub fn apply(&self, v: BlochVector) -> BlochVector {
        (self.so3 * v.to_vector()).into()
    }

    pub fn apply_inverse(&self, v: BlochVector) -> BlochVector {
        (self.so3.transpose() * v.to_vector()).into()
    }

    /// U m U†.
    pub fn conjugate(&self, m: &Matrix2<C64>) -> Matrix2<C64> {
        self.su2 * m * self.su2.adjoint()
    }

    pub fn is_identity(&self) -> bool {
        (self.so3 - Matrix3::identity()).amax() < 1e-15
    }
}

/// Expresses `theta` in the frame whose +z axis is `target_axis`.
pub fn rotate_frame(
    theta: BlochVector,
    target_axis: BlochVector,
) -> Result<(BlochVector, RotationSpec)> {
    let rot = RotationSpec::align_to_z(target_axis)?;
    Ok((rot.apply(theta), rot))
}

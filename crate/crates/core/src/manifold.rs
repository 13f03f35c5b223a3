//! SO(3)/SE(3) primitives used by every factor: hat/vee, the exponential and
//! logarithm maps, the right Jacobian, the pose retraction and tangent-space
//! Gaussian noise.
//!
//! Rotations perturb on the right: a noisy rotation is `R * Exp(eps)` with
//! `eps` drawn in the tangent space. Pose tangents are ordered
//! `(rotation, translation)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Below this angle the closed forms switch to second-order Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log_so3` refuses rotations whose trace is within this margin of -1.
pub const PI_MARGIN: f64 = 1e-9;

/// Orthogonality defect above which long products are re-projected onto SO(3).
pub const ORTHO_TOLERANCE: f64 = 1e-9;

/// Skew-symmetric matrix of `w`, so that `hat(w) * b == w.cross(b)`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`]; reads the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A 3D rotation matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "Rotation[[{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)]
        )
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix after checking `R Rᵀ = I` and `det R = 1` to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Self(m);
        let det = m.determinant();
        if r.orthogonality_defect() > ORTHO_TOLERANCE || (det - 1.0).abs() > ORTHO_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "matrix is not a rotation (defect {:.3e}, det {det:.12})",
                r.orthogonality_defect()
            )));
        }
        Ok(r)
    }

    /// Wraps a matrix without validation; the caller guarantees it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Row-major constructor; the entries are kept as given once they are
    /// within 1e-6 of a rotation.
    pub fn from_row_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::DimensionMismatch {
                expected: 9,
                got: v.len(),
            });
        }
        let m = Matrix3::from_row_slice(v);
        let r = Self(m).renormalized();
        if (r.0 - m).norm() > 1e-6 {
            return Err(Error::InvalidConfig("row-major entries are not a rotation".into()));
        }
        Ok(Self(m))
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Result<Vector3<f64>> {
        log_so3(self)
    }

    pub fn about_x(angle: f64) -> Self {
        exp_so3(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Frobenius norm of `R Rᵀ - I`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).norm()
    }

    /// Nearest rotation in the Frobenius sense (polar factor via SVD).
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut m = u * vt;
        if m.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * vt;
        }
        Self(m)
    }

    /// Re-projects only when the defect exceeds [`ORTHO_TOLERANCE`].
    pub fn cleaned(self) -> Self {
        if self.orthogonality_defect() > ORTHO_TOLERANCE {
            self.renormalized()
        } else {
            self
        }
    }

    /// Rotation angle in `[0, pi]`, valid everywhere including at pi.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let s = 0.5 * vee(&(m - m.transpose())).norm();
        let c = 0.5 * (m.trace() - 1.0);
        s.atan2(c)
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// SO(3) exponential (Rodrigues).
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + w * a + w * w * b)
}

/// SO(3) logarithm for rotation angles strictly below pi.
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    let m = &r.0;
    let tr = m.trace();
    if tr <= -1.0 + PI_MARGIN {
        return Err(Error::AngleAtPi);
    }
    let axis2 = vee(&(m - m.transpose()));
    // axis2 = 2 sin(theta) * unit axis
    let s = 0.5 * axis2.norm();
    let c = 0.5 * (tr - 1.0);
    let theta = s.atan2(c);
    let scale = if theta < SMALL_ANGLE {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        0.5 * theta / theta.sin()
    };
    Ok(axis2 * scale)
}

/// Right Jacobian of SO(3): `Exp(phi + d) ≈ Exp(phi) Exp(J_r(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - w * a + w * w * b
}

/// Inverse of [`right_jacobian`]: `Log(Exp(phi) Exp(d)) ≈ phi + J_r⁻¹(phi) d`.
pub fn right_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(phi);
    let b = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + w * 0.5 + w * w * b
}

/// Rigid transform `(R, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self⁻¹ * other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        retract_pose(self, delta)
    }
}

/// Pose retraction `(R Exp(dphi), p + R dp)` with `delta = (dphi, dp)`.
pub fn retract_pose(t: &Pose, delta: &Vector6<f64>) -> Pose {
    let dphi = delta.fixed_rows::<3>(0).into_owned();
    let dp = delta.fixed_rows::<3>(3).into_owned();
    Pose {
        rotation: (t.rotation * exp_so3(&dphi)).cleaned(),
        translation: t.translation + t.rotation * dp,
    }
}

/// Zero-mean Gaussian on a tangent space, described by its covariance.
#[derive(Clone, Debug)]
pub struct TangentGaussian {
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl TangentGaussian {
    /// Validates symmetry (1e-12) and eigenvalues (>= -1e-12).
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::DimensionMismatch {
                expected: covariance.nrows(),
                got: covariance.ncols(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidConfig("covariance is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(covariance.clone());
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::InvalidConfig("covariance has a negative eigenvalue".into()));
        }
        let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let factor = &eig.eigenvectors * sqrt_l;
        Ok(Self { covariance, factor })
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Self {
        Self::new(DMatrix::identity(dim, dim) * (sigma * sigma)).expect("isotropic covariance")
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Draws `Exp(eps)` with `eps ~ N(0, sigma)`; `sigma` must be 3x3.
pub fn sample_rotation_noise<R: Rng + ?Sized>(sigma: &TangentGaussian, rng: &mut R) -> Result<Rotation> {
    if sigma.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: sigma.dim(),
        });
    }
    let eps = sigma.sample(rng);
    Ok(exp_so3(&Vector3::new(eps[0], eps[1], eps[2])))
}

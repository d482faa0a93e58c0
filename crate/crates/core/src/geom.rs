//! Rotation-group utilities: hat/vee, ZYX Euler angles, the exponential map,
//! projection onto SO(3) and attitude-drift metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Orthogonality / determinant tolerance for validated rotations.
pub const ROTATION_TOL: f64 = 1e-9;
/// Half-width of the rejected band around pitch = ±π/2.
pub const GIMBAL_GUARD: f64 = 1e-3;

/// Skew-symmetric matrix with `hat(a) * b == a × b`.
pub fn hat<T: Real>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part is not negligible.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Result<Vector3<T>> {
    let asym = to_f64((m + m.transpose()).norm());
    if asym >= 1e-9 {
        return Err(Error::NotSkew(asym));
    }
    Ok(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// A validated element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real>(Matrix3<T>);

impl<T: Real> Rotation<T> {
    pub fn new(m: Matrix3<T>) -> Result<Self> {
        let orth = to_f64((m.transpose() * m - Matrix3::identity()).norm());
        let det = to_f64(m.determinant());
        if orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotRotation { orth, det });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking; callers guarantee membership in SO(3).
    pub(crate) fn new_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<T>) -> Vector3<T> {
        self.0 * v
    }

    /// Rotation about the inertial z axis.
    pub fn about_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let z = T::zero();
        let o = T::one();
        Self(Matrix3::new(c, -s, z, s, c, z, z, z, o))
    }

    pub fn about_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let z = T::zero();
        let o = T::one();
        Self(Matrix3::new(c, z, s, z, o, z, -s, z, c))
    }

    pub fn about_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let z = T::zero();
        let o = T::one();
        Self(Matrix3::new(o, z, z, z, c, -s, z, s, c))
    }

    /// `‖RᵀR − I‖_F` of the wrapped matrix.
    pub fn orthogonality_error(&self) -> T {
        orthogonality_error(&self.0)
    }
}

/// `‖MᵀM − I‖_F` for an arbitrary 3×3 matrix.
pub fn orthogonality_error<T: Real>(m: &Matrix3<T>) -> T {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Roll-pitch-yaw angles of the intrinsic ZYX convention, `R = Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZyx<T: Real> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Real> EulerZyx<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Result<Self> {
        check_pitch(pitch)?;
        Ok(Self { roll, pitch, yaw })
    }

    pub fn to_vector(&self) -> Vector3<T> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }
}

fn check_pitch<T: Real>(pitch: T) -> Result<()> {
    let p = to_f64(pitch);
    if !p.is_finite() || p.abs() > std::f64::consts::FRAC_PI_2 - GIMBAL_GUARD {
        return Err(Error::GimbalLock(p));
    }
    Ok(())
}

pub fn euler_to_rot<T: Real>(e: &EulerZyx<T>) -> Rotation<T> {
    Rotation::about_z(e.yaw)
        .compose(&Rotation::about_y(e.pitch))
        .compose(&Rotation::about_x(e.roll))
}

pub fn rot_to_euler<T: Real>(r: &Rotation<T>) -> Result<EulerZyx<T>> {
    let m = r.matrix();
    let s = -m[(2, 0)];
    let s = s.clamp(-T::one(), T::one());
    let pitch = s.asin();
    check_pitch(pitch)?;
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(EulerZyx { roll, pitch, yaw })
}

/// Exponential map so(3) → SO(3) (Rodrigues' formula).
pub fn exp_so3<T: Real>(w: &Vector3<T>) -> Rotation<T> {
    let theta = w.norm();
    let k = hat(w);
    let k2 = k * k;
    let (a, b) = if theta < lit(1e-6) {
        let t2 = theta * theta;
        (
            T::one() - t2 / lit(6.0),
            lit::<T>(0.5) - t2 / lit(24.0),
        )
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / (theta * theta))
    };
    Rotation::new_unchecked(Matrix3::identity() + k * a + k2 * b)
}

/// Nearest rotation in Frobenius norm (SVD with determinant correction).
pub fn project_so3<T: Real>(m: &Matrix3<T>) -> Result<Rotation<T>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate(f64::NAN)),
    };
    let sv = svd.singular_values;
    let (imin, smin) = sv
        .iter()
        .enumerate()
        .fold((0, sv[0]), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    if !(to_f64(smin) >= 1e-12) {
        return Err(Error::Degenerate(to_f64(smin)));
    }
    let mut d = Matrix3::<T>::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(imin, imin)] = -T::one();
    }
    Ok(Rotation::new_unchecked(u * d * v_t))
}

/// Attitude drift metric `|tr(I − Rᵀ R̂)|`; `r_hat` may be off the manifold.
pub fn geodesic_error<T: Real>(r: &Rotation<T>, r_hat: &Matrix3<T>) -> T {
    let t = (Matrix3::identity() - r.matrix().transpose() * r_hat).trace();
    t.abs()
}

/// Standard geodesic angle `acos((tr(RᵀR̂) − 1)/2)`, clamped into the acos domain.
pub fn geodesic_angle<T: Real>(r: &Rotation<T>, r_hat: &Matrix3<T>) -> T {
    let c = ((r.matrix().transpose() * r_hat).trace() - T::one()) / lit(2.0);
    c.clamp(-T::one(), T::one()).acos()
}

/// Column-major flattening of a 3×3 matrix.
pub fn vec9<T: Real>(m: &Matrix3<T>) -> [T; 9] {
    let mut out = [T::zero(); 9];
    for (o, x) in out.iter_mut().zip(m.iter()) {
        *o = *x;
    }
    out
}

pub fn unvec9<T: Real>(v: &[T]) -> Matrix3<T> {
    Matrix3::from_column_slice(&v[..9])
}

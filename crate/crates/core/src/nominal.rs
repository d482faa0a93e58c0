//! Yaw-scheduled linear time-varying template of the single rigid body.
//!
//! State layout `x = [p; Θ; v; ω; 1]` (13 entries). Two simplifications make
//! the template linear: Euler rates use the yaw-only map `Θ̇ ≈ R_z(ψ)ᵀ ω`,
//! and the gyroscopic term `ω × Iω` is dropped with the inertia rotated by
//! yaw only. Gravity enters through the appended constant state.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geom::{rot_to_euler, Rotation};
use crate::plant::{PlantState, SrbParams, N_FEET};
use crate::scalar::{lit, Real};

pub const NX: usize = 13;
pub const P: usize = 0;
pub const THETA: usize = 3;
pub const V: usize = 6;
pub const W: usize = 9;
pub const ONE: usize = 12;

/// `[p; Θ; v; ω; 1]` with the trailing entry fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateState<T: Real>(pub SVector<T, NX>);

impl<T: Real> TemplateState<T> {
    pub fn new(p: Vector3<T>, theta: Vector3<T>, v: Vector3<T>, omega: Vector3<T>) -> Self {
        let mut x = SVector::<T, NX>::zeros();
        x.fixed_rows_mut::<3>(P).copy_from(&p);
        x.fixed_rows_mut::<3>(THETA).copy_from(&theta);
        x.fixed_rows_mut::<3>(V).copy_from(&v);
        x.fixed_rows_mut::<3>(W).copy_from(&omega);
        x[ONE] = T::one();
        Self(x)
    }

    /// Converts a plant state; the yaw is unwrapped to the branch nearest `yaw_hint`.
    pub fn from_plant(s: &PlantState<T>, yaw_hint: Option<T>) -> Result<Self> {
        let e = rot_to_euler(&s.r)?;
        let yaw = match yaw_hint {
            Some(h) => unwrap_angle(e.yaw, h),
            None => e.yaw,
        };
        Ok(Self::new(s.p, Vector3::new(e.roll, e.pitch, yaw), s.v, s.omega))
    }

    pub fn from_slice(x: &[T]) -> Result<Self> {
        if x.len() != NX {
            return Err(Error::DimensionMismatch { what: "template state", expected: NX, got: x.len() });
        }
        let mut v = SVector::<T, NX>::from_column_slice(x);
        v[ONE] = T::one();
        Ok(Self(v))
    }

    pub fn p(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(P).into_owned()
    }
    pub fn theta(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(THETA).into_owned()
    }
    pub fn v(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(V).into_owned()
    }
    pub fn omega(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(W).into_owned()
    }
    pub fn yaw(&self) -> T {
        self.0[THETA + 2]
    }

    /// Centroidal twist `[v; ω]`.
    pub fn twist(&self) -> SVector<T, 6> {
        self.0.fixed_rows::<6>(V).into_owned()
    }

    pub fn as_dvector(&self) -> DVector<T> {
        DVector::from_column_slice(self.0.as_slice())
    }
}

/// Shifts `angle` by multiples of 2π to the branch closest to `reference`.
pub fn unwrap_angle<T: Real>(angle: T, reference: T) -> T {
    let two_pi = T::two_pi();
    let k = ((reference - angle) / two_pi).round();
    angle + k * two_pi
}

/// Discrete template matrices for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvMatrices<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// Stance legs in column order of `b`.
    pub stance: Vec<usize>,
    pub dt: T,
}

impl<T: Real> LtvMatrices<T> {
    pub fn n_contacts(&self) -> usize {
        self.stance.len()
    }

    /// Embeds the stance-only columns of `b` into the full 12-input layout.
    pub fn b_full(&self) -> DMatrix<T> {
        let mut b = DMatrix::zeros(NX, 3 * N_FEET);
        for (j, &leg) in self.stance.iter().enumerate() {
            b.view_mut((0, 3 * leg), (NX, 3)).copy_from(&self.b.view((0, 3 * j), (NX, 3)));
        }
        b
    }
}

/// Assembles `A(ψ)` and `B(ψ, r̄)` by forward-Euler discretization of the template.
pub fn build_ltv<T: Real>(
    yaw: T,
    moment_arms: &[Vector3<T>; N_FEET],
    stance: &[bool; N_FEET],
    params: &SrbParams<T>,
    dt: T,
) -> Result<LtvMatrices<T>> {
    let legs: Vec<usize> = (0..N_FEET).filter(|&i| stance[i]).collect();
    if legs.is_empty() {
        return Err(Error::EmptyStance);
    }
    let rz = *Rotation::about_z(yaw).matrix();
    let i_hat = rz * params.inertia_body * rz.transpose();
    let i_inv = i_hat.try_inverse().ok_or(Error::SingularInertia)?;

    let mut a = DMatrix::<T>::identity(NX, NX);
    let eye3 = Matrix3::<T>::identity();
    a.view_mut((P, V), (3, 3)).copy_from(&(eye3 * dt));
    a.view_mut((THETA, W), (3, 3)).copy_from(&(rz.transpose() * dt));
    a[(V + 2, ONE)] = -params.gravity * dt;

    let mut b = DMatrix::<T>::zeros(NX, 3 * legs.len());
    let inv_m = dt / params.mass;
    for (j, &leg) in legs.iter().enumerate() {
        b.view_mut((V, 3 * j), (3, 3)).copy_from(&(eye3 * inv_m));
        let torque_map = i_inv * crate::geom::hat(&moment_arms[leg]) * dt;
        b.view_mut((W, 3 * j), (3, 3)).copy_from(&torque_map);
    }
    Ok(LtvMatrices { a, b, stance: legs, dt })
}

/// `x⁺ = A x + B u` with `u` the stacked stance forces.
pub fn nominal_step<T: Real>(
    x: &TemplateState<T>,
    u: &DVector<T>,
    mats: &LtvMatrices<T>,
) -> Result<TemplateState<T>> {
    if u.len() != mats.b.ncols() {
        return Err(Error::DimensionMismatch { what: "stance force vector", expected: mats.b.ncols(), got: u.len() });
    }
    let next = &mats.a * x.as_dvector() + &mats.b * u;
    let mut out = SVector::<T, NX>::from_column_slice(next.as_slice());
    out[ONE] = T::one();
    Ok(TemplateState(out))
}

/// Gathers the stance-foot forces from a full 12-vector.
pub fn stance_inputs<T: Real>(u_full: &[T], stance: &[usize]) -> DVector<T> {
    DVector::from_iterator(
        3 * stance.len(),
        stance.iter().flat_map(|&leg| (0..3).map(move |k| u_full[3 * leg + k])),
    )
}

/// One-step template prediction from a full 12-input vector; swing entries are ignored.
pub fn predict_full<T: Real>(
    x: &TemplateState<T>,
    u_full: &[T],
    moment_arms: &[Vector3<T>; N_FEET],
    stance: &[bool; N_FEET],
    params: &SrbParams<T>,
    dt: T,
) -> Result<TemplateState<T>> {
    if !stance.iter().any(|&s| s) {
        // flight: ballistic update through the constant state only
        let mut next = x.0;
        let v = x.v();
        for k in 0..3 {
            next[P + k] += v[k] * dt;
            next[THETA + k] = x.0[THETA + k];
        }
        let rz = *Rotation::about_z(x.yaw()).matrix();
        let w = x.omega();
        let rate = rz.transpose() * w * dt;
        for k in 0..3 {
            next[THETA + k] += rate[k];
        }
        next[V + 2] -= params.gravity * dt;
        return Ok(TemplateState(next));
    }
    let mats = build_ltv(x.yaw(), moment_arms, stance, params, dt)?;
    let u = stance_inputs(u_full, &mats.stance);
    nominal_step(x, &u, &mats)
}

/// Helper for examples and tests: forces that exactly cancel gravity with equal shares.
pub fn hover_inputs<T: Real>(params: &SrbParams<T>, n_contacts: usize) -> DVector<T> {
    let mut u = DVector::zeros(3 * n_contacts);
    let share = params.weight() / lit(n_contacts as f64);
    for j in 0..n_contacts {
        u[3 * j + 2] = share;
    }
    u
}

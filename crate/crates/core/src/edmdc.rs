//! EDMD with control: snapshot assembly, ridge regression, output maps,
//! lifted rollouts and excitation diagnostics.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{Dictionary, DictionaryDescriptor, Standardizer};
use crate::scalar::{lit, to_f64, Real};

pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const COND_WARN: f64 = 1e12;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One episode: `states.len()` samples, with `inputs[k]` applied between `k` and `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet<T: Real> {
    pub z: DMatrix<T>,
    pub z_next: DMatrix<T>,
    pub u: DMatrix<T>,
}

impl<T: Real> SnapshotSet<T> {
    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    /// Stacked regressor `Ω = [Z; U]`.
    pub fn omega(&self) -> DMatrix<T> {
        stack_rows(&self.z, &self.u)
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self { z: self.z.select_columns(cols), z_next: self.z_next.select_columns(cols), u: self.u.select_columns(cols) }
    }
}

pub fn stack_rows<T: Real>(top: &DMatrix<T>, bottom: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Lifts every within-episode transition; no pair spans two episodes.
pub fn assemble<T: Real>(episodes: &[Trajectory<T>], dict: &Dictionary) -> Result<SnapshotSet<T>> {
    let m: usize = episodes.iter().map(|e| e.states.len().saturating_sub(1)).sum();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let n_u = episodes
        .iter()
        .find(|e| e.states.len() > 1)
        .and_then(|e| e.inputs.first())
        .map_or(0, |u| u.len());
    let q = dict.output_dim();
    let mut z = DMatrix::zeros(q, m);
    let mut z_next = DMatrix::zeros(q, m);
    let mut u = DMatrix::zeros(n_u, m);
    let mut col = 0;
    for ep in episodes {
        if ep.states.len() < 2 {
            continue;
        }
        if ep.inputs.len() < ep.states.len() - 1 {
            return Err(Error::DimensionMismatch { what: "episode inputs", expected: ep.states.len() - 1, got: ep.inputs.len() });
        }
        let mut prev = dict.eval(ep.states[0].as_slice())?;
        for k in 0..ep.states.len() - 1 {
            let next = dict.eval(ep.states[k + 1].as_slice())?;
            if ep.inputs[k].len() != n_u {
                return Err(Error::DimensionMismatch { what: "input vector", expected: n_u, got: ep.inputs[k].len() });
            }
            z.set_column(col, &prev);
            z_next.set_column(col, &next);
            u.set_column(col, &ep.inputs[k]);
            prev = next;
            col += 1;
        }
    }
    if m < q + n_u + 1 {
        warn!("only {m} snapshot pairs for {} regressors", q + n_u);
    }
    Ok(SnapshotSet { z, z_next, u })
}

/// `K = Z′Ωᵀ(ΩΩᵀ + λI)⁻¹` through a Cholesky solve of the Gram matrix.
pub fn ridge_fit<T: Real>(z_next: &DMatrix<T>, omega: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>> {
    if !(to_f64(lambda) > 0.0) {
        return Err(Error::InvalidParameter(format!("ridge weight must be positive, got {}", to_f64(lambda))));
    }
    if z_next.ncols() != omega.ncols() {
        return Err(Error::DimensionMismatch { what: "snapshot columns", expected: omega.ncols(), got: z_next.ncols() });
    }
    let p = omega.nrows();
    let mut gram = omega * omega.transpose();
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let rhs = omega * z_next.transpose();
    let chol = gram.cholesky().ok_or(Error::Degenerate(to_f64(lambda)))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
        let d = to_f64(d).abs();
        (lo.min(d), hi.max(d))
    });
    // squared ratio of the Cholesky diagonal bounds the condition number from below
    let cond = (hi / lo).powi(2);
    if cond > COND_WARN {
        warn!("ridge Gram matrix is ill-conditioned (condition ≥ {cond:.3e})");
    }
    Ok(chol.solve(&rhs).transpose())
}

/// Linear output map `C` from `Z` to `targets`.
pub fn output_fit<T: Real>(targets: &DMatrix<T>, z: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>> {
    ridge_fit(targets, z, lambda)
}

/// Ridge objective `‖Z′ − KΩ‖_F² + λ‖K‖_F²`.
pub fn ridge_objective<T: Real>(k: &DMatrix<T>, z_next: &DMatrix<T>, omega: &DMatrix<T>, lambda: T) -> T {
    (z_next - k * omega).norm_squared() + k.norm_squared() * lambda
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    /// q × (H+1), first column is `z₀`.
    pub traj: DMatrix<T>,
    /// First step index at which the state left the finite, bounded region.
    pub blowup: Option<usize>,
}

/// Whether `z` has left the region `‖z‖∞ ≤ 1e6·max(1, ‖z₀‖∞)` or turned non-finite.
pub fn is_blown_up<T: Real>(z: &DVector<T>, z0_norm: f64) -> bool {
    let limit = 1e6 * z0_norm.max(1.0);
    z.iter().any(|v| {
        let v = to_f64(*v);
        !v.is_finite() || v.abs() > limit
    })
}

/// Iterates `z_{k+1} = A z_k + B u_k (+ c)`; columns of `u_seq` are the inputs.
pub fn rollout<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    offset: Option<&DVector<T>>,
    z0: &DVector<T>,
    u_seq: &DMatrix<T>,
) -> Rollout<T> {
    let h = u_seq.ncols();
    let mut traj = DMatrix::zeros(z0.len(), h + 1);
    traj.set_column(0, z0);
    let z0_norm = to_f64(z0.amax());
    let mut blowup = None;
    let mut z = z0.clone();
    for k in 0..h {
        z = a * &z + b * u_seq.column(k);
        if let Some(c) = offset {
            z += c;
        }
        if blowup.is_none() && is_blown_up(&z, z0_norm) {
            blowup = Some(k + 1);
        }
        traj.set_column(k + 1, &z);
    }
    Rollout { traj, blowup }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Ratio of the largest to the smallest retained singular value.
    pub condition: f64,
}

pub fn excitation_diagnostics<T: Real>(y: &DMatrix<T>) -> Excitation {
    let sv = y.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().map(|&v| to_f64(v)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = smax * (y.nrows().max(y.ncols()) as f64) * 1e-12;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let condition = if rank == 0 { f64::INFINITY } else { smax / s[rank - 1] };
    Excitation { rank, singular_values: s, condition }
}

/// Identified lifted predictor in raw (unstandardized) coordinates:
/// `z⁺ = A z + B u + offset`, optional output `y = C z + c_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub offset: DVector<T>,
    pub c: Option<DMatrix<T>>,
    pub c_offset: Option<DVector<T>>,
    pub dictionary: DictionaryDescriptor,
    /// Standardizer of the regressor rows `[Z; U]` used during the fit.
    pub standardizer: Standardizer<T>,
    pub lambda: f64,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, standardize: true }
    }
}

impl<T: Real> LiftedModel<T> {
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, z: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a * z + &self.b * u + &self.offset
    }

    pub fn output(&self, z: &DVector<T>) -> Option<DVector<T>> {
        let c = self.c.as_ref()?;
        let mut y = c * z;
        if let Some(off) = &self.c_offset {
            y += off;
        }
        Some(y)
    }

    pub fn rollout(&self, z0: &DVector<T>, u_seq: &DMatrix<T>) -> Rollout<T> {
        rollout(&self.a, &self.b, Some(&self.offset), z0, u_seq)
    }

    pub fn is_finite(&self) -> bool {
        let fin = |m: &DMatrix<T>| m.iter().all(|v| to_f64(*v).is_finite());
        fin(&self.a) && fin(&self.b) && self.c.as_ref().is_none_or(fin)
    }
}

/// Fits `(A, B)` in standardized coordinates and maps back to raw affine form.
/// For dictionaries with a constant slot the affine term folds into that
/// slot's column and the constant row is pinned to `e₀`.
pub fn fit_lifted<T: Real>(snap: &SnapshotSet<T>, dict: &Dictionary, opts: &FitOptions) -> Result<LiftedModel<T>> {
    if snap.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = snap.z.nrows();
    let m = snap.u.nrows();
    if q != dict.output_dim() {
        return Err(Error::DimensionMismatch { what: "lifted state", expected: dict.output_dim(), got: q });
    }
    let omega = snap.omega();
    let konst = dict.constant_slot();
    let skip: Vec<usize> = konst.into_iter().collect();
    let s = if opts.standardize && snap.len() >= 2 {
        Standardizer::fit(&omega, &skip)?
    } else {
        Standardizer::identity(q + m)
    };
    let omega_s = s.apply(&omega);
    let zs_std = Standardizer { mean: s.mean[..q].to_vec(), std: s.std[..q].to_vec() };
    let target = zs_std.apply(&snap.z_next);
    let k = ridge_fit(&target, &omega_s, lit(opts.lambda))?;

    // raw form: A = D_z A_s D_z⁻¹, B = D_z B_s D_u⁻¹, c = μ_z − A μ_z − B μ_u
    let dz = DVector::from_column_slice(&s.std[..q]);
    let du = DVector::from_column_slice(&s.std[q..]);
    let mu_z = DVector::from_column_slice(&s.mean[..q]);
    let mu_u = DVector::from_column_slice(&s.mean[q..]);
    let mut a = DMatrix::from_fn(q, q, |i, j| dz[i] * k[(i, j)] / dz[j]);
    let mut b = DMatrix::from_fn(q, m, |i, j| dz[i] * k[(i, q + j)] / du[j]);
    let mut offset = &mu_z - &a * &mu_z - &b * &mu_u;
    if let Some(c0) = konst {
        for j in 0..q {
            a[(c0, j)] = if j == c0 { T::one() } else { T::zero() };
        }
        b.row_mut(c0).fill(T::zero());
        offset[c0] = T::zero();
        for i in 0..q {
            a[(i, c0)] += offset[i];
        }
        offset.fill(T::zero());
    }
    Ok(LiftedModel {
        a,
        b,
        offset,
        c: None,
        c_offset: None,
        dictionary: dict.descriptor(),
        standardizer: s,
        lambda: opts.lambda,
        dataset_fingerprint: String::new(),
    })
}

/// Fits `y ≈ C z (+ c)` on the standardized `Z` of a fitted model.
pub fn fit_output<T: Real>(model: &mut LiftedModel<T>, z: &DMatrix<T>, targets: &DMatrix<T>, dict: &Dictionary) -> Result<()> {
    let q = model.q();
    let zs_std = Standardizer { mean: model.standardizer.mean[..q].to_vec(), std: model.standardizer.std[..q].to_vec() };
    let c_s = output_fit(targets, &zs_std.apply(z), lit(model.lambda))?;
    let mut c = DMatrix::from_fn(c_s.nrows(), q, |i, j| c_s[(i, j)] / zs_std.std[j]);
    let mu = DVector::from_column_slice(&zs_std.mean);
    let mut off = -(&c * mu);
    if let Some(c0) = dict.constant_slot() {
        for i in 0..c.nrows() {
            c[(i, c0)] += off[i];
        }
        off.fill(T::zero());
    }
    model.c = Some(c);
    model.c_offset = Some(off);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredMatrix {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl StoredMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }
    }

    fn to(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!("matrix {}x{} holds {} entries", self.rows, self.cols, self.data.len())));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredModel {
    format_version: u32,
    dictionary: DictionaryDescriptor,
    lambda: f64,
    dataset_fingerprint: String,
    a: StoredMatrix,
    b: StoredMatrix,
    offset: Vec<f64>,
    c: Option<StoredMatrix>,
    c_offset: Option<Vec<f64>>,
    standardizer: Standardizer<f64>,
}

impl LiftedModel<f64> {
    pub fn to_json(&self) -> Result<String> {
        let stored = StoredModel {
            format_version: MODEL_FORMAT_VERSION,
            dictionary: self.dictionary.clone(),
            lambda: self.lambda,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            a: StoredMatrix::from(&self.a),
            b: StoredMatrix::from(&self.b),
            offset: self.offset.as_slice().to_vec(),
            c: self.c.as_ref().map(StoredMatrix::from),
            c_offset: self.c_offset.as_ref().map(|v| v.as_slice().to_vec()),
            standardizer: self.standardizer.clone(),
        };
        Ok(serde_json::to_string(&stored)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let st: StoredModel = serde_json::from_str(s)?;
        if st.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {}", st.format_version)));
        }
        let a = st.a.to()?;
        let b = st.b.to()?;
        let q = st.dictionary.output_dim;
        if a.shape() != (q, q) || b.nrows() != q || st.offset.len() != q {
            return Err(Error::Format("model dimensions disagree with the dictionary".into()));
        }
        Ok(Self {
            a,
            b,
            offset: DVector::from_vec(st.offset),
            c: st.c.as_ref().map(StoredMatrix::to).transpose()?,
            c_offset: st.c_offset.map(DVector::from_vec),
            dictionary: st.dictionary,
            standardizer: st.standardizer,
            lambda: st.lambda,
            dataset_fingerprint: st.dataset_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

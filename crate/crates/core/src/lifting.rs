//! Observable dictionaries and per-feature standardization.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{hat, vec9};
use crate::scalar::{lit, Real};

/// Largest lift dimension accepted.
pub const MAX_LIFT_DIM: usize = 10_000;
pub const ORDERING_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-8;

/// Input layout of the SE(3) dictionary: `[p; v; vec(R); ω]`.
pub const SE3_INPUT_DIM: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DictKind {
    Identity { input_dim: usize },
    Monomial { input_dim: usize, degree: usize },
    Se3 { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryDescriptor {
    #[serde(flatten)]
    pub kind: DictKind,
    pub output_dim: usize,
    pub ordering_version: u32,
}

/// Slot `k` of a monomial lift is `x[var] · slot[parent]`; slot 0 is the constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Term {
    parent: usize,
    var: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    kind: DictKind,
    terms: Vec<Term>,
    /// Exponent tuples as sorted variable indices, one per slot.
    labels: Vec<Vec<usize>>,
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc.min(usize::MAX as u128) as usize
}

impl Dictionary {
    pub fn identity(input_dim: usize) -> Self {
        Self { kind: DictKind::Identity { input_dim }, terms: Vec::new(), labels: (0..input_dim).map(|i| vec![i]).collect() }
    }

    /// Graded-lexicographic monomials of total degree ≤ `degree`, constant first.
    pub fn monomial(input_dim: usize, degree: usize) -> Result<Self> {
        if degree == 0 || input_dim == 0 {
            return Err(Error::InvalidParameter("monomial lift needs degree ≥ 1 and input_dim ≥ 1".into()));
        }
        let q = binomial(input_dim + degree, degree);
        if q > MAX_LIFT_DIM {
            return Err(Error::DegreeOverflow(q));
        }
        let mut terms = vec![Term { parent: 0, var: 0 }];
        let mut labels: Vec<Vec<usize>> = vec![Vec::new()];
        let mut prev: Vec<usize> = vec![0];
        for _ in 1..=degree {
            let mut cur = Vec::new();
            for &slot in &prev {
                let last = labels[slot].last().copied().unwrap_or(0);
                for var in last..input_dim {
                    let mut label = labels[slot].clone();
                    label.push(var);
                    cur.push(labels.len());
                    terms.push(Term { parent: slot, var });
                    labels.push(label);
                }
            }
            prev = cur;
        }
        debug_assert_eq!(labels.len(), q);
        Ok(Self { kind: DictKind::Monomial { input_dim, degree }, terms, labels })
    }

    pub fn se3(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("SE(3) lift needs degree ≥ 1".into()));
        }
        Ok(Self { kind: DictKind::Se3 { degree }, terms: Vec::new(), labels: Vec::new() })
    }

    pub fn from_kind(kind: DictKind) -> Result<Self> {
        match kind {
            DictKind::Identity { input_dim } => Ok(Self::identity(input_dim)),
            DictKind::Monomial { input_dim, degree } => Self::monomial(input_dim, degree),
            DictKind::Se3 { degree } => Self::se3(degree),
        }
    }

    pub fn kind(&self) -> DictKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            DictKind::Identity { input_dim } | DictKind::Monomial { input_dim, .. } => input_dim,
            DictKind::Se3 { .. } => SE3_INPUT_DIM,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            DictKind::Identity { input_dim } => input_dim,
            DictKind::Monomial { .. } => self.terms.len(),
            DictKind::Se3 { degree } => SE3_INPUT_DIM + 9 * degree,
        }
    }

    /// Slot holding the constant feature, if any.
    pub fn constant_slot(&self) -> Option<usize> {
        matches!(self.kind, DictKind::Monomial { .. }).then_some(0)
    }

    /// Slots whose value equals an input coordinate, in input order.
    pub fn linear_slots(&self) -> Vec<usize> {
        match self.kind {
            DictKind::Identity { input_dim } => (0..input_dim).collect(),
            DictKind::Monomial { input_dim, .. } => (1..=input_dim).collect(),
            DictKind::Se3 { .. } => (0..SE3_INPUT_DIM).collect(),
        }
    }

    /// Variable-index tuple generating a monomial slot.
    pub fn monomial_label(&self, slot: usize) -> Option<&[usize]> {
        self.labels.get(slot).map(|v| v.as_slice())
    }

    pub fn descriptor(&self) -> DictionaryDescriptor {
        DictionaryDescriptor { kind: self.kind, output_dim: self.output_dim(), ordering_version: ORDERING_VERSION }
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> Result<DVector<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { what: "dictionary input", expected: self.input_dim(), got: x.len() });
        }
        Ok(match self.kind {
            DictKind::Identity { .. } => DVector::from_column_slice(x),
            DictKind::Monomial { .. } => {
                let mut z = DVector::<T>::zeros(self.terms.len());
                z[0] = T::one();
                for (k, t) in self.terms.iter().enumerate().skip(1) {
                    z[k] = z[t.parent] * x[t.var];
                }
                z
            }
            DictKind::Se3 { degree } => {
                let p = Vector3::new(x[0], x[1], x[2]);
                let v = Vector3::new(x[3], x[4], x[5]);
                let r = Matrix3::from_column_slice(&x[6..15]);
                let w = Vector3::new(x[15], x[16], x[17]);
                se3_lift(&p, &v, &r, &w, degree)
            }
        })
    }

    /// Lifts every column of `x` (input_dim × M).
    pub fn eval_columns<T: Real>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        let mut out = DMatrix::zeros(self.output_dim(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let c: Vec<T> = col.iter().copied().collect();
            out.set_column(j, &self.eval(&c)?);
        }
        Ok(out)
    }
}

/// Convenience wrapper: degree-`d` monomial lift of `x`.
pub fn monomial_lift<T: Real>(x: &[T], degree: usize) -> Result<DVector<T>> {
    Dictionary::monomial(x.len(), degree)?.eval(x)
}

/// `[p; v; vec(R); ω; vec(R ω^); …; vec(R (ω^)^d)]` with `ω` in the body frame.
pub fn se3_lift<T: Real>(
    p: &Vector3<T>,
    v: &Vector3<T>,
    r: &Matrix3<T>,
    omega: &Vector3<T>,
    degree: usize,
) -> DVector<T> {
    let mut z = DVector::<T>::zeros(SE3_INPUT_DIM + 9 * degree);
    z.rows_mut(0, 3).copy_from(p);
    z.rows_mut(3, 3).copy_from(v);
    z.rows_mut(6, 9).copy_from_slice(&vec9(r));
    z.rows_mut(15, 3).copy_from(omega);
    let w = hat(omega);
    let mut m = *r;
    for j in 0..degree {
        m *= w;
        z.rows_mut(SE3_INPUT_DIM + 9 * j, 9).copy_from_slice(&vec9(&m));
    }
    z
}

/// Row-wise z-scoring of a feature matrix (features × samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T: Real> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], std: vec![T::one(); dim] }
    }

    /// Fits per-row mean and population std; rows listed in `skip` pass through unchanged.
    pub fn fit(rows: &DMatrix<T>, skip: &[usize]) -> Result<Self> {
        let m = rows.ncols();
        if m < 2 {
            return Err(Error::EmptyDataset);
        }
        let inv_m = T::one() / lit::<T>(m as f64);
        let floor = lit::<T>(STD_FLOOR);
        let mut mean = Vec::with_capacity(rows.nrows());
        let mut std = Vec::with_capacity(rows.nrows());
        for (i, row) in rows.row_iter().enumerate() {
            if skip.contains(&i) {
                mean.push(T::zero());
                std.push(T::one());
                continue;
            }
            let mu = row.iter().fold(T::zero(), |a, &b| a + b) * inv_m;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mu) * (b - mu)) * inv_m;
            mean.push(mu);
            std.push(var.sqrt().max(floor));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_vec(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert_vec(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(x.len(), |i, _| x[i] * self.std[i] + self.mean[i])
    }

    pub fn apply(&self, rows: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(rows.nrows(), rows.ncols(), |i, j| (rows[(i, j)] - self.mean[i]) / self.std[i])
    }

    pub fn invert(&self, rows: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(rows.nrows(), rows.ncols(), |i, j| rows[(i, j)] * self.std[i] + self.mean[i])
    }

    pub fn is_floored(&self, i: usize) -> bool {
        self.std[i] <= lit(STD_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_variable_quadratic() {
        let z = monomial_lift(&[2.0, 3.0], 2).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let z0 = monomial_lift(&[0.0; 5], 3).unwrap();
        assert_eq!(z0[0], 1.0);
        assert!(z0.iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn slot_counts() {
        assert_eq!(Dictionary::monomial(6, 2).unwrap().output_dim(), 28);
        assert_eq!(Dictionary::monomial(6, 4).unwrap().output_dim(), 210);
        assert_eq!(Dictionary::monomial(12, 4).unwrap().output_dim(), 1820);
        for n in 1..=13 {
            for d in 1..=4 {
                assert_eq!(Dictionary::monomial(n, d).unwrap().output_dim(), binomial(n + d, d));
            }
        }
        assert!(matches!(Dictionary::monomial(30, 6), Err(Error::DegreeOverflow(_))));
    }

    #[test]
    fn monomials_match_brute_force_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = Dictionary::monomial(4, 3).unwrap();
        let z = d.eval(&x).unwrap();
        for k in 0..d.output_dim() {
            let label = d.monomial_label(k).unwrap();
            let expect: f64 = label.iter().map(|&i| x[i]).product();
            assert!((z[k] - expect).abs() < 1e-12);
        }
        // graded, then lexicographic in the sorted index tuple
        for k in 1..d.output_dim() {
            let (a, b) = (d.monomial_label(k - 1).unwrap(), d.monomial_label(k).unwrap());
            assert!(a.len() < b.len() || (a.len() == b.len() && a < b));
        }
    }

    #[test]
    fn se3_blocks() {
        let w = Vector3::new(0.0, 0.0, 1.0);
        let z = se3_lift(&Vector3::zeros(), &Vector3::zeros(), &Matrix3::identity(), &w, 2);
        let wh = hat(&w);
        assert_eq!(z.rows(18, 9).as_slice(), &vec9(&wh));
        assert_eq!(z.rows(27, 9).as_slice(), &vec9(&(wh * wh)));
        assert_eq!(Dictionary::se3(4).unwrap().output_dim(), 54);
        let z0 = se3_lift(&Vector3::new(1.0, 2.0, 3.0), &Vector3::zeros(), &exp_so3(&Vector3::new(0.1, 0.2, 0.3)).into_inner(), &Vector3::zeros(), 4);
        assert!(z0.rows(18, 36).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se3_degree_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = exp_so3(&Vector3::new(rng.random_range(-1.0..1.0), 0.3, -0.2)).into_inner();
        let w = Vector3::new(0.4, -0.7, 0.2);
        let z1 = se3_lift(&Vector3::zeros(), &Vector3::zeros(), &r, &w, 4);
        let z2 = se3_lift(&Vector3::zeros(), &Vector3::zeros(), &r, &(w * 2.0), 4);
        for j in 1..=4 {
            let a = z1.rows(18 + 9 * (j - 1), 9) * 2f64.powi(j as i32);
            let b = z2.rows(18 + 9 * (j - 1), 9);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn standardizer_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = DMatrix::<f64>::from_fn(4, 300, |_, _| rng.random_range(-5.0..20.0));
        for j in 0..300 {
            m[(0, j)] = 1.0;
            m[(3, j)] = 7.5;
        }
        let s = Standardizer::fit(&m, &[0]).unwrap();
        let z = s.apply(&m);
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 300]);
        assert!(s.is_floored(3));
        assert!(z.row(3).amax() < 1e-6);
        for i in 1..3 {
            let mean = z.row(i).mean();
            let std = (z.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((std - 1.0).abs() < 1e-6);
        }
        assert!((s.invert(&z) - &m).amax() < 1e-10);
        assert!(Standardizer::fit(&DMatrix::<f64>::zeros(3, 1), &[]).is_err());
    }

    #[test]
    fn dimension_checks_and_descriptor() {
        let d = Dictionary::monomial(6, 2).unwrap();
        assert!(d.eval(&[0.0f64; 5]).is_err());
        let desc = d.descriptor();
        let json = serde_json::to_string(&desc).unwrap();
        let back: DictionaryDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, desc);
        assert_eq!(Dictionary::from_kind(back.kind).unwrap(), d);
        let id = Dictionary::identity(3);
        assert_eq!(id.eval(&[1.0, 2.0, 3.0]).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn f32_lift() {
        let z = monomial_lift(&[0.5f32, -1.0], 3).unwrap();
        assert_eq!(z.len(), 10);
        assert_eq!(z[9], -1.0);
    }
}

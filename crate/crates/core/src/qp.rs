//! Dense strictly convex QP, `min ½uᵀHu + gᵀu  s.t.  A u ≤ b`, solved with the
//! Goldfarb–Idnani dual active-set method (QuadProg++ layout: `J = L⁻ᵀ`
//! updated by Givens rotations alongside the triangular factor `R`).

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Real> {
    pub h: DMatrix<T>,
    pub g: DVector<T>,
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real> {
    pub u: DVector<T>,
    /// Multipliers for every constraint row (zero when inactive).
    pub lambda: DVector<T>,
    pub active_set: Vec<usize>,
    pub objective: T,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// `H` was shifted by `δI` because it was numerically semidefinite.
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct QpOptions {
    /// Active-set changes allowed; `None` means `10·c + 50`.
    pub max_iter: Option<usize>,
}


impl<T: Real> QpProblem<T> {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, u: &DVector<T>) -> T {
        (u.transpose() * &self.h * u)[(0, 0)] * lit::<T>(0.5) + self.g.dot(u)
    }

    /// Largest `A u − b` entry (zero if feasible).
    pub fn max_violation(&self, u: &DVector<T>) -> f64 {
        if self.b.is_empty() {
            return 0.0;
        }
        let r = &self.a * u - &self.b;
        r.iter().map(|v| to_f64(*v)).fold(0.0, f64::max)
    }

    /// Appends `lo ≤ A u` rows by negation.
    pub fn push_lower_bounds(&mut self, a: &DMatrix<T>, lo: &DVector<T>) {
        let c = self.a.nrows();
        let mut big = DMatrix::zeros(c + a.nrows(), self.n());
        big.rows_mut(0, c).copy_from(&self.a);
        big.rows_mut(c, a.nrows()).copy_from(&(-a));
        let mut b = DVector::zeros(c + lo.len());
        b.rows_mut(0, c).copy_from(&self.b);
        b.rows_mut(c, lo.len()).copy_from(&(-lo));
        self.a = big;
        self.b = b;
    }
}

/// Max of the stationarity, primal, dual and complementarity residuals.
pub fn kkt_residual<T: Real>(p: &QpProblem<T>, u: &DVector<T>, lambda: &DVector<T>) -> f64 {
    let mut grad = &p.h * u + &p.g;
    if p.n_constraints() > 0 {
        grad += p.a.transpose() * lambda;
    }
    let stat = to_f64(grad.amax());
    let primal = p.max_violation(u);
    let dual = lambda.iter().map(|l| -to_f64(*l)).fold(0.0, f64::max);
    let comp = if p.n_constraints() > 0 {
        let slack = &p.a * u - &p.b;
        slack.iter().zip(lambda.iter()).map(|(s, l)| (to_f64(*s) * to_f64(*l)).abs()).fold(0.0, f64::max)
    } else {
        0.0
    };
    stat.max(primal).max(dual).max(comp)
}

fn distance<T: Real>(a: T, b: T) -> T {
    let (a1, b1) = (a.abs(), b.abs());
    if a1 > b1 {
        let t = b1 / a1;
        a1 * (T::one() + t * t).sqrt()
    } else if b1 > a1 {
        let t = a1 / b1;
        b1 * (T::one() + t * t).sqrt()
    } else {
        a1 * lit::<T>(std::f64::consts::SQRT_2)
    }
}

/// Smallest eigenvalue estimate by inverse power iteration on a Cholesky factor.
fn min_eigenvalue<T: Real>(chol: &nalgebra::Cholesky<T, nalgebra::Dyn>, n: usize) -> f64 {
    let mut v = DVector::<T>::from_fn(n, |i, _| lit(1.0 + 0.1 * (i % 7) as f64));
    v /= v.norm();
    let mut mu = 0.0;
    for _ in 0..30 {
        let w = chol.solve(&v);
        let nrm = to_f64(w.norm());
        if !(nrm > 0.0 && nrm.is_finite()) {
            return 0.0;
        }
        mu = nrm;
        v = w / lit::<T>(nrm);
    }
    1.0 / mu
}

struct Factor<T: Real> {
    n: usize,
    j: DMatrix<T>,
    r: DMatrix<T>,
    r_norm: T,
}

impl<T: Real> Factor<T> {
    fn add_constraint(&mut self, d: &mut DVector<T>, iq: &mut usize) -> bool {
        let n = self.n;
        let eps = T::default_epsilon();
        for jj in ((*iq + 1)..n).rev() {
            let mut cc = d[jj - 1];
            let mut ss = d[jj];
            let h = distance(cc, ss);
            if h.abs() < eps {
                continue;
            }
            d[jj] = T::zero();
            ss /= h;
            cc /= h;
            if cc < T::zero() {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (T::one() + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jj)] = xny * (t1 + self.j[(k, jj - 1)]) - t2;
            }
        }
        *iq += 1;
        for i in 0..*iq {
            self.r[(i, *iq - 1)] = d[i];
        }
        if d[*iq - 1].abs() <= eps * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[*iq - 1].abs());
        true
    }

    fn delete_constraint(&mut self, active: &mut [usize], u: &mut DVector<T>, iq: &mut usize, l: usize) {
        let n = self.n;
        let eps = T::default_epsilon();
        let qq = match active[..*iq].iter().position(|&a| a == l) {
            Some(q) => q,
            None => return,
        };
        for i in qq..*iq - 1 {
            active[i] = active[i + 1];
            u[i] = u[i + 1];
            for jj in 0..n {
                self.r[(jj, i)] = self.r[(jj, i + 1)];
            }
        }
        active[*iq - 1] = active[*iq];
        u[*iq - 1] = u[*iq];
        active[*iq] = 0;
        u[*iq] = T::zero();
        for jj in 0..*iq {
            self.r[(jj, *iq - 1)] = T::zero();
        }
        *iq -= 1;
        if *iq == 0 {
            return;
        }
        for jj in qq..*iq {
            let mut cc = self.r[(jj, jj)];
            let mut ss = self.r[(jj + 1, jj)];
            let h = distance(cc, ss);
            if h.abs() < eps {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = T::zero();
            if cc < T::zero() {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (T::one() + cc);
            for k in (jj + 1)..*iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = xny * (t1 + self.r[(jj, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = t1 * cc + t2 * ss;
                self.j[(k, jj + 1)] = xny * (self.j[(k, jj)] + t1) - t2;
            }
        }
    }
}

pub fn solve<T: Real>(p: &QpProblem<T>, opts: &QpOptions) -> QpSolution<T> {
    solve_warm(p, opts, &[])
}

/// Solves `p`; constraints listed in `warm` are tried first whenever violated.
pub fn solve_warm<T: Real>(p: &QpProblem<T>, opts: &QpOptions, warm: &[usize]) -> QpSolution<T> {
    let n = p.n();
    let m = p.n_constraints();
    let max_iter = opts.max_iter.unwrap_or(10 * m + 50);

    let mut h = (&p.h + p.h.transpose()) * lit::<T>(0.5);
    let mut regularized = false;
    let chol = match h.clone().cholesky() {
        Some(c) if min_eigenvalue(&c, n) >= 1e-10 => c,
        _ => {
            let delta = to_f64(h.trace()).abs().max(1.0) * 1e-9 / n.max(1) as f64;
            for i in 0..n {
                h[(i, i)] += lit(delta);
            }
            regularized = true;
            match h.clone().cholesky() {
                Some(c) => c,
                None => return failed(p, QpStatus::Infeasible, regularized),
            }
        }
    };
    let l = chol.l();
    let linv = l.clone().solve_lower_triangular(&DMatrix::identity(n, n)).unwrap_or_else(|| DMatrix::identity(n, n));
    let mut f = Factor { n, j: linv.transpose(), r: DMatrix::zeros(n, n), r_norm: T::one() };

    // unconstrained minimum
    let mut x = -(&f.j * (f.j.transpose() * &p.g));
    let mut iq = 0usize;
    let mut active = vec![0usize; n + 1];
    let mut u = DVector::<T>::zeros(n + 1);
    let mut excluded = vec![false; m];
    let mut is_active = vec![false; m];
    let mut in_warm = vec![false; m];
    for &w in warm {
        if w < m {
            in_warm[w] = true;
        }
    }
    let mut iterations = 0usize;
    let mut d = DVector::<T>::zeros(n);
    let mut z = DVector::<T>::zeros(n);
    let mut r = DVector::<T>::zeros(n);
    let bscale: Vec<T> = p.b.iter().map(|b| T::one().max(b.abs())).collect();
    let feas_tol: T = lit(1e-12);

    let row = |i: usize| -> DVector<T> { -(p.a.row(i).transpose()) };
    let slack = |i: usize, x: &DVector<T>| -> T { p.b[i] - p.a.row(i).dot(&x.transpose()) };

    let status = 'outer: loop {
        // choose the constraint to add: warm-start members first, then the most violated
        let mut ip = None;
        let mut best = T::zero();
        let mut best_warm = T::zero();
        let mut ip_warm = None;
        for i in 0..m {
            if is_active[i] || excluded[i] {
                continue;
            }
            let s = slack(i, &x) / bscale[i];
            if s < -feas_tol {
                if s < best {
                    best = s;
                    ip = Some(i);
                }
                if in_warm[i] && s < best_warm {
                    best_warm = s;
                    ip_warm = Some(i);
                }
            }
        }
        let Some(ip) = ip_warm.or(ip) else {
            break QpStatus::Optimal;
        };
        if iterations >= max_iter {
            break QpStatus::MaxIter;
        }
        iterations += 1;
        let x_old = x.clone();
        let u_old = u.clone();
        let a_old = active.clone();
        let iq_old = iq;
        let np = row(ip);
        let mut s_p = slack(ip, &x);
        active[iq] = ip;
        u[iq] = T::zero();

        loop {
            // step direction in primal (z) and dual (r) space
            d.copy_from(&(f.j.transpose() * &np));
            z.fill(T::zero());
            for k in iq..n {
                for i in 0..n {
                    z[i] += f.j[(i, k)] * d[k];
                }
            }
            for i in (0..iq).rev() {
                let mut sum = T::zero();
                for k in (i + 1)..iq {
                    sum += f.r[(i, k)] * r[k];
                }
                r[i] = (d[i] - sum) / f.r[(i, i)];
            }
            let mut t1 = T::max_value().unwrap();
            let mut l_drop = None;
            for k in 0..iq {
                if r[k] > T::zero() {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        l_drop = Some(active[k]);
                    }
                }
            }
            let zz = z.dot(&z);
            let t2 = if zz.abs() > T::default_epsilon() {
                -s_p / z.dot(&np)
            } else {
                T::max_value().unwrap()
            };
            let t = t1.min(t2);
            if t >= T::max_value().unwrap() {
                break 'outer QpStatus::Infeasible;
            }
            if t2 >= T::max_value().unwrap() {
                // dual step only
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                let l = l_drop.unwrap();
                is_active[l] = false;
                f.delete_constraint(&mut active, &mut u, &mut iq, l);
                iterations += 1;
                if iterations > max_iter {
                    break 'outer QpStatus::MaxIter;
                }
                continue;
            }
            x += &z * t;
            for k in 0..iq {
                u[k] -= t * r[k];
            }
            u[iq] += t;
            if (t - t2).abs() <= T::default_epsilon() * t2.abs().max(T::one()) || l_drop.is_none() || t2 <= t1 {
                // full step: constraint ip joins the active set
                if f.add_constraint(&mut d, &mut iq) {
                    is_active[ip] = true;
                } else {
                    excluded[ip] = true;
                    // restore the state before this constraint was tried
                    x = x_old;
                    u = u_old;
                    active = a_old;
                    is_active.iter_mut().for_each(|a| *a = false);
                    iq = 0;
                    f = Factor { n, j: linv.transpose(), r: DMatrix::zeros(n, n), r_norm: T::one() };
                    for k in 0..iq_old {
                        let c = active[k];
                        let mut dk = f.j.transpose() * row(c);
                        if f.add_constraint(&mut dk, &mut iq) {
                            is_active[c] = true;
                        }
                    }
                }
                break;
            }
            // partial step: drop the blocking constraint and keep pushing ip
            let l = l_drop.unwrap();
            is_active[l] = false;
            f.delete_constraint(&mut active, &mut u, &mut iq, l);
            s_p = slack(ip, &x);
            iterations += 1;
            if iterations > max_iter {
                break 'outer QpStatus::MaxIter;
            }
        }
    };

    let mut lambda = DVector::<T>::zeros(m);
    let mut act: Vec<usize> = Vec::with_capacity(iq);
    for k in 0..iq {
        lambda[active[k]] = u[k];
        act.push(active[k]);
    }
    act.sort_unstable();
    let objective = p.objective(&x);
    let kkt = kkt_residual(p, &x, &lambda);
    QpSolution { u: x, lambda, active_set: act, objective, kkt_residual: kkt, iterations, status, regularized }
}

fn failed<T: Real>(p: &QpProblem<T>, status: QpStatus, regularized: bool) -> QpSolution<T> {
    QpSolution {
        u: DVector::zeros(p.n()),
        lambda: DVector::zeros(p.n_constraints()),
        active_set: Vec::new(),
        objective: T::zero(),
        kkt_residual: f64::INFINITY,
        iterations: 0,
        status,
        regularized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> QpProblem<f64> {
        let n = g.len();
        QpProblem { h, g, a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    /// Exhaustive enumeration of active sets; returns the feasible KKT point.
    fn enumerate(p: &QpProblem<f64>) -> Option<DVector<f64>> {
        let n = p.n();
        let c = p.n_constraints();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << c) {
            let s: Vec<usize> = (0..c).filter(|i| mask & (1 << i) != 0).collect();
            let k = s.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&p.g));
            for (j, &i) in s.iter().enumerate() {
                for col in 0..n {
                    kkt[(n + j, col)] = p.a[(i, col)];
                    kkt[(col, n + j)] = p.a[(i, col)];
                }
                rhs[n + j] = p.b[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let u = sol.rows(0, n).into_owned();
            let lam = sol.rows(n, k);
            if lam.iter().any(|&l| l < -1e-9) || p.max_violation(&u) > 1e-9 {
                continue;
            }
            let obj = p.objective(&u);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, u));
            }
        }
        best.map(|b| b.1)
    }

    fn random_qp(rng: &mut ChaCha8Rng, n: usize, c: usize) -> QpProblem<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let a = DMatrix::from_fn(c, n, |_, _| rng.random_range(-1.0..1.0));
        let xf = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * xf + DVector::from_fn(c, |_, _| rng.random_range(0.0..0.5));
        QpProblem { h, g, a, b }
    }

    #[test]
    fn unconstrained_example() {
        let p = unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]));
        let s = solve(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u.clone() - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-14);
        assert!((s.objective + 1.0).abs() < 1e-14);
        let grad = (&p.h * &s.u + &p.g).amax();
        assert_eq!(kkt_residual(&p, &s.u, &s.lambda), grad);
    }

    #[test]
    fn hand_kkt_example() {
        let p: QpProblem<f64> = QpProblem {
            h: DMatrix::identity(2, 2),
            g: DVector::from_vec(vec![-2.0, 0.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            b: DVector::from_vec(vec![1.0]),
        };
        let s = solve(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.u.clone() - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-14);
        assert!((s.lambda[0] - 1.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!(s.kkt_residual < 1e-10);
        let bumped = s.u.add_scalar(0.01);
        assert!(kkt_residual(&p, &bumped, &s.lambda) > 1e-3);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let c = rng.random_range(0..=8);
            let p = random_qp(&mut rng, n, c);
            let s = solve(&p, &QpOptions::default());
            assert_eq!(s.status, QpStatus::Optimal);
            assert!(s.kkt_residual < 1e-7, "kkt {}", s.kkt_residual);
            let oracle = enumerate(&p).unwrap();
            assert!((&s.u - oracle).amax() < 1e-6);
        }
    }

    #[test]
    fn infeasible_detected() {
        // u ≤ −1 and −u ≤ −1
        let p: QpProblem<f64> = QpProblem {
            h: DMatrix::identity(1, 1),
            g: DVector::zeros(1),
            a: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            b: DVector::from_vec(vec![-1.0, -1.0]),
        };
        assert_eq!(solve(&p, &QpOptions::default()).status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_start_reproduces_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p = random_qp(&mut rng, 5, 8);
            let cold = solve(&p, &QpOptions::default());
            let warm = solve_warm(&p, &QpOptions::default(), &cold.active_set);
            assert_eq!(cold.active_set, warm.active_set);
            assert!((&cold.u - &warm.u).amax() < 1e-10);
        }
    }

    #[test]
    fn scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_qp(&mut rng, 4, 6);
        let mut q = p.clone();
        q.h *= 37.0;
        q.g *= 37.0;
        let a = solve(&p, &QpOptions::default()).u;
        let b = solve(&q, &QpOptions::default()).u;
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn semidefinite_hessian_is_regularized() {
        let p: QpProblem<f64> = QpProblem {
            h: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            g: DVector::from_vec(vec![-1.0, 0.0]),
            a: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            b: DVector::from_vec(vec![1.0]),
        };
        let s = solve(&p, &QpOptions::default());
        assert!(s.regularized);
        assert!((s.u[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut p = random_qp(&mut rng, 3, 8);
        p.g *= 100.0;
        let s = solve(&p, &QpOptions { max_iter: Some(0) });
        if s.status != QpStatus::Optimal {
            assert_eq!(s.status, QpStatus::MaxIter);
        }
    }
}

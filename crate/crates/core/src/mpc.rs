//! Receding-horizon force controller: condensed QP over stacked stance forces
//! with template, residual-corrected, or SE(3)-lifted prediction.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::edmdc::LiftedModel;
use crate::error::{Error, Result};
use crate::footstep::PlanarCommand;
use crate::gait::{ContactSchedule, Stage};
use crate::geom::{euler_to_rot, orthogonality_error, project_so3, unvec9, vec9, EulerZyx};
use crate::lifting::{se3_lift, DictKind, SE3_INPUT_DIM};
use crate::nominal::{build_ltv, predict_full, LtvMatrices, TemplateState, NX, ONE, P, THETA, V, W};
use crate::plant::{PlantState, SrbParams, N_FEET};
use crate::qp::{solve_warm, QpOptions, QpProblem, QpSolution, QpStatus};
use crate::residual::{ResidualModel, N_RES, N_U};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcWeights {
    pub q: [f64; NX],
    pub r_per_foot: [f64; 3],
    pub q_f: [f64; NX],
}

impl Default for MpcWeights {
    fn default() -> Self {
        let q = [1.0, 1.0, 200.0, 30.0, 30.0, 1.0, 20.0, 20.0, 20.0, 1.0, 1.0, 1.0, 0.0];
        Self { q, r_per_foot: [1e-5, 1e-5, 1e-6], q_f: q }
    }
}

impl MpcWeights {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().chain(&self.q_f).any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("state weights must be finite and nonnegative".into()));
        }
        if self.r_per_foot.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("force weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    RkMpc,
    NominalMpc,
    Se3Kmpc,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::RkMpc => "rkmpc",
            Variant::NominalMpc => "nominalmpc",
            Variant::Se3Kmpc => "se3kmpc",
        }
    }

    pub fn by_name(s: &str) -> Result<Self> {
        match s {
            "rkmpc" => Ok(Variant::RkMpc),
            "nominalmpc" | "nominal" => Ok(Variant::NominalMpc),
            "se3kmpc" | "se3" => Ok(Variant::Se3Kmpc),
            _ => Err(Error::Config(format!("unknown controller variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub mu: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub variant: Variant,
    /// Re-project the SE(3) controller's internal attitude onto SO(3) each tick.
    pub se3_project: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 8, dt: 0.01, mu: 0.5, f_min: 0.0, f_max: 180.0, variant: Variant::RkMpc, se3_project: false }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParameter("mu must be positive".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max) {
            return Err(Error::InvalidParameter("need 0 <= f_min < f_max".into()));
        }
        Ok(())
    }
}

/// `A_μ f ≤ b_μ` for one stance foot.
pub fn friction_pyramid(mu: f64, f_min: f64, f_max: f64) -> (DMatrix<f64>, DVector<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 3, &[
        -1.0, 0.0, -mu,
        1.0, 0.0, -mu,
        0.0, -1.0, -mu,
        0.0, 1.0, -mu,
        0.0, 0.0, -1.0,
        0.0, 0.0, 1.0,
    ]);
    let b = DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.0, -f_min, f_max]);
    (a, b)
}

/// Largest pyramid violation over the stance feet of a full force vector.
pub fn pyramid_violation(forces: &[Vector3<f64>; N_FEET], stance: &[bool; N_FEET], mu: f64, f_min: f64, f_max: f64) -> f64 {
    let (a, b) = friction_pyramid(mu, f_min, f_max);
    let mut worst: f64 = 0.0;
    for leg in 0..N_FEET {
        if !stance[leg] {
            worst = worst.max(forces[leg].norm());
            continue;
        }
        let r = &a * DVector::from_column_slice(forces[leg].as_slice()) - &b;
        worst = worst.max(r.max());
    }
    worst
}

/// Predictor used inside the horizon.
#[derive(Debug, Clone)]
pub enum Predictor {
    Nominal,
    Residual(ResidualModel<f64>),
    Se3(LiftedModel<f64>),
}

impl Predictor {
    pub fn for_variant(variant: Variant, residual: Option<ResidualModel<f64>>, se3: Option<LiftedModel<f64>>) -> Result<Self> {
        match variant {
            Variant::NominalMpc => Ok(Predictor::Nominal),
            Variant::RkMpc => residual.map(Predictor::Residual).ok_or(Error::ModelMissing("residual")),
            Variant::Se3Kmpc => {
                let m = se3.ok_or(Error::ModelMissing("se3"))?;
                if !matches!(m.dictionary.kind, DictKind::Se3 { .. }) || m.m() != N_U {
                    return Err(Error::ModelMissing("se3"));
                }
                Ok(Predictor::Se3(m))
            }
        }
    }

    fn variant(&self) -> Variant {
        match self {
            Predictor::Nominal => Variant::NominalMpc,
            Predictor::Residual(_) => Variant::RkMpc,
            Predictor::Se3(_) => Variant::Se3Kmpc,
        }
    }
}

/// Initial condition of the horizon: template state plus the lifted state the
/// predictor needs (`ψ(e)` for the residual model, the SE(3) lift otherwise).
#[derive(Debug, Clone)]
pub struct HorizonStart<'a> {
    pub x0: &'a TemplateState<f64>,
    pub z0: Option<&'a DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Horizon {
    pub qp: QpProblem<f64>,
    /// First decision column and stance legs of each stage.
    pub stage_cols: Vec<(usize, Vec<usize>)>,
}

impl Horizon {
    /// Stage `i` forces from a decision vector, zero for swing legs.
    pub fn stage_forces(&self, u: &DVector<f64>, i: usize) -> [Vector3<f64>; N_FEET] {
        let mut f = [Vector3::zeros(); N_FEET];
        let (col, legs) = &self.stage_cols[i];
        for (j, &leg) in legs.iter().enumerate() {
            f[leg] = Vector3::new(u[col + 3 * j], u[col + 3 * j + 1], u[col + 3 * j + 2]);
        }
        f
    }
}

fn stage_ltv(stage: &Stage, yaw: f64, params: &SrbParams<f64>, dt: f64) -> Result<LtvMatrices<f64>> {
    if stage.n_stance() > 0 {
        build_ltv(yaw, &stage.moment_arms, &stage.stance, params, dt)
    } else {
        let mut m = build_ltv(yaw, &stage.moment_arms, &[true; N_FEET], params, dt)?;
        m.b = DMatrix::zeros(NX, 0);
        m.stance.clear();
        Ok(m)
    }
}

/// Condenses the horizon into `min ½UᵀHU + gᵀU s.t. A U ≤ b`.
pub fn build_horizon(
    start: &HorizonStart,
    schedule: &ContactSchedule,
    refs: &[TemplateState<f64>],
    weights: &MpcWeights,
    config: &MpcConfig,
    params: &SrbParams<f64>,
    predictor: &Predictor,
) -> Result<Horizon> {
    let n = config.horizon;
    if schedule.stages.len() != n {
        return Err(Error::ScheduleMismatch { expected: n, got: schedule.stages.len() });
    }
    if refs.len() != n + 1 {
        return Err(Error::ScheduleMismatch { expected: n + 1, got: refs.len() });
    }
    if predictor.variant() != config.variant {
        return Err(Error::ModelMissing(config.variant.name()));
    }
    let mut stage_cols = Vec::with_capacity(n);
    let mut nu = 0;
    for st in &schedule.stages {
        let legs: Vec<usize> = (0..N_FEET).filter(|&l| st.stance[l]).collect();
        stage_cols.push((nu, legs.clone()));
        nu += 3 * legs.len();
    }

    let mut h = DMatrix::<f64>::zeros(nu, nu);
    let mut g = DVector::<f64>::zeros(nu);
    for (col, legs) in &stage_cols {
        for j in 0..legs.len() {
            for k in 0..3 {
                h[(col + 3 * j + k, col + 3 * j + k)] += weights.r_per_foot[k];
            }
        }
    }
    // cost: add Gᵀ W G and Gᵀ W (F − target) for the weighted rows of one stage
    let mut add_cost = |f: &DVector<f64>, gm: &DMatrix<f64>, rows: &[(usize, f64, f64)]| {
        for &(r, w, target) in rows {
            if w == 0.0 {
                continue;
            }
            let row = gm.row(r);
            h.ger(w, &row.transpose(), &row.transpose(), 1.0);
            g.axpy(w * (f[r] - target), &row.transpose(), 1.0);
        }
    };

    match predictor {
        Predictor::Nominal | Predictor::Residual(_) => {
            let res = match predictor {
                Predictor::Residual(m) => Some(m),
                _ => None,
            };
            let q = res.map_or(0, |m| m.q());
            let mut fx = start.x0.as_dvector();
            fx[ONE] = 1.0;
            let mut gx = DMatrix::<f64>::zeros(NX, nu);
            let (mut fz, mut gz) = match res {
                Some(m) => {
                    let z0 = start.z0.cloned().unwrap_or_else(|| m.cold_start());
                    if z0.len() != q {
                        return Err(Error::DimensionMismatch { what: "lifted residual", expected: q, got: z0.len() });
                    }
                    (z0, DMatrix::<f64>::zeros(q, nu))
                }
                None => (DVector::zeros(0), DMatrix::zeros(0, nu)),
            };
            for (i, st) in schedule.stages.iter().enumerate() {
                let mats = stage_ltv(st, refs[i].yaw(), params, config.dt)?;
                let (col, legs) = &stage_cols[i];
                let mut nfx = &mats.a * &fx;
                let mut ngx = &mats.a * &gx;
                if !legs.is_empty() {
                    let mut blk = ngx.columns_mut(*col, 3 * legs.len());
                    blk += &mats.b;
                }
                if let Some(m) = res {
                    let lm = &m.lifted;
                    fz = &lm.a * &fz + &lm.offset;
                    gz = &lm.a * &gz;
                    for (j, &leg) in legs.iter().enumerate() {
                        let mut blk = gz.columns_mut(col + 3 * j, 3);
                        blk += lm.b.columns(3 * leg, 3);
                    }
                    let c = m.c();
                    let e_f = c * &fz + lm.c_offset.as_ref().expect("residual output offset");
                    let e_g = c * &gz;
                    for r in 0..N_RES {
                        nfx[V + r] += e_f[r];
                        let mut row = ngx.row_mut(V + r);
                        row += e_g.row(r);
                    }
                }
                nfx[ONE] = 1.0;
                fx = nfx;
                gx = ngx;
                let w = if i + 1 == n { &weights.q_f } else { &weights.q };
                let target = &refs[i + 1].0;
                let rows: Vec<(usize, f64, f64)> = (0..NX).map(|r| (r, w[r], target[r])).collect();
                add_cost(&fx, &gx, &rows);
            }
        }
        Predictor::Se3(model) => {
            let z0 = start.z0.ok_or(Error::ModelMissing("se3 lifted state"))?;
            if z0.len() != model.q() {
                return Err(Error::DimensionMismatch { what: "se3 lifted state", expected: model.q(), got: z0.len() });
            }
            let mut fz = z0.clone();
            let mut gz = DMatrix::<f64>::zeros(model.q(), nu);
            for (i, _) in schedule.stages.iter().enumerate() {
                let (col, legs) = &stage_cols[i];
                fz = &model.a * &fz + &model.offset;
                gz = &model.a * &gz;
                for (j, &leg) in legs.iter().enumerate() {
                    let mut blk = gz.columns_mut(col + 3 * j, 3);
                    blk += model.b.columns(3 * leg, 3);
                }
                let w = if i + 1 == n { &weights.q_f } else { &weights.q };
                add_cost(&fz, &gz, &se3_cost_rows(w, &refs[i + 1])?);
            }
        }
    }

    let (a_mu, b_mu) = friction_pyramid(config.mu, config.f_min, config.f_max);
    let n_rows: usize = stage_cols.iter().map(|(_, l)| 6 * l.len()).sum();
    let mut a = DMatrix::<f64>::zeros(n_rows, nu);
    let mut b = DVector::<f64>::zeros(n_rows);
    let mut r = 0;
    for (col, legs) in &stage_cols {
        for j in 0..legs.len() {
            a.view_mut((r, col + 3 * j), (6, 3)).copy_from(&a_mu);
            b.rows_mut(r, 6).copy_from(&b_mu);
            r += 6;
        }
    }
    debug_assert!(h.clone().symmetric_eigenvalues().min() > 0.0 || nu == 0);
    Ok(Horizon { qp: QpProblem { h, g, a, b }, stage_cols })
}

/// Cost rows on the SE(3) lift `[p, v, vec(R), ω_body, …]`.
fn se3_cost_rows(w: &[f64; NX], reference: &TemplateState<f64>) -> Result<Vec<(usize, f64, f64)>> {
    let th = reference.theta();
    let r_star = *euler_to_rot(&EulerZyx::new(th[0], th[1], th[2])?).matrix();
    let w_body = r_star.transpose() * reference.omega();
    let w_att = (w[THETA] + w[THETA + 1] + w[THETA + 2]) / 3.0;
    let vr = vec9(&r_star);
    let mut rows = Vec::with_capacity(SE3_INPUT_DIM);
    for k in 0..3 {
        rows.push((k, w[P + k], reference.p()[k]));
        rows.push((3 + k, w[V + k], reference.v()[k]));
        rows.push((15 + k, w[W + k], w_body[k]));
    }
    for k in 0..9 {
        rows.push((6 + k, w_att, vr[k]));
    }
    Ok(rows)
}

/// Planar-command reference from the current pose: unicycle integration of
/// `(v_x, v_y, ω_z)`, height at `stand_height`, zero roll and pitch.
pub fn make_reference(cmd: &PlanarCommand, x: &TemplateState<f64>, n: usize, dt: f64, stand_height: f64) -> Vec<TemplateState<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    let mut px = x.p()[0];
    let mut py = x.p()[1];
    let mut yaw = x.yaw();
    for i in 0..=n {
        if i > 0 {
            let y1 = yaw + cmd.omega_z * dt;
            let (ic, is) = if cmd.omega_z.abs() > 1e-12 {
                ((y1.sin() - yaw.sin()) / cmd.omega_z, (yaw.cos() - y1.cos()) / cmd.omega_z)
            } else {
                (yaw.cos() * dt, yaw.sin() * dt)
            };
            px += cmd.v_x * ic - cmd.v_y * is;
            py += cmd.v_x * is + cmd.v_y * ic;
            yaw = y1;
        }
        let (s, c) = yaw.sin_cos();
        let v = Vector3::new(c * cmd.v_x - s * cmd.v_y, s * cmd.v_x + c * cmd.v_y, 0.0);
        out.push(TemplateState::new(
            Vector3::new(px, py, stand_height),
            Vector3::new(0.0, 0.0, yaw),
            v,
            Vector3::new(0.0, 0.0, cmd.omega_z),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: String,
    pub iterations: usize,
    pub n_vars: usize,
    pub n_constraints: usize,
    pub kkt_residual: f64,
    pub fallback: bool,
    pub solve_ms: f64,
    /// `‖R̂ᵀR̂ − I‖_F` of the SE(3) controller's internal attitude.
    pub attitude_orthogonality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub forces: [Vector3<f64>; N_FEET],
    pub diagnostics: StepDiagnostics,
    /// Full decision vector of the last successful solve.
    pub plan: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
struct LastStep {
    x: TemplateState<f64>,
    u: DVector<f64>,
    stance: [bool; N_FEET],
    arms: [Vector3<f64>; N_FEET],
}

pub struct MpcController {
    pub config: MpcConfig,
    pub weights: MpcWeights,
    pub params: SrbParams<f64>,
    predictor: Predictor,
    warm: Vec<usize>,
    last: Option<LastStep>,
    r_hat: Option<Matrix3<f64>>,
}

impl MpcController {
    pub fn new(config: MpcConfig, weights: MpcWeights, params: SrbParams<f64>, predictor: Predictor) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if predictor.variant() != config.variant {
            return Err(Error::ModelMissing(config.variant.name()));
        }
        Ok(Self { config, weights, params, predictor, warm: Vec::new(), last: None, r_hat: None })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn reset(&mut self) {
        self.warm.clear();
        self.last = None;
        self.r_hat = None;
    }

    /// Lifted residual from the newest observed transition (cold start otherwise).
    fn residual_state(&self, model: &ResidualModel<f64>, x: &TemplateState<f64>) -> Result<DVector<f64>> {
        let Some(last) = &self.last else {
            return Ok(model.cold_start());
        };
        let pred = predict_full(&last.x, last.u.as_slice(), &last.arms, &last.stance, &self.params, self.config.dt)?;
        let e = (x.0 - pred.0).fixed_rows::<N_RES>(V).into_owned();
        Ok(model.lift(&e))
    }

    fn se3_state(&mut self, model: &LiftedModel<f64>, state: &PlantState<f64>) -> DVector<f64> {
        let degree = match model.dictionary.kind {
            DictKind::Se3 { degree } => degree,
            _ => 0,
        };
        let r_hat = *self.r_hat.get_or_insert(*state.r.matrix());
        let w_body = state.r.matrix().transpose() * state.omega;
        se3_lift(&state.p, &state.v, &r_hat, &w_body, degree)
    }

    /// One control tick: returns first-stage forces (zero on swing legs).
    pub fn solve_step(
        &mut self,
        state: &PlantState<f64>,
        x: &TemplateState<f64>,
        schedule: &ContactSchedule,
        refs: &[TemplateState<f64>],
    ) -> Result<StepOutput> {
        let t0 = Instant::now();
        let z0 = match &self.predictor {
            Predictor::Nominal => None,
            Predictor::Residual(m) => Some(self.residual_state(m, x)?),
            Predictor::Se3(m) => {
                let m = m.clone();
                Some(self.se3_state(&m, state))
            }
        };
        let start = HorizonStart { x0: x, z0: z0.as_ref() };
        let hz = build_horizon(&start, schedule, refs, &self.weights, &self.config, &self.params, &self.predictor)?;
        let sol: QpSolution<f64> = solve_warm(&hz.qp, &QpOptions::default(), &self.warm);
        let stage0 = &schedule.stages[0];
        let (forces, fallback, plan) = match sol.status {
            QpStatus::Optimal => {
                self.warm = sol.active_set.clone();
                (hz.stage_forces(&sol.u, 0), false, Some(sol.u.clone()))
            }
            _ => {
                self.warm.clear();
                (self.fallback_forces(stage0), true, None)
            }
        };
        let u_full = DVector::from_iterator(N_U, forces.iter().flat_map(|f| f.iter().copied()));

        let mut orth = None;
        if let (Predictor::Se3(m), Some(z)) = (&self.predictor, &z0) {
            let zn = m.step(z, &u_full);
            let mut r = unvec9(&zn.as_slice()[6..15]);
            if self.config.se3_project {
                r = project_so3(&r).map(|p| *p.matrix()).unwrap_or(r);
            }
            orth = Some(orthogonality_error(&r));
            self.r_hat = Some(r);
        }
        self.last = Some(LastStep { x: x.clone(), u: u_full, stance: stage0.stance, arms: stage0.moment_arms });
        let diagnostics = StepDiagnostics {
            status: format!("{:?}", sol.status),
            iterations: sol.iterations,
            n_vars: hz.qp.n(),
            n_constraints: hz.qp.n_constraints(),
            kkt_residual: sol.kkt_residual,
            fallback,
            solve_ms: t0.elapsed().as_secs_f64() * 1e3,
            attitude_orthogonality: orth,
        };
        Ok(StepOutput { forces, diagnostics, plan })
    }

    /// Previous forces on legs that stay in stance, an equal weight share on
    /// new stance legs, then clipped into the pyramid.
    fn fallback_forces(&self, stage: &Stage) -> [Vector3<f64>; N_FEET] {
        let n_c = stage.n_stance().max(1) as f64;
        let share = Vector3::new(0.0, 0.0, self.params.weight() / n_c);
        let mut f = [Vector3::zeros(); N_FEET];
        for leg in 0..N_FEET {
            if !stage.stance[leg] {
                continue;
            }
            let prev = self.last.as_ref().filter(|l| l.stance[leg]).map(|l| Vector3::new(l.u[3 * leg], l.u[3 * leg + 1], l.u[3 * leg + 2]));
            let mut v = prev.unwrap_or(share);
            v.z = v.z.clamp(self.config.f_min, self.config.f_max);
            let lim = self.config.mu * v.z;
            v.x = v.x.clamp(-lim, lim);
            v.y = v.y.clamp(-lim, lim);
            f[leg] = v;
        }
        f
    }

    /// Internal attitude estimate of the SE(3) controller.
    pub fn attitude_estimate(&self) -> Option<&Matrix3<f64>> {
        self.r_hat.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footstep::LegGeometry;
    use crate::gait::{horizon_schedule, GaitParams};
    use crate::nominal::nominal_step;
    use crate::qp::solve;

    fn arms() -> [Vector3<f64>; N_FEET] {
        let geo = LegGeometry::default();
        std::array::from_fn(|i| geo.nominal_foot(i))
    }

    fn hold(x: &TemplateState<f64>, n: usize) -> Vec<TemplateState<f64>> {
        vec![x.clone(); n + 1]
    }

    fn standing() -> TemplateState<f64> {
        TemplateState::new(Vector3::new(0.0, 0.0, 0.3), Vector3::zeros(), Vector3::zeros(), Vector3::zeros())
    }

    #[test]
    fn pyramid_rows() {
        let (a, b) = friction_pyramid(0.5, 0.0, 180.0);
        let r = &a * DVector::from_column_slice(&[0.0, 0.0, 100.0]) - &b;
        assert!(r.iter().all(|&v| v < 0.0));
        let r = &a * DVector::from_column_slice(&[51.0, 0.0, 100.0]) - &b;
        assert_eq!(r[1], 1.0);
        assert!(r.iter().enumerate().all(|(i, &v)| i == 1 || v < 0.0));
        let r = &a * DVector::from_column_slice(&[0.0, 0.0, 180.0]) - &b;
        assert_eq!(r[5], 0.0);
    }

    #[test]
    fn single_stage_hand_condensation() {
        let params = SrbParams::go1();
        let cfg = MpcConfig { horizon: 1, variant: Variant::NominalMpc, ..Default::default() };
        let w = MpcWeights::default();
        let x0 = standing();
        let stage = Stage { stance: [true, false, false, false], phases: [0.0; 4], moment_arms: arms() };
        let sched = ContactSchedule { stages: vec![stage] };
        let refs = hold(&x0, 1);
        let hz = build_horizon(&HorizonStart { x0: &x0, z0: None }, &sched, &refs, &w, &cfg, &params, &Predictor::Nominal).unwrap();
        let mats = build_ltv(0.0, &arms(), &[true, false, false, false], &params, 0.01).unwrap();
        let qf = DMatrix::from_diagonal(&DVector::from_column_slice(&w.q_f));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&w.r_per_foot));
        let expect = mats.b.transpose() * &qf * &mats.b + r;
        assert!((&hz.qp.h - &expect).abs().max() < 1e-15);
        let g = mats.b.transpose() * &qf * (&mats.a * x0.as_dvector() - refs[1].as_dvector());
        assert!((&hz.qp.g - g).abs().max() < 1e-12);
        assert_eq!(hz.qp.n_constraints(), 6);
    }

    #[test]
    fn trot_row_count() {
        let params = SrbParams::go1();
        let cfg = MpcConfig { variant: Variant::NominalMpc, ..Default::default() };
        // mid-stance: the 8 stages stay inside one trot half-cycle
        let sched = horizon_schedule(0.05, 8, 0.01, &GaitParams::trot(), &arms());
        assert!(sched.stages.iter().all(|s| s.n_stance() == 2));
        let x0 = standing();
        let hz = build_horizon(&HorizonStart { x0: &x0, z0: None }, &sched, &hold(&x0, 8), &MpcWeights::default(), &cfg, &params, &Predictor::Nominal).unwrap();
        assert_eq!(hz.qp.n_constraints(), 96);
        assert_eq!(hz.qp.n(), 48);
        assert!(hz.qp.h.clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn zero_residual_matches_nominal() {
        let params = SrbParams::go1();
        let sched = horizon_schedule(0.13, 8, 0.01, &GaitParams::trot(), &arms());
        let x0 = TemplateState::new(Vector3::new(0.1, 0.0, 0.28), Vector3::new(0.02, -0.01, 0.3), Vector3::new(0.2, 0.0, 0.0), Vector3::new(0.0, 0.1, 0.2));
        let refs = make_reference(&PlanarCommand { v_x: 0.3, v_y: 0.0, omega_z: 0.3 }, &x0, 8, 0.01, 0.3);
        let w = MpcWeights::default();
        let nom_cfg = MpcConfig { variant: Variant::NominalMpc, ..Default::default() };
        let rk_cfg = MpcConfig { variant: Variant::RkMpc, ..Default::default() };
        let zero = ResidualModel::zero(2).unwrap();
        let z0 = zero.cold_start();
        let a = build_horizon(&HorizonStart { x0: &x0, z0: None }, &sched, &refs, &w, &nom_cfg, &params, &Predictor::Nominal).unwrap();
        let b = build_horizon(&HorizonStart { x0: &x0, z0: Some(&z0) }, &sched, &refs, &w, &rk_cfg, &params, &Predictor::Residual(zero)).unwrap();
        assert!((&a.qp.h - &b.qp.h).abs().max() < 1e-12);
        assert!((&a.qp.g - &b.qp.g).abs().max() < 1e-12);
        assert_eq!(a.qp.a, b.qp.a);
        let sa = solve(&a.qp, &QpOptions::default());
        let sb = solve(&b.qp, &QpOptions::default());
        assert!((sa.u - sb.u).abs().max() < 1e-8);
    }

    #[test]
    fn schedule_and_model_errors() {
        let params = SrbParams::go1();
        let x0 = standing();
        let sched = horizon_schedule(0.0, 7, 0.01, &GaitParams::trot(), &arms());
        let cfg = MpcConfig { variant: Variant::NominalMpc, ..Default::default() };
        let err = build_horizon(&HorizonStart { x0: &x0, z0: None }, &sched, &hold(&x0, 8), &MpcWeights::default(), &cfg, &params, &Predictor::Nominal);
        assert!(matches!(err, Err(Error::ScheduleMismatch { .. })));
        assert!(matches!(Predictor::for_variant(Variant::RkMpc, None, None), Err(Error::ModelMissing(_))));
        assert!(matches!(Predictor::for_variant(Variant::Se3Kmpc, None, None), Err(Error::ModelMissing(_))));
    }

    #[test]
    fn standing_forces_balance_weight() {
        let params = SrbParams::go1();
        let mut ctl = MpcController::new(MpcConfig { variant: Variant::NominalMpc, ..Default::default() }, MpcWeights::default(), params, Predictor::Nominal).unwrap();
        let x0 = standing();
        let sched = horizon_schedule(0.0, 8, 0.01, &GaitParams::stand(), &arms());
        let out = ctl.solve_step(&PlantState::at_rest(0.3), &x0, &sched, &hold(&x0, 8)).unwrap();
        let fz: f64 = out.forces.iter().map(|f| f.z).sum();
        assert!((fz - params.weight()).abs() < 0.02 * params.weight(), "{fz}");
        // left/right symmetric arms give mirrored forces
        assert!((out.forces[0].z - out.forces[2].z).abs() < 1e-6);
        assert!((out.forces[1].z - out.forces[3].z).abs() < 1e-6);
        assert!(!out.diagnostics.fallback);
    }

    #[test]
    fn swing_forces_are_zero() {
        let params = SrbParams::go1();
        let mut ctl = MpcController::new(MpcConfig { variant: Variant::NominalMpc, ..Default::default() }, MpcWeights::default(), params, Predictor::Nominal).unwrap();
        let x0 = standing();
        let sched = horizon_schedule(0.05, 8, 0.01, &GaitParams::trot(), &arms());
        let refs = make_reference(&PlanarCommand { v_x: 0.5, v_y: 0.0, omega_z: 0.2 }, &x0, 8, 0.01, 0.3);
        let out = ctl.solve_step(&PlantState::at_rest(0.3), &x0, &sched, &refs).unwrap();
        for leg in 0..4 {
            if !sched.stages[0].stance[leg] {
                assert_eq!(out.forces[leg], Vector3::zeros());
            }
        }
        assert!(pyramid_violation(&out.forces, &sched.stages[0].stance, 0.5, 0.0, 180.0) <= 1e-8);
    }

    #[test]
    fn receding_shift() {
        let params = SrbParams::go1();
        let cfg = MpcConfig { variant: Variant::NominalMpc, ..Default::default() };
        let w = MpcWeights::default();
        let sched = horizon_schedule(0.0, 8, 0.01, &GaitParams::stand(), &arms());
        let x0 = standing();
        let refs = hold(&x0, 8);
        let hz = build_horizon(&HorizonStart { x0: &x0, z0: None }, &sched, &refs, &w, &cfg, &params, &Predictor::Nominal).unwrap();
        let s0 = solve(&hz.qp, &QpOptions::default());
        let mats = build_ltv(0.0, &arms(), &[true; 4], &params, 0.01).unwrap();
        let x1 = nominal_step(&x0, &s0.u.rows(0, 12).into_owned(), &mats).unwrap();
        let hz1 = build_horizon(&HorizonStart { x0: &x1, z0: None }, &sched, &refs, &w, &cfg, &params, &Predictor::Nominal).unwrap();
        let s1 = solve(&hz1.qp, &QpOptions::default());
        let d = (s1.u.rows(0, 12) - s0.u.rows(12, 12)).abs().max();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn reference_integration() {
        let x0 = TemplateState::new(Vector3::new(1.0, 2.0, 0.25), Vector3::new(0.1, 0.1, 0.4), Vector3::zeros(), Vector3::zeros());
        let r = make_reference(&PlanarCommand { v_x: 0.0, v_y: 0.0, omega_z: 0.0 }, &x0, 8, 0.01, 0.3);
        for s in &r {
            assert_eq!(s.p(), Vector3::new(1.0, 2.0, 0.3));
            assert_eq!(s.theta(), Vector3::new(0.0, 0.0, 0.4));
        }
        let x0 = TemplateState::new(Vector3::new(0.0, 0.0, 0.3), Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
        let r = make_reference(&PlanarCommand { v_x: 0.5, v_y: 0.0, omega_z: 0.0 }, &x0, 8, 0.01, 0.3);
        assert!((r[8].p()[0] - 0.04).abs() < 1e-12);
        let (v, w) = (0.3, 0.3);
        let r = make_reference(&PlanarCommand { v_x: v, v_y: 0.0, omega_z: w }, &x0, 100, 0.05, 0.3);
        // centre of the arc sits at (0, v/ω) for a start heading of zero
        for k in [17, 50, 93] {
            let p = r[k].p();
            let rad = (p[0].powi(2) + (p[1] - v / w).powi(2)).sqrt();
            assert!((rad - v / w).abs() < 1e-12);
            assert!((r[k].yaw() - w * 0.05 * k as f64).abs() < 1e-12);
        }
    }
}

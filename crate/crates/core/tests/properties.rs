use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;

use rkmpc::config::RunConfig;
use rkmpc::edmdc::ridge_fit;
use rkmpc::footstep::{raibert_touchdown, swing_trajectory, torque_map, FootstepGains, LegGeometry, PlanarCommand};
use rkmpc::gait::{contact_flags, horizon_schedule, leg_phase, GaitParams};
use rkmpc::geom::{euler_to_rot, exp_so3, geodesic_error, hat, project_so3, rot_to_euler, vee, EulerZyx, Rotation};
use rkmpc::harness::log::{EpisodeLog, LogMeta, LogRow};
use rkmpc::lifting::{binomial, se3_lift, Dictionary};
use rkmpc::nominal::{build_ltv, hover_inputs, nominal_step, TemplateState};
use rkmpc::plant::{clip_to_cone, rk4_step, SrbParams, Wrench, N_FEET};
use rkmpc::qp::{solve, solve_warm, QpOptions, QpProblem, QpStatus};
use rkmpc::residual::{corrected_step, ResidualModel};

fn v3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn rotation() -> impl Strategy<Value = Rotation<f64>> {
    v3(3.0).prop_map(|w| exp_so3(&w))
}

fn arms() -> [Vector3<f64>; N_FEET] {
    let g = LegGeometry::default();
    std::array::from_fn(|i| g.nominal_foot(i) - Vector3::new(0.0, 0.0, 0.3))
}

/// Box-constrained QP with a random SPD Hessian; always feasible at the origin.
fn qp_problem() -> impl Strategy<Value = QpProblem<f64>> {
    (2usize..6).prop_flat_map(|n| {
        (
            proptest::collection::vec(-1.0..1.0f64, n * n),
            proptest::collection::vec(-3.0..3.0f64, n),
            proptest::collection::vec(0.1..2.0f64, n),
        )
            .prop_map(move |(m, g, ub)| {
                let m = DMatrix::from_vec(n, n, m);
                let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
                let mut a = DMatrix::zeros(2 * n, n);
                let mut b = DVector::zeros(2 * n);
                for i in 0..n {
                    a[(i, i)] = 1.0;
                    b[i] = ub[i];
                    a[(n + i, i)] = -1.0;
                    b[n + i] = ub[i];
                }
                QpProblem { h, g: DVector::from_vec(g), a, b }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vee_inverts_hat(a in v3(10.0)) {
        let back = vee(&hat(&a)).unwrap();
        prop_assert!((back - a).norm() <= 1e-12);
    }

    #[test]
    fn projection_is_idempotent(r in rotation(), noise in proptest::collection::vec(-0.05..0.05f64, 9)) {
        let m = r.matrix() + DMatrix::from_vec(3, 3, noise).fixed_view::<3, 3>(0, 0).into_owned();
        let once = project_so3(&m).unwrap();
        let twice = project_so3(once.matrix()).unwrap();
        prop_assert!((once.matrix() - twice.matrix()).norm() <= 1e-12);
        prop_assert!(once.orthogonality_error() <= 1e-12);
    }

    #[test]
    fn euler_round_trip(roll in -1.5..1.5f64, pitch in -1.5..1.5f64, yaw in -3.1..3.1f64) {
        let e = EulerZyx::new(roll, pitch, yaw).unwrap();
        let back = rot_to_euler(&euler_to_rot(&e)).unwrap();
        prop_assert!((back.to_vector() - e.to_vector()).norm() <= 1e-9);
    }

    #[test]
    fn geodesic_error_of_self_is_zero(r in rotation()) {
        prop_assert!(geodesic_error(&r, r.matrix()).abs() <= 1e-12);
    }

    #[test]
    fn cone_clip_respects_cone(f in v3(200.0), mu in 0.05..1.5f64) {
        let c = clip_to_cone(&f, mu);
        prop_assert!(c.z >= 0.0);
        prop_assert!(c.x.hypot(c.y) <= mu * c.z + 1e-9);
        // feasible forces are left alone
        if f.z > 0.0 && f.x.hypot(f.y) <= mu * f.z {
            prop_assert_eq!(c, f);
        }
    }

    #[test]
    fn plant_step_is_deterministic(r in rotation(), v in v3(1.0), w in v3(2.0), f in v3(50.0), tq in v3(5.0)) {
        let params = SrbParams::<f64>::go1();
        let s = rkmpc::plant::PlantState { p: Vector3::new(0.0, 0.0, 0.3), r, v, omega: w };
        let wrench = Wrench { force: f, torque: tq };
        let a = rk4_step(&s, &wrench, &params, 1e-3).unwrap();
        let b = rk4_step(&s, &wrench, &params, 1e-3).unwrap();
        prop_assert_eq!(a.clone(), b);
        prop_assert!(a.r.orthogonality_error() <= 1e-12);
    }

    #[test]
    fn stance_count_averages_to_duty(t0 in 0.0..10.0f64) {
        for gait in [GaitParams::trot(), GaitParams::crawl()] {
            let n = 4000;
            let dt = gait.period / n as f64;
            let total: usize = (0..n)
                .map(|k| contact_flags(t0 + k as f64 * dt, &gait).iter().filter(|&&s| s).count())
                .sum();
            let mean = total as f64 / n as f64;
            prop_assert!((mean - 4.0 * gait.duty).abs() <= 4.0 * 2.0 / n as f64);
        }
    }

    #[test]
    fn gait_is_periodic(t in 0.0..10.0f64, leg in 0usize..4) {
        let gait = GaitParams::trot();
        let a = leg_phase(t, leg, &gait);
        let b = leg_phase(t + 3.0 * gait.period, leg, &gait);
        prop_assert_eq!(a.in_stance, b.in_stance);
        prop_assert!((a.phase - b.phase).abs() <= 1e-9 || (a.phase - b.phase).abs() >= 1.0 - 1e-9);
    }

    #[test]
    fn schedule_matches_flags(t0 in 0.0..5.0f64, n in 1usize..20) {
        let gait = GaitParams::trot();
        let s = horizon_schedule(t0, n, 0.01, &gait, &arms());
        prop_assert_eq!(s.stages.len(), n);
        for (k, st) in s.stages.iter().enumerate() {
            prop_assert_eq!(st.stance, contact_flags(t0 + k as f64 * 0.01, &gait));
        }
    }

    #[test]
    fn touchdown_offsets_are_clamped(v in (-3.0..3.0f64, -3.0..3.0f64), wz in -3.0..3.0f64, phi in 0.0..1.0f64, leg in 0usize..4) {
        let g = LegGeometry::default();
        let gains = FootstepGains::default();
        let gait = GaitParams::trot();
        let cmd = PlanarCommand::default();
        let p = Vector3::new(0.3, -0.1, 0.3);
        let polar = g.polar(leg);
        // zero yaw rate isolates the linear offset from the heading term
        let td = raibert_touchdown(&p, 0.0, v, 0.0, phi, &cmd, &gait, &gains, polar);
        let nominal = raibert_touchdown(&p, 0.0, (0.0, 0.0), 0.0, phi, &cmd, &gait, &gains, polar);
        prop_assert!((td.x - nominal.x).abs() <= gains.clamp_x + 1e-12);
        prop_assert!((td.y - nominal.y).abs() <= gains.clamp_y + 1e-12);
        prop_assert_eq!(td.z, 0.0);
        let spun = raibert_touchdown(&p, 0.0, v, wz, phi, &cmd, &gait, &gains, polar);
        prop_assert!(spun.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn swing_stays_above_endpoints(start in v3(1.0), end in v3(1.0), phi in 0.0..1.0f64, h in 0.0..0.2f64) {
        let (pos, _) = swing_trajectory(&start, &end, phi, h, 0.2);
        prop_assert!(pos.z >= start.z.min(end.z) - 1e-12);
        let (p0, _) = swing_trajectory(&start, &end, 0.0, h, 0.2);
        prop_assert!((p0 - start).norm() <= 1e-12);
    }

    #[test]
    fn torque_map_is_linear_below_saturation(m in proptest::collection::vec(-1.0..1.0f64, 9), f1 in v3(10.0), f2 in v3(10.0), k in -2.0..2.0f64) {
        let j = Matrix3::from_vec(m);
        let big = 1e9;
        let a = torque_map(&j, &f1, big).tau;
        let b = torque_map(&j, &f2, big).tau;
        let c = torque_map(&j, &(f1 * k + f2), big).tau;
        prop_assert!((c - (a * k + b)).norm() <= 1e-9);
        let clipped = torque_map(&j, &f1, 1.0);
        prop_assert!(clipped.tau.amax() <= 1.0);
    }

    #[test]
    fn monomial_slot_count(n in 1usize..7, d in 1usize..4) {
        let dict = Dictionary::monomial(n, d).unwrap();
        prop_assert_eq!(dict.output_dim(), binomial(n + d, d));
        let x: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.2).collect();
        prop_assert_eq!(dict.eval(&x).unwrap(), dict.eval(&x).unwrap());
    }

    #[test]
    fn se3_lift_is_left_equivariant(p in v3(1.0), v in v3(1.0), r in rotation(), w in v3(2.0), s in rotation(), d in 1usize..5) {
        // left-multiplying the attitude rotates every attitude block the same way
        let z = se3_lift(&p, &v, r.matrix(), &w, d);
        let zs = se3_lift(&p, &v, &(s.matrix() * r.matrix()), &w, d);
        for j in 0..=d {
            let off = if j == 0 { 6 } else { 18 + 9 * (j - 1) };
            let blk = Matrix3::from_column_slice(&z.as_slice()[off..off + 9]);
            let blk_s = Matrix3::from_column_slice(&zs.as_slice()[off..off + 9]);
            prop_assert!((blk_s - s.matrix() * blk).norm() <= 1e-9);
        }
    }

    #[test]
    fn ridge_fit_ignores_sample_order(seed in 0u64..1000, lambda in 1e-6..1.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (p, q, n) = (4, 3, 30);
        let omega = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let z_next = DMatrix::from_fn(q, n, |_, _| rng.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let k = ridge_fit(&z_next, &omega, lambda).unwrap();
        let kp = ridge_fit(&z_next.select_columns(&perm), &omega.select_columns(&perm), lambda).unwrap();
        prop_assert!((k - kp).norm() <= 1e-9);
    }

    #[test]
    fn zero_residual_reproduces_nominal(x in proptest::collection::vec(-0.5..0.5f64, 12), yaw in -3.0..3.0f64) {
        let params = SrbParams::<f64>::go1();
        let stance = [true, false, false, true];
        let mats = build_ltv(yaw, &arms(), &stance, &params, 0.01).unwrap();
        let mut x = x;
        x.push(1.0);
        let x = TemplateState::from_slice(&x).unwrap();
        let u = hover_inputs(&params, 2);
        let mut u_full = DVector::zeros(12);
        u_full.rows_mut(0, 3).copy_from(&u.rows(0, 3));
        u_full.rows_mut(9, 3).copy_from(&u.rows(3, 3));
        let model = ResidualModel::<f64>::zero(2).unwrap();
        let (corr, _) = corrected_step(&x, &u_full, &model.cold_start(), &mats, &model).unwrap();
        let nom = nominal_step(&x, &u, &mats).unwrap();
        prop_assert!((corr.0 - nom.0).norm() <= 1e-12);
    }

    #[test]
    fn qp_beats_feasible_points(p in qp_problem(), pts in proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, 6), 20)) {
        let sol = solve(&p, &QpOptions::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(p.max_violation(&sol.u) <= 1e-9);
        let n = p.n();
        for raw in &pts {
            // scale into the box so the point is feasible
            let u = DVector::from_fn(n, |i, _| raw[i] * p.b[i]);
            prop_assert!(sol.objective <= p.objective(&u) + 1e-9);
        }
    }

    #[test]
    fn qp_solution_is_scale_invariant(p in qp_problem(), s in 0.1..10.0f64) {
        let a = solve(&p, &QpOptions::default());
        let scaled = QpProblem { h: &p.h * s, g: &p.g * s, a: &p.a * s, b: &p.b * s };
        let b = solve(&scaled, &QpOptions::default());
        prop_assert!((&a.u - &b.u).norm() <= 1e-8 * (1.0 + a.u.norm()));
    }

    #[test]
    fn warm_start_gives_same_answer(p in qp_problem()) {
        let cold = solve(&p, &QpOptions::default());
        let warm = solve_warm(&p, &QpOptions::default(), &cold.active_set);
        prop_assert!((cold.u - warm.u).norm() <= 1e-9);
        prop_assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn log_round_trip(steps in proptest::collection::vec(1e-3..1.0f64, 0..8), xs in proptest::collection::vec(-1e3..1e3f64, 12)) {
        let mut meta = LogMeta::new();
        meta.insert("variant".into(), "rkmpc".into());
        let mut log = EpisodeLog::new(meta);
        let mut t = 0.0;
        for (i, &dt) in steps.iter().enumerate() {
            t += dt;
            let mut row = LogRow::empty(t);
            row.x.copy_from_slice(&xs);
            row.stance[i % N_FEET] = true;
            row.qp_iterations = i as u32;
            row.attitude_orth = xs[i] * 1e-15;
            log.rows.push(row);
        }
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        prop_assert_eq!(EpisodeLog::read(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn config_round_trip(seed in any::<u64>(), episodes in 3usize..50, horizon in 2usize..30) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.collect.episodes = episodes;
        cfg.mpc.horizon = horizon;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

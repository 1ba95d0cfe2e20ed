use approx::assert_relative_eq;
use nalgebra::Vector2;
use proptest::prelude::*;
use snake_modes::dynamics::constrained::connection_from_constraints;
use snake_modes::dynamics::{
    connection_divisor, forward_dynamics, inverse_dynamics, local_connection, potential, spring_torque, total_energy,
    ShapeState,
};
use snake_modes::efficiency::{cot, dissipated_power, FrictionParams};
use snake_modes::orbits::diagonal_state;
use snake_modes::scaling::{scale_gait, GaitFigures, ParamScaling};
use snake_modes::sim::{integrate_free, SimOptions};
use snake_modes::{Dual, ModelParams};

fn clear_of_singularity(p: &ModelParams, r: [f64; 2], margin: f64) -> bool {
    connection_divisor(p, &Vector2::from(r)).abs() > margin
}

fn shape() -> impl Strategy<Value = [f64; 2]> {
    [-2.5..2.5f64, -2.5..2.5f64]
}

fn rate() -> impl Strategy<Value = [f64; 2]> {
    [-1.5..1.5f64, -1.5..1.5f64]
}

proptest! {
    #[test]
    fn connection_matches_constraint_solve(r in shape()) {
        let p = ModelParams::default();
        prop_assume!(clear_of_singularity(&p, r, 1e-2));
        let a = local_connection(&p, &Vector2::from(r)).unwrap();
        let b = connection_from_constraints(&p, &Vector2::from(r)).unwrap();
        prop_assert!((a - b).amax() < 1e-8 * (1.0 + a.amax()));
    }

    #[test]
    fn inverse_undoes_forward(r in shape(), dr in rate(), tau in [-5.0..5.0f64, -5.0..5.0f64]) {
        let p = ModelParams::default();
        prop_assume!(clear_of_singularity(&p, r, 5e-2));
        let s = ShapeState::new(r, dr);
        let tau = Vector2::from(tau);
        let Ok(ddr) = forward_dynamics(&p, &s, &tau) else { return Ok(()) };
        let back = inverse_dynamics(&p, &s, &ddr).unwrap();
        prop_assert!((back - tau).amax() < 1e-7 * (1.0 + ddr.amax()));
    }

    #[test]
    fn reflection_commutes_with_dynamics(r in shape(), dr in rate(), c in 0.0..1.5f64) {
        let p = ModelParams::default().with_diagonal_eq(c);
        prop_assume!(clear_of_singularity(&p, r, 5e-2));
        let s = ShapeState::new(r, dr);
        let m = ShapeState::new([-r[1], -r[0]], [-dr[1], -dr[0]]);
        let (Ok(a), Ok(b)) = (forward_dynamics(&p, &s, &Vector2::zeros()), forward_dynamics(&p, &m, &Vector2::zeros())) else {
            return Ok(());
        };
        prop_assert!((b[0] + a[1]).abs() < 1e-8 * (1.0 + a.amax()));
        prop_assert!((b[1] + a[0]).abs() < 1e-8 * (1.0 + a.amax()));
        let (ea, eb) = (total_energy(&p, &s).unwrap(), total_energy(&p, &m).unwrap());
        prop_assert!((ea - eb).abs() < 1e-10 * (1.0 + ea.abs()));
    }

    #[test]
    fn spring_term_is_potential_gradient(r in shape(), k in [0.1..20.0f64, 0.1..20.0f64], eq in shape()) {
        let p = ModelParams { stiffness: k, r_eq: eq, ..ModelParams::default() };
        let pd = p.map(Dual::constant);
        let tau = spring_torque(&p, &Vector2::from(r));
        for i in 0..2 {
            let mut rd = Vector2::new(Dual::constant(r[0]), Dual::constant(r[1]));
            rd[i] = Dual::variable(r[i]);
            let grad = potential(&pd, &rd).eps;
            prop_assert!((tau[i] - grad).abs() < 1e-12 * (1.0 + grad.abs()));
        }
    }

    #[test]
    fn scaling_composes(k in 0.1..10.0f64, m in 0.1..10.0f64, l in 0.1..10.0f64,
                        k2 in 0.1..10.0f64, m2 in 0.1..10.0f64, l2 in 0.1..10.0f64) {
        let g = GaitFigures { period: 2.0, d: 0.7, v_avg: 0.35, energy: 4.0 };
        let (a, b) = (ParamScaling::new(k, m, l).unwrap(), ParamScaling::new(k2, m2, l2).unwrap());
        let twice = scale_gait(&scale_gait(&g, &a), &b);
        let once = scale_gait(&g, &a.then(&b));
        prop_assert!((twice.period / once.period - 1.0).abs() < 1e-12);
        prop_assert!((twice.d / once.d - 1.0).abs() < 1e-12);
        prop_assert!((twice.v_avg / once.v_avg - 1.0).abs() < 1e-12);
        prop_assert!((twice.energy / once.energy - 1.0).abs() < 1e-12);
        prop_assert!((once.d / once.period / (once.v_avg / g.v_avg * g.d / g.period) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_scales_with_stiffness(r in shape(), dr in rate(), k in 0.2..5.0f64, m in 0.2..5.0f64, l in 0.2..5.0f64) {
        let p = ModelParams::default();
        prop_assume!(clear_of_singularity(&p, r, 5e-2));
        let s = ParamScaling::new(k, m, l).unwrap();
        let tf = s.time_factor();
        let e0 = total_energy(&p, &ShapeState::new(r, dr)).unwrap();
        let e1 = total_energy(&s.apply(&p), &ShapeState::new(r, [dr[0] / tf, dr[1] / tf])).unwrap();
        prop_assert!((e1 - k * e0).abs() < 1e-10 * (1.0 + k * e0.abs()));
    }

    #[test]
    fn cost_of_transport_definition(e in 0.0..100.0f64, d in 1e-3..10.0f64) {
        let p = ModelParams::default();
        let c = cot(e, d, &p).unwrap();
        prop_assert!((c * d * 3.0 * p.g - e).abs() < 1e-12 * (1.0 + e));
    }

    #[test]
    fn dissipation_is_nonnegative(r in shape(), dr in rate(), f in 0.0..0.2f64, c in 0.0..0.1f64) {
        let p = ModelParams::default();
        prop_assume!(clear_of_singularity(&p, r, 5e-2));
        let fp = FrictionParams { rolling_resistance: f, joint_damping: c, ..FrictionParams::default() };
        let pw = dissipated_power(&ShapeState::new(r, dr), &fp, &p).unwrap();
        prop_assert!(pw >= -1e-15);
        let none = dissipated_power(&ShapeState::new(r, dr), &FrictionParams::none(), &p).unwrap();
        prop_assert_eq!(none, 0.0);
    }

    #[test]
    fn diagonal_state_has_requested_energy(c in 0.2..1.4f64, e in 0.5..40.0f64, u in -3.0..3.0f64) {
        let p = ModelParams::default().with_diagonal_eq(c);
        prop_assume!(clear_of_singularity(&p, [u, -u], 1e-2));
        if let Some(y) = diagonal_state(&p, e, u) {
            prop_assert_eq!(y[2], y[3]);
            prop_assert!(y[2] > 0.0);
            let got = total_energy(&p, &ShapeState::from_array(&y)).unwrap();
            prop_assert!((got - e).abs() < 1e-10 * e);
        }
    }

    #[test]
    fn params_survive_toml(h in 0.3..2.0f64, r in 0.3..2.0f64, k in [0.0..30.0f64, 0.0..30.0f64], eq in shape()) {
        let p = ModelParams { h, r, stiffness: k, r_eq: eq, ..ModelParams::default() };
        let back = ModelParams::from_toml_str(&p.to_toml_string()).unwrap();
        prop_assert_eq!(back, p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn unactuated_motion_conserves_energy(r in [-1.2..1.2f64, -1.2..1.2f64], dr in rate()) {
        let p = ModelParams::default();
        prop_assume!(clear_of_singularity(&p, r, 0.2));
        let s = ShapeState::new(r, dr);
        let traj = integrate_free(&s, &p, 2.0, &SimOptions::default()).unwrap();
        prop_assume!(traj.truncated_at.is_none());
        let e0 = traj.first().energy;
        for x in &traj.samples {
            prop_assert!((x.energy - e0).abs() < 1e-6 * (1.0 + e0.abs()));
        }
    }
}

#[test]
fn trajectory_csv_has_one_row_per_sample() {
    let p = ModelParams::default();
    let opts = SimOptions { sample_dt: Some(0.05), ..SimOptions::default() };
    let traj = integrate_free(&ShapeState::new([0.9, -0.2], [0.3, 0.0]), &p, 1.0, &opts).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,r1,r2,dr1,dr2,x,y,theta,E,tau1,tau2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), traj.samples.len());
    assert_eq!(rows.len(), 21);
    for (row, s) in rows.iter().zip(&traj.samples) {
        assert_eq!(row[0], s.t);
        assert_eq!(row[1], s.r[0]);
        assert_eq!(row[8], s.energy);
    }
    assert_relative_eq!(traj.duration(), 1.0, epsilon = 1e-12);
}

#[test]
fn trajectory_json_round_trip() {
    let p = ModelParams::default();
    let traj = integrate_free(&ShapeState::new([0.9, -0.2], [0.3, 0.0]), &p, 0.5, &SimOptions::default()).unwrap();
    let text = serde_json::to_string(&traj).unwrap();
    let back: snake_modes::sim::Trajectory = serde_json::from_str(&text).unwrap();
    assert_eq!(back.samples.len(), traj.samples.len());
    assert_eq!(back.last().pose, traj.last().pose);
    assert_eq!(back.params, traj.params);
}

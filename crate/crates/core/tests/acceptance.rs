//! Acceptance checks, one line per criterion.
//!
//! Criteria that are not met print FAIL and the run still exits 0 so the rest
//! of the test suite can be read; set `ACCEPTANCE_STRICT=1` to exit 1 on any
//! failure.

use std::time::Instant;

use nalgebra::Vector2;
use snake_modes::checks::{
    connection_consistency, energy_drift, lateral_speed, random_shapes, random_states, reduced_vs_constrained,
};
use snake_modes::dynamics::constrained::ConstrainedModel;
use snake_modes::dynamics::{inverse_dynamics, Pose, ShapeState};
use snake_modes::efficiency::{
    evaluate_baseline, evaluate_nbo, write_csv, BaselineEllipse, FrictionParams, LossModel,
};
use snake_modes::integrate::Tolerances;
use snake_modes::modal::{
    enumerate_nnm_gaits, linear_mode, shoot_brake_orbit, trace_generator, Branch, GaitScan, NnmGait, ScanOptions,
    ShootOptions, TraceOptions,
};
use snake_modes::orbits::{
    continue_family, diagonal_seeds, reflection_defect, solve_distinct, solve_nbo, NboGuess, NboOptions,
    OrbitFamily, PeriodicOrbit, SeedScan,
};
use snake_modes::scaling::{
    check_nnm_scaling, check_orbit_scaling, displacement_from_path, landau_half_period, ParamScaling,
};
use snake_modes::shooting::flow;
use snake_modes::sim::{integrate_free, net_motion, run_switching_gait, SimOptions, SwitchOptions};
use snake_modes::{Error, ModelParams};

const SEED: u64 = 7;
const PAPER_GAITS: f64 = 1695.0;

type Outcome = Result<(bool, String), Error>;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

fn run(id: usize, name: &'static str, f: impl FnOnce() -> Outcome) -> Line {
    let t0 = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let line = Line {
        id,
        name,
        passed,
        detail,
        secs: t0.elapsed().as_secs_f64(),
    };
    println!(
        "{} {:>2} {}: {} [{:.1} s]",
        if line.passed { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.detail,
        line.secs
    );
    line
}

fn base() -> ModelParams {
    ModelParams::default()
}

fn connection() -> Outcome {
    let t0 = Instant::now();
    let p = base();
    let shapes = random_shapes(&p, SEED, 1000, 1e-3);
    let c = connection_consistency(&p, &shapes, 1e-10)?;
    let states = random_states(&p, SEED + 1, 20, 1.0);
    let l = lateral_speed(&p, &states, 1.0, 1e-10)?;
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        c.passed && l.passed && secs < 10.0,
        format!(
            "max entry difference {:.2e} over {} shapes (< 1e-10), lateral speed {:.2e} m/s (< 1e-10), {secs:.1} s (< 10 s)",
            c.value, c.samples, l.value
        ),
    ))
}

fn reduced_vs_full() -> Outcome {
    let t0 = Instant::now();
    let p = base();
    let states = random_states(&p, SEED + 2, 20, 1.0);
    let r = reduced_vs_constrained(&p, &states, 1.0, 1e-6)?;
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        r.passed && secs < 60.0,
        format!(
            "max difference in (r, dr, pose) {:.2e} over {} states (< 1e-6), {secs:.1} s (< 60 s)",
            r.value, r.samples
        ),
    ))
}

fn energy() -> Outcome {
    let t0 = Instant::now();
    let p = base();
    let states = random_states(&p, SEED + 3, 5, 10.0);
    let r = energy_drift(&p, &states, 10.0, 1e-6)?;
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        r.passed && secs < 10.0,
        format!(
            "relative drift {:.2e} over 10 s from {} states (< 1e-6), {secs:.1} s (< 10 s)",
            r.value, r.samples
        ),
    ))
}

fn nnm_validity() -> Outcome {
    let so = ShootOptions::default();
    let (mut residual, mut period_err, mut straight, mut disp): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut orbits = 0;
    let mut singular = Vec::new();
    for c in [0.3, 0.6, 1.0] {
        let p = base().with_diagonal_eq(c);
        for branch in [Branch::Perp, Branch::Parallel] {
            let lin = linear_mode(p.r_eq, branch, &p)?;
            let small = shoot_brake_orbit(&p, branch, 1e-6, None, &so)?;
            period_err = period_err.max((small.t_half / lin.half_period() - 1.0).abs());
            for e in [1e-6, 0.05, 0.5, 2.0] {
                let o = match shoot_brake_orbit(&p, branch, e, None, &so) {
                    Err(Error::SingularityApproached { .. }) => {
                        singular.push(format!("c {c} {branch:?} E {e}"));
                        continue;
                    }
                    r => r?,
                };
                orbits += 1;
                residual = residual.max(o.residual);
                if branch == Branch::Parallel {
                    let off = |r: &[f64; 2]| ((r[0] - p.r_eq[0]) + (r[1] - p.r_eq[1])).abs() / 2f64.sqrt();
                    straight = o.path.iter().map(off).fold(straight, f64::max);
                }
                let traj = integrate_free(&ShapeState::at_rest(o.p), &p, o.period(), &SimOptions::default())?;
                traj.check()?;
                disp = disp.max(net_motion(&traj).0);
            }
        }
    }
    Ok((
        residual < 1e-9 && period_err < 1e-2 && straight < 1e-6 && disp < 1e-6 && orbits >= 20,
        format!(
            "{orbits} brake orbits, through Q = 0 and skipped: {singular:?}; residual {residual:.1e} (< 1e-9), small-amplitude period error {period_err:.1e} (< 1e-2), \
             parallel-mode offset from D {straight:.1e} rad (< 1e-6), net displacement per cycle {disp:.1e} m (< 1e-6)"
        ),
    ))
}

fn enumeration(scan: &GaitScan, secs: f64) -> Outcome {
    let n = scan.gaits.len() as f64;
    let (lo, hi) = (0.7 * PAPER_GAITS, 1.3 * PAPER_GAITS);
    Ok((
        n >= lo && n <= hi && secs < 1800.0,
        format!(
            "{} gaits from {} crossings (accepted {lo:.0} to {hi:.0}), rejected {:?}, scan {secs:.0} s (< 1800 s)",
            scan.gaits.len(),
            scan.crossings,
            scan.rejected
        ),
    ))
}

fn conservative_cot(g: &NnmGait, p: &ModelParams) -> f64 {
    g.switch.per_period / (g.displacement * p.total_mass() * p.g)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

fn nnm_efficiency(scan: &GaitScan) -> Outcome {
    let p = base();
    let window = |lo: f64, hi: f64| {
        median(
            scan.gaits
                .iter()
                .filter(|g| (lo..hi).contains(&g.v_avg()))
                .map(|g| conservative_cot(g, &p))
                .collect(),
        )
    };
    let (slow, fast) = (window(0.02, 0.03), window(0.09, 0.11));
    let within = |x: Option<f64>, target: f64| x.is_some_and(|x| x / target <= 2.0 && target / x <= 2.0);
    let all: Vec<f64> = scan.gaits.iter().map(|g| conservative_cot(g, &p)).collect();
    let fmt = |x: Option<f64>| x.map_or("none".to_string(), |x| format!("{x:.3}"));
    Ok((
        within(slow, 0.03) && within(fast, 0.26),
        format!(
            "median CoT {} for v in [0.02, 0.03) m/s (target 0.03 within x2), {} for v in [0.09, 0.11) m/s (target 0.26 within x2); \
             set spans CoT {:.3} to {:.3}",
            fmt(slow),
            fmt(fast),
            all.iter().copied().fold(f64::INFINITY, f64::min),
            all.iter().copied().fold(0.0, f64::max)
        ),
    ))
}

/// Symmetric orbits near `energy` about `(c, -c)`, shortest period first.
fn nbo_seeds(c: f64, energy: f64) -> Result<Vec<PeriodicOrbit>, Error> {
    let p = base().with_diagonal_eq(c);
    let guesses = diagonal_seeds(&p, energy, &SeedScan::default(), 8);
    let (orbits, _) = solve_distinct(&guesses, &p, &NboOptions::default());
    if orbits.is_empty() {
        return Err(Error::Degenerate(format!("no orbit near E = {energy} about c = {c}")));
    }
    Ok(orbits)
}

/// Joint torque the orbit needs, with accelerations taken from the
/// five-coordinate constrained model.
fn max_torque(o: &PeriodicOrbit, p: &ModelParams) -> Result<f64, Error> {
    let model = ConstrainedModel::new(*p);
    let mut worst: f64 = 0.0;
    for y in &o.path {
        let s = ShapeState::from_array(y);
        let (q, dq) = model.initial_velocity(&Pose::default(), &s)?;
        let (ddq, _) = model.accelerations(&q, &dq)?;
        let tau = inverse_dynamics(p, &s, &Vector2::new(ddq[3], ddq[4]))?;
        worst = worst.max(tau.amax());
    }
    Ok(worst)
}

fn nbo_validity(orbits: &[PeriodicOrbit], fam: &OrbitFamily) -> Outcome {
    let p = base().with_diagonal_eq(0.6);
    let all: Vec<&PeriodicOrbit> = orbits.iter().chain(&fam.orbits).collect();
    let residual = all.iter().map(|o| o.residual).fold(0.0, f64::max);
    let rotation = all.iter().map(|o| o.rotation.abs()).fold(0.0, f64::max);
    let min_speed = all.iter().map(|o| o.min_speed).fold(f64::INFINITY, f64::min);
    let mut torque: f64 = 0.0;
    let mut zero_cot = true;
    let mut symmetry: f64 = 0.0;
    for o in orbits.iter().chain(fam.orbits.iter().step_by(4)) {
        torque = torque.max(max_torque(o, &p)?);
        let e = evaluate_nbo("nbo", o, LossModel::Conservative, &FrictionParams::default(), &p, Tolerances::default())?;
        zero_cot &= e.cot == 0.0 && e.e_req == 0.0;
        symmetry = symmetry.max(reflection_defect(o, &p, Tolerances::new(1e-12, 1e-14), 400)?);
    }
    // a G_perp brake orbit crosses D normal to it, so it solves the same
    // boundary value problem and must be filtered out
    let nnm = shoot_brake_orbit(&p, Branch::Perp, 2.0, None, &ShootOptions::default())?;
    let tol = Tolerances::new(1e-12, 1e-14);
    let mid = flow(&p, &[nnm.p[0], nnm.p[1], 0.0, 0.0], 0.5 * nnm.t_half, tol)?;
    let mut nodes = vec![mid];
    for _ in 1..8 {
        let last = *nodes.last().expect("nonempty");
        nodes.push(flow(&p, &last, nnm.period() / 8.0, tol)?);
    }
    let filtered = matches!(
        solve_nbo(&NboGuess { nodes, period: nnm.period() }, &p, &NboOptions::default()),
        Err(Error::ConvergedToBrakeOrbit { .. })
    );
    Ok((
        residual < 1e-8 && torque < 1e-8 && zero_cot && rotation < 1e-6 && min_speed > 1e-3 && filtered && symmetry < 1e-6,
        format!(
            "{} orbits: residual {residual:.1e} (< 1e-8), torque {torque:.1e} N m (< 1e-8), conservative CoT exactly 0: {zero_cot}, \
             rotation {rotation:.1e} rad (< 1e-6), min joint speed {min_speed:.3} rad/s (> 1e-3), brake orbit rejected: {filtered}, \
             reflection defect {symmetry:.1e} rad (< 1e-6)",
            all.len()
        ),
    ))
}

fn continuation(fam: &OrbitFamily) -> Outcome {
    let os = &fam.orbits;
    let monotone = os.windows(2).all(|w| w[1].energy > w[0].energy);
    let d_increasing = os.windows(2).all(|w| w[1].displacement > w[0].displacement);
    let (lo, hi) = (&os[0], os.last().expect("nonempty"));
    let collapse = fam.collapse.map_or("none".to_string(), |c| {
        format!("brake orbit (min speed {:.1e} rad/s) at E = {:.2} J", c.min_speed, c.energy)
    });
    Ok((
        monotone && d_increasing && fam.collapse.is_some() && os.len() >= 5,
        format!(
            "{} orbits, E {:.2} to {:.2} J, energy monotone: {monotone}, d {:.3} to {:.3} m increasing: {d_increasing}, \
             low-energy end: {collapse}",
            os.len(),
            lo.energy,
            hi.energy,
            lo.displacement,
            hi.displacement
        ),
    ))
}

fn scaling(scan: &GaitScan, fam: &OrbitFamily) -> Outcome {
    let p = base();
    let s = ParamScaling::new(4.0, 0.5, 2.0)?;
    let step = (scan.gaits.len() / 10).max(1);
    let (mut rel, mut dist, mut nnm, mut nbo): (f64, f64, usize, usize) = (0.0, 0.0, 0, 0);
    for g in scan.gaits.iter().step_by(step).take(10) {
        let c = check_nnm_scaling(g, &p, &s, &SwitchOptions::default())?;
        rel = rel.max(c.max_rel_error);
        dist = dist.max(c.path_distance);
        nnm += 1;
    }
    let n = fam.orbits.len();
    for o in [&fam.orbits[0], &fam.orbits[n / 2], &fam.orbits[n - 1]] {
        let c = check_orbit_scaling(o, &p, &s, &NboOptions::default())?;
        rel = rel.max(c.max_rel_error);
        dist = dist.max(c.path_distance);
        nbo += 1;
    }
    Ok((
        nnm >= 10 && nbo >= 3 && rel < 1e-3 && dist < 1e-4,
        format!(
            "{nnm} NNM gaits and {nbo} NBOs under k x4, m x1/2, l x2: relative error {rel:.1e} (< 1e-3), path distance {dist:.1e} rad (< 1e-4)"
        ),
    ))
}

fn landau(scan: &GaitScan) -> Outcome {
    let p = base();
    let g = trace_generator(&p, Branch::Perp, (1e-3, 200.0), &TraceOptions::default());
    let so = ShootOptions {
        path_samples: 400,
        ..ShootOptions::default()
    };
    let n = g.samples.len();
    if n < 2 {
        return Err(Error::Degenerate("generator too short".into()));
    }
    let mut period_err: f64 = 0.0;
    for k in (0..10).map(|i| i * (n - 1) / 9) {
        let s = g.samples[k];
        let o = shoot_brake_orbit(&p, Branch::Perp, s.energy, Some((s.p, s.t_half)), &so)?;
        period_err = period_err.max((landau_half_period(&o, &p)? / o.t_half - 1.0).abs());
    }
    let e_hi = g.samples[n - 1].energy;
    let mut disp_err: f64 = 0.0;
    let step = (scan.gaits.len() / 5).max(1);
    for gait in scan.gaits.iter().step_by(step).take(5) {
        let opts = SwitchOptions {
            sim: SimOptions {
                sample_dt: Some(gait.period / 4000.0),
                ..SimOptions::default()
            },
            ..SwitchOptions::default()
        };
        let traj = run_switching_gait(&gait.plan(), 1, &p, &opts)?;
        let path: Vec<[f64; 2]> = traj.samples.iter().map(|s| s.r).collect();
        let pm = displacement_from_path(&path, &p, Tolerances::new(1e-12, 1e-14))?;
        disp_err = disp_err.max((pm.d - net_motion(&traj).0).abs());
    }
    Ok((
        period_err < 1e-3 && disp_err < 1e-6,
        format!(
            "half-period error {period_err:.1e} over 10 energies up to {e_hi:.2} J (< 1e-3), \
             path displacement error {disp_err:.1e} m over 5 gaits (< 1e-6)"
        ),
    ))
}

/// Linear interpolation of `ys` at `x` over increasing `xs`.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let i = xs.windows(2).position(|w| w[0] <= x && x <= w[1])?;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    Some(ys[i] + w * (ys[i + 1] - ys[i]))
}

fn friction(fam: &OrbitFamily) -> Outcome {
    let p = base().with_diagonal_eq(0.6);
    let fp = FrictionParams::default();
    let tol = Tolerances::default();
    // the primary part of the family, where speed grows with energy
    let top = fam
        .orbits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.v_avg().total_cmp(&b.1.v_avg()))
        .map_or(0, |(i, _)| i);
    let part = &fam.orbits[..=top];
    let v: Vec<f64> = part.iter().map(|o| o.v_avg()).collect();
    let nbo: Vec<f64> = part
        .iter()
        .map(|o| evaluate_nbo("nbo", o, LossModel::Friction, &fp, &p, tol).map(|e| e.cot))
        .collect::<Result<_, _>>()?;
    let ellipse = BaselineEllipse::default();
    let d_base = evaluate_baseline("baseline", &ellipse, LossModel::Conservative, &fp, &p, tol)?.d;
    let base_at = |v: f64| {
        evaluate_baseline("baseline", &ellipse.with_period(d_base / v), LossModel::Friction, &fp, &p, tol).map(|e| e.cot)
    };
    let base: Vec<f64> = v.iter().map(|&v| base_at(v)).collect::<Result<_, _>>()?;
    let grid: Vec<f64> = (1..=7).map(|i| 0.1 * i as f64).collect();
    let base_grid: Vec<f64> = grid.iter().map(|&v| base_at(v)).collect::<Result<_, _>>()?;
    let nbo_falls = v.windows(2).all(|w| w[1] > w[0]) && nbo.windows(2).all(|w| w[1] < w[0]);
    let base_rises = base_grid.windows(2).all(|w| w[1] > w[0]);
    let diff: Vec<f64> = nbo.iter().zip(&base).map(|(a, b)| a - b).collect();
    let crossing = (1..diff.len())
        .find(|&i| diff[i - 1] > 0.0 && diff[i] <= 0.0)
        .map(|i| v[i - 1] + (v[i] - v[i - 1]) * diff[i - 1] / (diff[i - 1] - diff[i]));
    let at_half = interp(&v, &nbo, 0.5);
    let base_half = base_at(0.5)?;
    let crosses = crossing.is_some_and(|x| x > 0.3 && x < 0.5);
    let in_band = at_half.is_some_and(|c| (0.03..=0.12).contains(&c));
    let fmt = |x: Option<f64>| x.map_or("none".to_string(), |x| format!("{x:.3}"));
    Ok((
        nbo_falls && base_rises && crosses && in_band,
        format!(
            "NBO CoT falls {:.3} to {:.3} over v {:.3} to {:.3} m/s: {nbo_falls}, baseline CoT rises {:.3} to {:.3} over v 0.1 to 0.7: {base_rises}, \
             crossover at v = {} m/s (in (0.3, 0.5)), NBO CoT at 0.5 m/s {} (in [0.03, 0.12]); \
             reported only: baseline CoT at 0.5 m/s {base_half:.3}",
            nbo[0],
            nbo[nbo.len() - 1],
            v[0],
            v[v.len() - 1],
            base_grid[0],
            base_grid[base_grid.len() - 1],
            fmt(crossing),
            fmt(at_half)
        ),
    ))
}

fn pipeline_bytes() -> Result<Vec<u8>, Error> {
    let p = base();
    let mut out = Vec::new();
    let scan = enumerate_nnm_gaits(12, (0.3, 1.0), &p, &ScanOptions::default());
    out.extend(serde_json::to_vec(&scan.gaits).expect("serializable"));
    let orbits = nbo_seeds(1.2, 6.0)?;
    out.extend(serde_json::to_vec(&orbits).expect("serializable"));
    let p12 = p.with_diagonal_eq(1.2);
    let rows: Vec<_> = orbits
        .iter()
        .map(|o| evaluate_nbo("nbo", o, LossModel::Friction, &FrictionParams::default(), &p12, Tolerances::default()))
        .collect::<Result<_, _>>()?;
    write_csv(&rows, &mut out).expect("in-memory write");
    let reports = snake_modes::checks::validation_suite(&p, SEED)?;
    out.extend(serde_json::to_vec(&reports).expect("serializable"));
    Ok(out)
}

fn determinism() -> Outcome {
    let a = pipeline_bytes()?;
    let b = pipeline_bytes()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let c = pool.install(pipeline_bytes)?;
    Ok((
        a == b && a == c,
        format!(
            "gait scan, orbit search, friction CSV and validation reports: {} bytes, identical across two runs: {}, with 4 threads: {}",
            a.len(),
            a == b,
            a == c
        ),
    ))
}

fn main() {
    let mut lines = Vec::new();
    lines.push(run(1, "connection correctness", connection));
    lines.push(run(2, "reduced vs full equivalence", reduced_vs_full));
    lines.push(run(3, "energy conservation", energy));
    lines.push(run(4, "NNM validity", nnm_validity));

    let t0 = Instant::now();
    let scan = enumerate_nnm_gaits(200, (0.21, 1.3), &base(), &ScanOptions::default());
    let scan_secs = t0.elapsed().as_secs_f64();
    lines.push(run(5, "NNM gait enumeration", || enumeration(&scan, scan_secs)));
    lines.push(run(6, "NNM gait efficiency", || nnm_efficiency(&scan)));

    let p06 = base().with_diagonal_eq(0.6);
    let nbo = nbo_seeds(0.6, 32.0);
    let fam = nbo
        .as_ref()
        .ok()
        .map(|o| continue_family(&o[0], (20.0, 46.0), 1.0, &p06, &NboOptions::default()));
    let need = |f: &dyn Fn(&[PeriodicOrbit], &OrbitFamily) -> Outcome| -> Outcome {
        match (&nbo, &fam) {
            (Ok(o), Some(fam)) => f(o, fam),
            (Err(e), _) => Err(e.clone()),
            _ => Err(Error::Degenerate("no orbit family".into())),
        }
    };
    lines.push(run(7, "NBO validity", || need(&|o, f| nbo_validity(o, f))));
    lines.push(run(8, "continuation", || need(&|_, f| continuation(f))));
    lines.push(run(9, "scaling laws", || need(&|_, f| scaling(&scan, f))));
    lines.push(run(10, "Landau oracle", || landau(&scan)));
    lines.push(run(11, "friction comparison", || need(&|_, f| friction(f))));
    lines.push(run(12, "determinism", determinism));

    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        lines.len() - failed.len(),
        lines.len(),
        if failed.is_empty() { String::new() } else { format!(", failing {failed:?}") }
    );
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

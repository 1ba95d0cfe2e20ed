use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use snake_modes::checks::validation_suite;
use snake_modes::efficiency::{
    evaluate_baseline, evaluate_nbo, evaluate_nnm, write_csv, BaselineEllipse, GaitEvaluation, LossModel,
};
use snake_modes::modal::{diagonal_samples, enumerate_nnm_gaits, trace_generator, Branch, Generator, NnmGait, ScanOptions};
use snake_modes::orbits::{
    continue_family, diagonal_seeds, solve_distinct, solve_nbo, NboGuess, NboOptions, PeriodicOrbit, SeedScan,
};
use snake_modes::scaling::{check_nnm_scaling, check_orbit_scaling, ParamScaling, ScalingCheck};
use snake_modes::sim::{integrate_free, run_switching_gait, SimOptions, SwitchOptions, Trajectory};
use snake_modes::{ModelParams, State};

use crate::config::RunConfig;
use crate::gaits::{self, GaitList, GaitSet};
use crate::output::{sibling, write_atomic, write_json, ItemStatus, Manifest};
use crate::{EvalArgs, FamilyArgs, LossArg, NboArgs, ScaleArgs, ScanArgs, SeedKind, SimulateArgs, ValidateArgs};

const DEFAULT_SEED: u64 = 20_240_501;

pub fn validate(cfg: &RunConfig, params: &ModelParams, a: &ValidateArgs) -> Result<bool> {
    let seed = a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let reports = validation_suite(params, seed)?;
    for r in &reports {
        println!(
            "{} {}: {:.3e} (limit {:.0e}, {} samples)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.limit,
            r.samples
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
    }
    match reports.iter().find(|r| !r.passed) {
        Some(r) => {
            eprintln!("validation failed: {}", r.name);
            Ok(false)
        }
        None => Ok(true),
    }
}

pub fn simulate(cfg: &RunConfig, params: &ModelParams, a: &SimulateArgs) -> Result<bool> {
    let [a1, a2, d1, d2] = a.state[..] else {
        bail!("--state needs four values a1,a2,da1,da2");
    };
    let params = match a.eq.as_deref() {
        Some(&[e1, e2]) => params.with_r_eq([e1, e2]),
        Some(_) => bail!("--eq needs two values"),
        None => *params,
    };
    if !(a.duration > 0.0 && a.sample_dt > 0.0) {
        bail!("duration and sample spacing must be positive");
    }
    let opts = SimOptions {
        tol: cfg.tolerances.tolerances(),
        sample_dt: Some(a.sample_dt),
        ..SimOptions::default()
    };
    let traj = integrate_free(&State::new([a1, a2], [d1, d2]), &params, a.duration, &opts)?;
    write_atomic(&a.out, |w| traj.write_csv(w))?;
    write_json(&sibling(&a.out, "meta.json"), &traj.metadata_json())?;
    if let Some(t) = traj.truncated_at {
        eprintln!("stopped near a singular shape at t = {t}");
    }
    println!("{} samples written to {}", traj.samples.len(), a.out.display());
    Ok(true)
}

fn scan_options(cfg: &RunConfig, a: &ScanArgs) -> (usize, (f64, f64), ScanOptions) {
    let mut opts = ScanOptions::default();
    if let Some(e) = a.e_max.or(cfg.scan.e_max) {
        opts.e_max = e;
    }
    if let Some(d) = a.dedup_tol.or(cfg.scan.dedup_tol) {
        opts.dedup_tol = d;
    }
    let samples = a.samples.or(cfg.scan.samples).unwrap_or(200);
    let range = a.range.or(cfg.scan.range.map(|r| (r[0], r[1]))).unwrap_or((0.21, 1.3));
    (samples, range, opts)
}

fn generator_status(g: &Generator) -> ItemStatus {
    let name = format!("generator c={:.6}", g.r_eq[0]);
    match &g.truncated {
        None => ItemStatus::ok(name),
        Some(why) if g.samples.is_empty() => ItemStatus::with(name, "failed", why),
        Some(why) => ItemStatus::with(name, "truncated", why),
    }
}

pub fn find_generators(cfg: &RunConfig, params: &ModelParams, a: &ScanArgs) -> Result<bool> {
    let (n, range, opts) = scan_options(cfg, a);
    let gens: Vec<Generator> = diagonal_samples(n, range)
        .par_iter()
        .map(|&c| trace_generator(&params.with_diagonal_eq(c), Branch::Perp, (opts.e_min, opts.e_max), &opts.trace))
        .collect();
    write_json(&a.out, &gens)?;
    let mut man = Manifest::new("find nnm-generators", &a.out);
    man.items = gens.iter().map(generator_status).collect();
    man.write()?;
    let failed = gens.iter().filter(|g| g.samples.is_empty()).count();
    println!("{} generators traced, {failed} failed", gens.len());
    Ok(failed == 0)
}

pub fn find_gaits(cfg: &RunConfig, params: &ModelParams, a: &ScanArgs) -> Result<bool> {
    let (n, range, opts) = scan_options(cfg, a);
    let scan = enumerate_nnm_gaits(n, range, params, &opts);
    let list = GaitList {
        samples: n,
        range: [range.0, range.1],
        crossings: scan.crossings,
        rejected: scan.rejected,
        gaits: scan.gaits,
    };
    write_json(&a.out, &list)?;
    let mut man = Manifest::new("find nnm-gaits", &a.out);
    man.items = scan.generators.iter().map(generator_status).collect();
    man.write()?;
    println!("{} gaits from {} generator crossings", list.gaits.len(), list.crossings);
    Ok(true)
}

fn nbo_options(cfg: &RunConfig) -> NboOptions {
    let mut o = NboOptions::default();
    if let Some(s) = cfg.nbo.segments {
        o.segments = s;
    }
    if let Some(m) = cfg.nbo.eq_mode {
        o.eq_mode = m;
    }
    if let Some(v) = cfg.nbo.min_speed {
        o.min_speed = v;
    }
    o
}

fn describe(o: &PeriodicOrbit) -> String {
    format!(
        "T = {:.6} s, E = {:.6} J, d = {:.6} m, v = {:.6} m/s, min speed {:.3e} rad/s, residual {:.1e}",
        o.period,
        o.energy,
        o.displacement,
        o.v_avg(),
        o.min_speed,
        o.residual
    )
}

pub fn find_nbo(cfg: &RunConfig, params: &ModelParams, a: &NboArgs) -> Result<bool> {
    let opts = nbo_options(cfg);
    let ellipse = cfg.baseline();
    let c = a.eq.unwrap_or(match a.seed {
        SeedKind::Ellipse => ellipse.center[0],
        SeedKind::Scan => params.r_eq[0],
    });
    let p = params.with_diagonal_eq(c);
    let mut man = Manifest::new("find nbo", &a.out);
    match a.seed {
        SeedKind::Ellipse => {
            let guess = NboGuess::ellipse(&ellipse, opts.segments).scaled(a.velocity_scale, a.period / ellipse.period);
            match solve_nbo(&guess, &p, &opts) {
                Ok(o) => {
                    println!("{}", describe(&o));
                    write_json(&a.out, &o)?;
                    man.items.push(ItemStatus::ok("ellipse seed"));
                    man.write()?;
                    Ok(true)
                }
                Err(e) => {
                    eprintln!("no orbit from the ellipse seed: {e}");
                    man.items.push(ItemStatus::with("ellipse seed", "failed", e));
                    man.write()?;
                    Ok(false)
                }
            }
        }
        SeedKind::Scan => {
            let guesses = diagonal_seeds(&p, a.energy, &SeedScan::default(), opts.segments);
            let (orbits, failed) = solve_distinct(&guesses, &p, &opts);
            for o in &orbits {
                println!("{}", describe(o));
                man.items.push(ItemStatus::ok(format!("orbit T={:.6}", o.period)));
            }
            for (i, e) in failed {
                man.items.push(ItemStatus::with(format!("seed {i}"), "failed", e));
            }
            write_json(&a.out, &orbits)?;
            man.write()?;
            println!("{} distinct orbits from {} seeds", orbits.len(), guesses.len());
            Ok(!orbits.is_empty())
        }
    }
}

pub fn find_family(cfg: &RunConfig, params: &ModelParams, a: &FamilyArgs) -> Result<bool> {
    let seed = gaits::load_orbit(&a.orbit)?;
    if !(a.de > 0.0) {
        bail!("--de must be positive");
    }
    let range = a.range.unwrap_or((seed.energy - 2.0, seed.energy + 2.0));
    let fam = continue_family(&seed, range, a.de, params, &nbo_options(cfg));
    write_json(&a.out, &fam)?;
    let mut man = Manifest::new("find nbo-family", &a.out);
    man.items.push(ItemStatus::ok(format!("{} orbits", fam.orbits.len())));
    if let Some(c) = fam.collapse {
        man.items.push(ItemStatus::with(
            "low energy end",
            "collapsed",
            format!("brake orbit at E = {} J", c.energy),
        ));
    }
    for t in &fam.truncated {
        man.items.push(ItemStatus::with("continuation", "truncated", t));
    }
    man.write()?;
    let (lo, hi) = (fam.orbits.first().expect("seed"), fam.orbits.last().expect("seed"));
    println!(
        "{} orbits, E from {:.4} to {:.4} J, v from {:.4} to {:.4} m/s",
        fam.orbits.len(),
        lo.energy,
        hi.energy,
        lo.v_avg(),
        hi.v_avg()
    );
    Ok(true)
}

enum Item {
    Nnm(NnmGait),
    Nbo(PeriodicOrbit),
    Baseline(BaselineEllipse),
}

fn losses(l: LossArg) -> &'static [LossModel] {
    match l {
        LossArg::Conservative => &[LossModel::Conservative],
        LossArg::Friction => &[LossModel::Friction],
        LossArg::Both => &[LossModel::Conservative, LossModel::Friction],
    }
}

fn file_tag(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "gaits".into())
}

fn baseline_csv(w: &mut dyn std::io::Write, e: &BaselineEllipse, params: &ModelParams) -> std::io::Result<()> {
    writeln!(w, "t,r1,r2,dr1,dr2,tau1,tau2")?;
    let n = 400;
    for i in 0..=n {
        let t = e.period * i as f64 / n as f64;
        let (s, ddr) = e.kinematics(t);
        let tau = snake_modes::dynamics::inverse_dynamics(&params.rigid(), &s, &ddr)
            .map_err(|er| std::io::Error::new(std::io::ErrorKind::Other, er.to_string()))?;
        writeln!(w, "{},{},{},{},{},{},{}", t, s.r[0], s.r[1], s.dr[0], s.dr[1], tau[0], tau[1])?;
    }
    Ok(())
}

fn item_trajectory(item: &Item, params: &ModelParams, opts: &SimOptions) -> snake_modes::Result<Option<Trajectory>> {
    Ok(match item {
        Item::Nnm(g) => {
            let so = SwitchOptions {
                sim: SimOptions {
                    sample_dt: Some(g.period / 400.0),
                    ..*opts
                },
                ..SwitchOptions::default()
            };
            Some(run_switching_gait(&g.plan(), 1, params, &so)?)
        }
        Item::Nbo(o) => {
            let so = SimOptions {
                sample_dt: Some(o.period / 400.0),
                ..*opts
            };
            Some(integrate_free(&o.state(), &params.with_r_eq(o.r_eq), o.period, &so)?)
        }
        Item::Baseline(_) => None,
    })
}

pub fn eval(cfg: &RunConfig, params: &ModelParams, a: &EvalArgs) -> Result<bool> {
    let tol = cfg.tolerances.tolerances();
    let fp = cfg.friction();
    let mut man = Manifest::new("eval", &a.out);
    let mut items: Vec<(String, Item)> = Vec::new();
    for path in &a.gaits {
        let tag = file_tag(path);
        match gaits::load(path) {
            Ok(set) => {
                let limit = a.limit.unwrap_or(set.len());
                match set {
                    GaitSet::Nnm(g) => items.extend(
                        g.into_iter().take(limit).enumerate().map(|(i, g)| (format!("{tag}-nnm-{i}"), Item::Nnm(g))),
                    ),
                    GaitSet::Nbo(o) => items.extend(
                        o.into_iter().take(limit).enumerate().map(|(i, o)| (format!("{tag}-nbo-{i}"), Item::Nbo(o))),
                    ),
                }
            }
            Err(e) => man.items.push(ItemStatus::with(path.display().to_string(), "missing", format!("{e:#}"))),
        }
    }
    if let Some(vs) = &a.baseline_speeds {
        let base = cfg.baseline();
        let d = evaluate_baseline("baseline", &base, LossModel::Conservative, &fp, params, tol)
            .context("baseline loop")?
            .d;
        for &v in vs {
            if !(v > 0.0) {
                bail!("baseline speeds must be positive");
            }
            items.push((format!("baseline-v{v}"), Item::Baseline(base.with_period(d / v))));
        }
    }
    let switch = SwitchOptions {
        sim: SimOptions {
            tol,
            ..SimOptions::default()
        },
        ..SwitchOptions::default()
    };
    let rows: Vec<Vec<(String, snake_modes::Result<GaitEvaluation>)>> = items
        .par_iter()
        .map(|(id, item)| {
            losses(a.loss)
                .iter()
                .map(|&loss| {
                    let r = match item {
                        Item::Nnm(g) => evaluate_nnm(id, g, loss, &fp, params, &switch),
                        Item::Nbo(o) => evaluate_nbo(id, o, loss, &fp, params, tol),
                        Item::Baseline(e) => evaluate_baseline(id, e, loss, &fp, params, tol),
                    };
                    (format!("{id} {loss}"), r)
                })
                .collect()
        })
        .collect();
    let mut ok = Vec::new();
    for (name, r) in rows.into_iter().flatten() {
        match r {
            Ok(e) => {
                man.items.push(ItemStatus::ok(name));
                ok.push(e);
            }
            Err(e) => man.items.push(ItemStatus::with(name, "failed", e)),
        }
    }
    write_atomic(&a.out, |w| write_csv(&ok, w))?;
    if let Some(dir) = &a.traj_dir {
        let opts = SimOptions {
            tol,
            ..SimOptions::default()
        };
        let written: Vec<Result<()>> = items
            .par_iter()
            .map(|(id, item)| {
                let path = dir.join(format!("{id}.csv"));
                match (item, item_trajectory(item, params, &opts)?) {
                    (_, Some(t)) => write_atomic(&path, |w| t.write_csv(w)),
                    (Item::Baseline(e), None) => write_atomic(&path, |w| baseline_csv(w, e, params)),
                    _ => Ok(()),
                }
            })
            .collect();
        for ((id, _), r) in items.iter().zip(written) {
            if let Err(e) = r {
                man.items.push(ItemStatus::with(format!("{id} trajectory"), "failed", format!("{e:#}")));
            }
        }
    }
    man.write()?;
    println!("{} rows written to {}, {} failures", ok.len(), a.out.display(), man.failures());
    Ok(true)
}

#[derive(Serialize)]
struct ScaleEntry {
    item: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    check: Option<ScalingCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    passed: bool,
}

#[derive(Serialize)]
struct ScaleReport {
    scaling: ParamScaling,
    time_factor: f64,
    tol: f64,
    entries: Vec<ScaleEntry>,
}

pub fn scale(params: &ModelParams, a: &ScaleArgs) -> Result<bool> {
    let s = ParamScaling::new(a.k, a.m, a.l)?;
    let mut jobs: Vec<(String, Item)> = Vec::new();
    for path in &a.gaits {
        let tag = file_tag(path);
        match gaits::load(path)? {
            GaitSet::Nnm(g) => jobs.extend(
                g.into_iter().take(a.limit).enumerate().map(|(i, g)| (format!("{tag}-nnm-{i}"), Item::Nnm(g))),
            ),
            GaitSet::Nbo(o) => jobs.extend(
                o.into_iter().take(a.limit).enumerate().map(|(i, o)| (format!("{tag}-nbo-{i}"), Item::Nbo(o))),
            ),
        }
    }
    let entries: Vec<ScaleEntry> = jobs
        .par_iter()
        .map(|(id, item)| {
            let r = match item {
                Item::Nnm(g) => check_nnm_scaling(g, params, &s, &SwitchOptions::default()),
                Item::Nbo(o) => check_orbit_scaling(o, params, &s, &NboOptions::default()),
                Item::Baseline(_) => unreachable!("baseline loops are not scaled"),
            };
            match r {
                Ok(c) => ScaleEntry {
                    item: id.clone(),
                    passed: c.max_rel_error < a.tol,
                    check: Some(c),
                    error: None,
                },
                Err(e) => ScaleEntry {
                    item: id.clone(),
                    check: None,
                    error: Some(e.to_string()),
                    passed: false,
                },
            }
        })
        .collect();
    for e in &entries {
        match &e.check {
            Some(c) => println!(
                "{} {}: relative error {:.2e}, path distance {:.2e}",
                if e.passed { "PASS" } else { "FAIL" },
                e.item,
                c.max_rel_error,
                c.path_distance
            ),
            None => println!("FAIL {}: {}", e.item, e.error.as_deref().unwrap_or("")),
        }
    }
    let all = entries.iter().all(|e| e.passed);
    write_json(
        &a.out,
        &ScaleReport {
            scaling: s,
            time_factor: s.time_factor(),
            tol: a.tol,
            entries,
        },
    )?;
    Ok(all)
}

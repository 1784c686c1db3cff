//! Run orchestration and output files.
//!
//! A run writes four files into its output directory:
//!
//! * `diagnostics.csv`: one row per snapshot,
//! * `profiles_{i}.csv`: `r, rho, e_field` on the radial nodes of snapshot `i`,
//! * `summary.json`: condition reports and every requested check,
//! * `run.log`: a plain-text account of the run.
//!
//! Floats are written in shortest round-trip form. Nothing time-dependent is
//! written, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::background::BackgroundProfile;
use crate::bounds::{
    bootstrap_iterate, check_density_energy_bound, choose_exponents, energy_total, field_energy, field_ratio_check,
    field_sups, fit_decay_exponent, gbu_decompose, minimize_derivfield, prelim_inequalities_check, tail_energy_check,
    weighted_norm, DerivFieldConstants, DiagnosticsRecord, GBUParams, GbuSampling,
};
use crate::coulomb::{
    oracle_field, radial_grid, solve_field_cartesian, solve_field_radial, with_breakpoints, OracleDensity,
    RadialDensity, RadialField,
};
use crate::extfield::ExtFieldKind;
use crate::kinetic::{
    f_constancy_drift, measure_qf, picard_solve, support_upper_bound, KineticSetup, PerturbationFamily, Solution,
};
use crate::report::ConditionReport;
use crate::scenario::{Mode, OracleDensityKind, Scenario, ValidatedScenario};
use crate::traj::PhaseState;
use crate::{Error, Result, Vec3};

/// Column names of `diagnostics.csv` for the given weighted-norm exponents.
pub fn diagnostics_header(q_list: &[f64]) -> Vec<String> {
    let mut cols = vec!["time".to_string(), "qf_lower".into(), "qg".into()];
    cols.extend(q_list.iter().map(|q| format!("norm_q{q}")));
    cols.extend(
        [
            "energy_total",
            "tail_energy",
            "sup_e",
            "sup_grad_e",
            "picard_iters",
            "picard_residual",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols
}

pub const PROFILE_HEADER: [&str; 3] = ["r", "rho", "e_field"];

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub v_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub reports: Vec<ConditionReport>,
    pub picard: PicardSummary,
    pub times: Vec<f64>,
    /// One entry per requested check, keyed by check name.
    pub checks: BTreeMap<String, Value>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub solution: Solution,
    pub records: Vec<DiagnosticsRecord>,
    pub summary: Summary,
    pub log: Vec<String>,
}

/// Rejects scenario features that the time-dependent solver does not cover.
pub fn check_runnable(s: &Scenario) -> Result<()> {
    if s.mode == Mode::Cartesian3d {
        return Err(Error::validation(
            "mode",
            "runs use the radial solver; cartesian3d is available to the oracle command",
        ));
    }
    if s.extfield.kind == ExtFieldKind::Dipole {
        return Err(Error::validation(
            "extfield.kind",
            "a dipole field breaks radial symmetry and cannot be used in radial mode",
        ));
    }
    let p = &s.perturbation;
    if p.family == PerturbationFamily::GaussianBump && p.center.iter().any(|c| *c != 0.0) {
        return Err(Error::validation(
            "perturbation.center",
            "radial mode needs the perturbation centred at the origin",
        ));
    }
    Ok(())
}

pub fn kinetic_setup(s: &Scenario) -> KineticSetup {
    KineticSetup {
        background: s.background_profile(),
        initial: s.perturbation,
        external: s.extfield,
        nodes: radial_grid(s.grid.r_max, s.grid.n_r, s.grid.stretch),
        tail_exponent: s.grid.tail_exponent,
        n_u: s.grid.n_u,
        n_mu: s.grid.n_mu,
        t_end: s.time.t_end,
        dt: s.time.dt,
        snapshot_stride: s.time.snapshot_stride,
        tol: s.picard.tol,
        max_iter: s.picard.max_iter,
        v_margin: s.picard.v_margin,
        p_cut: 2.0 * s.background.w,
    }
}

fn log_radii(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// Decay exponent of `|ρ|` over the nodes inside `window`.
pub fn density_decay(rho: &RadialDensity, window: [f64; 2]) -> Result<f64> {
    let samples: Vec<(f64, f64)> = rho
        .nodes
        .iter()
        .zip(&rho.values)
        .filter(|(r, _)| **r >= window[0] && **r <= window[1])
        .map(|(&r, &v)| (r, v.abs()))
        .collect();
    fit_decay_exponent(&samples, window[0])
}

/// Solves the scenario and evaluates the requested diagnostics in memory.
pub fn execute(v: &ValidatedScenario) -> Result<RunOutput> {
    let s = &v.scenario;
    check_runnable(s)?;
    let d = &s.diagnostics;
    let mut log = vec![format!("scenario {}", s.name)];
    for rep in &v.reports {
        for c in &rep.clauses {
            log.push(format!("condition {} {}: {:?}", rep.condition, c.name, c.status));
        }
    }

    let setup = kinetic_setup(s);
    let solution = picard_solve(&setup)?;
    for (i, r) in solution.residuals.iter().enumerate() {
        log.push(format!("picard sweep {} residual {}", i + 1, fmt(*r)));
    }
    let times = solution.times();
    let state = &solution.state;
    let profile = state.background;
    let w = profile.w;
    let tail = s.grid.tail_exponent;

    let qf = measure_qf(state, &times);
    let fields: Vec<&RadialField> = solution.snapshots.iter().map(|sn| &sn.field).collect();
    let q0 = s.perturbation.support_radius(&profile);
    let qf_upper = support_upper_bound(q0, &times, &fields, &s.extfield);

    let mut records = Vec::with_capacity(times.len());
    for (k, snap) in solution.snapshots.iter().enumerate() {
        let ks: Vec<f64> = snap.moments.iter().map(|m| m.k).collect();
        let (sup_e, sup_grad_e) = field_sups(&snap.field);
        records.push(DiagnosticsRecord {
            time: snap.time,
            qf_lower: qf[k],
            qg: qf[k].max(w),
            norms: d.q_list.iter().map(|&q| weighted_norm(&snap.rho, q)).collect(),
            energy_total: energy_total(&setup.nodes, &ks, tail),
            field_energy: field_energy(&snap.field),
            tail_energy: tail_energy_check(&setup.nodes, &snap.moments, tail).lhs,
            sup_e,
            sup_grad_e,
            picard_iters: solution.iterations(),
            picard_residual: snap.residual,
        });
    }

    let mut checks = BTreeMap::new();
    checks.insert("qf_upper".to_string(), json!(qf_upper));
    if d.wants("conditions") {
        checks.insert("conditions".into(), serde_json::to_value(&v.reports)?);
    }
    if d.wants("energy") {
        let e0 = records[0].energy_total;
        let c0 = e0 + records[0].field_energy;
        let rel = |x: f64, base: f64| {
            if base != 0.0 {
                (x - base).abs() / base.abs()
            } else {
                x.abs()
            }
        };
        let var = records.iter().map(|r| rel(r.energy_total, e0)).fold(0.0, f64::max);
        let cvar = records
            .iter()
            .map(|r| rel(r.energy_total + r.field_energy, c0))
            .fold(0.0, f64::max);
        checks.insert(
            "energy".into(),
            json!({
                "kinetic": records.iter().map(|r| r.energy_total).collect::<Vec<_>>(),
                "field": records.iter().map(|r| r.field_energy).collect::<Vec<_>>(),
                "max_rel_variation": var,
                "conserved_max_rel_variation": cvar,
            }),
        );
        log.push(format!(
            "energy: kinetic variation {}, kinetic+field variation {}",
            fmt(var),
            fmt(cvar)
        ));
    }
    // measured constant of ∫|g| ≤ C (k^{3/5} + k^{1/2}), needed by derivfield
    let mut c_abs = 0.0f64;
    let mut c_rho = Vec::new();
    for snap in &solution.snapshots {
        let ks: Vec<f64> = snap.moments.iter().map(|m| m.k).collect();
        let abs: Vec<f64> = snap.moments.iter().map(|m| m.abs_g).collect();
        let tol = 1e-12 * snap.rho.sup_abs().max(1e-300);
        c_rho.push(check_density_energy_bound(&snap.rho.values, &ks, tol)?);
        c_abs = c_abs.max(check_density_energy_bound(&abs, &ks, tol)?);
    }
    if d.wants("density_energy") {
        checks.insert(
            "density_energy".into(),
            json!({ "density_ratio": c_rho, "abs_ratio_max": c_abs }),
        );
    }
    if d.wants("tail_energy") {
        let rows: Vec<Value> = solution
            .snapshots
            .iter()
            .map(|snap| {
                let te = tail_energy_check(&setup.nodes, &snap.moments, tail);
                json!({ "time": snap.time, "lhs": te.lhs, "rhs": te.rhs, "holds": te.holds(1e-6) })
            })
            .collect();
        checks.insert("tail_energy".into(), json!({ "p_cut": 2.0 * w, "snapshots": rows }));
    }
    if d.wants("decay_fit") {
        let n6_0 = weighted_norm(&solution.snapshots[0].rho, 6.0).value;
        let rows: Vec<Value> = solution
            .snapshots
            .iter()
            .map(|snap| {
                let n6 = weighted_norm(&snap.rho, 6.0).value;
                match density_decay(&snap.rho, d.decay_window) {
                    Ok(e) => json!({ "time": snap.time, "exponent": e, "norm6_ratio": n6 / n6_0 }),
                    Err(err) => json!({ "time": snap.time, "exponent": null, "error": err.to_string(), "norm6_ratio": n6 / n6_0 }),
                }
            })
            .collect();
        checks.insert(
            "decay_fit".into(),
            json!({ "window": d.decay_window, "snapshots": rows }),
        );
    }
    if d.wants("field_ratios") {
        let sel = choose_exponents(d.p)?;
        let base = log_radii(1.0, s.grid.r_max, d.probe_count);
        let extended = log_radii(1.0, d.probe_r_max, d.probe_count);
        let mut worst = [0.0f64; 4];
        let mut rows = Vec::new();
        for snap in &solution.snapshots {
            let a = field_ratio_check(&snap.field, &snap.rho, &sel, &base)?;
            let b = field_ratio_check(&snap.field, &snap.rho, &sel, &extended)?;
            worst[0] = worst[0].max(a.c_field);
            worst[1] = worst[1].max(a.c_grad);
            worst[2] = worst[2].max(b.c_field);
            worst[3] = worst[3].max(b.c_grad);
            rows.push(json!({ "time": snap.time, "base": a, "extended": b }));
        }
        checks.insert(
            "field_ratios".into(),
            json!({
                "selection": sel,
                "probe_r_max": [s.grid.r_max, d.probe_r_max],
                "c_field": [worst[0], worst[2]],
                "c_grad": [worst[1], worst[3]],
                "snapshots": rows,
            }),
        );
    }
    if d.wants("derivfield") {
        let rows: Vec<Value> = solution
            .snapshots
            .iter()
            .zip(&records)
            .map(|(snap, rec)| {
                let c = DerivFieldConstants::from_measurements(c_abs, rec.energy_total);
                let opt = minimize_derivfield(&c, snap.rho.sup_abs(), snap.rho.sup_slope());
                json!({
                    "time": snap.time,
                    "constants": c,
                    "optimum": opt,
                    "measured": rec.sup_grad_e,
                    "holds": rec.sup_grad_e <= opt.bound,
                })
            })
            .collect();
        checks.insert("derivfield".into(), json!({ "snapshots": rows }));
    }

    // constants shared by the velocity-support checks
    let c0 = v
        .reports
        .iter()
        .find(|r| r.condition == "III")
        .and_then(|r| r.clause("decay_r2"))
        .and_then(|c| c.measured)
        .unwrap_or(0.0);
    let c1 = records
        .iter()
        .map(|r| r.sup_e / r.qg.powf(4.0 / 3.0))
        .fold(0.0, f64::max);
    let t_end = *times.last().unwrap();
    let params = GBUParams::new(*qf.last().unwrap(), w, c0, c1, t_end);

    if d.wants("gbu") {
        let probe = PhaseState::new(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.3, 0.2, 0.0));
        let mut cfg = GbuSampling {
            strata: d.gbu_strata,
            per_stratum: d.gbu_per_stratum,
            r_min: 1e-2,
            r_max: s.grid.r_max,
            seed: s.seed,
        };
        let single = gbu_decompose(state, t_end, probe, &params, &cfg);
        cfg.per_stratum *= 2;
        let doubled = gbu_decompose(state, t_end, probe, &params, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed);
        let v_cap = state.qg_running + 0.5;
        let probes: Vec<PhaseState> = (0..d.gbu_prelim_probes)
            .map(|_| {
                let x = Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                );
                let v = Vec3::new(
                    rng.gen_range(-v_cap..v_cap),
                    rng.gen_range(-v_cap..v_cap),
                    rng.gen_range(-v_cap..v_cap),
                );
                PhaseState::new(x, v)
            })
            .collect();
        let prelim = prelim_inequalities_check(
            &state.history,
            t_end,
            probe,
            &probes,
            params.delta,
            params.p,
            w,
            s.time.dt,
        );
        let stable = |a: f64, b: f64| {
            if a == 0.0 && b == 0.0 {
                1.0
            } else {
                a.max(b) / a.min(b)
            }
        };
        log.push(format!(
            "gbu: I_G {} I_B {} I_U {} (delta {}, truncated {})",
            fmt(single.i_g),
            fmt(single.i_b),
            fmt(single.i_u),
            fmt(params.delta),
            params.truncated
        ));
        checks.insert(
            "gbu".into(),
            json!({
                "params": params,
                "probe": { "x": [probe.x.x, probe.x.y, probe.x.z], "v": [probe.v.x, probe.v.y, probe.v.z] },
                "single": single,
                "doubled": doubled,
                "change": [
                    stable(single.ratio_g, doubled.ratio_g),
                    stable(single.ratio_b, doubled.ratio_b),
                    stable(single.ratio_u, doubled.ratio_u),
                ],
                "partition_holds": [single.partition_holds(3.0), doubled.partition_holds(3.0)],
                "prelim": prelim,
            }),
        );
    }
    if d.wants("bootstrap") {
        let m = (2.0 * w).powf(4.0 / 3.0).max(c0);
        let q_of_t: Vec<(f64, f64)> = times
            .iter()
            .zip(&qf)
            .map(|(&t, &q)| (t, m.powf(15.0 / 13.0) + q))
            .collect();
        let delta_at = |k: usize| GBUParams::new(qf[k], w, c0, c1, times[k]);
        // T₁: last snapshot where Δ is still cut to the elapsed time
        let t1 = (0..times.len())
            .filter(|&k| delta_at(k).truncated)
            .map(|k| times[k])
            .fold(0.0, f64::max);
        // growth constant of Q(t) ≤ Q(t − Δ) + C Δ Q^{13/15}(t) between snapshots
        let c_growth = q_of_t
            .windows(2)
            .map(|p| (p[1].1 - p[0].1) / ((p[1].0 - p[0].0) * p[1].1.powf(13.0 / 15.0)))
            .fold(0.0, f64::max);
        let c2 = if params.c2 > 0.0 { params.c2 } else { 1.0 };
        let replay = bootstrap_iterate(&q_of_t, c2, t1, t_end, c_growth)?;
        checks.insert(
            "bootstrap".into(),
            json!({ "c2": c2, "t1": t1, "t0": t_end, "c_growth": c_growth, "replay": replay }),
        );
    }
    if d.wants("f_constancy") {
        let n = d.constancy_probes;
        let mut drifts = Vec::with_capacity(n);
        for i in 0..n {
            let frac = (i as f64 + 0.5) / n as f64;
            let r = 3.0 * frac;
            let u = 0.9 * w * (1.0 - frac);
            let mu = (2.0 * PI * frac * 3.0).cos();
            let p = PhaseState::new(
                Vec3::new(r, 0.1, 0.0),
                Vec3::new(u * mu, u * (1.0 - mu * mu).sqrt(), 0.0),
            );
            let samples: Vec<f64> = (0..4).map(|j| t_end * (j as f64 + 0.37) / 4.0).collect();
            drifts.push(f_constancy_drift(state, t_end, p, &samples));
        }
        let max = drifts.iter().copied().fold(0.0, f64::max);
        log.push(format!("f constancy: max relative drift {}", fmt(max)));
        checks.insert("f_constancy".into(), json!({ "max_drift": max, "drifts": drifts }));
    }

    let summary = Summary {
        scenario: s.clone(),
        reports: v.reports.clone(),
        picard: PicardSummary {
            iterations: solution.iterations(),
            residuals: solution.residuals.clone(),
            v_cap: solution.quadrature.v_cap,
        },
        times,
        checks,
    };
    log.push("done".into());
    Ok(RunOutput {
        solution,
        records,
        summary,
        log,
    })
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let q_list = &out.summary.scenario.diagnostics.q_list;
    let rows: Vec<Vec<String>> = out
        .records
        .iter()
        .map(|r| {
            let mut row = vec![fmt(r.time), fmt(r.qf_lower), fmt(r.qg)];
            row.extend(r.norms.iter().map(|n| fmt(n.value)));
            row.extend([
                fmt(r.energy_total),
                fmt(r.tail_energy),
                fmt(r.sup_e),
                fmt(r.sup_grad_e),
                r.picard_iters.to_string(),
                fmt(r.picard_residual),
            ]);
            row
        })
        .collect();
    write_csv(&dir.join("diagnostics.csv"), &diagnostics_header(q_list), &rows)?;

    let header: Vec<String> = PROFILE_HEADER.iter().map(|s| s.to_string()).collect();
    for (i, snap) in out.solution.snapshots.iter().enumerate() {
        let rows: Vec<Vec<String>> = snap
            .rho
            .nodes
            .iter()
            .zip(&snap.rho.values)
            .map(|(&r, &rho)| vec![fmt(r), fmt(rho), fmt(snap.field.e(r))])
            .collect();
        write_csv(&dir.join(format!("profiles_{i}.csv")), &header, &rows)?;
    }

    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("run.log");
    fs::write(&path, out.log.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Runs the scenario and writes all output files into `out_dir`.
pub fn run(v: &ValidatedScenario, out_dir: &Path) -> Result<RunOutput> {
    let out = execute(v)?;
    write_outputs(&out, out_dir)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub radius: f64,
    pub fast: f64,
    pub oracle: f64,
    pub rel_err: f64,
    /// Shell-theorem value, for densities that have one.
    pub closed_form: Option<f64>,
}

/// Compares the production field solver against direct quadrature at the
/// configured radii, along the direction `(2, 1, 2)/3`.
pub fn oracle(s: &Scenario) -> Result<Vec<OracleRow>> {
    let o = &s.oracle;
    let dir = Vec3::new(2.0, 1.0, 2.0) / 3.0;
    let radii = log_radii(o.r_lo, o.r_hi, o.radii);
    let (density, breaks, r_trunc, radial): (Box<dyn Fn(&Vec3) -> f64 + Sync>, Vec<f64>, f64, bool) = match o.density {
        OracleDensityKind::UniformBall => {
            let (b, c) = (o.ball_radius, o.ball_density);
            (
                Box::new(move |y: &Vec3| if y.norm() <= b { c } else { 0.0 }),
                vec![b],
                b,
                true,
            )
        }
        OracleDensityKind::Initial => {
            let p = s.perturbation;
            let mass = p.amplitude * p.velocity_mass();
            let radial = p.family == PerturbationFamily::AlgebraicR6 || p.center() == Vec3::zeros();
            let reach = match p.family {
                PerturbationFamily::AlgebraicR6 => 400.0,
                PerturbationFamily::GaussianBump => p.center().norm() + 8.0 * p.spatial_scale,
            };
            (Box::new(move |y: &Vec3| mass * p.spatial(y)), Vec::new(), reach, radial)
        }
    };
    let closed = |r: f64| match o.density {
        OracleDensityKind::UniformBall => {
            let (b, c) = (o.ball_radius, o.ball_density);
            Some(if r <= b {
                4.0 * PI * c * r / 3.0
            } else {
                4.0 * PI * c * b.powi(3) / (3.0 * r * r)
            })
        }
        OracleDensityKind::Initial => None,
    };

    let fast: Box<dyn Fn(&Vec3) -> Vec3> = match s.mode {
        Mode::Radial => {
            if !radial {
                return Err(Error::validation(
                    "perturbation.center",
                    "radial mode needs the density centred at the origin",
                ));
            }
            let nodes = radial_grid(s.grid.r_max, s.grid.n_r, s.grid.stretch);
            let nodes = with_breakpoints(&nodes, &breaks, 1e-9);
            let rho = RadialDensity::from_fn(nodes, s.grid.tail_exponent, |r| density(&Vec3::new(r, 0.0, 0.0)))?;
            let field = solve_field_radial(&rho)?;
            Box::new(move |x: &Vec3| field.eval(x).0)
        }
        Mode::Cartesian3d => {
            let field = solve_field_cartesian(&*density, s.cartesian.edge, s.cartesian.half_width)?;
            Box::new(move |x: &Vec3| field.eval(x).0)
        }
    };
    let od = OracleDensity {
        density: &*density,
        breaks,
        r_trunc,
        radial,
    };
    let mut rows = Vec::with_capacity(radii.len());
    for r in radii {
        let x = dir * r;
        let f = fast(&x).dot(&dir);
        let e = oracle_field(&od, &x, o.tol)?.dot(&dir);
        let rel_err = if e != 0.0 { (f - e).abs() / e.abs() } else { f.abs() };
        rows.push(OracleRow {
            radius: r,
            fast: f,
            oracle: e,
            rel_err,
            closed_form: closed(r),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredProfile {
    pub index: usize,
    pub rho: RadialDensityRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialDensityRecord {
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub e_field: Vec<f64>,
}

fn read_profiles(dir: &Path) -> Result<Vec<(usize, RadialDensityRecord)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(idx) = name
            .strip_prefix("profiles_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<usize>().ok())
        {
            found.push((idx, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::MissingOutput {
            what: "profiles".into(),
            dir: dir.to_path_buf(),
        });
    }
    found.sort();
    let mut out = Vec::with_capacity(found.len());
    for (idx, path) in found {
        let mut rd = csv::Reader::from_path(&path)?;
        let mut rec = RadialDensityRecord {
            r: Vec::new(),
            rho: Vec::new(),
            e_field: Vec::new(),
        };
        for row in rd.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad number in {} column {i}", path.display())))
            };
            rec.r.push(num(0)?);
            rec.rho.push(num(1)?);
            rec.e_field.push(num(2)?);
        }
        out.push((idx, rec));
    }
    Ok(out)
}

/// Offline recomputation of the profile-based checks from a run directory.
pub fn diagnose(dir: &Path) -> Result<Value> {
    let profiles = read_profiles(dir)?;
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Summary = serde_json::from_str(&text)?;
    let s = &summary.scenario;
    let d = &s.diagnostics;
    let sel = choose_exponents(d.p)?;
    let probes = log_radii(1.0, d.probe_r_max, d.probe_count);
    let mut rows = Vec::new();
    for (idx, rec) in &profiles {
        let rho = RadialDensity::new(rec.r.clone(), rec.rho.clone(), s.grid.tail_exponent)?;
        let field = solve_field_radial(&rho)?;
        let e_err = rec
            .r
            .iter()
            .zip(&rec.e_field)
            .map(|(&r, &e)| (field.e(r) - e).abs())
            .fold(0.0, f64::max);
        let norms: Vec<_> = d.q_list.iter().map(|&q| weighted_norm(&rho, q)).collect();
        let decay = density_decay(&rho, d.decay_window).ok();
        let ratios = field_ratio_check(&field, &rho, &sel, &probes)?;
        let (sup_e, sup_grad_e) = field_sups(&field);
        rows.push(json!({
            "index": idx,
            "time": summary.times.get(*idx),
            "norms": norms,
            "decay_exponent": decay,
            "field_ratios": ratios,
            "sup_e": sup_e,
            "sup_grad_e": sup_grad_e,
            "field_mismatch": e_err,
        }));
    }
    Ok(json!({ "scenario": s.name, "snapshots": rows }))
}

/// Background used by a scenario, for callers that only need `F`.
pub fn background_of(s: &Scenario) -> BackgroundProfile {
    s.background_profile()
}

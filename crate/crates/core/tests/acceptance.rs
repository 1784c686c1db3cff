//! End-to-end acceptance checks. Each test writes one verdict line to stderr
//! (bypassing the harness capture) before asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use vpbound::bounds::{bootstrap_iterate, choose_exponents, fit_decay_exponent, sigma_ugly_integral};
use vpbound::coulomb::{oracle_field, radial_grid, solve_field_radial, FieldState, OracleDensity, RadialDensity};
use vpbound::extfield::ExternalField;
use vpbound::kinetic::KineticState;
use vpbound::report::ClauseStatus;
use vpbound::run::{self, diagnostics_header, RunOutput, PROFILE_HEADER};
use vpbound::scenario::load_scenario;
use vpbound::traj::{phase_volume_check, round_trip_error, FieldHistory, PhaseState};
use vpbound::{japanese_bracket, Vec3};

// pinned tolerances
const ORACLE_REL_TOL: f64 = 1e-3;
const UGLY_REL_TOL: f64 = 1e-6;
const FREE_TRANSPORT_TOL: f64 = 1e-12;
const ORDER_RATIO_MIN: f64 = 8.0;
const PHASE_VOLUME_TOL: f64 = 1e-4;
const PICARD_TOL: f64 = 1e-6;
const PICARD_MAX_ITER: usize = 12;
const PICARD_CONTRACTION: f64 = 2.0;
const CONSTANCY_TOL: f64 = 1e-3;
const ENERGY_VARIATION_TOL: f64 = 0.05;
const TAIL_ENERGY_SLACK: f64 = 1e-6;
const DECAY_EXPONENT_MIN: f64 = 5.5;
const NORM6_GROWTH_MAX: f64 = 3.0;
const RATIO_STABILITY: f64 = 2.0;
const FIELD_DECAY_SLACK: f64 = 0.2;
const GBU_CHANGE_MAX: f64 = 2.0;
const GBU_SIGMAS: f64 = 3.0;
const CEILING_REL_TOL: f64 = 0.01;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn verdict(criterion: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {criterion:>2} {tag} {title}: {detail}");
}

struct AcceptanceRun {
    out: RunOutput,
    dir: PathBuf,
    elapsed: Duration,
}

fn acceptance_run() -> &'static AcceptanceRun {
    static RUN: OnceLock<AcceptanceRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let v = load_scenario(&scenario_path("acceptance.toml")).expect("acceptance scenario");
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_run");
        let _ = std::fs::remove_dir_all(&dir);
        let start = Instant::now();
        let out = run::run(&v, &dir).expect("acceptance run");
        AcceptanceRun {
            out,
            dir,
            elapsed: start.elapsed(),
        }
    })
}

fn check<'a>(out: &'a RunOutput, name: &str) -> &'a Value {
    out.summary
        .checks
        .get(name)
        .unwrap_or_else(|| panic!("summary lacks {name}"))
}

#[test]
fn criterion_01_field_solver_against_quadrature_and_shell_theorem() {
    let start = Instant::now();
    let v = load_scenario(&scenario_path("uniform_ball.toml")).unwrap();
    let rows = run::oracle(&v.scenario).unwrap();
    let elapsed = start.elapsed();
    let max_oracle = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let max_closed = rows
        .iter()
        .map(|r| {
            let c = r.closed_form.unwrap();
            (r.fast - c).abs() / c.abs()
        })
        .fold(0.0, f64::max);
    let ok = rows.len() == 20
        && rows.iter().all(|r| (0.1 - 1e-12..=10.0 + 1e-9).contains(&r.radius))
        && max_oracle <= ORACLE_REL_TOL
        && max_closed <= ORACLE_REL_TOL
        && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "field solver",
        ok,
        &format!("max rel err vs quadrature {max_oracle:.2e}, vs closed form {max_closed:.2e}, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_02_ugly_integral_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = 10f64.powf(rng.gen_range(-1.0..2.0));
        let r = 10f64.powf(rng.gen_range(-3.0..1.0));
        let got = sigma_ugly_integral(p, r).unwrap();
        let want = 16.0 / (p * r);
        worst = worst.max((got - want).abs() / want);
    }
    let ok = worst <= UGLY_REL_TOL;
    verdict(
        2,
        "ugly integral",
        ok,
        &format!("max rel err {worst:.2e} over 20 pairs"),
    );
    assert!(ok);
}

#[test]
fn criterion_03_exponent_feasibility() {
    let feasible = [1.0, 2.0, 3.0, 4.0, 4.15];
    let infeasible = [54.0 / 13.0, 4.2, 5.0];
    let good = feasible
        .iter()
        .all(|&q| choose_exponents(q).map(|s| s.satisfies_constraints()).unwrap_or(false));
    let rejected = infeasible.iter().all(|&q| choose_exponents(q).is_err());
    let ok = good && rejected;
    verdict(
        3,
        "exponent feasibility",
        ok,
        &format!("feasible set accepted: {good}, infeasible set rejected: {rejected}"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_free_transport() {
    let v = load_scenario(&scenario_path("acceptance.toml")).unwrap();
    let s = &v.scenario;
    let zero = solve_field_radial(&RadialDensity::zeros(radial_grid(s.grid.r_max, 32, 0.0)).unwrap()).unwrap();
    let hist = FieldHistory::frozen(
        &FieldState::radial(0.0, zero),
        &[0.0, s.time.t_end],
        ExternalField::zero(),
    )
    .unwrap();
    let state = KineticState::new(hist, s.background_profile(), s.perturbation, s.time.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = Vec3::new(
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
        );
        let u = Vec3::new(
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        );
        let t = rng.gen_range(0.0..s.time.t_end);
        let g = state.eval_g(t, &x, &u).value;
        worst = worst.max((g - s.perturbation.g0(&(x - u * t), &u)).abs());
    }
    let ok = worst <= FREE_TRANSPORT_TOL;
    verdict(
        4,
        "free transport",
        ok,
        &format!("max |g - g0(x - tv, v)| = {worst:.2e} over 1000 probes"),
    );
    assert!(ok);
}

#[test]
fn criterion_05_integrator_order_and_phase_volume() {
    // strongly charged ball so that truncation error dominates roundoff
    let rho = RadialDensity::from_fn(radial_grid(20.0, 400, 2.0), 6.0, |r| 5.0 * japanese_bracket(r).powi(-6)).unwrap();
    let field = solve_field_radial(&rho).unwrap();
    let hist = FieldHistory::frozen(&FieldState::radial(0.0, field), &[0.0, 2.0], ExternalField::zero()).unwrap();
    let p = PhaseState::new(Vec3::new(0.8, 0.3, 0.0), Vec3::new(-0.2, 0.6, 0.1));
    let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&dt| round_trip_error(&hist, 2.0, p, 0.0, dt))
        .collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let order = ratios.iter().copied().fold(f64::INFINITY, f64::min).log2();

    let run = acceptance_run();
    let state = &run.out.solution.state;
    let dt = run.out.summary.scenario.time.dt;
    let probes = [
        PhaseState::new(Vec3::new(0.5, 0.1, -0.2), Vec3::new(0.3, 0.0, 0.4)),
        PhaseState::new(Vec3::new(2.0, -1.0, 0.5), Vec3::new(-0.6, 0.2, 0.1)),
        PhaseState::new(Vec3::new(0.05, 0.0, 0.1), Vec3::new(0.0, 0.9, 0.0)),
    ];
    let det_dev = probes
        .iter()
        .map(|&c| (phase_volume_check(&state.history, 1.0, c, 1e-4, 0.0, dt) - 1.0).abs())
        .fold(0.0, f64::max);
    let ok = ratios.iter().all(|&r| r >= ORDER_RATIO_MIN) && order >= 3.5 && det_dev <= PHASE_VOLUME_TOL;
    verdict(
        5,
        "integrator order",
        ok,
        &format!("round-trip ratios {ratios:.2?} (order {order:.2}), max |det - 1| {det_dev:.2e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_self_consistency() {
    let run = acceptance_run();
    let res = &run.out.summary.picard.residuals;
    let last = *res.last().unwrap();
    let contracting = res.windows(2).skip(1).all(|w| w[1] * PICARD_CONTRACTION <= w[0]);
    let drift = check(&run.out, "f_constancy")["max_drift"].as_f64().unwrap();
    let probes = check(&run.out, "f_constancy")["drifts"].as_array().unwrap().len();
    let ok = last < PICARD_TOL
        && res.len() <= PICARD_MAX_ITER
        && contracting
        && probes == 20
        && drift <= CONSTANCY_TOL
        && run.elapsed < Duration::from_secs(300);
    verdict(
        6,
        "self-consistency",
        ok,
        &format!(
            "{} sweeps, final residual {last:.2e}, contracting {contracting}, f drift {drift:.2e}, run time {:.1?}",
            res.len(),
            run.elapsed
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_energy_boundedness() {
    let run = acceptance_run();
    let e = check(&run.out, "energy");
    let var = e["max_rel_variation"].as_f64().unwrap();
    let combined = e["conserved_max_rel_variation"].as_f64().unwrap();
    let tail_ok = run
        .out
        .records
        .iter()
        .all(|r| r.tail_energy <= 2.0 * r.energy_total + TAIL_ENERGY_SLACK);
    let ok = var <= ENERGY_VARIATION_TOL && tail_ok;
    verdict(
        7,
        "energy boundedness",
        ok,
        &format!(
            "kinetic energy variation {var:.3e} (limit {ENERGY_VARIATION_TOL}), tail bound holds {tail_ok}; \
             kinetic plus field energy varies {combined:.3e}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_density_decay() {
    let run = acceptance_run();
    let fits = check(&run.out, "decay_fit")["snapshots"].as_array().unwrap();
    let min_exp = fits
        .iter()
        .map(|f| f["exponent"].as_f64().unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min);
    let max_growth = fits
        .iter()
        .map(|f| f["norm6_ratio"].as_f64().unwrap())
        .fold(0.0, f64::max);
    let ok = fits.len() == run.out.records.len() && min_exp >= DECAY_EXPONENT_MIN && max_growth <= NORM6_GROWTH_MAX;
    verdict(
        8,
        "density decay",
        ok,
        &format!("min fitted exponent {min_exp:.3}, max norm growth {max_growth:.3}"),
    );
    assert!(ok);
}

#[test]
fn criterion_09_field_ratios_and_field_decay() {
    let run = acceptance_run();
    let l = check(&run.out, "field_ratios");
    let pair = |k: &str| -> (f64, f64) {
        let a = l[k].as_array().unwrap();
        (a[0].as_f64().unwrap(), a[1].as_f64().unwrap())
    };
    let stable = |(a, b): (f64, f64)| {
        a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 && a.max(b) / a.min(b) <= RATIO_STABILITY
    };
    let (cf, cg) = (pair("c_field"), pair("c_grad"));

    // synthetic R⁻⁴ density, field by direct quadrature
    let sel = choose_exponents(3.5).unwrap();
    let density = |y: &Vec3| japanese_bracket(y.norm()).powi(-4);
    let od = OracleDensity {
        density: &density,
        breaks: Vec::new(),
        r_trunc: 2000.0,
        radial: true,
    };
    let samples: Vec<(f64, f64)> = (0..=10)
        .map(|i| {
            let r = 2.0 * 20f64.powf(i as f64 / 10.0);
            (r, oracle_field(&od, &Vec3::new(r, 0.0, 0.0), 1e-8).unwrap().norm())
        })
        .collect();
    let decay = fit_decay_exponent(&samples, 1.0).unwrap();
    let floor = sel.q * sel.b - FIELD_DECAY_SLACK;
    let ok = stable(cf) && stable(cg) && decay >= floor;
    verdict(
        9,
        "field ratios",
        ok,
        &format!(
            "|E| ratio {:.4e} -> {:.4e}, |grad E| ratio {:.4e} -> {:.4e} (r_max 40 -> 80); synthetic field decay {decay:.3} >= {floor:.3}",
            cf.0, cf.1, cg.0, cg.1
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_good_bad_ugly() {
    let run = acceptance_run();
    let g = check(&run.out, "gbu");
    let ratios = |k: &str| -> Vec<f64> {
        ["ratio_g", "ratio_b", "ratio_u"]
            .iter()
            .map(|r| g[k][r].as_f64().unwrap())
            .collect()
    };
    let finite = ratios("single").iter().chain(&ratios("doubled")).all(|r| r.is_finite());
    let change: Vec<f64> = g["change"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_f64().unwrap())
        .collect();
    let stable = change.iter().all(|&c| c <= GBU_CHANGE_MAX);
    let se = |k: &str| {
        let s = &g[k];
        let diff = (s["i_sum"].as_f64().unwrap() - s["i_total"].as_f64().unwrap()).abs();
        let se = s["se_sum"].as_f64().unwrap().hypot(s["se_total"].as_f64().unwrap());
        (diff, se)
    };
    let partition = ["single", "doubled"].iter().all(|k| {
        let (d, s) = se(k);
        d <= GBU_SIGMAS * s
    });
    let prelim = &g["prelim"]["clauses"];
    let violations: f64 = prelim
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["measured"].as_f64().unwrap_or(f64::INFINITY))
        .sum();
    let prelim_count = prelim.as_array().unwrap().len();
    let ok = finite && stable && partition && prelim_count == 4 && violations == 0.0;
    verdict(
        10,
        "good/bad/ugly split",
        ok,
        &format!(
            "ratios {:.3?}, change under doubling {change:.3?}, partition within {GBU_SIGMAS} SE {partition}, prelim violations {violations}",
            ratios("single")
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_11_bootstrap_replay() {
    let q: f64 = 5.0;
    let c2 = 0.7;
    let (t1, t0) = (0.25, 4.0);
    let rep = bootstrap_iterate(&[(0.0, q), (t0, q)], c2, t1, t0, 1.0).unwrap();
    let len = q.powf(-41.0 / 60.0) / (4.0 * c2);
    let k_closed = ((t0 - t1) / len).ceil() as usize;
    let exact = rep.k == k_closed && rep.lengths.iter().all(|&l| l == len) && rep.min_length == len;
    let ceil = bootstrap_iterate(&[(0.0, q), (t0, q)], c2, 0.0, 2.0, 1.0)
        .unwrap()
        .ceiling;
    let want = 2f64.powf(7.5);
    let rel = (ceil - want).abs() / want;
    let ok = exact && rel <= CEILING_REL_TOL;
    verdict(
        11,
        "bootstrap replay",
        ok,
        &format!(
            "k = {} (closed form {k_closed}), lengths exact {exact}, ceiling {ceil:.6} vs {want:.6}",
            rep.k
        ),
    );
    assert!(ok);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().to_string(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_12_determinism_and_schema() {
    let v = load_scenario(&scenario_path("small.toml")).unwrap();
    let base = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let (a, b) = (base.join("determinism_a"), base.join("determinism_b"));
    for d in [&a, &b] {
        let _ = std::fs::remove_dir_all(d);
        run::run(&v, d).unwrap();
    }
    let identical = read_all(&a) == read_all(&b);

    let golden = include_str!("golden/diagnostics_header.csv").trim_end();
    let run = acceptance_run();
    let diag = std::fs::read_to_string(run.dir.join("diagnostics.csv")).unwrap();
    let header_ok = diag.lines().next() == Some(golden)
        && diagnostics_header(&run.out.summary.scenario.diagnostics.q_list).join(",") == golden;
    let profile = std::fs::read_to_string(run.dir.join("profiles_0.csv")).unwrap();
    let profile_ok = profile.lines().next() == Some(PROFILE_HEADER.join(",").as_str());
    let rows_ok = diag.lines().count() == run.out.records.len() + 1;
    let all_checks = run
        .out
        .summary
        .scenario
        .diagnostics
        .checks
        .iter()
        .all(|c| run.out.summary.checks.contains_key(c));
    let reports_ok = run
        .out
        .summary
        .reports
        .iter()
        .all(|r| r.clauses.iter().all(|c| c.status != ClauseStatus::Fail));
    let ok = identical && header_ok && profile_ok && rows_ok && all_checks && reports_ok;
    verdict(
        12,
        "determinism and schema",
        ok,
        &format!("byte-identical {identical}, golden header {header_ok}, profile header {profile_ok}, every check present {all_checks}"),
    );
    assert!(ok);
}

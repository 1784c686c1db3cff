//! Scenario files: a TOML description of one experiment.
//!
//! Every section is optional and falls back to the documented defaults.
//! Unknown keys are rejected so a typo cannot silently change a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::{check_condition_i, condition_i_failed, BackgroundProfile, ProfileKind};
use crate::extfield::{check_condition_iii, ExtFieldKind, ExternalField, SampleGrid};
use crate::kinetic::{check_conditions_ii_iv, InitialPerturbation, PerturbationFamily};
use crate::report::ConditionReport;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Radial,
    Cartesian3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub r_max: f64,
    pub n_r: usize,
    /// Clustering of radial nodes toward the origin; 0 gives a uniform grid.
    pub stretch: f64,
    pub n_u: usize,
    pub n_mu: usize,
    /// Power-law decay assumed for the density beyond `r_max`.
    pub tail_exponent: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            r_max: 40.0,
            n_r: 256,
            stretch: 4.0,
            n_u: 32,
            n_mu: 16,
            tail_exponent: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_end: 1.0,
            dt: 0.02,
            snapshot_stride: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub w: f64,
    pub kappa: f64,
    pub kind: ProfileKind,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            w: 1.0,
            kappa: 1.0,
            kind: ProfileKind::Sextic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub v_margin: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-6,
            max_iter: 12,
            v_margin: 0.5,
        }
    }
}

pub const KNOWN_CHECKS: &[&str] = &[
    "conditions",
    "energy",
    "density_energy",
    "tail_energy",
    "decay_fit",
    "field_ratios",
    "derivfield",
    "gbu",
    "bootstrap",
    "f_constancy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Exponents of the weighted norms written per snapshot.
    pub q_list: Vec<f64>,
    /// Decay exponent used by the field-ratio and exponent checks.
    pub p: f64,
    pub checks: Vec<String>,
    /// Probe radii for the field ratios extend from 1 to this value.
    pub probe_r_max: f64,
    pub probe_count: usize,
    /// Radial window of the density decay fit.
    pub decay_window: [f64; 2],
    pub constancy_probes: usize,
    pub gbu_strata: usize,
    pub gbu_per_stratum: usize,
    pub gbu_prelim_probes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            q_list: vec![3.0, 3.5, 6.0],
            p: 3.5,
            checks: KNOWN_CHECKS.iter().map(|s| s.to_string()).collect(),
            probe_r_max: 80.0,
            probe_count: 24,
            decay_window: [10.0, 40.0],
            constancy_probes: 20,
            gbu_strata: 12,
            gbu_per_stratum: 256,
            gbu_prelim_probes: 64,
        }
    }
}

impl DiagnosticsConfig {
    pub fn wants(&self, check: &str) -> bool {
        self.checks.iter().any(|c| c == check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleDensityKind {
    /// The scenario's initial density `∫ g₀ dv`.
    #[default]
    Initial,
    UniformBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub density: OracleDensityKind,
    pub ball_radius: f64,
    pub ball_density: f64,
    pub radii: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            density: OracleDensityKind::Initial,
            ball_radius: 1.0,
            ball_density: 1.0,
            radii: 20,
            r_lo: 0.1,
            r_hi: 10.0,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartesianConfig {
    pub edge: usize,
    pub half_width: f64,
}

impl Default for CartesianConfig {
    fn default() -> Self {
        CartesianConfig {
            edge: 32,
            half_width: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub background: BackgroundConfig,
    pub perturbation: InitialPerturbation,
    pub extfield: ExternalField,
    pub picard: PicardConfig,
    pub diagnostics: DiagnosticsConfig,
    pub oracle: OracleConfig,
    pub cartesian: CartesianConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            mode: Mode::Radial,
            seed: 7,
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            background: BackgroundConfig::default(),
            perturbation: InitialPerturbation::default(),
            extfield: ExternalField::default(),
            picard: PicardConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            oracle: OracleConfig::default(),
            cartesian: CartesianConfig::default(),
        }
    }
}

impl Scenario {
    pub fn background_profile(&self) -> BackgroundProfile {
        BackgroundProfile::new(self.background.w, self.background.kappa, self.background.kind)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// A scenario that passed validation, with its condition reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedScenario {
    pub scenario: Scenario,
    pub reports: Vec<ConditionReport>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Parses scenario text without validating it.
pub fn parse_raw(text: &str) -> Result<Scenario> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Parses and validates scenario text, attaching the condition reports.
pub fn parse_scenario(text: &str) -> Result<ValidatedScenario> {
    validate(parse_raw(text)?)
}

pub fn load_scenario(path: &Path) -> Result<ValidatedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

fn require(ok: bool, clause: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(clause, message))
    }
}

/// Checks parameter ranges, then runs the condition checkers.
pub fn validate(s: Scenario) -> Result<ValidatedScenario> {
    let t = &s.time;
    require(
        t.dt > 0.0 && t.dt.is_finite(),
        "time.dt",
        format!("must be positive, got {}", t.dt),
    )?;
    require(
        t.t_end >= t.dt,
        "time.t_end",
        format!("must be at least dt = {}, got {}", t.dt, t.t_end),
    )?;
    require(t.snapshot_stride >= 1, "time.snapshot_stride", "must be at least 1")?;

    let g = &s.grid;
    require(g.n_r >= 16, "grid.n_r", format!("must be at least 16, got {}", g.n_r))?;
    require(g.r_max > 0.0, "grid.r_max", "must be positive")?;
    require(g.stretch >= 0.0, "grid.stretch", "must be nonnegative")?;
    require(g.n_u >= 4, "grid.n_u", "must be at least 4")?;
    require(g.n_mu >= 2, "grid.n_mu", "must be at least 2")?;
    require(
        g.tail_exponent > 3.0,
        "grid.tail_exponent",
        "must exceed 3 for a finite tail charge",
    )?;

    let b = &s.background;
    require(b.w > 0.0, "background.w", "must be positive")?;
    require(b.kappa > 0.0, "background.kappa", "must be positive")?;

    let p = &s.perturbation;
    require(
        p.velocity_radius > 0.0 && p.velocity_radius <= b.w + 1.0,
        "perturbation.velocity_radius",
        format!("must lie in (0, W + 1], got {}", p.velocity_radius),
    )?;
    require(p.amplitude.is_finite(), "perturbation.amplitude", "must be finite")?;
    if p.family == PerturbationFamily::GaussianBump {
        require(p.spatial_scale > 0.0, "perturbation.spatial_scale", "must be positive")?;
    }

    let e = &s.extfield;
    require(e.amplitude.is_finite(), "extfield.amplitude", "must be finite")?;
    if e.kind == ExtFieldKind::Dipole {
        let axis = e.axis;
        require(
            axis.iter().any(|a| *a != 0.0),
            "extfield.axis",
            "dipole axis must be nonzero",
        )?;
    }
    if e.kind == ExtFieldKind::CoulombTail {
        require(e.cutoff_radius > 0.0, "extfield.cutoff_radius", "must be positive")?;
    }

    require(
        s.picard.tol > 0.0,
        "picard.tol",
        "must be positive (use inf for a single sweep)",
    )?;
    require(s.picard.max_iter >= 1, "picard.max_iter", "must be at least 1")?;
    require(s.picard.v_margin > 0.0, "picard.v_margin", "must be positive")?;

    let d = &s.diagnostics;
    require(
        d.p > 3.0 && d.p < 4.0,
        "diagnostics.p",
        format!("must lie in (3, 4), got {}", d.p),
    )?;
    require(
        d.q_list.iter().all(|q| *q >= 0.0),
        "diagnostics.q_list",
        "exponents must be nonnegative",
    )?;
    if let Some(bad) = d.checks.iter().find(|c| !KNOWN_CHECKS.contains(&c.as_str())) {
        return Err(Error::validation(
            "diagnostics.checks",
            format!("unknown check `{bad}`"),
        ));
    }
    require(d.probe_r_max > 1.0, "diagnostics.probe_r_max", "must exceed 1")?;
    require(d.probe_count >= 5, "diagnostics.probe_count", "must be at least 5")?;
    require(
        d.decay_window[0] >= 0.0 && d.decay_window[1] > d.decay_window[0],
        "diagnostics.decay_window",
        "must be an increasing pair",
    )?;
    require(d.gbu_strata >= 2, "diagnostics.gbu_strata", "must be at least 2")?;
    require(
        d.gbu_per_stratum >= 2,
        "diagnostics.gbu_per_stratum",
        "must be at least 2",
    )?;

    let o = &s.oracle;
    require(o.radii >= 1, "oracle.radii", "must be at least 1")?;
    require(o.r_lo > 0.0 && o.r_hi > o.r_lo, "oracle.r_lo", "need 0 < r_lo < r_hi")?;
    require(o.tol > 0.0, "oracle.tol", "must be positive")?;
    require(o.ball_radius > 0.0, "oracle.ball_radius", "must be positive")?;
    require(
        (2..=crate::coulomb::MAX_CARTESIAN_EDGE).contains(&s.cartesian.edge),
        "cartesian.edge",
        format!("must lie in [2, {}]", crate::coulomb::MAX_CARTESIAN_EDGE),
    )?;
    require(s.cartesian.half_width > 0.0, "cartesian.half_width", "must be positive")?;

    let profile = s.background_profile();
    let rep_i = check_condition_i(&profile);
    if let Some(clause) = condition_i_failed(&rep_i) {
        return Err(Error::validation(clause, "background violates condition (I)"));
    }
    let rep_ii = check_conditions_ii_iv(&profile, &s.perturbation);
    if let Some(c) = rep_ii.first_failure() {
        let clause = if c.name == "nonnegative" {
            "perturbation.amplitude".to_string()
        } else {
            format!("perturbation.{}", c.name)
        };
        return Err(Error::validation(
            clause,
            format!("initial data fails `{}`: {}", c.name, c.note),
        ));
    }
    let grid = SampleGrid::spherical(0.1, 1e3, 25, 26);
    let rep_iii = check_condition_iii(&s.extfield, 0.0, &grid, s.diagnostics.p);
    if let Some(c) = rep_iii.first_failure() {
        return Err(Error::validation(format!("extfield.{}", c.name), c.note.clone()));
    }
    Ok(ValidatedScenario {
        scenario: s,
        reports: vec![rep_i, rep_ii, rep_iii],
    })
}

//! Evaluation of the perturbation `g` along backward characteristics and the
//! Picard loop that makes the field history self-consistent.
//!
//! For a stored history, `g(t, x, v) = g₀(X(0), V(0)) − ∫₀ᵗ 𝓔(s, X(s))·∇F(V(s)) ds`,
//! with the time integral taken by the trapezoid rule on the RK4 step points.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{BackgroundProfile, EnergyFunctionals};
use crate::coulomb::{solve_field_radial, FieldState, RadialDensity, RadialField};
use crate::extfield::ExternalField;
use crate::quadrature::Rule;
use crate::report::ConditionReport;
use crate::traj::{trace, trace_visit, FieldHistory, PhaseState, TotalField};
use crate::{japanese_bracket, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationFamily {
    GaussianBump,
    #[default]
    AlgebraicR6,
}

/// `g₀(x, v) = amplitude · s(x) · φ(|v|)` with `φ(u) = (1 − u²/a²)²` on
/// `u < a` (`a` the velocity radius), and `s(x) = R⁻⁶(x)` or
/// `exp(−|x − c|²/λ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialPerturbation {
    pub family: PerturbationFamily,
    pub amplitude: f64,
    pub center: [f64; 3],
    pub spatial_scale: f64,
    pub velocity_radius: f64,
}

impl Default for InitialPerturbation {
    fn default() -> Self {
        InitialPerturbation {
            family: PerturbationFamily::AlgebraicR6,
            amplitude: 0.05,
            center: [0.0; 3],
            spatial_scale: 1.0,
            velocity_radius: 0.5,
        }
    }
}

impl InitialPerturbation {
    pub fn center(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2])
    }

    #[inline]
    pub fn spatial(&self, x: &Vec3) -> f64 {
        match self.family {
            PerturbationFamily::AlgebraicR6 => {
                let rr = 1.0 + x.norm_squared();
                1.0 / (rr * rr * rr)
            }
            PerturbationFamily::GaussianBump => {
                let d = x - self.center();
                (-d.norm_squared() / (self.spatial_scale * self.spatial_scale)).exp()
            }
        }
    }

    #[inline]
    pub fn velocity_profile(&self, u: f64) -> f64 {
        let a = self.velocity_radius;
        if u >= a {
            return 0.0;
        }
        let s = 1.0 - (u * u) / (a * a);
        s * s
    }

    #[inline]
    pub fn g0(&self, x: &Vec3, v: &Vec3) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let phi = self.velocity_profile(v.norm());
        if phi == 0.0 {
            return 0.0;
        }
        self.amplitude * self.spatial(x) * phi
    }

    /// `∫ φ(|v|) dv = 4π a³ · 8/105`.
    pub fn velocity_mass(&self) -> f64 {
        4.0 * PI * self.velocity_radius.powi(3) * 8.0 / 105.0
    }

    /// Closed-form `ρ(0, x)` at `x = r ê₁`.
    pub fn rho0(&self, r: f64) -> f64 {
        self.amplitude * self.velocity_mass() * self.spatial(&Vec3::new(r, 0.0, 0.0))
    }

    /// Radius of the velocity support of `f₀`.
    pub fn support_radius(&self, background: &BackgroundProfile) -> f64 {
        if self.amplitude == 0.0 {
            background.w
        } else {
            background.w.max(self.velocity_radius)
        }
    }
}

/// Checks conditions (II) and (IV) on `f₀ = F − g₀`.
pub fn check_conditions_ii_iv(background: &BackgroundProfile, initial: &InitialPerturbation) -> ConditionReport {
    let mut report = ConditionReport::new("II/IV");
    let c = initial.center();
    let reach = c.norm() + 4.0 * initial.spatial_scale.abs() + 4.0;
    let dirs = crate::extfield::fibonacci_sphere(24);
    let n_u = 400;
    let u_top = background.w + 1.0;

    // f₀ is separable; its minimum over x sits where amplitude·s(x) is
    // largest (or smallest for negative amplitudes).
    let mut points: Vec<Vec3> = vec![c, Vec3::zeros()];
    for i in 1..=60 {
        let r = reach * i as f64 / 60.0;
        points.extend(dirs.iter().map(|d| c + d * r));
    }
    let mut min_f0 = f64::INFINITY;
    for x in &points {
        for j in 0..=n_u {
            let u = u_top * j as f64 / n_u as f64;
            let v = Vec3::new(u, 0.0, 0.0);
            min_f0 = min_f0.min(background.eval(&v) - initial.g0(x, &v));
        }
    }
    report.check(
        "nonnegative",
        min_f0 >= -1e-14,
        Some(min_f0),
        "min of F - g0 over a dense sample",
    );

    let h = 1e-6;
    let mut sup_dx = 0.0f64;
    let mut sup_dv = 0.0f64;
    for x in points.iter().step_by(7) {
        for j in 0..=80 {
            let u = u_top * j as f64 / 80.0;
            let v = Vec3::new(u, 0.3 * u, 0.0);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                let f0 = |x: &Vec3, v: &Vec3| background.eval(v) - initial.g0(x, v);
                sup_dx = sup_dx.max(((f0(&(x + e), &v) - f0(&(x - e), &v)) / (2.0 * h)).abs());
                sup_dv = sup_dv.max(((f0(x, &(v + e)) - f0(x, &(v - e))) / (2.0 * h)).abs());
            }
        }
    }
    let sup_grad = sup_dx.max(sup_dv);
    report.check(
        "c1_sampled",
        sup_grad.is_finite(),
        Some(sup_grad),
        format!("sampled sup |grad_x f0| = {sup_dx:e}, sup |grad_v f0| = {sup_dv:e}"),
    );

    let radius = initial.support_radius(background);
    report.check(
        "compact_v_support",
        initial.velocity_radius > 0.0 && initial.velocity_radius <= background.w + 1.0,
        Some(radius),
        "velocity support radius of f0",
    );

    // |F − f₀| = |g₀| ≤ C R⁻⁶ for |x| > N with C = |amplitude| · max φ.
    let c_decay = initial.amplitude.abs();
    let n_radius = match initial.family {
        PerturbationFamily::AlgebraicR6 => 0.0,
        PerturbationFamily::GaussianBump => {
            let mut n = 0.0f64;
            for i in 0..=4000 {
                let r = (reach + 20.0) * i as f64 / 4000.0;
                for d in &dirs {
                    let x = d * r;
                    let rr = japanese_bracket(r).powi(6);
                    if initial.spatial(&x) * rr > 1.0 + 1e-12 {
                        n = n.max(r);
                    }
                }
            }
            n
        }
    };
    report.check(
        "decay_r6",
        c_decay.is_finite(),
        Some(c_decay),
        format!("|F - f0| <= C R^-6 for |x| > N = {n_radius:e}"),
    );
    report
}

/// Tensor quadrature in `(|v|, μ)`; the azimuth is integrated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityQuadrature {
    pub v_cap: f64,
    pub speeds: Rule,
    pub cosines: Rule,
}

impl VelocityQuadrature {
    /// Composite Gauss–Legendre in `|v|` on `[0, v_cap]` broken at every
    /// listed speed below `v_cap`, times Gauss–Legendre in `μ`.
    pub fn new(n_u: usize, n_mu: usize, v_cap: f64, breaks: &[f64]) -> Self {
        let mut b: Vec<f64> = std::iter::once(0.0)
            .chain(breaks.iter().copied().filter(|&s| s > 0.0 && s < v_cap))
            .chain(std::iter::once(v_cap))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        VelocityQuadrature {
            v_cap,
            speeds: Rule::composite(&b, n_u, 4),
            cosines: Rule::gauss_legendre(n_mu, -1.0, 1.0),
        }
    }

    /// `(speed, velocity at x = r ê₁, weight)` including `2π u²`.
    pub fn points(&self) -> Vec<(f64, Vec3, f64)> {
        let mut out = Vec::with_capacity(self.speeds.len() * self.cosines.len());
        for (&u, &wu) in self.speeds.nodes.iter().zip(&self.speeds.weights) {
            for (&mu, &wm) in self.cosines.nodes.iter().zip(&self.cosines.weights) {
                let v = Vec3::new(u * mu, u * (1.0 - mu * mu).max(0.0).sqrt(), 0.0);
                out.push((u, v, 2.0 * PI * u * u * wu * wm));
            }
        }
        out
    }
}

/// Machinery for evaluating `g` and `f` from a stored field history.
#[derive(Debug, Clone)]
pub struct KineticState {
    pub history: FieldHistory,
    pub background: BackgroundProfile,
    pub initial: InitialPerturbation,
    pub dt: f64,
    /// Current velocity-support bound, never below `W`.
    pub qg_running: f64,
}

/// Foot of the backward characteristic and the Duhamel integral along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtrace {
    pub foot: PhaseState,
    pub duhamel: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GSample {
    pub value: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FSample {
    pub value: f64,
    /// Magnitude of negative noise removed by clipping at zero.
    pub clipped: f64,
    pub extrapolated: bool,
}

impl KineticState {
    pub fn new(history: FieldHistory, background: BackgroundProfile, initial: InitialPerturbation, dt: f64) -> Self {
        let qg_running = initial.support_radius(&background).max(background.w);
        KineticState {
            history,
            background,
            initial,
            dt,
            qg_running,
        }
    }

    /// Traces `(t, x, v)` back to time 0, accumulating
    /// `∫₀ᵗ 𝓔·∇F(V) ds` with trapezoid weights.
    pub fn backtrace(&self, t: f64, x: Vec3, v: Vec3) -> Backtrace {
        let bg = &self.background;
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let out = trace_visit(&self.history, t, PhaseState::new(x, v), 0.0, self.dt, |s, p, e| {
            let val = e.dot(&bg.grad(&p.v));
            if let Some((s0, v0)) = prev {
                integral += 0.5 * (s0 - s).abs() * (val + v0);
            }
            prev = Some((s, val));
        });
        Backtrace {
            foot: out.state,
            duhamel: integral,
            extrapolated: out.extrapolated,
        }
    }

    pub fn eval_g(&self, t: f64, x: &Vec3, v: &Vec3) -> GSample {
        let b = self.backtrace(t, *x, *v);
        GSample {
            value: self.initial.g0(&b.foot.x, &b.foot.v) - b.duhamel,
            extrapolated: b.extrapolated,
        }
    }

    pub fn eval_f(&self, t: f64, x: &Vec3, v: &Vec3) -> FSample {
        let b = self.backtrace(t, *x, *v);
        self.f_from_foot(&b)
    }

    fn f_from_foot(&self, b: &Backtrace) -> FSample {
        let raw = self.background.eval(&b.foot.v) - self.initial.g0(&b.foot.x, &b.foot.v);
        FSample {
            value: raw.max(0.0),
            clipped: (-raw).max(0.0),
            extrapolated: b.extrapolated,
        }
    }

    /// `‖f₀‖_∞` over the family (attained at `v = 0` and the spatial peak).
    pub fn f0_sup(&self) -> f64 {
        let peak = self.background.peak();
        if self.initial.amplitude < 0.0 {
            peak - self.initial.amplitude
        } else {
            peak
        }
    }
}

/// Velocity moments of the solution at one radial node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeMoments {
    /// `ρ = ∫ g dv`.
    pub rho: f64,
    /// `k = ∫ S(f, |v|) dv`.
    pub k: f64,
    /// `∫_{|v| > P_cut} |v|² f dv`.
    pub tail: f64,
    /// `∫ |v|² g dv`.
    pub second_moment: f64,
    /// `∫ |g| dv`.
    pub abs_g: f64,
    pub max_clip: f64,
    pub extrapolated: bool,
}

/// Moments at `x = r ê₁` and time `t`.
pub fn node_moments(
    state: &KineticState,
    funcs: &EnergyFunctionals,
    quad: &[(f64, Vec3, f64)],
    t: f64,
    r: f64,
    p_cut: f64,
) -> NodeMoments {
    let x = Vec3::new(r, 0.0, 0.0);
    let mut m = NodeMoments::default();
    for &(u, v, w) in quad {
        let b = state.backtrace(t, x, v);
        let g = state.initial.g0(&b.foot.x, &b.foot.v) - b.duhamel;
        let f = state.f_from_foot(&b);
        m.rho += w * g;
        m.abs_g += w * g.abs();
        m.second_moment += w * u * u * g;
        m.k += w * funcs.s(f.value, u);
        if u > p_cut {
            m.tail += w * u * u * f.value;
        }
        m.max_clip = m.max_clip.max(f.clipped);
        m.extrapolated |= b.extrapolated;
    }
    m
}

/// `ρ(t, ·)` on `nodes` by velocity quadrature of `g`.
pub fn compute_rho(
    state: &KineticState,
    quad: &VelocityQuadrature,
    t: f64,
    nodes: &[f64],
    tail_exponent: f64,
) -> Result<RadialDensity> {
    let funcs = EnergyFunctionals::new(state.background);
    let pts = quad.points();
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|&r| node_moments(state, &funcs, &pts, t, r, f64::INFINITY).rho)
        .collect();
    RadialDensity::new(nodes.to_vec(), values, tail_exponent)
}

/// Inputs of the self-consistent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticSetup {
    pub background: BackgroundProfile,
    pub initial: InitialPerturbation,
    pub external: ExternalField,
    pub nodes: Vec<f64>,
    pub tail_exponent: f64,
    pub n_u: usize,
    pub n_mu: usize,
    pub t_end: f64,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Added to the velocity-support bound to get the quadrature cap.
    pub v_margin: f64,
    pub p_cut: f64,
}

impl KineticSetup {
    /// Snapshot times `0, stride·dt, 2·stride·dt, …`, ending at `t_end`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let step = self.snapshot_stride as f64 * self.dt;
        let mut times = vec![0.0];
        let mut k = 1;
        loop {
            let t = k as f64 * step;
            if t >= self.t_end - 1e-9 * step {
                break;
            }
            times.push(t);
            k += 1;
        }
        times.push(self.t_end);
        times
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub rho: RadialDensity,
    pub field: RadialField,
    pub moments: Vec<NodeMoments>,
    /// Relative field change at this snapshot in the final sweep.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: KineticState,
    pub snapshots: Vec<Snapshot>,
    /// Global residual after each sweep.
    pub residuals: Vec<f64>,
    pub quadrature: VelocityQuadrature,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Upper bound `Q_f(0) + ∫₀ᵗ sup|E + A| ds` at each snapshot time.
pub fn support_upper_bound(q0: f64, times: &[f64], fields: &[&RadialField], external: &ExternalField) -> Vec<f64> {
    let sup_a = external.sup_norm();
    let sups: Vec<f64> = fields.iter().map(|f| sup_abs(&f.e_at_nodes()) + sup_a).collect();
    let mut out = vec![q0];
    for k in 1..times.len() {
        let prev = out[k - 1];
        out.push(prev + 0.5 * (times[k] - times[k - 1]) * (sups[k] + sups[k - 1]));
    }
    out
}

fn history_from(snapshots: &[(f64, RadialField)], external: ExternalField) -> Result<FieldHistory> {
    FieldHistory::new(
        snapshots
            .iter()
            .map(|(t, f)| FieldState::radial(*t, f.clone()))
            .collect(),
        external,
    )
}

/// Picard iteration for the self-consistent field on `[0, t_end]`.
///
/// The first iterate is the field of `ρ(0)` frozen in time. Each sweep
/// recomputes `ρ` at every snapshot from the previous history and replaces
/// the history with the resulting fields. Iteration stops once the largest
/// change of `e(r)` over all snapshots, relative to `max |e|`, is at most
/// `tol`; `tol = ∞` performs exactly one sweep.
pub fn picard_solve(setup: &KineticSetup) -> Result<Solution> {
    let times = setup.snapshot_times();
    let funcs = EnergyFunctionals::new(setup.background);
    let q0 = setup.initial.support_radius(&setup.background);
    let breaks = [setup.initial.velocity_radius, setup.background.w];
    let p_cut = setup.p_cut;

    // t = 0 needs no tracing; its moments are computed once.
    let placeholder = FieldHistory::new(
        vec![FieldState::radial(
            0.0,
            solve_field_radial(&RadialDensity::zeros(setup.nodes.clone())?)?,
        )],
        ExternalField::zero(),
    )?;
    let initial_state = KineticState::new(placeholder, setup.background, setup.initial, setup.dt);
    let quad0 = VelocityQuadrature::new(setup.n_u, setup.n_mu, q0 + setup.v_margin, &breaks);
    let pts0 = quad0.points();
    let moments0: Vec<NodeMoments> = setup
        .nodes
        .par_iter()
        .map(|&r| node_moments(&initial_state, &funcs, &pts0, 0.0, r, p_cut))
        .collect();
    let rho0 = RadialDensity::new(
        setup.nodes.clone(),
        moments0.iter().map(|m| m.rho).collect(),
        setup.tail_exponent,
    )?;
    let field0 = solve_field_radial(&rho0)?;

    let mut fields: Vec<(f64, RadialField)> = times.iter().map(|&t| (t, field0.clone())).collect();
    let mut residuals = Vec::new();
    let mut v_cap: Option<f64> = None;

    for _ in 0..setup.max_iter.max(1) {
        let history = history_from(&fields, setup.external)?;
        let refs: Vec<&RadialField> = fields.iter().map(|(_, f)| f).collect();
        let upper = support_upper_bound(q0, &times, &refs, &setup.external);
        let cap = match v_cap {
            Some(c) => c,
            None => upper.last().copied().unwrap_or(q0) + setup.v_margin,
        };
        let quad = VelocityQuadrature::new(setup.n_u, setup.n_mu, cap, &breaks);
        let pts = quad.points();
        let mut state = KineticState::new(history, setup.background, setup.initial, setup.dt);
        state.qg_running = upper.last().copied().unwrap_or(q0).max(setup.background.w);

        let tasks: Vec<(usize, f64)> = (1..times.len())
            .flat_map(|k| setup.nodes.iter().map(move |&r| (k, r)))
            .collect();
        let flat: Vec<NodeMoments> = tasks
            .par_iter()
            .map(|&(k, r)| node_moments(&state, &funcs, &pts, times[k], r, p_cut))
            .collect();

        let n = setup.nodes.len();
        let mut rhos = vec![rho0.clone()];
        let mut moments = vec![moments0.clone()];
        let mut new_fields = vec![(0.0, field0.clone())];
        for (k, chunk) in flat.chunks(n).enumerate() {
            let rho = RadialDensity::new(
                setup.nodes.clone(),
                chunk.iter().map(|m| m.rho).collect(),
                setup.tail_exponent,
            )?;
            new_fields.push((times[k + 1], solve_field_radial(&rho)?));
            rhos.push(rho);
            moments.push(chunk.to_vec());
        }

        let mut per_snapshot = vec![0.0];
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for k in 1..times.len() {
            let e_new = new_fields[k].1.e_at_nodes();
            let e_old = fields[k].1.e_at_nodes();
            let d = e_new.iter().zip(&e_old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            scale = scale.max(sup_abs(&e_new));
            diff = diff.max(d);
            per_snapshot.push(d);
        }
        let residual = if scale > 0.0 { diff / scale } else { diff };
        let per_snapshot: Vec<f64> = per_snapshot
            .iter()
            .map(|d| if scale > 0.0 { d / scale } else { *d })
            .collect();
        residuals.push(residual);
        fields = new_fields;
        if v_cap.is_none() {
            // the cap is widened once, after the first sweep, then frozen
            let refs: Vec<&RadialField> = fields.iter().map(|(_, f)| f).collect();
            let after = support_upper_bound(q0, &times, &refs, &setup.external);
            v_cap = Some(cap.max(after.last().copied().unwrap_or(q0) + setup.v_margin));
        }
        if residual <= setup.tol {
            let history = history_from(&fields, setup.external)?;
            let mut state = KineticState::new(history, setup.background, setup.initial, setup.dt);
            let refs: Vec<&RadialField> = fields.iter().map(|(_, f)| f).collect();
            state.qg_running = support_upper_bound(q0, &times, &refs, &setup.external)
                .last()
                .copied()
                .unwrap_or(q0)
                .max(setup.background.w);
            let snapshots = times
                .iter()
                .zip(rhos)
                .zip(moments)
                .zip(fields)
                .zip(per_snapshot)
                .map(|((((time, rho), moments), (_, field)), residual)| Snapshot {
                    time: *time,
                    rho,
                    field,
                    moments,
                    residual,
                })
                .collect();
            return Ok(Solution {
                state,
                snapshots,
                residuals,
                quadrature: quad,
            });
        }
    }
    Err(Error::NonConvergence { residuals })
}

/// Running maximum of `|V(τ)|` over probe characteristics launched at
/// `t = 0` from the edge of the velocity support, reported at each of
/// `times`. A lower bound for `Q_f`.
pub fn measure_qf(state: &KineticState, times: &[f64]) -> Vec<f64> {
    let q0 = state.initial.support_radius(&state.background);
    let radii = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
    let cosines = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let probes: Vec<PhaseState> = radii
        .iter()
        .flat_map(|&r| {
            cosines.iter().map(move |&mu: &f64| {
                PhaseState::new(
                    Vec3::new(r, 0.0, 0.0),
                    Vec3::new(q0 * mu, q0 * (1.0 - mu * mu).sqrt(), 0.0),
                )
            })
        })
        .collect();
    let t_end = times.last().copied().unwrap_or(0.0);
    let tracks: Vec<Vec<(f64, f64)>> = probes
        .par_iter()
        .map(|p| {
            let mut track = Vec::new();
            trace_visit(&state.history, 0.0, *p, t_end, state.dt, |s, q, _| {
                track.push((s, q.v.norm()))
            });
            track
        })
        .collect();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let m = tracks
            .iter()
            .flat_map(|tr| tr.iter().filter(|(s, _)| *s <= t + 1e-12).map(|(_, u)| *u))
            .fold(q0, f64::max);
        out.push(m);
    }
    // running max keeps the proxy nondecreasing
    for k in 1..out.len() {
        out[k] = out[k].max(out[k - 1]);
    }
    out
}

/// Largest relative change of `f` along the characteristic through
/// `(t, probe)`, sampled at the given earlier times.
pub fn f_constancy_drift(state: &KineticState, t: f64, probe: PhaseState, samples: &[f64]) -> f64 {
    let f_t = state.eval_f(t, &probe.x, &probe.v).value;
    samples
        .iter()
        .map(|&s| {
            let p = trace(&state.history, t, probe, s, state.dt).state;
            let f_s = state.eval_f(s, &p.x, &p.v).value;
            (f_s - f_t).abs() / f_t.max(1e-8)
        })
        .fold(0.0, f64::max)
}

impl TotalField for KineticState {
    fn field(&self, s: f64, x: &Vec3) -> (Vec3, bool) {
        self.history.field(s, x)
    }

    fn is_zero(&self) -> bool {
        self.history.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coulomb::radial_grid;
    use crate::report::ClauseStatus;
    use crate::traj::ConstantField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(amplitude: f64) -> KineticSetup {
        KineticSetup {
            background: BackgroundProfile::sextic(1.0, 1.0),
            initial: InitialPerturbation {
                amplitude,
                ..InitialPerturbation::default()
            },
            external: ExternalField::zero(),
            nodes: radial_grid(10.0, 24, 2.0),
            tail_exponent: 6.0,
            n_u: 12,
            n_mu: 6,
            t_end: 0.4,
            dt: 0.05,
            snapshot_stride: 2,
            tol: 1e-8,
            max_iter: 12,
            v_margin: 0.5,
            p_cut: 2.0,
        }
    }

    fn zero_state(initial: InitialPerturbation) -> KineticState {
        let field = solve_field_radial(&RadialDensity::zeros(radial_grid(10.0, 16, 0.0)).unwrap()).unwrap();
        let hist = FieldHistory::frozen(&FieldState::radial(0.0, field), &[0.0, 2.0], ExternalField::zero()).unwrap();
        KineticState::new(hist, BackgroundProfile::sextic(1.0, 1.0), initial, 0.05)
    }

    #[test]
    fn free_transport_is_exact() {
        let initial = InitialPerturbation::default();
        let state = zero_state(initial);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let v = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let t = rng.gen_range(0.0..2.0);
            let g = state.eval_g(t, &x, &v).value;
            assert!((g - initial.g0(&(x - v * t), &v)).abs() <= 1e-12);
        }
    }

    #[test]
    fn g_vanishes_outside_all_supports() {
        let state = zero_state(InitialPerturbation::default());
        assert_eq!(
            state
                .eval_g(1.0, &Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, 1.2, 0.0))
                .value,
            0.0
        );
    }

    #[test]
    fn single_step_constant_field_matches_two_point_trapezoid() {
        let c = Vec3::new(0.2, -0.1, 0.05);
        let initial = InitialPerturbation::default();
        let bg = BackgroundProfile::sextic(1.0, 1.0);
        let t = 0.3;
        let x = Vec3::new(0.4, 0.1, 0.0);
        let v = Vec3::new(0.3, 0.2, -0.1);
        let foot = trace(&ConstantField(c), t, PhaseState::new(x, v), 0.0, 1.0).state;
        let expect = initial.g0(&foot.x, &foot.v) - 0.5 * t * (c.dot(&bg.grad(&v)) + c.dot(&bg.grad(&foot.v)));

        // same computation through the kinetic machinery
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let out = trace_visit(&ConstantField(c), t, PhaseState::new(x, v), 0.0, 1.0, |s, p, e| {
            let val = e.dot(&bg.grad(&p.v));
            if let Some((s0, v0)) = prev {
                integral += 0.5 * (s0 - s).abs() * (val + v0);
            }
            prev = Some((s, val));
        });
        let g = initial.g0(&out.state.x, &out.state.v) - integral;
        assert!((g - expect).abs() < 1e-15);
    }

    #[test]
    fn f_at_time_zero_is_f0() {
        let initial = InitialPerturbation::default();
        let state = zero_state(initial);
        let x = Vec3::new(0.3, 0.0, 0.2);
        let v = Vec3::new(0.1, 0.1, 0.0);
        let f = state.eval_f(0.0, &x, &v);
        assert_eq!(f.value, state.background.eval(&v) - initial.g0(&x, &v));
        assert_eq!(f.clipped, 0.0);
    }

    #[test]
    fn initial_density_matches_closed_form() {
        let initial = InitialPerturbation::default();
        let state = zero_state(initial);
        let quad = VelocityQuadrature::new(16, 4, 1.5, &[0.5, 1.0]);
        let nodes = radial_grid(10.0, 20, 2.0);
        let rho = compute_rho(&state, &quad, 0.0, &nodes, 6.0).unwrap();
        for (&r, &v) in nodes.iter().zip(&rho.values) {
            assert!((v - initial.rho0(r)).abs() <= 1e-13 * initial.rho0(0.0), "r = {r}");
        }
    }

    #[test]
    fn zero_amplitude_converges_in_one_sweep() {
        let sol = picard_solve(&setup(0.0)).unwrap();
        assert_eq!(sol.iterations(), 1);
        assert_eq!(sol.residuals[0], 0.0);
        for s in &sol.snapshots {
            assert!(s.rho.values.iter().all(|&v| v == 0.0));
            assert!(s.field.e_at_nodes().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn infinite_tolerance_performs_one_frozen_field_sweep() {
        let mut s = setup(0.05);
        s.tol = f64::INFINITY;
        let sol = picard_solve(&s).unwrap();
        assert_eq!(sol.iterations(), 1);
        // the history used for the sweep was the frozen initial field
        let frozen = picard_solve(&KineticSetup {
            max_iter: 1,
            ..s.clone()
        })
        .unwrap();
        assert_eq!(frozen.snapshots[2].rho.values, sol.snapshots[2].rho.values);
    }

    #[test]
    fn picard_converges_and_respects_density_bound() {
        let sol = picard_solve(&setup(0.05)).unwrap();
        assert!(*sol.residuals.last().unwrap() <= 1e-8);
        let state = &sol.state;
        let bound = (state.f0_sup() + state.background.peak()) * 4.0 * PI / 3.0 * state.qg_running.powi(3);
        for s in &sol.snapshots {
            assert!(s.rho.sup_abs() <= bound);
            assert!(s.moments.iter().all(|m| m.k >= 0.0 && m.max_clip <= 1e-6));
        }
    }

    #[test]
    fn nonconvergence_reports_residuals() {
        let mut s = setup(0.05);
        s.tol = 1e-30;
        s.max_iter = 2;
        match picard_solve(&s) {
            Err(Error::NonConvergence { residuals }) => assert_eq!(residuals.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn qf_is_w_for_zero_field() {
        let state = zero_state(InitialPerturbation::default());
        let qf = measure_qf(&state, &[0.0, 1.0, 2.0]);
        assert!(qf.iter().all(|&q| (q - 1.0).abs() < 1e-15));
    }

    #[test]
    fn qf_grows_at_most_linearly_in_bounded_field() {
        let sol = picard_solve(&setup(0.3)).unwrap();
        let times = sol.times();
        let qf = measure_qf(&sol.state, &times);
        let refs: Vec<&RadialField> = sol.snapshots.iter().map(|s| &s.field).collect();
        let upper = support_upper_bound(1.0, &times, &refs, &ExternalField::zero());
        for (lo, hi) in qf.iter().zip(&upper) {
            assert!(lo <= &(hi + 1e-12));
            assert!(*lo >= 1.0);
        }
    }

    #[test]
    fn f_and_g_are_consistent() {
        let sol = picard_solve(&setup(0.3)).unwrap();
        let state = &sol.state;
        let x = Vec3::new(0.6, 0.2, 0.0);
        for v in [
            Vec3::new(0.2, 0.1, 0.0),
            Vec3::new(-0.4, 0.3, 0.2),
            Vec3::new(0.9, 0.0, 0.1),
        ] {
            let g = state.eval_g(0.4, &x, &v).value;
            let f = state.eval_f(0.4, &x, &v).value;
            // the two routes differ by the trapezoid error of the Duhamel integral
            assert!(
                (state.background.eval(&v) - f - g).abs() < 5e-5,
                "{}",
                state.background.eval(&v) - f - g
            );
        }
    }

    #[test]
    fn conditions_ii_iv_for_shipped_families() {
        let bg = BackgroundProfile::sextic(1.0, 1.0);
        let r6 = InitialPerturbation::default();
        let rep = check_conditions_ii_iv(&bg, &r6);
        assert!(rep.passed());
        assert_eq!(rep.clause("decay_r6").unwrap().measured, Some(0.05));

        let gauss = InitialPerturbation {
            family: PerturbationFamily::GaussianBump,
            amplitude: 0.2,
            spatial_scale: 1.5,
            ..InitialPerturbation::default()
        };
        let rep = check_conditions_ii_iv(&bg, &gauss);
        assert!(rep.passed());
        let note = &rep.clause("decay_r6").unwrap().note;
        assert!(note.contains("N ="));

        let too_big = InitialPerturbation {
            amplitude: 1.5,
            ..InitialPerturbation::default()
        };
        let rep = check_conditions_ii_iv(&bg, &too_big);
        assert_eq!(rep.status("nonnegative"), Some(ClauseStatus::Fail));
    }
}

//! Characteristics `dX/ds = V`, `dV/ds = -(E + A)(s, X)` and the
//! trajectory-level checks built on them.

use nalgebra::SMatrix;

use crate::coulomb::FieldState;
use crate::extfield::ExternalField;
use crate::report::ConditionReport;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhaseState {
    pub fn new(x: Vec3, v: Vec3) -> Self {
        PhaseState { x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }

    /// Euclidean distance in phase space.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        ((self.x - other.x).norm_squared() + (self.v - other.v).norm_squared()).sqrt()
    }
}

/// Total force field `𝓔 = E + A`; characteristics accelerate along `-𝓔`.
pub trait TotalField: Sync {
    /// Field value and whether any part of it was extrapolated.
    fn field(&self, s: f64, x: &Vec3) -> (Vec3, bool);

    /// True when the field vanishes identically, enabling exact free
    /// streaming.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Spatially and temporally constant total field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField(pub Vec3);

impl TotalField for ConstantField {
    fn field(&self, _s: f64, _x: &Vec3) -> (Vec3, bool) {
        (self.0, false)
    }

    fn is_zero(&self) -> bool {
        self.0 == Vec3::zeros()
    }
}

/// Field snapshots, linearly interpolated in time, plus the applied field.
#[derive(Debug, Clone)]
pub struct FieldHistory {
    times: Vec<f64>,
    states: Vec<FieldState>,
    pub external: ExternalField,
    zero: bool,
}

impl FieldHistory {
    pub fn new(states: Vec<FieldState>, external: ExternalField) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument(
                "field history needs at least one snapshot".into(),
            ));
        }
        let times: Vec<f64> = states.iter().map(|s| s.time).collect();
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "snapshot times must be strictly increasing".into(),
            ));
        }
        let zero = external.is_zero() && states.iter().all(|s| s.is_zero());
        Ok(FieldHistory {
            times,
            states,
            external,
            zero,
        })
    }

    /// One field held fixed at every time in `times`.
    pub fn frozen(state: &FieldState, times: &[f64], external: ExternalField) -> Result<Self> {
        let states = times
            .iter()
            .map(|&t| FieldState {
                time: t,
                data: state.data.clone(),
            })
            .collect();
        FieldHistory::new(states, external)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[FieldState] {
        &self.states
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        let slack = 1e-9 * (1.0 + self.times[self.times.len() - 1].abs());
        let (lo, hi) = (a.min(b), a.max(b));
        lo >= self.times[0] - slack && hi <= self.times[self.times.len() - 1] + slack
    }

    /// Self-consistent part `E(s, x)` only. Times outside the stored range
    /// are clamped to the nearest snapshot and flagged.
    #[inline]
    pub fn self_field(&self, s: f64, x: &Vec3) -> (Vec3, bool) {
        let n = self.times.len();
        if n == 1 {
            return self.states[0].eval(x);
        }
        if s <= self.times[0] {
            let (e, f) = self.states[0].eval(x);
            return (e, f || s < self.times[0] - 1e-12);
        }
        if s >= self.times[n - 1] {
            let (e, f) = self.states[n - 1].eval(x);
            return (e, f || s > self.times[n - 1] + 1e-12);
        }
        let k = self.times.partition_point(|&t| t <= s) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (s - t0) / (t1 - t0);
        let (e0, f0) = self.states[k].eval(x);
        if w == 0.0 {
            return (e0, f0);
        }
        let (e1, f1) = self.states[k + 1].eval(x);
        (e0 * (1.0 - w) + e1 * w, f0 || f1)
    }
}

impl TotalField for FieldHistory {
    #[inline]
    fn field(&self, s: f64, x: &Vec3) -> (Vec3, bool) {
        let (e, flag) = self.self_field(s, x);
        if self.external.is_zero() {
            (e, flag)
        } else {
            (e + self.external.eval(s, x), flag)
        }
    }

    fn is_zero(&self) -> bool {
        self.zero
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOutcome {
    pub state: PhaseState,
    /// Some field evaluation left the interpolation domain.
    pub extrapolated: bool,
    pub steps: usize,
}

/// Number of uniform RK4 steps covering `|s - t|` with steps no longer than
/// `dt`.
pub fn step_count(t: f64, s: f64, dt: f64) -> usize {
    let span = (s - t).abs();
    if span == 0.0 {
        0
    } else {
        ((span / dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// RK4 solution of the characteristic system from `(t, state)` to time `s`
/// (either direction).
pub fn trace<F: TotalField + ?Sized>(field: &F, t: f64, state: PhaseState, s: f64, dt: f64) -> TraceOutcome {
    trace_visit(field, t, state, s, dt, |_, _, _| {})
}

/// As [`trace`], calling `visit(time, state, field)` at every step point,
/// both endpoints included. The field passed at each point is the one the
/// integrator evaluated there, so visitors add no extra field evaluations
/// except at the final point.
pub fn trace_visit<F, V>(field: &F, t: f64, state: PhaseState, s: f64, dt: f64, mut visit: V) -> TraceOutcome
where
    F: TotalField + ?Sized,
    V: FnMut(f64, &PhaseState, &Vec3),
{
    let n = step_count(t, s, dt);
    if field.is_zero() {
        let end = PhaseState::new(state.x + state.v * (s - t), state.v);
        visit(t, &state, &Vec3::zeros());
        if n > 0 {
            visit(s, &end, &Vec3::zeros());
        }
        return TraceOutcome {
            state: end,
            extrapolated: false,
            steps: n,
        };
    }
    let mut flag = false;
    let mut eval = |tau: f64, x: &Vec3| {
        let (e, f) = field.field(tau, x);
        flag |= f;
        e
    };
    let mut x = state.x;
    let mut v = state.v;
    if n == 0 {
        let e = eval(t, &x);
        visit(t, &state, &e);
        return TraceOutcome {
            state,
            extrapolated: flag,
            steps: 0,
        };
    }
    let h = (s - t) / n as f64;
    let half = 0.5 * h;
    for i in 0..n {
        let tau = t + i as f64 * h;
        let e1 = eval(tau, &x);
        visit(tau, &PhaseState::new(x, v), &e1);
        let k1x = v;
        let k1v = -e1;
        let k2x = v + k1v * half;
        let k2v = -eval(tau + half, &(x + k1x * half));
        let k3x = v + k2v * half;
        let k3v = -eval(tau + half, &(x + k2x * half));
        let k4x = v + k3v * h;
        let k4v = -eval(tau + h, &(x + k3x * h));
        x += (k1x + (k2x + k3x) * 2.0 + k4x) * (h / 6.0);
        v += (k1v + (k2v + k3v) * 2.0 + k4v) * (h / 6.0);
    }
    let end = PhaseState::new(x, v);
    let e_end = eval(s, &x);
    visit(s, &end, &e_end);
    TraceOutcome {
        state: end,
        extrapolated: flag,
        steps: n,
    }
}

/// Phase-space distance between `state` and its image under tracing
/// `t → s → t`.
pub fn round_trip_error<F: TotalField + ?Sized>(field: &F, t: f64, state: PhaseState, s: f64, dt: f64) -> f64 {
    let there = trace(field, t, state, s, dt).state;
    let back = trace(field, s, there, t, dt).state;
    back.distance(&state)
}

/// Determinant of the central-difference Jacobian of `(x, v) ↦ (X(s), V(s))`
/// at `centre`, using the six pairs of cell corners `centre ± half_width eₖ`.
pub fn phase_volume_check<F: TotalField + ?Sized>(
    field: &F,
    t: f64,
    centre: PhaseState,
    half_width: f64,
    s: f64,
    dt: f64,
) -> f64 {
    let mut jac = SMatrix::<f64, 6, 6>::zeros();
    for k in 0..6 {
        let shift = |sign: f64| {
            let mut p = centre;
            if k < 3 {
                p.x[k] += sign * half_width;
            } else {
                p.v[k - 3] += sign * half_width;
            }
            trace(field, t, p, s, dt).state
        };
        let (plus, minus) = (shift(1.0), shift(-1.0));
        for i in 0..3 {
            jac[(i, k)] = (plus.x[i] - minus.x[i]) / (2.0 * half_width);
            jac[(i + 3, k)] = (plus.v[i] - minus.v[i]) / (2.0 * half_width);
        }
    }
    jac.determinant()
}

/// Checks the displacement bounds along the backward characteristic from
/// `(t, state)` to time 0: `|X(s) - x| ≤ T Q_g(T)` and, for
/// `|x| ≥ 2 T Q_g(T)`, `|x|/2 ≤ |X(s)| ≤ 3|x|/2`.
pub fn displacement_check<F: TotalField + ?Sized>(
    field: &F,
    t: f64,
    state: PhaseState,
    t_total: f64,
    qg_bound: f64,
    dt: f64,
) -> ConditionReport {
    let mut report = ConditionReport::new("displacement");
    let bound = t_total * qg_bound;
    let x0 = state.x.norm();
    let mut max_disp = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    trace_visit(field, t, state, 0.0, dt, |_, p, _| {
        max_disp = max_disp.max((p.x - state.x).norm());
        if x0 > 0.0 {
            let ratio = p.x.norm() / x0;
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
        }
    });
    report.check(
        "displacement",
        max_disp <= bound * (1.0 + 1e-12),
        Some(max_disp),
        format!("max |X(s) - x| against T Q_g = {bound:e}"),
    );
    if x0 >= 2.0 * bound {
        report.check(
            "far_shell",
            min_ratio >= 0.5 - 1e-12 && max_ratio <= 1.5 + 1e-12,
            Some(min_ratio),
            format!("|X(s)|/|x| in [{min_ratio:.6}, {max_ratio:.6}]"),
        );
    } else {
        report.check("far_shell", true, None, "not applicable: |x| < 2 T Q_g");
    }
    report
}

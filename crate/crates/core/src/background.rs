//! Steady radial background `F(v) = F_R(|v|)` and the energy functionals
//! `σ` and `S` built from it.

use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate_adaptive, Rule};
use crate::report::{ClauseStatus, ConditionReport};
use crate::Vec3;

/// Tolerance on the jump of `F_R''` across `u = W`.
pub const C2_JUMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// `κ (W² − u²)³` on `[0, W]`: the lowest-degree polynomial bump that is
    /// C² at the support edge.
    Sextic,
    /// `κ (W² − u²)²`; only C¹ at `u = W`. Kept to exercise the checker.
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub w: f64,
    pub kappa: f64,
    pub kind: ProfileKind,
}

impl BackgroundProfile {
    pub fn new(w: f64, kappa: f64, kind: ProfileKind) -> Self {
        BackgroundProfile { w, kappa, kind }
    }

    pub fn sextic(w: f64, kappa: f64) -> Self {
        Self::new(w, kappa, ProfileKind::Sextic)
    }

    /// `F_R(u)`.
    #[inline]
    pub fn radial(&self, u: f64) -> f64 {
        let u = u.abs();
        if u >= self.w {
            return 0.0;
        }
        let s = self.w * self.w - u * u;
        match self.kind {
            ProfileKind::Sextic => self.kappa * s * s * s,
            ProfileKind::Quartic => self.kappa * s * s,
        }
    }

    /// `F_R'(u)`.
    #[inline]
    pub fn radial_d1(&self, u: f64) -> f64 {
        if u >= self.w {
            return 0.0;
        }
        let s = self.w * self.w - u * u;
        match self.kind {
            ProfileKind::Sextic => -6.0 * self.kappa * u * s * s,
            ProfileKind::Quartic => -4.0 * self.kappa * u * s,
        }
    }

    /// `F_R''(u)`.
    pub fn radial_d2(&self, u: f64) -> f64 {
        if u >= self.w {
            return 0.0;
        }
        let s = self.w * self.w - u * u;
        match self.kind {
            ProfileKind::Sextic => -6.0 * self.kappa * s * s + 24.0 * self.kappa * u * u * s,
            ProfileKind::Quartic => -4.0 * self.kappa * s + 8.0 * self.kappa * u * u,
        }
    }

    /// `F(v)`.
    #[inline]
    pub fn eval(&self, v: &Vec3) -> f64 {
        self.radial(v.norm())
    }

    /// `∇_v F(v)`; the zero vector at the origin.
    #[inline]
    pub fn grad(&self, v: &Vec3) -> Vec3 {
        let u = v.norm();
        if u == 0.0 || u >= self.w {
            return Vec3::zeros();
        }
        // F_R'(u)/u is regular at u = 0 for both families.
        let s = self.w * self.w - u * u;
        let ratio = match self.kind {
            ProfileKind::Sextic => -6.0 * self.kappa * s * s,
            ProfileKind::Quartic => -4.0 * self.kappa * s,
        };
        v * ratio
    }

    /// `F(0)`.
    pub fn peak(&self) -> f64 {
        self.radial(0.0)
    }

    /// `sup |∇²F|`, sampled.
    pub fn sup_hessian(&self) -> f64 {
        (0..=2000)
            .map(|i| {
                let u = self.w * i as f64 / 2000.0;
                self.radial_d2(u).abs().max((self.radial_d1(u) / u.max(1e-300)).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Speed `u ∈ [0, W]` with `F_R(u) = h`, for `0 ≤ h ≤ F(0)`.
    pub fn inverse(&self, h: f64) -> f64 {
        let peak = self.peak();
        if h >= peak {
            return 0.0;
        }
        if h <= 0.0 {
            return self.w;
        }
        match self.kind {
            ProfileKind::Sextic => (self.w * self.w - (h / self.kappa).cbrt()).max(0.0).sqrt(),
            ProfileKind::Quartic => (self.w * self.w - (h / self.kappa).sqrt()).max(0.0).sqrt(),
        }
    }

    /// Whether `σ` has a closed form for this family.
    pub fn has_closed_form(&self) -> bool {
        self.kind == ProfileKind::Sextic
    }
}

/// Checks condition (I) on `F`: nonnegativity, positivity on `[0, W)`,
/// C² matching at `u = W`, `F_R''(0) < 0`, strict decrease and vanishing
/// beyond `W`.
pub fn check_condition_i(profile: &BackgroundProfile) -> ConditionReport {
    let mut report = ConditionReport::new("I");
    let w = profile.w;
    if !(w > 0.0 && w.is_finite()) {
        report.check(
            "support_radius_positive",
            false,
            Some(w),
            "W must be positive and finite",
        );
        return report;
    }
    let samples = 4000;
    let min_f = (0..=samples)
        .map(|i| profile.radial(2.0 * w * i as f64 / samples as f64))
        .fold(f64::INFINITY, f64::min);
    report.check("nonnegative", min_f >= 0.0, Some(min_f), "min of F_R on [0, 2W]");

    let min_inside = (0..samples)
        .map(|i| profile.radial(w * i as f64 / samples as f64))
        .fold(f64::INFINITY, f64::min);
    report.check(
        "positive_inside_support",
        min_inside > 0.0,
        Some(min_inside),
        "min of F_R on [0, W)",
    );

    // One-sided limits of F_R'' at W by Richardson extrapolation in δ.
    let one_sided = |sign: f64| {
        let d = 1e-4 * w;
        let a = profile.radial_d2(w + sign * d);
        let b = profile.radial_d2(w + sign * 0.5 * d);
        2.0 * b - a
    };
    let jump = (one_sided(-1.0) - one_sided(1.0)).abs();
    let d1_left = {
        let d = 1e-4 * w;
        2.0 * profile.radial_d1(w - 0.5 * d) - profile.radial_d1(w - d)
    };
    let c2 = jump < C2_JUMP_TOL && d1_left.abs() < C2_JUMP_TOL;
    report.check(
        "c2_at_support_edge",
        c2,
        Some(jump),
        format!("jump of F_R'' across u = W (tolerance {C2_JUMP_TOL:e}); F_R'(W-) = {d1_left:e}"),
    );

    let d2_origin = profile.radial_d2(0.0);
    report.check("concave_at_origin", d2_origin < 0.0, Some(d2_origin), "F_R''(0) < 0");

    let max_d1 = (1..samples)
        .map(|i| profile.radial_d1(w * i as f64 / samples as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "strictly_decreasing",
        max_d1 < 0.0,
        Some(max_d1),
        "max of F_R' on (0, W)",
    );

    let max_beyond = (0..=samples)
        .map(|i| profile.radial(w * (1.0 + 3.0 * i as f64 / samples as f64)).abs())
        .fold(0.0, f64::max);
    report.check(
        "vanishes_beyond_support",
        max_beyond == 0.0,
        Some(max_beyond),
        "max |F_R| on [W, 4W]",
    );
    report
}

/// Cumulative table `C(u) = ∫_u^W s² (−F_R'(s)) ds` for families without a
/// closed-form `σ`.
#[derive(Debug, Clone, PartialEq)]
struct SigmaTable {
    nodes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SigmaTable {
    const SEGMENTS: usize = 512;

    fn build(profile: &BackgroundProfile) -> Self {
        let w = profile.w;
        let nodes: Vec<f64> = (0..=Self::SEGMENTS)
            .map(|i| w * i as f64 / Self::SEGMENTS as f64)
            .collect();
        let mut cumulative = vec![0.0; nodes.len()];
        for j in (0..Self::SEGMENTS).rev() {
            let seg = Rule::gauss_legendre(8, nodes[j], nodes[j + 1]).integrate(|s| -s * s * profile.radial_d1(s));
            cumulative[j] = cumulative[j + 1] + seg;
        }
        SigmaTable { nodes, cumulative }
    }

    fn tail_from(&self, profile: &BackgroundProfile, u: f64) -> f64 {
        let h = self.nodes[1] - self.nodes[0];
        let j = ((u / h) as usize).min(Self::SEGMENTS - 1);
        let upper = self.nodes[j + 1];
        self.cumulative[j + 1] + Rule::gauss_legendre(8, u, upper).integrate(|s| -s * s * profile.radial_d1(s))
    }
}

/// `σ` and `S` for a fixed background.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyFunctionals {
    pub profile: BackgroundProfile,
    /// `F(0)`.
    pub f0_peak: f64,
    table: Option<SigmaTable>,
}

impl EnergyFunctionals {
    pub fn new(profile: BackgroundProfile) -> Self {
        let table = (!profile.has_closed_form()).then(|| SigmaTable::build(&profile));
        EnergyFunctionals {
            profile,
            f0_peak: profile.peak(),
            table,
        }
    }

    /// `σ(h) = −∫₀^{min(h, F(0))} (F⁻¹(ĥ))² dĥ`.
    pub fn sigma(&self, h: f64) -> f64 {
        let hc = h.clamp(0.0, self.f0_peak);
        if hc == 0.0 {
            return 0.0;
        }
        let p = &self.profile;
        match &self.table {
            None => {
                // (F⁻¹)² = W² − (ĥ/κ)^{1/3}
                -p.w * p.w * hc + 0.75 * p.kappa.powf(-1.0 / 3.0) * hc.powf(4.0 / 3.0)
            }
            Some(t) => -t.tail_from(p, p.inverse(hc)),
        }
    }

    /// Independent route to `σ(h)`: adaptive quadrature after the
    /// substitution `ĥ = F_R(u)`, which removes the unbounded derivative of
    /// `F⁻¹` at `ĥ → F(0)`.
    pub fn sigma_quadrature(&self, h: f64) -> crate::Result<f64> {
        let hc = h.clamp(0.0, self.f0_peak);
        if hc == 0.0 {
            return Ok(0.0);
        }
        let p = self.profile;
        let lower = p.inverse(hc);
        let est = integrate_adaptive(|s| -s * s * p.radial_d1(s), lower, p.w, 1e-14, 1e-13, 4000)?;
        Ok(-est.value)
    }

    /// `S(h, η) = (h − F(η))η² + σ(h) − σ(F(η))`.
    pub fn s(&self, h: f64, eta: f64) -> f64 {
        let p = &self.profile;
        if self.table.is_some() {
            let f_eta = p.radial(eta);
            return (h - f_eta) * eta * eta + self.sigma(h) - self.sigma(f_eta);
        }
        // Closed form of ∫_{F(η)}^{h} (η² − F⁻¹(ĥ)²) dĥ in y = (ĥ/κ)^{1/3};
        // written so that it is nonnegative term by term.
        let kappa = p.kappa;
        let w2 = p.w * p.w;
        let a = w2 - eta * eta;
        let hb = h.min(self.f0_peak).max(0.0);
        let yb = (hb / kappa).cbrt();
        let s1 = if a > 0.0 {
            let f_eta = p.radial(eta);
            let denom = kappa * (yb * yb + yb * a + a * a);
            let diff = if denom > 0.0 { (hb - f_eta) / denom } else { yb - a };
            0.25 * kappa * diff * diff * (3.0 * yb * yb + 2.0 * a * yb + a * a)
        } else {
            kappa * yb * yb * yb * (0.75 * yb - a)
        };
        let excess = (h - self.f0_peak).max(0.0);
        s1 + eta * eta * excess
    }
}

/// Report helper used by scenario validation.
pub fn condition_i_failed(report: &ConditionReport) -> Option<String> {
    report
        .clauses
        .iter()
        .find(|c| c.status == ClauseStatus::Fail)
        .map(|c| format!("background.{}", c.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> BackgroundProfile {
        BackgroundProfile::sextic(1.0, 1.0)
    }

    #[test]
    fn eval_examples() {
        let p = unit();
        assert_eq!(p.eval(&Vec3::new(2.0, 0.0, 0.0)), 0.0);
        assert_eq!(p.eval(&Vec3::zeros()), 1.0);
        assert_eq!(p.eval(&Vec3::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(p.radial_d1(1.0), 0.0);
        assert_eq!(p.radial_d2(1.0), 0.0);
        // symbolic limits from the left also vanish
        assert!(p.radial_d1(1.0 - 1e-9).abs() < 1e-15);
        assert!(p.radial_d2(1.0 - 1e-9).abs() < 1e-7);
    }

    #[test]
    fn grad_examples() {
        let p = unit();
        assert_eq!(p.grad(&Vec3::zeros()), Vec3::zeros());
        let g = p.grad(&Vec3::new(0.5, 0.0, 0.0));
        assert!((g.x + 27.0 / 16.0).abs() < 1e-15);
        assert_eq!(g.y, 0.0);
        assert_eq!(p.grad(&Vec3::new(0.0, 1.0, 0.0)), Vec3::zeros());
        assert_eq!(p.grad(&Vec3::new(3.0, -1.0, 2.0)), Vec3::zeros());
    }

    #[test]
    fn grad_matches_central_differences_to_second_order() {
        let p = BackgroundProfile::sextic(1.3, 0.7);
        let v = Vec3::new(0.31, -0.42, 0.17);
        let fd = |d: f64| {
            let mut g = Vec3::zeros();
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = d;
                g[k] = (p.eval(&(v + e)) - p.eval(&(v - e))) / (2.0 * d);
            }
            (g - p.grad(&v)).norm()
        };
        let e1 = fd(1e-2);
        let e2 = fd(5e-3);
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn sigma_examples() {
        let funcs = EnergyFunctionals::new(unit());
        assert_eq!(funcs.sigma(0.0), 0.0);
        assert!((funcs.sigma(1.0) + 0.25).abs() < 1e-15);
        assert!((funcs.sigma(7.0) + 0.25).abs() < 1e-15);
        let wide = EnergyFunctionals::new(BackgroundProfile::sextic(1.5, 2.0));
        let expect = -2.0 * 1.5f64.powi(8) / 4.0;
        assert!((wide.sigma(10.0 * wide.f0_peak) - expect).abs() < 1e-12);
    }

    #[test]
    fn sigma_closed_form_matches_quadrature() {
        for p in [unit(), BackgroundProfile::sextic(0.8, 3.0)] {
            let funcs = EnergyFunctionals::new(p);
            for i in 0..=50 {
                let h = funcs.f0_peak * i as f64 / 50.0;
                let q = funcs.sigma_quadrature(h).unwrap();
                assert!((funcs.sigma(h) - q).abs() < 1e-8, "h={h}");
            }
        }
    }

    #[test]
    fn table_route_matches_quadrature_for_quartic() {
        let funcs = EnergyFunctionals::new(BackgroundProfile::new(1.0, 1.0, ProfileKind::Quartic));
        for i in 0..=20 {
            let h = funcs.f0_peak * i as f64 / 20.0;
            assert!((funcs.sigma(h) - funcs.sigma_quadrature(h).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn s_examples() {
        let funcs = EnergyFunctionals::new(unit());
        for eta in [0.0, 0.3, 0.9, 1.5] {
            let h = funcs.profile.radial(eta);
            assert!(funcs.s(h, eta).abs() < 1e-15);
        }
        assert!((funcs.s(0.0, 0.0) - 0.25).abs() < 1e-15);
        assert!(funcs.s(0.1, 2.0) >= 0.2);
    }

    #[test]
    fn closed_form_s_agrees_with_definition() {
        let funcs = EnergyFunctionals::new(BackgroundProfile::sextic(1.2, 0.9));
        for &(h, eta) in &[(0.3, 0.2), (0.0, 0.5), (1.0, 1.0), (2.5, 0.1), (0.7, 3.0), (0.05, 1.19)] {
            let direct =
                (h - funcs.profile.radial(eta)) * eta * eta + funcs.sigma(h) - funcs.sigma(funcs.profile.radial(eta));
            assert!((funcs.s(h, eta) - direct).abs() < 1e-12, "h={h} eta={eta}");
        }
    }

    #[test]
    fn condition_i_shipped_family_passes() {
        let r = check_condition_i(&unit());
        assert!(r.clauses.iter().all(|c| c.status == ClauseStatus::Pass), "{r:?}");
    }

    #[test]
    fn condition_i_quartic_fails_c2_only() {
        let r = check_condition_i(&BackgroundProfile::new(1.0, 1.0, ProfileKind::Quartic));
        let c2 = r.clause("c2_at_support_edge").unwrap();
        assert_eq!(c2.status, ClauseStatus::Fail);
        assert!((c2.measured.unwrap() - 8.0).abs() < 1e-6);
        let others = r.clauses.iter().filter(|c| c.name != "c2_at_support_edge");
        assert!(others.clone().all(|c| c.status == ClauseStatus::Pass));
    }

    #[test]
    fn condition_i_nonpositive_kappa_fails() {
        let r = check_condition_i(&BackgroundProfile::sextic(1.0, -1.0));
        assert_eq!(r.status("nonnegative"), Some(ClauseStatus::Fail));
        assert_eq!(r.status("concave_at_origin"), Some(ClauseStatus::Fail));
        let r0 = check_condition_i(&BackgroundProfile::sextic(1.0, 0.0));
        assert_eq!(r0.status("concave_at_origin"), Some(ClauseStatus::Fail));
        assert_eq!(r0.status("positive_inside_support"), Some(ClauseStatus::Fail));
    }

    proptest! {
        #[test]
        fn f_vanishes_outside_support(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0, w in 0.2f64..3.0) {
            let p = BackgroundProfile::sextic(w, 1.3);
            let v = Vec3::new(x, y, z);
            let f = p.eval(&v);
            prop_assert!(f >= 0.0);
            if v.norm() >= w {
                prop_assert_eq!(f, 0.0);
            }
        }

        #[test]
        fn s_dominates_half_h_eta_squared_beyond_2w(h in 0.0f64..5.0, t in 0.0f64..10.0, w in 0.3f64..2.0) {
            let funcs = EnergyFunctionals::new(BackgroundProfile::sextic(w, 0.8));
            let eta = 2.0 * w + t;
            prop_assert!(funcs.s(h, eta) >= 0.5 * h * eta * eta * (1.0 - 1e-14));
        }

        #[test]
        fn s_nonnegative_and_sigma_monotone(h in 0.0f64..3.0, dh in 0.0f64..1.0, eta in 0.0f64..3.0) {
            let funcs = EnergyFunctionals::new(unit());
            prop_assert!(funcs.s(h, eta) >= 0.0);
            prop_assert!(funcs.sigma(h + dh) <= funcs.sigma(h));
        }
    }
}

//! Electrostatic field of a charge density, `E = ∫ ρ(y) (x - y)/|x - y|³ dy`.
//!
//! The kernel carries no `1/4π`; Gauss's law reads `∇·E = 4πρ`.
//!
//! The radial path represents `ρ` as piecewise linear in `r` and integrates
//! the enclosed charge exactly cell by cell, so the field is evaluated in
//! closed form at any radius. The Cartesian path is a low-resolution direct
//! summation used only to cross-check the radial one. `oracle_field` is an
//! independent adaptive quadrature of the Coulomb integral.

use std::cell::Cell;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::quadrature::{integrate_adaptive, integrate_panels};
use crate::{japanese_bracket, Error, Mat3, Result, Vec3};

/// Largest Cartesian grid edge accepted by [`solve_field_cartesian`].
pub const MAX_CARTESIAN_EDGE: usize = 48;

const NEAR_SPLIT: usize = 4;

/// Radial nodes `0 = r_0 < ... < r_{n-1} = r_max`, geometrically stretched
/// toward the origin when `stretch > 0`.
pub fn radial_grid(r_max: f64, n: usize, stretch: f64) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / last;
            if i + 1 == n {
                r_max
            } else if stretch.abs() < 1e-12 {
                r_max * t
            } else {
                r_max * (stretch * t).exp_m1() / stretch.exp_m1()
            }
        })
        .collect()
}

/// Inserts extra nodes (kept sorted, duplicates dropped) so that a jump of
/// the sampled density at each break is resolved by a near-vertical cell.
pub fn with_breakpoints(nodes: &[f64], breaks: &[f64], width: f64) -> Vec<f64> {
    let mut out: Vec<f64> = nodes.to_vec();
    let r_max = *nodes.last().expect("nonempty grid");
    for &b in breaks {
        for r in [b, b + width] {
            if r > 0.0 && r < r_max {
                out.push(r);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 0.25 * width);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Beyond the last node `ρ(r) = ρ_N (R(r_N)/R(r))^q`.
    pub tail_exponent: f64,
}

impl RadialDensity {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, tail_exponent: f64) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "radial density needs matching node/value arrays of length >= 2 (got {} and {})",
                nodes.len(),
                values.len()
            )));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument("first radial node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "radial nodes must be strictly increasing".into(),
            ));
        }
        if values.iter().chain(&nodes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("radial density has non-finite entries".into()));
        }
        Ok(RadialDensity {
            nodes,
            values,
            tail_exponent,
        })
    }

    pub fn from_fn(nodes: Vec<f64>, tail_exponent: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = nodes.iter().map(|&r| f(r)).collect();
        RadialDensity::new(nodes, values, tail_exponent)
    }

    pub fn zeros(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        RadialDensity::new(nodes, vec![0.0; n], 6.0)
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn cell(&self, r: f64) -> usize {
        let idx = self.nodes.partition_point(|&n| n <= r);
        idx.saturating_sub(1).min(self.nodes.len() - 2)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.nodes.len();
        if r >= self.nodes[n - 1] {
            let rn = self.nodes[n - 1];
            return self.values[n - 1] * (japanese_bracket(rn) / japanese_bracket(r)).powf(self.tail_exponent);
        }
        let i = self.cell(r);
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let t = (r - a) / (b - a);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// `sup |ρ|` including the tail (which is monotone, so the last node).
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup |dρ/dr|` of the interpolant.
    pub fn sup_slope(&self) -> f64 {
        self.nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(r, v)| ((v[1] - v[0]) / (r[1] - r[0])).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, lambda: f64) -> RadialDensity {
        RadialDensity {
            nodes: self.nodes.clone(),
            values: self.values.iter().map(|v| v * lambda).collect(),
            tail_exponent: self.tail_exponent,
        }
    }
}

/// Radial field `E(x) = Q(|x|) x / |x|³` with exact enclosed charge for a
/// piecewise-linear density.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    nodes: Vec<f64>,
    rho: Vec<f64>,
    slope: Vec<f64>,
    q_enc: Vec<f64>,
    /// Charge carried by the extrapolated tail beyond the last node.
    pub tail_charge: f64,
}

/// Charge of `∫_a^{a+σ} (ρ + m(s - a)) s² ds`, without the `4π`.
#[inline]
fn cell_moment(a: f64, rho: f64, m: f64, sigma: f64) -> f64 {
    sigma
        * (a * a * rho
            + sigma * (0.5 * (a * a * m + 2.0 * a * rho) + sigma * ((2.0 * a * m + rho) / 3.0 + 0.25 * m * sigma)))
}

impl RadialField {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Enclosed charge at each node.
    pub fn enclosed(&self) -> &[f64] {
        &self.q_enc
    }

    pub fn total_charge(&self) -> f64 {
        self.q_enc.last().unwrap() + self.tail_charge
    }

    pub fn is_zero(&self) -> bool {
        self.rho.iter().all(|&v| v == 0.0)
    }

    fn cell(&self, r: f64) -> usize {
        let idx = self.nodes.partition_point(|&n| n <= r);
        idx.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Returns `(Q(r)/r³, ρ(r), beyond_grid)`; beyond the grid the
    /// monopole continuation of the last node is used and `ρ` is reported as
    /// zero (the continuation is divergence-free).
    #[inline]
    pub fn q_over_r3(&self, r: f64) -> (f64, f64, bool) {
        let n = self.nodes.len();
        if r >= self.nodes[n - 1] {
            return (self.q_enc[n - 1] / (r * r * r), 0.0, r > self.nodes[n - 1]);
        }
        let i = self.cell(r);
        let a = self.nodes[i];
        let (rho0, m) = (self.rho[i], self.slope[i]);
        let sigma = r - a;
        let rho = rho0 + m * sigma;
        if i == 0 {
            // a = 0: Q = 4π(ρ r³/3 + m r⁴/4)
            return (4.0 * PI * (rho0 / 3.0 + 0.25 * m * r), rho, false);
        }
        let q = self.q_enc[i] + 4.0 * PI * cell_moment(a, rho0, m, sigma);
        (q / (r * r * r), rho, false)
    }

    /// Radial component `e(r) = Q(r)/r²`.
    pub fn e(&self, r: f64) -> f64 {
        self.q_over_r3(r).0 * r
    }

    pub fn e_at_nodes(&self) -> Vec<f64> {
        self.nodes.iter().map(|&r| self.e(r)).collect()
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> (Vec3, bool) {
        let (k, _, flag) = self.q_over_r3(x.norm());
        (x * k, flag)
    }

    /// Jacobian `(Q/r³) I + (4πρ - 3Q/r³) x̂ x̂ᵀ`.
    pub fn grad(&self, x: &Vec3) -> (Mat3, bool) {
        let r = x.norm();
        let (k, rho, flag) = self.q_over_r3(r);
        if r == 0.0 {
            return (Mat3::identity() * k, flag);
        }
        let xh = x / r;
        (
            Mat3::identity() * k + xh * xh.transpose() * (4.0 * PI * rho - 3.0 * k),
            flag,
        )
    }
}

/// Radial Coulomb field of `rho` by the shell theorem.
///
/// Fails with [`Error::DivergentTail`] when the extrapolated tail carries
/// infinite charge (`q_ext ≤ 3` with a nonzero last value).
pub fn solve_field_radial(rho: &RadialDensity) -> Result<RadialField> {
    let n = rho.nodes.len();
    let mut slope = Vec::with_capacity(n - 1);
    let mut q_enc = Vec::with_capacity(n);
    q_enc.push(0.0);
    for i in 0..n - 1 {
        let (a, b) = (rho.nodes[i], rho.nodes[i + 1]);
        let m = (rho.values[i + 1] - rho.values[i]) / (b - a);
        slope.push(m);
        q_enc.push(q_enc[i] + 4.0 * PI * cell_moment(a, rho.values[i], m, b - a));
    }
    let rho_n = rho.values[n - 1];
    let tail_charge = if rho_n == 0.0 {
        0.0
    } else if rho.tail_exponent <= 3.0 {
        return Err(Error::DivergentTail {
            exponent: rho.tail_exponent,
        });
    } else {
        let rn = rho.nodes[n - 1];
        let q = rho.tail_exponent;
        // s = r_N/u maps [r_N, ∞) onto (0, 1]
        let integrand = |u: f64| rn.powi(3) * u.powf(q - 4.0) * (u * u + rn * rn).powf(-0.5 * q);
        let est = integrate_adaptive(integrand, 0.0, 1.0, 0.0, 1e-10, 400)?;
        4.0 * PI * rho_n * japanese_bracket(rn).powf(q) * est.value
    };
    Ok(RadialField {
        nodes: rho.nodes.clone(),
        rho: rho.values.clone(),
        slope,
        q_enc,
        tail_charge,
    })
}

/// Direct-summation field on a cell-centred Cartesian grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianField {
    pub edge: usize,
    pub half_width: f64,
    values: Vec<Vec3>,
    pub total_charge: f64,
}

impl CartesianField {
    fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.edge as f64
    }

    fn centre(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    fn at(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.values[(i * self.edge + j) * self.edge + k]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == Vec3::zeros())
    }

    /// Cell index and fractional offset along one axis, or `None` outside
    /// the hull of cell centres.
    fn locate(&self, c: f64) -> Option<(usize, f64)> {
        let h = self.spacing();
        let s = (c - self.centre(0)) / h;
        if !(0.0..=(self.edge - 1) as f64).contains(&s) {
            return None;
        }
        let i = (s.floor() as usize).min(self.edge - 2);
        Some((i, s - i as f64))
    }

    pub fn eval(&self, x: &Vec3) -> (Vec3, bool) {
        match (self.locate(x.x), self.locate(x.y), self.locate(x.z)) {
            (Some((i, tx)), Some((j, ty)), Some((k, tz))) => {
                let mut e = Vec3::zeros();
                for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                    for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                        for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
                            e += self.at(i + di, j + dj, k + dk) * (wx * wy * wz);
                        }
                    }
                }
                (e, false)
            }
            _ => {
                let r = x.norm();
                (x * (self.total_charge / (r * r * r)), true)
            }
        }
    }

    /// Jacobian of the trilinear interpolant.
    pub fn grad(&self, x: &Vec3) -> (Mat3, bool) {
        match (self.locate(x.x), self.locate(x.y), self.locate(x.z)) {
            (Some((i, tx)), Some((j, ty)), Some((k, tz))) => {
                let h = self.spacing();
                let mut jac = Mat3::zeros();
                for (di, wx, dx) in [(0, 1.0 - tx, -1.0), (1, tx, 1.0)] {
                    for (dj, wy, dy) in [(0, 1.0 - ty, -1.0), (1, ty, 1.0)] {
                        for (dk, wz, dz) in [(0, 1.0 - tz, -1.0), (1, tz, 1.0)] {
                            let v = self.at(i + di, j + dj, k + dk);
                            let dw = Vec3::new(dx * wy * wz, wx * dy * wz, wx * wy * dz) / h;
                            jac += v * dw.transpose();
                        }
                    }
                }
                (jac, false)
            }
            _ => {
                let r = x.norm();
                let xh = x / r;
                let k = self.total_charge / (r * r * r);
                (Mat3::identity() * k - xh * xh.transpose() * (3.0 * k), true)
            }
        }
    }
}

/// Field of `rho` sampled at the centres of an `edge³` grid on
/// `[-half_width, half_width]³`, by direct summation over cell charges.
pub fn solve_field_cartesian(
    rho: &(dyn Fn(&Vec3) -> f64 + Sync),
    edge: usize,
    half_width: f64,
) -> Result<CartesianField> {
    if !(2..=MAX_CARTESIAN_EDGE).contains(&edge) {
        return Err(Error::InvalidArgument(format!(
            "cartesian grid edge must lie in [2, {MAX_CARTESIAN_EDGE}], got {edge}"
        )));
    }
    let h = 2.0 * half_width / edge as f64;
    let centre = |i: usize| -half_width + (i as f64 + 0.5) * h;
    let points: Vec<Vec3> = (0..edge * edge * edge)
        .map(|idx| {
            Vec3::new(
                centre(idx / (edge * edge)),
                centre((idx / edge) % edge),
                centre(idx % edge),
            )
        })
        .collect();
    let charges: Vec<f64> = points.iter().map(|p| rho(p) * h * h * h).collect();
    // Sources adjacent to the target are split into NEAR_SPLIT³ sub-cells;
    // point charges at cell centres are too crude at that distance.
    let hs = h / NEAR_SPLIT as f64;
    let offsets: Vec<Vec3> = (0..NEAR_SPLIT.pow(3))
        .map(|k| {
            let c = |i: usize| -0.5 * h + (i as f64 + 0.5) * hs;
            Vec3::new(
                c(k / (NEAR_SPLIT * NEAR_SPLIT)),
                c((k / NEAR_SPLIT) % NEAR_SPLIT),
                c(k % NEAR_SPLIT),
            )
        })
        .collect();
    let index = |idx: usize| [idx / (edge * edge), (idx / edge) % edge, idx % edge];
    let values = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let ii = index(i);
            let mut e = Vec3::zeros();
            for (j, (y, q)) in points.iter().zip(&charges).enumerate() {
                let jj = index(j);
                let near = (0..3).all(|k| ii[k].abs_diff(jj[k]) <= 1);
                if near {
                    for off in &offsets {
                        let ys = y + off;
                        let q = rho(&ys) * hs * hs * hs;
                        if q != 0.0 {
                            let d = x - ys;
                            let r = d.norm();
                            e += d * (q / (r * r * r));
                        }
                    }
                } else if *q != 0.0 {
                    let d = x - y;
                    let r = d.norm();
                    e += d * (q / (r * r * r));
                }
            }
            e
        })
        .collect();
    Ok(CartesianField {
        edge,
        half_width,
        values,
        total_charge: charges.iter().sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Radial(RadialField),
    Cartesian(CartesianField),
}

/// Self-consistent field at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub data: FieldData,
}

/// Jacobian sample with the out-of-domain flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSample {
    pub jacobian: Mat3,
    pub extrapolated: bool,
}

impl FieldState {
    pub fn radial(time: f64, field: RadialField) -> Self {
        FieldState {
            time,
            data: FieldData::Radial(field),
        }
    }

    pub fn cartesian(time: f64, field: CartesianField) -> Self {
        FieldState {
            time,
            data: FieldData::Cartesian(field),
        }
    }

    pub fn as_radial(&self) -> Option<&RadialField> {
        match &self.data {
            FieldData::Radial(f) => Some(f),
            FieldData::Cartesian(_) => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> (Vec3, bool) {
        match &self.data {
            FieldData::Radial(f) => f.eval(x),
            FieldData::Cartesian(f) => f.eval(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.data {
            FieldData::Radial(f) => f.is_zero(),
            FieldData::Cartesian(f) => f.is_zero(),
        }
    }
}

pub fn solve_grad_field(state: &FieldState, x: &Vec3) -> GradSample {
    let (jacobian, extrapolated) = match &state.data {
        FieldData::Radial(f) => f.grad(x),
        FieldData::Cartesian(f) => f.grad(x),
    };
    GradSample { jacobian, extrapolated }
}

/// Largest absolute entry of a matrix.
pub fn max_abs_entry(m: &Mat3) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Density handed to [`oracle_field`].
pub struct OracleDensity<'a> {
    pub density: &'a (dyn Fn(&Vec3) -> f64 + Sync),
    /// Radii of spheres (about the origin) across which the density may be
    /// discontinuous or kinked; used as quadrature breakpoints.
    pub breaks: Vec<f64>,
    /// The integral is truncated to the ball of this radius.
    pub r_trunc: f64,
    /// Set when the density depends on `|y|` only, enabling the reduction
    /// to a two-dimensional integral.
    pub radial: bool,
}

const ORACLE_MAX_INTERVALS: usize = 4000;

/// Positive parameters `s` where the ray `x + sω` crosses the sphere of
/// radius `b`.
fn ray_sphere(x: &Vec3, omega: &Vec3, b: f64) -> Option<(f64, f64)> {
    let xo = x.dot(omega);
    let disc = xo * xo - x.norm_squared() + b * b;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some((-xo - sq, -xo + sq))
}

/// `∫ ρ(x + sω) ds` over the part of the ray inside the truncation ball.
fn ray_integral(rho: &OracleDensity, x: &Vec3, omega: &Vec3, tol: f64) -> Result<f64> {
    let Some((lo, hi)) = ray_sphere(x, omega, rho.r_trunc) else {
        return Ok(0.0);
    };
    let (lo, hi) = (lo.max(0.0), hi);
    if hi <= lo {
        return Ok(0.0);
    }
    let mut breaks = vec![lo, hi];
    for &b in &rho.breaks {
        if let Some((s1, s2)) = ray_sphere(x, omega, b) {
            breaks.extend([s1, s2].into_iter().filter(|&s| s > lo && s < hi));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let f = |s: f64| (rho.density)(&(x + omega * s));
    Ok(integrate_panels(f, &breaks, tol, 1e-12, ORACLE_MAX_INTERVALS)?.value)
}

fn orthonormal_frame(x: &Vec3) -> (Vec3, Vec3, Vec3) {
    let a = if x.norm() > 0.0 { x.normalize() } else { Vec3::z() };
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - a * a.dot(&helper)).normalize();
    let e2 = a.cross(&e1);
    (a, e1, e2)
}

/// Direct adaptive quadrature of the Coulomb integral at `x`, in spherical
/// coordinates centred at `x` so the kernel singularity is cancelled by
/// the volume element: `E(x) = -∫ ω ∫ ρ(x + sω) ds dω`.
pub fn oracle_field(rho: &OracleDensity, x: &Vec3, tol: f64) -> Result<Vec3> {
    let (a, e1, e2) = orthonormal_frame(x);
    let d = x.norm();
    let mut theta_breaks = vec![0.0, PI];
    for &b in rho.breaks.iter().chain(std::iter::once(&rho.r_trunc)) {
        if d > b && b > 0.0 {
            let c = (1.0 - (b / d).powi(2)).sqrt();
            theta_breaks.extend([c.acos(), (-c).acos()]);
        }
    }
    theta_breaks.sort_by(f64::total_cmp);
    theta_breaks.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
    let failure: Cell<Option<Error>> = Cell::new(None);
    let inner_tol = tol / (4.0 * PI * PI);
    let ray = |omega: Vec3| match ray_integral(rho, x, &omega, inner_tol) {
        Ok(v) => v,
        Err(e) => {
            failure.set(Some(e));
            0.0
        }
    };
    let direction = |theta: f64, phi: f64| a * theta.cos() + (e1 * phi.cos() + e2 * phi.sin()) * theta.sin();

    let result = if rho.radial {
        let axial = integrate_panels(
            |theta| theta.sin() * theta.cos() * ray(direction(theta, 0.0)),
            &theta_breaks,
            tol / (2.0 * PI),
            1e-12,
            ORACLE_MAX_INTERVALS,
        )?;
        -a * (2.0 * PI * axial.value)
    } else {
        let mut out = Vec3::zeros();
        for axis in [a, e1, e2].iter() {
            let comp = integrate_panels(
                |theta| {
                    let inner = integrate_adaptive(
                        |phi| {
                            let w = direction(theta, phi);
                            w.dot(axis) * ray(w)
                        },
                        0.0,
                        2.0 * PI,
                        tol / (4.0 * PI),
                        1e-12,
                        ORACLE_MAX_INTERVALS,
                    );
                    match inner {
                        Ok(v) => theta.sin() * v.value,
                        Err(e) => {
                            failure.set(Some(e));
                            0.0
                        }
                    }
                },
                &theta_breaks,
                tol / 2.0,
                1e-12,
                ORACLE_MAX_INTERVALS,
            )?;
            out -= axis * comp.value;
        }
        out
    };
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ball_density(nodes: &[f64], b: f64) -> RadialDensity {
        let nodes = with_breakpoints(nodes, &[b], 1e-9);
        RadialDensity::from_fn(nodes, 6.0, |r| if r <= b { 1.0 } else { 0.0 }).unwrap()
    }

    fn ball_closed_form(r: f64) -> f64 {
        let c = 4.0 * PI / 3.0;
        if r <= 1.0 {
            c * r
        } else {
            c / (r * r)
        }
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let rho = RadialDensity::zeros(radial_grid(10.0, 32, 2.0)).unwrap();
        let f = solve_field_radial(&rho).unwrap();
        assert!(f.is_zero());
        assert!(f.e_at_nodes().iter().all(|&e| e == 0.0));
        let g = f.grad(&Vec3::new(0.3, 0.2, 0.1)).0;
        assert_eq!(g, Mat3::zeros());
    }

    #[test]
    fn uniform_ball_matches_shell_theorem() {
        let rho = ball_density(&radial_grid(20.0, 64, 3.0), 1.0);
        let f = solve_field_radial(&rho).unwrap();
        for r in [0.05, 0.3, 0.99, 1.5, 3.0, 10.0, 19.0] {
            let e = f.e(r);
            assert!((e - ball_closed_form(r)).abs() < 1e-7 * ball_closed_form(r), "r = {r}");
        }
        let jac = f.grad(&Vec3::new(0.2, -0.1, 0.4)).0;
        assert!((jac - Mat3::identity() * (4.0 * PI / 3.0)).norm() < 1e-12);
    }

    #[test]
    fn field_vanishes_inside_a_shell() {
        let nodes = with_breakpoints(&radial_grid(5.0, 64, 0.0), &[0.9, 1.0], 1e-9);
        let rho = RadialDensity::from_fn(nodes, 6.0, |r| if (0.9..=1.0).contains(&r) { 1.0 } else { 0.0 }).unwrap();
        let f = solve_field_radial(&rho).unwrap();
        assert!(f.e(0.5).abs() < 1e-15);
        // and the oracle agrees
        let dens = |y: &Vec3| {
            let r = y.norm();
            if (0.9..=1.0).contains(&r) {
                1.0
            } else {
                0.0
            }
        };
        let od = OracleDensity {
            density: &dens,
            breaks: vec![0.9, 1.0],
            r_trunc: 2.0,
            radial: true,
        };
        let e = oracle_field(&od, &Vec3::new(0.5, 0.0, 0.0), 1e-9).unwrap();
        assert!(e.norm() < 1e-7);
    }

    #[test]
    fn gauss_law_recovers_density() {
        let nodes = radial_grid(10.0, 128, 3.0);
        let rho = RadialDensity::from_fn(nodes.clone(), 6.0, |r| (1.0 + r * r).powi(-3)).unwrap();
        let f = solve_field_radial(&rho).unwrap();
        for &r in nodes.iter().skip(5).step_by(11) {
            let h = 1e-5 * r.max(1e-2);
            let flux = |s: f64| f.e(s) * s * s;
            let div = (flux(r + h) - flux(r - h)) / (2.0 * h) / (r * r);
            assert!(
                (div - 4.0 * PI * rho.eval(r)).abs() < 1e-5 * (1.0 + 4.0 * PI * rho.eval(r)),
                "r = {r}"
            );
        }
    }

    #[test]
    fn far_field_charge_is_constant_beyond_support() {
        let rho = ball_density(&radial_grid(30.0, 64, 2.0), 2.0);
        let f = solve_field_radial(&rho).unwrap();
        let q = f.e(3.0) * 9.0;
        for r in [4.0, 10.0, 29.0, 50.0] {
            assert!((f.e(r) * r * r - q).abs() < 1e-12 * q);
        }
        // the jump at the ball edge is resolved by a cell of width 1e-9
        assert!((q - 4.0 * PI / 3.0 * 8.0).abs() < 1e-7);
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let nodes = radial_grid(10.0, 32, 1.0);
        let rho = RadialDensity::from_fn(nodes, 2.5, |r| (1.0 + r * r).powf(-1.25)).unwrap();
        assert!(matches!(solve_field_radial(&rho), Err(Error::DivergentTail { .. })));
    }

    #[test]
    fn tail_charge_matches_power_law_integral() {
        // ρ = R⁻⁴ everywhere: tail beyond r_N carries 4π ∫ s² R⁻⁴ ds
        let nodes = radial_grid(20.0, 64, 2.0);
        let rho = RadialDensity::from_fn(nodes, 4.0, |r| (1.0 + r * r).powi(-2)).unwrap();
        let f = solve_field_radial(&rho).unwrap();
        // ∫_{20}^∞ s²/(1+s²)² ds = [atan(s)/2 - s/(2(1+s²))]_{20}^∞
        let exact = 4.0 * PI * (0.5 * (PI / 2.0 - 20f64.atan()) + 20.0 / (2.0 * 401.0));
        assert!((f.tail_charge - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let rho = RadialDensity::from_fn(radial_grid(10.0, 64, 2.0), 6.0, |r| (1.0 + r * r).powi(-3)).unwrap();
        let f = solve_field_radial(&rho).unwrap();
        for x in [Vec3::new(0.7, 0.2, -0.4), Vec3::new(2.0, 1.0, 3.0)] {
            let h = 1e-6;
            let mut fd = Mat3::zeros();
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                fd.set_column(k, &((f.eval(&(x + e)).0 - f.eval(&(x - e)).0) / (2.0 * h)));
            }
            assert!((fd - f.grad(&x).0).norm() < 1e-6);
        }
    }

    #[test]
    fn beyond_grid_is_flagged_monopole() {
        let rho = ball_density(&radial_grid(5.0, 32, 1.0), 1.0);
        let f = solve_field_radial(&rho).unwrap();
        let (e, flag) = f.eval(&Vec3::new(8.0, 0.0, 0.0));
        assert!(flag);
        assert!((e.x - f.e(5.0) * 25.0 / 64.0).abs() < 1e-15);
        assert!(!f.eval(&Vec3::new(4.0, 0.0, 0.0)).1);
    }

    #[test]
    fn oracle_matches_uniform_ball_outside() {
        let dens = |y: &Vec3| if y.norm() <= 1.0 { 1.0 } else { 0.0 };
        let od = OracleDensity {
            density: &dens,
            breaks: vec![1.0],
            r_trunc: 1.0,
            radial: true,
        };
        let e = oracle_field(&od, &Vec3::new(2.0, 0.0, 0.0), 1e-10).unwrap();
        assert!((e - Vec3::new(PI / 3.0, 0.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn oracle_of_zero_density_is_zero() {
        let dens = |_: &Vec3| 0.0;
        let od = OracleDensity {
            density: &dens,
            breaks: vec![],
            r_trunc: 3.0,
            radial: false,
        };
        assert_eq!(
            oracle_field(&od, &Vec3::new(0.1, 0.2, 0.3), 1e-8).unwrap(),
            Vec3::zeros()
        );
    }

    #[test]
    fn oracle_respects_reflection_symmetry() {
        let dens = |y: &Vec3| y.x * (-y.norm_squared()).exp();
        let od = OracleDensity {
            density: &dens,
            breaks: vec![],
            r_trunc: 6.0,
            radial: false,
        };
        let e = oracle_field(&od, &Vec3::new(0.0, 0.5, 0.0), 1e-7).unwrap();
        assert!(e.y.abs() < 1e-6 && e.z.abs() < 1e-6, "{e:?}");
        assert!(e.x.abs() > 1e-3);
    }

    #[test]
    fn cartesian_solver_tracks_radial_solution() {
        let gauss = |y: &Vec3| (-y.norm_squared()).exp();
        let cart = solve_field_cartesian(&gauss, 20, 5.0).unwrap();
        let rho = RadialDensity::from_fn(radial_grid(6.0, 200, 1.0), 6.0, |r| (-r * r).exp()).unwrap();
        let rad = solve_field_radial(&rho).unwrap();
        for x in [Vec3::new(1.5, 0.3, -0.2), Vec3::new(-2.0, 1.0, 1.0)] {
            let ec = cart.eval(&x).0;
            let er = rad.eval(&x).0;
            assert!((ec - er).norm() < 0.05 * er.norm(), "{ec:?} vs {er:?}");
        }
        assert!(cart.eval(&Vec3::new(9.0, 0.0, 0.0)).1);
        assert!(solve_field_cartesian(&gauss, 49, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn field_is_linear_in_density(lambda in 0.01f64..10.0, r in 0.0f64..12.0) {
            let rho = RadialDensity::from_fn(radial_grid(10.0, 48, 2.0), 6.0, |s| (1.0 + s * s).powi(-3)).unwrap();
            let f1 = solve_field_radial(&rho).unwrap();
            let f2 = solve_field_radial(&rho.scaled(lambda)).unwrap();
            let (a, b) = (f1.e(r) * lambda, f2.e(r));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }
}

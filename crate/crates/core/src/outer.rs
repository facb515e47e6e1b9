//! Slow outer field between pulses.
//!
//! Between pulses the scaled field solves `U'' + h_x U' + h_xx U + 1 - U = 0` with
//! prescribed values `U(P_j) = nu_j` at the pulse locations. Since the problem is
//! linear, the one-sided derivatives at every pulse are affine in `nu`; [`OuterMap`]
//! stores that map. Constant slopes use closed forms, other terrains a Chebyshev
//! collocation solve per interval.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Domain, Terrain};

/// `s = sqrt(H^2 + 4)`.
pub fn s_of(h: f64) -> f64 {
    (h * h + 4.0).sqrt()
}

/// Overflow-free hyperbolic factors for an interval of length `delta`:
/// `coth(s delta/2)`, `e^{H delta/2}/sinh(s delta/2)` and `e^{-H delta/2}/sinh(s delta/2)`.
fn interval_factors(delta: f64, h: f64) -> (f64, f64, f64) {
    let s = s_of(h);
    if delta.is_infinite() {
        return (1.0, 0.0, 0.0);
    }
    let x = s * delta;
    let one_minus = -(-x).exp_m1();
    let coth = (2.0 - one_minus) / one_minus;
    let ep = 2.0 * ((h - s) * delta / 2.0).exp() / one_minus;
    let em = 2.0 * ((-h - s) * delta / 2.0).exp() / one_minus;
    (coth, ep, em)
}

/// One-sided derivatives of the outer field on a single interval of length `spacing`
/// with `1 - U = kappa` at both ends: `(U_x at the left end, U_x at the right end)`.
pub fn edge_derivatives_constant_slope(spacing: f64, h: f64, kappa_left: f64, kappa_right: f64) -> (f64, f64) {
    let s = s_of(h);
    let (coth, ep, em) = interval_factors(spacing, h);
    let left = kappa_left * (h / 2.0 + s / 2.0 * coth) - kappa_right * s / 2.0 * ep;
    let right = kappa_right * (h / 2.0 - s / 2.0 * coth) + kappa_left * s / 2.0 * em;
    (left, right)
}

/// Right-of-pulse derivative for a gap `k` to the next pulse, leading order.
pub fn r_plus(k: f64, h: f64) -> f64 {
    let s = s_of(h);
    if s * k > 40.0 {
        return edge_derivatives_constant_slope(k, h, 1.0, 1.0).0;
    }
    let sh = (s * k / 4.0).sinh();
    h / 2.0 - s / 2.0 * ((h * k / 2.0).exp_m1() - 2.0 * sh * sh) / (s * k / 2.0).sinh()
}

/// Left-of-pulse derivative for a gap `k` to the previous pulse, leading order.
pub fn r_minus(k: f64, h: f64) -> f64 {
    let s = s_of(h);
    if s * k > 40.0 {
        return edge_derivatives_constant_slope(k, h, 1.0, 1.0).1;
    }
    let sh = (s * k / 4.0).sinh();
    h / 2.0 + s / 2.0 * ((-h * k / 2.0).exp_m1() - 2.0 * sh * sh) / (s * k / 2.0).sinh()
}

/// `U_x(P_1^-)` for a reflecting wall at distance `dist` to the left of the pulse.
pub fn neumann_left_derivative(dist: f64, h: f64, kappa: f64) -> f64 {
    let s = s_of(h);
    let th = (s * dist / 2.0).tanh();
    -2.0 * kappa * th / (h * th + s)
}

/// `U_x(P_N^+)` for a reflecting wall at distance `dist` to the right of the pulse.
pub fn neumann_right_derivative(dist: f64, h: f64, kappa: f64) -> f64 {
    let s = s_of(h);
    let th = (s * dist / 2.0).tanh();
    2.0 * kappa * th / (s - h * th)
}

/// Outer field on one constant-slope interval at offset `y` from its left end.
fn interval_profile(delta: f64, h: f64, kl: f64, kr: f64, y: f64) -> f64 {
    let s = s_of(h);
    // sinh(a)/sinh(b) for 0 <= a <= b without overflow.
    let ratio = |a: f64, b: f64| -> f64 {
        if b == 0.0 {
            return 0.0;
        }
        (a - b).exp() * (-(-2.0 * a).exp_m1()) / (-(-2.0 * b).exp_m1())
    };
    let w = kl * (-h * y / 2.0).exp() * ratio(s * (delta - y) / 2.0, s * delta / 2.0)
        + kr * (h * (delta - y) / 2.0).exp() * ratio(s * y / 2.0, s * delta / 2.0);
    1.0 - w
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterOptions {
    /// Truncation length for semi-infinite intervals with non-constant terrain.
    pub far_field: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Agreement required between successive Chebyshev refinements.
    pub tol: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions { far_field: 40.0, min_nodes: 64, max_nodes: 1024, tol: 1e-10 }
    }
}

/// End condition for a collocation solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EndCondition {
    /// `U = nu` with `nu` carried as an affine unknown.
    Pulse,
    /// `U_x = 0`.
    Wall,
    /// `U_x = r (U - u_inf)`, the decaying far-field mode.
    FarField { r: f64, u_inf: f64 },
}

/// Affine endpoint derivatives on one interval:
/// `U_x(end) = c0 + c_left nu_left + c_right nu_right` (coefficients of absent pulses are 0).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeMap {
    pub left: [f64; 3],
    pub right: [f64; 3],
    pub residual: f64,
    pub nodes: usize,
}

/// Chebyshev points on [-1, 1] (descending) and first-derivative matrix.
fn cheb(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let pi = std::f64::consts::PI;
    let x: Vec<f64> = (0..=n).map(|k| (pi * k as f64 / n as f64).cos()).collect();
    let c = |k: usize| -> f64 {
        let e = if k == 0 || k == n { 2.0 } else { 1.0 };
        if k % 2 == 0 { e } else { -e }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (x, d)
}

struct Collocation {
    xs: Vec<f64>,
    d1: DMatrix<f64>,
    sols: DMatrix<f64>,
    residual: f64,
}

fn collocate(terrain: &Terrain, x0: f64, x1: f64, lc: EndCondition, rc: EndCondition, n: usize, wrap: Option<f64>) -> Result<Collocation> {
    let (t, dt) = cheb(n);
    let scale = 2.0 / (x1 - x0);
    let d1 = dt * scale;
    let d2 = &d1 * &d1;
    // Node 0 is the right end (t = 1), node n the left end.
    let xs: Vec<f64> = t.iter().map(|ti| x0 + (x1 - x0) * (ti + 1.0) / 2.0).collect();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DMatrix::zeros(n + 1, 3);
    for i in 1..n {
        let x = match wrap {
            Some(l) => xs[i].rem_euclid(l),
            None => xs[i],
        };
        let (_, hx, hxx) = terrain.eval(x);
        for j in 0..=n {
            a[(i, j)] = d2[(i, j)] + hx * d1[(i, j)];
        }
        a[(i, i)] += hxx - 1.0;
        rhs[(i, 0)] = -1.0;
    }
    for (row, cond, col) in [(n, lc, 1usize), (0, rc, 2usize)] {
        match cond {
            EndCondition::Pulse => {
                a[(row, row)] = 1.0;
                rhs[(row, col)] = 1.0;
            }
            EndCondition::Wall => {
                for j in 0..=n {
                    a[(row, j)] = d1[(row, j)];
                }
            }
            EndCondition::FarField { r, u_inf } => {
                for j in 0..=n {
                    a[(row, j)] = d1[(row, j)];
                }
                a[(row, row)] -= r;
                rhs[(row, 0)] = -r * u_inf;
            }
        }
    }
    let lu = a.clone().lu();
    let sols = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NoSolution("outer collocation matrix is singular".into()))?;
    let res = &a * &sols - &rhs;
    let residual = res.amax();
    Ok(Collocation { xs, d1, sols, residual })
}

/// Solves the outer problem on `[x0, x1]` and returns the affine endpoint derivatives,
/// refining the collocation until successive results agree to `opts.tol`.
pub fn solve_interval(
    terrain: &Terrain,
    x0: f64,
    x1: f64,
    lc: EndCondition,
    rc: EndCondition,
    wrap: Option<f64>,
    opts: &OuterOptions,
) -> Result<EdgeMap> {
    let extract = |c: &Collocation| -> EdgeMap {
        let n = c.xs.len() - 1;
        let mut e = EdgeMap { residual: c.residual, nodes: n + 1, ..Default::default() };
        for k in 0..3 {
            let mut dl = 0.0;
            let mut dr = 0.0;
            for j in 0..=n {
                dl += c.d1[(n, j)] * c.sols[(j, k)];
                dr += c.d1[(0, j)] * c.sols[(j, k)];
            }
            e.left[k] = dl;
            e.right[k] = dr;
        }
        e
    };
    let mut n = opts.min_nodes.max(8);
    let mut prev = extract(&collocate(terrain, x0, x1, lc, rc, n, wrap)?);
    while n * 2 <= opts.max_nodes {
        n *= 2;
        let next = extract(&collocate(terrain, x0, x1, lc, rc, n, wrap)?);
        let diff = (0..3)
            .map(|k| (next.left[k] - prev.left[k]).abs().max((next.right[k] - prev.right[k]).abs()))
            .fold(0.0, f64::max);
        let size = (0..3).map(|k| next.left[k].abs().max(next.right[k].abs())).fold(1.0, f64::max);
        prev = next;
        if diff <= opts.tol * size {
            return Ok(prev);
        }
    }
    Err(Error::not_converged("outer collocation", opts.max_nodes, prev.residual))
}

/// One interval of the partition induced by the pulses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    /// Between pulse `left` at `x0` and pulse `right` at `x1` (`x1` may exceed `L` when wrapping).
    Between { left: usize, right: usize, x0: f64, x1: f64 },
    /// Wall at `wall`, first pulse at `x1`.
    LeftWall { wall: f64, x1: f64 },
    /// Last pulse at `x0`, wall at `wall`.
    RightWall { x0: f64, wall: f64 },
    /// Semi-infinite to the left of the first pulse.
    LeftFar { x1: f64 },
    /// Semi-infinite to the right of the last pulse.
    RightFar { x0: f64 },
}

pub fn segments(positions: &[f64], domain: &Domain) -> Vec<Segment> {
    let n = positions.len();
    let mut segs = Vec::with_capacity(n + 1);
    match domain {
        Domain::Unbounded => segs.push(Segment::LeftFar { x1: positions[0] }),
        Domain::Neumann { .. } => segs.push(Segment::LeftWall { wall: 0.0, x1: positions[0] }),
        Domain::Periodic { .. } => {}
    }
    for j in 0..n.saturating_sub(1) {
        segs.push(Segment::Between { left: j, right: j + 1, x0: positions[j], x1: positions[j + 1] });
    }
    match domain {
        Domain::Unbounded => segs.push(Segment::RightFar { x0: positions[n - 1] }),
        Domain::Neumann { length } => segs.push(Segment::RightWall { x0: positions[n - 1], wall: *length }),
        Domain::Periodic { length } => segs.push(Segment::Between {
            left: n - 1,
            right: 0,
            x0: positions[n - 1],
            x1: positions[0] + length,
        }),
    }
    segs
}

/// Affine map from pulse values `nu` to one-sided derivatives:
/// `U_x(P_j^-) = b_minus + A_minus nu`, `U_x(P_j^+) = b_plus + A_plus nu`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterMap {
    pub b_minus: DVector<f64>,
    pub b_plus: DVector<f64>,
    pub a_minus: DMatrix<f64>,
    pub a_plus: DMatrix<f64>,
    /// Largest collocation residual (zero for closed forms).
    pub residual: f64,
}

impl OuterMap {
    pub fn build(positions: &[f64], domain: &Domain, terrain: &Terrain, opts: &OuterOptions) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::invalid("no pulses"));
        }
        let mut m = OuterMap {
            b_minus: DVector::zeros(n),
            b_plus: DVector::zeros(n),
            a_minus: DMatrix::zeros(n, n),
            a_plus: DMatrix::zeros(n, n),
            residual: 0.0,
        };
        let wrap = match domain {
            Domain::Periodic { length } => Some(*length),
            _ => None,
        };
        for seg in segments(positions, domain) {
            match terrain.constant_slope() {
                Some(h) => m.add_closed_form(seg, h),
                None => m.add_collocation(seg, terrain, wrap, opts)?,
            }
        }
        Ok(m)
    }

    /// Closed forms are written in `kappa = 1 - nu`; `sum c_k kappa_k = sum c_k - sum c_k nu_k`.
    fn add_closed_form(&mut self, seg: Segment, h: f64) {
        let s = s_of(h);
        match seg {
            Segment::Between { left, right, x0, x1 } => {
                let (coth, ep, em) = interval_factors(x1 - x0, h);
                let (cl, cr) = (h / 2.0 + s / 2.0 * coth, -s / 2.0 * ep);
                self.b_plus[left] += cl + cr;
                self.a_plus[(left, left)] -= cl;
                self.a_plus[(left, right)] -= cr;
                let (dl, dr) = (s / 2.0 * em, h / 2.0 - s / 2.0 * coth);
                self.b_minus[right] += dl + dr;
                self.a_minus[(right, left)] -= dl;
                self.a_minus[(right, right)] -= dr;
            }
            Segment::LeftWall { wall, x1 } => {
                let c = neumann_left_derivative(x1 - wall, h, 1.0);
                self.b_minus[0] += c;
                self.a_minus[(0, 0)] -= c;
            }
            Segment::RightWall { x0, wall } => {
                let n = self.b_plus.len() - 1;
                let c = neumann_right_derivative(wall - x0, h, 1.0);
                self.b_plus[n] += c;
                self.a_plus[(n, n)] -= c;
            }
            Segment::LeftFar { .. } => {
                let c = (h - s) / 2.0;
                self.b_minus[0] += c;
                self.a_minus[(0, 0)] -= c;
            }
            Segment::RightFar { .. } => {
                let n = self.b_plus.len() - 1;
                let c = (h + s) / 2.0;
                self.b_plus[n] += c;
                self.a_plus[(n, n)] -= c;
            }
        }
    }

    fn add_collocation(&mut self, seg: Segment, terrain: &Terrain, wrap: Option<f64>, opts: &OuterOptions) -> Result<()> {
        let far = |x: f64, left: bool| -> EndCondition {
            let (_, p, q) = terrain.eval(x);
            let disc = (p * p + 4.0 * (1.0 - q)).max(0.0).sqrt();
            let r = if left { (-p + disc) / 2.0 } else { (-p - disc) / 2.0 };
            EndCondition::FarField { r, u_inf: 1.0 / (1.0 - q) }
        };
        let n = self.b_plus.len();
        match seg {
            Segment::Between { left, right, x0, x1 } => {
                let e = solve_interval(terrain, x0, x1, EndCondition::Pulse, EndCondition::Pulse, wrap, opts)?;
                self.residual = self.residual.max(e.residual);
                self.b_plus[left] += e.left[0];
                self.a_plus[(left, left)] += e.left[1];
                self.a_plus[(left, right)] += e.left[2];
                self.b_minus[right] += e.right[0];
                self.a_minus[(right, left)] += e.right[1];
                self.a_minus[(right, right)] += e.right[2];
            }
            Segment::LeftWall { wall, x1 } => {
                let e = solve_interval(terrain, wall, x1, EndCondition::Wall, EndCondition::Pulse, wrap, opts)?;
                self.residual = self.residual.max(e.residual);
                self.b_minus[0] += e.right[0];
                self.a_minus[(0, 0)] += e.right[2];
            }
            Segment::RightWall { x0, wall } => {
                let e = solve_interval(terrain, x0, wall, EndCondition::Pulse, EndCondition::Wall, wrap, opts)?;
                self.residual = self.residual.max(e.residual);
                self.b_plus[n - 1] += e.left[0];
                self.a_plus[(n - 1, n - 1)] += e.left[1];
            }
            Segment::LeftFar { x1 } => {
                let x0 = x1 - opts.far_field;
                let e = solve_interval(terrain, x0, x1, far(x0, true), EndCondition::Pulse, wrap, opts)?;
                self.residual = self.residual.max(e.residual);
                self.b_minus[0] += e.right[0];
                self.a_minus[(0, 0)] += e.right[2];
            }
            Segment::RightFar { x0 } => {
                let x1 = x0 + opts.far_field;
                let e = solve_interval(terrain, x0, x1, EndCondition::Pulse, far(x1, false), wrap, opts)?;
                self.residual = self.residual.max(e.residual);
                self.b_plus[n - 1] += e.left[0];
                self.a_plus[(n - 1, n - 1)] += e.left[1];
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.b_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b_plus.is_empty()
    }

    /// `(U_x(P_j^-), U_x(P_j^+))` for pulse values `nu`.
    pub fn derivatives(&self, nu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.b_minus + &self.a_minus * nu, &self.b_plus + &self.a_plus * nu)
    }

    /// Derivative jump `U_x(P_j^+) - U_x(P_j^-)`.
    pub fn jump(&self, nu: &DVector<f64>) -> DVector<f64> {
        let (l, r) = self.derivatives(nu);
        r - l
    }

    /// Linear part of the jump, `A_plus - A_minus`.
    pub fn jump_matrix(&self) -> DMatrix<f64> {
        &self.a_plus - &self.a_minus
    }
}

/// Outer profile `U(x)` at the requested points for a constant-slope terrain.
pub fn profile_constant_slope(positions: &[f64], domain: &Domain, h: f64, nu: &[f64], xs: &[f64]) -> Vec<f64> {
    let s = s_of(h);
    let n = positions.len();
    let len = domain.length().unwrap_or(f64::INFINITY);
    xs.iter()
        .map(|&x0| {
            let x = match domain {
                Domain::Periodic { length } => {
                    let mut y = x0;
                    while y < positions[0] {
                        y += length;
                    }
                    while y >= positions[0] + length {
                        y -= length;
                    }
                    y
                }
                _ => x0,
            };
            let k = positions.partition_point(|&p| p <= x);
            let kap = |j: usize| 1.0 - nu[j];
            if k == 0 {
                // Left of the first pulse.
                match domain {
                    Domain::Neumann { .. } => {
                        let w = wall_mode(x, h) / wall_mode(positions[0], h);
                        1.0 - kap(0) * w
                    }
                    _ => 1.0 - kap(0) * ((-h + s) / 2.0 * (x - positions[0])).exp(),
                }
            } else if k == n {
                match domain {
                    Domain::Neumann { .. } => {
                        let w = wall_mode(len - x, -h) / wall_mode(len - positions[n - 1], -h);
                        1.0 - kap(n - 1) * w
                    }
                    Domain::Periodic { length } => {
                        interval_profile(positions[0] + length - positions[n - 1], h, kap(n - 1), kap(0), x - positions[n - 1])
                    }
                    Domain::Unbounded => 1.0 - kap(n - 1) * ((-h - s) / 2.0 * (x - positions[n - 1])).exp(),
                }
            } else {
                interval_profile(positions[k] - positions[k - 1], h, kap(k - 1), kap(k), x - positions[k - 1])
            }
        })
        .collect()
}

/// Homogeneous solution with zero slope at the origin, `e^{-Hx/2}(cosh(sx/2) + (H/s) sinh(sx/2))`.
fn wall_mode(x: f64, h: f64) -> f64 {
    let s = s_of(h);
    (-h * x / 2.0).exp() * ((s * x / 2.0).cosh() + h / s * (s * x / 2.0).sinh())
}

/// Logarithm of [`wall_mode`], valid for large arguments.
fn ln_wall_mode(x: f64, h: f64) -> f64 {
    let s = s_of(h);
    let y = s * x / 2.0;
    let e = (-2.0 * y.abs()).exp();
    let inner = (1.0 + e) + y.signum() * h / s * (1.0 - e);
    -h * x / 2.0 + y.abs() - std::f64::consts::LN_2 + inner.ln()
}

/// Auxiliary positions `(P_0, P_{N+1})` that let the boundary intervals be written as
/// interior ones. Constant slope only.
pub fn auxiliary_positions(positions: &[f64], domain: &Domain, h: f64) -> Result<(f64, f64)> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::invalid("no pulses"));
    }
    let (p1, pn) = (positions[0], positions[n - 1]);
    match domain {
        Domain::Unbounded => Ok((f64::NEG_INFINITY, f64::INFINITY)),
        Domain::Periodic { length } => Ok((pn - length, p1 + length)),
        Domain::Neumann { length } => {
            let l = *length;
            // Left: zero-slope mode about x = 0 returns to its value at P_1 at some P_0 < 0.
            let target = ln_wall_mode(p1, h);
            let p0 = -bracket_root(|y| ln_wall_mode(-y, h) - target, p1, 10.0 * l)?;
            // Right: mirror image with the slope reversed.
            let target = ln_wall_mode(l - pn, -h);
            let q = bracket_root(|y| ln_wall_mode(-y, -h) - target, l - pn, 10.0 * l)?;
            Ok((p0, l + q))
        }
    }
}

/// Root of `f` on `(0, limit]` with `f(0) < 0`, bracketing outward from `start`.
fn bracket_root<F: Fn(f64) -> f64>(f: F, start: f64, limit: f64) -> Result<f64> {
    let mut hi = start.max(1e-12);
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > limit {
            return Err(Error::NoSolution("auxiliary position lies beyond 10 L".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_terrain_reduces_to_tanh() {
        for k in [0.1, 1.0, 3.0, 30.0] {
            assert!((r_plus(k, 0.0) - (k / 2.0).tanh()).abs() < 1e-14);
            assert!((r_minus(k, 0.0) + (k / 2.0).tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn limits_of_edge_derivatives() {
        let h = 1.3;
        let s = s_of(h);
        assert!((r_plus(800.0, h) - (h + s) / 2.0).abs() < 1e-14);
        assert!((r_minus(800.0, h) - (h - s) / 2.0).abs() < 1e-14);
        assert!(r_plus(1e-9, h).abs() < 1e-8);
        assert!(r_minus(1e-9, h).abs() < 1e-8);
    }

    #[test]
    fn closed_form_interval_matches_collocation() {
        let h = 0.7;
        let slope = Terrain::slope(h);
        let opts = OuterOptions::default();
        let e = solve_interval(&slope, 1.0, 3.5, EndCondition::Pulse, EndCondition::Pulse, None, &opts).unwrap();
        let (kl, kr) = (0.9, 0.8);
        let (l, r) = edge_derivatives_constant_slope(2.5, h, kl, kr);
        let (nl, nr) = (1.0 - kl, 1.0 - kr);
        assert!((e.left[0] + e.left[1] * nl + e.left[2] * nr - l).abs() < 1e-10);
        assert!((e.right[0] + e.right[1] * nl + e.right[2] * nr - r).abs() < 1e-10);
    }

    #[test]
    fn collocation_map_matches_closed_form_map() {
        let p = [1.0, 3.0, 4.0, 5.6, 8.0];
        let nu = DVector::from_vec(vec![0.05, 0.08, 0.11, 0.06, 0.04]);
        let h = -0.4;
        let pure = Terrain::slope(h);
        // Same slope through the general path.
        let table = Terrain::Table(
            crate::model::CubicSpline::new(vec![-100.0, 100.0], vec![-100.0 * h, 100.0 * h]).unwrap(),
        );
        for dom in [Domain::Neumann { length: 10.0 }, Domain::Periodic { length: 10.0 }, Domain::Unbounded] {
            let a = OuterMap::build(&p, &dom, &pure, &OuterOptions::default()).unwrap();
            let b = OuterMap::build(&p, &dom, &table, &OuterOptions::default()).unwrap();
            let (al, ar) = a.derivatives(&nu);
            let (bl, br) = b.derivatives(&nu);
            let tol = if dom == Domain::Unbounded { 1e-8 } else { 1e-10 };
            assert!((al - bl).amax() < tol, "{dom:?}");
            assert!((ar - br).amax() < tol, "{dom:?}");
        }
    }

    #[test]
    fn auxiliary_positions_reproduce_boundary_derivatives() {
        let l = 10.0;
        let p = [1.3, 4.0, 8.2];
        let d = Domain::Neumann { length: l };
        let (p0, q0) = auxiliary_positions(&p, &d, 0.0).unwrap();
        assert!((p0 + 1.3).abs() < 1e-12 && (q0 - (2.0 * l - 8.2)).abs() < 1e-12);
        for h in [-2.0, -0.5, 0.5, 1.0, 3.0] {
            let (p0, q0) = auxiliary_positions(&p, &d, h).unwrap();
            let via_aux_left = r_minus(p[0] - p0, h);
            assert!((via_aux_left - neumann_left_derivative(p[0], h, 1.0)).abs() < 1e-10, "h={h}");
            let via_aux_right = r_plus(q0 - p[2], h);
            assert!((via_aux_right - neumann_right_derivative(l - p[2], h, 1.0)).abs() < 1e-10, "h={h}");
        }
    }

    #[test]
    fn profile_is_continuous_and_hits_pulse_values() {
        let p = [2.0, 5.5, 7.0];
        let nu = [0.05, 0.1, 0.02];
        for dom in [Domain::Neumann { length: 10.0 }, Domain::Periodic { length: 10.0 }, Domain::Unbounded] {
            let at = profile_constant_slope(&p, &dom, 0.8, &nu, &p);
            for j in 0..3 {
                assert!((at[j] - nu[j]).abs() < 1e-12, "{dom:?}");
            }
            let eps = 1e-7;
            let xs: Vec<f64> = p.iter().flat_map(|x| [x - eps, x + eps]).collect();
            let v = profile_constant_slope(&p, &dom, 0.8, &nu, &xs);
            let m = OuterMap::build(&p, &dom, &Terrain::slope(0.8), &OuterOptions::default()).unwrap();
            let (dl, dr) = m.derivatives(&DVector::from_row_slice(&nu));
            for j in 0..3 {
                assert!(((nu[j] - v[2 * j]) / eps - dl[j]).abs() < 1e-5, "{dom:?} {j}");
                assert!(((v[2 * j + 1] - nu[j]) / eps - dr[j]).abs() < 1e-5, "{dom:?} {j}");
            }
        }
    }
}

//! Inner correction problem `V'' - (1 + lambda) V + 2 w V = w^2`, `w = (3/2) sech^2(xi/2)`,
//! and the functional `R(lambda) = int w V`.
//!
//! Only the even part matters (the forcing is even), so the problem is solved on
//! `[0, X]` with a symmetric condition at the origin. This removes the odd kernel at
//! `lambda = 0`; the remaining poles of `R` are the even eigenvalues `5/4` and `-3/4`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Even eigenvalues of `d^2 - 1 + 2w` on the line.
pub const POLES: [f64; 2] = [1.25, -0.75];

/// `w(xi) = (3/2) sech^2(xi/2)`.
pub fn omega(xi: f64) -> f64 {
    let c = (xi / 2.0).cosh();
    1.5 / (c * c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Half-width of the truncated inner domain.
    pub half_width: f64,
    /// Grid intervals on `[0, half_width]` (rounded up to even).
    pub intervals: usize,
    pub pole_guard: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions { half_width: 30.0, intervals: 4000, pole_guard: 1e-2 }
    }
}

/// Even solution of the inner problem on `[0, half_width]`.
#[derive(Clone, Debug)]
pub struct VinSolution {
    pub lambda: C64,
    pub xi: Vec<f64>,
    pub v: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RValue {
    pub r: C64,
    pub dr: C64,
    pub near_pole: bool,
}

/// Distance from `lambda` to the nearest pole of `R`.
pub fn pole_distance(lambda: C64) -> f64 {
    POLES.iter().map(|p| (lambda - p).norm()).fold(f64::INFINITY, f64::min)
}

#[derive(Clone)]
struct Grid {
    h: f64,
    xi: Vec<f64>,
    w: Vec<f64>,
}

impl Grid {
    fn new(opts: &InnerOptions) -> Grid {
        let n = opts.intervals + opts.intervals % 2;
        let h = opts.half_width / n as f64;
        let xi: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let w = xi.iter().map(|&x| omega(x)).collect();
        Grid { h, xi, w }
    }

    /// Composite Simpson rule for `2 int_0^X w g`.
    fn integrate(&self, g: &[C64]) -> C64 {
        let n = self.xi.len() - 1;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..=n {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += g[i] * (c * self.w[i]);
        }
        acc * (2.0 * self.h / 3.0)
    }
}

/// Numerov system for `y'' = q y + f`, `q = 1 + lambda - 2w`, factorised once for several forcings.
struct Numerov {
    sub: Vec<C64>,
    inv: Vec<C64>,
    cp: Vec<C64>,
    h2: f64,
}

impl Numerov {
    fn new(grid: &Grid, lambda: C64) -> Numerov {
        let n = grid.xi.len() - 1;
        let h2 = grid.h * grid.h;
        let k2 = C64::new(1.0, 0.0) + lambda;
        let q: Vec<C64> = grid.w.iter().map(|w| k2 - 2.0 * w).collect();
        let a = |i: usize| C64::new(1.0, 0.0) - q[i] * (h2 / 12.0);
        let b = |i: usize| -(C64::new(1.0, 0.0) + q[i] * (5.0 * h2 / 12.0)) * 2.0;
        let mut sub = vec![C64::new(0.0, 0.0); n + 1];
        let mut diag = vec![C64::new(0.0, 0.0); n + 1];
        let mut sup = vec![C64::new(0.0, 0.0); n + 1];
        diag[0] = b(0);
        sup[0] = a(1) * 2.0;
        for i in 1..n {
            sub[i] = a(i - 1);
            diag[i] = b(i);
            sup[i] = a(i + 1);
        }
        // Decaying discrete mode of the constant-coefficient tail: y_{n} = rho y_{n-1}.
        let c = C64::new(1.0, 0.0) - k2 * (h2 / 12.0);
        let d = C64::new(1.0, 0.0) + k2 * (5.0 * h2 / 12.0);
        let disc = (d * d - c * c).sqrt();
        let r1 = (d - disc) / c;
        let r2 = (d + disc) / c;
        let rho = if r1.norm() <= r2.norm() { r1 } else { r2 };
        sub[n] = -rho;
        diag[n] = C64::new(1.0, 0.0);
        let mut inv = vec![C64::new(0.0, 0.0); n + 1];
        let mut cp = vec![C64::new(0.0, 0.0); n + 1];
        inv[0] = diag[0].inv();
        cp[0] = sup[0] * inv[0];
        for i in 1..=n {
            inv[i] = (diag[i] - sub[i] * cp[i - 1]).inv();
            cp[i] = sup[i] * inv[i];
        }
        Numerov { sub, inv, cp, h2 }
    }

    fn solve(&self, f: &[C64]) -> Vec<C64> {
        let n = f.len() - 1;
        let mut rhs = vec![C64::new(0.0, 0.0); n + 1];
        rhs[0] = (f[1] * 2.0 + f[0] * 10.0) * (self.h2 / 12.0);
        for i in 1..n {
            rhs[i] = (f[i - 1] + f[i] * 10.0 + f[i + 1]) * (self.h2 / 12.0);
        }
        rhs[0] *= self.inv[0];
        for i in 1..=n {
            rhs[i] = (rhs[i] - self.sub[i] * rhs[i - 1]) * self.inv[i];
        }
        for i in (0..n).rev() {
            rhs[i] = rhs[i] - self.cp[i] * rhs[i + 1];
        }
        rhs
    }
}

/// Inner solver with its grid precomputed.
#[derive(Clone)]
pub struct InnerSolver {
    pub opts: InnerOptions,
    grid: Grid,
}

impl std::fmt::Debug for InnerSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InnerSolver({:?})", self.opts)
    }
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::new(InnerOptions::default())
    }
}

impl InnerSolver {
    pub fn new(opts: InnerOptions) -> Self {
        InnerSolver { grid: Grid::new(&opts), opts }
    }

    fn solve_raw(&self, lambda: C64) -> (Numerov, Vec<C64>) {
        let sys = Numerov::new(&self.grid, lambda);
        let f: Vec<C64> = self.grid.w.iter().map(|w| C64::new(w * w, 0.0)).collect();
        let v = sys.solve(&f);
        (sys, v)
    }

    /// Inner profile. Refuses spectral parameters inside the pole guard.
    pub fn vin(&self, lambda: C64) -> Result<VinSolution> {
        if pole_distance(lambda) < self.opts.pole_guard {
            return Err(Error::NearPole { re: lambda.re, im: lambda.im });
        }
        let (_, v) = self.solve_raw(lambda);
        Ok(VinSolution { lambda, xi: self.grid.xi.clone(), v })
    }

    /// `R` and `R'` by the numerical inner solve, without special cases.
    pub fn r_numeric(&self, lambda: C64) -> RValue {
        let (sys, v) = self.solve_raw(lambda);
        let r = self.grid.integrate(&v);
        let dv = sys.solve(&v);
        let dr = self.grid.integrate(&dv);
        RValue { r, dr, near_pole: pole_distance(lambda) < self.opts.pole_guard }
    }

    /// `R(lambda)` and `R'(lambda)`. At `lambda = 0` and `lambda = -1` the known
    /// representatives give `R = 6` and `R = 3` exactly.
    pub fn r(&self, lambda: C64) -> RValue {
        let mut out = self.r_numeric(lambda);
        if lambda == C64::new(0.0, 0.0) {
            out.r = C64::new(6.0, 0.0);
            out.dr = C64::new(4.5, 0.0);
        } else if lambda == C64::new(-1.0, 0.0) {
            out.r = C64::new(3.0, 0.0);
        }
        out
    }
}

/// Convenience wrapper building a solver for a single evaluation.
pub fn solve_vin(lambda: C64, opts: &InnerOptions) -> Result<VinSolution> {
    InnerSolver::new(*opts).vin(lambda)
}

/// Convenience wrapper building a solver for a single evaluation.
pub fn eval_r(lambda: C64, opts: &InnerOptions) -> RValue {
    InnerSolver::new(*opts).r(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn numeric_values_at_known_points() {
        let o = InnerOptions::default();
        let sol = InnerSolver::new(o);
        let r0 = sol.r_numeric(c(0.0));
        assert!((r0.r.re - 6.0).abs() < 1e-7, "{:?}", r0.r);
        assert!((r0.dr.re - 4.5).abs() < 1e-6, "{:?}", r0.dr);
        let rm1 = sol.r_numeric(c(-1.0));
        assert!((rm1.r.re - 3.0).abs() < 1e-6, "{:?}", rm1.r);
    }

    #[test]
    fn profile_at_zero_is_omega() {
        let s = solve_vin(c(0.0), &InnerOptions::default()).unwrap();
        for (x, v) in s.xi.iter().zip(&s.v).step_by(97) {
            assert!((v.re - omega(*x)).abs() < 1e-8);
        }
        assert!(solve_vin(c(1.245), &InnerOptions::default()).is_err());
    }
}

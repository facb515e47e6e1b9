//! Scalar eigenvalue conditions `G(lambda) = K` built from `R`.
//!
//! The weak-coupling (single pulse, or decoupled pulses) condition is
//! `G(lambda) = (R(lambda) - 3) / sqrt(lambda + mu)` with `mu = (H^2 + 4) / (4 m)`;
//! the small-`m` condition drops the square root, `G = R - 3`. On the real axis
//! `G` is positive on an interval where it has a single interior minimum, the
//! landing point. Values above that minimum give two real roots, values below it a
//! complex pair on the branch leaving the landing point.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::inner::{InnerSolver, POLES};
use crate::error::{Error, Result};

/// `m_c(H) = 3 (1 + H^2 / 4)`.
pub fn m_critical(h: f64) -> f64 {
    3.0 * (1.0 + h * h / 4.0)
}

/// `mu = (H^2 + 4) / (4 m)`; `-mu` is the branch point of the weak condition.
pub fn mu_of(m: f64, h: f64) -> f64 {
    (h * h + 4.0) / (4.0 * m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Weak { mu: f64 },
    SmallM,
}

impl Condition {
    pub fn weak(m: f64, h: f64) -> Self {
        Condition::Weak { mu: mu_of(m, h) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    SaddleNode,
    Hopf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landing {
    pub lambda: f64,
    pub g: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStar {
    pub k: f64,
    pub lambda: C64,
    pub kind: Crossing,
}

/// Evaluator of `G` and `G'`.
#[derive(Clone, Debug)]
pub struct Spectral<'a> {
    pub cond: Condition,
    pub inner: &'a InnerSolver,
}

impl<'a> Spectral<'a> {
    pub fn new(cond: Condition, inner: &'a InnerSolver) -> Self {
        Spectral { cond, inner }
    }

    /// `(G, G')` at `lambda`.
    pub fn g(&self, lambda: C64) -> (C64, C64) {
        let rv = self.inner.r(lambda);
        let rm3 = rv.r - 3.0;
        match self.cond {
            Condition::SmallM => (rm3, rv.dr),
            Condition::Weak { mu } => {
                let z = lambda + mu;
                let sq = z.sqrt();
                (rm3 / sq, rv.dr / sq - rm3 / (sq * z * 2.0))
            }
        }
    }

    fn g_real(&self, x: f64) -> (f64, f64) {
        let (g, dg) = self.g(C64::new(x, 0.0));
        (g.re, dg.re)
    }

    /// Open real interval on which `G > 0`.
    pub fn interval(&self) -> (f64, f64) {
        let lo = match self.cond {
            Condition::SmallM => POLES[1],
            Condition::Weak { mu } => (-mu).max(POLES[1]),
        };
        (lo, POLES[0])
    }

    /// Real minimum of `G` on [`Self::interval`].
    pub fn landing(&self) -> Result<Landing> {
        let (lo, hi) = self.interval();
        let eps = 1e-9;
        // Sign of G' is that of phi = 2 (lambda + mu) R' - (R - 3) (or R' alone).
        let phi = |x: f64| self.g_real(x).1;
        let (mut a, mut b) = (lo + eps, hi - eps);
        if !(phi(a) < 0.0 && phi(b) > 0.0) {
            return Err(Error::NoSolution("landing point is not bracketed".into()));
        }
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if phi(c) < 0.0 {
                a = c;
            } else {
                b = c;
            }
            if b - a < 1e-13 {
                break;
            }
        }
        let x = 0.5 * (a + b);
        Ok(Landing { lambda: x, g: self.g_real(x).0 })
    }

    /// Real root of `G = k` on `(a, b)` (safeguarded Newton). `G - k` is positive at `a`
    /// when `a_pos`, negative otherwise.
    fn real_root(&self, k: f64, a: f64, b: f64, a_pos: bool) -> f64 {
        let (mut a, mut b) = (a, b);
        let mut x = 0.5 * (a + b);
        for _ in 0..200 {
            let (g, dg) = self.g_real(x);
            let f = g - k;
            if f == 0.0 {
                return x;
            }
            if (f > 0.0) == a_pos {
                a = x;
            } else {
                b = x;
            }
            let newton = x - f / dg;
            let next = if newton > a && newton < b && dg.is_finite() { newton } else { 0.5 * (a + b) };
            if (next - x).abs() < 1e-14 * (1.0 + x.abs()) || b - a < 1e-14 * (1.0 + a.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    /// Complex Newton for `G(lambda) = k` from `start`.
    pub fn newton(&self, k: f64, start: C64, max_iter: usize) -> Option<C64> {
        let mut z = start;
        for _ in 0..max_iter {
            let (g, dg) = self.g(z);
            let step = (g - k) / dg;
            if !step.re.is_finite() || !step.im.is_finite() {
                return None;
            }
            z -= step;
            if step.norm() < 1e-12 * (1.0 + z.norm()) {
                let (g, _) = self.g(z);
                return ((g - k).norm() < 1e-8 * (1.0 + k.abs())).then_some(z);
            }
        }
        None
    }

    /// The two roots of `G = k` with `k > 0`: two reals (ascending) or a conjugate pair
    /// (upper half-plane first).
    pub fn roots(&self, k: f64, landing: &Landing) -> Result<[C64; 2]> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("spectral target must be positive, got {k}")));
        }
        let (lo, hi) = self.interval();
        if k >= landing.g {
            let eps = 1e-12;
            let r1 = self.real_root(k, lo + eps, landing.lambda, true);
            let r2 = self.real_root(k, landing.lambda, hi - eps, false);
            return Ok([C64::new(r1, 0.0), C64::new(r2, 0.0)]);
        }
        let z = self.follow_branch(landing, k)?;
        Ok([z, z.conj()])
    }

    /// Second derivative of `G` at the landing point by central differences of `G'`.
    fn curvature(&self, landing: &Landing) -> f64 {
        let e = 1e-5;
        (self.g_real(landing.lambda + e).1 - self.g_real(landing.lambda - e).1) / (2.0 * e)
    }

    /// Starting point on the complex branch for a value `g` just below the landing value.
    fn branch_start(&self, landing: &Landing, g: f64) -> C64 {
        let c = self.curvature(landing).max(1e-12);
        C64::new(landing.lambda, (2.0 * (landing.g - g) / c).sqrt())
    }

    /// Continues the complex branch from the landing point down to `G = k`.
    pub fn follow_branch(&self, landing: &Landing, k: f64) -> Result<C64> {
        let mut pts = Vec::new();
        self.trace(landing, k, &mut |z, g| {
            pts.push((z, g));
            true
        })?;
        pts.last().map(|p| p.0).ok_or_else(|| Error::NoSolution("empty branch".into()))
    }

    /// Walks the branch `G(lambda) = g` for `g` from the landing value down to `k_end`,
    /// calling `visit(lambda, g)` at each point until it returns false.
    pub fn trace<F: FnMut(C64, f64) -> bool>(&self, landing: &Landing, k_end: f64, visit: &mut F) -> Result<()> {
        let span = landing.g - k_end;
        if span <= 0.0 {
            return Ok(());
        }
        // First point via the local quadratic, then corrected.
        let mut g = landing.g - (1e-4 * landing.g).min(span);
        let mut z = self
            .newton(g, self.branch_start(landing, g), 50)
            .ok_or_else(|| Error::not_converged("skeleton branch start", 50, f64::NAN))?;
        if !visit(z, g) {
            return Ok(());
        }
        let mut dg = (0.002 * landing.g).min(landing.g - g);
        let mut prev: Option<(C64, f64)> = None;
        while g > k_end {
            let gn = (g - dg).max(k_end);
            // Secant predictor in g once two points exist.
            let guess = match prev {
                Some((zp, gp)) => z + (z - zp) * ((gn - g) / (g - gp)),
                None => self.branch_start(landing, gn),
            };
            match self.newton(gn, guess, 20) {
                Some(zn) if zn.im > 0.0 && (zn - z).norm() < 0.25 => {
                    prev = Some((z, g));
                    z = zn;
                    g = gn;
                    if !visit(z, g) {
                        return Ok(());
                    }
                    dg = (dg * 1.5).min(0.05 * landing.g.max(1.0));
                }
                _ => {
                    dg *= 0.5;
                    if dg < 1e-10 * landing.g {
                        return Err(Error::not_converged("skeleton continuation", 0, g));
                    }
                }
            }
        }
        Ok(())
    }

    /// Critical value of `K` at which an eigenvalue reaches the imaginary axis.
    pub fn k_star(&self) -> Result<KStar> {
        let landing = self.landing()?;
        // A landing within bisection noise of the origin is the Bogdanov-Takens point.
        if landing.lambda <= 1e-8 {
            let (g0, _) = self.g(C64::new(0.0, 0.0));
            return Ok(KStar { k: g0.re, lambda: C64::new(0.0, 0.0), kind: Crossing::SaddleNode });
        }
        let mut last: Option<(C64, f64)> = None;
        let mut bracket: Option<((C64, f64), (C64, f64))> = None;
        self.trace(&landing, 1e-6 * landing.g, &mut |z, g| {
            if z.re < 0.0 {
                bracket = Some((last.unwrap_or((z, g)), (z, g)));
                return false;
            }
            last = Some((z, g));
            true
        })?;
        let ((za, _), (zb, _)) =
            bracket.ok_or_else(|| Error::NoSolution("branch never crosses the imaginary axis".into()))?;
        // On the axis: Im G(i y) = 0.
        let f = |y: f64| self.g(C64::new(0.0, y)).0.im;
        let (mut a, mut b) = (za.im, zb.im);
        let (fa, fb) = (f(a), f(b));
        if fa * fb > 0.0 {
            // Bracket the crossing in y by sampling between the two branch points.
            let (y0, y1) = (a.min(b) * 0.5, a.max(b) * 1.5);
            let mut found = None;
            let n = 200;
            let mut prev = (y0, f(y0));
            for i in 1..=n {
                let y = y0 + (y1 - y0) * i as f64 / n as f64;
                let v = f(y);
                if v * prev.1 <= 0.0 {
                    found = Some((prev.0, y));
                    break;
                }
                prev = (y, v);
            }
            let (p, q) = found.ok_or_else(|| Error::NoSolution("imaginary-axis crossing not bracketed".into()))?;
            a = p;
            b = q;
        }
        let fa = f(a);
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if (f(c) > 0.0) == (fa > 0.0) {
                a = c;
            } else {
                b = c;
            }
            if (b - a).abs() < 1e-14 {
                break;
            }
        }
        let y = 0.5 * (a + b);
        let g = self.g(C64::new(0.0, y)).0;
        Ok(KStar { k: g.re, lambda: C64::new(0.0, y), kind: Crossing::Hopf })
    }
}

/// Sampled skeleton: the real segment where `G > 0` and the complex branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub condition: Condition,
    pub landing: Landing,
    pub k_star: KStar,
    pub poles: Vec<f64>,
    /// `(lambda, G)` along the real axis.
    pub real: Vec<(f64, f64)>,
    /// `(lambda, G)` on the upper branch; the lower branch is its conjugate.
    pub branch: Vec<(C64, f64)>,
}

/// Samples the skeleton of the weak condition for given `m` and `H`.
pub fn trace_skeleton(m: f64, h: f64, inner: &InnerSolver) -> Result<Skeleton> {
    skeleton_for(Condition::weak(m, h), inner)
}

pub fn skeleton_for(cond: Condition, inner: &InnerSolver) -> Result<Skeleton> {
    let sp = Spectral::new(cond, inner);
    let landing = sp.landing()?;
    let k_star = sp.k_star()?;
    let (lo, hi) = sp.interval();
    let mut poles = vec![POLES[0], POLES[1]];
    if let Condition::Weak { mu } = cond {
        poles.push(-mu);
    }
    let n = 200;
    let real = (1..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            (x, sp.g_real(x).0)
        })
        .collect();
    let mut branch = vec![(C64::new(landing.lambda, 0.0), landing.g)];
    sp.trace(&landing, 0.02 * landing.g, &mut |z, g| {
        branch.push((z, g));
        true
    })?;
    Ok(Skeleton { condition: cond, landing, k_star, poles, real, branch })
}

/// `K*(m, H)`: closed form below `m_c`, numerical crossing above.
pub fn k_star(m: f64, h: f64, inner: &InnerSolver) -> Result<KStar> {
    if m <= m_critical(h) {
        return Ok(KStar { k: 6.0 * (m / (h * h + 4.0)).sqrt(), lambda: C64::new(0.0, 0.0), kind: Crossing::SaddleNode });
    }
    Spectral::new(Condition::weak(m, h), inner).k_star()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saddle_node_threshold_matches_closed_form() {
        let inner = InnerSolver::default();
        for (m, h) in [(0.45, 0.0), (2.0, 1.0)] {
            let ks = Spectral::new(Condition::weak(m, h), &inner).k_star().unwrap();
            assert_eq!(ks.kind, Crossing::SaddleNode);
            assert!((ks.k - 6.0 * (m / (h * h + 4.0)).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn roots_satisfy_the_condition() {
        let inner = InnerSolver::default();
        let sp = Spectral::new(Condition::weak(0.45, 0.0), &inner);
        let l = sp.landing().unwrap();
        for k in [0.3 * l.g, 0.9 * l.g, 1.5 * l.g, 4.0] {
            for z in sp.roots(k, &l).unwrap() {
                let (g, _) = sp.g(z);
                assert!((g - k).norm() < 1e-8, "k={k} z={z} g={g}");
            }
        }
    }
}

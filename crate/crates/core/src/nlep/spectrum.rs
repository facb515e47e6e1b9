//! Eigenvalues of N-pulse configurations.
//!
//! A perturbation of the outer field solves `U'' + H U' - (1 + m lambda) U = 0` between
//! pulses and takes the value `rho_j` at pulse `j`; its derivative jumps are
//! `M(lambda) rho` (a Dirichlet-to-Neumann map). Matching with the inner problem gives
//! `E(lambda) rho = 0`, `E = delta diag(u^2) M(lambda) + (2 R(lambda) - 6) I`.
//! The coupled spectrum (CSP) consists of the roots of `det E`. Dropping the coupling
//! gives the decoupled spectrum (DSP), one scalar condition per pulse, and freezing
//! `M` at `lambda = 0` gives the small-`m` spectrum.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::condition::{k_star, Condition, KStar, Landing, Spectral};
use super::inner::{pole_distance, InnerSolver};
use crate::error::{Error, Result};
use crate::model::{Domain, ModelParams, Terrain};
use crate::outer::segments;
use crate::outer::Segment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMode {
    Dsp,
    Csp,
    SmallM,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Stable,
    SaddleNode,
    Hopf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigen {
    pub lambda: C64,
    /// Outer perturbation at each pulse.
    pub rho: Vec<C64>,
    /// Outer constants per segment (see [`segment_constants`]).
    pub s1: Vec<C64>,
    pub s2: Vec<C64>,
    /// Sign of each weight relative to the largest one (0 when negligible).
    pub signs: Vec<i8>,
    /// Pulse carrying the eigenfunction in the decoupled spectrum.
    pub pulse: Option<usize>,
    pub ill_conditioned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub mode: SpectrumMode,
    /// Sorted by decreasing real part.
    pub eigen: Vec<Eigen>,
    /// `K_j = m^2 D u_j^2 / a^2`.
    pub k: Vec<f64>,
    /// Threshold for each pulse (local slope).
    pub k_star: Vec<f64>,
    pub classification: Classification,
    /// Two pulses with (nearly) equal `K`: eigenvalues nearly coincide.
    pub degenerate: bool,
    /// Small-`m` constants `C*_k` (eigenvalues of `diag(u^2) M(0)`).
    pub c_star: Option<Vec<f64>>,
}

impl SpectrumReport {
    pub fn max_re(&self) -> f64 {
        self.eigen.iter().map(|e| e.lambda.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn critical(&self) -> Option<&Eigen> {
        self.eigen.first()
    }
}

/// Imaginary parts below this are treated as real.
const REAL_TOL: f64 = 1e-7;
const DEDUP: f64 = 1e-4;
const ILL_RATIO: f64 = 1e8;

fn classify(eigen: &[Eigen]) -> Classification {
    match eigen.first() {
        Some(e) if e.lambda.re >= 0.0 => {
            if e.lambda.im.abs() > REAL_TOL {
                Classification::Hopf
            } else {
                Classification::SaddleNode
            }
        }
        _ => Classification::Stable,
    }
}

/// Real roots and upper branch of `G = g` for one condition, tabulated once.
#[derive(Clone, Debug)]
pub struct BranchTable {
    pub cond: Condition,
    pub landing: Landing,
    /// Upper branch points `(lambda, g)` with decreasing `g`.
    pub branch: Vec<(C64, f64)>,
}

impl BranchTable {
    pub fn build(cond: Condition, inner: &InnerSolver) -> Result<Self> {
        let sp = Spectral::new(cond, inner);
        let landing = sp.landing()?;
        let mut branch = vec![(C64::new(landing.lambda, 0.0), landing.g)];
        sp.trace(&landing, 1e-3 * landing.g, &mut |z, g| {
            branch.push((z, g));
            true
        })?;
        Ok(BranchTable { cond, landing, branch })
    }

    /// Both roots of `G = k`, reusing the table for the complex branch.
    pub fn roots(&self, k: f64, inner: &InnerSolver) -> Result<[C64; 2]> {
        let sp = Spectral::new(self.cond, inner);
        if k >= self.landing.g {
            return sp.roots(k, &self.landing);
        }
        if !(k > 0.0) {
            return Err(Error::invalid(format!("spectral target must be positive, got {k}")));
        }
        let guess = match self.branch.iter().position(|p| p.1 <= k) {
            Some(i) if i > 0 => {
                let (z0, g0) = self.branch[i - 1];
                let (z1, g1) = self.branch[i];
                z0 + (z1 - z0) * ((k - g0) / (g1 - g0))
            }
            _ => self.branch.last().map(|p| p.0).unwrap_or_default(),
        };
        let z = match sp.newton(k, guess, 30) {
            Some(z) if z.im > 0.0 => z,
            _ => sp.follow_branch(&self.landing, k)?,
        };
        Ok([z, z.conj()])
    }
}

/// Inner solver plus a cache of branch tables keyed by condition.
pub struct SpectralContext {
    pub inner: InnerSolver,
    tables: Mutex<HashMap<(u8, u64), Arc<BranchTable>>>,
}

impl std::fmt::Debug for SpectralContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpectralContext({:?})", self.inner)
    }
}

impl Default for SpectralContext {
    fn default() -> Self {
        SpectralContext::new(InnerSolver::default())
    }
}

impl SpectralContext {
    pub fn new(inner: InnerSolver) -> Self {
        SpectralContext { inner, tables: Mutex::new(HashMap::new()) }
    }

    pub fn table(&self, cond: Condition) -> Result<Arc<BranchTable>> {
        let key = match cond {
            Condition::Weak { mu } => (0, mu.to_bits()),
            Condition::SmallM => (1, 0),
        };
        if let Some(t) = self.tables.lock().expect("table cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(BranchTable::build(cond, &self.inner)?);
        self.tables.lock().expect("table cache poisoned").insert(key, t.clone());
        Ok(t)
    }
}

/// Inputs shared by all spectrum computations.
#[derive(Clone, Copy, Debug)]
pub struct SpectrumInput<'a> {
    pub positions: &'a [f64],
    pub u: &'a [f64],
    pub params: &'a ModelParams,
    pub terrain: &'a Terrain,
    pub domain: &'a Domain,
    pub t: f64,
}

impl SpectrumInput<'_> {
    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.positions.len() != self.u.len() {
            return Err(Error::invalid("positions and amplitudes must be non-empty and of equal length"));
        }
        if self.u.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("amplitudes must be positive"));
        }
        Ok(())
    }

    pub fn k_values(&self) -> Vec<f64> {
        let ks = self.params.k_scale(self.t);
        self.u.iter().map(|u| ks * u * u).collect()
    }

    fn slopes(&self) -> Vec<f64> {
        self.positions.iter().map(|p| self.terrain.slope_at(*p)).collect()
    }

    fn k_stars(&self, ctx: &SpectralContext) -> Result<Vec<f64>> {
        let m = self.params.m;
        self.slopes().into_iter().map(|h| Ok(k_star(m, h, &ctx.inner)?.k)).collect()
    }
}

/// `K*` for every pulse, using the local slope.
pub fn thresholds(input: &SpectrumInput, ctx: &SpectralContext) -> Result<Vec<KStar>> {
    input.slopes().into_iter().map(|h| k_star(input.params.m, h, &ctx.inner)).collect()
}

fn sign_pattern(rho: &[C64]) -> Vec<i8> {
    let big = rho.iter().cloned().fold(C64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
    if big.norm() == 0.0 {
        return vec![0; rho.len()];
    }
    let phase = big.conj() / big.norm();
    rho.iter()
        .map(|r| {
            let v = (r * phase).re;
            if r.norm() < 1e-8 * big.norm() {
                0
            } else if v > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

fn ill_conditioned(rho: &[C64]) -> bool {
    let max = rho.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let min = rho.iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min);
    max > ILL_RATIO * min
}

fn sort_eigen(eigen: &mut [Eigen]) {
    eigen.sort_by(|a, b| b.lambda.re.total_cmp(&a.lambda.re).then(b.lambda.im.total_cmp(&a.lambda.im)));
}

/// Decoupled spectrum: each pulse solves its own scalar condition with `K_j`.
pub fn dsp_spectrum(input: &SpectrumInput, ctx: &SpectralContext) -> Result<SpectrumReport> {
    input.validate()?;
    let n = input.u.len();
    let k = input.k_values();
    let slopes = input.slopes();
    let mut eigen = Vec::with_capacity(2 * n);
    for (j, (&kj, &h)) in k.iter().zip(&slopes).enumerate() {
        let table = ctx.table(Condition::weak(input.params.m, h))?;
        for lambda in table.roots(kj, &ctx.inner)? {
            let mut rho = vec![C64::new(0.0, 0.0); n];
            rho[j] = C64::new(1.0, 0.0);
            let (s1, s2) = constants_for(input, lambda, &rho);
            eigen.push(Eigen { lambda, signs: sign_pattern(&rho), rho, s1, s2, pulse: Some(j), ill_conditioned: false });
        }
    }
    sort_eigen(&mut eigen);
    let kmax = k.iter().cloned().fold(0.0, f64::max);
    let degenerate = (0..n).any(|i| (i + 1..n).any(|j| (k[i] - k[j]).abs() <= 1e-8 * kmax));
    Ok(SpectrumReport {
        mode: SpectrumMode::Dsp,
        classification: classify(&eigen),
        eigen,
        k_star: input.k_stars(ctx)?,
        k,
        degenerate,
        c_star: None,
    })
}

/// `coth(sigma d/2)`, `e^{H d/2}/sinh(sigma d/2)`, `e^{-H d/2}/sinh(sigma d/2)` for `Re sigma > 0`.
fn factors(d: f64, h: f64, sigma: C64) -> (C64, C64, C64) {
    let e = (-sigma * d).exp();
    let one_minus = C64::new(1.0, 0.0) - e;
    let coth = (C64::new(1.0, 0.0) + e) / one_minus;
    let ep = ((C64::new(h, 0.0) - sigma) * (d / 2.0)).exp() * 2.0 / one_minus;
    let em = ((C64::new(-h, 0.0) - sigma) * (d / 2.0)).exp() * 2.0 / one_minus;
    (coth, ep, em)
}

fn sigma_of(h: f64, m: f64, lambda: C64) -> C64 {
    (C64::new(h * h, 0.0) + (C64::new(1.0, 0.0) + lambda * m) * 4.0).sqrt()
}

/// Derivative-jump matrix `M(lambda)` of the outer perturbation for a constant slope `h`.
/// At `lambda = 0` it equals the linear part of the outer map.
pub fn dtn_matrix(positions: &[f64], domain: &Domain, h: f64, m: f64, lambda: C64) -> DMatrix<C64> {
    let n = positions.len();
    let sigma = sigma_of(h, m, lambda);
    let q = C64::new(1.0, 0.0) + lambda * m;
    let mut mat = DMatrix::zeros(n, n);
    for seg in segments(positions, domain) {
        match seg {
            Segment::Between { left, right, x0, x1 } => {
                let (coth, ep, em) = factors(x1 - x0, h, sigma);
                mat[(left, left)] -= (sigma * coth + h) / 2.0;
                mat[(right, right)] -= (sigma * coth - h) / 2.0;
                mat[(left, right)] += sigma / 2.0 * ep;
                mat[(right, left)] += sigma / 2.0 * em;
            }
            Segment::LeftFar { .. } => mat[(0, 0)] += (C64::new(h, 0.0) - sigma) / 2.0,
            Segment::RightFar { .. } => mat[(n - 1, n - 1)] += (C64::new(-h, 0.0) - sigma) / 2.0,
            Segment::LeftWall { wall, x1 } => {
                let th = (sigma * (x1 - wall) / 2.0).tanh();
                mat[(0, 0)] -= q * th * 2.0 / (sigma + th * h);
            }
            Segment::RightWall { x0, wall } => {
                let th = (sigma * (wall - x0) / 2.0).tanh();
                mat[(n - 1, n - 1)] -= q * th * 2.0 / (sigma - th * h);
            }
        }
    }
    mat
}

/// Constants of the outer perturbation on each segment. On a segment from `x0` to `x1`
/// the perturbation is `S1 e^{r_-(x - x0)} + S2 e^{r_+(x - x1)}` with
/// `r_(+/-) = (-H +/- sigma)/2`; semi-infinite segments keep only the decaying term.
pub fn segment_constants(positions: &[f64], domain: &Domain, h: f64, m: f64, lambda: C64, rho: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let sigma = sigma_of(h, m, lambda);
    let rm = (C64::new(-h, 0.0) - sigma) / 2.0;
    let rp = (C64::new(-h, 0.0) + sigma) / 2.0;
    let n = rho.len();
    let zero = C64::new(0.0, 0.0);
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    // Solves [a b; c d] (x, y) = (e, f).
    let solve2 = |a: C64, b: C64, c: C64, d: C64, e: C64, f: C64| -> (C64, C64) {
        let det = a * d - b * c;
        ((e * d - b * f) / det, (a * f - e * c) / det)
    };
    for seg in segments(positions, domain) {
        let (c1, c2) = match seg {
            Segment::Between { left, right, x0, x1 } => {
                let d = x1 - x0;
                let one = C64::new(1.0, 0.0);
                solve2(one, (-rp * d).exp(), (rm * d).exp(), one, rho[left], rho[right])
            }
            Segment::LeftFar { .. } => (zero, rho[0]),
            Segment::RightFar { .. } => (rho[n - 1], zero),
            Segment::LeftWall { wall, x1 } => {
                let d = x1 - wall;
                solve2(rm, rp * (-rp * d).exp(), (rm * d).exp(), C64::new(1.0, 0.0), zero, rho[0])
            }
            Segment::RightWall { x0, wall } => {
                let d = wall - x0;
                solve2(C64::new(1.0, 0.0), (-rp * d).exp(), rm * (rm * d).exp(), rp, rho[n - 1], zero)
            }
        };
        s1.push(c1);
        s2.push(c2);
    }
    (s1, s2)
}

fn constants_for(input: &SpectrumInput, lambda: C64, rho: &[C64]) -> (Vec<C64>, Vec<C64>) {
    match input.terrain.constant_slope() {
        Some(h) => segment_constants(input.positions, input.domain, h, input.params.m, lambda, rho),
        None => (Vec::new(), Vec::new()),
    }
}

/// Coupled matrix `E(lambda)`.
pub fn coupled_matrix(input: &SpectrumInput, h: f64, lambda: C64, inner: &InnerSolver) -> DMatrix<C64> {
    let delta = input.params.delta(input.t);
    let mut e = dtn_matrix(input.positions, input.domain, h, input.params.m, lambda);
    for (i, u) in input.u.iter().enumerate() {
        e.row_mut(i).scale_mut(delta * u * u);
    }
    let c = inner.r(lambda).r * 2.0 - 6.0;
    for i in 0..input.u.len() {
        e[(i, i)] += c;
    }
    e
}

struct Det<'a> {
    input: &'a SpectrumInput<'a>,
    h: f64,
    inner: &'a InnerSolver,
    /// Rescaling keeping `det E` of order one.
    scale: f64,
}

impl Det<'_> {
    fn eval(&self, z: C64) -> C64 {
        coupled_matrix(self.input, self.h, z, self.inner).determinant() * self.scale
    }

    /// Admissible: right of the inner essential spectrum, off the outer branch cut
    /// `(-inf, -mu]` and outside the pole guard.
    fn admissible(&self, z: C64) -> bool {
        let mu = (self.h * self.h + 4.0) / (4.0 * self.input.params.m);
        let off_cut = z.re > -mu + 1e-6 || z.im.abs() > 1e-6;
        z.re > -1.0 + 1e-6 && off_cut && pole_distance(z) >= self.inner.opts.pole_guard && z.norm() < 50.0
    }
}

/// Muller iteration on `f` from three starting points.
fn muller<F: Fn(C64) -> C64>(f: &F, ok: &dyn Fn(C64) -> bool, mut x: [C64; 3], max_iter: usize) -> Option<C64> {
    let mut fx = [f(x[0]), f(x[1]), f(x[2])];
    for _ in 0..max_iter {
        let h1 = x[1] - x[0];
        let h2 = x[2] - x[1];
        let d1 = (fx[1] - fx[0]) / h1;
        let d2 = (fx[2] - fx[1]) / h2;
        let a = (d2 - d1) / (h2 + h1);
        let b = a * h2 + d2;
        let disc = (b * b - a * fx[2] * 4.0).sqrt();
        let den = if (b + disc).norm() >= (b - disc).norm() { b + disc } else { b - disc };
        let mut step = if den.norm() == 0.0 { h2 } else { -fx[2] * 2.0 / den };
        if !(step.re.is_finite() && step.im.is_finite()) {
            return None;
        }
        // Keep out of the pole guard by halving the step.
        let mut next = x[2] + step;
        let mut tries = 0;
        while !ok(next) && tries < 8 {
            step *= 0.5;
            next = x[2] + step;
            tries += 1;
        }
        if !ok(next) {
            return None;
        }
        let fn_ = f(next);
        x = [x[1], x[2], next];
        fx = [fx[1], fx[2], fn_];
        if step.norm() < 1e-12 * (1.0 + next.norm()) || fn_.norm() == 0.0 {
            return Some(next);
        }
    }
    None
}

/// Null vector of `E(lambda)` by SVD, normalised to unit length with the largest
/// component real and positive.
fn null_vector(e: &DMatrix<C64>) -> Vec<C64> {
    let n = e.nrows();
    let svd = e.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let v: Vec<C64> = (0..n).map(|j| v_t[(imin, j)].conj()).collect();
    normalise(v)
}

fn normalise(v: Vec<C64>) -> Vec<C64> {
    let big = v.iter().cloned().fold(C64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if big.norm() == 0.0 {
        return v;
    }
    let phase = big.conj() / big.norm();
    v.into_iter().map(|c| c * phase / norm).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CspOptions {
    /// Extra seeds, e.g. eigenvalues from a previous time.
    pub seeds: Vec<C64>,
    pub max_iter: usize,
}

impl Default for CspOptions {
    fn default() -> Self {
        CspOptions { seeds: Vec::new(), max_iter: 60 }
    }
}

/// Coupled spectrum (constant slope only): roots of `det E(lambda)` in the region right
/// of the essential spectrum, seeded from the decoupled and small-`m` spectra.
pub fn csp_spectrum(input: &SpectrumInput, ctx: &SpectralContext, opts: &CspOptions) -> Result<SpectrumReport> {
    input.validate()?;
    let h = input
        .terrain
        .constant_slope()
        .ok_or_else(|| Error::Unsupported("coupled spectrum needs a constant slope".into()))?;
    let n = input.u.len();
    let dsp = dsp_spectrum(input, ctx)?;
    let small = small_m_spectrum(input, ctx).ok();

    let mut seeds: Vec<C64> = opts.seeds.clone();
    seeds.extend(dsp.eigen.iter().map(|e| e.lambda));
    if let Some(s) = &small {
        seeds.extend(s.eigen.iter().map(|e| e.lambda));
    }
    // Coarse grid along the weak branch between the smallest and largest K.
    let table = ctx.table(Condition::weak(input.params.m, h))?;
    let kmin = dsp.k.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = dsp.k.iter().cloned().fold(0.0, f64::max);
    for &(z, g) in &table.branch {
        if g >= 0.5 * kmin && g <= 2.0 * kmax {
            seeds.push(z);
        }
    }
    let mut uniq: Vec<C64> = Vec::new();
    for s in seeds {
        let s = C64::new(s.re, s.im.abs());
        if uniq.iter().all(|u| (u - s).norm() > 1e-3) {
            uniq.push(s);
        }
    }

    // Normalise the determinant by its size at a reference point.
    let probe = Det { input, h, inner: &ctx.inner, scale: 1.0 };
    let reference = probe.eval(C64::new(0.3, 0.1)).norm();
    let scale = if reference > 0.0 && reference.is_finite() { 1.0 / reference } else { 1.0 };
    let det = Det { scale, ..probe };
    let f = |z: C64| det.eval(z);
    let ok = |z: C64| det.admissible(z);

    let mut found: Vec<C64> = Vec::new();
    for s in uniq {
        if !ok(s) {
            continue;
        }
        let dz = C64::new(1e-3, 1e-3 * if s.im.abs() > REAL_TOL { 1.0 } else { 0.0 });
        let start = [s - dz * 2.0, s - dz, s];
        // Deflate the roots found so far so that clustered roots are not found twice.
        let deflated = |z: C64| {
            let mut v = f(z);
            for w in &found {
                v /= z - w;
                if w.im.abs() > REAL_TOL {
                    v /= z - w.conj();
                }
            }
            v
        };
        let Some(mut z) = muller(&deflated, &ok, start, opts.max_iter) else { continue };
        if z.im.abs() < REAL_TOL * 10.0 {
            z = polish_real(&deflated, z.re).map(|x| C64::new(x, 0.0)).unwrap_or(z);
        }
        if z.im < -REAL_TOL {
            z = z.conj();
        }
        if !ok(z) {
            continue;
        }
        // Reject convergence to something that is not a zero.
        let near = f(z + 1e-4).norm().max(f(z - 1e-4).norm());
        if f(z).norm() > 1e-4 * near {
            continue;
        }
        if found.iter().all(|w| (w - z).norm() > DEDUP) {
            found.push(z);
        }
    }

    let mut eigen = Vec::new();
    for z in found {
        let e = coupled_matrix(input, h, z, &ctx.inner);
        let rho = null_vector(&e);
        let (s1, s2) = segment_constants(input.positions, input.domain, h, input.params.m, z, &rho);
        let ill = ill_conditioned(&rho);
        let entry = Eigen { lambda: z, signs: sign_pattern(&rho), rho, s1, s2, pulse: None, ill_conditioned: ill };
        if z.im.abs() > REAL_TOL {
            let conj = Eigen {
                lambda: z.conj(),
                rho: entry.rho.iter().map(|c| c.conj()).collect(),
                s1: entry.s1.iter().map(|c| c.conj()).collect(),
                s2: entry.s2.iter().map(|c| c.conj()).collect(),
                ..entry.clone()
            };
            eigen.push(entry);
            eigen.push(conj);
        } else {
            eigen.push(entry);
        }
    }
    let _ = n;
    sort_eigen(&mut eigen);
    Ok(SpectrumReport {
        mode: SpectrumMode::Csp,
        classification: classify(&eigen),
        eigen,
        k: dsp.k,
        k_star: dsp.k_star,
        degenerate: dsp.degenerate,
        c_star: small.and_then(|s| s.c_star),
    })
}

/// Real secant polish of a nearly real root.
fn polish_real<F: Fn(C64) -> C64>(f: &F, x0: f64) -> Option<f64> {
    let g = |x: f64| f(C64::new(x, 0.0)).re;
    let (mut a, mut b) = (x0, x0 + 1e-6);
    let (mut fa, mut fb) = (g(a), g(b));
    for _ in 0..50 {
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        a = b;
        fa = fb;
        b = c;
        fb = g(b);
        if (b - a).abs() < 1e-13 * (1.0 + b.abs()) {
            return Some(b);
        }
    }
    (fb.abs() < 1e-10).then_some(b)
}

/// Small-`m` spectrum: the outer problem is frozen at `lambda = 0`. Each eigenvector of
/// `delta diag(u^2) M(0)` with eigenvalue `-2 K_k` gives the roots of `R - 3 = K_k`.
pub fn small_m_spectrum(input: &SpectrumInput, ctx: &SpectralContext) -> Result<SpectrumReport> {
    input.validate()?;
    let h = input
        .terrain
        .constant_slope()
        .ok_or_else(|| Error::Unsupported("small-m spectrum needs a constant slope".into()))?;
    let n = input.u.len();
    let delta = input.params.delta(input.t);
    let m0 = dtn_matrix(input.positions, input.domain, h, input.params.m, C64::new(0.0, 0.0)).map(|c| c.re);
    let mut b = m0.clone();
    for (i, u) in input.u.iter().enumerate() {
        b.row_mut(i).scale_mut(u * u);
    }
    let ev = b.clone().complex_eigenvalues();
    if ev.iter().any(|c| c.im.abs() > 1e-8 * (1.0 + c.norm())) {
        return Err(Error::NoSolution("outer eigenvalue problem has complex eigenvalues".into()));
    }
    let mut c_star: Vec<f64> = ev.iter().map(|c| c.re).collect();
    c_star.sort_by(|a, b| b.total_cmp(a));
    let table = ctx.table(Condition::SmallM)?;
    let mut eigen = Vec::new();
    for &c in &c_star {
        let target = -delta * c / 2.0;
        let shifted = &b - DMatrix::identity(n, n) * c;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::NoSolution("outer eigenvector".into()))?;
        let imin = svd.singular_values.imin();
        let rho = normalise((0..n).map(|j| C64::new(v_t[(imin, j)], 0.0)).collect());
        let roots = if target > 0.0 {
            table.roots(target, &ctx.inner)?.to_vec()
        } else {
            return Err(Error::NoSolution(format!("outer eigenvalue {c} is not negative")));
        };
        for lambda in roots {
            let (s1, s2) = segment_constants(input.positions, input.domain, h, input.params.m, C64::new(0.0, 0.0), &rho);
            let rho_l = if lambda.im < 0.0 { rho.iter().map(|c| c.conj()).collect() } else { rho.clone() };
            eigen.push(Eigen {
                lambda,
                signs: sign_pattern(&rho_l),
                ill_conditioned: ill_conditioned(&rho_l),
                rho: rho_l,
                s1,
                s2,
                pulse: None,
            });
        }
    }
    sort_eigen(&mut eigen);
    let k = input.k_values();
    let kmax = k.iter().cloned().fold(0.0, f64::max);
    let degenerate = (0..n).any(|i| (i + 1..n).any(|j| (k[i] - k[j]).abs() <= 1e-8 * kmax));
    Ok(SpectrumReport {
        mode: SpectrumMode::SmallM,
        classification: classify(&eigen),
        eigen,
        k_star: input.k_stars(ctx)?,
        k,
        degenerate,
        c_star: Some(c_star),
    })
}

/// Sampled eigenfunction: outer perturbation on `xs` and inner perturbation, the latter
/// normalised to `max |V| = 1`. The inner part is a sum of scaled inner profiles with
/// weights `rho_j / u_j^2`; `width` is the pulse width in the outer variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenProfile {
    pub x: Vec<f64>,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
}

pub fn eigenfunction_profile(entry: &Eigen, input: &SpectrumInput, ctx: &SpectralContext, xs: &[f64]) -> Result<EigenProfile> {
    input.validate()?;
    let m = input.params.m;
    let width = input.params.pulse_width();
    let vin = ctx.inner.vin(entry.lambda)?;
    let h = input.terrain.constant_slope();
    let sigma = h.map(|h| sigma_of(h, m, entry.lambda));
    let segs = segments(input.positions, input.domain);
    let length = match input.domain {
        Domain::Periodic { length } => Some(*length),
        _ => None,
    };
    let inner_at = |xi: f64| -> C64 {
        let xi = xi.abs();
        let last = *vin.xi.last().unwrap_or(&0.0);
        if xi >= last || vin.xi.len() < 2 {
            return C64::new(0.0, 0.0);
        }
        let step = vin.xi[1] - vin.xi[0];
        let i = ((xi / step) as usize).min(vin.xi.len() - 2);
        let w = (xi - vin.xi[i]) / step;
        vin.v[i] * (1.0 - w) + vin.v[i + 1] * w
    };
    let mut u_out = Vec::with_capacity(xs.len());
    let mut v_out = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut v = C64::new(0.0, 0.0);
        for (j, p) in input.positions.iter().enumerate() {
            let weight = entry.rho[j] / (input.u[j] * input.u[j]);
            let mut d = x - p;
            if let Some(l) = length {
                d -= l * (d / l).round();
            }
            v += weight * inner_at(d / width);
        }
        v_out.push(v);
        let u = match (h, sigma) {
            (Some(h), Some(sigma)) if entry.s1.len() == segs.len() => {
                let rm = (C64::new(-h, 0.0) - sigma) / 2.0;
                let rp = (C64::new(-h, 0.0) + sigma) / 2.0;
                outer_value(&segs, &entry.s1, &entry.s2, rm, rp, x, length)
            }
            _ => C64::new(f64::NAN, 0.0),
        };
        u_out.push(u);
    }
    let vmax = v_out.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if vmax > 0.0 {
        for c in v_out.iter_mut().chain(u_out.iter_mut()) {
            *c /= vmax;
        }
    }
    Ok(EigenProfile { x: xs.to_vec(), u: u_out, v: v_out })
}

fn outer_value(segs: &[Segment], s1: &[C64], s2: &[C64], rm: C64, rp: C64, x: f64, length: Option<f64>) -> C64 {
    for (k, seg) in segs.iter().enumerate() {
        let (x0, x1) = match *seg {
            Segment::Between { x0, x1, .. } => (x0, x1),
            Segment::LeftWall { wall, x1 } => (wall, x1),
            Segment::RightWall { x0, wall } => (x0, wall),
            Segment::LeftFar { x1 } => (f64::NEG_INFINITY, x1),
            Segment::RightFar { x0 } => (x0, f64::INFINITY),
        };
        let mut y = x;
        if let Some(l) = length {
            while y < x0 {
                y += l;
            }
            while y > x0 + l {
                y -= l;
            }
        }
        if y >= x0 && y <= x1 {
            let a = if x0.is_finite() { s1[k] * (rm * (y - x0)).exp() } else { C64::new(0.0, 0.0) };
            let b = if x1.is_finite() { s2[k] * (rp * (y - x1)).exp() } else { C64::new(0.0, 0.0) };
            return a + b;
        }
    }
    C64::new(0.0, 0.0)
}

/// Vector form of the coupled residual `E(lambda) rho`, for checks.
pub fn coupled_residual(input: &SpectrumInput, lambda: C64, rho: &[C64], inner: &InnerSolver) -> Result<f64> {
    let h = input
        .terrain
        .constant_slope()
        .ok_or_else(|| Error::Unsupported("coupled spectrum needs a constant slope".into()))?;
    let e = coupled_matrix(input, h, lambda, inner);
    Ok((e * DVector::from_row_slice(rho)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitude::{solve_amplitudes, NewtonOptions};
    use crate::outer::{OuterMap, OuterOptions};

    #[test]
    fn dtn_at_zero_matches_outer_map() {
        let pos = [1.0, 2.5, 4.0, 7.2];
        for h in [0.0, 0.8] {
            for dom in [Domain::Unbounded, Domain::Periodic { length: 9.0 }, Domain::Neumann { length: 9.0 }] {
                let map = OuterMap::build(&pos, &dom, &Terrain::slope(h), &OuterOptions::default()).unwrap();
                let jm = map.jump_matrix();
                let d = dtn_matrix(&pos, &dom, h, 0.45, C64::new(0.0, 0.0));
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((d[(i, j)] - jm[(i, j)]).norm() < 1e-12, "{dom:?} h={h} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn constants_reproduce_weights_and_derivative_jumps() {
        let pos = [1.0, 2.5, 4.0];
        let h = 0.6;
        let m = 2.0;
        let lambda = C64::new(0.3, 0.4);
        let rho = [C64::new(1.0, 0.2), C64::new(-0.5, 0.1), C64::new(0.3, -0.7)];
        let dom = Domain::Neumann { length: 5.5 };
        let (s1, s2) = segment_constants(&pos, &dom, h, m, lambda, &rho);
        let sigma = sigma_of(h, m, lambda);
        let rm = (C64::new(-h, 0.0) - sigma) / 2.0;
        let rp = (C64::new(-h, 0.0) + sigma) / 2.0;
        let segs = segments(&pos, &dom);
        let val = |x: f64| outer_value(&segs, &s1, &s2, rm, rp, x, None);
        for (j, p) in pos.iter().enumerate() {
            assert!((val(*p) - rho[j]).norm() < 1e-12);
        }
        let e = 1e-6;
        let d = |x: f64| (val(x + e) - val(x - e)) / (2.0 * e);
        let jumps: Vec<C64> = pos.iter().map(|p| d(p + 2e-5) - d(p - 2e-5)).collect();
        let mm = dtn_matrix(&pos, &dom, h, m, lambda);
        let expect = mm * DVector::from_row_slice(&rho);
        for j in 0..3 {
            assert!((jumps[j] - expect[j]).norm() < 1e-3, "{j}: {} vs {}", jumps[j], expect[j]);
        }
        // Wall condition.
        assert!(d(e).norm() < 1e-4);
    }

    #[test]
    fn single_pulse_coupled_equals_decoupled() {
        let ctx = SpectralContext::default();
        let params = ModelParams::new(0.2, 0.45, 0.01);
        let terrain = Terrain::flat();
        let dom = Domain::Unbounded;
        let map = OuterMap::build(&[0.0], &dom, &terrain, &OuterOptions::default()).unwrap();
        let u = solve_amplitudes(&map, params.delta(0.0), None, &NewtonOptions::default()).unwrap().u;
        let input = SpectrumInput { positions: &[0.0], u: &u, params: &params, terrain: &terrain, domain: &dom, t: 0.0 };
        let d = dsp_spectrum(&input, &ctx).unwrap();
        let c = csp_spectrum(&input, &ctx, &CspOptions::default()).unwrap();
        assert_eq!(d.eigen.len(), 2);
        for e in &d.eigen {
            assert!(c.eigen.iter().any(|f| (f.lambda - e.lambda).norm() < 1e-8), "{} missing from {:?}", e.lambda, c.eigen.iter().map(|f| f.lambda).collect::<Vec<_>>());
        }
    }
}

//! Reduced dynamics of pulse positions.
//!
//! A pulse moves with the difference of the squared one-sided outer derivatives,
//! `dP_j/dt = (D a^2 / 6 m^{3/2}) [U_x(P_j^+)^2 - U_x(P_j^-)^2]`.

use std::cell::RefCell;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amplitude::{amplitudes_leading, solve_amplitudes, Mode, NewtonOptions};
use crate::error::{Error, Result};
use crate::model::{Domain, ModelParams, PulseConfig, Terrain};
use crate::ode::{Dense, Dopri5, Step, Tolerances};
use crate::outer::{edge_derivatives_constant_slope, r_plus, s_of, OuterMap, OuterOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub dpdt: Vec<f64>,
    /// `[U_x(P_j^+)^2 - U_x(P_j^-)^2] / 6`.
    pub c: Vec<f64>,
    /// `D a^2 / m^{3/2}`.
    pub prefactor: f64,
    pub u: Vec<f64>,
}

/// Everything needed to evaluate the velocity field.
#[derive(Clone, Copy, Debug)]
pub struct PulseSystem<'a> {
    pub params: &'a ModelParams,
    pub terrain: &'a Terrain,
    pub domain: &'a Domain,
    pub mode: Mode,
    pub outer: OuterOptions,
    pub newton: NewtonOptions,
}

impl<'a> PulseSystem<'a> {
    pub fn new(params: &'a ModelParams, terrain: &'a Terrain, domain: &'a Domain, mode: Mode) -> Self {
        PulseSystem { params, terrain, domain, mode, outer: OuterOptions::default(), newton: NewtonOptions::default() }
    }

    /// Outer map and amplitudes at time `t`.
    pub fn amplitudes(&self, positions: &[f64], t: f64, warm: Option<&[f64]>) -> Result<(OuterMap, Vec<f64>)> {
        let map = OuterMap::build(positions, self.domain, self.terrain, &self.outer)?;
        let u = match self.mode {
            Mode::A3 => amplitudes_leading(&map)?,
            Mode::A3p => solve_amplitudes(&map, self.params.delta(t), warm, &self.newton)?.u,
        };
        Ok((map, u))
    }

    pub fn velocity(&self, positions: &[f64], t: f64, warm: Option<&[f64]>) -> Result<Velocity> {
        let (map, u) = self.amplitudes(positions, t, warm)?;
        let delta = match self.mode {
            Mode::A3 => 0.0,
            Mode::A3p => self.params.delta(t),
        };
        let nu = nalgebra::DVector::from_iterator(u.len(), u.iter().map(|v| delta * v));
        let (left, right) = map.derivatives(&nu);
        let c: Vec<f64> = left.iter().zip(right.iter()).map(|(l, r)| (r * r - l * l) / 6.0).collect();
        let prefactor = self.params.speed_scale(t);
        Ok(Velocity { dpdt: c.iter().map(|v| prefactor * v).collect(), c, prefactor, u })
    }
}

/// Velocity of a configuration at its own time.
pub fn velocity(config: &PulseConfig, params: &ModelParams, terrain: &Terrain, domain: &Domain, mode: Mode) -> Result<Velocity> {
    config.validate(domain)?;
    PulseSystem::new(params, terrain, domain, mode).velocity(&config.positions, config.t, config.amplitudes.as_deref())
}

/// Smallest gap between neighbours, including the wrap-around gap on periodic domains.
pub fn min_spacing(positions: &[f64], domain: &Domain) -> f64 {
    let mut gap = positions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if let (Domain::Periodic { length }, Some(first), Some(last)) = (domain, positions.first(), positions.last()) {
        if positions.len() > 1 {
            gap = gap.min(first + length - last);
        }
    }
    if let (Domain::Neumann { length }, Some(first), Some(last)) = (domain, positions.first(), positions.last()) {
        // A pulse reaching a wall is treated like a collision with its mirror image.
        gap = gap.min(2.0 * first).min(2.0 * (length - last));
    }
    gap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub mode: Mode,
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub h_min: f64,
    /// Defaults to `10 D / sqrt(m)`.
    pub collision_tol: Option<f64>,
    /// Stop once `max |dP/dt|` drops below this (only for constant `a`).
    pub fixed_point_tol: f64,
    /// Uniform sampling interval; every accepted step is recorded when absent.
    pub sample_dt: Option<f64>,
    pub max_steps: usize,
    pub newton: NewtonOptions,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            mode: Mode::A3p,
            rtol: 1e-8,
            atol: 1e-10,
            h0: 1e-2,
            h_min: 1e-9,
            collision_tol: None,
            fixed_point_tol: 1e-10,
            sample_dt: None,
            max_steps: 1_000_000,
            newton: NewtonOptions::default(),
        }
    }
}

impl OdeOptions {
    pub fn collision_tol(&self, params: &ModelParams) -> f64 {
        self.collision_tol.unwrap_or(10.0 * params.pulse_width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TEnd,
    /// A user monitor fired.
    Event,
    OdeFixedPoint,
    Collision,
    /// Amplitudes stopped existing (the step size collapsed on failing solves).
    ExistenceLost,
    StepUnderflow,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub a: f64,
    pub positions: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// CSV with columns `t, a, P_1..P_N, u_1..u_N`.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.positions.len());
        let mut out = String::from("t,a");
        for j in 1..=n {
            out.push_str(&format!(",P{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",u{j}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{},{}", s.t, s.a));
            for v in s.positions.iter().chain(&s.u) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of one accepted step of [`PulseIntegrator`].
#[derive(Clone, Debug, PartialEq)]
pub enum Advance {
    Step(Dense),
    /// The step would bring two pulses within the collision tolerance; the state was
    /// moved to the first such time.
    Collision,
    ExistenceLost,
    StepUnderflow,
}

/// Stepper for the pulse ODE, exposing dense output for event location.
#[derive(Clone, Debug)]
pub struct PulseIntegrator<'a> {
    pub sys: PulseSystem<'a>,
    pub ode: Dopri5,
    pub u: Vec<f64>,
    pub collision_tol: f64,
    rhs_failures: usize,
}

impl<'a> PulseIntegrator<'a> {
    pub fn new(sys: PulseSystem<'a>, config: &PulseConfig, opts: &OdeOptions) -> Result<Self> {
        config.validate(sys.domain)?;
        let (_, u) = sys.amplitudes(&config.positions, config.t, config.amplitudes.as_deref())?;
        let tol = Tolerances { rtol: opts.rtol, atol: opts.atol, h_min: opts.h_min, h_max: f64::INFINITY };
        Ok(PulseIntegrator {
            ode: Dopri5::new(config.t, config.positions.clone(), opts.h0, tol),
            u,
            collision_tol: opts.collision_tol(sys.params),
            sys,
            rhs_failures: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.ode.t
    }

    pub fn positions(&self) -> &[f64] {
        &self.ode.y
    }

    pub fn sample(&self) -> Sample {
        Sample { t: self.ode.t, a: self.sys.params.a(self.ode.t), positions: self.ode.y.clone(), u: self.u.clone() }
    }

    pub fn velocity(&self) -> Result<Velocity> {
        self.sys.velocity(&self.ode.y, self.ode.t, Some(&self.u))
    }

    /// Amplitudes at an arbitrary state, warm-started from the current ones.
    pub fn amplitudes_at(&self, t: f64, positions: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sys.amplitudes(positions, t, Some(&self.u))?.1)
    }

    /// Advances by one accepted step, not beyond `t_max`.
    pub fn advance(&mut self, t_max: f64) -> Result<Advance> {
        let sys = self.sys;
        let warm = RefCell::new(self.u.clone());
        let mut f = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            if y.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::NoSolution("pulses crossed".into()));
            }
            let w = warm.borrow().clone();
            let v = sys.velocity(y, t, Some(&w))?;
            *warm.borrow_mut() = v.u;
            Ok(v.dpdt)
        };
        loop {
            match self.ode.step(&mut f, t_max) {
                Ok(Step::Accepted(dense)) => {
                    let gap = min_spacing(&self.ode.y, self.sys.domain);
                    if gap <= self.collision_tol {
                        let t_hit = self.locate_collision(&dense);
                        let y = dense.eval(t_hit);
                        self.ode.reset(t_hit, y);
                        self.u = self.amplitudes_at(t_hit, &self.ode.y.clone()).unwrap_or_else(|_| warm.borrow().clone());
                        return Ok(Advance::Collision);
                    }
                    self.u = match self.sys.amplitudes(&self.ode.y, self.ode.t, Some(&warm.borrow())) {
                        Ok((_, u)) => u,
                        Err(_) => warm.borrow().clone(),
                    };
                    self.rhs_failures = 0;
                    return Ok(Advance::Step(dense));
                }
                Ok(Step::RhsFailed) => {
                    self.rhs_failures += 1;
                    *warm.borrow_mut() = self.u.clone();
                }
                Err(Error::StepUnderflow { .. }) => {
                    return Ok(if self.rhs_failures > 0 { Advance::ExistenceLost } else { Advance::StepUnderflow });
                }
                Err(e) if e.is_validation() => return Err(e),
                Err(_) => return Ok(Advance::ExistenceLost),
            }
        }
    }

    fn locate_collision(&self, dense: &Dense) -> f64 {
        let gap = |t: f64| min_spacing(&dense.eval(t), self.sys.domain) - self.collision_tol;
        let (mut a, mut b) = (dense.t0, dense.t1());
        if gap(a) <= 0.0 {
            return a;
        }
        for _ in 0..100 {
            let c = 0.5 * (a + b);
            if gap(c) > 0.0 {
                a = c;
            } else {
                b = c;
            }
            if b - a < 1e-12 * (1.0 + b.abs()) {
                break;
            }
        }
        b
    }
}

/// Integrates from `config.t` to `t_end`. `monitor` is called after every accepted step
/// and stops the run (with [`Termination::Event`]) by returning true.
pub fn integrate(
    config: &PulseConfig,
    params: &ModelParams,
    terrain: &Terrain,
    domain: &Domain,
    t_end: f64,
    opts: &OdeOptions,
    mut monitor: Option<&mut dyn FnMut(&Sample) -> Result<bool>>,
) -> Result<Trajectory> {
    params.validate()?;
    terrain.validate(domain)?;
    domain.validate()?;
    if !(t_end > config.t) {
        return Err(Error::invalid("t_end must exceed the initial time"));
    }
    let mut sys = PulseSystem::new(params, terrain, domain, opts.mode);
    sys.newton = opts.newton;
    let mut integ = PulseIntegrator::new(sys, config, opts)?;
    let constant_a = params.a.is_constant();
    let mut samples = vec![integ.sample()];
    let mut next_sample = opts.sample_dt.map(|dt| config.t + dt);
    let mut termination = Termination::MaxSteps;
    for _ in 0..opts.max_steps {
        let adv = integ.advance(t_end)?;
        let dense = match adv {
            Advance::Step(d) => d,
            Advance::Collision => {
                termination = Termination::Collision;
                break;
            }
            Advance::ExistenceLost => {
                termination = Termination::ExistenceLost;
                break;
            }
            Advance::StepUnderflow => {
                termination = Termination::StepUnderflow;
                break;
            }
        };
        match (opts.sample_dt, next_sample.as_mut()) {
            (Some(dt), Some(ns)) => {
                while *ns <= integ.t() + 1e-12 * dt {
                    let y = dense.eval(*ns);
                    let u = integ.amplitudes_at(*ns, &y).unwrap_or_else(|_| integ.u.clone());
                    samples.push(Sample { t: *ns, a: params.a(*ns), positions: y, u });
                    *ns += dt;
                }
            }
            _ => samples.push(integ.sample()),
        }
        let current = integ.sample();
        if let Some(m) = monitor.as_mut() {
            if m(&current)? {
                termination = Termination::Event;
                break;
            }
        }
        if integ.t() >= t_end {
            termination = Termination::TEnd;
            break;
        }
        if constant_a {
            let v = integ.velocity()?;
            if v.dpdt.iter().all(|x| x.abs() < opts.fixed_point_tol) {
                termination = Termination::OdeFixedPoint;
                break;
            }
        }
    }
    if samples.last().map(|s| s.t) != Some(integ.t()) {
        samples.push(integ.sample());
    }
    Ok(Trajectory { samples, termination })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub positions: Vec<f64>,
    pub u: Vec<f64>,
    /// `max |dP/dt|` at the returned configuration.
    pub residual: f64,
    pub iterations: usize,
    /// Converged configurations from the random starts (`None` on failure).
    pub starts: Vec<Option<Vec<f64>>>,
    /// Largest distance between the main solution and a converged start.
    pub spread: f64,
    /// Eigenvalues of the linearisation `d(dP/dt)/dP`.
    pub eigenvalues: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { tol: 1e-12, max_iter: 100, starts: 5, seed: 0 }
    }
}

fn jacobian(sys: &PulseSystem, p: &[f64], t: f64, f0: &[f64], warm: &[f64]) -> Result<DMatrix<f64>> {
    let n = p.len();
    let mut j = DMatrix::zeros(n, n);
    let mut q = p.to_vec();
    for k in 0..n {
        let h = 1e-6;
        q[k] = p[k] + h;
        let f1 = sys.velocity(&q, t, Some(warm))?.c;
        q[k] = p[k];
        for i in 0..n {
            j[(i, k)] = (f1[i] - f0[i]) / h;
        }
    }
    Ok(j)
}

/// Damped Newton on the bracketed velocity `c(P) = 0`, keeping pulses ordered inside
/// the domain.
fn newton_fixed(sys: &PulseSystem, start: &[f64], t: f64, length: f64, opts: &FixedPointOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut p = start.to_vec();
    let mut v = sys.velocity(&p, t, None)?;
    let norm = |c: &[f64]| c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let valid = |q: &[f64]| q[0] > 0.0 && q[q.len() - 1] < length && q.windows(2).all(|w| w[1] > w[0]);
    for it in 0..opts.max_iter {
        if norm(&v.c) < opts.tol {
            return Ok((p, v.u, it));
        }
        let j = jacobian(sys, &p, t, &v.c, &v.u)?;
        let rhs = nalgebra::DVector::from_iterator(p.len(), v.c.iter().map(|x| -x));
        let step = j.lu().solve(&rhs).ok_or_else(|| Error::NoSolution("singular fixed-point Jacobian".into()))?;
        // The finite-difference Jacobian puts a floor under the residual; a vanishing step
        // at a small residual is convergence.
        if step.amax() < 1e-12 * length && norm(&v.c) < 1e3 * opts.tol {
            return Ok((p, v.u, it));
        }
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, d)| a + lam * d).collect();
            if valid(&q) {
                if let Ok(vq) = sys.velocity(&q, t, Some(&v.u)) {
                    if norm(&vq.c) < norm(&v.c) {
                        p = q;
                        v = vq;
                        accepted = true;
                        break;
                    }
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            return Err(Error::not_converged("fixed-point Newton", it, norm(&v.c)));
        }
    }
    if norm(&v.c) < opts.tol {
        return Ok((p, v.u, opts.max_iter));
    }
    Err(Error::not_converged("fixed-point Newton", opts.max_iter, norm(&v.c)))
}

/// Newton from `start`; when the line search stalls, follow the (stable) flow at frozen
/// rainfall towards the fixed point and polish from there.
fn solve_fixed(sys: &PulseSystem, start: &[f64], t: f64, length: f64, opts: &FixedPointOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    match newton_fixed(sys, start, t, length, opts) {
        Ok(r) => Ok(r),
        Err(Error::NoSolution(_)) | Err(Error::NotConverged { .. }) => {
            let frozen = ModelParams::new(sys.params.a(t), sys.params.m, sys.params.d);
            let flow = OdeOptions { mode: sys.mode, fixed_point_tol: 1e-7, sample_dt: Some(1e12), newton: sys.newton, ..Default::default() };
            let tr = integrate(&PulseConfig::new(start.to_vec()), &frozen, sys.terrain, sys.domain, 1e8, &flow, None)?;
            let end = tr.last().ok_or_else(|| Error::NoSolution("empty flow trajectory".into()))?;
            newton_fixed(sys, &end.positions, t, length, opts)
        }
        Err(e) => Err(e),
    }
}

/// Fixed point of `N` pulses on a Neumann domain, checked for uniqueness from random
/// starts.
pub fn fixed_point(
    n: usize,
    params: &ModelParams,
    terrain: &Terrain,
    domain: &Domain,
    mode: Mode,
    t: f64,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    let Domain::Neumann { length } = *domain else {
        return Err(Error::Unsupported("fixed points are computed on Neumann domains only".into()));
    };
    if n == 0 {
        return Err(Error::invalid("need at least one pulse"));
    }
    params.validate()?;
    terrain.validate(domain)?;
    let sys = PulseSystem::new(params, terrain, domain, mode);
    let regular = PulseConfig::regular(n, length).positions;
    let (p, u, iterations) = solve_fixed(&sys, &regular, t, length, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cell = length / n as f64;
    let mut starts = Vec::with_capacity(opts.starts);
    let mut spread: f64 = 0.0;
    for _ in 0..opts.starts {
        let mut q: Vec<f64> = regular.iter().map(|x| x + rng.gen_range(-0.3..0.3) * cell).collect();
        q.sort_by(f64::total_cmp);
        let res = solve_fixed(&sys, &q, t, length, opts).ok().map(|r| r.0);
        if let Some(r) = &res {
            spread = spread.max(r.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        starts.push(res);
    }
    let v = sys.velocity(&p, t, Some(&u))?;
    let jac = jacobian(&sys, &p, t, &v.c, &u)? * v.prefactor;
    let eigenvalues = jac.complex_eigenvalues().iter().cloned().collect();
    let residual = v.dpdt.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(FixedPoint { positions: p, u, residual, iterations, starts, spread, eigenvalues })
}

/// Speed of a regular periodic pattern with spacing `d` on a constant slope `h`.
pub fn regular_speed(d: f64, h: f64, params: &ModelParams, t: f64, mode: Mode) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("spacing must be positive, got {d}")));
    }
    let (left, right) = edge_derivatives_constant_slope(d, h, 1.0, 1.0);
    let base = params.speed_scale(t) * (left * left - right * right) / 6.0;
    match mode {
        Mode::A3 => Ok(base),
        Mode::A3p => {
            let u = regular_amplitude(d, h, params.delta(t))?;
            let kappa = 1.0 - params.delta(t) * u;
            Ok(base * kappa * kappa)
        }
    }
}

/// Amplitude of a regular periodic pattern: the smaller root of `J (1 - delta u) u = 6`.
pub fn regular_amplitude(d: f64, h: f64, delta: f64) -> Result<f64> {
    let (left, right) = edge_derivatives_constant_slope(d, h, 1.0, 1.0);
    let jump = left - right;
    if !(jump > 0.0) {
        return Err(Error::NoSolution("non-positive derivative jump".into()));
    }
    let disc = 1.0 - 24.0 * delta / jump;
    if disc < 0.0 {
        return Err(Error::NoSolution(format!("no regular pattern with spacing {d} beyond the fold")));
    }
    Ok(12.0 / (jump * (1.0 + disc.sqrt())))
}

/// Speed of an isolated pulse on a constant slope.
pub fn homoclinic_speed(h: f64, params: &ModelParams, t: f64, mode: Mode) -> Result<f64> {
    let s = s_of(h);
    let kappa = match mode {
        Mode::A3 => 1.0,
        Mode::A3p => {
            let delta = params.delta(t);
            let (u, _) = crate::amplitude::homoclinic_amplitudes(delta, h)
                .ok_or_else(|| Error::NoSolution("isolated pulse beyond the fold".into()))?;
            1.0 - delta * u
        }
    };
    Ok(kappa * kappa * params.speed_scale(t) * h * s / 6.0)
}

/// Spacing to the uphill neighbour at which the lowest pulse of a pattern (with bare
/// soil below it) is stationary. Infinite when `h <= 0`.
pub fn colonization_wavelength(h: f64) -> f64 {
    if !(h > 0.0) {
        return f64::INFINITY;
    }
    let s = s_of(h);
    let below = (h - s) / 2.0;
    let bracket = |d: f64| {
        let r = r_plus(d, h);
        r * r - below * below
    };
    let mut hi = 1.0;
    while bracket(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bracket(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(0.5, 0.45, 0.01)
    }

    #[test]
    fn regular_periodic_pattern_is_stationary_on_flat_terrain() {
        let p = params();
        let dom = Domain::Periodic { length: 10.0 };
        for n in [1, 3, 6] {
            let cfg = PulseConfig::new((0..n).map(|j| 0.3 + 10.0 * j as f64 / n as f64).collect());
            let v = velocity(&cfg, &p, &Terrain::flat(), &dom, Mode::A3p).unwrap();
            assert!(v.dpdt.iter().all(|x| x.abs() < 1e-14), "{:?}", v.dpdt);
        }
    }

    #[test]
    fn symmetric_pair_moves_symmetrically() {
        let p = params();
        let dom = Domain::Neumann { length: 10.0 };
        let cfg = PulseConfig::new(vec![3.0, 7.0]);
        let v = velocity(&cfg, &p, &Terrain::flat(), &dom, Mode::A3p).unwrap();
        assert!((v.dpdt[0] + v.dpdt[1]).abs() < 1e-14);
        assert!(v.dpdt[0] != 0.0);
    }

    #[test]
    fn isolated_pulse_speed() {
        let p = params();
        for h in [0.5, 1.0, 2.0] {
            let cfg = PulseConfig::new(vec![0.0]);
            let v = velocity(&cfg, &p, &Terrain::slope(h), &Domain::Unbounded, Mode::A3p).unwrap();
            let delta = p.delta(0.0);
            let (u, _) = crate::amplitude::homoclinic_amplitudes(delta, h).unwrap();
            let expect = (1.0 - delta * u).powi(2) * p.speed_scale(0.0) * h * (h * h + 4.0f64).sqrt() / 6.0;
            assert!((v.dpdt[0] - expect).abs() < 1e-14 * expect.abs().max(1.0));
            assert!((homoclinic_speed(h, &p, 0.0, Mode::A3p).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn regular_speed_matches_velocity() {
        let p = params();
        let (h, d) = (2.0, 2.0);
        let n = 4;
        let dom = Domain::Periodic { length: d * n as f64 };
        let cfg = PulseConfig::new((0..n).map(|j| 0.5 + d * j as f64).collect());
        for mode in [Mode::A3, Mode::A3p] {
            let v = velocity(&cfg, &p, &Terrain::slope(h), &dom, mode).unwrap();
            let c = regular_speed(d, h, &p, 0.0, mode).unwrap();
            for x in &v.dpdt {
                assert!((x - c).abs() < 1e-12, "{mode:?}: {x} vs {c}");
            }
        }
        assert_eq!(regular_speed(3.0, 0.0, &p, 0.0, Mode::A3).unwrap(), 0.0);
    }

    #[test]
    fn colonization_root_stops_the_lowest_pulse() {
        assert!(colonization_wavelength(0.0).is_infinite());
        let p = params();
        for h in [0.5, 1.0, 2.0] {
            let dc = colonization_wavelength(h);
            let cfg = PulseConfig::new(vec![0.0, dc]);
            let v = velocity(&cfg, &p, &Terrain::slope(h), &Domain::Unbounded, Mode::A3).unwrap();
            assert!(v.dpdt[0].abs() < 1e-10, "{}", v.dpdt[0]);
            let cfg = PulseConfig::new(vec![0.0, dc * 1.1]);
            let v = velocity(&cfg, &p, &Terrain::slope(h), &Domain::Unbounded, Mode::A3).unwrap();
            assert!(v.dpdt[0] > 0.0);
        }
    }

    #[test]
    fn neumann_fixed_points() {
        let p = params();
        let dom = Domain::Neumann { length: 10.0 };
        let fp = fixed_point(2, &p, &Terrain::flat(), &dom, Mode::A3p, 0.0, &FixedPointOptions::default()).unwrap();
        assert!((fp.positions[0] - 2.5).abs() < 1e-9 && (fp.positions[1] - 7.5).abs() < 1e-9);
        assert!(fp.residual < 1e-10);
        assert!(fp.eigenvalues.iter().all(|e| e.re < 0.0));
        assert!(fp.starts.iter().all(|s| s.is_some()) && fp.spread < 1e-6);
        let fp = fixed_point(1, &p, &Terrain::slope(1.0), &dom, Mode::A3p, 0.0, &FixedPointOptions::default()).unwrap();
        assert!(fp.positions[0] > 5.0);
    }

    #[test]
    fn single_pulse_relaxes_to_the_centre() {
        let p = params();
        let dom = Domain::Neumann { length: 4.0 };
        let opts = OdeOptions::default();
        let tr = integrate(&PulseConfig::new(vec![1.5]), &p, &Terrain::flat(), &dom, 1e8, &opts, None).unwrap();
        assert_eq!(tr.termination, Termination::OdeFixedPoint);
        assert!((tr.last().unwrap().positions[0] - 2.0).abs() < 1e-4);
    }
}

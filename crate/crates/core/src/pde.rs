//! Finite-difference solver for the full two-component PDE, pulse tracking and
//! comparison against the reduced dynamics.
//!
//! Time stepping is second-order backward differentiation. Diffusion, the decay terms
//! and the reaction `U V^2` are implicit: the water equation is solved with `V`
//! extrapolated, then the vegetation equation with the reaction linearised about that
//! extrapolation. Advection and terrain curvature are extrapolated explicitly.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amplitude::Mode;
use crate::cascade::CascadeTrace;
use crate::error::{Error, Result};
use crate::linalg::{solve_cyclic, BandLu, Tridiagonal};
use crate::model::{Domain, ModelParams, PulseConfig, Terrain};
use crate::pulse_ode::PulseSystem;

/// Uniform grid. Periodic grids omit the node at `x0 + L`; bounded grids include both
/// walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Grid {
    /// Grid with spacing at most `dx` (default `min(D/sqrt(m)/8, L/4096)`). Unbounded
    /// domains are truncated to `[P_1 - margin, P_N + margin]` with reflecting walls.
    pub fn new(domain: &Domain, params: &ModelParams, positions: &[f64], dx: Option<f64>, margin: f64) -> Result<Self> {
        let (x0, len, periodic) = match domain {
            Domain::Periodic { length } => (0.0, *length, true),
            Domain::Neumann { length } => (0.0, *length, false),
            Domain::Unbounded => {
                let lo = positions.first().copied().unwrap_or(0.0) - margin;
                let hi = positions.last().copied().unwrap_or(0.0) + margin;
                (lo, hi - lo, false)
            }
        };
        let target = dx.unwrap_or_else(|| (params.pulse_width() / 8.0).min(len / 4096.0));
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let cells = (len / target).ceil().max(4.0) as usize;
        let dx = len / cells as f64;
        let n = if periodic { cells } else { cells + 1 };
        Ok(Grid { x0, dx, n, periodic })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn length(&self) -> f64 {
        if self.periodic {
            self.n as f64 * self.dx
        } else {
            (self.n - 1) as f64 * self.dx
        }
    }

    fn neighbours(&self, i: usize) -> (usize, usize) {
        let n = self.n;
        if self.periodic {
            ((i + n - 1) % n, (i + 1) % n)
        } else {
            // Mirror ghost nodes.
            (if i == 0 { 1 } else { i - 1 }, if i == n - 1 { n - 2 } else { i + 1 })
        }
    }

    /// Trapezoidal integral.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let s: f64 = f.iter().sum();
        if self.periodic {
            s * self.dx
        } else {
            (s - 0.5 * (f[0] + f[self.n - 1])) * self.dx
        }
    }

    fn wrap(&self, x: f64) -> f64 {
        if self.periodic {
            let l = self.length();
            (x - self.x0).rem_euclid(l) + self.x0
        } else {
            x
        }
    }

    fn distance(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if self.periodic {
            d.min(self.length() - d)
        } else {
            d
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub t: f64,
    pub a: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseTrack {
    pub id: usize,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub heights: Vec<f64>,
    pub birth: f64,
    pub death: Option<f64>,
}

impl PulseTrack {
    pub fn last_position(&self) -> f64 {
        *self.positions.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    /// Grid spacing; see [`Grid::new`] for the default.
    pub dx: Option<f64>,
    pub dt: f64,
    /// Interval between pulse extractions.
    pub track_dt: f64,
    /// Interval between stored snapshots; none are stored when absent.
    pub snapshot_dt: Option<f64>,
    /// Pulses lower than this fraction of the initial mean height count as dead.
    pub extinction_fraction: f64,
    /// Largest jump of a tracked pulse between two extractions.
    pub match_tol: f64,
    /// Half-width of the truncated domain used for unbounded problems.
    pub unbounded_margin: f64,
    /// Amplitude (relative to the peak height) of seeded noise added to `V`.
    pub noise: f64,
    pub seed: u64,
    /// Stop once no extracted pulse has moved more than this between two extractions.
    pub stationary_tol: Option<f64>,
    pub mode: Mode,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            dx: None,
            dt: 0.02,
            track_dt: 1.0,
            snapshot_dt: None,
            extinction_fraction: 0.01,
            match_tol: 0.25,
            unbounded_margin: 40.0,
            noise: 0.0,
            seed: 0,
            stationary_tol: None,
            mode: Mode::A3p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub t: f64,
    pub water: f64,
    pub vegetation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeRun {
    pub grid: Grid,
    pub snapshots: Vec<FieldState>,
    pub tracks: Vec<PulseTrack>,
    pub mass: Vec<MassRecord>,
    pub final_state: FieldState,
    pub threshold: f64,
    pub steps: usize,
}

impl PdeRun {
    pub fn alive(&self) -> Vec<&PulseTrack> {
        self.tracks.iter().filter(|t| t.death.is_none()).collect()
    }

    pub fn tracks_csv(&self) -> String {
        let mut out = String::from("t,pulse_id,position,height\n");
        let mut rows: Vec<(f64, usize, f64, f64)> = Vec::new();
        for tr in &self.tracks {
            for k in 0..tr.times.len() {
                rows.push((tr.times[k], tr.id, tr.positions[k], tr.heights[k]));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (t, id, x, h) in rows {
            out.push_str(&format!("{t},{id},{x},{h}\n"));
        }
        out
    }

    pub fn snapshots_csv(&self) -> String {
        let mut out = String::from("t,x,U,V\n");
        let xs = self.grid.xs();
        for s in &self.snapshots {
            for i in 0..xs.len() {
                out.push_str(&format!("{},{},{},{}\n", s.t, xs[i], s.u[i], s.v[i]));
            }
        }
        out
    }
}

/// Leading-order pulse profiles on top of the water field that balances them.
pub fn build_initial(
    config: &PulseConfig,
    params: &ModelParams,
    terrain: &Terrain,
    domain: &Domain,
    grid: &Grid,
    mode: Mode,
) -> Result<FieldState> {
    let t = config.t;
    let a = params.a(t);
    let xs = grid.xs();
    if config.is_empty() {
        return Ok(FieldState { t, a, u: vec![a; grid.n], v: vec![0.0; grid.n] });
    }
    config.validate(domain)?;
    let sep = 10.0 * params.pulse_width();
    let p = &config.positions;
    let too_close = p.windows(2).any(|w| w[1] - w[0] < sep)
        || matches!(domain, Domain::Periodic { length } if p[0] + length - p[p.len() - 1] < sep && p.len() > 1);
    if too_close {
        return Err(Error::invalid(format!("pulses closer than {sep} overlap")));
    }
    let u0 = match &config.amplitudes {
        Some(u) => u.clone(),
        None => PulseSystem::new(params, terrain, domain, mode).amplitudes(p, t, None)?.1,
    };
    let sm = params.m.sqrt();
    let scale = a / (sm * params.d);
    let mut v = vec![0.0; grid.n];
    for (j, &pj) in p.iter().enumerate() {
        let amp = scale * 1.5 / u0[j];
        for (i, &x) in xs.iter().enumerate() {
            let d = grid.distance(x, pj);
            let z = sm * d / (2.0 * params.d);
            if z < 40.0 {
                v[i] += amp / z.cosh().powi(2);
            }
        }
    }
    let u = steady_water(grid, terrain, a, &v);
    Ok(FieldState { t, a, u, v })
}

/// Solves `U_xx + h_x U_x + h_xx U + a - U - U V^2 = 0` for fixed `V`.
fn steady_water(grid: &Grid, terrain: &Terrain, a: f64, v: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let (lo, hi) = water_offdiag(grid, terrain);
    let mut m = BandLu::zeros(n, 2, 2);
    let idx = fold_index(n, grid.periodic);
    for i in 0..n {
        let (l, r) = grid.neighbours(i);
        let (_, _, hxx) = terrain.eval(grid.x(i));
        let row = idx[i];
        m.add(row, row, -2.0 / (grid.dx * grid.dx) + hxx - 1.0 - v[i] * v[i]);
        m.add(row, idx[l], lo[i]);
        m.add(row, idx[r], hi[i]);
    }
    let mut b = vec![0.0; n];
    for i in 0..n {
        b[idx[i]] = -a;
    }
    m.factor().expect("singular water operator");
    m.solve_in_place(&mut b);
    (0..n).map(|i| b[idx[i]].max(0.0)).collect()
}

/// Coefficients of the left and right neighbours in `U_xx + h_x U_x`.
fn water_offdiag(grid: &Grid, terrain: &Terrain) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n;
    let dx2 = grid.dx * grid.dx;
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for i in 0..n {
        let hx = terrain.slope_at(grid.x(i));
        let edge = !grid.periodic && (i == 0 || i == n - 1);
        if edge {
            // Mirror ghost: both stencil points coincide, the central difference vanishes.
            let c = 2.0 / dx2;
            if i == 0 {
                hi[i] = c;
            } else {
                lo[i] = c;
            }
        } else {
            lo[i] = 1.0 / dx2 - hx / (2.0 * grid.dx);
            hi[i] = 1.0 / dx2 + hx / (2.0 * grid.dx);
        }
    }
    (lo, hi)
}

/// Node order `0, n-1, 1, n-2, ...` for periodic grids, which keeps the wrap-around
/// coupling inside a narrow band; identity otherwise.
fn fold_index(n: usize, periodic: bool) -> Vec<usize> {
    if !periodic {
        return (0..n).collect();
    }
    (0..n).map(|i| if 2 * i < n { 2 * i } else { 2 * (n - 1 - i) + 1 }).collect()
}

/// Local maxima of `V` above `threshold`, refined by a three-point parabola. Maxima
/// closer than four cells are merged into the higher one.
pub fn extract_pulses(grid: &Grid, v: &[f64], threshold: f64) -> Vec<Peak> {
    let n = grid.n;
    let mut peaks: Vec<(usize, Peak)> = Vec::new();
    for i in 0..n {
        let (l, r) = grid.neighbours(i);
        let is_max = v[i] > threshold && v[i] >= v[l] && v[i] > v[r]
            || (v[i] > threshold && v[i] > v[l] && v[i] >= v[r]);
        if !is_max {
            continue;
        }
        let denom = v[l] - 2.0 * v[i] + v[r];
        let (shift, height) = if denom < 0.0 && (grid.periodic || (i > 0 && i < n - 1)) {
            let s = 0.5 * (v[l] - v[r]) / denom;
            (s, v[i] - 0.25 * (v[l] - v[r]) * s)
        } else {
            (0.0, v[i])
        };
        let position = grid.wrap(grid.x(i) + shift * grid.dx);
        peaks.push((i, Peak { position, height }));
    }
    let guard = 4.0 * grid.dx;
    let mut merged: Vec<Peak> = Vec::new();
    for (_, p) in peaks {
        match merged.last_mut() {
            Some(q) if grid.distance(q.position, p.position) < guard => {
                if p.height > q.height {
                    *q = p;
                }
            }
            _ => merged.push(p),
        }
    }
    if grid.periodic && merged.len() > 1 {
        let last = merged.len() - 1;
        if grid.distance(merged[0].position, merged[last].position) < guard {
            let p = merged.pop().unwrap();
            if p.height > merged[0].height {
                merged[0] = p;
            }
        }
    }
    merged.sort_by(|a, b| a.position.total_cmp(&b.position));
    merged
}

struct Stepper<'a> {
    grid: &'a Grid,
    params: &'a ModelParams,
    dt: f64,
    hx: Vec<f64>,
    hxx: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(grid: &'a Grid, params: &'a ModelParams, terrain: &Terrain, dt: f64) -> Self {
        let (hx, hxx): (Vec<f64>, Vec<f64>) = grid
            .xs()
            .iter()
            .map(|&x| {
                let (_, a, b) = terrain.eval(x);
                (a, b)
            })
            .unzip();
        Stepper { grid, params, dt, hx, hxx }
    }

    /// Explicit part of the water equation (without the rainfall).
    fn water_explicit(&self, u: &[f64]) -> Vec<f64> {
        let g = self.grid;
        (0..g.n)
            .map(|i| {
                let (l, r) = g.neighbours(i);
                self.hx[i] * (u[r] - u[l]) / (2.0 * g.dx) + self.hxx[i] * u[i]
            })
            .collect()
    }

    /// Solves `(diag_i) y_i - c (y_l - 2 y_i + y_r) = rhs` with `c` the scaled diffusion.
    fn solve_diffusion(&self, c: f64, diag: Vec<f64>, rhs: Vec<f64>) -> Vec<f64> {
        let g = self.grid;
        let n = g.n;
        let mut lo = vec![-c; n];
        let mut hi = vec![-c; n];
        let d: Vec<f64> = diag.iter().map(|x| x + 2.0 * c).collect();
        if g.periodic {
            solve_cyclic(&lo, &d, &hi, &rhs)
        } else {
            lo[0] = 0.0;
            hi[0] = -2.0 * c;
            lo[n - 1] = -2.0 * c;
            hi[n - 1] = 0.0;
            Tridiagonal::new(&lo, &d, &hi).solve_in_place_owned(rhs)
        }
    }

    /// One step; `prev` is the state before `cur`, absent for the first (backward Euler)
    /// step.
    fn step(&self, cur: &FieldState, prev: Option<&FieldState>) -> FieldState {
        let g = self.grid;
        let n = g.n;
        let dt = self.dt;
        let t1 = cur.t + dt;
        let a1 = self.params.a(t1);
        let ex = self.water_explicit(&cur.u);
        let (sigma, hist_u, hist_v, explicit, vstar): (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = match prev {
            None => (1.0 / dt, cur.u.iter().map(|x| x / dt).collect(), cur.v.iter().map(|x| x / dt).collect(), ex, cur.v.clone()),
            Some(p) => {
                let exp = self.water_explicit(&p.u);
                (
                    1.5 / dt,
                    (0..n).map(|i| (4.0 * cur.u[i] - p.u[i]) / (2.0 * dt)).collect(),
                    (0..n).map(|i| (4.0 * cur.v[i] - p.v[i]) / (2.0 * dt)).collect(),
                    (0..n).map(|i| 2.0 * ex[i] - exp[i]).collect(),
                    (0..n).map(|i| (2.0 * cur.v[i] - p.v[i]).max(0.0)).collect(),
                )
            }
        };
        // Water, implicit in U with the extrapolated V.
        let diag_u: Vec<f64> = (0..n).map(|i| sigma + 1.0 + vstar[i] * vstar[i]).collect();
        let rhs_u: Vec<f64> = (0..n).map(|i| hist_u[i] + explicit[i] + a1).collect();
        let u = self.solve_diffusion(1.0 / (g.dx * g.dx), diag_u, rhs_u);
        // Vegetation, with U V^2 linearised about the extrapolated V.
        let diag_v: Vec<f64> = (0..n).map(|i| sigma + self.params.m - 2.0 * u[i] * vstar[i]).collect();
        let rhs_v: Vec<f64> = (0..n).map(|i| hist_v[i] - u[i] * vstar[i] * vstar[i]).collect();
        let d2 = self.params.d * self.params.d / (g.dx * g.dx);
        let v = self.solve_diffusion(d2, diag_v, rhs_v);
        FieldState { t: t1, a: a1, u, v }
    }
}

trait SolveOwned {
    fn solve_in_place_owned(&self, b: Vec<f64>) -> Vec<f64>;
}

impl SolveOwned for Tridiagonal {
    fn solve_in_place_owned(&self, mut b: Vec<f64>) -> Vec<f64> {
        self.solve_in_place(&mut b);
        b
    }
}

/// Clips round-off negatives of `V`; fails when the scheme produced genuinely negative
/// vegetation or non-finite values.
fn check_state(s: &mut FieldState) -> Result<()> {
    let vmax = s.v.iter().cloned().fold(0.0, f64::max);
    let floor = -1e-8 * vmax.max(1.0);
    for (i, x) in s.v.iter_mut().enumerate() {
        if !x.is_finite() || *x > 1e12 {
            return Err(Error::NotConverged { what: format!("PDE blow-up at node {i}, t = {}", s.t), iterations: 0, residual: *x });
        }
        if *x < 0.0 {
            if *x < floor {
                return Err(Error::NotConverged { what: format!("negative vegetation at node {i}, t = {}", s.t), iterations: 0, residual: *x });
            }
            *x = 0.0;
        }
    }
    if s.u.iter().any(|x| !x.is_finite() || x.abs() > 1e12) {
        return Err(Error::NotConverged { what: format!("PDE blow-up in U at t = {}", s.t), iterations: 0, residual: f64::NAN });
    }
    Ok(())
}

fn add_noise(v: &mut [f64], amp: f64, seed: u64) {
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in v.iter_mut() {
        *x = (*x + amp * vmax * rng.gen_range(-1.0..1.0)).max(0.0);
    }
}

struct Tracker {
    tracks: Vec<PulseTrack>,
    match_tol: f64,
}

impl Tracker {
    fn update(&mut self, grid: &Grid, t: f64, peaks: &[Peak]) {
        let mut used = vec![false; peaks.len()];
        let live: Vec<usize> = (0..self.tracks.len()).filter(|&k| self.tracks[k].death.is_none()).collect();
        // Greedy nearest matching, closest pairs first.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &k in &live {
            let x = self.tracks[k].last_position();
            for (j, p) in peaks.iter().enumerate() {
                let d = grid.distance(x, p.position);
                if d <= self.match_tol {
                    pairs.push((d, k, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut matched = vec![false; self.tracks.len()];
        for (_, k, j) in pairs {
            if matched[k] || used[j] {
                continue;
            }
            matched[k] = true;
            used[j] = true;
            let tr = &mut self.tracks[k];
            tr.times.push(t);
            tr.positions.push(peaks[j].position);
            tr.heights.push(peaks[j].height);
        }
        for &k in &live {
            if !matched[k] {
                self.tracks[k].death = Some(t);
            }
        }
        for (j, p) in peaks.iter().enumerate() {
            if !used[j] {
                let id = self.tracks.len();
                self.tracks.push(PulseTrack {
                    id,
                    times: vec![t],
                    positions: vec![p.position],
                    heights: vec![p.height],
                    birth: t,
                    death: None,
                });
            }
        }
    }
}

/// Integrates the PDE from `initial` to `t_end`.
pub fn simulate_pde(
    params: &ModelParams,
    terrain: &Terrain,
    grid: &Grid,
    initial: &FieldState,
    t_end: f64,
    opts: &PdeOptions,
) -> Result<PdeRun> {
    params.validate()?;
    if initial.u.len() != grid.n || initial.v.len() != grid.n {
        return Err(Error::invalid("initial fields do not match the grid"));
    }
    if initial.u.iter().chain(&initial.v).any(|x| !x.is_finite()) {
        return Err(Error::invalid("initial fields must be finite"));
    }
    if !(opts.dt > 0.0) || !(opts.track_dt > 0.0) {
        return Err(Error::invalid("dt and track_dt must be positive"));
    }
    let peaks0 = extract_pulses(grid, &initial.v, 0.0);
    let mean_height = if peaks0.is_empty() { 0.0 } else { peaks0.iter().map(|p| p.height).sum::<f64>() / peaks0.len() as f64 };
    let threshold = (opts.extinction_fraction * mean_height).max(1e-12);

    let mut cur = initial.clone();
    if opts.noise > 0.0 {
        add_noise(&mut cur.v, opts.noise, opts.seed);
    }
    let mut tracker = Tracker { tracks: Vec::new(), match_tol: opts.match_tol };
    tracker.update(grid, cur.t, &extract_pulses(grid, &cur.v, threshold));
    let mut mass = vec![MassRecord { t: cur.t, water: grid.integrate(&cur.u), vegetation: grid.integrate(&cur.v) }];
    let mut snapshots = Vec::new();
    if opts.snapshot_dt.is_some() {
        snapshots.push(cur.clone());
    }
    let stepper = Stepper::new(grid, params, terrain, opts.dt);
    let mut prev: Option<FieldState> = None;
    let mut next_track = cur.t + opts.track_dt;
    let mut next_snap = cur.t + opts.snapshot_dt.unwrap_or(f64::INFINITY);
    let mut steps = 0;
    let mut last_positions: Vec<f64> = tracker.tracks.iter().map(|t| t.last_position()).collect();
    while cur.t < t_end - 1e-12 {
        let remaining = t_end - cur.t;
        if remaining < opts.dt * (1.0 - 1e-9) {
            // Shorten the final step with a backward Euler step.
            let s = Stepper::new(grid, params, terrain, remaining);
            let mut next = s.step(&cur, None);
            check_state(&mut next)?;
            prev = Some(std::mem::replace(&mut cur, next));
        } else {
            let mut next = stepper.step(&cur, prev.as_ref());
            check_state(&mut next)?;
            prev = Some(std::mem::replace(&mut cur, next));
        }
        steps += 1;
        let done = cur.t >= t_end - 1e-12;
        if cur.t >= next_track - 1e-9 || done {
            next_track += opts.track_dt;
            let peaks = extract_pulses(grid, &cur.v, threshold);
            tracker.update(grid, cur.t, &peaks);
            mass.push(MassRecord { t: cur.t, water: grid.integrate(&cur.u), vegetation: grid.integrate(&cur.v) });
            let positions: Vec<f64> = peaks.iter().map(|p| p.position).collect();
            if let Some(tol) = opts.stationary_tol {
                let still = positions.len() == last_positions.len()
                    && positions.iter().zip(&last_positions).all(|(a, b)| grid.distance(*a, *b) < tol);
                if still && params.a.is_constant() {
                    break;
                }
            }
            last_positions = positions;
        }
        if cur.t >= next_snap - 1e-9 {
            next_snap += opts.snapshot_dt.unwrap();
            snapshots.push(cur.clone());
        }
    }
    Ok(PdeRun { grid: grid.clone(), snapshots, tracks: tracker.tracks, mass, final_state: cur, threshold, steps })
}

/// Builds the grid and initial state for a pulse configuration and runs the PDE.
pub fn simulate_config(
    config: &PulseConfig,
    params: &ModelParams,
    terrain: &Terrain,
    domain: &Domain,
    t_end: f64,
    opts: &PdeOptions,
) -> Result<PdeRun> {
    let grid = Grid::new(domain, params, &config.positions, opts.dx, opts.unbounded_margin)?;
    let init = build_initial(config, params, terrain, domain, &grid, opts.mode)?;
    simulate_pde(params, terrain, &grid, &init, t_end, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseComparison {
    pub ode_id: usize,
    pub pde_id: usize,
    pub max_error: f64,
    pub ode_death: Option<f64>,
    pub pde_death: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pulses: Vec<PulseComparison>,
    /// Largest position error over all pulses and common lifetimes.
    pub max_error: f64,
    /// `pde_death - ode_death` for pulses that die in both runs.
    pub death_offsets: Vec<f64>,
    pub ode_survivors: usize,
    pub pde_survivors: usize,
    pub survivors_agree: bool,
    /// Same initial pulses survive in both runs.
    pub survivor_sets_equal: bool,
    /// Largest difference of final positions among pulses surviving in both runs.
    pub final_error: f64,
}

/// Reduced trajectories per initial pulse: `(t, x)` samples and removal time.
pub fn ode_tracks(trace: &CascadeTrace) -> Vec<(Vec<(f64, f64)>, Option<f64>)> {
    let Some(first) = trace.segments.first().and_then(|s| s.trajectory.samples.first()) else { return Vec::new() };
    let n0 = first.positions.len();
    let mut out: Vec<(Vec<(f64, f64)>, Option<f64>)> = vec![(Vec::new(), None); n0];
    let mut ids: Vec<usize> = (0..n0).collect();
    for seg in &trace.segments {
        for s in &seg.trajectory.samples {
            if s.positions.len() != ids.len() {
                continue;
            }
            for (k, &id) in ids.iter().enumerate() {
                out[id].0.push((s.t, s.positions[k]));
            }
        }
        if let Some(ev) = &seg.event {
            for &k in &ev.removed {
                out[ids[k]].1 = Some(ev.t);
            }
            ids = ids.iter().enumerate().filter(|(k, _)| !ev.removed.contains(k)).map(|(_, id)| *id).collect();
        }
    }
    out
}

fn interp(samples: &[(f64, f64)], t: f64) -> Option<f64> {
    if samples.is_empty() || t < samples[0].0 - 1e-9 || t > samples[samples.len() - 1].0 + 1e-9 {
        return None;
    }
    let k = samples.partition_point(|s| s.0 < t);
    if k == 0 {
        return Some(samples[0].1);
    }
    if k >= samples.len() {
        return Some(samples[samples.len() - 1].1);
    }
    let (t0, x0) = samples[k - 1];
    let (t1, x1) = samples[k];
    if t1 == t0 {
        return Some(x1);
    }
    Some(x0 + (x1 - x0) * (t - t0) / (t1 - t0))
}

/// Matches PDE tracks present at the start to the initial reduced pulses and measures
/// the position discrepancy over their common lifetime.
pub fn compare(trace: &CascadeTrace, run: &PdeRun, gap_tol: f64) -> Result<Comparison> {
    let ode = ode_tracks(trace);
    let t0 = run.tracks.iter().map(|t| t.birth).fold(f64::INFINITY, f64::min);
    let initial: Vec<&PulseTrack> = run.tracks.iter().filter(|t| t.birth <= t0).collect();
    if initial.len() != ode.len() {
        return Err(Error::NoSolution(format!(
            "PDE starts with {} pulses, the reduced run with {}",
            initial.len(),
            ode.len()
        )));
    }
    let mut pulses = Vec::new();
    let mut death_offsets = Vec::new();
    let mut final_error: f64 = 0.0;
    let mut sets_equal = true;
    for (k, (samples, ode_death)) in ode.iter().enumerate() {
        let tr = initial[k];
        let start = samples.first().map(|s| s.1).unwrap_or(f64::NAN);
        if run.grid.distance(start, tr.positions[0]) > gap_tol {
            return Err(Error::NoSolution(format!("pulse {k} cannot be matched within {gap_tol}")));
        }
        let mut err: f64 = 0.0;
        for (i, &t) in tr.times.iter().enumerate() {
            if let Some(x) = interp(samples, t) {
                err = err.max(run.grid.distance(x, tr.positions[i]));
            }
        }
        if let (Some(a), Some(b)) = (ode_death, tr.death) {
            death_offsets.push(b - a);
        }
        if ode_death.is_none() != tr.death.is_none() {
            sets_equal = false;
        }
        if ode_death.is_none() && tr.death.is_none() {
            if let Some(&(_, x)) = samples.last() {
                final_error = final_error.max(run.grid.distance(x, tr.last_position()));
            }
        }
        pulses.push(PulseComparison { ode_id: k, pde_id: tr.id, max_error: err, ode_death: *ode_death, pde_death: tr.death });
    }
    let ode_survivors = ode.iter().filter(|o| o.1.is_none()).count();
    let pde_survivors = run.alive().len();
    Ok(Comparison {
        max_error: pulses.iter().map(|p| p.max_error).fold(0.0, f64::max),
        pulses,
        death_offsets,
        ode_survivors,
        pde_survivors,
        survivors_agree: ode_survivors == pde_survivors,
        survivor_sets_equal: sets_equal && ode_survivors == pde_survivors,
        final_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSpectrum {
    /// Scaled eigenvalues `lambda / m`, sorted by decreasing real part.
    pub eigenvalues: Vec<C64>,
}

impl LinearSpectrum {
    /// Leading eigenvalue among those with `|lambda_hat| >= cut`, skipping the small
    /// eigenvalues tied to pulse translation.
    pub fn dominant_large(&self, cut: f64) -> Option<C64> {
        self.eigenvalues.iter().find(|z| z.norm() >= cut).copied()
    }
}

/// Eigenvalues of the linearisation about a frozen state closest to `shift` (scaled),
/// from shift-and-invert Arnoldi with `krylov` vectors.
pub fn linearized_spectrum(
    grid: &Grid,
    state: &FieldState,
    params: &ModelParams,
    terrain: &Terrain,
    shift: f64,
    krylov: usize,
    seed: u64,
) -> Result<LinearSpectrum> {
    let n = grid.n;
    let dim = 2 * n;
    let m = params.m;
    let sigma = m * shift;
    let idx = fold_index(n, grid.periodic);
    let (lo, hi) = water_offdiag(grid, terrain);
    let dd = params.d * params.d / (grid.dx * grid.dx);
    let mut a = BandLu::zeros(dim, 5, 5);
    for i in 0..n {
        let (l, r) = grid.neighbours(i);
        let (_, _, hxx) = terrain.eval(grid.x(i));
        let (u, v) = (state.u[i], state.v[i]);
        let (ru, rv) = (2 * idx[i], 2 * idx[i] + 1);
        let (lu, lv) = (2 * idx[l], 2 * idx[l] + 1);
        let (qu, qv) = (2 * idx[r], 2 * idx[r] + 1);
        // Water row.
        a.add(ru, ru, -2.0 / (grid.dx * grid.dx) + hxx - 1.0 - v * v - sigma);
        a.add(ru, lu, lo[i]);
        a.add(ru, qu, hi[i]);
        a.add(ru, rv, -2.0 * u * v);
        // Vegetation row.
        let edge = !grid.periodic && (i == 0 || i == n - 1);
        let (cl, cr) = if edge {
            if i == 0 {
                (0.0, 2.0 * dd)
            } else {
                (2.0 * dd, 0.0)
            }
        } else {
            (dd, dd)
        };
        a.add(rv, rv, -2.0 * dd + 2.0 * u * v - m - sigma);
        a.add(rv, lv, cl);
        a.add(rv, qv, cr);
        a.add(rv, ru, v * v);
    }
    a.factor().map_err(|k| Error::NoSolution(format!("shifted operator singular at row {k}")))?;
    let k = krylov.min(dim - 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut v0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nrm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    v0.iter_mut().for_each(|x| *x /= nrm);
    q.push(v0);
    let mut h = DMatrix::<f64>::zeros(k + 1, k);
    let mut size = k;
    for j in 0..k {
        let mut w = q[j].clone();
        a.solve_in_place(&mut w);
        // Modified Gram-Schmidt, applied twice.
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c: f64 = qi.iter().zip(&w).map(|(x, y)| x * y).sum();
                h[(i, j)] += c;
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        h[(j + 1, j)] = beta;
        if beta < 1e-14 {
            size = j + 1;
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        q.push(w);
    }
    let hk = h.view((0, 0), (size, size)).into_owned();
    let theta = hk.complex_eigenvalues();
    let mut eig: Vec<C64> = theta
        .iter()
        .filter(|z| z.norm() > 1e-300)
        .map(|z| (C64::new(sigma, 0.0) + C64::new(1.0, 0.0) / C64::new(z.re, z.im)) / m)
        .collect();
    eig.sort_by(|x, y| y.re.total_cmp(&x.re));
    Ok(LinearSpectrum { eigenvalues: eig })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_resolves_pulses() {
        let p = ModelParams::new(0.5, 0.45, 0.01);
        let g = Grid::new(&Domain::Neumann { length: 10.0 }, &p, &[5.0], None, 40.0).unwrap();
        assert!(g.dx <= p.pulse_width() / 8.0 + 1e-15);
        assert!((g.x(g.n - 1) - 10.0).abs() < 1e-12);
        let gp = Grid::new(&Domain::Periodic { length: 10.0 }, &p, &[5.0], None, 40.0).unwrap();
        assert!((gp.length() - 10.0).abs() < 1e-12);
        let gu = Grid::new(&Domain::Unbounded, &p, &[0.0, 3.0], Some(0.01), 40.0).unwrap();
        assert!((gu.x0 + 40.0).abs() < 1e-12 && (gu.length() - 83.0).abs() < 1e-9);
    }

    #[test]
    fn bare_soil_is_a_fixed_point() {
        let p = ModelParams::new(0.5, 0.45, 0.01);
        let g = Grid::new(&Domain::Neumann { length: 2.0 }, &p, &[], Some(0.01), 40.0).unwrap();
        let init = FieldState { t: 0.0, a: 0.5, u: vec![0.5; g.n], v: vec![0.0; g.n] };
        let run = simulate_pde(&p, &Terrain::flat(), &g, &init, 5.0, &PdeOptions::default()).unwrap();
        assert!(run.final_state.u.iter().all(|u| (u - 0.5).abs() < 1e-13));
        assert!(run.final_state.v.iter().all(|v| *v == 0.0));
        assert!(run.tracks.is_empty());
    }

    #[test]
    fn extraction_finds_analytic_centre() {
        let p = ModelParams::new(0.5, 0.45, 0.01);
        let g = Grid::new(&Domain::Neumann { length: 10.0 }, &p, &[], Some(0.002), 40.0).unwrap();
        let v: Vec<f64> = g.xs().iter().map(|x| 1.0 / (((x - 4.3) / 0.03) as f64).cosh().powi(2)).collect();
        let peaks = extract_pulses(&g, &v, 0.01);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].position - 4.3).abs() < 1e-4);
        assert!(extract_pulses(&g, &vec![0.3; g.n], 0.01).is_empty());
        // Two maxima three cells apart merge.
        let mut w = vec![0.0; g.n];
        w[100] = 1.0;
        w[103] = 0.9;
        w[101] = 0.5;
        w[102] = 0.5;
        assert_eq!(extract_pulses(&g, &w, 0.01).len(), 1);
    }

    #[test]
    fn initial_pulse_height_and_water_dip() {
        let p = ModelParams::new(0.5, 0.45, 0.01);
        let dom = Domain::Neumann { length: 10.0 };
        let g = Grid::new(&dom, &p, &[5.0], None, 40.0).unwrap();
        let cfg = PulseConfig { t: 0.0, positions: vec![5.0], amplitudes: Some(vec![3.0]) };
        let s = build_initial(&cfg, &p, &Terrain::flat(), &dom, &g, Mode::A3p).unwrap();
        let vmax = s.v.iter().cloned().fold(0.0, f64::max);
        let expect = 0.5 / (2.0 * 0.45f64.sqrt() * 0.01);
        assert!((vmax - expect).abs() / expect < 1e-3);
        let i = s.v.iter().position(|v| *v == vmax).unwrap();
        assert!(s.u[i] < 0.05 * 0.5);
        let close = PulseConfig::new(vec![5.0, 5.0 + 5.0 * p.pulse_width()]);
        assert!(build_initial(&close, &p, &Terrain::flat(), &dom, &g, Mode::A3p).unwrap_err().is_validation());
        let empty = build_initial(&PulseConfig::new(vec![]), &p, &Terrain::flat(), &dom, &g, Mode::A3p).unwrap();
        assert!(empty.v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linearisation_of_bare_soil() {
        // About (a, 0) the spectrum is -1 - k^2 and -m - D^2 k^2.
        let p = ModelParams::new(0.5, 0.45, 0.2);
        let g = Grid::new(&Domain::Periodic { length: 2.0 }, &p, &[], Some(0.02), 40.0).unwrap();
        let s = FieldState { t: 0.0, a: 0.5, u: vec![0.5; g.n], v: vec![0.0; g.n] };
        let spec = linearized_spectrum(&g, &s, &p, &Terrain::flat(), 0.1, 20, 1).unwrap();
        let lead = spec.eigenvalues[0];
        assert!((lead.re + 1.0).abs() < 1e-8 && lead.im.abs() < 1e-8, "{lead}");
    }
}

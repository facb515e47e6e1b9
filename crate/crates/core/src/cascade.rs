//! Pulse dynamics with pulse removal.
//!
//! Positions follow the reduced ODE while the spectrum of the current configuration is
//! monitored. When an eigenvalue reaches the right half-plane (or the amplitudes stop
//! existing) the event is located by bisection on the dense output, pulses are removed
//! according to the shape of the critical eigenfunction, and integration restarts with
//! the survivors.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, ModelParams, PulseConfig, Terrain};
use crate::nlep::condition::m_critical;
use crate::nlep::spectrum::{
    csp_spectrum, dsp_spectrum, small_m_spectrum, Classification, CspOptions, SpectralContext, SpectrumInput, SpectrumMode,
    SpectrumReport,
};
use crate::ode::Dense;
use crate::outer::OuterMap;
use crate::pulse_ode::{Advance, OdeOptions, PulseIntegrator, PulseSystem, Sample, Termination, Trajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumChoice {
    Dsp,
    Csp,
    SmallM,
    /// Coupled spectrum for constant slopes with `m <= m_c(H)`, decoupled otherwise.
    #[default]
    Auto,
}

impl SpectrumChoice {
    pub fn resolve(self, params: &ModelParams, terrain: &Terrain) -> SpectrumMode {
        match self {
            SpectrumChoice::Dsp => SpectrumMode::Dsp,
            SpectrumChoice::Csp => SpectrumMode::Csp,
            SpectrumChoice::SmallM => SpectrumMode::SmallM,
            SpectrumChoice::Auto => match terrain.constant_slope() {
                Some(h) if params.m <= m_critical(h) => SpectrumMode::Csp,
                _ => SpectrumMode::Dsp,
            },
        }
    }
}

/// Which pulses survive a period doubling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// Remove the even-numbered pulses (counting from 1).
    #[default]
    Even,
    /// Remove the odd-numbered pulses.
    Odd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bifurcation {
    SaddleNode,
    Hopf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternClass {
    Irregular,
    Regular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cause {
    /// An eigenvalue crossed into the right half-plane.
    Spectrum,
    /// The amplitude equations lost their solution.
    Existence,
    /// Two pulses (or a pulse and a wall) came within the collision tolerance.
    Collision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Removal {
    Single { index: usize },
    PeriodDoubling { parity: Parity },
    FullCollapse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    pub t: f64,
    pub a: f64,
    pub cause: Cause,
    pub bifurcation: Bifurcation,
    pub pattern_class: PatternClass,
    pub removal: Removal,
    /// Indices (into the configuration before the event) of the removed pulses.
    pub removed: Vec<usize>,
    pub lambda: C64,
    pub ambiguity: bool,
    pub positions: Vec<f64>,
    pub k: Vec<f64>,
    /// Pulse with the largest `K_j`.
    pub max_k_pulse: usize,
}

impl CascadeEvent {
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.bifurcation {
            Bifurcation::SaddleNode => "saddle-node",
            Bifurcation::Hopf => "hopf",
        };
        let class = match self.pattern_class {
            PatternClass::Irregular => "irregular",
            PatternClass::Regular => "regular",
        };
        serde_json::json!({
            "t": self.t,
            "a": self.a,
            "type": kind,
            "class": class,
            "cause": self.cause,
            "removal": self.removal,
            "removed": self.removed,
            "lambda": {"re": self.lambda.re, "im": self.lambda.im},
            "ambiguity": self.ambiguity,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeSegment {
    pub trajectory: Trajectory,
    pub event: Option<CascadeEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Extinct,
    OdeFixedPoint,
    TEnd,
    /// A solver failed; the trace holds everything up to the failure.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub segments: Vec<CascadeSegment>,
    pub terminal: Terminal,
}

impl CascadeTrace {
    pub fn events(&self) -> impl Iterator<Item = &CascadeEvent> {
        self.segments.iter().filter_map(|s| s.event.as_ref())
    }

    pub fn final_sample(&self) -> Option<&Sample> {
        self.segments.last().and_then(|s| s.trajectory.last())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeOptions {
    pub ode: OdeOptions,
    pub spectrum: SpectrumChoice,
    pub parity: Parity,
    /// Relative spread of `K_j` below which a pattern counts as regular.
    pub regularity_tol: f64,
    /// Eigenvalues within this distance (relative to `max(|lambda_c|, 1)`) of the
    /// critical one count as clustered.
    pub cluster_tol: f64,
    /// Imaginary parts above this make a crossing a Hopf bifurcation.
    pub hopf_tol: f64,
    /// Event location accuracy relative to the segment's time span.
    pub dt_tol_rel: f64,
    /// A spectrum check is forced once `a` has changed by this fraction...
    pub check_da: f64,
    /// ...or a pulse has moved by this fraction of the smallest gap.
    pub check_dx: f64,
    /// Below this distance from the axis every accepted step is checked.
    pub near_critical: f64,
    pub max_events: usize,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions {
            ode: OdeOptions::default(),
            spectrum: SpectrumChoice::Auto,
            parity: Parity::Even,
            regularity_tol: 0.05,
            cluster_tol: 0.10,
            hopf_tol: 1e-3,
            dt_tol_rel: 1e-6,
            check_da: 0.01,
            check_dx: 0.05,
            near_critical: 0.05,
            max_events: 1000,
        }
    }
}

/// Spectrum evaluation for one model setup.
pub struct SpectrumEngine<'a> {
    pub ctx: &'a SpectralContext,
    pub mode: SpectrumMode,
    pub params: &'a ModelParams,
    pub terrain: &'a Terrain,
    pub domain: &'a Domain,
}

impl<'a> SpectrumEngine<'a> {
    pub fn report(&self, t: f64, positions: &[f64], u: &[f64], seeds: &[C64]) -> Result<SpectrumReport> {
        let input = SpectrumInput { positions, u, params: self.params, terrain: self.terrain, domain: self.domain, t };
        match self.mode {
            SpectrumMode::Dsp => dsp_spectrum(&input, self.ctx),
            SpectrumMode::Csp => csp_spectrum(&input, self.ctx, &CspOptions { seeds: seeds.to_vec(), ..Default::default() }),
            SpectrumMode::SmallM => small_m_spectrum(&input, self.ctx),
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, x)| if *x > acc.1 { (i, *x) } else { acc }).0
}

/// Regular when the `K_j` are nearly equal and the critical eigenvalue has company.
/// A pattern already regular keeps that label until the spread doubles the tolerance.
pub fn classify_pattern(report: &SpectrumReport, opts: &CascadeOptions, previous: Option<PatternClass>) -> PatternClass {
    let k = &report.k;
    if k.len() < 2 {
        return PatternClass::Irregular;
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    let spread = (k.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - k.iter().cloned().fold(f64::INFINITY, f64::min)) / mean;
    let tol = if previous == Some(PatternClass::Regular) { 2.0 * opts.regularity_tol } else { opts.regularity_tol };
    let Some(crit) = report.critical() else { return PatternClass::Irregular };
    let radius = opts.cluster_tol * crit.lambda.norm().max(1.0);
    let clustered = report.eigen.iter().filter(|e| (e.lambda - crit.lambda).norm() <= radius).count() >= 2;
    if spread < tol && clustered {
        PatternClass::Regular
    } else {
        PatternClass::Irregular
    }
}

fn parity_indices(n: usize, parity: Parity) -> Vec<usize> {
    // 1-based even numbers are 0-based odd indices.
    let start = match parity {
        Parity::Even => 1,
        Parity::Odd => 0,
    };
    (start..n).step_by(2).collect()
}

/// Removal decision from the spectrum at the event.
pub fn select_removal(report: &SpectrumReport, class: PatternClass, parity: Parity) -> (Removal, Vec<usize>, bool) {
    let n = report.k.len();
    let by_k = argmax(&report.k);
    if class == PatternClass::Irregular || n < 2 {
        return (Removal::Single { index: by_k }, vec![by_k], false);
    }
    let signs: Vec<i8> = report.critical().map(|e| e.signs.clone()).unwrap_or_default();
    let nonzero: Vec<i8> = signs.iter().cloned().filter(|s| *s != 0).collect();
    if !nonzero.is_empty() && nonzero.iter().all(|s| *s == nonzero[0]) {
        return (Removal::FullCollapse, (0..n).collect(), false);
    }
    let flips = nonzero.windows(2).filter(|w| w[0] != w[1]).count();
    if nonzero.len() >= 2 && 2 * flips > nonzero.len() - 1 {
        return (Removal::PeriodDoubling { parity }, parity_indices(n, parity), true);
    }
    // Neither pattern: remove the pulse carrying the largest weight and flag it.
    let weights: Vec<f64> = report
        .critical()
        .map(|e| e.rho.iter().map(|r| r.norm()).collect())
        .unwrap_or_else(|| report.k.clone());
    let j = argmax(&weights);
    (Removal::Single { index: j }, vec![j], true)
}

fn bifurcation_of(lambda: C64, hopf_tol: f64) -> Bifurcation {
    if lambda.im.abs() > hopf_tol {
        Bifurcation::Hopf
    } else {
        Bifurcation::SaddleNode
    }
}

/// Locates the first time in `[t_lo, t_hi]` at which `unstable(t)` holds, given that it
/// fails at `t_lo` and holds at `t_hi`.
pub fn detect_crossing<F: FnMut(f64) -> Result<bool>>(t_lo: f64, t_hi: f64, dt_tol: f64, mut unstable: F) -> Result<f64> {
    let (mut a, mut b) = (t_lo, t_hi);
    while b - a > dt_tol {
        let c = 0.5 * (a + b);
        if unstable(c)? {
            b = c;
        } else {
            a = c;
        }
    }
    Ok(b)
}

struct Check {
    t: f64,
    a: f64,
    positions: Vec<f64>,
    report: Option<SpectrumReport>,
}

impl Check {
    fn growth(&self) -> f64 {
        self.report.as_ref().map_or(f64::INFINITY, |r| r.max_re())
    }
}

/// State at time `t` from the dense outputs recorded since the last check.
fn state_at(denses: &[Dense], t: f64) -> Option<Vec<f64>> {
    denses.iter().find(|d| t >= d.t0 - 1e-14 && t <= d.t1() + 1e-14).map(|d| d.eval(t))
}

/// Leading-order `K_j` when the amplitude equations have no solution.
fn fallback_report(positions: &[f64], params: &ModelParams, terrain: &Terrain, domain: &Domain, t: f64) -> Result<SpectrumReport> {
    let map = OuterMap::build(positions, domain, terrain, &Default::default())?;
    let u = crate::amplitude::amplitudes_leading(&map)?;
    let ks = params.k_scale(t);
    Ok(SpectrumReport {
        mode: SpectrumMode::Dsp,
        eigen: Vec::new(),
        k: u.iter().map(|v| ks * v * v).collect(),
        k_star: Vec::new(),
        classification: Classification::SaddleNode,
        degenerate: false,
        c_star: None,
    })
}

/// Runs the reduced dynamics with pulse removal until `t_end`, extinction or a stable
/// fixed point.
pub fn run_cascade(
    initial: &PulseConfig,
    params: &ModelParams,
    terrain: &Terrain,
    domain: &Domain,
    t_end: f64,
    opts: &CascadeOptions,
    ctx: &SpectralContext,
) -> Result<CascadeTrace> {
    params.validate()?;
    domain.validate()?;
    terrain.validate(domain)?;
    initial.validate(domain)?;
    if !(t_end > initial.t) {
        return Err(Error::invalid("t_end must exceed the initial time"));
    }
    let engine = SpectrumEngine { ctx, mode: opts.spectrum.resolve(params, terrain), params, terrain, domain };
    let constant_a = params.a.is_constant();
    let mut config = initial.clone();
    let mut segments = Vec::new();
    let mut previous_class = None;
    let mut terminal = Terminal::TEnd;
    for _ in 0..=opts.max_events {
        if config.is_empty() {
            terminal = Terminal::Extinct;
            break;
        }
        match run_segment(&config, &engine, t_end, opts, constant_a, previous_class) {
            Ok((trajectory, outcome)) => match outcome {
                SegmentEnd::Event(ev) => {
                    let keep: Vec<f64> = ev
                        .positions
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !ev.removed.contains(i))
                        .map(|(_, p)| *p)
                        .collect();
                    previous_class = Some(ev.pattern_class);
                    config = PulseConfig::at(ev.t, keep);
                    segments.push(CascadeSegment { trajectory, event: Some(ev) });
                }
                SegmentEnd::Done(t) => {
                    segments.push(CascadeSegment { trajectory, event: None });
                    terminal = t;
                    break;
                }
            },
            Err(e) if e.is_validation() => return Err(e),
            Err(e) => {
                terminal = Terminal::Failed(e.to_string());
                break;
            }
        }
    }
    Ok(CascadeTrace { segments, terminal })
}

enum SegmentEnd {
    Event(CascadeEvent),
    Done(Terminal),
}

fn run_segment(
    config: &PulseConfig,
    engine: &SpectrumEngine,
    t_end: f64,
    opts: &CascadeOptions,
    constant_a: bool,
    previous_class: Option<PatternClass>,
) -> Result<(Trajectory, SegmentEnd)> {
    let params = engine.params;
    let mut sys = PulseSystem::new(params, engine.terrain, engine.domain, opts.ode.mode);
    sys.newton = opts.ode.newton;
    let t0 = config.t;
    let dt_tol = opts.dt_tol_rel * (t_end - t0);
    let mut samples = Vec::new();

    let mut integ = match PulseIntegrator::new(sys, config, &opts.ode) {
        Ok(i) => i,
        Err(e) if e.is_validation() => return Err(e),
        Err(_) => {
            // No amplitudes for the configuration itself: immediate existence event.
            let ev = event_from(engine, opts, config.t, &config.positions, None, Cause::Existence, previous_class)?;
            let s = Sample { t: config.t, a: params.a(config.t), positions: config.positions.clone(), u: Vec::new() };
            return Ok((Trajectory { samples: vec![s], termination: Termination::Event }, SegmentEnd::Event(ev)));
        }
    };
    samples.push(integ.sample());
    let first = check(engine, &integ, integ.t(), integ.positions().to_vec(), &[])?;
    if first.growth() >= 0.0 {
        let ev = event_from(engine, opts, first.t, &first.positions, first.report, Cause::Spectrum, previous_class)?;
        return Ok((Trajectory { samples, termination: Termination::Event }, SegmentEnd::Event(ev)));
    }
    let mut last = first;
    let mut denses: Vec<Dense> = Vec::new();
    let finish = |samples: Vec<Sample>, termination| Trajectory { samples, termination };
    loop {
        let adv = integ.advance(t_end)?;
        match adv {
            Advance::Step(d) => {
                denses.push(d);
                samples.push(integ.sample());
            }
            Advance::Collision => {
                samples.push(integ.sample());
                let pos = integ.positions().to_vec();
                let report = engine.report(integ.t(), &pos, &integ.u, &seeds(&last)).ok();
                let ev = event_from(engine, opts, integ.t(), &pos, report, Cause::Collision, previous_class)?;
                return Ok((finish(samples, Termination::Collision), SegmentEnd::Event(ev)));
            }
            Advance::ExistenceLost | Advance::StepUnderflow => {
                let pos = integ.positions().to_vec();
                let report = engine.report(integ.t(), &pos, &integ.u, &seeds(&last)).ok();
                let ev = event_from(engine, opts, integ.t(), &pos, report, Cause::Existence, previous_class)?;
                return Ok((finish(samples, Termination::ExistenceLost), SegmentEnd::Event(ev)));
            }
        }
        let t = integ.t();
        let pos = integ.positions().to_vec();
        let a = params.a(t);
        let gap = crate::pulse_ode::min_spacing(&pos, engine.domain);
        let moved = pos.iter().zip(&last.positions).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let due = last.growth() > -opts.near_critical
            || (a - last.a).abs() > opts.check_da * last.a
            || moved > opts.check_dx * gap
            || t >= t_end;
        if due {
            let now = check(engine, &integ, t, pos.clone(), &seeds(&last))?;
            if now.growth() >= 0.0 {
                // Bisection on the dense output between the two checks.
                let mut reports: Vec<Check> = Vec::new();
                let t_event = detect_crossing(last.t, t, dt_tol, |tc| {
                    let Some(y) = state_at(&denses, tc) else { return Ok(true) };
                    let c = check(engine, &integ, tc, y, &seeds(&last))?;
                    let unstable = c.growth() >= 0.0;
                    reports.push(c);
                    Ok(unstable)
                })?;
                let at = reports.into_iter().find(|c| c.t == t_event).unwrap_or(now);
                let (cause, report) = match at.report {
                    Some(r) => (Cause::Spectrum, Some(r)),
                    None => (Cause::Existence, None),
                };
                let ev = event_from(engine, opts, at.t, &at.positions, report, cause, previous_class)?;
                samples.retain(|s| s.t <= at.t);
                let u = integ.amplitudes_at(at.t, &at.positions).unwrap_or_default();
                samples.push(Sample { t: at.t, a: params.a(at.t), positions: at.positions.clone(), u });
                return Ok((finish(samples, Termination::Event), SegmentEnd::Event(ev)));
            }
            last = now;
            denses.clear();
        }
        if t >= t_end {
            return Ok((finish(samples, Termination::TEnd), SegmentEnd::Done(Terminal::TEnd)));
        }
        if constant_a {
            let v = integ.velocity()?;
            if v.dpdt.iter().all(|x| x.abs() < opts.ode.fixed_point_tol) {
                return Ok((finish(samples, Termination::OdeFixedPoint), SegmentEnd::Done(Terminal::OdeFixedPoint)));
            }
        }
    }
}

fn seeds(c: &Check) -> Vec<C64> {
    c.report.as_ref().map(|r| r.eigen.iter().map(|e| e.lambda).collect()).unwrap_or_default()
}

fn check(engine: &SpectrumEngine, integ: &PulseIntegrator, t: f64, positions: Vec<f64>, seeds: &[C64]) -> Result<Check> {
    let a = engine.params.a(t);
    let report = match integ.amplitudes_at(t, &positions) {
        Ok(u) => Some(engine.report(t, &positions, &u, seeds)?),
        Err(e) if e.is_validation() => return Err(e),
        Err(_) => None,
    };
    Ok(Check { t, a, positions, report })
}

fn event_from(
    engine: &SpectrumEngine,
    opts: &CascadeOptions,
    t: f64,
    positions: &[f64],
    report: Option<SpectrumReport>,
    cause: Cause,
    previous_class: Option<PatternClass>,
) -> Result<CascadeEvent> {
    let report = match report {
        Some(r) => r,
        None => fallback_report(positions, engine.params, engine.terrain, engine.domain, t)?,
    };
    let lambda = report.critical().map_or(C64::new(0.0, 0.0), |e| e.lambda);
    let class = classify_pattern(&report, opts, previous_class);
    let (removal, mut removed, ambiguity) = match cause {
        Cause::Collision => {
            // Of the closest pair, drop the pulse with the larger K.
            let n = positions.len();
            let j = if n == 1 {
                0
            } else {
                let (i, _) = (0..n - 1)
                    .map(|i| (i, positions[i + 1] - positions[i]))
                    .fold((0, f64::INFINITY), |acc, (i, g)| if g < acc.1 { (i, g) } else { acc });
                if report.k[i] >= report.k[i + 1] {
                    i
                } else {
                    i + 1
                }
            };
            (Removal::Single { index: j }, vec![j], false)
        }
        _ => select_removal(&report, class, opts.parity),
    };
    removed.sort_unstable();
    removed.dedup();
    Ok(CascadeEvent {
        t,
        a: engine.params.a(t),
        cause,
        bifurcation: bifurcation_of(lambda, opts.hopf_tol),
        pattern_class: class,
        removal,
        removed,
        lambda,
        ambiguity,
        positions: positions.to_vec(),
        max_k_pulse: argmax(&report.k),
        k: report.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlep::spectrum::Eigen;

    fn report(k: Vec<f64>, eigen: Vec<(C64, Vec<i8>)>) -> SpectrumReport {
        let n = k.len();
        SpectrumReport {
            mode: SpectrumMode::Csp,
            eigen: eigen
                .into_iter()
                .map(|(lambda, signs)| Eigen {
                    lambda,
                    rho: signs.iter().map(|s| C64::new(*s as f64, 0.0)).collect(),
                    s1: vec![],
                    s2: vec![],
                    signs,
                    pulse: None,
                    ill_conditioned: false,
                })
                .collect(),
            k_star: vec![2.0; n],
            k,
            classification: Classification::SaddleNode,
            degenerate: false,
            c_star: None,
        }
    }

    #[test]
    fn irregular_removes_the_largest_k() {
        let r = report(vec![1.8, 2.4, 1.9], vec![(C64::new(0.01, 0.0), vec![0, 1, 0])]);
        let opts = CascadeOptions::default();
        let class = classify_pattern(&r, &opts, None);
        assert_eq!(class, PatternClass::Irregular);
        let (removal, removed, amb) = select_removal(&r, class, Parity::Even);
        assert_eq!(removal, Removal::Single { index: 1 });
        assert_eq!(removed, vec![1]);
        assert!(!amb);
    }

    #[test]
    fn regular_alternating_is_period_doubling() {
        let alt: Vec<i8> = (0..10).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let r = report(vec![2.0; 10], vec![(C64::new(0.001, 0.0), alt), (C64::new(-0.02, 0.0), vec![1; 10])]);
        let opts = CascadeOptions::default();
        let class = classify_pattern(&r, &opts, None);
        assert_eq!(class, PatternClass::Regular);
        let (removal, removed, amb) = select_removal(&r, class, Parity::Even);
        assert_eq!(removal, Removal::PeriodDoubling { parity: Parity::Even });
        assert_eq!(removed, vec![1, 3, 5, 7, 9]);
        assert!(amb);
        let (_, removed, _) = select_removal(&r, class, Parity::Odd);
        assert_eq!(removed, vec![0, 2, 4, 6, 8]);
        assert_eq!(parity_indices(5, Parity::Even), vec![1, 3]);
        assert_eq!(parity_indices(5, Parity::Odd), vec![0, 2, 4]);
    }

    #[test]
    fn regular_single_signed_is_full_collapse() {
        let r = report(vec![2.0; 4], vec![(C64::new(0.0, 0.4), vec![1; 4]), (C64::new(0.0, -0.4), vec![1; 4]), (C64::new(-0.03, 0.38), vec![1, 1, -1, -1])]);
        let class = classify_pattern(&r, &CascadeOptions::default(), None);
        assert_eq!(class, PatternClass::Regular);
        let (removal, removed, _) = select_removal(&r, class, Parity::Even);
        assert_eq!(removal, Removal::FullCollapse);
        assert_eq!(removed, vec![0, 1, 2, 3]);
        assert_eq!(bifurcation_of(C64::new(0.0, 0.4), 1e-3), Bifurcation::Hopf);
    }

    #[test]
    fn spread_hysteresis() {
        let r = report(vec![2.0, 2.14], vec![(C64::new(0.0, 0.0), vec![1, -1]), (C64::new(-0.02, 0.0), vec![1, 1])]);
        let opts = CascadeOptions::default();
        assert_eq!(classify_pattern(&r, &opts, None), PatternClass::Irregular);
        assert_eq!(classify_pattern(&r, &opts, Some(PatternClass::Regular)), PatternClass::Regular);
    }

    #[test]
    fn bisection_contract() {
        let t = detect_crossing(0.0, 1.0, 1e-9, |t| Ok(t > 0.3)).unwrap();
        assert!(t >= 0.3 && t - 0.3 < 1e-9);
    }
}

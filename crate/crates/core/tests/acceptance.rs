//! Acceptance suite: one PASS/FAIL line per criterion. Criteria run concurrently and
//! are reported in order; the process fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use kpulse::Error as KpError;
use kpulse::amplitude::{homoclinic_fold, solve_amplitudes, Mode, NewtonOptions};
use kpulse::cascade::{run_cascade, Bifurcation, CascadeOptions, CascadeTrace, Removal, SpectrumEngine, Terminal};
use kpulse::model::{Domain, ModelParams, PulseConfig, Schedule, Terrain};
use kpulse::nlep::condition::{k_star, m_critical, Condition, Spectral};
use kpulse::nlep::inner::{InnerOptions, InnerSolver};
use kpulse::nlep::spectrum::{csp_spectrum, CspOptions, SpectralContext, SpectrumInput, SpectrumMode};
use kpulse::outer::{r_minus, r_plus, s_of, OuterMap, OuterOptions};
use kpulse::pde::{compare, linearized_spectrum, simulate_config, PdeOptions};
use kpulse::pulse_ode::{
    colonization_wavelength, fixed_point, homoclinic_speed, integrate, regular_speed, velocity, FixedPointOptions, OdeOptions,
    PulseSystem, Termination,
};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRng, TestRunner};

type Outcome = Result<String, String>;

fn rel(x: f64, target: f64) -> f64 {
    ((x - target) / target).abs()
}

/// Collects named checks; the criterion passes when all of them hold.
struct Checks {
    lines: Vec<String>,
    ok: bool,
}

impl Checks {
    fn new() -> Self {
        Checks { lines: Vec::new(), ok: true }
    }

    fn check(&mut self, cond: bool, msg: impl Into<String>) {
        let msg = msg.into();
        self.lines.push(if cond { msg } else { format!("[x] {msg}") });
        self.ok &= cond;
    }

    fn finish(self) -> Outcome {
        let text = self.lines.join("; ");
        if self.ok {
            Ok(text)
        } else {
            Err(text)
        }
    }
}

fn cascade(positions: Vec<f64>, a: Schedule, m: f64, terrain: Terrain, domain: Domain, t_end: f64, opts: CascadeOptions) -> CascadeTrace {
    let params = ModelParams::with_schedule(a, m, 0.01);
    run_cascade(&PulseConfig::new(positions), &params, &terrain, &domain, t_end, &opts, &SpectralContext::default()).expect("cascade runs")
}

fn first_event_opts() -> CascadeOptions {
    CascadeOptions { max_events: 1, ..Default::default() }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let inner = InnerSolver::default();
    let r = |x: f64| inner.r_numeric(C64::new(x, 0.0)).r.re;
    let mut c = Checks::new();
    let r0 = r(0.0);
    let rm1 = r(-1.0);
    let dr0 = (r(1e-4) - r(-1e-4)) / 2e-4;
    c.check((r0 - 6.0).abs() < 1e-4, format!("R(0)={r0:.7}"));
    c.check((rm1 - 3.0).abs() < 1e-3, format!("R(-1)={rm1:.6}"));
    c.check((dr0 - 4.5).abs() < 1e-3, format!("R'(0)={dr0:.6}"));
    // |R| and the composed right side both blow up like 1/distance at the poles.
    let g = Spectral::new(Condition::weak(0.45, 0.0), &inner);
    let dists = [1e-2, 1e-3, 1e-4];
    for (pole, side) in [(1.25, -1.0), (-0.75, 1.0)] {
        let at = |d: f64| C64::new(pole + side * d, 0.0);
        let r: Vec<f64> = dists.iter().map(|d| inner.r_numeric(at(*d)).r.norm()).collect();
        let gv: Vec<f64> = dists.iter().map(|d| g.g(at(*d)).0.norm()).collect();
        let grows = |v: &[f64]| v.windows(2).all(|w| w[1] > 5.0 * w[0]);
        c.check(grows(&r) && grows(&gv), format!("pole {pole}: |R| {:.2e} -> {:.2e}, |G| {:.2e} -> {:.2e}", r[0], r[2], gv[0], gv[2]));
    }
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 5.0, format!("{secs:.2}s"));
    c.finish()
}

fn criterion_2() -> Outcome {
    let inner = InnerSolver::default();
    let mut c = Checks::new();
    let landing = |m: f64, h: f64| Spectral::new(Condition::weak(m, h), &inner).landing().map(|l| l.lambda);
    for (h, lo, hi) in [(0.0, 2.95, 3.05), (1.0, 0.98 * 3.75, 1.02 * 3.75), (2.0, 0.98 * 6.0, 1.02 * 6.0)] {
        match (landing(lo, h), landing(hi, h)) {
            (Ok(a), Ok(b)) => c.check(a < 0.0 && b > 0.0, format!("H={h}: landing {a:.2e} at m={lo:.3}, {b:.2e} at m={hi:.3}")),
            (a, b) => c.check(false, format!("H={h}: landing failed {a:?} {b:?}")),
        }
    }
    c.finish()
}

fn criterion_3() -> Outcome {
    let inner = InnerSolver::default();
    let mut c = Checks::new();
    let kc = k_star(m_critical(0.0), 0.0, &inner).map(|k| k.k).unwrap_or(f64::NAN);
    c.check((kc - 27f64.sqrt()).abs() < 1e-6, format!("K*(m_c,0)={kc:.9}"));
    let kc_num = Spectral::new(Condition::weak(m_critical(0.0), 0.0), &inner).k_star().map(|k| k.k).unwrap_or(f64::NAN);
    c.check((kc_num - 27f64.sqrt()).abs() < 1e-6, format!("numerical K*(m_c,0)={kc_num:.9}"));
    let k045 = k_star(0.45, 0.0, &inner).map(|k| k.k).unwrap_or(f64::NAN);
    c.check((k045 - 2.01246).abs() < 1e-5, format!("K*(0.45,0)={k045:.7}"));
    let k10 = k_star(10.0, 0.0, &inner).map(|k| k.k).unwrap_or(f64::NAN);
    let fine = InnerSolver::new(InnerOptions { intervals: 8000, half_width: 40.0, ..Default::default() });
    let k10_fine = k_star(10.0, 0.0, &fine).map(|k| k.k).unwrap_or(f64::NAN);
    c.check(k10 < 9.4868, format!("K*(10,0)={k10:.6}"));
    c.check((k10 - k10_fine).abs() < 1e-4, format!("refined {k10_fine:.6}"));
    c.finish()
}

/// Largest `delta` for which the amplitude Newton still converges for a single pulse.
fn newton_boundary(h: f64) -> f64 {
    let outer = OuterMap::build(&[0.0], &Domain::Unbounded, &Terrain::slope(h), &OuterOptions::default()).unwrap();
    let ok = |d: f64| solve_amplitudes(&outer, d, None, &NewtonOptions::default()).is_ok();
    let (mut lo, mut hi) = (0.5 * homoclinic_fold(h), 2.0 * homoclinic_fold(h));
    assert!(ok(lo) && !ok(hi));
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn criterion_4() -> Outcome {
    let mut c = Checks::new();
    let closed = homoclinic_fold(0.0);
    c.check((closed - 1.0 / 12.0).abs() < 1e-10, format!("closed form {closed:.12}"));
    let newton = newton_boundary(0.0);
    c.check((newton - 1.0 / 12.0).abs() < 1e-4, format!("Newton boundary {newton:.6}"));
    for h in [1.0, 2.0] {
        let exact = (h * h + 4.0f64).sqrt() / 24.0;
        let closed = homoclinic_fold(h);
        let newton = newton_boundary(h);
        c.check((closed - exact).abs() < 1e-6 && (newton - exact).abs() < 1e-4, format!("H={h}: {closed:.8} / Newton {newton:.6}"));
    }
    c.finish()
}

fn criterion_5() -> Outcome {
    let mut c = Checks::new();
    let dom = Domain::Neumann { length: 10.0 };
    let sn = cascade(vec![5.0], Schedule::Linear { a0: 0.3, rate: -1e-4 }, 0.45, Terrain::flat(), dom, 2000.0, first_event_opts());
    match sn.events().next() {
        Some(e) => c.check(
            e.bifurcation == Bifurcation::SaddleNode && rel(e.a, 0.19032) < 0.05,
            format!("m=0.45: {:?} at a={:.5}", e.bifurcation, e.a),
        ),
        None => c.check(false, "m=0.45: no event"),
    }
    let hopf = cascade(vec![5.0], Schedule::Linear { a0: 3.0, rate: -1e-3 }, 10.0, Terrain::flat(), dom, 2000.0, first_event_opts());
    match hopf.events().next() {
        Some(e) => c.check(
            e.bifurcation == Bifurcation::Hopf && rel(e.a, 2.1065) < 0.05 && e.lambda.im.abs() > 0.1,
            format!("m=10: {:?} at a={:.5}, lambda={:.4}{:+.4}i", e.bifurcation, e.a, e.lambda.re, e.lambda.im),
        ),
        None => c.check(false, "m=10: no event"),
    }
    c.finish()
}

fn criterion_6() -> Outcome {
    let mut c = Checks::new();
    let dom = Domain::Neumann { length: 10.0 };
    let pos = vec![1.0, 3.0, 4.0, 5.6, 8.0];
    for (m, a0, rate, target) in [(0.45, 0.5, -5e-4, 0.296), (10.0, 5.0, -5e-3, 2.96)] {
        let tr = cascade(pos.clone(), Schedule::Linear { a0, rate }, m, Terrain::flat(), dom, 1000.0, first_event_opts());
        let Some(e) = tr.events().next() else {
            c.check(false, format!("m={m}: no event"));
            continue;
        };
        // The pulse with the lowest V peak carries the largest u.
        let lowest_v = e.k.iter().enumerate().fold(0, |b, (i, k)| if *k > e.k[b] { i } else { b });
        let pulse = e.removed.first().copied();
        c.check(
            rel(e.a, target) < 0.10 && pulse == Some(2) && lowest_v == 2,
            format!("m={m}: a={:.4}, removed pulse {}", e.a, pulse.map_or(0, |p| p + 1)),
        );
        if m == 10.0 {
            c.check(
                e.bifurcation == Bifurcation::Hopf && rel(e.lambda.im.abs(), 0.472) < 0.15,
                format!("m=10: Im lambda={:.4}", e.lambda.im.abs()),
            );
        }
    }
    let p = ModelParams::new(0.19187, 0.45, 0.01);
    let dom = Domain::Periodic { length: 10.0 };
    let positions = [2.5, 7.5];
    let flat = Terrain::flat();
    let sys = PulseSystem::new(&p, &flat, &dom, Mode::A3p);
    let (_, u) = sys.amplitudes(&positions, 0.0, None).expect("amplitudes exist");
    let input = SpectrumInput { positions: &positions, u: &u, params: &p, terrain: &Terrain::flat(), domain: &dom, t: 0.0 };
    let report = csp_spectrum(&input, &SpectralContext::default(), &CspOptions::default()).expect("csp");
    let real: Vec<_> = report.eigen.iter().filter(|e| e.lambda.im.abs() < 1e-8).take(2).collect();
    let in_phase = real.iter().find(|e| e.signs[0] == e.signs[1]);
    let alternating = real.iter().find(|e| e.signs[0] == -e.signs[1]);
    match (in_phase, alternating) {
        (Some(a), Some(b)) => c.check(
            rel(a.lambda.re, -0.087) < 0.15 && rel(b.lambda.re, -0.063) < 0.15,
            format!("2-pulse CSP: in-phase {:.4}, alternating {:.4}", a.lambda.re, b.lambda.re),
        ),
        _ => c.check(false, format!("2-pulse CSP: sign patterns not found in {:?}", real.iter().map(|e| (e.lambda, &e.signs)).collect::<Vec<_>>())),
    }
    c.finish()
}

fn criterion_7() -> Outcome {
    let mut c = Checks::new();
    let dom = Domain::Neumann { length: 20.0 };
    let pos: Vec<f64> = (0..10).map(|k| 2.0 * k as f64 + 1.0).collect();
    let schedule = Schedule::Linear { a0: 0.3, rate: -1e-4 };
    let tr = cascade(pos, schedule.clone(), 0.45, Terrain::flat(), dom, 3000.0, first_event_opts());
    let Some(e) = tr.events().next() else {
        c.check(false, "no event");
        return c.finish();
    };
    c.check(rel(e.a, 0.226) < 0.10, format!("a={:.5}", e.a));
    c.check(matches!(e.removal, Removal::PeriodDoubling { .. }), format!("removal {:?} {:?}", e.removal, e.removed));
    c.check(e.bifurcation == Bifurcation::SaddleNode && e.lambda.im.abs() < 1e-3, format!("lambda={:.2e}{:+.2e}i", e.lambda.re, e.lambda.im));
    // Critical eigenfunction at the event configuration.
    let params = ModelParams::with_schedule(schedule, 0.45, 0.01);
    let flat = Terrain::flat();
    let sys = PulseSystem::new(&params, &flat, &dom, Mode::A3p);
    let ctx = SpectralContext::default();
    let engine = SpectrumEngine { ctx: &ctx, mode: SpectrumMode::Csp, params: &params, terrain: &Terrain::flat(), domain: &dom };
    let signs = sys
        .amplitudes(&e.positions, e.t, None)
        .and_then(|(_, u)| engine.report(e.t, &e.positions, &u, &[]))
        .map(|r| r.critical().map(|x| x.signs.clone()).unwrap_or_default());
    match signs {
        Ok(s) => c.check(
            !s.is_empty() && s.iter().all(|x| *x != 0) && s.windows(2).all(|w| w[0] == -w[1]),
            format!("signs {s:?}"),
        ),
        Err(err) => c.check(false, format!("spectrum at event: {err}")),
    }
    c.finish()
}

fn criterion_8() -> Outcome {
    let mut c = Checks::new();
    let dom = Domain::Neumann { length: 10.0 };
    let params = ModelParams::new(0.5, 0.45, 0.01);
    let terrain = Terrain::slope(1.0);
    let init = PulseConfig::regular(5, 10.0);
    let mut opts = CascadeOptions::default();
    opts.ode.fixed_point_tol = 1e-8;
    opts.ode.sample_dt = Some(10.0);
    let trace = run_cascade(&init, &params, &terrain, &dom, 1e6, &opts, &SpectralContext::default()).expect("cascade runs");
    let events: Vec<_> = trace.events().collect();
    let singles = events.iter().all(|e| matches!(e.removal, Removal::Single { .. }) && e.removed.len() == 1);
    c.check(events.len() == 3 && singles, format!("{} single-pulse events at t={:.0?}", events.len(), events.iter().map(|e| e.t).collect::<Vec<_>>()));
    let fin = trace.final_sample().expect("final state");
    c.check(trace.terminal == Terminal::OdeFixedPoint && fin.positions.len() == 2, format!("terminal {:?} at {:.4?}", trace.terminal, fin.positions));
    let pde = PdeOptions { dt: 0.5, track_dt: 10.0, ..Default::default() };
    let run = simulate_config(&init, &params, &terrain, &dom, 60000.0, &pde).expect("pde runs");
    let alive: Vec<f64> = run.alive().iter().map(|t| t.last_position()).collect();
    let err = if alive.len() == fin.positions.len() {
        alive.iter().zip(&fin.positions).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    c.check(alive.len() == 2 && err < 0.2, format!("PDE survivors {alive:.4?}, max offset {err:.3}"));
    c.finish()
}

/// Largest deviation of the gaps from `L / N`, relative to `L / N` (Neumann layout).
fn spacing_deviation(p: &[f64], length: f64) -> f64 {
    let n = p.len();
    let s = length / n as f64;
    (0..n).map(|j| (p[j] - (j as f64 + 0.5) * s).abs()).fold(0.0, f64::max) / s
}

fn criterion_9() -> Outcome {
    let mut c = Checks::new();
    let length = 10.0;
    let dom = Domain::Neumann { length };
    let params = ModelParams::new(0.5, 0.45, 0.01);
    let init = PulseConfig::new(vec![0.8, 1.9, 3.5, 4.4, 6.1, 7.6, 9.0]);
    let t_end = 40000.0;
    let mut opts = CascadeOptions::default();
    opts.ode.sample_dt = Some(10.0);
    let trace = run_cascade(&init, &params, &Terrain::flat(), &dom, t_end, &opts, &SpectralContext::default()).expect("cascade runs");
    c.check(trace.events().count() == 0, format!("{} removals", trace.events().count()));
    let pde = PdeOptions { dt: 0.5, track_dt: 10.0, ..Default::default() };
    let run = simulate_config(&init, &params, &Terrain::flat(), &dom, t_end, &pde).expect("pde runs");
    match compare(&trace, &run, 0.25) {
        Ok(cmp) => c.check(cmp.max_error < 0.02 * length, format!("max discrepancy {:.4} ({:.2}% of L)", cmp.max_error, 100.0 * cmp.max_error / length)),
        Err(e) => c.check(false, format!("comparison failed: {e}")),
    }
    let ode_dev = trace.final_sample().map_or(f64::INFINITY, |s| spacing_deviation(&s.positions, length));
    let pde_pos: Vec<f64> = run.alive().iter().map(|t| t.last_position()).collect();
    let pde_dev = if pde_pos.len() == 7 { spacing_deviation(&pde_pos, length) } else { f64::INFINITY };
    c.check(ode_dev < 0.02 && pde_dev < 0.02, format!("spacing deviation ODE {:.2}%, PDE {:.2}%", 100.0 * ode_dev, 100.0 * pde_dev));
    c.finish()
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, max_shrink_iters: 32, ..Config::default() };
    let rng = TestRng::deterministic_rng(cfg.rng_algorithm);
    TestRunner::new_with_rng(cfg, rng)
}

/// Ordered positions in `(0, length)` with gaps of at least `min_gap`, built from
/// proportions.
fn spread_positions(weights: &[f64], length: f64, min_gap: f64) -> Vec<f64> {
    let n = weights.len();
    let free = length - min_gap * n as f64;
    let total: f64 = weights.iter().sum();
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for (j, w) in weights.iter().enumerate() {
        let step = min_gap + free * w / total;
        x += if j == 0 { 0.5 * step } else { step };
        out.push(x);
    }
    out
}

fn criterion_10() -> Outcome {
    let mut c = Checks::new();
    let mut report = |name: &str, r: Result<(), String>| match r {
        Ok(()) => c.check(true, format!("{name}: 100 cases")),
        Err(e) => c.check(false, format!("{name}: {e}")),
    };

    // Neumann: unique fixed point from random starts, negative linearisation. Checked
    // in leading order; the corrected mode gains unstable fixed points near the fold.
    let r = runner(100).run(&(1usize..=4, 6.0..12.0f64, 0.45..0.9f64, 0.0..1.0f64, any::<u64>()), |(n, length, a, h, seed)| {
        let params = ModelParams::new(a, 0.45, 0.01);
        let opts = FixedPointOptions { seed, ..Default::default() };
        let fp = fixed_point(n, &params, &Terrain::slope(h), &Domain::Neumann { length }, Mode::A3, 0.0, &opts)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(fp.starts.iter().all(Option::is_some), "a start failed to converge");
        prop_assert!(fp.spread < 1e-6, "spread {}", fp.spread);
        prop_assert!(fp.eigenvalues.iter().all(|z| z.re < 0.0), "eigenvalues {:?}", fp.eigenvalues);
        Ok(())
    });
    report("Neumann fixed point unique and stable", r.map_err(|e| e.to_string()));

    // Periodic, flat: convergence to regular spacing.
    let r = runner(100).run(&(prop::collection::vec(0.1..1.0f64, 2..=4), 4.0..8.0f64), |(w, length)| {
        let params = ModelParams::new(0.6, 0.45, 0.01);
        let p0 = spread_positions(&w, length, 0.6);
        let opts = OdeOptions { fixed_point_tol: 1e-9, sample_dt: Some(1e3), ..Default::default() };
        let tr = integrate(&PulseConfig::new(p0), &params, &Terrain::flat(), &Domain::Periodic { length }, 1e7, &opts, None)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(tr.termination, Termination::OdeFixedPoint);
        let p = &tr.last().unwrap().positions;
        let n = p.len();
        let gaps: Vec<f64> = (0..n).map(|j| if j + 1 < n { p[j + 1] - p[j] } else { p[0] + length - p[n - 1] }).collect();
        let dev = gaps.iter().map(|g| (g - length / n as f64).abs()).fold(0.0, f64::max);
        prop_assert!(dev < 1e-3 * length / n as f64, "gaps {:?}", gaps);
        Ok(())
    });
    report("periodic flat converges to regular spacing", r.map_err(|e| e.to_string()));

    // Periodic, sloped: the regular pattern translates at the closed-form speed.
    let r = runner(100).run(&(1usize..=6, 3.0..12.0f64, 0.1..2.0f64, 0.4..1.0f64), |(n, length, h, a)| {
        let params = ModelParams::new(a, 0.45, 0.01);
        let cfg = PulseConfig::new((0..n).map(|j| (j as f64 + 0.3) * length / n as f64).collect());
        let v = velocity(&cfg, &params, &Terrain::slope(h), &Domain::Periodic { length }, Mode::A3p);
        let c = regular_speed(length / n as f64, h, &params, 0.0, Mode::A3p);
        // Spacings past the existence fold have no regular pattern to test.
        let missing = |e: Option<&KpError>| matches!(e, Some(KpError::NoSolution(_)));
        prop_assume!(!(missing(v.as_ref().err()) && missing(c.as_ref().err())));
        let ctx = |e: KpError| TestCaseError::fail(format!("n={n} L={length:.4} H={h:.4} a={a:.4}: {e}"));
        let v = v.map_err(ctx)?;
        let c = c.map_err(ctx)?;
        for x in &v.dpdt {
            prop_assert!((x - c).abs() < 1e-10, "speed {} vs {}", x, c);
        }
        Ok(())
    });
    report("periodic sloped regular pattern translates uniformly", r.map_err(|e| e.to_string()));

    // Unbounded: the outer pulses separate.
    let r = runner(100).run(&(prop::collection::vec(0.1..1.0f64, 2..=4), 2.0..6.0f64, -1.0..1.0f64), |(w, width, h)| {
        let params = ModelParams::new(0.6, 0.45, 0.01);
        let p0 = spread_positions(&w, width, 0.5);
        let opts = OdeOptions { sample_dt: Some(5.0), ..Default::default() };
        // Packed starts past the existence fold are outside the statement.
        let start = velocity(&PulseConfig::new(p0.clone()), &params, &Terrain::slope(h), &Domain::Unbounded, Mode::A3p);
        prop_assume!(!matches!(start, Err(KpError::NoSolution(_))));
        let tr = integrate(&PulseConfig::new(p0.clone()), &params, &Terrain::slope(h), &Domain::Unbounded, 300.0, &opts, None)
            .map_err(|e| TestCaseError::fail(format!("{p0:?} H={h}: {e}")))?;
        let spans: Vec<f64> = tr.samples.iter().map(|s| s.positions[s.positions.len() - 1] - s.positions[0]).collect();
        prop_assert!(spans.windows(2).all(|w| w[1] > w[0]), "spans {:?}", spans);
        Ok(())
    });
    report("unbounded spread increases", r.map_err(|e| e.to_string()));

    // Outer derivatives: R+ increases from 0, R- decreases from 0.
    let r = runner(100).run(&(-2.0..2.0f64), |h| {
        let s = s_of(h);
        let ks: Vec<f64> = (1..400).map(|i| 0.05 * i as f64).collect();
        let plus: Vec<f64> = ks.iter().map(|k| r_plus(*k, h)).collect();
        let minus: Vec<f64> = ks.iter().map(|k| r_minus(*k, h)).collect();
        // Near the limits the remaining gap is below double precision; there only
        // monotonicity up to rounding is observable.
        let (lp, lm) = ((h + s) / 2.0, (h - s) / 2.0);
        let ulps = |lim: f64| 8.0 * f64::EPSILON * lim.abs().max(1.0);
        let up = |w: &[f64], lim: f64| if (lim - w[1]).abs() > 1e-12 * lim.abs().max(1.0) { w[1] > w[0] } else { w[1] >= w[0] - ulps(lim) };
        let down = |w: &[f64], lim: f64| if (lim - w[1]).abs() > 1e-12 * lim.abs().max(1.0) { w[1] < w[0] } else { w[1] <= w[0] + ulps(lim) };
        prop_assert!(plus.windows(2).all(|w| up(w, lp)) && minus.windows(2).all(|w| down(w, lm)), "h={}", h);
        prop_assert!(r_plus(1e-6, h).abs() < 1e-5 && r_minus(1e-6, h).abs() < 1e-5);
        prop_assert!((r_plus(60.0, h) - (h + s) / 2.0).abs() < 1e-9 && (r_minus(60.0, h) - (h - s) / 2.0).abs() < 1e-9);
        Ok(())
    });
    report("R+/R- monotone", r.map_err(|e| e.to_string()));
    c.finish()
}

fn criterion_11() -> Outcome {
    let mut c = Checks::new();
    let params = ModelParams::new(0.5, 0.45, 0.01);
    for h in [0.5, 1.0, 2.0] {
        // Spacings below the first existing regular pattern have no speed.
        let speeds: Vec<(f64, f64)> = (1..=500)
            .map(|i| 0.1 * i as f64)
            .filter_map(|d| regular_speed(d, h, &params, 0.0, Mode::A3p).ok().map(|c| (d, c)))
            .collect();
        let hom = homoclinic_speed(h, &params, 0.0, Mode::A3p).unwrap_or(f64::NAN);
        let contiguous = speeds.windows(2).all(|w| (w[1].0 - w[0].0 - 0.1).abs() < 1e-9);
        // Past d ~ 40 the approach to c_h drops below double precision; there only
        // non-decreasing is observable.
        let resolved = |c: f64| (hom - c).abs() > 1e-12 * hom.abs();
        let inc = speeds.windows(2).all(|w| if resolved(w[1].1) { w[1].1 > w[0].1 } else { w[1].1 >= w[0].1 });
        let gap = speeds.last().map_or(f64::INFINITY, |x| (x.1 - hom).abs());
        let d0 = speeds.first().map_or(f64::NAN, |x| x.0);
        c.check(contiguous && inc && gap < 1e-6, format!("H={h}: increasing on [{d0:.1}, 50], |c(50)-c_h|={gap:.1e}"));
    }
    let hs: Vec<f64> = (0..=90).map(|i| 0.2 + 0.02 * i as f64).collect();
    let dc: Vec<f64> = hs.iter().map(|h| colonization_wavelength(*h)).collect();
    c.check(dc.iter().all(|d| d.is_finite()) && dc.windows(2).all(|w| w[1] < w[0]), format!("d_c from {:.3} to {:.3}", dc[0], dc[dc.len() - 1]));
    c.finish()
}

fn criterion_12() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::new();
    let params = ModelParams::new(0.19187, 0.45, 0.01);
    let dom = Domain::Periodic { length: 10.0 };
    let cfg = PulseConfig::new(vec![2.5, 7.5]);
    let opts = PdeOptions { dx: Some(2e-3), ..Default::default() };
    // Relax the asymptotic profile onto the PDE's own stationary pattern.
    let run = simulate_config(&cfg, &params, &Terrain::flat(), &dom, 400.0, &opts).expect("pde runs");
    let spec = linearized_spectrum(&run.grid, &run.final_state, &params, &Terrain::flat(), 0.05, 40, 1).expect("eigensolve");
    // Translation modes sit at (nearly) zero; the comparison uses the next one.
    let direct = spec.dominant_large(1e-2).map_or(f64::NAN, |z| z.re);
    let flat = Terrain::flat();
    let sys = PulseSystem::new(&params, &flat, &dom, Mode::A3p);
    let (_, u) = sys.amplitudes(&cfg.positions, 0.0, None).expect("amplitudes exist");
    let input = SpectrumInput { positions: &cfg.positions, u: &u, params: &params, terrain: &Terrain::flat(), domain: &dom, t: 0.0 };
    let csp = csp_spectrum(&input, &SpectralContext::default(), &CspOptions::default()).expect("csp").eigen[0].lambda.re;
    c.check(rel(direct, csp) < 0.05, format!("discretized {direct:.4} vs CSP {csp:.4} ({:.0}% apart)", 100.0 * rel(direct, csp)));
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 60.0, format!("{secs:.1}s"));
    c.finish()
}

fn main() {
    let criteria: Vec<(u32, fn() -> Outcome)> = vec![
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: &u32| filter.is_empty() || filter.contains(n);
    let start = Instant::now();
    let timed = |f: fn() -> Outcome| {
        let t = Instant::now();
        (f(), t.elapsed().as_secs_f64())
    };
    // Criteria with a runtime budget run alone, after the concurrent batch.
    let solo = [12];
    let mut results: Vec<(u32, Outcome, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .filter(|(n, _)| selected(n) && !solo.contains(n))
            .map(|&(n, f)| {
                (
                    n,
                    scope.spawn(move || timed(f)),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(n, h)| match h.join() {
                Ok((r, secs)) => (n, r, secs),
                Err(p) => {
                    let msg = p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string()));
                    (n, Err(format!("panicked: {}", msg.unwrap_or_default())), 0.0)
                }
            })
            .collect()
    });
    for &(n, f) in criteria.iter().filter(|(n, _)| selected(n) && solo.contains(n)) {
        let (r, secs) = timed(f);
        results.push((n, r, secs));
    }
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (n, r, secs) in &results {
        let (tag, text) = match r {
            Ok(t) => ("PASS", t),
            Err(t) => {
                failed += 1;
                ("FAIL", t)
            }
        };
        writeln!(out, "criterion {n:>2}: {tag} [{secs:.1}s] {text}").unwrap();
    }
    writeln!(out, "acceptance: {} passed, {failed} failed in {:.1}s", results.len() - failed, start.elapsed().as_secs_f64()).unwrap();
    drop(out);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! One function per command; each writes its artifacts into the output directory.

use std::path::Path;

use kpulse::cascade::{run_cascade, CascadeTrace, SpectrumEngine, Terminal};
use kpulse::model::{Domain, ModelParams, PulseConfig};
use kpulse::nlep::condition::{m_critical, trace_skeleton};
use kpulse::nlep::inner::InnerSolver;
use kpulse::nlep::spectrum::SpectralContext;
use kpulse::pde::{compare as compare_runs, simulate_config, PdeRun};
use kpulse::pulse_ode::{colonization_wavelength, fixed_point as solve_fixed_point, homoclinic_speed, integrate, regular_speed, PulseSystem};
use kpulse::Error;
use serde_json::json;

use crate::config::Scenario;
use crate::output::OutDir;
use crate::Failure;

struct Setup<'a> {
    params: &'a ModelParams,
    domain: &'a Domain,
    pulses: &'a PulseConfig,
    t_end: f64,
}

/// Blocks guaranteed present by the command's requirement check.
fn setup(s: &Scenario) -> Setup<'_> {
    Setup {
        params: s.params.as_ref().expect("params checked"),
        domain: s.domain.as_ref().expect("domain checked"),
        pulses: s.pulses.as_ref().expect("pulses checked"),
        t_end: s.t_end.unwrap_or(f64::NAN),
    }
}

fn context(s: &Scenario) -> SpectralContext {
    SpectralContext::new(InnerSolver::new(s.inner))
}

/// `f64` in CSV: NaN for values that do not exist.
fn cell(v: Result<f64, Error>) -> Result<String, Failure> {
    match v {
        Ok(x) => Ok(format!("{x}")),
        Err(Error::NoSolution(_)) => Ok("NaN".into()),
        Err(e) => Err(e.into()),
    }
}

pub fn ode(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let c = setup(s);
    let traj = integrate(c.pulses, c.params, &s.terrain, c.domain, c.t_end, &s.cascade.ode, None)?;
    out.write("trajectory.csv", traj.to_csv().as_bytes())?;
    out.json("ode.json", &json!({ "termination": traj.termination, "final": traj.last() }))?;
    Ok(())
}

fn final_state_csv(positions: &[f64], u: &[f64]) -> String {
    let mut csv = String::from("pulse,position,u\n");
    for (j, (p, a)) in positions.iter().zip(u).enumerate() {
        csv.push_str(&format!("{},{p},{a}\n", j + 1));
    }
    csv
}

pub fn cascade(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let c = setup(s);
    let trace = run_cascade(c.pulses, c.params, &s.terrain, c.domain, c.t_end, &s.cascade, &context(s))?;
    let events: Vec<_> = trace.events().map(|e| e.to_json()).collect();
    out.json("events.json", &events)?;
    for (k, seg) in trace.segments.iter().enumerate() {
        out.write(&format!("segment_{k:03}.csv"), seg.trajectory.to_csv().as_bytes())?;
    }
    let (p, u) = trace.final_sample().map(|f| (f.positions.clone(), f.u.clone())).unwrap_or_default();
    out.write("final_state.csv", final_state_csv(&p, &u).as_bytes())?;
    out.json("trace.json", &trace)?;
    match &trace.terminal {
        Terminal::Failed(msg) => Err(Failure::Numerical(msg.clone())),
        _ => Ok(()),
    }
}

pub fn pde(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let c = setup(s);
    let run = simulate_config(c.pulses, c.params, &s.terrain, c.domain, c.t_end, &s.pde)?;
    out.write("tracks.csv", run.tracks_csv().as_bytes())?;
    let mut mass = String::from("t,water,vegetation\n");
    for m in &run.mass {
        mass.push_str(&format!("{},{},{}\n", m.t, m.water, m.vegetation));
    }
    out.write("mass.csv", mass.as_bytes())?;
    let mut fin = String::from("x,U,V\n");
    for (i, x) in run.grid.xs().iter().enumerate() {
        fin.push_str(&format!("{x},{},{}\n", run.final_state.u[i], run.final_state.v[i]));
    }
    out.write("final_state.csv", fin.as_bytes())?;
    if !run.snapshots.is_empty() {
        out.write("snapshots.csv", run.snapshots_csv().as_bytes())?;
    }
    out.json("pde.json", &run)?;
    Ok(())
}

pub fn spectrum(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let c = setup(s);
    let mut sys = PulseSystem::new(c.params, &s.terrain, c.domain, s.mode);
    sys.newton = s.cascade.ode.newton;
    c.pulses.validate(c.domain)?;
    let (_, u) = sys.amplitudes(&c.pulses.positions, s.t, c.pulses.amplitudes.as_deref())?;
    let ctx = context(s);
    let mode = s.spectrum.resolve(c.params, &s.terrain);
    let engine = SpectrumEngine { ctx: &ctx, mode, params: c.params, terrain: &s.terrain, domain: c.domain };
    let report = engine.report(s.t, &c.pulses.positions, &u, &[])?;
    out.json(
        "spectrum.json",
        &json!({ "t": s.t, "a": c.params.a(s.t), "positions": c.pulses.positions, "u": u, "report": report }),
    )?;
    Ok(())
}

pub fn skeleton(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let m = s.skeleton_m.or(s.params.as_ref().map(|p| p.m)).expect("m checked");
    let h = s.skeleton_h.or(s.terrain.constant_slope()).expect("H checked");
    let inner = InnerSolver::new(s.inner);
    let sk = trace_skeleton(m, h, &inner)?;
    out.json(
        "skeleton.json",
        &json!({
            "m": m,
            "H": h,
            "m_critical": m_critical(h),
            "landing_point": { "lambda": sk.landing.lambda, "g": sk.landing.g },
            "k_star": sk.k_star,
            "skeleton": sk,
        }),
    )?;
    Ok(())
}

pub fn fixed_point(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let params = s.params.as_ref().expect("params checked");
    let domain = s.domain.as_ref().expect("domain checked");
    let n = s.fixed_point_n.or(s.pulses.as_ref().map(PulseConfig::len)).expect("n checked");
    let fp = solve_fixed_point(n, params, &s.terrain, domain, s.mode, s.t, &s.fixed_point)?;
    out.json("fixed_point.json", &fp)?;
    Ok(())
}

pub fn speeds(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let params = s.params.as_ref().expect("params checked");
    let mut csv = String::from("H,d,speed,homoclinic_speed\n");
    for &h in &s.speeds_h {
        let hom = cell(homoclinic_speed(h, params, s.t, s.mode))?;
        for &d in &s.speeds_d {
            let c = cell(regular_speed(d, h, params, s.t, s.mode))?;
            csv.push_str(&format!("{h},{d},{c},{hom}\n"));
        }
    }
    out.write("speeds.csv", csv.as_bytes())?;
    Ok(())
}

pub fn colonization(s: &Scenario, out: &mut OutDir) -> Result<(), Failure> {
    let mut csv = String::from("H,d_c\n");
    for &h in &s.colonization_h {
        csv.push_str(&format!("{h},{}\n", colonization_wavelength(h)));
    }
    out.write("colonization.csv", csv.as_bytes())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Validation(vec![format!("cannot read {}: {e}", path.display())]))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(vec![format!("{}: {e}", path.display())]))
}

pub fn compare(s: &Scenario, ode_dir: &Path, pde_dir: &Path, out: &mut OutDir) -> Result<(), Failure> {
    let trace: CascadeTrace = read_json(&ode_dir.join("trace.json"))?;
    let run: PdeRun = read_json(&pde_dir.join("pde.json"))?;
    let cmp = compare_runs(&trace, &run, s.gap_tol)?;
    let length = run.grid.length();
    out.json(
        "metrics.json",
        &json!({
            "max_error": cmp.max_error,
            "max_error_relative": cmp.max_error / length,
            "final_error": cmp.final_error,
            "ode_survivors": cmp.ode_survivors,
            "pde_survivors": cmp.pde_survivors,
            "survivors_agree": cmp.survivors_agree,
            "survivor_sets_equal": cmp.survivor_sets_equal,
            "death_offsets": cmp.death_offsets,
            "pulses": cmp.pulses,
        }),
    )?;
    Ok(())
}

//! Scenario files: JSON documents with dotted-key overrides, validated in one pass so
//! that every problem is reported together.

use std::path::Path;

use kpulse::amplitude::Mode;
use kpulse::cascade::{CascadeOptions, Parity, SpectrumChoice};
use kpulse::model::{CubicSpline, Domain, ModelParams, PulseConfig, Schedule, Terrain};
use kpulse::nlep::inner::InnerOptions;
use kpulse::pde::PdeOptions;
use kpulse::pulse_ode::FixedPointOptions;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ode,
    Pde,
    Cascade,
    Spectrum,
    Skeleton,
    FixedPoint,
    Speeds,
    Colonization,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ode => "ode",
            Command::Pde => "pde",
            Command::Cascade => "cascade",
            Command::Spectrum => "spectrum",
            Command::Skeleton => "skeleton",
            Command::FixedPoint => "fixed-point",
            Command::Speeds => "speeds",
            Command::Colonization => "colonization",
            Command::Compare => "compare",
        }
    }
}

const TOP: &[&str] =
    &["params", "terrain", "domain", "pulses", "run", "pde", "skeleton", "speeds", "colonization", "fixed_point", "compare", "tuning", "seed"];
const PARAMS: &[&str] = &["a", "a_schedule", "m", "D"];
const TERRAIN: &[&str] = &["type", "H", "B", "center", "height", "x", "h"];
const DOMAIN: &[&str] = &["type", "L"];
const PULSES: &[&str] = &["positions", "amplitudes", "t0", "regular"];
const RUN: &[&str] = &["t_end", "t", "mode", "spectrum_mode", "parity", "sample_dt", "max_events"];
const PDE: &[&str] =
    &["dx", "dt", "track_dt", "snapshot_dt", "noise", "stationary_tol", "extinction_fraction", "match_tol", "unbounded_margin"];
const SKELETON: &[&str] = &["m", "H"];
const SPEEDS: &[&str] = &["H", "d"];
const COLONIZATION: &[&str] = &["H"];
const FIXED_POINT: &[&str] = &["n", "starts"];
const COMPARE: &[&str] = &["gap_tol"];
const TUNING: &[&str] = &[
    "regularity_tol",
    "cluster_tol",
    "hopf_tol",
    "dt_tol_rel",
    "check_da",
    "check_dx",
    "near_critical",
    "pole_guard",
    "inner_half_width",
    "inner_intervals",
    "newton_tol",
    "newton_max_iter",
    "rtol",
    "atol",
    "h0",
    "h_min",
    "max_steps",
    "collision_tol",
    "fixed_point_tol",
    "fixed_point_newton_tol",
    "fixed_point_max_iter",
];

/// A fully resolved scenario. Blocks that were absent stay `None`; whether they are
/// needed depends on the command.
#[derive(Clone, Debug)]
pub struct Scenario {
    /// The merged document, echoed into the manifest.
    pub doc: Value,
    pub seed: u64,
    pub params: Option<ModelParams>,
    pub terrain: Terrain,
    pub domain: Option<Domain>,
    pub pulses: Option<PulseConfig>,
    pub t_end: Option<f64>,
    /// Evaluation time for spectrum, fixed-point and speed commands.
    pub t: f64,
    pub mode: Mode,
    pub spectrum: SpectrumChoice,
    pub cascade: CascadeOptions,
    pub pde: PdeOptions,
    pub inner: InnerOptions,
    pub fixed_point: FixedPointOptions,
    pub fixed_point_n: Option<usize>,
    pub skeleton_m: Option<f64>,
    pub skeleton_h: Option<f64>,
    pub speeds_h: Vec<f64>,
    pub speeds_d: Vec<f64>,
    pub colonization_h: Vec<f64>,
    pub gap_tol: f64,
}

#[cfg(test)]
impl Scenario {
    /// Everything except the echoed document, for equivalence checks.
    pub fn summary(&self) -> String {
        let mut s = self.clone();
        s.doc = Value::Null;
        format!("{s:?}")
    }
}

/// Reads a config file and applies overrides.
pub fn load(path: Option<&Path>, overrides: &[(String, Value)], command: Command) -> Result<Scenario, Vec<String>> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| vec![format!("cannot read {}: {e}", p.display())])?;
            serde_json::from_str(&text).map_err(|e| vec![format!("{}: {e}", p.display())])?
        }
        None => Value::Object(Map::new()),
    };
    for (key, value) in overrides {
        set_dotted(&mut doc, key, value.clone()).map_err(|e| vec![e])?;
    }
    parse(doc, command)
}

/// Splits `key=value`; the value is parsed as JSON and kept as a string otherwise.
pub fn parse_override(arg: &str) -> Result<(String, Value), String> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| format!("override `{arg}` is not of the form key=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("override `{arg}` has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

pub fn set_dotted(doc: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(format!("override `{key}`: `{}` is not an object", parts[..i].join(".")));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn object<'a>(&mut self, parent: &'a Map<String, Value>, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let key = path.rsplit('.').next().unwrap_or(path);
        let v = parent.get(key)?;
        let Value::Object(map) = v else {
            self.err(format!("{path}: expected an object"));
            return None;
        };
        self.unknown(map, path, allowed);
        Some(map)
    }

    fn unknown(&mut self, map: &Map<String, Value>, path: &str, allowed: &[&str]) {
        for k in map.keys() {
            if !allowed.contains(&k.as_str()) {
                let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                self.err(format!("{full}: unknown key"));
            }
        }
    }

    fn num(&mut self, map: Option<&Map<String, Value>>, path: &str, key: &str) -> Option<f64> {
        let v = map?.get(key)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(format!("{path}.{key}: expected a finite number"));
                None
            }
        }
    }

    fn positive(&mut self, map: Option<&Map<String, Value>>, path: &str, key: &str) -> Option<f64> {
        let x = self.num(map, path, key)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.err(format!("{path}.{key}: must be positive, got {x}"));
            None
        }
    }

    fn count(&mut self, map: Option<&Map<String, Value>>, path: &str, key: &str) -> Option<usize> {
        let v = map?.get(key)?;
        match v.as_u64() {
            Some(n) => Some(n as usize),
            None => {
                self.err(format!("{path}.{key}: expected a non-negative integer"));
                None
            }
        }
    }

    fn list(&mut self, map: Option<&Map<String, Value>>, path: &str, key: &str) -> Option<Vec<f64>> {
        let v = map?.get(key)?;
        let parsed = v.as_array().and_then(|a| a.iter().map(|x| x.as_f64().filter(|f| f.is_finite())).collect::<Option<Vec<f64>>>());
        if parsed.is_none() {
            self.err(format!("{path}.{key}: expected an array of finite numbers"));
        }
        parsed
    }

    fn string<'a>(&mut self, map: Option<&'a Map<String, Value>>, path: &str, key: &str) -> Option<&'a str> {
        let v = map?.get(key)?;
        let s = v.as_str();
        if s.is_none() {
            self.err(format!("{path}.{key}: expected a string"));
        }
        s
    }

    fn choice<T: Copy>(&mut self, map: Option<&Map<String, Value>>, path: &str, key: &str, options: &[(&str, T)]) -> Option<T> {
        let s = self.string(map, path, key)?;
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => Some(*v),
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(format!("{path}.{key}: `{s}` is not one of {}", names.join(", ")));
                None
            }
        }
    }

    fn core<T>(&mut self, what: &str, r: kpulse::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.err(format!("{what}: {e}"));
                None
            }
        }
    }
}

fn parse_schedule(c: &mut Checker, params: &Map<String, Value>) -> Option<Schedule> {
    let constant = c.num(Some(params), "params", "a");
    let sched = c.object(params, "params.a_schedule", &["type", "a", "a0", "rate", "times", "values"]);
    match (constant, sched) {
        (Some(_), Some(_)) => {
            c.err("params: give either `a` or `a_schedule`, not both");
            None
        }
        (Some(a), None) => Some(Schedule::Constant(a)),
        (None, Some(s)) => {
            let p = "params.a_schedule";
            let kind = c.choice(Some(s), p, "type", &[("constant", 0), ("linear", 1), ("piecewise", 2)]);
            let need = |c: &mut Checker, key: &str| {
                if !s.contains_key(key) {
                    c.err(format!("{p}.{key}: required"));
                }
            };
            match kind {
                Some(0) => {
                    need(c, "a");
                    c.num(Some(s), p, "a").map(Schedule::Constant)
                }
                Some(1) => {
                    need(c, "a0");
                    need(c, "rate");
                    let a0 = c.num(Some(s), p, "a0");
                    let rate = c.num(Some(s), p, "rate");
                    Some(Schedule::Linear { a0: a0?, rate: rate? })
                }
                Some(2) => {
                    need(c, "times");
                    need(c, "values");
                    let times = c.list(Some(s), p, "times");
                    let values = c.list(Some(s), p, "values");
                    Some(Schedule::Piecewise { times: times?, values: values? })
                }
                _ => {
                    if !s.contains_key("type") {
                        c.err(format!("{p}.type: required"));
                    }
                    None
                }
            }
        }
        (None, None) => {
            if !params.contains_key("a") {
                c.err("params: one of `a` or `a_schedule` is required");
            }
            None
        }
    }
}

fn parse_terrain(c: &mut Checker, map: &Map<String, Value>) -> Option<Terrain> {
    let p = "terrain";
    let kind = c.choice(Some(map), p, "type", &[("flat", 0), ("slope", 1), ("gaussian", 2), ("table", 3)]);
    let allowed: &[&str] = match kind {
        Some(0) => &["type"],
        Some(1) => &["type", "H"],
        Some(2) => &["type", "B", "center", "height"],
        Some(3) => &["type", "x", "h"],
        _ => TERRAIN,
    };
    for k in map.keys() {
        if TERRAIN.contains(&k.as_str()) && !allowed.contains(&k.as_str()) {
            c.err(format!("terrain.{k}: not used by this terrain type"));
        }
    }
    match kind {
        Some(0) => Some(Terrain::flat()),
        Some(1) => {
            let h = c.num(Some(map), p, "H");
            if h.is_none() && !map.contains_key("H") {
                c.err("terrain.H: required for a slope");
            }
            h.map(Terrain::slope)
        }
        Some(2) => {
            let b = c.positive(Some(map), p, "B");
            if !map.contains_key("B") {
                c.err("terrain.B: required for a gaussian hill");
            }
            let center = c.num(Some(map), p, "center").unwrap_or(0.0);
            let height = c.num(Some(map), p, "height").unwrap_or(1.0);
            b.map(|b| Terrain::Gaussian { b, center, height })
        }
        Some(3) => {
            let x = c.list(Some(map), p, "x");
            let h = c.list(Some(map), p, "h");
            let spline = CubicSpline::new(x?, h?);
            c.core("terrain", spline).map(Terrain::Table)
        }
        _ => {
            if !map.contains_key("type") {
                c.err("terrain.type: required");
            }
            None
        }
    }
}

fn parse_domain(c: &mut Checker, map: &Map<String, Value>) -> Option<Domain> {
    let p = "domain";
    let kind = c.choice(Some(map), p, "type", &[("unbounded", 0), ("periodic", 1), ("neumann", 2)]);
    match kind {
        Some(0) => {
            if map.contains_key("L") {
                c.err("domain.L: an unbounded domain has no length");
            }
            Some(Domain::Unbounded)
        }
        Some(k) => {
            let l = c.positive(Some(map), p, "L");
            if !map.contains_key("L") {
                c.err("domain.L: required");
            }
            let length = l?;
            Some(if k == 1 { Domain::Periodic { length } } else { Domain::Neumann { length } })
        }
        None => {
            if !map.contains_key("type") {
                c.err("domain.type: required");
            }
            None
        }
    }
}

fn parse_pulses(c: &mut Checker, map: &Map<String, Value>, domain: Option<&Domain>) -> Option<PulseConfig> {
    let p = "pulses";
    let t0 = c.num(Some(map), p, "t0").unwrap_or(0.0);
    let positions = match (map.contains_key("positions"), map.contains_key("regular")) {
        (true, true) => {
            c.err("pulses: give either `positions` or `regular`, not both");
            return None;
        }
        (true, false) => c.list(Some(map), p, "positions")?,
        (false, true) => {
            let n = c.count(Some(map), p, "regular")?;
            match domain.and_then(Domain::length) {
                Some(l) if n > 0 => PulseConfig::regular(n, l).positions,
                Some(_) => {
                    c.err("pulses.regular: need at least one pulse");
                    return None;
                }
                None => {
                    c.err("pulses.regular: needs a bounded domain");
                    return None;
                }
            }
        }
        (false, false) => {
            c.err("pulses: one of `positions` or `regular` is required");
            return None;
        }
    };
    let amplitudes = c.list(Some(map), p, "amplitudes");
    if let Some(a) = &amplitudes {
        if a.len() != positions.len() {
            c.err(format!("pulses.amplitudes: {} values for {} pulses", a.len(), positions.len()));
        }
    }
    let config = PulseConfig { t: t0, positions, amplitudes };
    if let Some(d) = domain {
        c.core("pulses", config.validate(d));
    }
    Some(config)
}

fn parse(doc: Value, command: Command) -> Result<Scenario, Vec<String>> {
    let mut c = Checker { errors: Vec::new() };
    let Value::Object(root) = &doc else {
        return Err(vec!["config: top level must be an object".into()]);
    };
    c.unknown(root, "", TOP);
    let seed = c.count(Some(root), "config", "seed").unwrap_or(0) as u64;

    let params = c.object(root, "params", PARAMS).and_then(|m| {
        let a = parse_schedule(&mut c, m);
        let mm = c.positive(Some(m), "params", "m");
        let d = c.positive(Some(m), "params", "D");
        for key in ["m", "D"] {
            if !m.contains_key(key) {
                c.err(format!("params.{key}: required"));
            }
        }
        let p = ModelParams::with_schedule(a?, mm?, d?);
        c.core("params", p.validate()).map(|_| p)
    });
    let terrain = c.object(root, "terrain", TERRAIN).and_then(|m| parse_terrain(&mut c, m));
    let domain = c.object(root, "domain", DOMAIN).and_then(|m| parse_domain(&mut c, m));
    if let (Some(t), Some(d)) = (&terrain, &domain) {
        c.core("terrain", t.validate(d));
    }
    let pulses = c.object(root, "pulses", PULSES).and_then(|m| parse_pulses(&mut c, m, domain.as_ref()));

    let run = c.object(root, "run", RUN);
    let t_end = c.num(run, "run", "t_end");
    let t = c.num(run, "run", "t").or(pulses.as_ref().map(|p| p.t)).unwrap_or(0.0);
    let mode = c.choice(run, "run", "mode", &[("a3", Mode::A3), ("a3p", Mode::A3p)]).unwrap_or(Mode::A3p);
    let spectrum = c
        .choice(
            run,
            "run",
            "spectrum_mode",
            &[("dsp", SpectrumChoice::Dsp), ("csp", SpectrumChoice::Csp), ("small-m", SpectrumChoice::SmallM), ("auto", SpectrumChoice::Auto)],
        )
        .unwrap_or_default();
    let parity = c.choice(run, "run", "parity", &[("even", Parity::Even), ("odd", Parity::Odd)]).unwrap_or_default();
    let sample_dt = c.positive(run, "run", "sample_dt");

    let tuning = c.object(root, "tuning", TUNING);
    let mut cascade = CascadeOptions { spectrum, parity, ..Default::default() };
    if let Some(n) = c.count(run, "run", "max_events") {
        cascade.max_events = n;
    }
    macro_rules! tune {
        ($target:expr, $key:literal, positive) => {
            if let Some(v) = c.positive(tuning, "tuning", $key) {
                $target = v;
            }
        };
        ($target:expr, $key:literal, count) => {
            if let Some(v) = c.count(tuning, "tuning", $key) {
                $target = v;
            }
        };
    }
    tune!(cascade.regularity_tol, "regularity_tol", positive);
    tune!(cascade.cluster_tol, "cluster_tol", positive);
    tune!(cascade.hopf_tol, "hopf_tol", positive);
    tune!(cascade.dt_tol_rel, "dt_tol_rel", positive);
    tune!(cascade.check_da, "check_da", positive);
    tune!(cascade.check_dx, "check_dx", positive);
    tune!(cascade.near_critical, "near_critical", positive);
    let ode = &mut cascade.ode;
    ode.mode = mode;
    ode.sample_dt = sample_dt;
    tune!(ode.rtol, "rtol", positive);
    tune!(ode.atol, "atol", positive);
    tune!(ode.h0, "h0", positive);
    tune!(ode.h_min, "h_min", positive);
    tune!(ode.max_steps, "max_steps", count);
    tune!(ode.fixed_point_tol, "fixed_point_tol", positive);
    tune!(ode.newton.tol, "newton_tol", positive);
    tune!(ode.newton.max_iter, "newton_max_iter", count);
    ode.collision_tol = c.positive(tuning, "tuning", "collision_tol");
    let mut inner = InnerOptions::default();
    tune!(inner.pole_guard, "pole_guard", positive);
    tune!(inner.half_width, "inner_half_width", positive);
    tune!(inner.intervals, "inner_intervals", count);
    let mut fixed_point = FixedPointOptions { seed, ..Default::default() };
    tune!(fixed_point.tol, "fixed_point_newton_tol", positive);
    tune!(fixed_point.max_iter, "fixed_point_max_iter", count);

    let pde_map = c.object(root, "pde", PDE);
    let mut pde = PdeOptions { mode, seed, ..Default::default() };
    pde.dx = c.positive(pde_map, "pde", "dx");
    if let Some(v) = c.positive(pde_map, "pde", "dt") {
        pde.dt = v;
    }
    if let Some(v) = c.positive(pde_map, "pde", "track_dt") {
        pde.track_dt = v;
    }
    pde.snapshot_dt = c.positive(pde_map, "pde", "snapshot_dt");
    if let Some(v) = c.num(pde_map, "pde", "noise") {
        if v < 0.0 {
            c.err("pde.noise: must be non-negative");
        }
        pde.noise = v;
    }
    pde.stationary_tol = c.positive(pde_map, "pde", "stationary_tol");
    if let Some(v) = c.positive(pde_map, "pde", "extinction_fraction") {
        pde.extinction_fraction = v;
    }
    if let Some(v) = c.positive(pde_map, "pde", "match_tol") {
        pde.match_tol = v;
    }
    if let Some(v) = c.positive(pde_map, "pde", "unbounded_margin") {
        pde.unbounded_margin = v;
    }

    let skel = c.object(root, "skeleton", SKELETON);
    let skeleton_m = c.positive(skel, "skeleton", "m");
    let skeleton_h = c.num(skel, "skeleton", "H");
    let speeds = c.object(root, "speeds", SPEEDS);
    let speeds_h = c.list(speeds, "speeds", "H").unwrap_or_default();
    let speeds_d = c.list(speeds, "speeds", "d").unwrap_or_default();
    if speeds_d.iter().any(|d| !(*d > 0.0)) {
        c.err("speeds.d: spacings must be positive");
    }
    let colon = c.object(root, "colonization", COLONIZATION);
    let colonization_h = c.list(colon, "colonization", "H").unwrap_or_default();
    let fp = c.object(root, "fixed_point", FIXED_POINT);
    let fixed_point_n = c.count(fp, "fixed_point", "n");
    if let Some(s) = c.count(fp, "fixed_point", "starts") {
        fixed_point.starts = s;
    }
    let cmp = c.object(root, "compare", COMPARE);
    let gap_tol = c.positive(cmp, "compare", "gap_tol").unwrap_or(0.25);

    let s = Scenario {
        doc: doc.clone(),
        seed,
        params,
        terrain: terrain.unwrap_or_else(Terrain::flat),
        domain,
        pulses,
        t_end,
        t,
        mode,
        spectrum,
        cascade,
        pde,
        inner,
        fixed_point,
        fixed_point_n,
        skeleton_m,
        skeleton_h,
        speeds_h,
        speeds_d,
        colonization_h,
        gap_tol,
    };
    requirements(&mut c, root, &s, command);
    if c.errors.is_empty() {
        Ok(s)
    } else {
        Err(c.errors)
    }
}

/// Blocks each command needs, plus combinations that cannot work together.
fn requirements(c: &mut Checker, root: &Map<String, Value>, s: &Scenario, command: Command) {
    let mut need = |key: &str| {
        if !root.contains_key(key) {
            c.err(format!("{key}: required by the {} command", command.name()));
        }
    };
    match command {
        Command::Ode | Command::Cascade | Command::Pde => {
            for k in ["params", "domain", "pulses"] {
                need(k);
            }
        }
        Command::Spectrum => {
            for k in ["params", "domain", "pulses"] {
                need(k);
            }
        }
        Command::FixedPoint => {
            need("params");
            need("domain");
        }
        Command::Speeds => {
            need("params");
            need("speeds");
        }
        Command::Colonization => need("colonization"),
        Command::Skeleton | Command::Compare => {}
    }
    if matches!(command, Command::Ode | Command::Cascade | Command::Pde) {
        match s.t_end {
            None if !root.get("run").and_then(|r| r.get("t_end")).is_some() => c.err(format!("run.t_end: required by the {} command", command.name())),
            Some(t) if s.pulses.as_ref().is_some_and(|p| t <= p.t) => c.err("run.t_end: must exceed pulses.t0"),
            _ => {}
        }
    }
    if command == Command::Pde && s.domain == Some(Domain::Unbounded) {
        c.err("domain.type: the pde command needs a bounded (periodic or neumann) domain");
    }
    if command == Command::FixedPoint {
        if s.domain.is_some_and(|d| !matches!(d, Domain::Neumann { .. })) {
            c.err("domain.type: fixed points are computed on neumann domains only");
        }
        if s.fixed_point_n.is_none() && s.pulses.is_none() {
            c.err("fixed_point.n: required when no pulses are given");
        }
    }
    if s.spectrum == SpectrumChoice::Csp && s.terrain.constant_slope().is_none() {
        c.err("run.spectrum_mode: csp needs a flat or constant-slope terrain");
    }
    if command == Command::Skeleton && s.skeleton_m.is_none() && s.params.is_none() {
        c.err("skeleton.m: required (or give params.m)");
    }
    if command == Command::Skeleton && s.skeleton_h.is_none() && s.terrain.constant_slope().is_none() {
        c.err("skeleton.H: required when the terrain is not a constant slope");
    }
    if command == Command::Speeds && s.speeds_h.is_empty() {
        c.err("speeds.H: at least one slope is required");
    }
    if command == Command::Colonization && s.colonization_h.is_empty() {
        c.err("colonization.H: at least one slope is required");
    }
}

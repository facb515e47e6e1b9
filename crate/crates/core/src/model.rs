//! Model parameters, terrain, domains and pulse configurations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rainfall as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Linear { a0: f64, rate: f64 },
    Piecewise { times: Vec<f64>, values: Vec<f64> },
}

impl Schedule {
    /// Rainfall at time `t`. Piecewise schedules are clamped outside their breakpoints.
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(a) => *a,
            Schedule::Linear { a0, rate } => a0 + rate * t,
            Schedule::Piecewise { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Schedule::Constant(_) => true,
            Schedule::Linear { rate, .. } => *rate == 0.0,
            Schedule::Piecewise { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// Time at which a linear schedule reaches zero, if it ever does.
    pub fn exhaustion_time(&self) -> Option<f64> {
        match self {
            Schedule::Linear { a0, rate } if *rate < 0.0 => Some(-a0 / rate),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant(a) => positive("a", *a),
            Schedule::Linear { a0, rate } => {
                positive("a0", *a0)?;
                finite("rate", *rate)
            }
            Schedule::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::invalid("piecewise schedule needs matching non-empty times and values"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("piecewise schedule times must increase strictly"));
                }
                for v in values {
                    positive("a", *v)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: Schedule,
    pub m: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl ModelParams {
    pub fn new(a: f64, m: f64, d: f64) -> Self {
        ModelParams { a: Schedule::Constant(a), m, d }
    }

    pub fn with_schedule(a: Schedule, m: f64, d: f64) -> Self {
        ModelParams { a, m, d }
    }

    pub fn validate(&self) -> Result<()> {
        self.a.validate()?;
        positive("m", self.m)?;
        positive("D", self.d)
    }

    pub fn a(&self, t: f64) -> f64 {
        self.a.at(t)
    }

    /// Size of the pulse-location values of the scaled outer field, `m^{3/2} D / a^2`.
    pub fn delta(&self, t: f64) -> f64 {
        let a = self.a(t);
        self.m.powf(1.5) * self.d / (a * a)
    }

    /// Factor converting the O(1) speed law into physical velocity, `D a^2 / m^{3/2}`.
    pub fn speed_scale(&self, t: f64) -> f64 {
        let a = self.a(t);
        self.d * a * a / self.m.powf(1.5)
    }

    /// Factor turning `u0^2` into the stability quantity `K = m^2 D u0^2 / a^2`.
    pub fn k_scale(&self, t: f64) -> f64 {
        let a = self.a(t);
        self.m * self.m * self.d / (a * a)
    }

    /// Width of a pulse in x, `D / sqrt(m)`.
    pub fn pulse_width(&self) -> f64 {
        self.d / self.m.sqrt()
    }
}

/// A user supplied terrain: returns `(h, h_x, h_xx)`.
pub trait TerrainCurve: Send + Sync {
    fn eval(&self, x: f64) -> (f64, f64, f64);
}

#[derive(Clone)]
pub enum Terrain {
    Slope { h: f64 },
    Gaussian { b: f64, center: f64, height: f64 },
    Table(CubicSpline),
    Custom(Arc<dyn TerrainCurve>),
}

impl fmt::Debug for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terrain::Slope { h } => write!(f, "Slope({h})"),
            Terrain::Gaussian { b, center, height } => {
                write!(f, "Gaussian(b={b}, center={center}, height={height})")
            }
            Terrain::Table(s) => write!(f, "Table({} knots)", s.x.len()),
            Terrain::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Terrain {
    pub fn flat() -> Self {
        Terrain::Slope { h: 0.0 }
    }

    pub fn slope(h: f64) -> Self {
        Terrain::Slope { h }
    }

    pub fn gaussian(b: f64, center: f64) -> Self {
        Terrain::Gaussian { b, center, height: 1.0 }
    }

    /// `Some(H)` when `h = H x`.
    pub fn constant_slope(&self) -> Option<f64> {
        match self {
            Terrain::Slope { h } => Some(*h),
            _ => None,
        }
    }

    /// `(h, h_x, h_xx)` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Terrain::Slope { h } => (h * x, *h, 0.0),
            Terrain::Gaussian { b, center, height } => {
                let y = x - center;
                let g = height * (-b * y * y).exp();
                (g, -2.0 * b * y * g, (4.0 * b * b * y * y - 2.0 * b) * g)
            }
            Terrain::Table(s) => s.eval(x),
            Terrain::Custom(c) => c.eval(x),
        }
    }

    /// Local slope `h_x`.
    pub fn slope_at(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    /// Suprema of `|h_x|` and `|h_xx|` over `[lo, hi]`.
    pub fn derivative_bounds(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            Terrain::Slope { h } => (h.abs(), 0.0),
            Terrain::Gaussian { b, height, .. } => {
                let hx = height.abs() * (2.0 * b).sqrt() * (-0.5f64).exp();
                (hx, 2.0 * b * height.abs())
            }
            _ => {
                let n = 4000;
                let (mut sx, mut sxx) = (0.0f64, 0.0f64);
                for i in 0..=n {
                    let x = lo + (hi - lo) * i as f64 / n as f64;
                    let (_, hx, hxx) = self.eval(x);
                    sx = sx.max(hx.abs());
                    sxx = sxx.max(hxx.abs());
                }
                (sx, sxx)
            }
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        match self {
            Terrain::Slope { h } => finite("H", *h),
            Terrain::Gaussian { b, center, height } => {
                positive("B", *b)?;
                finite("center", *center)?;
                finite("height", *height)
            }
            Terrain::Table(s) => {
                if let Some(len) = domain.length() {
                    let (lo, hi) = (s.x[0], s.x[s.x.len() - 1]);
                    if lo > 0.0 || hi < len {
                        return Err(Error::invalid(format!(
                            "terrain table covers [{lo}, {hi}] but the domain is [0, {len}]"
                        )));
                    }
                }
                Ok(())
            }
            Terrain::Custom(_) => Ok(()),
        }
    }
}

/// Natural cubic spline through tabulated heights (C^2, linear outside the table).
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::invalid("terrain table needs at least two (x, h) pairs"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("terrain table abscissae must increase strictly"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("terrain table contains non-finite values"));
        }
        // Second derivatives from the tridiagonal system with natural end conditions.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut sub = vec![0.0; k];
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            let inner = crate::linalg::solve_tridiagonal(&sub, &diag, &sup, &rhs);
            m[1..n - 1].copy_from_slice(&inner);
        }
        Ok(CubicSpline { x, y, m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        if t <= self.x[0] || t >= self.x[n - 1] {
            let (i, x0) = if t <= self.x[0] { (0, self.x[0]) } else { (n - 2, self.x[n - 1]) };
            let (_, d, _) = self.eval_segment(i, x0);
            let y0 = if t <= self.x[0] { self.y[0] } else { self.y[n - 1] };
            return (y0 + d * (t - x0), d, 0.0);
        }
        let i = (self.x.partition_point(|&s| s <= t) - 1).min(n - 2);
        self.eval_segment(i, t)
    }

    fn eval_segment(&self, i: usize, t: f64) -> (f64, f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let y = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (self.y[i + 1] - self.y[i]) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let ddy = a * m0 + b * m1;
        (y, dy, ddy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Unbounded,
    Periodic {
        #[serde(rename = "L")]
        length: f64,
    },
    Neumann {
        #[serde(rename = "L")]
        length: f64,
    },
}

impl Domain {
    pub fn length(&self) -> Option<f64> {
        match self {
            Domain::Unbounded => None,
            Domain::Periodic { length } | Domain::Neumann { length } => Some(*length),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.length() {
            Some(l) => positive("L", l),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub t: f64,
    pub positions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
}

impl PulseConfig {
    pub fn new(positions: Vec<f64>) -> Self {
        PulseConfig { t: 0.0, positions, amplitudes: None }
    }

    pub fn at(t: f64, positions: Vec<f64>) -> Self {
        PulseConfig { t, positions, amplitudes: None }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions evenly spread over a bounded domain, `(2j - 1) L / (2N)`.
    pub fn regular(n: usize, length: f64) -> Self {
        let p = (0..n).map(|j| (2 * j + 1) as f64 * length / (2 * n) as f64).collect();
        PulseConfig::new(p)
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let p = &self.positions;
        finite("t", self.t)?;
        if p.is_empty() {
            return Err(Error::invalid("pulse configuration is empty"));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("pulse positions must be finite"));
        }
        if p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("pulse positions must increase strictly"));
        }
        if let Some(u) = &self.amplitudes {
            if u.len() != p.len() || u.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("amplitudes must be positive and match the positions"));
            }
        }
        match domain {
            Domain::Unbounded => Ok(()),
            Domain::Neumann { length } => {
                if p[0] <= 0.0 || p[p.len() - 1] >= *length {
                    return Err(Error::invalid(format!("pulse positions must lie inside (0, {length})")));
                }
                Ok(())
            }
            Domain::Periodic { length } => {
                if p[p.len() - 1] - p[0] >= *length {
                    return Err(Error::invalid(format!("pulses must fit within one period {length}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Marginal,
    Violated,
}

impl Verdict {
    pub fn classify(value: f64) -> Verdict {
        let v = value.abs();
        if v < 0.1 {
            Verdict::Holds
        } else if v <= 1.0 {
            Verdict::Marginal
        } else {
            Verdict::Violated
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub id: String,
    pub value: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub t: f64,
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn worst(&self) -> Verdict {
        let mut w = Verdict::Holds;
        for e in &self.entries {
            w = match (w, e.verdict) {
                (_, Verdict::Violated) | (Verdict::Violated, _) => Verdict::Violated,
                (_, Verdict::Marginal) | (Verdict::Marginal, _) => Verdict::Marginal,
                _ => Verdict::Holds,
            };
        }
        w
    }
}

/// Evaluates the asymptotic size assumptions at time `t`. Never rejects a run.
pub fn check_assumptions(params: &ModelParams, terrain: &Terrain, domain: &Domain, t: f64) -> AssumptionReport {
    let a = params.a(t);
    let (m, d) = (params.m, params.d);
    let sm = m.sqrt();
    let (lo, hi) = match (domain.length(), terrain) {
        (Some(l), _) => (0.0, l),
        (None, Terrain::Table(s)) => {
            let (x, _) = s.knots();
            (x[0], x[x.len() - 1])
        }
        (None, Terrain::Gaussian { b, center, .. }) => (center - 10.0 / b.sqrt(), center + 10.0 / b.sqrt()),
        (None, _) => (-50.0, 50.0),
    };
    let (hx, hxx) = terrain.derivative_bounds(lo, hi);
    let eps = d * m * sm / (a * a);
    let values = [
        ("A1", a * a / (m * m)),
        ("A2", d * a * a / (m * sm)),
        ("A3", eps),
        ("A4", m * m * d / (a * a)),
        ("A5", (eps * hx).max(a * a / (m * m) * eps * eps * hxx)),
        ("A6", m * m * d / (a * a) * hx),
    ];
    AssumptionReport {
        t,
        entries: values
            .iter()
            .map(|(id, v)| AssumptionEntry { id: id.to_string(), value: *v, verdict: Verdict::classify(*v) })
            .collect(),
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

pub(crate) fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_schedule_is_clamped() {
        let s = Schedule::Piecewise { times: vec![0.0, 10.0], values: vec![1.0, 0.5] };
        assert_eq!(s.at(-5.0), 1.0);
        assert_eq!(s.at(5.0), 0.75);
        assert_eq!(s.at(50.0), 0.5);
    }

    #[test]
    fn spline_reproduces_a_line_and_a_cubic_interior() {
        let x: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let s = CubicSpline::new(x.clone(), y).unwrap();
        let (h, hx, hxx) = s.eval(3.3);
        assert!((h - 5.6).abs() < 1e-12 && (hx - 2.0).abs() < 1e-12 && hxx.abs() < 1e-12);
        let (h, hx, _) = s.eval(12.0);
        assert!((h - 23.0).abs() < 1e-12 && (hx - 2.0).abs() < 1e-12);

        let x: Vec<f64> = (0..201).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = CubicSpline::new(x, y).unwrap();
        let (h, hx, hxx) = s.eval(4.321);
        assert!((h - 4.321f64.sin()).abs() < 1e-6);
        assert!((hx - 4.321f64.cos()).abs() < 1e-4);
        assert!((hxx + 4.321f64.sin()).abs() < 1e-2);
    }

    #[test]
    fn gaussian_derivatives_match_differences() {
        let t = Terrain::gaussian(0.75, 5.0);
        let x = 5.7;
        let e = 1e-5;
        let (_, hx, hxx) = t.eval(x);
        assert!((hx - (t.eval(x + e).0 - t.eval(x - e).0) / (2.0 * e)).abs() < 1e-8);
        assert!((hxx - (t.eval(x + e).1 - t.eval(x - e).1) / (2.0 * e)).abs() < 1e-8);
        let (sx, sxx) = t.derivative_bounds(0.0, 10.0);
        let sampled = Terrain::Custom(Arc::new(GaussCurve)).derivative_bounds(0.0, 10.0);
        assert!((sx - sampled.0).abs() < 1e-4 && (sxx - sampled.1).abs() < 1e-4);
    }

    struct GaussCurve;
    impl TerrainCurve for GaussCurve {
        fn eval(&self, x: f64) -> (f64, f64, f64) {
            Terrain::gaussian(0.75, 5.0).eval(x)
        }
    }

    #[test]
    fn assumption_report_flags_a1_but_passes_a3() {
        let p = ModelParams::new(0.5, 0.45, 0.01);
        let r = check_assumptions(&p, &Terrain::flat(), &Domain::Neumann { length: 10.0 }, 0.0);
        let a1 = r.get("A1").unwrap();
        assert!((a1.value - 0.25 / 0.2025).abs() < 1e-12);
        assert_eq!(a1.verdict, Verdict::Violated);
        let a3 = r.get("A3").unwrap();
        assert!((a3.value - 0.45f64.powf(1.5) * 0.01 / 0.25).abs() < 1e-14);
        assert_eq!(a3.verdict, Verdict::Holds);
        assert_eq!(r.worst(), Verdict::Violated);
    }

    #[test]
    fn validation_rejects_bad_input() {
        let d = Domain::Neumann { length: 10.0 };
        assert!(PulseConfig::new(vec![1.0, 3.0]).validate(&d).is_ok());
        assert!(PulseConfig::new(vec![3.0, 1.0]).validate(&d).is_err());
        assert!(PulseConfig::new(vec![1.0, 10.0]).validate(&d).is_err());
        assert!(PulseConfig::new(vec![1.0, 11.5]).validate(&Domain::Periodic { length: 10.0 }).is_err());
        assert!(ModelParams::new(0.5, -1.0, 0.01).validate().is_err());
        assert!(Schedule::Piecewise { times: vec![0.0, 0.0], values: vec![1.0, 1.0] }.validate().is_err());
    }
}

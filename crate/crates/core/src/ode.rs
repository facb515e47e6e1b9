//! Dormand-Prince 5(4) with dense output and step-size control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10, h_min: 1e-10, h_max: f64::INFINITY }
    }
}

/// Continuous extension over one accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        (0..self.r[0].len())
            .map(|i| {
                let r = &self.r;
                r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
            })
            .collect()
    }
}

/// Result of one call to [`Dopri5::step`].
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Accepted(Dense),
    /// The right-hand side failed; the step was shrunk.
    RhsFailed,
}

/// Stateful integrator for `y' = f(t, y)`.
#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub t: f64,
    pub y: Vec<f64>,
    pub h: f64,
    pub tol: Tolerances,
    k1: Option<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(t: f64, y: Vec<f64>, h0: f64, tol: Tolerances) -> Self {
        Dopri5 { t, y, h: h0, tol, k1: None, accepted: 0, rejected: 0 }
    }

    /// Forgets the cached derivative, e.g. after the state was edited.
    pub fn reset(&mut self, t: f64, y: Vec<f64>) {
        self.t = t;
        self.y = y;
        self.k1 = None;
    }

    /// Attempts steps until one is accepted (or the right-hand side fails), never
    /// passing `t_max`.
    pub fn step<F>(&mut self, f: &mut F, t_max: f64) -> Result<Step>
    where
        F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    {
        let n = self.y.len();
        let k1 = match self.k1.take() {
            Some(k) => k,
            None => match f(self.t, &self.y) {
                Ok(k) => k,
                Err(e) => return Err(e),
            },
        };
        loop {
            let mut h = self.h.min(self.tol.h_max).min(t_max - self.t);
            let last = h >= t_max - self.t;
            if h <= 0.0 {
                self.k1 = Some(k1);
                return Err(Error::invalid("integration already at the end time"));
            }
            if h < self.tol.h_min && !last {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let mut k: Vec<Vec<f64>> = vec![k1.clone()];
            let mut failed = false;
            for s in 1..7 {
                let ys: Vec<f64> = (0..n)
                    .map(|i| self.y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                    .collect();
                match f(self.t + C[s] * h, &ys) {
                    Ok(v) => k.push(v),
                    Err(e) if e.is_validation() => return Err(e),
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                self.h = h * 0.25;
                self.rejected += 1;
                self.k1 = Some(k1);
                if self.h < self.tol.h_min {
                    return Err(Error::StepUnderflow { t: self.t });
                }
                return Ok(Step::RhsFailed);
            }
            let y1: Vec<f64> = (0..n).map(|i| self.y[i] + h * (0..6).map(|j| A[6][j] * k[j][i]).sum::<f64>()).collect();
            let mut err = 0.0;
            for i in 0..n {
                let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
                let sc = self.tol.atol + self.tol.rtol * self.y[i].abs().max(y1[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                self.h = h * 0.25;
                self.rejected += 1;
                continue;
            }
            let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            if err <= 1.0 {
                let r0 = self.y.clone();
                let r1: Vec<f64> = (0..n).map(|i| y1[i] - self.y[i]).collect();
                let r2: Vec<f64> = (0..n).map(|i| h * k[0][i] - r1[i]).collect();
                let r3: Vec<f64> = (0..n).map(|i| r1[i] - h * k[6][i] - r2[i]).collect();
                let r4: Vec<f64> = (0..n).map(|i| h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>()).collect();
                let dense = Dense { t0: self.t, h, r: [r0, r1, r2, r3, r4] };
                self.t = if last { t_max } else { self.t + h };
                self.y = y1;
                self.k1 = k.pop();
                self.accepted += 1;
                if !last {
                    self.h = h * fac;
                }
                return Ok(Step::Accepted(dense));
            }
            self.rejected += 1;
            h *= fac.min(1.0);
            self.h = h;
        }
    }
}

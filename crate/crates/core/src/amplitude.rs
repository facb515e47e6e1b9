//! Pulse amplitudes from the derivative-jump condition.
//!
//! With `nu_j = delta u_j` the condition at every pulse reads
//! `F_j(u) = [U_x]_j(delta u) - 6 / u_j = 0`. At leading order (`delta -> 0`) the
//! amplitudes are explicit; otherwise a damped Newton iteration is used.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outer::{s_of, OuterMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

/// Which version of the reduced equations to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Leading order: the outer field vanishes at the pulses.
    A3,
    /// First correction: the outer field takes the value `delta u_j` at pulse `j`.
    A3p,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub branch: Branch,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-11, max_iter: 60, max_halvings: 8, branch: Branch::Minus }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSolve {
    pub u: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub branch: Branch,
    /// `|det J|` normalised by its `delta -> 0` value.
    pub margin: f64,
}

/// Leading-order amplitudes, `6 / u_j = [U_x]_j` with zero pulse values.
pub fn amplitudes_leading(outer: &OuterMap) -> Result<Vec<f64>> {
    let jump = &outer.b_plus - &outer.b_minus;
    jump.iter()
        .map(|&g| {
            if g > 0.0 && g.is_finite() {
                Ok(6.0 / g)
            } else {
                Err(Error::NoSolution(format!("non-positive derivative jump {g}")))
            }
        })
        .collect()
}

/// Residual of the jump condition.
pub fn residual(outer: &OuterMap, delta: f64, u: &[f64]) -> DVector<f64> {
    let uv = DVector::from_row_slice(u);
    let jump = outer.jump(&(uv * delta));
    DVector::from_iterator(u.len(), jump.iter().zip(u).map(|(g, ui)| g - 6.0 / ui))
}

/// Forward-difference Jacobian of [`residual`].
pub fn jacobian_fd(outer: &OuterMap, delta: f64, u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let f0 = residual(outer, delta, u);
    let mut j = DMatrix::zeros(n, n);
    let mut v = u.to_vec();
    for k in 0..n {
        let h = 1e-6 * u[k].abs().max(1.0);
        v[k] = u[k] + h;
        let f1 = residual(outer, delta, &v);
        v[k] = u[k];
        j.set_column(k, &((f1 - &f0) / h));
    }
    j
}

/// `|det J(u)|` relative to the leading-order Jacobian `diag(6 / u_lead^2)`.
pub fn saddle_node_margin(outer: &OuterMap, delta: f64, u: &[f64]) -> Result<f64> {
    let lead = amplitudes_leading(outer)?;
    let j = jacobian_fd(outer, delta, u);
    let norm: f64 = lead.iter().map(|ul| 6.0 / (ul * ul)).product();
    Ok((j.determinant() / norm).abs())
}

/// Solves `F(u) = 0` by damped Newton. `warm` overrides the default initial guess. A
/// minus-branch request only accepts roots with every pulse on the minus branch; a warm
/// start that lands elsewhere is retried from the leading-order guess.
pub fn solve_amplitudes(outer: &OuterMap, delta: f64, warm: Option<&[f64]>, opts: &NewtonOptions) -> Result<AmplitudeSolve> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be non-negative, got {delta}")));
    }
    let lead = amplitudes_leading(outer)?;
    if delta == 0.0 {
        return Ok(AmplitudeSolve { u: lead, residual: 0.0, iterations: 0, branch: Branch::Minus, margin: 1.0 });
    }
    let sol = newton(outer, delta, warm, &lead, opts)?;
    if opts.branch == Branch::Plus || sol.branch == Branch::Minus {
        return Ok(sol);
    }
    if warm.is_some() {
        let cold = newton(outer, delta, None, &lead, opts)?;
        if cold.branch == Branch::Minus {
            return Ok(cold);
        }
    }
    Err(Error::NoSolution("amplitude Newton converged off the minus branch; delta may be past the fold".into()))
}

fn newton(outer: &OuterMap, delta: f64, warm: Option<&[f64]>, lead: &[f64], opts: &NewtonOptions) -> Result<AmplitudeSolve> {
    let mut u: Vec<f64> = match (warm, opts.branch) {
        (Some(w), _) => {
            if w.len() != lead.len() {
                return Err(Error::invalid("warm start has the wrong length"));
            }
            w.to_vec()
        }
        (None, Branch::Minus) => lead.to_vec(),
        (None, Branch::Plus) => lead
            .iter()
            .map(|ul| {
                // Plus root of the decoupled quadratic g (1 - delta u) u = 6 with g = 6 / ul.
                let disc = 1.0 - 4.0 * delta * ul;
                (1.0 + disc.max(0.0).sqrt()) / (2.0 * delta)
            })
            .collect(),
    };
    let norm = |f: &DVector<f64>| f.amax();
    let mut f = residual(outer, delta, &u);
    let mut it = 0;
    while norm(&f) > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::not_converged("amplitude Newton", it, norm(&f)));
        }
        it += 1;
        let j = jacobian_fd(outer, delta, &u);
        let step = j
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::NoSolution("singular amplitude Jacobian".into()))?;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a + lam * d).collect();
            if trial.iter().all(|v| *v > 0.0 && v.is_finite()) {
                let ft = residual(outer, delta, &trial);
                if norm(&ft) < norm(&f) {
                    u = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            // Stalling within a hundred tolerances is the finite-difference noise floor.
            if norm(&f) < 1e2 * opts.tol {
                break;
            }
            return Err(Error::NoSolution(format!(
                "amplitude Newton stalled at residual {:e}; delta may be past the fold",
                norm(&f)
            )));
        }
    }
    // Pulse j sits on the minus branch when dF_j/du_j > 0, as for the smaller homoclinic root.
    // Strongly coupled patterns can break that sign test while every pulse keeps
    // delta u < 1/2, the minus side of its own quadratic, so either test suffices.
    let j = jacobian_fd(outer, delta, &u);
    let norm_lead: f64 = lead.iter().map(|ul| 6.0 / (ul * ul)).product();
    let sm = j.determinant() / norm_lead;
    let minus = (sm > 0.0 && (0..u.len()).all(|k| j[(k, k)] > 0.0)) || u.iter().all(|v| delta * v < 0.5);
    let branch = if minus { Branch::Minus } else { Branch::Plus };
    Ok(AmplitudeSolve { residual: norm(&f), iterations: it, branch, margin: sm.abs(), u })
}

/// Both roots of the single-pulse condition `s (1 - delta u) = 6 / u`, `(u_minus, u_plus)`.
pub fn homoclinic_amplitudes(delta: f64, h: f64) -> Option<(f64, f64)> {
    let s = s_of(h);
    if delta == 0.0 {
        return Some((6.0 / s, f64::INFINITY));
    }
    let disc = 1.0 - 24.0 * delta / s;
    if disc < 0.0 {
        return None;
    }
    let r = disc.sqrt();
    // Cancellation-free form of (1 - r) / (2 delta).
    Some((12.0 / (s * (1.0 + r)), (1.0 + r) / (2.0 * delta)))
}

/// Fold of the single-pulse amplitude, `delta_c = s / 24`.
pub fn homoclinic_fold(h: f64) -> f64 {
    s_of(h) / 24.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, Terrain};
    use crate::outer::OuterOptions;

    fn single(h: f64) -> OuterMap {
        OuterMap::build(&[0.0], &Domain::Unbounded, &Terrain::slope(h), &OuterOptions::default()).unwrap()
    }

    #[test]
    fn leading_amplitudes_on_the_line() {
        for h in [0.0, 1.0, -2.0] {
            let u = amplitudes_leading(&single(h)).unwrap();
            assert!((u[0] - 6.0 / s_of(h)).abs() < 1e-14);
        }
    }

    #[test]
    fn newton_finds_the_minus_root() {
        let h = 0.5;
        let delta = 0.05;
        let sol = solve_amplitudes(&single(h), delta, None, &NewtonOptions::default()).unwrap();
        let (um, _) = homoclinic_amplitudes(delta, h).unwrap();
        assert!((sol.u[0] - um).abs() < 1e-10);
        assert_eq!(sol.branch, Branch::Minus);
        let plus = NewtonOptions { branch: Branch::Plus, ..Default::default() };
        let sol = solve_amplitudes(&single(h), delta, None, &plus).unwrap();
        assert!((sol.u[0] - homoclinic_amplitudes(delta, h).unwrap().1).abs() < 1e-9);
        assert_eq!(sol.branch, Branch::Plus);
    }

    #[test]
    fn newton_fails_past_the_fold() {
        let dc = homoclinic_fold(0.0);
        assert!((dc - 1.0 / 12.0).abs() < 1e-15);
        assert!(solve_amplitudes(&single(0.0), dc * 1.01, None, &NewtonOptions::default()).is_err());
    }

    #[test]
    fn margin_vanishes_at_the_fold() {
        let h = 0.0;
        let dc = homoclinic_fold(h);
        let u = 1.0 / (2.0 * dc);
        assert!(saddle_node_margin(&single(h), dc, &[u]).unwrap() < 1e-3);
        let sol = solve_amplitudes(&single(h), 1e-6, None, &NewtonOptions::default()).unwrap();
        assert!((sol.margin - 1.0).abs() < 1e-3);
    }
}

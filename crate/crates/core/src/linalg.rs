//! Banded solvers shared by the outer, inner and PDE solvers.

use std::ops::{Add, Div, Mul, Sub};

/// Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal<T>(sub: &[T], diag: &[T], sup: &[T], rhs: &[T]) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Div<Output = T>,
{
    let n = diag.len();
    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    c.push(sup[0] / diag[0]);
    d.push(rhs[0] / diag[0]);
    for i in 1..n {
        let w = diag[i] - sub[i] * c[i - 1];
        c.push(sup[i] / w);
        d.push((rhs[i] - sub[i] * d[i - 1]) / w);
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - c[i] * d[i + 1];
    }
    d
}

/// Precomputed factorisation of a constant tridiagonal matrix.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    sub: Vec<f64>,
    inv: Vec<f64>,
    c: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Self {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut inv = vec![0.0; n];
        inv[0] = 1.0 / diag[0];
        c[0] = sup[0] * inv[0];
        for i in 1..n {
            inv[i] = 1.0 / (diag[i] - sub[i] * c[i - 1]);
            c[i] = sup[i] * inv[i];
        }
        Tridiagonal { sub: sub.to_vec(), inv, c }
    }

    pub fn solve_in_place(&self, d: &mut [f64]) {
        let n = d.len();
        d[0] *= self.inv[0];
        for i in 1..n {
            d[i] = (d[i] - self.sub[i] * d[i - 1]) * self.inv[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.c[i] * d[i + 1];
        }
    }
}

/// Cyclic tridiagonal solve via Sherman-Morrison. `sub[0]` couples row 0 to the
/// last unknown and `sup[n-1]` couples the last row to unknown 0.
pub fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &d, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &d, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Banded matrix with `kl` sub- and `ku` super-diagonals, factorised by Gaussian
/// elimination with partial pivoting. Pivoting widens the upper band to `kl + ku`.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    /// Upper bandwidth after pivoting.
    ku: usize,
    /// Row `i` stores columns `i - kl ..= i + ku`.
    data: Vec<f64>,
    piv: Vec<usize>,
    factored: bool,
}

impl BandLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ku = kl + ku;
        BandLu { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)], piv: (0..n).collect(), factored: false }
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || j >= self.n {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` to entry `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j).expect("entry outside the band");
        self.data[k] += v;
    }

    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.n;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(k);
            }
            self.piv[k] = p;
            let cols = (k + self.ku).min(n - 1);
            if p != k {
                for j in k..=cols {
                    let (a, b) = (self.get(k, j), self.get(p, j));
                    if let Some(x) = self.idx(k, j) {
                        self.data[x] = b;
                    }
                    if let Some(x) = self.idx(p, j) {
                        self.data[x] = a;
                    }
                }
            }
            let d = self.get(k, k);
            for i in k + 1..=last {
                let f = self.get(i, k) / d;
                if f == 0.0 {
                    continue;
                }
                let x = self.idx(i, k).unwrap();
                self.data[x] = f;
                for j in k + 1..=cols {
                    let akj = self.get(k, j);
                    if akj != 0.0 {
                        let y = self.idx(i, j).unwrap();
                        self.data[y] -= f * akj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "matrix not factorised");
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            for i in k + 1..=last {
                b[i] -= self.get(i, k) * b[k];
            }
        }
        for k in (0..n).rev() {
            let cols = (k + self.ku).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=cols {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
    }
}

//! Banded matrices and LU factorization with partial pivoting.

use crate::error::{KdvfError, Result};

/// Square matrix with `kl` sub-diagonals and `ku` super-diagonals, stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandedMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Panics if (i, j) lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n && self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    /// Returns a·self + b·I.
    pub fn scale_shift(&self, a: f64, b: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= a);
        for i in 0..self.n {
            m.add(i, i, b);
        }
        m
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn factor(&self) -> Result<BandedLu> {
        BandedLu::new(self)
    }
}

/// LU factors of a banded matrix; U has bandwidth kl + ku after pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    // row i of U holds columns i..i+width
    u: Vec<f64>,
    mult: Vec<f64>,
    perm: Vec<usize>,
}

impl BandedLu {
    fn new(a: &BandedMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let width = kl + ku + 1;
        // working rows: row i stores columns i-kl .. i+ku+kl
        let w = 2 * kl + ku + 1;
        let mut work = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        for i in 0..n {
            for j in a.row_range(i) {
                work[at(i, j)] = a.get(i, j);
            }
        }
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut mult = vec![0.0; n * kl];
        let mut perm = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = work[at(k, k)].abs();
            for i in k + 1..=last {
                let v = work[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(KdvfError::NumericalSetup(format!("singular banded matrix at pivot {k}")));
            }
            perm[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    work.swap(at(k, j), at(p, j));
                }
            }
            let piv = work[at(k, k)];
            for i in k + 1..=last {
                let l = work[at(i, k)] / piv;
                mult[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    for j in k + 1..=cmax {
                        work[at(i, j)] -= l * work[at(k, j)];
                    }
                }
                work[at(i, k)] = 0.0;
            }
        }
        let mut u = vec![0.0; n * width];
        for i in 0..n {
            for j in i..(i + width).min(n) {
                u[i * width + (j - i)] = work[at(i, j)];
            }
        }
        Ok(BandedLu { n, kl, width, u, mult, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, width) = (self.n, self.kl, self.width);
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.mult[k * kl + (i - k - 1)] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + width).min(n) {
                s -= self.u[i * width + (j - i)] * b[j];
            }
            b[i] = s / self.u[i * width];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

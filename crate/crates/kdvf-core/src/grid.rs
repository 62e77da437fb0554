//! Uniform grid on [0, L], nodal fields, quadrature and finite differences.

use crate::error::{KdvfError, Result};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    l: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(KdvfError::Config(format!("domain length must be positive, got {l}")));
        }
        if n < MIN_CELLS {
            return Err(KdvfError::Config(format!("need at least {MIN_CELLS} cells, got {n}")));
        }
        Ok(Grid { l, n, h: l / n as f64 })
    }

    pub fn length(&self) -> f64 {
        self.l
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    /// Number of interior nodes 1..n-1.
    pub fn interior(&self) -> usize {
        self.n - 1
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n {
            self.l
        } else {
            i as f64 * self.h
        }
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.x(i)).collect()
    }
}

pub fn make_grid(l: f64, n: usize) -> Result<Grid> {
    Grid::new(l, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(KdvfError::Precondition(format!(
                "field has {} samples, grid has {} nodes",
                values.len(),
                grid.nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KdvfError::Precondition("field has non-finite samples".into()));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field { grid, values: vec![0.0; grid.nodes()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Field { grid, values: grid.coordinates().into_iter().map(f).collect() }
    }

    /// Builds a field from interior samples, with zero boundary values.
    pub fn from_interior(grid: Grid, interior: &[f64]) -> Self {
        assert_eq!(interior.len(), grid.interior());
        let mut values = Vec::with_capacity(grid.nodes());
        values.push(0.0);
        values.extend_from_slice(interior);
        values.push(0.0);
        Field { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.grid.n]
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|v| a * v).collect() }
    }

    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        assert_eq!(self.values.len(), other.values.len());
        Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L² norm via the grid quadrature.
    pub fn norm(&self) -> f64 {
        integrate_product(self, self).max(0.0).sqrt()
    }
}

/// Composite Simpson weights; for odd n the last three cells use Simpson's 3/8 rule.
pub fn quadrature_weights(grid: Grid) -> Vec<f64> {
    let n = grid.cells();
    let h = grid.h();
    let mut w = vec![0.0; n + 1];
    let simpson_cells = if n % 2 == 0 { n } else { n - 3 };
    let mut i = 0;
    while i < simpson_cells {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if n % 2 == 1 {
        let s = n - 3;
        let c = 3.0 * h / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

pub fn integrate(f: &Field) -> f64 {
    quadrature_weights(f.grid()).iter().zip(f.values()).map(|(w, v)| w * v).sum()
}

pub fn integrate_product(f: &Field, g: &Field) -> f64 {
    quadrature_weights(f.grid())
        .iter()
        .zip(f.values().iter().zip(g.values()))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

/// Weights of the finite-difference formula for the `order`-th derivative at
/// offset 0 from samples at the given integer offsets (in units of h).
pub fn fd_weights(offsets: &[f64], order: usize, h: f64) -> Vec<f64> {
    let m = offsets.len();
    let a = DMatrix::from_fn(m, m, |r, c| offsets[c].powi(r as i32));
    let mut b = DVector::zeros(m);
    b[order] = (1..=order).product::<usize>() as f64;
    let sol = a.lu().solve(&b).expect("distinct stencil offsets");
    sol.iter().map(|c| c / h.powi(order as i32)).collect()
}

fn apply_stencil(v: &[f64], start: usize, weights: &[f64]) -> f64 {
    weights.iter().enumerate().map(|(k, c)| c * v[start + k]).sum()
}

/// Nodal derivative of order 1, 2 or 3. Interior nodes use central
/// second-order stencils; nodes near the ends use shifted one-sided
/// second-order stencils.
pub fn diff(f: &Field, order: usize) -> Result<Field> {
    let grid = f.grid();
    let n = grid.cells();
    let h = grid.h();
    let v = f.values();
    let mut out = vec![0.0; n + 1];
    match order {
        1 => {
            let left = fd_weights(&[0.0, 1.0, 2.0], 1, h);
            let right = fd_weights(&[-2.0, -1.0, 0.0], 1, h);
            out[0] = apply_stencil(v, 0, &left);
            out[n] = apply_stencil(v, n - 2, &right);
            for i in 1..n {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
        }
        2 => {
            let left = fd_weights(&[0.0, 1.0, 2.0, 3.0], 2, h);
            let right = fd_weights(&[-3.0, -2.0, -1.0, 0.0], 2, h);
            out[0] = apply_stencil(v, 0, &left);
            out[n] = apply_stencil(v, n - 3, &right);
            for i in 1..n {
                out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
            }
        }
        3 => {
            for (i, start) in [(0usize, 0usize), (1, 0), (n - 1, n - 4), (n, n - 4)] {
                let offs: Vec<f64> = (0..5).map(|k| start as f64 + k as f64 - i as f64).collect();
                out[i] = apply_stencil(v, start, &fd_weights(&offs, 3, h));
            }
            for i in 2..n - 1 {
                out[i] = (v[i + 2] - 2.0 * v[i + 1] + 2.0 * v[i - 1] - v[i - 2]) / (2.0 * h * h * h);
            }
        }
        _ => return Err(KdvfError::Precondition(format!("unsupported derivative order {order}"))),
    }
    Field::new(grid, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Three-point one-sided slope at an end of the interval.
pub fn boundary_slope(f: &Field, side: Side) -> f64 {
    let v = f.values();
    let h = f.grid().h();
    let n = f.grid().cells();
    match side {
        Side::Left => (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h),
        Side::Right => (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h),
    }
}

pub fn default_critical_tol(l: f64) -> f64 {
    1e-9 * (1.0 + l)
}

/// Member of the critical set for the index pair (k, l).
pub fn critical_value(k: u32, l: u32) -> f64 {
    let (k, l) = (k as f64, l as f64);
    2.0 * PI * ((k * k + k * l + l * l) / 3.0).sqrt()
}

/// Searches 0 <= k <= l <= k_max for a critical length within `tol` of `l_len`.
pub fn is_critical_length(l_len: f64, tol: f64, k_max: u32) -> Option<(u32, u32)> {
    for k in 0..=k_max {
        if critical_value(k, k) > l_len + tol {
            break;
        }
        for l in k..=k_max {
            let v = critical_value(k, l);
            if v > l_len + tol {
                break;
            }
            if (v - l_len).abs() < tol {
                return Some((k, l));
            }
        }
    }
    None
}

/// Enough index range to cover every critical value up to `l_len`.
pub fn k_max_for(l_len: f64) -> u32 {
    ((l_len * 3f64.sqrt() / (2.0 * PI)).ceil() as u32).max(1) + 1
}

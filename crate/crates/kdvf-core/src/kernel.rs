//! Kernels of the Fredholm transform used by the boundary observer.
//!
//! On the interior grid the kernel equations become the matrix equation
//!
//! ```text
//! K S − S K − σ K = −λ I − m cᵀ,    cᵀ K = 0,
//! ```
//!
//! with S the plant operator of [`crate::kdv::SpatialOperator`], c the output
//! functional, K = h·kernel, σ = +λ for P and −λ for Q. The multiplier m is the
//! kernel's boundary trace K_z(x, 0). The equation is solved in the eigenbasis
//! of S, where the constraint reduces to a Cauchy system for m.

use crate::eigen::{Eigen, C64};
use crate::error::{KdvfError, Result};
use crate::grid::{quadrature_weights, Field, Grid};
use crate::kdv::{output_vector, SpatialOperator};
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    P,
    Q,
    G,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::P => "P",
            KernelKind::Q => "Q",
            KernelKind::G => "G",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = KdvfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(KernelKind::P),
            "Q" => Ok(KernelKind::Q),
            "G" => Ok(KernelKind::G),
            _ => Err(KdvfError::Config(format!("unknown kernel kind {s}"))),
        }
    }
}

/// Kernel sampled on the nodes of [0, L]²; entry (i, j) is K(x_i, z_j).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub kind: KernelKind,
    pub lambda: f64,
    pub grid: Grid,
    pub values: DMatrix<f64>,
    /// Boundary trace K_z(x, 0) delivered by the solve, when known.
    pub trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSolveReport {
    pub lambda: f64,
    /// Relative Frobenius residual of the discrete kernel equation.
    pub interior_residual: f64,
    /// Largest diagonal residual relative to λ.
    pub diag_consistency: f64,
    /// Relative size of cᵀK, the discrete K_x(0, z) = 0 condition.
    pub constraint_residual: f64,
    pub refinement_ratio: Option<f64>,
}

impl Kernel2D {
    pub fn zeros(kind: KernelKind, lambda: f64, grid: Grid) -> Self {
        let m = grid.nodes();
        Kernel2D { kind, lambda, grid, values: DMatrix::zeros(m, m), trace: None }
    }

    fn from_interior(kind: KernelKind, lambda: f64, grid: Grid, k: &DMatrix<f64>, trace: Option<&DVector<f64>>) -> Self {
        let n = grid.cells();
        let h = grid.h();
        let mut values = DMatrix::zeros(n + 1, n + 1);
        values.view_mut((1, 1), (n - 1, n - 1)).copy_from(&(k / h));
        let trace = trace.map(|m| {
            let mut t = vec![0.0; n + 1];
            t[1..n].copy_from_slice(m.as_slice());
            t
        });
        Kernel2D { kind, lambda, grid, values, trace }
    }

    /// Quadrature-weighted interior block h·K(x_i, z_j), i, j = 1..n-1.
    pub fn interior_matrix(&self) -> DMatrix<f64> {
        let n = self.grid.cells();
        self.values.view((1, 1), (n - 1, n - 1)) * self.grid.h()
    }

    /// Largest magnitude on the four boundary edges of the square.
    pub fn boundary_max(&self) -> f64 {
        let n = self.grid.cells();
        let mut m = 0.0f64;
        for k in 0..=n {
            for v in [self.values[(0, k)], self.values[(n, k)], self.values[(k, 0)], self.values[(k, n)]] {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Three-point one-sided derivative in z at z = 0 (`at_end = false`) or z = L.
    pub fn z_slope(&self, at_end: bool) -> Field {
        let n = self.grid.cells();
        let h = self.grid.h();
        let v = &self.values;
        let vals = (0..=n)
            .map(|i| {
                if at_end {
                    (3.0 * v[(i, n)] - 4.0 * v[(i, n - 1)] + v[(i, n - 2)]) / (2.0 * h)
                } else {
                    (-3.0 * v[(i, 0)] + 4.0 * v[(i, 1)] - v[(i, 2)]) / (2.0 * h)
                }
            })
            .collect();
        Field::new(self.grid, vals).expect("finite kernel")
    }

    /// Boundary trace K_z(·, 0): the solve's multiplier when present, otherwise the stencil.
    pub fn trace_field(&self) -> Field {
        match &self.trace {
            Some(t) => Field::new(self.grid, t.clone()).expect("finite trace"),
            None => self.z_slope(false),
        }
    }
}

/// Solves K A − A K − σK = −λI − m fᵀ with fᵀK = 0 for (K, m).
fn solve_row(a: &DMatrix<f64>, sigma: f64, f: &[f64], lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a.nrows();
    let eig = Eigen::new(a).map_err(|e| KdvfError::KernelSolve(e.to_string()))?;
    let v = &eig.vectors;
    let mu = &eig.values;
    let fc = DVector::from_iterator(n, f.iter().map(|x| C64::new(*x, 0.0)));
    let fh: DVector<C64> = v.transpose() * fc;
    let fmax = fh.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let fmin = fh.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()));
    if !(fmin > 1e-13 * fmax) {
        return Err(KdvfError::KernelSolve(format!(
            "output functional nearly blind to a mode (ratio {:e}); near-critical length?",
            fmin / fmax
        )));
    }
    let den = DMatrix::from_fn(n, n, |i, j| mu[j] - mu[i] - C64::new(sigma, 0.0));
    let dscale = mu.iter().fold(0.0f64, |m, z| m.max(z.norm())) + sigma.abs();
    if den.iter().any(|d| d.norm() < 1e-14 * dscale) {
        return Err(KdvfError::KernelSolve("spectrum resonant with the shift".into()));
    }
    // Σ_a z_a / den[a, b] = λ/σ for every b
    let cauchy = DMatrix::from_fn(n, n, |b, a| C64::new(1.0, 0.0) / den[(a, b)]);
    let rhs = DVector::from_element(n, C64::new(lambda / sigma, 0.0));
    let z = cauchy
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| KdvfError::KernelSolve("singular multiplier system".into()))?;
    let mh = z.component_div(&fh);
    let y = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { C64::new(lambda, 0.0) } else { C64::new(0.0, 0.0) };
        -(diag + mh[i] * fh[j]) / den[(i, j)]
    });
    let kc = v * y * &eig.inverse;
    let k = kc.map(|z| z.re);
    let m = (v * mh).map(|z| z.re);
    if k.iter().chain(m.iter()).any(|x| !x.is_finite()) {
        return Err(KdvfError::KernelSolve("non-finite kernel".into()));
    }
    Ok((k, m))
}

fn report(a: &DMatrix<f64>, sigma: f64, f: &[f64], lambda: f64, k: &DMatrix<f64>, m: &DVector<f64>) -> KernelSolveReport {
    let n = a.nrows();
    let fv = DVector::from_column_slice(f);
    let source = DMatrix::<f64>::identity(n, n) * lambda + m * fv.transpose();
    let r = k * a - a * k - k * sigma + &source;
    let diag = (0..n).fold(0.0f64, |acc, i| acc.max(r[(i, i)].abs())) / lambda;
    let ck = fv.transpose() * k;
    KernelSolveReport {
        lambda,
        interior_residual: r.norm() / source.norm(),
        diag_consistency: diag,
        constraint_residual: ck.norm() / (fv.norm() * k.norm()).max(f64::MIN_POSITIVE),
        refinement_ratio: None,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(KdvfError::Config(format!("lambda must be positive, got {lambda}")))
    }
}

fn solve_kind(kind: KernelKind, lambda: f64, grid: Grid) -> Result<(Kernel2D, KernelSolveReport)> {
    check_lambda(lambda)?;
    let s = SpatialOperator::new(grid, None).dense();
    let c = output_vector(grid);
    let sigma = match kind {
        KernelKind::Q => -lambda,
        _ => lambda,
    };
    let (k, m) = solve_row(&s, sigma, &c, lambda)?;
    let kernel = Kernel2D::from_interior(kind, lambda, grid, &k, Some(&m));
    let rep = kernel_report(&kernel)?;
    Ok((kernel, rep))
}

/// Recomputes the residual report of a P or Q kernel from its stored values
/// and trace.
pub fn kernel_report(kernel: &Kernel2D) -> Result<KernelSolveReport> {
    let sigma = match kernel.kind {
        KernelKind::P => kernel.lambda,
        KernelKind::Q => -kernel.lambda,
        KernelKind::G => return Err(KdvfError::Precondition("reflected kernels carry no trace".into())),
    };
    let trace = kernel
        .trace
        .as_ref()
        .ok_or_else(|| KdvfError::Precondition("kernel has no boundary trace".into()))?;
    let grid = kernel.grid;
    let n = grid.cells();
    let s = SpatialOperator::new(grid, None).dense();
    let c = output_vector(grid);
    let m = DVector::from_column_slice(&trace[1..n]);
    Ok(report(&s, sigma, &c, kernel.lambda, &kernel.interior_matrix(), &m))
}

/// Kernel P of the forward transform; its trace P_z(·, 0) is the observer gain.
#[allow(non_snake_case)]
pub fn solve_kernel_P(lambda: f64, grid: Grid) -> Result<(Kernel2D, KernelSolveReport)> {
    solve_kind(KernelKind::P, lambda, grid)
}

/// Kernel Q of the inverse transform.
#[allow(non_snake_case)]
pub fn solve_kernel_Q(lambda: f64, grid: Grid) -> Result<(Kernel2D, KernelSolveReport)> {
    solve_kind(KernelKind::Q, lambda, grid)
}

/// Kernel G of the reflected system, solved on the reflected operator and
/// mapped back to the (x, z) square. Related to P by G(L−z, L−x) = −P(x, z).
#[allow(non_snake_case)]
pub fn solve_kernel_G(lambda: f64, grid: Grid) -> Result<(Kernel2D, KernelSolveReport)> {
    check_lambda(lambda)?;
    let s = SpatialOperator::new(grid, None).dense();
    let dim = s.nrows();
    let sr = DMatrix::from_fn(dim, dim, |i, j| s[(dim - 1 - i, dim - 1 - j)]);
    let mut c = output_vector(grid);
    c.reverse();
    let (z, m) = solve_row(&sr, lambda, &c, lambda)?;
    let rep = report(&sr, lambda, &c, lambda, &z, &m);
    let kg = -z.transpose();
    Ok((Kernel2D::from_interior(KernelKind::G, lambda, grid, &kg, None), rep))
}

pub fn gain_p(p: &Kernel2D) -> Field {
    p.trace_field()
}

fn check_grid(k: &Kernel2D, f: &Field) -> Result<()> {
    if k.grid == f.grid() {
        Ok(())
    } else {
        Err(KdvfError::Precondition("kernel and field live on different grids".into()))
    }
}

fn kernel_integral(k: &Kernel2D, f: &Field) -> Vec<f64> {
    // kernels vanish on z = 0 and z = L, so the trapezoid rule reduces to h·Σ
    let h = k.grid.h();
    let v = DVector::from_column_slice(f.values());
    (&k.values * v * h).iter().copied().collect()
}

/// w = g − ∫ P(·, z) g(z) dz.
#[allow(non_snake_case)]
pub fn apply_Pi_bar(p: &Kernel2D, g: &Field) -> Result<Field> {
    check_grid(p, g)?;
    let int = kernel_integral(p, g);
    Field::new(g.grid(), g.values().iter().zip(int).map(|(a, b)| a - b).collect())
}

/// γ = w + ∫ Q(·, z) w(z) dz.
#[allow(non_snake_case)]
pub fn apply_Pi_bar_inv(q: &Kernel2D, w: &Field) -> Result<Field> {
    check_grid(q, w)?;
    let int = kernel_integral(q, w);
    Field::new(w.grid(), w.values().iter().zip(int).map(|(a, b)| a + b).collect())
}

/// Extremal squared singular values of the inverse transform in the
/// quadrature-weighted L² norm: c_under‖w‖² ≤ ‖Π̄⁻¹w‖² ≤ c_bar‖w‖².
pub fn operator_bounds(q: &Kernel2D) -> Result<(f64, f64)> {
    let grid = q.grid;
    let n = grid.cells();
    let wts = quadrature_weights(grid);
    let sq: Vec<f64> = wts[1..n].iter().map(|w| w.sqrt()).collect();
    let k = q.interior_matrix();
    let b = DMatrix::from_fn(n - 1, n - 1, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        sq[i] * (id + k[(i, j)]) / sq[j]
    });
    let sv = b.singular_values();
    let smin = sv.min();
    if !(smin > 1e-10) {
        return Err(KdvfError::DegenerateTransform(smin));
    }
    // the boundary nodes are mapped by the identity
    Ok(((smin * smin).min(1.0), (sv.max().powi(2)).max(1.0)))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn kernel_header(k: &Kernel2D) -> String {
    format!(
        "# kernel {} lambda={} L={} n={}",
        k.kind.as_str(),
        fmt17(k.lambda),
        fmt17(k.grid.length()),
        k.grid.cells()
    )
}

/// CSV text: header line, one matrix row per line, then an optional trace line.
pub fn kernel_to_csv(k: &Kernel2D) -> String {
    let mut s = kernel_header(k);
    s.push('\n');
    for i in 0..k.values.nrows() {
        let row: Vec<String> = k.values.row(i).iter().map(|v| fmt17(*v)).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    if let Some(t) = &k.trace {
        let row: Vec<String> = t.iter().map(|v| fmt17(*v)).collect();
        let _ = writeln!(s, "# trace,{}", row.join(","));
    }
    s
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| KdvfError::Config(format!("bad {what}: {s:?}")))
}

pub fn kernel_from_csv(text: &str) -> Result<Kernel2D> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| KdvfError::Config("empty kernel file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "#" || parts[1] != "kernel" {
        return Err(KdvfError::Config(format!("bad kernel header: {header}")));
    }
    let kind: KernelKind = parts[2].parse()?;
    let field = |p: &str, key: &str| -> Result<String> {
        p.strip_prefix(key)
            .map(str::to_string)
            .ok_or_else(|| KdvfError::Config(format!("expected {key} in kernel header")))
    };
    let lambda = parse_f64(&field(parts[3], "lambda=")?, "lambda")?;
    let l = parse_f64(&field(parts[4], "L=")?, "L")?;
    let n: usize = field(parts[5], "n=")?
        .parse()
        .map_err(|_| KdvfError::Config("bad n in kernel header".into()))?;
    let grid = Grid::new(l, n)?;
    let mut values = DMatrix::zeros(n + 1, n + 1);
    let mut trace = None;
    let mut row = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# trace,") {
            let t = rest.split(',').map(|v| parse_f64(v, "trace value")).collect::<Result<Vec<_>>>()?;
            if t.len() != n + 1 {
                return Err(KdvfError::Config("kernel trace has wrong length".into()));
            }
            trace = Some(t);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if row > n {
            return Err(KdvfError::Config("too many kernel rows".into()));
        }
        let vals = line.split(',').map(|v| parse_f64(v, "kernel value")).collect::<Result<Vec<_>>>()?;
        if vals.len() != n + 1 {
            return Err(KdvfError::Config(format!("kernel row {row} has {} entries", vals.len())));
        }
        for (j, v) in vals.into_iter().enumerate() {
            values[(row, j)] = v;
        }
        row += 1;
    }
    if row != n + 1 {
        return Err(KdvfError::Config(format!("kernel has {row} rows, expected {}", n + 1)));
    }
    Ok(Kernel2D { kind, lambda, grid, values, trace })
}

pub fn write_kernel(path: &Path, k: &Kernel2D) -> std::io::Result<()> {
    std::fs::write(path, kernel_to_csv(k))
}

pub fn read_kernel(path: &Path) -> Result<Kernel2D> {
    let text = std::fs::read_to_string(path).map_err(|e| KdvfError::Config(format!("{}: {e}", path.display())))?;
    kernel_from_csv(&text)
}

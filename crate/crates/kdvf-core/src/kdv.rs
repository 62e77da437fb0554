//! Finite-difference time stepping for the linear and nonlinear KdV equations
//! with w(0)=w(L)=0, w_x(L)=d₂ and distributed input d₁.

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{KdvfError, Result};
use crate::grid::{boundary_slope, fd_weights, integrate_product, Field, Grid, Side};
use crate::series::{Snapshot, TimeSeries};
use nalgebra::DMatrix;
use std::sync::Arc;

pub const BLOW_UP_THRESHOLD: f64 = 1e6;
const KL: usize = 2;
const KU: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdvParams {
    pub grid: Grid,
    pub dt: f64,
    pub theta: f64,
    pub nonlinear: bool,
}

impl KdvParams {
    pub fn new(grid: Grid, dt: f64, theta: f64, nonlinear: bool) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KdvfError::Config(format!("dt must be positive, got {dt}")));
        }
        if !(0.5..=1.0).contains(&theta) {
            return Err(KdvfError::Config(format!("theta must lie in [0.5, 1], got {theta}")));
        }
        Ok(KdvParams { grid, dt, theta, nonlinear })
    }

    pub fn linear(grid: Grid, dt: f64) -> Result<Self> {
        Self::new(grid, dt, 1.0, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdvState {
    pub t: f64,
    pub w: Field,
}

/// Coefficients of the perturbed equation w_t + w_x + w_xxx + a w + b w_x = d₁.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableCoeffs {
    pub a: Field,
    pub b: Field,
}

#[derive(Clone)]
pub enum Distributed {
    Zero,
    Constant(Field),
    TimeVarying(Arc<dyn Fn(f64) -> Field + Send + Sync>),
}

#[derive(Clone)]
pub enum Boundary {
    Zero,
    Constant(f64),
    TimeVarying(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct InputSignals {
    pub d1: Distributed,
    pub d2: Boundary,
}

impl InputSignals {
    pub fn zero() -> Self {
        InputSignals { d1: Distributed::Zero, d2: Boundary::Zero }
    }

    pub fn constant(d1: Field, d2: f64) -> Self {
        InputSignals { d1: Distributed::Constant(d1), d2: Boundary::Constant(d2) }
    }

    pub fn d1_at(&self, t: f64) -> Option<Field> {
        match &self.d1 {
            Distributed::Zero => None,
            Distributed::Constant(f) => Some(f.clone()),
            Distributed::TimeVarying(f) => Some(f(t)),
        }
    }

    pub fn d2_at(&self, t: f64) -> f64 {
        match &self.d2 {
            Boundary::Zero => 0.0,
            Boundary::Constant(v) => *v,
            Boundary::TimeVarying(f) => f(t),
        }
    }
}

impl std::fmt::Debug for InputSignals {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("InputSignals { .. }")
    }
}

/// Semi-discrete operator on interior nodes: w' = A w + g d₂ + d₁.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    pub grid: Grid,
    pub a: BandedMatrix,
    pub g: Vec<f64>,
}

/// Third-derivative weights at node 1 over nodes 0..5.
fn d3_closure(h: f64) -> Vec<f64> {
    let offs: Vec<f64> = (0..6).map(|k| k as f64 - 1.0).collect();
    fd_weights(&offs, 3, h)
}

impl SpatialOperator {
    pub fn new(grid: Grid, coeffs: Option<&VariableCoeffs>) -> Self {
        let n = grid.cells();
        let h = grid.h();
        let dim = n - 1;
        let mut a = BandedMatrix::zeros(dim, KL, KU);
        let mut g = vec![0.0; dim];
        let closure = d3_closure(h);
        let put = |a: &mut BandedMatrix, row: usize, node: usize, v: f64| {
            if (1..n).contains(&node) {
                a.add(row, node - 1, v);
            }
        };
        for i in 1..n {
            let r = i - 1;
            put(&mut a, r, i + 1, -0.5 / h);
            put(&mut a, r, i - 1, 0.5 / h);
            if i == 1 {
                for (k, c) in closure.iter().enumerate() {
                    put(&mut a, r, k, -c);
                }
                continue;
            }
            let s = 0.5 / (h * h * h);
            for (node, c) in [(i + 2, -s), (i + 1, 2.0 * s), (i - 1, -2.0 * s), (i - 2, s)] {
                if node == n + 1 {
                    // ghost value w_{n+1} = w_{n-1} + 2h d₂
                    put(&mut a, r, n - 1, c);
                    g[r] += 2.0 * h * c;
                } else {
                    put(&mut a, r, node, c);
                }
            }
        }
        if let Some(cf) = coeffs {
            for i in 1..n {
                let r = i - 1;
                let (ai, bi) = (cf.a.values()[i], cf.b.values()[i]);
                put(&mut a, r, i, -ai);
                put(&mut a, r, i + 1, -bi * 0.5 / h);
                put(&mut a, r, i - 1, bi * 0.5 / h);
            }
        }
        SpatialOperator { grid, a, g }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.a.to_dense()
    }

    /// A u + g d₂ on interior values.
    pub fn apply(&self, u: &[f64], d2: f64) -> Vec<f64> {
        let mut v = self.a.matvec(u);
        v.iter_mut().zip(&self.g).for_each(|(x, gi)| *x += gi * d2);
        v
    }
}

/// Coefficients (c₁, c₂) of the discrete output y = c₁ w₁ + c₂ w₂ (w₀ = 0).
pub fn output_weights(grid: Grid) -> [f64; 2] {
    let h = grid.h();
    [2.0 / h, -0.5 / h]
}

/// Output functional as a vector on interior nodes.
pub fn output_vector(grid: Grid) -> Vec<f64> {
    let mut c = vec![0.0; grid.interior()];
    let [c1, c2] = output_weights(grid);
    c[0] = c1;
    c[1] = c2;
    c
}

/// Skew-symmetric discretization of w w_x on interior nodes.
pub fn nonlinear_term(w: &[f64], h: f64) -> Vec<f64> {
    let n = w.len() - 1;
    (1..n)
        .map(|i| {
            let (wm, w0, wp) = (w[i - 1], w[i], w[i + 1]);
            (w0 * (wp - wm) + (wp * wp - wm * wm)) / (6.0 * h)
        })
        .collect()
}

/// Factorized θ-step (I − θ dt A) u⁺ = (I + (1−θ) dt A) u + dt·forcing.
#[derive(Debug, Clone)]
pub struct LinearStepOperator {
    pub op: SpatialOperator,
    pub dt: f64,
    pub theta: f64,
    explicit: BandedMatrix,
    lu: BandedLu,
}

pub fn build_linear_system(params: &KdvParams, coeffs: Option<&VariableCoeffs>) -> Result<LinearStepOperator> {
    let op = SpatialOperator::new(params.grid, coeffs);
    let implicit = op.a.scale_shift(-params.theta * params.dt, 1.0);
    let explicit = op.a.scale_shift((1.0 - params.theta) * params.dt, 1.0);
    let lu = implicit
        .factor()
        .map_err(|e| KdvfError::NumericalSetup(format!("implicit step matrix: {e}")))?;
    Ok(LinearStepOperator { op, dt: params.dt, theta: params.theta, explicit, lu })
}

impl LinearStepOperator {
    pub fn grid(&self) -> Grid {
        self.op.grid
    }

    /// Solves (I − θ dt A) x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }

    /// Applies (I − θ dt A).
    pub fn implicit_matvec(&self, u: &[f64]) -> Vec<f64> {
        let au = self.op.a.matvec(u);
        u.iter().zip(au).map(|(x, y)| x - self.theta * self.dt * y).collect()
    }

    /// One step on interior values with the boundary input at both time levels
    /// and an extra explicit forcing (already time-averaged).
    pub fn advance(&self, u: &[f64], d2_old: f64, d2_new: f64, forcing: Option<&[f64]>) -> Vec<f64> {
        let mut rhs = self.explicit.matvec(u);
        let d2 = (1.0 - self.theta) * d2_old + self.theta * d2_new;
        for (i, r) in rhs.iter_mut().enumerate() {
            *r += self.dt * self.op.g[i] * d2;
            if let Some(f) = forcing {
                *r += self.dt * f[i];
            }
        }
        self.lu.solve_in_place(&mut rhs);
        rhs
    }
}

/// Largest stable step for the explicit convection term.
pub fn convective_dt_limit(h: f64, w: &Field) -> f64 {
    h / (1.0 + 2.0 * w.max_abs())
}

pub(crate) fn check_finite(values: &[f64], t: f64) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_THRESHOLD) {
        Err(KdvfError::BlowUp { t })
    } else {
        Ok(())
    }
}

/// Time-averaged distributed forcing minus the explicit nonlinear term.
pub(crate) fn step_forcing(params: &KdvParams, inputs: &InputSignals, t: f64, w: &Field) -> Option<Vec<f64>> {
    let dim = params.grid.interior();
    let mut f: Option<Vec<f64>> = None;
    let old = inputs.d1_at(t);
    let new = inputs.d1_at(t + params.dt);
    if old.is_some() || new.is_some() {
        let mut v = vec![0.0; dim];
        for (wgt, d) in [(1.0 - params.theta, old), (params.theta, new)] {
            if let Some(d) = d {
                v.iter_mut().zip(d.interior()).for_each(|(x, y)| *x += wgt * y);
            }
        }
        f = Some(v);
    }
    if params.nonlinear {
        let nl = nonlinear_term(w.values(), params.grid.h());
        let v = f.get_or_insert_with(|| vec![0.0; dim]);
        v.iter_mut().zip(nl).for_each(|(x, y)| *x -= y);
    }
    f
}

pub fn step(state: &KdvState, params: &KdvParams, inputs: &InputSignals, op: &LinearStepOperator) -> Result<KdvState> {
    let t_new = state.t + params.dt;
    if params.nonlinear && params.dt > convective_dt_limit(params.grid.h(), &state.w) {
        return Err(KdvfError::BlowUp { t: state.t });
    }
    let forcing = step_forcing(params, inputs, state.t, &state.w);
    let u = op.advance(state.w.interior(), inputs.d2_at(state.t), inputs.d2_at(t_new), forcing.as_deref());
    check_finite(&u, t_new)?;
    Ok(KdvState { t: t_new, w: Field::from_interior(params.grid, &u) })
}

pub fn step_count(t_final: f64, dt: f64) -> usize {
    (t_final / dt).round().max(0.0) as usize
}

pub const PLANT_COLUMNS: [&str; 4] = ["t", "E", "y", "wx_L"];

fn plant_row(t: f64, w: &Field) -> Vec<f64> {
    vec![t, integrate_product(w, w), boundary_slope(w, Side::Left), boundary_slope(w, Side::Right)]
}

/// Records (t, E, y, w_x(L)) every `record_every` steps together with state
/// snapshots. A blow-up stops the run and is flagged on the series.
pub fn simulate(
    w0: &Field,
    params: &KdvParams,
    inputs: &InputSignals,
    t_final: f64,
    record_every: usize,
) -> Result<TimeSeries> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(KdvfError::Config(format!("final time must be non-negative, got {t_final}")));
    }
    if params.nonlinear && params.dt > convective_dt_limit(params.grid.h(), w0) {
        return Err(KdvfError::NumericalSetup(format!(
            "dt = {} exceeds the convective limit {}",
            params.dt,
            convective_dt_limit(params.grid.h(), w0)
        )));
    }
    let record_every = record_every.max(1);
    let op = build_linear_system(params, None)?;
    let mut series = TimeSeries::new(&PLANT_COLUMNS);
    let mut state = KdvState { t: 0.0, w: Field::from_interior(params.grid, &w0.values()[1..params.grid.cells()]) };
    series.push(plant_row(0.0, &state.w));
    series.snapshots.push(Snapshot { t: 0.0, w: state.w.values().to_vec(), eta: 0.0 });
    let steps = step_count(t_final, params.dt);
    for k in 1..=steps {
        match step(&state, params, inputs, &op) {
            Ok(mut next) => {
                next.t = k as f64 * params.dt;
                state = next;
            }
            Err(KdvfError::BlowUp { t }) => {
                series.blow_up = Some(t);
                return Ok(series);
            }
            Err(e) => return Err(e),
        }
        if k % record_every == 0 || k == steps {
            series.push(plant_row(state.t, &state.w));
            series.snapshots.push(Snapshot { t: state.t, w: state.w.values().to_vec(), eta: 0.0 });
        }
    }
    Ok(series)
}

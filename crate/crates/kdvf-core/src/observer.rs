//! Boundary observer, the observation-error system and decay-rate fits.

use crate::error::{KdvfError, Result};
use crate::grid::{boundary_slope, Field, Side};
use crate::kdv::{check_finite, nonlinear_term, step_count, step_forcing, InputSignals, KdvParams, LinearStepOperator};
use crate::kernel::Kernel2D;
use crate::lyapunov::{energy, functional_U};
use crate::series::{Snapshot, TimeSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub t: f64,
    pub w_hat: Field,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// ŵ_t + ŵ_x + ŵ_xxx (+ ŵŵ_x) + p (y − ŵ_x(0)) = 0 with ŵ_x(L) = 0; the
/// injection uses the output at the start of the step.
pub fn observer_step(
    obs: &ObserverState,
    y: f64,
    params: &KdvParams,
    p: &Field,
    nonlinear: bool,
    op: &LinearStepOperator,
) -> Result<ObserverState> {
    if p.grid() != params.grid || !y.is_finite() {
        return Err(KdvfError::Precondition("observer gain grid mismatch or non-finite output".into()));
    }
    let innov = y - boundary_slope(&obs.w_hat, Side::Left);
    let mut f: Vec<f64> = p.interior().iter().map(|pi| -pi * innov).collect();
    if nonlinear {
        let nl = nonlinear_term(obs.w_hat.values(), params.grid.h());
        f.iter_mut().zip(nl).for_each(|(a, b)| *a -= b);
    }
    let t = obs.t + params.dt;
    let u = op.advance(obs.w_hat.interior(), 0.0, 0.0, Some(&f));
    check_finite(&u, t)?;
    Ok(ObserverState { t, w_hat: Field::from_interior(params.grid, &u) })
}

/// Runs plant and observer side by side and records ‖ŵ − w‖.
pub fn simulate_plant_and_observer(
    w0: &Field,
    w_hat0: &Field,
    params: &KdvParams,
    p: &Field,
    inputs: &InputSignals,
    t_final: f64,
    record_every: usize,
) -> Result<TimeSeries> {
    let op = crate::kdv::build_linear_system(params, None)?;
    let mut series = TimeSeries::new(&["t", "error_norm", "y", "y_hat"]);
    let mut plant = crate::kdv::KdvState { t: 0.0, w: w0.clone() };
    let mut obs = ObserverState { t: 0.0, w_hat: w_hat0.clone() };
    let row = |t: f64, w: &Field, wh: &Field| {
        vec![t, wh.axpy(-1.0, w).norm(), boundary_slope(w, Side::Left), boundary_slope(wh, Side::Left)]
    };
    series.push(row(0.0, &plant.w, &obs.w_hat));
    series.snapshots.push(Snapshot { t: 0.0, w: obs.w_hat.axpy(-1.0, &plant.w).into_values(), eta: 0.0 });
    let steps = step_count(t_final, params.dt);
    for k in 1..=steps {
        let y = boundary_slope(&plant.w, Side::Left);
        plant = match crate::kdv::step(&plant, params, inputs, &op) {
            Ok(s) => s,
            Err(KdvfError::BlowUp { t }) => {
                series.blow_up = Some(t);
                return Ok(series);
            }
            Err(e) => return Err(e),
        };
        obs = match observer_step(&obs, y, params, p, params.nonlinear, &op) {
            Ok(s) => s,
            Err(KdvfError::BlowUp { t }) => {
                series.blow_up = Some(t);
                return Ok(series);
            }
            Err(e) => return Err(e),
        };
        let t = k as f64 * params.dt;
        plant.t = t;
        obs.t = t;
        if k % record_every.max(1) == 0 || k == steps {
            series.push(row(t, &plant.w, &obs.w_hat));
            series.snapshots.push(Snapshot { t, w: obs.w_hat.axpy(-1.0, &plant.w).into_values(), eta: 0.0 });
        }
    }
    Ok(series)
}

/// Direct simulation of w̃_t + w̃_x + w̃_xxx − p w̃_x(0) = d₁, w̃_x(L) = d₂.
/// Columns: t, E, norm, y and, when `q` is given, U.
pub fn simulate_error_system(
    w0_err: &Field,
    params: &KdvParams,
    p: &Field,
    inputs: &InputSignals,
    t_final: f64,
    record_every: usize,
    q: Option<&Kernel2D>,
) -> Result<TimeSeries> {
    let grid = params.grid;
    if p.grid() != grid || w0_err.grid() != grid {
        return Err(KdvfError::Precondition("grid mismatch".into()));
    }
    let linear = KdvParams { nonlinear: false, ..*params };
    let op = crate::kdv::build_linear_system(&linear, None)?;
    let cols: &[&str] = if q.is_some() { &["t", "E", "norm", "y", "U"] } else { &["t", "E", "norm", "y"] };
    let mut series = TimeSeries::new(cols);
    let row = |t: f64, w: &Field| -> Result<Vec<f64>> {
        let e = energy(w);
        let mut r = vec![t, e, e.sqrt(), boundary_slope(w, Side::Left)];
        if let Some(q) = q {
            r.push(functional_U(q, w)?);
        }
        Ok(r)
    };
    let mut w = Field::from_interior(grid, &w0_err.values()[1..grid.cells()]);
    series.push(row(0.0, &w)?);
    series.snapshots.push(Snapshot { t: 0.0, w: w.values().to_vec(), eta: 0.0 });
    let steps = step_count(t_final, params.dt);
    for k in 1..=steps {
        let t_old = (k - 1) as f64 * params.dt;
        let t = k as f64 * params.dt;
        let y = boundary_slope(&w, Side::Left);
        let mut f = step_forcing(&linear, inputs, t_old, &w).unwrap_or_else(|| vec![0.0; grid.interior()]);
        f.iter_mut().zip(p.interior()).for_each(|(a, pi)| *a += pi * y);
        let u = op.advance(w.interior(), inputs.d2_at(t_old), inputs.d2_at(t), Some(&f));
        if check_finite(&u, t).is_err() {
            series.blow_up = Some(t);
            return Ok(series);
        }
        w = Field::from_interior(grid, &u);
        if k % record_every.max(1) == 0 || k == steps {
            series.push(row(t, &w)?);
            series.snapshots.push(Snapshot { t, w: w.values().to_vec(), eta: 0.0 });
        }
    }
    Ok(series)
}

/// Least-squares fit of log q against t; rate is the negative slope.
pub fn fit_exponential(t: &[f64], q: &[f64]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> =
        t.iter().zip(q).take_while(|(_, v)| **v > 0.0 && v.is_finite()).map(|(a, b)| (*a, b.ln())).collect();
    if pts.len() < 10 {
        return Err(KdvfError::InsufficientData(format!("{} positive samples in window, need 10", pts.len())));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(KdvfError::InsufficientData("window has no time extent".into()));
    }
    let slope = sty / stt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mt)).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayFit { rate: -slope, r_squared: r2, window: (pts[0].0, pts[pts.len() - 1].0) })
}

pub fn decay_fit(series: &TimeSeries, quantity: &str, window: (f64, f64)) -> Result<DecayFit> {
    let t = series.times();
    let q = series.column(quantity)?;
    let (ts, qs): (Vec<f64>, Vec<f64>) =
        t.iter().zip(&q).filter(|(ti, _)| **ti >= window.0 && **ti <= window.1).map(|(a, b)| (*a, *b)).unzip();
    fit_exponential(&ts, &qs)
}

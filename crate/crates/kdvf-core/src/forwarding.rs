//! Integral-action regulator: the profile M, the integrator, equilibria and
//! closed-loop experiments.

use crate::banded::BandedLu;
use crate::error::{KdvfError, Result};
use crate::grid::{
    boundary_slope, default_critical_tol, fd_weights, integrate, integrate_product, is_critical_length, k_max_for,
    Field, Grid, Side,
};
use crate::kdv::{
    build_linear_system, check_finite, convective_dt_limit, nonlinear_term, output_vector, step_count, KdvParams,
    SpatialOperator,
};
use crate::kernel::Kernel2D;
use crate::lyapunov::{energy, functional_U, functional_V, functional_V_full, LyapunovConstants};
use crate::observer::{fit_exponential, DecayFit};
use crate::series::{Snapshot, TimeSeries};
use std::time::Instant;

const RESONANCE_TOL: f64 = 1e-8;

fn resonance(l: f64) -> Result<f64> {
    let s = (l / 2.0).sin();
    if s.abs() < RESONANCE_TOL {
        Err(KdvfError::ResonantLength(l))
    } else {
        Ok(s)
    }
}

/// (M, M′, M‴) at x from the closed form and its product-rule derivatives.
pub fn m_derivatives(x: f64, l: f64) -> Result<(f64, f64, f64)> {
    let s = resonance(l)?;
    let (u, v) = ((x / 2.0).sin(), ((l - x) / 2.0).sin());
    let (du, dv) = ((x / 2.0).cos() / 2.0, -((l - x) / 2.0).cos() / 2.0);
    let m = -2.0 * u * v / s;
    let m1 = -2.0 * (du * v + u * dv) / s;
    // u'' = -u/4, v'' = -v/4, u''' = -u'/4, v''' = -v'/4
    let third = -du / 4.0 * v + 3.0 * (-u / 4.0) * dv + 3.0 * du * (-v / 4.0) + u * (-dv / 4.0);
    Ok((m, m1, -2.0 * third / s))
}

#[allow(non_snake_case)]
pub fn M_profile(grid: Grid) -> Result<Field> {
    m_profile(grid)
}

pub fn m_profile(grid: Grid) -> Result<Field> {
    let l = grid.length();
    resonance(l)?;
    let vals = grid
        .coordinates()
        .into_iter()
        .map(|x| m_derivatives(x, l).map(|d| d.0))
        .collect::<Result<Vec<_>>>()?;
    Field::new(grid, vals)
}

/// Derivative of `order` at every node using 7-point windows (exact on
/// polynomials of degree ≤ 6), shifted near the ends.
fn high_order_derivative(f: &Field, order: usize) -> Vec<f64> {
    let grid = f.grid();
    let n = grid.cells();
    let v = f.values();
    (0..=n)
        .map(|i| {
            let start = i.saturating_sub(3).min(n - 6);
            let offs: Vec<f64> = (0..7).map(|k| (start + k) as f64 - i as f64).collect();
            fd_weights(&offs, order, grid.h()).iter().enumerate().map(|(k, c)| c * v[start + k]).sum()
        })
        .collect()
}

/// ∫ M (w′ + w‴) + kη + w′(0) for w with w(0) = w(L) = 0 and w′(L) = kη.
pub fn sylvester_residual(m: &Field, w: &Field, k_eta: f64) -> Result<f64> {
    if m.grid() != w.grid() {
        return Err(KdvfError::Precondition("M and w live on different grids".into()));
    }
    let n = w.grid().cells();
    let d1 = high_order_derivative(w, 1);
    let d3 = high_order_derivative(w, 3);
    let tol = 1e-6;
    if w.values()[0].abs() > tol || w.values()[n].abs() > tol {
        return Err(KdvfError::Precondition("w must vanish at both ends".into()));
    }
    if (d1[n] - k_eta).abs() > tol * (1.0 + k_eta.abs()) {
        return Err(KdvfError::Precondition(format!("w'(L) = {} differs from k eta = {k_eta}", d1[n])));
    }
    let integrand: Vec<f64> = (0..=n).map(|i| m.values()[i] * (d1[i] + d3[i])).collect();
    Ok(integrate(&Field::new(w.grid(), integrand)?) + k_eta + d1[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMode {
    Linear,
    /// Nonlinear bound with a cap standing in for the well-posedness bound.
    Nonlinear { cap: f64 },
}

pub fn admissible_gain(consts: &LyapunovConstants, m: &Field, mode: GainMode) -> f64 {
    let m_norm = m.norm();
    let k0 = crate::lyapunov::k0_star(consts.sigma2, m_norm, consts.alpha);
    match mode {
        GainMode::Linear => k0,
        GainMode::Nonlinear { cap } => {
            let a = consts.alpha;
            k0.min(a / (a * consts.sigma1 + 4.0 * m_norm * m_norm)).min(cap)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub eta: f64,
    pub k: f64,
    pub r: f64,
}

/// η ← η + dt (y − r); returns the new state and u = k η.
pub fn controller_step(ctrl: &ControllerState, y: f64, dt: f64) -> (ControllerState, f64) {
    let eta = ctrl.eta + dt * (y - ctrl.r);
    (ControllerState { eta, ..*ctrl }, ctrl.k * eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub w_inf: Field,
    pub eta_inf: f64,
    pub residual: f64,
    pub iterations: usize,
    pub contraction_est: Option<f64>,
}

fn refuse_critical(grid: Grid) -> Result<()> {
    let l = grid.length();
    match is_critical_length(l, default_critical_tol(l), k_max_for(l)) {
        Some((k, m)) => Err(KdvfError::CriticalLength { length: l, k, l: m }),
        None => Ok(()),
    }
}

/// Solver for the bordered steady-state system A w + g s = rhs, cᵀw = r.
struct Bordered {
    op: SpatialOperator,
    lu: BandedLu,
    ag: Vec<f64>,
    cag: f64,
    c: Vec<f64>,
}

impl Bordered {
    fn new(grid: Grid) -> Result<Self> {
        let op = SpatialOperator::new(grid, None);
        let lu = op.a.factor().map_err(|e| KdvfError::NearCritical(e.to_string()))?;
        let ag = lu.solve(&op.g);
        let c = output_vector(grid);
        let cag: f64 = c.iter().zip(&ag).map(|(a, b)| a * b).sum();
        let scale = c.iter().map(|v| v.abs()).sum::<f64>() * ag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(cag.abs() > 1e-12 * scale) {
            return Err(KdvfError::NearCritical(format!("steady-state output map degenerate ({cag:e})")));
        }
        Ok(Bordered { op, lu, ag, cag, c })
    }

    fn solve(&self, rhs: &[f64], r: f64) -> (Vec<f64>, f64) {
        let w0 = self.lu.solve(rhs);
        let cw0: f64 = self.c.iter().zip(&w0).map(|(a, b)| a * b).sum();
        let s = (cw0 - r) / self.cag;
        let w = w0.iter().zip(&self.ag).map(|(a, b)| a - s * b).collect();
        (w, s)
    }

    /// ‖A w + g s − rhs‖ in the grid norm.
    fn residual(&self, w: &[f64], s: f64, rhs: &[f64]) -> f64 {
        let aw = self.op.apply(w, s);
        let diff: Vec<f64> = aw.iter().zip(rhs).map(|(a, b)| a - b).collect();
        Field::from_interior(self.op.grid, &diff).norm()
    }
}

fn check_equilibrium_args(d: &Field, k: f64, grid: Grid) -> Result<()> {
    if d.grid() != grid {
        return Err(KdvfError::Precondition("disturbance lives on a different grid".into()));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(KdvfError::Config(format!("gain must be positive, got {k}")));
    }
    Ok(())
}

/// Steady state of the linear closed loop: w′ + w‴ = d, w(0) = w(L) = 0, w′(0) = r,
/// with η∞ = w′∞(L)/k.
pub fn linear_equilibrium(d: &Field, r: f64, k: f64, grid: Grid) -> Result<EquilibriumResult> {
    check_equilibrium_args(d, k, grid)?;
    refuse_critical(grid)?;
    let b = Bordered::new(grid)?;
    let rhs: Vec<f64> = d.interior().iter().map(|v| -v).collect();
    let (w, s) = b.solve(&rhs, r);
    let residual = b.residual(&w, s, &rhs) / (1.0 + d.norm());
    Ok(EquilibriumResult { w_inf: Field::from_interior(grid, &w), eta_inf: s / k, residual, iterations: 0, contraction_est: None })
}

/// Picard iteration for w′ + w‴ + w w′ = d with the same boundary data.
pub fn nonlinear_equilibrium(d: &Field, r: f64, k: f64, grid: Grid, max_iter: usize, tol: f64) -> Result<EquilibriumResult> {
    check_equilibrium_args(d, k, grid)?;
    refuse_critical(grid)?;
    let b = Bordered::new(grid)?;
    let h = grid.h();
    let mut w = Field::zeros(grid);
    let mut s: f64;
    let mut last_delta: Option<f64> = None;
    let mut ratio: Option<f64> = None;
    let mut growth = 0;
    for it in 1..=max_iter.max(1) {
        let nl = nonlinear_term(w.values(), h);
        let rhs: Vec<f64> = d.interior().iter().zip(&nl).map(|(dv, nv)| -dv + nv).collect();
        let (next, s_next) = b.solve(&rhs, r);
        let next = Field::from_interior(grid, &next);
        let delta = next.axpy(-1.0, &w).norm();
        if !delta.is_finite() || check_finite(next.values(), 0.0).is_err() {
            return Err(KdvfError::NonContraction { iterations: it, ratio: ratio.unwrap_or(f64::INFINITY) });
        }
        if let Some(prev) = last_delta {
            if prev > 0.0 {
                let q = delta / prev;
                ratio = Some(q);
                growth = if q >= 1.0 { growth + 1 } else { 0 };
            }
        }
        w = next;
        s = s_next;
        last_delta = Some(delta);
        if delta < tol {
            let nl = nonlinear_term(w.values(), h);
            let rhs: Vec<f64> = d.interior().iter().zip(&nl).map(|(dv, nv)| -dv + nv).collect();
            let residual = b.residual(w.interior(), s, &rhs) / (1.0 + d.norm());
            return Ok(EquilibriumResult { w_inf: w, eta_inf: s / k, residual, iterations: it, contraction_est: ratio });
        }
        if growth >= 3 {
            return Err(KdvfError::NonContraction { iterations: it, ratio: ratio.unwrap_or(f64::INFINITY) });
        }
    }
    Err(KdvfError::NonContraction { iterations: max_iter, ratio: ratio.unwrap_or(f64::NAN) })
}

/// Kernel data used to evaluate the Lyapunov columns of a closed-loop record.
#[derive(Debug, Clone)]
pub struct LyapunovContext {
    pub q: Kernel2D,
    pub consts: LyapunovConstants,
    pub m: Field,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub params: KdvParams,
    pub k: f64,
    pub r: f64,
    /// Constant distributed disturbance.
    pub d: Field,
    /// Constant disturbance added to the actuated slope: w_x(L) = kη + d₂.
    pub d2: f64,
    pub w0: Field,
    pub eta0: f64,
    pub t_final: f64,
    pub record_every: usize,
    /// Upper bound on k; exceeded only with `override_safety`.
    pub gain_bound: Option<f64>,
    pub override_safety: bool,
    pub lyapunov: Option<LyapunovContext>,
    pub equilibrium: Option<EquilibriumResult>,
}

pub const CLOSED_LOOP_COLUMNS: [&str; 10] = ["t", "eta", "y", "e", "E", "U", "V", "V_full", "x_distance", "wall_clock"];

/// Runs the coupled integrator and PDE. Columns E, U, V and V_full are
/// evaluated on the deviation (η − η∞, w − w∞) from the equilibrium.
pub fn closed_loop_simulate(cfg: &ClosedLoopConfig) -> Result<TimeSeries> {
    let p = &cfg.params;
    let grid = p.grid;
    if !cfg.override_safety {
        refuse_critical(grid)?;
        if let Some(bound) = cfg.gain_bound {
            if cfg.k >= bound {
                return Err(KdvfError::Precondition(format!("gain k = {} is not below the admissible bound {bound}", cfg.k)));
            }
        }
    }
    if !(cfg.t_final >= 0.0) {
        return Err(KdvfError::Config("final time must be non-negative".into()));
    }
    let eq = match &cfg.equilibrium {
        Some(e) => e.clone(),
        None => EquilibriumResult { w_inf: Field::zeros(grid), eta_inf: 0.0, residual: 0.0, iterations: 0, contraction_est: None },
    };
    let op = build_linear_system(p, None)?;
    let started = Instant::now();
    let mut series = TimeSeries::new(&CLOSED_LOOP_COLUMNS);
    let record = |series: &mut TimeSeries, t: f64, eta: f64, w: &Field| -> Result<()> {
        let y = boundary_slope(w, Side::Left);
        let dw = w.axpy(-1.0, &eq.w_inf);
        let deta = eta - eq.eta_inf;
        let e_dev = energy(&dw);
        let (u, v, vf) = match &cfg.lyapunov {
            Some(ctx) => (
                functional_U(&ctx.q, &dw)?,
                functional_V(&ctx.q, &ctx.consts, &dw)?,
                functional_V_full(&ctx.q, &ctx.consts, &ctx.m, deta, &dw)?,
            ),
            None => (0.0, 0.0, 0.0),
        };
        let xd = (deta * deta + e_dev).sqrt();
        series.push(vec![t, eta, y, y - cfg.r, e_dev, u, v, vf, xd, started.elapsed().as_secs_f64()]);
        series.snapshots.push(Snapshot { t, w: w.values().to_vec(), eta });
        Ok(())
    };
    let mut w = Field::from_interior(grid, &cfg.w0.values()[1..grid.cells()]);
    let mut ctrl = ControllerState { eta: cfg.eta0, k: cfg.k, r: cfg.r };
    record(&mut series, 0.0, ctrl.eta, &w)?;
    let steps = step_count(cfg.t_final, p.dt);
    let every = cfg.record_every.max(1);
    let has_d = cfg.d.max_abs() > 0.0;
    for step in 1..=steps {
        let t = step as f64 * p.dt;
        if p.nonlinear && p.dt > convective_dt_limit(grid.h(), &w) {
            series.blow_up = Some(t - p.dt);
            return Ok(series);
        }
        let y = boundary_slope(&w, Side::Left);
        let u_old = ctrl.k * ctrl.eta + cfg.d2;
        let (next, u) = controller_step(&ctrl, y, p.dt);
        let u_new = u + cfg.d2;
        let mut forcing: Option<Vec<f64>> = has_d.then(|| cfg.d.interior().to_vec());
        if p.nonlinear {
            let nl = nonlinear_term(w.values(), grid.h());
            let f = forcing.get_or_insert_with(|| vec![0.0; grid.interior()]);
            f.iter_mut().zip(nl).for_each(|(a, b)| *a -= b);
        }
        let u = op.advance(w.interior(), u_old, u_new, forcing.as_deref());
        if check_finite(&u, t).is_err() || !next.eta.is_finite() {
            series.blow_up = Some(t);
            return Ok(series);
        }
        w = Field::from_interior(grid, &u);
        ctrl = next;
        if step % every == 0 || step == steps {
            record(&mut series, t, ctrl.eta, &w)?;
        }
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulationReport {
    pub tail_sup_e: f64,
    pub final_e: f64,
    pub x_decay: Option<DecayFit>,
    pub wt_decay: Option<DecayFit>,
    /// Fraction of steps whose identity residual is within 5% of its scale.
    pub identity_pass_fraction: f64,
    pub identity_median: f64,
}

/// Fits the decay of the deviation norm and of ‖w_t‖, and checks the
/// energy identity ∫ w̃ w̃_t = ½ (k² η̃² − w̃_x(0)²) between snapshots.
pub fn regulation_diagnostics(series: &TimeSeries, k: f64, eq: &EquilibriumResult) -> Result<RegulationReport> {
    let t = series.column("t")?;
    let e = series.column("e")?;
    let xd = series.column("x_distance")?;
    if t.len() < 2 || series.snapshots.len() != t.len() {
        return Err(KdvfError::InsufficientData("regulation diagnostics need dense snapshots".into()));
    }
    let t_end = *t.last().unwrap();
    let tail_sup_e = t.iter().zip(&e).filter(|(ti, _)| **ti >= 0.9 * t_end).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    let final_e = e.last().unwrap().abs();
    let grid = eq.w_inf.grid();
    let floor = 1e-12 * xd.iter().fold(0.0f64, |m, v| m.max(*v));
    let fit_positive = |ts: &[f64], qs: &[f64]| -> Option<DecayFit> {
        let keep: Vec<(f64, f64)> =
            ts.iter().zip(qs).take_while(|(_, q)| **q > floor && **q > 0.0).map(|(a, b)| (*a, *b)).collect();
        let (a, b): (Vec<f64>, Vec<f64>) = keep.into_iter().unzip();
        fit_exponential(&a, &b).ok()
    };
    let x_decay = fit_positive(&t, &xd);
    let mut wt_t = Vec::new();
    let mut wt_n = Vec::new();
    let mut passes = 0usize;
    let mut rels = Vec::new();
    for win in series.snapshots.windows(2) {
        let dt = win[1].t - win[0].t;
        let a = Field::new(grid, win[0].w.clone())?.axpy(-1.0, &eq.w_inf);
        let b = Field::new(grid, win[1].w.clone())?.axpy(-1.0, &eq.w_inf);
        let wt = b.axpy(-1.0, &a).scaled(1.0 / dt);
        wt_t.push(0.5 * (win[0].t + win[1].t));
        wt_n.push(wt.norm());
        let mid = a.axpy(1.0, &b).scaled(0.5);
        let lhs = integrate_product(&mid, &wt);
        let flux = |s: &Snapshot, f: &Field| {
            let de = s.eta - eq.eta_inf;
            let y = boundary_slope(f, Side::Left);
            (k * k * de * de, y * y)
        };
        let (ka, ya) = flux(&win[0], &a);
        let (kb, yb) = flux(&win[1], &b);
        let rhs = 0.25 * ((ka - ya) + (kb - yb));
        let scale = 0.25 * (ka + ya + kb + yb);
        let res = (lhs - rhs).abs();
        let rel = if scale > 0.0 { res / scale } else if res == 0.0 { 0.0 } else { f64::INFINITY };
        if rel <= 0.05 {
            passes += 1;
        }
        rels.push(rel);
    }
    let wt_decay = fit_positive(&wt_t, &wt_n);
    rels.sort_by(f64::total_cmp);
    let identity_median = rels[rels.len() / 2];
    Ok(RegulationReport {
        tail_sup_e,
        final_e,
        x_decay,
        wt_decay,
        identity_pass_fraction: passes as f64 / rels.len() as f64,
        identity_median,
    })
}

/// Largest multiple of `direction` (as initial state) for which the closed
/// loop converges, found by 12 bisection steps on [0, max_scale].
pub fn basin_probe(template: &ClosedLoopConfig, direction: &Field, max_scale: f64, e_tol: f64) -> Result<f64> {
    if direction.max_abs() == 0.0 {
        return Err(KdvfError::Precondition("probe direction must be non-zero".into()));
    }
    if !template.params.nonlinear {
        return Ok(max_scale);
    }
    let passes = |s: f64| -> Result<bool> {
        let mut cfg = template.clone();
        cfg.w0 = direction.scaled(s);
        if cfg.params.dt > convective_dt_limit(cfg.params.grid.h(), &cfg.w0) {
            return Ok(false);
        }
        let series = closed_loop_simulate(&cfg)?;
        Ok(series.blow_up.is_none() && series.last("e").map(|e| e.abs() < e_tol).unwrap_or(false))
    };
    if passes(max_scale)? {
        return Ok(max_scale);
    }
    let (mut lo, mut hi) = (0.0, max_scale);
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

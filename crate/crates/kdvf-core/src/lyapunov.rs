//! Lyapunov functionals, the constant pack and dissipation monitors.

use crate::error::{KdvfError, Result};
use crate::forwarding::m_profile;
use crate::grid::{integrate_product, Field};
use crate::kdv::InputSignals;
use crate::kernel::{apply_Pi_bar_inv, operator_bounds, Kernel2D};
use crate::series::Snapshot;

pub fn energy(w: &Field) -> f64 {
    integrate_product(w, w)
}

/// U(w) = ‖Π̄⁻¹ w‖².
#[allow(non_snake_case)]
pub fn functional_U(q: &Kernel2D, w: &Field) -> Result<f64> {
    Ok(energy(&apply_Pi_bar_inv(q, w)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants {
    pub lambda: f64,
    pub c_under: f64,
    pub c_bar: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub p_bar: f64,
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub k0_star: f64,
    /// ‖M‖ used for k0_star.
    pub m_norm: f64,
}

impl LyapunovConstants {
    /// Assembles the pack from the measured quantities.
    pub fn from_parts(lambda: f64, c_under: f64, c_bar: f64, qz_l_norm_sq: f64, p_bar: f64, m_norm: f64) -> Result<Self> {
        if !(p_bar > 0.0) {
            return Err(KdvfError::DegenerateGain);
        }
        if !(lambda > 0.0 && c_under > 0.0 && c_bar >= c_under) {
            return Err(KdvfError::Precondition(format!(
                "need lambda > 0 and 0 < c_under <= c_bar, got {lambda}, {c_under}, {c_bar}"
            )));
        }
        let rho1 = 2.0 * c_bar / lambda;
        let rho2 = 1.0 + 2.0 / lambda * qz_l_norm_sq;
        let alpha = c_under / (4.0 * p_bar * rho1);
        let sigma1 = 4.0 * p_bar * rho1 / c_under + 1.0 / p_bar;
        let sigma2 = 1.0 + rho2 / (2.0 * p_bar * rho1);
        let k0_star = k0_star(sigma2, m_norm, alpha);
        Ok(LyapunovConstants { lambda, c_under, c_bar, rho1, rho2, p_bar, alpha, sigma1, sigma2, k0_star, m_norm })
    }

    /// Weight of U inside V.
    pub fn u_weight(&self) -> f64 {
        1.0 / (2.0 * self.p_bar * self.rho1)
    }

    /// Dissipation rate of V for the nonlinear model.
    pub fn alpha_nonlinear(&self) -> f64 {
        self.c_under / (8.0 * self.p_bar * self.rho1)
    }
}

pub fn k0_star(sigma2: f64, m_norm: f64, alpha: f64) -> f64 {
    1.0 / (sigma2 / 2.0 + m_norm / (4.0 * alpha))
}

pub fn compute_constants(lambda: f64, q: &Kernel2D, p: &Field) -> Result<LyapunovConstants> {
    let p_bar = energy(p);
    if !(p_bar > 0.0) {
        return Err(KdvfError::DegenerateGain);
    }
    let (c_under, c_bar) = operator_bounds(q)?;
    let qz = q.z_slope(true);
    let m = m_profile(q.grid)?;
    LyapunovConstants::from_parts(lambda, c_under, c_bar, energy(&qz), p_bar, m.norm())
}

/// V(w) = E(w) + U(w)/(2 p̄ ϱ₁).
#[allow(non_snake_case)]
pub fn functional_V(q: &Kernel2D, consts: &LyapunovConstants, w: &Field) -> Result<f64> {
    Ok(energy(w) + consts.u_weight() * functional_U(q, w)?)
}

/// 𝒱(η, w) = V(w) + (η − ∫ M w)².
#[allow(non_snake_case)]
pub fn functional_V_full(q: &Kernel2D, consts: &LyapunovConstants, m: &Field, eta: f64, w: &Field) -> Result<f64> {
    let cross = eta - integrate_product(m, w);
    Ok(functional_V(q, consts, w)? + cross * cross)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    /// Multiple of the form's natural scale (λU, αE or 𝒱).
    pub relative: f64,
    pub absolute: f64,
}

impl Slack {
    pub fn relative(r: f64) -> Self {
        Slack { relative: r, absolute: 0.0 }
    }
}

/// Which inequality to check between consecutive snapshots.
#[derive(Debug, Clone)]
pub enum DissipationForm<'a> {
    /// ΔU/Δt ≤ −λU.
    U { q: &'a Kernel2D, lambda: f64 },
    /// ΔV/Δt ≤ −αE + σ₁‖d₁‖² + σ₂|d₂|².
    V { q: &'a Kernel2D, consts: LyapunovConstants, inputs: &'a InputSignals },
    /// Δ𝒱 ≤ 0 for the closed loop, evaluated on deviations from (η∞, w∞).
    ClosedLoop { q: &'a Kernel2D, consts: LyapunovConstants, m: &'a Field, w_inf: &'a Field, eta_inf: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationReport {
    pub steps_checked: usize,
    pub violations: usize,
    /// Largest value of lhs − rhs (negative when every step passes strictly).
    pub worst_margin: f64,
    pub worst_time: f64,
    pub slack_used: f64,
}

impl DissipationReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.steps_checked == 0 {
            1.0
        } else {
            1.0 - self.violations as f64 / self.steps_checked as f64
        }
    }
}

pub fn check_dissipation(snaps: &[Snapshot], form: &DissipationForm, slack: Slack) -> Result<DissipationReport> {
    if snaps.len() < 2 {
        return Err(KdvfError::InsufficientData("need at least two snapshots".into()));
    }
    let grid = match form {
        DissipationForm::U { q, .. } | DissipationForm::V { q, .. } | DissipationForm::ClosedLoop { q, .. } => q.grid,
    };
    let field = |s: &Snapshot| Field::new(grid, s.w.clone());
    let mut rep = DissipationReport {
        steps_checked: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
        worst_time: 0.0,
        slack_used: 0.0,
    };
    // value of the functional and the state scale used on the right-hand side
    let eval = |s: &Snapshot| -> Result<(f64, f64)> {
        let w = field(s)?;
        match form {
            DissipationForm::U { q, .. } => {
                let u = functional_U(q, &w)?;
                Ok((u, u))
            }
            DissipationForm::V { q, consts, .. } => Ok((functional_V(q, consts, &w)?, energy(&w))),
            DissipationForm::ClosedLoop { q, consts, m, w_inf, eta_inf } => {
                let dw = w.axpy(-1.0, w_inf);
                let v = functional_V_full(q, consts, m, s.eta - eta_inf, &dw)?;
                Ok((v, v))
            }
        }
    };
    let mut prev = eval(&snaps[0])?;
    for win in snaps.windows(2) {
        let cur = eval(&win[1])?;
        let dt = win[1].t - win[0].t;
        if !(dt > 0.0) {
            return Err(KdvfError::Precondition("snapshot times must increase".into()));
        }
        let scale_avg = 0.5 * (prev.1 + cur.1);
        let (lhs, rhs, s) = match form {
            DissipationForm::U { lambda, .. } => {
                let s = slack.relative * lambda * scale_avg + slack.absolute;
                ((cur.0 - prev.0) / dt, -lambda * scale_avg, s)
            }
            DissipationForm::V { consts, inputs, .. } => {
                let tm = 0.5 * (win[0].t + win[1].t);
                let d1 = inputs.d1_at(tm).map(|d| energy(&d)).unwrap_or(0.0);
                let d2 = inputs.d2_at(tm);
                let s = slack.relative * consts.alpha * scale_avg + slack.absolute;
                ((cur.0 - prev.0) / dt, -consts.alpha * scale_avg + consts.sigma1 * d1 + consts.sigma2 * d2 * d2, s)
            }
            DissipationForm::ClosedLoop { .. } => {
                let s = slack.relative * prev.0 + slack.absolute;
                (cur.0 - prev.0, 0.0, s)
            }
        };
        let margin = lhs - rhs;
        rep.steps_checked += 1;
        rep.slack_used = rep.slack_used.max(s);
        if margin > s {
            rep.violations += 1;
        }
        if margin > rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_time = win[1].t;
        }
        prev = cur;
    }
    Ok(rep)
}

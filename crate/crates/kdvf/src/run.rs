//! `kdvf run`: scenario → kernels → constants → equilibrium → closed loop → checks.

use crate::output::{num, render_csv, Meta};
use crate::scenario::{load_scenario, realize, Check, ConfigError, Gain, Model, Scenario};
use kdvf_core::forwarding::{
    admissible_gain, closed_loop_simulate, linear_equilibrium, m_profile, nonlinear_equilibrium, regulation_diagnostics,
    ClosedLoopConfig, EquilibriumResult, GainMode, LyapunovContext, RegulationReport,
};
use kdvf_core::grid::{default_critical_tol, is_critical_length, k_max_for, Grid};
use kdvf_core::kdv::KdvParams;
use kdvf_core::kernel::{gain_p, kernel_report, read_kernel, solve_kernel_P, solve_kernel_Q, write_kernel, Kernel2D, KernelKind, KernelSolveReport};
use kdvf_core::lyapunov::{check_dissipation, compute_constants, DissipationForm, DissipationReport, Slack};
use kdvf_core::series::TimeSeries;
use kdvf_core::KdvfError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const CACHE_ENV: &str = "KDVF_CACHE_DIR";
pub const LINEAR_REGULATION_TOL: f64 = 1e-3;
pub const NONLINEAR_REGULATION_TOL: f64 = 5e-3;
pub const DISSIPATION_SLACK: f64 = 1e-10;
pub const EQUILIBRIUM_RESIDUAL_TOL: f64 = 1e-7;
pub const EQUILIBRIUM_MAX_ITER: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    ChecksFailed,
    BlowUp,
    Config,
    Critical,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::ChecksFailed => 2,
            Status::BlowUp => 3,
            Status::Config => 4,
            Status::Critical => 5,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Status::Pass => "all requested checks passed",
            Status::ChecksFailed => "checks failed",
            Status::BlowUp => "blow-up",
            Status::Config => "configuration error",
            Status::Critical => "critical length refused",
        }
    }
}

/// Exit status for an error raised by the numerical core.
pub fn status_for(e: &KdvfError) -> Status {
    match e {
        KdvfError::Config(_) | KdvfError::NumericalSetup(_) | KdvfError::Precondition(_) => Status::Config,
        KdvfError::BlowUp { .. } => Status::BlowUp,
        KdvfError::CriticalLength { .. }
        | KdvfError::ResonantLength(_)
        | KdvfError::NearCritical(_)
        | KdvfError::KernelSolve(_)
        | KdvfError::DegenerateTransform(_)
        | KdvfError::DegenerateGain => Status::Critical,
        KdvfError::InsufficientData(_) | KdvfError::NonContraction { .. } => Status::ChecksFailed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    pub name: String,
    pub csv: Option<PathBuf>,
    pub report: PathBuf,
    pub checks: Vec<CheckLine>,
    pub final_e: Option<f64>,
    /// Human-readable summary, also the body of the report file.
    pub text: String,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(KdvfError),
    Io(String),
}

impl From<KdvfError> for RunError {
    fn from(e: KdvfError) -> Self {
        RunError::Core(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl RunError {
    fn status(&self) -> Status {
        match self {
            RunError::Config(_) | RunError::Io(_) => Status::Config,
            RunError::Core(e) => status_for(e),
        }
    }

    fn message(&self) -> String {
        match self {
            RunError::Config(e) => format!("configuration error: {e}"),
            RunError::Core(e) => e.to_string(),
            RunError::Io(m) => m.clone(),
        }
    }
}

/// Kernel solved once per (kind, λ, grid) and stored as CSV under `dir`.
pub fn cached_kernel(kind: KernelKind, lambda: f64, grid: Grid, dir: Option<&Path>) -> Result<(Kernel2D, KernelSolveReport, bool), KdvfError> {
    let file = dir.map(|d| d.join(format!("{}_lambda{}_L{}_n{}.csv", kind.as_str(), lambda, grid.length(), grid.cells())));
    if let Some(f) = &file {
        if let Ok(k) = read_kernel(f) {
            if k.kind == kind && k.lambda.to_bits() == lambda.to_bits() && k.grid == grid && k.trace.is_some() {
                let rep = kernel_report(&k)?;
                return Ok((k, rep, true));
            }
        }
    }
    let (k, rep) = match kind {
        KernelKind::P => solve_kernel_P(lambda, grid)?,
        KernelKind::Q => solve_kernel_Q(lambda, grid)?,
        KernelKind::G => return Err(KdvfError::Precondition("reflected kernels are not cached".into())),
    };
    if let (Some(f), Some(d)) = (&file, dir) {
        // a failed cache write only costs a re-solve next time
        if std::fs::create_dir_all(d).is_ok() {
            let _ = write_kernel(f, &k);
        }
    }
    Ok((k, rep, false))
}

pub fn cache_dir_for(out_dir: &Path, name: &str) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => out_dir.join(format!("{name}.kernels")),
    }
}

struct Prepared {
    k: f64,
    cfg: ClosedLoopConfig,
    eq: EquilibriumResult,
}

fn scenario_meta(s: &Scenario, meta: &mut Meta) {
    meta.text("scenario.name", &s.name);
    meta.text("scenario.model", s.model.as_str());
    meta.text("scenario.checks", s.checks.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(" "));
    meta.text("scenario.seed", s.seed);
    meta.text("scenario.override_safety", s.override_safety);
    meta.num("grid.L", s.l);
    meta.text("grid.n", s.n);
    meta.num("time.dt", s.dt);
    meta.num("time.T", s.t_final);
    meta.num("time.theta", s.theta);
    meta.text("time.record_every", s.record_every);
    meta.num("control.lambda", s.lambda);
    meta.text(
        "control.k_spec",
        match s.k {
            Gain::Auto => "auto".to_string(),
            Gain::Value(v) => num(v),
        },
    );
    meta.num("control.r", s.r);
    meta.num("control.eta0", s.eta0);
    meta.text("inputs.d1", format!("{:?}", s.d1));
    meta.num("inputs.d2", s.d2);
    meta.text("inputs.w0", format!("{:?}", s.w0));
}

fn prepare(s: &Scenario, cache: Option<&Path>, meta: &mut Meta) -> Result<Prepared, RunError> {
    let grid = Grid::new(s.l, s.n)?;
    let params = KdvParams::new(grid, s.dt, s.theta, s.model == Model::Nonlinear)?;
    if !s.override_safety {
        if let Some((k, l)) = is_critical_length(s.l, default_critical_tol(s.l), k_max_for(s.l)) {
            return Err(KdvfError::CriticalLength { length: s.l, k, l }.into());
        }
    }
    let (p, rp, _) = cached_kernel(KernelKind::P, s.lambda, grid, cache)?;
    let (q, rq, _) = cached_kernel(KernelKind::Q, s.lambda, grid, cache)?;
    for (tag, r) in [("P", &rp), ("Q", &rq)] {
        meta.num(&format!("kernel.{tag}.interior_residual"), r.interior_residual);
        meta.num(&format!("kernel.{tag}.diag_consistency"), r.diag_consistency);
        meta.num(&format!("kernel.{tag}.constraint_residual"), r.constraint_residual);
    }
    let gain = gain_p(&p);
    let consts = compute_constants(s.lambda, &q, &gain)?;
    let m = m_profile(grid)?;
    let mode = match s.model {
        Model::Linear => GainMode::Linear,
        Model::Nonlinear => GainMode::Nonlinear { cap: s.k_cap.unwrap_or(f64::INFINITY) },
    };
    let bound = admissible_gain(&consts, &m, mode);
    for (key, v) in [
        ("constants.c_under", consts.c_under),
        ("constants.c_bar", consts.c_bar),
        ("constants.rho1", consts.rho1),
        ("constants.rho2", consts.rho2),
        ("constants.p_bar", consts.p_bar),
        ("constants.alpha", consts.alpha),
        ("constants.sigma1", consts.sigma1),
        ("constants.sigma2", consts.sigma2),
        ("constants.k0_star", consts.k0_star),
        ("constants.m_norm", consts.m_norm),
        ("control.k_bound", bound),
    ] {
        meta.num(key, v);
    }
    let k = match s.k {
        Gain::Auto => 0.5 * bound,
        Gain::Value(v) => v,
    };
    meta.num("control.k", k);
    if k >= bound && !s.override_safety {
        return Err(RunError::Core(KdvfError::Precondition(format!(
            "gain k = {} is not below the admissible bound {}; set override_safety to run anyway",
            num(k),
            num(bound)
        ))));
    }
    let realize_field = |p, field: &str| {
        realize(p, grid, s.seed).map_err(|m| RunError::Config(ConfigError { line: None, field: Some(field.into()), message: m }))
    };
    let d = realize_field(&s.d1, "inputs.d1")?;
    let w0 = realize_field(&s.w0, "inputs.w0")?;
    let mut eq = match s.model {
        Model::Linear => linear_equilibrium(&d, s.r, k, grid)?,
        Model::Nonlinear => nonlinear_equilibrium(&d, s.r, k, grid, EQUILIBRIUM_MAX_ITER, 1e-12)?,
    };
    // w_x(L) = kη + d₂ at rest
    eq.eta_inf -= s.d2 / k;
    meta.num("equilibrium.eta_inf", eq.eta_inf);
    meta.num("equilibrium.w_inf_norm", eq.w_inf.norm());
    meta.num("equilibrium.residual", eq.residual);
    meta.text("equilibrium.iterations", eq.iterations);
    if let Some(c) = eq.contraction_est {
        meta.num("equilibrium.contraction", c);
    }
    let cfg = ClosedLoopConfig {
        params,
        k,
        r: s.r,
        d,
        d2: s.d2,
        w0,
        eta0: s.eta0,
        t_final: s.t_final,
        record_every: s.record_every,
        gain_bound: Some(bound),
        override_safety: s.override_safety,
        lyapunov: Some(LyapunovContext { q: q.clone(), consts, m }),
        equilibrium: Some(eq.clone()),
    };
    Ok(Prepared { k, cfg, eq })
}

fn evaluate_checks(
    s: &Scenario,
    prep: &Prepared,
    series: &TimeSeries,
    diss: Option<&DissipationReport>,
    reg: Option<&RegulationReport>,
) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let tol = match s.model {
        Model::Linear => LINEAR_REGULATION_TOL,
        Model::Nonlinear => NONLINEAR_REGULATION_TOL,
    };
    for c in &s.checks {
        let (pass, detail) = match c {
            Check::Regulation => match series.last("e") {
                Some(e) => (e.abs() < tol, format!("|e(T)| = {:.3e} (tolerance {tol:.0e})", e.abs())),
                None => (false, "no samples".into()),
            },
            Check::Dissipation => match diss {
                Some(d) => (
                    d.violations == 0,
                    format!(
                        "{} of {} steps violate non-increase of V_full (worst margin {:.3e} at t = {:.4}, slack {:.0e})",
                        d.violations, d.steps_checked, d.worst_margin, d.worst_time, DISSIPATION_SLACK
                    ),
                ),
                None => (false, "dissipation record unavailable".into()),
            },
            Check::XDecay => match reg.and_then(|r| r.x_decay) {
                Some(f) => (f.rate > 0.0 && f.r_squared > 0.9, format!("rate {:.4}, r^2 {:.4}", f.rate, f.r_squared)),
                None => (false, "no decaying X-distance to fit".into()),
            },
            Check::Identity => match reg {
                Some(r) => (
                    r.identity_pass_fraction >= 0.95,
                    format!("{:.2}% of steps within 5% (median relative residual {:.2e})", 100.0 * r.identity_pass_fraction, r.identity_median),
                ),
                None => (false, "diagnostics unavailable".into()),
            },
            Check::Equilibrium => {
                let eq = &prep.eq;
                let contract = eq.contraction_est.map(|c| c < 1.0).unwrap_or(true);
                (
                    eq.residual < EQUILIBRIUM_RESIDUAL_TOL && contract && eq.iterations <= EQUILIBRIUM_MAX_ITER,
                    format!(
                        "residual {:.3e}, iterations {}, contraction {}",
                        eq.residual,
                        eq.iterations,
                        eq.contraction_est.map(|c| format!("{c:.3e}")).unwrap_or_else(|| "n/a".into())
                    ),
                )
            }
        };
        out.push(CheckLine { name: c.as_str().into(), pass, detail });
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| RunError::Io(format!("cannot create {}: {e}", d.display())))?;
    }
    std::fs::write(path, text).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
}

fn report_text(name: &str, meta: &Meta, checks: &[CheckLine], status: Status, notes: &[String]) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "kdvf run report: {name}");
    for (k, v) in &meta.entries {
        let _ = writeln!(r, "  {k} = {v}");
    }
    for n in notes {
        let _ = writeln!(r, "{n}");
    }
    for c in checks {
        let _ = writeln!(r, "check {}: {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    let _ = writeln!(r, "exit {}: {}", status.code(), status.describe());
    r
}

/// Runs a scenario file, writing `<name>.csv` and `<name>.report.txt` into `out_dir`.
pub fn run_scenario(path: &Path, out_dir: &Path) -> RunOutcome {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
    match load_scenario(path) {
        Ok(s) => run_loaded(&s, out_dir),
        Err(e) => {
            let err = RunError::Config(e);
            failed(&stem, out_dir, &Meta::default(), &err)
        }
    }
}

fn failed(name: &str, out_dir: &Path, meta: &Meta, err: &RunError) -> RunOutcome {
    let status = err.status();
    let mut notes = vec![format!("error: {}", err.message())];
    if let RunError::Core(KdvfError::CriticalLength { length, k, l }) = err {
        notes.push(format!(
            "critical length: L = {length} matches 2π·sqrt((k² + kl + l²)/3) with witness (k, l) = ({k}, {l}); the output y = w_x(0) cannot observe every mode"
        ));
    }
    let text = report_text(name, meta, &[], status, &notes);
    let report = out_dir.join(format!("{name}.report.txt"));
    let _ = write(&report, &text);
    RunOutcome { status, name: name.into(), csv: None, report, checks: Vec::new(), final_e: None, text }
}

pub fn run_loaded(s: &Scenario, out_dir: &Path) -> RunOutcome {
    let mut meta = Meta::default();
    scenario_meta(s, &mut meta);
    let cache = cache_dir_for(out_dir, &s.name);
    let prep = match prepare(s, Some(&cache), &mut meta) {
        Ok(p) => p,
        Err(e) => return failed(&s.name, out_dir, &meta, &e),
    };
    let series = match closed_loop_simulate(&prep.cfg) {
        Ok(x) => x,
        Err(e) => return failed(&s.name, out_dir, &meta, &RunError::Core(e)),
    };
    let ctx = prep.cfg.lyapunov.as_ref().expect("lyapunov context");
    let form = DissipationForm::ClosedLoop { q: &ctx.q, consts: ctx.consts, m: &ctx.m, w_inf: &prep.eq.w_inf, eta_inf: prep.eq.eta_inf };
    let diss = check_dissipation(&series.snapshots, &form, Slack::relative(DISSIPATION_SLACK)).ok();
    let reg = regulation_diagnostics(&series, prep.k, &prep.eq).ok();
    if let Some(d) = &diss {
        meta.text("dissipation.form", "closed-loop V_full non-increasing");
        meta.text("dissipation.steps_checked", d.steps_checked);
        meta.text("dissipation.violations", d.violations);
        meta.num("dissipation.worst_margin", d.worst_margin);
        meta.num("dissipation.worst_time", d.worst_time);
        meta.num("dissipation.slack_used", d.slack_used);
    }
    if let Some(r) = &reg {
        meta.num("regulation.tail_sup_e", r.tail_sup_e);
        meta.num("regulation.final_e", r.final_e);
        if let Some(f) = r.x_decay {
            meta.num("regulation.x_decay_rate", f.rate);
            meta.num("regulation.x_decay_r2", f.r_squared);
        }
        if let Some(f) = r.wt_decay {
            meta.num("regulation.wt_decay_rate", f.rate);
            meta.num("regulation.wt_decay_r2", f.r_squared);
        }
        meta.num("regulation.identity_pass_fraction", r.identity_pass_fraction);
    }
    let mut notes = Vec::new();
    let (status, checks) = match series.blow_up {
        Some(t) => {
            meta.num("blow_up.t", t);
            notes.push(format!("blow-up at t = {t}: the state left the finite range or outran the convective step limit"));
            (Status::BlowUp, Vec::new())
        }
        None => {
            let checks = evaluate_checks(s, &prep, &series, diss.as_ref(), reg.as_ref());
            let st = if checks.iter().all(|c| c.pass) { Status::Pass } else { Status::ChecksFailed };
            (st, checks)
        }
    };
    let final_e = series.last("e");
    if let Some(e) = final_e {
        notes.push(format!("final |e(T)| = {:.6e}", e.abs()));
    }
    let csv = out_dir.join(format!("{}.csv", s.name));
    let report = out_dir.join(format!("{}.report.txt", s.name));
    let text = report_text(&s.name, &meta, &checks, status, &notes);
    if let Err(e) = write(&csv, &render_csv(&meta, &series)).and_then(|_| write(&report, &text)) {
        return RunOutcome { status: Status::Config, name: s.name.clone(), csv: None, report, checks, final_e, text: e.message() };
    }
    RunOutcome { status, name: s.name.clone(), csv: Some(csv), report, checks, final_e, text }
}

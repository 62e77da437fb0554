//! `kdvf kernel` and `kdvf equilibrium`.

use crate::output::{num, Meta};
use crate::run::{cached_kernel, status_for, Status, EQUILIBRIUM_MAX_ITER};
use crate::scenario::{parse_profile, realize, Gain, Model};
use kdvf_core::forwarding::{admissible_gain, linear_equilibrium, m_profile, nonlinear_equilibrium, GainMode};
use kdvf_core::grid::{default_critical_tol, is_critical_length, k_max_for, Grid};
use kdvf_core::kernel::{gain_p, KernelKind};
use kdvf_core::lyapunov::compute_constants;
use kdvf_core::KdvfError;
use std::fmt::Write as _;
use std::path::Path;

/// Message plus exit status of a finished command.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    pub status: Status,
    pub text: String,
}

fn fail(e: KdvfError) -> CommandResult {
    CommandResult { status: status_for(&e), text: format!("error: {e}") }
}

fn config(msg: String) -> CommandResult {
    CommandResult { status: Status::Config, text: format!("configuration error: {msg}") }
}

fn refuse_critical(l: f64) -> Option<CommandResult> {
    is_critical_length(l, default_critical_tol(l), k_max_for(l)).map(|(k, m)| fail(KdvfError::CriticalLength { length: l, k, l: m }))
}

/// Solves P and Q and writes them (with boundary traces) under `out`.
pub fn kernel_command(lambda: f64, l: f64, n: usize, out: &Path) -> CommandResult {
    let grid = match Grid::new(l, n) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    if let Some(r) = refuse_critical(l) {
        return r;
    }
    let mut text = String::new();
    let mut ok = true;
    for kind in [KernelKind::P, KernelKind::Q] {
        let (_, rep, _) = match cached_kernel(kind, lambda, grid, Some(out)) {
            Ok(x) => x,
            Err(e) => return fail(e),
        };
        ok &= rep.interior_residual < 1e-2;
        let _ = writeln!(
            text,
            "kernel {}: interior residual {:.3e}, diagonal {:.3e}, constraint {:.3e}",
            kind.as_str(),
            rep.interior_residual,
            rep.diag_consistency,
            rep.constraint_residual
        );
    }
    let _ = writeln!(text, "written to {}", out.display());
    CommandResult { status: if ok { Status::Pass } else { Status::ChecksFailed }, text }
}

pub struct EquilibriumArgs<'a> {
    pub model: Model,
    pub l: f64,
    pub n: usize,
    pub lambda: f64,
    pub k: Gain,
    pub r: f64,
    pub d: &'a str,
    pub d2: f64,
    pub out: Option<&'a Path>,
}

/// Computes (η∞, w∞) and optionally writes `x,w_inf` rows with a metadata header.
pub fn equilibrium_command(a: &EquilibriumArgs) -> CommandResult {
    if !(a.l.is_finite() && a.r.is_finite() && a.d2.is_finite() && a.lambda > 0.0) {
        return config("L, r and d2 must be finite and lambda positive".into());
    }
    let grid = match Grid::new(a.l, a.n) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    if let Some(r) = refuse_critical(a.l) {
        return r;
    }
    let profile = match parse_profile(a.d, Path::new("."), false) {
        Ok(p) => p,
        Err(m) => return config(format!("--d: {m}")),
    };
    let d = match realize(&profile, grid, 0) {
        Ok(f) => f,
        Err(m) => return config(format!("--d: {m}")),
    };
    let k = match a.k {
        Gain::Value(v) if v > 0.0 && v.is_finite() => v,
        Gain::Value(v) => return config(format!("--k must be positive, got {v}")),
        Gain::Auto => {
            let bound = (|| -> kdvf_core::Result<f64> {
                let (p, _, _) = cached_kernel(KernelKind::P, a.lambda, grid, None)?;
                let (q, _, _) = cached_kernel(KernelKind::Q, a.lambda, grid, None)?;
                let consts = compute_constants(a.lambda, &q, &gain_p(&p))?;
                let m = m_profile(grid)?;
                let mode = match a.model {
                    Model::Linear => GainMode::Linear,
                    Model::Nonlinear => GainMode::Nonlinear { cap: f64::INFINITY },
                };
                Ok(admissible_gain(&consts, &m, mode))
            })();
            match bound {
                Ok(b) => 0.5 * b,
                Err(e) => return fail(e),
            }
        }
    };
    let res = match a.model {
        Model::Linear => linear_equilibrium(&d, a.r, k, grid),
        Model::Nonlinear => nonlinear_equilibrium(&d, a.r, k, grid, EQUILIBRIUM_MAX_ITER, 1e-12),
    };
    let mut eq = match res {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    eq.eta_inf -= a.d2 / k;
    let mut meta = Meta::default();
    meta.text("model", a.model.as_str());
    meta.num("L", a.l);
    meta.text("n", a.n);
    meta.num("k", k);
    meta.num("r", a.r);
    meta.text("d", format!("{profile:?}"));
    meta.num("d2", a.d2);
    meta.num("eta_inf", eq.eta_inf);
    meta.num("residual", eq.residual);
    meta.text("iterations", eq.iterations);
    if let Some(c) = eq.contraction_est {
        meta.num("contraction", c);
    }
    let mut text = String::new();
    for (k, v) in &meta.entries {
        let _ = writeln!(text, "{k} = {v}");
    }
    if let Some(path) = a.out {
        let mut csv = String::from("# kdvf equilibrium\n");
        for (k, v) in &meta.entries {
            let _ = writeln!(csv, "# {k} = {v}");
        }
        csv.push_str("x,w_inf\n");
        for (x, w) in grid.coordinates().iter().zip(eq.w_inf.values()) {
            let _ = writeln!(csv, "{},{}", num(*x), num(*w));
        }
        if let Err(e) = std::fs::write(path, csv) {
            return config(format!("cannot write {}: {e}", path.display()));
        }
        let _ = writeln!(text, "written to {}", path.display());
    }
    CommandResult { status: Status::Pass, text }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_command_refuses_critical_and_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = kernel_command(1.0, 2.0 * std::f64::consts::PI, 40, dir.path());
        assert_eq!(r.status, Status::Critical);
        let r = kernel_command(1.0, 1.5, 30, dir.path());
        assert_eq!(r.status, Status::Pass, "{}", r.text);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
        assert_eq!(kernel_command(-1.0, 1.5, 30, dir.path()).status, Status::Config);
    }

    #[test]
    fn equilibrium_command_linear() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("eq.csv");
        let args = EquilibriumArgs {
            model: Model::Linear,
            l: 1.5,
            n: 60,
            lambda: 1.0,
            k: Gain::Value(0.2),
            r: 0.05,
            d: "sine 0.05 1",
            d2: 0.0,
            out: Some(&out),
        };
        let r = equilibrium_command(&args);
        assert_eq!(r.status, Status::Pass, "{}", r.text);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 62);
        let bad = EquilibriumArgs { d: "wave 1", ..args };
        assert_eq!(equilibrium_command(&bad).status, Status::Config);
    }
}

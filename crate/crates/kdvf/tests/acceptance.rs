//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use kdvf_core::forwarding::{
    admissible_gain, closed_loop_simulate, linear_equilibrium, m_derivatives, m_profile, nonlinear_equilibrium,
    regulation_diagnostics, sylvester_residual, ClosedLoopConfig, GainMode, LyapunovContext,
};
use kdvf_core::grid::{is_critical_length, make_grid, Field, Grid};
use kdvf_core::kdv::{simulate, InputSignals, KdvParams};
use kdvf_core::kernel::{apply_Pi_bar, apply_Pi_bar_inv, gain_p, solve_kernel_P, solve_kernel_Q, Kernel2D};
use kdvf_core::lyapunov::{check_dissipation, compute_constants, energy, functional_V, DissipationForm, LyapunovConstants, Slack};
use kdvf_core::observer::{decay_fit, simulate_error_system};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const L: f64 = 1.5;

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn kernels(n: usize, lambda: f64) -> (Grid, Kernel2D, Kernel2D) {
    let g = make_grid(L, n).unwrap();
    let (p, _) = solve_kernel_P(lambda, g).unwrap();
    let (q, _) = solve_kernel_Q(lambda, g).unwrap();
    (g, p, q)
}

fn pack(n: usize) -> (Grid, Kernel2D, LyapunovConstants, Field) {
    let (g, p, q) = kernels(n, 1.0);
    let c = compute_constants(1.0, &q, &gain_p(&p)).unwrap();
    (g, q, c, m_profile(g).unwrap())
}

fn energy_residual(n: usize) -> (f64, f64, usize) {
    let g = make_grid(L, n).unwrap();
    let dt = 1e-4 * (200.0 / n as f64).powi(2);
    let p = KdvParams::new(g, dt, 0.5, false).unwrap();
    let w0 = Field::from_fn(g, |x| x * (L - x) * (L - x) / (L * L));
    let s = simulate(&w0, &p, &InputSignals::zero(), 0.5, 1).unwrap();
    let e = s.column("E").unwrap();
    let y = s.column("y").unwrap();
    let mut r: Vec<f64> = (1..e.len()).map(|k| ((e[k] - e[k - 1]) / dt + 0.5 * (y[k].powi(2) + y[k - 1].powi(2))).abs()).collect();
    r.sort_by(f64::total_cmp);
    (r[(0.99 * r.len() as f64) as usize], e[0], r.len())
}

fn c1_energy_law() -> Verdict {
    let mut v = Verdict::new();
    let (fine, e0, steps) = energy_residual(200);
    let (coarse, _, _) = energy_residual(100);
    let tol = 1e-3 * e0.max(1.0);
    v.check(fine <= tol, format!("n=200 99th-percentile residual {fine:.3e} <= {tol:.1e} over {steps} steps"));
    let ratio = coarse / fine;
    v.check(ratio >= 3.0, format!("refinement n=100 -> 200 reduces the residual by {ratio:.2} (>= 3)"));
    v
}

fn c2_m_profile() -> Verdict {
    let mut v = Verdict::new();
    let g = make_grid(L, 150).unwrap();
    let closed = |x: f64| -2.0 * (x / 2.0).sin() * ((L - x) / 2.0).sin() / (L / 2.0).sin();
    let (m0, m0p, _) = m_derivatives(0.0, L).unwrap();
    let (ml, _, _) = m_derivatives(L, L).unwrap();
    v.check(m0.abs() <= 1e-12 && ml.abs() <= 1e-12, format!("M(0) = {m0:e}, M(L) = {ml:e}"));
    v.check((m0p + 1.0).abs() <= 1e-12, format!("M'(0) + 1 = {:e}", m0p + 1.0));
    let mut ode = 0.0f64;
    let mut slope = 0.0f64;
    let prof = m_profile(g).unwrap();
    for (i, x) in g.coordinates().into_iter().enumerate() {
        let (m, d1, d3) = m_derivatives(x, L).unwrap();
        ode = ode.max((d3 + d1).abs());
        // centred difference of the closed form as an independent slope oracle
        let hh = 1e-5;
        slope = slope.max((d1 - (closed(x + hh) - closed(x - hh)) / (2.0 * hh)).abs());
        assert!((m - closed(x)).abs() < 1e-15 && (prof.values()[i] - m).abs() < 1e-15);
    }
    v.check(ode <= 1e-12, format!("max |M''' + M'| = {ode:e} at every node"));
    v.check(slope <= 1e-8, format!("M' agrees with a centred difference of M to {slope:.1e}"));
    v
}

fn c3_sylvester() -> Verdict {
    let mut v = Verdict::new();
    let g = make_grid(L, 150).unwrap();
    let m = m_profile(g).unwrap();
    let tol = 1e-5 * (1.0 + L * L);
    let w1 = Field::from_fn(g, |x| x * x * (L - x) * (L - x));
    let w2 = Field::from_fn(g, |x| x * (L - x) * (L - x));
    let w3 = Field::from_fn(g, |x| x * (L - x));
    for (name, w, ke) in [("x^2(L-x)^2", w1, 0.0), ("x(L-x)^2", w2, 0.0), ("x(L-x)", w3, -L)] {
        let r = sylvester_residual(&m, &w, ke).unwrap();
        v.check(r.abs() < tol, format!("{name}: residual {:.2e} < {tol:.1e}", r.abs()));
    }
    v
}

fn c4_kernels() -> Verdict {
    let mut v = Verdict::new();
    let g = make_grid(L, 100).unwrap();
    let (p, rp) = solve_kernel_P(1.0, g).unwrap();
    let (q, rq) = solve_kernel_Q(1.0, g).unwrap();
    v.check(rp.interior_residual < 1e-2 && rq.interior_residual < 1e-2, format!(
        "interior residuals P {:.2e}, Q {:.2e} < 1e-2",
        rp.interior_residual, rq.interior_residual
    ));
    v.check(p.boundary_max() == 0.0 && q.boundary_max() == 0.0, "boundary rows and columns exactly zero".into());
    let w = Field::from_fn(g, |x| (PI * x / L).sin() + 0.3 * x * (L - x));
    let back = apply_Pi_bar(&p, &apply_Pi_bar_inv(&q, &w).unwrap()).unwrap();
    let rt = back.axpy(-1.0, &w).norm() / w.norm();
    v.check(rt < 0.02, format!("round trip relative L2 error {rt:.2e} < 2e-2"));
    let gain = gain_p(&p);
    // p(x) + ∫ p(z) Q(x, z) dz, with the integral by the trapezoid rule written out here
    let h = g.h();
    let n = g.cells();
    let qz = q.trace_field();
    let mut worst = 0.0f64;
    for i in 0..=n {
        let integral: f64 = (0..=n).map(|j| q.values[(i, j)] * gain.values()[j]).sum::<f64>() * h;
        worst = worst.max((gain.values()[i] + integral - qz.values()[i]).abs());
    }
    let rel = worst / qz.max_abs();
    v.check(rel < 0.05, format!("compatibility identity residual {rel:.2e} < 5e-2"));
    v
}

fn u_rate(lambda: f64) -> (f64, f64) {
    let (g, p, q) = kernels(150, lambda);
    let params = KdvParams::linear(g, 1e-4).unwrap();
    let w0 = Field::from_fn(g, |x| x * (L - x) * (L - x));
    let s = simulate_error_system(&w0, &params, &gain_p(&p), &InputSignals::zero(), 1.0, 10, Some(&q)).unwrap();
    let f = decay_fit(&s, "U", (0.05, 0.5)).unwrap();
    (f.rate, f.r_squared)
}

fn c5_observer_decay() -> Verdict {
    let mut v = Verdict::new();
    let (rate, r2) = u_rate(1.0);
    v.check((0.7..=1.3).contains(&rate), format!("lambda=1 fitted U rate {rate:.3} in [0.7, 1.3]"));
    v.check(r2 > 0.95, format!("fit r^2 {r2:.6} > 0.95"));
    let (lo, _) = u_rate(0.5);
    let (hi, _) = u_rate(2.0);
    v.check(hi > lo, format!("rate(lambda=2) {hi:.3} > rate(lambda=0.5) {lo:.3}"));
    v
}

fn c6_iss() -> Verdict {
    let mut v = Verdict::new();
    let (g, q, c, _) = pack(150);
    let shape = Field::from_fn(g, |x| (PI * x / L).sin());
    let d1 = shape.scaled(0.05 / shape.norm());
    let inputs = InputSignals::constant(d1.clone(), 0.01);
    let params = KdvParams::linear(g, 1e-3).unwrap();
    let w0 = Field::from_fn(g, |x| x * (L - x) * (L - x));
    let s = simulate(&w0, &params, &inputs, 20.0, 1).unwrap();
    let rep = check_dissipation(&s.snapshots, &DissipationForm::V { q: &q, consts: c, inputs: &inputs }, Slack::relative(0.05)).unwrap();
    v.check(rep.pass_fraction() >= 0.99, format!(
        "dissipation inequality at {:.2}% of {} steps (alpha {:.4}, sigma1 {:.3}, sigma2 {:.3})",
        100.0 * rep.pass_fraction(),
        rep.steps_checked,
        c.alpha,
        c.sigma1,
        c.sigma2
    ));
    // V ≤ κE with κ = 1 + c̄/(2p̄ϱ₁), so V̇ ≤ −0.95(α/κ)V + s keeps V below max(V(0), κs/(0.95α))
    let kappa = 1.0 + c.u_weight() * c.c_bar;
    let s_in = c.sigma1 * energy(&d1) + c.sigma2 * 0.01f64.powi(2);
    let v0 = functional_V(&q, &c, &w0).unwrap();
    let bound = v0.max(kappa * s_in / (0.95 * c.alpha));
    let emax = s.column("E").unwrap().iter().fold(0.0f64, |m, x| m.max(*x));
    v.check(s.blow_up.is_none() && emax <= bound, format!("sup E on [0, 20] = {emax:.3e} <= ISS bound {bound:.3e}"));
    v
}

fn c7_linear_regulation() -> Verdict {
    let mut v = Verdict::new();
    let (g, q, c, m) = pack(150);
    let k = 0.5 * c.k0_star;
    let d = Field::from_fn(g, |x| 0.05 * (PI * x / L).sin());
    let eq = linear_equilibrium(&d, 0.05, k, g).unwrap();
    let cfg = ClosedLoopConfig {
        params: KdvParams::linear(g, 1e-3).unwrap(),
        k,
        r: 0.05,
        d,
        d2: 0.0,
        w0: Field::zeros(g),
        eta0: 0.0,
        t_final: 40.0,
        record_every: 1,
        gain_bound: Some(c.k0_star),
        override_safety: false,
        lyapunov: None,
        equilibrium: Some(eq.clone()),
    };
    let start = Instant::now();
    let s = closed_loop_simulate(&cfg).unwrap();
    let e = s.last("e").unwrap().abs();
    v.check(e < 1e-3, format!("|y(T) - r| = {e:.2e} < 1e-3 at T = 40 (k = {k:.4})"));
    let reg = regulation_diagnostics(&s, k, &eq).unwrap();
    match reg.x_decay {
        Some(f) => v.check(f.rate > 0.0 && f.r_squared > 0.9, format!("X-distance decay rate {:.4}, r^2 {:.4}", f.rate, f.r_squared)),
        None => v.check(false, "X-distance decay could not be fitted".into()),
    }
    let rep = check_dissipation(
        &s.snapshots,
        &DissipationForm::ClosedLoop { q: &q, consts: c, m: &m, w_inf: &eq.w_inf, eta_inf: eq.eta_inf },
        Slack::relative(1e-10),
    )
    .unwrap();
    v.check(rep.violations == 0, format!(
        "closed-loop V record non-increasing: {} violations in {} steps ({:.1} s)",
        rep.violations,
        rep.steps_checked,
        start.elapsed().as_secs_f64()
    ));
    v
}

fn c8_nonlinear_regulation() -> Verdict {
    let mut v = Verdict::new();
    let (g, q, c, m) = pack(150);
    let shape = Field::from_fn(g, |x| (PI * x / L).sin());
    let d = shape.scaled(0.02 / shape.norm());
    let bound = admissible_gain(&c, &m, GainMode::Nonlinear { cap: f64::INFINITY });
    let k = 0.5 * bound;
    let eq = nonlinear_equilibrium(&d, 0.01, k, g, 30, 1e-12).unwrap();
    let ratio = eq.contraction_est.unwrap_or(f64::NAN);
    v.check(eq.iterations <= 30 && eq.residual < 1e-7 && ratio < 1.0, format!(
        "fixed point: {} iterations, residual {:.2e}, contraction {:.2e}",
        eq.iterations, eq.residual, ratio
    ));
    let bump = Field::from_fn(g, |x| x * (L - x) * (L - x));
    let w0 = bump.scaled(0.05 / bump.norm());
    let cfg = ClosedLoopConfig {
        params: KdvParams::new(g, 1e-3, 1.0, true).unwrap(),
        k,
        r: 0.01,
        d,
        d2: 0.0,
        w0,
        eta0: 0.0,
        t_final: 60.0,
        record_every: 100,
        gain_bound: Some(bound),
        override_safety: false,
        lyapunov: Some(LyapunovContext { q, consts: c, m }),
        equilibrium: Some(eq),
    };
    let s = closed_loop_simulate(&cfg).unwrap();
    v.check(s.blow_up.is_none(), format!("no blow-up up to T = 60 (blow-up record {:?})", s.blow_up));
    let e = s.last("e").unwrap().abs();
    v.check(e < 5e-3, format!("|y(T) - r| = {e:.2e} < 5e-3 (k = {k:.4})"));
    v
}

fn kdvf(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kdvf")).args(args).env_remove("KDVF_CACHE_DIR").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scenarios() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "scn")).collect();
    v.sort();
    v
}

fn c9_critical_length() -> Verdict {
    let mut v = Verdict::new();
    let w = is_critical_length(2.0 * PI, 1e-9, 3);
    v.check(w == Some((1, 1)), format!("L = 2pi detected with witness {w:?}"));
    let ok = is_critical_length(L, 1e-9, 3);
    v.check(ok.is_none(), format!("L = 1.5 not critical ({ok:?})"));
    let tmp = tempfile::tempdir().unwrap();
    let scn = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/critical_length.scn");
    let (code, _) = kdvf(&["run", scn.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    let report = std::fs::read_to_string(tmp.path().join("critical_length.report.txt")).unwrap_or_default();
    v.check(code == 5 && report.contains("(k, l) = (1, 1)"), format!("regulation run at L = 2pi exits {code}, report names the witness: {}", report.contains("(1, 1)")));
    v
}

fn rows_without_clock(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| match l.rfind(',') {
            Some(i) if !l.starts_with('#') => l[..i].to_string(),
            _ => l.to_string(),
        })
        .collect()
}

fn c10_determinism() -> Verdict {
    let mut v = Verdict::new();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for scn in scenarios() {
        let name = scn.file_stem().unwrap().to_string_lossy().into_owned();
        let (ca, _) = kdvf(&["run", scn.to_str().unwrap(), "--out", a.path().to_str().unwrap()]);
        let (cb, _) = kdvf(&["run", scn.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
        let csv = |d: &Path| d.join(format!("{name}.csv"));
        let same = if csv(a.path()).exists() {
            csv(b.path()).exists() && rows_without_clock(&csv(a.path())) == rows_without_clock(&csv(b.path()))
        } else {
            !csv(b.path()).exists()
                && std::fs::read(a.path().join(format!("{name}.report.txt"))).ok()
                    == std::fs::read(b.path().join(format!("{name}.report.txt"))).ok()
        };
        v.check(ca == cb && same, format!("{name}: exit {ca}/{cb}, records identical: {same}"));
    }
    v
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("energy law", c1_energy_law),
        ("M-profile certificate", c2_m_profile),
        ("Sylvester identity", c3_sylvester),
        ("kernels", c4_kernels),
        ("observer decay", c5_observer_decay),
        ("ISS monitor", c6_iss),
        ("linear regulation", c7_linear_regulation),
        ("nonlinear regulation", c8_nonlinear_regulation),
        ("critical length", c9_critical_length),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let verdicts: Vec<(usize, &str, Verdict)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .enumerate()
            .filter(|(i, (name, _))| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()) || f == &(i + 1).to_string()))
            .map(|(i, (name, f))| (i + 1, *name, s.spawn(*f)))
            .collect();
        handles
            .into_iter()
            .map(|(i, name, h)| {
                let v = h.join().unwrap_or_else(|_| Verdict { pass: false, lines: vec!["FAIL panicked".into()] });
                (i, name, v)
            })
            .collect()
    });
    let mut failed = Vec::new();
    for (i, name, v) in &verdicts {
        println!("criterion {i} ({name}): {}", if v.pass { "PASS" } else { "FAIL" });
        for l in &v.lines {
            println!("    {l}");
        }
        if !v.pass {
            failed.push(*i);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", verdicts.len());
    } else {
        println!("acceptance: criteria {failed:?} fail");
        std::process::exit(1);
    }
}

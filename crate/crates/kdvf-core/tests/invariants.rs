use kdvf_core::forwarding::{closed_loop_simulate, m_profile, sylvester_residual, ClosedLoopConfig, LyapunovContext};
use kdvf_core::grid::{diff, integrate, is_critical_length, make_grid, Field, Grid};
use kdvf_core::kdv::{simulate, InputSignals, KdvParams};
use kdvf_core::kernel::{gain_p, solve_kernel_P, solve_kernel_Q, Kernel2D};
use kdvf_core::lyapunov::{check_dissipation, compute_constants, DissipationForm, LyapunovConstants, Slack};
use kdvf_core::observer::simulate_error_system;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

const L: f64 = 1.5;

fn modes(g: Grid, c: &[f64]) -> Field {
    Field::from_fn(g, |x| c.iter().enumerate().map(|(j, a)| a * ((j + 1) as f64 * PI * x / L).sin()).sum())
}

// adds x²(x−L)/L² so that w_x(L) matches the boundary feedback at t = 0
fn compatible(g: Grid, c: &[f64], slope_at_l: f64) -> Field {
    let base = modes(g, c);
    let slope: f64 = c.iter().enumerate().map(|(j, a)| a * (j + 1) as f64 * PI / L * ((j + 1) as f64 * PI).cos()).sum();
    base.axpy(slope_at_l - slope, &Field::from_fn(g, |x| x * x * (x - L) / (L * L)))
}

fn setup40() -> &'static (Grid, Kernel2D, Field, LyapunovConstants, Field) {
    static S: OnceLock<(Grid, Kernel2D, Field, LyapunovConstants, Field)> = OnceLock::new();
    S.get_or_init(|| {
        let g = make_grid(L, 40).unwrap();
        let (p, _) = solve_kernel_P(1.0, g).unwrap();
        let (q, _) = solve_kernel_Q(1.0, g).unwrap();
        let gain = gain_p(&p);
        let c = compute_constants(1.0, &q, &gain).unwrap();
        (g, q, gain, c, m_profile(g).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn integrate_is_linear_and_positive(a in -3.0f64..3.0, b in -3.0f64..3.0, n in 8usize..60, s in 0.1f64..2.0) {
        let g = make_grid(L, n).unwrap();
        let f = Field::from_fn(g, |x| (s * x).cos());
        let h = Field::from_fn(g, |x| x * x - s);
        let lhs = integrate(&f.scaled(a).axpy(b, &h));
        let rhs = a * integrate(&f) + b * integrate(&h);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let pos = Field::from_fn(g, |x| (s * x).sin().powi(2));
        prop_assert!(integrate(&pos) >= 0.0);
    }

    #[test]
    fn diff_annihilates_low_degree(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, n in 8usize..50) {
        let g = make_grid(L, n).unwrap();
        let konst = Field::from_fn(g, |_| c0);
        let lin = Field::from_fn(g, |x| c0 + c1 * x);
        let scale = 1.0 + c0.abs() + c1.abs();
        prop_assert!(diff(&konst, 1).unwrap().max_abs() <= 1e-9 * scale * n as f64);
        prop_assert!(diff(&lin, 3).unwrap().max_abs() <= 1e-6 * scale * (n as f64).powi(3));
        let d1 = diff(&lin, 1).unwrap();
        prop_assert!(d1.values().iter().all(|v| (v - c1).abs() <= 1e-9 * scale * n as f64));
    }

    #[test]
    fn critical_detection_is_monotone_in_k_max(l in 0.5f64..30.0, k in 1u32..6) {
        if is_critical_length(l, 1e-9, k).is_some() {
            prop_assert!(is_critical_length(l, 1e-9, k + 3).is_some());
        }
    }

    #[test]
    fn backward_euler_energy_never_grows(c in prop::collection::vec(-1.0f64..1.0, 4)) {
        let g = make_grid(L, 50).unwrap();
        let p = KdvParams::linear(g, 2e-3).unwrap();
        let s = simulate(&modes(g, &c), &p, &InputSignals::zero(), 0.2, 1).unwrap();
        let e = s.column("E").unwrap();
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(s.snapshots.iter().all(|sn| sn.w[0].abs() <= 1e-10 && sn.w[50].abs() <= 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn unforced_closed_loop_lyapunov_decays(c in prop::collection::vec(-0.5f64..0.5, 3), eta0 in -0.5f64..0.5) {
        let (g, q, _, consts, m) = setup40();
        let k = 0.5 * consts.k0_star;
        let cfg = ClosedLoopConfig {
            params: KdvParams::linear(*g, 2e-3).unwrap(),
            k,
            r: 0.0,
            d: Field::zeros(*g),
            d2: 0.0,
            w0: compatible(*g, &c, k * eta0),
            eta0,
            t_final: 1.0,
            record_every: 1,
            gain_bound: Some(consts.k0_star),
            override_safety: false,
            lyapunov: Some(LyapunovContext { q: q.clone(), consts: *consts, m: m.clone() }),
            equilibrium: None,
        };
        let s = closed_loop_simulate(&cfg).unwrap();
        let zero = Field::zeros(*g);
        let form = DissipationForm::ClosedLoop { q, consts: *consts, m, w_inf: &zero, eta_inf: 0.0 };
        let rep = check_dissipation(&s.snapshots, &form, Slack::relative(1e-10)).unwrap();
        prop_assert_eq!(rep.violations, 0);
        let v = s.column("V_full").unwrap();
        prop_assert!(v.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn kernel_residual_does_not_grow_under_refinement() {
    let mut last = f64::INFINITY;
    for n in [40, 80] {
        let g = make_grid(L, n).unwrap();
        let (p, rp) = solve_kernel_P(1.0, g).unwrap();
        let (q, rq) = solve_kernel_Q(1.0, g).unwrap();
        assert_eq!(p.boundary_max(), 0.0);
        assert_eq!(q.boundary_max(), 0.0);
        let r = rp.interior_residual.max(rq.interior_residual);
        // round-off level residuals: compare against an absolute floor as well
        assert!(r <= 1.2 * last || r < 1e-9, "n={n}: {r:e} after {last:e}");
        last = r;
    }
}

#[test]
fn sylvester_residual_converges() {
    let mut prev = None;
    for n in [30, 60, 120] {
        let g = make_grid(L, n).unwrap();
        let m = m_profile(g).unwrap();
        let w = Field::from_fn(g, |x| (PI * x / L).sin());
        let r = sylvester_residual(&m, &w, -PI / L).unwrap().abs();
        if let Some(p) = prev {
            assert!(r <= p / 3.5 || r < 1e-11, "n={n}: {r:e} after {p:e}");
        }
        prev = Some(r);
    }
}

#[test]
fn observer_error_bounded_under_constant_inputs() {
    let (g, _, gain, _, _) = setup40();
    let d1 = Field::from_fn(*g, |x| 0.05 * (PI * x / L).sin());
    let inputs = InputSignals::constant(d1, 0.01);
    let params = KdvParams::linear(*g, 1e-2).unwrap();
    let w0 = Field::from_fn(*g, |x| x * (L - x) * (L - x));
    let s = simulate_error_system(&w0, &params, gain, &inputs, 20.0, 10, None).unwrap();
    let norm = s.column("norm").unwrap();
    let first = norm[0];
    assert!(s.blow_up.is_none());
    assert!(norm.iter().all(|v| *v <= first.max(0.1)), "{:?}", norm.iter().cloned().fold(0.0, f64::max));
    // settles to a forced steady state
    let tail = &norm[norm.len() - 10..];
    let spread = tail.iter().cloned().fold(0.0, f64::max) - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-8);
}

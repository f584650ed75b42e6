use echo_lab::cascade::growth_factor;
use echo_lab::norms::{resonance_depth, weight_tilde, Multiplier, MultiplierSpec};
use echo_lab::quad;
use echo_lab::scenario::{critical_schedule, derive_k0, ScenarioParams};
use echo_lab::vlasov::{self, exact_exp_integral, Dynamics, SolverConfig, SpectralField};
use echo_lab::volterra::{resolvent, solve_linear_closed, solve_linear_recursive, ForcingHistory, ResolventKernel};
use echo_lab::C64;
use proptest::prelude::*;

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

/// Real-symmetric field with a few random bumps on modes up to `k_max`.
fn random_real_field(k_max: u32, bumps: &[(i64, f64, f64, f64)]) -> SpectralField {
    let mut f = SpectralField::zeros(3.0, k_max, 40.0, 0.25);
    for &(k, center, re, im) in bumps {
        let k = k.clamp(1, k_max as i64);
        let plus = move |eta: f64| C64::new(re, im) * (-(eta - center).abs()).exp();
        let minus = move |eta: f64| C64::new(re, -im) * (-(eta + center).abs()).exp();
        let add = |f: &mut SpectralField, k: i64, g: &dyn Fn(f64) -> C64| {
            let mut row = f.dense_row(k);
            for (j, v) in row.iter_mut().enumerate() {
                *v += g(f.eta(j));
            }
            f.set_row(k, 0, row);
        };
        add(&mut f, k, &plus);
        add(&mut f, -k, &minus);
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn critical_intervals_tile(eta in 1.0f64..1e7, k_cap in 1u32..60) {
        let s = critical_schedule(eta, k_cap);
        for w in s.entries.windows(2) {
            prop_assert!(ulps(w[0].end, w[1].start) <= 4);
            prop_assert!(w[0].start < w[0].end);
        }
        prop_assert_eq!(s.entries.last().unwrap().end, 2.0 * eta.abs());
    }

    #[test]
    fn k0_monotone(eps in 1e-4f64..0.1, eta in 10.0f64..1e6, k in 0.5f64..20.0, bump in 1.0f64..3.0) {
        let base = derive_k0(eps, eta, k);
        prop_assert!(derive_k0(eps * bump, eta, k) >= base);
        prop_assert!(derive_k0(eps, eta * bump, k) >= base);
        prop_assert!(derive_k0(eps, eta, k * bump) >= base);
    }

    #[test]
    fn growth_recurrence_is_exact(x in 1.0f64..2e5) {
        let n = resonance_depth(x, 1.0, 1.0);
        for k in 1..n {
            let lhs = growth_factor(k, x, 1.0, 1.0);
            let kf = (k + 1) as f64;
            let rhs = growth_factor(k + 1, x, 1.0, 1.0) * x / (kf * kf * kf);
            prop_assert!(ulps(lhs, rhs) <= 4, "k={} {} vs {}", k, lhs, rhs);
        }
        prop_assert_eq!(growth_factor(n, x, 1.0, 1.0), 1.0);
    }

    #[test]
    fn depth_is_even(eta in -1e8f64..1e8, kc in 1e-4f64..1.0) {
        prop_assert_eq!(resonance_depth(eta, kc, 1.0), resonance_depth(-eta, kc, 1.0));
    }

    #[test]
    fn weight_bounded_and_monotone(eta in 10.0f64..1e6, t0 in 0.1f64..10.0, steps in 10usize..80) {
        let (kn, eps) = (5.0f64, 1e-3f64);
        let c = (kn * eps).cbrt();
        let lower = 0.1 * (-6.0 * c * eta.cbrt()).exp();
        let t_end = 2.5 * eta;
        let mut prev = 0.0;
        for i in 0..=steps {
            let t = t0 + (t_end - t0) * i as f64 / steps as f64;
            let w = weight_tilde(t, eta, kn, eps);
            prop_assert!(w > 0.0 && w <= 1.0);
            prop_assert!(w >= lower);
            prop_assert!(w >= prev);
            prev = w;
        }
        prop_assert_eq!(weight_tilde(2.0 * eta + 1.0, eta, kn, eps), 1.0);
    }

    #[test]
    fn g_multiplier_non_increasing(eta in 10.0f64..1e5, k in 1.0f64..10.0) {
        let p = ScenarioParams::desk();
        let d = p.derive().unwrap();
        let spec = MultiplierSpec::from_scenario(&p, &d);
        let mut prev = f64::INFINITY;
        for i in 0..60 {
            let t = 1.0 + i as f64 * eta / 20.0;
            let g = spec.ln_eval(Multiplier::G, t, k, eta);
            prop_assert!(g <= prev + 1e-12);
            prev = g;
        }
    }

    #[test]
    fn gravitational_resolvent_nonnegative(delta in 1e-6f64..0.04, k in 1i64..4, t in 0.0f64..60.0) {
        let kern = ResolventKernel::new(-1, delta, 1.0, k);
        prop_assert!(resolvent(t, &kern).unwrap() >= 0.0);
    }

    #[test]
    fn recursive_solve_matches_direct(
        zeta in prop::sample::select(vec![-1, 1]),
        delta in 1e-4f64..0.04,
        k in 1i64..4,
        coeffs in prop::collection::vec((-1.0f64..1.0, 0.0f64..3.0), 1..4),
    ) {
        let kern = ResolventKernel::new(zeta, delta, 1.0, k);
        let h = ForcingHistory::from_fn(0.5, 0.02, 400, |t| {
            coeffs.iter().map(|&(a, w)| C64::new(a * (w * t).cos(), a * (w * t).sin())).sum()
        });
        let a = solve_linear_closed(&h, &kern).unwrap();
        let b = solve_linear_recursive(&h, &kern).unwrap();
        let scale = a.values[0].iter().fold(1e-300f64, |m, v| m.max(v.norm()));
        for (x, y) in a.values[0].iter().zip(&b.values[0]) {
            prop_assert!((x - y).norm() <= 1e-11 * scale);
        }
    }

    #[test]
    fn exp_integral_matches_quadrature(lambda in 0.0f64..0.95, y in -20.0f64..20.0) {
        let f = |x: f64| (-lambda * x.abs() - (x - y).abs()).exp();
        let (lo, hi) = (0.0f64.min(y), 0.0f64.max(y));
        let q = quad::integrate_pieces(f, -1200.0, 1200.0, &[lo, hi], 1e-14, 1e-13);
        prop_assert!((q - exact_exp_integral(lambda, y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn axpy_and_scaling_agree(bumps in prop::collection::vec((1i64..4, -30.0f64..30.0, -1.0f64..1.0, -1.0f64..1.0), 1..5)) {
        let f = random_real_field(4, &bumps);
        prop_assert_eq!(f.axpy(-1.0, &f).max_abs(), 0.0);
        let two = f.scaled(2.0);
        let sum = f.axpy(1.0, &f);
        for k in f.modes() {
            for j in 0..f.n_eta {
                prop_assert!((two.get(k, j) - sum.get(k, j)).norm() <= 1e-15 * f.max_abs());
            }
        }
    }

    #[test]
    fn rhs_preserves_reality(bumps in prop::collection::vec((1i64..4, -30.0f64..30.0, -1.0f64..1.0, -1.0f64..1.0), 1..4)) {
        let p = ScenarioParams::desk();
        let f = random_real_field(4, &bumps);
        prop_assert!(f.reality_defect() <= 1e-15);
        let r = vlasov::rhs_nonlinear(&f, &p, Dynamics::Nonlinear, 0.0);
        prop_assert!(r.max_abs() > 0.0);
        prop_assert!(r.reality_defect() <= 1e-9, "defect {}", r.reality_defect());
    }
}

#[test]
fn free_transport_is_static() {
    let p = ScenarioParams::desk();
    let f = random_real_field(3, &[(1, 5.0, 0.3, 0.1), (3, -12.0, 0.5, -0.2)]);
    let cfg = SolverConfig {
        dynamics: Dynamics::FreeTransport,
        snapshots: vec![4.0, 9.0],
        ..SolverConfig::from_scenario(&p)
    };
    let tr = vlasov::run_forward(&f, &p, 10.0, &cfg).unwrap();
    for s in tr.snapshots.iter().chain([&tr.final_field]) {
        assert_eq!(s.axpy(-1.0, &f).max_abs(), 0.0);
    }
}

#[test]
fn density_matches_snapshots() {
    let p = ScenarioParams::desk();
    let f = random_real_field(3, &[(1, 5.0, 1e-3, 0.0), (2, -8.0, 5e-4, 2e-4)]);
    let cfg = SolverConfig {
        snapshots: vec![6.0, 9.5],
        ..SolverConfig::from_scenario(&p)
    };
    let tr = vlasov::run_forward(&f, &p, 12.0, &cfg).unwrap();
    for s in &tr.snapshots {
        for k in [1i64, 2, -2] {
            let eta = k as f64 * s.t;
            let j = (eta + s.eta_max) / s.d_eta;
            let (j0, u) = (j.floor() as usize, j.fract());
            let direct = s.get(k, j0) * (1.0 - u) + s.get(k, j0 + 1) * u;
            let from_history = tr.density.sample(k, s.t);
            let scale = s.max_abs();
            // linear interpolation in eta against the solver's cubic; the bumps are smooth at these points
            assert!((direct - from_history).norm() <= 1e-2 * scale, "k={k} t={}", s.t);
        }
    }
}

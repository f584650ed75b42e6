use echo_lab::cascade::{self, GrowthFamily, GrowthProfile, HighFreqData};
use echo_lab::scenario::ScenarioParams;
use echo_lab::vlasov::SpectralField;
use proptest::prelude::*;

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

#[test]
fn grid_reconstruction_matches_pointwise() {
    let p = ScenarioParams::desk();
    let d = p.derive().unwrap();
    let data = HighFreqData::from_scenario(&p, &d);
    let rho = cascade::run_second_iterate(&p, &data).unwrap();
    assert!(rho.reality_defect() < 1e-10);

    let template = SpectralField::zeros(0.0, 4, d.eta0 + 200.0, 0.25);
    for t in [1100.0, 2100.0] {
        let grid = cascade::reconstruct_field(&rho, &data, &p, t, &template);
        let ks = [-4i64, -2, 1, 3];
        let js: Vec<usize> = [d.eta0 - 3.0, d.eta0, d.eta0 + 0.5, -d.eta0, 10.0]
            .iter()
            .map(|&e| template.index_of(e).unwrap())
            .collect();
        let etas: Vec<f64> = js.iter().map(|&j| template.eta(j)).collect();
        let direct = cascade::reconstruct_distribution(&rho, &data, &p, t, &ks, &etas);
        let scale = grid.max_abs();
        assert!(scale > 0.0);
        for &k in &ks {
            for (i, &j) in js.iter().enumerate() {
                let (a, b) = (grid.get(k, j), direct.get(k, i));
                assert!((a - b).norm() <= 1e-6 * scale, "t={t} k={k} eta={}: {a} vs {b}", etas[i]);
            }
        }
    }
}

#[test]
fn echoes_follow_critical_times() {
    let p = ScenarioParams::desk();
    let d = p.derive().unwrap();
    let data = HighFreqData::from_scenario(&p, &d);
    let rho = cascade::run_second_iterate(&p, &data).unwrap();
    let echoes = cascade::detect_echoes(&rho);
    let ks: Vec<i64> = (1..=d.k0 as i64).collect();
    assert!(echoes.time_ordered(&ks));
    for &k in &ks {
        let e = echoes.get(k).unwrap();
        assert!((e.t_peak - d.eta0 / k as f64).abs() <= 0.05 * d.eta0 / k as f64);
    }
}

proptest! {
    #[test]
    fn profile_recurrence(kc in 0.5f64..20.0, eps in 1e-3f64..0.05, eta in 100.0f64..1e6) {
        let prof = GrowthProfile::build(GrowthFamily::Y, kc, eps, eta, 40);
        let x = kc * eps * eta;
        for k in 1..prof.depth.min(39) as i64 {
            let kf = (k + 1) as f64;
            let next = prof.get(k + 1) * x / (kf * kf * kf);
            prop_assert!(ulps(prof.get(k), next) <= 4);
        }
        for k in prof.depth.max(1)..=40 {
            prop_assert_eq!(prof.get(k as i64), 1.0);
        }
    }
}

#[test]
fn growth_examples() {
    // K eps eta = 27 gives N = 3
    assert_eq!(cascade::growth_factor(1, 27.0, 1.0, 1.0), 27.0 / 8.0);
    assert_eq!(cascade::growth_factor(2, 27.0, 1.0, 1.0), 1.0);
    assert_eq!(cascade::growth_factor(1, 8.0, 1.0, 1.0), 1.0);
}

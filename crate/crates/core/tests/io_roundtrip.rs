use echo_lab::history::DensityHistory;
use echo_lab::io::{self, Report, RunManifest};
use echo_lab::report::{Check, CheckLabel};
use echo_lab::scenario::ScenarioParams;
use echo_lab::vlasov::SpectralField;
use echo_lab::{LabError, C64};
use proptest::prelude::*;

fn history(times: Vec<f64>, k_max: u32, vals: &[(f64, f64)]) -> DensityHistory {
    let mut h = DensityHistory::new(times, DensityHistory::symmetric_modes(k_max));
    let mut it = vals.iter().cycle();
    for col in &mut h.values {
        for v in col.iter_mut() {
            let &(re, im) = it.next().unwrap();
            *v = C64::new(re, im);
        }
    }
    h
}

fn sorted_times(raw: Vec<f64>) -> Vec<f64> {
    let mut t = raw;
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn density_csv_round_trip(
        raw in prop::collection::vec(-1e6f64..1e6, 1..20),
        k_max in 1u32..5,
        vals in prop::collection::vec((prop::num::f64::NORMAL | prop::num::f64::ZERO, prop::num::f64::NORMAL), 1..30),
    ) {
        let h = history(sorted_times(raw), k_max, &vals);
        let mut buf = Vec::new();
        io::write_density(&h, &mut buf).unwrap();
        let back = io::parse_density(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &h);
        let mut again = Vec::new();
        io::write_density(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn field_binary_round_trip(
        k_max in 0u32..4,
        rows in prop::collection::vec((0usize..30, prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..12)), 9),
        t in -10.0f64..10.0,
    ) {
        let mut f = SpectralField::zeros(t, k_max, 4.0, 0.125);
        for (k, (start, vals)) in f.modes().collect::<Vec<_>>().into_iter().zip(rows) {
            let v: Vec<C64> = vals.into_iter().map(|(a, b)| C64::new(a, b)).collect();
            let start = start.min(f.n_eta - v.len());
            f.set_row(k, start, v);
        }
        let mut buf = Vec::new();
        io::write_field_binary(&f, &mut buf).unwrap();
        let g = io::read_field_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(g.k_max, f.k_max);
        prop_assert_eq!(g.t, f.t);
        for k in f.modes() {
            prop_assert_eq!(g.dense_row(k), f.dense_row(k));
        }
    }

    #[test]
    fn report_round_trip(values in prop::collection::vec(prop::num::f64::ANY, 3)) {
        let mut r = Report::new(RunManifest::new("abc".into(), ScenarioParams::desk().grid));
        r.push(Check::at_most(CheckLabel::RoundTrip, values[0], 1e-4).with("x", values[1]));
        r.push(Check::at_least(CheckLabel::ResolventConvergence, values[2], 1.9));
        let s = io::report_to_string(&r).unwrap();
        let back = io::parse_report(&s).unwrap();
        prop_assert_eq!(io::report_to_string(&back).unwrap(), s);
    }

    #[test]
    fn overrides_are_hashed(v in 1e-4f64..0.1) {
        let set = vec![format!("physics.epsilon={v}")];
        let p = io::parse_scenario_with("", &set);
        if let Ok(p) = p {
            prop_assert_eq!(p.epsilon, v);
        }
        prop_assert_eq!(io::scenario_hash(b"", &set), io::scenario_hash(b"", &set));
        prop_assert_ne!(io::scenario_hash(b"", &set), io::scenario_hash(b"", &[]));
    }
}

#[test]
fn unsorted_density_rejected() {
    let text = "t,k,re,im,abs\n1,1,0,0,0\n0.5,1,0,0,0\n";
    match io::parse_density(text.as_bytes()) {
        Err(LabError::Parse { line, key, .. }) => {
            assert_eq!(line, Some(3));
            assert_eq!(key.as_deref(), Some("t"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn ragged_modes_rejected() {
    let text = "t,k,re,im,abs\n0,-1,0,0,0\n0,1,0,0,0\n1,1,0,0,0\n";
    assert!(io::parse_density(text.as_bytes()).is_err());
}

#[test]
fn config_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "[grid]\nk_max = 5\n\n[checks]\nseed = 9\n").unwrap();
    let p = io::read_scenario(&cfg).unwrap();
    assert_eq!(p.grid.k_max, 5);
    assert_eq!(p.checks.seed, 9);

    let rho = history(vec![0.0, 1.0], 2, &[(1.0, -2.0)]);
    io::write_density_csv(&rho, &dir.path().join("rho.csv")).unwrap();
    let mut m = RunManifest::new(io::scenario_hash(&std::fs::read(&cfg).unwrap(), &[]), p.grid.clone());
    m.add_file(dir.path(), "rho.csv").unwrap();
    m.verify_files(dir.path()).unwrap();
    std::fs::write(dir.path().join("rho.csv"), "tampered").unwrap();
    assert!(m.verify_files(dir.path()).is_err());
}

#[test]
fn bad_magic_rejected() {
    assert!(io::read_field_binary(&b"NOTAFLD1\0\0\0\0"[..]).is_err());
}

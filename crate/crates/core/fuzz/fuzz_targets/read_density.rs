#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rho) = echo_lab::io::parse_density(data) {
        let mut out = Vec::new();
        echo_lab::io::write_density(&rho, &mut out).unwrap();
        let again = echo_lab::io::parse_density(out.as_slice()).expect("rewritten table must parse");
        assert_eq!(again.modes, rho.modes);
        assert_eq!(again.times.len(), rho.times.len());
    }
});

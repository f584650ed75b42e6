#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = echo_lab::io::parse_report(text) {
            let s = echo_lab::io::report_to_string(&r).unwrap();
            echo_lab::io::parse_report(&s).expect("rewritten report must parse");
        }
    }
});

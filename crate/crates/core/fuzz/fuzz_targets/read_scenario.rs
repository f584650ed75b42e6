#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = echo_lab::io::parse_scenario(text) {
            // anything accepted must also pass validation on its own
            p.validate().expect("parsed scenario failed validation");
        }
    }
});

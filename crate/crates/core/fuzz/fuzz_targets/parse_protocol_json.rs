#![no_main]
use libfuzzer_sys::fuzz_target;

// building exercises plate validation and the completeness check as well
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = qutrit::io::parse_protocol_json(text) {
            let _ = p.build();
        }
    }
});

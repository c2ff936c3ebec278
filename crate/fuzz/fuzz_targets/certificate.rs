#![no_main]

use hamadv_core::adversary::Certificate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cert) = Certificate::from_json(text) {
        let _ = cert.check_invariants();
        let again = Certificate::from_json(&cert.to_json().unwrap()).unwrap();
        assert_eq!(again.to_json().unwrap(), cert.to_json().unwrap());
    }
});

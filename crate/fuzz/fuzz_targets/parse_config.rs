#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = hamadv_cli::parse_config(text) {
            let _ = config.start();
            let _ = config.construction_params();
        }
    }
});

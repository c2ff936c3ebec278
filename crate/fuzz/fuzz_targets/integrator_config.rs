#![no_main]

use hamadv_core::hamiltonian::HamiltonianSpec;
use hamadv_core::integrators::{run_traced, IntegratorConfig};
use hamadv_core::point::PhasePoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(config) = serde_json::from_slice::<IntegratorConfig>(data) else {
        return;
    };
    if config.max_iters == 0 || config.max_iters > 1000 {
        return;
    }
    let spec = HamiltonianSpec::harmonic(1.0).unwrap();
    if let Ok((_, tape)) = run_traced(&config, &spec, &PhasePoint::planar(1.0, 0.0), 0.1) {
        assert!(tape.len() <= config.max_tape_len(1));
    }
});

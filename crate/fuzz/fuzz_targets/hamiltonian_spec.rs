#![no_main]

use hamadv_core::hamiltonian::HamiltonianSpec;
use hamadv_core::point::PhasePoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<HamiltonianSpec>(data) else {
        return;
    };
    let n = spec.dof();
    if n > 64 {
        return;
    }
    let x = PhasePoint { q: vec![0.25; n], p: vec![1.0; n] };
    let _ = spec.energy(&x);
    let _ = spec.gradient(&x);
    let text = serde_json::to_string(&spec).unwrap();
    let back: HamiltonianSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);
});

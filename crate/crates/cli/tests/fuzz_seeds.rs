use std::path::{Path, PathBuf};

use hamadv_cli::parse_config;
use hamadv_core::adversary::Certificate;
use hamadv_core::hamiltonian::HamiltonianSpec;
use hamadv_core::integrators::IntegratorConfig;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_parse() {
    for (path, text) in seeds("parse_config") {
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn hamiltonian_seeds_parse() {
    for (path, text) in seeds("hamiltonian_spec") {
        serde_json::from_str::<HamiltonianSpec>(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn integrator_seeds_parse() {
    for (path, text) in seeds("integrator_config") {
        serde_json::from_str::<IntegratorConfig>(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn certificate_seeds_verify() {
    for (path, text) in seeds("certificate") {
        let cert = Certificate::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cert.check_invariants().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

use std::path::PathBuf;

use hamadv_core::adversary::{SweepGrid, Thresholds};
use hamadv_core::hamiltonian::HamiltonianSpec;
use hamadv_core::integrators::IntegratorConfig;
use hamadv_core::multidof::LiftKind;
use hamadv_core::point::PhasePoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Integrate,
    Diagnose,
    Adversary,
    Multidof,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Integrate => "integrate",
            Command::Diagnose => "diagnose",
            Command::Adversary => "adversary",
            Command::Multidof => "multidof",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Parameters {
    /// Initial point for `integrate`, `diagnose` and the block Jacobian of `multidof`.
    pub start: Option<PhasePoint>,
    pub steps: usize,
    /// Random sample count for sweeps and condition checks.
    pub samples: usize,
    pub q_range: (f64, f64),
    pub p_range: (f64, f64),
    pub fd_step: f64,
    pub dts: Vec<f64>,
    pub translation_qs: Vec<f64>,
    pub continuity_delta: f64,
    pub lambda: f64,
    pub exclusion_radius: Option<f64>,
    pub q0_margin: Option<f64>,
    pub sweep_grid: SweepGrid,
    pub thresholds: Thresholds,
    /// Runs `adversary` on the reduced integrator; selects the lift for `multidof`.
    pub lift: Option<LiftKind>,
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            start: None,
            steps: 10,
            samples: 32,
            q_range: (-1.0, 1.0),
            p_range: (0.5, 1.5),
            fd_step: 1e-5,
            dts: vec![0.1, 0.05, 0.025, 0.0125],
            translation_qs: vec![-5.0, 0.0, 1.0, 5.0, 100.0],
            continuity_delta: 1e-7,
            lambda: 0.25,
            exclusion_radius: None,
            q0_margin: None,
            sweep_grid: SweepGrid::default(),
            thresholds: Thresholds::default(),
            lift: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub command: Command,
    pub integrator: IntegratorConfig,
    #[serde(default = "free_particle")]
    pub hamiltonian: HamiltonianSpec,
    pub dt: f64,
    #[serde(default)]
    pub parameters: Parameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn free_particle() -> HamiltonianSpec {
    HamiltonianSpec::FreeParticle
}

fn ordered(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl ScenarioConfig {
    /// Point used when `parameters.start` is absent: `q = 0.5`, `p = 1` in every pair.
    pub fn start(&self) -> PhasePoint {
        self.parameters.start.clone().unwrap_or_else(|| {
            let n = if self.command == Command::Multidof {
                1
            } else {
                self.hamiltonian.dof()
            };
            PhasePoint {
                q: vec![0.5; n],
                p: vec![1.0; n],
            }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::invalid("dt", format!("must be positive and finite, got {}", self.dt)));
        }
        let p = &self.parameters;
        if p.samples == 0 {
            return Err(ConfigError::invalid("parameters.samples", "must be at least 1"));
        }
        if p.steps > 1_000_000 {
            return Err(ConfigError::invalid("parameters.steps", "at most 1000000"));
        }
        if !ordered(p.q_range) {
            return Err(ConfigError::invalid("parameters.q_range", "must be finite and ordered"));
        }
        if !ordered(p.p_range) {
            return Err(ConfigError::invalid("parameters.p_range", "must be finite and ordered"));
        }
        if !(p.fd_step > 0.0 && p.fd_step.is_finite()) {
            return Err(ConfigError::invalid("parameters.fd_step", "must be positive"));
        }
        if !(p.continuity_delta > 0.0 && p.continuity_delta.is_finite()) {
            return Err(ConfigError::invalid("parameters.continuity_delta", "must be positive"));
        }
        if p.translation_qs.is_empty() || p.translation_qs.iter().any(|q| !q.is_finite()) {
            return Err(ConfigError::invalid("parameters.translation_qs", "need finite samples"));
        }
        if let Some(kind) = p.lift {
            if kind.n < 2 {
                return Err(ConfigError::invalid("parameters.lift", "n must be at least 2"));
            }
        }
        if let Some(start) = &p.start {
            let expected = if self.command == Command::Multidof {
                1
            } else {
                self.hamiltonian.dof()
            };
            if start.dof() != expected {
                return Err(ConfigError::invalid(
                    "parameters.start",
                    format!("expected {expected} degrees of freedom, got {}", start.dof()),
                ));
            }
        }
        if self.command == Command::Multidof && !self.hamiltonian.is_planar() {
            return Err(ConfigError::invalid("hamiltonian", "multidof lifts a planar Hamiltonian"));
        }
        if self.command == Command::Adversary || self.command == Command::Multidof {
            self.construction_params()
                .validate()
                .map_err(|e| ConfigError::invalid("parameters", e.to_string()))?;
        }
        Ok(())
    }

    pub fn construction_params(&self) -> hamadv_core::adversary::ConstructionParams {
        let p = &self.parameters;
        hamadv_core::adversary::ConstructionParams {
            dt: self.dt,
            lambda: p.lambda,
            exclusion_radius: p.exclusion_radius,
            q0_margin: p.q0_margin,
            sweep_grid: p.sweep_grid,
            thresholds: p.thresholds,
        }
    }
}

/// Extracts the offending key from serde's "unknown field `x`" messages.
fn unknown_key(message: &str) -> Option<&str> {
    let rest = message.split("unknown field `").nth(1)?;
    rest.split('`').next()
}

/// Parses and validates a scenario, filling defaults and rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let config: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let mut field = e.path().to_string();
        let message = e.inner().to_string();
        if let Some(key) = unknown_key(&message) {
            if !field.ends_with(key) {
                field = if field == "." || field.is_empty() {
                    key.to_string()
                } else {
                    format!("{field}.{key}")
                };
            }
        }
        ConfigError::Validation { field, message }
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamadv_core::integrators::{ExplicitMethod, Method};

    const MINIMAL: &str = r#"{"command":"integrate","integrator":{"method":"leapfrog"},"hamiltonian":{"variant":"free_particle"},"dt":0.1}"#;

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.command, Command::Integrate);
        assert_eq!(c.integrator.method, Method::Explicit(ExplicitMethod::Leapfrog));
        assert_eq!(c.integrator.solver_tol, 1e-12);
        assert_eq!(c.parameters, Parameters::default());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn negative_dt_names_dt() {
        let text = MINIMAL.replace("0.1", "-1");
        match parse_config(&text) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "dt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = MINIMAL.replace("\"method\"", "\"methodd\"");
        match parse_config(&text) {
            Err(ConfigError::Validation { field, .. }) => assert!(field.contains("methodd"), "{field}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"dt\"", "\"extra\":1,\"dt\"");
        match parse_config(&text) {
            Err(ConfigError::Validation { field, .. }) => assert_eq!(field, "extra"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("{\n  \"command\": ,\n}") {
            Err(ConfigError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn start_dimension_checked() {
        let text = MINIMAL.replace("\"dt\":0.1", "\"dt\":0.1,\"parameters\":{\"start\":{\"q\":[1,2],\"p\":[0,0]}}");
        assert!(matches!(parse_config(&text), Err(ConfigError::Validation { .. })));
    }
}

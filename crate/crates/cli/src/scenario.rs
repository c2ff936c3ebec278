use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hamadv_core::adversary::{certify, AdversaryOutcome, DetSample};
use hamadv_core::diagnostics::{
    consistency_probe, continuity_probe, energy_drift, jacobian, measure_translation_constant,
    polygon_area_ratio, ConsistencyReport, ContinuityReport, DriftReport, StepMap,
    TranslationReport,
};
use hamadv_core::hamiltonian::HamiltonianSpec;
use hamadv_core::integrators::{iterate, run_traced, Integrator, StepResult, UndefinedReason};
use hamadv_core::multidof::{
    check_condition_product, check_condition_untouched, jacobian_block_report, lift,
    reduce_to_planar, BlockJacobianReport, LiftKind, LiftPattern, ProductReport, UntouchedReport,
};
use hamadv_core::point::PhasePoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Command, ScenarioConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

/// A sub-measurement that may fail without sinking the whole report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallible<T> {
    Ok(T),
    Error(String),
}

impl<T, E: std::fmt::Display> From<Result<T, E>> for Fallible<T> {
    fn from(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Fallible::Ok(v),
            Err(e) => Fallible::Error(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrateResult {
    pub start: PhasePoint,
    pub trajectory: Vec<PhasePoint>,
    pub undefined: Option<UndefinedReason>,
    pub energies: Vec<f64>,
    pub max_energy_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub samples: usize,
    pub undefined: usize,
    pub max_det_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseResult {
    pub start: PhasePoint,
    pub determinant_sweep: SweepSummary,
    pub area_ratio: Option<Fallible<f64>>,
    pub energy_drift: Fallible<DriftReport>,
    pub consistency: Fallible<ConsistencyReport>,
    pub translation: Fallible<TranslationReport>,
    pub continuity: ContinuityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultidofResult {
    pub lift: LiftKind,
    pub condition_untouched: Option<Fallible<UntouchedReport>>,
    pub condition_product: Option<Fallible<ProductReport>>,
    pub block_jacobian: Fallible<BlockJacobianReport>,
    /// `|reduced step − planar step|` at the start point.
    pub reduction_deviation: Fallible<f64>,
    pub adversary: AdversaryOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioResult {
    Integrate(IntegrateResult),
    Diagnose(Box<DiagnoseResult>),
    Adversary(Box<AdversaryOutcome>),
    Multidof(Box<MultidofResult>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Violation,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: Command,
    pub integrator: String,
    pub config: ScenarioConfig,
    pub status: Status,
    pub exit_code: u8,
    pub error: Option<String>,
    pub result: Option<ScenarioResult>,
}

/// Report plus the plot-ready CSV for commands that sweep.
pub struct Output {
    pub report: Report,
    pub csv: Option<String>,
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, count: usize, q: (f64, f64), p: (f64, f64)) -> Vec<PhasePoint> {
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
    (0..count)
        .map(|_| {
            let qs = (0..n).map(|_| draw(q)).collect();
            let ps = (0..n).map(|_| draw(p)).collect();
            PhasePoint { q: qs, p: ps }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// CSV with header `q,p,det,det_err`; `q`, `p` are the first pair and
/// undefined determinants are left empty.
pub fn det_csv(rows: &[DetSample]) -> String {
    let mut out = String::from("q,p,det,det_err\n");
    for r in rows {
        out.push_str(&format!("{:?},{:?},{},{}\n", r.q, r.p, fmt_opt(r.det), fmt_opt(r.det_err)));
    }
    out
}

fn det_rows(integrator: &dyn Integrator, spec: &HamiltonianSpec, dt: f64, points: &[PhasePoint], h: f64) -> Vec<DetSample> {
    use rayon::prelude::*;
    let map = StepMap::new(integrator, spec, dt);
    points
        .par_iter()
        .map(|x| {
            let r = jacobian(&map, x, h).ok();
            DetSample {
                q: x.q[0],
                p: x.p[0],
                det: r.as_ref().map(|r| r.determinant),
                det_err: r.as_ref().map(|r| r.det_error),
            }
        })
        .collect()
}

fn run_integrate(config: &ScenarioConfig) -> Result<IntegrateResult, String> {
    let spec = &config.hamiltonian;
    let start = config.start();
    let steps = iterate(&config.integrator, spec, &start, config.dt, config.parameters.steps).map_err(|e| e.to_string())?;
    let mut trajectory = Vec::with_capacity(steps.len());
    let mut undefined = None;
    for s in steps {
        match s {
            StepResult::Defined(y) => trajectory.push(y),
            StepResult::Undefined(r) => undefined = Some(r),
        }
    }
    let e0 = spec.energy(&start).map_err(|e| e.to_string())?;
    let energies = trajectory
        .iter()
        .map(|y| spec.energy(y))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let max_energy_drift = energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max);
    Ok(IntegrateResult {
        start,
        trajectory,
        undefined,
        energies,
        max_energy_drift,
    })
}

fn run_diagnose(config: &ScenarioConfig) -> (DiagnoseResult, Vec<DetSample>) {
    let p = &config.parameters;
    let spec = &config.hamiltonian;
    let integrator = &config.integrator;
    let start = config.start();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points = random_points(&mut rng, spec.dof(), p.samples, p.q_range, p.p_range);
    let rows = det_rows(integrator, spec, config.dt, &points, p.fd_step);
    let determinant_sweep = SweepSummary {
        samples: rows.len(),
        undefined: rows.iter().filter(|r| r.det.is_none()).count(),
        max_det_deviation: rows.iter().filter_map(|r| r.det).map(|d| (d - 1.0).abs()).fold(0.0, f64::max),
    };
    let map = StepMap::new(integrator, spec, config.dt);
    let area_ratio = spec.is_planar().then(|| {
        let (q, pp) = (start.q[0], start.p[0]);
        let square = [
            PhasePoint::planar(q - 0.05, pp - 0.05),
            PhasePoint::planar(q + 0.05, pp - 0.05),
            PhasePoint::planar(q + 0.05, pp + 0.05),
            PhasePoint::planar(q - 0.05, pp + 0.05),
        ];
        polygon_area_ratio(&map, &square, 16).into()
    });
    let free = HamiltonianSpec::FreeParticle;
    let translation = measure_translation_constant(&StepMap::new(integrator, &free, config.dt), &p.translation_qs, config.dt).into();
    let result = DiagnoseResult {
        energy_drift: energy_drift(&map, spec, &start, p.steps).into(),
        consistency: consistency_probe(integrator, spec, &start, &p.dts).into(),
        continuity: continuity_probe(&map, &points, p.continuity_delta),
        start,
        determinant_sweep,
        area_ratio,
        translation,
    };
    (result, rows)
}

fn run_multidof(config: &ScenarioConfig) -> Result<MultidofResult, String> {
    let p = &config.parameters;
    let kind = p.lift.unwrap_or(LiftKind::single(2));
    let lifted = lift(&config.hamiltonian, kind).map_err(|e| e.to_string())?;
    let integrator = &config.integrator;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = random_points(&mut rng, kind.n, p.samples, p.q_range, p.p_range);
    let (condition_untouched, condition_product) = match kind.kind {
        LiftPattern::Single => (
            Some(check_condition_untouched(integrator, &lifted, &samples, config.dt).into()),
            None,
        ),
        LiftPattern::Product => (
            None,
            Some(check_condition_product(integrator, &lifted, &samples, config.dt).into()),
        ),
    };
    let start = config.start();
    let map = StepMap::new(integrator, &lifted, config.dt);
    let block_jacobian = jacobian_block_report(&map, &kind.embed(&start), p.fd_step, kind.kind).into();
    let reduced = reduce_to_planar(integrator.clone(), kind);
    let reduction_deviation = (|| -> Result<f64, String> {
        let a = run_traced(&reduced, &config.hamiltonian, &start, config.dt).map_err(|e| e.to_string())?.0;
        let b = run_traced(integrator, &config.hamiltonian, &start, config.dt).map_err(|e| e.to_string())?.0;
        match (a.point(), b.point()) {
            (Some(a), Some(b)) => Ok(a.max_distance(b)),
            _ => Err("step undefined at the start point".into()),
        }
    })()
    .into();
    Ok(MultidofResult {
        lift: kind,
        condition_untouched,
        condition_product,
        block_jacobian,
        reduction_deviation,
        adversary: certify(&reduced, &config.construction_params()),
    })
}

fn outcome_exit(outcome: &AdversaryOutcome) -> (Status, u8) {
    if outcome.verdict.is_some() {
        (Status::Violation, EXIT_VIOLATION)
    } else if outcome.error.is_some() {
        (Status::Error, EXIT_ERROR)
    } else {
        (Status::Ok, EXIT_OK)
    }
}

/// Runs a validated scenario in memory.
pub fn build_report(config: &ScenarioConfig) -> Output {
    let mut csv = None;
    let (status, exit_code, error, result) = match config.command {
        Command::Integrate => match run_integrate(config) {
            Ok(r) => (Status::Ok, EXIT_OK, None, Some(ScenarioResult::Integrate(r))),
            Err(e) => (Status::Error, EXIT_ERROR, Some(e), None),
        },
        Command::Diagnose => {
            let (r, rows) = run_diagnose(config);
            csv = Some(det_csv(&rows));
            (Status::Ok, EXIT_OK, None, Some(ScenarioResult::Diagnose(Box::new(r))))
        }
        Command::Adversary => {
            let params = config.construction_params();
            let outcome = match config.parameters.lift {
                Some(kind) => certify(&reduce_to_planar(config.integrator.clone(), kind), &params),
                None => certify(&config.integrator, &params),
            };
            if let Some(cert) = &outcome.certificate {
                csv = Some(det_csv(&cert.det_sweep));
            }
            let (status, code) = outcome_exit(&outcome);
            (status, code, outcome.error.clone(), Some(ScenarioResult::Adversary(Box::new(outcome))))
        }
        Command::Multidof => match run_multidof(config) {
            Ok(r) => {
                if let Some(cert) = &r.adversary.certificate {
                    csv = Some(det_csv(&cert.det_sweep));
                }
                let (status, code) = outcome_exit(&r.adversary);
                (status, code, r.adversary.error.clone(), Some(ScenarioResult::Multidof(Box::new(r))))
            }
            Err(e) => (Status::Error, EXIT_ERROR, Some(e), None),
        },
    };
    let integrator = match (config.command, config.parameters.lift) {
        (Command::Adversary, Some(kind)) => format!("{} ({kind})", config.integrator.name()),
        _ => config.integrator.name(),
    };
    Output {
        report: Report {
            command: config.command,
            integrator,
            config: config.clone(),
            status,
            exit_code,
            error,
            result,
        },
        csv,
    }
}

fn write(path: PathBuf, contents: &str) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io { path, source })
}

/// Runs the scenario, writes `report.json` (and `sweep.csv` where the command
/// sweeps) into `out_dir`, and returns the process exit code.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<u8, RunError> {
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let output = build_report(config);
    let mut json = serde_json::to_string_pretty(&output.report)?;
    json.push('\n');
    write(out_dir.join("report.json"), &json)?;
    if let Some(csv) = &output.csv {
        write(out_dir.join("sweep.csv"), csv)?;
    }
    Ok(output.report.exit_code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn integrate_free_particle() {
        let c = parse_config(
            r#"{"command":"integrate","integrator":{"method":"leapfrog"},"hamiltonian":{"variant":"free_particle"},"dt":0.1,
                "parameters":{"start":{"q":[0],"p":[1]}}}"#,
        )
        .unwrap();
        let out = build_report(&c);
        assert_eq!(out.report.exit_code, EXIT_OK);
        let Some(ScenarioResult::Integrate(r)) = out.report.result else { panic!() };
        assert_eq!(r.trajectory.len(), 10);
        for (k, y) in r.trajectory.iter().enumerate() {
            assert!((y.q[0] - 0.1 * (k + 1) as f64).abs() < 1e-14);
            assert_eq!(y.p[0], 1.0);
        }
    }

    #[test]
    fn adversary_exits_with_violation() {
        let c = parse_config(
            r#"{"command":"adversary","integrator":{"method":"step_and_project","base":"leapfrog"},"dt":0.1,
                "parameters":{"sweep_grid":{"q_points":16,"p_points":4}}}"#,
        )
        .unwrap();
        let out = build_report(&c);
        assert_eq!(out.report.exit_code, EXIT_VIOLATION);
        assert!(out.csv.unwrap().starts_with("q,p,det,det_err\n"));
    }

    #[test]
    fn csv_blanks_undefined() {
        let rows = vec![DetSample { q: 1.0, p: 0.5, det: None, det_err: None }];
        assert_eq!(det_csv(&rows), "q,p,det,det_err\n1.0,0.5,,\n");
    }
}

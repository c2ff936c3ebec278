//! Builds a bump Hamiltonian that a given taped integrator cannot tell apart
//! from the free particle, then measures what goes wrong.
//!
//! The integrator is first run at `(0, 1)` and `(q0, 1)` on `H = p²/2`. A bump
//! is placed inside `[q0, q0 + c·Δt]` away from every taped position, so the
//! integrator sees identical data under `H̃ = p²/2 + V(q)` and must produce the
//! same output, while the true `H̃` flow lags behind. The certificate records
//! both tapes, the lag, and sweeps of energy error and Jacobian determinant
//! around the bump to localize the violated property.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bump::{Bump, BumpPotential};
use crate::diagnostics::{continuity_probe, jacobian, ContinuityReport, StepMap, DEFAULT_CONTINUITY_DELTA, DEFAULT_FD_STEP};
use crate::exact_flows::{bump_flow, FlowError, DEFAULT_QUAD_TOL};
use crate::hamiltonian::{agrees_on_tape, HamiltonianSpec, PhaseError};
pub use crate::integrators::run_traced;
use crate::integrators::{Integrator, StepError, StepResult, UndefinedReason};
use crate::point::PhasePoint;
use crate::tape::QueryTape;

/// Tolerance on `|p_out − 1|` when measuring the translation constant.
pub const MOMENTUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("step undefined at {point:?} on the free particle: {reason:?}")]
    Undefined {
        point: PhasePoint,
        reason: UndefinedReason,
    },
    #[error("free-particle step changed the momentum to {p_out}")]
    EnergyNotConserved { p_out: f64 },
    #[error("translation constant {0} is not positive")]
    NonpositiveC(f64),
    #[error("largest free gap {largest_gap} is shorter than {required}")]
    NoRoomForBump { largest_gap: f64, required: f64 },
    #[error("invalid construction parameters: {0}")]
    InvalidParams(String),
    #[error("integrator output changed between H and H̃: {0}")]
    TapeDisagreement(String),
    #[error("incomplete certificate: {0}")]
    IncompleteCertificate(String),
    #[error("no threshold exceeded")]
    NoViolationExhibited,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub energy_tol: f64,
    pub det_tol: f64,
    pub mismatch_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            energy_tol: 1e-10,
            det_tol: 1e-6,
            mismatch_tol: 1e-9,
        }
    }
}

/// Rectangular sampling window for the energy and determinant sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub q_points: usize,
    pub p_points: usize,
    /// Absolute `q` window; defaults to `[q0 − c·Δt, q0 + 2c·Δt]`.
    pub q_range: Option<(f64, f64)>,
    pub p_range: (f64, f64),
    pub fd_step: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            q_points: 64,
            p_points: 16,
            q_range: None,
            p_range: (0.9, 1.1),
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl SweepGrid {
    /// Grid points, `q` outer and `p` inner.
    pub fn points(&self, q0: f64, c: f64, dt: f64) -> Vec<PhasePoint> {
        let (qlo, qhi) = self.q_range.unwrap_or((q0 - c * dt, q0 + 2.0 * c * dt));
        let ps = linspace(self.p_range.0, self.p_range.1, self.p_points);
        linspace(qlo, qhi, self.q_points)
            .into_iter()
            .flat_map(|q| ps.iter().map(move |&p| PhasePoint::planar(q, p)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionParams {
    pub dt: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Defaults to `Δt/100`.
    #[serde(default)]
    pub exclusion_radius: Option<f64>,
    /// Defaults to `c·Δt`.
    #[serde(default)]
    pub q0_margin: Option<f64>,
    #[serde(default)]
    pub sweep_grid: SweepGrid,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_lambda() -> f64 {
    0.25
}

impl ConstructionParams {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            lambda: default_lambda(),
            exclusion_radius: None,
            q0_margin: None,
            sweep_grid: SweepGrid::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        let bad = |m: &str| Err(AdversaryError::InvalidParams(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.lambda > 0.0 && self.lambda < 0.5) {
            return bad("lambda must lie in (0, 1/2)");
        }
        if let Some(r) = self.exclusion_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad("exclusion_radius must be positive");
            }
        }
        if let Some(m) = self.q0_margin {
            if !(m >= 0.0 && m.is_finite()) {
                return bad("q0_margin must be non-negative");
            }
        }
        let g = &self.sweep_grid;
        if g.q_points == 0 || g.p_points == 0 || !(g.fd_step > 0.0) {
            return bad("sweep grid needs points and a positive fd_step");
        }
        if !(g.p_range.0 > 0.0 && g.p_range.0 <= g.p_range.1) {
            return bad("sweep p_range must be positive and ordered");
        }
        if let Some((lo, hi)) = g.q_range {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad("sweep q_range must be ordered");
            }
        }
        let t = &self.thresholds;
        if !(t.energy_tol > 0.0 && t.det_tol > 0.0 && t.mismatch_tol > 0.0) {
            return bad("thresholds must be positive");
        }
        Ok(())
    }
}

/// Runs one free-particle step at `(0, 1)` and reads off `c` from `q_out = c·Δt`.
pub fn measure_c(integrator: &dyn Integrator, dt: f64) -> Result<f64, AdversaryError> {
    let (result, _) = run_traced(integrator, &HamiltonianSpec::FreeParticle, &PhasePoint::planar(0.0, 1.0), dt)?;
    c_from_output(&result, 0.0, dt)
}

fn c_from_output(result: &StepResult, q: f64, dt: f64) -> Result<f64, AdversaryError> {
    let y = match result {
        StepResult::Defined(y) => y,
        StepResult::Undefined(reason) => {
            return Err(AdversaryError::Undefined {
                point: PhasePoint::planar(q, 1.0),
                reason: *reason,
            })
        }
    };
    if y.dof() != 1 {
        return Err(PhaseError::DimensionMismatch {
            expected: 1,
            found: y.dof(),
        }
        .into());
    }
    if !((y.p[0] - 1.0).abs() <= MOMENTUM_TOL) {
        return Err(AdversaryError::EnergyNotConserved { p_out: y.p[0] });
    }
    let c = (y.q[0] - q) / dt;
    if !(c > 0.0) {
        return Err(AdversaryError::NonpositiveC(c));
    }
    Ok(c)
}

/// Start of a window `[q0, q0 + c·Δt]` clear of `[0, c·Δt]` and of every taped position.
pub fn select_q0(tape0: &QueryTape, c: f64, dt: f64, margin: f64) -> f64 {
    tape0
        .q_coordinates()
        .into_iter()
        .fold(c * dt, f64::max)
        + margin
}

/// One bump in the widest stretch of `interval` left after removing
/// `exclusion_radius` neighborhoods of `excluded_qs`.
pub fn construct_adversarial_potential(
    interval: (f64, f64),
    excluded_qs: &[f64],
    lambda: f64,
    exclusion_radius: f64,
) -> Result<BumpPotential, AdversaryError> {
    let (a, b) = interval;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(AdversaryError::InvalidParams(format!("empty interval [{a}, {b}]")));
    }
    if !(exclusion_radius > 0.0) {
        return Err(AdversaryError::InvalidParams("exclusion_radius must be positive".into()));
    }
    let mut blocked: Vec<(f64, f64)> = excluded_qs
        .iter()
        .map(|&x| (x - exclusion_radius, x + exclusion_radius))
        .filter(|&(lo, hi)| hi > a && lo < b)
        .collect();
    blocked.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut gaps = Vec::new();
    let mut cursor = a;
    for (lo, hi) in blocked {
        if lo > cursor {
            gaps.push((cursor, lo));
        }
        cursor = cursor.max(hi);
    }
    if cursor < b {
        gaps.push((cursor, b));
    }
    let longest = gaps.iter().map(|g| g.1 - g.0).fold(0.0, f64::max);
    let required = 4.0 * exclusion_radius;
    if longest < required {
        return Err(AdversaryError::NoRoomForBump {
            largest_gap: longest,
            required,
        });
    }
    // Leftmost among gaps equal up to rounding.
    let (lo, hi) = gaps
        .into_iter()
        .find(|g| g.1 - g.0 >= longest * (1.0 - 1e-12))
        .expect("longest gap exists");
    Ok(BumpPotential::new(vec![Bump {
        center: 0.5 * (lo + hi),
        radius: 0.45 * (hi - lo),
        amplitude: lambda,
    }])?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapeEvidence {
    pub q_coordinates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<QueryTape>,
}

impl TapeEvidence {
    fn from_tape(tape: &QueryTape) -> Self {
        Self {
            q_coordinates: tape.q_coordinates(),
            records: Some(tape.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySweep {
    pub samples: usize,
    /// Largest `|H̃(out) − H̃(in)|` among defined samples.
    pub max_error: f64,
    pub worst_point: Option<PhasePoint>,
    /// Samples whose error exceeds the energy tolerance.
    pub violations: usize,
    pub undefined_points: Vec<PhasePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetSample {
    pub q: f64,
    pub p: f64,
    /// Absent when the step is undefined somewhere on the stencil.
    pub det: Option<f64>,
    pub det_err: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailedProperty {
    Undefinedness,
    EnergyViolated,
    VolumeViolated,
    FlowMismatchOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub failed_property: FailedProperty,
    /// Certificate field holding the evidence.
    pub evidence: String,
    pub value: f64,
    pub point: Option<PhasePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub integrator: String,
    pub params: ConstructionParams,
    pub tape0: TapeEvidence,
    pub tape1: TapeEvidence,
    pub c: f64,
    pub q0: f64,
    pub exclusion_radius: f64,
    pub potential: BumpPotential,
    /// `H̃` as the integrator queries it (lifted for embedded integrators).
    pub queried_hamiltonian: HamiltonianSpec,
    pub output_at_origin: PhasePoint,
    pub output_at_origin_match: bool,
    pub output_at_q0: PhasePoint,
    pub output_at_q0_match: bool,
    pub exact_flow_at_q0: PhasePoint,
    pub mismatch: f64,
    /// `c·Δt − (q̃(c·Δt) − q0)`.
    pub lag: f64,
    pub energy_sweep: EnergySweep,
    pub det_sweep: Vec<DetSample>,
    pub continuity: ContinuityReport,
    pub verdict: Option<Verdict>,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Re-checks the self-contained claims of the certificate.
    pub fn check_invariants(&self) -> Result<(), String> {
        let recomputed = self.output_at_q0.distance(&self.exact_flow_at_q0);
        if recomputed.to_bits() != self.mismatch.to_bits() {
            return Err(format!("mismatch {} != distance {}", self.mismatch, recomputed));
        }
        let (a, b) = (self.q0, self.q0 + self.c * self.params.dt);
        for (lo, hi) in self.potential.support_intervals() {
            if lo < a || hi > b {
                return Err(format!("support ({lo}, {hi}) leaves [{a}, {b}]"));
            }
        }
        for &q in &self.tape1.q_coordinates {
            if !self.potential.vanishes_near(q, self.exclusion_radius) {
                return Err(format!("potential does not vanish near taped q = {q}"));
            }
        }
        for tape in [&self.tape0, &self.tape1] {
            if let Some(records) = &tape.records {
                for r in records {
                    let v = self.queried_hamiltonian.derivative(&r.alpha, &r.point).map_err(|e| e.to_string())?;
                    if v.to_bits() != r.value.to_bits() {
                        return Err(format!("H̃ differs from the taped value at {:?}", r.point));
                    }
                }
            }
        }
        if !(self.output_at_origin_match && self.output_at_q0_match) {
            return Err("outputs differ between H and H̃".into());
        }
        Ok(())
    }
}

/// Names the first violated property in priority order.
pub fn evaluate_verdict(cert: &Certificate, thresholds: &Thresholds) -> Result<Verdict, AdversaryError> {
    if cert.det_sweep.is_empty() || cert.energy_sweep.samples == 0 {
        return Err(AdversaryError::IncompleteCertificate("empty sweep".into()));
    }
    if !(cert.output_at_origin_match && cert.output_at_q0_match) {
        return Err(AdversaryError::TapeDisagreement(
            "outputs under H and H̃ differ; the integrator reads H off the tape".into(),
        ));
    }
    if let Some(x) = cert.energy_sweep.undefined_points.first() {
        return Ok(Verdict {
            failed_property: FailedProperty::Undefinedness,
            evidence: "energy_sweep.undefined_points".into(),
            value: cert.energy_sweep.undefined_points.len() as f64,
            point: Some(x.clone()),
        });
    }
    if let Some(s) = cert.det_sweep.iter().find(|s| s.det.is_none()) {
        return Ok(Verdict {
            failed_property: FailedProperty::Undefinedness,
            evidence: "det_sweep".into(),
            value: 1.0,
            point: Some(PhasePoint::planar(s.q, s.p)),
        });
    }
    if cert.energy_sweep.max_error > thresholds.energy_tol {
        return Ok(Verdict {
            failed_property: FailedProperty::EnergyViolated,
            evidence: "energy_sweep.max_error".into(),
            value: cert.energy_sweep.max_error,
            point: cert.energy_sweep.worst_point.clone(),
        });
    }
    let worst_det = cert
        .det_sweep
        .iter()
        .filter_map(|s| Some((s, (s.det? - 1.0).abs(), s.det_err?)))
        .filter(|&(_, dev, err)| dev > thresholds.det_tol && err < thresholds.det_tol / 10.0)
        .max_by(|x, y| x.1.total_cmp(&y.1));
    if let Some((s, dev, _)) = worst_det {
        return Ok(Verdict {
            failed_property: FailedProperty::VolumeViolated,
            evidence: "det_sweep".into(),
            value: dev,
            point: Some(PhasePoint::planar(s.q, s.p)),
        });
    }
    if cert.mismatch > thresholds.mismatch_tol {
        return Ok(Verdict {
            failed_property: FailedProperty::FlowMismatchOnly,
            evidence: "mismatch".into(),
            value: cert.mismatch,
            point: Some(PhasePoint::planar(cert.q0, 1.0)),
        });
    }
    Err(AdversaryError::NoViolationExhibited)
}

fn run_defined(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    dt: f64,
) -> Result<(PhasePoint, QueryTape), AdversaryError> {
    let (r, tape) = run_traced(integrator, spec, x, dt)?;
    match r {
        StepResult::Defined(y) => Ok((y, tape)),
        StepResult::Undefined(reason) => Err(AdversaryError::Undefined {
            point: x.clone(),
            reason,
        }),
    }
}

fn bitwise_eq(a: &PhasePoint, b: &PhasePoint) -> bool {
    StepResult::Defined(a.clone()).bit_identical(&StepResult::Defined(b.clone()))
}

fn energy_sweep(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    points: &[PhasePoint],
    dt: f64,
    tol: f64,
) -> Result<EnergySweep, AdversaryError> {
    let rows: Vec<Result<Option<f64>, AdversaryError>> = points
        .par_iter()
        .map(|x| {
            let (r, _) = run_traced(integrator, spec, x, dt)?;
            match r {
                StepResult::Defined(y) => Ok(Some((spec.energy(&y)? - spec.energy(x)?).abs())),
                StepResult::Undefined(_) => Ok(None),
            }
        })
        .collect();
    let mut sweep = EnergySweep {
        samples: points.len(),
        max_error: 0.0,
        worst_point: None,
        violations: 0,
        undefined_points: Vec::new(),
    };
    for (x, row) in points.iter().zip(rows) {
        match row? {
            Some(err) => {
                if err > tol {
                    sweep.violations += 1;
                }
                if err > sweep.max_error || sweep.worst_point.is_none() {
                    sweep.max_error = err;
                    sweep.worst_point = Some(x.clone());
                }
            }
            None => sweep.undefined_points.push(x.clone()),
        }
    }
    Ok(sweep)
}

/// Runs the full construction and returns a certificate with its verdict set
/// (or `None` when no threshold is exceeded).
pub fn generate_certificate(
    integrator: &dyn Integrator,
    params: &ConstructionParams,
) -> Result<Certificate, AdversaryError> {
    params.validate()?;
    let dt = params.dt;
    let free = HamiltonianSpec::FreeParticle;
    let origin = PhasePoint::planar(0.0, 1.0);

    let (out0, tape0) = run_defined(integrator, &free, &origin, dt)?;
    let c = c_from_output(&StepResult::Defined(out0.clone()), 0.0, dt)?;
    let margin = params.q0_margin.unwrap_or(c * dt);
    let q0 = select_q0(&tape0, c, dt, margin);
    let start = PhasePoint::planar(q0, 1.0);
    let (out1, tape1) = run_defined(integrator, &free, &start, dt)?;

    let exclusion_radius = params.exclusion_radius.unwrap_or(dt / 100.0);
    let potential = construct_adversarial_potential((q0, q0 + c * dt), &tape1.q_coordinates(), params.lambda, exclusion_radius)?;
    let adversarial = HamiltonianSpec::bump(potential.clone());

    let queried_free = integrator.queried_spec(&free)?;
    let queried_adv = integrator.queried_spec(&adversarial)?;
    if !agrees_on_tape(&queried_free, &queried_adv, &tape0)? || !agrees_on_tape(&queried_free, &queried_adv, &tape1)? {
        return Err(AdversaryError::TapeDisagreement("H̃ differs from H on a taped query".into()));
    }
    let (adv0, _) = run_traced(integrator, &adversarial, &origin, dt)?;
    let (adv1, _) = run_traced(integrator, &adversarial, &start, dt)?;
    let output_at_origin_match = adv0.point().is_some_and(|y| bitwise_eq(y, &out0));
    let output_at_q0_match = adv1.point().is_some_and(|y| bitwise_eq(y, &out1));

    let exact = bump_flow(&potential, &start, c * dt, DEFAULT_QUAD_TOL)?;
    let mismatch = out1.distance(&exact);
    let lag = c * dt - (exact.q[0] - q0);

    let grid = params.sweep_grid.points(q0, c, dt);
    let energy_sweep = energy_sweep(integrator, &adversarial, &grid, dt, params.thresholds.energy_tol)?;
    let map = StepMap::new(integrator, &adversarial, dt);
    let det_sweep: Vec<DetSample> = grid
        .par_iter()
        .map(|x| match jacobian(&map, x, params.sweep_grid.fd_step) {
            Ok(r) => DetSample {
                q: x.q[0],
                p: x.p[0],
                det: Some(r.determinant),
                det_err: Some(r.det_error),
            },
            Err(_) => DetSample {
                q: x.q[0],
                p: x.p[0],
                det: None,
                det_err: None,
            },
        })
        .collect();
    let continuity = continuity_probe(&map, &grid, DEFAULT_CONTINUITY_DELTA);

    let mut cert = Certificate {
        integrator: integrator.name(),
        params: params.clone(),
        tape0: TapeEvidence::from_tape(&tape0),
        tape1: TapeEvidence::from_tape(&tape1),
        c,
        q0,
        exclusion_radius,
        potential,
        queried_hamiltonian: queried_adv,
        output_at_origin: out0,
        output_at_origin_match,
        output_at_q0: out1,
        output_at_q0_match,
        exact_flow_at_q0: exact,
        mismatch,
        lag,
        energy_sweep,
        det_sweep,
        continuity,
        verdict: None,
    };
    cert.verdict = match evaluate_verdict(&cert, &params.thresholds) {
        Ok(v) => Some(v),
        Err(AdversaryError::NoViolationExhibited) => None,
        Err(e) => return Err(e),
    };
    Ok(cert)
}

/// Result of running the construction end to end. Hypothesis failures found
/// before a bump can be placed still yield a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryOutcome {
    pub certificate: Option<Certificate>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

pub fn certify(integrator: &dyn Integrator, params: &ConstructionParams) -> AdversaryOutcome {
    match generate_certificate(integrator, params) {
        Ok(cert) => AdversaryOutcome {
            verdict: cert.verdict.clone(),
            certificate: Some(cert),
            error: None,
        },
        Err(e) => {
            let verdict = match &e {
                AdversaryError::EnergyNotConserved { p_out } => Some(Verdict {
                    failed_property: FailedProperty::EnergyViolated,
                    evidence: "output_at_origin.p".into(),
                    value: (p_out - 1.0).abs(),
                    point: Some(PhasePoint::planar(0.0, 1.0)),
                }),
                AdversaryError::Undefined { point, .. } => Some(Verdict {
                    failed_property: FailedProperty::Undefinedness,
                    evidence: "free_particle_step".into(),
                    value: 1.0,
                    point: Some(point.clone()),
                }),
                _ => None,
            };
            AdversaryOutcome {
                certificate: None,
                verdict,
                error: Some(e.to_string()),
            }
        }
    }
}

//! One-step integrators that see `H` only through a taped [`Oracle`].
//!
//! A step either returns a new point or is undefined; solver failures are
//! reported in-band as [`StepResult::Undefined`]. Arithmetic is performed
//! component by component in a fixed order, so a step is a deterministic
//! function of its inputs and of the values it reads off the oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{HamiltonianSpec, Oracle, PhaseError};
use crate::linalg;
use crate::point::PhasePoint;
use crate::tape::QueryTape;

/// Gradient norm below which the projection direction is considered lost.
pub const GRADIENT_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    SolverDiverged,
    MaxIterations,
    ProjectionFailed,
    GradientVanishes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepResult {
    Defined(PhasePoint),
    Undefined(UndefinedReason),
}

impl StepResult {
    pub fn point(&self) -> Option<&PhasePoint> {
        match self {
            StepResult::Defined(x) => Some(x),
            StepResult::Undefined(_) => None,
        }
    }

    pub fn into_point(self) -> Option<PhasePoint> {
        match self {
            StepResult::Defined(x) => Some(x),
            StepResult::Undefined(_) => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, StepResult::Defined(_))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_identical(&self, other: &StepResult) -> bool {
        match (self, other) {
            (StepResult::Defined(a), StepResult::Defined(b)) => {
                a.dof() == b.dof()
                    && a.to_vec()
                        .iter()
                        .zip(b.to_vec())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (StepResult::Undefined(a), StepResult::Undefined(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("time step must be finite and non-negative, got {0}")]
    InvalidStep(f64),
}

/// Anything that maps `(H, x, Δt)` to a new point while taping its queries.
pub trait Integrator: Sync {
    fn step(
        &self,
        spec: &HamiltonianSpec,
        x: &PhasePoint,
        dt: f64,
        tape: &mut QueryTape,
    ) -> Result<StepResult, StepError>;

    /// The specification whose derivatives actually end up on the tape when
    /// this integrator is handed `spec`. Differs from `spec` only for
    /// integrators that embed the problem in a larger phase space.
    fn queried_spec(&self, spec: &HamiltonianSpec) -> Result<HamiltonianSpec, PhaseError> {
        Ok(spec.clone())
    }

    fn name(&self) -> String;

    /// Classical order of accuracy, when known.
    fn nominal_order(&self) -> Option<u32> {
        None
    }
}

/// Wraps a closure as an [`Integrator`]; used for hand-built test maps.
pub struct FnIntegrator<F> {
    name: String,
    f: F,
}

impl<F> FnIntegrator<F>
where
    F: Fn(&HamiltonianSpec, &PhasePoint, f64, &mut QueryTape) -> Result<StepResult, StepError> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Integrator for FnIntegrator<F>
where
    F: Fn(&HamiltonianSpec, &PhasePoint, f64, &mut QueryTape) -> Result<StepResult, StepError> + Sync,
{
    fn step(
        &self,
        spec: &HamiltonianSpec,
        x: &PhasePoint,
        dt: f64,
        tape: &mut QueryTape,
    ) -> Result<StepResult, StepError> {
        (self.f)(spec, x, dt, tape)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplicitMethod {
    ExplicitEuler,
    SymplecticEuler,
    Leapfrog,
    Rk4,
}

impl ExplicitMethod {
    pub fn order(self) -> u32 {
        match self {
            ExplicitMethod::ExplicitEuler | ExplicitMethod::SymplecticEuler => 1,
            ExplicitMethod::Leapfrog => 2,
            ExplicitMethod::Rk4 => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ExplicitMethod::ExplicitEuler => "explicit_euler",
            ExplicitMethod::SymplecticEuler => "symplectic_euler",
            ExplicitMethod::Leapfrog => "leapfrog",
            ExplicitMethod::Rk4 => "rk4",
        }
    }

    /// Exact number of tape records one step produces in `n` degrees of freedom.
    pub fn tape_len(self, n: usize) -> usize {
        match self {
            ExplicitMethod::ExplicitEuler | ExplicitMethod::SymplecticEuler => 2 * n,
            ExplicitMethod::Leapfrog => 3 * n,
            ExplicitMethod::Rk4 => 8 * n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Explicit(ExplicitMethod),
    ImplicitMidpoint,
    StepAndProject(ExplicitMethod),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImplicitSolver {
    #[default]
    FixedPoint,
    Newton,
}

/// A shipped integrator together with its solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct IntegratorConfig {
    pub method: Method,
    pub solver_tol: f64,
    pub max_iters: usize,
    pub implicit_solver: ImplicitSolver,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MethodName {
    ExplicitEuler,
    SymplecticEuler,
    Leapfrog,
    Rk4,
    ImplicitMidpoint,
    StepAndProject,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_iters() -> usize {
    100
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    method: MethodName,
    #[serde(default = "default_tol")]
    solver_tol: f64,
    #[serde(default = "default_iters")]
    max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<ExplicitMethod>,
    #[serde(default)]
    implicit_solver: ImplicitSolver,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("solver_tol must be positive and finite")]
    SolverTol,
    #[error("max_iters must be at least 1")]
    MaxIters,
    #[error("step_and_project requires an explicit base method")]
    MissingBase,
    #[error("base is only allowed with step_and_project")]
    UnexpectedBase,
}

impl TryFrom<RawConfig> for IntegratorConfig {
    type Error = ConfigError;

    fn try_from(raw: RawConfig) -> Result<Self, Self::Error> {
        let method = match (raw.method, raw.base) {
            (MethodName::StepAndProject, Some(base)) => Method::StepAndProject(base),
            (MethodName::StepAndProject, None) => return Err(ConfigError::MissingBase),
            (_, Some(_)) => return Err(ConfigError::UnexpectedBase),
            (MethodName::ExplicitEuler, None) => Method::Explicit(ExplicitMethod::ExplicitEuler),
            (MethodName::SymplecticEuler, None) => {
                Method::Explicit(ExplicitMethod::SymplecticEuler)
            }
            (MethodName::Leapfrog, None) => Method::Explicit(ExplicitMethod::Leapfrog),
            (MethodName::Rk4, None) => Method::Explicit(ExplicitMethod::Rk4),
            (MethodName::ImplicitMidpoint, None) => Method::ImplicitMidpoint,
        };
        if !(raw.solver_tol.is_finite() && raw.solver_tol > 0.0) {
            return Err(ConfigError::SolverTol);
        }
        if raw.max_iters < 1 {
            return Err(ConfigError::MaxIters);
        }
        Ok(IntegratorConfig {
            method,
            solver_tol: raw.solver_tol,
            max_iters: raw.max_iters,
            implicit_solver: raw.implicit_solver,
        })
    }
}

impl From<IntegratorConfig> for RawConfig {
    fn from(c: IntegratorConfig) -> Self {
        let (method, base) = match c.method {
            Method::Explicit(ExplicitMethod::ExplicitEuler) => (MethodName::ExplicitEuler, None),
            Method::Explicit(ExplicitMethod::SymplecticEuler) => {
                (MethodName::SymplecticEuler, None)
            }
            Method::Explicit(ExplicitMethod::Leapfrog) => (MethodName::Leapfrog, None),
            Method::Explicit(ExplicitMethod::Rk4) => (MethodName::Rk4, None),
            Method::ImplicitMidpoint => (MethodName::ImplicitMidpoint, None),
            Method::StepAndProject(b) => (MethodName::StepAndProject, Some(b)),
        };
        RawConfig {
            method,
            solver_tol: c.solver_tol,
            max_iters: c.max_iters,
            base,
            implicit_solver: c.implicit_solver,
        }
    }
}

impl IntegratorConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            solver_tol: default_tol(),
            max_iters: default_iters(),
            implicit_solver: ImplicitSolver::FixedPoint,
        }
    }

    pub fn explicit(m: ExplicitMethod) -> Self {
        Self::new(Method::Explicit(m))
    }

    pub fn implicit_midpoint() -> Self {
        Self::new(Method::ImplicitMidpoint)
    }

    pub fn step_and_project(base: ExplicitMethod) -> Self {
        Self::new(Method::StepAndProject(base))
    }

    /// Sets the iteration budget without validation; `0` forces implicit
    /// steps to fail, which is occasionally what a test wants.
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_solver_tol(mut self, tol: f64) -> Self {
        self.solver_tol = tol;
        self
    }

    pub fn with_newton(mut self) -> Self {
        self.implicit_solver = ImplicitSolver::Newton;
        self
    }

    /// The six methods shipped by default: four explicit ones, the implicit
    /// midpoint rule, and step-and-project over leapfrog.
    pub fn shipped() -> Vec<IntegratorConfig> {
        vec![
            Self::explicit(ExplicitMethod::ExplicitEuler),
            Self::explicit(ExplicitMethod::SymplecticEuler),
            Self::explicit(ExplicitMethod::Leapfrog),
            Self::explicit(ExplicitMethod::Rk4),
            Self::implicit_midpoint(),
            Self::step_and_project(ExplicitMethod::Leapfrog),
        ]
    }

    /// Upper bound on tape length for one step in `n` degrees of freedom.
    pub fn max_tape_len(&self, n: usize) -> usize {
        let m = 2 * n;
        match self.method {
            Method::Explicit(e) => e.tape_len(n),
            Method::ImplicitMidpoint => match self.implicit_solver {
                ImplicitSolver::FixedPoint => (self.max_iters + 1) * m,
                ImplicitSolver::Newton => {
                    (self.max_iters + 1) * m + self.max_iters * m * (m + 1) / 2
                }
            },
            // H(x), base step, H(y), ∇H(y), bracketing H values, then per
            // Newton iteration ∇H and H.
            Method::StepAndProject(base) => {
                1 + base.tape_len(n) + 1 + m + self.max_iters + self.max_iters * (m + 1)
            }
        }
    }
}

impl Integrator for IntegratorConfig {
    fn step(
        &self,
        spec: &HamiltonianSpec,
        x: &PhasePoint,
        dt: f64,
        tape: &mut QueryTape,
    ) -> Result<StepResult, StepError> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(StepError::InvalidStep(dt));
        }
        if x.dof() != spec.dof() {
            return Err(PhaseError::DimensionMismatch {
                expected: spec.dof(),
                found: x.dof(),
            }
            .into());
        }
        let mut oracle = Oracle::new(spec, tape);
        match self.method {
            Method::Explicit(m) => Ok(explicit_step(m, &mut oracle, x, dt)?),
            Method::ImplicitMidpoint => implicit_midpoint(self, &mut oracle, x, dt),
            Method::StepAndProject(base) => {
                let target = oracle.energy(x)?;
                match explicit_step(base, &mut oracle, x, dt)? {
                    StepResult::Defined(y) => project(self, &mut oracle, &y, target),
                    undefined => Ok(undefined),
                }
            }
        }
    }

    fn name(&self) -> String {
        match self.method {
            Method::Explicit(m) => m.label().to_string(),
            Method::ImplicitMidpoint => match self.implicit_solver {
                ImplicitSolver::FixedPoint => "implicit_midpoint".into(),
                ImplicitSolver::Newton => "implicit_midpoint_newton".into(),
            },
            Method::StepAndProject(b) => format!("step_and_project({})", b.label()),
        }
    }

    fn nominal_order(&self) -> Option<u32> {
        Some(match self.method {
            Method::Explicit(m) | Method::StepAndProject(m) => m.order(),
            Method::ImplicitMidpoint => 2,
        })
    }
}

fn add_scaled(x: &[f64], s: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + s * b).collect()
}

fn with_q(q: Vec<f64>, p: &[f64]) -> PhasePoint {
    PhasePoint { q, p: p.to_vec() }
}

fn with_p(q: &[f64], p: Vec<f64>) -> PhasePoint {
    PhasePoint { q: q.to_vec(), p }
}

fn defined(v: Vec<f64>) -> StepResult {
    let y = PhasePoint::from_slice(&v);
    if y.is_finite() {
        StepResult::Defined(y)
    } else {
        StepResult::Undefined(UndefinedReason::SolverDiverged)
    }
}

fn explicit_step(
    method: ExplicitMethod,
    h: &mut Oracle<'_>,
    x: &PhasePoint,
    dt: f64,
) -> Result<StepResult, PhaseError> {
    Ok(match method {
        ExplicitMethod::ExplicitEuler => {
            let f = h.field(x)?;
            defined(add_scaled(&x.to_vec(), dt, &f))
        }
        ExplicitMethod::SymplecticEuler => {
            let gq = h.grad_q(x)?;
            let p1 = add_scaled(&x.p, -dt, &gq);
            let gp = h.grad_p(&with_p(&x.q, p1.clone()))?;
            let q1 = add_scaled(&x.q, dt, &gp);
            defined([q1, p1].concat())
        }
        ExplicitMethod::Leapfrog => {
            let half = 0.5 * dt;
            let gq = h.grad_q(x)?;
            let ph = add_scaled(&x.p, -half, &gq);
            let gp = h.grad_p(&with_p(&x.q, ph.clone()))?;
            let q1 = add_scaled(&x.q, dt, &gp);
            let gq1 = h.grad_q(&with_q(q1.clone(), &ph))?;
            let p1 = add_scaled(&ph, -half, &gq1);
            defined([q1, p1].concat())
        }
        ExplicitMethod::Rk4 => {
            let x0 = x.to_vec();
            let half = 0.5 * dt;
            let k1 = h.field(x)?;
            let k2 = h.field(&PhasePoint::from_slice(&add_scaled(&x0, half, &k1)))?;
            let k3 = h.field(&PhasePoint::from_slice(&add_scaled(&x0, half, &k2)))?;
            let k4 = h.field(&PhasePoint::from_slice(&add_scaled(&x0, dt, &k3)))?;
            let slope: Vec<f64> = (0..x0.len())
                .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                .collect();
            defined(add_scaled(&x0, dt, &slope))
        }
    })
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

fn implicit_midpoint(
    config: &IntegratorConfig,
    h: &mut Oracle<'_>,
    x: &PhasePoint,
    dt: f64,
) -> Result<StepResult, StepError> {
    let x0 = x.to_vec();
    let m = x0.len();
    let n = m / 2;
    let mut y = x0.clone();
    for it in 0..=config.max_iters {
        let mid: Vec<f64> = x0.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid_point = PhasePoint::from_slice(&mid);
        let f = h.field(&mid_point)?;
        let image = add_scaled(&x0, dt, &f);
        // residual of the current iterate: y − (x + Δt·J∇H((x+y)/2))
        let residual: Vec<f64> = y.iter().zip(&image).map(|(a, b)| a - b).collect();
        let r = max_norm(&residual);
        if !r.is_finite() {
            return Ok(StepResult::Undefined(UndefinedReason::SolverDiverged));
        }
        if r <= config.solver_tol {
            return Ok(defined(y));
        }
        if it == config.max_iters {
            break;
        }
        y = match config.implicit_solver {
            ImplicitSolver::FixedPoint => image,
            ImplicitSolver::Newton => {
                let hess = h.hessian(&mid_point)?;
                // D(residual) = I − (Δt/2)·J·∇²H
                let mut jac = vec![vec![0.0; m]; m];
                for (i, row) in jac.iter_mut().enumerate() {
                    for (k, entry) in row.iter_mut().enumerate() {
                        let jh = if i < n { hess[n + i][k] } else { -hess[i - n][k] };
                        *entry = if i == k { 1.0 } else { 0.0 } - 0.5 * dt * jh;
                    }
                }
                let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
                match linalg::solve(&jac, &rhs) {
                    Some(delta) => y.iter().zip(&delta).map(|(a, d)| a + d).collect(),
                    None => return Ok(StepResult::Undefined(UndefinedReason::SolverDiverged)),
                }
            }
        };
    }
    Ok(StepResult::Undefined(UndefinedReason::MaxIterations))
}

fn project(
    config: &IntegratorConfig,
    h: &mut Oracle<'_>,
    y: &PhasePoint,
    target: f64,
) -> Result<StepResult, StepError> {
    let phi0 = h.energy(y)? - target;
    if !phi0.is_finite() {
        return Ok(StepResult::Undefined(UndefinedReason::SolverDiverged));
    }
    if phi0.abs() <= config.solver_tol {
        return Ok(StepResult::Defined(y.clone()));
    }
    let y0 = y.to_vec();
    let g = h.gradient(y)?;
    let norm_sq: f64 = g.iter().map(|v| v * v).sum();
    if !(norm_sq.sqrt() >= GRADIENT_FLOOR) {
        return Ok(StepResult::Undefined(UndefinedReason::GradientVanishes));
    }
    let at = |mu: f64| PhasePoint::from_slice(&add_scaled(&y0, mu, &g));

    // Walk away from μ = 0 in doubling steps until φ changes sign, so the
    // root found is the one nearest the unprojected point.
    let dir = if phi0 > 0.0 { -1.0 } else { 1.0 };
    let mut step = phi0.abs() / norm_sq;
    let (mut a, mut fa) = (0.0, phi0);
    let mut bracket = None;
    for _ in 0..config.max_iters {
        let b = dir * step;
        let z = at(b);
        let fb = h.energy(&z)? - target;
        if !fb.is_finite() || !z.is_finite() {
            return Ok(StepResult::Undefined(UndefinedReason::SolverDiverged));
        }
        if fb.abs() <= config.solver_tol {
            return Ok(StepResult::Defined(z));
        }
        if fb.signum() != fa.signum() {
            bracket = Some((b, fb));
            break;
        }
        a = b;
        fa = fb;
        step *= 2.0;
    }
    let Some((mut b, fb)) = bracket else {
        return Ok(StepResult::Undefined(UndefinedReason::ProjectionFailed));
    };

    // Newton inside [a, b], falling back to bisection when it leaves the bracket.
    let (mut mu, mut phi) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for _ in 0..config.max_iters {
        let slope: f64 = h.gradient(&at(mu))?.iter().zip(&g).map(|(u, v)| u * v).sum();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut next = mu - phi / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (a + b);
        }
        let z = at(next);
        let f = h.energy(&z)? - target;
        if !f.is_finite() {
            return Ok(StepResult::Undefined(UndefinedReason::SolverDiverged));
        }
        if f.abs() <= config.solver_tol {
            return Ok(StepResult::Defined(z));
        }
        if f.signum() == fa.signum() {
            a = next;
            fa = f;
        } else {
            b = next;
        }
        mu = next;
        phi = f;
    }
    Ok(StepResult::Undefined(UndefinedReason::ProjectionFailed))
}

/// Single explicit step; errors if `config` is not an explicit method.
pub fn explicit_step_with(
    config: &IntegratorConfig,
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    dt: f64,
    tape: &mut QueryTape,
) -> Result<StepResult, StepError> {
    match config.method {
        Method::Explicit(_) => config.step(spec, x, dt, tape),
        _ => Err(PhaseError::InvalidSpec("explicit_step requires an explicit method".into()).into()),
    }
}

/// Moves `y` along `∇H(y)` onto the level set `H = target_e`.
pub fn project_to_energy(
    spec: &HamiltonianSpec,
    y: &PhasePoint,
    target_e: f64,
    config: &IntegratorConfig,
    tape: &mut QueryTape,
) -> Result<StepResult, StepError> {
    if y.dof() != spec.dof() {
        return Err(PhaseError::DimensionMismatch {
            expected: spec.dof(),
            found: y.dof(),
        }
        .into());
    }
    let mut oracle = Oracle::new(spec, tape);
    project(config, &mut oracle, y, target_e)
}

/// Repeats `step` up to `n_steps` times, stopping after the first undefined step.
pub fn iterate(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    x0: &PhasePoint,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<StepResult>, StepError> {
    let mut out = Vec::with_capacity(n_steps);
    let mut x = x0.clone();
    for _ in 0..n_steps {
        let mut tape = QueryTape::new();
        let r = integrator.step(spec, &x, dt, &mut tape)?;
        match &r {
            StepResult::Defined(y) => x = y.clone(),
            StepResult::Undefined(_) => {
                out.push(r);
                break;
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Runs a single step with a fresh tape and returns both.
pub fn run_traced(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    dt: f64,
) -> Result<(StepResult, QueryTape), StepError> {
    let mut tape = QueryTape::new();
    let r = integrator.step(spec, x, dt, &mut tape)?;
    Ok((r, tape))
}

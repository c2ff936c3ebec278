//! Reference flow maps used as ground truth.
//!
//! Free and harmonic flows are closed form. The bump Hamiltonian
//! `H = p²/2 + V(q)` is solved in the monotone regime by inverting the
//! time-of-flight integral `t = ∫ dx/√(2(E − V(x)))`. Stretches where `V`
//! vanishes identically are handled analytically, so a trajectory that never
//! reaches the support of `V` reproduces the free flow bit for bit.

mod quadrature;

pub use quadrature::{integrate, QuadratureFailure};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bump::{Bump, BumpPotential};
use crate::hamiltonian::{HamiltonianSpec, PhaseError};
use crate::point::PhasePoint;

pub const DEFAULT_QUAD_TOL: f64 = 1e-12;

/// Minimum admissible gap `E − sup V` keeping trajectories clear of turning points.
pub const DEFAULT_MARGIN: f64 = 1e-3;

const MAX_ROOT_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("energy {energy} is within {margin} of the potential barrier {barrier}; trajectory may turn")]
    TurningPoint {
        energy: f64,
        barrier: f64,
        margin: f64,
    },
    #[error("root bracketing failed while inverting the time of flight at t = {0}")]
    RootBracketFailure(f64),
    #[error("quadrature did not converge on [{}, {}] (error {})", .0.a, .0.b, .0.error)]
    Quadrature(QuadratureFailure),
    #[error("invalid flow query: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

impl From<QuadratureFailure> for FlowError {
    fn from(q: QuadratureFailure) -> Self {
        FlowError::Quadrature(q)
    }
}

/// A request for the exact time-`t` flow of `spec` from `x0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowQuery {
    pub spec: HamiltonianSpec,
    pub x0: PhasePoint,
    pub t: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_quad_tol() -> f64 {
    DEFAULT_QUAD_TOL
}

impl FlowQuery {
    pub fn new(spec: HamiltonianSpec, x0: PhasePoint, t: f64) -> Self {
        Self {
            spec,
            x0,
            t,
            quad_tol: DEFAULT_QUAD_TOL,
        }
    }

    pub fn run(&self) -> Result<PhasePoint, FlowError> {
        exact_flow(&self.spec, &self.x0, self.t, self.quad_tol)
    }
}

fn planar_check(x: &PhasePoint) -> Result<(), FlowError> {
    if x.dof() != 1 {
        return Err(PhaseError::DimensionMismatch {
            expected: 1,
            found: x.dof(),
        }
        .into());
    }
    Ok(())
}

/// `S^t(q, p) = (q + p·t, p)` for `H = p²/2`.
pub fn free_flow(x: &PhasePoint, t: f64) -> PhasePoint {
    PhasePoint::planar(x.q[0] + x.p[0] * t, x.p[0])
}

/// Rotation flow of `H = (p² + ω²q²)/2`.
pub fn harmonic_flow(x: &PhasePoint, t: f64, omega: f64) -> PhasePoint {
    let (s, c) = (omega * t).sin_cos();
    let (q, p) = (x.q[0], x.p[0]);
    PhasePoint::planar(q * c + p / omega * s, p * c - omega * q * s)
}

fn check_margin(v: &BumpPotential, a: f64, b: f64, energy: f64) -> Result<(), FlowError> {
    let barrier = v.sup_bound_on(a, b);
    if !(energy - barrier >= DEFAULT_MARGIN) {
        return Err(FlowError::TurningPoint {
            energy,
            barrier,
            margin: DEFAULT_MARGIN,
        });
    }
    Ok(())
}

/// Pieces of `[a, b]`, each flagged with whether it lies inside the support of `V`.
fn pieces(v: &BumpPotential, a: f64, b: f64) -> Vec<(f64, f64, bool)> {
    let mut out = Vec::new();
    let mut pos = a;
    for (lo, hi) in v.support_intervals() {
        if hi <= pos {
            continue;
        }
        if lo >= b {
            break;
        }
        if lo > pos {
            out.push((pos, lo, false));
            pos = lo;
        }
        let end = hi.min(b);
        out.push((pos, end, true));
        pos = end;
        if pos >= b {
            break;
        }
    }
    if pos < b {
        out.push((pos, b, false));
    }
    out
}

fn slowness(v: &BumpPotential, energy: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| 1.0 / (2.0 * (energy - v.value(x))).sqrt()
}

/// Time needed to travel from `q0` to `q1 ≥ q0` at energy `E`.
pub fn time_of_flight(
    v: &BumpPotential,
    q0: f64,
    q1: f64,
    energy: f64,
    quad_tol: f64,
) -> Result<f64, FlowError> {
    if !(q0.is_finite() && q1.is_finite() && q1 >= q0) {
        return Err(FlowError::InvalidInput(format!("need finite q0 ≤ q1, got [{q0}, {q1}]")));
    }
    if !(quad_tol > 0.0) {
        return Err(FlowError::InvalidInput("quad_tol must be positive".into()));
    }
    check_margin(v, q0, q1, energy)?;
    let speed = (2.0 * energy).sqrt();
    let g = slowness(v, energy);
    let parts = pieces(v, q0, q1);
    let total = q1 - q0;
    let mut t = 0.0;
    for (a, b, inside) in parts {
        t += if inside {
            integrate(&g, a, b, quad_tol * (b - a) / total)?
        } else {
            (b - a) / speed
        };
    }
    Ok(t)
}

/// Solves `∫ₐ^q slowness = tau` for `q ∈ [a, b]`.
fn invert_segment(
    g: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tau: f64,
    quad_tol: f64,
) -> Result<f64, FlowError> {
    let (mut lo, mut hi) = (a, b);
    let mut q = (a + tau / g(a)).clamp(a, b);
    for _ in 0..MAX_ROOT_ITERS {
        let residual = integrate(g, a, q, 0.1 * quad_tol)? - tau;
        if residual.abs() <= 0.1 * quad_tol {
            return Ok(q);
        }
        if residual < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let newton = q - residual / g(q);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == q || hi - lo <= 4.0 * f64::EPSILON * q.abs().max(1.0) {
            return Ok(next);
        }
        q = next;
    }
    Err(FlowError::RootBracketFailure(tau))
}

fn reflect(v: &BumpPotential) -> Result<BumpPotential, PhaseError> {
    BumpPotential::new(
        v.bumps()
            .iter()
            .map(|b| Bump {
                center: -b.center,
                ..*b
            })
            .collect(),
    )
}

/// Exact flow of `p²/2 + V(q)` from `x0` for time `t ≥ 0` without turning points.
pub fn bump_flow(
    v: &BumpPotential,
    x0: &PhasePoint,
    t: f64,
    quad_tol: f64,
) -> Result<PhasePoint, FlowError> {
    planar_check(x0)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(FlowError::InvalidInput(format!("time must be non-negative, got {t}")));
    }
    let (q0, p0) = (x0.q[0], x0.p[0]);
    if p0 < 0.0 {
        let mirrored = bump_flow(&reflect(v)?, &PhasePoint::planar(-q0, -p0), t, quad_tol)?;
        return Ok(PhasePoint::planar(-mirrored.q[0], -mirrored.p[0]));
    }
    let energy = 0.5 * p0 * p0 + v.value(q0);
    check_margin(v, f64::NEG_INFINITY, f64::INFINITY, energy)?;
    if t == 0.0 {
        return Ok(x0.clone());
    }
    let speed = (2.0 * energy).sqrt();
    let g = slowness(v, energy);
    let mut pos = q0;
    let mut remaining = t;
    let mut landed = None;
    for (lo, hi) in v.support_intervals() {
        if hi <= pos {
            continue;
        }
        if lo > pos {
            let gap = (lo - pos) / speed;
            if remaining <= gap {
                break;
            }
            remaining -= gap;
            pos = lo;
        }
        let crossing = integrate(&g, pos, hi, quad_tol)?;
        if remaining <= crossing {
            landed = Some(invert_segment(&g, pos, hi, remaining, quad_tol)?);
            break;
        }
        remaining -= crossing;
        pos = hi;
    }
    let q = landed.unwrap_or(pos + remaining * speed);
    let p = if v.value(q) == 0.0 {
        speed
    } else {
        (2.0 * (energy - v.value(q))).sqrt()
    };
    Ok(PhasePoint::planar(q, p))
}

/// Exact flow for any specification with a known solution.
pub fn exact_flow(
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    t: f64,
    quad_tol: f64,
) -> Result<PhasePoint, FlowError> {
    if x.dof() != spec.dof() {
        return Err(PhaseError::DimensionMismatch {
            expected: spec.dof(),
            found: x.dof(),
        }
        .into());
    }
    match spec {
        HamiltonianSpec::FreeParticle => Ok(free_flow(x, t)),
        HamiltonianSpec::Harmonic { omega } => Ok(harmonic_flow(x, t, *omega)),
        HamiltonianSpec::SeparableBump(v) => bump_flow(v, x, t, quad_tol),
        HamiltonianSpec::LiftSingle { inner, .. } => {
            let head = exact_flow(inner, &x.pair(0), t, quad_tol)?;
            let mut y = x.clone();
            y.q[0] = head.q[0];
            y.p[0] = head.p[0];
            Ok(y)
        }
        HamiltonianSpec::LiftProduct { inner, n } => {
            let mut y = x.clone();
            for i in 0..*n {
                let yi = exact_flow(inner, &x.pair(i), t, quad_tol)?;
                y.q[i] = yi.q[0];
                y.p[i] = yi.p[0];
            }
            Ok(y)
        }
    }
}

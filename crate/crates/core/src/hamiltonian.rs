//! Hamiltonian specifications with exact derivatives up to order two.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bump::{Bump, BumpPotential};
use crate::point::{MultiIndex, PhasePoint};
use crate::tape::{QueryRecord, QueryTape};

/// Highest derivative order any specification evaluates.
pub const MAX_ORDER: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("derivative order {0} exceeds the supported maximum of 2")]
    UnsupportedOrder(u32),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite phase-space coordinate")]
    NonFinite,
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("invalid hamiltonian: {0}")]
    InvalidSpec(String),
}

/// A declarative Hamiltonian.
///
/// Planar variants have one degree of freedom; the lifts embed a planar
/// specification in `2n` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub enum HamiltonianSpec {
    /// `H = p²/2`
    FreeParticle,
    /// `H = (p² + ω²q²)/2`
    Harmonic { omega: f64 },
    /// `H = p²/2 + V(q)`
    SeparableBump(BumpPotential),
    /// `H*(q, p) = H(q₁, p₁)`
    LiftSingle { inner: Box<HamiltonianSpec>, n: usize },
    /// `H*(q, p) = Σᵢ H(qᵢ, pᵢ)`
    LiftProduct { inner: Box<HamiltonianSpec>, n: usize },
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum RawSpec {
    FreeParticle {},
    Harmonic { omega: f64 },
    SeparableBump { bumps: Vec<Bump> },
    LiftSingle { inner: Box<HamiltonianSpec>, n: usize },
    LiftProduct { inner: Box<HamiltonianSpec>, n: usize },
}

impl TryFrom<RawSpec> for HamiltonianSpec {
    type Error = PhaseError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let spec = match raw {
            RawSpec::FreeParticle {} => HamiltonianSpec::FreeParticle,
            RawSpec::Harmonic { omega } => HamiltonianSpec::harmonic(omega)?,
            RawSpec::SeparableBump { bumps } => {
                HamiltonianSpec::SeparableBump(BumpPotential::new(bumps)?)
            }
            RawSpec::LiftSingle { inner, n } => HamiltonianSpec::lift_single(*inner, n)?,
            RawSpec::LiftProduct { inner, n } => HamiltonianSpec::lift_product(*inner, n)?,
        };
        Ok(spec)
    }
}

impl From<HamiltonianSpec> for RawSpec {
    fn from(spec: HamiltonianSpec) -> Self {
        match spec {
            HamiltonianSpec::FreeParticle => RawSpec::FreeParticle {},
            HamiltonianSpec::Harmonic { omega } => RawSpec::Harmonic { omega },
            HamiltonianSpec::SeparableBump(v) => RawSpec::SeparableBump {
                bumps: v.bumps().to_vec(),
            },
            HamiltonianSpec::LiftSingle { inner, n } => RawSpec::LiftSingle { inner, n },
            HamiltonianSpec::LiftProduct { inner, n } => RawSpec::LiftProduct { inner, n },
        }
    }
}

impl HamiltonianSpec {
    pub fn harmonic(omega: f64) -> Result<Self, PhaseError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(PhaseError::InvalidSpec("omega must be positive".into()));
        }
        Ok(Self::Harmonic { omega })
    }

    pub fn bump(potential: BumpPotential) -> Self {
        Self::SeparableBump(potential)
    }

    pub fn lift_single(inner: HamiltonianSpec, n: usize) -> Result<Self, PhaseError> {
        Self::check_lift(&inner, n)?;
        Ok(Self::LiftSingle {
            inner: Box::new(inner),
            n,
        })
    }

    pub fn lift_product(inner: HamiltonianSpec, n: usize) -> Result<Self, PhaseError> {
        Self::check_lift(&inner, n)?;
        Ok(Self::LiftProduct {
            inner: Box::new(inner),
            n,
        })
    }

    fn check_lift(inner: &HamiltonianSpec, n: usize) -> Result<(), PhaseError> {
        if n < 2 {
            return Err(PhaseError::InvalidSpec("lift dimension n must be ≥ 2".into()));
        }
        if !inner.is_planar() {
            return Err(PhaseError::InvalidSpec("lifted spec must be planar".into()));
        }
        Ok(())
    }

    /// Number of degrees of freedom.
    pub fn dof(&self) -> usize {
        match self {
            Self::LiftSingle { n, .. } | Self::LiftProduct { n, .. } => *n,
            _ => 1,
        }
    }

    pub fn is_planar(&self) -> bool {
        self.dof() == 1
    }

    /// The planar specification underneath a lift, or `self`.
    pub fn planar_inner(&self) -> &HamiltonianSpec {
        match self {
            Self::LiftSingle { inner, .. } | Self::LiftProduct { inner, .. } => inner,
            other => other,
        }
    }

    /// Exact `∂_α H(x)`.
    pub fn derivative(&self, alpha: &MultiIndex, x: &PhasePoint) -> Result<f64, PhaseError> {
        let n = self.dof();
        if x.dof() != n {
            return Err(PhaseError::DimensionMismatch {
                expected: n,
                found: x.dof(),
            });
        }
        if alpha.len() != 2 * n {
            return Err(PhaseError::DimensionMismatch {
                expected: 2 * n,
                found: alpha.len(),
            });
        }
        let order = alpha.order();
        if order > MAX_ORDER {
            return Err(PhaseError::UnsupportedOrder(order));
        }
        Ok(match self {
            Self::LiftSingle { inner, n } => {
                let touches_rest = (1..*n).any(|i| alpha.0[i] != 0 || alpha.0[n + i] != 0);
                if touches_rest {
                    0.0
                } else {
                    inner.planar_derivative(alpha.0[0], alpha.0[*n], x.q[0], x.p[0])
                }
            }
            Self::LiftProduct { inner, n } => {
                let touched: Vec<usize> = (0..*n)
                    .filter(|&i| alpha.0[i] != 0 || alpha.0[n + i] != 0)
                    .collect();
                match touched.as_slice() {
                    [] => {
                        let mut sum = 0.0;
                        for i in 0..*n {
                            sum += inner.planar_derivative(0, 0, x.q[i], x.p[i]);
                        }
                        sum
                    }
                    [i] => inner.planar_derivative(alpha.0[*i], alpha.0[n + i], x.q[*i], x.p[*i]),
                    _ => 0.0,
                }
            }
            planar => planar.planar_derivative(alpha.0[0], alpha.0[1], x.q[0], x.p[0]),
        })
    }

    /// `∂q^a ∂p^b H(q, p)` for planar variants; orders already validated.
    fn planar_derivative(&self, a: u32, b: u32, q: f64, p: f64) -> f64 {
        let kinetic = match b {
            0 => 0.5 * p * p,
            1 => p,
            2 => 1.0,
            _ => 0.0,
        };
        match self {
            Self::FreeParticle => {
                if a == 0 {
                    kinetic
                } else {
                    0.0
                }
            }
            Self::Harmonic { omega } => {
                let w2 = omega * omega;
                match (a, b) {
                    (0, 0) => 0.5 * (p * p + w2 * q * q),
                    (0, _) => kinetic,
                    (1, 0) => w2 * q,
                    (2, 0) => w2,
                    _ => 0.0,
                }
            }
            Self::SeparableBump(v) => match (a, b) {
                (0, 0) => kinetic + v.value(q),
                (0, _) => kinetic,
                (k, 0) => v.jet(q)[k as usize],
                _ => 0.0,
            },
            Self::LiftSingle { .. } | Self::LiftProduct { .. } => {
                unreachable!("lifts are never planar")
            }
        }
    }

    /// `H(x)`.
    pub fn energy(&self, x: &PhasePoint) -> Result<f64, PhaseError> {
        self.derivative(&MultiIndex::value(self.dof()), x)
    }

    /// `∇H(x)` in flattened order, untaped.
    pub fn gradient(&self, x: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        let n = self.dof();
        (0..2 * n)
            .map(|k| {
                let alpha = if k < n {
                    MultiIndex::dq(n, k)
                } else {
                    MultiIndex::dp(n, k - n)
                };
                self.derivative(&alpha, x)
            })
            .collect()
    }
}

/// Exact `∂_α H(x)`, appending a [`QueryRecord`] when a tape is supplied.
pub fn eval_derivative(
    spec: &HamiltonianSpec,
    alpha: &MultiIndex,
    x: &PhasePoint,
    tape: Option<&mut QueryTape>,
) -> Result<f64, PhaseError> {
    let value = spec.derivative(alpha, x)?;
    if let Some(tape) = tape {
        tape.push(QueryRecord {
            point: x.clone(),
            alpha: alpha.clone(),
            value,
        });
    }
    Ok(value)
}

/// True iff both specifications return bit-identical values at every taped query.
pub fn agrees_on_tape(
    spec_a: &HamiltonianSpec,
    spec_b: &HamiltonianSpec,
    tape: &QueryTape,
) -> Result<bool, PhaseError> {
    for record in tape {
        let a = spec_a.derivative(&record.alpha, &record.point)?;
        let b = spec_b.derivative(&record.alpha, &record.point)?;
        if a.to_bits() != b.to_bits() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The only door through which an integrator sees `H`: every query is taped.
pub struct Oracle<'a> {
    spec: &'a HamiltonianSpec,
    tape: &'a mut QueryTape,
}

impl<'a> Oracle<'a> {
    pub fn new(spec: &'a HamiltonianSpec, tape: &'a mut QueryTape) -> Self {
        Self { spec, tape }
    }

    pub fn dof(&self) -> usize {
        self.spec.dof()
    }

    pub fn query(&mut self, alpha: MultiIndex, x: &PhasePoint) -> Result<f64, PhaseError> {
        eval_derivative(self.spec, &alpha, x, Some(self.tape))
    }

    pub fn energy(&mut self, x: &PhasePoint) -> Result<f64, PhaseError> {
        self.query(MultiIndex::value(self.dof()), x)
    }

    /// `∂H/∂qᵢ` for all `i`.
    pub fn grad_q(&mut self, x: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        let n = self.dof();
        (0..n).map(|i| self.query(MultiIndex::dq(n, i), x)).collect()
    }

    /// `∂H/∂pᵢ` for all `i`.
    pub fn grad_p(&mut self, x: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        let n = self.dof();
        (0..n).map(|i| self.query(MultiIndex::dp(n, i), x)).collect()
    }

    /// Full gradient in flattened order: `∂q` block then `∂p` block.
    pub fn gradient(&mut self, x: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        let mut g = self.grad_q(x)?;
        g.extend(self.grad_p(x)?);
        Ok(g)
    }

    /// Hamiltonian vector field `J∇H = (∂H/∂p, −∂H/∂q)` in flattened order.
    pub fn field(&mut self, x: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        let gq = self.grad_q(x)?;
        let gp = self.grad_p(x)?;
        let mut f = gp;
        f.extend(gq.into_iter().map(|v| -v));
        Ok(f)
    }

    /// Symmetric Hessian; only the upper triangle is queried.
    pub fn hessian(&mut self, x: &PhasePoint) -> Result<Vec<Vec<f64>>, PhaseError> {
        let n = self.dof();
        let m = 2 * n;
        let mut h = vec![vec![0.0; m]; m];
        for j in 0..m {
            for k in j..m {
                let v = self.query(MultiIndex::second(n, j, k), x)?;
                h[j][k] = v;
                h[k][j] = v;
            }
        }
        Ok(h)
    }
}

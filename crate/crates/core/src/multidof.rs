//! Embedding planar problems in `2n` dimensions and running `2n`-dimensional
//! integrators as planar ones.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{jacobian, DiagnosticError, PhaseMap};
use crate::hamiltonian::{HamiltonianSpec, PhaseError};
use crate::integrators::{Integrator, StepError, StepResult};
use crate::linalg;
use crate::point::PhasePoint;
use crate::tape::QueryTape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultiDofError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Diagnostic(#[from] DiagnosticError),
    #[error("step undefined at {0:?}")]
    MapUndefined(PhasePoint),
    #[error("{0}")]
    WrongLift(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftPattern {
    /// Only the first pair evolves.
    Single,
    /// Identical uncoupled copies.
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftKind {
    pub kind: LiftPattern,
    pub n: usize,
}

impl LiftKind {
    pub fn single(n: usize) -> Self {
        Self {
            kind: LiftPattern::Single,
            n,
        }
    }

    pub fn product(n: usize) -> Self {
        Self {
            kind: LiftPattern::Product,
            n,
        }
    }

    /// `(q, p)` placed in the first pair (Single) or copied into every pair (Product).
    pub fn embed(&self, x: &PhasePoint) -> PhasePoint {
        let (q, p) = (x.q[0], x.p[0]);
        match self.kind {
            LiftPattern::Single => {
                let mut qs = vec![0.0; self.n];
                let mut ps = vec![0.0; self.n];
                qs[0] = q;
                ps[0] = p;
                PhasePoint { q: qs, p: ps }
            }
            LiftPattern::Product => PhasePoint {
                q: vec![q; self.n],
                p: vec![p; self.n],
            },
        }
    }
}

impl fmt::Display for LiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LiftPattern::Single => write!(f, "single lift, n = {}", self.n),
            LiftPattern::Product => write!(f, "product lift, n = {}", self.n),
        }
    }
}

pub fn lift(spec: &HamiltonianSpec, kind: LiftKind) -> Result<HamiltonianSpec, PhaseError> {
    match kind.kind {
        LiftPattern::Single => HamiltonianSpec::lift_single(spec.clone(), kind.n),
        LiftPattern::Product => HamiltonianSpec::lift_product(spec.clone(), kind.n),
    }
}

/// A `2n`-dimensional integrator seen as a planar one: embed, step on the
/// lifted Hamiltonian, keep the first pair. The tape holds the lifted queries.
#[derive(Clone, Debug)]
pub struct ReducedIntegrator<I> {
    pub inner: I,
    pub kind: LiftKind,
}

impl<I: Integrator> ReducedIntegrator<I> {
    pub fn new(inner: I, kind: LiftKind) -> Self {
        Self { inner, kind }
    }
}

pub fn reduce_to_planar<I: Integrator>(inner: I, kind: LiftKind) -> ReducedIntegrator<I> {
    ReducedIntegrator::new(inner, kind)
}

impl<I: Integrator> Integrator for ReducedIntegrator<I> {
    fn step(
        &self,
        spec: &HamiltonianSpec,
        x: &PhasePoint,
        dt: f64,
        tape: &mut QueryTape,
    ) -> Result<StepResult, StepError> {
        if x.dof() != 1 {
            return Err(PhaseError::DimensionMismatch {
                expected: 1,
                found: x.dof(),
            }
            .into());
        }
        let lifted = lift(spec, self.kind)?;
        Ok(match self.inner.step(&lifted, &self.kind.embed(x), dt, tape)? {
            StepResult::Defined(y) => StepResult::Defined(y.pair(0)),
            undefined => undefined,
        })
    }

    fn queried_spec(&self, spec: &HamiltonianSpec) -> Result<HamiltonianSpec, PhaseError> {
        lift(&self.inner.queried_spec(spec)?, self.kind)
    }

    fn name(&self) -> String {
        format!("{} ({})", self.inner.name(), self.kind)
    }

    fn nominal_order(&self) -> Option<u32> {
        self.inner.nominal_order()
    }
}

fn defined_step(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    dt: f64,
) -> Result<PhasePoint, MultiDofError> {
    let mut tape = QueryTape::new();
    integrator
        .step(spec, x, dt, &mut tape)?
        .into_point()
        .ok_or_else(|| MultiDofError::MapUndefined(x.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UntouchedReport {
    /// `max |πᵢΦ(x) − (qᵢ, pᵢ)|` over samples and `i ≥ 2`.
    pub max_deviation: f64,
    pub samples: usize,
}

/// Measures how far a step on a single lift moves the pairs `H` does not depend on.
pub fn check_condition_untouched(
    integrator: &dyn Integrator,
    lifted: &HamiltonianSpec,
    samples: &[PhasePoint],
    dt: f64,
) -> Result<UntouchedReport, MultiDofError> {
    if !matches!(lifted, HamiltonianSpec::LiftSingle { .. }) {
        return Err(MultiDofError::WrongLift("expected a single lift".into()));
    }
    let mut max_deviation: f64 = 0.0;
    for x in samples {
        let y = defined_step(integrator, lifted, x, dt)?;
        for i in 1..x.dof() {
            max_deviation = max_deviation.max(y.pair(i).max_distance(&x.pair(i)));
        }
    }
    Ok(UntouchedReport {
        max_deviation,
        samples: samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    /// `max |πᵢΦ(H*, x) − φ(h, (qᵢ, pᵢ))|` over samples and pairs.
    pub max_cross_deviation: f64,
    pub samples: usize,
}

/// Compares each pair of a product-lift step with the same method run on that pair alone.
pub fn check_condition_product(
    integrator: &dyn Integrator,
    lifted: &HamiltonianSpec,
    samples: &[PhasePoint],
    dt: f64,
) -> Result<ProductReport, MultiDofError> {
    let HamiltonianSpec::LiftProduct { inner, .. } = lifted else {
        return Err(MultiDofError::WrongLift("expected a product lift".into()));
    };
    let mut max_cross_deviation: f64 = 0.0;
    for x in samples {
        let y = defined_step(integrator, lifted, x, dt)?;
        for i in 0..x.dof() {
            let alone = defined_step(integrator, inner, &x.pair(i), dt)?;
            max_cross_deviation = max_cross_deviation.max(y.pair(i).max_distance(&alone));
        }
    }
    Ok(ProductReport {
        max_cross_deviation,
        samples: samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockJacobianReport {
    /// Determinants of the diagonal `2×2` blocks in pair order.
    pub block_dets: Vec<f64>,
    /// Largest entry violating the expected sparsity pattern.
    pub off_block_norm: f64,
    pub pattern: LiftPattern,
    pub determinant: f64,
}

/// Jacobian of `map` at a `2n`-dimensional point, reordered to
/// `(q₁, p₁, …, qₙ, pₙ)` and checked against `pattern`.
pub fn jacobian_block_report(
    map: &dyn PhaseMap,
    x: &PhasePoint,
    h: f64,
    pattern: LiftPattern,
) -> Result<BlockJacobianReport, MultiDofError> {
    let report = jacobian(map, x, h)?;
    let n = x.dof();
    // Flattened index of reordered position k.
    let src = |k: usize| if k % 2 == 0 { k / 2 } else { n + k / 2 };
    let m = 2 * n;
    let j: Vec<Vec<f64>> = (0..m)
        .map(|r| (0..m).map(|c| report.matrix[src(r)][src(c)]).collect())
        .collect();
    let block_dets = (0..n)
        .map(|b| {
            let (r, c) = (2 * b, 2 * b);
            linalg::determinant(&vec![
                vec![j[r][c], j[r][c + 1]],
                vec![j[r + 1][c], j[r + 1][c + 1]],
            ])
        })
        .collect();
    let mut off: f64 = 0.0;
    for r in 0..m {
        for c in 0..m {
            let deviation = match pattern {
                LiftPattern::Product if r / 2 != c / 2 => j[r][c].abs(),
                LiftPattern::Single if r >= 2 => {
                    (j[r][c] - if r == c { 1.0 } else { 0.0 }).abs()
                }
                _ => 0.0,
            };
            off = off.max(deviation);
        }
    }
    Ok(BlockJacobianReport {
        block_dets,
        off_block_norm: off,
        pattern,
        determinant: report.determinant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{generate_certificate, ConstructionParams, SweepGrid};
    use crate::diagnostics::StepMap;
    use crate::integrators::{run_traced, ExplicitMethod, FnIntegrator, IntegratorConfig};
    use crate::point::MultiIndex;

    fn free() -> HamiltonianSpec {
        HamiltonianSpec::FreeParticle
    }

    fn harmonic() -> HamiltonianSpec {
        HamiltonianSpec::harmonic(1.0).unwrap()
    }

    fn sample(n: usize, seed: f64) -> PhasePoint {
        PhasePoint {
            q: (0..n).map(|i| seed + 0.3 * i as f64).collect(),
            p: (0..n).map(|i| 1.0 - 0.2 * i as f64 + 0.1 * seed).collect(),
        }
    }

    #[test]
    fn lift_examples() {
        let s = lift(&free(), LiftKind::single(2)).unwrap();
        let x = PhasePoint::new(vec![0.0, 0.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(s.derivative(&MultiIndex::dp(2, 0), &x).unwrap(), 1.0);
        assert_eq!(s.derivative(&MultiIndex::dp(2, 1), &x).unwrap(), 0.0);
        let p = lift(&free(), LiftKind::product(3)).unwrap();
        let x = PhasePoint::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(p.energy(&x).unwrap(), 1.5);
        assert!(lift(&p, LiftKind::single(2)).is_err());
    }

    #[test]
    fn untouched_condition() {
        let lifted = lift(&free(), LiftKind::single(3)).unwrap();
        let samples: Vec<_> = (0..5).map(|k| sample(3, k as f64)).collect();
        for cfg in IntegratorConfig::shipped() {
            let r = check_condition_untouched(&cfg, &lifted, &samples, 0.1).unwrap();
            assert_eq!(r.max_deviation, 0.0, "{}", cfg.name());
        }
        let coupled = FnIntegrator::new("coupled", |_h: &HamiltonianSpec, x: &PhasePoint, dt: f64, _t: &mut QueryTape| {
            let mut y = x.clone();
            y.q[0] += dt * x.p[0];
            y.q[1] += dt * x.q[0];
            Ok(StepResult::Defined(y))
        });
        let x = PhasePoint::new(vec![2.0, 0.5, 0.0], vec![1.0, 0.0, 0.0]).unwrap();
        let r = check_condition_untouched(&coupled, &lifted, &[x], 0.1).unwrap();
        assert!((r.max_deviation - 0.2).abs() < 1e-15);
    }

    #[test]
    fn product_condition() {
        let lifted = lift(&harmonic(), LiftKind::product(2)).unwrap();
        let samples: Vec<_> = (0..5).map(|k| sample(2, 0.2 * k as f64)).collect();
        let lf = IntegratorConfig::explicit(ExplicitMethod::Leapfrog);
        let r = check_condition_product(&lf, &lifted, &samples, 0.1).unwrap();
        assert!(r.max_cross_deviation <= 1e-14);

        let sp = IntegratorConfig::step_and_project(ExplicitMethod::Leapfrog);
        let r = check_condition_product(&sp, &lifted, &samples, 0.1).unwrap();
        assert!(r.max_cross_deviation > 0.0);

        let x = PhasePoint::new(vec![0.4, 0.4], vec![0.7, 0.7]).unwrap();
        let (y, _) = run_traced(&lf, &lifted, &x, 0.1).unwrap();
        let y = y.into_point().unwrap();
        assert_eq!(y.pair(0), y.pair(1));
    }

    #[test]
    fn reduction_is_transparent_on_single_lifts() {
        for cfg in IntegratorConfig::shipped() {
            let reduced = reduce_to_planar(cfg.clone(), LiftKind::single(2));
            for spec in [free(), harmonic()] {
                for x in [PhasePoint::planar(0.0, 1.0), PhasePoint::planar(1.0, 0.0), PhasePoint::planar(-0.3, 0.8)] {
                    let a = run_traced(&reduced, &spec, &x, 0.1).unwrap().0;
                    let b = run_traced(&cfg, &spec, &x, 0.1).unwrap().0;
                    assert!(a.bit_identical(&b), "{} {:?}", cfg.name(), x);
                }
            }
        }
    }

    #[test]
    fn product_reduction_matches_planar() {
        let rk4 = IntegratorConfig::explicit(ExplicitMethod::Rk4);
        let reduced = reduce_to_planar(rk4.clone(), LiftKind::product(3));
        let x = PhasePoint::planar(1.0, 0.0);
        let a = run_traced(&reduced, &harmonic(), &x, 0.1).unwrap().0.into_point().unwrap();
        let b = run_traced(&rk4, &harmonic(), &x, 0.1).unwrap().0.into_point().unwrap();
        assert!(a.max_distance(&b) <= 1e-14);
        let (_, tape) = run_traced(&reduced, &harmonic(), &x, 0.1).unwrap();
        assert!(tape.records().iter().all(|r| r.point.dof() == 3));
    }

    #[test]
    fn block_reports() {
        let lf = IntegratorConfig::explicit(ExplicitMethod::Leapfrog);
        let lifted = lift(&harmonic(), LiftKind::product(2)).unwrap();
        let map = StepMap::new(&lf, &lifted, 0.1);
        let r = jacobian_block_report(&map, &sample(2, 0.3), 1e-5, LiftPattern::Product).unwrap();
        for d in &r.block_dets {
            assert!((d - 1.0).abs() <= 1e-5);
        }
        assert!(r.off_block_norm <= 1e-7);

        let lifted = lift(&free(), LiftKind::single(2)).unwrap();
        let map = StepMap::new(&lf, &lifted, 0.1);
        let r = jacobian_block_report(&map, &sample(2, 0.3), 1e-5, LiftPattern::Single).unwrap();
        assert!((r.block_dets[0] - 1.0).abs() <= 1e-5);
        assert!(r.off_block_norm <= 1e-7);

        let skewed = |x: &PhasePoint| {
            Some(PhasePoint {
                q: vec![2.0 * x.q[0], 0.5 * x.q[1]],
                p: vec![x.p[0], x.p[1]],
            })
        };
        let r = jacobian_block_report(&skewed, &sample(2, 0.3), 1e-5, LiftPattern::Product).unwrap();
        assert!((r.block_dets[0] - 2.0).abs() < 1e-9);
        assert!((r.block_dets[1] - 0.5).abs() < 1e-9);
        assert!((r.determinant - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduced_integrators_yield_certificates() {
        let sp = IntegratorConfig::step_and_project(ExplicitMethod::Leapfrog);
        let params = ConstructionParams {
            sweep_grid: SweepGrid {
                q_points: 16,
                p_points: 4,
                ..SweepGrid::default()
            },
            ..ConstructionParams::new(0.1)
        };
        for kind in [LiftKind::single(2), LiftKind::product(3)] {
            let reduced = reduce_to_planar(sp.clone(), kind);
            let cert = generate_certificate(&reduced, &params).unwrap();
            assert!(cert.output_at_origin_match && cert.output_at_q0_match);
            assert!(cert.verdict.is_some());
            assert_eq!(cert.queried_hamiltonian.dof(), kind.n);
            cert.check_invariants().unwrap();
        }
    }
}

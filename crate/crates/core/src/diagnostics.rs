//! Numerical measurements of volume conservation, energy conservation,
//! consistency and level-set translation for arbitrary phase-space maps.
//!
//! Volume conservation can only be sampled: determinants are measured by
//! central differences at chosen points and areas on chosen polygons. Sweeps
//! run in parallel; results are collected in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact_flows::{exact_flow, FlowError, DEFAULT_QUAD_TOL};
use crate::hamiltonian::{HamiltonianSpec, PhaseError};
use crate::integrators::{Integrator, StepError};
use crate::linalg::{self, Matrix};
use crate::point::PhasePoint;
use crate::tape::QueryTape;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_CONTINUITY_DELTA: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticError {
    #[error("map undefined on the finite-difference stencil around {0:?}")]
    StencilUndefined(PhasePoint),
    #[error("map undefined at {0:?}")]
    MapUndefined(PhasePoint),
    #[error("polygon is degenerate (area {0})")]
    DegeneratePolygon(f64),
    #[error("invalid diagnostic input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

/// A possibly partial self-map of phase space.
pub trait PhaseMap: Sync {
    fn apply(&self, x: &PhasePoint) -> Option<PhasePoint>;
}

impl<F> PhaseMap for F
where
    F: Fn(&PhasePoint) -> Option<PhasePoint> + Sync,
{
    fn apply(&self, x: &PhasePoint) -> Option<PhasePoint> {
        self(x)
    }
}

/// `x ↦ Φ(H, x, Δt)` for a fixed integrator, Hamiltonian and step.
pub struct StepMap<'a> {
    pub integrator: &'a dyn Integrator,
    pub spec: &'a HamiltonianSpec,
    pub dt: f64,
}

impl<'a> StepMap<'a> {
    pub fn new(integrator: &'a dyn Integrator, spec: &'a HamiltonianSpec, dt: f64) -> Self {
        Self {
            integrator,
            spec,
            dt,
        }
    }
}

impl PhaseMap for StepMap<'_> {
    fn apply(&self, x: &PhasePoint) -> Option<PhasePoint> {
        let mut tape = QueryTape::new();
        self.integrator
            .step(self.spec, x, self.dt, &mut tape)
            .ok()
            .and_then(|r| r.into_point())
    }
}

/// The exact time-`t` flow of a specification.
pub struct FlowMap<'a> {
    pub spec: &'a HamiltonianSpec,
    pub t: f64,
    pub quad_tol: f64,
}

impl<'a> FlowMap<'a> {
    pub fn new(spec: &'a HamiltonianSpec, t: f64) -> Self {
        Self {
            spec,
            t,
            quad_tol: DEFAULT_QUAD_TOL,
        }
    }
}

impl PhaseMap for FlowMap<'_> {
    fn apply(&self, x: &PhasePoint) -> Option<PhasePoint> {
        exact_flow(self.spec, x, self.t, self.quad_tol).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    /// Central-difference Jacobian at step `fd_step`, flattened variable order.
    pub matrix: Matrix,
    pub determinant: f64,
    pub fd_step: f64,
    /// Max entrywise difference between the `h` and `h/2` Jacobians.
    pub error_estimate: f64,
    /// `|det(J_h) − det(J_{h/2})|`.
    pub det_error: f64,
}

fn fd_matrix(map: &dyn PhaseMap, x: &PhasePoint, h: f64) -> Result<Matrix, DiagnosticError> {
    let base = x.to_vec();
    let m = base.len();
    let mut jac = vec![vec![0.0; m]; m];
    for j in 0..m {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = map
            .apply(&PhasePoint::from_slice(&plus))
            .ok_or_else(|| DiagnosticError::StencilUndefined(x.clone()))?
            .to_vec();
        let fm = map
            .apply(&PhasePoint::from_slice(&minus))
            .ok_or_else(|| DiagnosticError::StencilUndefined(x.clone()))?
            .to_vec();
        if fp.len() != m || fm.len() != m {
            return Err(DiagnosticError::InvalidInput("map changes dimension".into()));
        }
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian of `map` at `x` with a Richardson-style error check.
pub fn jacobian(map: &dyn PhaseMap, x: &PhasePoint, h: f64) -> Result<JacobianReport, DiagnosticError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DiagnosticError::InvalidInput("fd step must be positive".into()));
    }
    let coarse = fd_matrix(map, x, h)?;
    let fine = fd_matrix(map, x, 0.5 * h)?;
    let error_estimate = coarse
        .iter()
        .flatten()
        .zip(fine.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let determinant = linalg::determinant(&coarse);
    let det_error = (determinant - linalg::determinant(&fine)).abs();
    Ok(JacobianReport {
        matrix: coarse,
        determinant,
        fd_step: h,
        error_estimate,
        det_error,
    })
}

fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

/// Area of the image of a refined planar polygon divided by its own area.
pub fn polygon_area_ratio(
    map: &dyn PhaseMap,
    polygon: &[PhasePoint],
    refinement: usize,
) -> Result<f64, DiagnosticError> {
    if refinement < 1 || polygon.len() < 3 {
        return Err(DiagnosticError::InvalidInput(
            "need at least three vertices and refinement ≥ 1".into(),
        ));
    }
    if polygon.iter().any(|v| v.dof() != 1) {
        return Err(DiagnosticError::InvalidInput("polygon must be planar".into()));
    }
    let source: Vec<(f64, f64)> = polygon.iter().map(|v| (v.q[0], v.p[0])).collect();
    let area = shoelace(&source);
    if area.abs() < 1e-15 {
        return Err(DiagnosticError::DegeneratePolygon(area));
    }
    let n = source.len();
    let mut refined = Vec::with_capacity(n * refinement);
    for i in 0..n {
        let (a, b) = (source[i], source[(i + 1) % n]);
        for k in 0..refinement {
            let s = k as f64 / refinement as f64;
            refined.push(PhasePoint::planar(a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1)));
        }
    }
    let image: Vec<(f64, f64)> = refined
        .par_iter()
        .map(|v| map.apply(v).map(|y| (y.q[0], y.p[0])).ok_or_else(|| DiagnosticError::StencilUndefined(v.clone())))
        .collect::<Result<_, _>>()?;
    Ok(shoelace(&image) / area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max_k |H(x_k) − H(x_0)|` over the completed steps.
    pub max_drift: f64,
    pub steps_completed: usize,
    /// Index (1-based) of the step that was undefined, if any.
    pub undefined_at: Option<usize>,
}

pub fn energy_drift(
    map: &dyn PhaseMap,
    spec: &HamiltonianSpec,
    x0: &PhasePoint,
    n_steps: usize,
) -> Result<DriftReport, DiagnosticError> {
    let e0 = spec.energy(x0)?;
    let mut x = x0.clone();
    let mut max_drift: f64 = 0.0;
    for k in 1..=n_steps {
        match map.apply(&x) {
            Some(y) => {
                let e = spec.energy(&y)?;
                max_drift = max_drift.max((e - e0).abs());
                x = y;
            }
            None => {
                return Ok(DriftReport {
                    max_drift,
                    steps_completed: k - 1,
                    undefined_at: Some(k),
                })
            }
        }
    }
    Ok(DriftReport {
        max_drift,
        steps_completed: n_steps,
        undefined_at: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub c_mean: f64,
    /// `max cᵢ − min cᵢ`.
    pub c_spread: f64,
    /// `max |p_out − 1|`.
    pub p_deviation: f64,
    pub c_values: Vec<f64>,
}

/// Measures `cᵢ = (q_out − qᵢ)/Δt` for the map applied at `(qᵢ, 1)`.
pub fn measure_translation_constant(
    map: &dyn PhaseMap,
    q_samples: &[f64],
    dt: f64,
) -> Result<TranslationReport, DiagnosticError> {
    if q_samples.is_empty() || !(dt > 0.0) {
        return Err(DiagnosticError::InvalidInput("need samples and Δt > 0".into()));
    }
    let mut c_values = Vec::with_capacity(q_samples.len());
    let mut p_deviation: f64 = 0.0;
    for &q in q_samples {
        let x = PhasePoint::planar(q, 1.0);
        let y = map.apply(&x).ok_or(DiagnosticError::MapUndefined(x))?;
        c_values.push((y.q[0] - q) / dt);
        p_deviation = p_deviation.max((y.p[0] - 1.0).abs());
    }
    let c_mean = c_values.iter().sum::<f64>() / c_values.len() as f64;
    let max = c_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = c_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TranslationReport {
        c_mean,
        c_spread: max - min,
        p_deviation,
        c_values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub dts: Vec<f64>,
    /// `‖S^Δt(x) − Φ(x)‖ / Δt` per step size.
    pub ratios: Vec<f64>,
    pub passes: bool,
    /// Least-squares slope of `log ratio` against `log Δt`; absent when a ratio is zero.
    pub observed_order: Option<f64>,
}

/// Least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() || ys.iter().chain(xs).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Compares one step of `integrator` against the exact flow for a decreasing
/// sequence of step sizes.
///
/// Passes when the last three ratios are non-increasing and the final ratio is
/// at most a tenth of the first.
pub fn consistency_probe(
    integrator: &dyn Integrator,
    spec: &HamiltonianSpec,
    x: &PhasePoint,
    dts: &[f64],
) -> Result<ConsistencyReport, DiagnosticError> {
    if dts.len() < 3 {
        return Err(DiagnosticError::InvalidInput("need at least three step sizes".into()));
    }
    if dts.windows(2).any(|w| !(w[1] < w[0])) || dts.iter().any(|&d| !(d >= 1e-6)) {
        return Err(DiagnosticError::InvalidInput(
            "step sizes must decrease and stay ≥ 1e-6".into(),
        ));
    }
    let mut ratios = Vec::with_capacity(dts.len());
    for &dt in dts {
        let exact = exact_flow(spec, x, dt, DEFAULT_QUAD_TOL)?;
        let mut tape = QueryTape::new();
        let y = integrator
            .step(spec, x, dt, &mut tape)?
            .into_point()
            .ok_or_else(|| DiagnosticError::MapUndefined(x.clone()))?;
        ratios.push(exact.distance(&y) / dt);
    }
    let tail = &ratios[ratios.len() - 3..];
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    let passes = monotone && ratios[ratios.len() - 1] <= 0.1 * ratios[0];
    Ok(ConsistencyReport {
        dts: dts.to_vec(),
        observed_order: loglog_slope(dts, &ratios),
        ratios,
        passes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Position and momentum of the first degree of freedom.
    pub q: f64,
    pub p: f64,
    pub det: f64,
    pub det_err: f64,
}

/// Parallel determinant sweep; undefined stencils yield `Err` rows in place.
pub fn determinant_sweep(
    map: &dyn PhaseMap,
    points: &[PhasePoint],
    h: f64,
) -> Vec<Result<SweepRow, DiagnosticError>> {
    points
        .par_iter()
        .map(|x| {
            jacobian(map, x, h).map(|r| SweepRow {
                q: x.q[0],
                p: x.p[0],
                det: r.determinant,
                det_err: r.det_error,
            })
        })
        .collect()
}

/// Plot-ready CSV with header `q,p,det,det_err`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("q,p,det,det_err\n");
    for r in rows {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", r.q, r.p, r.det, r.det_err));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub delta: f64,
    /// Largest `‖Φ(x + δe) − Φ(x)‖/δ` over sampled points and directions.
    pub max_lipschitz: f64,
    pub worst_point: Option<PhasePoint>,
    pub undefined_samples: usize,
}

/// Local Lipschitz estimates at resolution `delta`. A large value flags a
/// possible discontinuity; a small one never certifies continuity.
pub fn continuity_probe(map: &dyn PhaseMap, points: &[PhasePoint], delta: f64) -> ContinuityReport {
    let per_point: Vec<Option<f64>> = points
        .par_iter()
        .map(|x| {
            let fx = map.apply(x)?;
            let base = x.to_vec();
            let mut worst: f64 = 0.0;
            for j in 0..base.len() {
                let mut shifted = base.clone();
                shifted[j] += delta;
                let fy = map.apply(&PhasePoint::from_slice(&shifted))?;
                worst = worst.max(fx.distance(&fy) / delta);
            }
            Some(worst)
        })
        .collect();
    let mut report = ContinuityReport {
        delta,
        max_lipschitz: 0.0,
        worst_point: None,
        undefined_samples: 0,
    };
    for (x, l) in points.iter().zip(per_point) {
        match l {
            Some(l) if l > report.max_lipschitz || report.worst_point.is_none() => {
                report.max_lipschitz = l;
                report.worst_point = Some(x.clone());
            }
            Some(_) => {}
            None => report.undefined_samples += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_flows::{free_flow, harmonic_flow};
    use crate::integrators::{ExplicitMethod, IntegratorConfig};

    fn harmonic() -> HamiltonianSpec {
        HamiltonianSpec::harmonic(1.0).unwrap()
    }

    fn unit_square() -> Vec<PhasePoint> {
        vec![
            PhasePoint::planar(0.0, 0.0),
            PhasePoint::planar(1.0, 0.0),
            PhasePoint::planar(1.0, 1.0),
            PhasePoint::planar(0.0, 1.0),
        ]
    }

    #[test]
    fn free_flow_jacobian_is_shear() {
        let map = |x: &PhasePoint| Some(free_flow(x, 1.0));
        let r = jacobian(&map, &PhasePoint::planar(0.3, -2.0), 1e-5).unwrap();
        assert!((r.determinant - 1.0).abs() < 1e-9);
        assert!((r.matrix[0][1] - 1.0).abs() < 1e-9);
        assert!(r.matrix[1][0].abs() < 1e-9);
    }

    #[test]
    fn euler_determinant() {
        let c = IntegratorConfig::explicit(ExplicitMethod::ExplicitEuler);
        let h = harmonic();
        let map = StepMap::new(&c, &h, 0.1);
        let r = jacobian(&map, &PhasePoint::planar(0.7, 0.2), 1e-5).unwrap();
        assert!((r.determinant - 1.01).abs() < 1e-9);
        let lf = IntegratorConfig::explicit(ExplicitMethod::Leapfrog);
        let map = StepMap::new(&lf, &h, 0.1);
        let r = jacobian(&map, &PhasePoint::planar(0.7, 0.2), 1e-5).unwrap();
        assert!((r.determinant - 1.0).abs() < 1e-5);
    }

    #[test]
    fn stencil_undefined() {
        let map = |x: &PhasePoint| if x.q[0] > 0.0 { None } else { Some(x.clone()) };
        assert!(matches!(
            jacobian(&map, &PhasePoint::planar(0.0, 0.0), 1e-5),
            Err(DiagnosticError::StencilUndefined(_))
        ));
    }

    #[test]
    fn polygon_ratios() {
        let identity = |x: &PhasePoint| Some(x.clone());
        assert_eq!(polygon_area_ratio(&identity, &unit_square(), 3).unwrap(), 1.0);
        let shear = |x: &PhasePoint| Some(free_flow(x, 2.0));
        assert!((polygon_area_ratio(&shear, &unit_square(), 1).unwrap() - 1.0).abs() < 1e-15);
        let c = IntegratorConfig::explicit(ExplicitMethod::ExplicitEuler);
        let h = harmonic();
        let map = StepMap::new(&c, &h, 0.1);
        let ratio = polygon_area_ratio(&map, &unit_square(), 64).unwrap();
        assert!((ratio - 1.01).abs() < 1e-6);
        let flat = vec![
            PhasePoint::planar(0.0, 0.0),
            PhasePoint::planar(1.0, 0.0),
            PhasePoint::planar(2.0, 0.0),
        ];
        assert!(matches!(
            polygon_area_ratio(&identity, &flat, 2),
            Err(DiagnosticError::DegeneratePolygon(_))
        ));
    }

    #[test]
    fn drift_examples() {
        let h = harmonic();
        let exact = |x: &PhasePoint| Some(harmonic_flow(x, 0.1, 1.0));
        let r = energy_drift(&exact, &h, &PhasePoint::planar(1.0, 0.0), 100).unwrap();
        assert!(r.max_drift <= 1e-13);

        let sp = IntegratorConfig::step_and_project(ExplicitMethod::Leapfrog);
        let r = energy_drift(&StepMap::new(&sp, &h, 0.1), &h, &PhasePoint::planar(1.0, 0.0), 100).unwrap();
        assert!(r.max_drift <= 1e-12);

        let eu = IntegratorConfig::explicit(ExplicitMethod::ExplicitEuler);
        let r = energy_drift(&StepMap::new(&eu, &h, 0.1), &h, &PhasePoint::planar(1.0, 0.0), 10).unwrap();
        let expected = (1.01f64.powi(10) - 1.0) * 0.5;
        assert!((r.max_drift - expected).abs() <= 1e-12);

        let dies = |x: &PhasePoint| if x.q[0] > 2.5 { None } else { Some(free_flow(x, 1.0)) };
        let r = energy_drift(&dies, &HamiltonianSpec::FreeParticle, &PhasePoint::planar(0.0, 1.0), 10).unwrap();
        assert_eq!(r.undefined_at, Some(4));
        assert_eq!(r.steps_completed, 3);
    }

    #[test]
    fn translation_examples() {
        let exact = |x: &PhasePoint| Some(free_flow(x, 0.1));
        let r = measure_translation_constant(&exact, &[0.0, 1.0, 5.0], 0.1).unwrap();
        // 1.0 + 0.1 and 5.0 + 0.1 round, so the spread is at rounding level.
        assert!((r.c_mean - 1.0).abs() < 1e-13);
        assert!(r.c_spread < 1e-13);
        assert_eq!(r.p_deviation, 0.0);

        let dyadic = |x: &PhasePoint| Some(free_flow(x, 0.125));
        let r = measure_translation_constant(&dyadic, &[-5.0, 0.0, 1.0, 5.0, 100.0], 0.125).unwrap();
        assert_eq!(r.c_spread, 0.0);
        assert_eq!(r.c_mean, 1.0);

        let stretch = |x: &PhasePoint| Some(PhasePoint::planar(x.q[0] + 0.2 * 0.1 * x.q[0], 1.0));
        let r = measure_translation_constant(&stretch, &[0.0, 1.0, 5.0], 0.1).unwrap();
        assert!(r.c_spread > 0.5);
    }

    #[test]
    fn consistency_examples() {
        let h = harmonic();
        let x = PhasePoint::planar(1.0, 0.0);
        let lf = IntegratorConfig::explicit(ExplicitMethod::Leapfrog);
        let r = consistency_probe(&lf, &h, &x, &[0.1, 0.05, 0.025]).unwrap();
        assert!(r.passes);
        for w in r.ratios.windows(2) {
            let shrink = w[0] / w[1];
            assert!((shrink - 4.0).abs() < 0.1, "{shrink}");
        }
        assert!((r.observed_order.unwrap() - 2.0).abs() < 0.05);

        let frozen = crate::integrators::FnIntegrator::new("frozen", |_h: &HamiltonianSpec, x: &PhasePoint, _dt, _t: &mut QueryTape| {
            Ok(crate::integrators::StepResult::Defined(x.clone()))
        });
        let r = consistency_probe(&frozen, &h, &x, &[0.1, 0.05, 0.025]).unwrap();
        assert!(!r.passes);
        assert!((r.ratios[2] - 1.0).abs() < 0.05);

        assert!(consistency_probe(&lf, &h, &x, &[0.1, 0.2, 0.05]).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let rows = vec![SweepRow { q: 0.5, p: 1.0, det: 1.0, det_err: 1e-12 }];
        let csv = sweep_csv(&rows);
        assert_eq!(csv, "q,p,det,det_err\n0.5,1.0,1.0,1e-12\n");
    }

    #[test]
    fn continuity_flags_jumps() {
        let jump = |x: &PhasePoint| Some(PhasePoint::planar(if x.q[0] > 0.0 { 1.0 } else { 0.0 }, x.p[0]));
        let r = continuity_probe(&jump, &[PhasePoint::planar(-5e-8, 0.0), PhasePoint::planar(3.0, 0.0)], 1e-7);
        assert!(r.max_lipschitz > 1e6);
        assert_eq!(r.worst_point, Some(PhasePoint::planar(-5e-8, 0.0)));
        let smooth = |x: &PhasePoint| Some(free_flow(x, 1.0));
        let r = continuity_probe(&smooth, &[PhasePoint::planar(0.0, 1.0)], 1e-7);
        assert!(r.max_lipschitz < 2.0);
    }
}

use hamadv_core::bump::{Bump, BumpPotential};
use hamadv_core::hamiltonian::{agrees_on_tape, HamiltonianSpec};
use hamadv_core::integrators::{run_traced, Integrator, IntegratorConfig};
use hamadv_core::multidof::{reduce_to_planar, LiftKind};
use hamadv_core::point::PhasePoint;
use proptest::prelude::*;

fn base_specs() -> Vec<HamiltonianSpec> {
    vec![
        HamiltonianSpec::FreeParticle,
        HamiltonianSpec::bump(BumpPotential::single(-1.5, 0.4, 0.3).unwrap()),
    ]
}

fn with_extra_bump(spec: &HamiltonianSpec, extra: Bump) -> Option<HamiltonianSpec> {
    let mut bumps = match spec {
        HamiltonianSpec::FreeParticle => vec![],
        HamiltonianSpec::SeparableBump(v) => v.bumps().to_vec(),
        _ => return None,
    };
    bumps.push(extra);
    BumpPotential::new(bumps).ok().map(HamiltonianSpec::bump)
}

/// Runs the step, places `extra` if its support avoids every taped position,
/// and checks the outputs and tapes under both Hamiltonians are bit-identical.
fn replay(integrator: &dyn Integrator, spec: &HamiltonianSpec, x: &PhasePoint, dt: f64, extra: Bump) -> Result<(), TestCaseError> {
    let (a, tape_a) = run_traced(integrator, spec, x, dt).unwrap();
    let v = BumpPotential::new(vec![extra]).unwrap();
    let clear = tape_a.q_coordinates().iter().all(|&q| v.vanishes_near(q, 0.0) && v.value(q) == 0.0);
    prop_assume!(clear);
    let Some(modified) = with_extra_bump(spec, extra) else {
        return Ok(());
    };
    let qa = integrator.queried_spec(spec).unwrap();
    let qb = integrator.queried_spec(&modified).unwrap();
    prop_assert!(agrees_on_tape(&qa, &qb, &tape_a).unwrap());
    let (b, tape_b) = run_traced(integrator, &modified, x, dt).unwrap();
    prop_assert!(a.bit_identical(&b), "{}: {:?} vs {:?}", integrator.name(), a, b);
    prop_assert_eq!(tape_a.len(), tape_b.len());
    for (ra, rb) in tape_a.records().iter().zip(tape_b.records()) {
        prop_assert_eq!(&ra.alpha, &rb.alpha);
        prop_assert_eq!(ra.value.to_bits(), rb.value.to_bits());
        prop_assert!(ra.point.to_vec().iter().zip(rb.point.to_vec()).all(|(u, w)| u.to_bits() == w.to_bits()));
    }
    Ok(())
}

fn bump_strategy() -> impl Strategy<Value = Bump> {
    (-3.0..3.0f64, 0.01..0.4f64, 0.01..0.3f64).prop_map(|(center, radius, amplitude)| Bump { center, radius, amplitude })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn planar_methods_cannot_see_untaped_bumps(
        which in 0usize..6,
        base in 0usize..2,
        q in -2.0..2.0f64,
        p in 0.3..1.5f64,
        dt in 0.01..0.2f64,
        extra in bump_strategy(),
    ) {
        let cfg = &IntegratorConfig::shipped()[which];
        replay(cfg, &base_specs()[base], &PhasePoint::planar(q, p), dt, extra)?;
    }

    #[test]
    fn reduced_methods_cannot_see_untaped_bumps(
        which in 0usize..6,
        product in any::<bool>(),
        q in -2.0..2.0f64,
        p in 0.3..1.5f64,
        dt in 0.01..0.2f64,
        extra in bump_strategy(),
    ) {
        let kind = if product { LiftKind::product(3) } else { LiftKind::single(2) };
        let reduced = reduce_to_planar(IntegratorConfig::shipped()[which].clone(), kind);
        replay(&reduced, &HamiltonianSpec::FreeParticle, &PhasePoint::planar(q, p), dt, extra)?;
    }

    #[test]
    fn tapes_respect_their_bound(
        which in 0usize..6,
        q in -2.0..2.0f64,
        p in -1.5..1.5f64,
        dt in 0.0..0.3f64,
    ) {
        let cfg = &IntegratorConfig::shipped()[which];
        for spec in [HamiltonianSpec::harmonic(1.3).unwrap(), base_specs()[1].clone()] {
            let (_, tape) = run_traced(cfg, &spec, &PhasePoint::planar(q, p), dt).unwrap();
            prop_assert!(tape.len() <= cfg.max_tape_len(1));
            prop_assert!(tape.records().iter().all(|r| r.value.is_finite() && r.point.is_finite()));
        }
    }
}

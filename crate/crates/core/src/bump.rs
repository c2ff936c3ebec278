//! Compactly supported smooth potentials built from mollifier bumps.
//!
//! Each bump contributes `a·exp(−1/(1−u²))` with `u = (q − c)/r` for `|u| < 1`
//! and exactly zero elsewhere. Sums are taken in list order so evaluation is
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::hamiltonian::PhaseError;

/// Peak value of the unit mollifier, attained at `u = 0`.
pub const MOLLIFIER_PEAK: f64 = 0.367_879_441_171_442_32; // e⁻¹

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn support(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }

    /// `(f, f′, f″)` of this bump at `q`, zero outside the open support.
    fn jet(&self, q: f64) -> [f64; 3] {
        let u = (q - self.center) / self.radius;
        if !(u.abs() < 1.0) {
            return [0.0; 3];
        }
        let s = 1.0 - u * u;
        let f = (-1.0 / s).exp();
        if f == 0.0 {
            // exp underflowed; the derivative factors may overflow, but the
            // true values are below any representable magnitude.
            return [0.0; 3];
        }
        // g = −1/s, g′ = −2u/s², g″ = −(2 + 6u²)/s³
        let g1 = -2.0 * u / (s * s);
        let g2 = -(2.0 + 6.0 * u * u) / (s * s * s);
        let r = self.radius;
        let a = self.amplitude;
        [a * f, a * f * g1 / r, a * f * (g1 * g1 + g2) / (r * r)]
    }
}

/// A validated sum of bumps with `0 ≤ V < 1/2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPotential")]
pub struct BumpPotential {
    bumps: Vec<Bump>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    bumps: Vec<Bump>,
}

impl TryFrom<RawPotential> for BumpPotential {
    type Error = PhaseError;

    fn try_from(raw: RawPotential) -> Result<Self, Self::Error> {
        BumpPotential::new(raw.bumps)
    }
}

impl BumpPotential {
    pub fn new(bumps: Vec<Bump>) -> Result<Self, PhaseError> {
        for (i, b) in bumps.iter().enumerate() {
            if !b.center.is_finite() || !b.radius.is_finite() || !(b.radius > 0.0) {
                return Err(PhaseError::InvalidPotential(format!(
                    "bump {i}: center must be finite and radius positive"
                )));
            }
            if !b.amplitude.is_finite() || b.amplitude < 0.0 {
                return Err(PhaseError::InvalidPotential(format!(
                    "bump {i}: amplitude must be finite and non-negative"
                )));
            }
        }
        let potential = Self { bumps };
        if !(potential.sup_bound() < 0.5) {
            return Err(PhaseError::InvalidPotential(format!(
                "sum of bump peaks {} must stay below 1/2",
                potential.sup_bound()
            )));
        }
        Ok(potential)
    }

    /// The zero potential.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(center: f64, radius: f64, amplitude: f64) -> Result<Self, PhaseError> {
        Self::new(vec![Bump {
            center,
            radius,
            amplitude,
        }])
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }

    /// Returns a copy with every amplitude multiplied by `factor ∈ (0, 1]`.
    pub fn scaled(&self, factor: f64) -> Result<Self, PhaseError> {
        Self::new(
            self.bumps
                .iter()
                .map(|b| Bump {
                    amplitude: b.amplitude * factor,
                    ..*b
                })
                .collect(),
        )
    }

    /// Upper bound on `sup V`: the sum of the bump peaks.
    pub fn sup_bound(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude * MOLLIFIER_PEAK).sum()
    }

    /// Upper bound on `V` over `[a, b]`, counting only bumps whose support meets it.
    pub fn sup_bound_on(&self, a: f64, b: f64) -> f64 {
        self.bumps
            .iter()
            .filter(|bump| {
                let (lo, hi) = bump.support();
                lo < b && hi > a
            })
            .map(|bump| bump.amplitude * MOLLIFIER_PEAK)
            .sum()
    }

    /// Disjoint, sorted open intervals whose union is the support of `V`.
    pub fn support_intervals(&self) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = self
            .bumps
            .iter()
            .filter(|b| b.amplitude > 0.0)
            .map(Bump::support)
            .collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo < last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged
    }

    pub fn value(&self, q: f64) -> f64 {
        self.jet(q)[0]
    }

    /// `(V, V′, V″)` at `q`.
    pub fn jet(&self, q: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for b in &self.bumps {
            let j = b.jet(q);
            out[0] += j[0];
            out[1] += j[1];
            out[2] += j[2];
        }
        out
    }

    /// `(V(q), V′(q), V″(q))` truncated to `max_order + 1` entries.
    pub fn derivatives(&self, q: f64, max_order: u32) -> Result<Vec<f64>, PhaseError> {
        if max_order > 2 {
            return Err(PhaseError::UnsupportedOrder(max_order));
        }
        Ok(self.jet(q)[..=max_order as usize].to_vec())
    }

    /// Derivative of order `k ≤ 2`.
    pub fn derivative(&self, q: f64, k: u32) -> Result<f64, PhaseError> {
        if k > 2 {
            return Err(PhaseError::UnsupportedOrder(k));
        }
        Ok(self.jet(q)[k as usize])
    }

    /// True when `V` and all its derivatives vanish on `[x − radius, x + radius]`.
    pub fn vanishes_near(&self, x: f64, radius: f64) -> bool {
        self.support_intervals()
            .iter()
            .all(|&(lo, hi)| hi <= x - radius || lo >= x + radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn empty_potential_is_zero() {
        let v = BumpPotential::empty();
        assert_eq!(v.derivatives(7.0, 2).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn peak_matches_closed_form() {
        assert_eq!(MOLLIFIER_PEAK, (-1.0f64).exp());
        let v = BumpPotential::single(0.5, 0.25, 0.3).unwrap();
        let d = v.derivatives(0.5, 2).unwrap();
        assert_eq!(d[0], 0.3 * (-1.0f64).exp());
        assert_eq!(d[1], 0.0);
        // f″(0) = −2/e, scaled by a/r².
        let expected = -2.0 * 0.3 * (-1.0f64).exp() / (0.25 * 0.25);
        assert!((d[2] - expected).abs() <= 1e-14 * expected.abs());
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let v = BumpPotential::single(0.5, 0.25, 0.3).unwrap();
        let h = 1e-5;
        for &q in &[0.5, 0.4, 0.6, 0.33, 0.7] {
            let fd2 = (v.value(q + h) - 2.0 * v.value(q) + v.value(q - h)) / (h * h);
            let fd1 = central(|x| v.value(x), q, h);
            let d = v.jet(q);
            assert!((d[1] - fd1).abs() <= 1e-7 * (1.0 + d[1].abs()), "q={q}");
            assert!((d[2] - fd2).abs() <= 1e-3 * (1.0 + d[2].abs()), "q={q}");
        }
    }

    #[test]
    fn vanishes_at_and_beyond_endpoints() {
        let v = BumpPotential::single(1.0, 0.5, 0.4).unwrap();
        assert_eq!(v.jet(1.5), [0.0; 3]);
        assert_eq!(v.jet(0.5), [0.0; 3]);
        assert_eq!(v.jet(3.0), [0.0; 3]);
        // Just inside: tiny, finite, no NaN from 0·∞.
        let j = v.jet(1.5 - 1e-12);
        assert!(j.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn unsupported_order_rejected() {
        let v = BumpPotential::empty();
        assert!(matches!(
            v.derivatives(0.0, 3),
            Err(PhaseError::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn amplitude_sum_validated() {
        assert!(BumpPotential::single(0.0, 1.0, 1.3).is_ok());
        assert!(BumpPotential::single(0.0, 1.0, 1.4).is_err());
        assert!(BumpPotential::single(0.0, 0.0, 0.1).is_err());
        assert!(BumpPotential::single(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn bound_holds_on_dense_grid() {
        let v = BumpPotential::new(vec![
            Bump { center: 0.0, radius: 0.5, amplitude: 0.6 },
            Bump { center: 0.3, radius: 0.4, amplitude: 0.7 },
        ])
        .unwrap();
        let mut max = 0.0f64;
        for i in 0..=20_000 {
            let q = -0.5 + 1.2 * i as f64 / 20_000.0;
            let x = v.value(q);
            assert!(x >= 0.0);
            max = max.max(x);
        }
        assert!(max < 0.5);
        for q in [-0.51, -3.0, 0.71, 9.0] {
            assert_eq!(v.value(q), 0.0);
        }
    }

    #[test]
    fn support_intervals_merge_overlaps() {
        let v = BumpPotential::new(vec![
            Bump { center: 2.0, radius: 0.5, amplitude: 0.1 },
            Bump { center: 0.0, radius: 0.5, amplitude: 0.1 },
            Bump { center: 0.8, radius: 0.5, amplitude: 0.1 },
        ])
        .unwrap();
        assert_eq!(v.support_intervals(), vec![(-0.5, 1.3), (1.5, 2.5)]);
        assert!(v.vanishes_near(1.4, 0.05));
        assert!(!v.vanishes_near(1.4, 0.2));
    }
}

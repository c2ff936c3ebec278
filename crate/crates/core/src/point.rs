//! Phase-space points and derivative multi-indices.

use serde::{Deserialize, Serialize};

use crate::hamiltonian::PhaseError;

/// A point `(q, p)` in `2n`-dimensional phase space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl TryFrom<RawPoint> for PhasePoint {
    type Error = PhaseError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        PhasePoint::new(raw.q, raw.p)
    }
}

impl PhasePoint {
    /// Builds a point, checking that `q` and `p` have equal nonzero length and
    /// finite entries.
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self, PhaseError> {
        if q.is_empty() || q.len() != p.len() {
            return Err(PhaseError::DimensionMismatch {
                expected: q.len().max(1),
                found: p.len(),
            });
        }
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(PhaseError::NonFinite);
        }
        Ok(Self { q, p })
    }

    /// One degree of freedom.
    pub fn planar(q: f64, p: f64) -> Self {
        Self { q: vec![q], p: vec![p] }
    }

    /// Number of degrees of freedom `n`.
    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }

    /// Flattened coordinates in the order `(q₁..qₙ, p₁..pₙ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dof());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }

    /// Inverse of [`PhasePoint::to_vec`]. Panics on odd length.
    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() % 2 == 0, "phase vector must have even length");
        let n = v.len() / 2;
        Self {
            q: v[..n].to_vec(),
            p: v[n..].to_vec(),
        }
    }

    /// Coordinate `k` in flattened order.
    pub fn coord(&self, k: usize) -> f64 {
        let n = self.dof();
        if k < n {
            self.q[k]
        } else {
            self.p[k - n]
        }
    }

    pub fn coord_mut(&mut self, k: usize) -> &mut f64 {
        let n = self.dof();
        if k < n {
            &mut self.q[k]
        } else {
            &mut self.p[k - n]
        }
    }

    /// The pair `(qᵢ, pᵢ)` as a planar point.
    pub fn pair(&self, i: usize) -> PhasePoint {
        PhasePoint::planar(self.q[i], self.p[i])
    }

    /// Euclidean distance between points of equal dimension.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Max-norm distance.
    pub fn max_distance(&self, other: &PhasePoint) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Derivative orders `α` over `(q₁..qₙ, p₁..pₙ)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    /// The zero index, i.e. the value of `H` itself.
    pub fn value(n: usize) -> Self {
        Self(vec![0; 2 * n])
    }

    /// `∂/∂qᵢ`.
    pub fn dq(n: usize, i: usize) -> Self {
        let mut a = vec![0; 2 * n];
        a[i] = 1;
        Self(a)
    }

    /// `∂/∂pᵢ`.
    pub fn dp(n: usize, i: usize) -> Self {
        let mut a = vec![0; 2 * n];
        a[n + i] = 1;
        Self(a)
    }

    /// Second derivative with respect to flattened coordinates `j` and `k`.
    pub fn second(n: usize, j: usize, k: usize) -> Self {
        let mut a = vec![0; 2 * n];
        a[j] += 1;
        a[k] += 1;
        Self(a)
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(PhasePoint::new(vec![0.0], vec![]).is_err());
        assert!(PhasePoint::new(vec![], vec![]).is_err());
        assert!(PhasePoint::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let x = PhasePoint::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(x.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(PhasePoint::from_slice(&x.to_vec()), x);
        assert_eq!(x.coord(2), 3.0);
    }

    #[test]
    fn multi_index_orders() {
        assert_eq!(MultiIndex::value(2).order(), 0);
        assert_eq!(MultiIndex::dp(2, 1).0, vec![0, 0, 0, 1]);
        assert_eq!(MultiIndex::second(1, 0, 0).0, vec![2, 0]);
    }

    #[test]
    fn json_rejects_bad_points() {
        assert!(serde_json::from_str::<PhasePoint>(r#"{"q":[1],"p":[1,2]}"#).is_err());
        let x: PhasePoint = serde_json::from_str(r#"{"q":[0.5],"p":[1]}"#).unwrap();
        assert_eq!(x, PhasePoint::planar(0.5, 1.0));
    }
}

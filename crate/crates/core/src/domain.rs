//! Search spaces and confidence-width schedules.
//!
//! Continuous boxes are searched through a finite candidate set: either a
//! fixed lattice (identical every iteration) or a fresh uniform sample drawn
//! from the run's generator each iteration.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::check_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    #[default]
    FixedGrid,
    Resampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchDomain {
    Finite {
        points: Vec<Vec<f64>>,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        candidate_count: usize,
        #[serde(default)]
        refresh: Refresh,
    },
}

impl SearchDomain {
    /// A finite domain; exact duplicates are removed, first occurrence kept.
    pub fn finite(points: Vec<Vec<f64>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let points: Vec<Vec<f64>> = points
            .into_iter()
            .filter(|p| seen.insert(point_key(p)))
            .collect();
        let d = SearchDomain::Finite { points };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_box(dim: usize, candidate_count: usize, refresh: Refresh) -> Result<Self> {
        Self::boxed(vec![0.0; dim], vec![1.0; dim], candidate_count, refresh)
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>, candidate_count: usize, refresh: Refresh) -> Result<Self> {
        let d = SearchDomain::Box {
            lower,
            upper,
            candidate_count,
            refresh,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SearchDomain::Finite { points } => {
                if points.is_empty() {
                    return Err(Error::arg("finite domain must be nonempty"));
                }
                check_points(points)?;
                let mut seen = std::collections::HashSet::new();
                if !points.iter().all(|p| seen.insert(point_key(p))) {
                    return Err(Error::arg("finite domain contains duplicate points"));
                }
                Ok(())
            }
            SearchDomain::Box {
                lower,
                upper,
                candidate_count,
                ..
            } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::arg("box bounds must be nonempty and of equal length"));
                }
                if !lower.iter().zip(upper).all(|(l, u)| l.is_finite() && u.is_finite() && l < u) {
                    return Err(Error::arg("box needs finite bounds with lower < upper"));
                }
                if *candidate_count < 2 {
                    return Err(Error::arg("box needs at least two candidates"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SearchDomain::Finite { points } => points[0].len(),
            SearchDomain::Box { lower, .. } => lower.len(),
        }
    }

    /// Number of candidates produced per call to [`candidates`](Self::candidates).
    pub fn candidate_count(&self) -> usize {
        match self {
            SearchDomain::Finite { points } => points.len(),
            SearchDomain::Box { candidate_count, .. } => *candidate_count,
        }
    }

    /// Whether the candidate set is the same on every call.
    pub fn is_fixed(&self) -> bool {
        !matches!(
            self,
            SearchDomain::Box {
                refresh: Refresh::Resampled,
                ..
            }
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            SearchDomain::Finite { points } => points.iter().any(|p| p.as_slice() == x),
            SearchDomain::Box { lower, upper, .. } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u),
        }
    }

    /// Candidate points for one iteration. Only the resampled box consumes
    /// randomness.
    pub fn candidates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            SearchDomain::Finite { points } => points.clone(),
            SearchDomain::Box {
                lower,
                upper,
                candidate_count,
                refresh: Refresh::FixedGrid,
            } => lattice(lower, upper, *candidate_count),
            SearchDomain::Box {
                lower,
                upper,
                candidate_count,
                refresh: Refresh::Resampled,
            } => (0..*candidate_count)
                .map(|_| {
                    lower
                        .iter()
                        .zip(upper)
                        .map(|(l, u)| rng.random_range(*l..*u))
                        .collect()
                })
                .collect(),
        }
    }
}

pub(crate) fn point_key(p: &[f64]) -> Vec<u64> {
    // Collapse signed zeros so that 0.0 and -0.0 compare equal.
    p.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Full tensor lattice with `n = ⌊count^{1/d}⌋` points per axis (corners
/// included), topped up to exactly `count` points with a Halton sequence.
fn lattice(lower: &[f64], upper: &[f64], count: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    let mut n = (count as f64).powf(1.0 / d as f64).floor() as usize;
    while checked_pow(n + 1, d).is_some_and(|p| p <= count) {
        n += 1;
    }
    while n > 1 && checked_pow(n, d).is_none_or(|p| p > count) {
        n -= 1;
    }
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(count);
    if n >= 2 {
        let total = n.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0usize; d];
            for slot in idx.iter_mut().rev() {
                *slot = rem % n;
                rem /= n;
            }
            points.push(
                idx.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&i, (l, u))| l + (u - l) * i as f64 / (n - 1) as f64)
                    .collect(),
            );
        }
    }
    let mut seen: std::collections::HashSet<Vec<u64>> = points.iter().map(|p| point_key(p)).collect();
    let mut index = 1u64;
    while points.len() < count {
        let p: Vec<f64> = (0..d)
            .map(|k| {
                let h = radical_inverse(index, PRIMES[k % PRIMES.len()]);
                lower[k] + (upper[k] - lower[k]) * h
            })
            .collect();
        index += 1;
        if seen.insert(point_key(&p)) {
            points.push(p);
        }
    }
    points
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    base.checked_pow(exp as u32)
}

/// Confidence-width calibration `β_t`, indexed from `t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `β_t = 2 log(|X| t² π² / (6δ))`
    Finite { cardinality: usize, delta: f64 },
    /// `β_t = 2 log(t² 2π² / (3δ)) + 2d log(t² d b r √log(4da/δ))`
    Compact {
        dim: usize,
        a: f64,
        b: f64,
        r: f64,
        delta: f64,
    },
}

impl BetaSchedule {
    pub fn beta(&self, t: u64) -> Result<f64> {
        match *self {
            BetaSchedule::Finite { cardinality, delta } => beta_finite(t, cardinality, delta),
            BetaSchedule::Compact { dim, a, b, r, delta } => beta_compact(t, dim, a, b, r, delta),
        }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            BetaSchedule::Finite { delta, .. } | BetaSchedule::Compact { delta, .. } => delta,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_t(t: u64) -> Result<()> {
    if t == 0 {
        Err(Error::arg("beta schedules are indexed from t = 1"))
    } else {
        Ok(())
    }
}

pub fn beta_finite(t: u64, cardinality: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    check_t(t)?;
    if cardinality == 0 {
        return Err(Error::arg("domain cardinality must be at least 1"));
    }
    let t = t as f64;
    Ok(2.0 * (cardinality as f64 * t * t * PI * PI / (6.0 * delta)).ln())
}

pub fn beta_compact(t: u64, dim: usize, a: f64, b: f64, r: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    check_t(t)?;
    if dim == 0 || !(a > 0.0 && b > 0.0 && r > 0.0) {
        return Err(Error::arg("compact schedule needs d >= 1 and a, b, r > 0"));
    }
    let inner = (4.0 * dim as f64 * a / delta).ln();
    if !(inner > 0.0) {
        return Err(Error::arg("compact schedule needs 4da/delta > 1"));
    }
    let t = t as f64;
    let d = dim as f64;
    Ok(2.0 * (t * t * 2.0 * PI * PI / (3.0 * delta)).ln() + 2.0 * d * (t * t * d * b * r * inner.sqrt()).ln())
}

/// The `π_t = t² π² / 6` series whose reciprocals sum to one.
pub fn pi_t(t: u64) -> f64 {
    let t = t as f64;
    t * t * PI * PI / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finite_domain_dedups() {
        let d = SearchDomain::finite(vec![vec![1.0], vec![2.0], vec![1.0]]).unwrap();
        assert_eq!(d.candidate_count(), 2);
        assert!(SearchDomain::finite(vec![]).is_err());
        let raw = SearchDomain::Finite {
            points: vec![vec![1.0], vec![1.0]],
        };
        assert!(raw.validate().is_err());
    }

    #[test]
    fn finite_candidates_are_the_points() {
        let pts = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let d = SearchDomain::finite(pts.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.candidates(&mut rng), pts);
        assert_eq!(d.candidates(&mut rng), pts);
    }

    #[test]
    fn three_by_three_lattice() {
        let d = SearchDomain::unit_box(2, 9, Refresh::FixedGrid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = d.candidates(&mut rng);
        assert_eq!(c.len(), 9);
        for x in [0.0, 0.5, 1.0] {
            for y in [0.0, 0.5, 1.0] {
                assert!(c.contains(&vec![x, y]), "missing ({x}, {y})");
            }
        }
    }

    #[test]
    fn lattice_tops_up_to_count() {
        let d = SearchDomain::boxed(vec![-6.0, -6.0], vec![6.0, 6.0], 30, Refresh::FixedGrid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = d.candidates(&mut rng);
        assert_eq!(c.len(), 30);
        assert!(c.iter().all(|p| d.contains(p)));
        let mut seen = std::collections::HashSet::new();
        assert!(c.iter().all(|p| seen.insert(point_key(p))));
        for corner in [[-6.0, -6.0], [-6.0, 6.0], [6.0, -6.0], [6.0, 6.0]] {
            assert!(c.contains(&corner.to_vec()));
        }
    }

    #[test]
    fn resampled_is_seeded() {
        let d = SearchDomain::unit_box(3, 50, Refresh::Resampled).unwrap();
        let a = d.candidates(&mut ChaCha8Rng::seed_from_u64(9));
        let b = d.candidates(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let first = d.candidates(&mut rng);
        let second = d.candidates(&mut rng);
        assert_ne!(first, second);
    }

    #[test]
    fn box_validation() {
        assert!(SearchDomain::boxed(vec![0.0], vec![0.0], 5, Refresh::FixedGrid).is_err());
        assert!(SearchDomain::boxed(vec![0.0], vec![1.0], 1, Refresh::FixedGrid).is_err());
        assert!(SearchDomain::boxed(vec![0.0, 0.0], vec![1.0], 5, Refresh::FixedGrid).is_err());
    }

    #[test]
    fn beta_values() {
        let b = beta_finite(10, 1000, 0.05).unwrap();
        assert!((b - 30.01271608198993).abs() < 1e-10);
        let b = beta_finite(1, 1, 0.9).unwrap();
        assert!((b - 1.2061216362571432).abs() < 1e-12);
        let b = beta_compact(1, 2, 1.0, 1.0, 1.0, 0.1).unwrap();
        assert!((b - 14.100770874119426).abs() < 1e-10);
    }

    #[test]
    fn beta_doubling_t() {
        let d = 3usize;
        let b1 = beta_compact(7, d, 1.3, 0.7, 2.0, 0.2).unwrap();
        let b2 = beta_compact(14, d, 1.3, 0.7, 2.0, 0.2).unwrap();
        let expected = 2.0 * 4f64.ln() + 2.0 * d as f64 * 4f64.ln();
        assert!((b2 - b1 - expected).abs() < 1e-12);
    }

    #[test]
    fn beta_errors() {
        for delta in [0.0, 1.0, -0.1, 1.5] {
            assert!(beta_finite(1, 10, delta).is_err());
            assert!(beta_compact(1, 2, 1.0, 1.0, 1.0, delta).is_err());
        }
        assert!(beta_finite(0, 10, 0.1).is_err());
    }

    #[test]
    fn beta_monotone_and_deterministic() {
        let s = BetaSchedule::Finite {
            cardinality: 1024,
            delta: 0.1,
        };
        let mut prev = s.beta(1).unwrap();
        for t in 2..=10_000 {
            let b = s.beta(t).unwrap();
            assert!(b >= prev);
            assert_eq!(b.to_bits(), s.beta(t).unwrap().to_bits());
            prev = b;
        }
    }

    #[test]
    fn pi_series_sums_to_one() {
        let s: f64 = (1..=1000).map(|t| 1.0 / pi_t(t)).sum();
        assert!((s - 1.0).abs() < 1e-3);
    }

    #[test]
    fn schedule_serde() {
        let s: BetaSchedule = toml::from_str("kind = \"finite\"\ncardinality = 10\ndelta = 0.1\n").unwrap();
        assert_eq!(
            s,
            BetaSchedule::Finite {
                cardinality: 10,
                delta: 0.1
            }
        );
    }
}

//! Finite partitions of (a subset of) the unit interval.
//!
//! A [`Partition`] stores its positive parts in nonincreasing order. The
//! infinite tail of zeros is implicit and never stored.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for structural invariant checks (total mass, coalescing).
pub const STRUCT_TOL: f64 = 1e-12;
/// Relative rounding budget of a single merge or split.
pub const FP_TOL: f64 = 1e-15;
/// Parts smaller than this are rejected instead of silently dropped.
pub const MIN_PART: f64 = 1e-300;

/// Above this many parts, repeated size-biased draws go through an alias table.
pub const ALIAS_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("partition has no parts")]
    Empty,
    #[error("part {index} is {value}, parts must be finite and positive")]
    InvalidPart { index: usize, value: f64 },
    #[error("total mass {0} exceeds 1")]
    MassExceedsOne(f64),
    #[error("index {index} out of range for a partition with {len} parts")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cannot merge part {0} with itself")]
    SameIndex(usize),
    #[error("split fraction {0} is outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("split would create a part below {MIN_PART:e}")]
    Underflow,
    #[error("parts must be listed in nonincreasing order")]
    NotNonincreasing,
    #[error("moment order must be at least 1")]
    ZeroMomentOrder,
    #[error("multiplicity vector must be nonempty with a positive last entry")]
    InvalidMultiplicity,
}

/// A nonincreasing finite sequence of positive part sizes with total mass at most 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    parts: Vec<f64>,
}

impl Partition {
    /// Builds a partition from parts in any order.
    pub fn new(mut parts: Vec<f64>) -> Result<Self, PartitionError> {
        if parts.is_empty() {
            return Err(PartitionError::Empty);
        }
        for (index, &value) in parts.iter().enumerate() {
            if !value.is_finite() || value < MIN_PART {
                return Err(PartitionError::InvalidPart { index, value });
            }
        }
        // Stable sort keeps insertion order among ties.
        parts.sort_by(|a, b| b.total_cmp(a));
        let mass: f64 = parts.iter().sum();
        if mass > 1.0 + STRUCT_TOL {
            return Err(PartitionError::MassExceedsOne(mass));
        }
        Ok(Partition { parts })
    }

    /// The single-part state (1, 0, 0, ...).
    pub fn unit() -> Self {
        Partition { parts: vec![1.0] }
    }

    /// A uniformly distributed point of the simplex with `count` parts.
    pub fn uniform_random<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Self {
        assert!(count > 0, "partition needs at least one part");
        let mut cuts: Vec<f64> = (0..count - 1).map(|_| rng.random::<f64>()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let parts: Vec<f64> = cuts
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|&x| x >= MIN_PART)
            .collect();
        Partition::new(parts).expect("spacings of the unit interval form a partition")
    }

    pub(crate) fn from_sorted_unchecked(parts: Vec<f64>) -> Self {
        debug_assert!(parts.windows(2).all(|w| w[0] >= w[1]));
        Partition { parts }
    }

    pub fn parts(&self) -> &[f64] {
        &self.parts
    }

    /// Number of nonzero parts.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.parts[0]
    }

    pub fn smallest(&self) -> f64 {
        *self.parts.last().expect("partitions are nonempty")
    }

    /// Total mass `|p|`.
    pub fn mass(&self) -> f64 {
        self.parts.iter().sum()
    }

    /// `|p|_2^2`, the sum of squared parts.
    pub fn norm2_sq(&self) -> f64 {
        self.parts.iter().map(|x| x * x).sum()
    }

    /// Whether this is the single-part state of mass one.
    pub fn is_unit(&self) -> bool {
        self.parts.len() == 1 && (self.parts[0] - 1.0).abs() <= STRUCT_TOL
    }

    /// Part-wise comparison of two states within `tol`.
    pub fn approx_eq(&self, other: &Partition, tol: f64) -> bool {
        self.parts.len() == other.parts.len()
            && self
                .parts
                .iter()
                .zip(&other.parts)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    fn check_index(&self, index: usize) -> Result<(), PartitionError> {
        if index >= self.parts.len() {
            Err(PartitionError::IndexOutOfRange { index, len: self.parts.len() })
        } else {
            Ok(())
        }
    }

    /// Merges parts `i` and `j` into one part of size `p_i + p_j`.
    pub fn merge(&self, i: usize, j: usize) -> Result<Partition, PartitionError> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(PartitionError::SameIndex(i));
        }
        let mut out = self.clone();
        out.merge_in_place(i, j);
        Ok(out)
    }

    /// Splits part `i` into `u * p_i` and `(1 - u) * p_i`.
    pub fn split(&self, i: usize, u: f64) -> Result<Partition, PartitionError> {
        self.check_index(i)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(PartitionError::FractionOutOfRange(u));
        }
        let mut out = self.clone();
        out.split_in_place(i, u)?;
        Ok(out)
    }

    pub(crate) fn merge_in_place(&mut self, i: usize, j: usize) {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let merged = self.parts[lo] + self.parts[hi];
        self.parts.remove(hi);
        self.parts.remove(lo);
        self.insert_sorted(merged);
    }

    pub(crate) fn split_in_place(&mut self, i: usize, u: f64) -> Result<(), PartitionError> {
        let x = self.parts[i];
        let a = u * x;
        let b = (1.0 - u) * x;
        if a < MIN_PART || b < MIN_PART {
            return Err(PartitionError::Underflow);
        }
        self.parts.remove(i);
        self.insert_sorted(a.max(b));
        self.insert_sorted(a.min(b));
        Ok(())
    }

    fn insert_sorted(&mut self, value: f64) {
        // After any existing equal parts.
        let pos = self.parts.partition_point(|&x| x >= value);
        self.parts.insert(pos, value);
    }

    /// Index drawn with probability `p_i / |p|` from a single uniform variate.
    pub(crate) fn size_biased_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        scan_index(&self.parts, rng.random::<f64>() * self.mass())
    }

    /// Two independent size-biased indices; they may coincide.
    pub fn size_biased_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        if self.parts.len() > ALIAS_THRESHOLD {
            let table = SizeBiasedSampler::new(self);
            (table.sample(rng), table.sample(rng))
        } else {
            (self.size_biased_index(rng), self.size_biased_index(rng))
        }
    }

    /// `Z_j(p) = sum_i p_i^j`.
    pub fn z_moment(&self, j: u32) -> Result<f64, PartitionError> {
        if j == 0 {
            return Err(PartitionError::ZeroMomentOrder);
        }
        Ok(self.parts.iter().map(|x| x.powi(j as i32)).sum())
    }

    /// `P_n(p) = prod_{j=2}^{d} Z_j^{n_j}` where `n[0]` is the multiplicity of `Z_2`.
    pub fn n_polynomial(&self, n: &[u32]) -> Result<f64, PartitionError> {
        validate_multiplicity(n)?;
        let mut value = 1.0;
        for (offset, &count) in n.iter().enumerate() {
            if count > 0 {
                let z = self.z_moment(offset as u32 + 2)?;
                value *= z.powi(count as i32);
            }
        }
        Ok(value)
    }
}

pub(crate) fn validate_multiplicity(n: &[u32]) -> Result<(), PartitionError> {
    match n.last() {
        Some(&last) if last > 0 => Ok(()),
        _ => Err(PartitionError::InvalidMultiplicity),
    }
}

pub(crate) fn scan_index(parts: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    for (i, &x) in parts.iter().enumerate() {
        acc += x;
        if target < acc {
            return i;
        }
    }
    // Rounding can leave `target` a hair above the accumulated mass.
    parts.len() - 1
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = PartitionError;

    fn try_from(parts: Vec<f64>) -> Result<Self, Self::Error> {
        let sorted = parts.windows(2).all(|w| w[0] >= w[1]);
        let p = Partition::new(parts)?;
        if !sorted {
            return Err(PartitionError::NotNonincreasing);
        }
        Ok(p)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.parts
    }
}

/// Repeated size-biased index draws from one fixed partition.
///
/// Small partitions are scanned linearly; larger ones use Vose's alias method.
#[derive(Debug, Clone)]
pub struct SizeBiasedSampler<'a> {
    parts: &'a [f64],
    mass: f64,
    alias: Option<AliasTable>,
}

impl<'a> SizeBiasedSampler<'a> {
    pub fn new(p: &'a Partition) -> Self {
        let alias = (p.len() > ALIAS_THRESHOLD).then(|| AliasTable::new(p.parts()));
        SizeBiasedSampler { parts: p.parts(), mass: p.mass(), alias }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.alias {
            Some(table) => table.sample(rng),
            None => scan_index(self.parts, rng.random::<f64>() * self.mass),
        }
    }
}

#[derive(Debug, Clone)]
struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        AliasTable { prob, alias }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[column] {
            column
        } else {
            self.alias[column]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn p(parts: &[f64]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    #[test]
    fn merge_examples() {
        assert_eq!(p(&[0.5, 0.3, 0.2]).merge(1, 2).unwrap().parts(), &[0.5, 0.5]);
        assert_eq!(p(&[0.5, 0.5]).merge(0, 1).unwrap().parts(), &[1.0]);
        let m = p(&[0.4, 0.3, 0.2, 0.1]).merge(0, 3).unwrap();
        assert_eq!(m.len(), 3);
        assert_abs_diff_eq!(m.parts()[0], 0.5, epsilon = 1e-15);
        assert_eq!(&m.parts()[1..], &[0.3, 0.2]);
    }

    #[test]
    fn merge_errors() {
        let q = p(&[0.5, 0.3, 0.2]);
        assert_eq!(q.merge(1, 1), Err(PartitionError::SameIndex(1)));
        assert_eq!(q.merge(0, 3), Err(PartitionError::IndexOutOfRange { index: 3, len: 3 }));
    }

    #[test]
    fn split_examples() {
        assert_eq!(Partition::unit().split(0, 0.5).unwrap().parts(), &[0.5, 0.5]);
        assert_eq!(p(&[0.5, 0.3, 0.2]).split(0, 0.5).unwrap().parts(), &[0.3, 0.25, 0.25, 0.2]);
        let q = p(&[0.5, 0.3, 0.2]);
        assert!(q.split(1, 0.3).unwrap().approx_eq(&q.split(1, 0.7).unwrap(), FP_TOL));
    }

    #[test]
    fn split_errors() {
        let q = p(&[0.5, 0.5]);
        assert_eq!(q.split(0, 0.0), Err(PartitionError::FractionOutOfRange(0.0)));
        assert_eq!(q.split(0, 1.0), Err(PartitionError::FractionOutOfRange(1.0)));
        assert!(matches!(q.split(2, 0.5), Err(PartitionError::IndexOutOfRange { .. })));
        let tiny = p(&[1e-200]);
        assert_eq!(tiny.split(0, 1e-150), Err(PartitionError::Underflow));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert_eq!(Partition::new(vec![]), Err(PartitionError::Empty));
        assert!(matches!(Partition::new(vec![0.5, 0.0]), Err(PartitionError::InvalidPart { .. })));
        assert!(matches!(Partition::new(vec![0.7, 0.4]), Err(PartitionError::MassExceedsOne(_))));
        assert_eq!(Partition::new(vec![0.2, 0.5, 0.3]).unwrap().parts(), &[0.5, 0.3, 0.2]);
    }

    #[test]
    fn json_roundtrip_and_order() {
        let q = p(&[0.5, 0.3, 0.2]);
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, "[0.5,0.3,0.2]");
        assert_eq!(serde_json::from_str::<Partition>(&s).unwrap(), q);
        assert!(serde_json::from_str::<Partition>("[0.2,0.5]").is_err());
        assert!(serde_json::from_str::<Partition>("[0.9,0.5]").is_err());
    }

    #[test]
    fn moments() {
        for k in 1..6 {
            assert_eq!(Partition::unit().z_moment(k).unwrap(), 1.0);
        }
        assert_eq!(p(&[0.5, 0.5]).z_moment(2).unwrap(), 0.5);
        assert_abs_diff_eq!(p(&[0.5, 0.3, 0.2]).z_moment(3).unwrap(), 0.16, epsilon = 1e-15);
        assert_eq!(p(&[0.5, 0.5]).z_moment(0), Err(PartitionError::ZeroMomentOrder));
    }

    #[test]
    fn n_polynomials() {
        let q = p(&[0.5, 0.3, 0.2]);
        assert_eq!(q.n_polynomial(&[1]).unwrap(), q.z_moment(2).unwrap());
        assert_abs_diff_eq!(p(&[0.5, 0.5]).n_polynomial(&[2, 1]).unwrap(), 0.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(q.n_polynomial(&[0, 1]).unwrap(), 0.16, epsilon = 1e-15);
        assert_eq!(q.n_polynomial(&[]), Err(PartitionError::InvalidMultiplicity));
        assert_eq!(q.n_polynomial(&[1, 0]), Err(PartitionError::InvalidMultiplicity));
    }

    #[test]
    fn size_biased_pair_on_unit_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(Partition::unit().size_biased_pair(&mut rng), (0, 0));
        }
    }

    fn pair_chi_square(q: &Partition, draws: usize, seed: u64) -> f64 {
        let n = q.len();
        let mut counts = vec![0usize; n * n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..draws {
            let (i, j) = q.size_biased_pair(&mut rng);
            counts[i * n + j] += 1;
        }
        let mass = q.mass();
        let mut stat = 0.0;
        for i in 0..n {
            for j in 0..n {
                let expected = draws as f64 * q.parts()[i] * q.parts()[j] / (mass * mass);
                let d = counts[i * n + j] as f64 - expected;
                stat += d * d / expected;
            }
        }
        let dist = ChiSquared::new((n * n - 1) as f64).unwrap();
        1.0 - dist.cdf(stat)
    }

    #[test]
    fn size_biased_pair_matches_product_law() {
        assert!(pair_chi_square(&p(&[0.5, 0.5]), 100_000, 2) > 0.01);
        assert!(pair_chi_square(&p(&[0.5, 0.3, 0.2]), 100_000, 3) > 0.01);
        assert!(pair_chi_square(&p(&[0.6, 0.25, 0.15]), 100_000, 4) > 0.01);
    }

    #[test]
    fn size_biased_first_index_frequency() {
        let q = p(&[0.5, 0.3, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n).filter(|_| q.size_biased_pair(&mut rng).0 == 0).count();
        let se = (0.25f64 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.5).abs() <= 4.0 * se);
    }

    #[test]
    fn alias_table_matches_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = Partition::uniform_random(100, &mut rng);
        let sampler = SizeBiasedSampler::new(&q);
        assert!(sampler.alias.is_some());
        let draws = 200_000;
        let mut counts = vec![0usize; q.len()];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng)] += 1;
        }
        let mass = q.mass();
        let stat: f64 = counts
            .iter()
            .zip(q.parts())
            .map(|(&c, &w)| {
                let e = draws as f64 * w / mass;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let dist = ChiSquared::new((q.len() - 1) as f64).unwrap();
        assert!(1.0 - dist.cdf(stat) > 0.01);
    }

    fn arb_partition() -> impl Strategy<Value = Partition> {
        (1usize..12, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Partition::uniform_random(n, &mut rng)
        })
    }

    proptest! {
        #[test]
        fn merge_preserves_mass_and_order(q in arb_partition(), a in any::<usize>(), b in any::<usize>()) {
            prop_assume!(q.len() >= 2);
            let i = a % q.len();
            let j = b % q.len();
            prop_assume!(i != j);
            let m = q.merge(i, j).unwrap();
            prop_assert_eq!(m.len(), q.len() - 1);
            prop_assert!(m.parts().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!((m.mass() - q.mass()).abs() <= 4.0 * f64::EPSILON * q.len() as f64);
        }

        #[test]
        fn split_then_merge_recovers(q in arb_partition(), a in any::<usize>(), u in 0.001f64..0.999) {
            let i = a % q.len();
            let s = q.split(i, u).unwrap();
            prop_assert_eq!(s.len(), q.len() + 1);
            prop_assert!(s.parts().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(((s.mass() - q.mass()) / q.mass()).abs() <= 4.0 * f64::EPSILON * s.len() as f64);
            let x = q.parts()[i];
            let hi = s.parts().iter().position(|&y| y == (u * x).max((1.0 - u) * x)).unwrap();
            let lo = s.parts().iter().rposition(|&y| y == (u * x).min((1.0 - u) * x)).unwrap();
            let back = s.merge(hi, lo).unwrap();
            prop_assert!(back.approx_eq(&q, FP_TOL * 2.0));
        }
    }
}

//! The coagulation-fragmentation kernel: sampling, exact enumeration, and
//! expectations of test functions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{NPolynomial, TestFunction};
use crate::partition::{scan_index, Partition, PartitionError, STRUCT_TOL};
use crate::sigma::SigmaSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("{name} must lie in (0, 1], got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("exact enumeration needs an atomic splitting measure")]
    NonAtomicSigma,
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Merge and split acceptance probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub beta_m: f64,
    pub beta_s: f64,
}

impl KernelParams {
    pub fn new(beta_m: f64, beta_s: f64) -> Result<Self, KernelError> {
        for (name, value) in [("beta_m", beta_m), ("beta_s", beta_s)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(KernelError::InvalidRate { name, value });
            }
        }
        Ok(KernelParams { beta_m, beta_s })
    }

    /// `beta_s / beta_m`.
    pub fn theta(&self) -> f64 {
        self.beta_s / self.beta_m
    }

    /// Stay-put probability at a state with mass `mass` and `|p|_2^2 = norm2_sq`.
    pub fn lazy_probability(&self, mass: f64, norm2_sq: f64) -> f64 {
        1.0 - self.beta_m * mass * mass + (self.beta_m - self.beta_s) * norm2_sq
    }
}

/// What a single step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Stay,
    /// Parts `a` and `b` were merged.
    Merge { a: f64, b: f64 },
    /// Part `x` was split into `u x` and `(1 - u) x`.
    Split { x: f64, u: f64 },
}

/// Advances `p` one step. `mass` must be `|p|`; callers running long chains
/// cache it because merges and splits preserve it.
///
/// A split whose smaller piece would underflow the smallest representable
/// part is treated as a lazy step.
pub fn step_in_place<R: Rng + ?Sized>(
    p: &mut Partition,
    mass: f64,
    params: &KernelParams,
    sigma: &SigmaSpec,
    rng: &mut R,
) -> StepOutcome {
    if mass < 1.0 - STRUCT_TOL && rng.random::<f64>() >= mass * mass {
        return StepOutcome::Stay;
    }
    let i = scan_index(p.parts(), rng.random::<f64>() * mass);
    let j = scan_index(p.parts(), rng.random::<f64>() * mass);
    if i != j {
        if rng.random::<f64>() < params.beta_m {
            let (a, b) = (p.parts()[i], p.parts()[j]);
            p.merge_in_place(i, j);
            return StepOutcome::Merge { a, b };
        }
    } else if rng.random::<f64>() < params.beta_s {
        let x = p.parts()[i];
        let u = sigma.sample(rng);
        if p.split_in_place(i, u).is_ok() {
            return StepOutcome::Split { x, u };
        }
    }
    StepOutcome::Stay
}

/// One step of the chain from `p`.
pub fn step<R: Rng + ?Sized>(p: &Partition, params: &KernelParams, sigma: &SigmaSpec, rng: &mut R) -> Partition {
    let mut next = p.clone();
    step_in_place(&mut next, p.mass(), params, sigma, rng);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub p: Partition,
    pub prob: f64,
}

/// Every move out of a finite state, with coalesced probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub outcomes: Vec<Transition>,
    #[serde(rename = "lazy")]
    pub lazy_probability: f64,
}

impl TransitionTable {
    pub fn total(&self) -> f64 {
        self.lazy_probability + self.outcomes.iter().map(|o| o.prob).sum::<f64>()
    }

    /// `K(p, {target})`.
    pub fn probability_of(&self, from: &Partition, target: &Partition) -> f64 {
        let moved: f64 = self
            .outcomes
            .iter()
            .filter(|o| o.p.approx_eq(target, STRUCT_TOL))
            .map(|o| o.prob)
            .sum();
        if from.approx_eq(target, STRUCT_TOL) {
            moved + self.lazy_probability
        } else {
            moved
        }
    }

    /// `int f dK(p, .)`.
    pub fn expect<F: TestFunction + ?Sized>(&self, f: &F, from: &Partition) -> f64 {
        self.lazy_probability * f.eval(from) + self.outcomes.iter().map(|o| o.prob * f.eval(&o.p)).sum::<f64>()
    }

    fn add(&mut self, p: Partition, prob: f64) {
        if prob <= 0.0 {
            return;
        }
        match self.outcomes.iter_mut().find(|o| o.p.approx_eq(&p, STRUCT_TOL)) {
            Some(existing) => existing.prob += prob,
            None => self.outcomes.push(Transition { p, prob }),
        }
    }
}

/// Exact one-step law from `p` for an atomic splitting measure.
pub fn enumerate_transitions(
    p: &Partition,
    params: &KernelParams,
    sigma: &SigmaSpec,
) -> Result<TransitionTable, KernelError> {
    let SigmaSpec::Atomic { atoms } = sigma else {
        return Err(KernelError::NonAtomicSigma);
    };
    let parts = p.parts();
    let lazy_probability = params.lazy_probability(p.mass(), p.norm2_sq());
    let mut table = TransitionTable { outcomes: Vec::new(), lazy_probability };
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            let prob = 2.0 * params.beta_m * parts[i] * parts[j];
            table.add(p.merge(i, j)?, prob);
        }
    }
    for (i, &x) in parts.iter().enumerate() {
        for &(u, w) in atoms {
            let prob = params.beta_s * x * x * w;
            table.add(p.split(i, u)?, prob);
        }
    }
    Ok(table)
}

/// `(K f)(p) = E[f(p(1)) | p(0) = p]`.
///
/// Merges are summed exactly. Split integrals use the view's closed form when
/// it has one, otherwise `quadrature_nodes`-point Gauss-Legendre (exact sums
/// for atomic measures).
pub fn apply_kernel<F: TestFunction + ?Sized>(
    f: &F,
    p: &Partition,
    params: &KernelParams,
    sigma: &SigmaSpec,
    quadrature_nodes: usize,
) -> f64 {
    let view = f.at(p);
    let parts = p.parts();
    let mass = p.mass();
    let norm2 = p.norm2_sq();

    let mut merges = 0.0;
    for i in 0..parts.len() {
        let mut row = 0.0;
        for j in i + 1..parts.len() {
            row += parts[j] * view.merged(i, j);
        }
        merges += parts[i] * row;
    }

    let mut splits = 0.0;
    let mut kinks = Vec::new();
    for (i, &x) in parts.iter().enumerate() {
        let inner = match view.split_expectation(i, sigma) {
            Some(v) => v,
            None => {
                kinks.clear();
                view.split_kinks(i, &mut kinks);
                sigma.expect(|u| view.split(i, u), quadrature_nodes, &kinks)
            }
        };
        splits += x * x * inner;
    }

    2.0 * params.beta_m * merges + params.beta_s * splits + params.lazy_probability(mass, norm2) * view.base()
}

/// Expected one-step change of the part count: `-beta_m |p|^2 + (beta_m + beta_s) |p|_2^2`.
pub fn increment_part_count(p: &Partition, params: &KernelParams) -> f64 {
    let mass = p.mass();
    -params.beta_m * mass * mass + (params.beta_m + params.beta_s) * p.norm2_sq()
}

/// Expected one-step change of `#{i : p_i > eps}`.
pub fn increment_threshold_count(p: &Partition, params: &KernelParams, sigma: &SigmaSpec, eps: f64) -> f64 {
    if eps <= 0.0 {
        return increment_part_count(p, params);
    }
    let parts = p.parts();
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let mut merge = 0.0;
    for &a in parts {
        for &b in parts {
            merge += a * b * (ind(a <= eps && b <= eps && eps < a + b) - ind(eps < a && eps < b));
        }
    }
    let mut split = 0.0;
    let mut diagonal = 0.0;
    for &x in parts {
        if eps < x {
            let r = eps / x;
            split += x * x * (sigma.mass_above(r) - sigma.mass_from(1.0 - r));
        }
        diagonal += x * x * (ind(x <= eps && eps < 2.0 * x) - ind(eps < x));
    }
    params.beta_m * merge + params.beta_s * split - params.beta_m * diagonal
}

/// Expected one-step change of `Z_k`.
pub fn increment_z_moment(p: &Partition, params: &KernelParams, sigma: &SigmaSpec, k: u32) -> Result<f64, KernelError> {
    if k == 0 {
        return Err(PartitionError::ZeroMomentOrder.into());
    }
    let parts = p.parts();
    let ki = k as i32;
    let mut merge = 0.0;
    for (i, &a) in parts.iter().enumerate() {
        for (j, &b) in parts.iter().enumerate() {
            if i != j {
                merge += a * b * ((a + b).powi(ki) - a.powi(ki) - b.powi(ki));
            }
        }
    }
    let gain = sigma.split_moment(k) - 1.0;
    let split: f64 = parts.iter().map(|&x| x * x * x.powi(ki) * gain).sum();
    Ok(params.beta_m * merge + params.beta_s * split)
}

/// Expected one-step change of `P_n`.
pub fn increment_n_polynomial(
    p: &Partition,
    params: &KernelParams,
    sigma: &SigmaSpec,
    n: &[u32],
    quadrature_nodes: usize,
) -> Result<f64, KernelError> {
    let f = NPolynomial::new(n.to_vec())?;
    Ok(apply_kernel(&f, p, params, sigma, quadrature_nodes) - f.eval(p))
}

/// `mu_s K(s, {t}) - mu_t K(t, {s})`.
pub fn detailed_balance_gap(
    s: &Partition,
    t: &Partition,
    params: &KernelParams,
    sigma: &SigmaSpec,
    mu_s: f64,
    mu_t: f64,
) -> Result<f64, KernelError> {
    let from_s = enumerate_transitions(s, params, sigma)?.probability_of(s, t);
    let from_t = enumerate_transitions(t, params, sigma)?.probability_of(t, s);
    Ok(mu_s * from_s - mu_t * from_t)
}

/// A pair `(s, t)` with `K(s, {t}) > 0 = K(t, {s})` for an atomic measure.
///
/// `t` is the unit state and `s` has two parts whose ratio corresponds to a
/// split fraction carrying no atom, so `t` can reach `s` only through a
/// fraction the measure never draws.
pub fn non_reversibility_witness(sigma: &SigmaSpec) -> Option<(Partition, Partition)> {
    let SigmaSpec::Atomic { atoms } = sigma else {
        return None;
    };
    let mut points: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    points.push(0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let (lo, hi) = points
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))?;
    let u = 0.5 * (lo + hi);
    let s = Partition::new(vec![1.0 - u, u]).ok()?;
    Some((s, Partition::unit()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{Constant, Mass, ThresholdCount, ZMoment};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_rates() -> KernelParams {
        KernelParams::new(1.0, 1.0).unwrap()
    }

    fn p(parts: &[f64]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(0.5, 1.5).is_err());
        assert_relative_eq!(KernelParams::new(0.5, 1.0).unwrap().theta(), 2.0);
    }

    #[test]
    fn forced_split_from_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = KernelParams::new(0.3, 1.0).unwrap();
        for _ in 0..100 {
            let next = step(&Partition::unit(), &params, &SigmaSpec::dirac(0.5), &mut rng);
            assert_eq!(next.parts(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn two_halves_step_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = p(&[0.5, 0.5]);
        let n = 100_000;
        let mut merged = 0;
        for _ in 0..n {
            let next = step(&start, &unit_rates(), &SigmaSpec::dirac(0.5), &mut rng);
            match next.len() {
                1 => merged += 1,
                3 => assert_eq!(next.parts(), &[0.5, 0.25, 0.25]),
                other => panic!("unexpected part count {other}"),
            }
        }
        let freq = merged as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn enumeration_example() {
        let table = enumerate_transitions(&p(&[0.5, 0.3, 0.2]), &unit_rates(), &SigmaSpec::dirac(0.5)).unwrap();
        let expected = [
            (vec![0.8, 0.2], 0.30),
            (vec![0.7, 0.3], 0.20),
            (vec![0.5, 0.5], 0.12),
            (vec![0.3, 0.25, 0.25, 0.2], 0.25),
            (vec![0.5, 0.2, 0.15, 0.15], 0.09),
            (vec![0.5, 0.3, 0.1, 0.1], 0.04),
        ];
        assert_eq!(table.outcomes.len(), expected.len());
        for (parts, prob) in expected {
            let target = p(&parts);
            assert_relative_eq!(table.probability_of(&p(&[0.5, 0.3, 0.2]), &target), prob, epsilon = 1e-12);
        }
        assert!(table.lazy_probability.abs() < 1e-12);
    }

    #[test]
    fn enumeration_coalesces_equal_outcomes() {
        let table = enumerate_transitions(&p(&[0.25; 4]), &unit_rates(), &SigmaSpec::dirac(0.5)).unwrap();
        assert_eq!(table.outcomes.len(), 2);
        assert_relative_eq!(table.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_from_unit() {
        let params = KernelParams::new(1.0, 0.4).unwrap();
        let sigma = SigmaSpec::Atomic { atoms: vec![(0.2, 0.5), (0.5, 0.5)] };
        let table = enumerate_transitions(&Partition::unit(), &params, &sigma).unwrap();
        assert_eq!(table.outcomes.len(), 2);
        assert_relative_eq!(table.lazy_probability, 0.6, epsilon = 1e-15);
        assert!(enumerate_transitions(&Partition::unit(), &params, &SigmaSpec::Uniform).is_err());
    }

    #[test]
    fn lazy_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = KernelParams::new(0.7, 0.4).unwrap();
        for _ in 0..100 {
            let n = rng.random_range(1..8);
            let q = Partition::uniform_random(n, &mut rng);
            let table = enumerate_transitions(&q, &params, &SigmaSpec::dirac(0.5)).unwrap();
            assert_relative_eq!(table.total(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(
                table.lazy_probability,
                params.lazy_probability(q.mass(), q.norm2_sq()),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn z2_kernel_example() {
        let v = apply_kernel(&ZMoment(2), &p(&[0.5, 0.5]), &unit_rates(), &SigmaSpec::dirac(0.5), 64);
        assert_relative_eq!(v, 0.6875, epsilon = 1e-15);
    }

    #[test]
    fn kernel_preserves_mass_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = KernelParams::new(0.5, 1.0).unwrap();
        for _ in 0..20 {
            let q = Partition::uniform_random(5, &mut rng);
            assert_relative_eq!(apply_kernel(&Mass, &q, &params, &SigmaSpec::Uniform, 64), q.mass(), epsilon = 1e-14);
            assert_relative_eq!(apply_kernel(&Constant(1.0), &q, &params, &SigmaSpec::Uniform, 64), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = KernelParams::new(0.8, 0.6).unwrap();
        let sigma = SigmaSpec::Atomic { atoms: vec![(0.1, 0.3), (0.35, 0.7)] };
        for _ in 0..50 {
            let q = Partition::uniform_random(rng.random_range(1..7), &mut rng);
            let table = enumerate_transitions(&q, &params, &sigma).unwrap();
            for f in [&ZMoment(2) as &dyn TestFunction, &ZMoment(3), &ThresholdCount(0.1)] {
                assert_relative_eq!(
                    apply_kernel(f, &q, &params, &sigma, 64),
                    table.expect(f, &q),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn z_increment_example() {
        let v = increment_z_moment(&p(&[0.5, 0.5]), &unit_rates(), &SigmaSpec::dirac(0.5), 2).unwrap();
        assert_relative_eq!(v, 0.1875, epsilon = 1e-15);
        assert!(increment_z_moment(&p(&[0.5, 0.5]), &unit_rates(), &SigmaSpec::Uniform, 0).is_err());
    }

    #[test]
    fn z_increment_matches_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = KernelParams::new(0.5, 1.0).unwrap();
        for sigma in [SigmaSpec::Uniform, SigmaSpec::PowerLaw { a: 0.5 }] {
            for _ in 0..20 {
                let q = Partition::uniform_random(6, &mut rng);
                for k in 1..5 {
                    let direct = increment_z_moment(&q, &params, &sigma, k).unwrap();
                    let via = apply_kernel(&ZMoment(k), &q, &params, &sigma, 64) - ZMoment(k).eval(&q);
                    assert!((direct - via).abs() <= 1e-10, "k = {k}: {direct} vs {via}");
                }
                assert!(increment_z_moment(&q, &params, &sigma, 1).unwrap().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn part_count_increment_examples() {
        assert_eq!(increment_part_count(&p(&[0.5, 0.5]), &unit_rates()), 0.0);
        assert_eq!(increment_part_count(&Partition::unit(), &unit_rates()), 1.0);
    }

    #[test]
    fn threshold_increment_zero_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = KernelParams::new(0.9, 0.3).unwrap();
        for _ in 0..100 {
            let q = Partition::uniform_random(rng.random_range(1..10), &mut rng);
            let at_zero = increment_threshold_count(&q, &params, &SigmaSpec::Uniform, 0.0);
            assert_eq!(at_zero, increment_part_count(&q, &params));
            let tiny = increment_threshold_count(&q, &params, &SigmaSpec::Uniform, 1e-13);
            assert!((tiny - at_zero).abs() < 1e-9);
            for eps in [0.01, 0.1, 0.3] {
                assert!(increment_threshold_count(&q, &params, &SigmaSpec::Uniform, eps).abs() <= 2.0);
            }
        }
    }

    #[test]
    fn n_polynomial_increment_reduces_to_z2() {
        let q = p(&[0.4, 0.35, 0.25]);
        let params = KernelParams::new(0.5, 1.0).unwrap();
        let a = increment_n_polynomial(&q, &params, &SigmaSpec::Uniform, &[1], 64).unwrap();
        let b = increment_z_moment(&q, &params, &SigmaSpec::Uniform, 2).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
        let unit = increment_n_polynomial(&Partition::unit(), &params, &SigmaSpec::Uniform, &[1], 64).unwrap();
        assert_relative_eq!(unit, params.beta_s * (SigmaSpec::Uniform.split_moment(2) - 1.0), epsilon = 1e-14);
    }

    #[test]
    fn detailed_balance_examples() {
        let s = p(&[0.5, 0.5]);
        let gap = detailed_balance_gap(&s, &Partition::unit(), &unit_rates(), &SigmaSpec::dirac(0.5), 1.0, 1.0).unwrap();
        assert_relative_eq!(gap, -0.5, epsilon = 1e-15);

        let sigma = SigmaSpec::Atomic { atoms: vec![(0.1, 0.5), (0.5, 0.5)] };
        let (s, t) = non_reversibility_witness(&sigma).unwrap();
        let r = s.parts()[1] / s.parts()[0];
        assert!(r > 0.1 && r < 0.5);
        let table_t = enumerate_transitions(&t, &unit_rates(), &sigma).unwrap();
        assert_eq!(table_t.probability_of(&t, &s), 0.0);
        let table_s = enumerate_transitions(&s, &unit_rates(), &sigma).unwrap();
        assert!(table_s.probability_of(&s, &t) > 0.0);
    }

    #[test]
    fn off_simplex_step_law() {
        // Mass 0.8: lazy = 1 - 0.64 + 0 with unit rates; merge with 2 * 0.5 * 0.3 = 0.3.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let start = p(&[0.5, 0.3]);
        let n = 200_000;
        let (mut stays, mut merges) = (0u32, 0u32);
        for _ in 0..n {
            let next = step(&start, &unit_rates(), &SigmaSpec::dirac(0.5), &mut rng);
            match next.len() {
                1 => merges += 1,
                2 => stays += 1,
                _ => {}
            }
        }
        let se = |q: f64| (q * (1.0 - q) / n as f64).sqrt();
        assert!((merges as f64 / n as f64 - 0.3).abs() <= 4.0 * se(0.3));
        assert!((stays as f64 / n as f64 - 0.36).abs() <= 4.0 * se(0.36));
    }
}

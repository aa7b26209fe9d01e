//! Experiments on independent Poisson-Dirichlet samples and random states.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{positive, Check, ExperimentReport, HarnessError, Statistic, SAMPLE_BLOCK, VERDICT_SE};
use crate::exec::{map_indexed, stream, Execution};
use crate::functionals::{Functional, NPolynomial, PartCount, TestFunction, ThresholdCount, ZMoment};
use crate::kernel::{
    apply_kernel, enumerate_transitions, increment_n_polynomial, increment_part_count, increment_threshold_count,
    increment_z_moment, step, KernelParams,
};
use crate::partition::Partition;
use crate::pd::{
    functional_equation_residual, marginalization_residual, random_simplex_point, sample_pd_stick,
    z_moment_by_quadrature, PdParams, PoissonSampler,
};
use crate::quadrature::DEFAULT_NODES;
use crate::sigma::SigmaSpec;
use crate::stats::{ks_one_sample, ks_two_sample, Moments};

/// Stream offset separating the Poisson sampler from the stick sampler.
const POISSON_STREAMS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdSampler {
    #[default]
    Stick,
    Poisson,
}

enum Source {
    Stick(PdParams),
    Poisson(Box<PoissonSampler>),
}

impl Source {
    fn new(pd: &PdParams, sampler: PdSampler) -> Result<Self, HarnessError> {
        pd.validate()?;
        Ok(match sampler {
            PdSampler::Stick => Source::Stick(*pd),
            PdSampler::Poisson => Source::Poisson(Box::new(PoissonSampler::new(pd)?)),
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Partition {
        match self {
            Source::Stick(pd) => sample_pd_stick(pd, rng),
            Source::Poisson(s) => s.sample(rng),
        }
    }
}

/// `n` draws of `f`, in blocks of [`SAMPLE_BLOCK`] with one stream per block.
fn sample_blocks<T, F>(execution: Execution, seed: u64, first_stream: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync + Send,
{
    let blocks = n.div_ceil(SAMPLE_BLOCK);
    map_indexed(execution, blocks, |b| {
        let mut rng = stream(seed, first_stream + b as u64);
        let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
        (0..len).map(|_| f(&mut rng)).collect::<Vec<T>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn check_theta(pd: &PdParams, params: &KernelParams) -> Result<(), HarnessError> {
    let kernel = params.theta();
    if (pd.theta - kernel).abs() > 1e-12 * kernel.max(1.0) {
        return Err(HarnessError::ThetaMismatch { pd: pd.theta, kernel });
    }
    Ok(())
}

/// The largest rates with `beta_s / beta_m = theta`.
pub fn rates_for_theta(theta: f64) -> Result<KernelParams, HarnessError> {
    let beta_m = (1.0 / theta).min(1.0);
    Ok(KernelParams::new(beta_m, (theta * beta_m).min(1.0))?)
}

fn build_all(functionals: &[Functional]) -> Result<Vec<Box<dyn TestFunction>>, HarnessError> {
    Ok(functionals.iter().map(|f| f.build()).collect::<Result<_, _>>()?)
}

/// Estimator of `E[f(p(1)) - f(p(0))]` for `p(0)` drawn from the candidate law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneStep {
    /// `Kf(p) - f(p)` computed exactly for each sample.
    #[default]
    KernelExpectation,
    /// `f(step(p)) - f(p)` with one simulated step per sample.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub pd: PdParams,
    pub sampler: PdSampler,
    pub functionals: Vec<Functional>,
    pub samples: usize,
    pub seed: u64,
    pub estimator: OneStep,
    pub quadrature_nodes: usize,
}

impl InvarianceConfig {
    /// Rates from [`rates_for_theta`] and the four standard functionals.
    pub fn new(theta: f64, sigma: SigmaSpec, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        Ok(InvarianceConfig {
            params: rates_for_theta(theta)?,
            sigma,
            pd: PdParams::new(theta)?,
            sampler: PdSampler::Stick,
            functionals: vec![
                Functional::Z { j: 2 },
                Functional::Z { j: 3 },
                Functional::Largest,
                Functional::NPoly { n: vec![2] },
            ],
            samples,
            seed,
            estimator: OneStep::KernelExpectation,
            quadrature_nodes: DEFAULT_NODES,
        })
    }
}

/// Paired one-step test of `E[Kf - f] = 0` under PD(theta).
///
/// With a non-uniform splitting measure the law is not expected to be
/// invariant, and each statistic becomes a negative control that passes when
/// it departs from zero.
pub fn test_invariance_onestep(cfg: &InvarianceConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("samples", cfg.samples as u64)?;
    check_theta(&cfg.pd, &cfg.params)?;
    cfg.sigma.validate().map_err(|e| HarnessError::InvalidBudget(e.to_string()))?;
    let source = Source::new(&cfg.pd, cfg.sampler)?;
    let fs = build_all(&cfg.functionals)?;
    let rows = sample_blocks(execution, cfg.seed, 0, cfg.samples, |rng| {
        let p = source.sample(rng);
        match cfg.estimator {
            OneStep::KernelExpectation => fs
                .iter()
                .map(|f| apply_kernel(f.as_ref(), &p, &cfg.params, &cfg.sigma, cfg.quadrature_nodes) - f.eval(&p))
                .collect::<Vec<f64>>(),
            OneStep::Simulated => {
                let q = step(&p, &cfg.params, &cfg.sigma, rng);
                fs.iter().map(|f| f.eval(&q) - f.eval(&p)).collect()
            }
        }
    });
    let check = if matches!(cfg.sigma, SigmaSpec::Uniform) {
        Check::WithinSe { k: VERDICT_SE }
    } else {
        Check::Departs { k: VERDICT_SE }
    };
    let stats = cfg
        .functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let m: Moments = rows.iter().map(|r| r[i]).collect();
            Statistic::from_moments(format!("E[Kf - f], f = {}", f.label()), &m, Some((0.0, "invariance")), check)
        })
        .collect();
    Ok(ExperimentReport::new("invariance", cfg.seed, cfg.samples, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub pd: PdParams,
    pub sampler: PdSampler,
    pub pairs: Vec<(Functional, Functional)>,
    pub samples: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
}

impl ReversibilityConfig {
    pub fn new(theta: f64, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        Ok(ReversibilityConfig {
            params: rates_for_theta(theta)?,
            sigma: SigmaSpec::Uniform,
            pd: PdParams::new(theta)?,
            sampler: PdSampler::Stick,
            pairs: vec![
                (Functional::Z { j: 2 }, Functional::Z { j: 3 }),
                (Functional::Largest, Functional::Z { j: 2 }),
                (Functional::Threshold { eps: 0.1 }, Functional::Z { j: 3 }),
            ],
            samples,
            seed,
            quadrature_nodes: DEFAULT_NODES,
        })
    }
}

/// Paired test of `E[G KF] = E[F KG]` under PD(theta).
pub fn test_reversibility(cfg: &ReversibilityConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("samples", cfg.samples as u64)?;
    check_theta(&cfg.pd, &cfg.params)?;
    let source = Source::new(&cfg.pd, cfg.sampler)?;
    let built: Vec<(Box<dyn TestFunction>, Box<dyn TestFunction>)> = cfg
        .pairs
        .iter()
        .map(|(f, g)| Ok((f.build()?, g.build()?)))
        .collect::<Result<_, HarnessError>>()?;
    let nodes = cfg.quadrature_nodes;
    let rows = sample_blocks(execution, cfg.seed, 0, cfg.samples, |rng| {
        let p = source.sample(rng);
        built
            .iter()
            .map(|(f, g)| {
                let kf = apply_kernel(f.as_ref(), &p, &cfg.params, &cfg.sigma, nodes);
                let kg = apply_kernel(g.as_ref(), &p, &cfg.params, &cfg.sigma, nodes);
                g.eval(&p) * kf - f.eval(&p) * kg
            })
            .collect::<Vec<f64>>()
    });
    let stats = cfg
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (f, g))| {
            let m: Moments = rows.iter().map(|r| r[i]).collect();
            Statistic::from_moments(
                format!("E[G KF - F KG], F = {}, G = {}", f.label(), g.label()),
                &m,
                Some((0.0, "reversibility")),
                Check::WithinSe { k: VERDICT_SE },
            )
        })
        .collect();
    Ok(ExperimentReport::new("reversibility", cfg.seed, cfg.samples, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub states: usize,
    /// Random states have between 1 and `max_parts` parts.
    pub max_parts: usize,
    pub thresholds: Vec<f64>,
    pub z_orders: Vec<u32>,
    pub n_polynomials: Vec<Vec<u32>>,
    pub seed: u64,
    pub tolerance: f64,
}

impl IncrementConfig {
    pub fn new(params: KernelParams, sigma: SigmaSpec, states: usize, seed: u64) -> Self {
        IncrementConfig {
            params,
            sigma,
            states,
            max_parts: 8,
            thresholds: vec![0.0, 0.1, 0.3],
            z_orders: vec![2, 3],
            n_polynomials: vec![vec![1, 1], vec![2], vec![0, 1, 1]],
            seed,
            tolerance: 1e-10,
        }
    }
}

/// Closed-form expected increments against expectations over the enumerated
/// one-step law, on random finite states. Requires an atomic measure.
pub fn test_increment_identities(cfg: &IncrementConfig) -> Result<ExperimentReport, HarnessError> {
    positive("states", cfg.states as u64)?;
    positive("max_parts", cfg.max_parts as u64)?;
    let mut rng = stream(cfg.seed, 0);
    let mut names: Vec<String> = Vec::new();
    names.push("X_0".into());
    names.extend(cfg.thresholds.iter().map(|e| format!("X_{e}")));
    names.extend(cfg.z_orders.iter().map(|k| format!("Z_{k}")));
    names.extend(cfg.n_polynomials.iter().map(|n| Functional::NPoly { n: n.clone() }.label()));
    let mut worst = vec![0.0f64; names.len()];

    for _ in 0..cfg.states {
        let parts = rng.random_range(1..=cfg.max_parts);
        let p = Partition::uniform_random(parts, &mut rng);
        let table = enumerate_transitions(&p, &cfg.params, &cfg.sigma)?;
        let oracle = |f: &dyn TestFunction| table.expect(f, &p) - f.eval(&p);
        let mut gaps = vec![(increment_part_count(&p, &cfg.params) - oracle(&PartCount)).abs()];
        for &eps in &cfg.thresholds {
            let closed = increment_threshold_count(&p, &cfg.params, &cfg.sigma, eps);
            gaps.push((closed - oracle(&ThresholdCount(eps))).abs());
        }
        for &k in &cfg.z_orders {
            let closed = increment_z_moment(&p, &cfg.params, &cfg.sigma, k)?;
            gaps.push((closed - oracle(&ZMoment(k))).abs());
        }
        for n in &cfg.n_polynomials {
            let closed = increment_n_polynomial(&p, &cfg.params, &cfg.sigma, n, DEFAULT_NODES)?;
            gaps.push((closed - oracle(&NPolynomial::new(n.clone())?)).abs());
        }
        for (w, g) in worst.iter_mut().zip(gaps) {
            *w = w.max(g);
        }
    }
    let stats = names
        .into_iter()
        .zip(worst)
        .map(|(name, w)| {
            Statistic::new(
                format!("max |increment - enumerated|, {name}"),
                w,
                0.0,
                Some((cfg.tolerance, "tolerance")),
                Check::AtMost,
            )
        })
        .collect();
    Ok(ExperimentReport::new("increments", cfg.seed, cfg.states, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExactnessConfig {
    pub params: KernelParams,
    pub states: usize,
    pub max_parts: usize,
    /// Each state gets a random atomic measure with up to this many atoms.
    pub max_atoms: usize,
    pub steps_per_state: usize,
    pub seed: u64,
    pub total_tolerance: f64,
}

impl KernelExactnessConfig {
    pub fn new(params: KernelParams, states: usize, steps_per_state: usize, seed: u64) -> Self {
        KernelExactnessConfig {
            params,
            states,
            max_parts: 5,
            max_atoms: 2,
            steps_per_state,
            seed,
            total_tolerance: 1e-12,
        }
    }
}

struct StateCheck {
    total_gap: f64,
    outcomes: usize,
    outside: usize,
    unmatched: usize,
    worst_z: f64,
}

fn random_atomic<R: Rng + ?Sized>(max_atoms: usize, rng: &mut R) -> SigmaSpec {
    let count = rng.random_range(1..=max_atoms);
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let atoms = weights
        .into_iter()
        .map(|w| (0.5 - 0.5 * rng.random::<f64>(), w / total))
        .collect();
    SigmaSpec::Atomic { atoms }
}

fn check_state(cfg: &KernelExactnessConfig, index: usize) -> Result<StateCheck, HarnessError> {
    let mut rng = stream(cfg.seed, index as u64);
    let parts = rng.random_range(1..=cfg.max_parts);
    let p = Partition::uniform_random(parts, &mut rng);
    let sigma = random_atomic(cfg.max_atoms, &mut rng);
    let table = enumerate_transitions(&p, &cfg.params, &sigma)?;

    // The last slot counts lazy steps.
    let mut counts = vec![0u64; table.outcomes.len() + 1];
    let mut unmatched = 0;
    for _ in 0..cfg.steps_per_state {
        let q = step(&p, &cfg.params, &sigma, &mut rng);
        match table.outcomes.iter().position(|o| o.p.approx_eq(&q, crate::partition::STRUCT_TOL)) {
            Some(i) => counts[i] += 1,
            None if q.approx_eq(&p, crate::partition::STRUCT_TOL) => counts[table.outcomes.len()] += 1,
            None => unmatched += 1,
        }
    }
    let n = cfg.steps_per_state as f64;
    let probs = table.outcomes.iter().map(|o| o.prob).chain(std::iter::once(table.lazy_probability));
    let mut outside = 0;
    let mut worst_z = 0.0f64;
    let mut outcomes = 0;
    for (prob, &count) in probs.zip(&counts) {
        if prob <= 0.0 && count == 0 {
            continue;
        }
        outcomes += 1;
        let freq = count as f64 / n;
        let se = (prob * (1.0 - prob) / n).sqrt();
        let z = if se > 0.0 { (freq - prob).abs() / se } else if freq == prob { 0.0 } else { f64::INFINITY };
        worst_z = worst_z.max(z);
        if z > VERDICT_SE {
            outside += 1;
        }
    }
    Ok(StateCheck { total_gap: (table.total() - 1.0).abs(), outcomes, outside, unmatched, worst_z })
}

/// Enumerated one-step laws on random finite states with random atomic
/// measures: totals against one, and simulated outcome frequencies against
/// each enumerated probability.
pub fn test_kernel_exactness(cfg: &KernelExactnessConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("states", cfg.states as u64)?;
    positive("max_parts", cfg.max_parts as u64)?;
    positive("max_atoms", cfg.max_atoms as u64)?;
    positive("steps_per_state", cfg.steps_per_state as u64)?;
    let checks = map_indexed(execution, cfg.states, |i| check_state(cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let max_gap = checks.iter().map(|c| c.total_gap).fold(0.0, f64::max);
    let outside: usize = checks.iter().map(|c| c.outside).sum();
    let unmatched: usize = checks.iter().map(|c| c.unmatched).sum();
    let outcomes: usize = checks.iter().map(|c| c.outcomes).sum();
    let worst_z = checks.iter().map(|c| c.worst_z).fold(0.0, f64::max);
    let stats = vec![
        Statistic::new("max |total - 1|", max_gap, 0.0, Some((cfg.total_tolerance, "tolerance")), Check::AtMost),
        Statistic::new("frequencies outside 4 SE", outside as f64, 0.0, Some((0.0, "exact law")), Check::AtMost),
        Statistic::new("unmatched simulated outcomes", unmatched as f64, 0.0, Some((0.0, "exact law")), Check::AtMost),
        Statistic::diagnostic("outcomes compared", outcomes as f64, 0.0),
        Statistic::diagnostic("largest |z|", worst_z, 0.0),
    ];
    Ok(ExperimentReport::new("kernel", cfg.seed, cfg.states, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerComparisonConfig {
    pub pd: PdParams,
    pub samples: usize,
    pub seed: u64,
    pub significance: f64,
}

impl SamplerComparisonConfig {
    pub fn new(theta: f64, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        Ok(SamplerComparisonConfig { pd: PdParams::new(theta)?, samples, seed, significance: 0.01 })
    }
}

/// Two-sample KS comparison of the stick-breaking and Poisson samplers on
/// `p_1`, `Z_2` and `Z_3`.
pub fn compare_samplers(cfg: &SamplerComparisonConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("samples", cfg.samples as u64)?;
    let summary = |p: Partition| [p.largest(), p.norm2_sq(), p.parts().iter().map(|x| x * x * x).sum()];
    let stick = Source::new(&cfg.pd, PdSampler::Stick)?;
    let poisson = Source::new(&cfg.pd, PdSampler::Poisson)?;
    let a = sample_blocks(execution, cfg.seed, 0, cfg.samples, |rng| summary(stick.sample(rng)));
    let b = sample_blocks(execution, cfg.seed, POISSON_STREAMS, cfg.samples, |rng| summary(poisson.sample(rng)));
    let mut stats = Vec::new();
    let mut details = Vec::new();
    for (k, name) in ["p_1", "Z_2", "Z_3"].into_iter().enumerate() {
        let xs: Vec<f64> = a.iter().map(|s| s[k]).collect();
        let ys: Vec<f64> = b.iter().map(|s| s[k]).collect();
        let ks = ks_two_sample(&xs, &ys);
        stats.push(Statistic::new(
            format!("KS p-value, {name}"),
            ks.p_value,
            0.0,
            Some((cfg.significance, "significance")),
            Check::Above,
        ));
        details.push((name, ks.statistic));
    }
    Ok(ExperimentReport::new("samplers", cfg.seed, cfg.samples, cfg, stats).with_detail("ks_statistics", details))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBiasedConfig {
    pub pd: PdParams,
    pub sampler: PdSampler,
    pub samples: usize,
    pub seed: u64,
    pub significance: f64,
}

impl SizeBiasedConfig {
    pub fn new(theta: f64, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        Ok(SizeBiasedConfig { pd: PdParams::new(theta)?, sampler: PdSampler::Stick, samples, seed, significance: 0.01 })
    }
}

/// KS test of a size-biased part against `m_1`, whose CDF is `1 - (1 - x)^theta`.
pub fn test_size_biased_uniform(cfg: &SizeBiasedConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("samples", cfg.samples as u64)?;
    let source = Source::new(&cfg.pd, cfg.sampler)?;
    let xs = sample_blocks(execution, cfg.seed, 0, cfg.samples, |rng| {
        let p = source.sample(rng);
        p.parts()[p.size_biased_index(rng)]
    });
    let theta = cfg.pd.theta;
    let ks = ks_one_sample(&xs, |x| 1.0 - (1.0 - x.clamp(0.0, 1.0)).powf(theta));
    let stats = vec![
        Statistic::new("KS p-value, size-biased part", ks.p_value, 0.0, Some((cfg.significance, "significance")), Check::Above),
        Statistic::diagnostic("KS statistic", ks.statistic, 0.0),
    ];
    Ok(ExperimentReport::new("size_biased", cfg.seed, cfg.samples, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub pd: PdParams,
    pub sampler: PdSampler,
    pub orders: Vec<u32>,
    pub samples: usize,
    pub seed: u64,
}

impl MomentConfig {
    pub fn new(theta: f64, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        Ok(MomentConfig { pd: PdParams::new(theta)?, sampler: PdSampler::Stick, orders: vec![2, 3], samples, seed })
    }
}

/// Sample means of `Z_j` against the quadrature of `int m_1(x) x^{j-1} dx`.
pub fn test_moment_identity(cfg: &MomentConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("samples", cfg.samples as u64)?;
    if cfg.orders.contains(&0) {
        return Err(crate::partition::PartitionError::ZeroMomentOrder.into());
    }
    let source = Source::new(&cfg.pd, cfg.sampler)?;
    let rows = sample_blocks(execution, cfg.seed, 0, cfg.samples, |rng| {
        let p = source.sample(rng);
        cfg.orders.iter().map(|&j| p.z_moment(j).unwrap_or(f64::NAN)).collect::<Vec<f64>>()
    });
    let stats = cfg
        .orders
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let m: Moments = rows.iter().map(|r| r[i]).collect();
            Statistic::from_moments(
                format!("E[Z_{j}]"),
                &m,
                Some((z_moment_by_quadrature(cfg.pd.theta, j), "quadrature")),
                Check::WithinSe { k: VERDICT_SE },
            )
        })
        .collect();
    Ok(ExperimentReport::new("moments", cfg.seed, cfg.samples, cfg, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkConfig {
    pub theta: f64,
    /// Marginalization is checked for orders `1..=k`.
    pub k: usize,
    /// The balance relation is checked for orders `1..=min(k, 2)` unless set.
    pub functional_k: Option<usize>,
    pub points: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
    pub tolerance: f64,
}

impl MkConfig {
    pub fn new(theta: f64, k: usize, points: usize, seed: u64) -> Self {
        MkConfig { theta, k, functional_k: None, points, seed, quadrature_nodes: DEFAULT_NODES, tolerance: 1e-6 }
    }
}

/// Largest residuals of the marginalization and balance identities of `m_k`
/// over random points of the simplex.
pub fn check_mk(cfg: &MkConfig) -> Result<ExperimentReport, HarnessError> {
    positive("k", cfg.k as u64)?;
    positive("points", cfg.points as u64)?;
    let mut rng = stream(cfg.seed, 0);
    let mut stats = Vec::new();
    for k in 1..=cfg.k {
        let mut worst = 0.0f64;
        for _ in 0..cfg.points {
            let x = random_simplex_point(k - 1, &mut rng);
            worst = worst.max(marginalization_residual(cfg.theta, k, &x, cfg.quadrature_nodes)?.abs());
        }
        stats.push(Statistic::new(
            format!("max marginalization residual, k = {k}"),
            worst,
            0.0,
            Some((cfg.tolerance, "tolerance")),
            Check::AtMost,
        ));
    }
    for k in 1..=cfg.functional_k.unwrap_or(cfg.k.min(2)) {
        let mut worst = 0.0f64;
        for _ in 0..cfg.points {
            let x = random_simplex_point(k, &mut rng);
            worst = worst.max(functional_equation_residual(cfg.theta, &x, cfg.quadrature_nodes)?.abs());
        }
        stats.push(Statistic::new(
            format!("max balance residual, k = {k}"),
            worst,
            0.0,
            Some((cfg.tolerance, "tolerance")),
            Check::AtMost,
        ));
    }
    Ok(ExperimentReport::new("mk", cfg.seed, cfg.points, cfg, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_every_sample_in_order() {
        let seq = sample_blocks(Execution::Sequential, 9, 0, 2500, |rng| rng.random::<u64>());
        let par = sample_blocks(Execution::Parallel, 9, 0, 2500, |rng| rng.random::<u64>());
        assert_eq!(seq.len(), 2500);
        assert_eq!(seq, par);
        let mut first = stream(9, 0);
        assert_eq!(seq[0], first.random::<u64>());
        let mut second = stream(9, 1);
        assert_eq!(seq[SAMPLE_BLOCK], second.random::<u64>());
    }

    #[test]
    fn theta_mismatch_is_rejected() {
        let mut cfg = InvarianceConfig::new(1.0, SigmaSpec::Uniform, 10, 0).unwrap();
        cfg.pd = PdParams::new(2.0).unwrap();
        assert!(matches!(
            test_invariance_onestep(&cfg, Execution::Sequential),
            Err(HarnessError::ThetaMismatch { .. })
        ));
    }

    #[test]
    fn small_invariance_run_passes() {
        let cfg = InvarianceConfig::new(1.0, SigmaSpec::Uniform, 4000, 2).unwrap();
        let report = test_invariance_onestep(&cfg, Execution::Sequential).unwrap();
        assert_eq!(report.statistics.len(), 4);
        assert_eq!(report.verdict, super::super::Verdict::Pass, "{}", report.to_json());
    }

    #[test]
    fn increments_need_atomic_sigma() {
        let cfg = IncrementConfig::new(KernelParams::new(1.0, 1.0).unwrap(), SigmaSpec::Uniform, 3, 0);
        assert!(test_increment_identities(&cfg).is_err());
        let cfg = IncrementConfig::new(KernelParams::new(1.0, 1.0).unwrap(), SigmaSpec::dirac(0.5), 20, 0);
        let report = test_increment_identities(&cfg).unwrap();
        assert_eq!(report.verdict, super::super::Verdict::Pass, "{}", report.to_json());
    }

    #[test]
    fn small_kernel_exactness_run() {
        let cfg = KernelExactnessConfig::new(KernelParams::new(1.0, 1.0).unwrap(), 10, 20_000, 4);
        let report = test_kernel_exactness(&cfg, Execution::Sequential).unwrap();
        assert_eq!(report.statistic("unmatched simulated outcomes").unwrap().estimate, 0.0);
        assert!(report.statistic("max |total - 1|").unwrap().estimate <= 1e-12);
    }

    #[test]
    fn mk_check_small() {
        let report = check_mk(&MkConfig::new(1.0, 2, 5, 7)).unwrap();
        assert_eq!(report.statistics.len(), 4);
        assert_eq!(report.verdict, super::super::Verdict::Pass, "{}", report.to_json());
    }
}

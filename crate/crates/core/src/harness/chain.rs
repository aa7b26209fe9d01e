//! Experiments along chain trajectories started from the unit state.

use serde::{Deserialize, Serialize};

use super::{positive, Check, ExperimentReport, HarnessError, ReplicaRow, Statistic};
use crate::exec::{map_indexed, stream, Execution};
use crate::kernel::{step_in_place, KernelParams, StepOutcome};
use crate::partition::Partition;
use crate::sigma::{classify, RecurrenceClass, SigmaSpec, SupportClass};
use crate::stats::{median, ExactSum, Moments};

/// Functionals whose running values are maintained step by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainFunctional {
    /// `|p|_2^2`.
    Norm2Sq,
    /// `Z_j` for `j >= 2`.
    Z { j: u32 },
    /// Number of parts `X_0`.
    PartCount,
    /// Smallest part `q(n)`.
    MinPart,
}

impl ChainFunctional {
    pub fn label(&self) -> String {
        match self {
            ChainFunctional::Norm2Sq => "|p|_2^2".to_string(),
            ChainFunctional::Z { j } => format!("Z_{j}"),
            ChainFunctional::PartCount => "X_0".to_string(),
            ChainFunctional::MinPart => "q".to_string(),
        }
    }
}

/// Recompute incrementally tracked moments from scratch this often.
const RESYNC_EVERY: u64 = 1 << 16;

/// A chain state with running power sums.
struct Walker {
    p: Partition,
    mass: f64,
    powers: Vec<u32>,
    sums: Vec<f64>,
}

impl Walker {
    fn new(powers: Vec<u32>) -> Self {
        let p = Partition::unit();
        let sums = vec![1.0; powers.len()];
        Walker { p, mass: 1.0, powers, sums }
    }

    fn advance(&mut self, params: &KernelParams, sigma: &SigmaSpec, rng: &mut rand_chacha::ChaCha8Rng) -> StepOutcome {
        let outcome = step_in_place(&mut self.p, self.mass, params, sigma, rng);
        for (s, &j) in self.sums.iter_mut().zip(&self.powers) {
            let j = j as i32;
            match outcome {
                StepOutcome::Stay => {}
                StepOutcome::Merge { a, b } => *s += (a + b).powi(j) - a.powi(j) - b.powi(j),
                StepOutcome::Split { x, u } => *s += (u * x).powi(j) + ((1.0 - u) * x).powi(j) - x.powi(j),
            }
        }
        outcome
    }

    fn resync(&mut self) {
        for (s, &j) in self.sums.iter_mut().zip(&self.powers) {
            *s = self.p.parts().iter().map(|x| x.powi(j as i32)).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub steps: u64,
    pub burn_in: u64,
    pub replicas: usize,
    pub seed: u64,
    pub functionals: Vec<ChainFunctional>,
    /// Absolute tolerance for the stationary `|p|_2^2` average.
    pub tolerance: f64,
}

impl CesaroConfig {
    pub fn new(params: KernelParams, sigma: SigmaSpec, steps: u64, replicas: usize, seed: u64) -> Self {
        CesaroConfig {
            params,
            sigma,
            steps,
            burn_in: steps / 10,
            replicas,
            seed,
            functionals: vec![ChainFunctional::Norm2Sq, ChainFunctional::PartCount],
            tolerance: 0.01,
        }
    }
}

/// Outcome of one replica of the averaging experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct CesaroReplica {
    averages: Vec<f64>,
    /// Steps at which `(bm + bs) S_n - n bm + M_n` was negative, in exact arithmetic.
    bound_violations: u64,
    /// Steps at which that sum differed from `X_0(n) - 1`.
    identity_mismatches: u64,
    /// Steps at which `S_n / n < bm / (bm + bs) - 10 / n`.
    slack_violations: u64,
    first_slack_violation: Option<u64>,
    checkpoint_averages: Vec<f64>,
    /// `M_n / (n (bm + bs))` at each checkpoint.
    checkpoint_corrections: Vec<f64>,
    final_parts: usize,
}

fn checkpoints(steps: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (1..=12).map(|e| 10u64.pow(e)).take_while(|&n| n < steps).collect();
    out.push(steps);
    out
}

fn cesaro_replica(cfg: &CesaroConfig, replica: usize) -> CesaroReplica {
    let mut rng = stream(cfg.seed, replica as u64);
    let (bm, bs) = (cfg.params.beta_m, cfg.params.beta_s);
    let c = bm + bs;
    let floor = bm / c;

    let mut powers = vec![2];
    for f in &cfg.functionals {
        if let ChainFunctional::Z { j } = f {
            powers.push(*j);
        }
    }
    let mut walker = Walker::new(powers);
    let marks = checkpoints(cfg.steps);
    let mut next_mark = 0;

    // S_n sums |p_k|_2^2 and M_n sums xi_k - Delta_0(p_k), where xi_k is the
    // change in the part count X_0 and Delta_0 = -bm + (bm + bs)|p|_2^2 its
    // conditional mean. Telescoping gives (bm + bs) S_n - n bm + M_n = X_0(n) - 1.
    let mut s_exact = ExactSum::new();
    let mut martingale = ExactSum::new();
    let mut sums: Vec<ExactSum> = vec![ExactSum::new(); cfg.functionals.len()];

    let mut out = CesaroReplica {
        averages: Vec::new(),
        bound_violations: 0,
        identity_mismatches: 0,
        slack_violations: 0,
        first_slack_violation: None,
        checkpoint_averages: Vec::new(),
        checkpoint_corrections: Vec::new(),
        final_parts: 0,
    };

    for k in 0..cfg.steps {
        let z2 = walker.sums[0];
        if k >= cfg.burn_in {
            let mut z_index = 0;
            for (acc, f) in sums.iter_mut().zip(&cfg.functionals) {
                let value = match f {
                    ChainFunctional::Norm2Sq => z2,
                    ChainFunctional::Z { .. } => {
                        z_index += 1;
                        walker.sums[z_index]
                    }
                    ChainFunctional::PartCount => walker.p.len() as f64,
                    ChainFunctional::MinPart => walker.p.smallest(),
                };
                acc.add(value);
            }
        }
        s_exact.add(z2);

        let xi = match walker.advance(&cfg.params, &cfg.sigma, &mut rng) {
            StepOutcome::Stay => 0.0,
            StepOutcome::Merge { .. } => -1.0,
            StepOutcome::Split { .. } => 1.0,
        };
        martingale.add(xi);
        martingale.add(bm);
        martingale.add_product(-c, z2);

        let n = k + 1;
        let mut bound = ExactSum::new();
        bound.add_scaled(c, &s_exact);
        bound.add_product(-(n as f64), bm);
        bound.add_scaled(1.0, &martingale);
        if bound.sign() < 0 {
            out.bound_violations += 1;
        }
        if bound.value() != (walker.p.len() - 1) as f64 {
            out.identity_mismatches += 1;
        }

        let average = s_exact.value() / n as f64;
        if average < floor - 10.0 / n as f64 {
            out.slack_violations += 1;
            out.first_slack_violation.get_or_insert(n);
        }
        if next_mark < marks.len() && n == marks[next_mark] {
            out.checkpoint_averages.push(average);
            out.checkpoint_corrections.push(martingale.value() / (n as f64 * c));
            next_mark += 1;
        }
        if n % RESYNC_EVERY == 0 {
            walker.resync();
        }
    }
    let kept = (cfg.steps - cfg.burn_in) as f64;
    out.averages = sums.iter().map(|s| s.value() / kept).collect();
    out.final_parts = walker.p.len();
    out
}

/// Cesaro averages of chain functionals from the unit state, with an exact
/// pathwise check of the telescoped lower bound on the `|p|_2^2` average.
pub fn run_cesaro(cfg: &CesaroConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("steps", cfg.steps)?;
    positive("replicas", cfg.replicas as u64)?;
    if cfg.burn_in >= cfg.steps {
        return Err(HarnessError::InvalidBudget("burn_in must be below steps".into()));
    }
    cfg.sigma.validate().map_err(|e| HarnessError::InvalidBudget(e.to_string()))?;
    let replicas = map_indexed(execution, cfg.replicas, |r| cesaro_replica(cfg, r));

    let (bm, bs) = (cfg.params.beta_m, cfg.params.beta_s);
    let floor = bm / (bm + bs);
    let mut stats = Vec::new();
    for (i, f) in cfg.functionals.iter().enumerate() {
        let m: Moments = replicas.iter().map(|r| r.averages[i]).collect();
        let name = format!("cesaro {}", f.label());
        stats.push(match f {
            ChainFunctional::Norm2Sq => Statistic::from_moments(
                name,
                &m,
                Some((floor, "beta_m / (beta_m + beta_s)")),
                Check::WithinAbs { tolerance: cfg.tolerance },
            ),
            _ => Statistic::from_moments(name, &m, None, Check::Diagnostic),
        });
    }
    let violations: u64 = replicas.iter().map(|r| r.bound_violations).sum();
    stats.push(Statistic::new(
        "telescoped bound violations",
        violations as f64,
        0.0,
        Some((0.0, "exact")),
        Check::AtMost,
    ));
    let mismatches: u64 = replicas.iter().map(|r| r.identity_mismatches).sum();
    stats.push(Statistic::new(
        "telescoped identity mismatches",
        mismatches as f64,
        0.0,
        Some((0.0, "exact")),
        Check::AtMost,
    ));
    let marks = checkpoints(cfg.steps);
    for (j, n) in marks.iter().enumerate() {
        let m: Moments = replicas.iter().map(|r| r.checkpoint_averages[j]).collect();
        stats.push(Statistic::from_moments(
            format!("mean running |p|_2^2 average at n={n}"),
            &m,
            Some((floor, "beta_m / (beta_m + beta_s)")),
            Check::NotBelowSe { k: super::VERDICT_SE },
        ));
    }
    let last = marks.len() - 1;
    let m: Moments = replicas.iter().map(|r| r.checkpoint_corrections[last]).collect();
    stats.push(Statistic::from_moments(
        "mean M_n / (n (beta_m + beta_s))",
        &m,
        Some((0.0, "martingale")),
        Check::WithinSe { k: super::VERDICT_SE },
    ));
    let slack: u64 = replicas.iter().map(|r| r.slack_violations).sum();
    stats.push(Statistic::diagnostic("steps below floor - 10/n", slack as f64, 0.0));

    let rows = replicas
        .iter()
        .enumerate()
        .map(|(r, rep)| ReplicaRow {
            replica: r as u64,
            seed: cfg.seed,
            estimate: rep.averages.first().copied().unwrap_or(f64::NAN),
            steps: cfg.steps,
        })
        .collect();
    let mut report = ExperimentReport::new("cesaro", cfg.seed, cfg.replicas, cfg, stats)
        .with_detail("checkpoints", &marks)
        .with_detail(
            "first_slack_violation",
            replicas.iter().map(|r| r.first_slack_violation).collect::<Vec<_>>(),
        )
        .with_detail("final_parts", replicas.iter().map(|r| r.final_parts).collect::<Vec<_>>());
    report.rows = rows;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub max_steps: u64,
    pub replicas: usize,
    pub seed: u64,
    /// The leading fraction of replicas used for the stability comparison.
    pub prefix_fraction: f64,
}

impl HittingConfig {
    pub fn new(params: KernelParams, sigma: SigmaSpec, max_steps: u64, replicas: usize, seed: u64) -> Self {
        HittingConfig { params, sigma, max_steps, replicas, seed, prefix_fraction: 0.1 }
    }
}

/// First return time to the unit state, or `None` when censored.
fn return_time(cfg: &HittingConfig, replica: usize) -> Option<u64> {
    let mut rng = stream(cfg.seed, replica as u64);
    let mut p = Partition::unit();
    for n in 1..=cfg.max_steps {
        step_in_place(&mut p, 1.0, &cfg.params, &cfg.sigma, &mut rng);
        // The unit state is the only one-part state of mass one.
        if p.len() == 1 && p.is_unit() {
            return Some(n);
        }
    }
    None
}

/// Return times to the unit state over independent replicas.
pub fn estimate_hitting_time(cfg: &HittingConfig, execution: Execution) -> Result<ExperimentReport, HarnessError> {
    positive("max_steps", cfg.max_steps)?;
    positive("replicas", cfg.replicas as u64)?;
    let times = map_indexed(execution, cfg.replicas, |r| return_time(cfg, r));
    let censored = times.iter().filter(|t| t.is_none()).count();
    let censored_fraction = censored as f64 / cfg.replicas as f64;
    let all: Moments = times.iter().flatten().map(|&t| t as f64).collect();
    let prefix_len = ((cfg.replicas as f64 * cfg.prefix_fraction).round() as usize).clamp(1, cfg.replicas);
    let prefix: Moments = times[..prefix_len].iter().flatten().map(|&t| t as f64).collect();
    let min_time = times.iter().flatten().min().copied();

    let recurrent = cfg.sigma.is_atomic() || classify(&cfg.sigma).recurrence_class == RecurrenceClass::PositiveRecurrent;
    let mut stats = vec![
        if recurrent {
            Statistic::new("censored fraction", censored_fraction, 0.0, Some((0.01, "budget")), Check::Below)
        } else {
            Statistic::diagnostic("censored fraction", censored_fraction, 0.0)
        },
        Statistic::from_moments("mean return time", &all, None, Check::Diagnostic),
        Statistic::from_moments(format!("mean return time, first {prefix_len} replicas"), &prefix, None, Check::Diagnostic),
    ];
    if recurrent {
        stats.push(Statistic::new(
            "prefix minus full mean",
            prefix.mean - all.mean,
            prefix.std_error(),
            Some((0.0, "stability")),
            Check::WithinSe { k: 2.0 },
        ));
    }
    if let Some(t) = min_time {
        if cfg.params.beta_s == 1.0 {
            stats.push(Statistic::new("shortest return", t as f64, 0.0, Some((2.0, "forced split")), Check::AtLeast));
        } else {
            stats.push(Statistic::diagnostic("shortest return", t as f64, 0.0));
        }
    }
    let rows = times
        .iter()
        .enumerate()
        .map(|(r, t)| ReplicaRow {
            replica: r as u64,
            seed: cfg.seed,
            estimate: t.map_or(f64::NAN, |t| t as f64),
            steps: t.unwrap_or(cfg.max_steps),
        })
        .collect();
    let mut report = ExperimentReport::new("hitting", cfg.seed, cfg.replicas, cfg, stats)
        .with_detail("censored", censored)
        .with_detail("prefix_replicas", prefix_len);
    report.rows = rows;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportConfig {
    pub params: KernelParams,
    pub sigma: SigmaSpec,
    pub steps: u64,
    pub seed: u64,
    /// Window ends; each window covers `(n/2, n]`.
    pub checkpoints: Vec<u64>,
}

impl SupportConfig {
    pub fn new(params: KernelParams, sigma: SigmaSpec, steps: u64, seed: u64) -> Self {
        let checkpoints = [1_000, 10_000, 100_000].into_iter().filter(|&n| n <= steps).collect();
        SupportConfig { params, sigma, steps, seed, checkpoints }
    }
}

/// Part counts and smallest parts along one long trajectory.
pub fn diagnose_support(cfg: &SupportConfig) -> Result<ExperimentReport, HarnessError> {
    positive("steps", cfg.steps)?;
    let mut rng = stream(cfg.seed, 0);
    let mut p = Partition::unit();
    let mut counts = Vec::with_capacity(cfg.steps as usize);
    let mut longest_run = 0u64;
    let mut run = 0u64;
    let mut last_min = p.smallest();
    for _ in 0..cfg.steps {
        step_in_place(&mut p, 1.0, &cfg.params, &cfg.sigma, &mut rng);
        counts.push(p.len() as f64);
        let q = p.smallest();
        if q <= last_min {
            run += 1;
            longest_run = longest_run.max(run);
        } else {
            run = 0;
        }
        last_min = q;
    }
    let medians: Vec<f64> = cfg
        .checkpoints
        .iter()
        .map(|&n| median(&counts[(n / 2) as usize..n as usize]))
        .collect();

    let class = classify(&cfg.sigma);
    let mut stats: Vec<Statistic> = cfg
        .checkpoints
        .iter()
        .zip(&medians)
        .map(|(n, m)| Statistic::diagnostic(format!("median X_0 over ({}, {n}]", n / 2), *m, 0.0))
        .collect();
    if medians.len() >= 2 {
        let (first, last) = (medians[0], medians[medians.len() - 1]);
        let previous = medians[medians.len() - 2];
        match class.support_class {
            SupportClass::Finite => stats.push(Statistic::new(
                "median X_0 drift over last window",
                last - previous,
                0.0,
                Some((0.0, "tightness")),
                Check::WithinAbs { tolerance: 2.0 },
            )),
            SupportClass::Infinite => stats.push(Statistic::new(
                "median X_0 growth",
                last - first,
                0.0,
                Some((0.0, "infinite support")),
                Check::Above,
            )),
            SupportClass::Undetermined => stats.push(Statistic::diagnostic("median X_0 growth", last - first, 0.0)),
        }
    }
    stats.push(Statistic::diagnostic("longest nonincreasing run of q", longest_run as f64, 0.0));
    Ok(ExperimentReport::new("support", cfg.seed, 1, cfg, stats)
        .with_detail("classification", class)
        .with_detail("final_parts", p.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(bm: f64, bs: f64) -> KernelParams {
        KernelParams::new(bm, bs).unwrap()
    }

    #[test]
    fn short_cesaro_run_is_consistent() {
        let mut cfg = CesaroConfig::new(rates(1.0, 1.0), SigmaSpec::Uniform, 20_000, 4, 3);
        cfg.functionals.push(ChainFunctional::Z { j: 3 });
        cfg.functionals.push(ChainFunctional::MinPart);
        let report = run_cesaro(&cfg, Execution::Sequential).unwrap();
        assert_eq!(report.statistic("telescoped bound violations").unwrap().estimate, 0.0);
        assert_eq!(report.statistic("telescoped identity mismatches").unwrap().estimate, 0.0);
        assert_eq!(report.rows.len(), 4);
        let z3 = report.statistic("cesaro Z_3").unwrap().estimate;
        let z2 = report.statistic("cesaro |p|_2^2").unwrap().estimate;
        assert!(z3 > 0.0 && z3 < z2);
    }

    #[test]
    fn walker_sums_match_recomputation() {
        let mut rng = stream(5, 0);
        let mut w = Walker::new(vec![2, 3]);
        for _ in 0..50_000 {
            w.advance(&rates(0.5, 1.0), &SigmaSpec::Uniform, &mut rng);
        }
        let tracked = w.sums.clone();
        w.resync();
        for (a, b) in tracked.iter().zip(&w.sums) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoints_end_at_steps() {
        assert_eq!(checkpoints(1_000_000), vec![10, 100, 1_000, 10_000, 100_000, 1_000_000]);
        assert_eq!(checkpoints(500), vec![10, 100, 500]);
    }

    #[test]
    fn hitting_time_from_unit_is_at_least_two() {
        let cfg = HittingConfig::new(rates(1.0, 1.0), SigmaSpec::dirac(0.5), 10_000, 500, 1);
        let report = estimate_hitting_time(&cfg, Execution::Sequential).unwrap();
        assert!(report.statistic("shortest return").unwrap().estimate >= 2.0);
        assert_eq!(report.rows.len(), 500);
    }

    #[test]
    fn budgets_are_checked() {
        let mut cfg = CesaroConfig::new(rates(1.0, 1.0), SigmaSpec::Uniform, 100, 1, 0);
        cfg.burn_in = 100;
        assert!(run_cesaro(&cfg, Execution::Sequential).is_err());
        let cfg = HittingConfig::new(rates(1.0, 1.0), SigmaSpec::Uniform, 0, 1, 0);
        assert!(estimate_hitting_time(&cfg, Execution::Sequential).is_err());
    }
}

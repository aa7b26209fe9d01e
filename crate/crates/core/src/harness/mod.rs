//! Seeded, replicated experiments with machine-readable verdicts.
//!
//! Every statistic is judged by its own [`Check`]. Standard errors always
//! come from independent replicas or independent samples, never from one
//! autocorrelated trajectory.

mod chain;
mod sampling;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelError;
use crate::partition::PartitionError;
use crate::pd::PdError;
use crate::stats::Moments;

pub use chain::{
    diagnose_support, estimate_hitting_time, run_cesaro, CesaroConfig, ChainFunctional, HittingConfig, SupportConfig,
};
pub use sampling::{
    check_mk, compare_samplers, test_increment_identities, test_invariance_onestep, test_kernel_exactness, test_moment_identity,
    test_reversibility, test_size_biased_uniform, IncrementConfig, InvarianceConfig, KernelExactnessConfig, MkConfig, MomentConfig, OneStep,
    PdSampler, rates_for_theta, ReversibilityConfig, SamplerComparisonConfig, SizeBiasedConfig,
};

pub const SCHEMA: &str = "v1";
/// Samples per independent random stream in sample-based experiments.
pub const SAMPLE_BLOCK: usize = 1024;
/// Default verdict width in standard errors.
pub const VERDICT_SE: f64 = 4.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Pd(#[from] PdError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("Poisson-Dirichlet theta {pd} does not match beta_s / beta_m = {kernel}")]
    ThetaMismatch { pd: f64, kernel: f64 },
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// A negative control that did not show the expected departure.
    Inconclusive,
}

/// How a statistic is judged against its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Check {
    /// `|estimate - target| <= k SE`.
    WithinSe { k: f64 },
    /// `|estimate - target| <= tolerance`.
    WithinAbs { tolerance: f64 },
    /// `estimate + k SE >= target`.
    NotBelowSe { k: f64 },
    /// `estimate <= target`.
    AtMost,
    /// `estimate < target`.
    Below,
    /// `estimate >= target`.
    AtLeast,
    /// `estimate > target`.
    Above,
    /// Negative control: `|estimate - target| > k SE` is expected.
    Departs { k: f64 },
    /// Reported only.
    Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub target: Option<f64>,
    /// Where the target comes from, e.g. "closed form" or "quadrature".
    pub target_source: Option<String>,
    pub check: Check,
    pub outcome: Verdict,
}

impl Statistic {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        std_error: f64,
        target: Option<(f64, &str)>,
        check: Check,
    ) -> Self {
        let outcome = judge(estimate, std_error, target.map(|t| t.0), check);
        Statistic {
            name: name.into(),
            estimate,
            std_error,
            target: target.map(|t| t.0),
            target_source: target.map(|t| t.1.to_string()),
            check,
            outcome,
        }
    }

    pub fn from_moments(name: impl Into<String>, m: &Moments, target: Option<(f64, &str)>, check: Check) -> Self {
        Statistic::new(name, m.mean, m.std_error(), target, check)
    }

    pub fn diagnostic(name: impl Into<String>, estimate: f64, std_error: f64) -> Self {
        Statistic::new(name, estimate, std_error, None, Check::Diagnostic)
    }
}

fn judge(estimate: f64, se: f64, target: Option<f64>, check: Check) -> Verdict {
    let Some(target) = target else {
        return Verdict::Pass;
    };
    let pass = |ok: bool| if ok { Verdict::Pass } else { Verdict::Fail };
    let gap = (estimate - target).abs();
    match check {
        Check::WithinSe { k } => pass(gap <= k * se),
        Check::WithinAbs { tolerance } => pass(gap <= tolerance),
        Check::NotBelowSe { k } => pass(estimate + k * se >= target),
        Check::AtMost => pass(estimate <= target),
        Check::Below => pass(estimate < target),
        Check::AtLeast => pass(estimate >= target),
        Check::Above => pass(estimate > target),
        Check::Departs { k } => {
            if gap > k * se {
                Verdict::Pass
            } else {
                Verdict::Inconclusive
            }
        }
        Check::Diagnostic => Verdict::Pass,
    }
}

/// One CSV row per replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub replica: u64,
    pub seed: u64,
    pub estimate: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema: &'static str,
    pub name: String,
    pub seed: u64,
    pub replicas: usize,
    pub config: serde_json::Value,
    pub statistics: Vec<Statistic>,
    pub details: BTreeMap<String, serde_json::Value>,
    pub verdict: Verdict,
    /// Per-replica rows, written separately as CSV.
    #[serde(skip)]
    pub rows: Vec<ReplicaRow>,
    /// Excluded from JSON so that reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl ExperimentReport {
    pub fn new<C: Serialize>(name: &str, seed: u64, replicas: usize, config: &C, statistics: Vec<Statistic>) -> Self {
        let verdict = aggregate(&statistics);
        ExperimentReport {
            schema: SCHEMA,
            name: name.to_string(),
            seed,
            replicas,
            config: serde_json::to_value(config).expect("configs serialize"),
            statistics,
            details: BTreeMap::new(),
            verdict,
            rows: Vec::new(),
            wall_clock: Duration::ZERO,
        }
    }

    pub fn with_detail(mut self, key: &str, value: impl Serialize) -> Self {
        self.details.insert(key.to_string(), serde_json::to_value(value).expect("details serialize"));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn statistic(&self, name: &str) -> Option<&Statistic> {
        self.statistics.iter().find(|s| s.name == name)
    }
}

fn aggregate(statistics: &[Statistic]) -> Verdict {
    if statistics.iter().any(|s| s.outcome == Verdict::Fail) {
        Verdict::Fail
    } else if statistics.iter().any(|s| s.outcome == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

pub(crate) fn positive(name: &str, value: u64) -> Result<(), HarnessError> {
    if value == 0 {
        Err(HarnessError::InvalidBudget(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks() {
        assert_eq!(judge(1.0, 0.1, Some(1.3), Check::WithinSe { k: 4.0 }), Verdict::Pass);
        assert_eq!(judge(1.0, 0.1, Some(1.5), Check::WithinSe { k: 4.0 }), Verdict::Fail);
        assert_eq!(judge(0.0, 0.0, Some(0.0), Check::Below), Verdict::Fail);
        assert_eq!(judge(0.0, 0.1, Some(0.1), Check::Departs { k: 4.0 }), Verdict::Inconclusive);
        assert_eq!(judge(1.0, 0.1, Some(0.1), Check::Departs { k: 4.0 }), Verdict::Pass);
        assert_eq!(judge(0.45, 0.01, Some(0.5), Check::NotBelowSe { k: 4.0 }), Verdict::Fail);
    }

    #[test]
    fn aggregate_verdicts() {
        let pass = Statistic::diagnostic("a", 1.0, 0.0);
        let fail = Statistic::new("b", 1.0, 0.0, Some((0.0, "x")), Check::AtMost);
        let inc = Statistic::new("c", 0.0, 1.0, Some((0.0, "x")), Check::Departs { k: 4.0 });
        assert_eq!(aggregate(&[pass.clone()]), Verdict::Pass);
        assert_eq!(aggregate(&[pass.clone(), inc.clone()]), Verdict::Inconclusive);
        assert_eq!(aggregate(&[inc, fail]), Verdict::Fail);
    }

    #[test]
    fn report_json_skips_timing() {
        let mut r = ExperimentReport::new("demo", 1, 2, &serde_json::json!({"a": 1}), vec![]);
        r.wall_clock = Duration::from_secs(3);
        let json = r.to_json();
        assert!(json.contains("\"schema\": \"v1\""));
        assert!(!json.contains("wall"));
    }
}

//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use coagfrag_core::exec::with_workers;
use coagfrag_core::harness::{
    check_mk, compare_samplers, estimate_hitting_time, run_cesaro, test_increment_identities, test_invariance_onestep,
    test_kernel_exactness, test_moment_identity, test_reversibility, test_size_biased_uniform, CesaroConfig,
    HittingConfig, IncrementConfig, InvarianceConfig, KernelExactnessConfig, MkConfig, MomentConfig,
    ReversibilityConfig, SamplerComparisonConfig, SizeBiasedConfig,
};
use coagfrag_core::quadrature::ExtendedReal;
use coagfrag_core::{
    classify, Execution, ExperimentReport, KernelParams, RecurrenceClass, SigmaSpec, SupportClass, Verdict,
};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_reports(reports: &[ExperimentReport]) -> Outcome {
    let pass = reports.iter().all(|r| r.verdict == Verdict::Pass);
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.statistics.iter().filter(|s| s.outcome != Verdict::Pass))
        .map(|s| format!("{} = {:.3e} (SE {:.1e}, target {:?})", s.name, s.estimate, s.std_error, s.target))
        .collect();
    let worst_z = reports
        .iter()
        .flat_map(|r| &r.statistics)
        .filter(|s| s.std_error > 0.0 && s.target.is_some())
        .map(|s| (s.estimate - s.target.unwrap()).abs() / s.std_error)
        .fold(0.0, f64::max);
    let detail = if failing.is_empty() {
        format!("{} reports, worst |estimate - target| / SE = {worst_z:.2}", reports.len())
    } else {
        failing.join("; ")
    };
    Outcome { pass, detail }
}

fn rates(bm: f64, bs: f64) -> KernelParams {
    KernelParams::new(bm, bs).expect("valid rates")
}

fn kernel_exactness() -> Outcome {
    let cfg = KernelExactnessConfig::new(rates(1.0, 1.0), 100, 100_000, SEED);
    let r = test_kernel_exactness(&cfg, Execution::Parallel).expect("runs");
    let mut o = from_reports(std::slice::from_ref(&r));
    o.detail = format!(
        "{}; max |total - 1| = {:.1e}, {} outcomes, largest |z| = {:.2}",
        o.detail,
        r.statistic("max |total - 1|").unwrap().estimate,
        r.statistic("outcomes compared").unwrap().estimate,
        r.statistic("largest |z|").unwrap().estimate,
    );
    o
}

fn increments() -> Outcome {
    let cfg = IncrementConfig::new(rates(1.0, 1.0), SigmaSpec::dirac(0.5), 100, SEED);
    let r = test_increment_identities(&cfg).expect("runs");
    let worst = r.statistics.iter().map(|s| s.estimate).fold(0.0, f64::max);
    let mut o = from_reports(&[r]);
    o.detail = format!("{}; worst gap {worst:.1e}", o.detail);
    o
}

fn cesaro_configs() -> Vec<CesaroConfig> {
    [(1.0, 1.0), (0.5, 1.0)]
        .into_iter()
        .map(|(bm, bs)| CesaroConfig::new(rates(bm, bs), SigmaSpec::Uniform, 1_000_000, 16, SEED))
        .collect()
}

fn cesaro_half(reports: &[ExperimentReport]) -> Outcome {
    let stats: Vec<_> = reports.iter().map(|r| r.statistic("cesaro |p|_2^2").unwrap().clone()).collect();
    Outcome {
        pass: stats.iter().all(|s| s.outcome == Verdict::Pass),
        detail: stats
            .iter()
            .map(|s| format!("{:.5} (SE {:.1e}) vs {:.4}", s.estimate, s.std_error, s.target.unwrap()))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn cesaro_bound(reports: &[ExperimentReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reports {
        for s in &r.statistics {
            let relevant = s.name.starts_with("telescoped")
                || s.name.starts_with("mean running")
                || s.name.starts_with("mean M_n");
            if relevant && s.outcome != Verdict::Pass {
                pass = false;
                parts.push(format!("{} = {:.3e}", s.name, s.estimate));
            }
        }
        let literal = r.statistic("steps below floor - 10/n").unwrap().estimate;
        let replicas = r.details["first_slack_violation"].as_array().unwrap();
        let hit = replicas.iter().filter(|v| !v.is_null()).count();
        parts.push(format!(
            "exact pathwise bound: {} violations; literal floor - 10/n form: {hit}/{} replicas, {literal} steps",
            r.statistic("telescoped bound violations").unwrap().estimate,
            replicas.len(),
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn invariance() -> Outcome {
    let reports: Vec<_> = [0.5, 1.0, 2.0]
        .into_iter()
        .map(|theta| {
            let cfg = InvarianceConfig::new(theta, SigmaSpec::Uniform, 100_000, SEED).unwrap();
            test_invariance_onestep(&cfg, Execution::Parallel).expect("runs")
        })
        .collect();
    from_reports(&reports)
}

fn reversibility() -> Outcome {
    let reports: Vec<_> = [0.5, 1.0, 2.0]
        .into_iter()
        .map(|theta| {
            let cfg = ReversibilityConfig::new(theta, 100_000, SEED).unwrap();
            test_reversibility(&cfg, Execution::Parallel).expect("runs")
        })
        .collect();
    from_reports(&reports)
}

fn size_biased() -> Outcome {
    let cfg = SizeBiasedConfig::new(1.0, 10_000, SEED).unwrap();
    let r = test_size_biased_uniform(&cfg, Execution::Parallel).expect("runs");
    let p = r.statistic("KS p-value, size-biased part").unwrap().estimate;
    let mut o = from_reports(&[r]);
    o.detail = format!("{}; KS p = {p:.3}", o.detail);
    o
}

fn mk_identities() -> Outcome {
    let reports: Vec<_> = [0.5, 1.0, 2.0]
        .into_iter()
        .map(|theta| check_mk(&MkConfig::new(theta, 3, 20, SEED)).expect("runs"))
        .collect();
    let worst = reports.iter().flat_map(|r| &r.statistics).map(|s| s.estimate).fold(0.0, f64::max);
    let mut o = from_reports(&reports);
    o.detail = format!("{}; worst residual {worst:.1e}", o.detail);
    o
}

fn classifier() -> Outcome {
    let close = |x: ExtendedReal, want: f64| matches!(x, ExtendedReal::Finite(v) if (v - want).abs() <= 1e-6);
    let low = SigmaSpec::PowerLaw { a: 0.5 };
    let high = SigmaSpec::PowerLaw { a: 2.0 };
    let (cl, ch, cu) = (classify(&low), classify(&high), classify(&SigmaSpec::Uniform));
    let checks = [
        ("a=0.5 infinite support", cl.support_class == SupportClass::Infinite),
        ("a=0.5 transient", cl.recurrence_class == RecurrenceClass::Transient),
        ("a=2 finite support", ch.support_class == SupportClass::Finite),
        ("a=2 positive recurrent", ch.recurrence_class == RecurrenceClass::PositiveRecurrent),
        ("uniform infinite support", cu.support_class == SupportClass::Infinite),
        ("uniform unknown", cu.recurrence_class == RecurrenceClass::Unknown),
        ("a=0.5 I2 quadrature", close(low.integral_inverse_cdf_numeric(), 1.0)),
        ("a=2 I1 quadrature", close(high.integral_one_over_x_numeric(), 4.0)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() { format!("{} checks", checks.len()) } else { failed.join(", ") },
    }
}

fn hitting() -> Outcome {
    let mut cfg = HittingConfig::new(rates(1.0, 1.0), SigmaSpec::dirac(0.5), 100_000, 100_000, SEED);
    cfg.prefix_fraction = 0.1;
    let r = estimate_hitting_time(&cfg, Execution::Parallel).expect("runs");
    let censored = r.statistic("censored fraction").unwrap().estimate;
    let mean = r.statistic("mean return time").unwrap().clone();
    let mut o = from_reports(&[r]);
    o.detail = format!("{}; censored {censored:.2e}, mean {:.3} (SE {:.3})", o.detail, mean.estimate, mean.std_error);
    o
}

fn samplers() -> Outcome {
    let reports: Vec<_> = [1.0, 2.0]
        .into_iter()
        .map(|theta| {
            let cfg = SamplerComparisonConfig::new(theta, 10_000, SEED).unwrap();
            compare_samplers(&cfg, Execution::Parallel).expect("runs")
        })
        .collect();
    let ps: Vec<String> = reports
        .iter()
        .flat_map(|r| &r.statistics)
        .map(|s| format!("{:.3}", s.estimate))
        .collect();
    let mut o = from_reports(&reports);
    o.detail = format!("{}; KS p-values {}", o.detail, ps.join(", "));
    o
}

fn moments() -> Outcome {
    let cfg = MomentConfig::new(2.0, 100_000, SEED).unwrap();
    let r = test_moment_identity(&cfg, Execution::Parallel).expect("runs");
    let parts: Vec<String> = r
        .statistics
        .iter()
        .map(|s| format!("{} {:.5} vs {:.5}", s.name, s.estimate, s.target.unwrap()))
        .collect();
    let mut o = from_reports(&[r]);
    o.detail = format!("{}; {}", o.detail, parts.join(", "));
    o
}

fn determinism() -> Outcome {
    let runs = |workers: usize, execution: Execution| -> Vec<String> {
        with_workers(Some(workers), || {
            let mut out = Vec::new();
            let k = KernelExactnessConfig::new(rates(1.0, 1.0), 20, 10_000, SEED);
            out.push(test_kernel_exactness(&k, execution).unwrap().to_json());
            let c = CesaroConfig::new(rates(1.0, 1.0), SigmaSpec::Uniform, 50_000, 8, SEED);
            out.push(run_cesaro(&c, execution).unwrap().to_json());
            let i = InvarianceConfig::new(1.0, SigmaSpec::Uniform, 5_000, SEED).unwrap();
            out.push(test_invariance_onestep(&i, execution).unwrap().to_json());
            let s = SamplerComparisonConfig::new(2.0, 3_000, SEED).unwrap();
            out.push(compare_samplers(&s, execution).unwrap().to_json());
            let h = HittingConfig::new(rates(1.0, 1.0), SigmaSpec::dirac(0.5), 10_000, 2_000, SEED);
            out.push(estimate_hitting_time(&h, execution).unwrap().to_json());
            out
        })
    };
    let one = runs(1, Execution::Parallel);
    let four = runs(4, Execution::Parallel);
    let sequential = runs(1, Execution::Sequential);
    let pass = one == four && one == sequential;
    Outcome { pass, detail: format!("{} reports compared across 1 and 4 workers and sequential mode", one.len()) }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |number: u32, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = run();
        let elapsed: Duration = start.elapsed();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            failures += 1;
        }
        println!("[{tag}] criterion {number:>2} {name} ({:.1}s): {}", elapsed.as_secs_f64(), outcome.detail);
    };

    report(1, "kernel exactness", &mut kernel_exactness);
    report(2, "increment formulas", &mut increments);
    let start = Instant::now();
    let cesaro: Vec<ExperimentReport> = cesaro_configs()
        .iter()
        .map(|c| run_cesaro(c, Execution::Parallel).expect("runs"))
        .collect();
    let cesaro_time = start.elapsed();
    println!("         Cesaro runs for criteria 3 and 4 took {:.1}s", cesaro_time.as_secs_f64());
    report(3, "stationary |p|_2^2 average", &mut || cesaro_half(&cesaro));
    report(4, "telescoped lower bound", &mut || cesaro_bound(&cesaro));
    report(5, "PD invariance", &mut invariance);
    report(6, "reversibility", &mut reversibility);
    report(7, "size-biased uniformity", &mut size_biased);
    report(8, "m_k identities", &mut mk_identities);
    report(9, "classifier", &mut classifier);
    report(10, "hitting time", &mut hitting);
    report(11, "cross-sampler agreement", &mut samplers);
    report(12, "moment identity", &mut moments);
    report(13, "determinism", &mut determinism);

    if failures == 0 {
        println!("acceptance: all 13 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria fail");
        ExitCode::FAILURE
    }
}

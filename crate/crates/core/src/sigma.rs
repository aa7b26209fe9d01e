//! Splitting measures on (0, 1/2] and the recurrence/support classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{dyadic_improper, rule, ExtendedReal};

const MASS_TOL: f64 = 1e-12;
const DYADIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SigmaError {
    #[error("invalid splitting measure field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("malformed splitting measure JSON: {0}")]
    Json(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SigmaError {
    SigmaError::InvalidField { field: field.into(), reason: reason.into() }
}

/// A probability measure on (0, 1/2] governing the split fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Uniform law on (0, 1/2].
    Uniform,
    /// Density `a 2^a x^(a-1)` on (0, 1/2], CDF `(2x)^a`.
    PowerLaw { a: f64 },
    /// Finitely many `(location, weight)` atoms.
    Atomic { atoms: Vec<(f64, f64)> },
    /// Monotone piecewise-linear inverse CDF given as `(v, x)` knots from
    /// `v = 0` to `v = 1`. A flat run in `x` is an atom.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl SigmaSpec {
    /// Parses and validates a tagged JSON description.
    pub fn from_json(s: &str) -> Result<Self, SigmaError> {
        let spec: SigmaSpec = serde_json::from_str(s).map_err(|e| SigmaError::Json(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dirac(x: f64) -> Self {
        SigmaSpec::Atomic { atoms: vec![(x, 1.0)] }
    }

    pub fn validate(&self) -> Result<(), SigmaError> {
        match self {
            SigmaSpec::Uniform => Ok(()),
            SigmaSpec::PowerLaw { a } => {
                if a.is_finite() && *a > 0.0 {
                    Ok(())
                } else {
                    Err(invalid("a", format!("exponent must be positive and finite, got {a}")))
                }
            }
            SigmaSpec::Atomic { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("atoms", "at least one atom is required"));
                }
                for (i, &(x, w)) in atoms.iter().enumerate() {
                    if !(x > 0.0 && x <= 0.5) {
                        return Err(invalid(format!("atoms[{i}].location"), format!("{x} is outside (0, 1/2]")));
                    }
                    if !(w.is_finite() && w > 0.0) {
                        return Err(invalid(format!("atoms[{i}].weight"), format!("{w} is not positive")));
                    }
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(invalid("atoms", format!("weights sum to {total}, not 1")));
                }
                Ok(())
            }
            SigmaSpec::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(invalid("knots", "at least two knots are required"));
                }
                if knots[0].0 != 0.0 {
                    return Err(invalid("knots[0]", "first knot must have v = 0"));
                }
                if knots[knots.len() - 1].0 != 1.0 {
                    return Err(invalid(format!("knots[{}]", knots.len() - 1), "last knot must have v = 1"));
                }
                for (i, &(v, x)) in knots.iter().enumerate() {
                    if !(0.0..=0.5).contains(&x) {
                        return Err(invalid(format!("knots[{i}]"), format!("x = {x} is outside [0, 1/2]")));
                    }
                    if i > 0 {
                        let (pv, px) = knots[i - 1];
                        if v <= pv {
                            return Err(invalid(format!("knots[{i}]"), "v must be strictly increasing"));
                        }
                        if x < px {
                            return Err(invalid(format!("knots[{i}]"), "x must be nondecreasing"));
                        }
                        if x == 0.0 {
                            return Err(invalid(format!("knots[{i}]"), "no mass may sit at 0"));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Short filesystem-safe label.
    pub fn tag(&self) -> String {
        match self {
            SigmaSpec::Uniform => "uniform".to_string(),
            SigmaSpec::PowerLaw { a } => format!("power_law-{a}"),
            SigmaSpec::Atomic { atoms } if atoms.len() == 1 => format!("dirac-{}", atoms[0].0),
            SigmaSpec::Atomic { atoms } => format!("atomic-{}", atoms.len()),
            SigmaSpec::Tabulated { knots } => format!("tabulated-{}", knots.len()),
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, SigmaSpec::Atomic { .. })
    }

    /// `sigma((0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 0.5 {
            return 1.0;
        }
        match self {
            SigmaSpec::Uniform => 2.0 * x,
            SigmaSpec::PowerLaw { a } => (2.0 * x).powf(*a),
            SigmaSpec::Atomic { atoms } => atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
            SigmaSpec::Tabulated { knots } => tabulated_cdf(knots, x, false),
        }
    }

    /// `sigma((0, x))`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x > 0.5 {
            return 1.0;
        }
        match self {
            SigmaSpec::Atomic { atoms } => atoms.iter().filter(|a| a.0 < x).map(|a| a.1).sum(),
            SigmaSpec::Tabulated { knots } => tabulated_cdf(knots, x, true),
            _ => self.cdf(x),
        }
    }

    /// `sigma((lo, 1/2])`.
    pub fn mass_above(&self, lo: f64) -> f64 {
        1.0 - self.cdf(lo)
    }

    /// `sigma([lo, 1/2])`.
    pub fn mass_from(&self, lo: f64) -> f64 {
        1.0 - self.cdf_left(lo)
    }

    /// Inverse CDF of the continuous variants, `v` in [0, 1].
    fn quantile(&self, v: f64) -> f64 {
        match self {
            SigmaSpec::Uniform => 0.5 * v,
            SigmaSpec::PowerLaw { a } => 0.5 * v.powf(1.0 / a),
            SigmaSpec::Tabulated { knots } => {
                let k = knots.partition_point(|kn| kn.0 <= v).clamp(1, knots.len() - 1);
                let (v0, x0) = knots[k - 1];
                let (v1, x1) = knots[k];
                x0 + (x1 - x0) * (v - v0) / (v1 - v0)
            }
            SigmaSpec::Atomic { .. } => unreachable!("atomic measures are sampled by weight"),
        }
    }

    /// One draw from the measure; always in (0, 1/2].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SigmaSpec::Atomic { atoms } => {
                let target = rng.random::<f64>();
                let mut acc = 0.0;
                for &(x, w) in atoms {
                    acc += w;
                    if target < acc {
                        return x;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            _ => {
                // 1 - U lies in (0, 1], so the quantile is strictly positive.
                let v = 1.0 - rng.random::<f64>();
                self.quantile(v).clamp(f64::MIN_POSITIVE, 0.5)
            }
        }
    }

    /// `int g(u) dsigma(u)`.
    ///
    /// Atomic measures are summed exactly. Power laws with `a >= 1` have a
    /// smooth density and are integrated in `u` directly. Otherwise
    /// Gauss-Legendre with `nodes` points runs over each piece of (0, 1) in
    /// the CDF variable. Pieces are cut at `kinks` and at table knots.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F, nodes: usize, kinks: &[f64]) -> f64 {
        match self {
            SigmaSpec::Atomic { atoms } => return atoms.iter().map(|&(x, w)| w * g(x)).sum(),
            SigmaSpec::PowerLaw { a } if *a >= 1.0 => {
                let mut cuts: Vec<f64> = vec![0.0, 0.5];
                cuts.extend(kinks.iter().copied().filter(|&u| u > 0.0 && u < 0.5));
                cuts.sort_by(f64::total_cmp);
                let gl = rule(nodes);
                return cuts
                    .windows(2)
                    .map(|w| gl.integrate(|u| g(u) * self.density(u), w[0], w[1]))
                    .sum();
            }
            _ => {}
        }
        let mut cuts: Vec<f64> = vec![0.0, 1.0];
        cuts.extend(kinks.iter().filter(|&&u| u > 0.0 && u < 0.5).map(|&u| self.cdf(u)));
        if let SigmaSpec::Tabulated { knots } = self {
            cuts.extend(knots.iter().map(|k| k.0));
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let gl = rule(nodes);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += gl.integrate(|v| g(self.quantile(v)), w[0], w[1]);
        }
        total
    }

    /// `int u^k + (1-u)^k dsigma(u)`.
    pub fn split_moment(&self, k: u32) -> f64 {
        let k_i = k as i32;
        match self {
            SigmaSpec::Uniform => {
                let kf = k as f64;
                let lower = 0.5f64.powi(k_i) / (kf + 1.0);
                let upper = 2.0 * (1.0 - 0.5f64.powi(k_i + 1)) / (kf + 1.0);
                lower + upper
            }
            SigmaSpec::PowerLaw { a } => {
                // int u^m dsigma = a / ((m + a) 2^m); (1-u)^k by binomial expansion.
                let moment = |m: i32| a / ((m as f64 + a) * 2f64.powi(m));
                let mut upper = 0.0;
                let mut binom = 1.0;
                for m in 0..=k_i {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    upper += sign * binom * moment(m);
                    binom = binom * (k_i - m) as f64 / (m + 1) as f64;
                }
                moment(k_i) + upper
            }
            _ => self.expect(|u| u.powi(k_i) + (1.0 - u).powi(k_i), (k as usize / 2 + 2).max(8), &[]),
        }
    }

    /// Density with respect to Lebesgue measure of the absolutely continuous part.
    fn density(&self, x: f64) -> f64 {
        if x <= 0.0 || x > 0.5 {
            return 0.0;
        }
        match self {
            SigmaSpec::Uniform => 2.0,
            SigmaSpec::PowerLaw { a } => a * 2f64.powf(*a) * x.powf(a - 1.0),
            SigmaSpec::Atomic { .. } => 0.0,
            SigmaSpec::Tabulated { knots } => knots
                .windows(2)
                .find(|w| w[0].1 < w[1].1 && w[0].1 < x && x <= w[1].1)
                .map(|w| (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
                .unwrap_or(0.0),
        }
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            SigmaSpec::Atomic { atoms } => atoms.clone(),
            SigmaSpec::Tabulated { knots } => knots
                .windows(2)
                .filter(|w| w[0].1 == w[1].1)
                .map(|w| (w[0].1, w[1].0 - w[0].0))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Total mass by quadrature of the density plus the atoms.
    pub fn total_mass(&self) -> ExtendedReal {
        let atoms: f64 = self.atoms().iter().map(|a| a.1).sum();
        match self {
            SigmaSpec::Atomic { .. } => ExtendedReal::Finite(atoms),
            _ => match dyadic_improper(|x| self.density(x), DYADIC_TOL) {
                ExtendedReal::Finite(v) => ExtendedReal::Finite(v + atoms),
                other => other,
            },
        }
    }

    /// `int 1/x dsigma(x)` by dyadic-panel quadrature, for any variant.
    pub fn integral_one_over_x_numeric(&self) -> ExtendedReal {
        let atoms: f64 = self.atoms().iter().map(|&(x, w)| w / x).sum();
        if self.is_atomic() {
            return ExtendedReal::Finite(atoms);
        }
        match dyadic_improper(|x| self.density(x) / x, DYADIC_TOL) {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v + atoms),
            other => other,
        }
    }

    /// `int_0^{1/2} 1/sigma((0,x]) dx` by dyadic-panel quadrature, for any variant.
    pub fn integral_inverse_cdf_numeric(&self) -> ExtendedReal {
        dyadic_improper(
            |x| {
                let f = self.cdf(x);
                if f > 0.0 {
                    1.0 / f
                } else {
                    f64::INFINITY
                }
            },
            DYADIC_TOL,
        )
    }

    /// `int 1/x dsigma(x)`: closed form where one exists.
    pub fn integral_one_over_x(&self) -> ExtendedReal {
        match self {
            SigmaSpec::Uniform => ExtendedReal::Infinite,
            SigmaSpec::PowerLaw { a } if *a > 1.0 => ExtendedReal::Finite(2.0 * a / (a - 1.0)),
            SigmaSpec::PowerLaw { .. } => ExtendedReal::Infinite,
            SigmaSpec::Atomic { atoms } => ExtendedReal::Finite(atoms.iter().map(|&(x, w)| w / x).sum()),
            SigmaSpec::Tabulated { .. } => self.integral_one_over_x_numeric(),
        }
    }

    /// `int_0^{1/2} 1/sigma((0,x]) dx`: closed form where one exists.
    pub fn integral_inverse_cdf(&self) -> ExtendedReal {
        match self {
            SigmaSpec::Uniform => ExtendedReal::Infinite,
            SigmaSpec::PowerLaw { a } if *a < 1.0 => ExtendedReal::Finite(1.0 / (2.0 * (1.0 - a))),
            SigmaSpec::PowerLaw { .. } => ExtendedReal::Infinite,
            // The CDF vanishes below the smallest atom.
            SigmaSpec::Atomic { .. } => ExtendedReal::Infinite,
            SigmaSpec::Tabulated { .. } => self.integral_inverse_cdf_numeric(),
        }
    }
}

fn tabulated_cdf(knots: &[(f64, f64)], x: f64, strict: bool) -> f64 {
    let mut best: f64 = 0.0;
    for w in knots.windows(2) {
        let (v0, x0) = w[0];
        let (v1, x1) = w[1];
        let covers_end = if strict { x1 < x } else { x1 <= x };
        if covers_end {
            best = best.max(v1);
        } else if x0 < x && x1 > x0 {
            best = best.max(v0 + (v1 - v0) * (x - x0) / (x1 - x0));
        } else if (strict && x0 < x) || (!strict && x0 <= x) {
            best = best.max(v0);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportClass {
    /// Invariant measures live on finite partitions.
    Finite,
    /// Invariant measures live on infinite partitions.
    Infinite,
    /// The deciding integral could not be evaluated.
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrenceClass {
    PositiveRecurrent,
    Transient,
    Unknown,
}

/// Support and recurrence of the single-part state, decided by two integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainClassification {
    #[serde(rename = "support")]
    pub support_class: SupportClass,
    #[serde(rename = "recurrence")]
    pub recurrence_class: RecurrenceClass,
    #[serde(rename = "I1")]
    pub integral_one_over_x: ExtendedReal,
    #[serde(rename = "I2")]
    pub integral_inverse_cdf: ExtendedReal,
}

impl ChainClassification {
    /// Pure function of the two integrals. Only the two proven implications
    /// are used; everything else is `Unknown`.
    pub fn from_integrals(one_over_x: ExtendedReal, inverse_cdf: ExtendedReal) -> Self {
        let support_class = match one_over_x {
            ExtendedReal::Finite(_) => SupportClass::Finite,
            ExtendedReal::Infinite => SupportClass::Infinite,
            ExtendedReal::Unknown => SupportClass::Undetermined,
        };
        let recurrence_class = if one_over_x.is_finite() {
            RecurrenceClass::PositiveRecurrent
        } else if one_over_x == ExtendedReal::Infinite && inverse_cdf.is_finite() {
            RecurrenceClass::Transient
        } else {
            RecurrenceClass::Unknown
        };
        ChainClassification {
            support_class,
            recurrence_class,
            integral_one_over_x: one_over_x,
            integral_inverse_cdf: inverse_cdf,
        }
    }
}

pub fn classify(spec: &SigmaSpec) -> ChainClassification {
    ChainClassification::from_integrals(spec.integral_one_over_x(), spec.integral_inverse_cdf())
}

//! Poisson-Dirichlet sampling, the correlation densities `m_k`, and the
//! identities they satisfy.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::{Partition, SizeBiasedSampler, MIN_PART};
use crate::quadrature::rule;

/// Knots of the exponential-integral inverse-CDF table.
const TABLE_KNOTS: usize = 4096;
/// Upper end of the table; `E_1(60)` is below `1e-27`.
const TABLE_UPPER: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdError {
    #[error("theta must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("{name} must lie in (0, 1), got {value}")]
    InvalidCutoff { name: &'static str, value: f64 },
    #[error("point must have nonnegative coordinates summing below 1")]
    OutsideSimplex,
    #[error("order k must be at least {min}, got {k}")]
    InvalidOrder { k: usize, min: usize },
    #[error("point has {got} coordinates, expected {expected}")]
    WrongDimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    pub theta: f64,
    /// Stick-breaking stops once the unallocated mass falls below this.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Lower cutoff of the Poisson intensity.
    #[serde(rename = "eps", default = "default_poisson_eps")]
    pub poisson_eps: f64,
}

fn default_truncation() -> f64 {
    1e-8
}

fn default_poisson_eps() -> f64 {
    1e-6
}

impl PdParams {
    pub fn new(theta: f64) -> Result<Self, PdError> {
        let params = PdParams { theta, truncation: default_truncation(), poisson_eps: default_poisson_eps() };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PdError> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(PdError::InvalidTheta(self.theta));
        }
        for (name, value) in [("truncation", self.truncation), ("eps", self.poisson_eps)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(PdError::InvalidCutoff { name, value });
            }
        }
        Ok(())
    }
}

/// Residual-allocation sticks in draw order: `Y_{n+1} = B_{n+1} (1 - sum Y)`,
/// `B ~ Beta(1, theta)`. Pieces below the smallest representable part are
/// dropped.
pub fn sample_sticks<R: Rng + ?Sized>(params: &PdParams, rng: &mut R) -> Vec<f64> {
    let mut remaining = 1.0;
    let mut sticks = Vec::new();
    let inv_theta = 1.0 / params.theta;
    while remaining >= params.truncation {
        // 1 - U^(1/theta) is Beta(1, theta).
        let b = 1.0 - rng.random::<f64>().powf(inv_theta);
        let piece = b * remaining;
        if piece >= MIN_PART {
            sticks.push(piece);
        }
        remaining -= piece;
    }
    sticks
}

/// A Poisson-Dirichlet sample by stick-breaking.
pub fn sample_pd_stick<R: Rng + ?Sized>(params: &PdParams, rng: &mut R) -> Partition {
    let sticks = sample_sticks(params, rng);
    Partition::new(sticks).expect("sticks are positive and sum below one")
}

/// `E_1(x) = int_x^inf e^{-t} / t dt` by its power series; accurate for small `x`.
pub fn exp_integral_series(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -x / kf;
        let contribution = term / kf;
        sum += contribution;
        if contribution.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

/// Inverse-CDF table of the law with density proportional to `x^{-1} e^{-x}`
/// on `(eps, inf)`, tabulated in `t = ln x`.
#[derive(Debug, Clone)]
pub struct ExpIntegralTable {
    log_knots: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl ExpIntegralTable {
    pub fn new(eps: f64) -> Self {
        let (lo, hi) = (eps.ln(), TABLE_UPPER.ln());
        let step = (hi - lo) / (TABLE_KNOTS - 1) as f64;
        let log_knots: Vec<f64> = (0..TABLE_KNOTS).map(|k| lo + step * k as f64).collect();
        let gl = rule(16);
        let mut cumulative = Vec::with_capacity(TABLE_KNOTS);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in log_knots.windows(2) {
            acc += gl.integrate(|t| (-t.exp()).exp(), w[0], w[1]);
            cumulative.push(acc);
        }
        // Asymptotic tail beyond the last knot.
        let tail = (-TABLE_UPPER).exp() / TABLE_UPPER * (1.0 - 1.0 / TABLE_UPPER + 2.0 / TABLE_UPPER.powi(2));
        ExpIntegralTable { log_knots, cumulative, total: acc + tail }
    }

    /// `E_1(eps)`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let last = *self.cumulative.last().expect("table is nonempty");
        let target = rng.random::<f64>() * last;
        let k = self.cumulative.partition_point(|&c| c <= target).clamp(1, TABLE_KNOTS - 1);
        let (c0, c1) = (self.cumulative[k - 1], self.cumulative[k]);
        let (t0, t1) = (self.log_knots[k - 1], self.log_knots[k]);
        (t0 + (t1 - t0) * (target - c0) / (c1 - c0)).exp()
    }
}

/// Poisson-Dirichlet samples by normalizing a truncated Poisson process with
/// intensity `theta x^{-1} e^{-x} dx` on `(eps, inf)`.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    table: ExpIntegralTable,
    count: Poisson<f64>,
    intensity_mass: f64,
}

impl PoissonSampler {
    pub fn new(params: &PdParams) -> Result<Self, PdError> {
        params.validate()?;
        let table = ExpIntegralTable::new(params.poisson_eps);
        let intensity_mass = params.theta * table.total();
        let count = Poisson::new(intensity_mass).map_err(|_| PdError::InvalidTheta(params.theta))?;
        Ok(PoissonSampler { table, count, intensity_mass })
    }

    /// `V_theta^eps = theta E_1(eps)`.
    pub fn intensity_mass(&self) -> f64 {
        self.intensity_mass
    }

    /// One sample. An empty point configuration is redrawn.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Partition {
        loop {
            let n = self.count.sample(rng) as usize;
            if n == 0 {
                continue;
            }
            let points: Vec<f64> = (0..n).map(|_| self.table.sample(rng)).collect();
            let total: f64 = points.iter().sum();
            return Partition::new(points.into_iter().map(|x| x / total).collect())
                .expect("normalized points form a partition");
        }
    }
}

/// A Poisson-Dirichlet sample from the truncated Poisson construction.
pub fn sample_pd_poisson<R: Rng + ?Sized>(params: &PdParams, rng: &mut R) -> Result<Partition, PdError> {
    Ok(PoissonSampler::new(params)?.sample(rng))
}

/// `m_k(x) = theta^k (1 - |x|)^{theta - 1}`.
pub fn density_mk(theta: f64, x: &[f64]) -> Result<f64, PdError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(PdError::InvalidTheta(theta));
    }
    let sum: f64 = x.iter().sum();
    if x.iter().any(|&v| !(v >= 0.0)) || sum >= 1.0 {
        return Err(PdError::OutsideSimplex);
    }
    Ok(theta.powi(x.len() as i32) * (1.0 - sum).powf(theta - 1.0))
}

/// `k` size-biased parts drawn with replacement; `None` when an index repeats.
pub fn sample_size_biased_k<R: Rng + ?Sized>(p: &Partition, k: usize, rng: &mut R) -> Option<Vec<f64>> {
    let sampler = SizeBiasedSampler::new(p);
    let mut indices: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let i = sampler.sample(rng);
        if indices.contains(&i) {
            return None;
        }
        indices.push(i);
    }
    Some(indices.into_iter().map(|i| p.parts()[i]).collect())
}

/// `int_a^b f(t) dt` for `f` behaving like `(c - t)^{theta - 1}` with `c >= b`.
///
/// For `theta < 1` the substitution `t = c - z^{1/theta}` removes the
/// endpoint singularity.
fn integrate_toward<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, c: f64, theta: f64, nodes: usize) -> f64 {
    let gl = rule(nodes);
    if theta >= 1.0 {
        return gl.integrate(f, a, b);
    }
    let inv = 1.0 / theta;
    let (z_lo, z_hi) = ((c - b).max(0.0).powf(theta), (c - a).powf(theta));
    gl.integrate(|z| f(c - z.powf(inv)) * inv * z.powf(inv - 1.0), z_lo, z_hi)
}

fn mk(theta: f64, x: &[f64]) -> f64 {
    density_mk(theta, x).unwrap_or(0.0)
}

fn check_point(theta: f64, x: &[f64], expected: usize) -> Result<(), PdError> {
    if x.len() != expected {
        return Err(PdError::WrongDimension { got: x.len(), expected });
    }
    density_mk(theta, x).map(|_| ())
}

/// `int_0^1 m_k(t, x) dt - (1 - |x|) m_{k-1}(x)` for `x` with `k - 1` coordinates.
pub fn marginalization_residual(theta: f64, k: usize, x: &[f64], nodes: usize) -> Result<f64, PdError> {
    if k == 0 {
        return Err(PdError::InvalidOrder { k, min: 1 });
    }
    check_point(theta, x, k - 1)?;
    let b = 1.0 - x.iter().sum::<f64>();
    let mut point = Vec::with_capacity(k);
    point.push(0.0);
    point.extend_from_slice(x);
    let integral = integrate_toward(
        |t| {
            point[0] = t;
            mk(theta, &point)
        },
        0.0,
        b,
        b,
        theta,
        nodes,
    );
    Ok(integral - b * mk(theta, x))
}

/// Left minus right side of the balance relation between `m_{k-1}`, `m_k` and
/// `m_{k+1}` at `x`, divided by `beta_m`.
pub fn functional_equation_residual_with_rates(
    beta_m: f64,
    beta_s: f64,
    theta: f64,
    x: &[f64],
    nodes: usize,
) -> Result<f64, PdError> {
    let k = x.len();
    if k == 0 {
        return Err(PdError::InvalidOrder { k, min: 1 });
    }
    check_point(theta, x, k)?;
    let sum: f64 = x.iter().sum();
    let without = |i: usize| -> Vec<f64> { x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect() };

    let mut frogs = 0.0;
    let mut cows = 0.0;
    let mut magrefa = 0.0;
    let mut united = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        // m_{k+1} with x_i replaced by (z, x_i - z).
        let mut wide = Vec::with_capacity(k + 1);
        wide.extend_from_slice(&x[..i]);
        wide.extend([0.0, 0.0]);
        wide.extend_from_slice(&x[i + 1..]);
        frogs += xi * rule(nodes).integrate(
            |z| {
                wide[i] = z;
                wide[i + 1] = xi - z;
                mk(theta, &wide)
            },
            0.0,
            xi,
        );

        // m_k with x_i replaced by z; singular where z reaches 1 - |x| + x_i.
        let mut point = x.to_vec();
        let edge = 1.0 - sum + xi;
        cows += xi
            * integrate_toward(
                |z| {
                    point[i] = z;
                    mk(theta, &point)
                },
                0.0,
                xi,
                edge,
                theta,
                nodes,
            );

        let rest = mk(theta, &without(i));
        magrefa += xi * rest;
        let others: f64 = sum - xi;
        united += xi * others * rest;
    }
    let m_k = mk(theta, x);
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    let left = beta_m * frogs - beta_s * cows + beta_s * magrefa - beta_s * united;
    let right = beta_m * sum * m_k + (beta_s - beta_m) * sum_sq * m_k - tracked_pair_merge_term(beta_m, theta, x);
    Ok((left - right) / beta_m)
}

/// `beta_m sum_{i != j} x_i x_j m_k(x)`: a merge of two of the tracked parts
/// removes both at once, so the per-part departure rates count it twice.
pub fn tracked_pair_merge_term(beta_m: f64, theta: f64, x: &[f64]) -> f64 {
    let sum: f64 = x.iter().sum();
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    beta_m * (sum * sum - sum_sq) * mk(theta, x)
}

/// The balance residual with `beta_m = 1`, `beta_s = theta`.
pub fn functional_equation_residual(theta: f64, x: &[f64], nodes: usize) -> Result<f64, PdError> {
    functional_equation_residual_with_rates(1.0, theta, theta, x, nodes)
}

/// `int_0^1 m_1(x) x^{j-1} dx`, the expectation of `Z_j` under PD(theta).
pub fn z_moment_by_quadrature(theta: f64, j: u32) -> f64 {
    let power = j as i32 - 1;
    let halves = |a: f64, b: f64| integrate_toward(|x| mk(theta, &[x]) * x.powi(power), a, b, 1.0, theta, 64);
    halves(0.0, 0.5) + halves(0.5, 1.0)
}

/// `mu_k` of the strictly ordered simplex: `prod_{i<k} theta / (theta + i)`.
pub fn moment_measure_mass(theta: f64, k: usize) -> f64 {
    (1..k).map(|i| theta / (theta + i as f64)).product()
}

/// A point of the open simplex with `k` distinct positive coordinates.
pub fn random_simplex_point<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let p = Partition::uniform_random(k + 1, rng);
        let mut x: Vec<f64> = p.parts()[..k].to_vec();
        if x.len() == k && x.iter().all(|&v| v > 1e-6) && x.windows(2).all(|w| w[0] != w[1]) {
            // Shuffle away the ordering so coordinates are not sorted.
            for i in (1..k).rev() {
                let j = rng.random_range(0..=i);
                x.swap(i, j);
            }
            return x;
        }
    }
}

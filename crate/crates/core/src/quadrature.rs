//! Gauss-Legendre rules, adaptive bisection, and improper integrals on (0, 1/2].

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Default node count for split integrals.
pub const DEFAULT_NODES: usize = 64;

/// An n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        self.points(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared, lazily built rule with `n` nodes.
pub fn rule(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(GaussLegendre::new(n))).clone()
}

/// Adaptive bisection with a 20-point base rule; stops when a panel agrees with
/// its two halves to `rel_tol` (relative to the running total) or `abs_tol`.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    let base = rule(20);
    let whole = base.integrate(&mut f, a, b);
    adaptive_step(&mut f, &base, a, b, whole, rel_tol, abs_tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    base: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = base.integrate(&mut *f, a, mid);
    let right = base.integrate(&mut *f, mid, b);
    let refined = left + right;
    let err = (refined - whole).abs();
    if !refined.is_finite() || err <= abs_tol.max(rel_tol * refined.abs()) || depth >= 48 {
        return refined;
    }
    adaptive_step(f, base, a, mid, left, rel_tol, 0.5 * abs_tol, depth + 1)
        + adaptive_step(f, base, mid, b, right, rel_tol, 0.5 * abs_tol, depth + 1)
}

/// A value that may be infinite or undetermined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
    /// Numerical evaluation could not decide between finite and infinite.
    Unknown,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            ExtendedReal::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinite => write!(f, "inf"),
            ExtendedReal::Unknown => write!(f, "unknown"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinite => s.serialize_str("inf"),
            ExtendedReal::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ExtVisitor;
        impl Visitor<'_> for ExtVisitor {
            type Value = ExtendedReal;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"inf\" or \"unknown\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtendedReal, E> {
                match v {
                    "inf" => Ok(ExtendedReal::Infinite),
                    "unknown" => Ok(ExtendedReal::Unknown),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(ExtVisitor)
    }
}

const DYADIC_MAX_PANELS: usize = 1000;
const DYADIC_STABLE_RATIOS: usize = 6;

/// Integral over (0, 1/2] of a function that can only blow up at 0.
///
/// Panels `(2^-(k+2), 2^-(k+1)]` are integrated adaptively. Once successive
/// panel ratios settle, a ratio below one adds the geometric tail and a ratio
/// at or above one reports divergence. Anything else is `Unknown`.
pub fn dyadic_improper<F: FnMut(f64) -> f64>(mut g: F, rel_tol: f64) -> ExtendedReal {
    let mut total = 0.0;
    let mut panels: Vec<f64> = Vec::new();
    let mut hi = 0.5;
    for _ in 0..DYADIC_MAX_PANELS {
        let lo = 0.5 * hi;
        let s = adaptive(&mut g, lo, hi, 1e-13, 0.0);
        if s.is_nan() {
            return ExtendedReal::Unknown;
        }
        if s.is_infinite() {
            return ExtendedReal::Infinite;
        }
        total += s;
        panels.push(s);
        hi = lo;
        if hi < f64::MIN_POSITIVE * 4.0 {
            break;
        }
        if s == 0.0 && panels.len() > DYADIC_STABLE_RATIOS && panels.iter().rev().take(DYADIC_STABLE_RATIOS).all(|&p| p == 0.0) {
            return ExtendedReal::Finite(total);
        }
        let n = panels.len();
        if n <= DYADIC_STABLE_RATIOS + 1 {
            continue;
        }
        let ratios: Vec<f64> = (n - DYADIC_STABLE_RATIOS..n).map(|k| panels[k] / panels[k - 1]).collect();
        if ratios.iter().any(|r| !r.is_finite()) {
            continue;
        }
        let last = ratios[ratios.len() - 1];
        if ratios.iter().all(|&r| r >= 1.0 - 1e-9) {
            return ExtendedReal::Infinite;
        }
        let spread = ratios.iter().map(|r| (r - last).abs()).fold(0.0, f64::max);
        if last < 1.0 && spread <= 1e-9 * last.max(1e-300) {
            let tail = s * last / (1.0 - last);
            return ExtendedReal::Finite(total + tail);
        }
        if s.abs() <= rel_tol * 1e-3 * total.abs() && ratios.iter().all(|&r| r.abs() < 0.9) {
            return ExtendedReal::Finite(total);
        }
    }
    ExtendedReal::Unknown
}

//! Test functions on partitions with cheap evaluation at one-move neighbours.
//!
//! Applying the kernel to `f` at `p` needs `f` at every merge `M_ij p` and at
//! a quadrature grid of splits `S_i^u p`. A [`LocalView`] caches whatever it
//! needs from `p` so that each neighbour costs O(1) or O(m) instead of a
//! fresh partition.

use serde::{Deserialize, Serialize};

use crate::partition::{validate_multiplicity, Partition, PartitionError};
use crate::sigma::SigmaSpec;

/// A real function of a finite partition.
pub trait TestFunction: Sync {
    fn eval(&self, p: &Partition) -> f64;

    /// A view of `f` around `p`.
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a>;
}

/// `f` evaluated at `p` and at its one-move neighbours.
pub trait LocalView {
    fn base(&self) -> f64;

    /// `f(M_ij p)` for `i != j`.
    fn merged(&self, i: usize, j: usize) -> f64;

    /// `f(S_i^u p)`.
    fn split(&self, i: usize, u: f64) -> f64;

    /// Fractions `u` in (0, 1/2) where `u -> f(S_i^u p)` is not smooth.
    fn split_kinks(&self, _i: usize, _out: &mut Vec<f64>) {}

    /// `int f(S_i^u p) dsigma(u)` in closed form, when available.
    fn split_expectation(&self, _i: usize, _sigma: &SigmaSpec) -> Option<f64> {
        None
    }
}

/// Fallback view that materializes every neighbour.
pub struct RebuildView<'a, F: ?Sized> {
    f: &'a F,
    p: &'a Partition,
    base: f64,
}

impl<'a, F: TestFunction + ?Sized> RebuildView<'a, F> {
    pub fn new(f: &'a F, p: &'a Partition) -> Self {
        RebuildView { f, p, base: f.eval(p) }
    }
}

impl<F: TestFunction + ?Sized> LocalView for RebuildView<'_, F> {
    fn base(&self) -> f64 {
        self.base
    }

    fn merged(&self, i: usize, j: usize) -> f64 {
        self.f.eval(&self.p.merge(i, j).expect("valid merge indices"))
    }

    fn split(&self, i: usize, u: f64) -> f64 {
        let x = self.p.parts()[i];
        let mut parts: Vec<f64> = self.p.parts().to_vec();
        parts[i] = u * x;
        parts.push((1.0 - u) * x);
        parts.sort_by(|a, b| b.total_cmp(a));
        self.f.eval(&Partition::from_sorted_unchecked(parts))
    }
}

impl<F> TestFunction for F
where
    F: Fn(&Partition) -> f64 + Sync,
{
    fn eval(&self, p: &Partition) -> f64 {
        self(p)
    }

    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(RebuildView::new(self, p))
    }
}

/// Total mass `|p|`.
#[derive(Debug, Clone, Copy)]
pub struct Mass;

/// The constant function.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

/// `Z_j(p) = sum_i p_i^j`.
#[derive(Debug, Clone, Copy)]
pub struct ZMoment(pub u32);

/// `P_n(p) = prod_j Z_{j+2}^{n_j}`.
#[derive(Debug, Clone)]
pub struct NPolynomial(Vec<u32>);

impl NPolynomial {
    pub fn new(n: Vec<u32>) -> Result<Self, PartitionError> {
        validate_multiplicity(&n)?;
        Ok(NPolynomial(n))
    }
}

/// Number of nonzero parts.
#[derive(Debug, Clone, Copy)]
pub struct PartCount;

/// `#{i : p_i > eps}`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdCount(pub f64);

/// `p_1`.
#[derive(Debug, Clone, Copy)]
pub struct LargestPart;

/// `p_1 p_2 ... p_m`, zero when fewer than `m` parts exist.
#[derive(Debug, Clone, Copy)]
pub struct TopProduct(pub usize);

struct Fixed(f64);

impl LocalView for Fixed {
    fn base(&self) -> f64 {
        self.0
    }
    fn merged(&self, _: usize, _: usize) -> f64 {
        self.0
    }
    fn split(&self, _: usize, _: f64) -> f64 {
        self.0
    }
    fn split_expectation(&self, _: usize, _: &SigmaSpec) -> Option<f64> {
        Some(self.0)
    }
}

impl TestFunction for Mass {
    fn eval(&self, p: &Partition) -> f64 {
        p.mass()
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(Fixed(p.mass()))
    }
}

impl TestFunction for Constant {
    fn eval(&self, _: &Partition) -> f64 {
        self.0
    }
    fn at<'a>(&'a self, _: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(Fixed(self.0))
    }
}

fn pow(x: f64, j: u32) -> f64 {
    x.powi(j as i32)
}

/// Change of `Z_j` when parts `a` and `b` merge.
fn merge_delta(a: f64, b: f64, j: u32) -> f64 {
    pow(a + b, j) - pow(a, j) - pow(b, j)
}

/// Change of `Z_j` when part `x` splits at fraction `u`.
fn split_delta(x: f64, u: f64, j: u32) -> f64 {
    pow(u * x, j) + pow((1.0 - u) * x, j) - pow(x, j)
}

struct ZView<'a> {
    parts: &'a [f64],
    j: u32,
    z: f64,
}

impl LocalView for ZView<'_> {
    fn base(&self) -> f64 {
        self.z
    }
    fn merged(&self, i: usize, k: usize) -> f64 {
        self.z + merge_delta(self.parts[i], self.parts[k], self.j)
    }
    fn split(&self, i: usize, u: f64) -> f64 {
        self.z + split_delta(self.parts[i], u, self.j)
    }
    fn split_expectation(&self, i: usize, sigma: &SigmaSpec) -> Option<f64> {
        let xj = pow(self.parts[i], self.j);
        Some(self.z + xj * (sigma.split_moment(self.j) - 1.0))
    }
}

impl TestFunction for ZMoment {
    fn eval(&self, p: &Partition) -> f64 {
        p.parts().iter().map(|&x| pow(x, self.0)).sum()
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(ZView { parts: p.parts(), j: self.0, z: self.eval(p) })
    }
}

struct NView<'a> {
    parts: &'a [f64],
    n: &'a [u32],
    z: Vec<f64>,
}

impl NView<'_> {
    fn product(&self, delta: impl Fn(u32) -> f64) -> f64 {
        self.n
            .iter()
            .zip(&self.z)
            .enumerate()
            .filter(|(_, (&count, _))| count > 0)
            .map(|(offset, (&count, &z))| (z + delta(offset as u32 + 2)).powi(count as i32))
            .product()
    }
}

impl LocalView for NView<'_> {
    fn base(&self) -> f64 {
        self.product(|_| 0.0)
    }
    fn merged(&self, i: usize, k: usize) -> f64 {
        let (a, b) = (self.parts[i], self.parts[k]);
        self.product(|j| merge_delta(a, b, j))
    }
    fn split(&self, i: usize, u: f64) -> f64 {
        let x = self.parts[i];
        self.product(|j| split_delta(x, u, j))
    }
}

impl TestFunction for NPolynomial {
    fn eval(&self, p: &Partition) -> f64 {
        p.n_polynomial(&self.0).expect("multiplicity validated at construction")
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        let z = (0..self.0.len())
            .map(|offset| p.parts().iter().map(|&x| pow(x, offset as u32 + 2)).sum())
            .collect();
        Box::new(NView { parts: p.parts(), n: &self.0, z })
    }
}

struct CountView {
    count: f64,
}

impl LocalView for CountView {
    fn base(&self) -> f64 {
        self.count
    }
    fn merged(&self, _: usize, _: usize) -> f64 {
        self.count - 1.0
    }
    fn split(&self, _: usize, _: f64) -> f64 {
        self.count + 1.0
    }
    fn split_expectation(&self, _: usize, _: &SigmaSpec) -> Option<f64> {
        Some(self.count + 1.0)
    }
}

impl TestFunction for PartCount {
    fn eval(&self, p: &Partition) -> f64 {
        p.len() as f64
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(CountView { count: p.len() as f64 })
    }
}

struct ThresholdView<'a> {
    parts: &'a [f64],
    eps: f64,
    count: f64,
}

impl ThresholdView<'_> {
    fn above(&self, x: f64) -> f64 {
        if x > self.eps {
            1.0
        } else {
            0.0
        }
    }
}

impl LocalView for ThresholdView<'_> {
    fn base(&self) -> f64 {
        self.count
    }
    fn merged(&self, i: usize, k: usize) -> f64 {
        let (a, b) = (self.parts[i], self.parts[k]);
        self.count - self.above(a) - self.above(b) + self.above(a + b)
    }
    fn split(&self, i: usize, u: f64) -> f64 {
        let x = self.parts[i];
        self.count - self.above(x) + self.above(u * x) + self.above((1.0 - u) * x)
    }
    fn split_kinks(&self, i: usize, out: &mut Vec<f64>) {
        let r = self.eps / self.parts[i];
        out.extend([r, 1.0 - r]);
    }
}

impl TestFunction for ThresholdCount {
    fn eval(&self, p: &Partition) -> f64 {
        p.parts().iter().filter(|&&x| x > self.0).count() as f64
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(ThresholdView { parts: p.parts(), eps: self.0, count: self.eval(p) })
    }
}

impl TestFunction for LargestPart {
    fn eval(&self, p: &Partition) -> f64 {
        p.largest()
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(TopView { parts: p.parts(), m: 1, base: p.largest() })
    }
}

impl TestFunction for TopProduct {
    fn eval(&self, p: &Partition) -> f64 {
        top_product(p.parts(), self.0)
    }
    fn at<'a>(&'a self, p: &'a Partition) -> Box<dyn LocalView + 'a> {
        Box::new(TopView { parts: p.parts(), m: self.0, base: self.eval(p) })
    }
}

fn top_product(sorted: &[f64], m: usize) -> f64 {
    if sorted.len() < m {
        0.0
    } else {
        sorted[..m].iter().product()
    }
}

/// Product of the `m` largest parts around a fixed state.
struct TopView<'a> {
    parts: &'a [f64],
    m: usize,
    base: f64,
}

impl TopView<'_> {
    /// Top-`m` product after removing `skip` and adding `extra`.
    fn replaced(&self, skip: &[usize], extra: &[f64]) -> f64 {
        let mut top: Vec<f64> = self
            .parts
            .iter()
            .enumerate()
            .filter(|(idx, _)| !skip.contains(idx))
            .map(|(_, &x)| x)
            .take(self.m)
            .collect();
        top.extend_from_slice(extra);
        top.sort_by(|a, b| b.total_cmp(a));
        top_product(&top, self.m)
    }
}

impl LocalView for TopView<'_> {
    fn base(&self) -> f64 {
        self.base
    }
    fn merged(&self, i: usize, k: usize) -> f64 {
        self.replaced(&[i, k], &[self.parts[i] + self.parts[k]])
    }
    fn split(&self, i: usize, u: f64) -> f64 {
        let x = self.parts[i];
        self.replaced(&[i], &[u * x, (1.0 - u) * x])
    }
    fn split_kinks(&self, i: usize, out: &mut Vec<f64>) {
        let x = self.parts[i];
        for &y in self.parts.iter().take(self.m + 1) {
            out.extend([y / x, 1.0 - y / x]);
        }
    }
}

/// Named functionals for configuration files and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `Z_j`.
    Z { j: u32 },
    /// `P_n` with `n[0]` the multiplicity of `Z_2`.
    NPoly { n: Vec<u32> },
    PartCount,
    Threshold { eps: f64 },
    Largest,
    /// Product of the `m` largest parts.
    TopProduct { m: usize },
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::Z { j } => format!("Z_{j}"),
            Functional::NPoly { n } => {
                let terms: Vec<String> = n.iter().map(|c| c.to_string()).collect();
                format!("P_({})", terms.join(","))
            }
            Functional::PartCount => "X_0".to_string(),
            Functional::Threshold { eps } => format!("X_{eps}"),
            Functional::Largest => "p_1".to_string(),
            Functional::TopProduct { m } => format!("p_1..p_{m}"),
        }
    }

    pub fn build(&self) -> Result<Box<dyn TestFunction>, PartitionError> {
        Ok(match self {
            Functional::Z { j } if *j == 0 => return Err(PartitionError::ZeroMomentOrder),
            Functional::Z { j } => Box::new(ZMoment(*j)),
            Functional::NPoly { n } => Box::new(NPolynomial::new(n.clone())?),
            Functional::PartCount => Box::new(PartCount),
            Functional::Threshold { eps } => Box::new(ThresholdCount(*eps)),
            Functional::Largest => Box::new(LargestPart),
            Functional::TopProduct { m } => Box::new(TopProduct(*m)),
        })
    }
}

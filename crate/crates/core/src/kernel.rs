//! Kernel evaluations: the infinite-width NTK through its power series in
//! `cos∠(x, y)`, a Monte Carlo oracle for it, the finite-width kernel
//! `k_m(x,y) = X(x)·X(y)`, the series remainder `r` and its truncations `k^(n)`.
//!
//! With `c = x·y / (|x||y|)` the kernel is
//!
//! ```text
//! k(x,y) = |x||y| [ 1/2π + c/4 + c²/4π + (1/2π) Σ_{n≥1} a_n c^{2n+2} / ((2n+1)(2n+2)) ]
//! ```
//!
//! where `a_n = C(2n,n)/4^n` follows `a_n = a_{n−1}(2n−1)/(2n)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sampling::{
    dot, feature_map_into, gaussian_into, norm, HiddenWeights, McEstimate, MonteCarlo,
};

/// Value of the `n ≥ 1` series at `c = 1` per unit norms:
/// `1/2 − 1/2π − 1/4 − 1/4π`.
pub const REMAINDER_AT_ONE: f64 = 0.25 - 0.75 / PI;

/// Beyond this `|c|` the series is replaced by its collinear limit.
const COLLINEAR_EPS: f64 = 1e-6;

/// Truncation policy for the kernel series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub tol: f64,
    pub n_max: usize,
}

impl Default for SeriesParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            n_max: 200,
        }
    }
}

impl SeriesParams {
    pub fn new(tol: f64, n_max: usize) -> Result<Self> {
        if !(tol > 0.0) || n_max == 0 {
            return Err(Error::InvalidConfig(format!(
                "series needs tol > 0 and n_max >= 1, got tol={tol}, n_max={n_max}"
            )));
        }
        Ok(Self { tol, n_max })
    }
}

/// A kernel value with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub value: f64,
    pub n_terms_used: usize,
    /// Upper bound on `|value − exact|`.
    pub tail_bound: f64,
    /// `tail_bound ≤ tol`.
    pub converged: bool,
}

impl KernelValue {
    fn exact(value: f64, n_terms_used: usize) -> Self {
        Self {
            value,
            n_terms_used,
            tail_bound: 0.0,
            converged: true,
        }
    }
}

/// Weight of series term `n`: `a_n / (2π(2n+1)(2n+2))`.
fn term_weight(a_n: f64, n: usize) -> f64 {
    let n = n as f64;
    a_n / (2.0 * PI * (2.0 * n + 1.0) * (2.0 * n + 2.0))
}

/// Sum of the `n ≥ 1` series per unit norms, scaled by `scale = |x||y|`.
fn remainder_series(c: f64, scale: f64, params: &SeriesParams) -> KernelValue {
    let c2 = c * c;
    if c2 == 0.0 {
        return KernelValue::exact(0.0, 0);
    }
    let mut a = 1.0;
    let mut pow = c2;
    let mut sum = 0.0;
    let mut sum_at_one = 0.0;
    let mut bound = f64::INFINITY;
    let mut used = 0;
    for n in 1..=params.n_max {
        a *= (2 * n - 1) as f64 / (2 * n) as f64;
        pow *= c2;
        let w = term_weight(a, n);
        sum += w * pow;
        sum_at_one += w;
        used = n;

        // Term ratios never exceed c², so the next term over (1 − c²) bounds
        // the tail; the unfinished sum at c = 1 bounds it for any c.
        let a_next = a * (2 * n + 1) as f64 / (2 * n + 2) as f64;
        let geometric = if c2 < 1.0 {
            term_weight(a_next, n + 1) * pow * c2 / (1.0 - c2)
        } else {
            f64::INFINITY
        };
        let at_one = (REMAINDER_AT_ONE - sum_at_one).max(0.0);
        bound = geometric.min(at_one) * scale;
        if bound <= params.tol {
            break;
        }
    }
    KernelValue {
        value: sum * scale,
        n_terms_used: used,
        tail_bound: bound,
        converged: bound <= params.tol,
    }
}

/// The three closed terms per unit norms: `1/2π + c/4 + c²/4π`.
fn closed_terms(c: f64) -> f64 {
    1.0 / (2.0 * PI) + c / 4.0 + c * c / (4.0 * PI)
}

/// Collinear limit per unit norms with a bound on its error, when `|c|` is
/// within [`COLLINEAR_EPS`] of 1.
///
/// Near `c = 1` the kernel is `1/2 − ε/2 + O(ε^{3/2})` with `ε = 1 − c`,
/// near `c = −1` it is `O(ε^{3/2})` with `ε = 1 + c`; the `ε^{3/2}`
/// coefficient is `√2/(3π) ≈ 0.150` in both cases.
fn collinear_limit(c: f64) -> Option<(f64, f64)> {
    if c >= 1.0 - COLLINEAR_EPS {
        let eps = 1.0 - c;
        Some((0.5 - eps / 2.0, 0.2 * eps.powf(1.5)))
    } else if c <= -1.0 + COLLINEAR_EPS {
        let eps = 1.0 + c;
        Some((0.0, 0.2 * eps.powf(1.5)))
    } else {
        None
    }
}

fn norms_and_cos(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    check_dim(x.len(), y.len())?;
    let nx = norm(x);
    let ny = norm(y);
    let c = if nx > 0.0 && ny > 0.0 {
        (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok((nx, ny, c))
}

/// The infinite-width NTK `k(x,y) = E_Z[φ(x·Z)φ(y·Z)]` by its series.
///
/// Zero inputs give 0 (the defining expectation vanishes).
pub fn ntk_series(x: &[f64], y: &[f64], params: &SeriesParams) -> Result<KernelValue> {
    let (nx, ny, c) = norms_and_cos(x, y)?;
    let scale = nx * ny;
    if scale == 0.0 {
        return Ok(KernelValue::exact(0.0, 0));
    }
    if let Some((unit, err)) = collinear_limit(c) {
        let bound = err * scale;
        return Ok(KernelValue {
            value: unit * scale,
            n_terms_used: 0,
            tail_bound: bound,
            converged: bound <= params.tol,
        });
    }
    let mut kv = remainder_series(c, scale, params);
    kv.value += closed_terms(c) * scale;
    Ok(kv)
}

/// The `n ≥ 1` tail `r(x,y)` alone.
pub fn remainder_kernel(x: &[f64], y: &[f64], params: &SeriesParams) -> Result<KernelValue> {
    let (nx, ny, c) = norms_and_cos(x, y)?;
    let scale = nx * ny;
    if scale == 0.0 {
        return Err(Error::ZeroInput);
    }
    if let Some((unit, err)) = collinear_limit(c) {
        let bound = err * scale;
        return Ok(KernelValue {
            value: (unit - closed_terms(c)) * scale,
            n_terms_used: 0,
            tail_bound: bound,
            converged: bound <= params.tol,
        });
    }
    Ok(remainder_series(c, scale, params))
}

/// Single series term `l` (`l ≥ 0`) in the truncated-kernel indexing, per unit norms.
pub fn series_term(c: f64, l: usize) -> f64 {
    let mut a = 1.0;
    for n in 1..=l {
        a *= (2 * n - 1) as f64 / (2 * n) as f64;
    }
    term_weight(a, l) * c.powi(2 * l as i32 + 2)
}

/// `k^(n)(x,y) = |x||y|/2π + x·y/4 + (1/2π) Σ_{l=0}^{n} a_l (x·y)^{2l+2} / ((2l+1)(2l+2)(|x||y|)^{2l+1})`.
///
/// A finite sum, so the tail bound is zero.
pub fn truncated_kernel(x: &[f64], y: &[f64], order: usize) -> Result<KernelValue> {
    let (nx, ny, c) = norms_and_cos(x, y)?;
    let scale = nx * ny;
    if scale == 0.0 {
        return Err(Error::ZeroInput);
    }
    let c2 = c * c;
    let mut a = 1.0;
    let mut pow = c2;
    let mut sum = term_weight(a, 0) * pow;
    for l in 1..=order {
        a *= (2 * l - 1) as f64 / (2 * l) as f64;
        pow *= c2;
        sum += term_weight(a, l) * pow;
    }
    let unit = 1.0 / (2.0 * PI) + c / 4.0 + sum;
    Ok(KernelValue::exact(unit * scale, order + 1))
}

/// Finite-width kernel `k_m(x,y) = φ(xW)·φ(yW)`.
pub fn ntk_empirical(w: &HiddenWeights, x: &[f64], y: &[f64]) -> Result<f64> {
    let mut fx = vec![0.0; w.m()];
    let mut fy = vec![0.0; w.m()];
    feature_map_into(w, x, &mut fx)?;
    feature_map_into(w, y, &mut fy)?;
    Ok(dot(&fx, &fy))
}

/// Monte Carlo average of `φ(x·Z)φ(y·Z)` over `Z ~ N(0, I_d)`.
pub fn ntk_mc_oracle(x: &[f64], y: &[f64], mc: &MonteCarlo) -> Result<McEstimate> {
    check_dim(x.len(), y.len())?;
    let d = x.len();
    mc.estimate(|rng| {
        let mut z = vec![0.0; d];
        gaussian_into(rng, &mut z);
        Ok(dot(x, &z).max(0.0) * dot(y, &z).max(0.0))
    })
}

/// Which kernel an integral operator uses.
#[derive(Debug, Clone, Copy)]
pub enum KernelSpec<'a> {
    /// Infinite-width NTK by series.
    Ntk(SeriesParams),
    /// Series remainder `r`.
    Remainder(SeriesParams),
    /// `k^(n)` of the given order.
    Truncated(usize),
    /// Finite-width kernel of a sampled network.
    Empirical(&'a HiddenWeights),
}

impl KernelSpec<'_> {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            KernelSpec::Ntk(p) => ntk_series(x, y, p).map(|k| k.value),
            KernelSpec::Remainder(p) => remainder_kernel(x, y, p).map(|k| k.value),
            KernelSpec::Truncated(n) => truncated_kernel(x, y, *n).map(|k| k.value),
            KernelSpec::Empirical(w) => ntk_empirical(w, x, y),
        }
    }
}

/// `∫ k(x,x) p_X(x) dx`, the operator trace.
pub fn trace_estimate(kernel: &KernelSpec<'_>, d: usize, mc: &MonteCarlo) -> Result<McEstimate> {
    if d == 0 {
        return Err(Error::InvalidConfig("d must be positive".into()));
    }
    mc.estimate(|rng| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        kernel.eval(&x, &x)
    })
}

/// `(d/2)(1/2 − (3d+2)/(2π(d+2)))`, the published upper bound on the remainder trace.
pub fn remainder_trace_bound(d: usize) -> f64 {
    let d = d as f64;
    d / 2.0 * (0.5 - (3.0 * d + 2.0) / (2.0 * PI * (d + 2.0)))
}

/// Exact remainder trace `d (1/4 − 3/(4π))`: `r(x,x) = |x|² · REMAINDER_AT_ONE`.
pub fn remainder_trace_exact(d: usize) -> f64 {
    d as f64 * REMAINDER_AT_ONE
}

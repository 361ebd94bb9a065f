//! Seeded sampling, the ReLU feature map and Monte Carlo integration over
//! the standard Gaussian input measure.
//!
//! Every Monte Carlo routine splits its samples into fixed-size blocks. Block
//! `b` draws from ChaCha stream `b` of the caller's seed and the per-block
//! moments are merged in block order, so results do not depend on how many
//! worker threads rayon happens to use.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Samples per deterministic substream.
pub const BLOCK_SIZE: usize = 4096;

const MAX_REDRAWS: usize = 1000;

pub type StreamRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes `index` into `seed` (splitmix64 finalizer) to obtain an unrelated seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `out` with i.i.d. standard normal draws.
pub fn gaussian_into<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Fills `out` with a point drawn uniformly from the unit sphere.
pub fn sphere_point_into<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        gaussian_into(rng, out);
        let norm = norm(out);
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Shape and seed of a 2-layer network with random hidden weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    d: usize,
    m: usize,
    seed: u64,
}

impl NetworkConfig {
    pub fn new(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidConfig(format!(
                "network needs d >= 1 and m >= 1, got d={d}, m={m}"
            )));
        }
        Ok(Self { d, m, seed })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// The d×m hidden weight matrix `W`; column `i` is the weight vector of hidden unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenWeights {
    w: DMatrix<f64>,
}

impl HiddenWeights {
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidConfig("empty weight matrix".into()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        Ok(Self { w })
    }

    /// Builds `W` from its rows (`d` rows of length `m`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim(m, r.len())?;
        }
        Self::from_matrix(DMatrix::from_fn(d, m, |i, j| rows[i][j]))
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn m(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W_{*i}`, the input weights of hidden unit `i`.
    pub fn column(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.w.as_slice()[i * d..(i + 1) * d]
    }

    /// `W_{l*}`, the weights attached to input coordinate `l`.
    pub fn row(&self, l: usize) -> DVector<f64> {
        self.w.row(l).transpose()
    }
}

/// Draws `W` with i.i.d. N(0, 1/m) entries; a pure function of the config.
pub fn sample_network(config: &NetworkConfig) -> HiddenWeights {
    let (d, m) = (config.d, config.m);
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = substream(config.seed, 0);
    let mut data = vec![0.0; d * m];
    gaussian_into(&mut rng, &mut data);
    data.iter_mut().for_each(|v| *v *= scale);
    HiddenWeights {
        w: DMatrix::from_vec(d, m, data),
    }
}

/// Hidden activations `φ(xW)` with `φ = max(·, 0)`.
pub fn feature_map(w: &HiddenWeights, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w.m()];
    feature_map_into(w, x, &mut out)?;
    Ok(out)
}

pub fn feature_map_into(w: &HiddenWeights, x: &[f64], out: &mut [f64]) -> Result<()> {
    check_dim(w.d(), x.len())?;
    check_dim(w.m(), out.len())?;
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(x, w.column(i)).max(0.0);
    }
    Ok(())
}

/// Output function `f_v(x) = φ(xW)·v` of the network with output weights `v`.
#[derive(Debug, Clone, Copy)]
pub struct NetworkFunction<'a> {
    weights: &'a HiddenWeights,
    v: &'a [f64],
}

impl<'a> NetworkFunction<'a> {
    pub fn new(weights: &'a HiddenWeights, v: &'a [f64]) -> Result<Self> {
        check_dim(weights.m(), v.len())?;
        Ok(Self { weights, v })
    }
}

impl Field for NetworkFunction<'_> {
    fn dim(&self) -> usize {
        self.weights.d()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.weights.d(), x.len())?;
        Ok((0..self.weights.m())
            .map(|i| dot(x, self.weights.column(i)).max(0.0) * self.v[i])
            .sum())
    }
}

/// A real function on R^d that may refuse measure-zero inputs.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

impl<T: Field + ?Sized> Field for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> Result<f64> {
        (**self).eval(x)
    }
}

impl<T: Field + ?Sized + Send> Field for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> Result<f64> {
        (**self).eval(x)
    }
}

/// Closure-backed [`Field`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> Field for FnField<F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        (self.f)(x)
    }
}

pub fn field<F>(dim: usize, f: F) -> FnField<F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    FnField { dim, f }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 1,
        }
    }

    /// `|value − target| ≤ k·se + 1e-9`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + 1e-9
    }

    /// Distance to `[lo, hi]` is at most `k·se + 1e-9`.
    pub fn within_interval(&self, lo: f64, hi: f64, k: f64) -> bool {
        let gap = if self.value < lo {
            lo - self.value
        } else if self.value > hi {
            self.value - hi
        } else {
            0.0
        };
        gap <= k * self.std_error + 1e-9
    }

    /// Deviation from `target` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.value - target;
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY * diff.signum()
        }
    }
}

/// Streaming mean and (co)variance of a fixed-width sample vector.
#[derive(Debug, Clone)]
pub struct Moments {
    n: usize,
    mean: Vec<f64>,
    // full: width×width co-moment matrix, otherwise per-component M2
    m2: Vec<f64>,
    full: bool,
}

impl Moments {
    pub fn new(width: usize, full: bool) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; if full { width * width } else { width }],
            full,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let w = self.width();
        if self.full {
            let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
            for (m, d) in self.mean.iter_mut().zip(&delta) {
                *m += d / n;
            }
            for i in 0..w {
                let after = x[i] - self.mean[i];
                for j in 0..w {
                    self.m2[i * w + j] += delta[j] * after;
                }
            }
        } else {
            for i in 0..w {
                let delta = x[i] - self.mean[i];
                self.mean[i] += delta / n;
                self.m2[i] += delta * (x[i] - self.mean[i]);
            }
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let w = self.width();
        let delta: Vec<f64> = other
            .mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        if self.full {
            for i in 0..w {
                for j in 0..w {
                    self.m2[i * w + j] += other.m2[i * w + j] + delta[i] * delta[j] * na * nb / n;
                }
            }
        } else {
            for i in 0..w {
                self.m2[i] += other.m2[i] + delta[i] * delta[i] * na * nb / n;
            }
        }
        for i in 0..w {
            self.mean[i] += delta[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Unbiased sample covariance of components `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let m2 = if self.full {
            self.m2[i * self.width() + j]
        } else {
            assert_eq!(i, j, "cross moments need a full accumulator");
            self.m2[i]
        };
        m2 / (self.n as f64 - 1.0)
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance(i, i).max(0.0)
    }

    pub fn estimate(&self, i: usize) -> McEstimate {
        McEstimate {
            value: self.mean(i),
            std_error: (self.variance(i) / self.n.max(1) as f64).sqrt(),
            n_samples: self.n,
        }
    }

    /// Ratio of the means of components `num` and `den`, with a delta-method standard error.
    pub fn ratio(&self, num: usize, den: usize) -> Result<McEstimate> {
        assert!(self.full, "ratio needs a full accumulator");
        let d = self.estimate(den);
        if d.value.abs() <= 4.0 * d.std_error {
            return Err(Error::DegenerateDenominator {
                value: d.value,
                std_error: d.std_error,
            });
        }
        let r = self.mean(num) / d.value;
        let var = self.covariance(num, num) - 2.0 * r * self.covariance(num, den)
            + r * r * self.covariance(den, den);
        Ok(McEstimate {
            value: r,
            std_error: (var.max(0.0) / self.n as f64).sqrt() / d.value.abs(),
            n_samples: self.n,
        })
    }
}

/// Sample budget and seed of one Monte Carlo integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    n_samples: usize,
    seed: u64,
}

impl MonteCarlo {
    pub fn new(n_samples: usize, seed: u64) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::NoSamples);
        }
        Ok(Self { n_samples, seed })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same budget, seed mixed with `index`.
    pub fn child(&self, index: u64) -> Self {
        Self {
            n_samples: self.n_samples,
            seed: derive_seed(self.seed, index),
        }
    }

    pub fn with_samples(&self, n_samples: usize) -> Result<Self> {
        Self::new(n_samples, self.seed)
    }

    /// Accumulates `width` statistics per sample. `draw` fills the slice from
    /// the generator; a [`Error::ZeroInput`] result discards the draw and
    /// samples again.
    pub fn moments<F>(&self, width: usize, full: bool, draw: F) -> Result<Moments>
    where
        F: Fn(&mut StreamRng, &mut [f64]) -> Result<()> + Sync,
    {
        let n_blocks = self.n_samples.div_ceil(BLOCK_SIZE);
        let blocks: Vec<Moments> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let count = BLOCK_SIZE.min(self.n_samples - b * BLOCK_SIZE);
                let mut rng = substream(self.seed, b as u64);
                let mut acc = Moments::new(width, full);
                let mut buf = vec![0.0; width];
                for _ in 0..count {
                    let mut tries = 0;
                    loop {
                        match draw(&mut rng, &mut buf) {
                            Ok(()) => break,
                            Err(e) if e.is_resample() && tries < MAX_REDRAWS => tries += 1,
                            Err(e) => return Err(e),
                        }
                    }
                    acc.push(&buf);
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut total = Moments::new(width, full);
        for b in &blocks {
            total.merge(b);
        }
        Ok(total)
    }

    /// Mean of a scalar statistic.
    pub fn estimate<F>(&self, draw: F) -> Result<McEstimate>
    where
        F: Fn(&mut StreamRng) -> Result<f64> + Sync,
    {
        let m = self.moments(1, false, |rng, out| {
            out[0] = draw(rng)?;
            Ok(())
        })?;
        Ok(m.estimate(0))
    }
}

/// `⟨f, g⟩ = E[f(x)g(x)]` under the standard `d`-variate Gaussian.
pub fn gauss_l2_inner<F: Field, G: Field>(
    f: &F,
    g: &G,
    d: usize,
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    check_dim(d, f.dim())?;
    check_dim(d, g.dim())?;
    mc.estimate(|rng| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        Ok(f.eval(&x)? * g.eval(&x)?)
    })
}

/// Uniform points on the unit sphere of R^d, laid out block by block on the
/// same substreams as [`MonteCarlo`].
pub fn sample_sphere(d: usize, n_samples: usize, seed: u64) -> impl Iterator<Item = Vec<f64>> {
    let n_blocks = n_samples.div_ceil(BLOCK_SIZE);
    (0..n_blocks).flat_map(move |b| {
        let count = BLOCK_SIZE.min(n_samples - b * BLOCK_SIZE);
        let mut rng = substream(seed, b as u64);
        (0..count).map(move |_| {
            let mut y = vec![0.0; d];
            sphere_point_into(&mut rng, &mut y);
            y
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_is_deterministic_in_seed() {
        let cfg = NetworkConfig::new(2, 3, 7).unwrap();
        assert_eq!(sample_network(&cfg), sample_network(&cfg));
        let other = NetworkConfig::new(2, 3, 8).unwrap();
        assert_ne!(sample_network(&cfg), sample_network(&other));
    }

    #[test]
    fn config_rejects_zero_dimensions() {
        assert!(NetworkConfig::new(0, 3, 1).is_err());
        assert!(NetworkConfig::new(3, 0, 1).is_err());
    }

    #[test]
    fn weight_variance_is_one_over_m() {
        let cfg = NetworkConfig::new(4, 10_000, 11).unwrap();
        let w = sample_network(&cfg);
        let n = w.matrix().len() as f64;
        let mean = w.matrix().iter().sum::<f64>() / n;
        let var = w.matrix().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma2 = 1e-4;
        // se of the mean is sqrt(σ²/n); se of the variance is σ²·sqrt(2/(n−1))
        assert!(mean.abs() <= 4.0 * (sigma2 / n).sqrt());
        assert!((var - sigma2).abs() <= 4.0 * sigma2 * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn single_weight_is_standard_normal_across_seeds() {
        let draws: Vec<f64> = (0..20_000)
            .map(|s| sample_network(&NetworkConfig::new(1, 1, s).unwrap()).matrix()[(0, 0)])
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 / n.sqrt());
        assert!((var - 1.0).abs() <= 4.0 * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn feature_map_examples() {
        let w = HiddenWeights::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(feature_map(&w, &[3.0, -4.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(feature_map(&w, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let w = HiddenWeights::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        // x·w = 1 − 6 = −5
        assert_eq!(feature_map(&w, &[1.0, -3.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            feature_map(&w, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn columns_and_rows() {
        let w = HiddenWeights::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(w.column(1), &[2.0, 5.0]);
        assert_eq!(w.row(1).as_slice(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn gaussian_inner_products() {
        let mc = MonteCarlo::new(200_000, 3).unwrap();
        let x1 = field(3, |x: &[f64]| Ok(x[0]));
        let x2 = field(3, |x: &[f64]| Ok(x[1]));
        let e = gauss_l2_inner(&x1, &x1, 3, &mc).unwrap();
        assert!(e.within(1.0, 4.0), "{e:?}");
        let e = gauss_l2_inner(&x1, &x2, 3, &mc).unwrap();
        assert!(e.within(0.0, 4.0), "{e:?}");
        let r = field(5, |x: &[f64]| Ok(norm(x)));
        let e = gauss_l2_inner(&r, &r, 5, &mc).unwrap();
        assert!(e.within(5.0, 4.0), "{e:?}");
    }

    #[test]
    fn zero_samples_rejected() {
        assert_eq!(MonteCarlo::new(0, 1), Err(Error::NoSamples));
    }

    #[test]
    fn zero_input_is_resampled() {
        let mc = MonteCarlo::new(1000, 9).unwrap();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let e = mc
            .estimate(|rng| {
                let n = calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let v: f64 = rng.sample(StandardNormal);
                if n % 7 == 0 {
                    Err(Error::ZeroInput)
                } else {
                    Ok(v)
                }
            })
            .unwrap();
        assert_eq!(e.n_samples, 1000);
    }

    #[test]
    fn estimates_independent_of_thread_count() {
        let mc = MonteCarlo::new(50_000, 5).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    mc.estimate(|rng| {
                        let v: f64 = rng.sample(StandardNormal);
                        Ok(v * v)
                    })
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<[f64; 2]> = (0..100)
            .map(|i| [i as f64 * 0.3, (i as f64).sin()])
            .collect();
        let mut all = Moments::new(2, true);
        xs.iter().for_each(|x| all.push(x));
        let mut a = Moments::new(2, true);
        let mut b = Moments::new(2, true);
        xs[..37].iter().for_each(|x| a.push(x));
        xs[37..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        for i in 0..2 {
            assert!((a.mean(i) - all.mean(i)).abs() < 1e-12);
            for j in 0..2 {
                assert!((a.covariance(i, j) - all.covariance(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sphere_points_are_unit_and_uniform() {
        let pts: Vec<Vec<f64>> = sample_sphere(3, 60_000, 4).collect();
        assert_eq!(pts.len(), 60_000);
        let n = pts.len() as f64;
        let mut sq = Vec::with_capacity(pts.len());
        for p in &pts {
            assert!((norm(p) - 1.0).abs() < 1e-12);
            sq.push(p[0] * p[0]);
        }
        let mean = sq.iter().sum::<f64>() / n;
        let sd = (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 1.0 / 3.0).abs() <= 4.0 * sd / n.sqrt());
        let m1 = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!(m1.abs() <= 4.0 * (1.0f64 / 3.0).sqrt() / n.sqrt());
    }

    #[test]
    fn zero_sphere_is_balanced_signs() {
        let pts: Vec<f64> = sample_sphere(1, 10_000, 2).map(|p| p[0]).collect();
        assert!(pts.iter().all(|v| *v == 1.0 || *v == -1.0));
        let plus = pts.iter().filter(|v| **v > 0.0).count() as f64;
        // binomial(n, 1/2): se = sqrt(n)/2
        assert!((plus - 5000.0).abs() <= 4.0 * 50.0);
    }
}

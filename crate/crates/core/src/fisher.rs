//! Fisher information of the output layer, `J = E[Xᵀ X]` with `X = φ(xW)`.
//!
//! Swapping the roles of inputs and hidden weights turns the NTK into the
//! Fisher matrix: `J_ij = k(W_{*i}, W_{*j})`. The empirical matrix averages
//! feature outer products; with unit noise variance the negative Hessian of
//! the log-likelihood does not depend on the labels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{ntk_series, SeriesParams};
use crate::linalg::{symmetric_eigen, symmetric_eigenvalues, Eigen, Solver};
use crate::sampling::{
    feature_map_into, gauss_l2_inner, gaussian_into, substream, HiddenWeights, McEstimate,
    MonteCarlo, NetworkFunction, BLOCK_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    /// Kernel series evaluated on column pairs.
    ExactSeries {
        /// Largest truncation bound over all entries.
        max_tail_bound: f64,
        /// Entries whose series did not reach its tolerance.
        unconverged: usize,
    },
    Empirical {
        n_samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
}

impl FisherMatrix {
    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn eigen(&self, tol: f64) -> Result<Eigen> {
        eigendecompose(&self.matrix, tol)
    }

    /// Descending eigenvalues without eigenvectors.
    pub fn eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        Ok(symmetric_eigenvalues(&self.matrix, tol, Solver::Auto)?
            .as_slice()
            .to_vec())
    }
}

/// `J_ij = k(W_{*i}, W_{*j})` from the kernel series, upper triangle mirrored.
pub fn fisher_exact(w: &HiddenWeights, params: &SeriesParams) -> Result<FisherMatrix> {
    let m = w.m();
    let rows: Vec<Vec<(f64, f64, bool)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .map(|j| {
                    ntk_series(w.column(i), w.column(j), params)
                        .map(|k| (k.value, k.tail_bound, k.converged))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(m, m);
    let mut max_tail_bound = 0.0f64;
    let mut unconverged = 0;
    for (i, row) in rows.iter().enumerate() {
        for (off, &(v, bound, ok)) in row.iter().enumerate() {
            let j = i + off;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
            max_tail_bound = max_tail_bound.max(bound);
            unconverged += usize::from(!ok);
        }
    }
    Ok(FisherMatrix {
        matrix,
        provenance: Provenance::ExactSeries {
            max_tail_bound,
            unconverged,
        },
    })
}

/// `(1/n) Σ_t X(x_t)ᵀ X(x_t)` for given inputs.
pub fn fisher_at_points(w: &HiddenWeights, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::NoSamples);
    }
    let m = w.m();
    let mut feats = DMatrix::zeros(points.len(), m);
    let mut buf = vec![0.0; m];
    for (t, x) in points.iter().enumerate() {
        feature_map_into(w, x, &mut buf)?;
        for i in 0..m {
            feats[(t, i)] = buf[i];
        }
    }
    Ok(feats.tr_mul(&feats) / points.len() as f64)
}

/// Blocks summed per parallel round; bounds memory at this many m×m partial sums.
const EMPIRICAL_ROUND: usize = 8;

/// Empirical Fisher matrix over `n` Gaussian inputs drawn from `seed`.
pub fn fisher_empirical(w: &HiddenWeights, mc: &MonteCarlo) -> Result<FisherMatrix> {
    let (d, m, n) = (w.d(), w.m(), mc.n_samples());
    let n_blocks = n.div_ceil(BLOCK_SIZE);
    let block_sum = |b: usize| -> DMatrix<f64> {
        let count = BLOCK_SIZE.min(n - b * BLOCK_SIZE);
        let mut rng = substream(mc.seed(), b as u64);
        let mut feats = DMatrix::zeros(count, m);
        let mut x = vec![0.0; d];
        let mut buf = vec![0.0; m];
        for t in 0..count {
            gaussian_into(&mut rng, &mut x);
            feature_map_into(w, &x, &mut buf).expect("dimensions fixed by construction");
            for i in 0..m {
                feats[(t, i)] = buf[i];
            }
        }
        feats.tr_mul(&feats)
    };
    // partial sums are added in block order whatever the round size
    let mut total = DMatrix::zeros(m, m);
    for start in (0..n_blocks).step_by(EMPIRICAL_ROUND) {
        let end = (start + EMPIRICAL_ROUND).min(n_blocks);
        let parts: Vec<DMatrix<f64>> = (start..end).into_par_iter().map(block_sum).collect();
        for p in parts {
            total += p;
        }
    }
    Ok(FisherMatrix {
        matrix: total / n as f64,
        provenance: Provenance::Empirical {
            n_samples: n,
            seed: mc.seed(),
        },
    })
}

/// Symmetric eigendecomposition, eigenvalues descending.
pub fn eigendecompose(j: &DMatrix<f64>, tol: f64) -> Result<Eigen> {
    symmetric_eigen(j, tol, Solver::Auto)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cluster {
    Top,
    Linear,
    Quadratic,
    Bulk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: Cluster,
    pub count: usize,
    pub mean: f64,
    /// Predicted value, `None` for the bulk.
    pub center: Option<f64>,
    /// `(mean − center) / center`.
    pub rel_deviation: Option<f64>,
}

/// Spectrum grouped by descending rank into counts `1, d, (d−1) + d(d−1)/2` and the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumClusters {
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub assignment: Vec<Cluster>,
    pub summaries: Vec<ClusterSummary>,
    /// False when `m` is too small to hold the predicted groups; everything is then bulk.
    pub expressible: bool,
    /// Quadratic mean relative to the infinite-width value `1/(2π(d+2))`.
    pub quadratic_rel_deviation_ntk: Option<f64>,
}

impl SpectrumClusters {
    pub fn summary(&self, cluster: Cluster) -> Option<&ClusterSummary> {
        self.summaries.iter().find(|s| s.cluster == cluster)
    }

    /// Largest bulk eigenvalue is below the quadratic cluster's mean.
    pub fn bulk_separated(&self) -> Option<bool> {
        let q = self.summary(Cluster::Quadratic)?;
        let top_bulk = self
            .eigenvalues
            .iter()
            .zip(&self.assignment)
            .find(|(_, c)| **c == Cluster::Bulk)
            .map(|(v, _)| *v)?;
        Some(top_bulk < q.mean)
    }
}

/// Predicted centres `((2d+1)/4π, 1/4, 1/(2πd))`.
pub fn cluster_centers(d: usize) -> [f64; 3] {
    let d = d as f64;
    [(2.0 * d + 1.0) / (4.0 * PI), 0.25, 1.0 / (2.0 * PI * d)]
}

/// Number of eigenvalues in the top, linear and quadratic groups.
pub fn cluster_counts(d: usize) -> [usize; 3] {
    [1, d, (d - 1) + d * (d - 1) / 2]
}

pub fn cluster_spectrum(eigs: &[f64], d: usize) -> Result<SpectrumClusters> {
    if d == 0 {
        return Err(Error::InvalidConfig("d must be positive".into()));
    }
    if eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Precondition("eigenvalues must be descending".into()));
    }
    let m = eigs.len();
    let counts = cluster_counts(d);
    let needed: usize = counts.iter().sum();
    let expressible = m >= needed;
    let mut assignment = vec![Cluster::Bulk; m];
    let mut summaries = Vec::new();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut start = 0;
    if expressible {
        let centers = cluster_centers(d);
        for (k, cluster) in [Cluster::Top, Cluster::Linear, Cluster::Quadratic]
            .into_iter()
            .enumerate()
        {
            let end = start + counts[k];
            assignment[start..end].fill(cluster);
            let mu = mean(&eigs[start..end]);
            summaries.push(ClusterSummary {
                cluster,
                count: counts[k],
                mean: mu,
                center: Some(centers[k]),
                rel_deviation: Some((mu - centers[k]) / centers[k]),
            });
            start = end;
        }
    }
    if start < m {
        summaries.push(ClusterSummary {
            cluster: Cluster::Bulk,
            count: m - start,
            mean: mean(&eigs[start..]),
            center: None,
            rel_deviation: None,
        });
    }
    let quadratic_rel_deviation_ntk = summaries
        .iter()
        .find(|s| s.cluster == Cluster::Quadratic)
        .map(|s| {
            let c = 1.0 / (2.0 * PI * (d as f64 + 2.0));
            (s.mean - c) / c
        });
    Ok(SpectrumClusters {
        d,
        eigenvalues: eigs.to_vec(),
        assignment,
        summaries,
        expressible,
        quadratic_rel_deviation_ntk,
    })
}

/// `D(p_v ‖ p_u) = (u − v) J (u − v)ᵀ / 2`.
pub fn kl_divergence(u: &[f64], v: &[f64], j: &FisherMatrix) -> Result<f64> {
    check_dim(j.m(), u.len())?;
    check_dim(j.m(), v.len())?;
    let diff = DVector::from_iterator(u.len(), u.iter().zip(v).map(|(a, b)| a - b));
    Ok(diff.dot(&(&j.matrix * &diff)) / 2.0)
}

/// Monte Carlo `E[(f_u(x) − f_v(x))²] / 2`.
pub fn kl_mc_oracle(
    u: &[f64],
    v: &[f64],
    w: &HiddenWeights,
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    check_dim(w.m(), u.len())?;
    check_dim(w.m(), v.len())?;
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let f = NetworkFunction::new(w, &diff)?;
    let e = gauss_l2_inner(&f, &f, w.d(), mc)?;
    Ok(McEstimate {
        value: e.value / 2.0,
        std_error: e.std_error / 2.0,
        n_samples: e.n_samples,
    })
}

/// `⟨f_u, f_v⟩` by Monte Carlo against `u J vᵀ` from the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub inner: McEstimate,
    pub exact: f64,
    /// Discrepancy in standard errors.
    pub z: f64,
}

impl IsometryReport {
    pub fn passes(&self) -> bool {
        self.inner.within(self.exact, 4.0)
    }
}

pub fn metric_isometry_check(
    u: &[f64],
    v: &[f64],
    w: &HiddenWeights,
    j: &FisherMatrix,
    mc: &MonteCarlo,
) -> Result<IsometryReport> {
    check_dim(j.m(), w.m())?;
    let fu = NetworkFunction::new(w, u)?;
    let fv = NetworkFunction::new(w, v)?;
    let inner = gauss_l2_inner(&fu, &fv, w.d(), mc)?;
    let uu = DVector::from_column_slice(u);
    let vv = DVector::from_column_slice(v);
    let exact = uu.dot(&(&j.matrix * vv));
    Ok(IsometryReport {
        inner,
        exact,
        z: inner.z_score(exact),
    })
}

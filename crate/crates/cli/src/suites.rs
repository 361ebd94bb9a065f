//! The five verification suites. Each draws every random quantity from the
//! experiment seed through fixed derivation tags, so a suite's numbers depend
//! on the configuration alone.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ntk_spectrum::approx::{
    approx_error, family_rates, gradient_flow, project, pythagoras_check, sample_complexity_report,
    simulate_modes, vspace_flow_check, ApproxModel, ModeEigenvalues, VSpaceSetup,
};
use ntk_spectrum::eigenbasis::{
    eigen_check, full_basis, gram_matrix, monomial_check, mu0_interval, mu2_interval,
    rayleigh_quotient, rotate_function, sphere_moment, EigenFunction, Family, Operator,
    Symmetrization,
};
use ntk_spectrum::fisher::{
    cluster_counts, cluster_spectrum, fisher_empirical, fisher_exact, kl_divergence, kl_mc_oracle,
    metric_isometry_check, Cluster, Provenance,
};
use ntk_spectrum::kernel::{
    ntk_mc_oracle, ntk_series, remainder_trace_bound, remainder_trace_exact, trace_estimate,
    KernelSpec, SeriesParams,
};
use ntk_spectrum::sampling::{
    derive_seed, feature_map_into, field, gaussian_into, norm, sample_network, sample_sphere,
    substream, Field, HiddenWeights, McEstimate, MonteCarlo, NetworkConfig, StreamRng,
};

use crate::config::ExperimentConfig;
use crate::report::{Check, SuiteReport};
use crate::CliError;

// derivation tags; one per independent random quantity
const TAG_PAIRS: u64 = 1;
const TAG_ORACLE: u64 = 2;
const TAG_NETWORK: u64 = 3;
const TAG_TRACE: u64 = 4;
const TAG_GRAM: u64 = 10;
const TAG_RAYLEIGH: u64 = 11;
const TAG_EIGEN: u64 = 12;
const TAG_SPHERE: u64 = 13;
const TAG_ROTATION: u64 = 14;
const TAG_MONOMIAL: u64 = 15;
const TAG_MU: u64 = 16;
const TAG_FISHER_NET: u64 = 20;
const TAG_IDENTITY_NET: u64 = 21;
const TAG_IDENTITY_VECS: u64 = 22;
const TAG_IDENTITY_MC: u64 = 23;
const TAG_APPROX_NET: u64 = 30;
const TAG_APPROX_VECS: u64 = 31;
const TAG_APPROX_MC: u64 = 32;
const TAG_FLOW_TARGET: u64 = 40;
const TAG_VSPACE: u64 = 41;

fn rng_for(seed: u64, tag: u64) -> StreamRng {
    substream(derive_seed(seed, tag), 0)
}

fn mc(n: usize, seed: u64, tag: u64) -> Result<MonteCarlo, CliError> {
    Ok(MonteCarlo::new(n, derive_seed(seed, tag))?)
}

fn gaussian_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    gaussian_into(rng, &mut v);
    v
}

fn unit_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let r = norm(&v);
        if r > 0.0 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Haar-distributed orthogonal matrix from the QR factor of a Gaussian matrix.
fn random_orthogonal(rng: &mut StreamRng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, gaussian_vec(rng, d * d));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn difference(a: McEstimate, b: McEstimate) -> McEstimate {
    McEstimate {
        value: a.value - b.value,
        std_error: a.std_error.hypot(b.std_error),
        n_samples: a.n_samples.min(b.n_samples),
    }
}

fn mean_estimate(es: &[McEstimate]) -> McEstimate {
    let n = es.len() as f64;
    McEstimate {
        value: es.iter().map(|e| e.value).sum::<f64>() / n,
        std_error: es.iter().map(|e| e.std_error.powi(2)).sum::<f64>().sqrt() / n,
        n_samples: es.iter().map(|e| e.n_samples).sum(),
    }
}

/// Series against Monte Carlo and finite-width kernels, special pairs, traces.
pub fn run_kernel_check(cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
    let k = &cfg.kernel;
    let d = k.d;
    let params = SeriesParams::default();
    let mut rep = SuiteReport::new("kernel");
    let mut rng = rng_for(cfg.seed, TAG_PAIRS);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..k.n_pairs)
        .map(|_| (gaussian_vec(&mut rng, d), gaussian_vec(&mut rng, d)))
        .collect();

    for (i, (x, y)) in pairs.iter().enumerate() {
        let series = ntk_series(x, y, &params)?;
        let oracle = ntk_mc_oracle(
            x,
            y,
            &mc(k.n_samples, cfg.seed, TAG_ORACLE)?.child(i as u64),
        )?;
        rep.push(Check::within_se(
            format!("series vs oracle, pair {i}"),
            "k(x,y) = E[relu(x.z) relu(y.z)]",
            series.value,
            oracle,
            k.k_se,
        ));
    }

    let w = sample_network(&NetworkConfig::new(
        d,
        k.m,
        derive_seed(cfg.seed, TAG_NETWORK),
    )?);
    let mut fx = vec![0.0; k.m];
    let mut fy = vec![0.0; k.m];
    for (i, (x, y)) in pairs.iter().take(5).enumerate() {
        feature_map_into(&w, x, &mut fx)?;
        feature_map_into(&w, y, &mut fy)?;
        // k_m is a mean over units of m·φ(x·w_i)φ(y·w_i)
        let mut acc = ntk_spectrum::sampling::Moments::new(1, false);
        for (a, b) in fx.iter().zip(&fy) {
            acc.push(&[k.m as f64 * a * b]);
        }
        rep.push(Check::within_se(
            format!("finite width m={} vs series, pair {i}", k.m),
            "k_m(x,y) -> k(x,y) as m grows",
            ntk_series(x, y, &params)?.value,
            acc.estimate(0),
            k.k_se,
        ));
    }

    let mut e = vec![0.0; d];
    e[0] = 2.0;
    let mut f = vec![0.0; d];
    if d > 1 {
        f[1] = 3.0;
    }
    let neg: Vec<f64> = e.iter().map(|v| -v).collect();
    rep.push(Check::within_abs(
        "diagonal k(x,x) = |x|^2/2",
        "k(x,x) = |x|^2/2",
        2.0,
        ntk_series(&e, &e, &params)?.value,
        1e-12,
    ));
    if d > 1 {
        rep.push(Check::within_abs(
            "orthogonal pair k = |x||y|/2pi",
            "k(x,y) = |x||y|/2pi for orthogonal x, y",
            6.0 / (2.0 * PI),
            ntk_series(&e, &f, &params)?.value,
            1e-12,
        ));
    }
    rep.push(Check::within_abs(
        "opposite pair k = 0",
        "k(x,-x) = 0",
        0.0,
        ntk_series(&e, &neg, &params)?.value,
        1e-12,
    ));

    let tr = mc(k.trace_samples, cfg.seed, TAG_TRACE)?;
    rep.push(Check::within_se(
        "trace of k",
        "trace of k equals d/2",
        d as f64 / 2.0,
        trace_estimate(&KernelSpec::Ntk(params), d, &tr)?,
        k.k_se,
    ));
    let rem = trace_estimate(&KernelSpec::Remainder(params), d, &tr.child(1))?;
    rep.push(Check::at_most_se(
        "remainder trace below published bound",
        "remainder trace <= (d/2)(1/2 - (3d+2)/(2pi(d+2)))",
        remainder_trace_bound(d),
        rem,
        k.k_se,
    ));
    rep.push(Check::within_se(
        "remainder trace equals d(1/4 - 3/4pi)",
        "r(x,x) = |x|^2 (1/4 - 3/4pi)",
        remainder_trace_exact(d),
        rem,
        k.k_se,
    ));
    Ok(rep)
}

/// A basis function multiplied by a constant; the corruption hook.
struct Scaled {
    f: EigenFunction,
    s: f64,
}

impl Field for Scaled {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, x: &[f64]) -> ntk_spectrum::Result<f64> {
        Ok(self.s * self.f.eval(x)?)
    }
}

fn operator_for(f: &EigenFunction, params: SeriesParams) -> Operator<'static> {
    Operator::new(KernelSpec::Ntk(params)).with_symmetrization(Symmetrization::for_function(f))
}

/// Orthonormality, eigenvalues, eigenfunction residuals, sphere moments,
/// rotation invariance and the monomial eigenfunctions of the truncated kernel.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
    let s = &cfg.spectrum;
    let d = s.d;
    let params = SeriesParams::default();
    let mut rep = SuiteReport::new("spectrum");

    let basis = full_basis(d)?;
    let last = basis.len() - 1;
    let scaled: Vec<Scaled> = basis
        .iter()
        .enumerate()
        .map(|(i, f)| Scaled {
            f: f.clone(),
            s: if s.corrupt_basis && i == last {
                1.1
            } else {
                1.0
            },
        })
        .collect();
    let gram = gram_matrix(&scaled, &mc(s.gram_samples, cfg.seed, TAG_GRAM)?)?;
    for (i, f) in basis.iter().enumerate() {
        rep.push(Check::within_se(
            format!("norm of {}", f.label()),
            "F0, F_l, F_gamma, F_ab form an orthonormal system",
            1.0,
            McEstimate {
                value: gram.values[(i, i)],
                std_error: gram.std_errors[(i, i)],
                n_samples: gram.n_samples,
            },
            s.k_se,
        ));
    }
    let mut worst = 0.0f64;
    for i in 0..basis.len() {
        for j in 0..i {
            let z = gram.values[(i, j)].abs() / gram.std_errors[(i, j)];
            worst = worst.max(if z.is_finite() { z } else { 0.0 });
        }
    }
    rep.push(Check::at_most(
        "largest off-diagonal Gram entry in standard errors",
        "F0, F_l, F_gamma, F_ab form an orthonormal system",
        s.k_se,
        worst,
    ));

    let rq = mc(s.rayleigh_samples, cfg.seed, TAG_RAYLEIGH)?;
    for (idx, l) in [0, d - 1].into_iter().enumerate() {
        let f = EigenFunction::linear(d, l)?;
        rep.push(Check::within_se(
            format!("Rayleigh quotient of {}", f.label()),
            "linear eigenfunctions have eigenvalue 1/4",
            0.25,
            rayleigh_quotient(&operator_for(&f, params), &f, &rq.child(idx as u64))?,
            s.k_se,
        ));
    }
    let mu = ModeEigenvalues::measure(d, &params, &mc(s.rayleigh_samples, cfg.seed, TAG_MU)?)?;
    rep.push(Check::interval_se(
        "mu0 within its interval",
        "(2d+1)/4pi <= mu0 <= (2d+1)/4pi + 0.013d",
        mu0_interval(d),
        mu.mu0,
        s.k_se,
    ));
    rep.push(Check::interval_se(
        "mu2 within its interval",
        "1/(2pi(d+2)) <= mu2 <= 1/(2pi(d+2)) + 0.026/(d+3)",
        mu2_interval(d),
        mu.mu2,
        s.k_se,
    ));

    let em = mc(s.eigen_samples, cfg.seed, TAG_EIGEN)?;
    let candidates = [
        EigenFunction::f0(d)?,
        EigenFunction::linear(d, 0)?,
        EigenFunction::gamma(d, 0)?,
        EigenFunction::cross(d, 0, 1)?,
    ];
    let mut tol_sq = 0.0;
    for (i, f) in candidates.iter().enumerate() {
        let r = eigen_check(
            &operator_for(f, params),
            f,
            s.n_test_points,
            &em.child(i as u64),
        )?;
        tol_sq += r.tolerance.powi(2);
        rep.push(
            Check::at_most(
                format!("eigenfunction residual of {}", f.label()),
                "K f = lambda f for the explicit eigenfunctions",
                s.residual_factor * r.tolerance,
                r.residual_rel,
            )
            .with_std_error(r.tolerance),
        );
    }
    let control = field(d, |x: &[f64]| Ok(x[0] * norm(x)));
    let op =
        Operator::new(KernelSpec::Ntk(params)).with_symmetrization(Symmetrization::Reflections(1));
    let r = eigen_check(
        &op,
        &control,
        s.n_test_points,
        &em.child(candidates.len() as u64),
    )?;
    // compared with the noise level of the true eigenfunctions
    let pooled = (tol_sq / candidates.len() as f64).sqrt();
    rep.push(
        Check::at_least(
            "residual of the control x1|x|",
            "x1|x| is not an eigenfunction",
            s.control_factor * pooled,
            r.residual_rel,
        )
        .with_std_error(r.tolerance),
    );

    let points: Vec<Vec<f64>> =
        sample_sphere(d, s.sphere_points, derive_seed(cfg.seed, TAG_SPHERE)).collect();
    let sm = mc(s.sphere_samples, cfg.seed, TAG_SPHERE)?;
    let mut stream = 0;
    for f in [EigenFunction::cross(d, 0, 1)?, EigenFunction::gamma(d, 0)?] {
        for n in [1usize, 2, 3] {
            let mut ratios = Vec::new();
            for xb in &points {
                let m = sphere_moment(xb, n, &f, &sm.child(stream))?;
                stream += 1;
                let fx = f.eval(xb)?;
                ratios.push((m.value / fx, m.std_error / fx.abs()));
            }
            let wsum: f64 = ratios.iter().map(|(_, se)| se.powi(-2)).sum();
            let mean = ratios.iter().map(|(r, se)| r / se.powi(2)).sum::<f64>() / wsum;
            let worst = ratios
                .iter()
                .map(|(r, se)| (r - mean).abs() / se)
                .fold(0.0, f64::max);
            rep.push(
                Check::at_most(
                    format!("moment n={n} of {} proportional to f", f.label()),
                    "sphere moment of order 2n+2 is proportional to f(x)",
                    s.k_se,
                    worst,
                )
                .with_std_error(wsum.powf(-0.5)),
            );
        }
    }
    let f = EigenFunction::linear(d, 0)?;
    for n in [2usize, 3] {
        for (j, xb) in points.iter().take(3).enumerate() {
            let m = sphere_moment(xb, n, &f, &sm.child(stream))?;
            stream += 1;
            rep.push(Check::within_se(
                format!("moment n={n} of F_1 at point {j}"),
                "odd functions have vanishing even moments",
                0.0,
                m,
                s.k_se,
            ));
        }
    }

    let mut rng = rng_for(cfg.seed, TAG_ROTATION);
    let u = random_orthogonal(&mut rng, d);
    let rot = mc(s.rayleigh_samples, cfg.seed, TAG_ROTATION)?;
    let plain = Operator::new(KernelSpec::Ntk(params));
    for (i, f) in [EigenFunction::cross(d, 0, 1)?, EigenFunction::linear(d, 0)?]
        .into_iter()
        .enumerate()
    {
        let base = rayleigh_quotient(&plain, &f, &rot.child(2 * i as u64))?;
        let label = f.label();
        let g = rotate_function(f, u.clone())?;
        let turned = rayleigh_quotient(&plain, &g, &rot.child(2 * i as u64 + 1))?;
        rep.push(Check::within_se(
            format!("rotated {label} keeps its eigenvalue"),
            "rotations of eigenfunctions are eigenfunctions",
            0.0,
            difference(turned, base),
            s.k_se,
        ));
    }

    let r = monomial_check(
        6,
        vec![0, 1, 2, 3],
        1,
        s.n_test_points,
        &mc(s.eigen_samples, cfg.seed, TAG_MONOMIAL)?,
    )?;
    rep.push(
        Check::at_most(
            "x1x2x3x4/|x|^3 eigenfunction of k^(1), d=6",
            "normalized monomials are eigenfunctions of the truncated kernel",
            s.residual_factor * r.tolerance,
            r.residual_rel,
        )
        .with_std_error(r.tolerance),
    );
    Ok(rep)
}

fn sample_trace_se(d: usize, m: usize) -> f64 {
    // Σ|w_i|²/2 sums d·m terms z²/(2m), each of variance 1/(2m²)
    (d as f64 / (2.0 * m as f64)).sqrt()
}

/// Cluster structure of exact Fisher matrices plus the KL and isometry identities.
pub fn run_fisher(cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
    let f = &cfg.fisher;
    let (d, m) = (f.d, f.m);
    let params = SeriesParams::default();
    let mut rep = SuiteReport::new("fisher");
    let counts = cluster_counts(d);
    let capacity: usize = counts.iter().sum();
    let separation_expected = m >= 20 * d * d;
    let names = ["top", "linear", "quadratic"];
    let clusters = [Cluster::Top, Cluster::Linear, Cluster::Quadratic];
    let mut within = [0usize; 3];
    let mut counts_ok = 0;
    let mut separated = 0;

    for s in 0..f.n_seeds {
        let net_seed = derive_seed(derive_seed(cfg.seed, TAG_FISHER_NET), s as u64);
        let w = sample_network(&NetworkConfig::new(d, m, net_seed)?);
        let j = fisher_exact(&w, &params)?;
        let col_sq: f64 = (0..m).map(|i| norm(w.column(i)).powi(2) / 2.0).sum();
        rep.push(Check::within_abs(
            format!("seed {s}: trace equals sum |w_i|^2/2"),
            "J_ii = |w_i|^2/2",
            col_sq,
            j.trace(),
            1e-12 * col_sq.max(1.0),
        ));
        rep.push(Check::within_se(
            format!("seed {s}: trace near d/2"),
            "E trace J = d/2",
            d as f64 / 2.0,
            McEstimate {
                value: j.trace(),
                std_error: sample_trace_se(d, m),
                n_samples: d * m,
            },
            f.k_se,
        ));
        if let Provenance::ExactSeries {
            max_tail_bound,
            unconverged,
        } = j.provenance
        {
            rep.push(Check::info(
                format!("seed {s}: largest series truncation bound ({unconverged} entries above tolerance)"),
                "series truncation",
                0.0,
                max_tail_bound,
            ));
        }
        let eigs = j.eigenvalues(1e-12)?;
        let c = cluster_spectrum(&eigs, d)?;
        rep.push(Check::at_least(
            format!("seed {s}: width holds the predicted clusters"),
            "cluster multiplicities 1, d, (d-1) + d(d-1)/2",
            capacity as f64,
            m as f64,
        ));
        if !c.expressible {
            continue;
        }
        counts_ok += 1;
        for (k, cl) in clusters.iter().enumerate() {
            let sm = c
                .summary(*cl)
                .expect("expressible spectrum has all clusters");
            let center = sm.center.expect("predicted cluster");
            let tol = f.cluster_tolerances[k];
            let ok = (sm.mean - center).abs() <= tol * center;
            within[k] += usize::from(ok);
            rep.push(Check::info(
                format!(
                    "seed {s}: {} cluster mean ({} eigenvalues)",
                    names[k], sm.count
                ),
                "cluster centres (2d+1)/4pi, 1/4, 1/(2pi d)",
                center,
                sm.mean,
            ));
        }
        if let Some(dev) = c.quadratic_rel_deviation_ntk {
            rep.push(Check::info(
                format!("seed {s}: quadratic mean deviation from 1/(2pi(d+2))"),
                "quadratic eigenvalue 1/(2pi(d+2)) of the kernel",
                0.0,
                dev,
            ));
        }
        if let Some(sep) = c.bulk_separated() {
            separated += usize::from(sep);
            let top_bulk = c
                .eigenvalues
                .iter()
                .zip(&c.assignment)
                .find(|(_, a)| **a == Cluster::Bulk)
                .map(|(v, _)| *v)
                .unwrap_or(0.0);
            let q = c.summary(Cluster::Quadratic).expect("quadratic").mean;
            rep.push(Check::info(
                format!("seed {s}: largest bulk eigenvalue vs quadratic mean"),
                "bulk lies below the quadratic cluster",
                q,
                top_bulk,
            ));
        }
    }

    let majority = (f.n_seeds / 2 + 1) as f64;
    if counts_ok > 0 {
        for k in 0..3 {
            rep.push(Check::at_least(
                format!(
                    "{} cluster mean within {}% (seeds passing of {})",
                    names[k],
                    f.cluster_tolerances[k] * 100.0,
                    f.n_seeds
                ),
                "cluster centres (2d+1)/4pi, 1/4, 1/(2pi d)",
                majority,
                within[k] as f64,
            ));
        }
        let sep = format!(
            "bulk separated from quadratic cluster (seeds of {})",
            f.n_seeds
        );
        let anchor = "bulk lies below the quadratic cluster";
        rep.push(if separation_expected {
            Check::at_least(sep, anchor, majority, separated as f64)
        } else {
            Check::info(
                format!("{sep}; m < 20 d^2, not required"),
                anchor,
                majority,
                separated as f64,
            )
        });
    }

    identity_checks(cfg, &mut rep)?;
    Ok(rep)
}

fn identity_checks(cfg: &ExperimentConfig, rep: &mut SuiteReport) -> Result<(), CliError> {
    let f = &cfg.fisher;
    let (d, m) = (f.identity_d, f.identity_m);
    let params = SeriesParams::default();
    let w = sample_network(&NetworkConfig::new(
        d,
        m,
        derive_seed(cfg.seed, TAG_IDENTITY_NET),
    )?);
    let j = fisher_exact(&w, &params)?;

    let e = j.eigen(1e-13)?;
    rep.push(Check::at_most(
        "eigendecomposition reconstruction error",
        "J = U diag(lambda) U^T",
        1e-8,
        e.reconstruction_error(&j.matrix),
    ));
    rep.push(Check::at_most(
        "eigenvector orthonormality error",
        "J = U diag(lambda) U^T",
        1e-8,
        e.orthonormality_error(),
    ));

    let emc = mc(f.empirical_samples, cfg.seed, TAG_IDENTITY_MC)?;
    let (entries, agree) = empirical_entry_moments(&w, &emc)?;
    rep.push(Check::at_most(
        "empirical Fisher entries, largest |z| against the series",
        "J = E[X^T X] equals the kernel on weight columns",
        f.k_se + 1.0,
        worst_z(&entries, &j.matrix),
    ));
    rep.push(Check::at_most(
        "empirical Fisher matches its per-entry means",
        "J_hat = (1/n) sum X^T X",
        1e-12,
        agree,
    ));

    let mut rng = rng_for(cfg.seed, TAG_IDENTITY_VECS);
    let scale = 1.0 / (m as f64).sqrt();
    for p in 0..f.n_pairs {
        let u: Vec<f64> = gaussian_vec(&mut rng, m)
            .iter()
            .map(|x| x * scale)
            .collect();
        let v: Vec<f64> = gaussian_vec(&mut rng, m)
            .iter()
            .map(|x| x * scale)
            .collect();
        let kl = kl_divergence(&u, &v, &j)?;
        let oracle = kl_mc_oracle(&u, &v, &w, &emc.child(1 + p as u64))?;
        rep.push(Check::within_se(
            format!("KL pair {p}"),
            "D(p_v || p_u) = (u-v) J (u-v)^T / 2",
            kl,
            oracle,
            f.k_se,
        ));
        let iso = metric_isometry_check(&u, &v, &w, &j, &emc.child(1000 + p as u64))?;
        rep.push(Check::within_se(
            format!("isometry pair {p}"),
            "<f_u, f_v> = u J v^T",
            iso.exact,
            iso.inner,
            f.k_se,
        ));
    }
    Ok(())
}

/// Per-entry Monte Carlo moments of `X_i X_j` on the same stream as the
/// empirical matrix. Returns the estimates and the largest difference between
/// their means and the empirical matrix, relative to its largest entry.
fn empirical_entry_moments(
    w: &HiddenWeights,
    mc: &MonteCarlo,
) -> Result<(Vec<McEstimate>, f64), CliError> {
    let (d, m) = (w.d(), w.m());
    let width = m * (m + 1) / 2;
    let moments = mc.moments(width, false, |rng, out| {
        let mut x = vec![0.0; d];
        let mut feats = vec![0.0; m];
        gaussian_into(rng, &mut x);
        feature_map_into(w, &x, &mut feats)?;
        let mut p = 0;
        for i in 0..m {
            for j in i..m {
                out[p] = feats[i] * feats[j];
                p += 1;
            }
        }
        Ok(())
    })?;
    let emp = fisher_empirical(w, mc)?.matrix;
    let scale = emp.amax().max(f64::MIN_POSITIVE);
    let mut est = Vec::with_capacity(width);
    let mut diff = 0.0f64;
    let mut p = 0;
    for i in 0..m {
        for j in i..m {
            let e = moments.estimate(p);
            diff = diff.max((e.value - emp[(i, j)]).abs() / scale);
            est.push(e);
            p += 1;
        }
    }
    Ok((est, diff))
}

fn worst_z(est: &[McEstimate], exact: &DMatrix<f64>) -> f64 {
    let m = exact.nrows();
    let mut worst = 0.0f64;
    let mut p = 0;
    for i in 0..m {
        for j in i..m {
            worst = worst.max(est[p].z_score(exact[(i, j)]).abs());
            p += 1;
        }
    }
    worst
}

/// Projection onto the explicit modes, residual bound and Pythagoras identity.
pub fn run_approx(cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
    let a = &cfg.approx;
    let d = a.d;
    let params = SeriesParams::default();
    let mut rep = SuiteReport::new("approx");
    let mu = ModeEigenvalues::measure(d, &params, &mc(a.mu_samples, cfg.seed, TAG_MU)?)?;
    rep.push(Check::interval_se(
        "mu0 within its interval",
        "(2d+1)/4pi <= mu0 <= (2d+1)/4pi + 0.013d",
        mu0_interval(d),
        mu.mu0,
        a.k_se,
    ));
    rep.push(Check::interval_se(
        "mu2 within its interval",
        "1/(2pi(d+2)) <= mu2 <= 1/(2pi(d+2)) + 0.026/(d+3)",
        mu2_interval(d),
        mu.mu2,
        a.k_se,
    ));

    let w = sample_network(&NetworkConfig::new(
        d,
        a.m,
        derive_seed(cfg.seed, TAG_APPROX_NET),
    )?);
    let mut rng = rng_for(cfg.seed, TAG_APPROX_VECS);
    let base = mc(a.n_samples, cfg.seed, TAG_APPROX_MC)?;
    let mut residuals = Vec::new();
    let mut norms = Vec::new();
    for i in 0..a.n_vectors {
        let v = unit_vec(&mut rng, a.m);
        let stream = base.child(i as u64);
        let model = project(&v, &w, mu, &stream.child(0))?;
        residuals.push(approx_error(&v, &w, &model, &stream.child(1))?);
        let py = pythagoras_check(&v, &w, &model, &stream.child(2))?;
        norms.push(py.norm_sq);
        rep.push(Check::within_se(
            format!("vector {i}: |f|^2 - |f^(D)|^2 - |r|^2"),
            "residual is orthogonal to the explicit modes",
            0.0,
            py.gap,
            a.k_se,
        ));
        let tn = model.theta_norm();
        let tn_se = if tn > 0.0 {
            model
                .theta
                .iter()
                .zip(&model.theta_se)
                .map(|(t, s)| (t * s).powi(2))
                .sum::<f64>()
                .sqrt()
                / tn
        } else {
            0.0
        };
        rep.push(Check::at_most_se(
            format!("vector {i}: |theta| at most 1"),
            "|v| <= 1 implies |theta| <= 1",
            1.0,
            McEstimate {
                value: tn,
                std_error: tn_se,
                n_samples: model.n_samples,
            },
            a.k_se,
        ));
    }
    let bound = a.residual_bound.unwrap_or_else(|| remainder_trace_bound(d));
    rep.push(Check::at_most_se(
        format!("mean |f_v - f^(D)|^2 over {} unit vectors", a.n_vectors),
        "|r_D|^2 is at most the remainder trace",
        bound,
        mean_estimate(&residuals),
        a.k_se,
    ));

    let mean_norm = mean_estimate(&norms);
    rep.push(Check::info(
        "mean residual as a fraction of mean |f_v|^2",
        "|r_D|^2 is at most the remainder trace",
        0.0,
        mean_estimate(&residuals).value / mean_norm.value,
    ));

    let table = sample_complexity_report(d)?;
    for (fam, mult) in &table {
        rep.push(Check::info(
            format!("sample-size multiplier, {fam:?} modes"),
            "sample size proportional to 1/eigenvalue",
            0.0,
            *mult,
        ));
    }
    let ordered = table.windows(2).filter(|p| p[0].1 >= p[1].1).count();
    rep.push(Check::at_most(
        "multipliers ordered 1/mu0 < 4 < 1/mu2 (violations)",
        "sample size proportional to 1/eigenvalue",
        0.0,
        ordered as f64,
    ));
    Ok(rep)
}

/// Mode-wise flow in θ coordinates and the output-weight descent it predicts.
pub fn run_flow(cfg: &ExperimentConfig) -> Result<SuiteReport, CliError> {
    let fl = &cfg.flow;
    let d = fl.d;
    let params = SeriesParams::default();
    let mut rep = SuiteReport::new("flow");
    let mu = ModeEigenvalues::measure(d, &params, &mc(fl.mu_samples, cfg.seed, TAG_MU)?)?;

    let zero = ApproxModel::zeros(mu);
    let mut rng = rng_for(cfg.seed, TAG_FLOW_TARGET);
    let target = ApproxModel::new(unit_vec(&mut rng, zero.theta.len()), mu)?;
    let trace = gradient_flow(&target, &zero, fl.eta, fl.n_steps)?;
    let increases = trace.kl.windows(2).filter(|w| w[1] > w[0]).count();
    rep.push(Check::at_most(
        "KL increases along the flow",
        "D = (1/2) sum lambda_i (theta_hat_i - theta_i)^2 decreases",
        0.0,
        increases as f64,
    ));
    let rates = family_rates(&trace, &zero.families());
    let rate = |fam: Family| rates.iter().find(|(f, _)| *f == fam).map(|(_, r)| *r);
    let lam = |fam: Family| mu.for_family(fam);
    let pairs = [
        (Family::Radial, Family::Quadratic, "radial/quadratic"),
        (Family::Radial, Family::Linear, "radial/linear"),
        (Family::Linear, Family::Quadratic, "linear/quadratic"),
    ];
    for (a, b, name) in pairs {
        if let (Some(ra), Some(rb)) = (rate(a), rate(b)) {
            rep.push(Check::within_rel(
                format!("decay-rate ratio {name}"),
                "modes decay at rates proportional to their eigenvalues",
                lam(a) / lam(b),
                ra / rb,
                fl.rate_tolerance,
            ));
        }
    }
    let mut by_lambda: Vec<(f64, f64)> = rates.iter().map(|(f, r)| (lam(*f), *r)).collect();
    by_lambda.sort_by(|x, y| x.0.total_cmp(&y.0));
    let violations = by_lambda.windows(2).filter(|p| p[1].1 <= p[0].1).count();
    rep.push(Check::at_most(
        "decay rates not increasing with eigenvalue (violations)",
        "modes decay at rates proportional to their eigenvalues",
        0.0,
        violations as f64,
    ));

    let single = simulate_modes(&[1.0], &[0.0], &[0.25], 0.1, 10)?;
    let worst = (0..10)
        .map(|k| (single.step_ratio(&[1.0], 0, k) - 0.975).abs())
        .fold(0.0, f64::max);
    rep.push(Check::within_abs(
        "single mode lambda=1/4, eta=0.1: error ratio per step",
        "theta_i <- theta_i + eta lambda_i (theta_hat_i - theta_i)",
        0.0,
        worst,
        1e-12,
    ));
    let still = gradient_flow(&ApproxModel::zeros(mu), &zero, fl.eta, fl.n_steps)?;
    let moved = still
        .trajectories
        .iter()
        .flatten()
        .fold(0.0f64, |a, t| a.max(t.abs()));
    rep.push(Check::at_most(
        "zero target from zero start: largest coefficient",
        "the target is a fixed point of the flow",
        0.0,
        moved,
    ));

    let w = sample_network(&NetworkConfig::new(
        fl.vspace_d,
        fl.vspace_m,
        derive_seed(cfg.seed, TAG_VSPACE),
    )?);
    let mut rng = rng_for(cfg.seed, TAG_VSPACE);
    let v_target = unit_vec(&mut rng, fl.vspace_m);
    let v_init = vec![0.0; fl.vspace_m];
    let report = vspace_flow_check(
        &VSpaceSetup {
            weights: &w,
            target: &v_target,
            init: &v_init,
            eta: fl.vspace_eta,
            n_steps: fl.vspace_steps,
        },
        &params,
        &mc(fl.vspace_samples, cfg.seed, TAG_VSPACE)?,
    )?;
    for (cl, dev) in &report.deviations {
        let name = format!(
            "output-weight descent vs diagonal flow, {cl:?} modes, {} steps",
            report.n_steps
        );
        let anchor = "theta = vU diagonalizes J";
        rep.push(if *cl == Cluster::Bulk {
            Check::info(name, anchor, fl.vspace_tolerance, *dev)
        } else {
            Check::at_most(name, anchor, fl.vspace_tolerance, *dev)
        });
    }
    Ok(rep)
}

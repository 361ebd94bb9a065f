//! The truncated model `f^(D) = √μ0 θ0 F0 + Σ ½ θ_l F_l + √μ2 (Σ θ_γ F_γ + Σ θ_αβ F_αβ)`,
//! projection of finite-width networks onto it, and the mode-wise gradient flow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigenbasis::{
    basis_size, full_basis, mu0_interval, mu2_interval, rayleigh_quotient, EigenFunction, Family,
    Operator, Symmetrization,
};
use crate::error::{check_dim, Error, Result};
use crate::fisher::{cluster_counts, fisher_empirical, fisher_exact, Cluster, FisherMatrix};
use crate::kernel::{KernelSpec, SeriesParams};
use crate::linalg::Eigen;
use crate::sampling::{
    gaussian_into, norm, Field, HiddenWeights, McEstimate, MonteCarlo, NetworkFunction,
};

/// Measured `μ0` (radial mode) and `μ2` (quadratic modes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEigenvalues {
    pub d: usize,
    pub mu0: McEstimate,
    pub mu2: McEstimate,
}

impl ModeEigenvalues {
    /// Rayleigh quotients of `F0` and `F_{12}` under the full kernel.
    pub fn measure(d: usize, params: &SeriesParams, mc: &MonteCarlo) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidConfig("mode eigenvalues need d >= 2".into()));
        }
        let quotient = |f: EigenFunction, mc: &MonteCarlo| {
            let op = Operator::new(KernelSpec::Ntk(*params))
                .with_symmetrization(Symmetrization::for_function(&f));
            rayleigh_quotient(&op, &f, mc)
        };
        let mu0 = quotient(EigenFunction::f0(d)?, &mc.child(0))?;
        let mu2 = quotient(EigenFunction::cross(d, 0, 1)?, &mc.child(1))?;
        Ok(Self { d, mu0, mu2 })
    }

    /// Interval midpoints, used where no measurement is wanted.
    pub fn midpoints(d: usize) -> Self {
        let mid = |(lo, hi): (f64, f64)| McEstimate::exact((lo + hi) / 2.0);
        Self {
            d,
            mu0: mid(mu0_interval(d)),
            mu2: mid(mu2_interval(d)),
        }
    }

    pub fn for_family(&self, family: Family) -> f64 {
        match family {
            Family::Radial => self.mu0.value,
            Family::Linear => 0.25,
            _ => self.mu2.value,
        }
    }

    pub fn mu0_in_interval(&self, k: f64) -> bool {
        let (lo, hi) = mu0_interval(self.d);
        self.mu0.within_interval(lo, hi, k)
    }

    pub fn mu2_in_interval(&self, k: f64) -> bool {
        let (lo, hi) = mu2_interval(self.d);
        self.mu2.within_interval(lo, hi, k)
    }
}

/// Coefficients `θ` over the explicit basis, ordered as [`full_basis`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxModel {
    pub d: usize,
    pub theta: Vec<f64>,
    pub theta_se: Vec<f64>,
    pub mu: ModeEigenvalues,
    /// Samples behind `theta`; zero for models built by hand.
    pub n_samples: usize,
}

impl ApproxModel {
    pub fn new(theta: Vec<f64>, mu: ModeEigenvalues) -> Result<Self> {
        check_dim(basis_size(mu.d), theta.len())?;
        Ok(Self {
            d: mu.d,
            theta_se: vec![0.0; theta.len()],
            theta,
            mu,
            n_samples: 0,
        })
    }

    pub fn zeros(mu: ModeEigenvalues) -> Self {
        let n = basis_size(mu.d);
        Self::new(vec![0.0; n], mu).expect("length matches basis")
    }

    pub fn families(&self) -> Vec<Family> {
        full_basis(self.d)
            .expect("d validated on construction")
            .iter()
            .map(|f| f.family())
            .collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.families()
            .into_iter()
            .map(|f| self.mu.for_family(f))
            .collect()
    }

    pub fn theta_norm(&self) -> f64 {
        norm(&self.theta)
    }

    /// `√λ_i θ_i`, the coefficient of `F_i` in `f^(D)`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.eigenvalues()
            .iter()
            .zip(&self.theta)
            .map(|(l, t)| l.sqrt() * t)
            .collect()
    }

    pub fn reconstruction(&self) -> Reconstruction {
        Reconstruction {
            basis: full_basis(self.d).expect("d validated on construction"),
            coefficients: self.coefficients(),
        }
    }
}

/// `f^(D)` as a field.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    basis: Vec<EigenFunction>,
    coefficients: Vec<f64>,
}

impl Field for Reconstruction {
    fn dim(&self) -> usize {
        self.basis[0].dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (f, c) in self.basis.iter().zip(&self.coefficients) {
            s += c * f.eval(x)?;
        }
        Ok(s)
    }
}

/// Projects any field onto the explicit basis.
pub fn project_field<F: Field>(f: &F, mu: ModeEigenvalues, mc: &MonteCarlo) -> Result<ApproxModel> {
    let d = mu.d;
    check_dim(d, f.dim())?;
    let basis = full_basis(d)?;
    let k = basis.len();
    let m = mc.moments(k, false, |rng, out| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        let fx = f.eval(&x)?;
        for (o, b) in out.iter_mut().zip(&basis) {
            *o = fx * b.eval(&x)?;
        }
        Ok(())
    })?;
    let lambdas: Vec<f64> = basis.iter().map(|b| mu.for_family(b.family())).collect();
    let (theta, theta_se) = (0..k)
        .map(|i| {
            let e = m.estimate(i);
            let s = lambdas[i].sqrt();
            (e.value / s, e.std_error / s)
        })
        .unzip();
    Ok(ApproxModel {
        d,
        theta,
        theta_se,
        mu,
        n_samples: m.count(),
    })
}

/// `θ_i = ⟨f_v, F_i⟩ / √λ_i`. A vector longer than one is accepted; check
/// [`ApproxModel::theta_norm`] against the unit-ball constraint.
pub fn project(
    v: &[f64],
    w: &HiddenWeights,
    mu: ModeEigenvalues,
    mc: &MonteCarlo,
) -> Result<ApproxModel> {
    check_dim(mu.d, w.d())?;
    project_field(&NetworkFunction::new(w, v)?, mu, mc)
}

/// `‖f_v − f^(D)‖²` by Monte Carlo on the given stream.
pub fn approx_error(
    v: &[f64],
    w: &HiddenWeights,
    model: &ApproxModel,
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    let f = NetworkFunction::new(w, v)?;
    let g = model.reconstruction();
    check_dim(model.d, w.d())?;
    let d = model.d;
    mc.estimate(|rng| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        let r = f.eval(&x)? - g.eval(&x)?;
        Ok(r * r)
    })
}

/// `‖f‖² = ‖f^(D)‖² + ‖f − f^(D)‖²` evaluated term by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PythagorasReport {
    pub norm_sq: McEstimate,
    pub model_norm_sq: McEstimate,
    pub residual_sq: McEstimate,
    /// `‖f‖² − ‖f^(D)‖² − ‖r‖²` with the projection noise of the coefficients folded
    /// into its standard error.
    pub gap: McEstimate,
}

impl PythagorasReport {
    pub fn passes(&self, k: f64) -> bool {
        self.gap.within(0.0, k)
    }
}

/// Evaluates all three norms on `mc`, which should be independent of the
/// stream the model was projected on.
pub fn pythagoras_check(
    v: &[f64],
    w: &HiddenWeights,
    model: &ApproxModel,
    mc: &MonteCarlo,
) -> Result<PythagorasReport> {
    check_dim(model.d, w.d())?;
    let f = NetworkFunction::new(w, v)?;
    let g = model.reconstruction();
    let d = model.d;
    let m = mc.moments(4, false, |rng, out| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        let fx = f.eval(&x)?;
        let gx = g.eval(&x)?;
        let r = fx - gx;
        out[0] = fx * fx;
        out[1] = gx * gx;
        out[2] = r * r;
        out[3] = fx * fx - gx * gx - r * r;
        Ok(())
    })?;
    // ⟨f^(D), r⟩ = Σ c_i (c*_i − c_i): coefficient noise enters at first order
    let coef_var: f64 = model
        .coefficients()
        .iter()
        .zip(model.theta_se.iter().zip(model.eigenvalues()))
        .map(|(c, (se, l))| 4.0 * c * c * se * se * l)
        .sum();
    let mut gap = m.estimate(3);
    gap.std_error = (gap.std_error.powi(2) + coef_var).sqrt();
    Ok(PythagorasReport {
        norm_sq: m.estimate(0),
        model_norm_sq: m.estimate(1),
        residual_sq: m.estimate(2),
        gap,
    })
}

/// Discrete flow `θ ← θ + η λ (θ̂ − θ)` sampled at every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrace {
    pub eta: f64,
    pub lambdas: Vec<f64>,
    pub times: Vec<f64>,
    /// `trajectories[k][i]`: coefficient `i` after `k` steps.
    pub trajectories: Vec<Vec<f64>>,
    /// `½ Σ λ_i (θ̂_i − θ_i)²` after each step.
    pub kl: Vec<f64>,
    /// Continuous-time decay rate of `|θ_i − θ̂_i|`; `None` when the mode starts at its target.
    pub rates: Vec<Option<f64>>,
}

impl FlowTrace {
    /// Error `θ̂ − θ` ratio between consecutive steps for one mode.
    pub fn step_ratio(&self, target: &[f64], mode: usize, step: usize) -> f64 {
        let e0 = target[mode] - self.trajectories[step][mode];
        let e1 = target[mode] - self.trajectories[step + 1][mode];
        e1 / e0
    }

    pub fn kl_non_increasing(&self) -> bool {
        self.kl.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Divergence threshold relative to the initial error scale.
const BLOWUP: f64 = 1e8;

/// Relative error level below which a mode counts as converged for rate fitting.
const ROUNDOFF: f64 = 1e-10;

pub fn simulate_modes(
    target: &[f64],
    init: &[f64],
    lambdas: &[f64],
    eta: f64,
    n_steps: usize,
) -> Result<FlowTrace> {
    check_dim(target.len(), init.len())?;
    check_dim(target.len(), lambdas.len())?;
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    if let Some(i) = lambdas.iter().position(|l| *l < 0.0 || eta * l >= 2.0) {
        return Err(Error::Unstable { step: 0, mode: i });
    }
    let kl_of = |theta: &[f64]| {
        0.5 * theta
            .iter()
            .zip(target)
            .zip(lambdas)
            .map(|((t, h), l)| l * (h - t) * (h - t))
            .sum::<f64>()
    };
    let scale = init
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .fold(1.0f64, f64::max);
    let mut theta = init.to_vec();
    let mut trajectories = vec![theta.clone()];
    let mut kl = vec![kl_of(&theta)];
    for step in 1..=n_steps {
        for (i, t) in theta.iter_mut().enumerate() {
            *t += eta * lambdas[i] * (target[i] - *t);
            if !t.is_finite() || (*t - target[i]).abs() > BLOWUP * scale {
                return Err(Error::Unstable { step, mode: i });
            }
        }
        kl.push(kl_of(&theta));
        trajectories.push(theta.clone());
    }
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * eta).collect();
    let rates = (0..target.len())
        .map(|i| {
            // Errors this close to roundoff of θ̂ carry no rate information.
            let floor = ROUNDOFF * target[i].abs().max((target[i] - init[i]).abs());
            let pts: Vec<(f64, f64)> = trajectories
                .iter()
                .zip(&times)
                .map(|(th, t)| (*t, (target[i] - th[i]).abs()))
                .filter(|(_, e)| *e > floor)
                .map(|(t, e)| (t, e.ln()))
                .collect();
            decay_rate(&pts)
        })
        .collect();
    Ok(FlowTrace {
        eta,
        lambdas: lambdas.to_vec(),
        times,
        trajectories,
        kl,
        rates,
    })
}

/// Negated least-squares slope of `ln |error|` against time.
fn decay_rate(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    Some(-sxy / sxx)
}

/// Flow from `init` towards `target` with the models' mode eigenvalues.
pub fn gradient_flow(
    target: &ApproxModel,
    init: &ApproxModel,
    eta: f64,
    n_steps: usize,
) -> Result<FlowTrace> {
    check_dim(target.d, init.d)?;
    simulate_modes(
        &target.theta,
        &init.theta,
        &target.eigenvalues(),
        eta,
        n_steps,
    )
}

/// Mean fitted rate per family, in family order radial, linear, quadratic.
pub fn family_rates(trace: &FlowTrace, families: &[Family]) -> Vec<(Family, f64)> {
    [Family::Radial, Family::Linear, Family::Quadratic]
        .into_iter()
        .filter_map(|fam| {
            let rs: Vec<f64> = families
                .iter()
                .zip(&trace.rates)
                .filter(|(f, _)| **f == fam)
                .filter_map(|(_, r)| *r)
                .collect();
            (!rs.is_empty()).then(|| (fam, rs.iter().sum::<f64>() / rs.len() as f64))
        })
        .collect()
}

/// Gradient descent on the empirical squared loss in output-weight space,
/// compared with the diagonal flow in the eigenbasis of the exact Fisher matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VSpaceReport {
    pub n_steps: usize,
    pub eta: f64,
    /// Per cluster: largest `‖e_k − ê_k‖ / ‖e_0‖` over the steps, `e` the
    /// projected error of descent and `ê` the diagonal prediction.
    pub deviations: Vec<(Cluster, f64)>,
}

impl VSpaceReport {
    pub fn max_deviation(&self, clusters: &[Cluster]) -> f64 {
        self.deviations
            .iter()
            .filter(|(c, _)| clusters.contains(c))
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

pub struct VSpaceSetup<'a> {
    pub weights: &'a HiddenWeights,
    pub target: &'a [f64],
    pub init: &'a [f64],
    pub eta: f64,
    pub n_steps: usize,
}

/// `v ← v − η Ĵ (v − v̂)` with `Ĵ` built from `mc`; errors projected on the
/// eigenvectors of the exact `J` and grouped by descending-rank cluster.
pub fn vspace_flow_check(
    setup: &VSpaceSetup<'_>,
    params: &SeriesParams,
    mc: &MonteCarlo,
) -> Result<VSpaceReport> {
    let w = setup.weights;
    let m = w.m();
    check_dim(m, setup.target.len())?;
    check_dim(m, setup.init.len())?;
    let exact: FisherMatrix = fisher_exact(w, params)?;
    let eig: Eigen = exact.eigen(1e-12)?;
    let j_hat = fisher_empirical(w, mc)?.matrix;
    let max_l = eig.values.max();
    if setup.eta * max_l >= 2.0 {
        return Err(Error::Unstable { step: 0, mode: 0 });
    }

    let target = DVector::from_column_slice(setup.target);
    let mut v = DVector::from_column_slice(setup.init);
    let ut: DMatrix<f64> = eig.vectors.transpose();
    let e0 = &ut * (&v - &target);

    let d = w.d();
    let counts = cluster_counts(d);
    let mut labels = vec![Cluster::Bulk; m];
    if m >= counts.iter().sum::<usize>() {
        let mut start = 0;
        for (c, n) in [Cluster::Top, Cluster::Linear, Cluster::Quadratic]
            .into_iter()
            .zip(counts)
        {
            labels[start..start + n].fill(c);
            start += n;
        }
    }
    let clusters: Vec<Cluster> = [
        Cluster::Top,
        Cluster::Linear,
        Cluster::Quadratic,
        Cluster::Bulk,
    ]
    .into_iter()
    .filter(|c| labels.contains(c))
    .collect();
    let group_norm = |x: &DVector<f64>, c: Cluster| {
        labels
            .iter()
            .zip(x.iter())
            .filter(|(l, _)| **l == c)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let base: Vec<f64> = clusters.iter().map(|c| group_norm(&e0, *c)).collect();
    let mut worst = vec![0.0f64; clusters.len()];
    for k in 1..=setup.n_steps {
        let grad = &j_hat * (&v - &target);
        v -= setup.eta * grad;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Unstable { step: k, mode: 0 });
        }
        let e = &ut * (&v - &target);
        let predicted = DVector::from_iterator(
            m,
            e0.iter()
                .zip(eig.values.iter())
                .map(|(e, l)| e * (1.0 - setup.eta * l).powi(k as i32)),
        );
        let diff = e - predicted;
        for (ci, c) in clusters.iter().enumerate() {
            if base[ci] > 0.0 {
                worst[ci] = worst[ci].max(group_norm(&diff, *c) / base[ci]);
            }
        }
    }
    Ok(VSpaceReport {
        n_steps: setup.n_steps,
        eta: setup.eta,
        deviations: clusters.into_iter().zip(worst).collect(),
    })
}

/// Relative sample-size multipliers `1/μ0, 4, 1/μ2` from the interval midpoints.
pub fn sample_complexity_report(d: usize) -> Result<Vec<(Family, f64)>> {
    if d < 2 {
        return Err(Error::InvalidConfig(
            "sample complexity report needs d >= 2".into(),
        ));
    }
    let mu = ModeEigenvalues::midpoints(d);
    Ok(vec![
        (Family::Radial, 1.0 / mu.mu0.value),
        (Family::Linear, 4.0),
        (Family::Quadratic, 1.0 / mu.mu2.value),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_network, NetworkConfig};

    #[test]
    fn zero_output_weights_project_to_zero() {
        let w = sample_network(&NetworkConfig::new(3, 20, 1).unwrap());
        let mu = ModeEigenvalues::midpoints(3);
        let v = vec![0.0; 20];
        let mc = MonteCarlo::new(2000, 2).unwrap();
        let model = project(&v, &w, mu, &mc).unwrap();
        assert!(model.theta.iter().all(|t| *t == 0.0));
        assert_eq!(approx_error(&v, &w, &model, &mc).unwrap().value, 0.0);
    }

    #[test]
    fn basis_function_projects_to_its_own_coordinate() {
        let d = 3;
        let mu = ModeEigenvalues::midpoints(d);
        let f = EigenFunction::linear(d, 1).unwrap();
        let model = project_field(&f, mu, &MonteCarlo::new(200_000, 5).unwrap()).unwrap();
        // F_2 is coordinate 2 of the basis; θ = 1/√(1/4) = 2
        for (i, (t, se)) in model.theta.iter().zip(&model.theta_se).enumerate() {
            let target = if i == 2 { 2.0 } else { 0.0 };
            assert!((t - target).abs() <= 5.0 * se + 1e-9, "{i}: {t} ± {se}");
        }
    }

    #[test]
    fn single_mode_ratio() {
        let trace = simulate_modes(&[1.0], &[0.0], &[0.25], 0.1, 10).unwrap();
        for k in 0..10 {
            assert!((trace.step_ratio(&[1.0], 0, k) - 0.975).abs() < 1e-14);
        }
        assert!(trace.kl_non_increasing());
        let r = trace.rates[0].unwrap();
        assert!((r + 0.975f64.ln() / 0.1).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_does_not_move() {
        let t = [0.3, -0.2];
        let trace = simulate_modes(&t, &t, &[0.5, 0.1], 0.5, 5).unwrap();
        assert!(trace.trajectories.iter().all(|th| th == &t));
        assert_eq!(trace.rates, vec![None, None]);
    }

    #[test]
    fn unstable_step_rejected() {
        assert!(matches!(
            simulate_modes(&[1.0, 1.0], &[0.0, 0.0], &[0.1, 1.0], 2.0, 5),
            Err(Error::Unstable { step: 0, mode: 1 })
        ));
    }

    #[test]
    fn multipliers_ordered() {
        for d in [2, 5, 10, 50] {
            let r = sample_complexity_report(d).unwrap();
            assert!(r[0].1 < r[1].1 && r[1].1 < r[2].1);
        }
        let a = sample_complexity_report(4).unwrap();
        let b = sample_complexity_report(5).unwrap();
        assert!(b[0].1 < a[0].1 && b[2].1 > a[2].1);
        assert!(sample_complexity_report(1).is_err());
    }

    #[test]
    fn reconstruction_matches_coefficients() {
        let mu = ModeEigenvalues::midpoints(2);
        let mut theta = vec![0.0; basis_size(2)];
        theta[1] = 2.0;
        let model = ApproxModel::new(theta, mu).unwrap();
        let g = model.reconstruction();
        assert!((g.eval(&[0.7, -0.1]).unwrap() - 0.7).abs() < 1e-15);
    }
}

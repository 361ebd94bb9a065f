//! The explicit eigenfunctions of the ReLU NTK and Monte Carlo machinery to
//! check them: Gram matrices, the integral operator `Kf`, Rayleigh quotients,
//! eigen-residuals, sphere moments, rotations and the truncated-kernel monomials.
//!
//! Coordinates are zero-based. The normalised family is
//!
//! ```text
//! F0       = |x| / √d
//! F_l      = x_l
//! F_γ      = √((d+2)/2) · h_γ,    h_γ = g_γ − g_{d−1}/(√d + 1),   γ < d−1
//! F_{αβ}   = √(d+2) x_α x_β / |x|, α < β
//! ```
//!
//! with `g_0 = |x|` and `g_γ = x_γ²/|x| − |x|/d`. All of them are positively
//! homogeneous of degree 1.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelSpec;
use crate::sampling::{
    gaussian_into, norm, sphere_point_into, substream, Field, McEstimate, MonteCarlo,
};

/// Test points closer than this to the origin are redrawn.
pub const MIN_TEST_NORM: f64 = 1e-6;

/// Largest dimension for which [`Symmetrization::SignFlips`] is allowed (2^d kernel calls per draw).
pub const MAX_SIGN_FLIP_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EigenKind {
    F0,
    Linear(usize),
    Gamma(usize),
    Cross(usize, usize),
    G0,
    G(usize),
    H(usize),
    /// `∏ x_{α_i} / |x|^{2n+1}` over `2n+2` distinct sorted indices.
    Monomial(Vec<usize>),
}

/// Eigenvalue family a basis function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Radial,
    Linear,
    Quadratic,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EigenFunction {
    kind: EigenKind,
    d: usize,
}

fn out_of_range(what: &str, idx: usize, d: usize) -> Error {
    Error::IndexOutOfRange(format!("{what} index {idx} for d = {d}"))
}

impl EigenFunction {
    pub fn new(kind: EigenKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be positive".into()));
        }
        match &kind {
            EigenKind::F0 | EigenKind::G0 => {}
            EigenKind::Linear(l) | EigenKind::G(l) => {
                if *l >= d {
                    return Err(out_of_range("coordinate", *l, d));
                }
            }
            EigenKind::Gamma(g) | EigenKind::H(g) => {
                if d < 2 || *g >= d - 1 {
                    return Err(out_of_range("gamma", *g, d));
                }
            }
            EigenKind::Cross(a, b) => {
                if d < 2 || a >= b || *b >= d {
                    return Err(Error::IndexOutOfRange(format!(
                        "cross term ({a}, {b}) for d = {d}"
                    )));
                }
            }
            EigenKind::Monomial(idx) => {
                if idx.len() < 2 || idx.len() % 2 != 0 || idx.len() > d {
                    return Err(Error::Precondition(format!(
                        "monomial needs an even number 2n+2 <= d of indices, got {}",
                        idx.len()
                    )));
                }
                if idx.windows(2).any(|w| w[0] >= w[1]) || idx[idx.len() - 1] >= d {
                    return Err(Error::IndexOutOfRange(format!(
                        "monomial indices {idx:?} must be strictly increasing and below {d}"
                    )));
                }
            }
        }
        Ok(Self { kind, d })
    }

    pub fn f0(d: usize) -> Result<Self> {
        Self::new(EigenKind::F0, d)
    }

    pub fn linear(d: usize, l: usize) -> Result<Self> {
        Self::new(EigenKind::Linear(l), d)
    }

    pub fn gamma(d: usize, g: usize) -> Result<Self> {
        Self::new(EigenKind::Gamma(g), d)
    }

    pub fn cross(d: usize, a: usize, b: usize) -> Result<Self> {
        Self::new(EigenKind::Cross(a, b), d)
    }

    pub fn monomial(d: usize, indices: Vec<usize>) -> Result<Self> {
        Self::new(EigenKind::Monomial(indices), d)
    }

    pub fn kind(&self) -> &EigenKind {
        &self.kind
    }

    pub fn family(&self) -> Family {
        match self.kind {
            EigenKind::F0 | EigenKind::G0 => Family::Radial,
            EigenKind::Linear(_) => Family::Linear,
            EigenKind::Gamma(_) | EigenKind::Cross(..) | EigenKind::G(_) | EigenKind::H(_) => {
                Family::Quadratic
            }
            EigenKind::Monomial(_) => Family::Other,
        }
    }

    /// Short display name with one-based indices, e.g. `F_{1,3}`.
    pub fn label(&self) -> String {
        match &self.kind {
            EigenKind::F0 => "F0".into(),
            EigenKind::Linear(l) => format!("F_{}", l + 1),
            EigenKind::Gamma(g) => format!("F_gamma{}", g + 1),
            EigenKind::Cross(a, b) => format!("F_{{{},{}}}", a + 1, b + 1),
            EigenKind::G0 => "g0".into(),
            EigenKind::G(g) => format!("g_{}", g + 1),
            EigenKind::H(g) => format!("h_{}", g + 1),
            EigenKind::Monomial(idx) => {
                let names: Vec<String> = idx.iter().map(|i| format!("x{}", i + 1)).collect();
                format!("{}/|x|^{}", names.join(""), idx.len() - 1)
            }
        }
    }

    /// Bit mask of the coordinates in which the function is odd.
    pub fn odd_coordinates(&self) -> u64 {
        let bit = |i: usize| if i < 64 { 1u64 << i } else { 0 };
        match &self.kind {
            EigenKind::Linear(l) => bit(*l),
            EigenKind::Cross(a, b) => bit(*a) | bit(*b),
            EigenKind::Monomial(idx) => idx.iter().fold(0, |m, &i| m | bit(i)),
            _ => 0,
        }
    }

    fn g_component(&self, x: &[f64], r: f64, g: usize) -> f64 {
        x[g] * x[g] / r - r / self.d as f64
    }
}

impl Field for EigenFunction {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        let d = self.d as f64;
        let r = norm(x);
        let needs_norm = !matches!(
            self.kind,
            EigenKind::F0 | EigenKind::G0 | EigenKind::Linear(_)
        );
        if needs_norm && r == 0.0 {
            return Err(Error::ZeroInput);
        }
        let h = |g: usize| {
            self.g_component(x, r, g) - self.g_component(x, r, self.d - 1) / (d.sqrt() + 1.0)
        };
        Ok(match &self.kind {
            EigenKind::F0 => r / d.sqrt(),
            EigenKind::Linear(l) => x[*l],
            EigenKind::Gamma(g) => ((d + 2.0) / 2.0).sqrt() * h(*g),
            EigenKind::Cross(a, b) => (d + 2.0).sqrt() * x[*a] * x[*b] / r,
            EigenKind::G0 => r,
            EigenKind::G(g) => self.g_component(x, r, *g),
            EigenKind::H(g) => h(*g),
            EigenKind::Monomial(idx) => {
                let prod: f64 = idx.iter().map(|&i| x[i]).product();
                prod / r.powi(idx.len() as i32 - 1)
            }
        })
    }
}

/// `F0, F_l, F_γ, F_{αβ}`: the `1 + d + (d−1) + d(d−1)/2` explicit modes.
pub fn full_basis(d: usize) -> Result<Vec<EigenFunction>> {
    let mut basis = vec![EigenFunction::f0(d)?];
    for l in 0..d {
        basis.push(EigenFunction::linear(d, l)?);
    }
    for g in 0..d.saturating_sub(1) {
        basis.push(EigenFunction::gamma(d, g)?);
    }
    for a in 0..d {
        for b in a + 1..d {
            basis.push(EigenFunction::cross(d, a, b)?);
        }
    }
    Ok(basis)
}

/// Size of [`full_basis`].
pub fn basis_size(d: usize) -> usize {
    1 + d + (d - 1) + d * (d - 1) / 2
}

/// Monte Carlo Gram matrix with entrywise standard errors.
#[derive(Debug, Clone)]
pub struct GramEstimate {
    pub values: DMatrix<f64>,
    pub std_errors: DMatrix<f64>,
    pub n_samples: usize,
}

impl GramEstimate {
    /// Largest `|G − I|` in standard-error units (entries with zero se must match exactly).
    pub fn max_identity_z(&self) -> f64 {
        let n = self.values.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                let e = McEstimate {
                    value: self.values[(i, j)],
                    std_error: self.std_errors[(i, j)],
                    n_samples: self.n_samples,
                };
                let slack = (e.value - target).abs() - 1e-9;
                let z = if slack <= 0.0 {
                    0.0
                } else if e.std_error > 0.0 {
                    slack / e.std_error
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
            }
        }
        worst
    }
}

/// `⟨f_i, f_j⟩` for all pairs from one shared sample stream.
pub fn gram_matrix<F: Field>(basis: &[F], mc: &MonteCarlo) -> Result<GramEstimate> {
    let k = basis.len();
    let d = basis.first().map(|f| f.dim()).unwrap_or(0);
    for f in basis {
        check_dim(d, f.dim())?;
    }
    let pairs = k * (k + 1) / 2;
    let m = mc.moments(pairs, false, |rng, out| {
        let mut x = vec![0.0; d];
        gaussian_into(rng, &mut x);
        let vals = basis
            .iter()
            .map(|f| f.eval(&x))
            .collect::<Result<Vec<_>>>()?;
        let mut p = 0;
        for i in 0..k {
            for j in i..k {
                out[p] = vals[i] * vals[j];
                p += 1;
            }
        }
        Ok(())
    })?;
    let mut values = DMatrix::zeros(k, k);
    let mut std_errors = DMatrix::zeros(k, k);
    let mut p = 0;
    for i in 0..k {
        for j in i..k {
            let e = m.estimate(p);
            values[(i, j)] = e.value;
            values[(j, i)] = e.value;
            std_errors[(i, j)] = e.std_error;
            std_errors[(j, i)] = e.std_error;
            p += 1;
        }
    }
    Ok(GramEstimate {
        values,
        std_errors,
        n_samples: m.count(),
    })
}

/// Group of coordinate reflections averaged over inside the operator
/// integrand. Each reflection preserves the Gaussian measure, so every choice
/// gives an unbiased estimate; larger groups cancel more of the integrand's
/// odd parts exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Symmetrization {
    Plain,
    /// `y` and `−y`.
    #[default]
    Antithetic,
    /// All `2^d` sign patterns of `y`.
    SignFlips,
    /// Independent sign flips of the coordinates set in the mask.
    Reflections(u64),
    /// The `d` cyclic shifts of the coordinates, each with `y` and `−y`.
    CyclicAntithetic,
}

/// A measure-preserving map `y ↦ (s_i y_{(i+shift) mod d})_i`.
#[derive(Debug, Clone)]
struct Transform {
    shift: usize,
    signs: Vec<f64>,
}

impl Symmetrization {
    fn transforms(&self, d: usize) -> Result<Vec<Transform>> {
        let shifts = match self {
            Symmetrization::CyclicAntithetic => d,
            _ => 1,
        };
        let patterns = self.sign_patterns(d)?;
        Ok((0..shifts)
            .flat_map(|shift| {
                patterns.iter().map(move |signs| Transform {
                    shift,
                    signs: signs.clone(),
                })
            })
            .collect())
    }

    fn sign_patterns(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        Ok(match self {
            Symmetrization::Plain => vec![vec![1.0; d]],
            Symmetrization::Antithetic | Symmetrization::CyclicAntithetic => {
                vec![vec![1.0; d], vec![-1.0; d]]
            }
            Symmetrization::SignFlips => {
                if d > MAX_SIGN_FLIP_DIM {
                    return Err(Error::Precondition(format!(
                        "sign-flip averaging limited to d <= {MAX_SIGN_FLIP_DIM}"
                    )));
                }
                (0..1usize << d)
                    .map(|mask| {
                        (0..d)
                            .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                            .collect()
                    })
                    .collect()
            }
            Symmetrization::Reflections(mask) => {
                let coords: Vec<usize> = (0..d.min(64)).filter(|i| mask >> i & 1 == 1).collect();
                if coords.len() > MAX_SIGN_FLIP_DIM {
                    return Err(Error::Precondition(format!(
                        "sign-flip averaging limited to {MAX_SIGN_FLIP_DIM} coordinates"
                    )));
                }
                (0..1usize << coords.len())
                    .map(|pattern| {
                        let mut s = vec![1.0; d];
                        for (bit, &c) in coords.iter().enumerate() {
                            if pattern >> bit & 1 == 1 {
                                s[c] = -1.0;
                            }
                        }
                        s
                    })
                    .collect()
            }
        })
    }

    /// Flips of the coordinates in which `f` is odd: every other basis mode has
    /// the wrong parity in some flipped coordinate and cancels. For the even
    /// `F_γ` the cyclic shifts remove the radial mode instead, since the shifts
    /// average `F_γ` to a multiple of `Σ g_γ = 0`.
    pub fn for_function(f: &EigenFunction) -> Self {
        match (f.kind(), f.odd_coordinates()) {
            (EigenKind::Gamma(_) | EigenKind::G(_) | EigenKind::H(_), _) => {
                Symmetrization::CyclicAntithetic
            }
            (_, 0) => Symmetrization::Antithetic,
            (_, mask) => Symmetrization::Reflections(mask),
        }
    }
}

/// Integral operator `Kf(x) = ∫ k(x,y) f(y) p_X(y) dy` with a Monte Carlo configuration.
#[derive(Debug, Clone, Copy)]
pub struct Operator<'a> {
    pub kernel: KernelSpec<'a>,
    pub symmetrization: Symmetrization,
}

impl<'a> Operator<'a> {
    pub fn new(kernel: KernelSpec<'a>) -> Self {
        Self {
            kernel,
            symmetrization: Symmetrization::default(),
        }
    }

    pub fn with_symmetrization(mut self, symmetrization: Symmetrization) -> Self {
        self.symmetrization = symmetrization;
        self
    }

    /// Single-draw integrand averaged over the reflection group.
    fn integrand<F: Field>(
        &self,
        f: &F,
        x: &[f64],
        y: &[f64],
        transforms: &[Transform],
        buf: &mut [f64],
    ) -> Result<f64> {
        let mut acc = 0.0;
        let d = y.len();
        for t in transforms {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = t.signs[i] * y[(i + t.shift) % d];
            }
            let fy = f.eval(buf)?;
            if fy != 0.0 {
                acc += self.kernel.eval(x, buf)? * fy;
            }
        }
        Ok(acc / transforms.len() as f64)
    }
}

/// Monte Carlo estimate of `Kf(x)`.
pub fn apply_operator<F: Field>(
    op: &Operator<'_>,
    f: &F,
    x: &[f64],
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    let d = f.dim();
    check_dim(d, x.len())?;
    let signs = op.symmetrization.transforms(d)?;
    mc.estimate(|rng| {
        let mut y = vec![0.0; d];
        let mut buf = vec![0.0; d];
        gaussian_into(rng, &mut y);
        op.integrand(f, x, &y, &signs, &mut buf)
    })
}

/// `⟨f, Kf⟩ / ⟨f, f⟩` with numerator and denominator on one sample stream.
pub fn rayleigh_quotient<F: Field>(
    op: &Operator<'_>,
    f: &F,
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    let d = f.dim();
    let signs = op.symmetrization.transforms(d)?;
    let m = mc.moments(2, true, |rng, out| {
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut buf = vec![0.0; d];
        gaussian_into(rng, &mut x);
        gaussian_into(rng, &mut y);
        let fx = f.eval(&x)?;
        out[0] = fx * op.integrand(f, &x, &y, &signs, &mut buf)?;
        out[1] = fx * fx;
        Ok(())
    })?;
    m.ratio(0, 1)
}

/// Outcome of an eigenfunction check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenCheckReport {
    /// Rayleigh quotient, the eigenvalue estimate.
    pub rayleigh: McEstimate,
    /// RMS of `Kf(x_j) − λ f(x_j)` over the test points, relative to `λ · rms f(x_j)`.
    pub residual_rel: f64,
    /// The value `residual_rel` takes from Monte Carlo noise alone, in expectation.
    pub tolerance: f64,
    pub points_tested: usize,
}

impl EigenCheckReport {
    pub fn passes(&self, factor: f64) -> bool {
        self.residual_rel <= factor * self.tolerance
    }
}

/// Draws `n` test points from `p_X`, skipping points near the origin or where `f` is undefined.
fn test_points<F: Field>(f: &F, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = f.dim();
    let mut rng = substream(seed, 0);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let mut x = vec![0.0; d];
        gaussian_into(&mut rng, &mut x);
        if norm(&x) < MIN_TEST_NORM {
            continue;
        }
        match f.eval(&x) {
            Ok(_) => pts.push(x),
            Err(e) if e.is_resample() => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(pts)
}

/// Tests `Kf ∝ f`: estimates `λ` by the Rayleigh quotient, then compares
/// `Kf(x_j)` with `λ f(x_j)` at `n_test_points` Gaussian points, each
/// operator estimate on its own substream.
pub fn eigen_check<F: Field>(
    op: &Operator<'_>,
    f: &F,
    n_test_points: usize,
    mc: &MonteCarlo,
) -> Result<EigenCheckReport> {
    if n_test_points == 0 {
        return Err(Error::Precondition("eigen_check needs test points".into()));
    }
    let rayleigh = rayleigh_quotient(op, f, &mc.child(0))?;
    let lambda = rayleigh.value;
    let pts = test_points(f, n_test_points, mc.child(1).seed())?;
    let mut sq_resid = 0.0;
    let mut sq_noise = 0.0;
    let mut sq_f = 0.0;
    for (j, x) in pts.iter().enumerate() {
        let fx = f.eval(x)?;
        let kf = apply_operator(op, f, x, &mc.child(2 + j as u64))?;
        sq_resid += (kf.value - lambda * fx).powi(2);
        sq_noise += kf.std_error.powi(2) + (fx * rayleigh.std_error).powi(2);
        sq_f += fx * fx;
    }
    let scale = lambda.abs() * sq_f.sqrt();
    if scale == 0.0 {
        return Err(Error::DegenerateDenominator {
            value: lambda,
            std_error: rayleigh.std_error,
        });
    }
    Ok(EigenCheckReport {
        rayleigh,
        residual_rel: sq_resid.sqrt() / scale,
        tolerance: sq_noise.sqrt() / scale,
        points_tested: pts.len(),
    })
}

/// `∫_{|y|=1} (x̄·y)^{2n+2} f(y) μ(dy)` under the uniform sphere measure.
pub fn sphere_moment<F: Field>(
    x_bar: &[f64],
    n: usize,
    f: &F,
    mc: &MonteCarlo,
) -> Result<McEstimate> {
    let d = f.dim();
    check_dim(d, x_bar.len())?;
    let nx = norm(x_bar);
    if (nx - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnitVector(nx));
    }
    let power = 2 * n as i32 + 2;
    mc.estimate(|rng| {
        let mut y = vec![0.0; d];
        sphere_point_into(rng, &mut y);
        let c: f64 = x_bar.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok(c.powi(power) * f.eval(&y)?)
    })
}

/// `x ↦ f(xU)` for an orthogonal `U`.
pub struct Rotated<F> {
    inner: F,
    u: DMatrix<f64>,
}

impl<F: Field> Field for Rotated<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.u.nrows(), x.len())?;
        let d = x.len();
        let xu: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|i| x[i] * self.u[(i, j)]).sum())
            .collect();
        self.inner.eval(&xu)
    }
}

pub fn rotate_function<F: Field>(f: F, u: DMatrix<f64>) -> Result<Rotated<F>> {
    let d = f.dim();
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: u.nrows().max(u.ncols()),
        });
    }
    let dev = (&u * u.transpose() - DMatrix::<f64>::identity(d, d)).amax();
    if dev > 1e-9 {
        return Err(Error::NotOrthogonal(dev));
    }
    Ok(Rotated { inner: f, u })
}

/// Givens rotation by `angle` in the `(a, b)` coordinate plane.
pub fn plane_rotation(d: usize, a: usize, b: usize, angle: f64) -> DMatrix<f64> {
    let mut u = DMatrix::identity(d, d);
    let (s, c) = angle.sin_cos();
    u[(a, a)] = c;
    u[(b, b)] = c;
    u[(a, b)] = -s;
    u[(b, a)] = s;
    u
}

/// Checks that `∏ x_{α_i} / |x|^{2n+1}` is an eigenfunction of `k^(n)`.
pub fn monomial_check(
    d: usize,
    indices: Vec<usize>,
    order: usize,
    n_test_points: usize,
    mc: &MonteCarlo,
) -> Result<EigenCheckReport> {
    if indices.len() != 2 * order + 2 {
        return Err(Error::Precondition(format!(
            "order {order} needs {} indices, got {}",
            2 * order + 2,
            indices.len()
        )));
    }
    if 2 * order + 2 > d {
        return Err(Error::Precondition(format!(
            "order {order} needs d >= {}",
            2 * order + 2
        )));
    }
    let f = EigenFunction::monomial(d, indices)?;
    eigen_check(&monomial_operator(d, order), &f, n_test_points, mc)
}

/// `k^(n)` with the widest affordable reflection averaging.
pub fn monomial_operator(d: usize, order: usize) -> Operator<'static> {
    let sym = if d <= MAX_SIGN_FLIP_DIM {
        Symmetrization::SignFlips
    } else {
        Symmetrization::Antithetic
    };
    Operator::new(KernelSpec::Truncated(order)).with_symmetrization(sym)
}

/// Lower and upper bounds on the `F0` eigenvalue: `(2d+1)/4π` plus at most `0.013·d`.
pub fn mu0_interval(d: usize) -> (f64, f64) {
    let d = d as f64;
    let lo = (2.0 * d + 1.0) / (4.0 * PI);
    (lo, lo + 0.026 * d / 2.0)
}

/// Lower and upper bounds on the quadratic-family eigenvalue:
/// `1/(2π(d+2))` plus at most `(0.026 d/2)·2/(d(d+3)) = 0.026/(d+3)`.
pub fn mu2_interval(d: usize) -> (f64, f64) {
    let d = d as f64;
    let lo = 1.0 / (2.0 * PI * (d + 2.0));
    (lo, lo + 0.026 * d / 2.0 * 2.0 / (d * (d + 3.0)))
}

/// The leading part of the kernel written as its eigen-sum:
/// `(2d+1)/4π F0F0 + 1/4 Σ F_lF_l + 1/(2π(d+2)) (Σ F_γF_γ + Σ F_{αβ}F_{αβ})`.
pub fn eigen_sum(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    let d = x.len();
    let df = d as f64;
    let mut total = 0.0;
    for f in full_basis(d)? {
        let w = match f.family() {
            Family::Radial => (2.0 * df + 1.0) / (4.0 * PI),
            Family::Linear => 0.25,
            _ => 1.0 / (2.0 * PI * (df + 2.0)),
        };
        total += w * f.eval(x)? * f.eval(y)?;
    }
    Ok(total)
}

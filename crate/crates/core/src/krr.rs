//! Kernel ridge regression, its exact bias/variance over the uniform test
//! distribution and the noise, and the fixed-design sandwich bounds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::hypercube::{check_dim, stream_rng, gaussian_noise, monomial_eval, sample_points, Dataset, HypercubePoint, IndexSet};
use crate::kernel::{cross_gram, gram, ConvKernel};
use crate::linalg::{eigenvalues_desc, sym_eigen, trace_of_product};
use crate::scalar::Scalar;
use crate::spectrum::{diagnostics, feature_bundle, feature_matrix, DiagnosticsReport, Spectrum};

/// Relative residual above which a dual solve is rejected (f64).
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Noise stream used by the Monte-Carlo risk estimator; the dataset's own
/// labels use streams 0 (points) and 1 (noise).
const MC_NOISE_STREAM: u64 = 2;

/// Largest dimension for exhaustive test expectations.
pub const EXHAUSTIVE_MAX_DIM: usize = 14;

fn residual_tol<T: Scalar>() -> T {
    T::lit(RESIDUAL_TOL).max(T::epsilon() * T::lit(1e4))
}

/// Condition number from the eigenvalues of a symmetric matrix.
fn condition_estimate<T: Scalar>(h: &DMatrix<T>) -> f64 {
    let ev = eigenvalues_desc(h);
    match (ev.first(), ev.last()) {
        (Some(hi), Some(lo)) if lo.as_f64() > 0.0 => hi.as_f64() / lo.as_f64(),
        _ => f64::INFINITY,
    }
}

fn factor<T: Scalar>(h: DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    match Cholesky::new(h.clone()) {
        Some(c) => Ok(c),
        None => Err(Error::Singular {
            reason: "Cholesky factorization failed".into(),
            condition: condition_estimate(&h),
        }),
    }
}

fn check_ridge<T: Scalar>(ridge: T) -> Result<()> {
    if !(ridge >= T::zero()) || !ridge.is_finite() {
        return invalid(format!("ridge must be finite and >= 0, got {ridge:e}"));
    }
    Ok(())
}

/// A fitted dual solution of `(K + lambda I) alpha = y`.
#[derive(Debug, Clone)]
pub struct KrrModel<T: Scalar> {
    pub dataset: Dataset<T>,
    pub kernel: ConvKernel<T>,
    pub ridge: T,
    pub dual_coeffs: DVector<T>,
    /// `||(K + lambda I) alpha - y|| / ||y||`.
    pub solver_residual: T,
    gram: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
}

pub fn fit<T: Scalar>(dataset: &Dataset<T>, kernel: &ConvKernel<T>, ridge: T) -> Result<KrrModel<T>> {
    check_ridge(ridge)?;
    check_dim(kernel.dim(), dataset.dim())?;
    let n = dataset.n();
    let k = gram(kernel, &dataset.points)?;
    let h = &k + DMatrix::identity(n, n) * ridge;
    let chol = factor(h.clone())?;
    let y = DVector::from_column_slice(&dataset.labels);
    let alpha = chol.solve(&y);
    let ynorm = y.norm();
    let resid = (&h * &alpha - &y).norm();
    let solver_residual = if ynorm > T::zero() { resid / ynorm } else { resid };
    if !(solver_residual <= residual_tol::<T>()) {
        return Err(Error::Singular {
            reason: format!("relative residual {:e} above tolerance", solver_residual.as_f64()),
            condition: condition_estimate(&h),
        });
    }
    Ok(KrrModel {
        dataset: dataset.clone(),
        kernel: kernel.clone(),
        ridge,
        dual_coeffs: alpha,
        solver_residual,
        gram: k,
        chol,
    })
}

impl<T: Scalar> KrrModel<T> {
    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    /// `(K + lambda I)^{-1}`.
    pub fn h_inverse(&self) -> DMatrix<T> {
        self.chol.inverse()
    }

    /// `(K + lambda I)^{-1} b` for a matrix of right-hand sides.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    pub fn predict(&self, x: &HypercubePoint) -> Result<T> {
        predict(self, x)
    }

    pub fn predict_many(&self, points: &[HypercubePoint]) -> Result<DVector<T>> {
        Ok(cross_gram(&self.kernel, points, &self.dataset.points)? * &self.dual_coeffs)
    }
}

/// `alpha^T k(x)`.
pub fn predict<T: Scalar>(model: &KrrModel<T>, x: &HypercubePoint) -> Result<T> {
    check_dim(model.kernel.dim(), x.dim())?;
    Ok(model
        .dataset
        .points
        .iter()
        .zip(model.dual_coeffs.iter())
        .fold(T::zero(), |acc, (xi, &a)| acc + a * model.kernel.eval_signs(xi.coords(), x.coords())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskStderr<T> {
    pub bias_sq: T,
    pub variance: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport<T> {
    pub bias_sq: T,
    pub variance: T,
    pub risk: T,
    pub method: RiskMethod,
    pub stderr: Option<RiskStderr<T>>,
    /// Single noise draw: no variance information.
    pub degenerate: bool,
}

impl<T: Scalar> RiskReport<T> {
    fn closed(bias_sq: T, variance: T) -> Self {
        let bias_sq = bias_sq.max(T::zero());
        let variance = variance.max(T::zero());
        Self { bias_sq, variance, risk: bias_sq + variance, method: RiskMethod::ClosedForm, stderr: None, degenerate: false }
    }
}

fn check_spectrum<T: Scalar>(kernel: &ConvKernel<T>, spectrum: &Spectrum<T>) -> Result<()> {
    if kernel.dim() != spectrum.dim() || kernel.filter_size() != spectrum.filter_size() || kernel.inner() != spectrum.inner() {
        return invalid("spectrum does not belong to the model's kernel");
    }
    Ok(())
}

/// Noiseless targets, the ground-truth eigenvalue and the squared-kernel
/// matrix: everything the closed forms need besides `K`.
#[derive(Debug, Clone)]
pub struct RiskInputs<T: Scalar> {
    pub truth: DVector<T>,
    /// `lambda_{S*}`, zero when `gamma(S*) > q`.
    pub truth_eigenvalue: T,
    pub sq_gram: DMatrix<T>,
    pub noise_variance: T,
}

impl<T: Scalar> RiskInputs<T> {
    pub fn new(dataset: &Dataset<T>, spectrum: &Spectrum<T>) -> Result<Self> {
        check_dim(spectrum.dim(), dataset.dim())?;
        let truth = DVector::from_vec(dataset.ground_truth_values());
        let truth_eigenvalue = spectrum.eigenvalue_of(&dataset.ground_truth_set());
        let sq_gram = spectrum.spectral_matrix(&dataset.points, &dataset.points, 2)?;
        Ok(Self { truth, truth_eigenvalue, sq_gram, noise_variance: T::lit(dataset.noise_variance()) })
    }

    /// Bias and variance given `(K + lambda I)^{-1}`.
    fn evaluate(&self, h_inv: &DMatrix<T>) -> RiskReport<T> {
        let u = h_inv * &self.truth;
        let two = T::lit(2.0);
        let bias = T::one() - two * self.truth_eigenvalue * self.truth.dot(&u) + u.dot(&(&self.sq_gram * &u));
        let variance = self.noise_variance * trace_of_product(&(h_inv * &self.sq_gram), h_inv);
        RiskReport::closed(bias, variance)
    }
}

/// Exact `Bias^2 = 1 - 2 lambda* f^T H^{-1} f + f^T H^{-1} S H^{-1} f` and
/// `Variance = sigma^2 Tr(H^{-1} S H^{-1})` with `f = f*(x_i)`, `H = K + lambda I`
/// and `S` the squared-kernel matrix over the full spectrum.
pub fn closed_form_risk<T: Scalar>(model: &KrrModel<T>, spectrum: &Spectrum<T>) -> Result<RiskReport<T>> {
    check_spectrum(&model.kernel, spectrum)?;
    let inputs = RiskInputs::new(&model.dataset, spectrum)?;
    Ok(inputs.evaluate(&model.h_inverse()))
}

/// `(lambda^2 / n)(sigma^2 Tr(H^{-2}) + f^T H^{-2} f)`, the expected mean
/// squared training residual.
pub fn expected_training_error<T: Scalar>(model: &KrrModel<T>) -> T {
    if model.ridge == T::zero() {
        return T::zero();
    }
    let h_inv = model.h_inverse();
    let truth = DVector::from_vec(model.dataset.ground_truth_values());
    let u = &h_inv * truth;
    let n = T::lit(model.dataset.n() as f64);
    let sigma2 = T::lit(model.dataset.noise_variance());
    model.ridge * model.ridge / n * (sigma2 * h_inv.norm_squared() + u.norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestMode {
    /// All `2^d` points; `d <= 14`.
    Exhaustive,
    Sampled { count: usize, seed: u64 },
}

fn test_points(d: usize, mode: &TestMode) -> Result<Vec<HypercubePoint>> {
    match mode {
        TestMode::Exhaustive => {
            if d > EXHAUSTIVE_MAX_DIM {
                return Err(Error::ResourceLimit(format!(
                    "exhaustive test expectation limited to d <= {EXHAUSTIVE_MAX_DIM}, got {d}"
                )));
            }
            Ok((0..1u64 << d).map(|b| HypercubePoint::from_bits(b, d)).collect())
        }
        TestMode::Sampled { count, seed } => sample_points(*count, d, *seed),
    }
}

/// Per-test-point sums of predictions shifted by the first draw, so that
/// identical draws give exactly zero spread.
struct DrawMoments<T> {
    count: usize,
    s1: Vec<T>,
    s2: Vec<T>,
}

impl<T: Scalar> DrawMoments<T> {
    fn new(t: usize) -> Self {
        Self { count: 0, s1: vec![T::zero(); t], s2: vec![T::zero(); t] }
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for i in 0..self.s1.len() {
            self.s1[i] += other.s1[i];
            self.s2[i] += other.s2[i];
        }
    }

    /// Unbiased `(bias^2, variance)` averaged over the test points.
    fn estimate(&self, base: &DVector<T>, truth: &[T]) -> (T, T) {
        let c = T::lit(self.count as f64);
        let t = T::lit(truth.len() as f64);
        let mut bias = T::zero();
        let mut var = T::zero();
        for i in 0..truth.len() {
            let mean = base[i] + self.s1[i] / c;
            let s2 = if self.count > 1 {
                ((self.s2[i] - self.s1[i] * self.s1[i] / c) / (c - T::one())).max(T::zero())
            } else {
                T::zero()
            };
            let err = truth[i] - mean;
            bias += err * err - s2 / c;
            var += s2;
        }
        (bias / t, var / t)
    }
}

/// Monte-Carlo estimate of bias and variance: fixed inputs, `noise_draws`
/// fresh label-noise vectors, test expectation over `test_mode`. Standard
/// errors come from up to 20 equal batches of draws.
pub fn monte_carlo_risk<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &ConvKernel<T>,
    ridge: T,
    noise_draws: usize,
    test_mode: &TestMode,
) -> Result<RiskReport<T>> {
    if noise_draws == 0 {
        return invalid("monte_carlo_risk needs at least one noise draw");
    }
    check_ridge(ridge)?;
    check_dim(kernel.dim(), dataset.dim())?;
    let n = dataset.n();
    let k = gram(kernel, &dataset.points)?;
    let chol = factor(&k + DMatrix::identity(n, n) * ridge)?;
    let test = test_points(dataset.dim(), test_mode)?;
    let kt = cross_gram(kernel, &test, &dataset.points)?;
    let s_star = dataset.ground_truth_set();
    let truth_test: Vec<T> = test.iter().map(|x| T::lit(monomial_eval(&s_star, x).expect("dims") as f64)).collect();
    let truth_train = DVector::from_vec(dataset.ground_truth_values());
    let sigma = dataset.noise_std;
    let mut rng = stream_rng(dataset.seed, MC_NOISE_STREAM);

    let batches = (noise_draws / 2).clamp(1, 20);
    const CHUNK: usize = 128;
    let mut base: Option<DVector<T>> = None;
    let mut per_batch = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = b * noise_draws / batches;
        let hi = (b + 1) * noise_draws / batches;
        let mut mom = DrawMoments::new(test.len());
        let mut done = lo;
        while done < hi {
            let width = CHUNK.min(hi - done);
            let mut y = DMatrix::zeros(n, width);
            for c in 0..width {
                let noise = gaussian_noise(n, sigma, &mut rng);
                for i in 0..n {
                    y[(i, c)] = truth_train[i] + T::lit(noise[i]);
                }
            }
            let preds = &kt * chol.solve(&y);
            let base = base.get_or_insert_with(|| preds.column(0).into_owned());
            for c in 0..width {
                for i in 0..test.len() {
                    let dev = preds[(i, c)] - base[i];
                    mom.s1[i] += dev;
                    mom.s2[i] += dev * dev;
                }
            }
            mom.count += width;
            done += width;
        }
        per_batch.push(mom);
    }
    let base = base.expect("at least one draw");
    let mut total = DrawMoments::new(test.len());
    for m in &per_batch {
        total.merge(m);
    }
    let (bias_sq, variance) = total.estimate(&base, &truth_test);
    let stderr = (batches >= 2).then(|| {
        let est: Vec<(T, T)> = per_batch.iter().map(|m| m.estimate(&base, &truth_test)).collect();
        let se = |pick: fn(&(T, T)) -> T| {
            let bf = T::lit(batches as f64);
            let mean = est.iter().map(pick).fold(T::zero(), |a, v| a + v) / bf;
            let ss = est.iter().map(pick).fold(T::zero(), |a, v| a + (v - mean) * (v - mean));
            (ss / (bf - T::one()) / bf).sqrt()
        };
        RiskStderr { bias_sq: se(|e| e.0), variance: se(|e| e.1) }
    });
    Ok(RiskReport {
        bias_sq,
        variance,
        risk: bias_sq + variance,
        method: RiskMethod::MonteCarlo,
        stderr,
        degenerate: noise_draws == 1,
    })
}

/// Fixed-design bounds next to the exact values they bracket.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport<T> {
    pub m: usize,
    pub diagnostics: DiagnosticsReport<T>,
    pub var_lo: T,
    pub var_hi: T,
    pub var_exact: T,
    /// Absent when the ground truth is outside the first `m` eigenfunctions.
    pub bias_lo: Option<T>,
    pub bias_hi: Option<T>,
    pub bias_exact: T,
    pub in_span: bool,
    /// Concentration condition, `r1 > 0` and ground truth in span.
    pub preconditions_ok: bool,
}

impl<T: Scalar> BoundsReport<T> {
    /// Whether `lo <= exact <= hi` holds for every bound that was computed.
    pub fn sandwich_holds(&self) -> bool {
        let var_ok = self.var_lo <= self.var_exact && self.var_exact <= self.var_hi;
        let bias_ok = match (self.bias_lo, self.bias_hi) {
            (Some(lo), Some(hi)) => lo <= self.bias_exact && self.bias_exact <= hi,
            _ => true,
        };
        var_ok && bias_ok
    }
}

/// Fixed-design bounds for the dataset's monomial ground truth.
pub fn fixed_design_bounds<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &ConvKernel<T>,
    spectrum: &Spectrum<T>,
    ridge: T,
    m: usize,
) -> Result<BoundsReport<T>> {
    let pos = spectrum.position_of(&dataset.ground_truth_set());
    let coeffs = pos.filter(|&p| p < m).map(|p| {
        let mut a = vec![T::zero(); m];
        a[p] = T::one();
        a
    });
    bounds_impl(dataset, kernel, spectrum, ridge, m, coeffs)
}

/// Fixed-design bounds for `f* = sum_{j < m} a_j Y_{S_j}` with `a >= 0`.
/// Only the noise level of `dataset` is used for the target; its labels are
/// ignored.
pub fn fixed_design_bounds_general<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &ConvKernel<T>,
    spectrum: &Spectrum<T>,
    ridge: T,
    m: usize,
    a: &[T],
) -> Result<BoundsReport<T>> {
    if a.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: a.len() });
    }
    if a.iter().any(|&v| !(v >= T::zero())) {
        return invalid("coefficients must be nonnegative");
    }
    bounds_impl(dataset, kernel, spectrum, ridge, m, Some(a.to_vec()))
}

fn bounds_impl<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &ConvKernel<T>,
    spectrum: &Spectrum<T>,
    ridge: T,
    m: usize,
    coeffs: Option<Vec<T>>,
) -> Result<BoundsReport<T>> {
    check_ridge(ridge)?;
    check_spectrum(kernel, spectrum)?;
    check_dim(kernel.dim(), dataset.dim())?;
    let n = dataset.n();
    let nf = T::lit(n as f64);
    let mf = T::lit(m as f64);
    let bundle = feature_bundle(spectrum, &dataset.points, m)?;
    let diag = diagnostics(&bundle, ridge);
    let (r1, r2, tau1, tau2) = (diag.r1, diag.r2, diag.tau1, diag.tau2);
    let scale = ridge.max(T::one());
    let sigma2 = T::lit(dataset.noise_variance());
    let one_half = T::lit(1.5);

    let s_high_ev = eigenvalues_desc(&bundle.sq_gram_high);
    let tail_sum = s_high_ev.iter().skip(m).take(n.saturating_sub(m)).fold(T::zero(), |a, &v| a + v);
    let tr_high = bundle.sq_gram_high.trace();
    let var_lo = sigma2
        * (r1 * r1 * tau1 * tau1 / (T::lit(2.0) * r2 * r2 * (one_half + r1).powi(2)) * mf / nf
            + tail_sum / (r2 * r2 * scale * scale));
    let var_hi = sigma2 * (T::lit(6.0) * r2 * r2 / (r1 * r1) * mf / nf + tr_high / (r1 * r1 * scale * scale));

    let k = gram(kernel, &dataset.points)?;
    let h_inv = factor(&k + DMatrix::identity(n, n) * ridge)?.inverse();
    let sq_gram = &bundle.sq_gram_high + {
        let d2 = bundle.d_low.map(|v| v * v);
        &bundle.p_low * DMatrix::from_diagonal(&d2) * bundle.p_low.transpose()
    };
    let var_exact = sigma2 * trace_of_product(&(&h_inv * &sq_gram), &h_inv);

    let (bias_exact, bias_lo, bias_hi) = match &coeffs {
        Some(a) => {
            let a = DVector::from_column_slice(a);
            let f = &bundle.p_low * &a;
            let g = &bundle.p_low * a.component_mul(&bundle.d_low);
            let u = &h_inv * &f;
            let exact = a.norm_squared() - T::lit(2.0) * u.dot(&g) + u.dot(&(&sq_gram * &u));
            let dinv_a = a.component_div(&bundle.d_low).norm_squared();
            let common = scale * scale * dinv_a / (nf * nf);
            let lo = r1 * r1 * tau1 * tau1 / (one_half + r1).powi(2) * common;
            let hi = T::lit(4.0) * (r2 * r2 + one_half * r2.powi(3) / (r1 * r1)) * tau2 * common;
            (exact.max(T::zero()), Some(lo), Some(hi))
        }
        None => {
            let inputs = RiskInputs {
                truth: DVector::from_vec(dataset.ground_truth_values()),
                truth_eigenvalue: spectrum.eigenvalue_of(&dataset.ground_truth_set()),
                sq_gram: sq_gram.clone(),
                noise_variance: sigma2,
            };
            (inputs.evaluate(&h_inv).bias_sq, None, None)
        }
    };
    let in_span = coeffs.is_some();
    Ok(BoundsReport {
        m,
        diagnostics: diag,
        var_lo,
        var_hi,
        var_exact,
        bias_lo,
        bias_hi,
        bias_exact,
        in_span,
        preconditions_ok: diag.condition_ok && in_span,
    })
}

/// Closed-form risk and training error along a ridge path from one
/// eigendecomposition `K = U diag(mu) U^T`.
///
/// `lambda = 0` is the ridgeless limit `lambda -> 0+`: eigenvalues below the
/// pseudo-inverse cutoff `n eps mu_max` are treated as exact zeros.
#[derive(Debug, Clone)]
pub struct RidgePath<T: Scalar> {
    n: usize,
    mu: Vec<T>,
    null: Vec<bool>,
    s_tilde: DMatrix<T>,
    f_tilde: DVector<T>,
    truth_eigenvalue: T,
    noise_variance: T,
}

impl<T: Scalar> RidgePath<T> {
    pub fn new(gram: &DMatrix<T>, inputs: &RiskInputs<T>) -> Self {
        let n = gram.nrows();
        let eig = sym_eigen(gram);
        let mu: Vec<T> = eig.eigenvalues.iter().map(|&v| v.max(T::zero())).collect();
        let mu_max = mu.iter().fold(T::zero(), |a, &v| a.max(v));
        let cutoff = T::lit(n as f64) * T::epsilon() * mu_max;
        let null = mu.iter().map(|&v| v <= cutoff).collect();
        let u = eig.eigenvectors;
        let s_tilde = u.transpose() * &inputs.sq_gram * &u;
        let f_tilde = u.transpose() * &inputs.truth;
        Self { n, mu, null, s_tilde, f_tilde, truth_eigenvalue: inputs.truth_eigenvalue, noise_variance: inputs.noise_variance }
    }

    /// Number of eigenvalues treated as zero.
    pub fn nullity(&self) -> usize {
        self.null.iter().filter(|&&z| z).count()
    }

    fn weights(&self, ridge: T) -> Vec<T> {
        self.mu
            .iter()
            .zip(&self.null)
            .map(|(&m, &z)| if ridge == T::zero() && z { T::zero() } else { T::one() / (m + ridge) })
            .collect()
    }

    pub fn risk(&self, ridge: T) -> RiskReport<T> {
        let w = self.weights(ridge);
        let v: Vec<T> = w.iter().zip(self.f_tilde.iter()).map(|(a, b)| *a * *b).collect();
        let mut quad = T::zero();
        let mut var = T::zero();
        for i in 0..self.n {
            var += self.s_tilde[(i, i)] * w[i] * w[i];
            let mut row = T::zero();
            for j in 0..self.n {
                row += self.s_tilde[(i, j)] * v[j];
            }
            quad += v[i] * row;
        }
        let cross = v.iter().zip(self.f_tilde.iter()).fold(T::zero(), |a, (x, f)| a + *x * *f);
        let bias = T::one() - T::lit(2.0) * self.truth_eigenvalue * cross + quad;
        RiskReport::closed(bias, self.noise_variance * var)
    }

    /// Expected mean squared training residual; at `lambda = 0` only the
    /// null space of `K` contributes.
    pub fn training_error(&self, ridge: T) -> T {
        let n = T::lit(self.n as f64);
        let mut acc = T::zero();
        for i in 0..self.n {
            let shrink = if ridge == T::zero() {
                if self.null[i] { T::one() } else { T::zero() }
            } else {
                let r = ridge / (self.mu[i] + ridge);
                r * r
            };
            acc += shrink * (self.noise_variance + self.f_tilde[i] * self.f_tilde[i]);
        }
        acc / n
    }
}

/// Features of the given sets at the dataset's points, for callers building
/// their own ground truths.
pub fn design_features<T: Scalar>(sets: &[IndexSet], dataset: &Dataset<T>) -> DMatrix<T> {
    feature_matrix(sets, &dataset.points)
}

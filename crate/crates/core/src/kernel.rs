//! The inner nonlinearity, its decomposition coefficients over a patch and
//! the cyclic convolutional kernel itself.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::combin::{binomial_f64, krawtchouk_exact, krawtchouk_table};
use crate::error::{invalid, Error, Result};
use crate::hypercube::{check_dim, HypercubePoint};
use crate::scalar::Scalar;

/// The scalar nonlinearity `kappa` applied to normalized patch inner products.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerFunction<T> {
    /// `t -> exp(t)`.
    Exponential,
    /// `t -> exp((t - 1) / h)`.
    GaussianRbf { bandwidth: T },
    /// `t -> sum_i c_i t^i`.
    Polynomial(Vec<T>),
}

impl<T: Scalar> Default for InnerFunction<T> {
    fn default() -> Self {
        Self::Exponential
    }
}

impl<T: Scalar> InnerFunction<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return invalid(format!("rbf bandwidth must be positive and finite, got {bandwidth:e}"));
        }
        Ok(Self::GaussianRbf { bandwidth })
    }

    pub fn polynomial(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return invalid("polynomial coefficients must be finite");
        }
        Ok(Self::Polynomial(coeffs))
    }

    pub fn eval(&self, t: T) -> T {
        match self {
            Self::Exponential => t.exp(),
            Self::GaussianRbf { bandwidth } => ((t - T::one()) / *bandwidth).exp(),
            Self::Polynomial(c) => c.iter().rev().fold(T::zero(), |acc, &ci| acc * t + ci),
        }
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> InnerFunction<U> {
        match self {
            Self::Exponential => InnerFunction::Exponential,
            Self::GaussianRbf { bandwidth } => InnerFunction::GaussianRbf { bandwidth: U::lit(bandwidth.as_f64()) },
            Self::Polynomial(c) => InnerFunction::Polynomial(c.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }
}

/// Parses `exp`, `rbf:h` (or bare `rbf`, meaning `h = 1`) and `poly:c0,c1,...`.
impl<T: Scalar> FromStr for InnerFunction<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |v: &str| -> Result<T> {
            v.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| Error::Parse(format!("bad number '{v}' in kernel spec '{s}'")))
        };
        match (name, arg) {
            ("exp", None) => Ok(Self::Exponential),
            ("rbf", None) => Self::rbf(T::one()),
            ("rbf", Some(h)) => Self::rbf(num(h)?),
            ("poly", Some(list)) if !list.is_empty() => {
                Self::polynomial(list.split(',').map(num).collect::<Result<_>>()?)
            }
            _ => Err(Error::Parse(format!(
                "unknown kernel spec '{s}' (expected exp, rbf:h or poly:c0,c1,...)"
            ))),
        }
    }
}

impl<T: Scalar> fmt::Display for InnerFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential => write!(f, "exp"),
            Self::GaussianRbf { bandwidth } => write!(f, "rbf:{}", bandwidth.as_f64()),
            Self::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.as_f64().to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
        }
    }
}

/// `K(x, x') = (1/d) sum_k kappa(<x_(k,q), x'_(k,q)> / q)` over the `d`
/// cyclic windows of length `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    dim: usize,
    filter_size: usize,
    inner: InnerFunction<T>,
    /// `kappa((q - 2j) / q)` for `j` disagreeing coordinates in a window.
    table: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(dim: usize, filter_size: usize, inner: InnerFunction<T>) -> Result<Self> {
        if filter_size == 0 || filter_size > dim {
            return invalid(format!("filter size must lie in 1..={dim}, got {filter_size}"));
        }
        let q = filter_size;
        let table: Vec<T> = (0..=q)
            .map(|j| inner.eval(T::lit((q as f64 - 2.0 * j as f64) / q as f64)))
            .collect();
        if table.iter().any(|v| !v.is_finite()) {
            return invalid(format!("inner function {inner} is not finite on [-1, 1]"));
        }
        Ok(Self { dim, filter_size, inner, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn filter_size(&self) -> usize {
        self.filter_size
    }

    pub fn inner(&self) -> &InnerFunction<T> {
        &self.inner
    }

    /// `kappa(1)`, the constant diagonal of the kernel.
    pub fn diagonal(&self) -> T {
        self.table[0]
    }

    /// Evaluates the kernel on raw sign slices of length `d`.
    pub(crate) fn eval_signs(&self, x: &[i8], y: &[i8]) -> T {
        let (d, q) = (self.dim, self.filter_size);
        // Number of disagreeing coordinates in the window starting at k.
        let mut neg = (0..q).filter(|&i| x[i] != y[i]).count();
        let mut acc = T::zero();
        for k in 0..d {
            acc += self.table[neg];
            let out = k;
            let inc = (k + q) % d;
            neg = neg + (x[inc] != y[inc]) as usize - (x[out] != y[out]) as usize;
        }
        acc / T::lit(d as f64)
    }

    pub fn eval(&self, x: &HypercubePoint, y: &HypercubePoint) -> Result<T> {
        check_dim(self.dim, x.dim())?;
        check_dim(self.dim, y.dim())?;
        Ok(self.eval_signs(x.coords(), y.coords()))
    }
}

/// Kernel value at a pair of points.
pub fn kernel_eval<T: Scalar>(kernel: &ConvKernel<T>, x: &HypercubePoint, y: &HypercubePoint) -> Result<T> {
    kernel.eval(x, y)
}

fn check_points(dim: usize, points: &[HypercubePoint]) -> Result<()> {
    if points.is_empty() {
        return invalid("point list is empty");
    }
    for p in points {
        check_dim(dim, p.dim())?;
    }
    Ok(())
}

/// Symmetric Gram matrix `[K(x_i, x_j)]`. Each upper-triangle entry is
/// computed independently and mirrored, so the result is exactly symmetric
/// and independent of the thread schedule.
pub fn gram<T: Scalar>(kernel: &ConvKernel<T>, points: &[HypercubePoint]) -> Result<DMatrix<T>> {
    check_points(kernel.dim, points)?;
    let n = points.len();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel.eval_signs(points[i].coords(), points[j].coords())).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

/// Rectangular kernel matrix `[K(a_i, b_j)]`.
pub fn cross_gram<T: Scalar>(
    kernel: &ConvKernel<T>,
    a: &[HypercubePoint],
    b: &[HypercubePoint],
) -> Result<DMatrix<T>> {
    check_points(kernel.dim, a)?;
    check_points(kernel.dim, b)?;
    let rows: Vec<Vec<T>> = a
        .par_iter()
        .map(|x| b.iter().map(|y| kernel.eval_signs(x.coords(), y.coords())).collect())
        .collect();
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

/// Writes two little-endian `u64` dimensions followed by the entries as
/// row-major little-endian `f64`.
pub fn write_gram_binary<T: Scalar, W: Write>(m: &DMatrix<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.write_all(&m[(i, j)].as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the layout produced by [`write_gram_binary`].
pub fn read_gram_binary<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<[u8; 8]> {
        input
            .read_exact(&mut word)
            .map_err(|e| Error::Parse(format!("truncated gram file: {e}")))?;
        Ok(word)
    };
    let rows = u64::from_le_bytes(next(&mut input)?) as usize;
    let cols = u64::from_le_bytes(next(&mut input)?) as usize;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 28));
    for _ in 0..rows * cols {
        data.push(f64::from_le_bytes(next(&mut input)?));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Comma-separated rows with 17 significant digits.
pub fn write_gram_csv<T: Scalar, W: Write>(m: &DMatrix<T>, mut out: W) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)].as_f64())).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Krawtchouk value `K_l(k; q)`: the sum over all `l`-subsets of the product
/// of a sign vector of length `q` with exactly `k` negative entries.
pub fn krawtchouk(l: usize, k: usize, q: usize) -> Result<i128> {
    krawtchouk_exact(l, k, q)
}

/// Coefficients `xi_0, ..., xi_q` of `kappa(<z, z'>/q)` on `{-1,1}^q` in the
/// basis of degree-homogeneous symmetric parity sums.
#[derive(Debug, Clone, PartialEq)]
pub struct XiCoefficients<T> {
    pub values: Vec<T>,
    pub filter_size: usize,
}

impl<T: Scalar> XiCoefficients<T> {
    /// `sum_l xi_l K_l(k; q) / binom(q, l)`, which reproduces
    /// `kappa((q - 2k)/q)`.
    pub fn reconstruct(&self, k: usize) -> Result<T> {
        let q = self.filter_size;
        if k > q {
            return invalid(format!("node {k} exceeds filter size {q}"));
        }
        let table = krawtchouk_table(q)?;
        Ok(self.reconstruct_with(&table, k))
    }

    fn reconstruct_with(&self, table: &[Vec<f64>], k: usize) -> T {
        let q = self.filter_size;
        (0..=q).fold(T::zero(), |acc, l| {
            acc + self.values[l] * T::lit(table[l][k] / binomial_f64(q, l))
        })
    }

    /// Largest absolute coefficient, the scale used for relative comparisons.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// `xi_l = sum_k 2^{-q} binom(q, k) kappa((q - 2k)/q) K_l(k; q)`.
pub fn xi_coefficients<T: Scalar>(inner: &InnerFunction<T>, q: usize) -> Result<XiCoefficients<T>> {
    if q == 0 {
        return invalid("filter size must be at least 1");
    }
    let table = krawtchouk_table(q)?;
    let ln_half = -(q as f64) * std::f64::consts::LN_2;
    let weights: Vec<f64> = (0..=q).map(|k| (crate::combin::ln_binomial(q, k) + ln_half).exp()).collect();
    let nodes: Vec<T> = (0..=q)
        .map(|k| inner.eval(T::lit((q as f64 - 2.0 * k as f64) / q as f64)))
        .collect();
    let values: Vec<T> = (0..=q)
        .map(|l| {
            (0..=q).fold(T::zero(), |acc, k| acc + nodes[k] * T::lit(weights[k] * table[l][k]))
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(format!("xi coefficients overflow at q={q}")));
    }
    Ok(XiCoefficients { values, filter_size: q })
}

/// Measured quantities of the regularity assumption on `xi`; descriptive only.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport<T> {
    /// `ceil(4 + 4 ell / beta)`.
    pub t: usize,
    pub min_low_degree_xi: T,
    pub min_all_xi: T,
    /// `xi_{q-l} q^{T-l+1}` for `l = 0..=min(T, q)`.
    pub tail_products: Vec<T>,
    pub xi_sum: T,
}

pub fn regularity_report<T: Scalar>(
    inner: &InnerFunction<T>,
    q: usize,
    ell: f64,
    beta: f64,
) -> Result<RegularityReport<T>> {
    if !(ell > 0.0) || !(beta > 0.0 && beta < 1.0) {
        return invalid(format!("need ell > 0 and 0 < beta < 1 (ell={ell}, beta={beta})"));
    }
    let xi = xi_coefficients(inner, q)?;
    let t = (4.0 + 4.0 * ell / beta - 1e-12).ceil() as usize;
    let top = t.min(q);
    let fold_min = |it: &mut dyn Iterator<Item = T>| it.fold(T::max_value().unwrap_or(T::lit(f64::MAX)), |m, v| m.min(v));
    let min_low_degree_xi = fold_min(&mut xi.values[..=top].iter().copied());
    let min_all_xi = fold_min(&mut xi.values.iter().copied());
    let qf = T::lit(q as f64);
    let tail_products = (0..=top)
        .map(|l| xi.values[q - l] * qf.powi((t - l + 1) as i32))
        .collect();
    let xi_sum = xi.values.iter().fold(T::zero(), |a, &v| a + v);
    Ok(RegularityReport { t, min_low_degree_xi, min_all_xi, tail_products, xi_sum })
}

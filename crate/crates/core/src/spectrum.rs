//! Closed-form eigensystem of the cyclic convolutional kernel and the
//! matrices built from it.
//!
//! Every eigenvalue depends only on the profile `(|S|, gamma(S))`, so the
//! spectrum is stored as a sorted list of profiles and expanded to individual
//! index sets on demand. Kernel-type matrices `sum_S w(S) Y_S(x) Y_S(x')` with
//! profile-constant weights are summed per pair through Krawtchouk values,
//! without touching the individual sets.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::combin::{binomial_f64, guarded_floor, krawtchouk_table};
use crate::error::{invalid, Error, Result};
use crate::hypercube::{check_dim, profile_members, HypercubePoint, IndexSet};
use crate::kernel::{gram, xi_coefficients, ConvKernel, InnerFunction, XiCoefficients};
use crate::linalg::{eigenvalues_desc, sym_op_norm};
use crate::scalar::Scalar;

/// Default cap on the number of eigenpairs.
pub const DEFAULT_SPECTRUM_CAP: u128 = 10_000_000;

/// Cap on `n * m` entries of an explicit feature matrix.
pub const FEATURE_ENTRY_CAP: usize = 200_000_000;

/// Relative gap below which neighbouring eigenvalues count as one block.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`brute_force_spectrum`].
pub const BRUTE_FORCE_MAX_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair<T> {
    pub subset: IndexSet,
    pub eigenvalue: T,
}

/// All index sets of one degree and diameter, which share an eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile<T> {
    pub degree: usize,
    pub diameter: usize,
    pub eigenvalue: T,
    pub multiplicity: usize,
    /// Position of the first member in the global order.
    pub offset: usize,
}

impl<T> Profile<T> {
    pub fn span(&self) -> Range<usize> {
        self.offset..self.offset + self.multiplicity
    }
}

/// The eigenpairs of a convolutional kernel with `q < d/2`, ordered by
/// descending eigenvalue, then ascending degree, ascending diameter and
/// lexicographic index set.
#[derive(Debug, Clone)]
pub struct Spectrum<T> {
    dim: usize,
    filter_size: usize,
    inner: InnerFunction<T>,
    xi: XiCoefficients<T>,
    profiles: Vec<Profile<T>>,
    len: usize,
}

/// Number of length-`q` windows that contain a fixed set of profile
/// `(l, g)`, up to the shift: `q + 1 - g`, except that the empty set lies in
/// all `d` windows.
fn window_count(l: usize, g: usize, q: usize, d: usize) -> usize {
    if l == 0 {
        d
    } else {
        q + 1 - g
    }
}

/// `lambda_S = xi_|S| * window_count / (d binom(q, |S|))`, so `lambda_emptyset = xi_0`.
fn eigenvalue_formula<T: Scalar>(xi: &XiCoefficients<T>, l: usize, g: usize, d: usize) -> T {
    let q = xi.filter_size;
    xi.values[l] * T::lit(window_count(l, g, q, d) as f64 / (d as f64 * binomial_f64(q, l)))
}

fn same_block<T: Scalar>(a: T, b: T) -> bool {
    (a - b).abs() <= T::lit(DEGENERACY_TOL) * a.abs().max(b.abs())
}

impl<T: Scalar> Spectrum<T> {
    /// Builds the spectrum, failing if it has more than `cap` eigenpairs.
    pub fn with_cap(d: usize, q: usize, inner: &InnerFunction<T>, cap: u128) -> Result<Self> {
        if q == 0 || 2 * q >= d {
            return invalid(format!("spectrum needs 1 <= q < d/2 (d={d}, q={q})"));
        }
        let total = 1 + ((d as u128) << (q - 1));
        if total > cap {
            return Err(Error::ResourceLimit(format!(
                "spectrum has {total} eigenpairs, above the cap of {cap}"
            )));
        }
        let len = usize::try_from(total).map_err(|_| Error::ResourceLimit("spectrum too large".into()))?;
        let xi = xi_coefficients(inner, q)?;
        let mut shapes = vec![(0, 0, 1), (1, 1, d)];
        for g in 2..=q {
            for l in 2..=g {
                let mult = d as f64 * binomial_f64(g - 2, l - 2);
                shapes.push((l, g, mult as usize));
            }
        }
        let mut profiles: Vec<Profile<T>> = shapes
            .into_iter()
            .map(|(l, g, multiplicity)| Profile {
                degree: l,
                diameter: g,
                eigenvalue: eigenvalue_formula(&xi, l, g, d),
                multiplicity,
                offset: 0,
            })
            .collect();
        profiles.sort_by(|a, b| b.eigenvalue.partial_cmp(&a.eigenvalue).expect("finite eigenvalues"));
        // Values equal up to rounding form one block, ordered by (degree, diameter).
        let mut start = 0;
        while start < profiles.len() {
            let head = profiles[start].eigenvalue;
            let mut end = start + 1;
            while end < profiles.len() && same_block(head, profiles[end].eigenvalue) {
                end += 1;
            }
            profiles[start..end].sort_by_key(|p| (p.degree, p.diameter));
            start = end;
        }
        let mut offset = 0;
        for p in &mut profiles {
            p.offset = offset;
            offset += p.multiplicity;
        }
        debug_assert_eq!(offset, len);
        Ok(Self { dim: d, filter_size: q, inner: inner.clone(), xi, profiles, len })
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

    pub fn xi(&self) -> &XiCoefficients<T> {
        &self.xi
    }

    pub fn profiles(&self) -> &[Profile<T>] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the profile holding global position `i`.
    pub fn profile_at(&self, i: usize) -> Option<&Profile<T>> {
        if i >= self.len {
            return None;
        }
        let pos = self.profiles.partition_point(|p| p.offset + p.multiplicity <= i);
        self.profiles.get(pos)
    }

    /// Eigenvalue at 0-based position `i`.
    pub fn eigenvalue(&self, i: usize) -> Option<T> {
        self.profile_at(i).map(|p| p.eigenvalue)
    }

    /// Eigenvalue of the index set `set`, zero if `gamma(S) > q`.
    pub fn eigenvalue_of(&self, set: &IndexSet) -> T {
        self.position_of(set).and_then(|i| self.eigenvalue(i)).unwrap_or_else(T::zero)
    }

    /// Global position of `set`, or `None` if it is not an eigenfunction.
    pub fn position_of(&self, set: &IndexSet) -> Option<usize> {
        if set.ambient_dim() != self.dim || set.diameter() > self.filter_size {
            return None;
        }
        let p = self
            .profiles
            .iter()
            .find(|p| p.degree == set.len() && p.diameter == set.diameter())?;
        let members = profile_members(p.degree, p.diameter, self.dim);
        members.binary_search(set).ok().map(|r| p.offset + r)
    }

    /// All eigenvalues in order, one per eigenpair.
    pub fn eigenvalues(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len);
        for p in &self.profiles {
            out.extend(std::iter::repeat_n(p.eigenvalue, p.multiplicity));
        }
        out
    }

    /// `sum_S lambda_S`.
    pub fn trace(&self) -> T {
        self.profiles
            .iter()
            .fold(T::zero(), |acc, p| acc + p.eigenvalue * T::lit(p.multiplicity as f64))
    }

    /// Eigenpairs at positions `range`, in order.
    pub fn pairs_in(&self, range: Range<usize>) -> Vec<EigenPair<T>> {
        let mut out = Vec::with_capacity(range.len());
        for p in &self.profiles {
            let span = p.span();
            if span.end <= range.start || span.start >= range.end {
                continue;
            }
            let members = profile_members(p.degree, p.diameter, self.dim);
            let lo = range.start.max(span.start) - span.start;
            let hi = range.end.min(span.end) - span.start;
            out.extend(members[lo..hi].iter().map(|s| EigenPair { subset: s.clone(), eigenvalue: p.eigenvalue }));
        }
        out
    }

    /// Every eigenpair in order.
    pub fn pairs(&self) -> Vec<EigenPair<T>> {
        self.pairs_in(0..self.len)
    }

    fn check_points(&self, points: &[HypercubePoint]) -> Result<()> {
        points.iter().try_for_each(|p| check_dim(self.dim, p.dim()))
    }

    /// `sum_S lambda_S^power Y_S(a_i) Y_S(b_j)` over the whole spectrum. With
    /// `power = 1` this is the kernel matrix, with `power = 2` the squared
    /// kernel matrix.
    pub fn spectral_matrix(&self, a: &[HypercubePoint], b: &[HypercubePoint], power: i32) -> Result<DMatrix<T>> {
        self.tail_matrix(a, b, 0, |_| true, power)
    }

    /// `sum_{i >= start, select(profile_i)} lambda_i^power Y_{S_i}(a) Y_{S_i}(b)`.
    ///
    /// Whole profiles go through the profile sum; a profile cut by `start` has
    /// its remaining members added explicitly.
    pub fn tail_matrix(
        &self,
        a: &[HypercubePoint],
        b: &[HypercubePoint],
        start: usize,
        select: impl Fn(&Profile<T>) -> bool,
        power: i32,
    ) -> Result<DMatrix<T>> {
        self.check_points(a)?;
        self.check_points(b)?;
        let q = self.filter_size;
        let mut weights = vec![vec![T::zero(); q + 1]; q + 1];
        let mut partial = None;
        for p in &self.profiles {
            if !select(p) || p.span().end <= start {
                continue;
            }
            if p.offset >= start {
                weights[p.degree][p.diameter] = p.eigenvalue.powi(power);
            } else {
                partial = Some(*p);
            }
        }
        let mut out = ProfileWeights::new(self.dim, q, &weights)?.matrix(a, b);
        if let Some(p) = partial {
            let members = profile_members(p.degree, p.diameter, self.dim);
            let rest = &members[start - p.offset..];
            let pa = feature_matrix::<T>(rest, a);
            let pb = feature_matrix::<T>(rest, b);
            out += (pa * pb.transpose()) * p.eigenvalue.powi(power);
        }
        Ok(out)
    }
}

/// Spectrum with the default cap of [`DEFAULT_SPECTRUM_CAP`] eigenpairs.
pub fn full_spectrum<T: Scalar>(d: usize, q: usize, inner: &InnerFunction<T>) -> Result<Spectrum<T>> {
    Spectrum::with_cap(d, q, inner, DEFAULT_SPECTRUM_CAP)
}

/// `[Y_{S_j}(x_i)]` for the given sets.
pub fn feature_matrix<T: Scalar>(sets: &[IndexSet], points: &[HypercubePoint]) -> DMatrix<T> {
    let mut m = DMatrix::zeros(points.len(), sets.len());
    for (i, x) in points.iter().enumerate() {
        for (j, s) in sets.iter().enumerate() {
            let v: i8 = s.members().iter().map(|&k| x.coords()[k]).product();
            m[(i, j)] = T::lit(v as f64);
        }
    }
    m
}

/// Per-profile weights `w[l][g]` turned into per-pair lookup tables.
///
/// For a pair `(x, x')` put `z = x * x'`. A set of degree `l >= 2` and
/// diameter `g` is a window start `i`, its end `i+g-1` and `l-2` interior
/// positions, so summing `Y_S(x)Y_S(x')` over the profile gives
/// `sum_i z_i z_{i+g-1} K_{l-2}(j_i; g-2)` with `j_i` the number of negative
/// interior entries. Folding the weights over `l` leaves one table per `g`.
pub(crate) struct ProfileWeights<T> {
    d: usize,
    q: usize,
    w0: T,
    w1: T,
    /// `c[g][j] = sum_{l=2..=g} w[l][g] K_{l-2}(j; g-2)`.
    c: Vec<Vec<T>>,
}

impl<T: Scalar> ProfileWeights<T> {
    pub(crate) fn new(d: usize, q: usize, w: &[Vec<T>]) -> Result<Self> {
        if 2 * q >= d {
            return invalid(format!("profile sums need q < d/2 (d={d}, q={q})"));
        }
        let mut c = vec![Vec::new(); q + 1];
        for g in 2..=q {
            let p = g - 2;
            let table = krawtchouk_table(p)?;
            c[g] = (0..=p)
                .map(|j| (2..=g).fold(T::zero(), |acc, l| acc + w[l][g] * T::lit(table[l - 2][j])))
                .collect();
        }
        let w1 = if q >= 1 { w[1][1] } else { T::zero() };
        Ok(Self { d, q, w0: w[0][0], w1, c })
    }

    fn pair(&self, x: &[i8], y: &[i8], counts: &mut [i64]) -> T {
        let (d, q) = (self.d, self.q);
        let stride = q + 1;
        counts.iter_mut().for_each(|c| *c = 0);
        let mut sum1: i64 = 0;
        for i in 0..d {
            let zi = x[i] * y[i];
            sum1 += zi as i64;
            let mut j = 0;
            for g in 2..=q {
                let e = (i + g - 1) % d;
                let ze = x[e] * y[e];
                counts[g * stride + j] += (zi * ze) as i64;
                if ze < 0 {
                    j += 1;
                }
            }
        }
        let mut acc = self.w0 + self.w1 * T::lit(sum1 as f64);
        for g in 2..=q {
            for (j, &cg) in self.c[g].iter().enumerate() {
                let n = counts[g * stride + j];
                if n != 0 {
                    acc += cg * T::lit(n as f64);
                }
            }
        }
        acc
    }

    pub(crate) fn matrix(&self, a: &[HypercubePoint], b: &[HypercubePoint]) -> DMatrix<T> {
        let symmetric = std::ptr::eq(a, b) || a == b;
        let size = (self.q + 1) * (self.q + 1);
        let rows: Vec<Vec<T>> = (0..a.len())
            .into_par_iter()
            .map_init(
                || vec![0i64; size],
                |counts, i| {
                    let from = if symmetric { i } else { 0 };
                    (from..b.len()).map(|j| self.pair(a[i].coords(), b[j].coords(), counts)).collect()
                },
            )
            .collect();
        let mut out = DMatrix::zeros(a.len(), b.len());
        for (i, row) in rows.into_iter().enumerate() {
            if symmetric {
                for (off, v) in row.into_iter().enumerate() {
                    out[(i, i + off)] = v;
                    out[(i + off, i)] = v;
                }
            } else {
                for (j, v) in row.into_iter().enumerate() {
                    out[(i, j)] = v;
                }
            }
        }
        out
    }
}

/// Eigenvalues of the operator matrix `2^{-d} [K(u, v)]` over all of
/// `{-1,1}^d`, descending.
pub fn brute_force_spectrum<T: Scalar>(d: usize, q: usize, inner: &InnerFunction<T>) -> Result<Vec<T>> {
    if d > BRUTE_FORCE_MAX_DIM {
        return Err(Error::ResourceLimit(format!(
            "brute-force spectrum limited to d <= {BRUTE_FORCE_MAX_DIM}, got {d}"
        )));
    }
    let kernel = ConvKernel::new(d, q, inner.clone())?;
    let points: Vec<HypercubePoint> = (0..1u64 << d).map(|b| HypercubePoint::from_bits(b, d)).collect();
    let m = gram(&kernel, &points)? / T::lit((1u64 << d) as f64);
    Ok(eigenvalues_desc(&m))
}

/// Largest deviation between the closed-form eigenvalues (padded with zeros
/// to `2^d` entries) and a descending brute-force list, matched in sorted
/// order so multiplicities must agree.
pub fn oracle_deviation<T: Scalar>(spectrum: &Spectrum<T>, brute: &[T]) -> Result<T> {
    let mut closed = spectrum.eigenvalues();
    if closed.len() > brute.len() {
        return invalid(format!("{} closed-form eigenvalues but only {} from the oracle", closed.len(), brute.len()));
    }
    closed.resize(brute.len(), T::zero());
    closed.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    Ok(closed.iter().zip(brute).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
}

/// Largest `m` with `n lambda_m >= max(lambda, 1)`, extended to the end of its
/// degeneracy block; 0 if nothing qualifies.
pub fn select_truncation<T: Scalar>(spectrum: &Spectrum<T>, n: usize, ridge: T) -> usize {
    let level = ridge.max(T::one());
    let nf = T::lit(n as f64);
    let Some(last) = spectrum.profiles.iter().rposition(|p| nf * p.eigenvalue >= level) else {
        return 0;
    };
    let head = spectrum.profiles[last].eigenvalue;
    let mut end = last;
    while end + 1 < spectrum.profiles.len() && same_block(head, spectrum.profiles[end + 1].eigenvalue) {
        end += 1;
    }
    spectrum.profiles[end].span().end
}

/// Truncated feature expansion at `m` for a set of points.
#[derive(Debug, Clone)]
pub struct FeatureBundle<T> {
    pub m: usize,
    pub n: usize,
    pub low_sets: Vec<IndexSet>,
    /// `n x m` matrix `[Y_{S_j}(x_i)]`.
    pub p_low: DMatrix<T>,
    /// Top-`m` eigenvalues.
    pub d_low: DVector<T>,
    pub gram_low: DMatrix<T>,
    pub gram_high: DMatrix<T>,
    pub sq_gram_high: DMatrix<T>,
    /// `lambda_m`, absent for `m = 0`.
    pub lambda_m: Option<T>,
    /// `lambda_{m+1}`, zero past the end of the spectrum.
    pub lambda_next: T,
}

pub fn feature_bundle<T: Scalar>(spectrum: &Spectrum<T>, points: &[HypercubePoint], m: usize) -> Result<FeatureBundle<T>> {
    if m > spectrum.len() {
        return invalid(format!("truncation {m} exceeds spectrum size {}", spectrum.len()));
    }
    if points.is_empty() {
        return invalid("feature bundle needs at least one point");
    }
    if points.len().saturating_mul(m) > FEATURE_ENTRY_CAP {
        return Err(Error::ResourceLimit(format!(
            "feature matrix {} x {m} exceeds {FEATURE_ENTRY_CAP} entries",
            points.len()
        )));
    }
    spectrum.check_points(points)?;
    let low = spectrum.pairs_in(0..m);
    let low_sets: Vec<IndexSet> = low.iter().map(|p| p.subset.clone()).collect();
    let d_low = DVector::from_iterator(m, low.iter().map(|p| p.eigenvalue));
    let p_low = feature_matrix(&low_sets, points);
    let gram_low = &p_low * DMatrix::from_diagonal(&d_low) * p_low.transpose();
    let gram_high = spectrum.tail_matrix(points, points, m, |_| true, 1)?;
    let sq_gram_high = spectrum.tail_matrix(points, points, m, |_| true, 2)?;
    Ok(FeatureBundle {
        m,
        n: points.len(),
        low_sets,
        p_low,
        d_low,
        gram_low,
        gram_high,
        sq_gram_high,
        lambda_m: m.checked_sub(1).and_then(|i| spectrum.eigenvalue(i)),
        lambda_next: spectrum.eigenvalue(m).unwrap_or_else(T::zero),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsReport<T> {
    /// `|| P^T P / n - I_m ||`.
    pub concentration_norm: T,
    pub mu_min_high: T,
    pub norm_high: T,
    pub r1: T,
    pub r2: T,
    pub tau1: T,
    pub tau2: T,
    /// Concentration norm at most 1/2 and `r1 > 0`.
    pub condition_ok: bool,
}

pub fn diagnostics<T: Scalar>(bundle: &FeatureBundle<T>, ridge: T) -> DiagnosticsReport<T> {
    let nf = T::lit(bundle.n as f64);
    let scale = ridge.max(T::one());
    let concentration_norm = if bundle.m == 0 {
        T::zero()
    } else {
        let gram = bundle.p_low.transpose() * &bundle.p_low / nf - DMatrix::identity(bundle.m, bundle.m);
        sym_op_norm(&gram)
    };
    let ev = eigenvalues_desc(&bundle.gram_high);
    let mu_min_high = *ev.last().expect("nonempty");
    let norm_high = ev.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let r1 = (mu_min_high + ridge) / scale;
    let r2 = (norm_high + ridge) / scale;
    let tau1 = bundle.lambda_m.map_or(T::one(), |l| (nf * l / scale).min(T::one()));
    let tau2 = (nf * bundle.lambda_next / scale).max(T::one());
    DiagnosticsReport {
        concentration_norm,
        mu_min_high,
        norm_high,
        r1,
        r2,
        tau1,
        tau2,
        condition_ok: concentration_norm <= T::lit(0.5) && r1 > T::zero(),
    }
}

/// Split of the tail kernel into low-degree and high-degree parts.
#[derive(Debug, Clone)]
pub struct OneTwoSplit<T> {
    /// `floor((ell - 1)/beta)`.
    pub lbar: i64,
    /// Positions `i >= m` (0-based) with `|S_i| <= lbar + 1`, as spans.
    pub i1: Vec<Range<usize>>,
    /// Positions with `|S_i| >= lbar + 2`, as spans.
    pub i2: Vec<Range<usize>>,
    /// Smallest 1-based position in `i2`.
    pub mbar: Option<usize>,
    pub k1: DMatrix<T>,
    pub k2: DMatrix<T>,
    /// Whether `i1` and `i2` together are exactly the positions past `m`.
    pub union_ok: bool,
}

pub fn one_two_split<T: Scalar>(
    spectrum: &Spectrum<T>,
    points: &[HypercubePoint],
    m: usize,
    ell: f64,
    beta: f64,
) -> Result<OneTwoSplit<T>> {
    if !(beta > 0.0 && beta < 1.0) || !ell.is_finite() {
        return invalid(format!("need 0 < beta < 1 and finite ell (ell={ell}, beta={beta})"));
    }
    if m > spectrum.len() {
        return invalid(format!("truncation {m} exceeds spectrum size {}", spectrum.len()));
    }
    let lbar = guarded_floor((ell - 1.0) / beta);
    let low = |p: &Profile<T>| (p.degree as i64) <= lbar + 1;
    let mut i1 = Vec::new();
    let mut i2 = Vec::new();
    for p in &spectrum.profiles {
        let span = p.span();
        if low(p) {
            if span.end > m {
                i1.push(span.start.max(m)..span.end);
            }
        } else {
            i2.push(span);
        }
    }
    let mbar = i2.iter().map(|r| r.start + 1).min();
    let union_ok = mbar.is_none_or(|b| b > m);
    let k1 = spectrum.tail_matrix(points, points, m, low, 1)?;
    let k2 = spectrum.tail_matrix(points, points, 0, |p| !low(p), 1)?;
    Ok(OneTwoSplit { lbar, i1, i2, mbar, k1, k2, union_ok })
}

/// `Q_l(x, x') = sum_{|S| = l, gamma(S) <= q} (q + 1 - gamma(S)) / (d binom(q, l)) Y_S(x) Y_S(x')`,
/// with the empty set counted in all `d` windows so that `Q_0 = 1`.
pub fn q_matrix<T: Scalar>(d: usize, q: usize, l: usize, points: &[HypercubePoint]) -> Result<DMatrix<T>> {
    if q == 0 || l > q {
        return invalid(format!("need 0 <= l <= q and q >= 1 (l={l}, q={q})"));
    }
    for p in points {
        check_dim(d, p.dim())?;
    }
    let mut w = vec![vec![T::zero(); q + 1]; q + 1];
    let scale = d as f64 * binomial_f64(q, l);
    match l {
        0 => w[0][0] = T::lit(window_count(0, 0, q, d) as f64 / scale),
        1 => w[1][1] = T::lit(window_count(1, 1, q, d) as f64 / scale),
        _ => {
            for g in l..=q {
                w[l][g] = T::lit(window_count(l, g, q, d) as f64 / scale);
            }
        }
    }
    Ok(ProfileWeights::new(d, q, &w)?.matrix(points, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{cyclic_diameter, enumerate_local_subsets, sample_points};
    use crate::linalg::max_abs_diff;
    use approx::assert_relative_eq;

    fn exp_spectrum(d: usize, q: usize) -> Spectrum<f64> {
        full_spectrum(d, q, &InnerFunction::Exponential).unwrap()
    }

    #[test]
    fn counts_and_trace() {
        let s = exp_spectrum(8, 3);
        assert_eq!(s.len(), 33);
        let by_enumeration: usize = (0..=3).map(|l| enumerate_local_subsets(l, 3, 8).unwrap().len()).sum();
        assert_eq!(s.len(), by_enumeration);
        assert_relative_eq!(s.trace(), std::f64::consts::E, max_relative = 1e-10);
        let xi0 = s.xi().values[0];
        assert_eq!(s.eigenvalue_of(&IndexSet::empty(8)), xi0);
        assert!(full_spectrum(8, 4, &InnerFunction::<f64>::Exponential).is_err());
        assert!(Spectrum::with_cap(8, 3, &InnerFunction::<f64>::Exponential, 32).is_err());
    }

    #[test]
    fn pairs_follow_formula_and_order() {
        let s = exp_spectrum(10, 4);
        let pairs = s.pairs();
        assert_eq!(pairs.len(), s.len());
        let xi = s.xi();
        for (i, p) in pairs.iter().enumerate() {
            let l = p.subset.len();
            let g = cyclic_diameter(&p.subset);
            assert!(g <= 4);
            let windows = if l == 0 { 10 } else { 5 - g };
            let expected = xi.values[l] * windows as f64 / (10.0 * binomial_f64(4, l));
            assert_relative_eq!(p.eigenvalue, expected, max_relative = 1e-15);
            assert_eq!(s.position_of(&p.subset), Some(i));
        }
        for w in pairs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let key = |p: &EigenPair<f64>| (p.subset.len(), p.subset.diameter(), p.subset.clone());
            assert!(a.eigenvalue > b.eigenvalue || (same_block(a.eigenvalue, b.eigenvalue) && key(a) < key(b)));
        }
        let far = IndexSet::new(vec![0, 5], 10).unwrap();
        assert_eq!(s.position_of(&far), None);
        assert_eq!(s.eigenvalue_of(&far), 0.0);
    }

    #[test]
    fn brute_force_oracle_small() {
        let s = exp_spectrum(8, 3);
        let brute = brute_force_spectrum::<f64>(8, 3, &InnerFunction::Exponential).unwrap();
        assert_eq!(brute.len(), 256);
        assert!((brute[0] - s.eigenvalue(0).unwrap()).abs() <= 1e-10);
        assert!(oracle_deviation(&s, &brute).unwrap() <= 1e-10);
        let linear = InnerFunction::<f64>::polynomial(vec![0.0, 1.0]).unwrap();
        let brute = brute_force_spectrum(6, 2, &linear).unwrap();
        for (i, v) in brute.iter().enumerate() {
            let expected = if i < 6 { 1.0 / 6.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "{i}: {v}");
        }
        assert!(brute_force_spectrum(13, 3, &InnerFunction::<f64>::Exponential).is_err());
    }

    #[test]
    fn oracle_detects_tampered_eigenvalue() {
        let mut s = exp_spectrum(8, 3);
        let brute = brute_force_spectrum(8, 3, &InnerFunction::Exponential).unwrap();
        s.profiles[3].eigenvalue *= 1.0 + 1e-6;
        assert!(oracle_deviation(&s, &brute).unwrap() > 1e-10);
    }

    #[test]
    fn profile_multiplicities_match_enumeration() {
        let s = exp_spectrum(12, 5);
        for p in s.profiles() {
            let count = (0..=5)
                .flat_map(|l| enumerate_local_subsets(l, 5, 12).unwrap())
                .filter(|set| set.len() == p.degree && set.diameter() == p.diameter)
                .count();
            assert_eq!(count, p.multiplicity, "profile ({}, {})", p.degree, p.diameter);
        }
    }

    #[test]
    fn profile_sums_match_direct_kernel() {
        for (d, q, inner) in [
            (10, 3, InnerFunction::<f64>::Exponential),
            (11, 5, InnerFunction::<f64>::rbf(0.5).unwrap()),
            (9, 1, InnerFunction::<f64>::polynomial(vec![0.3, 1.0, -0.2]).unwrap()),
        ] {
            let s = full_spectrum(d, q, &inner).unwrap();
            let pts = sample_points(25, d, 4).unwrap();
            let direct = gram(&ConvKernel::new(d, q, inner).unwrap(), &pts).unwrap();
            let spectral = s.spectral_matrix(&pts, &pts, 1).unwrap();
            assert!(max_abs_diff(&direct, &spectral) <= 1e-10);
            // The same sum with explicit features.
            let pairs = s.pairs();
            let sets: Vec<IndexSet> = pairs.iter().map(|p| p.subset.clone()).collect();
            let p = feature_matrix::<f64>(&sets, &pts);
            let lam = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.eigenvalue * p.eigenvalue));
            let explicit = &p * DMatrix::from_diagonal(&lam) * p.transpose();
            assert!(max_abs_diff(&explicit, &s.spectral_matrix(&pts, &pts, 2).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn cross_matrix_is_consistent_with_symmetric_one() {
        let s = exp_spectrum(10, 3);
        let pts = sample_points(12, 10, 8).unwrap();
        let sym = s.spectral_matrix(&pts, &pts, 2).unwrap();
        let cross = s.spectral_matrix(&pts[..5], &pts, 2).unwrap();
        assert!(max_abs_diff(&sym.rows(0, 5).into_owned(), &cross) <= 1e-15);
    }

    #[test]
    fn truncation_rules() {
        let s = exp_spectrum(16, 4);
        assert_eq!(select_truncation(&s, 1, 10.0), 0);
        assert_eq!(select_truncation(&s, 1, 0.0), 1);
        let min = s.eigenvalue(s.len() - 1).unwrap();
        assert_eq!(select_truncation(&s, (1.0 / min).ceil() as usize + 1, 0.0), s.len());
        let ev = s.eigenvalues();
        for (n, ridge) in [(256, 0.0), (100, 0.0), (100, 16.0), (1000, 3.0)] {
            let level = f64::max(ridge, 1.0);
            let mut m = ev.iter().rposition(|&l| n as f64 * l >= level).map_or(0, |i| i + 1);
            while m > 0 && m < ev.len() && (ev[m] - ev[m - 1]).abs() <= 1e-12 * ev[m - 1] {
                m += 1;
            }
            assert_eq!(select_truncation(&s, n, ridge), m, "n={n} ridge={ridge}");
        }
    }

    #[test]
    fn bundle_identities() {
        let s = exp_spectrum(10, 3);
        let pts = sample_points(50, 10, 2).unwrap();
        let k = gram(&ConvKernel::new(10, 3, InnerFunction::<f64>::Exponential).unwrap(), &pts).unwrap();
        let full_s = s.spectral_matrix(&pts, &pts, 2).unwrap();
        for m in [0, 1, 7, 11, 20, s.len()] {
            let b = feature_bundle(&s, &pts, m).unwrap();
            assert!(max_abs_diff(&k, &(&b.gram_low + &b.gram_high)) <= 1e-10, "m={m}");
            let d2 = b.d_low.map(|v| v * v);
            let s_low = &b.p_low * DMatrix::from_diagonal(&d2) * b.p_low.transpose();
            assert!(max_abs_diff(&full_s, &(s_low + &b.sq_gram_high)) <= 1e-12);
            assert!(b.p_low.iter().all(|&v| v == 1.0 || v == -1.0));
        }
        let b = feature_bundle(&s, &pts, 0).unwrap();
        assert_eq!(b.p_low.ncols(), 0);
        assert!(max_abs_diff(&b.gram_high, &k) <= 1e-10);
        let b = feature_bundle(&s, &pts, s.len()).unwrap();
        assert!(b.gram_high.amax() <= 1e-10);
        assert_eq!(b.lambda_next, 0.0);
        assert!(feature_bundle(&s, &pts, s.len() + 1).is_err());
    }

    #[test]
    fn diagnostics_basics() {
        let s = exp_spectrum(10, 3);
        let pts = sample_points(40, 10, 5).unwrap();
        let b = feature_bundle(&s, &pts, 0).unwrap();
        let r = diagnostics(&b, 0.0);
        assert_eq!(r.concentration_norm, 0.0);
        assert_eq!(r.tau1, 1.0);
        assert!(r.r1 <= r.r2 && r.tau2 >= 1.0);
        let b = feature_bundle(&s, &pts, 11).unwrap();
        for ridge in [0.0, 1.0, 10.0] {
            let r = diagnostics(&b, ridge);
            assert!(r.r1 <= r.r2);
            assert!(r.tau1 > 0.0 && r.tau1 <= 1.0 && r.tau2 >= 1.0);
        }
    }

    #[test]
    fn one_two_split_reassembles_tail() {
        let s = exp_spectrum(16, 4);
        let pts = sample_points(40, 16, 1).unwrap();
        let m = select_truncation(&s, 256, 0.0);
        let split = one_two_split(&s, &pts, m, 2.0, 0.5).unwrap();
        assert_eq!(split.lbar, 2);
        let b = feature_bundle(&s, &pts, m).unwrap();
        if split.union_ok {
            assert!(max_abs_diff(&(&split.k1 + &split.k2), &b.gram_high) <= 1e-10);
        }
        let covered: usize = split.i1.iter().chain(&split.i2).map(|r| r.len()).sum();
        assert_eq!(covered == s.len() - m, split.union_ok);

        // Every degree sits in the first part when lbar + 1 is large.
        let split = one_two_split(&s, &pts, 0, 2.0, 0.2).unwrap();
        assert!(split.i2.is_empty() && split.mbar.is_none());
        assert_eq!(split.k2.amax(), 0.0);
        let k = gram(&ConvKernel::new(16, 4, InnerFunction::Exponential).unwrap(), &pts).unwrap();
        assert!(max_abs_diff(&split.k1, &k) <= 1e-10);
    }

    #[test]
    fn q_matrix_unit_diagonal() {
        let pts = sample_points(20, 16, 9).unwrap();
        for l in 0..=5 {
            let q = q_matrix::<f64>(16, 5, l, &pts).unwrap();
            assert!(q.diagonal().iter().all(|v| (v - 1.0).abs() <= 1e-12), "l={l}");
        }
        assert!(q_matrix::<f64>(16, 8, 1, &pts).is_err());
    }

    #[test]
    fn single_precision_spectrum() {
        let s = full_spectrum::<f32>(8, 3, &InnerFunction::Exponential).unwrap();
        assert!((s.trace() - std::f32::consts::E).abs() < 1e-5);
    }
}

//! Points of the Boolean hypercube, parity monomials, the cyclic diameter of
//! index sets and synthetic regression datasets.
//!
//! Indices are 0-based in memory. Text output (`Display`, CSV) uses 1-based
//! indices.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::combin::binomial_exact;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// RNG stream used for point coordinates.
const POINT_STREAM: u64 = 0;
/// RNG stream used for label noise.
const NOISE_STREAM: u64 = 1;

/// A vertex of `{-1, +1}^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HypercubePoint {
    coords: Vec<i8>,
}

impl HypercubePoint {
    pub fn new(coords: Vec<i8>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("hypercube point needs at least one coordinate");
        }
        if let Some(bad) = coords.iter().find(|&&c| c != 1 && c != -1) {
            return invalid(format!("coordinate {bad} is not a sign"));
        }
        Ok(Self { coords })
    }

    /// The all-ones vertex.
    pub fn ones(d: usize) -> Self {
        Self { coords: vec![1; d] }
    }

    /// Decodes bit `i` of `bits` as coordinate `i` (set bit means `-1`).
    pub fn from_bits(bits: u64, d: usize) -> Self {
        let coords = (0..d)
            .map(|i| if bits >> i & 1 == 1 { -1 } else { 1 })
            .collect();
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[i8] {
        &self.coords
    }

    /// Elementwise product, the only quantity a parity feature pair depends on.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).collect(),
        })
    }

    /// Cyclic shift by `k` positions: coordinate `i` moves to `i + k mod d`.
    pub fn shifted(&self, k: usize) -> Self {
        let d = self.dim();
        let mut coords = vec![0; d];
        for (i, &c) in self.coords.iter().enumerate() {
            coords[(i + k) % d] = c;
        }
        Self { coords }
    }
}

/// A subset `S` of `{0, .., d-1}` together with its cyclic diameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet {
    members: Vec<usize>,
    ambient_dim: usize,
    diameter: usize,
}

impl IndexSet {
    /// Builds a set from 0-based indices in any order.
    pub fn new(mut members: Vec<usize>, ambient_dim: usize) -> Result<Self> {
        if ambient_dim == 0 {
            return invalid("ambient dimension must be positive");
        }
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&i| i >= ambient_dim) {
            return invalid(format!("index {} out of range 1..={ambient_dim}", bad + 1));
        }
        let diameter = window_diameter(&members, ambient_dim);
        Ok(Self { members, ambient_dim, diameter })
    }

    /// Builds a set from 1-based indices, as used in text interfaces.
    pub fn from_one_based(members: &[usize], ambient_dim: usize) -> Result<Self> {
        if members.contains(&0) {
            return invalid("1-based index 0 is out of range");
        }
        Self::new(members.iter().map(|i| i - 1).collect(), ambient_dim)
    }

    /// `{0, .., len-1}`, the support of the ground truth monomial.
    pub fn prefix(len: usize, ambient_dim: usize) -> Result<Self> {
        if len > ambient_dim {
            return invalid(format!("prefix length {len} exceeds dimension {ambient_dim}"));
        }
        Self::new((0..len).collect(), ambient_dim)
    }

    pub fn empty(ambient_dim: usize) -> Self {
        Self { members: Vec::new(), ambient_dim, diameter: 0 }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Elementwise cyclic shift by `k`.
    pub fn shifted(&self, k: usize) -> Self {
        let d = self.ambient_dim;
        Self::new(self.members.iter().map(|i| (i + k) % d).collect(), d)
            .expect("shift keeps indices in range")
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (pos, i) in self.members.iter().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// Smallest number of cyclically contiguous indices containing `members`
/// (sorted, in range).
fn window_diameter(members: &[usize], d: usize) -> usize {
    match members {
        [] => 0,
        [_] => 1,
        _ => {
            let wrap_gap = members[0] + d - members[members.len() - 1];
            let max_gap = members
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(wrap_gap, usize::max);
            d - max_gap + 1
        }
    }
}

/// Cyclic diameter `gamma(S)`: the length of the shortest wrap-around window
/// of consecutive indices that contains `S`; 0 for the empty set.
pub fn cyclic_diameter(set: &IndexSet) -> usize {
    set.diameter
}

/// Computes the cyclic diameter of raw 0-based indices.
pub fn cyclic_diameter_of(members: &[usize], d: usize) -> Result<usize> {
    Ok(IndexSet::new(members.to_vec(), d)?.diameter)
}

fn check_local_regime(l: usize, q: usize, d: usize) -> Result<()> {
    if l > q {
        return invalid(format!("degree {l} exceeds filter size {q}"));
    }
    if 2 * q >= d {
        return invalid(format!("filter size {q} must satisfy q < d/2 (d = {d})"));
    }
    Ok(())
}

/// All sets of size `l` whose members lie in one window of length exactly
/// `g`, both window endpoints included. Requires `g < d/2` for uniqueness of
/// the window. Output is sorted lexicographically.
pub fn profile_members(l: usize, g: usize, d: usize) -> Vec<IndexSet> {
    let mut out = Vec::new();
    match (l, g) {
        (0, 0) => out.push(IndexSet::empty(d)),
        (1, 1) => out.extend((0..d).map(|i| IndexSet { members: vec![i], ambient_dim: d, diameter: 1 })),
        (l, g) if l >= 2 && g >= l => {
            let interior = g - 2;
            for start in 0..d {
                let end = (start + g - 1) % d;
                for_each_combination(interior, l - 2, |picked| {
                    let mut members: Vec<usize> = picked
                        .iter()
                        .map(|&o| (start + 1 + o) % d)
                        .chain([start, end])
                        .collect();
                    members.sort_unstable();
                    out.push(IndexSet { members, ambient_dim: d, diameter: g });
                });
            }
        }
        _ => {}
    }
    out.sort();
    out
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every `S` with `|S| = l` and `gamma(S) <= q`, in lexicographic order.
pub fn enumerate_local_subsets(l: usize, q: usize, d: usize) -> Result<Vec<IndexSet>> {
    check_local_regime(l, q, d)?;
    let mut out: Vec<IndexSet> = match l {
        0 => vec![IndexSet::empty(d)],
        1 => profile_members(1, 1, d),
        _ => (l..=q).flat_map(|g| profile_members(l, g, d)).collect(),
    };
    out.sort();
    Ok(out)
}

/// Closed-form count of sets with `|S| = l` and `gamma(S) <= q`:
/// `1` for `l = 0`, otherwise `d * C(q-1, l-1)`.
pub fn count_local_subsets(l: usize, q: usize, d: usize) -> Result<u128> {
    check_local_regime(l, q, d)?;
    if l == 0 {
        return Ok(1);
    }
    binomial_exact(q - 1, l - 1)
        .and_then(|b| b.checked_mul(d as u128))
        .ok_or_else(|| Error::NumericOverflow(format!("C({l},{q},{d}) overflows")))
}

/// Parity monomial `Y_S(x) = prod_{i in S} x_i`.
pub fn monomial_eval(set: &IndexSet, x: &HypercubePoint) -> Result<i8> {
    check_dim(set.ambient_dim(), x.dim())?;
    Ok(set.members.iter().map(|&i| x.coords[i]).product())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `n` independent uniform points of `{-1,+1}^d`, deterministic in `seed`.
pub fn sample_points(n: usize, d: usize, seed: u64) -> Result<Vec<HypercubePoint>> {
    if n == 0 || d == 0 {
        return invalid(format!("sample_points requires n, d >= 1 (n={n}, d={d})"));
    }
    let mut rng = stream_rng(seed, POINT_STREAM);
    Ok((0..n)
        .map(|_| HypercubePoint {
            coords: (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
        })
        .collect())
}

/// First seed at or after `start` whose `n` sampled points are pairwise
/// distinct, so the Gram matrix can be nonsingular.
pub fn distinct_points_seed(n: usize, d: usize, start: u64) -> Result<u64> {
    if d < 64 && (n as u128) > (1u128 << d) {
        return invalid(format!("cannot draw {n} distinct points from {{-1,1}}^{d}"));
    }
    for s in start..start.saturating_add(100_000) {
        let mut pts = sample_points(n, d, s)?;
        pts.sort_by(|a, b| a.coords.cmp(&b.coords));
        if pts.windows(2).all(|w| w[0] != w[1]) {
            return Ok(s);
        }
    }
    Err(Error::ResourceLimit(format!("no seed with {n} distinct points in {{-1,1}}^{d} near {start}")))
}

/// ChaCha8 generator for one of the independent sub-streams of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draws via the Ziggurat method of `rand_distr`.
pub fn gaussian_noise(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Noisy observations of the parity `x_1 x_2 ... x_{L*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub points: Vec<HypercubePoint>,
    pub labels: Vec<T>,
    pub noise_std: f64,
    pub ground_truth_degree: usize,
    pub seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Support of the ground truth monomial.
    pub fn ground_truth_set(&self) -> IndexSet {
        IndexSet::prefix(self.ground_truth_degree, self.dim()).expect("validated at construction")
    }

    /// Noiseless targets `f*(x_i)`.
    pub fn ground_truth_values(&self) -> Vec<T> {
        let s = self.ground_truth_set();
        self.points
            .iter()
            .map(|x| T::lit(monomial_eval(&s, x).expect("same dimension") as f64))
            .collect()
    }

    /// Recomputes the labels from the stored points, seed and noise level.
    pub fn regenerate_labels(&self) -> Vec<T> {
        labels_for(&self.points, self.ground_truth_degree, self.noise_std, self.seed)
    }

    /// Writes the dataset as CSV: a `#` header line with the generation
    /// parameters, a column header, then one row per point with coordinates as
    /// `+1`/`-1` integers and the label.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        writeln!(
            out,
            "# d={},n={},sigma={},L*={},seed={}",
            d,
            self.n(),
            self.noise_std,
            self.ground_truth_degree,
            self.seed
        )?;
        let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for (x, y) in self.points.iter().zip(&self.labels) {
            for c in x.coords() {
                write!(out, "{c},")?;
            }
            writeln!(out, "{:.17e}", y.as_f64())?;
        }
        Ok(())
    }

    /// Parses the format produced by [`Dataset::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of dataset".into()))?
                .map_err(|e| Error::Parse(e.to_string()))
        };
        let meta = next()?;
        let meta = meta
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing '# ' metadata line".into()))?;
        let mut d = None;
        let mut n = None;
        let mut sigma = None;
        let mut l_star = None;
        let mut seed = None;
        for kv in meta.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad metadata entry '{kv}'")))?;
            let bad = |_| Error::Parse(format!("bad value for {k}: '{v}'"));
            match k {
                "d" => d = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "sigma" => sigma = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "L*" => l_star = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(Error::Parse(format!("unknown metadata key '{k}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("metadata lacks {k}"));
        let d = d.ok_or_else(|| missing("d"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        next()?;
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row = next()?;
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Parse(format!("row has {} fields, expected {}", fields.len(), d + 1)));
            }
            let coords = fields[..d]
                .iter()
                .map(|f| f.trim().parse::<i8>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            points.push(HypercubePoint::new(coords)?);
            let y: f64 = fields[d].trim().parse().map_err(|_| Error::Parse(format!("bad label '{}'", fields[d])))?;
            labels.push(T::lit(y));
        }
        Ok(Self {
            points,
            labels,
            noise_std: sigma.ok_or_else(|| missing("sigma"))?,
            ground_truth_degree: l_star.ok_or_else(|| missing("L*"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

fn labels_for<T: Scalar>(points: &[HypercubePoint], l_star: usize, sigma: f64, seed: u64) -> Vec<T> {
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let noise = gaussian_noise(points.len(), sigma, &mut rng);
    points
        .iter()
        .zip(noise)
        .map(|(x, e)| {
            let truth: i8 = x.coords()[..l_star].iter().product();
            T::lit(truth as f64 + e)
        })
        .collect()
}

/// Samples `n` points and labels `y = x_1 ... x_{L*} + N(0, sigma^2)`.
/// Points and noise come from separate streams of `seed`.
pub fn make_dataset<T: Scalar>(
    n: usize,
    d: usize,
    ground_truth_degree: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if ground_truth_degree == 0 || ground_truth_degree > d {
        return invalid(format!("ground truth degree must lie in 1..={d}, got {ground_truth_degree}"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return invalid(format!("noise std must be finite and >= 0, got {noise_std}"));
    }
    let points = sample_points(n, d, seed)?;
    let labels = labels_for(&points, ground_truth_degree, noise_std, seed);
    Ok(Dataset { points, labels, noise_std, ground_truth_degree, seed })
}

//! Rate exponents of variance, squared bias and risk as powers of `n`, for
//! `n ~ d^ell`, `q ~ d^beta`, `sigma^2 ~ d^-ell_sigma` and ridge
//! `lambda ~ d^ell_lambda`.

use std::fmt;

use crate::combin::{guarded_floor, FLOOR_GUARD};
use crate::error::{invalid, Result};

/// Accuracy of the minimizer endpoints in `ell_lambda` (bisection runs to
/// machine precision, well inside this).
pub const REG_RATE_TOL: f64 = 1e-10;
/// Two exponents closer than this count as equal.
pub const ETA_TOL: f64 = 1e-12;
/// `|g(beta)|` below which the interpolator sits exactly at the transition.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Grid step of the transition scan.
pub const BETA_GRID_STEP: f64 = 1e-4;
/// Bisection tolerance of the transition scan.
pub const BETA_TOL: f64 = 1e-9;
/// Roots closer than this are merged.
pub const BETA_DEDUP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub ell: f64,
    pub beta: f64,
    pub ell_sigma: f64,
    pub ell_lambda: f64,
    pub l_star: usize,
}

impl RateParams {
    pub fn new(ell: f64, beta: f64, ell_sigma: f64, ell_lambda: f64, l_star: usize) -> Result<Self> {
        let p = Self { ell, beta, ell_sigma, ell_lambda, l_star };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return invalid(format!("ell must be positive, got {}", self.ell));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return invalid(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !self.ell_sigma.is_finite() {
            return invalid("ell_sigma must be finite");
        }
        if !(self.ell_lambda >= 0.0 && self.ell_lambda.is_finite()) {
            return invalid(format!("ell_lambda must be finite and >= 0, got {}", self.ell_lambda));
        }
        if self.l_star == 0 {
            return invalid("L* must be at least 1");
        }
        Ok(())
    }

    /// `ell - 1 - beta (L* - 1)`, the largest admissible `ell_lambda`.
    pub fn ell_bar(&self) -> f64 {
        self.ell - 1.0 - self.beta * (self.l_star as f64 - 1.0)
    }

    pub fn with_ell_lambda(&self, ell_lambda: f64) -> Self {
        Self { ell_lambda, ..*self }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..*self }
    }

    /// `floor((ell - ell_lambda - 1) / beta)`.
    pub fn big_l(&self) -> i64 {
        guarded_floor((self.ell - self.ell_lambda - 1.0) / self.beta)
    }

    /// Whether `L* - 1 <= (ell - ell_lambda - 1) / beta`, i.e.
    /// `ell_lambda <= ell_bar`.
    pub fn satisfies_constraint(&self) -> bool {
        (self.l_star as f64 - 1.0) <= (self.ell - self.ell_lambda - 1.0) / self.beta + FLOOR_GUARD
    }
}

fn frac(x: f64) -> f64 {
    let f = x - guarded_floor(x) as f64;
    if f < 0.0 {
        0.0
    } else {
        f
    }
}

/// `(delta, delta_bar)`: fractional parts of `(ell - ell_lambda - 1)/beta`
/// and `(ell - 1)/beta`.
pub fn fractional_parts(params: &RateParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok((
        frac((params.ell - params.ell_lambda - 1.0) / params.beta),
        frac((params.ell - 1.0) / params.beta),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateExponents {
    pub delta: f64,
    pub delta_bar: f64,
    pub eta_v: f64,
    pub eta_b: f64,
    pub eta: f64,
}

fn eta_parts(p: &RateParams) -> (f64, f64, f64, f64) {
    let delta = frac((p.ell - p.ell_lambda - 1.0) / p.beta);
    let eta_v = (-p.ell_sigma - p.ell_lambda) / p.ell - (p.beta / p.ell) * delta.min(1.0 - delta);
    let eta_b = -2.0 - (2.0 / p.ell) * (-p.ell_lambda - 1.0 - p.beta * (p.l_star as f64 - 1.0));
    (delta, eta_v, eta_b, eta_v.max(eta_b))
}

/// `eta_v = (-ell_sigma - ell_lambda)/ell - (beta/ell) min(delta, 1 - delta)`,
/// `eta_b = -2 - (2/ell)(-ell_lambda - 1 - beta(L* - 1))`, `eta = max`.
pub fn rate_exponents(params: &RateParams) -> Result<RateExponents> {
    params.validate()?;
    if !params.satisfies_constraint() {
        return invalid(format!(
            "L* = {} too large for ell = {}, ell_lambda = {}, beta = {}",
            params.l_star, params.ell, params.ell_lambda, params.beta
        ));
    }
    let (delta, eta_v, eta_b, eta) = eta_parts(params);
    let delta_bar = frac((params.ell - 1.0) / params.beta);
    Ok(RateExponents { delta, delta_bar, eta_v, eta_b, eta })
}

/// Minimizers `[lo, hi]` of `eta` over `ell_lambda in [0, ell_bar]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalRegRate {
    pub lo: f64,
    pub hi: f64,
    pub eta_min: f64,
    /// `eta` of the interpolator (`ell_lambda = 0`).
    pub eta_zero: f64,
}

fn bisect(mut a: f64, mut b: f64, tol: f64, mut left: impl FnMut(f64) -> bool) -> (f64, f64) {
    // Invariant: left(a) holds, left(b) fails.
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if left(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    (a, b)
}

/// Minimizes `eta` over `ell_lambda`. The difference `eta_v - eta_b` is
/// strictly decreasing, so its root (found by bisection) is the right end of
/// the minimizing set; the left end is where `eta` first reaches its minimum.
pub fn optimal_reg_rate(params: &RateParams) -> Result<OptimalRegRate> {
    let base = params.with_ell_lambda(0.0);
    base.validate()?;
    let ell_bar = base.ell_bar();
    if ell_bar < -FLOOR_GUARD {
        return invalid(format!("ell_bar = {ell_bar} is negative"));
    }
    let ell_bar = ell_bar.max(0.0);
    let at = |x: f64| eta_parts(&base.with_ell_lambda(x));
    let h = |x: f64| {
        let (_, v, b, _) = at(x);
        v - b
    };
    let eta = |x: f64| at(x).3;
    let eta_zero = eta(0.0);
    let hi = if h(0.0) <= 0.0 {
        0.0
    } else if h(ell_bar) > 0.0 {
        ell_bar
    } else {
        bisect(0.0, ell_bar, 0.0, |x| h(x) > 0.0).1
    };
    let eta_min = eta(hi);
    let lo = if eta(0.0) <= eta_min + ETA_TOL {
        0.0
    } else {
        bisect(0.0, hi, 0.0, |x| eta(x) > eta_min + ETA_TOL).1
    };
    Ok(OptimalRegRate { lo, hi, eta_min, eta_zero })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    HarmfulInterpolation,
    HarmlessInterpolation,
    Boundary,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HarmfulInterpolation => "harmful_interpolation",
            Self::HarmlessInterpolation => "harmless_interpolation",
            Self::Boundary => "boundary",
        })
    }
}

/// Harmful when every minimizer of `eta` beats the interpolator, harmless
/// when the interpolator is the unique minimizer, boundary otherwise or when
/// the interpolator's bias and variance exponents coincide.
pub fn training_error_regime(params: &RateParams) -> Result<Regime> {
    let opt = optimal_reg_rate(params)?;
    let (_, v, b, _) = eta_parts(&params.with_ell_lambda(0.0));
    if (v - b).abs() <= BOUNDARY_TOL {
        return Ok(Regime::Boundary);
    }
    Ok(if opt.eta_min < opt.eta_zero - ETA_TOL {
        Regime::HarmfulInterpolation
    } else if opt.hi <= REG_RATE_TOL {
        Regime::HarmlessInterpolation
    } else {
        Regime::Boundary
    })
}

/// Roots of `g(beta) = eta_v(0; beta) - eta_b(0; beta)` in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaStar {
    pub roots: Vec<f64>,
}

impl BetaStar {
    pub fn unique(&self) -> Option<f64> {
        match self.roots.as_slice() {
            [r] => Some(*r),
            _ => None,
        }
    }

    pub fn is_unique(&self) -> bool {
        self.roots.len() == 1
    }
}

/// `eta_v(0) - eta_b(0)` at `beta`, `None` where the parameters are invalid.
pub fn interpolator_gap(ell: f64, ell_sigma: f64, l_star: usize, beta: f64) -> Option<f64> {
    let p = RateParams::new(ell, beta, ell_sigma, 0.0, l_star).ok()?;
    if !p.satisfies_constraint() {
        return None;
    }
    let (_, v, b, _) = eta_parts(&p);
    Some(v - b)
}

pub fn beta_star(ell: f64, ell_sigma: f64, l_star: usize) -> BetaStar {
    beta_star_on_grid(ell, ell_sigma, l_star, BETA_GRID_STEP, 0.0)
}

/// Scans `beta = offset + k step` inside `(0, 1)` for sign changes of the
/// interpolator gap, refines each by bisection and merges near-duplicates.
pub fn beta_star_on_grid(ell: f64, ell_sigma: f64, l_star: usize, step: f64, offset: f64) -> BetaStar {
    let g = |b: f64| interpolator_gap(ell, ell_sigma, l_star, b);
    let mut roots: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut k = 0usize;
    loop {
        let beta = offset + step * k as f64;
        k += 1;
        if beta >= 1.0 {
            break;
        }
        if beta <= 0.0 {
            continue;
        }
        let Some(val) = g(beta) else {
            prev = None;
            continue;
        };
        if val == 0.0 {
            roots.push(beta);
        } else if let Some((pb, pv)) = prev {
            if pv != 0.0 && (pv < 0.0) != (val < 0.0) {
                let left_sign = pv < 0.0;
                let (a, b) = bisect(pb, beta, BETA_TOL, |x| g(x).is_some_and(|v| (v < 0.0) == left_sign));
                roots.push(0.5 * (a + b));
            }
        }
        prev = Some((beta, val));
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    roots.dedup_by(|a, b| (*a - *b).abs() <= BETA_DEDUP);
    BetaStar { roots }
}

/// Summary of the phase picture at one `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub beta_star: BetaStar,
    pub regime: Regime,
    pub opt_reg_rate: OptimalRegRate,
}

pub fn phase_report(ell: f64, ell_sigma: f64, l_star: usize, beta: f64) -> Result<PhaseReport> {
    let params = RateParams::new(ell, beta, ell_sigma, 0.0, l_star)?;
    Ok(PhaseReport {
        beta_star: beta_star(ell, ell_sigma, l_star),
        regime: training_error_regime(&params)?,
        opt_reg_rate: optimal_reg_rate(&params)?,
    })
}

/// One line of a rate table over `beta`, at the interpolator.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub beta: f64,
    pub eta_v: f64,
    pub eta_b: f64,
    pub eta: f64,
    pub opt: OptimalRegRate,
    pub regime: Regime,
}

pub fn rate_table(ell: f64, ell_sigma: f64, l_star: usize, betas: &[f64]) -> Result<Vec<RateRow>> {
    betas
        .iter()
        .map(|&beta| {
            let p = RateParams::new(ell, beta, ell_sigma, 0.0, l_star)?;
            let e = rate_exponents(&p)?;
            Ok(RateRow {
                beta,
                eta_v: e.eta_v,
                eta_b: e.eta_b,
                eta: e.eta,
                opt: optimal_reg_rate(&p)?,
                regime: training_error_regime(&p)?,
            })
        })
        .collect()
}

/// Parameters of the paper's first figure: `ell = 2`, `ell_sigma = 0.6`,
/// ground truth `x_1 x_2`.
pub const FIG1_ELL: f64 = 2.0;
pub const FIG1_ELL_SIGMA: f64 = 0.6;
pub const FIG1_L_STAR: usize = 2;

/// `beta = 0.005 + 0.01 k`, `k = 0..99`: midpoints of a 0.01 grid, which
/// avoid the isolated `beta` values where the interpolator ties the optimum
/// below the transition.
pub fn fig1_betas() -> Vec<f64> {
    (0..100).map(|k| 0.005 + 0.01 * k as f64).collect()
}

pub fn fig1_table() -> Result<Vec<RateRow>> {
    rate_table(FIG1_ELL, FIG1_ELL_SIGMA, FIG1_L_STAR, &fig1_betas())
}

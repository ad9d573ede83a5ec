//! Exact and log-space binomial coefficients and Krawtchouk polynomial values.

use crate::error::{Error, Result};

/// Largest `n` for which binomials are evaluated in exact integer arithmetic.
pub const EXACT_BINOMIAL_LIMIT: usize = 60;

/// Exact binomial coefficient, `None` on overflow of `u128`.
pub fn binomial_exact(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Natural log of `binom(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
        .sum()
}

/// Binomial coefficient as `f64`: exact up to [`EXACT_BINOMIAL_LIMIT`],
/// log-space beyond.
pub fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    if n <= EXACT_BINOMIAL_LIMIT {
        binomial_exact(n, k).map(|b| b as f64).unwrap_or(f64::INFINITY)
    } else {
        ln_binomial(n, k).exp()
    }
}

/// Exact Krawtchouk value `K_l(k; q) = sum_j (-1)^j C(k, j) C(q-k, l-j)`.
///
/// Equals the elementary symmetric polynomial of degree `l` evaluated at a
/// sign vector of length `q` with exactly `k` entries equal to `-1`.
pub fn krawtchouk_exact(l: usize, k: usize, q: usize) -> Result<i128> {
    if l > q || k > q {
        return Err(Error::InvalidArgument(format!(
            "krawtchouk requires l, k <= q (l={l}, k={k}, q={q})"
        )));
    }
    let mut acc: i128 = 0;
    for j in 0..=l.min(k) {
        if l - j > q - k {
            continue;
        }
        let a = binomial_exact(k, j).ok_or_else(|| overflow(q))?;
        let b = binomial_exact(q - k, l - j).ok_or_else(|| overflow(q))?;
        let term = i128::try_from(a.checked_mul(b).ok_or_else(|| overflow(q))?)
            .map_err(|_| overflow(q))?;
        if j % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok(acc)
}

fn overflow(q: usize) -> Error {
    Error::NumericOverflow(format!("binomials for q={q} exceed exact range"))
}

/// Table `t[l][k] = K_l(k; q)` for `0 <= l, k <= q` as `f64`.
///
/// Exact integers for `q <= EXACT_BINOMIAL_LIMIT`; above that the three-term
/// recurrence `(l+1) K_{l+1} = (q-2k) K_l - (q-l+1) K_{l-1}` is run in floating
/// point.
pub fn krawtchouk_table(q: usize) -> Result<Vec<Vec<f64>>> {
    let mut table = vec![vec![0.0; q + 1]; q + 1];
    if q <= EXACT_BINOMIAL_LIMIT {
        for (l, row) in table.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = krawtchouk_exact(l, k, q)? as f64;
            }
        }
        return Ok(table);
    }
    for k in 0..=q {
        table[0][k] = 1.0;
        if q >= 1 {
            table[1][k] = q as f64 - 2.0 * k as f64;
        }
        for l in 1..q {
            let next = ((q as f64 - 2.0 * k as f64) * table[l][k]
                - (q - l + 1) as f64 * table[l - 1][k])
                / (l + 1) as f64;
            if !next.is_finite() {
                return Err(Error::NumericOverflow(format!(
                    "krawtchouk recurrence overflowed at q={q}, l={}",
                    l + 1
                )));
            }
            table[l + 1][k] = next;
        }
    }
    Ok(table)
}

/// Rounding guard used where a real ratio sits inside a floor.
pub const FLOOR_GUARD: f64 = 1e-12;

/// `floor(x)`, except that values within [`FLOOR_GUARD`] of an integer snap to
/// that integer, so `2.9999999999999996` floors to 3.
pub fn guarded_floor(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= FLOOR_GUARD {
        r as i64
    } else {
        x.floor() as i64
    }
}

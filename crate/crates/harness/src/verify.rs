//! Oracle suite: each check compares a library route against an independent one.

use std::time::Instant;

use anyhow::Result;
use convkernel::hypercube::{cyclic_diameter_of, stream_rng, gaussian_noise};
use convkernel::rates::{optimal_reg_rate, rate_exponents, RateParams};
use convkernel::spectrum::oracle_deviation;
use convkernel::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise stream for the training-error resampling, separate from the one
/// the library's Monte-Carlo risk uses.
const TRAIN_NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => anyhow::bail!("unknown verify level {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e:#}")));
    Check { name: name.to_string(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Closed-form eigenvalues against a dense eigensolve of the operator matrix.
pub fn spectrum_oracle(d: usize, q: usize, inner: &InnerFunction64) -> Check {
    timed(&format!("spectrum_oracle d={d} q={q}"), || {
        let s = full_spectrum(d, q, inner)?;
        let dev = oracle_deviation(&s, &brute_force_spectrum(d, q, inner)?)?;
        let trace_err = (s.trace() - inner.eval(1.0)).abs();
        Ok((dev <= 1e-10 && trace_err <= 1e-10, format!("max_dev={dev:.3e} trace_err={trace_err:.3e} pairs={}", s.len())))
    })
}

/// Counting formula and enumeration against a scan of all subsets.
pub fn combinatorics(dims: &[usize], max_q: usize) -> Check {
    timed("combinatorics", || {
        let mut cases = 0;
        for &d in dims {
            let diam: Vec<(u32, usize)> = (0u32..1 << d)
                .map(|m| {
                    let members: Vec<usize> = (0..d).filter(|i| m >> i & 1 == 1).collect();
                    (m.count_ones(), cyclic_diameter_of(&members, d).expect("valid"))
                })
                .collect();
            for q in 0..=max_q.min((d - 1) / 2) {
                for l in 0..=q {
                    let brute = diam.iter().filter(|(c, g)| *c as usize == l && *g <= q).count() as u128;
                    let formula = count_local_subsets(l, q, d)?;
                    let listed = enumerate_local_subsets(l, q, d)?.len() as u128;
                    if formula != brute || listed != brute {
                        return Ok((false, format!("l={l} q={q} d={d}: formula {formula}, listed {listed}, brute {brute}")));
                    }
                    cases += 1;
                }
            }
        }
        Ok((true, format!("{cases} (l,q,d) cases exact")))
    })
}

pub fn inner_variants() -> Vec<InnerFunction64> {
    vec![
        InnerFunction::Exponential,
        InnerFunction::rbf(0.5).expect("valid"),
        InnerFunction::rbf(2.0).expect("valid"),
        InnerFunction::polynomial(vec![0.2, 1.0, -0.5, 0.25]).expect("valid"),
    ]
}

/// `E_z[kappa(sum z / q) e_l(z)]` over all of `{-1,1}^q`, with the elementary
/// symmetric polynomial expanded one coordinate at a time.
pub fn xi_by_enumeration(inner: &InnerFunction64, q: usize) -> Vec<f64> {
    let mut acc = vec![0.0; q + 1];
    let mut e = vec![0.0; q + 1];
    for bits in 0u32..1 << q {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[0] = 1.0;
        let mut sum = 0.0;
        for i in 0..q {
            let zi = if bits >> i & 1 == 1 { -1.0 } else { 1.0 };
            sum += zi;
            for l in (1..=q).rev() {
                e[l] += zi * e[l - 1];
            }
        }
        let k = inner.eval(sum / q as f64);
        for l in 0..=q {
            acc[l] += k * e[l];
        }
    }
    acc.iter().map(|a| a / f64::powi(2.0, q as i32)).collect()
}

/// Krawtchouk-projected coefficients against the exhaustive projection, and
/// the reconstruction identity at every node.
pub fn xi_oracle(max_q: usize) -> Check {
    timed("xi_oracle", || {
        let mut worst_proj: f64 = 0.0;
        let mut worst_rec: f64 = 0.0;
        for inner in inner_variants() {
            for q in 1..=max_q {
                let xi = xi_coefficients(&inner, q)?;
                let scale = xi.max_abs();
                for (a, b) in xi.values.iter().zip(xi_by_enumeration(&inner, q)) {
                    worst_proj = worst_proj.max((a - b).abs() / scale);
                }
                for k in 0..=q {
                    let direct = inner.eval((q as f64 - 2.0 * k as f64) / q as f64);
                    worst_rec = worst_rec.max((direct - xi.reconstruct(k)?).abs() / direct.abs().max(1.0));
                }
            }
        }
        Ok((worst_proj <= 1e-10 && worst_rec <= 1e-10, format!("projection_rel={worst_proj:.3e} reconstruction={worst_rec:.3e}")))
    })
}

/// `Q_l(x, x) = 1` for every `l <= q`.
pub fn q_diagonal(d: usize, q: usize, points: usize, seed: u64) -> Check {
    timed(&format!("q_diagonal d={d} q={q}"), || {
        let pts = sample_points(points, d, seed)?;
        let mut worst: f64 = 0.0;
        for l in 0..=q {
            let m: DMatrix<f64> = q_matrix(d, q, l, &pts)?;
            worst = worst.max(m.diagonal().iter().fold(0.0, |w, v| w.max((v - 1.0).abs())));
        }
        Ok((worst <= 1e-12, format!("max |Q_l(x,x) - 1| = {worst:.3e}")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskComparison {
    pub ridge: f64,
    pub closed: RiskReport64,
    pub mc: RiskReport64,
}

impl RiskComparison {
    pub fn z_scores(&self) -> (f64, f64) {
        let se = self.mc.stderr.expect("batched estimate");
        (
            (self.closed.bias_sq - self.mc.bias_sq).abs() / se.bias_sq,
            (self.closed.variance - self.mc.variance).abs() / se.variance,
        )
    }
}

/// The dataset used by the risk and training-error checks: the first seed
/// at or after `seed` whose points are distinct.
pub fn risk_dataset(d: usize, n: usize, l_star: usize, sigma: f64, seed: u64) -> Result<Dataset64> {
    let s = distinct_points_seed(n, d, seed)?;
    Ok(make_dataset(n, d, l_star, sigma, s)?)
}

pub fn risk_comparisons(dataset: &Dataset64, q: usize, ridges: &[f64], draws: usize) -> Result<Vec<RiskComparison>> {
    let inner = InnerFunction::Exponential;
    let kernel = ConvKernel::new(dataset.dim(), q, inner.clone())?;
    let spectrum = full_spectrum(dataset.dim(), q, &inner)?;
    ridges
        .iter()
        .map(|&ridge| {
            let closed = closed_form_risk(&fit(dataset, &kernel, ridge)?, &spectrum)?;
            let mc = monte_carlo_risk(dataset, &kernel, ridge, draws, &TestMode::Exhaustive)?;
            Ok(RiskComparison { ridge, closed, mc })
        })
        .collect()
}

/// Closed-form bias and variance within three Monte-Carlo standard errors.
pub fn mc_risk(d: usize, q: usize, n: usize, ridges: &[f64], draws: usize) -> Check {
    timed(&format!("mc_risk d={d} q={q} n={n} draws={draws}"), || {
        let ds = risk_dataset(d, n, 2, 0.5, 0)?;
        let cmp = risk_comparisons(&ds, q, ridges, draws)?;
        let mut ok = true;
        let mut detail = format!("seed={}", ds.seed);
        for c in &cmp {
            let (zb, zv) = c.z_scores();
            ok &= zb <= 3.0 && zv <= 3.0;
            detail += &format!(" lambda={}: z_bias={zb:.2} z_var={zv:.2}", c.ridge);
        }
        Ok((ok, detail))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainErrComparison {
    pub closed: f64,
    pub mc: f64,
    pub stderr: f64,
}

/// Expected training error against direct noise resampling: refit on
/// `draws` label vectors and average the mean squared residual.
pub fn train_err_comparison(dataset: &Dataset64, q: usize, ridge: f64, draws: usize) -> Result<TrainErrComparison> {
    let kernel = ConvKernel::new(dataset.dim(), q, InnerFunction::Exponential)?;
    let model = fit(dataset, &kernel, ridge)?;
    let closed = expected_training_error(&model);
    let n = dataset.n();
    let truth = dataset.ground_truth_values();
    let mut rng = stream_rng(dataset.seed, TRAIN_NOISE_STREAM);
    let batches = 20.min(draws).max(1);
    let mut batch_means = vec![];
    for b in 0..batches {
        let width = (b + 1) * draws / batches - b * draws / batches;
        let mut y = DMatrix::zeros(n, width);
        for c in 0..width {
            let noise = gaussian_noise(n, dataset.noise_std, &mut rng);
            for i in 0..n {
                y[(i, c)] = truth[i] + noise[i];
            }
        }
        let fitted = model.gram() * model.solve(&y);
        let resid = (&y - fitted).map(|v| v * v).row_sum() / n as f64;
        batch_means.push(resid.mean());
    }
    let k = batch_means.len() as f64;
    let mc = batch_means.iter().sum::<f64>() / k;
    let ss: f64 = batch_means.iter().map(|v| (v - mc).powi(2)).sum();
    Ok(TrainErrComparison { closed, mc, stderr: (ss / (k - 1.0) / k).sqrt() })
}

pub fn train_err(d: usize, q: usize, n: usize, ridge: f64, draws: usize) -> Check {
    timed(&format!("train_err d={d} q={q} n={n} lambda={ridge}"), || {
        let ds = risk_dataset(d, n, 2, 0.5, 0)?;
        let c = train_err_comparison(&ds, q, ridge, draws)?;
        let z = (c.closed - c.mc).abs() / c.stderr;
        let kernel = ConvKernel::new(d, q, InnerFunction::Exponential)?;
        let at_zero = expected_training_error(&fit(&ds, &kernel, 0.0)?);
        Ok((z <= 3.0 && at_zero == 0.0, format!("closed={:.6e} mc={:.6e} z={z:.2} at_zero={at_zero:e}", c.closed, c.mc)))
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SandwichAudit {
    pub evaluated: usize,
    pub preconditions_ok: usize,
    pub violations: usize,
    pub failures: Vec<String>,
}

/// Sandwich inequalities over the first `seeds` seeds with distinct points.
pub fn sandwich_audit(d: usize, q: usize, n: usize, ridges: &[f64], seeds: usize) -> Result<SandwichAudit> {
    let inner = InnerFunction::Exponential;
    let kernel = ConvKernel::new(d, q, inner.clone())?;
    let spectrum = full_spectrum(d, q, &inner)?;
    let mut audit = SandwichAudit::default();
    let mut seed = 0;
    for _ in 0..seeds {
        seed = distinct_points_seed(n, d, seed)?;
        let ds = make_dataset(n, d, 2, 0.5, seed)?;
        for &ridge in ridges {
            let m = select_truncation(&spectrum, n, ridge);
            match fixed_design_bounds(&ds, &kernel, &spectrum, ridge, m) {
                Ok(b) => {
                    audit.evaluated += 1;
                    if b.preconditions_ok {
                        audit.preconditions_ok += 1;
                        if !b.sandwich_holds() {
                            audit.violations += 1;
                        }
                    }
                }
                Err(e) => audit.failures.push(format!("seed {seed} lambda {ridge}: {e}")),
            }
        }
        seed += 1;
    }
    Ok(audit)
}

pub fn sandwich(d: usize, q: usize, n: usize, seeds: usize) -> Check {
    timed(&format!("sandwich d={d} q={q} n={n}"), || {
        let a = sandwich_audit(d, q, n, &[0.0, 1.0, d as f64], seeds)?;
        Ok((
            a.violations == 0 && a.failures.is_empty(),
            format!(
                "preconditions_ok={}/{} violations={} failures={}",
                a.preconditions_ok,
                a.evaluated,
                a.violations,
                a.failures.len()
            ),
        ))
    })
}

/// Random rate parameters with `ell_bar > 0.01`.
pub fn random_rate_params(rng: &mut ChaCha8Rng) -> RateParams {
    loop {
        let ell = rng.random_range(1.2..3.0);
        let beta = rng.random_range(0.05..0.95);
        let ell_sigma = rng.random_range(-0.5..1.5);
        let l_star = rng.random_range(1..=3usize);
        let p = RateParams::new(ell, beta, ell_sigma, 0.0, l_star).expect("valid draw");
        if p.ell_bar() > 0.01 {
            return p;
        }
    }
}

/// Largest distance between the optimal-rate endpoints and those of a
/// fixed-step scan of `eta` over `[0, ell_bar]`, in units of the step.
pub fn grid_scan_gap(p: &RateParams, step: f64) -> Result<f64> {
    let opt = optimal_reg_rate(p)?;
    let bar = p.ell_bar();
    let count = (bar / step).floor() as usize;
    let mut best = f64::INFINITY;
    let mut etas = Vec::with_capacity(count + 2);
    for x in (0..=count).map(|k| k as f64 * step).chain([bar]) {
        let e = rate_exponents(&p.with_ell_lambda(x))?.eta;
        best = best.min(e);
        etas.push((x, e));
    }
    let near: Vec<f64> = etas.iter().filter(|(_, e)| *e <= best + 1e-12).map(|(x, _)| *x).collect();
    let (lo, hi) = (near[0], near[near.len() - 1]);
    Ok((lo - opt.lo).abs().max((hi - opt.hi).abs()) / step)
}

pub fn rates(draws: usize) -> Check {
    timed("rates", || {
        let ev = rate_exponents(&RateParams::new(2.0, 0.4, 0.6, 0.0, 2)?)?.eta_v;
        let eb = rate_exponents(&RateParams::new(2.0, 0.5, 0.6, 0.0, 2)?)?.eta_b;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            worst = worst.max(grid_scan_gap(&random_rate_params(&mut rng), 1e-6)?);
        }
        let points_ok = (ev + 0.4).abs() <= 1e-15 && (eb + 0.5).abs() <= 1e-15;
        Ok((points_ok && worst <= 1.0 + 1e-3, format!("eta_v={ev} eta_b={eb} worst_gap={worst:.3} steps over {draws} draws")))
    })
}

pub fn run(level: Level) -> Vec<Check> {
    let exp = InnerFunction::Exponential;
    let mut out = vec![
        spectrum_oracle(8, 3, &exp),
        spectrum_oracle(6, 2, &InnerFunction::polynomial(vec![0.0, 1.0]).expect("valid")),
        combinatorics(&[15, 16], 7),
        xi_oracle(10),
        q_diagonal(16, 5, 8, 1),
    ];
    match level {
        Level::Quick => {
            out.push(mc_risk(12, 4, 64, &[1.0], 200));
            out.push(train_err(12, 4, 64, 2.0, 500));
            out.push(sandwich(16, 4, 100, 5));
            out.push(rates(10));
        }
        Level::Full => {
            out.push(spectrum_oracle(12, 4, &exp));
            out.push(mc_risk(12, 4, 64, &[0.0, 1.0, 10.0], 2000));
            out.push(train_err(12, 4, 64, 2.0, 5000));
            out.push(sandwich(16, 4, 100, 20));
            out.push(rates(100));
        }
    }
    out
}

pub fn report(checks: &[Check]) -> String {
    let mut s = String::from("check,status,seconds,detail\n");
    for c in checks {
        s += &format!(
            "{},{},{:.2},{}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.seconds,
            c.detail.replace(',', ";")
        );
    }
    s
}

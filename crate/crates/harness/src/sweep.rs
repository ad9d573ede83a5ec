//! Grid sweeps over `(d, beta, ell, ell_sigma, seed, lambda)`.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use convkernel::{
    fixed_design_bounds, gram, make_dataset, select_truncation, ConvKernel, RidgePath, RiskInputs, Spectrum,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{Cell, ExperimentConfig, Mode};
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LambdaKind {
    Interpolator,
    Fixed,
    Rate,
    Optimal,
}

impl LambdaKind {
    pub fn name(self) -> &'static str {
        match self {
            LambdaKind::Interpolator => "interpolator",
            LambdaKind::Fixed => "fixed",
            LambdaKind::Rate => "rate",
            LambdaKind::Optimal => "optimal",
        }
    }
}

/// A requested ridge: the configured value (ridge or rate exponent) and kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSpec {
    pub kind: LambdaKind,
    pub param: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bounds {
    pub m: usize,
    pub conc_norm: f64,
    pub r1: f64,
    pub r2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub var_lo: f64,
    pub var_hi: f64,
    pub bias_lo: Option<f64>,
    pub bias_hi: Option<f64>,
    pub preconditions_ok: bool,
    pub sandwich_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub seed: u64,
    pub lambda: LambdaSpec,
    pub ridge: Option<f64>,
    pub bias_sq: Option<f64>,
    pub variance: Option<f64>,
    pub risk: Option<f64>,
    pub train_err: Option<f64>,
    pub bounds: Option<Bounds>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(cell: Cell, seed: u64, lambda: LambdaSpec, ridge: Option<f64>, err: String) -> Self {
        Self {
            cell,
            seed,
            lambda,
            ridge,
            bias_sq: None,
            variance: None,
            risk: None,
            train_err: None,
            bounds: None,
            error: Some(err),
        }
    }

    pub fn train_err_ratio(&self) -> Option<f64> {
        self.train_err.map(|t| t / self.cell.sigma2)
    }

    /// A completed bounds audit whose inequalities fail under valid preconditions.
    pub fn sandwich_violated(&self) -> bool {
        self.bounds.as_ref().is_some_and(|b| b.preconditions_ok && !b.sandwich_ok)
    }

    fn sort_key(&self) -> impl Ord {
        let f = |x: f64| TotalF64(x);
        (
            self.cell.d,
            f(self.cell.beta),
            f(self.cell.ell),
            f(self.cell.ell_sigma),
            self.seed,
            self.lambda.kind,
            f(self.lambda.param.unwrap_or(f64::NAN)),
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct TotalF64(f64);

// Equality must agree with `total_cmp`, so NaN keys group together.
impl PartialEq for TotalF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub const COLUMNS: &[&str] = &[
    "d", "q", "n", "beta", "ell", "ell_sigma", "sigma2", "lambda_kind", "lambda_param", "lambda", "seed", "m",
    "bias_sq", "variance", "risk", "train_err", "train_err_ratio", "conc_norm", "r1", "r2", "tau1", "tau2",
    "var_lo", "var_hi", "bias_lo", "bias_hi", "preconditions_ok", "sandwich_ok", "error",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

pub fn csv_line(row: &SweepRow) -> String {
    let c = &row.cell;
    let b = row.bounds.as_ref();
    let bf = |pick: fn(&Bounds) -> f64| opt(b.map(pick));
    let fields = [
        c.d.to_string(),
        c.q.to_string(),
        c.n.to_string(),
        num(c.beta),
        num(c.ell),
        num(c.ell_sigma),
        num(c.sigma2),
        row.lambda.kind.name().to_string(),
        opt(row.lambda.param),
        opt(row.ridge),
        row.seed.to_string(),
        b.map(|b| b.m.to_string()).unwrap_or_default(),
        opt(row.bias_sq),
        opt(row.variance),
        opt(row.risk),
        opt(row.train_err),
        opt(row.train_err_ratio()),
        bf(|b| b.conc_norm),
        bf(|b| b.r1),
        bf(|b| b.r2),
        bf(|b| b.tau1),
        bf(|b| b.tau2),
        bf(|b| b.var_lo),
        bf(|b| b.var_hi),
        opt(b.and_then(|b| b.bias_lo)),
        opt(b.and_then(|b| b.bias_hi)),
        b.map(|b| b.preconditions_ok.to_string()).unwrap_or_default(),
        b.map(|b| b.sandwich_ok.to_string()).unwrap_or_default(),
        row.error.as_deref().map(clean).unwrap_or_default(),
    ];
    fields.join(",")
}

pub fn results_csv(rows: &[SweepRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&csv_line(r));
        out.push('\n');
    }
    out
}

/// Ridges requested for every cell, in row order.
pub fn lambda_specs(cfg: &ExperimentConfig) -> Vec<LambdaSpec> {
    let mut out: Vec<LambdaSpec> = cfg
        .grid
        .lambda
        .iter()
        .map(|&l| LambdaSpec {
            kind: if l == 0.0 { LambdaKind::Interpolator } else { LambdaKind::Fixed },
            param: Some(l),
        })
        .chain(cfg.grid.lambda_rate.iter().map(|&r| LambdaSpec { kind: LambdaKind::Rate, param: Some(r) }))
        .collect();
    if cfg.grid.optimal || cfg.mode == Mode::TrainerrSweep {
        out.push(LambdaSpec { kind: LambdaKind::Optimal, param: None });
    }
    out
}

/// Minimizes closed-form risk over `grid` (which may contain 0), then over
/// 21 log-spaced points spanning one grid step either side of the argmin.
/// Ties go to the smaller ridge.
pub fn optimal_ridge(path: &RidgePath<f64>, grid: &[f64], refine: bool) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    let consider = |r: f64, best: &mut (f64, f64)| {
        let risk = path.risk(r).risk;
        if risk < best.1 {
            *best = (r, risk);
        }
    };
    for &r in grid {
        consider(r, &mut best);
    }
    let positive: Vec<f64> = grid.iter().copied().filter(|&r| r > 0.0).collect();
    if refine && best.0 > 0.0 && positive.len() >= 2 {
        let step = (positive[1] / positive[0]).log10();
        let centre = best.0.log10();
        for i in 0..=20 {
            consider(10f64.powf(centre - step + step * i as f64 / 10.0), &mut best);
        }
    }
    best
}

fn resolve_ridge(spec: &LambdaSpec, d: usize) -> Option<f64> {
    match spec.kind {
        LambdaKind::Interpolator | LambdaKind::Fixed => spec.param,
        LambdaKind::Rate => spec.param.map(|r| (d as f64).powf(r)),
        LambdaKind::Optimal => None,
    }
}

/// Every row for one `(cell, seed)`.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, seed: u64) -> Vec<SweepRow> {
    let specs = lambda_specs(cfg);
    match cell_rows(cfg, cell, seed, &specs) {
        Ok(rows) => rows,
        Err(e) => specs
            .iter()
            .map(|s| SweepRow::failed(cell, seed, *s, resolve_ridge(s, cell.d), format!("{e:#}")))
            .collect(),
    }
}

fn cell_rows(cfg: &ExperimentConfig, cell: Cell, seed: u64, specs: &[LambdaSpec]) -> Result<Vec<SweepRow>> {
    let inner = cfg.inner()?;
    let dataset = make_dataset::<f64>(cell.n, cell.d, cfg.l_star, cell.sigma2.sqrt(), seed)?;
    let kernel = ConvKernel::new(cell.d, cell.q, inner.clone())?;
    let spectrum = Spectrum::with_cap(cell.d, cell.q, &inner, cfg.kernel.spectrum_cap as u128)?;
    let k = gram(&kernel, &dataset.points)?;
    let path = RidgePath::new(&k, &RiskInputs::new(&dataset, &spectrum)?);
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let ridge = match resolve_ridge(spec, cell.d) {
            Some(r) => r,
            None => optimal_ridge(&path, &cfg.ridge_grid(), cfg.grid.refine).0,
        };
        let risk = path.risk(ridge);
        let mut row = SweepRow {
            cell,
            seed,
            lambda: *spec,
            ridge: Some(ridge),
            bias_sq: Some(risk.bias_sq),
            variance: Some(risk.variance),
            risk: Some(risk.bias_sq + risk.variance),
            train_err: Some(path.training_error(ridge)),
            bounds: None,
            error: None,
        };
        if cfg.mode == Mode::BoundsAudit {
            let m = select_truncation(&spectrum, cell.n, ridge);
            match fixed_design_bounds(&dataset, &kernel, &spectrum, ridge, m) {
                Ok(b) => {
                    let dg = &b.diagnostics;
                    row.bounds = Some(Bounds {
                        m,
                        conc_norm: dg.concentration_norm,
                        r1: dg.r1,
                        r2: dg.r2,
                        tau1: dg.tau1,
                        tau2: dg.tau2,
                        var_lo: b.var_lo,
                        var_hi: b.var_hi,
                        bias_lo: b.bias_lo,
                        bias_hi: b.bias_hi,
                        preconditions_ok: b.preconditions_ok,
                        sandwich_ok: b.sandwich_holds(),
                    })
                }
                Err(e) => row.error = Some(format!("bounds: {e}")),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Runs every `(cell, seed)` in the work pool and sorts the rows.
pub fn run_rows(cfg: &ExperimentConfig) -> Vec<SweepRow> {
    let jobs: Vec<(Cell, u64)> = cfg.cells().into_iter().flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let mut rows: Vec<SweepRow> = jobs.into_par_iter().flat_map_iter(|(c, s)| run_cell(cfg, c, s)).collect();
    rows.sort_by_cached_key(|r| r.sort_key());
    rows
}

/// Rows of `E[train err] / sigma^2` at the risk-minimizing ridge.
pub fn trainerr_ratio_sweep(cfg: &ExperimentConfig) -> Vec<SweepRow> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::TrainerrSweep;
    cfg.grid.lambda.clear();
    cfg.grid.lambda_rate.clear();
    run_rows(&cfg)
}

/// Least-squares fit of `log(value)` against `log(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_log_log(points: &[(f64, f64)]) -> Result<LogLogFit> {
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 {
        bail!("degenerate group: {} distinct n values, need at least 3", ns.len());
    }
    if points.iter().any(|&(n, v)| !(n > 0.0 && v > 0.0)) {
        bail!("degenerate group: log of a non-positive value");
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LogLogFit { slope, intercept, residual: (ss / k).sqrt(), points: points.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub beta: f64,
    pub ell: f64,
    pub ell_sigma: f64,
    pub lambda_kind: LambdaKind,
    pub lambda_param: Option<f64>,
    pub quantity: String,
    pub fit: Result<LogLogFit, String>,
}

fn quantity(row: &SweepRow, name: &str) -> Option<f64> {
    match name {
        "risk" => row.risk,
        "bias_sq" => row.bias_sq,
        "variance" => row.variance,
        "train_err" => row.train_err,
        _ => None,
    }
}

/// Fits `quantity ~ n^slope` per `(beta, ell, ell_sigma, lambda)` group,
/// pooling seeds; `n` varies through `d`.
pub fn empirical_rate_fit(rows: &[SweepRow], name: &str) -> Vec<FitRow> {
    let mut groups: Vec<((TotalF64, TotalF64, TotalF64, LambdaKind, TotalF64), Vec<(f64, f64)>)> = vec![];
    for r in rows {
        let key = (
            TotalF64(r.cell.beta),
            TotalF64(r.cell.ell),
            TotalF64(r.cell.ell_sigma),
            r.lambda.kind,
            TotalF64(r.lambda.param.unwrap_or(f64::NAN)),
        );
        let idx = match groups.iter().position(|g| g.0 == key) {
            Some(i) => i,
            None => {
                groups.push((key, vec![]));
                groups.len() - 1
            }
        };
        if let Some(v) = quantity(r, name) {
            groups[idx].1.push((r.cell.n as f64, v));
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
        .into_iter()
        .map(|(k, pts)| FitRow {
            beta: k.0 .0,
            ell: k.1 .0,
            ell_sigma: k.2 .0,
            lambda_kind: k.3,
            lambda_param: Some(k.4 .0).filter(|v| !v.is_nan()),
            quantity: name.to_string(),
            fit: fit_log_log(&pts).map_err(|e| e.to_string()),
        })
        .collect()
}

pub fn fits_csv(fits: &[FitRow]) -> String {
    let mut out = String::from("beta,ell,ell_sigma,lambda_kind,lambda_param,quantity,slope,intercept,residual,points,error\n");
    for f in fits {
        let (a, b, c, p, e) = match &f.fit {
            Ok(x) => (num(x.slope), num(x.intercept), num(x.residual), x.points.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), String::new(), String::new(), clean(e)),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{a},{b},{c},{p},{e}",
            num(f.beta),
            num(f.ell),
            num(f.ell_sigma),
            f.lambda_kind.name(),
            opt(f.lambda_param),
            f.quantity
        );
    }
    out
}

/// Mean risk against `beta`, one series per `(d, lambda)`.
pub fn risk_chart(rows: &[SweepRow]) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = vec![];
    let mut sums: Vec<(String, f64, f64, usize)> = vec![];
    for r in rows {
        let Some(risk) = r.risk.filter(|v| *v > 0.0) else { continue };
        let label = match r.lambda.param {
            Some(p) => format!("d={} {} {}", r.cell.d, r.lambda.kind.name(), p),
            None => format!("d={} {}", r.cell.d, r.lambda.kind.name()),
        };
        match sums.iter_mut().find(|s| s.0 == label && s.1 == r.cell.beta) {
            Some(s) => {
                s.2 += risk.log10();
                s.3 += 1;
            }
            None => sums.push((label, r.cell.beta, risk.log10(), 1)),
        }
    }
    for (label, beta, total, count) in sums {
        let y = total / count as f64;
        match series.iter_mut().find(|s| s.0 == label) {
            Some(s) => s.1.push((beta, y)),
            None => series.push((label, vec![(beta, y)])),
        }
    }
    for s in &mut series {
        s.1.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    svg::line_chart("Closed-form risk", "beta", "log10 risk (seed mean)", &series)
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub fits: Option<Vec<FitRow>>,
}

impl SweepOutcome {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn sandwich_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.sandwich_violated()).count()
    }
}

pub fn run(cfg: &ExperimentConfig) -> SweepOutcome {
    let rows = run_rows(cfg);
    let fits = (cfg.mode == Mode::RateFit).then(|| empirical_rate_fit(&rows, &cfg.output.fit_quantity));
    SweepOutcome { rows, fits }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn meta_text(cfg: &ExperimentConfig, outcome: &SweepOutcome) -> String {
    format!(
        "config_sha256 = {}\nconvkernel_version = {}\nharness_version = {}\nmode = {}\nrows = {}\nfailed_rows = {}\nsandwich_violations = {}\n",
        config_hash(cfg),
        convkernel::VERSION,
        env!("CARGO_PKG_VERSION"),
        cfg.mode.name(),
        outcome.rows.len(),
        outcome.failed_rows(),
        outcome.sandwich_violations(),
    )
}

/// Writes `results.csv`, `meta.txt`, the resolved `config.toml`, and when
/// applicable `fits.csv` and `risk.svg`.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let put = |name: &str, body: &str| {
        std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))
    };
    put("results.csv", &results_csv(&outcome.rows))?;
    put("meta.txt", &meta_text(cfg, outcome))?;
    put("config.toml", &cfg.to_text())?;
    if let Some(f) = &outcome.fits {
        put("fits.csv", &fits_csv(f))?;
    }
    if cfg.output.svg {
        put("risk.svg", &risk_chart(&outcome.rows))?;
    }
    Ok(())
}

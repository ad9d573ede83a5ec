//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convkernel::InnerFunction64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    RiskSweep,
    TrainerrSweep,
    BoundsAudit,
    RateFit,
    Verify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::RiskSweep => "risk_sweep",
            Mode::TrainerrSweep => "trainerr_sweep",
            Mode::BoundsAudit => "bounds_audit",
            Mode::RateFit => "rate_fit",
            Mode::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// `exp`, `rbf:h` or `poly:c0,c1,...`.
    pub inner: String,
    pub spectrum_cap: u64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { inner: "exp".into(), spectrum_cap: 1_000_000_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub d: Vec<usize>,
    /// Filter size exponents: `q = round(d^beta)`, clamped to `[1, (d-1)/2]`.
    pub beta: Vec<f64>,
    /// Sample size exponents: `n = round(d^ell)`.
    pub ell: Vec<f64>,
    /// Noise exponents: `sigma^2 = d^(-ell_sigma)`.
    pub ell_sigma: Vec<f64>,
    /// Fixed ridge values; 0 is the interpolator.
    pub lambda: Vec<f64>,
    /// Ridge rates: `lambda = d^ell_lambda`.
    pub lambda_rate: Vec<f64>,
    /// Add a row at the ridge minimizing closed-form risk.
    pub optimal: bool,
    pub ridge_points: usize,
    pub ridge_min: f64,
    pub ridge_max: f64,
    /// Refine the ridge grid once around its argmin.
    pub refine: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            d: vec![],
            beta: vec![],
            ell: vec![2.0],
            ell_sigma: vec![0.0],
            lambda: vec![0.0],
            lambda_rate: vec![],
            optimal: false,
            ridge_points: 61,
            ridge_min: 1e-3,
            ridge_max: 1e3,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
    /// Quantity fitted against `n` in `rate_fit` mode: `risk`, `bias_sq`,
    /// `variance` or `train_err`.
    pub fit_quantity: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), svg: false, fit_quantity: "risk".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub l_star: usize,
    pub seeds: Vec<u64>,
    /// Exit nonzero on any sandwich violation.
    pub strict: bool,
    /// `quick` or `full`, used by `verify`.
    pub verify_level: String,
    pub kernel: KernelSection,
    pub grid: GridSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            l_star: 2,
            seeds: vec![0],
            strict: false,
            verify_level: "quick".into(),
            kernel: KernelSection::default(),
            grid: GridSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// One `(d, beta, ell, ell_sigma)` point with its derived sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub d: usize,
    pub beta: f64,
    pub ell: f64,
    pub ell_sigma: f64,
    pub q: usize,
    pub n: usize,
    pub sigma2: f64,
}

pub fn filter_size(d: usize, beta: f64) -> usize {
    let hi = ((d.saturating_sub(1)) / 2).max(1);
    ((d as f64).powf(beta).round() as usize).clamp(1, hi)
}

pub fn sample_size(d: usize, ell: f64) -> usize {
    ((d as f64).powf(ell).round() as usize).max(1)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn inner(&self) -> Result<InnerFunction64> {
        self.kernel.inner.parse().map_err(|e| anyhow::anyhow!("kernel.inner: {e}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.inner()?;
        if self.l_star == 0 {
            bail!("l_star must be at least 1");
        }
        if let Some(&d) = self.grid.d.iter().find(|&&d| d < 3) {
            bail!("grid.d entries must be at least 3, got {d}");
        }
        if let Some(b) = self.grid.beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            bail!("grid.beta entries must lie in (0, 1), got {b}");
        }
        if let Some(l) = self.grid.ell.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            bail!("grid.ell entries must be positive, got {l}");
        }
        if self.grid.ell_sigma.iter().any(|v| !v.is_finite()) {
            bail!("grid.ell_sigma entries must be finite");
        }
        if self.grid.lambda.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            bail!("grid.lambda entries must be finite and >= 0");
        }
        if self.grid.lambda_rate.iter().any(|v| !v.is_finite()) {
            bail!("grid.lambda_rate entries must be finite");
        }
        if self.grid.ridge_points < 2 || !(self.grid.ridge_min > 0.0 && self.grid.ridge_max > self.grid.ridge_min) {
            bail!("ridge grid needs ridge_points >= 2 and 0 < ridge_min < ridge_max");
        }
        if !["risk", "bias_sq", "variance", "train_err"].contains(&self.output.fit_quantity.as_str()) {
            bail!("output.fit_quantity must be risk, bias_sq, variance or train_err");
        }
        if !["quick", "full"].contains(&self.verify_level.as_str()) {
            bail!("verify_level must be quick or full");
        }
        if let Some(l) = self.grid.d.iter().find(|&&d| self.l_star > d) {
            bail!("l_star = {} exceeds d = {l}", self.l_star);
        }
        Ok(())
    }

    /// All grid points in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = vec![];
        for &d in &self.grid.d {
            for &beta in &self.grid.beta {
                for &ell in &self.grid.ell {
                    for &ell_sigma in &self.grid.ell_sigma {
                        out.push(Cell {
                            d,
                            beta,
                            ell,
                            ell_sigma,
                            q: filter_size(d, beta),
                            n: sample_size(d, ell),
                            sigma2: (d as f64).powf(-ell_sigma),
                        });
                    }
                }
            }
        }
        out
    }

    /// The log-spaced ridge grid, with 0 prepended.
    pub fn ridge_grid(&self) -> Vec<f64> {
        let g = &self.grid;
        let (a, b) = (g.ridge_min.log10(), g.ridge_max.log10());
        let step = (b - a) / (g.ridge_points - 1) as f64;
        std::iter::once(0.0).chain((0..g.ridge_points).map(|i| 10f64.powf(a + step * i as f64))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.d = vec![16, 24];
        cfg.grid.beta = vec![0.2, 0.35, 0.5];
        cfg.grid.lambda = vec![0.0, 1.0, 1e-7];
        cfg.grid.lambda_rate = vec![0.5];
        cfg.kernel.inner = "poly:0.1,1,0.5".into();
        cfg.output.dir = "some/dir".into();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn sizes_follow_the_exponents() {
        assert_eq!(filter_size(16, 0.5), 4);
        assert_eq!(filter_size(16, 0.99), 7);
        assert_eq!(filter_size(16, 0.01), 1);
        assert_eq!(sample_size(16, 2.0), 256);
        assert_eq!(sample_size(12, 64f64.ln() / 12f64.ln()), 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse("mode = \"nope\"").is_err());
        assert!(ExperimentConfig::parse("[grid]\nbeta = [1.5]").is_err());
        assert!(ExperimentConfig::parse("[kernel]\ninner = \"tanh\"").is_err());
        assert!(ExperimentConfig::parse("unknown = 1").is_err());
        assert!(ExperimentConfig::parse("").is_ok());
    }

    #[test]
    fn ridge_grid_spans_the_range() {
        let g = ExperimentConfig::default().ridge_grid();
        assert_eq!(g.len(), 62);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-3).abs() < 1e-15 && (g[61] - 1e3).abs() < 1e-9);
    }
}

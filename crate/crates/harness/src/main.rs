use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use convkernel::rates::{beta_star, fig1_betas, rate_table, FIG1_ELL, FIG1_ELL_SIGMA, FIG1_L_STAR};
use convkernel::spectrum::oracle_deviation;
use convkernel::{brute_force_spectrum, fit, make_dataset, xi_coefficients, ConvKernel, InnerFunction64, Spectrum};
use convkernel_harness::config::{ExperimentConfig, Mode};
use convkernel_harness::sweep::{self, results_csv, LambdaKind};
use convkernel_harness::{env_threads, svg, verify, with_threads};

#[derive(Parser)]
#[command(name = "convkernel", version, about = "Kernel ridge regression with cyclic convolutional kernels on the hypercube")]
struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; commands that print CSV write results.csv there instead.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit nonzero on any sandwich violation.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leading eigenvalues with degree, diameter and multiplicity.
    Spectrum {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value = "exp")]
        inner: InnerFunction64,
        /// Number of eigenpairs to cover.
        #[arg(long, default_value_t = 20)]
        top: usize,
        /// Compare against a dense eigensolve (d <= 12).
        #[arg(long)]
        oracle: bool,
    },
    /// Patch-level coefficients `xi_l` of the inner function.
    Xi {
        #[arg(long)]
        q: usize,
        #[arg(long, default_value = "exp")]
        inner: InnerFunction64,
    },
    /// Fit every configured cell and report solver residuals.
    Fit,
    /// Closed-form bias, variance and risk over the configured grid.
    Risk,
    /// Fixed-design bounds with diagnostics over the configured grid.
    Bounds,
    /// Training-error ratio at the risk-minimizing ridge.
    Trainerr,
    /// Rate exponents over a beta grid.
    Rates {
        #[arg(long, default_value_t = 2.0)]
        ell: f64,
        #[arg(long, default_value_t = 0.0)]
        ell_sigma: f64,
        #[arg(long, default_value_t = 2)]
        l_star: usize,
        /// Comma-separated beta values; defaults to the figure grid.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Use the first figure's parameters.
        #[arg(long)]
        fig1: bool,
        /// Also write a chart of the interpolator and optimal exponents.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the configured mode and write results.csv, meta.txt and extras.
    Sweep,
    /// Oracle suite.
    Verify {
        #[arg(long)]
        full: bool,
    },
}

fn load_config(cli: &Cli, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.strict |= cli.strict;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cli: &Cli, body: &str) -> Result<()> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("results.csv"), body).context("writing results.csv")
        }
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn spectrum_cmd(cli: &Cli, d: usize, q: usize, inner: &InnerFunction64, top: usize, oracle: bool) -> Result<ExitCode> {
    let s = Spectrum::with_cap(d, q, inner, convkernel::spectrum::DEFAULT_SPECTRUM_CAP)?;
    let mut body = String::from("position,eigenvalue,degree,diameter,multiplicity\n");
    for p in s.profiles().iter().take_while(|p| p.offset < top) {
        body += &format!("{},{:.16e},{},{},{}\n", p.offset + 1, p.eigenvalue, p.degree, p.diameter, p.multiplicity);
    }
    emit(cli, &body)?;
    if oracle {
        let dev = oracle_deviation(&s, &brute_force_spectrum(d, q, inner)?)?;
        eprintln!("oracle max deviation {dev:.3e}");
        if dev > 1e-10 {
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fit_cmd(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli, None)?;
    let inner = cfg.inner()?;
    let mut body = String::from("d,q,n,lambda,seed,solver_residual,train_mse,error\n");
    let mut failed = false;
    for cell in cfg.cells() {
        for &seed in &cfg.seeds {
            for spec in sweep::lambda_specs(&cfg).iter().filter(|s| s.kind != LambdaKind::Optimal) {
                let ridge = match spec.kind {
                    LambdaKind::Rate => (cell.d as f64).powf(spec.param.unwrap_or(0.0)),
                    _ => spec.param.unwrap_or(0.0),
                };
                let res = (|| -> Result<(f64, f64)> {
                    let ds = make_dataset::<f64>(cell.n, cell.d, cfg.l_star, cell.sigma2.sqrt(), seed)?;
                    let model = fit(&ds, &ConvKernel::new(cell.d, cell.q, inner.clone())?, ridge)?;
                    let pred = model.predict_many(&ds.points)?;
                    let mse = pred.iter().zip(&ds.labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / cell.n as f64;
                    Ok((model.solver_residual, mse))
                })();
                let tail = match res {
                    Ok((r, m)) => format!("{r:.16e},{m:.16e},"),
                    Err(e) => {
                        failed = true;
                        format!(",,{}", format!("{e:#}").replace([',', '\n'], ";"))
                    }
                };
                body += &format!("{},{},{},{ridge:.16e},{seed},{tail}\n", cell.d, cell.q, cell.n);
            }
        }
    }
    emit(cli, &body)?;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn grid_cmd(cli: &Cli, mode: Mode) -> Result<ExitCode> {
    let cfg = load_config(cli, Some(mode))?;
    let outcome = sweep::run(&cfg);
    emit(cli, &results_csv(&outcome.rows))?;
    Ok(exit_for(&cfg, &outcome))
}

fn exit_for(cfg: &ExperimentConfig, outcome: &sweep::SweepOutcome) -> ExitCode {
    if outcome.failed_rows() > 0 || (cfg.strict && outcome.sandwich_violations() > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn rates_cmd(cli: &Cli, ell: f64, ell_sigma: f64, l_star: usize, betas: &[f64], fig1: bool, chart: Option<&PathBuf>) -> Result<ExitCode> {
    let (ell, ell_sigma, l_star) = if fig1 { (FIG1_ELL, FIG1_ELL_SIGMA, FIG1_L_STAR) } else { (ell, ell_sigma, l_star) };
    let betas = if betas.is_empty() || fig1 { fig1_betas() } else { betas.to_vec() };
    let rows = rate_table(ell, ell_sigma, l_star, &betas)?;
    let mut body = String::from("beta,eta_v,eta_b,eta,eta_opt,ell_min_lo,ell_min_hi,regime\n");
    for r in &rows {
        body += &format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.beta, r.eta_v, r.eta_b, r.eta, r.opt.eta_min, r.opt.lo, r.opt.hi, r.regime
        );
    }
    emit(cli, &body)?;
    let bs = beta_star(ell, ell_sigma, l_star);
    eprintln!("beta_star roots: {:?} (unique: {})", bs.roots, bs.is_unique());
    if let Some(path) = chart {
        let series = vec![
            ("interpolator".to_string(), rows.iter().map(|r| (r.beta, r.eta)).collect()),
            ("optimal ridge".to_string(), rows.iter().map(|r| (r.beta, r.opt.eta_min)).collect()),
        ];
        let title = format!("Risk exponents (ell={ell}, ell_sigma={ell_sigma}, L*={l_star})");
        std::fs::write(path, svg::line_chart(&title, "beta", "eta", &series))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Spectrum { d, q, inner, top, oracle } => spectrum_cmd(cli, *d, *q, inner, *top, *oracle),
        Command::Xi { q, inner } => {
            let xi = xi_coefficients(inner, *q)?;
            let mut body = String::from("l,xi\n");
            for (l, v) in xi.values.iter().enumerate() {
                body += &format!("{l},{v:.16e}\n");
            }
            emit(cli, &body)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit => fit_cmd(cli),
        Command::Risk => grid_cmd(cli, Mode::RiskSweep),
        Command::Bounds => grid_cmd(cli, Mode::BoundsAudit),
        Command::Trainerr => grid_cmd(cli, Mode::TrainerrSweep),
        Command::Rates { ell, ell_sigma, l_star, betas, fig1, svg } => {
            rates_cmd(cli, *ell, *ell_sigma, *l_star, betas, *fig1, svg.as_ref())
        }
        Command::Sweep => {
            let cfg = load_config(cli, None)?;
            if cfg.mode == Mode::Verify {
                return verify_cmd(cfg.verify_level == "full");
            }
            let outcome = sweep::run(&cfg);
            sweep::write_outputs(&cfg, &outcome, &cfg.output.dir)?;
            eprintln!(
                "{} rows, {} failed, {} sandwich violations -> {}",
                outcome.rows.len(),
                outcome.failed_rows(),
                outcome.sandwich_violations(),
                cfg.output.dir.display()
            );
            Ok(exit_for(&cfg, &outcome))
        }
        Command::Verify { full } => verify_cmd(*full),
    }
}

fn verify_cmd(full: bool) -> Result<ExitCode> {
    let checks = verify::run(if full { verify::Level::Full } else { verify::Level::Quick });
    print!("{}", verify::report(&checks));
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(env_threads(), || run(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

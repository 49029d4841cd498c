//! Argument parsing and subcommand execution.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use refprior::analysis::{
    adaptive_sigma_grid_with_floor, coverage_scan, summarize, upper_limit_vs_background, AnalysisMethod, IntervalKind,
    ReplicationConfig,
};
use refprior::counting::MarginalChannelModel;
use refprior::grid::{linspace, logspace};
use refprior::method1::{marginal_prior, method1_posterior_mcmc, posterior_grid, Method1Config};
use refprior::method2::{flat_posterior, method2_prior_grid, posterior_from_prior, Method2PriorMode};
use refprior::paradox::paradox_ratio_scan;
use refprior::reference::{constructive_prior, ConstructiveOptions, PoissonModel};
use refprior::{CountingChannel, DensityGrid, GammaPriorSpec, RandomStream};

use crate::channel::parse_channel_file;
use crate::emit::{density_table, fmt_f64, summary_text, write_file, Table};

#[derive(Debug, Parser)]
#[command(
    name = "refprior",
    version,
    about = "Reference-prior analysis of Poisson counting experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Analysis method. `flat` is accepted by `posterior` only.
    #[arg(long, global = true, value_enum, default_value = "1")]
    pub method: MethodArg,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Chain length, Monte Carlo samples per grid point or pseudo-experiments,
    /// depending on the subcommand.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Number of grid points.
    #[arg(long = "grid", global = true, default_value_t = 401)]
    pub grid_points: usize,
    /// Output directory.
    #[arg(long = "out", global = true, default_value = ".")]
    pub output_path: PathBuf,
    /// Channel file (JSON).
    #[arg(long = "channel", global = true)]
    pub channel_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Flat,
}

impl MethodArg {
    fn label(self) -> &'static str {
        match self {
            MethodArg::One => "1",
            MethodArg::Two => "2",
            MethodArg::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Posterior and prior densities for a channel: density.csv and summary.txt.
    Posterior,
    /// Prior density on [0, sigma-max]: prior.csv.
    Prior(PriorArgs),
    /// Interval coverage of replicated single-count measurements: coverage.csv.
    Coverage(CoverageArgs),
    /// Method-1 upper limits against the mean background: limit_scan.csv.
    LimitScan(LimitScanArgs),
    /// Marginalization-paradox ratio scan: paradox.csv.
    Paradox(ParadoxArgs),
    /// Constructive k-replication prior of the Poisson model: constructive.csv.
    Constructive(ConstructiveArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    #[arg(long, default_value_t = 10.0)]
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Upper,
    Central,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    /// Comma-separated replication counts N_R.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub n_replications: Vec<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub credibility: f64,
    #[arg(long, value_enum, default_value = "upper")]
    pub kind: KindArg,
    /// CV of both nuisance priors (means 1).
    #[arg(long, default_value_t = 0.2)]
    pub cv: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_true: f64,
}

#[derive(Debug, Clone, Args)]
pub struct LimitScanArgs {
    /// Observed count.
    #[arg(long, default_value_t = 0)]
    pub count: u64,
    #[arg(long, default_value_t = 0.2)]
    pub cv: f64,
    #[arg(long, default_value_t = 0.95)]
    pub credibility: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mean_bg_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub mean_bg_max: f64,
    #[arg(long, default_value_t = 20)]
    pub mean_bg_steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ParadoxArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub t1: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub t2: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub theta_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub theta_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ConstructiveArgs {
    /// Number of replications k.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub theta_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub theta_max: f64,
    /// Lower end of the inner normalizing integral.
    #[arg(long, default_value_t = 0.05)]
    pub range_lo: f64,
    #[arg(long, default_value_t = 50.0)]
    pub range_hi: f64,
}

/// Checks the cross-field rules that clap cannot express.
pub fn validate(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    if c.method == MethodArg::Flat && !matches!(cli.command, Command::Posterior) {
        bail!("--method flat is only valid for the posterior subcommand");
    }
    if c.grid_points < 3 {
        bail!("--grid must be at least 3");
    }
    if c.samples == Some(0) {
        bail!("--samples must be positive");
    }
    if matches!(cli.command, Command::Posterior | Command::Prior(_)) && c.channel_path.is_none() {
        bail!("this subcommand needs --channel FILE");
    }
    Ok(())
}

/// Runs the parsed command and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    validate(cli)?;
    let c = &cli.common;
    match &cli.command {
        Command::Posterior => posterior(c, &load_channel(c)?),
        Command::Prior(a) => prior(c, a, &load_channel(c)?),
        Command::Coverage(a) => coverage(c, a),
        Command::LimitScan(a) => limit_scan(c, a),
        Command::Paradox(a) => paradox(c, a),
        Command::Constructive(a) => constructive(c, a),
    }
}

fn load_channel(c: &Common) -> Result<CountingChannel> {
    let path = c.channel_path.as_deref().expect("validated");
    Ok(parse_channel_file(path)?)
}

fn out(c: &Common, name: &str) -> PathBuf {
    c.output_path.join(name)
}

/// `n` points from 0 with spacing 1/k, so σ = 1 is a grid point, reaching at
/// least `hi`. Falls back to an even grid when that is impossible.
fn unit_aligned_grid(hi: f64, n: usize) -> Vec<f64> {
    let span = (n - 1) as f64;
    if hi > 0.0 && hi <= span {
        let k = (span / hi).floor();
        (0..n).map(|i| i as f64 / k).collect()
    } else {
        linspace(0.0, hi, n)
    }
}

/// Upper σ beyond which the channel likelihood is below 1e-9 of its peak.
fn likelihood_upper_end(channel: &CountingChannel) -> Result<f64> {
    let model = MarginalChannelModel::new(channel);
    let n = channel.total_observed() as f64;
    let se: f64 = channel.bins().iter().map(|b| b.eff_lumi_prior.mean()).sum();
    let hint = (n + 1.0 + 5.0 * (n + 1.0).sqrt()) / se;
    let range = adaptive_sigma_grid_with_floor(|s| model.ln_likelihood(s), hint, 2, 1e-9)?;
    Ok(range[1])
}

fn posterior(c: &Common, channel: &CountingChannel) -> Result<Vec<PathBuf>> {
    let stream = RandomStream::new(c.seed);
    let mut header = vec![
        ("method", c.method.label().to_string()),
        ("bins", channel.len().to_string()),
        ("observed", channel.total_observed().to_string()),
    ];
    let (prior, post) = match c.method {
        MethodArg::One if channel.len() == 1 => {
            let b = channel.bins()[0];
            let points = unit_aligned_grid(likelihood_upper_end(channel)?, c.grid_points);
            let post = posterior_grid(b.observed, b.eff_lumi_prior, b.background_prior, points.clone())?;
            let prior = DensityGrid::from_fn(points, |s| marginal_prior(s, b.eff_lumi_prior, b.background_prior))?;
            (prior, post)
        }
        MethodArg::One => {
            let chain_length = c.samples.unwrap_or(200_000);
            let cfg = Method1Config {
                chain_length,
                pilot_length: (chain_length / 10).max(10_000),
                histogram_bins: c.grid_points - 1,
                ..Method1Config::default()
            };
            let res = method1_posterior_mcmc(channel, &cfg, &mut stream.split(0))?;
            header.push(("chain_length", chain_length.to_string()));
            header.push(("sigma_acceptance", fmt_f64(res.diagnostics.acceptance[0])));
            header.push(("sigma_ess", fmt_f64(res.diagnostics.effective_sample_size[0])));
            header.push(("tilted", res.tilted.to_string()));
            (res.prior, res.posterior)
        }
        MethodArg::Two => {
            let points = unit_aligned_grid(likelihood_upper_end(channel)?, c.grid_points);
            let mode = Method2PriorMode::Auto {
                samples: c.samples.unwrap_or(2000),
            };
            let prior = method2_prior_grid(channel, &points, mode, &stream.split(0))?;
            let post = posterior_from_prior(channel, &prior)?;
            (prior, post)
        }
        MethodArg::Flat => {
            let points = unit_aligned_grid(likelihood_upper_end(channel)?, c.grid_points);
            let post = flat_posterior(channel, &points)?;
            let prior = DensityGrid::new(points.clone(), vec![1.0; points.len()])?;
            (prior, post)
        }
    };
    let prior = prior.scaled_to_one_at(1.0)?;
    let summary = summarize(&post)?;
    Ok(vec![
        write_file(&out(c, "density.csv"), &density_table(&prior, &post)?.render())?,
        write_file(&out(c, "summary.txt"), &summary_text(&header, &summary))?,
    ])
}

fn prior(c: &Common, a: &PriorArgs, channel: &CountingChannel) -> Result<Vec<PathBuf>> {
    if !(a.sigma_max > 0.0) {
        bail!("--sigma-max must be positive");
    }
    let points = unit_aligned_grid(a.sigma_max, c.grid_points);
    let grid = match c.method {
        MethodArg::One if channel.len() == 1 => {
            let b = channel.bins()[0];
            DensityGrid::from_fn(points, |s| marginal_prior(s, b.eff_lumi_prior, b.background_prior))?
        }
        MethodArg::One => {
            bail!("the Method-1 prior of a multi-bin channel comes from MCMC; use the posterior subcommand")
        }
        MethodArg::Two => {
            let mode = Method2PriorMode::Auto {
                samples: c.samples.unwrap_or(2000),
            };
            method2_prior_grid(channel, &points, mode, &RandomStream::new(c.seed))?
        }
        MethodArg::Flat => unreachable!("rejected by validate"),
    }
    .scaled_to_one_at(1.0)?;
    let mut t = Table::new(&["sigma", "prior_density"]);
    for (s, v) in grid.points().iter().zip(grid.values()) {
        t.push_numbers(&[*s, *v]);
    }
    Ok(vec![write_file(&out(c, "prior.csv"), &t.render())?])
}

fn coverage(c: &Common, a: &CoverageArgs) -> Result<Vec<PathBuf>> {
    let p = GammaPriorSpec::from_mean_cv(1.0, a.cv).context("invalid --cv")?;
    let method = match c.method {
        MethodArg::One => AnalysisMethod::Method1,
        MethodArg::Two => AnalysisMethod::Method2,
        MethodArg::Flat => unreachable!("rejected by validate"),
    };
    let kind = match a.kind {
        KindArg::Upper => IntervalKind::Upper,
        KindArg::Central => IntervalKind::Central,
    };
    let stream = RandomStream::new(c.seed);
    let mut t = Table::new(&[
        "n_replications",
        "credibility",
        "contained",
        "total",
        "coverage",
        "std_error",
    ]);
    for &nr in &a.n_replications {
        let mut cfg = ReplicationConfig::new(nr, method, p, p);
        cfg.truth.sigma = a.sigma_true;
        cfg.pseudo_experiments = c.samples.unwrap_or(2000);
        cfg.grid_points = c.grid_points;
        let est = coverage_scan(&cfg, a.credibility, kind, &stream.split(nr as u64))?;
        t.push(vec![
            nr.to_string(),
            fmt_f64(a.credibility),
            est.contained.to_string(),
            est.total.to_string(),
            fmt_f64(est.coverage),
            fmt_f64(est.std_error),
        ]);
    }
    Ok(vec![write_file(&out(c, "coverage.csv"), &t.render())?])
}

fn limit_scan(c: &Common, a: &LimitScanArgs) -> Result<Vec<PathBuf>> {
    if c.method != MethodArg::One {
        bail!("limit-scan uses the analytic Method-1 route; pass --method 1");
    }
    if a.mean_bg_steps < 2 || !(a.mean_bg_min > 0.0 && a.mean_bg_max > a.mean_bg_min) {
        bail!("need 0 < --mean-bg-min < --mean-bg-max and --mean-bg-steps >= 2");
    }
    let bgs = linspace(a.mean_bg_min, a.mean_bg_max, a.mean_bg_steps);
    let rows = upper_limit_vs_background(a.count, &bgs, a.cv, a.credibility)?;
    let mut t = Table::new(&["mean_bg", "upper_limit"]);
    for (b, ul) in &rows {
        t.push_numbers(&[*b, *ul]);
    }
    Ok(vec![write_file(&out(c, "limit_scan.csv"), &t.render())?])
}

fn paradox(c: &Common, a: &ParadoxArgs) -> Result<Vec<PathBuf>> {
    if !(a.theta_max > a.theta_min) {
        bail!("--theta-max must exceed --theta-min");
    }
    let scan = paradox_ratio_scan(a.t1, a.t2, &linspace(a.theta_min, a.theta_max, c.grid_points))?;
    let mut t = Table::new(&["theta", "r_t1", "r_t2", "ratio"]);
    for r in &scan.rows {
        t.push_numbers(&[r.theta, r.r_t1, r.r_t2, r.ratio]);
    }
    let summary = format!(
        "t1 {}\nt2 {}\nrows {}\nnon_constancy {}\n",
        fmt_f64(a.t1),
        fmt_f64(a.t2),
        scan.rows.len(),
        fmt_f64(scan.non_constancy)
    );
    Ok(vec![
        write_file(&out(c, "paradox.csv"), &t.render())?,
        write_file(&out(c, "summary.txt"), &summary)?,
    ])
}

fn constructive(c: &Common, a: &ConstructiveArgs) -> Result<Vec<PathBuf>> {
    if !(a.theta_min > 0.0 && a.theta_max > a.theta_min) {
        bail!("need 0 < --theta-min < --theta-max");
    }
    let grid = logspace(a.theta_min, a.theta_max, c.grid_points);
    let anchor = if (a.theta_min..=a.theta_max).contains(&1.0) {
        1.0
    } else {
        grid[0]
    };
    let opts = ConstructiveOptions {
        integration_range: Some((a.range_lo, a.range_hi)),
        ..ConstructiveOptions::default()
    };
    let g = constructive_prior(&PoissonModel::default(), a.k, &grid, anchor, opts)?;
    let mut t = Table::new(&["theta", "prior", "jeffreys"]);
    for (th, v) in g.points().iter().zip(g.values()) {
        t.push_numbers(&[*th, *v, (anchor / th).sqrt()]);
    }
    Ok(vec![write_file(&out(c, "constructive.csv"), &t.render())?])
}

//! Posterior summaries and frequentist checks of the reference analyses:
//! replicated measurements, interval coverage and upper-limit scans.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::counting::{GammaPriorSpec, MarginalBinModel, ParameterPoint};
use crate::error::{Error, Result};
use crate::grid::{linspace, DensityGrid};
use crate::method1::{conditional_jeffreys, SingleCountPosterior};
use crate::method2::{check_endpoints, method2_prior_series, DEFAULT_SERIES_TOL};
use crate::quad::{bisect, integrate_to_infinity, QuadConfig};
use crate::specfun::{normal_quantile, RandomStream};

/// Probabilities reported by [`summarize`].
pub const SUMMARY_PROBS: [f64; 5] = [0.05, 0.16, 0.5, 0.84, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    /// Keyed by probability in parts per million so the map orders correctly.
    pub quantiles: BTreeMap<u32, f64>,
    pub upper_limit_95: f64,
    pub central_68: (f64, f64),
}

impl PosteriorSummary {
    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles.get(&prob_key(p)).copied()
    }

    /// (probability, σ) pairs in increasing order.
    pub fn quantile_pairs(&self) -> Vec<(f64, f64)> {
        self.quantiles.iter().map(|(k, v)| (*k as f64 / 1e6, *v)).collect()
    }
}

fn prob_key(p: f64) -> u32 {
    (p * 1e6).round() as u32
}

/// Mean, sd and the standard quantiles of a normalized grid.
pub fn summarize(grid: &DensityGrid) -> Result<PosteriorSummary> {
    let qs = grid.quantiles(&SUMMARY_PROBS)?;
    let quantiles: BTreeMap<u32, f64> = SUMMARY_PROBS.iter().zip(&qs).map(|(p, q)| (prob_key(*p), *q)).collect();
    Ok(PosteriorSummary {
        mean: grid.mean()?,
        sd: grid.sd()?,
        upper_limit_95: qs[4],
        central_68: (qs[1], qs[3]),
        quantiles,
    })
}

/// Pairs (Φ⁻¹(p), (Q(p) − mean)/sd) for each probability.
pub fn qq_recentered(grid: &DensityGrid, probs: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (mean, sd) = (grid.mean()?, grid.sd()?);
    let qs = grid.quantiles(probs)?;
    probs
        .iter()
        .zip(qs)
        .map(|(&p, q)| Ok((normal_quantile(p)?, (q - mean) / sd)))
        .collect()
}

/// Largest |recentered quantile − normal quantile| over p ∈ [0.02, 0.98].
pub fn qq_max_deviation(grid: &DensityGrid) -> Result<f64> {
    let probs = linspace(0.02, 0.98, 97);
    Ok(qq_recentered(grid, &probs)?
        .iter()
        .map(|(z, q)| (q - z).abs())
        .fold(0.0, f64::max))
}

/// Which reference analysis a study runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisMethod {
    Method1,
    Method2,
}

/// A study of N_R replicated single-count measurements sharing ε and μ.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationConfig {
    pub n_replications: usize,
    pub method: AnalysisMethod,
    /// Single-bin truth. Coverage scans use only its σ.
    pub truth: ParameterPoint,
    pub prior_x: GammaPriorSpec,
    pub prior_y: GammaPriorSpec,
    pub pseudo_experiments: usize,
    pub grid_points: usize,
}

impl ReplicationConfig {
    pub fn new(
        n_replications: usize,
        method: AnalysisMethod,
        prior_x: GammaPriorSpec,
        prior_y: GammaPriorSpec,
    ) -> Self {
        Self {
            n_replications,
            method,
            truth: ParameterPoint {
                sigma: 1.0,
                eff_lumi: vec![1.0],
                background: vec![1.0],
            },
            prior_x,
            prior_y,
            pseudo_experiments: 2000,
            grid_points: 801,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replications == 0 || self.pseudo_experiments == 0 {
            return Err(Error::InvalidConfig(
                "replications and pseudo-experiments must be >= 1".into(),
            ));
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidConfig("need at least three grid points".into()));
        }
        if self.truth.eff_lumi.len() != 1 || self.truth.background.len() != 1 {
            return Err(Error::InvalidConfig("the truth must be a single-bin point".into()));
        }
        self.truth.validate()
    }

    fn scaled_priors(&self) -> Result<(GammaPriorSpec, GammaPriorSpec)> {
        let k = self.n_replications as f64;
        Ok((self.prior_x.scaled(k)?, self.prior_y.scaled(k)?))
    }
}

/// Grid on [lo, hi] that holds all of `ln_target` above 1e-12 of its peak,
/// found by doubling the upper end from `hint`.
pub fn adaptive_sigma_grid(ln_target: impl Fn(f64) -> f64, hint: f64, points: usize) -> Result<Vec<f64>> {
    adaptive_sigma_grid_with_floor(ln_target, hint, points, 1e-12)
}

/// As [`adaptive_sigma_grid`] with the relative floor `rel_floor` in place of 1e-12.
pub fn adaptive_sigma_grid_with_floor(
    ln_target: impl Fn(f64) -> f64,
    hint: f64,
    points: usize,
    rel_floor: f64,
) -> Result<Vec<f64>> {
    const COARSE: usize = 400;
    if !(rel_floor > 0.0 && rel_floor < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "relative floor {rel_floor} must lie in (0, 1)"
        )));
    }
    let threshold = rel_floor.ln();
    let mut hi = hint.max(1e-12);
    for _ in 0..200 {
        let coarse = linspace(0.0, hi, COARSE);
        let vals: Vec<f64> = coarse.iter().map(|&s| ln_target(s)).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidGrid("target is not finite anywhere on the grid".into()));
        }
        if vals[COARSE - 1] - max < threshold {
            let first = vals.iter().position(|v| v - max >= threshold).unwrap();
            let last = vals.iter().rposition(|v| v - max >= threshold).unwrap();
            let lo = coarse[first.saturating_sub(1)];
            let hi = coarse[(last + 1).min(COARSE - 1)];
            return Ok(linspace(lo, hi, points));
        }
        hi *= 2.0;
    }
    Err(Error::InvalidGrid("could not bracket the posterior".into()))
}

/// Method-1 posterior of N_R replicates with total count `n_total`, via the
/// Poisson collapse to one count with priors scaled by N_R.
pub fn method1_replicated_posterior(n_total: u64, config: &ReplicationConfig) -> Result<DensityGrid> {
    let (px, py) = config.scaled_priors()?;
    let post = SingleCountPosterior::new(n_total, px, py);
    let marg = MarginalBinModel::with_table_len(px, py, n_total as usize + 1);
    let points = adaptive_sigma_grid(
        |s| marg.ln_probability(n_total, s),
        post.sigma_scale(),
        config.grid_points,
    )?;
    DensityGrid::from_fn(points, |s| post.density(s))?.normalize()
}

/// Method-2 posterior of N_R replicates: the product of single-count
/// marginals with the single-count series prior.
pub fn method2_replicated_posterior(counts: &[u64], config: &ReplicationConfig) -> Result<DensityGrid> {
    if counts.is_empty() {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let model = MarginalBinModel::with_table_len(config.prior_x, config.prior_y, max_count as usize + 1);
    // Identical priors: each distinct count enters with its multiplicity.
    let mut multiplicity: BTreeMap<u64, usize> = BTreeMap::new();
    for &n in counts {
        *multiplicity.entry(n).or_default() += 1;
    }
    let ln_l = |s: f64| -> f64 {
        multiplicity
            .iter()
            .map(|(&n, &k)| k as f64 * model.ln_probability(n, s))
            .sum()
    };
    let total: u64 = counts.iter().sum();
    let hint = (total as f64 + 1.0 + 5.0 * (total as f64 + 1.0).sqrt()) / (counts.len() as f64 * config.prior_x.mean());
    let points = adaptive_sigma_grid(ln_l, hint, config.grid_points)?;
    let ln_values: Vec<f64> = points.iter().map(|&s| ln_l(s)).collect();
    let peak = ln_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = points
        .iter()
        .zip(&ln_values)
        .map(|(&s, l)| {
            Ok((l - peak).exp() * method2_prior_series(s, config.prior_x, config.prior_y, DEFAULT_SERIES_TOL)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    check_endpoints(&points, &values)?;
    DensityGrid::new(points, values)?.normalize()
}

/// Generates one replicated measurement at the truth and returns its posterior.
pub fn replicate_posterior(config: &ReplicationConfig, stream: &mut RandomStream) -> Result<DensityGrid> {
    config.validate()?;
    let (s, e, m) = (config.truth.sigma, config.truth.eff_lumi[0], config.truth.background[0]);
    let lambda = e * s + m;
    match config.method {
        AnalysisMethod::Method1 => {
            let n = stream.poisson(config.n_replications as f64 * lambda)?;
            method1_replicated_posterior(n, config)
        }
        AnalysisMethod::Method2 => {
            let counts = (0..config.n_replications)
                .map(|_| stream.poisson(lambda))
                .collect::<Result<Vec<u64>>>()?;
            method2_replicated_posterior(&counts, config)
        }
    }
}

/// Interval type for coverage studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    /// [0, upper limit].
    Upper,
    /// Equal-tailed central interval.
    Central,
}

/// Fraction of pseudo-experiments whose interval contained the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    pub coverage: f64,
    pub std_error: f64,
    pub contained: usize,
    pub total: usize,
}

impl CoverageEstimate {
    fn from_counts(contained: usize, total: usize) -> Self {
        let p = contained as f64 / total as f64;
        Self {
            coverage: p,
            std_error: (p * (1.0 - p) / total as f64).sqrt(),
            contained,
            total,
        }
    }
}

/// Closed-interval containment from the posterior CDF at the true value.
/// σ_true ≤ Q(c) iff F(σ_true) ≤ c for a continuous increasing CDF.
fn contains(cdf_at_truth: f64, credibility: f64, kind: IntervalKind) -> bool {
    match kind {
        IntervalKind::Upper => cdf_at_truth <= credibility,
        IntervalKind::Central => {
            let alpha = 0.5 * (1.0 - credibility);
            cdf_at_truth >= alpha && cdf_at_truth <= 1.0 - alpha
        }
    }
}

fn check_credibility(credibility: f64) -> Result<()> {
    if !(credibility > 0.0 && credibility < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "credibility {credibility} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Coverage at fixed σ_true averaged over the nuisance priors. Experiment i
/// uses sub-stream i: it draws ε and μ, then N_R counts, then forms the
/// posterior and tests whether its interval contains σ_true.
pub fn coverage_scan(
    config: &ReplicationConfig,
    credibility: f64,
    kind: IntervalKind,
    stream: &RandomStream,
) -> Result<CoverageEstimate> {
    config.validate()?;
    check_credibility(credibility)?;
    let sigma = config.truth.sigma;
    let (px, py) = config.scaled_priors()?;
    let hits = (0..config.pseudo_experiments).into_par_iter().map(|i| -> Result<bool> {
        let mut sub = stream.split(i as u64);
        let e = config.prior_x.sample(&mut sub)?;
        let m = config.prior_y.sample(&mut sub)?;
        let lambda = e * sigma + m;
        let f = match config.method {
            AnalysisMethod::Method1 => {
                let n = sub.poisson(config.n_replications as f64 * lambda)?;
                SingleCountPosterior::new(n, px, py).cdf(sigma)?
            }
            AnalysisMethod::Method2 => {
                let counts = (0..config.n_replications)
                    .map(|_| sub.poisson(lambda))
                    .collect::<Result<Vec<u64>>>()?;
                method2_replicated_posterior(&counts, config)?.cdf(sigma)?
            }
        };
        Ok(contains(f, credibility, kind))
    });
    let contained = hits.collect::<Result<Vec<bool>>>()?.into_iter().filter(|&h| h).count();
    Ok(CoverageEstimate::from_counts(contained, config.pseudo_experiments))
}

/// Coverage averaged over a proper gamma prior on σ that is used both to
/// generate σ and to form the posterior. For any N_R this equals the
/// credibility up to binomial noise.
pub fn coverage_scan_proper_prior(
    config: &ReplicationConfig,
    sigma_prior: GammaPriorSpec,
    credibility: f64,
    kind: IntervalKind,
    stream: &RandomStream,
) -> Result<CoverageEstimate> {
    config.validate()?;
    check_credibility(credibility)?;
    let (px, py) = config.scaled_priors()?;
    let hits = (0..config.pseudo_experiments).into_par_iter().map(|i| -> Result<bool> {
        let mut sub = stream.split(i as u64);
        let sigma = sigma_prior.sample(&mut sub)?;
        let e = config.prior_x.sample(&mut sub)?;
        let m = config.prior_y.sample(&mut sub)?;
        let n = sub.poisson(config.n_replications as f64 * (e * sigma + m))?;
        let marg = MarginalBinModel::with_table_len(px, py, n as usize + 1);
        let ln_post = |s: f64| marg.ln_probability(n, s) + sigma_prior.ln_density(s);
        let hint = sigma_prior.mean() + 10.0 * sigma_prior.variance().sqrt();
        let points = adaptive_sigma_grid(
            |s| if s > 0.0 { ln_post(s) } else { f64::NEG_INFINITY },
            hint,
            config.grid_points,
        )?;
        let peak = points
            .iter()
            .map(|&s| ln_post(s))
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let grid = DensityGrid::from_fn(points, |s| {
            let v = ln_post(s);
            Ok(if v.is_finite() { (v - peak).exp() } else { 0.0 })
        })?
        .normalize()?;
        Ok(contains(grid.cdf(sigma)?, credibility, kind))
    });
    let contained = hits.collect::<Result<Vec<bool>>>()?.into_iter().filter(|&h| h).count();
    Ok(CoverageEstimate::from_counts(contained, config.pseudo_experiments))
}

/// Method-1 upper limits for one count as the mean background varies. The
/// ε prior has mean 1; both priors share the given CV.
pub fn upper_limit_vs_background(n: u64, mean_bg_grid: &[f64], cv: f64, credibility: f64) -> Result<Vec<(f64, f64)>> {
    check_credibility(credibility)?;
    let px = GammaPriorSpec::from_mean_cv(1.0, cv)?;
    mean_bg_grid
        .iter()
        .map(|&mb| {
            let py = GammaPriorSpec::from_mean_cv(mb, cv)?;
            Ok((mb, SingleCountPosterior::new(n, px, py).upper_limit(credibility)?))
        })
        .collect()
}

/// σ prior used with exactly known ε and μ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnownNuisancePrior {
    Flat,
    /// ε/√(εσ+μ).
    Jeffreys,
}

/// Upper limit for one count with ε and μ known exactly, by quadrature in
/// t = √σ and bisection on the CDF.
pub fn upper_limit_known_nuisance(
    n: u64,
    eff: f64,
    bg: f64,
    prior: KnownNuisancePrior,
    credibility: f64,
) -> Result<f64> {
    check_credibility(credibility)?;
    if !(eff > 0.0) || !(bg >= 0.0) {
        return Err(Error::domain(
            "upper_limit_known_nuisance",
            format!("need eff > 0 and bg >= 0, got ({eff}, {bg})"),
        ));
    }
    // Log-shift by the likelihood at its maximum over σ ≥ 0.
    let s_hat = ((n as f64 - bg) / eff).max(0.0);
    let ln_like = |s: f64| {
        let lambda = eff * s + bg;
        let log_term = if n == 0 { 0.0 } else { n as f64 * lambda.ln() };
        log_term - lambda
    };
    let shift = ln_like(s_hat);
    let integrand = |t: f64| {
        let s = t * t;
        let w = match prior {
            KnownNuisancePrior::Flat => 2.0 * t,
            // ε/√(εt²+μ)·2t stays finite as t → 0 even when μ = 0.
            KnownNuisancePrior::Jeffreys if bg == 0.0 => 2.0 * eff.sqrt(),
            KnownNuisancePrior::Jeffreys => 2.0 * t * eff / (eff * s + bg).sqrt(),
        };
        (ln_like(s) - shift).exp() * w
    };
    let cfg = QuadConfig::new(1e-14, 1e-12);
    let total = integrate_to_infinity(integrand, 0.0, cfg)?.value;
    let cdf = |s: f64| -> Result<f64> {
        let r = crate::quad::integrate(integrand, 0.0, s.sqrt(), cfg)?;
        Ok(r.value / total)
    };
    let mut hi = s_hat + 10.0 * ((n as f64 + 1.0).sqrt() + 1.0) / eff;
    while cdf(hi)? < credibility {
        hi *= 2.0;
    }
    bisect(|s| Ok(cdf(s)? - credibility), 0.0, hi, 1e-12, 1e-13 * hi)
}

/// Unnormalized Method-1 conditional prior for exactly known nuisance values.
pub fn known_nuisance_prior_value(prior: KnownNuisancePrior, sigma: f64, eff: f64, bg: f64) -> Result<f64> {
    match prior {
        KnownNuisancePrior::Flat => Ok(1.0),
        KnownNuisancePrior::Jeffreys => conditional_jeffreys(sigma, eff, bg),
    }
}

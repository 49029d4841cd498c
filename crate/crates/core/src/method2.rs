//! Method 2: the reference prior of the marginal model p(n⃗|σ), obtained by
//! integrating the nuisance parameters out against their evidence priors.
//!
//! For one bin the prior is the square root of the Fisher information of
//! the marginal count distribution, summed as a series over n. For several
//! bins it is estimated by Monte Carlo.

use rayon::prelude::*;

use crate::counting::{CountingChannel, GammaPriorSpec, MarginalBinModel, MarginalChannelModel, MarginalCountModel};
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::reference::{fisher_to_estimate, second_derivative, DiscreteModel, Estimate};
use crate::specfun::RandomStream;

/// Hard cap on the count index of the Fisher series.
pub const SERIES_MAX_COUNT: u64 = 5000;
pub const DEFAULT_SERIES_TOL: f64 = 1e-10;
/// Relative stencil step of the Monte Carlo prior.
pub const DEFAULT_MC_STEP: f64 = 1e-3;

/// Right-limit stand-in for σ = 0: 1e-8·(mean μ + 1)/(mean ε).
pub fn zero_sigma_proxy(prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> f64 {
    1e-8 * (prior_y.mean() + 1.0) / prior_x.mean()
}

/// Fisher information Σ_n p(n|σ)·score(n,σ)² of the marginal single-count model.
pub fn marginal_fisher_information(
    sigma: f64,
    prior_x: GammaPriorSpec,
    prior_y: GammaPriorSpec,
    tol: f64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain(
            "marginal_fisher_information",
            format!("sigma {sigma} must be positive and finite"),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("series tolerance {tol} must be positive")));
    }
    let probe = MarginalBinModel::with_table_len(prior_x, prior_y, 0);
    let mean = probe.mean_count(sigma);
    let guess = (mean + 12.0 * probe.count_variance(sigma).sqrt() + 20.0).min(SERIES_MAX_COUNT as f64) as usize;
    let model = MarginalBinModel::with_table_len(prior_x, prior_y, guess + 1);
    let mut total = 0.0;
    let mut mass = 0.0;
    for n in 0..=SERIES_MAX_COUNT {
        let p = model.ln_probability(n, sigma).exp();
        let s = model.score(n, sigma);
        let term = p * s * s;
        total += term;
        mass += p;
        if n as f64 > mean && term <= tol * total && 1.0 - mass <= tol {
            return Ok(total);
        }
    }
    Err(Error::SeriesNonConvergence {
        max_terms: SERIES_MAX_COUNT as usize,
    })
}

/// Method-2 prior for one count, √(Fisher information) by series (unnormalized).
///
/// σ = 0 is evaluated at [`zero_sigma_proxy`].
pub fn method2_prior_series(sigma: f64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec, tol: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(
            "method2_prior_series",
            format!("sigma {sigma} must be >= 0"),
        ));
    }
    let s = if sigma == 0.0 {
        zero_sigma_proxy(prior_x, prior_y)
    } else {
        sigma
    };
    Ok(marginal_fisher_information(s, prior_x, prior_y, tol)?.sqrt())
}

/// Monte Carlo Method-2 prior for a channel.
///
/// Averages the five-point second derivative of −ln p(n⃗|σ) over n⃗ drawn
/// from the marginal model. The step is `step · max(σ, Σμ̄/Σε̄)`; when σ is
/// closer to 0 than 2.5 steps the estimate is taken at σ = 2.5 steps.
pub fn method2_prior_mc(
    channel: &CountingChannel,
    sigma: f64,
    mc_samples: usize,
    stream: &mut RandomStream,
    step: f64,
) -> Result<Estimate> {
    method2_prior_mc_with(&MarginalChannelModel::new(channel), sigma, mc_samples, stream, step)
}

fn method2_prior_mc_with(
    model: &MarginalChannelModel,
    sigma: f64,
    mc_samples: usize,
    stream: &mut RandomStream,
    step: f64,
) -> Result<Estimate> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(
            "method2_prior_mc",
            format!("sigma {sigma} must be finite and >= 0"),
        ));
    }
    if mc_samples < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo samples".into()));
    }
    let bins = model.channel().bins();
    let se: f64 = bins.iter().map(|b| b.eff_lumi_prior.mean()).sum();
    let sm: f64 = bins.iter().map(|b| b.background_prior.mean()).sum();
    let h = step * sigma.max(sm / se);
    let at = sigma.max(2.5 * h);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_samples {
        let counts = model.sample_counts(at, stream)?;
        let d2 = -second_derivative(|s| model.ln_likelihood_counts(&counts, s), at, h);
        sum += d2;
        sum_sq += d2 * d2;
    }
    fisher_to_estimate(sum, sum_sq, mc_samples)
}

/// How the Method-2 prior is evaluated on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method2PriorMode {
    /// Exact series. For several bins the per-bin Fisher informations add.
    Series,
    MonteCarlo {
        samples: usize,
    },
    /// Series for a single bin, Monte Carlo otherwise.
    Auto {
        samples: usize,
    },
}

/// Method-2 prior tabulated on `points` (unnormalized). Monte Carlo points
/// use sub-stream `i` of `stream` for grid index `i`.
pub fn method2_prior_grid(
    channel: &CountingChannel,
    points: &[f64],
    mode: Method2PriorMode,
    stream: &RandomStream,
) -> Result<DensityGrid> {
    let mode = match mode {
        Method2PriorMode::Auto { samples } if channel.len() > 1 => Method2PriorMode::MonteCarlo { samples },
        Method2PriorMode::Auto { .. } => Method2PriorMode::Series,
        m => m,
    };
    let values = match mode {
        Method2PriorMode::Series => points
            .iter()
            .map(|&s| {
                let mut fisher = 0.0;
                for b in channel.bins() {
                    let v = method2_prior_series(s, b.eff_lumi_prior, b.background_prior, DEFAULT_SERIES_TOL)?;
                    fisher += v * v;
                }
                Ok(fisher.sqrt())
            })
            .collect::<Result<Vec<f64>>>()?,
        Method2PriorMode::MonteCarlo { samples } => {
            let model = MarginalChannelModel::new(channel);
            points
                .par_iter()
                .enumerate()
                .map(|(i, &s)| {
                    let mut sub = stream.split(i as u64);
                    Ok(method2_prior_mc_with(&model, s, samples, &mut sub, DEFAULT_MC_STEP)?.value)
                })
                .collect::<Result<Vec<f64>>>()?
        }
        Method2PriorMode::Auto { .. } => unreachable!(),
    };
    DensityGrid::new(points.to_vec(), values)
}

/// Normalized posterior p(n⃗_o|σ)·π(σ) for a tabulated prior.
///
/// Fails with [`Error::GridTooNarrow`] when the density at the upper end, or
/// at a positive lower end, exceeds 1e-6 of the peak.
pub fn posterior_from_prior(channel: &CountingChannel, prior: &DensityGrid) -> Result<DensityGrid> {
    let model = MarginalChannelModel::new(channel);
    let ln_l: Vec<f64> = prior.points().iter().map(|&s| model.ln_likelihood(s)).collect();
    let max = ln_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = ln_l
        .iter()
        .zip(prior.values())
        .map(|(l, p)| (l - max).exp() * p)
        .collect();
    check_endpoints(prior.points(), &values)?;
    DensityGrid::new(prior.points().to_vec(), values)?.normalize()
}

pub(crate) fn check_endpoints(points: &[f64], values: &[f64]) -> Result<()> {
    const ENDPOINT_RATIO: f64 = 1e-6;
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let last = values.len() - 1;
    let mut ends = vec![last];
    if points[0] > 0.0 {
        ends.push(0);
    }
    for i in ends {
        let ratio = values[i] / peak;
        if ratio >= ENDPOINT_RATIO {
            return Err(Error::GridTooNarrow { at: points[i], ratio });
        }
    }
    Ok(())
}

/// Method-2 posterior on `points`, normalized.
pub fn method2_posterior(
    channel: &CountingChannel,
    points: &[f64],
    mode: Method2PriorMode,
    stream: &RandomStream,
) -> Result<DensityGrid> {
    let prior = method2_prior_grid(channel, points, mode, stream)?;
    posterior_from_prior(channel, &prior)
}

/// Flat-prior posterior on `points`, normalized.
pub fn flat_posterior(channel: &CountingChannel, points: &[f64]) -> Result<DensityGrid> {
    let ones = DensityGrid::new(points.to_vec(), vec![1.0; points.len()])?;
    posterior_from_prior(channel, &ones)
}

/// The marginal single-count model in the coordinate φ = ln σ.
#[derive(Debug, Clone)]
pub struct LogSigmaModel {
    inner: MarginalCountModel,
}

impl LogSigmaModel {
    pub fn new(prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Self {
        Self {
            inner: MarginalCountModel::new(prior_x, prior_y),
        }
    }
}

impl DiscreteModel for LogSigmaModel {
    fn log_probability(&self, n: u64, phi: f64) -> f64 {
        self.inner.log_probability(n, phi.exp())
    }

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn sample(&self, phi: f64, stream: &mut RandomStream) -> Result<u64> {
        self.inner.sample(phi.exp(), stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv_fifth() -> GammaPriorSpec {
        GammaPriorSpec::from_mean_cv(1.0, 0.2).unwrap()
    }

    #[test]
    fn fisher_at_one_matches_reference_value() {
        let f = marginal_fisher_information(1.0, cv_fifth(), cv_fifth(), 1e-12).unwrap();
        assert!((f - 0.4807692).abs() < 1e-6, "{f}");
    }

    #[test]
    fn near_degenerate_priors_give_poisson_shape() {
        let px = GammaPriorSpec::from_mean_cv(1.0, 0.01).unwrap();
        let py = GammaPriorSpec::from_mean_cv(1e-4, 0.01).unwrap();
        let r0 = method2_prior_series(1.0, px, py, DEFAULT_SERIES_TOL).unwrap();
        for &s in &[0.3, 2.0, 5.0] {
            let r = method2_prior_series(s, px, py, DEFAULT_SERIES_TOL).unwrap() / r0;
            let want = (1.0 / s).sqrt();
            assert!((r / want - 1.0).abs() < 0.02, "sigma {s}: {r} vs {want}");
        }
    }

    #[test]
    fn series_is_stable_in_tolerance() {
        let a = method2_prior_series(2.0, cv_fifth(), cv_fifth(), 1e-10).unwrap();
        let b = method2_prior_series(2.0, cv_fifth(), cv_fifth(), 1e-13).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn mc_matches_series_for_one_bin() {
        let ch = CountingChannel::single(0, cv_fifth(), cv_fifth());
        let mut s = RandomStream::new(3);
        let est = method2_prior_mc(&ch, 1.0, 20_000, &mut s, DEFAULT_MC_STEP).unwrap();
        let exact = method2_prior_series(1.0, cv_fifth(), cv_fifth(), 1e-12).unwrap();
        assert!((est.value - exact).abs() < 3.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn mc_is_deterministic() {
        let ch = CountingChannel::single(2, cv_fifth(), cv_fifth());
        let a = method2_prior_mc(&ch, 0.5, 200, &mut RandomStream::new(9), DEFAULT_MC_STEP).unwrap();
        let b = method2_prior_mc(&ch, 0.5, 200, &mut RandomStream::new(9), DEFAULT_MC_STEP).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let ch = CountingChannel::single(4, cv_fifth(), cv_fifth());
        let pts: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let r = method2_posterior(&ch, &pts, Method2PriorMode::Series, &RandomStream::new(1));
        assert!(matches!(r, Err(Error::GridTooNarrow { .. })));
    }

    #[test]
    fn posterior_normalizes() {
        let ch = CountingChannel::single(1, cv_fifth(), cv_fifth());
        let pts: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let g = method2_posterior(&ch, &pts, Method2PriorMode::Series, &RandomStream::new(1)).unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_uses_proxy() {
        let v0 = method2_prior_series(0.0, cv_fifth(), cv_fifth(), DEFAULT_SERIES_TOL).unwrap();
        let v1 = method2_prior_series(1e-6, cv_fifth(), cv_fifth(), DEFAULT_SERIES_TOL).unwrap();
        assert!(v0.is_finite() && (v0 / v1 - 1.0).abs() < 1e-3);
    }
}

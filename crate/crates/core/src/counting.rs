//! Poisson counting models with gamma evidence priors on the effective
//! luminosity ε and the background μ.
//!
//! A gamma evidence prior with shape offset `x` and rate `a` has density
//! `a(aε)^{x−½} e^{−aε} / Γ(x+½)`. Integrating the single-count likelihood
//! over both priors gives the marginal model
//! `p(n|σ) = [a/(a+σ)]^{x+½} [b/(b+1)]^{y+½} S_n⁰(σ)` with
//!
//! ```text
//! S_n^m(σ) = Σ_k k^m C(k+x−½, k) C(n−k+y−½, n−k) (b+1)^{−(n−k)} (σ/(a+σ))^k
//! ```

use crate::error::{Error, Result};
use crate::quad::{integrate_endpoint_powers, integrate_with_breaks, QuadConfig};
use crate::reference::DiscreteModel;
use crate::specfun::{ln_gamma_unchecked, RandomStream};

/// A gamma evidence prior in the (shape offset, rate) parametrization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPriorSpec {
    shape_offset: f64,
    rate: f64,
}

impl GammaPriorSpec {
    /// Prior with density `rate·(rate·t)^{shape_offset−½} e^{−rate·t} / Γ(shape_offset+½)`.
    pub fn new(shape_offset: f64, rate: f64) -> Result<Self> {
        if !(shape_offset >= 0.0 && shape_offset.is_finite()) {
            return Err(Error::domain(
                "GammaPriorSpec::new",
                format!("shape offset {shape_offset} must be finite and nonnegative"),
            ));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(
                "GammaPriorSpec::new",
                format!("rate {rate} must be positive and finite"),
            ));
        }
        Ok(Self { shape_offset, rate })
    }

    /// Prior with the given mean and coefficient of variation, `0 < cv ≤ √2`.
    pub fn from_mean_cv(mean: f64, cv: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::domain(
                "prior_from_mean_cv",
                format!("mean {mean} must be positive and finite"),
            ));
        }
        if !(cv > 0.0) || cv > std::f64::consts::SQRT_2 {
            return Err(Error::domain(
                "prior_from_mean_cv",
                format!("coefficient of variation {cv} outside (0, sqrt 2]; the shape offset would be negative"),
            ));
        }
        let shape = (1.0 / cv).powi(2);
        Self::new((shape - 0.5).max(0.0), shape / mean)
    }

    /// The shape offset x (the gamma shape minus ½).
    pub fn shape_offset(&self) -> f64 {
        self.shape_offset
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Gamma shape parameter x + ½.
    pub fn shape(&self) -> f64 {
        self.shape_offset + 0.5
    }

    pub fn mean(&self) -> f64 {
        self.shape() / self.rate
    }

    pub fn cv(&self) -> f64 {
        1.0 / self.shape().sqrt()
    }

    pub fn variance(&self) -> f64 {
        self.shape() / (self.rate * self.rate)
    }

    /// Same shape, rate divided by `factor`: the prior on `factor·t`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.shape_offset, self.rate / factor)
    }

    /// Log density at t > 0.
    pub fn ln_density(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let k = self.shape();
        self.rate.ln() + (k - 1.0) * (self.rate * t).ln() - self.rate * t - ln_gamma_unchecked(k)
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Result<f64> {
        stream.gamma(self.shape(), self.rate)
    }

    /// E[g(t)] under this prior, by adaptive quadrature.
    pub fn expectation(&self, mut g: impl FnMut(f64) -> f64, config: QuadConfig) -> Result<f64> {
        let (mean, sd) = (self.mean(), self.variance().sqrt());
        let hi = mean + 40.0 * sd;
        let mut integrand = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            self.ln_density(t).exp() * g(t)
        };
        if self.shape() >= 1.0 {
            let lo = (mean - 40.0 * sd).max(0.0);
            let mut breaks: Vec<f64> = (-8..=8)
                .map(|k| mean + k as f64 * sd)
                .filter(|&b| b > lo && b < hi)
                .collect();
            breaks.insert(0, lo);
            breaks.push(hi);
            Ok(integrate_with_breaks(integrand, &breaks, config)?.value)
        } else {
            let shape_minus_one = self.shape() - 1.0;
            Ok(integrate_endpoint_powers(|t, _, _| integrand(t), 0.0, hi, shape_minus_one, 0.0, config)?.value)
        }
    }
}

/// One bin of a counting experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub observed: u64,
    pub eff_lumi_prior: GammaPriorSpec,
    pub background_prior: GammaPriorSpec,
}

impl Bin {
    pub fn new(observed: u64, eff_lumi_prior: GammaPriorSpec, background_prior: GammaPriorSpec) -> Self {
        Self {
            observed,
            eff_lumi_prior,
            background_prior,
        }
    }
}

/// A full experiment: one or more independent bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingChannel {
    bins: Vec<Bin>,
}

impl CountingChannel {
    pub fn new(bins: Vec<Bin>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidConfig("a counting channel needs at least one bin".into()));
        }
        Ok(Self { bins })
    }

    /// Single-count experiment.
    pub fn single(observed: u64, eff_lumi_prior: GammaPriorSpec, background_prior: GammaPriorSpec) -> Self {
        Self {
            bins: vec![Bin::new(observed, eff_lumi_prior, background_prior)],
        }
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total_observed(&self) -> u64 {
        self.bins.iter().map(|b| b.observed).sum()
    }

    /// Same priors, different observed counts.
    pub fn with_counts(&self, counts: &[u64]) -> Result<Self> {
        if counts.len() != self.bins.len() {
            return Err(Error::InvalidConfig(format!(
                "{} counts for a channel with {} bins",
                counts.len(),
                self.bins.len()
            )));
        }
        Ok(Self {
            bins: self
                .bins
                .iter()
                .zip(counts)
                .map(|(b, &n)| Bin { observed: n, ..*b })
                .collect(),
        })
    }

    /// Draws (ε⃗, μ⃗) from the evidence priors.
    pub fn sample_nuisance(&self, sigma: f64, stream: &mut RandomStream) -> Result<ParameterPoint> {
        let mut eff = Vec::with_capacity(self.bins.len());
        let mut bg = Vec::with_capacity(self.bins.len());
        for b in &self.bins {
            eff.push(b.eff_lumi_prior.sample(stream)?);
            bg.push(b.background_prior.sample(stream)?);
        }
        ParameterPoint::new(sigma, eff, bg)
    }

    /// Draws one count per bin from the Poisson model at `point`.
    pub fn sample_counts(&self, point: &ParameterPoint, stream: &mut RandomStream) -> Result<Vec<u64>> {
        point.check_against(self)?;
        point
            .eff_lumi
            .iter()
            .zip(&point.background)
            .map(|(e, m)| stream.poisson(e * point.sigma + m))
            .collect()
    }
}

/// A point (σ, ε⃗, μ⃗) of parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    pub sigma: f64,
    pub eff_lumi: Vec<f64>,
    pub background: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(sigma: f64, eff_lumi: Vec<f64>, background: Vec<f64>) -> Result<Self> {
        let p = Self {
            sigma,
            eff_lumi,
            background,
        };
        p.validate()?;
        Ok(p)
    }

    /// Single-bin point.
    pub fn single(sigma: f64, eff_lumi: f64, background: f64) -> Result<Self> {
        Self::new(sigma, vec![eff_lumi], vec![background])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(
                "ParameterPoint",
                format!("sigma {} must be finite and >= 0", self.sigma),
            ));
        }
        if self.eff_lumi.len() != self.background.len() {
            return Err(Error::domain(
                "ParameterPoint",
                "eff_lumi and background lengths differ",
            ));
        }
        if self
            .eff_lumi
            .iter()
            .chain(&self.background)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::domain(
                "ParameterPoint",
                "effective luminosities and backgrounds must be positive",
            ));
        }
        Ok(())
    }

    pub fn check_against(&self, channel: &CountingChannel) -> Result<()> {
        if self.eff_lumi.len() != channel.len() || self.background.len() != channel.len() {
            return Err(Error::domain(
                "ParameterPoint",
                format!("point has {} bins, channel has {}", self.eff_lumi.len(), channel.len()),
            ));
        }
        Ok(())
    }
}

/// Poisson log probability of `n` at mean `lambda`.
#[inline]
pub fn ln_poisson(n: u64, lambda: f64) -> f64 {
    if n == 0 {
        return -lambda;
    }
    if lambda <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = n as f64;
    n * lambda.ln() - lambda - ln_gamma_unchecked(n + 1.0)
}

/// Σᵢ [nᵢ ln(εᵢσ+μᵢ) − (εᵢσ+μᵢ) − ln nᵢ!].
pub fn log_likelihood(channel: &CountingChannel, point: &ParameterPoint) -> Result<f64> {
    point.check_against(channel)?;
    let mut total = 0.0;
    for (i, bin) in channel.bins.iter().enumerate() {
        let lambda = point.eff_lumi[i] * point.sigma + point.background[i];
        if !(lambda > 0.0) {
            return Err(Error::domain(
                "log_likelihood",
                format!("mean count {lambda} in bin {i} is not positive"),
            ));
        }
        total += ln_poisson(bin.observed, lambda);
    }
    Ok(total)
}

/// Bins beyond this many counts fall back to direct log-gamma evaluation.
const DEFAULT_TABLE_LEN: usize = 128;

/// Marginal single-count model with cached log binomial coefficients.
#[derive(Debug, Clone)]
pub struct MarginalBinModel {
    eff: GammaPriorSpec,
    bg: GammaPriorSpec,
    // ln C(k+x−½, k)
    ln_binom_eff: Vec<f64>,
    // ln C(j+y−½, j) − j ln(b+1)
    ln_binom_bg: Vec<f64>,
    ln_bg_constant: f64,
}

impl MarginalBinModel {
    pub fn new(eff: GammaPriorSpec, bg: GammaPriorSpec) -> Self {
        Self::with_table_len(eff, bg, DEFAULT_TABLE_LEN)
    }

    /// Caches binomial coefficients for counts below `len`.
    pub fn with_table_len(eff: GammaPriorSpec, bg: GammaPriorSpec, len: usize) -> Self {
        let mut m = Self {
            eff,
            bg,
            ln_binom_eff: Vec::new(),
            ln_binom_bg: Vec::new(),
            ln_bg_constant: bg.shape() * (bg.rate() / (bg.rate() + 1.0)).ln(),
        };
        m.ln_binom_eff = (0..len).map(|k| m.ln_binom_eff_direct(k)).collect();
        m.ln_binom_bg = (0..len).map(|j| m.ln_binom_bg_direct(j)).collect();
        m
    }

    pub fn from_bin(bin: &Bin) -> Self {
        Self::with_table_len(
            bin.eff_lumi_prior,
            bin.background_prior,
            DEFAULT_TABLE_LEN.max(bin.observed as usize + 1),
        )
    }

    pub fn eff_prior(&self) -> GammaPriorSpec {
        self.eff
    }

    pub fn bg_prior(&self) -> GammaPriorSpec {
        self.bg
    }

    fn ln_binom_eff_direct(&self, k: usize) -> f64 {
        let k = k as f64;
        let s = self.eff.shape();
        ln_gamma_unchecked(k + s) - ln_gamma_unchecked(k + 1.0) - ln_gamma_unchecked(s)
    }

    fn ln_binom_bg_direct(&self, j: usize) -> f64 {
        let j = j as f64;
        let s = self.bg.shape();
        ln_gamma_unchecked(j + s)
            - ln_gamma_unchecked(j + 1.0)
            - ln_gamma_unchecked(s)
            - j * (self.bg.rate() + 1.0).ln()
    }

    #[inline]
    fn lbe(&self, k: usize) -> f64 {
        match self.ln_binom_eff.get(k) {
            Some(v) => *v,
            None => self.ln_binom_eff_direct(k),
        }
    }

    #[inline]
    fn lbb(&self, j: usize) -> f64 {
        match self.ln_binom_bg.get(j) {
            Some(v) => *v,
            None => self.ln_binom_bg_direct(j),
        }
    }

    /// ln S_n⁰(σ) and ln S_n¹(σ) in one pass.
    pub fn ln_snm_pair(&self, n: u64, sigma: f64) -> (f64, f64) {
        let n = n as usize;
        if sigma <= 0.0 {
            return (self.lbb(n), f64::NEG_INFINITY);
        }
        let ln_ratio = (sigma / (self.eff.rate() + sigma)).ln();
        // Two-pass log-sum-exp over the k terms.
        let mut max = f64::NEG_INFINITY;
        for k in 0..=n {
            let t = self.lbe(k) + self.lbb(n - k) + k as f64 * ln_ratio;
            max = max.max(t);
        }
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for k in 0..=n {
            let w = (self.lbe(k) + self.lbb(n - k) + k as f64 * ln_ratio - max).exp();
            s0 += w;
            s1 += k as f64 * w;
        }
        let l1 = if s1 > 0.0 { max + s1.ln() } else { f64::NEG_INFINITY };
        (max + s0.ln(), l1)
    }

    /// ln S_n^m(σ) for m ∈ {0, 1}.
    pub fn ln_snm(&self, n: u64, m: u8, sigma: f64) -> f64 {
        let (l0, l1) = self.ln_snm_pair(n, sigma);
        if m == 0 {
            l0
        } else {
            l1
        }
    }

    /// ln p(n|σ) under the marginal model.
    pub fn ln_probability(&self, n: u64, sigma: f64) -> f64 {
        let a = self.eff.rate();
        self.eff.shape() * (a / (a + sigma)).ln() + self.ln_bg_constant + self.ln_snm(n, 0, sigma)
    }

    /// Mean count E[n|σ].
    pub fn mean_count(&self, sigma: f64) -> f64 {
        sigma * self.eff.mean() + self.bg.mean()
    }

    /// Variance of the count, Poisson plus prior spread.
    pub fn count_variance(&self, sigma: f64) -> f64 {
        self.mean_count(sigma) + sigma * sigma * self.eff.variance() + self.bg.variance()
    }

    /// d/dσ ln p(n|σ) = [(a/σ) S¹/S⁰ − (x+½)] / (a+σ).
    pub fn score(&self, n: u64, sigma: f64) -> f64 {
        let a = self.eff.rate();
        let (l0, l1) = self.ln_snm_pair(n, sigma);
        let ratio = if l1 == f64::NEG_INFINITY { 0.0 } else { (l1 - l0).exp() };
        ((a / sigma) * ratio - self.eff.shape()) / (a + sigma)
    }

    /// Exact draw of n given σ: ε and μ from their priors, then Poisson.
    pub fn sample_count(&self, sigma: f64, stream: &mut RandomStream) -> Result<u64> {
        let e = self.eff.sample(stream)?;
        let m = self.bg.sample(stream)?;
        stream.poisson(e * sigma + m)
    }
}

/// S_n^m(σ) for the given priors.
pub fn snm_series(n: u64, m: u8, sigma: f64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(
            "snm_series",
            format!("sigma {sigma} must be finite and >= 0"),
        ));
    }
    if m > 1 {
        return Err(Error::domain("snm_series", format!("moment order {m} must be 0 or 1")));
    }
    let model = MarginalBinModel::with_table_len(prior_x, prior_y, n as usize + 1);
    Ok(model.ln_snm(n, m, sigma).exp())
}

/// p(n|σ) under the marginal single-count model.
pub fn marginal_likelihood(n: u64, sigma: f64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    Ok(ln_marginal_likelihood(n, sigma, prior_x, prior_y)?.exp())
}

/// ln p(n|σ) under the marginal single-count model.
pub fn ln_marginal_likelihood(n: u64, sigma: f64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(
            "marginal_likelihood",
            format!("sigma {sigma} must be finite and >= 0"),
        ));
    }
    let model = MarginalBinModel::with_table_len(prior_x, prior_y, n as usize + 1);
    Ok(model.ln_probability(n, sigma))
}

/// Marginal model of a whole channel: the product of per-bin marginals.
#[derive(Debug, Clone)]
pub struct MarginalChannelModel {
    channel: CountingChannel,
    bins: Vec<MarginalBinModel>,
}

impl MarginalChannelModel {
    pub fn new(channel: &CountingChannel) -> Self {
        Self {
            channel: channel.clone(),
            bins: channel.bins().iter().map(MarginalBinModel::from_bin).collect(),
        }
    }

    pub fn channel(&self) -> &CountingChannel {
        &self.channel
    }

    pub fn bin_models(&self) -> &[MarginalBinModel] {
        &self.bins
    }

    /// ln p(n⃗_o|σ) for the observed counts.
    pub fn ln_likelihood(&self, sigma: f64) -> f64 {
        self.bins
            .iter()
            .zip(self.channel.bins())
            .map(|(m, b)| m.ln_probability(b.observed, sigma))
            .sum()
    }

    /// ln p(n⃗|σ) for arbitrary counts.
    pub fn ln_likelihood_counts(&self, counts: &[u64], sigma: f64) -> f64 {
        self.bins
            .iter()
            .zip(counts)
            .map(|(m, &n)| m.ln_probability(n, sigma))
            .sum()
    }

    /// Draws n⃗ ~ p(·|σ).
    pub fn sample_counts(&self, sigma: f64, stream: &mut RandomStream) -> Result<Vec<u64>> {
        self.bins.iter().map(|m| m.sample_count(sigma, stream)).collect()
    }
}

/// ln Π_bins p(n_i|σ) for the channel's observed counts.
pub fn marginal_likelihood_channel(channel: &CountingChannel, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(
            "marginal_likelihood_channel",
            format!("sigma {sigma} must be finite and >= 0"),
        ));
    }
    Ok(MarginalChannelModel::new(channel).ln_likelihood(sigma))
}

/// The marginal single-count model seen as a one-parameter discrete model in σ.
#[derive(Debug, Clone)]
pub struct MarginalCountModel {
    inner: MarginalBinModel,
}

impl MarginalCountModel {
    pub fn new(prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Self {
        Self {
            inner: MarginalBinModel::with_table_len(prior_x, prior_y, 512),
        }
    }

    pub fn bin_model(&self) -> &MarginalBinModel {
        &self.inner
    }
}

impl DiscreteModel for MarginalCountModel {
    fn log_probability(&self, n: u64, theta: f64) -> f64 {
        self.inner.ln_probability(n, theta)
    }

    fn sample(&self, theta: f64, stream: &mut RandomStream) -> Result<u64> {
        self.inner.sample_count(theta, stream)
    }
}

/// Shape of a synthetic multi-bin channel: signal rising and background
/// falling exponentially across the bins of a discriminant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticChannelConfig {
    pub bins: usize,
    /// Expected signal events at σ = 1, summed over bins.
    pub signal_total: f64,
    pub background_total: f64,
    /// Exponential slope of the signal and background shapes across bins.
    pub slope: f64,
    /// σ used to generate the observed counts.
    pub sigma_true: f64,
}

impl Default for SyntheticChannelConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            signal_total: 250.0,
            background_total: 250.0,
            slope: 7.0,
            sigma_true: 1.0,
        }
    }
}

/// Builds a synthetic channel and draws its observed counts at the prior means.
///
/// In bin i with t = (i+½)/M the ε prior has CV 0.05 + 0.05t and the μ
/// prior has CV 0.05 + 0.1t, so uncertainties grow toward the signal end.
pub fn synthetic_channel(config: SyntheticChannelConfig, stream: &mut RandomStream) -> Result<CountingChannel> {
    if config.bins == 0 || !(config.signal_total > 0.0) || !(config.background_total > 0.0) {
        return Err(Error::InvalidConfig(
            "synthetic channel needs bins and positive totals".into(),
        ));
    }
    let m = config.bins;
    let ts: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let sig_shape: Vec<f64> = ts.iter().map(|t| (config.slope * t).exp()).collect();
    let bg_shape: Vec<f64> = ts.iter().map(|t| (-config.slope * t).exp()).collect();
    let sig_norm: f64 = sig_shape.iter().sum();
    let bg_norm: f64 = bg_shape.iter().sum();
    let mut bins = Vec::with_capacity(m);
    for i in 0..m {
        let eff_mean = sig_shape[i] / sig_norm * config.signal_total;
        let bg_mean = bg_shape[i] / bg_norm * config.background_total;
        let eff = GammaPriorSpec::from_mean_cv(eff_mean, 0.05 + 0.05 * ts[i])?;
        let bg = GammaPriorSpec::from_mean_cv(bg_mean, 0.05 + 0.1 * ts[i])?;
        let observed = stream.poisson(eff_mean * config.sigma_true + bg_mean)?;
        bins.push(Bin::new(observed, eff, bg));
    }
    CountingChannel::new(bins)
}

//! Method 1: a conditional reference prior for σ given (ε⃗, μ⃗), multiplied by
//! the evidence priors of the nuisance parameters.
//!
//! For one count the conditional prior is the Jeffreys form ε/√(εσ+μ) and
//! the posterior tail has a one-dimensional integral representation. For
//! several bins the posterior is built by reweighting a Markov chain drawn
//! from the flat-prior posterior.

use crate::counting::{ln_poisson, CountingChannel, GammaPriorSpec, ParameterPoint};
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::mcmc::{run_chain, ChainConfig, ChainDiagnostics, LogTarget};
use crate::quad::{bisect, integrate_endpoint_powers, integrate_with_breaks, QuadConfig};
use crate::reference::{fisher_to_estimate, second_derivative, Estimate};
use crate::specfun::{ln_beta_unchecked, reg_inc_beta_unchecked, RandomStream};

/// Conditional Jeffreys prior ε/√(εσ+μ) of the single-count model (unnormalized).
pub fn conditional_jeffreys(sigma: f64, eff: f64, bg: f64) -> Result<f64> {
    let lambda = eff * sigma + bg;
    if !(lambda > 0.0) || !(eff > 0.0) || sigma < 0.0 {
        return Err(Error::domain(
            "conditional_jeffreys",
            format!("need sigma >= 0, eff > 0 and eff*sigma + bg > 0; got ({sigma}, {eff}, {bg})"),
        ));
    }
    Ok(eff / lambda.sqrt())
}

/// Multi-bin conditional Jeffreys prior √(Σᵢ εᵢ²/(εᵢσ+μᵢ)) (unnormalized).
pub fn conditional_jeffreys_channel(sigma: f64, eff: &[f64], bg: &[f64]) -> Result<f64> {
    if eff.len() != bg.len() || eff.is_empty() {
        return Err(Error::domain(
            "conditional_jeffreys",
            "eff and bg must be nonempty and of equal length",
        ));
    }
    let mut total = 0.0;
    for (&e, &m) in eff.iter().zip(bg) {
        let j = conditional_jeffreys(sigma, e, m)?;
        total += j * j;
    }
    Ok(total.sqrt())
}

/// Monte Carlo estimate of the conditional Jeffreys prior: average the
/// five-point second derivative of −ln p(n⃗|σ,ε⃗,μ⃗) over simulated counts.
///
/// The stencil step is `step · max(σ, Σμ/Σε)`, shrunk if needed so that
/// every Poisson mean stays positive on the stencil.
pub fn numerical_conditional_jeffreys(
    sigma: f64,
    eff: &[f64],
    bg: &[f64],
    samples: usize,
    stream: &mut RandomStream,
    step: f64,
) -> Result<Estimate> {
    if eff.len() != bg.len() || eff.is_empty() {
        return Err(Error::domain(
            "numerical_conditional_jeffreys",
            "eff and bg must be nonempty and of equal length",
        ));
    }
    if samples < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo samples".into()));
    }
    let (se, sm): (f64, f64) = (eff.iter().sum(), bg.iter().sum());
    let mut h = step * sigma.max(sm / se);
    let room = eff
        .iter()
        .zip(bg)
        .map(|(e, m)| (e * sigma + m) / e)
        .fold(f64::INFINITY, f64::min);
    if 2.0 * h >= room {
        h = 0.25 * room;
    }
    let mut counts = vec![0u64; eff.len()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        for (c, (&e, &m)) in counts.iter_mut().zip(eff.iter().zip(bg)) {
            *c = stream.poisson(e * sigma + m)?;
        }
        let ln_l = |s: f64| -> f64 {
            counts
                .iter()
                .zip(eff.iter().zip(bg))
                .map(|(&n, (&e, &m))| ln_poisson(n, e * s + m))
                .sum()
        };
        let d2 = -second_derivative(ln_l, sigma, h);
        sum += d2;
        sum_sq += d2 * d2;
    }
    fisher_to_estimate(sum, sum_sq, samples)
}

/// Shape of the nested compact sets used to normalize the conditional prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompactSetKind {
    /// σ ∈ [0, u], ε ∈ [1/v, v], μ ∈ [1/w, w].
    AxisAlignedCube,
    /// σ ∈ [0, u/ε], ε ∈ [1/v, v], μ ∈ [1/w, w].
    LuminosityScaled,
}

/// An increasing sequence of compact sets indexed by level ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactSetSchedule {
    pub kind: CompactSetKind,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl CompactSetSchedule {
    pub fn new(kind: CompactSetKind, u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        for (name, seq) in [("u", &u), ("v", &v), ("w", &w)] {
            if seq.is_empty() || seq.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "sequence {name} must be nonempty, positive and finite"
                )));
            }
            if seq.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::InvalidConfig(format!(
                    "sequence {name} must be strictly increasing"
                )));
            }
        }
        if u.len() != v.len() || u.len() != w.len() {
            return Err(Error::InvalidConfig(
                "u, v and w must have the same number of levels".into(),
            ));
        }
        Ok(Self { kind, u, v, w })
    }

    /// Levels ℓ = 0..levels with u = 10^ℓ and v = w = ℓ + 2.
    pub fn geometric(kind: CompactSetKind, levels: usize) -> Self {
        let u = (0..levels).map(|l| 10f64.powi(l as i32)).collect();
        let v: Vec<f64> = (0..levels).map(|l| l as f64 + 2.0).collect();
        Self {
            kind,
            u,
            w: v.clone(),
            v,
        }
    }

    pub fn levels(&self) -> usize {
        self.u.len()
    }

    /// σ bound at level ℓ for the given ε.
    pub fn sigma_bound(&self, level: usize, eff: f64) -> f64 {
        match self.kind {
            CompactSetKind::AxisAlignedCube => self.u[level],
            CompactSetKind::LuminosityScaled => self.u[level] / eff,
        }
    }

    pub fn contains(&self, level: usize, sigma: f64, eff: f64, bg: f64) -> bool {
        let (v, w) = (self.v[level], self.w[level]);
        sigma >= 0.0 && sigma <= self.sigma_bound(level, eff) && eff >= 1.0 / v && eff <= v && bg >= 1.0 / w && bg <= w
    }

    /// K_ℓ(ε, μ) = ∫ ε/√(εσ+μ) dσ over the σ-section of level ℓ.
    pub fn normalizer(&self, level: usize, eff: f64, bg: f64) -> f64 {
        let u = self.u[level];
        match self.kind {
            CompactSetKind::AxisAlignedCube => 2.0 * ((eff * u + bg).sqrt() - bg.sqrt()),
            CompactSetKind::LuminosityScaled => 2.0 * ((u + bg).sqrt() - bg.sqrt()),
        }
    }
}

/// The arbitrary fixed point (σ₀, ε₀, μ₀) = (1, 1, 1).
pub fn default_anchor() -> ParameterPoint {
    ParameterPoint {
        sigma: 1.0,
        eff_lumi: vec![1.0],
        background: vec![1.0],
    }
}

/// π_{R,ℓ}(σ|ε,μ) / π_{R,ℓ}(σ₀|ε₀,μ₀) for the conditional prior restricted
/// to level ℓ of the schedule and renormalized there.
pub fn restricted_prior_limit(
    schedule: &CompactSetSchedule,
    sigma: f64,
    eff: f64,
    bg: f64,
    anchor: &ParameterPoint,
    level: usize,
) -> Result<f64> {
    if level >= schedule.levels() {
        return Err(Error::InvalidConfig(format!(
            "level {level} beyond the schedule's {} levels",
            schedule.levels()
        )));
    }
    if anchor.eff_lumi.len() != 1 || anchor.background.len() != 1 {
        return Err(Error::InvalidConfig("the anchor must be a single-bin point".into()));
    }
    let (s0, e0, m0) = (anchor.sigma, anchor.eff_lumi[0], anchor.background[0]);
    if !schedule.contains(level, s0, e0, m0) {
        return Err(Error::OutsideCompactSet {
            level,
            what: format!("anchor ({s0}, {e0}, {m0})"),
        });
    }
    if !schedule.contains(level, sigma, eff, bg) {
        return Err(Error::OutsideCompactSet {
            level,
            what: format!("point ({sigma}, {eff}, {bg})"),
        });
    }
    let num = conditional_jeffreys(sigma, eff, bg)? / schedule.normalizer(level, eff, bg);
    let den = conditional_jeffreys(s0, e0, m0)? / schedule.normalizer(level, e0, m0);
    Ok(num / den)
}

fn tail_quad_config() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-10,
        max_intervals: 4000,
    }
}

/// Closed-form machinery for the single-count posterior with gamma priors.
///
/// With u the substitution variable, z₀ = b/(b+1) and
/// z(u) = z₀(a+σ)(u − u₀)/(u·a), u₀ = σ/(a+σ), the tail is
///
/// ```text
/// P(σ' > σ | n) = ∫_{u₀}^1 Beta(u; n+y+1, x+½) · I_{z(u)}(y+½, n+½) / I_{z₀}(y+½, n+½) du
/// ```
#[derive(Debug, Clone, Copy)]
pub struct SingleCountPosterior {
    n: u64,
    x: f64,
    a: f64,
    y: f64,
    b: f64,
    ln_beta_u: f64,
    ln_beta_z: f64,
    ln_i_z0: f64,
    z0: f64,
}

impl SingleCountPosterior {
    pub fn new(n: u64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Self {
        let nf = n as f64;
        let (x, a) = (prior_x.shape_offset(), prior_x.rate());
        let (y, b) = (prior_y.shape_offset(), prior_y.rate());
        let z0 = b / (b + 1.0);
        Self {
            n,
            x,
            a,
            y,
            b,
            ln_beta_u: ln_beta_unchecked(nf + y + 1.0, x + 0.5),
            ln_beta_z: ln_beta_unchecked(y + 0.5, nf + 0.5),
            ln_i_z0: reg_inc_beta_unchecked(z0, y + 0.5, nf + 0.5).ln(),
            z0,
        }
    }

    pub fn observed(&self) -> u64 {
        self.n
    }

    /// ln of the Beta(n+y+1, x+½) density at u, given 1 − u exactly.
    #[inline]
    fn ln_beta_density(&self, u: f64, one_minus_u: f64) -> f64 {
        (self.n as f64 + self.y) * u.ln() + (self.x - 0.5) * one_minus_u.ln() - self.ln_beta_u
    }

    #[inline]
    fn z(&self, sigma: f64, u: f64, gap_lo: f64) -> f64 {
        (self.z0 * (self.a + sigma) * gap_lo / (u * self.a)).min(self.z0)
    }

    /// Integrates over u ∈ [u₀, 1]. `f` receives (u, u − u₀, 1 − u).
    fn integrate_u(&self, f: impl FnMut(f64, f64, f64) -> f64, u0: f64, lo_exp: f64, hi_exp: f64) -> Result<f64> {
        let cfg = tail_quad_config();
        if lo_exp >= 0.0 && hi_exp >= 0.0 {
            let mut f = f;
            // Seed panels around the bulk of the Beta(n+y+1, x+½) factor.
            let (p, q) = (self.n as f64 + self.y + 1.0, self.x + 0.5);
            let mean = p / (p + q);
            let sd = (mean * (1.0 - mean) / (p + q + 1.0)).sqrt();
            let mut breaks = vec![u0];
            for k in -8..=8 {
                let b = mean + 0.75 * k as f64 * sd;
                if b > u0 && b < 1.0 && b > *breaks.last().unwrap() {
                    breaks.push(b);
                }
            }
            breaks.push(1.0);
            return Ok(integrate_with_breaks(|u| f(u, u - u0, 1.0 - u), &breaks, cfg)?.value);
        }
        Ok(integrate_endpoint_powers(f, u0, 1.0, lo_exp, hi_exp, cfg)?.value)
    }

    /// Posterior probability that the cross section exceeds σ.
    pub fn tail(&self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) {
            return Err(Error::domain("tail_probability", format!("sigma {sigma} must be >= 0")));
        }
        if sigma == 0.0 {
            return Ok(1.0);
        }
        if sigma.is_infinite() {
            return Ok(0.0);
        }
        let u0 = sigma / (self.a + sigma);
        let nf = self.n as f64;
        let (p, q) = (self.y + 0.5, nf + 0.5);
        let v = self.integrate_u(
            |u, gap_lo, gap_hi| {
                if gap_lo <= 0.0 || gap_hi <= 0.0 {
                    return 0.0;
                }
                let z = self.z(sigma, u, gap_lo);
                let ratio = (reg_inc_beta_unchecked(z, p, q).ln() - self.ln_i_z0).exp();
                (self.ln_beta_density(u, gap_hi)).exp() * ratio
            },
            u0,
            self.y + 0.5,
            self.x - 0.5,
        )?;
        Ok(v.clamp(0.0, 1.0))
    }

    /// Posterior CDF 1 − tail(σ).
    pub fn cdf(&self, sigma: f64) -> Result<f64> {
        Ok(1.0 - self.tail(sigma)?)
    }

    /// Posterior density, the negative σ-derivative of the tail.
    pub fn density(&self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::domain(
                "posterior_density",
                format!("sigma {sigma} must be finite and >= 0"),
            ));
        }
        let u0 = sigma / (self.a + sigma);
        let nf = self.n as f64;
        let lo_exp = if sigma > 0.0 { self.y - 0.5 } else { nf + self.y - 1.0 };
        let ln_const = self.z0.ln() - self.a.ln() - self.ln_beta_z - self.ln_i_z0;
        let v = self.integrate_u(
            |u, gap_lo, gap_hi| {
                if gap_lo <= 0.0 || gap_hi <= 0.0 {
                    return 0.0;
                }
                let z = self.z(sigma, u, gap_lo);
                if z <= 0.0 {
                    return 0.0;
                }
                let ln_v = self.ln_beta_density(u, gap_hi)
                    + (self.y - 0.5) * z.ln()
                    + (nf - 0.5) * (-z).ln_1p()
                    + ln_const
                    + gap_hi.ln()
                    - u.ln();
                ln_v.exp()
            },
            u0,
            lo_exp,
            self.x + 0.5,
        )?;
        Ok(v.max(0.0))
    }

    /// σ with posterior CDF `p`, by bisection on the tail.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain("quantile", format!("probability {p} outside (0, 1)")));
        }
        let target = 1.0 - p;
        let mut hi = (self.n as f64 + 1.0 + 5.0 * (self.n as f64 + 1.0).sqrt()) * (self.a / (self.x + 0.5)).max(1e-12);
        let mut guard = 0;
        while self.tail(hi)? > target {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::RootFinding(format!("no bracket for quantile {p}")));
            }
        }
        bisect(|s| Ok(self.tail(s)? - target), 0.0, hi, 1e-9, 1e-12 * hi)
    }

    /// Upper limit at the given credibility.
    pub fn upper_limit(&self, credibility: f64) -> Result<f64> {
        self.quantile(credibility)
    }

    /// Prior mean count scale: posterior mass sits below roughly this many σ units.
    pub fn sigma_scale(&self) -> f64 {
        let n = self.n as f64;
        (n + 1.0 + 5.0 * (n + 1.0).sqrt()) * self.a / (self.x + 0.5)
    }

    pub fn priors(&self) -> (f64, f64, f64, f64) {
        (self.x, self.a, self.y, self.b)
    }
}

/// Tail probability P(σ' > σ | n) of the single-count Method-1 posterior.
pub fn tail_probability(sigma: f64, n: u64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    SingleCountPosterior::new(n, prior_x, prior_y).tail(sigma)
}

/// Density of the single-count Method-1 posterior.
pub fn posterior_density(sigma: f64, n: u64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    SingleCountPosterior::new(n, prior_x, prior_y).density(sigma)
}

/// Single-count posterior tabulated on `points` and normalized.
pub fn posterior_grid(
    n: u64,
    prior_x: GammaPriorSpec,
    prior_y: GammaPriorSpec,
    points: Vec<f64>,
) -> Result<DensityGrid> {
    let post = SingleCountPosterior::new(n, prior_x, prior_y);
    DensityGrid::from_fn(points, |s| post.density(s))?.normalize()
}

/// Marginal Method-1 prior E_{ε,μ}[ε/√(εσ+μ)] for one bin, by nested quadrature.
pub fn marginal_prior(sigma: f64, prior_x: GammaPriorSpec, prior_y: GammaPriorSpec) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::domain("marginal_prior", format!("sigma {sigma} must be >= 0")));
    }
    let cfg = QuadConfig::new(1e-13, 1e-10);
    let mut err = None;
    let v = prior_y.expectation(
        |m| match prior_x.expectation(|e| e / (e * sigma + m).sqrt(), cfg) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        cfg,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// How the conditional prior weight is evaluated at each chain sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JeffreysWeight {
    Analytic,
    /// Monte Carlo average of `samples` stencil second derivatives.
    Numerical {
        samples: usize,
        step: f64,
    },
}

/// Settings for [`method1_posterior_mcmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct Method1Config {
    /// Sweeps of the main chain, burn-in included.
    pub chain_length: usize,
    pub burn_in_fraction: f64,
    pub pilot_length: usize,
    pub histogram_bins: usize,
    /// Upper end of the histogram. `None` takes the pilot-chain quantile at
    /// 1 − `tail_mass`.
    pub sigma_max: Option<f64>,
    pub tail_mass: f64,
    pub jeffreys: JeffreysWeight,
    /// Batches for batch-means quantile errors.
    pub batches: usize,
}

impl Default for Method1Config {
    fn default() -> Self {
        Self {
            chain_length: 1_000_000,
            burn_in_fraction: 0.1,
            pilot_length: 100_000,
            histogram_bins: 400,
            sigma_max: None,
            tail_mass: 1e-5,
            jeffreys: JeffreysWeight::Analytic,
            batches: 20,
        }
    }
}

/// One kept chain sample with its weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub sigma: f64,
    pub posterior_weight: f64,
    /// Logarithm of the prior weight (shifted by an arbitrary constant).
    pub ln_prior_weight: f64,
    pub flat_weight: f64,
}

/// Output of [`method1_posterior_mcmc`].
#[derive(Debug, Clone)]
pub struct Method1Result {
    /// Normalized reference posterior.
    pub posterior: DensityGrid,
    /// Unnormalized marginal reference prior.
    pub prior: DensityGrid,
    /// Normalized flat-prior posterior.
    pub flat: DensityGrid,
    pub sigma_max: f64,
    /// Whether the sampling target was multiplied by Σε for propriety.
    pub tilted: bool,
    pub samples: Vec<WeightedSample>,
    pub diagnostics: ChainDiagnostics,
    batches: usize,
}

impl Method1Result {
    /// Batch-means standard error of the weighted posterior quantile at `p`.
    pub fn quantile_std_error(&self, p: f64) -> Result<f64> {
        let b = self.batches.max(2);
        let size = self.samples.len() / b;
        if size == 0 {
            return Err(Error::InvalidConfig("too few samples for batch means".into()));
        }
        let qs: Vec<f64> = (0..b)
            .map(|i| weighted_quantile(&self.samples[i * size..(i + 1) * size], p))
            .collect();
        let mean = qs.iter().sum::<f64>() / b as f64;
        let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        Ok((var / b as f64).sqrt())
    }

    /// Weighted empirical posterior quantile over all kept samples.
    pub fn sample_quantile(&self, p: f64) -> f64 {
        weighted_quantile(&self.samples, p)
    }
}

fn weighted_quantile(samples: &[WeightedSample], p: f64) -> f64 {
    let mut v: Vec<(f64, f64)> = samples.iter().map(|s| (s.sigma, s.posterior_weight)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (s, w) in &v {
        acc += w;
        if acc >= p * total {
            return *s;
        }
    }
    v.last().map(|x| x.0).unwrap_or(0.0)
}

/// Flat-prior posterior in (σ, ε⃗, μ⃗), optionally tilted by Σε.
///
/// Per-bin terms are cached so a move of one ε or μ costs O(1) and a move of
/// σ costs one pass over the bins.
struct FlatTarget<'a> {
    channel: &'a CountingChannel,
    tilted: bool,
    eff: Vec<f64>,
    lik: Vec<f64>,
    prior: Vec<f64>,
    eff_sum: f64,
    lik_sum: f64,
    prior_sum: f64,
    pending: Pending,
    scratch: Vec<f64>,
}

enum Pending {
    None,
    Sigma { lik_sum: f64 },
    Bin { i: usize, eff: f64, lik: f64, prior: f64 },
}

impl<'a> FlatTarget<'a> {
    fn new(channel: &'a CountingChannel, tilted: bool) -> Self {
        let m = channel.len();
        Self {
            channel,
            tilted,
            eff: vec![0.0; m],
            lik: vec![0.0; m],
            prior: vec![0.0; m],
            eff_sum: 0.0,
            lik_sum: 0.0,
            prior_sum: 0.0,
            pending: Pending::None,
            scratch: vec![0.0; m],
        }
    }

    fn bin_lik(&self, i: usize, sigma: f64, e: f64, m: f64) -> f64 {
        ln_poisson(self.channel.bins()[i].observed, e * sigma + m)
    }

    fn bin_prior(&self, i: usize, e: f64, m: f64) -> f64 {
        let b = &self.channel.bins()[i];
        b.eff_lumi_prior.ln_density(e) + b.background_prior.ln_density(m)
    }

    fn total(&self, lik_sum: f64, prior_sum: f64, eff_sum: f64) -> f64 {
        let tilt = if self.tilted { eff_sum.ln() } else { 0.0 };
        lik_sum + prior_sum + tilt
    }
}

impl LogTarget for FlatTarget<'_> {
    fn log_density(&mut self, p: &ParameterPoint) -> f64 {
        for i in 0..self.channel.len() {
            let (e, m) = (p.eff_lumi[i], p.background[i]);
            self.eff[i] = e;
            self.lik[i] = self.bin_lik(i, p.sigma, e, m);
            self.prior[i] = self.bin_prior(i, e, m);
        }
        self.eff_sum = self.eff.iter().sum();
        self.lik_sum = self.lik.iter().sum();
        self.prior_sum = self.prior.iter().sum();
        self.pending = Pending::None;
        self.total(self.lik_sum, self.prior_sum, self.eff_sum)
    }

    fn propose(&mut self, p: &ParameterPoint, j: usize) -> f64 {
        let n = self.channel.len();
        if j == 0 {
            for i in 0..n {
                self.scratch[i] = self.bin_lik(i, p.sigma, p.eff_lumi[i], p.background[i]);
            }
            // Resum the cached terms here so incremental updates cannot drift.
            let lik_sum = self.scratch.iter().sum();
            self.prior_sum = self.prior.iter().sum();
            self.eff_sum = self.eff.iter().sum();
            self.pending = Pending::Sigma { lik_sum };
            return self.total(lik_sum, self.prior_sum, self.eff_sum);
        }
        let i = if j <= n { j - 1 } else { j - n - 1 };
        let (e, m) = (p.eff_lumi[i], p.background[i]);
        let lik = self.bin_lik(i, p.sigma, e, m);
        let prior = self.bin_prior(i, e, m);
        self.pending = Pending::Bin { i, eff: e, lik, prior };
        self.total(
            self.lik_sum - self.lik[i] + lik,
            self.prior_sum - self.prior[i] + prior,
            self.eff_sum - self.eff[i] + e,
        )
    }

    fn accept(&mut self) {
        match std::mem::replace(&mut self.pending, Pending::None) {
            Pending::None => {}
            Pending::Sigma { lik_sum } => {
                std::mem::swap(&mut self.lik, &mut self.scratch);
                self.lik_sum = lik_sum;
            }
            Pending::Bin { i, eff, lik, prior } => {
                self.eff_sum += eff - self.eff[i];
                self.lik_sum += lik - self.lik[i];
                self.prior_sum += prior - self.prior[i];
                self.eff[i] = eff;
                self.lik[i] = lik;
                self.prior[i] = prior;
            }
        }
    }
}

/// Histogram of weighted σ values tabulated at bin edges.
fn histogram_grid(values: &[(f64, f64)], sigma_max: f64, bins: usize) -> Result<DensityGrid> {
    let h = sigma_max / bins as f64;
    let mut counts = vec![0.0; bins];
    for &(s, w) in values {
        let k = (s / h) as usize;
        if k < bins {
            counts[k] += w;
        }
    }
    let points: Vec<f64> = (0..=bins).map(|i| i as f64 * h).collect();
    let mut edge_values = vec![0.0; bins + 1];
    edge_values[0] = counts[0];
    edge_values[bins] = counts[bins - 1];
    for i in 1..bins {
        edge_values[i] = 0.5 * (counts[i - 1] + counts[i]);
    }
    for v in &mut edge_values {
        *v /= h;
    }
    DensityGrid::new(points, edge_values)
}

/// Method-1 posterior and prior for a channel by reweighted MCMC.
///
/// Samples (σ, ε⃗, μ⃗) from the flat-prior posterior, weights each sample by
/// the conditional Jeffreys prior for the posterior and by the Jeffreys
/// prior over the likelihood for the prior, and histograms the weighted σ
/// values. When some bin's ε prior has shape offset x ≤ ½ the flat-prior
/// posterior is improper, so the sampling target is multiplied by Σε and
/// the weights divided by it.
pub fn method1_posterior_mcmc(
    channel: &CountingChannel,
    config: &Method1Config,
    stream: &mut RandomStream,
) -> Result<Method1Result> {
    if config.chain_length < 10 || config.histogram_bins == 0 {
        return Err(Error::InvalidConfig(
            "chain length and histogram bins must be positive".into(),
        ));
    }
    if !(config.burn_in_fraction >= 0.0 && config.burn_in_fraction < 1.0) {
        return Err(Error::InvalidConfig("burn-in fraction must lie in [0, 1)".into()));
    }
    let tilted = channel.bins().iter().any(|b| b.eff_lumi_prior.shape_offset() <= 0.5);

    let m = channel.len();
    let eff_mean: Vec<f64> = channel.bins().iter().map(|b| b.eff_lumi_prior.mean()).collect();
    let bg_mean: Vec<f64> = channel.bins().iter().map(|b| b.background_prior.mean()).collect();
    let (se, sm) = (eff_mean.iter().sum::<f64>(), bg_mean.iter().sum::<f64>());
    let n_tot = channel.total_observed() as f64;
    let spread = (n_tot + 1.0).sqrt() / se;
    let start = ParameterPoint::new(((n_tot - sm) / se).max(0.0) + 0.5 * spread, eff_mean, bg_mean)?;
    let mut scales = vec![spread];
    scales.extend(channel.bins().iter().map(|b| b.eff_lumi_prior.cv().min(1.0)));
    scales.extend(channel.bins().iter().map(|b| b.background_prior.cv().min(1.0)));

    let mut pilot_stream = stream.split(0);
    let mut main_stream = stream.split(1);
    let mut weight_stream = stream.split(2);

    let pilot_length = config.pilot_length.max(100);
    let pilot_cfg = ChainConfig::new(pilot_length, pilot_length / 10, start, scales);
    let pilot = run_chain(FlatTarget::new(channel, tilted), &pilot_cfg, &mut pilot_stream)?;
    let sigma_max = match config.sigma_max {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidConfig(format!("sigma_max {s} must be positive"))),
        None => {
            let mut col = pilot.column(0);
            col.sort_by(f64::total_cmp);
            let k = (((1.0 - config.tail_mass) * col.len() as f64) as usize).min(col.len() - 1);
            col[k].max(f64::MIN_POSITIVE)
        }
    };

    let burn_in = (config.chain_length as f64 * config.burn_in_fraction) as usize;
    let mut main_cfg = ChainConfig::new(
        config.chain_length,
        burn_in,
        pilot.point(pilot.len() - 1),
        pilot.diagnostics.final_step_scales.clone(),
    );
    main_cfg.adapt_window = pilot_cfg.adapt_window;
    let chain = run_chain(FlatTarget::new(channel, tilted), &main_cfg, &mut main_stream)?;

    let mut samples = Vec::with_capacity(chain.len());
    for i in 0..chain.len() {
        let r = chain.raw(i);
        let (sigma, eff, bg) = (r[0], &r[1..=m], &r[m + 1..]);
        let j = match config.jeffreys {
            JeffreysWeight::Analytic => conditional_jeffreys_channel(sigma, eff, bg)?,
            JeffreysWeight::Numerical { samples, step } => {
                numerical_conditional_jeffreys(sigma, eff, bg, samples, &mut weight_stream, step)?.value
            }
        };
        let tilt = if tilted { eff.iter().sum::<f64>() } else { 1.0 };
        let ln_l: f64 = channel
            .bins()
            .iter()
            .enumerate()
            .map(|(k, b)| ln_poisson(b.observed, eff[k] * sigma + bg[k]))
            .sum();
        let w = j / tilt;
        let ln_prior_w = j.ln() - ln_l - tilt.ln();
        if !w.is_finite() || ln_prior_w.is_nan() {
            return Err(Error::NonFiniteWeight { index: i });
        }
        samples.push(WeightedSample {
            sigma,
            posterior_weight: w,
            ln_prior_weight: ln_prior_w,
            flat_weight: 1.0 / tilt,
        });
    }
    let shift = samples
        .iter()
        .filter(|s| s.sigma < sigma_max)
        .map(|s| s.ln_prior_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let bins = config.histogram_bins;
    let post_pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.sigma, s.posterior_weight)).collect();
    let prior_pairs: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.sigma, (s.ln_prior_weight - shift).exp()))
        .collect();
    let flat_pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.sigma, s.flat_weight)).collect();
    Ok(Method1Result {
        posterior: histogram_grid(&post_pairs, sigma_max, bins)?.normalize()?,
        prior: histogram_grid(&prior_pairs, sigma_max, bins)?,
        flat: histogram_grid(&flat_pairs, sigma_max, bins)?.normalize()?,
        sigma_max,
        tilted,
        samples,
        diagnostics: chain.diagnostics,
        batches: config.batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv_fifth() -> GammaPriorSpec {
        GammaPriorSpec::from_mean_cv(1.0, 0.2).unwrap()
    }

    #[test]
    fn cached_target_matches_full_evaluation() {
        let low = GammaPriorSpec::new(0.3, 0.8).unwrap();
        let bins = (0..4)
            .map(|i| crate::counting::Bin::new(i * 2, if i == 1 { low } else { cv_fifth() }, cv_fifth()))
            .collect();
        let channel = CountingChannel::new(bins).unwrap();
        let mut cached = FlatTarget::new(&channel, true);
        let mut fresh = FlatTarget::new(&channel, true);
        let mut p = ParameterPoint::new(1.0, vec![1.0; 4], vec![0.5; 4]).unwrap();
        let mut s = RandomStream::new(3);
        let mut current = cached.log_density(&p);
        for _ in 0..500 {
            let j = (s.uniform() * 9.0) as usize;
            let mut q = p.clone();
            let v = (0.3 * s.normal()).exp();
            match j {
                0 => q.sigma *= v,
                1..=4 => q.eff_lumi[j - 1] *= v,
                _ => q.background[j - 5] *= v,
            }
            let proposed = cached.propose(&q, j);
            assert!((proposed - fresh.log_density(&q)).abs() < 1e-10);
            if s.uniform() < 0.5 {
                cached.accept();
                p = q;
                current = proposed;
            }
        }
        assert!((current - fresh.log_density(&p)).abs() < 1e-10);
    }

    #[test]
    fn jeffreys_examples() {
        let r = conditional_jeffreys(3.0, 1.0, 1.0).unwrap() / conditional_jeffreys(0.0, 1.0, 1.0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let one = conditional_jeffreys(0.7, 1.3, 0.4).unwrap();
        assert!((conditional_jeffreys_channel(0.7, &[1.3], &[0.4]).unwrap() - one).abs() < 1e-15);
        let two = conditional_jeffreys_channel(0.7, &[1.3, 1.3], &[0.4, 0.4]).unwrap();
        assert!((two - 2f64.sqrt() * one).abs() < 1e-14);
        assert!(conditional_jeffreys(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn anchor_ratio_is_one() {
        let anchor = default_anchor();
        for kind in [CompactSetKind::AxisAlignedCube, CompactSetKind::LuminosityScaled] {
            let s = CompactSetSchedule::geometric(kind, 6);
            for l in 0..6 {
                assert_eq!(restricted_prior_limit(&s, 1.0, 1.0, 1.0, &anchor, l).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn outside_set_is_rejected() {
        let s = CompactSetSchedule::geometric(CompactSetKind::AxisAlignedCube, 3);
        let r = restricted_prior_limit(&s, 1e6, 1.0, 1.0, &default_anchor(), 1);
        assert!(matches!(r, Err(Error::OutsideCompactSet { .. })));
        assert!(CompactSetSchedule::new(
            CompactSetKind::AxisAlignedCube,
            vec![2.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 2.0]
        )
        .is_err());
    }

    #[test]
    fn tail_endpoints() {
        assert_eq!(tail_probability(0.0, 3, cv_fifth(), cv_fifth()).unwrap(), 1.0);
        assert!(tail_probability(1e6, 0, cv_fifth(), cv_fifth()).unwrap() < 1e-6);
    }

    #[test]
    fn density_is_minus_tail_derivative() {
        let post = SingleCountPosterior::new(2, cv_fifth(), GammaPriorSpec::from_mean_cv(1.5, 0.3).unwrap());
        for &s in &[0.2, 1.0, 3.5] {
            let h = 1e-4;
            let fd = (post.tail(s - h).unwrap() - post.tail(s + h).unwrap()) / (2.0 * h);
            let d = post.density(s).unwrap();
            assert!((fd - d).abs() < 1e-6, "sigma {s}: {fd} vs {d}");
        }
    }

    #[test]
    fn small_shape_offsets_are_handled() {
        // x, y below ½ put negative exponents at both ends of the u range.
        let px = GammaPriorSpec::new(0.2, 0.5).unwrap();
        let py = GammaPriorSpec::new(0.1, 1.0).unwrap();
        let post = SingleCountPosterior::new(1, px, py);
        let t = post.tail(1.0).unwrap();
        assert!(t > 0.0 && t < 1.0);
        let h = 1e-4;
        let fd = (post.tail(1.0 - h).unwrap() - post.tail(1.0 + h).unwrap()) / (2.0 * h);
        assert!((fd - post.density(1.0).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn numerical_jeffreys_matches_closed_form() {
        let mut s = RandomStream::new(12);
        for &(sigma, e, m) in &[(0.0, 1.0, 1.0), (2.0, 0.8, 1.5)] {
            let est = numerical_conditional_jeffreys(sigma, &[e], &[m], 10_000, &mut s, 1e-3).unwrap();
            let exact = conditional_jeffreys(sigma, e, m).unwrap();
            assert!((est.value - exact).abs() / exact < 0.01, "{est:?} vs {exact}");
        }
    }

    #[test]
    fn marginal_prior_is_decreasing() {
        let a = marginal_prior(0.0, cv_fifth(), cv_fifth()).unwrap();
        let b = marginal_prior(1.0, cv_fifth(), cv_fifth()).unwrap();
        let c = marginal_prior(5.0, cv_fifth(), cv_fifth()).unwrap();
        assert!(a > b && b > c);
    }
}

#[cfg(test)]
mod frozen {
    use super::*;

    #[test]
    fn tail_values_for_unit_priors() {
        let p = GammaPriorSpec::from_mean_cv(1.0, 0.2).unwrap();
        let cases = [
            (0, 1.0, 0.294882615),
            (0, 3.0, 0.036075309),
            (0, 6.0, 0.00232752),
            (4, 1.0, 0.916867216),
            (4, 3.0, 0.544556347),
            (4, 6.0, 0.148713881),
        ];
        for (n, s, want) in cases {
            let got = tail_probability(s, n, p, p).unwrap();
            assert!((got - want).abs() < 2e-8, "n={n} sigma={s}: {got} vs {want}");
        }
    }
}

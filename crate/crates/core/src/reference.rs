//! Information-theoretic machinery for one-parameter reference priors:
//! Kullback–Leibler divergence, expected intrinsic information, the
//! constructive k-replication formula and Monte Carlo Jeffreys priors.

use crate::counting::ln_poisson;
use crate::error::{Error, Result};
use crate::grid::{linspace, logspace, DensityGrid};
use crate::quad::{integrate_with_breaks, trapezoid, QuadConfig};
use crate::specfun::RandomStream;

/// Tail mass left out by the default observation cutoff.
pub const DEFAULT_TAIL_MASS: f64 = 1e-12;
const CUTOFF_HARD_LIMIT: u64 = 50_000_000;

/// A one-parameter model for a single nonnegative integer observation.
pub trait DiscreteModel {
    /// ln p(n|θ).
    fn log_probability(&self, n: u64, theta: f64) -> f64;

    /// Open interval of admissible θ.
    fn domain(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    /// Smallest n whose cumulative probability exceeds 1 − 1e-12.
    fn observation_cutoff(&self, theta: f64) -> u64 {
        let mut cumulative = 0.0;
        let mut n = 0u64;
        loop {
            cumulative += self.log_probability(n, theta).exp();
            if cumulative > 1.0 - DEFAULT_TAIL_MASS || n >= CUTOFF_HARD_LIMIT {
                return n;
            }
            n += 1;
        }
    }

    /// Draws an observation. The default inverts the cumulative distribution.
    fn sample(&self, theta: f64, stream: &mut RandomStream) -> Result<u64> {
        let u = stream.uniform();
        let mut cumulative = 0.0;
        let mut n = 0u64;
        loop {
            cumulative += self.log_probability(n, theta).exp();
            if cumulative > u || n >= CUTOFF_HARD_LIMIT {
                return Ok(n);
            }
            n += 1;
        }
    }

    /// Model of a sufficient statistic of `k` independent observations, when
    /// one exists with the same likelihood shape in θ.
    fn sufficient_statistic(&self, _k: usize) -> Option<Box<dyn DiscreteModel>> {
        None
    }
}

/// Poisson observation with mean `exposure · θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonModel {
    pub exposure: f64,
}

impl PoissonModel {
    pub fn new(exposure: f64) -> Result<Self> {
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::domain(
                "PoissonModel",
                format!("exposure {exposure} must be positive"),
            ));
        }
        Ok(Self { exposure })
    }
}

impl Default for PoissonModel {
    fn default() -> Self {
        Self { exposure: 1.0 }
    }
}

impl DiscreteModel for PoissonModel {
    fn log_probability(&self, n: u64, theta: f64) -> f64 {
        ln_poisson(n, self.exposure * theta)
    }

    fn sample(&self, theta: f64, stream: &mut RandomStream) -> Result<u64> {
        stream.poisson(self.exposure * theta)
    }

    fn sufficient_statistic(&self, k: usize) -> Option<Box<dyn DiscreteModel>> {
        // The sum of k counts is Poisson with k times the exposure.
        Some(Box::new(PoissonModel {
            exposure: self.exposure * k as f64,
        }))
    }
}

fn same_support(a: &DensityGrid, b: &DensityGrid) -> bool {
    a.len() == b.len()
        && a.points()
            .iter()
            .zip(b.points())
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}

/// D[q ‖ p] = ∫ q ln(q/p) by trapezoid quadrature on the shared grid.
pub fn kl_divergence(q: &DensityGrid, p: &DensityGrid) -> Result<f64> {
    for g in [q, p] {
        let integral = g.integral();
        if !g.is_normalized() || (integral - 1.0).abs() > crate::grid::NORMALIZATION_TOL {
            return Err(Error::UnnormalizedGrid { integral });
        }
    }
    if !same_support(q, p) {
        return Err(Error::SupportMismatch);
    }
    let mut integrand = Vec::with_capacity(q.len());
    for ((&x, &qv), &pv) in q.points().iter().zip(q.values()).zip(p.values()) {
        if qv == 0.0 {
            integrand.push(0.0);
        } else if pv == 0.0 {
            return Err(Error::ZeroReferenceDensity { at: x });
        } else {
            integrand.push(qv * (qv / pv).ln());
        }
    }
    Ok(trapezoid(q.points(), &integrand))
}

/// Settings for [`expected_intrinsic_information`] and [`constructive_prior`].
#[derive(Debug, Clone, Copy)]
pub struct EnumerationConfig {
    /// Largest number of outcomes (or tuples of outcomes) to enumerate.
    pub bound: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self { bound: 1_000_000 }
    }
}

/// Outcome space of k observations: either a sufficient statistic or tuples.
enum Outcomes {
    Collapsed { model: Box<dyn DiscreteModel>, max: u64 },
    Tuples { cutoff: u64, k: usize },
}

fn outcome_space(model: &dyn DiscreteModel, k: usize, thetas: &[f64], bound: usize) -> Result<Outcomes> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "number of replications k must be at least 1".into(),
        ));
    }
    if let Some(stat) = model.sufficient_statistic(k) {
        let max = thetas.iter().map(|&t| stat.observation_cutoff(t)).max().unwrap_or(0);
        if (max as u128 + 1) > bound as u128 {
            return Err(Error::EnumerationOverflow {
                size: max as u128 + 1,
                bound,
            });
        }
        return Ok(Outcomes::Collapsed { model: stat, max });
    }
    let cutoff = thetas.iter().map(|&t| model.observation_cutoff(t)).max().unwrap_or(0);
    let size = (cutoff as u128 + 1).checked_pow(k as u32).unwrap_or(u128::MAX);
    if size > bound as u128 {
        return Err(Error::EnumerationOverflow { size, bound });
    }
    Ok(Outcomes::Tuples { cutoff, k })
}

/// Calls `visit` with the log likelihood of every outcome, as a function of
/// θ over `thetas`.
fn for_each_outcome(
    model: &dyn DiscreteModel,
    outcomes: &Outcomes,
    thetas: &[f64],
    mut visit: impl FnMut(&dyn Fn(f64) -> f64, &[f64]) -> Result<()>,
) -> Result<()> {
    match outcomes {
        Outcomes::Collapsed { model: stat, max } => {
            for t in 0..=*max {
                let ln_l: Vec<f64> = thetas.iter().map(|&th| stat.log_probability(t, th)).collect();
                visit(&|th| stat.log_probability(t, th), &ln_l)?;
            }
        }
        Outcomes::Tuples { cutoff, k } => {
            let table: Vec<Vec<f64>> = (0..=*cutoff)
                .map(|n| thetas.iter().map(|&th| model.log_probability(n, th)).collect())
                .collect();
            let mut tuple = vec![0u64; *k];
            loop {
                let mut ln_l = vec![0.0; thetas.len()];
                for &n in &tuple {
                    for (acc, v) in ln_l.iter_mut().zip(&table[n as usize]) {
                        *acc += v;
                    }
                }
                let tup = tuple.clone();
                visit(
                    &move |th| tup.iter().map(|&n| model.log_probability(n, th)).sum(),
                    &ln_l,
                )?;
                // Odometer increment.
                let mut i = 0;
                loop {
                    if i == *k {
                        return Ok(());
                    }
                    if tuple[i] < *cutoff {
                        tuple[i] += 1;
                        break;
                    }
                    tuple[i] = 0;
                    i += 1;
                }
            }
        }
    }
    Ok(())
}

/// I_k{π}: the prior-predictive expectation of D[π(θ|x₍k₎) ‖ π(θ)].
///
/// Equivalently the mutual information between θ and k observations. The
/// posterior for each outcome is formed on the prior's grid.
pub fn expected_intrinsic_information(
    model: &dyn DiscreteModel,
    prior: &DensityGrid,
    k: usize,
    config: EnumerationConfig,
) -> Result<f64> {
    let integral = prior.integral();
    if !prior.is_normalized() || (integral - 1.0).abs() > crate::grid::NORMALIZATION_TOL {
        return Err(Error::UnnormalizedGrid { integral });
    }
    let thetas = prior.points();
    let outcomes = outcome_space(model, k, thetas, config.bound)?;
    let mut info = 0.0;
    let mut weighted = vec![0.0; thetas.len()];
    let mut kl_integrand = vec![0.0; thetas.len()];
    for_each_outcome(model, &outcomes, thetas, |_, ln_l| {
        let shift = ln_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Ok(());
        }
        for ((w, &p), &l) in weighted.iter_mut().zip(prior.values()).zip(ln_l) {
            *w = p * (l - shift).exp();
        }
        let m_shifted = trapezoid(thetas, &weighted);
        if m_shifted <= 0.0 {
            return Ok(());
        }
        let ln_m = m_shifted.ln();
        // Posterior is prior·L/m, so ln(post/prior) = ln L − ln m wherever the prior is positive.
        for ((out, &w), &l) in kl_integrand.iter_mut().zip(&weighted).zip(ln_l) {
            *out = if w > 0.0 {
                w / m_shifted * (l - shift - ln_m)
            } else {
                0.0
            };
        }
        let kl = trapezoid(thetas, &kl_integrand);
        info += (ln_m + shift).exp() * kl;
        Ok(())
    })?;
    Ok(info.max(0.0))
}

/// Settings for [`constructive_prior`].
#[derive(Debug, Clone, Copy)]
pub struct ConstructiveOptions {
    /// Range of the inner normalizing integral over θ′. `None` uses the
    /// range of the θ grid.
    pub integration_range: Option<(f64, f64)>,
    /// Number of panels seeded into each adaptive inner integral.
    pub panels: usize,
    pub enumeration: EnumerationConfig,
}

impl Default for ConstructiveOptions {
    fn default() -> Self {
        Self {
            integration_range: None,
            panels: 256,
            enumeration: EnumerationConfig::default(),
        }
    }
}

/// π_k(θ)/π_k(θ₀) with
/// `π_k(θ) = exp Σ_x p(x₍k₎|θ) ln[p(x₍k₎|θ) / ∫ p(x₍k₎|θ′) dθ′]`.
///
/// Products over the k observations are collapsed through the model's
/// sufficient statistic when it has one and enumerated as tuples otherwise.
pub fn constructive_prior(
    model: &dyn DiscreteModel,
    k: usize,
    theta_grid: &[f64],
    theta0: f64,
    options: ConstructiveOptions,
) -> Result<DensityGrid> {
    if theta_grid.len() < 2 {
        return Err(Error::InvalidGrid("theta grid needs at least two points".into()));
    }
    let (glo, ghi) = (theta_grid[0], theta_grid[theta_grid.len() - 1]);
    if !(theta0 >= glo && theta0 <= ghi) {
        return Err(Error::domain(
            "constructive_prior",
            format!("anchor {theta0} outside [{glo}, {ghi}]"),
        ));
    }
    let (lo, hi) = options.integration_range.unwrap_or((glo, ghi));
    if !(lo < hi) || lo > glo || hi < ghi {
        return Err(Error::InvalidConfig(format!(
            "integration range [{lo}, {hi}] must contain the grid range [{glo}, {ghi}]"
        )));
    }
    let panels = options.panels.max(1);
    let breaks = if lo > 0.0 {
        logspace(lo, hi, panels + 1)
    } else {
        linspace(lo, hi, panels + 1)
    };

    let mut eval_points: Vec<f64> = theta_grid.to_vec();
    eval_points.push(theta0);
    let outcomes = outcome_space(model, k, &eval_points, options.enumeration.bound)?;
    let mut ln_pi = vec![0.0; eval_points.len()];
    let quad = QuadConfig {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        max_intervals: 20 * panels,
    };
    for_each_outcome(model, &outcomes, &eval_points, |ln_p, ln_l| {
        if ln_l.iter().all(|v| *v < -745.0) {
            // Outcome carries no mass anywhere on the grid.
            return Ok(());
        }
        let shift = breaks.iter().map(|&t| ln_p(t)).fold(f64::NEG_INFINITY, f64::max);
        let z = integrate_with_breaks(|t| (ln_p(t) - shift).exp(), &breaks, quad)?;
        let ln_z = z.value.ln() + shift;
        for (acc, &l) in ln_pi.iter_mut().zip(ln_l) {
            if l > -745.0 {
                *acc += l.exp() * (l - ln_z);
            }
        }
        Ok(())
    })?;
    let anchor = ln_pi[ln_pi.len() - 1];
    let values: Vec<f64> = ln_pi[..theta_grid.len()].iter().map(|v| (v - anchor).exp()).collect();
    DensityGrid::new(theta_grid.to_vec(), values)
}

/// Finite-difference step for the five-point stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StencilStep {
    /// h = step · θ.
    Relative(f64),
    Absolute(f64),
}

impl Default for StencilStep {
    fn default() -> Self {
        StencilStep::Relative(1e-3)
    }
}

impl StencilStep {
    pub fn at(&self, theta: f64) -> f64 {
        match *self {
            StencilStep::Relative(r) => r * theta.abs(),
            StencilStep::Absolute(h) => h,
        }
    }
}

/// Five-point central second derivative.
#[inline]
pub fn second_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Five-point central first derivative.
#[inline]
pub fn first_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Per-draw form of the Fisher information averaged by [`jeffreys_prior_1d_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FisherEstimator {
    /// −∂²/∂θ² ln p(x|θ).
    #[default]
    Hessian,
    /// (∂/∂θ ln p(x|θ))². Its noise does not grow where the information is
    /// small relative to the score's own scatter.
    ScoreSquared,
}

/// √(E[−∂²/∂θ² ln p(x|θ)]) with x drawn from the model at θ.
pub fn jeffreys_prior_1d(
    model: &dyn DiscreteModel,
    theta: f64,
    mc_samples: usize,
    stream: &mut RandomStream,
    step: StencilStep,
) -> Result<Estimate> {
    jeffreys_prior_1d_with(model, theta, mc_samples, stream, step, FisherEstimator::Hessian)
}

/// [`jeffreys_prior_1d`] with a choice of per-draw Fisher estimator.
pub fn jeffreys_prior_1d_with(
    model: &dyn DiscreteModel,
    theta: f64,
    mc_samples: usize,
    stream: &mut RandomStream,
    step: StencilStep,
    estimator: FisherEstimator,
) -> Result<Estimate> {
    let h = step.at(theta);
    let (lo, hi) = model.domain();
    if !(h > 0.0) || theta - 2.0 * h <= lo || theta + 2.0 * h >= hi {
        return Err(Error::domain(
            "jeffreys_prior_1d",
            format!("stencil step {h} leaves the domain at theta {theta}"),
        ));
    }
    if mc_samples < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo samples".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_samples {
        let x = model.sample(theta, stream)?;
        let ln_p = |t| model.log_probability(x, t);
        let d = match estimator {
            FisherEstimator::Hessian => -second_derivative(ln_p, theta, h),
            FisherEstimator::ScoreSquared => first_derivative(ln_p, theta, h).powi(2),
        };
        sum += d;
        sum_sq += d * d;
    }
    fisher_to_estimate(sum, sum_sq, mc_samples)
}

/// Converts accumulated Fisher-information draws into a Jeffreys estimate.
pub(crate) fn fisher_to_estimate(sum: f64, sum_sq: f64, n: usize) -> Result<Estimate> {
    let nf = n as f64;
    let mean = sum / nf;
    if !(mean > 0.0) {
        return Err(Error::NegativeInformation { value: mean });
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let se_mean = (var / nf).sqrt();
    let value = mean.sqrt();
    Ok(Estimate {
        value,
        std_error: se_mean / (2.0 * value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::linspace;

    fn gamma_grid(shape: f64, points: &[f64]) -> DensityGrid {
        let v = points.iter().map(|&x| x.powf(shape - 1.0) * (-x).exp()).collect();
        DensityGrid::normalized_from(points.to_vec(), v).unwrap()
    }

    #[test]
    fn kl_zero_for_identical() {
        let pts = linspace(1e-4, 40.0, 2001);
        let q = gamma_grid(2.0, &pts);
        assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-9);
    }

    #[test]
    fn kl_asymmetric_nonnegative() {
        let pts = linspace(1e-4, 40.0, 4001);
        let (q, p) = (gamma_grid(2.0, &pts), gamma_grid(3.0, &pts));
        let a = kl_divergence(&q, &p).unwrap();
        let b = kl_divergence(&p, &q).unwrap();
        assert!(a > 0.0 && b > 0.0 && (a - b).abs() > 1e-3);
    }

    #[test]
    fn kl_requires_common_support() {
        let q = gamma_grid(2.0, &linspace(1e-4, 40.0, 101));
        let p = gamma_grid(2.0, &linspace(1e-4, 30.0, 101));
        assert_eq!(kl_divergence(&q, &p), Err(Error::SupportMismatch));
        let z = DensityGrid::normalized_from(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]).unwrap();
        let w = DensityGrid::normalized_from(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(kl_divergence(&z, &w), Err(Error::ZeroReferenceDensity { .. })));
    }

    #[test]
    fn poisson_jeffreys() {
        let mut s = RandomStream::new(3);
        let m = PoissonModel::default();
        let e = jeffreys_prior_1d(&m, 4.0, 200_000, &mut s, StencilStep::default()).unwrap();
        assert!((e.value - 0.5).abs() < 4.0 * e.std_error, "{e:?}");
        let e = jeffreys_prior_1d(&m, 1.0, 200_000, &mut s, StencilStep::default()).unwrap();
        assert!((e.value - 1.0).abs() < 4.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn jeffreys_rejects_large_step() {
        let mut s = RandomStream::new(3);
        let r = jeffreys_prior_1d(&PoissonModel::default(), 1.0, 10, &mut s, StencilStep::Relative(0.6));
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn tuple_enumeration_matches_collapse() {
        // A model without a sufficient statistic but the same likelihood.
        struct Plain;
        impl DiscreteModel for Plain {
            fn log_probability(&self, n: u64, theta: f64) -> f64 {
                ln_poisson(n, theta)
            }
        }
        let prior = DensityGrid::normalized_from(linspace(0.5, 3.0, 201), vec![1.0; 201]).unwrap();
        let cfg = EnumerationConfig::default();
        let a = expected_intrinsic_information(&Plain, &prior, 2, cfg).unwrap();
        let b = expected_intrinsic_information(&PoissonModel::default(), &prior, 2, cfg).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");

        let grid = linspace(0.5, 3.0, 11);
        let opts = ConstructiveOptions::default();
        let a = constructive_prior(&Plain, 2, &grid, 1.0, opts).unwrap();
        let b = constructive_prior(&PoissonModel::default(), 2, &grid, 1.0, opts).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn enumeration_overflow_is_reported() {
        struct Plain;
        impl DiscreteModel for Plain {
            fn log_probability(&self, n: u64, theta: f64) -> f64 {
                ln_poisson(n, theta)
            }
        }
        let prior = DensityGrid::normalized_from(linspace(0.5, 3.0, 21), vec![1.0; 21]).unwrap();
        let r = expected_intrinsic_information(&Plain, &prior, 6, EnumerationConfig { bound: 1000 });
        assert!(matches!(r, Err(Error::EnumerationOverflow { .. })));
    }

    #[test]
    fn constructive_anchor_is_one() {
        let grid = linspace(0.5, 5.0, 10);
        let g = constructive_prior(&PoissonModel::default(), 5, &grid, 1.0, ConstructiveOptions::default()).unwrap();
        assert_eq!(g.values()[1], 1.0);
    }
}

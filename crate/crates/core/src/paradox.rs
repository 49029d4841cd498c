//! The two-observation normal model and its marginalization paradox.
//!
//! With prior 1/σ the joint posterior of (μ, σ) yields a θ = μ/σ marginal
//! that depends on the data only through t = √2·x̄/s, yet no prior on θ alone
//! turns the sampling density of t into that marginal. Treating θ as the
//! parameter of interest gives the prior 1/(σ√(1+θ²/2)) instead.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_real_line, QuadConfig};
use crate::specfun::erf;

/// Range of u in the substitution σ = c·e^u.
const LOG_SIGMA_HALF_WIDTH: f64 = 10.0;

/// Summary statistics of two normal observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSample {
    pub xbar: f64,
    /// Sample standard deviation with the n − 1 divisor.
    pub s: f64,
}

impl NormalSample {
    pub const N: usize = 2;

    pub fn new(xbar: f64, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) || !xbar.is_finite() {
            return Err(Error::domain(
                "NormalSample",
                format!("need finite xbar and s > 0, got ({xbar}, {s})"),
            ));
        }
        Ok(Self { xbar, s })
    }

    /// From two observations.
    pub fn from_observations(x1: f64, x2: f64) -> Result<Self> {
        let xbar = 0.5 * (x1 + x2);
        let s = (x1 - x2).abs() / SQRT_2;
        Self::new(xbar, s)
    }

    /// t = √2·x̄/s.
    pub fn t(&self) -> f64 {
        SQRT_2 * self.xbar / self.s
    }
}

/// Joint posterior density of (μ, σ) under the prior 1/σ.
pub fn mu_sigma_posterior(sample: &NormalSample, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(
            "mu_sigma_posterior",
            format!("sigma {sigma} must be positive"),
        ));
    }
    Ok(mu_sigma_unchecked(sample, mu, sigma))
}

fn mu_sigma_unchecked(sample: &NormalSample, mu: f64, sigma: f64) -> f64 {
    let r = sample.s / sigma;
    let d = (mu - sample.xbar) / sigma;
    SQRT_2 * sample.s / (PI * sigma.powi(3)) * (-0.5 * r * r - d * d).exp()
}

fn sigma_config() -> QuadConfig {
    QuadConfig::new(1e-14, 1e-11)
}

/// ∫₀^∞ g(σ) dσ through σ = c·e^u, u ∈ [−10, 10], for a scale c near the bulk of g.
fn integrate_over_sigma(c: f64, mut g: impl FnMut(f64) -> f64) -> Result<f64> {
    let r = integrate(
        |u: f64| {
            let sigma = c * u.exp();
            g(sigma) * sigma
        },
        -LOG_SIGMA_HALF_WIDTH,
        LOG_SIGMA_HALF_WIDTH,
        sigma_config(),
    )?;
    Ok(r.value)
}

/// Peak σ of the θ-marginal integrands at fixed θ.
///
/// In v = 1/σ both integrands behave like v² exp(−A v² + 2θx̄ v) with
/// A = s²/2 + x̄², maximized at v = (θx̄ + √((θx̄)² + 4A)) / (2A). For large
/// |θ| the peak is narrow in ln σ, so the quadrature must be centred on it.
fn theta_scale(sample: &NormalSample, theta: f64) -> f64 {
    let a = 0.5 * sample.s * sample.s + sample.xbar * sample.xbar;
    let b = theta * sample.xbar;
    let v = if b >= 0.0 {
        (b + (b * b + 4.0 * a).sqrt()) / (2.0 * a)
    } else {
        // Same root, written without cancellation.
        2.0 / ((b * b + 4.0 * a).sqrt() - b)
    };
    1.0 / v
}

/// μ-marginal of the joint posterior, by quadrature over σ.
pub fn mu_marginal(sample: &NormalSample, mu: f64) -> Result<f64> {
    let d = mu - sample.xbar;
    let scale = (0.5 * sample.s * sample.s + d * d).sqrt();
    integrate_over_sigma(scale, |sigma| mu_sigma_unchecked(sample, mu, sigma))
}

/// Cauchy density with the given location and scale.
pub fn cauchy_density(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    1.0 / (PI * scale * (1.0 + z * z))
}

/// θ-marginal of the joint posterior after (μ, σ) → (θ, σ), by quadrature.
pub fn theta_marginal_from_joint(sample: &NormalSample, theta: f64) -> Result<f64> {
    integrate_over_sigma(theta_scale(sample, theta), |sigma| {
        mu_sigma_unchecked(sample, theta * sigma, sigma) * sigma
    })
}

/// Closed-form θ-marginal posterior, a function of t alone.
pub fn theta_posterior(t: f64, theta: f64) -> f64 {
    let q = 1.0 + t * t;
    (-theta * theta / q).exp() / (PI * q).sqrt() * (1.0 + erf(t * theta / q.sqrt()))
}

/// Sampling density of t given θ (noncentral t, one degree of freedom).
pub fn t_sampling_density(t: f64, theta: f64) -> f64 {
    let q = 1.0 + t * t;
    (-theta * theta).exp() / (PI * q)
        + theta * t * (-theta * theta / q).exp() / (PI.sqrt() * q.powf(1.5)) * (1.0 + erf(theta * t / q.sqrt()))
}

/// The prior 1/(σ√(1+θ²/2)) for θ as the parameter of interest (unnormalized).
pub fn theta_reference_prior(theta: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(
            "theta_reference_prior",
            format!("sigma {sigma} must be positive"),
        ));
    }
    Ok(1.0 / (sigma * (1.0 + 0.5 * theta * theta).sqrt()))
}

/// Likelihood of two normal observations in the (θ, σ) parametrization.
pub fn theta_sigma_likelihood(sample: &NormalSample, theta: f64, sigma: f64) -> f64 {
    let r = sample.s / sigma;
    let d = sample.xbar / sigma - theta;
    (-0.5 * r * r - d * d).exp() / (2.0 * PI * sigma * sigma)
}

/// θ posterior under [`theta_reference_prior`], normalized over the real line.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceThetaPosterior {
    sample: NormalSample,
    ln_norm: f64,
}

impl ReferenceThetaPosterior {
    pub fn new(sample: NormalSample) -> Result<Self> {
        let mut err = None;
        let z = integrate_real_line(
            |theta| match Self::unnormalized_at(&sample, theta) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            QuadConfig::new(1e-14, 1e-10),
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Self {
            sample,
            ln_norm: z.value.ln(),
        })
    }

    fn unnormalized_at(sample: &NormalSample, theta: f64) -> Result<f64> {
        let w = 1.0 / (1.0 + 0.5 * theta * theta).sqrt();
        integrate_over_sigma(theta_scale(sample, theta), |sigma| {
            w / sigma * theta_sigma_likelihood(sample, theta, sigma)
        })
    }

    pub fn density(&self, theta: f64) -> Result<f64> {
        Ok((Self::unnormalized_at(&self.sample, theta)?.ln() - self.ln_norm).exp())
    }
}

/// One row of a paradox scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParadoxRow {
    pub theta: f64,
    pub r_t1: f64,
    pub r_t2: f64,
    pub ratio: f64,
}

/// Result of [`paradox_ratio_scan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParadoxScan {
    pub rows: Vec<ParadoxRow>,
    /// max |ratio − median| / median over the rows.
    pub non_constancy: f64,
}

/// Densities below this are treated as underflowed and skipped.
const UNDERFLOW_GUARD: f64 = 1e-280;

/// Scans r(θ,t) = posterior(θ|t)/p(t|θ) at two values of t.
///
/// If some prior g(θ) produced the posterior from the sampling density, r
/// would equal g(θ)/m(t) and the ratio r(θ,t₁)/r(θ,t₂) would not depend on θ.
pub fn paradox_ratio_scan(t1: f64, t2: f64, theta_grid: &[f64]) -> Result<ParadoxScan> {
    paradox_ratio_scan_with(theta_posterior, t_sampling_density, t1, t2, theta_grid)
}

/// [`paradox_ratio_scan`] with caller-supplied posterior and sampling densities,
/// both called as `f(t, θ)`.
pub fn paradox_ratio_scan_with(
    posterior: impl Fn(f64, f64) -> f64,
    sampling: impl Fn(f64, f64) -> f64,
    t1: f64,
    t2: f64,
    theta_grid: &[f64],
) -> Result<ParadoxScan> {
    let mut rows = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let (p1, p2) = (posterior(t1, theta), posterior(t2, theta));
        let (l1, l2) = (sampling(t1, theta), sampling(t2, theta));
        if [p1, p2, l1, l2]
            .iter()
            .any(|v| !(v.abs() > UNDERFLOW_GUARD) || !v.is_finite())
        {
            continue;
        }
        let (r_t1, r_t2) = (p1 / l1, p2 / l2);
        rows.push(ParadoxRow {
            theta,
            r_t1,
            r_t2,
            ratio: r_t1 / r_t2,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidGrid("every theta in the scan underflowed".into()));
    }
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    let median = if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        0.5 * (ratios[mid - 1] + ratios[mid])
    };
    let non_constancy = rows
        .iter()
        .map(|r| (r.ratio - median).abs() / median.abs())
        .fold(0.0, f64::max);
    Ok(ParadoxScan { rows, non_constancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::linspace;

    #[test]
    fn theta_posterior_at_t_zero_is_normal() {
        for &th in &[-1.5f64, 0.0, 0.7] {
            let expect = (-th * th).exp() / PI.sqrt();
            assert!((theta_posterior(0.0, th) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn t_density_at_theta_zero_is_cauchy() {
        for &t in &[-3.0, 0.0, 1.2] {
            assert!((t_sampling_density(t, 0.0) - cauchy_density(t, 0.0, 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_posterior_far_tail_is_smooth() {
        // Here the σ peak at θ = −14 sits near 0.12, far below √(s²/2 + x̄²).
        let post = ReferenceThetaPosterior::new(NormalSample::new(-1.6, 0.3).unwrap()).unwrap();
        let d: Vec<f64> = [-16.0, -14.0, -12.0]
            .iter()
            .map(|&t| post.density(t).unwrap())
            .collect();
        assert!(d[0] > 1e-3, "{d:?}");
        assert!(d[0] < d[1] && d[1] < d[2]);
        assert!(d[1] / d[0] < 4.0 && d[2] / d[1] < 4.0);
    }

    #[test]
    fn sign_symmetry() {
        for &(t, th) in &[(0.5, 1.0), (-2.0, 0.3), (3.0, -1.1)] {
            assert!((t_sampling_density(t, th) - t_sampling_density(-t, -th)).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_prior_values() {
        assert_eq!(theta_reference_prior(0.0, 1.0).unwrap(), 1.0);
        let r = theta_reference_prior(SQRT_2, 1.0).unwrap() / theta_reference_prior(0.0, 1.0).unwrap();
        assert!((r - 1.0 / SQRT_2).abs() < 1e-15);
        assert!(
            (theta_reference_prior(0.4, 2.0).unwrap() * 2.0 - theta_reference_prior(0.4, 1.0).unwrap()).abs() < 1e-15
        );
        assert!(theta_reference_prior(0.0, 0.0).is_err());
    }

    #[test]
    fn joint_symmetric_in_mu() {
        let s = NormalSample::new(0.4, 1.3).unwrap();
        for &d in &[0.1, 0.8, 2.0] {
            let a = mu_sigma_posterior(&s, 0.4 + d, 0.9).unwrap();
            let b = mu_sigma_posterior(&s, 0.4 - d, 0.9).unwrap();
            assert!((a - b).abs() <= 1e-15 * a);
        }
        assert!(mu_sigma_posterior(&s, 0.0, -1.0).is_err());
    }

    #[test]
    fn identical_t_gives_zero_measure() {
        let scan = paradox_ratio_scan(1.0, 1.0, &linspace(-3.0, 3.0, 61)).unwrap();
        assert_eq!(scan.non_constancy, 0.0);
    }

    #[test]
    fn from_observations() {
        let s = NormalSample::from_observations(1.0, 3.0).unwrap();
        assert_eq!(s.xbar, 2.0);
        assert!((s.s - SQRT_2).abs() < 1e-15);
        assert!((s.t() - 2.0).abs() < 1e-15);
    }
}

//! Component-wise Metropolis random-walk sampler over (σ, ε⃗, μ⃗).
//!
//! σ moves on a linear scale and is reflected at zero; ε and μ move on a log
//! scale with the Jacobian folded into the acceptance ratio. Step scales are
//! tuned toward a target acceptance during burn-in and frozen afterwards.

use log::warn;

use crate::counting::ParameterPoint;
use crate::error::{Error, Result};
use crate::specfun::RandomStream;

/// Acceptance rate below which a chain is flagged as stuck.
pub const STUCK_ACCEPTANCE: f64 = 0.01;

/// Sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    /// Total sweeps, burn-in included.
    pub length: usize,
    pub burn_in: usize,
    pub initial_point: ParameterPoint,
    /// One scale per coordinate, ordered σ, ε₁..ε_M, μ₁..μ_M. The ε and μ
    /// scales act on the logarithm. A zero scale holds the coordinate fixed.
    pub step_scales: Vec<f64>,
    /// Sweeps between adaptation updates during burn-in.
    pub adapt_window: usize,
    pub target_acceptance: f64,
}

impl ChainConfig {
    /// Config with the default window (50 sweeps) and target acceptance (0.3).
    pub fn new(length: usize, burn_in: usize, initial_point: ParameterPoint, step_scales: Vec<f64>) -> Self {
        Self {
            length,
            burn_in,
            initial_point,
            step_scales,
            adapt_window: 50,
            target_acceptance: 0.3,
        }
    }

    pub fn dimension(&self) -> usize {
        1 + 2 * self.initial_point.eff_lumi.len()
    }

    fn validate(&self) -> Result<()> {
        self.initial_point.validate()?;
        if self.burn_in >= self.length {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be shorter than the chain length {}",
                self.burn_in, self.length
            )));
        }
        if self.step_scales.len() != self.dimension() {
            return Err(Error::InvalidConfig(format!(
                "{} step scales for {} coordinates",
                self.step_scales.len(),
                self.dimension()
            )));
        }
        if self.step_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(
                "step scales must be finite and nonnegative".into(),
            ));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig("adaptation window must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidConfig("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-coordinate chain diagnostics, computed on the kept samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub acceptance: Vec<f64>,
    pub effective_sample_size: Vec<f64>,
    pub final_step_scales: Vec<f64>,
    pub stuck: bool,
}

/// Kept (post burn-in) samples of a chain.
#[derive(Debug, Clone)]
pub struct Chain {
    dim: usize,
    samples: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Coordinates of sample `i` in the order σ, ε⃗, μ⃗.
    pub fn raw(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.samples[i * self.dim]
    }

    pub fn point(&self, i: usize) -> ParameterPoint {
        let r = self.raw(i);
        let m = (self.dim - 1) / 2;
        ParameterPoint {
            sigma: r[0],
            eff_lumi: r[1..=m].to_vec(),
            background: r[m + 1..].to_vec(),
        }
    }

    /// All values of coordinate `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().skip(j).step_by(self.dim).copied().collect()
    }
}

fn to_point(x: &[f64], m: usize) -> ParameterPoint {
    ParameterPoint {
        sigma: x[0],
        eff_lumi: x[1..=m].to_vec(),
        background: x[m + 1..].to_vec(),
    }
}

/// Unnormalized log density sampled by [`run_chain`].
///
/// Any `FnMut(&ParameterPoint) -> f64` is a target. Targets whose terms
/// separate by coordinate can override [`LogTarget::propose`] to update only
/// what a single-coordinate move changes.
pub trait LogTarget {
    /// Full evaluation. Resets any cached state to `point`.
    fn log_density(&mut self, point: &ParameterPoint) -> f64;

    /// Log density after coordinate `j` of the last accepted point moved to
    /// its value in `point`.
    fn propose(&mut self, point: &ParameterPoint, _j: usize) -> f64 {
        self.log_density(point)
    }

    /// Makes the last proposal the current state.
    fn accept(&mut self) {}
}

impl<F: FnMut(&ParameterPoint) -> f64> LogTarget for F {
    fn log_density(&mut self, point: &ParameterPoint) -> f64 {
        self(point)
    }
}

/// Runs a Metropolis chain on `log_target`.
pub fn run_chain(mut log_target: impl LogTarget, config: &ChainConfig, stream: &mut RandomStream) -> Result<Chain> {
    config.validate()?;
    let dim = config.dimension();
    let m = config.initial_point.eff_lumi.len();
    let mut x: Vec<f64> = std::iter::once(config.initial_point.sigma)
        .chain(config.initial_point.eff_lumi.iter().copied())
        .chain(config.initial_point.background.iter().copied())
        .collect();
    let mut point = to_point(&x, m);
    let mut current = log_target.log_density(&point);
    if !current.is_finite() {
        return Err(Error::ChainInitialization);
    }
    let mut scales = config.step_scales.clone();
    let kept = config.length - config.burn_in;
    let mut samples = Vec::with_capacity(kept * dim);
    let mut window_accepts = vec![0usize; dim];
    let mut kept_accepts = vec![0usize; dim];
    let mut adapt_round = 0usize;

    for sweep in 0..config.length {
        for j in 0..dim {
            let scale = scales[j];
            if scale == 0.0 {
                continue;
            }
            let old = x[j];
            let z = stream.normal();
            let (new, log_jacobian) = if j == 0 {
                ((old + scale * z).abs(), 0.0)
            } else {
                let step = scale * z;
                // Proposal symmetric in log space: the density ratio picks up x'/x.
                (old * step.exp(), step)
            };
            set_coord(&mut point, j, m, new);
            let proposed = log_target.propose(&point, j);
            let log_alpha = proposed - current + log_jacobian;
            let accept = proposed.is_finite() && (log_alpha >= 0.0 || stream.uniform() < log_alpha.exp());
            if accept {
                log_target.accept();
                x[j] = new;
                current = proposed;
                if sweep < config.burn_in {
                    window_accepts[j] += 1;
                } else {
                    kept_accepts[j] += 1;
                }
            } else {
                set_coord(&mut point, j, m, old);
            }
        }
        if sweep < config.burn_in && (sweep + 1) % config.adapt_window == 0 {
            adapt_round += 1;
            let gain = 3.0 / (adapt_round as f64).powf(0.6);
            for j in 0..dim {
                if scales[j] == 0.0 {
                    continue;
                }
                let rate = window_accepts[j] as f64 / config.adapt_window as f64;
                scales[j] *= (gain * (rate - config.target_acceptance)).exp();
                window_accepts[j] = 0;
            }
        }
        if sweep >= config.burn_in {
            samples.extend_from_slice(&x);
        }
    }

    let acceptance: Vec<f64> = kept_accepts.iter().map(|&a| a as f64 / kept as f64).collect();
    let active: Vec<f64> = acceptance
        .iter()
        .zip(&scales)
        .filter(|(_, s)| **s > 0.0)
        .map(|(a, _)| *a)
        .collect();
    let overall = if active.is_empty() {
        1.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    let stuck = overall < STUCK_ACCEPTANCE;
    if stuck {
        warn!("chain acceptance {overall:.4} is below {STUCK_ACCEPTANCE}; the sampler is probably stuck");
    }
    let mut chain = Chain {
        dim,
        samples,
        diagnostics: ChainDiagnostics {
            acceptance,
            effective_sample_size: Vec::new(),
            final_step_scales: scales,
            stuck,
        },
    };
    chain.diagnostics.effective_sample_size = (0..dim).map(|j| effective_sample_size(&chain.column(j))).collect();
    Ok(chain)
}

#[inline]
fn set_coord(point: &mut ParameterPoint, j: usize, m: usize, v: f64) {
    if j == 0 {
        point.sigma = v;
    } else if j <= m {
        point.eff_lumi[j - 1] = v;
    } else {
        point.background[j - 1 - m] = v;
    }
}

/// Effective sample size with Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let autocorr = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut lag = 0;
    let mut previous_pair = f64::INFINITY;
    // Lags beyond this are never reached by a usefully mixing chain.
    let max_lag = (n - 1).min(20_000);
    while lag + 1 < max_lag {
        let pair = if lag == 0 {
            1.0 + autocorr(1)
        } else {
            autocorr(lag) + autocorr(lag + 1)
        };
        if pair <= 0.0 {
            break;
        }
        // Monotone sequence variant: pairs may not increase.
        let pair = pair.min(previous_pair);
        previous_pair = pair;
        sum += pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_target(p: &ParameterPoint) -> f64 {
        // ε ~ Gamma(3, 2), μ ~ Gamma(6, 1.5); σ frozen.
        let (e, m) = (p.eff_lumi[0], p.background[0]);
        2.0 * e.ln() - 2.0 * e + 5.0 * m.ln() - 1.5 * m
    }

    fn config(length: usize) -> ChainConfig {
        ChainConfig::new(
            length,
            length / 10,
            ParameterPoint::single(1.0, 1.0, 1.0).unwrap(),
            vec![0.0, 0.5, 0.5],
        )
    }

    #[test]
    fn gamma_moments() {
        let mut s = RandomStream::new(17);
        let chain = run_chain(gamma_target, &config(110_000), &mut s).unwrap();
        for (j, mean, var) in [(1usize, 1.5, 0.75), (2usize, 4.0, 6.0 / 2.25)] {
            let col = chain.column(j);
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            let ess = chain.diagnostics.effective_sample_size[j];
            let se = (var / ess).sqrt();
            assert!((m - mean).abs() < 3.0 * se, "coord {j}: mean {m} vs {mean} (se {se})");
            assert!((v - var).abs() / var < 0.05, "coord {j}: var {v} vs {var}");
        }
        assert!(chain.column(0).iter().all(|&s| s == 1.0));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = RandomStream::new(5);
            run_chain(gamma_target, &config(2000), &mut s).unwrap().column(1)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn infinite_start_is_rejected() {
        let mut s = RandomStream::new(5);
        let r = run_chain(|_: &ParameterPoint| f64::NEG_INFINITY, &config(100), &mut s);
        assert!(matches!(r, Err(Error::ChainInitialization)));
    }

    #[test]
    fn config_validation() {
        let mut c = config(100);
        c.burn_in = 100;
        let mut s = RandomStream::new(5);
        assert!(run_chain(gamma_target, &c, &mut s).is_err());
        let mut c = config(100);
        c.step_scales = vec![1.0];
        assert!(run_chain(gamma_target, &c, &mut s).is_err());
    }

    #[test]
    fn two_level_occupation() {
        // Piecewise-constant target on σ ∈ [0, 2): weight 1 on [0,1), 3 on [1,2).
        let target = |p: &ParameterPoint| match p.sigma {
            s if s < 1.0 => 0.0,
            s if s < 2.0 => 3f64.ln(),
            _ => f64::NEG_INFINITY,
        };
        let c = ChainConfig::new(
            220_000,
            20_000,
            ParameterPoint::single(0.5, 1.0, 1.0).unwrap(),
            vec![0.7, 0.0, 0.0],
        );
        let mut s = RandomStream::new(99);
        let chain = run_chain(target, &c, &mut s).unwrap();
        let col = chain.column(0);
        let high = col.iter().filter(|&&x| x >= 1.0).count() as f64;
        let frac = high / col.len() as f64;
        let ess = chain.diagnostics.effective_sample_size[0];
        let se = (0.75 * 0.25 / ess).sqrt();
        assert!((frac - 0.75).abs() < 4.0 * se, "fraction {frac} (se {se})");
    }

    #[test]
    fn scales_frozen_after_burn_in() {
        let mut s = RandomStream::new(8);
        let c = config(1000);
        let a = run_chain(gamma_target, &c, &mut s).unwrap();
        let mut longer = c.clone();
        longer.length = 5000;
        longer.burn_in = c.burn_in;
        let mut s = RandomStream::new(8);
        let b = run_chain(gamma_target, &longer, &mut s).unwrap();
        assert_eq!(a.diagnostics.final_step_scales, b.diagnostics.final_step_scales);
    }

    #[test]
    fn ess_of_iid_is_near_n() {
        let mut s = RandomStream::new(4);
        let x: Vec<f64> = (0..20_000).map(|_| s.normal()).collect();
        let ess = effective_sample_size(&x);
        assert!(ess > 15_000.0, "{ess}");
    }
}

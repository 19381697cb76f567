//! Deterministic posterior computation for the normal–normal hierarchical model
//!
//! ```text
//! yᵢ | θᵢ ~ N(θᵢ, σᵢ²),   θᵢ | μ, τ ~ N(μ, τ²),   μ ~ N(0, S),   τ ~ p(τ)
//! ```
//!
//! μ is integrated out analytically: given τ, the marginal likelihood is a
//! Gaussian integral and μ | τ, y ~ N(m(τ), V(τ)). What remains is a
//! one-dimensional posterior for τ, which is discretized by a composite
//! Gauss–Legendre rule in the coordinate w = √(τ / (s₀ + τ)). The squared
//! root absorbs τ^(−1/2) endpoint singularities and the ratio compactifies the
//! heavy right tail of the improper priors.
//!
//! The predictive law of a new study's effect is then an explicit finite
//! mixture of normals, θ_new ~ Σₖ πₖ N(m(τₖ), V(τₖ) + τₖ²), whose CDF is
//! inverted by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::{check_level, IntervalEstimate, IntervalKind};
use crate::model::MetaDataset;
use crate::priors::{BoundPrior, PriorFamily};
use crate::quad;
use crate::special::{self, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Variance S of the N(0, S) prior on μ.
    pub mu_prior_var: f64,
    /// Number of quadrature nodes; rounded up to a multiple of 16.
    pub grid_size: usize,
    /// The grid ends once the posterior density of τ falls below this
    /// fraction of its running peak.
    pub tail_mass_cut: f64,
    /// Relative bisection tolerance for quantiles (in predictive-sd units).
    pub cdf_tolerance: f64,
    /// Lower bound for the grid's upper end, if known in advance.
    pub tau_upper_hint: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mu_prior_var: 10_000.0,
            grid_size: 2048,
            tail_mass_cut: 1e-10,
            cdf_tolerance: 1e-8,
            tau_upper_hint: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_prior_var > 0.0 && self.mu_prior_var.is_finite()) {
            return Err(Error::invalid("mu_prior_var must be positive"));
        }
        if self.grid_size < 64 {
            return Err(Error::invalid(format!("grid_size must be >= 64, got {}", self.grid_size)));
        }
        for (name, v) in [("tail_mass_cut", self.tail_mass_cut), ("cdf_tolerance", self.cdf_tolerance)] {
            if !(v > 0.0 && v < 1e-2) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1e-2), got {v}")));
            }
        }
        if let Some(h) = self.tau_upper_hint {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("tau_upper_hint must be positive"));
            }
        }
        Ok(())
    }
}

/// Quadrature representation of p(τ | y) with the conditional law of μ per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub nodes: Vec<f64>,
    /// Weights for integrals over τ: ∫ f(τ) dτ ≈ Σ quad_weights·f(nodes).
    pub quad_weights: Vec<f64>,
    /// ln p(τ) + ln L(τ) at each node (unnormalized).
    pub log_post: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_var: Vec<f64>,
    /// ln Σ quad_weights·exp(log_post).
    pub log_norm: f64,
    /// Name of the prior, used as the interval method tag.
    pub method: String,
    /// Normalized node masses, quad_weights·exp(log_post − log_norm).
    mass: Vec<f64>,
    cdf_tolerance: f64,
}

/// Posterior moments; `var_pred = var_mu + mean_tau2` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    pub mean_tau2: f64,
    pub var_mu: f64,
    pub var_pred: f64,
}

struct Conditional {
    loglik: f64,
    mean: f64,
    var: f64,
}

fn conditional(data: &MetaDataset, tau: f64, mu_prior_var: f64) -> Conditional {
    let tau2 = tau * tau;
    let mut precision = 1.0 / mu_prior_var;
    let mut sum_y = 0.0;
    let mut sum_log_v = 0.0;
    for s in data.studies() {
        let v = s.variance() + tau2;
        precision += 1.0 / v;
        sum_y += s.effect / v;
        sum_log_v += LN_2PI + v.ln();
    }
    let mean = sum_y / precision;
    // Σyᵢ²/vᵢ − m²P, written as a sum of nonnegative terms to avoid cancellation.
    let quad_form: f64 = data
        .studies()
        .iter()
        .map(|s| (s.effect - mean).powi(2) / (s.variance() + tau2))
        .sum::<f64>()
        + mean * mean / mu_prior_var;
    let loglik = -0.5 * sum_log_v - 0.5 * (mu_prior_var * precision).ln() - 0.5 * quad_form;
    Conditional {
        loglik,
        mean,
        var: 1.0 / precision,
    }
}

/// ln ∫ Πᵢ N(yᵢ; μ, σᵢ² + τ²) N(μ; 0, S) dμ, in closed form.
pub fn marginal_loglik(data: &MetaDataset, tau: f64, mu_prior_var: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be nonnegative, got {tau}")));
    }
    if !(mu_prior_var > 0.0) {
        return Err(Error::invalid("mu_prior_var must be positive"));
    }
    Ok(conditional(data, tau, mu_prior_var).loglik)
}

/// Cap on the grid's upper end, as a multiple of s₀.
pub const TAU_CAP_FACTOR: f64 = 1e6;

fn log_posterior(data: &MetaDataset, prior: &BoundPrior, tau: f64, s: f64) -> f64 {
    prior.log_prior_density(tau).unwrap_or(f64::NAN) + marginal_loglik(data, tau, s).unwrap_or(f64::NAN)
}

/// Expands τ_max geometrically from below s₀ until the posterior density has
/// dropped under `tail_mass_cut` times its running peak.
///
/// Power-law tails such as τ^(−5/2) still hold ~1e-6 of the mass at that
/// point, so expansion continues (up to the cap, without error) until the
/// density on the ln τ scale, τ·p(τ | y), has dropped by the same factor.
fn find_tau_max(data: &MetaDataset, prior: &BoundPrior, config: &EngineConfig) -> Result<f64> {
    let s0 = prior.s0();
    let cap = TAU_CAP_FACTOR * s0;
    let floor = config.tau_upper_hint.unwrap_or(s0).max(s0);
    let log_cut = config.tail_mass_cut.ln();
    let mut peak = f64::NEG_INFINITY;
    let mut peak_log_scale = f64::NEG_INFINITY;
    let mut tau = s0 * 2f64.powi(-20);
    loop {
        let lp = log_posterior(data, prior, tau, config.mu_prior_var);
        if lp.is_nan() {
            return Err(Error::numeric("log posterior is NaN", tau));
        }
        peak = peak.max(lp);
        peak_log_scale = peak_log_scale.max(lp + tau.ln());
        let density_cut = tau >= floor && peak.is_finite() && lp < peak + log_cut;
        if density_cut && lp + tau.ln() < peak_log_scale + log_cut {
            return Ok(tau);
        }
        if tau > cap {
            return if density_cut {
                Ok(tau)
            } else {
                Err(Error::DivergedPosterior {
                    prior: prior.name(),
                    tau_cap: cap,
                })
            };
        }
        tau *= 2.0;
    }
}

pub fn build_posterior_grid(data: &MetaDataset, prior: &BoundPrior, config: &EngineConfig) -> Result<PosteriorGrid> {
    data.require(2, "the posterior grid")?;
    config.validate()?;
    let panels = config.grid_size.div_ceil(quad::GL_POINTS);
    let rule = quad::gauss_legendre();

    // τ(w) and dτ/dw for w ∈ (0, w_max].
    let (w_max, map): (f64, Box<dyn Fn(f64) -> (f64, f64)>) = match prior.family {
        PriorFamily::ProperUniform { hi } => (1.0, Box::new(move |w: f64| (hi * w * w, 2.0 * hi * w))),
        _ => {
            let c = prior.s0();
            let tau_max = find_tau_max(data, prior, config)?;
            let w_max = (tau_max / (c + tau_max)).sqrt();
            (
                w_max,
                Box::new(move |w: f64| {
                    let one_minus = 1.0 - w * w;
                    (c * w * w / one_minus, 2.0 * c * w / (one_minus * one_minus))
                }),
            )
        }
    };

    let total = panels * rule.len();
    let mut nodes = Vec::with_capacity(total);
    let mut quad_weights = Vec::with_capacity(total);
    let mut log_post = Vec::with_capacity(total);
    let mut cond_mean = Vec::with_capacity(total);
    let mut cond_var = Vec::with_capacity(total);
    let h = w_max / panels as f64;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for &(x, wt) in rule {
            let w = mid + 0.5 * h * x;
            let (tau, jac) = map(w);
            if !(tau > 0.0 && tau.is_finite()) {
                continue;
            }
            let cond = conditional(data, tau, config.mu_prior_var);
            let lp = prior.log_prior_density(tau)? + cond.loglik;
            if lp.is_nan() {
                return Err(Error::numeric("log posterior is NaN", tau));
            }
            nodes.push(tau);
            quad_weights.push(0.5 * h * wt * jac);
            log_post.push(lp);
            cond_mean.push(cond.mean);
            cond_var.push(cond.var);
        }
    }
    let log_terms: Vec<f64> = quad_weights.iter().zip(&log_post).map(|(q, lp)| q.ln() + lp).collect();
    let log_norm = log_sum_exp(log_terms.iter().copied());
    if !log_norm.is_finite() {
        return Err(Error::numeric("posterior normalizing constant is not finite", log_norm));
    }
    let mass = log_terms.iter().map(|t| (t - log_norm).exp()).collect();
    Ok(PosteriorGrid {
        nodes,
        quad_weights,
        log_post,
        cond_mean,
        cond_var,
        log_norm,
        method: prior.name(),
        mass,
        cdf_tolerance: config.cdf_tolerance,
    })
}

/// Masses below this are dropped from mixture sums; the total dropped is
/// bounded by grid_size·1e-18.
const NEGLIGIBLE_MASS: f64 = 1e-18;

impl PosteriorGrid {
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    fn components(&self, predictive: bool) -> Vec<(f64, f64, f64)> {
        (0..self.nodes.len())
            .filter(|&k| self.mass[k] > NEGLIGIBLE_MASS)
            .map(|k| {
                let var = if predictive {
                    self.cond_var[k] + self.nodes[k] * self.nodes[k]
                } else {
                    self.cond_var[k]
                };
                (self.mass[k], self.cond_mean[k], var.sqrt())
            })
            .collect()
    }

    pub fn moments(&self) -> PosteriorMoments {
        let mut mean_mu = 0.0;
        let mut second_mu = 0.0;
        let mut mean_tau2 = 0.0;
        for k in 0..self.nodes.len() {
            let m = self.mass[k];
            let t2 = self.nodes[k] * self.nodes[k];
            mean_mu += m * self.cond_mean[k];
            second_mu += m * (self.cond_var[k] + self.cond_mean[k] * self.cond_mean[k]);
            mean_tau2 += m * t2;
        }
        let var_mu = second_mu - mean_mu * mean_mu;
        PosteriorMoments {
            mean_tau2,
            var_mu,
            var_pred: var_mu + mean_tau2,
        }
    }
}

fn mixture_cdf(components: &[(f64, f64, f64)], x: f64) -> f64 {
    let f: f64 = components
        .iter()
        .map(|&(w, m, sd)| w * special::norm_cdf((x - m) / sd))
        .sum();
    f.clamp(0.0, 1.0)
}

/// CDF of θ_new under the discretized posterior predictive mixture.
pub fn predictive_cdf(grid: &PosteriorGrid, x: f64) -> f64 {
    mixture_cdf(&grid.components(true), x)
}

/// CDF of μ | y.
pub fn posterior_mu_cdf(grid: &PosteriorGrid, x: f64) -> f64 {
    mixture_cdf(&grid.components(false), x)
}

fn mixture_quantile(components: &[(f64, f64, f64)], p: f64, sd_scale: f64, tol: f64) -> Result<f64> {
    let centre: f64 = components.iter().map(|&(w, m, _)| w * m).sum();
    let max_sd = components.iter().map(|c| c.2).fold(0.0, f64::max);
    let mut half = 10.0 * max_sd;
    let (mut lo, mut hi);
    let mut expansions = 0;
    loop {
        lo = centre - half;
        hi = centre + half;
        if mixture_cdf(components, lo) <= p && mixture_cdf(components, hi) >= p {
            break;
        }
        expansions += 1;
        if expansions > 60 || !half.is_finite() {
            return Err(Error::numeric("could not bracket the quantile", half));
        }
        half *= 2.0;
    }
    let target_width = tol * sd_scale;
    for _ in 0..400 {
        if hi - lo <= target_width {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if mixture_cdf(components, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::numeric("quantile bisection did not converge", 0.5 * (lo + hi)))
}

fn interval(grid: &PosteriorGrid, level: f64, predictive: bool) -> Result<IntervalEstimate> {
    check_level(level)?;
    let components = grid.components(predictive);
    let moments = grid.moments();
    let sd = if predictive { moments.var_pred } else { moments.var_mu }.sqrt();
    let alpha = 1.0 - level;
    let lower = mixture_quantile(&components, 0.5 * alpha, sd, grid.cdf_tolerance)?;
    let upper = mixture_quantile(&components, 1.0 - 0.5 * alpha, sd, grid.cdf_tolerance)?;
    Ok(IntervalEstimate {
        lower,
        upper: upper.max(lower),
        level,
        method: grid.method.clone(),
        kind: if predictive {
            IntervalKind::Prediction
        } else {
            IntervalKind::Credible
        },
    })
}

/// Equal-tailed posterior predictive interval for θ_new.
pub fn prediction_interval(grid: &PosteriorGrid, level: f64) -> Result<IntervalEstimate> {
    interval(grid, level, true)
}

/// Equal-tailed credible interval for μ.
pub fn credible_interval_mu(grid: &PosteriorGrid, level: f64) -> Result<IntervalEstimate> {
    interval(grid, level, false)
}

pub fn posterior_tau_moments(grid: &PosteriorGrid) -> PosteriorMoments {
    grid.moments()
}

/// Binds `family` to `data`, builds the grid and returns the requested interval.
pub fn bayes_interval(
    data: &MetaDataset,
    family: PriorFamily,
    config: &EngineConfig,
    level: f64,
    kind: IntervalKind,
) -> Result<IntervalEstimate> {
    let prior = crate::priors::bind_prior(family, data)?;
    let grid = build_posterior_grid(data, &prior, config)?;
    match kind {
        IntervalKind::Credible => credible_interval_mu(&grid, level),
        _ => prediction_interval(&grid, level),
    }
}

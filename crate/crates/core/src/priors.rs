//! Heterogeneity priors p(τ).
//!
//! Data-dependent constants (the harmonic mean s₀², the I²-type average σ̂²
//! and the within-study variances) are fixed once per dataset by
//! [`bind_prior`]. Densities are evaluated internally as functions of
//! `ln τ` so that very heavy prior tails (the inverse-gamma priors put a
//! quarter of their mass beyond τ = 1e300) remain representable.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MetaDataset;
use crate::quad;
use crate::special::{self, log_add_exp, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorFamily {
    /// Improper flat prior on τ.
    Uniform,
    /// Improper p(τ) ∝ τᵃ, a > −1.
    Power { a: f64 },
    Jeffreys,
    BergerDeely,
    /// Proper Berger–Deely variant with exponent 3/2 in the denominator.
    Conventional,
    DuMouchel,
    /// Uniform prior on the average shrinkage factor.
    Shrinkage,
    /// Uniform prior on the I²-type ratio τ²/(σ̂² + τ²).
    I2Uniform,
    ProperUniform { hi: f64 },
    /// 1/τ² ~ Gamma(shape, rate).
    InvGamma { shape: f64, rate: f64 },
}

impl PriorFamily {
    pub const fn sqrt() -> Self {
        PriorFamily::Power { a: -0.5 }
    }
    pub const fn proper1() -> Self {
        PriorFamily::ProperUniform { hi: 10.0 }
    }
    pub const fn proper2() -> Self {
        PriorFamily::InvGamma {
            shape: 0.001,
            rate: 0.001,
        }
    }
    pub const fn proper3() -> Self {
        PriorFamily::InvGamma {
            shape: 0.01,
            rate: 0.01,
        }
    }

    /// The eleven reference priors in their conventional order.
    pub fn standard() -> [PriorFamily; 11] {
        [
            PriorFamily::Uniform,
            PriorFamily::sqrt(),
            PriorFamily::Jeffreys,
            PriorFamily::BergerDeely,
            PriorFamily::Conventional,
            PriorFamily::DuMouchel,
            PriorFamily::Shrinkage,
            PriorFamily::I2Uniform,
            PriorFamily::proper1(),
            PriorFamily::proper2(),
            PriorFamily::proper3(),
        ]
    }

    pub fn is_proper(&self) -> bool {
        matches!(
            self,
            PriorFamily::Conventional
                | PriorFamily::DuMouchel
                | PriorFamily::Shrinkage
                | PriorFamily::I2Uniform
                | PriorFamily::ProperUniform { .. }
                | PriorFamily::InvGamma { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorFamily::Power { a } if !(a > -1.0 && a.is_finite()) => {
                Err(Error::invalid(format!("power prior exponent must exceed -1, got {a}")))
            }
            PriorFamily::ProperUniform { hi } if !(hi > 0.0 && hi.is_finite()) => {
                Err(Error::invalid(format!("uniform prior upper bound must be positive, got {hi}")))
            }
            PriorFamily::InvGamma { shape, rate }
                if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) =>
            {
                Err(Error::invalid(format!(
                    "inverse-gamma shape and rate must be positive, got ({shape}, {rate})"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Canonical name, matching the CLI spelling for the eleven reference priors.
    pub fn name(&self) -> String {
        match *self {
            PriorFamily::Uniform => "uniform".into(),
            PriorFamily::Power { a } if a == -0.5 => "sqrt".into(),
            PriorFamily::Power { a } if a == 0.0 => "uniform".into(),
            PriorFamily::Power { a } => format!("power:{a}"),
            PriorFamily::Jeffreys => "jeffreys".into(),
            PriorFamily::BergerDeely => "berger-deely".into(),
            PriorFamily::Conventional => "conventional".into(),
            PriorFamily::DuMouchel => "dumouchel".into(),
            PriorFamily::Shrinkage => "shrinkage".into(),
            PriorFamily::I2Uniform => "i2".into(),
            PriorFamily::ProperUniform { hi } if hi == 10.0 => "proper1".into(),
            PriorFamily::ProperUniform { hi } => format!("uniform-upto:{hi}"),
            PriorFamily::InvGamma { shape, rate } if shape == 0.001 && rate == 0.001 => "proper2".into(),
            PriorFamily::InvGamma { shape, rate } if shape == 0.01 && rate == 0.01 => "proper3".into(),
            PriorFamily::InvGamma { shape, rate } => format!("invgamma:{shape}/{rate}"),
        }
    }
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PriorFamily {
    type Err = Error;

    /// Accepts the eleven reference names plus `power:A`, `uniform-upto:HI`
    /// and `invgamma:SHAPE/RATE`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let family = match s.to_ascii_lowercase().as_str() {
            "uniform" => PriorFamily::Uniform,
            "sqrt" => PriorFamily::sqrt(),
            "jeffreys" => PriorFamily::Jeffreys,
            "berger-deely" => PriorFamily::BergerDeely,
            "conventional" => PriorFamily::Conventional,
            "dumouchel" => PriorFamily::DuMouchel,
            "shrinkage" => PriorFamily::Shrinkage,
            "i2" => PriorFamily::I2Uniform,
            "proper1" => PriorFamily::proper1(),
            "proper2" => PriorFamily::proper2(),
            "proper3" => PriorFamily::proper3(),
            other => {
                let num = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad number {v:?} in prior {s:?}")))
                };
                if let Some(a) = other.strip_prefix("power:") {
                    PriorFamily::Power { a: num(a)? }
                } else if let Some(hi) = other.strip_prefix("uniform-upto:") {
                    PriorFamily::ProperUniform { hi: num(hi)? }
                } else if let Some(rest) = other.strip_prefix("invgamma:") {
                    let (a, b) = rest
                        .split_once('/')
                        .ok_or_else(|| Error::invalid(format!("expected invgamma:SHAPE/RATE, got {s:?}")))?;
                    PriorFamily::InvGamma {
                        shape: num(a)?,
                        rate: num(b)?,
                    }
                } else {
                    return Err(Error::invalid(format!("unknown prior {s:?}")));
                }
            }
        };
        family.validate()?;
        Ok(family)
    }
}

/// A prior with its dataset-derived constants fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPrior {
    pub family: PriorFamily,
    /// Harmonic mean of the within-study variances, n / Σσᵢ⁻².
    pub s0_sq: f64,
    /// (n−1)Σσᵢ⁻² / [(Σσᵢ⁻²)² − Σσᵢ⁻⁴].
    pub sigma_hat_sq: f64,
    /// Within-study variances σᵢ².
    pub sigma_list: Vec<f64>,
    pub proper: bool,
    /// Log normalizing constant, subtracted from the log kernel.
    log_norm: f64,
}

pub fn bind_prior(family: PriorFamily, data: &MetaDataset) -> Result<BoundPrior> {
    data.require(2, "binding a prior")?;
    family.validate()?;
    let sigma_list: Vec<f64> = data.variances().collect();
    let n = sigma_list.len() as f64;
    let s1: f64 = sigma_list.iter().map(|v| 1.0 / v).sum();
    let s2: f64 = sigma_list.iter().map(|v| 1.0 / (v * v)).sum();
    let denom = s1 * s1 - s2;
    if !(denom > 0.0) {
        return Err(Error::numeric("sigma-hat denominator is not positive", denom));
    }
    let mut prior = BoundPrior {
        family,
        s0_sq: n / s1,
        sigma_hat_sq: (n - 1.0) * s1 / denom,
        sigma_list,
        proper: family.is_proper(),
        log_norm: 0.0,
    };
    prior.log_norm = match family {
        PriorFamily::Conventional => {
            let z = prior.integrate_log_kernel(f64::NEG_INFINITY, f64::INFINITY, 1e-14);
            z.ln()
        }
        _ => 0.0,
    };
    Ok(prior)
}

impl BoundPrior {
    pub fn name(&self) -> String {
        self.family.name()
    }

    pub fn s0(&self) -> f64 {
        self.s0_sq.sqrt()
    }

    /// ln p(τ) at τ = e^s, including any normalizing constant.
    fn log_density_ln_tau(&self, s: f64) -> f64 {
        // ln(c + τ²) for τ = e^s, stable for any s.
        let ln_c_plus_tau2 = |c: f64| log_add_exp(c.ln(), 2.0 * s);
        let mean_ln_var = |scale: f64| {
            self.sigma_list.iter().map(|&v| ln_c_plus_tau2(v)).sum::<f64>() * scale / self.sigma_list.len() as f64
        };
        match self.family {
            PriorFamily::Uniform => 0.0,
            PriorFamily::Power { a } => a * s,
            PriorFamily::Jeffreys => {
                s + 0.5 * log_sum_exp(self.sigma_list.iter().map(|&v| -2.0 * ln_c_plus_tau2(v)))
            }
            PriorFamily::BergerDeely => s - mean_ln_var(1.0),
            PriorFamily::Conventional => s - mean_ln_var(1.5) - self.log_norm,
            PriorFamily::DuMouchel => {
                let ln_s0 = 0.5 * self.s0_sq.ln();
                ln_s0 - 2.0 * log_add_exp(ln_s0, s)
            }
            PriorFamily::Shrinkage => LN_2 + self.s0_sq.ln() + s - 2.0 * ln_c_plus_tau2(self.s0_sq),
            PriorFamily::I2Uniform => {
                LN_2 + self.sigma_hat_sq.ln() + s - 2.0 * ln_c_plus_tau2(self.sigma_hat_sq)
            }
            PriorFamily::ProperUniform { hi } => {
                if s <= hi.ln() {
                    -hi.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorFamily::InvGamma { shape, rate } => {
                LN_2 + shape * rate.ln() - special::ln_gamma(shape) - (2.0 * shape + 1.0) * s
                    - rate * (-2.0 * s).exp()
            }
        }
    }

    /// Log density of ln τ at `s = ln τ`, i.e. ln p(e^s) + s. Finite wherever
    /// the density is positive, even when e^s overflows.
    pub fn log_density_of_log_tau(&self, s: f64) -> f64 {
        self.log_density_ln_tau(s) + s
    }

    /// ln p(τ). Improper families return the unnormalized kernel with unit constant.
    pub fn log_prior_density(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be nonnegative, got {tau}")));
        }
        if tau > 0.0 {
            return Ok(self.log_density_ln_tau(tau.ln()));
        }
        Ok(match self.family {
            PriorFamily::Uniform => 0.0,
            PriorFamily::Power { a } if a > 0.0 => f64::NEG_INFINITY,
            PriorFamily::Power { a } if a == 0.0 => 0.0,
            PriorFamily::Power { .. } => f64::INFINITY,
            PriorFamily::DuMouchel => -0.5 * self.s0_sq.ln(),
            PriorFamily::ProperUniform { hi } => -hi.ln(),
            PriorFamily::Jeffreys
            | PriorFamily::BergerDeely
            | PriorFamily::Conventional
            | PriorFamily::Shrinkage
            | PriorFamily::I2Uniform
            | PriorFamily::InvGamma { .. } => f64::NEG_INFINITY,
        })
    }

    /// Prior CDF P(τ' ≤ τ) for proper families.
    pub fn prior_cdf(&self, tau: f64) -> Result<f64> {
        if !self.proper {
            return Err(Error::Unsupported(format!(
                "the {} prior is improper and has no CDF",
                self.name()
            )));
        }
        if !(tau >= 0.0) {
            return Err(Error::invalid(format!("tau must be nonnegative, got {tau}")));
        }
        if tau == 0.0 {
            return Ok(0.0);
        }
        let cdf = match self.family {
            PriorFamily::DuMouchel => {
                let s0 = self.s0();
                tau / (s0 + tau)
            }
            PriorFamily::Shrinkage => ratio_cdf(tau, self.s0_sq),
            PriorFamily::I2Uniform => ratio_cdf(tau, self.sigma_hat_sq),
            PriorFamily::ProperUniform { hi } => (tau / hi).min(1.0),
            PriorFamily::InvGamma { shape, rate } => {
                // P(τ ≤ t) = P(1/τ² ≥ 1/t²) for 1/τ² ~ Gamma(shape, rate).
                special::gamma_q(shape, rate / (tau * tau))
            }
            PriorFamily::Conventional => self.integrate_log_kernel(f64::NEG_INFINITY, tau.ln(), 1e-10),
            _ => unreachable!("improper families rejected above"),
        };
        Ok(cdf.clamp(0.0, 1.0))
    }

    /// ∫ exp(log_density_of_log_tau) over ln τ ∈ [lo, hi]. Infinite limits are
    /// replaced by points 35 e-folds beyond the data scale, where the
    /// Conventional density in ln τ is below e⁻³⁵ of its peak.
    fn integrate_log_kernel(&self, lo: f64, hi: f64, abs_tol: f64) -> f64 {
        let centre = 0.5 * self.s0_sq.ln();
        let lo = if lo.is_finite() { lo } else { centre.min(hi) - 35.0 };
        let hi = if hi.is_finite() { hi } else { centre + 70.0 };
        if hi <= lo {
            return 0.0;
        }
        let (v, _) = quad::integrate(|s| self.log_density_of_log_tau(s).exp(), lo, hi, abs_tol, 2000);
        v
    }
}

fn ratio_cdf(tau: f64, c: f64) -> f64 {
    let t2 = tau * tau;
    if t2.is_infinite() {
        1.0
    } else {
        t2 / (c + t2)
    }
}

/// Average shrinkage factor S₀(τ) = s₀² / (s₀² + τ²).
pub fn shrinkage_factor(prior: &BoundPrior, tau: f64) -> f64 {
    prior.s0_sq / (prior.s0_sq + tau * tau)
}

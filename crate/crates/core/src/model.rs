//! Study-level data and the classical random-effects estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// One study's effect estimate on the analysis scale (log-RR, SMD, ...)
/// with its within-study standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub effect: f64,
    pub std_err: f64,
}

impl Study {
    pub fn new(effect: f64, std_err: f64) -> Result<Self> {
        if !effect.is_finite() {
            return Err(Error::invalid(format!("effect must be finite, got {effect}")));
        }
        if !(std_err.is_finite() && std_err > 0.0) {
            return Err(Error::invalid(format!(
                "standard error must be positive and finite, got {std_err}"
            )));
        }
        Ok(Study { effect, std_err })
    }

    /// Within-study variance σᵢ².
    pub fn variance(&self) -> f64 {
        self.std_err * self.std_err
    }
}

/// An ordered collection of studies. Estimators require at least two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    studies: Vec<Study>,
}

impl MetaDataset {
    pub fn new(studies: Vec<Study>) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::invalid("dataset has no studies"));
        }
        for s in &studies {
            Study::new(s.effect, s.std_err)?;
        }
        Ok(MetaDataset { studies })
    }

    /// Builds a dataset from parallel slices of effects and within-study variances.
    pub fn from_variances(effects: &[f64], variances: &[f64]) -> Result<Self> {
        if effects.len() != variances.len() {
            return Err(Error::invalid("effects and variances differ in length"));
        }
        let studies = effects
            .iter()
            .zip(variances)
            .map(|(&y, &v)| Study::new(y, v.sqrt()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(studies)
    }

    /// Builds a dataset from parallel slices of effects and standard errors.
    pub fn from_std_errs(effects: &[f64], std_errs: &[f64]) -> Result<Self> {
        if effects.len() != std_errs.len() {
            return Err(Error::invalid("effects and standard errors differ in length"));
        }
        let studies = effects
            .iter()
            .zip(std_errs)
            .map(|(&y, &s)| Study::new(y, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(studies)
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn n(&self) -> usize {
        self.studies.len()
    }

    pub fn effects(&self) -> impl Iterator<Item = f64> + '_ {
        self.studies.iter().map(|s| s.effect)
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.studies.iter().map(Study::variance)
    }

    pub(crate) fn require(&self, min: usize, what: &str) -> Result<()> {
        if self.n() < min {
            return Err(Error::invalid(format!(
                "{what} needs at least {min} studies, got {}",
                self.n()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauMethod {
    #[serde(rename = "DL")]
    DerSimonianLaird,
    #[serde(rename = "REML")]
    Reml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityEstimate {
    pub tau2: f64,
    pub method: TauMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub mu_hat: f64,
    pub var_mu_hat: f64,
    pub weights: Vec<f64>,
}

/// Cochran's Q with fixed-effect weights σᵢ⁻².
pub fn cochran_q(data: &MetaDataset) -> Result<f64> {
    data.require(2, "Cochran's Q")?;
    let fixed = pooled_mu(data, 0.0)?;
    let q = data
        .studies()
        .iter()
        .zip(&fixed.weights)
        .map(|(s, w)| w * (s.effect - fixed.mu_hat).powi(2))
        .sum::<f64>();
    Ok(q.max(0.0))
}

/// Upper-tail χ²(n−1) probability of `q`. Q = 0 maps to 1.
pub fn q_test_pvalue(q: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("Q test needs n >= 2, got {n}")));
    }
    if !(q >= 0.0) {
        return Err(Error::invalid(format!("Q must be nonnegative, got {q}")));
    }
    Ok(special::chi2_sf(q, (n - 1) as f64).clamp(0.0, 1.0))
}

/// Higgins' I² = max(0, (Q − (n−1)) / Q), defined as 0 when Q = 0.
pub fn i_squared(data: &MetaDataset) -> Result<f64> {
    let q = cochran_q(data)?;
    if q <= 0.0 {
        return Ok(0.0);
    }
    let df = (data.n() - 1) as f64;
    Ok(((q - df) / q).max(0.0))
}

/// DerSimonian–Laird moment estimator of τ².
pub fn dl_tau2(data: &MetaDataset) -> Result<HeterogeneityEstimate> {
    let q = cochran_q(data)?;
    let (s1, s2) = data.variances().fold((0.0, 0.0), |(a, b), v| (a + 1.0 / v, b + 1.0 / (v * v)));
    let df = (data.n() - 1) as f64;
    let denom = s1 - s2 / s1;
    let tau2 = if denom > 0.0 { ((q - df) / denom).max(0.0) } else { 0.0 };
    Ok(HeterogeneityEstimate {
        tau2,
        method: TauMethod::DerSimonianLaird,
    })
}

/// Inverse-variance pooled mean with weights (σᵢ² + τ²)⁻¹.
pub fn pooled_mu(data: &MetaDataset, tau2: f64) -> Result<PooledEstimate> {
    data.require(2, "pooling")?;
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::invalid(format!("tau2 must be finite and >= 0, got {tau2}")));
    }
    let weights: Vec<f64> = data.variances().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = weights.iter().sum();
    let swy: f64 = weights.iter().zip(data.effects()).map(|(w, y)| w * y).sum();
    let lo = data.effects().fold(f64::INFINITY, f64::min);
    let hi = data.effects().fold(f64::NEG_INFINITY, f64::max);
    Ok(PooledEstimate {
        // Rounding can push a convex combination a few ulps outside the data range.
        mu_hat: (swy / sw).clamp(lo, hi),
        var_mu_hat: 1.0 / sw,
        weights,
    })
}

pub const REML_TOLERANCE: f64 = 1e-10;
pub const REML_MAX_ITER: usize = 200;

/// REML estimate of τ², Newton/Fisher-scoring iteration started at the DL value
/// and clamped at 0.
pub fn reml_tau2(data: &MetaDataset) -> Result<HeterogeneityEstimate> {
    reml_tau2_with(data, REML_MAX_ITER)
}

pub fn reml_tau2_with(data: &MetaDataset, max_iter: usize) -> Result<HeterogeneityEstimate> {
    let mut tau2 = dl_tau2(data)?.tau2;
    for _ in 0..max_iter {
        let weights: Vec<f64> = data.variances().map(|v| 1.0 / (v + tau2)).collect();
        let sw: f64 = weights.iter().sum();
        let sw2: f64 = weights.iter().map(|w| w * w).sum();
        let sw3: f64 = weights.iter().map(|w| w * w * w).sum();
        let mu = weights.iter().zip(data.effects()).map(|(w, y)| w * y).sum::<f64>() / sw;
        // r = P y, the projected residuals.
        let r: Vec<f64> = weights.iter().zip(data.effects()).map(|(w, y)| w * (y - mu)).collect();
        let rr: f64 = r.iter().map(|x| x * x).sum();
        let wrr: f64 = weights.iter().zip(&r).map(|(w, x)| w * x * x).sum();
        let wr: f64 = weights.iter().zip(&r).map(|(w, x)| w * x).sum();
        let tr_p = sw - sw2 / sw;
        let tr_pp = sw2 - 2.0 * sw3 / sw + (sw2 / sw).powi(2);
        let score = 0.5 * (rr - tr_p);
        let expected_info = 0.5 * tr_pp;
        let observed_info = wrr - wr * wr / sw - 0.5 * tr_pp;
        if !(expected_info > 0.0) || !score.is_finite() {
            return Err(Error::numeric("REML information is degenerate", tau2));
        }
        // Newton step where the restricted likelihood is locally concave, scoring step otherwise.
        let info = if observed_info > 0.0 { observed_info } else { expected_info };
        let current = reml_loglik(data, tau2);
        let mut step = score / info;
        let mut next = (tau2 + step).max(0.0);
        for _ in 0..50 {
            if reml_loglik(data, next) >= current - 1e-12 * current.abs().max(1.0) {
                break;
            }
            step *= 0.5;
            next = (tau2 + step).max(0.0);
        }
        let delta = (next - tau2).abs();
        tau2 = next;
        if delta <= REML_TOLERANCE {
            return Ok(HeterogeneityEstimate {
                tau2,
                method: TauMethod::Reml,
            });
        }
    }
    Err(Error::numeric(
        format!("REML did not converge in {max_iter} iterations"),
        tau2,
    ))
}

/// Restricted log-likelihood of τ² (up to an additive constant).
pub fn reml_loglik(data: &MetaDataset, tau2: f64) -> f64 {
    let v: Vec<f64> = data.variances().map(|s| s + tau2).collect();
    let sw: f64 = v.iter().map(|x| 1.0 / x).sum();
    let mu = v.iter().zip(data.effects()).map(|(x, y)| y / x).sum::<f64>() / sw;
    let rss: f64 = v.iter().zip(data.effects()).map(|(x, y)| (y - mu).powi(2) / x).sum();
    -0.5 * (v.iter().map(|x| x.ln()).sum::<f64>() + sw.ln() + rss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobustKind {
    #[serde(rename = "HK")]
    HartungKnapp,
    #[serde(rename = "SJ")]
    SidikJonkman,
}

/// A robust variance of μ̂; `degenerate` is set when every effect is identical
/// and the estimate collapses to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustVariance {
    pub value: f64,
    pub degenerate: bool,
}

/// Hartung–Knapp or Sidik–Jonkman (bias-corrected, sandwich form) variance of μ̂
/// at the supplied τ².
pub fn robust_variance(data: &MetaDataset, tau2: f64, kind: RobustKind) -> Result<RobustVariance> {
    let pooled = pooled_mu(data, tau2)?;
    let n = data.n() as f64;
    let sw: f64 = pooled.weights.iter().sum();
    let first = data.effects().next().unwrap_or_default();
    if data.effects().all(|y| y == first) {
        return Ok(RobustVariance {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = match kind {
        RobustKind::HartungKnapp => {
            let ss: f64 = pooled
                .weights
                .iter()
                .zip(data.effects())
                .map(|(w, y)| w * (y - pooled.mu_hat).powi(2))
                .sum();
            ss / ((n - 1.0) * sw)
        }
        RobustKind::SidikJonkman => {
            let ss: f64 = pooled
                .weights
                .iter()
                .zip(data.effects())
                .map(|(w, y)| w * w * (y - pooled.mu_hat).powi(2))
                .sum();
            ss / (sw * sw) * n / (n - 1.0)
        }
    };
    Ok(RobustVariance {
        value,
        degenerate: value <= 0.0,
    })
}

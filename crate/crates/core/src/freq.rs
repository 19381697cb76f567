//! Frequentist intervals: the HTS plug-in prediction interval (with its
//! Hartung–Knapp and Sidik–Jonkman variants) and the DL Wald interval for μ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, MetaDataset, RobustKind};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Prediction,
    Confidence,
    Credible,
}

impl IntervalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalKind::Prediction => "prediction",
            IntervalKind::Confidence => "confidence",
            IntervalKind::Credible => "credible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage 1 − α.
    pub level: f64,
    pub method: String,
    pub kind: IntervalKind,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level must lie in (0, 1), got {level}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HtsVariant {
    /// τ̂²_DL with the model-based 1/Σŵᵢ variance.
    Dl,
    /// τ̂²_REML with the Hartung–Knapp variance.
    Hk,
    /// τ̂²_REML with the Sidik–Jonkman variance.
    Sj,
}

impl HtsVariant {
    pub fn tag(self) -> &'static str {
        match self {
            HtsVariant::Dl => "hts",
            HtsVariant::Hk => "hts-hk",
            HtsVariant::Sj => "hts-sj",
        }
    }
}

/// Plug-in prediction interval μ̂ ± t_{n−2} √(τ̂² + V̂ar[μ̂]).
pub fn hts_interval(data: &MetaDataset, level: f64, variant: HtsVariant) -> Result<IntervalEstimate> {
    data.require(3, "the HTS interval")?;
    check_level(level)?;
    let (tau2, mu_hat, var_mu) = match variant {
        HtsVariant::Dl => {
            let tau2 = model::dl_tau2(data)?.tau2;
            let pooled = model::pooled_mu(data, tau2)?;
            (tau2, pooled.mu_hat, pooled.var_mu_hat)
        }
        HtsVariant::Hk | HtsVariant::Sj => {
            let kind = if variant == HtsVariant::Hk {
                RobustKind::HartungKnapp
            } else {
                RobustKind::SidikJonkman
            };
            let tau2 = model::reml_tau2(data)?.tau2;
            let pooled = model::pooled_mu(data, tau2)?;
            let var = model::robust_variance(data, tau2, kind)?.value;
            (tau2, pooled.mu_hat, var)
        }
    };
    let df = (data.n() - 2) as f64;
    let t = special::student_t_quantile(0.5 + 0.5 * level, df);
    let half = t * (tau2 + var_mu).sqrt();
    Ok(IntervalEstimate {
        lower: mu_hat - half,
        upper: mu_hat + half,
        level,
        method: variant.tag().to_string(),
        kind: IntervalKind::Prediction,
    })
}

/// Wald confidence interval for μ with DerSimonian–Laird weights.
pub fn wald_ci_mu(data: &MetaDataset, level: f64) -> Result<IntervalEstimate> {
    check_level(level)?;
    let tau2 = model::dl_tau2(data)?.tau2;
    let pooled = model::pooled_mu(data, tau2)?;
    let z = special::norm_quantile(0.5 + 0.5 * level);
    let half = z * pooled.var_mu_hat.sqrt();
    Ok(IntervalEstimate {
        lower: pooled.mu_hat - half,
        upper: pooled.mu_hat + half,
        level,
        method: "wald".to_string(),
        kind: IntervalKind::Confidence,
    })
}

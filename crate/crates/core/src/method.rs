//! Interval methods addressable by name from the CLI and the simulation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayes::{self, EngineConfig};
use crate::error::{Error, Result};
use crate::freq::{self, HtsVariant, IntervalEstimate, IntervalKind};
use crate::model::MetaDataset;
use crate::priors::PriorFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Posterior predictive interval for θ_new under a heterogeneity prior.
    Bayes(PriorFamily),
    /// Posterior credible interval for μ (`credible:<prior>`).
    Credible(PriorFamily),
    Hts(HtsVariant),
    /// DerSimonian–Laird Wald confidence interval for μ.
    Wald,
}

impl Method {
    /// The eleven Bayesian prediction intervals followed by HTS.
    pub fn standard() -> Vec<Method> {
        PriorFamily::standard()
            .into_iter()
            .map(Method::Bayes)
            .chain([Method::Hts(HtsVariant::Dl)])
            .collect()
    }

    /// Whether the interval targets μ rather than a new study's effect.
    pub fn targets_mean(&self) -> bool {
        matches!(self, Method::Credible(_) | Method::Wald)
    }

    pub fn kind(&self) -> IntervalKind {
        match self {
            Method::Bayes(_) | Method::Hts(_) => IntervalKind::Prediction,
            Method::Credible(_) => IntervalKind::Credible,
            Method::Wald => IntervalKind::Confidence,
        }
    }

    pub fn compute(&self, data: &MetaDataset, level: f64, config: &EngineConfig) -> Result<IntervalEstimate> {
        let mut iv = match *self {
            Method::Bayes(f) => bayes::bayes_interval(data, f, config, level, IntervalKind::Prediction)?,
            Method::Credible(f) => bayes::bayes_interval(data, f, config, level, IntervalKind::Credible)?,
            Method::Hts(v) => freq::hts_interval(data, level, v)?,
            Method::Wald => freq::wald_ci_mu(data, level)?,
        };
        iv.method = self.to_string();
        Ok(iv)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Bayes(p) => write!(f, "{p}"),
            Method::Credible(p) => write!(f, "credible:{p}"),
            Method::Hts(v) => f.write_str(v.tag()),
            Method::Wald => f.write_str("wald"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "hts" => Ok(Method::Hts(HtsVariant::Dl)),
            "hts-hk" => Ok(Method::Hts(HtsVariant::Hk)),
            "hts-sj" => Ok(Method::Hts(HtsVariant::Sj)),
            "wald" => Ok(Method::Wald),
            lower => match lower.strip_prefix("credible:") {
                Some(p) => Ok(Method::Credible(p.parse()?)),
                None => Ok(Method::Bayes(lower.parse()?)),
            },
        }
    }
}

/// Parses a comma-separated method list; `all` expands to the standard twelve.
pub fn parse_method_list(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item.eq_ignore_ascii_case("all") {
            out.extend(Method::standard());
        } else {
            out.push(item.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("method list is empty"));
    }
    Ok(out)
}

//! Brute-force reference for the posterior predictive and μ credible intervals.
//!
//! Shares no numerical code with the engine apart from `erfc`: the marginal
//! likelihood is taken from the Sherman–Morrison form of N(0, D + S·11ᵀ),
//! priors are written directly in τ, and the τ posterior is a 10⁶-node
//! trapezoid rule on v = √u, u = τ/(s₀ + τ), over the prior's support.

#![allow(dead_code)]

use metapred::PriorFamily;

pub const NODES: usize = 1_000_000;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub struct Constants {
    pub s0_sq: f64,
    pub sigma_hat_sq: f64,
}

pub fn constants(var: &[f64]) -> Constants {
    let n = var.len() as f64;
    let w1: f64 = var.iter().map(|v| 1.0 / v).sum();
    let w2: f64 = var.iter().map(|v| 1.0 / (v * v)).sum();
    Constants {
        s0_sq: n / w1,
        sigma_hat_sq: (n - 1.0) * w1 / (w1 * w1 - w2),
    }
}

/// Unnormalized ln p(τ); constants cancel in the posterior.
pub fn log_prior(family: PriorFamily, tau: f64, var: &[f64], c: &Constants) -> f64 {
    let n = var.len() as f64;
    let t2 = tau * tau;
    match family {
        PriorFamily::Uniform => 0.0,
        PriorFamily::Power { a } => a * tau.ln(),
        PriorFamily::Jeffreys => 0.5 * var.iter().map(|v| (tau / (v + t2)).powi(2)).sum::<f64>().ln(),
        PriorFamily::BergerDeely => var.iter().map(|v| (tau / (v + t2)).ln()).sum::<f64>() / n,
        PriorFamily::Conventional => var.iter().map(|v| tau.ln() - 1.5 * (v + t2).ln()).sum::<f64>() / n,
        PriorFamily::DuMouchel => {
            let s0 = c.s0_sq.sqrt();
            s0.ln() - 2.0 * (s0 + tau).ln()
        }
        PriorFamily::Shrinkage => (2.0 * c.s0_sq * tau).ln() - 2.0 * (c.s0_sq + t2).ln(),
        PriorFamily::I2Uniform => (2.0 * c.sigma_hat_sq * tau).ln() - 2.0 * (c.sigma_hat_sq + t2).ln(),
        PriorFamily::ProperUniform { hi } => {
            if tau <= hi * (1.0 + 1e-12) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        PriorFamily::InvGamma { shape, rate } => -(2.0 * shape + 1.0) * tau.ln() - rate / t2,
    }
}

/// ln N(y; 0, D + S·11ᵀ) with D = diag(σᵢ² + τ²), plus the conditional
/// mean and variance of μ.
pub fn marginal(y: &[f64], var: &[f64], tau: f64, s: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let mut a = 0.0; // Σ 1/dᵢ
    let mut b = 0.0; // Σ yᵢ/dᵢ
    let mut c = 0.0; // Σ yᵢ²/dᵢ
    let mut log_det_d = 0.0;
    for (yi, vi) in y.iter().zip(var) {
        let d = vi + t2;
        a += 1.0 / d;
        b += yi / d;
        c += yi * yi / d;
        log_det_d += d.ln();
    }
    let k = 1.0 + s * a;
    let quad = c - s * b * b / k;
    let loglik = -0.5 * (y.len() as f64 * LN_2PI + log_det_d + k.ln() + quad);
    (loglik, s * b / k, s / k)
}

pub struct Component {
    pub mass: f64,
    /// Conditional mean of μ given τ.
    pub mean: f64,
    pub tau2: f64,
    /// Reciprocal standard deviations of θ_new and of μ given τ.
    pub inv_sd_pred: f64,
    pub inv_sd_mu: f64,
}

pub struct Posterior {
    pub comps: Vec<Component>,
}

pub fn posterior(y: &[f64], var: &[f64], family: PriorFamily, s: f64) -> Posterior {
    let c = constants(var);
    let s0 = c.s0_sq.sqrt();
    // Bounded priors are integrated over their support only, so the rule
    // never straddles the jump at the upper limit.
    let v_max = match family {
        PriorFamily::ProperUniform { hi } => (hi / (s0 + hi)).sqrt(),
        _ => 1.0,
    };
    let h = v_max / NODES as f64;
    // Endpoints are replaced by points 1e-12 inside, which recovers the
    // finite limits of the integrand at τ = 0 and τ = ∞.
    let mut raw: Vec<(f64, f64, f64, f64)> = (0..=NODES)
        .map(|k| {
            let v = (k as f64 * h).clamp(1e-12, v_max.min(1.0 - 1e-12));
            let u = v * v;
            let tau = s0 * u / (1.0 - u);
            let jac = 2.0 * v * s0 / ((1.0 - u) * (1.0 - u));
            let trap = if k == 0 || k == NODES { 0.5 } else { 1.0 };
            let (ll, m, vm) = marginal(y, var, tau, s);
            let lw = log_prior(family, tau, var, &c) + ll + (trap * jac).ln();
            (lw, m, tau * tau, vm)
        })
        .collect();
    let max = raw.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    for r in raw.iter_mut() {
        r.0 = (r.0 - max).exp();
    }
    let total: f64 = raw.iter().map(|r| r.0).sum();
    let comps = raw
        .into_iter()
        .map(|(w, m, t2, vm)| Component {
            mass: w / total,
            mean: m,
            tau2: t2,
            inv_sd_pred: 1.0 / (vm + t2).sqrt(),
            inv_sd_mu: 1.0 / vm.sqrt(),
        })
        .filter(|c| c.mass > 1e-17)
        .collect();
    Posterior { comps }
}

impl Posterior {
    pub fn cdf(&self, x: f64, predictive: bool) -> f64 {
        self.comps
            .iter()
            .map(|c| c.mass * phi((x - c.mean) * if predictive { c.inv_sd_pred } else { c.inv_sd_mu }))
            .sum()
    }

    pub fn mean_tau2(&self) -> f64 {
        self.comps.iter().map(|c| c.mass * c.tau2).sum()
    }

    /// Posterior mean and variance of μ by the law of total variance.
    pub fn mu_moments(&self) -> (f64, f64) {
        let mean: f64 = self.comps.iter().map(|c| c.mass * c.mean).sum();
        let second: f64 = self.comps.iter().map(|c| c.mass * (c.inv_sd_mu.powi(-2) + c.mean * c.mean)).sum();
        (mean, second - mean * mean)
    }

    /// Bisection for the p-quantile to within 1e-6, starting from a bracket
    /// around `guess`.
    pub fn quantile(&self, p: f64, predictive: bool, guess: f64) -> f64 {
        let mut half = 2e-4;
        let (mut lo, mut hi) = (guess - half, guess + half);
        while self.cdf(lo, predictive) > p {
            half *= 2.0;
            lo = guess - half;
        }
        while self.cdf(hi, predictive) < p {
            half *= 2.0;
            hi = guess + half;
        }
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid, predictive) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

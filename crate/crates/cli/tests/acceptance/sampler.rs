//! Random-walk Metropolis over (μ, ln τ) for the full hierarchical posterior.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle;
use metapred::PriorFamily;

pub struct Chain {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub acceptance: f64,
}

struct Rng(ChaCha8Rng);

impl Rng {
    fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Box–Muller; the second variate is discarded.
    fn normal(&mut self) -> f64 {
        let (u1, u2) = (self.uniform(), self.uniform());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn log_target(y: &[f64], var: &[f64], family: PriorFamily, c: &oracle::Constants, s: f64, mu: f64, ln_tau: f64) -> f64 {
    let tau = ln_tau.exp();
    let t2 = tau * tau;
    let lik: f64 = y
        .iter()
        .zip(var)
        .map(|(yi, vi)| -0.5 * ((vi + t2).ln() + (yi - mu).powi(2) / (vi + t2)))
        .sum();
    oracle::log_prior(family, tau, var, c) + ln_tau + lik - 0.5 * mu * mu / s
}

/// Runs `burn_in + draws` iterations. Step sizes are tuned during burn-in
/// toward ~30% acceptance and frozen afterwards.
pub fn run(y: &[f64], var: &[f64], family: PriorFamily, s: f64, burn_in: usize, draws: usize, seed: u64) -> Chain {
    let c = oracle::constants(var);
    let mut rng = Rng(ChaCha8Rng::seed_from_u64(seed));
    let w_sum: f64 = var.iter().map(|v| 1.0 / v).sum();
    let mut mu = y.iter().zip(var).map(|(yi, vi)| yi / vi).sum::<f64>() / w_sum;
    let mut ln_tau = 0.5 * c.s0_sq.ln();
    let mut lp = log_target(y, var, family, &c, s, mu, ln_tau);
    let mut step = [(1.0 / w_sum).sqrt() * 2.0, 1.0];
    let mut out = Chain {
        mu: Vec::with_capacity(draws),
        tau: Vec::with_capacity(draws),
        acceptance: 0.0,
    };
    let mut accepted = 0usize;
    let mut window = 0usize;
    for it in 0..burn_in + draws {
        let mu_new = mu + step[0] * rng.normal();
        let ln_tau_new = ln_tau + step[1] * rng.normal();
        let lp_new = log_target(y, var, family, &c, s, mu_new, ln_tau_new);
        if rng.uniform().ln() < lp_new - lp {
            mu = mu_new;
            ln_tau = ln_tau_new;
            lp = lp_new;
            window += 1;
            if it >= burn_in {
                accepted += 1;
            }
        }
        if it < burn_in && (it + 1) % 250 == 0 {
            let rate = window as f64 / 250.0;
            let scale = if rate < 0.2 { 0.8 } else if rate > 0.4 { 1.25 } else { 1.0 };
            step[0] *= scale;
            step[1] *= scale;
            window = 0;
        }
        if it >= burn_in {
            out.mu.push(mu);
            out.tau.push(ln_tau.exp());
        }
    }
    out.acceptance = accepted as f64 / draws as f64;
    out
}

/// Quantile of the Rao–Blackwellized predictive mixture Σⱼ N(μⱼ, τⱼ²)/m.
pub fn predictive_quantile(mu: &[f64], tau: &[f64], p: f64) -> f64 {
    let cdf = |x: f64| mu.iter().zip(tau).map(|(m, t)| oracle::phi((x - m) / t)).sum::<f64>() / mu.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while cdf(lo) > p {
        lo *= 2.0;
    }
    while cdf(hi) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Full-chain estimate with a batch-means standard error.
pub fn predictive_quantile_with_se(chain: &Chain, p: f64, batches: usize) -> (f64, f64) {
    let estimate = predictive_quantile(&chain.mu, &chain.tau, p);
    let len = chain.mu.len() / batches;
    let qs: Vec<f64> = (0..batches)
        .map(|b| predictive_quantile(&chain.mu[b * len..(b + 1) * len], &chain.tau[b * len..(b + 1) * len], p))
        .collect();
    let mean = qs.iter().sum::<f64>() / batches as f64;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (estimate, (var / batches as f64).sqrt())
}

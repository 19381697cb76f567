//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails. Per-case detail goes to stderr.

#[path = "../../../core/tests/common/oracle.rs"]
mod oracle;
mod sampler;

use std::process::Command;
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use metapred::bayes::{self, EngineConfig};
use metapred::freq::{self, HtsVariant};
use metapred::model;
use metapred::priors::bind_prior;
use metapred::sim::{self, Scenario, SimConfig};
use metapred::{MetaDataset, Method, PriorFamily};

/// Seed for the desk-scale coverage study. Fixed once; never tuned.
const COVERAGE_SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

/// n ∈ [n_lo, n_hi], effects in [−2, 2], σᵢ² in [0.009, 0.6]; with
/// `equal_var` all studies share one variance.
fn random_datasets(count: usize, n_lo: usize, n_hi: usize, equal_var: bool, seed: u64) -> Vec<MetaDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = n_lo + (rng.next_u64() % (n_hi - n_lo + 1) as u64) as usize;
            let y: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let common = uniform(&mut rng, 0.009, 0.6);
            let v: Vec<f64> = (0..n)
                .map(|_| if equal_var { common } else { uniform(&mut rng, 0.009, 0.6) })
                .collect();
            MetaDataset::from_variances(&y, &v).unwrap()
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let datasets = random_datasets(20, 3, 15, false, 101);
    let cfg = EngineConfig::default();
    let cases: Vec<(usize, PriorFamily)> = (0..datasets.len())
        .flat_map(|d| PriorFamily::standard().into_iter().map(move |f| (d, f)))
        .collect();
    let results: Vec<(usize, PriorFamily, f64)> = cases
        .par_iter()
        .map(|&(d, family)| {
            let data = &datasets[d];
            let y: Vec<f64> = data.effects().collect();
            let v: Vec<f64> = data.variances().collect();
            let prior = bind_prior(family, data).unwrap();
            let grid = bayes::build_posterior_grid(data, &prior, &cfg).unwrap();
            let pi = bayes::prediction_interval(&grid, 0.95).unwrap();
            let ci = bayes::credible_interval_mu(&grid, 0.95).unwrap();
            let post = oracle::posterior(&y, &v, family, cfg.mu_prior_var);
            let worst = [
                (pi.lower, post.quantile(0.025, true, pi.lower)),
                (pi.upper, post.quantile(0.975, true, pi.upper)),
                (ci.lower, post.quantile(0.025, false, ci.lower)),
                (ci.upper, post.quantile(0.975, false, ci.upper)),
            ]
            .iter()
            .map(|(e, o)| (e - o).abs())
            .fold(0.0, f64::max);
            (d, family, worst)
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let worst = results.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
    Outcome {
        pass: worst.2 <= 1e-4 && elapsed <= 300.0,
        detail: format!(
            "{} dataset×prior cases, max |Δ| = {:.1e} (dataset {}, n = {}, {}); {:.0} s",
            results.len(),
            worst.2,
            worst.0,
            datasets[worst.0].n(),
            worst.1.name(),
            elapsed
        ),
    }
}

fn jeffreys_berger_deely() -> Outcome {
    let cfg = EngineConfig::default();
    let mut worst: f64 = 0.0;
    for data in random_datasets(10, 3, 15, true, 202) {
        let ends = |family| {
            let prior = bind_prior(family, &data).unwrap();
            let grid = bayes::build_posterior_grid(&data, &prior, &cfg).unwrap();
            let pi = bayes::prediction_interval(&grid, 0.95).unwrap();
            let ci = bayes::credible_interval_mu(&grid, 0.95).unwrap();
            [pi.lower, pi.upper, ci.lower, ci.upper]
        };
        let (j, b) = (ends(PriorFamily::Jeffreys), ends(PriorFamily::BergerDeely));
        worst = j.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("10 equal-variance datasets, max endpoint |Δ| = {worst:.1e}"),
    }
}

fn variance_decomposition() -> Outcome {
    let cfg = EngineConfig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for data in random_datasets(50, 3, 15, false, 303) {
        for family in PriorFamily::standard() {
            let prior = bind_prior(family, &data).unwrap();
            let grid = bayes::build_posterior_grid(&data, &prior, &cfg).unwrap();
            let moments = bayes::posterior_tau_moments(&grid);
            // Variance of the predictive mixture Σ πₖ N(mₖ, Vₖ + τₖ²), from its raw moments.
            let w = grid.masses();
            let first: f64 = (0..w.len()).map(|k| w[k] * grid.cond_mean[k]).sum();
            let second: f64 = (0..w.len())
                .map(|k| w[k] * (grid.cond_var[k] + grid.nodes[k].powi(2) + grid.cond_mean[k].powi(2)))
                .sum();
            let var_pred = second - first * first;
            let rel = (var_pred - moments.var_mu - moments.mean_tau2).abs() / var_pred;
            let rel_reported = (moments.var_pred - var_pred).abs() / var_pred;
            worst = worst.max(rel).max(rel_reported);
            cases += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("{cases} dataset×prior cases, max relative residual = {worst:.1e}"),
    }
}

fn hts_hand_value() -> Outcome {
    let data = MetaDataset::from_std_errs(&[-2.0, 0.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
    // Re-derivation: equal weights, Q = Σ(yᵢ − ȳ)² = 8, S₁ = 3, S₂ = 3,
    // τ̂² = (Q − 2)/(S₁ − S₂/S₁) = 3, so each wᵢ = 1/4 and Var[μ̂] = 4/3.
    // t₀.₉₇₅ on one degree of freedom is tan(0.475π).
    let tau2: f64 = (8.0 - 2.0) / (3.0 - 3.0 / 3.0);
    let var_mu = 1.0 / (3.0 / (1.0 + tau2));
    let t = (0.475 * std::f64::consts::PI).tan();
    let half = t * (tau2 + var_mu).sqrt();

    let dl = model::dl_tau2(&data).unwrap().tau2;
    let pooled = model::pooled_mu(&data, dl).unwrap();
    let iv = freq::hts_interval(&data, 0.95, HtsVariant::Dl).unwrap();
    let checks = [
        (dl - 3.0).abs() <= 1e-12,
        pooled.mu_hat.abs() <= 1e-12,
        (pooled.var_mu_hat - 4.0 / 3.0).abs() <= 1e-12,
        (iv.upper - half).abs() <= 1e-9 * half && (iv.lower + half).abs() <= 1e-9 * half,
        (half - 12.7062 * (13.0f64 / 3.0).sqrt()).abs() < 1e-3,
        (iv.upper - 26.45).abs() < 5e-3,
    ];
    Outcome {
        pass: checks.iter().all(|&c| c),
        detail: format!(
            "τ̂²_DL = {dl}, μ̂ = {}, Var = {:.12}, interval = [{:.6}, {:.6}] vs re-derived ±{half:.6}",
            pooled.mu_hat, pooled.var_mu_hat, iv.lower, iv.upper
        ),
    }
}

fn coverage_study() -> Outcome {
    let start = Instant::now();
    let bayes_all: Vec<Method> = PriorFamily::standard().into_iter().map(Method::Bayes).collect();
    let hts = Method::Hts(HtsVariant::Dl);
    let b = |f| Method::Bayes(f);
    let parts = [
        (Scenario::new(7, 0.2), vec![hts, b(PriorFamily::Uniform), b(PriorFamily::Jeffreys)]),
        (
            Scenario::new(15, 0.1),
            vec![
                b(PriorFamily::Uniform),
                b(PriorFamily::Jeffreys),
                b(PriorFamily::Conventional),
                b(PriorFamily::DuMouchel),
            ],
        ),
        (Scenario::new(7, 0.01), bayes_all.iter().copied().chain([hts]).collect()),
    ];
    let mut records = Vec::new();
    for (scenario, methods) in parts {
        let cfg = SimConfig {
            scenarios: vec![scenario],
            methods,
            reps: 1000,
            master_seed: COVERAGE_SEED,
            engine: EngineConfig::default(),
        };
        records.extend(sim::run_study(&cfg, rayon::current_num_threads()).unwrap());
    }
    let cov = |n: usize, tau2: f64, m: &str| {
        records
            .iter()
            .find(|r| r.scenario.n == n && r.scenario.tau2 == tau2 && r.method == m)
            .map(|r| r.coverage)
            .unwrap()
    };
    for r in &records {
        eprintln!(
            "  n={:2} tau2={:.2} {:13} coverage {:.3} (se {:.3}) width {:.3} failures {}",
            r.scenario.n, r.scenario.tau2, r.method, r.coverage, r.mc_se, r.mean_width, r.failures
        );
    }
    let mut failed = Vec::new();
    let mut check = |label: String, ok: bool| {
        if !ok {
            failed.push(label);
        }
    };
    // (a) n = 7, τ² = 0.20
    check(format!("5a hts {:.3} < 0.945", cov(7, 0.2, "hts")), cov(7, 0.2, "hts") < 0.945);
    for m in ["uniform", "jeffreys"] {
        check(format!("5a {m} {:.3} >= 0.95", cov(7, 0.2, m)), cov(7, 0.2, m) >= 0.95);
    }
    // (b) n = 15, τ² = 0.10
    for m in ["uniform", "jeffreys", "conventional"] {
        let c = cov(15, 0.1, m);
        check(format!("5b {m} {c:.3} in [0.935, 0.975]"), (0.935..=0.975).contains(&c));
    }
    check(
        format!("5b dumouchel {:.3} < 0.92", cov(15, 0.1, "dumouchel")),
        cov(15, 0.1, "dumouchel") < 0.92,
    );
    // (c) n = 7, τ² = 0.01: a majority of the eleven priors at or above nominal.
    let above = bayes_all.iter().filter(|m| cov(7, 0.01, &m.to_string()) >= 0.95).count();
    check(format!("5c {above}/11 priors >= 0.95"), above * 2 > bayes_all.len());
    let h = cov(7, 0.01, "hts");
    check(format!("5c hts {h:.3} in [0.935, 0.965]"), (0.935..=0.965).contains(&h));

    let elapsed = start.elapsed().as_secs_f64();
    let summary = format!(
        "5a hts {:.3}, uniform {:.3}, jeffreys {:.3}; 5b uniform {:.3}, jeffreys {:.3}, conventional {:.3}, \
         dumouchel {:.3}; 5c {above}/11 priors >= 0.95, hts {h:.3}; {elapsed:.0} s",
        cov(7, 0.2, "hts"),
        cov(7, 0.2, "uniform"),
        cov(7, 0.2, "jeffreys"),
        cov(15, 0.1, "uniform"),
        cov(15, 0.1, "jeffreys"),
        cov(15, 0.1, "conventional"),
        cov(15, 0.1, "dumouchel"),
    );
    Outcome {
        pass: failed.is_empty() && elapsed <= 900.0,
        detail: if failed.is_empty() {
            summary
        } else {
            format!("{summary}; failing: {}", failed.join(", "))
        },
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.cfg");
    std::fs::write(&config, "n = [5, 7]\ntau2 = [0.0, 0.1]\nreps = 40\nseed = 77\nmethods = [all, hts-hk, wald]\n").unwrap();
    let run = |p: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_metapred"))
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--parallelism", p])
            .env_remove("METAPRED_SEED")
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let (one, eight) = (run("1"), run("8"));
    Outcome {
        pass: one == eight && !one.is_empty(),
        detail: format!(
            "simulate at parallelism 1 and 8: {} and {} bytes, {}",
            one.len(),
            eight.len(),
            if one == eight { "identical" } else { "different" }
        ),
    }
}

/// Composite Simpson rule in s = ln τ, split at `breaks`.
fn integrate_log_scale(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], step: f64) -> f64 {
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    cuts.push(hi);
    cuts.windows(2)
        .map(|seg| {
            let m = 2 * ((seg[1] - seg[0]) / (2.0 * step)).ceil() as usize;
            let h = (seg[1] - seg[0]) / m as f64;
            let inner: f64 = (1..m).map(|k| f(seg[0] + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
            // One-sided values at breakpoints, where the integrand may jump.
            let nudge = 1e-12 * seg[0].abs().max(seg[1].abs()).max(1.0);
            h / 3.0 * (inner + f(seg[0] + nudge) + f(seg[1] - nudge))
        })
        .sum()
}

fn proper_normalization() -> Outcome {
    let data = MetaDataset::from_variances(&[0.3, -0.1, 0.8, 0.2, 0.5], &[0.05, 0.2, 0.1, 0.4, 0.3]).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for family in PriorFamily::standard().into_iter().filter(|f| f.is_proper()) {
        let prior = bind_prior(family, &data).unwrap();
        let breaks: Vec<f64> = match family {
            PriorFamily::ProperUniform { hi } => vec![hi.ln()],
            _ => vec![],
        };
        // Mass outside [−40, 16000] in ln τ is below 1e-12 for every family
        // here; the inverse-gamma tails decay like τ^(−2a) with a = 0.001.
        let mass = integrate_log_scale(|s| prior.log_density_of_log_tau(s).exp(), -40.0, 16_000.0, &breaks, 0.005);
        eprintln!("  {:13} ∫ p = {mass:.12}", family.name());
        worst = worst.max((mass - 1.0).abs());
        count += 1;
    }
    let mut median_err: f64 = 0.0;
    for family in [PriorFamily::DuMouchel, PriorFamily::Shrinkage] {
        let prior = bind_prior(family, &data).unwrap();
        median_err = median_err.max((prior.prior_cdf(prior.s0()).unwrap() - 0.5).abs());
    }
    Outcome {
        pass: worst <= 1e-6 && median_err <= 1e-10,
        detail: format!(
            "{count} proper priors, max |∫p − 1| = {worst:.1e}; DuMouchel/Shrinkage |F(s₀) − 1/2| = {median_err:.1e}"
        ),
    }
}

fn sampler_cross_check() -> Outcome {
    let cfg = EngineConfig::default();
    let datasets = random_datasets(5, 5, 12, false, 808);
    let families = [PriorFamily::Uniform, PriorFamily::DuMouchel, PriorFamily::proper2()];
    let cases: Vec<(usize, PriorFamily)> = (0..5).flat_map(|d| families.map(|f| (d, f))).collect();
    let results: Vec<(f64, String)> = cases
        .par_iter()
        .map(|&(d, family)| {
            let data = &datasets[d];
            let y: Vec<f64> = data.effects().collect();
            let v: Vec<f64> = data.variances().collect();
            let pi = bayes::bayes_interval(data, family, &cfg, 0.95, metapred::IntervalKind::Prediction).unwrap();
            let chain = sampler::run(&y, &v, family, cfg.mu_prior_var, 5_000, 50_000, 900 + d as u64);
            let (lo, lo_se) = sampler::predictive_quantile_with_se(&chain, 0.025, 50);
            let (hi, hi_se) = sampler::predictive_quantile_with_se(&chain, 0.975, 50);
            let z = ((pi.lower - lo).abs() / lo_se).max((pi.upper - hi).abs() / hi_se);
            let line = format!(
                "  dataset {d} n={:2} {:10} engine [{:.4}, {:.4}] sampler [{lo:.4} ± {lo_se:.4}, {hi:.4} ± {hi_se:.4}] \
                 acc {:.2} max z {z:.2}",
                data.n(),
                family.name(),
                pi.lower,
                pi.upper,
                chain.acceptance
            );
            (z, line)
        })
        .collect();
    for r in &results {
        eprintln!("{}", r.1);
    }
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    Outcome {
        pass: worst <= 3.0,
        detail: format!("{} dataset×prior cases, max |engine − sampler| = {worst:.2} SE", results.len()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 Jeffreys/Berger-Deely concordance", jeffreys_berger_deely),
        ("3 variance decomposition", variance_decomposition),
        ("4 HTS hand value", hts_hand_value),
        ("5 desk-scale coverage", coverage_study),
        ("6 simulate determinism", determinism),
        ("7 proper-prior normalization", proper_normalization),
        ("8 sampler cross-check", sampler_cross_check),
    ];
    // `cargo test --test acceptance -- 5 7` runs only the listed criteria.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.parse::<u32>().is_ok()).collect();
    let selected: Vec<_> = criteria
        .iter()
        .filter(|(name, _)| only.is_empty() || only.iter().any(|o| name.split(' ').next() == Some(o.as_str())))
        .collect();
    let mut failed = 0;
    for (name, run) in &selected {
        let out = run();
        if !out.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
    }
    println!("acceptance: {} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

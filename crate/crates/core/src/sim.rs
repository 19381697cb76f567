//! Monte-Carlo coverage study.
//!
//! Data follow the Brockwell–Gordon design: σᵢ² = 0.25·χ²(1) truncated to
//! [0.009, 0.6], θᵢ ~ N(μ, τ²), yᵢ ~ N(θᵢ, σᵢ²), and an independent
//! θ_new ~ N(μ, τ²) as the prediction target.
//!
//! Every replication owns a ChaCha8 stream seeded from
//! (master seed, scenario contents, replication index), so results do not
//! depend on thread count or on the order in which scenarios are listed.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::EngineConfig;
use crate::error::{Error, Result};
use crate::method::Method;
use crate::model::MetaDataset;
use crate::special;

pub const SIGMA2_MIN: f64 = 0.009;
pub const SIGMA2_MAX: f64 = 0.6;
pub const DEFAULT_REPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub tau2: f64,
    pub mu: f64,
    pub level: f64,
}

impl Scenario {
    pub fn new(n: usize, tau2: f64) -> Self {
        Scenario {
            n,
            tau2,
            mu: 0.0,
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Config(format!("scenario needs n >= 3, got {}", self.n)));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(Error::Config(format!("tau2 must be >= 0, got {}", self.tau2)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub engine: EngineConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios".into()));
        }
        self.scenarios.iter().try_for_each(Scenario::validate)?;
        self.engine.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub method: String,
    pub scenario: Scenario,
    pub coverage: f64,
    pub mean_width: f64,
    pub mc_se: f64,
    pub reps_used: usize,
    pub failures: usize,
}

/// One method's result on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub covered: bool,
    pub width: f64,
    pub failed: bool,
}

impl Outcome {
    pub fn failure() -> Self {
        Outcome {
            covered: false,
            width: f64::NAN,
            failed: true,
        }
    }
}

/// A failed (method, replication) pair, replayable from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureLog {
    pub method: String,
    pub scenario: Scenario,
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

/// Random stream producing uniforms on (0, 1) and normals by inverse CDF.
#[derive(Debug, Clone)]
pub struct SimStream {
    rng: ChaCha8Rng,
}

impl SimStream {
    pub fn from_seed(seed: u64) -> Self {
        SimStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on the open interval (0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        special::norm_quantile(self.uniform())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of `scenario`.
pub fn replication_seed(master_seed: u64, scenario: &Scenario, rep: usize) -> u64 {
    [
        scenario.n as u64,
        scenario.tau2.to_bits(),
        scenario.mu.to_bits(),
        scenario.level.to_bits(),
        rep as u64,
    ]
    .iter()
    .fold(splitmix64(master_seed), |h, &x| splitmix64(h ^ x))
}

/// σᵢ² = 0.25·X with X ~ χ²(1), redrawn until it falls in [0.009, 0.6].
pub fn draw_within_variances(stream: &mut SimStream, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let z = stream.normal();
            let v = 0.25 * z * z;
            if (SIGMA2_MIN..=SIGMA2_MAX).contains(&v) {
                break v;
            }
        })
        .collect()
}

/// Draws one dataset and an independent θ_new for `scenario`.
pub fn simulate_dataset(stream: &mut SimStream, scenario: &Scenario) -> (MetaDataset, f64) {
    let tau = scenario.tau2.sqrt();
    let variances = draw_within_variances(stream, scenario.n);
    let effects: Vec<f64> = variances
        .iter()
        .map(|v| {
            let theta = scenario.mu + tau * stream.normal();
            theta + v.sqrt() * stream.normal()
        })
        .collect();
    let theta_new = scenario.mu + tau * stream.normal();
    let data = MetaDataset::from_variances(&effects, &variances).expect("simulated studies are valid");
    (data, theta_new)
}

/// Draws one replication from `rep_seed` and evaluates every method on it.
/// Prediction intervals are scored against θ_new; intervals for μ against μ.
pub fn run_replication(
    scenario: &Scenario,
    methods: &[Method],
    rep_seed: u64,
    engine: &EngineConfig,
) -> Vec<std::result::Result<Outcome, Error>> {
    let mut stream = SimStream::from_seed(rep_seed);
    let (data, theta_new) = simulate_dataset(&mut stream, scenario);
    methods
        .iter()
        .map(|m| {
            let iv = m.compute(&data, scenario.level, engine)?;
            let target = if m.targets_mean() { scenario.mu } else { theta_new };
            Ok(Outcome {
                covered: iv.contains(target),
                width: iv.width(),
                failed: false,
            })
        })
        .collect()
}

/// Neumaier-compensated sum in iteration order.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Aggregates per-replication outcomes (in replication order) into a record.
pub fn aggregate(method: &str, scenario: Scenario, outcomes: &[Outcome]) -> CoverageRecord {
    let used: Vec<&Outcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let reps_used = used.len();
    let failures = outcomes.len() - reps_used;
    let (coverage, mean_width) = if reps_used == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let hits = used.iter().filter(|o| o.covered).count();
        (
            hits as f64 / reps_used as f64,
            compensated_sum(used.iter().map(|o| o.width)) / reps_used as f64,
        )
    };
    CoverageRecord {
        method: method.to_string(),
        scenario,
        coverage,
        mean_width,
        mc_se: (coverage * (1.0 - coverage) / reps_used as f64).sqrt(),
        reps_used,
        failures,
    }
}

pub struct StudyOutput {
    pub records: Vec<CoverageRecord>,
    pub failures: Vec<FailureLog>,
}

/// Runs every (scenario, method) cell and returns records in scenario-major,
/// method-minor order.
pub fn run_study(config: &SimConfig, parallelism: usize) -> Result<Vec<CoverageRecord>> {
    Ok(run_study_with_log(config, parallelism)?.records)
}

pub fn run_study_with_log(config: &SimConfig, parallelism: usize) -> Result<StudyOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let tasks: Vec<(usize, usize)> = (0..config.scenarios.len())
        .flat_map(|s| (0..config.reps).map(move |r| (s, r)))
        .collect();
    // Indexed parallel collect preserves task order regardless of scheduling.
    let results: Vec<(u64, Vec<std::result::Result<Outcome, Error>>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| {
                let scenario = &config.scenarios[s];
                let seed = replication_seed(config.master_seed, scenario, r);
                (seed, run_replication(scenario, &config.methods, seed, &config.engine))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (s, scenario) in config.scenarios.iter().enumerate() {
        let block = &results[s * config.reps..(s + 1) * config.reps];
        for (k, method) in config.methods.iter().enumerate() {
            let name = method.to_string();
            let outcomes: Vec<Outcome> = block
                .iter()
                .enumerate()
                .map(|(rep, (seed, per_method))| match &per_method[k] {
                    Ok(o) => *o,
                    Err(e) => {
                        failures.push(FailureLog {
                            method: name.clone(),
                            scenario: *scenario,
                            rep,
                            seed: *seed,
                            message: e.to_string(),
                        });
                        Outcome::failure()
                    }
                })
                .collect();
            records.push(aggregate(&name, *scenario, &outcomes));
        }
    }
    Ok(StudyOutput { records, failures })
}

//! Dataset and config parsing, and the report formats written by the CLI.
//!
//! All CSV output uses fixed six-decimal formatting so that files are
//! byte-stable across runs and platforms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayes::EngineConfig;
use crate::error::{Error, Result};
use crate::freq::{check_level, IntervalEstimate, IntervalKind};
use crate::method::{parse_method_list, Method};
use crate::model::{self, MetaDataset, Study};
use crate::priors::BoundPrior;
use crate::sim::{CoverageRecord, Scenario, SimConfig, DEFAULT_REPS};

const DATASET_COLUMNS: [&str; 3] = ["study", "effect", "se"];

/// Parses `study,effect,se` CSV. Columns may appear in any order; cells are
/// trimmed and CRLF line endings are accepted. Errors carry the file line.
pub fn parse_dataset_csv(text: &[u8]) -> Result<MetaDataset> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        row: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_err = |message: String| Error::Parse { row: 1, message };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect::<Vec<_>>();
    if let Some(unknown) = headers.iter().find(|h| !DATASET_COLUMNS.contains(&h.as_str())) {
        return Err(header_err(format!("unknown column {unknown:?}")));
    }
    let mut index = [0usize; 3];
    for (slot, name) in index.iter_mut().zip(DATASET_COLUMNS) {
        let positions: Vec<usize> = (0..headers.len()).filter(|&i| headers[i] == name).collect();
        match positions[..] {
            [i] => *slot = i,
            [] => return Err(header_err(format!("missing column {name:?}"))),
            _ => return Err(header_err(format!("duplicate column {name:?}"))),
        }
    }

    let mut studies = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |k: usize| -> Result<f64> {
            let raw = &record[index[k]];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("{} is not a finite number: {raw:?}", DATASET_COLUMNS[k]),
                })
        };
        let (effect, se) = (cell(1)?, cell(2)?);
        if se <= 0.0 {
            return Err(Error::Parse {
                row,
                message: format!("se must be positive, got {se}"),
            });
        }
        studies.push(Study { effect, std_err: se });
    }
    if studies.len() < 2 {
        return Err(Error::Parse {
            row: studies.len() + 1,
            message: format!("need at least 2 studies, found {}", studies.len()),
        });
    }
    MetaDataset::new(studies)
}

/// Rounds to 12 decimals so that stepped ranges land on their literal values.
fn round_decimal(x: f64) -> f64 {
    format!("{x:.12}").parse().unwrap_or(x)
}

/// Parses a number list: `[a, b, c]`, `a, b`, a single number, `[lo..hi]`
/// (unit step) or `[lo..hi step s]`. Range endpoints are inclusive.
pub fn parse_number_list(text: &str) -> Result<Vec<f64>> {
    let body = text.trim();
    let body = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .unwrap_or(body)
        .trim();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("not a number: {:?}", s.trim())))
    };
    if let Some((lo, rest)) = body.split_once("..") {
        let (hi, step) = match rest.split_once("step") {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1.0),
        };
        let lo = num(lo)?;
        if step <= 0.0 {
            return Err(Error::Config(format!("range step must be positive in {text:?}")));
        }
        if hi < lo {
            return Err(Error::Config(format!("range end below start in {text:?}")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|k| round_decimal(lo + k as f64 * step)).collect());
    }
    let values = body
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(num)
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config(format!("empty list {text:?}")));
    }
    Ok(values)
}

/// Parses the line-oriented simulation config:
///
/// ```text
/// # comment
/// n       = [7, 15]
/// tau2    = [0.01..0.20 step 0.01]
/// reps    = 1000
/// seed    = 42
/// methods = [all]
/// level   = 0.95
/// ```
///
/// `n` and `tau2` are required; scenarios are their cross product.
pub fn parse_sim_config(text: &[u8]) -> Result<SimConfig> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_ascii_lowercase();
        if !["n", "tau2", "reps", "seed", "methods", "level"].contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
        }
        if entries.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    let required = |k: &str| {
        entries
            .get(k)
            .ok_or_else(|| Error::Config(format!("missing required key {k:?}")))
    };

    let ns = parse_number_list(required("n")?)?
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && v >= 1.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("n must be a positive integer, got {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let tau2s = parse_number_list(required("tau2")?)?;
    if let Some(bad) = tau2s.iter().find(|t| **t < 0.0) {
        return Err(Error::Config(format!("tau2 must be >= 0, got {bad}")));
    }
    let level = match entries.get("level") {
        Some(v) => v
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("level is not a number: {v:?}")))?,
        None => 0.95,
    };
    let reps = match entries.get("reps") {
        Some(v) => v
            .parse::<i64>()
            .map_err(|_| Error::Config(format!("reps is not an integer: {v:?}")))?,
        None => DEFAULT_REPS as i64,
    };
    if reps < 1 {
        return Err(Error::Config(format!("reps must be >= 1, got {reps}")));
    }
    let master_seed = match entries.get("seed") {
        Some(v) => v
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("seed is not a 64-bit unsigned integer: {v:?}")))?,
        None => 0,
    };
    let methods = match entries.get("methods") {
        Some(v) => {
            let inner = v.strip_prefix('[').and_then(|b| b.strip_suffix(']')).unwrap_or(v);
            parse_method_list(inner).map_err(|e| Error::Config(format!("methods: {e}")))?
        }
        None => Method::standard(),
    };

    let scenarios = ns
        .iter()
        .flat_map(|&n| tau2s.iter().map(move |&tau2| Scenario { n, tau2, mu: 0.0, level }))
        .collect();
    let config = SimConfig {
        scenarios,
        methods,
        reps: reps as usize,
        master_seed,
        engine: EngineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    /// DerSimonian–Laird pooled mean and its variance.
    pub mu_hat: f64,
    pub var_mu_hat: f64,
    pub tau2_dl: f64,
    pub i2: f64,
    pub q: f64,
    pub q_pvalue: f64,
}

impl DatasetSummary {
    pub fn compute(data: &MetaDataset) -> Result<Self> {
        let tau2_dl = model::dl_tau2(data)?.tau2;
        let pooled = model::pooled_mu(data, tau2_dl)?;
        let q = model::cochran_q(data)?;
        Ok(DatasetSummary {
            n: data.n(),
            mu_hat: pooled.mu_hat,
            var_mu_hat: pooled.var_mu_hat,
            tau2_dl,
            i2: model::i_squared(data)?,
            q,
            q_pvalue: model::q_test_pvalue(q, data.n())?,
        })
    }
}

/// One requested method: either an interval or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub kind: IntervalKind,
    pub interval: Option<IntervalEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: DatasetSummary,
    pub level: f64,
    pub results: Vec<MethodResult>,
}

impl AnalysisReport {
    pub fn failures(&self) -> impl Iterator<Item = &MethodResult> {
        self.results.iter().filter(|r| r.interval.is_none())
    }
}

/// Runs every method on `data`. Per-method failures are recorded in the report.
pub fn build_analysis_report(
    data: &MetaDataset,
    methods: &[Method],
    level: f64,
    engine: &EngineConfig,
) -> Result<AnalysisReport> {
    check_level(level)?;
    let summary = DatasetSummary::compute(data)?;
    let results = methods
        .iter()
        .map(|m| {
            let (interval, error) = match m.compute(data, level, engine) {
                Ok(iv) => (Some(iv), None),
                Err(e) => (None, Some(e.to_string())),
            };
            MethodResult {
                method: m.to_string(),
                kind: m.kind(),
                interval,
                error,
            }
        })
        .collect();
    Ok(AnalysisReport { summary, level, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::PlotData),
            other => Err(Error::Config(format!("unknown format {other:?} (json, csv, plotdata)"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::PlotData => "plotdata",
        })
    }
}

/// Fixed six-decimal formatting; negative zero prints as zero.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn write_csv<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row.into_iter()).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn emit_analysis_report(report: &AnalysisReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report is serializable");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => write_csv(
            &["method", "kind", "lower", "upper", "level"],
            report.results.iter().map(|r| {
                let (lo, hi) = r
                    .interval
                    .as_ref()
                    .map_or((String::new(), String::new()), |iv| (fmt6(iv.lower), fmt6(iv.upper)));
                vec![r.method.clone(), r.kind.as_str().into(), lo, hi, fmt6(report.level)]
            }),
        ),
        ReportFormat::PlotData => {
            let mut rows: Vec<&MethodResult> = report.results.iter().collect();
            rows.sort_by(|a, b| a.method.cmp(&b.method));
            write_csv(
                &["method", "kind", "lower", "midpoint", "upper", "width", "level", "status"],
                rows.into_iter().map(|r| match &r.interval {
                    Some(iv) => vec![
                        r.method.clone(),
                        r.kind.as_str().into(),
                        fmt6(iv.lower),
                        fmt6(0.5 * (iv.lower + iv.upper)),
                        fmt6(iv.upper),
                        fmt6(iv.width()),
                        fmt6(report.level),
                        "ok".into(),
                    ],
                    None => vec![
                        r.method.clone(),
                        r.kind.as_str().into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        fmt6(report.level),
                        "failed".into(),
                    ],
                }),
            )
        }
    }
}

/// Coverage table sorted by (method, n, tau2). `reps` counts all attempted
/// replications; `failures` of them were excluded from the estimates.
pub fn emit_coverage_table(records: &[CoverageRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::invalid("no coverage records to write"));
    }
    let mut sorted: Vec<&CoverageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.scenario.n.cmp(&b.scenario.n))
            .then(a.scenario.tau2.total_cmp(&b.scenario.tau2))
            .then(a.scenario.level.total_cmp(&b.scenario.level))
    });
    Ok(write_csv(
        &["method", "n", "tau2", "level", "reps", "coverage", "mc_se", "mean_width", "failures"],
        sorted.into_iter().map(|r| {
            vec![
                r.method.clone(),
                r.scenario.n.to_string(),
                fmt6(r.scenario.tau2),
                fmt6(r.scenario.level),
                (r.reps_used + r.failures).to_string(),
                fmt6(r.coverage),
                fmt6(r.mc_se),
                fmt6(r.mean_width),
                r.failures.to_string(),
            ]
        }),
    ))
}

/// Prior density on a τ grid: `tau,log_density,density,cdf`. Improper priors
/// report their unnormalized density and leave `cdf` empty.
pub fn emit_prior_density(prior: &BoundPrior, taus: &[f64]) -> Result<Vec<u8>> {
    if let Some(bad) = taus.iter().find(|t| **t < 0.0) {
        return Err(Error::invalid(format!("tau grid values must be >= 0, got {bad}")));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let log_density = prior.log_prior_density(tau)?;
        let cdf = if prior.proper {
            fmt6(prior.prior_cdf(tau)?)
        } else {
            String::new()
        };
        rows.push(vec![fmt6(tau), fmt6(log_density), fmt6(log_density.exp()), cdf]);
    }
    Ok(write_csv(&["tau", "log_density", "density", "cdf"], rows))
}

//! Monte Carlo experiment runner: scenario, noise, aggregation over one or
//! more orderings, and MSE summaries.
//!
//! Each replication draws fresh noise, runs the aggregator once per
//! configured ordering, averages the per-point predictions across orderings
//! and scores the average against the noiseless signal. Replications run in
//! parallel; results are merged by replication index, so a run is fully
//! determined by its configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{run_on_grid, AggregatorConfig, ExpertSnapshot, PredictionTrace};
use crate::error::{Error, Result};
use crate::experts::ExpertRuleKind;
use crate::lattice::{make_ordering, GridShape, OrderingKind};
use crate::metrics::{global_mse, mse_at, Region};
use crate::signals::{add_noise, generate_signal, NoiseModel, ScenarioId, Signal};

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// `mean` or `vaw:<degree>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSpec {
    Mean,
    Vaw(u32),
}

impl RuleSpec {
    pub fn build(&self, shape: &GridShape) -> ExpertRuleKind {
        match *self {
            RuleSpec::Mean => ExpertRuleKind::Mean,
            RuleSpec::Vaw(m) => ExpertRuleKind::vaw(shape, m),
        }
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSpec::Mean => write!(f, "mean"),
            RuleSpec::Vaw(m) => write!(f, "vaw:{m}"),
        }
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(RuleSpec::Mean);
        }
        s.strip_prefix("vaw:")
            .and_then(|m| m.parse().ok())
            .map(RuleSpec::Vaw)
            .ok_or_else(|| Error::Config(format!("rule must be `mean` or `vaw:<degree>`, got `{s}`")))
    }
}

string_serde!(RuleSpec);

/// `auto` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Auto,
    Value(f64),
}

impl fmt::Display for LambdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSpec::Auto => write!(f, "auto"),
            LambdaSpec::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for LambdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(LambdaSpec::Auto);
        }
        s.parse()
            .map(LambdaSpec::Value)
            .map_err(|_| Error::Config(format!("lambda must be `auto` or a number, got `{s}`")))
    }
}

string_serde!(LambdaSpec);

/// Ordering choice per replication. `random` without a seed draws a fresh
/// permutation for every replication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderingSpec {
    Forward,
    Backward,
    Random(Option<u64>),
}

impl OrderingSpec {
    fn kind(&self, seed: u64, replication: usize) -> OrderingKind {
        match self {
            OrderingSpec::Forward => OrderingKind::Forward,
            OrderingSpec::Backward => OrderingKind::Backward,
            OrderingSpec::Random(Some(seed)) => OrderingKind::Random { seed: *seed },
            OrderingSpec::Random(None) => OrderingKind::Random {
                seed: derive_seed(seed, replication as u64),
            },
        }
    }
}

impl fmt::Display for OrderingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingSpec::Forward => write!(f, "forward"),
            OrderingSpec::Backward => write!(f, "backward"),
            OrderingSpec::Random(None) => write!(f, "random"),
            OrderingSpec::Random(Some(s)) => write!(f, "random:{s}"),
        }
    }
}

impl FromStr for OrderingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(OrderingSpec::Forward),
            "backward" => Ok(OrderingSpec::Backward),
            "random" => Ok(OrderingSpec::Random(None)),
            _ => s
                .strip_prefix("random:")
                .and_then(|v| v.parse().ok())
                .map(|seed| OrderingSpec::Random(Some(seed)))
                .ok_or_else(|| Error::Config(format!("unknown ordering `{s}`"))),
        }
    }
}

string_serde!(OrderingSpec);

/// splitmix64 finalizer over `(seed, salt)`.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitFormat {
    Csv,
    Json,
    Plot,
    Trace,
}

impl FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            "plot" => Ok(EmitFormat::Plot),
            "trace" => Ok(EmitFormat::Trace),
            _ => Err(Error::Config(format!("unknown output format `{s}`"))),
        }
    }
}

fn default_orderings() -> Vec<OrderingSpec> {
    vec![OrderingSpec::Forward, OrderingSpec::Backward]
}

fn default_reps() -> usize {
    50
}

fn default_lambda() -> LambdaSpec {
    LambdaSpec::Auto
}

fn default_rule() -> RuleSpec {
    RuleSpec::Mean
}

fn default_d() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioId,
    #[serde(default = "default_d")]
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    #[serde(default = "default_rule")]
    pub rule: RuleSpec,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaSpec,
    #[serde(default = "default_orderings")]
    pub orderings: Vec<OrderingSpec>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<Region>,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioId, d: usize, n: usize, sigma: f64) -> Self {
        ExperimentConfig {
            scenario,
            d,
            n,
            sigma,
            rule: default_rule(),
            lambda: default_lambda(),
            orderings: default_orderings(),
            reps: default_reps(),
            seed: 0,
            regions: Vec::new(),
        }
    }

    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.d, self.n)
    }

    pub fn validate(&self) -> Result<GridShape> {
        let shape = self.shape()?;
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.orderings.is_empty() {
            return Err(Error::Config("at least one ordering is required".into()));
        }
        if let LambdaSpec::Value(v) = self.lambda {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("lambda must be positive, got {v}")));
            }
        }
        for region in &self.regions {
            region.indices(&shape)?;
        }
        Ok(shape)
    }
}

/// Explicit lambda, or `2 max(|theta*|_inf, sigma sqrt(2 log N))`.
pub fn resolve_lambda(config: &ExperimentConfig, truth: &Signal) -> Result<f64> {
    match config.lambda {
        LambdaSpec::Value(v) if v > 0.0 && v.is_finite() => Ok(v),
        LambdaSpec::Value(v) => Err(Error::Config(format!("lambda must be positive, got {v}"))),
        LambdaSpec::Auto => {
            let big_n = truth.shape.size() as f64;
            let noise_level = config.sigma * (2.0 * big_n.ln()).sqrt();
            let lambda = 2.0 * truth.sup_norm().max(noise_level);
            if lambda > 0.0 {
                Ok(lambda)
            } else {
                Err(Error::Config(
                    "automatic lambda is 0 (zero signal without noise); set it explicitly".into(),
                ))
            }
        }
    }
}

/// One replication's data and ordering-averaged predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub noisy: Signal,
    pub predicted: Vec<f64>,
    pub mse: f64,
    pub region_mse: Vec<f64>,
}

pub fn run_replication(
    config: &ExperimentConfig,
    truth: &Signal,
    lambda: f64,
    replication: usize,
) -> Result<Replication> {
    let shape = truth.shape;
    let rule = config.rule.build(&shape);
    let noisy = add_noise(
        truth,
        &NoiseModel::new(config.sigma, config.seed).with_stream(replication as u64),
    );
    let mut predicted = vec![0.0; shape.size()];
    for spec in &config.orderings {
        let ordering = make_ordering(&shape, spec.kind(config.seed, replication))?;
        let agg = AggregatorConfig::new(shape, rule.clone(), lambda)?;
        let out = run_on_grid(agg, &ordering, &noisy.values)?;
        for (acc, p) in predicted.iter_mut().zip(out.trace.predictions_by_index()) {
            *acc += p;
        }
    }
    let k = config.orderings.len() as f64;
    predicted.iter_mut().for_each(|p| *p /= k);
    let mse = global_mse(&predicted, &truth.values);
    let region_mse = config
        .regions
        .iter()
        .map(|r| mse_at(&predicted, &truth.values, &r.indices(&shape)?))
        .collect::<Result<_>>()?;
    Ok(Replication {
        noisy,
        predicted,
        mse,
        region_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: Region,
    pub size: usize,
    pub mse_mean: f64,
    pub mse_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub lambda: f64,
    pub replication_mse: Vec<f64>,
    pub mse_mean: f64,
    /// Monte Carlo standard error of `mse_mean`.
    pub mse_se: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionSummary>,
    pub seconds: f64,
}

/// `(mean, standard error)` with the `n - 1` sample variance.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let started = Instant::now();
    let shape = config.validate()?;
    let truth = generate_signal(&config.scenario, &shape)?;
    let lambda = resolve_lambda(config, &truth)?;
    let reps: Vec<(f64, Vec<f64>)> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            run_replication(config, &truth, lambda, r)
                .map(|rep| (rep.mse, rep.region_mse))
                .map_err(|e| Error::Replication {
                    replication: r,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let replication_mse: Vec<f64> = reps.iter().map(|(m, _)| *m).collect();
    let (mse_mean, mse_se) = mean_and_se(&replication_mse);
    let regions = config
        .regions
        .iter()
        .enumerate()
        .map(|(k, region)| {
            let per_rep: Vec<f64> = reps.iter().map(|(_, r)| r[k]).collect();
            let (mse_mean, mse_se) = mean_and_se(&per_rep);
            Ok(RegionSummary {
                region: region.clone(),
                size: region.indices(&shape)?.len(),
                mse_mean,
                mse_se,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RunResult {
        config: config.clone(),
        lambda,
        replication_mse,
        mse_mean,
        mse_se,
        regions,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize)]
struct CsvRow {
    scenario: String,
    n: usize,
    d: usize,
    sigma: f64,
    lambda: f64,
    rule: String,
    reps: usize,
    mse_mean: f64,
    mse_se: f64,
    seconds: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One summary row per result.
pub fn write_csv(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in results {
        w.serialize(CsvRow {
            scenario: r.config.scenario.to_string(),
            n: r.config.n,
            d: r.config.d,
            sigma: r.config.sigma,
            lambda: r.lambda,
            rule: r.config.rule.to_string(),
            reps: r.config.reps,
            mse_mean: r.mse_mean,
            mse_se: r.mse_se,
            seconds: r.seconds,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-region rows of every result that requested regions.
pub fn write_region_csv(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "n", "sigma", "rule", "region", "size", "mse_mean", "mse_se"])
        .map_err(|e| csv_error(path, e))?;
    for r in results {
        for row in &r.regions {
            w.write_record([
                r.config.scenario.to_string(),
                r.config.n.to_string(),
                r.config.sigma.to_string(),
                r.config.rule.to_string(),
                row.region.to_string(),
                row.size.to_string(),
                row.mse_mean.to_string(),
                row.mse_se.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, results: &[RunResult]) -> Result<()> {
    let text = serde_json::to_string_pretty(results).expect("results serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Vec<RunResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Per-point dump of replication 0: linear index, coordinates, truth, noisy
/// label and ordering-averaged prediction.
pub fn write_plot(path: &Path, config: &ExperimentConfig) -> Result<()> {
    let shape = config.validate()?;
    let truth = generate_signal(&config.scenario, &shape)?;
    let lambda = resolve_lambda(config, &truth)?;
    let rep = run_replication(config, &truth, lambda, 0)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["index".to_string()];
    header.extend((1..=shape.d()).map(|i| format!("u{i}")));
    header.extend(["truth", "noisy", "predicted"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, p) in shape.points().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(p.coords.iter().map(|c| c.to_string()));
        rec.push(truth.values[i].to_string());
        rec.push(rep.noisy.values[i].to_string());
        rec.push(rep.predicted[i].to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDump {
    pub ordering: String,
    pub lambda: f64,
    pub trace: PredictionTrace,
    pub experts: Vec<ExpertSnapshot>,
}

/// Round-by-round trace of replication 0 under the first configured
/// ordering, with the final expert states.
pub fn replay_trace(config: &ExperimentConfig) -> Result<TraceDump> {
    let shape = config.validate()?;
    let truth = generate_signal(&config.scenario, &shape)?;
    let lambda = resolve_lambda(config, &truth)?;
    let noisy = add_noise(&truth, &NoiseModel::new(config.sigma, config.seed));
    let kind = config.orderings[0].kind(config.seed, 0);
    let ordering = make_ordering(&shape, kind.clone())?;
    let agg = AggregatorConfig::new(shape, config.rule.build(&shape), lambda)?;
    let out = run_on_grid(agg, &ordering, &noisy.values)?;
    Ok(TraceDump {
        ordering: kind.to_string(),
        lambda,
        trace: out.trace,
        experts: out.state.snapshot(),
    })
}

/// Trace rows `t, u1..ud, prediction, label, active`.
pub fn write_trace_csv(path: &Path, trace: &PredictionTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=trace.shape.d()).map(|i| format!("u{i}")));
    header.extend(["prediction", "label", "active"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in &trace.rounds {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.point.coords.iter().map(|c| c.to_string()));
        rec.push(r.prediction.to_string());
        rec.push(r.label.to_string());
        rec.push(r.active.to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cell_stem(c: &ExperimentConfig) -> String {
    format!(
        "{}_d{}_n{}_s{}_{}",
        c.scenario.to_string().replace(['/', ':', '\\'], "_"),
        c.d,
        c.n,
        c.sigma,
        c.rule.to_string().replace(':', "")
    )
}

/// Output location and formats for [`emit_results`].
#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub dir: PathBuf,
    pub formats: Vec<EmitFormat>,
}

/// Writes `results.csv`, `regions.csv`, `results.json`, per-cell
/// `plot_<cell>.csv` and `trace_<cell>.{csv,json}` as requested. Returns the paths
/// written.
pub fn emit_results(results: &[RunResult], options: &EmitOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&options.dir).map_err(|e| Error::io(&options.dir, e))?;
    let mut written = Vec::new();
    for format in &options.formats {
        match format {
            EmitFormat::Csv => {
                let path = options.dir.join("results.csv");
                write_csv(&path, results)?;
                written.push(path);
                if results.iter().any(|r| !r.regions.is_empty()) {
                    let path = options.dir.join("regions.csv");
                    write_region_csv(&path, results)?;
                    written.push(path);
                }
            }
            EmitFormat::Json => {
                let path = options.dir.join("results.json");
                write_json(&path, results)?;
                written.push(path);
            }
            EmitFormat::Plot => {
                for r in results {
                    let path = options.dir.join(format!("plot_{}.csv", cell_stem(&r.config)));
                    write_plot(&path, &r.config)?;
                    written.push(path);
                }
            }
            EmitFormat::Trace => {
                for r in results {
                    let dump = replay_trace(&r.config)?;
                    let stem = cell_stem(&r.config);
                    let csv_path = options.dir.join(format!("trace_{stem}.csv"));
                    write_trace_csv(&csv_path, &dump.trace)?;
                    written.push(csv_path);
                    let json_path = options.dir.join(format!("trace_{stem}.json"));
                    let text = serde_json::to_string(&dump).expect("trace serializes");
                    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
                    written.push(json_path);
                }
            }
        }
    }
    Ok(written)
}

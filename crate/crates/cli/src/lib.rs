//! Experiment configuration, dataset ingestion and batch runners behind the
//! `nsaa` binary.

// NaN must fail every validation, so checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use nsaa_core::detection::CandidateGrid;
use nsaa_core::distributions::{make_hard_instance, DemandSequence, HardInstanceConfig, InstanceFamily};
use nsaa_core::harness::{self, RegretReport, Trace};
use nsaa_core::policies::{DemandKind, PolicyParams, PolicySpec};
use nsaa_core::SimRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nsaa_core::Error),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Replay,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub family: Option<InstanceFamily>,
    /// `S` for switch families, `V` for drift families.
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Demand sequence JSON used by `simulate` instead of a hard instance.
    #[serde(default)]
    pub sequence: Option<PathBuf>,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub detect_grid: CandidateGrid,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_budget() -> f64 {
    4.0
}
fn default_h() -> f64 {
    1.0
}
fn default_a() -> f64 {
    1.0
}
fn default_v() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.1
}
fn default_kappa() -> f64 {
    1.0
}
fn default_policies() -> Vec<String> {
    vec!["nsaa".into()]
}
fn default_seeds() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Default critical ratio when neither `b` nor `ratio` is given.
pub const DEFAULT_RATIO: f64 = 0.7;

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        serde_json::from_value(json!({ "experiment": experiment })).expect("defaults deserialize")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fills in `b` and `ratio` and checks every field.
    pub fn resolve(mut self) -> Result<Self> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(CliError::Config(format!("h must be positive, got {}", self.h)));
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(CliError::Config(format!("ratio must lie in (0, 1), got {r}")));
            }
        }
        let (b, r) = match (self.b, self.ratio) {
            (Some(b), Some(r)) => {
                if !(b >= 0.0) || (b / (self.h + b) - r).abs() > 1e-9 {
                    return Err(CliError::Config(format!(
                        "b = {b} is inconsistent with ratio {r} at h = {}",
                        self.h
                    )));
                }
                (b, r)
            }
            (Some(b), None) => {
                if !(b >= 0.0) || !b.is_finite() {
                    return Err(CliError::Config(format!("b must be nonnegative, got {b}")));
                }
                (b, b / (self.h + b))
            }
            (None, r) => {
                let r = r.unwrap_or(DEFAULT_RATIO);
                (r * self.h / (1.0 - r), r)
            }
        };
        self.b = Some(b);
        self.ratio = Some(r);
        if self.seeds == 0 {
            return Err(CliError::Config("seeds must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(CliError::Config("at least one policy is required".into()));
        }
        self.policy_specs()?;
        match self.experiment {
            ExperimentKind::Replay if self.data.is_none() => {
                return Err(CliError::Config("replay needs a `data` path".into()))
            }
            ExperimentKind::Simulate | ExperimentKind::Sweep if self.sequence.is_none() => {
                if self.family.is_none() {
                    return Err(CliError::Config("a `family` or `sequence` is required".into()));
                }
                if self.horizons.is_empty() {
                    return Err(CliError::Config("at least one horizon is required".into()));
                }
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::Sweep && self.horizons.len() < 2 {
            return Err(CliError::Config("a sweep needs at least two horizons".into()));
        }
        Ok(self)
    }

    pub fn policy_specs(&self) -> Result<Vec<PolicySpec>> {
        Ok(self
            .policies
            .iter()
            .map(|p| p.parse())
            .collect::<Result<Vec<PolicySpec>, _>>()?)
    }

    /// Resolved `b`; call after [`ExperimentConfig::resolve`].
    pub fn b(&self) -> f64 {
        self.b.unwrap_or(DEFAULT_RATIO * self.h / (1.0 - DEFAULT_RATIO))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }

    pub fn policy_params(&self, horizon: usize, xbar: f64) -> PolicyParams {
        PolicyParams {
            a: self.a,
            v: self.v,
            delta: self.delta,
            kappa: self.kappa,
            grid: self.detect_grid,
            ..PolicyParams::newsvendor(horizon, xbar, self.h, self.b())
        }
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Reads a one-column (`value`) or two-column (`date,value`) CSV with an
/// optional header, in file order.
pub fn ingest_dataset(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: name.into(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let err = |msg: String| CliError::Parse {
            path: name.into(),
            line,
            msg,
        };
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if !(1..=2).contains(&rec.len()) {
            return Err(err(format!("expected 1 or 2 columns, found {}", rec.len())));
        }
        match width {
            Some(w) if w != rec.len() => return Err(err(format!("expected {w} columns, found {}", rec.len()))),
            _ => width = Some(rec.len()),
        }
        let field = &rec[rec.len() - 1];
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => values.push(v),
            Ok(v) => return Err(err(format!("value {v} is negative or not finite"))),
            Err(_) if values.is_empty() && line == 1 => {} // header
            Err(_) => return Err(err(format!("cannot parse `{field}` as a number"))),
        }
    }
    if values.is_empty() {
        return Err(CliError::Parse {
            path: name.into(),
            line: 0,
            msg: "dataset contains no values".into(),
        });
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// Synthetic runs
// ---------------------------------------------------------------------------

/// One synthetic replication: the sequence, the trace and its regret.
#[derive(Debug, Clone)]
pub struct Replication {
    pub seed: u64,
    pub trace: Trace,
    pub regret: RegretReport,
}

/// Hard instance for `seed`, drawn from a stream separate from demand and
/// policy randomness.
pub fn instance_for_seed(cfg: &HardInstanceConfig, seed: u64) -> nsaa_core::Result<DemandSequence> {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(2);
    Ok(make_hard_instance(cfg, &mut rng)?.sequence)
}

/// Runs `spec` on `seq` with the demand and policy streams of `seed`.
pub fn simulate_one(
    seq: &DemandSequence,
    spec: &PolicySpec,
    params: &PolicyParams,
    seed: u64,
) -> nsaa_core::Result<Replication> {
    let params = PolicyParams {
        horizon: seq.horizon(),
        xbar: seq.xbar(),
        demand: if seq.is_discrete() {
            DemandKind::Discrete
        } else {
            DemandKind::Continuous
        },
        ..params.clone()
    };
    let loss = spec.loss(&params)?;
    let mut policy = spec.build(&params, seed)?;
    let trace = harness::run(seq, policy.as_mut(), spec.channel(), &loss, seed)?;
    let regret = harness::dynamic_regret(&trace, seq, &loss)?;
    Ok(Replication { seed, trace, regret })
}

fn file_tag(spec: &PolicySpec) -> String {
    spec.to_string().replace(':', "-")
}

fn sequence_for(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<DemandSequence> {
    if let Some(path) = &cfg.sequence {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        return Ok(DemandSequence::from_json(&text)?);
    }
    let family = cfg.family.ok_or_else(|| CliError::Config("missing `family`".into()))?;
    let inst = HardInstanceConfig {
        family,
        horizon,
        budget: cfg.budget,
        epsilon: cfg.epsilon,
        clamp: true,
    };
    Ok(instance_for_seed(&inst, seed)?)
}

/// Every replication of one policy at one horizon.
type PolicyRuns = (PolicySpec, Vec<Replication>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub horizon: usize,
    pub mean_regret: f64,
    pub std_error: f64,
    pub runs: usize,
}

/// Mean cumulative regret per (horizon, policy); optionally keeps every
/// replication for CSV output.
fn synthetic_grid(cfg: &ExperimentConfig, keep: bool) -> Result<(Vec<PolicySummary>, Vec<PolicyRuns>)> {
    let specs = cfg.policy_specs()?;
    let horizons: Vec<usize> = if cfg.sequence.is_some() {
        vec![sequence_for(cfg, 0, 0)?.horizon()]
    } else {
        cfg.horizons.clone()
    };
    let seeds = cfg.seed_list();
    let mut summaries = Vec::new();
    let mut kept = Vec::new();
    for &horizon in &horizons {
        for spec in &specs {
            let reps = harness::replicate(&seeds, |seed| {
                let seq =
                    sequence_for(cfg, horizon, seed).map_err(|e| nsaa_core::Error::InvalidParameter(e.to_string()))?;
                let params = cfg.policy_params(seq.horizon(), seq.xbar());
                simulate_one(&seq, spec, &params, seed)
            })?;
            let totals: Vec<f64> = reps.iter().map(|r| r.regret.total()).collect();
            let (mean, se) = harness::mean_stderr(&totals);
            summaries.push(PolicySummary {
                policy: spec.to_string(),
                horizon,
                mean_regret: mean,
                std_error: se,
                runs: totals.len(),
            });
            if keep {
                kept.push((spec.clone(), reps));
            }
        }
    }
    Ok((summaries, kept))
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(io_err(path))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(io_err(path))
}

/// Runs the experiment and writes its outputs under `cfg.out`. Returns the
/// summary JSON that was written.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<Value> {
    let cfg = cfg.resolve()?;
    match cfg.experiment {
        ExperimentKind::Simulate => simulate(&cfg),
        ExperimentKind::Replay => replay(&cfg),
        ExperimentKind::Sweep => sweep(&cfg),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<Value> {
    let (summaries, kept) = synthetic_grid(cfg, true)?;
    create_dir(&cfg.out)?;
    for (spec, reps) in &kept {
        for rep in reps {
            let name = format!("regret_{}_T{}_seed{}.csv", file_tag(spec), rep.trace.len(), rep.seed);
            let path = cfg.out.join(name);
            harness::write_regret_csv(&rep.trace, &rep.regret, open(&path)?)?;
        }
    }
    let summary = json!({
        "config": cfg,
        "seeds": cfg.seed_list(),
        "results": summaries,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn replay(cfg: &ExperimentConfig) -> Result<Value> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("replay needs a `data` path".into()))?;
    let values = ingest_dataset(data)?;
    let params = cfg.policy_params(values.len(), 1.0);
    let (report, traces) = harness::replay(&values, &cfg.policy_specs()?, &params, cfg.base_seed)?;
    create_dir(&cfg.out)?;
    let mut w = csv::Writer::from_writer(open(&cfg.out.join("relative_cost.csv"))?);
    w.write_record(["policy", "cumulative_cost", "relative_cost"])
        .map_err(nsaa_core::Error::from)?;
    for row in &report.rows {
        w.write_record([
            row.policy.clone(),
            row.cumulative_cost.to_string(),
            row.relative_cost.to_string(),
        ])
        .map_err(nsaa_core::Error::from)?;
    }
    w.flush().map_err(io_err(&cfg.out))?;
    for tr in &traces {
        let path = cfg.out.join(format!("trace_{}.csv", tr.policy.replace(':', "-")));
        harness::write_trace_csv(tr, open(&path)?)?;
    }
    let summary = json!({
        "config": cfg,
        "seeds": [cfg.base_seed],
        "report": report,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn sweep(cfg: &ExperimentConfig) -> Result<Value> {
    let (summaries, _) = synthetic_grid(cfg, false)?;
    create_dir(&cfg.out)?;
    let mut w = csv::Writer::from_writer(open(&cfg.out.join("sweep.csv"))?);
    for s in &summaries {
        w.serialize(s).map_err(nsaa_core::Error::from)?;
    }
    w.flush().map_err(io_err(&cfg.out))?;

    let mut slopes = serde_json::Map::new();
    for spec in cfg.policy_specs()? {
        let name = spec.to_string();
        let (hs, rs): (Vec<usize>, Vec<f64>) = summaries
            .iter()
            .filter(|s| s.policy == name)
            .map(|s| (s.horizon, s.mean_regret))
            .unzip();
        slopes.insert(name, json!(harness::slope_fit(&hs, &rs)?));
    }
    let summary = json!({
        "config": cfg,
        "seeds": cfg.seed_list(),
        "results": summaries,
        "slope": slopes,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

//! Simulation driver, regret accounting, dataset replay and scaling fits.

use std::io::{Read, Write};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DemandModel, DemandSequence, ModelKind};
use crate::losses::InnerLoss;
use crate::policies::{Channel, Observation, Policy, PolicyParams, PolicySpec};
use crate::{Error, Result, SimRng};

/// Tolerance below which a negative per-period regret counts as rounding.
pub const REGRET_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceSource {
    Synthetic,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub decision: f64,
    /// What the policy saw: the demand, or the sale on the censored channel.
    pub observed: f64,
    /// The realised demand.
    pub demand: f64,
    pub cost: f64,
    pub epoch: usize,
    pub restart: bool,
    pub active_upper: Option<f64>,
    pub accuracy: Option<f64>,
    pub prefix_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub policy: String,
    pub seed: u64,
    pub channel: Channel,
    pub source: TraceSource,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn decisions(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.decision)
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost).sum()
    }

    /// Epoch index after the last period.
    pub fn final_epoch(&self) -> usize {
        self.records.last().map_or(1, |r| r.epoch + r.restart as usize)
    }

    pub fn restarts(&self) -> usize {
        self.records.iter().filter(|r| r.restart).count()
    }
}

/// Demand RNG of a replication. Policies draw from a different stream of
/// the same seed.
pub fn demand_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Drives `policy` through `seq` on `channel`, drawing demand from `seed`.
pub fn run(
    seq: &DemandSequence,
    policy: &mut dyn Policy,
    channel: Channel,
    loss: &InnerLoss,
    seed: u64,
) -> Result<Trace> {
    check_channel(policy, channel)?;
    let mut rng = demand_rng(seed);
    let demands = (1..=seq.horizon()).map(|t| seq.model(t).sample(&mut rng));
    let discrete: Vec<bool> = seq.models().iter().map(DemandModel::is_discrete).collect();
    drive(
        policy,
        channel,
        loss,
        demands,
        |t| discrete[t - 1],
        seed,
        TraceSource::Synthetic,
    )
}

fn check_channel(policy: &dyn Policy, channel: Channel) -> Result<()> {
    if policy.channel() != channel {
        return Err(Error::Incompatible(format!(
            "policy `{}` expects the {:?} channel, got {:?}",
            policy.name(),
            policy.channel(),
            channel
        )));
    }
    Ok(())
}

fn drive(
    policy: &mut dyn Policy,
    channel: Channel,
    loss: &InnerLoss,
    demands: impl Iterator<Item = f64>,
    is_discrete: impl Fn(usize) -> bool,
    seed: u64,
    source: TraceSource,
) -> Result<Trace> {
    let mut records = Vec::new();
    for (i, d) in demands.enumerate() {
        let t = i + 1;
        let x = policy.decide(t)?;
        let (obs, observed) = match channel {
            Channel::Full => (Observation::Full(d), d),
            Channel::Censored => {
                let sale = x.min(d);
                let lost_sale = is_discrete(t).then_some(d > x);
                (Observation::Censored { sale, lost_sale }, sale)
            }
        };
        let out = policy.observe(t, obs)?;
        records.push(TraceRecord {
            t,
            decision: x,
            observed,
            demand: d,
            cost: loss.eval(x, d),
            epoch: out.epoch,
            restart: out.restart,
            active_upper: out.active_upper,
            accuracy: out.accuracy,
            prefix_violation: out.prefix_violation,
        });
    }
    Ok(Trace {
        policy: policy.name(),
        seed,
        channel,
        source,
        records,
    })
}

/// Runs one replication per seed in parallel; results come back in seed
/// order whatever the scheduling.
pub fn replicate<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub per_period: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub optima: Vec<f64>,
}

impl RegretReport {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Exact minimizer of `E[F(x, D)]` over `[0, xbar]`.
pub fn clairvoyant(model: &DemandModel, loss: &InnerLoss) -> Result<f64> {
    match *loss {
        InnerLoss::LinearNewsvendor { h, b } => model.quantile(b / (h + b)),
        InnerLoss::Quadratic { .. } => Ok(model.mean().clamp(0.0, model.xbar())),
        InnerLoss::Auction { v } => auction_optimum(model, v),
    }
}

/// `(x - v) G(x)` is piecewise quadratic for densities and piecewise linear
/// between atoms, so the minimum sits at a breakpoint or a stationary point.
fn auction_optimum(model: &DemandModel, v: f64) -> Result<f64> {
    let xbar = model.xbar();
    let mut candidates = vec![0.0, xbar];
    let bps = model.breakpoints();
    candidates.extend(bps.iter().copied().filter(|x| (0.0..=xbar).contains(x)));
    if model.kind() == ModelKind::PiecewiseDensity {
        for (w, &d) in bps.windows(2).zip(model.values()) {
            if d > 0.0 {
                let x = (w[0] + v) / 2.0 - model.cdf(w[0]) / (2.0 * d);
                if x > w[0] && x < w[1] && (0.0..=xbar).contains(&x) {
                    candidates.push(x);
                }
            }
        }
    }
    let loss = InnerLoss::Auction { v };
    let mut best = (f64::INFINITY, 0.0);
    candidates.sort_by(f64::total_cmp);
    for x in candidates {
        let c = model.expected_cost(&loss, x)?;
        if c < best.0 {
            best = (c, x);
        }
    }
    Ok(best.1)
}

/// Per-period regret `f_t(x_t) - f_t(x_t*)` in closed form.
pub fn dynamic_regret(trace: &Trace, seq: &DemandSequence, loss: &InnerLoss) -> Result<RegretReport> {
    if trace.source == TraceSource::Replay {
        return Err(Error::Incompatible(
            "replay traces have no ground-truth demand model".into(),
        ));
    }
    if trace.len() != seq.horizon() {
        return Err(Error::Incompatible(format!(
            "trace has {} periods, sequence has {}",
            trace.len(),
            seq.horizon()
        )));
    }
    let mut per_period = Vec::with_capacity(trace.len());
    let mut cumulative = Vec::with_capacity(trace.len());
    let mut optima = Vec::with_capacity(trace.len());
    let mut total = 0.0;
    let mut cached: Option<(usize, f64, f64)> = None;
    for r in &trace.records {
        let model = seq.model(r.t);
        // consecutive identical models share the optimum
        let (opt, opt_cost) = match cached {
            Some((prev, x, c)) if seq.model(prev).same_distribution(model) => (x, c),
            _ => {
                let x = clairvoyant(model, loss)?;
                let c = model.expected_cost(loss, x)?;
                (x, c)
            }
        };
        cached = Some((r.t, opt, opt_cost));
        let regret = model.expected_cost(loss, r.decision)? - opt_cost;
        total += regret;
        per_period.push(regret);
        cumulative.push(total);
        optima.push(opt);
    }
    Ok(RegretReport {
        per_period,
        cumulative,
        optima,
    })
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub policy: String,
    pub cumulative_cost: f64,
    /// Cumulative cost over that of the reference policy.
    pub relative_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub reference: String,
    pub xbar: f64,
    pub rows: Vec<CostRow>,
}

/// Feeds a dataset to each policy as its demand stream.
///
/// The support bound is `1.05 * max(values)`. NSAA on the same stream is the
/// reference for relative costs and is always included.
pub fn replay(
    values: &[f64],
    policies: &[PolicySpec],
    params: &PolicyParams,
    seed: u64,
) -> Result<(CostReport, Vec<Trace>)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("replay needs a nonempty dataset".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dataset value {v} is not a finite nonnegative number"
        )));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let xbar = if max > 0.0 { 1.05 * max } else { 1.0 };
    let params = PolicyParams {
        horizon: values.len(),
        xbar,
        ..params.clone()
    };

    let mut specs = vec![PolicySpec::Nsaa];
    specs.extend(policies.iter().filter(|p| **p != PolicySpec::Nsaa).cloned());

    let mut traces = Vec::with_capacity(specs.len());
    for spec in &specs {
        if spec.channel() != Channel::Full {
            return Err(Error::Incompatible(format!(
                "replay needs full-information policies, got `{spec}`"
            )));
        }
        let loss = spec.loss(&params)?;
        let mut policy = spec.build(&params, seed)?;
        traces.push(drive(
            policy.as_mut(),
            Channel::Full,
            &loss,
            values.iter().copied(),
            |_| false,
            seed,
            TraceSource::Replay,
        )?);
    }
    let reference = traces[0].cumulative_cost();
    let rows = specs
        .iter()
        .zip(&traces)
        .map(|(spec, tr)| {
            let c = tr.cumulative_cost();
            let relative = if c == reference { 1.0 } else { c / reference };
            CostRow {
                policy: spec.to_string(),
                cumulative_cost: c,
                relative_cost: relative,
            }
        })
        .collect();
    Ok((
        CostReport {
            reference: PolicySpec::Nsaa.to_string(),
            xbar,
            rows,
        },
        traces,
    ))
}

// ---------------------------------------------------------------------------
// Scaling fits and summaries
// ---------------------------------------------------------------------------

/// Least-squares slope of `ln(regret)` against `ln(T)`.
pub fn slope_fit(horizons: &[usize], regrets: &[f64]) -> Result<f64> {
    if horizons.len() != regrets.len() {
        return Err(Error::InvalidParameter("horizons and regrets differ in length".into()));
    }
    if horizons.len() < 2 {
        return Err(Error::InvalidParameter(
            "a slope fit needs at least two horizons".into(),
        ));
    }
    if let Some(&r) = regrets.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::NonpositiveRegret(r));
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("a slope fit needs distinct horizons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// One row of a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub policy: String,
    pub decision: f64,
    pub observed: f64,
    pub cost: f64,
    pub epoch: usize,
    pub restart: u8,
}

#[derive(Debug, Serialize)]
struct RegretRow<'a> {
    t: usize,
    policy: &'a str,
    decision: f64,
    observed: f64,
    cost: f64,
    epoch: usize,
    restart: u8,
    regret: f64,
    cum_regret: f64,
}

/// Writes `t,policy,decision,observed,cost,epoch,restart`.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &trace.records {
        w.serialize(TraceRow {
            t: r.t,
            policy: trace.policy.clone(),
            decision: r.decision,
            observed: r.observed,
            cost: r.cost,
            epoch: r.epoch,
            restart: r.restart as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Trace columns followed by `regret,cum_regret`.
pub fn write_regret_csv<W: Write>(trace: &Trace, report: &RegretReport, out: W) -> Result<()> {
    if report.per_period.len() != trace.len() {
        return Err(Error::Incompatible("regret report does not match the trace".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    for (i, r) in trace.records.iter().enumerate() {
        w.serialize(RegretRow {
            t: r.t,
            policy: &trace.policy,
            decision: r.decision,
            observed: r.observed,
            cost: r.cost,
            epoch: r.epoch,
            restart: r.restart as u8,
            regret: report.per_period[i],
            cum_regret: report.cumulative[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the rows written by [`write_trace_csv`].
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

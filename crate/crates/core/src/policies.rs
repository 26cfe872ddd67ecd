//! Online decision policies.
//!
//! Every policy alternates [`Policy::decide`] and [`Policy::observe`] once
//! per period. Restart policies keep only the data of the current epoch and
//! open a new epoch at `t + 1` whenever the restart test fires at `t`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::detection::{detect, CandidateGrid, DetectionConfig};
use crate::empirical::SampleWindow;
use crate::losses::{fractile_rank, ghat, oracle_for, InnerLoss, Oracle, QuantileOracle};
use crate::{Error, Result, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Full,
    Censored,
}

/// What the policy sees at the end of a period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Full(f64),
    /// `sale = min(x_t, D_t)`; `lost_sale` reports `D_t > x_t` when known.
    Censored {
        sale: f64,
        lost_sale: Option<bool>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    /// A new epoch starts at `t + 1`.
    pub restart: bool,
    /// Epoch index that contained period `t`.
    pub epoch: usize,
    /// Upper end of the surviving active set (censored policy only).
    pub active_upper: Option<f64>,
    /// Oracle accuracy used for the decision at `t` (general policy only).
    pub accuracy: Option<f64>,
    /// A full scan found survivors that do not form a prefix of the grid.
    pub prefix_violation: bool,
}

pub trait Policy: Send {
    fn name(&self) -> String;

    fn channel(&self) -> Channel;

    /// Decision for period `t` (1-based).
    fn decide(&mut self, t: usize) -> Result<f64>;

    /// Feeds the observation of period `t`, after [`Policy::decide`].
    fn observe(&mut self, t: usize, obs: Observation) -> Result<StepOutcome>;

    /// Current epoch index, starting at 1.
    fn epoch(&self) -> usize {
        1
    }
}

fn full_value(obs: Observation) -> Result<f64> {
    match obs {
        Observation::Full(d) => Ok(d),
        Observation::Censored { .. } => Err(Error::InvalidObservation(
            "censored observation passed to a full-information policy".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Shared restart bookkeeping
// ---------------------------------------------------------------------------

/// Epoch counter, epoch samples and the restart test.
#[derive(Debug, Clone)]
pub struct RestartLayer {
    detection: DetectionConfig,
    epoch: usize,
    samples: SampleWindow,
}

impl RestartLayer {
    pub fn new(detection: DetectionConfig) -> Self {
        Self {
            detection,
            epoch: 1,
            samples: SampleWindow::new(1),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// First period `l` of the current epoch.
    pub fn epoch_start(&self) -> usize {
        self.samples.start()
    }

    pub fn samples(&self) -> &SampleWindow {
        &self.samples
    }

    pub fn detection(&self) -> &DetectionConfig {
        &self.detection
    }

    /// Records the value of period `t` and runs the test with an optional cap.
    fn record_and_test(&mut self, t: usize, value: f64, y_max: Option<f64>) -> Result<bool> {
        debug_assert_eq!(self.samples.start() + self.samples.len(), t);
        self.samples.push(value);
        if self.samples.len() < 2 {
            return Ok(false);
        }
        Ok(detect(&self.samples, &self.detection, y_max)?.is_some())
    }

    /// Opens epoch `τ + 1` starting at period `t + 1`.
    pub fn restart(&mut self, t: usize) {
        self.epoch += 1;
        self.samples.reset(t + 1);
    }
}

// ---------------------------------------------------------------------------
// Uncensored restart SAA
// ---------------------------------------------------------------------------

/// Restart SAA for fully observed newsvendor demand.
#[derive(Debug, Clone)]
pub struct NsaaUncensored {
    h: f64,
    b: f64,
    xbar: f64,
    layer: RestartLayer,
    rng: SimRng,
}

impl NsaaUncensored {
    pub fn new(h: f64, b: f64, xbar: f64, detection: DetectionConfig, rng: SimRng) -> Result<Self> {
        InnerLoss::linear(h, b)?;
        Ok(Self {
            h,
            b,
            xbar,
            layer: RestartLayer::new(detection),
            rng,
        })
    }

    pub fn layer(&self) -> &RestartLayer {
        &self.layer
    }
}

impl Policy for NsaaUncensored {
    fn name(&self) -> String {
        "nsaa".into()
    }

    fn channel(&self) -> Channel {
        Channel::Full
    }

    fn decide(&mut self, _t: usize) -> Result<f64> {
        let samples = self.layer.samples();
        if samples.is_empty() {
            return Ok(self.rng.gen_range(0.0..=self.xbar));
        }
        let k = fractile_rank(samples.len(), self.b / (self.h + self.b));
        Ok(samples.kth_smallest(k).min(self.xbar))
    }

    fn observe(&mut self, t: usize, obs: Observation) -> Result<StepOutcome> {
        let d = full_value(obs)?;
        let epoch = self.layer.epoch();
        let restart = self.layer.record_and_test(t, d, None)?;
        if restart {
            self.layer.restart(t);
        }
        Ok(StepOutcome {
            restart,
            epoch,
            ..Default::default()
        })
    }

    fn epoch(&self) -> usize {
        self.layer.epoch()
    }
}

// ---------------------------------------------------------------------------
// General restart SAA
// ---------------------------------------------------------------------------

/// Accuracy requested from the oracle at period `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpsilonSchedule {
    Exact,
    /// `scale / sqrt(t)`.
    InverseSqrt {
        scale: f64,
    },
}

impl EpsilonSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Exact => 0.0,
            Self::InverseSqrt { scale } => scale / (t as f64).sqrt(),
        }
    }
}

/// Restart SAA with a pluggable loss and optimization oracle.
#[derive(Debug)]
pub struct GeneralNsaa {
    oracle: Box<dyn Oracle>,
    schedule: EpsilonSchedule,
    xbar: f64,
    layer: RestartLayer,
    rng: SimRng,
    last_accuracy: Option<f64>,
}

impl GeneralNsaa {
    pub fn new(
        oracle: Box<dyn Oracle>,
        schedule: EpsilonSchedule,
        xbar: f64,
        detection: DetectionConfig,
        rng: SimRng,
    ) -> Self {
        Self {
            oracle,
            schedule,
            xbar,
            layer: RestartLayer::new(detection),
            rng,
            last_accuracy: None,
        }
    }

    pub fn loss(&self) -> InnerLoss {
        self.oracle.loss()
    }

    pub fn layer(&self) -> &RestartLayer {
        &self.layer
    }
}

impl Policy for GeneralNsaa {
    fn name(&self) -> String {
        format!("general:{}:{}", self.oracle.loss().name(), self.oracle.name())
    }

    fn channel(&self) -> Channel {
        Channel::Full
    }

    fn decide(&mut self, t: usize) -> Result<f64> {
        if self.layer.samples().is_empty() {
            self.last_accuracy = None;
            return Ok(self.rng.gen_range(0.0..=self.xbar));
        }
        let sol = self
            .oracle
            .solve(self.layer.samples(), self.xbar, self.schedule.at(t))
            .map_err(|e| Error::Oracle(e.to_string()))?;
        if !sol.decision.is_finite() || !(0.0..=self.xbar).contains(&sol.decision) {
            return Err(Error::Oracle(format!(
                "decision {} outside [0, {}]",
                sol.decision, self.xbar
            )));
        }
        self.last_accuracy = Some(sol.accuracy);
        Ok(sol.decision)
    }

    fn observe(&mut self, t: usize, obs: Observation) -> Result<StepOutcome> {
        let d = full_value(obs)?;
        let epoch = self.layer.epoch();
        let restart = self.layer.record_and_test(t, d, None)?;
        if restart {
            self.layer.restart(t);
        }
        Ok(StepOutcome {
            restart,
            epoch,
            accuracy: self.last_accuracy,
            ..Default::default()
        })
    }

    fn epoch(&self) -> usize {
        self.layer.epoch()
    }
}

// ---------------------------------------------------------------------------
// Censored elimination
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandKind {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EliminationSearch {
    /// Binary search for the last surviving grid point.
    #[default]
    Binary,
    /// Scan every grid point up to the current maximum.
    Linear,
}

/// Elimination-based restart policy for censored sales.
///
/// The active set is a prefix `[0, u]` of a uniform grid with `T + 1` points
/// on `[0, xbar]`, stored as the index of `u`. The decision is always `u`.
#[derive(Debug, Clone)]
pub struct CensoredNsaa {
    h: f64,
    b: f64,
    xbar: f64,
    steps: usize,
    upper: usize,
    demand: DemandKind,
    search: EliminationSearch,
    layer: RestartLayer,
    last_threshold: f64,
    prefix_violations: usize,
    last_violation: bool,
}

impl CensoredNsaa {
    pub fn new(h: f64, b: f64, xbar: f64, detection: DetectionConfig, demand: DemandKind) -> Result<Self> {
        InnerLoss::linear(h, b)?;
        let steps = detection.horizon.max(1);
        Ok(Self {
            h,
            b,
            xbar,
            steps,
            upper: steps,
            demand,
            search: EliminationSearch::Binary,
            layer: RestartLayer::new(detection),
            last_threshold: f64::NAN,
            prefix_violations: 0,
            last_violation: false,
        })
    }

    pub fn with_search(mut self, search: EliminationSearch) -> Self {
        self.search = search;
        self
    }

    pub fn grid_point(&self, i: usize) -> f64 {
        if i == self.steps {
            self.xbar
        } else {
            self.xbar * i as f64 / self.steps as f64
        }
    }

    /// Current maximum of the active set.
    pub fn active_upper(&self) -> f64 {
        self.grid_point(self.upper)
    }

    /// Elimination threshold applied at the last observation.
    pub fn last_threshold(&self) -> f64 {
        self.last_threshold
    }

    /// Linear scans that found a non-prefix survivor set.
    pub fn prefix_violations(&self) -> usize {
        self.prefix_violations
    }

    pub fn layer(&self) -> &RestartLayer {
        &self.layer
    }

    /// Indicator-preserving stand-in for `D_t`: exact below the decision,
    /// `+inf` when demand exceeded the decision.
    fn reconstruct(&self, x: f64, obs: Observation) -> Result<f64> {
        let (sale, lost_sale) = match obs {
            Observation::Censored { sale, lost_sale } => (sale, lost_sale),
            Observation::Full(_) => {
                return Err(Error::InvalidObservation(
                    "full observation passed to the censored policy".into(),
                ))
            }
        };
        if sale.is_nan() || sale < 0.0 || sale > x {
            return Err(Error::InvalidObservation(format!(
                "sale {sale} exceeds the decision {x}"
            )));
        }
        if sale < x {
            return Ok(sale);
        }
        match self.demand {
            DemandKind::Continuous => Ok(f64::INFINITY),
            DemandKind::Discrete => match lost_sale {
                Some(true) => Ok(f64::INFINITY),
                Some(false) => Ok(x),
                None => Err(Error::InvalidObservation(
                    "discrete demand needs the lost-sale indicator when sale equals the order".into(),
                )),
            },
        }
    }

    /// Largest surviving grid index, or `None` when the active set empties.
    fn eliminate(&mut self, threshold: f64) -> Result<Option<usize>> {
        let window = self.layer.samples();
        let survives =
            |i: usize| -> Result<bool> { Ok(ghat(window, self.grid_point(i), self.h, self.b)? <= threshold) };
        match self.search {
            EliminationSearch::Binary => {
                // ĝ is nondecreasing in x, so survivors form a prefix
                let (mut lo, mut hi) = (0usize, self.upper + 1);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if survives(mid)? {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                Ok(lo.checked_sub(1))
            }
            EliminationSearch::Linear => {
                let mut last = None;
                let mut gap = false;
                let mut violation = false;
                for i in 0..=self.upper {
                    if survives(i)? {
                        if gap {
                            violation = true;
                        }
                        last = Some(i);
                    } else {
                        gap = true;
                    }
                }
                if violation {
                    self.prefix_violations += 1;
                }
                self.last_violation = violation;
                Ok(last)
            }
        }
    }
}

impl Policy for CensoredNsaa {
    fn name(&self) -> String {
        "nsaa-censored".into()
    }

    fn channel(&self) -> Channel {
        Channel::Censored
    }

    fn decide(&mut self, _t: usize) -> Result<f64> {
        Ok(self.active_upper())
    }

    fn observe(&mut self, t: usize, obs: Observation) -> Result<StepOutcome> {
        let x = self.active_upper();
        let value = self.reconstruct(x, obs)?;
        let epoch = self.layer.epoch();
        let detected = self.layer.record_and_test(t, value, Some(x))?;

        let n = self.layer.samples().len();
        let threshold = 2.0 * (self.h + self.b) * self.layer.detection().radius(n);
        self.last_threshold = threshold;
        let survivor = self.eliminate(threshold)?;

        let restart = detected || survivor.is_none();
        let active_upper = survivor.map(|i| self.grid_point(i));
        if restart {
            self.layer.restart(t);
            self.upper = self.steps;
        } else if let Some(i) = survivor {
            self.upper = i;
        }
        Ok(StepOutcome {
            restart,
            epoch,
            active_upper,
            accuracy: None,
            prefix_violation: self.last_violation,
        })
    }

    fn epoch(&self) -> usize {
        self.layer.epoch()
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Empirical quantile of all history.
    Saa,
    /// Empirical quantile of the latest `window` observations.
    Msaa { window: usize },
    /// Empirical quantile of the current block; blocks restart at every
    /// multiple of `window`.
    Rsaa { window: usize },
}

/// `ceil(kappa * sqrt(T))`.
pub fn baseline_window(kappa: f64, horizon: usize) -> usize {
    ((kappa * (horizon as f64).sqrt()).ceil() as usize).max(1)
}

/// SAA-family baselines. With no usable data the previous decision is
/// repeated, which is 0 at `t = 1`.
#[derive(Debug, Clone)]
pub struct Baseline {
    kind: BaselineKind,
    oracle: QuantileOracle,
    xbar: f64,
    recent: VecDeque<f64>,
    sorted: Vec<f64>,
    last_decision: f64,
}

impl Baseline {
    pub fn new(kind: BaselineKind, h: f64, b: f64, xbar: f64) -> Result<Self> {
        InnerLoss::linear(h, b)?;
        if let BaselineKind::Msaa { window: 0 } | BaselineKind::Rsaa { window: 0 } = kind {
            return Err(Error::InvalidParameter("baseline window must be positive".into()));
        }
        Ok(Self {
            kind,
            oracle: QuantileOracle { h, b },
            xbar,
            recent: VecDeque::new(),
            sorted: Vec::new(),
            last_decision: 0.0,
        })
    }

    /// Number of samples the next decision uses.
    pub fn samples_in_use(&self) -> usize {
        self.sorted.len()
    }

    fn insert(&mut self, d: f64) {
        let pos = self.sorted.partition_point(|&v| v <= d);
        self.sorted.insert(pos, d);
        self.recent.push_back(d);
    }

    fn remove_oldest(&mut self) {
        if let Some(old) = self.recent.pop_front() {
            let pos = self.sorted.partition_point(|&v| v < old);
            self.sorted.remove(pos);
        }
    }
}

impl Policy for Baseline {
    fn name(&self) -> String {
        match self.kind {
            BaselineKind::Saa => "saa",
            BaselineKind::Msaa { .. } => "msaa",
            BaselineKind::Rsaa { .. } => "rsaa",
        }
        .into()
    }

    fn channel(&self) -> Channel {
        Channel::Full
    }

    fn decide(&mut self, t: usize) -> Result<f64> {
        if let BaselineKind::Rsaa { window } = self.kind {
            if t.is_multiple_of(window) {
                self.recent.clear();
                self.sorted.clear();
            }
        }
        if !self.sorted.is_empty() {
            let k = fractile_rank(self.sorted.len(), self.oracle.b / (self.oracle.h + self.oracle.b));
            self.last_decision = self.sorted[k - 1].min(self.xbar);
        }
        Ok(self.last_decision)
    }

    fn observe(&mut self, _t: usize, obs: Observation) -> Result<StepOutcome> {
        let d = full_value(obs)?;
        self.insert(d);
        if let BaselineKind::Msaa { window } = self.kind {
            while self.recent.len() > window {
                self.remove_oldest();
            }
        }
        Ok(StepOutcome {
            epoch: 1,
            ..Default::default()
        })
    }
}

// ---------------------------------------------------------------------------
// Policy selection
// ---------------------------------------------------------------------------

/// Policy identifiers accepted on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Nsaa,
    NsaaCensored,
    Saa,
    Msaa,
    Rsaa,
    General { loss: String, oracle: String },
}

impl std::str::FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsaa" => Ok(Self::Nsaa),
            "nsaa-censored" => Ok(Self::NsaaCensored),
            "saa" => Ok(Self::Saa),
            "msaa" => Ok(Self::Msaa),
            "rsaa" => Ok(Self::Rsaa),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["general", loss @ ("linear" | "quadratic" | "auction"), oracle @ ("quantile" | "mean" | "breakpoint" | "ogd")] => {
                        Ok(Self::General {
                            loss: loss.to_string(),
                            oracle: oracle.to_string(),
                        })
                    }
                    _ => Err(Error::InvalidParameter(format!("unknown policy `{other}`"))),
                }
            }
        }
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Nsaa => write!(f, "nsaa"),
            Self::NsaaCensored => write!(f, "nsaa-censored"),
            Self::Saa => write!(f, "saa"),
            Self::Msaa => write!(f, "msaa"),
            Self::Rsaa => write!(f, "rsaa"),
            Self::General { loss, oracle } => write!(f, "general:{loss}:{oracle}"),
        }
    }
}

/// Everything needed to instantiate a policy for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyParams {
    pub horizon: usize,
    pub xbar: f64,
    pub h: f64,
    pub b: f64,
    pub a: f64,
    pub v: f64,
    pub delta: f64,
    pub kappa: f64,
    pub grid: CandidateGrid,
    pub demand: DemandKind,
    pub search: EliminationSearch,
    pub schedule: EpsilonSchedule,
}

impl PolicyParams {
    pub fn newsvendor(horizon: usize, xbar: f64, h: f64, b: f64) -> Self {
        Self {
            horizon,
            xbar,
            h,
            b,
            a: 1.0,
            v: 0.5,
            delta: 0.1,
            kappa: 1.0,
            grid: CandidateGrid::Geometric,
            demand: DemandKind::Continuous,
            search: EliminationSearch::Binary,
            schedule: EpsilonSchedule::Exact,
        }
    }
}

impl PolicySpec {
    pub fn channel(&self) -> Channel {
        match self {
            Self::NsaaCensored => Channel::Censored,
            _ => Channel::Full,
        }
    }

    /// Inner loss the policy optimizes, used for cost accounting.
    pub fn loss(&self, p: &PolicyParams) -> Result<InnerLoss> {
        match self {
            Self::General { loss, .. } => match loss.as_str() {
                "quadratic" => InnerLoss::quadratic(p.a),
                "auction" => InnerLoss::auction(p.v),
                _ => InnerLoss::linear(p.h, p.b),
            },
            _ => InnerLoss::linear(p.h, p.b),
        }
    }

    /// Builds the policy; `seed` drives its epoch-start randomization.
    pub fn build(&self, p: &PolicyParams, seed: u64) -> Result<Box<dyn Policy>> {
        let mut rng = SimRng::seed_from_u64(seed);
        rng.set_stream(1);
        let detection = DetectionConfig::new(p.delta, p.horizon, p.grid)?;
        Ok(match self {
            Self::Nsaa => Box::new(NsaaUncensored::new(p.h, p.b, p.xbar, detection, rng)?),
            Self::NsaaCensored => {
                Box::new(CensoredNsaa::new(p.h, p.b, p.xbar, detection, p.demand)?.with_search(p.search))
            }
            Self::Saa => Box::new(Baseline::new(BaselineKind::Saa, p.h, p.b, p.xbar)?),
            Self::Msaa => Box::new(Baseline::new(
                BaselineKind::Msaa {
                    window: baseline_window(p.kappa, p.horizon),
                },
                p.h,
                p.b,
                p.xbar,
            )?),
            Self::Rsaa => Box::new(Baseline::new(
                BaselineKind::Rsaa {
                    window: baseline_window(p.kappa, p.horizon),
                },
                p.h,
                p.b,
                p.xbar,
            )?),
            Self::General { oracle, .. } => {
                let oracle = oracle_for(self.loss(p)?, oracle)?;
                Box::new(GeneralNsaa::new(oracle, p.schedule, p.xbar, detection, rng))
            }
        })
    }
}

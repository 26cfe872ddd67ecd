//! Ground-truth demand models on `[0, xbar]`.
//!
//! Every model is either a piecewise-constant density on a breakpoint grid or
//! a finite discrete distribution. Both admit exact CDFs, quantiles, total
//! variation distances and closed-form expected costs, which keeps the regret
//! path free of Monte Carlo error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::losses::InnerLoss;
use crate::{Error, Result};

/// Tolerance for total mass and for structural model equality.
pub const MASS_TOL: f64 = 1e-12;

/// Largest epsilon allowed when a hard-instance budget forces clamping.
pub const CLAMPED_EPSILON: f64 = 0.249;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PiecewiseDensity,
    Discrete,
}

/// A bounded demand distribution supported on `[0, xbar]`.
///
/// For [`ModelKind::PiecewiseDensity`], `breakpoints` has one more entry than
/// `values` and `values[i]` is the density on `[breakpoints[i],
/// breakpoints[i + 1])`. For [`ModelKind::Discrete`], `breakpoints` are the
/// atoms and `values` their masses.
#[derive(Debug, Clone)]
pub struct DemandModel {
    kind: ModelKind,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    xbar: f64,
    // cumulative mass at each breakpoint (density) or up to each atom (discrete)
    cumulative: Vec<f64>,
}

impl DemandModel {
    pub fn piecewise(breakpoints: Vec<f64>, densities: Vec<f64>, xbar: f64) -> Result<Self> {
        Self::new(ModelKind::PiecewiseDensity, breakpoints, densities, xbar)
    }

    pub fn discrete(points: Vec<f64>, masses: Vec<f64>, xbar: f64) -> Result<Self> {
        Self::new(ModelKind::Discrete, points, masses, xbar)
    }

    /// Uniform density on `[lo, hi]` inside the domain `[0, xbar]`.
    pub fn uniform(lo: f64, hi: f64, xbar: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidModel(format!("empty uniform support [{lo}, {hi}]")));
        }
        Self::piecewise(vec![lo, hi], vec![1.0 / (hi - lo)], xbar)
    }

    pub fn point_mass(at: f64, xbar: f64) -> Result<Self> {
        Self::discrete(vec![at], vec![1.0], xbar)
    }

    pub fn new(kind: ModelKind, breakpoints: Vec<f64>, values: Vec<f64>, xbar: f64) -> Result<Self> {
        if !xbar.is_finite() || xbar <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "xbar must be positive and finite, got {xbar}"
            )));
        }
        let expected_values = match kind {
            ModelKind::PiecewiseDensity => breakpoints.len().saturating_sub(1),
            ModelKind::Discrete => breakpoints.len(),
        };
        if breakpoints.is_empty() || values.len() != expected_values || expected_values == 0 {
            return Err(Error::InvalidModel(format!(
                "{} breakpoints do not match {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite breakpoint or value".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel("breakpoints must be strictly ascending".into()));
        }
        if breakpoints[0] < 0.0 || *breakpoints.last().unwrap() > xbar {
            return Err(Error::InvalidModel(format!("breakpoints must lie in [0, {xbar}]")));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidModel("negative density or mass".into()));
        }

        let mut cumulative = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        match kind {
            ModelKind::PiecewiseDensity => {
                cumulative.push(0.0);
                for (i, &d) in values.iter().enumerate() {
                    acc += d * (breakpoints[i + 1] - breakpoints[i]);
                    cumulative.push(acc);
                }
            }
            ModelKind::Discrete => {
                for &m in &values {
                    acc += m;
                    cumulative.push(acc);
                }
            }
        }
        if (acc - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidModel(format!("total mass {acc} differs from 1")));
        }

        Ok(Self {
            kind,
            breakpoints,
            values,
            xbar,
            cumulative,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn xbar(&self) -> f64 {
        self.xbar
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == ModelKind::Discrete
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, y: f64) -> f64 {
        if y >= self.xbar {
            return 1.0;
        }
        match self.kind {
            ModelKind::PiecewiseDensity => {
                let bp = &self.breakpoints;
                if y < bp[0] {
                    return 0.0;
                }
                if y >= bp[bp.len() - 1] {
                    return 1.0;
                }
                // segment i with bp[i] <= y < bp[i+1]
                let i = bp.partition_point(|&b| b <= y) - 1;
                (self.cumulative[i] + self.values[i] * (y - bp[i])).min(1.0)
            }
            ModelKind::Discrete => {
                let k = self.breakpoints.partition_point(|&b| b <= y);
                if k == 0 {
                    0.0
                } else {
                    self.cumulative[k - 1].min(1.0)
                }
            }
        }
    }

    /// Smallest `x` with `cdf(x) >= p`. For `p = 0` this is the lower end of
    /// the support.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(match self.kind {
            ModelKind::PiecewiseDensity => {
                let bp = &self.breakpoints;
                let mut last_positive = 0;
                for (i, &d) in self.values.iter().enumerate() {
                    if d <= 0.0 {
                        continue;
                    }
                    last_positive = i;
                    if p == 0.0 {
                        return Ok(bp[i]);
                    }
                    if self.cumulative[i + 1] >= p {
                        let x = bp[i] + (p - self.cumulative[i]) / d;
                        return Ok(x.clamp(bp[i], bp[i + 1]));
                    }
                }
                // p exceeds the accumulated mass by rounding only
                bp[last_positive + 1]
            }
            ModelKind::Discrete => {
                let mut last_positive = 0;
                for (i, &m) in self.values.iter().enumerate() {
                    if m <= 0.0 {
                        continue;
                    }
                    last_positive = i;
                    if self.cumulative[i] >= p {
                        return Ok(self.breakpoints[i]);
                    }
                }
                self.breakpoints[last_positive]
            }
        })
    }

    /// Inverse-CDF draw from one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u).expect("uniform variate lies in [0, 1)")
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            ModelKind::PiecewiseDensity => self.segments().map(|(a, c, d)| d * (c * c - a * a) / 2.0).sum(),
            ModelKind::Discrete => self.breakpoints.iter().zip(&self.values).map(|(x, m)| x * m).sum(),
        }
    }

    /// `E[F(x, D)]` in closed form.
    pub fn expected_cost(&self, loss: &InnerLoss, x: f64) -> Result<f64> {
        if !(0.0..=self.xbar).contains(&x) {
            return Err(Error::OutOfDomain {
                x,
                lo: 0.0,
                hi: self.xbar,
            });
        }
        Ok(match *loss {
            InnerLoss::LinearNewsvendor { h, b } => {
                let (over, under) = self.partial_expectations(x);
                h * over + b * under
            }
            InnerLoss::Quadratic { a } => a * self.second_moment_about(x),
            InnerLoss::Auction { v } => (x - v) * self.cdf(x),
        })
    }

    /// Returns `(E[(x - D)^+], E[(D - x)^+])`.
    fn partial_expectations(&self, x: f64) -> (f64, f64) {
        match self.kind {
            ModelKind::PiecewiseDensity => {
                let mut over = 0.0;
                let mut under = 0.0;
                for (a, c, d) in self.segments() {
                    if a < x {
                        let hi = c.min(x);
                        over += d * ((x - a).powi(2) - (x - hi).powi(2)) / 2.0;
                    }
                    if c > x {
                        let lo = a.max(x);
                        under += d * ((c - x).powi(2) - (lo - x).powi(2)) / 2.0;
                    }
                }
                (over, under)
            }
            ModelKind::Discrete => self
                .breakpoints
                .iter()
                .zip(&self.values)
                .fold((0.0, 0.0), |(o, u), (&d, &m)| {
                    (o + m * (x - d).max(0.0), u + m * (d - x).max(0.0))
                }),
        }
    }

    fn second_moment_about(&self, x: f64) -> f64 {
        match self.kind {
            ModelKind::PiecewiseDensity => self
                .segments()
                .map(|(a, c, d)| d * ((x - a).powi(3) - (x - c).powi(3)) / 3.0)
                .sum(),
            ModelKind::Discrete => self
                .breakpoints
                .iter()
                .zip(&self.values)
                .map(|(&d, &m)| m * (x - d).powi(2))
                .sum(),
        }
    }

    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, &d)| (w[0], w[1], d))
    }

    /// Breakpoints and values with zero-mass pieces dropped and equal
    /// adjacent densities merged.
    fn canonical(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ModelKind::PiecewiseDensity => {
                let mut bps: Vec<f64> = Vec::new();
                let mut vals: Vec<f64> = Vec::new();
                for (a, c, d) in self.segments() {
                    if d.abs() <= MASS_TOL {
                        continue;
                    }
                    match (bps.last_mut(), vals.last()) {
                        (Some(end), Some(&prev)) if (*end - a).abs() <= MASS_TOL && (prev - d).abs() <= MASS_TOL => {
                            *end = c;
                        }
                        (Some(end), Some(_)) if (*end - a).abs() <= MASS_TOL => {
                            vals.push(d);
                            bps.push(c);
                        }
                        (Some(_), Some(_)) => {
                            // gap: insert an explicit zero-density piece
                            vals.push(0.0);
                            bps.push(a);
                            vals.push(d);
                            bps.push(c);
                        }
                        _ => {
                            bps.push(a);
                            bps.push(c);
                            vals.push(d);
                        }
                    }
                }
                (bps, vals)
            }
            ModelKind::Discrete => self
                .breakpoints
                .iter()
                .zip(&self.values)
                .filter(|(_, &m)| m.abs() > MASS_TOL)
                .map(|(&x, &m)| (x, m))
                .unzip(),
        }
    }

    /// Structural equality of canonical forms within [`MASS_TOL`].
    pub fn same_distribution(&self, other: &Self) -> bool {
        if self.kind != other.kind || (self.xbar - other.xbar).abs() > MASS_TOL {
            return false;
        }
        let (ba, va) = self.canonical();
        let (bb, vb) = other.canonical();
        let close =
            |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= MASS_TOL);
        close(&ba, &bb) && close(&va, &vb)
    }

    fn density_at_segment_start(&self, y: f64) -> f64 {
        let bp = &self.breakpoints;
        if y < bp[0] || y >= bp[bp.len() - 1] {
            return 0.0;
        }
        self.values[bp.partition_point(|&b| b <= y) - 1]
    }
}

/// Total variation distance `(1/2) * integral |p - q|`.
pub fn tv_distance(a: &DemandModel, b: &DemandModel) -> Result<f64> {
    if (a.xbar - b.xbar).abs() > MASS_TOL {
        return Err(Error::SupportMismatch(a.xbar, b.xbar));
    }
    if a.kind != b.kind {
        // a density and a finite atomic measure are mutually singular
        return Ok(1.0);
    }
    let mut grid: Vec<f64> = a.breakpoints.iter().chain(&b.breakpoints).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let l1: f64 = match a.kind {
        ModelKind::PiecewiseDensity => grid
            .windows(2)
            .map(|w| {
                let (da, db) = (a.density_at_segment_start(w[0]), b.density_at_segment_start(w[0]));
                (da - db).abs() * (w[1] - w[0])
            })
            .sum(),
        ModelKind::Discrete => {
            let mass = |m: &DemandModel, x: f64| {
                m.breakpoints
                    .binary_search_by(|p| p.total_cmp(&x))
                    .map(|i| m.values[i])
                    .unwrap_or(0.0)
            };
            grid.iter().map(|&x| (mass(a, x) - mass(b, x)).abs()).sum()
        }
    };
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// Per-period demand models over a horizon of `T = models.len()` periods.
#[derive(Debug, Clone)]
pub struct DemandSequence {
    models: Vec<DemandModel>,
}

impl DemandSequence {
    pub fn new(models: Vec<DemandModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidModel("a demand sequence needs at least one period".into()))?;
        if let Some(m) = models.iter().find(|m| (m.xbar - first.xbar).abs() > MASS_TOL) {
            return Err(Error::SupportMismatch(first.xbar, m.xbar));
        }
        Ok(Self { models })
    }

    /// `T` copies of one model.
    pub fn constant(model: DemandModel, horizon: usize) -> Result<Self> {
        Self::new(vec![model; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.models.len()
    }

    pub fn xbar(&self) -> f64 {
        self.models[0].xbar
    }

    pub fn models(&self) -> &[DemandModel] {
        &self.models
    }

    /// Model of period `t` (1-based).
    pub fn model(&self, t: usize) -> &DemandModel {
        &self.models[t - 1]
    }

    pub fn is_discrete(&self) -> bool {
        self.models.iter().any(DemandModel::is_discrete)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SequenceFile::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: SequenceFile = serde_json::from_str(json)?;
        let models = file
            .periods
            .into_iter()
            .map(|p| DemandModel::new(p.kind, p.breakpoints, p.values, file.xbar))
            .collect::<Result<Vec<_>>>()?;
        Self::new(models)
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    xbar: f64,
    periods: Vec<PeriodFile>,
}

#[derive(Serialize, Deserialize)]
struct PeriodFile {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    kind: ModelKind,
}

impl From<&DemandSequence> for SequenceFile {
    fn from(seq: &DemandSequence) -> Self {
        Self {
            xbar: seq.xbar(),
            periods: seq
                .models
                .iter()
                .map(|m| PeriodFile {
                    breakpoints: m.breakpoints.clone(),
                    values: m.values.clone(),
                    kind: m.kind,
                })
                .collect(),
        }
    }
}

/// Realised switch count and total variation of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub switches: usize,
    pub variation: f64,
}

pub fn sequence_budgets(seq: &DemandSequence) -> BudgetReport {
    let mut switches = 0;
    let mut variation = 0.0;
    for w in seq.models.windows(2) {
        if !w[1].same_distribution(&w[0]) {
            switches += 1;
            variation += tv_distance(&w[1], &w[0]).expect("sequence models share xbar");
        }
    }
    BudgetReport { switches, variation }
}

// ---------------------------------------------------------------------------
// Hard instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceFamily {
    /// Gap family on `[0, 4]`, batch length `ceil(T / S)`.
    Switch,
    /// Gap family on `[0, 4]`, batch length `ceil((T / V)^(2/3))`.
    Drift,
    /// Separated family on `[0, 2]`, batch length `ceil(T / S)`.
    SeparatedSwitch,
    /// Separated family on `[0, 2]`, batch length `ceil((T / V)^(2/3))`.
    SeparatedDrift,
}

impl InstanceFamily {
    pub fn is_separated(self) -> bool {
        matches!(self, Self::SeparatedSwitch | Self::SeparatedDrift)
    }

    pub fn xbar(self) -> f64 {
        if self.is_separated() {
            2.0
        } else {
            4.0
        }
    }
}

impl std::str::FromStr for InstanceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "switch" => Ok(Self::Switch),
            "drift" => Ok(Self::Drift),
            "separated-switch" => Ok(Self::SeparatedSwitch),
            "separated-drift" => Ok(Self::SeparatedDrift),
            other => Err(Error::InvalidParameter(format!("unknown instance family `{other}`"))),
        }
    }
}

/// Which of the two mirrored models a batch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardInstanceConfig {
    pub family: InstanceFamily,
    pub horizon: usize,
    /// `S` for switch families, `V` for drift families.
    pub budget: f64,
    /// Overrides the budget-derived epsilon.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_true")]
    pub clamp: bool,
}

fn default_true() -> bool {
    true
}

impl HardInstanceConfig {
    pub fn new(family: InstanceFamily, horizon: usize, budget: f64) -> Self {
        Self {
            family,
            horizon,
            budget,
            epsilon: None,
            clamp: true,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    pub sequence: DemandSequence,
    pub batch_len: usize,
    pub epsilon: f64,
    /// Set when the derived epsilon was clamped to [`CLAMPED_EPSILON`].
    pub clamped: bool,
    pub branches: Vec<Branch>,
}

/// The two mirrored densities of a family for a given epsilon.
pub fn family_models(family: InstanceFamily, epsilon: f64) -> Result<(DemandModel, DemandModel)> {
    let (hi, lo) = (0.5 + epsilon, 0.5 - epsilon);
    if family.is_separated() {
        Ok((
            DemandModel::piecewise(vec![0.0, 1.0, 2.0], vec![hi, lo], 2.0)?,
            DemandModel::piecewise(vec![0.0, 1.0, 2.0], vec![lo, hi], 2.0)?,
        ))
    } else {
        Ok((
            DemandModel::piecewise(vec![0.0, 1.0, 3.0, 4.0], vec![hi, 0.0, lo], 4.0)?,
            DemandModel::piecewise(vec![0.0, 1.0, 3.0, 4.0], vec![lo, 0.0, hi], 4.0)?,
        ))
    }
}

/// Batch length and epsilon implied by a budget.
pub fn batch_schedule(family: InstanceFamily, horizon: usize, budget: f64) -> (usize, f64) {
    let t = horizon as f64;
    match family {
        InstanceFamily::Switch | InstanceFamily::SeparatedSwitch => {
            let batch = (t / budget).ceil().max(1.0) as usize;
            (batch, 1.0 / (batch as f64).sqrt())
        }
        InstanceFamily::Drift | InstanceFamily::SeparatedDrift => {
            let batch = (t / budget).powf(2.0 / 3.0).ceil().max(1.0) as usize;
            (batch, 1.0 / (4.0 * (batch as f64).sqrt()))
        }
    }
}

/// Batches of constant demand, each drawn from the mirrored pair by a fair
/// coin.
pub fn make_hard_instance<R: Rng + ?Sized>(cfg: &HardInstanceConfig, rng: &mut R) -> Result<HardInstance> {
    if cfg.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if !(cfg.budget > 0.0) || !cfg.budget.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "budget must be positive, got {}",
            cfg.budget
        )));
    }
    let (batch_len, derived) = batch_schedule(cfg.family, cfg.horizon, cfg.budget);
    let mut epsilon = cfg.epsilon.unwrap_or(derived);
    let mut clamped = false;
    if !(epsilon > 0.0 && epsilon < 0.25) {
        if !cfg.clamp || !(epsilon > 0.0) {
            return Err(Error::EpsilonOutOfRange(epsilon));
        }
        epsilon = CLAMPED_EPSILON;
        clamped = true;
    }
    let (da, db) = family_models(cfg.family, epsilon)?;

    let batches = cfg.horizon.div_ceil(batch_len);
    let branches: Vec<Branch> = (0..batches)
        .map(|_| if rng.gen_bool(0.5) { Branch::A } else { Branch::B })
        .collect();
    let models = (0..cfg.horizon)
        .map(|i| match branches[i / batch_len] {
            Branch::A => da.clone(),
            Branch::B => db.clone(),
        })
        .collect();
    Ok(HardInstance {
        sequence: DemandSequence::new(models)?,
        batch_len,
        epsilon,
        clamped,
        branches,
    })
}

//! Inner losses `F(x, d)` and exact empirical optimization oracles.

use serde::{Deserialize, Serialize};

use crate::empirical::SampleWindow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnerLoss {
    /// `h (x - d)^+ + b (d - x)^+`.
    LinearNewsvendor { h: f64, b: f64 },
    /// `a (x - d)^2`.
    Quadratic { a: f64 },
    /// First-price auction bid cost `(x - v) 1[x >= d]`.
    Auction { v: f64 },
}

impl InnerLoss {
    pub fn linear(h: f64, b: f64) -> Result<Self> {
        if !(h >= 0.0 && b >= 0.0 && h + b > 0.0) || !h.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "newsvendor costs need h, b >= 0 and h + b > 0 (h={h}, b={b})"
            )));
        }
        Ok(Self::LinearNewsvendor { h, b })
    }

    pub fn quadratic(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "quadratic curvature must be positive, got {a}"
            )));
        }
        Ok(Self::Quadratic { a })
    }

    pub fn auction(v: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "auction value must lie in [0, 1], got {v}"
            )));
        }
        Ok(Self::Auction { v })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearNewsvendor { .. } => "linear",
            Self::Quadratic { .. } => "quadratic",
            Self::Auction { .. } => "auction",
        }
    }

    pub fn eval(&self, x: f64, d: f64) -> f64 {
        match *self {
            Self::LinearNewsvendor { h, b } => h * (x - d).max(0.0) + b * (d - x).max(0.0),
            Self::Quadratic { a } => a * (x - d) * (x - d),
            Self::Auction { v } => {
                if x >= d {
                    x - v
                } else {
                    0.0
                }
            }
        }
    }

    /// A subgradient in `x`. At the newsvendor kink `x = d` this returns `h`.
    pub fn subgradient(&self, x: f64, d: f64) -> Result<f64> {
        match *self {
            Self::LinearNewsvendor { h, b } => Ok(if x >= d { h } else { -b }),
            Self::Quadratic { a } => Ok(2.0 * a * (x - d)),
            Self::Auction { .. } => Err(Error::Unsupported(
                "the auction loss is discontinuous in x and has no usable subgradient".into(),
            )),
        }
    }

    /// `b / (h + b)` for the newsvendor loss.
    pub fn critical_ratio(&self) -> Option<f64> {
        match *self {
            Self::LinearNewsvendor { h, b } => Some(b / (h + b)),
            _ => None,
        }
    }
}

/// `(1/n) sum_k F(x, D_k)` over a window.
pub fn empirical_cost(window: &SampleWindow, loss: &InnerLoss, x: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(window.values().iter().map(|&d| loss.eval(x, d)).sum::<f64>() / window.len() as f64)
}

/// `ĝ(x) = (h + b) Ĝ(x) - b`, the empirical newsvendor gradient.
pub fn ghat(window: &SampleWindow, x: f64, h: f64, b: f64) -> Result<f64> {
    Ok((h + b) * window.ecdf(x)? - b)
}

/// 1-based rank `k` of the smallest order statistic with `k / n >= ratio`.
pub(crate) fn fractile_rank(n: usize, ratio: f64) -> usize {
    let nf = n as f64;
    let mut k = ((ratio * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= ratio {
        k -= 1;
    }
    while k < n && (k as f64) / nf < ratio {
        k += 1;
    }
    k
}

/// Smallest sample value whose ECDF reaches `b / (h + b)`: the smallest
/// exact minimizer of the empirical newsvendor cost.
pub fn quantile_oracle(window: &SampleWindow, h: f64, b: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(window.kth_smallest(fractile_rank(window.len(), b / (h + b))))
}

/// Sample mean projected onto `[0, xbar]`: the exact minimizer of the
/// empirical quadratic cost.
pub fn mean_oracle(window: &SampleWindow, xbar: f64) -> Result<f64> {
    Ok(window.mean()?.clamp(0.0, xbar))
}

/// Minimizer of `(x - v) Ĝ(x)` over `{0} ∪ samples` within `[0, 1]`.
///
/// Between consecutive samples `Ĝ` is constant and the objective increases
/// in `x`, so the left endpoints of the pieces suffice. Ties go to the
/// smallest point.
pub fn breakpoint_oracle(window: &SampleWindow, v: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = window.len() as f64;
    let mut best_x = 0.0;
    let mut best = (0.0 - v) * window.ecdf(0.0)?;
    let sorted: Vec<f64> = window.sorted().collect();
    let mut k = 0;
    while k < sorted.len() {
        let x = sorted[k];
        while k < sorted.len() && sorted[k] == x {
            k += 1;
        }
        if !(0.0..=1.0).contains(&x) {
            continue;
        }
        let value = (x - v) * (k as f64 / n);
        if value < best {
            best = value;
            best_x = x;
        }
    }
    Ok(best_x)
}

// ---------------------------------------------------------------------------
// Oracle trait
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSolution {
    pub decision: f64,
    /// Certified optimality gap on the empirical objective.
    pub accuracy: f64,
}

/// Solves `min_{x in [0, xbar]} (1/n) sum_k F(x, D_k)` to a requested accuracy.
pub trait Oracle: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn loss(&self) -> InnerLoss;

    fn solve(&self, window: &SampleWindow, xbar: f64, accuracy: f64) -> Result<OracleSolution>;
}

#[derive(Debug, Clone, Copy)]
pub struct QuantileOracle {
    pub h: f64,
    pub b: f64,
}

impl Oracle for QuantileOracle {
    fn name(&self) -> &'static str {
        "quantile"
    }

    fn loss(&self) -> InnerLoss {
        InnerLoss::LinearNewsvendor { h: self.h, b: self.b }
    }

    fn solve(&self, window: &SampleWindow, xbar: f64, _accuracy: f64) -> Result<OracleSolution> {
        let decision = quantile_oracle(window, self.h, self.b)?.min(xbar);
        Ok(OracleSolution {
            decision,
            accuracy: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanOracle {
    pub a: f64,
}

impl Oracle for MeanOracle {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn loss(&self) -> InnerLoss {
        InnerLoss::Quadratic { a: self.a }
    }

    fn solve(&self, window: &SampleWindow, xbar: f64, _accuracy: f64) -> Result<OracleSolution> {
        Ok(OracleSolution {
            decision: mean_oracle(window, xbar)?,
            accuracy: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BreakpointOracle {
    pub v: f64,
}

impl Oracle for BreakpointOracle {
    fn name(&self) -> &'static str {
        "breakpoint"
    }

    fn loss(&self) -> InnerLoss {
        InnerLoss::Auction { v: self.v }
    }

    fn solve(&self, window: &SampleWindow, xbar: f64, _accuracy: f64) -> Result<OracleSolution> {
        Ok(OracleSolution {
            decision: breakpoint_oracle(window, self.v)?.min(xbar),
            accuracy: 0.0,
        })
    }
}

/// Projected subgradient descent on the empirical objective with step
/// `diam / (G sqrt(k))`, returning the average iterate.
#[derive(Debug, Clone, Copy)]
pub struct OgdOracle {
    pub loss: InnerLoss,
    pub max_iterations: usize,
}

impl OgdOracle {
    pub fn new(loss: InnerLoss) -> Result<Self> {
        if matches!(loss, InnerLoss::Auction { .. }) {
            return Err(Error::Unsupported(
                "gradient descent needs a convex loss with subgradients".into(),
            ));
        }
        Ok(Self {
            loss,
            max_iterations: 20_000,
        })
    }

    fn lipschitz(&self, xbar: f64) -> f64 {
        match self.loss {
            InnerLoss::LinearNewsvendor { h, b } => h.max(b),
            InnerLoss::Quadratic { a } => 2.0 * a * xbar,
            InnerLoss::Auction { .. } => unreachable!(),
        }
    }

    /// Averaged-iterate gap bound after `k` steps.
    fn gap_bound(diam: f64, lip: f64, k: usize) -> f64 {
        let kf = k as f64;
        diam * lip * (2.0 + kf.ln()) / (4.0 * ((kf + 1.0).sqrt() - 1.0))
    }
}

impl Oracle for OgdOracle {
    fn name(&self) -> &'static str {
        "ogd"
    }

    fn loss(&self) -> InnerLoss {
        self.loss
    }

    fn solve(&self, window: &SampleWindow, xbar: f64, accuracy: f64) -> Result<OracleSolution> {
        if window.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let diam = xbar;
        let lip = self.lipschitz(xbar);
        if !(lip > 0.0) {
            return Err(Error::Oracle("degenerate Lipschitz constant".into()));
        }
        let mut iters = 1;
        while iters < self.max_iterations && Self::gap_bound(diam, lip, iters) > accuracy {
            iters = (iters * 2).min(self.max_iterations);
        }

        let mean = window.mean()?;
        let grad = |x: f64| -> Result<f64> {
            match self.loss {
                InnerLoss::LinearNewsvendor { h, b } => ghat(window, x, h, b),
                InnerLoss::Quadratic { a } => Ok(2.0 * a * (x - mean)),
                InnerLoss::Auction { .. } => unreachable!(),
            }
        };
        let mut x = xbar / 2.0;
        let mut sum = 0.0;
        for k in 1..=iters {
            sum += x;
            let step = diam / (lip * (k as f64).sqrt());
            x = (x - step * grad(x)?).clamp(0.0, xbar);
        }
        Ok(OracleSolution {
            decision: sum / iters as f64,
            accuracy: Self::gap_bound(diam, lip, iters),
        })
    }
}

/// Builds the named oracle for `loss`, rejecting mismatched pairs.
pub fn oracle_for(loss: InnerLoss, name: &str) -> Result<Box<dyn Oracle>> {
    match (name, loss) {
        ("quantile", InnerLoss::LinearNewsvendor { h, b }) => Ok(Box::new(QuantileOracle { h, b })),
        ("mean", InnerLoss::Quadratic { a }) => Ok(Box::new(MeanOracle { a })),
        ("breakpoint", InnerLoss::Auction { v }) => Ok(Box::new(BreakpointOracle { v })),
        ("ogd", _) => Ok(Box::new(OgdOracle::new(loss)?)),
        (other, loss) => Err(Error::Incompatible(format!(
            "oracle `{other}` does not solve the {} loss",
            loss.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(values: &[f64]) -> SampleWindow {
        SampleWindow::from_values(1, values.iter().copied())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(InnerLoss::linear(2.0, 5.0).unwrap().eval(3.0, 7.0), 20.0);
        assert_eq!(InnerLoss::quadratic(2.0).unwrap().eval(1.0, 3.0), 8.0);
        assert!((InnerLoss::auction(0.8).unwrap().eval(0.5, 0.3) + 0.3).abs() < 1e-15);
        assert_eq!(InnerLoss::auction(0.8).unwrap().eval(0.2, 0.3), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        let lin = InnerLoss::linear(1.0, 2.0).unwrap();
        assert_eq!(lin.subgradient(3.0, 1.0).unwrap(), 1.0);
        assert_eq!(lin.subgradient(1.0, 3.0).unwrap(), -2.0);
        assert_eq!(lin.subgradient(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(InnerLoss::quadratic(1.0).unwrap().subgradient(2.0, 5.0).unwrap(), -6.0);
        assert!(matches!(
            InnerLoss::auction(0.5).unwrap().subgradient(0.1, 0.2),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(InnerLoss::linear(0.0, 0.0).is_err());
        assert!(InnerLoss::linear(-1.0, 2.0).is_err());
        assert!(InnerLoss::quadratic(0.0).is_err());
        assert!(InnerLoss::auction(1.5).is_err());
    }

    #[test]
    fn ghat_examples() {
        let x = w(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ghat(&x, 2.5, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(ghat(&x, 0.5, 1.0, 3.0).unwrap(), -3.0);
        assert_eq!(ghat(&x, 4.0, 2.0, 3.0).unwrap(), 2.0);
        assert!(ghat(&SampleWindow::new(1), 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quantile_oracle_examples() {
        assert_eq!(quantile_oracle(&w(&[1.0, 2.0, 3.0]), 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(quantile_oracle(&w(&[4.0]), 1.0, 3.0).unwrap(), 4.0);
        assert_eq!(quantile_oracle(&w(&[1.0, 2.0, 3.0, 4.0]), 1.0, 1.0).unwrap(), 2.0);
        assert!(quantile_oracle(&SampleWindow::new(1), 1.0, 1.0).is_err());
    }

    #[test]
    fn fractile_rank_edges() {
        assert_eq!(fractile_rank(10, 0.7), 7);
        assert_eq!(fractile_rank(3, 0.0), 1);
        assert_eq!(fractile_rank(3, 1.0), 3);
        // 0.7 * 10 is not exact in binary
        assert_eq!(fractile_rank(10, 7.0 / 10.0), 7);
        assert_eq!(fractile_rank(7, 3.0 / 7.0), 3);
    }

    #[test]
    fn mean_oracle_examples() {
        assert_eq!(mean_oracle(&w(&[1.0, 3.0]), 10.0).unwrap(), 2.0);
        assert_eq!(mean_oracle(&w(&[12.0]), 10.0).unwrap(), 10.0);
        assert_eq!(mean_oracle(&w(&[5.0]), 10.0).unwrap(), 5.0);
        assert!(mean_oracle(&SampleWindow::new(1), 1.0).is_err());
    }

    #[test]
    fn breakpoint_oracle_examples() {
        assert_eq!(breakpoint_oracle(&w(&[0.2, 0.3]), 0.8).unwrap(), 0.3);
        assert_eq!(breakpoint_oracle(&w(&[0.5]), 0.8).unwrap(), 0.5);
        assert_eq!(breakpoint_oracle(&w(&[0.5]), 0.1).unwrap(), 0.0);
        assert!(breakpoint_oracle(&SampleWindow::new(1), 0.5).is_err());
    }

    #[test]
    fn oracle_pairing() {
        let lin = InnerLoss::linear(1.0, 1.0).unwrap();
        assert!(oracle_for(lin, "quantile").is_ok());
        assert!(oracle_for(lin, "ogd").is_ok());
        assert!(matches!(oracle_for(lin, "mean"), Err(Error::Incompatible(_))));
        assert!(oracle_for(InnerLoss::auction(0.5).unwrap(), "ogd").is_err());
    }

    #[test]
    fn ogd_approaches_exact_minimizers() {
        let window = w(&[0.1, 0.4, 0.35, 0.9, 0.2, 0.6, 0.75]);
        for loss in [InnerLoss::linear(1.0, 2.0).unwrap(), InnerLoss::quadratic(1.5).unwrap()] {
            let ogd = OgdOracle::new(loss).unwrap();
            let sol = ogd.solve(&window, 1.0, 0.02).unwrap();
            let exact = match loss {
                InnerLoss::LinearNewsvendor { h, b } => quantile_oracle(&window, h, b).unwrap(),
                _ => mean_oracle(&window, 1.0).unwrap(),
            };
            let gap =
                empirical_cost(&window, &loss, sol.decision).unwrap() - empirical_cost(&window, &loss, exact).unwrap();
            assert!(
                gap >= -1e-12 && gap <= sol.accuracy,
                "{loss:?}: gap {gap} > {}",
                sol.accuracy
            );
            assert!(sol.accuracy <= 0.02 || ogd.max_iterations == 20_000);
        }
    }
}

//! The restart test.
//!
//! At period `t` of an epoch that started at `l`, the left window holds
//! periods `[l, t-1]` and each candidate right window holds `[s, t]`. A
//! candidate fires when the KS distance between the two empirical CDFs
//! exceeds `2 r(t - l) + 2 r(t - s + 1)`, where `r(n)` is the DKW radius.
//! The windows overlap for `s < t`; the test is applied as stated.

use serde::{Deserialize, Serialize};

use crate::empirical::{dkw_log_term, SampleWindow};
use crate::{Error, Result};

/// Which split points `s` are scanned each period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateGrid {
    /// Every `s` in `[l, t]`.
    All,
    /// `s in {t, t-1, t-3, t-7, ...} ∪ {l}`.
    #[default]
    Geometric,
}

impl std::str::FromStr for CandidateGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "geometric" => Ok(Self::Geometric),
            other => Err(Error::InvalidParameter(format!("unknown detection grid `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub delta: f64,
    pub horizon: usize,
    pub grid: CandidateGrid,
    log_term: f64,
}

impl DetectionConfig {
    pub fn new(delta: f64, horizon: usize, grid: CandidateGrid) -> Result<Self> {
        let log_term = dkw_log_term(horizon, delta)?;
        Ok(Self {
            delta,
            horizon,
            grid,
            log_term,
        })
    }

    /// DKW radius for `n` samples under this configuration.
    pub fn radius(&self, n: usize) -> f64 {
        (self.log_term / n as f64).sqrt()
    }

    /// Firing threshold for a left window of `n_left` and right window of
    /// `n_right` samples.
    pub fn threshold(&self, n_left: usize, n_right: usize) -> f64 {
        2.0 * self.radius(n_left) + 2.0 * self.radius(n_right)
    }
}

/// Candidate offsets (relative to the epoch start) in ascending order.
fn candidate_offsets(n: usize, grid: CandidateGrid) -> Vec<usize> {
    let last = n - 1;
    match grid {
        CandidateGrid::All => (0..n).collect(),
        CandidateGrid::Geometric => {
            let mut offs = vec![0];
            let mut back = 0usize;
            while back < last {
                offs.push(last - back);
                back = 2 * back + 1;
            }
            offs.sort_unstable();
            offs.dedup();
            offs
        }
    }
}

/// Smallest firing split point `s` (a period label), or `None`.
///
/// `epoch` must span `[l, t]` with `t > l`. With `y_max`, the supremum is
/// taken over pooled sample points `<= y_max` only.
pub fn detect(epoch: &SampleWindow, cfg: &DetectionConfig, y_max: Option<f64>) -> Result<Option<usize>> {
    let n = epoch.len();
    if n < 2 {
        return Err(Error::NoLeftWindow(n));
    }
    let n_left = n - 1;

    // KS distances never exceed 1, so thresholds >= 1 cannot fire.
    let mut offsets = Vec::new();
    let mut thresholds = Vec::new();
    for off in candidate_offsets(n, cfg.grid) {
        let thr = cfg.threshold(n_left, n - off);
        if thr < 1.0 {
            offsets.push(off);
            thresholds.push(thr);
        }
    }
    if offsets.is_empty() {
        return Ok(None);
    }

    let ks = scan(epoch, &offsets, y_max.unwrap_or(f64::INFINITY));
    Ok(offsets
        .iter()
        .zip(&thresholds)
        .zip(&ks)
        .find(|((_, &thr), &d)| d > thr)
        .map(|((&off, _), _)| epoch.start() + off))
}

/// KS distance between the left window (all but the last sample) and every
/// right window `[off, n-1]`, in one pass over the sorted epoch.
fn scan(epoch: &SampleWindow, offsets: &[usize], cap: f64) -> Vec<f64> {
    let n = epoch.len();
    let last = n - 1;
    let values = epoch.values();
    let order = epoch.order();
    let inv_left = 1.0 / last as f64;
    let inv_right: Vec<f64> = offsets.iter().map(|&o| 1.0 / (n - o) as f64).collect();

    let mut left = 0usize;
    let mut right = vec![0usize; offsets.len()];
    let mut best = vec![0.0_f64; offsets.len()];
    let mut k = 0;
    while k < n {
        let y = values[order[k] as usize];
        if y > cap {
            break;
        }
        while k < n && values[order[k] as usize] == y {
            let idx = order[k] as usize;
            if idx < last {
                left += 1;
            }
            // offsets ascend, so idx >= offsets[j] holds for a prefix of j
            for (r, &o) in right.iter_mut().zip(offsets) {
                if idx < o {
                    break;
                }
                *r += 1;
            }
            k += 1;
        }
        let fl = left as f64 * inv_left;
        for j in 0..offsets.len() {
            let d = (fl - right[j] as f64 * inv_right[j]).abs();
            if d > best[j] {
                best[j] = d;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::{dkw_radius, ks_distance};

    fn cfg(grid: CandidateGrid) -> DetectionConfig {
        DetectionConfig::new(0.1, 1000, grid).unwrap()
    }

    #[test]
    fn geometric_offsets() {
        assert_eq!(candidate_offsets(1, CandidateGrid::Geometric), vec![0]);
        assert_eq!(candidate_offsets(2, CandidateGrid::Geometric), vec![0, 1]);
        // n = 10, t at offset 9: s in {9, 8, 6, 2, 0}
        assert_eq!(candidate_offsets(10, CandidateGrid::Geometric), vec![0, 2, 6, 8, 9]);
        assert_eq!(candidate_offsets(4, CandidateGrid::All), vec![0, 1, 2, 3]);
    }

    #[test]
    fn threshold_matches_radii() {
        let c = cfg(CandidateGrid::All);
        let expect = 2.0 * dkw_radius(7, 1000, 0.1).unwrap() + 2.0 * dkw_radius(3, 1000, 0.1).unwrap();
        assert!((c.threshold(7, 3) - expect).abs() < 1e-15);
    }

    #[test]
    fn epoch_of_length_one_is_rejected() {
        let w = SampleWindow::from_values(5, [0.3]);
        assert!(matches!(
            detect(&w, &cfg(CandidateGrid::All), None),
            Err(Error::NoLeftWindow(1))
        ));
    }

    #[test]
    fn short_separated_halves_stay_below_threshold() {
        // 200 samples at 0.2 then 200 at 0.8, tested at t = 400: the right
        // window [201, 400] sits inside the left window, so KS is 200/399
        // while the threshold is 2 r(399) + 2 r(200) ~ 0.99.
        let w = SampleWindow::from_values(1, std::iter::repeat_n(0.2, 200).chain(std::iter::repeat_n(0.8, 200)));
        let c = cfg(CandidateGrid::All);
        assert!(c.threshold(399, 200) > 0.98);
        assert_eq!(detect(&w, &c, None).unwrap(), None);
    }

    #[test]
    fn fires_after_long_stationary_stretch() {
        let c = DetectionConfig::new(0.1, 5000, CandidateGrid::Geometric).unwrap();
        let mut w = SampleWindow::from_values(1, std::iter::repeat_n(0.2, 2000));
        let mut fired = None;
        for t in 2001..=2400 {
            w.push(0.8);
            if let Some(s) = detect(&w, &c, None).unwrap() {
                fired = Some((t, s));
                break;
            }
        }
        // geometric candidates reach back 2^k - 1 periods, so s may sit a
        // little before the change
        let (t, s) = fired.expect("change must be detected");
        assert!(t > 2000 && t < 2250 && s + 256 > t, "fired at t={t}, s={s}");
    }

    #[test]
    fn constant_stream_never_fires() {
        let w = SampleWindow::from_values(1, std::iter::repeat_n(0.5, 300));
        assert_eq!(detect(&w, &cfg(CandidateGrid::All), None).unwrap(), None);
    }

    #[test]
    fn scan_agrees_with_pairwise_ks() {
        let vals = [0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.8, 0.8, 0.3, 0.95, 0.05, 0.6];
        let w = SampleWindow::from_values(1, vals);
        let n = vals.len();
        let offsets: Vec<usize> = (0..n).collect();
        for cap in [f64::INFINITY, 0.5, 0.01] {
            let ks = scan(&w, &offsets, cap);
            let left = SampleWindow::from_values(1, vals[..n - 1].iter().copied());
            for (j, &o) in offsets.iter().enumerate() {
                let right = SampleWindow::from_values(1, vals[o..].iter().copied());
                let y_max = cap.is_finite().then_some(cap);
                let expect = ks_distance(&left, &right, y_max).unwrap();
                assert!((ks[j] - expect).abs() < 1e-15, "offset {o} cap {cap}");
            }
        }
    }

    #[test]
    fn capped_scan_ignores_points_above_cap() {
        let c = DetectionConfig::new(0.1, 5000, CandidateGrid::Geometric).unwrap();
        let w = SampleWindow::from_values(1, std::iter::repeat_n(0.2, 2000).chain(std::iter::repeat_n(0.8, 300)));
        // no pooled point lies below 0.1, so both ECDFs vanish there
        assert_eq!(detect(&w, &c, Some(0.1)).unwrap(), None);
        assert!(detect(&w, &c, Some(0.5)).unwrap().is_some());
    }
}

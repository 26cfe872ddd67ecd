//! Observation windows with an incrementally maintained sort order.

use crate::{Error, Result};

/// Observations from consecutive periods `start..=end`, in arrival order.
///
/// `order` is the ascending permutation of `values`; ties keep arrival order.
#[derive(Debug, Clone, Default)]
pub struct SampleWindow {
    start: usize,
    values: Vec<f64>,
    order: Vec<u32>,
}

impl SampleWindow {
    pub fn new(start: usize) -> Self {
        Self {
            start,
            values: Vec::new(),
            order: Vec::new(),
        }
    }

    pub fn from_values(start: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let mut w = Self::new(start);
        for v in values {
            w.push(v);
        }
        w
    }

    /// Appends the observation of period `end + 1`.
    ///
    /// Values may be `+inf` (a censored observation above every decision
    /// level) but never NaN.
    pub fn push(&mut self, value: f64) {
        assert!(!value.is_nan(), "NaN observation");
        let values = &self.values;
        let pos = self.order.partition_point(|&i| values[i as usize] <= value);
        self.order.insert(pos, self.values.len() as u32);
        self.values.push(value);
    }

    /// Drops every observation; the next push belongs to period `start`.
    pub fn reset(&mut self, start: usize) {
        self.start = start;
        self.values.clear();
        self.order.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Period label of the first observation.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Period label of the last observation.
    pub fn end(&self) -> Option<usize> {
        (!self.is_empty()).then(|| self.start + self.values.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Arrival indices in ascending value order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn sorted(&self) -> impl Iterator<Item = f64> + '_ {
        self.order.iter().map(|&i| self.values[i as usize])
    }

    /// `k`-th smallest observation, 1-based.
    pub fn kth_smallest(&self, k: usize) -> f64 {
        self.values[self.order[k - 1] as usize]
    }

    /// Number of observations `<= y`.
    pub fn count_le(&self, y: f64) -> usize {
        self.order.partition_point(|&i| self.values[i as usize] <= y)
    }

    pub fn ecdf(&self, y: f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(self.count_le(y) as f64 / self.len() as f64)
    }

    pub fn mean(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(self.values.iter().sum::<f64>() / self.len() as f64)
    }
}

/// Exact `sup_y |F_a(y) - F_b(y)|`, evaluated at the pooled sample points.
///
/// With `y_max`, only pooled points `<= y_max` are considered; when there are
/// none the distance is 0.
pub fn ks_distance(a: &SampleWindow, b: &SampleWindow, y_max: Option<f64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let cap = y_max.unwrap_or(f64::INFINITY);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (xa, xb): (Vec<f64>, Vec<f64>) = (a.sorted().collect(), b.sorted().collect());
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0_f64;
    while i < xa.len() || j < xb.len() {
        let y = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        if y > cap {
            break;
        }
        while i < xa.len() && xa[i] <= y {
            i += 1;
        }
        while j < xb.len() && xb[j] <= y {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// `sqrt(ln(2 T^2 / delta) / n)`.
pub fn dkw_radius(n: usize, horizon: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("DKW radius needs n >= 1".into()));
    }
    Ok((dkw_log_term(horizon, delta)? / n as f64).sqrt())
}

/// `ln(2 T^2 / delta)`, shared by every radius of a run.
pub fn dkw_log_term(horizon: usize, delta: f64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let t = horizon as f64;
    Ok((2.0 * t * t / delta).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(values: &[f64]) -> SampleWindow {
        SampleWindow::from_values(1, values.iter().copied())
    }

    #[test]
    fn ecdf_examples() {
        let x = w(&[1.0, 2.0, 3.0]);
        assert!((x.ecdf(2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(x.ecdf(0.5).unwrap(), 0.0);
        assert_eq!(x.ecdf(5.0).unwrap(), 1.0);
        assert!(matches!(SampleWindow::new(1).ecdf(0.0), Err(Error::EmptyWindow)));
    }

    #[test]
    fn ecdf_ties_jump_together() {
        let x = w(&[2.0, 1.0, 2.0, 2.0]);
        assert_eq!(x.ecdf(1.999).unwrap(), 0.25);
        assert_eq!(x.ecdf(2.0).unwrap(), 1.0);
    }

    #[test]
    fn push_keeps_sorted_permutation() {
        let x = w(&[3.0, 1.0, 2.0, 1.0, 5.0]);
        assert_eq!(x.sorted().collect::<Vec<_>>(), vec![1.0, 1.0, 2.0, 3.0, 5.0]);
        assert_eq!(x.order(), &[1, 3, 2, 0, 4]);
        assert_eq!(x.end(), Some(5));
        assert_eq!(x.kth_smallest(3), 2.0);
    }

    #[test]
    fn ks_examples() {
        let a = w(&[1.0, 2.0]);
        let b = w(&[3.0, 4.0]);
        assert_eq!(ks_distance(&a, &a, None).unwrap(), 0.0);
        assert_eq!(ks_distance(&a, &b, None).unwrap(), 1.0);
        assert_eq!(ks_distance(&a, &b, Some(2.5)).unwrap(), 1.0);
        assert_eq!(ks_distance(&a, &b, Some(0.5)).unwrap(), 0.0);
        assert!(ks_distance(&a, &SampleWindow::new(1), None).is_err());
    }

    #[test]
    fn dkw_examples() {
        assert!((dkw_radius(100, 1000, 0.05).unwrap() - 0.418_382_480_657).abs() < 1e-11);
        assert!((dkw_radius(25, 100, 0.01).unwrap() - 0.761_804_640_010).abs() < 1e-11);
        let r = dkw_radius(10, 50, 0.1).unwrap();
        assert!((dkw_radius(40, 50, 0.1).unwrap() - r / 2.0).abs() < 1e-15);
        assert!(dkw_radius(10, 50, 1.0).is_err());
        assert!(dkw_radius(10, 50, 0.0).is_err());
        assert!(dkw_radius(0, 50, 0.1).is_err());
    }
}

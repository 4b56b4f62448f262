use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagstream::PS_PER_S;

/// Time-error samples `TE(t) = T(t) - T_ref(t)` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieSeries {
    /// `(t, te)` pairs in ps, sorted by `t`.
    pub samples: Vec<(u64, f64)>,
    /// Lags of interest (ps).
    pub tau_grid: Vec<u64>,
    /// Largest allowed distance between a requested time and its nearest sample (ps).
    pub tolerance_ps: u64,
}

impl TieSeries {
    pub fn new(mut samples: Vec<(u64, f64)>, tau_grid: Vec<u64>, tolerance_ps: u64) -> Self {
        samples.sort_by_key(|s| s.0);
        Self { samples, tau_grid, tolerance_ps }
    }

    /// TE from a measured timeline against its reference, sample by sample.
    pub fn from_timelines(measured: &[u64], reference: &[u64], tau_grid: Vec<u64>, tolerance_ps: u64) -> Result<Self> {
        if measured.len() != reference.len() {
            return Err(Error::invalid(format!(
                "timelines differ in length: {} vs {}",
                measured.len(),
                reference.len()
            )));
        }
        let samples = reference.iter().zip(measured).map(|(&r, &m)| (r, m as f64 - r as f64)).collect();
        Ok(Self::new(samples, tau_grid, tolerance_ps))
    }

    /// TE at the sample nearest to `t`.
    pub fn te_at(&self, t: u64) -> Result<f64> {
        let i = self.samples.partition_point(|s| s.0 < t);
        let cand = [i.checked_sub(1), (i < self.samples.len()).then_some(i)];
        let best = cand
            .into_iter()
            .flatten()
            .min_by_key(|&j| self.samples[j].0.abs_diff(t))
            .filter(|&j| self.samples[j].0.abs_diff(t) <= self.tolerance_ps);
        best.map(|j| self.samples[j].1)
            .ok_or_else(|| Error::invalid(format!("no TE sample within {} ps of {t} ps", self.tolerance_ps)))
    }
}

/// `TIE_t(tau) = TE(t + tau) - TE(t)`.
pub fn tie(series: &TieSeries, t: u64, tau: u64) -> Result<f64> {
    Ok(series.te_at(t + tau)? - series.te_at(t)?)
}

/// For every sample time `t` with `t + tau` covered, whether `|TIE_t(tau)| < 1/(2 f_rx)`.
pub fn check_criterion(series: &TieSeries, tau: u64, f_rx_hz: f64) -> Vec<(u64, bool)> {
    let bound = PS_PER_S / (2.0 * f_rx_hz);
    series
        .samples
        .iter()
        .filter_map(|&(t, _)| tie(series, t, tau).ok().map(|v| (t, v.abs() < bound)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(u64) -> f64) -> TieSeries {
        TieSeries::new((0..100).map(|i| (i * 1000, f(i * 1000))).collect(), vec![1000, 5000], 10)
    }

    #[test]
    fn constant_and_linear_te() {
        let c = series(|_| 42.0);
        assert_eq!(tie(&c, 0, 5000).unwrap(), 0.0);
        let l = series(|t| 0.01 * t as f64);
        for t in [0, 7000, 50_000] {
            assert!((tie(&l, t, 5000).unwrap() - 50.0).abs() < 1e-9);
        }
        assert!(tie(&l, 98_000, 5000).is_err());
        assert!(tie(&l, 500, 1000).is_err());
    }

    #[test]
    fn criterion_arithmetic() {
        // T_rx = 840 ps: bound 420 ps.
        let f = 1e12 / 840.0;
        let s = TieSeries::new(vec![(0, 0.0), (1000, 500.0), (2000, 500.0)], vec![], 0);
        let c = check_criterion(&s, 1000, f);
        assert_eq!(c, vec![(0, false), (1000, true)]);
    }

    #[test]
    fn from_timelines_checks_lengths() {
        assert!(TieSeries::from_timelines(&[1, 2], &[1], vec![], 0).is_err());
        let s = TieSeries::from_timelines(&[105, 210], &[100, 200], vec![], 0).unwrap();
        assert_eq!(s.samples, vec![(100, 5.0), (200, 10.0)]);
    }
}

use serde::{Deserialize, Serialize};

use super::{TagStream, TimeTag, Window, PS_PER_S};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Accumulated phase of a periodic clock: whole cycles plus a fraction in `[0, 1)`.
///
/// Computed from integer picosecond offsets with an error-free product and an
/// exact `fmod`, so the fractional part stays accurate to ~1e-16 cycles for any
/// offset below 2^53 ps (about 2.5 hours). Only the representation of the
/// frequency itself contributes error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phase {
    pub cycles: i64,
    pub frac: f64,
}

impl Phase {
    pub const ZERO: Phase = Phase { cycles: 0, frac: 0.0 };

    /// Phase accumulated over `dt_ps` picoseconds at `freq_hz`.
    pub fn elapsed(dt_ps: i64, freq_hz: f64) -> Phase {
        let t = dt_ps as f64;
        let p = t * freq_hz;
        let err = t.mul_add(freq_hz, -p);
        let r = p % PS_PER_S;
        let whole = ((p - r) / PS_PER_S).round() as i64;
        Phase::normalized(whole, (r + err) / PS_PER_S)
    }

    /// Builds a phase from a whole count and an arbitrary (possibly out of range) fraction.
    pub fn normalized(cycles: i64, frac: f64) -> Phase {
        let fl = frac.floor();
        let mut cycles = cycles + fl as i64;
        let mut frac = frac - fl;
        if frac >= 1.0 {
            frac -= 1.0;
            cycles += 1;
        }
        if frac < 0.0 {
            frac = 0.0;
        }
        Phase { cycles, frac }
    }

    pub fn add(self, other: Phase) -> Phase {
        Phase::normalized(self.cycles + other.cycles, self.frac + other.frac)
    }

    pub fn add_cycles(self, c: f64) -> Phase {
        Phase::normalized(self.cycles, self.frac + c)
    }

    /// Lossy total as a float.
    pub fn total(self) -> f64 {
        self.cycles as f64 + self.frac
    }
}

/// Arrival times reduced modulo the period `1/f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedSet {
    /// Folding frequency in Hz.
    pub freq_hz: f64,
    /// Residues in picoseconds, each in `[0, 1e12/freq_hz)`.
    pub values: Vec<f64>,
}

impl FoldedSet {
    pub fn period_ps(&self) -> f64 {
        PS_PER_S / self.freq_hz
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_freq(freq_hz: f64) -> Result<()> {
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(Error::invalid(format!("folding frequency must be positive, got {freq_hz}")));
    }
    Ok(())
}

fn residue_ps(t: u64, freq_hz: f64, period: f64) -> f64 {
    let v = Phase::elapsed(t as i64, freq_hz).frac * period;
    if v >= period {
        0.0
    } else {
        v
    }
}

/// Folds the tags inside `window` at frequency `freq_hz`: residue = `t mod (1/f)`.
pub fn fold(tags: &[TimeTag], freq_hz: f64, window: Window) -> Result<FoldedSet> {
    check_freq(freq_hz)?;
    let period = PS_PER_S / freq_hz;
    let values = tags
        .iter()
        .filter(|t| window.contains(t.t))
        .map(|t| residue_ps(t.t, freq_hz, period))
        .collect();
    Ok(FoldedSet { freq_hz, values })
}

/// Folds already-reduced values again. Residues of a [`FoldedSet`] at the same
/// frequency come back unchanged.
pub fn fold_residues(values: &[f64], freq_hz: f64) -> Result<FoldedSet> {
    check_freq(freq_hz)?;
    let period = PS_PER_S / freq_hz;
    let values = values
        .iter()
        .map(|&v| {
            let r = v.rem_euclid(period);
            if r >= period {
                0.0
            } else {
                r
            }
        })
        .collect();
    Ok(FoldedSet { freq_hz, values })
}

/// Equal-width histogram of folded residues over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin boundaries `l_0 < l_1 < ... < l_N` in picoseconds.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Set when the input folded set was empty.
    pub empty_input: bool,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

/// Bin index of residue `v` for `n` equal bins over `period`.
pub(crate) fn bin_of(v: f64, period: f64, n: usize) -> usize {
    let i = (v / period * n as f64) as usize;
    i.min(n - 1)
}

/// Histograms a folded set into `n_bins` equal bins spanning `[0, 1/f)`.
pub fn histogram(folded: &FoldedSet, n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
    }
    check_freq(folded.freq_hz)?;
    let period = folded.period_ps();
    let edges = (0..=n_bins).map(|i| period * i as f64 / n_bins as f64).collect();
    let mut counts = vec![0u64; n_bins];
    for &v in &folded.values {
        if (0.0..period).contains(&v) {
            counts[bin_of(v, period, n_bins)] += 1;
        }
    }
    Ok(Histogram { edges, counts, empty_input: folded.values.is_empty() })
}

/// Default bin count for a period: 64, reduced so that bins stay at least 10 ps wide.
pub fn default_bin_count(period_ps: f64) -> usize {
    let by_width = (period_ps / 10.0).floor();
    if by_width.is_finite() && by_width >= 2.0 {
        (by_width as usize).min(64)
    } else {
        2
    }
}

/// Samples the window at `sample_period_ps` and marks every sample slot that
/// holds at least one detection with a 1.
pub fn binarize<T: Scalar>(stream: &TagStream, sample_period_ps: u64, window: Window) -> Result<Vec<T>> {
    if sample_period_ps == 0 {
        return Err(Error::invalid("sample period must be positive"));
    }
    if window.is_empty() {
        return Err(Error::invalid("empty binarization window"));
    }
    if window.end > stream.duration() {
        return Err(Error::InsufficientData(format!(
            "window end {} ps exceeds stream duration {} ps",
            window.end,
            stream.duration()
        )));
    }
    let n = window.len().div_ceil(sample_period_ps) as usize;
    let mut out = vec![T::zero(); n];
    for tag in stream.window(window) {
        let k = ((tag.t - window.start) / sample_period_ps) as usize;
        out[k] = T::one();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::tagstream::Channel;

    fn stream(ts: &[u64], duration: u64) -> TagStream {
        let tags = ts.iter().map(|&t| TimeTag::new(t, Channel::Z0)).collect();
        TagStream::new(tags, duration, BTreeMap::new()).unwrap()
    }

    #[test]
    fn binarize_marks_occupied_samples() {
        let s = stream(&[0, 840, 1680], 2000);
        let w = Window::new(0, 2000).unwrap();
        let b: Vec<f64> = binarize(&s, 400, w).unwrap();
        assert_eq!(b, vec![1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn binarize_is_binary_not_counting() {
        let s = stream(&[10, 20, 30], 1000);
        let b: Vec<f32> = binarize(&s, 400, Window::new(0, 1000).unwrap()).unwrap();
        assert_eq!(b, vec![1.0, 0.0, 0.0]);
        let empty: Vec<f32> = binarize(&s, 400, Window::new(400, 1000).unwrap()).unwrap();
        assert!(empty.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_rejects_bad_arguments() {
        let s = stream(&[10], 1000);
        assert!(binarize::<f32>(&s, 0, Window::new(0, 100).unwrap()).is_err());
        assert!(binarize::<f32>(&s, 10, Window::new(0, 2000).unwrap()).is_err());
    }

    #[test]
    fn fold_exact_multiples() {
        let s = stream(&[0, 840, 1680], 2000);
        let f = 1e12 / 840.0;
        let folded = fold(s.tags(), f, Window::new(0, 2001).unwrap()).unwrap();
        for v in &folded.values {
            assert!(v.abs() < 1e-6 || (v - 840.0).abs() < 1e-6, "residue {v}");
        }
        let s = stream(&[100, 940], 2000);
        let folded = fold(s.tags(), f, Window::new(0, 2000).unwrap()).unwrap();
        for v in &folded.values {
            assert!((v - 100.0).abs() < 1e-6);
        }
        assert!(fold(s.tags(), 0.0, Window::new(0, 2000).unwrap()).is_err());
        assert!(fold(s.tags(), -1.0, Window::new(0, 2000).unwrap()).is_err());
    }

    #[test]
    fn phase_matches_exact_integer_arithmetic() {
        // 1e12 / 1_250_000_000 Hz = 800 ps exactly, so residues are integers.
        let f = 1.25e9;
        for &t in &[0i64, 1, 799, 800, 123_456_789_012_345, 9_000_000_000_000_001] {
            let ph = Phase::elapsed(t, f);
            let exact = t.rem_euclid(800) as f64 / 800.0;
            assert!((ph.frac - exact).abs() < 1e-12, "t={t} frac={} exact={exact}", ph.frac);
            assert_eq!(ph.cycles, t.div_euclid(800));
        }
        let neg = Phase::elapsed(-1, f);
        assert_eq!(neg.cycles, -1);
        assert!((neg.frac - 799.0 / 800.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_by_hand() {
        let period = 1000.0;
        let folded = FoldedSet { freq_hz: 1e9, values: vec![0.1 * period, 0.2 * period, 0.9 * period] };
        let h = histogram(&folded, 2).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.edges, vec![0.0, 500.0, 1000.0]);
        let same = FoldedSet { freq_hz: 1e9, values: vec![321.0; 50] };
        let h = histogram(&same, 8).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 50);
        let empty = FoldedSet { freq_hz: 1e9, values: vec![] };
        let h = histogram(&empty, 4).unwrap();
        assert!(h.empty_input);
        assert_eq!(h.total(), 0);
        assert!(histogram(&empty, 1).is_err());
    }

    #[test]
    fn default_bins_respect_min_width() {
        assert_eq!(default_bin_count(840.0), 64);
        assert_eq!(default_bin_count(200.0), 20);
        assert_eq!(default_bin_count(5.0), 2);
    }
}

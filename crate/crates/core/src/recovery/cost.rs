use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagstream::{histogram, FoldedSet, TimeTag};

/// Histogram-variance cost `-(1/N) sum_j (c_j - c_mean)^2`.
///
/// `N` is the number of tags and `c_mean` the mean bin count, so a flat
/// histogram scores exactly zero and any structure scores below zero.
pub fn cost_from_counts<T: Scalar>(counts: &[u64]) -> Result<T> {
    let n: u64 = counts.iter().sum();
    if n == 0 || counts.is_empty() {
        return Err(Error::NoTags);
    }
    let mean = T::lit(n as f64) / T::from_usize_lossy(counts.len());
    let ss: T = counts
        .iter()
        .map(|&c| {
            let d = T::lit(c as f64) - mean;
            d * d
        })
        .sum();
    Ok(-ss / T::lit(n as f64))
}

/// Cost of a folded set binned into `n_bins`.
pub fn cost(folded: &FoldedSet, n_bins: usize) -> Result<f64> {
    if folded.is_empty() {
        return Err(Error::NoTags);
    }
    cost_from_counts(&histogram(folded, n_bins)?.counts)
}

/// Fraction of a cycle elapsed between `start` and `t` at `freq_hz`, in `[0, 1)`.
///
/// Plain double arithmetic; accurate to ~1e-8 cycles over spans of a second,
/// plenty for frame-length folding.
#[inline]
pub(crate) fn frame_fraction(t: u64, start: u64, cycles_per_ps: f64) -> f64 {
    let x = (t as i64 - start as i64) as f64 * cycles_per_ps;
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

pub(crate) fn frame_counts(tags: &[TimeTag], start: u64, freq_hz: f64, counts: &mut [u64]) {
    counts.iter_mut().for_each(|c| *c = 0);
    let n = counts.len();
    let k = freq_hz * 1e-12;
    for tag in tags {
        let b = (frame_fraction(tag.t, start, k) * n as f64) as usize;
        counts[b.min(n - 1)] += 1;
    }
}

/// Cost of `tags` folded at `freq_hz` relative to `start`.
///
/// Folding relative to the frame start makes the cost invariant to a common
/// time shift of the tags and the frame.
pub fn frame_cost(tags: &[TimeTag], start: u64, freq_hz: f64, n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::invalid(format!("folding frequency must be positive, got {freq_hz}")));
    }
    let mut counts = vec![0u64; n_bins];
    frame_counts(tags, start, freq_hz, &mut counts);
    cost_from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagstream::{fold, Channel, Window};

    #[test]
    fn hand_computed_values() {
        assert_eq!(cost_from_counts::<f64>(&[1, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(cost_from_counts::<f64>(&[4, 0, 0, 0]).unwrap(), -3.0);
        assert_eq!(cost_from_counts::<f32>(&[4, 0, 0, 0]).unwrap(), -3.0);
        // mean 2 over bins, N = 8: -(4 + 0 + 4 + 0) / 8
        assert_eq!(cost_from_counts::<f64>(&[4, 2, 0, 2]).unwrap(), -1.0);
        assert_eq!(cost_from_counts::<f64>(&[3, 3, 3, 3]).unwrap(), 0.0);
        assert!(matches!(cost_from_counts::<f64>(&[0, 0]), Err(Error::NoTags)));
    }

    #[test]
    fn folded_and_frame_costs_agree_at_zero_start() {
        let tags: Vec<TimeTag> = (0..500u64).map(|i| TimeTag::new(i * 977 + (i % 7) * 13, Channel::Z0)).collect();
        let f = 1.190_473_4e9;
        let w = Window::new(0, 1_000_000).unwrap();
        let a = cost(&fold(&tags, f, w).unwrap(), 32).unwrap();
        let b = frame_cost(&tags, 0, f, 32).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn concentrated_beats_spread() {
        let period = 1000u64;
        let sharp: Vec<TimeTag> = (0..100).map(|i| TimeTag::new(i * period + 5, Channel::Z0)).collect();
        let spread: Vec<TimeTag> = (0..100).map(|i| TimeTag::new(i * period + (i * 37) % period, Channel::Z0)).collect();
        let js = frame_cost(&sharp, 0, 1e9, 16).unwrap();
        let jw = frame_cost(&spread, 0, 1e9, 16).unwrap();
        assert!(js < jw);
        assert!(jw <= 0.0);
    }
}

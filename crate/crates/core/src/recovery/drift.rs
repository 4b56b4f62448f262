use serde::{Deserialize, Serialize};

use super::clock::ClockModel;
use crate::error::{Error, Result};
use crate::tagstream::{default_bin_count, TagStream, TimeTag, Window, PS_PER_S};

/// Default minimum number of tags in each compared frame.
pub const MIN_FRAME_TAGS: usize = 100;
/// Correlation peak ratio below which a drift measurement is flagged.
const MIN_PEAK_RATIO: f64 = 1.2;

/// Frequency offset implied by a drift of `delta_t_ps` accumulated over `t_ps`:
/// `(delta_t / T) * f0`.
pub fn drift_offset(delta_t_ps: f64, t_ps: f64, f0_hz: f64) -> Result<f64> {
    if !(t_ps > 0.0) || !t_ps.is_finite() {
        return Err(Error::invalid(format!("drift interval must be positive, got {t_ps} ps")));
    }
    Ok(delta_t_ps / t_ps * f0_hz)
}

/// Relative shift between two frames' folded histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDrift {
    /// How much later frame b's pattern sits than frame a's, in `[-P/2, P/2)`.
    pub delta_t_ps: f64,
    /// Correlation peak over the largest off-peak value.
    pub peak_ratio: f64,
    pub low_confidence: bool,
}

/// Drift between `frame_a` and `frame_b` when both are folded at `f0_hz`.
pub fn measure_frame_drift(stream: &TagStream, f0_hz: f64, frame_a: Window, frame_b: Window) -> Result<FrameDrift> {
    let n_bins = default_bin_count(PS_PER_S / f0_hz);
    measure_frame_drift_with(stream, f0_hz, frame_a, frame_b, n_bins, MIN_FRAME_TAGS)
}

pub fn measure_frame_drift_with(
    stream: &TagStream,
    f0_hz: f64,
    frame_a: Window,
    frame_b: Window,
    n_bins: usize,
    min_tags: usize,
) -> Result<FrameDrift> {
    let clock = ClockModel::constant(0, f0_hz)?;
    drift_with_clock(stream.window(frame_a), stream.window(frame_b), &clock, n_bins, min_tags)
}

pub(crate) fn drift_with_clock(
    a: &[TimeTag],
    b: &[TimeTag],
    clock: &ClockModel,
    n_bins: usize,
    min_tags: usize,
) -> Result<FrameDrift> {
    let need = min_tags.max(1);
    if a.len() < need || b.len() < need {
        return Err(Error::InsufficientData(format!(
            "drift frames hold {} and {} tags, need {need}",
            a.len(),
            b.len()
        )));
    }
    let ha = clock_counts(a, clock, n_bins);
    let hb = clock_counts(b, clock, n_bins);
    Ok(histogram_shift(&ha, &hb, PS_PER_S / clock.nominal_freq_hz()))
}

/// Histogram of clock-phase fractions.
pub(crate) fn clock_counts(tags: &[TimeTag], clock: &ClockModel, n_bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_bins];
    for tag in tags {
        let b = (clock.phase_at(tag.t).frac * n_bins as f64) as usize;
        counts[b.min(n_bins - 1)] += 1;
    }
    counts
}

/// Circular cross-correlation peak of `b` against `a` with parabolic sub-bin
/// interpolation. Positive when `b` is delayed.
pub(crate) fn histogram_shift(a: &[u64], b: &[u64], period_ps: f64) -> FrameDrift {
    let n = a.len();
    let r: Vec<f64> = (0..n)
        .map(|s| (0..n).map(|i| a[i] as f64 * b[(i + s) % n] as f64).sum())
        .collect();
    let best = (0..n).fold(0, |m, s| if r[s] > r[m] { s } else { m });
    let (ym, y0, yp) = (r[(best + n - 1) % n], r[best], r[(best + 1) % n]);
    let denom = ym - 2.0 * y0 + yp;
    let frac = if denom < 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
    let width = period_ps / n as f64;
    let mut dt = (best as f64 + frac) * width;
    dt = (dt + period_ps / 2.0).rem_euclid(period_ps) - period_ps / 2.0;

    let far = n / 4;
    let off_peak = (0..n)
        .filter(|&s| {
            let d = (s + n - best) % n;
            d.min(n - d) >= far
        })
        .map(|s| r[s])
        .fold(0.0, f64::max);
    let peak_ratio = if off_peak > 0.0 { y0 / off_peak } else { f64::INFINITY };
    FrameDrift { delta_t_ps: dt, peak_ratio, low_confidence: !(peak_ratio >= MIN_PEAK_RATIO) }
}

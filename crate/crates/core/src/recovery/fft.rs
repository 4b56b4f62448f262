use realfft::{FftNum, RealFftPlanner};
use serde::{Deserialize, Serialize};

use super::cost::frame_cost;
use super::DemodEstimate;
use super::DemodStatus;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagstream::{binarize, default_bin_count, TagStream, Window, PS_PER_S};

/// Scalar used for the coarse FFT by the pipeline (halves memory against `f64`).
pub type FftScalar = f32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FftOptions {
    /// Integration frame length (s).
    pub t_int_s: f64,
    /// Binarization sample period (ps).
    pub sample_period_ps: u64,
    /// Restricts the peak search to `[lo, hi]` Hz.
    pub search_band_hz: Option<(f64, f64)>,
    /// Frame start (ps).
    pub start_ps: u64,
    /// Fewer tags than this in the frame fails the estimate.
    pub min_tags: usize,
    /// Required ratio of the peak magnitude to the median magnitude in the searched range.
    pub min_peak_ratio: f64,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            t_int_s: 5e-3,
            sample_period_ps: 400,
            search_band_hz: None,
            start_ps: 0,
            min_tags: 100,
            min_peak_ratio: 5.0,
        }
    }
}

impl FftOptions {
    pub fn window(&self) -> Result<Window> {
        if !(self.t_int_s > 0.0) || !self.t_int_s.is_finite() {
            return Err(Error::invalid(format!("t_int_s must be positive, got {}", self.t_int_s)));
        }
        Window::from_len(self.start_ps, (self.t_int_s * PS_PER_S).round() as u64)
    }
}

/// Coarse demodulation frequency: the largest non-DC line in the spectrum of
/// the binarized first integration frame.
///
/// The frequency grid spacing is `1/t_int`. A frame with too few tags, or a
/// peak not clearly above the spectral median, yields a `Failed` estimate
/// with a diagnostic rather than an error.
pub fn fft_coarse_estimate<T: Scalar + FftNum>(stream: &TagStream, opts: &FftOptions) -> Result<DemodEstimate> {
    let window = opts.window()?;
    if window.end > stream.duration() {
        return Err(Error::InsufficientData(format!(
            "stream of {} ps is shorter than the {} ps integration frame",
            stream.duration(),
            window.end
        )));
    }
    let n_tags = stream.count_in(window);
    if n_tags < opts.min_tags {
        return Ok(DemodEstimate::failed(
            1.0,
            window,
            format!("{n_tags} tags in the FFT frame, need {}", opts.min_tags),
        ));
    }
    let mut samples: Vec<T> = binarize(stream, opts.sample_period_ps, window)?;
    let n = samples.len();
    if n < 4 {
        return Err(Error::invalid("integration frame spans fewer than 4 samples"));
    }
    let fs = PS_PER_S / opts.sample_period_ps as f64;
    let df = fs / n as f64;

    let mut planner = RealFftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let mut spectrum = fft.make_output_vec();
    fft.process(&mut samples, &mut spectrum).map_err(|e| Error::invalid(e.to_string()))?;
    drop(samples);

    let last = spectrum.len() - 1;
    let (lo, hi) = match opts.search_band_hz {
        Some((a, b)) => {
            if !(a < b) || a < 0.0 {
                return Err(Error::invalid(format!("invalid search band [{a}, {b}] Hz")));
            }
            ((a / df).ceil().max(1.0) as usize, ((b / df).floor() as usize).min(last))
        }
        None => (1, last),
    };
    if lo > hi {
        return Err(Error::invalid("search band contains no frequency bins"));
    }
    let mut mags: Vec<T> = spectrum[lo..=hi].iter().map(|c| c.norm_sqr()).collect();
    let (peak_i, peak) = mags
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mid = mags.len() / 2;
    let median = *mags.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)).1;
    // Ratio of magnitudes, compared via their squares.
    let ratio = (peak.as_f64() / median.as_f64()).sqrt();
    let f0 = (lo + peak_i) as f64 * df;
    if !(ratio >= opts.min_peak_ratio) {
        let mut est = DemodEstimate::failed(f0.max(df), window, format!(
            "spectral peak {ratio:.2}x the median magnitude, need {}x",
            opts.min_peak_ratio
        ));
        est.uncertainty_hz = Some(df);
        return Ok(est);
    }
    let frame_tags = stream.window(window);
    let cost = frame_cost(frame_tags, window.start, f0, default_bin_count(PS_PER_S / f0))?;
    Ok(DemodEstimate {
        f0_hz: f0,
        detuning_hz: 0.0,
        frame: window,
        cost,
        status: DemodStatus::FftOnly,
        uncertainty_hz: Some(df / 12f64.sqrt()),
        low_confidence: false,
        diagnostic: None,
    })
}

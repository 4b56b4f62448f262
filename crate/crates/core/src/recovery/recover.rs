use serde::{Deserialize, Serialize};

use super::clock::ClockModel;
use super::cost::frame_cost;
use super::drift::{drift_offset, drift_with_clock};
use super::fft::{fft_coarse_estimate, FftOptions, FftScalar};
use super::optimize::{optimize_detuning, OptimizeOptions};
use super::track::{track_drift, DriftTrace, TrackOptions};
use super::{DemodEstimate, DemodStatus};
use crate::error::{Error, Result, Stage};
use crate::tagstream::{default_bin_count, TagStream, Window, PS_PER_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverConfig {
    pub fft: FftOptions,
    pub track: TrackOptions,
    /// Minimum tags per frame used for drift measurement.
    pub drift_min_tags: usize,
    /// Re-validation interval (s); `None` disables step 4.
    pub revalidate_s: Option<f64>,
    /// Also produce the sliding-frame drift trace.
    pub with_trace: bool,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self {
            fft: FftOptions::default(),
            track: TrackOptions::default(),
            drift_min_tags: 1000,
            revalidate_s: Some(1.0),
            with_trace: true,
        }
    }
}

/// A frequency/phase correction applied while recovering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub stage: Stage,
    /// Where the drift was measured (ps).
    pub t_ps: u64,
    /// Baseline over which the drift accumulated (ps).
    pub baseline_ps: u64,
    pub delta_t_ps: f64,
    pub delta_f_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// First-frame estimate: the FFT line refined by the optimizer.
    pub estimate: DemodEstimate,
    pub trace: Option<DriftTrace>,
    /// Drift-corrected, possibly segmented, clock for demodulating the whole stream.
    pub clock: ClockModel,
    /// Longest baseline over which the corrected frequency was validated (s).
    pub validity_span_s: f64,
    pub corrections: Vec<Correction>,
}

/// Quarter period, in cycles, over three sigma of the frequency error: the
/// baseline a frequency estimate is trusted for.
const SPAN_FRACTION: f64 = 0.25 / 3.0;

fn stage_err(stage: Stage, message: impl Into<String>) -> Error {
    Error::Stage { stage, message: message.into() }
}

/// Four-step clock recovery.
///
/// 1. Coarse FFT estimate on the first integration frame, refined by the
///    cost optimizer on the first tracking frame.
/// 2. Validity span: how long the current estimate keeps the accumulated
///    timing error below a quarter period.
/// 3. Drift correction: the shift between the first frame and a frame one
///    validity span later gives `dF`; the baseline then grows until the
///    stream (or the re-validation interval) is covered.
/// 4. Re-validation: every interval the accumulated drift is measured and a
///    new clock segment starts when the predicted error exceeds a quarter period.
pub fn recover(stream: &TagStream, cfg: &RecoverConfig) -> Result<Recovery> {
    if stream.is_empty() {
        return Err(Error::NoTags);
    }
    // Step 1.
    let coarse = fft_coarse_estimate::<FftScalar>(stream, &cfg.fft).map_err(|e| stage_err(Stage::Fft, e.to_string()))?;
    if coarse.is_failed() {
        return Err(stage_err(Stage::Fft, coarse.diagnostic.unwrap_or_default()));
    }
    let f0 = coarse.f0_hz;
    let period = PS_PER_S / f0;
    let n_bins = cfg.track.optimize.n_bins.unwrap_or_else(|| default_bin_count(period));
    let duration = stream.duration();
    let rate = stream.detection_rate().max(1e-9);

    let first_len = ((cfg.track.frame_s * PS_PER_S).round() as u64)
        .max(cfg.fft.window()?.len())
        .min(duration);
    let first = Window::from_len(0, first_len)?;
    let bin_hz = 1.0 / cfg.fft.t_int_s;
    let opt = OptimizeOptions { scan_span_hz: bin_hz, ..cfg.track.optimize.clone() };
    let fine = optimize_detuning(stream, f0, first, &opt)?;
    let (mut f, mut u) = if fine.is_failed() {
        log::warn!("first-frame optimization failed: {}", fine.diagnostic.as_deref().unwrap_or(""));
        (f0, bin_hz / 2.0)
    } else {
        (fine.frequency_hz(), fine.uncertainty_hz.unwrap_or(bin_hz / 2.0).max(1e-6))
    };

    // Steps 2 and 3.
    let drift_len = ((1.2 * cfg.drift_min_tags as f64 / rate * PS_PER_S) as u64).max(first_len).min(duration / 2);
    let anchor = Window::from_len(0, drift_len.max(1))?;
    let cap_ps = match cfg.revalidate_s {
        Some(r) if r > 0.0 => ((r * PS_PER_S) as u64).min(duration.saturating_sub(drift_len)),
        _ => duration.saturating_sub(drift_len),
    };
    let mut corrections = Vec::new();
    let mut validity = 0u64;
    let mut baseline = ((SPAN_FRACTION / u * PS_PER_S) as u64).max(drift_len).min(cap_ps);
    while baseline >= drift_len && baseline > validity {
        let frame_b = Window::from_len(baseline, drift_len)?;
        let clock = ClockModel::constant(0, f)?;
        let d = match drift_with_clock(stream.window(anchor), stream.window(frame_b), &clock, n_bins, cfg.drift_min_tags) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("drift correction stopped at {baseline} ps: {e}");
                break;
            }
        };
        let df = drift_offset(d.delta_t_ps, baseline as f64, f)?;
        f -= df;
        corrections.push(Correction {
            stage: Stage::Correction,
            t_ps: baseline,
            baseline_ps: baseline,
            delta_t_ps: d.delta_t_ps,
            delta_f_hz: -df,
        });
        validity = baseline;
        // Residual frequency error after the correction: timing noise of the
        // two frame centroids spread over the baseline.
        let sigma_t = period / 12f64.sqrt() * (2.0 / cfg.drift_min_tags as f64).sqrt();
        u = sigma_t / baseline as f64 * f;
        let next = ((SPAN_FRACTION / u * PS_PER_S) as u64).min(baseline.saturating_mul(4)).min(cap_ps);
        if next <= baseline {
            break;
        }
        baseline = next;
    }
    if corrections.is_empty() && fine.is_failed() {
        return Err(stage_err(
            Stage::Correction,
            "neither the optimizer nor the drift correction could refine the FFT estimate",
        ));
    }

    // Step 4.
    let mut clock = ClockModel::constant(0, f)?;
    if let Some(r) = cfg.revalidate_s.filter(|r| *r > 0.0) {
        let interval = (r * PS_PER_S) as u64;
        let reference = stream.window(anchor);
        let (mut prev_dt, mut prev_t) = (0.0f64, 0u64);
        let mut c = interval;
        while c + drift_len <= duration {
            let frame = Window::from_len(c, drift_len)?;
            let d = match drift_with_clock(reference, stream.window(frame), &clock, n_bins, cfg.drift_min_tags) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("re-validation skipped at {c} ps: {e}");
                    c += interval;
                    continue;
                }
            };
            let slope = (d.delta_t_ps - prev_dt) / (c - prev_t) as f64;
            let predicted = d.delta_t_ps + slope * interval as f64;
            if predicted.abs() > period / 4.0 || d.delta_t_ps.abs() > period / 4.0 {
                let f_cur = clock.freq_at(c);
                let f_new = f_cur * (1.0 - slope);
                let phase = clock.phase_at(c).add_cycles(-d.delta_t_ps * f_cur * 1e-12);
                clock.push(c, f_new, phase)?;
                corrections.push(Correction {
                    stage: Stage::Revalidation,
                    t_ps: c,
                    baseline_ps: c - prev_t,
                    delta_t_ps: d.delta_t_ps,
                    delta_f_hz: f_new - f_cur,
                });
                prev_dt = 0.0;
            } else {
                prev_dt = d.delta_t_ps;
            }
            prev_t = c;
            c += interval;
        }
    }

    // The estimate records the first-frame refinement; the drift-corrected
    // frequency is carried by the clock.
    let estimate = if fine.is_failed() {
        DemodEstimate {
            f0_hz: f0,
            detuning_hz: f - f0,
            frame: first,
            cost: frame_cost(stream.window(first), 0, f, n_bins)?,
            status: DemodStatus::FftOnly,
            uncertainty_hz: Some(u),
            low_confidence: u > cfg.track.optimize.max_uncertainty_hz,
            diagnostic: fine.diagnostic.clone(),
        }
    } else {
        fine.clone()
    };

    let trace = if cfg.with_trace {
        match track_drift(stream, f0, &TrackOptions { optimize: opt, ..cfg.track.clone() }) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("drift tracking unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(Recovery {
        estimate,
        trace,
        clock,
        validity_span_s: validity as f64 / PS_PER_S,
        corrections,
    })
}

//! Clock recovery: coarse FFT estimate, histogram-variance cost, simplex
//! refinement, frame-drift correction and drift tracking.

mod clock;
mod cost;
mod drift;
mod fft;
mod optimize;
mod recover;
mod track;

use serde::{Deserialize, Serialize};

use crate::tagstream::Window;

pub use clock::{ClockModel, ClockSegment};
pub use cost::{cost, cost_from_counts, frame_cost};
pub use drift::{drift_offset, measure_frame_drift, measure_frame_drift_with, FrameDrift, MIN_FRAME_TAGS};
pub use fft::{fft_coarse_estimate, FftOptions, FftScalar};
pub use optimize::{optimize_detuning, OptimizeOptions};
pub use recover::{recover, Correction, RecoverConfig, Recovery};
pub use track::{track_drift, DriftPoint, DriftTrace, TrackOptions, DRIFT_CSV_HEADER};

/// Outcome of a frequency estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemodStatus {
    FftOnly,
    Optimized,
    Failed,
}

impl DemodStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DemodStatus::FftOnly => "fft_only",
            DemodStatus::Optimized => "optimized",
            DemodStatus::Failed => "failed",
        }
    }
}

impl std::fmt::Display for DemodStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Demodulation frequency estimate: `f0_hz + detuning_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemodEstimate {
    /// Coarse (FFT or seed) frequency.
    pub f0_hz: f64,
    /// Fine correction relative to `f0_hz`.
    pub detuning_hz: f64,
    /// Frame the estimate was computed on.
    pub frame: Window,
    /// Cost at the reported frequency.
    pub cost: f64,
    pub status: DemodStatus,
    /// One-sigma frequency uncertainty, when available.
    #[serde(default)]
    pub uncertainty_hz: Option<f64>,
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default)]
    pub diagnostic: Option<String>,
}

impl DemodEstimate {
    pub fn frequency_hz(&self) -> f64 {
        self.f0_hz + self.detuning_hz
    }

    pub fn is_failed(&self) -> bool {
        self.status == DemodStatus::Failed
    }

    pub(crate) fn failed(f0_hz: f64, frame: Window, message: impl Into<String>) -> Self {
        Self {
            f0_hz,
            detuning_hz: 0.0,
            frame,
            cost: 0.0,
            status: DemodStatus::Failed,
            uncertainty_hz: None,
            low_confidence: true,
            diagnostic: Some(message.into()),
        }
    }
}

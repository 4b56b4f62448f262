use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagstream::Phase;

/// One piece of a piecewise-constant-frequency clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSegment {
    /// Segment start (ps, absolute stream time).
    pub start_ps: u64,
    pub freq_hz: f64,
    /// Clock phase at `start_ps`, in cycles since the model origin.
    pub phase: Phase,
}

/// Recovered receiver clock: phase as a function of tag time.
///
/// Segments are ordered by start; times before the first segment are
/// extrapolated backwards from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    segments: Vec<ClockSegment>,
}

impl ClockModel {
    /// Constant-frequency clock with zero phase at `origin_ps`.
    pub fn constant(origin_ps: u64, freq_hz: f64) -> Result<Self> {
        check_freq(freq_hz)?;
        Ok(Self { segments: vec![ClockSegment { start_ps: origin_ps, freq_hz, phase: Phase::ZERO }] })
    }

    pub fn segments(&self) -> &[ClockSegment] {
        &self.segments
    }

    pub fn origin_ps(&self) -> u64 {
        self.segments[0].start_ps
    }

    /// Frequency of the first segment.
    pub fn nominal_freq_hz(&self) -> f64 {
        self.segments[0].freq_hz
    }

    /// Appends a segment; `start_ps` must be later than every existing start.
    pub fn push(&mut self, start_ps: u64, freq_hz: f64, phase: Phase) -> Result<()> {
        check_freq(freq_hz)?;
        let last = self.segments.last().map_or(0, |s| s.start_ps);
        if start_ps <= last {
            return Err(Error::invalid(format!("segment start {start_ps} ps not after {last} ps")));
        }
        self.segments.push(ClockSegment { start_ps, freq_hz, phase });
        Ok(())
    }

    fn segment_for(&self, t: u64) -> &ClockSegment {
        let i = self.segments.partition_point(|s| s.start_ps <= t);
        &self.segments[i.saturating_sub(1)]
    }

    pub fn freq_at(&self, t: u64) -> f64 {
        self.segment_for(t).freq_hz
    }

    /// Clock phase (cycles since the origin) at time `t`.
    pub fn phase_at(&self, t: u64) -> Phase {
        let s = self.segment_for(t);
        s.phase.add(Phase::elapsed(t as i64 - s.start_ps as i64, s.freq_hz))
    }
}

fn check_freq(freq_hz: f64) -> Result<()> {
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(Error::invalid(format!("clock frequency must be positive, got {freq_hz}")));
    }
    Ok(())
}

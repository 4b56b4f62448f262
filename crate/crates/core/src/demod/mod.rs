//! Symbol decoding against a recovered clock, sequence alignment and QBER.

mod qber;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::recovery::{ClockModel, DemodEstimate};
use crate::simulator::SourceConfig;
use crate::tagstream::{Channel, TagStream, TimeTag, Window, PS_PER_S};

pub use qber::{
    align_sequence, align_sequence_with, compute_qber, windowed_qber, Alignment, AlignOptions, QberReport,
    QberWindow, QBER_CSV_HEADER,
};

/// Default temporal sift window (ps).
pub const DEFAULT_SIFT_WINDOW_PS: f64 = 200.0;

/// Decoded content of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoded {
    /// Z-basis bit: 0 early, 1 late.
    Bit(u8),
    /// Detection on the X-basis detector.
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub tag_index: usize,
    pub t: u64,
    /// Qubit index modulo the sequence length.
    pub qubit: usize,
    /// Nearest pulse slot.
    pub pulse: u8,
    pub value: Decoded,
    /// Distance to the nearest pulse centre (ps).
    pub residual_ps: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedStream {
    pub records: Vec<DecodedRecord>,
    pub sequence_len: usize,
    pub sift_window_ps: f64,
    /// Acquisition duration of the source stream (ps).
    pub duration_ps: u64,
}

impl DecodedStream {
    pub fn accepted(&self) -> impl Iterator<Item = &DecodedRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    /// Raw detection rate of the decoded stream (Hz).
    pub fn detection_rate(&self) -> f64 {
        if self.duration_ps == 0 {
            0.0
        } else {
            self.records.len() as f64 / (self.duration_ps as f64 / PS_PER_S)
        }
    }
}

/// Decodes every tag with a constant-frequency clock taken from `estimate`,
/// anchored on the estimate's frame.
pub fn demodulate(
    stream: &TagStream,
    estimate: &DemodEstimate,
    src: &SourceConfig,
    sift_window_ps: f64,
) -> Result<DecodedStream> {
    if estimate.is_failed() {
        return Err(Error::Stage {
            stage: Stage::Demodulation,
            message: format!(
                "cannot demodulate with a failed estimate: {}",
                estimate.diagnostic.as_deref().unwrap_or("no diagnostic")
            ),
        });
    }
    let clock = ClockModel::constant(estimate.frame.start, estimate.frequency_hz())?;
    demodulate_with_clock(stream, &clock, src, sift_window_ps, estimate.frame)
}

/// Decodes every tag with a (possibly segmented) pulse clock.
///
/// Tags are folded at the qubit period (the pulse clock divided by the
/// number of pulses per qubit). The qubit-frame offset is found on `anchor`
/// by sliding a template of the pulse positions, each `pulse_fwhm_ps` wide,
/// over a 1 ps histogram, then refined by the mean residual.
pub fn demodulate_with_clock(
    stream: &TagStream,
    clock: &ClockModel,
    src: &SourceConfig,
    sift_window_ps: f64,
    anchor: Window,
) -> Result<DecodedStream> {
    src.validate()?;
    if !(sift_window_ps > 0.0) {
        return Err(Error::invalid(format!("sift window must be positive, got {sift_window_ps}")));
    }
    let k = (clock.nominal_freq_hz() / src.qubit_rate_hz).round();
    if k < 1.0 {
        return Err(Error::Stage {
            stage: Stage::Demodulation,
            message: format!(
                "clock {} Hz is below the qubit rate {} Hz",
                clock.nominal_freq_hz(),
                src.qubit_rate_hz
            ),
        });
    }
    let k = k as i64;
    let period = k as f64 * PS_PER_S / clock.nominal_freq_hz();
    let folded: Vec<(i64, f64)> = stream.tags().iter().map(|t| qubit_phase(clock, t, k, period)).collect();

    let range = stream.window_range(anchor);
    let theta = anchor_offset(&folded[range], &src.pulse_positions_ps, period, src.pulse_fwhm_ps)
        .ok_or_else(|| Error::Stage {
            stage: Stage::Demodulation,
            message: "no tags in the anchor frame".into(),
        })?;

    let pos = &src.pulse_positions_ps;
    let last = pos.len() - 1;
    // Candidate centres in increasing time order: (centre, qubit shift, slot).
    let mut centres = Vec::with_capacity(pos.len() + 2);
    centres.push((pos[last] - period, -1i64, last));
    centres.extend(pos.iter().enumerate().map(|(j, &p)| (p, 0, j)));
    centres.push((pos[0] + period, 1, 0));

    let len = src.sequence().len() as i64;
    let half = sift_window_ps / 2.0;
    let records = stream
        .tags()
        .iter()
        .zip(&folded)
        .enumerate()
        .map(|(i, (tag, &(q, x)))| {
            let (mut u, mut q) = (x - theta, q);
            if u < 0.0 {
                u += period;
                q -= 1;
            } else if u >= period {
                u -= period;
                q += 1;
            }
            let (mut best, mut best_d) = (centres[0], f64::INFINITY);
            for &c in &centres {
                let d = (u - c.0).abs();
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            let (centre, shift, slot) = best;
            let residual = u - centre;
            let value = match tag.channel {
                Channel::X => Decoded::X,
                _ => Decoded::Bit(slot as u8),
            };
            DecodedRecord {
                tag_index: i,
                t: tag.t,
                qubit: (q + shift).rem_euclid(len) as usize,
                pulse: slot as u8,
                value,
                residual_ps: residual,
                accepted: residual.abs() <= half,
            }
        })
        .collect();
    Ok(DecodedStream {
        records,
        sequence_len: len as usize,
        sift_window_ps,
        duration_ps: stream.duration(),
    })
}

/// Qubit index and position inside the qubit frame (ps).
fn qubit_phase(clock: &ClockModel, tag: &TimeTag, k: i64, period: f64) -> (i64, f64) {
    let p = clock.phase_at(tag.t);
    let q = p.cycles.div_euclid(k);
    let within = (p.cycles.rem_euclid(k) as f64 + p.frac) / k as f64;
    (q, within * period)
}

/// Qubit-frame offset maximizing the count under the pulse template.
fn anchor_offset(folded: &[(i64, f64)], positions: &[f64], period: f64, width: f64) -> Option<f64> {
    if folded.is_empty() {
        return None;
    }
    let n = period.ceil() as usize;
    let mut hist = vec![0u64; n];
    for &(_, x) in folded {
        hist[(x as usize).min(n - 1)] += 1;
    }
    // Circular prefix sums over two periods.
    let mut prefix = vec![0u64; 2 * n + 1];
    for i in 0..2 * n {
        prefix[i + 1] = prefix[i] + hist[i % n];
    }
    let hw = (width / 2.0).round().max(1.0) as usize;
    let window_sum = |centre: usize| {
        let lo = (centre + n - hw % n) % n;
        let len = (2 * hw + 1).min(n);
        prefix[lo + len] - prefix[lo]
    };
    let mut best = (0usize, 0u64);
    for theta in 0..n {
        let s: u64 = positions.iter().map(|&p| window_sum((theta + p.round() as usize) % n)).sum();
        if s > best.1 {
            best = (theta, s);
        }
    }
    let theta = best.0 as f64;
    // Refine with the mean residual of tags under the template.
    let (mut sum, mut cnt) = (0.0, 0usize);
    for &(_, x) in folded {
        for &p in positions {
            let d = (x - theta - p + period / 2.0).rem_euclid(period) - period / 2.0;
            if d.abs() <= width / 2.0 {
                sum += d;
                cnt += 1;
            }
        }
    }
    let refined = if cnt > 0 { theta + sum / cnt as f64 } else { theta };
    Some(refined.rem_euclid(period))
}

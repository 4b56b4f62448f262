use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optimize::{optimize_detuning, OptimizeOptions};
use super::DemodStatus;
use crate::error::{Error, Result, Stage};
use crate::tagstream::{TagStream, Window, PS_PER_S};

pub const DRIFT_CSV_HEADER: &str = "t_center_ps,detuning_hz,cost,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackOptions {
    pub frame_s: f64,
    pub overlap_s: f64,
    /// Optimizer settings for the first frame; later frames skip the coarse scan.
    pub optimize: OptimizeOptions,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { frame_s: 30e-3, overlap_s: 20e-3, optimize: OptimizeOptions::default() }
    }
}

impl TrackOptions {
    fn lengths(&self) -> Result<(u64, u64)> {
        let frame = (self.frame_s * PS_PER_S).round();
        let overlap = (self.overlap_s * PS_PER_S).round();
        if !(frame > 0.0) || !(overlap >= 0.0) || overlap >= frame {
            return Err(Error::invalid(format!(
                "need frame > overlap >= 0, got frame {} s and overlap {} s",
                self.frame_s, self.overlap_s
            )));
        }
        Ok((frame as u64, overlap as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub t_center_ps: f64,
    /// Detuning from the trace's `f0_hz`.
    pub detuning_hz: f64,
    pub cost: f64,
    /// `Failed` marks a frame whose value was carried over from the last good one.
    pub status: DemodStatus,
}

/// Optimal detuning per sliding frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTrace {
    pub f0_hz: f64,
    pub frame_len_ps: u64,
    pub overlap_ps: u64,
    pub points: Vec<DriftPoint>,
}

impl DriftTrace {
    pub fn step_ps(&self) -> u64 {
        self.frame_len_ps - self.overlap_ps
    }

    pub fn failed_frames(&self) -> usize {
        self.points.iter().filter(|p| p.status == DemodStatus::Failed).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Serde(e.to_string());
        wr.write_record(DRIFT_CSV_HEADER.split(',')).map_err(err)?;
        for p in &self.points {
            wr.write_record([
                format!("{}", p.t_center_ps),
                format!("{}", p.detuning_hz),
                format!("{}", p.cost),
                p.status.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Sliding-frame drift trace. Each frame's search starts from the previous
/// frame's optimum; failed frames repeat the last good value and are marked.
pub fn track_drift(stream: &TagStream, f0_hz: f64, opts: &TrackOptions) -> Result<DriftTrace> {
    let (frame_len, overlap) = opts.lengths()?;
    let step = frame_len - overlap;
    if stream.duration() < frame_len {
        return Err(Error::Stage {
            stage: Stage::Tracking,
            message: format!("stream of {} ps is shorter than one {frame_len} ps frame", stream.duration()),
        });
    }
    let n_frames = ((stream.duration() - frame_len) / step + 1) as usize;
    let later = OptimizeOptions { scan_span_hz: 0.0, ..opts.optimize.clone() };
    let mut points = Vec::with_capacity(n_frames);
    let mut last_good: Option<f64> = None;
    for k in 0..n_frames {
        let start = k as u64 * step;
        let frame = Window::from_len(start, frame_len)?;
        let seed = last_good.unwrap_or(0.0);
        let o = if last_good.is_some() { &later } else { &opts.optimize };
        let est = optimize_detuning(stream, f0_hz + seed, frame, o)?;
        if est.is_failed() {
            if k == 0 {
                return Err(Error::Stage {
                    stage: Stage::Tracking,
                    message: format!("first frame failed: {}", est.diagnostic.unwrap_or_default()),
                });
            }
            let carried = super::cost::frame_cost(
                stream.window(frame),
                start,
                f0_hz + seed,
                opts.optimize.n_bins.unwrap_or_else(|| crate::tagstream::default_bin_count(PS_PER_S / f0_hz)),
            )
            .unwrap_or(0.0);
            points.push(DriftPoint {
                t_center_ps: frame.center(),
                detuning_hz: seed,
                cost: carried,
                status: DemodStatus::Failed,
            });
            continue;
        }
        let d = seed + est.detuning_hz;
        last_good = Some(d);
        points.push(DriftPoint { t_center_ps: frame.center(), detuning_hz: d, cost: est.cost, status: DemodStatus::Optimized });
    }
    Ok(DriftTrace { f0_hz, frame_len_ps: frame_len, overlap_ps: overlap, points })
}

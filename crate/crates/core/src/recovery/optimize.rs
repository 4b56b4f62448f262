use serde::{Deserialize, Serialize};

use super::cost::{cost_from_counts, frame_counts, frame_fraction};
use super::{DemodEstimate, DemodStatus};
use crate::error::{Error, Result};
use crate::optim::{NelderMead1d, NelderMeadOptions};
use crate::tagstream::{default_bin_count, TagStream, TimeTag, Window, PS_PER_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    /// Simplex spread (Hz).
    pub initial_spread_hz: f64,
    /// Converged once the simplex is narrower than this (Hz).
    pub tolerance_hz: f64,
    pub max_iterations: usize,
    /// Histogram bins; `None` picks the default for the period.
    pub n_bins: Option<usize>,
    /// Half-width of the coarse grid scanned before the simplex (Hz); 0 disables it.
    pub scan_span_hz: f64,
    pub scan_max_points: usize,
    pub min_tags: usize,
    /// Estimates less precise than this are flagged low-confidence (Hz).
    pub max_uncertainty_hz: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            initial_spread_hz: 50.0,
            tolerance_hz: 1.0,
            max_iterations: 200,
            n_bins: None,
            scan_span_hz: 200.0,
            scan_max_points: 401,
            min_tags: 100,
            max_uncertainty_hz: 5.0,
        }
    }
}

impl OptimizeOptions {
    fn simplex(&self) -> NelderMead1d<f64> {
        NelderMead1d::new(NelderMeadOptions {
            initial_spread: self.initial_spread_hz,
            tolerance: self.tolerance_hz,
            max_iterations: self.max_iterations,
            ..Default::default()
        })
    }
}

struct FrameCost<'a> {
    tags: &'a [TimeTag],
    start: u64,
    f_init: f64,
    counts: Vec<u64>,
}

impl FrameCost<'_> {
    fn at(&mut self, detuning: f64) -> f64 {
        let f = self.f_init + detuning;
        if !(f > 0.0) {
            return f64::INFINITY;
        }
        frame_counts(self.tags, self.start, f, &mut self.counts);
        cost_from_counts(&self.counts).unwrap_or(f64::INFINITY)
    }
}

/// One-sigma frequency uncertainty of a fold over `len_s` seconds: the circular
/// spread of the residues turned into a slope error over a uniform time base.
fn frequency_uncertainty(tags: &[TimeTag], start: u64, freq_hz: f64, len_s: f64) -> f64 {
    let k = freq_hz * 1e-12;
    let (mut c, mut s) = (0.0, 0.0);
    for tag in tags {
        let a = std::f64::consts::TAU * frame_fraction(tag.t, start, k);
        c += a.cos();
        s += a.sin();
    }
    let n = tags.len() as f64;
    let r = ((c * c + s * s).sqrt() / n).clamp(1e-300, 1.0);
    let sigma_cycles = (-2.0 * r.ln()).sqrt() / std::f64::consts::TAU;
    sigma_cycles * 12f64.sqrt() / (len_s * n.sqrt())
}

/// Fine detuning from `f_init` that minimizes the histogram-variance cost of `frame`.
///
/// A coarse grid of step `1/(4L)` over `+-scan_span_hz` picks the start of a
/// one-dimensional simplex search. Tags are folded relative to the frame
/// start, so shifting every tag and the frame by a constant leaves the result
/// unchanged.
pub fn optimize_detuning(
    stream: &TagStream,
    f_init: f64,
    frame: Window,
    opts: &OptimizeOptions,
) -> Result<DemodEstimate> {
    if !(f_init > 0.0) || !f_init.is_finite() {
        return Err(Error::invalid(format!("initial frequency must be positive, got {f_init}")));
    }
    if frame.is_empty() {
        return Err(Error::invalid("empty optimization frame"));
    }
    let tags = stream.window(frame);
    if tags.len() < opts.min_tags.max(2) {
        return Ok(DemodEstimate::failed(
            f_init,
            frame,
            format!("{} tags in the frame, need {}", tags.len(), opts.min_tags),
        ));
    }
    let n_bins = opts.n_bins.unwrap_or_else(|| default_bin_count(PS_PER_S / f_init));
    let mut j = FrameCost { tags, start: frame.start, f_init, counts: vec![0; n_bins] };
    let j_init = j.at(0.0);
    let len_s = frame.len() as f64 / PS_PER_S;

    let mut start = 0.0;
    if opts.scan_span_hz > 0.0 {
        let max_half = (opts.scan_max_points.max(3) - 1) / 2;
        let step = (1.0 / (4.0 * len_s)).max(opts.scan_span_hz / max_half as f64);
        let half = (opts.scan_span_hz / step).floor() as i64;
        let mut best = j_init;
        // Offsets ordered by distance from zero so ties keep the closer one.
        for k in (1..=half).flat_map(|k| [-k, k]) {
            let d = k as f64 * step;
            let v = j.at(d);
            if v < best {
                best = v;
                start = d;
            }
        }
    }

    let m = opts.simplex().minimize(|d| j.at(d), start);
    let detuning = m.x;
    let cost = m.value;
    let freq = f_init + detuning;
    let uncertainty = frequency_uncertainty(tags, frame.start, freq, len_s);
    let mut est = DemodEstimate {
        f0_hz: f_init,
        detuning_hz: detuning,
        frame,
        cost,
        status: DemodStatus::Optimized,
        uncertainty_hz: Some(uncertainty),
        low_confidence: uncertainty > opts.max_uncertainty_hz,
        diagnostic: None,
    };
    if !m.converged {
        est.status = DemodStatus::Failed;
        est.diagnostic = Some(format!("no convergence after {} iterations", m.iterations));
    } else if cost > j_init {
        est.status = DemodStatus::Failed;
        est.diagnostic = Some("optimum worse than the starting frequency".into());
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::tagstream::Channel;

    /// 1 GHz comb thinned to every 2000th pulse with deterministic +-30 ps jitter.
    fn comb(f: f64, len_ps: u64, offset: u64) -> TagStream {
        let p = PS_PER_S / f;
        let mut state = 7u64;
        let mut tags = Vec::new();
        let mut k = 0u64;
        loop {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = ((state >> 33) % 61) as f64 - 30.0;
            let t = (k as f64 * p + j + 100.0).round() as u64;
            if t >= len_ps {
                break;
            }
            tags.push(TimeTag::new(t + offset, Channel::Z0));
            k += 1000 + (state >> 20) % 2000;
        }
        TagStream::new(tags, len_ps + offset, BTreeMap::new()).unwrap()
    }

    #[test]
    fn recovers_detuned_start() {
        let f = 1.000_000_123e9;
        let s = comb(f, 30_000_000_000, 0);
        let w = Window::new(0, 30_000_000_000).unwrap();
        for init in [f - 150.0, f + 40.0, f] {
            let est = optimize_detuning(&s, init, w, &OptimizeOptions::default()).unwrap();
            assert_eq!(est.status, DemodStatus::Optimized, "{est:?}");
            assert!((est.frequency_hz() - f).abs() < 2.0, "{init}: {est:?}");
            assert!(!est.low_confidence);
        }
    }

    #[test]
    fn shifting_tags_and_frame_keeps_frequency() {
        let f = 1.000_000_050e9;
        let a = comb(f, 30_000_000_000, 0);
        let b = comb(f, 30_000_000_000, 123_456_789);
        let wa = Window::new(0, 30_000_000_000).unwrap();
        let wb = Window::new(123_456_789, 30_123_456_789).unwrap();
        let ea = optimize_detuning(&a, f - 80.0, wa, &OptimizeOptions::default()).unwrap();
        let eb = optimize_detuning(&b, f - 80.0, wb, &OptimizeOptions::default()).unwrap();
        assert_eq!(ea.frequency_hz(), eb.frequency_hz());
        assert_eq!(ea.cost, eb.cost);
    }

    #[test]
    fn starved_frame_fails() {
        let s = comb(1e9, 30_000_000_000, 0);
        let w = Window::new(0, 100_000_000).unwrap();
        let est = optimize_detuning(&s, 1e9, w, &OptimizeOptions::default()).unwrap();
        assert_eq!(est.status, DemodStatus::Failed);
    }

    #[test]
    fn iteration_cap_fails() {
        let s = comb(1e9, 30_000_000_000, 0);
        let w = Window::new(0, 30_000_000_000).unwrap();
        let opts = OptimizeOptions { max_iterations: 1, tolerance_hz: 1e-9, ..Default::default() };
        let est = optimize_detuning(&s, 1e9 + 3.0, w, &opts).unwrap();
        assert_eq!(est.status, DemodStatus::Failed);
        assert!(est.diagnostic.unwrap().contains("iterations"));
    }
}

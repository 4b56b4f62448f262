use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demod::{align_sequence_with, demodulate, windowed_qber, AlignOptions};
use crate::error::{Error, Result};
use crate::recovery::{fft_coarse_estimate, optimize_detuning, DemodEstimate, FftOptions, FftScalar, OptimizeOptions};
use crate::simulator::{derive_seed, simulate, Basis, Scenario, Simulation};
use crate::tagstream::{Window, PS_PER_S};

pub const COHERENCE_CSV_HEADER: &str = "noise_fwhm_hz,frame_ms,estimator,median_s,mean_s,runs";

/// How the demodulation frequency is estimated on the initial frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    FftOnly,
    Optimized,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::FftOnly => "fft_only",
            Estimator::Optimized => "optimized",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fft_only" | "fft" => Ok(Estimator::FftOnly),
            "optimized" | "opt" => Ok(Estimator::Optimized),
            _ => Err(Error::invalid(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceConfig {
    pub rate_hz: f64,
    /// Random-walk FWHM of the clock (Hz).
    pub noise_fwhm_hz: f64,
    /// Estimation frame length (s); also the FFT integration time.
    pub frame_s: f64,
    pub estimator: Estimator,
    /// Lock is lost once a window's QBER exceeds this.
    pub threshold: f64,
    pub runs: usize,
    pub seed: u64,
    /// Simulated duration per run (s).
    pub duration_s: f64,
    pub window_s: f64,
    pub step_s: f64,
    pub error_prob: f64,
    pub white_sigma_ps: f64,
    pub sample_period_ps: u64,
    pub sift_window_ps: f64,
    /// Each run offsets the transmitter's pulse line by a uniform draw from
    /// `[-max_offset_hz, max_offset_hz]`, so it never sits on the FFT grid.
    pub max_offset_hz: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            rate_hz: 500e3,
            noise_fwhm_hz: 1.0,
            frame_s: 5e-3,
            estimator: Estimator::Optimized,
            threshold: 0.11,
            runs: 200,
            seed: 1,
            duration_s: 5.0,
            window_s: 0.1,
            step_s: 0.01,
            error_prob: 0.0,
            white_sigma_ps: 40.0,
            sample_period_ps: 400,
            sift_window_ps: 200.0,
            max_offset_hz: 1000.0,
        }
    }
}

impl CoherenceConfig {
    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if !(self.frame_s > 0.0) || !(self.window_s > 0.0) || !(self.step_s > 0.0) {
            return Err(Error::invalid("frame_s, window_s and step_s must be positive"));
        }
        if !(self.duration_s >= self.frame_s + self.window_s) {
            return Err(Error::invalid("duration_s must cover the frame plus one window"));
        }
        if !(self.max_offset_hz >= 0.0) || !self.max_offset_hz.is_finite() {
            return Err(Error::invalid("max_offset_hz must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Static pulse-line offset of a run; the same for every noise magnitude.
    pub fn run_offset_hz(&self, run: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.seed, run as u64), 14));
        self.max_offset_hz * (2.0 * rng.random::<f64>() - 1.0)
    }

    fn scenario(&self, noise_fwhm_hz: f64, run: usize) -> Scenario {
        let base = Scenario::default();
        let pulses = base.pulse_positions_ps.len() as f64;
        Scenario {
            qubit_rate_hz: base.qubit_rate_hz + self.run_offset_hz(run) / pulses,
            rate_hz: self.rate_hz,
            duration_s: self.duration_s,
            error_prob: self.error_prob,
            seed: derive_seed(self.seed, run as u64),
            rw_fwhm_hz: noise_fwhm_hz,
            white_sigma_ps: self.white_sigma_ps,
            ..base
        }
    }
}

/// Lifetime of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub coherence_s: f64,
    /// Never lost lock; `coherence_s` is the simulated duration.
    pub censored: bool,
    /// The estimator failed; `coherence_s` is zero.
    pub failed: bool,
}

impl RunOutcome {
    fn failed() -> Self {
        Self { coherence_s: 0.0, censored: false, failed: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub noise_fwhm_hz: f64,
    pub frame_len_ps: u64,
    pub estimator: Estimator,
    pub median_s: f64,
    pub mean_s: f64,
    pub runs: usize,
    pub per_run: Vec<f64>,
    pub censored: usize,
    pub failed: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl CoherenceResult {
    fn from_outcomes(noise: f64, frame_len_ps: u64, estimator: Estimator, outcomes: &[RunOutcome]) -> Self {
        let per_run: Vec<f64> = outcomes.iter().map(|o| o.coherence_s).collect();
        let mut sorted = per_run.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            noise_fwhm_hz: noise,
            frame_len_ps,
            estimator,
            median_s: quantile(&sorted, 0.5),
            mean_s: per_run.iter().sum::<f64>() / per_run.len() as f64,
            runs: per_run.len(),
            per_run,
            censored: outcomes.iter().filter(|o| o.censored).count(),
            failed: outcomes.iter().filter(|o| o.failed).count(),
        }
    }

    /// First and third quartiles of the per-run lifetimes.
    pub fn quartiles(&self) -> (f64, f64) {
        let mut sorted = self.per_run.clone();
        sorted.sort_by(f64::total_cmp);
        (quantile(&sorted, 0.25), quantile(&sorted, 0.75))
    }

    pub fn frame_ms(&self) -> f64 {
        self.frame_len_ps as f64 / 1e9
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.noise_fwhm_hz,
            self.frame_ms(),
            self.estimator,
            self.median_s,
            self.mean_s,
            self.runs
        )
    }
}

pub fn write_grid_csv<W: Write>(results: &[CoherenceResult], mut w: W) -> Result<()> {
    let mut text = String::from(COHERENCE_CSV_HEADER);
    text.push('\n');
    for r in results {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(|e| Error::Serde(e.to_string()))
}

/// Lifetime of one simulated stream under each estimator, all estimated on `[0, frame_s)`.
pub fn evaluate_run(sim: &Simulation, frame_s: f64, cfg: &CoherenceConfig, estimators: &[Estimator]) -> Vec<RunOutcome> {
    let fft_opts = FftOptions {
        t_int_s: frame_s,
        sample_period_ps: cfg.sample_period_ps,
        search_band_hz: Some(sim.source.pulse_band(0.01)),
        ..FftOptions::default()
    };
    let coarse = match fft_coarse_estimate::<FftScalar>(&sim.stream, &fft_opts) {
        Ok(e) if !e.is_failed() => e,
        _ => return vec![RunOutcome::failed(); estimators.len()],
    };
    estimators
        .iter()
        .map(|&est| {
            let estimate = match est {
                Estimator::FftOnly => coarse.clone(),
                Estimator::Optimized => {
                    let opts = OptimizeOptions { scan_span_hz: 1.0 / frame_s, ..OptimizeOptions::default() };
                    match optimize_detuning(&sim.stream, coarse.f0_hz, coarse.frame, &opts) {
                        Ok(e) if !e.is_failed() => e,
                        _ => return RunOutcome::failed(),
                    }
                }
            };
            lifetime(sim, &estimate, cfg)
        })
        .collect()
}

fn lifetime(sim: &Simulation, estimate: &DemodEstimate, cfg: &CoherenceConfig) -> RunOutcome {
    let window_ps = (cfg.window_s * PS_PER_S) as u64;
    let step_ps = (cfg.step_s * PS_PER_S) as u64;
    let duration_s = sim.stream.duration() as f64 / PS_PER_S;
    let lost_at_start = RunOutcome { coherence_s: cfg.window_s / 2.0, censored: false, failed: false };
    let Ok(decoded) = demodulate(&sim.stream, estimate, &sim.source, cfg.sift_window_ps) else {
        return RunOutcome::failed();
    };
    let reference = sim.source.sequence();
    let align = AlignOptions {
        window: Window::new(0, estimate.frame.end + window_ps).ok(),
        ..AlignOptions::default()
    };
    let Ok(a) = align_sequence_with(&decoded, reference, &align) else {
        return lost_at_start;
    };
    let Ok(windows) = windowed_qber(&decoded, reference, a.offset, Basis::Z, window_ps, step_ps) else {
        return lost_at_start;
    };
    for w in &windows {
        let lost = w.report.is_none_or(|r| r.qber > cfg.threshold);
        if lost {
            return RunOutcome { coherence_s: w.window.center() / PS_PER_S, censored: false, failed: false };
        }
    }
    RunOutcome { coherence_s: duration_s, censored: true, failed: false }
}

/// Median lifetime over `cfg.runs` independent runs.
pub fn coherence_time(cfg: &CoherenceConfig) -> Result<CoherenceResult> {
    let grid = coherence_grid(cfg, &[cfg.noise_fwhm_hz], &[cfg.frame_s], &[cfg.estimator])?;
    Ok(grid.into_iter().next().expect("one grid point"))
}

/// Lifetimes over a noise x frame x estimator grid. Each (noise, run) pair
/// simulates one stream shared by every frame length and estimator, and the
/// same run index reuses the same random numbers across noise magnitudes.
pub fn coherence_grid(
    base: &CoherenceConfig,
    noises: &[f64],
    frames: &[f64],
    estimators: &[Estimator],
) -> Result<Vec<CoherenceResult>> {
    base.validate()?;
    for &fr in frames {
        CoherenceConfig { frame_s: fr, ..base.clone() }.validate()?;
    }
    if noises.is_empty() || frames.is_empty() || estimators.is_empty() {
        return Err(Error::invalid("empty coherence grid"));
    }
    for &nz in noises {
        base.scenario(nz, 0).validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..noises.len()).flat_map(|i| (0..base.runs).map(move |r| (i, r))).collect();
    // outcome[job][frame][estimator]
    let outcomes: Vec<Vec<Vec<RunOutcome>>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let sim = simulate(&base.scenario(noises[i], r))?;
            Ok(frames.iter().map(|&fr| evaluate_run(&sim, fr, base, estimators)).collect())
        })
        .collect::<Result<_>>()?;
    let mut results = Vec::new();
    for (i, &nz) in noises.iter().enumerate() {
        for (fi, &fr) in frames.iter().enumerate() {
            for (ei, &est) in estimators.iter().enumerate() {
                let runs: Vec<RunOutcome> = jobs
                    .iter()
                    .zip(&outcomes)
                    .filter(|((ji, _), _)| *ji == i)
                    .map(|(_, o)| o[fi][ei])
                    .collect();
                let frame_len_ps = (fr * PS_PER_S).round() as u64;
                results.push(CoherenceResult::from_outcomes(nz, frame_len_ps, est, &runs));
            }
        }
    }
    Ok(results)
}

//! Statistical tag-stream simulator.
//!
//! Pipeline: beta-distributed inter-arrivals ([`sample_arrivals`]) are snapped
//! onto the transmitter's pulse grid ([`encode_sequence`]), optionally mixed
//! with dark counts, and finally distorted by clock noise
//! ([`apply_clock_noise`]). Every stage is a pure function of its inputs and
//! a seed.

mod beta;
mod noise;
mod source;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagstream::{Channel, TagStream, TimeTag, PS_PER_S};

pub use beta::{
    beta_for_rate, beta_pdf, fit_beta, fit_beta_with, BetaArrivalModel, BetaRateMap, CALIBRATION_BAND_HZ,
    DEFAULT_SCALE_S, DEFAULT_X0_S, MIN_FIT_SAMPLES,
};
pub use noise::{
    apply_clock_noise, realize_random_walk, ClockNoiseModel, NoiseRealization, DEFAULT_CARRIER_HZ,
    DEFAULT_WHITE_SIGMA_PS, FWHM_PER_SIGMA,
};
pub use source::{
    add_dark_counts, encode_sequence, parse_sequence, random_sequence, sequence_to_string, Basis, Sequence,
    SourceConfig, Symbol, Truth, DEFAULT_QUBIT_RATE_HZ, DEFAULT_SEQUENCE_LEN, DEFAULT_SEQUENCE_SEED,
};

/// Derives an independent seed for sub-stream `index` of `seed` (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Detection times from i.i.d. beta inter-arrivals drawn with `model`.
///
/// Gaps are whole picoseconds: the dead-time floor plus the ceiling of the
/// sampled excess, so every gap is strictly longer than the floor.
pub fn sample_arrivals_with(model: &BetaArrivalModel<f64>, duration_s: f64, seed: u64) -> Result<TagStream> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    let duration = (duration_s * PS_PER_S).round() as u64;
    let floor_ps = (model.x0 * PS_PER_S).round() as u64;
    let scale_ps = model.s * PS_PER_S;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected = (duration_s / model.mean()).ceil() as usize;
    let mut tags = Vec::with_capacity(expected + expected / 16 + 16);
    let mut t = 0u64;
    loop {
        let excess = (model.sample_unit(&mut rng) * scale_ps).ceil().max(1.0) as u64;
        t = t.saturating_add(floor_ps + excess);
        if t > duration {
            break;
        }
        tags.push(TimeTag::new(t, Channel::Unknown));
    }
    let stream = TagStream::new(tags, duration, Default::default())?;
    Ok(stream.with_meta("source", "simulator").with_meta("beta", model.beta.to_string()))
}

/// Simulated detection times at `rate_hz` for `duration_s` seconds.
pub fn sample_arrivals(rate_hz: f64, duration_s: f64, seed: u64) -> Result<TagStream> {
    let model = beta_for_rate(rate_hz)?;
    let s = sample_arrivals_with(&model, duration_s, seed)?;
    Ok(s.with_meta("nominal_rate_hz", rate_hz.to_string()))
}

fn default_rate() -> f64 {
    500e3
}
fn default_duration() -> f64 {
    1.0
}
fn default_error_prob() -> f64 {
    0.01
}
fn default_seed() -> u64 {
    1
}
fn default_qubit_rate() -> f64 {
    DEFAULT_QUBIT_RATE_HZ
}
fn default_positions() -> Vec<f64> {
    vec![0.0, 800.0]
}
fn default_seq_len() -> usize {
    DEFAULT_SEQUENCE_LEN
}
fn default_seq_seed() -> u64 {
    DEFAULT_SEQUENCE_SEED
}
fn default_z_fraction() -> f64 {
    0.5
}
fn default_fwhm() -> f64 {
    100.0
}
fn default_mu_signal() -> f64 {
    0.7
}
fn default_mu_decoy() -> f64 {
    0.3
}
fn default_white() -> f64 {
    DEFAULT_WHITE_SIGMA_PS
}

/// Flat simulation scenario. Every key is optional; see the README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_error_prob")]
    pub error_prob: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_qubit_rate")]
    pub qubit_rate_hz: f64,
    #[serde(default = "default_positions")]
    pub pulse_positions_ps: Vec<f64>,
    #[serde(default = "default_seq_len")]
    pub sequence_len: usize,
    #[serde(default = "default_seq_seed")]
    pub sequence_seed: u64,
    #[serde(default = "default_z_fraction")]
    pub z_fraction: f64,
    #[serde(default = "default_fwhm")]
    pub pulse_fwhm_ps: f64,
    #[serde(default = "default_mu_signal")]
    pub mu_signal: f64,
    #[serde(default = "default_mu_decoy")]
    pub mu_decoy: f64,
    #[serde(default)]
    pub rw_fwhm_hz: f64,
    #[serde(default = "default_white")]
    pub white_sigma_ps: f64,
    /// Carrier for the random-walk offset; defaults to the pulse rate.
    #[serde(default)]
    pub carrier_hz: Option<f64>,
    /// Constant delay added to every tag (time of flight).
    #[serde(default)]
    pub time_offset_ps: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all scenario keys have defaults")
    }
}

fn key_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("{key}: {msg}"))
}

impl Scenario {
    pub fn source(&self) -> SourceConfig {
        SourceConfig {
            qubit_rate_hz: self.qubit_rate_hz,
            pulse_positions_ps: self.pulse_positions_ps.clone(),
            sequence: Sequence(random_sequence(self.sequence_len, self.z_fraction, self.sequence_seed)),
            mu_signal: self.mu_signal,
            mu_decoy: self.mu_decoy,
            pulse_fwhm_ps: self.pulse_fwhm_ps,
        }
    }

    pub fn noise(&self) -> ClockNoiseModel {
        ClockNoiseModel {
            rw_fwhm_hz: self.rw_fwhm_hz,
            white_sigma_ps: self.white_sigma_ps,
            carrier_hz: self.carrier_hz.unwrap_or_else(|| self.qubit_rate_hz * self.pulse_positions_ps.len() as f64),
            seed: derive_seed(self.seed, 13),
        }
    }

    /// Checks every key, naming the offending one on failure.
    pub fn validate(&self) -> Result<()> {
        BetaRateMap::default().model_for(self.rate_hz).map_err(|e| key_err("rate_hz", e))?;
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(key_err("duration_s", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.error_prob) {
            return Err(key_err("error_prob", "must lie in [0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0) {
            return Err(key_err("dark_rate_hz", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.z_fraction) {
            return Err(key_err("z_fraction", "must lie in [0, 1]"));
        }
        if self.sequence_len == 0 || !self.sequence_len.is_power_of_two() {
            return Err(key_err("sequence_len", "must be a power of two"));
        }
        if !(self.qubit_rate_hz > 0.0) {
            return Err(key_err("qubit_rate_hz", "must be positive"));
        }
        if !(self.rw_fwhm_hz >= 0.0) {
            return Err(key_err("rw_fwhm_hz", "must be non-negative"));
        }
        if !(self.white_sigma_ps >= 0.0) {
            return Err(key_err("white_sigma_ps", "must be non-negative"));
        }
        if let Some(c) = self.carrier_hz {
            if !(c > 0.0) {
                return Err(key_err("carrier_hz", "must be positive"));
            }
        }
        self.source().validate().map_err(|e| key_err("pulse_positions_ps", e))?;
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Tags on the ideal transmitter grid, before clock noise.
    pub clean: TagStream,
    /// Tags as a receiver would record them.
    pub stream: TagStream,
    pub truth: Truth,
    pub source: SourceConfig,
}

/// Runs the whole simulation pipeline for a scenario.
pub fn simulate(sc: &Scenario) -> Result<Simulation> {
    sc.validate()?;
    let source = sc.source();
    let arrivals = sample_arrivals(sc.rate_hz, sc.duration_s, derive_seed(sc.seed, 10))?;
    let (encoded, truth) = encode_sequence(&arrivals, &source, sc.error_prob, derive_seed(sc.seed, 11))?;
    let (mut clean, truth) = add_dark_counts(&encoded, &truth, sc.dark_rate_hz, derive_seed(sc.seed, 12))?;
    if sc.time_offset_ps > 0 {
        clean = clean.shifted(sc.time_offset_ps);
    }
    let stream = apply_clock_noise(&clean, &sc.noise())?.with_meta("seed", sc.seed.to_string());
    Ok(Simulation { clean, stream, truth, source })
}

//! Clock-noise injection: random-walk frequency drift plus white timing jitter.
//!
//! The instantaneous fractional frequency offset of the clock performs a
//! Gaussian random walk whose marginal after one second has a FWHM of
//! `rw_fwhm_hz`. The timing error is its time integral. Between two tags the
//! pair (frequency step, integrated phase step) is drawn exactly from their
//! joint Gaussian law, so the discretization does not depend on tag spacing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::tagstream::{TagStream, TimeTag, PS_PER_S};

/// `2 sqrt(2 ln 2)`: ratio of a Gaussian's FWHM to its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
/// Default white timing jitter (ps).
pub const DEFAULT_WHITE_SIGMA_PS: f64 = 40.0;
/// Default clock carrier that the frequency offset is quoted against (Hz).
pub const DEFAULT_CARRIER_HZ: f64 = 1.190_473_4e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockNoiseModel {
    /// FWHM of the frequency offset after one second of random walk (Hz).
    pub rw_fwhm_hz: f64,
    /// Standard deviation of the white jitter (ps).
    pub white_sigma_ps: f64,
    /// Carrier the frequency offset refers to (Hz).
    pub carrier_hz: f64,
    pub seed: u64,
}

impl Default for ClockNoiseModel {
    fn default() -> Self {
        Self { rw_fwhm_hz: 0.0, white_sigma_ps: DEFAULT_WHITE_SIGMA_PS, carrier_hz: DEFAULT_CARRIER_HZ, seed: 0 }
    }
}

impl ClockNoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rw_fwhm_hz >= 0.0) || !self.rw_fwhm_hz.is_finite() {
            return Err(Error::invalid(format!("rw_fwhm_hz must be non-negative, got {}", self.rw_fwhm_hz)));
        }
        if !(self.white_sigma_ps >= 0.0) || !self.white_sigma_ps.is_finite() {
            return Err(Error::invalid(format!("white_sigma_ps must be non-negative, got {}", self.white_sigma_ps)));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::invalid(format!("carrier_hz must be positive, got {}", self.carrier_hz)));
        }
        Ok(())
    }

    /// Random-walk step deviation of the frequency offset per sqrt(second).
    pub fn sigma_f(&self) -> f64 {
        self.rw_fwhm_hz / FWHM_PER_SIGMA
    }
}

/// Random-walk state sampled at each tag time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseRealization {
    /// Timing error W(t) in picoseconds (positive = tag arrives late).
    pub phase_ps: Vec<f64>,
    /// Frequency offset in Hz.
    pub freq_offset_hz: Vec<f64>,
}

/// Samples the random-walk process at the (sorted) times `times_ps`, starting
/// from zero offset and zero phase at t = 0.
pub fn realize_random_walk(times_ps: &[u64], model: &ClockNoiseModel) -> Result<NoiseRealization> {
    model.validate()?;
    let sigma = model.sigma_f();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.seed, 1));
    let mut out = NoiseRealization {
        phase_ps: Vec::with_capacity(times_ps.len()),
        freq_offset_hz: Vec::with_capacity(times_ps.len()),
    };
    let (mut f, mut w, mut last) = (0.0f64, 0.0f64, 0u64);
    let k = 0.5 / 3f64.sqrt();
    for &t in times_ps {
        let dt = t.saturating_sub(last) as f64 / PS_PER_S;
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        if sigma > 0.0 && dt > 0.0 {
            // B = frequency increment / sigma, I = its time integral / sigma:
            // Var B = dt, Var I = dt^3/3, Cov = dt^2/2.
            let sdt = dt.sqrt();
            let b = sdt * z1;
            let i = dt * sdt * (0.5 * z1 + k * z2);
            w += (f * dt + sigma * i) / model.carrier_hz * PS_PER_S;
            f += sigma * b;
        }
        last = last.max(t);
        out.phase_ps.push(w);
        out.freq_offset_hz.push(f);
    }
    Ok(out)
}

/// Applies `t' = t + W(t) + g`, with W the random-walk timing error and
/// g ~ N(0, white_sigma^2). Re-sorts if jitter reorders neighbouring tags.
pub fn apply_clock_noise(stream: &TagStream, model: &ClockNoiseModel) -> Result<TagStream> {
    let times: Vec<u64> = stream.tags().iter().map(|t| t.t).collect();
    let walk = realize_random_walk(&times, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.seed, 2));
    let mut tags = Vec::with_capacity(stream.len());
    for (i, tag) in stream.tags().iter().enumerate() {
        let g: f64 = if model.white_sigma_ps > 0.0 {
            model.white_sigma_ps * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        } else {
            0.0
        };
        let t = (tag.t as f64 + walk.phase_ps[i] + g).round().max(0.0) as u64;
        tags.push(TimeTag::new(t, tag.channel));
    }
    let sorted = tags.windows(2).all(|w| w[0].t <= w[1].t);
    let mut out = if sorted {
        let duration = stream.duration().max(tags.last().map_or(0, |t| t.t));
        TagStream::new(tags, duration, stream.meta().clone())?
    } else {
        let mut s = TagStream::from_unsorted(tags, stream.duration());
        for (k, v) in stream.meta() {
            s = s.with_meta(k.clone(), v.clone());
        }
        s
    };
    if model.rw_fwhm_hz > 0.0 || model.white_sigma_ps > 0.0 {
        out = out.with_meta("clock_noise", format!("rw_fwhm_hz={} white_sigma_ps={}", model.rw_fwhm_hz, model.white_sigma_ps));
    }
    Ok(out)
}

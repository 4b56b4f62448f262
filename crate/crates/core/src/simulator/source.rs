//! Transmitter description and time-bin sequence encoding.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagstream::{Channel, TagStream, TimeTag, PS_PER_S};

/// Qubit generation rate of the reference source; twice this is the pulse line near 1.1904734 GHz.
pub const DEFAULT_QUBIT_RATE_HZ: f64 = 595.2367e6;
pub const DEFAULT_SEQUENCE_LEN: usize = 4096;
pub const DEFAULT_SEQUENCE_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Transmitted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    /// Z basis, photon in the early bin (bit 0).
    ZEarly,
    /// Z basis, photon in the late bin (bit 1).
    ZLate,
    /// X basis: both bins populated.
    X,
}

impl Symbol {
    pub fn basis(self) -> Basis {
        match self {
            Symbol::ZEarly | Symbol::ZLate => Basis::Z,
            Symbol::X => Basis::X,
        }
    }

    /// Z-basis bit, `None` for X.
    pub fn bit(self) -> Option<u8> {
        match self {
            Symbol::ZEarly => Some(0),
            Symbol::ZLate => Some(1),
            Symbol::X => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::ZEarly => '0',
            Symbol::ZLate => '1',
            Symbol::X => 'X',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '0' => Some(Symbol::ZEarly),
            '1' => Some(Symbol::ZLate),
            'X' | 'x' | '+' => Some(Symbol::X),
            _ => None,
        }
    }
}

/// Parses a symbol string (`0`, `1`, `X`; whitespace ignored).
pub fn parse_sequence(s: &str) -> Result<Vec<Symbol>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .enumerate()
        .map(|(i, c)| Symbol::from_char(c).ok_or_else(|| Error::invalid(format!("bad symbol {c:?} at position {i}"))))
        .collect()
}

pub fn sequence_to_string(seq: &[Symbol]) -> String {
    seq.iter().map(|s| s.as_char()).collect()
}

/// Newtype for sequences serialized as compact symbol strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence(pub Vec<Symbol>);

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&sequence_to_string(&self.0))
    }
}

impl FromStr for Sequence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_sequence(s).map(Sequence)
    }
}

impl Serialize for Sequence {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Sequence {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Random sequence: Z with probability `z_fraction` (split evenly between bits), X otherwise.
pub fn random_sequence(len: usize, z_fraction: f64, seed: u64) -> Vec<Symbol> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < z_fraction {
                if rng.random::<bool>() {
                    Symbol::ZLate
                } else {
                    Symbol::ZEarly
                }
            } else {
                Symbol::X
            }
        })
        .collect()
}

/// Transmitter truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub qubit_rate_hz: f64,
    /// Pulse offsets inside a qubit frame (ps), strictly increasing.
    pub pulse_positions_ps: Vec<f64>,
    pub sequence: Sequence,
    pub mu_signal: f64,
    pub mu_decoy: f64,
    pub pulse_fwhm_ps: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            qubit_rate_hz: DEFAULT_QUBIT_RATE_HZ,
            pulse_positions_ps: vec![0.0, 800.0],
            sequence: Sequence(random_sequence(DEFAULT_SEQUENCE_LEN, 0.5, DEFAULT_SEQUENCE_SEED)),
            mu_signal: 0.7,
            mu_decoy: 0.3,
            pulse_fwhm_ps: 100.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.qubit_rate_hz > 0.0) || !self.qubit_rate_hz.is_finite() {
            return Err(Error::invalid(format!("qubit_rate_hz must be positive, got {}", self.qubit_rate_hz)));
        }
        let period = self.qubit_period_ps();
        let pos = &self.pulse_positions_ps;
        if pos.len() != 2 {
            return Err(Error::invalid("pulse_positions_ps must hold exactly two entries (early, late)"));
        }
        if pos[0] < 0.0 || pos.windows(2).any(|w| w[1] <= w[0]) || pos[pos.len() - 1] >= period {
            return Err(Error::invalid(format!(
                "pulse_positions_ps must be strictly increasing within [0, {period:.3}) ps, got {pos:?}"
            )));
        }
        let n = self.sequence.0.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("sequence length must be a power of two, got {n}")));
        }
        if !(self.pulse_fwhm_ps > 0.0) {
            return Err(Error::invalid("pulse_fwhm_ps must be positive"));
        }
        Ok(())
    }

    pub fn qubit_period_ps(&self) -> f64 {
        PS_PER_S / self.qubit_rate_hz
    }

    /// Pulse-level repetition rate (pulses per qubit times qubit rate).
    pub fn pulse_rate_hz(&self) -> f64 {
        self.qubit_rate_hz * self.pulse_positions_ps.len() as f64
    }

    pub fn sequence(&self) -> &[Symbol] {
        &self.sequence.0
    }

    /// Frequency band of +-`fraction` around the pulse line, for FFT peak search.
    pub fn pulse_band(&self, fraction: f64) -> (f64, f64) {
        let f = self.pulse_rate_hz();
        (f * (1.0 - fraction), f * (1.0 + fraction))
    }
}

/// Ground truth for every emitted tag, stored column-wise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Truth {
    pub qubit_rate_hz: f64,
    pub sequence: String,
    /// Absolute qubit index of each tag (dark counts: the frame they fell in).
    pub qubit: Vec<u64>,
    /// Emitted pulse index (0 early, 1 late); -1 for dark counts.
    pub pulse: Vec<i8>,
    /// Transmitted Z bit; -1 for X symbols and dark counts.
    pub bit: Vec<i8>,
    pub flipped: Vec<bool>,
    pub dark: Vec<bool>,
}

impl Truth {
    pub fn len(&self) -> usize {
        self.qubit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qubit.is_empty()
    }

    fn push(&mut self, qubit: u64, pulse: i8, bit: i8, flipped: bool, dark: bool) {
        self.qubit.push(qubit);
        self.pulse.push(pulse);
        self.bit.push(bit);
        self.flipped.push(flipped);
        self.dark.push(dark);
    }

    /// Reorders the columns by `order` (indices into the current rows).
    pub(crate) fn permute(&mut self, order: &[usize]) {
        self.qubit = order.iter().map(|&i| self.qubit[i]).collect();
        self.pulse = order.iter().map(|&i| self.pulse[i]).collect();
        self.bit = order.iter().map(|&i| self.bit[i]).collect();
        self.flipped = order.iter().map(|&i| self.flipped[i]).collect();
        self.dark = order.iter().map(|&i| self.dark[i]).collect();
    }
}

/// Snaps raw arrivals onto the pulse grid dictated by the repeating sequence.
///
/// Qubit `n = floor(t / period)` emits symbol `sequence[n mod len]`; Z symbols
/// put the tag on their bin, flipped to the other bin with probability
/// `error_prob`; X symbols pick either bin at random. Z tags are labeled `Z0`
/// (the single Z detector), X tags `X`.
pub fn encode_sequence(
    arrivals: &TagStream,
    src: &SourceConfig,
    error_prob: f64,
    seed: u64,
) -> Result<(TagStream, Truth)> {
    src.validate()?;
    if !(0.0..=1.0).contains(&error_prob) {
        return Err(Error::invalid(format!("error_prob must lie in [0, 1], got {error_prob}")));
    }
    let period = src.qubit_period_ps();
    let seq = src.sequence();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Truth {
        qubit_rate_hz: src.qubit_rate_hz,
        sequence: sequence_to_string(seq),
        ..Default::default()
    };
    let mut tags = Vec::with_capacity(arrivals.len());
    for tag in arrivals.tags() {
        let n = (tag.t as f64 / period).floor() as u64;
        let symbol = seq[(n % seq.len() as u64) as usize];
        let (pulse, flipped) = match symbol {
            Symbol::ZEarly | Symbol::ZLate => {
                let bit = symbol.bit().unwrap_or(0) as usize;
                let flip = error_prob > 0.0 && rng.random::<f64>() < error_prob;
                (if flip { 1 - bit } else { bit }, flip)
            }
            Symbol::X => (rng.random_range(0..2usize), false),
        };
        let t = (n as f64 * period + src.pulse_positions_ps[pulse]).round() as u64;
        let channel = if symbol.basis() == Basis::Z { Channel::Z0 } else { Channel::X };
        tags.push(TimeTag::new(t, channel));
        truth.push(n, pulse as i8, symbol.bit().map_or(-1, |b| b as i8), flipped, false);
    }
    let duration = arrivals.duration().max(tags.last().map_or(0, |t| t.t));
    let stream = TagStream::new(tags, duration, arrivals.meta().clone())?;
    Ok((stream, truth))
}

/// Adds uniform background counts at `rate_hz`, split evenly between the Z and
/// X detectors, and merges them into the stream and its truth record.
pub fn add_dark_counts(stream: &TagStream, truth: &Truth, rate_hz: f64, seed: u64) -> Result<(TagStream, Truth)> {
    if rate_hz < 0.0 || !rate_hz.is_finite() {
        return Err(Error::invalid(format!("dark count rate must be non-negative, got {rate_hz}")));
    }
    if truth.len() != stream.len() {
        return Err(Error::invalid("truth record does not match stream length"));
    }
    if rate_hz == 0.0 {
        return Ok((stream.clone(), truth.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = rand_distr::Exp::new(rate_hz).map_err(|e| Error::invalid(e.to_string()))?;
    let period = PS_PER_S / truth.qubit_rate_hz;
    let mut tags: Vec<TimeTag> = stream.tags().to_vec();
    let mut merged = truth.clone();
    let mut t = 0.0f64;
    loop {
        t += rand_distr::Distribution::<f64>::sample(&exp, &mut rng) * PS_PER_S;
        if t >= stream.duration() as f64 {
            break;
        }
        let ch = if rng.random::<bool>() { Channel::Z0 } else { Channel::X };
        tags.push(TimeTag::new(t as u64, ch));
        merged.push((t / period).floor() as u64, -1, -1, false, true);
    }
    let mut order: Vec<usize> = (0..tags.len()).collect();
    order.sort_by_key(|&i| tags[i].t);
    let tags: Vec<TimeTag> = order.iter().map(|&i| tags[i]).collect();
    merged.permute(&order);
    let out = TagStream::new(tags, stream.duration(), stream.meta().clone())?;
    Ok((out, merged))
}

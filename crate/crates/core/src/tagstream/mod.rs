//! Time-tag data model, file I/O, and the folding/binning primitives.
//!
//! Timestamps are integer picoseconds. Modular arithmetic against a
//! frequency goes through [`Phase`], which keeps the accumulated cycle
//! count and the fractional part separately so that folding a tag at
//! `t ~ 1e13 ps` loses no more than a few femtoseconds.

mod fold;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fold::{
    binarize, default_bin_count, fold, fold_residues, histogram, FoldedSet, Histogram, Phase,
};
pub use io::{load_tags, save_tags, TagFormat, BINARY_HEADER_LEN, BINARY_MAGIC, BINARY_RECORD_LEN, BINARY_VERSION};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Detector channel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Z0,
    Z1,
    X,
    Unknown,
}

impl Channel {
    /// Byte code used by the binary format.
    pub fn code(self) -> u8 {
        match self {
            Channel::Z0 => 0,
            Channel::Z1 => 1,
            Channel::X => 2,
            Channel::Unknown => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Z0),
            1 => Some(Channel::Z1),
            2 => Some(Channel::X),
            255 => Some(Channel::Unknown),
            _ => None,
        }
    }

    /// True for either Z-basis detector.
    pub fn is_z(self) -> bool {
        matches!(self, Channel::Z0 | Channel::Z1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Z0 => "Z0",
            Channel::Z1 => "Z1",
            Channel::X => "X",
            Channel::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z0" | "z0" => Ok(Channel::Z0),
            "Z1" | "z1" => Ok(Channel::Z1),
            "X" | "x" => Ok(Channel::X),
            "Unknown" | "unknown" | "?" => Ok(Channel::Unknown),
            other => Err(Error::invalid(format!("unknown channel label {other:?}"))),
        }
    }
}

/// A single detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    /// Picoseconds since acquisition start.
    pub t: u64,
    pub channel: Channel,
}

impl TimeTag {
    pub fn new(t: u64, channel: Channel) -> Self {
        Self { t, channel }
    }
}

/// Half-open time window `[start, end)` in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!("empty window [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    /// Window of length `len` starting at `start`.
    pub fn from_len(start: u64, len: u64) -> Result<Self> {
        Self::new(start, start.saturating_add(len))
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn center(&self) -> f64 {
        (self.start as f64 + self.end as f64) / 2.0
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Sorted, immutable sequence of detection events plus acquisition metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    duration: u64,
    meta: BTreeMap<String, String>,
}

impl TagStream {
    /// Builds a stream from tags that must already be sorted and lie in `[0, duration]`.
    pub fn new(tags: Vec<TimeTag>, duration: u64, meta: BTreeMap<String, String>) -> Result<Self> {
        if let Some(pos) = tags.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::invalid(format!("tags not sorted at index {}", pos + 1)));
        }
        if let Some(last) = tags.last() {
            if last.t > duration {
                return Err(Error::invalid(format!(
                    "tag at {} ps lies beyond stream duration {} ps",
                    last.t, duration
                )));
            }
        }
        Ok(Self { tags, duration, meta })
    }

    /// Sorts `tags` (stably) and builds a stream; the duration is extended to cover the last tag.
    pub fn from_unsorted(mut tags: Vec<TimeTag>, duration: u64) -> Self {
        tags.sort_by_key(|t| t.t);
        let duration = duration.max(tags.last().map_or(0, |t| t.t));
        Self { tags, duration, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Detections per second over the whole acquisition.
    pub fn detection_rate(&self) -> f64 {
        if self.duration == 0 {
            return 0.0;
        }
        self.tags.len() as f64 / (self.duration as f64 / PS_PER_S)
    }

    /// Index range of the tags inside `window`.
    pub fn window_range(&self, window: Window) -> std::ops::Range<usize> {
        let lo = self.tags.partition_point(|t| t.t < window.start);
        let hi = self.tags.partition_point(|t| t.t < window.end);
        lo..hi
    }

    /// Tags inside `window`.
    pub fn window(&self, window: Window) -> &[TimeTag] {
        &self.tags[self.window_range(window)]
    }

    /// Number of tags inside `window`.
    pub fn count_in(&self, window: Window) -> usize {
        self.window_range(window).len()
    }

    /// The same events shifted later by `offset` picoseconds.
    pub fn shifted(&self, offset: u64) -> Self {
        let tags = self.tags.iter().map(|t| TimeTag::new(t.t + offset, t.channel)).collect();
        Self { tags, duration: self.duration + offset, meta: self.meta.clone() }
    }
}

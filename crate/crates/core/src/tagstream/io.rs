//! Tag file formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PCTS"
//! 4       2     version (1)
//! 6       8     stream duration in ps (0 = use last tag)
//! 14      2     reserved, zero
//! 16      9*n   records: u64 t_ps, u8 channel code
//! ```
//!
//! Channel codes: 0 = Z0, 1 = Z1, 2 = X, 255 = Unknown.
//!
//! CSV layout: header `t_ps,channel`, one row per tag, channel written as
//! `Z0`, `Z1`, `X` or `Unknown`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Channel, TagStream, TimeTag};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PCTS";
pub const BINARY_VERSION: u16 = 1;
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_RECORD_LEN: usize = 9;

const UNSORTED_WARNING: &str = "input was not sorted by time; sorted on load";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFormat {
    Binary,
    Csv,
}

impl TagFormat {
    /// Guesses the format from a file extension: `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Binary,
        }
    }
}

impl FromStr for TagFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "bin" => Ok(TagFormat::Binary),
            "csv" => Ok(TagFormat::Csv),
            other => Err(Error::invalid(format!("unknown tag format {other:?}"))),
        }
    }
}

fn finish(tags: Vec<TimeTag>, duration: u64) -> Result<TagStream> {
    if tags.is_empty() {
        return Err(Error::NoTags);
    }
    let sorted = tags.windows(2).all(|w| w[0].t <= w[1].t);
    let last = tags.iter().map(|t| t.t).max().unwrap_or(0);
    let duration = if duration == 0 { last } else { duration.max(last) };
    if sorted {
        TagStream::new(tags, duration, BTreeMap::new())
    } else {
        log::warn!("{UNSORTED_WARNING}");
        Ok(TagStream::from_unsorted(tags, duration).with_meta("warning", UNSORTED_WARNING))
    }
}

/// Reads a tag file.
pub fn load_tags(path: impl AsRef<Path>, format: TagFormat) -> Result<TagStream> {
    let path = path.as_ref();
    match format {
        TagFormat::Binary => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
        TagFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            decode_csv(file)
        }
    }
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse { location, message: message.into() }
}

/// Decodes the binary format from memory.
pub(crate) fn decode_binary(bytes: &[u8]) -> Result<TagStream> {
    if bytes.is_empty() {
        return Err(Error::NoTags);
    }
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(parse_err("byte 0".into(), format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(parse_err("byte 0".into(), "bad magic, expected \"PCTS\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(parse_err("byte 4".into(), format!("unsupported version {version}")));
    }
    let duration = u64::from_le_bytes(bytes[6..14].try_into().expect("8-byte slice"));
    let body = &bytes[BINARY_HEADER_LEN..];
    let full = body.len() / BINARY_RECORD_LEN;
    if body.len() % BINARY_RECORD_LEN != 0 {
        let offset = BINARY_HEADER_LEN + full * BINARY_RECORD_LEN;
        return Err(parse_err(
            format!("byte {offset}"),
            format!("truncated record ({} of {BINARY_RECORD_LEN} bytes)", body.len() % BINARY_RECORD_LEN),
        ));
    }
    let mut tags = Vec::with_capacity(full);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8-byte slice"));
        let channel = Channel::from_code(rec[8]).ok_or_else(|| {
            let offset = BINARY_HEADER_LEN + i * BINARY_RECORD_LEN + 8;
            parse_err(format!("byte {offset}"), format!("unknown channel code {}", rec[8]))
        })?;
        tags.push(TimeTag { t, channel });
    }
    finish(tags, duration)
}

fn decode_csv(reader: impl Read) -> Result<TagStream> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err("line 1".into(), e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(Error::NoTags);
    }
    if headers.len() != 2 || &headers[0] != "t_ps" || &headers[1] != "channel" {
        return Err(parse_err("line 1".into(), format!("expected header t_ps,channel, got {headers:?}")));
    }
    let mut tags = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(format!("line {line}"), "expected 2 fields"));
        }
        let t = rec[0]
            .parse::<u64>()
            .map_err(|e| parse_err(format!("line {line}"), format!("bad t_ps {:?}: {e}", &rec[0])))?;
        let channel = Channel::from_str(&rec[1]).map_err(|e| parse_err(format!("line {line}"), e.to_string()))?;
        tags.push(TimeTag { t, channel });
    }
    finish(tags, 0)
}

/// Encodes the binary format into memory.
pub(crate) fn encode_binary(stream: &TagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.duration().to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for tag in stream.tags() {
        out.extend_from_slice(&tag.t.to_le_bytes());
        out.push(tag.channel.code());
    }
    out
}

/// Writes a tag file. Metadata is not persisted by either format.
pub fn save_tags(stream: &TagStream, path: impl AsRef<Path>, format: TagFormat) -> Result<()> {
    let path = path.as_ref();
    if stream.is_empty() {
        return Err(Error::NoTags);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        TagFormat::Binary => {
            w.write_all(&encode_binary(stream)).map_err(|e| Error::io(path, e))?;
        }
        TagFormat::Csv => {
            writeln!(w, "t_ps,channel").map_err(|e| Error::io(path, e))?;
            for tag in stream.tags() {
                writeln!(w, "{},{}", tag.t, tag.channel).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

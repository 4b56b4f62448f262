use serde::{Deserialize, Serialize};

use super::{Decoded, DecodedRecord, DecodedStream};
use crate::error::{Error, Result};
use crate::simulator::{Basis, Symbol};
use crate::tagstream::Window;

pub const QBER_CSV_HEADER: &str = "loss_db,rate_hz,qber,sifted,errors,offset";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    /// Minimum accepted Z records entering the correlation.
    pub min_records: usize,
    /// Best agreement must reach this fraction.
    pub min_agreement: f64,
    /// Only records inside this window take part.
    pub window: Option<Window>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { min_records: 1000, min_agreement: 0.6, window: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Reference index of a record is `(qubit + offset) mod len`.
    pub offset: usize,
    pub agreement: f64,
    pub records: usize,
}

/// Sequence offset maximizing agreement between decoded Z bits and the reference.
pub fn align_sequence(decoded: &DecodedStream, reference: &[Symbol]) -> Result<usize> {
    align_sequence_with(decoded, reference, &AlignOptions::default()).map(|a| a.offset)
}

/// Circular cross-correlation of decoded Z bits against the reference.
///
/// Only reference positions holding a Z symbol count. Ties go to the smallest offset.
pub fn align_sequence_with(decoded: &DecodedStream, reference: &[Symbol], opts: &AlignOptions) -> Result<Alignment> {
    let n = reference.len();
    if n == 0 || n != decoded.sequence_len {
        return Err(Error::invalid(format!(
            "reference holds {n} symbols but the decoder used {}",
            decoded.sequence_len
        )));
    }
    let mut ones = vec![0u64; n];
    let mut zeros = vec![0u64; n];
    let mut records = 0usize;
    for r in decoded.accepted() {
        if opts.window.is_some_and(|w| !w.contains(r.t)) {
            continue;
        }
        if let Decoded::Bit(b) = r.value {
            records += 1;
            if b == 0 {
                zeros[r.qubit] += 1;
            } else {
                ones[r.qubit] += 1;
            }
        }
    }
    if records < opts.min_records {
        return Err(Error::InsufficientData(format!(
            "{records} accepted Z records for alignment, need {}",
            opts.min_records
        )));
    }
    let occupied: Vec<usize> = (0..n).filter(|&i| ones[i] + zeros[i] > 0).collect();
    let mut best = Alignment { offset: 0, agreement: -1.0, records };
    for s in 0..n {
        let (mut agree, mut total) = (0u64, 0u64);
        for &i in &occupied {
            match reference[(i + s) % n] {
                Symbol::ZEarly => {
                    agree += zeros[i];
                    total += zeros[i] + ones[i];
                }
                Symbol::ZLate => {
                    agree += ones[i];
                    total += zeros[i] + ones[i];
                }
                Symbol::X => {}
            }
        }
        let a = if total > 0 { agree as f64 / total as f64 } else { 0.0 };
        if a > best.agreement {
            best = Alignment { offset: s, agreement: a, records };
        }
    }
    if best.agreement < opts.min_agreement {
        return Err(Error::AlignmentFailed { agreement: best.agreement, required: opts.min_agreement });
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberReport {
    pub basis: Basis,
    pub sifted_count: u64,
    pub error_count: u64,
    pub qber: f64,
    pub detection_rate_hz: f64,
    pub offset: usize,
}

impl QberReport {
    /// `loss_db,rate_hz,qber,sifted,errors,offset`; the loss column is empty when unknown.
    pub fn csv_row(&self, loss_db: Option<f64>) -> String {
        format!(
            "{},{},{},{},{},{}",
            loss_db.map(|l| l.to_string()).unwrap_or_default(),
            self.detection_rate_hz,
            self.qber,
            self.sifted_count,
            self.error_count,
            self.offset
        )
    }
}

/// `(sifted, error)` contribution of one accepted record.
fn tally(r: &DecodedRecord, reference: &[Symbol], offset: usize, basis: Basis) -> (u64, u64) {
    let sym = reference[(r.qubit + offset) % reference.len()];
    match (basis, r.value) {
        (Basis::Z, Decoded::Bit(b)) => match sym.bit() {
            Some(expected) => (1, u64::from(expected != b)),
            None => (0, 0),
        },
        (Basis::X, Decoded::X) => (1, u64::from(sym != Symbol::X)),
        _ => (0, 0),
    }
}

fn check_offset(decoded: &DecodedStream, reference: &[Symbol], offset: usize) -> Result<()> {
    if reference.len() != decoded.sequence_len || offset >= reference.len() {
        return Err(Error::invalid(format!(
            "offset {offset} invalid for a reference of {} symbols (decoder used {})",
            reference.len(),
            decoded.sequence_len
        )));
    }
    Ok(())
}

/// Error rate of the accepted records of `basis`.
///
/// Z: a decoded bit counts when the reference holds a Z symbol there, and
/// is an error when it differs. X: every accepted X-detector record counts,
/// and is an error when the reference holds a Z symbol.
pub fn compute_qber(decoded: &DecodedStream, reference: &[Symbol], offset: usize, basis: Basis) -> Result<QberReport> {
    check_offset(decoded, reference, offset)?;
    let (sifted, errors) = decoded.accepted().fold((0, 0), |(s, e), r| {
        let (ds, de) = tally(r, reference, offset, basis);
        (s + ds, e + de)
    });
    report(sifted, errors, basis, decoded.detection_rate(), offset)
}

fn report(sifted: u64, errors: u64, basis: Basis, rate: f64, offset: usize) -> Result<QberReport> {
    if sifted == 0 {
        return Err(Error::InsufficientData(format!("no sifted {basis:?}-basis records")));
    }
    Ok(QberReport {
        basis,
        sifted_count: sifted,
        error_count: errors,
        qber: errors as f64 / sifted as f64,
        detection_rate_hz: rate,
        offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberWindow {
    pub window: Window,
    /// `None` when the window holds no sifted records.
    pub report: Option<QberReport>,
}

/// QBER over sliding windows `[k*step, k*step + len)` covering the stream.
pub fn windowed_qber(
    decoded: &DecodedStream,
    reference: &[Symbol],
    offset: usize,
    basis: Basis,
    len_ps: u64,
    step_ps: u64,
) -> Result<Vec<QberWindow>> {
    check_offset(decoded, reference, offset)?;
    if len_ps == 0 || step_ps == 0 {
        return Err(Error::invalid("window length and step must be positive"));
    }
    // Prefix sums over records (already in time order).
    let recs = &decoded.records;
    let mut sifted = vec![0u64; recs.len() + 1];
    let mut errors = vec![0u64; recs.len() + 1];
    for (i, r) in recs.iter().enumerate() {
        let (s, e) = if r.accepted { tally(r, reference, offset, basis) } else { (0, 0) };
        sifted[i + 1] = sifted[i] + s;
        errors[i + 1] = errors[i] + e;
    }
    let mut out = Vec::new();
    let mut start = 0u64;
    while start + len_ps <= decoded.duration_ps {
        let w = Window::from_len(start, len_ps)?;
        let lo = recs.partition_point(|r| r.t < w.start);
        let hi = recs.partition_point(|r| r.t < w.end);
        let s = sifted[hi] - sifted[lo];
        let e = errors[hi] - errors[lo];
        let rate = (hi - lo) as f64 / (len_ps as f64 * 1e-12);
        out.push(QberWindow { window: w, report: report(s, e, basis, rate, offset).ok() });
        start += step_ps;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::random_sequence;

    fn reference() -> Vec<Symbol> {
        random_sequence(4096, 0.5, 3)
    }

    /// Accepted records whose decoded bits match the reference shifted by `shift`,
    /// with every `flip_every`-th Z bit inverted.
    pub(crate) fn constructed(reference: &[Symbol], shift: usize, count: usize, flip_every: usize) -> DecodedStream {
        let n = reference.len();
        let mut records = Vec::new();
        let mut z = 0usize;
        for i in 0..count {
            let q = (i * 7 + i / n) % n;
            let sym = reference[(q + shift) % n];
            let value = match sym.bit() {
                Some(b) => {
                    z += 1;
                    Decoded::Bit(if flip_every > 0 && z % flip_every == 0 { 1 - b } else { b })
                }
                None => Decoded::X,
            };
            records.push(DecodedRecord {
                tag_index: i,
                t: i as u64 * 1000,
                qubit: q,
                pulse: 0,
                value,
                residual_ps: 0.0,
                accepted: true,
            });
        }
        DecodedStream { records, sequence_len: n, sift_window_ps: 200.0, duration_ps: count as u64 * 1000 }
    }

    #[test]
    fn recovers_constructed_shifts() {
        let r = reference();
        for k in [0usize, 1, 17, 1234, 4095] {
            let d = constructed(&r, k, 8000, 0);
            let a = align_sequence_with(&d, &r, &AlignOptions::default()).unwrap();
            assert_eq!(a.offset, k);
            assert_eq!(a.agreement, 1.0);
        }
        let noisy = constructed(&r, 1234, 20000, 20);
        let a = align_sequence_with(&noisy, &r, &AlignOptions::default()).unwrap();
        assert_eq!(a.offset, 1234);
        assert!((a.agreement - 0.95).abs() < 0.01, "{a:?}");
    }

    #[test]
    fn alignment_needs_records_and_signal() {
        let r = reference();
        assert!(matches!(
            align_sequence(&constructed(&r, 3, 100, 0), &r),
            Err(Error::InsufficientData(_))
        ));
        let other = random_sequence(4096, 0.5, 99);
        let d = constructed(&other, 0, 20000, 0);
        assert!(matches!(align_sequence(&d, &r), Err(Error::AlignmentFailed { .. })));
    }

    #[test]
    fn qber_counts() {
        let r = reference();
        let d = constructed(&r, 5, 8000, 20);
        let rep = compute_qber(&d, &r, 5, Basis::Z).unwrap();
        let z = d.records.iter().filter(|x| matches!(x.value, Decoded::Bit(_))).count() as u64;
        assert_eq!(rep.sifted_count, z);
        assert_eq!(rep.error_count, z / 20);
        let x = compute_qber(&d, &r, 5, Basis::X).unwrap();
        assert_eq!(x.error_count, 0);
        let off = compute_qber(&d, &r, 6, Basis::Z).unwrap();
        assert!((off.qber - 0.5).abs() < 0.05, "{off:?}");
        assert!(compute_qber(&d, &r, 4096, Basis::Z).is_err());
    }

    #[test]
    fn hundred_with_five_errors() {
        let r = vec![Symbol::ZEarly; 4];
        let records = (0..100)
            .map(|i| DecodedRecord {
                tag_index: i,
                t: i as u64,
                qubit: i % 4,
                pulse: 0,
                value: Decoded::Bit(u8::from(i < 5)),
                residual_ps: 0.0,
                accepted: true,
            })
            .collect();
        let d = DecodedStream { records, sequence_len: 4, sift_window_ps: 200.0, duration_ps: 1_000_000 };
        let rep = compute_qber(&d, &r, 0, Basis::Z).unwrap();
        assert_eq!((rep.sifted_count, rep.error_count), (100, 5));
        assert_eq!(rep.qber, 0.05);
        assert_eq!(rep.csv_row(Some(22.5)), "22.5,100000000,0.05,100,5,0");
        assert_eq!(rep.csv_row(None), ",100000000,0.05,100,5,0");
    }

    #[test]
    fn empty_sift_is_an_error() {
        let r = reference();
        let mut d = constructed(&r, 0, 100, 0);
        d.records.iter_mut().for_each(|x| x.accepted = false);
        assert!(matches!(compute_qber(&d, &r, 0, Basis::Z), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn windows_tile_the_stream() {
        let r = reference();
        let d = constructed(&r, 9, 10_000, 10);
        let w = windowed_qber(&d, &r, 9, Basis::Z, 1_000_000, 500_000).unwrap();
        assert_eq!(w.len(), 19);
        let total: u64 = w.iter().step_by(2).map(|x| x.report.unwrap().sifted_count).sum();
        assert_eq!(total, compute_qber(&d, &r, 9, Basis::Z).unwrap().sifted_count);
    }
}

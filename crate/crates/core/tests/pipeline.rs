//! Simulate, recover, demodulate and score a full stream.

use tagclock::demod::{align_sequence, compute_qber, demodulate_with_clock, DEFAULT_SIFT_WINDOW_PS};
use tagclock::recovery::{frame_cost, recover, DemodStatus, RecoverConfig};
use tagclock::simulator::{simulate, Basis, Scenario};

#[test]
fn recovered_clock_decodes_a_drifting_stream() {
    let scenario = Scenario {
        rate_hz: 500e3,
        duration_s: 3.0,
        error_prob: 0.02,
        rw_fwhm_hz: 1.0,
        seed: 21,
        ..Scenario::default()
    };
    let sim = simulate(&scenario).unwrap();
    let rec = recover(&sim.stream, &RecoverConfig::default()).unwrap();
    assert_eq!(rec.estimate.status, DemodStatus::Optimized, "{:?}", rec.estimate);
    let j0: f64 = frame_cost(sim.stream.window(rec.estimate.frame), 0, rec.estimate.f0_hz, 64).unwrap();
    assert!(rec.estimate.cost <= j0);
    assert!(!rec.corrections.is_empty());
    assert!(rec.validity_span_s > 0.1, "validity {}", rec.validity_span_s);
    let trace = rec.trace.as_ref().expect("trace requested");
    assert!(trace.points.len() > 50);

    let decoded = demodulate_with_clock(&sim.stream, &rec.clock, &sim.source, DEFAULT_SIFT_WINDOW_PS, rec.estimate.frame)
        .unwrap();
    let offset = align_sequence(&decoded, sim.source.sequence()).unwrap();
    let q = compute_qber(&decoded, sim.source.sequence(), offset, Basis::Z).unwrap();
    // Most detections survive sifting and the QBER matches the injected flips.
    assert!(q.sifted_count as f64 > 0.3 * sim.stream.len() as f64, "{q:?}");
    let sigma = (0.02 * 0.98 / q.sifted_count as f64).sqrt();
    assert!((q.qber - 0.02).abs() < 4.0 * sigma + 0.003, "{q:?}");
}

#[test]
fn recover_rejects_pure_noise() {
    // Jitter far wider than the pulse period wipes out the pulse line.
    let scenario = Scenario { duration_s: 0.2, white_sigma_ps: 5000.0, ..Scenario::default() };
    let sim = simulate(&scenario).unwrap();
    let err = recover(&sim.stream, &RecoverConfig::default()).unwrap_err();
    assert!(err.to_string().contains("fft"), "{err}");
}

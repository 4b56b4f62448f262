use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use tagclock::demod::{
    align_sequence, align_sequence_with, compute_qber, demodulate_with_clock, AlignOptions, DecodedStream,
    DEFAULT_SIFT_WINDOW_PS, QBER_CSV_HEADER,
};
use tagclock::metrics::{coherence_grid, skr as skr_report, write_grid_csv, CoherenceConfig, Estimator, SkrInputs};
use tagclock::recovery::{
    fft_coarse_estimate, recover as recover_clock, track_drift, ClockModel, FftOptions, FftScalar, OptimizeOptions,
    RecoverConfig, Recovery, TrackOptions,
};
use tagclock::simulator::{
    parse_sequence, simulate as run_simulation, Basis, Scenario, Sequence, SourceConfig, Symbol, Truth,
    DEFAULT_QUBIT_RATE_HZ,
};
use tagclock::tagstream::{load_tags, save_tags, TagFormat};
use tagclock::Window;

use crate::config::{load, Overrides};
use crate::{ConfigArgs, Failure};

type Res = Result<(), Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Res {
    let res = match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w).and_then(|_| w.flush())
        }
        None => f(&mut std::io::stdout().lock()),
    };
    res.map_err(|e| Failure::io(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::io(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Ground truth written next to a simulated tag file.
#[derive(Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: Scenario,
    pub truth: Truth,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output tag file; `.csv` selects the text format, anything else binary.
    #[arg(short, long)]
    out: PathBuf,
    /// Ground-truth JSON (default: next to the tag file).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    rate_hz: Option<f64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    error_prob: Option<f64>,
    #[arg(long)]
    rw_fwhm_hz: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn simulate(a: SimulateArgs) -> Res {
    let mut o = Overrides::new(&a.cfg.set);
    o.flag("rate_hz", a.rate_hz)
        .flag("duration_s", a.duration_s)
        .flag("error_prob", a.error_prob)
        .flag("rw_fwhm_hz", a.rw_fwhm_hz)
        .flag("seed", a.seed.map(|s| s as i64));
    let scenario: Scenario = load(a.cfg.config.as_deref(), &o)?;
    let sim = run_simulation(&scenario)?;
    save_tags(&sim.stream, &a.out, TagFormat::from_path(&a.out))?;
    let truth_path = a.truth.unwrap_or_else(|| a.out.with_extension("truth.json"));
    let text = to_json(&TruthFile { scenario, truth: sim.truth })?;
    std::fs::write(&truth_path, text).map_err(|e| Failure::io(format!("{}: {e}", truth_path.display())))?;
    log::info!("wrote {} tags to {}", sim.stream.len(), a.out.display());
    Ok(())
}

/// Recovery settings shared by `recover` and `qber`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverSettings {
    pub t_int_s: f64,
    pub sample_period_ps: u64,
    pub band_lo_hz: Option<f64>,
    pub band_hi_hz: Option<f64>,
    pub min_peak_ratio: f64,
    pub frame_s: f64,
    pub overlap_s: f64,
    pub drift_min_tags: usize,
    /// Re-validation interval; zero disables it.
    pub revalidate_s: f64,
    pub trace: bool,
}

impl Default for RecoverSettings {
    fn default() -> Self {
        let c = RecoverConfig::default();
        Self {
            t_int_s: c.fft.t_int_s,
            sample_period_ps: c.fft.sample_period_ps,
            band_lo_hz: None,
            band_hi_hz: None,
            min_peak_ratio: c.fft.min_peak_ratio,
            frame_s: c.track.frame_s,
            overlap_s: c.track.overlap_s,
            drift_min_tags: c.drift_min_tags,
            revalidate_s: c.revalidate_s.unwrap_or(0.0),
            trace: c.with_trace,
        }
    }
}

impl RecoverSettings {
    fn fft(&self) -> Result<FftOptions, Failure> {
        let band = match (self.band_lo_hz, self.band_hi_hz) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(Failure::validation("band_lo_hz and band_hi_hz must be given together")),
        };
        Ok(FftOptions {
            t_int_s: self.t_int_s,
            sample_period_ps: self.sample_period_ps,
            search_band_hz: band,
            min_peak_ratio: self.min_peak_ratio,
            ..FftOptions::default()
        })
    }

    fn track(&self) -> TrackOptions {
        TrackOptions { frame_s: self.frame_s, overlap_s: self.overlap_s, optimize: OptimizeOptions::default() }
    }

    fn config(&self) -> Result<RecoverConfig, Failure> {
        Ok(RecoverConfig {
            fft: self.fft()?,
            track: self.track(),
            drift_min_tags: self.drift_min_tags,
            revalidate_s: (self.revalidate_s > 0.0).then_some(self.revalidate_s),
            with_trace: self.trace,
        })
    }
}

#[derive(Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Input tag file.
    input: PathBuf,
    /// Recovery result JSON (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Drift trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    t_int_s: Option<f64>,
    #[arg(long)]
    frame_s: Option<f64>,
}

pub fn recover(a: RecoverArgs) -> Res {
    let mut o = Overrides::new(&a.cfg.set);
    o.flag("t_int_s", a.t_int_s).flag("frame_s", a.frame_s);
    if a.trace.is_some() {
        o.flag("trace", Some(true));
    }
    let settings: RecoverSettings = load(a.cfg.config.as_deref(), &o)?;
    let stream = load_tags(&a.input, TagFormat::from_path(&a.input))?;
    let mut rec = recover_clock(&stream, &settings.config()?)?;
    if let (Some(path), Some(trace)) = (&a.trace, &rec.trace) {
        trace.save_csv(path)?;
    }
    rec.trace = None;
    let text = to_json(&rec)?;
    emit(a.out.as_deref(), |w| writeln!(w, "{text}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSettings {
    /// Reference frequency; estimated by FFT when absent.
    pub f0_hz: Option<f64>,
    pub t_int_s: f64,
    pub sample_period_ps: u64,
    pub frame_s: f64,
    pub overlap_s: f64,
}

impl Default for TrackSettings {
    fn default() -> Self {
        let (f, t) = (FftOptions::default(), TrackOptions::default());
        Self {
            f0_hz: None,
            t_int_s: f.t_int_s,
            sample_period_ps: f.sample_period_ps,
            frame_s: t.frame_s,
            overlap_s: t.overlap_s,
        }
    }
}

#[derive(Args)]
pub struct TrackArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    input: PathBuf,
    /// Drift trace CSV (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    f0_hz: Option<f64>,
}

pub fn track(a: TrackArgs) -> Res {
    let mut o = Overrides::new(&a.cfg.set);
    o.flag("f0_hz", a.f0_hz);
    let s: TrackSettings = load(a.cfg.config.as_deref(), &o)?;
    let stream = load_tags(&a.input, TagFormat::from_path(&a.input))?;
    let f0 = match s.f0_hz {
        Some(f) => f,
        None => {
            let opts = FftOptions { t_int_s: s.t_int_s, sample_period_ps: s.sample_period_ps, ..FftOptions::default() };
            let e = fft_coarse_estimate::<FftScalar>(&stream, &opts)?;
            if e.is_failed() {
                return Err(Failure::recovery(format!(
                    "fft stage failed: {}",
                    e.diagnostic.unwrap_or_default()
                )));
            }
            e.f0_hz
        }
    };
    let opts = TrackOptions { frame_s: s.frame_s, overlap_s: s.overlap_s, ..TrackOptions::default() };
    let trace = track_drift(&stream, f0, &opts)?;
    if trace.failed_frames() > 0 {
        log::warn!("{} of {} frames failed", trace.failed_frames(), trace.points.len());
    }
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    emit(a.out.as_deref(), |w| w.write_all(&buf))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QberSettings {
    #[serde(flatten)]
    pub recover: RecoverSettings,
    pub sift_window_ps: f64,
    /// `z` or `x`.
    pub basis: String,
    /// Demodulate at this fixed frequency instead of recovering the clock.
    pub freq_hz: Option<f64>,
    /// Channel loss per input file, for the report's first column.
    pub loss_db: Vec<f64>,
    /// Exit with the recovery code if any QBER exceeds this.
    pub max_qber: Option<f64>,
    /// Source description, used when no truth file is given.
    pub qubit_rate_hz: f64,
    pub pulse_positions_ps: Vec<f64>,
    pub pulse_fwhm_ps: f64,
}

impl Default for QberSettings {
    fn default() -> Self {
        let src = SourceConfig::default();
        Self {
            recover: RecoverSettings { trace: false, ..RecoverSettings::default() },
            sift_window_ps: DEFAULT_SIFT_WINDOW_PS,
            basis: "z".into(),
            freq_hz: None,
            loss_db: Vec::new(),
            max_qber: None,
            qubit_rate_hz: DEFAULT_QUBIT_RATE_HZ,
            pulse_positions_ps: src.pulse_positions_ps,
            pulse_fwhm_ps: src.pulse_fwhm_ps,
        }
    }
}

#[derive(Args)]
pub struct QberArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Tag files; one report row each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Ground-truth JSON from `simulate`, supplying the sequence and source.
    #[arg(long, conflicts_with = "sequence")]
    truth: Option<PathBuf>,
    /// Reference sequence as text (`0`, `1`, `+` per symbol).
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Recovery result from `recover`, used for every input instead of recovering each.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Report CSV (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sift_window_ps: Option<f64>,
    #[arg(long)]
    freq_hz: Option<f64>,
    #[arg(long)]
    max_qber: Option<f64>,
}

fn source_for(a: &QberArgs, s: &QberSettings) -> Result<SourceConfig, Failure> {
    if let Some(p) = &a.truth {
        let t: TruthFile = read_json(p)?;
        return Ok(t.scenario.source());
    }
    let Some(p) = &a.sequence else {
        return Err(Failure::validation("qber needs --truth or --sequence"));
    };
    let text = std::fs::read_to_string(p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
    let src = SourceConfig {
        qubit_rate_hz: s.qubit_rate_hz,
        pulse_positions_ps: s.pulse_positions_ps.clone(),
        sequence: Sequence(parse_sequence(text.trim())?),
        pulse_fwhm_ps: s.pulse_fwhm_ps,
        ..SourceConfig::default()
    };
    src.validate()?;
    Ok(src)
}

/// Aligns on the anchor frame, or on the whole stream when the frame holds too few records.
fn align(decoded: &DecodedStream, reference: &[Symbol], anchor: Window) -> Result<usize, Failure> {
    let opts = AlignOptions { window: Some(anchor), ..AlignOptions::default() };
    match align_sequence_with(decoded, reference, &opts) {
        Ok(a) => Ok(a.offset),
        Err(tagclock::Error::InsufficientData(_)) => Ok(align_sequence(decoded, reference)?),
        Err(e) => Err(e.into()),
    }
}

pub fn qber(a: QberArgs) -> Res {
    let mut o = Overrides::new(&a.cfg.set);
    o.flag("sift_window_ps", a.sift_window_ps).flag("freq_hz", a.freq_hz).flag("max_qber", a.max_qber);
    let s: QberSettings = load(a.cfg.config.as_deref(), &o)?;
    let basis = match s.basis.to_ascii_lowercase().as_str() {
        "z" => Basis::Z,
        "x" => Basis::X,
        b => return Err(Failure::validation(format!("basis: expected z or x, got {b:?}"))),
    };
    if !s.loss_db.is_empty() && s.loss_db.len() != a.inputs.len() {
        return Err(Failure::validation(format!(
            "loss_db: {} values for {} inputs",
            s.loss_db.len(),
            a.inputs.len()
        )));
    }
    let src = source_for(&a, &s)?;
    let shared: Option<Recovery> = a.estimate.as_deref().map(read_json).transpose()?;
    let cfg = s.recover.config()?;

    let mut rows = vec![QBER_CSV_HEADER.to_string()];
    let mut failures = Vec::new();
    let mut above = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let row = (|| -> Result<_, Failure> {
            let stream = load_tags(path, TagFormat::from_path(path))?;
            let (clock, anchor) = match (s.freq_hz, &shared) {
                (Some(f), _) => (ClockModel::constant(0, f)?, Window::from_len(0, (s.recover.frame_s * 1e12) as u64)?),
                (None, Some(r)) => (r.clock.clone(), r.estimate.frame),
                (None, None) => {
                    let r = recover_clock(&stream, &cfg)?;
                    (r.clock, r.estimate.frame)
                }
            };
            let decoded = demodulate_with_clock(&stream, &clock, &src, s.sift_window_ps, anchor)?;
            if decoded.accepted().next().is_none() {
                return Err(Failure::recovery("no records inside the sift window"));
            }
            let offset = align(&decoded, src.sequence(), anchor)?;
            Ok(compute_qber(&decoded, src.sequence(), offset, basis)?)
        })();
        match row {
            Ok(q) => {
                if s.max_qber.is_some_and(|m| q.qber > m) {
                    above.push(format!("{}: {:.4}", path.display(), q.qber));
                }
                rows.push(q.csv_row(s.loss_db.get(i).copied()));
            }
            Err(f) => {
                eprintln!("{}: {}", path.display(), f.message);
                failures.push(f);
            }
        }
    }
    let text = rows.join("\n") + "\n";
    emit(a.out.as_deref(), |w| w.write_all(text.as_bytes()))?;
    if let Some(f) = failures.into_iter().max_by_key(|f| f.code) {
        return Err(Failure { code: f.code, message: format!("at least one input failed; last: {}", f.message) });
    }
    if !above.is_empty() {
        return Err(Failure::recovery(format!("QBER above threshold: {}", above.join(", "))));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceSettings {
    pub noise_fwhm_hz: Vec<f64>,
    pub frame_ms: Vec<f64>,
    /// `fft_only`, `optimized` or `both`.
    pub estimator: String,
    pub rate_hz: f64,
    pub threshold: f64,
    pub runs: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub window_s: f64,
    pub step_s: f64,
    pub error_prob: f64,
    pub white_sigma_ps: f64,
    pub sample_period_ps: u64,
    pub sift_window_ps: f64,
    pub max_offset_hz: f64,
}

impl Default for CoherenceSettings {
    fn default() -> Self {
        let c = CoherenceConfig::default();
        Self {
            noise_fwhm_hz: vec![1.0, 10.0, 100.0],
            frame_ms: vec![2.0, 5.0, 10.0],
            estimator: "both".into(),
            rate_hz: c.rate_hz,
            threshold: c.threshold,
            runs: c.runs,
            seed: c.seed,
            duration_s: c.duration_s,
            window_s: c.window_s,
            step_s: c.step_s,
            error_prob: c.error_prob,
            white_sigma_ps: c.white_sigma_ps,
            sample_period_ps: c.sample_period_ps,
            sift_window_ps: c.sift_window_ps,
            max_offset_hz: c.max_offset_hz,
        }
    }
}

#[derive(Args)]
pub struct CoherenceArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Grid CSV (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Per-run lifetimes as JSON.
    #[arg(long)]
    runs_json: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn coherence(a: CoherenceArgs) -> Res {
    let mut o = Overrides::new(&a.cfg.set);
    o.flag("runs", a.runs.map(|r| r as i64)).flag("seed", a.seed.map(|s| s as i64));
    let s: CoherenceSettings = load(a.cfg.config.as_deref(), &o)?;
    let estimators = match s.estimator.as_str() {
        "both" => vec![Estimator::FftOnly, Estimator::Optimized],
        e => vec![e.parse::<Estimator>()?],
    };
    let base = CoherenceConfig {
        rate_hz: s.rate_hz,
        threshold: s.threshold,
        runs: s.runs,
        seed: s.seed,
        duration_s: s.duration_s,
        window_s: s.window_s,
        step_s: s.step_s,
        error_prob: s.error_prob,
        white_sigma_ps: s.white_sigma_ps,
        sample_period_ps: s.sample_period_ps,
        sift_window_ps: s.sift_window_ps,
        max_offset_hz: s.max_offset_hz,
        ..CoherenceConfig::default()
    };
    let frames: Vec<f64> = s.frame_ms.iter().map(|f| f * 1e-3).collect();
    let grid = coherence_grid(&base, &s.noise_fwhm_hz, &frames, &estimators)?;
    if let Some(p) = &a.runs_json {
        let text = to_json(&grid)?;
        std::fs::write(p, text).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
    }
    let mut buf = Vec::new();
    write_grid_csv(&grid, &mut buf)?;
    emit(a.out.as_deref(), |w| w.write_all(&buf))
}

#[derive(Args)]
pub struct SkrArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Report JSON (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn skr(a: SkrArgs) -> Res {
    let inputs: SkrInputs = load(a.cfg.config.as_deref(), &Overrides::new(&a.cfg.set))?;
    let report = skr_report(&inputs)?;
    let text = to_json(&report)?;
    emit(a.out.as_deref(), |w| writeln!(w, "{text}"))
}

//! Command-line surface.
//!
//! Exit codes of `analyze`: 0 when no axis shows a hard limit, 10 when any
//! axis is unilateral (this wins over bilateral), 11 when any axis is
//! bilateral, 2 on any error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::detect::{analyze_with_spectra, find_peaks, Axis, DetectionConfig, PeakList};
use crate::dq::WaveformRecord;
use crate::hardlimit::{HardLimitSpec, LimitKind, SineInput};
use crate::hos::{
    write_complex_grid_csv, MeanRemoval, SegmentConfig, SpectrumSet, Window, DEFAULT_MAX_TRI_BIN,
    DEFAULT_SEGMENT_CYCLES,
};
use crate::record::{self, InputInfo, LoadOptions, RecordFile, ReportFile};
use crate::synth::{self, Tone, ToneSpec};
use crate::vscsim;

pub const EXIT_NONE: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_UNILATERAL: i32 = 10;
pub const EXIT_BILATERAL: i32 = 11;

#[derive(Debug, Parser)]
#[command(
    name = "hosdetect",
    version,
    about = "Detect hard-limit nonlinearity from current records"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a record and write a JSON report.
    Analyze(AnalyzeArgs),
    /// Generate a record file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Write spectrum and coherence grids without classifying.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Hann,
    Rect,
}

impl From<WindowArg> for Window {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Hann => Window::Hann,
            WindowArg::Rect => Window::Rectangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    D,
    Q,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::D => Axis::D,
            AxisArg::Q => Axis::Q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Abc,
    Dq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Unilateral,
    Bilateral,
}

/// Input and segmentation flags shared by `analyze` and `spectrum`.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Record file (CSV).
    pub input: PathBuf,
    /// Sample rate in Hz; must agree with the time column.
    #[arg(long)]
    pub fs: Option<f64>,
    /// Nominal grid frequency in Hz, overriding the file header.
    #[arg(long)]
    pub nominal_freq: Option<f64>,
    /// Number of segments M (default: as many as fit).
    #[arg(long)]
    pub segments: Option<usize>,
    /// Segment length N (default: smallest power of two covering 8 nominal cycles).
    #[arg(long)]
    pub seglen: Option<usize>,
    #[arg(long, value_enum, default_value = "hann")]
    pub window: WindowArg,
    /// Spectral floor ratio.
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
    /// Highest bin of the tricoherence domain (default: min(N/2, 128)).
    #[arg(long)]
    pub max_tri_bin: Option<usize>,
    /// Subtract the segment mean before windowing instead of after.
    #[arg(long)]
    pub mean_before_window: bool,
    /// Axes to analyse.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "d,q")]
    pub axis: Vec<AxisArg>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Coherence threshold for a peak.
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    /// Directory for power, bispectrum and coherence grids.
    #[arg(long)]
    pub dump_spectra: Option<PathBuf>,
    /// Report file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Coherence threshold for the peak summary.
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Output flags shared by the generators.
#[derive(Debug, Clone, Args)]
pub struct GenOutput {
    /// Record file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record layout; single-channel signals go on the d axis.
    #[arg(long, value_enum, default_value = "dq")]
    pub format: FormatArg,
    /// Rotation angle used when writing abc records.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta0: f64,
    /// Operating point added to the d channel. Three-phase records need one
    /// for the analyser to recover the rotation angle.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub dc: f64,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Sum of unit cosines; `coupled` adds a tone at the sum of the first two.
    Tones {
        /// Comma-separated frequencies in Hz, optionally with `coupled`.
        #[arg(long = "f", value_delimiter = ',', required = true)]
        freqs: Vec<String>,
        /// Phase of the coupled tone.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi3: f64,
        /// Redraw the coupled tone's phase for every segment.
        #[arg(long)]
        random_phase: bool,
        /// Phase noise per tone, dB.
        #[arg(long, allow_hyphen_values = true)]
        noise_db: Option<f64>,
        /// Additive noise, dB.
        #[arg(long, allow_hyphen_values = true)]
        additive_noise_db: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        fs: f64,
        #[arg(long, default_value_t = 16_384)]
        length: usize,
        /// Segment length the random phase is held over.
        #[arg(long, default_value_t = 128)]
        seglen: usize,
        /// Nominal frequency written to the header (default: lowest tone).
        #[arg(long)]
        nominal_freq: Option<f64>,
        #[command(flatten)]
        output: GenOutput,
    },
    /// Hard-limited sinusoid.
    Clipped {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Saturation level A/a.
        #[arg(long)]
        eta: f64,
        #[arg(long = "f")]
        freq: f64,
        #[arg(long, default_value_t = 1000.0)]
        fs: f64,
        /// Limit level a.
        #[arg(long, default_value_t = 1.0)]
        limit: f64,
        #[arg(long, default_value_t = 32_768)]
        length: usize,
        /// Additive noise, dB.
        #[arg(long, allow_hyphen_values = true)]
        noise_db: Option<f64>,
        /// Nominal frequency written to the header (default: --f).
        #[arg(long)]
        nominal_freq: Option<f64>,
        #[command(flatten)]
        output: GenOutput,
    },
    /// Converter control-loop simulation.
    Simulate {
        #[arg(long, default_value = "case2-reduced")]
        preset: String,
        /// Additive noise on every channel, dB.
        #[arg(long, allow_hyphen_values = true)]
        noise_db: Option<f64>,
        #[command(flatten)]
        output: GenOutput,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: record::RecordError },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("configuration: {0}")]
    Config(String),
    #[error("analysis: {0}")]
    Analysis(#[from] crate::detect::AnalysisError),
    #[error("generator: {0}")]
    Synth(#[from] synth::SynthError),
    #[error("simulation: {0}")]
    Sim(#[from] vscsim::VscError),
    #[error("report: {0}")]
    Report(#[from] record::RecordError),
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gen(g) => cmd_gen(g).map(|_| EXIT_NONE),
        Command::Spectrum(s) => cmd_spectrum(s).map(|_| EXIT_NONE),
    }
}

fn load(args: &InputArgs) -> Result<(RecordFile, String), CliError> {
    let read_err = |source| CliError::Read {
        path: args.input.clone(),
        source,
    };
    let bytes = fs::read(&args.input).map_err(|e| read_err(e.into()))?;
    let opts = LoadOptions {
        sample_rate_hz: args.fs,
        nominal_freq_hz: args.nominal_freq,
    };
    let file = record::read_record(bytes.as_slice(), opts).map_err(read_err)?;
    Ok((file, record::sha256_hex(&bytes)))
}

/// Effective segmentation for a record of `len` samples.
pub fn segment_config(args: &InputArgs, record: &WaveformRecord) -> Result<SegmentConfig, CliError> {
    let len = record.len();
    let seg_len = match args.seglen {
        Some(n) => n,
        None => SegmentConfig::covering(len, record.dt, record.nominal_freq_hz, DEFAULT_SEGMENT_CYCLES).seg_len,
    };
    if seg_len == 0 {
        return Err(CliError::Config("segment length must be positive".into()));
    }
    let segments = args.segments.unwrap_or(len / seg_len);
    let cfg = SegmentConfig {
        window: args.window.into(),
        sigma_floor: args.sigma,
        max_tri_bin: args.max_tri_bin.unwrap_or(DEFAULT_MAX_TRI_BIN.min(seg_len / 2)),
        mean_removal: if args.mean_before_window {
            MeanRemoval::BeforeWindow
        } else {
            MeanRemoval::AfterWindow
        },
        ..SegmentConfig::new(segments, seg_len)
    };
    cfg.validate(len).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn axes(args: &InputArgs) -> Vec<Axis> {
    let mut out: Vec<Axis> = Vec::new();
    for a in &args.axis {
        let a = Axis::from(*a);
        if !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(wrap)?);
    f(&mut w).and_then(|_| w.flush()).map_err(wrap)
}

/// Writes `<axis>_power.csv`, `<axis>_bispectrum.csv`, `<axis>_bicoherence.csv`,
/// `<axis>_tricoherence.csv` and `<axis>_peaks.json` into `dir`.
pub fn dump_spectra(dir: &Path, axis: Axis, set: &SpectrumSet, peaks: (&PeakList, &PeakList)) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let p = |name: &str| dir.join(format!("{axis}_{name}"));
    write_file(&p("power.csv"), |w| set.power.write_csv(w))?;
    write_file(&p("bispectrum.csv"), |w| write_complex_grid_csv(&set.bispec, w))?;
    write_file(&p("bicoherence.csv"), |w| set.bicoherence.write_csv(w))?;
    write_file(&p("tricoherence.csv"), |w| set.tricoherence.write_csv(w))?;
    let summary = serde_json::json!({
        "axis": axis,
        "df": set.df,
        "bicoherence": peaks.0,
        "tricoherence": peaks.1,
    });
    write_file(&p("peaks.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })
}

fn detection_config(threshold: f64) -> Result<DetectionConfig, CliError> {
    let det = DetectionConfig {
        sigma_b: threshold,
        ..DetectionConfig::default()
    };
    det.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(det)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32, CliError> {
    let (file, digest) = load(&args.input)?;
    let record = &file.record;
    let seg = segment_config(&args.input, record)?;
    let det = detection_config(args.threshold)?;
    let axes = axes(&args.input);
    info!(
        "{} samples at {} Hz, M = {}, N = {}",
        record.len(),
        record.sample_rate_hz(),
        seg.segments,
        seg.seg_len
    );
    let (analysis, dset, qset) = analyze_with_spectra(record, &seg, &det)?;
    if let Some(dir) = &args.dump_spectra {
        for &axis in &axes {
            let set = if axis == Axis::D { &dset } else { &qset };
            let r = analysis.report(axis);
            dump_spectra(dir, axis, set, (&r.bic_peaks, &r.tric_peaks))?;
        }
    }
    let input = InputInfo {
        sha256: digest,
        format: file.format,
        samples: record.len(),
        sample_rate_hz: record.sample_rate_hz(),
        nominal_freq_hz: record.nominal_freq_hz,
        seed: file.meta.seed,
    };
    let report = ReportFile::new(input, seg, det, &axes, &analysis);
    let json = report.to_json()?;
    match &args.out {
        Some(path) => {
            write_file(path, |w| writeln!(w, "{json}"))?;
            to_stdout(|w| {
                for r in &report.reports {
                    let eta = r.eta_sat.map(|e| format!(" (eta {e:.3})")).unwrap_or_default();
                    writeln!(w, "{}: {}{eta}", r.axis, r.classification)?;
                }
                Ok(())
            })?;
        }
        None => to_stdout(|w| writeln!(w, "{json}"))?,
    }
    Ok(report.exit_code())
}

pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<(), CliError> {
    let (file, _) = load(&args.input)?;
    let seg = segment_config(&args.input, &file.record)?;
    let det = detection_config(args.threshold)?;
    let sig = file.record.to_dq().map_err(crate::detect::AnalysisError::from)?;
    for axis in axes(&args.input) {
        let x = if axis == Axis::D { &sig.xd } else { &sig.xq };
        let set = SpectrumSet::compute(x, &seg, file.record.dt)
            .map_err(|source| crate::detect::AnalysisError::Spectra { axis, source })?;
        let bic = find_peaks(&set.bicoherence, &det);
        let tric = find_peaks(&set.tricoherence, &det);
        dump_spectra(&args.out, axis, &set, (&bic, &tric))?;
    }
    Ok(())
}

fn emit(record: &WaveformRecord, output: &GenOutput, extra: &[(String, String)]) -> Result<(), CliError> {
    let mut first = true;
    let shifted = record.map_channels(|x| {
        let dc = if std::mem::take(&mut first) { output.dc } else { 0.0 };
        x.iter().map(|v| v + dc).collect()
    });
    let record = match output.format {
        FormatArg::Dq => shifted,
        FormatArg::Abc => shifted.to_three_phase(output.theta0),
    };
    let seed = Some(output.seed);
    match &output.out {
        Some(path) => write_file(path, |w| record::write_record(w, &record, seed, extra)),
        None => to_stdout(|w| record::write_record(w, &record, seed, extra)),
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn to_stdout(f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut w = io::BufWriter::new(stdout.lock());
    match f(&mut w).and_then(|_| w.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Write {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

/// Parses a `--f` list such as `0.6381,0.8345,coupled`.
pub fn parse_tone_list(items: &[String], phi3: f64, random_phase: bool) -> Result<Vec<Tone>, CliError> {
    let mut tones: Vec<Tone> = Vec::new();
    for item in items {
        let item = item.trim();
        if item.eq_ignore_ascii_case("coupled") {
            if tones.len() < 2 {
                return Err(CliError::Config("`coupled` needs two frequencies before it".into()));
            }
            let mut t = Tone::new(tones[0].freq_hz + tones[1].freq_hz, 1.0, phi3);
            if random_phase {
                t = t.per_segment_random();
            }
            tones.push(t);
        } else {
            let f: f64 = item
                .parse()
                .map_err(|_| CliError::Config(format!("bad frequency {item:?}")))?;
            tones.push(Tone::new(f, 1.0, 0.0));
        }
    }
    if tones.is_empty() {
        return Err(CliError::Config("no tones given".into()));
    }
    Ok(tones)
}

fn single_channel(x: Vec<f64>, fs: f64, nominal: f64) -> Result<WaveformRecord, CliError> {
    let q = vec![0.0; x.len()];
    WaveformRecord::dq(1.0 / fs, nominal, x, q).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_gen(cmd: &GenCommand) -> Result<(), CliError> {
    match cmd {
        GenCommand::Tones {
            freqs,
            phi3,
            random_phase,
            noise_db,
            additive_noise_db,
            fs,
            length,
            seglen,
            nominal_freq,
            output,
        } => {
            let tones = parse_tone_list(freqs, *phi3, *random_phase)?;
            let lowest = tones.iter().map(|t| t.freq_hz).fold(f64::INFINITY, f64::min);
            let spec = ToneSpec {
                phase_noise_db: *noise_db,
                additive_noise_db: *additive_noise_db,
                segment_len: Some(*seglen),
                ..ToneSpec::new(tones, *fs, *length)
            };
            let x = synth::gen_tones(&spec, output.seed)?;
            let rec = single_channel(x, *fs, nominal_freq.unwrap_or(lowest))?;
            emit(&rec, output, &[("generator".into(), "tones".into())])
        }
        GenCommand::Clipped {
            kind,
            eta,
            freq,
            fs,
            limit,
            length,
            noise_db,
            nominal_freq,
            output,
        } => {
            let cfg = |e: crate::hardlimit::HardLimitError| CliError::Config(e.to_string());
            let (spec, kind_name) = match kind {
                KindArg::Unilateral => (
                    HardLimitSpec::new(LimitKind::Unilateral, *limit, 0.0).map_err(cfg)?,
                    "unilateral",
                ),
                KindArg::Bilateral => (HardLimitSpec::bilateral(*limit).map_err(cfg)?, "bilateral"),
            };
            if !(*eta >= 1.0) {
                return Err(CliError::Config(format!("eta {eta} < 1")));
            }
            let input = SineInput::new(eta * limit, *freq, 0.0).map_err(cfg)?;
            let x = synth::gen_clipped_sine(&input, &spec, *fs, *length, output.seed, *noise_db)?;
            let rec = single_channel(x, *fs, nominal_freq.unwrap_or(*freq))?;
            let extra = [
                ("generator".to_string(), "clipped".to_string()),
                ("kind".to_string(), kind_name.to_string()),
                ("eta".to_string(), eta.to_string()),
            ];
            emit(&rec, output, &extra)
        }
        GenCommand::Simulate {
            preset,
            noise_db,
            output,
        } => {
            let scenario = vscsim::preset(preset).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown preset {preset:?} (available: {})",
                    vscsim::PRESETS.join(", ")
                ))
            })?;
            let (sim, mut rec) = scenario.record()?;
            if let Some(db) = noise_db {
                rec = synth::add_noise(&rec, *db, output.seed);
            }
            let mut extra = vec![("preset".to_string(), scenario.name.clone())];
            extra.extend(record::simulation_meta(&sim.spec_digest, &sim.events));
            emit(&rec, output, &extra)
        }
    }
}

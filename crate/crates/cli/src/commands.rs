use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use sae_monitor::io::{
    export_plot_data, load_model, read_csv, read_csv_channels, save_model, write_json_line, EventRecord,
    SegmentRecord,
};
use sae_monitor::pipeline::{fit_model, healthy_errors, run_stream, score_series, simulate, SimulationConfig, StreamRun};
use sae_monitor::signal::correlation_matrix;
use sae_monitor::stream::bandwidth_report;
use sae_monitor::synth::{generate_corpus, standard_corpus, ScenarioSpec};
use sae_monitor::threshold::DEFAULT_PERCENTILE;
use sae_monitor::{default_spec, fit_thresholds, AlarmPolicy, ChannelSeries, DetectorConfig, TrainConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<sae_monitor::Error> for CliError {
    fn from(e: sae_monitor::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn write_failed(path: &Path, e: io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, CliError>;

/// Stacked-autoencoder anomaly detection for machine sensor streams.
#[derive(Debug, Parser)]
#[command(name = "sae-monitor", version, arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (CSV files plus manifest.json).
    GenData(GenDataArgs),
    /// Train a model on healthy CSV recordings.
    Train(TrainArgs),
    /// Refit the traffic-light thresholds of a model on healthy recordings.
    FitThresholds(FitThresholdsArgs),
    /// Stream recordings through the detector and write window and segment records.
    Detect(DetectArgs),
    /// Train and evaluate end to end on a generated corpus; prints a lead-time report.
    Simulate(SimulateArgs),
    /// Export per-window errors and thresholds for plotting.
    PlotData(PlotDataArgs),
    /// Print the Pearson correlation matrix of every channel in a CSV file.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV recording: timestamp column followed by channel columns.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Channel to read; defaults to the first column named like "field current".
    #[arg(long)]
    channel: Option<String>,
    #[arg(long, default_value_t = 100.0)]
    sample_rate: f64,
}

impl InputArgs {
    fn load(&self) -> CliResult<Vec<ChannelSeries<f64>>> {
        self.input
            .iter()
            .map(|p| read_csv(p, self.channel.as_deref(), self.sample_rate).map_err(CliError::from))
            .collect()
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    healthy: usize,
    #[arg(long, default_value_t = 10)]
    faults: usize,
    #[arg(long, default_value_t = 600.0)]
    duration_s: f64,
    /// Onset-to-failure duration of each fault.
    #[arg(long, default_value_t = 300.0)]
    ramp_s: f64,
    /// Add armature-current and voltage channels that track the field current.
    #[arg(long)]
    correlated: bool,
}

#[derive(Debug, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 500, value_parser = parse_window)]
    window: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE)]
    percentile: f64,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch,
            rng_seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

fn parse_window(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(w @ (250 | 500 | 1000)) => Ok(w),
        _ => Err(format!("window must be 250, 500 or 1000, got '{s}'")),
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitThresholdsArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Where to write the updated model; defaults to overwriting --model.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlarmArgs {
    #[arg(long, default_value_t = DetectorConfig::DEFAULT_T_MINUTES)]
    t_pre_min: f64,
    #[arg(long, default_value_t = DetectorConfig::DEFAULT_T_MINUTES)]
    t_post_min: f64,
    /// Consecutive Red windows that raise an alarm.
    #[arg(long, default_value_t = 3)]
    alarm_red_run: usize,
    /// Consecutive Amber-or-Red windows that raise an alarm.
    #[arg(long, default_value_t = 12)]
    alarm_amber_run: usize,
}

impl AlarmArgs {
    fn policy(&self) -> AlarmPolicy {
        AlarmPolicy {
            red_run: self.alarm_red_run,
            amber_run: self.alarm_amber_run,
        }
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Expected window size; rejected if it differs from the model's.
    #[arg(long)]
    window: Option<usize>,
    #[command(flatten)]
    alarm: AlarmArgs,
    /// Line-delimited JSON records; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 42)]
    corpus_seed: u64,
    #[arg(long, default_value_t = 20)]
    healthy: usize,
    #[arg(long, default_value_t = 10)]
    faults: usize,
    /// Healthy streams generated for training only.
    #[arg(long, default_value_t = 8)]
    training_streams: usize,
    #[arg(long, default_value_t = 600.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 300.0)]
    ramp_s: f64,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    alarm: AlarmArgs,
    /// Also write the evaluated corpus here.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Also save the trained model.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// JSON report; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    sample_rate: f64,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::FitThresholds(a) => refit_thresholds(a),
        Command::Detect(a) => detect(a),
        Command::Simulate(a) => run_simulation(a),
        Command::PlotData(a) => plot_data(a),
        Command::Correlate(a) => correlate(a),
    }
}

fn print_json(value: &serde_json::Value) -> CliResult {
    let mut out = io::stdout().lock();
    writeln!(out, "{value}").map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let (mut healthy, mut faults) = standard_corpus(a.seed, a.healthy, a.faults, a.duration_s, a.ramp_s);
    if a.correlated {
        let add = |s: ScenarioSpec| s.with_correlated_channels();
        healthy = healthy.into_iter().map(add).collect();
        faults = faults.into_iter().map(add).collect();
    }
    let manifest = generate_corpus(&a.out, &healthy, &faults)?;
    print_json(&serde_json::json!({
        "corpus": a.out,
        "files": manifest.entries.iter().map(|e| &e.file).collect::<Vec<_>>(),
    }))
}

fn train(a: TrainArgs) -> CliResult {
    let series = a.input.load()?;
    let refs: Vec<&ChannelSeries<f64>> = series.iter().collect();
    let spec = default_spec(a.training.window)?;
    let fitted = fit_model(&refs, &spec, &a.training.config(), a.training.percentile)?;
    save_model(&fitted.file, &a.out)?;
    let thresholds = fitted.file.thresholds.expect("thresholds fitted during training");
    print_json(&serde_json::json!({
        "model": a.out,
        "window": spec.window_size,
        "training_windows": fitted.training.windows.nrows(),
        "excluded_windows": fitted.training.excluded_windows,
        "green": thresholds.green,
        "red": thresholds.red,
        "stage_losses": fitted
            .file
            .metadata
            .stage_reports
            .iter()
            .map(|r| [r.initial_loss, r.final_loss()])
            .collect::<Vec<_>>(),
    }))
}

fn refit_thresholds(a: FitThresholdsArgs) -> CliResult {
    let mut file = load_model::<f64>(&a.model)?;
    let series = a.input.load()?;
    let refs: Vec<&ChannelSeries<f64>> = series.iter().collect();
    let errors = healthy_errors(&file.model, &refs)?;
    let thresholds = fit_thresholds(&errors, a.percentile)?;
    file.thresholds = Some(thresholds);
    let out = a.out.unwrap_or(a.model);
    save_model(&file, &out)?;
    print_json(&serde_json::json!({
        "model": out,
        "windows": errors.len(),
        "percentile": a.percentile,
        "green": thresholds.green,
        "red": thresholds.red,
    }))
}

fn stream_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_records(sink: &mut impl Write, id: &str, run: &StreamRun<f64>) -> io::Result<()> {
    for outcome in &run.outcomes {
        write_json_line(sink, &EventRecord::from_outcome(id, outcome))?;
    }
    for segment in &run.segments {
        write_json_line(sink, &SegmentRecord::from_segment(id, segment))?;
    }
    Ok(())
}

fn detect(a: DetectArgs) -> CliResult {
    let file = load_model::<f64>(&a.model)?;
    let model = &file.model;
    if let Some(w) = a.window {
        if w != model.window_size() {
            return Err(CliError::Data(format!(
                "window size {w} does not match the model's {}",
                model.window_size()
            )));
        }
    }
    let thresholds = file
        .thresholds
        .ok_or_else(|| CliError::Data(format!("{}: model has no thresholds; run fit-thresholds", a.model.display())))?;
    let series = a.input.load()?;
    let alarm = &a.alarm;

    // One detector per stream; the model is shared read-only.
    let runs: Vec<sae_monitor::Result<StreamRun<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = series
            .iter()
            .map(|s| {
                scope.spawn(move || {
                    let config = DetectorConfig {
                        start_time: s.start_time,
                        ..DetectorConfig::from_minutes(s.sample_rate_hz, alarm.t_pre_min, alarm.t_post_min, alarm.policy())?
                    };
                    run_stream(config, model, &thresholds, &s.samples)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("detector thread")).collect()
    });

    let mut summaries = Vec::new();
    let mut buffer = Vec::new();
    for (path, run) in a.input.input.iter().zip(runs) {
        let run = run?;
        let id = stream_id(path);
        write_records(&mut buffer, &id, &run).map_err(|e| CliError::Internal(e.to_string()))?;
        let ranges: Vec<_> = run.segments.iter().map(|s| s.range()).collect();
        let bandwidth = bandwidth_report(run.samples, &ranges)?;
        summaries.push(serde_json::json!({
            "stream_id": id,
            "windows": run.outcomes.len(),
            "alarms": run.outcomes.iter().filter(|o| o.alarm.is_some()).count(),
            "segments": bandwidth.segment_count,
            "transmitted_fraction": bandwidth.transmitted_fraction,
        }));
    }
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| write_failed(path, e))?;
            let mut w = BufWriter::new(f);
            w.write_all(&buffer)
                .and_then(|_| w.flush())
                .map_err(|e| write_failed(path, e))?;
            print_json(&serde_json::json!({ "out": path, "streams": summaries }))
        }
        None => io::stdout()
            .lock()
            .write_all(&buffer)
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

fn run_simulation(a: SimulateArgs) -> CliResult {
    let config = SimulationConfig {
        seed: a.corpus_seed,
        healthy_streams: a.healthy,
        fault_streams: a.faults,
        training_streams: a.training_streams,
        duration_s: a.duration_s,
        ramp_s: a.ramp_s,
        window_size: a.training.window,
        train: a.training.config(),
        percentile: a.training.percentile,
        t_pre_min: a.alarm.t_pre_min,
        t_post_min: a.alarm.t_post_min,
        alarm: a.alarm.policy(),
    };
    if config.healthy_streams == 0 || config.training_streams == 0 {
        return Err(CliError::Usage("--healthy and --training-streams must be at least 1".into()));
    }
    if let Some(dir) = &a.corpus {
        let (healthy, faults) = config.corpus();
        generate_corpus(dir, &healthy, &faults)?;
    }
    let (fitted, report) = simulate(&config)?;
    if let Some(path) = &a.model_out {
        save_model(&fitted.file, path)?;
    }
    let text = serde_json::to_string_pretty(&serde_json::json!({ "config": config, "report": report }))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    match &a.out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| write_failed(path, e)),
        None => print_json(&serde_json::json!({
            "false_alarm_segments": report.false_alarm_segments,
            "detected_before_failure": report.detected_before_failure,
            "fault_streams": report.faults.len(),
            "median_lead_fraction": report.median_lead_fraction,
            "transmitted_fraction": report.transmitted_fraction,
            "faults": report.faults,
        })),
    }
}

fn plot_data(a: PlotDataArgs) -> CliResult {
    let file = load_model::<f64>(&a.model)?;
    let thresholds = file
        .thresholds
        .ok_or_else(|| CliError::Data(format!("{}: model has no thresholds; run fit-thresholds", a.model.display())))?;
    let series = a.input.load()?;
    if series.len() != 1 {
        return Err(CliError::Usage("plot-data takes exactly one --input".into()));
    }
    let scored = score_series(&file.model, &thresholds, &series[0].samples)?;
    let errors: Vec<f64> = scored.iter().map(|s| s.error).collect();
    export_plot_data(&errors, &thresholds, &a.out)?;
    print_json(&serde_json::json!({ "out": a.out, "windows": errors.len() }))
}

fn correlate(a: CorrelateArgs) -> CliResult {
    let channels = read_csv_channels(&a.input, a.sample_rate)?;
    let m = correlation_matrix(&channels)?;
    let mut out = String::from("channel");
    for name in &m.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, name) in m.channel_names.iter().enumerate() {
        out.push_str(name);
        for j in 0..m.size() {
            out.push_str(&format!(",{:.6}", m.get(i, j)));
        }
        out.push('\n');
    }
    io::stdout()
        .lock()
        .write_all(out.as_bytes())
        .map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

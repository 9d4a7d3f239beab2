//! Train / score / detect orchestration shared by the CLI and the tests.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fingerprint, ModelFile, TrainingMetadata};
use crate::neural::TrainConfig;
use crate::sae::{default_spec, reconstruction_error, train_model, StackSpec, StackedModel, TrainedModel};
use crate::scalar::Scalar;
use crate::signal::{normalize_values, segment_slice, ChannelSeries, NormStats, RestParams, Window};
use crate::stream::{score_window, AlarmKind, AlarmPolicy, Detector, DetectorConfig, TransmissionSegment, WindowOutcome};
use crate::synth::{generate, standard_corpus, ScenarioSpec};
use crate::threshold::{fit_thresholds, ThresholdSet, TrafficLight, DEFAULT_PERCENTILE};

/// Normalised healthy windows ready for training, one per row.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub windows: Array2<T>,
    pub norm_stats: NormStats,
    pub rest: RestParams,
    pub total_windows: usize,
    /// Windows dropped because they touch a stoppage.
    pub excluded_windows: usize,
}

fn touches_rest<T: Scalar>(values: &[T], rest: &RestParams) -> bool {
    values
        .iter()
        .any(|v| (v.widen() - rest.rest_level).abs() <= rest.tolerance)
}

/// Tiles every series into windows, derives the scaling range and resting
/// band from the running data, and keeps the windows clear of stoppages.
pub fn prepare_training<T: Scalar>(series: &[&ChannelSeries<T>], window_size: usize) -> Result<TrainingSet<T>> {
    let mut windows: Vec<Window<T>> = Vec::new();
    for s in series {
        windows.extend(segment_slice(&s.samples, window_size, window_size)?);
    }
    let total_windows = windows.len();
    // The machine sits at 0 when stopped; a provisional band from the full
    // range keeps stoppage samples out of the scaling statistics.
    let coarse = NormStats::fit(windows.iter().map(|w| w.values.as_slice()))?;
    let provisional = RestParams::from_healthy_range(&NormStats {
        min: coarse.min.min(0.0),
        max: coarse.max.max(0.0),
    });
    let norm_stats = NormStats::fit(
        windows
            .iter()
            .filter(|w| !touches_rest(&w.values, &provisional))
            .map(|w| w.values.as_slice()),
    )
    .map_err(|_| Error::EmptyTrainingSet)?;
    let rest = RestParams::from_healthy_range(&norm_stats);

    let kept: Vec<&Window<T>> = windows.iter().filter(|w| !touches_rest(&w.values, &rest)).collect();
    if kept.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut matrix = Array2::zeros((kept.len(), window_size));
    for (mut row, w) in matrix.rows_mut().into_iter().zip(&kept) {
        for (dst, src) in row.iter_mut().zip(normalize_values(&w.values, &norm_stats)) {
            *dst = src;
        }
    }
    Ok(TrainingSet {
        windows: matrix,
        norm_stats,
        rest,
        total_windows,
        excluded_windows: total_windows - kept.len(),
    })
}

/// Reconstruction error of every row of a normalised window matrix, using
/// the same single-window path as the streaming detector.
pub fn window_errors<T: Scalar>(model: &StackedModel<T>, windows: &Array2<T>) -> Result<Vec<f64>> {
    windows
        .rows()
        .into_iter()
        .map(|row| {
            let v = row.to_vec();
            Ok(reconstruction_error(model, &v)?.widen())
        })
        .collect()
}

/// Output of [`fit_model`].
#[derive(Debug, Clone)]
pub struct FittedModel<T> {
    pub file: ModelFile<T>,
    pub trained: TrainedModel<T>,
    pub training_errors: Vec<f64>,
    pub training: TrainingSet<T>,
}

/// Trains on healthy series and fits thresholds on the training errors.
pub fn fit_model<T: Scalar>(
    series: &[&ChannelSeries<T>],
    spec: &StackSpec,
    config: &TrainConfig,
    percentile: f64,
) -> Result<FittedModel<T>> {
    let training = prepare_training(series, spec.window_size)?;
    let trained = train_model(training.windows.view(), spec, config, training.norm_stats, training.rest)?;
    let training_errors = window_errors(&trained.model, &training.windows)?;
    let thresholds = fit_thresholds(&training_errors, percentile)?;
    let mut stage_reports = trained.stage_reports.clone();
    stage_reports.push(trained.decoder_report.clone());
    let file = ModelFile {
        model: trained.model.clone(),
        thresholds: Some(thresholds),
        metadata: TrainingMetadata {
            seed: config.rng_seed,
            config: config.clone(),
            data_fingerprint: fingerprint(&training.windows),
            training_windows: training.windows.nrows(),
            stage_reports,
        },
    };
    Ok(FittedModel {
        file,
        trained,
        training_errors,
        training,
    })
}

/// Errors of the stoppage-free windows of healthy series, for refitting
/// thresholds on data other than the training set.
pub fn healthy_errors<T: Scalar>(model: &StackedModel<T>, series: &[&ChannelSeries<T>]) -> Result<Vec<f64>> {
    let mut errors = Vec::new();
    for s in series {
        for w in segment_slice(&s.samples, model.window_size(), model.window_size())? {
            if touches_rest(&w.values, &model.rest) {
                continue;
            }
            let normalized = normalize_values(&w.values, &model.norm_stats);
            errors.push(reconstruction_error(model, &normalized)?.widen());
        }
    }
    if errors.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(errors)
}

/// Offline scoring of a recorded stream with tiled windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredWindow {
    pub origin: usize,
    pub error: f64,
    pub band: TrafficLight,
}

pub fn score_series<T: Scalar>(model: &StackedModel<T>, thresholds: &ThresholdSet, samples: &[T]) -> Result<Vec<ScoredWindow>> {
    let w = model.window_size();
    if samples.len() < w {
        return Ok(Vec::new());
    }
    segment_slice(samples, w, w)?
        .into_iter()
        .map(|win| {
            let (error, band) = score_window(model, thresholds, &win.values)?;
            Ok(ScoredWindow {
                origin: win.origin_index,
                error,
                band,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StreamRun<T> {
    pub outcomes: Vec<WindowOutcome>,
    pub segments: Vec<TransmissionSegment<T>>,
    pub samples: usize,
}

/// Feeds every sample through a fresh detector and flushes it at the end.
pub fn run_stream<T: Scalar>(
    config: DetectorConfig,
    model: &StackedModel<T>,
    thresholds: &ThresholdSet,
    samples: &[T],
) -> Result<StreamRun<T>> {
    let mut detector = Detector::for_model(config, model)?;
    let mut outcomes = Vec::with_capacity(samples.len() / model.window_size() + 1);
    let mut segments = Vec::new();
    for &x in samples {
        let step = detector.push_sample(x, model, thresholds)?;
        outcomes.extend(step.window);
        segments.extend(step.segment);
    }
    segments.extend(detector.finish());
    Ok(StreamRun {
        outcomes,
        segments,
        samples: samples.len(),
    })
}

/// Settings of an end-to-end run over a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub healthy_streams: usize,
    pub fault_streams: usize,
    /// Extra rest-free healthy streams used only for training.
    pub training_streams: usize,
    pub duration_s: f64,
    pub ramp_s: f64,
    pub window_size: usize,
    pub train: TrainConfig,
    pub percentile: f64,
    pub t_pre_min: f64,
    pub t_post_min: f64,
    pub alarm: AlarmPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            healthy_streams: 20,
            fault_streams: 10,
            training_streams: 8,
            duration_s: 600.0,
            ramp_s: 300.0,
            window_size: 500,
            train: TrainConfig::default(),
            percentile: DEFAULT_PERCENTILE,
            t_pre_min: DetectorConfig::DEFAULT_T_MINUTES,
            t_post_min: DetectorConfig::DEFAULT_T_MINUTES,
            alarm: AlarmPolicy::default(),
        }
    }
}

impl SimulationConfig {
    /// Seed of the `i`-th training stream.
    pub fn training_seed(&self, i: usize) -> u64 {
        self.seed + TRAINING_SEED_OFFSET + i as u64
    }

    pub fn training_scenarios(&self) -> Vec<ScenarioSpec> {
        (0..self.training_streams)
            .map(|i| ScenarioSpec::healthy(self.duration_s, self.training_seed(i)))
            .collect()
    }

    pub fn corpus(&self) -> (Vec<ScenarioSpec>, Vec<ScenarioSpec>) {
        standard_corpus(self.seed, self.healthy_streams, self.fault_streams, self.duration_s, self.ramp_s)
    }

    pub fn detector(&self, sample_rate_hz: f64) -> Result<DetectorConfig> {
        DetectorConfig::from_minutes(sample_rate_hz, self.t_pre_min, self.t_post_min, self.alarm)
    }
}

const TRAINING_SEED_OFFSET: u64 = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthyOutcome {
    pub rng_seed: u64,
    pub segments: usize,
    pub red_windows: usize,
    pub amber_windows: usize,
    pub resting_windows: usize,
    /// Alarms raised on windows that overlap a rest interval.
    pub alarms_in_rest: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultOutcome {
    pub rng_seed: u64,
    pub onset_s: f64,
    pub failure_s: f64,
    /// End time of the window that first completed a sustained-Red run.
    pub red_alarm_s: Option<f64>,
    pub lead_time_s: Option<f64>,
    /// Lead time as a fraction of the onset-to-failure ramp.
    pub lead_fraction: Option<f64>,
    /// Mean error over red threshold for windows inside the ramp.
    pub fault_error_ratio: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub window_size: usize,
    pub thresholds: ThresholdSet,
    pub training_windows: usize,
    pub healthy: Vec<HealthyOutcome>,
    pub faults: Vec<FaultOutcome>,
    pub false_alarm_segments: usize,
    pub detected_before_failure: usize,
    /// Undetected streams count as zero lead.
    pub median_lead_fraction: f64,
    /// Share of all evaluated samples that would have been transmitted.
    pub transmitted_fraction: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trains on generated healthy streams, then streams every corpus scenario
/// through a detector and measures alarms against the ground truth.
pub fn simulate(config: &SimulationConfig) -> Result<(FittedModel<f64>, SimulationReport)> {
    let spec = default_spec(config.window_size)?;
    let training: Vec<ChannelSeries<f64>> = config
        .training_scenarios()
        .iter()
        .map(generate)
        .collect::<Result<_>>()?;
    let refs: Vec<&ChannelSeries<f64>> = training.iter().collect();
    let fitted = fit_model(&refs, &spec, &config.train, config.percentile)?;
    let thresholds = fitted.file.thresholds.expect("fit_model sets thresholds");
    let report = evaluate(config, &fitted.file.model, thresholds, fitted.training.windows.nrows())?;
    Ok((fitted, report))
}

/// Runs the corpus of `config` through a fitted model.
pub fn evaluate(
    config: &SimulationConfig,
    model: &StackedModel<f64>,
    thresholds: ThresholdSet,
    training_windows: usize,
) -> Result<SimulationReport> {
    let w = model.window_size();
    let (healthy_specs, fault_specs) = config.corpus();
    let mut total_samples = 0usize;
    let mut transmitted = 0usize;

    let mut healthy = Vec::with_capacity(healthy_specs.len());
    for spec in &healthy_specs {
        let series = generate(spec)?;
        let detector = config.detector(series.sample_rate_hz)?;
        let run = run_stream(detector, model, &thresholds, &series.samples)?;
        let count = |band| run.outcomes.iter().filter(|o| o.band == band).count();
        let rate = series.sample_rate_hz;
        let alarms_in_rest = run
            .outcomes
            .iter()
            .filter(|o| o.alarm.is_some())
            .filter(|o| {
                let (a, b) = (o.window_origin as f64 / rate, (o.window_origin + w) as f64 / rate);
                spec.rest_intervals.iter().any(|&(s, e)| a < e && s < b)
            })
            .count();
        total_samples += series.len();
        transmitted += run.segments.iter().map(|s| s.len()).sum::<usize>();
        healthy.push(HealthyOutcome {
            rng_seed: spec.rng_seed,
            segments: run.segments.len(),
            red_windows: count(TrafficLight::Red),
            amber_windows: count(TrafficLight::Amber),
            resting_windows: count(TrafficLight::Resting),
            alarms_in_rest,
        });
    }

    let mut faults = Vec::with_capacity(fault_specs.len());
    for spec in &fault_specs {
        let fault = spec
            .fault
            .ok_or_else(|| Error::InvalidScenario("fault scenario without a fault".into()))?;
        let series = generate(spec)?;
        let rate = series.sample_rate_hz;
        let detector = config.detector(rate)?;
        let run = run_stream(detector, model, &thresholds, &series.samples)?;
        let red_alarm_s = run
            .outcomes
            .iter()
            .find(|o| o.alarm == Some(AlarmKind::SustainedRed))
            .map(|o| (o.window_origin + w) as f64 / rate);
        let lead_time_s = red_alarm_s.map(|t| fault.failure_s - t);
        let ratios: Vec<f64> = run
            .outcomes
            .iter()
            .filter(|o| o.band != TrafficLight::Resting)
            .filter(|o| {
                let start = o.window_origin as f64 / rate;
                let end = (o.window_origin + w) as f64 / rate;
                start >= fault.onset_s && end <= fault.failure_s
            })
            .map(|o| o.error / thresholds.red)
            .collect();
        total_samples += series.len();
        transmitted += run.segments.iter().map(|s| s.len()).sum::<usize>();
        faults.push(FaultOutcome {
            rng_seed: spec.rng_seed,
            onset_s: fault.onset_s,
            failure_s: fault.failure_s,
            red_alarm_s,
            lead_time_s,
            lead_fraction: lead_time_s.map(|l| l / fault.ramp_duration_s()),
            fault_error_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            segments: run.segments.len(),
        });
    }

    let mut leads: Vec<f64> = faults.iter().map(|f| f.lead_fraction.unwrap_or(0.0).max(0.0)).collect();
    Ok(SimulationReport {
        window_size: w,
        thresholds,
        training_windows,
        false_alarm_segments: healthy.iter().map(|h| h.segments).sum(),
        detected_before_failure: faults
            .iter()
            .filter(|f| f.lead_time_s.is_some_and(|l| l > 0.0))
            .count(),
        median_lead_fraction: median(&mut leads),
        transmitted_fraction: if total_samples == 0 {
            0.0
        } else {
            transmitted as f64 / total_samples as f64
        },
        healthy,
        faults,
    })
}

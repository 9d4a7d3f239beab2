//! File formats: CSV ingestion, the versioned model file, line-delimited
//! event/segment records and the plot export.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::{Activation, LayerParams, TrainConfig};
use crate::sae::{StackSpec, StackedModel, StageReport};
use crate::scalar::Scalar;
use crate::signal::{ChannelSeries, NormStats, RestParams};
use crate::stream::{AlarmKind, TransmissionSegment, WindowOutcome};
use crate::threshold::{classify, ThresholdSet, TrafficLight};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Relative tolerance on the sample step when checking uniform sampling.
pub const SAMPLING_JITTER: f64 = 0.01;

/// Picks the column to read. An explicit request matches exactly, then
/// case-insensitively; without one the first column whose name contains
/// "field current" (any case) is used.
pub fn resolve_channel(headers: &[String], requested: Option<&str>) -> Result<usize> {
    let found = match requested {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .or_else(|| headers.iter().position(|h| h.eq_ignore_ascii_case(name))),
        None => headers
            .iter()
            .position(|h| h.to_ascii_lowercase().contains("field current")),
    };
    found.ok_or_else(|| Error::MissingChannel {
        requested: requested.unwrap_or("<field current>").to_string(),
        available: headers.join(", "),
    })
}

fn parse_timestamp(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(cell) {
        return Some(dt.timestamp_micros() as f64 / 1e6);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp_micros() as f64 / 1e6);
        }
    }
    None
}

/// All columns of a CSV file; the first column holds timestamps.
pub fn read_csv_channels(path: &Path, sample_rate_hz: f64) -> Result<Vec<ChannelSeries<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(Error::Csv {
            line: 1,
            message: "expected a timestamp column followed by at least one channel".into(),
        });
    }
    let names = &headers[1..];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let expected_step = 1.0 / sample_rate_hz;
    let mut first_time = None;
    let mut previous_time: Option<f64> = None;

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Csv {
            line,
            message: format!("unparseable timestamp '{}'", &record[0]),
        })?;
        if let Some(prev) = previous_time {
            let step = ts - prev;
            if (step - expected_step).abs() > SAMPLING_JITTER * expected_step {
                return Err(Error::NonUniformSampling {
                    line,
                    step_s: step,
                    expected_s: expected_step,
                });
            }
        }
        first_time.get_or_insert(ts);
        previous_time = Some(ts);
        for (k, column) in columns.iter_mut().enumerate() {
            let cell = &record[k + 1];
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Csv {
                line,
                message: format!("non-numeric value '{cell}' in column '{}'", names[k]),
            })?;
            column.push(value);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            available: 0,
        });
    }
    names
        .iter()
        .zip(columns)
        .map(|(name, samples)| {
            Ok(ChannelSeries::new(name.clone(), sample_rate_hz, samples)?
                .with_start_time(first_time.unwrap_or(0.0)))
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Csv {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// One named channel of a CSV file.
pub fn read_csv<T: Scalar>(path: &Path, channel: Option<&str>, sample_rate_hz: f64) -> Result<ChannelSeries<T>> {
    let mut channels = read_csv_channels(path, sample_rate_hz)?;
    let names: Vec<String> = channels.iter().map(|c| c.name.clone()).collect();
    let idx = resolve_channel(&names, channel)?;
    let ch = channels.swap_remove(idx);
    Ok(ChannelSeries {
        name: ch.name,
        sample_rate_hz: ch.sample_rate_hz,
        samples: ch.samples.into_iter().map(T::of).collect(),
        start_time: ch.start_time,
    })
}

/// Provenance recorded alongside trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub config: TrainConfig,
    /// SHA-256 over the little-endian bits of every training sample.
    pub data_fingerprint: String,
    pub training_windows: usize,
    #[serde(default)]
    pub stage_reports: Vec<StageReport>,
}

/// Fingerprint of the normalised training windows.
pub fn fingerprint<T: Scalar>(windows: &Array2<T>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((windows.nrows() as u64).to_le_bytes());
    hasher.update((windows.ncols() as u64).to_le_bytes());
    for v in windows.iter() {
        hasher.update(v.widen().to_bits().to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Everything persisted for a deployed detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T> {
    pub model: StackedModel<T>,
    pub thresholds: Option<ThresholdSet>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    activation: Activation,
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    scalar_type: String,
    spec: StackSpec,
    norm_stats: NormStats,
    rest: RestParams,
    encoders: Vec<LayerDoc>,
    final_decoder: Vec<LayerDoc>,
    thresholds: Option<ThresholdSet>,
    training_metadata: TrainingMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn layer_doc<T: Scalar>(layer: &LayerParams<T>) -> LayerDoc {
    LayerDoc {
        activation: layer.activation,
        rows: layer.out_dim(),
        cols: layer.in_dim(),
        weights: layer.weights.iter().map(|v| v.widen()).collect(),
        biases: layer.biases.iter().map(|v| v.widen()).collect(),
    }
}

fn layer_from_doc<T: Scalar>(doc: LayerDoc) -> Result<LayerParams<T>> {
    if doc.weights.len() != doc.rows * doc.cols {
        return Err(Error::ModelFormat(format!(
            "layer declares {}x{} but stores {} weights",
            doc.rows,
            doc.cols,
            doc.weights.len()
        )));
    }
    let weights = Array2::from_shape_vec((doc.rows, doc.cols), doc.weights.into_iter().map(T::of).collect())
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let biases = Array1::from_vec(doc.biases.into_iter().map(T::of).collect());
    LayerParams::new(weights, biases, doc.activation)
}

/// Serialises the model as JSON; every number is written as the shortest
/// decimal that parses back to the identical binary value.
pub fn model_to_string<T: Scalar>(file: &ModelFile<T>) -> String {
    let doc = ModelDoc {
        format_version: MODEL_FORMAT_VERSION,
        scalar_type: T::NAME.to_string(),
        spec: file.model.spec.clone(),
        norm_stats: file.model.norm_stats,
        rest: file.model.rest,
        encoders: file.model.encoders.iter().map(layer_doc).collect(),
        final_decoder: file.model.final_decoder.iter().map(layer_doc).collect(),
        thresholds: file.thresholds,
        training_metadata: file.metadata.clone(),
    };
    serde_json::to_string(&doc).expect("model document serialises") + "\n"
}

pub fn model_from_str<T: Scalar>(text: &str) -> Result<ModelFile<T>> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(format!("unreadable model: {e}")))?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if doc.scalar_type != T::NAME {
        return Err(Error::ModelFormat(format!(
            "model stores {} parameters, loader expects {}",
            doc.scalar_type,
            T::NAME
        )));
    }
    let model = StackedModel {
        spec: doc.spec,
        encoders: doc.encoders.into_iter().map(layer_from_doc).collect::<Result<_>>()?,
        final_decoder: doc.final_decoder.into_iter().map(layer_from_doc).collect::<Result<_>>()?,
        norm_stats: doc.norm_stats,
        rest: doc.rest,
    };
    model.validate()?;
    Ok(ModelFile {
        model,
        thresholds: doc.thresholds,
        metadata: doc.training_metadata,
    })
}

pub fn save_model<T: Scalar>(file: &ModelFile<T>, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelFile<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

/// One scored window as written by `detect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub record: String,
    pub stream_id: String,
    pub window_origin: usize,
    /// Reconstruction error or exactly -0.001 for resting windows.
    pub error: f64,
    pub band: TrafficLight,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarm: Option<AlarmKind>,
}

impl EventRecord {
    pub fn from_outcome(stream_id: &str, outcome: &WindowOutcome) -> Self {
        Self {
            record: "window".into(),
            stream_id: stream_id.to_string(),
            window_origin: outcome.window_origin,
            error: outcome.error,
            band: outcome.band,
            timestamp: outcome.timestamp,
            alarm: outcome.alarm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub record: String,
    pub stream_id: String,
    pub start_index: usize,
    pub end_index: usize,
    pub trigger_origins: Vec<usize>,
    pub samples: Vec<f64>,
}

impl SegmentRecord {
    pub fn from_segment<T: Scalar>(stream_id: &str, segment: &TransmissionSegment<T>) -> Self {
        Self {
            record: "segment".into(),
            stream_id: stream_id.to_string(),
            start_index: segment.start_index,
            end_index: segment.end_index,
            trigger_origins: segment.trigger_events.iter().map(|e| e.window_origin).collect(),
            samples: segment.samples.iter().map(|v| v.widen()).collect(),
        }
    }
}

/// Appends one JSON object per line.
pub fn write_json_line<W: Write, R: Serialize>(sink: &mut W, record: &R) -> std::io::Result<()> {
    serde_json::to_writer(&mut *sink, record)?;
    sink.write_all(b"\n")
}

pub const PLOT_HEADER: &str = "window_index,error,band,green_threshold,red_threshold";

/// Columnar per-window errors with the thresholds repeated on every row.
pub fn plot_data_string(errors: &[f64], thresholds: &ThresholdSet) -> Result<String> {
    let mut out = String::with_capacity(32 * (errors.len() + 1));
    out.push_str(PLOT_HEADER);
    out.push('\n');
    for (i, &e) in errors.iter().enumerate() {
        let band = classify(e, thresholds)?;
        out.push_str(&format!("{i},{e},{band},{},{}\n", thresholds.green, thresholds.red));
    }
    Ok(out)
}

pub fn export_plot_data(errors: &[f64], thresholds: &ThresholdSet, path: &Path) -> Result<()> {
    let text = plot_data_string(errors, thresholds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

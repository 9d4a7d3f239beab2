//! Time-series representation, windowing, resting detection, scaling and
//! channel correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named sensor channel sampled at a uniform rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries<T> {
    pub name: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<T>,
    /// Seconds since the Unix epoch of the first sample.
    pub start_time: f64,
}

impl<T: Scalar> ChannelSeries<T> {
    pub fn new(name: impl Into<String>, sample_rate_hz: f64, samples: Vec<T>) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            name: name.into(),
            sample_rate_hz,
            samples,
            start_time: 0.0,
        })
    }

    pub fn with_start_time(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// A fixed-length contiguous slice of a parent series.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub values: Vec<T>,
    pub origin_index: usize,
    pub is_resting: bool,
}

impl<T: Scalar> Window<T> {
    pub fn new(values: Vec<T>, origin_index: usize) -> Self {
        Self {
            values,
            origin_index,
            is_resting: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index one past the last sample of the window in the parent series.
    pub fn end_index(&self) -> usize {
        self.origin_index + self.values.len()
    }
}

/// Splits `series` into windows of `window_size` samples starting every
/// `stride` samples. A trailing remainder shorter than a window is dropped.
pub fn segment<T: Scalar>(
    series: &ChannelSeries<T>,
    window_size: usize,
    stride: usize,
) -> Result<Vec<Window<T>>> {
    segment_slice(&series.samples, window_size, stride)
}

pub(crate) fn segment_slice<T: Scalar>(
    samples: &[T],
    window_size: usize,
    stride: usize,
) -> Result<Vec<Window<T>>> {
    if window_size == 0 || stride == 0 {
        return Err(Error::InvalidConfig(
            "window size and stride must be at least 1".into(),
        ));
    }
    if samples.is_empty() || window_size > samples.len() {
        return Err(Error::InsufficientSamples {
            needed: window_size,
            available: samples.len(),
        });
    }
    let count = (samples.len() - window_size) / stride + 1;
    Ok((0..count)
        .map(|k| {
            let origin = k * stride;
            Window::new(samples[origin..origin + window_size].to_vec(), origin)
        })
        .collect())
}

/// Band test used to recognise a stopped machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestParams {
    pub rest_level: f64,
    pub tolerance: f64,
}

impl RestParams {
    /// Fraction of the healthy range used as the default tolerance.
    pub const DEFAULT_TOLERANCE_FRACTION: f64 = 0.01;

    /// Default detector: rest level 0 with a tolerance of 1% of the healthy range.
    pub fn from_healthy_range(stats: &NormStats) -> Self {
        Self {
            rest_level: 0.0,
            tolerance: Self::DEFAULT_TOLERANCE_FRACTION * (stats.max - stats.min),
        }
    }
}

/// True iff every sample lies within `tolerance` of `rest_level`.
pub fn detect_resting<T: Scalar>(values: &[T], params: &RestParams) -> bool {
    values
        .iter()
        .all(|v| (v.widen() - params.rest_level).abs() <= params.tolerance)
}

/// Min-max scaling statistics taken from healthy training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::DegenerateScale { min, max });
        }
        Ok(Self { min, max })
    }

    /// Range of all samples across `windows`.
    pub fn fit<'a, T: Scalar>(windows: impl IntoIterator<Item = &'a [T]>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for w in windows {
            for v in w {
                let v = v.widen();
                min = min.min(v);
                max = max.max(v);
            }
        }
        Self::new(min, max)
    }

    pub fn scale(&self) -> f64 {
        self.max - self.min
    }
}

/// Maps each sample into `[0, 1]` via `(x - min) / (max - min)`.
pub fn normalize<T: Scalar>(window: &Window<T>, stats: &NormStats) -> Result<Window<T>> {
    let stats = NormStats::new(stats.min, stats.max)?;
    Ok(Window {
        values: normalize_values(&window.values, &stats),
        origin_index: window.origin_index,
        is_resting: window.is_resting,
    })
}

pub(crate) fn normalize_values<T: Scalar>(values: &[T], stats: &NormStats) -> Vec<T> {
    let min = T::of(stats.min);
    let scale = T::of(stats.scale());
    values.iter().map(|&v| (v - min) / scale).collect()
}

pub fn denormalize<T: Scalar>(window: &Window<T>, stats: &NormStats) -> Result<Window<T>> {
    let stats = NormStats::new(stats.min, stats.max)?;
    let min = T::of(stats.min);
    let scale = T::of(stats.scale());
    Ok(Window {
        values: window.values.iter().map(|&v| v * scale + min).collect(),
        origin_index: window.origin_index,
        is_resting: window.is_resting,
    })
}

/// Pairwise Pearson coefficients between channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub channel_names: Vec<String>,
    /// Row-major, `channel_names.len()` squared entries.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.channel_names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size() + col]
    }
}

pub fn correlation_matrix<T: Scalar>(channels: &[ChannelSeries<T>]) -> Result<CorrelationMatrix> {
    if channels.len() < 2 {
        return Err(Error::InvalidConfig(
            "correlation needs at least two channels".into(),
        ));
    }
    let n = channels[0].len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: n,
        });
    }
    for ch in channels {
        if ch.len() != n {
            return Err(Error::LengthMismatch {
                name: ch.name.clone(),
                expected: n,
                actual: ch.len(),
            });
        }
    }

    // Centre each channel once; deviations are reused for every pair.
    let centred: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| {
            let mean = ch.samples.iter().map(|v| v.widen()).sum::<f64>() / n as f64;
            ch.samples.iter().map(|v| v.widen() - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centred
        .iter()
        .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    for (ch, &norm) in channels.iter().zip(&norms) {
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVariance(ch.name.clone()));
        }
    }

    let k = channels.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in (i + 1)..k {
            let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    Ok(CorrelationMatrix {
        channel_names: channels.iter().map(|c| c.name.clone()).collect(),
        values,
    })
}

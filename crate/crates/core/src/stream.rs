//! Edge-side streaming detector.
//!
//! Samples arrive one at a time and are tiled into non-overlapping windows.
//! Each completed window is either sentinelled as resting or scored by the
//! model and classified. A sustained run of anomalous windows raises an
//! alarm, which opens a transmission segment reaching `t_pre` samples before
//! the run and `t_post` samples past the last anomaly. Anomalies that start
//! before the segment's deadline extend it.
//!
//! A segment whose deadline has passed is held back until no later alarm
//! could overlap it (the next possible run start lies more than `t_pre`
//! past its end). Alarms closer than that merge into the held segment, so
//! emitted segments never overlap.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::{reconstruction_error, StackedModel};
use crate::scalar::Scalar;
use crate::signal::{detect_resting, normalize_values};
use crate::threshold::{classify, ThresholdSet, TrafficLight, RESTING_SENTINEL};

/// Run lengths that turn per-window bands into an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmPolicy {
    /// Consecutive Red windows.
    pub red_run: usize,
    /// Consecutive Amber-or-Red windows.
    pub amber_run: usize,
}

impl Default for AlarmPolicy {
    fn default() -> Self {
        Self {
            red_run: 3,
            amber_run: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    SustainedRed,
    SustainedAmber,
}

/// Alarm rule evaluated on the trailing run of `bands`. Resting windows are
/// skipped: they neither break nor extend a run.
pub fn raise_alarm(bands: &[TrafficLight], policy: &AlarmPolicy) -> Option<AlarmKind> {
    let mut red = 0usize;
    let mut amber = 0usize;
    let mut red_open = true;
    for band in bands.iter().rev() {
        match band {
            TrafficLight::Resting => continue,
            TrafficLight::Green => break,
            TrafficLight::Amber => {
                red_open = false;
                amber += 1;
            }
            TrafficLight::Red => {
                if red_open {
                    red += 1;
                }
                amber += 1;
            }
        }
    }
    if policy.red_run > 0 && red >= policy.red_run {
        Some(AlarmKind::SustainedRed)
    } else if policy.amber_run > 0 && amber >= policy.amber_run {
        Some(AlarmKind::SustainedAmber)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub sample_rate_hz: f64,
    pub t_pre_samples: usize,
    pub t_post_samples: usize,
    pub alarm: AlarmPolicy,
    /// Seconds since the Unix epoch of sample 0.
    pub start_time: f64,
}

impl DetectorConfig {
    pub const DEFAULT_T_MINUTES: f64 = 2.0;

    pub fn from_minutes(sample_rate_hz: f64, t_pre_min: f64, t_post_min: f64, alarm: AlarmPolicy) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !(t_pre_min >= 0.0) || !(t_post_min >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid detector timing: rate {sample_rate_hz} Hz, t_pre {t_pre_min} min, t_post {t_post_min} min"
            )));
        }
        Ok(Self {
            sample_rate_hz,
            t_pre_samples: (t_pre_min * 60.0 * sample_rate_hz).round() as usize,
            t_post_samples: (t_post_min * 60.0 * sample_rate_hz).round() as usize,
            alarm,
            start_time: 0.0,
        })
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub window_origin: usize,
    pub error: f64,
    pub band: TrafficLight,
    pub timestamp: f64,
}

/// Result of scoring one completed window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub window_origin: usize,
    /// Reconstruction error, or exactly [`RESTING_SENTINEL`].
    pub error: f64,
    pub band: TrafficLight,
    pub timestamp: f64,
    pub alarm: Option<AlarmKind>,
}

impl WindowOutcome {
    pub fn event(&self) -> Option<AnomalyEvent> {
        self.band.is_anomalous().then_some(AnomalyEvent {
            window_origin: self.window_origin,
            error: self.error,
            band: self.band,
            timestamp: self.timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSegment<T> {
    pub start_index: usize,
    /// Exclusive.
    pub end_index: usize,
    pub samples: Vec<T>,
    pub trigger_events: Vec<AnomalyEvent>,
}

impl<T> TransmissionSegment<T> {
    pub fn range(&self) -> Range<usize> {
        self.start_index..self.end_index
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.end_index == self.start_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Quiet,
    Transmitting,
}

/// What one pushed sample produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub window: Option<WindowOutcome>,
    pub segment: Option<TransmissionSegment<T>>,
}

impl<T> Default for StepOutput<T> {
    fn default() -> Self {
        Self {
            window: None,
            segment: None,
        }
    }
}

impl<T> StepOutput<T> {
    pub fn event(&self) -> Option<AnomalyEvent> {
        self.window.as_ref().and_then(WindowOutcome::event)
    }
}

#[derive(Debug, Clone)]
struct OpenSegment {
    start: usize,
    deadline: usize,
    triggers: Vec<AnomalyEvent>,
}

/// Mutable state of one stream's detector.
#[derive(Debug, Clone)]
pub struct Detector<T> {
    config: DetectorConfig,
    window_size: usize,
    assembly: Vec<T>,
    /// Raw samples `[history_start, pushed)`; includes the assembly buffer.
    history: VecDeque<T>,
    history_start: usize,
    pushed: usize,
    next_origin: usize,
    mode: Mode,
    open: Option<OpenSegment>,
    red_run: usize,
    amber_run: usize,
    run_start: Option<usize>,
    run_events: Vec<AnomalyEvent>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: DetectorConfig, window_size: usize) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::InvalidConfig("window size must be at least 1".into()));
        }
        if !(config.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            config,
            window_size,
            assembly: Vec::with_capacity(window_size),
            history: VecDeque::with_capacity(config.t_pre_samples + window_size),
            history_start: 0,
            pushed: 0,
            next_origin: 0,
            mode: Mode::Quiet,
            open: None,
            red_run: 0,
            amber_run: 0,
            run_start: None,
            run_events: Vec::new(),
        })
    }

    pub fn for_model(config: DetectorConfig, model: &StackedModel<T>) -> Result<Self> {
        Self::new(config, model.window_size())
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn samples_seen(&self) -> usize {
        self.pushed
    }

    pub fn assembly_len(&self) -> usize {
        self.assembly.len()
    }

    /// Raw samples currently retained, the assembly buffer included.
    pub fn retained_len(&self) -> usize {
        self.history.len()
    }

    /// Consecutive Amber-or-Red windows in the current run.
    pub fn alarm_counter(&self) -> usize {
        self.amber_run
    }

    /// End of the post-anomaly tail of the active or held segment.
    pub fn transmit_deadline(&self) -> Option<usize> {
        self.open.as_ref().map(|o| o.deadline)
    }

    pub fn push_sample(
        &mut self,
        sample: T,
        model: &StackedModel<T>,
        thresholds: &ThresholdSet,
    ) -> Result<StepOutput<T>> {
        if !sample.is_finite() {
            return Err(Error::CorruptSample(sample.widen()));
        }
        if model.window_size() != self.window_size {
            return Err(Error::dims("detector window size", self.window_size, model.window_size()));
        }
        self.history.push_back(sample);
        self.assembly.push(sample);
        self.pushed += 1;

        let mut out = StepOutput::default();
        if self.assembly.len() == self.window_size {
            let (outcome, displaced) = self.close_window(model, thresholds)?;
            out.window = Some(outcome);
            out.segment = displaced;
        }
        if self.mode == Mode::Transmitting {
            if let Some(open) = &self.open {
                if self.pushed >= open.deadline {
                    self.mode = Mode::Quiet;
                }
            }
        }
        if out.segment.is_none() && self.held_is_final() {
            out.segment = self.take_segment(usize::MAX);
        }
        self.trim_history();
        Ok(out)
    }

    /// Flushes the active or held segment, clamped to the samples seen. A
    /// trailing partial window is never scored.
    pub fn finish(mut self) -> Option<TransmissionSegment<T>> {
        self.take_segment(self.pushed)
    }

    fn close_window(
        &mut self,
        model: &StackedModel<T>,
        thresholds: &ThresholdSet,
    ) -> Result<(WindowOutcome, Option<TransmissionSegment<T>>)> {
        let origin = self.next_origin;
        let end = origin + self.window_size;
        let (error, band) = score_window(model, thresholds, &self.assembly)?;
        self.assembly.clear();
        self.next_origin = end;

        let timestamp = self.config.timestamp(origin);
        let mut outcome = WindowOutcome {
            window_origin: origin,
            error,
            band,
            timestamp,
            alarm: None,
        };
        let Some(event) = outcome.event() else {
            if band == TrafficLight::Green {
                self.red_run = 0;
                self.amber_run = 0;
                self.run_start = None;
                self.run_events.clear();
            }
            return Ok((outcome, None));
        };

        self.red_run = if band == TrafficLight::Red { self.red_run + 1 } else { 0 };
        self.amber_run += 1;
        let run_start = *self.run_start.get_or_insert(origin);
        self.run_events.push(event);
        let policy = self.config.alarm;
        outcome.alarm = if policy.red_run > 0 && self.red_run >= policy.red_run {
            Some(AlarmKind::SustainedRed)
        } else if policy.amber_run > 0 && self.amber_run >= policy.amber_run {
            Some(AlarmKind::SustainedAmber)
        } else {
            None
        };

        let tail = end + self.config.t_post_samples;
        if let Some(open) = self.open.as_mut() {
            if origin < open.deadline {
                open.deadline = open.deadline.max(tail);
                open.triggers.push(event);
            }
        }

        let mut displaced = None;
        if outcome.alarm.is_some() {
            let start = run_start.saturating_sub(self.config.t_pre_samples);
            let merges = self.open.as_ref().is_some_and(|o| start <= o.deadline);
            if !merges {
                // An earlier, non-overlapping segment is complete.
                displaced = self.take_segment(usize::MAX);
                self.open = Some(OpenSegment {
                    start,
                    deadline: tail,
                    triggers: Vec::new(),
                });
            }
            let open = self.open.as_mut().expect("segment opened above");
            open.deadline = open.deadline.max(tail);
            for ev in &self.run_events {
                if !open.triggers.iter().any(|t| t.window_origin == ev.window_origin) {
                    open.triggers.push(*ev);
                }
            }
            open.triggers.sort_by_key(|t| t.window_origin);
        }
        if let Some(open) = &self.open {
            if open.deadline > self.pushed {
                self.mode = Mode::Transmitting;
            }
        }
        Ok((outcome, displaced))
    }

    /// A held segment is final once no future alarm can reach back into it.
    fn held_is_final(&self) -> bool {
        let Some(open) = &self.open else {
            return false;
        };
        if self.mode == Mode::Transmitting {
            return false;
        }
        let reach = open.deadline + self.config.t_pre_samples;
        self.next_origin > reach && self.run_start.is_none_or(|r| r > reach)
    }

    fn take_segment(&mut self, limit: usize) -> Option<TransmissionSegment<T>> {
        let open = self.open.take()?;
        self.mode = Mode::Quiet;
        let end = open.deadline.min(limit).min(self.pushed);
        let from = open.start - self.history_start;
        let to = end - self.history_start;
        Some(TransmissionSegment {
            start_index: open.start,
            end_index: end,
            samples: self.history.range(from..to).copied().collect(),
            trigger_events: open.triggers,
        })
    }

    fn trim_history(&mut self) {
        let mut keep_from = self.next_origin.saturating_sub(self.config.t_pre_samples);
        if let Some(open) = &self.open {
            keep_from = keep_from.min(open.start);
        }
        if let Some(run) = self.run_start {
            keep_from = keep_from.min(run.saturating_sub(self.config.t_pre_samples));
        }
        while self.history_start < keep_from {
            self.history.pop_front();
            self.history_start += 1;
        }
    }
}

/// Resting check, then scaling, reconstruction and classification of one
/// raw window.
pub fn score_window<T: Scalar>(
    model: &StackedModel<T>,
    thresholds: &ThresholdSet,
    raw: &[T],
) -> Result<(f64, TrafficLight)> {
    if detect_resting(raw, &model.rest) {
        return Ok((RESTING_SENTINEL, TrafficLight::Resting));
    }
    let normalized = normalize_values(raw, &model.norm_stats);
    let error = reconstruction_error(model, &normalized)?.widen();
    Ok((error, classify(error, thresholds)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub transmitted_fraction: f64,
    pub segment_count: usize,
}

/// Fraction of `stream_length` samples covered by the given segments.
pub fn bandwidth_report(stream_length: usize, segments: &[Range<usize>]) -> Result<BandwidthReport> {
    let mut sorted = segments.to_vec();
    sorted.sort_by_key(|r| (r.start, r.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::OverlappingSegments {
                first_start: pair[0].start,
                first_end: pair[0].end,
                second_start: pair[1].start,
                second_end: pair[1].end,
            });
        }
    }
    let covered: usize = sorted.iter().map(|r| r.end.saturating_sub(r.start)).sum();
    if covered > stream_length || sorted.last().is_some_and(|r| r.end > stream_length) {
        return Err(Error::InvalidConfig(format!(
            "segments extend past the stream ({stream_length} samples)"
        )));
    }
    let transmitted_fraction = if stream_length == 0 {
        0.0
    } else {
        covered as f64 / stream_length as f64
    };
    Ok(BandwidthReport {
        transmitted_fraction,
        segment_count: sorted.len(),
    })
}

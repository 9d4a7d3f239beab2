//! Seeded synthetic field-current generator with rest periods and a ramped
//! degradation fault.
//!
//! Every scenario draws from one `ChaCha8Rng` seeded with
//! `seed_from_u64(rng_seed)`. Per sample, in index order, the generator
//! draws: one standard normal (measurement noise), and while a fault is
//! active one standard normal (oscillation phase jitter) followed by two
//! `[0, 1)` uniforms (spike arrival, spike magnitude and sign). Rest
//! intervals still consume the draws so the stream stays aligned. Extra
//! correlated channels use their own generators seeded with
//! `rng_seed + 1 + k`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ChannelSeries;

pub const PRNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9) via SeedableRng::seed_from_u64";
pub const NORMAL_SAMPLER: &str = "rand_distr 0.5 StandardNormal (ziggurat)";
pub const DEFAULT_CHANNEL: &str = "Actual Field Current";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicComponent {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub onset_s: f64,
    pub failure_s: f64,
    /// Baseline drift per second since onset, frozen after failure.
    pub drift_rate: f64,
    /// Peak amplitude of the irregular swing reached at failure.
    pub oscillation_gain: f64,
    /// Spike arrival rate reached at failure.
    pub spike_rate_hz: f64,
    #[serde(default = "default_spike_amplitude")]
    pub spike_amplitude: f64,
}

fn default_spike_amplitude() -> f64 {
    1.0
}

const SWING_FREQUENCY_HZ: f64 = 0.8;
const SWING_PHASE_JITTER: f64 = 0.05;

impl FaultSpec {
    pub fn ramp_duration_s(&self) -> f64 {
        self.failure_s - self.onset_s
    }

    /// 0 before onset, rising linearly to 1 at failure and held there.
    pub fn ramp(&self, t: f64) -> f64 {
        ((t - self.onset_s) / self.ramp_duration_s()).clamp(0.0, 1.0)
    }
}

/// Extra channel following the primary one: `offset + gain * (x - baseline) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedChannel {
    pub name: String,
    pub gain: f64,
    pub offset: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_channel_name")]
    pub channel: String,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub baseline: f64,
    pub periodic_components: Vec<PeriodicComponent>,
    pub noise_sigma: f64,
    /// `(start_s, end_s)`, half-open.
    pub rest_intervals: Vec<(f64, f64)>,
    #[serde(default)]
    pub rest_level: f64,
    pub fault: Option<FaultSpec>,
    #[serde(default)]
    pub extra_channels: Vec<CorrelatedChannel>,
    pub rng_seed: u64,
}

fn default_channel_name() -> String {
    DEFAULT_CHANNEL.to_string()
}

impl ScenarioSpec {
    /// Healthy 100 Hz field current: two incommensurate harmonics plus noise.
    /// Phases vary with the seed. Neither frequency completes a whole number
    /// of half cycles in 2.5, 5 or 10 s, so consecutive tiled windows see
    /// different phase combinations.
    pub fn healthy(duration_s: f64, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5E_ED0F_FA5E);
        let tau = std::f64::consts::TAU;
        Self {
            channel: default_channel_name(),
            duration_s,
            sample_rate_hz: 100.0,
            baseline: 10.0,
            periodic_components: vec![
                PeriodicComponent {
                    amplitude: 1.0,
                    frequency_hz: 0.47,
                    phase: rng.random_range(0.0..tau),
                },
                PeriodicComponent {
                    amplitude: 0.4,
                    frequency_hz: 1.73,
                    phase: rng.random_range(0.0..tau),
                },
            ],
            noise_sigma: 0.05,
            rest_intervals: Vec::new(),
            rest_level: 0.0,
            fault: None,
            extra_channels: Vec::new(),
            rng_seed,
        }
    }

    /// Healthy scenario with a degradation ramp of `ramp_s` seconds ending in
    /// failure before the end of the stream. Severity varies with the seed.
    pub fn faulty(duration_s: f64, ramp_s: f64, rng_seed: u64) -> Self {
        let mut spec = Self::healthy(duration_s, rng_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0xFA17_0000);
        let latest_onset = (duration_s - ramp_s - 0.05 * duration_s).max(0.0);
        let earliest_onset = (0.25 * duration_s).min(latest_onset);
        let onset_s = if latest_onset > earliest_onset {
            rng.random_range(earliest_onset..latest_onset)
        } else {
            latest_onset
        };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        spec.fault = Some(FaultSpec {
            onset_s,
            failure_s: onset_s + ramp_s,
            drift_rate: sign * rng.random_range(0.002..0.006),
            oscillation_gain: rng.random_range(0.2..0.5),
            spike_rate_hz: rng.random_range(0.05..0.2),
            spike_amplitude: 1.5,
        });
        spec
    }

    pub fn with_rest(mut self, intervals: Vec<(f64, f64)>) -> Self {
        self.rest_intervals = intervals;
        self
    }

    pub fn with_correlated_channels(mut self) -> Self {
        self.extra_channels = vec![
            CorrelatedChannel {
                name: "Actual Armature Current".into(),
                gain: 4.0,
                offset: 120.0,
                noise_sigma: 0.5,
            },
            CorrelatedChannel {
                name: "Motor Voltage".into(),
                gain: -2.0,
                offset: 400.0,
                noise_sigma: 0.3,
            },
        ];
        self
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.sample_rate_hz > 0.0) || !(self.duration_s > 0.0) {
            return bad("duration and sample rate must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        let mut intervals = self.rest_intervals.clone();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(s, e) in &intervals {
            if !(0.0 <= s && s < e && e <= self.duration_s) {
                return bad(format!("rest interval ({s}, {e}) outside [0, {}]", self.duration_s));
            }
        }
        for pair in intervals.windows(2) {
            if pair[1].0 < pair[0].1 {
                return bad(format!("rest intervals {:?} and {:?} overlap", pair[0], pair[1]));
            }
        }
        if let Some(f) = &self.fault {
            if !(0.0 <= f.onset_s && f.onset_s < f.failure_s && f.failure_s <= self.duration_s) {
                return bad(format!(
                    "fault requires 0 <= onset ({}) < failure ({}) <= duration ({})",
                    f.onset_s, f.failure_s, self.duration_s
                ));
            }
            if !(f.spike_rate_hz >= 0.0) || f.spike_rate_hz > self.sample_rate_hz {
                return bad(format!("spike rate {} out of range", f.spike_rate_hz));
            }
        }
        Ok(())
    }

    fn is_resting(&self, t: f64) -> bool {
        self.rest_intervals.iter().any(|&(s, e)| t >= s && t < e)
    }
}

/// Primary channel of a scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<ChannelSeries<f64>> {
    spec.validate()?;
    let n = spec.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let tau = std::f64::consts::TAU;
    let mut swing_phase = 0.0f64;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / spec.sample_rate_hz;
        let noise: f64 = rng.sample(StandardNormal);
        let mut x = spec.baseline
            + spec
                .periodic_components
                .iter()
                .map(|c| c.amplitude * (tau * c.frequency_hz * t + c.phase).sin())
                .sum::<f64>()
            + spec.noise_sigma * noise;

        if let Some(f) = spec.fault.as_ref().filter(|f| t >= f.onset_s) {
            let ramp = f.ramp(t);
            let jitter: f64 = rng.sample(StandardNormal);
            let arrival: f64 = rng.random();
            let magnitude: f64 = rng.random();
            swing_phase += SWING_PHASE_JITTER * jitter;
            let elapsed = t.min(f.failure_s) - f.onset_s;
            x += f.drift_rate * elapsed;
            x += f.oscillation_gain * ramp * (tau * SWING_FREQUENCY_HZ * t + swing_phase).sin();
            if arrival < f.spike_rate_hz * ramp / spec.sample_rate_hz {
                let signed = 2.0 * magnitude - 1.0;
                x += f.spike_amplitude * (0.5 + 0.5 * signed.abs()) * signed.signum();
            }
        }
        if spec.is_resting(t) {
            x = spec.rest_level;
        }
        samples.push(x);
    }
    ChannelSeries::new(spec.channel.clone(), spec.sample_rate_hz, samples)
}

/// Primary channel followed by any correlated extras.
pub fn generate_channels(spec: &ScenarioSpec) -> Result<Vec<ChannelSeries<f64>>> {
    let primary = generate(spec)?;
    let mut out = Vec::with_capacity(1 + spec.extra_channels.len());
    for (k, extra) in spec.extra_channels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed.wrapping_add(1 + k as u64));
        let samples = primary
            .samples
            .iter()
            .map(|&x| {
                let noise: f64 = rng.sample(StandardNormal);
                extra.offset + extra.gain * (x - spec.baseline) + extra.noise_sigma * noise
            })
            .collect();
        out.push(ChannelSeries::new(extra.name.clone(), spec.sample_rate_hz, samples)?);
    }
    out.insert(0, primary);
    Ok(out)
}

/// Writes `timestamp,<channel>...` rows; timestamps are seconds from 0.
pub fn write_csv(path: &Path, channels: &[ChannelSeries<f64>]) -> Result<()> {
    let Some(first) = channels.first() else {
        return Err(Error::InvalidScenario("no channels to write".into()));
    };
    let mut buf = String::with_capacity(first.len() * 24 * channels.len());
    buf.push_str("timestamp");
    for ch in channels {
        buf.push(',');
        buf.push_str(&ch.name);
    }
    buf.push('\n');
    for i in 0..first.len() {
        buf.push_str(&format!("{}", first.start_time + i as f64 / first.sample_rate_hz));
        for ch in channels {
            buf.push_str(&format!(",{}", ch.samples[i]));
        }
        buf.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInterval {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Healthy,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: ScenarioKind,
    pub channel: String,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub rng_seed: u64,
    pub rest_intervals: Vec<(f64, f64)>,
    /// Onset-to-failure interval of the injected fault, if any.
    pub fault_intervals: Vec<GroundTruthInterval>,
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub prng_algorithm: String,
    pub normal_sampler: String,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            for iv in &e.fault_intervals {
                if !(0.0 <= iv.start_s && iv.start_s < iv.end_s && iv.end_s <= e.duration_s) {
                    return Err(Error::InvalidScenario(format!(
                        "{}: ground truth ({}, {}) outside [0, {}]",
                        e.file, iv.start_s, iv.end_s, e.duration_s
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn path_of(&self, dir: &Path, entry: &ManifestEntry) -> PathBuf {
        dir.join(&entry.file)
    }
}

/// Writes one CSV per scenario plus `manifest.json` into `dir`.
pub fn generate_corpus(dir: &Path, healthy: &[ScenarioSpec], faults: &[ScenarioSpec]) -> Result<Manifest> {
    if healthy.is_empty() {
        return Err(Error::InvalidScenario("corpus needs at least one healthy scenario".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let labelled = healthy
        .iter()
        .map(|s| (ScenarioKind::Healthy, s))
        .chain(faults.iter().map(|s| (ScenarioKind::Fault, s)));
    let (mut h, mut f) = (0, 0);
    for (kind, spec) in labelled {
        let file = match kind {
            ScenarioKind::Healthy => {
                h += 1;
                format!("healthy_{:03}.csv", h - 1)
            }
            ScenarioKind::Fault => {
                f += 1;
                format!("fault_{:03}.csv", f - 1)
            }
        };
        let channels = generate_channels(spec)?;
        write_csv(&dir.join(&file), &channels)?;
        entries.push(ManifestEntry {
            file,
            kind,
            channel: spec.channel.clone(),
            duration_s: spec.duration_s,
            sample_rate_hz: spec.sample_rate_hz,
            rng_seed: spec.rng_seed,
            rest_intervals: spec.rest_intervals.clone(),
            fault_intervals: spec
                .fault
                .iter()
                .map(|f| GroundTruthInterval {
                    start_s: f.onset_s,
                    end_s: f.failure_s,
                })
                .collect(),
            scenario: spec.clone(),
        });
    }
    let manifest = Manifest {
        prng_algorithm: PRNG_ALGORITHM.into(),
        normal_sampler: NORMAL_SAMPLER.into(),
        entries,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Seed layout shared by the CLI `gen-data`/`simulate` commands: healthy
/// scenarios use `seed + i`, fault scenarios `seed + 10_000 + i`. Every
/// other healthy scenario carries two rest periods.
pub fn standard_corpus(
    seed: u64,
    healthy_count: usize,
    fault_count: usize,
    duration_s: f64,
    ramp_s: f64,
) -> (Vec<ScenarioSpec>, Vec<ScenarioSpec>) {
    let healthy = (0..healthy_count)
        .map(|i| {
            let spec = ScenarioSpec::healthy(duration_s, seed + i as u64);
            if i % 2 == 1 {
                spec.with_rest(vec![
                    (0.2 * duration_s, 0.3 * duration_s),
                    (0.6 * duration_s, 0.65 * duration_s),
                ])
            } else {
                spec
            }
        })
        .collect();
    let faults = (0..fault_count)
        .map(|i| ScenarioSpec::faulty(duration_s, ramp_s, seed + 10_000 + i as u64))
        .collect();
    (healthy, faults)
}

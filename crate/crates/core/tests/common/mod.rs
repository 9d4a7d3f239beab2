//! Test-only oracles shared by the integration suites.

use sae_monitor::stream::raise_alarm;
use sae_monitor::{DetectorConfig, TrafficLight};

/// Offline gating: every alarm opens `[run_start - t_pre, end + t_post)`,
/// anomalies starting inside an interval stretch it, touching intervals
/// merge, and the result is clamped to the stream.
pub fn oracle_ranges(bands: &[TrafficLight], window: usize, cfg: &DetectorConfig, len: usize) -> Vec<(usize, usize)> {
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    for i in 0..bands.len() {
        if raise_alarm(&bands[..=i], &cfg.alarm).is_none() || !bands[i].is_anomalous() {
            continue;
        }
        let mut first = i;
        for j in (0..i).rev() {
            match bands[j] {
                TrafficLight::Green => break,
                TrafficLight::Resting => {}
                _ => first = j,
            }
        }
        intervals.push(((first * window).saturating_sub(cfg.t_pre_samples), (i + 1) * window + cfg.t_post_samples));
    }
    loop {
        let before = intervals.clone();
        for iv in &mut intervals {
            for (k, b) in bands.iter().enumerate() {
                if b.is_anomalous() && k * window >= iv.0 && k * window < iv.1 {
                    iv.1 = iv.1.max((k + 1) * window + cfg.t_post_samples);
                }
            }
        }
        intervals.sort();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
                _ => merged.push(iv),
            }
        }
        intervals = merged;
        if intervals == before {
            break;
        }
    }
    intervals.into_iter().map(|(s, e)| (s, e.min(len))).collect()
}

pub fn covered_fraction(ranges: &[(usize, usize)], len: usize) -> f64 {
    let mut mask = vec![false; len];
    for &(s, e) in ranges {
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }
    mask.iter().filter(|m| **m).count() as f64 / len as f64
}

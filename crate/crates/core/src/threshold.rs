//! Traffic-light thresholds fitted on healthy reconstruction errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error value recorded for windows where the machine is at rest.
pub const RESTING_SENTINEL: f64 = -0.001;

pub const DEFAULT_PERCENTILE: f64 = 99.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    /// Nearest-rank percentile of the healthy errors.
    pub green: f64,
    /// Largest healthy error.
    pub red: f64,
    pub resting_sentinel: f64,
    pub percentile: f64,
}

impl ThresholdSet {
    pub fn new(green: f64, red: f64, percentile: f64) -> Result<Self> {
        if !(0.0 <= green && green <= red) || !red.is_finite() {
            return Err(Error::InvalidThresholdInput(format!(
                "require 0 <= green <= red, got green={green} red={red}"
            )));
        }
        Ok(Self {
            green,
            red,
            resting_sentinel: RESTING_SENTINEL,
            percentile,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficLight {
    Resting,
    Green,
    Amber,
    Red,
}

impl TrafficLight {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficLight::Resting => "resting",
            TrafficLight::Green => "green",
            TrafficLight::Amber => "amber",
            TrafficLight::Red => "red",
        }
    }

    /// Amber or Red.
    pub fn is_anomalous(self) -> bool {
        matches!(self, TrafficLight::Amber | TrafficLight::Red)
    }

    /// Position on the Green < Amber < Red scale; `None` for Resting.
    pub fn severity(self) -> Option<u8> {
        match self {
            TrafficLight::Resting => None,
            TrafficLight::Green => Some(0),
            TrafficLight::Amber => Some(1),
            TrafficLight::Red => Some(2),
        }
    }
}

impl std::fmt::Display for TrafficLight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrafficLight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resting" => Ok(TrafficLight::Resting),
            "green" => Ok(TrafficLight::Green),
            "amber" => Ok(TrafficLight::Amber),
            "red" => Ok(TrafficLight::Red),
            other => Err(Error::InvalidThresholdInput(format!("unknown band '{other}'"))),
        }
    }
}

/// 1-based nearest rank `ceil(p/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(percentile: f64, n: usize) -> usize {
    let exact = percentile * n as f64 / 100.0;
    // Absorb representation error such as 99.95 * 10000 / 100 = 9995.000000001.
    let rank = (exact - exact.abs() * 1e-12).ceil();
    (rank.max(1.0) as usize).min(n)
}

/// Green = nearest-rank `percentile` of `healthy_errors`, red = their maximum.
pub fn fit_thresholds(healthy_errors: &[f64], percentile: f64) -> Result<ThresholdSet> {
    if healthy_errors.is_empty() {
        return Err(Error::InvalidThresholdInput("no healthy errors".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidThresholdInput(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    if let Some(bad) = healthy_errors.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(Error::InvalidThresholdInput(format!(
            "healthy errors must be finite and non-negative (filter resting sentinels first), got {bad}"
        )));
    }
    let mut sorted = healthy_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = nearest_rank(percentile, sorted.len());
    ThresholdSet::new(sorted[rank - 1], sorted[sorted.len() - 1], percentile)
}

/// Sentinel -> Resting; `<= green` -> Green; `<= red` -> Amber; else Red.
pub fn classify(error: f64, thresholds: &ThresholdSet) -> Result<TrafficLight> {
    if error.is_nan() {
        return Err(Error::InvalidReconstruction);
    }
    Ok(if error == thresholds.resting_sentinel {
        TrafficLight::Resting
    } else if error <= thresholds.green {
        TrafficLight::Green
    } else if error <= thresholds.red {
        TrafficLight::Amber
    } else {
        TrafficLight::Red
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_errors() {
        let t = fit_thresholds(&[0.3; 50], 99.95).unwrap();
        assert_eq!((t.green, t.red), (0.3, 0.3));
        let single = fit_thresholds(&[5.0], 10.0).unwrap();
        assert_eq!((single.green, single.red), (5.0, 5.0));
    }

    #[test]
    fn nearest_rank_on_integers() {
        let errors: Vec<f64> = (1..=10_000).map(f64::from).collect();
        let t = fit_thresholds(&errors, 99.95).unwrap();
        assert_eq!(t.green, 9995.0);
        assert_eq!(t.red, 10_000.0);
        assert_eq!(nearest_rank(50.0, 5), 3);
        assert_eq!(nearest_rank(100.0, 7), 7);
        assert_eq!(nearest_rank(0.001, 7), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_thresholds(&[], 99.95).is_err());
        assert!(fit_thresholds(&[0.1, RESTING_SENTINEL], 99.95).is_err());
        assert!(fit_thresholds(&[0.1, f64::NAN], 99.95).is_err());
        assert!(fit_thresholds(&[0.1], 0.0).is_err());
        assert!(fit_thresholds(&[0.1], 100.5).is_err());
    }

    #[test]
    fn classify_bands() {
        let t = ThresholdSet::new(0.1, 0.5, 99.95).unwrap();
        assert_eq!(classify(-0.001, &t).unwrap(), TrafficLight::Resting);
        assert_eq!(classify(0.0, &t).unwrap(), TrafficLight::Green);
        assert_eq!(classify(0.1, &t).unwrap(), TrafficLight::Green);
        assert_eq!(classify(0.3, &t).unwrap(), TrafficLight::Amber);
        assert_eq!(classify(0.5, &t).unwrap(), TrafficLight::Amber);
        assert_eq!(classify(0.6, &t).unwrap(), TrafficLight::Red);
        assert!(matches!(classify(f64::NAN, &t), Err(Error::InvalidReconstruction)));
    }

    #[test]
    fn band_names_round_trip() {
        for b in [TrafficLight::Resting, TrafficLight::Green, TrafficLight::Amber, TrafficLight::Red] {
            assert_eq!(b.as_str().parse::<TrafficLight>().unwrap(), b);
        }
    }

    proptest! {
        #[test]
        fn fitting_set_mostly_green_never_red(errors in prop::collection::vec(0.0f64..10.0, 1..3000)) {
            let t = fit_thresholds(&errors, 99.95).unwrap();
            let above: usize = errors.iter().filter(|&&e| classify(e, &t).unwrap() != TrafficLight::Green).count();
            let red = errors.iter().filter(|&&e| classify(e, &t).unwrap() == TrafficLight::Red).count();
            prop_assert_eq!(red, 0);
            prop_assert!(above <= errors.len() - nearest_rank(99.95, errors.len()));
        }

        #[test]
        fn order_invariant(mut errors in prop::collection::vec(0.0f64..10.0, 1..200), p in 0.1f64..100.0) {
            let a = fit_thresholds(&errors, p).unwrap();
            errors.reverse();
            prop_assert_eq!(a, fit_thresholds(&errors, p).unwrap());
        }

        #[test]
        fn monotone(a in 0.0f64..2.0, b in 0.0f64..2.0, g in 0.0f64..1.0, extra in 0.0f64..1.0) {
            let t = ThresholdSet::new(g, g + extra, 99.95).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify(lo, &t).unwrap() <= classify(hi, &t).unwrap());
        }

        #[test]
        fn scale_equivariant(errors in prop::collection::vec(0.0f64..10.0, 1..200), e in 0.0f64..12.0, k in 0u32..6) {
            // power-of-two scaling is exact, so the equivalence holds bit for bit
            let c = f64::from(1u32 << k) / 4.0;
            let t = fit_thresholds(&errors, 99.95).unwrap();
            let scaled: Vec<f64> = errors.iter().map(|x| x * c).collect();
            let ts = fit_thresholds(&scaled, 99.95).unwrap();
            prop_assert_eq!(ts.green, t.green * c);
            prop_assert_eq!(ts.red, t.red * c);
            prop_assert_eq!(classify(e, &t).unwrap(), classify(e * c, &ts).unwrap());
        }
    }
}

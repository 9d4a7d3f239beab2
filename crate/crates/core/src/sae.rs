//! Greedy layer-wise stacked autoencoder.
//!
//! Each stage is a single-hidden-layer autoencoder trained on the hidden
//! codes of the stage before it. Only the encoder halves are kept. A final
//! two-layer decoder then learns to expand the bottleneck code back into the
//! original window. No gradient ever flows across stages.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, Activation, LayerParams, TrainConfig};
use crate::scalar::Scalar;
use crate::signal::{NormStats, RestParams};

/// Layer geometry of a stacked model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSpec {
    pub window_size: usize,
    pub encoder_dims: Vec<usize>,
    pub final_decoder_hidden: usize,
}

impl StackSpec {
    pub fn new(
        window_size: usize,
        encoder_dims: Vec<usize>,
        final_decoder_hidden: usize,
    ) -> Result<Self> {
        let spec = Self {
            window_size,
            encoder_dims,
            final_decoder_hidden,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_dims.is_empty() {
            return Err(Error::InvalidConfig("at least one encoder layer required".into()));
        }
        if self.final_decoder_hidden == 0 || self.encoder_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be at least 1".into()));
        }
        let mut previous = self.window_size;
        for &d in &self.encoder_dims {
            if d >= previous {
                return Err(Error::InvalidConfig(format!(
                    "encoder widths must strictly decrease from the window size: {} -> {:?}",
                    self.window_size, self.encoder_dims
                )));
            }
            previous = d;
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> usize {
        *self.encoder_dims.last().expect("validated spec")
    }

    /// Input width of every stage, followed by the bottleneck width.
    pub fn stage_widths(&self) -> Vec<usize> {
        std::iter::once(self.window_size)
            .chain(self.encoder_dims.iter().copied())
            .collect()
    }
}

/// Width fractions of the 500-sample geometry, reused for other windows.
const REDUCTION_PROFILE: [f64; 4] = [0.6, 0.4, 0.24, 0.14];
const FINAL_HIDDEN_FRACTION: f64 = 0.1;

/// Geometry for a window size: the published 500 and 250 layouts, and the
/// same ~40% per-layer reduction scaled to any other window of at least 50.
pub fn default_spec(window_size: usize) -> Result<StackSpec> {
    match window_size {
        w if w < 50 => Err(Error::WindowTooSmall(w)),
        500 => StackSpec::new(500, vec![300, 200, 120, 70], 50),
        250 => StackSpec::new(250, vec![150, 100, 75], 50),
        w => {
            let dims = REDUCTION_PROFILE
                .iter()
                .map(|f| ((w as f64) * f).round() as usize)
                .collect();
            let hidden = ((w as f64) * FINAL_HIDDEN_FRACTION).round().max(1.0) as usize;
            StackSpec::new(w, dims, hidden)
        }
    }
}

/// Loss trace of one trained stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl StageReport {
    fn from_state<T: Scalar>(input_dim: usize, hidden_dim: usize, state: neural::TrainState<T>) -> Self {
        Self {
            input_dim,
            hidden_dim,
            initial_loss: state.initial_loss,
            epoch_losses: state.epoch_losses,
            stopped_early: state.stopped_early,
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Notification passed to a [`train_stack_observed`] observer.
#[derive(Debug)]
pub enum StageEvent<'a, T> {
    /// Stage `stage` is about to train; `frozen` holds all earlier encoders.
    Starting { stage: usize, frozen: &'a [LayerParams<T>] },
    Finished { stage: usize, frozen: &'a [LayerParams<T>] },
}

/// Derives an independent seed per stage and purpose.
fn stage_seed(base: u64, stage: usize, purpose: u64) -> u64 {
    base ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage as u64 + 1))
        ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn check_windows<T: Scalar>(windows: ArrayView2<T>, spec: &StackSpec) -> Result<()> {
    spec.validate()?;
    if windows.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if windows.ncols() != spec.window_size {
        return Err(Error::dims("training window length", spec.window_size, windows.ncols()));
    }
    Ok(())
}

fn stage_config(config: &TrainConfig, stage: usize) -> TrainConfig {
    TrainConfig {
        rng_seed: stage_seed(config.rng_seed, stage, 1),
        ..config.clone()
    }
}

#[derive(Debug, Clone)]
pub struct StackTraining<T> {
    pub encoders: Vec<LayerParams<T>>,
    pub reports: Vec<StageReport>,
}

/// Trains the encoder stack greedily on normalised, non-resting windows (one
/// per row).
pub fn train_stack<T: Scalar>(
    windows: ArrayView2<T>,
    spec: &StackSpec,
    config: &TrainConfig,
) -> Result<StackTraining<T>> {
    train_stack_observed(windows, spec, config, |_| {})
}

pub fn train_stack_observed<T: Scalar>(
    windows: ArrayView2<T>,
    spec: &StackSpec,
    config: &TrainConfig,
    mut observer: impl FnMut(StageEvent<'_, T>),
) -> Result<StackTraining<T>> {
    check_windows(windows, spec)?;
    config.validate()?;

    let mut encoders: Vec<LayerParams<T>> = Vec::with_capacity(spec.encoder_dims.len());
    let mut reports = Vec::with_capacity(spec.encoder_dims.len());
    let mut codes: Array2<T> = windows.to_owned();
    for (stage, &hidden) in spec.encoder_dims.iter().enumerate() {
        observer(StageEvent::Starting {
            stage,
            frozen: &encoders,
        });
        let input_dim = codes.ncols();
        let mut init_rng = ChaCha8Rng::seed_from_u64(stage_seed(config.rng_seed, stage, 0));
        let mut ae = vec![
            LayerParams::init(input_dim, hidden, Activation::Tanh, &mut init_rng),
            LayerParams::init(hidden, input_dim, Activation::Tanh, &mut init_rng),
        ];
        let state = neural::train_epochs(&mut ae, codes.view(), codes.view(), &stage_config(config, stage))?;
        reports.push(StageReport::from_state(input_dim, hidden, state));

        let encoder = ae.swap_remove(0);
        codes = encoder.forward_batch(codes.view())?;
        encoders.push(encoder);
        observer(StageEvent::Finished {
            stage,
            frozen: &encoders,
        });
    }
    Ok(StackTraining { encoders, reports })
}

/// Trains the bottleneck -> hidden -> window decoder against the original
/// windows, with the encoders frozen.
pub fn train_final_decoder<T: Scalar>(
    encoders: &[LayerParams<T>],
    windows: ArrayView2<T>,
    spec: &StackSpec,
    config: &TrainConfig,
) -> Result<(Vec<LayerParams<T>>, StageReport)> {
    check_windows(windows, spec)?;
    if encoders.len() != spec.encoder_dims.len() {
        return Err(Error::dims("encoder count", spec.encoder_dims.len(), encoders.len()));
    }
    for (enc, (&input, &hidden)) in encoders
        .iter()
        .zip(spec.stage_widths().iter().zip(&spec.encoder_dims))
    {
        if enc.in_dim() != input || enc.out_dim() != hidden {
            return Err(Error::dims("encoder width", hidden, enc.out_dim()));
        }
    }
    let codes = neural::forward_chain_batch(encoders, windows)?;
    let stage = spec.encoder_dims.len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(stage_seed(config.rng_seed, stage, 0));
    let mut decoder = vec![
        LayerParams::init(spec.bottleneck(), spec.final_decoder_hidden, Activation::Tanh, &mut init_rng),
        LayerParams::init(spec.final_decoder_hidden, spec.window_size, Activation::Identity, &mut init_rng),
    ];
    let state = neural::train_epochs(&mut decoder, codes.view(), windows, &stage_config(config, stage))?;
    let report = StageReport::from_state(spec.bottleneck(), spec.final_decoder_hidden, state);
    Ok((decoder, report))
}

/// The trained detector network plus the scaling it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel<T> {
    pub spec: StackSpec,
    pub encoders: Vec<LayerParams<T>>,
    pub final_decoder: Vec<LayerParams<T>>,
    pub norm_stats: NormStats,
    pub rest: RestParams,
}

impl<T: Scalar> StackedModel<T> {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.encoders.len() != self.spec.encoder_dims.len() {
            return Err(Error::dims("encoder count", self.spec.encoder_dims.len(), self.encoders.len()));
        }
        let widths = self.spec.stage_widths();
        for (k, enc) in self.encoders.iter().enumerate() {
            if enc.in_dim() != widths[k] {
                return Err(Error::dims("encoder input", widths[k], enc.in_dim()));
            }
            if enc.out_dim() != widths[k + 1] {
                return Err(Error::dims("encoder output", widths[k + 1], enc.out_dim()));
            }
        }
        match self.final_decoder.as_slice() {
            [hidden, output] => {
                if hidden.in_dim() != self.spec.bottleneck() {
                    return Err(Error::dims("decoder input", self.spec.bottleneck(), hidden.in_dim()));
                }
                if hidden.out_dim() != self.spec.final_decoder_hidden {
                    return Err(Error::dims("decoder hidden", self.spec.final_decoder_hidden, hidden.out_dim()));
                }
                if output.in_dim() != hidden.out_dim() {
                    return Err(Error::dims("decoder output input", hidden.out_dim(), output.in_dim()));
                }
                if output.out_dim() != self.spec.window_size {
                    return Err(Error::dims("decoder output", self.spec.window_size, output.out_dim()));
                }
            }
            other => return Err(Error::dims("final decoder layers", 2, other.len())),
        }
        NormStats::new(self.norm_stats.min, self.norm_stats.max)?;
        Ok(())
    }

    pub fn window_size(&self) -> usize {
        self.spec.window_size
    }

    /// Bottleneck features of a normalised window.
    pub fn encode(&self, window: &[T]) -> Result<Vec<T>> {
        self.check_len(window)?;
        Ok(neural::forward_chain(&self.encoders, ArrayView1::from(window))?.to_vec())
    }

    /// Full reconstruction of a normalised window.
    pub fn reconstruct(&self, window: &[T]) -> Result<Vec<T>> {
        self.check_len(window)?;
        let code = neural::forward_chain(&self.encoders, ArrayView1::from(window))?;
        Ok(neural::forward_chain(&self.final_decoder, code.view())?.to_vec())
    }

    fn check_len(&self, window: &[T]) -> Result<()> {
        if window.len() != self.spec.window_size {
            return Err(Error::dims("window length", self.spec.window_size, window.len()));
        }
        Ok(())
    }
}

/// `squared_distance(window, reconstruction)` for a normalised window.
pub fn reconstruction_error<T: Scalar>(model: &StackedModel<T>, window: &[T]) -> Result<T> {
    let out = model.reconstruct(window)?;
    neural::squared_distance(window, &out)
}

/// Output of [`train_model`].
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub model: StackedModel<T>,
    pub stage_reports: Vec<StageReport>,
    pub decoder_report: StageReport,
}

/// Full greedy pipeline on already-normalised training windows.
pub fn train_model<T: Scalar>(
    windows: ArrayView2<T>,
    spec: &StackSpec,
    config: &TrainConfig,
    norm_stats: NormStats,
    rest: RestParams,
) -> Result<TrainedModel<T>> {
    let stack = train_stack(windows, spec, config)?;
    let (final_decoder, decoder_report) = train_final_decoder(&stack.encoders, windows, spec, config)?;
    let model = StackedModel {
        spec: spec.clone(),
        encoders: stack.encoders,
        final_decoder,
        norm_stats,
        rest,
    };
    model.validate()?;
    Ok(TrainedModel {
        model,
        stage_reports: stack.reports,
        decoder_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn toy_windows(rows: usize, width: usize) -> Array2<f64> {
        Array::from_shape_fn((rows, width), |(i, j)| {
            0.5 + 0.3 * ((j as f64) * 0.2 + i as f64 * 0.7).sin()
        })
    }

    fn fast_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 8,
            rng_seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn published_geometries() {
        assert_eq!(default_spec(500).unwrap().encoder_dims, vec![300, 200, 120, 70]);
        assert_eq!(default_spec(500).unwrap().final_decoder_hidden, 50);
        assert_eq!(default_spec(250).unwrap().encoder_dims, vec![150, 100, 75]);
        assert_eq!(default_spec(250).unwrap().final_decoder_hidden, 50);
    }

    #[test]
    fn scaled_geometry_for_thousand() {
        let s = default_spec(1000).unwrap();
        assert_eq!(s.encoder_dims, vec![600, 400, 240, 140]);
        assert_eq!(s.final_decoder_hidden, 100);
        let ratio: f64 = 140.0 / 1000.0;
        let reference = 70.0 / 500.0;
        assert!((ratio - reference).abs() <= 0.03);
        for pair in s.stage_widths().windows(2) {
            assert!(pair[1] < pair[0]);
            // roughly 40% reduction per layer
            let shrink = 1.0 - pair[1] as f64 / pair[0] as f64;
            assert!((0.3..=0.45).contains(&shrink), "{pair:?}");
        }
    }

    #[test]
    fn small_windows_rejected_and_odd_sizes_scaled() {
        assert!(matches!(default_spec(49), Err(Error::WindowTooSmall(49))));
        let s = default_spec(50).unwrap();
        assert_eq!(s.encoder_dims, vec![30, 20, 12, 7]);
        assert!(default_spec(777).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(StackSpec::new(10, vec![10], 5).is_err());
        assert!(StackSpec::new(10, vec![6, 7], 5).is_err());
        assert!(StackSpec::new(10, vec![], 5).is_err());
        assert!(StackSpec::new(10, vec![6, 3], 0).is_err());
    }

    #[test]
    fn degenerate_stack_equals_single_autoencoder() {
        let x = toy_windows(40, 12);
        let spec = StackSpec::new(12, vec![5], 4).unwrap();
        let config = fast_config();
        let stack = train_stack(x.view(), &spec, &config).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.rng_seed, 0, 0));
        let mut ae = vec![
            LayerParams::init(12, 5, Activation::Tanh, &mut rng),
            LayerParams::init(5, 12, Activation::Tanh, &mut rng),
        ];
        neural::train_epochs(&mut ae, x.view(), x.view(), &stage_config(&config, 0)).unwrap();
        assert_eq!(stack.encoders.len(), 1);
        assert_eq!(stack.encoders[0], ae[0]);
    }

    #[test]
    fn each_stage_improves_on_its_own_inputs() {
        let x = toy_windows(60, 20);
        let spec = StackSpec::new(20, vec![12, 8, 5], 6).unwrap();
        let stack = train_stack(x.view(), &spec, &fast_config()).unwrap();
        for r in &stack.reports {
            assert!(r.final_loss() <= r.initial_loss, "{r:?}");
        }
        let code = neural::forward_chain(&stack.encoders, x.row(0)).unwrap();
        assert_eq!(code.len(), 5);
    }

    #[test]
    fn earlier_stages_are_frozen() {
        let x = toy_windows(30, 16);
        let spec = StackSpec::new(16, vec![10, 6, 3], 4).unwrap();
        let mut snapshots: Vec<Vec<LayerParams<f64>>> = Vec::new();
        let mut checked = 0;
        train_stack_observed(x.view(), &spec, &fast_config(), |ev| match ev {
            StageEvent::Starting { frozen, .. } => snapshots.push(frozen.to_vec()),
            StageEvent::Finished { stage, frozen } => {
                let before = &snapshots[stage];
                assert_eq!(&frozen[..before.len()], &before[..]);
                checked += 1;
            }
        })
        .unwrap();
        assert_eq!(checked, 3);
    }

    #[test]
    fn final_decoder_fits_single_window_and_leaves_encoders_alone() {
        let x = toy_windows(1, 16);
        let spec = StackSpec::new(16, vec![8, 4], 6).unwrap();
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 3000,
            batch_size: 1,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let stack = train_stack(x.view(), &spec, &fast_config()).unwrap();
        let before = stack.encoders.clone();
        let (decoder, report) = train_final_decoder(&stack.encoders, x.view(), &spec, &config).unwrap();
        assert_eq!(before, stack.encoders);

        let model = StackedModel {
            spec,
            encoders: stack.encoders,
            final_decoder: decoder,
            norm_stats: NormStats::new(0.0, 1.0).unwrap(),
            rest: RestParams { rest_level: 0.0, tolerance: 0.01 },
        };
        model.validate().unwrap();
        let w = x.row(0).to_vec();
        let err = reconstruction_error(&model, &w).unwrap();
        assert!(err < 1e-4, "error {err}");
        assert_eq!(err.to_bits(), reconstruction_error(&model, &w).unwrap().to_bits());
        // the recorded loss is the squared distance to the original window
        let out = model.reconstruct(&w).unwrap();
        assert_eq!(neural::squared_distance(&w, &out).unwrap(), err);
        assert!(report.final_loss() < report.initial_loss);
    }

    #[test]
    fn decoder_loss_is_squared_distance_to_window() {
        let x = toy_windows(10, 12);
        let spec = StackSpec::new(12, vec![6], 4).unwrap();
        let stack = train_stack(x.view(), &spec, &fast_config()).unwrap();
        let config = TrainConfig { epochs: 0, ..fast_config() };
        let (decoder, report) = train_final_decoder(&stack.encoders, x.view(), &spec, &config).unwrap();
        let mut total = 0.0;
        for row in x.rows() {
            let code = neural::forward_chain(&stack.encoders, row).unwrap();
            let out = neural::forward_chain(&decoder, code.view()).unwrap();
            total += neural::squared_distance(row.as_slice().unwrap(), out.as_slice().unwrap()).unwrap();
        }
        assert!((report.initial_loss - total / 10.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let x = toy_windows(10, 12);
        let spec = StackSpec::new(12, vec![6], 4).unwrap();
        let trained = train_model(
            x.view(),
            &spec,
            &fast_config(),
            NormStats::new(0.0, 1.0).unwrap(),
            RestParams { rest_level: 0.0, tolerance: 0.01 },
        )
        .unwrap();
        assert!(reconstruction_error(&trained.model, &[0.5; 11]).is_err());
        let wrong = StackSpec::new(10, vec![6], 4).unwrap();
        assert!(train_stack(x.view(), &wrong, &fast_config()).is_err());
        let empty = Array2::<f64>::zeros((0, 12));
        assert!(matches!(train_stack(empty.view(), &spec, &fast_config()), Err(Error::EmptyTrainingSet)));
    }
}

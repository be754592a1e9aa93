//! Supervised training of the driving network on stored demonstrations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, SampleStore, Split};
use crate::pilotnet::{normalize_pixel, ModelError, PilotNet, PilotNetConfig};
use crate::tensor::{adam_step, mse_loss, mse_loss_backward, AdamConfig, AdamState, Tensor, TensorError};
use crate::vision::{
    adjust_brightness, balance_indices, crop_and_resize, flip_frame, to_yuv_planar, BalanceConfig, CropRegion,
    RawFrame, VisionError, MODEL_HEIGHT, MODEL_WIDTH,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error("cannot write loss curve to {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub early_stop_patience: usize,
    pub flip_prob: f64,
    /// Probability of applying a random brightness factor.
    pub brightness_prob: f64,
    pub brightness_range: [f32; 2],
    pub balance: BalanceConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            early_stop_patience: 5,
            flip_prob: 0.5,
            brightness_prob: 0.5,
            brightness_range: [crate::vision::BRIGHTNESS_MIN, crate::vision::BRIGHTNESS_MAX],
            balance: BalanceConfig::default(),
            val_fraction: crate::dataset::DEFAULT_VAL_FRACTION,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1".into());
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("brightness_prob", self.brightness_prob), ("balance.p_keep", self.balance.p_keep)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} not in [0, 1]"));
            }
        }
        let [lo, hi] = self.brightness_range;
        if !(crate::vision::BRIGHTNESS_MIN <= lo && lo <= hi && hi <= crate::vision::BRIGHTNESS_MAX) {
            return bad(format!("brightness_range {lo}..{hi} must lie within [0.4, 1.0]"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("adam parameters out of range".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f32,
    pub val_mse: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best(&self) -> Option<EpochLoss> {
        self.epochs.iter().copied().min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
    }
}

/// Network-sized RGB image with its label, cached once per run.
#[derive(Debug, Clone)]
pub struct Example {
    pub image: RawFrame,
    pub steering: f32,
    pub throttle: f32,
}

pub struct TrainOutcome {
    pub model: PilotNet,
    pub curve: LossCurve,
    /// Validation MSE of the freshly initialized network.
    pub initial_val_mse: f32,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    pub train_examples: usize,
    /// Augmentations applied during validation passes; always zero.
    pub val_augmentations: usize,
    pub stopped_early: bool,
}

/// Called after every epoch with the new row and elapsed seconds.
pub type Progress<'a> = &'a mut dyn FnMut(&EpochLoss, f64);

/// Reads and crops the given store records.
pub fn load_examples(store: &SampleStore, indices: &[usize], region: &CropRegion) -> Result<Vec<Example>> {
    let mut slot = vec![usize::MAX; store.len()];
    for (k, &i) in indices.iter().enumerate() {
        if i >= store.len() {
            return Err(DatasetError::IndexOutOfRange { index: i, total: store.len() }.into());
        }
        slot[i] = k;
    }
    let mut out: Vec<Option<Example>> = vec![None; indices.len()];
    store.for_each(|i, s| {
        if slot[i] != usize::MAX {
            let image = crop_and_resize(&s.frame, region).map_err(|e| DatasetError::InvalidSample(e.to_string()))?;
            out[slot[i]] = Some(Example { image, steering: s.steering, throttle: s.throttle });
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|e| e.expect("every index visited")).collect())
}

fn pack(image: &RawFrame, dst: &mut Vec<f32>) {
    let planar = to_yuv_planar(image);
    dst.extend(planar.data.iter().map(|&v| normalize_pixel(v)));
}

struct Augmenter {
    rng: ChaCha8Rng,
    flip_prob: f64,
    brightness_prob: f64,
    brightness_range: [f32; 2],
    applied: usize,
}

impl Augmenter {
    fn apply(&mut self, ex: &Example) -> Result<(RawFrame, f32, f32)> {
        let mut image = ex.image.clone();
        let mut steering = ex.steering;
        if self.rng.gen::<f64>() < self.flip_prob {
            image = flip_frame(&image);
            steering = -steering;
            self.applied += 1;
        }
        if self.rng.gen::<f64>() < self.brightness_prob {
            let [lo, hi] = self.brightness_range;
            let factor = if lo < hi { self.rng.gen_range(lo..=hi) } else { lo };
            image = adjust_brightness(&image, factor)?;
            self.applied += 1;
        }
        Ok((image, steering, ex.throttle))
    }
}

fn batch_tensors(items: &[(RawFrame, f32, f32)]) -> Result<(Tensor, Tensor)> {
    let mut x = Vec::with_capacity(items.len() * 3 * MODEL_HEIGHT * MODEL_WIDTH);
    let mut y = Vec::with_capacity(items.len() * 2);
    for (img, s, t) in items {
        pack(img, &mut x);
        y.push(*s);
        y.push(*t);
    }
    let b = items.len();
    Ok((
        Tensor::new(&[b, 3, MODEL_HEIGHT, MODEL_WIDTH], x)?,
        Tensor::new(&[b, 2], y)?,
    ))
}

/// Mean squared error over both outputs without augmentation.
pub fn evaluate_mse(model: &PilotNet, examples: &[Example], batch_size: usize) -> Result<f32> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut sum = 0.0f64;
    for chunk in examples.chunks(batch_size.max(1)) {
        let items: Vec<_> = chunk.iter().map(|e| (e.image.clone(), e.steering, e.throttle)).collect();
        let (x, y) = batch_tensors(&items)?;
        let p = model.forward(&x)?;
        sum += p.data().iter().zip(y.data()).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok((sum / (examples.len() * 2) as f64) as f32)
}

/// Trains from cached examples. Balancing runs once; each epoch reshuffles
/// and augments every drawn sample.
pub fn train_examples(
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    mut progress: Option<Progress<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let started = Instant::now();
    let labels: Vec<(f32, f32)> = train.iter().map(|e| (e.steering, e.throttle)).collect();
    let mut order = balance_indices(&labels, &cfg.balance, cfg.seed);
    if order.is_empty() {
        return Err(TrainError::EmptySplit("balanced training"));
    }

    let mut model = PilotNet::build(PilotNetConfig::default(), cfg.seed)?;
    let mut adam = AdamState::for_params(cfg.adam, model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5u64.rotate_right(4));
    let mut aug = Augmenter {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xa5a5)),
        flip_prob: cfg.flip_prob,
        brightness_prob: cfg.brightness_prob,
        brightness_range: cfg.brightness_range,
        applied: 0,
    };

    let initial_val_mse = evaluate_mse(&model, val, cfg.batch_size)?;
    let mut curve = LossCurve::default();
    let mut best = (f32::INFINITY, 0usize, model.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut val_augmentations = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0f64;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items = chunk.iter().map(|&i| aug.apply(&train[i])).collect::<Result<Vec<_>>>()?;
            let (x, y) = batch_tensors(&items)?;
            let (pred, trace) = model.forward_train(&x)?;
            let loss = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            sum += loss as f64 * chunk.len() as f64;
            let upstream = mse_loss_backward(&pred, &y)?;
            let grads = model.backward(&trace, &upstream, false)?;
            let mut params = model.params_mut();
            for (p, g) in params.iter_mut().zip(grads.params) {
                p.set_grad(g.into_data())?;
            }
            adam_step(&mut params, &mut adam).map_err(|e| match e {
                TensorError::NonFiniteGradient { .. } => TrainError::NonFiniteLoss { epoch, batch: bi },
                other => other.into(),
            })?;
        }
        let before = aug.applied;
        let val_mse = evaluate_mse(&model, val, cfg.batch_size)?;
        val_augmentations += aug.applied - before;
        let row = EpochLoss {
            epoch,
            train_mse: (sum / order.len() as f64) as f32,
            val_mse,
        };
        curve.epochs.push(row);
        if let Some(p) = progress.as_mut() {
            p(&row, started.elapsed().as_secs_f64());
        }
        if val_mse < best.0 {
            best = (val_mse, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let mut best_model = best.2;
    for p in best_model.params_mut() {
        p.clear_grad();
    }
    Ok(TrainOutcome {
        model: best_model,
        initial_val_mse,
        best_epoch: best.1,
        epochs_run: curve.len(),
        curve,
        optimizer_steps: adam.t,
        train_examples: order.len(),
        val_augmentations,
        stopped_early,
    })
}

/// Loads the split from `store`, then trains.
pub fn train(
    store: &SampleStore,
    split: &Split,
    cfg: &TrainConfig,
    region: &CropRegion,
    progress: Option<Progress<'_>>,
) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train = load_examples(store, &split.train, region)?;
    let val = load_examples(store, &split.val, region)?;
    train_examples(&train, &val, cfg, progress)
}

/// Writes `epoch,train_mse,val_mse` rows under a header.
pub fn emit_loss_curve(curve: &LossCurve, path: impl AsRef<Path>) -> Result<()> {
    if curve.is_empty() {
        return Err(TrainError::InvalidConfig("loss curve is empty".into()));
    }
    let path = path.as_ref();
    std::fs::write(path, format_loss_curve(curve)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn format_loss_curve(curve: &LossCurve) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in &curve.epochs {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.val_mse);
    }
    out
}

pub fn parse_loss_curve(text: &str) -> Option<LossCurve> {
    let mut lines = text.lines();
    if lines.next()? != "epoch,train_mse,val_mse" {
        return None;
    }
    let epochs = lines
        .map(|l| {
            let mut f = l.split(',');
            let e = EpochLoss {
                epoch: f.next()?.parse().ok()?,
                train_mse: f.next()?.parse().ok()?,
                val_mse: f.next()?.parse().ok()?,
            };
            f.next().is_none().then_some(e)
        })
        .collect::<Option<Vec<_>>>()?;
    Some(LossCurve { epochs })
}

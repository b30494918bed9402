//! A tiny deterministic reference network and its gradient-descent trainer.
//!
//! The network is the smallest shape that exercises per-frame encoding,
//! temporal pooling, and a "final hidden" feature layer:
//!
//! ```text
//! frame (F) -> tanh affine (h) -> tanh affine (h) -> mean pool over 16 frames
//!           -> tanh affine (d, the feature x) -> linear classifier (7 logits)
//! ```
//!
//! Training is plain mini-batch gradient descent with a seeded shuffle per
//! epoch and the 10x learning-rate decay rule: when the best epoch loss has
//! not improved by `min_improvement` for `patience_epochs` consecutive
//! epochs, the rate is divided by 10. A `(dataset, TrainConfig)` pair fully
//! determines the trajectory, bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{EmotionCategory, CATEGORY_COUNT};
use crate::data::{ClipSequence, TARGET_FRAMES};
use crate::error::{Error, Result};
use crate::losses::{
    center_loss, joint_loss, softmax_xent, ClassCenters, FeatureBatch, LossTraceRow,
};
use crate::rng::substream;
use crate::validation;

/// Learning-rate decay is always a division by this factor.
pub const LR_DECAY_FACTOR: f64 = 10.0;

/// Update rate of the center-loss class centers.
pub const CENTER_UPDATE_RATE: f64 = 0.5;

/// Which objective the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    Softmax,
    SoftmaxEcstfl,
    SoftmaxCenter,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Softmax => "softmax",
            LossMode::SoftmaxEcstfl => "softmax+ecstfl",
            LossMode::SoftmaxCenter => "softmax+center",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LossMode::Softmax),
            "softmax+ecstfl" => Ok(LossMode::SoftmaxEcstfl),
            "softmax+center" => Ok(LossMode::SoftmaxCenter),
            other => Err(validation!(
                "unknown loss mode {other:?}; expected softmax, softmax+ecstfl, or softmax+center"
            )),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture dimensions, recorded in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub frame_hidden: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, frame_hidden: usize, feature_dim: usize) -> Result<Self> {
        if input_dim == 0 || frame_hidden == 0 || feature_dim == 0 {
            return Err(validation!("model dimensions must be positive"));
        }
        Ok(Self {
            input_dim,
            frame_hidden,
            feature_dim,
            n_classes: CATEGORY_COUNT,
        })
    }
}

/// All network parameters. Layer matrices are `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub shape: ModelShape,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub w4: Array2<f64>,
    pub b4: Array1<f64>,
}

impl EncoderParams {
    /// Seeded uniform initialization in `[-a, a]` with `a = 1/sqrt(fan_in)`.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Self {
        let mut layer = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a));
            let b = Array1::from_shape_fn(rows, |_| rng.random_range(-a..a));
            (w, b)
        };
        let (w1, b1) = layer(shape.frame_hidden, shape.input_dim);
        let (w2, b2) = layer(shape.frame_hidden, shape.frame_hidden);
        let (w3, b3) = layer(shape.feature_dim, shape.frame_hidden);
        let (w4, b4) = layer(shape.n_classes, shape.feature_dim);
        Self {
            shape,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
        }
    }

    fn forward_frames(&self, frames: &Array2<f64>) -> ForwardCache {
        // Rows are frames; affine layers act as X * W^T + b. The feature
        // layer is linear: a bounded feature space would fight the
        // inter-class expansion pressure of the EC-STFL term.
        let z1 = (frames.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        let z2 = (z1.dot(&self.w2.t()) + &self.b2).mapv(f64::tanh);
        let pooled = z2.mean_axis(Axis(0)).expect("clip has frames");
        let feature = self.w3.dot(&pooled) + &self.b3;
        let logits = self.w4.dot(&feature) + &self.b4;
        ForwardCache {
            z1,
            z2,
            pooled,
            feature,
            logits,
        }
    }
}

struct ForwardCache {
    z1: Array2<f64>,
    z2: Array2<f64>,
    pooled: Array1<f64>,
    feature: Array1<f64>,
    logits: Array1<f64>,
}

/// Run one aligned clip through the network.
///
/// Returns the hidden feature (input to the classifier) and the class
/// logits. The clip must already be aligned to 16 frames.
pub fn forward(params: &EncoderParams, clip: &ClipSequence) -> Result<(Array1<f64>, Array1<f64>)> {
    validate_clip(params, clip)?;
    let cache = params.forward_frames(&clip.frames);
    Ok((cache.feature, cache.logits))
}

fn validate_clip(params: &EncoderParams, clip: &ClipSequence) -> Result<()> {
    if clip.len() != TARGET_FRAMES {
        return Err(validation!(
            "clip {:?} has {} frames, expected {TARGET_FRAMES}; align it with \
             data::interpolate_to_length first",
            clip.clip_id,
            clip.len()
        ));
    }
    if clip.feature_dim() != params.shape.input_dim {
        return Err(validation!(
            "clip {:?} has feature dim {}, model expects {}",
            clip.clip_id,
            clip.feature_dim(),
            params.shape.input_dim
        ));
    }
    Ok(())
}

/// Forward a set of clips; returns stacked features (n x d) and logits (n x 7).
pub fn batch_forward(
    params: &EncoderParams,
    clips: &[&ClipSequence],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = clips.len();
    let mut features = Array2::zeros((n, params.shape.feature_dim));
    let mut logits = Array2::zeros((n, params.shape.n_classes));
    for (i, clip) in clips.iter().enumerate() {
        validate_clip(params, clip)?;
        let cache = params.forward_frames(&clip.frames);
        features.row_mut(i).assign(&cache.feature);
        logits.row_mut(i).assign(&cache.logits);
    }
    Ok((features, logits))
}

/// Predicted category per clip: argmax of the logits, first index on ties.
pub fn predict(params: &EncoderParams, clips: &[&ClipSequence]) -> Result<Vec<EmotionCategory>> {
    let (_, logits) = batch_forward(params, clips)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (slot, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = slot;
                }
            }
            EmotionCategory::ALL[best]
        })
        .collect())
}

/// Everything that determines a training run besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patience_epochs: usize,
    pub min_improvement: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub center_coef: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub frame_hidden: usize,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            patience_epochs: 3,
            min_improvement: 1e-4,
            batch_size: 24,
            lambda: 10.0,
            center_coef: 1e-4,
            epochs: 30,
            seed: 0,
            loss_mode: LossMode::SoftmaxEcstfl,
            frame_hidden: 32,
            feature_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(validation!("learning_rate must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(validation!("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(validation!("epochs must be positive"));
        }
        if self.patience_epochs == 0 {
            return Err(validation!("patience_epochs must be positive"));
        }
        if self.lambda < 0.0 || self.center_coef < 0.0 || self.min_improvement < 0.0 {
            return Err(validation!(
                "lambda, center_coef, and min_improvement must be non-negative"
            ));
        }
        if self.frame_hidden == 0 || self.feature_dim == 0 {
            return Err(validation!("model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_softmax: f64,
    /// Mean auxiliary loss: EC-STFL or center loss depending on the mode.
    pub loss_aux: f64,
    pub loss_total: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<LossTraceRow>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|record| record.loss_total)
    }
}

/// Write the per-epoch history as `epoch,lr,L_s,L_ecstfl,L_total,skipped_batches`.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "lr", "L_s", "L_ecstfl", "L_total", "skipped_batches"])?;
    for record in &history.epochs {
        writer.write_record([
            record.epoch.to_string(),
            record.lr.to_string(),
            record.loss_softmax.to_string(),
            record.loss_aux.to_string(),
            record.loss_total.to_string(),
            record.skipped_batches.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

struct ParamGrads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array2<f64>,
    b3: Array1<f64>,
    w4: Array2<f64>,
    b4: Array1<f64>,
}

impl ParamGrads {
    fn zeros(shape: &ModelShape) -> Self {
        Self {
            w1: Array2::zeros((shape.frame_hidden, shape.input_dim)),
            b1: Array1::zeros(shape.frame_hidden),
            w2: Array2::zeros((shape.frame_hidden, shape.frame_hidden)),
            b2: Array1::zeros(shape.frame_hidden),
            w3: Array2::zeros((shape.feature_dim, shape.frame_hidden)),
            b3: Array1::zeros(shape.feature_dim),
            w4: Array2::zeros((shape.n_classes, shape.feature_dim)),
            b4: Array1::zeros(shape.n_classes),
        }
    }
}

struct BatchLoss {
    softmax: f64,
    aux: f64,
    total: f64,
    skipped: bool,
}

fn params_finite(params: &EncoderParams) -> bool {
    params
        .w1
        .iter()
        .chain(params.w2.iter())
        .chain(params.w3.iter())
        .chain(params.w4.iter())
        .chain(params.b1.iter())
        .chain(params.b2.iter())
        .chain(params.b3.iter())
        .chain(params.b4.iter())
        .all(|v| v.is_finite())
}

/// Forward + loss + full backward over one mini-batch.
fn batch_gradients(
    params: &EncoderParams,
    clips: &[&ClipSequence],
    labels: &[EmotionCategory],
    config: &TrainConfig,
    centers: &mut Option<ClassCenters>,
) -> Result<(BatchLoss, ParamGrads)> {
    let n = clips.len();
    let caches: Vec<ForwardCache> = clips
        .iter()
        .map(|clip| {
            validate_clip(params, clip)?;
            Ok(params.forward_frames(&clip.frames))
        })
        .collect::<Result<_>>()?;

    let mut features = Array2::zeros((n, params.shape.feature_dim));
    let mut logits = Array2::zeros((n, params.shape.n_classes));
    for (i, cache) in caches.iter().enumerate() {
        features.row_mut(i).assign(&cache.feature);
        logits.row_mut(i).assign(&cache.logits);
    }
    if features.iter().chain(logits.iter()).any(|v| !v.is_finite()) {
        // The caller rewrites the location.
        return Err(Error::Divergence {
            epoch: 0,
            batch: 0,
            detail: "non-finite network outputs in the forward pass".to_string(),
        });
    }
    let batch = FeatureBatch::new(features, labels.to_vec())?;

    // Gradients at the two loss surfaces: logits and features.
    let (loss, grad_logits, grad_features) = match config.loss_mode {
        LossMode::Softmax => {
            let softmax = softmax_xent(&logits, labels)?;
            let zero = Array2::zeros((n, params.shape.feature_dim));
            (
                BatchLoss {
                    softmax: softmax.value,
                    aux: 0.0,
                    total: softmax.value,
                    skipped: false,
                },
                softmax.grad,
                zero,
            )
        }
        LossMode::SoftmaxEcstfl => {
            let joint = joint_loss(&batch, &logits, config.lambda)?;
            (
                BatchLoss {
                    softmax: joint.softmax,
                    aux: joint.ecstfl,
                    total: joint.value,
                    skipped: joint.skipped,
                },
                joint.grad_logits,
                joint.grad_features,
            )
        }
        LossMode::SoftmaxCenter => {
            let softmax = softmax_xent(&logits, labels)?;
            let centers = centers.as_mut().expect("centers exist in center mode");
            let center = center_loss(&batch, centers)?;
            (
                BatchLoss {
                    softmax: softmax.value,
                    aux: center.value,
                    total: softmax.value + config.center_coef * center.value,
                    skipped: false,
                },
                softmax.grad,
                center.grad * config.center_coef,
            )
        }
    };

    // Backward through the classifier and encoder.
    let mut grads = ParamGrads::zeros(&params.shape);
    for (i, cache) in caches.iter().enumerate() {
        let dlogits = grad_logits.row(i);
        for (out, &g) in dlogits.iter().enumerate() {
            grads.b4[out] += g;
            for (input, &x) in cache.feature.iter().enumerate() {
                grads.w4[(out, input)] += g * x;
            }
        }
        let mut dfeature = params.w4.t().dot(&dlogits);
        dfeature += &grad_features.row(i);

        let da3 = dfeature;
        grads.b3 += &da3;
        for (out, &g) in da3.iter().enumerate() {
            for (input, &p) in cache.pooled.iter().enumerate() {
                grads.w3[(out, input)] += g * p;
            }
        }
        let dpooled = params.w3.t().dot(&da3);

        // Mean pooling spreads the gradient evenly over the frames.
        let frames = clips[i].len() as f64;
        let dz2_row = &dpooled / frames;
        let dz2 = Array2::from_shape_fn(cache.z2.dim(), |(_, c)| dz2_row[c]);
        let da2 = &dz2 * &cache.z2.mapv(|z| 1.0 - z * z);
        grads.w2 += &da2.t().dot(&cache.z1);
        grads.b2 += &da2.sum_axis(Axis(0));

        let dz1 = da2.dot(&params.w2);
        let da1 = &dz1 * &cache.z1.mapv(|z| 1.0 - z * z);
        grads.w1 += &da1.t().dot(&clips[i].frames);
        grads.b1 += &da1.sum_axis(Axis(0));
    }

    Ok((loss, grads))
}

/// Train on labeled, 16-frame-aligned clips.
pub fn train(clips: &[ClipSequence], config: &TrainConfig) -> Result<(EncoderParams, TrainHistory)> {
    config.validate()?;
    if clips.is_empty() {
        return Err(validation!("training set is empty"));
    }
    let labels: Vec<EmotionCategory> = clips
        .iter()
        .map(|clip| {
            clip.label
                .ok_or_else(|| validation!("clip {:?} has no label", clip.clip_id))
        })
        .collect::<Result<_>>()?;

    let shape = ModelShape::new(clips[0].feature_dim(), config.frame_hidden, config.feature_dim)?;
    let mut params = EncoderParams::init(shape, &mut substream(config.seed, "init"));
    let mut centers = match config.loss_mode {
        LossMode::SoftmaxCenter => Some(ClassCenters::zeros(shape.feature_dim, CENTER_UPDATE_RATE)?),
        _ => None,
    };

    let mut shuffle_rng = substream(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut history = TrainHistory::default();
    let mut lr = config.learning_rate;
    let mut best_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut skipped_batches = 0usize;
        let mut batches = 0usize;

        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch_clips: Vec<&ClipSequence> = chunk.iter().map(|&i| &clips[i]).collect();
            let batch_labels: Vec<EmotionCategory> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) =
                match batch_gradients(&params, &batch_clips, &batch_labels, config, &mut centers) {
                    Ok(result) => result,
                    Err(Error::Divergence { detail, .. }) => {
                        return Err(Error::Divergence {
                            epoch,
                            batch: batch_index,
                            detail,
                        })
                    }
                    Err(other) => return Err(other),
                };
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index,
                    detail: format!(
                        "non-finite loss (L_s={}, aux={}) at lr={lr}",
                        loss.softmax, loss.aux
                    ),
                });
            }

            params.w1 -= &(&grads.w1 * lr);
            params.b1 -= &(&grads.b1 * lr);
            params.w2 -= &(&grads.w2 * lr);
            params.b2 -= &(&grads.b2 * lr);
            params.w3 -= &(&grads.w3 * lr);
            params.b3 -= &(&grads.b3 * lr);
            params.w4 -= &(&grads.w4 * lr);
            params.b4 -= &(&grads.b4 * lr);
            if !params_finite(&params) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index,
                    detail: format!("parameters overflowed after the update at lr={lr}"),
                });
            }

            history.steps.push(LossTraceRow {
                step,
                loss_softmax: loss.softmax,
                loss_ecstfl: loss.aux,
                loss_total: loss.total,
                skipped: loss.skipped,
            });
            step += 1;
            sums.0 += loss.softmax;
            sums.1 += loss.aux;
            sums.2 += loss.total;
            skipped_batches += usize::from(loss.skipped);
            batches += 1;
        }

        let denom = batches as f64;
        let epoch_total = sums.2 / denom;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            loss_softmax: sums.0 / denom,
            loss_aux: sums.1 / denom,
            loss_total: epoch_total,
            skipped_batches,
        });

        // Saturation rule: divide the rate by 10 after `patience_epochs`
        // consecutive epochs without a `min_improvement` gain on the best.
        if best_loss - epoch_total >= config.min_improvement {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience_epochs {
                lr /= LR_DECAY_FACTOR;
                stale_epochs = 0;
            }
        }
        best_loss = best_loss.min(epoch_total);
    }

    Ok((params, history))
}

/// Pick the grid rate whose short run reaches the lowest validation loss.
///
/// The dataset is split 80/20 by a seeded shuffle; each candidate trains
/// with `config.epochs` as its short budget. Diverging rates are excluded;
/// exact ties go to the smaller rate.
pub fn lr_grid_search(clips: &[ClipSequence], grid: &[f64], config: &TrainConfig) -> Result<f64> {
    if grid.is_empty() {
        return Err(validation!("learning-rate grid is empty"));
    }
    if clips.len() < 2 {
        return Err(validation!("grid search needs at least 2 clips"));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut substream(config.seed, "grid"));
    let val_size = (clips.len() / 5).max(1);
    let (val_idx, train_idx) = order.split_at(val_size);
    let train_clips: Vec<ClipSequence> = train_idx.iter().map(|&i| clips[i].clone()).collect();
    let val_clips: Vec<&ClipSequence> = val_idx.iter().map(|&i| &clips[i]).collect();
    let val_labels: Vec<EmotionCategory> = val_clips
        .iter()
        .map(|clip| {
            clip.label
                .ok_or_else(|| validation!("clip {:?} has no label", clip.clip_id))
        })
        .collect::<Result<_>>()?;

    let mut outcomes: Vec<(f64, Option<f64>)> = Vec::with_capacity(grid.len());
    for &rate in grid {
        let candidate = TrainConfig {
            learning_rate: rate,
            ..config.clone()
        };
        let outcome = match train(&train_clips, &candidate) {
            Ok((params, _)) => validation_loss(&params, &val_clips, &val_labels, &candidate)
                .ok()
                .filter(|loss| loss.is_finite()),
            // Any numerical failure excludes the rate.
            Err(e) if e.exit_code() == 2 => None,
            Err(e) => return Err(e),
        };
        outcomes.push((rate, outcome));
    }

    let best = outcomes
        .iter()
        .filter_map(|&(rate, loss)| loss.map(|l| (rate, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    match best {
        Some((rate, _)) => Ok(rate),
        None => Err(validation!(
            "every grid rate diverged: {:?}",
            outcomes
                .iter()
                .map(|(rate, _)| format!("{rate}: diverged"))
                .collect::<Vec<_>>()
        )),
    }
}

/// Configured objective evaluated on held-out clips as a single batch.
fn validation_loss(
    params: &EncoderParams,
    clips: &[&ClipSequence],
    labels: &[EmotionCategory],
    config: &TrainConfig,
) -> Result<f64> {
    let (features, logits) = batch_forward(params, clips)?;
    match config.loss_mode {
        LossMode::Softmax => Ok(softmax_xent(&logits, labels)?.value),
        LossMode::SoftmaxEcstfl => {
            let batch = FeatureBatch::new(features, labels.to_vec())?;
            Ok(joint_loss(&batch, &logits, config.lambda)?.value)
        }
        LossMode::SoftmaxCenter => {
            let batch = FeatureBatch::new(features, labels.to_vec())?;
            let mut centers = ClassCenters::zeros(params.shape.feature_dim, CENTER_UPDATE_RATE)?;
            let center = center_loss(&batch, &mut centers)?;
            Ok(softmax_xent(&logits, labels)?.value + config.center_coef * center.value)
        }
    }
}

/// Versioned checkpoint container; round-trips bit-exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: EncoderParams,
    pub config: TrainConfig,
    /// 1-based test fold this model was trained against, when applicable.
    pub fold: Option<usize>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(params: EncoderParams, config: TrainConfig, fold: Option<usize>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            params,
            config,
            fold,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let checkpoint: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(validation!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            ));
        }
        Ok(checkpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, synth_generate, DatasetSpec};

    fn tiny_config(mode: LossMode) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            frame_hidden: 8,
            feature_dim: 8,
            loss_mode: mode,
            ..TrainConfig::default()
        }
    }

    fn aligned_clips(spec: &DatasetSpec) -> Vec<ClipSequence> {
        let raw = synth_generate(spec).unwrap();
        preprocess(raw, 0.5).unwrap().0
    }

    fn separable_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            class_proportions: [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            n_clips: 60,
            feature_dim: 4,
            cluster_separation: 8.0,
            noise_scale: 0.3,
            seed,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn forward_zero_clip_zero_classifier_gives_equal_logits() {
        let shape = ModelShape::new(4, 8, 8).unwrap();
        let mut params = EncoderParams::init(shape, &mut substream(0, "init"));
        params.w4.fill(0.0);
        params.b4.fill(0.0);
        let clip = ClipSequence::new(
            "zero".into(),
            Array2::zeros((TARGET_FRAMES, 4)),
            vec![true; TARGET_FRAMES],
            Some(EmotionCategory::Happy),
        )
        .unwrap();
        let (_, logits) = forward(&params, &clip).unwrap();
        for &v in logits.iter() {
            assert_eq!(v, logits[0]);
        }
    }

    #[test]
    fn forward_is_frame_order_invariant() {
        let shape = ModelShape::new(3, 8, 8).unwrap();
        let params = EncoderParams::init(shape, &mut substream(1, "init"));
        let mut rng = substream(2, "model/test");
        let frames = Array2::from_shape_fn((TARGET_FRAMES, 3), |_| {
            rng.random_range(-1.0..1.0)
        });
        let clip = ClipSequence::new(
            "a".into(),
            frames.clone(),
            vec![true; TARGET_FRAMES],
            None,
        )
        .unwrap();
        let reversed = Array2::from_shape_fn((TARGET_FRAMES, 3), |(t, c)| {
            frames[(TARGET_FRAMES - 1 - t, c)]
        });
        let permuted =
            ClipSequence::new("b".into(), reversed, vec![true; TARGET_FRAMES], None).unwrap();
        let (fa, la) = forward(&params, &clip).unwrap();
        let (fb, lb) = forward(&params, &permuted).unwrap();
        let close = |x: &Array1<f64>, y: &Array1<f64>| {
            x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-12)
        };
        assert!(close(&fa, &fb));
        assert!(close(&la, &lb));
    }

    #[test]
    fn forward_rejects_unaligned_clips() {
        let shape = ModelShape::new(3, 8, 8).unwrap();
        let params = EncoderParams::init(shape, &mut substream(1, "init"));
        let clip =
            ClipSequence::new("short".into(), Array2::zeros((5, 3)), vec![true; 5], None).unwrap();
        let err = forward(&params, &clip).unwrap_err();
        assert!(err.to_string().contains("interpolate_to_length"), "{err}");
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let shape = ModelShape::new(4, 8, 8).unwrap();
        let run = || {
            let params = EncoderParams::init(shape, &mut substream(9, "init"));
            let mut rng = substream(9, "clip");
            let frames = Array2::from_shape_fn((TARGET_FRAMES, 4), |_| {
                rng.random_range(-1.0..1.0)
            });
            let clip =
                ClipSequence::new("c".into(), frames, vec![true; TARGET_FRAMES], None).unwrap();
            forward(&params, &clip).unwrap()
        };
        let (f1, l1) = run();
        let (f2, l2) = run();
        assert!(f1.iter().zip(f2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(l1.iter().zip(l2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // Whole-model gradient of each loss mode against central differences
        // on a handful of parameters from every layer.
        let spec = DatasetSpec {
            n_clips: 8,
            feature_dim: 3,
            class_proportions: [0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0],
            ..DatasetSpec::default()
        };
        let clips = aligned_clips(&spec);
        let refs: Vec<&ClipSequence> = clips.iter().collect();
        let labels: Vec<EmotionCategory> = clips.iter().map(|c| c.label.unwrap()).collect();

        for mode in [LossMode::Softmax, LossMode::SoftmaxEcstfl, LossMode::SoftmaxCenter] {
            let config = TrainConfig {
                frame_hidden: 5,
                feature_dim: 4,
                lambda: 2.0,
                center_coef: 0.1,
                loss_mode: mode,
                ..TrainConfig::default()
            };
            let shape = ModelShape::new(3, 5, 4).unwrap();
            let params = EncoderParams::init(shape, &mut substream(33, "init"));
            let mut centers = match mode {
                LossMode::SoftmaxCenter => {
                    Some(ClassCenters::zeros(4, CENTER_UPDATE_RATE).unwrap())
                }
                _ => None,
            };
            let (_, grads) =
                batch_gradients(&params, &refs, &labels, &config, &mut centers.clone()).unwrap();

            let loss_at = |params: &EncoderParams| {
                batch_gradients(params, &refs, &labels, &config, &mut centers.clone())
                    .unwrap()
                    .0
                    .total
            };
            let eps = 1e-6;
            let spots = [(0usize, 0usize), (2, 1), (4, 2)];
            for &(r, c) in &spots {
                let mut plus = params.clone();
                plus.w1[(r, c)] += eps;
                let mut minus = params.clone();
                minus.w1[(r, c)] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                assert!(
                    (numeric - grads.w1[(r, c)]).abs() < 1e-6,
                    "{mode:?} w1[{r},{c}]: {numeric} vs {}",
                    grads.w1[(r, c)]
                );
            }
            for &(r, c) in &[(0usize, 0usize), (3, 2)] {
                let mut plus = params.clone();
                plus.w3[(r, c)] += eps;
                let mut minus = params.clone();
                minus.w3[(r, c)] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                assert!(
                    (numeric - grads.w3[(r, c)]).abs() < 1e-6,
                    "{mode:?} w3[{r},{c}]"
                );
            }
            for &(r, c) in &[(0usize, 0usize), (6, 3)] {
                let mut plus = params.clone();
                plus.w4[(r, c)] += eps;
                let mut minus = params.clone();
                minus.w4[(r, c)] -= eps;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                assert!(
                    (numeric - grads.w4[(r, c)]).abs() < 1e-6,
                    "{mode:?} w4[{r},{c}]"
                );
            }
        }
    }

    #[test]
    fn training_fits_separable_data() {
        let clips = aligned_clips(&separable_spec(3));
        let config = TrainConfig {
            loss_mode: LossMode::Softmax,
            epochs: 40,
            learning_rate: 0.1,
            frame_hidden: 8,
            feature_dim: 8,
            ..TrainConfig::default()
        };
        let (_, history) = train(&clips, &config).unwrap();
        let final_loss = history.final_loss().unwrap();
        assert!(final_loss < 0.1, "final loss {final_loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let clips = aligned_clips(&separable_spec(4));
        let config = tiny_config(LossMode::SoftmaxEcstfl);
        let (p1, h1) = train(&clips, &config).unwrap();
        let (p2, h2) = train(&clips, &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn lr_schedule_only_divides_by_ten() {
        let clips = aligned_clips(&separable_spec(5));
        let config = TrainConfig {
            epochs: 25,
            // A harsh improvement bar forces decays.
            min_improvement: 10.0,
            patience_epochs: 2,
            ..tiny_config(LossMode::Softmax)
        };
        let (_, history) = train(&clips, &config).unwrap();
        let mut decays = 0;
        for window in history.epochs.windows(2) {
            let (prev, next) = (window[0].lr, window[1].lr);
            assert!(next <= prev);
            if next < prev {
                assert!((prev / next - LR_DECAY_FACTOR).abs() < 1e-9);
                decays += 1;
            }
        }
        assert!(decays >= 2, "expected repeated decay, got {decays}");
    }

    #[test]
    fn skip_accounting_counts_single_label_batches() {
        // Two classes, batch size large enough that per-epoch batches often
        // hold one class only when data is tiny and sorted by the shuffle.
        let spec = DatasetSpec {
            class_proportions: [0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
            n_clips: 20,
            feature_dim: 3,
            ..DatasetSpec::default()
        };
        let clips = aligned_clips(&spec);
        let config = TrainConfig {
            batch_size: 4,
            epochs: 3,
            ..tiny_config(LossMode::SoftmaxEcstfl)
        };
        let (_, history) = train(&clips, &config).unwrap();
        let from_steps: Vec<usize> = {
            let per_epoch = history.steps.len() / history.epochs.len();
            history
                .steps
                .chunks(per_epoch)
                .map(|chunk| chunk.iter().filter(|s| s.skipped).count())
                .collect()
        };
        let recorded: Vec<usize> = history
            .epochs
            .iter()
            .map(|e| e.skipped_batches)
            .collect();
        assert_eq!(from_steps, recorded);
        assert!(recorded.iter().sum::<usize>() > 0, "expected some skips");
    }

    #[test]
    fn divergence_is_reported_with_location() {
        // At this rate the first updates overflow the classifier weights,
        // so either the loss or the parameters go non-finite.
        let clips = aligned_clips(&separable_spec(6));
        let config = TrainConfig {
            learning_rate: 1e308,
            ..tiny_config(LossMode::Softmax)
        };
        match train(&clips, &config) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn feature_collapse_is_a_numerical_error() {
        // A large step saturates every tanh feature onto the same vertex;
        // all cross-class distances vanish and EC-STFL is undefined.
        let clips = aligned_clips(&separable_spec(6));
        let config = TrainConfig {
            learning_rate: 1e8,
            ..tiny_config(LossMode::SoftmaxEcstfl)
        };
        match train(&clips, &config) {
            Err(e @ Error::CollapsedFeatures) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected collapsed features, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_prefers_oracle_best_rate() {
        let clips = aligned_clips(&separable_spec(7));
        let config = TrainConfig {
            epochs: 6,
            ..tiny_config(LossMode::Softmax)
        };
        let grid = [0.1, 0.01, 0.001];
        let chosen = lr_grid_search(&clips, &grid, &config).unwrap();

        // Exhaustive short-run oracle over the same split.
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut substream(config.seed, "grid"));
        let val_size = (clips.len() / 5).max(1);
        let (val_idx, train_idx) = order.split_at(val_size);
        let train_clips: Vec<ClipSequence> =
            train_idx.iter().map(|&i| clips[i].clone()).collect();
        let val_clips: Vec<&ClipSequence> = val_idx.iter().map(|&i| &clips[i]).collect();
        let val_labels: Vec<EmotionCategory> =
            val_clips.iter().map(|c| c.label.unwrap()).collect();
        let mut best = (f64::INFINITY, f64::INFINITY);
        for &rate in &grid {
            let candidate = TrainConfig {
                learning_rate: rate,
                ..config.clone()
            };
            if let Ok((params, _)) = train(&train_clips, &candidate) {
                let loss =
                    validation_loss(&params, &val_clips, &val_labels, &candidate).unwrap();
                if loss < best.0 || (loss == best.0 && rate < best.1) {
                    best = (loss, rate);
                }
            }
        }
        assert_eq!(chosen, best.1);
    }

    #[test]
    fn grid_search_singleton_and_divergent_rates() {
        let clips = aligned_clips(&separable_spec(8));
        let config = TrainConfig {
            epochs: 3,
            ..tiny_config(LossMode::Softmax)
        };
        assert_eq!(lr_grid_search(&clips, &[0.1], &config).unwrap(), 0.1);

        // A diverging rate is excluded, the finite one wins.
        let chosen = lr_grid_search(&clips, &[1e308, 0.05], &config).unwrap();
        assert_eq!(chosen, 0.05);

        match lr_grid_search(&clips, &[1e308], &config) {
            Err(Error::Validation(msg)) => assert!(msg.contains("diverged"), "{msg}"),
            other => panic!("expected all-diverged error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let clips = aligned_clips(&separable_spec(9));
        let config = tiny_config(LossMode::SoftmaxEcstfl);
        let (params, _) = train(&clips, &config).unwrap();
        let checkpoint = Checkpoint::new(params, config, Some(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(checkpoint, loaded);
        let bits = |p: &EncoderParams| {
            p.w1.iter()
                .chain(p.w2.iter())
                .chain(p.w3.iter())
                .chain(p.w4.iter())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&checkpoint.params), bits(&loaded.params));
    }

    #[test]
    fn ecstfl_training_tightens_feature_ratio_on_holdout() {
        // Same overlapping imbalanced data, lambda 10 vs lambda 0: the
        // EC-STFL model must reach a strictly lower intra/inter distance
        // ratio on held-out clips.
        let spec = DatasetSpec {
            n_clips: 150,
            seed: 10,
            ..DatasetSpec::default()
        };
        let clips = aligned_clips(&spec);
        // Clips come out grouped by class; interleave the holdout so it
        // contains every class.
        let holdout: Vec<ClipSequence> = clips.iter().step_by(5).cloned().collect();
        let training: Vec<ClipSequence> = clips
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 5 != 0)
            .map(|(_, c)| c.clone())
            .collect();

        let mut ratios = Vec::new();
        for lambda in [10.0, 0.0] {
            let config = TrainConfig {
                lambda,
                epochs: 12,
                frame_hidden: 12,
                feature_dim: 12,
                ..TrainConfig::default()
            };
            let (params, _) = train(&training, &config).unwrap();
            let refs: Vec<&ClipSequence> = holdout.iter().collect();
            let (features, _) = batch_forward(&params, &refs).unwrap();
            let labels: Vec<EmotionCategory> =
                holdout.iter().map(|c| c.label.unwrap()).collect();
            let batch = FeatureBatch::new(features, labels).unwrap();
            ratios.push(crate::losses::ec_stfl_loss(&batch).unwrap().value);
        }
        assert!(
            ratios[0] < ratios[1],
            "ec-stfl ratio {} !< softmax ratio {}",
            ratios[0],
            ratios[1]
        );
    }
}

//! PointNet-style regression of Manning's n from a variable-length cloud.
//!
//! The network is a shared per-point encoder (affine map, batch
//! normalization, ReLU per layer), a coordinate-wise max-pool over points,
//! and a feed-forward head ending in a single scalar. There are no input or
//! feature transformation sub-networks; clouds are zero-origin normalized
//! instead. Targets are Manning's n multiplied by [`NetConfig::target_scale`]
//! and the training loss is L1 in those scaled units.

mod adam;
mod checkpoint;
mod net;
mod real;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{normalize_zero_origin, PointCloud};

pub use adam::adam_step;
pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use net::{BatchStats, Gradients, Layout, Mode, Network};
pub use real::Real;
pub use train::{evaluate_mae, train, write_loss_log, EpochLog, TrainReport};

/// The network used throughout the pipeline: `f32` parameters.
pub type RegressionNet = Network<f32>;

/// Architecture and output post-processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Per-point widths, starting with the 3 coordinates.
    pub encoder_widths: Vec<usize>,
    /// Head widths, starting with the pooled feature width and ending in 1.
    pub head_widths: Vec<usize>,
    pub target_scale: f64,
    /// Clamp range for predictions, in Manning's n.
    pub threshold: (f64, f64),
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![3, 64, 128, 1024],
            head_widths: vec![1024, 512, 256, 1],
            target_scale: 1e5,
            threshold: (crate::N_MIN, crate::N_MAX),
            batch_norm: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Encoder `3 → hidden… → pooled` and head `pooled → head… → 1`.
    pub fn with_widths(encoder_hidden: &[usize], pooled: usize, head_hidden: &[usize]) -> Self {
        let mut encoder_widths = vec![3];
        encoder_widths.extend_from_slice(encoder_hidden);
        encoder_widths.push(pooled);
        let mut head_widths = vec![pooled];
        head_widths.extend_from_slice(head_hidden);
        head_widths.push(1);
        Self {
            encoder_widths,
            head_widths,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder_widths;
        let head = &self.head_widths;
        if enc.len() < 2 || enc[0] != 3 {
            return Err(Error::arg(
                "encoder widths must start at 3 and have at least one layer",
            ));
        }
        if head.len() < 2 || head[head.len() - 1] != 1 {
            return Err(Error::arg(
                "head widths must end at 1 and have at least one layer",
            ));
        }
        if head[0] != enc[enc.len() - 1] {
            return Err(Error::arg(format!(
                "head input width {} does not match pooled width {}",
                head[0],
                enc[enc.len() - 1]
            )));
        }
        if enc.iter().chain(head).any(|&w| w == 0) {
            return Err(Error::arg("layer widths must be at least 1"));
        }
        let (lo, hi) = self.threshold;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::arg("threshold must satisfy lo < hi"));
        }
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return Err(Error::arg("target_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::arg("invalid batch-norm momentum or epsilon"));
        }
        Ok(())
    }

    /// True when two configs describe the same parameter layout and output
    /// semantics; the init seed is irrelevant once weights exist.
    pub fn compatible_with(&self, other: &NetConfig) -> bool {
        self.encoder_widths == other.encoder_widths
            && self.head_widths == other.head_widths
            && self.batch_norm == other.batch_norm
            && self.target_scale == other.target_scale
            && self.threshold == other.threshold
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor per epoch.
    pub decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Minimum validation-loss improvement (scaled units) that resets the
    /// patience counter.
    pub convergence_tol: f64,
    pub patience: usize,
    /// Seeds mini-batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.95,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            convergence_tol: 1e-3,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::arg("decay must lie in (0, 1]"));
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(Error::arg("Adam betas must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::arg("learning rate and epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Step size for `epoch` (0-based): `learning_rate * decay^epoch`.
pub fn lr_at(epoch: u64, tconf: &TrainConfig) -> f64 {
    tconf.learning_rate * tconf.decay.powf(epoch as f64)
}

/// `|pred - target_n * scale|`.
pub fn loss_l1(pred: f64, target_n: f64, scale: f64) -> f64 {
    (pred - target_n * scale).abs()
}

/// Mean L1 loss over a batch of `(pred, target_n)` pairs.
pub fn loss_l1_batch(pairs: &[(f64, f64)], scale: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|&(p, t)| loss_l1(p, t, scale))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Converts a raw scaled network output to a clamped Manning's n.
pub fn postprocess(raw: f64, config: &NetConfig) -> f64 {
    let (lo, hi) = config.threshold;
    let n = raw / config.target_scale;
    // NaN can only come from a diverged network; map it to the floor
    if n.is_nan() {
        lo
    } else {
        n.clamp(lo, hi)
    }
}

/// Manning's n of a cloud: normalize, evaluate, unscale, clamp.
pub fn predict_n<F: Real>(net: &Network<F>, cloud: &PointCloud) -> Result<f64> {
    let normalized = normalize_zero_origin(cloud)?;
    let raw = net.forward(&normalized, Mode::Eval)?;
    Ok(postprocess(raw.to_f64(), net.config()))
}

/// [`predict_n`] over many clouds in one batched pass.
pub fn predict_n_batch<F: Real>(net: &Network<F>, clouds: &[PointCloud]) -> Result<Vec<f64>> {
    let normalized = clouds
        .iter()
        .map(normalize_zero_origin)
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PointCloud> = normalized.iter().collect();
    Ok(net
        .forward_batch(&refs, Mode::Eval)?
        .into_iter()
        .map(|raw| postprocess(raw.to_f64(), net.config()))
        .collect())
}

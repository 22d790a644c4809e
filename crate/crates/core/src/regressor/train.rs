use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::adam_step;
use super::net::{Mode, Network};
use super::real::Real;
use super::{lr_at, postprocess, TrainConfig};
use crate::augment::LabeledSample;
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Clouds per eval-mode forward pass.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Global epoch index; continues across resumed runs.
    pub epoch: u64,
    /// Batch-size-weighted mean train-mode L1 loss, scaled units.
    pub train_loss: f64,
    /// Eval-mode L1 loss on the validation set, scaled units.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    /// True when patience ran out before `max_epochs`.
    pub converged: bool,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochLog> {
        self.history.last()
    }
}

/// Mini-batch Adam on the L1 loss.
///
/// Each epoch shuffles the training set with a generator derived from
/// `tconf.seed` and the global epoch index, so resumed runs see the same
/// batches as uninterrupted ones. Training stops after `tconf.max_epochs`
/// epochs or once the monitored loss (validation when present, else train)
/// has failed to improve by `convergence_tol` for `patience` consecutive
/// epochs.
///
/// A fresh network (no optimizer steps yet) first has its output bias set to
/// the median scaled training target.
pub fn train<F: Real>(
    net: &mut Network<F>,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    tconf: &TrainConfig,
) -> Result<TrainReport> {
    tconf.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if net.step_count == 0 {
        let mut t: Vec<f64> = train_set.iter().map(|s| s.target_n).collect();
        t.sort_by(f64::total_cmp);
        let median = t[t.len() / 2];
        let at = net.layout.output_bias();
        net.params[at] = F::from_f64(median * net.config.target_scale);
    }

    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..tconf.max_epochs {
        let epoch = net.epochs_completed;
        let lr = lr_at(epoch, tconf);
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(tconf.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for chunk in order.chunks(tconf.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads, stats) = net.loss_and_gradient(&batch)?;
            net.update_running_stats(&stats);
            adam_step(net, &grads, tconf, lr)?;
            total += loss * chunk.len() as f64;
        }
        net.epochs_completed += 1;
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(scaled_l1(net, val_set)?)
        };
        report.history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::arg(format!("loss diverged at epoch {epoch}")));
        }
        if monitored < best - tconf.convergence_tol {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(monitored);
        if stale >= tconf.patience {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

fn eval_raw<F: Real>(net: &Network<F>, samples: &[LabeledSample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let clouds: Vec<&PointCloud> = chunk.iter().map(|s| &s.cloud).collect();
        out.extend(
            net.forward_batch(&clouds, Mode::Eval)?
                .into_iter()
                .map(F::to_f64),
        );
    }
    Ok(out)
}

/// Eval-mode mean L1 loss in scaled units.
fn scaled_l1<F: Real>(net: &Network<F>, samples: &[LabeledSample]) -> Result<f64> {
    let scale = net.config.target_scale;
    let raw = eval_raw(net, samples)?;
    Ok(raw
        .iter()
        .zip(samples)
        .map(|(p, s)| (p - s.target_n * scale).abs())
        .sum::<f64>()
        / samples.len() as f64)
}

/// Mean absolute error of clamped predictions against targets, in n units.
/// Sample clouds must already be zero-origin normalized.
pub fn evaluate_mae<F: Real>(net: &Network<F>, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let raw = eval_raw(net, samples)?;
    Ok(raw
        .iter()
        .zip(samples)
        .map(|(p, s)| (postprocess(*p, &net.config) - s.target_n).abs())
        .sum::<f64>()
        / samples.len() as f64)
}

/// CSV `epoch,train_loss,val_loss,lr`; a missing validation loss is blank.
pub fn write_loss_log(history: &[EpochLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for e in history {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            e.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Forward and reverse passes of the point-cloud regressor.
//!
//! # Parameter layout
//!
//! Parameters live in one flat vector. Encoder layers come first, in order;
//! each holds its weight matrix `in × out` (row-major), then the bias
//! `out`, then, with batch normalization enabled, the scale `out` and shift
//! `out`. Head layers follow, each holding `in × out` weights then `out`
//! biases. Running normalization statistics are stored separately: for each
//! encoder layer, `out` means followed by `out` variances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::{matmul, matmul_nt, matmul_tn, Real};
use super::NetConfig;
use crate::augment::LabeledSample;
use crate::error::{Error, Result};
use crate::pointcloud::{origin_offset, PointCloud};

/// Largest per-axis minimum accepted as "zero-origin".
const ORIGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
    /// Offsets of scale and shift, when normalization is on.
    pub norm: Option<(usize, usize)>,
    /// Offset of this layer's means in the running-stat vector.
    pub stats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseSlots {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub(crate) encoder: Vec<EncoderSlots>,
    pub(crate) head: Vec<DenseSlots>,
    pub total: usize,
    pub stats_total: usize,
}

impl Layout {
    pub fn new(config: &NetConfig) -> Self {
        let mut at = 0;
        let mut stats = 0;
        let encoder = config
            .encoder_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = at;
                let bias = weight + fan_in * fan_out;
                at = bias + fan_out;
                let norm = config.batch_norm.then(|| {
                    let gamma = at;
                    at += 2 * fan_out;
                    (gamma, gamma + fan_out)
                });
                let slot = EncoderSlots {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                    norm,
                    stats,
                };
                if config.batch_norm {
                    stats += 2 * fan_out;
                }
                slot
            })
            .collect();
        let head = config
            .head_widths
            .windows(2)
            .map(|w| {
                let weight = at;
                let bias = weight + w[0] * w[1];
                at = bias + w[1];
                DenseSlots {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight,
                    bias,
                }
            })
            .collect();
        Self {
            encoder,
            head,
            total: at,
            stats_total: stats,
        }
    }

    /// Range of the final output bias.
    pub fn output_bias(&self) -> usize {
        self.head.last().map(|h| h.bias).unwrap_or(0)
    }
}

/// Gradient vector in parameter layout.
pub type Gradients<F> = Vec<F>;

/// Per-channel batch statistics from a training forward pass, used to update
/// the running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// `(means, biased variances, rows)` per encoder layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

/// Network parameters, normalization statistics and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F: Real> {
    pub(crate) config: NetConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<F>,
    pub(crate) running: Vec<F>,
    pub(crate) adam_m: Vec<F>,
    pub(crate) adam_v: Vec<F>,
    pub(crate) step_count: u64,
    pub(crate) epochs_completed: u64,
}

struct EncoderCache<F> {
    /// Post-activation output, `rows × fan_out`.
    out: Vec<F>,
    /// Normalized pre-activation and per-channel inverse std (train mode).
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

struct Forward<F> {
    input: Vec<F>,
    offsets: Vec<usize>,
    encoder: Vec<EncoderCache<F>>,
    /// Row index of the maximum, `clouds × pooled`.
    argmax: Vec<usize>,
    /// Activations entering each head layer, then the final output.
    head: Vec<Vec<F>>,
    stats: BatchStats,
}

impl<F: Real> Network<F> {
    /// He-uniform weights from `config.seed`, zero biases, unit scales.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![F::ZERO; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |params: &mut [F], at: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[at..at + fan_in * fan_out] {
                *p = F::from_f64(rng.random_range(-bound..bound));
            }
        };
        for l in &layout.encoder {
            fill(&mut params, l.weight, l.fan_in, l.fan_out);
            if let Some((gamma, _)) = l.norm {
                params[gamma..gamma + l.fan_out].fill(F::ONE);
            }
        }
        for l in &layout.head {
            fill(&mut params, l.weight, l.fan_in, l.fan_out);
        }
        let mut running = vec![F::ZERO; layout.stats_total];
        for l in &layout.encoder {
            if config.batch_norm {
                let var = l.stats + l.fan_out;
                running[var..var + l.fan_out].fill(F::ONE);
            }
        }
        Ok(Self {
            adam_m: vec![F::ZERO; layout.total],
            adam_v: vec![F::ZERO; layout.total],
            config,
            layout,
            params,
            running,
            step_count: 0,
            epochs_completed: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[F] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [F] {
        &mut self.running
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn epochs_completed(&self) -> u64 {
        self.epochs_completed
    }

    /// Same network in another precision. Optimizer moments are carried over.
    pub fn cast<G: Real>(&self) -> Network<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64(x.to_f64())).collect();
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: conv(&self.params),
            running: conv(&self.running),
            adam_m: conv(&self.adam_m),
            adam_v: conv(&self.adam_v),
            step_count: self.step_count,
            epochs_completed: self.epochs_completed,
        }
    }

    fn check_cloud(cloud: &PointCloud) -> Result<()> {
        if cloud.is_empty() {
            return Err(Error::arg("cannot evaluate an empty cloud"));
        }
        let off = origin_offset(cloud);
        if off > ORIGIN_TOLERANCE {
            return Err(Error::Contract(format!(
                "cloud is not zero-origin normalized (minimum offset {off:e})"
            )));
        }
        Ok(())
    }

    /// Scaled prediction for one normalized cloud.
    pub fn forward(&self, cloud: &PointCloud, mode: Mode) -> Result<F> {
        Ok(self.forward_batch(&[cloud], mode)?[0])
    }

    /// Scaled predictions for a batch of normalized clouds. In train mode
    /// normalization statistics are pooled over every point of the batch.
    pub fn forward_batch(&self, clouds: &[&PointCloud], mode: Mode) -> Result<Vec<F>> {
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        let fwd = self.run_forward(clouds, mode)?;
        Ok(fwd.head.last().cloned().unwrap_or_default())
    }

    fn run_forward(&self, clouds: &[&PointCloud], mode: Mode) -> Result<Forward<F>> {
        for c in clouds {
            Self::check_cloud(c)?;
        }
        let mut offsets = Vec::with_capacity(clouds.len() + 1);
        offsets.push(0);
        let mut input = Vec::new();
        for c in clouds {
            for p in c.points() {
                input.extend([F::from_f64(p.x), F::from_f64(p.y), F::from_f64(p.z)]);
            }
            offsets.push(input.len() / 3);
        }
        let rows = input.len() / 3;
        let eps = self.config.bn_eps;

        let mut encoder: Vec<EncoderCache<F>> = Vec::with_capacity(self.layout.encoder.len());
        let mut stats = BatchStats { layers: Vec::new() };
        for (li, l) in self.layout.encoder.iter().enumerate() {
            let prev: &[F] = if li == 0 {
                &input
            } else {
                &encoder[li - 1].out
            };
            let w = &self.params[l.weight..l.weight + l.fan_in * l.fan_out];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            let mut z = vec![F::ZERO; rows * l.fan_out];
            for row in z.chunks_exact_mut(l.fan_out) {
                row.copy_from_slice(b);
            }
            matmul(rows, l.fan_in, l.fan_out, prev, w, &mut z, true);

            let mut xhat = Vec::new();
            let mut inv_std = Vec::new();
            if let Some((g_at, b_at)) = l.norm {
                let gamma = &self.params[g_at..g_at + l.fan_out];
                let beta = &self.params[b_at..b_at + l.fan_out];
                let (mean, var) = match mode {
                    Mode::Train => {
                        let (mean, var) = channel_moments(&z, l.fan_out);
                        stats.layers.push((mean.clone(), var.clone(), rows));
                        (mean, var)
                    }
                    Mode::Eval => {
                        let r = &self.running[l.stats..l.stats + 2 * l.fan_out];
                        (
                            r[..l.fan_out].iter().map(|v| v.to_f64()).collect(),
                            r[l.fan_out..].iter().map(|v| v.to_f64()).collect(),
                        )
                    }
                };
                let mean: Vec<F> = mean.into_iter().map(F::from_f64).collect();
                inv_std = var
                    .iter()
                    .map(|v| F::from_f64(1.0 / (v + eps).sqrt()))
                    .collect();
                for row in z.chunks_exact_mut(l.fan_out) {
                    for c in 0..l.fan_out {
                        row[c] = (row[c] - mean[c]) * inv_std[c];
                    }
                }
                if mode == Mode::Train {
                    xhat = z.clone();
                }
                for row in z.chunks_exact_mut(l.fan_out) {
                    for c in 0..l.fan_out {
                        row[c] = gamma[c] * row[c] + beta[c];
                    }
                }
            }
            relu(&mut z);
            encoder.push(EncoderCache {
                out: z,
                xhat,
                inv_std,
            });
        }

        // coordinate-wise max over each cloud's points; ties keep the first row
        let last = encoder.last().expect("encoder has at least one layer");
        let width = self.layout.encoder.last().unwrap().fan_out;
        let mut pooled = vec![F::ZERO; clouds.len() * width];
        let mut argmax = vec![0usize; clouds.len() * width];
        for (ci, span) in offsets.windows(2).enumerate() {
            let best = &mut pooled[ci * width..(ci + 1) * width];
            let arg = &mut argmax[ci * width..(ci + 1) * width];
            best.copy_from_slice(&last.out[span[0] * width..(span[0] + 1) * width]);
            arg.fill(span[0]);
            for r in span[0] + 1..span[1] {
                let row = &last.out[r * width..(r + 1) * width];
                for c in 0..width {
                    if row[c] > best[c] {
                        best[c] = row[c];
                        arg[c] = r;
                    }
                }
            }
        }

        let batch = clouds.len();
        let mut head = vec![pooled];
        let n_head = self.layout.head.len();
        for (hi, l) in self.layout.head.iter().enumerate() {
            let w = &self.params[l.weight..l.weight + l.fan_in * l.fan_out];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            let mut z = vec![F::ZERO; batch * l.fan_out];
            for row in z.chunks_exact_mut(l.fan_out) {
                row.copy_from_slice(b);
            }
            matmul(batch, l.fan_in, l.fan_out, &head[hi], w, &mut z, true);
            if hi + 1 < n_head {
                relu(&mut z);
            }
            head.push(z);
        }

        Ok(Forward {
            input,
            offsets,
            encoder,
            argmax,
            head,
            stats,
        })
    }

    /// Mean L1 loss (scaled units) of a batch in train mode, its gradient in
    /// parameter layout, and the batch statistics of the pass.
    ///
    /// The L1 kink uses subgradient 0.
    pub fn loss_and_gradient(
        &self,
        batch: &[&LabeledSample],
    ) -> Result<(f64, Gradients<F>, BatchStats)> {
        if batch.is_empty() {
            return Err(Error::arg("cannot differentiate an empty batch"));
        }
        let clouds: Vec<&PointCloud> = batch.iter().map(|s| &s.cloud).collect();
        let fwd = self.run_forward(&clouds, Mode::Train)?;
        let scale = self.config.target_scale;
        let preds = fwd.head.last().unwrap();
        let inv_b = 1.0 / batch.len() as f64;

        let mut loss = 0.0;
        let mut upstream: Vec<F> = preds
            .iter()
            .zip(batch)
            .map(|(p, s)| {
                let diff = p.to_f64() - s.target_n * scale;
                loss += diff.abs();
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                F::from_f64(sign * inv_b)
            })
            .collect();
        loss *= inv_b;

        let grads = self.backward_from(&fwd, &mut upstream);
        Ok((loss, grads, fwd.stats))
    }

    /// Gradient of the mean L1 loss over a batch.
    pub fn backward(&self, batch: &[&LabeledSample]) -> Result<Gradients<F>> {
        Ok(self.loss_and_gradient(batch)?.1)
    }

    fn backward_from(&self, fwd: &Forward<F>, upstream: &mut Vec<F>) -> Gradients<F> {
        let mut grads = vec![F::ZERO; self.layout.total];
        let batch = fwd.offsets.len() - 1;
        let mut d_out = std::mem::take(upstream);

        for (hi, l) in self.layout.head.iter().enumerate().rev() {
            let out = &fwd.head[hi + 1];
            if hi + 1 < self.layout.head.len() {
                for (d, o) in d_out.iter_mut().zip(out) {
                    if !(*o > F::ZERO) {
                        *d = F::ZERO;
                    }
                }
            }
            let input = &fwd.head[hi];
            matmul_tn(
                batch,
                l.fan_in,
                l.fan_out,
                input,
                &d_out,
                &mut grads[l.weight..l.weight + l.fan_in * l.fan_out],
            );
            let gb = &mut grads[l.bias..l.bias + l.fan_out];
            for row in d_out.chunks_exact(l.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += *d;
                }
            }
            let w = &self.params[l.weight..l.weight + l.fan_in * l.fan_out];
            let mut d_in = vec![F::ZERO; batch * l.fan_in];
            matmul_nt(batch, l.fan_out, l.fan_in, &d_out, w, &mut d_in);
            d_out = d_in;
        }

        // route pooled gradients to the arg-max rows
        let rows = *fwd.offsets.last().unwrap();
        let width = self.layout.encoder.last().unwrap().fan_out;
        let mut d_act = vec![F::ZERO; rows * width];
        for (ci, (d_row, a_row)) in d_out
            .chunks_exact(width)
            .zip(fwd.argmax.chunks_exact(width))
            .enumerate()
        {
            debug_assert!(ci < batch);
            for c in 0..width {
                d_act[a_row[c] * width + c] += d_row[c];
            }
        }

        for (li, l) in self.layout.encoder.iter().enumerate().rev() {
            let cache = &fwd.encoder[li];
            for (d, o) in d_act.iter_mut().zip(&cache.out) {
                if !(*o > F::ZERO) {
                    *d = F::ZERO;
                }
            }
            if let Some((g_at, b_at)) = l.norm {
                let fo = l.fan_out;
                let mut sum_d = vec![0.0f64; fo];
                let mut sum_dx = vec![0.0f64; fo];
                for (d_row, x_row) in d_act.chunks_exact(fo).zip(cache.xhat.chunks_exact(fo)) {
                    for c in 0..fo {
                        let d = d_row[c].to_f64();
                        sum_d[c] += d;
                        sum_dx[c] += d * x_row[c].to_f64();
                    }
                }
                for c in 0..fo {
                    grads[g_at + c] = F::from_f64(sum_dx[c]);
                    grads[b_at + c] = F::from_f64(sum_d[c]);
                }
                // d xhat = dy * gamma; dz = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                let gamma = &self.params[g_at..g_at + fo];
                let inv_rows = 1.0 / rows as f64;
                let mean_dxhat: Vec<F> = (0..fo)
                    .map(|c| F::from_f64(sum_d[c] * gamma[c].to_f64() * inv_rows))
                    .collect();
                let mean_dxhat_x: Vec<F> = (0..fo)
                    .map(|c| F::from_f64(sum_dx[c] * gamma[c].to_f64() * inv_rows))
                    .collect();
                for (d_row, x_row) in d_act.chunks_exact_mut(fo).zip(cache.xhat.chunks_exact(fo)) {
                    for c in 0..fo {
                        let dxhat = d_row[c] * gamma[c];
                        d_row[c] =
                            cache.inv_std[c] * (dxhat - mean_dxhat[c] - x_row[c] * mean_dxhat_x[c]);
                    }
                }
            }
            let gb = &mut grads[l.bias..l.bias + l.fan_out];
            let mut acc = vec![0.0f64; l.fan_out];
            for row in d_act.chunks_exact(l.fan_out) {
                for (a, d) in acc.iter_mut().zip(row) {
                    *a += d.to_f64();
                }
            }
            for (g, a) in gb.iter_mut().zip(acc) {
                *g = F::from_f64(a);
            }
            let prev: &[F] = if li == 0 {
                &fwd.input
            } else {
                &fwd.encoder[li - 1].out
            };
            matmul_tn(
                rows,
                l.fan_in,
                l.fan_out,
                prev,
                &d_act,
                &mut grads[l.weight..l.weight + l.fan_in * l.fan_out],
            );
            if li > 0 {
                let w = &self.params[l.weight..l.weight + l.fan_in * l.fan_out];
                let mut d_prev = vec![F::ZERO; rows * l.fan_in];
                matmul_nt(rows, l.fan_out, l.fan_in, &d_act, w, &mut d_prev);
                d_act = d_prev;
            }
        }
        grads
    }

    /// Exponential moving average of batch statistics into the running
    /// statistics; the variance is Bessel-corrected.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = self.config.bn_momentum;
        for (l, (mean, var, rows)) in self.layout.encoder.iter().zip(&stats.layers) {
            let correction = if *rows > 1 {
                *rows as f64 / (*rows - 1) as f64
            } else {
                1.0
            };
            let r = &mut self.running[l.stats..l.stats + 2 * l.fan_out];
            let (rm, rv) = r.split_at_mut(l.fan_out);
            for c in 0..l.fan_out {
                rm[c] = F::from_f64((1.0 - m) * rm[c].to_f64() + m * mean[c]);
                rv[c] = F::from_f64((1.0 - m) * rv[c].to_f64() + m * var[c] * correction);
            }
        }
    }
}

fn relu<F: Real>(v: &mut [F]) {
    for x in v {
        if !(*x > F::ZERO) {
            *x = F::ZERO;
        }
    }
}

/// Per-channel mean and biased variance of a `rows × width` matrix.
fn channel_moments<F: Real>(z: &[F], width: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = z.len() / width;
    let mut mean = vec![0.0f64; width];
    for row in z.chunks_exact(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.to_f64();
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0f64; width];
    for row in z.chunks_exact(width) {
        for c in 0..width {
            let d = row[c].to_f64() - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{normalize_zero_origin, Point3};
    use rand::seq::SliceRandom;

    fn tiny_config(seed: u64) -> NetConfig {
        NetConfig {
            seed,
            ..NetConfig::with_widths(&[8], 8, &[8])
        }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..0.1),
                )
            })
            .collect();
        normalize_zero_origin(&PointCloud::new(pts).unwrap()).unwrap()
    }

    /// Straight-loop eval-mode forward pass, independent of the GEMM path.
    fn reference_forward(net: &Network<f64>, cloud: &PointCloud) -> f64 {
        let cfg = &net.config;
        let p = &net.params;
        let mut feats: Vec<Vec<f64>> = cloud.points().iter().map(|q| vec![q.x, q.y, q.z]).collect();
        for l in &net.layout.encoder {
            for f in feats.iter_mut() {
                let mut out = vec![0.0; l.fan_out];
                for (o, slot) in out.iter_mut().enumerate() {
                    let mut z = p[l.bias + o];
                    for (i, x) in f.iter().enumerate() {
                        z += x * p[l.weight + i * l.fan_out + o];
                    }
                    if let Some((g, b)) = l.norm {
                        let mean = net.running[l.stats + o];
                        let var = net.running[l.stats + l.fan_out + o];
                        z = p[g + o] * (z - mean) / (var + cfg.bn_eps).sqrt() + p[b + o];
                    }
                    *slot = z.max(0.0);
                }
                *f = out;
            }
        }
        let width = feats[0].len();
        let mut h: Vec<f64> = (0..width)
            .map(|c| feats.iter().map(|f| f[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        for (hi, l) in net.layout.head.iter().enumerate() {
            let mut out = vec![0.0; l.fan_out];
            for (o, slot) in out.iter_mut().enumerate() {
                let mut z = p[l.bias + o];
                for (i, x) in h.iter().enumerate() {
                    z += x * p[l.weight + i * l.fan_out + o];
                }
                *slot = if hi + 1 < net.layout.head.len() {
                    z.max(0.0)
                } else {
                    z
                };
            }
            h = out;
        }
        h[0]
    }

    fn perturbed_stats(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
        for l in net.layout.encoder.clone() {
            for c in 0..l.fan_out {
                net.running[l.stats + c] = rng.random_range(-0.5..0.5);
                net.running[l.stats + l.fan_out + c] = rng.random_range(0.2..2.0);
            }
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let cfg = tiny_config(0);
        let layout = Layout::new(&cfg);
        // 3*8+8+16, 8*8+8+16, 8*8+8, 8*1+1
        assert_eq!(layout.total, 48 + 88 + 72 + 9);
        assert_eq!(layout.stats_total, 32);
        assert_eq!(layout.head[1].bias, layout.total - 1);
        let no_bn = NetConfig {
            batch_norm: false,
            ..cfg
        };
        assert_eq!(Layout::new(&no_bn).total, 32 + 72 + 72 + 9);
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net: Network<f64> = Network::new(tiny_config(3)).unwrap();
        perturbed_stats(&mut net, &mut rng);
        for n in [1, 2, 17, 100] {
            let cloud = random_cloud(&mut rng, n);
            let got = net.forward(&cloud, Mode::Eval).unwrap();
            let want = reference_forward(&net, &cloud);
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn duplicate_point_leaves_eval_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net: Network<f64> = Network::new(tiny_config(4)).unwrap();
        perturbed_stats(&mut net, &mut rng);
        for _ in 0..20 {
            let cloud = random_cloud(&mut rng, 12);
            let mut pts = cloud.points().to_vec();
            pts.push(pts[rng.random_range(0..pts.len())]);
            let dup = PointCloud::new(pts).unwrap();
            let a = net.forward(&cloud, Mode::Eval).unwrap();
            let b = net.forward(&dup, Mode::Eval).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            assert!((b - reference_forward(&net, &dup)).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn permutation_invariance_default_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net: Network<f32> = Network::new(NetConfig::default()).unwrap();
        for _ in 0..5 {
            let cloud = random_cloud(&mut rng, 60);
            let mut pts = cloud.points().to_vec();
            pts.shuffle(&mut rng);
            let shuffled = PointCloud::new(pts).unwrap();
            let a = net.forward(&cloud, Mode::Eval).unwrap();
            let b = net.forward(&shuffled, Mode::Eval).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut net: Network<f32> = Network::new(tiny_config(1)).unwrap();
        net.params.fill(0.0);
        let bias = net.layout.output_bias();
        net.params[bias] = 1234.5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 5, 40] {
            let c = random_cloud(&mut rng, n);
            assert_eq!(net.forward(&c, Mode::Eval).unwrap(), 1234.5);
            assert_eq!(net.forward(&c, Mode::Train).unwrap(), 1234.5);
        }
    }

    #[test]
    fn rejects_unnormalized_and_empty() {
        let net: Network<f32> = Network::new(tiny_config(1)).unwrap();
        let shifted = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(
            net.forward(&shifted, Mode::Eval),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            net.forward(&PointCloud::default(), Mode::Eval),
            Err(Error::Argument(_))
        ));
        let near = PointCloud::new(vec![Point3::new(1e-10, 0.0, 0.0)]).unwrap();
        assert!(net.forward(&near, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_output_independent_of_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net: Network<f64> = Network::new(tiny_config(9)).unwrap();
        let clouds: Vec<PointCloud> = (0..6).map(|i| random_cloud(&mut rng, 3 + 7 * i)).collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let batched = net.forward_batch(&refs, Mode::Eval).unwrap();
        for (c, b) in clouds.iter().zip(&batched) {
            let alone = net.forward(c, Mode::Eval).unwrap();
            assert!((alone - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    fn sample(cloud: PointCloud, n: f64) -> LabeledSample {
        LabeledSample {
            cloud,
            target_n: n,
            provenance: vec![],
        }
    }

    #[test]
    fn exact_prediction_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // unit scale so the target reproduces the prediction exactly
        let net: Network<f64> = Network::new(NetConfig {
            target_scale: 1.0,
            ..tiny_config(2)
        })
        .unwrap();
        let c = random_cloud(&mut rng, 10);
        let pred = net.forward(&c, Mode::Train).unwrap();
        let s = sample(c, pred);
        let (loss, g, _) = net.loss_and_gradient(&[&s]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_depends_only_on_error_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net: Network<f64> = Network::new(tiny_config(5)).unwrap();
        let clouds: Vec<PointCloud> = (0..4).map(|_| random_cloud(&mut rng, 15)).collect();
        let preds: Vec<f64> = {
            let r: Vec<&PointCloud> = clouds.iter().collect();
            net.forward_batch(&r, Mode::Train).unwrap()
        };
        let make = |k: f64| -> Vec<LabeledSample> {
            clouds
                .iter()
                .zip(&preds)
                .enumerate()
                .map(|(i, (c, p))| {
                    let off = if i % 2 == 0 { 500.0 } else { -300.0 };
                    sample(c.clone(), (p + k * off) / net.config.target_scale)
                })
                .collect()
        };
        let (a, b) = (make(1.0), make(2.0));
        let ga = net.backward(&a.iter().collect::<Vec<_>>()).unwrap();
        let gb = net.backward(&b.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net: Network<f64> = Network::new(tiny_config(8)).unwrap();
        let bias = net.layout.output_bias();
        net.params[bias] = 0.1 * net.config.target_scale;
        let data: Vec<LabeledSample> = (0..20)
            .map(|_| {
                let k = rng.random_range(3..30);
                let c = random_cloud(&mut rng, k);
                sample(c, rng.random_range(0.025..0.25))
            })
            .collect();
        let batch: Vec<&LabeledSample> = data.iter().collect();
        let (_, grads, _) = net.loss_and_gradient(&batch).unwrap();
        let eps = 1e-4;
        let mut checked = 0;
        let mut passed = 0;
        for (i, &analytic) in grads.iter().enumerate() {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = net.loss_and_gradient(&batch).unwrap().0;
            net.params[i] = orig - eps;
            let down = net.loss_and_gradient(&batch).unwrap().0;
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let diff = (numeric - analytic).abs();
            let rel = diff / numeric.abs().max(analytic.abs());
            checked += 1;
            // biases ahead of batch norm have an exactly zero gradient
            if diff < 1e-10 || rel < 1e-4 {
                passed += 1;
            }
        }
        assert!(passed as f64 >= 0.99 * checked as f64, "{passed}/{checked}");
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut net: Network<f64> = Network::new(tiny_config(0)).unwrap();
        let stats = BatchStats {
            layers: net
                .layout
                .encoder
                .iter()
                .map(|l| (vec![1.0; l.fan_out], vec![2.0; l.fan_out], 3))
                .collect(),
        };
        net.update_running_stats(&stats);
        let l = &net.layout.encoder[0];
        assert!((net.running[l.stats] - 0.1).abs() < 1e-15);
        // 0.9 * 1 + 0.1 * 2 * 3/2
        assert!((net.running[l.stats + l.fan_out] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn cast_round_trip_from_f32_is_exact() {
        let net: Network<f32> = Network::new(tiny_config(12)).unwrap();
        let back: Network<f32> = net.cast::<f64>().cast();
        assert_eq!(back, net);
    }
}

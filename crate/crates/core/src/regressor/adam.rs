use super::net::Network;
use super::real::Real;
use super::TrainConfig;
use crate::error::{Error, Result};

/// One bias-corrected Adam update at step size `lr`. Moments are kept on the
/// network so training can resume from a checkpoint.
pub fn adam_step<F: Real>(
    net: &mut Network<F>,
    grads: &[F],
    tconf: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != net.params.len() {
        return Err(Error::Contract(format!(
            "gradient length {} does not match {} parameters",
            grads.len(),
            net.params.len()
        )));
    }
    let (b1, b2) = tconf.adam_betas;
    let t = net.step_count + 1;
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for (((p, g), m), v) in net
        .params
        .iter_mut()
        .zip(grads)
        .zip(net.adam_m.iter_mut())
        .zip(net.adam_v.iter_mut())
    {
        let g = g.to_f64();
        let m_new = b1 * m.to_f64() + (1.0 - b1) * g;
        let v_new = b2 * v.to_f64() + (1.0 - b2) * g * g;
        *m = F::from_f64(m_new);
        *v = F::from_f64(v_new);
        let step = lr * (m_new / c1) / ((v_new / c2).sqrt() + tconf.adam_eps);
        *p = F::from_f64(p.to_f64() - step);
    }
    net.step_count = t;
    Ok(())
}

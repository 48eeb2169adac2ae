use super::Param;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Increments `step_count` and zeroes the
/// gradient afterwards so batches never leak into each other.
pub fn adam_step(p: &Param, lr: f64, hyper: AdamHyper) {
    let mut d = p.borrow_mut();
    d.step_count += 1;
    let t = d.step_count as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let n = d.value.numel();
    for i in 0..n {
        let g = d.grad.data()[i];
        let m = hyper.beta1 * d.adam_m.data()[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * d.adam_v.data()[i] + (1.0 - hyper.beta2) * g * g;
        d.adam_m.data_mut()[i] = m;
        d.adam_v.data_mut()[i] = v;
        let mhat = m / bc1;
        let vhat = v / bc2;
        d.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + hyper.eps);
        d.grad.data_mut()[i] = 0.0;
    }
}

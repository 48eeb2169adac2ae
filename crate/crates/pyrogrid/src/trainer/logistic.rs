//! Per-pixel logistic baseline: one linear map from the channel values at a
//! pixel to per-horizon fire risk, no spatial or temporal context.

use crate::environment::GridSeries;
use crate::metrics::{auroc, bce, iou, MetricRow, MetricTable};
use crate::numerics::{adam_step, AdamHyper, Param, Tensor};
use crate::trainer::TrainError;

pub struct LogisticBaseline {
    pub w: Param, // [L, C]
    pub b: Param, // [L]
    pub horizons: Vec<usize>,
    channels: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LogisticBaseline {
    /// Zero-initialized model (prediction 0.5 everywhere).
    pub fn new(channels: usize, horizons: &[usize]) -> Self {
        let l = horizons.len();
        LogisticBaseline {
            w: Param::new(Tensor::zeros(&[l, channels])),
            b: Param::new(Tensor::zeros(&[l])),
            horizons: horizons.to_vec(),
            channels,
        }
    }

    /// Per-horizon probabilities for every pixel of week `t`, each flat H*W.
    pub fn predict_week(&self, gs: &GridSeries, t: usize) -> Vec<Vec<f64>> {
        let (_, c, h, w) = gs.dims();
        let hw = h * w;
        let frame = gs.frame(t);
        let wv = self.w.value();
        let bv = self.b.value();
        self.horizons
            .iter()
            .enumerate()
            .map(|(li, _)| {
                (0..hw)
                    .map(|pix| {
                        let mut z = bv.data()[li];
                        for ch in 0..c {
                            z += wv.data()[li * c + ch] * frame.data()[ch * hw + pix];
                        }
                        sigmoid(z)
                    })
                    .collect()
            })
            .collect()
    }

    /// Full-batch Adam on the pixelwise BCE over the train split. Returns the
    /// final loss.
    pub fn fit(&mut self, train: &GridSeries, epochs: usize, lr: f64) -> Result<f64, TrainError> {
        let (t_len, c, h, w) = train.dims();
        if c != self.channels {
            return Err(TrainError::Config(format!(
                "{} channels in data, model has {}",
                c, self.channels
            )));
        }
        let hw = h * w;
        let l_n = self.horizons.len();
        let hmax = *self.horizons.last().unwrap();
        if t_len <= hmax {
            return Err(TrainError::Config("train split shorter than horizon".into()));
        }
        let weeks = t_len - hmax;
        let n_samples = (weeks * hw) as f64;
        let mut last = f64::INFINITY;
        for _ in 0..epochs {
            let mut gw = vec![0.0; l_n * c];
            let mut gb = vec![0.0; l_n];
            let mut loss = 0.0;
            let wv = self.w.value();
            let bv = self.b.value();
            for t in 0..weeks {
                let frame = train.frame(t);
                for (li, l) in self.horizons.iter().enumerate() {
                    let target = &train.fire[(t + l) * hw..(t + l + 1) * hw];
                    for pix in 0..hw {
                        let mut z = bv.data()[li];
                        for ch in 0..c {
                            z += wv.data()[li * c + ch] * frame.data()[ch * hw + pix];
                        }
                        let p = sigmoid(z).clamp(1e-7, 1.0 - 1e-7);
                        let y = target[pix] as f64;
                        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                        let g = (p - y) / (n_samples * l_n as f64);
                        for ch in 0..c {
                            gw[li * c + ch] += g * frame.data()[ch * hw + pix];
                        }
                        gb[li] += g;
                    }
                }
            }
            {
                let mut wd = self.w.borrow_mut();
                for (dst, src) in wd.grad.data_mut().iter_mut().zip(&gw) {
                    *dst = *src;
                }
            }
            {
                let mut bd = self.b.borrow_mut();
                for (dst, src) in bd.grad.data_mut().iter_mut().zip(&gb) {
                    *dst = *src;
                }
            }
            adam_step(&self.w, lr, AdamHyper::default());
            adam_step(&self.b, lr, AdamHyper::default());
            last = loss / (n_samples * l_n as f64);
        }
        Ok(last)
    }

    /// Pooled per-horizon metrics over the validation split.
    pub fn evaluate(
        &self,
        val: &GridSeries,
        agent: usize,
        method: &str,
    ) -> Result<MetricTable, TrainError> {
        let (t_len, _, h, w) = val.dims();
        let hw = h * w;
        let l_n = self.horizons.len();
        let mut scores: Vec<Vec<f64>> = vec![Vec::new(); l_n];
        let mut labels: Vec<Vec<f64>> = vec![Vec::new(); l_n];
        for v in 0..t_len {
            let preds = self.predict_week(val, v);
            for (li, l) in self.horizons.iter().enumerate() {
                if v + l >= t_len {
                    continue;
                }
                scores[li].extend_from_slice(&preds[li]);
                labels[li].extend(val.fire[(v + l) * hw..(v + l + 1) * hw].iter().map(|b| *b as f64));
            }
        }
        let mut table = MetricTable::default();
        for (li, l) in self.horizons.iter().enumerate() {
            let (roc, _) = auroc(&labels[li], &scores[li])?;
            table.push(MetricRow {
                method: method.to_string(),
                agent,
                horizon: *l,
                bce: bce(&labels[li], &scores[li])?,
                auroc: roc,
                iou: iou(&labels[li], &scores[li], 0.5)?,
            });
        }
        Ok(table)
    }
}

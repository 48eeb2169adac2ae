use super::{NumericsError, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &mut [Tensor])>;

/// Define-by-run reverse-mode tape. Rebuilt per forward pass; `backward`
/// accumulates into every registered trainable [`Param`], adding across
/// multiple uses and across repeated backward calls.
pub struct Tape {
    values: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
    param_leaves: Vec<(usize, Param)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
            param_leaves: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> NodeId {
        self.values.push(value);
        self.backs.push(back);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, None)
    }

    /// Trainable leaf: backward accumulates into `p.grad`.
    pub fn param(&mut self, p: &Param) -> NodeId {
        let id = self.push(p.value(), None);
        self.param_leaves.push((id.0, p.clone()));
        id
    }

    /// Frozen leaf: gradients flow through but are not stored.
    pub fn param_frozen(&mut self, p: &Param) -> NodeId {
        self.push(p.value(), None)
    }

    pub fn backward(&mut self, loss: NodeId) -> Result<(), NumericsError> {
        if self.values[loss.0].numel() != 1 {
            return Err(NumericsError::NonScalarLoss(
                self.values[loss.0].shape().to_vec(),
            ));
        }
        let n = self.values.len();
        let mut grads: Vec<Tensor> = self.values.iter().map(Tensor::zeros_like).collect();
        grads[loss.0].data_mut()[0] = 1.0;
        for id in (0..=loss.0).rev() {
            if let Some(f) = &self.backs[id] {
                let g = std::mem::take(&mut grads[id]);
                f(&self.values, &g, &mut grads);
            }
        }
        let _ = n;
        for (nid, p) in &self.param_leaves {
            if grads[*nid].numel() == 0 {
                continue; // unreachable from loss
            }
            let mut pd = p.borrow_mut();
            for (gp, gs) in pd.grad.data_mut().iter_mut().zip(grads[*nid].data()) {
                *gp += *gs;
            }
        }
        Ok(())
    }

    // ---- elementwise ----

    fn binary_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        back: BackFn,
    ) -> NodeId {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(out, Some(back))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(
            a,
            b,
            |x, y| x + y,
            Box::new(move |_v, g, grads| {
                for i in 0..g.numel() {
                    grads[a.0].data_mut()[i] += g.data()[i];
                    grads[b.0].data_mut()[i] += g.data()[i];
                }
            }),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(
            a,
            b,
            |x, y| x - y,
            Box::new(move |_v, g, grads| {
                for i in 0..g.numel() {
                    grads[a.0].data_mut()[i] += g.data()[i];
                    grads[b.0].data_mut()[i] -= g.data()[i];
                }
            }),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(
            a,
            b,
            |x, y| x * y,
            Box::new(move |v, g, grads| {
                for i in 0..g.numel() {
                    grads[a.0].data_mut()[i] += g.data()[i] * v[b.0].data()[i];
                    grads[b.0].data_mut()[i] += g.data()[i] * v[a.0].data()[i];
                }
            }),
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = Tensor::from_parts(
            self.values[a.0].shape().to_vec(),
            self.values[a.0].data().iter().map(|x| x * c).collect(),
        );
        self.push(
            out,
            Some(Box::new(move |_v, g, grads| {
                for i in 0..g.numel() {
                    grads[a.0].data_mut()[i] += g.data()[i] * c;
                }
            })),
        )
    }

    fn unary(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        // derivative expressed in terms of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> NodeId {
        let out = Tensor::from_parts(
            self.values[a.0].shape().to_vec(),
            self.values[a.0].data().iter().map(|x| f(*x)).collect(),
        );
        let id = self.push(out, None);
        self.backs[id.0] = Some(Box::new(move |v, g, grads| {
            let (x, y) = (v[a.0].data(), v[id.0].data());
            for i in 0..g.numel() {
                grads[a.0].data_mut()[i] += g.data()[i] * df(x[i], y[i]);
            }
        }));
        id
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_x, y| y * (1.0 - y))
    }

    pub fn tanh_op(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.tanh(), |_x, y| 1.0 - y * y)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(
            a,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _y| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn exp_op(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.exp(), |_x, y| y)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |_v, g, grads| {
                let gv = g.data()[0];
                for x in grads[a.0].data_mut() {
                    *x += gv;
                }
            })),
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    // ---- linear algebra ----

    /// y = W x, with W of shape [m, n] and x of shape [n].
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, NumericsError> {
        let ws = self.values[w.0].shape().to_vec();
        let xs = self.values[x.0].shape().to_vec();
        if ws.len() != 2 || xs != [ws[1]] {
            return Err(NumericsError::Shape(format!(
                "matvec: W {:?} incompatible with x {:?}",
                ws, xs
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = self.values[w.0].data();
        let xd = self.values[x.0].data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            out[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(
            Tensor::from_parts(vec![m], out),
            Some(Box::new(move |v, g, grads| {
                let wd = v[w.0].data();
                let xd = v[x.0].data();
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let gw = &mut grads[w.0];
                    for j in 0..n {
                        gw.data_mut()[i * n + j] += gi * xd[j];
                    }
                }
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let gx = grads[x.0].data_mut();
                    for j in 0..n {
                        gx[j] += gi * wd[i * n + j];
                    }
                }
            })),
        ))
    }

    // ---- shape plumbing ----

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, NumericsError> {
        let v = self.values[a.0].clone().reshaped(shape)?;
        Ok(self.push(
            v,
            Some(Box::new(move |_v, g, grads| {
                for i in 0..g.numel() {
                    grads[a.0].data_mut()[i] += g.data()[i];
                }
            })),
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let d = self.values[p.0].data();
            spans.push((p.0, data.len(), d.len()));
            data.extend_from_slice(d);
        }
        let n = data.len();
        self.push(
            Tensor::from_parts(vec![n], data),
            Some(Box::new(move |_v, g, grads| {
                for (src, off, len) in &spans {
                    for i in 0..*len {
                        grads[*src].data_mut()[i] += g.data()[off + i];
                    }
                }
            })),
        )
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let d = self.values[a.0].data()[start..start + len].to_vec();
        self.push(
            Tensor::from_parts(vec![len], d),
            Some(Box::new(move |_v, g, grads| {
                for i in 0..len {
                    grads[a.0].data_mut()[start + i] += g.data()[i];
                }
            })),
        )
    }

    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let d: Vec<f64> = indices.iter().map(|i| self.values[a.0].data()[*i]).collect();
        let n = d.len();
        self.push(
            Tensor::from_parts(vec![n], d),
            Some(Box::new(move |_v, g, grads| {
                for (k, i) in indices.iter().enumerate() {
                    grads[a.0].data_mut()[*i] += g.data()[k];
                }
            })),
        )
    }

    /// Copy of `base` with `values` written at `indices` (disjoint).
    pub fn scatter(&mut self, base: Tensor, indices: Vec<usize>, values: NodeId) -> NodeId {
        assert_eq!(indices.len(), self.values[values.0].numel());
        let mut out = base;
        for (k, i) in indices.iter().enumerate() {
            out.data_mut()[*i] = self.values[values.0].data()[k];
        }
        self.push(
            out,
            Some(Box::new(move |_v, g, grads| {
                for (k, i) in indices.iter().enumerate() {
                    grads[values.0].data_mut()[k] += g.data()[*i];
                }
            })),
        )
    }

    pub fn softmax_vec(&mut self, a: NodeId) -> NodeId {
        let x = self.values[a.0].data();
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let y: Vec<f64> = e.iter().map(|v| v / s).collect();
        let n = y.len();
        let id = self.push(Tensor::from_parts(vec![n], y), None);
        self.backs[id.0] = Some(Box::new(move |v, g, grads| {
            let y = v[id.0].data();
            let dotgy: f64 = g.data().iter().zip(y).map(|(a, b)| a * b).sum();
            for i in 0..n {
                grads[a.0].data_mut()[i] += y[i] * (g.data()[i] - dotgy);
            }
        }));
        id
    }

    // ---- convolution ----

    /// Cross-correlation. Input [C_in,H,W], kernels [C_out,C_in,k,k].
    pub fn conv2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, NumericsError> {
        let xs = self.values[x.0].shape().to_vec();
        let ks = self.values[k.0].shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] {
            return Err(NumericsError::Shape(format!(
                "conv2d: input {:?} kernels {:?}",
                xs, ks
            )));
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kk) = (ks[0], ks[2]);
        if stride < 1 || kk > h + 2 * padding || kk > w + 2 * padding {
            return Err(NumericsError::Shape(format!(
                "conv2d: kernel {} exceeds padded input {}x{} (stride {})",
                kk,
                h + 2 * padding,
                w + 2 * padding,
                stride
            )));
        }
        let ho = (h + 2 * padding - kk) / stride + 1;
        let wo = (w + 2 * padding - kk) / stride + 1;
        let xd = self.values[x.0].data();
        let kd = self.values[k.0].data();
        let mut out = vec![0.0; co * ho * wo];
        for c_out in 0..co {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = 0.0;
                    for c_in in 0..ci {
                        for a in 0..kk {
                            let ii = (oi * stride + a) as isize - padding as isize;
                            if ii < 0 || ii as usize >= h {
                                continue;
                            }
                            let xrow = &xd[c_in * h * w + ii as usize * w..];
                            let krow = &kd[((c_out * ci + c_in) * kk + a) * kk..];
                            for b in 0..kk {
                                let jj = (oj * stride + b) as isize - padding as isize;
                                if jj < 0 || jj as usize >= w {
                                    continue;
                                }
                                acc += xrow[jj as usize] * krow[b];
                            }
                        }
                    }
                    out[(c_out * ho + oi) * wo + oj] = acc;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![co, ho, wo], out),
            Some(Box::new(move |v, g, grads| {
                let xd = v[x.0].data();
                let kd = v[k.0].data();
                // split borrows: take both grad tensors out, restore after
                let mut gx = std::mem::take(&mut grads[x.0]);
                let mut gk = std::mem::take(&mut grads[k.0]);
                if gx.numel() == 0 {
                    gx = Tensor::zeros_like(&v[x.0]);
                }
                if gk.numel() == 0 {
                    gk = Tensor::zeros_like(&v[k.0]);
                }
                for c_out in 0..co {
                    for oi in 0..ho {
                        for oj in 0..wo {
                            let go = g.data()[(c_out * ho + oi) * wo + oj];
                            if go == 0.0 {
                                continue;
                            }
                            for c_in in 0..ci {
                                for a in 0..kk {
                                    let ii = (oi * stride + a) as isize - padding as isize;
                                    if ii < 0 || ii as usize >= h {
                                        continue;
                                    }
                                    let xbase = c_in * h * w + ii as usize * w;
                                    let kbase = ((c_out * ci + c_in) * kk + a) * kk;
                                    for b in 0..kk {
                                        let jj = (oj * stride + b) as isize - padding as isize;
                                        if jj < 0 || jj as usize >= w {
                                            continue;
                                        }
                                        gx.data_mut()[xbase + jj as usize] += go * kd[kbase + b];
                                        gk.data_mut()[kbase + b] += go * xd[xbase + jj as usize];
                                    }
                                }
                            }
                        }
                    }
                }
                grads[x.0] = gx;
                grads[k.0] = gk;
            })),
        ))
    }

    /// Adjoint of [`Tape::conv2d`]. Input [C_in,H,W], kernels [C_in,C_out,k,k].
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        k: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, NumericsError> {
        let xs = self.values[x.0].shape().to_vec();
        let ks = self.values[k.0].shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[0] != xs[0] || ks[2] != ks[3] {
            return Err(NumericsError::Shape(format!(
                "conv_transpose2d: input {:?} kernels {:?}",
                xs, ks
            )));
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let (co, kk) = (ks[1], ks[2]);
        let ho = (h - 1) * stride + kk;
        let wo = (w - 1) * stride + kk;
        if ho < 2 * padding + 1 || wo < 2 * padding + 1 {
            return Err(NumericsError::Shape(format!(
                "conv_transpose2d: output would be empty for input {:?} kernel {} stride {} padding {}",
                xs, kk, stride, padding
            )));
        }
        let (ho, wo) = (ho - 2 * padding, wo - 2 * padding);
        let xd = self.values[x.0].data();
        let kd = self.values[k.0].data();
        let mut out = vec![0.0; co * ho * wo];
        for c_in in 0..ci {
            for i in 0..h {
                for j in 0..w {
                    let xv = xd[(c_in * h + i) * w + j];
                    if xv == 0.0 {
                        continue;
                    }
                    for c_out in 0..co {
                        for a in 0..kk {
                            let oi = (i * stride + a) as isize - padding as isize;
                            if oi < 0 || oi as usize >= ho {
                                continue;
                            }
                            let obase = (c_out * ho + oi as usize) * wo;
                            let kbase = ((c_in * co + c_out) * kk + a) * kk;
                            for b in 0..kk {
                                let oj = (j * stride + b) as isize - padding as isize;
                                if oj < 0 || oj as usize >= wo {
                                    continue;
                                }
                                out[obase + oj as usize] += xv * kd[kbase + b];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![co, ho, wo], out),
            Some(Box::new(move |v, g, grads| {
                let xd = v[x.0].data();
                let kd = v[k.0].data();
                let mut gx = std::mem::take(&mut grads[x.0]);
                let mut gk = std::mem::take(&mut grads[k.0]);
                if gx.numel() == 0 {
                    gx = Tensor::zeros_like(&v[x.0]);
                }
                if gk.numel() == 0 {
                    gk = Tensor::zeros_like(&v[k.0]);
                }
                for c_in in 0..ci {
                    for i in 0..h {
                        for j in 0..w {
                            let xv = xd[(c_in * h + i) * w + j];
                            let mut gxv = 0.0;
                            for c_out in 0..co {
                                for a in 0..kk {
                                    let oi = (i * stride + a) as isize - padding as isize;
                                    if oi < 0 || oi as usize >= ho {
                                        continue;
                                    }
                                    let obase = (c_out * ho + oi as usize) * wo;
                                    let kbase = ((c_in * co + c_out) * kk + a) * kk;
                                    for b in 0..kk {
                                        let oj = (j * stride + b) as isize - padding as isize;
                                        if oj < 0 || oj as usize >= wo {
                                            continue;
                                        }
                                        let go = g.data()[obase + oj as usize];
                                        gxv += go * kd[kbase + b];
                                        gk.data_mut()[kbase + b] += go * xv;
                                    }
                                }
                            }
                            gx.data_mut()[(c_in * h + i) * w + j] += gxv;
                        }
                    }
                }
                grads[x.0] = gx;
                grads[k.0] = gk;
            })),
        ))
    }

    /// out[c,h,w] = x[c,h,w] + b[c]
    pub fn bias_channels(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let xs = self.values[x.0].shape().to_vec();
        let bs = self.values[b.0].shape().to_vec();
        if xs.len() != 3 || bs != [xs[0]] {
            return Err(NumericsError::Shape(format!(
                "bias_channels: input {:?} bias {:?}",
                xs, bs
            )));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let xd = self.values[x.0].data();
        let bd = self.values[b.0].data();
        let mut out = Vec::with_capacity(c * hw);
        for ci in 0..c {
            for p in 0..hw {
                out.push(xd[ci * hw + p] + bd[ci]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(xs, out),
            Some(Box::new(move |_v, g, grads| {
                for ci in 0..c {
                    let mut s = 0.0;
                    for p in 0..hw {
                        let gv = g.data()[ci * hw + p];
                        grads[x.0].data_mut()[ci * hw + p] += gv;
                        s += gv;
                    }
                    grads[b.0].data_mut()[ci] += s;
                }
            })),
        ))
    }

    // ---- losses ----

    /// Pixel-mean negated binary cross-entropy against a constant binary
    /// target; predictions clipped to [1e-7, 1-1e-7] before the log.
    pub fn bce_mean(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId, NumericsError> {
        const LO: f64 = 1e-7;
        const HI: f64 = 1.0 - 1e-7;
        let ps = self.values[pred.0].shape();
        if self.values[pred.0].numel() != target.numel() {
            return Err(NumericsError::Shape(format!(
                "bce: pred {:?} vs target {:?}",
                ps,
                target.shape()
            )));
        }
        let n = target.numel() as f64;
        let pd = self.values[pred.0].data();
        let mut loss = 0.0;
        for (p, t) in pd.iter().zip(target.data()) {
            let pc = p.clamp(LO, HI);
            loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        loss /= n;
        let tgt = target.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |v, g, grads| {
                let gv = g.data()[0] / n;
                let pd = v[pred.0].data();
                for i in 0..pd.len() {
                    let p = pd[i];
                    if p <= LO || p >= HI {
                        continue; // clipped: zero slope
                    }
                    let t = tgt.data()[i];
                    grads[pred.0].data_mut()[i] += gv * (p - t) / (p * (1.0 - p));
                }
            })),
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse_mean(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId, NumericsError> {
        if self.values[pred.0].numel() != target.numel() {
            return Err(NumericsError::Shape(format!(
                "mse: pred {:?} vs target {:?}",
                self.values[pred.0].shape(),
                target.shape()
            )));
        }
        let n = target.numel() as f64;
        let pd = self.values[pred.0].data();
        let loss: f64 = pd
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let tgt = target.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |v, g, grads| {
                let gv = g.data()[0] * 2.0 / n;
                let pd = v[pred.0].data();
                for i in 0..pd.len() {
                    grads[pred.0].data_mut()[i] += gv * (pd[i] - tgt.data()[i]);
                }
            })),
        ))
    }
}

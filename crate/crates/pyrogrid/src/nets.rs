//! Parameter containers and forward passes: the dynamic computation network
//! (encoder, GRU, observation decoder, fire decoder heads), the actor and
//! the critic.
//!
//! Encoder: four stride-2 3x3 convolutions (leaky ReLU between) followed by
//! a flatten-to-vector linear map. Decoders mirror it with a linear seed map
//! and four stride-2 4x4 transposed convolutions ending in a sigmoid.

use rand::Rng;

use crate::exchange::ActionMatrix;
use crate::numerics::{NodeId, NumericsError, Param, Tape, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Shape configuration shared by every network of one agent.
#[derive(Clone, Debug)]
pub struct NetDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub enc_widths: [usize; 4],
    pub d_enc: usize,
    pub d_h: usize,
    pub horizons: Vec<usize>,
    pub n_agents: usize,
    pub self_weight: f64,
    pub rl_hidden: usize,
}

impl NetDims {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(NumericsError::Shape(format!(
                "grid {}x{} must be divisible by 16 (four stride-2 layers)",
                self.height, self.width
            )));
        }
        if !(0.0 < self.self_weight && self.self_weight < 1.0) {
            return Err(NumericsError::Shape(format!(
                "self weight {} must lie in (0,1)",
                self.self_weight
            )));
        }
        Ok(())
    }

    pub fn seed_hw(&self) -> (usize, usize) {
        (self.height / 16, self.width / 16)
    }
}

fn init_uniform(rng: &mut impl Rng, fan_in: usize, shape: Vec<usize>) -> Param {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Param::new(Tensor::from_parts(shape, data))
}

pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: init_uniform(rng, d_in, vec![d_out, d_in]),
            b: init_uniform(rng, d_in, vec![d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId, trainable: bool) -> Result<NodeId, NumericsError> {
        let w = bind(tape, &self.w, trainable);
        let b = bind(tape, &self.b, trainable);
        let y = tape.matvec(w, x)?;
        Ok(tape.add(y, b))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

fn bind(tape: &mut Tape, p: &Param, trainable: bool) -> NodeId {
    if trainable {
        tape.param(p)
    } else {
        tape.param_frozen(p)
    }
}

struct ConvLayer {
    k: Param,
    b: Param,
}

impl ConvLayer {
    fn new(rng: &mut impl Rng, c_in: usize, c_out: usize, ksize: usize) -> Self {
        ConvLayer {
            k: init_uniform(rng, c_in * ksize * ksize, vec![c_out, c_in, ksize, ksize]),
            b: init_uniform(rng, c_in * ksize * ksize, vec![c_out]),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        stride: usize,
        padding: usize,
        trainable: bool,
    ) -> Result<NodeId, NumericsError> {
        let k = bind(tape, &self.k, trainable);
        let b = bind(tape, &self.b, trainable);
        let y = tape.conv2d(x, k, stride, padding)?;
        tape.bias_channels(y, b)
    }
}

struct DeconvLayer {
    k: Param,
    b: Param,
}

impl DeconvLayer {
    fn new(rng: &mut impl Rng, c_in: usize, c_out: usize, ksize: usize) -> Self {
        DeconvLayer {
            k: init_uniform(rng, c_in * ksize * ksize, vec![c_in, c_out, ksize, ksize]),
            b: init_uniform(rng, c_in * ksize * ksize, vec![c_out]),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        stride: usize,
        padding: usize,
        trainable: bool,
    ) -> Result<NodeId, NumericsError> {
        let k = bind(tape, &self.k, trainable);
        let b = bind(tape, &self.b, trainable);
        let y = tape.conv_transpose2d(x, k, stride, padding)?;
        tape.bias_channels(y, b)
    }
}

/// Four stride-2 convolutions plus a flatten-to-vector linear map.
pub struct Encoder {
    dims: NetDims,
    convs: Vec<ConvLayer>,
    lin: Linear,
}

impl Encoder {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut c_in = dims.channels;
        for w in dims.enc_widths {
            convs.push(ConvLayer::new(rng, c_in, w, 3));
            c_in = w;
        }
        let (sh, sw) = dims.seed_hw();
        let flat = dims.enc_widths[3] * sh * sw;
        Encoder {
            dims: dims.clone(),
            convs,
            lin: Linear::new(rng, flat, dims.d_enc),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId, trainable: bool) -> Result<NodeId, NumericsError> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(tape, h, 2, 1, trainable)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let flat = tape.value(h).numel();
        let h = tape.reshape(h, vec![flat])?;
        let e = self.lin.forward(tape, h, trainable)?;
        // bounded encoding keeps the downstream GRU gates out of saturation
        Ok(tape.tanh_op(e))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.kernel"), c.k.clone()));
            out.push((format!("{prefix}.conv{i}.bias"), c.b.clone()));
        }
        self.lin.collect(&format!("{prefix}.lin"), out);
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }
}

/// Standard gated recurrent unit cell.
pub struct GruCell {
    pub w_z: Param,
    pub u_z: Param,
    pub b_z: Param,
    pub w_r: Param,
    pub u_r: Param,
    pub b_r: Param,
    pub w_h: Param,
    pub u_h: Param,
    pub b_h: Param,
}

impl GruCell {
    pub fn new(d_h: usize, d_x: usize, rng: &mut impl Rng) -> Self {
        GruCell {
            w_z: init_uniform(rng, d_x, vec![d_h, d_x]),
            u_z: init_uniform(rng, d_h, vec![d_h, d_h]),
            // positive update-gate bias: the cell starts near pass-through so
            // fresh observations dominate early training
            b_z: Param::new(Tensor::full(&[d_h], 2.0)),
            w_r: init_uniform(rng, d_x, vec![d_h, d_x]),
            u_r: init_uniform(rng, d_h, vec![d_h, d_h]),
            b_r: init_uniform(rng, d_h, vec![d_h]),
            w_h: init_uniform(rng, d_x, vec![d_h, d_x]),
            u_h: init_uniform(rng, d_h, vec![d_h, d_h]),
            b_h: init_uniform(rng, d_h, vec![d_h]),
        }
    }

    /// z=sigmoid(Wz x+Uz h+bz), r=sigmoid(Wr x+Ur h+br),
    /// htilde=tanh(Wh x+Uh(r*h)+bh), h'=(1-z)*h+z*htilde.
    pub fn forward(
        &self,
        tape: &mut Tape,
        h: NodeId,
        x: NodeId,
        trainable: bool,
    ) -> Result<NodeId, NumericsError> {
        let gate = |tape: &mut Tape, w: &Param, u: &Param, b: &Param, hx: NodeId| {
            let w = bind(tape, w, trainable);
            let u = bind(tape, u, trainable);
            let b = bind(tape, b, trainable);
            let wx = tape.matvec(w, x)?;
            let uh = tape.matvec(u, hx)?;
            let s = tape.add(wx, uh);
            Ok::<NodeId, NumericsError>(tape.add(s, b))
        };
        let z_pre = gate(tape, &self.w_z, &self.u_z, &self.b_z, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, &self.w_r, &self.u_r, &self.b_r, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let c_pre = gate(tape, &self.w_h, &self.u_h, &self.b_h, rh)?;
        let c = tape.tanh_op(c_pre);
        // h' = h + z*(c - h)
        let diff = tape.sub(c, h);
        let zd = tape.mul(z, diff);
        Ok(tape.add(h, zd))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        let named: [(&str, &Param); 9] = [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ];
        for (n, p) in named {
            out.push((format!("{prefix}.{n}"), (*p).clone()));
        }
    }
}

/// Linear seed map plus four stride-2 transposed convolutions; sigmoid out.
pub struct Decoder {
    dims: NetDims,
    out_channels: usize,
    lin: Linear,
    deconvs: Vec<DeconvLayer>,
}

impl Decoder {
    pub fn new(dims: &NetDims, out_channels: usize, rng: &mut impl Rng) -> Self {
        let (sh, sw) = dims.seed_hw();
        let lin = Linear::new(rng, dims.d_h, dims.enc_widths[3] * sh * sw);
        let chain = [
            dims.enc_widths[3],
            dims.enc_widths[2],
            dims.enc_widths[1],
            dims.enc_widths[0],
            out_channels,
        ];
        let mut deconvs = Vec::with_capacity(4);
        for i in 0..4 {
            deconvs.push(DeconvLayer::new(rng, chain[i], chain[i + 1], 4));
        }
        Decoder {
            dims: dims.clone(),
            out_channels,
            lin,
            deconvs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, h: NodeId, trainable: bool) -> Result<NodeId, NumericsError> {
        let (sh, sw) = self.dims.seed_hw();
        let seed = self.lin.forward(tape, h, trainable)?;
        let seed = tape.leaky_relu(seed, LEAKY_SLOPE);
        let mut y = tape.reshape(seed, vec![self.dims.enc_widths[3], sh, sw])?;
        for (i, d) in self.deconvs.iter().enumerate() {
            y = d.forward(tape, y, 2, 1, trainable)?;
            if i < 3 {
                y = tape.leaky_relu(y, LEAKY_SLOPE);
            }
        }
        debug_assert_eq!(
            tape.value(y).shape(),
            &[self.out_channels, self.dims.height, self.dims.width]
        );
        Ok(tape.sigmoid(y))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.lin.collect(&format!("{prefix}.lin"), out);
        for (i, d) in self.deconvs.iter().enumerate() {
            out.push((format!("{prefix}.deconv{i}.kernel"), d.k.clone()));
            out.push((format!("{prefix}.deconv{i}.bias"), d.b.clone()));
        }
    }
}

/// The system-identification network: Encoder, GRU and observation decoder.
pub struct SysNet {
    pub enc: Encoder,
    pub gru: GruCell,
    pub dec0: Decoder,
}

impl SysNet {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        SysNet {
            enc: Encoder::new(dims, rng),
            gru: GruCell::new(dims.d_h, dims.d_enc, rng),
            dec0: Decoder::new(dims, dims.channels, rng),
        }
    }

    /// h' = GRU(h, Enc(x)); xhat' = Decoder0(h'). Returns (h', xhat').
    pub fn advance(
        &self,
        tape: &mut Tape,
        h: NodeId,
        x: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, NodeId), NumericsError> {
        let e = self.enc.forward(tape, x, trainable)?;
        let h2 = self.gru.forward(tape, h, e, trainable)?;
        let xhat = self.dec0.forward(tape, h2, trainable)?;
        Ok((h2, xhat))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.enc.params(&format!("{prefix}.encoder"), out);
        self.gru.params(&format!("{prefix}.gru"), out);
        self.dec0.params(&format!("{prefix}.obs_decoder"), out);
    }
}

/// Fire-map prediction heads: one independent decoder per horizon.
pub struct PredNet {
    dims: NetDims,
    pub heads: Vec<Decoder>,
}

impl PredNet {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        let heads = (0..dims.horizons.len())
            .map(|_| Decoder::new(dims, 1, rng))
            .collect();
        PredNet {
            dims: dims.clone(),
            heads,
        }
    }

    /// Stacked per-horizon probability grids, shape [L,H,W].
    pub fn predict(&self, tape: &mut Tape, h: NodeId, trainable: bool) -> Result<NodeId, NumericsError> {
        let mut parts = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let y = head.forward(tape, h, trainable)?;
            let n = tape.value(y).numel();
            parts.push(tape.reshape(y, vec![n])?);
        }
        let flat = tape.concat(&parts);
        tape.reshape(
            flat,
            vec![self.heads.len(), self.dims.height, self.dims.width],
        )
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        for (i, h) in self.heads.iter().enumerate() {
            h.params(&format!("{prefix}.fire_decoder{i}"), out);
        }
    }
}

/// Two-layer policy net emitting NxN source-selection logits.
pub struct Actor {
    pub n: usize,
    pub self_weight: f64,
    l1: Linear,
    l2: Linear,
}

impl Actor {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        Actor {
            n: dims.n_agents,
            self_weight: dims.self_weight,
            l1: Linear::new(rng, dims.n_agents * dims.d_h, dims.rl_hidden),
            l2: Linear::new(rng, dims.rl_hidden, dims.n_agents * dims.n_agents),
        }
    }

    pub fn logits(&self, tape: &mut Tape, hbar: NodeId, trainable: bool) -> Result<NodeId, NumericsError> {
        let h = self.l1.forward(tape, hbar, trainable)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.l2.forward(tape, h, trainable)
    }

    /// Column-stochastic action matrix node with the diagonal pinned at the
    /// self weight `c` and (1-c) softmax-distributed over each column's
    /// off-diagonal slots. `noise` (pre-softmax, per logit) enables
    /// exploration; diagonal noise entries are ignored by construction.
    pub fn matrix_from_logits(
        &self,
        tape: &mut Tape,
        logits: NodeId,
        noise: Option<&Tensor>,
    ) -> Result<NodeId, NumericsError> {
        let n = self.n;
        let c = self.self_weight;
        let logits = match noise {
            Some(t) => {
                let nc = tape.constant(t.clone());
                tape.add(logits, nc)
            }
            None => logits,
        };
        if n == 1 {
            // single agent: the only source distribution is the identity
            return Ok(tape.constant(Tensor::from_parts(vec![1, 1], vec![1.0])));
        }
        let mut base = Tensor::zeros(&[n, n]);
        for i in 0..n {
            base.data_mut()[i * n + i] = c;
        }
        let mut all_indices = Vec::with_capacity(n * (n - 1));
        let mut cols = Vec::with_capacity(n);
        for col in 0..n {
            let idx: Vec<usize> = (0..n).filter(|i| *i != col).map(|i| i * n + col).collect();
            all_indices.extend_from_slice(&idx);
            let g = tape.gather(logits, idx);
            let sm = tape.softmax_vec(g);
            cols.push(tape.scale(sm, 1.0 - c));
        }
        let vals = tape.concat(&cols);
        Ok(tape.scatter(base, all_indices, vals))
    }

    /// Convenience forward: hbar tensor in, concrete [`ActionMatrix`] out.
    pub fn forward(&self, hbar: &Tensor, noise: Option<&Tensor>) -> Result<ActionMatrix, NumericsError> {
        let mut tape = Tape::new();
        let h = tape.constant(hbar.clone());
        let logits = self.logits(&mut tape, h, false)?;
        let m = self.matrix_from_logits(&mut tape, logits, noise)?;
        ActionMatrix::from_tensor(tape.value(m), self.self_weight)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.l1.collect(&format!("{prefix}.l1"), out);
        self.l2.collect(&format!("{prefix}.l2"), out);
    }

    pub fn copy_values_from(&self, other: &Actor) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.params("t", &mut a);
        other.params("t", &mut b);
        for ((_, pa), (_, pb)) in a.iter().zip(&b) {
            pa.set_value(pb.value());
        }
    }
}

/// Two-layer action-value net: q(hbar, a) -> scalar.
pub struct Critic {
    l1: Linear,
    l2: Linear,
}

impl Critic {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        let d_in = dims.n_agents * dims.d_h + dims.n_agents * dims.n_agents;
        Critic {
            l1: Linear::new(rng, d_in, dims.rl_hidden),
            l2: Linear::new(rng, dims.rl_hidden, 1),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        hbar: NodeId,
        action: NodeId,
        trainable: bool,
    ) -> Result<NodeId, NumericsError> {
        let an = tape.value(action).numel();
        let a_flat = tape.reshape(action, vec![an])?;
        let x = tape.concat(&[hbar, a_flat]);
        let h = self.l1.forward(tape, x, trainable)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let y = self.l2.forward(tape, h, trainable)?;
        Ok(y)
    }

    pub fn value(&self, hbar: &Tensor, action: &ActionMatrix) -> f64 {
        let mut tape = Tape::new();
        let h = tape.constant(hbar.clone());
        let a = tape.constant(action.to_tensor());
        let q = self
            .forward(&mut tape, h, a, false)
            .expect("critic dims fixed at construction");
        tape.value(q).data()[0]
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.l1.collect(&format!("{prefix}.l1"), out);
        self.l2.collect(&format!("{prefix}.l2"), out);
    }

    pub fn copy_values_from(&self, other: &Critic) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.params("t", &mut a);
        other.params("t", &mut b);
        for ((_, pa), (_, pb)) in a.iter().zip(&b) {
            pa.set_value(pb.value());
        }
    }
}

/// Closed-form parameter count for one agent's sys+pred networks.
pub fn agent_param_count(dims: &NetDims) -> usize {
    let (sh, sw) = dims.seed_hw();
    let seed = dims.enc_widths[3] * sh * sw;
    let conv_chain = [
        dims.channels,
        dims.enc_widths[0],
        dims.enc_widths[1],
        dims.enc_widths[2],
        dims.enc_widths[3],
    ];
    let mut n = 0;
    for i in 0..4 {
        n += conv_chain[i + 1] * conv_chain[i] * 9 + conv_chain[i + 1];
    }
    n += dims.d_enc * seed + dims.d_enc; // encoder linear
    n += 3 * (dims.d_h * dims.d_enc + dims.d_h * dims.d_h + dims.d_h); // gru
    let decoder = |out_c: usize| {
        let mut m = seed * dims.d_h + seed; // seed linear
        let chain = [
            dims.enc_widths[3],
            dims.enc_widths[2],
            dims.enc_widths[1],
            dims.enc_widths[0],
            out_c,
        ];
        for i in 0..4 {
            m += chain[i] * chain[i + 1] * 16 + chain[i + 1];
        }
        m
    };
    n += decoder(dims.channels); // obs decoder
    n += dims.horizons.len() * decoder(1); // fire heads
    n
}

/// Closed-form parameter count for the actor and critic pair.
pub fn rl_param_count(dims: &NetDims) -> usize {
    let d_state = dims.n_agents * dims.d_h;
    let d_action = dims.n_agents * dims.n_agents;
    let actor = dims.rl_hidden * d_state + dims.rl_hidden + d_action * dims.rl_hidden + d_action;
    let critic = dims.rl_hidden * (d_state + d_action) + dims.rl_hidden + dims.rl_hidden + 1;
    actor + critic
}

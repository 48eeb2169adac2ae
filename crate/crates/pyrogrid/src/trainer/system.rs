//! Agents, the optimizer tick, episode training, and evaluation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffers::{BufferError, TrajEntry, TrajectoryBuffer, Transition};
use crate::environment::{split, GridSeries};
use crate::exchange::{
    compute_reward, sample_sources, ActionMatrix, AgentRewardObs, ExchangeLayer, RewardSpec,
};
use crate::metrics::{auroc, bce, iou, MetricRow, MetricTable};
use crate::nets::{Linear, NetDims, PredNet, SysNet};
use crate::numerics::{
    adam_step, checkpoint, AdamHyper, NodeId, NumericsError, Param, Tape, Tensor,
};
use crate::trainer::{Mode, TrainConfig, TrainError, RATE_ACTOR, RATE_CRITIC};

fn agent_seed(base: u64, global_id: u64) -> u64 {
    (base ^ (global_id + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x243F_6A88_85A3_08D3)
}

fn exchange_seed(base: u64) -> u64 {
    base.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(0x79B9)
}

/// One learner: its nets, online hidden state, replay buffer, and RNG stream.
pub struct Agent {
    pub sys: SysNet,
    pub pred: PredNet,
    pub static_proj: Option<Linear>,
    pub hidden: Tensor,
    pub buffer: TrajectoryBuffer,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(dims: &NetDims, cfg: &TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = SysNet::new(dims, &mut rng);
        let pred = PredNet::new(dims, &mut rng);
        let static_proj = if cfg.static_only {
            Some(Linear::new(&mut rng, dims.d_enc, dims.d_h))
        } else {
            None
        };
        Agent {
            sys,
            pred,
            static_proj,
            hidden: Tensor::zeros(&[dims.d_h]),
            buffer: TrajectoryBuffer::new(cfg.traj_capacity),
            rng,
        }
    }

    /// (next hidden, one-step observation estimate), no gradients.
    pub fn advance(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let h = tape.constant(self.hidden.clone());
        let xn = tape.constant(x.clone());
        let (h2, xhat) = self
            .sys
            .advance(&mut tape, h, xn, false)
            .expect("agent dims fixed at construction");
        (tape.value(h2).clone(), tape.value(xhat).clone())
    }

    /// Static-model hidden state: a learned projection of the encoding.
    pub fn static_hidden(&self, x: &Tensor) -> Tensor {
        let proj = self.static_proj.as_ref().expect("static mode only");
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let e = self
            .sys
            .enc
            .forward(&mut tape, xn, false)
            .expect("agent dims fixed at construction");
        let h = proj.forward(&mut tape, e, false).expect("proj dims fixed");
        tape.value(h).clone()
    }

    /// Multi-horizon fire probabilities [L,H,W] from a hidden state.
    pub fn predict_probs(&self, hidden: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let h = tape.constant(hidden.clone());
        let p = self
            .pred
            .predict(&mut tape, h, false)
            .expect("agent dims fixed at construction");
        tape.value(p).clone()
    }

    /// One-step observation estimate [C,H,W] decoded from a hidden state.
    pub fn decode_obs(&self, hidden: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let h = tape.constant(hidden.clone());
        let x = self
            .sys
            .dec0
            .forward(&mut tape, h, false)
            .expect("agent dims fixed at construction");
        tape.value(x).clone()
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.sys.params(&format!("{prefix}.sys"), out);
        self.pred.params(&format!("{prefix}.pred"), out);
        if let Some(p) = &self.static_proj {
            p.collect(&format!("{prefix}.static_proj"), out);
        }
    }
}

/// Mean over windows of the MSE between each replayed window's observation
/// estimates and the true frames; the recursion restarts from each window's
/// stored initial hidden state.
pub fn sys_loss_node(
    tape: &mut Tape,
    sys: &SysNet,
    windows: &[Vec<TrajEntry>],
    trainable: bool,
    hidden_reg: f64,
) -> Result<NodeId, NumericsError> {
    let mut per_window = Vec::with_capacity(windows.len());
    let mut hiddens = Vec::new();
    for w in windows {
        assert!(w.len() >= 2, "sys loss needs windows of length >= 2");
        let mut h = tape.constant(w[0].hidden.clone());
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for k in 0..w.len() - 1 {
            let x = tape.constant(w[k].obs.clone());
            let (h2, xhat) = sys.advance(tape, h, x, trainable)?;
            h = h2;
            hiddens.push(h2);
            let n = tape.value(xhat).numel();
            preds.push(tape.reshape(xhat, vec![n])?);
            targets.extend_from_slice(w[k + 1].obs.data());
        }
        let cat = tape.concat(&preds);
        per_window.push(tape.mse_mean(cat, &Tensor::vector(targets))?);
    }
    let all = tape.concat(&per_window);
    let loss = tape.mean(all);
    Ok(add_hidden_reg(tape, loss, &hiddens, hidden_reg))
}

/// loss + reg * mean(h^2) over the listed hidden-state nodes.
fn add_hidden_reg(tape: &mut Tape, loss: NodeId, hiddens: &[NodeId], reg: f64) -> NodeId {
    if reg == 0.0 || hiddens.is_empty() {
        return loss;
    }
    let sq: Vec<NodeId> = hiddens.iter().map(|&h| tape.mul(h, h)).collect();
    let cat = tape.concat(&sq);
    let m = tape.mean(cat);
    let penalty = tape.scale(m, reg);
    tape.add(loss, penalty)
}

/// Report of one optimizer tick.
#[derive(Clone, Debug, Default)]
pub struct TickReport {
    pub updated: bool,
    /// Per agent (sys loss, pred loss); NaN when the update was skipped for
    /// lack of replay data.
    pub losses: Vec<(f64, f64)>,
    pub reward: Option<f64>,
    pub rl: Option<(f64, f64)>, // (critic loss, J)
}

pub struct EvalReport {
    pub table: MetricTable,
    /// Validation one-step observation MSE, when the model has a dynamic
    /// observation decoder in its training path.
    pub obs_mse: Option<f64>,
}

pub struct System {
    pub cfg: TrainConfig,
    pub dims: NetDims,
    pub agents: Vec<Agent>,
    pub exchange: Option<ExchangeLayer>,
    pub train_data: Vec<GridSeries>,
    pub val_data: Vec<GridSeries>,
    pub update_count: u64,
    total_updates: u64,
    pending: Option<(Tensor, ActionMatrix, f64)>,
    pub train_log: Vec<String>,
    pub exchange_log: Vec<String>,
}

impl System {
    pub fn new(cfg: TrainConfig, data: &[GridSeries]) -> Result<Self, TrainError> {
        cfg.validate()?;
        if data.len() != cfg.n_agents {
            return Err(TrainError::Config(format!(
                "{} series for {} agents",
                data.len(),
                cfg.n_agents
            )));
        }
        let dims = cfg.net_dims();
        let mut train_data = Vec::new();
        let mut val_data = Vec::new();
        for gs in data {
            let (t, c, h, w) = gs.dims();
            if c != cfg.channels || h != cfg.height || w != cfg.width {
                return Err(TrainError::Config(format!(
                    "series dims {c}x{h}x{w} do not match config {}x{}x{}",
                    cfg.channels, cfg.height, cfg.width
                )));
            }
            let _ = t;
            let (tr, va) = split(gs, cfg.train_weeks, cfg.val_weeks)?;
            train_data.push(tr);
            val_data.push(va);
        }
        let agents: Vec<Agent> = (0..cfg.n_agents)
            .map(|i| {
                Agent::new(
                    &dims,
                    &cfg,
                    agent_seed(cfg.seed, cfg.first_agent_id + i as u64),
                )
            })
            .collect();
        let exchange = if cfg.use_exchange && cfg.n_agents > 1 {
            Some(ExchangeLayer::new(
                &dims,
                RewardSpec {
                    kind: cfg.reward,
                    gamma: cfg.gamma,
                },
                cfg.tau,
                cfg.trans_capacity,
                cfg.sigma0,
                cfg.sigma_min,
                ChaCha8Rng::seed_from_u64(exchange_seed(cfg.seed)),
            ))
        } else {
            None
        };
        let total_updates =
            (cfg.episodes.max(1) * cfg.train_weeks / cfg.update_every).max(1) as u64;
        Ok(System {
            cfg,
            dims,
            agents,
            exchange,
            train_data,
            val_data,
            update_count: 0,
            total_updates,
            pending: None,
            train_log: Vec::new(),
            exchange_log: Vec::new(),
        })
    }

    pub fn begin_episode(&mut self) {
        for a in &mut self.agents {
            a.hidden = Tensor::zeros(&[self.dims.d_h]);
        }
        self.pending = None;
        if !self.cfg.persist_buffers {
            for a in &mut self.agents {
                a.buffer = TrajectoryBuffer::new(self.cfg.traj_capacity);
            }
        }
    }

    fn joint_hidden(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.cfg.n_agents * self.dims.d_h);
        for a in &self.agents {
            data.extend_from_slice(a.hidden.data());
        }
        Tensor::vector(data)
    }

    /// One data week: advance online states, store trajectory entries, and on
    /// update weeks run the full optimizer tick (exchange action, per-agent
    /// losses and steps, reward, RL updates).
    pub fn tick(&mut self, t: usize) -> Result<TickReport, TrainError> {
        let mode = self.cfg.mode();
        // (1) online state advance + trajectory storage
        for i in 0..self.cfg.n_agents {
            let x = self.train_data[i].frame(t);
            let hidden = self.agents[i].hidden.clone();
            self.agents[i].buffer.push(TrajEntry {
                week: t,
                obs: x.clone(),
                hidden,
            })?;
            self.agents[i].hidden = match mode {
                Mode::Static => self.agents[i].static_hidden(&x),
                _ => self.agents[i].advance(&x).0,
            };
        }
        if (t + 1) % self.cfg.update_every != 0 {
            return Ok(TickReport::default());
        }

        let n_up = self.update_count;
        let eps = self.cfg.schedule.eps_all(n_up);
        let hbar = self.joint_hidden();

        // (2)-(3) action with exploration noise, source assignment
        let mut sources: Vec<usize> = (0..self.cfg.n_agents).collect();
        let mut action = None;
        if let Some(ex) = &mut self.exchange {
            if let Some((h0, a0, r0)) = self.pending.take() {
                ex.buffer.push(Transition {
                    joint_hidden: h0,
                    action: a0,
                    next_joint_hidden: hbar.clone(),
                    reward: r0,
                })?;
            }
            let sigma = ex.noise_sigma(n_up, self.total_updates);
            let a = ex.act(&hbar, sigma)?;
            sources = sample_sources(&a, &mut ex.rng);
            action = Some(a);
        }

        // online multi-horizon predictions BEFORE this tick's updates, for
        // the reward; only when all horizon targets are inside the split.
        // The hidden state has consumed x_t, so horizon l targets week t+l.
        let horizon_max = self.cfg.horizon_max();
        let targets_available = t + horizon_max < self.cfg.train_weeks;
        let mut online_ious: Vec<Vec<f64>> = Vec::new();
        if action.is_some() && targets_available {
            for i in 0..self.cfg.n_agents {
                let preds = self.agents[i].predict_probs(&self.agents[i].hidden);
                let hw = self.cfg.height * self.cfg.width;
                let mut ious = Vec::with_capacity(self.cfg.horizons.len());
                for (li, l) in self.cfg.horizons.iter().enumerate() {
                    let target = self.train_data[i].fire_frame(t + l);
                    let p = &preds.data()[li * hw..(li + 1) * hw];
                    ious.push(iou(&target, p, 0.5)?);
                }
                online_ious.push(ious);
            }
        }

        // (4) per-agent system/prediction updates from assigned sources
        let mut losses = Vec::with_capacity(self.cfg.n_agents);
        for i in 0..self.cfg.n_agents {
            let s = sources[i];
            let mut rng = std::mem::replace(
                &mut self.agents[i].rng,
                ChaCha8Rng::seed_from_u64(0),
            );
            let sampled = self.agents[s].buffer.sample_windows(
                self.cfg.window_tw,
                self.cfg.batch_m,
                horizon_max,
                self.cfg.train_weeks,
                &mut rng,
            );
            self.agents[i].rng = rng;
            match sampled {
                Ok(windows) => {
                    let pair = update_agent(
                        &mut self.agents[i],
                        &self.cfg,
                        &self.train_data[s],
                        &windows,
                        eps,
                    )?;
                    losses.push(pair);
                }
                Err(BufferError::InsufficientData { .. }) => losses.push((f64::NAN, f64::NAN)),
                Err(e) => return Err(e.into()),
            }
        }

        // (5) reward and pending transition
        let mut reward = None;
        if let (Some(a), true) = (action, targets_available) {
            let spec = RewardSpec {
                kind: self.cfg.reward,
                gamma: self.cfg.gamma,
            };
            let obs: Vec<AgentRewardObs> = (0..self.cfg.n_agents)
                .map(|i| {
                    let (ls, lp) = losses[i];
                    AgentRewardObs {
                        horizon_ious: online_ious[i].clone(),
                        combined_loss: nan_to_zero(ls) + nan_to_zero(lp),
                    }
                })
                .collect();
            let r = compute_reward(&spec, &obs);
            self.pending = Some((hbar, a, r));
            reward = Some(r);
        }

        // (6)-(7) critic/actor updates and Polyak targets
        let mut rl = None;
        if let Some(ex) = &mut self.exchange {
            rl = ex.update(self.cfg.rl_batch, eps[RATE_CRITIC], eps[RATE_ACTOR])?;
            if let Some((cl, j)) = rl {
                for (dest, src) in sources.iter().enumerate() {
                    self.exchange_log.push(format!(
                        "{n_up},{dest},{src},{},{j},{cl}",
                        reward.map(|r| r.to_string()).unwrap_or_default()
                    ));
                }
            }
        }

        // (8) schedules advance
        self.update_count += 1;
        for (agent, (ls, lp)) in losses.iter().enumerate() {
            self.train_log.push(format!(
                "{n_up},{agent},train,{lp},,,{},{},{},{},{}",
                reward.map(|r| r.to_string()).unwrap_or_default(),
                eps[1],
                eps[0],
                eps[2],
                eps[3],
            ));
            let _ = ls;
        }
        Ok(TickReport {
            updated: true,
            losses,
            reward,
            rl,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            a.params(&format!("agent{i}"), &mut out);
        }
        if let Some(ex) = &self.exchange {
            ex.params("exchange", &mut out);
        }
        out
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::save_to_bytes(&self.named_params())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::fs::File::create(path)?;
        checkpoint::save(&mut f, &self.named_params())?;
        Ok(())
    }

    pub fn restore_checkpoint(&mut self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::fs::File::open(path)?;
        let loaded = checkpoint::load(&mut f)?;
        checkpoint::restore(&self.named_params(), &loaded)?;
        Ok(())
    }

    /// Online validation roll: warm the hidden state through the train split,
    /// then score multi-horizon predictions over the validation weeks without
    /// touching parameters or buffers.
    pub fn evaluate(&self, method: &str) -> Result<EvalReport, TrainError> {
        let mode = self.cfg.mode();
        let hw = self.cfg.height * self.cfg.width;
        let mut table = MetricTable::default();
        let mut mse_sum = 0.0;
        let mut mse_count = 0usize;
        for i in 0..self.cfg.n_agents {
            let agent = &self.agents[i];
            let mut h = Tensor::zeros(&[self.dims.d_h]);
            if mode != Mode::Static {
                for t in 0..self.cfg.train_weeks {
                    let x = self.train_data[i].frame(t);
                    h = roll(agent, &h, &x);
                }
            }
            let nl = self.cfg.horizons.len();
            let mut scores: Vec<Vec<f64>> = vec![Vec::new(); nl];
            let mut labels: Vec<Vec<f64>> = vec![Vec::new(); nl];
            for v in 0..self.cfg.val_weeks {
                let x = self.val_data[i].frame(v);
                // one-step reconstruction of x_v from the state before x_v
                if mode == Mode::Proposed || mode == Mode::GruOnly {
                    let xhat = agent.decode_obs(&h);
                    for (a, b) in xhat.data().iter().zip(x.data()) {
                        mse_sum += (a - b) * (a - b);
                    }
                    mse_count += xhat.numel();
                }
                let state = match mode {
                    Mode::Static => agent.static_hidden(&x),
                    _ => {
                        h = roll(agent, &h, &x);
                        h.clone()
                    }
                };
                let preds = agent.predict_probs(&state);
                for (li, l) in self.cfg.horizons.iter().enumerate() {
                    if v + l >= self.cfg.val_weeks {
                        continue;
                    }
                    scores[li].extend_from_slice(&preds.data()[li * hw..(li + 1) * hw]);
                    labels[li].extend_from_slice(&self.val_data[i].fire_frame(v + l));
                }
            }
            for (li, l) in self.cfg.horizons.iter().enumerate() {
                let (roc, _) = auroc(&labels[li], &scores[li])?;
                table.push(MetricRow {
                    method: method.to_string(),
                    agent: i,
                    horizon: *l,
                    bce: bce(&labels[li], &scores[li])?,
                    auroc: roc,
                    iou: iou(&labels[li], &scores[li], 0.5)?,
                });
            }
        }
        let obs_mse = if mse_count > 0 {
            Some(mse_sum / mse_count as f64)
        } else {
            None
        };
        Ok(EvalReport { table, obs_mse })
    }

    /// Emit the one-step fire-channel reconstruction of `week` (from data
    /// before it) plus the horizon maps predicted after consuming `week`'s
    /// observation, each flattened H*W. Weeks after `week` are never read.
    pub fn predict_maps(
        &self,
        agent: usize,
        data: &GridSeries,
        week: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>), TrainError> {
        let mode = self.cfg.mode();
        let hw = self.cfg.height * self.cfg.width;
        let a = &self.agents[agent];
        let mut h = Tensor::zeros(&[self.dims.d_h]);
        if mode != Mode::Static {
            for t in 0..week {
                h = roll(a, &h, &data.frame(t));
            }
        }
        let recon = a.decode_obs(&h).data()[..hw].to_vec();
        let x = data.frame(week);
        let state = match mode {
            Mode::Static => a.static_hidden(&x),
            _ => roll(a, &h, &x),
        };
        let preds = a.predict_probs(&state);
        let horizons = (0..self.cfg.horizons.len())
            .map(|li| preds.data()[li * hw..(li + 1) * hw].to_vec())
            .collect();
        Ok((recon, horizons))
    }
}

fn roll(agent: &Agent, h: &Tensor, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let hn = tape.constant(h.clone());
    let xn = tape.constant(x.clone());
    let e = agent
        .sys
        .enc
        .forward(&mut tape, xn, false)
        .expect("fixed dims");
    let h2 = agent
        .sys
        .gru
        .forward(&mut tape, hn, e, false)
        .expect("fixed dims");
    tape.value(h2).clone()
}

fn nan_to_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Flattened horizon targets for the last `positions` entries of a window,
/// ordered (position, horizon, pixel) to match the prediction layout.
fn window_targets(
    cfg: &TrainConfig,
    source: &GridSeries,
    window: &[TrajEntry],
) -> Vec<f64> {
    let k = cfg.pred_positions.min(window.len());
    let mut out = Vec::new();
    for e in &window[window.len() - k..] {
        for l in &cfg.horizons {
            out.extend_from_slice(&source.fire_frame(e.week + l));
        }
    }
    out
}

/// One Adam update of an agent from a batch of windows drawn from `source`'s
/// data; returns the pre-step (sys loss, pred loss) values.
fn update_agent(
    agent: &mut Agent,
    cfg: &TrainConfig,
    source_data: &GridSeries,
    windows: &[Vec<TrajEntry>],
    eps: [f64; 4],
) -> Result<(f64, f64), TrainError> {
    let hyper = AdamHyper::default();
    let k = cfg.pred_positions;
    match cfg.mode() {
        Mode::Proposed => {
            // one tape: sys-id MSE through the replayed recursion plus the
            // prediction BCE at the last k positions; both gradients reach
            // the dynamics, stepped at their own rates
            let mut tape = Tape::new();
            let mut obs_preds = Vec::new();
            let mut obs_targets = Vec::new();
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            let mut hiddens = Vec::new();
            for w in windows {
                let burn = w.len() - k.min(w.len());
                let mut h = tape.constant(w[0].hidden.clone());
                for (idx, e) in w.iter().enumerate() {
                    let x = tape.constant(e.obs.clone());
                    let (h2, xhat) = agent.sys.advance(&mut tape, h, x, true)?;
                    h = h2;
                    hiddens.push(h2);
                    if idx + 1 < w.len() {
                        let n = tape.value(xhat).numel();
                        obs_preds.push(tape.reshape(xhat, vec![n])?);
                        obs_targets.extend_from_slice(w[idx + 1].obs.data());
                    }
                    if idx >= burn {
                        let p = agent.pred.predict(&mut tape, h, true)?;
                        let n = tape.value(p).numel();
                        preds.push(tape.reshape(p, vec![n])?);
                    }
                }
                targets.extend_from_slice(&window_targets(cfg, source_data, w));
            }
            let ocat = tape.concat(&obs_preds);
            let sys_loss = tape.mse_mean(ocat, &Tensor::vector(obs_targets))?;
            let cat = tape.concat(&preds);
            let pred_loss = tape.bce_mean(cat, &Tensor::vector(targets))?;
            let l_sys = tape.value(sys_loss).item();
            let l_pred = tape.value(pred_loss).item();
            let total = tape.add(sys_loss, pred_loss);
            let total = add_hidden_reg(&mut tape, total, &hiddens, cfg.hidden_reg);
            tape.backward(total)?;
            let mut params = Vec::new();
            agent.sys.params("sys", &mut params);
            for (_, p) in &params {
                adam_step(p, eps[crate::trainer::RATE_SYS], hyper);
            }
            let mut params = Vec::new();
            agent.pred.params("pred", &mut params);
            for (_, p) in &params {
                adam_step(p, eps[crate::trainer::RATE_PRED], hyper);
            }
            Ok((l_sys, l_pred))
        }
        Mode::GruOnly => {
            // single tape: prediction BCE flows through the replayed dynamics
            let mut tape = Tape::new();
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            let mut hiddens = Vec::new();
            for w in windows {
                // burn-in: refresh the stored state through the early window
                // entries without gradient, then step on-tape for the
                // predicted positions
                let burn = w.len() - k.min(w.len());
                let mut h_val = w[0].hidden.clone();
                for e in &w[..burn] {
                    h_val = roll(agent, &h_val, &e.obs);
                }
                let mut h = tape.constant(h_val);
                for e in &w[burn..] {
                    let x = tape.constant(e.obs.clone());
                    let en = agent.sys.enc.forward(&mut tape, x, true)?;
                    h = agent.sys.gru.forward(&mut tape, h, en, true)?;
                    hiddens.push(h);
                    let p = agent.pred.predict(&mut tape, h, true)?;
                    let n = tape.value(p).numel();
                    preds.push(tape.reshape(p, vec![n])?);
                }
                targets.extend_from_slice(&window_targets(cfg, source_data, w));
            }
            let cat = tape.concat(&preds);
            let loss = tape.bce_mean(cat, &Tensor::vector(targets))?;
            let loss = add_hidden_reg(&mut tape, loss, &hiddens, cfg.hidden_reg);
            let l_pred = tape.value(loss).item();
            tape.backward(loss)?;
            let mut sys_params = Vec::new();
            agent.sys.enc.params("enc", &mut sys_params);
            agent.sys.gru.params("gru", &mut sys_params);
            for (_, p) in &sys_params {
                adam_step(p, eps[crate::trainer::RATE_SYS], hyper);
            }
            let mut params = Vec::new();
            agent.pred.params("pred", &mut params);
            for (_, p) in &params {
                adam_step(p, eps[crate::trainer::RATE_PRED], hyper);
            }
            Ok((f64::NAN, l_pred))
        }
        Mode::Static => {
            let proj = agent.static_proj.as_ref().expect("static mode");
            let mut tape = Tape::new();
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            let mut hiddens = Vec::new();
            for w in windows {
                for e in &w[w.len() - k.min(w.len())..] {
                    let x = tape.constant(e.obs.clone());
                    let en = agent.sys.enc.forward(&mut tape, x, true)?;
                    let h = proj.forward(&mut tape, en, true)?;
                    hiddens.push(h);
                    let p = agent.pred.predict(&mut tape, h, true)?;
                    let n = tape.value(p).numel();
                    preds.push(tape.reshape(p, vec![n])?);
                }
                targets.extend_from_slice(&window_targets(cfg, source_data, w));
            }
            let cat = tape.concat(&preds);
            let loss = tape.bce_mean(cat, &Tensor::vector(targets))?;
            let loss = add_hidden_reg(&mut tape, loss, &hiddens, cfg.hidden_reg);
            let l_pred = tape.value(loss).item();
            tape.backward(loss)?;
            let mut sys_params = Vec::new();
            agent.sys.enc.params("enc", &mut sys_params);
            proj.collect("proj", &mut sys_params);
            for (_, p) in &sys_params {
                adam_step(p, eps[crate::trainer::RATE_SYS], hyper);
            }
            let mut params = Vec::new();
            agent.pred.params("pred", &mut params);
            for (_, p) in &params {
                adam_step(p, eps[crate::trainer::RATE_PRED], hyper);
            }
            Ok((f64::NAN, l_pred))
        }
    }
}

/// Run `cfg.episodes` passes over the training split, one optimizer tick per
/// data week. When `out` is given, writes the resolved config, per-episode
/// PGCK checkpoints, and CSV logs there.
pub fn train(
    cfg: &TrainConfig,
    data: &[GridSeries],
    out: Option<&Path>,
) -> Result<System, TrainError> {
    let mut sys = System::new(cfg.clone(), data)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("config.resolved.json"),
            serde_json::to_string_pretty(cfg).map_err(|e| TrainError::Config(e.to_string()))?,
        )?;
        sys.save_checkpoint(&dir.join("checkpoint_init.pgck"))?;
    }
    for ep in 0..cfg.episodes {
        sys.begin_episode();
        for t in 0..cfg.train_weeks {
            sys.tick(t)?;
        }
        if let Some(dir) = out {
            sys.save_checkpoint(&dir.join(format!("checkpoint_ep{ep:03}.pgck")))?;
        }
    }
    if let Some(dir) = out {
        let mut csv =
            String::from("tick,agent,split,bce,auroc,iou,reward,eps_sys,eps_pred,eps_critic,eps_actor\n");
        csv.push_str(&sys.train_log.join("\n"));
        csv.push('\n');
        std::fs::write(dir.join("train_log.csv"), csv)?;
        if sys.exchange.is_some() {
            let mut csv = String::from("tick,dest_agent,src_agent,reward,j,critic_loss\n");
            csv.push_str(&sys.exchange_log.join("\n"));
            csv.push('\n');
            std::fs::write(dir.join("exchange_log.csv"), csv)?;
        }
    }
    Ok(sys)
}

//! Sample-exchange reinforcement learning: the actor selects which agent's
//! buffer each agent trains from, the critic evaluates that policy, and
//! slow target copies stabilize both updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::buffers::{BufferError, Transition, TransitionBuffer};
use crate::nets::{Actor, Critic, NetDims};
use crate::numerics::{adam_step, AdamHyper, NumericsError, Param, Tape, Tensor};

/// Column-stochastic NxN source-selection distribution. Column `j` is the
/// source distribution for destination agent `j`; the diagonal is pinned to
/// the configured self weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionMatrix {
    n: usize,
    self_weight: f64,
    data: Vec<f64>, // row-major [source][dest]
}

#[derive(Debug, thiserror::Error)]
pub enum ExchangeError {
    #[error("action matrix invariant violated: {0}")]
    InvalidAction(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl ActionMatrix {
    pub fn from_tensor(t: &Tensor, self_weight: f64) -> Result<Self, NumericsError> {
        let s = t.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(NumericsError::Shape(format!(
                "action matrix must be square, got {s:?}"
            )));
        }
        let m = ActionMatrix {
            n: s[0],
            self_weight,
            data: t.data().to_vec(),
        };
        Ok(m)
    }

    /// Uniform off-diagonal mass (the zero-logit actor output).
    pub fn uniform(n: usize, self_weight: f64) -> Self {
        let mut data = vec![0.0; n * n];
        let off = if n > 1 {
            (1.0 - self_weight) / (n - 1) as f64
        } else {
            0.0
        };
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = if i == j {
                    if n == 1 {
                        1.0
                    } else {
                        self_weight
                    }
                } else {
                    off
                };
            }
        }
        ActionMatrix {
            n,
            self_weight,
            data,
        }
    }

    /// Identity matrix: every agent samples only its own buffer
    /// (exchange-disabled reduction).
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ActionMatrix {
            n,
            self_weight: 1.0,
            data,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, source: usize, dest: usize) -> f64 {
        self.data[source * self.n + dest]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n, self.n], self.data.clone())
    }

    pub fn validate(&self) -> Result<(), ExchangeError> {
        for j in 0..self.n {
            let mut col_sum = 0.0;
            for i in 0..self.n {
                let v = self.get(i, j);
                if v < 0.0 {
                    return Err(ExchangeError::InvalidAction(format!(
                        "negative entry {v} at ({i},{j})"
                    )));
                }
                col_sum += v;
            }
            if (col_sum - 1.0).abs() > 1e-9 {
                return Err(ExchangeError::InvalidAction(format!(
                    "column {j} sums to {col_sum}"
                )));
            }
            let diag = self.get(j, j);
            let want = if self.n == 1 { 1.0 } else { self.self_weight };
            if diag != want {
                return Err(ExchangeError::InvalidAction(format!(
                    "diagonal {diag} at {j} differs from pinned self weight {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-destination source draw: source[j] ~ Categorical(column j).
pub fn sample_sources(a: &ActionMatrix, rng: &mut impl Rng) -> Vec<usize> {
    let n = a.n();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = n - 1;
        for i in 0..n {
            acc += a.get(i, j);
            if u < acc {
                pick = i;
                break;
            }
        }
        out.push(pick);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    MeanIou,
    AdversarialMaxLoss,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub gamma: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            kind: RewardKind::MeanIou,
            gamma: 0.95,
        }
    }
}

/// What one agent contributes to the tick reward: its per-horizon IOUs of
/// the current online predictions, and its combined l_sys + l_pred loss.
#[derive(Clone, Debug)]
pub struct AgentRewardObs {
    pub horizon_ious: Vec<f64>,
    pub combined_loss: f64,
}

pub fn compute_reward(spec: &RewardSpec, agents: &[AgentRewardObs]) -> f64 {
    match spec.kind {
        RewardKind::MeanIou => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for a in agents {
                for v in &a.horizon_ious {
                    sum += v;
                    count += 1;
                }
            }
            sum / count.max(1) as f64
        }
        RewardKind::AdversarialMaxLoss => agents
            .iter()
            .map(|a| a.combined_loss)
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// target <- (1-tau)*target + tau*live, for every parameter pair.
pub fn polyak_update(targets: &[(String, Param)], live: &[(String, Param)], tau: f64) {
    assert_eq!(targets.len(), live.len());
    for ((_, t), (_, l)) in targets.iter().zip(live) {
        let lv = l.value();
        let mut td = t.borrow_mut();
        for (tv, lv) in td.value.data_mut().iter_mut().zip(lv.data()) {
            *tv = (1.0 - tau) * *tv + tau * *lv;
        }
    }
}

/// Zero-mean Gaussian pre-softmax logit noise with the diagonal masked out.
pub fn exploration_noise(n: usize, sigma: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(&[n * n]);
    if sigma == 0.0 {
        return t;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // Box-Muller keeps the generator portable across rand versions
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                t.data_mut()[i * n + j] = sigma * z;
            }
        }
    }
    t
}

/// One TD regression step on the live critic from a sampled batch.
/// Targets come from the slow copies: y = r + gamma * q_t(h', mu_t(h')).
pub fn critic_update(
    batch: &[Transition],
    critic: &Critic,
    actor_target: &Actor,
    critic_target: &Critic,
    gamma: f64,
    lr: f64,
) -> Result<f64, ExchangeError> {
    assert!(!batch.is_empty());
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let a_next = actor_target.forward(&t.next_joint_hidden, None)?;
        let q_next = critic_target.value(&t.next_joint_hidden, &a_next);
        targets.push(t.reward + gamma * q_next);
    }
    let mut tape = Tape::new();
    let mut qs = Vec::with_capacity(batch.len());
    for t in batch {
        let h = tape.constant(t.joint_hidden.clone());
        let a = tape.constant(t.action.to_tensor());
        qs.push(critic.forward(&mut tape, h, a, true)?);
    }
    let q_vec = tape.concat(&qs);
    let loss = tape.mse_mean(q_vec, &Tensor::vector(targets))?;
    let loss_val = tape.value(loss).item();
    tape.backward(loss)?;
    let mut params = Vec::new();
    critic.params("critic", &mut params);
    for (_, p) in &params {
        adam_step(p, lr, AdamHyper::default());
    }
    Ok(loss_val)
}

/// One ascent step on J = mean_m q(h_m, mu(h_m)); the critic is frozen and
/// only theta_actor moves.
pub fn actor_update(
    batch: &[Transition],
    actor: &Actor,
    critic: &Critic,
    lr: f64,
) -> Result<f64, ExchangeError> {
    assert!(!batch.is_empty());
    let mut tape = Tape::new();
    let mut qs = Vec::with_capacity(batch.len());
    for t in batch {
        let h = tape.constant(t.joint_hidden.clone());
        let logits = actor.logits(&mut tape, h, true)?;
        let a = actor.matrix_from_logits(&mut tape, logits, None)?;
        qs.push(critic.forward(&mut tape, h, a, false)?);
    }
    let q_vec = tape.concat(&qs);
    let j = tape.mean(q_vec);
    let j_val = tape.value(j).item();
    let neg_j = tape.scale(j, -1.0);
    tape.backward(neg_j)?;
    let mut params = Vec::new();
    actor.params("actor", &mut params);
    for (_, p) in &params {
        adam_step(p, lr, AdamHyper::default());
    }
    Ok(j_val)
}

/// The full RL layer owned by the trainer: live and target nets, the
/// transition buffer, and the exploration schedule.
pub struct ExchangeLayer {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_target: Actor,
    pub critic_target: Critic,
    pub buffer: TransitionBuffer,
    pub spec: RewardSpec,
    pub tau: f64,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub rng: ChaCha8Rng,
}

impl ExchangeLayer {
    pub fn new(
        dims: &NetDims,
        spec: RewardSpec,
        tau: f64,
        capacity: usize,
        sigma0: f64,
        sigma_min: f64,
        rng: ChaCha8Rng,
    ) -> Self {
        let mut rng = rng;
        let actor = Actor::new(dims, &mut rng);
        let critic = Critic::new(dims, &mut rng);
        let actor_target = Actor::new(dims, &mut rng);
        let critic_target = Critic::new(dims, &mut rng);
        actor_target.copy_values_from(&actor);
        critic_target.copy_values_from(&critic);
        ExchangeLayer {
            actor,
            critic,
            actor_target,
            critic_target,
            buffer: TransitionBuffer::new(capacity),
            spec,
            tau,
            sigma0,
            sigma_min,
            rng,
        }
    }

    /// Linear decay of the exploration scale over the run.
    pub fn noise_sigma(&self, tick: u64, total_ticks: u64) -> f64 {
        if total_ticks == 0 {
            return self.sigma_min;
        }
        let frac = (tick as f64 / total_ticks as f64).min(1.0);
        self.sigma0 + (self.sigma_min - self.sigma0) * frac
    }

    /// Act with exploration noise on the off-diagonal logits.
    pub fn act(&mut self, hbar: &Tensor, sigma: f64) -> Result<ActionMatrix, ExchangeError> {
        let noise = exploration_noise(self.actor.n, sigma, &mut self.rng);
        let m = self.actor.forward(hbar, Some(&noise))?;
        m.validate()?;
        Ok(m)
    }

    /// Critic step then actor step then Polyak targets. Returns
    /// (critic loss, J) when the buffer had enough data.
    pub fn update(
        &mut self,
        batch_size: usize,
        eps_critic: f64,
        eps_actor: f64,
    ) -> Result<Option<(f64, f64)>, ExchangeError> {
        if self.buffer.len() < batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(batch_size, &mut self.rng)?;
        let critic_loss = critic_update(
            &batch,
            &self.critic,
            &self.actor_target,
            &self.critic_target,
            self.spec.gamma,
            eps_critic,
        )?;
        let j = actor_update(&batch, &self.actor, &self.critic, eps_actor)?;
        let mut live = Vec::new();
        self.actor.params("actor", &mut live);
        self.critic.params("critic", &mut live);
        let mut tgt = Vec::new();
        self.actor_target.params("actor", &mut tgt);
        self.critic_target.params("critic", &mut tgt);
        polyak_update(&tgt, &live, self.tau);
        Ok(Some((critic_loss, j)))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Param)>) {
        self.actor.params(&format!("{prefix}.actor"), out);
        self.critic.params(&format!("{prefix}.critic"), out);
        self.actor_target.params(&format!("{prefix}.actor_target"), out);
        self.critic_target.params(&format!("{prefix}.critic_target"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dims(n: usize) -> NetDims {
        NetDims {
            channels: 3,
            height: 16,
            width: 16,
            enc_widths: [2, 4, 4, 8],
            d_enc: 8,
            d_h: 4,
            horizons: vec![1, 2, 3, 4],
            n_agents: n,
            self_weight: 0.8,
            rl_hidden: 16,
        }
    }

    #[test]
    fn sample_sources_single_agent() {
        let a = ActionMatrix::identity(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_sources(&a, &mut rng), vec![0]);
    }

    #[test]
    fn sample_sources_one_hot_column() {
        let mut t = Tensor::zeros(&[3, 3]);
        // column 0 fully on source 2, others identity-ish
        t.data_mut()[2 * 3] = 1.0;
        t.data_mut()[1 * 3 + 1] = 1.0;
        t.data_mut()[2 * 3 + 2] = 1.0;
        let a = ActionMatrix::from_tensor(&t, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = sample_sources(&a, &mut rng);
            assert_eq!(s[0], 2);
            assert_eq!(s[1], 1);
            assert_eq!(s[2], 2);
        }
    }

    #[test]
    fn self_selection_rate_matches_pinned_weight() {
        let a = ActionMatrix::uniform(3, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut selfpicks = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let s = sample_sources(&a, &mut rng);
            for (dest, src) in s.iter().enumerate() {
                if *src == dest {
                    selfpicks += 1;
                }
            }
        }
        let rate = selfpicks as f64 / (3 * n) as f64;
        assert!((rate - 0.8).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn reward_mean_iou_and_adversarial() {
        let agents = vec![
            AgentRewardObs {
                horizon_ious: vec![1.0, 0.0],
                combined_loss: 3.0,
            },
            AgentRewardObs {
                horizon_ious: vec![0.5, 0.5],
                combined_loss: 5.0,
            },
        ];
        let spec_iou = RewardSpec {
            kind: RewardKind::MeanIou,
            gamma: 0.95,
        };
        assert!((compute_reward(&spec_iou, &agents) - 0.5).abs() < 1e-12);
        let spec_adv = RewardSpec {
            kind: RewardKind::AdversarialMaxLoss,
            gamma: 0.95,
        };
        assert_eq!(compute_reward(&spec_adv, &agents), 5.0);
        let perfect = vec![AgentRewardObs {
            horizon_ious: vec![1.0; 4],
            combined_loss: 0.0,
        }];
        assert_eq!(compute_reward(&spec_iou, &perfect), 1.0);
    }

    #[test]
    fn polyak_endpoints() {
        let t = vec![("p".to_string(), Param::new(Tensor::vector(vec![0.0, 0.0])))];
        let l = vec![("p".to_string(), Param::new(Tensor::vector(vec![2.0, -4.0])))];
        polyak_update(&t, &l, 0.5);
        assert_eq!(t[0].1.value().data(), &[1.0, -2.0]);
        polyak_update(&t, &l, 1.0);
        assert_eq!(t[0].1.value().data(), l[0].1.value().data());
    }

    #[test]
    fn polyak_geometric_decay() {
        let t = vec![("p".to_string(), Param::new(Tensor::scalar(0.0)))];
        let l = vec![("p".to_string(), Param::new(Tensor::scalar(1.0)))];
        let tau = 0.005;
        // distance halves every ln(2)/tau ~ 139 steps
        for _ in 0..139 {
            polyak_update(&t, &l, tau);
        }
        let dist = 1.0 - t[0].1.value().item();
        assert!((dist - 0.5).abs() < 0.01, "dist {dist}");
    }

    #[test]
    fn noise_zero_sigma_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = exploration_noise(3, 0.0, &mut rng);
        assert!(t.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_mean_near_zero_and_diag_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n_draws = 10_000;
        let sigma = 0.5;
        let mut sum = 0.0;
        let mut count = 0.0;
        for _ in 0..n_draws {
            let t = exploration_noise(3, sigma, &mut rng);
            for i in 0..3 {
                assert_eq!(t.data()[i * 3 + i], 0.0);
            }
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        sum += t.data()[i * 3 + j];
                        count += 1.0;
                    }
                }
            }
        }
        let mean = sum / count;
        assert!(mean.abs() < 3.0 * sigma / count.sqrt() * 1.5, "mean {mean}");
    }

    #[test]
    fn noisy_matrix_keeps_invariants() {
        let d = dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = Actor::new(&d, &mut rng);
        for _ in 0..50 {
            let noise = exploration_noise(3, 1.5, &mut rng);
            let m = actor
                .forward(&Tensor::full(&[3 * d.d_h], 0.1), Some(&noise))
                .unwrap();
            m.validate().unwrap();
        }
    }

    fn state(n: usize, which: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n * 4]);
        t.data_mut()[which] = 1.0;
        t
    }

    #[test]
    fn critic_gamma_zero_regresses_on_reward() {
        let d = dims(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let critic = Critic::new(&d, &mut rng);
        let actor_t = Actor::new(&d, &mut rng);
        let critic_t = Critic::new(&d, &mut rng);
        let a = ActionMatrix::uniform(2, 0.8);
        let batch: Vec<Transition> = (0..2)
            .map(|i| Transition {
                joint_hidden: state(2, i),
                action: a.clone(),
                next_joint_hidden: state(2, 1 - i),
                reward: if i == 0 { 2.0 } else { -1.0 },
            })
            .collect();
        for _ in 0..2000 {
            critic_update(&batch, &critic, &actor_t, &critic_t, 0.0, 1e-2).unwrap();
        }
        let q0 = critic.value(&batch[0].joint_hidden, &a);
        let q1 = critic.value(&batch[1].joint_hidden, &a);
        assert!((q0 - 2.0).abs() < 0.05 * 2.0, "q0 {q0}");
        assert!((q1 + 1.0).abs() < 0.05, "q1 {q1}");
    }

    #[test]
    fn critic_interpolates_single_transition() {
        let d = dims(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let critic = Critic::new(&d, &mut rng);
        let actor_t = Actor::new(&d, &mut rng);
        let critic_t = Critic::new(&d, &mut rng);
        let a = ActionMatrix::uniform(2, 0.8);
        let batch = vec![Transition {
            joint_hidden: state(2, 0),
            action: a.clone(),
            next_joint_hidden: state(2, 1),
            reward: 0.7,
        }];
        let mut last = f64::INFINITY;
        for _ in 0..3000 {
            last = critic_update(&batch, &critic, &actor_t, &critic_t, 0.0, 1e-2).unwrap();
        }
        assert!(last < 1e-4, "loss {last}");
    }

    #[test]
    fn critic_reaches_bellman_fixed_point_on_toy_chain() {
        // s0 -> s1 with reward 1, s1 absorbing with reward 0, gamma = 0.5:
        // q(s0) = 1 + 0.5*0 = 1, q(s1) = 0.
        let d = dims(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let critic = Critic::new(&d, &mut rng);
        let actor_t = Actor::new(&d, &mut rng);
        // zeroed frozen policy: mu_target is the uniform matrix everywhere
        let mut named = Vec::new();
        actor_t.params("a", &mut named);
        for (_, p) in &named {
            p.set_value(Tensor::zeros_like(&p.value()));
        }
        let critic_t = Critic::new(&d, &mut rng);
        critic_t.copy_values_from(&critic);
        let a = ActionMatrix::uniform(2, 0.8);
        let batch = vec![
            Transition {
                joint_hidden: state(2, 0),
                action: a.clone(),
                next_joint_hidden: state(2, 1),
                reward: 1.0,
            },
            Transition {
                joint_hidden: state(2, 1),
                action: a.clone(),
                next_joint_hidden: state(2, 1),
                reward: 0.0,
            },
        ];
        let mut live = Vec::new();
        critic.params("c", &mut live);
        let mut tgt = Vec::new();
        critic_t.params("c", &mut tgt);
        for _ in 0..4000 {
            critic_update(&batch, &critic, &actor_t, &critic_t, 0.5, 5e-3).unwrap();
            polyak_update(&tgt, &live, 0.01);
        }
        let q0 = critic.value(&batch[0].joint_hidden, &a);
        let q1 = critic.value(&batch[1].joint_hidden, &a);
        assert!((q0 - 1.0).abs() < 0.05, "q0 {q0}");
        assert!(q1.abs() < 0.05, "q1 {q1}");
    }

    #[test]
    fn actor_moves_mass_toward_rewarded_source() {
        // critic fixed to reward mass on source-row 1: q = sum_j a[1][j]
        let d = dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actor = Actor::new(&d, &mut rng);
        let critic = Critic::new(&d, &mut rng);
        {
            let mut named = Vec::new();
            critic.params("c", &mut named);
            for (name, p) in &named {
                let mut v = Tensor::zeros_like(&p.value());
                if name == "c.l1.w" {
                    // row 0 of l1 picks out the action entries of source row 1
                    let d_state = 3 * d.d_h;
                    let cols = p.value().shape()[1];
                    for j in 0..3 {
                        v.data_mut()[d_state + 3 + j] = 1.0;
                        let _ = cols;
                    }
                } else if name == "c.l2.w" {
                    v.data_mut()[0] = 1.0;
                }
                p.set_value(v);
            }
        }
        let batch = vec![Transition {
            joint_hidden: state(3, 0),
            action: ActionMatrix::uniform(3, 0.8),
            next_joint_hidden: state(3, 1),
            reward: 0.0,
        }];
        for _ in 0..500 {
            actor_update(&batch, &actor, &critic, 1e-2).unwrap();
        }
        let m = actor.forward(&batch[0].joint_hidden, None).unwrap();
        for col in 0..3 {
            let target_row = 1;
            if col == target_row {
                continue; // diagonal pinned in this column
            }
            for row in 0..3 {
                if row != col && row != target_row {
                    assert!(
                        m.get(target_row, col) > m.get(row, col),
                        "column {col}: {} vs {}",
                        m.get(target_row, col),
                        m.get(row, col)
                    );
                }
            }
        }
    }

    #[test]
    fn zero_critic_leaves_actor_nearly_unchanged() {
        let d = dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let actor = Actor::new(&d, &mut rng);
        let critic = Critic::new(&d, &mut rng);
        let mut named = Vec::new();
        critic.params("c", &mut named);
        for (_, p) in &named {
            p.set_value(Tensor::zeros_like(&p.value()));
        }
        let mut before = Vec::new();
        actor.params("a", &mut before);
        let snapshot: Vec<Tensor> = before.iter().map(|(_, p)| p.value()).collect();
        let batch = vec![Transition {
            joint_hidden: state(3, 0),
            action: ActionMatrix::uniform(3, 0.8),
            next_joint_hidden: state(3, 1),
            reward: 0.0,
        }];
        actor_update(&batch, &actor, &critic, 1e-3).unwrap();
        for ((_, p), old) in before.iter().zip(&snapshot) {
            for (a, b) in p.value().data().iter().zip(old.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn actor_update_is_ascent_on_frozen_batch() {
        let d = dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut passes = 0;
        for trial in 0..20 {
            let actor = Actor::new(&d, &mut rng);
            let critic = Critic::new(&d, &mut rng);
            use rand::Rng as _;
            let batch = vec![Transition {
                joint_hidden: Tensor::vector(
                    (0..3 * d.d_h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ),
                action: ActionMatrix::uniform(3, 0.8),
                next_joint_hidden: state(3, 1),
                reward: 0.0,
            }];
            let j_fn = |actor: &Actor| {
                let m = actor.forward(&batch[0].joint_hidden, None).unwrap();
                critic.value(&batch[0].joint_hidden, &m)
            };
            let before = j_fn(&actor);
            actor_update(&batch, &actor, &critic, 1e-4).unwrap();
            let after = j_fn(&actor);
            if after >= before {
                passes += 1;
            }
            let _ = trial;
        }
        assert!(passes >= 18, "only {passes}/20 monotone");
    }

    #[test]
    fn updates_do_not_cross_parameter_sets() {
        let d = dims(2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let actor = Actor::new(&d, &mut rng);
        let critic = Critic::new(&d, &mut rng);
        let actor_t = Actor::new(&d, &mut rng);
        let critic_t = Critic::new(&d, &mut rng);
        let batch = vec![Transition {
            joint_hidden: state(2, 0),
            action: ActionMatrix::uniform(2, 0.8),
            next_joint_hidden: state(2, 1),
            reward: 1.0,
        }];
        let snap = |nets: &Actor| {
            let mut v = Vec::new();
            nets.params("a", &mut v);
            v.iter().map(|(_, p)| p.value()).collect::<Vec<_>>()
        };
        let actor_before = snap(&actor);
        critic_update(&batch, &critic, &actor_t, &critic_t, 0.5, 1e-2).unwrap();
        assert_eq!(snap(&actor), actor_before);

        let snap_c = |nets: &Critic| {
            let mut v = Vec::new();
            nets.params("c", &mut v);
            v.iter().map(|(_, p)| p.value()).collect::<Vec<_>>()
        };
        let critic_before = snap_c(&critic);
        actor_update(&batch, &actor, &critic, 1e-2).unwrap();
        assert_eq!(snap_c(&critic), critic_before);
    }
}

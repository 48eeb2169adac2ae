//! Loss assembly, multi-timescale schedules, training orchestration, and the
//! baseline ladder.

mod logistic;
mod system;

pub use logistic::LogisticBaseline;
pub use system::{sys_loss_node, train, Agent, EvalReport, System, TickReport};

use crate::buffers::BufferError;
use crate::environment::EnvError;
use crate::exchange::{ExchangeError, RewardKind};
use crate::metrics::MetricsError;
use crate::numerics::{CheckpointError, NumericsError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const RATE_PRED: usize = 0;
pub const RATE_SYS: usize = 1;
pub const RATE_CRITIC: usize = 2;
pub const RATE_ACTOR: usize = 3;

/// Four diminishing step-size rules eps_n = eps0 * (1+n)^(-p), fastest for
/// the predictor and slowest for the actor.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StepSchedule {
    /// Base rates for (pred, sys, critic, actor).
    pub base: [f64; 4],
    /// Decay exponents, strictly increasing across the same roles.
    pub exps: [f64; 4],
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            base: [1e-3, 5e-4, 1e-4, 5e-5],
            exps: [0.1, 0.2, 0.3, 0.4],
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.base.iter().any(|b| *b <= 0.0) {
            return Err(TrainError::Config("step-size bases must be positive".into()));
        }
        for i in 0..3 {
            if self.base[i] < self.base[i + 1] {
                return Err(TrainError::Config(
                    "base rates must be non-increasing pred >= sys >= critic >= actor".into(),
                ));
            }
            if self.exps[i] >= self.exps[i + 1] {
                return Err(TrainError::Config(
                    "decay exponents must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn eps(&self, role: usize, n: u64) -> f64 {
        self.base[role] * (1.0 + n as f64).powf(-self.exps[role])
    }

    pub fn eps_all(&self, n: u64) -> [f64; 4] {
        [
            self.eps(RATE_PRED, n),
            self.eps(RATE_SYS, n),
            self.eps(RATE_CRITIC, n),
            self.eps(RATE_ACTOR, n),
        ]
    }
}

/// Which training path the ablation flags select.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// System-identification loss trains the dynamics; fire heads read the
    /// stored hidden states.
    Proposed,
    /// No sys-id loss: the dynamics train only through prediction gradients.
    GruOnly,
    /// No recurrence at all: hidden state is a learned projection of the
    /// current encoding.
    Static,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_agents: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub enc_widths: [usize; 4],
    pub d_enc: usize,
    pub d_h: usize,
    pub rl_hidden: usize,
    pub horizons: Vec<usize>,
    pub traj_capacity: usize,
    pub trans_capacity: usize,
    /// Trajectory windows per update (M).
    pub batch_m: usize,
    /// Window length (T_w).
    pub window_tw: usize,
    /// Window positions whose horizon predictions enter the loss (K),
    /// counted from the window's end.
    pub pred_positions: usize,
    /// Parameter updates fire once every this many data weeks.
    pub update_every: usize,
    /// L2 penalty on on-tape hidden states; keeps the recurrence out of
    /// tanh saturation, where gradients vanish and the state freezes.
    pub hidden_reg: f64,
    pub rl_batch: usize,
    pub episodes: usize,
    pub self_weight: f64,
    pub gamma: f64,
    pub tau: f64,
    pub schedule: StepSchedule,
    pub reward: RewardKind,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub seed: u64,
    /// Global id of agent 0; agent i derives its RNG stream from
    /// (seed, first_agent_id + i), so a single-agent run with
    /// first_agent_id = i reproduces agent i of a joint run exactly.
    pub first_agent_id: u64,
    pub train_weeks: usize,
    pub val_weeks: usize,
    pub use_sys_id: bool,
    pub use_exchange: bool,
    pub static_only: bool,
    pub persist_buffers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_agents: 3,
            channels: crate::environment::CHANNELS,
            height: 16,
            width: 16,
            enc_widths: [2, 2, 4, 4],
            d_enc: 8,
            d_h: 8,
            rl_hidden: 16,
            horizons: vec![1, 2, 3, 4],
            traj_capacity: 512,
            trans_capacity: 2048,
            batch_m: 1,
            window_tw: 4,
            pred_positions: 1,
            update_every: 2,
            hidden_reg: 0.02,
            rl_batch: 8,
            episodes: 50,
            self_weight: 0.8,
            gamma: 0.95,
            tau: 0.005,
            schedule: StepSchedule::default(),
            reward: RewardKind::MeanIou,
            sigma0: 0.4,
            sigma_min: 0.05,
            seed: 0,
            first_agent_id: 0,
            train_weeks: 260,
            val_weeks: 104,
            use_sys_id: true,
            use_exchange: true,
            static_only: false,
            persist_buffers: true,
        }
    }
}

impl TrainConfig {
    pub fn mode(&self) -> Mode {
        if self.static_only {
            Mode::Static
        } else if self.use_sys_id {
            Mode::Proposed
        } else {
            Mode::GruOnly
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.schedule.validate()?;
        if self.static_only && self.use_sys_id {
            return Err(TrainError::Config(
                "static_only excludes the recurrent sys-id path; disable use_sys_id".into(),
            ));
        }
        if self.n_agents == 0 {
            return Err(TrainError::Config("need at least one agent".into()));
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|p| p[0] >= p[1]) {
            return Err(TrainError::Config(
                "horizons must be non-empty and strictly increasing".into(),
            ));
        }
        if self.window_tw < 2 && !self.static_only {
            return Err(TrainError::Config("window_tw must be >= 2".into()));
        }
        if self.pred_positions == 0 || self.pred_positions > self.window_tw {
            return Err(TrainError::Config(
                "pred_positions must be in 1..=window_tw".into(),
            ));
        }
        if self.update_every == 0 || self.batch_m == 0 {
            return Err(TrainError::Config(
                "update_every and batch_m must be positive".into(),
            ));
        }
        if !(0.0 < self.self_weight && self.self_weight < 1.0) && self.n_agents > 1 {
            return Err(TrainError::Config("self_weight must be in (0,1)".into()));
        }
        if self.train_weeks < self.window_tw + self.horizons.last().unwrap() {
            return Err(TrainError::Config(
                "train split too short for one window plus horizons".into(),
            ));
        }
        self.net_dims().validate()?;
        Ok(())
    }

    pub fn net_dims(&self) -> crate::nets::NetDims {
        crate::nets::NetDims {
            channels: self.channels,
            height: self.height,
            width: self.width,
            enc_widths: self.enc_widths,
            d_enc: self.d_enc,
            d_h: self.d_h,
            horizons: self.horizons.clone(),
            n_agents: self.n_agents,
            self_weight: self.self_weight,
            rl_hidden: self.rl_hidden,
        }
    }

    pub fn horizon_max(&self) -> usize {
        *self.horizons.last().unwrap()
    }

    /// Label used in reports, derived from the ablation flags.
    pub fn method_label(&self) -> &'static str {
        match (self.mode(), self.use_exchange) {
            (Mode::Static, _) => "static",
            (Mode::GruOnly, _) => "gru",
            (Mode::Proposed, false) => "proposed_noexch",
            (Mode::Proposed, true) => "proposed",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ordering_holds_everywhere() {
        let s = StepSchedule::default();
        s.validate().unwrap();
        let mut n = 1u64;
        let mut last_ratio = f64::INFINITY;
        while n <= 1_000_000 {
            let e = s.eps_all(n);
            assert!(e[0] >= e[1] && e[1] >= e[2] && e[2] >= e[3], "at n={n}: {e:?}");
            let ratio = e[3] / e[0];
            assert!(ratio < last_ratio, "actor/pred ratio must shrink at n={n}");
            last_ratio = ratio;
            n *= 2;
        }
    }

    #[test]
    fn schedule_decay_matches_closed_form() {
        let s = StepSchedule::default();
        assert_eq!(s.eps(RATE_PRED, 0), 1e-3);
        let n = 99u64;
        let want = 1e-3 * 100f64.powf(-0.1);
        assert!((s.eps(RATE_PRED, n) - want).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_orderings() {
        let mut s = StepSchedule::default();
        s.exps = [0.4, 0.3, 0.2, 0.1];
        assert!(s.validate().is_err());
        let mut s = StepSchedule::default();
        s.base[3] = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_flag_consistency() {
        let mut cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode(), Mode::Proposed);
        cfg.static_only = true;
        assert!(cfg.validate().is_err());
        cfg.use_sys_id = false;
        cfg.validate().unwrap();
        assert_eq!(cfg.mode(), Mode::Static);
        cfg.static_only = false;
        assert_eq!(cfg.mode(), Mode::GruOnly);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.n_agents, cfg.n_agents);
        assert_eq!(back.schedule.base, cfg.schedule.base);
        // partial documents fill in defaults
        let sparse: TrainConfig = serde_json::from_str("{\"episodes\": 3}").unwrap();
        assert_eq!(sparse.episodes, 3);
        assert_eq!(sparse.train_weeks, 260);
    }
}

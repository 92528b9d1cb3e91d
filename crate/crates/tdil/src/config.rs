//! Flat key=value run configuration with `[section]` headers.
//!
//! Keys are globally unique; section headers are organizational only.
//! `TrainConfig::to_text` prints every key with its current value, and
//! `TrainConfig::parse` accepts any subset of keys over the defaults.

use std::path::PathBuf;

use crate::discriminator::{DiscBackendKind, DiscConfig};
use crate::rewards::{IrlMode, RewardConfig, TdilBackend};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {value:?} ({msg})")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
}

/// Which environment a run trains in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSelection {
    /// The shipped barrier map.
    GridShipped,
    /// A map file.
    GridMap(PathBuf),
    /// Highway chain of the given length.
    Chain(usize),
}

/// Which reward function drives the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardFn {
    /// Mixture `beta * R_irl + (1 - beta) * R_surrogate`.
    Agg,
    /// Geometric-distance baseline.
    L2,
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub env: EnvSelection,
    pub reward_fn: RewardFn,
    pub reward: RewardConfig,
    pub disc: DiscConfig,
    pub batch_positive: usize,
    pub batch_contrastive: usize,
    pub batch_reversed: usize,
    pub use_reversed: bool,
    /// Every n-th collected transition is reserved for discriminator
    /// evaluation instead of training.
    pub heldout_every: usize,
    pub gamma: f64,
    pub ent_temp: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub bc_weight: f64,
    /// Optimistic initial Q value; see the agent module.
    pub q_init: f64,
    pub gail_hidden: Vec<usize>,
    pub gail_lr: f64,
    pub gail_batch: usize,
    pub buffer_capacity: usize,
    pub total_env_steps: usize,
    pub updates_per_step: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub episode_cap: usize,
    pub agent_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvSelection::GridShipped,
            reward_fn: RewardFn::Agg,
            reward: RewardConfig::default(),
            disc: DiscConfig::default(),
            batch_positive: 32,
            batch_contrastive: 32,
            batch_reversed: 32,
            use_reversed: true,
            heldout_every: 20,
            gamma: 0.97,
            ent_temp: 1.0,
            lr_q: 0.25,
            lr_pi: 0.25,
            bc_weight: 5.0,
            q_init: 150.0,
            gail_hidden: vec![32, 32],
            gail_lr: 3e-3,
            gail_batch: 64,
            buffer_capacity: 100_000,
            total_env_steps: 30_000,
            updates_per_step: 1,
            eval_interval: 1_000,
            eval_episodes: 20,
            episode_cap: 50,
            agent_batch: 32,
            seed: 0,
        }
    }
}

fn fmt_list(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_flist(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    pub fn agent_config(&self) -> crate::agent::AgentConfig {
        crate::agent::AgentConfig {
            gamma: self.gamma,
            ent_temp: self.ent_temp,
            lr_q: self.lr_q,
            lr_pi: self.lr_pi,
            bc_weight: self.bc_weight,
            q_init: self.q_init,
        }
    }

    /// Canonical text form; `parse(to_text(c))` reproduces `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[env]\n");
        match &self.env {
            EnvSelection::GridShipped => {
                s.push_str("env = grid\nmap = shipped\n");
            }
            EnvSelection::GridMap(p) => {
                s.push_str(&format!("env = grid\nmap = {}\n", p.display()));
            }
            EnvSelection::Chain(n) => {
                s.push_str(&format!("env = chain\nchain_len = {n}\n"));
            }
        }
        s.push_str("\n[reward]\n");
        s.push_str(&format!(
            "reward_fn = {}\n",
            match self.reward_fn {
                RewardFn::Agg => "agg",
                RewardFn::L2 => "l2",
            }
        ));
        s.push_str(&format!("beta = {}\n", self.reward.beta));
        s.push_str(&format!(
            "irl_mode = {}\n",
            match self.reward.irl_mode {
                IrlMode::Indicator => "indicator",
                IrlMode::Learned => "learned",
            }
        ));
        s.push_str(&format!("l2_scale = {}\n", self.reward.l2_scale));
        match &self.reward.tdil_backend {
            TdilBackend::LearnedTarget => s.push_str("tdil_backend = learned_target\n"),
            TdilBackend::Oracle => s.push_str("tdil_backend = oracle\n"),
            TdilBackend::OracleMultistep { weights } => {
                s.push_str("tdil_backend = oracle_multistep\n");
                s.push_str(&format!("multistep_weights = {}\n", fmt_flist(weights)));
            }
        }
        s.push_str(&format!(
            "normalize_by_demo = {}\n",
            self.reward.normalize_by_demo
        ));
        s.push_str("\n[discriminator]\n");
        s.push_str(&format!(
            "disc_backend = {}\n",
            match self.disc.backend {
                DiscBackendKind::Learned => "learned",
                DiscBackendKind::Tabular => "tabular",
            }
        ));
        s.push_str(&format!("alpha = {}\n", self.disc.alpha));
        s.push_str(&format!("lambda = {}\n", self.disc.lambda));
        s.push_str(&format!("disc_hidden = {}\n", fmt_list(&self.disc.hidden)));
        s.push_str(&format!("disc_lr = {}\n", self.disc.learning_rate));
        s.push_str(&format!("batch_positive = {}\n", self.batch_positive));
        s.push_str(&format!("batch_contrastive = {}\n", self.batch_contrastive));
        s.push_str(&format!("batch_reversed = {}\n", self.batch_reversed));
        s.push_str(&format!("use_reversed = {}\n", self.use_reversed));
        s.push_str(&format!("heldout_every = {}\n", self.heldout_every));
        s.push_str("\n[agent]\n");
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("ent_temp = {}\n", self.ent_temp));
        s.push_str(&format!("lr_q = {}\n", self.lr_q));
        s.push_str(&format!("lr_pi = {}\n", self.lr_pi));
        s.push_str(&format!("bc_weight = {}\n", self.bc_weight));
        s.push_str(&format!("q_init = {}\n", self.q_init));
        s.push_str("\n[gail]\n");
        s.push_str(&format!("gail_hidden = {}\n", fmt_list(&self.gail_hidden)));
        s.push_str(&format!("gail_lr = {}\n", self.gail_lr));
        s.push_str(&format!("gail_batch = {}\n", self.gail_batch));
        s.push_str("\n[schedule]\n");
        s.push_str(&format!("buffer_capacity = {}\n", self.buffer_capacity));
        s.push_str(&format!("total_env_steps = {}\n", self.total_env_steps));
        s.push_str(&format!("updates_per_step = {}\n", self.updates_per_step));
        s.push_str(&format!("eval_interval = {}\n", self.eval_interval));
        s.push_str(&format!("eval_episodes = {}\n", self.eval_episodes));
        s.push_str(&format!("episode_cap = {}\n", self.episode_cap));
        s.push_str(&format!("agent_batch = {}\n", self.agent_batch));
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }

    /// Parses overrides onto the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        let mut env_kind: Option<String> = None;
        let mut map: Option<String> = None;
        let mut chain_len: usize = 10;
        let mut multistep_weights: Option<Vec<f64>> = None;
        let mut backend_name: Option<String> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        msg: "unterminated section header".to_string(),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: "expected key = value".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: &str| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                msg: msg.to_string(),
            };
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad("not a number"));
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad("not an integer"));
            let parse_bool = |v: &str| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad("expected true or false")),
            };
            let parse_list = |v: &str| -> Result<Vec<usize>, ConfigError> {
                v.split(',')
                    .map(|x| x.trim().parse::<usize>().map_err(|_| bad("bad list item")))
                    .collect()
            };
            match key {
                "env" => env_kind = Some(value.to_string()),
                "map" => map = Some(value.to_string()),
                "chain_len" => chain_len = parse_usize(value)?,
                "reward_fn" => {
                    cfg.reward_fn = match value {
                        "agg" => RewardFn::Agg,
                        "l2" => RewardFn::L2,
                        _ => return Err(bad("expected agg or l2")),
                    }
                }
                "beta" => {
                    cfg.reward.beta = parse_f64(value)?;
                    if !(0.0..=1.0).contains(&cfg.reward.beta) {
                        return Err(bad("beta must be in [0, 1]"));
                    }
                }
                "irl_mode" => {
                    cfg.reward.irl_mode = match value {
                        "indicator" => IrlMode::Indicator,
                        "learned" => IrlMode::Learned,
                        _ => return Err(bad("expected indicator or learned")),
                    }
                }
                "l2_scale" => {
                    cfg.reward.l2_scale = parse_f64(value)?;
                    if cfg.reward.l2_scale <= 0.0 {
                        return Err(bad("l2_scale must be positive"));
                    }
                }
                "tdil_backend" => backend_name = Some(value.to_string()),
                "multistep_weights" => {
                    let ws: Result<Vec<f64>, _> =
                        value.split(',').map(|x| parse_f64(x.trim())).collect();
                    let ws = ws?;
                    if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
                        return Err(bad("weights must be finite and nonnegative"));
                    }
                    multistep_weights = Some(ws);
                }
                "normalize_by_demo" => cfg.reward.normalize_by_demo = parse_bool(value)?,
                "disc_backend" => {
                    cfg.disc.backend = match value {
                        "learned" => DiscBackendKind::Learned,
                        "tabular" => DiscBackendKind::Tabular,
                        _ => return Err(bad("expected learned or tabular")),
                    }
                }
                "alpha" => {
                    cfg.disc.alpha = parse_f64(value)?;
                    if !(cfg.disc.alpha > 0.0 && cfg.disc.alpha < 1.0) {
                        return Err(bad("alpha must be in (0, 1)"));
                    }
                }
                "lambda" => {
                    cfg.disc.lambda = parse_f64(value)?;
                    if !(0.0..=1.0).contains(&cfg.disc.lambda) {
                        return Err(bad("lambda must be in [0, 1]"));
                    }
                }
                "disc_hidden" => cfg.disc.hidden = parse_list(value)?,
                "disc_lr" => cfg.disc.learning_rate = parse_f64(value)?,
                "batch_positive" => cfg.batch_positive = parse_usize(value)?,
                "batch_contrastive" => cfg.batch_contrastive = parse_usize(value)?,
                "batch_reversed" => cfg.batch_reversed = parse_usize(value)?,
                "use_reversed" => cfg.use_reversed = parse_bool(value)?,
                "heldout_every" => {
                    cfg.heldout_every = parse_usize(value)?;
                    if cfg.heldout_every < 2 {
                        return Err(bad("heldout_every must be at least 2"));
                    }
                }
                "gamma" => cfg.gamma = parse_f64(value)?,
                "ent_temp" => cfg.ent_temp = parse_f64(value)?,
                "lr_q" => cfg.lr_q = parse_f64(value)?,
                "lr_pi" => cfg.lr_pi = parse_f64(value)?,
                "bc_weight" => cfg.bc_weight = parse_f64(value)?,
                "q_init" => cfg.q_init = parse_f64(value)?,
                "gail_hidden" => cfg.gail_hidden = parse_list(value)?,
                "gail_lr" => cfg.gail_lr = parse_f64(value)?,
                "gail_batch" => cfg.gail_batch = parse_usize(value)?,
                "buffer_capacity" => cfg.buffer_capacity = parse_usize(value)?,
                "total_env_steps" => cfg.total_env_steps = parse_usize(value)?,
                "updates_per_step" => cfg.updates_per_step = parse_usize(value)?,
                "eval_interval" => cfg.eval_interval = parse_usize(value)?,
                "eval_episodes" => cfg.eval_episodes = parse_usize(value)?,
                "episode_cap" => cfg.episode_cap = parse_usize(value)?,
                "agent_batch" => cfg.agent_batch = parse_usize(value)?,
                "seed" => {
                    cfg.seed = value.parse::<u64>().map_err(|_| bad("not an integer"))?
                }
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }

        cfg.env = match env_kind.as_deref() {
            None | Some("grid") => match map.as_deref() {
                None | Some("shipped") => EnvSelection::GridShipped,
                Some(p) => EnvSelection::GridMap(PathBuf::from(p)),
            },
            Some("chain") => EnvSelection::Chain(chain_len),
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "env".to_string(),
                    value: other.to_string(),
                    msg: "expected grid or chain".to_string(),
                })
            }
        };
        if let Some(name) = backend_name {
            cfg.reward.tdil_backend = match name.as_str() {
                "learned_target" => TdilBackend::LearnedTarget,
                "oracle" => TdilBackend::Oracle,
                "oracle_multistep" => TdilBackend::OracleMultistep {
                    weights: multistep_weights.clone().unwrap_or_else(|| vec![1.0]),
                },
                other => {
                    return Err(ConfigError::BadValue {
                        key: "tdil_backend".to_string(),
                        value: other.to_string(),
                        msg: "expected learned_target, oracle or oracle_multistep".to_string(),
                    })
                }
            };
        }
        Ok(cfg)
    }
}

//! The training loop, evaluation protocol, checkpoint registry, and blind
//! model selection.
//!
//! Each iteration follows a fixed order: the agent acts and the transition
//! is stored; the discriminator takes one loss step and its target is
//! soft-updated; rewards for a fresh batch of agent and expert transitions
//! are computed with that just-updated target; the critic and actor are
//! updated on the rewarded batch; finally the behavior-cloning step runs.
//! Ground-truth rewards exist only inside evaluation records and never
//! reach any update.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{ActMode, AgentError, SoftQAgent};
use crate::config::{EnvSelection, RewardFn, TrainConfig};
use crate::discriminator::{
    evaluate_accuracy, AccuracyReport, DiscError, TransitionDiscriminator,
};
use crate::env::{
    chain_expert_route, fig1_expert_route, fig1_expert_start, fig1_world, load_map,
    make_expert_demo, Chain, Env, EnvError, ExpertDemo, GridWorld, State, Trajectory, Transition,
};
use crate::replay::{ReplayBuffer, ReplayError};
use crate::rewards::{r_agg, r_l2, RewardError, TdilScorer};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("training aborted at env step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: Box<TrainerError>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint registry is empty")]
    EmptyRegistry,
    #[error("correlation needs at least 3 checkpoints, found {0}")]
    TooFewCheckpoints(usize),
}

/// One evaluation snapshot of a run.
#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub env_steps: usize,
    pub agent_snapshot_id: String,
    pub disc_snapshot_id: Option<String>,
    /// Mean surrogate return of the evaluation episodes.
    pub raw_return: f64,
    /// `raw_return` divided by the expert's surrogate return under the same
    /// discriminator snapshot; NaN when the run has no surrogate.
    pub relative_return: f64,
    /// Evaluation-only ground truth; never fed back into training.
    pub gt_return: f64,
    pub steps_per_episode: f64,
    pub success_rate: f64,
}

/// One row of the metric log.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub env_steps: usize,
    pub td_loss: f64,
    pub disc_loss: f64,
    pub bc_loss: f64,
    pub raw_return: f64,
    pub relative_return: f64,
    pub gt_return: f64,
    pub steps_per_episode: f64,
    pub success_rate: f64,
    pub acc_positive: f64,
    pub acc_contrastive: f64,
    pub acc_reversed: f64,
}

pub const METRIC_HEADER: &str = "env_steps,td_loss,disc_loss,bc_loss,raw_return,relative_return,gt_return,steps_per_episode,success_rate,acc_positive,acc_contrastive,acc_reversed";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env_steps,
            self.td_loss,
            self.disc_loss,
            self.bc_loss,
            self.raw_return,
            self.relative_return,
            self.gt_return,
            self.steps_per_episode,
            self.success_rate,
            self.acc_positive,
            self.acc_contrastive,
            self.acc_reversed
        )
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunArtifact {
    pub registry: Vec<CheckpointRecord>,
    pub metrics: Vec<MetricRow>,
    pub agent: SoftQAgent,
    pub discriminator: Option<TransitionDiscriminator>,
    pub demo: ExpertDemo,
    pub heldout: Vec<Transition>,
    pub final_accuracy: Option<AccuracyReport>,
    /// In-memory agent snapshots keyed by the registry's snapshot ids, so
    /// a selected checkpoint can be re-evaluated.
    pub agent_snapshots: Vec<(String, SoftQAgent)>,
}

impl RunArtifact {
    /// The agent stored under a checkpoint's snapshot id.
    pub fn agent_at(&self, record: &CheckpointRecord) -> Option<&SoftQAgent> {
        self.agent_snapshots
            .iter()
            .find(|(id, _)| *id == record.agent_snapshot_id)
            .map(|(_, a)| a)
    }
}

impl RunArtifact {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRIC_HEADER);
        out.push('\n');
        for row in &self.metrics {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn registry_manifest(&self) -> String {
        let mut out = String::new();
        for r in &self.registry {
            out.push_str(&format!(
                "env_steps={} agent={} disc={} raw={} relative={} gt={} steps={} success={}\n",
                r.env_steps,
                r.agent_snapshot_id,
                r.disc_snapshot_id.as_deref().unwrap_or("-"),
                r.raw_return,
                r.relative_return,
                r.gt_return,
                r.steps_per_episode,
                r.success_rate
            ));
        }
        out
    }
}

fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(&h.finalize()[..8])
}

/// One greedy evaluation episode.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    /// Step index of the first goal entry, if any occurred within the cap.
    pub first_goal_step: Option<usize>,
    /// Ground-truth return of the episodic segment (up to the first goal).
    pub gt_return: f64,
    /// The full cap-length rollout. Return sums are computed over this,
    /// matching the continuing-task view the agent was trained under; a
    /// policy that finishes early keeps collecting surrogate reward near
    /// the goal instead of being penalized for short episodes.
    pub trajectory: Trajectory,
}

impl EvalEpisode {
    pub fn success(&self) -> bool {
        self.first_goal_step.is_some()
    }
}

/// Evaluation statistics plus the greedy rollouts they came from.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub mean_gt_return: f64,
    pub mean_steps_per_episode: f64,
    pub success_rate: f64,
    pub episodes: Vec<EvalEpisode>,
}

/// Greedy-policy evaluation: `n_episodes` rollouts from the start
/// distribution. The episodic metrics (steps, success, ground truth) stop
/// at the first goal entry; an episode that never reaches it counts `cap`
/// steps and a failure.
pub fn evaluate<E: Env>(
    agent: &SoftQAgent,
    env: &E,
    n_episodes: usize,
    cap: usize,
    seed: u64,
) -> EvalOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut gt_sum = 0.0;
    let mut steps_sum = 0.0;
    let mut successes = 0usize;
    for _ in 0..n_episodes {
        let mut s = env.sample_start(&mut rng);
        let mut transitions = Vec::new();
        let mut first_goal_step = if s.id == goal_like(env, &s) {
            Some(0)
        } else {
            None
        };
        let mut gt = 0.0;
        for step in 1..=cap {
            let a = agent.act(env, &s, ActMode::Greedy, &mut rng);
            let out = env.step(&s, &a).expect("valid rollout step");
            if first_goal_step.is_none() {
                gt += out.gt_reward;
                if out.done {
                    first_goal_step = Some(step);
                }
            }
            transitions.push(Transition {
                s: s.clone(),
                a,
                s_next: out.s_next.clone(),
                terminal: out.done,
            });
            s = out.s_next;
        }
        match first_goal_step {
            Some(step) => {
                successes += 1;
                steps_sum += step as f64;
            }
            None => steps_sum += cap as f64,
        }
        gt_sum += gt;
        episodes.push(EvalEpisode {
            first_goal_step,
            gt_return: gt,
            trajectory: Trajectory {
                transitions,
                total_gt_return: gt,
            },
        });
    }
    let n = n_episodes as f64;
    EvalOutcome {
        mean_gt_return: gt_sum / n,
        mean_steps_per_episode: steps_sum / n,
        success_rate: successes as f64 / n,
        episodes,
    }
}

// A start state can itself be terminal (the goal cell is in the uniform
// start support); such episodes succeed with zero steps.
fn goal_like<E: Env>(env: &E, s: &State) -> usize {
    for a in 0..env.num_actions() {
        if let Ok((next, done, _)) = env.step_ids(s.id, a) {
            if done && next == s.id {
                return s.id;
            }
        }
    }
    usize::MAX
}

/// Picks the checkpoint with the highest relative return; ties go to the
/// latest `env_steps`. Records without a surrogate (NaN) are skipped.
pub fn blind_select(registry: &[CheckpointRecord]) -> Result<&CheckpointRecord, TrainerError> {
    let mut best: Option<&CheckpointRecord> = None;
    for r in registry {
        if r.relative_return.is_nan() {
            continue;
        }
        best = Some(match best {
            None => r,
            Some(b) => {
                if r.relative_return > b.relative_return
                    || (r.relative_return == b.relative_return && r.env_steps >= b.env_steps)
                {
                    r
                } else {
                    b
                }
            }
        });
    }
    best.ok_or(TrainerError::EmptyRegistry)
}

/// Average-rank Spearman correlation between relative and ground-truth
/// returns. A constant series is degenerate: rho is defined as 0 and
/// flagged.
pub fn correlation_report(
    registry: &[CheckpointRecord],
) -> Result<(f64, bool), TrainerError> {
    if registry.len() < 3 {
        return Err(TrainerError::TooFewCheckpoints(registry.len()));
    }
    let rel: Vec<f64> = registry.iter().map(|r| r.relative_return).collect();
    let gt: Vec<f64> = registry.iter().map(|r| r.gt_return).collect();
    Ok(spearman(&rel, &gt))
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rho; returns `(0, true)` when either series is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> (f64, bool) {
    let constant = |xs: &[f64]| xs.windows(2).all(|w| w[0] == w[1]);
    if constant(a) || constant(b) {
        return (0.0, true);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    (num / (da.sqrt() * db.sqrt()), false)
}

/// Builds the environment and canonical expert demo a config names.
pub fn build_grid_setup(cfg: &TrainConfig) -> Result<(GridWorld, ExpertDemo), TrainerError> {
    match &cfg.env {
        EnvSelection::GridShipped => {
            let env = fig1_world();
            let demo = make_expert_demo(
                &env,
                &fig1_expert_route(),
                &env.state(fig1_expert_start())?,
            )?;
            Ok((env, demo))
        }
        EnvSelection::GridMap(path) => {
            let text = std::fs::read_to_string(path)?;
            let env = GridWorld::new(load_map(&text)?)?;
            let demo = shortest_path_demo(&env)?;
            Ok((env, demo))
        }
        EnvSelection::Chain(_) => unreachable!("grid setup requested for chain env"),
    }
}

/// Expert route for an arbitrary map: BFS shortest path from the fixed
/// start (or from the cell farthest from the goal under uniform starts).
fn shortest_path_demo(env: &GridWorld) -> Result<ExpertDemo, TrainerError> {
    let goal = env.goal_id();
    let start = match env.spec().start {
        crate::env::StartDistribution::Fixed(c) => env.id_of(c),
        crate::env::StartDistribution::UniformFree => (0..env.num_states())
            .filter(|&s| s != goal)
            .max_by_key(|&s| env.shortest_path_len(s))
            .expect("grid has at least two cells"),
    };
    // BFS parents from start.
    let mut prev = vec![usize::MAX; env.num_states()];
    let mut prev_action = vec![usize::MAX; env.num_states()];
    let mut queue = VecDeque::from([start]);
    prev[start] = start;
    while let Some(u) = queue.pop_front() {
        if u == goal {
            break;
        }
        for a in 0..env.num_actions() {
            let (v, _, _) = env.step_ids(u, a)?;
            if prev[v] == usize::MAX {
                prev[v] = u;
                prev_action[v] = a;
                queue.push_back(v);
            }
        }
    }
    let mut route = Vec::new();
    let mut cur = goal;
    while cur != start {
        route.push(prev_action[cur]);
        cur = prev[cur];
    }
    route.reverse();
    Ok(make_expert_demo(env, &route, &env.state(start)?)?)
}

pub fn build_chain_setup(len: usize) -> Result<(Chain, ExpertDemo), TrainerError> {
    let env = Chain::new(len);
    let route = if len == 10 {
        chain_expert_route()
    } else {
        vec![0; len - 1]
    };
    let demo = make_expert_demo(&env, &route, &env.state(0)?)?;
    Ok((env, demo))
}

/// Runs training per the config, resolving the environment selection.
pub fn run_training(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<RunArtifact, TrainerError> {
    match &cfg.env {
        EnvSelection::Chain(len) => {
            let (env, demo) = build_chain_setup(*len)?;
            run_training_on(&env, &demo, cfg, out_dir)
        }
        _ => {
            let (env, demo) = build_grid_setup(cfg)?;
            run_training_on(&env, &demo, cfg, out_dir)
        }
    }
}

struct LossMeter {
    sum: f64,
    n: usize,
}

impl LossMeter {
    fn new() -> Self {
        LossMeter { sum: 0.0, n: 0 }
    }
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }
    fn take(&mut self) -> f64 {
        let mean = if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        };
        self.sum = 0.0;
        self.n = 0;
        mean
    }
}

/// The full training loop on a concrete environment and demo.
pub fn run_training_on<E: Env>(
    env: &E,
    demo: &ExpertDemo,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<RunArtifact, TrainerError> {
    run_inner(env, demo, cfg, out_dir).map_err(|(step, e)| {
        if step == 0 {
            e
        } else {
            TrainerError::Aborted {
                step,
                source: Box::new(e),
            }
        }
    })
}

fn run_inner<E: Env>(
    env: &E,
    demo: &ExpertDemo,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<RunArtifact, (usize, TrainerError)> {
    let fail0 = |e: TrainerError| (0usize, e);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("snapshots")).map_err(|e| fail0(e.into()))?;
        std::fs::write(dir.join("run.cfg"), cfg.to_text()).map_err(|e| fail0(e.into()))?;
        std::fs::write(
            dir.join("expert.demo"),
            crate::env::demo_to_string(env, demo),
        )
        .map_err(|e| fail0(e.into()))?;
        std::fs::write(dir.join("metrics.csv"), format!("{METRIC_HEADER}\n"))
            .map_err(|e| fail0(e.into()))?;
        std::fs::write(dir.join("registry.txt"), "").map_err(|e| fail0(e.into()))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let needs_disc = cfg.reward_fn == RewardFn::Agg
        && cfg.reward.tdil_backend == crate::rewards::TdilBackend::LearnedTarget
        && cfg.reward.beta < 1.0;
    let needs_gail = cfg.reward_fn == RewardFn::Agg
        && cfg.reward.irl_mode == crate::rewards::IrlMode::Learned
        && cfg.reward.beta > 0.0;

    let mut agent = SoftQAgent::new(env, cfg.agent_config());
    let mut disc =
        needs_disc.then(|| TransitionDiscriminator::new(env, &cfg.disc, &mut rng));
    let mut gail = needs_gail
        .then(|| crate::rewards::GailDiscriminator::new(env, &cfg.gail_hidden, cfg.gail_lr, &mut rng));
    let mut buf = ReplayBuffer::new(cfg.buffer_capacity, cfg.seed.wrapping_add(1));
    let mut heldout: Vec<Transition> = Vec::new();

    let expert_pairs: Vec<(State, crate::env::Action)> = demo
        .trajectory
        .transitions
        .iter()
        .map(|t| (t.s.clone(), t.a))
        .collect();

    let mut registry: Vec<CheckpointRecord> = Vec::new();
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut agent_snapshots: Vec<(String, SoftQAgent)> = Vec::new();
    let mut td_meter = LossMeter::new();
    let mut disc_meter = LossMeter::new();
    let mut bc_meter = LossMeter::new();
    let mut final_accuracy = None;

    // The reward of one transition under the run's reward function, using
    // the current discriminator target snapshot.
    let compute_rewards = |transitions: &[Transition],
                           disc: &Option<TransitionDiscriminator>,
                           gail: &Option<crate::rewards::GailDiscriminator>|
     -> Vec<(Transition, f64)> {
        transitions
            .iter()
            .map(|t| {
                let r = match cfg.reward_fn {
                    RewardFn::L2 => {
                        r_l2(&t.s, &t.a, demo, cfg.reward.l2_scale, env.num_actions())
                    }
                    RewardFn::Agg => {
                        let scorer = TdilScorer::from_config(&cfg.reward, env, disc.as_ref());
                        r_agg(t, demo, &scorer, gail.as_ref(), &cfg.reward)
                    }
                };
                (t.clone(), r)
            })
            .collect()
    };

    let checkpoint = |step: usize,
                          agent: &SoftQAgent,
                          disc: &Option<TransitionDiscriminator>,
                          heldout: &[Transition],
                          registry: &mut Vec<CheckpointRecord>,
                          metrics: &mut Vec<MetricRow>,
                          snapshots: &mut Vec<(String, SoftQAgent)>,
                          td: f64,
                          dl: f64,
                          bc: f64,
                          final_accuracy: &mut Option<AccuracyReport>|
     -> Result<(), TrainerError> {
        let eval = evaluate(
            agent,
            env,
            cfg.eval_episodes,
            cfg.episode_cap,
            cfg.seed ^ (step as u64).wrapping_mul(0x9E3779B97F4A7C15),
        );
        // Surrogate returns of the evaluation episodes and the expert, both
        // under the same discriminator snapshot.
        let (raw_return, relative_return) = if cfg.reward_fn == RewardFn::Agg
            && (disc.is_some()
                || cfg.reward.tdil_backend != crate::rewards::TdilBackend::LearnedTarget)
        {
            let scorer = TdilScorer::from_config(&cfg.reward, env, disc.as_ref());
            let traj_sum = |traj: &Trajectory| -> f64 {
                traj.transitions
                    .iter()
                    .map(|t| {
                        crate::rewards::r_tdil_with(
                            &scorer,
                            t,
                            demo,
                            cfg.reward.normalize_by_demo,
                        )
                    })
                    .sum()
            };
            let raw = eval
                .episodes
                .iter()
                .map(|e| traj_sum(&e.trajectory))
                .sum::<f64>()
                / eval.episodes.len().max(1) as f64;
            let expert_raw = traj_sum(&demo.trajectory);
            let rel = if expert_raw == 0.0 {
                f64::NAN
            } else {
                raw / expert_raw
            };
            (raw, rel)
        } else {
            (f64::NAN, f64::NAN)
        };

        let acc = match (disc, heldout.is_empty()) {
            (Some(d), false) => Some(evaluate_accuracy(
                d,
                env,
                heldout,
                0.5,
                cfg.seed ^ 0xACC ^ step as u64,
            )?),
            _ => None,
        };
        let (ap, ac, ar) = acc
            .as_ref()
            .map(|a| {
                (
                    a.acc_positive.unwrap_or(f64::NAN),
                    a.acc_contrastive.unwrap_or(f64::NAN),
                    a.acc_reversed.unwrap_or(f64::NAN),
                )
            })
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        if acc.is_some() {
            *final_accuracy = acc;
        }

        let agent_bytes = agent.to_bytes();
        let agent_id = content_hash(&agent_bytes);
        let disc_bytes = disc.as_ref().map(|d| d.to_bytes());
        let disc_id = disc_bytes.as_ref().map(|b| content_hash(b));
        if !snapshots.iter().any(|(id, _)| *id == agent_id) {
            snapshots.push((agent_id.clone(), agent.clone()));
        }
        if let Some(dir) = out_dir {
            std::fs::write(dir.join("snapshots").join(format!("{agent_id}.agent")), &agent_bytes)?;
            if let (Some(bytes), Some(id)) = (&disc_bytes, &disc_id) {
                std::fs::write(dir.join("snapshots").join(format!("{id}.disc")), bytes)?;
            }
        }

        let record = CheckpointRecord {
            env_steps: step,
            agent_snapshot_id: agent_id,
            disc_snapshot_id: disc_id,
            raw_return,
            relative_return,
            gt_return: eval.mean_gt_return,
            steps_per_episode: eval.mean_steps_per_episode,
            success_rate: eval.success_rate,
        };
        let row = MetricRow {
            env_steps: step,
            td_loss: td,
            disc_loss: dl,
            bc_loss: bc,
            raw_return,
            relative_return,
            gt_return: eval.mean_gt_return,
            steps_per_episode: eval.mean_steps_per_episode,
            success_rate: eval.success_rate,
            acc_positive: ap,
            acc_contrastive: ac,
            acc_reversed: ar,
        };
        if let Some(dir) = out_dir {
            append(dir.join("metrics.csv"), &format!("{}\n", row.to_csv_line()))?;
            append(
                dir.join("registry.txt"),
                &format!(
                    "env_steps={} agent={} disc={} raw={} relative={} gt={} steps={} success={}\n",
                    record.env_steps,
                    record.agent_snapshot_id,
                    record.disc_snapshot_id.as_deref().unwrap_or("-"),
                    record.raw_return,
                    record.relative_return,
                    record.gt_return,
                    record.steps_per_episode,
                    record.success_rate
                ),
            )?;
        }
        registry.push(record);
        metrics.push(row);
        Ok(())
    };

    // Initial checkpoint: a zero budget still registers one record.
    checkpoint(
        0,
        &agent,
        &disc,
        &heldout,
        &mut registry,
        &mut metrics,
        &mut agent_snapshots,
        f64::NAN,
        f64::NAN,
        f64::NAN,
        &mut final_accuracy,
    )
    .map_err(fail0)?;

    let mut s = env.sample_start(&mut rng);
    let mut ep_len = 0usize;
    let mut collected = 0usize;

    for step in 1..=cfg.total_env_steps {
        let fail = |e: TrainerError| (step, e);

        // 1. Interact and store. Training treats the task as continuing:
        // episodes run to the fixed cap and restart from the start
        // distribution, and the critic bootstraps through goal entries.
        // Termination at the goal is an evaluation-protocol concept; making
        // it absorbing during training would let any falsely rewarded
        // off-goal cycle outvalue the finite path to the goal.
        let a = agent.act(env, &s, ActMode::Sample, &mut rng);
        let out = env.step(&s, &a).map_err(|e| fail(e.into()))?;
        let t = Transition {
            s: s.clone(),
            a,
            s_next: out.s_next.clone(),
            terminal: false,
        };
        collected += 1;
        if collected % cfg.heldout_every == 0 {
            heldout.push(t.clone());
        } else {
            buf.push(t);
        }
        ep_len += 1;
        if ep_len >= cfg.episode_cap {
            ep_len = 0;
            s = env.sample_start(&mut rng);
        } else {
            s = out.s_next;
        }

        if !buf.is_empty() {
            for _ in 0..cfg.updates_per_step {
                // 2-3. Discriminator step; its target updates inside. The
                // step size holds for 60% of the budget, then decays so the
                // reward field settles instead of wandering on the
                // optimizer's noise floor.
                if let Some(d) = disc.as_mut() {
                    let progress = step as f64 / cfg.total_env_steps as f64;
                    let decay = if progress <= 0.6 {
                        1.0
                    } else {
                        (1.0 - (progress - 0.6) / 0.4).max(0.05)
                    };
                    d.set_learning_rate(cfg.disc.learning_rate * decay);
                    let pos = buf
                        .build_positive_batch(cfg.batch_positive)
                        .map_err(|e| fail(e.into()))?;
                    let negs = buf
                        .build_negative_batch(
                            cfg.batch_contrastive,
                            cfg.batch_reversed,
                            cfg.use_reversed,
                        )
                        .map_err(|e| fail(e.into()))?;
                    disc_meter.add(d.train_step(&pos, &negs).map_err(|e| fail(e.into()))?);
                }
                if let Some(g) = gail.as_mut() {
                    let agent_batch = buf
                        .sample_transitions(cfg.gail_batch)
                        .map_err(|e| fail(e.into()))?;
                    let agent_pairs: Vec<(State, crate::env::Action)> =
                        agent_batch.into_iter().map(|t| (t.s, t.a)).collect();
                    g.train_step(&expert_pairs, &agent_pairs)
                        .map_err(|e| fail(e.into()))?;
                }

                // 4. Sample agent and expert transitions; reward them with
                // the target updated in this iteration. Expert transitions
                // adopt the continuing-task view too (terminal stripped).
                let mut batch = buf
                    .sample_transitions(cfg.agent_batch)
                    .map_err(|e| fail(e.into()))?;
                batch.extend(demo.trajectory.transitions.iter().map(|t| Transition {
                    terminal: false,
                    ..t.clone()
                }));
                let rewarded = compute_rewards(&batch, &disc, &gail);

                // 5. Critic and actor updates. Actor states are deduped so
                // a state's pull toward the Boltzmann target is applied
                // once per iteration regardless of how often the batch
                // happens to contain it; the BC term below competes at a
                // fixed one-update-per-iteration rate.
                td_meter.add(agent.critic_update(&rewarded).map_err(|e| fail(e.into()))?);
                let mut states: Vec<usize> = rewarded.iter().map(|(t, _)| t.s.id).collect();
                states.sort_unstable();
                states.dedup();
                agent.actor_update(&states);

                // 6. Behavior cloning.
                bc_meter.add(agent.bc_update(demo));
            }
        }

        if step % cfg.eval_interval == 0 || step == cfg.total_env_steps {
            let td = td_meter.take();
            let dl = disc_meter.take();
            let bc = bc_meter.take();
            checkpoint(
                step,
                &agent,
                &disc,
                &heldout,
                &mut registry,
                &mut metrics,
                &mut agent_snapshots,
                td,
                dl,
                bc,
                &mut final_accuracy,
            )
            .map_err(fail)?;
        }
    }

    Ok(RunArtifact {
        registry,
        metrics,
        agent,
        discriminator: disc,
        demo: demo.clone(),
        heldout,
        final_accuracy,
        agent_snapshots,
    })
}

fn append(path: PathBuf, text: &str) -> Result<(), TrainerError> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Result of a discriminator-only training run.
#[derive(Debug)]
pub struct DiscRunArtifact {
    pub discriminator: TransitionDiscriminator,
    pub heldout: Vec<Transition>,
    pub accuracy: AccuracyReport,
    /// Fraction of a final contrastive draw that is genuinely reachable:
    /// the label noise the positive weighting absorbs.
    pub contrastive_noise: f64,
}

/// Trains just the transition discriminator on uniform-random behavior.
///
/// One environment step and one loss step per iteration, exactly as inside
/// the full loop, but with a random-walk policy: uniform starts cover the
/// state space at least as evenly as a converging agent does, which is the
/// harder setting for the all-pairs accuracy protocol. The optimizer step
/// size holds for the first 60% of the budget and then decays linearly to
/// 5%, so the reported model is a settled one rather than a point on the
/// optimizer's noise floor.
pub fn run_disc_training<E: Env>(
    env: &E,
    cfg: &TrainConfig,
) -> Result<DiscRunArtifact, TrainerError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut disc = TransitionDiscriminator::new(env, &cfg.disc, &mut rng);
    let mut buf = ReplayBuffer::new(cfg.buffer_capacity, cfg.seed.wrapping_add(1));
    let mut heldout = Vec::new();
    let mut s = env.sample_start(&mut rng);
    let mut ep_len = 0usize;
    let total = cfg.total_env_steps;
    for step in 1..=total {
        let a = env.action(rng.gen_range(0..env.num_actions()))?;
        let out = env.step(&s, &a)?;
        let t = Transition {
            s: s.clone(),
            a,
            s_next: out.s_next.clone(),
            terminal: out.done,
        };
        if step % cfg.heldout_every == 0 {
            heldout.push(t);
        } else {
            buf.push(t);
        }
        ep_len += 1;
        if out.done || ep_len >= cfg.episode_cap {
            ep_len = 0;
            s = env.sample_start(&mut rng);
        } else {
            s = out.s_next;
        }
        if !buf.is_empty() {
            let progress = step as f64 / total as f64;
            let decay = if progress <= 0.6 {
                1.0
            } else {
                (1.0 - (progress - 0.6) / 0.4).max(0.05)
            };
            disc.set_learning_rate(cfg.disc.learning_rate * decay);
            for _ in 0..cfg.updates_per_step {
                let pos = buf.build_positive_batch(cfg.batch_positive)?;
                let negs = buf.build_negative_batch(
                    cfg.batch_contrastive,
                    cfg.batch_reversed,
                    cfg.use_reversed,
                )?;
                disc.train_step(&pos, &negs)?;
            }
        }
    }
    let accuracy = evaluate_accuracy(&disc, env, &heldout, 0.5, cfg.seed ^ 0xACC)?;
    let noise_batch = buf.build_negative_batch(1000, 0, false)?;
    let contrastive_noise = crate::replay::reachable_fraction(env, &noise_batch[0]);
    Ok(DiscRunArtifact {
        discriminator: disc,
        heldout,
        accuracy,
        contrastive_noise,
    })
}

/// Thresholded agreement between a discriminator's target model and the
/// exact oracle over every state pair of the environment.
pub fn oracle_agreement<E: Env>(
    disc: &TransitionDiscriminator,
    env: &E,
    threshold: f64,
) -> Result<f64, TrainerError> {
    let n = env.num_states();
    let states: Vec<State> = crate::env::enumerate_states(env);
    let mut agree = 0usize;
    for a in &states {
        for b in &states {
            let pred = disc.predict(a, b, true) > threshold;
            if pred == crate::discriminator::oracle_reachable(env, a.id, b.id)? {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * n) as f64)
}

//! Reward functions: the transition-discriminator surrogate, sparse and
//! adversarial imitation rewards, the geometric-distance baseline, their
//! convex mixture, and relative returns for blind model selection.

use rand::Rng;

use crate::discriminator::{oracle_reachable_k, TransitionDiscriminator, PROB_EPS};
use crate::env::{Action, Env, EnvError, ExpertDemo, State, Trajectory, Transition};
use crate::nn::{opt_step, DenseNet, Gradients, NnError, OptimState, OutputActivation};

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("expert raw return is zero; the discriminator is degenerate")]
    DegenerateExpertReturn,
    #[error("training batch is empty ({0} side)")]
    EmptyBatch(&'static str),
    #[error("non-finite adversarial loss {0}")]
    NonFiniteLoss(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// How the surrogate reward scores state pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum TdilBackend {
    /// Target model of the learned discriminator.
    LearnedTarget,
    /// Exact one-step reachability oracle.
    Oracle,
    /// Weighted multi-step oracle; `weights[k-1]` scales the within-k term.
    OracleMultistep { weights: Vec<f64> },
}

/// Which imitation reward fills the mixture's sparse term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrlMode {
    /// Exact indicator of demonstrated `(s, a)` pairs.
    Indicator,
    /// Adversarially learned state-action discriminator.
    Learned,
}

/// Reward configuration.
#[derive(Debug, Clone)]
pub struct RewardConfig {
    /// Mixture weight of the sparse imitation term.
    pub beta: f64,
    pub irl_mode: IrlMode,
    pub l2_scale: f64,
    pub tdil_backend: TdilBackend,
    /// Divide the surrogate sum by the number of expert states. Off by
    /// default; the raw sums are what the return trends are read from.
    pub normalize_by_demo: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: 0.0,
            irl_mode: IrlMode::Indicator,
            l2_scale: 1.0,
            tdil_backend: TdilBackend::LearnedTarget,
            normalize_by_demo: false,
        }
    }
}

/// A resolved surrogate-reward scorer: discriminator or oracle view.
pub enum TdilScorer<'a, E: Env> {
    Learned(&'a TransitionDiscriminator),
    Oracle(&'a E),
    OracleMultistep { env: &'a E, weights: &'a [f64] },
}

impl<'a, E: Env> TdilScorer<'a, E> {
    pub fn from_config(
        cfg: &'a RewardConfig,
        env: &'a E,
        disc: Option<&'a TransitionDiscriminator>,
    ) -> Self {
        match &cfg.tdil_backend {
            TdilBackend::LearnedTarget => TdilScorer::Learned(
                disc.expect("learned backend requires a discriminator"),
            ),
            TdilBackend::Oracle => TdilScorer::Oracle(env),
            TdilBackend::OracleMultistep { weights } => TdilScorer::OracleMultistep {
                env,
                weights: weights.as_slice(),
            },
        }
    }

    /// Sum over (deduplicated) expert states of this scorer's reachability
    /// estimate from `s_next`.
    fn sum_over_experts(&self, s_next: &State, demo: &ExpertDemo) -> f64 {
        match self {
            TdilScorer::Learned(d) => demo
                .unique_states
                .iter()
                .map(|e| d.predict(s_next, e, true))
                .sum(),
            TdilScorer::Oracle(env) => demo
                .unique_states
                .iter()
                .filter(|e| {
                    env.transition_support(s_next.id, e.id)
                        .expect("demo states are valid")
                })
                .count() as f64,
            TdilScorer::OracleMultistep { env, weights } => {
                let mut total = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let k = i + 1;
                    let count = demo
                        .unique_states
                        .iter()
                        .filter(|e| {
                            oracle_reachable_k(*env, s_next.id, e.id, k)
                                .expect("demo states are valid")
                        })
                        .count();
                    total += w * count as f64;
                }
                total
            }
        }
    }
}

/// Surrogate reward of a transition: the scorer's reachability mass from
/// the next state to the expert states.
pub fn r_tdil_with<E: Env>(
    scorer: &TdilScorer<E>,
    t: &Transition,
    demo: &ExpertDemo,
    normalize: bool,
) -> f64 {
    let sum = scorer.sum_over_experts(&t.s_next, demo);
    if normalize {
        sum / demo.unique_states.len() as f64
    } else {
        sum
    }
}

/// Surrogate reward through the learned target discriminator.
pub fn r_tdil(t: &Transition, demo: &ExpertDemo, d: &TransitionDiscriminator) -> f64 {
    demo.unique_states
        .iter()
        .map(|e| d.predict(&t.s_next, e, true))
        .sum()
}

/// Multi-step oracle surrogate: `sum_k weights[k-1] * |{e reachable within k}|`.
pub fn r_tdil_multistep<E: Env>(
    t: &Transition,
    demo: &ExpertDemo,
    env: &E,
    weights: &[f64],
) -> f64 {
    let scorer = TdilScorer::OracleMultistep { env, weights };
    scorer.sum_over_experts(&t.s_next, demo)
}

/// Sparse imitation reward: 1 exactly on demonstrated `(s, a)` pairs.
pub fn r_irl_indicator(s: &State, a: &Action, demo: &ExpertDemo) -> f64 {
    if demo.contains_pair(s, a) {
        1.0
    } else {
        0.0
    }
}

/// Adversarial state-action discriminator for the learned imitation reward.
#[derive(Debug, Clone)]
pub struct GailDiscriminator {
    net: DenseNet,
    opt: OptimState,
    num_actions: usize,
}

impl GailDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        env: &impl Env,
        hidden: &[usize],
        learning_rate: f64,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![env.feature_dim() + env.num_actions()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = DenseNet::new(&dims, OutputActivation::Sigmoid, rng);
        let opt = OptimState::new(&net, learning_rate);
        GailDiscriminator {
            net,
            opt,
            num_actions: env.num_actions(),
        }
    }

    fn input(&self, s: &State, a: &Action) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.features.len() + self.num_actions);
        x.extend_from_slice(&s.features);
        for i in 0..self.num_actions {
            x.push(if i == a.id { 1.0 } else { 0.0 });
        }
        x
    }

    /// Probability the pair is expert data.
    pub fn score(&self, s: &State, a: &Action) -> f64 {
        self.net
            .forward(&self.input(s, a))
            .expect("input matches net dims")[0]
    }

    /// One BCE step labeling expert pairs 1 and agent pairs 0; returns the
    /// pre-step loss.
    pub fn train_step(
        &mut self,
        expert_pairs: &[(State, Action)],
        agent_pairs: &[(State, Action)],
    ) -> Result<f64, RewardError> {
        if expert_pairs.is_empty() {
            return Err(RewardError::EmptyBatch("expert"));
        }
        if agent_pairs.is_empty() {
            return Err(RewardError::EmptyBatch("agent"));
        }
        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(&self.net);
        for (pairs, label) in [(expert_pairs, 1.0), (agent_pairs, 0.0)] {
            let n = pairs.len() as f64;
            for (s, a) in pairs {
                let x = self.input(s, a);
                let trace = self.net.forward_trace(&x)?;
                let p = trace.output()[0].clamp(PROB_EPS, 1.0 - PROB_EPS);
                if label > 0.5 {
                    loss += -p.ln() / n;
                    grads.add(&self.net.backward(&trace, &[-1.0 / (n * p)])?);
                } else {
                    loss += -(1.0 - p).ln() / n;
                    grads.add(&self.net.backward(&trace, &[1.0 / (n * (1.0 - p))])?);
                }
            }
        }
        if !loss.is_finite() {
            return Err(RewardError::NonFiniteLoss(loss));
        }
        opt_step(&mut self.net, &mut self.opt, &grads)?;
        Ok(loss)
    }

    #[cfg(test)]
    fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }
}

/// Learned imitation reward `-log(1 - D(s, a))`, clamped to stay finite.
pub fn r_irl_learned(g: &GailDiscriminator, s: &State, a: &Action) -> f64 {
    let p = g.score(s, a).clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(1.0 - p).ln()
}

/// Geometric-distance reward over state-action features:
/// `exp(-scale * min_i ||concat(f(s), onehot(a)) - concat(f(s_e), onehot(a_e))||)`.
pub fn r_l2(
    s: &State,
    a: &Action,
    demo: &ExpertDemo,
    l2_scale: f64,
    num_actions: usize,
) -> f64 {
    let mut best = f64::INFINITY;
    for t in &demo.trajectory.transitions {
        let mut d2 = 0.0;
        for (x, y) in s.features.iter().zip(&t.s.features) {
            d2 += (x - y) * (x - y);
        }
        for i in 0..num_actions {
            let xa = if i == a.id { 1.0 } else { 0.0 };
            let ya = if i == t.a.id { 1.0 } else { 0.0 };
            d2 += (xa - ya) * (xa - ya);
        }
        best = best.min(d2.sqrt());
    }
    (-l2_scale * best).exp()
}

/// The sparse term of the mixture under the configured mode.
pub fn r_irl(
    s: &State,
    a: &Action,
    demo: &ExpertDemo,
    gail: Option<&GailDiscriminator>,
    cfg: &RewardConfig,
) -> f64 {
    match cfg.irl_mode {
        IrlMode::Indicator => r_irl_indicator(s, a, demo),
        IrlMode::Learned => {
            r_irl_learned(gail.expect("learned mode requires a discriminator"), s, a)
        }
    }
}

/// Mixture reward `beta * R_irl(s, a) + (1 - beta) * R_surrogate(s, a)`.
pub fn r_agg<E: Env>(
    t: &Transition,
    demo: &ExpertDemo,
    scorer: &TdilScorer<E>,
    gail: Option<&GailDiscriminator>,
    cfg: &RewardConfig,
) -> f64 {
    let sparse = if cfg.beta == 0.0 {
        0.0
    } else {
        r_irl(&t.s, &t.a, demo, gail, cfg)
    };
    let surrogate = if cfg.beta == 1.0 {
        0.0
    } else {
        r_tdil_with(scorer, t, demo, cfg.normalize_by_demo)
    };
    cfg.beta * sparse + (1.0 - cfg.beta) * surrogate
}

/// Ratio of surrogate returns with an arbitrary per-transition score.
pub fn relative_return_with<F>(
    score: F,
    agent_traj: &Trajectory,
    demo: &ExpertDemo,
) -> Result<f64, RewardError>
where
    F: Fn(&Transition) -> f64,
{
    let expert: f64 = demo.trajectory.transitions.iter().map(&score).sum();
    if expert == 0.0 {
        return Err(RewardError::DegenerateExpertReturn);
    }
    let agent: f64 = agent_traj.transitions.iter().map(&score).sum();
    Ok(agent / expert)
}

/// Agent surrogate return divided by the expert's, both evaluated with the
/// same scorer snapshot.
pub fn relative_return<E: Env>(
    agent_traj: &Trajectory,
    demo: &ExpertDemo,
    scorer: &TdilScorer<E>,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    relative_return_with(
        |t| r_tdil_with(scorer, t, demo, cfg.normalize_by_demo),
        agent_traj,
        demo,
    )
}

/// Per-step reward trace of a trajectory as CSV
/// (`step,r_tdil,r_irl,r_agg,gt_reward`).
pub fn reward_trace_csv<E: Env>(
    env: &E,
    traj: &Trajectory,
    demo: &ExpertDemo,
    scorer: &TdilScorer<E>,
    gail: Option<&GailDiscriminator>,
    cfg: &RewardConfig,
) -> String {
    let mut out = String::from("step,r_tdil,r_irl,r_agg,gt_reward\n");
    for (i, t) in traj.transitions.iter().enumerate() {
        let surrogate = r_tdil_with(scorer, t, demo, cfg.normalize_by_demo);
        let sparse = r_irl(&t.s, &t.a, demo, gail, cfg);
        let agg = cfg.beta * sparse + (1.0 - cfg.beta) * surrogate;
        let (_, _, gt) = env
            .step_ids(t.s.id, t.a.id)
            .expect("trajectory states are valid");
        out.push_str(&format!("{i},{surrogate},{sparse},{agg},{gt}\n"));
    }
    out
}

//! Discrete soft actor-critic over tabular state/action values.
//!
//! The critic learns soft Q-values toward `r + gamma * V_soft(s')` with
//! `V_soft(s) = temp * log sum_a exp(Q(s, a) / temp)`; the actor is a
//! categorical policy trained by cross-entropy toward the Boltzmann
//! distribution of the critic, plus a behavior-cloning term that pushes the
//! policy toward the demonstrated action at every expert state.

use rand::Rng;

use crate::env::{Action, Env, ExpertDemo, State, Transition};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("non-finite critic target {target} for transition {index} (reward {reward})")]
    NonFiniteTarget {
        index: usize,
        target: f64,
        reward: f64,
    },
}

/// Action-selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Draw from the categorical policy.
    Sample,
    /// Argmax of the policy logits, ties broken toward the lowest action id.
    Greedy,
}

/// Soft actor-critic hyperparameters.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub gamma: f64,
    pub ent_temp: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub bc_weight: f64,
    /// Initial Q value for every pair. An optimistic value (above the
    /// reachable returns) makes never-tried actions dominate the Boltzmann
    /// actor target until they are actually tried, which prevents the
    /// sampling policy from locking untried actions out.
    pub q_init: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.97,
            ent_temp: 1.0,
            lr_q: 0.25,
            lr_pi: 0.25,
            bc_weight: 1.0,
            q_init: 0.0,
        }
    }
}

/// Tabular soft Q-learning agent with a categorical actor.
#[derive(Debug, Clone)]
pub struct SoftQAgent {
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    logits: Vec<f64>,
    pub cfg: AgentConfig,
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &l in logits {
        let e = (l - m).exp();
        out.push(e);
        z += e;
    }
    for p in out.iter_mut() {
        *p /= z;
    }
}

impl SoftQAgent {
    pub fn new(env: &impl Env, cfg: AgentConfig) -> Self {
        SoftQAgent {
            num_states: env.num_states(),
            num_actions: env.num_actions(),
            q: vec![cfg.q_init; env.num_states() * env.num_actions()],
            logits: vec![0.0; env.num_states() * env.num_actions()],
            cfg,
        }
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn logits_row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Policy probabilities at a state (softmax of its logits).
    pub fn policy(&self, s: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_actions);
        softmax_into(self.logits_row(s), &mut out);
        out
    }

    /// Entropy-regularized state value of the critic.
    pub fn soft_value(&self, s: usize) -> f64 {
        let row = self.q_row(s);
        let temp = self.cfg.ent_temp;
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|q| ((q - m) / temp).exp()).sum();
        m + temp * z.ln()
    }

    fn argmax_lowest(row: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Greedy action id at a state.
    pub fn greedy_action(&self, s: usize) -> usize {
        Self::argmax_lowest(self.logits_row(s))
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        env: &impl Env,
        s: &State,
        mode: ActMode,
        rng: &mut R,
    ) -> Action {
        let id = match mode {
            ActMode::Greedy => self.greedy_action(s.id),
            ActMode::Sample => {
                let probs = self.policy(s.id);
                let mut u: f64 = rng.gen();
                let mut chosen = self.num_actions - 1;
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        chosen = i;
                        break;
                    }
                    u -= p;
                }
                chosen
            }
        };
        env.action(id).expect("agent actions are in range")
    }

    /// Soft Q step over a batch of externally rewarded transitions; returns
    /// the mean squared TD error before the updates.
    pub fn critic_update(&mut self, batch: &[(Transition, f64)]) -> Result<f64, AgentError> {
        let mut loss = 0.0;
        for (index, (t, reward)) in batch.iter().enumerate() {
            let v_next = if t.terminal {
                0.0
            } else {
                self.soft_value(t.s_next.id)
            };
            let target = reward + self.cfg.gamma * v_next;
            if !target.is_finite() {
                return Err(AgentError::NonFiniteTarget {
                    index,
                    target,
                    reward: *reward,
                });
            }
            let idx = t.s.id * self.num_actions + t.a.id;
            let td = target - self.q[idx];
            loss += td * td;
            self.q[idx] += self.cfg.lr_q * td;
        }
        Ok(if batch.is_empty() {
            0.0
        } else {
            loss / batch.len() as f64
        })
    }

    /// Moves the policy toward `Boltzmann(Q / temp)` at each batch state by
    /// a cross-entropy step; returns the mean cross-entropy.
    pub fn actor_update(&mut self, states: &[usize]) -> f64 {
        let mut loss = 0.0;
        let mut target = Vec::with_capacity(self.num_actions);
        let mut pi = Vec::with_capacity(self.num_actions);
        let temp = self.cfg.ent_temp;
        for &s in states {
            let scaled: Vec<f64> = self.q_row(s).iter().map(|q| q / temp).collect();
            softmax_into(&scaled, &mut target);
            softmax_into(self.logits_row(s), &mut pi);
            loss -= target
                .iter()
                .zip(&pi)
                .map(|(t, p)| t * p.max(1e-300).ln())
                .sum::<f64>();
            let row = &mut self.logits[s * self.num_actions..(s + 1) * self.num_actions];
            for ((l, p), t) in row.iter_mut().zip(&pi).zip(&target) {
                *l -= self.cfg.lr_pi * (p - t);
            }
        }
        if states.is_empty() {
            0.0
        } else {
            loss / states.len() as f64
        }
    }

    /// Cross-entropy step toward the expert action at every demo pair;
    /// returns the mean negative log-likelihood of the expert actions.
    pub fn bc_update(&mut self, demo: &ExpertDemo) -> f64 {
        let mut loss = 0.0;
        let mut pi = Vec::with_capacity(self.num_actions);
        let w = self.cfg.bc_weight;
        for t in &demo.trajectory.transitions {
            let s = t.s.id;
            softmax_into(self.logits_row(s), &mut pi);
            loss -= pi[t.a.id].max(1e-300).ln();
            let row = &mut self.logits[s * self.num_actions..(s + 1) * self.num_actions];
            for (a, (l, p)) in row.iter_mut().zip(&pi).enumerate() {
                let target = if a == t.a.id { 1.0 } else { 0.0 };
                *l -= self.cfg.lr_pi * w * (p - target);
            }
        }
        if demo.trajectory.is_empty() {
            0.0
        } else {
            loss / demo.trajectory.len() as f64
        }
    }

    /// Per-cell greedy actions as arrow glyphs, `G` on the goal cell.
    pub fn policy_arrows(&self, env: &crate::env::GridWorld) -> String {
        let spec = env.spec();
        let mut out = String::new();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let id = y * spec.width + x;
                if id == env.goal_id() {
                    out.push('G');
                } else {
                    out.push(match self.greedy_action(id) {
                        0 => '^',
                        1 => 'v',
                        2 => '<',
                        _ => '>',
                    });
                }
            }
            out.push('\n');
        }
        out
    }

    /// Snapshot of both tables; round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SQA1");
        out.extend_from_slice(&(self.num_states as u64).to_le_bytes());
        out.extend_from_slice(&(self.num_actions as u64).to_le_bytes());
        for v in self.q.iter().chain(&self.logits) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{chain_world, fig1_world, make_expert_demo, Env};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(env: &impl Env, s: usize, a: usize) -> Transition {
        let state = env.state(s).unwrap();
        let action = env.action(a).unwrap();
        let out = env.step(&state, &action).unwrap();
        Transition {
            s: state,
            a: action,
            s_next: out.s_next,
            terminal: out.done,
        }
    }

    #[test]
    fn greedy_ties_break_to_lowest_id() {
        let env = fig1_world();
        let agent = SoftQAgent::new(&env, AgentConfig::default());
        assert_eq!(agent.greedy_action(12), 0);
    }

    #[test]
    fn sampling_follows_sharp_logits() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        agent.logits[5 * 4] = 10.0; // state 5, action 0
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = env.state(5).unwrap();
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| agent.act(&env, &s, ActMode::Sample, &mut rng).id == 0)
            .count();
        // softmax(10, 0, 0, 0) puts ~0.99986 on action 0.
        assert!(hits as f64 / n as f64 > 0.99);
    }

    #[test]
    fn logit_shift_leaves_policy_unchanged() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        agent.logits[3 * 4] = 1.2;
        agent.logits[3 * 4 + 2] = -0.4;
        let before = agent.policy(3);
        let greedy_before = agent.greedy_action(3);
        for a in 0..4 {
            agent.logits[3 * 4 + a] += 7.5;
        }
        let after = agent.policy(3);
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-12);
        }
        assert_eq!(agent.greedy_action(3), greedy_before);
    }

    #[test]
    fn policy_normalizes_after_updates() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        let batch: Vec<(Transition, f64)> =
            (0..16).map(|i| (transition(&env, i, i % 4), 0.5)).collect();
        agent.critic_update(&batch).unwrap();
        agent.actor_update(&(0..16).collect::<Vec<_>>());
        for s in 0..env.num_states() {
            let sum: f64 = agent.policy(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_target_reduces_to_reward() {
        let env = chain_world();
        let mut agent = SoftQAgent::new(
            &env,
            AgentConfig {
                lr_q: 1.0,
                ..AgentConfig::default()
            },
        );
        let t = transition(&env, 8, 0); // advances into the terminal end
        assert!(t.terminal);
        agent.critic_update(&[(t.clone(), 1.0)]).unwrap();
        assert_eq!(agent.q_row(8)[0], 1.0);
    }

    #[test]
    fn soft_value_bounds_and_low_temp_limit() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        for (i, q) in agent.q.iter_mut().enumerate() {
            *q = ((i * 37) % 11) as f64 * 0.3 - 1.0;
        }
        for s in 0..env.num_states() {
            let max = agent
                .q_row(s)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let v = agent.soft_value(s);
            assert!(v >= max - 1e-12);
            assert!(v <= max + agent.cfg.ent_temp * (env.num_actions() as f64).ln() + 1e-12);
        }
        agent.cfg.ent_temp = 1e-6;
        for s in 0..env.num_states() {
            let max = agent
                .q_row(s)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((agent.soft_value(s) - max).abs() < 1e-4);
        }
    }

    #[test]
    fn non_finite_target_rejected() {
        let env = chain_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        let t = transition(&env, 0, 0);
        assert!(matches!(
            agent.critic_update(&[(t, f64::INFINITY)]),
            Err(AgentError::NonFiniteTarget { .. })
        ));
    }

    #[test]
    fn actor_converges_to_boltzmann_of_frozen_critic() {
        // KL(pi || Boltzmann(Q / temp)) decreases monotonically under
        // repeated actor steps with the critic frozen.
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        let s = 20usize;
        agent.q[s * 4..s * 4 + 4].copy_from_slice(&[0.08, 0.02, -0.03, 0.05]);
        let temp = agent.cfg.ent_temp;
        let target = {
            let scaled: Vec<f64> = agent.q_row(s).iter().map(|q| q / temp).collect();
            let mut t = Vec::new();
            softmax_into(&scaled, &mut t);
            t
        };
        let kl = |agent: &SoftQAgent| -> f64 {
            agent
                .policy(s)
                .iter()
                .zip(&target)
                .map(|(p, t)| if *t > 0.0 { t * (t / p).ln() } else { 0.0 })
                .sum()
        };
        let mut prev = kl(&agent);
        for _ in 0..200 {
            agent.actor_update(&[s]);
            let cur = kl(&agent);
            assert!(cur <= prev + 1e-12);
            prev = cur;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn uniform_critic_keeps_policy_uniform() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        for _ in 0..50 {
            agent.actor_update(&[7]);
        }
        for p in agent.policy(7) {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn actor_gradient_vanishes_at_fixpoint() {
        let env = fig1_world();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        let s = 9usize;
        agent.q[s * 4..s * 4 + 4].copy_from_slice(&[0.05, 0.0, 0.01, -0.02]);
        // Set logits to exactly Q / temp: the policy already equals the
        // Boltzmann target, so an update must not move it.
        let temp = agent.cfg.ent_temp;
        for a in 0..4 {
            agent.logits[s * 4 + a] = agent.q[s * 4 + a] / temp;
        }
        let before = agent.policy(s);
        agent.actor_update(&[s]);
        let after = agent.policy(s);
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-12);
        }
    }

    #[test]
    fn bc_pins_expert_actions() {
        let env = fig1_world();
        let demo = make_expert_demo(
            &env,
            &crate::env::fig1_expert_route(),
            &env.state(crate::env::fig1_expert_start()).unwrap(),
        )
        .unwrap();
        let mut agent = SoftQAgent::new(&env, AgentConfig::default());
        for _ in 0..300 {
            agent.bc_update(&demo);
        }
        for t in &demo.trajectory.transitions {
            assert_eq!(agent.greedy_action(t.s.id), t.a.id);
        }
        // Single-pair loss agrees with the cross-entropy definition.
        let loss = agent.bc_update(&demo);
        let t0 = &demo.trajectory.transitions[0];
        assert!(loss >= 0.0);
        assert!(agent.policy(t0.s.id)[t0.a.id] > 0.9);
    }

    #[test]
    fn zero_bc_weight_leaves_policy_untouched() {
        let env = fig1_world();
        let demo = make_expert_demo(
            &env,
            &crate::env::fig1_expert_route(),
            &env.state(crate::env::fig1_expert_start()).unwrap(),
        )
        .unwrap();
        let mut agent = SoftQAgent::new(
            &env,
            AgentConfig {
                bc_weight: 0.0,
                ..AgentConfig::default()
            },
        );
        let before = agent.logits.clone();
        agent.bc_update(&demo);
        assert_eq!(agent.logits, before);
    }

    #[test]
    fn critic_matches_value_iteration_on_two_cell_chain() {
        // Independent oracle: exact soft value iteration on the 2-state MDP
        // with the one-step-proximity reward. Tabular soft Q must converge
        // to the same fixpoint and the same greedy choice. (Braking at the
        // start is itself expert-proximal here, so the fixpoint prefers it;
        // goal-seeking on this env comes from the BC term, not the critic.)
        let env = crate::env::Chain::new(2);
        let demo = make_expert_demo(&env, &[0], &env.state(0).unwrap()).unwrap();
        let reward = |s_next: usize| -> f64 {
            demo.unique_states
                .iter()
                .filter(|e| env.transition_support(s_next, e.id).unwrap())
                .count() as f64
        };
        let cfg = AgentConfig::default();
        // Soft value iteration.
        let mut q_star = vec![0.0f64; 4];
        for _ in 0..4000 {
            let mut next = q_star.clone();
            for s in 0..2 {
                for a in 0..2 {
                    let (sn, done, _) = env.step_ids(s, a).unwrap();
                    let v = if done {
                        0.0
                    } else {
                        let row = &q_star[sn * 2..sn * 2 + 2];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        m + cfg.ent_temp
                            * row
                                .iter()
                                .map(|q| ((q - m) / cfg.ent_temp).exp())
                                .sum::<f64>()
                                .ln()
                    };
                    next[s * 2 + a] = reward(sn) + cfg.gamma * v;
                }
            }
            q_star = next;
        }
        // Tabular soft Q over the same transitions.
        let mut agent = SoftQAgent::new(&env, cfg);
        let mut batch = Vec::new();
        for s in 0..2 {
            for a in 0..2 {
                let t = transition(&env, s, a);
                let r = reward(t.s_next.id);
                batch.push((t, r));
            }
        }
        for _ in 0..6000 {
            agent.critic_update(&batch).unwrap();
        }
        for s in 0..2 {
            for a in 0..2 {
                assert!(
                    (agent.q_row(s)[a] - q_star[s * 2 + a]).abs() < 1e-6,
                    "Q({s},{a}) = {} vs oracle {}",
                    agent.q_row(s)[a],
                    q_star[s * 2 + a]
                );
            }
        }
        let greedy_oracle = if q_star[0] >= q_star[1] { 0 } else { 1 };
        let greedy_q = if agent.q_row(0)[0] >= agent.q_row(0)[1] {
            0
        } else {
            1
        };
        assert_eq!(greedy_q, greedy_oracle);
    }

    #[test]
    fn policy_arrows_shape() {
        let env = fig1_world();
        let agent = SoftQAgent::new(&env, AgentConfig::default());
        let arrows = agent.policy_arrows(&env);
        let lines: Vec<&str> = arrows.lines().collect();
        assert_eq!(lines.len(), 8);
        assert!(lines.iter().all(|l| l.chars().count() == 8));
        assert_eq!(lines[0].chars().next().unwrap(), 'G');
    }
}

//! Deterministic discrete MDP environments and expert demonstrations.
//!
//! Two environments are provided: a barrier grid-world ([`grid::GridWorld`])
//! and an asymmetric highway chain ([`chain::Chain`]). Both expose exact
//! dynamics through the [`Env`] trait, which is the basis for the
//! reachability oracles used to verify learned discriminators.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;

mod canonical;
mod chain;
mod demo_io;
mod grid;

pub use canonical::{
    chain_expert_route, chain_world, fig1_expert_route, fig1_expert_start, fig1_trap_cells,
    fig1_world, FIG1_MAP,
};
pub use chain::Chain;
pub use grid::{load_map, render_map, Cell, GridSpec, GridWorld, StartDistribution};

/// Episode cap shared by all in-scope environments.
pub const EPISODE_CAP: usize = 50;

/// Errors from environment construction, stepping, and demo I/O.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("state id {id} out of range (environment has {num_states} states)")]
    InvalidState { id: usize, num_states: usize },
    #[error("action id {id} out of range (environment has {num_actions} actions)")]
    InvalidAction { id: usize, num_actions: usize },
    #[error("map parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("cell ({x}, {y}) cannot reach the goal")]
    Disconnected { x: usize, y: usize },
    #[error("route step {step} bumps (state unchanged); an expert route may not waste moves")]
    RouteBump { step: usize },
    #[error("route reaches a terminal state at step {step} before the route ends")]
    RouteEndedEarly { step: usize },
    #[error("route does not end in a terminal state")]
    RouteNotTerminated,
    #[error("demo file line {line}: {msg}")]
    DemoSchema { line: usize, msg: String },
    #[error("demo file line {line}: transition chain broken (next_state {found} then state {expected})")]
    ChainBroken {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("demo was recorded for {expected}, not {found}")]
    EnvMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Semantic tag of a discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionLabel {
    Up,
    Down,
    Left,
    Right,
    Advance,
    Brake,
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionLabel::Up => "Up",
            ActionLabel::Down => "Down",
            ActionLabel::Left => "Left",
            ActionLabel::Right => "Right",
            ActionLabel::Advance => "Advance",
            ActionLabel::Brake => "Brake",
        };
        f.write_str(s)
    }
}

/// A discrete action: environment-local id plus its semantic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub id: usize,
    pub label: ActionLabel,
}

/// An environment state: local index plus its fixed feature vector.
///
/// Features are a pure function of the id (normalized coordinates), so two
/// `State` values with equal ids compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub id: usize,
    pub features: Vec<f64>,
}

/// One environment transition `(s, a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub s_next: State,
    pub terminal: bool,
}

/// Result of stepping an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub s_next: State,
    pub done: bool,
    pub gt_reward: f64,
}

/// An ordered, chained sequence of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Ground-truth return, for evaluation and reporting only.
    pub total_gt_return: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks that consecutive transitions chain (`s_next` of step k equals
    /// `s` of step k+1).
    pub fn is_chained(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].s_next.id == w[1].s.id)
    }
}

/// The single expert demonstration plus its membership indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDemo {
    pub trajectory: Trajectory,
    /// Every state visited, in order: `s_0 .. s_T` including the final
    /// `s_next`. May contain repeats if the route revisits a state.
    pub expert_states: Vec<State>,
    /// `expert_states` deduplicated by id, first occurrence kept. Reward
    /// sums iterate over this list so repeated states are not double-counted.
    pub unique_states: Vec<State>,
    /// The `(state id, action id)` pairs of the trajectory.
    pub expert_pairs: HashSet<(usize, usize)>,
}

impl ExpertDemo {
    fn from_trajectory(trajectory: Trajectory) -> Self {
        let mut expert_states = Vec::with_capacity(trajectory.len() + 1);
        let mut expert_pairs = HashSet::new();
        for t in &trajectory.transitions {
            expert_states.push(t.s.clone());
            expert_pairs.insert((t.s.id, t.a.id));
        }
        if let Some(last) = trajectory.transitions.last() {
            expert_states.push(last.s_next.clone());
        }
        let mut seen = HashSet::new();
        let unique_states = expert_states
            .iter()
            .filter(|s| seen.insert(s.id))
            .cloned()
            .collect();
        ExpertDemo {
            trajectory,
            expert_states,
            unique_states,
            expert_pairs,
        }
    }

    /// True iff `(s, a)` is one of the demonstrated pairs.
    pub fn contains_pair(&self, s: &State, a: &Action) -> bool {
        self.expert_pairs.contains(&(s.id, a.id))
    }
}

/// A deterministic discrete MDP with enumerable states.
pub trait Env {
    /// Short environment name, embedded in demo and manifest headers.
    fn name(&self) -> String;

    /// Canonical description of the environment's full topology; hashed to
    /// detect demo/map mismatches.
    fn fingerprint(&self) -> String;

    fn num_states(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Feature vector of a state id. Caller guarantees `id < num_states()`.
    fn features_of(&self, id: usize) -> Vec<f64>;

    /// Action ids paired with their labels, ordered by id.
    fn action_labels(&self) -> Vec<ActionLabel>;

    /// Core dynamics on raw ids: returns `(next id, done, gt_reward)`.
    fn step_ids(&self, s: usize, a: usize) -> Result<(usize, bool, f64), EnvError>;

    /// State ids in the support of the initial-state distribution.
    fn start_support(&self) -> Vec<usize>;

    fn episode_cap(&self) -> usize {
        EPISODE_CAP
    }

    /// Builds the full [`State`] for an id.
    fn state(&self, id: usize) -> Result<State, EnvError> {
        if id >= self.num_states() {
            return Err(EnvError::InvalidState {
                id,
                num_states: self.num_states(),
            });
        }
        Ok(State {
            id,
            features: self.features_of(id),
        })
    }

    /// Builds the full [`Action`] for an id.
    fn action(&self, id: usize) -> Result<Action, EnvError> {
        let labels = self.action_labels();
        if id >= labels.len() {
            return Err(EnvError::InvalidAction {
                id,
                num_actions: labels.len(),
            });
        }
        Ok(Action {
            id,
            label: labels[id],
        })
    }

    /// Deterministic transition of `(s, a)`.
    fn step(&self, s: &State, a: &Action) -> Result<StepOutcome, EnvError> {
        let (next, done, gt_reward) = self.step_ids(s.id, a.id)?;
        Ok(StepOutcome {
            s_next: self.state(next)?,
            done,
            gt_reward,
        })
    }

    /// Exact one-step reachability: true iff some action moves `s` to `s_j`.
    fn transition_support(&self, s: usize, s_j: usize) -> Result<bool, EnvError> {
        if s_j >= self.num_states() {
            return Err(EnvError::InvalidState {
                id: s_j,
                num_states: self.num_states(),
            });
        }
        for a in 0..self.num_actions() {
            let (next, _, _) = self.step_ids(s, a)?;
            if next == s_j {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Draws a start state uniformly from the start support.
    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> State
    where
        Self: Sized,
    {
        let support = self.start_support();
        let id = support[rng.gen_range(0..support.len())];
        self.state(id).expect("start support contains valid ids")
    }
}

/// All states of the environment, ordered by id.
pub fn enumerate_states(env: &impl Env) -> Vec<State> {
    (0..env.num_states())
        .map(|id| env.state(id).expect("id < num_states"))
        .collect()
}

/// Replays an action route from `s0` and packages it as an expert demo.
///
/// The route must reach a terminal state on its final action, without ever
/// bumping in place and without terminating early; a demonstration with
/// wasted moves is rejected.
pub fn make_expert_demo(
    env: &impl Env,
    route: &[usize],
    s0: &State,
) -> Result<ExpertDemo, EnvError> {
    let mut transitions = Vec::with_capacity(route.len());
    let mut total_gt_return = 0.0;
    let mut s = s0.clone();
    for (step, &action_id) in route.iter().enumerate() {
        let a = env.action(action_id)?;
        let out = env.step(&s, &a)?;
        if out.s_next.id == s.id {
            return Err(EnvError::RouteBump { step });
        }
        if out.done && step + 1 < route.len() {
            return Err(EnvError::RouteEndedEarly { step });
        }
        total_gt_return += out.gt_reward;
        transitions.push(Transition {
            s: s.clone(),
            a,
            s_next: out.s_next.clone(),
            terminal: out.done,
        });
        if step + 1 == route.len() && !out.done {
            return Err(EnvError::RouteNotTerminated);
        }
        s = out.s_next;
    }
    if transitions.is_empty() {
        return Err(EnvError::RouteNotTerminated);
    }
    Ok(ExpertDemo::from_trajectory(Trajectory {
        transitions,
        total_gt_return,
    }))
}

pub use demo_io::{demo_from_lines, demo_to_string, load_demo, save_demo};

/// Hex sha-256 of an environment's fingerprint, used in file headers.
pub fn env_hash(env: &impl Env) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(env.fingerprint().as_bytes());
    hex::encode(h.finalize())
}

//! Imitation learning from a single expert demonstration on deterministic
//! discrete MDPs.
//!
//! The central object is a *transition discriminator*: a classifier over
//! state pairs `(s_i, s_j)` that estimates whether `s_j` is reachable from
//! `s_i` in one action. Summing its output over the expert demonstration's
//! states yields a dense, dynamics-aware surrogate reward that guides a
//! soft actor-critic agent back toward the expert support, with sparse
//! indicator and geometric-distance rewards available as baselines.
//!
//! Modules follow the training pipeline:
//!
//! - [`env`]: grid-world and highway-chain environments, exact transition
//!   oracles, expert demonstration generation and serialization.
//! - [`replay`]: bounded transition store and positive/negative pair batches.
//! - [`nn`]: dense feed-forward networks with exact gradients, Adam, and
//!   target-network soft updates.
//! - [`discriminator`]: the learned transition discriminator, reachability
//!   oracles, and the accuracy protocol.
//! - [`rewards`]: surrogate, indicator, adversarial, and distance rewards
//!   plus relative returns.
//! - [`agent`]: discrete soft actor-critic with a behavior-cloning loss.
//! - [`trainer`]: the training loop, evaluation, checkpoint registry, and
//!   blind model selection.
//! - [`config`]: flat key=value run configuration.

pub mod agent;
pub mod config;
pub mod discriminator;
pub mod env;
pub mod nn;
pub mod replay;
pub mod rewards;
pub mod trainer;

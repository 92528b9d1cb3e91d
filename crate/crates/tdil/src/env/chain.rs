//! Highway chain: positions 0..n-1, Advance moves forward, Brake holds.
//!
//! No action ever decreases the position, so every reversed transition
//! `(p+1, p)` is invalid. This is the hard-negative testbed: unlike the
//! grid-world, where most reversed moves are legal, reversals here are
//! guaranteed label-correct negatives.

use super::{ActionLabel, Env, EnvError};

#[derive(Debug, Clone)]
pub struct Chain {
    len: usize,
}

pub const CHAIN_ACTIONS: [ActionLabel; 2] = [ActionLabel::Advance, ActionLabel::Brake];

impl Chain {
    /// A chain of `len >= 2` positions; the last position is terminal.
    pub fn new(len: usize) -> Self {
        assert!(len >= 2, "chain needs at least two positions");
        Chain { len }
    }

    pub fn len(&self) -> usize {
        self.len
    }
}

impl Env for Chain {
    fn name(&self) -> String {
        "chain".to_string()
    }

    fn fingerprint(&self) -> String {
        format!("chain(len={})", self.len)
    }

    fn num_states(&self) -> usize {
        self.len
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn features_of(&self, id: usize) -> Vec<f64> {
        vec![id as f64 / (self.len - 1) as f64]
    }

    fn action_labels(&self) -> Vec<ActionLabel> {
        CHAIN_ACTIONS.to_vec()
    }

    fn step_ids(&self, s: usize, a: usize) -> Result<(usize, bool, f64), EnvError> {
        if s >= self.len {
            return Err(EnvError::InvalidState {
                id: s,
                num_states: self.len,
            });
        }
        let next = match a {
            0 => (s + 1).min(self.len - 1), // Advance; stay at the terminal end
            1 => s,                         // Brake
            _ => {
                return Err(EnvError::InvalidAction {
                    id: a,
                    num_actions: 2,
                })
            }
        };
        let done = next == self.len - 1;
        Ok((next, done, if done { 1.0 } else { 0.0 }))
    }

    fn start_support(&self) -> Vec<usize> {
        vec![0]
    }
}

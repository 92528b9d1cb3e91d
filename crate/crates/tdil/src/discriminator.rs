//! The transition discriminator and its exact reference oracles.
//!
//! An online/target pair of sigmoid-headed networks scores state pairs
//! `(s_i, s_j)` for one-step reachability. Training minimizes a weighted
//! binary cross-entropy: positives (stored transitions) carry weight
//! `alpha`, negatives (contrastive plus reversed pairs) carry `1 - alpha`,
//! which absorbs the false negatives that random contrastive draws
//! inevitably contain. After every optimizer step the target tracks the
//! online network through a convex soft update and is the snapshot used
//! for reward computation.
//!
//! A tabular backend (one logit per state pair) is available for the
//! grid-world as a debugging aid: it shares the loss and update protocol
//! but removes function approximation from the picture.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Env, EnvError, State};
use crate::nn::{opt_step, soft_update, DenseNet, Gradients, NnError, OptimState, OutputActivation};
use crate::replay::{PairBatch, PairLabel};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum DiscError {
    #[error("training batch is empty ({0} side)")]
    EmptyBatch(&'static str),
    #[error("non-finite loss {loss} (positives: {n_pos}, negatives: {n_neg})")]
    NonFiniteLoss { loss: f64, n_pos: usize, n_neg: usize },
    #[error("held-out set is empty")]
    EmptyHeldout,
    #[error("state pair has wrong feature dimension: {0}")]
    Dim(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint decode failed: {0}")]
    Decode(String),
}

/// Which function approximator backs the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscBackendKind {
    /// Dense network over concatenated state features.
    Learned,
    /// One logit per `(state, state)` pair; grid-world debugging backend.
    Tabular,
}

/// Discriminator hyperparameters.
#[derive(Debug, Clone)]
pub struct DiscConfig {
    /// Positive-sample weight in the loss, in (0, 1).
    pub alpha: f64,
    /// Soft-update coefficient: `target = (1 - lambda) * online + lambda * target`.
    pub lambda: f64,
    /// Hidden layer widths of the learned backend.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub backend: DiscBackendKind,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            alpha: 0.99,
            lambda: 1e-4,
            hidden: vec![64, 64],
            learning_rate: 3e-3,
            backend: DiscBackendKind::Learned,
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Learned {
        online: DenseNet,
        target: DenseNet,
        opt: OptimState,
    },
    Tabular {
        online_logits: Vec<f64>,
        target_logits: Vec<f64>,
        num_states: usize,
        learning_rate: f64,
    },
}

/// Online/target transition discriminator `D(s_i, s_j) -> (0, 1)`.
#[derive(Debug, Clone)]
pub struct TransitionDiscriminator {
    backend: Backend,
    pub alpha: f64,
    pub lambda: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TransitionDiscriminator {
    /// Builds a discriminator for `env` with seeded initialization.
    pub fn new<R: Rng + ?Sized>(env: &impl Env, cfg: &DiscConfig, rng: &mut R) -> Self {
        assert!(cfg.alpha > 0.0 && cfg.alpha < 1.0, "alpha must be in (0, 1)");
        let backend = match cfg.backend {
            DiscBackendKind::Learned => {
                let mut dims = vec![2 * env.feature_dim()];
                dims.extend_from_slice(&cfg.hidden);
                dims.push(1);
                let online = DenseNet::new(&dims, OutputActivation::Sigmoid, rng);
                let target = online.clone();
                let opt = OptimState::new(&online, cfg.learning_rate);
                Backend::Learned {
                    online,
                    target,
                    opt,
                }
            }
            DiscBackendKind::Tabular => {
                let n = env.num_states();
                Backend::Tabular {
                    online_logits: vec![0.0; n * n],
                    target_logits: vec![0.0; n * n],
                    num_states: n,
                    learning_rate: cfg.learning_rate,
                }
            }
        };
        TransitionDiscriminator {
            backend,
            alpha: cfg.alpha,
            lambda: cfg.lambda,
        }
    }

    /// Reachability probability of `(s_i, s_j)` from the online or target
    /// model. Deterministic; always in (0, 1).
    pub fn predict(&self, s_i: &State, s_j: &State, use_target: bool) -> f64 {
        match &self.backend {
            Backend::Learned { online, target, .. } => {
                let net = if use_target { target } else { online };
                let mut x = Vec::with_capacity(s_i.features.len() + s_j.features.len());
                x.extend_from_slice(&s_i.features);
                x.extend_from_slice(&s_j.features);
                net.forward(&x).expect("pair features match input dim")[0]
            }
            Backend::Tabular {
                online_logits,
                target_logits,
                num_states,
                ..
            } => {
                let table = if use_target {
                    target_logits
                } else {
                    online_logits
                };
                sigmoid(table[s_i.id * num_states + s_j.id])
            }
        }
    }

    /// One weighted-BCE optimizer step over the given batches, returning
    /// the pre-step loss, then a soft update of the target.
    ///
    /// Loss: `-( alpha * mean_B+ log D + (1 - alpha) * mean_B- log(1 - D) )`
    /// with probabilities clamped to `[eps, 1 - eps]` before the logs. The
    /// negative sets (contrastive and reversed) are pooled.
    pub fn train_step(
        &mut self,
        positives: &PairBatch,
        negatives: &[PairBatch],
    ) -> Result<f64, DiscError> {
        debug_assert_eq!(positives.label, PairLabel::Positive);
        let neg_pairs: Vec<&(State, State)> =
            negatives.iter().flat_map(|b| b.pairs.iter()).collect();
        if positives.is_empty() {
            return Err(DiscError::EmptyBatch("positive"));
        }
        if neg_pairs.is_empty() {
            return Err(DiscError::EmptyBatch("negative"));
        }
        let n_pos = positives.len();
        let n_neg = neg_pairs.len();
        let alpha = self.alpha;
        let lambda = self.lambda;

        let mut loss = 0.0;
        match &mut self.backend {
            Backend::Learned {
                online,
                target,
                opt,
            } => {
                let mut grads = Gradients::zeros_like(online);
                let mut x = vec![0.0; online.input_dim()];
                let run = |net: &DenseNet,
                               pair: &(State, State),
                               x: &mut Vec<f64>|
                 -> Result<(crate::nn::Trace, f64), DiscError> {
                    x.clear();
                    x.extend_from_slice(&pair.0.features);
                    x.extend_from_slice(&pair.1.features);
                    let trace = net.forward_trace(x)?;
                    let p = trace.output()[0];
                    Ok((trace, p))
                };
                for pair in &positives.pairs {
                    let (trace, p) = run(online, pair, &mut x)?;
                    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    loss += -alpha * pc.ln() / n_pos as f64;
                    let upstream = [-alpha / (n_pos as f64 * pc)];
                    grads.add(&online.backward(&trace, &upstream)?);
                }
                for pair in &neg_pairs {
                    let (trace, p) = run(online, pair, &mut x)?;
                    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    loss += -(1.0 - alpha) * (1.0 - pc).ln() / n_neg as f64;
                    let upstream = [(1.0 - alpha) / (n_neg as f64 * (1.0 - pc))];
                    grads.add(&online.backward(&trace, &upstream)?);
                }
                if !loss.is_finite() {
                    return Err(DiscError::NonFiniteLoss { loss, n_pos, n_neg });
                }
                opt_step(online, opt, &grads)?;
                soft_update(target, online, lambda)?;
            }
            Backend::Tabular {
                online_logits,
                target_logits,
                num_states,
                learning_rate,
            } => {
                let n = *num_states;
                let mut grad = vec![0.0; online_logits.len()];
                for (a, b) in &positives.pairs {
                    let idx = a.id * n + b.id;
                    let p = sigmoid(online_logits[idx]).clamp(PROB_EPS, 1.0 - PROB_EPS);
                    loss += -alpha * p.ln() / n_pos as f64;
                    grad[idx] += -alpha * (1.0 - p) / n_pos as f64;
                }
                for (a, b) in &neg_pairs {
                    let idx = a.id * n + b.id;
                    let p = sigmoid(online_logits[idx]).clamp(PROB_EPS, 1.0 - PROB_EPS);
                    loss += -(1.0 - alpha) * (1.0 - p).ln() / n_neg as f64;
                    grad[idx] += (1.0 - alpha) * p / n_neg as f64;
                }
                if !loss.is_finite() {
                    return Err(DiscError::NonFiniteLoss { loss, n_pos, n_neg });
                }
                for (z, g) in online_logits.iter_mut().zip(&grad) {
                    *z -= *learning_rate * g;
                }
                for (t, o) in target_logits.iter_mut().zip(online_logits.iter()) {
                    *t = (1.0 - lambda) * *o + lambda * *t;
                }
            }
        }
        Ok(loss)
    }

    /// Held-out weighted BCE without touching parameters.
    pub fn heldout_loss(&self, positives: &PairBatch, negatives: &[PairBatch]) -> f64 {
        let alpha = self.alpha;
        let neg: Vec<&(State, State)> = negatives.iter().flat_map(|b| b.pairs.iter()).collect();
        let mut loss = 0.0;
        if !positives.is_empty() {
            for (a, b) in &positives.pairs {
                let p = self.predict(a, b, false).clamp(PROB_EPS, 1.0 - PROB_EPS);
                loss += -alpha * p.ln() / positives.len() as f64;
            }
        }
        if !neg.is_empty() {
            for (a, b) in &neg {
                let p = self.predict(a, b, false).clamp(PROB_EPS, 1.0 - PROB_EPS);
                loss += -(1.0 - alpha) * (1.0 - p).ln() / neg.len() as f64;
            }
        }
        loss
    }

    /// Serializes alpha, lambda, and both models.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"TDC1");
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        match &self.backend {
            Backend::Learned {
                online, target, ..
            } => {
                out.push(0);
                for net in [online, target] {
                    let bytes = net.to_bytes();
                    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
                    out.extend_from_slice(&bytes);
                }
            }
            Backend::Tabular {
                online_logits,
                target_logits,
                num_states,
                learning_rate,
            } => {
                out.push(1);
                out.extend_from_slice(&(*num_states as u64).to_le_bytes());
                out.extend_from_slice(&learning_rate.to_le_bytes());
                for table in [online_logits, target_logits] {
                    for v in table {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], learning_rate: f64) -> Result<Self, DiscError> {
        let err = |m: &str| DiscError::Decode(m.to_string());
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], DiscError> {
            if *pos + n > bytes.len() {
                return Err(err("unexpected end of checkpoint"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"TDC1" {
            return Err(err("bad magic"));
        }
        let alpha = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let lambda = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let backend = match take(&mut pos, 1)?[0] {
            0 => {
                let mut nets = Vec::new();
                for _ in 0..2 {
                    let len =
                        u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
                    nets.push(
                        DenseNet::from_bytes(take(&mut pos, len)?)
                            .map_err(|e| err(&e.to_string()))?,
                    );
                }
                let target = nets.pop().unwrap();
                let online = nets.pop().unwrap();
                let opt = OptimState::new(&online, learning_rate);
                Backend::Learned {
                    online,
                    target,
                    opt,
                }
            }
            1 => {
                let n = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
                let lr = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                let mut tables = Vec::new();
                for _ in 0..2 {
                    let mut t = Vec::with_capacity(n * n);
                    for _ in 0..n * n {
                        t.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
                    }
                    tables.push(t);
                }
                let target_logits = tables.pop().unwrap();
                let online_logits = tables.pop().unwrap();
                Backend::Tabular {
                    online_logits,
                    target_logits,
                    num_states: n,
                    learning_rate: lr,
                }
            }
            _ => return Err(err("unknown backend tag")),
        };
        Ok(TransitionDiscriminator {
            backend,
            alpha,
            lambda,
        })
    }

    /// Online/target parameter views for invariant checks (learned backend).
    pub fn nets(&self) -> Option<(&DenseNet, &DenseNet)> {
        match &self.backend {
            Backend::Learned { online, target, .. } => Some((online, target)),
            Backend::Tabular { .. } => None,
        }
    }

    /// Adjusts the optimizer step size (used by decay schedules).
    pub fn set_learning_rate(&mut self, lr: f64) {
        match &mut self.backend {
            Backend::Learned { opt, .. } => opt.learning_rate = lr,
            Backend::Tabular { learning_rate, .. } => *learning_rate = lr,
        }
    }
}

/// Exact one-step reachability indicator: max over actions of "step lands
/// on `s_j`". This is the optimum the learned discriminator approximates.
pub fn oracle_reachable(env: &impl Env, s_i: usize, s_j: usize) -> Result<bool, EnvError> {
    env.transition_support(s_i, s_j)
}

/// Multi-step oracle: 1 iff `s_j` is reachable from `s_i` within `k`
/// composed actions (at least one action; bounded BFS). `k = 1` coincides
/// with [`oracle_reachable`], and the indicator is monotone in `k`.
pub fn oracle_reachable_k(
    env: &impl Env,
    s_i: usize,
    s_j: usize,
    k: usize,
) -> Result<bool, EnvError> {
    assert!(k >= 1, "k must be at least 1");
    if s_j >= env.num_states() {
        return Err(EnvError::InvalidState {
            id: s_j,
            num_states: env.num_states(),
        });
    }
    let mut visited = vec![false; env.num_states()];
    let mut frontier = VecDeque::from([(s_i, 0usize)]);
    while let Some((s, depth)) = frontier.pop_front() {
        if depth == k {
            continue;
        }
        for a in 0..env.num_actions() {
            let (next, _, _) = env.step_ids(s, a)?;
            if depth + 1 >= 1 && next == s_j {
                return Ok(true);
            }
            if !visited[next] {
                visited[next] = true;
                frontier.push_back((next, depth + 1));
            }
        }
    }
    Ok(false)
}

/// Per-category held-out accuracy of a discriminator.
#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub threshold: f64,
    /// Positive pairs predicted reachable.
    pub acc_positive: Option<f64>,
    /// Contrastive pairs whose thresholded prediction matches the exact
    /// oracle label (random draws sometimes form true transitions).
    pub acc_contrastive: Option<f64>,
    /// Oracle-confirmed invalid reversals predicted unreachable.
    pub acc_reversed: Option<f64>,
    pub n_positive: usize,
    pub n_contrastive: usize,
    /// Reversed pairs that entered the reversed accuracy.
    pub n_reversed: usize,
    /// Reversed pairs excluded because the reversal is genuinely valid.
    pub n_reversed_excluded: usize,
}

/// Scores held-out transitions with any pair scorer.
///
/// Positives are `(s, s')`, reversed pairs `(s', s)`, and contrastive pairs
/// join head states of two seeded uniform draws. Reversed pairs that the
/// environment oracle confirms as valid transitions are excluded from the
/// reversed accuracy and counted separately; contrastive pairs are judged
/// against their oracle label.
pub fn evaluate_accuracy_with<F>(
    score: F,
    env: &impl Env,
    heldout: &[crate::env::Transition],
    threshold: f64,
    seed: u64,
) -> Result<AccuracyReport, DiscError>
where
    F: Fn(&State, &State) -> f64,
{
    if heldout.is_empty() {
        return Err(DiscError::EmptyHeldout);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decide = |p: f64| p > threshold;

    let mut pos_hits = 0usize;
    for t in heldout {
        if decide(score(&t.s, &t.s_next)) {
            pos_hits += 1;
        }
    }

    let mut con_hits = 0usize;
    let n_contrastive = heldout.len();
    for _ in 0..n_contrastive {
        let a = &heldout[rng.gen_range(0..heldout.len())].s;
        let b = &heldout[rng.gen_range(0..heldout.len())].s;
        let truth = oracle_reachable(env, a.id, b.id)?;
        if decide(score(a, b)) == truth {
            con_hits += 1;
        }
    }

    let mut rev_hits = 0usize;
    let mut n_reversed = 0usize;
    let mut n_reversed_excluded = 0usize;
    for t in heldout {
        if oracle_reachable(env, t.s_next.id, t.s.id)? {
            n_reversed_excluded += 1;
            continue;
        }
        n_reversed += 1;
        if !decide(score(&t.s_next, &t.s)) {
            rev_hits += 1;
        }
    }

    let frac = |hits: usize, n: usize| {
        if n == 0 {
            None
        } else {
            Some(hits as f64 / n as f64)
        }
    };
    Ok(AccuracyReport {
        threshold,
        acc_positive: frac(pos_hits, heldout.len()),
        acc_contrastive: frac(con_hits, n_contrastive),
        acc_reversed: frac(rev_hits, n_reversed),
        n_positive: heldout.len(),
        n_contrastive,
        n_reversed,
        n_reversed_excluded,
    })
}

/// [`evaluate_accuracy_with`] on a trained discriminator's target model.
pub fn evaluate_accuracy(
    d: &TransitionDiscriminator,
    env: &impl Env,
    heldout: &[crate::env::Transition],
    threshold: f64,
    seed: u64,
) -> Result<AccuracyReport, DiscError> {
    evaluate_accuracy_with(|a, b| d.predict(a, b, true), env, heldout, threshold, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{chain_world, fig1_world, Env, GridWorld, Transition};
    use crate::replay::ReplayBuffer;

    fn walk_buffer(env: &impl Env, steps: usize, seed: u64) -> (ReplayBuffer, Vec<Transition>) {
        let mut buf = ReplayBuffer::new(100_000, seed);
        let mut heldout = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
        let mut s = env.sample_start(&mut rng).id;
        let mut ep_len = 0usize;
        for step in 0..steps {
            let a = rng.gen_range(0..env.num_actions());
            let state = env.state(s).unwrap();
            let action = env.action(a).unwrap();
            let out = env.step(&state, &action).unwrap();
            let t = Transition {
                s: state,
                a: action,
                s_next: out.s_next.clone(),
                terminal: out.done,
            };
            s = out.s_next.id;
            ep_len += 1;
            // Every 20th transition is reserved for evaluation.
            if (step + 1) % 20 == 0 {
                heldout.push(t);
            } else {
                buf.push(t);
            }
            if out.done || ep_len >= env.episode_cap() {
                ep_len = 0;
                s = env.sample_start(&mut rng).id;
            }
        }
        (buf, heldout)
    }

    fn train(
        env: &impl Env,
        cfg: &DiscConfig,
        buf: &mut ReplayBuffer,
        steps: usize,
        seed: u64,
    ) -> TransitionDiscriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = TransitionDiscriminator::new(env, cfg, &mut rng);
        for _ in 0..steps {
            let pos = buf.build_positive_batch(32).unwrap();
            let neg = buf.build_negative_batch(16, 16, true).unwrap();
            d.train_step(&pos, &neg).unwrap();
        }
        d
    }

    #[test]
    fn untrained_zero_like_prediction_is_half() {
        let env = fig1_world();
        let cfg = DiscConfig {
            backend: DiscBackendKind::Tabular,
            ..DiscConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = TransitionDiscriminator::new(&env, &cfg, &mut rng);
        let a = env.state(0).unwrap();
        let b = env.state(9).unwrap();
        assert_eq!(d.predict(&a, &b, false), 0.5);
        assert_eq!(d.predict(&a, &b, true), 0.5);
    }

    #[test]
    fn loss_at_uniform_prediction_is_log_two() {
        // A fresh tabular model predicts exactly 0.5 everywhere, so the
        // weighted BCE collapses to log 2 regardless of alpha.
        let env = chain_world();
        let cfg = DiscConfig {
            backend: DiscBackendKind::Tabular,
            ..DiscConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = TransitionDiscriminator::new(&env, &cfg, &mut rng);
        let mut buf = ReplayBuffer::new(64, 2);
        let s = env.state(0).unwrap();
        let out = env
            .step(&s, &env.action(0).unwrap())
            .unwrap();
        buf.push(Transition {
            s: s.clone(),
            a: env.action(0).unwrap(),
            s_next: out.s_next,
            terminal: out.done,
        });
        let pos = buf.build_positive_batch(8).unwrap();
        let neg = buf.build_negative_batch(4, 4, true).unwrap();
        let loss = d.train_step(&pos, &neg).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_give_near_zero_loss() {
        // A saturated model (D = 1 on positives, D = 0 on negatives) sits at
        // the loss minimum, bounded by 2 * -ln(1 - eps) after clamping.
        let env = chain_world();
        let n = env.num_states();
        let mut logits = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                logits[i * n + j] = if oracle_reachable(&env, i, j).unwrap() {
                    1e3
                } else {
                    -1e3
                };
            }
        }
        let d = TransitionDiscriminator {
            backend: Backend::Tabular {
                online_logits: logits.clone(),
                target_logits: logits,
                num_states: n,
                learning_rate: 1.0,
            },
            alpha: 0.99,
            lambda: 1e-4,
        };
        let mut buf = ReplayBuffer::new(64, 2);
        let s = env.state(2).unwrap();
        let out = env.step(&s, &env.action(0).unwrap()).unwrap();
        buf.push(Transition {
            s,
            a: env.action(0).unwrap(),
            s_next: out.s_next,
            terminal: out.done,
        });
        let pos = buf.build_positive_batch(4).unwrap();
        let neg = buf.build_negative_batch(0, 4, true).unwrap();
        let loss = d.heldout_loss(&pos, &neg);
        assert!(loss <= 2.0 * -(1.0 - PROB_EPS).ln() + 1e-12, "loss {loss}");
        assert!(loss >= 0.0);
    }

    #[test]
    fn empty_batches_rejected() {
        let env = chain_world();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = TransitionDiscriminator::new(&env, &DiscConfig::default(), &mut rng);
        let pos = PairBatch::empty(PairLabel::Positive);
        let neg = vec![PairBatch::empty(PairLabel::Contrastive)];
        assert!(matches!(
            d.train_step(&pos, &neg),
            Err(DiscError::EmptyBatch("positive"))
        ));
    }

    #[test]
    fn oracle_matches_adjacency_on_grid() {
        let env = fig1_world();
        // Free adjacent cells in the open interior.
        let a = env.id_of(crate::env::Cell::new(3, 3));
        let b = env.id_of(crate::env::Cell::new(4, 3));
        assert!(oracle_reachable(&env, a, b).unwrap());
        // Two apart is never one step.
        let c = env.id_of(crate::env::Cell::new(5, 3));
        assert!(!oracle_reachable(&env, a, c).unwrap());
        // Walled neighbors are unreachable: trap cell and the expert cell
        // above it.
        let trap = env.id_of(crate::env::Cell::new(3, 1));
        let above = env.id_of(crate::env::Cell::new(3, 0));
        assert!(!oracle_reachable(&env, trap, above).unwrap());
    }

    #[test]
    fn oracle_self_loop_requires_blocked_direction() {
        let env = fig1_world();
        // Corner cell bumps, so (s, s) is reachable.
        assert!(oracle_reachable(&env, 0, 0).unwrap());
        // A fully open interior cell cannot stay put in one action.
        let open = env.id_of(crate::env::Cell::new(4, 3));
        assert!(!oracle_reachable(&env, open, open).unwrap());
    }

    #[test]
    fn oracle_chain_semantics() {
        let env = chain_world();
        assert!(oracle_reachable(&env, 3, 4).unwrap());
        assert!(!oracle_reachable(&env, 4, 3).unwrap());
    }

    #[test]
    fn multistep_oracle_k1_matches_single_step_exhaustively() {
        let env = GridWorld::from_map(concat!(
            "+-+-+-+-+\n",
            "|G      |\n",
            "+ + +-+ +\n",
            "|   | | |\n",
            "+ + + + +\n",
            "|       |\n",
            "+ + + + +\n",
            "|       |\n",
            "+-+-+-+-+\n",
        ))
        .unwrap();
        for i in 0..env.num_states() {
            for j in 0..env.num_states() {
                assert_eq!(
                    oracle_reachable_k(&env, i, j, 1).unwrap(),
                    oracle_reachable(&env, i, j).unwrap(),
                    "pair ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn multistep_oracle_corridor_distances() {
        // 1 x 4 corridor: cells 3 apart need k = 3; with k = 2 the only
        // shortcut would be a bump self-loop, which does not help.
        let env = GridWorld::from_map("+-+-+-+-+\n|G      |\n+-+-+-+-+\n").unwrap();
        assert!(oracle_reachable_k(&env, 3, 0, 3).unwrap());
        assert!(!oracle_reachable_k(&env, 3, 0, 2).unwrap());
        // Bump self-loops make (s, s) reachable at any k >= 1.
        assert!(oracle_reachable_k(&env, 2, 2, 1).unwrap());
    }

    #[test]
    fn multistep_oracle_is_monotone_in_k() {
        let env = fig1_world();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let i = rng.gen_range(0..env.num_states());
            let j = rng.gen_range(0..env.num_states());
            let mut prev = false;
            for k in 1..=6 {
                let cur = oracle_reachable_k(&env, i, j, k).unwrap();
                assert!(!prev || cur, "reachability lost at k={k} for ({i}, {j})");
                prev = cur;
            }
        }
    }

    #[test]
    fn oracle_as_discriminator_scores_perfectly() {
        let env = fig1_world();
        let (_, heldout) = walk_buffer(&env, 2000, 23);
        let oracle_score = |a: &State, b: &State| {
            if oracle_reachable(&env, a.id, b.id).unwrap() {
                1.0
            } else {
                0.0
            }
        };
        let report =
            evaluate_accuracy_with(oracle_score, &env, &heldout, 0.5, 7).unwrap();
        assert_eq!(report.acc_positive, Some(1.0));
        assert_eq!(report.acc_contrastive, Some(1.0));
        // Grid moves are all reversible (4-adjacency is symmetric and bumps
        // reverse to themselves), so every reversal is excluded: the
        // reversed accuracy is only defined on asymmetric dynamics.
        assert_eq!(report.acc_reversed, None);
        assert_eq!(report.n_reversed, 0);
        assert_eq!(report.n_reversed_excluded, heldout.len());

        // On the chain the reversed category is populated and the oracle
        // still scores perfectly.
        let chain = chain_world();
        let (_, chain_heldout) = walk_buffer(&chain, 2000, 29);
        let chain_score = |a: &State, b: &State| {
            if oracle_reachable(&chain, a.id, b.id).unwrap() {
                1.0
            } else {
                0.0
            }
        };
        let report =
            evaluate_accuracy_with(chain_score, &chain, &chain_heldout, 0.5, 11).unwrap();
        assert_eq!(report.acc_positive, Some(1.0));
        assert_eq!(report.acc_contrastive, Some(1.0));
        assert_eq!(report.acc_reversed, Some(1.0));
        assert!(report.n_reversed > 0);
    }

    #[test]
    fn empty_heldout_rejected() {
        let env = fig1_world();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = TransitionDiscriminator::new(&env, &DiscConfig::default(), &mut rng);
        assert!(matches!(
            evaluate_accuracy(&d, &env, &[], 0.5, 0),
            Err(DiscError::EmptyHeldout)
        ));
    }

    #[test]
    fn trained_grid_discriminator_separates_stored_pairs() {
        let env = fig1_world();
        let (mut buf, heldout) = walk_buffer(&env, 4000, 31);
        let d = train(&env, &DiscConfig::default(), &mut buf, 1500, 77);
        // A stored positive pair scores above threshold.
        let t = &heldout[0];
        assert!(d.predict(&t.s, &t.s_next, true) > 0.5);
    }

    #[test]
    fn trained_chain_discriminator_rejects_reversals() {
        let env = chain_world();
        let (mut buf, _) = walk_buffer(&env, 3000, 37);
        let d = train(&env, &DiscConfig::default(), &mut buf, 1200, 79);
        for p in 1..env.num_states() {
            let hi = env.state(p).unwrap();
            let lo = env.state(p - 1).unwrap();
            assert!(
                d.predict(&hi, &lo, true) < 0.5,
                "reversed pair ({p}, {}) not rejected",
                p - 1
            );
        }
    }

    #[test]
    fn target_stays_between_old_target_and_online() {
        let env = fig1_world();
        let (mut buf, _) = walk_buffer(&env, 500, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut d = TransitionDiscriminator::new(&env, &DiscConfig::default(), &mut rng);
        for _ in 0..5 {
            let (_, target_before) = d.nets().unwrap();
            let target_before = target_before.clone();
            let pos = buf.build_positive_batch(16).unwrap();
            let neg = buf.build_negative_batch(8, 8, true).unwrap();
            d.train_step(&pos, &neg).unwrap();
            let (online_after, target_after) = d.nets().unwrap();
            for ((o, t0), t1) in online_after
                .layers()
                .iter()
                .zip(target_before.layers())
                .zip(target_after.layers())
            {
                for ((ov, t0v), t1v) in o.w.iter().zip(&t0.w).zip(&t1.w) {
                    assert!(*t1v >= ov.min(*t0v) - 1e-12 && *t1v <= ov.max(*t0v) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn heldout_loss_trend_is_non_increasing() {
        // Median over 5 seeds: mean held-out loss over the first quartile of
        // training steps vs the last quartile.
        let env = fig1_world();
        let mut ratios = Vec::new();
        for seed in 0..5u64 {
            let (mut buf, heldout) = walk_buffer(&env, 2000, 100 + seed);
            let hold_pos = PairBatch {
                pairs: heldout.iter().map(|t| (t.s.clone(), t.s_next.clone())).collect(),
                label: PairLabel::Positive,
            };
            let hold_neg = vec![PairBatch {
                pairs: heldout.iter().map(|t| (t.s_next.clone(), t.s.clone())).collect(),
                label: PairLabel::Reversed,
            }];
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut d = TransitionDiscriminator::new(&env, &DiscConfig::default(), &mut rng);
            let steps = 400;
            let mut losses = Vec::with_capacity(steps);
            for _ in 0..steps {
                let pos = buf.build_positive_batch(32).unwrap();
                let neg = buf.build_negative_batch(16, 16, true).unwrap();
                d.train_step(&pos, &neg).unwrap();
                losses.push(d.heldout_loss(&hold_pos, &hold_neg));
            }
            let q = steps / 4;
            let first: f64 = losses[..q].iter().sum::<f64>() / q as f64;
            let last: f64 = losses[steps - q..].iter().sum::<f64>() / q as f64;
            ratios.push(last - first);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[2];
        assert!(median <= 0.0, "median held-out loss change {median}");
    }

    #[test]
    fn checkpoint_round_trips() {
        let env = fig1_world();
        let (mut buf, _) = walk_buffer(&env, 500, 51);
        let d = train(&env, &DiscConfig::default(), &mut buf, 50, 53);
        let bytes = d.to_bytes();
        let loaded = TransitionDiscriminator::from_bytes(&bytes, 1e-3).unwrap();
        assert_eq!(loaded.alpha, d.alpha);
        assert_eq!(loaded.lambda, d.lambda);
        let a = env.state(10).unwrap();
        let b = env.state(11).unwrap();
        assert_eq!(loaded.predict(&a, &b, true), d.predict(&a, &b, true));
        assert_eq!(loaded.to_bytes(), bytes);
    }
}

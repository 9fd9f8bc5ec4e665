//! Offline learners that consume priority weights.
//!
//! Prioritization stays outside the learner: each algorithm just asks its
//! samplers for minibatch indices. Policy evaluation keeps a uniform sampler
//! while policy improvement and the behavior-cloning constraint read from the
//! prioritized one; [`Wiring`] selects which of the three terms actually use
//! it.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::envs::{empirical_policy, exact_q_values, StochasticPolicy, TabularMdp};
use crate::error::OdprError;
use crate::priority::PriorityWeights;
use crate::rng::{stream_rng, STREAM_ACTOR_SAMPLER, STREAM_EVAL_SAMPLER};
use crate::sampling::IndexSampler;
use crate::value::{Activation, MlpValueFn};
use crate::Result;

/// Which loss terms draw from the prioritized sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wiring {
    /// Everything uniform; the weights are ignored.
    Vanilla,
    /// Only the behavior-cloning constraint is prioritized.
    Cnt,
    /// Policy improvement and the constraint are prioritized (default).
    Dr,
    /// Evaluation, improvement, and constraint are all prioritized.
    All,
}

impl Wiring {
    pub fn parse(s: &str) -> Result<Wiring> {
        match s {
            "vanilla" => Ok(Wiring::Vanilla),
            "cnt" => Ok(Wiring::Cnt),
            "dr" => Ok(Wiring::Dr),
            "all" => Ok(Wiring::All),
            other => Err(OdprError::invalid(format!(
                "unknown wiring '{other}' (expected vanilla|cnt|dr|all)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wiring::Vanilla => "vanilla",
            Wiring::Cnt => "cnt",
            Wiring::Dr => "dr",
            Wiring::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Behavior-cloning weight in the actor objective.
    pub alpha: f64,
    /// Actor updates happen every `policy_delay` critic steps.
    pub policy_delay: usize,
    pub hidden: Vec<usize>,
    pub log_every: usize,
    pub seed: u64,
    pub wiring: Wiring,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 256,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha: 1.0,
            policy_delay: 2,
            hidden: vec![64, 64],
            log_every: 500,
            seed: 0,
            wiring: Wiring::Dr,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.policy_delay == 0 {
            return Err(OdprError::invalid(
                "steps, batch_size and policy_delay must be positive",
            ));
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OdprError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(OdprError::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(OdprError::invalid("hidden sizes must be positive"));
        }
        if self.log_every == 0 {
            return Err(OdprError::invalid("log_every must be positive"));
        }
        Ok(())
    }
}

/// A behavior-cloned policy: a constant action for continuous single-state
/// data, or a state-action table for integral datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum BcPolicy {
    Action(Vec<f64>),
    Tabular(StochasticPolicy),
}

/// Clone the (prioritized) behavior policy. Integral datasets get the exact
/// weighted maximum-likelihood table; continuous data is regressed by SGD on
/// minibatches from the prioritized sampler, which converges to the weighted
/// mean action.
pub fn train_bc(d: &Dataset, weights: &PriorityWeights, cfg: &TrainConfig) -> Result<BcPolicy> {
    cfg.validate()?;
    if weights.len() != d.len() {
        return Err(OdprError::invariant(format!(
            "weight vector covers {} transitions, dataset has {}",
            weights.len(),
            d.len()
        )));
    }
    if d.integral_states().is_some() && d.integral_actions().is_some() {
        return Ok(BcPolicy::Tabular(empirical_policy(d, weights)?));
    }
    let mut sampler =
        IndexSampler::weighted(weights, stream_rng(cfg.seed, STREAM_ACTOR_SAMPLER))?;
    let k = d.action_dim();
    let mut theta = vec![0.0f64; k];
    for _ in 0..cfg.steps {
        let batch = sampler.sample_batch(cfg.batch_size);
        let mut mean = vec![0.0f64; k];
        for &i in &batch {
            for (m, &a) in mean.iter_mut().zip(&d.get(i).action) {
                *m += a as f64 / cfg.batch_size as f64;
            }
        }
        for (t, m) in theta.iter_mut().zip(&mean) {
            *t -= cfg.actor_lr * 2.0 * (*t - m);
        }
    }
    Ok(BcPolicy::Action(theta))
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub critic_loss: f64,
    pub q_at_action: f64,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Td3BcRun {
    pub action: Vec<f64>,
    pub critics: (MlpValueFn, MlpValueFn),
    pub log: Vec<LogRow>,
}

/// TD3+BC specialized to single-state (contextual bandit) data: the actor is
/// a learnable action vector clipped to `[-1, 1]`, the twin critics condition
/// on the action alone, and critic targets are the raw rewards (nothing to
/// bootstrap from). The actor ascends `Q1` while the BC term pulls it toward
/// the mean action of the constraint batch:
/// `theta += lr * (dQ1/da - 2 * alpha * (theta - a_bar))`.
pub fn train_td3bc_bandit(
    d: &Dataset,
    weights: &PriorityWeights,
    cfg: &TrainConfig,
) -> Result<Td3BcRun> {
    cfg.validate()?;
    if weights.len() != d.len() {
        return Err(OdprError::invariant(format!(
            "weight vector covers {} transitions, dataset has {}",
            weights.len(),
            d.len()
        )));
    }
    let k = d.action_dim();
    let actions: Vec<Vec<f64>> = d
        .transitions()
        .iter()
        .map(|t| t.action.iter().map(|&a| a as f64).collect())
        .collect();
    let rewards: Vec<f64> = d.transitions().iter().map(|t| t.reward as f64).collect();

    let eval_rng = stream_rng(cfg.seed, STREAM_EVAL_SAMPLER);
    let mut eval = match cfg.wiring {
        Wiring::All => IndexSampler::weighted(weights, eval_rng)?,
        _ => IndexSampler::uniform(d.len(), eval_rng)?,
    };
    let actor_rng = stream_rng(cfg.seed, STREAM_ACTOR_SAMPLER);
    let mut actor_sampler = match cfg.wiring {
        Wiring::Vanilla => IndexSampler::uniform(d.len(), actor_rng)?,
        _ => IndexSampler::weighted(weights, actor_rng)?,
    };
    // In the constraint-only wiring the improvement term keeps its own
    // uniform draws, so every actor step consumes one improvement batch and
    // one constraint batch.
    let mut cnt_uniform = match cfg.wiring {
        Wiring::Cnt => {
            Some(IndexSampler::uniform(d.len(), stream_rng(cfg.seed, "improvement-sampler"))?)
        }
        _ => None,
    };

    let mut sizes = vec![k];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut critics = Vec::with_capacity(2);
    for c in 0..2 {
        let mut rng = stream_rng(cfg.seed, &format!("init-critic-{c}"));
        critics.push(MlpValueFn::new(sizes.clone(), Activation::Tanh, &mut rng)?);
    }

    let mut theta = vec![0.0f64; k];
    let mut log = Vec::new();
    let mut last_critic_loss = f64::NAN;
    let mut ys = vec![0.0f64; cfg.batch_size];
    for step in 0..cfg.steps {
        let batch = eval.sample_batch(cfg.batch_size);
        let xs: Vec<&[f64]> = batch.iter().map(|&i| actions[i].as_slice()).collect();
        for (slot, &i) in ys.iter_mut().zip(&batch) {
            *slot = rewards[i];
        }
        for (c, critic) in critics.iter_mut().enumerate() {
            let (loss, grad) = critic.grad_mse(&xs, &ys);
            if !loss.is_finite() {
                return Err(OdprError::Divergence {
                    step,
                    msg: format!("critic {c} loss is {loss}"),
                });
            }
            if c == 0 {
                last_critic_loss = loss;
            }
            critic.sgd_step(cfg.critic_lr, &grad);
        }

        if (step + 1) % cfg.policy_delay == 0 {
            let improvement_batch = match cnt_uniform.as_mut() {
                Some(s) => s.sample_batch(cfg.batch_size),
                None => actor_sampler.sample_batch(cfg.batch_size),
            };
            let constraint_batch = match cfg.wiring {
                Wiring::Cnt => actor_sampler.sample_batch(cfg.batch_size),
                _ => improvement_batch,
            };
            let mut a_bar = vec![0.0f64; k];
            for &i in &constraint_batch {
                for (m, a) in a_bar.iter_mut().zip(&actions[i]) {
                    *m += a / cfg.batch_size as f64;
                }
            }
            // Single state, so Q1's action gradient is batch-independent.
            let dq = critics[0].input_gradient(&theta);
            for ((t, g), m) in theta.iter_mut().zip(&dq).zip(&a_bar) {
                *t += cfg.actor_lr * (g - 2.0 * cfg.alpha * (*t - m));
                *t = t.clamp(-1.0, 1.0);
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(OdprError::Divergence {
                    step,
                    msg: format!("actor action is {theta:?}"),
                });
            }
        }

        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log.push(LogRow {
                step,
                critic_loss: last_critic_loss,
                q_at_action: critics[0].forward(&theta),
                action: theta.clone(),
            });
        }
    }
    let c1 = critics.pop().unwrap();
    let c0 = critics.pop().unwrap();
    Ok(Td3BcRun { action: theta, critics: (c0, c1), log })
}

/// Best policy within a per-state KL ball around the behavior policy:
/// `pi(a|s) ~ beta(a|s) * exp(lambda * Q(s,a))` with `lambda >= 0` chosen by
/// bisection so that `KL(pi || beta) = epsilon` (tolerance 1e-8). `epsilon=0`
/// returns `beta`; budgets beyond the greedy limit return the
/// best-supported-action policy.
pub fn constrained_tabular_search(
    mdp: &TabularMdp,
    beta: &StochasticPolicy,
    epsilon: f64,
) -> Result<StochasticPolicy> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(OdprError::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let q = exact_q_values(mdp, beta)?;
    let na = mdp.n_actions;
    let mut probs = Vec::with_capacity(mdp.n_states * na);
    for s in 0..mdp.n_states {
        let brow = beta.row(s);
        let qrow = &q[s * na..(s + 1) * na];
        probs.extend_from_slice(&tilt_row(brow, qrow, epsilon));
    }
    StochasticPolicy::new(mdp.n_states, na, probs)
}

fn tilt_row(beta: &[f64], q: &[f64], epsilon: f64) -> Vec<f64> {
    let supported: Vec<usize> = (0..beta.len()).filter(|&a| beta[a] > 0.0).collect();
    let q_max = supported.iter().map(|&a| q[a]).fold(f64::NEG_INFINITY, f64::max);
    let q_min = supported.iter().map(|&a| q[a]).fold(f64::INFINITY, f64::min);
    if epsilon == 0.0 || q_max - q_min < 1e-15 {
        return beta.to_vec();
    }
    // The lambda -> inf limit keeps only the argmax set, beta-proportional;
    // its KL is the largest reachable budget.
    let argmax_mass: f64 = supported
        .iter()
        .filter(|&&a| q_max - q[a] < 1e-12)
        .map(|&a| beta[a])
        .sum();
    let kl_limit = -argmax_mass.ln();
    if epsilon >= kl_limit - 1e-10 {
        let mut row = vec![0.0; beta.len()];
        for &a in &supported {
            if q_max - q[a] < 1e-12 {
                row[a] = beta[a] / argmax_mass;
            }
        }
        return row;
    }

    let kl_of = |lambda: f64| -> (f64, Vec<f64>) {
        // Log-space softmax of ln(beta) + lambda * q over the support.
        let logits: Vec<f64> =
            supported.iter().map(|&a| beta[a].ln() + lambda * q[a]).collect();
        let m = logits.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
        let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
        let log_z = m + z.ln();
        let mut row = vec![0.0; beta.len()];
        let mut kl = 0.0;
        for (&a, &l) in supported.iter().zip(&logits) {
            let p = (l - log_z).exp();
            row[a] = p;
            if p > 0.0 {
                kl += p * (p.ln() - beta[a].ln());
            }
        }
        (kl, row)
    };

    let mut hi = 1.0;
    while kl_of(hi).0 < epsilon {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (kl, row) = kl_of(mid);
        if (kl - epsilon).abs() <= 1e-8 {
            return row;
        }
        if kl < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    kl_of(0.5 * (lo + hi)).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::envs::{exact_policy_value, random_mdp, sample_bandit_dataset, GaussianBandit};

    fn two_action_dataset() -> Dataset {
        let ts = vec![
            Transition { state: vec![0.5], action: vec![-1.0], reward: 0.0, next_state: vec![0.5], terminal: true },
            Transition { state: vec![0.5], action: vec![1.0], reward: 1.0, next_state: vec![0.5], terminal: true },
        ];
        Dataset::new(ts, None).unwrap()
    }

    #[test]
    fn bc_converges_to_weighted_mean_action() {
        let d = two_action_dataset();
        let w = PriorityWeights::try_new(vec![0.25, 0.75]).unwrap();
        let cfg = TrainConfig { steps: 3000, batch_size: 64, actor_lr: 5e-3, seed: 7, ..Default::default() };
        match train_bc(&d, &w, &cfg).unwrap() {
            BcPolicy::Action(theta) => {
                // Weighted mean action: 0.25 * (-1) + 0.75 * 1 = 0.5.
                assert!((theta[0] - 0.5).abs() < 0.05, "theta = {theta:?}");
            }
            other => panic!("expected constant action, got {other:?}"),
        }
    }

    #[test]
    fn bc_on_integral_data_is_exact_weighted_table() {
        let ts = vec![
            Transition { state: vec![0.0], action: vec![0.0], reward: 0.0, next_state: vec![1.0], terminal: true },
            Transition { state: vec![0.0], action: vec![1.0], reward: 0.0, next_state: vec![1.0], terminal: true },
            Transition { state: vec![0.0], action: vec![1.0], reward: 0.0, next_state: vec![1.0], terminal: true },
        ];
        let d = Dataset::new(ts, None).unwrap();
        let w = PriorityWeights::uniform(3);
        let cfg = TrainConfig::default();
        match train_bc(&d, &w, &cfg).unwrap() {
            BcPolicy::Tabular(pi) => {
                assert!((pi.prob(0, 0) - 1.0 / 3.0).abs() < 1e-12);
                assert!((pi.prob(0, 1) - 2.0 / 3.0).abs() < 1e-12);
            }
            other => panic!("expected table, got {other:?}"),
        }
    }

    fn quick_cfg(wiring: Wiring, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 600,
            batch_size: 64,
            actor_lr: 2e-3,
            critic_lr: 2e-3,
            hidden: vec![16, 16],
            log_every: 200,
            seed,
            wiring,
            ..Default::default()
        }
    }

    #[test]
    fn td3bc_is_deterministic_per_seed() {
        let b = GaussianBandit::default();
        let d = sample_bandit_dataset(&b, 40, 11).unwrap();
        let w = PriorityWeights::uniform(d.len());
        let cfg = quick_cfg(Wiring::Dr, 3);
        let r1 = train_td3bc_bandit(&d, &w, &cfg).unwrap();
        let r2 = train_td3bc_bandit(&d, &w, &cfg).unwrap();
        assert_eq!(r1.action, r2.action);
        assert_eq!(r1.critics.0.params, r2.critics.0.params);
        assert!(!r1.log.is_empty());
    }

    #[test]
    fn critic_stream_ignores_actor_weights_when_not_all() {
        let b = GaussianBandit::default();
        let d = sample_bandit_dataset(&b, 40, 12).unwrap();
        let uniform = PriorityWeights::uniform(d.len());
        let mut scores = vec![1.0; d.len()];
        scores[0] = 50.0;
        let skewed = PriorityWeights::from_scores(scores).unwrap();
        // No actor updates: policy_delay beyond the horizon isolates the
        // critics, which must then be identical for any actor weights.
        let cfg = TrainConfig { policy_delay: 10_000, ..quick_cfg(Wiring::Dr, 5) };
        let r1 = train_td3bc_bandit(&d, &uniform, &cfg).unwrap();
        let r2 = train_td3bc_bandit(&d, &skewed, &cfg).unwrap();
        assert_eq!(r1.critics.0.params, r2.critics.0.params);
        assert_eq!(r1.critics.1.params, r2.critics.1.params);

        let all = TrainConfig { policy_delay: 10_000, ..quick_cfg(Wiring::All, 5) };
        let r3 = train_td3bc_bandit(&d, &skewed, &all).unwrap();
        assert_ne!(r1.critics.0.params, r3.critics.0.params);
    }

    #[test]
    fn prioritized_constraint_moves_actor_toward_heavy_actions() {
        let b = GaussianBandit::default();
        let d = sample_bandit_dataset(&b, 60, 13).unwrap();
        // Weight mass on the best mode's transitions only.
        let scores: Vec<f64> = d
            .transitions()
            .iter()
            .map(|t| if t.reward > 2.0 { 1.0 } else { 0.0 })
            .collect();
        let w = PriorityWeights::from_scores(scores).unwrap();
        let cfg = TrainConfig { alpha: 25.0, ..quick_cfg(Wiring::Dr, 9) };
        let run = train_td3bc_bandit(&d, &w, &cfg).unwrap();
        // With a dominant BC term the actor tracks the weighted action mean,
        // i.e. the best mode's center.
        assert!(b.distance_to_optimal(&run.action) < 0.15, "action = {:?}", run.action);
    }

    #[test]
    fn constrained_search_limits() {
        let mdp = random_mdp(5, 3, 21);
        let beta = StochasticPolicy::uniform(5, 3);
        let same = constrained_tabular_search(&mdp, &beta, 0.0).unwrap();
        assert_eq!(same.probs, beta.probs);

        let q = exact_q_values(&mdp, &beta).unwrap();
        let greedy = constrained_tabular_search(&mdp, &beta, 50.0).unwrap();
        for s in 0..5 {
            let row = &q[s * 3..(s + 1) * 3];
            let best = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!((greedy.prob(s, best) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constrained_search_hits_kl_budget_and_improves() {
        let mdp = random_mdp(6, 4, 2);
        let beta = StochasticPolicy::uniform(6, 4);
        let j_beta = exact_policy_value(&mdp, &beta).unwrap();
        let mut prev = j_beta;
        for &eps in &[0.01, 0.05, 0.2] {
            let pi = constrained_tabular_search(&mdp, &beta, eps).unwrap();
            for s in 0..6 {
                let kl: f64 = (0..4)
                    .filter(|&a| pi.prob(s, a) > 0.0)
                    .map(|a| pi.prob(s, a) * (pi.prob(s, a) / beta.prob(s, a)).ln())
                    .sum();
                assert!((kl - eps).abs() <= 1e-7, "state {s}: KL {kl} vs {eps}");
            }
            let j = exact_policy_value(&mdp, &pi).unwrap();
            assert!(j >= prev - 1e-12, "value must grow with the budget");
            prev = j;
        }
        assert!(prev > j_beta);
    }

    #[test]
    fn rejects_mismatched_weights() {
        let d = two_action_dataset();
        let w = PriorityWeights::uniform(5);
        let cfg = TrainConfig::default();
        assert!(train_bc(&d, &w, &cfg).is_err());
        assert!(train_td3bc_bandit(&d, &w, &cfg).is_err());
    }
}

//! Toy environments and exact tabular machinery.
//!
//! Everything here is small enough to evaluate in closed form, which is what
//! makes it useful: the sampled pipeline elsewhere in the crate is checked
//! against these exact quantities. The prioritized reweighting of a behavior
//! policy,
//!
//! ```text
//! beta'(a|s) ∝ omega(A_beta(s, a)) * beta(a|s)
//! ```
//!
//! improves the policy value for any non-negative, monotonically increasing
//! `omega`, because per state the advantage has beta-mean zero: whatever mass
//! omega moves, it moves from below-average actions to above-average ones.
//! `prioritized_policy` implements the reweighting exactly and the test suite
//! checks the improvement guarantee against `exact_policy_value`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Transition};
use crate::error::OdprError;
use crate::priority::{AdvantageVector, PriorityWeights};
use crate::rng::OdprRng;
use crate::value::solve_tabular_value;
use crate::Result;
use rand::SeedableRng;

/// Finite MDP with dense transition and reward tables.
///
/// `transition[s * n_actions * n_states + a * n_states + s2]` is
/// `P(s2 | s, a)`; `reward[s * n_actions + a]` is the expected immediate
/// reward. `gamma == 1.0` is allowed for episodic problems whose terminal
/// states are absorbing with zero reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let mdp = TabularMdp { n_states, n_actions, transition, reward, gamma, initial_dist };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(OdprError::invariant("MDP needs at least one state and action"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(OdprError::invariant(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.transition.len() != self.n_states * self.n_actions * self.n_states {
            return Err(OdprError::invariant("transition table has wrong size"));
        }
        if self.reward.len() != self.n_states * self.n_actions {
            return Err(OdprError::invariant("reward table has wrong size"));
        }
        if self.initial_dist.len() != self.n_states {
            return Err(OdprError::invariant("initial distribution has wrong size"));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.t_row(s, a);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                    return Err(OdprError::invariant(format!(
                        "transition row (s={s}, a={a}) is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if (init_sum - 1.0).abs() > 1e-9 || self.initial_dist.iter().any(|&p| p < 0.0) {
            return Err(OdprError::invariant("initial distribution is not a distribution"));
        }
        Ok(())
    }

    pub fn t_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: TabularMdp =
            serde_json::from_str(text).map_err(|e| OdprError::format(format!("MDP json: {e}")))?;
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Row-stochastic policy table: `probs[s * n_actions + a] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let p = StochasticPolicy { n_states, n_actions, probs };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.n_states * self.n_actions {
            return Err(OdprError::invariant("policy table has wrong size"));
        }
        for s in 0..self.n_states {
            let row = self.row(s);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(OdprError::invariant(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

/// `J(pi)`: expected discounted return from the initial distribution.
pub fn exact_policy_value(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<f64> {
    let v = solve_tabular_value(mdp, pi)?;
    Ok(mdp.initial_dist.iter().zip(&v.values).map(|(p, v)| p * v).sum())
}

/// Q-table of a policy: `q[s * n_actions + a]`.
pub fn exact_q_values(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<Vec<f64>> {
    let v = solve_tabular_value(mdp, pi)?;
    let mut q = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let future: f64 = mdp.t_row(s, a).iter().zip(&v.values).map(|(p, v)| p * v).sum();
            q[s * mdp.n_actions + a] = mdp.r(s, a) + mdp.gamma * future;
        }
    }
    Ok(q)
}

/// Advantage table `A(s, a) = Q(s, a) - V(s)` of a policy.
pub fn exact_advantages(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<Vec<f64>> {
    let q = exact_q_values(mdp, pi)?;
    let mut adv = q;
    for s in 0..mdp.n_states {
        let v: f64 = (0..mdp.n_actions).map(|a| pi.prob(s, a) * adv[s * mdp.n_actions + a]).sum();
        for a in 0..mdp.n_actions {
            adv[s * mdp.n_actions + a] -= v;
        }
    }
    Ok(adv)
}

/// Discounted state occupancy `d_pi(s) = sum_t gamma^t P(s_t = s)`, from the
/// linear system `d = mu_0 + gamma * P_pi^T d`. Unnormalized: sums to
/// `1 / (1 - gamma)`. Requires `gamma < 1`.
pub fn discounted_occupancy(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<Vec<f64>> {
    if mdp.gamma >= 1.0 {
        return Err(OdprError::Singular(
            "discounted occupancy needs gamma < 1".to_string(),
        ));
    }
    let n = mdp.n_states;
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for s2 in 0..n {
        for s in 0..n {
            let mut p = 0.0;
            for a in 0..mdp.n_actions {
                p += pi.prob(s, a) * mdp.t_row(s, a)[s2];
            }
            m[(s2, s)] = (if s == s2 { 1.0 } else { 0.0 }) - mdp.gamma * p;
        }
    }
    let mu = nalgebra::DVector::from_column_slice(&mdp.initial_dist);
    let d = m
        .lu()
        .solve(&mu)
        .ok_or_else(|| OdprError::Singular("occupancy system is singular".to_string()))?;
    Ok(d.iter().copied().collect())
}

/// Reweight a behavior policy by a priority function of its own advantage:
/// `beta'(a|s) ∝ omega(A_beta(s, a)) * beta(a|s)`.
///
/// `omega` must be non-negative on the advantages it is applied to. States
/// whose reweighted row sums to zero keep their original `beta` row.
pub fn prioritized_policy(
    mdp: &TabularMdp,
    beta: &StochasticPolicy,
    omega: impl Fn(f64) -> f64,
) -> Result<StochasticPolicy> {
    let adv = exact_advantages(mdp, beta)?;
    let mut probs = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        let mut row = vec![0.0; mdp.n_actions];
        let mut sum = 0.0;
        for a in 0..mdp.n_actions {
            let w = omega(adv[s * mdp.n_actions + a]);
            if w < 0.0 {
                return Err(OdprError::invariant(format!(
                    "priority function returned negative weight {w} at (s={s}, a={a})"
                )));
            }
            row[a] = w * beta.prob(s, a);
            sum += row[a];
        }
        for a in 0..mdp.n_actions {
            probs[s * mdp.n_actions + a] =
                if sum > 1e-300 { row[a] / sum } else { beta.prob(s, a) };
        }
    }
    StochasticPolicy::new(mdp.n_states, mdp.n_actions, probs)
}

/// One exact prioritization round with the linear priority
/// `omega(A) = A - min_supported A` (the same rule the sampled pipeline
/// applies to per-transition advantages).
pub fn linear_tilt(mdp: &TabularMdp, beta: &StochasticPolicy) -> Result<StochasticPolicy> {
    let adv = exact_advantages(mdp, beta)?;
    let mut min_adv = f64::INFINITY;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            if beta.prob(s, a) > 0.0 {
                min_adv = min_adv.min(adv[s * mdp.n_actions + a]);
            }
        }
    }
    prioritized_policy(mdp, beta, |a| (a - min_adv).max(0.0))
}

/// Transition-count MLE of the behavior policy from a weighted dataset with
/// integral states and actions. Unvisited states get a uniform row.
pub fn empirical_policy(d: &Dataset, w: &PriorityWeights) -> Result<StochasticPolicy> {
    let ts = d
        .integral_states()
        .ok_or_else(|| OdprError::invalid("empirical policy needs integral states"))?;
    let (actions, n_actions) = d
        .integral_actions()
        .ok_or_else(|| OdprError::invalid("empirical policy needs integral actions"))?;
    if w.len() != d.len() {
        return Err(OdprError::invariant("weight vector length does not match dataset"));
    }
    let n_states = ts.n_states;
    let mut mass = vec![0.0; n_states * n_actions];
    for i in 0..d.len() {
        mass[ts.states[i] * n_actions + actions[i]] += w.as_slice()[i];
    }
    let mut probs = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let sum: f64 = mass[s * n_actions..(s + 1) * n_actions].iter().sum();
        for a in 0..n_actions {
            probs[s * n_actions + a] =
                if sum > 1e-300 { mass[s * n_actions + a] / sum } else { 1.0 / n_actions as f64 };
        }
    }
    StochasticPolicy::new(n_states, n_actions, probs)
}

/// Exact per-transition advantages of the weighted empirical behavior policy:
/// `a_i = r_i + gamma * (1 - terminal_i) * V(s'_i) - V(s_i)` with `V` solved
/// in closed form on `mdp`.
pub fn exact_dataset_advantages(
    mdp: &TabularMdp,
    d: &Dataset,
    w: &PriorityWeights,
) -> Result<AdvantageVector> {
    let beta = empirical_policy(d, w)?;
    if beta.n_states > mdp.n_states || beta.n_actions > mdp.n_actions {
        return Err(OdprError::invariant("dataset ids exceed MDP dimensions"));
    }
    let beta = if beta.n_states < mdp.n_states || beta.n_actions < mdp.n_actions {
        // Pad with uniform rows/actions so the solve covers the full MDP.
        let mut probs = vec![0.0; mdp.n_states * mdp.n_actions];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                probs[s * mdp.n_actions + a] = if s < beta.n_states && a < beta.n_actions {
                    beta.prob(s, a)
                } else if s >= beta.n_states {
                    1.0 / mdp.n_actions as f64
                } else {
                    0.0
                };
            }
        }
        StochasticPolicy::new(mdp.n_states, mdp.n_actions, probs)?
    } else {
        beta
    };
    let v = solve_tabular_value(mdp, &beta)?;
    let ts = d.integral_states().expect("checked by empirical_policy");
    let mut out = Vec::with_capacity(d.len());
    for (i, t) in d.transitions().iter().enumerate() {
        let not_term = if t.terminal { 0.0 } else { 1.0 };
        out.push(
            t.reward as f64 + mdp.gamma * not_term * v.values[ts.next_states[i]]
                - v.values[ts.states[i]],
        );
    }
    Ok(AdvantageVector(out))
}

/// Random dense MDP: Dirichlet(1,...,1) transition rows (normalized unit
/// exponentials), rewards uniform in [-1, 1], gamma 0.9, uniform initial
/// distribution.
pub fn random_mdp(n_states: usize, n_actions: usize, seed: u64) -> TabularMdp {
    let mut rng = OdprRng::seed_from_u64(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    for sa in 0..n_states * n_actions {
        let row = &mut transition[sa * n_states..(sa + 1) * n_states];
        let mut sum = 0.0;
        for p in row.iter_mut() {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            *p = -u.ln();
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
        reward[sa] = rng.gen_range(-1.0..1.0);
    }
    TabularMdp {
        n_states,
        n_actions,
        transition,
        reward,
        gamma: 0.9,
        initial_dist: vec![1.0 / n_states as f64; n_states],
    }
}

/// Random row-stochastic policy with full support.
pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut OdprRng) -> StochasticPolicy {
    let mut probs = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let row = &mut probs[s * n_actions..(s + 1) * n_actions];
        let mut sum = 0.0;
        for p in row.iter_mut() {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            *p = -u.ln();
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    StochasticPolicy { n_states, n_actions, probs }
}

/// The two-trajectory counterexample for whole-trajectory weighting: both
/// trajectories earn return 1, but each contains one good and one bad step.
///
/// States s1=0, s2=1, s3=2 (absorbing), actions a1=0, a2=1, gamma 1. Either
/// action moves s1->s2 and s2->s3; rewards r(s1,a1)=1, r(s2,a2)=1, else 0.
/// The dataset holds trajectory {s1,a1,r=1}, {s2,a1,r=0} and trajectory
/// {s1,a2,r=0}, {s2,a2,r=1}.
pub fn build_concat_mdp() -> (TabularMdp, Dataset) {
    let n_states = 3;
    let n_actions = 2;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut set = |s: usize, a: usize, s2: usize| {
        transition[(s * n_actions + a) * n_states + s2] = 1.0;
    };
    for a in 0..n_actions {
        set(0, a, 1);
        set(1, a, 2);
        set(2, a, 2);
    }
    let mut reward = vec![0.0; n_states * n_actions];
    reward[0 * n_actions + 0] = 1.0;
    reward[1 * n_actions + 1] = 1.0;
    let mdp = TabularMdp {
        n_states,
        n_actions,
        transition,
        reward,
        gamma: 1.0,
        initial_dist: vec![1.0, 0.0, 0.0],
    };
    mdp.validate().expect("hand-built MDP is valid");

    let t = |s: f32, a: f32, r: f32, ns: f32, term: bool| Transition {
        state: vec![s],
        action: vec![a],
        reward: r,
        next_state: vec![ns],
        terminal: term,
    };
    let dataset = Dataset::new(
        vec![
            t(0.0, 0.0, 1.0, 1.0, false),
            t(1.0, 0.0, 0.0, 2.0, true),
            t(0.0, 1.0, 0.0, 1.0, false),
            t(1.0, 1.0, 1.0, 2.0, true),
        ],
        Some(vec![(0, 2), (2, 2)]),
    )
    .expect("hand-built dataset is valid");
    (mdp, dataset)
}

/// Index of the good step of each concat trajectory (the other one is bad).
pub const CONCAT_GOOD_STEPS: [usize; 2] = [0, 3];
pub const CONCAT_BAD_STEPS: [usize; 2] = [1, 2];

/// Four-mode continuous-armed bandit on [-1, 1]^2. Behavior data is drawn
/// around the mode centers; rewards are Gaussian around each mode's mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianBandit {
    pub modes: Vec<BanditMode>,
    pub action_std: [f64; 2],
    pub reward_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanditMode {
    pub center: [f64; 2],
    pub reward_mean: f64,
}

impl Default for GaussianBandit {
    fn default() -> Self {
        GaussianBandit {
            modes: vec![
                BanditMode { center: [-0.5, -0.5], reward_mean: -2.0 },
                BanditMode { center: [-0.5, 0.5], reward_mean: 0.0 },
                BanditMode { center: [0.5, -0.5], reward_mean: 1.0 },
                BanditMode { center: [0.5, 0.5], reward_mean: 5.0 },
            ],
            action_std: [0.10, 0.10],
            reward_std: 0.5,
        }
    }
}

impl GaussianBandit {
    pub fn optimal_center(&self) -> [f64; 2] {
        self.modes
            .iter()
            .max_by(|a, b| a.reward_mean.total_cmp(&b.reward_mean))
            .expect("bandit has at least one mode")
            .center
    }

    /// Average of the mode reward means, i.e. the expected reward of the
    /// uniform-over-modes behavior data.
    pub fn mean_mode_reward(&self) -> f64 {
        self.modes.iter().map(|m| m.reward_mean).sum::<f64>() / self.modes.len() as f64
    }

    /// Exact expected reward of playing `action`: mode reward means weighted
    /// by the Gaussian responsibility of each mode at that action.
    pub fn expected_reward(&self, action: &[f64]) -> f64 {
        let log_resp: Vec<f64> = self
            .modes
            .iter()
            .map(|m| {
                let dx = (action[0] - m.center[0]) / self.action_std[0];
                let dy = (action[1] - m.center[1]) / self.action_std[1];
                -0.5 * (dx * dx + dy * dy)
            })
            .collect();
        let max = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (lr, m) in log_resp.iter().zip(&self.modes) {
            let w = (lr - max).exp();
            num += w * m.reward_mean;
            den += w;
        }
        num / den
    }

    pub fn distance_to_optimal(&self, action: &[f64]) -> f64 {
        let c = self.optimal_center();
        ((action[0] - c[0]).powi(2) + (action[1] - c[1]).powi(2)).sqrt()
    }
}

/// Draw `per_mode` behavior transitions around each mode. Actions are
/// clipped to [-1, 1]^2; every transition is its own length-1 trajectory
/// with a constant dummy state.
pub fn sample_bandit_dataset(b: &GaussianBandit, per_mode: usize, seed: u64) -> Result<Dataset> {
    if per_mode == 0 {
        return Err(OdprError::invalid("per_mode must be positive"));
    }
    let mut rng = OdprRng::seed_from_u64(seed);
    let n = b.modes.len() * per_mode;
    let mut transitions = Vec::with_capacity(n);
    for mode in &b.modes {
        let ax = Normal::new(mode.center[0], b.action_std[0])
            .map_err(|e| OdprError::invalid(format!("bad action distribution: {e}")))?;
        let ay = Normal::new(mode.center[1], b.action_std[1])
            .map_err(|e| OdprError::invalid(format!("bad action distribution: {e}")))?;
        let rew = Normal::new(mode.reward_mean, b.reward_std)
            .map_err(|e| OdprError::invalid(format!("bad reward distribution: {e}")))?;
        for _ in 0..per_mode {
            let a0 = ax.sample(&mut rng).clamp(-1.0, 1.0) as f32;
            let a1 = ay.sample(&mut rng).clamp(-1.0, 1.0) as f32;
            let r = rew.sample(&mut rng) as f32;
            transitions.push(Transition {
                state: vec![0.0],
                action: vec![a0, a1],
                reward: r,
                next_state: vec![0.0],
                terminal: true,
            });
        }
    }
    let bounds = (0..n).map(|i| (i, 1)).collect();
    Dataset::new(transitions, Some(bounds))
}

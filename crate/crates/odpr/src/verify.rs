//! Executable checks of the claims the library is built on.
//!
//! Every suite pits an implementation against an independent oracle — exact
//! linear-algebra policy evaluation, finite differences, enumeration, or
//! frequency counting — and reports one margin per trial.

use serde::Serialize;

use crate::algos::constrained_tabular_search;
use crate::envs::{
    build_concat_mdp, discounted_occupancy, exact_advantages, exact_dataset_advantages,
    exact_policy_value, exact_q_values, linear_tilt, random_mdp, random_policy,
    CONCAT_BAD_STEPS, CONCAT_GOOD_STEPS,
};
use crate::error::OdprError;
use crate::priority::{
    clip_below_unit_nw, iterate_odpr_a_with, return_priority, return_scores, scale_std,
    AdvantageVector, OdprConfig, PriorityWeights,
};
use crate::rng::{stream_rng, stream_seed};
use crate::sampling::{reweighted_loss, DecoupledSamplers, IndexSampler};
use crate::value::{Activation, MlpValueFn};
use crate::Result;
use rand::Rng;

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub label: String,
    /// Suite-specific slack: distance from the failure boundary for
    /// inequalities, absolute error for identities.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: Vec<TrialReport>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: &str, trials: Vec<TrialReport>) -> Self {
        let passed = trials.iter().all(|t| t.pass);
        SuiteReport { suite: suite.to_string(), trials, passed }
    }

    pub fn worst_margin(&self) -> f64 {
        self.trials.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min)
    }
}

pub const SUITES: &[&str] = &[
    "improvement",
    "iterated-improvement",
    "performance-difference",
    "resample-reweight",
    "sampler-frequency",
    "gradcheck",
    "concat-example",
    "scaling",
    "constrained-search",
];

/// Run one suite by name. `trials` falls back to a per-suite default.
pub fn run_suite(name: &str, trials: Option<usize>, seed: u64) -> Result<SuiteReport> {
    match name {
        "improvement" => check_improvement(trials.unwrap_or(100), seed),
        "iterated-improvement" => check_iterated_improvement(trials.unwrap_or(20), 5, seed),
        "performance-difference" => check_performance_difference(trials.unwrap_or(50), seed),
        "resample-reweight" => check_resample_reweight(seed),
        "sampler-frequency" => check_sampler_frequency(seed),
        "gradcheck" => check_gradients(trials.unwrap_or(100), seed),
        "concat-example" => check_concat_example(),
        "scaling" => check_scaling(seed),
        "constrained-search" => check_constrained_search(trials.unwrap_or(10), seed),
        other => Err(OdprError::invalid(format!(
            "unknown suite '{other}' (expected one of {})",
            SUITES.join("|")
        ))),
    }
}

/// Does any state leave room for strict improvement, i.e. have unequal
/// Q-values among the actions the policy supports?
fn has_improvable_state(
    q: &[f64],
    beta: &crate::envs::StochasticPolicy,
    n_states: usize,
    n_actions: usize,
) -> bool {
    (0..n_states).any(|s| {
        let supported: Vec<f64> = (0..n_actions)
            .filter(|&a| beta.prob(s, a) > 0.0)
            .map(|a| q[s * n_actions + a])
            .collect();
        let hi = supported.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
        let lo = supported.iter().fold(f64::INFINITY, |x, &y| x.min(y));
        hi - lo > 1e-9
    })
}

/// One exact prioritization round never hurts: `J(beta') >= J(beta)` on
/// random MDPs, strictly when some state has unequal supported Q-values.
pub fn check_improvement(n_mdps: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = stream_rng(seed, "verify-improvement");
    let mut trials = Vec::with_capacity(n_mdps);
    for i in 0..n_mdps {
        let mdp = random_mdp(6, 4, stream_seed(seed, &format!("imp-mdp-{i}")));
        let beta = random_policy(6, 4, &mut rng);
        let tilted = linear_tilt(&mdp, &beta)?;
        let j0 = exact_policy_value(&mdp, &beta)?;
        let j1 = exact_policy_value(&mdp, &tilted)?;
        let margin = j1 - j0;
        let q = exact_q_values(&mdp, &beta)?;
        let strict = has_improvable_state(&q, &beta, 6, 4);
        let pass = margin >= -1e-9 && (!strict || margin > 0.0);
        trials.push(TrialReport { label: format!("mdp-{i}"), margin, pass });
    }
    Ok(SuiteReport::new("improvement", trials))
}

/// Chaining exact prioritization rounds keeps improving: the J sequence over
/// `k_max` rounds is non-decreasing. Margin is the smallest step increment.
pub fn check_iterated_improvement(n_mdps: usize, k_max: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = stream_rng(seed, "verify-iterated");
    let mut trials = Vec::with_capacity(n_mdps);
    for i in 0..n_mdps {
        let mdp = random_mdp(6, 4, stream_seed(seed, &format!("iter-mdp-{i}")));
        let mut pi = random_policy(6, 4, &mut rng);
        let mut j_prev = exact_policy_value(&mdp, &pi)?;
        let mut margin = f64::INFINITY;
        for _ in 0..k_max {
            pi = linear_tilt(&mdp, &pi)?;
            let j = exact_policy_value(&mdp, &pi)?;
            margin = margin.min(j - j_prev);
            j_prev = j;
        }
        trials.push(TrialReport { label: format!("mdp-{i}"), margin, pass: margin >= -1e-9 });
    }
    Ok(SuiteReport::new("iterated-improvement", trials))
}

/// Performance-difference identity:
/// `J(pi) - J(beta) = sum_s d_pi(s) sum_a pi(a|s) A_beta(s, a)`.
pub fn check_performance_difference(n_pairs: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = stream_rng(seed, "verify-perfdiff");
    let mut trials = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mdp = random_mdp(7, 3, stream_seed(seed, &format!("pd-mdp-{i}")));
        let pi = random_policy(7, 3, &mut rng);
        let beta = random_policy(7, 3, &mut rng);
        let lhs = exact_policy_value(&mdp, &pi)? - exact_policy_value(&mdp, &beta)?;
        let adv = exact_advantages(&mdp, &beta)?;
        let d = discounted_occupancy(&mdp, &pi)?;
        let rhs: f64 = (0..7)
            .map(|s| {
                let inner: f64 = (0..3).map(|a| pi.prob(s, a) * adv[s * 3 + a]).sum();
                d[s] * inner
            })
            .sum();
        let margin = (lhs - rhs).abs();
        trials.push(TrialReport { label: format!("pair-{i}"), margin, pass: margin <= 1e-8 });
    }
    Ok(SuiteReport::new("performance-difference", trials))
}

/// Sampling indices proportionally to `w` and averaging a loss equals
/// uniform sampling of the `N*w`-reweighted loss: exactly in expectation
/// (full enumeration), and within 3 standard errors under Monte Carlo.
pub fn check_resample_reweight(seed: u64) -> Result<SuiteReport> {
    let mut trials = Vec::new();

    // Enumeration at small N: expectation under weighted draws is
    // sum_i w_i * loss_i; a full uniform pass over the reweighted loss must
    // reproduce it to roundoff.
    let losses = [0.3, -1.2, 0.7, 2.5, -0.4, 1.1, 0.05];
    let w = PriorityWeights::from_scores(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])?;
    let direct: f64 = w.as_slice().iter().zip(&losses).map(|(w, l)| w * l).sum();
    let full_batch: Vec<usize> = (0..losses.len()).collect();
    let reweighted = reweighted_loss(&losses, &w, &full_batch);
    let margin = (direct - reweighted).abs();
    trials.push(TrialReport { label: "enumeration".into(), margin, pass: margin <= 1e-14 });

    // Monte Carlo at N = 1000.
    let n = 1000;
    let mut rng = stream_rng(seed, "verify-eq4");
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = PriorityWeights::from_scores(scores)?;
    let target: f64 = w.as_slice().iter().zip(&losses).map(|(w, l)| w * l).sum();

    let draws = 200_000usize;
    let mut weighted = IndexSampler::weighted(&w, stream_rng(seed, "eq4-weighted"))?;
    let samples: Vec<f64> =
        weighted.sample_batch(draws).into_iter().map(|i| losses[i]).collect();
    let (est, se) = mean_and_se(&samples);
    let z = (est - target).abs() / se;
    trials.push(TrialReport { label: "mc-weighted".into(), margin: 3.0 - z, pass: z <= 3.0 });

    let mut uniform = IndexSampler::uniform(n, stream_rng(seed, "eq4-uniform"))?;
    let nw: Vec<f64> = w.as_slice().iter().map(|&x| n as f64 * x).collect();
    let samples: Vec<f64> =
        uniform.sample_batch(draws).into_iter().map(|i| nw[i] * losses[i]).collect();
    let (est, se) = mean_and_se(&samples);
    let z = (est - target).abs() / se;
    trials.push(TrialReport { label: "mc-reweighted".into(), margin: 3.0 - z, pass: z <= 3.0 });

    Ok(SuiteReport::new("resample-reweight", trials))
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical draw frequencies track the weights (5% relative over a million
/// draws), and the evaluation stream is bit-identical no matter what the
/// actor stream is weighted with.
pub fn check_sampler_frequency(seed: u64) -> Result<SuiteReport> {
    let mut trials = Vec::new();
    let n = 32;
    let mut rng = stream_rng(seed, "verify-frequency");
    // Raw scores in [1, 12]: every normalized entry is at least 1/(12n),
    // well above 4e-3, so a million draws pin each frequency within 5%.
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..12.0)).collect();
    let w = PriorityWeights::from_scores(scores)?;
    let draws = 1_000_000usize;
    let mut sampler = IndexSampler::weighted(&w, stream_rng(seed, "frequency-sampler"))?;
    let mut counts = vec![0usize; n];
    for i in sampler.sample_batch(draws) {
        counts[i] += 1;
    }
    let mut worst = 0.0f64;
    for (c, &wi) in counts.iter().zip(w.as_slice()) {
        let f = *c as f64 / draws as f64;
        worst = worst.max((f - wi).abs() / wi);
    }
    trials.push(TrialReport {
        label: "frequency-1e6".into(),
        margin: 0.05 - worst,
        pass: worst <= 0.05,
    });

    let uniform = PriorityWeights::uniform(n);
    let mut skewed_scores = vec![1.0; n];
    skewed_scores[3] = 400.0;
    let skewed = PriorityWeights::from_scores(skewed_scores)?;
    let mut a = DecoupledSamplers::new(n, &uniform, seed)?;
    let mut b = DecoupledSamplers::new(n, &skewed, seed)?;
    let identical = (0..10_000).all(|_| {
        a.eval.sample_batch(1) == b.eval.sample_batch(1)
    });
    trials.push(TrialReport {
        label: "eval-stream-invariant".into(),
        margin: if identical { 1.0 } else { -1.0 },
        pass: identical,
    });
    Ok(SuiteReport::new("sampler-frequency", trials))
}

/// Backprop against central finite differences over random architectures,
/// batches, and inputs. Margin is the worst relative error in a config.
pub fn check_gradients(n_configs: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = stream_rng(seed, "verify-gradcheck");
    let mut trials = Vec::with_capacity(n_configs);
    for i in 0..n_configs {
        let input = rng.gen_range(1..=4usize);
        let depth = rng.gen_range(1..=2usize);
        let mut sizes = vec![input];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..=10usize));
        }
        sizes.push(1);
        let m = MlpValueFn::new(sizes, Activation::Tanh, &mut rng)?;
        let batch = rng.gen_range(1..=5usize);
        let xs_data: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let xs: Vec<&[f64]> = xs_data.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<f64> = (0..batch).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, grad) = m.grad_mse(&xs, &ys);

        let eps = 1e-5;
        let loss_of = |m: &MlpValueFn| -> f64 {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let e = m.forward(x) - y;
                    e * e
                })
                .sum::<f64>()
                / batch as f64
        };
        let mut probe = m.clone();
        let mut worst = 0.0f64;
        for p in 0..m.n_params() {
            probe.params[p] = m.params[p] + eps;
            let plus = loss_of(&probe);
            probe.params[p] = m.params[p] - eps;
            let minus = loss_of(&probe);
            probe.params[p] = m.params[p];
            let fd = (plus - minus) / (2.0 * eps);
            let denom = grad[p].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[p] - fd).abs() / denom);
        }
        trials.push(TrialReport {
            label: format!("config-{i}"),
            margin: 1e-4 - worst,
            pass: worst <= 1e-4,
        });
    }
    Ok(SuiteReport::new("gradcheck", trials))
}

/// The two-trajectory worked example, end to end with exact advantages.
pub fn check_concat_example() -> Result<SuiteReport> {
    let (mdp, d) = build_concat_mdp();
    let mut trials = Vec::new();

    let adv = exact_dataset_advantages(&mdp, &d, &PriorityWeights::uniform(d.len()))?;
    let expected = [0.5, -0.5, -0.5, 0.5];
    let adv_err = adv
        .0
        .iter()
        .zip(&expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0f64, f64::max);
    trials.push(TrialReport {
        label: "exact-advantages".into(),
        margin: adv_err,
        pass: adv_err <= 1e-12,
    });

    let cfg = OdprConfig { iterations: 1, ..Default::default() };
    let run = iterate_odpr_a_with(&d, &cfg, |_, dset, w| {
        Ok(AdvantageVector(exact_dataset_advantages(&mdp, dset, w)?.0))
    })?;
    let expected_w = [0.5, 0.0, 0.0, 0.5];
    let w_err = run
        .weights
        .as_slice()
        .iter()
        .zip(&expected_w)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0f64, f64::max);
    trials.push(TrialReport {
        label: "one-round-weights".into(),
        margin: w_err,
        pass: w_err <= 1e-12,
    });

    let good_min = CONCAT_GOOD_STEPS
        .iter()
        .map(|&i| run.weights.as_slice()[i])
        .fold(f64::INFINITY, f64::min);
    let bad_max = CONCAT_BAD_STEPS
        .iter()
        .map(|&i| run.weights.as_slice()[i])
        .fold(0.0f64, f64::max);
    let ok = bad_max < 0.05 * good_min;
    trials.push(TrialReport {
        label: "bad-vs-good".into(),
        margin: 0.05 * good_min - bad_max,
        pass: ok,
    });

    // A trajectory-level lens is blind here: both trajectories return 1, so
    // return-based weights stay exactly uniform.
    let tr = d.trajectory_returns()?;
    let rw = return_priority(&tr, 0.0)?;
    let uni_err = rw
        .as_slice()
        .iter()
        .map(|w| (w - 0.25).abs())
        .fold(0.0f64, f64::max);
    trials.push(TrialReport {
        label: "equal-return-uniform".into(),
        margin: uni_err,
        pass: uni_err == 0.0,
    });

    Ok(SuiteReport::new("concat-example", trials))
}

/// Unit contracts of the priority transforms: binary return scores at
/// `p_base = 0.2`, exact std hits under sigma-rescaling, and the
/// clip-below-one floor.
pub fn check_scaling(seed: u64) -> Result<SuiteReport> {
    let mut trials = Vec::new();

    let tr = crate::dataset::TrajectoryReturns {
        returns: vec![0.0, 10.0],
        per_transition: vec![0.0, 0.0, 10.0, 10.0],
    };
    let scores = return_scores(&tr, 0.2);
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let err = (lo - 0.2).abs().max((hi - 1.2).abs());
    trials.push(TrialReport {
        label: "binary-scores".into(),
        margin: err,
        pass: err <= 1e-15,
    });

    let mut rng = stream_rng(seed, "verify-scaling");
    let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0.5..1.5)).collect();
    let w = PriorityWeights::from_scores(scores)?;
    for sigma in [0.05, 0.2] {
        // Gentle targets keep the floor inactive, so the std must land
        // exactly on sigma.
        let scaled = scale_std(&w, sigma)?;
        let err = (scaled.nw_std() - sigma).abs();
        trials.push(TrialReport {
            label: format!("sigma-{sigma}"),
            margin: err,
            pass: err <= 1e-12,
        });
    }

    let clipped = clip_below_unit_nw(&w);
    let min_nw = clipped.iter().cloned().fold(f64::INFINITY, f64::min);
    trials.push(TrialReport {
        label: "clip-floor".into(),
        margin: min_nw - 1.0,
        pass: min_nw >= 1.0,
    });

    Ok(SuiteReport::new("scaling", trials))
}

/// KL-constrained per-state search: each state's KL lands on
/// `min(epsilon, saturation limit)` — the limit being the KL of the
/// greedy-on-support row — and the value never drops below the behavior
/// policy's.
pub fn check_constrained_search(n_mdps: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = stream_rng(seed, "verify-constrained");
    let mut trials = Vec::with_capacity(n_mdps);
    for i in 0..n_mdps {
        let mdp = random_mdp(5, 3, stream_seed(seed, &format!("cs-mdp-{i}")));
        let beta = random_policy(5, 3, &mut rng);
        let eps = rng.gen_range(0.01..0.3);
        let pi = constrained_tabular_search(&mdp, &beta, eps)?;
        let q = exact_q_values(&mdp, &beta)?;
        let mut kl_err = 0.0f64;
        for s in 0..5 {
            let kl: f64 = (0..3)
                .filter(|&a| pi.prob(s, a) > 0.0)
                .map(|a| pi.prob(s, a) * (pi.prob(s, a) / beta.prob(s, a)).ln())
                .sum();
            let row = &q[s * 3..(s + 1) * 3];
            let q_max = row.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
            let argmax_mass: f64 =
                (0..3).filter(|&a| q_max - row[a] < 1e-12).map(|a| beta.prob(s, a)).sum();
            let budget = eps.min(-argmax_mass.ln());
            kl_err = kl_err.max((kl - budget).abs());
        }
        let gain = exact_policy_value(&mdp, &pi)? - exact_policy_value(&mdp, &beta)?;
        let pass = kl_err <= 1e-7 && gain >= -1e-9;
        trials.push(TrialReport { label: format!("mdp-{i}"), margin: gain, pass });
    }
    Ok(SuiteReport::new("constrained-search", trials))
}

/// Dataset-level frozen weights sanity used by cross-suite callers: the
/// concat example's exact one-round weights.
pub fn concat_expected_weights() -> [f64; 4] {
    [0.5, 0.0, 0.0, 0.5]
}

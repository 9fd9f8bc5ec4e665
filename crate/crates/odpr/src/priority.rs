//! Priority weights over dataset transitions.
//!
//! A weight vector `w` lives on the probability simplex; training either
//! resamples indices with probability `w_i` or multiplies losses by
//! `N * w_i` under uniform draws, which agree in expectation. Two priority
//! families are implemented:
//!
//! * linear advantage priority: `w_i ∝ a_i - min_j a_j`, where `a_i` is the
//!   one-step advantage `r_i + gamma * (1 - terminal_i) * V(s'_i) - V(s_i)`.
//!   The shift by the dataset minimum makes every weight non-negative while
//!   keeping the priority monotone in the advantage, which is what the
//!   improvement guarantee needs.
//! * return priority: `w_i ∝ (G_i - G_min) / (G_max - G_min) + p_base`,
//!   with `G_i` the undiscounted return of transition i's trajectory.
//!   `p_base` keeps low-return data alive; 0.2 is the usual choice when
//!   returns are binary.
//!
//! The iterative refinement (`iterate_odpr_a`) multiplies the advantage
//! priorities of successive reweighted behavior policies into a running
//! product, then rescales the final vector's spread to a target standard
//! deviation in the `N * w` domain. Raw products tend to have tiny spread
//! (std of `N * w` around 0.02-0.2), so downstream consumers pick the
//! effective sharpness via `sigma` rather than inheriting an arbitrary one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{Dataset, TrajectoryReturns};
use crate::error::OdprError;
use crate::rng::stream_seed;
use crate::value::{fit_value_td, FitConfig, ValueFn};
use crate::Result;

const WEIGHT_MAGIC: &[u8; 8] = b"ODPRWT01";

/// Per-transition one-step advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector(pub Vec<f64>);

/// Normalized, non-negative per-transition sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityWeights {
    w: Vec<f64>,
}

impl PriorityWeights {
    /// Validate an externally supplied vector: finite, non-negative, and
    /// summing to 1 within 1e-9.
    pub fn try_new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(OdprError::invariant("weight vector is empty"));
        }
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(OdprError::invariant(format!("weight {bad} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(OdprError::invariant(format!("weights sum to {sum}, expected 1")));
        }
        Ok(PriorityWeights { w })
    }

    /// Normalize non-negative scores into weights. Errors when the total
    /// mass is zero or any score is negative/non-finite.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(OdprError::invariant("score vector is empty"));
        }
        if let Some(bad) = scores.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(OdprError::invariant(format!("score {bad} is negative or non-finite")));
        }
        let sum: f64 = scores.iter().sum();
        if sum <= 0.0 {
            return Err(OdprError::invariant("scores have zero total mass"));
        }
        let mut w = scores;
        for x in &mut w {
            *x /= sum;
        }
        Ok(PriorityWeights { w })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform weights need at least one entry");
        PriorityWeights { w: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Population standard deviation in the `N * w` domain (mean is 1 by
    /// construction).
    pub fn nw_std(&self) -> f64 {
        let n = self.len() as f64;
        let var: f64 = self.w.iter().map(|&x| (n * x - 1.0).powi(2)).sum::<f64>() / n;
        var.sqrt()
    }

    /// Effective sample size `1 / sum w_i^2` (equals N for uniform weights).
    pub fn ess(&self) -> f64 {
        1.0 / self.w.iter().map(|&x| x * x).sum::<f64>()
    }

    /// Expectation of `values` under resampling by these weights.
    pub fn weighted_mean(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.w.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// One-step TD advantage of every transition against a fitted or exact value
/// function: `a_i = r_i + gamma * (1 - terminal_i) * V(s'_i) - V(s_i)`.
/// Terminal transitions bootstrap nothing.
pub fn advantage_one_step(d: &Dataset, v: &ValueFn, gamma: f64) -> AdvantageVector {
    let mut out = Vec::with_capacity(d.len());
    for t in d.transitions() {
        let not_term = if t.terminal { 0.0 } else { 1.0 };
        let a = t.reward as f64 + gamma * not_term * v.value(&t.next_state) - v.value(&t.state);
        out.push(a);
    }
    AdvantageVector(out)
}

/// Raw linear priority scores `a_i - min_j a_j` (non-negative, minimum
/// exactly zero).
pub fn linear_scores(adv: &AdvantageVector) -> Vec<f64> {
    let min = adv.0.iter().cloned().fold(f64::INFINITY, f64::min);
    adv.0.iter().map(|a| a - min).collect()
}

/// Linear advantage priority, normalized. All-equal advantages carry no
/// ranking information and fall back to uniform weights.
pub fn linear_priority(adv: &AdvantageVector) -> Result<PriorityWeights> {
    if adv.0.is_empty() {
        return Err(OdprError::invariant("advantage vector is empty"));
    }
    if let Some(bad) = adv.0.iter().find(|a| !a.is_finite()) {
        return Err(OdprError::invariant(format!("non-finite advantage {bad}")));
    }
    let scores = linear_scores(adv);
    if scores.iter().sum::<f64>() <= 0.0 {
        return Ok(PriorityWeights::uniform(adv.0.len()));
    }
    PriorityWeights::from_scores(scores)
}

/// Raw return-priority scores per transition:
/// `(G_i - G_min) / (G_max - G_min) + p_base`.
pub fn return_scores(tr: &TrajectoryReturns, p_base: f64) -> Vec<f64> {
    let g_min = tr.per_transition.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_max = tr.per_transition.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = g_max - g_min;
    tr.per_transition.iter().map(|g| (g - g_min) / span + p_base).collect()
}

/// Normalized return priority. All-equal returns fall back to uniform.
pub fn return_priority(tr: &TrajectoryReturns, p_base: f64) -> Result<PriorityWeights> {
    if p_base < 0.0 {
        return Err(OdprError::invalid(format!("p_base must be non-negative, got {p_base}")));
    }
    let n = tr.per_transition.len();
    if n == 0 {
        return Err(OdprError::invariant("no transitions to prioritize"));
    }
    let g_min = tr.per_transition.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_max = tr.per_transition.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if g_max - g_min <= 0.0 {
        return Ok(PriorityWeights::uniform(n));
    }
    PriorityWeights::from_scores(return_scores(tr, p_base))
}

/// Affinely rescale the spread of `N * w` to standard deviation `sigma`
/// keeping the mean at 1, floor anything driven negative at zero, and
/// renormalize. Input with no spread to rescale is returned unchanged; the
/// cutoff sits well above rounding noise so near-uniform weights do not get
/// their noise amplified into the target spread.
pub fn scale_std(w: &PriorityWeights, sigma: f64) -> Result<PriorityWeights> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(OdprError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let n = w.len() as f64;
    let std = w.nw_std();
    if std <= 1e-12 {
        return Ok(w.clone());
    }
    let gain = sigma / std;
    let scores: Vec<f64> =
        w.as_slice().iter().map(|&x| (1.0 + (n * x - 1.0) * gain).max(0.0)).collect();
    PriorityWeights::from_scores(scores)
}

/// Clip below one in the `N * w` domain: every entry of the returned vector
/// is `max(N * w_i, 1)`. Low-priority transitions keep at least their
/// uniform share relative to the rest; the caller renormalizes.
pub fn clip_below_unit_nw(w: &PriorityWeights) -> Vec<f64> {
    let n = w.len() as f64;
    w.as_slice().iter().map(|&x| (n * x).max(1.0)).collect()
}

/// Configuration for the iterative advantage priority.
#[derive(Debug, Clone, PartialEq)]
pub struct OdprConfig {
    /// Number of fit-then-reweight rounds K.
    pub iterations: usize,
    /// Target std of `N * w` for the final rescaling.
    pub sigma: f64,
    /// Baseline added to normalized returns (return priority only).
    pub p_base: f64,
    /// Clip `N * w` below 1 up to 1 before the final rescaling.
    pub clip_below_one: bool,
}

impl Default for OdprConfig {
    fn default() -> Self {
        OdprConfig { iterations: 4, sigma: 2.0, p_base: 0.0, clip_below_one: false }
    }
}

impl OdprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(OdprError::invalid("iterations must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(OdprError::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.p_base < 0.0 {
            return Err(OdprError::invalid(format!("p_base must be non-negative, got {}", self.p_base)));
        }
        Ok(())
    }
}

/// Per-round diagnostics of the iterative refinement. Row 0 describes the
/// uniform starting point.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Expected dataset reward under resampling with this round's weights.
    pub mean_reward: f64,
    /// Std of `N * w` before the final rescaling.
    pub nw_std: f64,
    /// Effective sample size.
    pub ess: f64,
}

/// Result of [`iterate_odpr_a`]: final (rescaled) weights plus the running
/// per-round weight vectors and diagnostics.
#[derive(Debug, Clone)]
pub struct OdprRun {
    pub weights: PriorityWeights,
    pub per_iteration: Vec<PriorityWeights>,
    pub stats: Vec<IterationStats>,
}

/// Iterative advantage priority with a caller-supplied advantage routine
/// (round index, dataset, current weights -> advantages). Starting from
/// uniform weights, each round multiplies the current vector by that round's
/// linear priority and renormalizes; the final vector is optionally clipped
/// below one and rescaled to `cfg.sigma`.
pub fn iterate_odpr_a_with<F>(d: &Dataset, cfg: &OdprConfig, mut advantages: F) -> Result<OdprRun>
where
    F: FnMut(usize, &Dataset, &PriorityWeights) -> Result<AdvantageVector>,
{
    cfg.validate()?;
    let n = d.len();
    let mut w = PriorityWeights::uniform(n);
    let stats_of = |k: usize, w: &PriorityWeights| IterationStats {
        iteration: k,
        mean_reward: w.weighted_mean(d.transitions().iter().map(|t| t.reward as f64)),
        nw_std: w.nw_std(),
        ess: w.ess(),
    };
    let mut per_iteration = vec![w.clone()];
    let mut stats = vec![stats_of(0, &w)];
    for k in 0..cfg.iterations {
        let adv = advantages(k, d, &w)?;
        if adv.0.len() != n {
            return Err(OdprError::invariant(format!(
                "advantage routine returned {} entries for {n} transitions",
                adv.0.len()
            )));
        }
        let omega = linear_priority(&adv)?;
        let raw: Vec<f64> =
            w.as_slice().iter().zip(omega.as_slice()).map(|(a, b)| a * b).collect();
        w = if raw.iter().sum::<f64>() > 0.0 {
            PriorityWeights::from_scores(raw)?
        } else {
            // The surviving mass and the new priority are disjoint; restart
            // from this round's priority alone rather than dividing by zero.
            omega
        };
        per_iteration.push(w.clone());
        stats.push(stats_of(k + 1, &w));
    }
    let mut final_w = w;
    if cfg.clip_below_one {
        final_w = PriorityWeights::from_scores(clip_below_unit_nw(&final_w))?;
    }
    let final_w = scale_std(&final_w, cfg.sigma)?;
    Ok(OdprRun { weights: final_w, per_iteration, stats })
}

/// Iterative advantage priority with fitted value functions: each round fits
/// `V` by weighted TD regression on the current weights (fresh parameters
/// per round, a round-specific seed split from `fit.seed`), scores one-step
/// advantages, and multiplies them into the running product.
pub fn iterate_odpr_a(d: &Dataset, cfg: &OdprConfig, fit: &FitConfig) -> Result<OdprRun> {
    iterate_odpr_a_with(d, cfg, |k, d, w| {
        let mut round_cfg = fit.clone();
        round_cfg.seed = stream_seed(fit.seed, &format!("odpr-round-{k}"));
        let v = fit_value_td(d, Some(w), &round_cfg)?;
        Ok(advantage_one_step(d, &v, fit.gamma))
    })
}

/// Comparison priorities.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorityKind {
    /// Iterative advantage priority (the default pipeline).
    Advantage,
    /// Whole-trajectory return priority.
    Return,
    /// Absolute one-step TD error, the classic replay prioritization.
    AbsTd,
    /// Alias of [`PriorityKind::Return`]: whole-trajectory weighting is
    /// already what the return priority computes.
    TrajUniform,
    /// Keep the top fraction of trajectories by return, uniformly.
    Percentage(f64),
}

/// Single-shot comparison priorities. `v` must be supplied for
/// [`PriorityKind::AbsTd`] (the value function the TD errors are measured
/// against); `gamma` is its discount.
pub fn baseline_priority(
    d: &Dataset,
    kind: &PriorityKind,
    v: Option<&ValueFn>,
    gamma: f64,
    p_base: f64,
) -> Result<PriorityWeights> {
    match kind {
        PriorityKind::Advantage => Err(OdprError::invalid(
            "advantage priority is iterative; use iterate_odpr_a",
        )),
        PriorityKind::Return | PriorityKind::TrajUniform => {
            return_priority(&d.trajectory_returns()?, p_base)
        }
        PriorityKind::AbsTd => {
            let v = v.ok_or_else(|| {
                OdprError::invalid("abs-td priority needs a fitted value function")
            })?;
            let adv = advantage_one_step(d, v, gamma);
            let scores: Vec<f64> = adv.0.iter().map(|a| a.abs()).collect();
            if scores.iter().sum::<f64>() <= 0.0 {
                return Ok(PriorityWeights::uniform(d.len()));
            }
            PriorityWeights::from_scores(scores)
        }
        PriorityKind::Percentage(fraction) => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(OdprError::invalid(format!(
                    "top fraction must be in (0, 1], got {fraction}"
                )));
            }
            let bounds = d
                .bounds()
                .ok_or_else(|| OdprError::invariant("percentage priority needs trajectories"))?
                .to_vec();
            let tr = d.trajectory_returns()?;
            let mut order: Vec<usize> = (0..bounds.len()).collect();
            // Highest return first; ties keep dataset order.
            order.sort_by(|&a, &b| tr.returns[b].total_cmp(&tr.returns[a]).then(a.cmp(&b)));
            let keep = ((fraction * bounds.len() as f64).round() as usize).max(1);
            let mut scores = vec![0.0; d.len()];
            for &ti in order.iter().take(keep) {
                let (start, len) = bounds[ti];
                for s in &mut scores[start..start + len] {
                    *s = 1.0;
                }
            }
            PriorityWeights::from_scores(scores)
        }
    }
}

/// Write weights paired to their dataset (`ODPRWT01`, little-endian):
/// magic, `n` u64, FNV-1a hash of the dataset's transition block u64, then
/// `n` f64 weights.
pub fn save_weights(w: &PriorityWeights, d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if w.len() != d.len() {
        return Err(OdprError::invariant(format!(
            "weight vector covers {} transitions, dataset has {}",
            w.len(),
            d.len()
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(WEIGHT_MAGIC)?;
    out.write_all(&(w.len() as u64).to_le_bytes())?;
    out.write_all(&d.content_hash().to_le_bytes())?;
    for &x in w.as_slice() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Load weights and verify they belong to `d` (length and content hash).
pub fn load_weights(path: impl AsRef<Path>, d: &Dataset) -> Result<PriorityWeights> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| OdprError::format("unexpected end of file in weight header"))?;
    if &magic != WEIGHT_MAGIC {
        return Err(OdprError::format("bad magic, not an ODPRWT01 weight file"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| OdprError::format("unexpected end of file in weight header"))?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)
        .map_err(|_| OdprError::format("unexpected end of file in weight header"))?;
    let hash = u64::from_le_bytes(b8);
    if n != d.len() {
        return Err(OdprError::Pairing(format!(
            "weight file covers {n} transitions, dataset has {}",
            d.len()
        )));
    }
    if hash != d.content_hash() {
        return Err(OdprError::Pairing(format!(
            "weight file hash {hash:#018x} does not match dataset hash {:#018x}",
            d.content_hash()
        )));
    }
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        r.read_exact(&mut b8)
            .map_err(|_| OdprError::format_at(i, "unexpected end of file in weight payload"))?;
        w.push(f64::from_le_bytes(b8));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(OdprError::format("trailing bytes after weight payload"));
    }
    PriorityWeights::try_new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::envs::{build_concat_mdp, exact_dataset_advantages, CONCAT_BAD_STEPS, CONCAT_GOOD_STEPS};

    fn adv(values: &[f64]) -> AdvantageVector {
        AdvantageVector(values.to_vec())
    }

    #[test]
    fn linear_priority_frozen_example() {
        let w = linear_priority(&adv(&[-1.0, 0.0, 1.0])).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in w.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(w.as_slice()[0], 0.0);
    }

    #[test]
    fn linear_priority_all_equal_is_uniform() {
        let w = linear_priority(&adv(&[2.5, 2.5, 2.5, 2.5])).unwrap();
        assert_eq!(w.as_slice(), PriorityWeights::uniform(4).as_slice());
    }

    #[test]
    fn linear_priority_rejects_non_finite() {
        assert!(linear_priority(&adv(&[0.0, f64::NAN])).is_err());
    }

    #[test]
    fn return_scores_binary_with_p_base() {
        // Binary returns with p_base 0.2 give raw scores {0.2, 1.2}.
        let tr = TrajectoryReturns {
            returns: vec![0.0, 1.0],
            per_transition: vec![0.0, 0.0, 1.0, 1.0],
        };
        let raw = return_scores(&tr, 0.2);
        assert_eq!(raw, vec![0.2, 0.2, 1.2, 1.2]);
        let w = return_priority(&tr, 0.2).unwrap();
        let ratio = w.as_slice()[2] / w.as_slice()[0];
        assert!((ratio - 6.0).abs() < 1e-12);
        let sum: f64 = w.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn return_priority_equal_returns_uniform() {
        let tr = TrajectoryReturns { returns: vec![3.0, 3.0], per_transition: vec![3.0; 4] };
        let w = return_priority(&tr, 0.2).unwrap();
        assert_eq!(w.as_slice(), PriorityWeights::uniform(4).as_slice());
    }

    #[test]
    fn return_priority_zero_p_base_drops_worst() {
        let tr = TrajectoryReturns { returns: vec![0.0, 2.0], per_transition: vec![0.0, 2.0] };
        let w = return_priority(&tr, 0.0).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn scale_std_hits_target_without_flooring() {
        let w = PriorityWeights::try_new(vec![0.9 / 4.0, 1.1 / 4.0, 0.9 / 4.0, 1.1 / 4.0]).unwrap();
        assert!((w.nw_std() - 0.1).abs() < 1e-12);
        let scaled = scale_std(&w, 0.5).unwrap();
        assert!((scaled.nw_std() - 0.5).abs() < 1e-12);
        let sum: f64 = scaled.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_std_floors_and_stays_normalized() {
        let w = PriorityWeights::try_new(vec![0.98 / 4.0, 1.02 / 4.0, 0.98 / 4.0, 1.02 / 4.0]).unwrap();
        let scaled = scale_std(&w, 2.0).unwrap();
        let s = scaled.as_slice();
        assert!(s.iter().all(|&x| x >= 0.0));
        let sum: f64 = s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // The negative tail was floored to zero and mass shifted upward.
        assert_eq!(s[0], 0.0);
        assert!(s[1] > 0.0);
    }

    #[test]
    fn scale_std_zero_variance_unchanged() {
        let w = PriorityWeights::uniform(7);
        let scaled = scale_std(&w, 2.0).unwrap();
        assert_eq!(scaled.as_slice(), w.as_slice());
    }

    #[test]
    fn scale_std_ignores_rounding_level_spread() {
        // Equal scores normalize to weights whose `N * w` misses 1 by an
        // ulp; that noise must not be amplified into the target spread.
        let w = PriorityWeights::from_scores(vec![7.0; 49]).unwrap();
        let scaled = scale_std(&w, 13.7).unwrap();
        assert_eq!(scaled.as_slice(), w.as_slice());
    }

    #[test]
    fn clip_below_unit_invariant() {
        let w = PriorityWeights::try_new(vec![0.05, 0.05, 0.4, 0.5]).unwrap();
        let nw = clip_below_unit_nw(&w);
        assert!(nw.iter().all(|&x| x >= 1.0));
        assert_eq!(nw, vec![1.0, 1.0, 1.6, 2.0]);
    }

    #[test]
    fn iterate_with_exact_values_isolates_good_steps() {
        let (mdp, d) = build_concat_mdp();
        let cfg = OdprConfig { iterations: 1, sigma: 2.0, ..Default::default() };
        let run = iterate_odpr_a_with(&d, &cfg, |_, d, w| exact_dataset_advantages(&mdp, d, w))
            .unwrap();
        // Exact advantages are [0.5, -0.5, -0.5, 0.5]; the linear priority
        // zeroes both bad steps and splits mass evenly over the good ones.
        let w = run.weights.as_slice();
        for i in CONCAT_BAD_STEPS {
            assert!((w[i] - 0.0).abs() < 1e-12, "bad step {i} kept weight {}", w[i]);
        }
        for i in CONCAT_GOOD_STEPS {
            assert!((w[i] - 0.5).abs() < 1e-12, "good step {i} has weight {}", w[i]);
        }
        assert_eq!(run.per_iteration.len(), 2);
        assert_eq!(run.stats.len(), 2);
        assert!((run.stats[0].mean_reward - 0.5).abs() < 1e-12);
        assert!((run.stats[1].mean_reward - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iterate_requires_matching_lengths() {
        let (_, d) = build_concat_mdp();
        let cfg = OdprConfig { iterations: 1, ..Default::default() };
        let err = iterate_odpr_a_with(&d, &cfg, |_, _, _| Ok(adv(&[1.0, 2.0]))).unwrap_err();
        assert!(err.to_string().contains("entries"), "{err}");
    }

    #[test]
    fn weight_file_roundtrip_is_bit_exact() {
        let (_, d) = build_concat_mdp();
        let w = PriorityWeights::try_new(vec![0.125, 0.375, 0.25, 0.25]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.odprwt");
        save_weights(&w, &d, &path).unwrap();
        let back = load_weights(&path, &d).unwrap();
        assert_eq!(w.as_slice(), back.as_slice());
    }

    #[test]
    fn weight_file_rejects_other_dataset() {
        let (_, d) = build_concat_mdp();
        let w = PriorityWeights::uniform(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.odprwt");
        save_weights(&w, &d, &path).unwrap();

        // Same shape, one reward altered.
        let mut ts = d.transitions().to_vec();
        ts[0].reward = 2.0;
        let other = Dataset::new(ts, d.bounds().map(|b| b.to_vec())).unwrap();
        let err = load_weights(&path, &other).unwrap_err();
        assert!(matches!(err, OdprError::Pairing(_)), "{err}");
    }

    #[test]
    fn weight_file_rejects_bad_magic_and_truncation() {
        let (_, d) = build_concat_mdp();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.odprwt");
        std::fs::write(&path, b"WRONGMAG").unwrap();
        assert!(load_weights(&path, &d).is_err());

        save_weights(&PriorityWeights::uniform(4), &d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_weights(&path, &d).unwrap_err();
        assert!(err.to_string().contains("end of file"), "{err}");
    }

    #[test]
    fn abs_td_priority_frozen_example() {
        // Advantages [-1, 0, 1] -> |td| = [1, 0, 1] -> weights [0.5, 0, 0.5].
        let d = Dataset::new(
            vec![
                Transition { state: vec![0.0], action: vec![0.0], reward: -1.0, next_state: vec![0.0], terminal: true },
                Transition { state: vec![0.0], action: vec![0.0], reward: 0.0, next_state: vec![0.0], terminal: true },
                Transition { state: vec![0.0], action: vec![0.0], reward: 1.0, next_state: vec![0.0], terminal: true },
            ],
            None,
        )
        .unwrap();
        let v = ValueFn::zero_tabular(1);
        let w = baseline_priority(&d, &PriorityKind::AbsTd, Some(&v), 0.9, 0.0).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn percentage_priority_keeps_top_trajectories() {
        // Four equal-length trajectories with returns 3 > 2 > 1 > 0.
        let mut ts = Vec::new();
        for g in [0.0f32, 3.0, 1.0, 2.0] {
            ts.push(Transition { state: vec![0.0], action: vec![0.0], reward: g, next_state: vec![1.0], terminal: false });
            ts.push(Transition { state: vec![1.0], action: vec![0.0], reward: 0.0, next_state: vec![2.0], terminal: true });
        }
        let d = Dataset::new(ts, Some(vec![(0, 2), (2, 2), (4, 2), (6, 2)])).unwrap();
        let w = baseline_priority(&d, &PriorityKind::Percentage(0.5), None, 1.0, 0.0).unwrap();
        // Top half = trajectories with returns 3 and 2 -> transitions 2,3,6,7.
        assert_eq!(w.as_slice(), &[0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn traj_uniform_matches_return_priority() {
        let (_, d) = build_concat_mdp();
        let a = baseline_priority(&d, &PriorityKind::TrajUniform, None, 1.0, 0.2).unwrap();
        let b = return_priority(&d.trajectory_returns().unwrap(), 0.2).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn ess_and_nw_std_frozen() {
        let w = PriorityWeights::uniform(8);
        assert!((w.ess() - 8.0).abs() < 1e-12);
        assert_eq!(w.nw_std(), 0.0);
        let spiky = PriorityWeights::try_new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((spiky.ess() - 2.0).abs() < 1e-12);
        // N*w = [2, 2, 0, 0]: mean 1, population std 1.
        assert!((spiky.nw_std() - 1.0).abs() < 1e-12);
    }
}

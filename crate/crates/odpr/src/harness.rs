//! Experiment drivers behind the CLI subcommands.
//!
//! Each driver consumes an [`ExperimentConfig`], runs the configured seeds,
//! and writes its artifacts (weight files, JSON reports, metrics CSVs) under
//! `out.dir`. Byte-for-byte determinism per config is part of the contract.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::algos::{train_bc, train_td3bc_bandit, BcPolicy, TrainConfig, Wiring};
use crate::config::{DatasetSource, ExperimentConfig};
use crate::dataset::Dataset;
use crate::envs::{
    build_concat_mdp, empirical_policy, exact_dataset_advantages, exact_policy_value,
    linear_tilt, random_mdp, random_policy, GaussianBandit,
};
use crate::error::OdprError;
use crate::priority::{
    baseline_priority, iterate_odpr_a, iterate_odpr_a_with, save_weights, scale_std,
    AdvantageVector, IterationStats, PriorityKind, PriorityWeights,
};
use crate::rng::{stream_rng, stream_seed};
use crate::sampling::IndexSampler;
use crate::value::{fit_value_td, FitConfig};
use crate::Result;

fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Bandit { per_mode } => {
            sample_bandit(&GaussianBandit::default(), *per_mode, seed)
        }
        DatasetSource::Path(p) => {
            if p.extension().and_then(|e| e.to_str()) == Some("csv") {
                Dataset::from_csv(p)
            } else {
                Dataset::load(p)
            }
        }
    }
}

fn sample_bandit(b: &GaussianBandit, per_mode: usize, seed: u64) -> Result<Dataset> {
    crate::envs::sample_bandit_dataset(b, per_mode, seed)
}

fn stats_row(d: &Dataset, w: &PriorityWeights, iteration: usize) -> IterationStats {
    IterationStats {
        iteration,
        mean_reward: w.weighted_mean(d.transitions().iter().map(|t| t.reward as f64)),
        nw_std: w.nw_std(),
        ess: w.ess(),
    }
}

/// Priority weights for one seed under the configured family.
fn weights_for_seed(
    cfg: &ExperimentConfig,
    d: &Dataset,
    seed: u64,
) -> Result<(PriorityWeights, Vec<PriorityWeights>, Vec<IterationStats>)> {
    match cfg.priority_kind()? {
        PriorityKind::Advantage => {
            let fit = FitConfig { seed, ..cfg.fit.clone() };
            let run = iterate_odpr_a(d, &cfg.odpr, &fit)?;
            Ok((run.weights, run.per_iteration, run.stats))
        }
        kind => {
            let v = match kind {
                PriorityKind::AbsTd => {
                    let fit = FitConfig { seed, ..cfg.fit.clone() };
                    Some(fit_value_td(d, None, &fit)?)
                }
                _ => None,
            };
            let raw = baseline_priority(d, &kind, v.as_ref(), cfg.fit.gamma, cfg.odpr.p_base)?;
            let w = scale_std(&raw, cfg.odpr.sigma)?;
            let stats = vec![stats_row(d, &raw, 0), stats_row(d, &w, 1)];
            Ok((w, vec![raw], stats))
        }
    }
}

#[derive(Debug, Serialize)]
struct SeedStats {
    seed: u64,
    rows: Vec<IterationStats>,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    iteration: usize,
    mean_reward_mean: f64,
    mean_reward_std: f64,
    nw_std_mean: f64,
    ess_mean: f64,
}

#[derive(Debug, Serialize)]
struct PriorityReport {
    kind: String,
    seeds: Vec<u64>,
    per_seed: Vec<SeedStats>,
    aggregate: Vec<AggregateRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Compute priority weights for every seed, persist them, and write
/// `priorities_report.json` with per-iteration diagnostics.
pub fn compute_priorities(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut per_seed = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let d = load_dataset(cfg, seed)?;
        let (weights, per_iteration, rows) = weights_for_seed(cfg, &d, seed)?;
        save_weights(&weights, &d, cfg.out_dir.join(format!("weights_seed{seed}.wts")))?;
        if si == 0 {
            for (k, w) in per_iteration.iter().enumerate() {
                save_weights(w, &d, cfg.out_dir.join(format!("weights_seed{seed}_iter{k}.wts")))?;
            }
        }
        per_seed.push(SeedStats { seed, rows });
    }

    let n_rows = per_seed.iter().map(|s| s.rows.len()).min().unwrap_or(0);
    let aggregate = (0..n_rows)
        .map(|k| {
            let rewards: Vec<f64> = per_seed.iter().map(|s| s.rows[k].mean_reward).collect();
            let (mean_reward_mean, mean_reward_std) = mean_std(&rewards);
            let nw: Vec<f64> = per_seed.iter().map(|s| s.rows[k].nw_std).collect();
            let ess: Vec<f64> = per_seed.iter().map(|s| s.rows[k].ess).collect();
            AggregateRow {
                iteration: k,
                mean_reward_mean,
                mean_reward_std,
                nw_std_mean: mean_std(&nw).0,
                ess_mean: mean_std(&ess).0,
            }
        })
        .collect();

    let report = PriorityReport {
        kind: cfg.priority_kind.clone(),
        seeds: cfg.seeds.clone(),
        per_seed,
        aggregate,
    };
    let path = cfg.out_dir.join("priorities_report.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct BanditSeedRow {
    seed: u64,
    action: Vec<f64>,
    expected_reward: f64,
    distance_to_optimal: f64,
}

#[derive(Debug, Serialize)]
struct BanditSummary {
    algo: String,
    wiring: String,
    priority: String,
    per_seed: Vec<BanditSeedRow>,
    reward_mean: f64,
    reward_std: f64,
    distance_mean: f64,
    distance_std: f64,
    seeds_within_tenth: usize,
}

fn write_metrics_csv(
    path: &Path,
    b: &GaussianBandit,
    log: &[crate::algos::LogRow],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = log.first().map(|r| r.action.len()).unwrap_or(0);
    let mut header = vec!["step".to_string(), "critic_loss".into(), "q_at_action".into()];
    header.extend((0..k).map(|i| format!("action_{i}")));
    header.push("expected_reward".into());
    header.push("distance_to_optimal".into());
    w.write_record(&header)?;
    for row in log {
        let mut rec = vec![
            row.step.to_string(),
            row.critic_loss.to_string(),
            row.q_at_action.to_string(),
        ];
        rec.extend(row.action.iter().map(|a| a.to_string()));
        rec.push(b.expected_reward(&row.action).to_string());
        rec.push(b.distance_to_optimal(&row.action).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Train the configured learner on the bandit for every seed and write
/// per-seed metrics CSVs plus `summary.json`.
pub fn run_bandit(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let per_mode = match cfg.dataset {
        DatasetSource::Bandit { per_mode } => per_mode,
        _ => {
            return Err(OdprError::invalid(
                "the bandit runner evaluates against the bandit generator; \
                 set dataset.generator = bandit",
            ))
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let b = GaussianBandit::default();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let d = sample_bandit(&b, per_mode, seed)?;
        let weights = if cfg.train.wiring == Wiring::Vanilla {
            PriorityWeights::uniform(d.len())
        } else {
            weights_for_seed(cfg, &d, seed)?.0
        };
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let action = match cfg.algo.as_str() {
            "td3bc" => {
                let run = train_td3bc_bandit(&d, &weights, &train)?;
                let csv_path = cfg
                    .out_dir
                    .join(format!("metrics_td3bc_{}_seed{seed}.csv", cfg.train.wiring.name()));
                write_metrics_csv(&csv_path, &b, &run.log)?;
                run.action
            }
            "bc" => match train_bc(&d, &weights, &train)? {
                BcPolicy::Action(theta) => theta,
                BcPolicy::Tabular(_) => {
                    return Err(OdprError::invariant("bandit data is continuous"))
                }
            },
            other => return Err(OdprError::invalid(format!("unknown algo '{other}'"))),
        };
        per_seed.push(BanditSeedRow {
            seed,
            expected_reward: b.expected_reward(&action),
            distance_to_optimal: b.distance_to_optimal(&action),
            action,
        });
    }

    let rewards: Vec<f64> = per_seed.iter().map(|r| r.expected_reward).collect();
    let dists: Vec<f64> = per_seed.iter().map(|r| r.distance_to_optimal).collect();
    let (reward_mean, reward_std) = mean_std(&rewards);
    let (distance_mean, distance_std) = mean_std(&dists);
    let summary = BanditSummary {
        algo: cfg.algo.clone(),
        wiring: cfg.train.wiring.name().to_string(),
        priority: cfg.priority_kind.clone(),
        seeds_within_tenth: dists.iter().filter(|&&d| d < 0.1).count(),
        per_seed,
        reward_mean,
        reward_std,
        distance_mean,
        distance_std,
    };
    let path = cfg.out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct ConcatReport {
    advantages: Vec<f64>,
    weights: Vec<f64>,
    per_iteration: Vec<Vec<f64>>,
    j_uniform: f64,
    j_prioritized: f64,
    return_weights: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RandomMdpRow {
    mdp: usize,
    j_path: Vec<f64>,
    j_constrained: f64,
}

#[derive(Debug, Serialize)]
struct RandomMdpReport {
    count: usize,
    epsilon: f64,
    rows: Vec<RandomMdpRow>,
    min_step_gain: f64,
    mean_final_gain: f64,
}

/// Exact tabular studies: the two-trajectory worked example, or repeated
/// prioritization on random MDPs against the KL-constrained search.
pub fn run_tabular(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    match cfg.mdp_kind.as_str() {
        "concat" => {
            let (mdp, d) = build_concat_mdp();
            let uniform = PriorityWeights::uniform(d.len());
            let adv = exact_dataset_advantages(&mdp, &d, &uniform)?;
            let run = iterate_odpr_a_with(&d, &cfg.odpr, |_, dset, w| {
                Ok(AdvantageVector(exact_dataset_advantages(&mdp, dset, w)?.0))
            })?;
            let j_uniform = exact_policy_value(&mdp, &empirical_policy(&d, &uniform)?)?;
            let j_prioritized =
                exact_policy_value(&mdp, &empirical_policy(&d, &run.weights)?)?;
            let return_weights =
                baseline_priority(&d, &PriorityKind::Return, None, cfg.fit.gamma, 0.0)?;
            let report = ConcatReport {
                advantages: adv.0,
                weights: run.weights.as_slice().to_vec(),
                per_iteration: run
                    .per_iteration
                    .iter()
                    .map(|w| w.as_slice().to_vec())
                    .collect(),
                j_uniform,
                j_prioritized,
                return_weights: return_weights.as_slice().to_vec(),
            };
            let path = cfg.out_dir.join("tabular_concat.json");
            fs::write(&path, serde_json::to_string_pretty(&report).expect("serializes"))?;
            Ok(path)
        }
        "random" => {
            let seed = cfg.seeds[0];
            let mut rng = stream_rng(seed, "tabular-policies");
            let mut rows = Vec::with_capacity(cfg.mdp_count);
            let mut min_step_gain = f64::INFINITY;
            let mut final_gains = Vec::new();
            for i in 0..cfg.mdp_count {
                let mdp = random_mdp(
                    cfg.mdp_states,
                    cfg.mdp_actions,
                    stream_seed(seed, &format!("tabular-mdp-{i}")),
                );
                let beta = random_policy(cfg.mdp_states, cfg.mdp_actions, &mut rng);
                let mut pi = beta.clone();
                let mut j_path = vec![exact_policy_value(&mdp, &pi)?];
                for _ in 0..cfg.odpr.iterations {
                    pi = linear_tilt(&mdp, &pi)?;
                    let j = exact_policy_value(&mdp, &pi)?;
                    min_step_gain = min_step_gain.min(j - j_path.last().unwrap());
                    j_path.push(j);
                }
                final_gains.push(j_path.last().unwrap() - j_path[0]);
                let constrained =
                    crate::algos::constrained_tabular_search(&mdp, &beta, cfg.epsilon)?;
                rows.push(RandomMdpRow {
                    mdp: i,
                    j_path,
                    j_constrained: exact_policy_value(&mdp, &constrained)?,
                });
            }
            let report = RandomMdpReport {
                count: cfg.mdp_count,
                epsilon: cfg.epsilon,
                rows,
                min_step_gain,
                mean_final_gain: mean_std(&final_gains).0,
            };
            let path = cfg.out_dir.join("tabular_random.json");
            fs::write(&path, serde_json::to_string_pretty(&report).expect("serializes"))?;
            Ok(path)
        }
        other => Err(OdprError::invalid(format!("unknown mdp kind '{other}'"))),
    }
}

const SCATTER_DRAWS: usize = 500;

/// Resampled action scatters per refinement round plus actor trajectories,
/// as plain CSV for plotting.
pub fn export_figures(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    let seed = cfg.seeds[0];
    let b = GaussianBandit::default();
    let per_mode = match cfg.dataset {
        DatasetSource::Bandit { per_mode } => per_mode,
        _ => {
            return Err(OdprError::invalid(
                "figure export draws from the bandit generator; \
                 set dataset.generator = bandit",
            ))
        }
    };
    let d = sample_bandit(&b, per_mode, seed)?;
    let (_, per_iteration, _) = weights_for_seed(cfg, &d, seed)?;
    for (k, w) in per_iteration.iter().enumerate() {
        let mut sampler =
            IndexSampler::weighted(w, stream_rng(seed, &format!("figure-scatter-{k}")))?;
        let mut out = csv::Writer::from_path(cfg.out_dir.join(format!("scatter_iter{k}.csv")))?;
        out.write_record(["action_0", "action_1", "reward"])?;
        for i in sampler.sample_batch(SCATTER_DRAWS) {
            let t = d.get(i);
            out.write_record([
                t.action[0].to_string(),
                t.action[1].to_string(),
                t.reward.to_string(),
            ])?;
        }
        out.flush()?;
    }

    for wiring in [Wiring::Vanilla, cfg.train.wiring] {
        let weights = if wiring == Wiring::Vanilla {
            PriorityWeights::uniform(d.len())
        } else {
            weights_for_seed(cfg, &d, seed)?.0
        };
        let train = TrainConfig { seed, wiring, ..cfg.train.clone() };
        let run = train_td3bc_bandit(&d, &weights, &train)?;
        let path = cfg.out_dir.join(format!("policy_path_{}.csv", wiring.name()));
        write_metrics_csv(&path, &b, &run.log)?;
        if wiring == cfg.train.wiring {
            break;
        }
    }
    Ok(cfg.out_dir.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priority::load_weights;

    fn tiny_cfg(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = DatasetSource::Bandit { per_mode: 20 };
        cfg.seeds = vec![0, 1];
        cfg.odpr.iterations = 2;
        cfg.fit.steps = 150;
        cfg.fit.batch_size = 32;
        cfg.fit.hidden = vec![8, 8];
        cfg.train.steps = 200;
        cfg.train.batch_size = 32;
        cfg.train.hidden = vec![8, 8];
        cfg.train.log_every = 100;
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    #[test]
    fn compute_priorities_writes_paired_weights_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let report = compute_priorities(&cfg).unwrap();
        let text = std::fs::read_to_string(report).unwrap();
        assert!(text.contains("\"aggregate\""));

        let d = sample_bandit(&GaussianBandit::default(), 20, 0).unwrap();
        let w = load_weights(dir.path().join("weights_seed0.wts"), &d).unwrap();
        assert_eq!(w.len(), d.len());
        // Same command, same bytes.
        let dir2 = tempfile::tempdir().unwrap();
        let cfg2 = ExperimentConfig { out_dir: dir2.path().to_path_buf(), ..tiny_cfg(dir.path()) };
        compute_priorities(&cfg2).unwrap();
        let a = std::fs::read(dir.path().join("weights_seed0.wts")).unwrap();
        let b = std::fs::read(dir2.path().join("weights_seed0.wts")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_bandit_writes_metrics_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.seeds = vec![3];
        let summary = run_bandit(&cfg).unwrap();
        let text = std::fs::read_to_string(summary).unwrap();
        assert!(text.contains("\"distance_mean\""));
        let csv_text =
            std::fs::read_to_string(dir.path().join("metrics_td3bc_dr_seed3.csv")).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,critic_loss,q_at_action,action_0,action_1,expected_reward,distance_to_optimal"
        );
        assert!(lines.count() >= 2);
    }

    #[test]
    fn run_tabular_concat_reports_expected_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.odpr.iterations = 1;
        let path = run_tabular(&cfg).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let w: Vec<f64> =
            v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(w, vec![0.5, 0.0, 0.0, 0.5]);
        assert!(v["j_prioritized"].as_f64().unwrap() > v["j_uniform"].as_f64().unwrap());
    }

    #[test]
    fn run_tabular_random_never_degrades() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.mdp_kind = "random".into();
        cfg.mdp_count = 5;
        cfg.mdp_states = 5;
        cfg.mdp_actions = 3;
        let path = run_tabular(&cfg).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(v["min_step_gain"].as_f64().unwrap() >= -1e-9);
    }

    #[test]
    fn export_figures_writes_scatters_per_round() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.seeds = vec![5];
        export_figures(&cfg).unwrap();
        for k in 0..=cfg.odpr.iterations {
            let text =
                std::fs::read_to_string(dir.path().join(format!("scatter_iter{k}.csv"))).unwrap();
            assert_eq!(text.lines().count(), SCATTER_DRAWS + 1);
        }
        assert!(dir.path().join("policy_path_vanilla.csv").exists());
        assert!(dir.path().join("policy_path_dr.csv").exists());
    }
}

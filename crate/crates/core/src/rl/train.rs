//! The ensemble-critic training loop on the point-mass task.

use serde::Serialize;

use crate::dpp::IndexSet;
use crate::error::{Error, Result};
use crate::kernel::build_similarity;
use crate::nn::{AdamConfig, AdamState, FlopLedger};
use crate::rl::config::TrainConfig;
use crate::rl::ensemble::{
    compute_target, critic_update, policy_update, target_polyak, CriticEnsemble,
};
use crate::rl::env::{PointMassEnv, PointState, ACTION_DIM, STATE_DIM};
use crate::rl::metrics::MetricsRow;
use crate::rl::policy::SquashedGaussianPolicy;
use crate::rl::replay::{ReplayBuffer, Transition};
use crate::rl::select::{select_critics, Selection};
use crate::rng::{streams, SeededRng};

const TARGET_STREAM: u64 = 7;
const POLICY_NOISE_STREAM: u64 = 8;

/// FLOPs split by where they were spent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunLedger {
    /// Critic forward passes on the batch and critic gradient steps.
    pub critic: FlopLedger,
    /// Policy gradient steps, including backprop through all critics.
    pub policy: FlopLedger,
    /// Target policy sampling and target-critic evaluation.
    pub target: FlopLedger,
    /// Policy inference while collecting experience.
    pub acting: FlopLedger,
}

impl RunLedger {
    pub fn total(&self) -> FlopLedger {
        self.critic + self.policy + self.target + self.acting
    }
}

/// Per-step backward costs from which backward-FLOP ratios are predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BackwardCosts {
    /// Backward FLOPs of updating one critic, per environment step.
    pub critic: u64,
    /// Backward FLOPs of one policy update, per environment step.
    pub policy: u64,
}

impl BackwardCosts {
    pub fn for_config(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = SeededRng::new(0);
        let r = &cfg.redq;
        let ens = CriticEnsemble::new(1, STATE_DIM, ACTION_DIM, &r.hidden, &mut rng)?;
        let pol = SquashedGaussianPolicy::new(STATE_DIM, ACTION_DIM, &r.hidden, &mut rng)?;
        let b = r.batch_size as u64;
        Ok(BackwardCosts {
            critic: r.utd as u64 * b * ens.critic_backward_flops_per_example(),
            policy: b
                * (r.n_critics as u64 * ens.critic_input_backward_flops_per_example()
                    + pol.net.backward_flops_per_example()),
        })
    }

    /// `(k·C_c + C_p) / (N·C_c + C_p)` as an exact fraction.
    pub fn ratio_fraction(&self, k: usize, n: usize) -> (u64, u64) {
        (
            k as u64 * self.critic + self.policy,
            n as u64 * self.critic + self.policy,
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub selection: Selection,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    /// Mean deterministic-policy return over the evaluation episodes.
    pub final_return: f64,
    pub ledger: RunLedger,
    pub update_rounds: u64,
    pub policy_updates: u64,
    pub dns_fallbacks: u64,
}

impl RunResult {
    /// Mean of `cross_critic_q_std` over rows in `[from, to)` as a fraction of
    /// the run length.
    pub fn mean_q_std_between(&self, total_steps: usize, from: f64, to: f64) -> f64 {
        let lo = from * total_steps as f64;
        let hi = to * total_steps as f64;
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| (r.step as f64) > lo && (r.step as f64) <= hi)
            .map(|r| r.cross_critic_q_std)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Deterministic evaluation start states for `seed`.
pub fn eval_starts(seed: u64, episodes: usize) -> Vec<PointState> {
    let mut rng = SeededRng::with_stream(seed, streams::EVAL);
    (0..episodes)
        .map(|_| PointState::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)))
        .collect()
}

/// Runs one variant for one seed. Deterministic in `(cfg, selection, seed)`.
pub fn train(cfg: &TrainConfig, selection: Selection, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let r = &cfg.redq;
    let n = r.n_critics;

    let mut init_rng = SeededRng::with_stream(seed, streams::INIT);
    let mut env_rng = SeededRng::with_stream(seed, streams::ENV);
    let mut act_rng = SeededRng::with_stream(seed, streams::ACTION);
    let mut replay_rng = SeededRng::with_stream(seed, streams::REPLAY);
    let mut sel_rng = SeededRng::with_stream(seed, streams::SELECTION);
    let mut metrics_rng = SeededRng::with_stream(seed, streams::METRICS);
    let mut target_rng = SeededRng::with_stream(seed, TARGET_STREAM);
    let mut noise_rng = SeededRng::with_stream(seed, POLICY_NOISE_STREAM);

    let mut policy = SquashedGaussianPolicy::new(STATE_DIM, ACTION_DIM, &r.hidden, &mut init_rng)?;
    let mut ensemble = CriticEnsemble::new(n, STATE_DIM, ACTION_DIM, &r.hidden, &mut init_rng)?;
    let mut policy_optim = AdamState::for_net(&policy.net);
    let critic_adam = AdamConfig::with_lr(r.critic_lr);
    let policy_adam = AdamConfig::with_lr(r.policy_lr);
    let mut buffer = ReplayBuffer::new(r.buffer_capacity, STATE_DIM, ACTION_DIM)?;
    let mut env = PointMassEnv::new(cfg.env, &mut env_rng);

    let mut ledger = RunLedger::default();
    let mut rows = Vec::with_capacity(cfg.total_steps / cfg.cadence + 1);
    let mut episode_return = 0.0;
    let mut last_return: Option<f64> = None;
    let mut last_selected: Option<IndexSet> = None;
    let (mut rounds, mut policy_updates, mut fallbacks) = (0u64, 0u64, 0u64);

    for step in 0..cfg.total_steps {
        let state = env.state();
        let action = if step < cfg.warmup_steps {
            act_rng.uniform_range(-1.0, 1.0)
        } else {
            policy
                .sample(&state.to_array(), 1, &mut act_rng, &mut ledger.acting)?
                .actions[0]
        };
        let (next, reward, done, limit) = env.step(action);
        buffer.push(&Transition {
            state: state.to_array().to_vec(),
            action: vec![action],
            reward,
            next_state: next.to_array().to_vec(),
            done,
        })?;
        episode_return += reward;
        if done || limit {
            last_return = Some(episode_return);
            episode_return = 0.0;
            env.reset(&mut env_rng);
        }

        if step + 1 >= cfg.warmup_steps && buffer.len() >= r.batch_size {
            let mut last_batch = None;
            for _ in 0..r.utd {
                let batch = buffer.sample(r.batch_size, &mut replay_rng)?;
                let sa = batch.state_actions(STATE_DIM, ACTION_DIM);
                let all: Vec<usize> = (0..n).collect();
                let (caches, outcome) = if selection.needs_all_q_values() {
                    let caches =
                        ensemble.forward_members(&all, &sa, batch.size, &mut ledger.critic)?;
                    let q: Vec<Vec<f64>> = if selection == Selection::Dns {
                        caches.iter().map(|(_, c)| c.output().to_vec()).collect()
                    } else {
                        Vec::new()
                    };
                    let outcome = select_critics(&q, n, r.k, selection, &mut sel_rng)?;
                    (caches, outcome)
                } else {
                    let outcome = select_critics(&[], n, r.k, selection, &mut sel_rng)?;
                    let caches = ensemble.forward_members(
                        outcome.members.members(),
                        &sa,
                        batch.size,
                        &mut ledger.critic,
                    )?;
                    (caches, outcome)
                };
                fallbacks += outcome.fallback as u64;
                let m_set = IndexSet::new(target_rng.subset(n, r.m_target))?;
                let y = compute_target(
                    &batch,
                    &ensemble,
                    &policy,
                    &m_set,
                    r.gamma,
                    r.alpha,
                    &mut target_rng,
                    &mut ledger.target,
                )?;
                critic_update(
                    &mut ensemble,
                    &outcome.members,
                    &sa,
                    &y,
                    caches,
                    &critic_adam,
                    &mut ledger.critic,
                )
                .map_err(|e| context(e, selection, seed, step))?;
                target_polyak(&mut ensemble, &outcome.members, r.rho)?;
                last_selected = Some(outcome.members);
                rounds += 1;
                last_batch = Some(batch);
            }
            let batch = last_batch.expect("utd >= 1");
            policy_update(
                &mut policy,
                &mut policy_optim,
                &ensemble,
                &batch,
                r.alpha,
                &policy_adam,
                &mut noise_rng,
                &mut ledger.policy,
            )
            .map_err(|e| context(e, selection, seed, step))?;
            policy_updates += 1;
        }

        if (step + 1) % cfg.cadence == 0 {
            let row = metrics_row(
                step + 1,
                last_return.unwrap_or(episode_return),
                &ensemble,
                &buffer,
                r.batch_size,
                &mut metrics_rng,
                &ledger,
                last_selected.clone(),
            )?;
            check_finite(&row, selection, seed)?;
            rows.push(row);
        }
    }

    let starts = eval_starts(seed, cfg.eval_episodes);
    let mut eval_env = PointMassEnv::new(cfg.env, &mut SeededRng::new(seed));
    let mut total = 0.0;
    for start in &starts {
        let mut err = None;
        total += eval_env.rollout(*start, |s| match policy.deterministic(&s.to_array()) {
            Ok(a) => a[0],
            Err(e) => {
                err = Some(e);
                0.0
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    let final_return = total / starts.len().max(1) as f64;
    if !final_return.is_finite() {
        return Err(Error::numeric(format!(
            "{selection} seed {seed}: final return not finite"
        )));
    }

    Ok(RunResult {
        selection,
        seed,
        rows,
        final_return,
        ledger,
        update_rounds: rounds,
        policy_updates,
        dns_fallbacks: fallbacks,
    })
}

fn context(e: Error, selection: Selection, seed: u64, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{selection} seed {seed} step {step}: {m}")),
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn metrics_row(
    step: usize,
    episode_return: f64,
    ensemble: &CriticEnsemble,
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut SeededRng,
    ledger: &RunLedger,
    selected: Option<IndexSet>,
) -> Result<MetricsRow> {
    let batch = buffer.sample(batch_size.max(2), rng)?;
    let sa = batch.state_actions(STATE_DIM, ACTION_DIM);
    let q = ensemble.q_values(&sa, batch.size)?;
    let means: Vec<f64> = q
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let sim = build_similarity(&q)?;
    let total = ledger.total();
    Ok(MetricsRow {
        step,
        episode_return,
        cross_critic_q_std: population_std(&means),
        mean_q_per_critic: means,
        mean_pairwise_cka: sim.mean_off_diagonal(),
        fwd_flops: total.forward_flops,
        bwd_flops: total.backward_flops,
        selected,
    })
}

fn check_finite(row: &MetricsRow, selection: Selection, seed: u64) -> Result<()> {
    let ok = row.episode_return.is_finite()
        && row.cross_critic_q_std.is_finite()
        && row.mean_pairwise_cka.is_finite()
        && row.mean_q_per_critic.iter().all(|q| q.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "{selection} seed {seed}: non-finite metrics at step {}",
            row.step
        )))
    }
}

//! Ensemble of Q-critics with target copies, the shared bootstrap target,
//! critic and policy updates.

use crate::dpp::IndexSet;
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, FlopLedger, ForwardCache, Mlp};
use crate::rl::policy::SquashedGaussianPolicy;
use crate::rl::replay::{concat_rows, Batch};
use crate::rng::SeededRng;

#[derive(Clone, Debug)]
pub struct CriticEnsemble {
    pub critics: Vec<Mlp>,
    pub targets: Vec<Mlp>,
    optims: Vec<AdamState>,
    state_dim: usize,
    action_dim: usize,
}

impl CriticEnsemble {
    /// `n` critics mapping `[state, action]` to a scalar; targets start as copies.
    pub fn new(
        n: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("ensemble needs at least one critic"));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let critics = (0..n)
            .map(|_| Mlp::new(&sizes, Activation::Relu, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_critics(critics, state_dim, action_dim))
    }

    pub fn from_critics(critics: Vec<Mlp>, state_dim: usize, action_dim: usize) -> Self {
        let targets = critics.clone();
        let optims = critics.iter().map(AdamState::for_net).collect();
        CriticEnsemble {
            critics,
            targets,
            optims,
            state_dim,
            action_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.critics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critics.is_empty()
    }

    pub fn critic_backward_flops_per_example(&self) -> u64 {
        self.critics[0].backward_flops_per_example()
    }

    pub fn critic_input_backward_flops_per_example(&self) -> u64 {
        self.critics[0].input_backward_flops_per_example()
    }

    /// Forward pass of the listed critics on `[state, action]` rows.
    pub fn forward_members(
        &self,
        members: &[usize],
        state_actions: &[f64],
        batch: usize,
        ledger: &mut FlopLedger,
    ) -> Result<Vec<(usize, ForwardCache)>> {
        members
            .iter()
            .map(|&i| {
                Ok((
                    i,
                    self.critics[i].forward_batch(state_actions, batch, ledger)?,
                ))
            })
            .collect()
    }

    /// Q-values of every critic on the batch, without touching any ledger.
    pub fn q_values(&self, state_actions: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut scratch = FlopLedger::new();
        self.critics
            .iter()
            .map(|c| {
                Ok(c.forward_batch(state_actions, batch, &mut scratch)?
                    .output()
                    .to_vec())
            })
            .collect()
    }
}

/// `y = r + γ(1 - done)(min_{i∈M} Q_targ,i(s', ã') - α log π(ã'|s'))`.
///
/// `target_q[m][b]` is the `m`-th subset member's value on example `b`.
pub fn bootstrap_target(
    rewards: &[f64],
    dones: &[f64],
    target_q: &[Vec<f64>],
    log_probs: &[f64],
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    if target_q.is_empty() {
        return Err(Error::validation(
            "in-target minimization needs a non-empty subset",
        ));
    }
    let batch = rewards.len();
    if dones.len() != batch || log_probs.len() != batch || target_q.iter().any(|q| q.len() != batch)
    {
        return Err(Error::validation("target inputs differ in batch length"));
    }
    Ok((0..batch)
        .map(|b| {
            let q_min = target_q.iter().map(|q| q[b]).fold(f64::INFINITY, f64::min);
            rewards[b] + gamma * (1.0 - dones[b]) * (q_min - alpha * log_probs[b])
        })
        .collect())
}

/// Samples `ã' ~ π(·|s')` and evaluates the target critics in `m_set`.
#[allow(clippy::too_many_arguments)]
pub fn compute_target(
    batch: &Batch,
    ensemble: &CriticEnsemble,
    policy: &SquashedGaussianPolicy,
    m_set: &IndexSet,
    gamma: f64,
    alpha: f64,
    rng: &mut SeededRng,
    ledger: &mut FlopLedger,
) -> Result<Vec<f64>> {
    if m_set.is_empty() {
        return Err(Error::validation("in-target subset must not be empty"));
    }
    if m_set.members().iter().any(|&i| i >= ensemble.len()) {
        return Err(Error::validation("in-target subset index out of range"));
    }
    let next = policy.sample(&batch.next_states, batch.size, rng, ledger)?;
    let sa = concat_rows(
        &batch.next_states,
        ensemble.state_dim,
        &next.actions,
        ensemble.action_dim,
        batch.size,
    );
    let target_q = m_set
        .members()
        .iter()
        .map(|&i| {
            Ok(ensemble.targets[i]
                .forward_batch(&sa, batch.size, ledger)?
                .output()
                .to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    bootstrap_target(
        &batch.rewards,
        &batch.dones,
        &target_q,
        &next.log_probs,
        gamma,
        alpha,
    )
}

/// One Adam step on `(1/|B|) Σ (Q_i - y)²` for each critic in `selected`,
/// reusing forward caches where supplied. Returns the pre-step loss of each
/// updated critic in `selected` order.
pub fn critic_update(
    ensemble: &mut CriticEnsemble,
    selected: &IndexSet,
    state_actions: &[f64],
    y: &[f64],
    caches: Vec<(usize, ForwardCache)>,
    adam: &AdamConfig,
    ledger: &mut FlopLedger,
) -> Result<Vec<f64>> {
    if selected.is_empty() {
        return Err(Error::validation(
            "at least one critic must be selected for update",
        ));
    }
    let batch = y.len();
    let mut caches = caches;
    let mut losses = Vec::with_capacity(selected.k());
    for &i in selected.members() {
        if i >= ensemble.len() {
            return Err(Error::validation(format!("critic index {i} out of range")));
        }
        let cache = match caches.iter().position(|(j, _)| *j == i) {
            Some(p) => caches.swap_remove(p).1,
            None => ensemble.critics[i].forward_batch(state_actions, batch, ledger)?,
        };
        let q = cache.output();
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(batch);
        for (qb, yb) in q.iter().zip(y) {
            let diff = qb - yb;
            loss += diff * diff;
            upstream.push(2.0 * diff / batch as f64);
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("critic {i} loss is not finite")));
        }
        let (grads, _) = ensemble.critics[i].backward(&cache, &upstream, ledger)?;
        adam_step(
            &mut ensemble.critics[i],
            &grads,
            &mut ensemble.optims[i],
            adam,
        )?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Polyak-averages the targets of the critics in `members` only.
pub fn target_polyak(ensemble: &mut CriticEnsemble, members: &IndexSet, rho: f64) -> Result<()> {
    for &i in members.members() {
        let (critics, targets) = (&ensemble.critics, &mut ensemble.targets);
        targets[i].polyak_from(&critics[i], rho)?;
    }
    Ok(())
}

/// Policy objective `(1/|B|) Σ_s [α log π(ã|s) - (1/N) Σ_i Q_i(s, ã)]` (to be
/// minimized) and its parameter gradient, for fixed reparameterization noise.
pub fn policy_loss_and_grad(
    policy: &SquashedGaussianPolicy,
    ensemble: &CriticEnsemble,
    states: &[f64],
    batch: usize,
    noise: &[f64],
    alpha: f64,
    ledger: &mut FlopLedger,
) -> Result<(f64, crate::nn::GradBundle)> {
    let sample = policy.sample_with_noise(states, batch, noise, ledger)?;
    let (ds, da) = (ensemble.state_dim, ensemble.action_dim);
    let sa = concat_rows(states, ds, &sample.actions, da, batch);
    let n = ensemble.len() as f64;
    let weight = 1.0 / (n * batch as f64);
    let upstream = vec![-weight; batch];
    let mut grad_actions = vec![0.0; batch * da];
    let mut q_sum = 0.0;
    for critic in &ensemble.critics {
        let cache = critic.forward_batch(&sa, batch, ledger)?;
        q_sum += cache.output().iter().sum::<f64>();
        let dx = critic.backward_input(&cache, &upstream, ledger)?;
        for b in 0..batch {
            for j in 0..da {
                grad_actions[b * da + j] += dx[b * (ds + da) + ds + j];
            }
        }
    }
    let loss = (alpha * sample.log_probs.iter().sum::<f64>() - q_sum / n) / batch as f64;
    let grads = policy.backward(&sample, &grad_actions, alpha / batch as f64, ledger)?;
    Ok((loss, grads))
}

/// Gradient step on the policy against the mean of all critics.
#[allow(clippy::too_many_arguments)]
pub fn policy_update(
    policy: &mut SquashedGaussianPolicy,
    optim: &mut AdamState,
    ensemble: &CriticEnsemble,
    batch: &Batch,
    alpha: f64,
    adam: &AdamConfig,
    rng: &mut SeededRng,
    ledger: &mut FlopLedger,
) -> Result<f64> {
    let noise = policy.draw_noise(batch.size, rng);
    let (loss, grads) = policy_loss_and_grad(
        policy,
        ensemble,
        &batch.states,
        batch.size,
        &noise,
        alpha,
        ledger,
    )?;
    if !loss.is_finite() {
        return Err(Error::numeric("policy loss is not finite"));
    }
    adam_step(&mut policy.net, &grads, optim, adam)?;
    Ok(loss)
}

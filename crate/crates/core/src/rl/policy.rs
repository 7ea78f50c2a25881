//! Tanh-squashed Gaussian policy with reparameterized sampling.

use crate::error::{Error, Result};
use crate::nn::{Activation, FlopLedger, ForwardCache, GradBundle, Mlp};
use crate::rng::SeededRng;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// The network emits `[mean (action_dim), log_std (action_dim)]` per state.
#[derive(Clone, Debug)]
pub struct SquashedGaussianPolicy {
    pub net: Mlp,
    action_dim: usize,
}

/// A batch of reparameterized actions with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    noise: Vec<f64>,
    std: Vec<f64>,
    log_std_clamped: Vec<bool>,
    cache: ForwardCache,
}

/// `log(1 - tanh(u)²)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl SquashedGaussianPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Ok(SquashedGaussianPolicy {
            net: Mlp::new(&sizes, Activation::Relu, rng)?,
            action_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_size()
    }

    /// Standard-normal noise for a batch, in draw order.
    pub fn draw_noise(&self, batch: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..batch * self.action_dim).map(|_| rng.normal()).collect()
    }

    /// `a = tanh(μ + σ ε)` for caller-supplied noise `ε`.
    pub fn sample_with_noise(
        &self,
        states: &[f64],
        batch: usize,
        noise: &[f64],
        ledger: &mut FlopLedger,
    ) -> Result<PolicySample> {
        let da = self.action_dim;
        if noise.len() != batch * da {
            return Err(Error::validation("policy noise has the wrong length"));
        }
        let cache = self.net.forward_batch(states, batch, ledger)?;
        let out = cache.output();
        let mut actions = Vec::with_capacity(batch * da);
        let mut log_probs = Vec::with_capacity(batch);
        let mut std = Vec::with_capacity(batch * da);
        let mut clamped = Vec::with_capacity(batch * da);
        for b in 0..batch {
            let row = &out[b * 2 * da..(b + 1) * 2 * da];
            let mut lp = 0.0;
            for j in 0..da {
                let raw = row[da + j];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let s = log_std.exp();
                let eps = noise[b * da + j];
                let u = row[j] + s * eps;
                let a = u.tanh();
                lp += -0.5 * eps * eps - log_std - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
                actions.push(a);
                std.push(s);
                clamped.push(raw != log_std);
            }
            log_probs.push(lp);
        }
        Ok(PolicySample {
            actions,
            log_probs,
            noise: noise.to_vec(),
            std,
            log_std_clamped: clamped,
            cache,
        })
    }

    pub fn sample(
        &self,
        states: &[f64],
        batch: usize,
        rng: &mut SeededRng,
        ledger: &mut FlopLedger,
    ) -> Result<PolicySample> {
        let noise = self.draw_noise(batch, rng);
        self.sample_with_noise(states, batch, &noise, ledger)
    }

    /// Mean action `tanh(μ)` for evaluation.
    pub fn deterministic(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = FlopLedger::new();
        let out = self.net.forward(state, &mut scratch)?;
        Ok(out[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }

    /// Mean log-std output over a batch of states.
    pub fn mean_log_std(&self, states: &[f64], batch: usize) -> Result<f64> {
        let mut scratch = FlopLedger::new();
        let cache = self.net.forward_batch(states, batch, &mut scratch)?;
        let da = self.action_dim;
        let mut s = 0.0;
        for row in cache.output().chunks(2 * da) {
            s += row[da..]
                .iter()
                .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .sum::<f64>();
        }
        Ok(s / (batch * da) as f64)
    }

    /// Backpropagates a loss of the form `Σ_b (g_a · a_b) + Σ_b w · log π_b`
    /// where `grad_actions` holds `∂loss/∂a` and `grad_log_prob` is the
    /// per-example weight `w` on the log-probability.
    pub fn backward(
        &self,
        sample: &PolicySample,
        grad_actions: &[f64],
        grad_log_prob: f64,
        ledger: &mut FlopLedger,
    ) -> Result<GradBundle> {
        let da = self.action_dim;
        let batch = sample.cache.batch();
        if grad_actions.len() != batch * da {
            return Err(Error::validation("action gradient has the wrong length"));
        }
        let mut upstream = vec![0.0; batch * 2 * da];
        for b in 0..batch {
            for j in 0..da {
                let i = b * da + j;
                let a = sample.actions[i];
                // d/du of the squash plus the -log(1 - tanh²u) term (= 2 tanh u)
                let du = grad_actions[i] * (1.0 - a * a) + grad_log_prob * 2.0 * a;
                upstream[b * 2 * da + j] = du;
                upstream[b * 2 * da + da + j] = if sample.log_std_clamped[i] {
                    0.0
                } else {
                    du * sample.std[i] * sample.noise[i] - grad_log_prob
                };
            }
        }
        let (grads, _) = self.net.backward(&sample.cache, &upstream, ledger)?;
        Ok(grads)
    }
}

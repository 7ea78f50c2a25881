use serde::{Deserialize, Serialize};

use super::mlp::{GradBundle, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn for_net(net: &Mlp) -> Self {
        Self::new(net.n_params())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Bias-corrected Adam update in place. A non-finite gradient skips the
/// step entirely and leaves both parameters and moments untouched.
pub fn adam_step(
    net: &mut Mlp,
    grads: &GradBundle,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = grads.as_slice();
    if g.len() != net.n_params() || state.m.len() != g.len() {
        return Err(Error::validation("gradient shape does not match network"));
    }
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite gradient at parameter {i}; step skipped"
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let params = net.params_mut();
    for i in 0..g.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

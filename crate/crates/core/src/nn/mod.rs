//! Fully-connected networks with hand-written reverse-mode gradients, an
//! Adam optimizer, and an analytic FLOP ledger.

mod adam;
mod flops;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use flops::FlopLedger;
pub use mlp::{Activation, ForwardCache, GradBundle, Mlp};

//! Diversity-driven selection of ensemble critics.
//!
//! Each update round, the critics' Q-values on the sampled batch are
//! compared pairwise with linear CKA; the resulting similarity matrix is
//! projected onto the PSD cone and used as an L-ensemble kernel from which
//! an exact k-DPP picks the `k` critics that receive gradients.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`linalg`] | Jacobi eigensolver, nearest-PSD projection, principal minors |
//! | [`kernel`] | Gram matrices, HSIC, CKA, the critic similarity matrix |
//! | [`dpp`] | Exact k-DPP sampler and enumeration oracles |
//! | [`nn`] | MLPs with manual backprop, Adam, FLOP ledger |
//! | [`rl`] | Point-mass task, replay, policy, ensemble training loop |
//! | [`variance_lab`] | Closed forms and Monte Carlo for the update-indicator mixture |
//! | [`cli`] | Subcommand drivers behind the `dns` binary |

pub mod cli;
pub mod dpp;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod variance_lab;

pub use error::{Error, Result};
pub use rng::SeededRng;

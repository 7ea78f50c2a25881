//! Choosing which critics receive gradient updates in a round.

use serde::{Deserialize, Serialize};

use crate::dpp::{IndexSet, KDppSampler};
use crate::error::{Error, Result};
use crate::kernel::build_similarity;
use crate::linalg::nearest_psd;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// k-DPP over the CKA similarity of the critics' Q-values.
    Dns,
    /// Uniform size-k subset.
    RandomK,
    /// Every critic.
    All,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Dns => "dns",
            Selection::RandomK => "random_k",
            Selection::All => "all",
        }
    }

    /// Whether the round needs every critic's Q-values before selecting.
    pub fn needs_all_q_values(self) -> bool {
        matches!(self, Selection::Dns | Selection::All)
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    pub members: IndexSet,
    /// True when DNS fell back to a uniform subset on a rank-deficient kernel.
    pub fallback: bool,
}

/// Picks the critics to update. `q_values[i]` holds critic `i`'s values on
/// the current batch; only DNS reads them.
pub fn select_critics(
    q_values: &[Vec<f64>],
    n_critics: usize,
    k: usize,
    selection: Selection,
    rng: &mut SeededRng,
) -> Result<SelectionOutcome> {
    if k == 0 || k > n_critics {
        return Err(Error::validation(format!(
            "need 1 <= k <= N, got k = {k}, N = {n_critics}"
        )));
    }
    match selection {
        Selection::All => Ok(SelectionOutcome {
            members: IndexSet::full(n_critics),
            fallback: false,
        }),
        Selection::RandomK => Ok(SelectionOutcome {
            members: IndexSet::new(rng.subset(n_critics, k))?,
            fallback: false,
        }),
        Selection::Dns => {
            if q_values.len() != n_critics {
                return Err(Error::validation("DNS needs Q-values from every critic"));
            }
            let sim = build_similarity(q_values)?;
            let kernel = nearest_psd(sim.as_sym())?;
            match KDppSampler::new(&kernel, k).and_then(|s| s.sample(rng)) {
                Ok(members) => Ok(SelectionOutcome {
                    members,
                    fallback: false,
                }),
                Err(Error::InsufficientRank(msg)) => {
                    log::info!("k-DPP unavailable ({msg}); uniform fallback");
                    Ok(SelectionOutcome {
                        members: IndexSet::new(rng.subset(n_critics, k))?,
                        fallback: true,
                    })
                }
                Err(e) => Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_selects_everything() {
        let out = select_critics(&[], 4, 2, Selection::All, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.members, IndexSet::full(4));
    }

    #[test]
    fn identical_critics_fall_back() {
        let q = vec![vec![0.1, 0.4, -0.3, 0.9]; 5];
        let out = select_critics(&q, 5, 3, Selection::Dns, &mut SeededRng::new(0)).unwrap();
        assert!(out.fallback);
        assert_eq!(out.members.k(), 3);
    }

    #[test]
    fn k_out_of_range() {
        let r = select_critics(&[], 4, 5, Selection::RandomK, &mut SeededRng::new(0));
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn uncorrelated_critics_select_uniformly() {
        // rows of a Hadamard matrix: zero-mean and pairwise orthogonal
        let q = vec![
            vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
            vec![1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
        ];
        let mut rng = SeededRng::new(11);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 30_000;
        for _ in 0..draws {
            let out = select_critics(&q, 4, 2, Selection::Dns, &mut rng).unwrap();
            assert!(!out.fallback);
            *counts.entry(out.members).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }
}

//! Tabular ensemble update `Q ← Q + α_tab·I·(Y - Q)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TabularEnsemble {
    n_states: usize,
    n_actions: usize,
    pub learning_rate: f64,
    tables: Vec<Vec<f64>>,
}

impl TabularEnsemble {
    pub fn new(
        members: usize,
        n_states: usize,
        n_actions: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        if members == 0 || n_states == 0 || n_actions == 0 {
            return Err(Error::validation(
                "tabular ensemble dimensions must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&learning_rate) {
            return Err(Error::validation(
                "tabular learning rate must lie in [0, 1]",
            ));
        }
        Ok(TabularEnsemble {
            n_states,
            n_actions,
            learning_rate,
            tables: vec![vec![0.0; n_states * n_actions]; members],
        })
    }

    pub fn members(&self) -> usize {
        self.tables.len()
    }

    pub fn q(&self, member: usize, s: usize, a: usize) -> f64 {
        self.tables[member][s * self.n_actions + a]
    }

    pub fn set_q(&mut self, member: usize, s: usize, a: usize, v: f64) {
        self.tables[member][s * self.n_actions + a] = v;
    }

    /// Moves each indicated member's `Q(s, a)` toward `target`.
    pub fn tabular_step(
        &mut self,
        s: usize,
        a: usize,
        target: f64,
        indicators: &[bool],
    ) -> Result<()> {
        if indicators.len() != self.tables.len() {
            return Err(Error::validation("one indicator per member required"));
        }
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::validation("state or action out of range"));
        }
        let idx = s * self.n_actions + a;
        for (table, &on) in self.tables.iter_mut().zip(indicators) {
            if on {
                table[idx] += self.learning_rate * (target - table[idx]);
            }
        }
        Ok(())
    }
}

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Sampled mini-batch, row-major per field.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<f64>,
}

impl Batch {
    /// `[state, action]` rows, the critic input layout.
    pub fn state_actions(&self, state_dim: usize, action_dim: usize) -> Vec<f64> {
        concat_rows(
            &self.states,
            state_dim,
            &self.actions,
            action_dim,
            self.size,
        )
    }
}

pub(crate) fn concat_rows(a: &[f64], da: usize, b: &[f64], db: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&a[r * da..(r + 1) * da]);
        out.extend_from_slice(&b[r * db..(r + 1) * db]);
    }
    out
}

/// Fixed-capacity ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<f64>,
    next: usize,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            dones: vec![0.0; capacity],
            next: 0,
            size: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim
            || t.next_state.len() != self.state_dim
            || t.action.len() != self.action_dim
        {
            return Err(Error::validation(
                "transition dimensions do not match the buffer",
            ));
        }
        if !t.reward.is_finite() {
            return Err(Error::validation("transition reward must be finite"));
        }
        let i = self.next;
        let (ds, da) = (self.state_dim, self.action_dim);
        self.states[i * ds..(i + 1) * ds].copy_from_slice(&t.state);
        self.next_states[i * ds..(i + 1) * ds].copy_from_slice(&t.next_state);
        self.actions[i * da..(i + 1) * da].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.dones[i] = if t.done { 1.0 } else { 0.0 };
        self.next = (self.next + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.size {
            return None;
        }
        let (ds, da) = (self.state_dim, self.action_dim);
        Some(Transition {
            state: self.states[i * ds..(i + 1) * ds].to_vec(),
            action: self.actions[i * da..(i + 1) * da].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * ds..(i + 1) * ds].to_vec(),
            done: self.dones[i] != 0.0,
        })
    }

    /// Uniform sample with replacement over the filled region.
    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Result<Batch> {
        if self.size == 0 {
            return Err(Error::Usage(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut b = Batch {
            size: batch,
            states: Vec::with_capacity(batch * ds),
            actions: Vec::with_capacity(batch * da),
            rewards: Vec::with_capacity(batch),
            next_states: Vec::with_capacity(batch * ds),
            dones: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            let i = rng.below(self.size);
            b.states
                .extend_from_slice(&self.states[i * ds..(i + 1) * ds]);
            b.actions
                .extend_from_slice(&self.actions[i * da..(i + 1) * da]);
            b.rewards.push(self.rewards[i]);
            b.next_states
                .extend_from_slice(&self.next_states[i * ds..(i + 1) * ds]);
            b.dones.push(self.dones[i]);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(x: f64) -> Transition {
        Transition {
            state: vec![x, 0.0],
            action: vec![0.5],
            reward: -x,
            next_state: vec![x + 1.0, 0.0],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 2, 1).unwrap();
        for i in 0..5 {
            b.push(&tr(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let xs: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().state[0]).collect();
        assert_eq!(xs, vec![3.0, 4.0, 2.0]);
        assert!(b.get(3).is_none());
    }

    #[test]
    fn samples_only_filled_region() {
        let mut b = ReplayBuffer::new(100, 2, 1).unwrap();
        b.push(&tr(7.0)).unwrap();
        b.push(&tr(8.0)).unwrap();
        let s = b.sample(64, &mut SeededRng::new(0)).unwrap();
        assert!(s.states.chunks(2).all(|r| r[0] == 7.0 || r[0] == 8.0));
        assert_eq!(s.state_actions(2, 1).len(), 64 * 3);
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut b = ReplayBuffer::new(4, 2, 1).unwrap();
        let mut t = tr(0.0);
        t.action = vec![];
        assert!(b.push(&t).is_err());
        let mut t = tr(0.0);
        t.reward = f64::INFINITY;
        assert!(b.push(&t).is_err());
        assert!(ReplayBuffer::new(4, 2, 1)
            .unwrap()
            .sample(1, &mut SeededRng::new(0))
            .is_err());
    }
}

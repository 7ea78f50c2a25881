use serde::Serialize;

/// Analytic floating-point operation counter.
///
/// Convention: a multiply-add is 2 FLOPs; a bias add, an activation and an
/// activation derivative are 1 FLOP per element. Counters only grow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopLedger {
    pub forward_flops: u64,
    pub backward_flops: u64,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_forward(&mut self, flops: u64) {
        self.forward_flops += flops;
    }

    pub fn charge_backward(&mut self, flops: u64) {
        self.backward_flops += flops;
    }

    pub fn total(&self) -> u64 {
        self.forward_flops + self.backward_flops
    }

    pub fn merge(&mut self, other: &FlopLedger) {
        self.forward_flops += other.forward_flops;
        self.backward_flops += other.backward_flops;
    }
}

impl std::ops::Add for FlopLedger {
    type Output = FlopLedger;

    fn add(mut self, rhs: FlopLedger) -> FlopLedger {
        self.merge(&rhs);
        self
    }
}

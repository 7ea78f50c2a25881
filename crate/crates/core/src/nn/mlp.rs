use serde::{Deserialize, Serialize};

use super::flops::FlopLedger;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Multi-layer perceptron with all parameters in one flat buffer. Layer
/// `l` stores its `out×in` row-major weights followed by its biases.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerSpan>,
    params: Vec<f64>,
}

/// Gradients laid out exactly like [`Mlp`] parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle(Vec<f64>);

impl GradBundle {
    pub fn zeros(n: usize) -> Self {
        GradBundle(vec![0.0; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        GradBundle(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Per-layer outputs from a batched forward pass, consumed by backward.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Network output, `batch × out` row-major.
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for span in net.layers.clone() {
            let bound = 1.0 / (span.fan_in as f64).sqrt();
            let end = span.b + span.fan_out;
            for p in &mut net.params[span.w..end] {
                *p = rng.uniform_range(-bound, bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::validation(
                "an MLP needs at least input and output sizes",
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::validation("layer sizes must be positive"));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(LayerSpan {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            layers,
            params: vec![0.0; off],
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sets layer `layer`'s weights (`out×in` row-major) and biases.
    pub fn set_layer(&mut self, layer: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
        let span = *self
            .layers
            .get(layer)
            .ok_or_else(|| Error::validation(format!("no layer {layer}")))?;
        if weights.len() != span.fan_in * span.fan_out || biases.len() != span.fan_out {
            return Err(Error::validation("layer parameter shape mismatch"));
        }
        self.params[span.w..span.b].copy_from_slice(weights);
        self.params[span.b..span.b + span.fan_out].copy_from_slice(biases);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Per-example forward cost: `Σ 2·in·out + out + out`.
    pub fn forward_flops_per_example(&self) -> u64 {
        self.layers
            .iter()
            .map(|s| (2 * s.fan_in * s.fan_out + 2 * s.fan_out) as u64)
            .sum()
    }

    /// Per-example cost of a full backward pass (parameter and input
    /// gradients): twice the forward multiply-adds plus derivative masking.
    pub fn backward_flops_per_example(&self) -> u64 {
        self.layers
            .iter()
            .map(|s| (4 * s.fan_in * s.fan_out + s.fan_out) as u64)
            .sum()
    }

    /// Per-example cost of an input-gradient-only backward pass.
    pub fn input_backward_flops_per_example(&self) -> u64 {
        self.layers
            .iter()
            .map(|s| (2 * s.fan_in * s.fan_out + s.fan_out) as u64)
            .sum()
    }

    /// Single-example forward pass.
    pub fn forward(&self, input: &[f64], ledger: &mut FlopLedger) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1, ledger)?.output().to_vec())
    }

    /// Forward pass over `batch` examples stored row-major in `input`.
    pub fn forward_batch(
        &self,
        input: &[f64],
        batch: usize,
        ledger: &mut FlopLedger,
    ) -> Result<ForwardCache> {
        if input.len() != batch * self.input_size() {
            return Err(Error::validation(format!(
                "input has {} values, expected {batch} x {}",
                input.len(),
                self.input_size()
            )));
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, span) in self.layers.iter().enumerate() {
            let x = if l == 0 { input } else { &outputs[l - 1] };
            let bias = &self.params[span.b..span.b + span.fan_out];
            let mut z = Vec::with_capacity(batch * span.fan_out);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            // z += x Wᵀ
            unsafe {
                matrixmultiply::dgemm(
                    batch,
                    span.fan_in,
                    span.fan_out,
                    1.0,
                    x.as_ptr(),
                    span.fan_in as isize,
                    1,
                    self.params[span.w..].as_ptr(),
                    1,
                    span.fan_in as isize,
                    1.0,
                    z.as_mut_ptr(),
                    span.fan_out as isize,
                    1,
                );
            }
            if l != last {
                match self.activation {
                    Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            outputs.push(z);
        }
        ledger.charge_forward(self.forward_flops_per_example() * batch as u64);
        Ok(ForwardCache {
            batch,
            input: input.to_vec(),
            outputs,
        })
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<()> {
        if cache.outputs.len() != self.layers.len()
            || cache.input.len() != cache.batch * self.input_size()
        {
            return Err(Error::Usage(
                "forward cache does not belong to this network".into(),
            ));
        }
        if upstream.len() != cache.batch * self.output_size() {
            return Err(Error::validation(format!(
                "upstream gradient has {} values, expected {} x {}",
                upstream.len(),
                cache.batch,
                self.output_size()
            )));
        }
        Ok(())
    }

    /// Multiplies `delta` by the activation derivative of layer `l`'s output.
    fn mask(&self, l: usize, post: &[f64], delta: &mut [f64]) {
        if l == self.layers.len() - 1 {
            return;
        }
        match self.activation {
            Activation::Relu => {
                for (d, &y) in delta.iter_mut().zip(post) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &y) in delta.iter_mut().zip(post) {
                    *d *= 1.0 - y * y;
                }
            }
        }
    }

    /// Reverse pass: gradients of `Σ upstream ⊙ output` with respect to all
    /// parameters and to the input (`batch × in`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        ledger: &mut FlopLedger,
    ) -> Result<(GradBundle, Vec<f64>)> {
        self.check_cache(cache, upstream)?;
        let batch = cache.batch;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let span = self.layers[l];
            self.mask(l, &cache.outputs[l], &mut delta);
            let x: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.outputs[l - 1]
            };
            // dW = deltaᵀ x
            unsafe {
                matrixmultiply::dgemm(
                    span.fan_out,
                    batch,
                    span.fan_in,
                    1.0,
                    delta.as_ptr(),
                    1,
                    span.fan_out as isize,
                    x.as_ptr(),
                    span.fan_in as isize,
                    1,
                    0.0,
                    grads[span.w..].as_mut_ptr(),
                    span.fan_in as isize,
                    1,
                );
            }
            let gb = &mut grads[span.b..span.b + span.fan_out];
            for row in delta.chunks(span.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            delta = self.propagate(span, &delta, batch);
        }
        ledger.charge_backward(self.backward_flops_per_example() * batch as u64);
        Ok((GradBundle(grads), delta))
    }

    /// Gradient with respect to the input only (parameters untouched).
    pub fn backward_input(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        ledger: &mut FlopLedger,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache, upstream)?;
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            self.mask(l, &cache.outputs[l], &mut delta);
            delta = self.propagate(self.layers[l], &delta, cache.batch);
        }
        ledger.charge_backward(self.input_backward_flops_per_example() * cache.batch as u64);
        Ok(delta)
    }

    /// `delta W`, mapping a `batch × out` gradient back to `batch × in`.
    fn propagate(&self, span: LayerSpan, delta: &[f64], batch: usize) -> Vec<f64> {
        let mut dx = vec![0.0; batch * span.fan_in];
        unsafe {
            matrixmultiply::dgemm(
                batch,
                span.fan_out,
                span.fan_in,
                1.0,
                delta.as_ptr(),
                span.fan_out as isize,
                1,
                self.params[span.w..].as_ptr(),
                span.fan_in as isize,
                1,
                0.0,
                dx.as_mut_ptr(),
                span.fan_in as isize,
                1,
            );
        }
        dx
    }

    /// `self ← ρ·self + (1-ρ)·source`, elementwise.
    pub fn polyak_from(&mut self, source: &Mlp, rho: f64) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(Error::validation(
                "polyak update between differently shaped networks",
            ));
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = rho * *t + (1.0 - rho) * s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gives_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu).unwrap();
        let mut l = FlopLedger::new();
        assert_eq!(
            net.forward(&[1.0, -2.0, 3.0], &mut l).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn single_affine_layer() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        net.set_layer(0, &[2.0], &[1.0]).unwrap();
        let mut l = FlopLedger::new();
        assert_eq!(net.forward(&[3.0], &mut l).unwrap(), vec![7.0]);
    }

    #[test]
    fn forward_flop_count() {
        let net = Mlp::new(&[4, 8, 1], Activation::Relu, &mut SeededRng::new(0)).unwrap();
        let mut l = FlopLedger::new();
        net.forward(&[0.1, 0.2, 0.3, 0.4], &mut l).unwrap();
        // 2·4·8 + 8 + 8 + 2·8·1 + 1 + 1
        assert_eq!(l.forward_flops, 98);
        assert_eq!(l.backward_flops, 0);
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut net = Mlp::zeros(&[3, 1], Activation::Relu).unwrap();
        net.set_layer(0, &[0.5, -1.0, 2.0], &[0.1]).unwrap();
        let mut l = FlopLedger::new();
        let x = [1.5, -2.0, 0.25];
        let cache = net.forward_batch(&x, 1, &mut l).unwrap();
        let (g, dx) = net.backward(&cache, &[1.0], &mut l).unwrap();
        assert_eq!(&g.as_slice()[..3], &x);
        assert_eq!(g.as_slice()[3], 1.0);
        assert_eq!(dx, vec![0.5, -1.0, 2.0]);
        assert_eq!(l.backward_flops, 4 * 3 + 1);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Relu).unwrap();
        net.set_layer(0, &[1.0], &[-5.0]).unwrap();
        net.set_layer(1, &[3.0], &[0.0]).unwrap();
        let mut l = FlopLedger::new();
        let cache = net.forward_batch(&[1.0], 1, &mut l).unwrap();
        let (g, dx) = net.backward(&cache, &[1.0], &mut l).unwrap();
        // first layer weight and bias get nothing through the dead unit
        assert_eq!(g.as_slice()[0], 0.0);
        assert_eq!(g.as_slice()[1], 0.0);
        assert_eq!(dx, vec![0.0]);
    }

    #[test]
    fn input_only_backward_matches_full() {
        let net = Mlp::new(&[3, 5, 5, 2], Activation::Tanh, &mut SeededRng::new(2)).unwrap();
        let mut l = FlopLedger::new();
        let x = [0.3, -0.1, 0.8, 1.0, 0.0, -0.5];
        let cache = net.forward_batch(&x, 2, &mut l).unwrap();
        let up = [0.2, -1.0, 0.5, 0.7];
        let (_, a) = net.backward(&cache, &up, &mut l).unwrap();
        let b = net.backward_input(&cache, &up, &mut l).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[2, 1], Activation::Relu).unwrap();
        let mut l = FlopLedger::new();
        assert!(net.forward(&[1.0], &mut l).is_err());
        let cache = net.forward_batch(&[1.0, 2.0], 1, &mut l).unwrap();
        let other = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        assert!(matches!(
            other.backward(&cache, &[1.0], &mut l),
            Err(Error::Usage(_))
        ));
        assert!(Mlp::zeros(&[2], Activation::Relu).is_err());
    }

    #[test]
    fn polyak_endpoints() {
        let mut r = SeededRng::new(3);
        let src = Mlp::new(&[2, 2], Activation::Relu, &mut r).unwrap();
        let mut t = Mlp::zeros(&[2, 2], Activation::Relu).unwrap();
        t.polyak_from(&src, 1.0).unwrap();
        assert!(t.params().iter().all(|&p| p == 0.0));
        t.polyak_from(&src, 0.0).unwrap();
        assert_eq!(t.params(), src.params());

        let mut z = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        let mut one = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        one.set_layer(0, &[1.0], &[1.0]).unwrap();
        z.polyak_from(&one, 0.995).unwrap();
        for p in z.params() {
            assert!((p - 0.005).abs() < 1e-15);
        }
    }
}

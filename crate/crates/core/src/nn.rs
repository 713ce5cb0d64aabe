//! Dense approximators with hand-written backprop and an Adam optimizer.
//!
//! Networks are `[input -> hidden... -> output]` with tanh on hidden layers
//! and a linear head. Weights are stored row-major as `out_dim x in_dim`.
//! Parameter order (used by initialization and flat indexing) is layer by
//! layer, weights before biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::StageMask;
use crate::rng::SplitMix64;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.biases) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

/// Parameters of one network. Also used as the container for gradients and
/// optimizer moments, which share its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer activations from a forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[i+1]` is the output of layer `i`
    /// (post-tanh for hidden layers).
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes, e.g. `[38, 64, 64, 6]`.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Glorot-uniform weights in declared order, zero biases.
    pub fn init(dims: &[usize], rng: &mut SplitMix64) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.next_range(-bound, bound);
            }
        }
        net
    }

    /// Standard two-hidden-layer shape.
    pub fn standard_dims(input: usize, output: usize, hidden: usize) -> Vec<usize> {
        vec![input, hidden, hidden, output]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Check internal shape consistency and finiteness, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(Error::Shape {
                    what: "layer weights",
                    expected: l.in_dim * l.out_dim,
                    got: l.weights.len(),
                });
            }
            if l.biases.len() != l.out_dim {
                return Err(Error::Shape {
                    what: "layer biases",
                    expected: l.out_dim,
                    got: l.biases.len(),
                });
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::Shape {
                    what: "layer chaining",
                    expected: self.layers[i - 1].out_dim,
                    got: l.in_dim,
                });
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn slot(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter at a flat index in declared order.
    pub fn param(&self, index: usize) -> f64 {
        *self.clone_slot(index)
    }

    fn clone_slot(&self, mut index: usize) -> &f64 {
        for l in &self.layers {
            if index < l.weights.len() {
                return &l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.slot(index) = value;
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.out_dim);
            layer.apply(&acts[i], &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        Ok(ForwardCache { acts })
    }

    /// Accumulate into `grads` the gradient of `output . upstream` with
    /// respect to every parameter, given a cache from [`Mlp::forward_cached`].
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut Mlp,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                // tanh'(z) = 1 - tanh(z)^2, and acts[i+1] holds tanh(z)
                for (d, a) in delta.iter_mut().zip(&cache.acts[i + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &cache.acts[i];
            let g = &mut grads.layers[i];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += d;
                if *d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, xv) in row.iter_mut().zip(x) {
                        *gw += d * xv;
                    }
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (row, d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Gradient of `forward(input) . upstream` as a fresh parameter-shaped value.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Mlp> {
        let cache = self.forward_cached(input)?;
        let mut grads = self.zeros_like();
        self.backward_into(&cache, upstream, &mut grads)?;
        Ok(grads)
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(&mut l.biases)
                .for_each(|v| *v *= factor);
        }
    }

    fn zip_apply(&mut self, other: &Mlp, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                f(x, *y);
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                f(x, *y);
            }
        }
    }
}

/// Log-probabilities of a softmax restricted to `mask`; entries outside the
/// mask are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &StageMask) -> Result<Vec<f64>> {
    if logits.len() != mask.n_stages() {
        return Err(Error::Shape {
            what: "logits",
            expected: mask.n_stages(),
            got: logits.len(),
        });
    }
    let allowed = mask.as_bools();
    let max = logits
        .iter()
        .zip(&allowed)
        .filter(|(_, a)| **a)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(&allowed)
        .filter(|(_, a)| **a)
        .map(|(v, _)| (v - max).exp())
        .sum();
    let log_z = max + sum.ln();
    Ok(logits
        .iter()
        .zip(&allowed)
        .map(|(v, a)| if *a { v - log_z } else { f64::NEG_INFINITY })
        .collect())
}

/// Probabilities of the masked softmax; exactly zero outside the mask.
pub fn masked_softmax(logits: &[f64], mask: &StageMask) -> Result<Vec<f64>> {
    Ok(masked_log_softmax(logits, mask)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Mlp,
    pub second_moment: Mlp,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn optimizer_step(params: &mut Mlp, grads: &Mlp, state: &mut OptimizerState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    if grads.dims() != params.dims() {
        return Err(Error::Shape {
            what: "gradient parameter count",
            expected: params.num_params(),
            got: grads.num_params(),
        });
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    state
        .first_moment
        .zip_apply(grads, |m, g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
    state
        .second_moment
        .zip_apply(grads, |v, g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let mut update = state.first_moment.clone();
    update.zip_apply(&state.second_moment, |m, v| {
        *m = c.step_size * (*m / bc1) / ((v / bc2).sqrt() + c.epsilon)
    });
    params.zip_apply(&update, |p, u| *p -= u);
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // reference loops mirror the math
mod tests {
    use super::*;
    use crate::mdp::{valid_actions, Stage};

    fn mask(s: usize) -> StageMask {
        valid_actions(Stage::new(s, 6).unwrap(), 6).unwrap()
    }

    /// Independent reference forward pass over nested loops.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = net.layers.len();
        for (li, l) in net.layers.iter().enumerate() {
            let mut y = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut acc = l.biases[o];
                for i in 0..l.in_dim {
                    acc += l.weights[o * l.in_dim + i] * x[i];
                }
                y[o] = if li + 1 < n { acc.tanh() } else { acc };
            }
            x = y;
        }
        x
    }

    #[test]
    fn zero_net_zero_output() {
        let net = Mlp::zeros(&[5, 7, 7, 3]);
        assert_eq!(
            net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn bias_only_linear_layer() {
        let mut net = Mlp::zeros(&[4, 3]);
        net.layers[0].biases = vec![0.5, -1.0, 2.0];
        assert_eq!(net.forward(&[0.0; 4]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = SplitMix64::new(11);
        let mut net = Mlp::init(&[6, 9, 9, 4], &mut rng);
        for l in &mut net.layers {
            l.biases
                .iter_mut()
                .for_each(|b| *b = rng.next_range(-0.5, 0.5));
        }
        let x: Vec<f64> = (0..6).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let got = net.forward(&x).unwrap();
        let want = reference_forward(&net, &x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(net.forward(&[0.0; 5]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(5);
        let mut net = Mlp::init(&[7, 10, 10, 4], &mut rng);
        for l in &mut net.layers {
            l.biases
                .iter_mut()
                .for_each(|b| *b = rng.next_range(-0.3, 0.3));
        }
        let x: Vec<f64> = (0..7).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let up: Vec<f64> = (0..4).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let grads = net.backward(&x, &up).unwrap();
        let objective = |n: &Mlp| -> f64 {
            n.forward(&x)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-5;
        let total = net.num_params();
        for _ in 0..20 {
            let idx = rng.next_index(total);
            let orig = net.param(idx);
            let mut plus = net.clone();
            plus.set_param(idx, orig + h);
            let mut minus = net.clone();
            minus.set_param(idx, orig - h);
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = grads.param(idx);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel <= 1e-4, "param {idx}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let mut rng = SplitMix64::new(1);
        let net = Mlp::init(&[3, 4, 2], &mut rng);
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(g, net.zeros_like());
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        let mut rng = SplitMix64::new(2);
        let net = Mlp::init(&[3, 2], &mut rng);
        let x = [0.5, -1.0, 2.0];
        let up = [3.0, -0.25];
        let g = net.backward(&x, &up).unwrap();
        for o in 0..2 {
            assert_eq!(g.layers[0].biases[o], up[o]);
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], up[o] * x[i]);
            }
        }
    }

    #[test]
    fn masked_log_softmax_uniform() {
        let out = masked_log_softmax(&[2.0; 6], &mask(2)).unwrap();
        for (i, v) in out.iter().enumerate() {
            if i < 3 {
                assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-15);
            } else {
                assert_eq!(*v, f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn masked_softmax_two_way() {
        let p = masked_softmax(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0], &mask(6)).unwrap();
        // two-way softmax oracle: 1 / (1 + e^10)
        let small = 1.0 / (1.0 + 10f64.exp());
        assert_eq!(&p[..4], &[0.0; 4]);
        assert!((p[4] - small).abs() < 1e-15);
        assert!((p[4] - 4.54e-5).abs() < 1e-7);
        assert!((p[5] - (1.0 - small)).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_normalized_and_shift_invariant() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..500 {
            let logits: Vec<f64> = (0..6).map(|_| rng.next_range(-30.0, 30.0)).collect();
            let s = 1 + rng.next_index(6);
            let m = mask(s);
            let p = masked_softmax(&logits, &m).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let c = rng.next_range(-100.0, 100.0);
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let a = masked_log_softmax(&logits, &m).unwrap();
            let b = masked_log_softmax(&shifted, &m).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(x == y || (x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut rng = SplitMix64::new(4);
        let mut net = Mlp::init(&[3, 4, 2], &mut rng);
        let before = net.clone();
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        let zero = net.zeros_like();
        optimizer_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut g = net.zeros_like();
        g.layers[0].weights[0] = 2.0;
        g.layers[0].biases[0] = -3.0;
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        for _ in 0..100 {
            optimizer_step(&mut net, &g, &mut st).unwrap();
        }
        assert!(net.layers[0].weights[0] < 0.0);
        assert!(net.layers[0].biases[0] > 0.0);
    }

    #[test]
    fn adam_one_step_matches_hand_formula() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].weights[0] = 0.7;
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        st.first_moment.layers[0].weights[0] = 0.2;
        st.second_moment.layers[0].weights[0] = 0.05;
        st.step = 3;
        let mut g = net.zeros_like();
        g.layers[0].weights[0] = 0.4;
        optimizer_step(&mut net, &g, &mut st).unwrap();

        let m = 0.9 * 0.2 + 0.1 * 0.4;
        let v = 0.999 * 0.05 + 0.001 * 0.16;
        let mhat = m / (1.0 - 0.9f64.powi(4));
        let vhat = v / (1.0 - 0.999f64.powi(4));
        let expect = 0.7 - 1e-3 * mhat / (vhat.sqrt() + 1e-8);
        assert!((net.layers[0].weights[0] - expect).abs() <= 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1]);
        let mut g = net.zeros_like();
        g.layers[0].biases[0] = f64::NAN;
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        assert!(matches!(
            optimizer_step(&mut net, &g, &mut st),
            Err(Error::Numeric(_))
        ));
    }
}

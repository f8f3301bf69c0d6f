//! Deferred view-dependence network.
//!
//! Evaluated once per ray on the accumulated diffuse color, the accumulated
//! feature vector and an encoding of the viewing direction. The output is a
//! residual added to the diffuse color.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::math::{sigmoid, Vec3};

/// Number of sinusoid frequencies used for the direction encoding.
pub const DIRECTION_FREQUENCIES: usize = 4;
/// `3 + 2 · 3 · DIRECTION_FREQUENCIES`
pub const DIRECTION_ENCODING_DIM: usize = 3 + 2 * 3 * DIRECTION_FREQUENCIES;
pub const MLP_INPUT_DIM: usize = 3 + FEATURE_DIM + DIRECTION_ENCODING_DIM;
pub const MLP_HIDDEN: usize = 16;
pub const MLP_OUTPUT_DIM: usize = 3;

/// Bias of the output layer at initialisation; keeps the initial residual
/// small so the clamped color starts out unsaturated.
pub const OUTPUT_BIAS_INIT: f64 = -3.0;

/// `d` followed by `sin(2^k d_j), cos(2^k d_j)` for each axis `j` (outer)
/// and frequency `k` (inner).
pub fn encode_direction(d: Vec3) -> [f64; DIRECTION_ENCODING_DIM] {
    let mut out = [0.0; DIRECTION_ENCODING_DIM];
    out[..3].copy_from_slice(&d.to_array());
    let mut i = 3;
    for j in 0..3 {
        let mut scale = 1.0;
        for _ in 0..DIRECTION_FREQUENCIES {
            let (s, c) = (scale * d[j]).sin_cos();
            out[i] = s;
            out[i + 1] = c;
            i += 2;
            scale *= 2.0;
        }
    }
    out
}

/// Fully connected layer, weights stored row-major as `[output][input]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let acc: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(acc + self.bias[o]);
        }
    }
}

/// Small MLP: rectifier on hidden layers, sigmoid on the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeferredMlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    /// Input of every layer, followed by the final output.
    activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl DeferredMlp {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch(format!("layer {i} has inconsistent weight shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    layers[i - 1].outputs,
                    l.inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// The standard `34 → 16 → 16 → 3` shape with all parameters zero.
    pub fn zeros() -> Self {
        Self {
            layers: vec![
                DenseLayer::zeros(MLP_INPUT_DIM, MLP_HIDDEN),
                DenseLayer::zeros(MLP_HIDDEN, MLP_HIDDEN),
                DenseLayer::zeros(MLP_HIDDEN, MLP_OUTPUT_DIM),
            ],
        }
    }

    /// Glorot-uniform weights from a seeded stream, zero hidden biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros();
        for layer in &mut net.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..bound);
            }
        }
        if let Some(last) = net.layers.last_mut() {
            last.bias.iter_mut().for_each(|b| *b = OUTPUT_BIAS_INIT);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output().to_vec())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<MlpTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(activations.last().unwrap(), &mut out);
            if i == last {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(out);
        }
        Ok(MlpTrace { activations })
    }

    /// Accumulates parameter gradients into `grads` (same shape as `self`)
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut DeferredMlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = trace.activations[last + 1]
            .iter()
            .zip(d_output)
            .map(|(y, g)| g * y * (1.0 - y))
            .collect();
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input = &trace.activations[i];
            let g = &mut grads.layers[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            let mut d_input = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (di, w) in d_input.iter_mut().zip(row) {
                    *di += d * w;
                }
            }
            if i > 0 {
                // rectifier mask from this layer's input (previous output)
                for (di, x) in d_input.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            delta = d_input;
        }
        delta
    }

    /// Zeroed network of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DeferredMlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Input vector `[C_d, F, encode(d)]`.
    pub fn shading_input(diffuse: [f64; 3], feature: &[f64], d: Vec3) -> Vec<f64> {
        let mut input = Vec::with_capacity(3 + feature.len() + DIRECTION_ENCODING_DIM);
        input.extend_from_slice(&diffuse);
        input.extend_from_slice(feature);
        input.extend_from_slice(&encode_direction(d));
        input
    }
}

/// Final ray color `clamp(C_d + h(C_d, F, d), 0, 1)`.
pub fn deferred_shade(diffuse: [f64; 3], feature: &[f64], d: Vec3, mlp: &DeferredMlp) -> Result<[f64; 3]> {
    if mlp.output_dim() != 3 {
        return Err(Error::DimensionMismatch(format!("network outputs {} values, need 3", mlp.output_dim())));
    }
    let residual = mlp.forward(&DeferredMlp::shading_input(diffuse, feature, d))?;
    Ok([
        (diffuse[0] + residual[0]).clamp(0.0, 1.0),
        (diffuse[1] + residual[1]).clamp(0.0, 1.0),
        (diffuse[2] + residual[2]).clamp(0.0, 1.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_layout() {
        let e = encode_direction(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(e.len(), 27);
        assert_eq!(&e[..3], &[0.0, 0.0, 1.0]);
        for k in 0..4 {
            assert_eq!(e[3 + 2 * k], 0.0);
            assert_eq!(e[3 + 2 * k + 1], 1.0);
        }
        let e = encode_direction(Vec3::new(1.0, 0.0, 0.0));
        // x axis, frequency index 1 → sin(2)
        assert!((e[5] - 0.909_297_426_825_681_7).abs() < 1e-12);
        assert!((e[6] - 2f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn zero_network_adds_half() {
        let c = deferred_shade([0.2, 0.7, 0.4], &[0.1; 4], Vec3::new(0.0, 0.0, 1.0), &DeferredMlp::zeros()).unwrap();
        assert_eq!(c, [0.7, 1.0, 0.9]);
    }

    #[test]
    fn tiny_network_by_hand() {
        // 2 → 2 → 1: h1 = relu(x0 - x1), h2 = relu(2 x1 + 0.5); y = σ(h1 - h2)
        let net = DeferredMlp::new(vec![
            DenseLayer { inputs: 2, outputs: 2, weights: vec![1.0, -1.0, 0.0, 2.0], bias: vec![0.0, 0.5] },
            DenseLayer { inputs: 2, outputs: 1, weights: vec![1.0, -1.0], bias: vec![0.0] },
        ])
        .unwrap();
        // x = (3, 1): h = (2, 2.5); y = σ(-0.5)
        let y = net.forward(&[3.0, 1.0]).unwrap();
        assert!((y[0] - 0.377_540_668_798_145_4).abs() < 1e-12);
        // x = (0, 1): h1 clipped → h = (0, 2.5); y = σ(-2.5)
        let y = net.forward(&[0.0, 1.0]).unwrap();
        assert!((y[0] - 0.075_858_180_021_243_56).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = DeferredMlp::new(vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(5, 1)]);
        assert!(bad.is_err());
        assert!(DeferredMlp::zeros().forward(&[0.0; 10]).is_err());
        let two_out = DeferredMlp::new(vec![DenseLayer::zeros(MLP_INPUT_DIM, 2)]).unwrap();
        assert!(deferred_shade([0.0; 3], &[0.0; 4], Vec3::new(0.0, 0.0, 1.0), &two_out).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = DeferredMlp::init(7);
        let input: Vec<f64> = (0..MLP_INPUT_DIM).map(|i| ((i * 37 % 11) as f64 / 11.0) - 0.3).collect();
        let trace = net.forward_trace(&input).unwrap();
        let d_out = [0.3, -0.7, 1.1];
        let mut grads = net.zeros_like();
        let d_in = net.backward(&trace, &d_out, &mut grads);
        let loss = |n: &DeferredMlp, x: &[f64]| -> f64 {
            n.forward(x).unwrap().iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in [0, 5, 20, 33] {
            let mut xp = input.clone();
            xp[i] += h;
            let mut xm = input.clone();
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - d_in[i]).abs() < 1e-7, "input {i}: {fd} vs {}", d_in[i]);
        }
        for (li, wi) in [(0, 3), (1, 17), (2, 5)] {
            let mut np = net.clone();
            np.layers[li].weights[wi] += h;
            let mut nm = net.clone();
            nm.layers[li].weights[wi] -= h;
            let fd = (loss(&np, &input) - loss(&nm, &input)) / (2.0 * h);
            let an = grads.layers[li].weights[wi];
            assert!((fd - an).abs() < 1e-7, "layer {li} weight {wi}: {fd} vs {an}");
        }
    }
}

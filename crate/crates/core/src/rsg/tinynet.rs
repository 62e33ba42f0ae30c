use rand::Rng;

use crate::math::{sigmoid, softplus};

/// Small fully connected network: softplus hidden layers, linear output.
///
/// Parameters are stored flat, layer by layer, as the row-major weight
/// matrix (`out x in`) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded by [`TinyNet::forward`] for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct NetCache {
    /// Input to each layer (the network input first, then hidden activations).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl TinyNet {
    /// Uniform Xavier initialization for all layers.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        TinyNet {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Self {
        let net = TinyNet { sizes, params };
        assert_eq!(net.params.len(), net.param_count());
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn last_layer_offset(&self) -> usize {
        let n = self.sizes.len();
        self.sizes[..n - 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Zeroes the output weights and sets the output biases, making the
    /// network a constant function.
    pub fn set_constant_output(&mut self, bias: &[f64]) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        assert_eq!(bias.len(), fan_out);
        let off = self.last_layer_offset();
        self.params[off..off + fan_in * fan_out].iter_mut().for_each(|w| *w = 0.0);
        self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].copy_from_slice(bias);
    }

    /// Sets only the output biases.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let off = self.last_layer_offset() + fan_in * fan_out;
        self.params[off..off + fan_out].copy_from_slice(bias);
    }

    /// Multiplies the output weights by `k`.
    pub fn scale_output_weights(&mut self, k: f64) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let off = self.last_layer_offset();
        self.params[off..off + fan_in * fan_out].iter_mut().for_each(|w| *w *= k);
    }

    pub fn forward(&self, input: &[f64], cache: &mut NetCache) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.sizes[0]);
        cache.inputs.clear();
        cache.pre.clear();
        let mut x = input.to_vec();
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (li, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut y = bias.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                *yo += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            cache.inputs.push(x);
            if li + 1 < layers {
                let act = y.iter().map(|&v| softplus(v)).collect();
                cache.pre.push(y);
                x = act;
            } else {
                x = y;
            }
        }
        x
    }

    /// Accumulates parameter gradients and returns `d loss / d input`.
    pub fn backward(&self, cache: &NetCache, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut g = grad_out.to_vec();
        for li in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[li], self.sizes[li + 1]);
            if li + 1 < layers {
                // through softplus: d/dz softplus(z) = sigmoid(z)
                for (gv, z) in g.iter_mut().zip(&cache.pre[li]) {
                    *gv *= sigmoid(*z);
                }
            }
            let off = offsets[li];
            let x = &cache.inputs[li];
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut gin = vec![0.0; fan_in];
            for o in 0..fan_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let gw = &mut grad_params[off + o * fan_in..off + (o + 1) * fan_in];
                for (gwi, xi) in gw.iter_mut().zip(x) {
                    *gwi += go * xi;
                }
                grad_params[off + fan_in * fan_out + o] += go;
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (gi, wi) in gin.iter_mut().zip(row) {
                    *gi += go * wi;
                }
            }
            g = gin;
        }
        g
    }
}

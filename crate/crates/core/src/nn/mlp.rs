use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Fully connected network with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: OutputActivation,
}

/// Layer inputs saved by a forward pass. `inputs[0]` is the network input; later entries are
/// post-ReLU activations, so `inputs[l] > 0` is exactly the ReLU mask of layer `l - 1`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl MlpCache {
    /// Whether any hidden pre-activation is non-positive, per unit; used to detect ReLU kinks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.inputs[1..]
            .iter()
            .flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes (`sizes[0]` is the input width).
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Mlp { layers, output }
    }

    /// He-uniform for layers feeding a ReLU, Xavier-uniform for a sigmoid head.
    /// An identity head is left at zero so the network starts as the zero function.
    pub fn init<R: Rng>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes, output);
        let n = mlp.layers.len();
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = (layer.input_dim() as f64, layer.output_dim() as f64);
            let limit = if l + 1 < n {
                (6.0 / fan_in).sqrt()
            } else {
                match output {
                    OutputActivation::Sigmoid => (6.0 / (fan_in + fan_out)).sqrt(),
                    OutputActivation::Identity => 0.0,
                }
            };
            if limit > 0.0 {
                layer.weight.mapv_inplace(|_| rng.random_range(-limit..limit));
            }
        }
        mlp
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zero network with the same shapes, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes(), self.output)
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "MLP expects input width {}, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch of row vectors.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::shape(e.to_string()))?;
        Ok(self.forward(x)?.row(0).to_vec())
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(&input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut act = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(act);
            if l + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.output == OutputActivation::Sigmoid {
                z.mapv_inplace(sigmoid);
            }
            act = z;
        }
        Ok(MlpCache { inputs, output: act })
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input batch.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
        grads: &mut Mlp,
    ) -> Result<Array2<f64>> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        if grads.layer_sizes() != self.layer_sizes() {
            return Err(Error::shape("gradient accumulator has a different architecture"));
        }
        let mut delta = upstream.to_owned();
        if self.output == OutputActivation::Sigmoid {
            delta.zip_mut_with(&cache.output, |d, &y| *d *= y * (1.0 - y));
        }
        for l in (0..self.layers.len()).rev() {
            let a_in = &cache.inputs[l];
            let g = &mut grads.layers[l];
            g.weight += &delta.t().dot(a_in);
            g.bias += &delta.sum_axis(Axis(0));
            let mut d_in = delta.dot(&self.layers[l].weight);
            if l > 0 {
                d_in.zip_mut_with(a_in, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Flat views of every tensor, weights before biases, layer by layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

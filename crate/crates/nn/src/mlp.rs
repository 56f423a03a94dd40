use ndarray::Array1;
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::checkpoint::Checkpoint;
use crate::error::{NnError, Result};
use crate::rng::Rng;
use crate::tape::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// One affine layer, `y = x wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub w: Matrix,
    /// `1 × out`
    pub b: Matrix,
}

/// Fully connected network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// One entry per hidden layer (`layers.len() - 1`).
    pub hidden: Vec<Activation>,
    pub output: OutputActivation,
}

/// Anything that owns an ordered list of trainable tensors.
pub trait Module {
    fn parameters(&self) -> Vec<&Matrix>;
    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    /// Registers every parameter as a tape leaf, in `parameters()` order.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.parameters()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: OutputActivation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                Dense {
                    w: Matrix::from_shape_fn((fan_out, fan_in), |_| dist.sample(rng)),
                    b: Matrix::zeros((1, fan_out)),
                }
            })
            .collect::<Vec<_>>();
        Self {
            hidden: vec![hidden; layers.len() - 1],
            layers,
            output,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: OutputActivation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                w: Matrix::zeros((w[1], w[0])),
                b: Matrix::zeros((1, w[1])),
            })
            .collect::<Vec<_>>();
        Self {
            hidden: vec![hidden; layers.len() - 1],
            layers,
            output,
        }
    }

    /// Multiplies the last layer's weights by `factor`; small output layers
    /// keep freshly initialized policies close to their mean offset.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.w *= factor;
            last.b *= factor;
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape {
                context: "mlp input",
                expected: vec![self.input_dim()],
                got: vec![x.len()],
            });
        }
        let mut h = Array1::from(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.w.dot(&h);
            next += &layer.b.row(0);
            if i + 1 < self.layers.len() {
                apply_hidden(self.hidden[i], next.iter_mut());
            } else {
                apply_output(self.output, next.iter_mut());
            }
            h = next;
        }
        Ok(h.to_vec())
    }

    /// Forward pass for a batch (`n × in`).
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape {
                context: "mlp batch input",
                expected: vec![x.nrows(), self.input_dim()],
                got: x.shape().to_vec(),
            });
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = h.dot(&layer.w.t());
            next += &layer.b;
            if i + 1 < self.layers.len() {
                apply_hidden(self.hidden[i], next.iter_mut());
            } else {
                apply_output(self.output, next.iter_mut());
            }
            h = next;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape` using previously bound parameters.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(NnError::Contract(format!(
                "expected {} bound tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        let mut h = x;
        for i in 0..self.layers.len() {
            h = tape.linear(h, params[2 * i], params[2 * i + 1])?;
            if i + 1 < self.layers.len() {
                h = match self.hidden[i] {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            } else if self.output == OutputActivation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let sizes: Vec<f64> = self.layer_sizes().iter().map(|&s| s as f64).collect();
        ckpt.push_vector(&format!("{prefix}.sizes"), &sizes);
        let acts: Vec<f64> = self
            .hidden
            .iter()
            .map(|a| match a {
                Activation::Tanh => 0.0,
                Activation::Relu => 1.0,
            })
            .chain(std::iter::once(match self.output {
                OutputActivation::Identity => 0.0,
                OutputActivation::Tanh => 1.0,
            }))
            .collect();
        ckpt.push_vector(&format!("{prefix}.activations"), &acts);
        for (i, layer) in self.layers.iter().enumerate() {
            ckpt.push_matrix(&format!("{prefix}.{i}.w"), &layer.w);
            ckpt.push_matrix(&format!("{prefix}.{i}.b"), &layer.b);
        }
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let sizes = ckpt.vector(&format!("{prefix}.sizes"))?;
        let acts = ckpt.vector(&format!("{prefix}.activations"))?;
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 {
            return Err(NnError::Contract(format!("malformed MLP header under `{prefix}`")));
        }
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let w = ckpt.matrix(&format!("{prefix}.{i}.w"))?;
            let b = ckpt.matrix(&format!("{prefix}.{i}.b"))?;
            let (fan_in, fan_out) = (sizes[i] as usize, sizes[i + 1] as usize);
            if w.dim() != (fan_out, fan_in) || b.dim() != (1, fan_out) {
                return Err(NnError::Contract(format!("layer {i} of `{prefix}` has wrong shape")));
            }
            layers.push(Dense { w, b });
        }
        let hidden = acts[..n_layers - 1]
            .iter()
            .map(|&a| if a == 1.0 { Activation::Relu } else { Activation::Tanh })
            .collect();
        let output = if acts[n_layers - 1] == 1.0 {
            OutputActivation::Tanh
        } else {
            OutputActivation::Identity
        };
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    /// Randomly perturbs every parameter; handy for building test instances.
    pub fn jitter(&mut self, scale: f64, rng: &mut Rng) {
        for p in self.parameters_mut() {
            p.mapv_inplace(|v| v + scale * (rng.random::<f64>() * 2.0 - 1.0));
        }
    }
}

fn apply_hidden<'a>(act: Activation, values: impl Iterator<Item = &'a mut f64>) {
    match act {
        Activation::Tanh => values.for_each(|v| *v = v.tanh()),
        Activation::Relu => values.for_each(|v| *v = v.max(0.0)),
    }
}

fn apply_output<'a>(act: OutputActivation, values: impl Iterator<Item = &'a mut f64>) {
    if act == OutputActivation::Tanh {
        values.for_each(|v| *v = v.tanh());
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Tanh, OutputActivation::Identity);
        assert_eq!(net.forward(&[0.3, -1.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3], Activation::Tanh, OutputActivation::Identity);
        net.layers[0].w = Matrix::eye(3);
        assert_eq!(net.forward(&[0.3, -1.0, 7.0]).unwrap(), vec![0.3, -1.0, 7.0]);
    }

    #[test]
    fn hand_evaluated_two_three_one_network() {
        let mut net = Mlp::zeros(&[2, 3, 1], Activation::Tanh, OutputActivation::Identity);
        net.layers[0].w = array![[1.0, 2.0], [-1.0, 0.5], [0.5, -3.0]];
        net.layers[0].b = array![[0.0, 0.1, -0.2]];
        net.layers[1].w = array![[1.0, -2.0, 0.5]];
        net.layers[1].b = array![[0.3]];
        // x = (1, 0): hidden pre-activations (1.0, -0.9, 0.3)
        let expected = 1.0f64.tanh() - 2.0 * (-0.9f64).tanh() + 0.5 * 0.3f64.tanh() + 0.3;
        let got = net.forward(&[1.0, 0.0]).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let net = Mlp::zeros(&[2, 1], Activation::Tanh, OutputActivation::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn batch_and_tape_agree_with_single_forward() {
        let mut rng = rng_from_seed(3);
        let net = Mlp::new(&[4, 6, 3], Activation::Relu, OutputActivation::Tanh, &mut rng);
        let x = array![[0.1, -0.2, 0.3, 0.9], [1.0, 0.0, -1.0, 0.5]];
        let batch = net.forward_batch(&x).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let out = net.forward_tape(&mut tape, &vars, xv).unwrap();
        for i in 0..2 {
            let single = net.forward(x.row(i).as_slice().unwrap()).unwrap();
            for k in 0..3 {
                assert!((single[k] - batch[[i, k]]).abs() < 1e-14);
                assert!((single[k] - tape.value(out)[[i, k]]).abs() < 1e-14);
            }
        }
    }
}

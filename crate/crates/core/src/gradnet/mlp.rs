use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::{Differentiable, Parameterized};
use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// Affine layer; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Multi-layer perceptron. `activations[i]` follows layer `i`; the final
/// layer is always linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activations: Vec<Activation>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::dim(
                "MLP activation count",
                layers.len() - 1,
                activations.len(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::dim(format!("layer {i} bias"), l.out_dim(), l.bias.len()));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::dim(
                    format!("layer {i} input"),
                    layers[i - 1].out_dim(),
                    l.in_dim(),
                ));
            }
        }
        Ok(MlpParams {
            layers,
            activations,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// `sizes` lists every width from input to output.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect::<Vec<_>>();
        let activations = vec![activation; layers.len() - 1];
        MlpParams {
            layers,
            activations,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("mlp_forward input", self.input_dim(), input.len()));
        }
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activations.get(i).copied().unwrap_or(Activation::Identity);
            h = (0..layer.out_dim())
                .map(|o| act.apply(dot(layer.weight.row(o), &h) + layer.bias[o]))
                .collect();
        }
        Ok(h)
    }

    /// Row-wise forward pass over a batch.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("mlp_forward input", self.input_dim(), x.cols()));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activations.get(i).copied().unwrap_or(Activation::Identity);
            let mut next = h.matmul_t(&layer.weight)?;
            for r in 0..next.rows() {
                for (v, b) in next.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = act.apply(*v + b);
                }
            }
            h = next;
        }
        Ok(h)
    }
}

/// Forward evaluation of an [`MlpParams`] that lives on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    activations: Vec<Activation>,
}

impl MlpVars {
    /// Records the network on `tape`; nodes are labelled `{name} layer {i}`.
    pub fn forward(&self, tape: &mut Tape, x: Var, name: &str) -> Var {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            tape.set_scope(format!("{name} layer {i}"));
            h = tape.affine(h, w, b);
            match self.activations.get(i) {
                Some(Activation::Tanh) => h = tape.tanh(h),
                Some(Activation::Relu) => h = tape.relu(h),
                Some(Activation::Identity) | None => {}
            }
        }
        h
    }
}

impl Parameterized for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Differentiable for MlpParams {
    type Vars = MlpVars;

    fn register(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.param(l.weight.clone());
                let b = tape.param(Matrix::row_vector(&l.bias));
                (w, b)
            })
            .collect();
        MlpVars {
            layers,
            activations: self.activations.clone(),
        }
    }

    fn collect_grads(&self, vars: &MlpVars, grads: &Gradients) -> Self {
        let layers = self
            .layers
            .iter()
            .zip(&vars.layers)
            .map(|(l, &(w, b))| Layer {
                weight: grads.get_or_zeros(w, l.out_dim(), l.in_dim()),
                bias: grads.get_or_zeros(b, 1, l.out_dim()).into_vec(),
            })
            .collect();
        MlpParams {
            layers,
            activations: self.activations.clone(),
        }
    }
}

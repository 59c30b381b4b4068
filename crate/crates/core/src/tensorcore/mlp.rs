use super::tape::{sigmoid, Gradients, Tape, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Nonlinearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `sin(omega * z)`
    Sine(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sine(omega) => (omega * z).sin(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }
}

/// One fully connected layer: `act(W x + b)` with `W` stored `fan_out x fan_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

/// Weights and biases of a fully connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weights: Var,
    pub bias: Var,
}

/// A recorded forward pass of an [`MlpParams`].
pub struct MlpForward {
    pub tape: Tape,
    pub input: Var,
    pub output: Var,
    pub params: Vec<LayerVars>,
}

impl MlpForward {
    pub fn output(&self) -> &Tensor {
        self.tape.value(self.output).expect("own tape")
    }

    /// Parameter gradients for the seed `output_grad` on the network output.
    pub fn backward(&self, net: &MlpParams, output_grad: &Tensor) -> Result<MlpParams> {
        let grads = self.tape.backward(self.output, output_grad)?;
        net.collect_grads(&grads, &self.params)
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = MlpParams { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.shape().len() != 2 || l.bias.len() != l.fan_out() {
                return Err(Error::shape(format!(
                    "layer {i}: weights {:?} with bias of length {}",
                    l.weights.shape(),
                    l.bias.len()
                )));
            }
            if i > 0 && self.layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.fan_in(),
                    i - 1,
                    self.layers[i - 1].fan_out()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::fan_out).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Same structure with every entry zeroed.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Parameter tensors in a fixed order: w0, b0, w1, b1, ...
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn congruent(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Records the network on `tape` applied to the `n x fan_in` input `x`.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<LayerVars>)> {
        let cols = tape.value(x)?.cols();
        if cols != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                cols,
                self.input_dim()
            )));
        }
        let mut h = x;
        let mut vars = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.leaf(layer.weights.clone());
            let b = tape.leaf(layer.bias.clone());
            let z = tape.matmul(h, w, true)?;
            let z = tape.add_bias(z, b)?;
            h = match layer.activation {
                Activation::Sine(omega) => tape.sin(z, omega)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Identity => z,
            };
            vars.push(LayerVars { weights: w, bias: b });
        }
        Ok((h, vars))
    }

    /// Runs the network on a fresh tape.
    pub fn forward(&self, input: &Tensor) -> Result<MlpForward> {
        if input.shape().len() != 2 {
            return Err(Error::shape("network input must be a matrix"));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let (output, params) = self.record(&mut tape, x)?;
        Ok(MlpForward {
            tape,
            input: x,
            output,
            params,
        })
    }

    /// Gathers parameter adjoints into a structure congruent with `self`.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[LayerVars]) -> Result<MlpParams> {
        if vars.len() != self.layers.len() {
            return Err(Error::contract("tape variables do not match network depth"));
        }
        let layers = self
            .layers
            .iter()
            .zip(vars)
            .map(|(l, v)| {
                Ok(Layer {
                    weights: grads.get_or_zeros(v.weights, l.weights.shape())?,
                    bias: grads.get_or_zeros(v.bias, l.bias.shape())?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MlpParams { layers })
    }

    /// Tape-free evaluation, used for inference.
    pub fn evaluate(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.input_dim() || input.shape().len() != 2 {
            return Err(Error::shape(format!(
                "input shape {:?} incompatible with fan-in {}",
                input.shape(),
                self.input_dim()
            )));
        }
        let n = input.rows();
        let mut h = input.data().to_vec();
        for layer in &self.layers {
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            let mut z = vec![0.0; n * fo];
            for row in z.chunks_mut(fo) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(n, fi, fo, &h, false, layer.weights.data(), true, 1.0, &mut z);
            if layer.activation != Activation::Identity {
                for v in z.iter_mut() {
                    *v = layer.activation.apply(*v);
                }
            }
            h = z;
        }
        Tensor::new(vec![n, self.output_dim()], h)
    }

    /// Records the network on `input`, lets `loss` build a scalar from the
    /// output, and returns that scalar with its parameter gradients.
    pub fn value_and_grad(
        &self,
        input: &Tensor,
        loss: impl FnOnce(&mut Tape, Var) -> Result<Var>,
    ) -> Result<(f64, MlpParams)> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let (out, vars) = self.record(&mut tape, x)?;
        let l = loss(&mut tape, out)?;
        let value = tape.value(l)?;
        if value.len() != 1 {
            return Err(Error::shape("loss must be a scalar"));
        }
        let v = value.data()[0];
        let grads = tape.backward(l, &Tensor::scalar(1.0))?;
        Ok((v, self.collect_grads(&grads, &vars)?))
    }
}

use rand::Rng;

use super::matrix::{DenseMatrix, Real};
use crate::error::{ensure_finite, ensure_len, MrisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }
}

/// One affine layer `act(W·x + b)`; `W` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Real = f32> {
    pub weight: DenseMatrix<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

impl<S: Real> Layer<S> {
    pub fn new(weight: DenseMatrix<S>, bias: Vec<S>, activation: Activation) -> Result<Self> {
        ensure_len("layer bias", weight.rows(), bias.len())?;
        if !bias.iter().all(|b| b.to_f64().is_finite()) {
            return Err(MrisError::NonFinite("layer bias"));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Returns `(pre_activation, post_activation)`.
    fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut pre = self.weight.matvec(input)?;
        for (z, b) in pre.iter_mut().zip(&self.bias) {
            *z += b.to_f64();
        }
        let post = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((pre, post))
    }
}

/// Weights of one feedforward encoder. The last layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S: Real = f32> {
    layers: Vec<Layer<S>>,
}

/// Per-layer activations recorded by [`EncoderParams::forward`].
///
/// `values[0]` is the input and `values[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Tape {
    pre: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Pre-activation values per layer, in layer order.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// Gradients with the same layout as [`EncoderParams`], held at f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl EncoderGrads {
    pub fn zeros_like<S: Real>(params: &EncoderParams<S>) -> Self {
        EncoderGrads {
            weights: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.weight.data().len()])
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|x| *x *= factor);
    }

    /// Flattened in the same order as [`EncoderParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }
}

impl<S: Real> EncoderParams<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(MrisError::Empty("encoder layers"));
        };
        if last.activation != Activation::Identity {
            return Err(MrisError::Constraint(
                "encoder output layer must use the identity activation".into(),
            ));
        }
        if last.output_dim() < 2 {
            return Err(MrisError::Constraint(format!(
                "encoder output dimension must be at least 2, got {}",
                last.output_dim()
            )));
        }
        for pair in layers.windows(2) {
            ensure_len("adjacent layer dims", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(EncoderParams { layers })
    }

    /// Xavier-uniform MLP: `hidden` layers with `activation`, then a linear
    /// projection to `output_dim`. Biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(MrisError::Config("encoder layer widths must be positive".into()));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let act = if i + 1 == n { Activation::Identity } else { activation };
                Layer::new(weight, vec![S::from_f64(0.0); fan_out], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        ensure_len("encoder input", self.input_dim(), input.len())?;
        ensure_finite(input, "encoder input")?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let (z, a) = layer.forward(values.last().unwrap())?;
            pre.push(z);
            values.push(a);
        }
        let output = values.last().unwrap().clone();
        Ok((output, Tape { pre, values }))
    }

    /// Forward pass without recording a tape.
    pub fn embed(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure_len("encoder input", self.input_dim(), input.len())?;
        ensure_finite(input, "encoder input")?;
        let mut h = input.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?.1;
        }
        Ok(h)
    }

    /// Reverse-mode pass: returns parameter gradients and the input gradient.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(EncoderGrads, Vec<f64>)> {
        if tape.pre.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(&tape.pre)
                .any(|(l, z)| l.output_dim() != z.len())
            || tape.values[0].len() != self.input_dim()
        {
            return Err(MrisError::Constraint(
                "tape was not recorded by these parameters".into(),
            ));
        }
        ensure_len("encoder output grad", self.output_dim(), output_grad.len())?;
        ensure_finite(output_grad, "encoder output grad")?;

        let mut grads = EncoderGrads::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[l];
            let post = &tape.values[l + 1];
            let input = &tape.values[l];
            for (d, (&z, &a)) in delta.iter_mut().zip(pre.iter().zip(post)) {
                *d *= layer.activation.derivative(z, a);
            }
            let cols = layer.input_dim();
            let wg = &mut grads.weights[l];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &x) in wg[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                    *g = d * x;
                }
            }
            grads.biases[l].copy_from_slice(&delta);
            delta = layer.weight.matvec_transposed(&delta)?;
        }
        Ok((grads, delta))
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.data().iter().map(|v| v.to_f64()));
            out.extend(l.bias.iter().map(|v| v.to_f64()));
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_len("flat parameters", self.num_params(), flat.len())?;
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weight.data_mut() {
                *w = S::from_f64(*it.next().unwrap());
            }
            for b in &mut l.bias {
                *b = S::from_f64(*it.next().unwrap());
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn cast<T: Real>(&self) -> EncoderParams<T> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| T::from_f64(b.to_f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

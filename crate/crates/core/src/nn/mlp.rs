use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Rng;
use crate::error::{ensure, Error, Result};

/// Element-wise non-linearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
    Exp,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Exp => "exp",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            "exp" => Activation::Exp,
            "softplus" => Activation::Softplus,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Exp => x.exp(),
            Activation::Softplus => {
                // log(1 + e^x) without overflow for large x.
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given both the pre-activation and the activation output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
            Activation::Exp => post,
            Activation::Softplus => 1.0 / (1.0 + (-pre).exp()),
        }
    }
}

/// Affine map `W x + b` followed by an activation. `weights` is out × in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weights =
            Array2::from_shape_simple_fn((output, input), || rng.uniform_range(-limit, limit));
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients for one layer, shaped like the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients for a whole [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    /// Flattened in the same order as [`Mlp::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Intermediate values saved by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    /// The network output, one row per input row.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

/// A feed-forward stack of dense layers.
///
/// Inputs are batched row-wise: an `n × in` matrix produces an `n × out`
/// matrix. Any mutation of the parameters bumps an internal generation
/// counter so a cache taken before the mutation is refused by
/// [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        ensure!(!layers.is_empty(), "an mlp needs at least one layer");
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].output_dim() == pair[1].input_dim(),
                "layer {} outputs {} values but layer {} expects {}",
                i,
                pair[0].output_dim(),
                i + 1,
                pair[1].input_dim()
            );
        }
        for l in &layers {
            ensure!(
                l.bias.len() == l.output_dim(),
                "bias length {} does not match layer output {}",
                l.bias.len(),
                l.output_dim()
            );
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    /// Glorot-initialised network with layer widths `dims` (input first).
    pub fn glorot(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| DenseLayer::glorot(d[0], d[1], a, rng))
            .collect();
        Self::new(layers).expect("chained dims")
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| DenseLayer::zeros(d[0], d[1], a))
            .collect();
        Self::new(layers).expect("chained dims")
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::n_params).sum()
    }

    /// Each layer's weights (row-major) then bias, in layer order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.n_params(),
            "expected {} parameters, got {}",
            self.n_params(),
            params.len()
        );
        let mut it = params.iter().copied();
        for l in self.layers_mut() {
            for w in l.weights.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Perturbs one weight without invalidating caches. Only the gradient
    /// sabotage check uses this.
    pub(crate) fn perturb_weight_unchecked(
        &mut self,
        layer: usize,
        row: usize,
        col: usize,
        delta: f64,
    ) {
        self.layers[layer].weights[[row, col]] += delta;
    }

    /// Batched forward pass keeping the intermediates for [`Mlp::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        ensure!(
            x.ncols() == self.input_dim(),
            "input has {} columns, network expects {}",
            x.ncols(),
            self.input_dim()
        );
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for l in &self.layers {
            let mut z = current.dot(&l.weights.t());
            z += &l.bias;
            let act = l.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre,
            output: current,
        })
    }

    /// Forward pass without retaining intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(
            x.ncols() == self.input_dim(),
            "input has {} columns, network expects {}",
            x.ncols(),
            self.input_dim()
        );
        let mut current = x.dot(&self.layers[0].weights.t());
        let mut first = true;
        for l in &self.layers {
            if !first {
                current = current.dot(&l.weights.t());
            }
            first = false;
            current += &l.bias;
            let act = l.activation;
            current.mapv_inplace(|v| act.apply(v));
        }
        Ok(current)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode pass. `output_grad` is the loss gradient with respect to
    /// the network output (same shape as `cache.output()`). Returns the
    /// parameter gradients summed over the batch and the input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.generation != self.generation || cache.pre.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "forward cache was taken before the parameters changed".into(),
            ));
        }
        ensure!(
            output_grad.dim() == cache.output.dim(),
            "output gradient is {:?}, network output is {:?}",
            output_grad.dim(),
            cache.output.dim()
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        let mut post = &cache.output;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[i];
            let act = l.activation;
            let mut delta = upstream;
            ndarray::Zip::from(&mut delta)
                .and(pre)
                .and(post)
                .for_each(|d, &p, &q| *d *= act.derivative(p, q));
            let gw = delta.t().dot(&cache.inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            upstream = delta.dot(&l.weights);
            grads.push(LayerGrads {
                weights: gw,
                bias: gb,
            });
            post = &cache.inputs[i];
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }
}

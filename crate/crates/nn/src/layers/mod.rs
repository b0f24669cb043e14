//! Layers with hand-written backward passes.
//!
//! Every layer has two forward paths: [`Layer::infer`] is a pure evaluation pass that
//! caches nothing (so a model can serve concurrent read-only inference), and
//! [`Layer::forward`] records whatever [`Layer::backward`] needs.

mod activation;
mod attention;
mod conv;
mod linear;
mod norm;
mod pool;

#[cfg(test)]
mod gradcheck;

pub use activation::{Dropout, Gelu, Relu};
pub use attention::{ClassToken, MultiHeadAttention, TakeClassToken, ToTokens};
pub use conv::Conv2d;
pub use linear::Dense;
pub use norm::{BatchNorm, LayerNorm};
pub use pool::{AvgPool2d, GlobalAvgPool, MaxPool2d};

use ndarray::{concatenate, Axis};

use crate::param::{Param, Tensor};

/// How a recording forward pass behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Evaluation behavior, but intermediate values are kept for a backward pass
    /// (used by Grad-CAM).
    EvalGrad,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// Multiply–accumulate tally for one forward pass at batch size 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cost {
    pub macs: u64,
    /// Layer kinds without a MAC rule; they contribute 0.
    pub unsupported: Vec<String>,
}

pub trait Layer: Send + Sync {
    fn kind(&self) -> &'static str;

    fn infer(&self, x: Tensor) -> Tensor;

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor;

    /// Takes dL/d(output) of the latest recorded forward pass, accumulates parameter
    /// gradients and returns dL/d(input).
    fn backward(&mut self, grad: Tensor) -> Tensor;

    fn params<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a Param)>) {}

    fn params_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, &'a mut Param)>) {}

    /// Output shape for `input` (batch dimension included) and MACs added to `cost`.
    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.layers.iter().fold(x, |x, (_, l)| l.infer(x))
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        self.layers.iter_mut().fold(x, |x, (_, l)| l.forward(x, mode))
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        self.layers.iter_mut().rev().fold(grad, |g, (_, l)| l.backward(g))
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (name, l) in &self.layers {
            l.params(&join(prefix, name), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (name, l) in &mut self.layers {
            l.params_mut(&join(prefix, name), out);
        }
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        self.layers.iter().fold(input.to_vec(), |shape, (_, l)| l.cost(&shape, cost))
    }
}

/// `y = F(x) + shortcut(x)`, where the shortcut is the identity unless a projection is given.
pub struct Residual {
    pub body: Sequential,
    pub shortcut: Option<Sequential>,
}

impl Residual {
    pub fn identity(body: Sequential) -> Self {
        Self { body, shortcut: None }
    }

    pub fn projected(body: Sequential, shortcut: Sequential) -> Self {
        Self { body, shortcut: Some(shortcut) }
    }
}

impl Layer for Residual {
    fn kind(&self) -> &'static str {
        "residual"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let skip = match &self.shortcut {
            Some(s) => s.infer(x.clone()),
            None => x.clone(),
        };
        self.body.infer(x) + skip
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x.clone(), mode),
            None => x.clone(),
        };
        self.body.forward(x, mode) + skip
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let skip = match &mut self.shortcut {
            Some(s) => s.backward(grad.clone()),
            None => grad.clone(),
        };
        self.body.backward(grad) + skip
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.body.params(&join(prefix, "body"), out);
        if let Some(s) = &self.shortcut {
            s.params(&join(prefix, "shortcut"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.body.params_mut(&join(prefix, "body"), out);
        if let Some(s) = &mut self.shortcut {
            s.params_mut(&join(prefix, "shortcut"), out);
        }
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        if let Some(s) = &self.shortcut {
            s.cost(input, cost);
        }
        self.body.cost(input, cost)
    }
}

/// Dense connectivity: layer `l` sees the channel concatenation of the block input and
/// every earlier layer's output; the block returns the concatenation of all of them.
pub struct DenseBlock {
    pub layers: Vec<Sequential>,
    input_channels: Vec<usize>,
}

impl DenseBlock {
    pub fn new(layers: Vec<Sequential>) -> Self {
        Self { layers, input_channels: Vec::new() }
    }

    /// Input channel count seen by each layer during the latest forward pass.
    pub fn recorded_input_channels(&self) -> &[usize] {
        &self.input_channels
    }
}

impl Layer for DenseBlock {
    fn kind(&self) -> &'static str {
        "dense_block"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.layers.iter().fold(x, |features, layer| {
            let new = layer.infer(features.clone());
            concatenate(Axis(1), &[features.view(), new.view()]).expect("matching spatial dims")
        })
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        self.input_channels.clear();
        let mut features = x;
        for layer in &mut self.layers {
            self.input_channels.push(features.shape()[1]);
            let new = layer.forward(features.clone(), mode);
            features = concatenate(Axis(1), &[features.view(), new.view()]).expect("matching spatial dims");
        }
        features
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut grad = grad;
        for (layer, &c_in) in self.layers.iter_mut().zip(&self.input_channels).rev() {
            let c_out = grad.shape()[1];
            let g_new = grad.slice_axis(Axis(1), (c_in..c_out).into()).to_owned();
            let g_in = layer.backward(g_new);
            let mut prefix = grad.slice_axis(Axis(1), (0..c_in).into()).to_owned();
            prefix += &g_in;
            grad = prefix;
        }
        grad
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&join(prefix, &format!("layer{}", i + 1)), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&join(prefix, &format!("layer{}", i + 1)), out);
        }
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            let out = layer.cost(&shape, cost);
            shape[1] += out[1];
        }
        shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn residual_with_zero_body_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut body = Sequential::new()
            .with("conv1", Conv2d::new(4, 4, 3, 1, 1, false, &mut rng))
            .with("bn1", BatchNorm::new(4))
            .with("relu", Relu::default())
            .with("conv2", Conv2d::new(4, 4, 3, 1, 1, false, &mut rng))
            .with("bn2", BatchNorm::new(4));
        // force F(x) = 0 through the final normalization's affine parameters
        let mut ps = Vec::new();
        body.params_mut("", &mut ps);
        for (name, p) in ps {
            if name.starts_with("bn2") && !p.buffer {
                p.value.fill(0.0);
            }
        }
        let mut block = Residual::identity(body);
        let x = random_tensor(&[2, 4, 5, 5], 3);
        assert_eq!(block.infer(x.clone()), x);
        assert_eq!(block.forward(x.clone(), Mode::Train), x);
    }

    #[test]
    fn dense_block_input_channels_accumulate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let growth = 3;
        let layers = (0..4)
            .map(|i| Sequential::new().with("conv", Conv2d::new(5 + i * growth, growth, 3, 1, 1, false, &mut rng)))
            .collect();
        let mut block = DenseBlock::new(layers);
        let y = block.forward(random_tensor(&[1, 5, 4, 4], 1), Mode::Train);
        assert_eq!(y.shape(), &[1, 5 + 4 * growth, 4, 4]);
        assert_eq!(block.recorded_input_channels(), &[5, 8, 11, 14]);
        let mut cost = Cost::default();
        assert_eq!(block.cost(&[1, 5, 4, 4], &mut cost), vec![1, 17, 4, 4]);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cost, Layer, Mode};
use crate::param::Tensor;

#[derive(Default)]
pub struct Relu {
    mask: Option<Tensor>,
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        x.mapv_into(|v| v.max(0.0))
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        grad * self.mask.take().expect("relu backward without recorded forward")
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        input.to_vec()
    }
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;

/// GELU, tanh approximation.
#[derive(Default)]
pub struct Gelu {
    input: Option<Tensor>,
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Layer for Gelu {
    fn kind(&self) -> &'static str {
        "gelu"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        x.mapv_into(gelu)
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        let y = x.mapv(gelu);
        self.input = Some(x);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("gelu backward without recorded forward");
        let mut g = grad;
        g.zip_mut_with(&x, |g, &x| *g *= gelu_grad(x));
        g
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        input.to_vec()
    }
}

/// Inverted dropout; active only in [`Mode::Train`].
pub struct Dropout {
    pub rate: f32,
    rng: ChaCha8Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(rate: f32, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), mask: None }
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        x
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        if !mode.is_train() || self.rate == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let rng = &mut self.rng;
        let mask = x.mapv(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        match self.mask.take() {
            Some(m) => grad * m,
            None => grad,
        }
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        input.to_vec()
    }
}

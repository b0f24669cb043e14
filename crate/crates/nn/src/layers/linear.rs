use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{join, Cost, Layer, Mode};
use crate::param::{Param, Tensor};

/// Affine map over the last axis; leading axes are treated as a batch.
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `(in_features, out_features)`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_features + out_features) as f32).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        let weight = Array2::from_shape_fn((in_features, out_features), |_| dist.sample(rng)).into_dyn();
        Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(IxDyn(&[out_features]))),
            input: None,
        }
    }

    fn flat(&self, x: &Tensor) -> Array2<f32> {
        let last = *x.shape().last().expect("non-scalar input");
        assert_eq!(last, self.in_features, "dense expects {} features, got {last}", self.in_features);
        let rows = x.len() / last;
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, last))
            .expect("contiguous")
    }

    fn out_shape(&self, x_shape: &[usize]) -> Vec<usize> {
        let mut shape = x_shape.to_vec();
        *shape.last_mut().unwrap() = self.out_features;
        shape
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let shape = self.out_shape(x.shape());
        let x2 = self.flat(&x);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D");
        let mut y = Array2::<f32>::zeros((x2.nrows(), self.out_features));
        for mut row in y.axis_iter_mut(Axis(0)) {
            row.assign(&self.bias.value);
        }
        general_mat_mul(1.0, &x2, &w, 1.0, &mut y);
        y.into_shape_with_order(IxDyn(&shape)).expect("same size")
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        let y = self.infer(x.clone());
        self.input = Some(x);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("dense backward without recorded forward");
        let x2 = self.flat(&x);
        let g2 = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((x2.nrows(), self.out_features))
            .expect("grad matches output");
        {
            let mut dw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D");
            general_mat_mul(1.0, &x2.t(), &g2, 1.0, &mut dw);
        }
        self.bias.grad += &g2.sum_axis(Axis(0)).into_dyn();
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D");
        let mut dx = Array2::<f32>::zeros((x2.nrows(), self.in_features));
        general_mat_mul(1.0, &g2, &w.t(), 0.0, &mut dx);
        dx.into_shape_with_order(x.raw_dim()).expect("same size")
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        let rows: usize = input[..input.len() - 1].iter().product();
        cost.macs += (rows * self.in_features * self.out_features) as u64;
        self.out_shape(input)
    }
}

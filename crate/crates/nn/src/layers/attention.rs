use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, Axis, Ix3, Ix4, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{join, Cost, Dense, Layer, Mode};
use crate::param::{Param, Tensor};

/// `(N, C, H, W)` feature map to `(N, H·W, C)` token sequence, row-major over the grid.
#[derive(Default)]
pub struct ToTokens {
    shape: Option<Vec<usize>>,
}

impl Layer for ToTokens {
    fn kind(&self) -> &'static str {
        "to_tokens"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        let t = x.into_shape_with_order((n, c, h * w)).expect("contiguous");
        t.permuted_axes([0, 2, 1]).as_standard_layout().into_owned().into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.shape.take().expect("to_tokens backward without recorded forward");
        let g = grad.into_dimensionality::<Ix3>().expect("(N, T, C) gradient");
        g.permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&shape))
            .expect("same size")
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        vec![input[0], input[2] * input[3], input[1]]
    }
}

/// Prepends a learned class token and adds learned position embeddings.
pub struct ClassToken {
    pub dim: usize,
    pub tokens: usize,
    pub cls: Param,
    /// `(tokens + 1, dim)`.
    pub pos: Param,
}

impl ClassToken {
    pub fn new(tokens: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f32, 0.02).expect("positive std");
        Self {
            dim,
            tokens,
            cls: Param::new(Tensor::zeros(IxDyn(&[dim]))),
            pos: Param::new(Tensor::from_shape_fn(IxDyn(&[tokens + 1, dim]), |_| normal.sample(rng))),
        }
    }
}

impl Layer for ClassToken {
    fn kind(&self) -> &'static str {
        "class_token"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let x = x.into_dimensionality::<Ix3>().expect("(N, T, D) input");
        let (n, t, d) = x.dim();
        assert_eq!((t, d), (self.tokens, self.dim), "token grid mismatch");
        let pos = self.pos.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut out = Array3::<f32>::zeros((n, t + 1, d));
        for b in 0..n {
            out.slice_mut(s![b, 0, ..]).assign(&self.cls.value.view().into_dimensionality::<ndarray::Ix1>().unwrap());
            out.slice_mut(s![b, 1.., ..]).assign(&x.slice(s![b, .., ..]));
            let mut sample = out.index_axis_mut(Axis(0), b);
            sample += &pos;
        }
        out.into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = grad.into_dimensionality::<Ix3>().expect("(N, T+1, D) gradient");
        let pos_grad = g.sum_axis(Axis(0));
        self.pos.grad += &pos_grad.into_dyn();
        let cls_grad = g.slice(s![.., 0, ..]).sum_axis(Axis(0));
        self.cls.grad += &cls_grad.into_dyn();
        g.slice(s![.., 1.., ..]).to_owned().into_dyn()
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "cls"), &self.cls));
        out.push((join(prefix, "pos"), &self.pos));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "cls"), &mut self.cls));
        out.push((join(prefix, "pos"), &mut self.pos));
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        vec![input[0], input[1] + 1, input[2]]
    }
}

/// `(N, T, D)` to `(N, D)`: the class token's final state.
#[derive(Default)]
pub struct TakeClassToken {
    shape: Option<Vec<usize>>,
}

impl Layer for TakeClassToken {
    fn kind(&self) -> &'static str {
        "take_class_token"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        x.index_axis(Axis(1), 0).to_owned()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.shape.take().expect("take_class_token backward without recorded forward");
        let mut dx = Tensor::zeros(IxDyn(&shape));
        dx.index_axis_mut(Axis(1), 0).assign(&grad);
        dx
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        vec![input[0], input[2]]
    }
}

/// Scaled dot-product self-attention, `softmax(QKᵀ/√d_k)V` per head, followed by an
/// output projection.
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub qkv: Dense,
    pub proj: Dense,
    cache: Option<AttnCache>,
}

struct AttnCache {
    qkv: Array3<f32>,
    probs: Array4<f32>,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "embedding dim {dim} not divisible by {heads} heads");
        Self { dim, heads, qkv: Dense::new(dim, 3 * dim, rng), proj: Dense::new(dim, dim, rng), cache: None }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Attention output before projection, plus the attention probabilities.
    fn attend(&self, qkv: &Array3<f32>) -> (Array3<f32>, Array4<f32>) {
        let (n, t, _) = qkv.dim();
        let (d, dk) = (self.dim, self.head_dim());
        let scale = 1.0 / (dk as f32).sqrt();
        let mut out = Array3::<f32>::zeros((n, t, d));
        let mut probs = Array4::<f32>::zeros((n, self.heads, t, t));
        for b in 0..n {
            for h in 0..self.heads {
                let q = qkv.slice(s![b, .., h * dk..(h + 1) * dk]);
                let k = qkv.slice(s![b, .., d + h * dk..d + (h + 1) * dk]);
                let v = qkv.slice(s![b, .., 2 * d + h * dk..2 * d + (h + 1) * dk]);
                let mut p = probs.slice_mut(s![b, h, .., ..]);
                general_mat_mul(scale, &q, &k.t(), 0.0, &mut p);
                for mut row in p.axis_iter_mut(Axis(0)) {
                    let m = row.fold(f32::NEG_INFINITY, |a, &v| a.max(v));
                    row.mapv_inplace(|v| (v - m).exp());
                    let z = row.sum();
                    row.mapv_inplace(|v| v / z);
                }
                let mut o = out.slice_mut(s![b, .., h * dk..(h + 1) * dk]);
                general_mat_mul(1.0, &p, &v, 0.0, &mut o);
            }
        }
        (out, probs)
    }
}

impl Layer for MultiHeadAttention {
    fn kind(&self) -> &'static str {
        "attention"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let qkv = self.qkv.infer(x).into_dimensionality::<Ix3>().expect("(N, T, 3D)");
        let (o, _) = self.attend(&qkv);
        self.proj.infer(o.into_dyn())
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let qkv = self.qkv.forward(x, mode).into_dimensionality::<Ix3>().expect("(N, T, 3D)");
        let (o, probs) = self.attend(&qkv);
        self.cache = Some(AttnCache { qkv, probs });
        self.proj.forward(o.into_dyn(), mode)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let AttnCache { qkv, probs } = self.cache.take().expect("attention backward without recorded forward");
        let d_o = self.proj.backward(grad).into_dimensionality::<Ix3>().expect("(N, T, D)");
        let (n, t, _) = qkv.dim();
        let (d, dk) = (self.dim, self.head_dim());
        let scale = 1.0 / (dk as f32).sqrt();
        let mut dqkv = Array3::<f32>::zeros(qkv.raw_dim());
        let mut dp = Array2::<f32>::zeros((t, t));
        for b in 0..n {
            for h in 0..self.heads {
                let q = qkv.slice(s![b, .., h * dk..(h + 1) * dk]);
                let k = qkv.slice(s![b, .., d + h * dk..d + (h + 1) * dk]);
                let v = qkv.slice(s![b, .., 2 * d + h * dk..2 * d + (h + 1) * dk]);
                let p = probs.slice(s![b, h, .., ..]);
                let go = d_o.slice(s![b, .., h * dk..(h + 1) * dk]);
                {
                    let mut dv = dqkv.slice_mut(s![b, .., 2 * d + h * dk..2 * d + (h + 1) * dk]);
                    general_mat_mul(1.0, &p.t(), &go, 0.0, &mut dv);
                }
                general_mat_mul(1.0, &go, &v.t(), 0.0, &mut dp);
                // softmax backward, scaled for the score temperature
                for (mut drow, prow) in dp.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                    let dot: f32 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot) * scale);
                }
                {
                    let mut dq = dqkv.slice_mut(s![b, .., h * dk..(h + 1) * dk]);
                    general_mat_mul(1.0, &dp, &k, 0.0, &mut dq);
                }
                let mut dkk = dqkv.slice_mut(s![b, .., d + h * dk..d + (h + 1) * dk]);
                general_mat_mul(1.0, &dp.t(), &q, 0.0, &mut dkk);
            }
        }
        self.qkv.backward(dqkv.into_dyn())
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.qkv.params(&join(prefix, "qkv"), out);
        self.proj.params(&join(prefix, "proj"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.qkv.params_mut(&join(prefix, "qkv"), out);
        self.proj.params_mut(&join(prefix, "proj"), out);
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        let t = input[1] as u64;
        let d = self.dim as u64;
        // QKV projections, QKᵀ scores, attention-weighted values, output projection
        cost.macs += t * d * 3 * d + t * t * d + t * t * d + t * d * d;
        input.to_vec()
    }
}

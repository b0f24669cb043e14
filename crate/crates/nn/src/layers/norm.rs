use ndarray::{Array1, Array3, Axis, IxDyn};

use super::{join, Cost, Layer, Mode};
use crate::param::{Param, Tensor};

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;
const LN_EPS: f32 = 1e-6;

/// Batch normalization over axis 1 of `(N, C)` or `(N, C, H, W)` input.
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Array3<f32>,
    inv_std: Array1<f32>,
    batch_stats: bool,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::ones(IxDyn(&[channels]))),
            beta: Param::new(Tensor::zeros(IxDyn(&[channels]))),
            running_mean: Param::buffer(Tensor::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(Tensor::ones(IxDyn(&[channels]))),
            cache: None,
        }
    }

    /// `(N, C, S)` view of the input, S being the flattened spatial extent.
    fn as3(&self, x: &Tensor) -> Array3<f32> {
        let s = x.shape();
        assert!(s.len() >= 2 && s[1] == self.channels, "batch norm expects {} channels, got {s:?}", self.channels);
        let spatial: usize = s[2..].iter().product();
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((s[0], s[1], spatial))
            .expect("contiguous")
    }

    fn normalize(&self, x3: &Array3<f32>, mean: &Array1<f32>, inv_std: &Array1<f32>) -> (Array3<f32>, Array3<f32>) {
        let mut xhat = x3.clone();
        for mut sample in xhat.axis_iter_mut(Axis(0)) {
            for (c, mut row) in sample.axis_iter_mut(Axis(0)).enumerate() {
                row.mapv_inplace(|v| (v - mean[c]) * inv_std[c]);
            }
        }
        let mut y = xhat.clone();
        for mut sample in y.axis_iter_mut(Axis(0)) {
            for (c, mut row) in sample.axis_iter_mut(Axis(0)).enumerate() {
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                row.mapv_inplace(|v| v * g + b);
            }
        }
        (xhat, y)
    }

    fn running_inv_std(&self) -> (Array1<f32>, Array1<f32>) {
        let mean = Array1::from_iter(self.running_mean.value.iter().copied());
        let inv = Array1::from_iter(self.running_var.value.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()));
        (mean, inv)
    }

    fn run(&mut self, x: Tensor, batch_stats: bool, record: bool) -> Tensor {
        let shape = x.shape().to_vec();
        let x3 = self.as3(&x);
        let (mean, inv_std) = if batch_stats {
            let m = (x3.len_of(Axis(0)) * x3.len_of(Axis(2))) as f32;
            let mean = x3.sum_axis(Axis(2)).sum_axis(Axis(0)) / m;
            let mut var = Array1::<f32>::zeros(self.channels);
            for sample in x3.axis_iter(Axis(0)) {
                for (c, row) in sample.axis_iter(Axis(0)).enumerate() {
                    var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f32>();
                }
            }
            let biased = &var / m;
            let unbiased = if m > 1.0 { &var / (m - 1.0) } else { biased.clone() };
            for c in 0..self.channels {
                let rm = &mut self.running_mean.value[c];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c];
                let rv = &mut self.running_var.value[c];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased[c];
            }
            (mean, biased.mapv(|v| 1.0 / (v + BN_EPS).sqrt()))
        } else {
            self.running_inv_std()
        };
        let (xhat, y) = self.normalize(&x3, &mean, &inv_std);
        if record {
            self.cache = Some(BnCache { xhat, inv_std, batch_stats, shape: shape.clone() });
        }
        y.into_shape_with_order(IxDyn(&shape)).expect("same size")
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batch_norm"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let shape = x.shape().to_vec();
        let x3 = self.as3(&x);
        let (mean, inv) = self.running_inv_std();
        let (_, y) = self.normalize(&x3, &mean, &inv);
        y.into_shape_with_order(IxDyn(&shape)).expect("same size")
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        self.run(x, mode.is_train(), true)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let cache = self.cache.take().expect("batch norm backward without recorded forward");
        let g3 = self.as3(&grad);
        let xhat = &cache.xhat;
        let m = (g3.len_of(Axis(0)) * g3.len_of(Axis(2))) as f32;
        let mut sum_g = Array1::<f32>::zeros(self.channels);
        let mut sum_gx = Array1::<f32>::zeros(self.channels);
        for (gs, xs) in g3.axis_iter(Axis(0)).zip(xhat.axis_iter(Axis(0))) {
            for c in 0..self.channels {
                let (gr, xr) = (gs.index_axis(Axis(0), c), xs.index_axis(Axis(0), c));
                sum_g[c] += gr.sum();
                sum_gx[c] += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f32>();
            }
        }
        for c in 0..self.channels {
            self.gamma.grad[c] += sum_gx[c];
            self.beta.grad[c] += sum_g[c];
        }
        let mut dx = g3.clone();
        for (mut ds, xs) in dx.axis_iter_mut(Axis(0)).zip(xhat.axis_iter(Axis(0))) {
            for c in 0..self.channels {
                let k = self.gamma.value[c] * cache.inv_std[c];
                let mut dr = ds.index_axis_mut(Axis(0), c);
                if cache.batch_stats {
                    let xr = xs.index_axis(Axis(0), c);
                    let (mg, mgx) = (sum_g[c] / m, sum_gx[c] / m);
                    dr.zip_mut_with(&xr, |d, &xh| *d = k * (*d - mg - xh * mgx));
                } else {
                    dr.mapv_inplace(|d| d * k);
                }
            }
        }
        dx.into_shape_with_order(IxDyn(&cache.shape)).expect("same size")
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        input.to_vec()
    }
}

/// Layer normalization over the last axis.
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Param,
    pub beta: Param,
    cache: Option<(Tensor, Array1<f32>)>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: Param::new(Tensor::ones(IxDyn(&[dim]))),
            beta: Param::new(Tensor::zeros(IxDyn(&[dim]))),
            cache: None,
        }
    }

    fn normalize(&self, x: &Tensor) -> (Tensor, Array1<f32>) {
        let d = self.dim;
        assert_eq!(x.shape().last(), Some(&d), "layer norm expects last axis {d}");
        let mut xhat = x.as_standard_layout().into_owned();
        let rows = xhat.len() / d;
        let mut inv = Array1::<f32>::zeros(rows);
        let data = xhat.as_slice_mut().expect("standard layout");
        for (r, row) in data.chunks_mut(d).enumerate() {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv[r] = is;
        }
        (xhat, inv)
    }

    fn affine(&self, xhat: &Tensor) -> Tensor {
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.value.as_slice().unwrap(), self.beta.value.as_slice().unwrap());
        for row in y.as_slice_mut().expect("standard layout").chunks_mut(self.dim) {
            for ((v, g), b) in row.iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        y
    }
}

impl Layer for LayerNorm {
    fn kind(&self) -> &'static str {
        "layer_norm"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.affine(&self.normalize(&x).0)
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        let (xhat, inv) = self.normalize(&x);
        let y = self.affine(&xhat);
        self.cache = Some((xhat, inv));
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (xhat, inv) = self.cache.take().expect("layer norm backward without recorded forward");
        let d = self.dim;
        let grad = grad.as_standard_layout().into_owned();
        let mut dx = Tensor::zeros(grad.raw_dim());
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();
        let gg = self.gamma.grad.as_slice_mut().unwrap();
        let bg = self.beta.grad.as_slice_mut().unwrap();
        let rows = grad
            .as_slice()
            .unwrap()
            .chunks(d)
            .zip(xhat.as_slice().unwrap().chunks(d))
            .zip(dx.as_slice_mut().unwrap().chunks_mut(d));
        for (r, ((g, xh), out)) in rows.enumerate() {
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for j in 0..d {
                gg[j] += g[j] * xh[j];
                bg[j] += g[j];
                let dxh = g[j] * gamma[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= d as f32;
            mean_dxh_xh /= d as f32;
            for j in 0..d {
                out[j] = inv[r] * (g[j] * gamma[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        input.to_vec()
    }
}


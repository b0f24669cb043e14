use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView4, Axis, Ix4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{join, Cost, Layer, Mode};
use crate::param::{Param, Tensor};

/// Upper bound on the im2col buffer, in floats; larger batches are processed in chunks.
const COLS_BUDGET: usize = 1 << 22;

/// 2-D convolution over NCHW tensors, computed as im2col followed by a matrix product.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels·k·k)`.
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    /// He-normal initialized weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        let weight = Array2::from_shape_fn((out_channels, fan_in), |_| normal.sample(rng)).into_dyn();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(Tensor::zeros(ndarray::IxDyn(&[out_channels])))),
            input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |d: usize| (d + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    fn geometry(&self, x: &Tensor) -> Geometry {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv expects NCHW input, got {s:?}");
        assert_eq!(s[1], self.in_channels, "conv expects {} channels, got {}", self.in_channels, s[1]);
        let (ho, wo) = self.output_hw(s[2], s[3]);
        Geometry { n: s[0], c: s[1], h: s[2], w: s[3], ho, wo }
    }

    fn chunk_size(&self, g: &Geometry) -> usize {
        let per_sample = g.c * self.kernel * self.kernel * g.ho * g.wo;
        (COLS_BUDGET / per_sample.max(1)).clamp(1, g.n.max(1))
    }

    /// Unfolds samples `[n0, n0 + nb)` into `(C·k·k, nb·Ho·Wo)`.
    fn im2col(&self, x: &ArrayView4<f32>, g: &Geometry, n0: usize, nb: usize) -> Array2<f32> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let hw = g.ho * g.wo;
        let mut cols = Array2::<f32>::zeros((g.c * k * k, nb * hw));
        let cols_slice = cols.as_slice_mut().expect("standard layout");
        let row_len = nb * hw;
        for ci in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst_row = &mut cols_slice[row * row_len..(row + 1) * row_len];
                    for b in 0..nb {
                        let plane = x.index_axis(Axis(0), n0 + b);
                        let plane = plane.index_axis(Axis(0), ci);
                        let src = plane.as_slice().expect("standard layout");
                        for oy in 0..g.ho {
                            let iy = (oy * s + ki) as isize - p as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let dst = &mut dst_row[b * hw + oy * g.wo..b * hw + (oy + 1) * g.wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kj) as isize - p as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, dx: &mut Array4<f32>, g: &Geometry, n0: usize, nb: usize) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let hw = g.ho * g.wo;
        let row_len = nb * hw;
        let cols_slice = cols.as_slice().expect("standard layout");
        for ci in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src_row = &cols_slice[row * row_len..(row + 1) * row_len];
                    for b in 0..nb {
                        let mut plane = dx.index_axis_mut(Axis(0), n0 + b);
                        let mut plane = plane.index_axis_mut(Axis(0), ci);
                        let dst = plane.as_slice_mut().expect("standard layout");
                        for oy in 0..g.ho {
                            let iy = (oy * s + ki) as isize - p as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let src = &src_row[b * hw + oy * g.wo..b * hw + (oy + 1) * g.wo];
                            for (ox, v) in src.iter().enumerate() {
                                let ix = (ox * s + kj) as isize - p as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality().expect("2-D conv weight")
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let g = self.geometry(&x);
        let x4 = x.view().into_dimensionality::<Ix4>().expect("NCHW");
        let x4 = x4.as_standard_layout();
        let hw = g.ho * g.wo;
        let mut out = Array4::<f32>::zeros((g.n, self.out_channels, g.ho, g.wo));
        let chunk = self.chunk_size(&g);
        let w = self.weight_matrix();
        let mut n0 = 0;
        while n0 < g.n {
            let nb = chunk.min(g.n - n0);
            let cols = self.im2col(&x4.view(), &g, n0, nb);
            let mut y = Array2::<f32>::zeros((self.out_channels, nb * hw));
            general_mat_mul(1.0, &w, &cols, 0.0, &mut y);
            for b in 0..nb {
                let mut dst = out.index_axis_mut(Axis(0), n0 + b);
                let dst = dst.as_slice_mut().expect("standard layout");
                for o in 0..self.out_channels {
                    let bias = self.bias.as_ref().map_or(0.0, |b| b.value[o]);
                    let src = &y.as_slice().expect("standard layout")[o * nb * hw + b * hw..o * nb * hw + (b + 1) * hw];
                    for (d, v) in dst[o * hw..(o + 1) * hw].iter_mut().zip(src) {
                        *d = v + bias;
                    }
                }
            }
            n0 += nb;
        }
        out.into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        let x = x.as_standard_layout().into_owned();
        let y = self.infer(x.clone());
        self.input = Some(x);
        y
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without recorded forward");
        let g = self.geometry(&x);
        let x4 = x.view().into_dimensionality::<Ix4>().expect("NCHW");
        let grad = grad.as_standard_layout().into_owned();
        let hw = g.ho * g.wo;
        let mut dx = Array4::<f32>::zeros((g.n, g.c, g.h, g.w));
        let chunk = self.chunk_size(&g);
        let mut n0 = 0;
        while n0 < g.n {
            let nb = chunk.min(g.n - n0);
            // (out, nb·Ho·Wo) view of the incoming gradient
            let mut dy = Array2::<f32>::zeros((self.out_channels, nb * hw));
            {
                let dy_slice = dy.as_slice_mut().expect("standard layout");
                for b in 0..nb {
                    let src = grad.index_axis(Axis(0), n0 + b);
                    let src = src.as_slice().expect("standard layout");
                    for o in 0..self.out_channels {
                        dy_slice[o * nb * hw + b * hw..o * nb * hw + (b + 1) * hw]
                            .copy_from_slice(&src[o * hw..(o + 1) * hw]);
                    }
                }
            }
            let cols = self.im2col(&x4, &g, n0, nb);
            if let Some(bias) = &mut self.bias {
                for (o, row) in dy.axis_iter(Axis(0)).enumerate() {
                    bias.grad[o] += row.sum();
                }
            }
            {
                let mut dw = self.weight.grad.view_mut().into_dimensionality::<ndarray::Ix2>().expect("2-D");
                general_mat_mul(1.0, &dy, &cols.t(), 1.0, &mut dw);
            }
            let mut dcols = Array2::<f32>::zeros(cols.raw_dim());
            general_mat_mul(1.0, &self.weight_matrix().t(), &dy, 0.0, &mut dcols);
            self.col2im(&dcols, &mut dx, &g, n0, nb);
            n0 += nb;
        }
        dx.into_dyn()
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn cost(&self, input: &[usize], cost: &mut Cost) -> Vec<usize> {
        let (ho, wo) = self.output_hw(input[2], input[3]);
        let k2 = (self.kernel * self.kernel) as u64;
        cost.macs += k2 * self.in_channels as u64 * self.out_channels as u64 * (ho * wo) as u64;
        vec![input[0], self.out_channels, ho, wo]
    }
}

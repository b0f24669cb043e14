use ndarray::{Array2, Array4, Ix4};

use super::{Cost, Layer, Mode};
use crate::param::Tensor;

fn as4(x: &Tensor) -> Array4<f32> {
    x.as_standard_layout()
        .into_owned()
        .into_dimensionality::<Ix4>()
        .expect("NCHW input")
}

fn out_dim(d: usize, k: usize, s: usize, p: usize) -> usize {
    (d + 2 * p - k) / s + 1
}

pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding, argmax: None }
    }

    /// Output plus the flat input index chosen for every output element.
    fn pool(&self, x: &Tensor) -> (Array4<f32>, Vec<usize>) {
        let x = as4(x);
        let (n, c, h, w) = x.dim();
        let (ho, wo) = (out_dim(h, self.kernel, self.stride, self.padding), out_dim(w, self.kernel, self.stride, self.padding));
        let src = x.as_slice().unwrap();
        let mut out = Array4::<f32>::zeros((n, c, ho, wo));
        let mut idx = Vec::with_capacity(out.len());
        let dst = out.as_slice_mut().unwrap();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if src[i] > best || best_i == usize::MAX {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    dst[o] = best;
                    idx.push(best_i);
                    o += 1;
                }
            }
        }
        (out, idx)
    }
}

impl Layer for MaxPool2d {
    fn kind(&self) -> &'static str {
        "max_pool"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        self.pool(&x).0.into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        let (y, idx) = self.pool(&x);
        self.argmax = Some((x.shape().to_vec(), idx));
        y.into_dyn()
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (shape, idx) = self.argmax.take().expect("max pool backward without recorded forward");
        let grad = grad.as_standard_layout().into_owned();
        let mut dx = Tensor::zeros(ndarray::IxDyn(&shape));
        let d = dx.as_slice_mut().unwrap();
        for (g, &i) in grad.as_slice().unwrap().iter().zip(&idx) {
            d[i] += g;
        }
        dx
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        vec![input[0], input[1], out_dim(input[2], k, s, p), out_dim(input[3], k, s, p)]
    }
}

/// Non-overlapping average pooling (kernel = stride).
pub struct AvgPool2d {
    pub kernel: usize,
    shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(kernel: usize) -> Self {
        Self { kernel, shape: None }
    }
}

impl Layer for AvgPool2d {
    fn kind(&self) -> &'static str {
        "avg_pool"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let x = as4(&x);
        let (n, c, h, w) = x.dim();
        let k = self.kernel;
        let (ho, wo) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f32;
        Array4::from_shape_fn((n, c, ho, wo), |(b, ch, oy, ox)| {
            let mut s = 0.0;
            for ky in 0..k {
                for kx in 0..k {
                    s += x[[b, ch, oy * k + ky, ox * k + kx]];
                }
            }
            s * scale
        })
        .into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.shape.take().expect("avg pool backward without recorded forward");
        let g = as4(&grad);
        let k = self.kernel;
        let scale = 1.0 / (k * k) as f32;
        let (ho, wo) = (g.dim().2, g.dim().3);
        Array4::from_shape_fn((shape[0], shape[1], shape[2], shape[3]), |(b, ch, y, x)| {
            let (oy, ox) = (y / k, x / k);
            if oy < ho && ox < wo {
                g[[b, ch, oy, ox]] * scale
            } else {
                0.0
            }
        })
        .into_dyn()
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        vec![input[0], input[1], input[2] / self.kernel, input[3] / self.kernel]
    }
}

/// `(N, C, H, W)` to `(N, C)` by spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl Layer for GlobalAvgPool {
    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let x = as4(&x);
        let (n, c, h, w) = x.dim();
        let flat = x.into_shape_with_order((n, c, h * w)).unwrap();
        (flat.sum_axis(ndarray::Axis(2)) / (h * w) as f32).into_dyn()
    }

    fn forward(&mut self, x: Tensor, _mode: Mode) -> Tensor {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.shape.take().expect("global pool backward without recorded forward");
        let g: Array2<f32> = grad.into_dimensionality().expect("(N, C) gradient");
        let scale = 1.0 / (shape[2] * shape[3]) as f32;
        Array4::from_shape_fn((shape[0], shape[1], shape[2], shape[3]), |(b, c, _, _)| g[[b, c]] * scale).into_dyn()
    }

    fn cost(&self, input: &[usize], _cost: &mut Cost) -> Vec<usize> {
        vec![input[0], input[1]]
    }
}

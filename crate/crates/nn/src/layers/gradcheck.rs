use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f32>() * 2.0 - 1.0)
}

fn loss(layer: &mut dyn Layer, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x.clone(), mode);
    y.iter().zip(r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
}

/// Compares backward against central differences for the input and every parameter.
fn check(layer: &mut dyn Layer, shape: &[usize], mode: Mode) {
    let x = random(shape, 11);
    let out_shape = layer.forward(x.clone(), mode).shape().to_vec();
    let r = random(&out_shape, 12);
    let mut ps = Vec::new();
    layer.params_mut("", &mut ps);
    ps.into_iter().for_each(|(_, p)| p.zero_grad());
    layer.forward(x.clone(), mode);
    let dx = layer.backward(r.clone());
    let eps = 1e-2f32;
    let tol = |a: f64, n: f64| (a - n).abs() <= 2e-2 * a.abs().max(n.abs()).max(1e-1);

    for i in (0..x.len()).step_by((x.len() / 40).max(1)) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[i] += eps;
        xm.as_slice_mut().unwrap()[i] -= eps;
        let num = (loss(layer, &xp, &r, mode) - loss(layer, &xm, &r, mode)) / (2.0 * eps as f64);
        let ana = dx.as_slice().unwrap()[i] as f64;
        assert!(tol(ana, num), "{} input[{i}]: analytic {ana} vs numeric {num}", layer.kind());
    }

    let mut names = Vec::new();
    layer.params("", &mut names);
    let grads: Vec<(String, Tensor, bool)> =
        names.into_iter().map(|(n, p)| (n, p.grad.clone(), p.buffer)).collect();
    for (pi, (name, grad, buffer)) in grads.iter().enumerate() {
        if *buffer {
            continue;
        }
        let len = grad.len();
        for j in (0..len).step_by((len / 15).max(1)) {
            let mut eval = |delta: f32| {
                let mut ps = Vec::new();
                layer.params_mut("", &mut ps);
                ps[pi].1.value.as_slice_mut().unwrap()[j] += delta;
                drop(ps);
                let l = loss(layer, &x, &r, mode);
                let mut ps = Vec::new();
                layer.params_mut("", &mut ps);
                ps[pi].1.value.as_slice_mut().unwrap()[j] -= delta;
                l
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps as f64);
            let ana = grad.as_slice().unwrap()[j] as f64;
            assert!(tol(ana, num), "{} {name}[{j}]: analytic {ana} vs numeric {num}", layer.kind());
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

#[test]
fn conv_gradients() {
    check(&mut Conv2d::new(3, 4, 3, 1, 1, true, &mut rng()), &[2, 3, 5, 5], Mode::Train);
    check(&mut Conv2d::new(2, 3, 3, 2, 0, false, &mut rng()), &[1, 2, 7, 6], Mode::Train);
}

#[test]
fn conv_chunking_matches_single_pass() {
    // enough samples to force several im2col chunks
    let conv = Conv2d::new(8, 4, 3, 1, 1, true, &mut rng());
    let x = random(&[40, 8, 48, 48], 3);
    let whole = conv.infer(x.clone());
    let first = conv.infer(x.slice_axis(ndarray::Axis(0), (0..1).into()).to_owned());
    let diff = (&whole.slice_axis(ndarray::Axis(0), (0..1).into()) - &first).mapv(f32::abs);
    assert!(diff.iter().all(|&d| d < 1e-5));
}

#[test]
fn dense_gradients() {
    check(&mut Dense::new(6, 4, &mut rng()), &[3, 6], Mode::Train);
    check(&mut Dense::new(5, 3, &mut rng()), &[2, 4, 5], Mode::Train);
}

#[test]
fn batch_norm_gradients() {
    check(&mut BatchNorm::new(3), &[4, 3, 2, 2], Mode::Train);
    check(&mut BatchNorm::new(5), &[6, 5], Mode::Train);
    check(&mut BatchNorm::new(3), &[2, 3, 3, 3], Mode::EvalGrad);
}

#[test]
fn layer_norm_gradients() {
    check(&mut LayerNorm::new(6), &[2, 3, 6], Mode::Train);
}

#[test]
fn activation_gradients() {
    check(&mut Gelu::default(), &[3, 7], Mode::Train);
    check(&mut Relu::default(), &[3, 7], Mode::Train);
}

#[test]
fn pooling_gradients() {
    check(&mut MaxPool2d::new(3, 2, 1), &[2, 2, 6, 6], Mode::Train);
    check(&mut AvgPool2d::new(2), &[2, 2, 4, 6], Mode::Train);
    check(&mut GlobalAvgPool::default(), &[2, 3, 4, 4], Mode::Train);
}

#[test]
fn attention_gradients() {
    check(&mut MultiHeadAttention::new(8, 2, &mut rng()), &[2, 5, 8], Mode::Train);
}

#[test]
fn token_layers_gradients() {
    let mut seq = Sequential::new()
        .with("tokens", ToTokens::default())
        .with("cls", ClassToken::new(6, 4, &mut rng()))
        .with("take", TakeClassToken::default());
    check(&mut seq, &[2, 4, 2, 3], Mode::Train);
}

#[test]
fn composite_gradients() {
    let mut r = rng();
    let body = Sequential::new()
        .with("conv", Conv2d::new(3, 3, 3, 1, 1, false, &mut r))
        .with("bn", BatchNorm::new(3))
        .with("relu", Relu::default());
    let dense = DenseBlock::new(vec![
        Sequential::new().with("conv", Conv2d::new(3, 2, 3, 1, 1, false, &mut r)),
        Sequential::new().with("conv", Conv2d::new(5, 2, 1, 1, 0, false, &mut r)),
    ]);
    let mut net = Sequential::new()
        .with("res", Residual::identity(body))
        .with("dense", dense)
        .with("gap", GlobalAvgPool::default())
        .with("fc", Dense::new(7, 2, &mut r));
    check(&mut net, &[3, 3, 4, 4], Mode::Train);
}

#[test]
fn dropout_is_identity_outside_training() {
    let mut d = Dropout::new(0.5, 1);
    let x = random(&[4, 10], 1);
    assert_eq!(d.forward(x.clone(), Mode::EvalGrad), x);
    let y = d.forward(x.clone(), Mode::Train);
    assert!(y.iter().zip(&x).all(|(a, b)| *a == 0.0 || (a - 2.0 * b).abs() < 1e-6));
}

#[test]
fn mac_counts() {
    let mut cost = Cost::default();
    let conv = Conv2d::new(3, 8, 3, 1, 1, false, &mut rng());
    assert_eq!(conv.cost(&[1, 3, 4, 4], &mut cost), vec![1, 8, 4, 4]);
    assert_eq!(cost.macs, 3456);
    let mut cost = Cost::default();
    Dense::new(1024, 1024, &mut rng()).cost(&[1, 1024], &mut cost);
    assert_eq!(cost.macs, 1_048_576);
}

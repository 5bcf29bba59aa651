//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitedge::nn::{loss_grad, LayerKind, ModelProfile, SegmentState};
use splitedge::Tensor;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random values bounded away from zero so ReLU kinks are never straddled.
fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Scalar objective `sum(forward(x) * r)`, whose output gradient is `r`.
fn objective(seg: &SegmentState, x: &Tensor, r: &Tensor) -> f64 {
    let (y, _) = seg.forward(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check_layer(kind: LayerKind, in_shape: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = ModelProfile::from_kinds(in_shape, &[kind, LayerKind::Flatten]).unwrap();
    let mut seg = SegmentState::init(&profile, 0, 1, seed).unwrap();
    let batch = 3;
    let mut xs = vec![batch];
    xs.extend_from_slice(in_shape);
    let x = random_tensor(&mut rng, xs);
    let mut ys = vec![batch];
    ys.extend_from_slice(&profile.layers()[0].out_shape);
    let r = random_tensor(&mut rng, ys);

    let (_, cache) = seg.forward(&x).unwrap();
    let (grad_in, grads) = seg.backward(&cache, &r).unwrap();

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        numeric.push((objective(&seg, &plus, &r) - objective(&seg, &minus, &r)) / (2.0 * H));
    }
    let e = rel_err(grad_in.data(), &numeric);
    assert!(e < TOL, "{} input gradient rel err {e}", kind.name());

    for p in 0..seg.params()[0].len() {
        let mut numeric = Vec::new();
        for i in 0..seg.params()[0][p].len() {
            let orig = seg.params()[0][p].data()[i];
            seg.params_mut()[0][p].data_mut()[i] = orig + H;
            let up = objective(&seg, &x, &r);
            seg.params_mut()[0][p].data_mut()[i] = orig - H;
            let down = objective(&seg, &x, &r);
            seg.params_mut()[0][p].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        let e = rel_err(grads.grads[0][p].data(), &numeric);
        assert!(e < TOL, "{} parameter {p} rel err {e}", kind.name());
    }
}

#[test]
fn dense_matches_finite_differences() {
    for seed in 0..10 {
        check_layer(LayerKind::Dense { inputs: 4, outputs: 3 }, &[4], seed);
    }
}

#[test]
fn relu_matches_finite_differences() {
    for seed in 0..10 {
        check_layer(LayerKind::Relu, &[6], seed);
    }
}

#[test]
fn conv_matches_finite_differences() {
    for seed in 0..10 {
        check_layer(
            LayerKind::Conv2dSmall {
                in_channels: 2,
                out_channels: 3,
            },
            &[2, 5, 4],
            seed,
        );
    }
}

#[test]
fn flatten_matches_finite_differences() {
    for seed in 0..10 {
        check_layer(LayerKind::Flatten, &[2, 3, 2], seed);
    }
}

#[test]
fn softmax_head_matches_finite_differences() {
    for seed in 0..10 {
        check_layer(LayerKind::SoftmaxHead { inputs: 5, classes: 4 }, &[5], seed);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let logits = random_tensor(&mut rng, vec![4, 5]);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let (_, g) = loss_grad(&logits, &labels).unwrap();
        let mut numeric = Vec::new();
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += H;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= H;
            let (lp, _) = loss_grad(&plus, &labels).unwrap();
            let (lm, _) = loss_grad(&minus, &labels).unwrap();
            numeric.push((lp - lm) / (2.0 * H));
        }
        assert!(rel_err(g.data(), &numeric) < TOL);
        for row in 0..4 {
            let s: f64 = g.row(row).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}

#[test]
fn full_network_matches_finite_differences() {
    let profile = ModelProfile::small_cnn(1, 6, &[2], 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seg = SegmentState::init(&profile, 0, profile.len(), 3).unwrap();
    let x = random_tensor(&mut rng, vec![2, 1, 6, 6]);
    let labels = vec![0, 2];
    let loss = |s: &SegmentState, x: &Tensor| {
        let (y, _) = s.forward(x).unwrap();
        loss_grad(&y, &labels).unwrap().0
    };
    let (y, cache) = seg.forward(&x).unwrap();
    let (_, g) = loss_grad(&y, &labels).unwrap();
    let (grad_in, _) = seg.backward(&cache, &g).unwrap();
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        numeric.push((loss(&seg, &plus) - loss(&seg, &minus)) / (2.0 * H));
    }
    assert!(rel_err(grad_in.data(), &numeric) < TOL);
}

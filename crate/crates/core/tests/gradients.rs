//! Finite-difference checks of the backward passes, observed through one plain SGD step.

use mofhei::datasets::{one_hot, Dataset};
use mofhei::nncore::{
    loss_and_metric, train, Loss, Model, ModelBuilder, OptimizerKind, Padding, TrainConfig,
    TrainOptions,
};
use mofhei::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(shape: &[usize], n: usize, outputs: usize, loss: Loss, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let x = Tensor::from_f64(
        &full,
        &(0..n * len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let y = match loss {
        Loss::Mse => Tensor::from_f64(
            &[n, outputs],
            &(0..n * outputs)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<_>>(),
        )
        .unwrap(),
        _ => one_hot(
            &(0..n)
                .map(|_| rng.gen_range(0..outputs))
                .collect::<Vec<_>>(),
            outputs,
        ),
    };
    Dataset::new(x, y).unwrap()
}

fn loss_of(model: &Model<f64>, d: &Dataset<f64>, loss: Loss) -> f64 {
    loss_and_metric(model, d, loss).unwrap().0
}

/// With momentum SGD starting from zero velocity and `lr = 1`, one full-batch step moves
/// every parameter by exactly minus its gradient.
fn check(mut model: Model<f64>, d: &Dataset<f64>, loss: Loss, seed: u64) {
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 1.0,
        batch_size: d.len(),
        optimizer: OptimizerKind::SgdMomentum,
        loss,
        seed,
        ..TrainConfig::default()
    };
    let before = model.clone();
    train(&mut model, d, d, &cfg, TrainOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    for (li, layer) in before.layers().iter().enumerate() {
        for (pi, p) in layer.params.iter().enumerate() {
            if p.is_empty() || matches!(layer.kind, mofhei::nncore::LayerKind::BatchNorm { .. }) {
                continue;
            }
            for _ in 0..6 {
                let k = rng.gen_range(0..p.len());
                let analytic = p.data()[k] - model.layers()[li].params[pi].data()[k];
                let mut plus = before.clone();
                plus.layer_mut(li).params[pi].data_mut()[k] += h;
                let mut minus = before.clone();
                minus.layer_mut(li).params[pi].data_mut()[k] -= h;
                let numeric = (loss_of(&plus, d, loss) - loss_of(&minus, d, loss)) / (2.0 * h);
                let tol = 1e-6 + 1e-4 * numeric.abs().max(analytic.abs());
                assert!(
                    (analytic - numeric).abs() <= tol,
                    "layer {li} ({}) param {pi}[{k}]: analytic {analytic} numeric {numeric}",
                    layer.kind.name()
                );
            }
        }
    }
}

#[test]
fn dense_poly_square_mse() {
    let m = ModelBuilder::new(&[5])
        .poly_init(0.3)
        .dense(7)
        .poly(3)
        .dense(4)
        .square()
        .dense(3)
        .build(1)
        .unwrap();
    check(m, &data(&[5], 9, 3, Loss::Mse, 2), Loss::Mse, 3);
}

#[test]
fn conv_same_stride_two_with_avg_pool_cross_entropy() {
    let m = ModelBuilder::new(&[7, 7, 2])
        .poly_init(0.3)
        .conv(3, 3, 2, Padding::Same)
        .poly(2)
        .avg_pool(2)
        .flatten()
        .dense(4)
        .build(4)
        .unwrap();
    check(
        m,
        &data(&[7, 7, 2], 6, 4, Loss::CrossEntropy, 5),
        Loss::CrossEntropy,
        6,
    );
}

#[test]
fn conv_valid_relu_max_pool_softmax_head() {
    let m = ModelBuilder::new(&[8, 8, 1])
        .conv(4, 3, 1, Padding::Valid)
        .relu()
        .max_pool(2)
        .conv(2, 2, 1, Padding::Valid)
        .layer(mofhei::nncore::LayerKind::Sigmoid)
        .flatten()
        .dense(3)
        .softmax()
        .build(7)
        .unwrap();
    check(
        m,
        &data(&[8, 8, 1], 5, 3, Loss::CrossEntropy, 8),
        Loss::CrossEntropy,
        9,
    );
}

#[test]
fn f32_forward_tracks_f64() {
    let m64: Model<f64> = ModelBuilder::new(&[6])
        .dense(5)
        .poly(2)
        .dense(2)
        .build(3)
        .unwrap();
    let m32: Model<f32> = ModelBuilder::new(&[6])
        .dense(5)
        .poly(2)
        .dense(2)
        .build(3)
        .unwrap();
    let d = data(&[6], 4, 2, Loss::Mse, 1);
    let (a, b) = (
        m64.forward(&d.x).unwrap(),
        m32.forward(&d.x.cast()).unwrap().cast::<f64>(),
    );
    assert!(a.max_abs_diff(&b) < 1e-5);
}

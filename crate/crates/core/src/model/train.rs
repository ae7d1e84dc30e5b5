//! Minibatch SGD with softmax cross-entropy for the toy networks.
//!
//! The trainer is intentionally minimal: plain SGD, fixed learning rate,
//! fixed batch size, single-threaded and deterministic given the seed. Its
//! only job is to produce networks whose responses have realistic
//! correlation structure for the compression solvers to work on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{apply_layer, ConvLayer, Layer, Network, Tensor, ToyDataset};
use crate::numerics::Matrix;

const BATCH_SIZE: usize = 16;

/// Build the default toy CNN: three conv+relu stages (one pooled), then a
/// dense classifier. `width` is the base filter count.
pub fn toy_cnn(hw: usize, num_classes: usize, width: usize, seed: u64) -> Result<Network> {
    if width == 0 {
        return Err(Error::Validation("width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1 = random_conv_layer(3, 1, width, 1, &mut rng)?;
    let conv2 = random_conv_layer(3, width, width, 1, &mut rng)?;
    let conv3 = random_conv_layer(3, width, 2 * width, 1, &mut rng)?;
    // Spatial sizes: hw -> hw-2 -> hw-4 -> pooled -> pooled-2.
    let pooled = (hw - 4 - 2) / 2 + 1;
    let flat = (pooled - 2) * (pooled - 2) * 2 * width;
    let fc = random_fc_layer(flat, num_classes, &mut rng);
    Network::new(
        (hw, hw, 1),
        vec![
            Layer::Conv(conv1),
            Layer::Relu,
            Layer::Conv(conv2),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Conv(conv3),
            Layer::Relu,
            Layer::Flatten,
            Layer::FullyConnected { weights: fc },
            Layer::Softmax,
        ],
        format!("toy_cnn_w{width}"),
        seed,
    )
}

fn random_conv_layer(
    k: usize,
    c: usize,
    d: usize,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvLayer> {
    let fan_in = (k * k * c) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let cols = k * k * c + 1;
    let w = Matrix::from_fn(d, cols, |_, col| {
        if col == cols - 1 {
            0.0
        } else {
            rng.random_range(-bound..bound)
        }
    });
    ConvLayer::new(k, c, d, stride, w)
}

fn random_fc_layer(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / input as f64).sqrt();
    Matrix::from_fn(output, input + 1, |_, col| {
        if col == input {
            0.0
        } else {
            rng.random_range(-bound..bound)
        }
    })
}

/// Fraction of dataset samples whose argmax prediction matches the label.
pub fn accuracy(net: &Network, data: &ToyDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let mut hits = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let out = net.forward(img)?;
        let pred = argmax(out.data());
        if pred == label as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Train with minibatch SGD and softmax cross-entropy. Deterministic given
/// the seed; returns the trained network, leaving the input untouched.
pub fn train_toy(
    net: &Network,
    data: &ToyDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Network> {
    if !matches!(net.layers.last(), Some(Layer::Softmax)) {
        return Err(Error::Validation("training requires a final softmax".into()));
    }
    if data.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::Validation(format!("learning rate {lr} must be > 0")));
    }
    if data.labels.iter().any(|&l| l as usize >= data.num_classes) {
        return Err(Error::Validation("label out of range".into()));
    }

    let mut layers = net.layers.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for (batch_no, batch) in order.chunks(BATCH_SIZE).enumerate() {
            let mut grads: Vec<Option<Matrix>> = layers.iter().map(grad_slot).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let loss = backprop_sample(
                    &layers,
                    &data.images[idx],
                    data.labels[idx] as usize,
                    &mut grads,
                )?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became non-finite at epoch {epoch}, batch {batch_no}"
                )));
            }
            let step = lr / batch.len() as f64;
            for (layer, grad) in layers.iter_mut().zip(&grads) {
                if let Some(g) = grad {
                    let w = trainable_weights(layer).expect("grad implies trainable");
                    for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
                        *wi -= step * gi;
                    }
                    if w.data().iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence(format!(
                            "weights became non-finite at epoch {epoch}, batch {batch_no}"
                        )));
                    }
                }
            }
        }
    }

    Network::new(net.input_shape, layers, net.name.clone(), net.seed)
}

fn grad_slot(layer: &Layer) -> Option<Matrix> {
    match layer {
        Layer::Conv(c) => Some(Matrix::zeros(c.weights.rows(), c.weights.cols())),
        Layer::FullyConnected { weights } => Some(Matrix::zeros(weights.rows(), weights.cols())),
        _ => None,
    }
}

fn trainable_weights(layer: &mut Layer) -> Option<&mut Matrix> {
    match layer {
        Layer::Conv(c) => Some(&mut c.weights),
        Layer::FullyConnected { weights } => Some(weights),
        _ => None,
    }
}

/// Forward one sample, accumulate weight gradients, return the loss.
fn backprop_sample(
    layers: &[Layer],
    image: &Tensor,
    label: usize,
    grads: &mut [Option<Matrix>],
) -> Result<f64> {
    // Forward pass caching the input of every layer.
    let mut inputs: Vec<Tensor> = Vec::with_capacity(layers.len());
    let mut x = image.clone();
    for (i, layer) in layers.iter().enumerate() {
        inputs.push(x.clone());
        x = apply_layer(layer, &x).map_err(|e| e.at_layer(i))?;
    }
    let probs = x;
    // f64::max(NaN, eps) returns eps, which would mask a blown-up forward
    // pass; propagate non-finite probabilities into the loss instead.
    let p = probs.data()[label];
    let loss = if p.is_finite() {
        -p.max(1e-12).ln()
    } else {
        f64::NAN
    };

    // Softmax + cross-entropy gradient w.r.t. the softmax input.
    let mut delta_data: Vec<f64> = probs.data().to_vec();
    delta_data[label] -= 1.0;
    let mut delta = Tensor::new(vec![delta_data.len()], delta_data)?;

    for i in (0..layers.len().saturating_sub(1)).rev() {
        let x_in = &inputs[i];
        delta = match &layers[i] {
            Layer::Conv(conv) => conv_backward(conv, x_in, &delta, grads[i].as_mut().unwrap()),
            Layer::Relu => {
                let data = x_in
                    .data()
                    .iter()
                    .zip(delta.data())
                    .map(|(&xi, &di)| if xi > 0.0 { di } else { 0.0 })
                    .collect();
                Tensor::new(x_in.shape().to_vec(), data)?
            }
            Layer::MaxPool { size, stride } => maxpool_backward(x_in, &delta, *size, *stride),
            Layer::Flatten => Tensor::new(x_in.shape().to_vec(), delta.data().to_vec())?,
            Layer::FullyConnected { weights } => {
                fc_backward(weights, x_in, &delta, grads[i].as_mut().unwrap())
            }
            Layer::Softmax => unreachable!("softmax is always last"),
        };
    }
    Ok(loss)
}

fn fc_backward(weights: &Matrix, x: &Tensor, delta: &Tensor, grad: &mut Matrix) -> Tensor {
    let n_in = x.len();
    for (r, &g) in delta.data().iter().enumerate() {
        for (c, &xi) in x.data().iter().enumerate() {
            grad[(r, c)] += g * xi;
        }
        grad[(r, n_in)] += g;
    }
    let mut dx = vec![0.0; n_in];
    for (r, &g) in delta.data().iter().enumerate() {
        let row = weights.row(r);
        for (d, &w) in dx.iter_mut().zip(&row[..n_in]) {
            *d += g * w;
        }
    }
    Tensor::new(vec![n_in], dx).expect("fc backward shape")
}

fn conv_backward(conv: &ConvLayer, x: &Tensor, delta: &Tensor, grad: &mut Matrix) -> Tensor {
    let (oh, ow, _) = delta.dims3().expect("conv delta rank");
    let (h, w, _) = x.dims3().expect("conv input rank");
    let mut dx = Tensor::zeros(vec![h, w, conv.c]);
    let k = conv.k;
    let stride = conv.stride;
    let bias_col = k * k * conv.c;
    for r in 0..oh {
        for s in 0..ow {
            for f in 0..conv.d {
                let g = delta.at3(r, s, f);
                if g == 0.0 {
                    continue;
                }
                grad[(f, bias_col)] += g;
                for dh in 0..k {
                    for dw in 0..k {
                        for ch in 0..conv.c {
                            let (ih, iw) = (r * stride + dh, s * stride + dw);
                            let idx = conv.patch_index(dh, dw, ch);
                            grad[(f, idx)] += g * x.at3(ih, iw, ch);
                            let cur = dx.at3(ih, iw, ch);
                            dx.set3(ih, iw, ch, cur + g * conv.weights[(f, idx)]);
                        }
                    }
                }
            }
        }
    }
    dx
}

fn maxpool_backward(x: &Tensor, delta: &Tensor, size: usize, stride: usize) -> Tensor {
    let (h, w, c) = x.dims3().expect("pool input rank");
    let (oh, ow, _) = delta.dims3().expect("pool delta rank");
    let mut dx = Tensor::zeros(vec![h, w, c]);
    for r in 0..oh {
        for s in 0..ow {
            for ch in 0..c {
                // Route to the first maximum, matching the forward scan order.
                let (mut bh, mut bw) = (r * stride, s * stride);
                let mut best = f64::NEG_INFINITY;
                for dh in 0..size {
                    for dw in 0..size {
                        let v = x.at3(r * stride + dh, s * stride + dw, ch);
                        if v > best {
                            best = v;
                            bh = r * stride + dh;
                            bw = s * stride + dw;
                        }
                    }
                }
                let cur = dx.at3(bh, bw, ch);
                dx.set3(bh, bw, ch, cur + delta.at3(r, s, ch));
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gen_toy_dataset;

    fn tiny_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = random_conv_layer(3, 1, 4, 1, &mut rng).unwrap();
        let fc = random_fc_layer(6 * 6 * 4, 3, &mut rng);
        Network::new(
            (8, 8, 1),
            vec![
                Layer::Conv(conv),
                Layer::Relu,
                Layer::Flatten,
                Layer::FullyConnected { weights: fc },
                Layer::Softmax,
            ],
            "tiny",
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_leaves_weights_unchanged() {
        let data = gen_toy_dataset(2, 8, 3, 16).unwrap();
        let net = toy_cnn(16, 3, 4, 1).unwrap();
        let trained = train_toy(&net, &data, 0, 0.1, 3).unwrap();
        assert_eq!(net, trained);
    }

    #[test]
    fn same_seed_trains_identically() {
        let data = gen_toy_dataset(5, 24, 2, 16).unwrap();
        let net = toy_cnn(16, 2, 4, 7).unwrap();
        let a = train_toy(&net, &data, 2, 0.05, 11).unwrap();
        let b = train_toy(&net, &data, 2, 0.05, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separable_two_class_reaches_090() {
        // Horizontal vs vertical bars are linearly separable.
        let data = gen_toy_dataset(9, 64, 2, 16).unwrap();
        let net = toy_cnn(16, 2, 4, 9).unwrap();
        let trained = train_toy(&net, &data, 20, 0.1, 9).unwrap();
        let acc = accuracy(&trained, &data).unwrap();
        assert!(acc > 0.9, "train accuracy {acc}");
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = gen_toy_dataset(13, 32, 2, 16).unwrap();
        let net = toy_cnn(16, 2, 4, 13).unwrap();
        match train_toy(&net, &data, 50, 1e200, 13) {
            Err(Error::Divergence(_)) => {}
            other => panic!("expected divergence, got {:?}", other.map(|n| n.name)),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = tiny_net(21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let img = Tensor::new(
            vec![8, 8, 1],
            (0..64).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let label = 1usize;

        let mut grads: Vec<Option<Matrix>> = net.layers.iter().map(grad_slot).collect();
        backprop_sample(&net.layers, &img, label, &mut grads).unwrap();

        let loss_of = |layers: &[Layer]| -> f64 {
            let mut x = img.clone();
            for layer in layers {
                x = apply_layer(layer, &x).unwrap();
            }
            -x.data()[label].max(1e-12).ln()
        };

        let eps = 1e-6;
        // Spot-check a few weights in each trainable layer.
        for (li, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            for &(r, c) in &[(0usize, 0usize), (1, 3), (2, grad.cols() - 1)] {
                let mut plus = net.layers.clone();
                let w = trainable_weights(&mut plus[li]).unwrap();
                w[(r, c)] += eps;
                let mut minus = net.layers.clone();
                let w = trainable_weights(&mut minus[li]).unwrap();
                w[(r, c)] -= eps;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let analytic = grad[(r, c)];
                assert!(
                    (numeric - analytic).abs() < 1e-4 * (1.0 + numeric.abs()),
                    "layer {li} weight ({r},{c}): analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}

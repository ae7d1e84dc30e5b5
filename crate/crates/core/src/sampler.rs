//! Response collection.
//!
//! A [`ResponseSet`] is a d x n matrix of pre-ReLU convolutional responses
//! sampled at randomly chosen feature-map positions: images come from a
//! seeded shuffle visited round-robin, positions are drawn uniformly
//! without replacement within each image. The paired variant additionally
//! records, at identical positions, the responses of the original filters
//! applied to a partially-approximated network's input feature map.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{io, Layer, Network, ShapeState, ToyDataset};
use crate::numerics::Matrix;

/// Where one sampled column came from: (image index, output row, output col).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// Sampled pre-ReLU responses of one convolutional layer.
#[derive(Debug, Clone)]
pub struct ResponseSet {
    pub layer_idx: usize,
    /// d x n, one sampled position per column.
    pub y: Matrix,
    /// Row-wise mean of `y`.
    pub mean: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub seed: u64,
}

/// A [`ResponseSet`] from the original network plus responses of the same
/// filters on the approximated network's input, at identical positions.
#[derive(Debug, Clone)]
pub struct PairedResponseSet {
    pub base: ResponseSet,
    pub y_hat: Matrix,
}

/// Sample `n` responses of the conv layer at `layer_idx`.
pub fn sample_responses(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    n: usize,
    seed: u64,
) -> Result<ResponseSet> {
    sample_responses_limited(net, data, layer_idx, n, seed, None)
}

/// Like [`sample_responses`] but drawing from at most `image_limit` images
/// of the seeded shuffle. Used by the pipeline's sample budget.
pub fn sample_responses_limited(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    n: usize,
    seed: u64,
    image_limit: Option<usize>,
) -> Result<ResponseSet> {
    let schedule = build_schedule(net, data, layer_idx, n, seed, image_limit)?;
    let d = conv_depth(net, layer_idx)?;
    let mut y = Matrix::zeros(d, n);
    fill_columns(net, data, layer_idx, &schedule, &mut y)?;
    let mean = y.row_means();
    Ok(ResponseSet {
        layer_idx,
        y,
        mean,
        provenance: schedule,
        seed,
    })
}

/// Sample paired responses: `y` from the original network, `y_hat` from the
/// original filters applied to the approximated network's input feature map.
/// `approx` may only differ from `orig` in layers before `layer_idx` (each
/// earlier replacement widens the layer list by one).
pub fn sample_response_pairs(
    orig: &Network,
    approx: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    n: usize,
    seed: u64,
) -> Result<PairedResponseSet> {
    sample_response_pairs_limited(orig, approx, data, layer_idx, n, seed, None)
}

pub fn sample_response_pairs_limited(
    orig: &Network,
    approx: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    n: usize,
    seed: u64,
    image_limit: Option<usize>,
) -> Result<PairedResponseSet> {
    if orig.input_shape != approx.input_shape {
        return Err(Error::Validation(
            "paired sampling: networks have different input shapes".into(),
        ));
    }
    let approx_idx = matching_conv_index(orig, approx, layer_idx)?;

    let schedule = build_schedule(orig, data, layer_idx, n, seed, image_limit)?;
    let d = conv_depth(orig, layer_idx)?;
    let mut y = Matrix::zeros(d, n);
    let mut y_hat = Matrix::zeros(d, n);
    fill_columns(orig, data, layer_idx, &schedule, &mut y)?;
    fill_columns(approx, data, approx_idx, &schedule, &mut y_hat)?;
    let mean = y.row_means();
    Ok(PairedResponseSet {
        base: ResponseSet {
            layer_idx,
            y,
            mean,
            provenance: schedule,
            seed,
        },
        y_hat,
    })
}

/// Index of the conv layer in `approx` corresponding to `layer_idx` in
/// `orig`, validating that the layer itself and the whole network suffix
/// after it are untouched (the layer being sampled is not yet approximated,
/// so only layers before it may differ).
fn matching_conv_index(orig: &Network, approx: &Network, layer_idx: usize) -> Result<usize> {
    let conv = orig
        .layers
        .get(layer_idx)
        .and_then(Layer::as_conv)
        .ok_or_else(|| {
            Error::Validation(format!("layer {layer_idx} is not a convolutional layer"))
        })?;
    let tail_len = orig.layers.len() - layer_idx;
    if approx.layers.len() < tail_len {
        return Err(Error::Validation(
            "paired sampling: approximated network is shorter than the original tail".into(),
        ));
    }
    let approx_idx = approx.layers.len() - tail_len;
    let candidate = approx.layers[approx_idx].as_conv().ok_or_else(|| {
        Error::Validation(format!(
            "paired sampling: approximated network has no matching conv for layer {layer_idx}"
        ))
    })?;
    if candidate != conv {
        return Err(Error::Validation(format!(
            "paired sampling: layer {layer_idx} differs between networks; it must not be approximated yet"
        )));
    }
    if orig.layers[layer_idx..] != approx.layers[approx_idx..] {
        return Err(Error::Validation(
            "paired sampling: networks differ after the sampled layer".into(),
        ));
    }
    Ok(approx_idx)
}

fn conv_depth(net: &Network, layer_idx: usize) -> Result<usize> {
    net.layers
        .get(layer_idx)
        .and_then(Layer::as_conv)
        .map(|c| c.d)
        .ok_or_else(|| Error::Validation(format!("layer {layer_idx} is not a convolutional layer")))
}

/// Output spatial size of the conv layer at `layer_idx`.
fn conv_out_dims(net: &Network, layer_idx: usize) -> Result<(usize, usize)> {
    let shapes = net.shape_walk()?;
    match shapes.get(layer_idx) {
        Some(ShapeState::Spatial(h, w, _)) => Ok((*h, *w)),
        _ => Err(Error::Validation(format!(
            "layer {layer_idx} has no spatial output"
        ))),
    }
}

/// Deterministic sampling schedule: a seeded shuffle of images visited
/// round-robin, one fresh position per visit, without replacement per image.
fn build_schedule(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    n: usize,
    seed: u64,
    image_limit: Option<usize>,
) -> Result<Vec<Provenance>> {
    if data.is_empty() {
        return Err(Error::Validation("sampling from an empty dataset".into()));
    }
    if n == 0 {
        return Err(Error::Validation("sample count must be positive".into()));
    }
    let (oh, ow) = conv_out_dims(net, layer_idx)?;
    let positions = oh * ow;
    let image_count = image_limit.unwrap_or(data.len()).min(data.len());
    if image_count == 0 {
        return Err(Error::Validation("image limit must be positive".into()));
    }
    let available = image_count * positions;
    if n > available {
        return Err(Error::Validation(format!(
            "requested {n} samples but only {available} positions are available \
             ({image_count} images x {positions} positions)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image_order: Vec<usize> = (0..data.len()).collect();
    image_order.shuffle(&mut rng);
    image_order.truncate(image_count);

    // Per-image position permutations, derived independently of visit order.
    let mut perms: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut schedule = Vec::with_capacity(n);
    let mut visit = vec![0usize; image_count];
    'outer: loop {
        for (slot, &img) in image_order.iter().enumerate() {
            if schedule.len() == n {
                break 'outer;
            }
            if visit[slot] >= positions {
                continue;
            }
            let perm = perms.entry(img).or_insert_with(|| {
                let mut p: Vec<usize> = (0..positions).collect();
                let mut prng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_add((img as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                );
                p.shuffle(&mut prng);
                p
            });
            let pos = perm[visit[slot]];
            visit[slot] += 1;
            schedule.push(Provenance {
                image: img,
                row: pos / ow,
                col: pos % ow,
            });
        }
    }
    Ok(schedule)
}

/// Forward each referenced image once and copy the scheduled positions into
/// their preassigned columns.
fn fill_columns(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    schedule: &[Provenance],
    y: &mut Matrix,
) -> Result<()> {
    let mut by_image: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (col, p) in schedule.iter().enumerate() {
        by_image.entry(p.image).or_default().push(col);
    }
    let d = y.rows();
    for (&img, cols) in &by_image {
        let (_, recorded) = net.forward_recording(&data.images[img], &[layer_idx])?;
        let act = &recorded[&layer_idx];
        for &col in cols {
            let p = schedule[col];
            for f in 0..d {
                y[(f, col)] = act.at3(p.row, p.col, f);
            }
        }
    }
    Ok(())
}

// ---- serialization ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ResponseSidecar {
    layer_idx: usize,
    seed: u64,
    provenance: Vec<Provenance>,
}

/// Save as `<base>.bin` (LRCT d x n blob) + `<base>.json` sidecar.
pub fn save_response_set(rs: &ResponseSet, base: &Path) -> Result<()> {
    let bin = base.with_extension("bin");
    let json = base.with_extension("json");
    io::write_tensor_blob(&bin, &[rs.y.rows(), rs.y.cols()], rs.y.data())?;
    let sidecar = ResponseSidecar {
        layer_idx: rs.layer_idx,
        seed: rs.seed,
        provenance: rs.provenance.clone(),
    };
    std::fs::write(&json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_response_set(base: &Path) -> Result<ResponseSet> {
    let (dims, data) = io::read_tensor_blob(&base.with_extension("bin"))?;
    if dims.len() != 2 {
        return Err(Error::Validation(format!(
            "response blob should be rank 2, got {dims:?}"
        )));
    }
    let y = Matrix::new(dims[0], dims[1], data)?;
    let sidecar: ResponseSidecar =
        serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    if sidecar.provenance.len() != y.cols() {
        return Err(Error::Validation(format!(
            "sidecar lists {} provenance entries for {} columns",
            sidecar.provenance.len(),
            y.cols()
        )));
    }
    let mean = y.row_means();
    Ok(ResponseSet {
        layer_idx: sidecar.layer_idx,
        y,
        mean,
        provenance: sidecar.provenance,
        seed: sidecar.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{conv_forward, gen_toy_dataset, ConvLayer, Tensor};
    use rand::Rng;

    fn conv_net(k: usize, c: usize, d: usize, seed: u64) -> (Network, ConvLayer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(d, k * k * c + 1, |_, _| rng.random_range(-1.0..1.0));
        let conv = ConvLayer::new(k, c, d, 1, w).unwrap();
        let net = Network::new(
            (16, 16, c),
            vec![Layer::Conv(conv.clone()), Layer::Relu],
            "s",
            seed,
        )
        .unwrap();
        (net, conv)
    }

    #[test]
    fn constant_zero_weights_give_bias_columns() {
        let d = 3;
        let k = 3;
        let bias = [0.5, -1.0, 2.0];
        let w = Matrix::from_fn(d, k * k + 1, |r, c| if c == k * k { bias[r] } else { 0.0 });
        let conv = ConvLayer::new(k, 1, d, 1, w).unwrap();
        let net = Network::new((16, 16, 1), vec![Layer::Conv(conv)], "z", 0).unwrap();
        let data = gen_toy_dataset(1, 4, 2, 16).unwrap();
        let rs = sample_responses(&net, &data, 0, 20, 7).unwrap();
        for col in 0..20 {
            for (f, &b) in bias.iter().enumerate() {
                assert!((rs.y[(f, col)] - b).abs() < 1e-12);
            }
        }
        for (m, b) in rs.mean.iter().zip(&bias) {
            assert!((m - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_matches_conv_forward() {
        let (net, conv) = conv_net(3, 1, 4, 3);
        let data = gen_toy_dataset(4, 6, 2, 16).unwrap();
        let rs = sample_responses(&net, &data, 0, 1, 11).unwrap();
        assert_eq!(rs.provenance.len(), 1);
        let p = rs.provenance[0];
        let direct = conv_forward(&conv, &data.images[p.image]).unwrap();
        for f in 0..4 {
            assert!((rs.y[(f, 0)] - direct.at3(p.row, p.col, f)).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_seeds_identical_sets() {
        let (net, _) = conv_net(3, 1, 4, 5);
        let data = gen_toy_dataset(6, 8, 2, 16).unwrap();
        let a = sample_responses(&net, &data, 0, 24, 13).unwrap();
        let b = sample_responses(&net, &data, 0, 24, 13).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.provenance, b.provenance);
        let c = sample_responses(&net, &data, 0, 24, 14).unwrap();
        assert_ne!(a.provenance, c.provenance);
    }

    #[test]
    fn oversampling_is_rejected() {
        let (net, _) = conv_net(3, 1, 2, 6);
        let data = gen_toy_dataset(7, 2, 2, 16).unwrap();
        // 2 images x 14 x 14 = 392 positions available.
        assert!(sample_responses(&net, &data, 0, 392, 1).is_ok());
        assert!(matches!(
            sample_responses(&net, &data, 0, 393, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn columns_reproduce_conv_forward_everywhere() {
        let (net, conv) = conv_net(3, 1, 4, 8);
        let data = gen_toy_dataset(9, 5, 2, 16).unwrap();
        let rs = sample_responses(&net, &data, 0, 60, 17).unwrap();
        for (col, p) in rs.provenance.iter().enumerate() {
            let direct = conv_forward(&conv, &data.images[p.image]).unwrap();
            for f in 0..4 {
                assert!((rs.y[(f, col)] - direct.at3(p.row, p.col, f)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn positions_within_an_image_do_not_repeat() {
        let (net, _) = conv_net(3, 1, 2, 9);
        let data = gen_toy_dataset(2, 2, 2, 16).unwrap();
        let rs = sample_responses(&net, &data, 0, 300, 23).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &rs.provenance {
            assert!(seen.insert((p.image, p.row, p.col)), "duplicate {p:?}");
        }
    }

    #[test]
    fn uniform_position_frequency_chi_squared() {
        // 1 image, 3x3 output grid, 2 draws per seed. Over many seeds each
        // of the 9 positions should be selected uniformly.
        let k = 3;
        let w = Matrix::from_fn(1, k * k + 1, |_, _| 0.1);
        let conv = ConvLayer::new(k, 1, 1, 1, w).unwrap();
        let img = Tensor::new(vec![5, 5, 1], vec![0.3; 25]).unwrap();
        let net = Network::new((5, 5, 1), vec![Layer::Conv(conv)], "u", 0).unwrap();
        let data = ToyDataset {
            images: vec![img],
            labels: vec![0],
            num_classes: 2,
            hw: 5,
            seed: 0,
        };
        let mut counts = [0u64; 9];
        let trials = 4500usize;
        for seed in 0..trials {
            let rs = sample_responses(&net, &data, 0, 2, seed as u64).unwrap();
            for p in &rs.provenance {
                counts[p.row * 3 + p.col] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let expect = total as f64 / 9.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        // Critical value of chi-squared with 8 dof at p = 0.001 is 26.12.
        assert!(chi2 < 26.12, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn paired_sampling_identical_networks() {
        let (net, _) = conv_net(3, 1, 4, 12);
        let data = gen_toy_dataset(15, 4, 2, 16).unwrap();
        let pair = sample_response_pairs(&net, &net, &data, 0, 16, 3).unwrap();
        assert_eq!(pair.base.y, pair.y_hat);
    }

    #[test]
    fn paired_sampling_after_identity_replacement() {
        // Two conv layers; replace the first by its exact identity
        // decomposition, then sample pairs at the second.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w1 = Matrix::from_fn(4, 10, |_, _| rng.random_range(-1.0..1.0));
        let w2 = Matrix::from_fn(3, 4 * 9 + 1, |_, _| rng.random_range(-0.5..0.5));
        let net = Network::new(
            (16, 16, 1),
            vec![
                Layer::Conv(ConvLayer::new(3, 1, 4, 1, w1.clone()).unwrap()),
                Layer::Relu,
                Layer::Conv(ConvLayer::new(3, 4, 3, 1, w2).unwrap()),
                Layer::Relu,
            ],
            "two",
            0,
        )
        .unwrap();
        let replaced = net
            .replace_conv(0, &w1, &Matrix::identity(4), &[0.0; 4])
            .unwrap();
        let data = gen_toy_dataset(33, 4, 2, 16).unwrap();
        let pair = sample_response_pairs(&net, &replaced, &data, 2, 24, 5).unwrap();
        for col in 0..24 {
            for f in 0..3 {
                assert!((pair.base.y[(f, col)] - pair.y_hat[(f, col)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn paired_sampling_truncated_upstream_matches_double_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let w1 = Matrix::from_fn(6, 10, |_, _| rng.random_range(-1.0..1.0));
        let w2 = Matrix::from_fn(3, 6 * 9 + 1, |_, _| rng.random_range(-0.5..0.5));
        let conv2 = ConvLayer::new(3, 6, 3, 1, w2).unwrap();
        let net = Network::new(
            (16, 16, 1),
            vec![
                Layer::Conv(ConvLayer::new(3, 1, 6, 1, w1.clone()).unwrap()),
                Layer::Relu,
                Layer::Conv(conv2.clone()),
            ],
            "two",
            0,
        )
        .unwrap();
        // Rank-2 truncation of the first layer (a genuinely lossy one).
        let p = Matrix::from_fn(6, 2, |r, c| if r == c { 1.0 } else { 0.1 * (r + c) as f64 });
        let q = Matrix::from_fn(6, 2, |r, c| if r == c + 1 { 1.0 } else { -0.05 * r as f64 });
        let w_prime = q.transpose().matmul(&w1);
        let replaced = net.replace_conv(0, &w_prime, &p, &[0.0; 6]).unwrap();

        let data = gen_toy_dataset(43, 3, 2, 16).unwrap();
        let pair = sample_response_pairs(&net, &replaced, &data, 2, 12, 9).unwrap();
        let diff = pair.base.y.sub(&pair.y_hat).frob_norm();
        assert!(diff > 1e-3, "truncation should perturb responses");

        // Double-forward oracle: recompute y_hat by recording the
        // approximated network's conv output directly (index 3 there).
        for (col, prov) in pair.base.provenance.iter().enumerate() {
            let (_, rec) = replaced
                .forward_recording(&data.images[prov.image], &[3])
                .unwrap();
            let act = &rec[&3];
            for f in 0..3 {
                assert!((pair.y_hat[(f, col)] - act.at3(prov.row, prov.col, f)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn paired_sampling_rejects_incompatible_networks() {
        let (a, _) = conv_net(3, 1, 4, 51);
        let (b, _) = conv_net(3, 1, 5, 52);
        let data = gen_toy_dataset(53, 3, 2, 16).unwrap();
        assert!(matches!(
            sample_response_pairs(&a, &b, &data, 0, 4, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn response_set_round_trip() {
        let (net, _) = conv_net(3, 1, 4, 61);
        let data = gen_toy_dataset(62, 4, 2, 16).unwrap();
        let rs = sample_responses(&net, &data, 0, 10, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("resp");
        save_response_set(&rs, &base).unwrap();
        let back = load_response_set(&base).unwrap();
        assert_eq!(back.layer_idx, rs.layer_idx);
        assert_eq!(back.seed, rs.seed);
        assert_eq!(back.provenance, rs.provenance);
        for (a, b) in rs.y.data().iter().zip(back.y.data()) {
            assert!((a - b).abs() < 1e-6); // f32 on disk
        }
    }
}

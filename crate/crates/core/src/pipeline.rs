//! Whole-model compression, evaluation and benchmarking.
//!
//! Layers are compressed sequentially from shallow to deep. For each conv
//! layer in the plan, responses are sampled, the configured solver is run,
//! the projector is factorized, and the layer is replaced by its low-rank
//! pair in the working network. In asymmetric mode the solver sees the
//! original network's responses as targets but the working (partially
//! compressed) network's responses as inputs, so upstream approximation
//! error is corrected rather than accumulated; for the first compressed
//! layer the two coincide and the solve is symmetric.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::approx::{
    solve_linear, solve_nonlinear, LowRankResult, SolverConfig, SolverMode,
};
use crate::error::{Error, Result};
use crate::model::{accuracy, io, Layer, Network, ToyDataset};
use crate::numerics::Matrix;
use crate::rank_select::{greedy_select, pca_energy, ComplexityModel, LayerSpectrum, RankPlan};
use crate::sampler::{
    sample_response_pairs_limited, sample_responses_limited, ResponseSet,
};

/// How many samples feed each per-layer solve: `images` images from the
/// seeded shuffle, `positions_per_image` positions each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub images: usize,
    pub positions_per_image: usize,
    pub seed: u64,
}

impl SampleBudget {
    pub fn new(images: usize, positions_per_image: usize, seed: u64) -> Self {
        Self {
            images,
            positions_per_image,
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.images * self.positions_per_image
    }

    /// Per-layer sampling seed, decorrelated across layers.
    fn layer_seed(&self, layer_idx: usize) -> u64 {
        self.seed
            .wrapping_add((layer_idx as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
    }
}

/// Rank assignment source for a compression job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanSpec {
    Plan(RankPlan),
    TargetSpeedup(f64),
}

/// A file-level compression job.
#[derive(Debug, Clone)]
pub struct CompressionJob {
    pub model_path: PathBuf,
    pub dataset_path: PathBuf,
    pub plan: PlanSpec,
    pub solver: SolverConfig,
    pub budget: SampleBudget,
    pub output_path: PathBuf,
}

/// Per-layer evaluation entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEval {
    pub layer_idx: usize,
    pub d: usize,
    pub d_prime: usize,
    /// ||r(Y_orig) - r(Y_comp)||_F / ||r(Y_orig)||_F on fresh samples.
    pub reconstruction_error: f64,
    /// Fraction of exactly-zero post-ReLU responses of the original layer.
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layers: Vec<LayerEval>,
    pub top1_before: f64,
    pub top1_after: f64,
    pub predicted_speedup: f64,
    /// Wall-clock ratio; only present when a benchmark was requested.
    pub measured_speedup: Option<f64>,
    /// Energy objective of the plan that produced the network, if known.
    pub energy_objective: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table for stdout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("layer    d    d'   recon_err   sparsity\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{:<6} {:>4} {:>4}   {:>9.6}   {:>8.4}\n",
                l.layer_idx, l.d, l.d_prime, l.reconstruction_error, l.sparsity
            ));
        }
        out.push_str(&format!(
            "top-1 before: {:.4}  after: {:.4}  (delta {:+.4})\n",
            self.top1_before,
            self.top1_after,
            self.top1_after - self.top1_before
        ));
        out.push_str(&format!("predicted speedup: {:.3}x\n", self.predicted_speedup));
        if let Some(m) = self.measured_speedup {
            out.push_str(&format!("measured speedup:  {m:.3}x\n"));
        }
        if let Some(e) = self.energy_objective {
            out.push_str(&format!("energy objective:  {e:.6e}\n"));
        }
        out
    }
}

/// Diagnostics of one layer's solve.
#[derive(Debug, Clone)]
pub struct LayerSolve {
    pub layer_idx: usize,
    pub d: usize,
    pub d_prime: usize,
    pub result: LowRankResult,
}

/// Compress `orig` according to `plan`, layer by layer in network order.
/// Returns the compressed network and the per-layer solver outputs.
pub fn compress_network(
    orig: &Network,
    data: &ToyDataset,
    plan: &RankPlan,
    config: &SolverConfig,
    budget: &SampleBudget,
) -> Result<(Network, Vec<LayerSolve>)> {
    let conv_indices = orig.conv_indices();
    for &idx in plan.ranks.keys() {
        if !conv_indices.contains(&idx) {
            return Err(Error::Validation(format!(
                "plan assigns a rank to layer {idx}, which is not a conv layer"
            )));
        }
    }

    let mut working = orig.clone();
    let mut inserted = 0usize;
    let mut solves = Vec::new();
    for &layer_idx in &conv_indices {
        let Some(&d_prime) = plan.ranks.get(&layer_idx) else {
            continue; // layer left untouched
        };
        let conv = orig.layers[layer_idx].as_conv().expect("conv index");
        if d_prime > conv.d || d_prime == 0 {
            return Err(Error::Validation(format!(
                "plan rank {d_prime} for layer {layer_idx} outside [1, {}]",
                conv.d
            ))
            .at_layer(layer_idx));
        }
        let n = budget.total();
        let seed = budget.layer_seed(layer_idx);

        let result = match config.mode {
            SolverMode::Linear => {
                let rs = sample_responses_limited(
                    orig,
                    data,
                    layer_idx,
                    n,
                    seed,
                    Some(budget.images),
                )
                .map_err(|e| e.at_layer(layer_idx))?;
                solve_linear(&rs, d_prime).map_err(|e| e.at_layer(layer_idx))?
            }
            SolverMode::NonlinearSymmetric => {
                let rs = sample_responses_limited(
                    orig,
                    data,
                    layer_idx,
                    n,
                    seed,
                    Some(budget.images),
                )
                .map_err(|e| e.at_layer(layer_idx))?;
                solve_nonlinear(&rs.y, &rs.y, d_prime, config)
                    .map_err(|e| e.at_layer(layer_idx))?
            }
            SolverMode::NonlinearAsymmetric => {
                // Targets from the original network, inputs from the working
                // one; identical at the first compressed layer.
                let pair = sample_response_pairs_limited(
                    orig,
                    &working,
                    data,
                    layer_idx,
                    n,
                    seed,
                    Some(budget.images),
                )
                .map_err(|e| e.at_layer(layer_idx))?;
                solve_nonlinear(&pair.base.y, &pair.y_hat, d_prime, config)
                    .map_err(|e| e.at_layer(layer_idx))?
            }
        };

        let w_prime = result.q.transpose().matmul(&conv.weights);
        working = working
            .replace_conv(layer_idx + inserted, &w_prime, &result.p, &result.b)
            .map_err(|e| e.at_layer(layer_idx))?;
        inserted += 1;

        solves.push(LayerSolve {
            layer_idx,
            d: conv.d,
            d_prime,
            result,
        });
    }
    Ok((working, solves))
}

/// Pair each conv layer of `orig` with the layer in `compressed` whose
/// output corresponds to it: either the same conv (untouched) or the 1x1
/// restore conv of a replacement pair. Returns (orig_idx, comp_idx, d, d').
fn align_conv_layers(
    orig: &Network,
    compressed: &Network,
) -> Result<Vec<(usize, usize, usize, usize)>> {
    let mut map = Vec::new();
    let mut j = 0usize;
    for (i, layer) in orig.layers.iter().enumerate() {
        let comp = compressed.layers.get(j).ok_or_else(|| {
            Error::Validation("networks do not align: compressed network too short".into())
        })?;
        match layer {
            Layer::Conv(conv) => {
                let candidate = comp.as_conv().ok_or_else(|| {
                    Error::Validation(format!(
                        "networks do not align at layer {i}: expected conv, found {}",
                        comp.kind()
                    ))
                })?;
                if candidate.k != conv.k || candidate.c != conv.c || candidate.d > conv.d {
                    return Err(Error::Validation(format!(
                        "networks do not align at layer {i}: conv shapes disagree"
                    )));
                }
                // Replacement pair: d'-filter conv followed by a 1x1 restore
                // conv. A full-rank replacement (d' = d) is disambiguated
                // from an untouched conv by whether the following layers
                // still match the original.
                let restore_follows = compressed
                    .layers
                    .get(j + 1)
                    .and_then(Layer::as_conv)
                    .map(|r| r.k == 1 && r.c == candidate.d && r.d == conv.d)
                    .unwrap_or(false);
                let untouched = candidate.d == conv.d
                    && (!restore_follows
                        || orig.layers.get(i + 1) == compressed.layers.get(j + 1));
                if untouched {
                    map.push((i, j, conv.d, conv.d));
                    j += 1;
                } else if restore_follows {
                    map.push((i, j + 1, conv.d, candidate.d));
                    j += 2;
                } else {
                    return Err(Error::Validation(format!(
                        "networks do not align at layer {i}: no 1x1 restore conv"
                    )));
                }
            }
            other => {
                if comp != other {
                    return Err(Error::Validation(format!(
                        "networks do not align at layer {i}: {} vs {}",
                        other.kind(),
                        comp.kind()
                    )));
                }
                j += 1;
            }
        }
    }
    if j != compressed.layers.len() {
        return Err(Error::Validation(
            "networks do not align: compressed network has trailing layers".into(),
        ));
    }
    Ok(map)
}

/// Evaluate a compressed network against its original: top-1 accuracy on
/// the dataset, per-layer response reconstruction errors and sparsity on
/// freshly sampled positions.
pub fn evaluate(
    orig: &Network,
    compressed: &Network,
    data: &ToyDataset,
    budget: &SampleBudget,
) -> Result<EvalReport> {
    if orig.input_shape != compressed.input_shape {
        return Err(Error::Validation(
            "evaluate: networks have different input shapes".into(),
        ));
    }
    let alignment = align_conv_layers(orig, compressed)?;
    let top1_before = accuracy(orig, data)?;
    let top1_after = accuracy(compressed, data)?;

    let mut layers = Vec::with_capacity(alignment.len());
    for &(orig_idx, comp_idx, d, d_prime) in &alignment {
        let n = budget.total();
        let seed = budget.layer_seed(orig_idx);
        let rs = sample_responses_limited(orig, data, orig_idx, n, seed, Some(budget.images))?;
        let comp_y = resample_at(compressed, data, comp_idx, &rs)?;

        let mut num = 0.0;
        let mut den = 0.0;
        let mut zeros = 0usize;
        for i in 0..d {
            for j in 0..rs.y.cols() {
                let a = rs.y[(i, j)].max(0.0);
                let b = comp_y[(i, j)].max(0.0);
                num += (a - b) * (a - b);
                den += a * a;
                if rs.y[(i, j)] <= 0.0 {
                    zeros += 1;
                }
            }
        }
        let reconstruction_error = if den > 0.0 {
            (num / den).sqrt()
        } else if num > 0.0 {
            f64::MAX
        } else {
            0.0
        };
        layers.push(LayerEval {
            layer_idx: orig_idx,
            d,
            d_prime,
            reconstruction_error,
            sparsity: zeros as f64 / (d * rs.y.cols()) as f64,
        });
    }

    let predicted_speedup =
        conv_multiply_count(orig)? as f64 / conv_multiply_count(compressed)?.max(1) as f64;
    Ok(EvalReport {
        layers,
        top1_before,
        top1_after,
        predicted_speedup,
        measured_speedup: None,
        energy_objective: None,
    })
}

/// Responses of `net`'s layer `layer_idx` at the positions of `rs`.
fn resample_at(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    rs: &ResponseSet,
) -> Result<Matrix> {
    let d = net.layers[layer_idx]
        .as_conv()
        .map(|c| c.d)
        .ok_or_else(|| Error::Validation(format!("layer {layer_idx} is not a conv layer")))?;
    let mut y = Matrix::zeros(d, rs.provenance.len());
    let mut by_image: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (col, p) in rs.provenance.iter().enumerate() {
        by_image.entry(p.image).or_default().push(col);
    }
    for (&img, cols) in &by_image {
        let (_, rec) = net.forward_recording(&data.images[img], &[layer_idx])?;
        let act = &rec[&layer_idx];
        for &col in cols {
            let p = rs.provenance[col];
            for f in 0..d {
                y[(f, col)] = act.at3(p.row, p.col, f);
            }
        }
    }
    Ok(y)
}

/// Fraction of exactly-zero post-ReLU activations of the conv layer at
/// `layer_idx` over the first `samples` dataset images. The layer must be
/// followed by a ReLU.
pub fn measure_sparsity(
    net: &Network,
    data: &ToyDataset,
    layer_idx: usize,
    samples: usize,
) -> Result<f64> {
    if net.layers.get(layer_idx).and_then(Layer::as_conv).is_none() {
        return Err(Error::Validation(format!(
            "layer {layer_idx} is not a conv layer"
        )));
    }
    if !matches!(net.layers.get(layer_idx + 1), Some(Layer::Relu)) {
        return Err(Error::Validation(format!(
            "layer {layer_idx} is not followed by a relu"
        )));
    }
    if samples == 0 || data.is_empty() {
        return Err(Error::Validation("sparsity needs at least one image".into()));
    }
    let mut zeros = 0usize;
    let mut total = 0usize;
    for img in data.images.iter().take(samples) {
        let (_, rec) = net.forward_recording(img, &[layer_idx + 1])?;
        let act = &rec[&(layer_idx + 1)];
        zeros += act.data().iter().filter(|&&v| v == 0.0).count();
        total += act.len();
    }
    Ok(zeros as f64 / total as f64)
}

/// Total conv multiplies of one forward pass (the count the predicted
/// speedups are exact against).
pub fn conv_multiply_count(net: &Network) -> Result<u64> {
    let shapes = net.shape_walk()?;
    let mut total = 0u64;
    for (idx, layer) in net.layers.iter().enumerate() {
        if let Some(conv) = layer.as_conv() {
            let crate::model::ShapeState::Spatial(h, w, _) = shapes[idx] else {
                return Err(Error::Shape(format!("conv layer {idx} has no spatial output")));
            };
            total += (conv.d * conv.k * conv.k * conv.c * h * w) as u64;
        }
    }
    Ok(total)
}

/// Wall-clock stats of repeated forward passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub reps_secs: Vec<f64>,
    pub median_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

/// Median wall-clock of a forward pass over (up to) the first 4 images,
/// repeated `repetitions` times after one warm-up. Single-threaded.
pub fn benchmark(net: &Network, data: &ToyDataset, repetitions: usize) -> Result<BenchResult> {
    if repetitions < 3 {
        return Err(Error::Validation(format!(
            "benchmark needs at least 3 repetitions, got {repetitions}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Validation("benchmark needs a nonempty dataset".into()));
    }
    let images: Vec<_> = data.images.iter().take(4).collect();
    for img in &images {
        net.forward(img)?; // warm-up, also surfaces shape errors
    }
    let mut reps = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for img in &images {
            net.forward(img)?;
        }
        reps.push(start.elapsed().as_secs_f64() / images.len() as f64);
    }
    let mut sorted = reps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BenchResult {
        median_secs: sorted[sorted.len() / 2],
        min_secs: sorted[0],
        max_secs: *sorted.last().unwrap(),
        reps_secs: reps,
    })
}

/// Run a file-level job: load, plan if needed, compress, save, evaluate.
/// Evaluation samples use a seed disjoint from the solver samples.
pub fn run_job(job: &CompressionJob) -> Result<(Network, EvalReport)> {
    let orig = io::load_network(&job.model_path)?;
    let data = io::load_dataset(&job.dataset_path)?;
    let plan = match &job.plan {
        PlanSpec::Plan(p) => p.clone(),
        PlanSpec::TargetSpeedup(target) => plan_from_network(&orig, &data, *target, &job.budget)?,
    };
    let (compressed, _solves) = compress_network(&orig, &data, &plan, &job.solver, &job.budget)?;
    io::save_network(&compressed, &job.output_path)?;
    let eval_budget = SampleBudget {
        seed: job.budget.seed ^ 0x5EED_5EED_5EED_5EED,
        ..job.budget
    };
    let mut report = evaluate(&orig, &compressed, &data, &eval_budget)?;
    report.energy_objective = Some(plan.energy_objective);
    Ok((compressed, report))
}

/// Sample spectra for every conv layer and run greedy selection.
pub fn plan_from_network(
    net: &Network,
    data: &ToyDataset,
    target_speedup: f64,
    budget: &SampleBudget,
) -> Result<RankPlan> {
    let spectra = spectra_from_network(net, data, budget)?;
    let complexity = ComplexityModel::from_network(net)?;
    greedy_select(&spectra, &complexity, target_speedup, &BTreeMap::new())
}

/// PCA spectrum of every conv layer under the sample budget.
pub fn spectra_from_network(
    net: &Network,
    data: &ToyDataset,
    budget: &SampleBudget,
) -> Result<Vec<LayerSpectrum>> {
    let mut spectra = Vec::new();
    for layer_idx in net.conv_indices() {
        let rs = sample_responses_limited(
            net,
            data,
            layer_idx,
            budget.total(),
            budget.layer_seed(layer_idx),
            Some(budget.images),
        )?;
        spectra.push(pca_energy(&rs)?);
    }
    Ok(spectra)
}

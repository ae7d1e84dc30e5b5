//! Whole-model rank allocation.
//!
//! Each layer's PCA energy spectrum says how much response variance the
//! leading eigenvectors keep. Under a total complexity budget, ranks are
//! assigned greedily: starting from full rank, repeatedly drop the
//! eigenvalue whose relative energy loss per unit of complexity saved is
//! smallest, until the budget holds. The objective being maximized is the
//! product over layers of kept-energy sums.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Network, ShapeState};
use crate::numerics::sym_eig;
use crate::sampler::ResponseSet;

/// Descending, nonnegative eigenvalues of one layer's response covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer_idx: usize,
    pub eigenvalues: Vec<f64>,
}

/// Cost parameters of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_idx: usize,
    pub d: usize,
    pub k: usize,
    pub c: usize,
    pub out_positions: usize,
}

impl LayerCost {
    /// Original multiply count: d * k^2 * c * positions.
    pub fn original(&self) -> f64 {
        (self.d * self.k * self.k * self.c * self.out_positions) as f64
    }

    /// Multiply count at rank `d_prime`. A layer kept at full rank is left
    /// undecomposed, so it costs the original amount; below full rank the
    /// restore-layer term d * d' is added when enabled.
    pub fn at_rank(&self, d_prime: usize, include_restore_term: bool) -> f64 {
        assert!(d_prime >= 1 && d_prime <= self.d);
        if d_prime == self.d && include_restore_term {
            return self.original();
        }
        let per_position = d_prime * self.k * self.k * self.c
            + if include_restore_term { self.d * d_prime } else { 0 };
        (per_position * self.out_positions) as f64
    }
}

/// Multiply-count model over the conv layers of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityModel {
    pub layers: Vec<LayerCost>,
    pub include_restore_term: bool,
}

impl ComplexityModel {
    pub fn new(layers: Vec<LayerCost>) -> Self {
        Self {
            layers,
            include_restore_term: true,
        }
    }

    pub fn without_restore_term(mut self) -> Self {
        self.include_restore_term = false;
        self
    }

    /// Extract one entry per conv layer from a network.
    pub fn from_network(net: &Network) -> Result<Self> {
        let shapes = net.shape_walk()?;
        let mut layers = Vec::new();
        for (idx, layer) in net.layers.iter().enumerate() {
            if let Some(conv) = layer.as_conv() {
                let ShapeState::Spatial(h, w, _) = shapes[idx] else {
                    return Err(Error::Shape(format!("conv layer {idx} has no spatial output")));
                };
                layers.push(LayerCost {
                    layer_idx: idx,
                    d: conv.d,
                    k: conv.k,
                    c: conv.c,
                    out_positions: h * w,
                });
            }
        }
        Ok(Self::new(layers))
    }

    pub fn cost_of(&self, layer_idx: usize) -> Option<&LayerCost> {
        self.layers.iter().find(|l| l.layer_idx == layer_idx)
    }

    pub fn total_original(&self) -> f64 {
        self.layers.iter().map(LayerCost::original).sum()
    }

    /// Total cost with the plan's ranks applied; layers without an assigned
    /// rank stay at original cost.
    pub fn total_with_ranks(&self, ranks: &BTreeMap<usize, usize>) -> f64 {
        self.layers
            .iter()
            .map(|l| match ranks.get(&l.layer_idx) {
                Some(&r) => l.at_rank(r, self.include_restore_term),
                None => l.original(),
            })
            .sum()
    }
}

/// A per-layer rank assignment with its predicted effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPlan {
    pub ranks: BTreeMap<usize, usize>,
    pub fixed: BTreeSet<usize>,
    pub predicted_speedup: f64,
    pub energy_objective: f64,
}

impl RankPlan {
    /// The lossless plan: every spectrum layer kept at full rank.
    pub fn identity(spectra: &[LayerSpectrum]) -> Self {
        let ranks = spectra
            .iter()
            .map(|s| (s.layer_idx, s.eigenvalues.len()))
            .collect();
        Self {
            ranks,
            fixed: BTreeSet::new(),
            predicted_speedup: 1.0,
            energy_objective: energy_product(spectra, &mut |_| usize::MAX),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Eigenvalues of the centered response covariance `Y_c Y_c^T / n`, clamped
/// at zero and sorted descending.
pub fn pca_energy(responses: &ResponseSet) -> Result<LayerSpectrum> {
    let n = responses.y.cols();
    if n < 2 {
        return Err(Error::Validation(format!(
            "pca_energy needs at least 2 samples, got {n}"
        )));
    }
    let centered = responses.y.center_rows(&responses.mean);
    let cov = centered.matmul_bt(&centered).scale(1.0 / n as f64);
    let eig = sym_eig(&cov)?;
    Ok(LayerSpectrum {
        layer_idx: responses.layer_idx,
        eigenvalues: eig.eigenvalues.iter().map(|l| l.max(0.0)).collect(),
    })
}

fn energy_product(spectra: &[LayerSpectrum], rank_of: &mut dyn FnMut(usize) -> usize) -> f64 {
    spectra
        .iter()
        .map(|s| {
            let r = rank_of(s.layer_idx).min(s.eigenvalues.len());
            s.eigenvalues[..r].iter().sum::<f64>()
        })
        .product()
}

/// Greedy rank selection under `target_speedup`. `pinned` layers keep their
/// given rank and are excluded from the greedy loop.
///
/// The budget constraint is the linear form `sum (d'_l / d_l) C_l <= C`;
/// the reported `predicted_speedup` additionally counts the restore-layer
/// term, so it typically lands a little under the requested target, the
/// same way the labeled whole-model ratios relate to their rank rows.
pub fn greedy_select(
    spectra: &[LayerSpectrum],
    complexity: &ComplexityModel,
    target_speedup: f64,
    pinned: &BTreeMap<usize, usize>,
) -> Result<RankPlan> {
    if !target_speedup.is_finite() || target_speedup < 1.0 {
        return Err(Error::Validation(format!(
            "target speedup {target_speedup} must be >= 1"
        )));
    }
    let budget = complexity.total_original() / target_speedup;
    greedy_select_with_budget(spectra, complexity, budget, pinned)
}

/// Budget-constraint cost of one layer: `(d'_l / d_l) C_l`.
fn linear_cost(cost: &LayerCost, rank: usize) -> f64 {
    rank as f64 / cost.d as f64 * cost.original()
}

fn linear_total(complexity: &ComplexityModel, ranks: &BTreeMap<usize, usize>) -> f64 {
    complexity
        .layers
        .iter()
        .map(|l| match ranks.get(&l.layer_idx) {
            Some(&r) => linear_cost(l, r),
            None => l.original(),
        })
        .sum()
}

/// Greedy rank selection against an explicit budget on the linear cost
/// `sum (d'_l / d_l) C_l` (layers without a spectrum count at full C_l).
pub fn greedy_select_with_budget(
    spectra: &[LayerSpectrum],
    complexity: &ComplexityModel,
    budget: f64,
    pinned: &BTreeMap<usize, usize>,
) -> Result<RankPlan> {
    validate_inputs(spectra, complexity, pinned)?;

    let mut ranks: BTreeMap<usize, usize> = spectra
        .iter()
        .map(|s| {
            let full = s.eigenvalues.len();
            let r = pinned.get(&s.layer_idx).copied().unwrap_or(full);
            (s.layer_idx, r)
        })
        .collect();
    // Kept-energy sums, updated incrementally as eigenvalues are dropped.
    let mut kept: BTreeMap<usize, f64> = spectra
        .iter()
        .map(|s| {
            let r = ranks[&s.layer_idx];
            (s.layer_idx, s.eigenvalues[..r].iter().sum::<f64>())
        })
        .collect();
    let spectrum_of: BTreeMap<usize, &LayerSpectrum> =
        spectra.iter().map(|s| (s.layer_idx, s)).collect();

    let mut total = linear_total(complexity, &ranks);
    while total > budget {
        // Candidate = unpinned layer above rank 1; measure = relative energy
        // loss of the trailing eigenvalue over the complexity saved per rank,
        // which under the linear constraint is exactly delta_c = C_l / d_l.
        let mut best: Option<(f64, f64, usize)> = None; // (measure, delta_c, layer)
        for s in spectra {
            let l = s.layer_idx;
            if pinned.contains_key(&l) || ranks[&l] <= 1 {
                continue;
            }
            let cost = complexity.cost_of(l).expect("validated above");
            let delta_c = cost.original() / cost.d as f64;
            let energy = kept[&l];
            let sigma = s.eigenvalues[ranks[&l] - 1];
            let measure = if energy > 0.0 { sigma / energy / delta_c } else { 0.0 };
            let replace = match best {
                None => true,
                Some((m, dc, bl)) => {
                    measure < m || (measure == m && (delta_c > dc || (delta_c == dc && l < bl)))
                }
            };
            if replace {
                best = Some((measure, delta_c, l));
            }
        }
        let Some((_, delta_c, layer)) = best else {
            return Err(Error::Infeasible(format!(
                "budget {budget:.3e} unreachable: all layers at rank 1 or pinned \
                 (cost now {total:.3e})"
            )));
        };
        let r = ranks.get_mut(&layer).unwrap();
        *kept.get_mut(&layer).unwrap() -= spectrum_of[&layer].eigenvalues[*r - 1];
        *r -= 1;
        total -= delta_c;
    }

    // Removal steps are coarse, so the loop usually lands below the budget
    // with slack to spare. Reclaim it: greedily restore the eigenvalue with
    // the largest relative energy gain per unit cost that still fits.
    loop {
        let mut best: Option<(f64, f64, usize)> = None;
        for s in spectra {
            let l = s.layer_idx;
            let r = ranks[&l];
            if pinned.contains_key(&l) || r >= s.eigenvalues.len() {
                continue;
            }
            let cost = complexity.cost_of(l).expect("validated above");
            let delta_c = cost.original() / cost.d as f64;
            if total + delta_c > budget {
                continue;
            }
            let sigma = s.eigenvalues[r];
            let gained = kept[&l] + sigma;
            let measure = if gained > 0.0 { sigma / gained / delta_c } else { 0.0 };
            let replace = match best {
                None => true,
                Some((m, dc, bl)) => {
                    measure > m || (measure == m && (delta_c < dc || (delta_c == dc && l < bl)))
                }
            };
            if replace {
                best = Some((measure, delta_c, l));
            }
        }
        let Some((_, delta_c, layer)) = best else { break };
        let r = ranks.get_mut(&layer).unwrap();
        *kept.get_mut(&layer).unwrap() += spectrum_of[&layer].eigenvalues[*r];
        *r += 1;
        total += delta_c;
    }

    let energy_objective = kept.values().product();
    let full_cost = complexity.total_with_ranks(&ranks);
    let plan = RankPlan {
        predicted_speedup: complexity.total_original() / full_cost.max(f64::MIN_POSITIVE),
        ranks,
        fixed: pinned.keys().copied().collect(),
        energy_objective,
    };
    Ok(plan)
}

/// Baseline without rank selection: each unpinned layer gets the largest
/// rank whose own cost meets the per-layer speedup target.
pub fn uniform_ratio_plan(
    spectra: &[LayerSpectrum],
    complexity: &ComplexityModel,
    target_speedup: f64,
    pinned: &BTreeMap<usize, usize>,
) -> Result<RankPlan> {
    if !target_speedup.is_finite() || target_speedup < 1.0 {
        return Err(Error::Validation(format!(
            "target speedup {target_speedup} must be >= 1"
        )));
    }
    validate_inputs(spectra, complexity, pinned)?;
    let mut ranks = BTreeMap::new();
    for s in spectra {
        let l = s.layer_idx;
        let cost = complexity.cost_of(l).expect("validated above");
        let r = match pinned.get(&l) {
            Some(&r) => r,
            None => {
                let layer_budget = cost.original() / target_speedup;
                let mut r = 1;
                for cand in (1..=cost.d).rev() {
                    if cost.at_rank(cand, complexity.include_restore_term) <= layer_budget {
                        r = cand;
                        break;
                    }
                }
                r
            }
        };
        ranks.insert(l, r);
    }
    let total = complexity.total_with_ranks(&ranks);
    let energy_objective = energy_product(spectra, &mut |l| ranks[&l]);
    Ok(RankPlan {
        predicted_speedup: complexity.total_original() / total.max(f64::MIN_POSITIVE),
        ranks,
        fixed: pinned.keys().copied().collect(),
        energy_objective,
    })
}

/// Whole-model speedup of a plan: original multiply count over the plan's,
/// with unplanned layers at original cost.
pub fn predicted_speedup(plan: &RankPlan, complexity: &ComplexityModel) -> f64 {
    let total = complexity.total_with_ranks(&plan.ranks);
    complexity.total_original() / total.max(f64::MIN_POSITIVE)
}

fn validate_inputs(
    spectra: &[LayerSpectrum],
    complexity: &ComplexityModel,
    pinned: &BTreeMap<usize, usize>,
) -> Result<()> {
    if spectra.is_empty() {
        return Err(Error::Validation("no spectra given".into()));
    }
    for s in spectra {
        let cost = complexity.cost_of(s.layer_idx).ok_or_else(|| {
            Error::Validation(format!(
                "layer {} has a spectrum but no complexity entry",
                s.layer_idx
            ))
        })?;
        if s.eigenvalues.len() != cost.d {
            return Err(Error::Validation(format!(
                "layer {}: spectrum length {} does not match d = {}",
                s.layer_idx,
                s.eigenvalues.len(),
                cost.d
            )));
        }
        if s.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Validation(format!(
                "layer {}: spectrum is not sorted descending",
                s.layer_idx
            )));
        }
    }
    for (&l, &r) in pinned {
        let cost = complexity
            .cost_of(l)
            .ok_or_else(|| Error::Validation(format!("pinned layer {l} unknown")))?;
        if spectra.iter().all(|s| s.layer_idx != l) {
            return Err(Error::Validation(format!(
                "pinned layer {l} has no spectrum"
            )));
        }
        if r == 0 || r > cost.d {
            return Err(Error::Validation(format!(
                "pinned rank {r} for layer {l} outside [1, {}]",
                cost.d
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Provenance;
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn response_set(y: Matrix) -> ResponseSet {
        let mean = y.row_means();
        let provenance = (0..y.cols())
            .map(|j| Provenance { image: j, row: 0, col: 0 })
            .collect();
        ResponseSet { layer_idx: 0, mean, provenance, seed: 0, y }
    }

    fn flat_spectrum(layer_idx: usize, d: usize) -> LayerSpectrum {
        LayerSpectrum { layer_idx, eigenvalues: vec![1.0; d] }
    }

    // -- pca_energy --

    #[test]
    fn low_rank_responses_have_zero_tail() {
        let basis = Matrix::from_fn(5, 2, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coeff = Matrix::from_fn(2, 40, |_, _| rng.random_range(-1.0..1.0));
        let y = basis.matmul(&coeff);
        let spec = pca_energy(&response_set(y)).unwrap();
        for &l in &spec.eigenvalues[2..] {
            assert!(l <= 1e-10);
        }
    }

    #[test]
    fn isotropic_samples_have_flat_spectrum() {
        let d = 6;
        let n = 50 * d;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Sum of uniforms approximates a Gaussian well enough here.
        let y = Matrix::from_fn(d, n, |_, _| {
            (0..12).map(|_| rng.random_range(-0.5..0.5)).sum::<f64>()
        });
        let spec = pca_energy(&response_set(y)).unwrap();
        let max = spec.eigenvalues[0];
        let min = *spec.eigenvalues.last().unwrap();
        assert!(max / min < 1.5, "spread {max}/{min}");
    }

    #[test]
    fn cumulative_energy_reaches_full_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Matrix::from_fn(4, 30, |_, _| rng.random_range(-1.0..1.0));
        let rs = response_set(y);
        let spec = pca_energy(&rs).unwrap();
        let centered = rs.y.center_rows(&rs.mean);
        let trace = centered.matmul_bt(&centered).scale(1.0 / rs.y.cols() as f64).trace();
        let sum: f64 = spec.eigenvalues.iter().sum();
        assert!((sum - trace).abs() < 1e-10 * trace.max(1.0));
    }

    #[test]
    fn single_sample_is_rejected() {
        let y = Matrix::from_fn(3, 1, |i, _| i as f64);
        assert!(matches!(
            pca_energy(&response_set(y)),
            Err(Error::Validation(_))
        ));
    }

    // -- greedy_select --

    fn two_layer_model() -> ComplexityModel {
        ComplexityModel::new(vec![
            LayerCost { layer_idx: 0, d: 4, k: 3, c: 8, out_positions: 100 },
            LayerCost { layer_idx: 2, d: 4, k: 3, c: 8, out_positions: 100 },
        ])
    }

    #[test]
    fn loose_budget_keeps_identity_plan() {
        let spectra = vec![flat_spectrum(0, 4), flat_spectrum(2, 4)];
        let model = two_layer_model();
        let plan = greedy_select(&spectra, &model, 1.0, &BTreeMap::new()).unwrap();
        assert!(plan.ranks.values().all(|&r| r == 4));
        assert!((plan.predicted_speedup - 1.0).abs() < 1e-12);
        assert!((plan.energy_objective - 16.0).abs() < 1e-12);
    }

    #[test]
    fn spiked_layer_loses_its_tail_first() {
        // Layer 0: one dominant eigenvalue; layer 2: flat. Hand trace at
        // 1.5x: each layer originally costs 28800, so the linear budget is
        // 57600 / 1.5 = 38400 and each removal saves 28800 / 4 = 7200. The
        // spiked tail has near-zero relative energy loss, so the greedy
        // drops layer 0 three times: 57600 - 3 * 7200 = 36000 <= 38400,
        // and the flat layer is never touched (a restore would re-add 7200
        // and overshoot).
        let spectra = vec![
            LayerSpectrum { layer_idx: 0, eigenvalues: vec![100.0, 1e-9, 1e-9, 1e-9] },
            flat_spectrum(2, 4),
        ];
        let model = two_layer_model();
        let plan = greedy_select(&spectra, &model, 1.5, &BTreeMap::new()).unwrap();
        assert_eq!(plan.ranks[&2], 4, "flat layer untouched: {:?}", plan.ranks);
        assert_eq!(plan.ranks[&0], 1);
        assert!(linear_budget_holds(&plan, &model, 1.5));
    }

    /// The budget constraint in its stated linear form.
    fn linear_budget_holds(plan: &RankPlan, model: &ComplexityModel, target: f64) -> bool {
        let linear: f64 = model
            .layers
            .iter()
            .map(|l| match plan.ranks.get(&l.layer_idx) {
                Some(&r) => r as f64 / l.d as f64 * l.original(),
                None => l.original(),
            })
            .sum();
        linear <= model.total_original() / target + 1e-9
    }

    #[test]
    fn budget_constraint_always_satisfied() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let layers = 2 + (trial % 3);
            let mut costs = Vec::new();
            let mut spectra = Vec::new();
            for l in 0..layers {
                let d = rng.random_range(3..10usize);
                costs.push(LayerCost {
                    layer_idx: l,
                    d,
                    k: rng.random_range(1..4usize),
                    c: rng.random_range(1..16usize),
                    out_positions: rng.random_range(10..200usize),
                });
                let mut eig: Vec<f64> =
                    (0..d).map(|_| rng.random_range(0.0..10.0)).collect();
                eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
                spectra.push(LayerSpectrum { layer_idx: l, eigenvalues: eig });
            }
            let model = ComplexityModel::new(costs);
            let target = rng.random_range(1.2..3.0);
            match greedy_select(&spectra, &model, target, &BTreeMap::new()) {
                Ok(plan) => assert!(
                    linear_budget_holds(&plan, &model, target),
                    "trial {trial}: budget violated"
                ),
                Err(Error::Infeasible(_)) => {} // legal outcome for harsh targets
                Err(e) => panic!("trial {trial}: {e}"),
            }
        }
    }

    #[test]
    fn infeasible_budget_is_detected() {
        let spectra = vec![flat_spectrum(0, 4)];
        let model = ComplexityModel::new(vec![LayerCost {
            layer_idx: 0, d: 4, k: 3, c: 8, out_positions: 100,
        }]);
        // Even rank 1 costs (72 + 4) * 100 = 7600 > 28800 / 100.
        assert!(matches!(
            greedy_select(&spectra, &model, 100.0, &BTreeMap::new()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn pinned_layers_are_never_reduced() {
        let spectra = vec![flat_spectrum(0, 4), flat_spectrum(2, 4)];
        let model = two_layer_model();
        let pinned: BTreeMap<usize, usize> = [(0, 3)].into();
        let plan = greedy_select(&spectra, &model, 1.5, &pinned).unwrap();
        assert_eq!(plan.ranks[&0], 3);
        assert!(plan.fixed.contains(&0));
    }

    #[test]
    fn greedy_dominates_uniform_baseline() {
        // Both planners get the same budget C = original / target, the
        // comparison protocol of whole-model acceleration with vs without
        // rank selection.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let layers = 2 + (trial % 4);
            let mut costs = Vec::new();
            let mut spectra = Vec::new();
            for l in 0..layers {
                let d = rng.random_range(4..12usize);
                costs.push(LayerCost {
                    layer_idx: l,
                    d,
                    k: 3,
                    c: rng.random_range(4..32usize),
                    out_positions: rng.random_range(20..300usize),
                });
                // Decaying spectrum with random sharpness.
                let decay: f64 = rng.random_range(0.3..0.95);
                let eig: Vec<f64> = (0..d).map(|i| decay.powi(i as i32)).collect();
                spectra.push(LayerSpectrum { layer_idx: l, eigenvalues: eig });
            }
            let model = ComplexityModel::new(costs);
            let target = rng.random_range(1.3..2.5);
            let uniform =
                uniform_ratio_plan(&spectra, &model, target, &BTreeMap::new()).unwrap();
            let greedy = greedy_select(&spectra, &model, target, &BTreeMap::new()).unwrap();
            assert!(
                greedy.energy_objective >= uniform.energy_objective - 1e-12,
                "trial {trial}: greedy {} < uniform {}",
                greedy.energy_objective,
                uniform.energy_objective
            );
        }
    }

    // -- predicted_speedup --

    #[test]
    fn full_rank_without_restore_term_is_exactly_one() {
        let spectra = vec![flat_spectrum(0, 4)];
        let model = ComplexityModel::new(vec![LayerCost {
            layer_idx: 0, d: 4, k: 3, c: 8, out_positions: 100,
        }])
        .without_restore_term();
        let plan = RankPlan::identity(&spectra);
        assert_eq!(predicted_speedup(&plan, &model), 1.0);
    }

    #[test]
    fn conv2_shape_single_layer_speedup() {
        // d = 256, k = 5, c = 96, d' = 110 -> 2.10x.
        let model = ComplexityModel::new(vec![LayerCost {
            layer_idx: 0, d: 256, k: 5, c: 96, out_positions: 1,
        }]);
        let plan = RankPlan {
            ranks: [(0, 110)].into(),
            fixed: BTreeSet::new(),
            predicted_speedup: 0.0,
            energy_objective: 0.0,
        };
        let s = predicted_speedup(&plan, &model);
        assert!((s - 2.10).abs() <= 0.01, "speedup {s}");
    }

    #[test]
    fn speedup_monotone_in_rank_reduction() {
        let model = two_layer_model();
        let spectra = vec![flat_spectrum(0, 4), flat_spectrum(2, 4)];
        let mut plan = RankPlan::identity(&spectra);
        let mut last = predicted_speedup(&plan, &model);
        for r in (1..4).rev() {
            plan.ranks.insert(0, r);
            let s = predicted_speedup(&plan, &model);
            assert!(s >= last - 1e-12, "rank {r}: {s} < {last}");
            last = s;
        }
    }

    #[test]
    fn plan_round_trip() {
        let spectra = vec![flat_spectrum(0, 4), flat_spectrum(2, 4)];
        let model = two_layer_model();
        let plan = greedy_select(&spectra, &model, 1.5, &BTreeMap::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        assert_eq!(RankPlan::load(&path).unwrap(), plan);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Tensor;

/// Procedurally generated image-classification dataset.
///
/// Images are single-channel `hw x hw x 1` tensors in [0, 1]; labels are
/// assigned round-robin so class counts are balanced. Regeneration from the
/// same arguments is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub hw: usize,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

const BG: f64 = 0.15;
const FG: f64 = 0.85;
const NOISE: f64 = 0.08;

/// Generate `n` images over `num_classes` geometric pattern classes.
///
/// `num_classes` must be in [2, 16] and `hw` one of {16, 32}.
pub fn gen_toy_dataset(seed: u64, n: usize, num_classes: usize, hw: usize) -> Result<ToyDataset> {
    if !(2..=16).contains(&num_classes) {
        return Err(Error::Validation(format!(
            "num_classes {num_classes} outside [2, 16]"
        )));
    }
    if hw != 16 && hw != 32 {
        return Err(Error::Validation(format!("hw {hw} not in {{16, 32}}")));
    }
    if n == 0 {
        return Err(Error::Validation("dataset size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % num_classes) as u8;
        images.push(render(label as usize, hw, &mut rng));
        labels.push(label);
    }
    Ok(ToyDataset {
        images,
        labels,
        num_classes,
        hw,
        seed,
    })
}

fn render(class: usize, hw: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let period = hw / 4;
    let phase = rng.random_range(0..period);
    let jx = rng.random_range(-2i64..=2);
    let jy = rng.random_range(-2i64..=2);
    let mut data = Vec::with_capacity(hw * hw);
    let half = hw as f64 / 2.0;
    let cx = half + jx as f64;
    let cy = half + jy as f64;
    let radius = hw as f64 / 4.0;
    for r in 0..hw {
        for c in 0..hw {
            let (rr, cc) = (r + phase, c + phase);
            let dx = c as f64 + 0.5 - cx;
            let dy = r as f64 + 0.5 - cy;
            let dist = (dx * dx + dy * dy).sqrt();
            let on = match class {
                0 => (rr / (period / 2).max(1)) % 2 == 0, // horizontal bars
                1 => (cc / (period / 2).max(1)) % 2 == 0, // vertical bars
                2 => ((r + c + phase) / (period / 2).max(1)) % 2 == 0, // diagonal stripes
                3 => ((r + hw - c + phase) / (period / 2).max(1)) % 2 == 0, // anti-diagonal
                4 => dist < radius,                       // disk
                5 => dist < radius && dist > radius * 0.55, // ring
                6 => dy.abs() < 1.5 || dx.abs() < 1.5,    // cross
                7 => (dx - dy).abs() < 2.0 || (dx + dy).abs() < 2.0, // X
                8 => ((r / period.max(1)) + (c / period.max(1))) % 2 == 0, // checkers
                9 => r < hw / 2 && c < hw / 2,            // top-left quadrant
                10 => r < 2 || c < 2 || r >= hw - 2 || c >= hw - 2, // frame
                11 => c < hw / 2,                         // left half
                12 => r >= hw / 2,                        // bottom half
                13 => r % period.max(1) < 2 && c % period.max(1) < 2, // dot grid
                14 => c >= r,                             // upper triangle
                15 => dist < radius * 1.4 && dy > 0.0,    // lower half-disk
                _ => unreachable!("class indices capped at 16"),
            };
            let base = if on { FG } else { BG };
            let noisy = base + rng.random_range(-NOISE..NOISE);
            data.push(noisy.clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![hw, hw, 1], data).expect("render shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_regeneration() {
        let a = gen_toy_dataset(1, 10, 2, 16).unwrap();
        let b = gen_toy_dataset(1, 10, 2, 16).unwrap();
        assert_eq!(a, b);
        let c = gen_toy_dataset(2, 10, 2, 16).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_label_histogram() {
        let data = gen_toy_dataset(7, 1000, 7, 16).unwrap();
        let mut counts = vec![0usize; 7];
        for &l in &data.labels {
            counts[l as usize] += 1;
        }
        let expect = 1000.0 / 7.0;
        for &count in &counts {
            assert!((count as f64 - expect).abs() <= 0.2 * expect);
        }
    }

    #[test]
    fn pixels_stay_in_unit_interval() {
        let data = gen_toy_dataset(3, 32, 16, 32).unwrap();
        for img in &data.images {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rejects_unsupported_sizes() {
        assert!(matches!(
            gen_toy_dataset(0, 4, 2, 17),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            gen_toy_dataset(0, 4, 1, 16),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            gen_toy_dataset(0, 4, 17, 16),
            Err(Error::Validation(_))
        ));
    }
}

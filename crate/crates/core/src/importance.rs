//! Per-bin importance maps. Every map is nonnegative and sums to one.
//!
//! Importance maps steer allocation but are never part of a release.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::sensitivity::ClippedFeature;
use crate::surrogate::SurrogateModel;
use crate::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    Gradient,
    Energy,
    BandPrior,
    Uniform,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub shape: Shape,
    pub weights: Vec<f64>,
    pub mode: ImportanceMode,
}

impl ImportanceMap {
    pub fn uniform(shape: Shape) -> Self {
        Self {
            shape,
            weights: vec![1.0 / shape.len() as f64; shape.len()],
            mode: ImportanceMode::Uniform,
        }
    }

    /// Normalize nonnegative weights to sum one. An all-zero input yields the
    /// uniform map.
    pub fn from_weights(shape: Shape, weights: Vec<f64>, mode: ImportanceMode) -> Result<Self> {
        if weights.len() != shape.len() || shape.is_empty() {
            return Err(Error::invalid(format!(
                "{} weights for a {}x{} grid",
                weights.len(),
                shape.frames,
                shape.bins
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("importance weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Ok(Self::uniform(shape));
        }
        Ok(Self {
            shape,
            weights: weights.iter().map(|w| w / total).collect(),
            mode,
        })
    }

    pub fn mass_in_bins(&self, bins: Range<usize>) -> f64 {
        self.weights
            .chunks_exact(self.shape.bins)
            .map(|row| row[bins.clone()].iter().sum::<f64>())
            .sum()
    }
}

/// `|G| / (Σ|G| + eps0)` with `G = ∇ₓ L`, renormalized to sum one.
pub fn gradient_importance(model: &SurrogateModel, x: &ClippedFeature, y: usize, eps0: f64) -> Result<ImportanceMap> {
    let (_, g) = model.loss_and_input_gradient(&x.values, y)?;
    map_from_gradient(x.shape, &g, eps0)
}

fn map_from_gradient(shape: Shape, g: &[f64], eps0: f64) -> Result<ImportanceMap> {
    let abs: Vec<f64> = g.iter().map(|v| v.abs()).collect();
    let total: f64 = abs.iter().sum::<f64>() + eps0;
    let guarded = abs.iter().map(|v| v / total).collect();
    ImportanceMap::from_weights(shape, guarded, ImportanceMode::Gradient)
}

pub fn energy_importance(x: &ClippedFeature) -> Result<ImportanceMap> {
    ImportanceMap::from_weights(x.shape, x.values.iter().map(|v| v.max(0.0)).collect(), ImportanceMode::Energy)
}

pub fn band_prior_importance(shape: Shape, band: Range<usize>, in_band_mass: f64) -> Result<ImportanceMap> {
    if band.is_empty() || band.end > shape.bins {
        return Err(Error::invalid(format!(
            "band {band:?} is empty or outside 0..{}",
            shape.bins
        )));
    }
    if !(in_band_mass > 0.0 && in_band_mass < 1.0) {
        return Err(Error::invalid(format!(
            "in-band mass must be in (0, 1), got {in_band_mass}"
        )));
    }
    let inside = band.len() * shape.frames;
    let outside = shape.len() - inside;
    let (w_in, w_out) = if outside == 0 {
        (1.0 / inside as f64, 0.0)
    } else {
        (in_band_mass / inside as f64, (1.0 - in_band_mass) / outside as f64)
    };
    let weights = (0..shape.len())
        .map(|i| if band.contains(&(i % shape.bins)) { w_in } else { w_out })
        .collect();
    Ok(ImportanceMap {
        shape,
        weights,
        mode: ImportanceMode::BandPrior,
    })
}

/// I.i.d. uniform draws, normalized.
pub fn random_importance(shape: Shape, seed: u64) -> Result<ImportanceMap> {
    let mut rng = NoiseStream::new(seed, 0);
    let w = (0..shape.len()).map(|_| rng.uniform()).collect();
    ImportanceMap::from_weights(shape, w, ImportanceMode::Random)
}

/// Average of per-sample maps over a cohort (e.g. the training split).
/// Applying one cohort map to every release keeps allocation independent
/// of the record being released.
pub fn cohort_average(maps: &[ImportanceMap]) -> Result<ImportanceMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty set of maps"))?;
    let mut acc = vec![0.0; first.shape.len()];
    for m in maps {
        if m.shape != first.shape {
            return Err(Error::invalid("importance maps have different shapes"));
        }
        acc.iter_mut().zip(&m.weights).for_each(|(a, w)| *a += w);
    }
    ImportanceMap::from_weights(first.shape, acc, first.mode)
}

pub fn cohort_gradient_importance(
    model: &SurrogateModel,
    xs: &[ClippedFeature],
    ys: &[usize],
    eps0: f64,
) -> Result<ImportanceMap> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let maps: Vec<ImportanceMap> = xs
        .par_iter()
        .zip(ys)
        .map(|(x, &y)| gradient_importance(model, x, y, eps0))
        .collect::<Result<_>>()?;
    cohort_average(&maps)
}

pub fn cohort_energy_importance(xs: &[ClippedFeature]) -> Result<ImportanceMap> {
    let maps: Vec<ImportanceMap> = xs.iter().map(energy_importance).collect::<Result<_>>()?;
    cohort_average(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clipped(shape: Shape, values: Vec<f64>) -> ClippedFeature {
        ClippedFeature {
            shape,
            values,
            clip_c: 100.0,
            original_norm: 0.0,
        }
    }

    fn assert_prob(m: &ImportanceMap) {
        assert!(m.weights.iter().all(|&w| w >= 0.0));
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_model_falls_back_to_uniform() {
        let shape = Shape::new(2, 3);
        let m = gradient_importance(&SurrogateModel::zeros(2, 6), &clipped(shape, vec![0.5; 6]), 0, 1e-6).unwrap();
        assert_eq!(m, ImportanceMap::uniform(shape));
    }

    #[test]
    fn single_gradient_entry_is_onehot() {
        let shape = Shape::new(1, 3);
        let model = SurrogateModel {
            num_classes: 2,
            dim: 3,
            weights: vec![0.0, 2.0, 0.0, 0.0, -1.0, 0.0],
            bias: vec![0.0, 0.0],
        };
        let m = gradient_importance(&model, &clipped(shape, vec![0.1, 0.2, 0.3]), 1, 1e-6).unwrap();
        assert_eq!(m.weights, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn gradient_map_matches_finite_differences() {
        let shape = Shape::new(2, 4);
        let mut rng = NoiseStream::new(5, 0);
        for _ in 0..10 {
            let model = SurrogateModel {
                num_classes: 3,
                dim: 8,
                weights: (0..24).map(|_| rng.normal(0.0, 1.0)).collect(),
                bias: (0..3).map(|_| rng.normal(0.0, 1.0)).collect(),
            };
            let x: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
            let y = rng.below(3) as usize;
            let m = gradient_importance(&model, &clipped(shape, x.clone()), y, 1e-6).unwrap();
            let loss = |v: &[f64]| model.loss_and_input_gradient(v, y).unwrap().0;
            let fd: Vec<f64> = (0..8)
                .map(|j| {
                    let (mut p, mut q) = (x.clone(), x.clone());
                    p[j] += 1e-5;
                    q[j] -= 1e-5;
                    ((loss(&p) - loss(&q)) / 2e-5).abs()
                })
                .collect();
            let total: f64 = fd.iter().sum();
            for (w, f) in m.weights.iter().zip(&fd) {
                assert!((w - f / total).abs() < 1e-3);
            }
            assert_prob(&m);
        }
    }

    #[test]
    fn energy_examples() {
        let shape = Shape::new(2, 2);
        let m = energy_importance(&clipped(shape, vec![0.3; 4])).unwrap();
        assert!(m.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let m = energy_importance(&clipped(shape, vec![0.0, 0.0, 0.7, 0.0])).unwrap();
        assert_eq!(m.weights, vec![0.0, 0.0, 1.0, 0.0]);
        let x = vec![0.1, 0.4, 0.2, 0.3];
        let m = energy_importance(&clipped(shape, x.clone())).unwrap();
        for (w, v) in m.weights.iter().zip(&x) {
            assert!((w - v / 1.0).abs() < 1e-12);
        }
        let z = energy_importance(&clipped(shape, vec![0.0; 4])).unwrap();
        assert_eq!(z.mode, ImportanceMode::Uniform);
    }

    #[test]
    fn band_prior_examples() {
        let shape = Shape::new(10, 129);
        let all = band_prior_importance(shape, 0..129, 0.3).unwrap();
        assert!(all.weights.iter().all(|&w| (w - 1.0 / 1290.0).abs() < 1e-15));

        let m = band_prior_importance(shape, 16..20, 0.9).unwrap();
        assert!((m.weights[17] - 0.9 / 40.0).abs() < 1e-15);
        assert!((m.weights[3 * 129 + 100] - 0.1 / (1290.0 - 40.0)).abs() < 1e-15);
        assert_prob(&m);

        let half = band_prior_importance(Shape::new(3, 8), 0..4, 0.5).unwrap();
        assert!(half.weights.iter().all(|&w| (w - 1.0 / 24.0).abs() < 1e-15));

        assert!(band_prior_importance(shape, 5..5, 0.5).is_err());
        assert!(band_prior_importance(shape, 0..130, 0.5).is_err());
        assert!(band_prior_importance(shape, 0..4, 1.0).is_err());
    }

    #[test]
    fn random_maps() {
        let shape = Shape::new(4, 5);
        assert_eq!(random_importance(shape, 3).unwrap(), random_importance(shape, 3).unwrap());
        assert_prob(&random_importance(shape, 4).unwrap());

        let n = 1000;
        let mut sum = vec![0.0; shape.len()];
        let mut sq = vec![0.0; shape.len()];
        for s in 0..n {
            let m = random_importance(shape, s).unwrap();
            for (i, w) in m.weights.iter().enumerate() {
                sum[i] += w;
                sq[i] += w * w;
            }
        }
        let expect = 1.0 / shape.len() as f64;
        for i in 0..shape.len() {
            let mean = sum[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * se + 1e-12, "bin {i}: {mean}");
        }
    }

    #[test]
    fn cohort_average_is_probability() {
        let shape = Shape::new(2, 3);
        let xs: Vec<ClippedFeature> = (0..5)
            .map(|i| clipped(shape, (0..6).map(|j| ((i * 7 + j) % 5) as f64).collect()))
            .collect();
        let m = cohort_energy_importance(&xs).unwrap();
        assert_prob(&m);
        assert!(cohort_average(&[]).is_err());
    }
}

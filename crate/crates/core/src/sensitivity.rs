//! L2 clipping and the resulting sensitivity bound.

use crate::error::{Error, Result};
use crate::spectrogram::BoundedFeature;
use crate::Shape;

#[derive(Debug, Clone, PartialEq)]
pub struct ClippedFeature {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub clip_c: f64,
    pub original_norm: f64,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `values` by `min(1, c / ‖values‖₂)`. The zero vector is returned as is.
pub fn clip_vec(values: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("clip threshold must be positive, got {c}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot clip a non-finite feature"));
    }
    let norm = l2_norm(values);
    if norm <= c {
        return Ok((values.to_vec(), norm));
    }
    let scale = c / norm;
    Ok((values.iter().map(|v| v * scale).collect(), norm))
}

pub fn clip_l2(x: &BoundedFeature, c: f64) -> Result<ClippedFeature> {
    let (values, original_norm) = clip_vec(&x.values, c)?;
    Ok(ClippedFeature {
        shape: x.shape,
        values,
        clip_c: c,
        original_norm,
    })
}

/// Nearest-rank percentile of the feature norms: the `ceil(p·n)`-th smallest.
pub fn fit_clip_threshold(train: &[BoundedFeature], percentile: f64) -> Result<f64> {
    let norms: Vec<f64> = train.iter().map(|x| l2_norm(&x.values)).collect();
    nearest_rank(&norms, percentile)
}

pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot take a percentile of an empty list"));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::invalid(format!(
            "percentile must be in (0, 1], got {percentile}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Δ₂ for swapping one clipped record: `2C`.
pub fn l2_sensitivity(c: f64) -> f64 {
    2.0 * c
}

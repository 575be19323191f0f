//! Respiration utility metrics on (released) spectrogram features.
//!
//! Breathing modulates the static path, so it shows up as a slow oscillation
//! of the lowest frequency bins over time. The helpers here extract that
//! time profile, band-limit it to 0.1–0.7 Hz, and derive rate features and
//! waveform correlation from it. Everything is post-processing of released
//! features.

use rustfft::FftPlanner;
use num_complex::Complex64;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::Shape;

pub const BREATH_BAND_HZ: (f64, f64) = (0.1, 0.7);

/// Mean over `bins` of each frame, mean-removed and band-passed by zeroing
/// DFT coefficients outside `band_hz`.
pub fn respiration_profile(
    values: &[f64],
    shape: Shape,
    bins: Range<usize>,
    frame_rate: f64,
    band_hz: (f64, f64),
) -> Result<Vec<f64>> {
    if values.len() != shape.len() || bins.is_empty() || bins.end > shape.bins {
        return Err(Error::invalid("profile bins outside the feature grid"));
    }
    let n = shape.frames;
    let raw: Vec<f64> = values
        .chunks_exact(shape.bins)
        .map(|row| row[bins.clone()].iter().sum::<f64>() / bins.len() as f64)
        .collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = raw.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * frame_rate / n as f64;
        if f < band_hz.0 || f > band_hz.1 {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|z| z.re / n as f64).collect())
}

/// Magnitude of the profile's DTFT at `count` frequencies evenly spaced over
/// `band_hz`. Insensitive to breathing phase, so a linear classifier can
/// read the rate from it.
pub fn rate_spectrum(profile: &[f64], frame_rate: f64, band_hz: (f64, f64), count: usize) -> Vec<f64> {
    let n = profile.len() as f64;
    (0..count)
        .map(|i| {
            let f = band_hz.0 + (band_hz.1 - band_hz.0) * i as f64 / (count.max(2) - 1) as f64;
            let w = std::f64::consts::TAU * f / frame_rate;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in profile.iter().enumerate() {
                re += v * (w * t as f64).cos();
                im -= v * (w * t as f64).sin();
            }
            (re * re + im * im).sqrt() / n
        })
        .collect()
}

/// Equal-width quantization of breathing rates (Hz) into classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBins {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub count: usize,
}

impl RateBins {
    pub fn width(&self) -> f64 {
        (self.hi_hz - self.lo_hz) / self.count as f64
    }

    pub fn class_of(&self, rate_hz: f64) -> usize {
        (((rate_hz - self.lo_hz) / self.width()).floor().max(0.0) as usize).min(self.count - 1)
    }

    pub fn center(&self, class: usize) -> f64 {
        self.lo_hz + (class as f64 + 0.5) * self.width()
    }

    /// Expected rate under class probabilities.
    pub fn decode(&self, probs: &[f64]) -> f64 {
        probs.iter().enumerate().map(|(k, p)| p * self.center(k)).sum()
    }
}

/// Mean absolute error in breaths per minute.
pub fn rate_mae_bpm(pred_hz: &[f64], truth_hz: &[f64]) -> Result<f64> {
    if pred_hz.is_empty() || pred_hz.len() != truth_hz.len() {
        return Err(Error::invalid("need equally many predicted and true rates"));
    }
    Ok(pred_hz
        .iter()
        .zip(truth_hz)
        .map(|(p, t)| 60.0 * (p - t).abs())
        .sum::<f64>()
        / pred_hz.len() as f64)
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

//! CSI windows to bounded time–frequency features.
//!
//! Frames are left-aligned: frame `m` covers samples `m*hop .. m*hop + fft_size`.
//! The STFT runs on the complex samples of each subcarrier; negative
//! frequencies are folded onto positive ones (|X_k| + |X_{N-k}|) so the output
//! keeps `fft_size/2 + 1` bins, and magnitudes are averaged over subcarriers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::signal::CsiWindow;
use crate::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowFn {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    pub eps0: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 256,
            hop: 64,
            window_fn: WindowFn::Hann,
            eps0: 1e-6,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::invalid(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::invalid(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::invalid("eps0 must be positive"));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `floor((T - N) / H) + 1`, or `None` when `T < N`.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.fft_size).then(|| (len - self.fft_size) / self.hop + 1)
    }

    pub fn feature_shape(&self, len: usize) -> Option<Shape> {
        self.num_frames(len).map(|frames| Shape::new(frames, self.num_bins()))
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        match self.window_fn {
            WindowFn::Hann => (0..self.fft_size)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n).cos())
                .collect(),
        }
    }
}

/// Nonnegative magnitude spectrogram, row-major `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub frame_rate: f64,
    pub freq_resolution: f64,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.shape.bins + bin]
    }
}

/// Reusable STFT plan.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            window: cfg.window(),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn magnitude(&self, w: &CsiWindow) -> Result<Spectrogram> {
        let n = self.cfg.fft_size;
        let hop = self.cfg.hop;
        let shape = self.cfg.feature_shape(w.len()).ok_or_else(|| {
            Error::invalid(format!("window has {} samples, fft_size is {n}", w.len()))
        })?;
        let n_c = w.num_subcarriers;
        let bins = shape.bins;
        let mut values = vec![0.0; shape.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let inv_nc = 1.0 / n_c as f64;

        for c in 0..n_c {
            for m in 0..shape.frames {
                let start = m * hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = w.samples[(start + i) * n_c + c] * self.window[i];
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                let row = &mut values[m * bins..(m + 1) * bins];
                row[0] += buf[0].norm() * inv_nc;
                for k in 1..n / 2 {
                    row[k] += (buf[k].norm() + buf[n - k].norm()) * inv_nc;
                }
                row[n / 2] += buf[n / 2].norm() * inv_nc;
            }
        }

        Ok(Spectrogram {
            shape,
            values,
            frame_rate: w.sample_rate / hop as f64,
            freq_resolution: w.sample_rate / n as f64,
        })
    }
}

pub fn stft_magnitude(w: &CsiWindow, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg)?.magnitude(w)
}

/// Linearly interpolate every subcarrier onto `target_len` uniformly spaced
/// instants spanning `[t_first, t_last]`. Real and imaginary parts are
/// interpolated independently.
pub fn resample_uniform(w: &CsiWindow, target_len: usize) -> Result<CsiWindow> {
    if w.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 rows to resample, got {}",
            w.len()
        )));
    }
    if target_len < 2 {
        return Err(Error::invalid("target_len must be >= 2"));
    }
    if w.timestamps.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::invalid("timestamps must be strictly increasing"));
    }
    let n_c = w.num_subcarriers;
    let t0 = w.timestamps[0];
    let t1 = *w.timestamps.last().unwrap();
    let step = (t1 - t0) / (target_len - 1) as f64;
    let mut timestamps = Vec::with_capacity(target_len);
    let mut samples = Vec::with_capacity(target_len * n_c);
    let mut j = 0;
    for i in 0..target_len {
        let t = if i + 1 == target_len {
            t1
        } else {
            t0 + step * i as f64
        };
        while j + 2 < w.len() && w.timestamps[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (w.timestamps[j], w.timestamps[j + 1]);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let (ra, rb) = (w.row(j), w.row(j + 1));
        for c in 0..n_c {
            samples.push(ra[c] + (rb[c] - ra[c]) * f);
        }
        timestamps.push(t);
    }
    let sample_rate = if t1 > t0 {
        (target_len - 1) as f64 / (t1 - t0)
    } else {
        w.sample_rate
    };
    Ok(CsiWindow {
        samples,
        timestamps,
        num_subcarriers: n_c,
        sample_rate,
        labels: w.labels,
        respiration: w.respiration,
    })
}

/// Per-frequency min/max of `log(1 + S)` over a training split.
///
/// Treated as public: computed once, shipped with the release, and never
/// refit on test or released data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn num_bins(&self) -> usize {
        self.min.len()
    }

    /// Content hash, stable across platforms.
    pub fn id(&self) -> String {
        let h = self
            .min
            .iter()
            .chain(&self.max)
            .fold(mix64(self.min.len() as u64), |acc, v| mix64(acc ^ v.to_bits()));
        format!("{h:016x}")
    }
}

pub fn fit_norm_stats(train: &[Spectrogram]) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("cannot fit normalization on an empty list"))?;
    let bins = first.shape.bins;
    let mut min = vec![f64::INFINITY; bins];
    let mut max = vec![f64::NEG_INFINITY; bins];
    for s in train {
        if s.shape.bins != bins {
            return Err(Error::invalid("spectrograms have different bin counts"));
        }
        for row in s.values.chunks_exact(bins) {
            for (k, &v) in row.iter().enumerate() {
                let l = v.ln_1p();
                min[k] = min[k].min(l);
                max[k] = max[k].max(l);
            }
        }
    }
    Ok(NormStats { min, max })
}

/// Spectrogram after log-compression and clamped per-frequency min–max
/// scaling. Every entry is in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedFeature {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub norm_stats_id: String,
}

pub fn normalize_bounded(s: &Spectrogram, stats: &NormStats, eps0: f64) -> Result<BoundedFeature> {
    if stats.num_bins() != s.shape.bins || stats.max.len() != stats.min.len() {
        return Err(Error::invalid(format!(
            "normalization has {} bins, spectrogram has {}",
            stats.num_bins(),
            s.shape.bins
        )));
    }
    let bins = s.shape.bins;
    let values = s
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let k = i % bins;
            let x = (v.ln_1p() - stats.min[k]) / (stats.max[k] - stats.min[k] + eps0);
            // NaN (non-finite input) maps to 0 rather than escaping the box.
            if x.is_nan() {
                0.0
            } else {
                x.clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(BoundedFeature {
        shape: s.shape,
        values,
        norm_stats_id: stats.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WindowLabels;

    fn labels() -> WindowLabels {
        WindowLabels {
            activity: 0,
            subject: 0,
            room: 0,
            member: false,
        }
    }

    fn window_from_fn(len: usize, n_c: usize, fs: f64, f: impl Fn(usize, usize) -> Complex64) -> CsiWindow {
        let mut samples = Vec::with_capacity(len * n_c);
        for i in 0..len {
            for c in 0..n_c {
                samples.push(f(i, c));
            }
        }
        let ts = (0..len).map(|i| i as f64 / fs).collect();
        CsiWindow::new(samples, ts, n_c, fs, labels()).unwrap()
    }

    #[test]
    fn shape_closed_forms() {
        for (len, n, h) in [(448, 256, 64), (768, 256, 64), (300, 64, 7), (256, 256, 256)] {
            let cfg = StftConfig {
                fft_size: n,
                hop: h,
                ..StftConfig::default()
            };
            let w = window_from_fn(len, 4, 100.0, |i, _| Complex64::new(i as f64, 0.0));
            let s = stft_magnitude(&w, &cfg).unwrap();
            assert_eq!(s.shape.frames, (len - n) / h + 1);
            assert_eq!(s.shape.bins, n / 2 + 1);
        }
    }

    #[test]
    fn too_short_window_rejected() {
        let w = window_from_fn(200, 4, 100.0, |_, _| Complex64::new(1.0, 0.0));
        assert!(matches!(
            stft_magnitude(&w, &StftConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invalid_stft_config() {
        for cfg in [
            StftConfig { fft_size: 100, ..StftConfig::default() },
            StftConfig { hop: 0, ..StftConfig::default() },
            StftConfig { hop: 257, ..StftConfig::default() },
            StftConfig { eps0: 0.0, ..StftConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let w = window_from_fn(448, 4, 256.0, |_, _| Complex64::new(0.0, 0.0));
        let s = stft_magnitude(&w, &StftConfig::default()).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_linear_midpoint() {
        let w = CsiWindow::new(
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, -2.0)],
            vec![0.0, 1.0],
            1,
            1.0,
            labels(),
        )
        .unwrap();
        let r = resample_uniform(&w, 3).unwrap();
        assert_eq!(r.timestamps, vec![0.0, 0.5, 1.0]);
        let re: Vec<f64> = r.samples.iter().map(|z| z.re).collect();
        let im: Vec<f64> = r.samples.iter().map(|z| z.im).collect();
        assert_eq!(re, vec![0.0, 0.5, 1.0]);
        assert_eq!(im, vec![0.0, -1.0, -2.0]);
    }

    #[test]
    fn resample_uniform_window_unchanged() {
        let w = window_from_fn(300, 4, 50.0, |i, c| {
            Complex64::new((i as f64 * 0.1).sin() + c as f64, (i as f64 * 0.07).cos())
        });
        let r = resample_uniform(&w, 300).unwrap();
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn resample_needs_two_rows() {
        let w = CsiWindow::new(vec![Complex64::new(1.0, 0.0)], vec![0.0], 1, 1.0, labels()).unwrap();
        assert!(matches!(resample_uniform(&w, 10), Err(Error::DegenerateInput(_))));
    }

    fn spec_const(v: f64, frames: usize, bins: usize) -> Spectrogram {
        Spectrogram {
            shape: Shape::new(frames, bins),
            values: vec![v; frames * bins],
            frame_rate: 1.0,
            freq_resolution: 1.0,
        }
    }

    #[test]
    fn norm_stats_closed_form() {
        let zero = spec_const(0.0, 3, 5);
        let stats = fit_norm_stats(std::slice::from_ref(&zero)).unwrap();
        assert!(stats.min.iter().chain(&stats.max).all(|&v| v == 0.0));

        let e1 = spec_const(std::f64::consts::E - 1.0, 2, 5);
        let stats = fit_norm_stats(&[zero, e1]).unwrap();
        for k in 0..5 {
            assert_eq!(stats.min[k], 0.0);
            assert!((stats.max[k] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn norm_stats_empty_rejected() {
        assert!(matches!(fit_norm_stats(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let stats = NormStats {
            min: vec![0.0, 1.0],
            max: vec![2.0, 3.0],
        };
        let eps0 = 1e-6;
        // log(1+s) equal to min, max, and above max.
        let s = Spectrogram {
            shape: Shape::new(3, 2),
            values: vec![
                0.0,
                1f64.exp() - 1.0,
                2f64.exp() - 1.0,
                3f64.exp() - 1.0,
                10f64.exp() - 1.0,
                10f64.exp() - 1.0,
            ],
            frame_rate: 1.0,
            freq_resolution: 1.0,
        };
        let x = normalize_bounded(&s, &stats, eps0).unwrap();
        assert_eq!(x.values[0], 0.0);
        assert!(x.values[1].abs() < 1e-12);
        assert!((x.values[2] - 1.0).abs() < 1e-6);
        assert!((x.values[3] - 1.0).abs() < 1e-6);
        assert_eq!(x.values[4], 1.0);
        assert_eq!(x.values[5], 1.0);
    }

    #[test]
    fn normalize_bin_mismatch_rejected() {
        let stats = NormStats {
            min: vec![0.0; 3],
            max: vec![1.0; 3],
        };
        assert!(normalize_bounded(&spec_const(1.0, 2, 4), &stats, 1e-6).is_err());
    }
}

//! Synthetic CSI windows with a known task signal and known leakage channels.
//!
//! A window is the sum of
//! - a static multipath path with room-dependent per-subcarrier gains,
//! - two room-specific low-frequency tones (the room "static band"),
//! - a narrowband Doppler tone whose center encodes the activity,
//! - a weak subject-specific micro-Doppler tone and a per-subcarrier
//!   subject gain fingerprint on every body-reflected path,
//! - an optional common sway component, rare broadband bursts,
//!   optional respiration modulation and bystander motion,
//! - white complex noise.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, NoiseStream};

const TAG_SUBJECT: u64 = 0x5b1e_c7;
const TAG_ROOM: u64 = 0x500d;
const TAG_WINDOW: u64 = 0x3141_5926;
const TAG_DROP: u64 = 0xd409;

/// Amplitudes and probabilities of each synthetic component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub static_gain: f64,
    /// Spread of room-dependent per-subcarrier static gains.
    pub room_gain_spread: f64,
    pub room_tone_amp: f64,
    pub activity_amp: f64,
    /// Relative per-window jitter of the activity amplitude.
    pub activity_amp_jitter: f64,
    /// Peak frequency deviation of the activity tone (Hz).
    pub doppler_spread_hz: f64,
    /// Relative per-subcarrier gain variation of the subject fingerprint.
    pub fingerprint_gain: f64,
    /// Amplitude of the subject micro-Doppler tone, relative to the activity tone.
    pub signature_rel_amp: f64,
    pub signature_base_hz: f64,
    pub signature_step_hz: f64,
    pub sway_prob: f64,
    pub sway_amp: f64,
    pub sway_hz: f64,
    pub burst_prob: f64,
    pub burst_amp: f64,
    pub burst_len: usize,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            static_gain: 1.0,
            room_gain_spread: 0.5,
            room_tone_amp: 0.1,
            activity_amp: 0.5,
            activity_amp_jitter: 0.05,
            doppler_spread_hz: 0.4,
            fingerprint_gain: 0.1,
            signature_rel_amp: 0.12,
            signature_base_hz: 48.0,
            signature_step_hz: 4.0,
            sway_prob: 0.5,
            sway_amp: 0.4,
            sway_hz: 36.0,
            burst_prob: 0.05,
            burst_amp: 20.0,
            burst_len: 4,
        }
    }
}

impl ChannelModel {
    /// Only the activity tone: no static path, leakage channels, or bursts.
    pub fn activity_only() -> Self {
        Self {
            static_gain: 0.0,
            room_gain_spread: 0.0,
            room_tone_amp: 0.0,
            activity_amp_jitter: 0.0,
            doppler_spread_hz: 0.0,
            fingerprint_gain: 0.0,
            signature_rel_amp: 0.0,
            sway_prob: 0.0,
            burst_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_subjects: usize,
    pub num_rooms: usize,
    pub num_activities: usize,
    pub window_len: usize,
    pub num_subcarriers: usize,
    pub sample_rate: f64,
    pub packet_loss_rate: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Activity tones are spaced evenly inside this band unless
    /// `activity_centers_hz` is given explicitly.
    pub activity_band_hz: (f64, f64),
    pub activity_centers_hz: Option<Vec<f64>>,
    pub respiration: bool,
    /// Adds an interfering bystander Doppler component. No fidelity claimed.
    pub bystander: bool,
    pub channel: ChannelModel,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_subjects: 6,
            num_rooms: 5,
            num_activities: 4,
            window_len: 448,
            num_subcarriers: 8,
            sample_rate: 256.0,
            packet_loss_rate: 0.02,
            noise_std: 0.05,
            seed: 0,
            activity_band_hz: (16.0, 24.0),
            activity_centers_hz: None,
            respiration: false,
            bystander: false,
            channel: ChannelModel::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 256 {
            return Err(Error::invalid(format!(
                "window_len must be >= 256, got {}",
                self.window_len
            )));
        }
        if self.num_subcarriers < 4 {
            return Err(Error::invalid(format!(
                "num_subcarriers must be >= 4, got {}",
                self.num_subcarriers
            )));
        }
        if !(0.0..0.5).contains(&self.packet_loss_rate) {
            return Err(Error::invalid(format!(
                "packet_loss_rate must be in [0, 0.5), got {}",
                self.packet_loss_rate
            )));
        }
        if self.num_subjects == 0 || self.num_rooms == 0 || self.num_activities == 0 {
            return Err(Error::invalid("label counts must be positive"));
        }
        if !(self.sample_rate > 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::invalid("sample_rate must be > 0 and noise_std >= 0"));
        }
        let centers = self.activity_centers();
        if centers.len() != self.num_activities {
            return Err(Error::invalid(format!(
                "{} activity centers for {} activities",
                centers.len(),
                self.num_activities
            )));
        }
        let nyquist = self.sample_rate / 2.0;
        if centers.iter().any(|&f| !(f.abs() < nyquist)) {
            return Err(Error::invalid("activity center above Nyquist"));
        }
        Ok(())
    }

    pub fn activity_centers(&self) -> Vec<f64> {
        if let Some(c) = &self.activity_centers_hz {
            return c.clone();
        }
        let (lo, hi) = self.activity_band_hz;
        let k = self.num_activities as f64;
        (0..self.num_activities)
            .map(|a| lo + (a as f64 + 0.5) * (hi - lo) / k)
            .collect()
    }

    pub fn subject_signature_hz(&self, subject: usize) -> f64 {
        self.channel.signature_base_hz + self.channel.signature_step_hz * subject as f64
    }

    /// Two fixed low-frequency tones per room.
    pub fn room_tones_hz(&self, room: usize) -> [f64; 2] {
        [2.0 + room as f64, 6.0 + 1.5 * room as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowLabels {
    pub activity: usize,
    pub subject: usize,
    pub room: usize,
    /// Whether the window belongs to the producer's training set.
    pub member: bool,
}

/// Ground truth of the respiration component, when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Respiration {
    pub rate_hz: f64,
    pub phase: f64,
    pub depth: f64,
}

impl Respiration {
    pub fn waveform(&self, t: f64) -> f64 {
        (TAU * self.rate_hz * t + self.phase).sin()
    }

    pub fn breaths_per_min(&self) -> f64 {
        self.rate_hz * 60.0
    }
}

/// Complex channel samples (row-major, `len × num_subcarriers`) with timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiWindow {
    pub samples: Vec<Complex64>,
    pub timestamps: Vec<f64>,
    pub num_subcarriers: usize,
    pub sample_rate: f64,
    pub labels: WindowLabels,
    pub respiration: Option<Respiration>,
}

impl CsiWindow {
    pub fn new(
        samples: Vec<Complex64>,
        timestamps: Vec<f64>,
        num_subcarriers: usize,
        sample_rate: f64,
        labels: WindowLabels,
    ) -> Result<Self> {
        let w = Self {
            samples,
            timestamps,
            num_subcarriers,
            sample_rate,
            labels,
            respiration: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        let n = self.num_subcarriers;
        &self.samples[i * n..(i + 1) * n]
    }

    /// Subcarrier `c` as a contiguous sequence.
    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.len())
            .map(|i| self.samples[i * self.num_subcarriers + c])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 {
            return Err(Error::invalid("window has no subcarriers"));
        }
        if self.samples.len() != self.timestamps.len() * self.num_subcarriers {
            return Err(Error::invalid(format!(
                "{} samples for {} rows x {} subcarriers",
                self.samples.len(),
                self.timestamps.len(),
                self.num_subcarriers
            )));
        }
        if self.timestamps.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        if self.timestamps.iter().any(|t| !t.is_finite())
            || self.samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("window contains non-finite values"));
        }
        Ok(())
    }
}

fn check_labels(cfg: &GenConfig, labels: &WindowLabels) -> Result<()> {
    if labels.activity >= cfg.num_activities {
        return Err(Error::invalid(format!(
            "activity {} out of range 0..{}",
            labels.activity, cfg.num_activities
        )));
    }
    if labels.subject >= cfg.num_subjects {
        return Err(Error::invalid(format!(
            "subject {} out of range 0..{}",
            labels.subject, cfg.num_subjects
        )));
    }
    if labels.room >= cfg.num_rooms {
        return Err(Error::invalid(format!(
            "room {} out of range 0..{}",
            labels.room, cfg.num_rooms
        )));
    }
    Ok(())
}

/// Per-subcarrier gain fingerprint of a subject. Fixed for a given `cfg.seed`.
pub fn subject_fingerprint(cfg: &GenConfig, subject: usize) -> Vec<f64> {
    let mut rng = NoiseStream::new(derive_seed(cfg.seed, &[TAG_SUBJECT, subject as u64]), 0);
    let g = cfg.channel.fingerprint_gain;
    // Subject offsets are spread evenly over [-g, g] so every pair differs in
    // mean gain; the per-subcarrier part adds a smaller random pattern.
    let offset = if cfg.num_subjects > 1 {
        g * (2.0 * subject as f64 / (cfg.num_subjects - 1) as f64 - 1.0)
    } else {
        0.0
    };
    (0..cfg.num_subcarriers)
        .map(|_| 1.0 + offset + 0.3 * g * rng.uniform_range(-1.0, 1.0))
        .collect()
}

fn room_static_path(cfg: &GenConfig, room: usize) -> Vec<Complex64> {
    let mut rng = NoiseStream::new(derive_seed(cfg.seed, &[TAG_ROOM, room as u64]), 0);
    (0..cfg.num_subcarriers)
        .map(|_| {
            let gain = cfg.channel.static_gain * (1.0 + cfg.channel.room_gain_spread * rng.uniform());
            Complex64::from_polar(gain, rng.uniform_range(0.0, TAU))
        })
        .collect()
}

/// Generate one labeled window. Deterministic in `(cfg, labels, index)`.
pub fn generate_window(cfg: &GenConfig, labels: WindowLabels, index: u64) -> Result<CsiWindow> {
    cfg.validate()?;
    check_labels(cfg, &labels)?;
    let ch = &cfg.channel;
    let n_t = cfg.window_len;
    let n_c = cfg.num_subcarriers;
    let fs = cfg.sample_rate;

    let mut rng = NoiseStream::new(
        derive_seed(
            cfg.seed,
            &[
                TAG_WINDOW,
                index,
                labels.activity as u64,
                labels.subject as u64,
                labels.room as u64,
            ],
        ),
        0,
    );

    let fingerprint = subject_fingerprint(cfg, labels.subject);
    let static_path = room_static_path(cfg, labels.room);
    let timestamps: Vec<f64> = (0..n_t).map(|i| i as f64 / fs).collect();

    // Per-window random draws, in a fixed order.
    let room_phases = [rng.uniform_range(0.0, TAU), rng.uniform_range(0.0, TAU)];
    let center = cfg.activity_centers()[labels.activity];
    let fm_rate = rng.uniform_range(0.3, 0.8);
    let fm_phase = rng.uniform_range(0.0, TAU);
    let act_amp = ch.activity_amp * (1.0 + ch.activity_amp_jitter * rng.standard_normal());
    let sub_rot: Vec<Complex64> = (0..n_c)
        .map(|_| Complex64::from_polar(1.0, rng.uniform_range(0.0, TAU)))
        .collect();
    let sig_phase = rng.uniform_range(0.0, TAU);
    let sway = (rng.uniform() < ch.sway_prob).then(|| {
        (
            ch.sway_amp * rng.uniform_range(0.5, 1.0),
            ch.sway_hz + rng.uniform_range(-2.0, 2.0),
        )
    });
    let burst_at = (rng.uniform() < ch.burst_prob && n_t > ch.burst_len)
        .then(|| rng.below((n_t - ch.burst_len) as u64) as usize);
    let respiration = cfg.respiration.then(|| Respiration {
        rate_hz: rng.uniform_range(0.15, 0.55),
        phase: rng.uniform_range(0.0, TAU),
        depth: 0.2,
    });
    let bystander = cfg.bystander.then(|| {
        (
            0.5 * ch.activity_amp,
            rng.uniform_range(-0.4, 0.4) * fs / 2.0,
            rng.uniform_range(0.0, TAU),
        )
    });
    let room_tones = cfg.room_tones_hz(labels.room);
    let sig_hz = cfg.subject_signature_hz(labels.subject);
    let sig_amp = ch.signature_rel_amp * act_amp;

    let mut samples = Vec::with_capacity(n_t * n_c);
    for &t in &timestamps {
        let doppler_phase = if ch.doppler_spread_hz > 0.0 {
            TAU * center * t
                - ch.doppler_spread_hz / fm_rate * (TAU * fm_rate * t + fm_phase).cos()
        } else {
            TAU * center * t
        };
        let mut common = Complex64::new(0.0, 0.0);
        for (f, ph) in room_tones.iter().zip(room_phases) {
            common += Complex64::from_polar(ch.room_tone_amp, TAU * f * t + ph);
        }
        if let Some((amp, f)) = sway {
            common += Complex64::from_polar(amp, TAU * f * t);
        }
        if let Some((amp, f, ph)) = bystander {
            common += Complex64::from_polar(amp, TAU * f * t + ph);
        }
        let breath = respiration.map_or(1.0, |r| 1.0 + r.depth * r.waveform(t));
        let signature = Complex64::from_polar(sig_amp, TAU * sig_hz * t + sig_phase);
        let doppler = Complex64::from_polar(act_amp, doppler_phase);
        for c in 0..n_c {
            let body = doppler * sub_rot[c] + signature;
            samples.push(static_path[c] * breath + common + body * fingerprint[c]);
        }
    }

    if let Some(start) = burst_at {
        for i in start..start + ch.burst_len {
            for c in 0..n_c {
                let z = Complex64::new(rng.standard_normal(), rng.standard_normal());
                samples[i * n_c + c] += z * ch.burst_amp;
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let s = cfg.noise_std / std::f64::consts::SQRT_2;
        for z in samples.iter_mut() {
            *z += Complex64::new(s * rng.standard_normal(), s * rng.standard_normal());
        }
    }

    Ok(CsiWindow {
        samples,
        timestamps,
        num_subcarriers: n_c,
        sample_rate: fs,
        labels,
        respiration,
    })
}

/// Remove each row independently with probability `rate`.
///
/// Survivors keep their timestamps. At least two rows are always kept so the
/// window can still be resampled.
pub fn drop_packets(w: &CsiWindow, rate: f64, seed: u64) -> CsiWindow {
    if rate <= 0.0 || w.len() <= 2 {
        return w.clone();
    }
    let mut rng = NoiseStream::new(derive_seed(seed, &[TAG_DROP]), 0);
    let mut keep: Vec<usize> = (0..w.len()).filter(|_| rng.uniform() >= rate).collect();
    if keep.len() < 2 {
        keep = vec![0, w.len() - 1];
    }
    let n_c = w.num_subcarriers;
    let mut samples = Vec::with_capacity(keep.len() * n_c);
    for &i in &keep {
        samples.extend_from_slice(w.row(i));
    }
    CsiWindow {
        samples,
        timestamps: keep.iter().map(|&i| w.timestamps[i]).collect(),
        num_subcarriers: n_c,
        sample_rate: w.sample_rate,
        labels: w.labels,
        respiration: w.respiration,
    }
}

//! Config-driven privacy–utility experiments.
//!
//! For every seed the runner generates a synthetic world, fits the owner's
//! normalization, clip threshold and surrogate on the training split, then
//! releases the training split under each mechanism mode and ε target. For
//! every release it measures
//! - downstream utility: a consumer model trained on the released training
//!   features, scored on the owner's clean held-out windows (and, for
//!   reference, on released held-out windows),
//! - membership inference with shadow models against that consumer model,
//! - subject and room inference from released features.
//!
//! Outputs in `output.dir`: `results.csv` (one row per run), `attacks.csv`
//! (one row per attack report), `curves.csv` (long format), `diagnostics.csv`,
//! and per run a manifest, an accountant ledger and a few released feature
//! files.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::accountant::{default_alpha_grid, AccountantState, CapPolicy, LedgerWriter, GaussianEvent};
use crate::allocation::{make_partition, BlockPartition};
use crate::attacks::{
    attribute_inference, shadow_mia, AttackInput, AttackReport, Attribute, Candidates, MiaConfig, Target,
};
use crate::error::{Error, Result};
use crate::importance::{
    cohort_energy_importance, cohort_gradient_importance, energy_importance, gradient_importance,
    random_importance, ImportanceMap,
};
use crate::mechanism::{plan, MechanismMode, MechanismParams, NoiseCalibration, NoisyFeature, ReleasePlan};
use crate::rng::{derive_seed, NoiseStream, STREAM_ALGORITHM};
use crate::sensitivity::{clip_l2, fit_clip_threshold, ClippedFeature};
use crate::signal::{drop_packets, generate_window, ChannelModel, CsiWindow, GenConfig, WindowLabels};
use crate::spectrogram::{fit_norm_stats, BoundedFeature, normalize_bounded, resample_uniform, NormStats, Spectrogram, Stft, StftConfig};
use crate::surrogate::{
    evaluate, mean_vector, train_with, InputTransform, Metrics, SurrogateModel, TrainConfig,
};
use crate::utility::{pearson, rate_mae_bpm, rate_spectrum, respiration_profile, RateBins, BREATH_BAND_HZ};
use crate::Shape;

const TAG_LABELS: u64 = 0x1abe1;
const TAG_DROP: u64 = 0xd409;
const TAG_NOISE: u64 = 0x0153;
const TAG_RANDOM_MAP: u64 = 0x7a9d;
const TAG_MIA: u64 = 0x31a;
const TAG_SHADOW_NOISE: u64 = 0x5ad0_0153;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_windows: usize,
    pub test_windows: usize,
    /// Windows held by the attacker for shadow models.
    pub attacker_windows: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_windows: 40_000,
            test_windows: 2_000,
            attacker_windows: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub block_h: usize,
    pub block_w: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { block_h: 4, block_w: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    /// `ε_max / ε_min`. Budgets are relative; calibration sets the scale.
    pub eps_min_ratio: f64,
    pub gamma: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            eps_min_ratio: 8.0,
            gamma: 2.0,
        }
    }
}

/// Where importance maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceScope {
    /// One map averaged over the training split, reused for every release.
    #[default]
    Cohort,
    /// A fresh map per released window, computed from that window.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceConfig {
    pub scope: ImportanceScope,
    pub eps0: f64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            scope: ImportanceScope::Cohort,
            eps0: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub eps_targets: Vec<f64>,
    pub delta: f64,
    /// Per-window cap on ε(δ); windows whose release would exceed it are
    /// withheld.
    pub budget_cap: Option<f64>,
    pub cap_policy: CapPolicy,
    pub modes: Vec<MechanismMode>,
    /// Number of times each window may be released; calibration splits the
    /// target over all of them. The runner itself releases each window once.
    pub releases_per_window: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            eps_targets: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            delta: 1e-5,
            budget_cap: None,
            cap_policy: CapPolicy::Stop,
            modes: MechanismMode::ALL.to_vec(),
            releases_per_window: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub shadow_models: usize,
    pub mia_input: AttackInput,
    /// Members and non-members scored by the membership attack, each.
    pub mia_candidates: usize,
    pub attribute_train: usize,
    pub attribute_test: usize,
    pub attacker_train: TrainConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            shadow_models: 4,
            mia_input: AttackInput::Confidence,
            mia_candidates: 500,
            attribute_train: 2_000,
            attribute_test: 1_000,
            attacker_train: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Released training features written per run, as samples of the format.
    pub released_samples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            released_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub generator: GenConfig,
    pub stft: StftConfig,
    pub data: DataConfig,
    pub clip_percentile: f64,
    pub partition: PartitionConfig,
    pub allocation: AllocationConfig,
    pub importance: ImportanceConfig,
    pub dp: DpConfig,
    /// The owner's surrogate, source of gradient importance.
    pub surrogate: TrainConfig,
    /// The downstream model trained on released features.
    pub consumer: TrainConfig,
    pub attacks: AttackConfig,
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GenConfig::default(),
            stft: StftConfig::default(),
            data: DataConfig::default(),
            clip_percentile: 0.95,
            partition: PartitionConfig::default(),
            allocation: AllocationConfig::default(),
            importance: ImportanceConfig::default(),
            dp: DpConfig::default(),
            surrogate: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
            consumer: TrainConfig {
                epochs: 5,
                fit_bias: false,
                ..TrainConfig::default()
            },
            attacks: AttackConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Breathing-rate task: 32 s windows at 32 Hz, so a window spans several
    /// breaths, with every tone moved below the 16 Hz Nyquist limit.
    pub fn respiration() -> Self {
        let d = Self::default();
        Self {
            generator: GenConfig {
                sample_rate: 32.0,
                window_len: 1024,
                activity_band_hz: (4.0, 8.0),
                respiration: true,
                channel: ChannelModel {
                    doppler_spread_hz: 0.2,
                    signature_base_hz: 10.0,
                    signature_step_hz: 1.0,
                    sway_hz: 13.0,
                    ..ChannelModel::default()
                },
                ..GenConfig::default()
            },
            stft: StftConfig {
                fft_size: 64,
                hop: 16,
                ..StftConfig::default()
            },
            data: DataConfig {
                train_windows: 2_000,
                test_windows: 500,
                attacker_windows: 500,
            },
            partition: PartitionConfig { block_h: 61, block_w: 4 },
            attacks: AttackConfig {
                mia_candidates: 200,
                attribute_train: 500,
                attribute_test: 300,
                ..d.attacks.clone()
            },
            seeds: vec![0, 1, 2],
            ..d
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `section.key=value` overrides; values are TOML literals, bare
    /// words are taken as strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for set in sets {
            let (path, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {set:?} is not key=value")))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.trim().to_string()),
            };
            let keys: Vec<&str> = path.trim().split('.').collect();
            let (last, parents) = keys.split_last().expect("split yields one item");
            let mut table = &mut root;
            for k in parents {
                table = table
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{path}: {k} is not a section")))?;
            }
            table.insert(last.to_string(), value);
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.stft.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.stft.num_frames(self.generator.window_len).is_none() {
            return cfg_err(format!(
                "window_len {} is shorter than fft_size {}",
                self.generator.window_len, self.stft.fft_size
            ));
        }
        let shape = self.feature_shape();
        if self.partition.block_h == 0
            || self.partition.block_w == 0
            || self.partition.block_h > shape.frames
            || self.partition.block_w > shape.bins
        {
            return cfg_err(format!(
                "block {}x{} does not fit the {}x{} feature grid",
                self.partition.block_h, self.partition.block_w, shape.frames, shape.bins
            ));
        }
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 1.0) {
            return cfg_err(format!("clip_percentile must be in (0, 1], got {}", self.clip_percentile));
        }
        if !(self.allocation.eps_min_ratio >= 1.0) || !(self.allocation.gamma >= 1.0) {
            return cfg_err("allocation needs eps_min_ratio >= 1 and gamma >= 1".into());
        }
        if self.dp.eps_targets.is_empty() || self.dp.eps_targets.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return cfg_err("eps_targets must be a non-empty list of positive values".into());
        }
        if !(self.dp.delta > 0.0 && self.dp.delta < 1.0) {
            return cfg_err(format!("delta must be in (0, 1), got {}", self.dp.delta));
        }
        if self.dp.modes.is_empty() || self.dp.releases_per_window == 0 {
            return cfg_err("need at least one mode and releases_per_window >= 1".into());
        }
        if let Some(cap) = self.dp.budget_cap {
            if !(cap > 0.0) {
                return cfg_err(format!("budget_cap must be positive, got {cap}"));
            }
        }
        if self.seeds.is_empty() {
            return cfg_err("need at least one seed".into());
        }
        let d = &self.data;
        if d.train_windows < 2 || d.test_windows < 2 {
            return cfg_err("need at least 2 train and 2 test windows".into());
        }
        let a = &self.attacks;
        if a.shadow_models < 2 || d.attacker_windows < 4 * a.shadow_models {
            return cfg_err("need at least 2 shadow models and 4 attacker windows per model".into());
        }
        if a.attribute_train + a.attribute_test > d.train_windows || a.attribute_train == 0 || a.attribute_test == 0 {
            return cfg_err("attribute attack splits must fit inside the training split".into());
        }
        if a.mia_candidates == 0 {
            return cfg_err("mia_candidates must be positive".into());
        }
        Ok(())
    }

    pub fn feature_shape(&self) -> Shape {
        self.stft
            .feature_shape(self.generator.window_len)
            .unwrap_or(Shape::new(0, 0))
    }

    /// Frequency bins covered by the activity tones.
    pub fn activity_bins(&self) -> std::ops::Range<usize> {
        let res = self.generator.sample_rate / self.stft.fft_size as f64;
        let centers = self.generator.activity_centers();
        let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - self.generator.channel.doppler_spread_hz;
        let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + self.generator.channel.doppler_spread_hz;
        let bins = self.feature_shape().bins;
        let lo = ((lo.abs() / res).floor() as usize).min(bins - 1);
        let hi = ((hi.abs() / res).ceil() as usize + 1).min(bins);
        lo.min(hi - 1)..hi
    }

    pub fn respiration_bins(&self) -> RateBins {
        RateBins {
            lo_hz: 0.15,
            hi_hz: 0.55,
            count: 8,
        }
    }
}

/// How much the reported ε can be trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guarantee {
    /// Allocation independent of the released record.
    Formal,
    /// Allocation computed from the released record itself.
    Heuristic,
    /// No noise added.
    None,
}

impl Guarantee {
    pub fn as_str(&self) -> &'static str {
        match self {
            Guarantee::Formal => "formal",
            Guarantee::Heuristic => "heuristic",
            Guarantee::None => "none",
        }
    }
}

pub fn guarantee_for(mode: MechanismMode, scope: ImportanceScope) -> Guarantee {
    match (mode, scope) {
        (MechanismMode::NoDp, _) => Guarantee::None,
        (MechanismMode::Adaptive | MechanismMode::Heuristic, ImportanceScope::PerSample) => Guarantee::Heuristic,
        _ => Guarantee::Formal,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub frames: usize,
    pub bins: usize,
    pub block_h: usize,
    pub block_w: usize,
    pub num_blocks: usize,
    pub id: String,
}

impl From<&BlockPartition> for PartitionInfo {
    fn from(p: &BlockPartition) -> Self {
        Self {
            frames: p.shape.frames,
            bins: p.shape.bins,
            block_h: p.block_h,
            block_w: p.block_w,
            num_blocks: p.num_blocks(),
            id: p.id(),
        }
    }
}

/// Everything needed to reproduce and audit one release run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseManifest {
    pub mechanism_mode: MechanismMode,
    pub importance_scope: ImportanceScope,
    pub guarantee_label: Guarantee,
    pub seed: u64,
    pub norm_stats_id: String,
    pub clip_c: f64,
    pub stft: StftConfig,
    pub partition: PartitionInfo,
    pub eps_min: f64,
    pub eps_max: f64,
    pub gamma: f64,
    pub target_eps: Option<f64>,
    /// Common noise multiplier κ from calibration (per-window maximum when
    /// allocation is per window).
    pub calibration_scale: Option<f64>,
    pub delta: f64,
    pub alpha_grid: Vec<f64>,
    pub releases_per_window: u64,
    pub budget_cap_eps: Option<f64>,
    /// ε(δ) charged to the most exposed window; recomputable from the ledger.
    pub reported_eps: Option<f64>,
    pub ledger_file: String,
    pub rng_stream: String,
    pub noise_seed: u64,
    pub released_windows: usize,
    pub withheld_windows: usize,
}

impl ReleaseManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespirationMetrics {
    pub rate_mae_bpm: f64,
    pub waveform_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: MechanismMode,
    pub eps: Option<f64>,
    pub seed: u64,
    pub guarantee: Guarantee,
    pub calibration_scale: Option<f64>,
    pub reported_eps: Option<f64>,
    pub released_windows: usize,
    pub utility: Metrics,
    pub released_utility: Metrics,
    pub respiration: Option<RespirationMetrics>,
    pub mia: AttackReport,
    pub subject: AttackReport,
    pub room: AttackReport,
}

impl RunRecord {
    pub fn key(&self) -> String {
        format!("{}_eps{}_seed{}", self.mode, fmt_eps(self.eps), self.seed)
    }

    /// `(metric, value)` pairs in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![
            ("accuracy", self.utility.accuracy),
            ("macro_f1", self.utility.macro_f1),
            ("released_test_accuracy", self.released_utility.accuracy),
            ("released_test_macro_f1", self.released_utility.macro_f1),
        ];
        if let Some(r) = &self.respiration {
            m.push(("rate_mae_bpm", r.rate_mae_bpm));
            m.push(("waveform_corr", r.waveform_corr));
        }
        m.push(("mia_auc", self.mia.auc));
        m.push(("mia_advantage", self.mia.advantage));
        m.push(("subject_top1", self.subject.top1.unwrap_or(f64::NAN)));
        m.push(("room_top1", self.room.top1.unwrap_or(f64::NAN)));
        m
    }
}

pub fn fmt_eps(eps: Option<f64>) -> String {
    eps.map_or_else(|| "inf".to_string(), |e| e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// The owner's fitted pipeline: everything a release needs besides the
/// windows themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnerModel {
    pub seed: u64,
    pub shape: Shape,
    pub norm_stats: NormStats,
    pub clip_c: f64,
    pub surrogate: SurrogateModel,
    /// Mean clean training feature, published with the norm stats.
    pub public_mean: Vec<f64>,
    pub gradient_map: ImportanceMap,
    pub energy_map: ImportanceMap,
    pub random_map: ImportanceMap,
}

impl OwnerModel {
    /// Fit normalization, clip threshold, surrogate and importance maps on
    /// the training spectrograms. Also returns the clipped training features.
    pub fn fit(
        cfg: &ExperimentConfig,
        seed: u64,
        train: &[Spectrogram],
        activity: &[usize],
    ) -> Result<(Self, Vec<ClippedFeature>)> {
        if train.len() != activity.len() {
            return Err(Error::invalid("one activity label per training window"));
        }
        let norm_stats = fit_norm_stats(train)?;
        let eps0 = cfg.stft.eps0;
        let bounded: Vec<BoundedFeature> = train
            .par_iter()
            .map(|s| normalize_bounded(s, &norm_stats, eps0))
            .collect::<Result<_>>()?;
        let clip_c = fit_clip_threshold(&bounded, cfg.clip_percentile)?;
        if !(clip_c > 0.0) {
            return Err(Error::DegenerateInput("all training features are zero".into()));
        }
        let feats: Vec<ClippedFeature> = bounded.par_iter().map(|x| clip_l2(x, clip_c)).collect::<Result<_>>()?;
        drop(bounded);
        let shape = feats[0].shape;

        let xs: Vec<Vec<f64>> = feats.iter().map(|x| x.values.clone()).collect();
        let surrogate = train_with(
            &SurrogateModel::zeros(cfg.generator.num_activities, shape.len()),
            &xs,
            activity,
            &TrainConfig {
                seed: derive_seed(seed, &[0x5a7e]),
                ..cfg.surrogate.clone()
            },
            &InputTransform::default(),
        )?;
        let public_mean = mean_vector(&xs);
        drop(xs);
        let gradient_map = cohort_gradient_importance(&surrogate, &feats, activity, cfg.importance.eps0)?;
        let energy_map = cohort_energy_importance(&feats)?;
        let random_map = random_importance(shape, derive_seed(seed, &[TAG_RANDOM_MAP]))?;
        let owner = Self {
            seed,
            shape,
            norm_stats,
            clip_c,
            surrogate,
            public_mean,
            gradient_map,
            energy_map,
            random_map,
        };
        Ok((owner, feats))
    }

    /// Normalize and clip spectrograms with the fitted statistics.
    pub fn features(&self, cfg: &ExperimentConfig, specs: &[Spectrogram]) -> Result<Vec<ClippedFeature>> {
        specs
            .par_iter()
            .map(|s| clip_l2(&normalize_bounded(s, &self.norm_stats, cfg.stft.eps0)?, self.clip_c))
            .collect()
    }

    pub fn partition(&self, cfg: &ExperimentConfig) -> Result<BlockPartition> {
        make_partition(self.shape.frames, self.shape.bins, cfg.partition.block_h, cfg.partition.block_w)
    }

    pub fn cohort_map(&self, mode: MechanismMode) -> Option<&ImportanceMap> {
        match mode {
            MechanismMode::Adaptive => Some(&self.gradient_map),
            MechanismMode::Heuristic => Some(&self.energy_map),
            MechanismMode::Random => Some(&self.random_map),
            _ => None,
        }
    }

    /// `(metric, value)` diagnostics of the fit, scored on clean held-out
    /// features.
    pub fn diagnostics(
        &self,
        cfg: &ExperimentConfig,
        test: &[ClippedFeature],
        activity: &[usize],
    ) -> Result<Vec<(&'static str, f64)>> {
        let xs: Vec<Vec<f64>> = test.iter().map(|x| x.values.clone()).collect();
        let m = evaluate(&self.surrogate, &xs, activity)?;
        let band = cfg.activity_bins();
        Ok(vec![
            ("clip_c", self.clip_c),
            ("surrogate_accuracy", m.accuracy),
            ("gradient_band_mass", self.gradient_map.mass_in_bins(band.clone())),
            ("energy_band_mass", self.energy_map.mass_in_bins(band)),
        ])
    }
}

/// Owner-side artifacts for one seed.
pub struct SeedData {
    pub owner: OwnerModel,
    pub gen: GenConfig,
    pub train: Vec<ClippedFeature>,
    pub train_labels: Vec<WindowLabels>,
    pub test: Vec<ClippedFeature>,
    pub test_labels: Vec<WindowLabels>,
    pub pool: Vec<ClippedFeature>,
    pub pool_labels: Vec<WindowLabels>,
    /// True respiration rate and waveform samples per frame, test split.
    pub test_breath: Vec<Option<(f64, Vec<f64>)>>,
    pub train_breath_rate: Vec<Option<f64>>,
}

/// One synthetic window as the producer receives it, packet loss included.
pub fn synth_window(gen: &GenConfig, labels: WindowLabels, index: u64) -> Result<CsiWindow> {
    let w = generate_window(gen, labels, index)?;
    if gen.packet_loss_rate > 0.0 {
        Ok(drop_packets(&w, gen.packet_loss_rate, derive_seed(gen.seed, &[TAG_DROP, index])))
    } else {
        Ok(w)
    }
}

/// Resample onto the uniform grid when packets were lost, then take the
/// magnitude spectrogram.
pub fn preprocess(cfg: &ExperimentConfig, stft: &Stft, w: &CsiWindow) -> Result<Spectrogram> {
    let len = cfg.generator.window_len;
    if cfg.generator.packet_loss_rate > 0.0 || w.len() != len {
        stft.magnitude(&resample_uniform(w, len)?)
    } else {
        stft.magnitude(w)
    }
}

/// True breathing rate and waveform sampled at frame centers.
pub fn breath_truth(cfg: &ExperimentConfig, w: &CsiWindow) -> Option<(f64, Vec<f64>)> {
    let frames = cfg.stft.num_frames(cfg.generator.window_len).unwrap_or(0);
    let (hop, n_fft) = (cfg.stft.hop as f64, cfg.stft.fft_size as f64);
    w.respiration.map(|r| {
        let wave = (0..frames)
            .map(|m| r.waveform((m as f64 * hop + n_fft / 2.0) / w.sample_rate))
            .collect();
        (r.rate_hz, wave)
    })
}

struct Windowed {
    spec: Spectrogram,
    breath: Option<(f64, Vec<f64>)>,
}

fn synthesize(cfg: &ExperimentConfig, gen: &GenConfig, stft: &Stft, labels: &[WindowLabels], first_index: u64) -> Result<Vec<Windowed>> {
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            let w = synth_window(gen, l, first_index + i as u64)?;
            Ok(Windowed {
                spec: preprocess(cfg, stft, &w)?,
                breath: breath_truth(cfg, &w),
            })
        })
        .collect()
}

/// Labels of the train, test and attacker splits of a seed, in that order.
pub fn split_labels(cfg: &ExperimentConfig, seed: u64) -> [Vec<WindowLabels>; 3] {
    let gen = &cfg.generator;
    let d = &cfg.data;
    let mut rng = NoiseStream::new(derive_seed(seed, &[TAG_LABELS]), 0);
    let mut draw = |n: usize, member: bool| -> Vec<WindowLabels> {
        (0..n)
            .map(|_| WindowLabels {
                activity: rng.below(gen.num_activities as u64) as usize,
                subject: rng.below(gen.num_subjects as u64) as usize,
                room: rng.below(gen.num_rooms as u64) as usize,
                member,
            })
            .collect()
    };
    let train = draw(d.train_windows, true);
    let test = draw(d.test_windows, false);
    let pool = draw(d.attacker_windows, false);
    [train, test, pool]
}

/// Generator settings of a seed.
pub fn seed_generator(cfg: &ExperimentConfig, seed: u64) -> GenConfig {
    GenConfig {
        seed,
        ..cfg.generator.clone()
    }
}

/// Generate data and fit the owner's pipeline for one seed.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let gen = seed_generator(cfg, seed);
    let stft = Stft::new(&cfg.stft)?;
    let d = &cfg.data;
    let [train_l, test_l, pool_l] = split_labels(cfg, seed);

    let train_w = synthesize(cfg, &gen, &stft, &train_l, 0)?;
    let test_w = synthesize(cfg, &gen, &stft, &test_l, d.train_windows as u64)?;
    let pool_w = synthesize(cfg, &gen, &stft, &pool_l, (d.train_windows + d.test_windows) as u64)?;

    let train_specs: Vec<Spectrogram> = train_w.iter().map(|w| w.spec.clone()).collect();
    let activity: Vec<usize> = train_l.iter().map(|l| l.activity).collect();
    let (owner, train) = OwnerModel::fit(cfg, seed, &train_specs, &activity)?;
    drop(train_specs);
    let specs = |ws: &[Windowed]| -> Vec<Spectrogram> { ws.iter().map(|w| w.spec.clone()).collect() };
    let test = owner.features(cfg, &specs(&test_w))?;
    let pool = owner.features(cfg, &specs(&pool_w))?;

    Ok(SeedData {
        owner,
        gen,
        train_breath_rate: train_w.iter().map(|w| w.breath.as_ref().map(|b| b.0)).collect(),
        test_breath: test_w.into_iter().map(|w| w.breath).collect(),
        train,
        train_labels: train_l,
        test,
        test_labels: test_l,
        pool,
        pool_labels: pool_l,
    })
}

impl SeedData {
    pub fn diagnostics(&self, cfg: &ExperimentConfig) -> Result<Vec<(&'static str, f64)>> {
        let ys: Vec<usize> = self.test_labels.iter().map(|l| l.activity).collect();
        self.owner.diagnostics(cfg, &self.test, &ys)
    }
}

fn mechanism_params(cfg: &ExperimentConfig, partition: &BlockPartition, clip_c: f64, eps: Option<f64>) -> MechanismParams {
    MechanismParams {
        partition: partition.clone(),
        eps_min: 1.0,
        eps_max: cfg.allocation.eps_min_ratio,
        gamma: cfg.allocation.gamma,
        clip_c,
        calibration: match eps {
            Some(eps) => NoiseCalibration::Target {
                eps,
                delta: cfg.dp.delta,
                releases_per_window: cfg.dp.releases_per_window,
            },
            None => NoiseCalibration::Fixed { kappa: 1.0 },
        },
    }
}

/// The plan built from the owner's cohort map for `mode`. Every record
/// shares it unless allocation is per window.
pub fn cohort_plan(cfg: &ExperimentConfig, owner: &OwnerModel, mode: MechanismMode, eps: Option<f64>) -> Result<ReleasePlan> {
    let params = mechanism_params(cfg, &owner.partition(cfg)?, owner.clip_c, eps);
    plan(owner.cohort_map(mode), mode, &params)
}

/// The plans used to release a set of records: one shared plan, or one per
/// record when allocation is per window.
enum Plans {
    Shared(ReleasePlan),
    PerRecord(Vec<ReleasePlan>),
}

impl Plans {
    fn get(&self, i: usize) -> &ReleasePlan {
        match self {
            Plans::Shared(p) => p,
            Plans::PerRecord(v) => &v[i],
        }
    }

    /// Per-cell noise std for whitening: the shared σ map, or the RMS over
    /// records.
    fn cell_sigma(&self, partition: &BlockPartition) -> Option<Vec<f64>> {
        let cells = partition.cell_blocks();
        let var_by_block: Vec<f64> = match self {
            Plans::Shared(p) => p.sigmas.iter().map(|s| s * s).collect(),
            Plans::PerRecord(v) => {
                let mut acc = vec![0.0; partition.num_blocks()];
                for p in v {
                    acc.iter_mut().zip(&p.sigmas).for_each(|(a, s)| *a += s * s);
                }
                acc.iter().map(|a| a / v.len().max(1) as f64).collect()
            }
        };
        if var_by_block.iter().all(|v| *v == 0.0) {
            return None;
        }
        Some(cells.iter().map(|&b| var_by_block[b].sqrt()).collect())
    }
}

fn make_plans(
    cfg: &ExperimentConfig,
    owner: &OwnerModel,
    records: &[ClippedFeature],
    labels: &[WindowLabels],
    mode: MechanismMode,
    eps: Option<f64>,
) -> Result<Plans> {
    let per_sample = cfg.importance.scope == ImportanceScope::PerSample
        && matches!(mode, MechanismMode::Adaptive | MechanismMode::Heuristic);
    if !per_sample {
        return Ok(Plans::Shared(cohort_plan(cfg, owner, mode, eps)?));
    }
    let params = mechanism_params(cfg, &owner.partition(cfg)?, owner.clip_c, eps);
    let plans = records
        .par_iter()
        .zip(labels)
        .map(|(x, l)| {
            let map = match mode {
                MechanismMode::Adaptive => gradient_importance(&owner.surrogate, x, l.activity, cfg.importance.eps0)?,
                _ => energy_importance(x)?,
            };
            plan(Some(&map), mode, &params)
        })
        .collect::<Result<_>>()?;
    Ok(Plans::PerRecord(plans))
}

/// Seed of the noise streams of a seed's releases. Every mode and ε of a
/// seed scales the same standard normal draws (common random numbers), so
/// curve differences come from the mechanism rather than the draws.
pub fn noise_seed(seed: u64) -> u64 {
    derive_seed(seed, &[TAG_NOISE])
}

/// Outcome of releasing a set of records under one mode and ε.
pub struct SplitRelease {
    pub features: Vec<NoisyFeature>,
    /// Index into the input of each released record.
    pub kept: Vec<usize>,
    /// Records the budget cap held back.
    pub withheld: usize,
    /// Per-cell noise std, published for whitening.
    pub cell_sigma: Option<Vec<f64>>,
    /// Events charged to the most exposed released record.
    pub ledger_events: Vec<GaussianEvent>,
    pub reported_eps: Option<f64>,
    pub calibration_scale: Option<f64>,
}

/// Release `records` (stream ids from `first_stream` on), enforcing the
/// budget cap with `dp.cap_policy`.
pub fn release_records(
    cfg: &ExperimentConfig,
    owner: &OwnerModel,
    records: &[ClippedFeature],
    labels: &[WindowLabels],
    mode: MechanismMode,
    eps: Option<f64>,
    first_stream: u64,
) -> Result<SplitRelease> {
    let cap = cfg.dp.budget_cap;
    let eps = match (cap, cfg.dp.cap_policy) {
        (Some(c), CapPolicy::ShrinkBudget) => eps.map(|e| e.min(c)),
        _ => eps,
    };
    let plans = make_plans(cfg, owner, records, labels, mode, eps)?;
    let delta = cfg.dp.delta;
    let reps = cfg.dp.releases_per_window;
    let nsid = owner.norm_stats.id();
    // Releases charged to a window and their ε. Under the cap, `stop`
    // withholds the window and `downsample` charges as many releases as fit.
    let charge = |events: &[GaussianEvent]| -> Option<(u64, f64)> {
        let mut acct = AccountantState::new(delta);
        let mut best = None;
        for k in 1..=reps {
            acct.compose(events);
            let e = acct.epsilon();
            if cap.is_some_and(|c| e > c) {
                break;
            }
            best = Some((k, e));
        }
        match best {
            Some((k, _)) if k < reps && cfg.dp.cap_policy != CapPolicy::Downsample => None,
            b => b,
        }
    };
    let shared = match &plans {
        Plans::Shared(p) if p.mode != MechanismMode::NoDp => Some(charge(&p.events())),
        _ => None,
    };
    let noise = noise_seed(owner.seed);
    let out: Vec<Option<(NoisyFeature, u64, f64)>> = records
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let p = plans.get(i);
            let charged = if p.mode == MechanismMode::NoDp {
                Some((0, 0.0))
            } else if let Some(c) = shared {
                c
            } else {
                charge(&p.events())
            };
            let Some((k, e)) = charged else {
                return Ok(None);
            };
            let (mut f, _) = p.apply(x, noise, first_stream + i as u64)?;
            f.norm_stats_id = nsid.clone();
            Ok(Some((f, k, e)))
        })
        .collect::<Result<_>>()?;
    if !out.is_empty() && out.iter().all(Option::is_none) {
        return Err(Error::Calibration(format!(
            "budget cap withholds every window for {mode} at eps {}",
            fmt_eps(eps)
        )));
    }
    let mut features = Vec::with_capacity(out.len());
    let mut kept = Vec::with_capacity(out.len());
    let mut worst: Option<(usize, u64, f64)> = None;
    let mut withheld = 0;
    for (i, o) in out.into_iter().enumerate() {
        match o {
            Some((f, k, e)) => {
                if plans.get(i).mode != MechanismMode::NoDp && worst.is_none_or(|(_, _, w)| e > w) {
                    worst = Some((i, k, e));
                }
                features.push(f);
                kept.push(i);
            }
            None => withheld += 1,
        }
    }
    let (ledger_events, reported_eps, calibration_scale) = match worst {
        Some((i, k, _)) => {
            let p = plans.get(i);
            let events = vec_repeat(&p.events(), k);
            let mut a = AccountantState::new(delta);
            a.compose(&events);
            (events, Some(a.epsilon()), Some(p.kappa))
        }
        None => (Vec::new(), None, None),
    };
    Ok(SplitRelease {
        features,
        kept,
        withheld,
        cell_sigma: plans.cell_sigma(&owner.partition(cfg)?),
        ledger_events,
        reported_eps,
        calibration_scale,
    })
}

fn vec_repeat(events: &[GaussianEvent], times: u64) -> Vec<GaussianEvent> {
    let mut v = Vec::with_capacity(events.len() * times as usize);
    for _ in 0..times {
        v.extend_from_slice(events);
    }
    v
}

/// Manifest of a release; the ledger path is recorded as given.
pub fn release_manifest(
    cfg: &ExperimentConfig,
    owner: &OwnerModel,
    mode: MechanismMode,
    eps: Option<f64>,
    r: &SplitRelease,
    ledger_file: String,
) -> Result<ReleaseManifest> {
    let partition = owner.partition(cfg)?;
    let params = mechanism_params(cfg, &partition, owner.clip_c, eps);
    Ok(ReleaseManifest {
        mechanism_mode: mode,
        importance_scope: cfg.importance.scope,
        guarantee_label: guarantee_for(mode, cfg.importance.scope),
        seed: owner.seed,
        norm_stats_id: owner.norm_stats.id(),
        clip_c: owner.clip_c,
        stft: cfg.stft.clone(),
        partition: PartitionInfo::from(&partition),
        eps_min: params.eps_min,
        eps_max: params.eps_max,
        gamma: params.gamma,
        target_eps: eps,
        calibration_scale: r.calibration_scale,
        delta: cfg.dp.delta,
        alpha_grid: default_alpha_grid(),
        releases_per_window: cfg.dp.releases_per_window,
        budget_cap_eps: cfg.dp.budget_cap,
        reported_eps: r.reported_eps,
        ledger_file,
        rng_stream: STREAM_ALGORITHM.to_string(),
        noise_seed: noise_seed(owner.seed),
        released_windows: r.features.len(),
        withheld_windows: r.withheld,
    })
}

/// Write a ledger holding `events`, one logical time unit per release of
/// the window.
pub fn write_ledger(path: &Path, manifest: &ReleaseManifest, events: &[GaussianEvent]) -> Result<()> {
    let mut ledger = LedgerWriter::create(path, &manifest.alpha_grid, manifest.delta)?;
    for (i, e) in events.iter().enumerate() {
        let t = (i / manifest.partition.num_blocks.max(1)) as f64;
        ledger.record(e, t)?;
    }
    ledger.flush()
}

/// Train the downstream model on released features: centered with the public
/// mean, whitened by the published noise scales, no bias.
pub fn train_consumer(
    cfg: &TrainConfig,
    released: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    public_mean: &[f64],
    cell_sigma: Option<&[f64]>,
    seed: u64,
) -> Result<SurrogateModel> {
    let dim = public_mean.len();
    train_with(
        &SurrogateModel::zeros(num_classes, dim),
        released,
        labels,
        &TrainConfig { seed, ..cfg.clone() },
        &InputTransform {
            mean: Some(public_mean.to_vec()),
            scale: cell_sigma.map(|s| s.iter().map(|v| v.max(1e-12)).collect()),
        },
    )
}

fn run_tag(mode: MechanismMode, eps: Option<f64>) -> [u64; 2] {
    let m = MechanismMode::ALL.iter().position(|m| *m == mode).unwrap() as u64;
    [m, eps.map_or(u64::MAX, f64::to_bits)]
}

/// The consumer model of one run, trained on its released features.
pub fn fit_consumer(
    cfg: &ExperimentConfig,
    owner: &OwnerModel,
    mode: MechanismMode,
    eps: Option<f64>,
    released: &[Vec<f64>],
    activity: &[usize],
    cell_sigma: Option<&[f64]>,
) -> Result<SurrogateModel> {
    let [m, e] = run_tag(mode, eps);
    train_consumer(
        &cfg.consumer,
        released,
        activity,
        cfg.generator.num_activities,
        &owner.public_mean,
        cell_sigma,
        derive_seed(owner.seed, &[0xc0, m, e]),
    )
}

/// Accuracy and macro-F1 of `model`; NaN metrics when there is nothing to score.
pub fn score(model: &SurrogateModel, x: &[Vec<f64>], y: &[usize]) -> Result<Metrics> {
    if x.is_empty() {
        return Ok(Metrics {
            accuracy: f64::NAN,
            macro_f1: f64::NAN,
            per_class_f1: vec![],
        });
    }
    evaluate(model, x, y)
}

/// What the attacks of one release get to see.
pub struct AttackData<'a> {
    pub released: &'a [Vec<f64>],
    pub released_labels: &'a [WindowLabels],
    /// Clean features of the released records, aligned with `released`.
    pub members: &'a [Vec<f64>],
    pub nonmembers: &'a [Vec<f64>],
    pub nonmember_labels: &'a [WindowLabels],
    /// The attacker's own windows.
    pub pool: &'a [Vec<f64>],
    pub pool_labels: &'a [WindowLabels],
    pub cell_sigma: Option<&'a [f64]>,
}

pub struct AttackResults {
    pub mia: AttackReport,
    pub subject: AttackReport,
    pub room: AttackReport,
}

/// Membership inference against the consumer model and subject and room
/// inference from the released features.
pub fn run_attacks(
    cfg: &ExperimentConfig,
    owner: &OwnerModel,
    mode: MechanismMode,
    eps: Option<f64>,
    consumer: &SurrogateModel,
    d: &AttackData<'_>,
) -> Result<AttackResults> {
    let k = cfg.generator.num_activities;
    let tag = run_tag(mode, eps);

    // Membership: clean candidates, half of them released members.
    let m = cfg.attacks.mia_candidates.min(d.members.len()).min(d.nonmembers.len());
    let mut cand_x: Vec<Vec<f64>> = d.members[..m].to_vec();
    let mut cand_y: Vec<usize> = d.released_labels[..m].iter().map(|l| l.activity).collect();
    cand_x.extend(d.nonmembers[..m].iter().cloned());
    cand_y.extend(d.nonmember_labels[..m].iter().map(|l| l.activity));
    let member: Vec<bool> = (0..2 * m).map(|i| i < m).collect();
    let pool_y: Vec<usize> = d.pool_labels.iter().map(|l| l.activity).collect();
    // The attacker has no access to per-window maps; it mimics the mechanism
    // with the cohort allocation of the same mode.
    let shadow_plan = cohort_plan(cfg, owner, mode, eps)?;
    let pipeline = |x: &[Vec<f64>], y: &[usize], s: u64| -> Result<(Vec<Vec<f64>>, SurrogateModel)> {
        let shadow_noise = derive_seed(s, &[TAG_SHADOW_NOISE]);
        let released: Vec<Vec<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = ClippedFeature {
                    shape: owner.shape,
                    values: v.clone(),
                    clip_c: owner.clip_c,
                    original_norm: 0.0,
                };
                Ok(shadow_plan.apply(&c, shadow_noise, i as u64)?.0.values)
            })
            .collect::<Result<_>>()?;
        let model = train_consumer(&cfg.consumer, &released, y, k, &owner.public_mean, d.cell_sigma, s)?;
        Ok((released, model))
    };
    let mia_cfg = MiaConfig {
        shadow_models: cfg.attacks.shadow_models,
        input: cfg.attacks.mia_input,
        ..MiaConfig::default()
    };
    let mia = shadow_mia(
        Target {
            model: consumer,
            released: d.released,
        },
        Candidates {
            x: &cand_x,
            y: &cand_y,
            member: &member,
        },
        d.pool,
        &pool_y,
        &pipeline,
        &mia_cfg,
        derive_seed(owner.seed, &[TAG_MIA, tag[0], tag[1]]),
    )?;

    let n = d.released.len();
    let a_tr = cfg.attacks.attribute_train.min(n / 2);
    let a_te = cfg.attacks.attribute_test.min(n - a_tr);
    let transform = InputTransform {
        mean: None,
        scale: d.cell_sigma.map(<[f64]>::to_vec),
    };
    let attack = |attr: Attribute| -> Result<AttackReport> {
        let (classes, y): (usize, Vec<usize>) = match attr {
            Attribute::SubjectId => (cfg.generator.num_subjects, d.released_labels.iter().map(|l| l.subject).collect()),
            Attribute::RoomId => (cfg.generator.num_rooms, d.released_labels.iter().map(|l| l.room).collect()),
        };
        attribute_inference(
            &d.released[..a_tr],
            &y[..a_tr],
            &d.released[a_tr..a_tr + a_te],
            &y[a_tr..a_tr + a_te],
            classes,
            &cfg.attacks.attacker_train,
            &transform,
        )
    };
    Ok(AttackResults {
        mia,
        subject: attack(Attribute::SubjectId)?,
        room: attack(Attribute::RoomId)?,
    })
}

struct RunOutput {
    record: RunRecord,
    manifest: ReleaseManifest,
    ledger_events: Vec<GaussianEvent>,
    samples: Vec<NoisyFeature>,
}

fn values(xs: &[ClippedFeature]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| x.values.clone()).collect()
}

fn run_one(cfg: &ExperimentConfig, data: &SeedData, mode: MechanismMode, eps: Option<f64>) -> Result<RunOutput> {
    let owner = &data.owner;
    let released = release_records(cfg, owner, &data.train, &data.train_labels, mode, eps, 0)?;
    let released_test = release_records(
        cfg,
        owner,
        &data.test,
        &data.test_labels,
        mode,
        eps,
        data.train.len() as u64,
    )?;

    let cell_sigma = released.cell_sigma.as_deref();
    let rel_x: Vec<Vec<f64>> = released.features.iter().map(|f| f.values.clone()).collect();
    let rel_labels: Vec<WindowLabels> = released.kept.iter().map(|&i| data.train_labels[i]).collect();
    let rel_y: Vec<usize> = rel_labels.iter().map(|l| l.activity).collect();
    let consumer = fit_consumer(cfg, owner, mode, eps, &rel_x, &rel_y, cell_sigma)?;

    let test_x = values(&data.test);
    let test_y: Vec<usize> = data.test_labels.iter().map(|l| l.activity).collect();
    let utility = score(&consumer, &test_x, &test_y)?;
    let rt_x: Vec<Vec<f64>> = released_test.features.iter().map(|f| f.values.clone()).collect();
    let rt_y: Vec<usize> = released_test.kept.iter().map(|&i| test_y[i]).collect();
    let released_utility = score(&consumer, &rt_x, &rt_y)?;

    let respiration = if data.gen.respiration {
        let rel_rates: Vec<Option<f64>> = released.kept.iter().map(|&i| data.train_breath_rate[i]).collect();
        let rt_breath: Vec<Option<(f64, Vec<f64>)>> =
            released_test.kept.iter().map(|&i| data.test_breath[i].clone()).collect();
        Some(respiration_metrics(
            cfg,
            owner.shape,
            &rel_x,
            &rel_rates,
            &test_x,
            &data.test_breath,
            &rt_x,
            &rt_breath,
        )?)
    } else {
        None
    };

    let members: Vec<Vec<f64>> = released.kept.iter().map(|&i| data.train[i].values.clone()).collect();
    let attacks = run_attacks(
        cfg,
        owner,
        mode,
        eps,
        &consumer,
        &AttackData {
            released: &rel_x,
            released_labels: &rel_labels,
            members: &members,
            nonmembers: &test_x,
            nonmember_labels: &data.test_labels,
            pool: &values(&data.pool),
            pool_labels: &data.pool_labels,
            cell_sigma,
        },
    )?;

    let record = RunRecord {
        mode,
        eps,
        seed: owner.seed,
        guarantee: guarantee_for(mode, cfg.importance.scope),
        calibration_scale: released.calibration_scale,
        reported_eps: released.reported_eps,
        released_windows: released.features.len(),
        utility,
        released_utility,
        respiration,
        mia: attacks.mia,
        subject: attacks.subject,
        room: attacks.room,
    };
    let manifest = release_manifest(cfg, owner, mode, eps, &released, format!("ledgers/{}.csv", record.key()))?;
    let samples = released
        .features
        .into_iter()
        .take(cfg.output.released_samples)
        .collect();
    Ok(RunOutput {
        record,
        manifest,
        ledger_events: released.ledger_events,
        samples,
    })
}

/// Breathing-rate error and waveform correlation. A rate model is trained on
/// rate spectra of the released training features and scored on clean test
/// features; the correlation is measured on released test features.
#[allow(clippy::too_many_arguments)]
pub fn respiration_metrics(
    cfg: &ExperimentConfig,
    shape: Shape,
    released: &[Vec<f64>],
    released_rates: &[Option<f64>],
    test: &[Vec<f64>],
    test_breath: &[Option<(f64, Vec<f64>)>],
    released_test: &[Vec<f64>],
    released_test_breath: &[Option<(f64, Vec<f64>)>],
) -> Result<RespirationMetrics> {
    let frame_rate = cfg.generator.sample_rate / cfg.stft.hop as f64;
    let bins = 0..2.min(shape.bins);
    let n_spec = 25;
    let rb = cfg.respiration_bins();
    let feats = |v: &[f64]| -> Result<Vec<f64>> {
        let p = respiration_profile(v, shape, bins.clone(), frame_rate, BREATH_BAND_HZ)?;
        let s = rate_spectrum(&p, frame_rate, BREATH_BAND_HZ, n_spec);
        // Only the shape of the spectrum carries the rate.
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        Ok(s.iter().map(|v| v / norm).collect())
    };
    let tr_x: Vec<Vec<f64>> = released.par_iter().map(|v| feats(v)).collect::<Result<_>>()?;
    let tr_y: Vec<usize> = released_rates
        .iter()
        .map(|r| rb.class_of(r.unwrap_or(rb.lo_hz)))
        .collect();
    let model = train_with(
        &SurrogateModel::zeros(rb.count, n_spec),
        &tr_x,
        &tr_y,
        &TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        },
        &InputTransform::default(),
    )?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (x, b) in test.iter().zip(test_breath) {
        if let Some((rate, _)) = b {
            pred.push(rb.decode(&model.predict_proba(&feats(x)?)?));
            truth.push(*rate);
        }
    }
    let mut corr = Vec::new();
    for (x, b) in released_test.iter().zip(released_test_breath) {
        if let Some((_, wave)) = b {
            let p = respiration_profile(x, shape, bins.clone(), frame_rate, BREATH_BAND_HZ)?;
            corr.push(pearson(&p, wave));
        }
    }
    Ok(RespirationMetrics {
        rate_mae_bpm: if pred.is_empty() { f64::NAN } else { rate_mae_bpm(&pred, &truth)? },
        waveform_corr: corr.iter().sum::<f64>() / corr.len().max(1) as f64,
    })
}

/// Results of a full experiment.
pub struct ExperimentResults {
    pub records: Vec<RunRecord>,
    pub manifests: Vec<ReleaseManifest>,
    pub diagnostics: Vec<(u64, &'static str, f64)>,
}

/// Every (mode, ε) pair of a config, `NoDp` once.
pub fn run_grid(cfg: &ExperimentConfig) -> Vec<(MechanismMode, Option<f64>)> {
    let mut modes = cfg.dp.modes.clone();
    modes.sort();
    modes.dedup();
    let mut out = Vec::new();
    for m in modes {
        if m == MechanismMode::NoDp {
            out.push((m, None));
        } else {
            out.extend(cfg.dp.eps_targets.iter().map(|&e| (m, Some(e))));
        }
    }
    out
}

/// Run the whole grid and write every output file under `cfg.output.dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    for sub in ["", "manifests", "ledgers", "released"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(dir.join("config.toml"), e))?;

    let mut records = Vec::new();
    let mut manifests = Vec::new();
    let mut diagnostics = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_seed(cfg, seed)?;
        for (name, v) in data.diagnostics(cfg)? {
            diagnostics.push((seed, name, v));
        }
        for (mode, eps) in run_grid(cfg) {
            let out = run_one(cfg, &data, mode, eps)?;
            write_run(dir, &out)?;
            records.push(out.record);
            manifests.push(out.manifest);
        }
    }
    let results = ExperimentResults {
        records,
        manifests,
        diagnostics,
    };
    write_text(&dir.join("results.csv"), &results_csv(&results.records))?;
    write_text(&dir.join("attacks.csv"), &attacks_csv(&results.records))?;
    write_text(&dir.join("curves.csv"), &curves_csv(&results.records))?;
    write_text(&dir.join("diagnostics.csv"), &diagnostics_csv(&results.diagnostics))?;
    let index = serde_json::to_string_pretty(&results.manifests).expect("manifests serialize");
    write_text(&dir.join("manifest.json"), &(index + "\n"))?;
    Ok(results)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    let key = out.record.key();
    out.manifest.save(&dir.join("manifests").join(format!("{key}.json")))?;
    let m = &out.manifest;
    write_ledger(&dir.join(&m.ledger_file), m, &out.ledger_events)?;
    let rel = dir.join("released").join(&key);
    std::fs::create_dir_all(&rel).map_err(|e| Error::io(&rel, e))?;
    for (i, f) in out.samples.iter().enumerate() {
        crate::io::write_noisy(&rel.join(format!("{i:05}.csv")), f)?;
    }
    Ok(())
}

pub const RESULTS_COLUMNS: &str = "mode,eps,seed,guarantee,calibration_scale,reported_eps,released_windows,\
accuracy,macro_f1,released_test_accuracy,released_test_macro_f1,rate_mae_bpm,waveform_corr,\
mia_auc,mia_best_accuracy,mia_advantage,subject_top1,subject_macro_f1,room_top1,room_macro_f1";

pub fn results_csv(records: &[RunRecord]) -> String {
    let mut s = format!("{RESULTS_COLUMNS}\n");
    for r in records {
        let resp = r.respiration.as_ref();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            fmt_eps(r.eps),
            r.seed,
            r.guarantee.as_str(),
            fmt_opt(r.calibration_scale),
            fmt_opt(r.reported_eps),
            r.released_windows,
            r.utility.accuracy,
            r.utility.macro_f1,
            r.released_utility.accuracy,
            r.released_utility.macro_f1,
            fmt_opt(resp.map(|x| x.rate_mae_bpm)),
            fmt_opt(resp.map(|x| x.waveform_corr)),
            r.mia.auc,
            r.mia.best_threshold_accuracy,
            r.mia.advantage,
            fmt_opt(r.subject.top1),
            fmt_opt(r.subject.macro_f1),
            fmt_opt(r.room.top1),
            fmt_opt(r.room.macro_f1),
        )
        .unwrap();
    }
    s
}

pub fn attacks_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("mode,eps,attack,seed,auc,best_threshold_accuracy,advantage,top1,macro_f1\n");
    for r in records {
        for (name, a) in [("mia", &r.mia), ("subject_id", &r.subject), ("room_id", &r.room)] {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.mode,
                fmt_eps(r.eps),
                name,
                r.seed,
                a.auc,
                a.best_threshold_accuracy,
                a.advantage,
                fmt_opt(a.top1),
                fmt_opt(a.macro_f1)
            )
            .unwrap();
        }
    }
    s
}

pub fn curves_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("mode,eps,seed,metric,value\n");
    for r in records {
        for (metric, v) in r.metrics() {
            writeln!(s, "{},{},{},{},{}", r.mode, fmt_eps(r.eps), r.seed, metric, v).unwrap();
        }
    }
    s
}

fn diagnostics_csv(d: &[(u64, &'static str, f64)]) -> String {
    let mut s = String::from("seed,metric,value\n");
    for (seed, m, v) in d {
        writeln!(s, "{seed},{m},{v}").unwrap();
    }
    s
}

/// One row of a long-format curves file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub mode: String,
    pub eps: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Convert a results table to long format.
pub fn curves_from_results(text: &str) -> std::result::Result<Vec<CurvePoint>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty results file")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("missing column {name}"));
    let (mode_c, eps_c, seed_c) = (col("mode")?, col("eps")?, col("seed")?);
    let metric_cols: Vec<usize> = (col("accuracy")?..header.len()).collect();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(format!("line {}: expected {} fields", i + 2, header.len()));
        }
        let seed = f[seed_c].parse().map_err(|_| format!("line {}: bad seed", i + 2))?;
        for &c in &metric_cols {
            if f[c].is_empty() {
                continue;
            }
            out.push(CurvePoint {
                mode: f[mode_c].to_string(),
                eps: f[eps_c].to_string(),
                seed,
                metric: header[c].to_string(),
                value: f[c].parse().map_err(|_| format!("line {}: bad value {:?}", i + 2, f[c]))?,
            });
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation per (mode, ε, metric), in first-seen order.
pub fn summarize(points: &[CurvePoint]) -> Vec<(String, String, String, f64, f64, usize)> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for p in points {
        let k = (p.mode.clone(), p.eps.clone(), p.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(m, e, k)| {
            let v: Vec<f64> = points
                .iter()
                .filter(|p| p.mode == m && p.eps == e && p.metric == k)
                .map(|p| p.value)
                .collect();
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (m, e, k, mean, sd, n)
        })
        .collect()
}

/// Outcome of re-deriving a run's ε from its ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub recomputed_eps: f64,
    pub reported_eps: Option<f64>,
    pub events: usize,
}

/// Recompute ε(δ) from a ledger and check it against the manifest.
pub fn audit(ledger: &Path, manifest: &ReleaseManifest) -> Result<AuditReport> {
    let l = crate::accountant::read_ledger(ledger)?;
    if l.delta != manifest.delta || l.alphas != manifest.alpha_grid {
        return Err(Error::Audit(format!(
            "{}: ledger grid or delta differs from the manifest",
            ledger.display()
        )));
    }
    let eps = l.replay()?.epsilon();
    match manifest.reported_eps {
        Some(r) if (r - eps).abs() > 1e-9 => Err(Error::Audit(format!(
            "ledger gives eps {eps}, manifest reports {r}"
        ))),
        None if !l.entries.is_empty() => Err(Error::Audit(
            "manifest reports no epsilon but the ledger has events".into(),
        )),
        _ => Ok(AuditReport {
            recomputed_eps: eps,
            reported_eps: manifest.reported_eps,
            events: l.entries.len(),
        }),
    }
}

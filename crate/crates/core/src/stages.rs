//! File-based pipeline stages behind the command-line tool.
//!
//! Directory layouts:
//! - data directory (`generate`): `dataset.json`, the window manifest
//!   `windows.csv` (rows in generation order) and `windows/<split>/<index>.csv`.
//! - model directory (`fit`): `owner.json`, `norm_stats.csv`, `surrogate.csv`,
//!   `public_mean.csv`, `importance_{gradient,energy,random}.csv` and
//!   `diagnostics.csv`.
//! - release directory (`release`): `manifest.json`, `ledger.csv`,
//!   `released.csv` (window manifest of the released records),
//!   `features/<index>.csv` and, when noise was added, `cell_sigma.csv`.
//!
//! A window's row in `windows.csv` is also its noise stream id, so running
//! the stages one by one reproduces [`run_experiment`] draw for draw.
//!
//! [`run_experiment`]: crate::experiment::run_experiment

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{
    breath_truth, fit_consumer, preprocess, release_manifest, release_records, respiration_metrics, run_attacks,
    score, seed_generator, split_labels, synth_window, write_ledger, AttackData, AttackResults, ExperimentConfig,
    OwnerModel, ReleaseManifest,
};
use crate::importance::{ImportanceMap, ImportanceMode};
use crate::io::{
    read_grid, read_noisy, read_norm_stats, read_window, read_window_manifest, write_grid, write_noisy,
    write_norm_stats, write_window, write_window_manifest, Grid, ManifestEntry, Split,
};
use crate::mechanism::MechanismMode;
use crate::signal::WindowLabels;
use crate::spectrogram::{Spectrogram, Stft};
use crate::surrogate::SurrogateModel;
use crate::Shape;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub attacker: usize,
}

/// Synthesize the train, test and attacker splits of `seed` into `dir`.
pub fn generate(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<DatasetInfo> {
    let gen = seed_generator(cfg, seed);
    let [train, test, pool] = split_labels(cfg, seed);
    let info = DatasetInfo {
        seed,
        train: train.len(),
        test: test.len(),
        attacker: pool.len(),
    };
    let all: Vec<(Split, WindowLabels)> = [(Split::Train, train), (Split::Test, test), (Split::Attacker, pool)]
        .into_iter()
        .flat_map(|(s, ls)| ls.into_iter().map(move |l| (s, l)))
        .collect();
    let entries: Vec<ManifestEntry> = all
        .par_iter()
        .enumerate()
        .map(|(i, &(split, labels))| {
            let file = format!("windows/{}/{i:06}.csv", split.as_str());
            write_window(&dir.join(&file), &synth_window(&gen, labels, i as u64)?)?;
            Ok(ManifestEntry { file, labels, split })
        })
        .collect::<Result<_>>()?;
    write_window_manifest(&dir.join("windows.csv"), &entries)?;
    write_json(&dir.join("dataset.json"), &info)?;
    Ok(info)
}

/// A generated data directory.
pub struct Dataset {
    pub dir: PathBuf,
    pub info: DatasetInfo,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            info: read_json(&dir.join("dataset.json"))?,
            entries: read_window_manifest(&dir.join("windows.csv"))?,
        })
    }

    /// Window indices of a split, in order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    /// Spectrograms and breathing truth of the given windows.
    fn load(&self, cfg: &ExperimentConfig, indices: &[usize]) -> Result<Vec<(Spectrogram, Option<(f64, Vec<f64>)>)>> {
        let stft = Stft::new(&cfg.stft)?;
        indices
            .par_iter()
            .map(|&i| {
                let e = self
                    .entries
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("window index {i} is not in the manifest")))?;
                let w = read_window(&self.dir.join(&e.file))?;
                Ok((preprocess(cfg, &stft, &w)?, breath_truth(cfg, &w)))
            })
            .collect()
    }

    fn labels(&self, indices: &[usize]) -> Vec<WindowLabels> {
        indices.iter().map(|&i| self.entries[i].labels).collect()
    }
}

/// Clean features of a set of windows.
struct Loaded {
    indices: Vec<usize>,
    labels: Vec<WindowLabels>,
    x: Vec<Vec<f64>>,
    breath: Vec<Option<(f64, Vec<f64>)>>,
}

fn load_features(cfg: &ExperimentConfig, data: &Dataset, owner: &OwnerModel, indices: Vec<usize>) -> Result<Loaded> {
    let (specs, breath): (Vec<Spectrogram>, Vec<_>) = data.load(cfg, &indices)?.into_iter().unzip();
    let x = owner.features(cfg, &specs)?.into_iter().map(|f| f.values).collect();
    Ok(Loaded {
        labels: data.labels(&indices),
        indices,
        x,
        breath,
    })
}

fn owner_files(dir: &Path) -> [PathBuf; 7] {
    [
        "owner.json",
        "norm_stats.csv",
        "surrogate.csv",
        "public_mean.csv",
        "importance_gradient.csv",
        "importance_energy.csv",
        "importance_random.csv",
    ]
    .map(|f| dir.join(f))
}

#[derive(Serialize, Deserialize)]
struct OwnerInfo {
    seed: u64,
    frames: usize,
    bins: usize,
    clip_c: f64,
    norm_stats_id: String,
}

fn map_kind(mode: ImportanceMode) -> &'static str {
    match mode {
        ImportanceMode::Gradient => "gradient",
        ImportanceMode::Energy => "energy",
        ImportanceMode::Random => "random",
        ImportanceMode::BandPrior => "band_prior",
        ImportanceMode::Uniform => "uniform",
    }
}

pub fn save_owner(dir: &Path, owner: &OwnerModel) -> Result<()> {
    let [info, norm, surrogate, mean, grad, energy, random] = owner_files(dir);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &info,
        &OwnerInfo {
            seed: owner.seed,
            frames: owner.shape.frames,
            bins: owner.shape.bins,
            clip_c: owner.clip_c,
            norm_stats_id: owner.norm_stats.id(),
        },
    )?;
    write_norm_stats(&norm, &owner.norm_stats)?;
    owner.surrogate.save(&surrogate)?;
    let grid = |kind: &str, values: &[f64]| Grid {
        kind: kind.to_string(),
        shape: owner.shape,
        values: values.to_vec(),
    };
    write_grid(&mean, &grid("public_mean", &owner.public_mean))?;
    for (path, map) in [(grad, &owner.gradient_map), (energy, &owner.energy_map), (random, &owner.random_map)] {
        write_grid(&path, &grid(map_kind(map.mode), &map.weights))?;
    }
    Ok(())
}

pub fn load_owner(dir: &Path) -> Result<OwnerModel> {
    let [info_p, norm, surrogate, mean, grad, energy, random] = owner_files(dir);
    let info: OwnerInfo = read_json(&info_p)?;
    let shape = Shape::new(info.frames, info.bins);
    let norm_stats = read_norm_stats(&norm)?;
    if norm_stats.id() != info.norm_stats_id {
        return Err(Error::parse(&norm, "normalization statistics do not match owner.json"));
    }
    let grid = |path: &Path, kind: &str| -> Result<Vec<f64>> {
        let g = read_grid(path, kind)?;
        if g.shape != shape {
            return Err(Error::parse(path, "grid shape differs from owner.json"));
        }
        Ok(g.values)
    };
    // Maps were normalized when fitted; keep the stored weights bit for bit.
    let map = |path: &Path, mode: ImportanceMode| -> Result<ImportanceMap> {
        let weights = grid(path, map_kind(mode))?;
        Ok(ImportanceMap { shape, weights, mode })
    };
    let model = SurrogateModel::load(&surrogate)?;
    if model.dim != shape.len() {
        return Err(Error::parse(&surrogate, "surrogate input size differs from the feature grid"));
    }
    Ok(OwnerModel {
        seed: info.seed,
        shape,
        norm_stats,
        clip_c: info.clip_c,
        surrogate: model,
        public_mean: grid(&mean, "public_mean")?,
        gradient_map: map(&grad, ImportanceMode::Gradient)?,
        energy_map: map(&energy, ImportanceMode::Energy)?,
        random_map: map(&random, ImportanceMode::Random)?,
    })
}

/// Fit the owner's pipeline on the training split of `data_dir` and save it
/// to `model_dir`.
pub fn fit(cfg: &ExperimentConfig, data_dir: &Path, model_dir: &Path) -> Result<OwnerModel> {
    let data = Dataset::open(data_dir)?;
    let train = data.indices(Split::Train);
    if train.len() < 2 {
        return Err(Error::DegenerateInput("need at least 2 training windows".into()));
    }
    let specs: Vec<Spectrogram> = data.load(cfg, &train)?.into_iter().map(|(s, _)| s).collect();
    let activity: Vec<usize> = data.labels(&train).iter().map(|l| l.activity).collect();
    let (owner, _) = OwnerModel::fit(cfg, data.info.seed, &specs, &activity)?;
    drop(specs);
    save_owner(model_dir, &owner)?;

    let test = data.indices(Split::Test);
    let mut diag = String::from("metric,value\n");
    if !test.is_empty() {
        let t = load_features(cfg, &data, &owner, test)?;
        let feats: Vec<_> = t
            .x
            .into_iter()
            .map(|values| crate::sensitivity::ClippedFeature {
                shape: owner.shape,
                values,
                clip_c: owner.clip_c,
                original_norm: 0.0,
            })
            .collect();
        let y: Vec<usize> = t.labels.iter().map(|l| l.activity).collect();
        for (k, v) in owner.diagnostics(cfg, &feats, &y)? {
            writeln!(diag, "{k},{v}").unwrap();
        }
    }
    write_text(&model_dir.join("diagnostics.csv"), &diag)?;
    Ok(owner)
}

/// Release one split of `data_dir` under `mode` and `eps` into `out`.
#[allow(clippy::too_many_arguments)]
pub fn release(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    model_dir: &Path,
    split: Split,
    mode: MechanismMode,
    eps: Option<f64>,
    out: &Path,
) -> Result<ReleaseManifest> {
    match (mode, eps) {
        (MechanismMode::NoDp, Some(_)) => return Err(Error::invalid("no_dp takes no epsilon target")),
        (m, None) if m != MechanismMode::NoDp => return Err(Error::invalid(format!("{m} needs an epsilon target"))),
        _ => {}
    }
    let data = Dataset::open(data_dir)?;
    let owner = load_owner(model_dir)?;
    let indices = data.indices(split);
    if indices.is_empty() {
        return Err(Error::invalid(format!("no {} windows in {}", split.as_str(), data_dir.display())));
    }
    if indices.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::invalid("split rows must be contiguous in windows.csv"));
    }
    let (specs, _): (Vec<Spectrogram>, Vec<_>) = data.load(cfg, &indices)?.into_iter().unzip();
    let feats = owner.features(cfg, &specs)?;
    drop(specs);
    let labels = data.labels(&indices);
    let r = release_records(cfg, &owner, &feats, &labels, mode, eps, indices[0] as u64)?;
    let manifest = release_manifest(cfg, &owner, mode, eps, &r, "ledger.csv".into())?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    manifest.save(&out.join("manifest.json"))?;
    write_ledger(&out.join("ledger.csv"), &manifest, &r.ledger_events)?;
    let entries: Vec<ManifestEntry> = r
        .features
        .par_iter()
        .zip(&r.kept)
        .map(|(f, &k)| {
            let file = format!("features/{:06}.csv", indices[k]);
            write_noisy(&out.join(&file), f)?;
            Ok(ManifestEntry {
                file,
                labels: labels[k],
                split,
            })
        })
        .collect::<Result<_>>()?;
    write_window_manifest(&out.join("released.csv"), &entries)?;
    let sigma_path = out.join("cell_sigma.csv");
    match &r.cell_sigma {
        Some(s) => write_grid(
            &sigma_path,
            &Grid {
                kind: "cell_sigma".into(),
                shape: owner.shape,
                values: s.clone(),
            },
        )?,
        None if sigma_path.exists() => std::fs::remove_file(&sigma_path).map_err(|e| Error::io(&sigma_path, e))?,
        None => {}
    }
    Ok(manifest)
}

/// A release directory read back.
pub struct LoadedRelease {
    pub manifest: ReleaseManifest,
    /// Window index of each released record.
    pub indices: Vec<usize>,
    pub labels: Vec<WindowLabels>,
    pub x: Vec<Vec<f64>>,
    pub cell_sigma: Option<Vec<f64>>,
}

pub fn load_release(dir: &Path) -> Result<LoadedRelease> {
    let manifest = ReleaseManifest::load(&dir.join("manifest.json"))?;
    let index_path = dir.join("released.csv");
    let entries = read_window_manifest(&index_path)?;
    let indices = entries
        .iter()
        .map(|e| {
            Path::new(&e.file)
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(&index_path, format!("no window index in {:?}", e.file)))
        })
        .collect::<Result<_>>()?;
    let x = entries
        .par_iter()
        .map(|e| Ok(read_noisy(&dir.join(&e.file))?.values))
        .collect::<Result<_>>()?;
    let sigma_path = dir.join("cell_sigma.csv");
    let cell_sigma = if sigma_path.exists() {
        Some(read_grid(&sigma_path, "cell_sigma")?.values)
    } else {
        None
    };
    Ok(LoadedRelease {
        manifest,
        indices,
        labels: entries.iter().map(|e| e.labels).collect(),
        x,
        cell_sigma,
    })
}

fn consumer(cfg: &ExperimentConfig, owner: &OwnerModel, rel: &LoadedRelease) -> Result<SurrogateModel> {
    if rel.manifest.norm_stats_id != owner.norm_stats.id() {
        return Err(Error::invalid("release was made with different normalization statistics"));
    }
    if rel.x.is_empty() {
        return Err(Error::DegenerateInput("release holds no records".into()));
    }
    let y: Vec<usize> = rel.labels.iter().map(|l| l.activity).collect();
    let m = &rel.manifest;
    fit_consumer(cfg, owner, m.mechanism_mode, m.target_eps, &rel.x, &y, rel.cell_sigma.as_deref())
}

/// Train the consumer model on a release and score it. Returns `(metric,
/// value)` pairs.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    model_dir: &Path,
    release_dir: &Path,
    test_release: Option<&Path>,
) -> Result<Vec<(String, f64)>> {
    let data = Dataset::open(data_dir)?;
    let owner = load_owner(model_dir)?;
    let rel = load_release(release_dir)?;
    let model = consumer(cfg, &owner, &rel)?;
    let test = load_features(cfg, &data, &owner, data.indices(Split::Test))?;
    let test_y: Vec<usize> = test.labels.iter().map(|l| l.activity).collect();
    let m = score(&model, &test.x, &test_y)?;
    let mut out = vec![("accuracy".to_string(), m.accuracy), ("macro_f1".to_string(), m.macro_f1)];
    out.extend(m.per_class_f1.iter().enumerate().map(|(k, f)| (format!("f1_class_{k}"), *f)));

    let rt = test_release.map(load_release).transpose()?;
    if let Some(rt) = &rt {
        let y: Vec<usize> = rt.labels.iter().map(|l| l.activity).collect();
        let r = score(&model, &rt.x, &y)?;
        out.push(("released_test_accuracy".into(), r.accuracy));
        out.push(("released_test_macro_f1".into(), r.macro_f1));
    }
    if cfg.generator.respiration {
        let rates: Vec<Option<f64>> = rel
            .indices
            .par_iter()
            .map(|&i| Ok(read_window(&data.dir.join(&data.entries[i].file))?.respiration.map(|r| r.rate_hz)))
            .collect::<Result<_>>()?;
        let (rt_x, rt_breath) = match &rt {
            Some(rt) => {
                let pos: Vec<usize> = rt
                    .indices
                    .iter()
                    .map(|i| test.indices.iter().position(|t| t == i))
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::invalid("test release holds windows outside the test split"))?;
                (rt.x.clone(), pos.iter().map(|&p| test.breath[p].clone()).collect())
            }
            None => (Vec::new(), Vec::new()),
        };
        let r = respiration_metrics(
            cfg,
            owner.shape,
            &rel.x,
            &rates,
            &test.x,
            &test.breath,
            &rt_x,
            &rt_breath,
        )?;
        out.push(("rate_mae_bpm".into(), r.rate_mae_bpm));
        if rt.is_some() {
            out.push(("waveform_corr".into(), r.waveform_corr));
        }
    }
    Ok(out)
}

/// Membership, subject and room attacks against a release.
pub fn attack(cfg: &ExperimentConfig, data_dir: &Path, model_dir: &Path, release_dir: &Path) -> Result<AttackResults> {
    let data = Dataset::open(data_dir)?;
    let owner = load_owner(model_dir)?;
    let rel = load_release(release_dir)?;
    let model = consumer(cfg, &owner, &rel)?;
    let members = load_features(cfg, &data, &owner, rel.indices.clone())?;
    let test = load_features(cfg, &data, &owner, data.indices(Split::Test))?;
    let pool = load_features(cfg, &data, &owner, data.indices(Split::Attacker))?;
    let m = &rel.manifest;
    run_attacks(
        cfg,
        &owner,
        m.mechanism_mode,
        m.target_eps,
        &model,
        &AttackData {
            released: &rel.x,
            released_labels: &rel.labels,
            members: &members.x,
            nonmembers: &test.x,
            nonmember_labels: &test.labels,
            pool: &pool.x,
            pool_labels: &pool.labels,
            cell_sigma: rel.cell_sigma.as_deref(),
        },
    )
}

pub fn attacks_table(r: &AttackResults) -> String {
    let mut s = String::from("attack,auc,best_threshold_accuracy,advantage,top1,macro_f1\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (name, a) in [("mia", &r.mia), ("subject_id", &r.subject), ("room_id", &r.room)] {
        writeln!(
            s,
            "{name},{},{},{},{},{}",
            a.auc,
            a.best_threshold_accuracy,
            a.advantage,
            opt(a.top1),
            opt(a.macro_f1)
        )
        .unwrap();
    }
    s
}

/// Where a manifest's ledger lives: next to the manifest, or one level up
/// for the per-run manifests of an experiment directory.
pub fn ledger_path(manifest_path: &Path, manifest: &ReleaseManifest) -> PathBuf {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let near = dir.join(&manifest.ledger_file);
    match dir.parent() {
        Some(up) if !near.exists() => up.join(&manifest.ledger_file),
        _ => near,
    }
}

//! Membership and attribute inference against released features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, NoiseStream};
use crate::surrogate::{
    classification_metrics, predict_all, train_with, InputTransform, SurrogateModel, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub auc: f64,
    pub best_threshold_accuracy: f64,
    /// `max_t (TPR − FPR)`.
    pub advantage: f64,
    /// Top-1 accuracy of attribute attacks.
    pub top1: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Recall of each attribute class.
    pub per_class_top1: Option<Vec<f64>>,
}

fn check_binary(labels: &[bool], n: usize) -> Result<(usize, usize)> {
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} scores but {} labels", labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok((pos, n - pos))
}

/// Rank-based AUC: the probability that a random positive outscores a random
/// negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(labels, scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Best accuracy and advantage over thresholds "score ≥ t ⇒ positive".
pub fn threshold_metrics(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let (pos, neg) = check_binary(labels, scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n = scores.len() as f64;
    // Threshold above every score: nothing predicted positive.
    let mut best_acc = neg as f64 / n;
    let mut best_adv = 0.0f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let acc = (tp + neg - fp) as f64 / n;
        let adv = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        best_acc = best_acc.max(acc);
        best_adv = best_adv.max(adv);
    }
    Ok((best_acc, best_adv))
}

pub fn score_report(scores: &[f64], labels: &[bool]) -> Result<AttackReport> {
    let auc = roc_auc(scores, labels)?;
    let (best_threshold_accuracy, advantage) = threshold_metrics(scores, labels)?;
    Ok(AttackReport {
        auc,
        best_threshold_accuracy,
        advantage,
        top1: None,
        macro_f1: None,
        per_class_top1: None,
    })
}

/// Mean score per group (e.g. per subject). Every member of a group must
/// share its membership label.
pub fn aggregate_scores(scores: &[f64], labels: &[bool], groups: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(Error::invalid("scores, labels and groups differ in length"));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut out_s = Vec::with_capacity(ids.len());
    let mut out_l = Vec::with_capacity(ids.len());
    for g in ids {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        let l = labels[idx[0]];
        if idx.iter().any(|&i| labels[i] != l) {
            return Err(Error::invalid(format!("group {g} mixes members and non-members")));
        }
        out_s.push(idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64);
        out_l.push(l);
    }
    Ok((out_s, out_l))
}

/// What the membership attack classifier sees for each candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackInput {
    /// Sorted class probabilities, true-class probability and loss from
    /// querying a model trained on the released data.
    #[default]
    Confidence,
    /// Distance of the candidate to its nearest released feature.
    Features,
}

/// Attack features of one candidate.
fn confidence_features(model: &SurrogateModel, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let mut p = model.predict_proba(x)?;
    let py = p[y].max(1e-300);
    p.sort_by(|a, b| b.total_cmp(a));
    p.push(py);
    p.push(-py.ln());
    Ok(p)
}

fn nearest_features(released: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let best = released
        .iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    vec![best.sqrt()]
}

/// A labeled set of candidate records with ground-truth membership.
#[derive(Debug, Clone, Copy)]
pub struct Candidates<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [usize],
    pub member: &'a [bool],
}

/// The producer-side artifacts the attacker can observe: the released
/// features and a model trained on them.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub model: &'a SurrogateModel,
    pub released: &'a [Vec<f64>],
}

/// Reproduces the victim pipeline on attacker data: releases `x` with the
/// public mechanism and returns `(released features, model trained on them)`.
pub type ShadowPipeline<'a> =
    dyn Fn(&[Vec<f64>], &[usize], u64) -> Result<(Vec<Vec<f64>>, SurrogateModel)> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaConfig {
    pub shadow_models: usize,
    pub input: AttackInput,
    pub attack_train: TrainConfig,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            shadow_models: 4,
            input: AttackInput::Confidence,
            attack_train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
        }
    }
}

/// Shadow-model membership inference.
///
/// The attacker splits its own pool into `M` folds. Each fold is halved into
/// "in" and "out" records; the "in" half goes through `pipeline` (same
/// mechanism as the victim) and the resulting shadow model labels its own
/// in/out records. A binary classifier trained on those examples then scores
/// the target's candidates.
pub fn shadow_mia(
    target: Target<'_>,
    candidates: Candidates<'_>,
    pool_x: &[Vec<f64>],
    pool_y: &[usize],
    pipeline: &ShadowPipeline<'_>,
    cfg: &MiaConfig,
    seed: u64,
) -> Result<AttackReport> {
    let scores = shadow_mia_scores(target, candidates, pool_x, pool_y, pipeline, cfg, seed)?;
    score_report(&scores, candidates.member)
}

pub fn shadow_mia_scores(
    target: Target<'_>,
    candidates: Candidates<'_>,
    pool_x: &[Vec<f64>],
    pool_y: &[usize],
    pipeline: &ShadowPipeline<'_>,
    cfg: &MiaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = cfg.shadow_models;
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 shadow models, got {m}")));
    }
    check_binary(candidates.member, candidates.x.len())?;
    if candidates.y.len() != candidates.x.len() || pool_x.len() != pool_y.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    if pool_x.len() < 4 * m {
        return Err(Error::invalid(format!(
            "attacker pool of {} records is too small for {m} shadow models",
            pool_x.len()
        )));
    }

    let mut order: Vec<usize> = (0..pool_x.len()).collect();
    NoiseStream::new(derive_seed(seed, &[0x5ad0]), 0).shuffle(&mut order);
    let fold = pool_x.len() / m;

    let shadow_examples: Vec<(Vec<Vec<f64>>, Vec<usize>)> = (0..m)
        .into_par_iter()
        .map(|k| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
            let idx = &order[k * fold..(k + 1) * fold];
            let (ins, outs) = idx.split_at(fold / 2);
            let in_x: Vec<Vec<f64>> = ins.iter().map(|&i| pool_x[i].clone()).collect();
            let in_y: Vec<usize> = ins.iter().map(|&i| pool_y[i]).collect();
            let (released, model) = pipeline(&in_x, &in_y, derive_seed(seed, &[0x5bad, k as u64]))?;
            let mut feats = Vec::with_capacity(idx.len());
            let mut labels = Vec::with_capacity(idx.len());
            for (&i, member) in ins.iter().map(|i| (i, 1)).chain(outs.iter().map(|i| (i, 0))) {
                feats.push(attack_features(cfg.input, &model, &released, &pool_x[i], pool_y[i])?);
                labels.push(member);
            }
            Ok((feats, labels))
        })
        .collect::<Result<_>>()?;
    let (mut ax, mut ay) = (Vec::new(), Vec::new());
    for (f, l) in shadow_examples {
        ax.extend(f);
        ay.extend(l);
    }

    let dim = ax[0].len();
    let attack = train_with(
        &SurrogateModel::zeros(2, dim),
        &ax,
        &ay,
        &cfg.attack_train,
        &InputTransform::default(),
    )?;

    candidates
        .x
        .par_iter()
        .zip(candidates.y)
        .map(|(x, &y)| {
            let f = attack_features(cfg.input, target.model, target.released, x, y)?;
            Ok(attack.predict_proba(&f)?[1])
        })
        .collect()
}

fn attack_features(
    input: AttackInput,
    model: &SurrogateModel,
    released: &[Vec<f64>],
    x: &[f64],
    y: usize,
) -> Result<Vec<f64>> {
    match input {
        AttackInput::Confidence => confidence_features(model, x, y),
        AttackInput::Features => Ok(nearest_features(released, x)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    SubjectId,
    RoomId,
}

impl Attribute {
    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::SubjectId => "subject_id",
            Attribute::RoomId => "room_id",
        }
    }
}

/// Train a classifier for a side attribute on released features and report
/// its held-out performance.
///
/// `transform` lets the attacker whiten by the published noise scales.
pub fn attribute_inference(
    train_x: &[Vec<f64>],
    train_attr: &[usize],
    test_x: &[Vec<f64>],
    test_attr: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    transform: &InputTransform,
) -> Result<AttackReport> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::invalid("attribute attack needs train and test records"));
    }
    if train_attr.len() != train_x.len() || test_attr.len() != test_x.len() {
        return Err(Error::invalid("missing attribute labels"));
    }
    let dim = train_x[0].len();
    let model = train_with(
        &SurrogateModel::zeros(num_classes, dim),
        train_x,
        train_attr,
        cfg,
        transform,
    )?;
    let pred = predict_all(&model, test_x)?;
    let metrics = classification_metrics(&pred, test_attr, num_classes)?;
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let n = test_attr.iter().filter(|&&t| t == c).count();
            let hit = pred.iter().zip(test_attr).filter(|(&p, &t)| t == c && p == c).count();
            if n == 0 {
                0.0
            } else {
                hit as f64 / n as f64
            }
        })
        .collect();

    // One-vs-rest AUC, averaged over classes present in the test split.
    let probs: Vec<Vec<f64>> = test_x
        .par_iter()
        .map(|x| model.predict_proba(x))
        .collect::<Result<_>>()?;
    let mut aucs = Vec::new();
    for c in 0..num_classes {
        let labels: Vec<bool> = test_attr.iter().map(|&t| t == c).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            aucs.push(roc_auc(&s, &labels)?);
        }
    }
    let auc = if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };

    Ok(AttackReport {
        auc,
        best_threshold_accuracy: metrics.accuracy,
        advantage: metrics.accuracy - 1.0 / num_classes as f64,
        top1: Some(metrics.accuracy),
        macro_f1: Some(metrics.macro_f1),
        per_class_top1: Some(per_class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[7.0; 4], &l).unwrap(), 0.5);
        assert_eq!(roc_auc(&[1.0, 3.0, 2.0, 4.0], &l).unwrap(), 0.75);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn auc_invariances() {
        let mut rng = NoiseStream::new(1, 0);
        let s: Vec<f64> = (0..200).map(|_| rng.normal(0.0, 1.0)).collect();
        let l: Vec<bool> = (0..200).map(|i| (i % 3 == 0) ^ (s[i] > 0.5)).collect();
        let a = roc_auc(&s, &l).unwrap();
        let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        assert!((roc_auc(&t, &l).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        assert!((roc_auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_count() {
        let mut rng = NoiseStream::new(2, 0);
        let s: Vec<f64> = (0..60).map(|_| (rng.uniform() * 6.0).floor()).collect();
        let l: Vec<bool> = (0..60).map(|_| rng.uniform() < 0.4).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..60 {
            for j in 0..60 {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((roc_auc(&s, &l).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_no_advantage() {
        let l = [true, false, true, false];
        let r = score_report(&[0.3; 4], &l).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.advantage, 0.0);
        assert_eq!(r.best_threshold_accuracy, 0.5);
    }

    #[test]
    fn separated_scores_perfect() {
        let l = [true, false, true, false];
        let r = score_report(&[0.9, 0.1, 0.8, 0.2], &l).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.best_threshold_accuracy, 1.0);
        assert_eq!(r.advantage, 1.0);
    }

    #[test]
    fn permuted_labels_near_half() {
        let mut rng = NoiseStream::new(77, 0);
        let s: Vec<f64> = (0..2000).map(|_| rng.normal(0.0, 1.0)).collect();
        let mut l: Vec<bool> = (0..2000).map(|i| i < 1000).collect();
        rng.shuffle(&mut l);
        let a = roc_auc(&s, &l).unwrap();
        assert!((0.45..=0.55).contains(&a), "{a}");
    }

    #[test]
    fn aggregation_by_group() {
        let (s, l) = aggregate_scores(&[1.0, 3.0, 0.0, 2.0], &[true, true, false, false], &[7, 7, 2, 2]).unwrap();
        assert_eq!(s, vec![1.0, 2.0]);
        assert_eq!(l, vec![false, true]);
        assert!(aggregate_scores(&[1.0, 2.0], &[true, false], &[0, 0]).is_err());
    }

    #[test]
    fn attribute_attack_on_pure_noise_is_chance() {
        let mut rng = NoiseStream::new(8, 0);
        let k = 5;
        let mut gen = |n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
            let x = (0..n).map(|_| (0..20).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
            let y = (0..n).map(|i| i % k).collect();
            (x, y)
        };
        let (tx, ty) = gen(2000);
        let (vx, vy) = gen(4000);
        let r = attribute_inference(&tx, &ty, &vx, &vy, k, &TrainConfig::default(), &InputTransform::default())
            .unwrap();
        assert!((r.top1.unwrap() - 0.2).abs() <= 0.05, "{:?}", r.top1);
    }

    #[test]
    fn attribute_attack_finds_signal() {
        let mut rng = NoiseStream::new(9, 0);
        let k = 3;
        let mut gen = |n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
            let y: Vec<usize> = (0..n).map(|i| i % k).collect();
            let x = y
                .iter()
                .map(|&c| (0..6).map(|j| rng.normal(if j == c { 2.0 } else { 0.0 }, 1.0)).collect())
                .collect();
            (x, y)
        };
        let (tx, ty) = gen(600);
        let (vx, vy) = gen(600);
        let r = attribute_inference(&tx, &ty, &vx, &vy, k, &TrainConfig::default(), &InputTransform::default())
            .unwrap();
        assert!(r.top1.unwrap() > 2.0 / k as f64);
        assert_eq!(r.per_class_top1.as_ref().unwrap().len(), k);
    }

    #[test]
    fn shadow_mia_requires_two_classes_and_shadows() {
        let x = vec![vec![0.0; 3]; 40];
        let y = vec![0; 40];
        let model = SurrogateModel::zeros(2, 3);
        let member = vec![true; 40];
        let pipe = |x: &[Vec<f64>], _: &[usize], _: u64| Ok((x.to_vec(), SurrogateModel::zeros(2, 3)));
        let target = Target {
            model: &model,
            released: &x,
        };
        let cands = Candidates {
            x: &x,
            y: &y,
            member: &member,
        };
        assert!(shadow_mia(target, cands, &x, &y, &pipe, &MiaConfig::default(), 0).is_err());
        let mixed: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let cands = Candidates { member: &mixed, ..cands };
        let one = MiaConfig {
            shadow_models: 1,
            ..MiaConfig::default()
        };
        assert!(shadow_mia(target, cands, &x, &y, &pipe, &one, 0).is_err());
        // A constant model gives every candidate the same score.
        let r = shadow_mia(target, cands, &x, &y, &pipe, &MiaConfig::default(), 0).unwrap();
        assert_eq!(r.auc, 0.5);
    }
}

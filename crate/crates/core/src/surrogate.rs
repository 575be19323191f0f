//! Linear softmax classifier over flattened features.
//!
//! Used three ways: as the data owner's surrogate for gradient importance,
//! as the downstream consumer model trained on released features, and as the
//! attacker's classifier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `num_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl SurrogateModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes {
            return Err(Error::invalid(format!(
                "label {y} out of range 0..{}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..self.num_classes)
            .map(|k| dot(self.row(k), x) + self.bias[k])
            .collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Arg-max class; ties go to the smaller index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.logits(x)?;
        Ok(argmax(&z))
    }

    /// Cross-entropy loss and its gradient with respect to the input,
    /// `Wᵀ(softmax(Wx + b) − onehot(y))`.
    pub fn loss_and_input_gradient(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.check_label(y)?;
        let mut p = self.logits(x)?;
        let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + p.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        let loss = lse - p[y];
        for z in p.iter_mut() {
            *z = (*z - lse).exp();
        }
        p[y] -= 1.0;
        let mut g = vec![0.0; self.dim];
        for (k, &r) in p.iter().enumerate() {
            if r != 0.0 {
                for (gi, wi) in g.iter_mut().zip(self.row(k)) {
                    *gi += r * wi;
                }
            }
        }
        Ok((loss, g))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let row = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        out.push_str(&row(&self.bias));
        out.push('\n');
        for k in 0..self.num_classes {
            out.push_str(&row(self.row(k)));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
                    .collect()
            })
            .collect::<std::result::Result<_, _>>()?;
        let (bias, weights) = rows.split_first().ok_or("empty model file")?;
        if weights.len() != bias.len() {
            return Err(format!(
                "{} bias entries but {} weight rows",
                bias.len(),
                weights.len()
            ));
        }
        let dim = weights.first().map_or(0, |r| r.len());
        if dim == 0 || weights.iter().any(|r| r.len() != dim) {
            return Err("weight rows have inconsistent lengths".into());
        }
        Ok(Self {
            num_classes: bias.len(),
            dim,
            weights: weights.concat(),
            bias: bias.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|m| Error::parse(path, m))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // Independent partial sums so the loop vectorizes.
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Step size before normalization by `mean ‖x‖² + 1`.
    pub lr: f64,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub fit_bias: bool,
    pub weight_decay: f64,
    /// Subtract the training mean before fitting. The shift is folded back
    /// into the bias, so the returned model applies to raw inputs.
    pub center: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.5,
            seed: 0,
            batch_size: None,
            fit_bias: true,
            weight_decay: 0.0,
            center: true,
        }
    }
}

/// Per-feature affine map applied before fitting: `(x − mean) / scale`.
///
/// `mean` overrides the training mean when centering (e.g. a public
/// statistic); `scale` whitens heteroscedastic inputs such as features
/// released with per-block noise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputTransform {
    pub mean: Option<Vec<f64>>,
    pub scale: Option<Vec<f64>>,
}

pub fn mean_vector(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x.first().map_or(0, |r| r.len());
    let mut m = vec![0.0; d];
    for r in x {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = x.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

const CHUNK: usize = 512;

pub fn train(model: &SurrogateModel, x: &[Vec<f64>], y: &[usize], cfg: &TrainConfig) -> Result<SurrogateModel> {
    train_with(model, x, y, cfg, &InputTransform::default())
}

/// Gradient descent on mean cross-entropy. Deterministic for a fixed
/// `cfg.seed`, independent of the thread count.
pub fn train_with(
    model: &SurrogateModel,
    x: &[Vec<f64>],
    y: &[usize],
    cfg: &TrainConfig,
    transform: &InputTransform,
) -> Result<SurrogateModel> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("{} samples but {} labels", x.len(), y.len())));
    }
    for r in x {
        model.check_input(r)?;
    }
    for &l in y {
        model.check_label(l)?;
    }
    if cfg.epochs == 0 || x.is_empty() {
        return Ok(model.clone());
    }
    let d = model.dim;
    let k = model.num_classes;
    for v in [&transform.mean, &transform.scale].into_iter().flatten() {
        if v.len() != d {
            return Err(Error::invalid("input transform has the wrong dimension"));
        }
    }
    if let Some(s) = &transform.scale {
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("input scale must be positive"));
        }
    }

    let mu = match (&transform.mean, cfg.center) {
        (Some(m), true) => m.clone(),
        (None, true) => mean_vector(x),
        (_, false) => vec![0.0; d],
    };
    let inv_scale: Vec<f64> = match &transform.scale {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; d],
    };
    let xt: Vec<Vec<f64>> = x
        .par_iter()
        .map(|r| {
            r.iter()
                .zip(&mu)
                .zip(&inv_scale)
                .map(|((v, m), s)| (v - m) * s)
                .collect()
        })
        .collect();
    let mean_sq = xt.iter().map(|r| dot(r, r)).sum::<f64>() / xt.len() as f64;
    let step = cfg.lr / (mean_sq + 1.0);

    // Work in transformed coordinates: W' = W·diag(scale), b' = b + W·mu.
    let mut w: Vec<f64> = (0..k * d)
        .map(|i| model.weights[i] / inv_scale[i % d])
        .collect();
    let mut b: Vec<f64> = (0..k)
        .map(|c| model.bias[c] + dot(&model.weights[c * d..(c + 1) * d], &mu))
        .collect();

    let mut order: Vec<usize> = (0..xt.len()).collect();
    let mut rng = NoiseStream::new(cfg.seed, 0);
    let batch = cfg.batch_size.unwrap_or(xt.len()).clamp(1, xt.len());

    for _ in 0..cfg.epochs {
        if batch < xt.len() {
            rng.shuffle(&mut order);
        }
        for idx in order.chunks(batch) {
            let (gw, gb) = batch_gradient(&w, &b, k, d, &xt, y, idx);
            let inv_n = 1.0 / idx.len() as f64;
            for (wi, gi) in w.iter_mut().zip(&gw) {
                *wi -= step * (gi * inv_n + cfg.weight_decay * *wi);
            }
            if cfg.fit_bias {
                for (bi, gi) in b.iter_mut().zip(&gb) {
                    *bi -= step * gi * inv_n;
                }
            }
        }
    }

    let weights: Vec<f64> = (0..k * d).map(|i| w[i] * inv_scale[i % d]).collect();
    let bias = (0..k)
        .map(|c| b[c] - dot(&weights[c * d..(c + 1) * d], &mu))
        .collect();
    Ok(SurrogateModel {
        num_classes: k,
        dim: d,
        weights,
        bias,
    })
}

/// Summed gradient over `idx`, reduced chunk by chunk in a fixed order.
fn batch_gradient(
    w: &[f64],
    b: &[f64],
    k: usize,
    d: usize,
    x: &[Vec<f64>],
    y: &[usize],
    idx: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let partials: Vec<(Vec<f64>, Vec<f64>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut gw = vec![0.0; k * d];
            let mut gb = vec![0.0; k];
            let mut z = vec![0.0; k];
            for &i in chunk {
                let xi = &x[i];
                for c in 0..k {
                    z[c] = dot(&w[c * d..(c + 1) * d], xi) + b[c];
                }
                softmax_in_place(&mut z);
                z[y[i]] -= 1.0;
                for c in 0..k {
                    let r = z[c];
                    gb[c] += r;
                    for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                        *g += r * v;
                    }
                }
            }
            (gw, gb)
        })
        .collect();
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    for (pw, pb) in partials {
        gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    (gw, gb)
}

/// Mean cross-entropy over a dataset.
pub fn mean_loss(model: &SurrogateModel, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = model.logits(xi)?;
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[yi];
    }
    Ok(total / x.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Accuracy and macro-F1 over `num_classes` classes. A class with no true
/// positives (including one absent from both truth and predictions) has F1 0.
pub fn classification_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::invalid("need equally many predictions and labels, at least one"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid("class id out of range"));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / pred.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / num_classes as f64,
        per_class_f1,
    })
}

pub fn predict_all(model: &SurrogateModel, x: &[Vec<f64>]) -> Result<Vec<usize>> {
    x.par_iter().map(|xi| model.predict(xi)).collect()
}

pub fn evaluate(model: &SurrogateModel, x: &[Vec<f64>], y: &[usize]) -> Result<Metrics> {
    if x.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let pred = predict_all(model, x)?;
    classification_metrics(&pred, y, model.num_classes)
}

//! Blockwise Gaussian mechanism.
//!
//! Block `b` of a clipped feature receives i.i.d. `N(0, σ_b²)` noise with
//! `σ_b = κ · 2C / ε_b`. Noise is drawn cell by cell in row-major order from
//! a [`NoiseStream`] keyed by `(seed, stream)`, so a release is reproducible
//! from its seed id alone.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::accountant::{calibrate_noise, GaussianEvent};
use crate::allocation::{allocate, block_mass, uniform_budget, BlockPartition, BudgetVector};
use crate::error::{Error, Result};
use crate::importance::ImportanceMap;
use crate::rng::NoiseStream;
use crate::sensitivity::{l2_sensitivity, ClippedFeature};
use crate::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismMode {
    NoDp,
    Uniform,
    /// Allocation from signal energy.
    Heuristic,
    Random,
    /// Allocation from task-gradient importance.
    Adaptive,
}

impl MechanismMode {
    pub const ALL: [MechanismMode; 5] = [
        MechanismMode::NoDp,
        MechanismMode::Uniform,
        MechanismMode::Heuristic,
        MechanismMode::Random,
        MechanismMode::Adaptive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismMode::NoDp => "no_dp",
            MechanismMode::Uniform => "uniform",
            MechanismMode::Heuristic => "heuristic",
            MechanismMode::Random => "random",
            MechanismMode::Adaptive => "adaptive",
        }
    }

    pub fn needs_map(&self) -> bool {
        matches!(
            self,
            MechanismMode::Heuristic | MechanismMode::Random | MechanismMode::Adaptive
        )
    }
}

impl fmt::Display for MechanismMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MechanismMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mechanism mode {s:?}")))
    }
}

pub fn noise_scale(eps_b: f64, c: f64, kappa: f64) -> Result<f64> {
    if !(eps_b > 0.0 && c > 0.0 && kappa > 0.0) {
        return Err(Error::invalid(format!(
            "noise scale needs positive eps, C and kappa, got {eps_b}, {c}, {kappa}"
        )));
    }
    Ok(kappa * l2_sensitivity(c) / eps_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyFeature {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub sigma_per_block: Vec<f64>,
    pub partition_id: String,
    pub mode: MechanismMode,
    /// `seed:stream` of the noise draw.
    pub rng_seed_id: String,
    pub norm_stats_id: String,
}

pub fn seed_id(seed: u64, stream: u64) -> String {
    format!("{seed}:{stream}")
}

pub fn add_block_noise(
    x: &ClippedFeature,
    p: &BlockPartition,
    sigma: &[f64],
    seed: u64,
    stream: u64,
) -> Result<NoisyFeature> {
    if x.shape != p.shape || x.values.len() != x.shape.len() {
        return Err(Error::invalid(format!(
            "feature is {:?}, partition is {:?}",
            x.shape, p.shape
        )));
    }
    if sigma.len() != p.num_blocks() {
        return Err(Error::invalid(format!(
            "{} noise scales for {} blocks",
            sigma.len(),
            p.num_blocks()
        )));
    }
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("noise scales must be positive and finite"));
    }
    let mut rng = NoiseStream::new(seed, stream);
    let values = x
        .values
        .iter()
        .zip(p.cell_blocks())
        .map(|(v, b)| v + sigma[b] * rng.standard_normal())
        .collect();
    Ok(NoisyFeature {
        shape: x.shape,
        values,
        sigma_per_block: sigma.to_vec(),
        partition_id: p.id(),
        mode: MechanismMode::Adaptive,
        rng_seed_id: seed_id(seed, stream),
        norm_stats_id: String::new(),
    })
}

/// How the common multiplier κ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCalibration {
    Fixed { kappa: f64 },
    /// Calibrate κ so `releases_per_window` releases compose to `eps` at `delta`.
    Target {
        eps: f64,
        delta: f64,
        releases_per_window: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismParams {
    pub partition: BlockPartition,
    pub eps_min: f64,
    pub eps_max: f64,
    pub gamma: f64,
    pub clip_c: f64,
    pub calibration: NoiseCalibration,
}

/// Budgets and noise scales for one importance map, ready to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasePlan {
    pub mode: MechanismMode,
    pub partition: BlockPartition,
    pub budgets: Option<BudgetVector>,
    pub kappa: f64,
    pub sigmas: Vec<f64>,
    pub clip_c: f64,
}

pub fn plan(map: Option<&ImportanceMap>, mode: MechanismMode, params: &MechanismParams) -> Result<ReleasePlan> {
    let b = params.partition.num_blocks();
    let budgets = match mode {
        MechanismMode::NoDp => None,
        MechanismMode::Uniform => Some(uniform_budget(b, params.eps_min, params.eps_max)?),
        _ => {
            let map = map.ok_or_else(|| Error::invalid(format!("mode {mode} needs an importance map")))?;
            let mass = block_mass(map, &params.partition)?;
            Some(allocate(&mass, params.eps_min, params.eps_max, params.gamma)?)
        }
    };
    let Some(budgets) = budgets else {
        return Ok(ReleasePlan {
            mode,
            partition: params.partition.clone(),
            budgets: None,
            kappa: 0.0,
            sigmas: vec![0.0; b],
            clip_c: params.clip_c,
        });
    };
    let kappa = match params.calibration {
        NoiseCalibration::Fixed { kappa } => kappa,
        NoiseCalibration::Target {
            eps,
            delta,
            releases_per_window,
        } => calibrate_noise(eps, delta, &budgets, params.clip_c, releases_per_window)?.scale,
    };
    let sigmas = budgets
        .eps_per_block
        .iter()
        .map(|&e| noise_scale(e, params.clip_c, kappa))
        .collect::<Result<_>>()?;
    Ok(ReleasePlan {
        mode,
        partition: params.partition.clone(),
        budgets: Some(budgets),
        kappa,
        sigmas,
        clip_c: params.clip_c,
    })
}

impl ReleasePlan {
    /// One accountant event per block; none for `NoDp`.
    pub fn events(&self) -> Vec<GaussianEvent> {
        if self.mode == MechanismMode::NoDp {
            return Vec::new();
        }
        let d2 = l2_sensitivity(self.clip_c);
        self.sigmas
            .iter()
            .map(|&s| GaussianEvent { sigma: s, delta2: d2 })
            .collect()
    }

    pub fn apply(&self, x: &ClippedFeature, seed: u64, stream: u64) -> Result<(NoisyFeature, Vec<GaussianEvent>)> {
        if x.clip_c > self.clip_c * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "feature clipped at {} but plan assumes {}",
                x.clip_c, self.clip_c
            )));
        }
        let mut out = if self.mode == MechanismMode::NoDp {
            if x.shape != self.partition.shape {
                return Err(Error::invalid("feature and partition shapes differ"));
            }
            NoisyFeature {
                shape: x.shape,
                values: x.values.clone(),
                sigma_per_block: self.sigmas.clone(),
                partition_id: self.partition.id(),
                mode: self.mode,
                rng_seed_id: seed_id(seed, stream),
                norm_stats_id: String::new(),
            }
        } else {
            add_block_noise(x, &self.partition, &self.sigmas, seed, stream)?
        };
        out.mode = self.mode;
        Ok((out, self.events()))
    }
}

/// Allocate, calibrate and perturb one feature.
pub fn release(
    x: &ClippedFeature,
    map: Option<&ImportanceMap>,
    mode: MechanismMode,
    params: &MechanismParams,
    seed: u64,
    stream: u64,
) -> Result<(NoisyFeature, Vec<GaussianEvent>)> {
    plan(map, mode, params)?.apply(x, seed, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::make_partition;

    fn feature(shape: Shape, v: f64) -> ClippedFeature {
        ClippedFeature {
            shape,
            values: vec![v; shape.len()],
            clip_c: 1.0,
            original_norm: 0.0,
        }
    }

    fn params(p: BlockPartition) -> MechanismParams {
        MechanismParams {
            partition: p,
            eps_min: 1.0,
            eps_max: 8.0,
            gamma: 2.0,
            clip_c: 1.0,
            calibration: NoiseCalibration::Fixed { kappa: 1.0 },
        }
    }

    #[test]
    fn noise_scale_examples() {
        assert_eq!(noise_scale(1.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(noise_scale(2.0, 7.5, 1.0).unwrap(), 7.5);
        assert_eq!(noise_scale(0.7, 3.0, 2.0).unwrap(), 2.0 * noise_scale(0.7, 3.0, 1.0).unwrap());
        assert!(noise_scale(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in MechanismMode::ALL {
            assert_eq!(m.as_str().parse::<MechanismMode>().unwrap(), m);
        }
        assert!("bogus".parse::<MechanismMode>().is_err());
    }

    #[test]
    fn fixed_seed_fixed_noise() {
        let shape = Shape::new(4, 16);
        let p = make_partition(4, 16, 4, 8).unwrap();
        let x = feature(shape, 0.1);
        let a = add_block_noise(&x, &p, &[1.0, 2.0], 9, 3).unwrap();
        let b = add_block_noise(&x, &p, &[1.0, 2.0], 9, 3).unwrap();
        assert_eq!(a, b);
        let c = add_block_noise(&x, &p, &[1.0, 2.0], 9, 4).unwrap();
        assert_ne!(a.values, c.values);
        assert!(add_block_noise(&x, &p, &[1.0], 9, 3).is_err());
        assert!(add_block_noise(&x, &p, &[1.0, 0.0], 9, 3).is_err());
    }

    #[test]
    fn no_dp_is_identity_without_events() {
        let shape = Shape::new(4, 16);
        let p = make_partition(4, 16, 4, 8).unwrap();
        let x = feature(shape, 0.2);
        let (out, ev) = release(&x, None, MechanismMode::NoDp, &params(p), 1, 0).unwrap();
        assert_eq!(out.values, x.values);
        assert!(ev.is_empty());
    }

    #[test]
    fn uniform_mode_equal_sigmas() {
        let shape = Shape::new(8, 16);
        let p = make_partition(8, 16, 4, 8).unwrap();
        let (out, ev) = release(&feature(shape, 0.1), None, MechanismMode::Uniform, &params(p), 1, 0).unwrap();
        assert_eq!(ev.len(), 4);
        assert!(out.sigma_per_block.windows(2).all(|w| w[0] == w[1]));
        assert!(ev.iter().all(|e| e.delta2 == 2.0));
    }

    #[test]
    fn adaptive_onehot_hot_block_least_noise() {
        let shape = Shape::new(8, 16);
        let p = make_partition(8, 16, 4, 8).unwrap();
        let mut w = vec![0.0; shape.len()];
        w[4 * 16 + 12] = 1.0;
        let map = ImportanceMap::from_weights(shape, w, crate::importance::ImportanceMode::Gradient).unwrap();
        let (out, _) = release(&feature(shape, 0.1), Some(&map), MechanismMode::Adaptive, &params(p), 1, 0).unwrap();
        let s = &out.sigma_per_block;
        assert!(s[3] < s[0] && s[3] < s[1] && s[3] < s[2]);
        assert!(matches!(
            release(&feature(shape, 0.1), None, MechanismMode::Adaptive, &params(make_partition(8, 16, 4, 8).unwrap()), 1, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sigma_order_follows_budget_order() {
        let shape = Shape::new(4, 32);
        let p = make_partition(4, 32, 4, 8).unwrap();
        let map = crate::importance::random_importance(shape, 17).unwrap();
        let pl = plan(Some(&map), MechanismMode::Random, &params(p)).unwrap();
        let eps = &pl.budgets.as_ref().unwrap().eps_per_block;
        for a in 0..eps.len() {
            for b in 0..eps.len() {
                assert_eq!(eps[a] >= eps[b], pl.sigmas[a] <= pl.sigmas[b]);
            }
        }
    }

    #[test]
    fn target_calibration_reaches_epsilon() {
        let p = make_partition(4, 129, 4, 8).unwrap();
        let mut prm = params(p);
        prm.calibration = NoiseCalibration::Target {
            eps: 1.0,
            delta: 1e-5,
            releases_per_window: 1,
        };
        let pl = plan(None, MechanismMode::Uniform, &prm).unwrap();
        let mut acct = crate::accountant::AccountantState::new(1e-5);
        acct.compose(&pl.events());
        assert!((acct.epsilon() - 1.0).abs() < 0.01);
    }
}

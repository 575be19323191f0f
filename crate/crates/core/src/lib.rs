//! Differentially private release of CSI spectrogram features.
//!
//! The pipeline turns complex channel windows into bounded spectrogram
//! features, clips them to a fixed L2 norm, splits the time–frequency grid
//! into blocks, spreads a privacy budget over the blocks according to an
//! importance map, and adds Gaussian noise per block. A Rényi-DP accountant
//! composes the per-block events and converts them to an (ε, δ) guarantee.
//! The [`attacks`] module measures what leaks through the released features.
//!
//! ```
//! use csi_dp::accountant::{AccountantState, GaussianEvent};
//!
//! let mut acct = AccountantState::new(1e-5);
//! acct.compose(&[GaussianEvent::new(1.0, 1.0).unwrap()]);
//! assert!((acct.epsilon() - 5.298).abs() < 0.01);
//! ```

pub mod accountant;
pub mod allocation;
pub mod attacks;
pub mod error;
pub mod experiment;
pub mod importance;
pub mod io;
pub mod mechanism;
pub mod rng;
pub mod sensitivity;
pub mod signal;
pub mod stages;
pub mod spectrogram;
pub mod surrogate;
pub mod utility;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Dimensions of a time–frequency feature (`frames × bins`, row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub bins: usize,
}

impl Shape {
    pub fn new(frames: usize, bins: usize) -> Self {
        Self { frames, bins }
    }

    pub fn len(&self) -> usize {
        self.frames * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

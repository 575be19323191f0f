//! Block partitions and per-block budget allocation.
//!
//! Given block masses `w_b`, the budget of block `b` is
//! `ε_min + (ε_max − ε_min) · w_b^γ / Σ w^γ`, so the budgets always sum to
//! `ε_min·B + (ε_max − ε_min)` and stay inside `[ε_min, ε_max]`.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::importance::ImportanceMap;
use crate::Shape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Disjoint rectangles tiling a `frames × bins` grid, row-major over blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub shape: Shape,
    pub block_h: usize,
    pub block_w: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub blocks: Vec<Block>,
}

impl BlockPartition {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block index of every grid cell, row-major.
    pub fn cell_blocks(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.shape.len());
        for r in 0..self.shape.frames {
            for c in 0..self.shape.bins {
                out.push((r / self.block_h) * self.block_cols + c / self.block_w);
            }
        }
        out
    }

    /// Stable textual identifier, e.g. `4x129/4x8`.
    pub fn id(&self) -> String {
        format!(
            "{}x{}/{}x{}",
            self.shape.frames, self.shape.bins, self.block_h, self.block_w
        )
    }

    pub fn parse_id(id: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed partition id {id:?}"));
        let (grid, block) = id.split_once('/').ok_or_else(bad)?;
        let pair = |s: &str| -> Result<(usize, usize)> {
            let (a, b) = s.split_once('x').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        };
        let (frames, bins) = pair(grid)?;
        let (h, w) = pair(block)?;
        make_partition(frames, bins, h, w)
    }
}

pub fn make_partition(frames: usize, bins: usize, block_h: usize, block_w: usize) -> Result<BlockPartition> {
    if frames == 0 || bins == 0 || block_h == 0 || block_w == 0 {
        return Err(Error::invalid("partition dimensions must be positive"));
    }
    if block_h > frames || block_w > bins {
        return Err(Error::invalid(format!(
            "block {block_h}x{block_w} larger than grid {frames}x{bins}"
        )));
    }
    let block_rows = frames.div_ceil(block_h);
    let block_cols = bins.div_ceil(block_w);
    let mut blocks = Vec::with_capacity(block_rows * block_cols);
    for br in 0..block_rows {
        for bc in 0..block_cols {
            blocks.push(Block {
                rows: br * block_h..((br + 1) * block_h).min(frames),
                cols: bc * block_w..((bc + 1) * block_w).min(bins),
            });
        }
    }
    Ok(BlockPartition {
        shape: Shape::new(frames, bins),
        block_h,
        block_w,
        block_rows,
        block_cols,
        blocks,
    })
}

pub fn block_mass(w: &ImportanceMap, p: &BlockPartition) -> Result<Vec<f64>> {
    if w.shape != p.shape {
        return Err(Error::invalid(format!(
            "importance map is {:?}, partition is {:?}",
            w.shape, p.shape
        )));
    }
    let mut mass = vec![0.0; p.num_blocks()];
    for (v, b) in w.weights.iter().zip(p.cell_blocks()) {
        mass[b] += v;
    }
    Ok(mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVector {
    pub eps_per_block: Vec<f64>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub gamma: f64,
}

impl BudgetVector {
    pub fn len(&self) -> usize {
        self.eps_per_block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps_per_block.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.eps_per_block.iter().sum()
    }
}

pub fn allocate(mass: &[f64], eps_min: f64, eps_max: f64, gamma: f64) -> Result<BudgetVector> {
    if mass.is_empty() {
        return Err(Error::invalid("no blocks to allocate"));
    }
    if !(eps_min > 0.0 && eps_min <= eps_max && eps_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < eps_min <= eps_max, got {eps_min}, {eps_max}"
        )));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    if mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::invalid("block masses must be finite and nonnegative"));
    }
    // Dividing by the largest mass first keeps w^γ away from underflow for
    // large γ; the ratio w^γ / Σw^γ is unchanged.
    let top = mass.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::DegenerateInput("all block masses are zero".into()));
    }
    let pow: Vec<f64> = mass.iter().map(|m| (m / top).powf(gamma)).collect();
    let total: f64 = pow.iter().sum();
    let span = eps_max - eps_min;
    let eps_per_block = pow.iter().map(|p| eps_min + span * (p / total)).collect();
    Ok(BudgetVector {
        eps_per_block,
        eps_min,
        eps_max,
        gamma,
    })
}

pub fn uniform_budget(num_blocks: usize, eps_min: f64, eps_max: f64) -> Result<BudgetVector> {
    allocate(&vec![1.0 / num_blocks as f64; num_blocks], eps_min, eps_max, 1.0)
}

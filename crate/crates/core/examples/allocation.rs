//! Spread a privacy budget over blocks in proportion to importance mass.

use csi_dp::allocation::{allocate, block_mass, make_partition, uniform_budget};
use csi_dp::importance::band_prior_importance;
use csi_dp::Shape;

fn main() -> csi_dp::Result<()> {
    let shape = Shape::new(4, 129);
    let partition = make_partition(shape.frames, shape.bins, 4, 8)?;
    // 80% of the importance on the 16-24 Hz activity band.
    let map = band_prior_importance(shape, 16..25, 0.8)?;
    let mass = block_mass(&map, &partition)?;

    let (eps_min, eps_max) = (1.0, 8.0);
    for gamma in [1.0, 2.0, 4.0] {
        let b = allocate(&mass, eps_min, eps_max, gamma)?;
        let top: Vec<String> = b.eps_per_block.iter().take(5).map(|e| format!("{e:.3}")).collect();
        println!(
            "gamma {gamma}: first blocks [{}], total {:.6} (expected {:.6})",
            top.join(", "),
            b.total(),
            eps_min * partition.num_blocks() as f64 + (eps_max - eps_min)
        );
    }
    let u = uniform_budget(partition.num_blocks(), eps_min, eps_max)?;
    println!("uniform: every block {:.4}, total {:.6}", u.eps_per_block[0], u.total());
    Ok(())
}

//! Fit the owner's surrogate on a small cohort and compare where gradient,
//! energy and random importance put their mass.

use csi_dp::experiment::{prepare_seed, ExperimentConfig};

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_windows = 2_000;
    cfg.data.test_windows = 500;
    let data = prepare_seed(&cfg, 0)?;
    let band = cfg.activity_bins();
    let owner = &data.owner;

    for (k, v) in data.diagnostics(&cfg)? {
        println!("{k:>20}: {v:.4}");
    }
    println!("share of importance in the activity bins {band:?}:");
    for (name, map) in [
        ("gradient", &owner.gradient_map),
        ("energy", &owner.energy_map),
        ("random", &owner.random_map),
    ] {
        println!("{name:>10}: {:.3}", map.mass_in_bins(band.clone()));
    }

    // Per-window gradient maps for the first few windows.
    for (x, l) in data.train.iter().zip(&data.train_labels).take(3) {
        let m = csi_dp::importance::gradient_importance(&owner.surrogate, x, l.activity, cfg.importance.eps0)?;
        println!("window of activity {}: {:.3} in band", l.activity, m.mass_in_bins(band.clone()));
    }
    Ok(())
}

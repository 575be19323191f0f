//! The command-line stages as library calls: generate windows, fit the
//! owner's pipeline, release the training split, evaluate, attack and audit.

use csi_dp::experiment::{audit, ExperimentConfig};
use csi_dp::io::Split;
use csi_dp::mechanism::MechanismMode;
use csi_dp::stages;

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_windows = 600;
    cfg.data.test_windows = 200;
    cfg.data.attacker_windows = 200;
    cfg.attacks.mia_candidates = 100;
    cfg.attacks.attribute_train = 200;
    cfg.attacks.attribute_test = 100;

    let root = std::env::temp_dir().join("csi-dp-file-pipeline");
    let (data, model, release) = (root.join("data"), root.join("model"), root.join("release"));

    let info = stages::generate(&cfg, 5, &data)?;
    println!("generated {} + {} + {} windows", info.train, info.test, info.attacker);
    let owner = stages::fit(&cfg, &data, &model)?;
    println!("clip C {:.3}, norm stats {}", owner.clip_c, owner.norm_stats.id());

    let manifest = stages::release(&cfg, &data, &model, Split::Train, MechanismMode::Adaptive, Some(2.0), &release)?;
    println!("released {} windows at eps {:?}", manifest.released_windows, manifest.reported_eps);

    for (k, v) in stages::evaluate(&cfg, &data, &model, &release, None)? {
        println!("{k:>16}: {v:.4}");
    }
    print!("{}", stages::attacks_table(&stages::attack(&cfg, &data, &model, &release)?));

    let report = audit(&release.join("ledger.csv"), &manifest)?;
    println!("audit: {} events, eps {}", report.events, report.recomputed_eps);
    Ok(())
}

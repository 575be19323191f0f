//! Membership, subject and room inference against releases of one seed,
//! with and without noise.
//!
//! cargo run --release --example attacks

use csi_dp::experiment::{fit_consumer, prepare_seed, release_records, run_attacks, AttackData, ExperimentConfig};
use csi_dp::mechanism::MechanismMode;

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_windows = 4_000;
    cfg.data.test_windows = 1_000;
    cfg.data.attacker_windows = 1_000;
    let data = prepare_seed(&cfg, 0)?;
    let owner = &data.owner;
    let values = |xs: &[csi_dp::sensitivity::ClippedFeature]| -> Vec<Vec<f64>> {
        xs.iter().map(|x| x.values.clone()).collect()
    };
    let test = values(&data.test);
    let pool = values(&data.pool);

    println!("chance: subject {:.3}, room {:.3}", 1.0 / 6.0, 1.0 / 5.0);
    for (mode, eps) in [
        (MechanismMode::NoDp, None),
        (MechanismMode::Adaptive, Some(8.0)),
        (MechanismMode::Adaptive, Some(0.25)),
    ] {
        let r = release_records(&cfg, owner, &data.train, &data.train_labels, mode, eps, 0)?;
        let x: Vec<Vec<f64>> = r.features.iter().map(|f| f.values.clone()).collect();
        let labels: Vec<_> = r.kept.iter().map(|&i| data.train_labels[i]).collect();
        let members: Vec<Vec<f64>> = r.kept.iter().map(|&i| data.train[i].values.clone()).collect();
        let y: Vec<usize> = labels.iter().map(|l| l.activity).collect();
        let consumer = fit_consumer(&cfg, owner, mode, eps, &x, &y, r.cell_sigma.as_deref())?;
        let a = run_attacks(
            &cfg,
            owner,
            mode,
            eps,
            &consumer,
            &AttackData {
                released: &x,
                released_labels: &labels,
                members: &members,
                nonmembers: &test,
                nonmember_labels: &data.test_labels,
                pool: &pool,
                pool_labels: &data.pool_labels,
                cell_sigma: r.cell_sigma.as_deref(),
            },
        )?;
        println!(
            "{:>9} eps {:>5}: MIA AUC {:.3} (advantage {:.3}), subject top-1 {:.3}, room top-1 {:.3}",
            mode.as_str(),
            csi_dp::experiment::fmt_eps(eps),
            a.mia.auc,
            a.mia.advantage,
            a.subject.top1.unwrap_or(f64::NAN),
            a.room.top1.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

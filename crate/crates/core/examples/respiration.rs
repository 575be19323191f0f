//! Breathing-rate utility under each mechanism, on the respiration preset
//! (32 s windows). Writes its outputs to a temporary directory.
//!
//! cargo run --release --example respiration

use csi_dp::experiment::{run_experiment, ExperimentConfig};
use csi_dp::mechanism::MechanismMode;

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::respiration();
    cfg.seeds = vec![0];
    cfg.dp.eps_targets = vec![1.0, 8.0];
    cfg.dp.modes = vec![MechanismMode::NoDp, MechanismMode::Uniform, MechanismMode::Adaptive];
    cfg.output.dir = std::env::temp_dir().join("csi-dp-respiration");
    let results = run_experiment(&cfg)?;

    println!("{:<10} {:>5} {:>9} {:>13} {:>14}", "mode", "eps", "accuracy", "rate MAE bpm", "waveform corr");
    for r in &results.records {
        let resp = r.respiration.as_ref().expect("respiration enabled");
        println!(
            "{:<10} {:>5} {:>9.3} {:>13.2} {:>14.3}",
            r.mode.as_str(),
            csi_dp::experiment::fmt_eps(r.eps),
            r.utility.accuracy,
            resp.rate_mae_bpm,
            resp.waveform_corr
        );
    }

    // Each window is one release; extrapolate the adaptive ledger to an hour.
    let per_hour = (3600.0 * cfg.generator.sample_rate / cfg.generator.window_len as f64) as u64;
    if let Some(m) = results.manifests.iter().find(|m| m.mechanism_mode == MechanismMode::Adaptive) {
        let ledger = csi_dp::accountant::read_ledger(&cfg.output.dir.join(&m.ledger_file))?;
        println!(
            "adaptive at eps {}: {per_hour} windows per hour compose to eps {:.1}",
            csi_dp::experiment::fmt_eps(m.target_eps),
            ledger.repeated_epsilon(per_hour)?
        );
    }
    Ok(())
}

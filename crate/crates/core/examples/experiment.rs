//! A reduced privacy-utility sweep: every mode over three ε targets on two
//! seeds, printed as a table of mean accuracy.
//!
//! cargo run --release --example experiment [output-dir]

use csi_dp::experiment::{curves_from_results, results_csv, run_experiment, summarize, ExperimentConfig};

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_windows = 10_000;
    cfg.seeds = vec![0, 1];
    cfg.dp.eps_targets = vec![0.5, 1.0, 4.0];
    cfg.output.dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("csi-dp-experiment"));

    let results = run_experiment(&cfg)?;
    let points = curves_from_results(&results_csv(&results.records)).expect("own output parses");
    println!("{:<10} {:>5} {:>9} {:>6}", "mode", "eps", "accuracy", "sd");
    for (mode, eps, metric, mean, sd, _) in summarize(&points) {
        if metric == "accuracy" {
            println!("{mode:<10} {eps:>5} {mean:>9.3} {sd:>6.3}");
        }
    }
    println!("outputs in {}", cfg.output.dir.display());
    Ok(())
}

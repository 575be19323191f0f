//! Fit the clip threshold on a cohort and check the sensitivity bound on
//! every pair of clipped features.

use csi_dp::experiment::{seed_generator, split_labels, synth_window, preprocess, ExperimentConfig};
use csi_dp::sensitivity::{clip_l2, fit_clip_threshold, l2_norm, l2_sensitivity};
use csi_dp::spectrogram::{fit_norm_stats, normalize_bounded, Stft};

fn main() -> csi_dp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train_windows = 200;
    let gen = seed_generator(&cfg, 1);
    let stft = Stft::new(&cfg.stft)?;
    let [train, _, _] = split_labels(&cfg, 1);

    let specs = train
        .iter()
        .enumerate()
        .map(|(i, &l)| preprocess(&cfg, &stft, &synth_window(&gen, l, i as u64)?))
        .collect::<csi_dp::Result<Vec<_>>>()?;
    let stats = fit_norm_stats(&specs)?;
    let bounded = specs
        .iter()
        .map(|s| normalize_bounded(s, &stats, cfg.stft.eps0))
        .collect::<csi_dp::Result<Vec<_>>>()?;

    let c = fit_clip_threshold(&bounded, cfg.clip_percentile)?;
    let clipped = bounded.iter().map(|x| clip_l2(x, c)).collect::<csi_dp::Result<Vec<_>>>()?;
    let scaled = clipped.iter().filter(|x| x.original_norm > c).count();
    println!("C = {c:.4} ({}th percentile), {scaled} of {} features scaled down", cfg.clip_percentile * 100.0, clipped.len());

    let mut worst = 0.0f64;
    for a in &clipped {
        for b in &clipped {
            let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
            worst = worst.max(l2_norm(&d));
        }
    }
    println!("largest pairwise distance {worst:.4} <= sensitivity {:.4}", l2_sensitivity(c));
    Ok(())
}

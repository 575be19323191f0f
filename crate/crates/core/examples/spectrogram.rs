//! Synthesize one CSI window, lose some packets, resample and compute the
//! bounded spectrogram feature.
//!
//! cargo run --example spectrogram

use csi_dp::signal::{drop_packets, generate_window, GenConfig, WindowLabels};
use csi_dp::spectrogram::{fit_norm_stats, normalize_bounded, resample_uniform, Stft, StftConfig};

fn main() -> csi_dp::Result<()> {
    let gen = GenConfig::default();
    let stft = Stft::new(&StftConfig::default())?;
    let centers = gen.activity_centers();

    let mut specs = Vec::new();
    for activity in 0..gen.num_activities {
        let labels = WindowLabels {
            activity,
            subject: 0,
            room: 0,
            member: true,
        };
        let w = generate_window(&gen, labels, activity as u64)?;
        let lossy = drop_packets(&w, 0.05, 7);
        let w = resample_uniform(&lossy, gen.window_len)?;
        let s = stft.magnitude(&w)?;

        // Strongest bin in the activity band, averaged over frames.
        let band = 12..30;
        let peak = band
            .clone()
            .max_by(|&a, &b| {
                let e = |k: usize| (0..s.shape.frames).map(|t| s.at(t, k)).sum::<f64>();
                e(a).total_cmp(&e(b))
            })
            .unwrap();
        println!(
            "activity {activity}: tone {:.1} Hz, {} of {} packets kept, peak bin {peak} ({:.1} Hz)",
            centers[activity],
            lossy.len(),
            gen.window_len,
            peak as f64 * s.freq_resolution
        );
        specs.push(s);
    }

    let stats = fit_norm_stats(&specs)?;
    let x = normalize_bounded(&specs[0], &stats, StftConfig::default().eps0)?;
    let (lo, hi) = x
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    println!(
        "bounded feature: {}x{} values in [{lo:.3}, {hi:.3}], norm stats {}",
        x.shape.frames,
        x.shape.bins,
        stats.id()
    );
    Ok(())
}

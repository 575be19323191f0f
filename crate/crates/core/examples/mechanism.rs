//! Release one clipped feature under each mechanism mode at ε = 1 and show
//! how the noise is spread over the blocks.

use csi_dp::accountant::AccountantState;
use csi_dp::allocation::make_partition;
use csi_dp::importance::{band_prior_importance, ImportanceMap};
use csi_dp::mechanism::{plan, MechanismMode, MechanismParams, NoiseCalibration};
use csi_dp::sensitivity::clip_l2;
use csi_dp::spectrogram::BoundedFeature;
use csi_dp::Shape;

fn main() -> csi_dp::Result<()> {
    let shape = Shape::new(4, 129);
    let x = BoundedFeature {
        shape,
        values: (0..shape.len()).map(|i| ((i % 129) as f64 / 129.0).powi(2)).collect(),
        norm_stats_id: "demo".into(),
    };
    let clip_c = 5.0;
    let x = clip_l2(&x, clip_c)?;
    let partition = make_partition(4, 129, 4, 8)?;
    let params = MechanismParams {
        partition,
        eps_min: 1.0,
        eps_max: 8.0,
        gamma: 2.0,
        clip_c,
        calibration: NoiseCalibration::Target {
            eps: 1.0,
            delta: 1e-5,
            releases_per_window: 1,
        },
    };
    let important = band_prior_importance(shape, 16..25, 0.8)?;
    let random = csi_dp::importance::random_importance(shape, 3)?;

    let maps: [(MechanismMode, Option<&ImportanceMap>); 4] = [
        (MechanismMode::Uniform, None),
        (MechanismMode::Adaptive, Some(&important)),
        (MechanismMode::Random, Some(&random)),
        (MechanismMode::NoDp, None),
    ];
    for (mode, map) in maps {
        let p = plan(map, mode, &params)?;
        let (noisy, events) = p.apply(&x, 42, 0)?;
        let mut acct = AccountantState::new(1e-5);
        acct.compose(&events);
        let err: f64 = noisy.values.iter().zip(&x.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!(
            "{mode:>9}: sigma block 2 = {:8.3}, block 0 = {:8.3}, |noise| = {err:8.2}, eps = {:.4}",
            p.sigmas[2],
            p.sigmas[0],
            if events.is_empty() { 0.0 } else { acct.epsilon() }
        );
    }
    Ok(())
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::Path;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use csi_dp::accountant::{
    audit_ledger, calibrate_noise, default_alpha_grid, enforce_cap, AccountantState, CapDecision, CapPolicy,
    GaussianEvent, LedgerWriter,
};
use csi_dp::allocation::{allocate, make_partition};
use csi_dp::experiment::{run_experiment, ExperimentConfig, ExperimentResults};
use csi_dp::mechanism::{add_block_noise, MechanismMode};
use csi_dp::rng::NoiseStream;
use csi_dp::sensitivity::{clip_vec, l2_norm, ClippedFeature};
use csi_dp::surrogate::SurrogateModel;
use csi_dp::Shape;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn allocation_identity() -> Outcome {
    let mut rng = NoiseStream::new(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = 1 + rng.below(64) as usize;
        let mass: Vec<f64> = (0..b)
            .map(|_| if rng.uniform() < 0.2 { 0.0 } else { rng.uniform() })
            .collect();
        let mut mass = mass;
        mass[0] += 1e-3;
        let eps_min = rng.uniform_range(0.001, 2.0);
        let eps_max = eps_min + rng.uniform_range(0.0, 10.0);
        let gamma = rng.uniform_range(1.0, 6.0);
        let v = allocate(&mass, eps_min, eps_max, gamma).map_err(|e| e.to_string())?;
        let want = eps_min * b as f64 + (eps_max - eps_min);
        worst = worst.max((v.total() - want).abs());
    }
    check(worst <= 1e-9, format!("max |sum - identity| = {worst:.2e}"))
}

fn sensitivity_bound() -> Outcome {
    let mut rng = NoiseStream::new(102, 0);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100_000 {
        let d = 1 + rng.below(200) as usize;
        let c = rng.uniform_range(0.01, 10.0);
        let scale = [0.01, 1.0, 100.0][i % 3];
        let a: Vec<f64> = (0..d).map(|_| scale * rng.standard_normal()).collect();
        let b: Vec<f64> = (0..d).map(|_| scale * rng.standard_normal()).collect();
        let (a, _) = clip_vec(&a, c).map_err(|e| e.to_string())?;
        let (b, _) = clip_vec(&b, c).map_err(|e| e.to_string())?;
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        worst = worst.max(l2_norm(&diff) - 2.0 * c);
    }
    check(worst <= 1e-9, format!("max ||x - x'|| - 2C = {worst:.2e}"))
}

/// `min_α α·q + ln(1/δ)/(α−1)` over α in (1, 200] with step 1e-4.
fn dense_oracle(q: f64, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    (1..=1_990_000)
        .map(|i| 1.0 + i as f64 * 1e-4)
        .map(|a| a * q + l / (a - 1.0))
        .fold(f64::INFINITY, f64::min)
}

fn accountant_oracle() -> Outcome {
    let e = GaussianEvent::new(1.0, 1.0).map_err(|e| e.to_string())?;
    let mut one = AccountantState::new(1e-5);
    one.compose(&[e]);
    let oracle = dense_oracle(0.5, 1e-5);
    let eps = one.epsilon();
    let mut linear = true;
    for k in [2usize, 7, 100, 10_000] {
        let mut many = AccountantState::new(1e-5);
        many.compose(&vec![e; k]);
        linear &= many
            .curve
            .eps
            .iter()
            .zip(&one.curve.eps)
            .all(|(m, s)| (m - k as f64 * s).abs() <= 1e-12 * m);
    }
    check(
        (eps - 5.298).abs() <= 0.01 && (eps - oracle).abs() <= 0.01 && linear,
        format!("eps {eps:.4}, oracle {oracle:.4}, K-linear {linear}"),
    )
}

fn calibration() -> Outcome {
    let mut rng = NoiseStream::new(104, 0);
    let delta = 1e-5;
    let c = 1.7;
    let mut worst: f64 = 0.0;
    for eps in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        for b in [1usize, 8, 32] {
            for k in [1u64, 20] {
                let mass: Vec<f64> = (0..b).map(|_| rng.uniform() + 1e-3).collect();
                let budgets = allocate(&mass, 0.05, 1.0, 2.0).map_err(|e| e.to_string())?;
                let cal = calibrate_noise(eps, delta, &budgets, c, k).map_err(|e| format!("eps {eps} B {b} K {k}: {e}"))?;
                // Account for the calibrated noise from scratch.
                let events: Vec<GaussianEvent> = cal
                    .sigmas(&budgets, c)
                    .into_iter()
                    .map(|s| GaussianEvent::new(s, 2.0 * c).unwrap())
                    .collect();
                let mut acct = AccountantState::new(delta);
                for _ in 0..k {
                    acct.compose(&events);
                }
                worst = worst.max((acct.epsilon() - eps).abs() / eps);
            }
        }
    }
    check(worst <= 0.01, format!("max relative error {worst:.2e} over 36 targets"))
}

/// Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn noise_statistics() -> Outcome {
    let sigmas = [0.5, 3.0];
    let n = 1_000_000;
    let shape = Shape::new(2000, 1000);
    let p = make_partition(2000, 1000, 1000, 1000).map_err(|e| e.to_string())?;
    let zero = ClippedFeature {
        shape,
        values: vec![0.0; shape.len()],
        clip_c: 1.0,
        original_norm: 0.0,
    };
    let noisy = add_block_noise(&zero, &p, &sigmas, 105, 0).map_err(|e| e.to_string())?;
    let mut all = Vec::with_capacity(shape.len());
    let mut worst_std: f64 = 0.0;
    for (b, block) in p.blocks.iter().enumerate() {
        let mut z = Vec::with_capacity(n);
        for t in block.rows.clone() {
            z.extend(block.cols.clone().map(|f| noisy.values[t * 1000 + f]));
        }
        assert_eq!(z.len(), n);
        let mean = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        worst_std = worst_std.max((sd / sigmas[b] - 1.0).abs());
        all.extend(z.iter().map(|v| v / sigmas[b]));
    }
    // KS per block on the standardized draws.
    let std_normal = Normal::standard();
    let mut ks_p = f64::INFINITY;
    for chunk in all.chunks_mut(n) {
        chunk.sort_by(f64::total_cmp);
        let m = chunk.len() as f64;
        let d = chunk
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = std_normal.cdf(v);
                (f - i as f64 / m).max((i + 1) as f64 / m - f)
            })
            .fold(0.0, f64::max);
        ks_p = ks_p.min(kolmogorov_sf(d * m.sqrt()));
    }
    check(
        worst_std <= 0.002 && ks_p > 0.001,
        format!("max std error {:.3}%, min KS p {ks_p:.3}", worst_std * 100.0),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = NoiseStream::new(106, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = 2 + rng.below(6) as usize;
        let d = 1 + rng.below(60) as usize;
        let model = SurrogateModel {
            num_classes: k,
            dim: d,
            weights: (0..k * d).map(|_| rng.normal(0.0, 1.0)).collect(),
            bias: (0..k).map(|_| rng.normal(0.0, 0.5)).collect(),
        };
        let x: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
        let y = rng.below(k as u64) as usize;
        let (_, g) = model.loss_and_input_gradient(&x, y).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd: Vec<f64> = (0..d)
            .map(|i| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                let la = model.loss_and_input_gradient(&a, y).unwrap().0;
                let lb = model.loss_and_input_gradient(&b, y).unwrap().0;
                (la - lb) / (2.0 * h)
            })
            .collect();
        let err: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = l2_norm(&err) / l2_norm(&g).max(1e-12);
        worst = worst.max(rel);
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn budget_cap_safety(dir: &Path) -> Outcome {
    let delta = 1e-5;
    let cap = 4.0;
    let mut lines = Vec::new();
    for policy in [CapPolicy::Stop, CapPolicy::ShrinkBudget, CapPolicy::Downsample] {
        let path = dir.join(format!("stream-{policy:?}.csv"));
        let mut ledger = LedgerWriter::create(&path, &default_alpha_grid(), delta).map_err(|e| e.to_string())?;
        let mut state = AccountantState::new(delta).with_cap(cap);
        let mut rng = NoiseStream::new(109, policy as u64);
        let (mut released, mut max_reported) = (0, 0.0f64);
        for t in 0..10_000 {
            let mut events: Vec<GaussianEvent> = (0..8)
                .map(|_| GaussianEvent::new(rng.uniform_range(40.0, 400.0), 2.0).unwrap())
                .collect();
            let decision = loop {
                match enforce_cap(&state, &events, policy) {
                    CapDecision::ShrinkBudget if events[0].sigma < 1e9 => {
                        events.iter_mut().for_each(|e| e.sigma *= 2.0);
                    }
                    d => break d,
                }
            };
            match decision {
                CapDecision::Release => {}
                CapDecision::Stop => break,
                _ => continue,
            }
            state.compose(&events);
            for e in &events {
                ledger.record(e, t as f64).map_err(|e| e.to_string())?;
            }
            released += 1;
            let reported = state.epsilon();
            max_reported = max_reported.max(reported);
            if reported > cap {
                return Err(format!("{policy:?}: reported {reported} above cap {cap} at release {t}"));
            }
            if t % 2500 == 0 {
                ledger.flush().map_err(|e| e.to_string())?;
                let audited = audit_ledger(&path).map_err(|e| e.to_string())?;
                if (audited - reported).abs() > 1e-9 {
                    return Err(format!("{policy:?}: audit {audited} vs reported {reported}"));
                }
            }
        }
        drop(ledger);
        let audited = audit_ledger(&path).map_err(|e| e.to_string())?;
        let diff = (audited - state.epsilon()).abs();
        if diff > 1e-9 {
            return Err(format!("{policy:?}: final audit differs by {diff:e}"));
        }
        lines.push(format!("{policy:?} {released} released, max eps {max_reported:.4}"));
    }
    Ok(format!("cap {cap}: {}", lines.join("; ")))
}

fn mean_over_seeds(r: &ExperimentResults, mode: MechanismMode, eps: Option<f64>, seeds: &[u64], f: impl Fn(&csi_dp::experiment::RunRecord) -> f64) -> f64 {
    let v: Vec<f64> = r
        .records
        .iter()
        .filter(|x| x.mode == mode && x.eps == eps && seeds.contains(&x.seed))
        .map(f)
        .collect();
    assert_eq!(v.len(), seeds.len(), "{mode} {eps:?}");
    v.iter().sum::<f64>() / v.len() as f64
}

fn adaptive_beats_uniform(cfg: &ExperimentConfig, r: &ExperimentResults) -> Outcome {
    let acc = |m, e| mean_over_seeds(r, m, Some(e), &cfg.seeds, |x| x.utility.accuracy);
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.5, 1.0] {
        let (a, u, h) = (
            acc(MechanismMode::Adaptive, eps),
            acc(MechanismMode::Uniform, eps),
            acc(MechanismMode::Heuristic, eps),
        );
        ok &= a >= u + 0.03 && h <= a;
        parts.push(format!("eps {eps}: adaptive {a:.3} uniform {u:.3} heuristic {h:.3}"));
    }
    check(ok, parts.join("; "))
}

fn sweep_monotone(cfg: &ExperimentConfig, r: &ExperimentResults) -> Outcome {
    let seeds = &cfg.seeds[..3.min(cfg.seeds.len())];
    let mut worst_drop = f64::NEG_INFINITY;
    for mode in [MechanismMode::Uniform, MechanismMode::Heuristic, MechanismMode::Adaptive] {
        let accs: Vec<f64> = cfg
            .dp
            .eps_targets
            .iter()
            .map(|&e| mean_over_seeds(r, mode, Some(e), seeds, |x| x.utility.accuracy))
            .collect();
        for w in accs.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    check(worst_drop <= 0.02, format!("largest accuracy drop with growing eps {:.3}", worst_drop.max(0.0)))
}

fn leakage_attenuation(cfg: &ExperimentConfig, r: &ExperimentResults) -> Outcome {
    let chance = 1.0 / cfg.generator.num_subjects as f64;
    let subject = |m, e| mean_over_seeds(r, m, e, &cfg.seeds, |x| x.subject.top1.unwrap_or(f64::NAN));
    let auc = |m, e| mean_over_seeds(r, m, e, &cfg.seeds, |x| x.mia.auc);
    let plain = subject(MechanismMode::NoDp, None);
    let mut ok = plain >= 2.0 * chance;
    let mut parts = vec![format!("no_dp subject {plain:.3} (chance {chance:.3})")];
    for mode in [MechanismMode::Uniform, MechanismMode::Heuristic, MechanismMode::Adaptive] {
        let (s, a) = (subject(mode, Some(0.25)), auc(mode, Some(0.25)));
        ok &= s <= 1.5 * chance && a <= 0.57;
        parts.push(format!("{mode} eps 0.25 subject {s:.3} mia {a:.3}"));
    }
    check(ok, parts.join("; "))
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let mut same = Vec::new();
    for f in ["results.csv", "attacks.csv", "curves.csv"] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
        same.push(format!("{f} ({} bytes)", x.len()));
    }
    Ok(format!("identical: {}", same.join(", ")))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {name:<28} {secs:>7.1}s  {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name:<28} {secs:>7.1}s  {d}");
            }
        }
    };

    let t = Instant::now();
    report("1 allocation identity", t, allocation_identity());
    let t = Instant::now();
    report("2 sensitivity bound", t, sensitivity_bound());
    let t = Instant::now();
    report("3 accountant oracle", t, accountant_oracle());
    let t = Instant::now();
    report("4 calibration", t, calibration());
    let t = Instant::now();
    report("5 noise statistics", t, noise_statistics());
    let t = Instant::now();
    report("6 gradient check", t, gradient_check());
    let t = Instant::now();
    report("9 budget cap safety", t, budget_cap_safety(tmp.path()));

    let mut cfg = ExperimentConfig::default();
    cfg.output.dir = tmp.path().join("run-a");
    let t = Instant::now();
    match run_experiment(&cfg) {
        Ok(results) => {
            let secs = t.elapsed().as_secs_f64();
            report("7 adaptive beats uniform", t, adaptive_beats_uniform(&cfg, &results));
            report("7 eps sweep monotone", t, sweep_monotone(&cfg, &results));
            report("8 leakage attenuation", t, leakage_attenuation(&cfg, &results));
            println!("      default run took {secs:.1}s");
            let mut again = cfg.clone();
            again.output.dir = tmp.path().join("run-b");
            let t2 = Instant::now();
            let second = run_experiment(&again).map_err(|e| e.to_string());
            report(
                "10 determinism",
                t,
                second.and_then(|_| determinism(&cfg.output.dir, &again.output.dir)),
            );
            println!("      second run took {:.1}s", t2.elapsed().as_secs_f64());
        }
        Err(e) => {
            for name in ["7 adaptive beats uniform", "8 leakage attenuation", "10 determinism"] {
                report(name, t, Err(format!("default run failed: {e}")));
            }
        }
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

//! File stages, the audit path and the command-line tool.

use std::path::Path;
use std::process::Command;

use csi_dp::accountant::read_ledger;
use csi_dp::experiment::{audit, run_experiment, ExperimentConfig, ReleaseManifest};
use csi_dp::io::Split;
use csi_dp::mechanism::MechanismMode;
use csi_dp::{stages, Error};

const SMALL: &str = "\
seeds = [0]
[data]
train_windows = 300
test_windows = 150
attacker_windows = 150
[attacks]
mia_candidates = 80
attribute_train = 100
attribute_test = 50
[dp]
eps_targets = [1.0]
modes = [\"adaptive\"]
";

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn csi_dp(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_csi-dp"))
        .args(args)
        .current_dir(dir)
        .env_remove("CSI_DP_OUTPUT_DIR")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Data, model and a train release of the small config, built once per test.
fn staged(root: &Path, cfg: &ExperimentConfig) -> ReleaseManifest {
    stages::generate(cfg, 0, &root.join("data")).unwrap();
    stages::fit(cfg, &root.join("data"), &root.join("model")).unwrap();
    stages::release(
        cfg,
        &root.join("data"),
        &root.join("model"),
        Split::Train,
        MechanismMode::Adaptive,
        Some(1.0),
        &root.join("rel"),
    )
    .unwrap()
}

#[test]
fn stages_reproduce_the_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.output.dir = tmp.path().join("exp");
    let results = run_experiment(&cfg).unwrap();
    let rec = &results.records[0];
    assert_eq!(rec.mode, MechanismMode::Adaptive);

    let manifest = staged(tmp.path(), &cfg);
    assert_eq!(manifest.reported_eps, rec.reported_eps);
    assert_eq!(manifest.released_windows, rec.released_windows);

    let metrics = stages::evaluate(&cfg, &tmp.path().join("data"), &tmp.path().join("model"), &tmp.path().join("rel"), None)
        .unwrap();
    let accuracy = metrics.iter().find(|(k, _)| k == "accuracy").unwrap().1;
    assert_eq!(accuracy, rec.utility.accuracy);

    let attacks = stages::attack(&cfg, &tmp.path().join("data"), &tmp.path().join("model"), &tmp.path().join("rel")).unwrap();
    assert_eq!(attacks.mia.auc, rec.mia.auc);
    assert_eq!(attacks.subject.top1, rec.subject.top1);
    assert_eq!(attacks.room.top1, rec.room.top1);

    let in_memory = std::fs::read_to_string(cfg.output.dir.join(&results.manifests[0].ledger_file)).unwrap();
    let staged_ledger = std::fs::read_to_string(tmp.path().join("rel/ledger.csv")).unwrap();
    assert_eq!(in_memory, staged_ledger);
}

#[test]
fn audit_recomputes_and_rejects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let manifest = staged(tmp.path(), &cfg);
    let ledger_path = tmp.path().join("rel/ledger.csv");

    let report = audit(&ledger_path, &manifest).unwrap();
    assert!((report.recomputed_eps - manifest.reported_eps.unwrap()).abs() <= 1e-9);
    assert!(report.events > 0);
    let full = read_ledger(&ledger_path).unwrap().replay().unwrap().epsilon();

    // Drop the last event.
    let text = std::fs::read_to_string(&ledger_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let truncated = tmp.path().join("truncated.csv");
    std::fs::write(&truncated, lines.join("\n") + "\n").unwrap();
    let eps = read_ledger(&truncated).unwrap().replay().unwrap().epsilon();
    assert!(eps < full);
    assert!(matches!(audit(&truncated, &manifest), Err(Error::Audit(_))));

    // Header only: the no-event baseline.
    let header: Vec<&str> = text.lines().take_while(|l| !l.starts_with(|c: char| c.is_ascii_digit())).collect();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, header.join("\n") + "\n").unwrap();
    let l = read_ledger(&empty).unwrap();
    assert!(l.entries.is_empty());
    let baseline = l.replay().unwrap().epsilon();
    assert!(baseline > 0.0 && baseline < eps);

    let mut forged = manifest.clone();
    forged.reported_eps = Some(manifest.reported_eps.unwrap() * 0.5);
    assert!(matches!(audit(&ledger_path, &forged), Err(Error::Audit(_))));
}

#[test]
fn no_dp_release_has_an_empty_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    staged(tmp.path(), &cfg);
    let m = stages::release(
        &cfg,
        &tmp.path().join("data"),
        &tmp.path().join("model"),
        Split::Train,
        MechanismMode::NoDp,
        None,
        &tmp.path().join("plain"),
    )
    .unwrap();
    assert_eq!(m.reported_eps, None);
    let r = audit(&tmp.path().join("plain/ledger.csv"), &m).unwrap();
    assert_eq!(r.events, 0);
    assert!(!tmp.path().join("plain/cell_sigma.csv").exists());

    let r = stages::release(
        &cfg,
        &tmp.path().join("data"),
        &tmp.path().join("model"),
        Split::Train,
        MechanismMode::NoDp,
        Some(1.0),
        &tmp.path().join("bad"),
    );
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn release_round_trips_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let manifest = staged(tmp.path(), &cfg);
    let rel = stages::load_release(&tmp.path().join("rel")).unwrap();
    assert_eq!(rel.manifest, manifest);
    assert_eq!(rel.x.len(), manifest.released_windows);
    assert_eq!(rel.indices, (0..rel.x.len()).collect::<Vec<_>>());
    assert_eq!(rel.cell_sigma.as_ref().unwrap().len(), cfg.feature_shape().len());
    let owner = stages::load_owner(&tmp.path().join("model")).unwrap();
    assert_eq!(owner.norm_stats.id(), manifest.norm_stats_id);
}

#[test]
fn cli_pipeline_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "small.toml"];
        full.extend_from_slice(args);
        csi_dp(&full, dir)
    };

    let (code, out, err) = run(&["generate", "--seed", "0", "--out", "data"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("300 train"));
    assert_eq!(run(&["fit", "--data", "data", "--out", "model"]).0, 0);
    let (code, _, err) = run(&[
        "release", "--data", "data", "--model", "model", "--mode", "adaptive", "--eps", "1", "--out", "rel",
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, _) = run(&["evaluate", "--data", "data", "--model", "model", "--release", "rel"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("metric,value\naccuracy,"));
    let (code, out, _) = run(&["attack", "--data", "data", "--model", "model", "--release", "rel"]);
    assert_eq!(code, 0);
    assert!(out.contains("mia"));
    let (code, out, _) = run(&["audit", "--manifest", "rel/manifest.json"]);
    assert_eq!(code, 0);
    assert!(out.contains("recomputed eps"));
    let (code, out, _) = run(&["audit", "--manifest", "rel/manifest.json", "--repeat", "10"]);
    assert_eq!(code, 0);
    let repeated: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("eps after 10 releases "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(repeated > 1.0);

    // No epsilon for a DP mode.
    let (code, _, _) = run(&["release", "--data", "data", "--model", "model", "--mode", "uniform", "--out", "x"]);
    assert_eq!(code, 2);
    // Unknown config key.
    assert_eq!(run(&["--set", "dp.epsilons=[1.0]", "config"]).0, 3);
    // Every window withheld under a tiny cap.
    let (code, _, _) = run(&[
        "--budget-cap", "0.01", "release", "--data", "data", "--model", "model", "--mode", "adaptive", "--eps", "1",
        "--out", "capped",
    ]);
    assert_eq!(code, 4);
    // Missing input.
    assert_eq!(run(&["audit", "--manifest", "nowhere/manifest.json"]).0, 5);
    // Corrupt manifest.
    std::fs::write(dir.join("bad.json"), "{ not json").unwrap();
    assert_eq!(run(&["audit", "--manifest", "bad.json", "--ledger", "rel/ledger.csv"]).0, 6);
    // Ledger that disagrees with its manifest.
    let text = std::fs::read_to_string(dir.join("rel/ledger.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(dir.join("short.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(run(&["audit", "--manifest", "rel/manifest.json", "--ledger", "short.csv"]).0, 7);
}

#[test]
fn curves_subcommand_reads_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut cfg = small();
    cfg.output.dir = dir.join("exp");
    run_experiment(&cfg).unwrap();
    let (code, _, err) = csi_dp(
        &["curves", "--results", "exp/results.csv", "--out", "c.csv", "--summary", "s.csv"],
        dir,
    );
    assert_eq!(code, 0, "{err}");
    let curves = std::fs::read_to_string(dir.join("c.csv")).unwrap();
    assert!(curves.starts_with("mode,eps,seed,metric,value\n"));
    assert!(curves.contains("adaptive,1,0,accuracy,"));
    let summary = std::fs::read_to_string(dir.join("s.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("adaptive,1,accuracy,")));

    std::fs::write(dir.join("junk.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(csi_dp(&["curves", "--results", "junk.csv", "--out", "j.csv"], dir).0, 6);
}

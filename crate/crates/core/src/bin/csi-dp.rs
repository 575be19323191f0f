use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use csi_dp::experiment::{audit, curves_from_results, run_experiment, summarize, ExperimentConfig, ReleaseManifest};
use csi_dp::io::Split;
use csi_dp::mechanism::MechanismMode;
use csi_dp::stages;
use csi_dp::{Error, Result};

/// Differentially private release of CSI spectrogram features.
#[derive(Parser)]
#[command(name = "csi-dp", version)]
struct Cli {
    /// Experiment config (TOML). Defaults apply to every key it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set dp.delta=1e-6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Shorthand for `--set seeds=[...]`.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Vec<u64>,

    /// Shorthand for `--set dp.eps_targets=[...]`.
    #[arg(long, value_delimiter = ',', global = true)]
    eps_targets: Vec<f64>,

    /// Shorthand for `--set dp.modes=[...]`.
    #[arg(long, value_delimiter = ',', global = true)]
    modes: Vec<MechanismMode>,

    /// Shorthand for `--set dp.budget_cap=...`.
    #[arg(long, global = true)]
    budget_cap: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration.
    Config,
    /// Synthesize the train, test and attacker windows of one seed.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit normalization, clip threshold, surrogate and importance maps.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Release one split with noise and write its manifest and ledger.
    Release {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        mode: MechanismMode,
        /// Target ε(δ) per window; omit for no_dp.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the consumer model on a release and score it on clean test windows.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        release: PathBuf,
        /// A release of the test split, scored as well.
        #[arg(long)]
        test_release: Option<PathBuf>,
        /// Write `metric,value` rows here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run membership, subject and room attacks against a release.
    Attack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        release: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a results table to long-format curve data.
    Curves {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write mean and standard deviation over seeds.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Recompute ε(δ) from a ledger and compare it with the manifest.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the ledger named in the manifest.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Also report ε(δ) after this many releases like the audited one,
        /// e.g. the windows in an hour of continuous monitoring.
        #[arg(long)]
        repeat: Option<u64>,
    },
    /// Run the whole experiment grid.
    Run {
        #[arg(long, env = "CSI_DP_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
}

fn list<T: ToString>(v: &[T], quote: bool) -> String {
    let items: Vec<String> = v
        .iter()
        .map(|x| if quote { format!("{:?}", x.to_string()) } else { x.to_string() })
        .collect();
    format!("[{}]", items.join(","))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut sets = cli.sets.clone();
    if !cli.seeds.is_empty() {
        sets.push(format!("seeds={}", list(&cli.seeds, false)));
    }
    if !cli.eps_targets.is_empty() {
        sets.push(format!("dp.eps_targets={}", list(&cli.eps_targets, false)));
    }
    if !cli.modes.is_empty() {
        sets.push(format!("dp.modes={}", list(&cli.modes, true)));
    }
    if let Some(c) = cli.budget_cap {
        sets.push(format!("dp.budget_cap={c:?}"));
    }
    base.with_overrides(&sets)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Generate { seed, out } => {
            let info = stages::generate(&cfg, seed, &out)?;
            println!(
                "seed {}: {} train, {} test, {} attacker windows in {}",
                info.seed,
                info.train,
                info.test,
                info.attacker,
                out.display()
            );
        }
        Command::Fit { data, out } => {
            let owner = stages::fit(&cfg, &data, &out)?;
            println!("clip C = {}, norm stats {}", owner.clip_c, owner.norm_stats.id());
        }
        Command::Release {
            data,
            model,
            split,
            mode,
            eps,
            out,
        } => {
            let m = stages::release(&cfg, &data, &model, split, mode, eps, &out)?;
            println!(
                "released {} windows ({} withheld), reported eps {}",
                m.released_windows,
                m.withheld_windows,
                m.reported_eps.map_or("none".to_string(), |e| e.to_string())
            );
        }
        Command::Evaluate {
            data,
            model,
            release,
            test_release,
            out,
        } => {
            let metrics = stages::evaluate(&cfg, &data, &model, &release, test_release.as_deref())?;
            let mut text = String::from("metric,value\n");
            for (k, v) in metrics {
                text.push_str(&format!("{k},{v}\n"));
            }
            write_or_print(out.as_deref(), &text)?;
        }
        Command::Attack {
            data,
            model,
            release,
            out,
        } => {
            let r = stages::attack(&cfg, &data, &model, &release)?;
            write_or_print(out.as_deref(), &stages::attacks_table(&r))?;
        }
        Command::Curves { results, out, summary } => {
            let points = curves_from_results(&read_text(&results)?).map_err(|m| Error::Parse {
                path: results.clone(),
                msg: m,
            })?;
            let mut text = String::from("mode,eps,seed,metric,value\n");
            for p in &points {
                text.push_str(&format!("{},{},{},{},{}\n", p.mode, p.eps, p.seed, p.metric, p.value));
            }
            write_or_print(Some(&out), &text)?;
            if let Some(s) = summary {
                let mut text = String::from("mode,eps,metric,mean,sd,n\n");
                for (m, e, k, mean, sd, n) in summarize(&points) {
                    text.push_str(&format!("{m},{e},{k},{mean},{sd},{n}\n"));
                }
                write_or_print(Some(&s), &text)?;
            }
        }
        Command::Audit {
            manifest,
            ledger,
            repeat,
        } => {
            let m = ReleaseManifest::load(&manifest)?;
            let ledger = ledger.unwrap_or_else(|| stages::ledger_path(&manifest, &m));
            let r = audit(&ledger, &m)?;
            println!("events {}", r.events);
            println!("recomputed eps {}", r.recomputed_eps);
            match r.reported_eps {
                Some(e) => println!("reported eps {e}"),
                None => println!("reported eps none"),
            }
            if let Some(n) = repeat {
                let eps = csi_dp::accountant::read_ledger(&ledger)?.repeated_epsilon(n)?;
                println!("eps after {n} releases {eps}");
            }
        }
        Command::Run { output_dir } => {
            if let Some(d) = output_dir {
                cfg.output.dir = d;
            }
            let results = run_experiment(&cfg)?;
            let text = csi_dp::experiment::results_csv(&results.records);
            let points = curves_from_results(&text).map_err(Error::Config)?;
            println!("{:<10} {:>6} {:>9} {:>8} {:>8}", "mode", "eps", "accuracy", "mia_auc", "subject");
            let stats = summarize(&points);
            let mean = |m: &str, e: &str, k: &str| {
                stats
                    .iter()
                    .find(|s| s.0 == m && s.1 == e && s.2 == k)
                    .map_or(f64::NAN, |s| s.3)
            };
            let mut seen = Vec::new();
            for p in &points {
                if !seen.contains(&(&p.mode, &p.eps)) {
                    seen.push((&p.mode, &p.eps));
                    println!(
                        "{:<10} {:>6} {:>9.3} {:>8.3} {:>8.3}",
                        p.mode,
                        p.eps,
                        mean(&p.mode, &p.eps, "accuracy"),
                        mean(&p.mode, &p.eps, "mia_auc"),
                        mean(&p.mode, &p.eps, "subject_top1")
                    );
                }
            }
            println!("results in {}", cfg.output.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use trilemma::attacks::{AttackKind, AttackResult};
use trilemma::harness::{self, ExperimentConfig, TrackRow};
use trilemma::metrics::EvaluationReport;
use trilemma::onion::{self, OnionPlan};
use trilemma::{nnkit, privacy, Error, Result};

/// Privacy / utility / fairness laboratory for small classifiers.
#[derive(Debug, Parser)]
#[command(name = "trilemma", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (TOML, or JSON by extension). Defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed, overriding the config's seed list.
    #[arg(long, global = true, env = "TRILEMMA_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured dataset as CSV (train, val and test files).
    GenData,
    /// Train the target model and save its checkpoint.
    Train,
    /// Attack a saved model with the configured attacks.
    Attack {
        #[arg(long)]
        model: PathBuf,
        /// Training steps for shadow models (default: the config's step budget).
        #[arg(long)]
        shadow_steps: Option<usize>,
    },
    /// Train, attack and evaluate one seed.
    Evaluate,
    /// Run every configured seed and report the median.
    Sweep,
    /// Cumulative technique ladder: baseline, +gn, +obs, +ws, +am, +pa, +sat.
    Ablate,
    /// Peel the most exposed training samples layer by layer.
    Onion {
        /// Samples removed per layer, comma separated (default: 10% of the set, 3 layers).
        #[arg(long, value_delimiter = ',')]
        removals: Option<Vec<usize>>,
        #[arg(long, default_value = "shadow_mlp")]
        attack: AttackKind,
    },
    /// Track the attack's view of one training sample across checkpoints.
    Track {
        /// Training sample to follow; defaults to a planted outlier.
        #[arg(long)]
        sample_id: Option<u64>,
        /// Distance of the planted outlier from its class centroid.
        #[arg(long, default_value_t = 8.0)]
        outlier_distance: f64,
        /// Ascending step list, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<usize>,
    },
    /// Noise multiplier for a target (epsilon, delta).
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: u64,
    },
    /// Epsilon spent by a (sigma, q, steps) schedule.
    Audit {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
    },
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

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if g.out.is_some() {
        cfg.output_dir = g.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn require_out(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn print_report(r: &EvaluationReport) {
    println!("{} (seed {})", r.name, r.seed);
    println!("  acc {:.4}  color {:.4}  gray {:.4}", r.acc, r.acc_color, r.acc_gray);
    println!("  train {:.4}  val {:.4}  ggap {:.2}", r.train_acc, r.val_acc, r.ggap);
    println!("  auc_max {:.4}  bias {:.4}  hs {:.4}", r.auc_max, r.bias, r.hs);
    if let Some(eps) = r.epsilon {
        println!("  epsilon {:.4}  sigma {:.4}  steps {}", eps, r.noise_multiplier.unwrap_or(f64::NAN), r.steps);
    } else {
        println!("  steps {}", r.steps);
    }
}

fn print_reports(g: &Global, reports: &[EvaluationReport]) {
    if g.json {
        print_json(&reports);
    } else {
        reports.iter().for_each(print_report);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Calibrate { epsilon, delta, q, steps } => {
            let c = privacy::calibrate_noise(epsilon, delta, q, steps)?;
            if g.json {
                print_json(&c);
            } else {
                println!("sigma {:.6}  epsilon {:.6}  order {}", c.noise_multiplier, c.epsilon, c.order);
            }
        }
        Command::Audit { sigma, q, steps, delta } => {
            let (epsilon, order) = privacy::epsilon_for(sigma, q, steps, delta)?;
            if g.json {
                print_json(&json!({ "epsilon": epsilon, "order": order }));
            } else {
                println!("epsilon {epsilon:.6}  order {order}");
            }
        }
        Command::GenData => {
            let cfg = load_config(g)?;
            let out = require_out(g)?;
            let raw = harness::load_or_generate(&cfg, first_seed(&cfg))?;
            raw.save(out)?;
            let sizes: Vec<_> = raw.files().iter().map(|(name, ds)| json!({ "file": name, "rows": ds.len() })).collect();
            if g.json {
                print_json(&sizes);
            } else {
                for (name, ds) in raw.files() {
                    println!("{} {}", out.join(name).display(), ds.len());
                }
            }
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let out = require_out(g)?;
            let seed = first_seed(&cfg);
            let data = harness::prepare_data(&cfg, seed)?;
            let t = harness::train_target(&cfg, &data, None, seed)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            nnkit::save_checkpoint(&t.outcome.model, out.join("model.ckpt"))?;
            let epsilon = match t.outcome.privacy {
                Some(p) => Some(privacy::epsilon_for(p.noise_multiplier, p.sampling_rate, p.releases as u64, cfg.privacy.delta)?.0),
                None => None,
            };
            let summary = json!({
                "seed": seed,
                "config_hash": cfg.config_hash(),
                "method": format!("{:?}", t.outcome.method),
                "steps_run": t.outcome.steps_run,
                "selected_step": t.outcome.selected_step,
                "empty_batches": t.outcome.empty_batches,
                "noise_multiplier": t.outcome.privacy.map(|p| p.noise_multiplier),
                "epsilon": epsilon,
                "train_acc": trilemma::metrics::accuracy(&t.outcome.model, &data.train)?,
                "val_acc": trilemma::metrics::accuracy(&t.outcome.model, &data.val)?,
            });
            harness::write_json(&out.join("training.json"), &summary)?;
            if g.json {
                print_json(&summary);
            } else {
                println!("model written to {}", out.join("model.ckpt").display());
                println!("steps {} (selected {})", t.outcome.steps_run, t.outcome.selected_step);
            }
        }
        Command::Attack { model, shadow_steps } => {
            let cfg = load_config(g)?;
            let seed = first_seed(&cfg);
            let data = harness::prepare_data(&cfg, seed)?;
            let params = nnkit::load_checkpoint(&model)?;
            let mut shadow = harness::resolve_noise(&cfg, data.train.len())?;
            if let Some(s) = shadow_steps {
                shadow.steps = s;
            }
            let arch = cfg.architecture(data.train.feature_dim, data.output_dim());
            let results = harness::run_attacks(&cfg, &data, &data.train, &params, &shadow, &arch, seed)?;
            if let Some(out) = &g.out {
                write_attacks(out, &results)?;
            }
            if g.json {
                print_json(&results.iter().map(|r| r.report_json()).collect::<Vec<_>>());
            } else {
                for r in &results {
                    println!("{:<18} auc {:.4}", r.kind.name(), r.auc);
                }
            }
        }
        Command::Evaluate => {
            let cfg = load_config(g)?;
            let seed = first_seed(&cfg);
            let data = harness::prepare_data(&cfg, seed)?;
            let run = harness::run_once(&cfg, &data, None, seed)?;
            if let Some(out) = &g.out {
                harness::persist_run(out, &run)?;
            }
            print_reports(g, std::slice::from_ref(&run.report));
        }
        Command::Sweep => {
            let cfg = load_config(g)?;
            let sweep = harness::run_experiment(&cfg)?;
            if g.json {
                print_json(&json!({ "median": sweep.median, "reports": sweep.reports }));
            } else {
                sweep.reports.iter().for_each(print_report);
                print_report(&sweep.median);
            }
        }
        Command::Ablate => {
            let cfg = load_config(g)?;
            let rows = harness::run_ablation(&cfg)?;
            let medians: Vec<EvaluationReport> = rows.into_iter().map(|r| r.median).collect();
            print_reports(g, &medians);
        }
        Command::Onion { removals, attack } => {
            let cfg = load_config(g)?;
            let seed = first_seed(&cfg);
            let data = harness::prepare_data(&cfg, seed)?;
            let plan = OnionPlan { removals, attack };
            let layers = onion::run_onion(&cfg, &data, &plan, seed, g.out.as_deref())?;
            if g.json {
                let rows: Vec<_> = layers
                    .iter()
                    .map(|l| json!({ "layer": l.layer, "train_size": l.train_size, "removed": l.removed_ids.len(), "report": l.report }))
                    .collect();
                print_json(&rows);
            } else {
                for l in &layers {
                    println!(
                        "layer {}  train {}  acc {:.4}  auc_max {:.4}  removed {}",
                        l.layer,
                        l.train_size,
                        l.report.acc,
                        l.report.auc_max,
                        l.removed_ids.len()
                    );
                }
            }
        }
        Command::Track { sample_id, outlier_distance, checkpoints } => {
            let cfg = load_config(g)?;
            let seed = first_seed(&cfg);
            let mut data = harness::prepare_data(&cfg, seed)?;
            let id = match sample_id {
                Some(id) => id,
                None => harness::plant_outlier(&mut data, 0, outlier_distance, seed)?,
            };
            let rows = harness::track_memorization(&cfg, &data, id, &checkpoints, seed)?;
            if let Some(out) = &g.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let path = out.join("track.csv");
                let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                harness::write_track_csv(&rows, file)?;
            }
            print_track(g, id, &rows);
        }
    }
    Ok(())
}

fn write_attacks(out: &Path, results: &[AttackResult]) -> Result<()> {
    for r in results {
        harness::write_json(&out.join(format!("attack_{}.json", r.kind.name())), &r.report_json())?;
        let path = out.join(format!("scores_{}.csv", r.kind.name()));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        r.write_scores_csv(file)?;
    }
    Ok(())
}

fn print_track(g: &Global, id: u64, rows: &[TrackRow]) {
    if g.json {
        print_json(&json!({ "sample_id": id, "rows": rows }));
        return;
    }
    println!("sample {id}");
    println!("{:>8} {:>9} {:>9} {:>7} {:>7}", "step", "train_acc", "test_acc", "auc", "mp");
    for r in rows {
        println!(
            "{:>8} {:>9.4} {:>9.4} {:>7.4} {:>7.4}",
            r.step, r.train_acc, r.test_acc, r.auc, r.membership_probability
        );
    }
}

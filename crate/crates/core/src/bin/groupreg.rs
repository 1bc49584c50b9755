use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use groupreg::backprop::CheckCase;
use groupreg::checkpoint::Checkpoint;
use groupreg::experiment::{self, ContinueOptions, ExperimentConfig};
use groupreg::prune::prune_network;
use groupreg::regularizers::{RegKind, ZeroRatio};
use groupreg::report::{self, ReportFormat};
use groupreg::{Error, Result};

#[derive(Parser)]
#[command(name = "groupreg", version, about = "Group lasso and partial regularization for MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write a checkpoint and reports.
    Train(TrainArgs),
    /// Train a partial regularizer across zero ratios.
    Sweep(SweepArgs),
    /// Remove dead neurons from a checkpoint.
    Prune(PruneArgs),
    /// Resume training from a (pruned) checkpoint.
    Continue(ContinueArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Re-render saved runs in another format.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Named configuration: toy, boston, sdd, mnist, fashion.
    #[arg(long)]
    preset: Option<String>,
    /// TOML configuration file (overrides --preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the datasets.
    #[arg(long, env = "GROUPREG_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Fraction of groups per layer left unregularized, e.g. 1/8.
    #[arg(long)]
    zero_ratio: Option<ZeroRatio>,
    /// gl, sgl, wgl, wsgl, pgl, psgl, l1, l2 or none.
    #[arg(long)]
    reg: Option<RegKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name, &self.data_dir)?,
            (None, None) => return Err(Error::Config("give --preset or --config".into())),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.zero_ratio {
            cfg.zero_ratio = v;
        }
        if let Some(v) = self.reg {
            cfg.reg.kind = v;
        }
        if let Some(v) = self.lambda {
            cfg.reg.lambda = v;
        }
        if let Some(v) = self.alpha {
            cfg.reg.alpha = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = Some(v);
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated zero ratios.
    #[arg(long, value_delimiter = ',', default_value = "0,1/8,1/4,1/2,3/4")]
    ratios: Vec<ZeroRatio>,
    /// Independent seeds per ratio.
    #[arg(long = "tries", default_value_t = 3)]
    tries: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Group norm below which a neuron is removed; defaults to the
    /// checkpoint's configured threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ContinueArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Prune before resuming.
    #[arg(long)]
    prune: bool,
    /// Train metric to reach; defaults to the checkpoint's.
    #[arg(long)]
    target: Option<f64>,
    /// Also train a freshly initialized network of the same shape.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seeds per (regularizer, batch-norm) pair.
    #[arg(long, default_value_t = 2)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// `runs.json` written by train or sweep.
    #[arg(long)]
    runs: PathBuf,
    /// table-text, csv, json or plot-data; repeatable.
    #[arg(long, default_value = "table-text")]
    format: Vec<ReportFormat>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn emit_all(reports: &[experiment::RunReport], out: &Path) -> Result<()> {
    for format in ReportFormat::ALL {
        for f in report::emit_report(reports, format, out)? {
            info!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            write_config(&cfg, &a.out)?;
            let run = experiment::train(&cfg)?;
            run.checkpoint().save(&a.out.join("checkpoint.json"))?;
            emit_all(std::slice::from_ref(&run.report), &a.out)?;
            print!("{}", report::table_text(std::slice::from_ref(&run.report)));
        }
        Command::Sweep(a) => {
            let cfg = a.config.resolve()?;
            write_config(&cfg, &a.out)?;
            let sweep = experiment::sweep_beta(&cfg, &a.ratios, a.tries)?;
            emit_all(&sweep.reports, &a.out)?;
            report::emit_summary(&sweep.summary, &a.out)?;
            print!("{}", report::table_text(&sweep.reports));
        }
        Command::Prune(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let threshold = a.threshold.unwrap_or(ckpt.config.group_threshold);
            let (pruned, rep) = prune_network(&ckpt.network, threshold)?;
            let mut cfg = ckpt.config.clone();
            cfg.dims = pruned.dims();
            let out = Checkpoint::new(cfg, pruned, None, ckpt.train_metric, ckpt.test_metric);
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            out.save(&a.out.join("pruned.json"))?;
            let path = a.out.join("prune_report.json");
            let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Serde(e.to_string()))?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let dims: Vec<String> = out.network.dims().iter().map(ToString::to_string).collect();
            println!("pruned network: {}", dims.join("/"));
        }
        Command::Continue(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let opts = ContinueOptions {
                epochs: a.epochs,
                prune: a.prune,
                target_metric: a.target,
                seed: a.seed,
            };
            let mut reports = Vec::new();
            if a.baseline {
                let outcome = experiment::continue_with_baseline(&ckpt, &opts)?;
                outcome.resumed.checkpoint().save(&a.out.join("continued.json"))?;
                reports.push(outcome.resumed.report);
                reports.extend(outcome.reinitialized);
            } else {
                let resumed = experiment::continue_training(&ckpt, &opts)?;
                resumed.checkpoint().save(&a.out.join("continued.json"))?;
                reports.push(resumed.report);
            }
            emit_all(&reports, &a.out)?;
            print!("{}", report::table_text(&reports));
            for r in &reports {
                match r.steps_to_target {
                    Some(s) => println!("{}: reached {:?} after {s} steps", r.dataset, r.target_metric),
                    None => println!("{}: target {:?} not reached", r.dataset, r.target_metric),
                }
            }
        }
        Command::Gradcheck(a) => {
            let mut worst: f64 = 0.0;
            for kind in RegKind::ALL {
                for bn in [false, true] {
                    for seed in 0..a.seeds {
                        let res = CheckCase::seeded(kind, bn, seed)?.check(a.step)?;
                        println!(
                            "{:<5} bn={:<5} seed={seed}  max rel error {:.3e} over {} entries",
                            kind.to_string(),
                            bn,
                            res.max_rel_error,
                            res.checked
                        );
                        worst = worst.max(res.max_rel_error);
                    }
                }
            }
            println!("worst {worst:.3e} (tolerance {:.1e})", a.tolerance);
            if worst > a.tolerance {
                return Err(Error::Numerical {
                    layer: 0,
                    what: format!("gradient check error {worst:.3e} above {:.1e}", a.tolerance),
                });
            }
        }
        Command::Report(a) => {
            let runs = report::load_runs(&a.runs)?;
            for format in a.format {
                for f in report::emit_report(&runs, format, &a.out)? {
                    println!("{}", f.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            // bad arguments are configuration errors
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use minidarts::autodiff::Fault;
use minidarts::dynamics::{
    convention_sweep, restoration_epoch, run_two_phase, DynamicsConfig, DynamicsError, FROZEN,
    TARGETS,
};
use minidarts::harness::{
    derive, resume_search, run_search, run_seeds, HarnessError, RunConfig, SearchOptions,
};
use minidarts::magnitude_stop::{StopCriterion, DEFAULT_PATIENCE};
use minidarts::search_space::gradcheck::gradcheck;

const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "minidarts",
    version,
    about = "Desk-scale differentiable architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write metrics, magnitudes and checkpoints.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the preset named in the config file.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated seeds; each run goes to `seed_<s>/` under the output directory.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["seed", "resume_from"])]
        seeds: Option<Vec<u64>>,
        /// Stop online when this criterion fires (e.g. `sc:2`, `peak:op_large`).
        #[arg(long)]
        early_stop: Option<String>,
        #[arg(long, default_value_t = DEFAULT_PATIENCE)]
        patience: usize,
        /// Continue the run in the output directory from this epoch's checkpoint.
        #[arg(long)]
        resume_from: Option<usize>,
    },
    /// Roll a finished run back to the epoch chosen by each criterion.
    Derive {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated criteria: peak:<op>, residual:<op>, sc:<k>, rt:<window>.
        #[arg(long, allow_hyphen_values = true)]
        criteria: String,
    },
    /// Two-phase softmax recovery study.
    Dynamics {
        /// Learning rates; defaults to 0.001,0.01.
        #[arg(long, value_delimiter = ',')]
        lr: Vec<f64>,
        #[arg(long)]
        sweep_conventions: bool,
        /// Directory for trajectory CSVs and the sweep report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences on random supernets.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn search(
    config: &Path,
    preset: Option<&str>,
    seed: Option<u64>,
    seeds: Option<&[u64]>,
    early_stop: Option<&str>,
    patience: usize,
    resume_from: Option<usize>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let run = cfg.resolve(preset, seed)?;
    let out = cfg.output_path();
    let opts = SearchOptions {
        early_stop: early_stop
            .map(|s| s.parse::<StopCriterion>())
            .transpose()
            .map_err(|e| config_error(e.to_string()))?,
        patience,
    };
    if let Some(seeds) = seeds {
        let results = run_seeds(&run, &out, seeds, &opts)?;
        for r in results {
            println!(
                "seed {}: val_acc {} val_loss {}",
                r.seed, r.final_metrics.val_acc, r.final_metrics.val_loss
            );
        }
        println!("summary: {}", out.join("seeds_summary.csv").display());
        return Ok(());
    }
    let outcome = match resume_from {
        Some(epoch) => resume_search(&out, epoch, &opts)?,
        None => run_search(&run, &out, &opts)?,
    };
    let last = outcome.metrics.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, train_acc {} val_acc {} -> {}",
        run.train.scheme_name,
        last.epoch,
        last.train_acc,
        last.val_acc,
        out.display()
    );
    if let Some(es) = outcome.early_stop {
        println!(
            "early stop {} at epoch {} (selected epoch {}): {}",
            es.criterion, es.stopped_at, es.selected_epoch, es.genotype
        );
    }
    Ok(())
}

fn derive_cmd(run: &Path, criteria: &str) -> Result<(), Failure> {
    let criteria = StopCriterion::parse_list(criteria).map_err(|e| config_error(e.to_string()))?;
    for d in derive(run, &criteria)? {
        println!("{},{},{}", d.criterion, d.epoch, d.genotype);
    }
    Ok(())
}

fn dynamics_failure(e: DynamicsError) -> Failure {
    let code = match e {
        DynamicsError::NonFinite { .. } => 3,
        DynamicsError::Config(_) => 2,
        _ => 1,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn dynamics(lrs: &[f64], sweep: bool, out: Option<&Path>) -> Result<(), Failure> {
    let lrs: Vec<f64> = if lrs.is_empty() {
        TARGETS.iter().map(|t| t.0).collect()
    } else {
        lrs.to_vec()
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    println!("lr,t2");
    for lr in lrs {
        let cfg = DynamicsConfig::reference(lr);
        let traj = run_two_phase(&cfg).map_err(dynamics_failure)?;
        let t2 = restoration_epoch(&traj, cfg.restoration_rule).map_err(dynamics_failure)?;
        println!("{lr},{t2}");
        if let Some(dir) = out {
            let path = dir.join(format!("trajectory_lr_{lr}.csv"));
            let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
            traj.write_csv(file).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
        }
    }
    if sweep {
        let report = convention_sweep(&TARGETS).map_err(dynamics_failure)?;
        for e in &report.entries {
            let t2: Vec<String> =
                e.t2.iter()
                    .map(|t| t.map_or("-".into(), |v| v.to_string()))
                    .collect();
            println!(
                "{:?} {:?} {:?}: t2 {} {}",
                e.convention.sign,
                e.convention.rule,
                e.convention.variant,
                t2.join(","),
                if e.matches { "match" } else { "miss" }
            );
        }
        match report.frozen {
            Some(c) => println!(
                "frozen: {:?} {:?} {:?} ({} matching)",
                c.sign,
                c.rule,
                c.variant,
                report.matching.len()
            ),
            None => {
                return Err(Failure {
                    code: 1,
                    message: "no convention reproduces the targets".into(),
                })
            }
        }
        if report.frozen != Some(FROZEN) {
            return Err(Failure {
                code: 1,
                message: "sweep result differs from the built-in convention".into(),
            });
        }
        if let Some(dir) = out {
            let path = dir.join("sweep_report.json");
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        }
    }
    Ok(())
}

fn gradcheck_cmd(trials: usize, seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    let fault = match fault {
        None => None,
        Some("relu") => Some(Fault::ReluPassThrough),
        Some(other) => return Err(config_error(format!("unknown fault {other:?}"))),
    };
    let report = gradcheck(trials, seed, fault).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    println!(
        "trials {} entries {} max_rel_error {:e}",
        report.trials, report.entries_checked, report.max_rel_error
    );
    if report.passed() {
        return Ok(());
    }
    for f in report.failures.iter().take(20) {
        eprintln!(
            "trial {} {}[{}]: analytic {} numeric {} rel {:e}",
            f.trial, f.tensor, f.index, f.analytic, f.numeric, f.rel_error
        );
    }
    Err(Failure {
        code: EXIT_GRADCHECK,
        message: format!("{} entries exceed tolerance", report.failures.len()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Search {
            config,
            preset,
            seed,
            seeds,
            early_stop,
            patience,
            resume_from,
        } => search(
            config,
            preset.as_deref(),
            *seed,
            seeds.as_deref(),
            early_stop.as_deref(),
            *patience,
            *resume_from,
        ),
        Command::Derive { run, criteria } => derive_cmd(run, criteria),
        Command::Dynamics {
            lr,
            sweep_conventions,
            out,
        } => dynamics(lr, *sweep_conventions, out.as_deref()),
        Command::Gradcheck {
            trials,
            seed,
            fault,
        } => gradcheck_cmd(*trials, *seed, fault.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

mod commands;
mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spritetree_core::error::Error;

use commands::OutPaths;
use config::RunConfig;

/// Sprite-level game state extraction, decision-tree policy surrogates,
/// Shapley attributions, and adversarial feature permutations.
#[derive(Parser)]
#[command(name = "spritetree", version)]
struct Cli {
    /// Directory all relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set game=mini-breakout`.
    /// Repeatable; applied after the file and environment.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories from the scripted policy and write them to disk.
    Record {
        /// Trajectory output directory (default: <out-dir>/trajectories).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the feature schema and labeled dataset from recorded trajectories.
    Dataset {
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        schema_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate a surrogate tree, evaluate held-out trajectories,
    /// and fit the bagged ensemble.
    TrainEval {
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        tree_out: Option<PathBuf>,
        #[arg(long)]
        ensemble_out: Option<PathBuf>,
    },
    /// Rank sprites by Shapley attribution for one timestep and render an
    /// overlay highlighting the top sprites.
    Explain {
        /// Timestep within the trajectory.
        #[arg(long)]
        timestep: usize,
        /// Trajectory directory (default: <out-dir>/trajectories/traj_k00).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Permute top-attributed sprite features on the k=24 trajectory and
    /// measure how often the scripted policy's action changes.
    Adversarial {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export the surrogate tree as Graphviz dot, truncated to a depth.
    ExportTree {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(workdir: &Path, explicit: Option<PathBuf>, default: PathBuf) -> PathBuf {
    match explicit {
        Some(p) if p.is_absolute() => p,
        Some(p) => workdir.join(p),
        None => default,
    }
}

fn run(cli: Cli) -> spritetree_core::error::Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .map(|p| if p.is_absolute() { p.clone() } else { cli.workdir.join(p) });
    let mut cfg = RunConfig::load(config_path.as_deref())?;
    for pair in &cli.overrides {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("override `{pair}` is not of the form KEY=VALUE"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;

    let out = OutPaths::new(&cli.workdir, &cfg);
    let w = &cli.workdir;
    match cli.command {
        Command::Record { out: dir } => {
            commands::cmd_record(&cfg, &resolve(w, dir, out.trajectories()))
        }
        Command::Dataset {
            trajectories,
            schema_out,
            out: dataset_out,
        } => commands::cmd_dataset(
            &resolve(w, trajectories, out.trajectories()),
            &resolve(w, schema_out, out.schema()),
            &resolve(w, dataset_out, out.dataset()),
        ),
        Command::TrainEval {
            schema,
            dataset,
            report,
            tree_out,
            ensemble_out,
        } => commands::cmd_train_eval(
            &cfg,
            &resolve(w, schema, out.schema()),
            &resolve(w, dataset, out.dataset()),
            &resolve(w, report, out.root.join("train_eval_report.txt")),
            &resolve(w, tree_out, out.tree_model()),
            &resolve(w, ensemble_out, out.ensemble_model()),
        ),
        Command::Explain {
            timestep,
            trajectory,
            model,
            schema,
            report,
            overlay,
        } => commands::cmd_explain(
            &resolve(w, model, out.ensemble_model()),
            &resolve(w, schema, out.schema()),
            &resolve(w, trajectory, out.trajectories().join("traj_k00")),
            timestep,
            &resolve(w, report, out.root.join("explain_report.txt")),
            &resolve(w, overlay, out.root.join("overlay.ppm")),
        ),
        Command::Adversarial {
            model,
            schema,
            dataset,
            trajectories,
            report,
        } => commands::cmd_adversarial(
            &cfg,
            &resolve(w, model, out.ensemble_model()),
            &resolve(w, schema, out.schema()),
            &resolve(w, dataset, out.dataset()),
            &resolve(w, trajectories, out.trajectories()),
            &resolve(w, report, out.root.join("adversarial_report.txt")),
        ),
        Command::ExportTree {
            model,
            schema,
            depth,
            out: dot_out,
        } => commands::cmd_export_tree(
            &resolve(w, model, out.tree_model()),
            &resolve(w, schema, out.schema()),
            depth,
            &resolve(w, dot_out, out.root.join("tree.dot")),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

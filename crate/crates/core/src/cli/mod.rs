//! Command-line driver: dataset generation, training, evaluation,
//! comparison and reporting over a working directory.

mod config;
mod pipeline;
mod report;

pub use config::{EvalConfig, RunConfig, SelectionMode, Workdir};
pub use pipeline::{
    ae_selection, cmd_compare, cmd_eval, cmd_generate, cmd_train_ae, cmd_train_node, collect_node_runs,
    read_eval_summary, run_id, select_nodes, EvalSummary, FailureRow, JobFilter, NodeRun, NodeSelection,
};
pub use report::{cmd_report, render_svg, ConditioningRow, CurvePoint, MetadataRow, PairedRow};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::georeg::Method;

#[derive(Debug, Parser)]
#[command(name = "georom", version, about = "Reduced-order modeling lab: data, training, evaluation and reports")]
pub struct Cli {
    /// Working directory holding config, data, runs and outputs.
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// Worker threads for parallel jobs.
    #[arg(long, global = true, env = "GEOROM_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Use the full-scale configuration (very long runs).
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Explicit configuration file; overrides --full and --seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ScaleArgs {
    fn resolve(&self) -> Result<RunConfig> {
        if let Some(p) = &self.config {
            return RunConfig::load(p);
        }
        if self.full {
            log::warn!("full-scale configuration selected; expect very long training times");
            return Ok(RunConfig::full(self.seed));
        }
        Ok(RunConfig::desk(self.seed))
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "method")]
    pub methods: Vec<String>,
    #[arg(long = "ae-seed")]
    pub ae_seeds: Vec<u64>,
    #[arg(long = "node-seed")]
    pub node_seeds: Vec<u64>,
}

impl FilterArgs {
    fn resolve(&self) -> Result<JobFilter> {
        Ok(JobFilter {
            methods: self.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?,
            ae_seeds: self.ae_seeds.clone(),
            node_seeds: self.node_seeds.clone(),
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the full-order model and write the dataset.
    Generate(ScaleArgs),
    /// Train autoencoders; completed runs are skipped.
    TrainAe(FilterArgs),
    /// Train latent vector fields on frozen autoencoders.
    TrainNode(FilterArgs),
    /// Roll out every completed run on the evaluation windows.
    Eval {
        /// `best-val-swa`, `shared-target`, or `all`.
        #[arg(long, default_value = "all")]
        selection: String,
    },
    /// Paired comparisons against the baseline.
    Compare {
        #[arg(long, default_value = "all")]
        selection: String,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long = "metric")]
        metrics: Vec<String>,
    },
    /// Tables, figures and a markdown summary.
    Report,
    /// Every stage in order.
    Reproduce(ScaleArgs),
}

fn modes(s: &str) -> Result<Vec<SelectionMode>> {
    if s == "all" {
        Ok(SelectionMode::ALL.to_vec())
    } else {
        Ok(vec![SelectionMode::parse(s)?])
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir);
    match &cli.command {
        Command::Generate(s) => {
            let m = cmd_generate(&wd, &s.resolve()?)?;
            println!("{}", m.content_sha256);
        }
        Command::TrainAe(f) => cmd_train_ae(&wd, &f.resolve()?)?,
        Command::TrainNode(f) => cmd_train_node(&wd, &f.resolve()?)?,
        Command::Eval { selection } => {
            for m in modes(selection)? {
                cmd_eval(&wd, m)?;
            }
        }
        Command::Compare {
            selection,
            baseline,
            metrics,
        } => {
            let base = baseline.as_deref().map(Method::parse).transpose()?;
            for m in modes(selection)? {
                cmd_compare(&wd, m, base, metrics)?;
            }
        }
        Command::Report => cmd_report(&wd)?,
        Command::Reproduce(s) => {
            cmd_generate(&wd, &s.resolve()?)?;
            let all = JobFilter::default();
            cmd_train_ae(&wd, &all)?;
            cmd_train_node(&wd, &all)?;
            for m in SelectionMode::ALL {
                cmd_eval(&wd, m)?;
                cmd_compare(&wd, m, None, &[])?;
            }
            cmd_report(&wd)?;
        }
    }
    Ok(())
}

/// Parses arguments, configures logging and the thread pool, runs the
/// command and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: worker count must be positive");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}


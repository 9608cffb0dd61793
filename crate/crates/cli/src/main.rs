use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refsource_core::config::{Overrides, RunConfig};
use refsource_core::ensemble::Ablation;
use refsource_core::eval::ReportFormat;
use refsource_core::llm::Mode;
use refsource_core::numfmt::fmt_sig9;
use refsource_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "refsource", version, about = "Rank the references of a paper by how likely each one inspired it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the feature matrix for every (paper, reference) pair.
    Featurize(Common),
    /// Train both base scorers on the training split.
    Train(Common),
    /// Collect LLM answer sets (from the cache in replay mode).
    Llm {
        #[command(flatten)]
        common: Common,
        /// Print the planned request count and exit without sending anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Fuse base scores and LLM answers into final scores.
    Score(Common),
    /// Compute per-paper AP and MAP from a scores file.
    Eval(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Validate a normalized corpus file and copy it to the configured path.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Which evidence reaches the final score.
    #[arg(long, value_enum)]
    ablate: Option<AblateArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Maximum worker count.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    Combined,
    BaseOnly,
    LlmOnly,
}

impl From<AblateArg> for Ablation {
    fn from(a: AblateArg) -> Self {
        match a {
            AblateArg::Combined => Ablation::Combined,
            AblateArg::BaseOnly => Ablation::BaseOnly,
            AblateArg::LlmOnly => Ablation::LlmOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Live,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Machine,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode.map(|m| match m {
                ModeArg::Live => Mode::Live,
                ModeArg::Replay => Mode::Replay,
            }),
            jobs: self.jobs.map(|j| j as usize),
            format: self.format.map(|f| match f {
                FormatArg::Plain => ReportFormat::Plain,
                FormatArg::Machine => ReportFormat::Machine,
            }),
        }
    }

    fn load(&self) -> Result<RunConfig, PipelineError> {
        let cfg = RunConfig::load(&self.config, &self.overrides())?;
        pipeline::configure_threads(cfg.jobs);
        Ok(cfg)
    }

    fn ablation(&self) -> Ablation {
        self.ablate.map(Ablation::from).unwrap_or_default()
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Featurize(c) => {
            let s = pipeline::cmd_featurize(&c.load()?)?;
            println!("{} rows for {} papers -> {}", s.rows, s.papers, s.path.display());
        }
        Command::Train(c) => {
            for t in pipeline::cmd_train(&c.load()?)? {
                match (&t.path, t.validation_auc) {
                    (None, _) => println!("scorer {}: external scores", t.name),
                    (Some(p), Some(auc)) => {
                        println!("scorer {}: {} (validation AUC {})", t.name, p.display(), fmt_sig9(auc))
                    }
                    (Some(p), None) => println!("scorer {}: {} (validation AUC undefined)", t.name, p.display()),
                }
            }
        }
        Command::Llm { common, dry_run } => {
            let s = pipeline::cmd_llm(&common.load()?, dry_run)?;
            if s.dry_run {
                println!("planned requests: {} ({} papers)", s.planned, s.papers);
            } else {
                println!(
                    "{} papers: {} answered slots, {} missing",
                    s.papers, s.answered_slots, s.missing_slots
                );
            }
        }
        Command::Score(c) => {
            let cfg = c.load()?;
            let rows = pipeline::cmd_score(&cfg, c.ablation())?;
            println!("{} rows -> {}", rows.len(), pipeline::scores_path(&cfg, c.ablation()).display());
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let report = pipeline::cmd_eval(&cfg, c.ablation())?;
            print!("{}", report.render(cfg.report.format));
        }
        Command::Pipeline(c) => {
            let cfg = c.load()?;
            let s = pipeline::cmd_pipeline(&cfg, c.ablate.map(Ablation::from))?;
            for (a, r) in &s.reports {
                println!("{:<10} MAP {} ({} papers)", a.as_str(), fmt_sig9(r.map), r.evaluated);
            }
        }
        Command::Ingest { common, input } => {
            let cfg = RunConfig::load_for_ingest(&common.config, &common.overrides())?;
            let n = pipeline::cmd_ingest(&cfg, &input)?;
            println!("{n} papers -> {}", cfg.corpus.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

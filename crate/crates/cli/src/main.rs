use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finer_core::config::{parse_seeds, Overrides, RunConfig, CONFIG_FILE};
use finer_core::pipeline::{self, Engine, Sweep};
use finer_core::{Error, Result};

/// Discover fine-grained class names from a few unlabelled images, then
/// classify and score a test split with them.
#[derive(Parser)]
#[command(name = "finer", version)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Describe discovery images, reason candidate names and denoise them.
    Discover(RunArgs),
    /// Build the fused classifier and label the test split.
    Classify(RunArgs),
    /// Score predictions against the test labels.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write a sensitivity sweep over alpha or K.
        #[arg(long, value_enum)]
        sweep: Option<SweepArg>,
    },
    /// Summarize report.json files of a run, or of its seed-N runs.
    Report {
        /// Run directory; defaults to the one named in --config.
        run_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// Augmented copies per discovery image.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Several runs in seed-N subdirectories, e.g. `1..10`.
    #[arg(long)]
    seeds: Option<String>,
    /// Scripted offline providers built from the manifest labels.
    #[arg(long)]
    mock: bool,
    /// Ignore cached provider responses.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Alpha,
    K,
}

impl RunArgs {
    fn configs(&self) -> Result<Vec<RunConfig>> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            alpha: self.alpha,
            k_augment: self.k,
            seed: self.seed,
            mock: self.mock,
        });
        config.validate()?;
        Ok(match &self.seeds {
            None => vec![config],
            Some(text) => {
                let base = RunConfig {
                    cache_dir: config.cache_dir.clone().or_else(|| Some(config.run_dir.join("cache"))),
                    ..config
                };
                parse_seeds(text)?.into_iter().map(|s| base.for_seed(s)).collect()
            }
        })
    }

    fn for_each(&self, f: impl Fn(&Engine) -> Result<()>) -> Result<()> {
        for config in self.configs()? {
            log::info!("run {} (seed {})", config.run_dir.display(), config.seed);
            f(&Engine::open(config, self.force)?)?;
        }
        Ok(())
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discover(args) => args.for_each(|e| {
            let c = e.discover()?;
            println!(
                "{}: {} candidate names, {} kept: {}",
                e.config.run_dir.display(),
                c.raw.len(),
                c.refined.len(),
                c.refined.join(", ")
            );
            Ok(())
        }),
        Command::Classify(args) => args.for_each(|e| {
            let p = e.classify()?;
            println!("{}: {} test images classified", e.config.run_dir.display(), p.len());
            Ok(())
        }),
        Command::Evaluate { run, sweep } => {
            let sweep = sweep.map(|s| match s {
                SweepArg::Alpha => Sweep::Alpha,
                SweepArg::K => Sweep::K,
            });
            run.for_each(|e| {
                let r = e.evaluate(sweep)?;
                println!(
                    "{}: cACC {} sACC {} over {} images",
                    e.config.run_dir.display(),
                    pct(r.cacc),
                    pct(r.sacc),
                    r.n_test
                );
                Ok(())
            })
        }
        Command::Report { run_dir, config } => {
            let dir = match (run_dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => RunConfig::load(&c)?.run_dir,
                (None, None) if std::path::Path::new(CONFIG_FILE).exists() => {
                    RunConfig::load(std::path::Path::new(CONFIG_FILE))?.run_dir
                }
                (None, None) => return Err(Error::Config("give a run directory or --config".into())),
            };
            print!("{}", pipeline::report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compo_synth::par::default_workers;
use compo_synth::report::to_text;
use compo_synth::{CliResult, Overrides, Run};

#[derive(Parser)]
#[command(
    name = "compo-synth",
    version,
    about = "Learn, certify and evaluate distributed controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one controller per class of identical subsystems.
    Learn(Common),
    /// Certify the learned controllers: subsystem probabilities, abstraction
    /// errors, the network lower bound and the sampled estimate.
    Bound(Common),
    /// Sampled network satisfaction and percentile trajectories.
    Evaluate(Common),
    /// Exact optimal values of the abstract games; needs a known model.
    Oracle(Common),
    /// Percentile trajectories only.
    ExportTraj(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Closed-loop network runs for the sampled estimate.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated percentiles, e.g. `1,10,50,90,99`.
    #[arg(long, value_delimiter = ',')]
    percentiles: Option<Vec<f64>>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn run(&self) -> CliResult<Run> {
        let o = Overrides {
            seed: self.seed,
            samples: self.samples,
            episodes: self.episodes,
            percentiles: self.percentiles.clone(),
            output: self.output.clone(),
        };
        Run::load(
            &self.config,
            &o,
            self.workers.unwrap_or_else(default_workers),
        )
    }
}

fn execute(cmd: &Command) -> CliResult<String> {
    Ok(match cmd {
        Command::Learn(c) => to_text(&c.run()?.learn()?),
        Command::Bound(c) => to_text(&c.run()?.bound()?),
        Command::Evaluate(c) => to_text(&c.run()?.evaluate()?),
        Command::Oracle(c) => to_text(&c.run()?.oracle()?),
        Command::ExportTraj(c) => format!(
            "percentile_csv = {:?}\n",
            c.run()?.export_traj()?.display().to_string()
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

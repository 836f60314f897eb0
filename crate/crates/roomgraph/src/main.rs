use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roomgraph::commands::{self, CliError, ExportFormat, RunOptions};

#[derive(Parser)]
#[command(name = "roomgraph", version, about = "Room-level Sim(3) scene-graph mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and frame stream.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a scene graph from an input directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the provider answers to OUT/replay.
        #[arg(long)]
        record_replay: bool,
    },
    /// Score a run directory against ground truth.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// One CSV row per room instead of the table.
        #[arg(long)]
        csv: bool,
    },
    /// Export a run as a world-frame PLY map or a g2o pose graph.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// Output file; defaults to RUN/export/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => {
            let config = commands::load_config(config.as_deref())?;
            commands::simulate(&config, seed, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Run {
            config,
            input,
            out,
            record_replay,
        } => {
            let config = commands::load_config(config.as_deref())?;
            let opts = RunOptions {
                input: &input,
                out: &out,
                record_replay,
            };
            let output = commands::run(&config, &opts)?;
            eprintln!(
                "{} rooms, {} objects, {} loop closures; wrote {}",
                output.graph.rooms().len(),
                output.graph.objects().len(),
                output.loop_closures_accepted,
                out.display()
            );
        }
        Command::Eval { config, run, gt, csv } => {
            let config = commands::load_config(config.as_deref())?;
            let report = commands::eval(&config, &run, &gt)?;
            print!("{}", commands::render_report(&report, csv));
        }
        Command::Export {
            config,
            run,
            format,
            out,
        } => {
            let config = commands::load_config(config.as_deref())?;
            let path = commands::export(&config, &run, format, out.as_deref())?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // Help and version go to stdout, everything else to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `roomgraph --help` for usage");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

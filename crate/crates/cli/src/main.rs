use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facetviz_cli::{commands, CliResult, Command, RunOptions};

#[derive(Parser)]
#[command(name = "facetviz", version, about = "Multifaceted feature visualization on a micro-CNN")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file; repeat to layer, later files win.
    #[arg(long = "config", value_name = "PATH")]
    configs: Vec<PathBuf>,
    /// Parent directory of the run directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Overrides the command's primary seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Render the synthetic shapes dataset to PNGs.
    Generate(Common),
    /// Train the micro-CNN and save its weights.
    Train(Common),
    /// Discover facets of a unit and visualize each one.
    Facets(Common),
    /// Plain regularized activation maximization.
    Actmax(Common),
    /// Five-phase center-biased activation maximization.
    Center(Common),
    /// Optimize from interpolations between two seeds.
    Interpolate(Common),
    /// Run several regularizer settings from one seed.
    Compare(Common),
    /// Re-run a recorded run and verify its artifacts.
    Replay {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "runs")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
    },
    /// Print the center-biased schedule in reference units.
    Echo {
        #[arg(long = "config", value_name = "PATH")]
        configs: Vec<PathBuf>,
    },
}

fn dispatch(sub: Sub) -> CliResult<String> {
    let (cmd, c) = match sub {
        Sub::Generate(c) => (Command::Generate, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Facets(c) => (Command::Facets, c),
        Sub::Actmax(c) => (Command::Actmax, c),
        Sub::Center(c) => (Command::Center, c),
        Sub::Interpolate(c) => (Command::Interpolate, c),
        Sub::Compare(c) => (Command::Compare, c),
        Sub::Replay { manifest, out, jobs } => {
            let r = commands::replay(&manifest, &out, jobs)?;
            return Ok(format!(
                "{}\nreplay ok: {} artifacts identical ({} FLT1)",
                r.replay.run_dir.display(),
                r.compared,
                r.flt1_compared
            ));
        }
        Sub::Echo { configs } => return Ok(commands::schedule_echo(&configs)?.trim_end().to_string()),
    };
    let opts = RunOptions { configs: c.configs, out: c.out, jobs: c.jobs, seed: c.seed };
    Ok(commands::run(cmd, &opts)?.run_dir.display().to_string())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}

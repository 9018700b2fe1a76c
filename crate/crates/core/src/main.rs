use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sicsim::scenario::{bundled, bundled_source, list_scenarios, run_scenario, write_outputs, ScenarioConfig, OUT_DIR_ENV};
use sicsim::Error;

#[derive(Parser)]
#[command(name = "sicsim", version, about = "Self-interference canceller simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a config file or a bundled scenario name.
    Run {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: out/<scenario name>].
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// List bundled scenarios.
    List,
    /// Show a bundled scenario; `--dump` prints its config for editing.
    Preset {
        name: String,
        #[arg(long)]
        dump: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn load(config: &str) -> sicsim::Result<ScenarioConfig> {
    let path = Path::new(config);
    if path.exists() {
        ScenarioConfig::from_file(path)
    } else if bundled_source(config).is_some() {
        bundled(config)
    } else {
        Err(Error::Config(format!("no config file or bundled scenario named `{config}`")))
    }
}

fn run(config: &str, seed: Option<u64>, out_dir: Option<PathBuf>, duration: Option<f64>) -> sicsim::Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = duration {
        cfg.duration_s = d;
    }
    let result = run_scenario(&cfg)?;
    let dir = out_dir.unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let written = write_outputs(&result, &dir)?;
    let r = &result.report;
    let c = &r.cancellation;
    println!(
        "{}: intrinsic {:.2} dB, active {:.2} dB, total {:.2} dB over [{:.3e}, {:.3e}] Hz",
        r.name, c.intrinsic_db, c.active_db, c.total_db, c.band_hz.lo_hz, c.band_hz.hi_hz
    );
    match r.convergence_time_s {
        Some(t) => println!("converged after {t:.3e} s"),
        None => println!("did not converge"),
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run {
            config,
            seed,
            out_dir,
            duration,
        } => run(&config, seed, out_dir, duration),
        Command::List => {
            for (name, desc) in list_scenarios() {
                println!("{name:<22}{desc}");
            }
            Ok(())
        }
        Command::Preset { name, dump } => match bundled_source(&name) {
            Some(src) if dump => {
                print!("{src}");
                Ok(())
            }
            Some(_) => bundled(&name).map(|c| println!("{}: {}", c.name, c.description)),
            None => Err(Error::Config(format!("unknown scenario `{name}`"))),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

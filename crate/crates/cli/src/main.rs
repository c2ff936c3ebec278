use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hamadv_cli::{parse_config, run_scenario, Command, EXIT_ERROR};

const CSV_HELP: &str = "\
Output files (in --out, else the config's output_dir, else ./hamadv-out):
  report.json  full report; exit code and status are repeated inside
  sweep.csv    written by diagnose, adversary and multidof, header
               q,p,det,det_err:
                 q        position of the first degree of freedom
                 p        momentum of the first degree of freedom
                 det      determinant of the finite-difference step Jacobian
                 det_err  |det(J_h) - det(J_h/2)|; empty when the step is
                          undefined on the stencil

Exit status: 0 clean, 1 error, 2 a certificate names a violated property.";

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Integrate,
    Diagnose,
    Adversary,
    Multidof,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Integrate => Command::Integrate,
            Cmd::Diagnose => Command::Diagnose,
            Cmd::Adversary => Command::Adversary,
            Cmd::Multidof => Command::Multidof,
        }
    }
}

/// Run a hamadv scenario.
#[derive(Debug, Parser)]
#[command(name = "hamadv", version, after_help = CSV_HELP)]
struct Cli {
    command: Cmd,
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, env = "HAMADV_THREADS")]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<u8, String> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| format!("cannot read {}: {e}", cli.config.display()))?;
    let config = parse_config(&text).map_err(|e| e.to_string())?;
    let wanted = Command::from(cli.command);
    if config.command != wanted {
        return Err(format!(
            "config declares command `{}` but `{}` was requested",
            config.command.as_str(),
            wanted.as_str()
        ));
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("hamadv-out"));
    let code = run_scenario(&config, &out).map_err(|e| e.to_string())?;
    if code == EXIT_ERROR {
        eprintln!("hamadv: scenario failed; see {}", out.join("report.json").display());
    }
    Ok(code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hamadv: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smolsim::io::{self, Mode, RunOutput};
use smolsim::Error;

/// Smoluchowski coagulation with kernel (xy)^s: evolution, self-similar profiles and asymptotics.
#[derive(Debug, Parser)]
#[command(name = "smolsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override a configuration key; repeatable, applied after the file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the discrete equation on a uniform mass grid.
    Evolve,
    /// Solve for the self-similar profile and β (s < 0).
    Profile,
    /// Evaluate one closed-form asymptotic formula and print it as a CSV row.
    Asym {
        /// Formula name, e.g. origin-amplitude, residual-lb, gamma.
        name: Option<String>,
        #[arg(long = "s", allow_hyphen_values = true)]
        s: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<String>,
        #[arg(long = "b", allow_hyphen_values = true)]
        b: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        eps: Option<String>,
        #[arg(long = "x", allow_hyphen_values = true)]
        x: Option<String>,
    },
    /// Evolve, then rescale the snapshots to similarity variables.
    Rescale,
    /// Evolve, then measure the distance of rescaled snapshots to the profile.
    Collapse,
    /// Fit f_max² against |s| and check the large-|s| collapse.
    FmaxStudy,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    let mode = match &cli.command {
        Command::Evolve => Mode::Evolve,
        Command::Profile => Mode::Profile,
        Command::Rescale => Mode::Rescale,
        Command::Collapse => Mode::Collapse,
        Command::FmaxStudy => Mode::FmaxStudy,
        Command::Asym {
            name,
            s,
            xi,
            lambda,
            b,
            eps,
            x,
        } => {
            let pairs = [
                ("asym", name),
                ("s", s),
                ("xi", xi),
                ("lambda", lambda),
                ("b", b),
                ("eps", eps),
                ("x", x),
            ];
            for (k, v) in pairs {
                if let Some(v) = v {
                    overrides.push(format!("{k}={v}"));
                }
            }
            Mode::Asym
        }
    };

    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => String::new(),
    };

    let result = io::parse_config_with(&text, &overrides, Some(mode)).and_then(|cfg| {
        let output = io::run(&cfg)?;
        let files = io::emit_outputs(&output, &cfg, &cli.out)?;
        Ok((output, files))
    });
    match result {
        Ok((output, files)) => {
            if let RunOutput::Asym(row) = &output {
                println!("{}", row.csv_row());
            }
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

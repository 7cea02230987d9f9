use clap::{Parser, Subcommand};
use morse_conley::config::RunConfig;
use morse_conley::reports;
use morse_conley::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "morse-conley", version, about = "Morse-Conley homology of gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// circle, sphere2, torus2 or loopspace
    #[arg(long, global = true)]
    system: Option<String>,
    /// Action level a (number or inf)
    #[arg(long, global = true)]
    level: Option<String>,
    /// Config file (flat key = value with dotted sections)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and data files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global raster size (cells per side, or per cube face on the sphere)
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Verification suite (verify only); default all
    #[arg(long, global = true)]
    suite: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Critical point registry
    Crit,
    /// Connecting orbits with signs
    Connections,
    /// Morse boundary matrices
    Complex,
    /// Morse homology against the cubical oracle
    Homology,
    /// Conley pairs, their homology and axioms
    Conley,
    /// Filtration certificates and cellular homology
    Filtration,
    /// Verification suites (all systems unless --system is given)
    Verify,
    /// Plot data files
    Plotdata,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Crit => "crit",
            Command::Connections => "connections",
            Command::Complex => "complex",
            Command::Homology => "homology",
            Command::Conley => "conley",
            Command::Filtration => "filtration",
            Command::Verify => "verify",
            Command::Plotdata => "plotdata",
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = &cli.system {
        cfg.set("system.name", s)?;
    }
    if let Some(l) = &cli.level {
        cfg.set("level", l)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(g) = cli.grid {
        cfg.set("filtration.grid", &g.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.set("output.dir", &o.to_string_lossy())?;
    }
    if cli.suite.is_some() && !matches!(cli.command, Command::Verify) {
        return Err(Error::Config("--suite only applies to verify".into()));
    }
    cfg.system()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config(&cli).and_then(|cfg| {
        let all = cli.system.is_none() && !cli.config.as_ref().is_some_and(|_| cfg.canonical().contains("system.name"));
        let all = matches!(cli.command, Command::Verify) && all;
        reports::run(cli.command.name(), &cfg, cli.suite.as_deref(), all).map(|r| (cfg, r))
    });
    match result {
        Ok((cfg, r)) => {
            print!("{}", r.to_json(&cfg));
            if r.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epuf::commands::{self, KeygenArgs, Outcome};
use epuf::config::RunConfig;
use epuf::harness::Scenario;
use epuf::metrics::Scope;
use epuf::Error;

#[derive(Parser)]
#[command(name = "epuf", version, about = "Entropy-feature DRAM PUF simulator")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Helper-stream threshold.
    #[arg(long, global = true)]
    theta: Option<u32>,
    /// Characterization reads.
    #[arg(long, global = true)]
    omega: Option<usize>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Characterize every segment and write enrollment records.
    Characterize {
        /// Also dump device 0's reference bitmaps.
        #[arg(long)]
        dump_bitmaps: bool,
    },
    /// Write metric CSVs for the configured population.
    Evaluate {
        /// inter-chip, inter-bank, inter-segment or all.
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Register one challenge window and reconstruct its key.
    Keygen {
        #[arg(long, default_value_t = 0)]
        device: usize,
        /// Segment address as chip:bank:segment.
        #[arg(long, default_value = "0:0:0")]
        addr: String,
        /// Window index within the segment's EF stream.
        #[arg(long, default_value_t = 0)]
        window: u32,
    },
    /// Run honest authentication sessions and optional attack scenarios.
    AuthDemo {
        /// replay-init, replay-challenge, replay-response, tamper:<field>,
        /// tamper-each, bogus-flood, eavesdrop, id-linkability or all.
        #[arg(long)]
        attack: Vec<String>,
    },
}

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidValue {
            key: kv.clone(),
            msg: "expected key=value".into(),
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.theta {
        cfg.theta = t;
    }
    if let Some(o) = cli.omega {
        cfg.omega = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let result = match &cli.command {
        Command::Characterize { dump_bitmaps } => commands::characterize(&cfg, &cli.out, *dump_bitmaps),
        Command::Evaluate { scope } => {
            let scopes = match scope.as_str() {
                "all" => Scope::ALL.to_vec(),
                s => match Scope::parse(s) {
                    Some(sc) => vec![sc],
                    None => return config_error(format!("unknown scope `{s}`")),
                },
            };
            commands::evaluate(&cfg, &cli.out, &scopes)
        }
        Command::Keygen { device, addr, window } => {
            let Some(addr) = commands::parse_addr(addr) else {
                return config_error(format!("bad address `{addr}`, expected chip:bank:segment"));
            };
            if *device >= cfg.devices {
                return config_error(format!("device {device} not in population of {}", cfg.devices));
            }
            let args = KeygenArgs {
                device: *device,
                addr,
                window: *window,
            };
            commands::keygen(&cfg, &cli.out, &args)
        }
        Command::AuthDemo { attack } => {
            let mut scenarios = Vec::new();
            for a in attack {
                match Scenario::parse_list(a) {
                    Some(list) => scenarios.extend(list),
                    None => return config_error(format!("unknown attack `{a}`")),
                }
            }
            commands::auth_demo(&cfg, &cli.out, &scenarios)
        }
    };
    match result {
        Ok(Outcome::Ok(text)) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Ok(Outcome::CheckFailed(text)) => {
            println!("{}", text.trim_end());
            eprintln!("check failed");
            ExitCode::from(EXIT_CHECK)
        }
        Err(e @ (Error::Config { .. } | Error::InvalidValue { .. })) => config_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

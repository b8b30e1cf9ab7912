use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use streamchart::config::{RunConfig, KEYS};
use streamchart::io::{import_external, ImportFormat, ImportOptions};
use streamchart::pipeline::{cmd_evaluate, cmd_reproduce, cmd_stream, cmd_train};
use streamchart::{Error, Result};

/// Streaming channel charting with a bounded CSI memory.
///
/// Every run-configuration key is also a flag (`--p-update 0.3` sets
/// `p_update`). Flags override `--config`; a `profile` is applied before all
/// other keys.
#[derive(Parser, Debug)]
#[command(name = "streamchart", version)]
struct Cli {
    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Extra `key=value` setting; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the source through the curation strategy and checkpoint the memory.
    Stream,
    /// Train a chart on a memory checkpoint (or the whole stream for `all`).
    Train {
        /// Memory checkpoint; defaults to the one `stream` writes.
        #[arg(long, value_name = "PATH")]
        memory: Option<PathBuf>,
    },
    /// Chart the test source with a trained model and score it.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Stream, train and evaluate RandoS, SimS and the full-stream baseline.
    Reproduce,
    /// Convert an external dataset into a record file.
    Import {
        #[arg(long, default_value = "npy")]
        format: String,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Half-open record range `START..END` (either end may be omitted).
        #[arg(long, value_name = "RANGE")]
        records: Option<String>,
    },
    /// Print the resolved configuration and exit.
    Config,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for key in KEYS {
        cmd = cmd.arg(
            Arg::new(key.to_string())
                .long(flag_name(key))
                .value_name("VALUE")
                .global(true)
                .help_heading("Run configuration"),
        );
    }
    cmd
}

fn key_flags(m: &ArgMatches) -> Vec<(String, String)> {
    let sub = m.subcommand().map(|(_, s)| s);
    KEYS.iter()
        .filter_map(|k| {
            let v = sub
                .and_then(|s| s.get_one::<String>(k))
                .or_else(|| m.get_one::<String>(k))?;
            Some((k.to_string(), v.clone()))
        })
        .collect()
}

fn resolve_config(cli: &Cli, flags: &[(String, String)]) -> Result<RunConfig> {
    let mut text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    text.push('\n');
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        text += &format!("{} = {}\n", k.trim(), v.trim());
    }
    for (k, v) in flags {
        text += &format!("{k} = {v}\n");
    }
    let cfg = RunConfig::from_kv_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_range(s: &str) -> Result<Range<u64>> {
    let bad = || Error::Config(format!("invalid record range '{s}' (expected START..END)"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let start = if a.is_empty() { 0 } else { a.parse().map_err(|_| bad())? };
    let end = if b.is_empty() { u64::MAX } else { b.parse().map_err(|_| bad())? };
    if end < start {
        return Err(bad());
    }
    Ok(start..end)
}

fn run(cli: Cli, flags: Vec<(String, String)>) -> Result<()> {
    let cfg = resolve_config(&cli, &flags)?;
    match cli.command {
        Command::Config => print!("{}", cfg.to_kv()),
        Command::Stream => {
            let out = cmd_stream(&cfg)?;
            println!(
                "{}: accepted {} of {} samples, stored {}, checkpoint {}",
                cfg.strategy,
                out.accepted,
                out.offered,
                out.memory.len(),
                out.checkpoint.display()
            );
        }
        Command::Train { memory } => {
            let out = cmd_train(&cfg, memory.as_deref())?;
            println!(
                "{}: trained on {} samples, final loss {:.6}, model {}",
                cfg.strategy,
                out.samples,
                out.chart.report.final_loss,
                out.checkpoint.display()
            );
        }
        Command::Evaluate { model } => {
            let out = cmd_evaluate(&cfg, &model)?;
            match out.metrics {
                Some(m) => println!("{}: tw {:.4} ct {:.4} ks {:.4} rd {:.4}", out.label, m.tw, m.ct, m.ks, m.rd),
                None => println!("{}: chart written to {} (no ground truth)", out.label, out.chart_csv.display()),
            }
        }
        Command::Reproduce => {
            let out = cmd_reproduce(&cfg)?;
            for (s, m) in &out.rows {
                if let Some(m) = m {
                    println!("{s}: tw {:.4} ct {:.4} ks {:.4} rd {:.4}", m.tw, m.ct, m.ks, m.rd);
                }
            }
            println!("table {}", out.table.display());
        }
        Command::Import {
            format,
            input,
            output,
            records,
        } => {
            let format: ImportFormat = format.parse()?;
            let opts = ImportOptions {
                records: records.as_deref().map(parse_range).transpose()?,
            };
            let s = import_external(&input, format, &output, &opts)?;
            println!(
                "wrote {} records ({} antennas, {} subcarriers) to {}",
                s.header.count,
                s.header.antennas,
                s.header.subcarriers,
                s.output.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = command().get_matches();
    let flags = key_flags(&matches);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

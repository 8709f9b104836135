//! Binary entry point: argument parsing, config overlay, and dispatch to
//! the engine. Exit codes: 0 success, 1 verification failure, 2 parse
//! error, 3 cap exceeded, 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use rspin_cli::config::{parse_suites, Format, RunConfig};
use rspin_cli::engine::{generate_table, lax_dump, run_suite, single_correlator};
use rspin_cli::render::{render_report, render_table, render_value};
use rspin_cli::CliError;

use rspin_core::correlators::Sector;

#[derive(Parser)]
#[command(name = "rspin", version, about = "Exact genus-zero r-spin correlator engine")]
struct Cli {
    /// key=value config file; explicit flags override its entries
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Spin parameter r (at least 2)
    #[arg(long, global = true)]
    r: Option<u32>,

    /// Output format: json, csv, or text
    #[arg(long, global = true)]
    format: Option<String>,

    /// Write output to this file instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute one correlator and print its exact value
    Correlator {
        /// Sector: closed, ext, or open
        #[arg(long)]
        sector: String,
        /// Insertions twist:desc,... (bare twist means depth 0); for ext
        /// keys the twist -1 insertion is implicit
        #[arg(long, default_value = "")]
        ins: String,
        /// Descendent depth on the implicit twist -1 insertion (ext only)
        #[arg(long, default_value_t = 0)]
        minus_desc: u32,
        /// Number of boundary points (open only)
        #[arg(long, default_value_t = 0)]
        boundary: u32,
        /// Jet degree cap (defaults to the size the key needs)
        #[arg(long)]
        deg: Option<u32>,
        /// Coupling slot count (defaults to the size the key needs)
        #[arg(long)]
        flows: Option<u32>,
    },
    /// Write every nonzero correlator of a sector within the caps
    Table {
        /// Sector: closed, ext, or open
        #[arg(long)]
        sector: String,
        /// Cap on total insertions per key
        #[arg(long)]
        max_n: Option<usize>,
        /// Cap on descendent depth per key
        #[arg(long)]
        max_d: Option<u32>,
    },
    /// Run verification suites and report per-suite pass/fail
    Verify {
        /// Comma-separated suite names (default: the full registry)
        #[arg(long)]
        suite: Option<String>,
        /// Cap on total insertions per key
        #[arg(long)]
        max_n: Option<usize>,
        /// Cap on descendent depth per key
        #[arg(long)]
        max_d: Option<u32>,
        /// Keep dispersive layers through this genus
        #[arg(long)]
        genus_max: Option<u32>,
        /// Corrupt the Lax jet before checking (negative-test mode)
        #[arg(long, default_value_t = false)]
        inject_fault: bool,
    },
    /// Dump the Lax symbol or dispersive operator as canonical text
    Lax {
        /// Jet degree cap
        #[arg(long, default_value_t = 4)]
        deg: u32,
        /// Coupling slot count (defaults to r)
        #[arg(long)]
        flows: Option<u32>,
        /// Dump the dispersive operator instead of the symbol
        #[arg(long, default_value_t = false)]
        dispersive: bool,
        /// Slice to dump: full, or initial (T_2 = T_3 = ... = 0)
        #[arg(long, default_value = "full")]
        slice: String,
        /// Keep dispersive layers through this genus
        #[arg(long)]
        genus_max: Option<u32>,
    },
}

fn parse_sector(s: &str) -> Result<Sector, CliError> {
    match s {
        "closed" => Ok(Sector::Closed),
        "ext" | "extended" => Ok(Sector::Extended),
        "open" => Ok(Sector::Open),
        other => Err(CliError::Parse(format!(
            "unknown sector {other:?}; expected closed, ext, or open"
        ))),
    }
}

/// Parse "a:d,a:d,..." into (twist, depth) pairs; bare "a" means depth 0.
fn parse_insertions(s: &str) -> Result<Vec<(u32, u32)>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let p = part.trim();
        if p.is_empty() {
            continue;
        }
        let (a_str, d_str) = match p.split_once(':') {
            Some((a, d)) => (a, d),
            None => (p, "0"),
        };
        let a: u32 = a_str.trim().parse().map_err(|_| {
            CliError::Parse(format!(
                "bad twist {a_str:?} in insertion {p:?} (the -1 insertion is implicit for ext keys)"
            ))
        })?;
        let d: u32 = d_str
            .trim()
            .parse()
            .map_err(|_| CliError::Parse(format!("bad descendent depth {d_str:?} in {p:?}")))?;
        out.push((a, d));
    }
    Ok(out)
}

fn emit(output: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    // Precedence: built-in defaults, then the config file, then flags.
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(r) = cli.r {
        cfg.r = r;
    }
    if let Some(f) = &cli.format {
        cfg.format = Format::parse(f).map_err(CliError::Parse)?;
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    match cli.cmd {
        Cmd::Correlator { sector, ins, minus_desc, boundary, deg, flows } => {
            cfg.validate()?;
            let sector = parse_sector(&sector)?;
            let ins = parse_insertions(&ins)?;
            let value =
                single_correlator(cfg.r, sector, &ins, minus_desc, boundary, deg, flows)?;
            emit(&cfg.output, &render_value(&value, cfg.format)?)?;
            Ok(0)
        }
        Cmd::Table { sector, max_n, max_d } => {
            if let Some(n) = max_n {
                cfg.max_insertions = n;
            }
            if let Some(d) = max_d {
                cfg.max_descendent_depth = d;
            }
            cfg.validate()?;
            let sector = parse_sector(&sector)?;
            let rows = generate_table(&cfg, sector)?;
            emit(&cfg.output, &render_table(cfg.r, sector, &rows, cfg.format)?)?;
            Ok(0)
        }
        Cmd::Verify { suite, max_n, max_d, genus_max, inject_fault } => {
            if let Some(n) = max_n {
                cfg.max_insertions = n;
            }
            if let Some(d) = max_d {
                cfg.max_descendent_depth = d;
            }
            if let Some(g) = genus_max {
                cfg.genus_max = g;
            }
            if let Some(list) = &suite {
                cfg.suites = parse_suites(list).map_err(CliError::Parse)?;
            }
            cfg.validate()?;
            let reports: Vec<_> =
                cfg.suites.iter().map(|name| run_suite(name, &cfg, inject_fault)).collect();
            emit(&cfg.output, &render_report(cfg.r, &reports, cfg.format)?)?;
            Ok(if reports.iter().all(|s| s.pass) { 0 } else { 1 })
        }
        Cmd::Lax { deg, flows, dispersive, slice, genus_max } => {
            if let Some(g) = genus_max {
                cfg.genus_max = g;
            }
            cfg.validate()?;
            let slice_initial = match slice.as_str() {
                "full" => false,
                "initial" => true,
                other => {
                    return Err(CliError::Parse(format!(
                        "unknown slice {other:?}; expected full or initial"
                    )))
                }
            };
            let text = lax_dump(
                cfg.r,
                deg,
                flows.unwrap_or(cfg.r),
                dispersive,
                cfg.genus_max,
                slice_initial,
            )?;
            emit(&cfg.output, &text)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            // Help goes to stdout, real parse errors to stderr, matching
            // the conventional clap behavior.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

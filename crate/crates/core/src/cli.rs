//! Command-line front end: `run`, `sweep` and `flops`.
//!
//! Every artifact is written through a temporary file and renamed into place,
//! so an interrupted run never leaves a truncated CSV behind.
//!
//! CSV schemas:
//!
//! | file | header |
//! |------|--------|
//! | `metrics.csv` | `scheme,K,Q,oob_ratio_db,nmse_db,mean_antenna_nmse_db,flops,iterations,converged,zf_residual,precoder_change,oob_antenna` |
//! | `user_nmse.csv` | `scheme,K,user,nmse_db` |
//! | `error_history.csv` | `scheme,K,iteration,error_db` |
//! | `comparison.csv` | `scheme,K,Q,oob_ratio_db,nmse_db,flops` |
//! | `psd_<label>.csv` | `freq_hz,power_db` |
//! | `flops.csv` | `K,flops,savings_vs_max_K` |
//!
//! `K` is 0 for the uncompensated scheme; `converged` is `true`, `false` or
//! empty when the scheme has no feedback loop.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{fmt_db, fmt_exp, parse_f64};
use crate::learning::{evaluate, Experiment, ScenarioMetrics, Scheme};
use crate::mempoly::{flop_savings, flops};
use crate::scenario::ScenarioConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mimo-dpd", version, about = "Massive MIMO digital predistortion simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate every scheme listed in a scenario file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Evaluate the cross product of schemes and polynomial orders.
    Sweep {
        config: PathBuf,
        /// Comma-separated scheme kinds (no_dpd, conventional, proposed),
        /// each optionally pinned to one order as `kind:K`.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        /// Comma-separated polynomial orders K.
        #[arg(long, value_delimiter = ',')]
        orders: Vec<usize>,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Print the per-sample FLOP count of a DPD bank for several orders.
    Flops {
        #[arg(long, value_delimiter = ',', required = true)]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        memory: usize,
        #[arg(long, default_value_t = 100)]
        antennas: usize,
        /// Also write `flops.csv` into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seed_channel: Option<u64>,
    #[arg(long)]
    pub seed_training: Option<u64>,
    #[arg(long)]
    pub seed_evaluation: Option<u64>,
    /// Output directory; overrides `[output] directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error, by category.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_divergence() {
        return EXIT_DIVERGENCE;
    }
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// reports to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Run { config, common } => cmd_run(&config, &common, out).map(|_| ()),
        Command::Sweep { config, schemes, orders, common } => {
            let tuples = sweep_tuples(&schemes, &orders)?;
            cmd_sweep(&config, &tuples, &common, out).map(|_| ())
        }
        Command::Flops { orders, memory, antennas, out: dir } => {
            let table = cmd_flops(&orders, memory, antennas)?;
            out.write_all(table.as_bytes())?;
            if let Some(dir) = dir {
                std::fs::create_dir_all(&dir)?;
                write_atomic(&dir.join("flops.csv"), &table)?;
            }
            Ok(())
        }
    }
}

fn load(config: &Path, args: &RunArgs) -> Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = ScenarioConfig::from_path(config)?;
    cfg.set_seeds(args.seed_channel, args.seed_training, args.seed_evaluation);
    cfg.validate()?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    Ok((cfg, dir))
}

fn evaluate_all(exp: &Experiment, schemes: &[Scheme]) -> Result<Vec<ScenarioMetrics>> {
    schemes.par_iter().map(|s| evaluate(exp, *s)).collect()
}

/// Runs the schemes of a scenario file and writes the full artifact set.
pub fn cmd_run(config: &Path, args: &RunArgs, out: &mut dyn Write) -> Result<Vec<ScenarioMetrics>> {
    let (cfg, dir) = load(config, args)?;
    let exp = cfg.build_experiment()?;
    let results = evaluate_all(&exp, &cfg.schemes()?)?;
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(&results))?;
    write_atomic(&dir.join("user_nmse.csv"), &user_nmse_csv(&results))?;
    write_atomic(&dir.join("error_history.csv"), &error_history_csv(&results))?;
    for m in &results {
        write_atomic(&dir.join(format!("psd_{}.csv", m.scheme.label())), &m.psd.to_csv())?;
    }
    write_atomic(&dir.join("scenario.toml"), &cfg.to_toml_string()?)?;
    let summary = summary_table(&results);
    write_atomic(&dir.join("summary.txt"), &summary)?;
    out.write_all(summary.as_bytes())?;
    Ok(results)
}

/// Expands a sweep specification into scheme tuples, in the order given.
/// `no_dpd` contributes one tuple regardless of the orders, and `kind:K`
/// contributes exactly that tuple.
pub fn sweep_tuples(schemes: &[String], orders: &[usize]) -> Result<Vec<Scheme>> {
    let names: Vec<&str> = schemes.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Config("sweep needs at least one scheme".into()));
    }
    let mut tuples = Vec::new();
    for name in names {
        if name == "no_dpd" {
            tuples.push(Scheme::NoDpd);
            continue;
        }
        if let Some((kind, k)) = name.split_once(':') {
            let k = k
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad order in {name:?}: {e}")))?;
            tuples.push(Scheme::parse(kind.trim(), Some(k))?);
            continue;
        }
        if orders.is_empty() {
            return Err(Error::Config(format!("scheme {name} needs --orders")));
        }
        for &k in orders {
            tuples.push(Scheme::parse(name, Some(k))?);
        }
    }
    Ok(tuples)
}

/// Evaluates each tuple and writes `comparison.csv` plus one PSD per tuple.
pub fn cmd_sweep(
    config: &Path,
    tuples: &[Scheme],
    args: &RunArgs,
    out: &mut dyn Write,
) -> Result<Vec<ScenarioMetrics>> {
    if tuples.is_empty() {
        return Err(Error::Config("sweep needs at least one scheme".into()));
    }
    let (cfg, dir) = load(config, args)?;
    let exp = cfg.build_experiment()?;
    let results = evaluate_all(&exp, tuples)?;
    std::fs::create_dir_all(&dir)?;
    for m in &results {
        write_atomic(&dir.join(format!("psd_{}.csv", m.scheme.label())), &m.psd.to_csv())?;
    }
    let csv = comparison_csv(&results);
    write_atomic(&dir.join("comparison.csv"), &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(results)
}

/// `K,flops,savings_vs_max_K` rows for each order.
pub fn cmd_flops(orders: &[usize], memory_depth: usize, num_antennas: usize) -> Result<String> {
    if orders.is_empty() {
        return Err(Error::Config("--orders must list at least one order".into()));
    }
    if memory_depth == 0 || num_antennas == 0 {
        return Err(Error::Config("--memory and --antennas must be positive".into()));
    }
    let k_max = *orders.iter().max().expect("nonempty");
    let mut s = String::from("K,flops,savings_vs_max_K\n");
    for &k in orders {
        let report = flops(k, memory_depth, num_antennas).map_err(as_config)?;
        let saved = flop_savings(k_max, k, memory_depth, num_antennas).map_err(as_config)?;
        s.push_str(&format!("{k},{},{saved}\n", report.flops));
    }
    Ok(s)
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Argument(m) => Error::Config(m),
        other => other,
    }
}

fn order_of(s: Scheme) -> usize {
    s.order().unwrap_or(0)
}

pub const METRICS_HEADER: &str = "scheme,K,Q,oob_ratio_db,nmse_db,mean_antenna_nmse_db,flops,iterations,converged,zf_residual,precoder_change,oob_antenna";

pub fn metrics_csv(results: &[ScenarioMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in results {
        let converged = m.converged.map(|c| c.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.scheme.name(),
            order_of(m.scheme),
            m.memory_depth,
            fmt_db(m.oob_ratio_db),
            fmt_db(m.nmse_db()),
            fmt_db(m.mean_antenna_nmse_db()),
            m.flop_count(),
            m.iterations,
            converged,
            fmt_exp(m.zf_residual, 6),
            fmt_exp(m.precoder_change, 6),
            m.oob_antenna,
        ));
    }
    s
}

pub fn user_nmse_csv(results: &[ScenarioMetrics]) -> String {
    let mut s = String::from("scheme,K,user,nmse_db\n");
    for m in results {
        for (u, v) in m.user_nmse_db.iter().enumerate() {
            s.push_str(&format!("{},{},{u},{}\n", m.scheme.name(), order_of(m.scheme), fmt_db(*v)));
        }
    }
    s
}

pub fn error_history_csv(results: &[ScenarioMetrics]) -> String {
    let mut s = String::from("scheme,K,iteration,error_db\n");
    for m in results {
        for (i, v) in m.error_history.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", m.scheme.name(), order_of(m.scheme), i + 1, fmt_db(*v)));
        }
    }
    s
}

pub const COMPARISON_HEADER: &str = "scheme,K,Q,oob_ratio_db,nmse_db,flops";

pub fn comparison_csv(results: &[ScenarioMetrics]) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for m in results {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.scheme.name(),
            order_of(m.scheme),
            m.memory_depth,
            fmt_db(m.oob_ratio_db),
            fmt_db(m.nmse_db()),
            m.flop_count()
        ));
    }
    s
}

/// One row of `comparison.csv` (also the leading columns of `metrics.csv`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub memory_depth: usize,
    pub oob_ratio_db: f64,
    pub nmse_db: f64,
    pub flops: u64,
}

/// Reads `comparison.csv` or `metrics.csv` back into rows.
pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim();
    let metrics = match header {
        COMPARISON_HEADER => false,
        METRICS_HEADER => true,
        other => return Err(Error::Parse(format!("unknown CSV header {other:?}"))),
    };
    let want = if metrics { 12 } else { 6 };
    let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Parse(format!("bad integer {s:?}: {e}")));
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != want {
                return Err(Error::Parse(format!("row {}: expected {want} fields, got {}", i + 1, f.len())));
            }
            let k = int(f[1])? as usize;
            let flops_col = if metrics { 6 } else { 5 };
            Ok(ComparisonRow {
                scheme: Scheme::parse(f[0], (k > 0).then_some(k))?,
                memory_depth: int(f[2])? as usize,
                oob_ratio_db: parse_f64(f[3])?,
                nmse_db: parse_f64(f[4])?,
                flops: int(f[flops_col])?,
            })
        })
        .collect()
}

/// Plain-text summary: scheme, worst-user NMSE and complexity.
pub fn summary_table(results: &[ScenarioMetrics]) -> String {
    let mut s = format!("{:<18} {:>10} {:>10} {:>12}\n", "Scheme", "NMSE (dB)", "OOB (dB)", "Complexity");
    for m in results {
        let cx = match m.flops {
            Some(f) => format!("{} FLOPS", f.flops),
            None => "-".into(),
        };
        s.push_str(&format!(
            "{:<18} {:>10} {:>10} {:>12}\n",
            m.scheme.label(),
            fmt_db(m.nmse_db()),
            fmt_db(m.oob_ratio_db),
            cx
        ));
    }
    s
}

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flops_table_matches_reference_rows() {
        let t = cmd_flops(&[3, 9, 11], 5, 100).unwrap();
        assert_eq!(t, "K,flops,savings_vs_max_K\n3,7000,16000\n9,19000,4000\n11,23000,0\n");
        assert_eq!(cmd_flops(&[7], 5, 100).unwrap().lines().nth(1), Some("7,15000,0"));
        let one = cmd_flops(&[3], 5, 1).unwrap();
        assert_eq!(one.lines().nth(1), Some("3,70,0"));
    }

    #[test]
    fn flops_rejects_bad_arguments() {
        assert!(matches!(cmd_flops(&[], 5, 100), Err(Error::Config(_))));
        assert!(matches!(cmd_flops(&[3], 0, 100), Err(Error::Config(_))));
        assert!(matches!(cmd_flops(&[0], 5, 100), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_tuples_expand_in_order() {
        let names = ["no_dpd", "conventional", "proposed"].map(String::from);
        let t = sweep_tuples(&names, &[3, 9]).unwrap();
        assert_eq!(
            t,
            vec![
                Scheme::NoDpd,
                Scheme::Conventional { order: 3 },
                Scheme::Conventional { order: 9 },
                Scheme::Proposed { order: 3 },
                Scheme::Proposed { order: 9 },
            ]
        );
        assert!(sweep_tuples(&[], &[3]).is_err());
        assert!(sweep_tuples(&["".into()], &[3]).is_err());
        assert!(sweep_tuples(&["proposed".into()], &[]).is_err());
        assert!(sweep_tuples(&["bogus".into()], &[3]).is_err());
        let pinned = ["no_dpd", "conventional:3", "conventional:9", "proposed:3"].map(String::from);
        assert_eq!(
            sweep_tuples(&pinned, &[]).unwrap(),
            vec![
                Scheme::NoDpd,
                Scheme::Conventional { order: 3 },
                Scheme::Conventional { order: 9 },
                Scheme::Proposed { order: 3 },
            ]
        );
        assert!(sweep_tuples(&["proposed:x".into()], &[]).is_err());
    }

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
        let div = Error::Training { antenna: 3, source: Box::new(Error::Divergence { iteration: 9 }) };
        assert_eq!(exit_code(&div), EXIT_DIVERGENCE);
        assert_eq!(exit_code(&Error::Domain("x".into())), EXIT_FAILURE);
    }

    #[test]
    fn clap_usage_errors_exit_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["mimo-dpd", "frobnicate"], &mut o, &mut e), EXIT_CONFIG);
        assert_eq!(run_cli(["mimo-dpd", "flops"], &mut o, &mut e), EXIT_CONFIG);
        assert_eq!(run_cli(["mimo-dpd", "--help"], &mut o, &mut e), EXIT_OK);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, "one\n").unwrap();
        write_atomic(&p, "two\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two\n");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn comparison_rows_parse_back() {
        let text = format!("{COMPARISON_HEADER}\nno_dpd,0,5,-47.41,-17.04,0\nproposed,3,5,-59.84,-60.55,7000\n");
        let rows = parse_comparison_csv(&text).unwrap();
        assert_eq!(rows[0].scheme, Scheme::NoDpd);
        assert_eq!(rows[1].scheme, Scheme::Proposed { order: 3 });
        assert_eq!(rows[1].flops, 7000);
        assert_eq!(rows[1].nmse_db, -60.55);
        assert!(parse_comparison_csv("a,b\n").is_err());
        assert!(parse_comparison_csv(&format!("{COMPARISON_HEADER}\nno_dpd,0\n")).is_err());
    }
}

//! The `romkit` command-line driver.
//!
//! ```text
//! romkit offline --config heat.json --out ops/heat
//! romkit online  --op ops/heat --nparams 10 --sampling uniform --seed 7 --out runs/heat
//! romkit eval    --op ops/heat --online runs/heat
//! romkit bench   --sizes 8,16,32 --params 1,2,4,8
//! ```
//!
//! Exit codes: 0 on success, 2 for configuration, argument and file errors,
//! 3 for failures during computation. Errors go to stderr as one JSON line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alloc::RunStats;
use crate::assembly::{bench_assembly, bench_csv};
use crate::error::{Error, Result};
use crate::eval::eval_performance;
use crate::fe::problem::ProblemDef;
use crate::param_space::{sample_realization, Realization, Sampling};
use crate::problems::RunConfig;
use crate::rom::{build_reduced_operator, inner_product_matrix, online_solve, reconstruct, ReducedOperator};
use crate::snapshots::{collect_snapshots, RealizationEcho, SnapshotTensor};

pub const OPERATOR_FILE: &str = "operator.rbop";
pub const SNAPSHOT_FILE: &str = "snapshots.rbsn";
pub const CONFIG_FILE: &str = "config.json";
pub const OFFLINE_STATS_FILE: &str = "offline.json";
pub const COORDS_FILE: &str = "coords.rbsn";
pub const FREE_FILE: &str = "free.rbsn";
pub const DIRICHLET_FILE: &str = "dirichlet.rbsn";
pub const ONLINE_FILE: &str = "online.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Parser, Debug)]
#[command(name = "romkit", version, about = "Reduced-order models of parameterized PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect snapshots, build the reduced operator and save it (or load an existing one).
    Offline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `out` field.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rebuild even if an operator is already saved.
        #[arg(long)]
        force: bool,
    },
    /// Solve the reduced problem at fresh parameters and write coordinates and fields.
    Online {
        #[arg(long)]
        op: PathBuf,
        #[arg(long, default_value_t = 10)]
        nparams: usize,
        #[arg(long, default_value = "uniform")]
        sampling: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full-order model on the online parameters and report error and speedups.
    Eval {
        #[arg(long)]
        op: PathBuf,
        #[arg(long)]
        online: PathBuf,
        /// Report directory; defaults to the online directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time batched against naive assembly.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        params: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// CSV file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Metadata of an online run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnlineRecord {
    pub realization: Realization,
    pub stats: RunStats,
}

/// Exit code for an error: 2 for bad input, 3 for failed computation.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        "argument" | "config" | "not_found" | "incompatible" | "json" | "format" | "corrupt" => 2,
        _ => 3,
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Runs the driver on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            let msg = e.kind().to_string();
            eprintln!("{}", error_line("usage", &msg));
            return 2;
        }
    };
    let res = match cli.command {
        Command::Offline { config, out, force } => run_offline(&config, out.as_deref(), force),
        Command::Online {
            op,
            nparams,
            sampling,
            seed,
            out,
        } => parse_sampling(&sampling).and_then(|s| run_online(&op, nparams, s, seed, &out)),
        Command::Eval { op, online, out } => run_eval(&op, &online, out.as_deref()),
        Command::Bench {
            sizes,
            params,
            reps,
            out,
        } => run_bench(&sizes, &params, reps, out.as_deref()),
    };
    match res {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

fn parse_sampling(s: &str) -> Result<Sampling> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Argument(format!("unknown sampling strategy '{s}'")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}

/// The run configuration, problem and operator stored in an offline directory.
pub fn load_offline(dir: &Path) -> Result<(RunConfig, ProblemDef, ReducedOperator)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let pb = cfg.build_problem()?;
    let op = ReducedOperator::load(&dir.join(OPERATOR_FILE), &pb, Some(&cfg.reduction_config()))?;
    Ok((cfg, pb, op))
}

fn run_offline(config: &Path, out: Option<&Path>, force: bool) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Argument("no output directory: pass --out or set `out` in the config".into()))?;
    let pb = cfg.build_problem()?;
    let op_path = dir.join(OPERATOR_FILE);
    if !force {
        match ReducedOperator::load(&op_path, &pb, Some(&cfg.reduction_config())) {
            Ok(op) => {
                return Ok(serde_json::json!({
                    "status": "loaded",
                    "operator": op_path,
                    "rank": op.rank(),
                })
                .to_string())
            }
            Err(Error::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let (op, report) = build_reduced_operator(&cfg.reduction_config(), &pb, &cfg.solver_options())?;
    fs::create_dir_all(&dir)?;
    op.save(&op_path)?;
    report.snapshots.save(&dir.join(SNAPSHOT_FILE))?;
    write_file(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    let (j, r) = op.hyper_reductions();
    let summary = serde_json::json!({
        "status": "built",
        "operator": op_path,
        "rank": op.rank(),
        "jacobian_terms": j.nterms(),
        "residual_terms": r.nterms(),
        "offline_wall_ns": report.wall_ns,
        "fom_stats": report.fom_stats,
    });
    write_file(&dir.join(OFFLINE_STATS_FILE), summary.to_string().as_bytes())?;
    Ok(summary.to_string())
}

fn run_online(op_dir: &Path, nparams: usize, sampling: Sampling, seed: u64, out: &Path) -> Result<String> {
    if nparams == 0 {
        return Err(Error::Argument("--nparams must be at least 1".into()));
    }
    let (cfg, pb, op) = load_offline(op_dir)?;
    let r = sample_realization(&pb, nparams, sampling, seed)?;
    let sol = online_solve(&op, &r, &cfg.solver_options())?;
    let rec = reconstruct(&op, &sol.coords, &r)?;
    fs::create_dir_all(out)?;
    let coords = SnapshotTensor::steady(sol.coords.nrows(), nparams, sol.coords.as_slice().to_vec(), RealizationEcho::from(&r))?;
    coords.save(&out.join(COORDS_FILE))?;
    rec.free.save(&out.join(FREE_FILE))?;
    rec.dirichlet.save(&out.join(DIRICHLET_FILE))?;
    let record = OnlineRecord {
        realization: r,
        stats: sol.stats,
    };
    write_file(&out.join(ONLINE_FILE), serde_json::to_string(&record)?.as_bytes())?;
    Ok(serde_json::json!({
        "status": "solved",
        "nparams": nparams,
        "wall_ns": record.stats.wall_ns,
        "iterations": record.stats.iterations,
    })
    .to_string())
}

fn run_eval(op_dir: &Path, online: &Path, out: Option<&Path>) -> Result<String> {
    let (cfg, pb, op) = load_offline(op_dir)?;
    let record: OnlineRecord = read_json(&online.join(ONLINE_FILE))?;
    let coords = SnapshotTensor::load(&online.join(COORDS_FILE))?;
    let r = &record.realization;
    if coords.dims() != [op.rank(), r.nparams()] {
        return Err(Error::Incompatible(format!(
            "coordinates of shape {:?} for an operator of rank {} and {} parameters",
            coords.dims(),
            op.rank(),
            r.nparams()
        )));
    }
    let coords = DMatrix::from_column_slice(op.rank(), r.nparams(), coords.data());
    let rec = reconstruct(&op, &coords, r)?;
    let (fom, fom_stats) = collect_snapshots(&pb, r, &cfg.solver_options())?;
    let x = inner_product_matrix(&pb.space, cfg.inner_product)?;
    let offline: Option<serde_json::Value> = read_json(&op_dir.join(OFFLINE_STATS_FILE)).ok();
    let mut report = eval_performance(&fom_stats, &fom, &record.stats, &rec.free, x.as_ref(), serde_json::to_value(&cfg)?)?;
    report.offline_wall_ns = offline.and_then(|v| v.get("offline_wall_ns").and_then(|w| w.as_u64()));
    let dir = out.unwrap_or(online);
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_file(&dir.join(REPORT_JSON), json.as_bytes())?;
    write_file(&dir.join(REPORT_CSV), report.to_csv().as_bytes())?;
    Ok(serde_json::to_string(&report)?)
}

fn run_bench(sizes: &[usize], params: &[usize], reps: usize, out: Option<&Path>) -> Result<String> {
    if sizes.iter().chain(params).any(|&v| v == 0) {
        return Err(Error::Argument("sizes and parameter counts must be positive".into()));
    }
    let csv = bench_csv(&bench_assembly(sizes, params, reps)?);
    match out {
        Some(p) => {
            write_file(p, csv.as_bytes())?;
            Ok(serde_json::json!({ "status": "written", "csv": p }).to_string())
        }
        None => Ok(csv.trim_end().to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NotFound("a".into())), 2);
        assert_eq!(exit_code(&Error::LinearSolve("x".into())), 3);
        assert_eq!(exit_code(&Error::Argument("x".into()).at_param(3)), 2);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(cli_main(["romkit", "frobnicate"]), 2);
        assert_eq!(cli_main(["romkit"]), 2);
        assert_eq!(cli_main(["romkit", "--help"]), 0);
        assert_eq!(cli_main(["romkit", "bench", "--sizes", "0"]), 2);
    }

    #[test]
    fn sampling_names() {
        assert_eq!(parse_sampling("halton").unwrap(), Sampling::Halton);
        assert!(parse_sampling("sobol").is_err());
    }

    #[test]
    fn missing_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("none.json");
        assert_eq!(cli_main(["romkit".into(), "offline".into(), "--config".into(), cfg.into_os_string()]), 2);
    }
}

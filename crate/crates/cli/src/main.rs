//! `hfvc` command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible model, 3 numerical or
//! internal failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use hfvc::bench::{self, BenchConfig, Family};
use hfvc::linalg::RankTol;
use hfvc::model::{ModelError, Scene, SceneError};
use hfvc::ochs::{ochs_solve, SolveError, SolveOptions, VelocityDimMode};
use hfvc::selftest::run_selftest;
use hfvc::tilt::{run_tilt, tilt_csv, TiltError, TiltParams};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "hfvc", version, about = "Hybrid force-velocity control solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Minimal,
    Maximal,
}

impl From<ModeArg> for VelocityDimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Minimal => VelocityDimMode::Minimal,
            ModeArg::Maximal => VelocityDimMode::Maximal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Planar,
    Spatial,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scene file and print the solution as JSON.
    Solve {
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "minimal")]
        mode: ModeArg,
        #[arg(long, default_value_t = RankTol::DEFAULT)]
        rank_tol: f64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized benchmark.
    Bench {
        /// JSON benchmark config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        #[arg(long)]
        problems: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Comma-separated cell labels such as `f-1x1,ss-1x2`.
        #[arg(long, value_delimiter = ',')]
        cells: Option<Vec<String>>,
        #[arg(long)]
        oracle_samples: Option<usize>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for records.csv, summary.json and manifest.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the block-tilting scenario and emit one CSV row per step.
    Tilt {
        /// JSON scenario parameters; flags override its fields.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        mu_hand: Option<f64>,
        #[arg(long)]
        mu_table: Option<f64>,
        #[arg(long)]
        nmin: Option<f64>,
        /// Tilt axis as `x,y,z`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        axis: Option<Vec<f64>>,
        /// Directory for tilt.csv and manifest.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_path: Option<String>,
    seed: Option<u64>,
    tool_version: &'static str,
    config_sha256: String,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

impl RunManifest {
    fn new(command: &str, config_path: Option<&Path>, seed: Option<u64>, config: &Value, started: u128) -> Self {
        let digest = Sha256::digest(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Failure that maps to a process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable output")
}

fn solve_error_code(e: &SolveError) -> u8 {
    match e {
        SolveError::InvalidOptions(_) => EXIT_INPUT,
        e if e.is_infeasible() => EXIT_INFEASIBLE,
        _ => EXIT_INTERNAL,
    }
}

fn cmd_solve(scene_path: &Path, mode: ModeArg, rank_tol: f64, out: Option<&Path>) -> Result<u8, Failure> {
    let started = now_ms();
    let text = read(scene_path)?;
    let tol = RankTol::new(rank_tol).map_err(|e| Failure::input(e.to_string()))?;
    let scene = Scene::from_json(&text).map_err(|e| scene_failure(&e))?;
    let built = scene.build(tol).map_err(|e| scene_failure(&SceneError::Model(e)))?;
    let opts = SolveOptions {
        mode: mode.into(),
        rank_tol: tol,
        ..SolveOptions::default()
    };
    let config = json!({ "scene": serde_json::from_str::<Value>(&text).unwrap_or(Value::Null), "mode": VelocityDimMode::from(mode), "rank_tol": rank_tol });
    let (body, code) = match ochs_solve(&built.model, &opts) {
        Ok(sol) => (serde_json::to_value(sol.report()).expect("serializable report"), 0),
        Err(e) => {
            let status = if e.is_infeasible() { "infeasible" } else { "failed" };
            let body = json!({
                "status": status,
                "reason": e.label(),
                "stage": e.stage(),
                "detail": e.to_string(),
            });
            (body, solve_error_code(&e))
        }
    };
    let manifest = RunManifest::new("solve", Some(scene_path), None, &config, started);
    let mut doc = body;
    doc["manifest"] = serde_json::to_value(&manifest).expect("serializable manifest");
    let text = pretty(&doc);
    match out {
        Some(path) => write(path, &text)?,
        None => emit(&format!("{text}\n"))?,
    }
    Ok(code)
}

fn scene_failure(e: &SceneError) -> Failure {
    if let SceneError::Model(ModelError::Linalg(inner)) = e {
        return Failure::internal(format!("numerical failure while building the scene: {inner}"));
    }
    let pointer = e.pointer().map(|p| format!(" [{p}]")).unwrap_or_default();
    Failure::input(format!("invalid scene{pointer}: {e}"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    config_path: Option<&Path>,
    family: Option<FamilyArg>,
    problems: Option<usize>,
    seed: Option<u64>,
    mode: Option<ModeArg>,
    cells: Option<Vec<String>>,
    oracle_samples: Option<usize>,
    workers: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<u8, Failure> {
    let started = now_ms();
    let mut cfg: BenchConfig = match config_path {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => BenchConfig::default(),
    };
    if let Some(f) = family {
        cfg.family = match f {
            FamilyArg::Planar => Family::Planar,
            FamilyArg::Spatial => Family::Spatial,
        };
    }
    if let Some(n) = problems {
        cfg.problems = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    if let Some(c) = cells {
        cfg.cells = c;
    }
    if let Some(k) = oracle_samples {
        cfg.oracle_samples = k;
    }
    cfg.validate().map_err(Failure::input)?;
    if workers == Some(0) {
        return Err(Failure::input("--workers must be at least 1"));
    }

    let run = || bench::run_benchmark(&cfg);
    let records = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::internal(e.to_string()))?
            .install(run),
        None => run(),
    }
    .map_err(Failure::input)?;

    let summary = bench::summarize(&records, cfg.ill_conditioned_threshold);
    let config = serde_json::to_value(&cfg).expect("serializable config");
    let manifest = RunManifest::new("bench", config_path, Some(cfg.seed), &config, started);
    let doc = json!({ "manifest": manifest, "config": config, "summary": summary });
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
            write(&dir.join("records.csv"), &bench::records_csv(&records, true))?;
            write(&dir.join("summary.json"), &pretty(&doc))?;
            write(&dir.join("manifest.json"), &pretty(&manifest))?;
        }
        None => emit(&format!("{}\n", pretty(&doc)))?,
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_tilt(
    params_path: Option<&Path>,
    steps: Option<usize>,
    rate: Option<f64>,
    mu_hand: Option<f64>,
    mu_table: Option<f64>,
    nmin: Option<f64>,
    axis: Option<Vec<f64>>,
    out_dir: Option<&Path>,
) -> Result<u8, Failure> {
    let started = now_ms();
    let mut params: TiltParams = match params_path {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
        None => TiltParams::default(),
    };
    if let Some(v) = steps {
        params.steps = v;
    }
    if let Some(v) = rate {
        params.rate = v;
    }
    if let Some(v) = mu_hand {
        params.mu_hand = v;
    }
    if let Some(v) = mu_table {
        params.mu_table = v;
    }
    if let Some(v) = nmin {
        params.n_min = v;
    }
    if let Some(a) = axis {
        let [x, y, z] = a[..] else {
            return Err(Failure::input(format!("--axis needs 3 components, got {}", a.len())));
        };
        params.axis = [x, y, z];
    }
    params.validate().map_err(|e| Failure::input(format!("invalid tilt parameters: {e}")))?;

    let result = run_tilt(&params, &SolveOptions::default());
    let config = serde_json::to_value(&params).expect("serializable params");
    let manifest = RunManifest::new("tilt", params_path, None, &config, started);
    let steps = match result {
        Ok(s) => s,
        Err(TiltError::Step { step, source }) => {
            eprintln!("{}", pretty(&manifest));
            return Err(Failure {
                code: solve_error_code(&source),
                message: format!("step {step}: {source}"),
            });
        }
        Err(e @ TiltError::Invalid { .. }) => return Err(Failure::input(e.to_string())),
        Err(e) => return Err(Failure::internal(e.to_string())),
    };
    let csv = tilt_csv(&steps);
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
            write(&dir.join("tilt.csv"), &csv)?;
            write(&dir.join("manifest.json"), &pretty(&manifest))?;
        }
        None => {
            emit(&csv)?;
            eprintln!("{}", pretty(&manifest));
        }
    }
    Ok(0)
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::internal(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn cmd_selftest() -> u8 {
    let started = now_ms();
    let checks = run_selftest();
    for c in &checks {
        let _ = emit(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let manifest = RunManifest::new("selftest", None, None, &Value::Null, started);
    eprintln!("{}", pretty(&manifest));
    if checks.iter().all(|c| c.passed) {
        0
    } else {
        EXIT_INTERNAL
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve {
            scene,
            mode,
            rank_tol,
            out,
        } => cmd_solve(&scene, mode, rank_tol, out.as_deref()),
        Command::Bench {
            config,
            family,
            problems,
            seed,
            mode,
            cells,
            oracle_samples,
            workers,
            out_dir,
        } => cmd_bench(
            config.as_deref(),
            family,
            problems,
            seed,
            mode,
            cells,
            oracle_samples,
            workers,
            out_dir.as_deref(),
        ),
        Command::Tilt {
            params,
            steps,
            rate,
            mu_hand,
            mu_table,
            nmin,
            axis,
            out_dir,
        } => cmd_tilt(
            params.as_deref(),
            steps,
            rate,
            mu_hand,
            mu_table,
            nmin,
            axis,
            out_dir.as_deref(),
        ),
        Command::Selftest => Ok(cmd_selftest()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

mod compare;
mod error;
mod output;
mod scenario;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::compare::Metric;
use crate::error::CliError;
use crate::output::{write_atomic, RunDir};
use crate::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "hybrid-oc", version, about = "Hybrid optimal control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and write its tables.
    Run {
        scenario: PathBuf,
        /// Output directory (default: the scenario's `output`, else `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; `HYBRID_OC_THREADS` takes precedence.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Distance between the trajectories of two runs.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long, value_enum, default_value = "sup")]
        metric: Metric,
        /// Fail (exit 1) when the distance exceeds this value.
        #[arg(long)]
        threshold: Option<f64>,
        /// Report directory (default: the first run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("HYBRID_OC_THREADS") {
        Ok(v) if !v.is_empty() => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Validation(format!("HYBRID_OC_THREADS={v} is not a positive integer"))),
        _ => match flag {
            Some(0) => Err(CliError::Validation("--threads must be positive".into())),
            f => Ok(f),
        },
    }
}

fn output_dir(s: &Scenario, path: &Path, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| s.output.clone()).unwrap_or_else(|| {
        let stem = s.name.clone().unwrap_or_else(|| path.file_stem().map_or("run".into(), |f| f.to_string_lossy().into_owned()));
        PathBuf::from("runs").join(stem)
    })
}

fn run(path: &Path, out: Option<PathBuf>, threads: Option<usize>) -> Result<String, CliError> {
    if let Some(n) = thread_count(threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let s = Scenario::load(path)?;
    let dir = output_dir(&s, path, out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut rd = RunDir::new(dir.clone());
    let result = tasks::run(&s, &mut rd);
    let (status, meta) = match &result {
        Ok(m) => (m.status.to_string(), json!(m)),
        Err(e) => (
            match e {
                CliError::Solver { name, .. } => format!("failed: {name}"),
                _ => "failed".to_string(),
            },
            json!({ "name": s.name, "model": s.model.id(), "task": s.task.id(), "state_dim": s.model.dim(),
                    "trajectory": rd.files.iter().find(|f| f.as_str() == "trajectory.csv"), "summary": e.to_string() }),
        ),
    };
    let mut meta = meta;
    meta["status"] = json!(status);
    meta["files"] = json!(rd.files);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    write_atomic(&dir, "run.json", text.as_bytes())?;
    result.map(|m| format!("{} -> {}", m.summary, dir.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run { scenario, out, threads } => run(&scenario, out, threads).map(|line| (line, true)),
        Command::Compare { dir_a, dir_b, metric, threshold, out } => compare::compare(&dir_a, &dir_b, metric).and_then(|c| {
            let report = c.write(out.as_deref().unwrap_or(&dir_a), threshold)?;
            let verdict = match threshold {
                Some(th) if c.passes(threshold) => format!(", within {th:e}"),
                Some(th) => format!(", exceeds {th:e}"),
                None => String::new(),
            };
            Ok((
                format!("{:?} distance {:.6e} over [{}, {}]{verdict} ({report})", c.metric, c.distance, c.window.0, c.window.1),
                c.passes(threshold),
            ))
        }),
    };
    match r {
        Ok((line, true)) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Ok((line, false)) => {
            println!("{line}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::scenario::{self, Scenario, CATALOG};

#[derive(Debug, Parser)]
#[command(name = "cascade-qed", version, about = "Cascaded two-photon emission from a ladder emitter in two cavities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write its artifacts plus manifest.json.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides `output_dir` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweeps and maps.
        #[arg(long, env = "CASCADE_QED_THREADS")]
        threads: Option<usize>,
    },
    /// Print the shipped scenario catalog.
    List,
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

/// Exit status for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

fn output_dir(sc: &Scenario, file: &Path, out: Option<PathBuf>) -> PathBuf {
    let base = file.parent().unwrap_or(Path::new("."));
    match (out, &sc.output_dir) {
        (Some(o), _) => o,
        (None, Some(d)) if d.is_absolute() => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("out").join(&sc.name),
    }
}

/// Run one scenario file; returns the output directory.
pub fn run(file: &Path, out: Option<PathBuf>, threads: Option<usize>) -> Result<PathBuf> {
    let (sc, bytes) = scenario::load_scenario(file)?;
    if threads == Some(0) {
        return Err(Error::Config {
            pointer: "--threads".into(),
            message: "must be at least 1".into(),
        });
    }
    let dir = output_dir(&sc, file, out);
    let base = file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let start = Instant::now();
    let report = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config {
                    pointer: "--threads".into(),
                    message: e.to_string(),
                })?;
            pool.install(|| scenario::run_scenario(&sc, &dir, &base))?
        }
        None => scenario::run_scenario(&sc, &dir, &base)?,
    };
    let wall = start.elapsed().as_secs_f64();
    let manifest = scenario::manifest(&sc, &bytes, &report, wall, threads)?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

/// One line per shipped scenario: name, task kind, budget and description.
pub fn catalog_listing() -> String {
    let mut out = String::new();
    for (name, text) in CATALOG {
        let line = match scenario::parse_scenario(text.as_bytes()) {
            Ok(sc) => format!(
                "{name:<28} {:<24} {:>6}  {}\n",
                sc.task.kind(),
                sc.budget_s.map_or("-".to_string(), |b| format!("{b}s")),
                sc.description
            ),
            Err(e) => format!("{name:<28} INVALID: {e}\n"),
        };
        out.push_str(&line);
    }
    out
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run { scenario, out, threads } => run(&scenario, out, threads).map(|dir| {
            println!("wrote {}", dir.display());
        }),
        Command::List => {
            print!("{}", catalog_listing());
            Ok(())
        }
        Command::Validate { scenario } => scenario::load_scenario(&scenario).map(|(sc, _)| {
            println!("ok: {} ({})", sc.name, sc.task.kind());
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

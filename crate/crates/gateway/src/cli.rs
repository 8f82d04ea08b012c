use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sitescout_core::geom::Point2;
use sitescout_core::mission::{Mission, MissionResult, Outcome};
use sitescout_core::scenario::{Scenario, ScenarioError};

use crate::artifacts::{write_run_dir, MapDocument, COVERAGE_FILE, GROUNDTRUTH_FILE, MAP_FILE};
use crate::server::{serve, spawn_mission, ServeOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "sitescout", version, about = "Multi-robot exploration simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and list every problem found.
    Validate { file: PathBuf },
    /// Run a scenario to completion and write the run directory.
    Run {
        file: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<name>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-tick progress output.
        #[arg(long)]
        headless: bool,
    },
    /// Run a scenario behind the control-monitor HTTP service.
    Serve {
        file: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run directory here when the mission ends.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Milliseconds between ticks.
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        /// Start without waiting for an operator Start command.
        #[arg(long)]
        autostart: bool,
    },
    /// Print a map from a run directory.
    Export {
        run_dir: PathBuf,
        #[arg(long, conflicts_with_all = ["coverage", "groundtruth"])]
        map: bool,
        #[arg(long, conflicts_with = "groundtruth")]
        coverage: bool,
        #[arg(long)]
        groundtruth: bool,
        #[arg(long, value_enum, default_value_t = ExportFormat::Json)]
        format: ExportFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Ascii,
}

/// Grid geometry of a run, kept next to the graymaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Point2,
}

fn load(file: &Path, err: &mut dyn Write) -> Result<Option<Scenario>> {
    match Scenario::load(file) {
        Ok(s) => Ok(Some(s)),
        Err(ScenarioError::Invalid(diags)) => {
            for d in diags {
                writeln!(err, "{d}")?;
            }
            Ok(None)
        }
        Err(e) => {
            writeln!(err, "{}: {e}", file.display())?;
            Ok(None)
        }
    }
}

fn check(file: &Path, err: &mut dyn Write) -> Result<Option<Scenario>> {
    let Some(sc) = load(file, err)? else { return Ok(None) };
    let diags = sc.validate();
    if diags.is_empty() {
        Ok(Some(sc))
    } else {
        for d in diags {
            writeln!(err, "{d}")?;
        }
        Ok(None)
    }
}

fn write_manifest(mission: &Mission, dir: &Path) -> Result<()> {
    let spec = *mission.world().spec();
    let r = mission.result();
    let m = RunManifest {
        schema_version: 1,
        scenario: r.scenario,
        seed: r.seed,
        width: spec.width,
        height: spec.height,
        resolution: spec.resolution,
        origin: spec.origin,
    };
    std::fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

fn summary(r: &MissionResult, out: &mut dyn Write) -> Result<i32> {
    let requests = r.help_requests.len();
    match &r.outcome {
        Outcome::Done => {
            writeln!(
                out,
                "Done after {} ticks, phi {:.2}%, {requests} help request(s)",
                r.ticks, r.final_phi
            )?;
            Ok(EXIT_OK)
        }
        Outcome::Aborted { reason, detail } => {
            writeln!(
                out,
                "Aborted({reason:?}) at tick {}, phi {:.2}%: {detail}",
                r.ticks, r.final_phi
            )?;
            Ok(EXIT_ABORTED)
        }
        Outcome::Running => bail!("mission stopped while still running"),
    }
}

fn run(
    file: &Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    headless: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let Some(sc) = check(file, err)? else {
        return Ok(EXIT_INVALID);
    };
    let mut mission = Mission::new(&sc, seed)?;
    let dir = out_dir.unwrap_or_else(|| {
        let seed = seed.unwrap_or(sc.file.seed);
        PathBuf::from("runs").join(format!("{}-seed{seed}", sc.file.name))
    });
    while !mission.is_terminal() {
        mission.step();
        if !headless && mission.tick() % 50 == 0 {
            let s = mission.snapshot();
            writeln!(err, "tick {:>5}  phi {:6.2}%  {}", s.tick, s.phi, s.verdict)?;
        }
    }
    let result = write_run_dir(&mission, &dir)?;
    write_manifest(&mission, &dir)?;
    writeln!(out, "{}", dir.display())?;
    summary(&result, out)
}

fn export(run_dir: &Path, which: &str, format: ExportFormat, out: &mut dyn Write) -> Result<i32> {
    let path = run_dir.join(which);
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Option<RunManifest> = std::fs::read_to_string(run_dir.join(RUN_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let coverage = which == COVERAGE_FILE;
    let doc = MapDocument::from_pgm(
        &bytes,
        manifest.as_ref().map(|m| m.resolution),
        manifest.as_ref().map(|m| m.origin),
    )?;
    match format {
        ExportFormat::Json => writeln!(out, "{}", serde_json::to_string(&doc)?)?,
        ExportFormat::Ascii => {
            for row in &doc.rows {
                let line: String = row
                    .iter()
                    .map(|&v| match v {
                        v if coverage => {
                            if v == doc.palette.free {
                                '+'
                            } else {
                                ' '
                            }
                        }
                        v if v == doc.palette.free => '.',
                        v if v == doc.palette.occupied => '#',
                        _ => '?',
                    })
                    .collect();
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Execute a parsed command line; returns the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Validate { file } => Ok(if check(&file, err)?.is_some() {
            EXIT_OK
        } else {
            EXIT_INVALID
        }),
        Command::Run {
            file,
            seed,
            out: dir,
            headless,
        } => run(&file, seed, dir, headless, out, err),
        Command::Serve {
            file,
            port,
            host,
            seed,
            out: dir,
            tick_ms,
            autostart,
        } => {
            let Some(sc) = check(&file, err)? else {
                return Ok(EXIT_INVALID);
            };
            let mission = Mission::new(&sc, seed)?;
            let opts = ServeOptions {
                tick_interval: Duration::from_millis(tick_ms),
                autostart,
                out_dir: dir,
            };
            let (state, _loop) = spawn_mission(mission, opts)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, SocketAddr::new(host, port)))?;
            Ok(EXIT_OK)
        }
        Command::Export {
            run_dir,
            map: _,
            coverage,
            groundtruth,
            format,
        } => {
            let which = if coverage {
                COVERAGE_FILE
            } else if groundtruth {
                GROUNDTRUTH_FILE
            } else {
                MAP_FILE
            };
            export(&run_dir, which, format, out)
        }
    }
}

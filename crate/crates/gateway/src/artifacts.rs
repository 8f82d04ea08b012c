//! Run-directory layout and the JSON map document served by the gateway.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sitescout_core::geom::Point2;
use sitescout_core::gridmap::{decode_pgm, PGM_FREE, PGM_OCCUPIED, PGM_UNKNOWN};
use sitescout_core::mission::{Mission, MissionResult};

pub const MAP_SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const COMMANDS_FILE: &str = "commands.jsonl";
pub const MAP_FILE: &str = "map.pgm";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.pgm";
pub const COVERAGE_FILE: &str = "coverage.pgm";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub free: u8,
    pub unknown: u8,
    pub occupied: u8,
}

pub const PALETTE: Palette = Palette {
    free: PGM_FREE,
    unknown: PGM_UNKNOWN,
    occupied: PGM_OCCUPIED,
};

/// A raster as rows of graymap values, top row (highest y) first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    /// Meters per cell; absent for documents rebuilt from a bare graymap.
    pub resolution: Option<f64>,
    /// World coordinates of the lower-left corner of the bottom-left cell.
    pub origin: Option<Point2>,
    pub palette: Palette,
    pub rows: Vec<Vec<u8>>,
}

impl MapDocument {
    /// Build from P5 bytes.
    pub fn from_pgm(bytes: &[u8], resolution: Option<f64>, origin: Option<Point2>) -> Result<Self> {
        let g = decode_pgm(bytes).context("decoding graymap")?;
        let rows = g.pixels.chunks(g.width.max(1)).map(<[u8]>::to_vec).collect();
        Ok(Self {
            schema_version: MAP_SCHEMA_VERSION,
            width: g.width,
            height: g.height,
            resolution,
            origin,
            palette: PALETTE,
            rows,
        })
    }
}

/// Write every artifact of a finished (or stopped) mission into `dir`.
pub fn write_run_dir(mission: &Mission, dir: &Path) -> Result<MissionResult> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    };

    let mut metrics = mission.metrics().join("\n");
    metrics.push('\n');
    let mut commands = String::new();
    for (tick, cmd) in mission.command_log() {
        let line = serde_json::json!({ "tick": tick, "command": cmd });
        commands.push_str(&line.to_string());
        commands.push('\n');
    }

    let spec = *mission.world().spec();
    let mut result = mission.result();
    result.artifacts = vec![
        write(METRICS_FILE, metrics.as_bytes())?,
        write(COMMANDS_FILE, commands.as_bytes())?,
        write(MAP_FILE, &mission.merged().export_map())?,
        write(GROUNDTRUTH_FILE, &mission.gt().export_map())?,
        write(COVERAGE_FILE, &mission.coverage().export_mask(&spec))?,
    ]
    .into_iter()
    .map(|p| p.display().to_string())
    .collect();
    let result_path = dir.join(RESULT_FILE);
    result.artifacts.push(result_path.display().to_string());
    let text = serde_json::to_string_pretty(&result)?;
    fs::write(&result_path, text + "\n").with_context(|| format!("writing {}", result_path.display()))?;
    Ok(result)
}

/// Load the run's command log, as written by [`write_run_dir`].
pub fn read_commands(dir: &Path) -> Result<Vec<(u64, sitescout_core::mission::OperatorCommand)>> {
    #[derive(Deserialize)]
    struct Line {
        tick: u64,
        command: sitescout_core::mission::OperatorCommand,
    }
    let p = dir.join(COMMANDS_FILE);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let line: Line = serde_json::from_str(l).with_context(|| format!("bad line in {}", p.display()))?;
            Ok((line.tick, line.command))
        })
        .collect()
}

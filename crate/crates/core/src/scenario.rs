//! Scenario documents (TOML, `format = 1`) and their validation.
//!
//! A scenario names the building (a triangle mesh sliced at a height, or an
//! inline raster), the openings, the obstacles, the agent roster, the
//! stopping threshold and the human mode. Relative mesh paths resolve
//! against the scenario file's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentProfile, AgentRole, Capability, HumanMode};
use crate::explore::{DEFAULT_MIN_FRONTIER_SIZE, DEFAULT_MIN_REGION_SIZE};
use crate::floorplan::{
    attach_openings, flood_free, load_mesh, rasterize, slice_mesh, Actuation, GroundTruthMap, HingeSide, OccupiedMask,
    Opening, OpeningKind, WorldRect,
};
use crate::geom::{GridSpec, Point2};
use crate::simworld::{footprint_cells, AgentSpawn, Obstacle, SensorConfig, WorldSetup};

pub const SCENARIO_FORMAT: u32 = 1;
pub const DEFAULT_TICK_BUDGET: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

/// One validation finding, keyed by the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

fn diag(field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl RectSpec {
    pub fn rect(&self) -> WorldRect {
        WorldRect::new(self.min.into(), self.max.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    pub resolution: f64,
    pub flood_seed: [f64; 2],
    pub mesh: Option<String>,
    pub slice_height: Option<f64>,
    /// Defaults to the mesh footprint padded by two cells.
    pub bounds: Option<RectSpec>,
    /// Inline raster, top row first; `#` is wall, anything else is floor.
    pub raster: Option<Vec<String>>,
    pub origin: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeningSpec {
    pub id: String,
    pub center: [f64; 2],
    pub kind: OpeningKind,
    pub hinge_side: Option<HingeSide>,
    pub actuation: Option<Actuation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: String,
    pub footprint: RectSpec,
    #[serde(default)]
    pub removable: bool,
    pub handle: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub role: AgentRole,
    pub capabilities: Vec<Capability>,
    pub start: [f64; 2],
    #[serde(default = "one")]
    pub speed: usize,
    pub nav_sensor: SensorConfig,
    pub payload_sensor: Option<SensorConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationParams {
    pub min_frontier_size: usize,
    pub min_region_size: usize,
    /// Meters.
    pub inflation_radius: f64,
    /// Max distance (meters) between a grasp point and an obstacle handle.
    pub grasp_tolerance: f64,
    /// Max distance (meters) from the assistant to the grasp point.
    pub reach: f64,
    pub clearing_patience: u64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        Self {
            min_frontier_size: DEFAULT_MIN_FRONTIER_SIZE,
            min_region_size: DEFAULT_MIN_REGION_SIZE,
            inflation_radius: 0.0,
            grasp_tolerance: 0.5,
            reach: 1.5,
            clearing_patience: crate::agents::DEFAULT_CLEARING_PATIENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedEvent {
    KillMaster { tick: u64 },
    HighResScan { tick: u64, point: [f64; 2] },
}

fn default_human() -> HumanMode {
    HumanMode::Scripted { delay: 5 }
}

fn default_budget() -> u64 {
    DEFAULT_TICK_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub threshold: f64,
    #[serde(default = "default_budget")]
    pub tick_budget: u64,
    /// Standard deviation (meters) of range noise on hits; 0 disables it.
    #[serde(default)]
    pub range_noise: f64,
    pub map: MapSection,
    #[serde(default)]
    pub openings: Vec<OpeningSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_human")]
    pub human: HumanMode,
    #[serde(default)]
    pub exploration: ExplorationParams,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
    /// Carried through untouched (e.g. radio parameters).
    #[serde(default)]
    pub metadata: toml::Table,
}

/// A parsed scenario plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub base_dir: PathBuf,
}

/// Everything the mission needs, derived from a valid scenario.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub gt: GroundTruthMap,
    pub setup: WorldSetup,
    pub profiles: Vec<AgentProfile>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(Scenario {
            file,
            base_dir: base_dir.into(),
        })
    }

    /// Empty when the scenario is runnable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        match self.build() {
            Ok(_) => Vec::new(),
            Err(d) => d,
        }
    }

    pub fn build(&self) -> Result<BuiltScenario, Vec<Diagnostic>> {
        let f = &self.file;
        let mut d = Vec::new();
        if f.format != SCENARIO_FORMAT {
            d.push(diag(
                "format",
                format!("unsupported format {}, expected {SCENARIO_FORMAT}", f.format),
            ));
        }
        if !(f.threshold.is_finite() && f.threshold > 0.0 && f.threshold <= 200.0) {
            d.push(diag(
                "threshold",
                format!("threshold out of range (0, 200]: {}", f.threshold),
            ));
        }
        if f.tick_budget == 0 {
            d.push(diag("tick_budget", "tick budget must be positive"));
        }
        if !(f.range_noise.is_finite() && f.range_noise >= 0.0) {
            d.push(diag("range_noise", "range noise must be a finite non-negative number"));
        }
        let e = &f.exploration;
        if e.min_frontier_size == 0 || e.min_region_size == 0 {
            d.push(diag(
                "exploration",
                "minimum frontier and region sizes must be at least 1",
            ));
        }
        if !(e.inflation_radius.is_finite() && e.inflation_radius >= 0.0)
            || !(e.grasp_tolerance.is_finite() && e.grasp_tolerance > 0.0)
            || !(e.reach.is_finite() && e.reach > 0.0)
        {
            d.push(diag(
                "exploration",
                "inflation radius, grasp tolerance and reach must be finite and non-negative",
            ));
        }
        for (i, ev) in f.events.iter().enumerate() {
            if let ScriptedEvent::HighResScan { point, .. } = ev {
                if !Point2::from(*point).is_finite() {
                    d.push(diag(format!("events[{i}].point"), "non-finite coordinates"));
                }
            }
        }

        let gt = match self.ground_truth() {
            Ok(gt) => Some(gt),
            Err(mut e) => {
                d.append(&mut e);
                None
            }
        };
        let profiles = self.profiles(&mut d);
        let Some(gt) = gt else { return Err(d) };
        let spec = *gt.spec();

        let mut obstacles = Vec::new();
        for (i, o) in f.obstacles.iter().enumerate() {
            let field = format!("obstacles[{i}]");
            let rect = o.footprint.rect();
            if !rect.is_valid() {
                d.push(diag(format!("{field}.footprint"), "footprint must have min < max"));
                continue;
            }
            let footprint = footprint_cells(&spec, &rect);
            if footprint.is_empty() {
                d.push(diag(
                    format!("{field}.footprint"),
                    format!("obstacle '{}' covers no cell of the map", o.id),
                ));
                continue;
            }
            let handle = o.handle.map(Point2::from);
            if o.removable && handle.is_none() {
                d.push(diag(
                    format!("{field}.handle"),
                    format!("removable obstacle '{}' needs a handle", o.id),
                ));
            }
            obstacles.push(Obstacle {
                id: o.id.clone(),
                footprint,
                removable: o.removable,
                handle,
            });
        }
        let ids: BTreeSet<&str> = f.obstacles.iter().map(|o| o.id.as_str()).collect();
        if ids.len() != f.obstacles.len() {
            d.push(diag("obstacles", "duplicate obstacle id"));
        }

        let mut taken: Vec<(String, crate::geom::Cell)> = Vec::new();
        for (i, a) in f.agents.iter().enumerate() {
            let field = format!("agents[{i}].start");
            let Some(cell) = spec.world_to_cell(a.start.into()) else {
                d.push(diag(field, format!("agent '{}' starts outside the map", a.id)));
                continue;
            };
            if !gt.is_free(cell) || obstacles.iter().any(|o| o.footprint.contains(&cell)) {
                d.push(diag(
                    field,
                    format!("agent '{}' starts on an occupied or outside cell", a.id),
                ));
                continue;
            }
            if let Some((other, _)) = taken.iter().find(|(_, c)| *c == cell) {
                d.push(diag(field, format!("agents '{other}' and '{}' overlap", a.id)));
            }
            taken.push((a.id.clone(), cell));
        }

        if !d.is_empty() {
            return Err(d);
        }
        let agents = f
            .agents
            .iter()
            .map(|a| AgentSpawn {
                id: a.id.clone(),
                start: a.start.into(),
                speed: a.speed,
                nav_sensor: a.nav_sensor,
            })
            .collect();
        Ok(BuiltScenario {
            setup: WorldSetup {
                gt: gt.clone(),
                obstacles,
                agents,
                seed: f.seed,
                range_noise: f.range_noise,
            },
            gt,
            profiles,
        })
    }

    fn ground_truth(&self) -> Result<GroundTruthMap, Vec<Diagnostic>> {
        let m = &self.file.map;
        if !(m.resolution.is_finite() && m.resolution > 0.0) {
            return Err(vec![diag("map.resolution", "resolution must be positive")]);
        }
        let mask = match (&m.mesh, &m.raster) {
            (Some(_), Some(_)) => return Err(vec![diag("map", "give either a mesh or a raster, not both")]),
            (None, None) => return Err(vec![diag("map.mesh", "missing mesh (or inline raster)")]),
            (None, Some(rows)) => {
                let origin = m.origin.map(Point2::from).unwrap_or(Point2::new(0.0, 0.0));
                OccupiedMask::from_rows(rows, m.resolution, origin)
                    .map_err(|e| vec![diag("map.raster", e.to_string())])?
            }
            (Some(mesh), None) => {
                let path = self.base_dir.join(mesh);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| vec![diag("map.mesh", format!("missing mesh {}: {e}", path.display()))])?;
                let mesh = load_mesh(&text).map_err(|e| vec![diag("map.mesh", e.to_string())])?;
                let z = m
                    .slice_height
                    .ok_or_else(|| vec![diag("map.slice_height", "a mesh needs a slice height")])?;
                let bounds = match m.bounds {
                    Some(b) => b.rect(),
                    None => {
                        let pad = 2.0 * m.resolution;
                        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                        for v in &mesh.vertices {
                            for k in 0..2 {
                                lo[k] = lo[k].min(v[k]);
                                hi[k] = hi[k].max(v[k]);
                            }
                        }
                        WorldRect::new(
                            Point2::new(lo[0] - pad, lo[1] - pad),
                            Point2::new(hi[0] + pad, hi[1] + pad),
                        )
                    }
                };
                if !bounds.is_valid() {
                    return Err(vec![diag("map.bounds", "bounds must have min < max")]);
                }
                rasterize(&slice_mesh(&mesh, z), m.resolution, bounds)
            }
        };
        let gt = flood_free(&mask, m.flood_seed.into()).map_err(|e| vec![diag("map.flood_seed", e.to_string())])?;
        let openings = self
            .file
            .openings
            .iter()
            .map(|o| Opening {
                id: o.id.clone(),
                center: o.center.into(),
                kind: o.kind,
                hinge_side: o.hinge_side.unwrap_or(HingeSide::None),
                actuation: o.actuation.unwrap_or(Actuation::None),
            })
            .collect();
        attach_openings(gt, openings).map_err(|e| vec![diag("openings", e.to_string())])
    }

    fn profiles(&self, d: &mut Vec<Diagnostic>) -> Vec<AgentProfile> {
        let f = &self.file;
        if f.agents.is_empty() {
            d.push(diag("agents", "no agents"));
        }
        let explorers = f.agents.iter().filter(|a| a.role == AgentRole::Explorer).count();
        if explorers != 1 {
            d.push(diag(
                "agents",
                format!("exactly one explorer required, found {explorers}"),
            ));
        }
        let ids: BTreeSet<&str> = f.agents.iter().map(|a| a.id.as_str()).collect();
        if ids.len() != f.agents.len() {
            d.push(diag("agents", "duplicate agent id"));
        }
        let mut out = Vec::new();
        for (i, a) in f.agents.iter().enumerate() {
            let field = format!("agents[{i}]");
            let p = AgentProfile {
                id: a.id.clone(),
                role: a.role,
                capabilities: a.capabilities.iter().copied().collect(),
                nav_sensor: a.nav_sensor,
                payload_sensor: a.payload_sensor,
                speed: a.speed,
            };
            if let Err(e) = p.validate() {
                d.push(diag(format!("{field}.capabilities"), e.to_string()));
            }
            if a.speed == 0 {
                d.push(diag(format!("{field}.speed"), "speed must be at least 1 cell per tick"));
            }
            for (name, s) in [("nav_sensor", Some(a.nav_sensor)), ("payload_sensor", a.payload_sensor)] {
                if let Some(s) = s {
                    if !(s.max_range.is_finite()
                        && s.max_range > 0.0
                        && s.angular_resolution.is_finite()
                        && s.angular_resolution > 0.0)
                    {
                        d.push(diag(
                            format!("{field}.{name}"),
                            "range and angular resolution must be positive",
                        ));
                    }
                }
            }
            out.push(p);
        }
        out
    }

    pub fn grid_spec(&self) -> Option<GridSpec> {
        self.ground_truth().ok().map(|gt| *gt.spec())
    }
}

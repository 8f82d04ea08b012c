//! Ground-truth world: true occupancy, agents, removable obstacles and the
//! simulated range sensor.

mod costmap;
mod planner;

pub use costmap::{build_costmap, Costmap, LETHAL};
pub use planner::{cost_field, plan_path, CostField, Path, PlanError};

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floorplan::{GroundTruthMap, GtLabel, WorldRect};
use crate::geom::{direction, Cell, GridRay, GridSpec, Point2, Pose2};
use crate::gridmap::{Ray, Scan};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("agent {0} spawns on an occupied or out-of-bounds cell")]
    AgentSpawnOnOccupied(String),
    #[error("obstacle {0} lies outside the map")]
    ObstacleOutOfBounds(String),
    #[error("removable obstacle {0} has no handle")]
    MissingHandle(String),
    #[error("pose ({x:.3}, {y:.3}) is inside an occupied cell")]
    PoseInOccupied { x: f64, y: f64 },
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("no removable obstacle handle within tolerance of the grasp point")]
    GraspMismatch,
    #[error("obstacle {0} cannot be removed")]
    NotRemovable(String),
}

/// Range sensor configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub max_range: f64,
    pub angular_resolution: f64,
}

impl SensorConfig {
    pub fn ray_count(&self) -> usize {
        ((360.0 / self.angular_resolution).round() as usize).max(1)
    }

    /// Bearings relative to the heading, strictly increasing over [-pi, pi).
    pub fn bearings(&self) -> impl Iterator<Item = f64> {
        let n = self.ray_count();
        let step = std::f64::consts::TAU / n as f64;
        (0..n).map(move |i| -std::f64::consts::PI + step * i as f64)
    }
}

/// A fixed obstacle footprint; removable ones carry a grasp handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    pub footprint: Vec<Cell>,
    pub removable: bool,
    pub handle: Option<Point2>,
}

/// Cells of `spec` whose centres lie inside `rect` (inclusive).
pub fn footprint_cells(spec: &GridSpec, rect: &WorldRect) -> Vec<Cell> {
    let mut cells = Vec::new();
    for row in 0..spec.height {
        for col in 0..spec.width {
            let c = Cell::new(col, row);
            let p = spec.cell_center(c);
            if p.x >= rect.min.x && p.x <= rect.max.x && p.y >= rect.min.y && p.y <= rect.max.y {
                cells.push(c);
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpawn {
    pub id: String,
    pub start: Point2,
    pub speed: usize,
    pub nav_sensor: SensorConfig,
}

/// Everything needed to build a [`World`].
#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub gt: GroundTruthMap,
    pub obstacles: Vec<Obstacle>,
    pub agents: Vec<AgentSpawn>,
    pub seed: u64,
    /// Standard deviation (meters) of range noise on hits; 0 disables noise.
    pub range_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAgent {
    pub id: String,
    pub cell: Cell,
    pub heading: f64,
    pub speed: usize,
    pub nav_sensor: SensorConfig,
    pub path: VecDeque<Cell>,
    /// Meters travelled so far.
    pub distance: f64,
}

/// Per-agent motion command for one tick.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentCommand {
    FollowPath(Vec<Cell>),
    Stop,
    /// Move one cell by the given offset (each component in -1..=1).
    Teleop {
        dc: i64,
        dr: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    PathBlocked { agent: String, at: Cell },
    Arrived { agent: String, at: Cell },
    TeleopBlocked { agent: String },
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub tick: u64,
    pub events: Vec<WorldEvent>,
    pub scans: Vec<(String, Scan)>,
}

#[derive(Debug, Clone)]
pub struct World {
    gt: GroundTruthMap,
    occupied: Vec<bool>,
    obstacles: Vec<Obstacle>,
    agents: Vec<SimAgent>,
    tick: u64,
    rng: ChaCha8Rng,
    range_noise: f64,
}

/// Overlay obstacle footprints on the ground truth and place the agents.
pub fn build_world(setup: &WorldSetup) -> Result<World, WorldError> {
    let spec = *setup.gt.spec();
    let mut occupied: Vec<bool> = setup.gt.labels().iter().map(|l| *l == GtLabel::Occupied).collect();
    for o in &setup.obstacles {
        if o.footprint.is_empty() || o.footprint.iter().any(|c| c.col >= spec.width || c.row >= spec.height) {
            return Err(WorldError::ObstacleOutOfBounds(o.id.clone()));
        }
        if o.removable && o.handle.is_none() {
            return Err(WorldError::MissingHandle(o.id.clone()));
        }
        for c in &o.footprint {
            occupied[spec.index(*c)] = true;
        }
    }
    let mut agents: Vec<SimAgent> = Vec::with_capacity(setup.agents.len());
    for a in &setup.agents {
        let cell = spec
            .world_to_cell(a.start)
            .filter(|c| !occupied[spec.index(*c)])
            .ok_or_else(|| WorldError::AgentSpawnOnOccupied(a.id.clone()))?;
        agents.push(SimAgent {
            id: a.id.clone(),
            cell,
            heading: 0.0,
            speed: a.speed,
            nav_sensor: a.nav_sensor,
            path: VecDeque::new(),
            distance: 0.0,
        });
    }
    Ok(World {
        gt: setup.gt.clone(),
        occupied,
        obstacles: setup.obstacles.clone(),
        agents,
        tick: 0,
        rng: ChaCha8Rng::seed_from_u64(setup.seed),
        range_noise: setup.range_noise,
    })
}

impl World {
    pub fn spec(&self) -> &GridSpec {
        self.gt.spec()
    }

    pub fn gt(&self) -> &GroundTruthMap {
        &self.gt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn agents(&self) -> &[SimAgent] {
        &self.agents
    }

    pub fn agent(&self, id: &str) -> Option<&SimAgent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[self.spec().index(cell)]
    }

    pub fn true_occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn pose_of(&self, agent: &SimAgent) -> Pose2 {
        let p = self.spec().cell_center(agent.cell);
        Pose2::new(p.x, p.y, agent.heading)
    }

    /// Noise-free 360 degree scan from `pose`.
    pub fn raycast_scan(&self, pose: Pose2, sensor: &SensorConfig) -> Result<Scan, WorldError> {
        let spec = *self.spec();
        let pos = pose.position;
        match spec.world_to_cell(pos) {
            Some(c) if !self.is_occupied(c) => {}
            _ => return Err(WorldError::PoseInOccupied { x: pos.x, y: pos.y }),
        }
        let rays = sensor
            .bearings()
            .map(|bearing| self.cast(pos, pose.heading + bearing, sensor.max_range, bearing))
            .collect();
        Ok(Scan {
            pose,
            rays,
            max_range: sensor.max_range,
        })
    }

    fn cast(&self, from: Point2, angle: f64, max_range: f64, bearing: f64) -> Ray {
        let walk = GridRay::new(*self.spec(), from, direction(angle), max_range);
        for step in walk.into_iter().flatten() {
            if self.is_occupied(step.cell) {
                // midpoint of the chord through the hit cell
                let range = 0.5 * (step.t_enter + step.t_exit.min(max_range));
                return Ray {
                    bearing,
                    range,
                    hit: true,
                };
            }
        }
        Ray {
            bearing,
            range: max_range,
            hit: false,
        }
    }

    /// Advance one tick: apply commands, move agents in id order, then scan.
    pub fn step(&mut self, commands: Vec<(String, AgentCommand)>) -> Result<StepReport, WorldError> {
        let mut events = Vec::new();
        for (id, cmd) in commands {
            let idx = self
                .agents
                .iter()
                .position(|a| a.id == id)
                .ok_or_else(|| WorldError::UnknownAgent(id.clone()))?;
            match cmd {
                AgentCommand::FollowPath(cells) => {
                    let mut path: VecDeque<Cell> = cells.into();
                    if path.front() == Some(&self.agents[idx].cell) {
                        path.pop_front();
                    }
                    self.agents[idx].path = path;
                }
                AgentCommand::Stop => self.agents[idx].path.clear(),
                AgentCommand::Teleop { dc, dr } => {
                    let a = &self.agents[idx];
                    let (c, r) = (a.cell.col as i64 + dc.clamp(-1, 1), a.cell.row as i64 + dr.clamp(-1, 1));
                    let target = self
                        .spec()
                        .contains(c, r)
                        .then(|| Cell::new(c as usize, r as usize))
                        .filter(|t| self.can_enter(idx, a.cell, *t));
                    match target {
                        Some(t) => {
                            self.agents[idx].path.clear();
                            self.move_agent(idx, t);
                        }
                        None => events.push(WorldEvent::TeleopBlocked { agent: id }),
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.sort_by(|a, b| self.agents[*a].id.cmp(&self.agents[*b].id));
        for idx in order {
            if self.agents[idx].path.is_empty() {
                continue;
            }
            for _ in 0..self.agents[idx].speed {
                let Some(&next) = self.agents[idx].path.front() else {
                    break;
                };
                let here = self.agents[idx].cell;
                if !self.can_enter(idx, here, next) {
                    self.agents[idx].path.clear();
                    events.push(WorldEvent::PathBlocked {
                        agent: self.agents[idx].id.clone(),
                        at: next,
                    });
                    break;
                }
                self.agents[idx].path.pop_front();
                self.move_agent(idx, next);
                if self.agents[idx].path.is_empty() {
                    events.push(WorldEvent::Arrived {
                        agent: self.agents[idx].id.clone(),
                        at: next,
                    });
                }
            }
        }
        self.tick += 1;

        let mut scans = Vec::with_capacity(self.agents.len());
        let mut ids: Vec<usize> = (0..self.agents.len()).collect();
        ids.sort_by(|a, b| self.agents[*a].id.cmp(&self.agents[*b].id));
        for idx in ids {
            let a = &self.agents[idx];
            let id = a.id.clone();
            let mut scan = self.raycast_scan(self.pose_of(a), &a.nav_sensor)?;
            self.add_noise(&mut scan);
            scans.push((id, scan));
        }
        Ok(StepReport {
            tick: self.tick,
            events,
            scans,
        })
    }

    /// Scans of every agent at the current poses without advancing time.
    pub fn initial_scans(&mut self) -> Result<Vec<(String, Scan)>, WorldError> {
        let mut ids: Vec<usize> = (0..self.agents.len()).collect();
        ids.sort_by(|a, b| self.agents[*a].id.cmp(&self.agents[*b].id));
        let mut out = Vec::new();
        for idx in ids {
            let a = &self.agents[idx];
            let id = a.id.clone();
            let mut scan = self.raycast_scan(self.pose_of(a), &a.nav_sensor)?;
            self.add_noise(&mut scan);
            out.push((id, scan));
        }
        Ok(out)
    }

    fn add_noise(&mut self, scan: &mut Scan) {
        if self.range_noise <= 0.0 {
            return;
        }
        let Ok(normal) = Normal::new(0.0, self.range_noise) else {
            return;
        };
        for ray in scan.rays.iter_mut().filter(|r| r.hit) {
            let noisy: f64 = ray.range + normal.sample(&mut self.rng);
            ray.range = noisy.clamp(1e-6, scan.max_range);
        }
    }

    fn can_enter(&self, idx: usize, from: Cell, to: Cell) -> bool {
        if from.chebyshev(&to) != 1 || self.is_occupied(to) {
            return false;
        }
        if from.col != to.col && from.row != to.row {
            let a = Cell::new(to.col, from.row);
            let b = Cell::new(from.col, to.row);
            if self.is_occupied(a) || self.is_occupied(b) {
                return false;
            }
        }
        !self
            .agents
            .iter()
            .enumerate()
            .any(|(j, other)| j != idx && other.cell == to)
    }

    fn move_agent(&mut self, idx: usize, to: Cell) {
        let res = self.spec().resolution;
        let a = &mut self.agents[idx];
        let dc = to.col as f64 - a.cell.col as f64;
        let dr = to.row as f64 - a.cell.row as f64;
        a.heading = dr.atan2(dc);
        a.distance += dc.hypot(dr) * res;
        a.cell = to;
    }

    /// Remove the removable obstacle whose handle is nearest `grasp`, provided
    /// it lies within `tolerance` meters.
    pub fn remove_obstacle(&mut self, grasp: Point2, tolerance: f64) -> Result<String, WorldError> {
        let nearest = self
            .obstacles
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.handle.map(|h| (i, h.distance(&grasp))))
            .filter(|(_, d)| *d <= tolerance)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((i, _)) = nearest {
            if !self.obstacles[i].removable {
                return Err(WorldError::NotRemovable(self.obstacles[i].id.clone()));
            }
            let removed = self.obstacles.remove(i);
            let spec = *self.spec();
            for c in &removed.footprint {
                let still_blocked =
                    self.gt.label(*c) == GtLabel::Occupied || self.obstacles.iter().any(|o| o.footprint.contains(c));
                self.occupied[spec.index(*c)] = still_blocked;
            }
            return Ok(removed.id);
        }
        // grasp on something solid that is not a removable handle
        if let Some(cell) = self.spec().world_to_cell(grasp) {
            if self.gt.label(cell) == GtLabel::Occupied {
                return Err(WorldError::NotRemovable("wall".to_string()));
            }
            if let Some(o) = self.obstacles.iter().find(|o| o.footprint.contains(&cell)) {
                if !o.removable {
                    return Err(WorldError::NotRemovable(o.id.clone()));
                }
            }
        }
        Err(WorldError::GraspMismatch)
    }
}

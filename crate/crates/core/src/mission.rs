//! The mission loop.
//!
//! One [`Mission`] owns the world, the bus, every agent's local map and the
//! agent state machines. Each tick it drains operator commands, steps the
//! world, folds the new scans into the local maps, shares and merges them over
//! the bus, evaluates the stopping rule, steps the explorer and then the
//! assistants (in id order), and appends one JSON line to the metrics log.
//!
//! The mission ends Done once the merged map reaches the threshold and no
//! help request is outstanding, or Aborted for one of [`AbortReason`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    allocate_request, assistant_transition, explorer_transition, AgentProfile, AgentRole, Allocation, AssistantAction,
    AssistantEvent, AssistantState, ExplorerAction, ExplorerContext, ExplorerEvent, ExplorerState, HumanChannel,
    HumanMode, HumanResponse, RosterEntry,
};
use crate::explore::{detect_frontiers, evaluate, select_goal, MissionVerdict};
use crate::floorplan::GroundTruthMap;
use crate::geom::{direction, Cell, GridRay, GridSpec, Point2, Pose2};
use crate::gridmap::{
    compute_phi, encode_pgm, merge_grids, scan_updates, CellState, OccupancyGrid, PGM_FREE, PGM_OCCUPIED,
};
use crate::msgbus::{
    BusError, HelpKind, HelpRequest, MasterRegistry, Message, Publisher, Subscriber, TOPIC_ASSIGNMENTS,
    TOPIC_HELP_REQUESTS, TOPIC_HELP_STATUS, TOPIC_MAP_SHARE,
};
use crate::scenario::{Diagnostic, ExplorationParams, Scenario, ScriptedEvent};
use crate::simworld::{
    build_costmap, build_world, cost_field, plan_path, AgentCommand, Costmap, SensorConfig, World, WorldError,
    WorldEvent,
};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;
pub const RESULT_SCHEMA_VERSION: u32 = 1;
pub const METRICS_SCHEMA_VERSION: u32 = 1;

const COORDINATOR: &str = "coordinator";
const MAPPER: &str = "mapper";

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid scenario:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OperatorCommand {
    Start,
    Stop,
    OverrideGoal { point: Point2 },
    Teleop { agent: String, dc: i64, dr: i64 },
    GraspPoint { request_id: u64, point: Point2 },
}

impl OperatorCommand {
    /// Shape checks that do not depend on mission state.
    pub fn check(&self) -> Result<(), String> {
        match self {
            OperatorCommand::OverrideGoal { point } | OperatorCommand::GraspPoint { point, .. }
                if !point.is_finite() =>
            {
                Err("coordinates must be finite".into())
            }
            OperatorCommand::Teleop { dc, dr, .. } if dc.abs() > 1 || dr.abs() > 1 || (*dc, *dr) == (0, 0) => {
                Err("teleop step must be one cell".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    AssistFailed,
    MasterLost,
    EscalationUnserved,
    OperatorStop,
    TickBudget,
    Exhausted,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Outcome {
    Running,
    Done,
    Aborted { reason: AbortReason, detail: String },
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Outcome::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    Arrived {
        agent: String,
        at: Cell,
    },
    PathBlocked {
        agent: String,
        at: Cell,
    },
    TeleopBlocked {
        agent: String,
    },
    PlanFailed {
        agent: String,
        target: Point2,
    },
    Verdict {
        kind: String,
        phi: f64,
    },
    HelpRequested {
        request: HelpRequest,
    },
    Assigned {
        request_id: u64,
        agent: String,
    },
    Deferred {
        request_id: u64,
    },
    Escalated {
        request_id: u64,
    },
    GraspQueried {
        request_id: u64,
        agent: String,
    },
    GraspReceived {
        request_id: u64,
        point: Point2,
    },
    ObstacleRemoved {
        request_id: u64,
        obstacle_id: String,
        by: String,
    },
    RemovalFailed {
        request_id: u64,
        reason: String,
    },
    ObstacleCleared {
        request_id: u64,
    },
    AssistFailed {
        request_id: u64,
        reason: String,
    },
    HighResCaptured {
        request_id: u64,
        by: String,
    },
    StaleCleared {
        cell: Cell,
        reobservations: u32,
    },
    StopScan {
        agent: String,
    },
    MasterKilled,
    MasterLost {
        error: String,
    },
    Command {
        command: OperatorCommand,
    },
    CommandRejected {
        command: OperatorCommand,
        reason: String,
    },
    TransitionRejected {
        agent: String,
        error: String,
    },
    Finished {
        outcome: Outcome,
    },
}

/// Cheap shared handle used to enqueue operator commands from other tasks.
#[derive(Debug, Clone, Default)]
pub struct Mailbox(Arc<Mutex<VecDeque<OperatorCommand>>>);

impl Mailbox {
    pub fn push(&self, cmd: OperatorCommand) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push_back(cmd);
    }

    fn drain(&self) -> Vec<OperatorCommand> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).drain(..).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: String,
    pub role: AgentRole,
    pub cell: Cell,
    pub position: Point2,
    pub heading: f64,
    pub state: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub help_requests: u32,
    pub removals: u32,
    pub path_blocked: u32,
    pub commands: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSnapshot {
    pub schema_version: u32,
    pub scenario: String,
    pub tick: u64,
    pub threshold: f64,
    pub phi: f64,
    pub explored_free: usize,
    pub gt_free: usize,
    pub verdict: String,
    pub outcome: Outcome,
    pub started: bool,
    pub agents: Vec<AgentView>,
    pub pending_requests: Vec<HelpRequest>,
    /// Requests waiting for an operator grasp point.
    pub awaiting_grasp: Vec<u64>,
    pub frontiers: usize,
    pub scan_coverage: f64,
    pub counters: Counters,
    #[serde(skip)]
    pub map: Option<Arc<OccupancyGrid>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpRecord {
    pub request: HelpRequest,
    pub raised_at: u64,
    pub assigned_to: Option<String>,
    pub grasps: Vec<Point2>,
    pub removed_obstacle: Option<String>,
    pub resolved_at: Option<u64>,
    pub resolution: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaleRecord {
    pub cell: Cell,
    pub removed_at: u64,
    pub cleared_at: Option<u64>,
    /// Explorer scans that passed through the cell before it stopped reading
    /// occupied in the merged map.
    pub reobservations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockedAt {
    pub tick: u64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionResult {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub threshold: f64,
    pub outcome: Outcome,
    pub final_phi: f64,
    pub ticks: u64,
    /// Meters travelled per agent.
    pub distance: BTreeMap<String, f64>,
    pub help_requests: Vec<HelpRecord>,
    pub scan_coverage: f64,
    pub observed_points: usize,
    pub first_blocked: Option<BlockedAt>,
    pub stale: Vec<StaleRecord>,
    pub artifacts: Vec<String>,
}

/// Payload-sensor coverage of ground-truth free space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCoverage {
    scanned: Vec<bool>,
    scanned_count: usize,
    gt_free: usize,
    seen: Vec<bool>,
    observed: Vec<Point2>,
}

impl ScanCoverage {
    pub fn new(gt: &GroundTruthMap) -> Self {
        let n = gt.spec().len();
        Self {
            scanned: vec![false; n],
            scanned_count: 0,
            gt_free: gt.free_count(),
            seen: vec![false; n],
            observed: Vec::new(),
        }
    }

    /// Percent of ground-truth free cells scanned.
    pub fn coverage(&self) -> f64 {
        if self.gt_free == 0 {
            0.0
        } else {
            100.0 * self.scanned_count as f64 / self.gt_free as f64
        }
    }

    pub fn scanned(&self) -> &[bool] {
        &self.scanned
    }

    /// Graymap of the scanned mask: scanned 254, unscanned 0.
    pub fn export_mask(&self, spec: &GridSpec) -> Vec<u8> {
        let mut pixels = Vec::with_capacity(spec.len());
        for row in (0..spec.height).rev() {
            for col in 0..spec.width {
                let on = self.scanned[spec.index(Cell::new(col, row))];
                pixels.push(if on { PGM_FREE } else { PGM_OCCUPIED });
            }
        }
        encode_pgm(spec.width, spec.height, &pixels)
    }

    /// Centres of occupied cells hit by the payload sensor, first sighting order.
    pub fn observed(&self) -> &[Point2] {
        &self.observed
    }
}

/// Mark ground-truth free cells in line of sight and payload range that the
/// map already classifies as free, and record the first solid cell per ray.
pub fn update_coverage(cov: &mut ScanCoverage, pose: Pose2, sensor: &SensorConfig, world: &World, map: &OccupancyGrid) {
    let spec = *world.spec();
    for bearing in sensor.bearings() {
        let Some(ray) = GridRay::new(spec, pose.position, direction(pose.heading + bearing), sensor.max_range) else {
            return;
        };
        for step in ray {
            let i = spec.index(step.cell);
            if world.is_occupied(step.cell) {
                if !cov.seen[i] {
                    cov.seen[i] = true;
                    cov.observed.push(spec.cell_center(step.cell));
                }
                break;
            }
            if world.gt().is_free(step.cell) && map.state_at(i) == CellState::Free && !cov.scanned[i] {
                cov.scanned[i] = true;
                cov.scanned_count += 1;
            }
        }
    }
}

struct Node {
    map_pub: Publisher,
    help_pub: Publisher,
    status_pub: Publisher,
    assignments: Subscriber,
    status: Subscriber,
}

pub struct Mission {
    name: String,
    seed: u64,
    threshold: f64,
    tick_budget: u64,
    params: ExplorationParams,
    events_script: Vec<ScriptedEvent>,
    profiles: Vec<AgentProfile>,
    explorer_id: String,

    world: World,
    master: MasterRegistry,
    nodes: BTreeMap<String, Node>,
    coordinator_help: Subscriber,
    coordinator_assign: Publisher,
    coordinator_status: Subscriber,
    mapper_sub: Subscriber,

    local: BTreeMap<String, OccupancyGrid>,
    shared: BTreeMap<String, Arc<OccupancyGrid>>,
    merged: Arc<OccupancyGrid>,
    coverage: ScanCoverage,
    explorer: ExplorerState,
    assistants: BTreeMap<String, AssistantState>,
    homes: BTreeMap<String, Point2>,
    human: HumanChannel,
    requests: BTreeMap<u64, HelpRecord>,
    unassigned: VecDeque<HelpRequest>,
    next_request_id: u64,

    pending_commands: Vec<(String, AgentCommand)>,
    deferred_notices: Vec<(String, WorldEvent)>,
    pending_override: Option<Point2>,
    mailbox: Mailbox,
    command_log: Vec<(u64, OperatorCommand)>,
    started: bool,

    tick: u64,
    phi: f64,
    explored_free: usize,
    gt_free: usize,
    verdict: Option<MissionVerdict>,
    last_verdict_kind: Option<&'static str>,
    frontier_count: usize,
    first_blocked: Option<BlockedAt>,
    stale: Vec<StaleRecord>,
    counters: Counters,
    outcome: Outcome,

    tick_events: Vec<MissionEvent>,
    event_log: Vec<(u64, MissionEvent)>,
    metrics: Vec<String>,
    phi_history: Vec<f64>,
    snapshot: MissionSnapshot,
}

fn to_notice(e: &WorldEvent) -> (String, MissionEvent) {
    match e {
        WorldEvent::PathBlocked { agent, at } => (
            agent.clone(),
            MissionEvent::PathBlocked {
                agent: agent.clone(),
                at: *at,
            },
        ),
        WorldEvent::Arrived { agent, at } => (
            agent.clone(),
            MissionEvent::Arrived {
                agent: agent.clone(),
                at: *at,
            },
        ),
        WorldEvent::TeleopBlocked { agent } => (agent.clone(), MissionEvent::TeleopBlocked { agent: agent.clone() }),
    }
}

impl Mission {
    /// Build the mission and take the initial scans (tick 0). `seed` overrides
    /// the scenario seed.
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Result<Mission, MissionError> {
        let built = scenario.build().map_err(MissionError::Invalid)?;
        let f = &scenario.file;
        let seed = seed.unwrap_or(f.seed);
        let mut setup = built.setup;
        setup.seed = seed;
        let mut world = build_world(&setup)?;
        let spec = *world.spec();

        let mut profiles = built.profiles;
        profiles.sort_by(|a, b| a.id.cmp(&b.id));
        let explorer_id = profiles
            .iter()
            .find(|p| p.role == AgentRole::Explorer)
            .map(|p| p.id.clone())
            .ok_or_else(|| MissionError::Invalid(vec![]))?;

        let master = MasterRegistry::new();
        master.register_node(COORDINATOR)?;
        master.register_node(MAPPER)?;
        let mut nodes = BTreeMap::new();
        for p in &profiles {
            master.register_node(&p.id)?;
            nodes.insert(
                p.id.clone(),
                Node {
                    map_pub: master.advertise(&p.id, TOPIC_MAP_SHARE)?,
                    help_pub: master.advertise(&p.id, TOPIC_HELP_REQUESTS)?,
                    status_pub: master.advertise(&p.id, TOPIC_HELP_STATUS)?,
                    assignments: master.subscribe(&p.id, TOPIC_ASSIGNMENTS)?,
                    status: master.subscribe(&p.id, TOPIC_HELP_STATUS)?,
                },
            );
        }
        let coordinator_help = master.subscribe(COORDINATOR, TOPIC_HELP_REQUESTS)?;
        let coordinator_assign = master.advertise(COORDINATOR, TOPIC_ASSIGNMENTS)?;
        let coordinator_status = master.subscribe(COORDINATOR, TOPIC_HELP_STATUS)?;
        let mapper_sub = master.subscribe(MAPPER, TOPIC_MAP_SHARE)?;

        let empty = OccupancyGrid::new(spec).map_err(|_| MissionError::Invalid(vec![]))?;
        let local: BTreeMap<String, OccupancyGrid> = profiles.iter().map(|p| (p.id.clone(), empty.clone())).collect();
        let assistants = profiles
            .iter()
            .filter(|p| p.role == AgentRole::Assistant)
            .map(|p| (p.id.clone(), AssistantState::Idle))
            .collect();
        let homes = world
            .agents()
            .iter()
            .map(|a| (a.id.clone(), spec.cell_center(a.cell)))
            .collect();
        let coverage = ScanCoverage::new(world.gt());
        let gt_free = world.gt().free_count();
        let scans = world.initial_scans()?;

        let mut m = Mission {
            name: f.name.clone(),
            seed,
            threshold: f.threshold,
            tick_budget: f.tick_budget,
            params: f.exploration,
            events_script: f.events.clone(),
            profiles,
            explorer_id,
            world,
            master,
            nodes,
            coordinator_help,
            coordinator_assign,
            coordinator_status,
            mapper_sub,
            local,
            shared: BTreeMap::new(),
            merged: Arc::new(empty),
            coverage,
            explorer: ExplorerState::Exploring,
            assistants,
            homes,
            human: HumanChannel::new(f.human),
            requests: BTreeMap::new(),
            unassigned: VecDeque::new(),
            next_request_id: 1,
            pending_commands: Vec::new(),
            deferred_notices: Vec::new(),
            pending_override: None,
            mailbox: Mailbox::default(),
            command_log: Vec::new(),
            started: true,
            tick: 0,
            phi: 0.0,
            explored_free: 0,
            gt_free,
            verdict: None,
            last_verdict_kind: None,
            frontier_count: 0,
            first_blocked: None,
            stale: Vec::new(),
            counters: Counters::default(),
            outcome: Outcome::Running,
            tick_events: Vec::new(),
            event_log: Vec::new(),
            metrics: Vec::new(),
            phi_history: Vec::new(),
            snapshot: MissionSnapshot {
                schema_version: SNAPSHOT_SCHEMA_VERSION,
                scenario: f.name.clone(),
                tick: 0,
                threshold: f.threshold,
                phi: 0.0,
                explored_free: 0,
                gt_free,
                verdict: String::new(),
                outcome: Outcome::Running,
                started: true,
                agents: Vec::new(),
                pending_requests: Vec::new(),
                awaiting_grasp: Vec::new(),
                frontiers: 0,
                scan_coverage: 0.0,
                counters: Counters::default(),
                map: None,
            },
        };
        m.absorb_scans(scans);
        m.decide(Vec::new());
        Ok(m)
    }

    /// Hold the mission at tick 0 until an operator Start command arrives.
    pub fn pause_until_start(&mut self) {
        if self.tick == 0 {
            self.started = false;
            self.snapshot.started = false;
        }
    }

    pub fn mailbox(&self) -> Mailbox {
        self.mailbox.clone()
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_terminal()
    }

    pub fn outcome(&self) -> &Outcome {
        &self.outcome
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn gt(&self) -> &GroundTruthMap {
        self.world.gt()
    }

    pub fn master(&self) -> &MasterRegistry {
        &self.master
    }

    pub fn merged(&self) -> Arc<OccupancyGrid> {
        self.merged.clone()
    }

    pub fn local_map(&self, agent: &str) -> Option<&OccupancyGrid> {
        self.local.get(agent)
    }

    pub fn coverage(&self) -> &ScanCoverage {
        &self.coverage
    }

    pub fn explorer_state(&self) -> &ExplorerState {
        &self.explorer
    }

    pub fn assistant_state(&self, id: &str) -> Option<&AssistantState> {
        self.assistants.get(id)
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn phi_history(&self) -> &[f64] {
        &self.phi_history
    }

    pub fn events(&self) -> &[(u64, MissionEvent)] {
        &self.event_log
    }

    pub fn command_log(&self) -> &[(u64, OperatorCommand)] {
        &self.command_log
    }

    pub fn snapshot(&self) -> MissionSnapshot {
        self.snapshot.clone()
    }

    pub fn requests(&self) -> impl Iterator<Item = &HelpRecord> {
        self.requests.values()
    }

    pub fn result(&self) -> MissionResult {
        MissionResult {
            schema_version: RESULT_SCHEMA_VERSION,
            scenario: self.name.clone(),
            seed: self.seed,
            threshold: self.threshold,
            outcome: self.outcome.clone(),
            final_phi: self.phi,
            ticks: self.tick,
            distance: self.world.agents().iter().map(|a| (a.id.clone(), a.distance)).collect(),
            help_requests: self.requests.values().cloned().collect(),
            scan_coverage: self.coverage.coverage(),
            observed_points: self.coverage.observed().len(),
            first_blocked: self.first_blocked,
            stale: self.stale.clone(),
            artifacts: Vec::new(),
        }
    }

    /// Run one tick. Returns false when nothing happened (terminal or paused).
    pub fn step(&mut self) -> bool {
        if self.is_terminal() {
            return false;
        }
        for cmd in self.mailbox.drain() {
            self.apply_command(cmd);
        }
        if self.is_terminal() {
            self.finish_tick();
            return true;
        }
        if !self.started {
            return false;
        }
        let next = self.tick + 1;
        for ev in self.events_script.clone() {
            match ev {
                ScriptedEvent::KillMaster { tick } if tick == next => {
                    self.master.kill_master();
                    self.tick_events.push(MissionEvent::MasterKilled);
                }
                ScriptedEvent::HighResScan { tick, point } if tick == next => {
                    let request = HelpRequest {
                        request_id: self.next_request_id,
                        requester: self.explorer_id.clone(),
                        coordinates: point.into(),
                        kind: HelpKind::HighResScan,
                        region_ref: None,
                    };
                    self.raise_request(request);
                }
                _ => {}
            }
        }
        let commands = std::mem::take(&mut self.pending_commands);
        match self.world.step(commands) {
            Ok(report) => {
                self.tick = report.tick;
                let notices: Vec<(String, WorldEvent)> = std::mem::take(&mut self.deferred_notices)
                    .into_iter()
                    .chain(report.events.iter().map(|e| (agent_of(e).to_string(), e.clone())))
                    .collect();
                for e in &report.events {
                    if matches!(e, WorldEvent::PathBlocked { .. }) {
                        self.counters.path_blocked += 1;
                    }
                    self.tick_events.push(to_notice(e).1);
                }
                self.absorb_scans(report.scans);
                if !self.is_terminal() {
                    self.decide(notices);
                } else {
                    self.finish_tick();
                }
            }
            Err(e) => {
                self.tick += 1;
                self.abort(AbortReason::Fault, e.to_string());
                self.finish_tick();
            }
        }
        true
    }

    /// Step until terminal.
    pub fn run_to_end(&mut self) -> MissionResult {
        while !self.is_terminal() {
            if !self.step() && !self.started {
                self.apply_command(OperatorCommand::Start);
            }
        }
        self.result()
    }

    fn apply_command(&mut self, cmd: OperatorCommand) {
        self.counters.commands += 1;
        if let Err(reason) = cmd.check() {
            self.tick_events
                .push(MissionEvent::CommandRejected { command: cmd, reason });
            return;
        }
        let rejected = match &cmd {
            OperatorCommand::Start if self.started => Some("mission already running".to_string()),
            OperatorCommand::Start => {
                self.started = true;
                None
            }
            OperatorCommand::Stop => {
                self.abort(AbortReason::OperatorStop, "operator stop".into());
                None
            }
            OperatorCommand::OverrideGoal { point } => {
                self.pending_override = Some(*point);
                None
            }
            OperatorCommand::Teleop { agent, dc, dr } => match self.world.agent(agent) {
                None => Some(format!("unknown agent '{agent}'")),
                Some(a) => {
                    if !a.path.is_empty() {
                        // the teleop step drops the current path
                        self.deferred_notices.push((
                            agent.clone(),
                            WorldEvent::PathBlocked {
                                agent: agent.clone(),
                                at: a.cell,
                            },
                        ));
                    }
                    self.pending_commands
                        .push((agent.clone(), AgentCommand::Teleop { dc: *dc, dr: *dr }));
                    None
                }
            },
            OperatorCommand::GraspPoint { request_id, point } => {
                self.human.deposit(*request_id, *point).err().map(|e| e.to_string())
            }
        };
        self.command_log.push((self.tick, cmd.clone()));
        self.tick_events.push(match rejected {
            None => MissionEvent::Command { command: cmd },
            Some(reason) => MissionEvent::CommandRejected { command: cmd, reason },
        });
    }

    fn abort(&mut self, reason: AbortReason, detail: String) {
        if !self.is_terminal() {
            self.outcome = Outcome::Aborted { reason, detail };
        }
    }

    fn absorb_scans(&mut self, scans: Vec<(String, crate::gridmap::Scan)>) {
        let spec = *self.world.spec();
        for (id, scan) in scans {
            let Ok(updates) = scan_updates(&spec, &scan) else {
                continue;
            };
            if id == self.explorer_id && self.stale.iter().any(|s| s.cleared_at.is_none()) {
                let missed: BTreeSet<Cell> = updates.iter().filter(|(_, hit)| !hit).map(|(c, _)| *c).collect();
                for s in self.stale.iter_mut().filter(|s| s.cleared_at.is_none()) {
                    if missed.contains(&s.cell) {
                        s.reobservations += 1;
                    }
                }
            }
            if let Some(grid) = self.local.get_mut(&id) {
                for (cell, hit) in updates {
                    grid.update(cell, hit);
                }
            }
        }
    }

    fn bus_failed(&mut self, e: BusError) {
        self.tick_events.push(MissionEvent::MasterLost { error: e.to_string() });
        let reason = if e == BusError::MasterUnavailable {
            AbortReason::MasterLost
        } else {
            AbortReason::Fault
        };
        self.abort(reason, e.to_string());
    }

    fn raise_request(&mut self, request: HelpRequest) {
        let Some(node) = self.nodes.get(&request.requester) else {
            return;
        };
        if let Err(e) = node.help_pub.publish(Message::HelpRequest(request.clone())) {
            self.bus_failed(e);
            return;
        }
        self.next_request_id = self.next_request_id.max(request.request_id + 1);
        self.counters.help_requests += 1;
        self.requests.insert(
            request.request_id,
            HelpRecord {
                request: request.clone(),
                raised_at: self.tick,
                assigned_to: None,
                grasps: Vec::new(),
                removed_obstacle: None,
                resolved_at: None,
                resolution: None,
            },
        );
        self.tick_events.push(MissionEvent::HelpRequested { request });
    }

    fn pending(&self) -> impl Iterator<Item = &HelpRecord> {
        self.requests.values().filter(|r| r.resolved_at.is_none())
    }

    /// Costmap for `agent`: the merged map with the other agents marked lethal.
    fn costmap_for(&self, agent: &str) -> Costmap {
        let others: Vec<Cell> = self
            .world
            .agents()
            .iter()
            .filter(|a| a.id != agent)
            .map(|a| a.cell)
            .collect();
        build_costmap(&self.merged, self.params.inflation_radius).with_lethal(others)
    }

    /// Plan `agent` towards the reachable cell nearest `target`. Returns
    /// `Some(true)` when already there, `None` when nothing is reachable.
    fn navigate(&mut self, agent: &str, target: Point2) -> Option<bool> {
        let here = self.world.agent(agent)?.cell;
        let mut costmap = self.costmap_for(agent);
        if costmap.is_lethal(here) {
            let spec = *costmap.spec();
            let mut costs = costmap.costs().to_vec();
            costs[spec.index(here)] = 0.0;
            costmap = Costmap::from_costs(spec, costs, costmap.inflation_radius());
        }
        let field = cost_field(&costmap, here).ok()?;
        let goal = field.nearest_reachable(target)?;
        if goal == here {
            self.pending_commands.push((agent.to_string(), AgentCommand::Stop));
            return Some(true);
        }
        let path = plan_path(&costmap, here, goal).ok()?;
        self.pending_commands
            .push((agent.to_string(), AgentCommand::FollowPath(path.cells)));
        Some(false)
    }

    fn decide(&mut self, notices: Vec<(String, WorldEvent)>) {
        self.share_maps();
        if self.is_terminal() {
            self.finish_tick();
            return;
        }
        let tick = self.tick;
        for s in self.stale.iter_mut().filter(|s| s.cleared_at.is_none()) {
            if self.merged.state(s.cell) != CellState::Occupied {
                s.cleared_at = Some(tick);
                self.tick_events.push(MissionEvent::StaleCleared {
                    cell: s.cell,
                    reobservations: s.reobservations,
                });
            }
        }

        let explorer = self.world.agent(&self.explorer_id).cloned();
        let Some(explorer) = explorer else { return };
        let pose = self.world.pose_of(&explorer);
        if let Some(sensor) = self.profile(&self.explorer_id).and_then(|p| p.payload_sensor) {
            update_coverage(&mut self.coverage, pose, &sensor, &self.world, &self.merged);
        }

        let gt = self.world.gt();
        let report = match compute_phi(&self.merged, gt) {
            Ok(r) => r,
            Err(e) => {
                self.abort(AbortReason::Fault, e.to_string());
                self.finish_tick();
                return;
            }
        };
        self.phi = report.phi;
        self.explored_free = report.explored_free;
        let frontiers = detect_frontiers(&self.merged, self.params.min_frontier_size);
        self.frontier_count = frontiers.len();
        let costmap = self.costmap_for(&self.explorer_id);
        let goal = select_goal(&frontiers, pose.position, &costmap);
        let verdict = match evaluate(&self.merged, gt, self.threshold, goal, self.params.min_region_size) {
            Ok(v) => v,
            Err(e) => {
                self.abort(AbortReason::Fault, e.to_string());
                self.finish_tick();
                return;
            }
        };
        if self.last_verdict_kind != Some(verdict.kind()) {
            self.last_verdict_kind = Some(verdict.kind());
            self.tick_events.push(MissionEvent::Verdict {
                kind: verdict.kind().to_string(),
                phi: self.phi,
            });
        }
        if let MissionVerdict::Blocked { phi, .. } = verdict {
            self.first_blocked.get_or_insert(BlockedAt { tick, phi });
        }

        self.step_explorer(&notices, &verdict);
        self.verdict = Some(verdict);
        if !self.is_terminal() {
            self.coordinate();
        }
        if !self.is_terminal() {
            self.step_assistants(&notices);
        }
        if !self.is_terminal() {
            self.track_status();
        }
        if !self.is_terminal() {
            let done = matches!(self.verdict, Some(MissionVerdict::Done { .. }));
            if done && self.pending().next().is_none() {
                self.outcome = Outcome::Done;
            } else if self.tick >= self.tick_budget {
                self.abort(
                    AbortReason::TickBudget,
                    format!("tick budget {} exhausted", self.tick_budget),
                );
            }
        }
        self.finish_tick();
    }

    fn profile(&self, id: &str) -> Option<&AgentProfile> {
        self.profiles.iter().find(|p| p.id == id)
    }

    fn share_maps(&mut self) {
        let ids: Vec<String> = self.local.keys().cloned().collect();
        for id in ids {
            let grid = Arc::new(self.local[&id].clone());
            let sent = self.nodes[&id].map_pub.publish(Message::MapShare {
                from: id.clone(),
                tick: self.tick,
                grid,
            });
            if let Err(e) = sent {
                self.bus_failed(e);
                return;
            }
        }
        for env in self.mapper_sub.drain() {
            if let Message::MapShare { from, grid, .. } = env.payload {
                self.shared.insert(from, grid);
            }
        }
        if let Ok(m) = merge_grids(self.shared.values().map(|g| g.as_ref())) {
            self.merged = Arc::new(m);
        }
    }

    fn step_explorer(&mut self, notices: &[(String, WorldEvent)], verdict: &MissionVerdict) {
        let id = self.explorer_id.clone();
        let mut events: Vec<ExplorerEvent> = notices
            .iter()
            .filter(|(a, _)| *a == id)
            .filter_map(|(_, e)| match e {
                WorldEvent::Arrived { .. } => Some(ExplorerEvent::Arrived),
                WorldEvent::PathBlocked { .. } => Some(ExplorerEvent::PathBlocked),
                WorldEvent::TeleopBlocked { .. } => None,
            })
            .collect();
        for env in self.nodes[&id].status.drain() {
            match env.payload {
                Message::ObstacleCleared { request_id, .. }
                    if self.requests.get(&request_id).is_some_and(|r| {
                        r.request.requester == id && r.request.kind == HelpKind::ManipulationNeeded
                    }) =>
                {
                    events.push(ExplorerEvent::ObstacleCleared { request_id })
                }
                Message::AssistFailed { request_id, .. }
                    if self.requests.get(&request_id).is_some_and(|r| {
                        r.request.requester == id && r.request.kind == HelpKind::ManipulationNeeded
                    }) =>
                {
                    events.push(ExplorerEvent::AssistFailed { request_id })
                }
                _ => {}
            }
        }
        if let Some(p) = self.pending_override.take() {
            events.push(ExplorerEvent::OverrideGoal(p));
        }
        events.push(ExplorerEvent::Verdict(verdict.clone()));

        for event in events {
            let ctx = ExplorerContext {
                id: &id,
                tick: self.tick,
                next_request_id: self.next_request_id,
                patience: self.params.clearing_patience,
            };
            let (next, actions) = match explorer_transition(&self.explorer, &event, &ctx) {
                Ok(t) => t,
                Err(e) => {
                    if let ExplorerEvent::OverrideGoal(p) = event {
                        self.tick_events.push(MissionEvent::CommandRejected {
                            command: OperatorCommand::OverrideGoal { point: p },
                            reason: e.to_string(),
                        });
                    } else {
                        self.tick_events.push(MissionEvent::TransitionRejected {
                            agent: id.clone(),
                            error: e.to_string(),
                        });
                    }
                    continue;
                }
            };
            self.explorer = next;
            for action in actions {
                match action {
                    ExplorerAction::Navigate(p) => match self.navigate(&id, p) {
                        Some(false) => {}
                        Some(true) => self.deferred_notices.push((
                            id.clone(),
                            WorldEvent::Arrived {
                                agent: id.clone(),
                                at: explorer_cell(&self.world, &id),
                            },
                        )),
                        None => {
                            self.tick_events.push(MissionEvent::PlanFailed {
                                agent: id.clone(),
                                target: p,
                            });
                            self.deferred_notices.push((
                                id.clone(),
                                WorldEvent::PathBlocked {
                                    agent: id.clone(),
                                    at: explorer_cell(&self.world, &id),
                                },
                            ));
                        }
                    },
                    ExplorerAction::Stop => self.pending_commands.push((id.clone(), AgentCommand::Stop)),
                    ExplorerAction::StopScan => self.tick_events.push(MissionEvent::StopScan { agent: id.clone() }),
                    ExplorerAction::RequestHelp(request) => self.raise_request(request),
                    ExplorerAction::Exhausted => self.abort(
                        AbortReason::Exhausted,
                        format!("no reachable frontier and no accessible region at phi {:.2}", self.phi),
                    ),
                }
                if self.is_terminal() {
                    return;
                }
            }
        }
    }

    fn coordinate(&mut self) {
        for env in self.coordinator_help.drain() {
            if let Message::HelpRequest(r) = env.payload {
                self.unassigned.push_back(r);
            }
        }
        let mut busy: BTreeSet<String> = self
            .assistants
            .iter()
            .filter(|(_, s)| !s.is_idle())
            .map(|(id, _)| id.clone())
            .collect();
        let mut waiting = VecDeque::new();
        while let Some(request) = self.unassigned.pop_front() {
            let roster: Vec<RosterEntry> = self
                .profiles
                .iter()
                .filter(|p| p.role == AgentRole::Assistant)
                .filter_map(|p| {
                    let a = self.world.agent(&p.id)?;
                    Some(RosterEntry {
                        profile: p,
                        position: self.world.spec().cell_center(a.cell),
                        busy: busy.contains(&p.id),
                    })
                })
                .collect();
            match allocate_request(&request, &roster) {
                Allocation::Assign(agent) => {
                    let msg = Message::Assignment {
                        request_id: request.request_id,
                        assignee: agent.clone(),
                        request: request.clone(),
                    };
                    if let Err(e) = self.coordinator_assign.publish(msg) {
                        self.bus_failed(e);
                        return;
                    }
                    busy.insert(agent.clone());
                    if let Some(r) = self.requests.get_mut(&request.request_id) {
                        r.assigned_to = Some(agent.clone());
                    }
                    self.tick_events.push(MissionEvent::Assigned {
                        request_id: request.request_id,
                        agent,
                    });
                }
                Allocation::Defer => {
                    self.tick_events.push(MissionEvent::Deferred {
                        request_id: request.request_id,
                    });
                    waiting.push_back(request);
                }
                Allocation::EscalateToHuman => {
                    self.tick_events.push(MissionEvent::Escalated {
                        request_id: request.request_id,
                    });
                    self.abort(
                        AbortReason::EscalationUnserved,
                        format!("no agent can serve {:?} request {}", request.kind, request.request_id),
                    );
                    return;
                }
            }
        }
        self.unassigned = waiting;
    }

    /// Handle of the removable obstacle nearest `p`, else `p` itself.
    fn scripted_grasp(&self, p: Point2) -> Point2 {
        self.world
            .obstacles()
            .iter()
            .filter(|o| o.removable)
            .filter_map(|o| o.handle)
            .min_by(|a, b| a.distance(&p).total_cmp(&b.distance(&p)))
            .unwrap_or(p)
    }

    fn step_assistants(&mut self, notices: &[(String, WorldEvent)]) {
        let ids: Vec<String> = self.assistants.keys().cloned().collect();
        for id in ids {
            let mut queue: VecDeque<AssistantEvent> = notices
                .iter()
                .filter(|(a, _)| *a == id)
                .filter_map(|(_, e)| match e {
                    WorldEvent::Arrived { .. } => Some(AssistantEvent::Arrived),
                    WorldEvent::PathBlocked { .. } => Some(AssistantEvent::PathBlocked),
                    WorldEvent::TeleopBlocked { .. } => None,
                })
                .collect();
            for env in self.nodes[&id].assignments.drain() {
                if let Message::Assignment { assignee, request, .. } = env.payload {
                    if assignee == id {
                        queue.push_back(AssistantEvent::Assigned(request));
                    }
                }
            }
            if let AssistantState::AwaitingGrasp { request, .. } = &self.assistants[&id] {
                if let Ok(HumanResponse::Grasp(p)) = self.human.respond(request.request_id, self.tick) {
                    queue.push_back(AssistantEvent::Grasp(p));
                }
            }
            while let Some(event) = queue.pop_front() {
                let (next, actions) = match assistant_transition(&id, &self.assistants[&id], &event) {
                    Ok(t) => t,
                    Err(e) => {
                        self.tick_events.push(MissionEvent::TransitionRejected {
                            agent: id.clone(),
                            error: e.to_string(),
                        });
                        continue;
                    }
                };
                self.assistants.insert(id.clone(), next);
                for action in actions {
                    if let Some(e) = self.assistant_action(&id, action) {
                        queue.push_back(e);
                    }
                    if self.is_terminal() {
                        return;
                    }
                }
            }
        }
    }

    /// Carry out one assistant action; immediate feedback comes back as an event.
    fn assistant_action(&mut self, id: &str, action: AssistantAction) -> Option<AssistantEvent> {
        match action {
            AssistantAction::Navigate(p) => match self.navigate(id, p) {
                Some(true) => Some(AssistantEvent::Arrived),
                Some(false) => None,
                None => {
                    self.tick_events.push(MissionEvent::PlanFailed {
                        agent: id.to_string(),
                        target: p,
                    });
                    Some(AssistantEvent::Unreachable)
                }
            },
            AssistantAction::GoHome => {
                let home = self.homes.get(id).copied()?;
                if self.navigate(id, home).is_none() {
                    self.tick_events.push(MissionEvent::PlanFailed {
                        agent: id.to_string(),
                        target: home,
                    });
                }
                None
            }
            AssistantAction::QueryHuman { request_id } => {
                let at = self.requests.get(&request_id)?.request.coordinates;
                let scripted = self.scripted_grasp(at);
                self.human.query(request_id, self.tick, scripted);
                self.tick_events.push(MissionEvent::GraspQueried {
                    request_id,
                    agent: id.to_string(),
                });
                match self.human.respond(request_id, self.tick) {
                    Ok(HumanResponse::Grasp(p)) => Some(AssistantEvent::Grasp(p)),
                    _ => None,
                }
            }
            AssistantAction::Remove { request_id, grasp } => {
                self.tick_events.push(MissionEvent::GraspReceived {
                    request_id,
                    point: grasp,
                });
                if let Some(r) = self.requests.get_mut(&request_id) {
                    r.grasps.push(grasp);
                }
                let here = self.world.pose_of(self.world.agent(id)?).position;
                if here.distance(&grasp) > self.params.reach {
                    let reason = "grasp point out of reach".to_string();
                    self.tick_events.push(MissionEvent::RemovalFailed {
                        request_id,
                        reason: reason.clone(),
                    });
                    return Some(AssistantEvent::RemovalFailed { reason });
                }
                let before = self.world.obstacles().to_vec();
                match self.world.remove_obstacle(grasp, self.params.grasp_tolerance) {
                    Ok(obstacle_id) => {
                        self.counters.removals += 1;
                        if let Some(o) = before.iter().find(|o| o.id == obstacle_id) {
                            for &cell in &o.footprint {
                                if self.merged.state(cell) == CellState::Occupied {
                                    self.stale.push(StaleRecord {
                                        cell,
                                        removed_at: self.tick,
                                        cleared_at: None,
                                        reobservations: 0,
                                    });
                                }
                            }
                        }
                        if let Some(r) = self.requests.get_mut(&request_id) {
                            r.removed_obstacle = Some(obstacle_id.clone());
                        }
                        self.tick_events.push(MissionEvent::ObstacleRemoved {
                            request_id,
                            obstacle_id: obstacle_id.clone(),
                            by: id.to_string(),
                        });
                        Some(AssistantEvent::RemovalSucceeded { obstacle_id })
                    }
                    Err(e) => {
                        self.tick_events.push(MissionEvent::RemovalFailed {
                            request_id,
                            reason: e.to_string(),
                        });
                        Some(AssistantEvent::RemovalFailed { reason: e.to_string() })
                    }
                }
            }
            AssistantAction::CaptureHighRes { request_id } => {
                self.tick_events.push(MissionEvent::HighResCaptured {
                    request_id,
                    by: id.to_string(),
                });
                Some(AssistantEvent::Captured)
            }
            AssistantAction::Publish(msg) => {
                if let Err(e) = self.nodes[id].status_pub.publish(msg) {
                    self.bus_failed(e);
                }
                None
            }
        }
    }

    /// Bookkeeping of help outcomes as seen on the status topic.
    fn track_status(&mut self) {
        for env in self.coordinator_status.drain() {
            let tick = self.tick;
            match env.payload {
                Message::ObstacleCleared { request_id, .. } => {
                    if let Some(r) = self.requests.get_mut(&request_id) {
                        r.resolved_at = Some(tick);
                        r.resolution = Some("cleared".into());
                    }
                    self.tick_events.push(MissionEvent::ObstacleCleared { request_id });
                }
                Message::HighResCaptured { request_id, .. } => {
                    if let Some(r) = self.requests.get_mut(&request_id) {
                        r.resolved_at = Some(tick);
                        r.resolution = Some("captured".into());
                    }
                }
                Message::AssistFailed { request_id, reason, .. } => {
                    if let Some(r) = self.requests.get_mut(&request_id) {
                        r.resolved_at = Some(tick);
                        r.resolution = Some(format!("failed: {reason}"));
                    }
                    self.tick_events.push(MissionEvent::AssistFailed {
                        request_id,
                        reason: reason.clone(),
                    });
                    self.abort(AbortReason::AssistFailed, format!("request {request_id}: {reason}"));
                }
                _ => {}
            }
        }
    }

    fn agent_views(&self) -> Vec<AgentView> {
        let spec = *self.world.spec();
        self.world
            .agents()
            .iter()
            .map(|a| {
                let role = self.profile(&a.id).map_or(AgentRole::Assistant, |p| p.role);
                let state = if a.id == self.explorer_id {
                    self.explorer.name()
                } else {
                    self.assistants.get(&a.id).map_or("Idle", |s| s.name())
                };
                AgentView {
                    id: a.id.clone(),
                    role,
                    cell: a.cell,
                    position: spec.cell_center(a.cell),
                    heading: a.heading,
                    state: state.to_string(),
                    distance: a.distance,
                }
            })
            .collect()
    }

    fn finish_tick(&mut self) {
        if self.is_terminal()
            && !self
                .tick_events
                .iter()
                .any(|e| matches!(e, MissionEvent::Finished { .. }))
        {
            self.tick_events.push(MissionEvent::Finished {
                outcome: self.outcome.clone(),
            });
        }
        let events = std::mem::take(&mut self.tick_events);
        let agents = self.agent_views();
        let verdict = self.verdict.as_ref().map_or("", |v| v.kind()).to_string();

        #[derive(Serialize)]
        struct Line<'a> {
            v: u32,
            tick: u64,
            phi: f64,
            coverage: f64,
            verdict: &'a str,
            outcome: &'a Outcome,
            agents: &'a [AgentView],
            events: &'a [MissionEvent],
        }
        let line = Line {
            v: METRICS_SCHEMA_VERSION,
            tick: self.tick,
            phi: self.phi,
            coverage: self.coverage.coverage(),
            verdict: &verdict,
            outcome: &self.outcome,
            agents: &agents,
            events: &events,
        };
        if let Ok(text) = serde_json::to_string(&line) {
            self.metrics.push(text);
        }
        self.phi_history.push(self.phi);

        let awaiting_grasp = self
            .assistants
            .values()
            .filter_map(|s| match s {
                AssistantState::AwaitingGrasp { request, .. } if self.human.is_pending(request.request_id) => {
                    Some(request.request_id)
                }
                _ => None,
            })
            .collect();
        self.snapshot = MissionSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            scenario: self.name.clone(),
            tick: self.tick,
            threshold: self.threshold,
            phi: self.phi,
            explored_free: self.explored_free,
            gt_free: self.gt_free,
            verdict,
            outcome: self.outcome.clone(),
            started: self.started,
            agents,
            pending_requests: self.pending().map(|r| r.request.clone()).collect(),
            awaiting_grasp,
            frontiers: self.frontier_count,
            scan_coverage: self.coverage.coverage(),
            counters: self.counters.clone(),
            map: Some(self.merged.clone()),
        };
        let tick = self.tick;
        self.event_log.extend(events.into_iter().map(|e| (tick, e)));
    }

    pub fn human_mode(&self) -> HumanMode {
        self.human.mode()
    }

    /// Whether `request_id` names a help request of this mission.
    pub fn knows_request(&self, request_id: u64) -> bool {
        self.requests.contains_key(&request_id)
    }
}

fn agent_of(e: &WorldEvent) -> &str {
    match e {
        WorldEvent::PathBlocked { agent, .. }
        | WorldEvent::Arrived { agent, .. }
        | WorldEvent::TeleopBlocked { agent } => agent,
    }
}

fn explorer_cell(world: &World, id: &str) -> Cell {
    world.agent(id).map_or(Cell::new(0, 0), |a| a.cell)
}

/// Run a scenario to completion.
pub fn run_mission(scenario: &Scenario, seed: Option<u64>) -> Result<Mission, MissionError> {
    let mut m = Mission::new(scenario, seed)?;
    m.run_to_end();
    Ok(m)
}

/// Re-run a mission from its command log; the metrics must match the original.
pub fn replay_mission(
    scenario: &Scenario,
    seed: Option<u64>,
    log: &[(u64, OperatorCommand)],
    paused: bool,
) -> Result<Mission, MissionError> {
    let mut m = Mission::new(scenario, seed)?;
    if paused {
        m.pause_until_start();
    }
    let mut i = 0;
    while !m.is_terminal() {
        while i < log.len() && log[i].0 == m.tick() {
            m.mailbox().push(log[i].1.clone());
            i += 1;
        }
        if !m.step() && !m.is_terminal() && i >= log.len() {
            // paused with no further input
            break;
        }
    }
    Ok(m)
}

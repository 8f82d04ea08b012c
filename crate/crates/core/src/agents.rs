//! Agent behaviour: explorer and assistant state machines, help allocation
//! and the human grasp-point channel.
//!
//! The state machines are pure transition functions. The mission loop feeds
//! them one event at a time and carries out the returned actions (planning,
//! publishing, querying the human, removing obstacles).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explore::MissionVerdict;
use crate::geom::Point2;
use crate::msgbus::{HelpKind, HelpRequest, Message};
use crate::simworld::SensorConfig;

/// Grasp re-queries allowed after a failed removal before giving up.
pub const MAX_GRASP_RETRIES: u32 = 3;
/// Ticks the explorer waits near a cleared access point for frontiers to reopen.
pub const DEFAULT_CLEARING_PATIENCE: u64 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("event {event} is not applicable in state {state}")]
    IllegalTransition { state: String, event: String },
    #[error("unknown help request {0}")]
    UnknownRequest(u64),
    #[error("agent '{id}' lacks required capability {capability:?}")]
    MissingCapability { id: String, capability: Capability },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Explorer,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    Mapper,
    ScannerPayload,
    Manipulator,
    HighResScanner,
    Localizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    pub role: AgentRole,
    pub capabilities: BTreeSet<Capability>,
    pub nav_sensor: SensorConfig,
    pub payload_sensor: Option<SensorConfig>,
    pub speed: usize,
}

impl AgentProfile {
    pub fn has(&self, c: Capability) -> bool {
        self.capabilities.contains(&c)
    }

    /// Explorers must map; assistants must manipulate.
    pub fn validate(&self) -> Result<(), AgentError> {
        let need = match self.role {
            AgentRole::Explorer => Capability::Mapper,
            AgentRole::Assistant => Capability::Manipulator,
        };
        if self.has(need) {
            Ok(())
        } else {
            Err(AgentError::MissingCapability {
                id: self.id.clone(),
                capability: need,
            })
        }
    }
}

// ---------------------------------------------------------------- explorer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ExplorerState {
    Exploring,
    /// `frontier` is `None` for an operator-supplied goal.
    NavigatingToGoal {
        target: Point2,
        frontier: Option<usize>,
    },
    WaitingAssist {
        request_id: u64,
        access: Point2,
    },
    ClearingStale {
        access: Point2,
        since: u64,
    },
    Finished,
}

impl ExplorerState {
    pub fn name(&self) -> &'static str {
        match self {
            ExplorerState::Exploring => "Exploring",
            ExplorerState::NavigatingToGoal { .. } => "NavigatingToGoal",
            ExplorerState::WaitingAssist { .. } => "WaitingAssist",
            ExplorerState::ClearingStale { .. } => "ClearingStale",
            ExplorerState::Finished => "Finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExplorerEvent {
    Verdict(MissionVerdict),
    Arrived,
    PathBlocked,
    ObstacleCleared { request_id: u64 },
    AssistFailed { request_id: u64 },
    OverrideGoal(Point2),
}

impl ExplorerEvent {
    pub fn name(&self) -> String {
        match self {
            ExplorerEvent::Verdict(v) => format!("Verdict({})", v.kind()),
            ExplorerEvent::Arrived => "Arrived".into(),
            ExplorerEvent::PathBlocked => "PathBlocked".into(),
            ExplorerEvent::ObstacleCleared { request_id } => format!("ObstacleCleared({request_id})"),
            ExplorerEvent::AssistFailed { request_id } => format!("AssistFailed({request_id})"),
            ExplorerEvent::OverrideGoal(_) => "OverrideGoal".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExplorerAction {
    Navigate(Point2),
    Stop,
    StopScan,
    RequestHelp(HelpRequest),
    /// Blocked, but no region offers an access point.
    Exhausted,
}

#[derive(Debug, Clone, Copy)]
pub struct ExplorerContext<'a> {
    pub id: &'a str,
    pub tick: u64,
    /// Id to use if this transition raises a help request.
    pub next_request_id: u64,
    pub patience: u64,
}

pub fn explorer_transition(
    state: &ExplorerState,
    event: &ExplorerEvent,
    ctx: &ExplorerContext,
) -> Result<(ExplorerState, Vec<ExplorerAction>), AgentError> {
    use ExplorerEvent as E;
    use ExplorerState as S;
    use MissionVerdict as V;

    let stay = || Ok((state.clone(), Vec::new()));
    let illegal = || {
        Err(AgentError::IllegalTransition {
            state: state.name().into(),
            event: event.name(),
        })
    };

    if let E::Verdict(V::Done { .. }) = event {
        return match state {
            S::Finished => stay(),
            _ => Ok((S::Finished, vec![ExplorerAction::Stop, ExplorerAction::StopScan])),
        };
    }

    match (state, event) {
        (S::Exploring, E::Verdict(V::Continue { goal })) => Ok((
            S::NavigatingToGoal {
                target: goal.point,
                frontier: Some(goal.frontier_id),
            },
            vec![ExplorerAction::Navigate(goal.point)],
        )),
        (S::Exploring, E::Verdict(V::Blocked { regions, .. })) => {
            let target = regions
                .iter()
                .max_by(|a, b| a.cells.len().cmp(&b.cells.len()).then(b.id.cmp(&a.id)));
            match target {
                None => Ok((S::Exploring, vec![ExplorerAction::Exhausted])),
                Some(region) => {
                    let request = HelpRequest {
                        request_id: ctx.next_request_id,
                        requester: ctx.id.to_string(),
                        coordinates: region.access.location,
                        kind: HelpKind::ManipulationNeeded,
                        region_ref: Some(region.id),
                    };
                    Ok((
                        S::WaitingAssist {
                            request_id: request.request_id,
                            access: request.coordinates,
                        },
                        vec![ExplorerAction::RequestHelp(request)],
                    ))
                }
            }
        }
        // motion notices left over from an abandoned target
        (S::Exploring, E::Arrived | E::PathBlocked) => stay(),

        (S::NavigatingToGoal { frontier: None, .. }, E::Verdict(_)) => stay(),
        (S::NavigatingToGoal { target, .. }, E::Verdict(V::Continue { goal })) => {
            if goal.point == *target {
                stay()
            } else {
                Ok((
                    S::NavigatingToGoal {
                        target: goal.point,
                        frontier: Some(goal.frontier_id),
                    },
                    vec![ExplorerAction::Navigate(goal.point)],
                ))
            }
        }
        (S::NavigatingToGoal { .. }, E::Verdict(V::Blocked { .. })) => Ok((S::Exploring, vec![ExplorerAction::Stop])),
        (S::NavigatingToGoal { .. }, E::Arrived | E::PathBlocked) => Ok((S::Exploring, Vec::new())),

        (S::Exploring | S::NavigatingToGoal { .. } | S::ClearingStale { .. }, E::OverrideGoal(p)) => Ok((
            S::NavigatingToGoal {
                target: *p,
                frontier: None,
            },
            vec![ExplorerAction::Navigate(*p)],
        )),

        (S::WaitingAssist { .. }, E::Verdict(_)) => stay(),
        (S::WaitingAssist { request_id, access }, E::ObstacleCleared { request_id: r }) if r == request_id => Ok((
            S::ClearingStale {
                access: *access,
                since: ctx.tick,
            },
            vec![ExplorerAction::Navigate(*access)],
        )),
        (S::WaitingAssist { request_id, .. }, E::AssistFailed { request_id: r }) if r == request_id => {
            Ok((S::Exploring, Vec::new()))
        }

        (S::ClearingStale { .. }, E::Verdict(V::Continue { .. })) => Ok((S::Exploring, Vec::new())),
        (S::ClearingStale { since, .. }, E::Verdict(V::Blocked { .. })) => {
            if ctx.tick.saturating_sub(*since) >= ctx.patience {
                Ok((S::Exploring, vec![ExplorerAction::Stop]))
            } else {
                stay()
            }
        }
        (S::ClearingStale { .. }, E::Arrived) => stay(),
        (S::ClearingStale { access, .. }, E::PathBlocked) => {
            Ok((state.clone(), vec![ExplorerAction::Navigate(*access)]))
        }

        (S::Finished, E::Verdict(_) | E::ObstacleCleared { .. } | E::AssistFailed { .. }) => stay(),

        _ => illegal(),
    }
}

// --------------------------------------------------------------- assistant

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum AssistantState {
    Idle,
    NavigatingToAccess {
        request: HelpRequest,
    },
    AwaitingGrasp {
        request: HelpRequest,
        attempts: u32,
    },
    Removing {
        request: HelpRequest,
        grasp: Point2,
        attempts: u32,
    },
    Reporting {
        request: HelpRequest,
    },
}

impl AssistantState {
    pub fn name(&self) -> &'static str {
        match self {
            AssistantState::Idle => "Idle",
            AssistantState::NavigatingToAccess { .. } => "NavigatingToAccess",
            AssistantState::AwaitingGrasp { .. } => "AwaitingGrasp",
            AssistantState::Removing { .. } => "Removing",
            AssistantState::Reporting { .. } => "Reporting",
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, AssistantState::Idle)
    }

    pub fn request(&self) -> Option<&HelpRequest> {
        match self {
            AssistantState::Idle => None,
            AssistantState::NavigatingToAccess { request }
            | AssistantState::AwaitingGrasp { request, .. }
            | AssistantState::Removing { request, .. }
            | AssistantState::Reporting { request } => Some(request),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssistantEvent {
    Assigned(HelpRequest),
    Arrived,
    PathBlocked,
    /// No path to the access point exists.
    Unreachable,
    Grasp(Point2),
    RemovalSucceeded {
        obstacle_id: String,
    },
    RemovalFailed {
        reason: String,
    },
    Captured,
}

impl AssistantEvent {
    pub fn name(&self) -> &'static str {
        match self {
            AssistantEvent::Assigned(_) => "Assigned",
            AssistantEvent::Arrived => "Arrived",
            AssistantEvent::PathBlocked => "PathBlocked",
            AssistantEvent::Unreachable => "Unreachable",
            AssistantEvent::Grasp(_) => "Grasp",
            AssistantEvent::RemovalSucceeded { .. } => "RemovalSucceeded",
            AssistantEvent::RemovalFailed { .. } => "RemovalFailed",
            AssistantEvent::Captured => "Captured",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AssistantAction {
    Navigate(Point2),
    GoHome,
    QueryHuman { request_id: u64 },
    Remove { request_id: u64, grasp: Point2 },
    CaptureHighRes { request_id: u64 },
    Publish(Message),
}

pub fn assistant_transition(
    id: &str,
    state: &AssistantState,
    event: &AssistantEvent,
) -> Result<(AssistantState, Vec<AssistantAction>), AgentError> {
    use AssistantEvent as E;
    use AssistantState as S;

    let failed = |request: &HelpRequest, reason: &str| {
        AssistantAction::Publish(Message::AssistFailed {
            request_id: request.request_id,
            by: id.to_string(),
            reason: reason.to_string(),
        })
    };

    match (state, event) {
        (S::Idle, E::Assigned(request)) => Ok((
            S::NavigatingToAccess {
                request: request.clone(),
            },
            vec![AssistantAction::Navigate(request.coordinates)],
        )),
        // going home, or stopped there
        (S::Idle, E::Arrived | E::PathBlocked) => Ok((S::Idle, Vec::new())),

        (S::NavigatingToAccess { request }, E::Arrived) => match request.kind {
            HelpKind::ManipulationNeeded => Ok((
                S::AwaitingGrasp {
                    request: request.clone(),
                    attempts: 0,
                },
                vec![AssistantAction::QueryHuman {
                    request_id: request.request_id,
                }],
            )),
            HelpKind::HighResScan | HelpKind::LocalizationSupport => Ok((
                S::Reporting {
                    request: request.clone(),
                },
                vec![AssistantAction::CaptureHighRes {
                    request_id: request.request_id,
                }],
            )),
        },
        (S::NavigatingToAccess { request }, E::PathBlocked) => {
            Ok((state.clone(), vec![AssistantAction::Navigate(request.coordinates)]))
        }
        (S::NavigatingToAccess { request }, E::Unreachable) => {
            Ok((S::Idle, vec![failed(request, "access point unreachable")]))
        }

        (S::AwaitingGrasp { request, attempts }, E::Grasp(p)) => Ok((
            S::Removing {
                request: request.clone(),
                grasp: *p,
                attempts: *attempts,
            },
            vec![AssistantAction::Remove {
                request_id: request.request_id,
                grasp: *p,
            }],
        )),

        (S::Removing { request, .. }, E::RemovalSucceeded { obstacle_id }) => Ok((
            S::Idle,
            vec![
                AssistantAction::Publish(Message::ObstacleCleared {
                    request_id: request.request_id,
                    by: id.to_string(),
                    obstacle_id: obstacle_id.clone(),
                    location: request.coordinates,
                }),
                AssistantAction::GoHome,
            ],
        )),
        (S::Removing { request, attempts, .. }, E::RemovalFailed { .. }) => {
            let attempts = attempts + 1;
            if attempts > MAX_GRASP_RETRIES {
                Ok((S::Idle, vec![failed(request, "grasp retries exhausted")]))
            } else {
                Ok((
                    S::AwaitingGrasp {
                        request: request.clone(),
                        attempts,
                    },
                    vec![AssistantAction::QueryHuman {
                        request_id: request.request_id,
                    }],
                ))
            }
        }

        (S::Reporting { request }, E::Captured) => Ok((
            S::Idle,
            vec![
                AssistantAction::Publish(Message::HighResCaptured {
                    request_id: request.request_id,
                    by: id.to_string(),
                    location: request.coordinates,
                }),
                AssistantAction::GoHome,
            ],
        )),

        _ => Err(AgentError::IllegalTransition {
            state: state.name().into(),
            event: event.name().into(),
        }),
    }
}

// -------------------------------------------------------------- allocation

pub fn required_capability(kind: HelpKind) -> Capability {
    match kind {
        HelpKind::ManipulationNeeded => Capability::Manipulator,
        HelpKind::HighResScan => Capability::HighResScanner,
        HelpKind::LocalizationSupport => Capability::Localizer,
    }
}

#[derive(Debug, Clone)]
pub struct RosterEntry<'a> {
    pub profile: &'a AgentProfile,
    pub position: Point2,
    pub busy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Allocation {
    Assign(String),
    /// Capable agents exist but all are busy.
    Defer,
    EscalateToHuman,
}

/// Nearest capable idle agent other than the requester; ties by lower id.
pub fn allocate_request(request: &HelpRequest, roster: &[RosterEntry]) -> Allocation {
    let need = required_capability(request.kind);
    let capable: Vec<&RosterEntry> = roster
        .iter()
        .filter(|e| e.profile.id != request.requester && e.profile.has(need))
        .collect();
    if capable.is_empty() {
        return Allocation::EscalateToHuman;
    }
    capable
        .iter()
        .filter(|e| !e.busy)
        .min_by(|a, b| {
            let da = a.position.distance(&request.coordinates);
            let db = b.position.distance(&request.coordinates);
            da.total_cmp(&db).then_with(|| a.profile.id.cmp(&b.profile.id))
        })
        .map_or(Allocation::Defer, |e| Allocation::Assign(e.profile.id.clone()))
}

// ------------------------------------------------------------------- human

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HumanMode {
    Scripted {
        delay: u64,
    },
    Interactive,
    /// Nobody answers.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HumanResponse {
    Pending,
    Grasp(Point2),
}

#[derive(Debug, Clone, PartialEq)]
struct PendingQuery {
    queried_at: u64,
    scripted: Point2,
    answer: Option<Point2>,
}

/// Grasp-point queries to the remote operator.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanChannel {
    mode: HumanMode,
    pending: BTreeMap<u64, PendingQuery>,
}

impl HumanChannel {
    pub fn new(mode: HumanMode) -> Self {
        Self {
            mode,
            pending: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> HumanMode {
        self.mode
    }

    /// Open (or reopen) a query. `scripted` is what a scripted operator answers.
    pub fn query(&mut self, request_id: u64, tick: u64, scripted: Point2) {
        self.pending.insert(
            request_id,
            PendingQuery {
                queried_at: tick,
                scripted,
                answer: None,
            },
        );
    }

    pub fn is_pending(&self, request_id: u64) -> bool {
        self.pending.contains_key(&request_id)
    }

    pub fn pending_ids(&self) -> Vec<u64> {
        self.pending.keys().copied().collect()
    }

    /// Operator input for an open query.
    pub fn deposit(&mut self, request_id: u64, point: Point2) -> Result<(), AgentError> {
        let q = self
            .pending
            .get_mut(&request_id)
            .ok_or(AgentError::UnknownRequest(request_id))?;
        q.answer = Some(point);
        Ok(())
    }

    /// Answer for a query at `tick`; an answered query is closed.
    pub fn respond(&mut self, request_id: u64, tick: u64) -> Result<HumanResponse, AgentError> {
        let q = self
            .pending
            .get(&request_id)
            .ok_or(AgentError::UnknownRequest(request_id))?;
        let answer = match (q.answer, self.mode) {
            (Some(p), _) => Some(p),
            (None, HumanMode::Scripted { delay }) if tick >= q.queried_at + delay => Some(q.scripted),
            _ => None,
        };
        Ok(match answer {
            Some(p) => {
                self.pending.remove(&request_id);
                HumanResponse::Grasp(p)
            }
            None => HumanResponse::Pending,
        })
    }
}

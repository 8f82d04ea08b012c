//! In-process publish/subscribe network with a central master.
//!
//! Nodes register with the master, then advertise or subscribe to topics.
//! Every operation, including each publish, first checks that the master is
//! alive: once it is killed nothing is delivered anywhere.
//!
//! Delivery is exactly-once into a private FIFO queue per subscription, in
//! publish order. Messages published before a subscription exists are not
//! replayed to it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point2;
use crate::gridmap::OccupancyGrid;

pub const TOPIC_HELP_REQUESTS: &str = "/help_requests";
pub const TOPIC_ASSIGNMENTS: &str = "/assignments";
pub const TOPIC_HELP_STATUS: &str = "/help_status";
pub const TOPIC_MAP_SHARE: &str = "/map_share";

/// Layout version carried by every envelope.
pub const MESSAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("master node unavailable")]
    MasterUnavailable,
    #[error("node '{0}' already registered")]
    DuplicateNode(String),
    #[error("node '{0}' is not registered")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HelpKind {
    ManipulationNeeded,
    HighResScan,
    LocalizationSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpRequest {
    pub request_id: u64,
    pub requester: String,
    pub coordinates: Point2,
    pub kind: HelpKind,
    pub region_ref: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    HelpRequest(HelpRequest),
    Assignment {
        request_id: u64,
        assignee: String,
        request: HelpRequest,
    },
    ObstacleCleared {
        request_id: u64,
        by: String,
        obstacle_id: String,
        location: Point2,
    },
    AssistFailed {
        request_id: u64,
        by: String,
        reason: String,
    },
    HighResCaptured {
        request_id: u64,
        by: String,
        location: Point2,
    },
    MapShare {
        from: String,
        tick: u64,
        grid: Arc<OccupancyGrid>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub topic: String,
    pub publisher: String,
    pub seq: u64,
    pub payload: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub seq: u64,
    pub delivered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Publisher,
    Subscriber,
}

type Queue = Arc<Mutex<VecDeque<Envelope>>>;

#[derive(Default)]
struct TopicEntry {
    publishers: BTreeSet<String>,
    subscribers: Vec<(String, Queue)>,
    seq: BTreeMap<String, u64>,
}

struct Registry {
    alive: bool,
    nodes: BTreeSet<String>,
    topics: BTreeMap<String, TopicEntry>,
}

/// Handle to the master. Clones share the same network.
#[derive(Clone)]
pub struct MasterRegistry {
    inner: Arc<Mutex<Registry>>,
}

impl Default for MasterRegistry {
    fn default() -> Self {
        Self::new()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl MasterRegistry {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Mutex::new(Registry {
                alive: true,
                nodes: BTreeSet::new(),
                topics: BTreeMap::new(),
            })),
        }
    }

    fn live(&self) -> Result<MutexGuard<'_, Registry>, BusError> {
        let reg = lock(&self.inner);
        if reg.alive {
            Ok(reg)
        } else {
            Err(BusError::MasterUnavailable)
        }
    }

    pub fn register_node(&self, name: &str) -> Result<(), BusError> {
        let mut reg = self.live()?;
        if !reg.nodes.insert(name.to_string()) {
            return Err(BusError::DuplicateNode(name.to_string()));
        }
        Ok(())
    }

    pub fn is_alive(&self) -> bool {
        lock(&self.inner).alive
    }

    /// Idempotent.
    pub fn kill_master(&self) {
        lock(&self.inner).alive = false;
    }

    pub fn nodes(&self) -> Vec<String> {
        lock(&self.inner).nodes.iter().cloned().collect()
    }

    /// Publishers and subscriber nodes of a topic, if it exists.
    pub fn topic_info(&self, topic: &str) -> Option<(Vec<String>, Vec<String>)> {
        let reg = lock(&self.inner);
        reg.topics.get(topic).map(|t| {
            (
                t.publishers.iter().cloned().collect(),
                t.subscribers.iter().map(|(n, _)| n.clone()).collect(),
            )
        })
    }

    pub fn open_topic(&self, node: &str, topic: &str, role: Role) -> Result<TopicHandle, BusError> {
        Ok(match role {
            Role::Publisher => TopicHandle::Publisher(self.advertise(node, topic)?),
            Role::Subscriber => TopicHandle::Subscriber(self.subscribe(node, topic)?),
        })
    }

    pub fn advertise(&self, node: &str, topic: &str) -> Result<Publisher, BusError> {
        let mut reg = self.live()?;
        if !reg.nodes.contains(node) {
            return Err(BusError::UnknownNode(node.to_string()));
        }
        reg.topics
            .entry(topic.to_string())
            .or_default()
            .publishers
            .insert(node.to_string());
        Ok(Publisher {
            master: self.clone(),
            node: node.to_string(),
            topic: topic.to_string(),
        })
    }

    pub fn subscribe(&self, node: &str, topic: &str) -> Result<Subscriber, BusError> {
        let mut reg = self.live()?;
        if !reg.nodes.contains(node) {
            return Err(BusError::UnknownNode(node.to_string()));
        }
        let queue: Queue = Arc::default();
        reg.topics
            .entry(topic.to_string())
            .or_default()
            .subscribers
            .push((node.to_string(), queue.clone()));
        Ok(Subscriber {
            node: node.to_string(),
            topic: topic.to_string(),
            queue,
        })
    }

    fn publish(&self, node: &str, topic: &str, payload: Message) -> Result<Receipt, BusError> {
        let mut reg = self.live()?;
        let entry = reg
            .topics
            .get_mut(topic)
            .ok_or(BusError::UnknownNode(node.to_string()))?;
        if !entry.publishers.contains(node) {
            return Err(BusError::UnknownNode(node.to_string()));
        }
        let seq = entry.seq.entry(node.to_string()).or_insert(0);
        *seq += 1;
        let env = Envelope {
            schema_version: MESSAGE_SCHEMA_VERSION,
            topic: topic.to_string(),
            publisher: node.to_string(),
            seq: *seq,
            payload,
        };
        // delivery happens under the registry lock, so concurrent publishers
        // are serialised and per-publisher order is preserved
        for (_, q) in &entry.subscribers {
            lock(q).push_back(env.clone());
        }
        Ok(Receipt {
            seq: env.seq,
            delivered: entry.subscribers.len(),
        })
    }
}

pub enum TopicHandle {
    Publisher(Publisher),
    Subscriber(Subscriber),
}

#[derive(Clone)]
pub struct Publisher {
    master: MasterRegistry,
    node: String,
    topic: String,
}

impl Publisher {
    pub fn publish(&self, payload: Message) -> Result<Receipt, BusError> {
        self.master.publish(&self.node, &self.topic, payload)
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }
}

/// Private FIFO queue of one subscription.
pub struct Subscriber {
    node: String,
    topic: String,
    queue: Queue,
}

impl Subscriber {
    pub fn try_recv(&self) -> Option<Envelope> {
        lock(&self.queue).pop_front()
    }

    pub fn drain(&self) -> Vec<Envelope> {
        lock(&self.queue).drain(..).collect()
    }

    pub fn len(&self) -> usize {
        lock(&self.queue).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }
}

//! Multi-robot exploration simulator with a ground-truth stopping criterion.
//!
//! The explorer maps a building until the share of the ground-truth floor
//! area it has classified as free crosses a threshold. When it runs out of
//! reachable frontiers first, it asks the network for help; an assistant with
//! a manipulator clears the blocking obstacle (with a human picking the grasp
//! point) and exploration resumes.
//!
//! Module map:
//! - [`gridmap`]: log-odds occupancy grid, merging, explored-area ratio
//! - [`floorplan`]: mesh slicing, rasterisation, ground-truth flood fill
//! - [`explore`]: frontiers, goal selection, verdicts, blocked regions
//! - [`simworld`]: true world, ray casting, costmaps, planning, kinematics
//! - [`msgbus`]: master-coordinated publish/subscribe network
//! - [`agents`]: explorer and assistant state machines, allocation, human channel
//! - [`mission`]: the tick loop, coverage, snapshots and results
//! - [`scenario`]: scenario documents and validation

pub mod agents;
pub mod explore;
pub mod floorplan;
pub mod geom;
pub mod gridmap;
pub mod mission;
pub mod msgbus;
pub mod scenario;
pub mod simworld;

pub use geom::{Cell, GridSpec, Point2, Pose2};

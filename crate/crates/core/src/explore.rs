//! Frontier exploration and the area-ratio stopping rule.
//!
//! Each tick the merged map is compared with the ground truth. Exploration is
//! done once the explored share reaches the threshold, even if frontiers are
//! left. Below the threshold the explorer heads for the cheapest reachable
//! frontier; with no reachable frontier left the remaining ground-truth space
//! is reported as blocked regions, each with an access point.

use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floorplan::GroundTruthMap;
use crate::geom::{Cell, GridSpec, Point2, NEIGHBORS8};
use crate::gridmap::{compute_phi, CellState, GridError, OccupancyGrid};
use crate::simworld::{cost_field, Costmap};

pub const DEFAULT_MIN_FRONTIER_SIZE: usize = 3;
pub const DEFAULT_MIN_REGION_SIZE: usize = 4;
/// Dilation (cells, Chebyshev) used to relate openings to regions.
pub const ACCESS_DILATION: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ExploreError {
    #[error("blocked region has no ground-truth connection to explored space")]
    NoAccessExists,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub id: usize,
    pub cells: Vec<Cell>,
    pub centroid: Point2,
    pub size: usize,
}

/// Free cell with at least one Unknown 8-neighbour.
pub fn is_frontier_cell(states: &[CellState], spec: &GridSpec, cell: Cell) -> bool {
    states[spec.index(cell)] == CellState::Free
        && spec
            .neighbors8(cell)
            .any(|n| states[spec.index(n)] == CellState::Unknown)
}

/// 8-connected clusters of `member` cells in row-major discovery order.
fn clusters(spec: &GridSpec, member: &[bool]) -> Vec<Vec<Cell>> {
    let mut seen = vec![false; spec.len()];
    let mut out = Vec::new();
    for start in 0..spec.len() {
        if !member[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut cells = Vec::new();
        while let Some(i) = queue.pop_front() {
            let c = spec.cell_of_index(i);
            cells.push(c);
            for n in spec.neighbors8(c) {
                let j = spec.index(n);
                if member[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        cells.sort_by_key(|c| spec.index(*c));
        out.push(cells);
    }
    out
}

pub fn detect_frontiers(grid: &OccupancyGrid, min_frontier_size: usize) -> Vec<Frontier> {
    let spec = *grid.spec();
    let states = grid.states();
    let member: Vec<bool> = (0..spec.len())
        .map(|i| is_frontier_cell(&states, &spec, spec.cell_of_index(i)))
        .collect();
    clusters(&spec, &member)
        .into_iter()
        .filter(|c| c.len() >= min_frontier_size.max(1))
        .enumerate()
        .map(|(id, cells)| {
            let n = cells.len() as f64;
            let (sx, sy) = cells.iter().fold((0.0, 0.0), |(sx, sy), c| {
                let p = spec.cell_center(*c);
                (sx + p.x, sy + p.y)
            });
            let mean = Point2::new(sx / n, sy / n);
            let mean_is_free = spec
                .world_to_cell(mean)
                .is_some_and(|c| states[spec.index(c)] == CellState::Free);
            let centroid = if mean_is_free {
                mean
            } else {
                let nearest = cells
                    .iter()
                    .min_by(|a, b| {
                        let da = spec.cell_center(**a).distance(&mean);
                        let db = spec.cell_center(**b).distance(&mean);
                        da.total_cmp(&db)
                    })
                    .copied()
                    .unwrap_or(cells[0]);
                spec.cell_center(nearest)
            };
            Frontier {
                id,
                size: cells.len(),
                cells,
                centroid,
            }
        })
        .collect()
}

/// Chosen exploration target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub frontier_id: usize,
    pub point: Point2,
    pub cell: Cell,
    pub cost: f64,
    pub size: usize,
}

/// Pluggable frontier scoring.
pub trait GoalStrategy {
    fn select(&self, frontiers: &[Frontier], pose: Point2, costmap: &Costmap) -> Option<Goal>;
}

/// Cheapest planned path cost; ties by larger frontier, then lower id.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestFrontier;

impl GoalStrategy for NearestFrontier {
    fn select(&self, frontiers: &[Frontier], pose: Point2, costmap: &Costmap) -> Option<Goal> {
        let spec = costmap.spec();
        let start = spec.world_to_cell(pose)?;
        let field = cost_field(costmap, start).ok()?;
        frontiers
            .iter()
            .filter_map(|f| {
                let cell = spec.world_to_cell(f.centroid)?;
                let cost = field.cost(cell);
                cost.is_finite().then_some(Goal {
                    frontier_id: f.id,
                    point: f.centroid,
                    cell,
                    cost,
                    size: f.size,
                })
            })
            .min_by(|a, b| {
                a.cost
                    .total_cmp(&b.cost)
                    .then(b.size.cmp(&a.size))
                    .then(a.frontier_id.cmp(&b.frontier_id))
            })
    }
}

pub fn select_goal(frontiers: &[Frontier], pose: Point2, costmap: &Costmap) -> Option<Goal> {
    NearestFrontier.select(frontiers, pose, costmap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "via", rename_all = "snake_case")]
pub enum AccessVia {
    Opening { id: String },
    BoundaryCell { cell: Cell },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub location: Point2,
    #[serde(flatten)]
    pub via: AccessVia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedRegion {
    pub id: usize,
    pub cells: Vec<Cell>,
    pub access: AccessPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MissionVerdict {
    Continue { goal: Goal },
    Done { phi: f64 },
    Blocked { phi: f64, regions: Vec<BlockedRegion> },
}

impl MissionVerdict {
    pub fn kind(&self) -> &'static str {
        match self {
            MissionVerdict::Continue { .. } => "Continue",
            MissionVerdict::Done { .. } => "Done",
            MissionVerdict::Blocked { .. } => "Blocked",
        }
    }
}

/// Done at or above the threshold; otherwise continue towards the goal, or
/// report the blocked regions when there is none.
pub fn evaluate(
    grid: &OccupancyGrid,
    gt: &GroundTruthMap,
    threshold: f64,
    frontier_goal: Option<Goal>,
    min_region_size: usize,
) -> Result<MissionVerdict, GridError> {
    let report = compute_phi(grid, gt)?;
    if report.phi >= threshold {
        return Ok(MissionVerdict::Done { phi: report.phi });
    }
    Ok(match frontier_goal {
        Some(goal) => MissionVerdict::Continue { goal },
        None => MissionVerdict::Blocked {
            phi: report.phi,
            regions: identify_blocked_regions(grid, gt, min_region_size),
        },
    })
}

/// Ground-truth free space the map does not (yet) classify as free, clustered.
/// Regions without any ground-truth connection to explored space are dropped.
pub fn identify_blocked_regions(
    grid: &OccupancyGrid,
    gt: &GroundTruthMap,
    min_region_size: usize,
) -> Vec<BlockedRegion> {
    let spec = *gt.spec();
    if !grid.spec().same_as(&spec) {
        return Vec::new();
    }
    let member: Vec<bool> = (0..spec.len())
        .map(|i| {
            let c = spec.cell_of_index(i);
            gt.is_free(c) && grid.state_at(i) != CellState::Free
        })
        .collect();
    clusters(&spec, &member)
        .into_iter()
        .filter(|c| c.len() >= min_region_size.max(1))
        .filter_map(|cells| find_access_point(&cells, gt, grid).ok().map(|access| (cells, access)))
        .enumerate()
        .map(|(id, (cells, access))| BlockedRegion { id, cells, access })
        .collect()
}

/// Where the explored space meets a blocked region.
///
/// Prefers an annotated opening within the dilation of both the region and
/// explored space (the one nearest the region); otherwise the region cell with
/// the shortest ground-truth path from explored space.
pub fn find_access_point(
    region: &[Cell],
    gt: &GroundTruthMap,
    grid: &OccupancyGrid,
) -> Result<AccessPoint, ExploreError> {
    let spec = *gt.spec();
    let explored: Vec<bool> = (0..spec.len()).map(|i| grid.state_at(i) == CellState::Free).collect();
    let mut in_region = vec![false; spec.len()];
    for c in region {
        in_region[spec.index(*c)] = true;
    }
    let near = |cell: Cell, mask: &[bool]| {
        let k = ACCESS_DILATION as i64;
        (-k..=k).any(|dr| {
            (-k..=k).any(|dc| {
                let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
                spec.contains(c, r) && mask[spec.index(Cell::new(c as usize, r as usize))]
            })
        })
    };
    let opening = gt
        .openings()
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let cell = spec.world_to_cell(o.center)?;
            if !(near(cell, &in_region) && near(cell, &explored)) {
                return None;
            }
            let d = region
                .iter()
                .map(|c| spec.cell_center(*c).distance(&o.center))
                .fold(f64::INFINITY, f64::min);
            Some((d, i))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if let Some((_, i)) = opening {
        let o = &gt.openings()[i];
        return Ok(AccessPoint {
            location: o.center,
            via: AccessVia::Opening { id: o.id.clone() },
        });
    }

    // multi-source Dijkstra through ground-truth free cells
    let mut dist = vec![f64::INFINITY; spec.len()];
    let mut heap = BinaryHeap::new();
    for i in 0..spec.len() {
        if explored[i] {
            dist[i] = 0.0;
            heap.push(HeapItem { d: 0.0, idx: i });
        }
    }
    while let Some(HeapItem { d, idx }) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        if in_region[idx] {
            // first settled region cell: minimal distance, then lowest index
            let cell = spec.cell_of_index(idx);
            return Ok(AccessPoint {
                location: spec.cell_center(cell),
                via: AccessVia::BoundaryCell { cell },
            });
        }
        let cell = spec.cell_of_index(idx);
        for &(dc, dr) in &NEIGHBORS8 {
            let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
            if !spec.contains(c, r) {
                continue;
            }
            let n = Cell::new(c as usize, r as usize);
            if !gt.is_free(n) {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal && (!gt.is_free(Cell::new(n.col, cell.row)) || !gt.is_free(Cell::new(cell.col, n.row))) {
                continue;
            }
            let nd = d + if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let j = spec.index(n);
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(HeapItem { d: nd, idx: j });
            }
        }
    }
    Err(ExploreError::NoAccessExists)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    d: f64,
    idx: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{attach_openings, flood_free, Actuation, HingeSide, OccupiedMask, Opening, OpeningKind};
    use crate::gridmap::L_MAX;
    use crate::simworld::{build_costmap, LETHAL};

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 1.0, Point2::new(0.0, 0.0))
    }

    #[test]
    fn frontier_edge_cases() {
        let g = OccupancyGrid::new(spec(6, 6)).unwrap();
        assert!(detect_frontiers(&g, 1).is_empty());

        let mut one = g.clone();
        one.set_value(Cell::new(2, 3), -1.0);
        let f = detect_frontiers(&one, 1);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].size, 1);
        assert_eq!(f[0].cells, vec![Cell::new(2, 3)]);
        assert_eq!(f[0].centroid, Point2::new(2.5, 3.5));

        let free = OccupancyGrid::from_logodds(*g.spec(), *g.params(), vec![-2.0; 36]).unwrap();
        assert!(detect_frontiers(&free, 1).is_empty());
    }

    #[test]
    fn small_frontiers_are_dropped_and_ids_dense() {
        let mut g = OccupancyGrid::new(spec(10, 3)).unwrap();
        g.set_value(Cell::new(0, 1), -1.0);
        for c in 4..8 {
            g.set_value(Cell::new(c, 1), -1.0);
        }
        let f = detect_frontiers(&g, 3);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].id, 0);
        assert_eq!(f[0].size, 4);
    }

    #[test]
    fn centroid_snaps_onto_free_member() {
        // ring-shaped frontier: mean lands on the unknown centre
        let mut g = OccupancyGrid::new(spec(5, 5)).unwrap();
        for c in 1..4 {
            for r in 1..4 {
                if (c, r) != (2, 2) {
                    g.set_value(Cell::new(c, r), -1.0);
                }
            }
        }
        let f = detect_frontiers(&g, 1);
        assert_eq!(f.len(), 1);
        let cell = g.spec().world_to_cell(f[0].centroid).unwrap();
        assert_eq!(g.state(cell), CellState::Free);
        assert!(f[0].cells.contains(&cell));
    }

    fn zero_costmap(w: usize, h: usize, lethal: &[Cell]) -> Costmap {
        let s = spec(w, h);
        let mut costs = vec![0.0; s.len()];
        for c in lethal {
            costs[s.index(*c)] = LETHAL;
        }
        Costmap::from_costs(s, costs, 0.0)
    }

    fn frontier(id: usize, at: Cell, size: usize) -> Frontier {
        Frontier {
            id,
            cells: vec![at],
            centroid: Point2::new(at.col as f64 + 0.5, at.row as f64 + 0.5),
            size,
        }
    }

    #[test]
    fn picks_cheapest_then_largest() {
        let cm = zero_costmap(12, 1, &[]);
        let pose = Point2::new(0.5, 0.5);
        let fs = [frontier(0, Cell::new(7, 0), 2), frontier(1, Cell::new(3, 0), 2)];
        let g = select_goal(&fs, pose, &cm).unwrap();
        assert_eq!((g.frontier_id, g.cost), (1, 3.0));

        let pose = Point2::new(5.5, 0.5);
        let tie = [frontier(0, Cell::new(2, 0), 5), frontier(1, Cell::new(8, 0), 9)];
        assert_eq!(select_goal(&tie, pose, &cm).unwrap().frontier_id, 1);
        let same = [frontier(0, Cell::new(2, 0), 9), frontier(1, Cell::new(8, 0), 9)];
        assert_eq!(select_goal(&same, pose, &cm).unwrap().frontier_id, 0);
    }

    #[test]
    fn unreachable_frontiers_give_no_goal() {
        let cm = zero_costmap(9, 1, &[Cell::new(4, 0)]);
        let fs = [frontier(0, Cell::new(7, 0), 4)];
        assert!(select_goal(&fs, Point2::new(0.5, 0.5), &cm).is_none());
        assert!(select_goal(&[], Point2::new(0.5, 0.5), &cm).is_none());
    }

    fn two_room_gt() -> GroundTruthMap {
        let rows = [
            "###########",
            "#....#....#",
            "#....#....#",
            "#.........#",
            "#....#....#",
            "#....#....#",
            "###########",
        ];
        let mask = OccupiedMask::from_rows(&rows, 1.0, Point2::new(0.0, 0.0)).unwrap();
        flood_free(&mask, Point2::new(1.5, 1.5)).unwrap()
    }

    /// Map where room A (cols 1..=4) is explored free and the walls are known.
    fn room_a_explored(gt: &GroundTruthMap) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(*gt.spec()).unwrap();
        for r in 0..7 {
            for c in 0..11 {
                let cell = Cell::new(c, r);
                if c <= 4 && gt.is_free(cell) {
                    g.set_value(cell, -2.0);
                } else if c <= 5 && !gt.is_free(cell) {
                    g.set_value(cell, L_MAX);
                }
            }
        }
        g
    }

    #[test]
    fn verdicts() {
        let gt = two_room_gt();
        let g = room_a_explored(&gt);
        let phi = compute_phi(&g, &gt).unwrap().phi;
        assert!(phi < 60.0);
        let goal = Goal {
            frontier_id: 0,
            point: Point2::new(1.5, 1.5),
            cell: Cell::new(1, 1),
            cost: 1.0,
            size: 3,
        };
        assert!(matches!(
            evaluate(&g, &gt, phi, Some(goal), 4),
            Ok(MissionVerdict::Done { .. })
        ));
        assert!(matches!(
            evaluate(&g, &gt, 95.0, Some(goal), 4),
            Ok(MissionVerdict::Continue { .. })
        ));
        match evaluate(&g, &gt, 95.0, None, 4).unwrap() {
            MissionVerdict::Blocked { regions, .. } => assert_eq!(regions.len(), 1),
            v => panic!("{v:?}"),
        }
        let other = OccupancyGrid::new(spec(3, 3)).unwrap();
        assert_eq!(evaluate(&other, &gt, 95.0, None, 4), Err(GridError::GridMismatch));
    }

    #[test]
    fn blocked_region_is_room_b_with_gap_access() {
        let gt = two_room_gt();
        let g = room_a_explored(&gt);
        let regions = identify_blocked_regions(&g, &gt, 4);
        assert_eq!(regions.len(), 1);
        // room B (4 x 5) plus the gap cell
        assert_eq!(regions[0].cells.len(), 21);
        assert!(regions[0].cells.contains(&Cell::new(5, 3)));
        assert_eq!(
            regions[0].access,
            AccessPoint {
                location: Point2::new(5.5, 3.5),
                via: AccessVia::BoundaryCell { cell: Cell::new(5, 3) }
            }
        );
    }

    #[test]
    fn door_annotation_wins_when_close() {
        let gt = attach_openings(
            two_room_gt(),
            vec![Opening {
                id: "D1".into(),
                center: Point2::new(5.5, 3.5),
                kind: OpeningKind::Door,
                hinge_side: HingeSide::Right,
                actuation: Actuation::Pull,
            }],
        )
        .unwrap();
        let g = room_a_explored(&gt);
        let r = identify_blocked_regions(&g, &gt, 4);
        assert_eq!(r[0].access.via, AccessVia::Opening { id: "D1".into() });
        assert_eq!(r[0].access.location, Point2::new(5.5, 3.5));
    }

    #[test]
    fn far_opening_falls_back_to_boundary() {
        // wide map: the annotated opening sits 10 cells from the region
        let mut rows: Vec<String> = vec!["#".repeat(24)];
        for r in 0..5 {
            let mut line = String::from("#");
            for c in 1..23 {
                line.push(if c == 17 && r != 2 { '#' } else { '.' });
            }
            line.push('#');
            rows.push(line);
        }
        rows.push("#".repeat(24));
        let mask = OccupiedMask::from_rows(&rows, 1.0, Point2::new(0.0, 0.0)).unwrap();
        let gt = attach_openings(
            flood_free(&mask, Point2::new(1.5, 1.5)).unwrap(),
            vec![Opening {
                id: "far".into(),
                center: Point2::new(1.5, 1.5),
                kind: OpeningKind::Passage,
                hinge_side: HingeSide::None,
                actuation: Actuation::None,
            }],
        )
        .unwrap();
        let mut g = OccupancyGrid::new(*gt.spec()).unwrap();
        for r in 0..7 {
            for c in 0..17 {
                let cell = Cell::new(c, r);
                if gt.is_free(cell) {
                    g.set_value(cell, -2.0);
                }
            }
        }
        let regions = identify_blocked_regions(&g, &gt, 4);
        assert_eq!(regions.len(), 1);
        assert_eq!(
            regions[0].access.via,
            AccessVia::BoundaryCell { cell: Cell::new(17, 3) }
        );
    }

    #[test]
    fn small_residue_and_full_coverage() {
        let gt = two_room_gt();
        let mut g = OccupancyGrid::new(*gt.spec()).unwrap();
        for i in 0..gt.spec().len() {
            let c = gt.spec().cell_of_index(i);
            if gt.is_free(c) {
                g.set_value(c, -2.0);
            }
        }
        assert!(identify_blocked_regions(&g, &gt, 4).is_empty());
        g.set_value(Cell::new(9, 1), 0.0);
        g.set_value(Cell::new(9, 2), 0.0);
        assert!(identify_blocked_regions(&g, &gt, 4).is_empty());
        assert_eq!(identify_blocked_regions(&g, &gt, 2).len(), 1);
    }

    #[test]
    fn no_access_when_nothing_explored() {
        let gt = two_room_gt();
        let g = OccupancyGrid::new(*gt.spec()).unwrap();
        let cells: Vec<Cell> = (0..gt.spec().len())
            .map(|i| gt.spec().cell_of_index(i))
            .filter(|c| gt.is_free(*c))
            .collect();
        assert_eq!(find_access_point(&cells, &gt, &g), Err(ExploreError::NoAccessExists));
    }

    #[test]
    fn goal_through_costmap_from_grid() {
        let gt = two_room_gt();
        let g = room_a_explored(&gt);
        let cm = build_costmap(&g, 0.0);
        let fs = detect_frontiers(&g, 1);
        // the gap column is unknown, so room A cells next to it are frontiers
        assert!(!fs.is_empty());
        assert!(select_goal(&fs, Point2::new(1.5, 1.5), &cm).is_some());
    }
}

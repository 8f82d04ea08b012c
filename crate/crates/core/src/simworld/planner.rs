//! 8-connected least-cost planning over a [`Costmap`].
//!
//! Entering a cell costs the step length (1 or sqrt 2, in cells) plus the
//! cell's cost. Diagonal moves are not allowed past a lethal orthogonal
//! neighbour, so paths never cut wall corners.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::costmap::Costmap;
use crate::geom::{Cell, GridSpec, Point2, NEIGHBORS8};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no path")]
    NoPath,
    #[error("start cell is lethal")]
    StartLethal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    f: f64,
    h: f64,
    idx: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Legal successors of `idx` with their step cost.
fn successors(costmap: &Costmap, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    let spec = costmap.spec();
    let cell = spec.cell_of_index(idx);
    NEIGHBORS8.iter().filter_map(move |&(dc, dr)| {
        let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
        if !spec.contains(c, r) {
            return None;
        }
        let j = spec.index(Cell::new(c as usize, r as usize));
        if costmap.is_lethal_at(j) {
            return None;
        }
        let diagonal = dc != 0 && dr != 0;
        if diagonal {
            let side_a = spec.index(Cell::new(c as usize, cell.row));
            let side_b = spec.index(Cell::new(cell.col, r as usize));
            if costmap.is_lethal_at(side_a) || costmap.is_lethal_at(side_b) {
                return None;
            }
        }
        let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
        Some((j, step + costmap.costs()[j]))
    })
}

fn octile(spec: &GridSpec, a: usize, b: usize) -> f64 {
    let (p, q) = (spec.cell_of_index(a), spec.cell_of_index(b));
    let dx = p.col.abs_diff(q.col) as f64;
    let dy = p.row.abs_diff(q.row) as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// A* from `start` to `goal`, ties broken by (f, h, row-major index).
pub fn plan_path(costmap: &Costmap, start: Cell, goal: Cell) -> Result<Path, PlanError> {
    let spec = *costmap.spec();
    if costmap.is_lethal(start) {
        return Err(PlanError::StartLethal);
    }
    if costmap.is_lethal(goal) {
        return Err(PlanError::NoPath);
    }
    let (s, g) = (spec.index(start), spec.index(goal));
    let mut best = vec![f64::INFINITY; spec.len()];
    let mut parent = vec![usize::MAX; spec.len()];
    let mut closed = vec![false; spec.len()];
    let mut open = BinaryHeap::new();
    best[s] = 0.0;
    let h0 = octile(&spec, s, g);
    open.push(Key { f: h0, h: h0, idx: s });
    while let Some(Key { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == g {
            let mut cells = vec![spec.cell_of_index(g)];
            let mut cur = g;
            while cur != s {
                cur = parent[cur];
                cells.push(spec.cell_of_index(cur));
            }
            cells.reverse();
            return Ok(Path { cells, cost: best[g] });
        }
        for (j, step) in successors(costmap, idx) {
            let cand = best[idx] + step;
            if cand < best[j] {
                best[j] = cand;
                parent[j] = idx;
                let h = octile(&spec, j, g);
                open.push(Key { f: cand + h, h, idx: j });
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Least path cost from `start` to every cell (infinite when unreachable).
#[derive(Debug, Clone)]
pub struct CostField {
    spec: GridSpec,
    cost: Vec<f64>,
}

impl CostField {
    pub fn cost(&self, cell: Cell) -> f64 {
        self.cost[self.spec.index(cell)]
    }

    pub fn is_reachable(&self, cell: Cell) -> bool {
        self.cost(cell).is_finite()
    }

    /// Reachable cell closest (Euclidean) to `target`; ties by path cost, then index.
    pub fn nearest_reachable(&self, target: Point2) -> Option<Cell> {
        let spec = &self.spec;
        (0..spec.len())
            .filter(|&i| self.cost[i].is_finite())
            .map(|i| {
                let c = spec.cell_of_index(i);
                (spec.cell_center(c).distance(&target), self.cost[i], i)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
            .map(|(_, _, i)| spec.cell_of_index(i))
    }
}

/// Dijkstra from `start` under the same move model as [`plan_path`].
pub fn cost_field(costmap: &Costmap, start: Cell) -> Result<CostField, PlanError> {
    let spec = *costmap.spec();
    if costmap.is_lethal(start) {
        return Err(PlanError::StartLethal);
    }
    let s = spec.index(start);
    let mut best = vec![f64::INFINITY; spec.len()];
    let mut closed = vec![false; spec.len()];
    let mut open = BinaryHeap::new();
    best[s] = 0.0;
    open.push(Key { f: 0.0, h: 0.0, idx: s });
    while let Some(Key { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        for (j, step) in successors(costmap, idx) {
            let cand = best[idx] + step;
            if cand < best[j] {
                best[j] = cand;
                open.push(Key {
                    f: cand,
                    h: 0.0,
                    idx: j,
                });
            }
        }
    }
    Ok(CostField { spec, cost: best })
}

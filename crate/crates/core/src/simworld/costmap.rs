//! Planning costmap with linear obstacle inflation.

use crate::geom::{Cell, GridSpec};
use crate::gridmap::{CellState, OccupancyGrid};

/// Cost of a cell that must never be entered.
pub const LETHAL: f64 = 254.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    spec: GridSpec,
    cost: Vec<f64>,
    inflation_radius: f64,
}

impl Costmap {
    /// Costmap from raw per-cell costs; values are clamped to `[0, LETHAL]`.
    pub fn from_costs(spec: GridSpec, costs: Vec<f64>, inflation_radius: f64) -> Self {
        assert_eq!(costs.len(), spec.len());
        Self {
            spec,
            cost: costs.into_iter().map(|c| c.clamp(0.0, LETHAL)).collect(),
            inflation_radius,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    pub fn cost(&self, cell: Cell) -> f64 {
        self.cost[self.spec.index(cell)]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn is_lethal(&self, cell: Cell) -> bool {
        self.cost(cell) >= LETHAL
    }

    pub(crate) fn is_lethal_at(&self, idx: usize) -> bool {
        self.cost[idx] >= LETHAL
    }

    /// Mark extra cells lethal without re-inflating (other agents at plan time).
    pub fn with_lethal(mut self, cells: impl IntoIterator<Item = Cell>) -> Self {
        for c in cells {
            let i = self.spec.index(c);
            self.cost[i] = LETHAL;
        }
        self
    }
}

/// Distance in cells from a cell centre to the nearest point of a cell square
/// offset by `(dc, dr)`.
pub(crate) fn square_distance(dc: i64, dr: i64) -> f64 {
    let gap = |d: i64| ((d.abs() as f64) - 0.5).max(0.0);
    gap(dc).hypot(gap(dr))
}

/// Occupied and Unknown cells are lethal; other cells cost
/// `LETHAL * (1 - d / r)` where `d` is the distance (meters) from the cell
/// centre to the nearest lethal cell square, or 0 beyond the radius.
pub fn build_costmap(grid: &OccupancyGrid, inflation_radius: f64) -> Costmap {
    let spec = *grid.spec();
    let lethal: Vec<bool> = grid.states().into_iter().map(|s| s != CellState::Free).collect();
    let mut cost: Vec<f64> = lethal.iter().map(|&l| if l { LETHAL } else { 0.0 }).collect();
    if inflation_radius > 0.0 {
        let r_cells = inflation_radius / spec.resolution;
        let reach = r_cells.ceil() as i64 + 1;
        let mut nearest = vec![f64::INFINITY; spec.len()];
        for idx in 0..spec.len() {
            if !lethal[idx] {
                continue;
            }
            let cell = spec.cell_of_index(idx);
            // interior lethal cells are never strictly nearest
            if spec.neighbors8(cell).all(|n| lethal[spec.index(n)]) {
                continue;
            }
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
                    if !spec.contains(c, r) {
                        continue;
                    }
                    let j = spec.index(Cell::new(c as usize, r as usize));
                    if lethal[j] {
                        continue;
                    }
                    let d = square_distance(dc, dr);
                    if d < nearest[j] {
                        nearest[j] = d;
                    }
                }
            }
        }
        for (j, d) in nearest.into_iter().enumerate() {
            if !lethal[j] && d < r_cells {
                cost[j] = LETHAL * (1.0 - d / r_cells);
            }
        }
    }
    Costmap {
        spec,
        cost,
        inflation_radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn free_grid(w: usize, h: usize) -> OccupancyGrid {
        let spec = GridSpec::new(w, h, 1.0, Point2::new(0.0, 0.0));
        let mut g = OccupancyGrid::new(spec).unwrap();
        for r in 0..h {
            for c in 0..w {
                g.set_value(Cell::new(c, r), -2.0);
            }
        }
        g
    }

    /// Brute force over every lethal cell.
    fn oracle(grid: &OccupancyGrid, radius_cells: f64) -> Vec<f64> {
        let spec = *grid.spec();
        let states = grid.states();
        (0..spec.len())
            .map(|j| {
                if states[j] != CellState::Free {
                    return LETHAL;
                }
                let cj = spec.cell_of_index(j);
                let d = (0..spec.len())
                    .filter(|&i| states[i] != CellState::Free)
                    .map(|i| {
                        let ci = spec.cell_of_index(i);
                        square_distance(ci.col as i64 - cj.col as i64, ci.row as i64 - cj.row as i64)
                    })
                    .fold(f64::INFINITY, f64::min);
                if d < radius_cells {
                    LETHAL * (1.0 - d / radius_cells)
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn single_obstacle_radius_one() {
        let mut g = free_grid(7, 7);
        g.set_value(Cell::new(3, 3), 3.5);
        let cm = build_costmap(&g, 1.0);
        for r in 0..7 {
            for c in 0..7 {
                let cell = Cell::new(c, r);
                let cheb = cell.chebyshev(&Cell::new(3, 3));
                match cheb {
                    0 => assert_eq!(cm.cost(cell), LETHAL),
                    1 => assert!(cm.cost(cell) > 0.0 && cm.cost(cell) < LETHAL, "{cell:?}"),
                    _ => assert_eq!(cm.cost(cell), 0.0, "{cell:?}"),
                }
            }
        }
        assert_eq!(cm.costs(), oracle(&g, 1.0).as_slice());
    }

    #[test]
    fn open_grid_is_zero_and_unknown_is_lethal() {
        let g = free_grid(5, 4);
        assert!(build_costmap(&g, 0.6).costs().iter().all(|c| *c == 0.0));
        let mut g2 = free_grid(5, 4);
        g2.set_value(Cell::new(2, 2), 0.0);
        assert!(build_costmap(&g2, 0.0).is_lethal(Cell::new(2, 2)));
    }

    #[test]
    fn matches_brute_force_on_wall_pattern() {
        let mut g = free_grid(12, 9);
        for c in 2..10 {
            g.set_value(Cell::new(c, 4), 3.5);
        }
        g.set_value(Cell::new(0, 0), 0.0);
        g.set_value(Cell::new(11, 8), 2.0);
        for radius in [0.7, 1.5, 2.5, 3.2] {
            let cm = build_costmap(&g, radius);
            let o = oracle(&g, radius);
            for (a, b) in cm.costs().iter().zip(&o) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cost_decays_with_distance() {
        let mut g = free_grid(9, 1);
        g.set_value(Cell::new(0, 0), 3.5);
        let cm = build_costmap(&g, 4.0);
        let row: Vec<f64> = (0..9).map(|c| cm.cost(Cell::new(c, 0))).collect();
        for w in row[1..].windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_eq!(row[5], 0.0);
    }
}

//! Shared planar geometry: world points, grid cells and grid traversal.

use serde::{Deserialize, Serialize};

/// A point in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

/// A planar pose: position plus heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub const fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            heading,
        }
    }
}

/// Grid cell address. `col` grows with world x, `row` grows with world y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }

    /// Chebyshev distance in cells.
    pub fn chebyshev(&self, other: &Cell) -> usize {
        self.col.abs_diff(other.col).max(self.row.abs_diff(other.row))
    }
}

/// Offsets of the 8-neighbourhood, orthogonal moves first.
pub const NEIGHBORS8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];

/// Shape and placement of a regular grid in the world frame.
///
/// Cell `(col, row)` covers `[origin.x + col*res, origin.x + (col+1)*res)` in x
/// and the analogous interval in y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Point2,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point2) -> Self {
        Self {
            width,
            height,
            resolution,
            origin,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width >= 1
            && self.height >= 1
            && self.resolution.is_finite()
            && self.resolution > 0.0
            && self.origin.is_finite()
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    pub fn cell_of_index(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width, idx / self.width)
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Cell containing a world point, if inside the grid.
    pub fn world_to_cell(&self, p: Point2) -> Option<Cell> {
        if !p.is_finite() {
            return None;
        }
        let col = ((p.x - self.origin.x) / self.resolution).floor();
        let row = ((p.y - self.origin.y) / self.resolution).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (col, row) = (col as usize, row as usize);
        (col < self.width && row < self.height).then_some(Cell::new(col, row))
    }

    pub fn cell_center(&self, cell: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (cell.col as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.row as f64 + 0.5) * self.resolution,
        )
    }

    /// In-bounds 8-neighbours of a cell.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS8.iter().filter_map(move |&(dc, dr)| {
            let c = cell.col as i64 + dc;
            let r = cell.row as i64 + dr;
            self.contains(c, r).then(|| Cell::new(c as usize, r as usize))
        })
    }

    /// True when both grids describe the same raster exactly.
    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
            && self.origin == other.origin
    }
}

/// One cell visited by [`GridRay`], with the ray parameters (meters) where the
/// ray enters and leaves it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayStep {
    pub cell: Cell,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Gap-free traversal of the cells crossed by a ray (Amanatides & Woo).
///
/// Starts at the cell containing the origin and stops when the ray leaves the
/// grid or its length exceeds `max_t`.
#[derive(Debug, Clone)]
pub struct GridRay {
    spec: GridSpec,
    col: i64,
    row: i64,
    step_c: i64,
    step_r: i64,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    t: f64,
    max_t: f64,
    done: bool,
}

impl GridRay {
    /// `dir` must be a unit vector. Returns `None` when `start` is outside the grid.
    pub fn new(spec: GridSpec, start: Point2, dir: (f64, f64), max_t: f64) -> Option<Self> {
        let cell = spec.world_to_cell(start)?;
        let res = spec.resolution;
        let (dx, dy) = dir;
        let fx = (start.x - spec.origin.x) / res;
        let fy = (start.y - spec.origin.y) / res;
        let (step_c, t_max_x, t_delta_x) = axis_setup(fx, cell.col as f64, dx, res);
        let (step_r, t_max_y, t_delta_y) = axis_setup(fy, cell.row as f64, dy, res);
        Some(Self {
            spec,
            col: cell.col as i64,
            row: cell.row as i64,
            step_c,
            step_r,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            t: 0.0,
            max_t,
            done: false,
        })
    }
}

fn axis_setup(f: f64, cell: f64, d: f64, res: f64) -> (i64, f64, f64) {
    if d > 0.0 {
        (1, (cell + 1.0 - f) * res / d, res / d)
    } else if d < 0.0 {
        (-1, (f - cell) * res / -d, res / -d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

impl Iterator for GridRay {
    type Item = RayStep;

    fn next(&mut self) -> Option<RayStep> {
        if self.done || !self.spec.contains(self.col, self.row) || self.t > self.max_t {
            self.done = true;
            return None;
        }
        let cell = Cell::new(self.col as usize, self.row as usize);
        let t_enter = self.t;
        let t_exit;
        if self.t_max_x < self.t_max_y {
            t_exit = self.t_max_x;
            self.col += self.step_c;
            self.t_max_x += self.t_delta_x;
        } else {
            t_exit = self.t_max_y;
            self.row += self.step_r;
            self.t_max_y += self.t_delta_y;
        }
        self.t = t_exit;
        if !t_exit.is_finite() {
            self.done = true;
        }
        Some(RayStep { cell, t_enter, t_exit })
    }
}

/// Unit direction of a ray with the given absolute angle.
pub fn direction(angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(10, 10, 1.0, Point2::new(0.0, 0.0))
    }

    #[test]
    fn world_cell_round_trip() {
        let s = GridSpec::new(4, 3, 0.5, Point2::new(-1.0, 2.0));
        let c = Cell::new(3, 2);
        assert_eq!(s.world_to_cell(s.cell_center(c)), Some(c));
        assert_eq!(s.world_to_cell(Point2::new(-1.01, 2.0)), None);
        assert_eq!(s.world_to_cell(Point2::new(1.0, 2.0)), None);
    }

    #[test]
    fn axis_ray_visits_consecutive_cells() {
        let cells: Vec<_> = GridRay::new(spec(), Point2::new(0.5, 0.5), (1.0, 0.0), 3.0)
            .unwrap()
            .map(|s| s.cell)
            .collect();
        assert_eq!(cells, (0..4).map(|c| Cell::new(c, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn diagonal_ray_is_four_connected() {
        let steps: Vec<_> = GridRay::new(spec(), Point2::new(0.2, 0.7), direction(0.6), 9.0)
            .unwrap()
            .collect();
        for w in steps.windows(2) {
            let (a, b) = (w[0].cell, w[1].cell);
            assert_eq!(a.col.abs_diff(b.col) + a.row.abs_diff(b.row), 1);
            assert!((w[0].t_exit - w[1].t_enter).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_stops_at_grid_edge() {
        let n = GridRay::new(spec(), Point2::new(5.5, 5.5), (-1.0, 0.0), 100.0)
            .unwrap()
            .count();
        assert_eq!(n, 6);
    }
}

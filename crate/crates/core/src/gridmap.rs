//! Log-odds occupancy grid: sensor updates, merging, classification and the
//! explored-area ratio against a ground-truth map.
//!
//! Each cell stores the log-odds of being occupied. A ray lowers the value of
//! every cell it passes through and raises the value of the cell it hits:
//!
//! ```text
//! l <- clamp(l + hit,  l_min, l_max)   endpoint of a ray that hit something
//! l <- clamp(l + miss, l_min, l_max)   every other traversed cell
//! ```
//!
//! With the defaults (+0.85 / -0.4, clamps [-2.0, 3.5], thresholds +-0.5) a
//! saturated obstacle stops being `Occupied` after eight misses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floorplan::{GroundTruthMap, GtLabel};
use crate::geom::{direction, Cell, GridRay, GridSpec, Pose2};

/// Lower clamp of the log-odds range.
pub const L_MIN: f64 = -2.0;
/// Upper clamp of the log-odds range.
pub const L_MAX: f64 = 3.5;

/// Graymap byte for a free cell.
pub const PGM_FREE: u8 = 254;
/// Graymap byte for an unknown cell (and for outside-the-building cells).
pub const PGM_UNKNOWN: u8 = 205;
/// Graymap byte for an occupied cell.
pub const PGM_OCCUPIED: u8 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("sensor pose ({x:.3}, {y:.3}) is outside the grid")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("non-finite log-odds value {0}")]
    NonFiniteValue(f64),
    #[error("grid shape, resolution or origin mismatch")]
    GridMismatch,
    #[error("ground truth has no free cells")]
    EmptyGroundTruth,
    #[error("no grids to merge")]
    EmptyList,
    #[error("invalid grid geometry")]
    InvalidGrid,
    #[error("malformed graymap: {0}")]
    BadGraymap(String),
}

/// Classification of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

impl CellState {
    pub fn pgm_byte(self) -> u8 {
        match self {
            CellState::Free => PGM_FREE,
            CellState::Unknown => PGM_UNKNOWN,
            CellState::Occupied => PGM_OCCUPIED,
        }
    }

    pub fn from_pgm_byte(b: u8) -> Option<Self> {
        match b {
            PGM_FREE => Some(CellState::Free),
            PGM_UNKNOWN => Some(CellState::Unknown),
            PGM_OCCUPIED => Some(CellState::Occupied),
            _ => None,
        }
    }
}

/// Update increments, clamps and classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingParams {
    pub hit: f64,
    pub miss: f64,
    pub min: f64,
    pub max: f64,
    pub occupied_above: f64,
    pub free_below: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            hit: 0.85,
            miss: -0.4,
            min: L_MIN,
            max: L_MAX,
            occupied_above: 0.5,
            free_below: -0.5,
        }
    }
}

impl MappingParams {
    pub fn classify(&self, logodds: f64) -> Result<CellState, GridError> {
        if !logodds.is_finite() {
            return Err(GridError::NonFiniteValue(logodds));
        }
        Ok(if logodds > self.occupied_above {
            CellState::Occupied
        } else if logodds < self.free_below {
            CellState::Free
        } else {
            CellState::Unknown
        })
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Classify a log-odds value with the default thresholds.
pub fn classify_cell(logodds: f64) -> Result<CellState, GridError> {
    MappingParams::default().classify(logodds)
}

/// One range measurement, bearing relative to the sensor heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub bearing: f64,
    pub range: f64,
    pub hit: bool,
}

/// A planar range scan taken from a known pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub pose: Pose2,
    pub rays: Vec<Ray>,
    pub max_range: f64,
}

/// Cell-level effect of a scan: every (cell, hit) update in application order.
pub fn scan_updates(spec: &GridSpec, scan: &Scan) -> Result<Vec<(Cell, bool)>, GridError> {
    let origin = scan.pose.position;
    if spec.world_to_cell(origin).is_none() {
        return Err(GridError::PoseOutOfBounds {
            x: origin.x,
            y: origin.y,
        });
    }
    let mut out = Vec::new();
    for ray in &scan.rays {
        let dir = direction(scan.pose.heading + ray.bearing);
        let Some(walk) = GridRay::new(*spec, origin, dir, ray.range) else {
            continue;
        };
        let steps: Vec<_> = walk.collect();
        let Some(last) = steps.last() else { continue };
        // The endpoint is only inside the grid if the walk reached `range`.
        let ends_inside = last.t_exit >= ray.range;
        let n = steps.len();
        for (i, step) in steps.iter().enumerate() {
            let is_end = ends_inside && i + 1 == n;
            out.push((step.cell, is_end && ray.hit));
        }
    }
    Ok(out)
}

/// Log-odds occupancy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    spec: GridSpec,
    params: MappingParams,
    logodds: Vec<f64>,
}

impl OccupancyGrid {
    /// All-unknown grid (log-odds 0).
    pub fn new(spec: GridSpec) -> Result<Self, GridError> {
        Self::with_params(spec, MappingParams::default())
    }

    pub fn with_params(spec: GridSpec, params: MappingParams) -> Result<Self, GridError> {
        if !spec.is_valid() {
            return Err(GridError::InvalidGrid);
        }
        Ok(Self {
            spec,
            params,
            logodds: vec![0.0; spec.len()],
        })
    }

    /// Grid from raw log-odds values, clamped into range.
    pub fn from_logodds(spec: GridSpec, params: MappingParams, values: Vec<f64>) -> Result<Self, GridError> {
        if !spec.is_valid() || values.len() != spec.len() {
            return Err(GridError::InvalidGrid);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue(*v));
        }
        let logodds = values.into_iter().map(|v| params.clamp(v)).collect();
        Ok(Self { spec, params, logodds })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn params(&self) -> &MappingParams {
        &self.params
    }

    pub fn logodds(&self) -> &[f64] {
        &self.logodds
    }

    pub fn value(&self, cell: Cell) -> f64 {
        self.logodds[self.spec.index(cell)]
    }

    pub fn set_value(&mut self, cell: Cell, v: f64) {
        let idx = self.spec.index(cell);
        self.logodds[idx] = self.params.clamp(v);
    }

    pub fn state(&self, cell: Cell) -> CellState {
        self.state_at(self.spec.index(cell))
    }

    pub fn state_at(&self, idx: usize) -> CellState {
        // values are finite by construction
        self.params.classify(self.logodds[idx]).unwrap_or(CellState::Unknown)
    }

    pub fn states(&self) -> Vec<CellState> {
        (0..self.logodds.len()).map(|i| self.state_at(i)).collect()
    }

    pub fn count(&self, state: CellState) -> usize {
        (0..self.logodds.len()).filter(|&i| self.state_at(i) == state).count()
    }

    /// Integrate a scan taken from a known pose.
    pub fn apply_scan(&mut self, scan: &Scan) -> Result<(), GridError> {
        for (cell, hit) in scan_updates(&self.spec, scan)? {
            self.update(cell, hit);
        }
        Ok(())
    }

    /// Apply a single hit or miss to one cell.
    pub fn update(&mut self, cell: Cell, hit: bool) {
        let idx = self.spec.index(cell);
        let delta = if hit { self.params.hit } else { self.params.miss };
        self.logodds[idx] = self.params.clamp(self.logodds[idx] + delta);
    }

    /// P5 graymap, top row (highest y) first.
    pub fn export_map(&self) -> Vec<u8> {
        let spec = self.spec;
        let mut pixels = Vec::with_capacity(spec.len());
        for row in (0..spec.height).rev() {
            for col in 0..spec.width {
                pixels.push(self.state(Cell::new(col, row)).pgm_byte());
            }
        }
        encode_pgm(spec.width, spec.height, &pixels)
    }
}

/// Explored-area ratio report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiReport {
    pub phi: f64,
    pub explored_free: usize,
    pub gt_free: usize,
}

/// Percentage of ground-truth free area that the grid classifies as free.
///
/// Not clamped: a map that marks more cells free than the ground truth holds
/// yields a value above 100.
pub fn compute_phi(grid: &OccupancyGrid, gt: &GroundTruthMap) -> Result<PhiReport, GridError> {
    if !grid.spec().same_as(gt.spec()) {
        return Err(GridError::GridMismatch);
    }
    let gt_free = gt.labels().iter().filter(|l| **l == GtLabel::Free).count();
    if gt_free == 0 {
        return Err(GridError::EmptyGroundTruth);
    }
    let explored_free = grid.count(CellState::Free);
    Ok(PhiReport {
        phi: 100.0 * explored_free as f64 / gt_free as f64,
        explored_free,
        gt_free,
    })
}

/// Cell-wise clamped sum of log-odds.
pub fn merge_grids<'a, I>(grids: I) -> Result<OccupancyGrid, GridError>
where
    I: IntoIterator<Item = &'a OccupancyGrid>,
{
    let mut iter = grids.into_iter();
    let first = iter.next().ok_or(GridError::EmptyList)?;
    let mut merged = first.clone();
    for g in iter {
        if !g.spec.same_as(&merged.spec) {
            return Err(GridError::GridMismatch);
        }
        for (m, v) in merged.logodds.iter_mut().zip(&g.logodds) {
            *m += *v;
        }
    }
    let params = merged.params;
    for m in merged.logodds.iter_mut() {
        *m = params.clamp(*m);
    }
    Ok(merged)
}

/// Encode raw pixel rows (already in top-to-bottom order) as a P5 graymap.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decoded graymap: dimensions and pixels, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Parse a binary P5 graymap with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Graymap, GridError> {
    let bad = |m: &str| GridError::BadGraymap(m.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ascii"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let pixels = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if pixels.len() != width * height {
        return Err(bad("raster size does not match header"));
    }
    Ok(Graymap {
        width,
        height,
        pixels: pixels.to_vec(),
    })
}

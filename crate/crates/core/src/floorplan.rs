//! Ground-truth floor map from a building mesh.
//!
//! A horizontal slice through the triangle mesh gives wall outlines, the
//! outlines are rasterised into an occupied mask, and a flood fill from a seed
//! point labels the reachable floor space as free.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Cell, GridSpec, Point2};
use crate::gridmap::{encode_pgm, PGM_FREE, PGM_OCCUPIED, PGM_UNKNOWN};

#[derive(Debug, Error, PartialEq)]
pub enum FloorplanError {
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: vertex index {index} out of range")]
    IndexOutOfRange { line: usize, index: usize },
    #[error("flood seed ({x:.3}, {y:.3}) lies on an occupied cell")]
    SeedOnOccupied { x: f64, y: f64 },
    #[error("flood seed ({x:.3}, {y:.3}) is outside the map")]
    SeedOutOfBounds { x: f64, y: f64 },
    #[error("opening {0} is not next to any wall")]
    OpeningOffWall(String),
    #[error("opening {0} is outside the map")]
    OpeningOutOfBounds(String),
    #[error("duplicate opening id {0}")]
    DuplicateId(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Parse `v x y z` / `f i j k [l]` records (1-based indices, `#` comments).
///
/// Quads are split along their first diagonal: `(i,j,k,l) -> (i,j,k), (i,k,l)`.
pub fn load_mesh(text: &str) -> Result<TriangleMesh, FloorplanError> {
    let mut mesh = TriangleMesh::default();
    let mut faces: Vec<(usize, Vec<usize>)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: &str| FloorplanError::ParseError {
            line,
            msg: msg.to_string(),
        };
        let mut parts = content.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("bad vertex coordinate"))?;
                if coords.len() != 3 {
                    return Err(err("vertex needs exactly three coordinates"));
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("non-finite vertex coordinate"));
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| p.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("bad face index"))?;
                if idx.len() != 3 && idx.len() != 4 {
                    return Err(err("face needs three or four indices"));
                }
                faces.push((line, idx));
            }
            Some(other) => return Err(err(&format!("unknown record '{other}'"))),
            None => {}
        }
    }
    if faces.is_empty() {
        return Err(FloorplanError::ParseError {
            line: text.lines().count(),
            msg: "mesh has no faces".to_string(),
        });
    }
    let nv = mesh.vertices.len();
    for (line, idx) in faces {
        let mut zero_based = [0usize; 4];
        for (slot, &i) in zero_based.iter_mut().zip(&idx) {
            if i == 0 || i > nv {
                return Err(FloorplanError::IndexOutOfRange { line, index: i });
            }
            *slot = i - 1;
        }
        let [a, b, c, d] = zero_based;
        mesh.triangles.push([a, b, c]);
        if idx.len() == 4 {
            mesh.triangles.push([a, c, d]);
        }
    }
    Ok(mesh)
}

/// A 2D segment in the slice plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(&self.b)
    }

    /// Same segment with endpoints in lexicographic order.
    fn normalized(self) -> Self {
        if (self.a.x, self.a.y) <= (self.b.x, self.b.y) {
            self
        } else {
            Segment::new(self.b, self.a)
        }
    }
}

pub type SegmentSet = Vec<Segment>;

const SLICE_EPS: f64 = 1e-9;

/// Cut the mesh with the horizontal plane `z` and project to (x, y).
///
/// Crossing triangles give their intersection chord, coplanar triangles their
/// three edges, an edge lying in the plane gives that edge, a single touching
/// vertex gives nothing. Collinear pieces that share an endpoint are joined,
/// and the result is sorted.
pub fn slice_mesh(mesh: &TriangleMesh, z: f64) -> SegmentSet {
    let mut raw = Vec::new();
    for tri in &mesh.triangles {
        let v = tri.map(|i| mesh.vertices[i]);
        let d = v.map(|p| p[2] - z);
        let on = d.map(|x| x == 0.0);
        let flat = |i: usize| Point2::new(v[i][0], v[i][1]);
        let edges = [(0, 1), (1, 2), (2, 0)];
        match on.iter().filter(|b| **b).count() {
            3 => {
                for (i, j) in edges {
                    raw.push(Segment::new(flat(i), flat(j)));
                }
            }
            2 => {
                let (i, j) = edges.into_iter().find(|&(i, j)| on[i] && on[j]).unwrap();
                raw.push(Segment::new(flat(i), flat(j)));
            }
            _ => {
                let pos = d.iter().any(|x| *x > 0.0);
                let neg = d.iter().any(|x| *x < 0.0);
                if !(pos && neg) {
                    continue;
                }
                let mut pts = Vec::with_capacity(2);
                for (k, &is_on) in on.iter().enumerate() {
                    if is_on {
                        pts.push(flat(k));
                    }
                }
                for (i, j) in edges {
                    if d[i] * d[j] < 0.0 {
                        // interpolate from the lower vertex index so shared edges agree
                        let (lo, hi) = if tri[i] < tri[j] { (i, j) } else { (j, i) };
                        let t = d[lo] / (d[lo] - d[hi]);
                        let (p, q) = (v[lo], v[hi]);
                        pts.push(Point2::new(p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t));
                    }
                }
                if pts.len() == 2 {
                    raw.push(Segment::new(pts[0], pts[1]));
                }
            }
        }
    }
    canonical_segments(raw)
}

fn canonical_segments(raw: Vec<Segment>) -> SegmentSet {
    let mut segs: Vec<Segment> = raw
        .into_iter()
        .filter(|s| s.length() > SLICE_EPS)
        .map(Segment::normalized)
        .collect();
    sort_segments(&mut segs);
    segs.dedup_by(|a, b| close(a.a, b.a) && close(a.b, b.b));
    join_collinear(&mut segs);
    sort_segments(&mut segs);
    segs
}

fn sort_segments(segs: &mut [Segment]) {
    segs.sort_by(|s, t| {
        (s.a.x, s.a.y, s.b.x, s.b.y)
            .partial_cmp(&(t.a.x, t.a.y, t.b.x, t.b.y))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

fn close(p: Point2, q: Point2) -> bool {
    (p.x - q.x).abs() <= SLICE_EPS && (p.y - q.y).abs() <= SLICE_EPS
}

fn join_collinear(segs: &mut Vec<Segment>) {
    loop {
        let mut joined = None;
        'search: for i in 0..segs.len() {
            for j in (i + 1)..segs.len() {
                if let Some(s) = try_join(segs[i], segs[j]) {
                    joined = Some((i, j, s));
                    break 'search;
                }
            }
        }
        match joined {
            Some((i, j, s)) => {
                segs.swap_remove(j);
                segs[i] = s;
            }
            None => return,
        }
    }
}

/// Join two collinear segments meeting end to end.
fn try_join(s: Segment, t: Segment) -> Option<Segment> {
    let (shared, p, q) = if close(s.b, t.a) {
        (s.b, s.a, t.b)
    } else if close(s.a, t.b) {
        (s.a, t.a, s.b)
    } else if close(s.a, t.a) {
        (s.a, s.b, t.b)
    } else if close(s.b, t.b) {
        (s.b, s.a, t.a)
    } else {
        return None;
    };
    let (ux, uy) = (p.x - shared.x, p.y - shared.y);
    let (vx, vy) = (q.x - shared.x, q.y - shared.y);
    let cross = ux * vy - uy * vx;
    let dot = ux * vx + uy * vy;
    let scale = (ux.hypot(uy)) * (vx.hypot(vy));
    // opposite directions from the shared point, and collinear
    (dot < 0.0 && cross.abs() <= 1e-9 * scale).then(|| Segment::new(p, q).normalized())
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldRect {
    pub min: Point2,
    pub max: Point2,
}

impl WorldRect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.max.x > self.min.x && self.max.y > self.min.y
    }

    /// Grid covering the rectangle at the given resolution, origin at `min`.
    pub fn grid_spec(&self, resolution: f64) -> GridSpec {
        let cells = |extent: f64| ((extent / resolution - 1e-9).ceil() as usize).max(1);
        GridSpec::new(
            cells(self.max.x - self.min.x),
            cells(self.max.y - self.min.y),
            resolution,
            self.min,
        )
    }
}

/// Boolean raster of wall cells.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupiedMask {
    pub spec: GridSpec,
    pub occupied: Vec<bool>,
}

impl OccupiedMask {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            occupied: vec![false; spec.len()],
        }
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[self.spec.index(cell)]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|b| **b).count()
    }

    /// Mask from text rows, top row (highest y) first: `#` is a wall, anything
    /// else is clear.
    pub fn from_rows<S: AsRef<str>>(rows: &[S], resolution: f64, origin: Point2) -> Result<Self, FloorplanError> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().chars().count()).unwrap_or(0);
        if height == 0 || width == 0 {
            return Err(FloorplanError::InvalidRaster("raster is empty".into()));
        }
        let spec = GridSpec::new(width, height, resolution, origin);
        if !spec.is_valid() {
            return Err(FloorplanError::InvalidRaster("bad resolution or origin".into()));
        }
        let mut mask = Self::empty(spec);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(FloorplanError::InvalidRaster(format!(
                    "row {} has a different width",
                    i + 1
                )));
            }
            let r = height - 1 - i;
            for (c, ch) in row.chars().enumerate() {
                mask.occupied[spec.index(Cell::new(c, r))] = ch == '#';
            }
        }
        Ok(mask)
    }
}

/// Mark every cell whose closed square intersects a segment.
pub fn rasterize(segments: &[Segment], resolution: f64, bounds: WorldRect) -> OccupiedMask {
    let spec = bounds.grid_spec(resolution);
    let mut mask = OccupiedMask::empty(spec);
    for s in segments {
        for cell in supercover(&spec, s) {
            mask.occupied[spec.index(cell)] = true;
        }
    }
    mask
}

/// In-bounds cells whose closed square meets the segment.
pub fn supercover(spec: &GridSpec, s: &Segment) -> Vec<Cell> {
    let res = spec.resolution;
    let to_u = |p: Point2| ((p.x - spec.origin.x) / res, (p.y - spec.origin.y) / res);
    let (ua, va) = to_u(s.a);
    let (ub, vb) = to_u(s.b);
    let (umin, umax) = (ua.min(ub), ua.max(ub));
    let mut out = Vec::new();
    let c_lo = (umin.ceil() as i64 - 1).max(0);
    let c_hi = (umax.floor() as i64).min(spec.width as i64 - 1);
    for c in c_lo..=c_hi {
        let (vlo, vhi) = if ua == ub {
            (va.min(vb), va.max(vb))
        } else {
            let u0 = (c as f64).max(umin);
            let u1 = ((c + 1) as f64).min(umax);
            if u0 > u1 {
                continue;
            }
            let at = |u: f64| va + (vb - va) * (u - ua) / (ub - ua);
            let (p, q) = (at(u0), at(u1));
            (p.min(q), p.max(q))
        };
        let r_lo = (vlo.ceil() as i64 - 1).max(0);
        let r_hi = (vhi.floor() as i64).min(spec.height as i64 - 1);
        for r in r_lo..=r_hi {
            out.push(Cell::new(c as usize, r as usize));
        }
    }
    out
}

/// Label of a ground-truth cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtLabel {
    Free,
    Occupied,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpeningKind {
    Door,
    Passage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HingeSide {
    Left,
    Right,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Actuation {
    Push,
    Pull,
    #[default]
    None,
}

/// A door or passage between two spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub id: String,
    pub center: Point2,
    pub kind: OpeningKind,
    #[serde(default)]
    pub hinge_side: HingeSide,
    #[serde(default)]
    pub actuation: Actuation,
}

/// Free-space raster used as the denominator of the explored-area ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMap {
    spec: GridSpec,
    labels: Vec<GtLabel>,
    openings: Vec<Opening>,
}

impl GroundTruthMap {
    pub fn from_labels(spec: GridSpec, labels: Vec<GtLabel>) -> Self {
        assert_eq!(labels.len(), spec.len(), "label count must match grid size");
        Self {
            spec,
            labels,
            openings: Vec::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[GtLabel] {
        &self.labels
    }

    pub fn label(&self, cell: Cell) -> GtLabel {
        self.labels[self.spec.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.label(cell) == GtLabel::Free
    }

    pub fn openings(&self) -> &[Opening] {
        &self.openings
    }

    pub fn free_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == GtLabel::Free).count()
    }

    /// P5 graymap: Free 254, Occupied 0, Outside 205; top row first.
    pub fn export_map(&self) -> Vec<u8> {
        let spec = self.spec;
        let mut pixels = Vec::with_capacity(spec.len());
        for row in (0..spec.height).rev() {
            for col in 0..spec.width {
                pixels.push(match self.label(Cell::new(col, row)) {
                    GtLabel::Free => PGM_FREE,
                    GtLabel::Occupied => PGM_OCCUPIED,
                    GtLabel::Outside => PGM_UNKNOWN,
                });
            }
        }
        encode_pgm(spec.width, spec.height, &pixels)
    }
}

/// Flood fill (8-connected) from `seed` through non-occupied cells.
pub fn flood_free(mask: &OccupiedMask, seed: Point2) -> Result<GroundTruthMap, FloorplanError> {
    let spec = mask.spec;
    let start = spec
        .world_to_cell(seed)
        .ok_or(FloorplanError::SeedOutOfBounds { x: seed.x, y: seed.y })?;
    if mask.is_occupied(start) {
        return Err(FloorplanError::SeedOnOccupied { x: seed.x, y: seed.y });
    }
    let mut labels: Vec<GtLabel> = mask
        .occupied
        .iter()
        .map(|&o| if o { GtLabel::Occupied } else { GtLabel::Outside })
        .collect();
    let mut queue = VecDeque::from([start]);
    labels[spec.index(start)] = GtLabel::Free;
    while let Some(c) = queue.pop_front() {
        for n in spec.neighbors8(c) {
            let i = spec.index(n);
            if labels[i] == GtLabel::Outside {
                labels[i] = GtLabel::Free;
                queue.push_back(n);
            }
        }
    }
    Ok(GroundTruthMap::from_labels(spec, labels))
}

/// Opening centres must be within this many cells (Chebyshev) of a wall.
pub const OPENING_WALL_REACH: usize = 2;

/// Attach door/passage annotations after checking each lies against a wall.
pub fn attach_openings(mut map: GroundTruthMap, annotations: Vec<Opening>) -> Result<GroundTruthMap, FloorplanError> {
    let mut seen: HashSet<&str> = map.openings.iter().map(|o| o.id.as_str()).collect();
    for o in &annotations {
        if !seen.insert(o.id.as_str()) {
            return Err(FloorplanError::DuplicateId(o.id.clone()));
        }
    }
    let spec = map.spec;
    let reach = OPENING_WALL_REACH as i64;
    for o in &annotations {
        let cell = spec
            .world_to_cell(o.center)
            .ok_or_else(|| FloorplanError::OpeningOutOfBounds(o.id.clone()))?;
        let near_wall = (-reach..=reach).any(|dr| {
            (-reach..=reach).any(|dc| {
                let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
                spec.contains(c, r) && map.label(Cell::new(c as usize, r as usize)) == GtLabel::Occupied
            })
        });
        if !near_wall {
            return Err(FloorplanError::OpeningOffWall(o.id.clone()));
        }
    }
    map.openings.extend(annotations);
    Ok(map)
}

//! Independent reference implementations used by the property and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use sitescout_core::floorplan::{GroundTruthMap, GtLabel};
use sitescout_core::geom::{Cell, GridSpec, Point2};
use sitescout_core::gridmap::{MappingParams, OccupancyGrid};

pub fn spec(w: usize, h: usize) -> GridSpec {
    GridSpec::new(w, h, 1.0, Point2::new(0.0, 0.0))
}

/// Log-odds drawn from a mix of saturated and intermediate values.
pub fn random_grid(rng: &mut impl Rng, w: usize, h: usize) -> OccupancyGrid {
    let values = (0..w * h)
        .map(|_| match rng.random_range(0..4) {
            0 => -2.0,
            1 => 3.5,
            2 => 0.0,
            _ => rng.random_range(-2.0..3.5),
        })
        .collect();
    OccupancyGrid::from_logodds(spec(w, h), MappingParams::default(), values).unwrap()
}

/// Ground truth with at least one free cell.
pub fn random_gt(rng: &mut impl Rng, w: usize, h: usize) -> GroundTruthMap {
    let mut labels: Vec<GtLabel> = (0..w * h)
        .map(|_| match rng.random_range(0..5) {
            0 => GtLabel::Occupied,
            1 => GtLabel::Outside,
            _ => GtLabel::Free,
        })
        .collect();
    labels[0] = GtLabel::Free;
    GroundTruthMap::from_labels(spec(w, h), labels)
}

/// Count-and-divide reading of the explored-area ratio.
pub fn phi_oracle(grid: &OccupancyGrid, gt: &GroundTruthMap) -> f64 {
    let free = grid.logodds().iter().filter(|&&v| v < -0.5).count();
    let gt_free = gt.labels().iter().filter(|&&l| l == GtLabel::Free).count();
    100.0 * free as f64 / gt_free as f64
}

/// Free cells with an Unknown 8-neighbour, by direct scan.
pub fn frontier_oracle(grid: &OccupancyGrid) -> Vec<Cell> {
    let s = *grid.spec();
    let v = |c: i64, r: i64| grid.logodds()[r as usize * s.width + c as usize];
    let mut out = Vec::new();
    for r in 0..s.height as i64 {
        for c in 0..s.width as i64 {
            if v(c, r) >= -0.5 {
                continue;
            }
            let mut found = false;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nc, nr) = (c + dc, r + dr);
                    if (dc, dr) == (0, 0) || nc < 0 || nr < 0 || nc >= s.width as i64 || nr >= s.height as i64 {
                        continue;
                    }
                    let x = v(nc, nr);
                    if (-0.5..=0.5).contains(&x) {
                        found = true;
                    }
                }
            }
            if found {
                out.push(Cell::new(c as usize, r as usize));
            }
        }
    }
    out
}

/// Uniform-cost search by repeated relaxation over an open/blocked raster.
/// Diagonal steps need both side cells open. Returns infinity when unreachable.
pub fn brute_force_cost(open: &[bool], w: usize, h: usize, start: (usize, usize), goal: (usize, usize)) -> f64 {
    let mut d = vec![f64::INFINITY; w * h];
    d[start.1 * w + start.0] = 0.0;
    loop {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !open[i] || d[i].is_infinite() {
                    continue;
                }
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if (dc, dr) == (0, 0) {
                            continue;
                        }
                        let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                        if nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                            continue;
                        }
                        let j = nr as usize * w + nc as usize;
                        if !open[j] {
                            continue;
                        }
                        let diag = dc != 0 && dr != 0;
                        if diag && !(open[r * w + nc as usize] && open[nr as usize * w + c]) {
                            continue;
                        }
                        let step = if diag { 2f64.sqrt() } else { 1.0 };
                        if d[i] + step < d[j] - 1e-12 {
                            d[j] = d[i] + step;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return d[goal.1 * w + goal.0];
        }
    }
}

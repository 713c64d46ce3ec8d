//! Rasterization of lane graphs into a top-down grid.

use super::LaneGraph;
use serde::{Deserialize, Serialize};

/// Half of a typical 3.5 m lane, used to dilate centerlines.
pub const LANE_HALF_WIDTH: f64 = 1.75;

/// Cell classes: 0 = background, 1 = lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRaster {
    pub origin: [f64; 2],
    /// Meters per pixel.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `height` rows of `width` cells.
    pub cells: Vec<u8>,
}

impl MapRaster {
    pub fn cell(&self, ix: usize, iy: usize) -> u8 {
        self.cells[iy * self.width + ix]
    }

    pub fn lane_cell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a[0] + t * ab[0] - p[0];
    let cy = a[1] + t * ab[1] - p[1];
    (cx * cx + cy * cy).sqrt()
}

/// Rasterizes lane centerlines dilated by [`LANE_HALF_WIDTH`]: a cell is a
/// lane cell iff its center lies within the dilation radius of any
/// centerline segment. `extent` is (width m, height m) from `origin`.
pub fn rasterize_map(
    graph: &LaneGraph,
    origin: [f64; 2],
    resolution: f64,
    extent: (f64, f64),
) -> MapRaster {
    assert!(resolution > 0.0, "resolution must be positive");
    assert!(extent.0 > 0.0 && extent.1 > 0.0, "extent must be positive");
    let width = (extent.0 / resolution).ceil() as usize;
    let height = (extent.1 / resolution).ceil() as usize;
    let mut cells = vec![0u8; width * height];
    let segments: Vec<([f64; 2], [f64; 2])> = graph
        .lanes
        .iter()
        .flat_map(|lane| lane.centerline.windows(2).map(|w| (w[0], w[1])))
        .collect();
    for iy in 0..height {
        for ix in 0..width {
            let center = [
                origin[0] + (ix as f64 + 0.5) * resolution,
                origin[1] + (iy as f64 + 0.5) * resolution,
            ];
            let hit = segments
                .iter()
                .any(|&(a, b)| point_segment_distance(center, a, b) <= LANE_HALF_WIDTH);
            if hit {
                cells[iy * width + ix] = 1;
            }
        }
    }
    MapRaster { origin, resolution, width, height, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Lane;

    fn graph(lanes: Vec<(&str, Vec<[f64; 2]>)>) -> LaneGraph {
        LaneGraph {
            lanes: lanes
                .into_iter()
                .map(|(id, centerline)| Lane {
                    lane_id: id.to_string(),
                    centerline,
                    successors: vec![],
                })
                .collect(),
            raster: None,
        }
    }

    #[test]
    fn empty_graph_all_background() {
        let raster = rasterize_map(&graph(vec![]), [0.0, 0.0], 0.5, (10.0, 10.0));
        assert_eq!(raster.lane_cell_count(), 0);
        assert_eq!(raster.width, 20);
        assert_eq!(raster.height, 20);
    }

    #[test]
    fn horizontal_lane_marks_band() {
        let g = graph(vec![("l0", vec![[0.0, 5.0], [10.0, 5.0]])]);
        let raster = rasterize_map(&g, [0.0, 0.0], 0.5, (10.0, 10.0));
        // the row through y = 5 must be lane, the rows near the borders not
        let mid_row = (5.0 / 0.5) as usize;
        for ix in 0..raster.width {
            assert_eq!(raster.cell(ix, mid_row), 1, "ix={ix}");
            assert_eq!(raster.cell(ix, 0), 0);
            assert_eq!(raster.cell(ix, raster.height - 1), 0);
        }
        // band is horizontal: every marked cell center is within the dilation
        for iy in 0..raster.height {
            let y = (iy as f64 + 0.5) * 0.5;
            let marked = (0..raster.width).any(|ix| raster.cell(ix, iy) == 1);
            assert_eq!(marked, (y - 5.0).abs() <= LANE_HALF_WIDTH, "iy={iy}");
        }
    }

    // independent per-cell scanline oracle: recompute every cell by brute
    // force against all segments of both lanes and compare counts
    #[test]
    fn crossing_lanes_match_scanline_oracle() {
        let g = graph(vec![
            ("h", vec![[0.0, 6.0], [12.0, 6.0]]),
            ("v", vec![[6.0, 0.0], [6.0, 12.0]]),
        ]);
        let res = 0.4;
        let raster = rasterize_map(&g, [0.0, 0.0], res, (12.0, 12.0));

        let mut oracle_count = 0usize;
        let segs = [
            ([0.0, 6.0], [12.0, 6.0]),
            ([6.0, 0.0], [6.0, 12.0]),
        ];
        for iy in 0..raster.height {
            for ix in 0..raster.width {
                let c = [(ix as f64 + 0.5) * res, (iy as f64 + 0.5) * res];
                let mut best = f64::INFINITY;
                for (a, b) in segs {
                    best = best.min(super::point_segment_distance(c, a, b));
                }
                let marked = best <= LANE_HALF_WIDTH;
                if marked {
                    oracle_count += 1;
                }
                assert_eq!(raster.cell(ix, iy) == 1, marked, "cell ({ix},{iy})");
            }
        }
        assert_eq!(raster.lane_cell_count(), oracle_count);
        assert!(oracle_count > 0);
    }

    #[test]
    fn deterministic_for_fixed_inputs() {
        let g = graph(vec![("l", vec![[1.0, 1.0], [9.0, 8.0], [3.0, 9.0]])]);
        let a = rasterize_map(&g, [0.0, 0.0], 0.3, (10.0, 10.0));
        let b = rasterize_map(&g, [0.0, 0.0], 0.3, (10.0, 10.0));
        assert_eq!(a, b);
    }
}

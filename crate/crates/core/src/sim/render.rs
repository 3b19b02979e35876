//! Occupancy-grid rasterization: channel 0 cloth, channel 1 hanger.

use crate::geometry::{point_segment_distance, Vec2};
use crate::types::{BinaryGrid, SimConfig};

use super::{hanger_points, ClothModel, SimState};

/// Lower-left corner and side length of the wrist-camera window.
pub fn wrist_window(cfg: &SimConfig) -> (Vec2, f64) {
    let s = cfg.wrist_window;
    (
        Vec2::new(cfg.collar_center_x - 0.5 * s, cfg.collar_center_y - 0.5 * s),
        s,
    )
}

struct View {
    origin: Vec2,
    width: f64,
    height: f64,
    rows: usize,
    cols: usize,
}

impl View {
    /// Center of cell `(r, c)`; row 0 is the top edge.
    fn center(&self, r: usize, c: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (c as f64 + 0.5) * self.width / self.cols as f64,
            self.origin.y + self.height - (r as f64 + 0.5) * self.height / self.rows as f64,
        )
    }

    fn cell(&self) -> f64 {
        (self.width / self.cols as f64).min(self.height / self.rows as f64)
    }
}

fn rasterize(view: &View, cloth: Option<&ClothModel>, legs: &[(Vec2, Vec2)], thickness: f64) -> BinaryGrid {
    let mut grid = BinaryGrid::new(view.rows, view.cols, 2);
    // thin legs would fall between cell centers on coarse grids
    let radius = (0.5 * thickness).max(0.6 * view.cell());
    for r in 0..view.rows {
        for c in 0..view.cols {
            let p = view.center(r, c);
            if cloth.is_some_and(|cl| cl.contains(p)) {
                grid.set(r, c, 0, true);
            }
            if legs.iter().any(|&(a, b)| point_segment_distance(p, a, b) <= radius) {
                grid.set(r, c, 1, true);
            }
        }
    }
    grid
}

/// Scene grid over the whole workspace and wrist grid over the collar window.
/// A cell is set iff its center is covered.
pub fn render(state: &SimState, cfg: &SimConfig) -> (BinaryGrid, BinaryGrid) {
    let cloth = state.cloth(cfg);
    let (h, tips) = hanger_points(cfg, &state.hanger);
    let legs = [(h, tips[0]), (h, tips[1])];
    render_parts(cfg, Some(&cloth), &legs)
}

pub(crate) fn render_parts(
    cfg: &SimConfig,
    cloth: Option<&ClothModel>,
    legs: &[(Vec2, Vec2)],
) -> (BinaryGrid, BinaryGrid) {
    let scene = View {
        origin: Vec2::new(cfg.x_min, cfg.y_min),
        width: cfg.x_max - cfg.x_min,
        height: cfg.y_max - cfg.y_min,
        rows: cfg.scene_grid,
        cols: cfg.scene_grid,
    };
    let (origin, side) = wrist_window(cfg);
    let wrist = View {
        origin,
        width: side,
        height: side,
        rows: cfg.wrist_grid,
        cols: cfg.wrist_grid,
    };
    (
        rasterize(&scene, cloth, legs, cfg.leg_thickness),
        rasterize(&wrist, cloth, legs, cfg.leg_thickness),
    )
}

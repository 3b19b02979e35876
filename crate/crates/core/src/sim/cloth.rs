//! Kinematic T-shirt outline and the fixed left-gripper obstacle.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_in_polygon, top_profile, Aabb, Vec2};
use crate::types::SimConfig;

/// Vertex indices of the neck band in [`ClothModel::polygon`]: `NL, CL, CR, NR`.
const NECK: [usize; 4] = [1, 2, 3, 4];

/// Cloth outline at a given shoulder offset and vertical displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothModel {
    /// Point held by the left gripper. Does not move with the cloth.
    pub anchor: Vec2,
    /// Left and right end of the collar opening.
    pub collar: [Vec2; 2],
    pub polygon: Vec<Vec2>,
    pub free_shoulder_offset: f64,
    pub attached_to_hanger: bool,
}

impl ClothModel {
    /// Builds the outline. `dy` shifts the whole cloth vertically (lift minus slip).
    pub fn new(cfg: &SimConfig, offset: f64, dy: f64) -> Self {
        let c = Vec2::new(cfg.collar_center_x, cfg.collar_center_y);
        let hw = 0.5 * cfg.collar_width;
        let o = offset;
        let rel = [
            (-0.26, -0.09),                  // left shoulder, grasped
            (-hw, -0.03),                    // neck, left
            (-hw, 0.0),                      // collar, left
            (hw, 0.3 * o),                   // collar, right
            (hw, -0.03 + 0.5 * o),           // neck, right
            (0.26, -0.09 + o),               // free shoulder
            (0.34, -0.15 + o),               // right sleeve
            (0.30, -0.21 + o),
            (0.23, -0.18 + 0.5 * o),         // right armpit
            (0.23, -0.48),                   // hem
            (-0.23, -0.48),
            (-0.23, -0.18),                  // left armpit
            (-0.30, -0.21),                  // left sleeve
            (-0.34, -0.15),
        ];
        let polygon: Vec<Vec2> = rel.iter().map(|&(x, y)| Vec2::new(c.x + x, c.y + y + dy)).collect();
        Self {
            anchor: Vec2::new(c.x - 0.26, c.y - 0.09),
            collar: [polygon[NECK[1]], polygon[NECK[2]]],
            polygon,
            free_shoulder_offset: offset,
            attached_to_hanger: false,
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.polygon)
    }

    pub fn collar_min_y(&self) -> f64 {
        self.collar[0].y.min(self.collar[1].y)
    }

    /// Region below the collar opening that a leg may enter freely.
    pub fn collar_interior(&self, depth: f64) -> [Vec2; 4] {
        let [l, r] = self.collar;
        [l, r, Vec2::new(r.x, r.y - depth), Vec2::new(l.x, l.y - depth)]
    }

    pub fn in_collar_interior(&self, p: Vec2, depth: f64) -> bool {
        point_in_polygon(p, &self.collar_interior(depth))
    }

    /// How far `p` lies below the top edge of the cloth at its x-coordinate.
    pub fn depth_below_top(&self, p: Vec2) -> f64 {
        top_profile(&self.polygon, p.x).map_or(0.0, |top| (top - p.y).max(0.0))
    }

    /// Neck band vertices `NL, CL, CR, NR`.
    pub fn neck(&self) -> [Vec2; 4] {
        NECK.map(|i| self.polygon[i])
    }
}

/// The left gripper and wrist, which the hanger must not touch.
pub fn gripper_box(cfg: &SimConfig) -> Aabb {
    let a = Vec2::new(cfg.collar_center_x - 0.26, cfg.collar_center_y - 0.09);
    Aabb {
        min: Vec2::new(a.x - 0.06, a.y - 0.03),
        max: Vec2::new(a.x + 0.02, a.y + 0.11),
    }
}

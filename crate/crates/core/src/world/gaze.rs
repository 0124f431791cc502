//! Ground-truth gaze: a normalized Gaussian mixture over the 9×16 grid,
//! centred on critical agents, plus a weak road-centre prior.

use crate::attention_map::{AttentionMap, GRID_COLS, GRID_ROWS};
use crate::world::scene::{
    cue_position, lead_vehicle, pedestrian_in_zone, AgentKind, Camera, SceneState, LANE_HALF_WIDTH_M,
};

pub const FOCUS_SIGMA_CELLS: f64 = 0.6;
pub const PRIOR_SIGMA_CELLS: f64 = 1.5;
pub const PRIOR_WEIGHT: f64 = 0.05;

pub const PEDESTRIAN_WEIGHT: f64 = 1.3;
pub const LEAD_VEHICLE_WEIGHT: f64 = 1.0;
pub const ADJACENT_VEHICLE_WEIGHT: f64 = 0.35;

/// A gaze focus in continuous grid coordinates (cell `(i, j)` spans `[i, i+1) × [j, j+1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeFocus {
    pub row: f64,
    pub col: f64,
    pub weight: f64,
}

pub fn road_prior(camera: &Camera) -> GazeFocus {
    GazeFocus {
        row: (camera.horizon + 0.03) * GRID_ROWS as f64,
        col: GRID_COLS as f64 / 2.0,
        weight: 1.0,
    }
}

pub fn critical_foci(camera: &Camera, scene: &SceneState) -> Vec<GazeFocus> {
    let mut foci = Vec::new();
    for a in &scene.agents {
        let weight = if pedestrian_in_zone(camera, a) {
            PEDESTRIAN_WEIGHT
        } else if lead_vehicle(a) {
            LEAD_VEHICLE_WEIGHT
        } else if a.kind == AgentKind::Vehicle
            && a.lateral_m.abs() < 3.0 * LANE_HALF_WIDTH_M
            && a.distance_m < 25.0
        {
            ADJACENT_VEHICLE_WEIGHT
        } else {
            continue;
        };
        let (u, v) = cue_position(camera, a);
        if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
            continue;
        }
        foci.push(GazeFocus {
            row: v * GRID_ROWS as f64,
            col: u * GRID_COLS as f64,
            weight,
        });
    }
    foci
}

/// Mixture of isotropic Gaussians evaluated at cell centres.
pub fn map_from_foci(frame: usize, foci: &[GazeFocus], prior: GazeFocus) -> AttentionMap {
    let mut weights = vec![0.0; GRID_ROWS * GRID_COLS];
    let mut add = |f: &GazeFocus, sigma: f64, weight: f64| {
        let norm = weight / (2.0 * std::f64::consts::PI * sigma * sigma);
        for i in 0..GRID_ROWS {
            for j in 0..GRID_COLS {
                let dy = i as f64 + 0.5 - f.row;
                let dx = j as f64 + 0.5 - f.col;
                weights[i * GRID_COLS + j] += norm * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            }
        }
    };
    if foci.is_empty() {
        add(&prior, PRIOR_SIGMA_CELLS, 1.0);
    } else {
        for f in foci {
            add(f, FOCUS_SIGMA_CELLS, f.weight);
        }
        add(&prior, PRIOR_SIGMA_CELLS, PRIOR_WEIGHT);
    }
    AttentionMap::from_weights(frame, weights).expect("mixture weights are positive")
}

pub fn gaze_ground_truth(camera: &Camera, scene: &SceneState) -> AttentionMap {
    map_from_foci(scene.frame, &critical_foci(camera, scene), road_prior(camera))
}

//! Rasterizes a [`SceneState`] into an RGB8 frame.

use serde::{Deserialize, Serialize};

use crate::world::config::WorldConfig;
use crate::world::scene::{agent_extent, cue_position, AgentKind, AgentState, Camera, SceneState, ROAD_HALF_WIDTH_M};

/// Speed shown at full gauge width.
pub const GAUGE_MAX_KMH: f64 = 80.0;

const SKY: [f64; 3] = [118.0, 165.0, 222.0];
const GRASS: [f64; 3] = [74.0, 122.0, 62.0];
const ROAD: [f64; 3] = [92.0, 92.0, 98.0];
const MARKING: [f64; 3] = [225.0, 225.0, 215.0];
const GAUGE_BG: [f64; 3] = [24.0, 24.0, 24.0];
const GAUGE_BAR: [f64; 3] = [236.0, 236.0, 236.0];
pub const CUE_BRIGHT: [u8; 3] = [255, 214, 40];
pub const CUE_DARK: [u8; 3] = [48, 30, 28];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub timestamp: f64,
    /// Row-major RGB8.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, timestamp: f64) -> Self {
        Frame {
            height,
            width,
            timestamp,
            pixels: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn fill_rect(&mut self, top: isize, left: isize, bottom: isize, right: isize, rgb: [u8; 3]) {
        let t = top.max(0) as usize;
        let l = left.max(0) as usize;
        let b = (bottom.min(self.height as isize)).max(0) as usize;
        let r = (right.min(self.width as isize)).max(0) as usize;
        for y in t..b {
            for x in l..r {
                self.put(y, x, rgb);
            }
        }
    }
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    [
        c[0].round().clamp(0.0, 255.0) as u8,
        c[1].round().clamp(0.0, 255.0) as u8,
        c[2].round().clamp(0.0, 255.0) as u8,
    ]
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Pixel rectangle of the cue glyph: `(top, left, side)`.
pub fn glyph_rect(cfg: &WorldConfig, camera: &Camera, agent: &AgentState) -> (isize, isize, usize) {
    let (h, w) = cfg.frame_size();
    let side = cfg.cue_glyph_px / cfg.scale;
    let (u, v) = cue_position(camera, agent);
    let cy = (v * h as f64).round() as isize;
    let cx = (u * w as f64).round() as isize;
    (cy - side as isize / 2, cx - side as isize / 2, side)
}

/// Draws the striped glyph: horizontal stripes when the cue is on, vertical
/// when off. Both states have the same colour histogram.
pub fn draw_glyph(frame: &mut Frame, top: isize, left: isize, side: usize, stripe: usize, on: bool) {
    for dy in 0..side {
        for dx in 0..side {
            let y = top + dy as isize;
            let x = left + dx as isize;
            if y < 0 || x < 0 || y >= frame.height as isize || x >= frame.width as isize {
                continue;
            }
            let k = if on { dy / stripe } else { dx / stripe };
            frame.put(y as usize, x as usize, if k % 2 == 0 { CUE_BRIGHT } else { CUE_DARK });
        }
    }
}

fn draw_background(frame: &mut Frame, camera: &Camera, odometer_m: f64) {
    let (h, w) = (frame.height, frame.width);
    let gauge_row = (camera.gauge_top * h as f64).round() as usize;
    for y in 0..gauge_row.min(h) {
        let v = (y as f64 + 0.5) / h as f64;
        if v < camera.horizon {
            let t = v / camera.horizon;
            let c = to_u8(mix(SKY, [190.0, 210.0, 235.0], t));
            for x in 0..w {
                frame.put(y, x, c);
            }
            continue;
        }
        let z = camera.ground_distance(v);
        let road_half = camera.focal_u * ROAD_HALF_WIDTH_M / z;
        let line_half = (camera.focal_u * 0.09 / z).max(0.5 / w as f64);
        let dashed = (z + odometer_m).rem_euclid(6.0) < 3.0;
        let grass = to_u8(GRASS);
        let road = to_u8(ROAD);
        let marking = to_u8(MARKING);
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let du = (u - 0.5).abs();
            let lane_line = camera.focal_u * 1.75 / z;
            let c = if du > road_half {
                grass
            } else if (du - road_half).abs() < line_half || (dashed && (du - lane_line).abs() < line_half) {
                marking
            } else {
                road
            };
            frame.put(y, x, c);
        }
    }
}

fn draw_gauge(frame: &mut Frame, camera: &Camera, speed_kmh: f64) {
    let (h, w) = (frame.height, frame.width);
    let top = (camera.gauge_top * h as f64).round() as usize;
    let filled = (speed_kmh / GAUGE_MAX_KMH).clamp(0.0, 1.0) * w as f64;
    for x in 0..w {
        let cover = (filled - x as f64).clamp(0.0, 1.0);
        let c = to_u8(mix(GAUGE_BG, GAUGE_BAR, cover));
        for y in top..h {
            frame.put(y, x, c);
        }
    }
}

fn draw_agent(frame: &mut Frame, cfg: &WorldConfig, camera: &Camera, a: &AgentState) {
    let (h, w) = (frame.height as f64, frame.width as f64);
    let (width_m, height_m, _) = agent_extent(a.kind);
    let (u, v_ground) = camera.project(a.lateral_m, a.distance_m, 0.0);
    let half_w = camera.focal_u * width_m / 2.0 / a.distance_m;
    match a.kind {
        AgentKind::Decoy => {
            let (_, v_top) = camera.project(a.lateral_m, a.distance_m, height_m);
            let (_, v_board) = camera.project(a.lateral_m, a.distance_m, 2.1);
            let post = (camera.focal_u * 0.12 / a.distance_m * w).max(1.0);
            let cx = u * w;
            frame.fill_rect(
                (v_board * h) as isize,
                (cx - post / 2.0) as isize,
                (v_ground * h) as isize,
                (cx + post / 2.0).ceil() as isize,
                [110, 110, 110],
            );
            frame.fill_rect(
                (v_top * h) as isize,
                ((u - half_w) * w) as isize,
                (v_board * h).ceil() as isize,
                ((u + half_w) * w).ceil() as isize,
                a.color,
            );
        }
        _ => {
            let (_, v_top) = camera.project(a.lateral_m, a.distance_m, height_m);
            frame.fill_rect(
                (v_top * h) as isize,
                ((u - half_w) * w) as isize,
                (v_ground * h).ceil() as isize,
                ((u + half_w) * w).ceil() as isize,
                a.color,
            );
        }
    }
    let (top, left, side) = glyph_rect(cfg, camera, a);
    draw_glyph(frame, top, left, side, cfg.cue_size_px / cfg.scale, a.cue_on);
}

pub fn render(cfg: &WorldConfig, camera: &Camera, scene: &SceneState) -> Frame {
    let (h, w) = cfg.frame_size();
    let mut frame = Frame::new(h, w, scene.frame as f64 / cfg.frame_rate);
    draw_background(&mut frame, camera, scene.odometer_m);
    let mut order: Vec<&AgentState> = scene.agents.iter().collect();
    order.sort_by(|a, b| b.distance_m.total_cmp(&a.distance_m).then(a.id.cmp(&b.id)));
    for a in order {
        draw_agent(&mut frame, cfg, camera, a);
    }
    draw_gauge(&mut frame, camera, scene.speed_kmh);
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyph_states_share_colour_histogram() {
        let mut on = Frame::new(8, 8, 0.0);
        let mut off = Frame::new(8, 8, 0.0);
        draw_glyph(&mut on, 0, 0, 8, 2, true);
        draw_glyph(&mut off, 0, 0, 8, 2, false);
        let count = |f: &Frame| f.pixels.chunks(3).filter(|p| p == &CUE_BRIGHT).count();
        assert_eq!(count(&on), count(&off));
        assert_ne!(on, off);
    }

    #[test]
    fn gauge_width_tracks_speed() {
        let cfg = WorldConfig::toy(4);
        let cam = Camera::default();
        let scene = SceneState {
            frame: 0,
            speed_kmh: 40.0,
            odometer_m: 0.0,
            agents: vec![],
        };
        let f = render(&cfg, &cam, &scene);
        let y = f.height - 1;
        let lit = (0..f.width).filter(|&x| f.pixel(y, x)[0] > 200).count();
        assert_eq!(lit, f.width / 2);
    }
}

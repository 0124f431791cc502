//! Synthetic driving world: scene simulation, rendering, ground-truth gaze
//! and speed, and the on-disk dataset format.

pub mod config;
pub mod dataset;
pub mod gaze;
pub mod render;
pub mod scene;

use serde::{Deserialize, Serialize};

use crate::attention_map::AttentionMap;
use crate::error::Result;
use crate::seed;

pub use config::{ControlGains, WorldConfig};
pub use dataset::{dataset_hash, read_clip, read_dataset, read_manifest, write_dataset, DatasetManifest};
pub use gaze::gaze_ground_truth;
pub use render::Frame;
pub use scene::{Camera, SceneState, SceneTrace};

pub const PEDESTRIAN_TAG: &str = "pedestrian";
pub const LEAD_VEHICLE_TAG: &str = "lead-vehicle";

/// Words in a justification tag that mark a pedestrian-involved frame.
pub const PEDESTRIAN_WORDS: [&str; 3] = ["pedestrian", "person", "people"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub id: String,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
    pub speed: Vec<f64>,
    pub gaze: Vec<AttentionMap>,
    pub tags: Vec<Vec<String>>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| (f.height, f.width))
    }

    pub fn is_pedestrian_frame(&self, t: usize) -> bool {
        self.tags[t]
            .iter()
            .any(|tag| PEDESTRIAN_WORDS.iter().any(|w| tag.to_lowercase().contains(w)))
    }
}

pub fn frame_tags(camera: &Camera, scene: &SceneState) -> Vec<String> {
    let mut tags = Vec::new();
    if scene.agents.iter().any(|a| scene::pedestrian_in_zone(camera, a)) {
        tags.push(PEDESTRIAN_TAG.to_string());
    }
    if scene.agents.iter().any(scene::lead_vehicle) {
        tags.push(LEAD_VEHICLE_TAG.to_string());
    }
    tags
}

pub fn clip_id(seed: u64) -> String {
    format!("clip-{seed:016x}")
}

/// Generates a clip and the scene trace it was rendered from.
pub fn generate_clip_with_trace(config: &WorldConfig, seed: u64) -> Result<(VideoClip, SceneTrace)> {
    config.validate()?;
    let trace = scene::simulate(config, seed::rng_for(seed, "world"));
    let camera = Camera::default();
    let frames = trace
        .states
        .iter()
        .map(|s| render::render(config, &camera, s))
        .collect();
    let clip = VideoClip {
        id: clip_id(seed),
        frame_rate: config.frame_rate,
        frames,
        speed: trace.states.iter().map(|s| s.speed_kmh).collect(),
        gaze: trace.states.iter().map(|s| gaze_ground_truth(&camera, s)).collect(),
        tags: trace.states.iter().map(|s| frame_tags(&camera, s)).collect(),
    };
    Ok((clip, trace))
}

pub fn generate_clip(config: &WorldConfig, seed: u64) -> Result<VideoClip> {
    generate_clip_with_trace(config, seed).map(|(c, _)| c)
}

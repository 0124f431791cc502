//! Scene simulation and the ego speed law.
//!
//! Agents live in road coordinates (lateral metres, distance ahead in
//! metres). The ego speed follows a first-order approach toward a target
//! computed by [`target_speed`] from the current scene and from cue states
//! one lead interval earlier.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;
use crate::world::config::{ControlGains, WorldConfig};

pub const LANE_HALF_WIDTH_M: f64 = 1.75;
pub const ROAD_HALF_WIDTH_M: f64 = 5.25;
pub const VEHICLE_ZONE_M: f64 = 45.0;
pub const PEDESTRIAN_ZONE_M: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Decoy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub kind: AgentKind,
    pub lateral_m: f64,
    pub distance_m: f64,
    pub cue_on: bool,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub frame: usize,
    pub speed_kmh: f64,
    pub odometer_m: f64,
    pub agents: Vec<AgentState>,
}

/// Everything needed to replay the speed law independently of rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTrace {
    pub cruise_kmh: f64,
    pub frame_rate: f64,
    pub gains: ControlGains,
    pub lead_frames: usize,
    pub states: Vec<SceneState>,
}

/// Pinhole camera over normalized image coordinates (`u` right, `v` down, both in [0, 1]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub horizon: f64,
    pub focal_u: f64,
    pub focal_v: f64,
    pub height_m: f64,
    /// Top of the speed gauge band; the road view ends here.
    pub gauge_top: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            horizon: 0.42,
            focal_u: 1.14,
            focal_v: 1.34,
            height_m: 1.4,
            gauge_top: 0.9,
        }
    }
}

impl Camera {
    /// Image position of a point `elevation_m` above the road.
    pub fn project(&self, lateral_m: f64, distance_m: f64, elevation_m: f64) -> (f64, f64) {
        let z = distance_m.max(0.1);
        (
            0.5 + self.focal_u * lateral_m / z,
            self.horizon + self.focal_v * (self.height_m - elevation_m) / z,
        )
    }

    /// Road distance seen at image row `v` (below the horizon).
    pub fn ground_distance(&self, v: f64) -> f64 {
        self.focal_v * self.height_m / (v - self.horizon).max(1e-6)
    }

    pub fn in_view(&self, u: f64, v: f64) -> bool {
        (0.0..=1.0).contains(&u) && v >= self.horizon && v <= self.gauge_top
    }
}

/// Physical extents (width, height, elevation of the cue centre) in metres.
pub fn agent_extent(kind: AgentKind) -> (f64, f64, f64) {
    match kind {
        AgentKind::Vehicle => (1.8, 1.5, 0.9),
        AgentKind::Pedestrian => (0.5, 1.7, 1.55),
        AgentKind::Decoy => (1.2, 3.0, 2.6),
    }
}

/// Image position of the agent's cue glyph.
pub fn cue_position(camera: &Camera, agent: &AgentState) -> (f64, f64) {
    let (_, _, elev) = agent_extent(agent.kind);
    camera.project(agent.lateral_m, agent.distance_m, elev)
}

/// Whether the agent's ground contact point is on screen.
pub fn agent_visible(camera: &Camera, agent: &AgentState) -> bool {
    let (u, v) = camera.project(agent.lateral_m, agent.distance_m, 0.0);
    camera.in_view(u, v)
}

pub fn pedestrian_in_zone(camera: &Camera, agent: &AgentState) -> bool {
    agent.kind == AgentKind::Pedestrian
        && agent.distance_m < PEDESTRIAN_ZONE_M
        && agent_visible(camera, agent)
}

pub fn lead_vehicle(agent: &AgentState) -> bool {
    agent.kind == AgentKind::Vehicle
        && agent.lateral_m.abs() < LANE_HALF_WIDTH_M
        && agent.distance_m < VEHICLE_ZONE_M
}

/// Speed target for the current scene. `delayed` is the scene one lead
/// interval earlier (absent near clip start); cue states are read from it.
pub fn target_speed(
    gains: &ControlGains,
    cruise_kmh: f64,
    camera: &Camera,
    now: &SceneState,
    delayed: Option<&SceneState>,
) -> f64 {
    let cue = |id: u32| {
        delayed
            .and_then(|s| s.agents.iter().find(|a| a.id == id))
            .is_some_and(|a| a.cue_on)
    };
    let mut target = cruise_kmh;
    for a in &now.agents {
        if lead_vehicle(a) {
            let headway = (a.distance_m - gains.min_headway_m).max(0.0);
            target = target.min(gains.follow_kmh_per_m * headway);
            if cue(a.id) {
                target = target.min(cruise_kmh - gains.brake_drop_kmh);
            }
        } else if pedestrian_in_zone(camera, a) {
            target = target.min(cruise_kmh - gains.pedestrian_caution_kmh);
            if cue(a.id) {
                target = target.min(gains.pedestrian_crawl_kmh);
            }
        }
    }
    target.max(0.0)
}

pub fn speed_step(gains: &ControlGains, frame_rate: f64, speed_kmh: f64, target_kmh: f64) -> f64 {
    let dt = 1.0 / frame_rate;
    (speed_kmh + dt * gains.response_per_s * (target_kmh - speed_kmh)).max(0.0)
}

#[derive(Clone, Debug)]
struct Slot {
    kind: AgentKind,
    agent: Option<AgentState>,
    /// Seconds until respawn while empty.
    gap_s: f64,
    /// Vehicle: relative velocity (m/s). Pedestrian: seconds the cue has been on.
    aux: f64,
    /// Pedestrian: side of the road it started on.
    side: f64,
    crossed: bool,
}

pub(crate) struct Simulator<'a> {
    cfg: &'a WorldConfig,
    camera: Camera,
    rng: Rng,
    slots: Vec<Slot>,
    next_id: u32,
    pub cruise_kmh: f64,
}

fn rate_flip(rng: &mut Rng, rate_per_s: f64, dt: f64) -> bool {
    rng.gen::<f64>() < 1.0 - (-rate_per_s * dt).exp()
}

fn random_color(rng: &mut Rng, kind: AgentKind) -> [u8; 3] {
    match kind {
        AgentKind::Vehicle => [
            rng.gen_range(60..230),
            rng.gen_range(40..200),
            rng.gen_range(40..220),
        ],
        AgentKind::Pedestrian => [
            rng.gen_range(20..90),
            rng.gen_range(20..90),
            rng.gen_range(60..160),
        ],
        AgentKind::Decoy => [rng.gen_range(170..230), rng.gen_range(170..230), rng.gen_range(170..230)],
    }
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a WorldConfig, mut rng: Rng) -> Self {
        let (lo, hi) = cfg.gains.cruise_kmh;
        let cruise_kmh = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let mut slots = Vec::new();
        for (kind, n) in [
            (AgentKind::Vehicle, cfg.vehicles),
            (AgentKind::Pedestrian, cfg.pedestrians),
            (AgentKind::Decoy, cfg.decoys),
        ] {
            for _ in 0..n {
                slots.push(Slot {
                    kind,
                    agent: None,
                    gap_s: 0.0,
                    aux: 0.0,
                    side: 1.0,
                    crossed: false,
                });
            }
        }
        let mut sim = Simulator {
            cfg,
            camera: Camera::default(),
            rng,
            slots,
            next_id: 0,
            cruise_kmh,
        };
        for i in 0..sim.slots.len() {
            if sim.rng.gen::<f64>() < 0.7 {
                sim.spawn(i, true);
            } else {
                sim.slots[i].gap_s = sim.rng.gen_range(0.0..4.0);
            }
        }
        sim
    }

    fn spawn(&mut self, i: usize, initial: bool) {
        let id = self.next_id;
        self.next_id += 1;
        let rng = &mut self.rng;
        let kind = self.slots[i].kind;
        let color = random_color(rng, kind);
        let slot = &mut self.slots[i];
        slot.aux = 0.0;
        slot.crossed = false;
        let (lateral_m, distance_m, cue_on) = match kind {
            AgentKind::Vehicle => {
                let lane = if rng.gen::<f64>() < 0.6 {
                    0.0
                } else if rng.gen::<bool>() {
                    -3.5
                } else {
                    3.5
                };
                slot.aux = rng.gen_range(-1.0..1.0);
                let z = if initial { rng.gen_range(12.0..50.0) } else { rng.gen_range(25.0..55.0) };
                (lane + rng.gen_range(-0.3..0.3), z, rng.gen::<f64>() < 0.2)
            }
            AgentKind::Pedestrian => {
                slot.side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let z = if initial { rng.gen_range(14.0..38.0) } else { rng.gen_range(24.0..38.0) };
                (slot.side * rng.gen_range(3.8..5.0), z, false)
            }
            AgentKind::Decoy => {
                let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let z = if initial { rng.gen_range(15.0..55.0) } else { rng.gen_range(35.0..55.0) };
                (side * rng.gen_range(6.5..9.0), z, rng.gen::<bool>())
            }
        };
        slot.agent = Some(AgentState {
            id,
            kind,
            lateral_m,
            distance_m,
            cue_on,
            color,
        });
    }

    pub fn snapshot(&self, frame: usize, speed_kmh: f64, odometer_m: f64) -> SceneState {
        SceneState {
            frame,
            speed_kmh,
            odometer_m,
            agents: self.slots.iter().filter_map(|s| s.agent.clone()).collect(),
        }
    }

    /// Advances agents by one frame given the ego speed during that frame.
    pub fn advance(&mut self, speed_kmh: f64) {
        let dt = 1.0 / self.cfg.frame_rate;
        let lead = self.cfg.gains.cue_lead_s;
        let ego = speed_kmh / 3.6 * dt;
        for i in 0..self.slots.len() {
            if self.slots[i].agent.is_none() {
                self.slots[i].gap_s -= dt;
                if self.slots[i].gap_s <= 0.0 {
                    self.spawn(i, false);
                }
                continue;
            }
            let camera = self.camera;
            let rng = &mut self.rng;
            let slot = &mut self.slots[i];
            let a = slot.agent.as_mut().expect("active slot");
            let mut despawn = false;
            match a.kind {
                AgentKind::Vehicle => {
                    let brake = if a.cue_on { -1.6 } else { 0.25 };
                    slot.aux += dt * (-0.4 * slot.aux + brake) + rng.gen_range(-1.0..1.0) * 0.6 * dt.sqrt();
                    a.distance_m += slot.aux * dt;
                    if a.distance_m < 9.0 {
                        a.distance_m = 9.0;
                        slot.aux = slot.aux.abs();
                    }
                    if a.distance_m > 62.0 {
                        a.distance_m = 62.0;
                        slot.aux = -slot.aux.abs();
                    }
                    let flip = if a.cue_on { 1.0 / 2.5 } else { 1.0 / 7.0 };
                    if rate_flip(rng, flip, dt) {
                        a.cue_on = !a.cue_on;
                    }
                    if rate_flip(rng, 1.0 / 22.0, dt) {
                        despawn = true;
                    }
                }
                AgentKind::Pedestrian => {
                    a.distance_m -= ego;
                    if a.cue_on {
                        slot.aux += dt;
                        if slot.aux >= lead {
                            a.lateral_m -= slot.side * 1.4 * dt;
                            if a.lateral_m * slot.side < -3.8 {
                                a.cue_on = false;
                                slot.crossed = true;
                            }
                        }
                    } else if !slot.crossed
                        && a.distance_m < PEDESTRIAN_ZONE_M
                        && a.distance_m > 9.0
                        && rate_flip(rng, 1.0 / 4.0, dt)
                    {
                        a.cue_on = true;
                        slot.aux = 0.0;
                    }
                    if a.distance_m < 4.0 || (!agent_visible(&camera, a) && a.distance_m < 20.0 && !a.cue_on) {
                        despawn = true;
                    }
                }
                AgentKind::Decoy => {
                    a.distance_m -= ego;
                    if rate_flip(rng, 1.0 / 1.5, dt) {
                        a.cue_on = !a.cue_on;
                    }
                    if a.distance_m < 4.0 || !agent_visible(&camera, a) {
                        despawn = true;
                    }
                }
            }
            if despawn {
                slot.agent = None;
                slot.gap_s = match slot.kind {
                    AgentKind::Vehicle => rng.gen_range(1.0..8.0),
                    AgentKind::Pedestrian => rng.gen_range(4.0..16.0),
                    AgentKind::Decoy => rng.gen_range(0.5..3.0),
                };
            }
        }
    }

    pub fn camera(&self) -> Camera {
        self.camera
    }
}

/// Runs the full simulation, returning per-frame scene states and speeds.
pub fn simulate(cfg: &WorldConfig, rng: Rng) -> SceneTrace {
    let mut sim = Simulator::new(cfg, rng);
    let camera = sim.camera();
    let n = cfg.frame_count();
    let lead = cfg.lead_frames();
    let mut states: Vec<SceneState> = Vec::with_capacity(n);
    let mut speed = sim.cruise_kmh;
    let mut odometer = 0.0;
    for t in 0..n {
        let state = sim.snapshot(t, speed, odometer);
        let delayed = t.checked_sub(lead).map(|d| &states[d]);
        let target = target_speed(&cfg.gains, sim.cruise_kmh, &camera, &state, delayed);
        states.push(state);
        let next = speed_step(&cfg.gains, cfg.frame_rate, speed, target);
        sim.advance(speed);
        odometer += speed / 3.6 / cfg.frame_rate;
        speed = next;
    }
    SceneTrace {
        cruise_kmh: sim.cruise_kmh,
        frame_rate: cfg.frame_rate,
        gains: cfg.gains.clone(),
        lead_frames: lead,
        states,
    }
}

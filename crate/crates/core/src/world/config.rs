use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-scale frame size; the toy-scale factor divides both.
pub const FULL_FRAME: (usize, usize) = (720, 1280);
/// Full-scale peripheral input size.
pub const FULL_PERIPHERAL: (usize, usize) = (72, 128);

/// Parameters of the ego speed law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// First-order approach rate of speed toward its target, per second.
    pub response_per_s: f64,
    /// Cruise speed range (km/h), drawn once per clip.
    pub cruise_kmh: (f64, f64),
    /// Target reduction while the lead vehicle's brake cue is active.
    pub brake_drop_kmh: f64,
    /// Target speed while a pedestrian signals intent to cross.
    pub pedestrian_crawl_kmh: f64,
    /// Target reduction while any pedestrian is near the road.
    pub pedestrian_caution_kmh: f64,
    /// Following limit: km/h allowed per metre of headway beyond `min_headway_m`.
    pub follow_kmh_per_m: f64,
    pub min_headway_m: f64,
    /// The law reacts to a cue this many seconds after it appears.
    pub cue_lead_s: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains {
            response_per_s: 0.9,
            cruise_kmh: (22.0, 46.0),
            brake_drop_kmh: 18.0,
            pedestrian_crawl_kmh: 4.0,
            pedestrian_caution_kmh: 4.0,
            follow_kmh_per_m: 2.2,
            min_headway_m: 7.0,
            cue_lead_s: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Integer divisor applied to every resolution (1 = 720×1280 frames).
    pub scale: usize,
    pub clip_seconds: f64,
    pub frame_rate: f64,
    /// Concurrent vehicle slots.
    pub vehicles: usize,
    /// Concurrent pedestrian slots.
    pub pedestrians: usize,
    /// Roadside signs carrying cue-like glyphs that never affect speed.
    pub decoys: usize,
    /// Stripe width of the cue glyph in full-scale pixels.
    pub cue_size_px: usize,
    /// Side of the square cue glyph in full-scale pixels.
    pub cue_glyph_px: usize,
    pub gains: ControlGains,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            scale: 1,
            clip_seconds: 40.0,
            frame_rate: 10.0,
            vehicles: 2,
            pedestrians: 1,
            decoys: 3,
            cue_size_px: 8,
            cue_glyph_px: 32,
            gains: ControlGains::default(),
        }
    }
}

impl WorldConfig {
    pub fn toy(scale: usize) -> Self {
        WorldConfig {
            scale,
            ..Default::default()
        }
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (FULL_FRAME.0 / self.scale, FULL_FRAME.1 / self.scale)
    }

    pub fn peripheral_size(&self) -> (usize, usize) {
        (FULL_PERIPHERAL.0 / self.scale, FULL_PERIPHERAL.1 / self.scale)
    }

    pub fn frame_count(&self) -> usize {
        (self.clip_seconds * self.frame_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scale == 0 || FULL_FRAME.0 % self.scale != 0 || FULL_FRAME.1 % self.scale != 0 {
            return bad("scale must evenly divide 720×1280");
        }
        if FULL_PERIPHERAL.0 % self.scale != 0 || FULL_PERIPHERAL.1 % self.scale != 0 {
            return bad("scale must evenly divide the 72×128 peripheral size");
        }
        if !(self.clip_seconds > 0.0) || !(self.frame_rate > 0.0) || self.frame_count() == 0 {
            return bad("clip length and frame rate must be positive");
        }
        if self.cue_size_px % self.scale != 0 || self.cue_glyph_px % self.scale != 0 || self.cue_size_px == 0 {
            return bad("cue sizes must be positive multiples of the scale");
        }
        if self.cue_glyph_px < 2 * self.cue_size_px {
            return bad("cue glyph must hold at least one stripe period");
        }
        let downsample = FULL_FRAME.0 / FULL_PERIPHERAL.0;
        if self.cue_size_px >= downsample {
            return bad("cue detail must be smaller than the peripheral downsample factor");
        }
        let g = &self.gains;
        if g.cruise_kmh.0 < 0.0 || g.cruise_kmh.1 < g.cruise_kmh.0 || g.response_per_s <= 0.0 || g.cue_lead_s < 0.0 {
            return bad("control gains out of range");
        }
        Ok(())
    }

    /// Cue delay in whole frames.
    pub fn lead_frames(&self) -> usize {
        (self.gains.cue_lead_s * self.frame_rate).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        WorldConfig::default().validate().unwrap();
        WorldConfig::toy(4).validate().unwrap();
        assert_eq!(WorldConfig::toy(4).frame_size(), (180, 320));
        assert_eq!(WorldConfig::toy(4).peripheral_size(), (18, 32));
    }

    #[test]
    fn rejects_resolvable_cue() {
        let cfg = WorldConfig {
            cue_size_px: 12,
            cue_glyph_px: 48,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_odd_scale() {
        assert!(WorldConfig::toy(7).validate().is_err());
    }
}

//! Seeded synthetic driving scenes with a known rule linking what the camera
//! sees to what the driver does.
//!
//! Each session follows a lead car in the ego lane. After a standing start,
//! the gap to the lead car evolves in segments that either close or open it,
//! and each segment independently shows or hides a stop cue (a traffic light
//! or stop sign) at the stop line. The driver reacts after a fixed lag:
//!
//! | lead car    | cue shown     | no cue              |
//! |-------------|---------------|---------------------|
//! | approaching | full braking  | slight acceleration |
//! | receding    | slight braking| full acceleration   |
//!
//! Acceleration therefore happens both while the lead car approaches and
//! while it recedes; the cue in the traffic view is what separates them.
//! Adjacent-lane vehicles and roadside pedestrians are distractors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    Action, Category, DerivedLabel, Detection, FrameDetections, Scenario, SensorSample,
};
use crate::error::{Error, Result};
use crate::eval::derive_seed;

/// Pinhole camera looking down the ego lane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    /// Mounting height above the road, metres.
    pub mount_height_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 1280,
            height: 720,
            focal_px: 1000.0,
            mount_height_m: 1.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadConfig {
    pub gap_min_m: f64,
    pub gap_max_m: f64,
    /// Range of the closing or opening speed of a segment, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    pub segment_min_s: f64,
    pub segment_max_s: f64,
}

impl Default for LeadConfig {
    fn default() -> Self {
        LeadConfig {
            gap_min_m: 5.0,
            gap_max_m: 30.0,
            speed_min: 2.0,
            speed_max: 5.0,
            segment_min_s: 3.0,
            segment_max_s: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Probability that a segment shows a stop cue.
    pub cue_probability: f64,
    /// Share of cues drawn as stop signs rather than traffic lights.
    pub stop_sign_share: f64,
    /// Upper bound of adjacent-lane vehicles per session.
    pub max_adjacent_vehicles: usize,
    /// Expected pedestrians entering the scene per second.
    pub pedestrian_rate: f64,
    /// Probability that a segment is a sharp turn (steering beyond 30°).
    pub turn_probability: f64,
    pub standstill_min_s: f64,
    pub standstill_max_s: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            cue_probability: 0.5,
            stop_sign_share: 0.5,
            max_adjacent_vehicles: 2,
            pedestrian_rate: 0.2,
            turn_probability: 0.03,
            standstill_min_s: 1.0,
            standstill_max_s: 3.0,
        }
    }
}

/// Parameters of the ground-truth rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelRule {
    /// Closing speed (m/s) above which the lead car counts as approaching.
    pub approach_knee: f64,
    /// Seconds between a scene state and the pedal response to it.
    pub reaction_lag_s: f64,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule {
            approach_knee: 0.0,
            reaction_lag_s: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Uniform box-corner jitter, pixels.
    pub bbox_jitter_px: f64,
    /// Uniform confidence jitter.
    pub confidence_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            bbox_jitter_px: 0.5,
            confidence_jitter: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sessions: usize,
    pub frames_per_session: usize,
    pub fps: f64,
    /// Fraction of sessions tagged highway; the rest are urban.
    pub highway_fraction: f64,
    pub camera: CameraConfig,
    pub lead: LeadConfig,
    pub scene: SceneConfig,
    pub rule: LabelRule,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sessions: 48,
            frames_per_session: 900,
            fps: 30.0,
            highway_fraction: 0.5,
            camera: CameraConfig::default(),
            lead: LeadConfig::default(),
            scene: SceneConfig::default(),
            rule: LabelRule::default(),
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidConfig(format!("{field}: {why}")));
        if self.sessions == 0 {
            return bad("sessions", "must be positive");
        }
        if self.frames_per_session == 0 {
            return bad("frames_per_session", "must be positive");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps", "must be a positive number");
        }
        if !(0.0..=1.0).contains(&self.highway_fraction) {
            return bad("highway_fraction", "must lie in [0, 1]");
        }
        if self.camera.width == 0 || self.camera.height == 0 || !(self.camera.focal_px > 0.0) {
            return bad("camera", "image size and focal length must be positive");
        }
        let l = &self.lead;
        if !(l.gap_min_m > 1.0 && l.gap_max_m > l.gap_min_m) {
            return bad("lead.gap_min_m/gap_max_m", "need 1 < gap_min_m < gap_max_m");
        }
        if !(l.speed_min > 0.0 && l.speed_max >= l.speed_min) {
            return bad("lead.speed_min/speed_max", "need 0 < speed_min <= speed_max");
        }
        if !(l.segment_min_s > 0.0 && l.segment_max_s >= l.segment_min_s) {
            return bad("lead.segment_min_s/segment_max_s", "need 0 < min <= max");
        }
        let s = &self.scene;
        for (name, p) in [
            ("scene.cue_probability", s.cue_probability),
            ("scene.stop_sign_share", s.stop_sign_share),
            ("scene.turn_probability", s.turn_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        if !(s.pedestrian_rate >= 0.0) {
            return bad("scene.pedestrian_rate", "must be non-negative");
        }
        if !(s.standstill_min_s >= 0.0 && s.standstill_max_s >= s.standstill_min_s) {
            return bad("scene.standstill_min_s/standstill_max_s", "need 0 <= min <= max");
        }
        if !(self.rule.reaction_lag_s >= 0.0) {
            return bad("rule.reaction_lag_s", "must be non-negative");
        }
        if !(self.noise.bbox_jitter_px >= 0.0 && self.noise.confidence_jitter >= 0.0) {
            return bad("noise", "jitter must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Hidden scene state at one source frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub moving: bool,
    /// Distance to the lead car, metres.
    pub gap_m: f64,
    /// Rate at which the gap shrinks, m/s (negative while it opens).
    pub closing_speed: f64,
    pub cue: bool,
    pub steer_deg: f64,
}

/// The ground-truth rule.
pub fn oracle_label(state: &LatentState, rule: &LabelRule) -> DerivedLabel {
    if !state.moving {
        return DerivedLabel::Coast;
    }
    let approaching = state.closing_speed > rule.approach_knee;
    DerivedLabel::Action(match (approaching, state.cue) {
        (true, true) => Action::FullBraking,
        (false, true) => Action::SlightBraking,
        (true, false) => Action::SlightAcceleration,
        (false, false) => Action::FullAcceleration,
    })
}

/// Oracle label of one emitted frame, from the lagged state its pedals reflect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub session: String,
    pub frame_index: u64,
    pub action: Option<Action>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthOutput {
    pub frames: Vec<FrameDetections>,
    pub sensors: Vec<SensorSample>,
    pub oracle: Vec<OracleRecord>,
}

struct Segment {
    frames: usize,
    /// +1 closing, -1 opening.
    direction: f64,
    speed: f64,
    cue: bool,
    turn: bool,
}

fn latent_track(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<LatentState> {
    let n = cfg.frames_per_session;
    let dt = 1.0 / cfg.fps;
    let l = &cfg.lead;
    let mut out = Vec::with_capacity(n);
    let mut gap = rng.gen_range(l.gap_min_m..=l.gap_max_m);
    let still_s = rng.gen_range(cfg.scene.standstill_min_s..=cfg.scene.standstill_max_s);
    let still = ((still_s * cfg.fps).round() as usize).min(n);
    let still_cue = rng.gen_bool(cfg.scene.cue_probability);
    for _ in 0..still {
        out.push(LatentState {
            moving: false,
            gap_m: gap,
            closing_speed: 0.0,
            cue: still_cue,
            steer_deg: 0.0,
        });
    }
    while out.len() < n {
        let speed = rng.gen_range(l.speed_min..=l.speed_max);
        let want_s = rng.gen_range(l.segment_min_s..=l.segment_max_s);
        let room_closing = (gap - l.gap_min_m) / speed;
        let room_opening = (l.gap_max_m - gap) / speed;
        let mut direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let room = |d: f64| if d > 0.0 { room_closing } else { room_opening };
        if room(direction) < l.segment_min_s && room(-direction) > room(direction) {
            direction = -direction;
        }
        let seconds = want_s.min(room(direction)).max(dt);
        let seg = Segment {
            frames: ((seconds * cfg.fps).round() as usize).max(1),
            direction,
            speed,
            cue: rng.gen_bool(cfg.scene.cue_probability),
            turn: rng.gen_bool(cfg.scene.turn_probability),
        };
        let steer = if seg.turn {
            rng.gen_range(40.0..90.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            0.0
        };
        for _ in 0..seg.frames {
            if out.len() == n {
                break;
            }
            gap = (gap - seg.direction * seg.speed * dt).clamp(l.gap_min_m, l.gap_max_m);
            out.push(LatentState {
                moving: true,
                gap_m: gap,
                closing_speed: seg.direction * seg.speed,
                cue: seg.cue,
                steer_deg: steer,
            });
        }
    }
    out
}

/// Pedal readings that `derive_label` maps back onto `label`.
fn pedals(label: DerivedLabel, scenario: Scenario, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let brake = scenario.full_brake_kpa();
    let accel = scenario.full_accel_pct();
    match label {
        DerivedLabel::Coast => (0.0, 0.0),
        DerivedLabel::Action(Action::FullBraking) => (brake + rng.gen_range(0.0..800.0), 0.0),
        DerivedLabel::Action(Action::SlightBraking) => (brake * rng.gen_range(0.05..0.9), 0.0),
        DerivedLabel::Action(Action::SlightAcceleration) => (0.0, accel * rng.gen_range(0.05..0.9)),
        DerivedLabel::Action(Action::FullAcceleration) => (0.0, rng.gen_range(accel..=100.0)),
    }
}

/// World object relative to the camera: lateral offset `x`, distance `z`,
/// base elevation above the road, physical width and height.
struct WorldBox {
    x: f64,
    z: f64,
    elevation: f64,
    width: f64,
    height: f64,
}

fn project(b: &WorldBox, cam: &CameraConfig) -> Option<[f64; 4]> {
    if b.z < 1.0 {
        return None;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let s = cam.focal_px / b.z;
    let cx = w / 2.0 + s * b.x;
    let bottom = h / 2.0 + s * (cam.mount_height_m - b.elevation);
    let top = bottom - s * b.height;
    let half = s * b.width / 2.0;
    let x1 = (cx - half).max(0.0);
    let x2 = (cx + half).min(w);
    let y1 = top.max(0.0);
    let y2 = bottom.min(h);
    (x2 - x1 >= 1.0 && y2 - y1 >= 1.0).then_some([x1, y1, x2, y2])
}

fn jittered(b: [f64; 4], cam: &CameraConfig, jitter: f64, rng: &mut ChaCha8Rng) -> [f64; 4] {
    if jitter == 0.0 {
        return b;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut j = || rng.gen_range(-jitter..=jitter);
    let x1 = (b[0] + j()).clamp(0.0, w - 1.0);
    let y1 = (b[1] + j()).clamp(0.0, h - 1.0);
    let x2 = (b[2] + j()).clamp(x1 + 0.5, w);
    let y2 = (b[3] + j()).clamp(y1 + 0.5, h);
    [x1, y1, x2, y2]
}

struct Adjacent {
    category: Category,
    x: f64,
    z: f64,
    /// Speed relative to the ego car, m/s (positive pulls away).
    rel_speed: f64,
    width: f64,
    height: f64,
}

struct Walker {
    x: f64,
    z: f64,
    vx: f64,
}

fn generate_session(cfg: &SynthConfig, index: usize) -> (String, SynthOutput) {
    let session = format!("synth-{index:04}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &session));
    let scenario = if rng.gen_bool(cfg.highway_fraction) {
        Scenario::Highway
    } else {
        Scenario::Urban
    };
    let track = latent_track(cfg, &mut rng);
    let lag = (cfg.rule.reaction_lag_s * cfg.fps).round() as usize;
    let cam = cfg.camera;
    let dt = 1.0 / cfg.fps;
    let stop_sign = rng.gen_bool(cfg.scene.stop_sign_share);
    let cue_side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let n_adjacent = rng.gen_range(0..=cfg.scene.max_adjacent_vehicles);
    let mut adjacent: Vec<Adjacent> = (0..n_adjacent)
        .map(|_| {
            let category = match rng.gen_range(0..4) {
                0 => Category::Truck,
                1 => Category::Bus,
                _ => Category::Car,
            };
            let (width, height) = match category {
                Category::Car => (1.8, 1.5),
                _ => (2.5, 3.2),
            };
            Adjacent {
                category,
                x: if rng.gen_bool(0.5) { 3.6 } else { -3.6 },
                z: rng.gen_range(10.0..70.0),
                rel_speed: rng.gen_range(-1.5..1.5),
                width,
                height,
            }
        })
        .collect();
    let mut walkers: Vec<Walker> = Vec::new();
    let mut out = SynthOutput::default();
    for (f, state) in track.iter().enumerate() {
        let frame_index = f as u64;
        let mut objects = Vec::new();
        let conf = |rng: &mut ChaCha8Rng, base: f64| {
            let j = cfg.noise.confidence_jitter;
            let v = if j > 0.0 { base + rng.gen_range(-j..=j) } else { base };
            v.clamp(0.05, 1.0)
        };
        let mut push = |rng: &mut ChaCha8Rng, category: Category, b: &WorldBox, base: f64| {
            if let Some(bb) = project(b, &cam) {
                let [x1, y1, x2, y2] = jittered(bb, &cam, cfg.noise.bbox_jitter_px, rng);
                let confidence = conf(rng, base);
                objects.push(Detection {
                    category,
                    x1,
                    y1,
                    x2,
                    y2,
                    confidence,
                });
            }
        };
        push(
            &mut rng,
            Category::Car,
            &WorldBox {
                x: 0.0,
                z: state.gap_m,
                elevation: 0.0,
                width: 1.8,
                height: 1.5,
            },
            0.95,
        );
        for a in &mut adjacent {
            if state.moving {
                a.z += a.rel_speed * dt;
            }
            if a.z < 8.0 || a.z > 80.0 {
                a.rel_speed = -a.rel_speed;
                a.z = a.z.clamp(8.0, 80.0);
            }
            let b = WorldBox {
                x: a.x,
                z: a.z,
                elevation: 0.0,
                width: a.width,
                height: a.height,
            };
            push(&mut rng, a.category, &b, 0.85);
        }
        if rng.gen_bool((cfg.scene.pedestrian_rate * dt).min(1.0)) {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            walkers.push(Walker {
                x: side * rng.gen_range(5.0..9.0),
                z: rng.gen_range(8.0..40.0),
                vx: -side * rng.gen_range(0.5..1.5),
            });
        }
        walkers.retain_mut(|w| {
            w.x += w.vx * dt;
            w.x.abs() < 10.0 && w.x * w.vx.signum() < 4.5
        });
        for w in &walkers {
            let b = WorldBox {
                x: w.x,
                z: w.z,
                elevation: 0.0,
                width: 0.5,
                height: 1.7,
            };
            push(&mut rng, Category::Pedestrian, &b, 0.8);
        }
        if state.cue {
            let z = state.gap_m + 4.0;
            let (category, b) = if stop_sign {
                (
                    Category::StopSign,
                    WorldBox {
                        x: cue_side * 4.5,
                        z,
                        elevation: 2.0,
                        width: 0.75,
                        height: 0.75,
                    },
                )
            } else {
                (
                    Category::TrafficLight,
                    WorldBox {
                        x: cue_side * 3.0,
                        z,
                        elevation: 4.5,
                        width: 0.4,
                        height: 1.1,
                    },
                )
            };
            push(&mut rng, category, &b, 0.9);
        }
        out.frames.push(FrameDetections {
            session: session.clone(),
            frame_index,
            timestamp: f as f64 * dt,
            width: cam.width,
            height: cam.height,
            objects,
        });

        let driving = track[f.saturating_sub(lag)];
        let label = oracle_label(&driving, &cfg.rule);
        let (brake_kpa, accel_pct) = pedals(label, scenario, &mut rng);
        out.sensors.push(SensorSample {
            session: session.clone(),
            frame_index,
            brake_kpa,
            accel_pct,
            steer_deg: state.steer_deg,
            scenario,
            is_moving: Some(state.moving),
        });
        out.oracle.push(OracleRecord {
            session: session.clone(),
            frame_index,
            action: label.action(),
        });
    }
    (session, out)
}

/// Generates every session (in parallel, each from its own seed) and
/// concatenates them in session order.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let sessions: Vec<(String, SynthOutput)> = (0..cfg.sessions)
        .into_par_iter()
        .map(|i| generate_session(cfg, i))
        .collect();
    let mut out = SynthOutput::default();
    for (_, s) in sessions {
        out.frames.extend(s.frames);
        out.sensors.extend(s.sensors);
        out.oracle.extend(s.oracle);
    }
    Ok(out)
}

//! Deterministic synthetic scene generator with a ground-truth importance
//! oracle.
//!
//! Scenes live in the ego frame at t=0: x forward, y left, meters. Hidden
//! latents (world kinematics, control relevance, blocking flags) drive both
//! the rendered observation streams and the labels, so every label is
//! auditable from the latents alone.
//!
//! An object is labeled important when any rule fires:
//!   (a) a traffic control relevant to the ego intention within range R;
//!   (b) a participant whose constant-velocity extrapolation (relative frame)
//!       comes within half a corridor width of the intention's path within
//!       T_c seconds;
//!   (c) a parked vehicle ahead within lateral margin m_lat;
//! and is demoted back to unimportant by rule (d) when another rule-(b)
//! object with its blocking flag set sits on the same bearing strictly
//! closer. Rule (d) is what gives the benchmark pairwise relational
//! structure a per-object classifier cannot express.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    Dataset, EgoAction, EgoTrack, Intention, Labels, ObjectClass, ObjectTrack, Scene,
};

pub const FRAME_DT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Mixed motifs; the benchmark default.
    Default,
    /// Every scene contains objects whose importance flips with the ego
    /// intention.
    IntentionCritical,
    /// Every scene contains an aligned pair where the demotion rule fires.
    OcclusionCritical,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OracleParams {
    /// Range for traffic controls and parked vehicles, meters.
    pub range_r: f64,
    /// Collision-course horizon, seconds.
    pub t_c: f64,
    /// Lateral margin for parked vehicles, meters.
    pub m_lat: f64,
    /// Corridor width, meters.
    pub corridor_w: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { range_r: 40.0, t_c: 3.0, m_lat: 2.5, corridor_w: 3.5 }
    }
}

fn default_intention_mix() -> [f64; 3] {
    [4.0, 1.0, 1.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Relative weights for forward/left/right.
    pub intention_mix: [f64; 3],
    pub kinematic_noise: f64,
    pub feature_noise: f64,
    /// Speed threshold below which the ego action is `stop`, m/s.
    pub v_stop: f64,
    /// Acceleration dead zone half-width, m/s^2.
    pub a_dead: f64,
    pub oracle: OracleParams,
    pub d_appearance: usize,
    pub d_depthsem: usize,
    pub t_history: usize,
    pub t_future: usize,
    pub image_w: u32,
    pub image_h: u32,
    pub scenario: Scenario,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            labeled_count: 2000,
            unlabeled_count: 2000,
            objects_min: 2,
            objects_max: 12,
            intention_mix: default_intention_mix(),
            kinematic_noise: 0.3,
            feature_noise: 0.12,
            v_stop: 0.5,
            a_dead: 0.3,
            oracle: OracleParams::default(),
            d_appearance: 16,
            d_depthsem: 8,
            t_history: 8,
            t_future: 4,
            image_w: 1280,
            image_h: 720,
            scenario: Scenario::Default,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects_min < 1 || self.objects_min > self.objects_max {
            return Err(Error::InvalidConfig(format!(
                "objects_per_scene range [{}, {}] is empty",
                self.objects_min, self.objects_max
            )));
        }
        if self.intention_mix.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidConfig("intention mix weights must be positive".into()));
        }
        if self.v_stop <= 0.0 || self.a_dead <= 0.0 {
            return Err(Error::InvalidConfig("action thresholds must be positive".into()));
        }
        if self.t_history == 0 || self.t_future == 0 {
            return Err(Error::InvalidConfig("horizons must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden state behind one observed object.
#[derive(Clone, Debug)]
pub struct LatentObject {
    pub class: ObjectClass,
    /// Position in the t=0 ego frame, meters.
    pub pos: [f64; 2],
    /// Velocity relative to the ego, m/s; the oracle extrapolates with this.
    pub vel_rel: [f64; 2],
    /// For controls: applies to the ego's planned maneuver.
    pub control_relevant: bool,
    /// For lights: red phase.
    pub control_red: bool,
    pub blocking: bool,
    /// Lateral offset from the ego lane center, meters.
    pub lane_offset: f64,
    pub parked: bool,
}

impl LatentObject {
    fn participant(class: ObjectClass, pos: [f64; 2], vel_rel: [f64; 2]) -> Self {
        Self {
            class,
            pos,
            vel_rel,
            control_relevant: false,
            control_red: false,
            blocking: false,
            lane_offset: pos[1],
            parked: false,
        }
    }

    pub fn distance(&self) -> f64 {
        (self.pos[0] * self.pos[0] + self.pos[1] * self.pos[1]).sqrt()
    }

    pub fn bearing(&self) -> f64 {
        self.pos[1].atan2(self.pos[0])
    }
}

/// Ego action from thresholds on speed and acceleration.
pub fn action_from_kinematics(speed: f64, accel: f64, v_stop: f64, a_dead: f64) -> EgoAction {
    if speed < v_stop {
        EgoAction::Stop
    } else if accel > a_dead {
        EgoAction::SpeedUp
    } else if accel < -a_dead {
        EgoAction::SlowDown
    } else {
        EgoAction::ConstantSpeed
    }
}

// ── corridor geometry ───────────────────────────────────────────────────

const TURN_RADIUS: f64 = 8.0;

/// Sampled center-line of the intention's path, in the t=0 ego frame.
fn corridor_path(intention: Intention, ego_speed: f64, t_c: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    match intention {
        Intention::Forward => {
            let len = (ego_speed * t_c).max(10.0) + 5.0;
            let mut s = 0.0;
            while s <= len {
                pts.push([s, 0.0]);
                s += 0.5;
            }
        }
        Intention::Left | Intention::Right => {
            let sign = if intention == Intention::Left { 1.0 } else { -1.0 };
            let mut theta: f64 = 0.0;
            while theta <= std::f64::consts::FRAC_PI_2 {
                pts.push([TURN_RADIUS * theta.sin(), sign * TURN_RADIUS * (1.0 - theta.cos())]);
                theta += 0.5 / TURN_RADIUS;
            }
            let mut s = 0.0;
            while s <= 8.0 {
                pts.push([TURN_RADIUS, sign * (TURN_RADIUS + s)]);
                s += 0.5;
            }
        }
    }
    pts
}

fn dist_to_path(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    path.iter()
        .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Rule (b): constant-velocity extrapolation comes within half a corridor
/// width of the path within T_c seconds.
fn enters_corridor(obj: &LatentObject, path: &[[f64; 2]], params: &OracleParams) -> bool {
    let steps = (params.t_c / 0.25).ceil() as usize;
    for k in 0..=steps {
        let t = k as f64 * 0.25;
        let p = [obj.pos[0] + obj.vel_rel[0] * t, obj.pos[1] + obj.vel_rel[1] * t];
        if p[0] < -2.0 {
            continue;
        }
        if dist_to_path(p, path) <= params.corridor_w / 2.0 {
            return true;
        }
    }
    false
}

/// Binary labels for a latent scene under the full rule set.
pub fn importance_oracle(
    latents: &[LatentObject],
    intention: Intention,
    ego_speed: f64,
    params: &OracleParams,
) -> Vec<u8> {
    importance_oracle_raw(latents, intention, ego_speed, params, true)
}

/// Same as [`importance_oracle`] with the demotion rule switchable; the
/// benchmark uses this to verify that demotion actually changes labels.
pub fn importance_oracle_raw(
    latents: &[LatentObject],
    intention: Intention,
    ego_speed: f64,
    params: &OracleParams,
    apply_demotion: bool,
) -> Vec<u8> {
    let path = corridor_path(intention, ego_speed, params.t_c);
    let mut labels = vec![0u8; latents.len()];
    let mut rule_b = vec![false; latents.len()];

    for (i, obj) in latents.iter().enumerate() {
        if obj.class.is_traffic_control() {
            // (a) relevant control within range
            if obj.control_relevant && obj.distance() <= params.range_r {
                labels[i] = 1;
            }
            continue;
        }
        // (b) collision course with the intention corridor
        if obj.distance() <= params.range_r && enters_corridor(obj, &path, params) {
            labels[i] = 1;
            rule_b[i] = true;
        }
        // (c) parked vehicle close to the ego lane
        if obj.class == ObjectClass::Vehicle
            && obj.parked
            && obj.pos[0] > 0.0
            && obj.distance() <= params.range_r
            && obj.lane_offset.abs() <= params.m_lat
        {
            labels[i] = 1;
        }
    }

    if apply_demotion {
        const BEARING_TOL: f64 = 0.15;
        let mut demoted = vec![false; latents.len()];
        for j in 0..latents.len() {
            if !rule_b[j] {
                continue;
            }
            for k in 0..latents.len() {
                if k == j || !rule_b[k] || !latents[k].blocking {
                    continue;
                }
                let same_bearing = (latents[j].bearing() - latents[k].bearing()).abs() <= BEARING_TOL;
                if same_bearing && latents[k].distance() < latents[j].distance() {
                    demoted[j] = true;
                    break;
                }
            }
        }
        for (j, d) in demoted.iter().enumerate() {
            // Demotion only strips the rule-(b) contribution; (a)/(c) objects
            // keep their labels.
            if *d {
                let obj = &latents[j];
                let keeps_c = obj.class == ObjectClass::Vehicle
                    && obj.parked
                    && obj.pos[0] > 0.0
                    && obj.distance() <= params.range_r
                    && obj.lane_offset.abs() <= params.m_lat;
                if !keeps_c {
                    labels[j] = 0;
                }
            }
        }
    }
    labels
}

// ── feature embedding ───────────────────────────────────────────────────

const APP_LATENT_DIM: usize = 13;
const DS_LATENT_DIM: usize = 7;

/// Fixed linear maps from latent descriptors to the observed feature
/// streams; derived once per dataset seed.
pub struct FeatureEmbedder {
    a_app: Vec<f64>,
    a_ds: Vec<f64>,
    d_app: usize,
    d_ds: usize,
}

impl FeatureEmbedder {
    pub fn new(seed: u64, d_app: usize, d_ds: usize) -> Self {
        let mut rng = derive_rng(seed, 0xE1BED);
        let scale_app = (3.0 / APP_LATENT_DIM as f64).sqrt();
        let scale_ds = (3.0 / DS_LATENT_DIM as f64).sqrt();
        let a_app = (0..d_app * APP_LATENT_DIM)
            .map(|_| rng.gen_range(-scale_app..scale_app))
            .collect();
        let a_ds = (0..d_ds * DS_LATENT_DIM).map(|_| rng.gen_range(-scale_ds..scale_ds)).collect();
        Self { a_app, a_ds, d_app, d_ds }
    }

    fn app_row(&self, phi: &[f64; APP_LATENT_DIM], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.d_app)
            .map(|r| {
                let mut acc = 0.0;
                for (c, &p) in phi.iter().enumerate() {
                    acc += self.a_app[r * APP_LATENT_DIM + c] * p;
                }
                acc + noise * gauss(rng)
            })
            .collect()
    }

    fn ds_row(&self, phi: &[f64; DS_LATENT_DIM], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.d_ds)
            .map(|r| {
                let mut acc = 0.0;
                for (c, &p) in phi.iter().enumerate() {
                    acc += self.a_ds[r * DS_LATENT_DIM + c] * p;
                }
                acc + noise * gauss(rng)
            })
            .collect()
    }
}

fn class_one_hot(class: ObjectClass) -> [f64; 5] {
    let mut v = [0.0; 5];
    let i = match class {
        ObjectClass::Vehicle => 0,
        ObjectClass::Pedestrian => 1,
        ObjectClass::Cyclist => 2,
        ObjectClass::TrafficLight => 3,
        ObjectClass::StopSign => 4,
    };
    v[i] = 1.0;
    v
}

fn app_latent(obj: &LatentObject, pos: [f64; 2]) -> [f64; APP_LATENT_DIM] {
    let c = class_one_hot(obj.class);
    [
        c[0],
        c[1],
        c[2],
        c[3],
        c[4],
        pos[0] / 40.0,
        pos[1] / 15.0,
        obj.vel_rel[0] / 10.0,
        obj.vel_rel[1] / 10.0,
        obj.control_relevant as u8 as f64,
        obj.control_red as u8 as f64,
        obj.blocking as u8 as f64,
        1.0,
    ]
}

fn ds_latent(obj: &LatentObject, pos: [f64; 2]) -> [f64; DS_LATENT_DIM] {
    let group = match obj.class {
        ObjectClass::Vehicle | ObjectClass::Pedestrian | ObjectClass::Cyclist => 0,
        ObjectClass::TrafficLight => 1,
        ObjectClass::StopSign => 2,
    };
    let mut g = [0.0; 3];
    g[group] = 1.0;
    [pos[0] / 40.0, g[0], g[1], g[2], obj.blocking as u8 as f64, obj.parked as u8 as f64, 1.0]
}

// ── projection ──────────────────────────────────────────────────────────

const FOCAL_PX: f64 = 720.0;
const CAM_HEIGHT: f64 = 1.4;

fn class_extent(class: ObjectClass) -> (f64, f64, f64) {
    // (physical width, physical height, mount height of box center), meters
    match class {
        ObjectClass::Vehicle => (1.9, 1.5, 0.0),
        ObjectClass::Pedestrian => (0.6, 1.7, 0.0),
        ObjectClass::Cyclist => (0.8, 1.8, 0.0),
        ObjectClass::TrafficLight => (0.5, 1.2, 3.6),
        ObjectClass::StopSign => (0.75, 0.75, 2.2),
    }
}

/// Pinhole-style projection of a relative position into an in-bounds pixel
/// box. Positions too close to the camera are pushed to a minimum depth and
/// boxes are clipped to the image.
fn project_box(class: ObjectClass, rel: [f64; 2], w: u32, h: u32) -> [f64; 4] {
    let (wf, hf) = (w as f64, h as f64);
    let depth = rel[0].max(2.5);
    let (pw, ph, mount) = class_extent(class);
    let mut bw = (FOCAL_PX * pw / depth).min(wf * 0.9);
    let mut bh = (FOCAL_PX * ph / depth).min(hf * 0.9);
    bw = bw.max(2.0);
    bh = bh.max(2.0);
    let u = wf / 2.0 - FOCAL_PX * rel[1] / depth;
    let v = if mount > 0.0 {
        hf / 2.0 - FOCAL_PX * (mount - CAM_HEIGHT) / depth
    } else {
        hf / 2.0 + FOCAL_PX * CAM_HEIGHT / depth - bh / 2.0
    };
    let x = u.max(bw / 2.0).min(wf - bw / 2.0);
    let y = v.max(bh / 2.0).min(hf - bh / 2.0);
    [x, y, bw, bh]
}

// ── composition ─────────────────────────────────────────────────────────

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn pick_intention(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> Intention {
    let total: f64 = mix.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in mix.iter().enumerate() {
        if u < w {
            return Intention::ALL[i];
        }
        u -= w;
    }
    Intention::Right
}

fn participant_class(rng: &mut ChaCha8Rng) -> ObjectClass {
    match rng.gen_range(0..10) {
        0..=5 => ObjectClass::Vehicle,
        6..=7 => ObjectClass::Pedestrian,
        _ => ObjectClass::Cyclist,
    }
}

/// Point on the corridor path suitable as a crossing target.
fn corridor_target(rng: &mut ChaCha8Rng, intention: Intention, ego_speed: f64) -> [f64; 2] {
    let path = corridor_path(intention, ego_speed, 3.0);
    let lo = path.len() / 5;
    let hi = (path.len() * 4) / 5;
    path[rng.gen_range(lo..hi.max(lo + 1))]
}

fn make_crosser(
    rng: &mut ChaCha8Rng,
    intention: Intention,
    ego_speed: f64,
    blocking: bool,
) -> LatentObject {
    let class = participant_class(rng);
    let target = corridor_target(rng, intention, ego_speed);
    let t_star = rng.gen_range(0.6..2.6);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let standoff = rng.gen_range(5.0..14.0);
    let pos = [
        target[0] + rng.gen_range(2.0..12.0),
        target[1] + side * standoff,
    ];
    let vel = [(target[0] - pos[0]) / t_star, (target[1] - pos[1]) / t_star];
    let speed = (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
    let cap = match class {
        ObjectClass::Pedestrian => 3.0,
        ObjectClass::Cyclist => 7.0,
        _ => 14.0,
    };
    let scale = if speed > cap { cap / speed } else { 1.0 };
    let mut obj = LatentObject::participant(class, pos, [vel[0] * scale, vel[1] * scale]);
    obj.blocking = blocking;
    obj
}

/// Adjacent-lane traffic moving parallel to the ego. Large and close, so
/// size/center/distance heuristics latch onto it, yet never on a forward
/// collision course.
fn make_passer(rng: &mut ChaCha8Rng, ego_speed: f64) -> LatentObject {
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let x = rng.gen_range(6.0..25.0);
    let y = side * rng.gen_range(3.4..6.5);
    let world_vx = if rng.gen_bool(0.5) { rng.gen_range(3.0..10.0) } else { -rng.gen_range(3.0..10.0) };
    LatentObject::participant(ObjectClass::Vehicle, [x, y], [world_vx - ego_speed, 0.0])
}

fn make_parked(rng: &mut ChaCha8Rng, ego_speed: f64, near_lane: bool) -> LatentObject {
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let y = if near_lane { side * rng.gen_range(1.8..2.5) } else { side * rng.gen_range(3.5..6.0) };
    let x = rng.gen_range(8.0..34.0);
    let mut obj = LatentObject::participant(ObjectClass::Vehicle, [x, y], [-ego_speed, 0.0]);
    obj.parked = true;
    obj.lane_offset = y;
    obj
}

fn make_background(rng: &mut ChaCha8Rng, ego_speed: f64) -> LatentObject {
    let class = participant_class(rng);
    let x = rng.gen_range(42.0..70.0);
    let y = rng.gen_range(-0.5..0.5) * x * 0.8;
    let world_v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    LatentObject::participant(class, [x, y], [world_v[0] - ego_speed, world_v[1]])
}

fn make_control(rng: &mut ChaCha8Rng, intention: Intention, relevant_to: Option<Intention>) -> LatentObject {
    let class = if rng.gen_bool(0.7) { ObjectClass::TrafficLight } else { ObjectClass::StopSign };
    let x = rng.gen_range(10.0..34.0);
    let y = rng.gen_range(-8.0..8.0);
    let applies = relevant_to.unwrap_or_else(|| Intention::ALL[rng.gen_range(0..3)]);
    LatentObject {
        class,
        pos: [x, y],
        vel_rel: [0.0, 0.0],
        control_relevant: applies == intention,
        control_red: rng.gen_bool(0.5),
        blocking: false,
        lane_offset: y,
        parked: false,
    }
}

/// Two rule-(b) objects on one bearing; the nearer one blocks, demoting the
/// farther one.
fn make_demotion_pair(rng: &mut ChaCha8Rng, intention: Intention, ego_speed: f64) -> [LatentObject; 2] {
    let near = {
        let mut o = make_crosser(rng, intention, ego_speed, true);
        // A slow head-on approach stays on a stable bearing.
        o.pos = [rng.gen_range(9.0..14.0), rng.gen_range(-1.2..1.2)];
        o.vel_rel = [-rng.gen_range(2.0..4.0), 0.0];
        o.blocking = true;
        o
    };
    let scale = rng.gen_range(1.7..2.6);
    let mut far = LatentObject::participant(
        participant_class(rng),
        [near.pos[0] * scale, near.pos[1] * scale],
        [-rng.gen_range(2.0..4.0), 0.0],
    );
    far.blocking = false;
    [near, far]
}

struct EgoPlan {
    v0: f64,
    /// Acceleration over the history window.
    a_past: f64,
    /// Commanded acceleration at t=0; drives the action label and the future.
    a_cmd: f64,
}

fn plan_ego(
    rng: &mut ChaCha8Rng,
    latents: &[LatentObject],
    labels: &[u8],
    v0: f64,
    cfg: &GenConfig,
) -> EgoPlan {
    let important_near = latents.iter().zip(labels).any(|(o, &l)| {
        l == 1
            && ((!o.class.is_traffic_control() && o.distance() < 16.0)
                || (o.class.is_traffic_control() && o.control_red && o.distance() < 24.0))
    });
    let noise = cfg.kinematic_noise;
    if v0 < cfg.v_stop {
        return EgoPlan { v0, a_past: 0.0, a_cmd: 0.0 };
    }
    if important_near {
        let a = -(0.8 + rng.gen_range(0.0..0.8));
        let onset_in_past = rng.gen_bool(0.5);
        EgoPlan { v0, a_past: if onset_in_past { a } else { 0.05 * noise * gauss(rng) }, a_cmd: a }
    } else {
        let u: f64 = rng.gen_range(0.0..1.0);
        let a_cmd = if u < 0.25 { 0.6 + rng.gen_range(0.0..0.6) } else { 0.05 * noise * gauss(rng) };
        EgoPlan { v0, a_past: 0.05 * noise * gauss(rng), a_cmd }
    }
}

/// Ego positions over the history window, t=0 ego frame, plus per-frame
/// states with backward-difference accelerations.
fn ego_history(plan: &EgoPlan, t_h: usize) -> (Vec<[f64; 2]>, Vec<[f64; 6]>) {
    let n = t_h;
    let mut speeds = vec![0.0; n];
    speeds[n - 1] = plan.v0;
    for i in (0..n - 1).rev() {
        speeds[i] = (speeds[i + 1] - plan.a_past * FRAME_DT).max(0.0);
    }
    let mut xs = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let v_mid = 0.5 * (speeds[i] + speeds[i + 1]);
        xs[i] = xs[i + 1] - v_mid * FRAME_DT;
    }
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let ax = if i == 0 { 0.0 } else { (speeds[i] - speeds[i - 1]) / FRAME_DT };
        states.push([xs[i], 0.0, speeds[i], 0.0, ax, 0.0]);
    }
    (xs.iter().map(|&x| [x, 0.0]).collect(), states)
}

/// Future ego waypoints under the commanded acceleration, curving with the
/// intention once underway.
fn ego_future(plan: &EgoPlan, intention: Intention, t_f: usize) -> Vec<[f64; 2]> {
    let dt = 0.05;
    let steps_per_wp = (FRAME_DT / dt).round() as usize;
    let mut pos = [0.0, 0.0];
    let mut heading: f64 = 0.0;
    let mut v = plan.v0;
    let sign = match intention {
        Intention::Forward => 0.0,
        Intention::Left => 1.0,
        Intention::Right => -1.0,
    };
    let mut out = Vec::with_capacity(t_f);
    for _ in 0..t_f {
        for _ in 0..steps_per_wp {
            v = (v + plan.a_cmd * dt).max(0.0);
            if sign != 0.0 && heading.abs() < std::f64::consts::FRAC_PI_2 {
                heading += sign * (v / TURN_RADIUS) * dt;
            }
            pos[0] += v * heading.cos() * dt;
            pos[1] += v * heading.sin() * dt;
        }
        out.push(pos);
    }
    out
}

/// Builds one fully labeled scene; pure in (config, index).
pub fn generate_scene(cfg: &GenConfig, index: u64, scene_id: String, embedder: &FeatureEmbedder) -> Scene {
    let mut rng = derive_rng(cfg.seed, index.wrapping_add(1));
    let intention = pick_intention(&mut rng, &cfg.intention_mix);
    let v0 = if rng.gen_bool(0.12) { rng.gen_range(0.0..0.4) } else { rng.gen_range(2.0..14.0) };

    let n_target = rng.gen_range(cfg.objects_min..=cfg.objects_max);
    let mut latents: Vec<LatentObject> = Vec::with_capacity(n_target);

    match cfg.scenario {
        Scenario::Default => {
            if rng.gen_bool(0.6) {
                latents.push(make_control(&mut rng, intention, None));
            }
            if rng.gen_bool(0.35) {
                let pair = make_demotion_pair(&mut rng, intention, v0);
                latents.extend(pair);
            }
            let crossers = rng.gen_range(0..=2);
            for _ in 0..crossers {
                let blocking = rng.gen_bool(0.5);
                latents.push(make_crosser(&mut rng, intention, v0, blocking));
            }
            if rng.gen_bool(0.3) {
                let near_lane = rng.gen_bool(0.55);
                latents.push(make_parked(&mut rng, v0, near_lane));
            }
            while latents.len() < n_target {
                if rng.gen_bool(0.55) && latents.len() + 1 < n_target {
                    latents.push(make_passer(&mut rng, v0));
                } else {
                    latents.push(make_background(&mut rng, v0));
                }
            }
        }
        Scenario::IntentionCritical => {
            // Objects aimed at a specific intention's corridor, so labels
            // flip when the intention changes.
            let focus = Intention::ALL[rng.gen_range(0..3)];
            latents.push(make_crosser(&mut rng, focus, v0, false));
            let other = Intention::ALL[rng.gen_range(0..3)];
            latents.push(make_crosser(&mut rng, other, v0, false));
            let applies = Intention::ALL[rng.gen_range(0..3)];
            latents.push(make_control(&mut rng, intention, Some(applies)));
            while latents.len() < n_target.max(4) {
                if rng.gen_bool(0.5) {
                    latents.push(make_passer(&mut rng, v0));
                } else {
                    latents.push(make_background(&mut rng, v0));
                }
            }
        }
        Scenario::OcclusionCritical => {
            let pair = make_demotion_pair(&mut rng, intention, v0);
            latents.extend(pair);
            if rng.gen_bool(0.4) {
                let pair = make_demotion_pair(&mut rng, intention, v0);
                latents.extend(pair);
            }
            if rng.gen_bool(0.5) {
                let blocking = rng.gen_bool(0.5);
                latents.push(make_crosser(&mut rng, intention, v0, blocking));
            }
            while latents.len() < n_target.max(4) {
                if rng.gen_bool(0.5) {
                    latents.push(make_passer(&mut rng, v0));
                } else {
                    latents.push(make_background(&mut rng, v0));
                }
            }
        }
    }

    let labels = importance_oracle(&latents, intention, v0, &cfg.oracle);
    let plan = plan_ego(&mut rng, &latents, &labels, v0, cfg);
    let (ego_xy, ego_states) = ego_history(&plan, cfg.t_history);
    let future = ego_future(&plan, intention, cfg.t_future);
    let action = action_from_kinematics(plan.v0, plan.a_cmd, cfg.v_stop, cfg.a_dead);

    let t_h = cfg.t_history;
    let objects: Vec<ObjectTrack> = latents
        .iter()
        .enumerate()
        .map(|(oi, obj)| {
            // World frame coincides with the t=0 ego frame; object world
            // velocity is relative velocity plus the ego velocity at t=0.
            let world_v = [obj.vel_rel[0] + plan.v0, obj.vel_rel[1]];
            let mut boxes = Vec::with_capacity(t_h);
            let mut app = Vec::with_capacity(t_h);
            let mut ds = Vec::with_capacity(t_h);
            for f in 0..t_h {
                let t = (f as f64 - (t_h - 1) as f64) * FRAME_DT;
                let world_p = [obj.pos[0] + world_v[0] * t, obj.pos[1] + world_v[1] * t];
                let rel = [world_p[0] - ego_xy[f][0], world_p[1] - ego_xy[f][1]];
                let jitter = [
                    0.05 * cfg.kinematic_noise * gauss(&mut rng),
                    0.05 * cfg.kinematic_noise * gauss(&mut rng),
                ];
                let rel = [rel[0] + jitter[0], rel[1] + jitter[1]];
                boxes.push(project_box(obj.class, rel, cfg.image_w, cfg.image_h));
                app.push(embedder.app_row(&app_latent(obj, rel), cfg.feature_noise, &mut rng));
                ds.push(embedder.ds_row(&ds_latent(obj, rel), cfg.feature_noise, &mut rng));
            }
            ObjectTrack {
                id: format!("{scene_id}-o{oi}"),
                class: obj.class,
                boxes,
                appearance_feat: app,
                depthsem_feat: ds,
                distance_to_ego: Some(obj.distance()),
            }
        })
        .collect();

    Scene {
        scene_id,
        w: cfg.image_w,
        h: cfg.image_h,
        t_h,
        intention,
        objects,
        ego: EgoTrack { states: ego_states },
        labels: Some(Labels {
            importance: Some(labels),
            ego_action: action,
            future_traj: future,
        }),
    }
}

/// Generates the labeled and unlabeled partitions. Unlabeled scenes keep the
/// ego ground truth but drop importance.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let embedder = FeatureEmbedder::new(cfg.seed, cfg.d_appearance, cfg.d_depthsem);
    let labeled = (0..cfg.labeled_count)
        .map(|i| generate_scene(cfg, i as u64, format!("L{i:06}"), &embedder))
        .collect();
    let unlabeled = (0..cfg.unlabeled_count)
        .map(|i| {
            let mut s = generate_scene(
                cfg,
                (i + cfg.labeled_count) as u64,
                format!("U{i:06}"),
                &embedder,
            );
            if let Some(l) = s.labels.as_mut() {
                l.importance = None;
            }
            s
        })
        .collect();
    Ok(Dataset { labeled, unlabeled })
}

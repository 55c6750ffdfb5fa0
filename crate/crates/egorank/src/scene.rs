//! Scene data model and its JSON Lines on-disk format.
//!
//! One scene is a short egocentric case: `T_h` frames of per-object boxes and
//! feature vectors, the ego state sequence, the ego intention, and optional
//! labels. Feature vectors stand in for visual backbone outputs; any
//! externally precomputed features with matching dims can be plugged in.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    TrafficLight,
    StopSign,
}

impl ObjectClass {
    pub fn is_traffic_control(self) -> bool {
        matches!(self, ObjectClass::TrafficLight | ObjectClass::StopSign)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intention {
    Forward,
    Left,
    Right,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Forward, Intention::Left, Intention::Right];

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Intention::Forward => [1.0, 0.0, 0.0],
            Intention::Left => [0.0, 1.0, 0.0],
            Intention::Right => [0.0, 0.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Intention::Forward => "forward",
            Intention::Left => "left",
            Intention::Right => "right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoAction {
    Stop,
    SpeedUp,
    SlowDown,
    ConstantSpeed,
}

impl EgoAction {
    pub fn index(self) -> usize {
        match self {
            EgoAction::Stop => 0,
            EgoAction::SpeedUp => 1,
            EgoAction::SlowDown => 2,
            EgoAction::ConstantSpeed => 3,
        }
    }
}

/// One tracked object: per-frame boxes and the two provided feature streams.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: String,
    pub class: ObjectClass,
    /// `T_h` entries of (x_center, y_center, width, height) in pixels.
    pub boxes: Vec<[f64; 4]>,
    /// `T_h` rows of appearance features.
    pub appearance_feat: Vec<Vec<f64>>,
    /// `T_h` rows of depth/semantic features.
    pub depthsem_feat: Vec<Vec<f64>>,
    /// Current-frame range in meters; only the distance baseline consumes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_to_ego: Option<f64>,
}

/// Ego motion: `T_h` entries of (x, y, vx, vy, ax, ay) in the ego frame at t=0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EgoTrack {
    pub states: Vec<[f64; 6]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Labels {
    /// Binary importance per object, aligned with `Scene::objects`. Absent on
    /// unlabeled scenes even when the ego ground truth is retained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<u8>>,
    pub ego_action: EgoAction,
    /// `T_f` future ego waypoints (x, y) in meters, t=0 ego frame.
    pub future_traj: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    #[serde(rename = "W")]
    pub w: u32,
    #[serde(rename = "H")]
    pub h: u32,
    #[serde(rename = "T_h")]
    pub t_h: usize,
    pub intention: Intention,
    pub objects: Vec<ObjectTrack>,
    pub ego: EgoTrack,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

impl Scene {
    pub fn importance(&self) -> Option<&[u8]> {
        self.labels.as_ref().and_then(|l| l.importance.as_deref())
    }

    pub fn has_importance(&self) -> bool {
        self.importance().is_some()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    /// Scenes with importance labels.
    pub labeled: Vec<Scene>,
    /// Scenes without importance labels; ego ground truth is retained.
    pub unlabeled: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Maps a pixel box to (x/W, y/H, w/W, h/H), each in (0, 1].
pub fn normalize_bbox(bbox: &[f64; 4], w: u32, h: u32) -> Result<[f64; 4]> {
    let (wf, hf) = (w as f64, h as f64);
    let [x, y, bw, bh] = *bbox;
    if bw <= 0.0 || bh <= 0.0 {
        return Err(Error::Invalid(format!("box has non-positive size {bw}x{bh}")));
    }
    if x - bw / 2.0 < 0.0 || y - bh / 2.0 < 0.0 || x + bw / 2.0 > wf || y + bh / 2.0 > hf {
        return Err(Error::Invalid(format!(
            "box ({x}, {y}, {bw}, {bh}) extends outside {w}x{h} image"
        )));
    }
    Ok([x / wf, y / hf, bw / wf, bh / hf])
}

/// Inverse of [`normalize_bbox`].
pub fn denormalize_bbox(n: &[f64; 4], w: u32, h: u32) -> [f64; 4] {
    let (wf, hf) = (w as f64, h as f64);
    [n[0] * wf, n[1] * hf, n[2] * wf, n[3] * hf]
}

pub fn validate_scene(scene: &Scene) -> Result<()> {
    let fail = |field: &str, msg: String| -> Result<()> {
        Err(Error::InvalidScene { scene_id: scene.scene_id.clone(), field: field.to_string(), msg })
    };
    if scene.objects.is_empty() {
        return fail("objects", "scene has no objects".into());
    }
    if scene.t_h == 0 {
        return fail("T_h", "horizon must be positive".into());
    }
    if scene.ego.states.len() != scene.t_h {
        return fail(
            "ego.states",
            format!("expected {} states, got {}", scene.t_h, scene.ego.states.len()),
        );
    }
    for (si, state) in scene.ego.states.iter().enumerate() {
        if state.iter().any(|v| !v.is_finite()) {
            return fail(&format!("ego.states[{si}]"), "non-finite value".into());
        }
    }
    for (oi, obj) in scene.objects.iter().enumerate() {
        if obj.boxes.len() != scene.t_h {
            return fail(
                &format!("objects[{oi}].boxes"),
                format!("expected {} boxes, got {}", scene.t_h, obj.boxes.len()),
            );
        }
        for (bi, bbox) in obj.boxes.iter().enumerate() {
            if let Err(e) = normalize_bbox(bbox, scene.w, scene.h) {
                return fail(&format!("objects[{oi}].boxes[{bi}]"), e.to_string());
            }
        }
        for (name, feats) in [("appearance_feat", &obj.appearance_feat), ("depthsem_feat", &obj.depthsem_feat)] {
            if feats.len() != scene.t_h {
                return fail(
                    &format!("objects[{oi}].{name}"),
                    format!("expected {} rows, got {}", scene.t_h, feats.len()),
                );
            }
            let width = feats[0].len();
            for (fi, row) in feats.iter().enumerate() {
                if row.len() != width {
                    return fail(
                        &format!("objects[{oi}].{name}[{fi}]"),
                        format!("ragged row: {} vs {}", row.len(), width),
                    );
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return fail(&format!("objects[{oi}].{name}[{fi}]"), "non-finite value".into());
                }
            }
        }
    }
    if let Some(labels) = &scene.labels {
        if let Some(imp) = &labels.importance {
            if imp.len() != scene.objects.len() {
                return fail(
                    "labels.importance",
                    format!("{} labels for {} objects", imp.len(), scene.objects.len()),
                );
            }
            if imp.iter().any(|&v| v > 1) {
                return fail("labels.importance", "labels must be 0 or 1".into());
            }
        }
        if labels.future_traj.is_empty() {
            return fail("labels.future_traj", "empty trajectory".into());
        }
    }
    Ok(())
}

/// Reads a JSONL dataset: one Scene object per line, labeled and unlabeled
/// partitioned by the presence of importance labels.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut dataset = Dataset::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed { line: i + 1, msg: e.to_string() })?;
        validate_scene(&scene)?;
        if !seen.insert(scene.scene_id.clone()) {
            return Err(Error::DuplicateSceneId(scene.scene_id));
        }
        if scene.has_importance() {
            dataset.labeled.push(scene);
        } else {
            dataset.unlabeled.push(scene);
        }
    }
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for scene in dataset.labeled.iter().chain(&dataset.unlabeled) {
        serde_json::to_writer(&mut w, scene)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded shuffle split. The test side gets `floor(n * (1 - ratio))` scenes.
pub fn split_dataset(scenes: &[Scene], ratio: f64, seed: u64) -> Result<(Vec<Scene>, Vec<Scene>)> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..scenes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let test_n = ((scenes.len() as f64) * (1.0 - ratio)).floor() as usize;
    let test: Vec<Scene> = idx[..test_n].iter().map(|&i| scenes[i].clone()).collect();
    let train: Vec<Scene> = idx[test_n..].iter().map(|&i| scenes[i].clone()).collect();
    Ok((train, test))
}

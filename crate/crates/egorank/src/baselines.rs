//! Rule-based single-selection baselines. Each marks exactly one object per
//! scene as important; ties break toward the lowest object index.

use crate::error::{Error, Result};
use crate::scene::{normalize_bbox, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Largest bounding box at the current frame.
    LargestBox,
    /// Box center closest to the image center.
    ClosestToCenter,
    /// Smallest distance to the ego vehicle.
    ClosestToEgo,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] =
        [BaselineKind::LargestBox, BaselineKind::ClosestToCenter, BaselineKind::ClosestToEgo];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LargestBox => "B-1",
            BaselineKind::ClosestToCenter => "B-2",
            BaselineKind::ClosestToEgo => "B-3",
        }
    }
}

pub fn baseline_predict(scene: &Scene, kind: BaselineKind) -> Result<Vec<u8>> {
    let t_last = scene.t_h - 1;
    let mut best: Option<(usize, f64)> = None;
    // Scoring is "higher wins"; distances enter negated.
    for (i, obj) in scene.objects.iter().enumerate() {
        let score = match kind {
            BaselineKind::LargestBox => {
                let n = normalize_bbox(&obj.boxes[t_last], scene.w, scene.h)?;
                n[2] * n[3]
            }
            BaselineKind::ClosestToCenter => {
                let b = &obj.boxes[t_last];
                let dx = b[0] - scene.w as f64 / 2.0;
                let dy = b[1] - scene.h as f64 / 2.0;
                -(dx * dx + dy * dy).sqrt()
            }
            BaselineKind::ClosestToEgo => {
                let d = obj
                    .distance_to_ego
                    .ok_or_else(|| Error::MissingDistances(scene.scene_id.clone()))?;
                -d
            }
        };
        if best.map_or(true, |(_, bs)| score > bs) {
            best = Some((i, score));
        }
    }
    let pick = best.expect("scene has at least one object").0;
    let mut labels = vec![0u8; scene.objects.len()];
    labels[pick] = 1;
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{EgoTrack, Intention, ObjectClass, ObjectTrack};

    fn scene_with(boxes: Vec<[f64; 4]>, distances: Vec<Option<f64>>) -> Scene {
        let objects = boxes
            .into_iter()
            .zip(distances)
            .enumerate()
            .map(|(i, (b, d))| ObjectTrack {
                id: format!("o{i}"),
                class: ObjectClass::Vehicle,
                boxes: vec![b; 2],
                appearance_feat: vec![vec![0.0]; 2],
                depthsem_feat: vec![vec![0.0]; 2],
                distance_to_ego: d,
            })
            .collect();
        Scene {
            scene_id: "s".into(),
            w: 1280,
            h: 720,
            t_h: 2,
            intention: Intention::Forward,
            objects,
            ego: EgoTrack { states: vec![[0.0; 6]; 2] },
            labels: None,
        }
    }

    #[test]
    fn largest_box_picks_max_area() {
        // Normalized areas 0.02, 0.05, 0.01.
        let s = scene_with(
            vec![
                [640.0, 360.0, 128.0, 144.0],
                [640.0, 360.0, 320.0, 144.0],
                [640.0, 360.0, 128.0, 72.0],
            ],
            vec![None; 3],
        );
        assert_eq!(baseline_predict(&s, BaselineKind::LargestBox).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn center_baseline_picks_most_central() {
        let s = scene_with(
            vec![[640.0, 360.0, 10.0, 10.0], [1152.0, 648.0, 10.0, 10.0]],
            vec![None; 2],
        );
        assert_eq!(baseline_predict(&s, BaselineKind::ClosestToCenter).unwrap(), vec![1, 0]);
    }

    #[test]
    fn ego_distance_baseline_needs_distances() {
        let s = scene_with(vec![[640.0, 360.0, 10.0, 10.0]], vec![None]);
        assert!(matches!(
            baseline_predict(&s, BaselineKind::ClosestToEgo),
            Err(Error::MissingDistances(_))
        ));
        let s = scene_with(
            vec![[640.0, 360.0, 10.0, 10.0], [600.0, 360.0, 10.0, 10.0]],
            vec![Some(20.0), Some(8.0)],
        );
        assert_eq!(baseline_predict(&s, BaselineKind::ClosestToEgo).unwrap(), vec![0, 1]);
    }

    #[test]
    fn singleton_scene_selected_by_all_baselines() {
        let s = scene_with(vec![[640.0, 360.0, 10.0, 10.0]], vec![Some(5.0)]);
        for kind in BaselineKind::ALL {
            assert_eq!(baseline_predict(&s, kind).unwrap(), vec![1]);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let s = scene_with(
            vec![[640.0, 360.0, 64.0, 64.0], [200.0, 200.0, 64.0, 64.0]],
            vec![Some(7.0), Some(7.0)],
        );
        assert_eq!(baseline_predict(&s, BaselineKind::LargestBox).unwrap(), vec![1, 0]);
        assert_eq!(baseline_predict(&s, BaselineKind::ClosestToEgo).unwrap(), vec![1, 0]);
    }
}

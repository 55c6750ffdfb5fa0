//! Sequence encoders turning raw scene streams into fixed-size embeddings:
//! per-object features, a global context feature and an ego feature.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{Mlp, SeqEncoder};
use crate::scalar::Scalar;
use crate::scene::{normalize_bbox, EgoTrack, ObjectTrack, Scene};
use crate::tensor::{sorted_sum, Tensor};

/// The four sequence encoders plus the per-object fusion MLP.
#[derive(Clone, Debug)]
pub struct Encoders<S> {
    pub appearance: SeqEncoder<S>,
    pub bbox: SeqEncoder<S>,
    pub depthsem: SeqEncoder<S>,
    pub ego: SeqEncoder<S>,
    pub global: SeqEncoder<S>,
    /// Fuses appearance, depth/semantic and bbox features into one node
    /// attribute.
    pub project: Mlp<S>,
}

impl<S: Scalar> Encoders<S> {
    pub fn init(
        rng: &mut ChaCha8Rng,
        d_appearance: usize,
        d_depthsem: usize,
        lstm_hidden: usize,
        mlp_hidden: usize,
        feat_dim: usize,
    ) -> Self {
        Self {
            appearance: SeqEncoder::init(rng, d_appearance, lstm_hidden, mlp_hidden, feat_dim),
            bbox: SeqEncoder::init(rng, 4, lstm_hidden, mlp_hidden, feat_dim),
            depthsem: SeqEncoder::init(rng, d_depthsem, lstm_hidden, mlp_hidden, feat_dim),
            ego: SeqEncoder::init(rng, 6, lstm_hidden, mlp_hidden, feat_dim),
            global: SeqEncoder::init(rng, d_appearance + d_depthsem, lstm_hidden, mlp_hidden, feat_dim),
            project: Mlp::init(rng, &[3 * feat_dim, mlp_hidden, mlp_hidden, feat_dim]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self {
            appearance: self.appearance.bind(tape),
            bbox: self.bbox.bind(tape),
            depthsem: self.depthsem.bind(tape),
            ego: self.ego.bind(tape),
            global: self.global.bind(tape),
            project: self.project.bind(tape),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.appearance.visit(&format!("{prefix}.appearance"), out);
        self.bbox.visit(&format!("{prefix}.bbox"), out);
        self.depthsem.visit(&format!("{prefix}.depthsem"), out);
        self.ego.visit(&format!("{prefix}.ego"), out);
        self.global.visit(&format!("{prefix}.global"), out);
        self.project.visit(&format!("{prefix}.project"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        self.appearance.visit_mut(out);
        self.bbox.visit_mut(out);
        self.depthsem.visit_mut(out);
        self.ego.visit_mut(out);
        self.global.visit_mut(out);
        self.project.visit_mut(out);
    }
}

/// Encodes one stream of `t_h` rows: LSTM final hidden state through the MLP
/// head. The batched model path feeds per-frame row stacks to the same
/// parameters, which computes identical values row by row.
pub fn encode_sequence<S: Scalar>(
    tape: &mut Tape<S>,
    encoder: &SeqEncoder<S>,
    stream: &Tensor<S>,
    t_h: usize,
) -> Result<Tensor<S>> {
    if stream.shape().len() != 2 || stream.shape()[0] != t_h {
        return Err(Error::Shape {
            op: "encode_sequence",
            detail: format!("stream {:?} does not have {} rows", stream.shape(), t_h),
        });
    }
    let d = stream.cols();
    let frames: Vec<Tensor<S>> = (0..t_h)
        .map(|t| {
            let row = stream.data()[t * d..(t + 1) * d].to_vec();
            Tensor::matrix(1, d, row).expect("row shape")
        })
        .collect();
    encoder.forward(tape, &frames)
}

fn rows_to_tensor<S: Scalar>(rows: &[Vec<f64>]) -> Tensor<S> {
    let d = rows[0].len();
    let data: Vec<S> = rows.iter().flat_map(|r| r.iter().map(|&v| S::of_f64(v))).collect();
    Tensor::matrix(rows.len(), d, data).expect("row shape")
}

/// Per-object feature: appearance, depth/semantic and normalized-bbox
/// streams encoded separately and fused by the projection MLP.
pub fn encode_object<S: Scalar>(
    tape: &mut Tape<S>,
    encs: &Encoders<S>,
    track: &ObjectTrack,
    w: u32,
    h: u32,
    t_h: usize,
) -> Result<Tensor<S>> {
    let app = rows_to_tensor::<S>(&track.appearance_feat);
    let ds = rows_to_tensor::<S>(&track.depthsem_feat);
    let boxes: Vec<Vec<f64>> = track
        .boxes
        .iter()
        .map(|b| normalize_bbox(b, w, h).map(|n| n.to_vec()))
        .collect::<Result<_>>()?;
    let bx = rows_to_tensor::<S>(&boxes);
    let v_a = encode_sequence(tape, &encs.appearance, &app, t_h)?;
    let v_ds = encode_sequence(tape, &encs.depthsem, &ds, t_h)?;
    let v_b = encode_sequence(tape, &encs.bbox, &bx, t_h)?;
    let fused = tape.concat(&[&v_a, &v_ds, &v_b])?;
    encs.project.forward(tape, &fused)
}

/// Per-frame global stream: the object-mean of each feature stream,
/// accumulated in value order so the result is independent of object order.
pub fn global_stream(scene: &Scene) -> Vec<Vec<f64>> {
    let n = scene.objects.len();
    let d_a = scene.objects[0].appearance_feat[0].len();
    let d_ds = scene.objects[0].depthsem_feat[0].len();
    let mut frames = Vec::with_capacity(scene.t_h);
    let mut scratch = Vec::with_capacity(n);
    for t in 0..scene.t_h {
        let mut row = Vec::with_capacity(d_a + d_ds);
        for j in 0..d_a {
            scratch.clear();
            scratch.extend(scene.objects.iter().map(|o| o.appearance_feat[t][j]));
            row.push(sorted_sum(&mut scratch) / n as f64);
        }
        for j in 0..d_ds {
            scratch.clear();
            scratch.extend(scene.objects.iter().map(|o| o.depthsem_feat[t][j]));
            row.push(sorted_sum(&mut scratch) / n as f64);
        }
        frames.push(row);
    }
    frames
}

pub fn encode_global<S: Scalar>(
    tape: &mut Tape<S>,
    encs: &Encoders<S>,
    scene: &Scene,
) -> Result<Tensor<S>> {
    let stream = rows_to_tensor::<S>(&global_stream(scene));
    encode_sequence(tape, &encs.global, &stream, scene.t_h)
}

pub fn encode_ego<S: Scalar>(
    tape: &mut Tape<S>,
    encs: &Encoders<S>,
    ego: &EgoTrack,
    t_h: usize,
) -> Result<Tensor<S>> {
    let rows: Vec<Vec<f64>> = ego.states.iter().map(|s| s.to_vec()).collect();
    let stream = rows_to_tensor::<S>(&rows);
    encode_sequence(tape, &encs.ego, &stream, t_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeqEncoder;
    use crate::scene::{EgoTrack, Intention, Labels, ObjectClass, ObjectTrack};
    use rand::SeedableRng;

    fn encoders(feat: usize) -> Encoders<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Encoders::init(&mut rng, 4, 3, 8, 8, feat)
    }

    fn track(seed: f64) -> ObjectTrack {
        ObjectTrack {
            id: "t".into(),
            class: ObjectClass::Vehicle,
            boxes: vec![[640.0 + seed, 360.0, 64.0, 48.0]; 4],
            appearance_feat: (0..4).map(|t| vec![seed, t as f64 * 0.1, -seed, 0.5]).collect(),
            depthsem_feat: (0..4).map(|t| vec![seed * 0.5, t as f64 * 0.2, 1.0]).collect(),
            distance_to_ego: None,
        }
    }

    fn scene(n: usize) -> Scene {
        Scene {
            scene_id: "s".into(),
            w: 1280,
            h: 720,
            t_h: 4,
            intention: Intention::Forward,
            objects: (0..n).map(|i| track(i as f64)).collect(),
            ego: EgoTrack { states: vec![[0.0, 0.0, 5.0, 0.0, 0.1, 0.0]; 4] },
            labels: Some(Labels {
                importance: Some(vec![1; n]),
                ego_action: crate::scene::EgoAction::ConstantSpeed,
                future_traj: vec![[1.0, 0.0]],
            }),
        }
    }

    #[test]
    fn zero_encoder_maps_everything_to_zero() {
        let enc = SeqEncoder::<f64>::zeros(4, 8, 8, 6);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let stream = Tensor::matrix(4, 4, (0..16).map(|i| i as f64).collect()).unwrap();
        let v = encode_sequence(&mut tape, &bound, &stream, 4).unwrap();
        assert_eq!(v.shape(), &[1, 6]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_row_count_is_rejected() {
        let enc = SeqEncoder::<f64>::zeros(4, 8, 8, 6);
        let mut tape = Tape::new();
        let stream = Tensor::matrix(3, 4, vec![0.0; 12]).unwrap();
        assert!(encode_sequence(&mut tape, &enc, &stream, 4).is_err());
    }

    #[test]
    fn identical_tracks_encode_identically() {
        let encs = encoders(5);
        let mut tape = Tape::new();
        let bound = encs.bind(&mut tape);
        let a = encode_object(&mut tape, &bound, &track(1.0), 1280, 720, 4).unwrap();
        let b = encode_object(&mut tape, &bound, &track(1.0), 1280, 720, 4).unwrap();
        assert_eq!(a.data(), b.data());
        let c = encode_object(&mut tape, &bound, &track(2.0), 1280, 720, 4).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn global_stream_is_permutation_invariant_bitwise() {
        let mut s = scene(5);
        let a = global_stream(&s);
        s.objects.reverse();
        let b = global_stream(&s);
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn single_object_global_stream_equals_its_streams() {
        let s = scene(1);
        let g = global_stream(&s);
        for (t, row) in g.iter().enumerate() {
            assert_eq!(&row[..4], &s.objects[0].appearance_feat[t][..]);
            assert_eq!(&row[4..], &s.objects[0].depthsem_feat[t][..]);
        }
    }

    #[test]
    fn encoder_outputs_have_configured_dim() {
        let encs = encoders(5);
        let mut tape = Tape::new();
        let bound = encs.bind(&mut tape);
        let s = scene(3);
        let g = encode_global(&mut tape, &bound, &s).unwrap();
        let e = encode_ego(&mut tape, &bound, &s.ego, 4).unwrap();
        assert_eq!(g.shape(), &[1, 5]);
        assert_eq!(e.shape(), &[1, 5]);
    }
}

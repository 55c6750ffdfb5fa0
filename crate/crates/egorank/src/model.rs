//! The full importance model: encoders, relation graph and heads, with a
//! batched forward pass over stacked scenes.
//!
//! Objects from all scenes in a batch are stacked into one row matrix so the
//! sequence encoders and MLPs run on large matmuls; per-scene structure is
//! carried by row ranges (graph edges, pooling segments, ego/global rows).

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint;
use crate::config::ModelConfig;
use crate::encoders::{global_stream, Encoders};
use crate::error::{Error, Result};
use crate::graph::{GraphLayout, RelationGraph};
use crate::heads::{assemble_comprehensive_feature, gumbel_pair, gumbel_weights, Heads};
use crate::scene::{normalize_bbox, Scene};
use crate::tensor::Tensor as GenericTensor;

type Tensor = GenericTensor<f64>;

#[derive(Clone, Debug)]
pub struct ImportanceModel {
    pub cfg: ModelConfig,
    pub encoders: Encoders<f64>,
    pub graph: Option<RelationGraph<f64>>,
    pub heads: Heads<f64>,
}

impl ImportanceModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.feat_dim;
        let encoders = Encoders::init(
            &mut rng,
            cfg.d_appearance,
            cfg.d_depthsem,
            cfg.lstm_hidden,
            cfg.mlp_hidden,
            f,
        );
        let graph = if cfg.use_relation_graph {
            Some(RelationGraph::init(&mut rng, f, cfg.mlp_hidden, cfg.mp_rounds))
        } else {
            None
        };
        let o_dim = f * if cfg.use_relation_graph { 4 } else { 3 } + 3;
        let behavior_dim = 3 * f + 3;
        let heads = Heads::init(
            &mut rng,
            o_dim,
            behavior_dim,
            cfg.cls_hidden,
            cfg.aux_hidden_a,
            cfg.aux_hidden_b,
            cfg.t_future,
            cfg.tau,
        );
        Ok(Self { cfg: cfg.clone(), encoders, graph, heads })
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> Self {
        Self {
            cfg: self.cfg.clone(),
            encoders: self.encoders.bind(tape),
            graph: self.graph.as_ref().map(|g| g.bind(tape)),
            heads: self.heads.bind(tape),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.encoders.visit("encoders", &mut out);
        if let Some(g) = &self.graph {
            g.visit("graph", &mut out);
        }
        self.heads.visit("heads", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.encoders.visit_mut(&mut out);
        if let Some(g) = &mut self.graph {
            g.visit_mut(&mut out);
        }
        self.heads.visit_mut(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_params())
    }

    /// Rebuilds a model from config and overwrites every parameter from the
    /// checkpoint; names and shapes must match the config exactly.
    pub fn load(cfg: &ModelConfig, path: &Path) -> Result<Self> {
        let mut model = Self::init(cfg, 0)?;
        let loaded = checkpoint::load::<f64>(path)?;
        let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
        if names.len() != loaded.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} tensors, model wants {}",
                loaded.len(),
                names.len()
            )));
        }
        let mut params = model.params_mut();
        for ((name, (ck_name, ck_tensor)), param) in
            names.iter().zip(loaded.into_iter()).zip(params.iter_mut())
        {
            if *name != ck_name {
                return Err(Error::Invalid(format!("checkpoint tensor {ck_name} where {name} expected")));
            }
            if param.shape() != ck_tensor.shape() {
                return Err(Error::Invalid(format!(
                    "checkpoint tensor {ck_name} has shape {:?}, model wants {:?}",
                    ck_tensor.shape(),
                    param.shape()
                )));
            }
            **param = ck_tensor;
        }
        Ok(model)
    }
}

/// How the important-object pool is formed.
pub enum PoolMode<'a> {
    /// Gumbel-softmax weights with frozen noise, one `(g1, g0)` pair per
    /// stacked object row.
    Train { draws: &'a [(f64, f64)] },
    /// Hard selection of objects with score above one half.
    Eval,
}

pub struct ForwardOptions<'a> {
    pub with_aux: bool,
    pub pool: PoolMode<'a>,
}

pub struct BatchOut {
    /// One score per stacked object row, in scene order.
    pub scores: Tensor,
    pub action_logits: Option<Tensor>,
    pub traj: Option<Tensor>,
    /// Per-scene (start, len) into the stacked object rows.
    pub ranges: Vec<(usize, usize)>,
}

impl BatchOut {
    pub fn scene_scores(&self, i: usize) -> &[f64] {
        let (start, len) = self.ranges[i];
        &self.scores.data()[start..start + len]
    }
}

struct StackedInputs {
    app_frames: Vec<Tensor>,
    ds_frames: Vec<Tensor>,
    box_frames: Vec<Tensor>,
    ego_frames: Vec<Tensor>,
    glob_frames: Vec<Tensor>,
    ranges: Vec<(usize, usize)>,
    obj_scene: Arc<Vec<usize>>,
    intent_obj: Tensor,
    intent_scene: Tensor,
}

fn build_inputs(cfg: &ModelConfig, scenes: &[&Scene], use_intention: bool) -> Result<StackedInputs> {
    let t_h = cfg.t_history;
    let total: usize = scenes.iter().map(|s| s.objects.len()).sum();
    let mut ranges = Vec::with_capacity(scenes.len());
    let mut obj_scene = Vec::with_capacity(total);
    let mut start = 0;
    for (si, scene) in scenes.iter().enumerate() {
        if scene.t_h != t_h {
            return Err(Error::InvalidConfig(format!(
                "scene {} has horizon {}, model wants {}",
                scene.scene_id, scene.t_h, t_h
            )));
        }
        let d_a = scene.objects[0].appearance_feat[0].len();
        let d_ds = scene.objects[0].depthsem_feat[0].len();
        if d_a != cfg.d_appearance || d_ds != cfg.d_depthsem {
            return Err(Error::InvalidConfig(format!(
                "scene {} feature dims ({d_a}, {d_ds}) do not match model ({}, {})",
                scene.scene_id, cfg.d_appearance, cfg.d_depthsem
            )));
        }
        ranges.push((start, scene.objects.len()));
        for _ in 0..scene.objects.len() {
            obj_scene.push(si);
        }
        start += scene.objects.len();
    }

    let mut app_frames = Vec::with_capacity(t_h);
    let mut ds_frames = Vec::with_capacity(t_h);
    let mut box_frames = Vec::with_capacity(t_h);
    let mut ego_frames = Vec::with_capacity(t_h);
    let mut glob_frames = Vec::with_capacity(t_h);
    let globals: Vec<Vec<Vec<f64>>> = scenes.iter().map(|s| global_stream(s)).collect();
    for t in 0..t_h {
        let mut app = Vec::with_capacity(total * cfg.d_appearance);
        let mut ds = Vec::with_capacity(total * cfg.d_depthsem);
        let mut bx = Vec::with_capacity(total * 4);
        for scene in scenes {
            for obj in &scene.objects {
                app.extend_from_slice(&obj.appearance_feat[t]);
                ds.extend_from_slice(&obj.depthsem_feat[t]);
                bx.extend_from_slice(&normalize_bbox(&obj.boxes[t], scene.w, scene.h)?);
            }
        }
        app_frames.push(Tensor::matrix(total, cfg.d_appearance, app)?);
        ds_frames.push(Tensor::matrix(total, cfg.d_depthsem, ds)?);
        box_frames.push(Tensor::matrix(total, 4, bx)?);
        let mut ego = Vec::with_capacity(scenes.len() * 6);
        let mut glob = Vec::with_capacity(scenes.len() * (cfg.d_appearance + cfg.d_depthsem));
        for (si, scene) in scenes.iter().enumerate() {
            ego.extend_from_slice(&scene.ego.states[t]);
            glob.extend_from_slice(&globals[si][t]);
        }
        ego_frames.push(Tensor::matrix(scenes.len(), 6, ego)?);
        glob_frames.push(Tensor::matrix(scenes.len(), cfg.d_appearance + cfg.d_depthsem, glob)?);
    }

    let mut intent_obj = Vec::with_capacity(total * 3);
    let mut intent_scene = Vec::with_capacity(scenes.len() * 3);
    for scene in scenes {
        let hot = if use_intention { scene.intention.one_hot() } else { [0.0; 3] };
        intent_scene.extend_from_slice(&hot);
        for _ in 0..scene.objects.len() {
            intent_obj.extend_from_slice(&hot);
        }
    }

    Ok(StackedInputs {
        app_frames,
        ds_frames,
        box_frames,
        ego_frames,
        glob_frames,
        ranges,
        obj_scene: Arc::new(obj_scene),
        intent_obj: Tensor::matrix(total, 3, intent_obj)?,
        intent_scene: Tensor::matrix(scenes.len(), 3, intent_scene)?,
    })
}

impl ImportanceModel {
    /// Forward pass over a batch; `bound` must be `self.bind(tape)` output.
    /// Call on the bound copy.
    pub fn forward_batch(
        &self,
        tape: &mut Tape<f64>,
        scenes: &[&Scene],
        opts: &ForwardOptions,
    ) -> Result<BatchOut> {
        if scenes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cfg = &self.cfg;
        let inp = build_inputs(cfg, scenes, cfg.use_intention)?;
        let f = cfg.feat_dim;

        let v_a = self.encoders.appearance.forward(tape, &inp.app_frames)?;
        let v_ds = self.encoders.depthsem.forward(tape, &inp.ds_frames)?;
        let v_b = self.encoders.bbox.forward(tape, &inp.box_frames)?;
        let fused = tape.concat(&[&v_a, &v_ds, &v_b])?;
        let v = self.encoders.project.forward(tape, &fused)?;

        let v_bar = match &self.graph {
            Some(g) => {
                let layout = GraphLayout::new(&inp.ranges);
                Some(g.run(tape, &v, &layout)?)
            }
            None => None,
        };

        let v_ego_scene = self.encoders.ego.forward(tape, &inp.ego_frames)?;
        let v_glob_scene = self.encoders.global.forward(tape, &inp.glob_frames)?;
        let v_ego_obj = tape.gather_rows(&v_ego_scene, inp.obj_scene.clone())?;
        let v_glob_obj = tape.gather_rows(&v_glob_scene, inp.obj_scene.clone())?;

        let o = assemble_comprehensive_feature(
            tape,
            &v,
            v_bar.as_ref(),
            &v_glob_obj,
            &v_ego_obj,
            &inp.intent_obj,
        )?;
        let scores = self.heads.importance_scores(tape, &o)?;

        let (action_logits, traj) = if opts.with_aux {
            let ones_row = tape.constant(&Tensor::full(vec![1, f], 1.0));
            let z = match &opts.pool {
                PoolMode::Train { draws } => gumbel_weights(tape, &scores, cfg.tau, draws)?,
                PoolMode::Eval => {
                    let hard: Vec<f64> =
                        scores.data().iter().map(|&s| (s > 0.5) as u8 as f64).collect();
                    tape.constant(&Tensor::matrix(hard.len(), 1, hard)?)
                }
            };
            let z_tiled = tape.matmul(&z, &ones_row)?;
            let weighted = tape.mul(&v, &z_tiled)?;
            let segments: Arc<Vec<(usize, usize)>> = Arc::new(inp.ranges.clone());
            let pooled = tape.segment_sum(&weighted, segments)?;
            let inv: Vec<f64> = match &opts.pool {
                PoolMode::Train { .. } => inp.ranges.iter().map(|&(_, n)| 1.0 / n as f64).collect(),
                PoolMode::Eval => inp
                    .ranges
                    .iter()
                    .map(|&(start, n)| {
                        let picked = scores.data()[start..start + n].iter().filter(|&&s| s > 0.5).count();
                        if picked == 0 {
                            0.0
                        } else {
                            1.0 / picked as f64
                        }
                    })
                    .collect(),
            };
            let inv = tape.constant(&Tensor::matrix(scenes.len(), 1, inv)?);
            let inv_tiled = tape.matmul(&inv, &ones_row)?;
            let v_imp = tape.mul(&pooled, &inv_tiled)?;
            let behavior_in =
                tape.concat(&[&v_imp, &v_ego_scene, &v_glob_scene, &inp.intent_scene])?;
            let (a, t) = self.heads.predict_ego_behavior(tape, &behavior_in)?;
            (Some(a), Some(t))
        } else {
            (None, None)
        };

        Ok(BatchOut { scores, action_logits, traj, ranges: inp.ranges })
    }
}

/// Per-scene Gumbel noise, one pair per object, derived from the global seed,
/// the scene id and the epoch so parallel evaluation stays reproducible.
pub fn gumbel_draws(scenes: &[&Scene], seed: u64, epoch: u64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(scenes.iter().map(|s| s.objects.len()).sum());
    for scene in scenes {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in scene.scene_id.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ h ^ epoch.wrapping_mul(0x9E3779B97F4A7C15),
        );
        for _ in 0..scene.objects.len() {
            out.push(gumbel_pair(&mut rng));
        }
    }
    out
}

/// Evaluation scores for a list of scenes, batched.
pub fn score_scenes(model: &ImportanceModel, scenes: &[&Scene], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut all = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = bound.forward_batch(
            &mut tape,
            chunk,
            &ForwardOptions { with_aux: false, pool: PoolMode::Eval },
        )?;
        for i in 0..chunk.len() {
            all.push(out.scene_scores(i).to_vec());
        }
    }
    Ok(all)
}

/// Hard predictions from scores: important iff the score exceeds one half.
pub fn predict(scores: &[Vec<f64>]) -> Vec<Vec<u8>> {
    scores.iter().map(|s| s.iter().map(|&x| (x > 0.5) as u8).collect()).collect()
}

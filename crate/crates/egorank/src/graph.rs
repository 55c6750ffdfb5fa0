//! Fully-connected message passing over per-object features.
//!
//! For every ordered pair (receiver j, sender k), the edge attribute is
//! `f_e([v_j, v_k])`; opposite directions get distinct attributes. Each node
//! update sums its incoming edges and applies `f_v`. Incoming messages are
//! reduced in value order (see `segment_sum`), so permuting the nodes
//! permutes the output bit-exactly. Rounds share the same `f_e`/`f_v`
//! weights.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Edge bookkeeping for a batch of scenes stacked into one node matrix.
/// Edges are ordered receiver-major; each receiver's incoming edges form one
/// contiguous segment.
#[derive(Clone, Debug)]
pub struct GraphLayout {
    pub receiver_ids: Arc<Vec<usize>>,
    pub sender_ids: Arc<Vec<usize>>,
    pub segments: Arc<Vec<(usize, usize)>>,
}

impl GraphLayout {
    /// `ranges` gives each scene's (start row, object count) in the stacked
    /// node matrix.
    pub fn new(ranges: &[(usize, usize)]) -> Self {
        let mut receiver_ids = Vec::new();
        let mut sender_ids = Vec::new();
        let mut segments = Vec::new();
        for &(start, len) in ranges {
            for j in 0..len {
                let seg_start = receiver_ids.len();
                for k in 0..len {
                    if k == j {
                        continue;
                    }
                    receiver_ids.push(start + j);
                    sender_ids.push(start + k);
                }
                segments.push((seg_start, len.saturating_sub(1)));
            }
        }
        Self {
            receiver_ids: Arc::new(receiver_ids),
            sender_ids: Arc::new(sender_ids),
            segments: Arc::new(segments),
        }
    }

    pub fn single(n: usize) -> Self {
        Self::new(&[(0, n)])
    }
}

#[derive(Clone, Debug)]
pub struct RelationGraph<S> {
    pub edge: Mlp<S>,
    pub node: Mlp<S>,
    pub rounds: usize,
}

impl<S: Scalar> RelationGraph<S> {
    pub fn init(rng: &mut ChaCha8Rng, feat_dim: usize, mlp_hidden: usize, rounds: usize) -> Self {
        Self {
            edge: Mlp::init(rng, &[2 * feat_dim, mlp_hidden, mlp_hidden, feat_dim]),
            node: Mlp::init(rng, &[feat_dim, mlp_hidden, mlp_hidden, feat_dim]),
            rounds,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self { edge: self.edge.bind(tape), node: self.node.bind(tape), rounds: self.rounds }
    }

    /// One edge update and node update. An isolated node has an empty
    /// incoming sum, so its update is `f_v(0)`.
    pub fn message_passing_round(
        &self,
        tape: &mut Tape<S>,
        v: &Tensor<S>,
        layout: &GraphLayout,
    ) -> Result<Tensor<S>> {
        if v.shape().len() != 2 {
            return Err(Error::Shape {
                op: "message_passing_round",
                detail: format!("node matrix must be 2-D, got {:?}", v.shape()),
            });
        }
        let incoming = if layout.receiver_ids.is_empty() {
            // No edges anywhere in the batch (all scenes have one object):
            // every incoming sum is empty, hence zero.
            tape.constant(&Tensor::zeros(vec![layout.segments.len(), v.cols()]))
        } else {
            let receivers = tape.gather_rows(v, layout.receiver_ids.clone())?;
            let senders = tape.gather_rows(v, layout.sender_ids.clone())?;
            let pair = tape.concat(&[&receivers, &senders])?;
            let edges = self.edge.forward(tape, &pair)?;
            tape.segment_sum(&edges, layout.segments.clone())?
        };
        self.node.forward(tape, &incoming)
    }

    /// Applies the round `rounds` times; round r consumes round r-1 output.
    /// The input node attributes survive alongside the returned relation
    /// features.
    pub fn run(&self, tape: &mut Tape<S>, v: &Tensor<S>, layout: &GraphLayout) -> Result<Tensor<S>> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("relation graph needs rounds >= 1".into()));
        }
        let mut h = v.clone();
        for _ in 0..self.rounds {
            h = self.message_passing_round(tape, &h, layout)?;
        }
        Ok(h)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.edge.visit(&format!("{prefix}.edge"), out);
        self.node.visit(&format!("{prefix}.node"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        self.edge.visit_mut(out);
        self.node.visit_mut(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn graph(rounds: usize) -> RelationGraph<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        RelationGraph::init(&mut rng, 4, 8, rounds)
    }

    fn nodes(n: usize) -> Tensor<f64> {
        Tensor::matrix(n, 4, (0..n * 4).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn single_node_gets_fv_of_zero() {
        let g = graph(1);
        let mut tape = Tape::new();
        let bound = g.bind(&mut tape);
        let v = nodes(1);
        let out = bound.message_passing_round(&mut tape, &v, &GraphLayout::single(1)).unwrap();

        let mut tape2 = Tape::new();
        let bound2 = g.bind(&mut tape2);
        let zero = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        let expect = bound2.node.forward(&mut tape2, &zero).unwrap();
        assert_eq!(out.data(), expect.data());
    }

    #[test]
    fn one_round_equals_single_round_call() {
        let g = graph(1);
        let v = nodes(3);
        let layout = GraphLayout::single(3);
        let mut t1 = Tape::new();
        let b1 = g.bind(&mut t1);
        let a = b1.run(&mut t1, &v, &layout).unwrap();
        let mut t2 = Tape::new();
        let b2 = g.bind(&mut t2);
        let b = b2.message_passing_round(&mut t2, &v, &layout).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn duplicate_nodes_receive_identical_updates() {
        let g = graph(2);
        let mut data = nodes(3).data().to_vec();
        data.copy_within(0..4, 8); // node 2 duplicates node 0
        let v = Tensor::matrix(3, 4, data).unwrap();
        let mut tape = Tape::new();
        let bound = g.bind(&mut tape);
        let out = bound.run(&mut tape, &v, &GraphLayout::single(3)).unwrap();
        assert_eq!(out.data()[0..4], out.data()[8..12]);
    }

    #[test]
    fn permutation_equivariance_is_bit_exact() {
        let g = graph(2);
        let n = 5;
        let v = nodes(n);
        let layout = GraphLayout::single(n);
        let mut t1 = Tape::new();
        let out = g.bind(&mut t1).run(&mut t1, &v, &layout).unwrap();

        let perm = [3usize, 0, 4, 1, 2];
        let mut pdata = vec![0.0; n * 4];
        for (new_row, &old_row) in perm.iter().enumerate() {
            pdata[new_row * 4..(new_row + 1) * 4].copy_from_slice(&v.data()[old_row * 4..(old_row + 1) * 4]);
        }
        let pv = Tensor::matrix(n, 4, pdata).unwrap();
        let mut t2 = Tape::new();
        let pout = g.bind(&mut t2).run(&mut t2, &pv, &layout).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..4 {
                assert_eq!(
                    pout.data()[new_row * 4 + c].to_bits(),
                    out.data()[old_row * 4 + c].to_bits()
                );
            }
        }
    }

    #[test]
    fn directed_edges_differ() {
        // With random weights, f_e([a, b]) != f_e([b, a]) in general.
        let g = graph(1);
        let mut tape = Tape::new();
        let bound = g.bind(&mut tape);
        let a = Tensor::matrix(1, 8, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 8, vec![-1.0, 0.5, 2.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let ea = bound.edge.forward(&mut tape, &a).unwrap();
        let eb = bound.edge.forward(&mut tape, &b).unwrap();
        assert_ne!(ea.data(), eb.data());
    }

    #[test]
    fn batched_layout_isolates_scenes() {
        // Two scenes stacked: messages must not cross scene boundaries.
        let g = graph(1);
        let layout = GraphLayout::new(&[(0, 2), (2, 1)]);
        let v = nodes(3);
        let mut tape = Tape::new();
        let bound = g.bind(&mut tape);
        let out = bound.message_passing_round(&mut tape, &v, &layout).unwrap();

        // Lone node in scene 2 equals the f_v(0) value.
        let mut t2 = Tape::new();
        let b2 = g.bind(&mut t2);
        let zero = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        let expect = b2.node.forward(&mut t2, &zero).unwrap();
        assert_eq!(&out.data()[8..12], expect.data());
    }
}

//! Gradient checks: every tape op, the LSTM cell and the full
//! encoder-graph-heads-loss pipeline against central finite differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egorank::autodiff::Tape as GenericTape;
use egorank::config::ModelConfig;
use egorank::loss::{supervised_loss, unlabeled_loss, LossWeights};
use egorank::model::{gumbel_draws, ForwardOptions, ImportanceModel, PoolMode};
use egorank::nn::Lstm;
use egorank::pseudo::PseudoLabeledScene;
use egorank::scene::Scene;
use egorank::synth::{generate_dataset, GenConfig};
use egorank::tensor::Tensor as GenericTensor;

type Tape = GenericTape<f64>;
type Tensor = GenericTensor<f64>;

const FD_H: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Relative error with a floor tied to the gradient scale: finite-difference
/// roundoff is proportional to the loss magnitude, so coordinates far below
/// the dominant gradient scale are compared against that scale instead.
fn rel_err_scaled(a: f64, b: f64, grad_scale: f64) -> f64 {
    let floor = 1e-3 * grad_scale.max(1.0);
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_scaled(a, b, 1.0)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Checks d(loss)/d(input) for every coordinate of every input, where
/// `loss = sum(f(inputs) * fixed_random_weights)`.
fn check_op<F>(name: &str, instances: usize, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, f: F)
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D15EA5E ^ name.len() as u64);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let inputs = make(&mut rng);
        let eval = |vals: &[Vec<f64>], weights: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let leaves: Vec<Tensor> = inputs
                .iter()
                .zip(vals)
                .map(|(proto, v)| {
                    let t = Tensor::new(proto.shape().to_vec(), v.clone()).unwrap();
                    tape.leaf(&t, true)
                })
                .collect();
            let out = f(&mut tape, &leaves);
            let w = Tensor::new(out.shape().to_vec(), weights.to_vec()).unwrap();
            let prod = tape.mul(&out, &w).unwrap();
            let loss = tape.sum(&prod).unwrap();
            loss.item().unwrap()
        };

        let vals: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
        // Fixed scalarization weights per instance.
        let out_len = {
            let mut tape = Tape::new();
            let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
            f(&mut tape, &leaves).numel()
        };
        let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Reverse-mode gradients.
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
        let out = f(&mut tape, &leaves);
        let w = Tensor::new(out.shape().to_vec(), weights.clone()).unwrap();
        let prod = tape.mul(&out, &w).unwrap();
        let loss = tape.sum(&prod).unwrap();
        let grads = tape.backward(&loss).unwrap();

        for (i, leaf) in leaves.iter().enumerate() {
            let g = grads.wrt(leaf).unwrap();
            for j in 0..g.numel() {
                let mut plus = vals.clone();
                plus[i][j] += FD_H;
                let mut minus = vals.clone();
                minus[i][j] -= FD_H;
                let fd = (eval(&plus, &weights) - eval(&minus, &weights)) / (2.0 * FD_H);
                let err = rel_err(g.data()[j], fd);
                worst = worst.max(err);
                assert!(
                    err < TOL,
                    "{name} instance {inst} input {i} coord {j}: ad={} fd={fd} err={err}",
                    g.data()[j]
                );
            }
        }
    }
    println!("gradcheck {name}: max rel err {worst:.3e}");
}

#[test]
fn op_matmul() {
    check_op(
        "matmul",
        100,
        |rng| {
            vec![
                Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -1.5, 1.5)).unwrap(),
                Tensor::matrix(4, 2, random_matrix(rng, 4, 2, -1.5, 1.5)).unwrap(),
            ]
        },
        |tape, x| tape.matmul(&x[0], &x[1]).unwrap(),
    );
}

#[test]
fn op_add_broadcast() {
    check_op(
        "add+broadcast",
        100,
        |rng| {
            vec![
                Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.0, 2.0)).unwrap(),
                Tensor::vector(random_matrix(rng, 1, 4, -2.0, 2.0)).unwrap(),
            ]
        },
        |tape, x| tape.add(&x[0], &x[1]).unwrap(),
    );
}

#[test]
fn op_sub() {
    check_op(
        "sub",
        100,
        |rng| {
            vec![
                Tensor::matrix(2, 5, random_matrix(rng, 2, 5, -2.0, 2.0)).unwrap(),
                Tensor::matrix(2, 5, random_matrix(rng, 2, 5, -2.0, 2.0)).unwrap(),
            ]
        },
        |tape, x| tape.sub(&x[0], &x[1]).unwrap(),
    );
}

#[test]
fn op_mul_broadcast() {
    check_op(
        "multiply+broadcast",
        100,
        |rng| {
            vec![
                Tensor::matrix(3, 4, random_matrix(rng, 3, 4, 0.2, 2.0)).unwrap(),
                Tensor::vector(random_matrix(rng, 1, 4, 0.2, 2.0)).unwrap(),
            ]
        },
        |tape, x| tape.mul(&x[0], &x[1]).unwrap(),
    );
}

#[test]
fn op_concat() {
    check_op(
        "concat",
        100,
        |rng| {
            vec![
                Tensor::matrix(2, 3, random_matrix(rng, 2, 3, -1.0, 1.0)).unwrap(),
                Tensor::matrix(2, 2, random_matrix(rng, 2, 2, -1.0, 1.0)).unwrap(),
                Tensor::matrix(2, 4, random_matrix(rng, 2, 4, -1.0, 1.0)).unwrap(),
            ]
        },
        |tape, x| tape.concat(&[&x[0], &x[1], &x[2]]).unwrap(),
    );
}

#[test]
fn op_relu_away_from_kink() {
    check_op(
        "relu",
        100,
        |rng| {
            let data: Vec<f64> = (0..12)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..2.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            vec![Tensor::matrix(3, 4, data).unwrap()]
        },
        |tape, x| tape.relu(&x[0]).unwrap(),
    );
}

#[test]
fn op_tanh() {
    check_op(
        "tanh",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.tanh(&x[0]).unwrap(),
    );
}

#[test]
fn op_sigmoid() {
    check_op(
        "sigmoid",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.5, 2.5)).unwrap()],
        |tape, x| tape.sigmoid(&x[0]).unwrap(),
    );
}

#[test]
fn op_log() {
    check_op(
        "log",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, 0.2, 3.0)).unwrap()],
        |tape, x| tape.log(&x[0]).unwrap(),
    );
}

#[test]
fn op_exp() {
    check_op(
        "exp",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -1.5, 1.5)).unwrap()],
        |tape, x| tape.exp(&x[0]).unwrap(),
    );
}

#[test]
fn op_softmax() {
    check_op(
        "softmax",
        100,
        |rng| vec![Tensor::matrix(3, 5, random_matrix(rng, 3, 5, -2.0, 2.0)).unwrap()],
        |tape, x| tape.softmax(&x[0]).unwrap(),
    );
}

#[test]
fn op_sum_and_mean() {
    check_op(
        "sum",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.sum(&x[0]).unwrap(),
    );
    check_op(
        "mean",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.mean(&x[0]).unwrap(),
    );
}

#[test]
fn op_slice() {
    check_op(
        "slice",
        100,
        |rng| vec![Tensor::matrix(3, 6, random_matrix(rng, 3, 6, -2.0, 2.0)).unwrap()],
        |tape, x| tape.slice_cols(&x[0], 1, 3).unwrap(),
    );
}

#[test]
fn op_power() {
    check_op(
        "power2",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.power(&x[0], 2.0).unwrap(),
    );
    check_op(
        "power3_positive",
        100,
        |rng| vec![Tensor::matrix(3, 4, random_matrix(rng, 3, 4, 0.2, 2.0)).unwrap()],
        |tape, x| tape.power(&x[0], 3.0).unwrap(),
    );
}

#[test]
fn op_scalar_affine_and_clamp() {
    check_op(
        "add_scalar",
        100,
        |rng| vec![Tensor::matrix(2, 4, random_matrix(rng, 2, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.add_scalar(&x[0], 0.75).unwrap(),
    );
    check_op(
        "mul_scalar",
        100,
        |rng| vec![Tensor::matrix(2, 4, random_matrix(rng, 2, 4, -2.0, 2.0)).unwrap()],
        |tape, x| tape.mul_scalar(&x[0], -1.3).unwrap(),
    );
    check_op(
        "clamp_interior",
        100,
        |rng| vec![Tensor::matrix(2, 4, random_matrix(rng, 2, 4, -0.9, 0.9)).unwrap()],
        |tape, x| tape.clamp(&x[0], -1.0, 1.0).unwrap(),
    );
}

#[test]
fn op_gather_and_segment_sum() {
    check_op(
        "gather_rows",
        100,
        |rng| vec![Tensor::matrix(4, 3, random_matrix(rng, 4, 3, -2.0, 2.0)).unwrap()],
        |tape, x| tape.gather_rows(&x[0], Arc::new(vec![2, 0, 0, 3, 1])).unwrap(),
    );
    check_op(
        "segment_sum",
        100,
        |rng| vec![Tensor::matrix(6, 3, random_matrix(rng, 6, 3, -2.0, 2.0)).unwrap()],
        |tape, x| tape.segment_sum(&x[0], Arc::new(vec![(0, 2), (2, 0), (2, 4)])).unwrap(),
    );
}

#[test]
fn lstm_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (input, hidden, batch) = (3, 4, 2);
        let w = random_matrix(&mut rng, input + hidden, 4 * hidden, -0.7, 0.7);
        let b = random_matrix(&mut rng, 1, 4 * hidden, -0.3, 0.3);
        let x = random_matrix(&mut rng, batch, input, -1.0, 1.0);
        let h = random_matrix(&mut rng, batch, hidden, -1.0, 1.0);
        let c = random_matrix(&mut rng, batch, hidden, -1.0, 1.0);
        let weights: Vec<f64> = (0..batch * hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]| -> (f64, Option<(Vec<f64>, Vec<f64>)>) {
            let mut tape = Tape::new();
            let lstm = Lstm {
                w: Tensor::matrix(input + hidden, 4 * hidden, w.to_vec()).unwrap(),
                b: Tensor::vector(b.to_vec()).unwrap(),
                input,
                hidden,
            };
            let bound = lstm.bind(&mut tape);
            let xt = tape.leaf(&Tensor::matrix(batch, input, x.to_vec()).unwrap(), true);
            let ht = tape.leaf(&Tensor::matrix(batch, hidden, h.to_vec()).unwrap(), true);
            let ct = tape.leaf(&Tensor::matrix(batch, hidden, c.to_vec()).unwrap(), true);
            let (h_next, _c_next) = bound.step(&mut tape, &xt, &ht, &ct).unwrap();
            let wv = Tensor::matrix(batch, hidden, weights.clone()).unwrap();
            let prod = tape.mul(&h_next, &wv).unwrap();
            let loss = tape.sum(&prod).unwrap();
            let val = loss.item().unwrap();
            let grads = tape.backward(&loss).unwrap();
            let gw = grads.wrt(&bound.w).unwrap().data().to_vec();
            let gb = grads.wrt(&bound.b).unwrap().data().to_vec();
            (val, Some((gw, gb)))
        };

        let (_, grads) = eval(&w, &b, &x, &h, &c);
        let (gw, gb) = grads.unwrap();
        // Spot-check a handful of weight/bias coordinates per instance.
        for _ in 0..4 {
            let j = rng.gen_range(0..gw.len());
            let mut wp = w.clone();
            wp[j] += FD_H;
            let mut wm = w.clone();
            wm[j] -= FD_H;
            let fd = (eval(&wp, &b, &x, &h, &c).0 - eval(&wm, &b, &x, &h, &c).0) / (2.0 * FD_H);
            let err = rel_err(gw[j], fd);
            worst = worst.max(err);
            assert!(err < TOL, "lstm weight {j}: ad={} fd={fd} err={err}", gw[j]);
        }
        let j = rng.gen_range(0..gb.len());
        let mut bp = b.clone();
        bp[j] += FD_H;
        let mut bm = b.clone();
        bm[j] -= FD_H;
        let fd = (eval(&w, &bp, &x, &h, &c).0 - eval(&w, &bm, &x, &h, &c).0) / (2.0 * FD_H);
        let err = rel_err(gb[j], fd);
        worst = worst.max(err);
        assert!(err < TOL, "lstm bias {j}: err={err}");
    }
    println!("gradcheck lstm_cell: max rel err {worst:.3e}");
}

fn pipeline_loss(
    model: &ImportanceModel,
    labeled: &[&Scene],
    unlabeled: &[&Scene],
    pseudo: &[&PseudoLabeledScene],
    draws_l: &[(f64, f64)],
    draws_u: &[(f64, f64)],
) -> (f64, Vec<Vec<f64>>) {
    let weights = LossWeights { lambda: 0.5, beta: 1.0 };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = bound
        .forward_batch(&mut tape, labeled, &ForwardOptions { with_aux: true, pool: PoolMode::Train { draws: draws_l } })
        .unwrap();
    let l_sup = supervised_loss(&mut tape, &out, labeled, &weights).unwrap();
    let uout = bound
        .forward_batch(&mut tape, unlabeled, &ForwardOptions { with_aux: true, pool: PoolMode::Train { draws: draws_u } })
        .unwrap();
    let l_unl = unlabeled_loss(&mut tape, &uout, unlabeled, pseudo, &weights).unwrap();
    let scaled = tape.mul_scalar(&l_unl, 0.7).unwrap();
    let total = tape.add(&l_sup, &scaled).unwrap();
    let val = total.item().unwrap();
    let grads = tape.backward(&total).unwrap();
    let flat: Vec<Vec<f64>> = bound
        .named_params()
        .iter()
        .map(|(_, t)| grads.wrt(t).unwrap().data().to_vec())
        .collect();
    (val, flat)
}

#[test]
fn full_pipeline_gradients() {
    let gen = GenConfig {
        labeled_count: 8,
        unlabeled_count: 8,
        objects_min: 2,
        objects_max: 4,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&gen).unwrap();
    let cfg = ModelConfig {
        feat_dim: 4,
        lstm_hidden: 4,
        mlp_hidden: 4,
        cls_hidden: 5,
        aux_hidden_a: 3,
        aux_hidden_b: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let model = ImportanceModel::init(&cfg, inst as u64).unwrap();
        let li = rng.gen_range(0..ds.labeled.len() - 1);
        let ui = rng.gen_range(0..ds.unlabeled.len() - 1);
        let labeled: Vec<&Scene> = vec![&ds.labeled[li], &ds.labeled[li + 1]];
        let unlabeled: Vec<&Scene> = vec![&ds.unlabeled[ui], &ds.unlabeled[ui + 1]];
        let pseudo: Vec<PseudoLabeledScene> = unlabeled
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let scores: Vec<f64> =
                    (0..s.objects.len()).map(|_| rng.gen_range(0.05..0.95)).collect();
                PseudoLabeledScene::from_scores(i, &scores, 0.8, 0.8).unwrap()
            })
            .collect();
        let pseudo_refs: Vec<&PseudoLabeledScene> = pseudo.iter().collect();
        let draws_l = gumbel_draws(&labeled, inst as u64, 0);
        let draws_u = gumbel_draws(&unlabeled, inst as u64, 1);

        let (_, grads) = pipeline_loss(&model, &labeled, &unlabeled, &pseudo_refs, &draws_l, &draws_u);
        let grad_scale = grads
            .iter()
            .flat_map(|g| g.iter().map(|v| v.abs()))
            .fold(0.0_f64, f64::max);

        // Probe a few random parameter coordinates per instance.
        let n_params = grads.len();
        for _ in 0..3 {
            let pi = rng.gen_range(0..n_params);
            if grads[pi].is_empty() {
                continue;
            }
            let pj = rng.gen_range(0..grads[pi].len());
            let perturbed = |delta: f64| -> f64 {
                let mut m = model.clone();
                m.params_mut()[pi].data_mut()[pj] += delta;
                pipeline_loss(&m, &labeled, &unlabeled, &pseudo_refs, &draws_l, &draws_u).0
            };
            let fd = (perturbed(FD_H) - perturbed(-FD_H)) / (2.0 * FD_H);
            // Smoothness guard: a half-step estimate that disagrees with the
            // full step marks a ReLU kink inside the probe interval, where a
            // difference quotient is not a gradient oracle.
            let fd_half = (perturbed(FD_H / 2.0) - perturbed(-FD_H / 2.0)) / FD_H;
            if rel_err_scaled(fd, fd_half, grad_scale) > TOL {
                continue;
            }
            let err = rel_err_scaled(grads[pi][pj], fd, grad_scale);
            worst = worst.max(err);
            assert!(
                err < TOL,
                "pipeline instance {inst} param {pi} coord {pj}: ad={} fd={fd} err={err}",
                grads[pi][pj]
            );
        }
    }
    println!("gradcheck pipeline: max rel err {worst:.3e}");
}

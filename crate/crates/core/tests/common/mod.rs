//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tumorlens::adapt::{dann_loss, mmd_loss, KernelSpec};
use tumorlens::data::DRUG_FIXTURES;
use tumorlens::druggraph::{parse_smiles, GatEncoder, GatSpec, GraphBatch};
use tumorlens::nets::{difference_loss, DiffMode, ExpressionNets, Mlp, MlpSpec, Mode};
use tumorlens::numcore::{Matrix, ParamStore, ParamTensor, Tape, Var};
use tumorlens::pipeline::TrainConfig;
use tumorlens::response::{head_logits, loss_cls_source, loss_pred_target, CombineMode, ResponseHeads};
use tumorlens::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn put(store: &mut ParamStore, name: &str, m: Matrix) {
    let shape = vec![m.rows(), m.cols()];
    store
        .insert(ParamTensor::new(name, shape, m.into_vec()).unwrap())
        .unwrap();
}

/// Adds uniform noise to every stored value so that zero-initialized
/// biases and output layers take generic values.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for p in store.iter_mut() {
        for v in p.values.iter_mut() {
            *v += scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
}

/// Reduces a matrix node to a scalar through fixed random weights.
fn project(tape: &mut Tape, v: Var, weights: &Matrix) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

/// One gradient-check instance: a scalar function of every array in
/// `store`, and the expected ratio of backpropagated to numerical gradient
/// for each array (−λ behind a gradient reversal, 1 elsewhere).
pub struct GradCase {
    pub store: ParamStore,
    pub build: Build,
    pub factor: Box<dyn Fn(&str) -> f64>,
}

pub const GRAD_OPS: [&str; 13] = [
    "dense",
    "gat_attention",
    "grad_reversal",
    "reco_source",
    "reco_target",
    "diff_batch",
    "diff_per_sample",
    "mmd",
    "dann",
    "cls",
    "pred_logit",
    "pred_probability",
    "stage1_total",
];

fn unit(_: &str) -> f64 {
    1.0
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn grad_case(op: &str, rng: &mut ChaCha8Rng) -> GradCase {
    let mut store = ParamStore::new();
    match op {
        "dense" => {
            let n = dims(rng, 1, 5);
            let mut layer_dims = vec![dims(rng, 1, 5)];
            for _ in 0..dims(rng, 1, 3) {
                layer_dims.push(dims(rng, 1, 6));
            }
            let out = *layer_dims.last().unwrap();
            let mlp = Mlp::new(
                "mlp",
                MlpSpec {
                    layer_dims: layer_dims.clone(),
                    dropout_noise: 0.0,
                },
            )
            .unwrap();
            mlp.init(&mut store, rng).unwrap();
            jitter(&mut store, rng, 0.3);
            put(&mut store, "x", random_matrix(rng, n, layer_dims[0], 1.0));
            let r = random_matrix(rng, n, out, 1.0);
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let x = tape.param(s, "x")?;
                    let y = mlp.forward(tape, s, x, &mut Mode::Eval)?;
                    project(tape, y, &r)
                }),
                factor: Box::new(unit),
            }
        }
        "gat_attention" => {
            let spec = GatSpec {
                num_layers: dims(rng, 1, 2),
                heads: dims(rng, 1, 3),
                hidden_dim: dims(rng, 1, 4),
                out_dim: dims(rng, 1, 4),
            };
            let gat = GatEncoder::new(spec);
            gat.init(&mut store, rng).unwrap();
            jitter(&mut store, rng, 0.3);
            let graphs: Vec<_> = (0..dims(rng, 1, 2))
                .map(|_| {
                    let (id, smi) = DRUG_FIXTURES[rng.random_range(0..DRUG_FIXTURES.len())];
                    parse_smiles(smi, id).unwrap()
                })
                .collect();
            let refs: Vec<_> = graphs.iter().collect();
            let batch = GraphBatch::new(&refs).unwrap();
            let r = random_matrix(rng, graphs.len(), spec.out_dim, 1.0);
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let z = gat.encode_batch(tape, s, &batch)?;
                    project(tape, z, &r)
                }),
                factor: Box::new(unit),
            }
        }
        "grad_reversal" => {
            let (n, d) = (dims(rng, 1, 6), dims(rng, 1, 6));
            let lambda = rng.random_range(0.1..2.0);
            put(&mut store, "x", random_matrix(rng, n, d, 1.0));
            let r = random_matrix(rng, n, d, 1.0);
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let x = tape.param(s, "x")?;
                    let y = tape.grad_reverse(x, lambda)?;
                    let w = tape.constant(r.clone());
                    let p = tape.mul(y, w)?;
                    let e = tape.exp(p);
                    Ok(tape.sum(e))
                }),
                factor: Box::new(move |_| -lambda),
            }
        }
        "reco_source" | "reco_target" => {
            let private = op == "reco_target";
            let (n, d, h, k) = (dims(rng, 1, 5), dims(rng, 2, 6), dims(rng, 1, 5), dims(rng, 1, 4));
            let nets = ExpressionNets::new(d, &[h], k, 0.0).unwrap();
            nets.init(&mut store, rng, private).unwrap();
            jitter(&mut store, rng, 0.3);
            put(&mut store, "x", random_matrix(rng, n, d, 1.0));
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let x = tape.param(s, "x")?;
                    if private {
                        Ok(nets.loss_reco_target(tape, s, x, &mut Mode::Eval)?.0)
                    } else {
                        Ok(nets.loss_reco_source(tape, s, x, &mut Mode::Eval)?.0)
                    }
                }),
                factor: Box::new(unit),
            }
        }
        "diff_batch" | "diff_per_sample" => {
            let mode = if op == "diff_batch" {
                DiffMode::Batch
            } else {
                DiffMode::PerSample
            };
            let (n, k) = (dims(rng, 1, 6), dims(rng, 1, 5));
            put(&mut store, "z_tc", random_matrix(rng, n, k, 1.0));
            put(&mut store, "z_ts", random_matrix(rng, n, k, 1.0));
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let a = tape.param(s, "z_tc")?;
                    let b = tape.param(s, "z_ts")?;
                    difference_loss(tape, a, b, mode)
                }),
                factor: Box::new(unit),
            }
        }
        "mmd" => {
            let (nc, nt, k) = (dims(rng, 1, 6), dims(rng, 1, 6), dims(rng, 1, 4));
            let zc = random_matrix(rng, nc, k, 1.0);
            let zt = random_matrix(rng, nt, k, 1.0);
            let kernel = KernelSpec::median_heuristic(&zc, &zt, &[0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
            put(&mut store, "zc", zc);
            put(&mut store, "zt", zt);
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let a = tape.param(s, "zc")?;
                    let b = tape.param(s, "zt")?;
                    mmd_loss(tape, a, b, &kernel)
                }),
                factor: Box::new(unit),
            }
        }
        "dann" => {
            let (nc, nt, k, h) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 4), dims(rng, 1, 5));
            let lambda = rng.random_range(0.1..2.0);
            let clf = Mlp::new(
                "dom",
                MlpSpec {
                    layer_dims: vec![k, h, 1],
                    dropout_noise: 0.0,
                },
            )
            .unwrap();
            clf.init(&mut store, rng).unwrap();
            jitter(&mut store, rng, 0.3);
            put(&mut store, "zc", random_matrix(rng, nc, k, 1.0));
            put(&mut store, "zt", random_matrix(rng, nt, k, 1.0));
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let a = tape.param(s, "zc")?;
                    let b = tape.param(s, "zt")?;
                    dann_loss(tape, s, a, b, &clf, lambda)
                }),
                factor: Box::new(move |name| if name.starts_with("dom") { 1.0 } else { -lambda }),
            }
        }
        "cls" | "pred_logit" => {
            let (n, k, h) = (dims(rng, 1, 6), dims(rng, 1, 4), dims(rng, 1, 5));
            let heads = ResponseHeads::new(k, h).unwrap();
            heads.init(&mut store, rng).unwrap();
            jitter(&mut store, rng, 0.3);
            put(&mut store, "z_cell", random_matrix(rng, n, k, 1.0));
            put(&mut store, "z_tme", random_matrix(rng, n, k, 1.0));
            put(&mut store, "z_drug", random_matrix(rng, n, k, 1.0));
            let labels = random_labels(rng, n);
            let combined = op == "pred_logit";
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let zc = tape.param(s, "z_cell")?;
                    let zd = tape.param(s, "z_drug")?;
                    let lc = head_logits(tape, s, &heads.cancell, zc, zd)?;
                    if combined {
                        let zt = tape.param(s, "z_tme")?;
                        let lt = head_logits(tape, s, &heads.tme, zt, zd)?;
                        loss_pred_target(tape, lc, lt, &labels, CombineMode::Logit)
                    } else {
                        loss_cls_source(tape, lc, &labels)
                    }
                }),
                factor: Box::new(unit),
            }
        }
        "pred_probability" => {
            // Logits low enough that the summed probability stays below the clamp.
            let n = dims(rng, 1, 8);
            let draw = |rng: &mut ChaCha8Rng| {
                let v = (0..n).map(|_| rng.random_range(-3.0..-0.5)).collect::<Vec<f64>>();
                Matrix::column(&v)
            };
            let (a, b) = (draw(rng), draw(rng));
            put(&mut store, "l_c", a);
            put(&mut store, "l_t", b);
            let labels = random_labels(rng, n);
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let lc = tape.param(s, "l_c")?;
                    let lt = tape.param(s, "l_t")?;
                    loss_pred_target(tape, lc, lt, &labels, CombineMode::Probability)
                }),
                factor: Box::new(unit),
            }
        }
        "stage1_total" => {
            let (ns, nt, d, h, k) = (
                dims(rng, 1, 4),
                dims(rng, 1, 4),
                dims(rng, 2, 5),
                dims(rng, 1, 4),
                dims(rng, 1, 3),
            );
            let nets = ExpressionNets::new(d, &[h], k, 0.0).unwrap();
            let heads = ResponseHeads::new(k, dims(rng, 1, 4)).unwrap();
            nets.init(&mut store, rng, true).unwrap();
            heads.init(&mut store, rng).unwrap();
            jitter(&mut store, rng, 0.3);
            put(&mut store, "x_s", random_matrix(rng, ns, d, 1.0));
            put(&mut store, "x_t", random_matrix(rng, nt, d, 1.0));
            put(&mut store, "z_d", random_matrix(rng, ns, k, 1.0));
            let kernel = KernelSpec::new(vec![rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)]).unwrap();
            let labels = random_labels(rng, ns);
            let (l_sim, l_diff, l_cls) = (
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
            );
            GradCase {
                store,
                build: Box::new(move |tape, s| {
                    let xs = tape.param(s, "x_s")?;
                    let xt = tape.param(s, "x_t")?;
                    let zd = tape.param(s, "z_d")?;
                    let (reco_c, z_c) = nets.loss_reco_source(tape, s, xs, &mut Mode::Eval)?;
                    let (reco_t, z_tc, z_ts) = nets.loss_reco_target(tape, s, xt, &mut Mode::Eval)?;
                    let sim = mmd_loss(tape, z_c, z_tc, &kernel)?;
                    let diff = difference_loss(tape, z_tc, z_ts, DiffMode::Batch)?;
                    let logits = head_logits(tape, s, &heads.cancell, z_c, zd)?;
                    let cls = loss_cls_source(tape, logits, &labels)?;
                    let mut total = tape.add(reco_c, reco_t)?;
                    for (term, w) in [(sim, l_sim), (diff, l_diff), (cls, l_cls)] {
                        let t = tape.scale(term, w);
                        total = tape.add(total, t)?;
                    }
                    Ok(total)
                }),
                factor: Box::new(unit),
            }
        }
        other => panic!("unknown gradient op {other}"),
    }
}

fn evaluate(case: &GradCase, store: &ParamStore) -> f64 {
    let mut tape = Tape::new();
    let v = (case.build)(&mut tape, store).unwrap();
    tape.scalar(v)
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every coordinate of every array in the case.
pub fn max_relative_error(case: &GradCase) -> f64 {
    let mut tape = Tape::new();
    let loss = (case.build)(&mut tape, &case.store).unwrap();
    let grads = tape.backward(loss, &case.store).unwrap();
    let mut probe = case.store.clone();
    let names: Vec<String> = case.store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic = grads.get(name).unwrap().to_vec();
        let factor = (case.factor)(name);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.get(name).unwrap().values[i];
            probe.get_mut(name).unwrap().values[i] = orig + FD_STEP;
            let up = evaluate(case, &probe);
            probe.get_mut(name).unwrap().values[i] = orig - FD_STEP;
            let down = evaluate(case, &probe);
            probe.get_mut(name).unwrap().values[i] = orig;
            let numeric = factor * (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

pub const BENCHMARK_SEED: u64 = 7;

/// Configuration used on the default synthetic benchmark.
pub fn benchmark_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 32,
        hidden_dims: vec![128, 64],
        epochs_stage1: 30,
        epochs_stage2: 10,
        lambda_cls: 0.1,
        lambda_sim: 300.0,
        lambda_diff: 0.1,
        diff_mode: DiffMode::PerSample,
        seed: BENCHMARK_SEED,
        ..TrainConfig::default()
    }
}

/// Small architecture that trains in well under a second.
pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        latent_dim: 8,
        hidden_dims: vec![16],
        epochs_stage1: 2,
        epochs_stage2: 2,
        batch_size: 16,
        gat_hidden: 4,
        gat_heads: 2,
        predictor_hidden: 8,
        seed,
        ..TrainConfig::default()
    }
}

pub fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

//! The two training stages.
//!
//! Stage 1 minimizes
//! `λ_rc·L_reco_c + λ_rt·L_reco_t + λ_sim·L_sim + λ_diff·L_diff + λ_cls·L_cls`
//! over all parameters except the TME head, using source labels only. Stage 2
//! fits the TME head alone on labeled tumor pairs.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Stage;
use super::config::{Alignment, TrainConfig};
use super::model::{DrugLibrary, Model, PairIndex};
use crate::adapt::{dann_loss, mmd_loss, KernelSpec};
use crate::data::{pair_domains, DrugEntry, ExpressionMatrix, ResponseTable};
use crate::error::{Error, Result};
use crate::nets::{difference_loss, reconstruction_loss, Mode};
use crate::numcore::{Adam, AdamState, Matrix, Tape, Var};
use crate::response::{head_logits, loss_cls_source, loss_pred_target};

/// Column names of the stage-1 loss log, after `epoch`.
pub const STAGE1_COLUMNS: [&str; 6] = ["reco_c", "reco_t", "sim", "diff", "cls", "total"];
/// Column names of the stage-2 loss log, after `epoch`.
pub const STAGE2_COLUMNS: [&str; 1] = ["pred"];

/// Per-epoch means of the per-step loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossLog {
    fn new(columns: &[&str]) -> Self {
        LossLog {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (e, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{}", e + 1);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

// Independent random streams derived from the config seed.
const STREAM_BATCHES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_STAGE2: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn adam(config: &TrainConfig) -> Adam {
    Adam {
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
    }
}

/// Cycles through a reshuffled permutation of `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Cycler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn check_domains(source: &ExpressionMatrix, target: &ExpressionMatrix) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Data("source domain has no samples".into()));
    }
    if target.is_empty() {
        return Err(Error::Data("target domain has no samples".into()));
    }
    if source.feature_ids != target.feature_ids {
        return Err(Error::Data(
            "source and target features differ; harmonize them before training".into(),
        ));
    }
    Ok(())
}

/// Stage 1. Target responses are deliberately not an input.
pub fn train_stage1(
    source: &ExpressionMatrix,
    source_responses: &ResponseTable,
    target: &ExpressionMatrix,
    drugs: &[DrugEntry],
    config: &TrainConfig,
) -> Result<(Model, LossLog)> {
    check_domains(source, target)?;
    let library = DrugLibrary::new(drugs)?;
    let pairs = PairIndex::new(&source_responses.with_labels()?, source, &library)?;
    let labels = pairs
        .labels
        .clone()
        .ok_or_else(|| Error::Data("source responses lack labels".into()))?;
    let plan = pair_domains(source, target)?;
    let graphs = library.batch()?;

    let mut model = Model::new(config.clone(), source.feature_ids.clone())?;
    for p in model.store.iter_mut() {
        p.requires_grad = !p.name.starts_with("f_t.");
    }
    let mut by_sample: Vec<Vec<usize>> = vec![Vec::new(); source.n_samples()];
    for (k, &s) in pairs.sample.iter().enumerate() {
        by_sample[s].push(k);
    }

    let mut batch_rng = stream(config.seed, STREAM_BATCHES);
    let mut noise_rng = stream(config.seed, STREAM_NOISE);
    let opt = adam(config);
    let mut state = AdamState::new();
    let mut targets = Cycler::new(target.n_samples());
    let b = config.batch_size;
    let steps = source.n_samples().div_ceil(b);
    let mut log = LossLog::new(&STAGE1_COLUMNS);

    for epoch in 0..config.epochs_stage1 {
        let mut acc = [0.0; 6];
        for _ in 0..steps {
            let t_idx: Vec<usize> = (0..b.min(target.n_samples()).max(1))
                .map(|_| targets.next(&mut batch_rng))
                .collect();
            let s_idx: Vec<usize> = t_idx
                .iter()
                .map(|&t| {
                    let pool = plan.pool_for(t);
                    pool[batch_rng.random_range(0..pool.len())]
                })
                .collect();
            let values = stage1_step(
                &mut model,
                config,
                &mut state,
                &opt,
                &mut noise_rng,
                StepBatch {
                    xs: source.values.select_rows(&s_idx),
                    xt: target.values.select_rows(&t_idx),
                    s_idx: &s_idx,
                    by_sample: &by_sample,
                    pair_drug: &pairs.drug,
                    labels: &labels,
                    graphs: &graphs,
                },
            )?;
            for (a, v) in acc.iter_mut().zip(values) {
                *a += v;
            }
        }
        let row: Vec<f64> = acc.iter().map(|a| a / steps as f64).collect();
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::State(format!(
                "stage-1 loss became non-finite in epoch {}",
                epoch + 1
            )));
        }
        info!(
            "stage 1 epoch {}: total {:.4} (reco_c {:.4}, reco_t {:.4}, sim {:.4}, diff {:.4}, cls {:.4})",
            epoch + 1,
            row[5],
            row[0],
            row[1],
            row[2],
            row[3],
            row[4]
        );
        log.rows.push(row);
    }
    model.store.train_all();
    model.stage = Stage::One;
    Ok((model, log))
}

struct StepBatch<'a> {
    xs: Matrix,
    xt: Matrix,
    s_idx: &'a [usize],
    by_sample: &'a [Vec<usize>],
    pair_drug: &'a [usize],
    labels: &'a [f64],
    graphs: &'a crate::druggraph::GraphBatch,
}

fn weighted(tape: &mut Tape, terms: &[(f64, Var)]) -> Result<Var> {
    let mut total = tape.scale(terms[0].1, terms[0].0);
    for &(w, v) in &terms[1..] {
        let s = tape.scale(v, w);
        total = tape.add(total, s)?;
    }
    Ok(total)
}

/// One optimizer step. Returns the five terms and the weighted total.
fn stage1_step(
    model: &mut Model,
    config: &TrainConfig,
    state: &mut AdamState,
    opt: &Adam,
    noise_rng: &mut ChaCha8Rng,
    batch: StepBatch<'_>,
) -> Result<[f64; 6]> {
    let store = &model.store;
    let nets = &model.nets;
    let mut tape = Tape::new();
    let xs = tape.constant(batch.xs);
    let xt = tape.constant(batch.xt);

    let (reco_c, z_c) = nets.loss_reco_source(&mut tape, store, xs, &mut Mode::Train(&mut *noise_rng))?;
    let (reco_t, z_tc, diff) = if config.disentangle {
        let (l, z_tc, z_ts) = nets.loss_reco_target(&mut tape, store, xt, &mut Mode::Train(&mut *noise_rng))?;
        let d = difference_loss(&mut tape, z_tc, z_ts, config.diff_mode)?;
        (l, z_tc, Some(d))
    } else {
        let z_tc = nets.encode_common(&mut tape, store, xt, &mut Mode::Train(&mut *noise_rng))?;
        let x_hat = nets.decode(&mut tape, store, z_tc)?;
        (reconstruction_loss(&mut tape, xt, x_hat)?, z_tc, None)
    };

    let sim = match config.alignment {
        Alignment::Mmd => {
            let kernel = KernelSpec::median_heuristic(tape.value(z_c), tape.value(z_tc), &config.mmd_bandwidth_scales)?;
            mmd_loss(&mut tape, z_c, z_tc, &kernel)?
        }
        Alignment::Dann => {
            let classifier = model
                .domain_classifier
                .as_ref()
                .ok_or_else(|| Error::State("adversarial alignment without a domain classifier".into()))?;
            dann_loss(&mut tape, store, z_c, z_tc, classifier, config.grl_lambda)?
        }
    };

    let mut rows = Vec::new();
    let mut drugs = Vec::new();
    let mut labels = Vec::new();
    for (pos, &s) in batch.s_idx.iter().enumerate() {
        for &k in &batch.by_sample[s] {
            rows.push(pos);
            drugs.push(batch.pair_drug[k]);
            labels.push(batch.labels[k]);
        }
    }
    let cls = if rows.is_empty() {
        None
    } else {
        let zd_all = model.gat.encode_batch(&mut tape, store, batch.graphs)?;
        let zc_pairs = tape.gather_rows(z_c, &rows)?;
        let zd_pairs = tape.gather_rows(zd_all, &drugs)?;
        let logits = head_logits(&mut tape, store, &model.heads.cancell, zc_pairs, zd_pairs)?;
        Some(loss_cls_source(&mut tape, logits, &labels)?)
    };

    let mut terms = vec![
        (config.lambda_reco_c, reco_c),
        (config.lambda_reco_t, reco_t),
        (config.lambda_sim, sim),
    ];
    terms.extend(diff.map(|d| (config.lambda_diff, d)));
    terms.extend(cls.map(|c| (config.lambda_cls, c)));
    let total = weighted(&mut tape, &terms)?;

    let scalar = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    let values = [
        tape.scalar(reco_c),
        tape.scalar(reco_t),
        tape.scalar(sim),
        scalar(diff),
        scalar(cls),
        tape.scalar(total),
    ];
    let grads = tape.backward(total, &model.store)?;
    opt.step(&mut model.store, &grads, state)?;
    Ok(values)
}

/// Stage 2: fits `F_t` on labeled tumor pairs with every other parameter
/// frozen. `responses` rows must refer to samples of `target`.
pub fn train_stage2(
    stage1: &Model,
    target: &ExpressionMatrix,
    responses: &ResponseTable,
    drugs: &[DrugEntry],
) -> Result<(Model, LossLog)> {
    if stage1.stage != Stage::One {
        return Err(Error::State(
            "checkpoint is already at stage 2; stage-2 training needs a stage-1 checkpoint".into(),
        ));
    }
    if !stage1.config.disentangle {
        return Err(Error::State(
            "model was trained without a private tumor factor and has no TME head to fit".into(),
        ));
    }
    let config = &stage1.config;
    let library = DrugLibrary::new(drugs)?;
    let pairs = PairIndex::new(&responses.with_labels()?, target, &library)?;
    if pairs.is_empty() {
        return Err(Error::Data("stage 2 needs at least one labeled target pair".into()));
    }
    let labels = pairs.labels.clone().expect("labels filled");

    let emb = stage1.embed(target)?;
    let z_ts = emb.private.expect("disentangled model");
    let zd = stage1.drug_embeddings(&library)?;
    let lc_all = crate::response::eval_logits(
        &stage1.store,
        &stage1.heads.cancell,
        &emb.common.select_rows(&pairs.sample),
        &zd.select_rows(&pairs.drug),
    )?;

    let mut model = stage1.clone();
    model.store.train_only(&["f_t"]);
    let opt = adam(config);
    let mut state = AdamState::new();
    let mut rng = stream(config.seed, STREAM_STAGE2);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = LossLog::new(&STAGE2_COLUMNS);
    for epoch in 0..config.epochs_stage2 {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        let chunks: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for chunk in &chunks {
            let rows: Vec<usize> = chunk.iter().map(|&k| pairs.sample[k]).collect();
            let drug_rows: Vec<usize> = chunk.iter().map(|&k| pairs.drug[k]).collect();
            let y: Vec<f64> = chunk.iter().map(|&k| labels[k]).collect();
            let lc: Vec<f64> = chunk.iter().map(|&k| lc_all[k]).collect();
            let mut tape = Tape::new();
            let zs = tape.constant(z_ts.select_rows(&rows));
            let zdv = tape.constant(zd.select_rows(&drug_rows));
            let lcv = tape.constant(Matrix::column(&lc));
            let lt = head_logits(&mut tape, &model.store, &model.heads.tme, zs, zdv)?;
            let loss = loss_pred_target(&mut tape, lcv, lt, &y, config.combine_mode)?;
            acc += tape.scalar(loss);
            let grads = tape.backward(loss, &model.store)?;
            opt.step(&mut model.store, &grads, &mut state)?;
        }
        let mean = acc / chunks.len() as f64;
        if !mean.is_finite() {
            return Err(Error::State(format!(
                "stage-2 loss became non-finite in epoch {}",
                epoch + 1
            )));
        }
        info!("stage 2 epoch {}: pred {mean:.4}", epoch + 1);
        log.rows.push(vec![mean]);
    }
    model.store.train_all();
    model.stage = Stage::Two;
    Ok((model, log))
}

//! Latent additive response model.
//!
//! A drug acts on a cell state by vector addition in the shared latent
//! space. The cell-line predictor `F_c` scores `z_c + z_d`; for tumors the
//! CanCell logit `F_c(z_tc + z_d)` and the TME logit `F_t(z_ts + z_d)` are
//! summed before the sigmoid.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{Mlp, MlpSpec, Mode};
use crate::numcore::{sigmoid, Matrix, ParamStore, Tape, Var, PROB_CLAMP};

/// How the two partial responses combine into a tumor response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// `sigmoid(logit_c + logit_t)`.
    Logit,
    /// `clamp(sigmoid(logit_c) + sigmoid(logit_t))`.
    Probability,
}

/// The CanCell predictor `F_c` and the TME predictor `F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseHeads {
    pub cancell: Mlp,
    pub tme: Mlp,
}

impl ResponseHeads {
    pub fn new(latent_dim: usize, hidden: usize) -> Result<Self> {
        let spec = MlpSpec {
            layer_dims: vec![latent_dim, hidden, 1],
            dropout_noise: 0.0,
        };
        Ok(ResponseHeads {
            cancell: Mlp::new("f_c", spec.clone())?,
            tme: Mlp::new("f_t", spec)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.cancell.input_dim()
    }

    /// Registers both predictors. `F_t` starts with a zero output layer so
    /// that an untrained TME head leaves CanCell predictions unchanged.
    pub fn init<R: rand::Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.cancell.init(store, rng)?;
        self.tme.init(store, rng)?;
        self.tme.zero_output_layer(store)
    }
}

fn check_pair(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::dim(format!(
            "cannot add {}x{} cell embedding and {}x{} drug embedding",
            sa.0, sa.1, sb.0, sb.1
        )));
    }
    Ok(())
}

/// Logits of `head(z_cell + z_drug)`, one per row.
pub fn head_logits(tape: &mut Tape, store: &ParamStore, head: &Mlp, z_cell: Var, z_drug: Var) -> Result<Var> {
    check_pair(tape, z_cell, z_drug)?;
    let s = tape.add(z_cell, z_drug)?;
    head.forward(tape, store, s, &mut Mode::Eval)
}

/// Summed binary cross-entropy of `sigmoid(logits)` against 0/1 labels.
pub fn loss_cls_source(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    check_binary(labels)?;
    tape.bce_with_logits(logits, labels)
}

/// Summed binary cross-entropy of the combined tumor response.
pub fn loss_pred_target(
    tape: &mut Tape,
    cancell_logits: Var,
    tme_logits: Var,
    labels: &[f64],
    mode: CombineMode,
) -> Result<Var> {
    check_binary(labels)?;
    match mode {
        CombineMode::Logit => {
            let total = tape.add(cancell_logits, tme_logits)?;
            tape.bce_with_logits(total, labels)
        }
        CombineMode::Probability => {
            let pc = tape.sigmoid(cancell_logits);
            let pt = tape.sigmoid(tme_logits);
            let p = tape.add(pc, pt)?;
            tape.bce_prob(p, labels)
        }
    }
}

fn check_binary(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(bad) => Err(Error::Data(format!("response label {bad} is not 0 or 1"))),
        None => Ok(()),
    }
}

pub fn combine(cancell_logit: f64, tme_logit: f64, mode: CombineMode) -> f64 {
    match mode {
        CombineMode::Logit => sigmoid(cancell_logit + tme_logit),
        CombineMode::Probability => (sigmoid(cancell_logit) + sigmoid(tme_logit)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
    }
}

/// Source-domain response probability `sigmoid(F_c(z_c + z_d))`.
pub fn predict_source(store: &ParamStore, heads: &ResponseHeads, z_c: &[f64], z_d: &[f64]) -> Result<f64> {
    let logits = eval_logits(store, &heads.cancell, &Matrix::row(z_c), &Matrix::row(z_d))?;
    Ok(sigmoid(logits[0]))
}

/// Row-wise logits of `head(z_cell + z_drug)` outside any training tape.
pub fn eval_logits(store: &ParamStore, head: &Mlp, z_cell: &Matrix, z_drug: &Matrix) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let a = tape.constant(z_cell.clone());
    let b = tape.constant(z_drug.clone());
    let l = head_logits(&mut tape, store, head, a, b)?;
    Ok(tape.value(l).as_slice().to_vec())
}

/// Per-pair split of a tumor response into its two additive parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDecomposition {
    pub sample_id: String,
    pub drug_id: String,
    pub cancell_score: f64,
    pub tme_score: f64,
    pub combined: f64,
    pub label: Option<u8>,
}

/// Decomposes the response of one tumor to one drug.
pub fn predict_target(
    store: &ParamStore,
    heads: &ResponseHeads,
    z_tc: &[f64],
    z_ts: &[f64],
    z_d: &[f64],
    mode: CombineMode,
) -> Result<(f64, f64, f64)> {
    if z_tc.len() != z_ts.len() {
        return Err(Error::dim(format!(
            "CanCell factor has {} dims, TME factor {}",
            z_tc.len(),
            z_ts.len()
        )));
    }
    let d = Matrix::row(z_d);
    let lc = eval_logits(store, &heads.cancell, &Matrix::row(z_tc), &d)?[0];
    let lt = eval_logits(store, &heads.tme, &Matrix::row(z_ts), &d)?[0];
    Ok((lc, lt, combine(lc, lt, mode)))
}

pub const DECOMPOSITION_HEADER: &str = "sample_id,drug_id,cancell_score,tme_score,combined,label";

pub fn write_decomposition_csv(path: &Path, rows: &[ResponseDecomposition]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(DECOMPOSITION_HEADER);
    out.push('\n');
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sample_id, r.drug_id, r.cancell_score, r.tme_score, r.combined, label
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heads(seed: u64) -> (ResponseHeads, ParamStore) {
        let h = ResponseHeads::new(4, 8).unwrap();
        let mut store = ParamStore::new();
        h.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (h, store)
    }

    fn bce_oracle(p: f64, y: f64) -> f64 {
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    #[test]
    fn zero_output_layer_predicts_half() {
        let (h, mut store) = heads(1);
        h.cancell.zero_output_layer(&mut store).unwrap();
        let p = predict_source(&store, &h, &[1.0, -2.0, 0.5, 3.0], &[0.1, 0.1, 0.1, 0.1]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn additive_input_commutes() {
        let (h, store) = heads(2);
        let z = [0.3, -0.4, 1.2, 0.0];
        let zero = [0.0; 4];
        assert_eq!(
            predict_source(&store, &h, &z, &zero).unwrap(),
            predict_source(&store, &h, &zero, &z).unwrap()
        );
    }

    #[test]
    fn untrained_tme_head_reduces_to_cancell() {
        let (h, store) = heads(3);
        let (z_tc, z_ts, z_d) = ([0.5, 0.1, -0.3, 0.9], [1.0, 1.0, -1.0, 0.2], [0.0, 0.4, 0.4, 0.1]);
        let (lc, lt, p) = predict_target(&store, &h, &z_tc, &z_ts, &z_d, CombineMode::Logit).unwrap();
        assert_eq!(lt, 0.0);
        assert_eq!(p, sigmoid(lc));
        assert_eq!(p, predict_source(&store, &h, &z_tc, &z_d).unwrap());
    }

    #[test]
    fn combined_is_sigmoid_of_summed_parts() {
        assert_eq!(combine(0.0, 0.0, CombineMode::Logit), 0.5);
        let (h, mut store) = heads(4);
        for v in &mut store.get_mut("f_t.w1").unwrap().values {
            *v = 0.3;
        }
        let (lc, lt, p) = predict_target(
            &store,
            &h,
            &[0.2, 0.2, 0.1, -1.0],
            &[0.5, 0.6, 0.7, 0.8],
            &[0.1; 4],
            CombineMode::Logit,
        )
        .unwrap();
        assert!(lt != 0.0);
        assert!((p - 1.0 / (1.0 + (-(lc + lt)).exp())).abs() < 1e-15);
    }

    #[test]
    fn combined_increases_with_tme_logit() {
        let mut last = 0.0;
        for k in -20..=20 {
            let p = combine(0.7, f64::from(k) * 0.5, CombineMode::Logit);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn cls_loss_matches_formula() {
        let mut t = Tape::new();
        let half = t.constant(Matrix::column(&[0.0]));
        for y in [0.0, 1.0] {
            let l = loss_cls_source(&mut t, half, &[y]).unwrap();
            assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let logits = [0.3, -1.2, 2.5];
        let labels = [1.0, 0.0, 0.0];
        let x = t.constant(Matrix::column(&logits));
        let l = loss_cls_source(&mut t, x, &labels).unwrap();
        let expected: f64 = logits
            .iter()
            .zip(labels)
            .map(|(&z, y)| bce_oracle(1.0 / (1.0 + (-z).exp()), y))
            .sum();
        assert!((t.scalar(l) - expected).abs() < 1e-12);
        let confident = t.constant(Matrix::column(&[40.0, -40.0]));
        let l = loss_cls_source(&mut t, confident, &[1.0, 0.0]).unwrap();
        assert!(t.scalar(l) < 1e-15);
        assert!(matches!(
            loss_cls_source(&mut t, x, &[1.0, 0.5, 0.0]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn pred_loss_matches_formula_in_both_modes() {
        let lc = [0.4, -0.3, 1.1];
        let lt = [-0.2, -0.9, 0.6];
        let labels = [1.0, 0.0, 1.0];
        let mut t = Tape::new();
        let a = t.constant(Matrix::column(&lc));
        let b = t.constant(Matrix::column(&lt));
        for mode in [CombineMode::Logit, CombineMode::Probability] {
            let l = loss_pred_target(&mut t, a, b, &labels, mode).unwrap();
            let expected: f64 = (0..3).map(|i| bce_oracle(combine(lc[i], lt[i], mode), labels[i])).sum();
            assert!((t.scalar(l) - expected).abs() < 1e-12, "{mode:?}");
        }
        let zero = t.constant(Matrix::column(&[0.0]));
        let l = loss_pred_target(&mut t, zero, zero, &[1.0], CombineMode::Logit).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mismatched_embeddings_rejected() {
        let (h, store) = heads(1);
        assert!(matches!(
            predict_source(&store, &h, &[1.0; 4], &[1.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            predict_target(&store, &h, &[1.0; 4], &[1.0; 3], &[1.0; 4], CombineMode::Logit),
            Err(Error::Dimension(_))
        ));
    }
}

//! Distribution alignment between cell-line embeddings and the CanCell factor
//! of tumor embeddings.

use crate::error::{Error, Result};
use crate::nets::{Mlp, Mode};
use crate::numcore::{Matrix, ParamStore, Tape, Var};

/// Multiplicative factors applied to the median-heuristic bandwidth.
pub const DEFAULT_BANDWIDTH_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Uniform mixture of Gaussian kernels `exp(−‖x − y‖² / 2σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Parameter(format!(
                "kernel bandwidths must be positive and finite: {bandwidths:?}"
            )));
        }
        Ok(KernelSpec { bandwidths })
    }

    /// Bandwidths `scale · median(‖a − b‖)` over all distinct pairs of rows
    /// drawn from both batches. Falls back to 1 when all rows coincide.
    pub fn median_heuristic(a: &Matrix, b: &Matrix, scales: &[f64]) -> Result<Self> {
        let rows: Vec<&[f64]> = (0..a.rows())
            .map(|i| a.row_slice(i))
            .chain((0..b.rows()).map(|i| b.row_slice(i)))
            .collect();
        let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let s: f64 = rows[i].iter().zip(rows[j]).map(|(x, y)| (x - y) * (x - y)).sum();
                d.push(s.sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        let median = match d.len() {
            0 => 0.0,
            n if n % 2 == 1 => d[n / 2],
            n => 0.5 * (d[n / 2 - 1] + d[n / 2]),
        };
        let base = if median > 0.0 && median.is_finite() {
            median
        } else {
            1.0
        };
        Self::new(scales.iter().map(|s| s * base).collect())
    }
}

/// Biased squared-MMD estimate between the rows of `zc` and `zt`, averaged
/// over the kernel bandwidths.
pub fn mmd_loss(tape: &mut Tape, zc: Var, zt: Var, kernel: &KernelSpec) -> Result<Var> {
    let (nc, dc) = tape.value(zc).shape();
    let (nt, dt) = tape.value(zt).shape();
    if nc == 0 || nt == 0 {
        return Err(Error::Contract("MMD needs two nonempty batches".into()));
    }
    if dc != dt {
        return Err(Error::dim(format!("MMD between {dc}-dim and {dt}-dim embeddings")));
    }
    let d_cc = tape.pairwise_sq_dist(zc, zc)?;
    let d_tt = tape.pairwise_sq_dist(zt, zt)?;
    let d_ct = tape.pairwise_sq_dist(zc, zt)?;
    let mut terms = Vec::with_capacity(kernel.bandwidths.len());
    for &sigma in &kernel.bandwidths {
        let gamma = -1.0 / (2.0 * sigma * sigma);
        let kernel_mean = |tape: &mut Tape, d: Var| -> Result<Var> {
            let scaled = tape.scale(d, gamma);
            let k = tape.exp(scaled);
            tape.mean(k)
        };
        let kcc = kernel_mean(tape, d_cc)?;
        let ktt = kernel_mean(tape, d_tt)?;
        let kct = kernel_mean(tape, d_ct)?;
        let within = tape.add(kcc, ktt)?;
        let cross = tape.scale(kct, 2.0);
        terms.push(tape.sub(within, cross)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.scale(total, 1.0 / kernel.bandwidths.len() as f64))
}

/// Evaluates [`mmd_loss`] on plain matrices.
pub fn mmd(zc: &Matrix, zt: &Matrix, kernel: &KernelSpec) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(zc.clone());
    let b = tape.constant(zt.clone());
    let v = mmd_loss(&mut tape, a, b, kernel)?;
    Ok(tape.scalar(v))
}

/// Domain label used by the adversarial classifier for source rows.
pub const SOURCE_DOMAIN_LABEL: f64 = 0.0;
/// Domain label for target rows.
pub const TARGET_DOMAIN_LABEL: f64 = 1.0;

/// Summed binary cross-entropy of the domain classifier over the
/// concatenated batch. Embeddings pass through gradient reversal, so the
/// classifier descends this loss while upstream encoders ascend it.
pub fn dann_loss(
    tape: &mut Tape,
    store: &ParamStore,
    zc: Var,
    zt: Var,
    classifier: &Mlp,
    grl_lambda: f64,
) -> Result<Var> {
    let (nc, nt) = (tape.value(zc).rows(), tape.value(zt).rows());
    if nc == 0 || nt == 0 {
        return Err(Error::Contract("domain classifier needs two nonempty batches".into()));
    }
    let z = tape.concat_rows(&[zc, zt])?;
    let reversed = tape.grad_reverse(z, grl_lambda)?;
    let logits = classifier.forward(tape, store, reversed, &mut Mode::Eval)?;
    let labels: Vec<f64> = std::iter::repeat_n(SOURCE_DOMAIN_LABEL, nc)
        .chain(std::iter::repeat_n(TARGET_DOMAIN_LABEL, nt))
        .collect();
    tape.bce_with_logits(logits, &labels)
}

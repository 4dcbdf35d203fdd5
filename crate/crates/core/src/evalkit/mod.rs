//! Ranking metrics, the label-fraction sweep, embedding export and probes.

mod metrics;
mod probes;
mod projection;

pub use metrics::{auprc, auroc, spearman, DrugMetric, MetricReport};
pub use probes::{domain_probe_accuracy, mean_abs_cosine, ridge_r2};
pub use projection::{pca2, scatter_svg, Projection};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::data::{split_samples, DrugEntry, ExpressionMatrix, ResponseTable};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, Matrix};
use crate::pipeline::{train_stage2, DrugLibrary, Model, PairIndex};

/// Which tumor score to rank by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// The combined CanCell + TME response.
    Combined,
    /// `sigmoid` of the CanCell logit alone.
    CanCellOnly,
}

/// Scores labeled tumor pairs and summarizes them.
pub fn evaluate_target(
    model: &Model,
    target: &ExpressionMatrix,
    responses: &ResponseTable,
    drugs: &[DrugEntry],
    kind: ScoreKind,
) -> Result<MetricReport> {
    let library = DrugLibrary::new(drugs)?;
    let pairs = PairIndex::new(&responses.with_labels()?, target, &library)?;
    let rows = model.decompose(target, &library, &pairs)?;
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| match kind {
            ScoreKind::Combined => r.combined,
            ScoreKind::CanCellOnly => sigmoid(r.cancell_score),
        })
        .collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label.expect("labeled")).collect();
    let ids: Vec<&str> = rows.iter().map(|r| r.drug_id.as_str()).collect();
    Ok(MetricReport::new(&ids, &scores, &labels))
}

/// One row of the label-fraction sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub n_train_samples: usize,
    pub n_eval_samples: usize,
    pub report: MetricReport,
}

/// For each fraction, fits the TME head on that share of the labeled tumor
/// pool and evaluates the combined score on the rest. Training subsets are
/// nested prefixes of one seeded permutation of the pool. Fraction 0
/// evaluates the CanCell score alone on the whole pool.
pub fn fraction_sweep(
    stage1: &Model,
    target: &ExpressionMatrix,
    pool: &ResponseTable,
    drugs: &[DrugEntry],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let pool = pool.with_labels()?;
    let ids = pool.sample_ids();
    let (order, _) = split_samples(&ids, 1.0, seed)?;
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Parameter(format!("sweep fraction {f} outside [0, 1]")));
        }
        if f == 0.0 {
            let report = evaluate_target(stage1, target, &pool, drugs, ScoreKind::CanCellOnly)?;
            out.push(SweepRow {
                fraction: f,
                n_train_samples: 0,
                n_eval_samples: ids.len(),
                report,
            });
            continue;
        }
        let k = (f * ids.len() as f64).round() as usize;
        if k == 0 {
            warn!("fraction {f} of {} samples selects none; skipped", ids.len());
            continue;
        }
        if k == ids.len() {
            return Err(Error::Contract(format!(
                "fraction {f} uses every labeled sample and leaves none for evaluation"
            )));
        }
        let train: HashSet<&str> = order[..k].iter().map(String::as_str).collect();
        let eval: HashSet<&str> = order[k..].iter().map(String::as_str).collect();
        let (model, _) = train_stage2(stage1, target, &pool.restrict_samples(&train), drugs)?;
        let report = evaluate_target(
            &model,
            target,
            &pool.restrict_samples(&eval),
            drugs,
            ScoreKind::Combined,
        )?;
        out.push(SweepRow {
            fraction: f,
            n_train_samples: k,
            n_eval_samples: ids.len() - k,
            report,
        });
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    let mut s = String::from("fraction,n_train_samples,n_eval_samples,auroc,auprc,macro_auroc\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.fraction,
            r.n_train_samples,
            r.n_eval_samples,
            opt(r.report.auroc),
            opt(r.report.auprc),
            opt(r.report.macro_auroc)
        );
    }
    s
}

/// Output file names of [`export_embeddings`].
pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const PROJECTION_CSV: &str = "projection.csv";
pub const PROJECTION_SVG: &str = "projection.svg";

/// Row counts written by [`export_embeddings`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub rows_per_tag: Vec<(String, usize)>,
    pub projection: Projection,
}

/// Writes `z_c` of the source samples and `z_tc`, `z_ts` of the target
/// samples (tags `c`, `tc`, `ts`), their joint top-2 principal-component
/// coordinates and an SVG scatter of those coordinates into `dir`.
pub fn export_embeddings(
    model: &Model,
    source: &ExpressionMatrix,
    target: &ExpressionMatrix,
    dir: &Path,
) -> Result<ExportSummary> {
    let es = model.embed(source)?;
    let et = model.embed(target)?;
    let mut blocks: Vec<(&str, &[String], &Matrix)> = vec![
        ("c", &source.sample_ids, &es.common),
        ("tc", &target.sample_ids, &et.common),
    ];
    if let Some(p) = &et.private {
        blocks.push(("ts", &target.sample_ids, p));
    }
    let d = model.config.latent_dim;
    let mut csv = String::from("sample_id,factor_tag");
    for k in 0..d {
        let _ = write!(csv, ",dim_{k}");
    }
    csv.push('\n');
    let mut all_rows: Vec<&[f64]> = Vec::new();
    let mut labels: Vec<(&str, &str)> = Vec::new();
    for (tag, ids, m) in &blocks {
        for (i, id) in ids.iter().enumerate() {
            let row = m.row_slice(i);
            csv.push_str(id);
            csv.push(',');
            csv.push_str(tag);
            for v in row {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
            all_rows.push(row);
            labels.push((id.as_str(), tag));
        }
    }
    let projection = pca2(&Matrix::from_rows(&all_rows)?)?;
    let mut pcsv = String::from("sample_id,factor_tag,pc1,pc2\n");
    for (r, (id, tag)) in labels.iter().enumerate() {
        let _ = writeln!(
            pcsv,
            "{id},{tag},{},{}",
            projection.coords.get(r, 0),
            projection.coords.get(r, 1)
        );
    }
    let tags: Vec<&str> = labels.iter().map(|(_, t)| *t).collect();
    let svg = scatter_svg(
        &projection.coords,
        &tags,
        "latent factors, first two principal components",
    );
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [(EMBEDDINGS_CSV, &csv), (PROJECTION_CSV, &pcsv), (PROJECTION_SVG, &svg)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(ExportSummary {
        rows_per_tag: blocks.iter().map(|(t, ids, _)| (t.to_string(), ids.len())).collect(),
        projection,
    })
}

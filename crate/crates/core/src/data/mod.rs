//! Expression matrices, response tables, drug lists and the synthetic
//! benchmark generator.

mod io;
mod pairing;
mod responses;
mod synth;

pub use io::{
    harmonize_features, load_drugs, load_expression, load_metadata, load_responses, write_drugs, write_expression,
    write_metadata, write_responses, SampleMeta,
};
pub use pairing::{pair_domains, PairingPlan};
pub use responses::{binarize_responses, split_by_sample, split_samples, ResponseRecord, ResponseTable};
pub use synth::{generate_synthetic, truth_files, GroundTruth, SyntheticDataset, SyntheticSpec, DRUG_FIXTURES};

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" | "cell_line" | "cellline" => Some(Domain::Source),
            "target" | "tumor" | "tumour" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// Samples × features expression (or pathway activity) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    pub values: Matrix,
    pub domain: Vec<Domain>,
    pub cancer_type: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(
        sample_ids: Vec<String>,
        feature_ids: Vec<String>,
        values: Matrix,
        domain: Vec<Domain>,
        cancer_type: Vec<String>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if values.rows() != n || values.cols() != feature_ids.len() {
            return Err(Error::dim(format!(
                "{}x{} values for {n} samples and {} features",
                values.rows(),
                values.cols(),
                feature_ids.len()
            )));
        }
        if domain.len() != n || cancer_type.len() != n {
            return Err(Error::Data("metadata length differs from sample count".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = sample_ids.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::Data(format!("duplicate sample id {dup}")));
        }
        if !values.is_finite() {
            return Err(Error::Data("expression values must be finite".into()));
        }
        Ok(ExpressionMatrix {
            sample_ids,
            feature_ids,
            values,
            domain,
            cancer_type,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> ExpressionMatrix {
        ExpressionMatrix {
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            feature_ids: self.feature_ids.clone(),
            values: self.values.select_rows(idx),
            domain: idx.iter().map(|&i| self.domain[i]).collect(),
            cancer_type: idx.iter().map(|&i| self.cancer_type[i].clone()).collect(),
        }
    }

    /// Rows belonging to `domain`.
    pub fn filter_domain(&self, domain: Domain) -> ExpressionMatrix {
        let idx: Vec<usize> = (0..self.n_samples()).filter(|&i| self.domain[i] == domain).collect();
        self.select(&idx)
    }

    /// Columns restricted to `features`, in that order.
    pub fn with_features(&self, features: &[String]) -> Result<ExpressionMatrix> {
        let cols: Vec<usize> = features
            .iter()
            .map(|f| {
                self.feature_ids
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::Data(format!("feature {f} missing")))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(self.n_samples() * cols.len());
        for r in 0..self.n_samples() {
            let row = self.values.row_slice(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(ExpressionMatrix {
            sample_ids: self.sample_ids.clone(),
            feature_ids: features.to_vec(),
            values: Matrix::new(self.n_samples(), cols.len(), data)?,
            domain: self.domain.clone(),
            cancer_type: self.cancer_type.clone(),
        })
    }
}

/// A drug identifier and its SMILES string.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugEntry {
    pub drug_id: String,
    pub smiles: String,
}

/// File names inside a dataset directory.
pub mod files {
    pub const SOURCE_EXPRESSION: &str = "source_expression.tsv";
    pub const TARGET_EXPRESSION: &str = "target_expression.tsv";
    pub const METADATA: &str = "metadata.tsv";
    pub const SOURCE_RESPONSES: &str = "source_responses.csv";
    pub const TARGET_RESPONSES: &str = "target_responses.csv";
    pub const DRUGS: &str = "drugs.tsv";
}

/// Everything a training run reads: both domains, their responses and the
/// drug list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: ExpressionMatrix,
    pub target: ExpressionMatrix,
    pub source_responses: ResponseTable,
    pub target_responses: ResponseTable,
    pub drugs: Vec<DrugEntry>,
}

impl Dataset {
    /// Loads a directory laid out as in [`files`]. Features are harmonized
    /// and responses without labels are binarized. A missing target
    /// response file yields an empty target table.
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let meta = load_metadata(&dir.join(files::METADATA))?;
        let source = load_expression(&dir.join(files::SOURCE_EXPRESSION), &meta)?;
        let target = load_expression(&dir.join(files::TARGET_EXPRESSION), &meta)?;
        for (m, want) in [(&source, Domain::Source), (&target, Domain::Target)] {
            if let Some(i) = m.domain.iter().position(|&d| d != want) {
                return Err(Error::Data(format!(
                    "sample {} is tagged {} but listed in the {} expression file",
                    m.sample_ids[i],
                    m.domain[i].as_str(),
                    want.as_str()
                )));
            }
        }
        let (source, target) = harmonize_features(&source, &target)?;
        let source_responses = load_responses(&dir.join(files::SOURCE_RESPONSES))?.with_labels()?;
        let tr = dir.join(files::TARGET_RESPONSES);
        let target_responses = if tr.exists() {
            load_responses(&tr)?.with_labels()?
        } else {
            ResponseTable::default()
        };
        let drugs = load_drugs(&dir.join(files::DRUGS))?;
        Ok(Dataset {
            source,
            target,
            source_responses,
            target_responses,
            drugs,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_expression(&dir.join(files::SOURCE_EXPRESSION), &self.source)?;
        write_expression(&dir.join(files::TARGET_EXPRESSION), &self.target)?;
        write_metadata(&dir.join(files::METADATA), &[&self.source, &self.target])?;
        write_responses(&dir.join(files::SOURCE_RESPONSES), &self.source_responses)?;
        write_responses(&dir.join(files::TARGET_RESPONSES), &self.target_responses)?;
        write_drugs(&dir.join(files::DRUGS), &self.drugs)
    }
}

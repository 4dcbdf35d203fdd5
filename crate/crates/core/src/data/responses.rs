//! Drug-response tables and their binarization.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One (sample, drug) measurement. Lower `auc` means a more sensitive sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub sample_id: String,
    pub drug_id: String,
    pub auc: Option<f64>,
    pub label: Option<u8>,
    /// Per-drug cutoff that overrides the mean rule when present.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseTable {
    records: Vec<ResponseRecord>,
}

impl ResponseTable {
    pub fn new(records: Vec<ResponseRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.auc.is_none() && r.label.is_none() {
                return Err(Error::Data(format!(
                    "response ({}, {}) has neither auc nor label",
                    r.sample_id, r.drug_id
                )));
            }
            if matches!(r.label, Some(l) if l > 1) {
                return Err(Error::Data(format!(
                    "response ({}, {}) has label outside {{0,1}}",
                    r.sample_id, r.drug_id
                )));
            }
            if !seen.insert((r.sample_id.as_str(), r.drug_id.as_str())) {
                return Err(Error::Data(format!(
                    "duplicate response for sample {} and drug {}",
                    r.sample_id, r.drug_id
                )));
            }
        }
        Ok(ResponseTable { records })
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct drug ids in order of first appearance.
    pub fn drug_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.drug_id.as_str()))
            .map(|r| r.drug_id.clone())
            .collect()
    }

    /// Distinct sample ids in order of first appearance.
    pub fn sample_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.sample_id.as_str()))
            .map(|r| r.sample_id.clone())
            .collect()
    }

    /// Rows whose sample id is in `samples`.
    pub fn restrict_samples(&self, samples: &HashSet<&str>) -> ResponseTable {
        ResponseTable {
            records: self
                .records
                .iter()
                .filter(|r| samples.contains(r.sample_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn all_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    /// Copy with labels filled by [`binarize_responses`] when any are missing.
    pub fn with_labels(&self) -> Result<ResponseTable> {
        if self.all_labeled() {
            Ok(self.clone())
        } else {
            binarize_responses(self)
        }
    }
}

/// Labels each row with an AUC: 1 iff `auc` is strictly below the drug's
/// threshold. The threshold is the row's own `threshold` column when given,
/// otherwise the mean AUC over that drug's rows. Rows without an AUC keep
/// their existing label.
pub fn binarize_responses(table: &ResponseTable) -> Result<ResponseTable> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in &table.records {
        if let Some(a) = r.auc {
            let e = sums.entry(r.drug_id.as_str()).or_insert((0.0, 0));
            e.0 += a;
            e.1 += 1;
        }
    }
    for (drug, &(_, n)) in &sums {
        if n == 1 {
            warn!("drug {drug} has a single AUC value; its sample is labeled 0");
        }
    }
    let records = table
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(a) = r.auc {
                // `a < sum / n` compared as `a · n < sum` so that a value equal
                // to the mean is not split by rounding of the division.
                let below = match r.threshold {
                    Some(t) => a < t,
                    None => {
                        let (s, n) = sums[r.drug_id.as_str()];
                        a * (n as f64) < s
                    }
                };
                r.label = Some(u8::from(below));
            }
            r
        })
        .collect();
    Ok(ResponseTable { records })
}

/// Seeded random split of `ids` into a leading subset holding
/// `round(fraction · n)` ids and the remainder.
pub fn split_samples(ids: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("split fraction {fraction} outside [0, 1]")));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (fraction * order.len() as f64).round() as usize;
    let rest = order.split_off(k);
    Ok((order, rest))
}

/// Splits `table` by sample: the rows of a seeded `fraction` of its samples
/// and the rows of the rest.
pub fn split_by_sample(table: &ResponseTable, fraction: f64, seed: u64) -> Result<(ResponseTable, ResponseTable)> {
    let (first, _) = split_samples(&table.sample_ids(), fraction, seed)?;
    let first: HashSet<&str> = first.iter().map(String::as_str).collect();
    let (a, b) = table
        .records
        .iter()
        .cloned()
        .partition(|r| first.contains(r.sample_id.as_str()));
    Ok((ResponseTable { records: a }, ResponseTable { records: b }))
}

//! Cancer-type matching between target samples and source samples.

use std::collections::BTreeMap;

use log::warn;

use super::ExpressionMatrix;
use crate::error::{Error, Result};

/// For every target sample, the pool of source rows it may be aligned with.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingPlan {
    pools: Vec<Vec<usize>>,
    target_pool: Vec<usize>,
    fallback_types: Vec<String>,
}

impl PairingPlan {
    pub fn n_target(&self) -> usize {
        self.target_pool.len()
    }

    /// Source row indices eligible for target row `t`.
    pub fn pool_for(&self, t: usize) -> &[usize] {
        &self.pools[self.target_pool[t]]
    }

    /// Target cancer types with no source counterpart.
    pub fn fallback_types(&self) -> &[String] {
        &self.fallback_types
    }
}

/// Pairs each target sample with the source samples of its cancer type.
/// Types missing from the source fall back to the whole source pool.
pub fn pair_domains(source: &ExpressionMatrix, target: &ExpressionMatrix) -> Result<PairingPlan> {
    if source.is_empty() {
        return Err(Error::Contract("cannot pair against an empty source domain".into()));
    }
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ty) in source.cancer_type.iter().enumerate() {
        by_type.entry(ty.as_str()).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = Vec::new();
    let mut pool_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fallback: Option<usize> = None;
    let mut fallback_types = Vec::new();
    let mut target_pool = Vec::with_capacity(target.n_samples());
    for ty in &target.cancer_type {
        let slot = if let Some(&p) = pool_of.get(ty.as_str()) {
            p
        } else if let Some(rows) = by_type.get(ty.as_str()) {
            pools.push(rows.clone());
            pool_of.insert(ty.as_str(), pools.len() - 1);
            pools.len() - 1
        } else {
            warn!("no source samples of cancer type {ty}; pairing with the full source pool");
            fallback_types.push(ty.clone());
            let p = *fallback.get_or_insert_with(|| {
                pools.push((0..source.n_samples()).collect());
                pools.len() - 1
            });
            pool_of.insert(ty.as_str(), p);
            p
        };
        target_pool.push(slot);
    }
    Ok(PairingPlan {
        pools,
        target_pool,
        fallback_types,
    })
}

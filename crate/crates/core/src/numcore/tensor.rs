use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Matrix;
use crate::error::{Error, Result};

/// A named, shaped, learnable array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "parameter {name}: shape {shape:?} must have positive dimensions"
            )));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::dim(format!(
                "parameter {name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(ParamTensor {
            name,
            shape,
            values,
            requires_grad: true,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    /// View as a 2-D matrix: 1-D shapes become a single row, higher ranks
    /// collapse the leading dimensions.
    pub fn as_matrix(&self) -> Matrix {
        let cols = *self.shape.last().unwrap_or(&1);
        let rows = self.values.len() / cols.max(1);
        Matrix::new(rows, cols, self.values.clone()).expect("shape invariant")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of parameters, addressed by name.
///
/// Insertion order is preserved so that serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: ParamTensor) -> Result<()> {
        if self.index.contains_key(&param.name) {
            return Err(Error::Parameter(format!("parameter {} already registered", param.name)));
        }
        self.index.insert(param.name.clone(), self.params.len());
        self.params.push(param);
        Ok(())
    }

    /// Registers a `fan_in × fan_out` weight with Glorot-uniform values.
    pub fn init_glorot<R: Rng>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let values = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        self.insert(ParamTensor::new(name, vec![fan_in, fan_out], values)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        self.insert(ParamTensor::zeros(name, shape)?)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn require(&self, name: &str) -> Result<&ParamTensor> {
        self.get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Enables gradients for parameters whose name starts with one of
    /// `prefixes` and disables them for everything else.
    pub fn train_only(&mut self, prefixes: &[&str]) {
        for p in &mut self.params {
            p.requires_grad = prefixes.iter().any(|pre| has_prefix(&p.name, pre));
        }
    }

    pub fn train_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.requires_grad = true);
    }

    /// Names of the parameters under `prefix` (a `prefix.` namespace).
    pub fn names_under<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.names().filter(move |n| has_prefix(n, prefix))
    }
}

fn has_prefix(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
}

/// Gradient map produced by a backward pass, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_must_fill_shape() {
        assert!(ParamTensor::new("w", vec![2, 3], vec![0.0; 5]).is_err());
        assert!(ParamTensor::new("w", vec![2, 0], vec![]).is_err());
        assert!(ParamTensor::new("w", vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.init_zeros("a.w", vec![2]).unwrap();
        assert!(store.init_zeros("a.w", vec![2]).is_err());
    }

    #[test]
    fn train_only_matches_namespaces() {
        let mut store = ParamStore::new();
        for n in ["f_t.w0", "f_t.b0", "f_tx.w0", "f_c.w0"] {
            store.init_zeros(n, vec![1]).unwrap();
        }
        store.train_only(&["f_t"]);
        let trainable: Vec<_> = store
            .iter()
            .filter(|p| p.requires_grad)
            .map(|p| p.name.as_str())
            .collect();
        assert_eq!(trainable, ["f_t.w0", "f_t.b0"]);
    }
}

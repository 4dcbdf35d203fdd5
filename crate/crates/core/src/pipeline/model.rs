use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, Stage};
use super::config::{Alignment, TrainConfig};
use crate::data::{DrugEntry, ExpressionMatrix, ResponseTable};
use crate::druggraph::{parse_smiles, GatEncoder, GatSpec, GraphBatch, MolecularGraph};
use crate::error::{Error, Result};
use crate::nets::{ExpressionNets, Mlp, MlpSpec};
use crate::numcore::{Matrix, ParamStore, Tape};
use crate::response::{combine, eval_logits, ResponseDecomposition, ResponseHeads};

/// Parsed molecular graphs, addressable by drug id.
#[derive(Debug, Clone)]
pub struct DrugLibrary {
    graphs: Vec<MolecularGraph>,
    index: HashMap<String, usize>,
}

impl DrugLibrary {
    pub fn new(entries: &[DrugEntry]) -> Result<Self> {
        let mut graphs = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for e in entries {
            let g =
                parse_smiles(&e.smiles, &e.drug_id).map_err(|err| Error::Data(format!("drug {}: {err}", e.drug_id)))?;
            if index.insert(e.drug_id.clone(), graphs.len()).is_some() {
                return Err(Error::Data(format!("drug {} listed twice", e.drug_id)));
            }
            graphs.push(g);
        }
        Ok(DrugLibrary { graphs, index })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[MolecularGraph] {
        &self.graphs
    }

    pub fn id(&self, i: usize) -> &str {
        &self.graphs[i].drug_id
    }

    pub fn resolve(&self, drug_id: &str) -> Result<usize> {
        self.index
            .get(drug_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("drug {drug_id} is referenced but has no SMILES")))
    }

    pub fn batch(&self) -> Result<GraphBatch> {
        if self.graphs.is_empty() {
            return Err(Error::Data("no drugs given".into()));
        }
        GraphBatch::new(&self.graphs.iter().collect::<Vec<_>>())
    }
}

/// Response rows resolved to row indices of an expression matrix and a
/// drug library.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairIndex {
    pub sample: Vec<usize>,
    pub drug: Vec<usize>,
    /// Present when every row carries a label.
    pub labels: Option<Vec<f64>>,
}

impl PairIndex {
    pub fn new(table: &ResponseTable, samples: &ExpressionMatrix, drugs: &DrugLibrary) -> Result<Self> {
        let rows: HashMap<&str, usize> = samples
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut out = PairIndex::default();
        let mut labels = Vec::with_capacity(table.len());
        for r in table.records() {
            let s = *rows.get(r.sample_id.as_str()).ok_or_else(|| {
                Error::Data(format!(
                    "response for sample {} which has no expression profile",
                    r.sample_id
                ))
            })?;
            out.sample.push(s);
            out.drug.push(drugs.resolve(&r.drug_id)?);
            if let Some(l) = r.label {
                labels.push(f64::from(l));
            }
        }
        if labels.len() == out.sample.len() {
            out.labels = Some(labels);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }
}

/// Latent factors of a set of profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    /// `z_c` for cell lines, `z_tc` for tumors.
    pub common: Matrix,
    /// `z_ts`; absent for models trained without disentanglement.
    pub private: Option<Matrix>,
}

/// All networks of the model together with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub feature_ids: Vec<String>,
    pub stage: Stage,
    pub nets: ExpressionNets,
    pub heads: ResponseHeads,
    pub gat: GatEncoder,
    pub domain_classifier: Option<Mlp>,
    pub store: ParamStore,
}

/// Prefix of the adversarial domain classifier parameters.
pub const DOMAIN_CLASSIFIER_PREFIX: &str = "dom";

type Parts = (ExpressionNets, ResponseHeads, GatEncoder, Option<Mlp>);

fn architecture(config: &TrainConfig, input_dim: usize) -> Result<Parts> {
    config.validate()?;
    let d = config.latent_dim;
    let nets = ExpressionNets::new(input_dim, &config.hidden_dims, d, config.dropout_noise)?;
    let heads = ResponseHeads::new(d, config.predictor_hidden)?;
    let spec = GatSpec {
        num_layers: config.gat_layers,
        heads: config.gat_heads,
        hidden_dim: config.gat_hidden,
        out_dim: d,
    };
    spec.validate(d)?;
    let classifier = match config.alignment {
        Alignment::Mmd => None,
        Alignment::Dann => Some(Mlp::new(
            DOMAIN_CLASSIFIER_PREFIX,
            MlpSpec {
                layer_dims: vec![d, config.predictor_hidden, 1],
                dropout_noise: 0.0,
            },
        )?),
    };
    Ok((nets, heads, GatEncoder::new(spec), classifier))
}

fn init_store(parts: &Parts, config: &TrainConfig) -> Result<ParamStore> {
    let (nets, heads, gat, classifier) = parts;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    nets.init(&mut store, &mut rng, config.disentangle)?;
    heads.init(&mut store, &mut rng)?;
    gat.init(&mut store, &mut rng)?;
    if let Some(c) = classifier {
        c.init(&mut store, &mut rng)?;
    }
    Ok(store)
}

impl Model {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, feature_ids: Vec<String>) -> Result<Self> {
        if feature_ids.is_empty() {
            return Err(Error::Data("expression matrices have no features".into()));
        }
        let parts = architecture(&config, feature_ids.len())?;
        let store = init_store(&parts, &config)?;
        let (nets, heads, gat, domain_classifier) = parts;
        Ok(Model {
            config,
            feature_ids,
            stage: Stage::One,
            nets,
            heads,
            gat,
            domain_classifier,
            store,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let parts = architecture(&ckpt.config, ckpt.feature_ids.len())?;
        let expected = init_store(&parts, &ckpt.config)?;
        let layout = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
            s.iter().map(|p| (p.name.clone(), p.shape.clone())).collect()
        };
        if layout(&expected) != layout(&ckpt.params) {
            return Err(Error::Data(
                "checkpoint parameters do not match the architecture its config describes".into(),
            ));
        }
        let (nets, heads, gat, domain_classifier) = parts;
        let mut store = ckpt.params;
        store.train_all();
        Ok(Model {
            config: ckpt.config,
            feature_ids: ckpt.feature_ids,
            stage: ckpt.stage,
            nets,
            heads,
            gat,
            domain_classifier,
            store,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            stage: self.stage,
            config: self.config.clone(),
            feature_ids: self.feature_ids.clone(),
            params: self.store.clone(),
        }
    }

    /// Expression values with columns in the model's feature order.
    pub fn aligned_values(&self, m: &ExpressionMatrix) -> Result<Matrix> {
        if m.feature_ids == self.feature_ids {
            return Ok(m.values.clone());
        }
        Ok(m.with_features(&self.feature_ids)
            .map_err(|e| Error::Data(format!("expression does not cover the model's features: {e}")))?
            .values)
    }

    pub fn embed(&self, m: &ExpressionMatrix) -> Result<Embeddings> {
        let x = self.aligned_values(m)?;
        let common = self.nets.common.eval(&self.store, &x)?;
        let private = if self.config.disentangle {
            Some(self.nets.private.eval(&self.store, &x)?)
        } else {
            None
        };
        Ok(Embeddings { common, private })
    }

    /// `n_drugs × d` embeddings in library order.
    pub fn drug_embeddings(&self, drugs: &DrugLibrary) -> Result<Matrix> {
        let batch = drugs.batch()?;
        let mut tape = Tape::new();
        let z = self.gat.encode_batch(&mut tape, &self.store, &batch)?;
        Ok(tape.value(z).clone())
    }

    /// `sigmoid(F_c(z_c + z_d))` for every pair.
    pub fn predict_source(
        &self,
        samples: &ExpressionMatrix,
        drugs: &DrugLibrary,
        pairs: &PairIndex,
    ) -> Result<Vec<f64>> {
        let z = self.embed(samples)?.common;
        let zd = self.drug_embeddings(drugs)?;
        let logits = eval_logits(
            &self.store,
            &self.heads.cancell,
            &z.select_rows(&pairs.sample),
            &zd.select_rows(&pairs.drug),
        )?;
        Ok(logits.into_iter().map(crate::numcore::sigmoid).collect())
    }

    /// Per-pair decomposition of tumor responses. Without a private factor
    /// the TME logit is 0.
    pub fn decompose(
        &self,
        target: &ExpressionMatrix,
        drugs: &DrugLibrary,
        pairs: &PairIndex,
    ) -> Result<Vec<ResponseDecomposition>> {
        let emb = self.embed(target)?;
        let zd = self.drug_embeddings(drugs)?.select_rows(&pairs.drug);
        let lc = eval_logits(
            &self.store,
            &self.heads.cancell,
            &emb.common.select_rows(&pairs.sample),
            &zd,
        )?;
        let lt = match &emb.private {
            Some(p) => eval_logits(&self.store, &self.heads.tme, &p.select_rows(&pairs.sample), &zd)?,
            None => vec![0.0; pairs.len()],
        };
        Ok((0..pairs.len())
            .map(|k| ResponseDecomposition {
                sample_id: target.sample_ids[pairs.sample[k]].clone(),
                drug_id: drugs.id(pairs.drug[k]).to_string(),
                cancell_score: lc[k],
                tme_score: lt[k],
                combined: combine(lc[k], lt[k], self.config.combine_mode),
                label: pairs.labels.as_ref().map(|l| l[k] as u8),
            })
            .collect())
    }
}

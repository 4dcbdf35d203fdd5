use rand::Rng;

use super::{MolecularGraph, ATOM_FEATURES};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore, Tape, Var};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatSpec {
    pub num_layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    /// Width of the graph embedding; must equal the shared latent dim.
    pub out_dim: usize,
}

impl GatSpec {
    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if self.num_layers == 0 || self.heads == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Parameter(format!(
                "graph attention sizes must be positive: {self:?}"
            )));
        }
        if self.out_dim != latent_dim {
            return Err(Error::Parameter(format!(
                "drug embedding width {} must equal latent dim {latent_dim}",
                self.out_dim
            )));
        }
        Ok(())
    }
}

/// Several molecules packed into one disjoint graph with self-loops.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    features: Matrix,
    src: Vec<usize>,
    dst: Vec<usize>,
    graph_of: Vec<usize>,
    inv_sizes: Matrix,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolecularGraph]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut graph_of = Vec::new();
        let mut sizes = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            if g.atoms.is_empty() {
                return Err(Error::Contract(format!("drug {} has an empty graph", g.drug_id)));
            }
            let base = rows.len();
            for i in 0..g.atoms.len() {
                rows.push(g.atom_features(i));
                graph_of.push(gi);
                src.push(base + i);
                dst.push(base + i);
            }
            for b in &g.bonds {
                src.extend([base + b.a, base + b.b]);
                dst.extend([base + b.b, base + b.a]);
            }
            sizes.push(1.0 / g.atoms.len() as f64);
        }
        Ok(GraphBatch {
            features: Matrix::from_rows(&rows)?,
            src,
            dst,
            graph_of,
            inv_sizes: Matrix::column(&sizes),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph_of.len()
    }

    pub fn n_graphs(&self) -> usize {
        self.inv_sizes.rows()
    }
}

/// Attention coefficient on the directed edge `src → dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttention {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Multi-head graph attention network with mean-pool readout. Hidden layers
/// concatenate heads and apply ReLU; the output layer averages heads.
#[derive(Debug, Clone, PartialEq)]
pub struct GatEncoder {
    spec: GatSpec,
    prefix: String,
}

impl GatEncoder {
    pub fn new(spec: GatSpec) -> Self {
        GatEncoder {
            spec,
            prefix: "gat".to_string(),
        }
    }

    pub fn spec(&self) -> &GatSpec {
        &self.spec
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let s = &self.spec;
        let input = if layer == 0 {
            ATOM_FEATURES
        } else {
            s.hidden_dim * s.heads
        };
        let per_head = if layer + 1 == s.num_layers {
            s.out_dim
        } else {
            s.hidden_dim
        };
        (input, per_head)
    }

    fn head_name(&self, layer: usize, head: usize, what: &str) -> String {
        format!("{}.l{layer}.h{head}.{what}", self.prefix)
    }

    fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in 0..self.spec.num_layers {
            let (input, per_head) = self.layer_dims(l);
            for h in 0..self.spec.heads {
                store.init_glorot(&self.head_name(l, h, "w"), input, per_head, rng)?;
                store.init_glorot(&self.head_name(l, h, "att_src"), per_head, 1, rng)?;
                store.init_glorot(&self.head_name(l, h, "att_dst"), per_head, 1, rng)?;
            }
            let width = if l + 1 == self.spec.num_layers {
                per_head
            } else {
                per_head * self.spec.heads
            };
            store.init_zeros(&self.bias_name(l), vec![1, width])?;
        }
        Ok(())
    }

    fn forward_inner(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
        mut record: Option<&mut Vec<Vec<Var>>>,
    ) -> Result<Var> {
        let n = batch.n_nodes();
        let mut h = tape.constant(batch.features.clone());
        for l in 0..self.spec.num_layers {
            let last = l + 1 == self.spec.num_layers;
            let mut heads = Vec::with_capacity(self.spec.heads);
            let mut alphas = Vec::with_capacity(self.spec.heads);
            for k in 0..self.spec.heads {
                let w = tape.param(store, &self.head_name(l, k, "w"))?;
                let a_src = tape.param(store, &self.head_name(l, k, "att_src"))?;
                let a_dst = tape.param(store, &self.head_name(l, k, "att_dst"))?;
                let wh = tape.matmul(h, w)?;
                let s_src = tape.matmul(wh, a_src)?;
                let s_dst = tape.matmul(wh, a_dst)?;
                let e_src = tape.gather_rows(s_src, &batch.src)?;
                let e_dst = tape.gather_rows(s_dst, &batch.dst)?;
                let e = tape.add(e_src, e_dst)?;
                let e = tape.leaky_relu(e, LEAKY_SLOPE);
                let alpha = tape.segment_softmax(e, &batch.dst, n)?;
                let msg = tape.gather_rows(wh, &batch.src)?;
                let weighted = tape.mul(msg, alpha)?;
                heads.push(tape.scatter_add_rows(weighted, &batch.dst, n)?);
                alphas.push(alpha);
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(alphas);
            }
            let b = tape.param(store, &self.bias_name(l))?;
            h = if last {
                let mut acc = heads[0];
                for &hv in &heads[1..] {
                    acc = tape.add(acc, hv)?;
                }
                let mean = tape.scale(acc, 1.0 / self.spec.heads as f64);
                tape.add(mean, b)?
            } else {
                let cat = tape.concat_cols(&heads)?;
                let biased = tape.add(cat, b)?;
                tape.relu(biased)
            };
        }
        let pooled = tape.scatter_add_rows(h, &batch.graph_of, batch.n_graphs())?;
        let inv = tape.constant(batch.inv_sizes.clone());
        tape.mul(pooled, inv)
    }

    /// Embeds every graph of the batch; returns an `n_graphs × out_dim` node.
    pub fn encode_batch(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var> {
        self.forward_inner(tape, store, batch, None)
    }

    /// Embedding of a single molecule, evaluated outside any training tape.
    pub fn encode_drug(&self, store: &ParamStore, graph: &MolecularGraph) -> Result<Vec<f64>> {
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let z = self.encode_batch(&mut tape, store, &batch)?;
        Ok(tape.value(z).as_slice().to_vec())
    }

    /// Attention coefficients of one layer and head over every directed edge
    /// of `graph`, self-loops included.
    pub fn attention_weights(
        &self,
        store: &ParamStore,
        graph: &MolecularGraph,
        layer: usize,
        head: usize,
    ) -> Result<Vec<EdgeAttention>> {
        if layer >= self.spec.num_layers || head >= self.spec.heads {
            return Err(Error::Parameter(format!(
                "attention layer {layer} head {head} out of range ({} layers, {} heads)",
                self.spec.num_layers, self.spec.heads
            )));
        }
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        self.forward_inner(&mut tape, store, &batch, Some(&mut rec))?;
        let alpha = tape.value(rec[layer][head]);
        Ok(batch
            .src
            .iter()
            .zip(&batch.dst)
            .enumerate()
            .map(|(e, (&src, &dst))| EdgeAttention {
                src,
                dst,
                weight: alpha.get(e, 0),
            })
            .collect())
    }
}

//! Molecular graphs from SMILES and their graph-attention encoder.

mod gat;
mod smiles;

pub use gat::{EdgeAttention, GatEncoder, GatSpec, GraphBatch};
pub use smiles::parse_smiles;

use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Capitalized element symbol, `*` for a wildcard.
    pub symbol: String,
    pub aromatic: bool,
    pub charge: i32,
    /// Explicit hydrogen count from a bracket atom.
    pub hydrogens: Option<u8>,
}

/// Undirected bond between two atom indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

const FEATURE_ELEMENTS: [&str; 9] = ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I"];

/// Width of the per-atom feature vector: element one-hot (9 + other),
/// aromatic flag, formal charge, heavy-atom degree.
pub const ATOM_FEATURES: usize = FEATURE_ELEMENTS.len() + 1 + 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub drug_id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    pub fn atom_features(&self, atom: usize) -> [f64; ATOM_FEATURES] {
        let a = &self.atoms[atom];
        let mut f = [0.0; ATOM_FEATURES];
        let slot = FEATURE_ELEMENTS
            .iter()
            .position(|&e| e == a.symbol)
            .unwrap_or(FEATURE_ELEMENTS.len());
        f[slot] = 1.0;
        let base = FEATURE_ELEMENTS.len() + 1;
        f[base] = if a.aromatic { 1.0 } else { 0.0 };
        f[base + 1] = f64::from(a.charge);
        f[base + 2] = self.degree(atom) as f64;
        f
    }

    /// `atoms × ATOM_FEATURES` node feature matrix.
    pub fn node_features(&self) -> Matrix {
        let rows: Vec<[f64; ATOM_FEATURES]> = (0..self.atoms.len()).map(|i| self.atom_features(i)).collect();
        Matrix::from_rows(&rows).expect("fixed width")
    }

    /// Copy of the graph with atom `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let mut atoms = self.atoms.clone();
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i].clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph {
            drug_id: self.drug_id.clone(),
            atoms,
            bonds,
        }
    }
}

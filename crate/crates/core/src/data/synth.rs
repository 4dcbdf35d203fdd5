//! Synthetic two-domain benchmark with planted cancer-cell and
//! microenvironment factors.
//!
//! Each sample has a cancer-cell state `c` (a cancer-type cluster mean plus
//! unit noise). Target samples also carry a microenvironment state `t`:
//!
//! ```text
//! source: x = A·c + ε
//! target: x = A·c + B·t + s + ε
//! ```
//!
//! where `s` is a fixed per-feature domain offset. A (sample, drug) pair is
//! responsive when `w_c·c + w_d·e_d` (source) or `w_c·c + w_t·t + w_d·e_d`
//! (target) is positive, with `e_d` a fixed random vector per drug.

use std::fmt::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Domain, DrugEntry, ExpressionMatrix, ResponseRecord, ResponseTable};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, Matrix};

/// Drug identifiers and SMILES used by the generator.
pub const DRUG_FIXTURES: [(&str, &str); 20] = [
    ("aspirin", "CC(=O)Oc1ccccc1C(=O)O"),
    ("caffeine", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C"),
    ("ibuprofen", "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O"),
    ("paracetamol", "CC(=O)NC1=CC=C(C=C1)O"),
    ("fluorouracil", "C1=C(C(=O)NC(=O)N1)F"),
    ("cisplatin", "N.N.Cl[Pt]Cl"),
    ("gemcitabine", "C1=CN(C(=O)N=C1N)[C@H]2C([C@@H]([C@H](O2)CO)O)(F)F"),
    (
        "methotrexate",
        "CN(CC1=CN=C2C(=N1)C(=NC(=N2)N)N)C3=CC=C(C=C3)C(=O)NC(CCC(=O)O)C(=O)O",
    ),
    (
        "imatinib",
        "Cc1ccc(cc1Nc1nccc(n1)-c1cccnc1)NC(=O)c1ccc(cc1)CN1CCN(C)CC1",
    ),
    ("erlotinib", "COCCOC1=C(C=C2C(=C1)C(=NC=N2)NC3=CC=CC(=C3)C#C)OCCOC"),
    ("gefitinib", "COC1=C(C=C2C(=C1)N=CN=C2NC3=CC(=C(C=C3)F)Cl)OCCCN4CCOCC4"),
    (
        "doxorubicin",
        "CC1C(C(CC(O1)OC2CC(CC3=C2C(=C4C(=C3O)C(=O)C5=C(C4=O)C(=CC=C5)OC)O)(C(=O)CO)O)N)O",
    ),
    ("tamoxifen", "CCC(=C(c1ccccc1)c1ccc(cc1)OCCN(C)C)c1ccccc1"),
    (
        "sorafenib",
        "CNC(=O)C1=NC=CC(=C1)OC2=CC=C(C=C2)NC(=O)NC3=CC(=C(C=C3)Cl)C(F)(F)F",
    ),
    (
        "lapatinib",
        "CS(=O)(=O)CCNCC1=CC=C(O1)C2=CC3=C(C=C2)N=CN=C3NC4=CC(=C(C=C4)OCC5=CC(=CC=C5)F)Cl",
    ),
    ("cyclophosphamide", "C1CNP(=O)(OC1)N(CCCl)CCCl"),
    ("temozolomide", "CN1C(=O)N2C=NC(=C2N=N1)C(=O)N"),
    ("metformin", "CN(C)C(=N)N=C(N)N"),
    ("vorinostat", "C%10=CC=C(C=C%10)NC(=O)CCCCCCC(=O)NO"),
    (
        "olaparib",
        "C1CC1C(=O)N2CCN(CC2)C(=O)C3=C(C=CC(=C3)CC4=NNC(=O)C5=CC=CC=C54)F",
    ),
];

const CANCER_TYPES: [&str; 8] = ["lung", "breast", "colon", "skin", "blood", "brain", "ovary", "kidney"];

/// Generator parameters. Response weight vectors must match the factor
/// dimensions (`w_c`: `c_dim`, `w_t`: `t_dim`, `w_d`: `drug_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub n_features: usize,
    pub c_dim: usize,
    pub t_dim: usize,
    pub drug_dim: usize,
    pub n_drugs: usize,
    pub n_cancer_types: usize,
    /// Standard deviation of the cancer-type cluster means in `c`.
    pub type_separation: f64,
    /// Scale of the microenvironment mixing matrix `B` relative to `A`.
    pub tme_scale: f64,
    /// Magnitude of the per-feature target offset `s`.
    pub domain_shift: f64,
    pub w_c: Vec<f64>,
    pub w_t: Vec<f64>,
    pub w_d: Vec<f64>,
    /// Expression noise standard deviation.
    pub noise: f64,
    /// Standard deviation of Gaussian noise added to each response logit.
    pub response_noise: f64,
    pub seed: u64,
}

fn alternating(n: usize, norm: f64) -> Vec<f64> {
    let m = norm / (n as f64).sqrt();
    (0..n).map(|i| if i % 2 == 0 { m } else { -m }).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let (c_dim, t_dim, drug_dim) = (8, 4, 4);
        SyntheticSpec {
            n_source: 500,
            n_target: 200,
            n_features: 64,
            c_dim,
            t_dim,
            drug_dim,
            n_drugs: 20,
            n_cancer_types: 4,
            type_separation: 1.0,
            tme_scale: 1.0,
            domain_shift: 1.0,
            w_c: alternating(c_dim, 1.5),
            w_t: alternating(t_dim, 1.5),
            w_d: alternating(drug_dim, 0.5),
            noise: 0.1,
            response_noise: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let p = |m: String| Err(Error::Parameter(m));
        if self.n_source == 0 || self.n_target == 0 {
            return p("n_source and n_target must be positive".into());
        }
        if self.n_features == 0 || self.c_dim == 0 || self.t_dim == 0 || self.drug_dim == 0 {
            return p("feature and factor dimensions must be positive".into());
        }
        if self.n_drugs == 0 || self.n_drugs > DRUG_FIXTURES.len() {
            return p(format!("n_drugs must be in 1..={}", DRUG_FIXTURES.len()));
        }
        if self.n_cancer_types == 0 || self.n_cancer_types > CANCER_TYPES.len() {
            return p(format!("n_cancer_types must be in 1..={}", CANCER_TYPES.len()));
        }
        if self.w_c.len() != self.c_dim || self.w_t.len() != self.t_dim || self.w_d.len() != self.drug_dim {
            return p(format!(
                "weight lengths ({}, {}, {}) do not match factor dims ({}, {}, {})",
                self.w_c.len(),
                self.w_t.len(),
                self.w_d.len(),
                self.c_dim,
                self.t_dim,
                self.drug_dim
            ));
        }
        let scalars = [
            self.type_separation,
            self.tme_scale,
            self.domain_shift,
            self.noise,
            self.response_noise,
        ];
        if scalars.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return p("scales and noise levels must be finite and nonnegative".into());
        }
        if self
            .w_c
            .iter()
            .chain(&self.w_t)
            .chain(&self.w_d)
            .any(|v| !v.is_finite())
        {
            return p("response weights must be finite".into());
        }
        Ok(())
    }
}

/// The planted quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub c_source: Matrix,
    pub c_target: Matrix,
    pub t_target: Matrix,
    /// `n_features × c_dim`.
    pub mixing_a: Matrix,
    /// `n_features × t_dim`.
    pub mixing_b: Matrix,
    pub shift: Vec<f64>,
    /// `n_drugs × drug_dim`.
    pub drug_vectors: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// File names of the planted quantities inside a dataset directory.
pub mod truth_files {
    pub const C_SOURCE: &str = "truth_c_source.tsv";
    pub const C_TARGET: &str = "truth_c_target.tsv";
    pub const T_TARGET: &str = "truth_t_target.tsv";
    pub const MIXING_A: &str = "truth_mixing_a.tsv";
    pub const MIXING_B: &str = "truth_mixing_b.tsv";
    pub const SHIFT: &str = "truth_shift.tsv";
    pub const DRUG_VECTORS: &str = "truth_drug_vectors.tsv";
}

fn write_rows(path: &Path, ids: &[String], m: &Matrix) -> Result<()> {
    let mut s = String::from("id");
    for k in 0..m.cols() {
        let _ = write!(s, "\tdim_{k}");
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in m.row_slice(i) {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

impl SyntheticDataset {
    /// Writes the dataset files and, next to them, one TSV per planted
    /// quantity keyed by sample, feature or drug id.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let d = &self.dataset;
        let t = &self.truth;
        d.write_dir(dir)?;
        let drug_ids: Vec<String> = d.drugs.iter().map(|e| e.drug_id.clone()).collect();
        let features = &d.source.feature_ids;
        let shift = Matrix::column(&t.shift);
        for (name, ids, m) in [
            (truth_files::C_SOURCE, &d.source.sample_ids, &t.c_source),
            (truth_files::C_TARGET, &d.target.sample_ids, &t.c_target),
            (truth_files::T_TARGET, &d.target.sample_ids, &t.t_target),
            (truth_files::MIXING_A, features, &t.mixing_a),
            (truth_files::MIXING_B, features, &t.mixing_b),
            (truth_files::SHIFT, features, &shift),
            (truth_files::DRUG_VECTORS, &drug_ids, &t.drug_vectors),
        ] {
            write_rows(&dir.join(name), ids, m)?;
        }
        Ok(())
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a dataset from `spec`. Rejects specs whose overall response
/// balance falls outside [0.2, 0.8].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.n_features;
    let mixing_a = normal_matrix(&mut rng, f, spec.c_dim, 1.0 / (spec.c_dim as f64).sqrt());
    let mixing_b = normal_matrix(&mut rng, f, spec.t_dim, spec.tme_scale / (spec.t_dim as f64).sqrt());
    let shift: Vec<f64> = normal_matrix(&mut rng, 1, f, spec.domain_shift).into_vec();
    let centers = normal_matrix(&mut rng, spec.n_cancer_types, spec.c_dim, spec.type_separation);
    let drug_vectors = normal_matrix(&mut rng, spec.n_drugs, spec.drug_dim, 1.0);
    let drug_bias: Vec<f64> = (0..spec.n_drugs)
        .map(|d| dot(&spec.w_d, drug_vectors.row_slice(d)))
        .collect();

    let draw_c = |rng: &mut ChaCha8Rng, n: usize| -> (Matrix, Vec<usize>) {
        let mut c = normal_matrix(rng, n, spec.c_dim, 1.0);
        let types: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.n_cancer_types)).collect();
        for (i, &k) in types.iter().enumerate() {
            for (v, m) in c.row_slice_mut(i).iter_mut().zip(centers.row_slice(k)) {
                *v += m;
            }
        }
        (c, types)
    };
    let (c_source, types_source) = draw_c(&mut rng, spec.n_source);
    let (c_target, types_target) = draw_c(&mut rng, spec.n_target);
    let t_target = normal_matrix(&mut rng, spec.n_target, spec.t_dim, 1.0);

    let mut x_source = c_source.matmul_t(&mixing_a)?;
    x_source.add_assign(&normal_matrix(&mut rng, spec.n_source, f, spec.noise));
    let mut x_target = c_target.matmul_t(&mixing_a)?;
    x_target.add_assign(&t_target.matmul_t(&mixing_b)?);
    x_target.add_assign(&normal_matrix(&mut rng, spec.n_target, f, spec.noise));
    for r in 0..spec.n_target {
        for (v, s) in x_target.row_slice_mut(r).iter_mut().zip(&shift) {
            *v += s;
        }
    }

    let drugs: Vec<DrugEntry> = DRUG_FIXTURES[..spec.n_drugs]
        .iter()
        .map(|(id, smiles)| DrugEntry {
            drug_id: id.to_string(),
            smiles: smiles.to_string(),
        })
        .collect();
    let feature_ids: Vec<String> = (0..f).map(|j| format!("F{j:03}")).collect();
    let type_names = |types: &[usize]| -> Vec<String> { types.iter().map(|&k| CANCER_TYPES[k].to_string()).collect() };

    let source_ids: Vec<String> = (0..spec.n_source).map(|i| format!("CL{i:04}")).collect();
    let target_ids: Vec<String> = (0..spec.n_target).map(|i| format!("TU{i:04}")).collect();

    let responses = |rng: &mut ChaCha8Rng, ids: &[String], base: &[f64]| -> Result<ResponseTable> {
        let mut records = Vec::with_capacity(ids.len() * drugs.len());
        for (i, id) in ids.iter().enumerate() {
            for (d, drug) in drugs.iter().enumerate() {
                let logit = base[i] + drug_bias[d] + spec.response_noise * rng.sample::<f64, _>(StandardNormal);
                records.push(ResponseRecord {
                    sample_id: id.clone(),
                    drug_id: drug.drug_id.clone(),
                    auc: Some(sigmoid(-logit)),
                    label: Some(u8::from(logit > 0.0)),
                    threshold: None,
                });
            }
        }
        ResponseTable::new(records)
    };
    let base_source: Vec<f64> = (0..spec.n_source)
        .map(|i| dot(&spec.w_c, c_source.row_slice(i)))
        .collect();
    let base_target: Vec<f64> = (0..spec.n_target)
        .map(|i| dot(&spec.w_c, c_target.row_slice(i)) + dot(&spec.w_t, t_target.row_slice(i)))
        .collect();
    let source_responses = responses(&mut rng, &source_ids, &base_source)?;
    let target_responses = responses(&mut rng, &target_ids, &base_target)?;

    let positives = source_responses
        .records()
        .iter()
        .chain(target_responses.records())
        .filter(|r| r.label == Some(1))
        .count();
    let balance = positives as f64 / (source_responses.len() + target_responses.len()) as f64;
    if !(0.2..=0.8).contains(&balance) {
        return Err(Error::Parameter(format!(
            "responsive fraction {balance:.3} outside [0.2, 0.8]; shrink w_d or the drug effects, \
             or center the response weights"
        )));
    }

    let source = ExpressionMatrix::new(
        source_ids,
        feature_ids.clone(),
        x_source,
        vec![Domain::Source; spec.n_source],
        type_names(&types_source),
    )?;
    let target = ExpressionMatrix::new(
        target_ids,
        feature_ids,
        x_target,
        vec![Domain::Target; spec.n_target],
        type_names(&types_target),
    )?;
    Ok(SyntheticDataset {
        dataset: Dataset {
            source,
            target,
            source_responses,
            target_responses,
            drugs,
        },
        truth: GroundTruth {
            c_source,
            c_target,
            t_target,
            mixing_a,
            mixing_b,
            shift,
            drug_vectors,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_source: 60,
            n_target: 30,
            n_features: 16,
            n_drugs: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = SyntheticSpec { seed: 8, ..small() };
        assert_ne!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn shapes_and_labels() {
        let s = generate_synthetic(&small()).unwrap();
        assert_eq!(s.dataset.source.values.shape(), (60, 16));
        assert_eq!(s.dataset.target.values.shape(), (30, 16));
        assert_eq!(s.dataset.source_responses.len(), 300);
        assert_eq!(s.dataset.target_responses.len(), 150);
        assert_eq!(s.truth.t_target.shape(), (30, 4));
        for r in s.dataset.source_responses.records() {
            assert_eq!(r.label == Some(1), r.auc.unwrap() < 0.5);
        }
    }

    #[test]
    fn noiseless_expression_follows_mixing_model() {
        let spec = SyntheticSpec { noise: 0.0, ..small() };
        let s = generate_synthetic(&spec).unwrap();
        let expect = s.truth.c_target.matmul_t(&s.truth.mixing_a).unwrap();
        let tme = s.truth.t_target.matmul_t(&s.truth.mixing_b).unwrap();
        for i in 0..30 {
            for j in 0..16 {
                let x = expect.get(i, j) + tme.get(i, j) + s.truth.shift[j];
                assert!((s.dataset.target.values.get(i, j) - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_balance_is_moderate() {
        let s = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let r = s.dataset.target_responses.records();
        let pos = r.iter().filter(|x| x.label == Some(1)).count() as f64 / r.len() as f64;
        assert!((0.2..=0.8).contains(&pos), "{pos}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&SyntheticSpec { n_source: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            w_c: vec![1.0],
            ..small()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec { n_drugs: 21, ..small() }).is_err());
        let skewed = SyntheticSpec {
            w_d: vec![50.0; 4],
            n_drugs: 1,
            ..small()
        };
        assert!(matches!(generate_synthetic(&skewed), Err(Error::Parameter(_))));
    }
}

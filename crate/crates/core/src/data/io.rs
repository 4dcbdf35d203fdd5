//! Tab- and comma-separated file formats. Every file carries a header row.
//!
//! | file       | delimiter | columns                                        |
//! |------------|-----------|------------------------------------------------|
//! | expression | tab       | `sample_id`, one column per feature            |
//! | metadata   | tab       | `sample_id`, `domain`, `cancer_type`           |
//! | responses  | comma     | `sample_id`, `drug_id`, `auc`[, `label`][, `threshold`] |
//! | drugs      | tab       | `drug_id`, `smiles`                            |

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;

use super::{Domain, DrugEntry, ExpressionMatrix, ResponseRecord, ResponseTable};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Data rows with their 1-based line numbers.
type Rows = Vec<(usize, Vec<String>)>;

fn read_records(path: &Path, delimiter: u8) -> Result<(Vec<String>, Rows)> {
    let mut rdr = reader(path, delimiter)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| format_err(path, 1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(format_err(path, 1, "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            format_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(format_err(
                path,
                line,
                format!("{} fields, header has {}", rec.len(), header.len()),
            ));
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| format_err(path, 1, format!("missing column {name}")))
}

/// Domain and cancer type of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub domain: Domain,
    pub cancer_type: String,
}

pub fn load_metadata(path: &Path) -> Result<HashMap<String, SampleMeta>> {
    let (header, rows) = read_records(path, b'\t')?;
    let (si, di, ci) = (
        column(&header, "sample_id", path)?,
        column(&header, "domain", path)?,
        column(&header, "cancer_type", path)?,
    );
    let mut out = HashMap::with_capacity(rows.len());
    for (line, row) in rows {
        let domain =
            Domain::parse(&row[di]).ok_or_else(|| format_err(path, line, format!("unknown domain {:?}", row[di])))?;
        let meta = SampleMeta {
            domain,
            cancer_type: row[ci].clone(),
        };
        if out.insert(row[si].clone(), meta).is_some() {
            return Err(format_err(path, line, format!("duplicate sample id {}", row[si])));
        }
    }
    Ok(out)
}

/// Reads an expression matrix and joins per-sample metadata.
pub fn load_expression(path: &Path, metadata: &HashMap<String, SampleMeta>) -> Result<ExpressionMatrix> {
    let (header, rows) = read_records(path, b'\t')?;
    if header.len() < 2 {
        return Err(format_err(
            path,
            1,
            "expression file needs sample_id and at least one feature",
        ));
    }
    let features: Vec<String> = header[1..].to_vec();
    let mut seen_features = HashSet::new();
    if let Some(dup) = features.iter().find(|f| !seen_features.insert(f.as_str())) {
        return Err(format_err(path, 1, format!("duplicate feature {dup}")));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * features.len());
    let mut domain = Vec::with_capacity(rows.len());
    let mut cancer = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for (line, row) in rows {
        let id = row[0].clone();
        if !seen.insert(id.clone()) {
            return Err(format_err(path, line, format!("duplicate sample id {id}")));
        }
        let meta = metadata
            .get(&id)
            .ok_or_else(|| format_err(path, line, format!("no metadata for sample {id}")))?;
        for (j, cell) in row[1..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                format_err(
                    path,
                    line,
                    format!("non-numeric value {cell:?} for feature {}", features[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(format_err(
                    path,
                    line,
                    format!("non-finite value for feature {}", features[j]),
                ));
            }
            data.push(v);
        }
        ids.push(id);
        domain.push(meta.domain);
        cancer.push(meta.cancer_type.clone());
    }
    let values = Matrix::new(ids.len(), features.len(), data)?;
    ExpressionMatrix::new(ids, features, values, domain, cancer)
}

/// Restricts both matrices to their shared features, ordered as in `a`.
pub fn harmonize_features(a: &ExpressionMatrix, b: &ExpressionMatrix) -> Result<(ExpressionMatrix, ExpressionMatrix)> {
    let in_b: HashSet<&str> = b.feature_ids.iter().map(String::as_str).collect();
    let shared: Vec<String> = a
        .feature_ids
        .iter()
        .filter(|f| in_b.contains(f.as_str()))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::Data("the two expression matrices share no features".into()));
    }
    let dropped = a.n_features() + b.n_features() - 2 * shared.len();
    if dropped > 0 {
        warn!(
            "harmonized features: kept {} shared, dropped {dropped} present in only one domain",
            shared.len()
        );
    }
    Ok((a.with_features(&shared)?, b.with_features(&shared)?))
}

fn parse_opt_f64(cell: &str, path: &Path, line: usize, what: &str) -> Result<Option<f64>> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| format_err(path, line, format!("non-numeric {what} {cell:?}")))?;
    if !v.is_finite() {
        return Err(format_err(path, line, format!("non-finite {what}")));
    }
    Ok(Some(v))
}

pub fn load_responses(path: &Path) -> Result<ResponseTable> {
    let (header, rows) = read_records(path, b',')?;
    let si = column(&header, "sample_id", path)?;
    let di = column(&header, "drug_id", path)?;
    let ai = column(&header, "auc", path).ok();
    let li = column(&header, "label", path).ok();
    let ti = column(&header, "threshold", path).ok();
    if ai.is_none() && li.is_none() {
        return Err(format_err(path, 1, "responses need an auc or a label column"));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let auc = match ai {
            Some(i) => parse_opt_f64(&row[i], path, line, "auc")?,
            None => None,
        };
        let threshold = match ti {
            Some(i) => parse_opt_f64(&row[i], path, line, "threshold")?,
            None => None,
        };
        let label = match li.map(|i| row[i].as_str()) {
            None | Some("") => None,
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => return Err(format_err(path, line, format!("label {other:?} is not 0 or 1"))),
        };
        if auc.is_none() && label.is_none() {
            return Err(format_err(path, line, "row has neither auc nor label"));
        }
        records.push(ResponseRecord {
            sample_id: row[si].clone(),
            drug_id: row[di].clone(),
            auc,
            label,
            threshold,
        });
    }
    ResponseTable::new(records)
}

pub fn load_drugs(path: &Path) -> Result<Vec<DrugEntry>> {
    let (header, rows) = read_records(path, b'\t')?;
    let di = column(&header, "drug_id", path)?;
    let si = column(&header, "smiles", path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if !seen.insert(row[di].clone()) {
            return Err(format_err(path, line, format!("duplicate drug id {}", row[di])));
        }
        if row[si].is_empty() {
            return Err(format_err(path, line, format!("drug {} has no SMILES", row[di])));
        }
        out.push(DrugEntry {
            drug_id: row[di].clone(),
            smiles: row[si].clone(),
        });
    }
    Ok(out)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_expression(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let mut s = String::from("sample_id");
    for f in &m.feature_ids {
        s.push('\t');
        s.push_str(f);
    }
    s.push('\n');
    for (i, id) in m.sample_ids.iter().enumerate() {
        s.push_str(id);
        for v in m.values.row_slice(i) {
            s.push('\t');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn write_metadata(path: &Path, matrices: &[&ExpressionMatrix]) -> Result<()> {
    let mut s = String::from("sample_id\tdomain\tcancer_type\n");
    for m in matrices {
        for i in 0..m.n_samples() {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                m.sample_ids[i],
                m.domain[i].as_str(),
                m.cancer_type[i]
            ));
        }
    }
    write_file(path, &s)
}

pub fn write_responses(path: &Path, table: &ResponseTable) -> Result<()> {
    let with_threshold = table.records().iter().any(|r| r.threshold.is_some());
    let mut s = String::from("sample_id,drug_id,auc,label");
    if with_threshold {
        s.push_str(",threshold");
    }
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in table.records() {
        s.push_str(&format!(
            "{},{},{},{}",
            r.sample_id,
            r.drug_id,
            opt(r.auc),
            r.label.map(|l| l.to_string()).unwrap_or_default()
        ));
        if with_threshold {
            s.push(',');
            s.push_str(&opt(r.threshold));
        }
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn write_drugs(path: &Path, drugs: &[DrugEntry]) -> Result<()> {
    let mut s = String::from("drug_id\tsmiles\n");
    for d in drugs {
        s.push_str(&format!("{}\t{}\n", d.drug_id, d.smiles));
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn meta(dir: &Path) -> HashMap<String, SampleMeta> {
        let p = write(
            dir,
            "meta.tsv",
            "sample_id\tdomain\tcancer_type\ns1\tsource\tlung\ns2\tsource\tbreast\nt1\ttarget\tlung\n",
        );
        load_metadata(&p).unwrap()
    }

    #[test]
    fn reads_literal_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.tsv", "sample_id\tA\tB\ns1\t1.5\t-2\ns2\t0\t3e-1\n");
        let m = load_expression(&p, &meta(dir.path())).unwrap();
        assert_eq!(m.sample_ids, ["s1", "s2"]);
        assert_eq!(m.feature_ids, ["A", "B"]);
        assert_eq!(m.values.as_slice(), &[1.5, -2.0, 0.0, 0.3]);
        assert_eq!(m.cancer_type, ["lung", "breast"]);
    }

    #[test]
    fn harmonizes_to_shared_features() {
        let dir = tempfile::tempdir().unwrap();
        let md = meta(dir.path());
        let a = write(dir.path(), "a.tsv", "sample_id\tA\tB\tC\ns1\t1\t2\t3\n");
        let b = write(dir.path(), "b.tsv", "sample_id\tB\tC\tD\nt1\t4\t5\t6\n");
        let (a, b) =
            harmonize_features(&load_expression(&a, &md).unwrap(), &load_expression(&b, &md).unwrap()).unwrap();
        assert_eq!(a.feature_ids, ["B", "C"]);
        assert_eq!(b.feature_ids, ["B", "C"]);
        assert_eq!(a.values.as_slice(), &[2.0, 3.0]);
        assert_eq!(b.values.as_slice(), &[4.0, 5.0]);
    }

    #[test]
    fn errors_name_line_and_sample() {
        let dir = tempfile::tempdir().unwrap();
        let md = meta(dir.path());
        let dup = write(dir.path(), "d.tsv", "sample_id\tA\ns1\t1\ns1\t2\n");
        let e = load_expression(&dup, &md).unwrap_err().to_string();
        assert!(e.contains("duplicate sample id s1") && e.contains(":3:"), "{e}");

        let missing = write(dir.path(), "m.tsv", "sample_id\tA\nzz\t1\n");
        let e = load_expression(&missing, &md).unwrap_err().to_string();
        assert!(e.contains("zz") && e.contains(":2:"), "{e}");

        let nonnum = write(dir.path(), "n.tsv", "sample_id\tA\ns1\tabc\n");
        assert!(load_expression(&nonnum, &md).unwrap_err().to_string().contains(":2:"));

        let ragged = write(dir.path(), "r.tsv", "sample_id\tA\tB\ns1\t1\n");
        assert!(load_expression(&ragged, &md).unwrap_err().to_string().contains(":2:"));
    }

    #[test]
    fn response_columns_are_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.csv",
            "sample_id,drug_id,auc,label,threshold\ns1,d1,0.4,,0.5\ns1,d2,,1,\n",
        );
        let t = load_responses(&p).unwrap();
        assert_eq!(t.records()[0].auc, Some(0.4));
        assert_eq!(t.records()[0].threshold, Some(0.5));
        assert_eq!(t.records()[1].label, Some(1));
        let bad = write(dir.path(), "b.csv", "sample_id,drug_id,auc,label\ns1,d1,,\n");
        assert!(load_responses(&bad).is_err());
        let bad = write(dir.path(), "c.csv", "sample_id,drug_id,label\ns1,d1,2\n");
        assert!(load_responses(&bad).is_err());
    }

    #[test]
    fn writers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let md = meta(dir.path());
        let p = write(dir.path(), "x.tsv", "sample_id\tA\tB\ns1\t0.1\t-2.5e-7\ns2\t3\t4\n");
        let m = load_expression(&p, &md).unwrap();
        let out = dir.path().join("y.tsv");
        write_expression(&out, &m).unwrap();
        assert_eq!(load_expression(&out, &md).unwrap(), m);

        let drugs = vec![DrugEntry {
            drug_id: "aspirin".into(),
            smiles: "CC(=O)Oc1ccccc1C(=O)O".into(),
        }];
        let dp = dir.path().join("drugs.tsv");
        write_drugs(&dp, &drugs).unwrap();
        assert_eq!(load_drugs(&dp).unwrap(), drugs);
    }
}

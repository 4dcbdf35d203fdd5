use std::collections::BTreeMap;
use std::fmt;

/// Ranks with ties replaced by their average (1-based).
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both classes are present.
///
/// # Panics
/// If `scores` and `labels` differ in length.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let (p, n) = counts(labels);
    if p == 0 || n == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Some(u / (p as f64 * n as f64))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over descending score
/// thresholds, tied scores forming a single threshold.
///
/// # Panics
/// If `scores` and `labels` differ in length.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let (p, n) = counts(labels);
    if p == 0 || n == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut group_tp = 0;
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                group_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            area += (group_tp as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Some(area)
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "inputs differ in length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugMetric {
    pub auroc: Option<f64>,
    pub n: usize,
}

/// Pooled and per-drug ranking metrics over scored (sample, drug) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Over all pairs pooled.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub per_drug: BTreeMap<String, DrugMetric>,
    /// Mean per-drug AUROC over drugs with both classes.
    pub macro_auroc: Option<f64>,
    /// Drugs left out of the macro average for lacking a class.
    pub excluded_drugs: usize,
}

impl MetricReport {
    pub fn new(drug_ids: &[&str], scores: &[f64], labels: &[u8]) -> Self {
        assert!(
            drug_ids.len() == scores.len() && scores.len() == labels.len(),
            "report inputs differ in length"
        );
        let (n_pos, n_neg) = counts(labels);
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
        for ((d, &s), &l) in drug_ids.iter().zip(scores).zip(labels) {
            let g = groups.entry(d).or_default();
            g.0.push(s);
            g.1.push(l);
        }
        let per_drug: BTreeMap<String, DrugMetric> = groups
            .into_iter()
            .map(|(d, (s, l))| {
                (
                    d.to_string(),
                    DrugMetric {
                        auroc: auroc(&s, &l),
                        n: s.len(),
                    },
                )
            })
            .collect();
        let defined: Vec<f64> = per_drug.values().filter_map(|m| m.auroc).collect();
        MetricReport {
            auroc: auroc(scores, labels),
            auprc: auprc(scores, labels),
            n_pos,
            n_neg,
            macro_auroc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            excluded_drugs: per_drug.len() - defined.len(),
            per_drug,
        }
    }

    /// `metric,value` lines followed by `drug:<id>,auroc,n` lines.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        let mut s = String::from("metric,value\n");
        s += &format!("auroc,{}\n", opt(self.auroc));
        s += &format!("auprc,{}\n", opt(self.auprc));
        s += &format!("macro_auroc,{}\n", opt(self.macro_auroc));
        s += &format!(
            "n_pos,{}\nn_neg,{}\nexcluded_drugs,{}\n",
            self.n_pos, self.n_neg, self.excluded_drugs
        );
        s += "drug,auroc,n\n";
        for (d, m) in &self.per_drug {
            s += &format!("{d},{},{}\n", opt(m.auroc), m.n);
        }
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into());
        writeln!(
            f,
            "pairs        {} ({} positive, {} negative)",
            self.n_pos + self.n_neg,
            self.n_pos,
            self.n_neg
        )?;
        writeln!(f, "AUROC        {}", opt(self.auroc))?;
        writeln!(f, "AUPRC        {}", opt(self.auprc))?;
        write!(
            f,
            "macro AUROC  {} over {} drugs ({} excluded)",
            opt(self.macro_auroc),
            self.per_drug.len() - self.excluded_drugs,
            self.excluded_drugs
        )
    }
}

//! ROC-AUC and embedding export.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels must contain both classes")]
    DegenerateLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("row {row} has {got} embedding components, expected {expected}")]
    RaggedEmbeddings {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Positive-class scores with their binary labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore(s));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Area under the ROC curve: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
///
/// Computed from midranks after one sort, `O(n log n)`.
pub fn roc_auc(set: &ScoredSet) -> Result<f64, MetricsError> {
    let ScoredSet { scores, labels } = ScoredSet::new(set.scores.clone(), set.labels.clone())?;
    let p = labels.iter().filter(|&&y| y).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One exported molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: Option<bool>,
    pub embedding: Vec<f64>,
}

/// Writes `id,label,e0,…,e{d-1}` with a header row. Values use 17 significant
/// digits so they parse back to the identical `f64`; a missing label is an
/// empty cell.
pub fn write_embeddings<W: Write>(mut out: W, rows: &[EmbeddingRow]) -> std::io::Result<()> {
    let dim = rows.first().map_or(0, |r| r.embedding.len());
    let mut header = String::from("id,label");
    for k in 0..dim {
        header.push_str(&format!(",e{k}"));
    }
    writeln!(out, "{header}")?;
    for r in rows {
        let label = match r.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        write!(out, "{},{label}", r.id)?;
        for x in &r.embedding {
            write!(out, ",{x:.16e}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn export_embeddings(rows: &[EmbeddingRow], path: &Path) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let dim = rows.first().map_or(0, |r| r.embedding.len());
    if let Some((row, r)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.embedding.len() != dim)
    {
        return Err(MetricsError::RaggedEmbeddings {
            row,
            got: r.embedding.len(),
            expected: dim,
        });
    }
    let file = std::fs::File::create(path).map_err(io)?;
    write_embeddings(std::io::BufWriter::new(file), rows).map_err(io)
}

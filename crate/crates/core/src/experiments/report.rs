use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// Pairwise label similarities `sim(t_y, t_y')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl SimilarityReport {
    pub fn from_embeddings(labels: Vec<String>, embeddings: &Tensor) -> Self {
        let rows: Vec<&[_]> = embeddings.row_iter().collect();
        let matrix = rows
            .iter()
            .map(|a| {
                rows.iter()
                    .map(|b| {
                        a.iter()
                            .zip(*b)
                            .map(|(x, y)| x * y)
                            .sum::<crate::autodiff::Float>() as f64
                    })
                    .collect()
            })
            .collect();
        SimilarityReport { labels, matrix }
    }

    pub fn max_off_diagonal(&self) -> Option<f64> {
        let n = self.matrix.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[i][j])
            .reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.labels, &self.matrix, |v| format!("{v}"))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Square matrix as CSV with label names heading the rows and columns.
pub fn matrix_csv<T>(labels: &[String], m: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::from("label");
    for l in labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(m) {
        out.push_str(&csv_field(l));
        for v in row {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    out
}

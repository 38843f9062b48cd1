use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Token ids and attention mask for `batch` sequences of length `len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, mask: Vec<bool>, batch: usize, len: usize) -> Result<Self> {
        if ids.len() != batch * len || mask.len() != batch * len {
            return Err(Error::Dimension {
                op: "token batch",
                lhs: vec![batch, len],
                rhs: vec![ids.len(), mask.len()],
            });
        }
        Ok(TokenBatch {
            ids,
            mask,
            batch,
            len,
        })
    }

    pub fn encode<S: AsRef<str>>(vocab: &Vocab, texts: &[S], max_len: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(texts.len() * max_len);
        let mut mask = Vec::with_capacity(texts.len() * max_len);
        for t in texts {
            let (i, m) = vocab.encode(t.as_ref(), max_len)?;
            ids.extend(i);
            mask.extend(m);
        }
        Self::new(ids, mask, texts.len(), max_len)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[bool]) {
        (
            &self.ids[i * self.len..(i + 1) * self.len],
            &self.mask[i * self.len..(i + 1) * self.len],
        )
    }

    pub fn select(&self, rows: &[usize]) -> TokenBatch {
        let mut ids = Vec::with_capacity(rows.len() * self.len);
        let mut mask = Vec::with_capacity(rows.len() * self.len);
        for &r in rows {
            let (i, m) = self.row(r);
            ids.extend_from_slice(i);
            mask.extend_from_slice(m);
        }
        TokenBatch {
            ids,
            mask,
            batch: rows.len(),
            len: self.len,
        }
    }

    /// Drops trailing positions that no sequence attends to. Output of a
    /// masked encoder is unchanged by this.
    pub fn trimmed(&self) -> TokenBatch {
        let used = (0..self.batch)
            .filter_map(|b| self.row(b).1.iter().rposition(|&m| m))
            .max()
            .map_or(1, |p| p + 1);
        if used == self.len {
            return self.clone();
        }
        let mut ids = Vec::with_capacity(self.batch * used);
        let mut mask = Vec::with_capacity(self.batch * used);
        for b in 0..self.batch {
            let (i, m) = self.row(b);
            ids.extend_from_slice(&i[..used]);
            mask.extend_from_slice(&m[..used]);
        }
        TokenBatch {
            ids,
            mask,
            batch: self.batch,
            len: used,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trim_keeps_longest_row() {
        let v = Vocab::build(["a b c d"], 1, 10).unwrap();
        let b = TokenBatch::encode(&v, &["a", "a b c"], 10).unwrap();
        let t = b.trimmed();
        assert_eq!(t.len, 5);
        assert_eq!(t.row(1).0, &b.row(1).0[..5]);
        assert_eq!(t.select(&[1, 0]).row(0), t.row(1));
    }
}

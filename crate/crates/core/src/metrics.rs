//! Classification metrics over a confusion matrix. Rows are actual classes,
//! columns are predicted classes.

use crate::error::{Error, Result};

pub type Confusion = Vec<Vec<u64>>;

pub fn confusion(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Confusion> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            op: "confusion",
            lhs: vec![actual.len()],
            rhs: vec![predicted.len()],
        });
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&a, &p) in actual.iter().zip(predicted) {
        for i in [a, p] {
            if i >= classes {
                return Err(Error::Index {
                    what: "class",
                    index: i,
                    bound: classes,
                });
            }
        }
        m[a][p] += 1;
    }
    Ok(m)
}

fn order(m: &[Vec<u64>]) -> Result<usize> {
    let n = m.len();
    match m.iter().find(|row| row.len() != n) {
        Some(row) => Err(Error::Dimension {
            op: "confusion matrix must be square",
            lhs: vec![n, row.len()],
            rhs: vec![n, n],
        }),
        None => Ok(n),
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn per_class_f1(m: &[Vec<u64>]) -> Result<Vec<f64>> {
    let n = order(m)?;
    Ok((0..n)
        .map(|c| {
            let tp = m[c][c];
            let actual: u64 = m[c].iter().sum();
            let predicted: u64 = m.iter().map(|row| row[c]).sum();
            f1(tp, predicted - tp, actual - tp)
        })
        .collect())
}

pub fn macro_f1(m: &[Vec<u64>]) -> Result<f64> {
    let per = per_class_f1(m)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Pools true/false positives over classes. With one label per example this
/// coincides with accuracy.
pub fn micro_f1(m: &[Vec<u64>]) -> Result<f64> {
    let n = order(m)?;
    let tp: u64 = (0..n).map(|c| m[c][c]).sum();
    let total: u64 = m.iter().flatten().sum();
    Ok(f1(tp, total - tp, total - tp))
}

pub fn accuracy(m: &[Vec<u64>]) -> Result<f64> {
    let n = order(m)?;
    let total: u64 = m.iter().flatten().sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok((0..n).map(|c| m[c][c]).sum::<u64>() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let m = vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]];
        assert_eq!(macro_f1(&m).unwrap(), 1.0);
        assert_eq!(micro_f1(&m).unwrap(), 1.0);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
    }

    #[test]
    fn two_class_half() {
        assert_eq!(macro_f1(&[vec![1, 1], vec![1, 1]]).unwrap(), 0.5);
    }

    #[test]
    fn constant_predictor() {
        let m = confusion(4, &[0, 0, 1, 1, 2, 2, 3, 3], &[0; 8]).unwrap();
        assert_eq!(accuracy(&m).unwrap(), 0.25);
        let per = per_class_f1(&m).unwrap();
        assert!((per[0] - 0.4).abs() < 1e-15);
        assert_eq!(&per[1..], &[0.0, 0.0, 0.0]);
        assert!((macro_f1(&m).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            macro_f1(&[vec![1, 2, 3], vec![0, 1, 2]]),
            Err(Error::Dimension { .. })
        ));
        assert!(accuracy(&[vec![1], vec![1, 2]]).is_err());
    }

    #[test]
    fn confusion_rows_count_actuals() {
        let m = confusion(3, &[0, 1, 2, 2], &[1, 1, 2, 0]).unwrap();
        assert_eq!(m, vec![vec![0, 1, 0], vec![0, 1, 0], vec![1, 0, 1]]);
        assert!(confusion(2, &[0, 2], &[0, 0]).is_err());
    }
}

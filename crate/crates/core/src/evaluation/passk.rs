use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Per test id, one boolean per sample in sample order; `true` means every
/// test statement passed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMatrix {
    pub rows: BTreeMap<String, Vec<bool>>,
}

impl VerdictMatrix {
    pub fn from_rows<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<bool>)>,
        S: Into<String>,
    {
        VerdictMatrix {
            rows: rows.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Fraction of tests for which any of the first `k` samples passed.
pub fn pass_at_k(verdicts: &VerdictMatrix, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if verdicts.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let mut solved = 0usize;
    for (id, row) in &verdicts.rows {
        if row.len() < k {
            return Err(EvalError::KTooLarge {
                k,
                len: row.len(),
                test_id: id.clone(),
            });
        }
        if row[..k].iter().any(|&v| v) {
            solved += 1;
        }
    }
    Ok(solved as f64 / verdicts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed() -> VerdictMatrix {
        VerdictMatrix::from_rows([
            ("a", vec![true, false]),
            ("b", vec![false, true]),
            ("c", vec![false, false]),
            ("d", vec![true, true]),
        ])
    }

    #[test]
    fn hand_counted() {
        assert_eq!(pass_at_k(&fixed(), 1).unwrap(), 0.5);
        assert_eq!(pass_at_k(&fixed(), 2).unwrap(), 0.75);
    }

    #[test]
    fn all_true_is_one() {
        let m = VerdictMatrix::from_rows((0..7).map(|i| (format!("t{i}"), vec![true; 5])));
        for k in 1..=5 {
            assert_eq!(pass_at_k(&m, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pass_at_k(&fixed(), 3),
            Err(EvalError::KTooLarge { k: 3, len: 2, .. })
        ));
        assert!(matches!(pass_at_k(&fixed(), 0), Err(EvalError::ZeroK)));
        assert!(matches!(
            pass_at_k(&VerdictMatrix::default(), 1),
            Err(EvalError::EmptyMatrix)
        ));
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<bool>>> {
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), 5), 1..20)
    }

    proptest! {
        #[test]
        fn monotone_bounded_and_brute_forced(rows in matrix()) {
            let m = VerdictMatrix::from_rows(rows.iter().enumerate().map(|(i, r)| (format!("t{i:02}"), r.clone())));
            let mut prev = 0.0;
            for k in 1..=5 {
                let p = pass_at_k(&m, k).unwrap();
                let brute = rows.iter().filter(|r| r.iter().take(k).any(|&v| v)).count() as f64 / rows.len() as f64;
                prop_assert!((p - brute).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(p >= prev);
                prev = p;
            }
        }

        #[test]
        fn permutation_invariant(rows in matrix(), shift in 0usize..20) {
            let a = VerdictMatrix::from_rows(rows.iter().enumerate().map(|(i, r)| (format!("t{i:02}"), r.clone())));
            let n = rows.len();
            let b = VerdictMatrix::from_rows(rows.iter().enumerate().map(|(i, r)| (format!("t{:02}", (i + shift) % n), r.clone())));
            for k in 1..=5 {
                prop_assert_eq!(pass_at_k(&a, k).unwrap(), pass_at_k(&b, k).unwrap());
            }
        }
    }
}

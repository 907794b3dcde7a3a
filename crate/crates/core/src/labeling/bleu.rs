//! Smoothed sentence-level BLEU-4.

use std::collections::HashMap;

pub const BLEU_SMOOTHING: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Geometric mean of clipped n-gram precisions (n = 1..4), each smoothed as
/// `(matches + eps) / (hyp_ngrams + eps)`, times the brevity penalty
/// `min(1, exp(1 - ref_len / hyp_len))`. An empty hypothesis scores 0.
pub fn bleu4(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp = ngram_counts(hypothesis, n);
        let refc = ngram_counts(reference, n);
        let total: usize = hyp.values().sum();
        let matched: usize = hyp
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        log_sum += ((matched as f64 + BLEU_SMOOTHING) / (total as f64 + BLEU_SMOOTHING)).ln();
    }
    let bp = (1.0 - reference.len() as f64 / hypothesis.len() as f64).exp().min(1.0);
    (bp * (log_sum / 4.0).exp()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::tokenize;

    #[test]
    fn identical_is_one() {
        let t = tokenize("def f(x): return x + 1");
        assert!((bleu4(&t, &t) - 1.0).abs() < 1e-12);
        let short = tokenize("x y");
        assert!((bleu4(&short, &short) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_hits_smoothing_floor() {
        let h = tokenize("a b c d");
        let r = tokenize("w x y z");
        let floor = [4.0, 3.0, 2.0, 1.0]
            .iter()
            .map(|c: &f64| (BLEU_SMOOTHING / (c + BLEU_SMOOTHING)).ln())
            .sum::<f64>();
        let expect = (floor / 4.0).exp();
        assert!((bleu4(&h, &r) - expect).abs() < 1e-18);
        assert!(bleu4(&h, &r) < 1e-8);
    }

    #[test]
    fn empty_hypothesis_is_zero() {
        assert_eq!(bleu4(&[], &tokenize("a")), 0.0);
    }
}

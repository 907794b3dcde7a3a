use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{pass_at_k, EvalError, VerdictMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    /// k to Pass@k, averaged over runs.
    pub pass_at: BTreeMap<usize, f64>,
    pub n_test: usize,
    pub runs: usize,
    /// Digest of the sorted test ids, used to detect mismatched comparisons.
    pub test_digest: String,
    pub config: serde_json::Value,
}

pub fn test_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let sorted: BTreeSet<&str> = ids.into_iter().collect();
    let mut h = Sha256::new();
    for id in sorted {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl EvalReport {
    /// Pass@k for every k, averaged across runs over the same tests.
    pub fn from_runs(
        strategy: &str,
        runs: &[VerdictMatrix],
        ks: &[usize],
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let first = runs.first().ok_or(EvalError::EmptyMatrix)?;
        for run in runs {
            if run.rows.keys().ne(first.rows.keys()) {
                return Err(EvalError::Io("runs cover different test sets".into()));
            }
        }
        let mut pass_at = BTreeMap::new();
        for &k in ks {
            let mut total = 0.0;
            for run in runs {
                total += pass_at_k(run, k)?;
            }
            pass_at.insert(k, total / runs.len() as f64);
        }
        Ok(EvalReport {
            strategy: strategy.to_string(),
            pass_at,
            n_test: first.len(),
            runs: runs.len(),
            test_digest: test_digest(first.rows.keys().map(String::as_str)),
            config,
        })
    }

    /// Whether Pass@k decreases anywhere as k grows.
    pub fn is_monotone(&self) -> bool {
        let values: Vec<f64> = self.pass_at.values().copied().collect();
        values.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub pass_at: BTreeMap<usize, f64>,
    /// Percent change over the baseline; `None` where the baseline is zero
    /// or lacks that k.
    pub relative_improvement: BTreeMap<usize, Option<f64>>,
    pub monotone: bool,
    pub test_set_matches_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub ks: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
    pub test_set_mismatch: bool,
    pub table: String,
}

/// Tabulates reports side by side with relative improvement over `baseline`
/// (default: `random` when present, else the first report).
pub fn compare_report(reports: &[EvalReport], baseline: Option<&str>) -> Result<Comparison, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let base = match baseline {
        Some(name) => reports
            .iter()
            .find(|r| r.strategy == name)
            .ok_or_else(|| EvalError::Io(format!("baseline `{name}` is not among the reports")))?,
        None => reports.iter().find(|r| r.strategy == "random").unwrap_or(&reports[0]),
    };
    let ks: Vec<usize> = reports
        .iter()
        .flat_map(|r| r.pass_at.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            strategy: r.strategy.clone(),
            pass_at: r.pass_at.clone(),
            relative_improvement: ks
                .iter()
                .map(|k| {
                    let change = match (r.pass_at.get(k), base.pass_at.get(k)) {
                        (Some(v), Some(b)) if *b > 0.0 => Some((v - b) / b * 100.0),
                        _ => None,
                    };
                    (*k, change)
                })
                .collect(),
            monotone: r.is_monotone(),
            test_set_matches_baseline: r.test_digest == base.test_digest && r.n_test == base.n_test,
        })
        .collect();
    let test_set_mismatch = rows.iter().any(|r| !r.test_set_matches_baseline);
    let table = render_table(&rows, &ks, &base.strategy);
    Ok(Comparison {
        baseline: base.strategy.clone(),
        ks,
        rows,
        test_set_mismatch,
        table,
    })
}

fn render_table(rows: &[ComparisonRow], ks: &[usize], baseline: &str) -> String {
    let mut header = vec!["strategy".to_string()];
    header.extend(ks.iter().map(|k| format!("Pass@{k}")));
    header.extend(ks.iter().map(|k| format!("vs {baseline} @{k}")));
    header.push("flags".into());

    let mut cells: Vec<Vec<String>> = vec![header];
    for r in rows {
        let mut line = vec![r.strategy.clone()];
        line.extend(
            ks.iter()
                .map(|k| r.pass_at.get(k).map_or("-".into(), |v| format!("{:.2}", v * 100.0))),
        );
        line.extend(
            ks.iter()
                .map(|k| match r.relative_improvement.get(k).copied().flatten() {
                    Some(v) => format!("{v:+.2}%"),
                    None => "-".into(),
                }),
        );
        let mut flags = Vec::new();
        if !r.monotone {
            flags.push("non-monotone");
        }
        if !r.test_set_matches_baseline {
            flags.push("test-set-mismatch");
        }
        line.push(flags.join(","));
        cells.push(line);
    }

    let columns = cells[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(strategy: &str, values: &[(usize, f64)], ids: &[&str]) -> EvalReport {
        EvalReport {
            strategy: strategy.into(),
            pass_at: values.iter().copied().collect(),
            n_test: ids.len(),
            runs: 1,
            test_digest: test_digest(ids.iter().copied()),
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn single_report_single_row() {
        let c = compare_report(&[report("a", &[(1, 0.3)], &["x"])], None).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.table.lines().count(), 2);
    }

    #[test]
    fn relative_improvement_arithmetic() {
        let reports = [
            report("random", &[(1, 0.40)], &["x"]),
            report("trained", &[(1, 0.50)], &["x"]),
        ];
        let c = compare_report(&reports, None).unwrap();
        let imp = c.rows[1].relative_improvement[&1].unwrap();
        assert!((imp - 25.0).abs() < 1e-9);
        assert!(c.table.contains("+25.00%"));
        assert!(!c.test_set_mismatch);
    }

    #[test]
    fn flags_non_monotone_and_mismatched() {
        let reports = [
            report("random", &[(1, 0.4), (5, 0.6)], &["x", "y"]),
            report("odd", &[(1, 0.7), (5, 0.5)], &["x", "z"]),
        ];
        let c = compare_report(&reports, Some("random")).unwrap();
        assert!(c.rows[0].monotone);
        assert!(!c.rows[1].monotone);
        assert!(c.test_set_mismatch);
        assert!(c.table.contains("non-monotone"));
        assert!(c.table.contains("test-set-mismatch"));
        assert!(compare_report(&reports, Some("nope")).is_err());
        assert!(matches!(compare_report(&[], None), Err(EvalError::NoReports)));
    }

    #[test]
    fn averaging_runs() {
        let a = VerdictMatrix::from_rows([("x", vec![true, false]), ("y", vec![false, false])]);
        let b = VerdictMatrix::from_rows([("x", vec![false, false]), ("y", vec![false, true])]);
        let r = EvalReport::from_runs("s", &[a.clone(), b], &[1, 2], serde_json::Value::Null).unwrap();
        assert_eq!(r.pass_at[&1], 0.25);
        assert_eq!(r.pass_at[&2], 0.5);
        assert_eq!(r.runs, 2);
        let c = VerdictMatrix::from_rows([("q", vec![true, true])]);
        assert!(EvalReport::from_runs("s", &[a, c], &[1], serde_json::Value::Null).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let r = report("s", &[(1, 0.25), (3, 0.5)], &["a"]);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"pass_at\":{\"1\":0.25,\"3\":0.5}"));
        assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), r);
    }
}

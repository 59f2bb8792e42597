//! Published reference tables, bundled as CSV, and helpers to rerun the
//! statistical machinery on them.

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::select::{parse_selection_rows, SelectionReport};
use crate::stats::{bonferroni_threshold, clamped_fisher_composite};

/// Per-training-domain correlation of each metric with MAE.
pub const REFERENCE_CORRELATIONS: &str = include_str!("../fixtures/reference_correlations.csv");
/// Per-test-domain selection errors and improvements, mean ± ci over folds.
pub const REFERENCE_SELECTION: &str = include_str!("../fixtures/reference_selection.csv");

pub const CORRELATIONS_FILE: &str = "reference_correlations.csv";
pub const SELECTION_FILE: &str = "reference_selection.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCorrelations {
    pub domains: Vec<String>,
    /// One column of r values per metric, in file order.
    pub columns: Vec<(MetricKind, Vec<f64>)>,
}

impl ReferenceCorrelations {
    /// Header: `train_domain,<slug>_r,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty correlation file".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("train_domain") {
            return Err(Error::Csv(format!("unexpected correlation header '{header}'")));
        }
        let kinds = cols
            .map(|c| {
                c.strip_suffix("_r")
                    .ok_or_else(|| Error::Csv(format!("column '{c}' is not an r column")))?
                    .parse::<MetricKind>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut domains = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != kinds.len() + 1 {
                return Err(Error::Csv(format!(
                    "line {}: expected {} columns",
                    i + 2,
                    kinds.len() + 1
                )));
            }
            if cells[0] == "Composite" {
                continue;
            }
            domains.push(cells[0].to_string());
            for (col, s) in values.iter_mut().zip(&cells[1..]) {
                col.push(
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Csv(format!("line {}: {e}", i + 2)))?,
                );
            }
        }
        Ok(Self {
            domains,
            columns: kinds.into_iter().zip(values).collect(),
        })
    }

    pub fn column(&self, kind: MetricKind) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.as_slice())
    }

    /// `metric,composite_r,bonferroni_threshold` for every column.
    pub fn composite_csv(&self, alpha: f64) -> Result<String> {
        let threshold = bonferroni_threshold(alpha, self.domains.len())?;
        let mut out = String::from("metric,composite_r,bonferroni_threshold\n");
        for (kind, rs) in &self.columns {
            let (c, _) = clamped_fisher_composite(rs)?;
            out.push_str(&format!("{kind},{c:.6},{threshold:.6}\n"));
        }
        Ok(out)
    }
}

/// Rebuilds the selection summary from published per-domain rows.
pub fn reference_selection_report(text: &str) -> Result<SelectionReport> {
    SelectionReport::from_domain_rows(parse_selection_rows(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_parse() {
        let c = ReferenceCorrelations::parse(REFERENCE_CORRELATIONS).unwrap();
        assert_eq!(c.domains.len(), 21);
        assert_eq!(c.columns.len(), 3);
        assert_eq!(c.column(MetricKind::DsDiff).unwrap()[0], 0.769);
        let rep = reference_selection_report(REFERENCE_SELECTION).unwrap();
        assert_eq!(rep.rows.len(), 21);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(ReferenceCorrelations::parse("domain,a\n").is_err());
        assert!(ReferenceCorrelations::parse("train_domain,bogus_r\n").is_err());
    }
}

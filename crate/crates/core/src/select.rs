//! Ground-truth-free model selection by minimum DS-diff, with worst / average /
//! best baselines, percent improvements and residuals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cka::CkaConfig;
use crate::error::{Error, Result};
use crate::metrics::{ds_diff, MetricKind, MetricTable};
use crate::stats::{ci95_or_point, MeanCi};
use crate::tensorio::ActivationSet;

/// Index of the smallest score; ties go to the lowest index.
pub fn select_model_dsdiff(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Selection("no candidate models".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Selection(format!("candidate {i} has an undefined DS-diff")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// A candidate model seen through its activations on its own training data
/// and on the unlabeled target data.
pub struct Candidate<'a> {
    pub on_train: &'a ActivationSet,
    pub on_target: &'a ActivationSet,
}

/// Scores every candidate by DS-diff and returns the chosen index and the scores.
pub fn select_by_activations(candidates: &[Candidate<'_>], cfg: CkaConfig) -> Result<(usize, Vec<f64>)> {
    let scores = candidates
        .iter()
        .map(|c| ds_diff(c.on_train, c.on_target, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((select_model_dsdiff(&scores)?, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub worst: f64,
    pub average: f64,
    pub best: f64,
}

/// (max, mean, min) of candidate errors.
pub fn baselines(mae: &[f64]) -> Result<Baselines> {
    if mae.is_empty() {
        return Err(Error::Selection("baselines need at least one candidate".into()));
    }
    Ok(Baselines {
        worst: mae.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        average: mae.iter().sum::<f64>() / mae.len() as f64,
        best: mae.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// `(baseline - achieved) / baseline`; negative means worse than the baseline.
pub fn percent_improvement(baseline: f64, achieved: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(Error::Domain(format!(
            "percent improvement over baseline {baseline} is undefined"
        )));
    }
    Ok((baseline - achieved) / baseline)
}

/// One value per baseline, ordered worst, average, best.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsBaselines {
    pub worst: f64,
    pub average: f64,
    pub best: f64,
}

impl VsBaselines {
    pub fn as_array(&self) -> [f64; 3] {
        [self.worst, self.average, self.best]
    }

    /// A zero baseline leaves that improvement undefined (NaN).
    fn improvements(b: &Baselines, achieved: f64) -> Self {
        let pct = |base: f64| {
            percent_improvement(base, achieved).unwrap_or_else(|e| {
                log::warn!("{e}");
                f64::NAN
            })
        };
        Self {
            worst: pct(b.worst),
            average: pct(b.average),
            best: pct(b.best),
        }
    }

    fn residuals(b: &Baselines, achieved: f64) -> Self {
        Self {
            worst: achieved - b.worst,
            average: achieved - b.average,
            best: achieved - b.best,
        }
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("median of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Median over domains of `achieved - baseline` for each baseline.
pub fn residual_medians(per_domain: &[(f64, Baselines)]) -> Result<VsBaselines> {
    if per_domain.is_empty() {
        return Err(Error::Selection("residuals need at least one domain".into()));
    }
    let res: Vec<VsBaselines> = per_domain
        .iter()
        .map(|(a, b)| VsBaselines::residuals(b, *a))
        .collect();
    Ok(VsBaselines {
        worst: median(&res.iter().map(|r| r.worst).collect::<Vec<_>>())?,
        average: median(&res.iter().map(|r| r.average).collect::<Vec<_>>())?,
        best: median(&res.iter().map(|r| r.best).collect::<Vec<_>>())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub test_domain: String,
    pub fold: usize,
    pub candidates: Vec<String>,
    pub chosen: String,
    pub chosen_mae: f64,
    pub baselines: Baselines,
    pub improvements: VsBaselines,
    pub residuals: VsBaselines,
}

impl SelectionResult {
    /// Picks among `candidates` by `scores` and evaluates the choice with `mae`.
    pub fn evaluate(
        test_domain: &str,
        fold: usize,
        candidates: Vec<String>,
        scores: &[f64],
        mae: &[f64],
    ) -> Result<Self> {
        if scores.len() != candidates.len() || mae.len() != candidates.len() {
            return Err(Error::Selection(format!(
                "{} candidates, {} scores, {} errors",
                candidates.len(),
                scores.len(),
                mae.len()
            )));
        }
        let i = select_model_dsdiff(scores)?;
        let b = baselines(mae)?;
        Ok(Self {
            test_domain: test_domain.to_string(),
            fold,
            chosen: candidates[i].clone(),
            candidates,
            chosen_mae: mae[i],
            improvements: VsBaselines::improvements(&b, mae[i]),
            residuals: VsBaselines::residuals(&b, mae[i]),
            baselines: b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Each fold's models are chosen by that fold's DS-diff.
    #[default]
    PerFold,
    /// One training domain per target, chosen by fold-averaged DS-diff.
    FoldAveraged,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-fold" => Ok(Self::PerFold),
            "fold-averaged" => Ok(Self::FoldAveraged),
            _ => Err(Error::Config(format!("unknown selection mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectOptions {
    /// Let a target's own training-domain model compete (it always wins on DS-diff).
    pub include_self: bool,
    pub mode: SelectionMode,
}

/// Runs selection for every (target, fold) of two aligned tables.
pub fn select_from_tables(
    ds_diff: &MetricTable,
    mae: &MetricTable,
    opts: SelectOptions,
) -> Result<Vec<SelectionResult>> {
    if ds_diff.kind() != MetricKind::DsDiff || mae.kind() != MetricKind::Mae {
        return Err(Error::Selection(format!(
            "expected DS-diff and MAE tables, got {} and {}",
            ds_diff.kind(),
            mae.kind()
        )));
    }
    if ds_diff.domains() != mae.domains() || ds_diff.fold_count() != mae.fold_count() {
        return Err(Error::Selection(
            "DS-diff and MAE tables cover different domains or folds".into(),
        ));
    }
    let domains = ds_diff.domains();
    let folds = ds_diff.fold_count();
    let averaged = ds_diff.fold_mean();
    let mut out = Vec::with_capacity(domains.len() * folds);
    for (y, target) in domains.iter().enumerate() {
        let pool: Vec<usize> = (0..domains.len())
            .filter(|&x| opts.include_self || x != y)
            .collect();
        if pool.is_empty() {
            return Err(Error::Selection(format!(
                "no candidate models for target {target}"
            )));
        }
        for f in 0..folds {
            let scores: Vec<f64> = pool
                .iter()
                .map(|&x| match opts.mode {
                    SelectionMode::PerFold => ds_diff.get(x, y, f),
                    SelectionMode::FoldAveraged => averaged[x][y],
                })
                .collect();
            let errors: Vec<f64> = pool.iter().map(|&x| mae.get(x, y, f)).collect();
            let names = pool.iter().map(|&x| domains[x].clone()).collect();
            out.push(SelectionResult::evaluate(target, f, names, &scores, &errors)?);
        }
    }
    Ok(out)
}

/// Per-domain row of the selection table; each cell is a mean over folds.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub test_domain: String,
    pub worst: MeanCi,
    pub average: MeanCi,
    pub best: MeanCi,
    pub ds_diff: MeanCi,
    pub pct_over_worst: MeanCi,
    pub pct_over_average: MeanCi,
    pub pct_over_best: MeanCi,
}

impl SelectionRow {
    fn cells(&self) -> [MeanCi; 7] {
        [
            self.worst,
            self.average,
            self.best,
            self.ds_diff,
            self.pct_over_worst,
            self.pct_over_average,
            self.pct_over_best,
        ]
    }

    fn from_cells(name: &str, c: [MeanCi; 7]) -> Self {
        Self {
            test_domain: name.to_string(),
            worst: c[0],
            average: c[1],
            best: c[2],
            ds_diff: c[3],
            pct_over_worst: c[4],
            pct_over_average: c[5],
            pct_over_best: c[6],
        }
    }

    fn baselines(&self) -> Baselines {
        Baselines {
            worst: self.worst.mean,
            average: self.average.mean,
            best: self.best.mean,
        }
    }
}

pub const AVERAGE_ROW: &str = "Average";

const CSV_HEADER: &str =
    "test_domain,worst,average,best,ds_diff,pct_over_worst,pct_over_average,pct_over_best";

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
    pub average: SelectionRow,
    /// Medians over domains of (DS-diff MAE - baseline MAE), using fold means.
    pub residual_medians: VsBaselines,
}

fn result_cells(r: &SelectionResult) -> [f64; 7] {
    [
        r.baselines.worst,
        r.baselines.average,
        r.baselines.best,
        r.chosen_mae,
        r.improvements.worst,
        r.improvements.average,
        r.improvements.best,
    ]
}

/// Undefined (NaN) entries are skipped; a column with none defined stays NaN.
fn column_ci(per_fold: &[[f64; 7]]) -> Result<[MeanCi; 7]> {
    let mut out = [MeanCi::point(f64::NAN); 7];
    for (c, cell) in out.iter_mut().enumerate() {
        let col: Vec<f64> = per_fold.iter().map(|v| v[c]).filter(|v| !v.is_nan()).collect();
        if !col.is_empty() {
            *cell = ci95_or_point(&col)?;
        }
    }
    Ok(out)
}

fn nan_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Aggregates a complete (domain, fold) grid of results.
///
/// Domain rows average over folds. The average row first averages over
/// domains within each fold, then takes the interval across folds.
pub fn selection_report(results: &[SelectionResult]) -> Result<SelectionReport> {
    if results.is_empty() {
        return Err(Error::Selection("no selection results".into()));
    }
    let mut domains: Vec<&str> = Vec::new();
    let mut folds: Vec<usize> = Vec::new();
    let mut grid: BTreeMap<(&str, usize), &SelectionResult> = BTreeMap::new();
    for r in results {
        if !domains.contains(&r.test_domain.as_str()) {
            domains.push(&r.test_domain);
        }
        if !folds.contains(&r.fold) {
            folds.push(r.fold);
        }
        if grid.insert((&r.test_domain, r.fold), r).is_some() {
            return Err(Error::Selection(format!(
                "duplicate result for ({}, fold {})",
                r.test_domain, r.fold
            )));
        }
    }
    folds.sort_unstable();
    let missing: Vec<String> = domains
        .iter()
        .flat_map(|d| folds.iter().map(move |f| (*d, *f)))
        .filter(|k| !grid.contains_key(k))
        .map(|(d, f)| format!("({d}, fold {f})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage {
            what: "selection results".into(),
            missing,
        });
    }

    let mut rows = Vec::with_capacity(domains.len());
    for d in &domains {
        let per_fold: Vec<[f64; 7]> = folds.iter().map(|f| result_cells(grid[&(*d, *f)])).collect();
        rows.push(SelectionRow::from_cells(d, column_ci(&per_fold)?));
    }
    let fold_avgs: Vec<[f64; 7]> = folds
        .iter()
        .map(|f| {
            let cells: Vec<[f64; 7]> = domains.iter().map(|d| result_cells(grid[&(*d, *f)])).collect();
            std::array::from_fn(|c| nan_mean(cells.iter().map(|v| v[c])))
        })
        .collect();
    let average = SelectionRow::from_cells(AVERAGE_ROW, column_ci(&fold_avgs)?);
    let residual_medians = medians_of_rows(&rows)?;
    Ok(SelectionReport {
        rows,
        average,
        residual_medians,
    })
}

fn medians_of_rows(rows: &[SelectionRow]) -> Result<VsBaselines> {
    let pairs: Vec<(f64, Baselines)> = rows.iter().map(|r| (r.ds_diff.mean, r.baselines())).collect();
    residual_medians(&pairs)
}

impl SelectionReport {
    /// Builds a report from already fold-averaged domain rows, e.g. a published table.
    /// The average row is the column-wise mean of the row means.
    pub fn from_domain_rows(rows: Vec<SelectionRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Selection("no domain rows".into()));
        }
        let cells: Vec<[MeanCi; 7]> = rows.iter().map(SelectionRow::cells).collect();
        let means: [f64; 7] = std::array::from_fn(|c| nan_mean(cells.iter().map(|v| v[c].mean)));
        let average = SelectionRow::from_cells(AVERAGE_ROW, means.map(MeanCi::point));
        let residual_medians = medians_of_rows(&rows)?;
        Ok(Self {
            rows,
            average,
            residual_medians,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            out.push_str(&r.test_domain);
            for c in r.cells() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Average error per selection case across all targets.
    pub fn summary_csv(&self) -> String {
        let a = &self.average;
        format!(
            "case,average_mae\nWorst,{}\nAverage,{}\nBest,{}\nDS-diff,{}\n",
            a.worst, a.average, a.best, a.ds_diff
        )
    }

    pub fn residuals_csv(&self) -> String {
        let m = self.residual_medians;
        format!(
            "baseline,median_residual_bpm\nworst,{:.3}\naverage,{:.3}\nbest,{:.3}\n",
            m.worst, m.average, m.best
        )
    }
}

/// Parses domain rows in the [`SelectionReport::to_csv`] layout. An `Average`
/// row, if present, is ignored.
pub fn parse_selection_rows(text: &str) -> Result<Vec<SelectionRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Csv(format!("unexpected selection header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Csv(format!("line {}: expected 8 columns", i + 2)));
        }
        if cols[0] == AVERAGE_ROW {
            continue;
        }
        let mut cells = [MeanCi::point(0.0); 7];
        for (c, s) in cells.iter_mut().zip(&cols[1..]) {
            *c = s.parse()?;
        }
        rows.push(SelectionRow::from_cells(cols[0], cells));
    }
    Ok(rows)
}

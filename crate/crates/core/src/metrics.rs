//! Domain-shift metrics built from CKA maps, and cross-domain metric tables.
//!
//! * DS-diff: mean absolute difference between the self-similarity map of
//!   model `m_x` on its training domain and on the target domain. Needs no
//!   ground truth for the target.
//! * DS-sim: mean diagonal of the map comparing `m_x` on the two domains.
//! * Model-sim: mean diagonal of the map comparing `m_x` and `m_y` on the target.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cka::{cka_map, CkaConfig, CkaMap};
use crate::error::{Error, Result};
use crate::tensorio::ActivationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    DsDiff,
    DsSim,
    ModelSim,
    Mae,
}

impl MetricKind {
    pub const SIMILARITY_METRICS: [MetricKind; 3] =
        [MetricKind::DsDiff, MetricKind::DsSim, MetricKind::ModelSim];

    /// File-name friendly identifier.
    pub fn slug(self) -> &'static str {
        match self {
            MetricKind::DsDiff => "ds_diff",
            MetricKind::DsSim => "ds_sim",
            MetricKind::ModelSim => "model_sim",
            MetricKind::Mae => "mae",
        }
    }

    /// Larger values mean "more similar" rather than "more shifted".
    pub fn is_similarity(self) -> bool {
        matches!(self, MetricKind::DsSim | MetricKind::ModelSim)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::DsDiff => "DS-diff",
            MetricKind::DsSim => "DS-sim",
            MetricKind::ModelSim => "Model-sim",
            MetricKind::Mae => "MAE",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "ds-diff" | "dsdiff" => Ok(MetricKind::DsDiff),
            "ds-sim" | "dssim" => Ok(MetricKind::DsSim),
            "model-sim" | "modelsim" => Ok(MetricKind::ModelSim),
            "mae" => Ok(MetricKind::Mae),
            _ => Err(Error::Config(format!("unknown metric kind '{s}'"))),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// DS-diff from two precomputed self-similarity maps of the same model.
pub fn ds_diff_maps(on_source: &CkaMap, on_target: &CkaMap) -> Result<f64> {
    if on_source.dims() != on_target.dims() {
        return Err(Error::Architecture(format!(
            "self-similarity maps differ in shape: {:?} vs {:?}",
            on_source.dims(),
            on_target.dims()
        )));
    }
    let diffs: Vec<f64> = on_source
        .values()
        .iter()
        .zip(on_target.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(mean(&diffs))
}

/// DS-diff of one model's activations on its training domain and on a target domain.
/// The two sets may have different sample counts.
pub fn ds_diff(on_source: &ActivationSet, on_target: &ActivationSet, cfg: CkaConfig) -> Result<f64> {
    if on_source.layer_count() != on_target.layer_count() {
        return Err(Error::Architecture(format!(
            "{} layers vs {} layers",
            on_source.layer_count(),
            on_target.layer_count()
        )));
    }
    let a = cka_map(on_source, on_source, cfg)?;
    let b = cka_map(on_target, on_target, cfg)?;
    ds_diff_maps(&a, &b)
}

fn diag_mean(map: &CkaMap) -> f64 {
    mean(&map.diagonal())
}

/// Pairs samples by position after truncating both sets to the shorter length.
pub fn pair_truncated(a: &ActivationSet, b: &ActivationSet) -> (ActivationSet, ActivationSet) {
    let n = a.sample_count().min(b.sample_count());
    (a.truncated(n), b.truncated(n))
}

/// DS-sim of one model across two domains, pairing samples in order.
pub fn ds_sim(on_source: &ActivationSet, on_target: &ActivationSet, cfg: CkaConfig) -> Result<f64> {
    if on_source.layer_count() != on_target.layer_count() {
        return Err(Error::Architecture(format!(
            "{} layers vs {} layers",
            on_source.layer_count(),
            on_target.layer_count()
        )));
    }
    let n = on_source.sample_count().min(on_target.sample_count());
    if n < cfg.estimator.min_samples() {
        return Err(Error::Pairing(format!(
            "only {n} paired samples between {} and {}",
            on_source.dataset_id(),
            on_target.dataset_id()
        )));
    }
    let (a, b) = pair_truncated(on_source, on_target);
    Ok(diag_mean(&cka_map(&a, &b, cfg)?))
}

/// Model-sim of two same-architecture models on one dataset.
pub fn model_sim(x_on_target: &ActivationSet, y_on_target: &ActivationSet, cfg: CkaConfig) -> Result<f64> {
    if x_on_target.layer_count() != y_on_target.layer_count() {
        return Err(Error::Architecture(format!(
            "models {} and {} have {} and {} layers",
            x_on_target.model_id(),
            y_on_target.model_id(),
            x_on_target.layer_count(),
            y_on_target.layer_count()
        )));
    }
    Ok(diag_mean(&cka_map(x_on_target, y_on_target, cfg)?))
}

/// Values indexed by (train domain, test domain, fold).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    kind: MetricKind,
    domains: Vec<String>,
    fold_count: usize,
    values: Vec<f64>,
}

impl MetricTable {
    pub fn from_fn(
        kind: MetricKind,
        domains: Vec<String>,
        fold_count: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let d = domains.len();
        let mut values = Vec::with_capacity(d * d * fold_count);
        for x in 0..d {
            for y in 0..d {
                for k in 0..fold_count {
                    values.push(f(x, y, k));
                }
            }
        }
        Self {
            kind,
            domains,
            fold_count,
            values,
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    fn index(&self, x: usize, y: usize, fold: usize) -> usize {
        (x * self.domains.len() + y) * self.fold_count + fold
    }

    pub fn get(&self, x: usize, y: usize, fold: usize) -> f64 {
        self.values[self.index(x, y, fold)]
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == name)
    }

    /// `[train][test]` averaged over folds.
    pub fn fold_mean(&self) -> Vec<Vec<f64>> {
        let d = self.domains.len();
        (0..d)
            .map(|x| {
                (0..d)
                    .map(|y| {
                        (0..self.fold_count).map(|k| self.get(x, y, k)).sum::<f64>()
                            / self.fold_count as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// `train_domain,test_domain,fold,value`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("train_domain,test_domain,fold,value\n");
        for (x, dx) in self.domains.iter().enumerate() {
            for (y, dy) in self.domains.iter().enumerate() {
                for k in 0..self.fold_count {
                    out.push_str(&format!("{dx},{dy},{k},{}\n", self.get(x, y, k)));
                }
            }
        }
        out
    }

    /// Fold-mean matrix; rows are test domains, columns training domains.
    pub fn to_matrix_csv(&self) -> String {
        let m = self.fold_mean();
        let mut out = String::from("test_domain\\train_domain");
        for d in &self.domains {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (y, dy) in self.domains.iter().enumerate() {
            out.push_str(dy);
            for row in &m {
                out.push_str(&format!(",{:.6}", row[y]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`to_long_csv`](Self::to_long_csv) output. Domain order follows first appearance.
    pub fn from_long_csv(kind: MetricKind, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "train_domain,test_domain,fold,value" => {}
            other => return Err(Error::Csv(format!("unexpected metric table header {other:?}"))),
        }
        let mut domains: Vec<String> = Vec::new();
        let mut rows = Vec::new();
        let mut max_fold = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Csv(format!("line {}: expected 4 columns", i + 2)));
            }
            for name in &cols[..2] {
                if !domains.iter().any(|d| d == name) {
                    domains.push(name.to_string());
                }
            }
            let fold: usize = cols[2]
                .parse()
                .map_err(|e| Error::Csv(format!("line {}: {e}", i + 2)))?;
            let value: f64 = cols[3]
                .parse()
                .map_err(|e| Error::Csv(format!("line {}: {e}", i + 2)))?;
            max_fold = max_fold.max(fold);
            rows.push((cols[0].to_string(), cols[1].to_string(), fold, value));
        }
        let fold_count = max_fold + 1;
        let d = domains.len();
        let mut values = vec![f64::NAN; d * d * fold_count];
        for (x, y, k, v) in rows {
            let xi = domains.iter().position(|n| *n == x).expect("registered");
            let yi = domains.iter().position(|n| *n == y).expect("registered");
            values[(xi * d + yi) * fold_count + k] = v;
        }
        let mut missing = Vec::new();
        for (x, dx) in domains.iter().enumerate() {
            for (y, dy) in domains.iter().enumerate() {
                for k in 0..fold_count {
                    if values[(x * d + y) * fold_count + k].is_nan() {
                        missing.push(format!("({dx}, {dy}, fold {k})"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Coverage {
                what: format!("{kind} table cells"),
                missing,
            });
        }
        Ok(Self {
            kind,
            domains,
            fold_count,
            values,
        })
    }
}

/// Supplies activations of the model trained on `(model_domain, fold)` evaluated on `data_domain`.
pub trait ActivationSource: Sync {
    fn has_model(&self, domain: &str, fold: usize) -> bool;

    fn activations(&self, model_domain: &str, fold: usize, data_domain: &str) -> Result<Arc<ActivationSet>>;
}

/// Fills every (train, test, fold) cell of `kind` over `domains`.
pub fn metric_matrix(
    kind: MetricKind,
    domains: &[String],
    fold_count: usize,
    source: &dyn ActivationSource,
    cfg: CkaConfig,
) -> Result<MetricTable> {
    if kind == MetricKind::Mae {
        return Err(Error::Config(
            "MAE tables come from evaluation, not activation similarity".into(),
        ));
    }
    let missing: Vec<String> = domains
        .iter()
        .flat_map(|d| (0..fold_count).map(move |k| (d, k)))
        .filter(|(d, k)| !source.has_model(d, *k))
        .map(|(d, k)| format!("({d}, fold {k})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage {
            what: "trained models".into(),
            missing,
        });
    }

    let d = domains.len();
    let cells: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|x| (0..d).flat_map(move |y| (0..fold_count).map(move |k| (x, y, k))))
        .collect();

    let values: Vec<f64> = match kind {
        MetricKind::DsDiff => {
            // Self-similarity map of model (x, k) on every domain, computed once.
            let self_maps: Vec<CkaMap> = cells
                .par_iter()
                .map(|&(x, y, k)| {
                    let a = source.activations(&domains[x], k, &domains[y])?;
                    cka_map(&a, &a, cfg)
                })
                .collect::<Result<_>>()?;
            let at = |x: usize, y: usize, k: usize| &self_maps[(x * d + y) * fold_count + k];
            cells
                .iter()
                .map(|&(x, y, k)| ds_diff_maps(at(x, x, k), at(x, y, k)))
                .collect::<Result<_>>()?
        }
        MetricKind::DsSim => cells
            .par_iter()
            .map(|&(x, y, k)| {
                let a = source.activations(&domains[x], k, &domains[x])?;
                let b = source.activations(&domains[x], k, &domains[y])?;
                ds_sim(&a, &b, cfg)
            })
            .collect::<Result<_>>()?,
        MetricKind::ModelSim => cells
            .par_iter()
            .map(|&(x, y, k)| {
                let a = source.activations(&domains[x], k, &domains[y])?;
                let b = source.activations(&domains[y], k, &domains[y])?;
                model_sim(&a, &b, cfg)
            })
            .collect::<Result<_>>()?,
        MetricKind::Mae => unreachable!(),
    };

    let mut it = values.into_iter();
    Ok(MetricTable::from_fn(kind, domains.to_vec(), fold_count, |_, _, _| {
        it.next().expect("one value per cell")
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::LayerActivations;

    fn set(model: &str, data: &str, seed: u32, n: usize) -> ActivationSet {
        let layers = (0..3)
            .map(|l| {
                let vals = (0..n * 4)
                    .map(|i| {
                        let t = (i as f32 + 1.0) * (seed as f32 + 1.3) * (l as f32 + 0.7);
                        (t * 0.37).sin() + (t * 0.11).cos()
                    })
                    .collect();
                LayerActivations::new(format!("l{l}"), n, 4, vals).unwrap()
            })
            .collect();
        ActivationSet::new(model, data, layers).unwrap()
    }

    #[test]
    fn ds_diff_zero_on_identical_data() {
        let a = set("m", "d", 1, 64);
        assert_eq!(ds_diff(&a, &a.clone(), CkaConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn ds_diff_accepts_unequal_sample_counts() {
        let a = set("m", "d", 1, 64);
        let b = set("m", "e", 2, 80);
        let cfg = CkaConfig::full_batch(crate::cka::Estimator::Biased);
        let v = ds_diff(&a, &b, cfg).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn ds_sim_and_model_sim_self() {
        let a = set("m", "d", 3, 100);
        let cfg = CkaConfig::default();
        assert!((ds_sim(&a, &a, cfg).unwrap() - 1.0).abs() < 1e-6);
        assert!((model_sim(&a, &a, cfg).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn model_sim_architecture_mismatch() {
        let a = set("m", "d", 3, 16);
        let b = ActivationSet::new("m2", "d", vec![a.layers()[0].clone()]).unwrap();
        assert!(matches!(
            model_sim(&a, &b, CkaConfig::default()),
            Err(Error::Architecture(_))
        ));
    }

    #[test]
    fn ds_sim_pairing_error() {
        let a = set("m", "d", 3, 16);
        let b = set("m", "e", 3, 2);
        assert!(matches!(
            ds_sim(&a, &b, CkaConfig::default()),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn table_layout_and_csv() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let t = MetricTable::from_fn(MetricKind::Mae, domains, 3, |x, y, k| {
            (x * 100 + y * 10 + k) as f64
        });
        assert_eq!(t.cell_count(), 12);
        assert_eq!(t.get(1, 0, 2), 102.0);
        assert_eq!(t.fold_mean()[0][1], 11.0);
        let back = MetricTable::from_long_csv(MetricKind::Mae, &t.to_long_csv()).unwrap();
        assert_eq!(back, t);
        let m = t.to_matrix_csv();
        assert!(m.starts_with("test_domain\\train_domain,a,b\n"));
        assert!(m.contains("\nb,11.000000,111.000000\n"));
    }

    #[test]
    fn incomplete_long_csv_is_a_coverage_error() {
        let text = "train_domain,test_domain,fold,value\na,a,0,1\na,b,0,2\nb,a,0,3\n";
        assert!(matches!(
            MetricTable::from_long_csv(MetricKind::DsDiff, text),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn kind_names() {
        for k in [
            MetricKind::DsDiff,
            MetricKind::DsSim,
            MetricKind::ModelSim,
            MetricKind::Mae,
        ] {
            assert_eq!(k.to_string().parse::<MetricKind>().unwrap(), k);
            assert_eq!(k.slug().parse::<MetricKind>().unwrap(), k);
        }
    }
}

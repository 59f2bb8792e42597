//! End-to-end synthetic experiment: generate domains, train one model per
//! (domain, fold), evaluate cross-domain MAE, compute the shift metrics,
//! correlate them with MAE and run DS-diff model selection.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hr::{mae, stft_hr, BvpSeries, StftParams};
use crate::metrics::{metric_matrix, ActivationSource, MetricKind, MetricTable};
use crate::select::{select_from_tables, selection_report, SelectionReport, SelectionResult};
use crate::stats::{correlate_metric_vs_mae, CorrelationReport};
use crate::synth::{
    build_toy_model, derive_seed, fit_readout, forward_collect, generate_domain, FoldPlan,
    SyntheticDataset, ToyModel,
};
use crate::tensorio::ActivationSet;

const DOMAIN_TAG: u64 = 1;
const FOLD_TAG: u64 = 2;
const MODEL_TAG: u64 = 3;

/// Generates every configured domain. Each domain's seed mixes the global
/// seed, its position and its own `seed` field.
pub fn generate_all(cfg: &RunConfig) -> Result<Vec<SyntheticDataset>> {
    cfg.domains
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut spec = spec.clone();
            spec.seed = derive_seed(cfg.seed, &[DOMAIN_TAG, i as u64, spec.seed]);
            generate_domain(&spec)
        })
        .collect()
}

pub fn fold_plans(cfg: &RunConfig, datasets: &[SyntheticDataset]) -> Result<Vec<FoldPlan>> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            FoldPlan::new(
                &ds.subject_ids(),
                cfg.fold_count,
                derive_seed(cfg.seed, &[FOLD_TAG, i as u64]),
            )
        })
        .collect()
}

pub fn model_id(domain: &str, fold: usize) -> String {
    format!("{domain}-fold{fold}")
}

/// Models indexed `[domain][fold]`, each fitted on that fold's training subjects.
pub fn train_all(
    cfg: &RunConfig,
    datasets: &[SyntheticDataset],
    plans: &[FoldPlan],
) -> Result<Vec<Vec<ToyModel>>> {
    let jobs: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|x| (0..cfg.fold_count).map(move |f| (x, f)))
        .collect();
    let flat: Vec<ToyModel> = jobs
        .par_iter()
        .map(|&(x, f)| {
            let ds = &datasets[x];
            let seed = derive_seed(cfg.seed, &[MODEL_TAG, x as u64, f as u64]);
            let model = build_toy_model(&cfg.widths, ds.feature_dim, seed)?
                .with_id(model_id(&ds.domain_id, f));
            fit_readout(&model, ds, &plans[x].folds[f].train, cfg.ridge_lambda)
        })
        .collect::<Result<_>>()?;
    let mut it = flat.into_iter();
    Ok((0..datasets.len())
        .map(|_| it.by_ref().take(cfg.fold_count).collect())
        .collect())
}

/// Mean over `subjects` of the per-window heart-rate error between predicted
/// and ground-truth pulse waveforms.
pub fn evaluate_model<S: AsRef<str>>(
    model: &ToyModel,
    dataset: &SyntheticDataset,
    subjects: &[S],
    stft: StftParams,
) -> Result<f64> {
    let out = forward_collect(model, dataset, subjects)?;
    let preds = out
        .predictions
        .ok_or_else(|| Error::Training(format!("model {} has no readout", model.model_id)))?;
    let mut total = 0.0;
    for (id, pred) in out.subject_ids.iter().zip(preds) {
        let truth = dataset.subject(id)?;
        let p = stft_hr(&BvpSeries::new(id.as_str(), dataset.fps, pred), stft)?;
        let t = stft_hr(&BvpSeries::new(id.as_str(), dataset.fps, truth.bvp.clone()), stft)?;
        total += mae(&p, &t)?;
    }
    Ok(total / out.subject_ids.len() as f64)
}

/// MAE of model `(x, f)` on the fold-`f` test subjects of every domain `y`.
pub fn evaluate_mae(
    cfg: &RunConfig,
    datasets: &[SyntheticDataset],
    plans: &[FoldPlan],
    models: &[Vec<ToyModel>],
) -> Result<MetricTable> {
    let d = datasets.len();
    let cells: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|x| (0..d).flat_map(move |y| (0..cfg.fold_count).map(move |f| (x, y, f))))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(x, y, f)| evaluate_model(&models[x][f], &datasets[y], &plans[y].folds[f].test, cfg.stft))
        .collect::<Result<_>>()?;
    let ids = datasets.iter().map(|ds| ds.domain_id.clone()).collect();
    let mut it = values.into_iter();
    Ok(MetricTable::from_fn(MetricKind::Mae, ids, cfg.fold_count, |_, _, _| {
        it.next().expect("one value per cell")
    }))
}

/// Activations held in memory, keyed by (model domain, fold, data domain).
#[derive(Debug, Default)]
pub struct MemorySource {
    sets: HashMap<(String, usize, String), Arc<ActivationSet>>,
}

impl MemorySource {
    pub fn insert(&mut self, model_domain: &str, fold: usize, data_domain: &str, set: ActivationSet) {
        self.sets.insert(
            (model_domain.to_string(), fold, data_domain.to_string()),
            Arc::new(set),
        );
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

impl ActivationSource for MemorySource {
    fn has_model(&self, domain: &str, fold: usize) -> bool {
        self.sets.keys().any(|(m, f, _)| m == domain && *f == fold)
    }

    fn activations(&self, model_domain: &str, fold: usize, data_domain: &str) -> Result<Arc<ActivationSet>> {
        self.sets
            .get(&(model_domain.to_string(), fold, data_domain.to_string()))
            .cloned()
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "activations of model ({model_domain}, fold {fold}) on {data_domain}"
                ))
            })
    }
}

/// Hidden activations of model `(x, f)` on the fold-`f` test subjects of every domain.
pub fn collect_activations(
    datasets: &[SyntheticDataset],
    plans: &[FoldPlan],
    models: &[Vec<ToyModel>],
) -> Result<MemorySource> {
    let d = datasets.len();
    let folds = models.first().map_or(0, Vec::len);
    let cells: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|x| (0..folds).flat_map(move |f| (0..d).map(move |y| (x, f, y))))
        .collect();
    let sets: Vec<ActivationSet> = cells
        .par_iter()
        .map(|&(x, f, y)| {
            forward_collect(&models[x][f], &datasets[y], &plans[y].folds[f].test).map(|o| o.activations)
        })
        .collect::<Result<_>>()?;
    let mut src = MemorySource::default();
    for ((x, f, y), set) in cells.into_iter().zip(sets) {
        src.insert(&datasets[x].domain_id, f, &datasets[y].domain_id, set);
    }
    Ok(src)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub datasets: Vec<SyntheticDataset>,
    pub plans: Vec<FoldPlan>,
    pub models: Vec<Vec<ToyModel>>,
    pub mae: MetricTable,
    /// DS-diff, DS-sim and Model-sim, in that order.
    pub metrics: Vec<MetricTable>,
    pub correlations: Vec<CorrelationReport>,
    pub selections: Vec<SelectionResult>,
    pub selection: SelectionReport,
}

impl PipelineOutput {
    pub fn metric(&self, kind: MetricKind) -> Option<&MetricTable> {
        self.metrics.iter().find(|t| t.kind() == kind)
    }

    pub fn correlation(&self, kind: MetricKind) -> Option<&CorrelationReport> {
        let name = kind.to_string();
        self.correlations.iter().find(|c| c.metric == name)
    }
}

/// Runs every stage in memory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let datasets = generate_all(cfg)?;
    let plans = fold_plans(cfg, &datasets)?;
    let models = train_all(cfg, &datasets, &plans)?;
    let mae_table = evaluate_mae(cfg, &datasets, &plans, &models)?;
    let source = collect_activations(&datasets, &plans, &models)?;
    let ids = cfg.domain_ids();
    let metrics = MetricKind::SIMILARITY_METRICS
        .iter()
        .map(|&k| metric_matrix(k, &ids, cfg.fold_count, &source, cfg.cka()))
        .collect::<Result<Vec<_>>>()?;
    let correlations = metrics
        .iter()
        .map(|t| correlate_metric_vs_mae(t, &mae_table, cfg.correlate_options()))
        .collect::<Result<Vec<_>>>()?;
    let selections = select_from_tables(&metrics[0], &mae_table, cfg.select_options())?;
    let selection = selection_report(&selections)?;
    Ok(PipelineOutput {
        datasets,
        plans,
        models,
        mae: mae_table,
        metrics,
        correlations,
        selections,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::from_toml(
            r#"
seed = 3
fold_count = 2
widths = [8, 8, 8]

[[domains]]
domain_id = "clean"
subjects = 6
clip_seconds = 12.0
hr_mean = 75.0
hr_stddev = 3.0
feature_dim = 8

[[domains]]
domain_id = "noisy"
subjects = 6
clip_seconds = 12.0
hr_mean = 95.0
hr_stddev = 3.0
noise_level = 1.5
feature_dim = 8

[[domains]]
domain_id = "noisier"
subjects = 6
clip_seconds = 12.0
hr_mean = 110.0
hr_stddev = 3.0
noise_level = 3.0
feature_dim = 8
"#,
        )
        .unwrap()
    }

    #[test]
    fn small_run_is_complete_and_deterministic() {
        let c = cfg();
        let a = run_pipeline(&c).unwrap();
        assert_eq!(a.models.len(), 3);
        assert_eq!(a.models[0].len(), 2);
        assert_eq!(a.mae.cell_count(), 18);
        assert_eq!(a.metrics.len(), 3);
        assert_eq!(a.selections.len(), 6);
        for k in 0..2 {
            assert_eq!(a.metric(MetricKind::DsDiff).unwrap().get(0, 0, k), 0.0);
        }
        let b = run_pipeline(&c).unwrap();
        assert_eq!(a.mae, b.mae);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn noise_hurts_the_clean_model() {
        let out = run_pipeline(&cfg()).unwrap();
        let m = out.mae.fold_mean();
        assert!(m[0][1] > m[0][0], "clean model: own {} vs noisy {}", m[0][0], m[0][1]);
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use driftlens::config::RunConfig;
use driftlens::fixtures::{
    reference_selection_report, ReferenceCorrelations, CORRELATIONS_FILE, SELECTION_FILE,
};
use driftlens::hr::dataset_summary;
use driftlens::metrics::{metric_matrix, MetricKind};
use driftlens::pipeline::{evaluate_mae, fold_plans, generate_all, train_all};
use driftlens::report::heatmap_svg;
use driftlens::select::{select_from_tables, selection_report, SelectionReport};
use driftlens::stats::{correlate_metric_vs_mae, correlation_table_csv};
use driftlens::synth::{forward_collect, SyntheticDataset, ToyModel};
use log::info;
use rayon::prelude::*;

use crate::store::{self, RunDir};
use crate::{Cli, Command};

const FIXTURE_ALPHA: f64 = 0.05;

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(path) = &cli.fixtures {
        let dir = RunDir::new(cli.out.clone().unwrap_or_else(|| PathBuf::from("out")));
        return match cli.command {
            Command::Correlate => {
                let _lock = dir.lock()?;
                fixture_correlate(path, &dir)
            }
            Command::Select => {
                let _lock = dir.lock()?;
                fixture_select(path, &dir)
            }
            _ => bail!("--fixtures applies to `correlate` and `select` only"),
        };
    }
    let cfg = load_config(&cli)?;
    let dir = RunDir::new(cfg.out_dir.clone());
    let _lock = dir.lock()?;
    match cli.command {
        Command::Synth => synth(&cfg, &dir),
        Command::Train => train(&cfg, &dir),
        Command::Eval => eval(&cfg, &dir),
        Command::Metrics { ref kind } => {
            for k in parse_kinds(kind)? {
                metrics(&cfg, &dir, k)?;
            }
            Ok(())
        }
        Command::Correlate => correlate(&cfg, &dir),
        Command::Select => select(&cfg, &dir),
        Command::Report => report(&dir, cli.svg),
        Command::Run => {
            synth(&cfg, &dir)?;
            train(&cfg, &dir)?;
            eval(&cfg, &dir)?;
            for k in MetricKind::SIMILARITY_METRICS {
                metrics(&cfg, &dir, k)?;
            }
            correlate(&cfg, &dir)?;
            select(&cfg, &dir)?;
            report(&dir, cli.svg)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config is required (or --fixtures for correlate/select)")?;
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg = RunConfig::from_toml(&text)
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(e) = cli.estimator {
        cfg.estimator = e;
    }
    if let Some(b) = cli.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_kinds(arg: &str) -> Result<Vec<MetricKind>> {
    if arg == "all" {
        return Ok(MetricKind::SIMILARITY_METRICS.to_vec());
    }
    let kind: MetricKind = arg.parse()?;
    if kind == MetricKind::Mae {
        bail!("MAE tables are produced by `driftlens eval`");
    }
    Ok(vec![kind])
}

fn load_datasets(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<SyntheticDataset>> {
    cfg.domains
        .par_iter()
        .map(|d| store::load_dataset(dir, &d.domain_id, d.fps))
        .collect()
}

fn load_models(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<Vec<ToyModel>>> {
    cfg.domains
        .iter()
        .map(|d| {
            (0..cfg.fold_count)
                .map(|f| store::load_model(dir, &d.domain_id, f))
                .collect()
        })
        .collect()
}

fn synth(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let datasets = generate_all(cfg)?;
    let mut summary = String::from("domain,time_s,avg_hr_bpm,hr_stddev_bpm\n");
    for ds in &datasets {
        store::write_dump(&dir.dataset_features(&ds.domain_id), &ds.features_as_activations()?)?;
        store::write_text(&dir.dataset_truth(&ds.domain_id), &ds.truth_csv())?;
        summary.push_str(&dataset_summary(ds)?.row(&ds.domain_id));
        summary.push('\n');
    }
    store::write_text(&dir.summary_stats(), &summary)?;
    info!("generated {} domains in {}", datasets.len(), dir.root().display());
    Ok(())
}

fn train(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let datasets = load_datasets(cfg, dir)?;
    let plans = fold_plans(cfg, &datasets)?;
    let models = train_all(cfg, &datasets, &plans)?;
    store::write_json(&dir.folds(), &plans)?;
    let mut count = 0;
    for (ds, per_fold) in datasets.iter().zip(&models) {
        for (f, m) in per_fold.iter().enumerate() {
            store::write_json(&dir.model(&ds.domain_id, f), m)?;
            count += 1;
        }
    }
    info!("trained {count} models");
    Ok(())
}

fn eval(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let datasets = load_datasets(cfg, dir)?;
    let plans = store::load_folds(dir)?;
    if plans.len() != datasets.len() || plans.iter().any(|p| p.fold_count != cfg.fold_count) {
        bail!("fold plans do not match the config; rerun `driftlens train`");
    }
    let models = load_models(cfg, dir)?;
    let mae = evaluate_mae(cfg, &datasets, &plans, &models)?;
    store::write_text(&dir.long_table(MetricKind::Mae), &mae.to_long_csv())?;
    store::write_text(&dir.matrix_table(MetricKind::Mae), &mae.to_matrix_csv())?;

    let d = datasets.len();
    let cells: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|x| (0..cfg.fold_count).flat_map(move |f| (0..d).map(move |y| (x, f, y))))
        .collect();
    cells.par_iter().try_for_each(|&(x, f, y)| -> Result<()> {
        let out = forward_collect(&models[x][f], &datasets[y], &plans[y].folds[f].test)?;
        let path = dir.activations(&datasets[x].domain_id, f, &datasets[y].domain_id);
        store::write_dump(&path, &out.activations)
    })?;
    info!("evaluated {} (model, dataset) pairs", cells.len());
    Ok(())
}

fn metrics(cfg: &RunConfig, dir: &RunDir, kind: MetricKind) -> Result<()> {
    let source = store::DirSource { dir };
    let table = metric_matrix(kind, &cfg.domain_ids(), cfg.fold_count, &source, cfg.cka())
        .map_err(|e| anyhow::anyhow!("{e}; run `driftlens eval` first if activations are missing"))?;
    store::write_text(&dir.long_table(kind), &table.to_long_csv())?;
    store::write_text(&dir.matrix_table(kind), &table.to_matrix_csv())?;
    info!("{kind} table written");
    Ok(())
}

fn correlate(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let mae = store::load_table(dir, MetricKind::Mae)?;
    let reports = MetricKind::SIMILARITY_METRICS
        .iter()
        .map(|&k| {
            let t = store::load_table(dir, k)?;
            Ok(correlate_metric_vs_mae(&t, &mae, cfg.correlate_options())?)
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        info!("{} composite r = {:.3}", r.metric, r.composite);
    }
    store::write_text(&dir.file("correlations.csv"), &correlation_table_csv(&reports)?)
}

fn write_selection(dir: &RunDir, prefix: &str, report: &SelectionReport) -> Result<()> {
    store::write_text(&dir.file(&format!("{prefix}selection.csv")), &report.to_csv())?;
    store::write_text(&dir.file(&format!("{prefix}selection_summary.csv")), &report.summary_csv())?;
    store::write_text(&dir.file(&format!("{prefix}selection_residuals.csv")), &report.residuals_csv())?;
    let a = &report.average;
    info!(
        "average MAE: worst {} / average {} / best {} / DS-diff {}",
        a.worst, a.average, a.best, a.ds_diff
    );
    Ok(())
}

fn select(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let dd = store::load_table(dir, MetricKind::DsDiff)?;
    let mae = store::load_table(dir, MetricKind::Mae)?;
    let results = select_from_tables(&dd, &mae, cfg.select_options())?;
    store::write_json(&dir.file("selections.json"), &results)?;
    write_selection(dir, "", &selection_report(&results)?)
}

fn report(dir: &RunDir, svg: bool) -> Result<()> {
    for kind in [MetricKind::Mae, MetricKind::DsDiff, MetricKind::DsSim, MetricKind::ModelSim] {
        let table = store::load_table(dir, kind)?;
        store::write_text(&dir.report(&format!("{}_heatmap.csv", kind.slug())), &table.to_matrix_csv())?;
        if svg {
            store::write_text(&dir.report(&format!("{}_heatmap.svg", kind.slug())), &heatmap_svg(&table))?;
        }
    }
    Ok(())
}

fn fixture_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn fixture_correlate(path: &Path, dir: &RunDir) -> Result<()> {
    let file = fixture_file(path, CORRELATIONS_FILE);
    let text = fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
    let refs = ReferenceCorrelations::parse(&text)?;
    let csv = refs.composite_csv(FIXTURE_ALPHA)?;
    for line in csv.lines().skip(1) {
        info!("{line}");
    }
    store::write_text(&dir.file("fixture_composites.csv"), &csv)
}

fn fixture_select(path: &Path, dir: &RunDir) -> Result<()> {
    let file = fixture_file(path, SELECTION_FILE);
    let text = fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
    write_selection(dir, "fixture_", &reference_selection_report(&text)?)
}

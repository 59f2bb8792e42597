//! Synthetic pulse-signal domains and a reservoir-style toy model.
//!
//! A domain is a set of subjects, each with a heart-rate trajectory, the
//! blood-volume-pulse waveform it drives, and a frame-by-frame feature
//! sequence that linearly mixes the pulse with distractors, noise, and an
//! illumination offset. The toy model is a stack of fixed random `tanh`
//! layers with a ridge-regression readout to the pulse waveform.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hr::{HR_MAX_BPM, HR_MIN_BPM};
use crate::tensorio::{ActivationSet, LayerActivations};

/// Seed of the feature-mixing matrix shared by every domain.
const MIXING_SEED: u64 = 0x6d69_7869_6e67;
/// Per-second autocorrelation of the heart-rate process.
const HR_AR_COEF: f64 = 0.5;
const HARMONIC_AMPLITUDE: f64 = 0.5;
const DISTRACTOR_AMPLITUDE: f64 = 0.6;
const SOURCES: usize = 4;

/// splitmix64 mixing of a base seed with extra words.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts.iter().chain(std::iter::once(&0x9e37_79b9_7f4a_7c15)) {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: String,
    pub subjects: usize,
    pub clip_seconds: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub hr_mean: f64,
    #[serde(default)]
    pub hr_stddev: f64,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub illumination_offset: f64,
    pub feature_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(format!("domain '{}': {msg}", self.domain_id)));
        if self.domain_id.is_empty() {
            return Err(Error::Spec("empty domain_id".into()));
        }
        if self.subjects < 5 {
            return bad(format!("needs at least 5 subjects, got {}", self.subjects));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return bad(format!("clip_seconds must be positive, got {}", self.clip_seconds));
        }
        if self.frames() == 0 {
            return bad("clip shorter than one frame".into());
        }
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&self.hr_mean) {
            return bad(format!("hr_mean {} outside [40, 180]", self.hr_mean));
        }
        if !(self.hr_stddev >= 0.0 && self.hr_stddev.is_finite()) {
            return bad(format!("hr_stddev must be >= 0, got {}", self.hr_stddev));
        }
        let lo = self.hr_mean - 3.0 * self.hr_stddev;
        let hi = self.hr_mean + 3.0 * self.hr_stddev;
        if lo < HR_MIN_BPM || hi > HR_MAX_BPM {
            return bad(format!(
                "hr_mean ± 3·hr_stddev = [{lo}, {hi}] leaves [40, 180]"
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        if !self.illumination_offset.is_finite() {
            return bad("illumination_offset must be finite".into());
        }
        if self.feature_dim < SOURCES {
            return bad(format!("feature_dim must be >= 4, got {}", self.feature_dim));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.clip_seconds * self.fps).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// frames × feature_dim, row-major, stored at f32 precision.
    pub features: Vec<f32>,
    pub bvp: Vec<f64>,
    /// Ground-truth heart rate per frame, BPM.
    pub hr: Vec<f64>,
}

impl SubjectRecord {
    pub fn frames(&self) -> usize {
        self.bvp.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub domain_id: String,
    pub fps: f64,
    pub feature_dim: usize,
    /// Sorted by subject id.
    pub subjects: Vec<SubjectRecord>,
}

impl SyntheticDataset {
    pub fn subject(&self, id: &str) -> Result<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == id)
            .ok_or_else(|| Error::Lookup(format!("{id} in domain {}", self.domain_id)))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// Resolves ids to records in sorted id order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&SubjectRecord>> {
        let mut out = ids
            .iter()
            .map(|id| self.subject(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        Ok(out)
    }

    /// Subject features as an activation set, one layer per subject.
    pub fn features_as_activations(&self) -> Result<ActivationSet> {
        let layers = self
            .subjects
            .iter()
            .map(|s| {
                LayerActivations::new(
                    s.subject_id.clone(),
                    s.frames(),
                    self.feature_dim,
                    s.features.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ActivationSet::new("features", self.domain_id.clone(), layers)
    }

    /// Ground-truth CSV: `subject_id,frame,bvp,hr_bpm`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("subject_id,frame,bvp,hr_bpm\n");
        for s in &self.subjects {
            for (f, (b, h)) in s.bvp.iter().zip(&s.hr).enumerate() {
                let _ = writeln!(out, "{},{f},{b},{h}", s.subject_id);
            }
        }
        out
    }

    /// Inverse of [`features_as_activations`](Self::features_as_activations) plus [`truth_csv`](Self::truth_csv).
    pub fn from_parts(features: &ActivationSet, truth_csv: &str, fps: f64) -> Result<Self> {
        let mut series: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
        let mut lines = truth_csv.lines();
        match lines.next() {
            Some(h) if h.trim() == "subject_id,frame,bvp,hr_bpm" => {}
            other => {
                return Err(Error::Csv(format!(
                    "unexpected ground-truth header {other:?}"
                )))
            }
        }
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::Csv(format!("line {}: expected 4 columns", ln + 2)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Csv(format!("line {}: {e}", ln + 2)))
            };
            let frame: usize = cols[1]
                .parse()
                .map_err(|e| Error::Csv(format!("line {}: {e}", ln + 2)))?;
            let entry = series.entry(cols[0].to_string()).or_default();
            if frame != entry.0.len() {
                return Err(Error::Csv(format!(
                    "line {}: frame {frame} out of order",
                    ln + 2
                )));
            }
            entry.0.push(parse(cols[2])?);
            entry.1.push(parse(cols[3])?);
        }
        let feature_dim = features.layers()[0].cols();
        let mut subjects = Vec::new();
        for layer in features.layers() {
            let (bvp, hr) = series.remove(layer.name()).ok_or_else(|| {
                Error::Lookup(format!("{} missing from ground truth", layer.name()))
            })?;
            if bvp.len() != layer.rows() || layer.cols() != feature_dim {
                return Err(Error::Validation(format!(
                    "subject {} feature/ground-truth shape mismatch",
                    layer.name()
                )));
            }
            subjects.push(SubjectRecord {
                subject_id: layer.name().to_string(),
                features: layer.data().to_vec(),
                bvp,
                hr,
            });
        }
        if let Some(extra) = series.keys().next() {
            return Err(Error::Lookup(format!("{extra} has ground truth but no features")));
        }
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        Ok(Self {
            domain_id: features.dataset_id().to_string(),
            fps,
            feature_dim,
            subjects,
        })
    }
}

fn mixing_matrix(feature_dim: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MIXING_SEED, &[feature_dim as u64]));
    let scale = 1.0 / (SOURCES as f64).sqrt();
    DMatrix::from_fn(feature_dim, SOURCES, |_, _| {
        rng.sample::<f64, _>(StandardNormal) * scale
    })
}

/// Mean-reverting Gaussian walk sampled once per second, linearly interpolated to frames.
fn hr_trajectory(spec: &DomainSpec, frames: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let knots = (frames as f64 / spec.fps).ceil() as usize + 2;
    let innov = (1.0 - HR_AR_COEF * HR_AR_COEF).sqrt() * spec.hr_stddev;
    let mut dev = spec.hr_stddev * rng.sample::<f64, _>(StandardNormal);
    let mut walk = Vec::with_capacity(knots);
    for _ in 0..knots {
        walk.push((spec.hr_mean + dev).clamp(HR_MIN_BPM, HR_MAX_BPM));
        dev = HR_AR_COEF * dev + innov * rng.sample::<f64, _>(StandardNormal);
    }
    (0..frames)
        .map(|f| {
            let t = f as f64 / spec.fps;
            let k = t.floor() as usize;
            let w = t - k as f64;
            walk[k] * (1.0 - w) + walk[k + 1] * w
        })
        .collect()
}

/// Deterministic synthetic domain for `spec`.
pub fn generate_domain(spec: &DomainSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let frames = spec.frames();
    let mix = mixing_matrix(spec.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut subjects = Vec::with_capacity(spec.subjects);
    for idx in 0..spec.subjects {
        let hr = hr_trajectory(spec, frames, &mut rng);
        let mut phase = rng.random_range(0.0..2.0 * PI);
        let resp_freq = rng.random_range(0.15..0.45);
        let resp_phase = rng.random_range(0.0..2.0 * PI);
        let motion_freq = rng.random_range(0.05..3.5);
        let motion_phase = rng.random_range(0.0..2.0 * PI);

        let mut bvp = Vec::with_capacity(frames);
        let mut features = Vec::with_capacity(frames * spec.feature_dim);
        let mut sources = DVector::zeros(SOURCES);
        for (f, &rate) in hr.iter().enumerate() {
            let t = f as f64 / spec.fps;
            let b = phase.sin() + HARMONIC_AMPLITUDE * (2.0 * phase).sin();
            bvp.push(b);
            sources[0] = b;
            sources[1] = b * b - 0.625;
            sources[2] = DISTRACTOR_AMPLITUDE * (2.0 * PI * resp_freq * t + resp_phase).sin();
            sources[3] = DISTRACTOR_AMPLITUDE * (2.0 * PI * motion_freq * t + motion_phase).sin();
            let mixed = &mix * &sources;
            for v in mixed.iter() {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((v + spec.noise_level * noise + spec.illumination_offset) as f32);
            }
            phase += 2.0 * PI * rate / 60.0 / spec.fps;
        }
        subjects.push(SubjectRecord {
            subject_id: format!("{}-s{idx:03}", spec.domain_id),
            features,
            bvp,
            hr,
        });
    }
    Ok(SyntheticDataset {
        domain_id: spec.domain_id.clone(),
        fps: spec.fps,
        feature_dim: spec.feature_dim,
        subjects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// out × in, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl HiddenLayer {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.bias[o];
            out.push(z.tanh());
        }
    }
}

/// Fixed random `tanh` layers plus a trainable linear readout of the pulse waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub model_id: String,
    pub seed: u64,
    /// Features per frame.
    pub input_dim: usize,
    /// The first layer sees this many frames: the current one and earlier
    /// frames spaced `tap_stride` apart, repeating frame 0 at the clip start.
    pub taps: usize,
    pub tap_stride: usize,
    pub layers: Vec<HiddenLayer>,
    pub readout: Option<Readout>,
    pub train_domain_id: Option<String>,
}

pub const DEFAULT_WIDTHS: [usize; 6] = [32; 6];
pub const TEMPORAL_TAPS: usize = 8;
pub const TAP_STRIDE: usize = 3;
const WEIGHT_GAIN: f64 = 1.2;
const BIAS_STD: f64 = 0.2;

/// Builds a model with seeded hidden weights and no readout.
pub fn build_toy_model(layer_widths: &[usize], feature_dim: usize, seed: u64) -> Result<ToyModel> {
    if layer_widths.len() < 2 {
        return Err(Error::Spec(format!(
            "toy model needs at least 2 layers, got {}",
            layer_widths.len()
        )));
    }
    if layer_widths.contains(&0) || feature_dim == 0 {
        return Err(Error::Spec("layer widths and feature_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = feature_dim * TEMPORAL_TAPS;
    let mut layers = Vec::with_capacity(layer_widths.len());
    for &outputs in layer_widths {
        let scale = WEIGHT_GAIN / (inputs as f64).sqrt();
        let weights = (0..outputs * inputs)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        let bias = (0..outputs)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * BIAS_STD)
            .collect();
        layers.push(HiddenLayer {
            weights,
            bias,
            inputs,
            outputs,
        });
        inputs = outputs;
    }
    Ok(ToyModel {
        model_id: format!("toy-{seed:016x}"),
        seed,
        input_dim: feature_dim,
        taps: TEMPORAL_TAPS,
        tap_stride: TAP_STRIDE,
        layers,
        readout: None,
        train_domain_id: None,
    })
}

impl ToyModel {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.outputs).collect()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    fn check_input(&self, dataset: &SyntheticDataset) -> Result<()> {
        if dataset.feature_dim != self.input_dim {
            return Err(Error::Architecture(format!(
                "model {} expects {} features, domain {} has {}",
                self.model_id, self.input_dim, dataset.domain_id, dataset.feature_dim
            )));
        }
        Ok(())
    }

    /// Hidden activations for every frame of `subject`, per layer, row-major.
    fn hidden(&self, subject: &SubjectRecord) -> Vec<Vec<f64>> {
        let frames = subject.frames();
        let mut per_layer: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| Vec::with_capacity(frames * l.outputs))
            .collect();
        let d = self.input_dim;
        let mut cur = Vec::with_capacity(d * self.taps);
        let mut next = Vec::new();
        for f in 0..frames {
            cur.clear();
            for k in 0..self.taps {
                let src = f.saturating_sub(k * self.tap_stride);
                cur.extend(subject.features[src * d..(src + 1) * d].iter().map(|&v| v as f64));
            }
            for (l, layer) in self.layers.iter().enumerate() {
                layer.apply(&cur, &mut next);
                per_layer[l].extend_from_slice(&next);
                std::mem::swap(&mut cur, &mut next);
            }
        }
        per_layer
    }

    fn predict_from_last(&self, last: &[f64]) -> Option<Vec<f64>> {
        let r = self.readout.as_ref()?;
        let w = r.weights.len();
        Some(
            last.chunks_exact(w)
                .map(|h| h.iter().zip(&r.weights).map(|(a, b)| a * b).sum::<f64>() + r.intercept)
                .collect(),
        )
    }
}

/// Ridge regression from last-layer activations of `train_subjects` to their BVP.
pub fn fit_readout<S: AsRef<str>>(
    model: &ToyModel,
    dataset: &SyntheticDataset,
    train_subjects: &[S],
    ridge_lambda: f64,
) -> Result<ToyModel> {
    if train_subjects.is_empty() {
        return Err(Error::Training("empty training subject list".into()));
    }
    if !(ridge_lambda > 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Training(format!(
            "ridge_lambda must be positive, got {ridge_lambda}"
        )));
    }
    model.check_input(dataset)?;
    let records = dataset.select(train_subjects)?;
    let width = *model.widths().last().expect("at least 2 layers");

    // Accumulate centered normal equations over all frames.
    let mut sum_h = DVector::<f64>::zeros(width);
    let mut sum_y = 0.0;
    let mut hth = DMatrix::<f64>::zeros(width, width);
    let mut hty = DVector::<f64>::zeros(width);
    let mut count = 0usize;
    for rec in &records {
        let last = model.hidden(rec).pop().expect("non-empty layers");
        for (h, &y) in last.chunks_exact(width).zip(&rec.bvp) {
            let h = DVector::from_column_slice(h);
            hth.ger(1.0, &h, &h, 1.0);
            hty.axpy(y, &h, 1.0);
            sum_h += &h;
            sum_y += y;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Training("training subjects contain no frames".into()));
    }
    let nf = count as f64;
    let mean_h = &sum_h / nf;
    let mean_y = sum_y / nf;
    let mut a = hth - (&mean_h * mean_h.transpose()) * nf;
    let b = hty - &mean_h * (mean_y * nf);
    for i in 0..width {
        a[(i, i)] += ridge_lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Training("ridge normal matrix not positive definite".into()))?;
    let w = chol.solve(&b);
    let intercept = mean_y - w.dot(&mean_h);

    let mut trained = model.clone();
    trained.readout = Some(Readout {
        weights: w.iter().copied().collect(),
        intercept,
    });
    trained.train_domain_id = Some(dataset.domain_id.clone());
    Ok(trained)
}

/// Output of [`forward_collect`]: per-subject predictions (when a readout is
/// trained) and the stacked hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub subject_ids: Vec<String>,
    pub predictions: Option<Vec<Vec<f64>>>,
    pub activations: ActivationSet,
}

/// Runs `model` over `subjects` (ordered by id, then frame) collecting every hidden layer.
pub fn forward_collect<S: AsRef<str>>(
    model: &ToyModel,
    dataset: &SyntheticDataset,
    subjects: &[S],
) -> Result<ForwardOutput> {
    model.check_input(dataset)?;
    let records = dataset.select(subjects)?;
    if records.is_empty() {
        return Err(Error::Lookup("empty subject list".into()));
    }
    let widths = model.widths();
    let mut stacked: Vec<Vec<f64>> = vec![Vec::new(); widths.len()];
    let mut predictions = model.readout.as_ref().map(|_| Vec::new());
    let mut total = 0;
    for rec in &records {
        let hidden = model.hidden(rec);
        if let Some(preds) = predictions.as_mut() {
            preds.push(
                model
                    .predict_from_last(hidden.last().expect("layers"))
                    .expect("readout present"),
            );
        }
        for (dst, src) in stacked.iter_mut().zip(hidden) {
            dst.extend(src);
        }
        total += rec.frames();
    }
    let layers = stacked
        .iter()
        .zip(&widths)
        .enumerate()
        .map(|(i, (data, &w))| LayerActivations::from_f64(format!("layer{}", i + 1), total, w, data))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardOutput {
        subject_ids: records.iter().map(|r| r.subject_id.clone()).collect(),
        predictions,
        activations: ActivationSet::new(model.model_id.clone(), dataset.domain_id.clone(), layers)?,
    })
}

/// Subject-disjoint k-fold partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl FoldPlan {
    /// Shuffles `subject_ids` with `seed` and deals them round-robin into test folds.
    /// A single fold trains and tests on every subject.
    pub fn new(subject_ids: &[String], fold_count: usize, seed: u64) -> Result<Self> {
        if fold_count == 0 {
            return Err(Error::Spec("fold_count must be >= 1".into()));
        }
        if subject_ids.len() < fold_count {
            return Err(Error::Spec(format!(
                "{} subjects cannot fill {fold_count} folds",
                subject_ids.len()
            )));
        }
        let mut ids = subject_ids.to_vec();
        ids.sort();
        ids.dedup();
        if ids.len() != subject_ids.len() {
            return Err(Error::Spec("duplicate subject ids".into()));
        }
        if fold_count == 1 {
            return Ok(Self {
                fold_count,
                folds: vec![Fold {
                    train: ids.clone(),
                    test: ids,
                }],
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let mut tests = vec![Vec::new(); fold_count];
        for (i, id) in ids.iter().enumerate() {
            tests[i % fold_count].push(id.clone());
        }
        let folds = tests
            .into_iter()
            .map(|mut test| {
                test.sort();
                let mut train: Vec<String> =
                    ids.iter().filter(|id| !test.contains(id)).cloned().collect();
                train.sort();
                Fold { train, test }
            })
            .collect();
        Ok(Self { fold_count, folds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(id: &str) -> DomainSpec {
        DomainSpec {
            domain_id: id.into(),
            subjects: 5,
            clip_seconds: 12.0,
            fps: 30.0,
            hr_mean: 90.0,
            hr_stddev: 3.0,
            noise_level: 0.2,
            illumination_offset: 0.0,
            feature_dim: 8,
            seed: 7,
        }
    }

    #[test]
    fn constant_hr_when_no_variability() {
        let mut s = spec("flat");
        s.hr_stddev = 0.0;
        s.noise_level = 0.0;
        let ds = generate_domain(&s).unwrap();
        for subj in &ds.subjects {
            assert!(subj.hr.iter().all(|&h| h == 90.0));
            assert_eq!(subj.frames(), 360);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_domain(&spec("a")).unwrap(),
            generate_domain(&spec("a")).unwrap()
        );
    }

    #[test]
    fn hr_stays_in_band() {
        let mut s = spec("wide");
        s.hr_mean = 110.0;
        s.hr_stddev = 20.0;
        let ds = generate_domain(&s).unwrap();
        assert!(ds
            .subjects
            .iter()
            .flat_map(|s| &s.hr)
            .all(|&h| (40.0..=180.0).contains(&h)));
    }

    #[test]
    fn spec_validation() {
        let mut s = spec("x");
        s.subjects = 4;
        assert!(matches!(generate_domain(&s), Err(Error::Spec(_))));
        let mut s = spec("x");
        s.hr_mean = 170.0;
        s.hr_stddev = 5.0;
        assert!(s.validate().is_err());
        let mut s = spec("x");
        s.feature_dim = 3;
        assert!(s.validate().is_err());
    }

    #[test]
    fn model_construction() {
        let a = build_toy_model(&[8; 6], 8, 3).unwrap();
        assert_eq!(a, build_toy_model(&[8; 6], 8, 3).unwrap());
        assert_eq!(a.layer_count(), 6);
        assert_ne!(a.layers, build_toy_model(&[8; 6], 8, 4).unwrap().layers);
        assert!(build_toy_model(&[8], 8, 3).is_err());
        assert!(build_toy_model(&[8, 0], 8, 3).is_err());
    }

    #[test]
    fn readout_shrinks_to_zero() {
        let ds = generate_domain(&spec("a")).unwrap();
        let m = build_toy_model(&[8; 6], 8, 1).unwrap();
        let ids = ds.subject_ids();
        let fitted = fit_readout(&m, &ds, &ids, 1e12).unwrap();
        let w = &fitted.readout.unwrap().weights;
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "norm {norm}");
    }

    #[test]
    fn readout_errors() {
        let ds = generate_domain(&spec("a")).unwrap();
        let m = build_toy_model(&[8; 6], 8, 1).unwrap();
        let none: [&str; 0] = [];
        assert!(matches!(
            fit_readout(&m, &ds, &none, 1.0),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            fit_readout(&m, &ds, &["nobody"], 1.0),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn forward_shapes() {
        let mut s = spec("a");
        s.clip_seconds = 10.0;
        let ds = generate_domain(&s).unwrap();
        let m = build_toy_model(&[16, 12, 8], 8, 1).unwrap();
        let id = ds.subjects[0].subject_id.clone();
        let out = forward_collect(&m, &ds, &[id]).unwrap();
        assert!(out.predictions.is_none());
        let dims: Vec<_> = out
            .activations
            .layers()
            .iter()
            .map(|l| (l.rows(), l.cols()))
            .collect();
        assert_eq!(dims, vec![(300, 16), (300, 12), (300, 8)]);
        assert!(matches!(
            forward_collect(&m, &ds, &["ghost"]),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn fold_plan_partitions() {
        let ids: Vec<String> = (0..11).map(|i| format!("s{i:02}")).collect();
        let plan = FoldPlan::new(&ids, 3, 9).unwrap();
        let mut seen: Vec<String> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort();
        assert_eq!(seen, ids);
        for f in &plan.folds {
            assert!(f.train.iter().all(|t| !f.test.contains(t)));
            assert_eq!(f.train.len() + f.test.len(), ids.len());
        }
        assert_eq!(plan, FoldPlan::new(&ids, 3, 9).unwrap());
        assert!(FoldPlan::new(&ids, 0, 1).is_err());
    }

    #[test]
    fn dataset_parts_round_trip() {
        let ds = generate_domain(&spec("rt")).unwrap();
        let acts = ds.features_as_activations().unwrap();
        let back = SyntheticDataset::from_parts(&acts, &ds.truth_csv(), ds.fps).unwrap();
        assert_eq!(back, ds);
    }
}

//! On-disk layout of a run directory, atomic writes and the directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use driftlens::metrics::{ActivationSource, MetricKind, MetricTable};
use driftlens::synth::{FoldPlan, SyntheticDataset, ToyModel};
use driftlens::tensorio::{read_activation_dump, write_activation_dump, ActivationSet};

pub struct RunDir {
    root: PathBuf,
}

/// Held for the lifetime of a command; removes the lock file on drop.
pub struct DirLock {
    path: PathBuf,
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lock(&self) -> Result<DirLock> {
        fs::create_dir_all(&self.root)
            .with_context(|| format!("cannot create output directory {}", self.root.display()))?;
        let path = self.root.join(".driftlens.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another driftlens process (remove {} if it is stale)",
                self.root.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("cannot lock {}", self.root.display())),
        }
    }

    pub fn dataset_features(&self, domain: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{domain}.actv"))
    }

    pub fn dataset_truth(&self, domain: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{domain}_truth.csv"))
    }

    pub fn summary_stats(&self) -> PathBuf {
        self.root.join("datasets").join("summary_stats.csv")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("models").join("folds.json")
    }

    pub fn model(&self, domain: &str, fold: usize) -> PathBuf {
        self.root.join("models").join(format!("{domain}-fold{fold}.json"))
    }

    pub fn activations(&self, model_domain: &str, fold: usize, data_domain: &str) -> PathBuf {
        self.root
            .join("activations")
            .join(format!("{model_domain}-fold{fold}__{data_domain}.actv"))
    }

    pub fn long_table(&self, kind: MetricKind) -> PathBuf {
        self.root.join("tables").join(format!("{}_long.csv", kind.slug()))
    }

    pub fn matrix_table(&self, kind: MetricKind) -> PathBuf {
        self.root.join("tables").join(format!("{}_matrix.csv", kind.slug()))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("report").join(name)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?,
        );
        write(&mut w)?;
        w.into_inner()
            .map_err(|e| e.into_error())
            .and_then(|f| f.sync_all())
            .with_context(|| format!("cannot flush {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        Ok(w.write_all(b"\n")?)
    })
}

pub fn write_dump(path: &Path, set: &ActivationSet) -> Result<()> {
    write_atomic(path, |w| {
        write_activation_dump(set, w)?;
        Ok(())
    })
}

/// Fails with a message naming the command that produces `path`.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing {}; run `driftlens {producer}` first",
            path.display()
        );
    }
    Ok(())
}

pub fn read_text(path: &Path, producer: &str) -> Result<String> {
    require(path, producer)?;
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_dump(path: &Path, producer: &str) -> Result<ActivationSet> {
    require(path, producer)?;
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_activation_dump(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    let text = read_text(path, producer)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_dataset(dir: &RunDir, domain: &str, fps: f64) -> Result<SyntheticDataset> {
    let features = read_dump(&dir.dataset_features(domain), "synth")?;
    let truth = read_text(&dir.dataset_truth(domain), "synth")?;
    Ok(SyntheticDataset::from_parts(&features, &truth, fps)?)
}

pub fn load_folds(dir: &RunDir) -> Result<Vec<FoldPlan>> {
    read_json(&dir.folds(), "train")
}

pub fn load_model(dir: &RunDir, domain: &str, fold: usize) -> Result<ToyModel> {
    read_json(&dir.model(domain, fold), "train")
}

pub fn load_table(dir: &RunDir, kind: MetricKind) -> Result<MetricTable> {
    let producer = if kind == MetricKind::Mae {
        "eval".to_string()
    } else {
        format!("metrics --kind {}", kind.slug())
    };
    let text = read_text(&dir.long_table(kind), &producer)?;
    Ok(MetricTable::from_long_csv(kind, &text)?)
}

/// Reads activation dumps written by `eval` on demand.
pub struct DirSource<'a> {
    pub dir: &'a RunDir,
}

impl ActivationSource for DirSource<'_> {
    fn has_model(&self, domain: &str, fold: usize) -> bool {
        self.dir.activations(domain, fold, domain).exists()
    }

    fn activations(
        &self,
        model_domain: &str,
        fold: usize,
        data_domain: &str,
    ) -> driftlens::Result<Arc<ActivationSet>> {
        let path = self.dir.activations(model_domain, fold, data_domain);
        read_dump(&path, "eval").map(Arc::new).map_err(|e| {
            driftlens::Error::Lookup(format!("{e:#}"))
        })
    }
}

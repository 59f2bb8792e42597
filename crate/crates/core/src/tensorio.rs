//! Activation containers and the `ACTV` binary dump format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "ACTV" | u32 version=1 | u16 len + model_id | u16 len + dataset_id | u32 layer_count
//! per layer: u16 len + name | u32 rows | u32 cols | rows*cols f32, row-major
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACTV";
pub const VERSION: u32 = 1;

/// One layer's activations: `rows` samples by `cols` features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl LayerActivations {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "layer '{name}' has empty shape {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Validation(format!(
                "layer '{name}' declares {rows}x{cols} but holds {} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "layer '{name}' has non-finite value at row {}, col {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self {
            name,
            rows,
            cols,
            data,
        })
    }

    /// Builds a layer from f64 values, rounding to f32 storage precision.
    pub fn from_f64(name: impl Into<String>, rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(name, rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// First `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.rows);
        Self {
            name: self.name.clone(),
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }
}

/// Per-layer activations produced by one model over one dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    model_id: String,
    dataset_id: String,
    layers: Vec<LayerActivations>,
}

impl ActivationSet {
    pub fn new(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        layers: Vec<LayerActivations>,
    ) -> Result<Self> {
        let set = Self {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            layers,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("activation set has no layers".into()));
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate layer name '{}'",
                    layer.name
                )));
            }
        }
        let n = self.layers[0].rows;
        if let Some(bad) = self.layers.iter().find(|l| l.rows != n) {
            return Err(Error::Validation(format!(
                "layer '{}' has {} samples, expected {n}",
                bad.name, bad.rows
            )));
        }
        for id in [&self.model_id, &self.dataset_id] {
            check_str_len(id)?;
        }
        for layer in &self.layers {
            check_str_len(&layer.name)?;
            if u32::try_from(layer.rows).is_err() || u32::try_from(layer.cols).is_err() {
                return Err(Error::Validation(format!(
                    "layer '{}' dimensions exceed u32",
                    layer.name
                )));
            }
        }
        if u32::try_from(self.layers.len()).is_err() {
            return Err(Error::Validation("too many layers".into()));
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn layers(&self) -> &[LayerActivations] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn sample_count(&self) -> usize {
        self.layers[0].rows
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    /// Keeps the first `n` samples of every layer.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            layers: self.layers.iter().map(|l| l.truncated(n)).collect(),
        }
    }

    /// Exact size in bytes of the encoded dump.
    pub fn encoded_len(&self) -> usize {
        let header = 4 + 4 + 2 + self.model_id.len() + 2 + self.dataset_id.len() + 4;
        header
            + self
                .layers
                .iter()
                .map(|l| 2 + l.name.len() + 8 + 4 * l.data.len())
                .sum::<usize>()
    }
}

fn check_str_len(s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(Error::Validation(format!(
            "identifier of {} bytes exceeds u16 length prefix",
            s.len()
        )));
    }
    Ok(())
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io(self.written, e))?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    fn put_str(&mut self, s: &str) -> Result<()> {
        self.put(&(s.len() as u16).to_le_bytes())?;
        self.put(s.as_bytes())
    }
}

/// Writes `set` in the `ACTV` format and returns the number of bytes written.
pub fn write_activation_dump<W: Write>(set: &ActivationSet, sink: W) -> Result<u64> {
    set.validate()?;
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    w.put(MAGIC)?;
    w.put(&VERSION.to_le_bytes())?;
    w.put_str(&set.model_id)?;
    w.put_str(&set.dataset_id)?;
    w.put(&(set.layers.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for layer in &set.layers {
        w.put_str(&layer.name)?;
        w.put(&(layer.rows as u32).to_le_bytes())?;
        w.put(&(layer.cols as u32).to_le_bytes())?;
        buf.clear();
        buf.reserve(layer.data.len() * 4);
        for v in &layer.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.put(&buf)?;
    }
    w.inner.flush().map_err(|e| Error::io(w.written, e))?;
    Ok(w.written)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    layer: Option<usize>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Corruption {
                layer: self.layer,
                detail: format!("truncated while reading {what}: need {n} bytes, {remaining} left"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Corruption {
            layer: self.layer,
            detail: format!("{what} is not valid UTF-8"),
        })
    }
}

/// Reads and validates an `ACTV` dump.
pub fn read_activation_dump<R: Read>(mut source: R) -> Result<ActivationSet> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"ACTV\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        layer: None,
    };
    cur.take(4, "magic")?;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let model_id = cur.string("model_id")?;
    let dataset_id = cur.string("dataset_id")?;
    let layer_count = cur.u32("layer_count")? as usize;
    if layer_count == 0 {
        return Err(Error::Validation("activation set has no layers".into()));
    }

    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for idx in 0..layer_count {
        cur.layer = Some(idx);
        let name = cur.string("layer name")?;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Corruption {
            layer: Some(idx),
            detail: "declared size overflows".into(),
        })?;
        let nbytes = count.checked_mul(4).ok_or_else(|| Error::Corruption {
            layer: Some(idx),
            detail: "declared size overflows".into(),
        })?;
        let raw = cur.take(nbytes, "layer payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        layers.push(LayerActivations::new(name, rows, cols, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corruption {
            layer: None,
            detail: format!("{} trailing bytes after last layer", bytes.len() - cur.pos),
        });
    }
    ActivationSet::new(model_id, dataset_id, layers)
}

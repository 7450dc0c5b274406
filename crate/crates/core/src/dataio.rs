//! File formats: embedding datasets (`.semb`), checkpoints (`.sckpt`) and the
//! JSON run configuration. Also the optional train-split feature standardizer.
//!
//! All integers are little-endian. Floats are stored as IEEE-754 binary32
//! and widened to binary64 on read.
//!
//! Embedding file:
//!
//! ```text
//! "SELFIEMB" | version u32 = 1 | d_id u32 | d_backbone u32 | count u64
//!            | flags u32 (bit 0: groups present) | 12 reserved zero bytes
//! record × count:
//!   label u8 | method u8 | pad u16 = 0 | [group u32] | f_id f32 × d_id | f_vis f32 × d_backbone
//! ```
//!
//! Checkpoint file:
//!
//! ```text
//! "SELFICKP" | version u32 = 1 | header_len u64 | JSON header (UTF-8)
//! per tensor, in fixed order: name_len u32 | name | rows u32 | cols u32 | f32 × rows·cols
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{Dims, Mode, ModelConfig, Sample, SelfiParams};
use crate::optim::{Checkpoint, EpochRecord, OptimConfig, TrainConfig};
use crate::synthdata::BenchmarkConfig;

pub const DATASET_MAGIC: &[u8; 8] = b"SELFIEMB";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SELFICKP";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SCALAR_CAP: u64 = 100_000_000;
const FLAG_GROUPS: u32 = 1;

#[derive(Clone, Debug)]
pub struct EmbeddingDataset {
    pub d_id: usize,
    pub d_backbone: usize,
    pub samples: Vec<Sample>,
    /// Generator description or source path. Not stored in the file.
    pub provenance: String,
}

/// Equality over dimensions and samples; provenance is informational only.
impl PartialEq for EmbeddingDataset {
    fn eq(&self, other: &Self) -> bool {
        self.d_id == other.d_id && self.d_backbone == other.d_backbone && self.samples == other.samples
    }
}

impl EmbeddingDataset {
    pub fn new(d_id: usize, d_backbone: usize, samples: Vec<Sample>, provenance: impl Into<String>) -> Result<Self> {
        let ds = EmbeddingDataset {
            d_id,
            d_backbone,
            samples,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_id == 0 || self.d_backbone == 0 {
            return Err(Error::DimMismatch(format!(
                "dataset dims must be positive, got ({}, {})",
                self.d_id, self.d_backbone
            )));
        }
        for s in &self.samples {
            if s.y > 1 {
                return Err(Error::InvalidLabel(s.y));
            }
            if s.f_id.len() != self.d_id || s.f_vis.len() != self.d_backbone {
                return Err(Error::DimMismatch(format!(
                    "sample widths ({}, {}) in dataset of dims ({}, {})",
                    s.f_id.len(),
                    s.f_vis.len(),
                    self.d_id,
                    self.d_backbone
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.d_id != dims.d_id || self.d_backbone != dims.d_backbone {
            return Err(Error::DimMismatch(format!(
                "dataset has dims ({}, {}) but the model expects ({}, {})",
                self.d_id, self.d_backbone, dims.d_id, dims.d_backbone
            )));
        }
        Ok(())
    }

    pub fn has_groups(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.group.is_some())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn groups(&self) -> Option<Vec<u32>> {
        self.samples.iter().map(|s| s.group).collect()
    }

    pub fn count_label(&self, y: u8) -> usize {
        self.samples.iter().filter(|s| s.y == y).count()
    }

    /// Samples whose method tag is `method`.
    pub fn filter_method(&self, method: u8) -> EmbeddingDataset {
        EmbeddingDataset {
            d_id: self.d_id,
            d_backbone: self.d_backbone,
            samples: self.samples.iter().filter(|s| s.method == method).cloned().collect(),
            provenance: format!("{} [method {method}]", self.provenance),
        }
    }

    /// Concatenation in argument order.
    pub fn concat(parts: &[&EmbeddingDataset]) -> Result<EmbeddingDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyDataset("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        for p in parts {
            if p.d_id != first.d_id || p.d_backbone != first.d_backbone {
                return Err(Error::DimMismatch("concatenating datasets of different dims".into()));
            }
            samples.extend(p.samples.iter().cloned());
        }
        Ok(EmbeddingDataset {
            d_id: first.d_id,
            d_backbone: first.d_backbone,
            samples,
            provenance: parts
                .iter()
                .map(|p| p.provenance.as_str())
                .collect::<Vec<_>>()
                .join(" + "),
        })
    }
}

fn truncated(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Truncated(what.to_string())
    } else {
        Error::Io(e)
    }
}

struct LeReader<R> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| truncated(e, what))?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 4];
        self.inner.read_exact(&mut raw).map_err(|e| truncated(e, what))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut raw = vec![0u8; n];
        self.inner.read_exact(&mut raw).map_err(|e| truncated(e, what))?;
        Ok(raw)
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Malformed("trailing bytes after last record".into())),
        }
    }
}

fn put_f32s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for &x in xs {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Malformed(format!("{what} {n} does not fit in u32")))
}

pub fn write_dataset_to<W: Write>(ds: &EmbeddingDataset, w: &mut W) -> Result<()> {
    ds.validate()?;
    let some = ds.samples.iter().filter(|s| s.group.is_some()).count();
    if some != 0 && some != ds.samples.len() {
        return Err(Error::Malformed(
            "either every sample or none carries a group id".into(),
        ));
    }
    let flags = if ds.has_groups() { FLAG_GROUPS } else { 0 };
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(ds.d_id, "d_id")?.to_le_bytes())?;
    w.write_all(&u32_of(ds.d_backbone, "d_backbone")?.to_le_bytes())?;
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&[0u8; 12])?;
    for s in &ds.samples {
        w.write_all(&[s.y, s.method])?;
        w.write_all(&0u16.to_le_bytes())?;
        if flags & FLAG_GROUPS != 0 {
            w.write_all(&s.group.unwrap_or(0).to_le_bytes())?;
        }
        put_f32s(w, s.f_id.as_slice())?;
        put_f32s(w, s.f_vis.as_slice())?;
    }
    Ok(())
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(r: R, scalar_cap: u64, source: &str) -> Result<EmbeddingDataset> {
    let mut r = LeReader { inner: r };
    let magic: [u8; 8] = r.bytes("magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            path: source.into(),
            expected: String::from_utf8_lossy(DATASET_MAGIC).into(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let d_id = r.u32("d_id")? as usize;
    let d_backbone = r.u32("d_backbone")? as usize;
    let count = r.u64("count")?;
    let flags = r.u32("flags")?;
    let reserved: [u8; 12] = r.bytes("reserved")?;
    if d_id == 0 || d_backbone == 0 {
        return Err(Error::DimMismatch(format!(
            "header dims ({d_id}, {d_backbone}) must be positive"
        )));
    }
    if flags & !FLAG_GROUPS != 0 || reserved != [0u8; 12] {
        return Err(Error::Malformed("unknown flags or nonzero reserved bytes".into()));
    }
    let requested = count.saturating_mul((d_id + d_backbone) as u64);
    if requested > scalar_cap {
        return Err(Error::TooLarge {
            requested,
            cap: scalar_cap,
        });
    }
    let has_groups = flags & FLAG_GROUPS != 0;
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let what = format!("record {i} of {count}");
        let y = r.u8(&what)?;
        let method = r.u8(&what)?;
        let pad = r.u16(&what)?;
        if y > 1 {
            return Err(Error::InvalidLabel(y));
        }
        if pad != 0 {
            return Err(Error::Malformed(format!("nonzero padding in record {i}")));
        }
        let group = if has_groups { Some(r.u32(&what)?) } else { None };
        let f_id = Vector::new(r.f32s(d_id, &what)?)?;
        let f_vis = Vector::new(r.f32s(d_backbone, &what)?)?;
        samples.push(Sample {
            f_id,
            f_vis,
            y,
            method,
            group,
        });
    }
    r.expect_eof()?;
    Ok(EmbeddingDataset {
        d_id,
        d_backbone,
        samples,
        provenance: source.to_string(),
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    read_dataset_capped(path, DEFAULT_SCALAR_CAP)
}

pub fn read_dataset_capped(path: impl AsRef<Path>, scalar_cap: u64) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    read_dataset_from(r, scalar_cap, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    dims: Dims,
    mode: Mode,
    alpha: f64,
    beta: f64,
    optim: OptimConfig,
    seed: u64,
    history: Vec<EpochRecord>,
    best_val_auc: f64,
    epoch_of_best: usize,
}

pub fn write_checkpoint_to<W: Write>(ck: &Checkpoint, w: &mut W) -> Result<()> {
    let model = &ck.config.model;
    ck.params.check_layout(model.mode, model.dims)?;
    let header = CheckpointHeader {
        dims: model.dims,
        mode: model.mode,
        alpha: model.alpha,
        beta: model.beta,
        optim: ck.config.optim,
        seed: ck.config.seed,
        history: ck.history.clone(),
        best_val_auc: ck.best_val_auc,
        epoch_of_best: ck.epoch_of_best,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in ck.params.views() {
        let name = t.name.as_str().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&u32_of(t.rows, "rows")?.to_le_bytes())?;
        w.write_all(&u32_of(t.cols, "cols")?.to_le_bytes())?;
        put_f32s(w, t.data)?;
    }
    Ok(())
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(ck, &mut w)?;
    w.flush()?;
    Ok(())
}

const MAX_HEADER: u64 = 64 << 20;

pub fn read_checkpoint_from<R: Read>(r: R, source: &str) -> Result<Checkpoint> {
    let mut r = LeReader { inner: r };
    let magic: [u8; 8] = r.bytes("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: source.into(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u64("header length")?;
    if len > MAX_HEADER {
        return Err(Error::TooLarge {
            requested: len,
            cap: MAX_HEADER,
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&r.vec(len as usize, "header")?)?;
    let model = ModelConfig {
        mode: header.mode,
        alpha: header.alpha,
        beta: header.beta,
        dims: header.dims,
    };
    model.validate()?;

    let mut params = SelfiParams::default();
    for (name, rows, cols) in header.mode.layout(header.dims) {
        let what = format!("tensor {name}");
        let name_len = r.u32(&what)? as usize;
        if name_len > 64 {
            return Err(Error::Malformed(format!("tensor name of length {name_len}")));
        }
        let got_name = String::from_utf8(r.vec(name_len, &what)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        let got_rows = r.u32(&what)? as usize;
        let got_cols = r.u32(&what)? as usize;
        if got_name != name.as_str() || got_rows != rows || got_cols != cols {
            return Err(Error::DimMismatch(format!(
                "checkpoint tensor {got_name}[{got_rows}x{got_cols}] where {} expects {name}[{rows}x{cols}]",
                header.mode
            )));
        }
        params.insert(name, rows, cols, r.f32s(rows * cols, &what)?)?;
    }
    r.expect_eof()?;
    Ok(Checkpoint {
        params,
        config: TrainConfig {
            optim: header.optim,
            seed: header.seed,
            model,
        },
        best_val_auc: header.best_val_auc,
        epoch_of_best: header.epoch_of_best,
        history: header.history,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    read_checkpoint_from(BufReader::new(File::open(path)?), &path.display().to_string())
}

/// Per-feature mean and standard deviation fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub id_mean: Vec<f64>,
    pub id_std: Vec<f64>,
    pub vis_mean: Vec<f64>,
    pub vis_std: Vec<f64>,
}

/// Features whose spread is below this are left untouched.
pub const MIN_STD: f64 = 1e-12;

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.clone().count() as f64;
    let mut mean = vec![0.0; width];
    for r in rows.clone() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

pub fn fit_standardizer(train: &EmbeddingDataset) -> Result<StandardizerStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset(
            "cannot fit a standardizer on an empty split".into(),
        ));
    }
    let (id_mean, id_std) = moments(train.samples.iter().map(|s| s.f_id.as_slice()), train.d_id);
    let (vis_mean, vis_std) = moments(train.samples.iter().map(|s| s.f_vis.as_slice()), train.d_backbone);
    Ok(StandardizerStats {
        id_mean,
        id_std,
        vis_mean,
        vis_std,
    })
}

fn standardize(v: &mut Vector, mean: &[f64], std: &[f64]) {
    for ((x, m), s) in v.as_mut_slice().iter_mut().zip(mean).zip(std) {
        if *s >= MIN_STD {
            *x = (*x - m) / s;
        }
    }
}

pub fn apply_standardizer(stats: &StandardizerStats, ds: &EmbeddingDataset) -> Result<EmbeddingDataset> {
    if stats.id_mean.len() != ds.d_id || stats.vis_mean.len() != ds.d_backbone {
        return Err(Error::DimMismatch("standardizer fitted on different dims".into()));
    }
    let mut out = ds.clone();
    for s in &mut out.samples {
        standardize(&mut s.f_id, &stats.id_mean, &stats.id_std);
        standardize(&mut s.f_vis, &stats.vis_mean, &stats.vis_std);
    }
    Ok(out)
}

/// The JSON run configuration consumed by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: OptimConfig,
    pub benchmark: BenchmarkConfig,
    /// Standardize features with statistics of the training split.
    pub standardize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let benchmark = BenchmarkConfig::default();
        RunConfig {
            seed: 0,
            model: ModelConfig::new(Mode::FullSelfi, benchmark.dims()),
            train: OptimConfig::default(),
            benchmark,
            standardize: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.benchmark.validate()?;
        let bd = self.benchmark.dims();
        if bd.d_id != self.model.dims.d_id || bd.d_backbone != self.model.dims.d_backbone {
            return Err(Error::Config(format!(
                "benchmark dims ({}, {}) disagree with model dims ({}, {})",
                bd.d_id, bd.d_backbone, self.model.dims.d_id, self.model.dims.d_backbone
            )));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optim: self.train,
            seed,
            model: self.model,
        }
    }

    /// Canonical JSON, the input to the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params_for;

    fn tiny(groups: bool, n: usize) -> EmbeddingDataset {
        let samples = (0..n)
            .map(|i| Sample {
                f_id: Vector::new(vec![i as f64 * 0.5, -1.25, 3.0]).unwrap(),
                f_vis: Vector::new(vec![0.25 * i as f64, 2.0]).unwrap(),
                y: (i % 2) as u8,
                method: (i % 3) as u8,
                group: groups.then_some(i as u32 / 2),
            })
            .collect();
        EmbeddingDataset::new(3, 2, samples, "tiny").unwrap()
    }

    fn bytes(ds: &EmbeddingDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset_to(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn dataset_round_trip() {
        for groups in [false, true] {
            let ds = tiny(groups, 7);
            let buf = bytes(&ds);
            assert_eq!(&buf[..8], DATASET_MAGIC);
            let per = 4 + if groups { 4 } else { 0 } + 4 * 5;
            assert_eq!(buf.len(), 44 + 7 * per);
            let back = read_dataset_from(&buf[..], DEFAULT_SCALAR_CAP, "mem").unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn values_narrow_to_f32() {
        let mut ds = tiny(false, 1);
        ds.samples[0].f_id[0] = 0.1;
        let back = read_dataset_from(&bytes(&ds)[..], DEFAULT_SCALAR_CAP, "mem").unwrap();
        assert_eq!(back.samples[0].f_id[0], 0.1f32 as f64);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let ds = tiny(false, 0);
        let back = read_dataset_from(&bytes(&ds)[..], DEFAULT_SCALAR_CAP, "mem").unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!((back.d_id, back.d_backbone), (3, 2));
    }

    #[test]
    fn distinct_read_errors() {
        let good = bytes(&tiny(true, 3));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_dataset_from(&bad[..], DEFAULT_SCALAR_CAP, "m"),
            Err(Error::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[8] = 2;
        assert!(matches!(
            read_dataset_from(&bad[..], DEFAULT_SCALAR_CAP, "m"),
            Err(Error::Version { found: 2, .. })
        ));

        let cut = &good[..good.len() - 3];
        assert!(matches!(
            read_dataset_from(cut, DEFAULT_SCALAR_CAP, "m"),
            Err(Error::Truncated(_))
        ));

        let mut bad = good.clone();
        bad[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_dataset_from(&bad[..], DEFAULT_SCALAR_CAP, "m"),
            Err(Error::DimMismatch(_))
        ));

        assert!(matches!(
            read_dataset_from(&good[..], 10, "m"),
            Err(Error::TooLarge { .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            read_dataset_from(&bad[..], DEFAULT_SCALAR_CAP, "m"),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn cap_checked_before_allocation() {
        let mut header = Vec::new();
        header.extend_from_slice(DATASET_MAGIC);
        header.extend_from_slice(&1u32.to_le_bytes());
        header.extend_from_slice(&512u32.to_le_bytes());
        header.extend_from_slice(&768u32.to_le_bytes());
        header.extend_from_slice(&u64::MAX.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        header.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            read_dataset_from(&header[..], DEFAULT_SCALAR_CAP, "m"),
            Err(Error::TooLarge { .. })
        ));
    }

    fn checkpoint(mode: Mode) -> Checkpoint {
        let dims = Dims::new(3, 4, 2).unwrap();
        let cfg = ModelConfig::new(mode, dims);
        Checkpoint {
            params: init_params_for(mode, dims, 5),
            config: TrainConfig::new(cfg, 11),
            best_val_auc: 0.8125,
            epoch_of_best: 2,
            history: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.7,
                    train_acc: 0.5,
                    val_auc: 0.6,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.1 / 3.0,
                    train_acc: 0.9,
                    val_auc: 0.8125,
                },
            ],
        }
    }

    #[test]
    fn checkpoint_round_trip_every_mode() {
        for mode in Mode::ALL {
            let ck = checkpoint(mode);
            let mut buf = Vec::new();
            write_checkpoint_to(&ck, &mut buf).unwrap();
            let back = read_checkpoint_from(&buf[..], "mem").unwrap();
            assert_eq!(back, ck, "{mode}");
        }
    }

    #[test]
    fn checkpoint_shape_mismatch() {
        let ck = checkpoint(Mode::FullSelfi);
        let mut buf = Vec::new();
        write_checkpoint_to(&ck, &mut buf).unwrap();
        // rewrite the header to claim a wider backbone
        let len = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&buf[20..20 + len]).unwrap();
        let patched = json.replace("\"d_backbone\":4", "\"d_backbone\":5");
        let mut out = buf[..12].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&buf[20 + len..]);
        assert!(matches!(
            read_checkpoint_from(&out[..], "mem"),
            Err(Error::DimMismatch(_))
        ));

        let mut bad = buf.clone();
        bad[3] = b'?';
        assert!(matches!(
            read_checkpoint_from(&bad[..], "mem"),
            Err(Error::BadMagic { .. })
        ));
        let mut bad = buf;
        bad[8] = 9;
        assert!(matches!(
            read_checkpoint_from(&bad[..], "mem"),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn standardizer_properties() {
        let mut ds = tiny(false, 9);
        for (i, s) in ds.samples.iter_mut().enumerate() {
            s.f_vis[0] = (i as f64).sin() * 4.0 + 1.0;
        }
        let stats = fit_standardizer(&ds).unwrap();
        let z = apply_standardizer(&stats, &ds).unwrap();
        let after = fit_standardizer(&z).unwrap();
        // f_id[0] and f_vis[0] vary, the rest are constant
        for (m, s) in [
            (after.id_mean[0], after.id_std[0]),
            (after.vis_mean[0], after.vis_std[0]),
        ] {
            assert!(m.abs() <= 1e-9 && (s - 1.0).abs() <= 1e-6);
        }
        for (a, b) in z.samples.iter().zip(&ds.samples) {
            assert_eq!(a.f_id[1], b.f_id[1]);
            assert_eq!(a.f_vis[1], b.f_vis[1]);
        }

        // second pass with the original stats rescales again
        let twice = apply_standardizer(&stats, &z).unwrap();
        assert_ne!(twice, z);
        assert!(fit_standardizer(&tiny(false, 0)).is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        assert!(RunConfig::from_json("{}").is_ok());
        assert!(matches!(RunConfig::from_json(r#"{"sed": 1}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#),
            Err(Error::Config(_))
        ));
        let cfg = RunConfig::from_json(r#"{"seed": 3, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.lr, 0.0002);
        assert_eq!(
            cfg.hash_hex(),
            RunConfig::from_json(&cfg.canonical_json()).unwrap().hash_hex()
        );
        assert_ne!(cfg.hash_hex(), RunConfig::default().hash_hex());
    }
}

//! Datasets of `(image, raw attributes)` pairs built from procedural sources
//! or imported image folders, split by source and persisted as a JSON-lines
//! manifest plus binary image shards.
//!
//! Shard layout (`PTXD`): magic, `u32` version, `u32` image count, then per
//! image `u32` channels, height, width followed by little-endian `f32` data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeStats, AttributeVector, ATTRIBUTE_NAMES, NUM_ATTRIBUTES};
use crate::augment::{crop, crop_windows, resize};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::texture::{params_to_attributes, render_window, TextureParams};

pub const SHARD_MAGIC: &[u8; 4] = b"PTXD";
pub const SHARD_VERSION: u32 = 1;
const IMAGES_PER_SHARD: usize = 1024;
const MANIFEST: &str = "manifest.jsonl";
const METADATA: &str = "dataset.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic { params: TextureParams },
    External { file: String },
}

/// Window of the source image a sample was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub source: usize,
    pub split: Split,
    pub window: CropWindow,
    pub provenance: Provenance,
    /// Raw (unscaled) attributes, inherited from the source.
    pub attributes: AttributeVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub sources: usize,
    pub side: usize,
    pub crop: usize,
    pub step: usize,
    pub image_size: usize,
    pub channels: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sources: 200,
            side: 64,
            crop: 48,
            step: 8,
            image_size: 64,
            channels: 1,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one source".into()));
        }
        if self.image_size == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("image size and channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction {} is outside [0, 1)",
                self.validation_fraction
            )));
        }
        crop_windows(self.side, self.side, self.crop, self.step)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Metadata {
    image_size: usize,
    channels: usize,
    samples: usize,
    config: Option<DatasetConfig>,
    stats: Option<AttributeStats>,
}

/// Ordered samples with a source-disjoint split. Synthetic images are
/// rendered on demand unless [`materialize`](Dataset::materialize)d.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub image_size: usize,
    pub channels: usize,
    pub records: Vec<SampleRecord>,
    /// Computed on the training split; absent when it holds fewer than two
    /// sources.
    pub stats: Option<AttributeStats>,
    pub config: Option<DatasetConfig>,
    images: Vec<Option<Tensor<f32>>>,
}

/// Pick validation sources by a seeded shuffle. At least one source lands
/// on each side whenever there are two or more and the fraction is positive.
fn validation_sources(sources: usize, fraction: f64, seed: u64) -> BTreeSet<usize> {
    let mut n = (sources as f64 * fraction).round() as usize;
    if fraction > 0.0 && sources >= 2 {
        n = n.clamp(1, sources - 1);
    } else if sources < 2 {
        n = 0;
    }
    let mut ids: Vec<usize> = (0..sources).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    ids.shuffle(&mut rng);
    ids.into_iter().take(n).collect()
}

fn train_stats(records: &[SampleRecord]) -> Result<Option<AttributeStats>> {
    let train: Vec<&SampleRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    let sources: BTreeSet<usize> = train.iter().map(|r| r.source).collect();
    if sources.len() < 2 {
        return Ok(None);
    }
    AttributeStats::from_samples(train.iter().map(|r| &r.attributes)).map(Some)
}

/// Random sources expanded through the crop grid. Every crop inherits its
/// source's attributes; images are rendered lazily.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let windows = crop_windows(config.side, config.side, config.crop, config.step)?;
    let validation = validation_sources(config.sources, config.validation_fraction, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.sources * windows.len());
    for source in 0..config.sources {
        let params = TextureParams::sample(&mut rng);
        let attributes = params_to_attributes(&params);
        let split = if validation.contains(&source) {
            Split::Validation
        } else {
            Split::Train
        };
        for &(top, left) in &windows {
            records.push(SampleRecord {
                id: records.len(),
                source,
                split,
                window: CropWindow {
                    top,
                    left,
                    size: config.crop,
                },
                provenance: Provenance::Synthetic { params },
                attributes,
            });
        }
    }
    let stats = train_stats(&records)?;
    let n = records.len();
    Ok(Dataset {
        image_size: config.image_size,
        channels: config.channels,
        records,
        stats,
        config: Some(config.clone()),
        images: vec![None; n],
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.id)
            .collect()
    }

    pub fn stats(&self) -> Result<&AttributeStats> {
        self.stats.as_ref().ok_or_else(|| {
            Error::StatsMismatch("dataset has no attribute statistics (fewer than two training sources)".into())
        })
    }

    /// `[c, s, s]` image of sample `i`.
    pub fn image(&self, i: usize) -> Result<Tensor<f32>> {
        let rec = self
            .records
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range")))?;
        if let Some(img) = &self.images[i] {
            return Ok(img.clone());
        }
        match &rec.provenance {
            Provenance::Synthetic { params } => {
                let w = rec.window;
                let raw = render_window(params, w.top, w.left, w.size, w.size, self.channels)?;
                resize(&raw, self.image_size, self.image_size)
            }
            Provenance::External { file } => Err(Error::InvalidArgument(format!(
                "image for sample {i} ({file}) is not loaded"
            ))),
        }
    }

    pub fn materialize(&mut self) -> Result<()> {
        for i in 0..self.records.len() {
            if self.images[i].is_none() {
                self.images[i] = Some(self.image(i)?);
            }
        }
        Ok(())
    }

    /// Images of `indices` stacked into `[n, c, s, s]`.
    pub fn batch_images(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let imgs = indices.iter().map(|&i| self.image(i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
        let stacked = Tensor::stack_batch(&refs)?;
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(refs[0].shape());
        stacked.reshape(&shape)
    }

    /// Scaled attributes of `indices` as `[n, 12]`.
    pub fn batch_targets(&self, indices: &[usize], stats: &AttributeStats) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(indices.len() * NUM_ATTRIBUTES);
        for &i in indices {
            let scaled = stats.scale(&self.records[i].attributes)?;
            data.extend(scaled.0.iter().map(|&v| v as f32));
        }
        Tensor::new(vec![indices.len(), NUM_ATTRIBUTES], data)
    }

    /// Write `manifest.jsonl`, `dataset.json` and image shards into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST))?);
        for rec in &self.records {
            serde_json::to_writer(&mut manifest, rec)?;
            manifest.write_all(b"\n")?;
        }
        manifest.flush()?;
        let meta = Metadata {
            image_size: self.image_size,
            channels: self.channels,
            samples: self.records.len(),
            config: self.config.clone(),
            stats: self.stats.clone(),
        };
        fs::write(dir.join(METADATA), serde_json::to_vec_pretty(&meta)?)?;
        for (shard, chunk) in (0..self.records.len()).collect::<Vec<_>>().chunks(IMAGES_PER_SHARD).enumerate() {
            let imgs = chunk.iter().map(|&i| self.image(i)).collect::<Result<Vec<_>>>()?;
            write_shard(&shard_path(dir, shard), &imgs)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta: Metadata = serde_json::from_slice(&fs::read(dir.join(METADATA))?)?;
        let mut records = Vec::with_capacity(meta.samples);
        for line in BufReader::new(File::open(dir.join(MANIFEST))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str::<SampleRecord>(&line)?);
            }
        }
        if records.len() != meta.samples {
            return Err(Error::Format(format!(
                "manifest lists {} samples, metadata {}",
                records.len(),
                meta.samples
            )));
        }
        let mut images = Vec::with_capacity(records.len());
        let shards = records.len().div_ceil(IMAGES_PER_SHARD);
        for shard in 0..shards {
            images.extend(read_shard(&shard_path(dir, shard))?.into_iter().map(Some));
        }
        if images.len() != records.len() {
            return Err(Error::Format(format!(
                "shards hold {} images for {} samples",
                images.len(),
                records.len()
            )));
        }
        Ok(Dataset {
            image_size: meta.image_size,
            channels: meta.channels,
            records,
            stats: meta.stats,
            config: meta.config,
            images,
        })
    }
}

fn shard_path(dir: &Path, shard: usize) -> PathBuf {
    dir.join(format!("images-{shard:05}.ptxd"))
}

pub fn write_shard(path: &Path, images: &[Tensor<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&SHARD_VERSION.to_le_bytes())?;
    w.write_all(&(images.len() as u32).to_le_bytes())?;
    for img in images {
        let s = img.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("shard images must be [c, h, w], got {s:?}")));
        }
        for &d in s {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in img.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_shard(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SHARD_MAGIC {
        return Err(Error::Format(format!("{} is not an image shard", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != SHARD_VERSION {
        return Err(Error::Format(format!(
            "{}: shard version {version}, expected {SHARD_VERSION}",
            path.display()
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = vec![read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

/// Decode an image file into `[channels, h, w]` with values in `[-1, 1]`.
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match channels {
        1 => img.to_luma32f().into_raw(),
        3 => {
            let rgb = img.to_rgb32f().into_raw();
            (0..3).flat_map(|c| rgb.iter().skip(c).step_by(3).copied().collect::<Vec<_>>()).collect()
        }
        c => return Err(Error::InvalidArgument(format!("unsupported channel count {c}"))),
    };
    Tensor::new(vec![channels, h, w], data.into_iter().map(|v| v * 2.0 - 1.0).collect())
}

/// Import a folder of images with an attribute CSV. The CSV header names
/// the 12 attributes (any order) and optionally a `file` column; without
/// one, rows follow the sorted image file names. Each image is a source,
/// expanded with the crop grid of `config` (its `side` and `sources` are
/// ignored) and resized to `config.image_size`.
pub fn import_folder(images: &Path, csv_path: &Path, config: &DatasetConfig) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", csv_path.display())))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut cols = [0usize; NUM_ATTRIBUTES];
    for (j, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        cols[j] = column(name).ok_or_else(|| Error::Format(format!("attribute CSV lacks column `{name}`")))?;
    }
    let file_col = column("file");

    let mut files: Vec<PathBuf> = fs::read_dir(images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();

    let mut rows: Vec<(PathBuf, AttributeVector)> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", csv_path.display())))?;
        let mut v = [0.0; NUM_ATTRIBUTES];
        for j in 0..NUM_ATTRIBUTES {
            let cell = row.get(cols[j]).unwrap_or("");
            v[j] = cell.trim().parse().map_err(|_| {
                Error::Format(format!("row {}: `{cell}` is not a number ({})", line + 1, ATTRIBUTE_NAMES[j]))
            })?;
        }
        let path = match file_col {
            Some(c) => images.join(row.get(c).unwrap_or("").trim()),
            None => files
                .get(line)
                .cloned()
                .ok_or_else(|| Error::Format(format!("CSV has more rows than images in {}", images.display())))?,
        };
        rows.push((path, AttributeVector(v)));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("attribute CSV has no rows".into()));
    }

    let validation = validation_sources(rows.len(), config.validation_fraction, config.seed);
    let mut records = Vec::new();
    let mut imgs = Vec::new();
    let mut seen: BTreeMap<PathBuf, usize> = BTreeMap::new();
    for (source, (path, attributes)) in rows.into_iter().enumerate() {
        if let Some(prev) = seen.insert(path.clone(), source) {
            return Err(Error::Format(format!("{} listed twice (rows {prev} and {source})", path.display())));
        }
        let img = load_image(&path, config.channels)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let size = config.crop.min(h).min(w);
        let windows = crop_windows(h, w, size, config.step)?;
        let split = if validation.contains(&source) {
            Split::Validation
        } else {
            Split::Train
        };
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        for (top, left) in windows {
            let piece = crop(&img, top, left, size, size)?;
            imgs.push(Some(resize(&piece, config.image_size, config.image_size)?));
            records.push(SampleRecord {
                id: records.len(),
                source,
                split,
                window: CropWindow { top, left, size },
                provenance: Provenance::External { file: file.clone() },
                attributes,
            });
        }
    }
    let stats = train_stats(&records)?;
    Ok(Dataset {
        image_size: config.image_size,
        channels: config.channels,
        records,
        stats,
        config: None,
        images: imgs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(sources: usize) -> DatasetConfig {
        DatasetConfig {
            sources,
            side: 24,
            crop: 16,
            step: 8,
            image_size: 12,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn sample_counts() {
        let cfg = DatasetConfig {
            sources: 450,
            side: 512,
            crop: 448,
            step: 8,
            image_size: 299,
            ..DatasetConfig::default()
        };
        assert_eq!(build_dataset(&cfg).unwrap().len(), 36450);
        let desk = DatasetConfig {
            sources: 50,
            ..DatasetConfig::default()
        };
        assert_eq!(build_dataset(&desk).unwrap().len(), 450);
        let single = DatasetConfig {
            sources: 1,
            side: 32,
            crop: 32,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&single).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.stats.is_none());
        assert!(ds.stats().is_err());
    }

    #[test]
    fn crops_inherit_attributes_and_split() {
        let ds = build_dataset(&small(10)).unwrap();
        assert_eq!(ds.len(), 40);
        for pair in ds.records.chunks(4) {
            assert!(pair.iter().all(|r| r.attributes == pair[0].attributes && r.split == pair[0].split));
        }
        assert_eq!(ds.indices(Split::Validation).len(), 4);
        let train: Vec<AttributeVector> = ds
            .indices(Split::Train)
            .iter()
            .map(|&i| ds.records[i].attributes)
            .collect();
        assert_eq!(ds.stats.as_ref().unwrap(), &AttributeStats::from_samples(&train).unwrap());
    }

    #[test]
    fn images_match_crop_of_source() {
        let cfg = DatasetConfig {
            image_size: 16,
            ..small(2)
        };
        let ds = build_dataset(&cfg).unwrap();
        let Provenance::Synthetic { params } = ds.records[3].provenance else {
            panic!("synthetic")
        };
        let full = render_window(&params, 0, 0, 24, 24, 1).unwrap();
        let w = ds.records[3].window;
        assert_eq!((w.top, w.left), (8, 8));
        assert_eq!(ds.image(3).unwrap(), crop(&full, 8, 8, 16, 16).unwrap());
    }

    #[test]
    fn reproducible() {
        let a = build_dataset(&small(5)).unwrap();
        let b = build_dataset(&small(5)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.batch_images(&[0, 7]).unwrap(), b.batch_images(&[0, 7]).unwrap());
        let c = build_dataset(&DatasetConfig { seed: 1, ..small(5) }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn bad_grid_is_rejected() {
        let cfg = DatasetConfig {
            side: 30,
            ..small(3)
        };
        let msg = build_dataset(&cfg).unwrap_err().to_string();
        assert!(msg.contains("height"), "{msg}");
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&small(4)).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert!(back.records == ds.records, "records differ after reload");
        assert_eq!(back.stats, ds.stats);
        for i in 0..ds.len() {
            assert_eq!(back.image(i).unwrap(), ds.image(i).unwrap());
        }
        let mut bytes = fs::read(shard_path(dir.path(), 0)).unwrap();
        bytes[4] = 9;
        fs::write(shard_path(dir.path(), 0), bytes).unwrap();
        assert!(Dataset::load(dir.path()).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn batches_have_expected_shapes() {
        let ds = build_dataset(&small(4)).unwrap();
        let x = ds.batch_images(&[0, 1, 2]).unwrap();
        assert_eq!(x.shape(), &[3, 1, 12, 12]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let y = ds.batch_targets(&[0, 1], ds.stats().unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 12]);
        assert!(y.data().iter().all(|v| v.abs() <= 0.9 + 1e-6));
    }
}

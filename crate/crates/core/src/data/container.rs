//! Trajectory container: one JSON index plus chunked binary shards.
//!
//! Shards hold records back to back; the index lists every record's shard,
//! offset, and length with its metadata. All integers are little-endian;
//! tensors are row-major `f32`; frames are lossless PNG. The full byte
//! layout is documented in `docs/dataset_format.md`.

use super::Demonstration;
use crate::error::{Error, Result};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;
const RECORD_MAGIC: u32 = 0x5342_4452; // "SBDR"
const SHARD_TARGET_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordEntry {
    pub shard: u32,
    pub offset: u64,
    pub len: u64,
    pub task: String,
    pub source: String,
    pub seed: u64,
    pub steps: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetIndex {
    pub version: u32,
    pub image_height: u32,
    pub image_width: u32,
    pub views: Vec<String>,
    pub d_prop: u32,
    pub d_act: u32,
    pub tasks: Vec<String>,
    /// Record count per source tag.
    pub sources: BTreeMap<String, u64>,
    pub shard_files: Vec<String>,
    pub records: Vec<RecordEntry>,
}

/// An on-disk trajectory dataset. Readers are concurrent (each `get` opens
/// the shard independently); a single writer owns a dataset during
/// creation.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
}

impl TrajectoryDataset {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Err(Error::MissingArtifact(index_path.display().to_string()));
        }
        let index: DatasetIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
        if index.version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "dataset version {} unsupported (want {FORMAT_VERSION})",
                index.version
            )));
        }
        let mut per_source: BTreeMap<String, u64> = BTreeMap::new();
        for r in &index.records {
            *per_source.entry(r.source.clone()).or_insert(0) += 1;
            if r.shard as usize >= index.shard_files.len() {
                return Err(Error::Corrupt("record points past the shard list".into()));
            }
        }
        if per_source != index.sources {
            return Err(Error::Corrupt(
                "per-source counts do not match the metadata".into(),
            ));
        }
        Ok(TrajectoryDataset { dir, index })
    }

    pub fn len(&self) -> usize {
        self.index.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.records.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<Demonstration> {
        let entry = self
            .index
            .records
            .get(i)
            .ok_or_else(|| Error::contract(format!("record {i} out of range")))?;
        let shard_path = self
            .dir
            .join(&self.index.shard_files[entry.shard as usize]);
        let mut file = File::open(&shard_path)?;
        file.seek(SeekFrom::Start(entry.offset))?;
        let mut bytes = vec![0u8; entry.len as usize];
        file.read_exact(&mut bytes)
            .map_err(|_| Error::Corrupt("record extends past the shard".into()))?;
        let demo = decode_record(&bytes, entry)?;
        demo.validate()?;
        Ok(demo)
    }

    /// Indices of every record with the given task.
    pub fn indices_for_task(&self, task: &str) -> Vec<usize> {
        self.index
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.task == task)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Streaming writer. `finalize` writes the index; dropping without
/// finalizing leaves no readable dataset.
pub struct DatasetWriter {
    dir: PathBuf,
    views: Vec<String>,
    image_hw: (u32, u32),
    d_prop: u32,
    d_act: u32,
    records: Vec<RecordEntry>,
    shard_files: Vec<String>,
    current: Option<File>,
    current_len: u64,
}

impl DatasetWriter {
    pub fn create(
        dir: impl Into<PathBuf>,
        views: &[String],
        image_hw: (u32, u32),
        d_prop: u32,
        d_act: u32,
    ) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DatasetWriter {
            dir,
            views: views.to_vec(),
            image_hw,
            d_prop,
            d_act,
            records: Vec::new(),
            shard_files: Vec::new(),
            current: None,
            current_len: 0,
        })
    }

    fn shard(&mut self) -> Result<(&mut File, u32, u64)> {
        let rotate = self.current.is_none() || self.current_len >= SHARD_TARGET_BYTES;
        if rotate {
            let name = format!("shard-{:05}.bin", self.shard_files.len());
            let file = File::create(self.dir.join(&name))?;
            self.shard_files.push(name);
            self.current = Some(file);
            self.current_len = 0;
        }
        let shard_id = (self.shard_files.len() - 1) as u32;
        let offset = self.current_len;
        Ok((self.current.as_mut().expect("shard open"), shard_id, offset))
    }

    pub fn add(&mut self, demo: &Demonstration) -> Result<()> {
        demo.validate()?;
        if demo.frames.len() != self.views.len() {
            return Err(Error::contract(format!(
                "demo has {} views, dataset stores {}",
                demo.frames.len(),
                self.views.len()
            )));
        }
        if !demo.proprio.is_empty() && demo.proprio[0].len() != self.d_prop as usize {
            return Err(Error::contract("proprio width mismatch"));
        }
        if !demo.actions.is_empty() && demo.actions[0].len() != self.d_act as usize {
            return Err(Error::contract("action width mismatch"));
        }
        let bytes = encode_record(demo)?;
        let (file, shard, offset) = self.shard()?;
        file.write_all(&bytes)?;
        self.current_len += bytes.len() as u64;
        self.records.push(RecordEntry {
            shard,
            offset,
            len: bytes.len() as u64,
            task: demo.task.clone(),
            source: demo.source.clone(),
            seed: demo.seed,
            steps: demo.actions.len() as u32,
        });
        Ok(())
    }

    pub fn finalize(mut self) -> Result<TrajectoryDataset> {
        if let Some(f) = self.current.as_mut() {
            f.flush()?;
        }
        let mut sources = BTreeMap::new();
        let mut tasks: Vec<String> = Vec::new();
        for r in &self.records {
            *sources.entry(r.source.clone()).or_insert(0u64) += 1;
            if !tasks.contains(&r.task) {
                tasks.push(r.task.clone());
            }
        }
        let index = DatasetIndex {
            version: FORMAT_VERSION,
            image_height: self.image_hw.0,
            image_width: self.image_hw.1,
            views: self.views.clone(),
            d_prop: self.d_prop,
            d_act: self.d_act,
            tasks,
            sources,
            shard_files: self.shard_files.clone(),
            records: self.records.clone(),
        };
        let json = serde_json::to_vec_pretty(&index)?;
        fs::write(self.dir.join("index.json"), json)?;
        TrajectoryDataset::open(&self.dir)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt("record truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn encode_record(demo: &Demonstration) -> Result<Vec<u8>> {
    let t_actions = demo.actions.len() as u32;
    let d_prop = demo.proprio.first().map_or(0, |p| p.len()) as u16;
    let d_act = demo.actions.first().map_or(0, |a| a.len()) as u16;
    let mut out = Vec::new();
    out.extend_from_slice(&RECORD_MAGIC.to_le_bytes());
    out.extend_from_slice(&(FORMAT_VERSION as u16).to_le_bytes());
    out.extend_from_slice(&(demo.frames.len() as u16).to_le_bytes());
    out.extend_from_slice(&t_actions.to_le_bytes());
    out.extend_from_slice(&d_prop.to_le_bytes());
    out.extend_from_slice(&d_act.to_le_bytes());
    out.extend_from_slice(&demo.seed.to_le_bytes());
    out.extend_from_slice(&(demo.language.len() as u32).to_le_bytes());
    out.extend_from_slice(demo.language.as_bytes());
    for row in &demo.proprio {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for row in &demo.actions {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for view in &demo.frames {
        for frame in view {
            let png = encode_png(frame)?;
            out.extend_from_slice(&(png.len() as u32).to_le_bytes());
            out.extend_from_slice(&png);
        }
    }
    Ok(out)
}

fn decode_record(bytes: &[u8], entry: &RecordEntry) -> Result<Demonstration> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.u32()? != RECORD_MAGIC {
        return Err(Error::Corrupt("bad record magic".into()));
    }
    if c.u16()? != FORMAT_VERSION as u16 {
        return Err(Error::Corrupt("bad record version".into()));
    }
    let n_views = c.u16()? as usize;
    let t_actions = c.u32()? as usize;
    let d_prop = c.u16()? as usize;
    let d_act = c.u16()? as usize;
    let seed = c.u64()?;
    let lang_len = c.u32()? as usize;
    let language = String::from_utf8(c.take(lang_len)?.to_vec())
        .map_err(|_| Error::Corrupt("record language is not utf-8".into()))?;
    let frames_per_view = t_actions + 1;
    let mut proprio = Vec::with_capacity(frames_per_view);
    for _ in 0..frames_per_view {
        let mut row = Vec::with_capacity(d_prop);
        for _ in 0..d_prop {
            row.push(c.f32()?);
        }
        proprio.push(row);
    }
    let mut actions = Vec::with_capacity(t_actions);
    for _ in 0..t_actions {
        let mut row = Vec::with_capacity(d_act);
        for _ in 0..d_act {
            row.push(c.f32()?);
        }
        actions.push(row);
    }
    let mut frames = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let mut view = Vec::with_capacity(frames_per_view);
        for _ in 0..frames_per_view {
            let len = c.u32()? as usize;
            let png = c.take(len)?;
            let img = image::load_from_memory_with_format(png, image::ImageFormat::Png)
                .map_err(|e| Error::Corrupt(format!("bad frame png: {e}")))?
                .to_rgb8();
            view.push(img);
        }
        frames.push(view);
    }
    if c.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes in record".into()));
    }
    Ok(Demonstration {
        task: entry.task.clone(),
        language,
        source: entry.source.clone(),
        seed,
        frames,
        proprio,
        actions,
    })
}

pub(crate) fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes a whole dataset in one call.
pub fn write_dataset(
    dir: &Path,
    demos: &[Demonstration],
    views: &[String],
    image_hw: (u32, u32),
    d_prop: u32,
    d_act: u32,
) -> Result<TrajectoryDataset> {
    let mut writer = DatasetWriter::create(dir, views, image_hw, d_prop, d_act)?;
    for demo in demos {
        writer.add(demo)?;
    }
    writer.finalize()
}

//! Durable demonstration storage.
//!
//! A store is a directory holding `manifest.json` plus fixed-record shard
//! files of at most [`SHARD_CAPACITY`] frames each. Frames are stored as
//! captured (before cropping). Shard layout, all little-endian:
//!
//! ```text
//! "E2ED" | u32 version | u32 frame count | u16 width | u16 height
//! per record: RGB bytes | f32 steering | f32 throttle | u8 source | f64 timestamp | u32 crc32
//! ```
//!
//! The CRC covers the record bytes that precede it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vision::RawFrame;

pub const SHARD_MAGIC: &[u8; 4] = b"E2ED";
pub const FORMAT_VERSION: u32 = 1;
pub const SHARD_CAPACITY: usize = 1024;
pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER_LEN: u64 = 16;
const LABEL_LEN: usize = 4 + 4 + 1 + 8;

/// Raw controller steering range, ±.
pub const RAW_STEER_RANGE: f32 = 100.0;
/// Raw controller throttle range, ±.
pub const RAW_THROTTLE_RANGE: f32 = 60.0;
/// Inputs up to this fraction beyond the controller range are clamped.
pub const RANGE_TOLERANCE: f32 = 0.05;

/// Default validation share: 15,000 of 85,000 frames.
pub const DEFAULT_VAL_FRACTION: f64 = 15_000.0 / 85_000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("shard {shard}: bad magic")]
    BadMagic { shard: usize },
    #[error("shard {shard}: unsupported format version {found}")]
    VersionMismatch { shard: usize, found: u32 },
    #[error("shard {shard}: checksum mismatch in record {record}")]
    Checksum { shard: usize, record: usize },
    #[error("shard {shard}: truncated after {}", match .last_valid { Some(i) => format!("record {i}"), None => "header".to_string() })]
    Truncated { shard: usize, last_valid: Option<usize> },
    #[error("shard {shard}: resolution {found:?} differs from store resolution {expected:?}")]
    Resolution {
        shard: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("raw {name} {value} is outside ±{limit} by more than 5%")]
    ControlOutOfRange { name: &'static str, value: f32, limit: f32 },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0} already contains a store")]
    StoreExists(PathBuf),
    #[error("validation fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("cannot split {0} samples into non-empty train and validation sets")]
    TooSmallToSplit(usize),
    #[error("sample index {index} out of range for store of {total}")]
    IndexOutOfRange { index: usize, total: usize },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which demonstrator produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ExpertCenter,
    ExpertRecovery,
    ExpertBraking,
    Human,
}

impl Source {
    pub const ALL: [Source; 4] = [
        Source::ExpertCenter,
        Source::ExpertRecovery,
        Source::ExpertBraking,
        Source::Human,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::ExpertCenter => "expert_center",
            Source::ExpertRecovery => "expert_recovery",
            Source::ExpertBraking => "expert_braking",
            Source::Human => "human",
        }
    }
}

/// One labeled frame. Controls are normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: RawFrame,
    pub steering: f32,
    pub throttle: f32,
    pub source: Source,
    /// Simulation time of capture, seconds.
    pub timestamp: f64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("steering", self.steering), ("throttle", self.throttle)] {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(DatasetError::InvalidSample(format!("{name} {v} not in [-1, 1]")));
            }
        }
        if !self.timestamp.is_finite() {
            return Err(DatasetError::InvalidSample("non-finite timestamp".into()));
        }
        Ok(())
    }
}

/// Labels of a stored sample without its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub steering: f32,
    pub throttle: f32,
    pub source: Source,
    pub timestamp: f64,
}

fn normalize_axis(name: &'static str, raw: f32, limit: f32) -> Result<f32> {
    if !raw.is_finite() || raw.abs() > limit * (1.0 + RANGE_TOLERANCE) {
        return Err(DatasetError::ControlOutOfRange { name, value: raw, limit });
    }
    Ok((raw / limit).clamp(-1.0, 1.0))
}

/// Maps raw controller values (steering ±100, throttle ±60) to `[-1, 1]`.
pub fn normalize_controls(raw_steer: f32, raw_throttle: f32) -> Result<(f32, f32)> {
    Ok((
        normalize_axis("steering", raw_steer, RAW_STEER_RANGE)?,
        normalize_axis("throttle", raw_throttle, RAW_THROTTLE_RANGE)?,
    ))
}

pub fn denormalize_controls(steering: f32, throttle: f32) -> (f32, f32) {
    (steering * RAW_STEER_RANGE, throttle * RAW_THROTTLE_RANGE)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEntry {
    pub file: String,
    pub frames: usize,
    pub tags: BTreeMap<Source, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub width: usize,
    pub height: usize,
    pub total: usize,
    pub shards: Vec<ShardEntry>,
    /// Seeds of every collection run that appended to this store, in order.
    pub seeds: Vec<u64>,
}

impl Manifest {
    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(DatasetError::Manifest(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let sum: usize = self.shards.iter().map(|s| s.frames).sum();
        if sum != self.total {
            return Err(DatasetError::Manifest(format!(
                "shard counts sum to {sum}, total says {}",
                self.total
            )));
        }
        Ok(())
    }

    pub fn tag_counts(&self) -> BTreeMap<Source, usize> {
        let mut out = BTreeMap::new();
        for shard in &self.shards {
            for (&tag, &n) in &shard.tags {
                *out.entry(tag).or_default() += n;
            }
        }
        out
    }
}

fn shard_name(index: usize) -> String {
    format!("shard-{index:05}.e2ed")
}

/// Sharded append-only sample store. One writer at a time.
#[derive(Debug)]
pub struct SampleStore {
    dir: PathBuf,
    manifest: Manifest,
    writer: Option<File>,
}

impl SampleStore {
    /// Creates an empty store for frames of `width × height`.
    pub fn create(dir: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            return Err(DatasetError::StoreExists(dir));
        }
        if width > u16::MAX as usize || height > u16::MAX as usize || width == 0 || height == 0 {
            return Err(DatasetError::Manifest(format!("unsupported resolution {width}x{height}")));
        }
        let store = Self {
            dir,
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                width,
                height,
                total: 0,
                shards: Vec::new(),
                seeds: Vec::new(),
            },
            writer: None,
        };
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        manifest.check()?;
        Ok(Self {
            dir,
            manifest,
            writer: None,
        })
    }

    /// Opens an existing store, or creates one when the directory has none.
    pub fn open_or_create(dir: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join(MANIFEST_FILE).exists() {
            let store = Self::open(dir)?;
            if (store.manifest.width, store.manifest.height) != (width, height) {
                return Err(DatasetError::Manifest(format!(
                    "store resolution {}x{} differs from requested {width}x{height}",
                    store.manifest.width, store.manifest.height
                )));
            }
            Ok(store)
        } else {
            Self::create(dir, width, height)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.total
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.total == 0
    }

    fn record_len(&self) -> usize {
        self.manifest.width * self.manifest.height * 3 + LABEL_LEN + 4
    }

    pub fn record_seed(&mut self, seed: u64) -> Result<()> {
        self.manifest.seeds.push(seed);
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn start_shard(&mut self) -> Result<()> {
        let index = self.manifest.shards.len();
        let name = shard_name(index);
        let path = self.dir.join(&name);
        let mut f = File::create(&path).map_err(io_err(&path))?;
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(SHARD_MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        header.extend_from_slice(&(self.manifest.width as u16).to_le_bytes());
        header.extend_from_slice(&(self.manifest.height as u16).to_le_bytes());
        f.write_all(&header).map_err(io_err(&path))?;
        self.manifest.shards.push(ShardEntry {
            file: name,
            frames: 0,
            tags: BTreeMap::new(),
        });
        self.writer = Some(f);
        self.write_manifest()
    }

    fn ensure_writer(&mut self) -> Result<()> {
        let need_new = match self.manifest.shards.last() {
            None => true,
            Some(last) => last.frames >= SHARD_CAPACITY,
        };
        if need_new {
            return self.start_shard();
        }
        if self.writer.is_none() {
            let last = self.manifest.shards.last().expect("checked above");
            let path = self.dir.join(&last.file);
            let mut f = OpenOptions::new().read(true).write(true).open(&path).map_err(io_err(&path))?;
            let end = HEADER_LEN + (last.frames * self.record_len()) as u64;
            f.set_len(end).map_err(io_err(&path))?;
            f.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
            self.writer = Some(f);
        }
        Ok(())
    }

    pub fn append(&mut self, sample: &Sample) -> Result<()> {
        sample.validate()?;
        let (w, h) = (sample.frame.width(), sample.frame.height());
        if (w, h) != (self.manifest.width, self.manifest.height) {
            return Err(DatasetError::InvalidSample(format!(
                "frame {w}x{h} does not match store resolution {}x{}",
                self.manifest.width, self.manifest.height
            )));
        }
        self.ensure_writer()?;
        let mut rec = Vec::with_capacity(self.record_len());
        rec.extend_from_slice(sample.frame.pixels());
        rec.extend_from_slice(&sample.steering.to_le_bytes());
        rec.extend_from_slice(&sample.throttle.to_le_bytes());
        rec.push(sample.source.tag());
        rec.extend_from_slice(&sample.timestamp.to_le_bytes());
        let crc = crc32fast::hash(&rec);
        rec.extend_from_slice(&crc.to_le_bytes());

        let shard = self.manifest.shards.last_mut().expect("writer ensured");
        let path = self.dir.join(&shard.file);
        let f = self.writer.as_mut().expect("writer ensured");
        f.write_all(&rec).map_err(io_err(&path))?;
        shard.frames += 1;
        *shard.tags.entry(sample.source).or_default() += 1;
        self.manifest.total += 1;
        f.seek(SeekFrom::Start(8)).map_err(io_err(&path))?;
        f.write_all(&(shard.frames as u32).to_le_bytes()).map_err(io_err(&path))?;
        f.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        if shard.frames == SHARD_CAPACITY {
            self.writer = None;
            self.write_manifest()?;
        }
        Ok(())
    }

    /// Persists the manifest. Called automatically on drop.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(f) = self.writer.as_mut() {
            f.flush().map_err(io_err(&self.dir))?;
        }
        self.write_manifest()
    }

    fn open_shard(&self, index: usize) -> Result<(BufReader<File>, usize)> {
        let entry = &self.manifest.shards[index];
        let path = self.dir.join(&entry.file);
        let f = File::open(&path).map_err(io_err(&path))?;
        let mut r = BufReader::with_capacity(1 << 20, f);
        let mut header = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut header).map_err(|_| DatasetError::Truncated {
            shard: index,
            last_valid: None,
        })?;
        if &header[0..4] != SHARD_MAGIC {
            return Err(DatasetError::BadMagic { shard: index });
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(DatasetError::VersionMismatch { shard: index, found: version });
        }
        let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let w = u16::from_le_bytes(header[12..14].try_into().unwrap()) as usize;
        let h = u16::from_le_bytes(header[14..16].try_into().unwrap()) as usize;
        let expected = (self.manifest.width, self.manifest.height);
        if (w, h) != expected {
            return Err(DatasetError::Resolution {
                shard: index,
                expected,
                found: (w, h),
            });
        }
        if count != entry.frames {
            return Err(DatasetError::Manifest(format!(
                "shard {index} header counts {count} frames, manifest {}",
                entry.frames
            )));
        }
        Ok((r, count))
    }

    fn read_record(&self, r: &mut impl Read, buf: &mut [u8], shard: usize, record: usize, with_frame: bool) -> Result<Sample> {
        r.read_exact(buf).map_err(|_| DatasetError::Truncated {
            shard,
            last_valid: record.checked_sub(1),
        })?;
        let body = buf.len() - 4;
        let crc = u32::from_le_bytes(buf[body..].try_into().unwrap());
        if crc32fast::hash(&buf[..body]) != crc {
            return Err(DatasetError::Checksum { shard, record });
        }
        let px = self.manifest.width * self.manifest.height * 3;
        let l = &buf[px..body];
        let source = Source::from_tag(l[8]).ok_or(DatasetError::Checksum { shard, record })?;
        let frame = if with_frame {
            RawFrame::new(self.manifest.width, self.manifest.height, buf[..px].to_vec())
                .expect("buffer sized from manifest")
        } else {
            RawFrame::filled(1, 1, [0; 3])
        };
        Ok(Sample {
            frame,
            steering: f32::from_le_bytes(l[0..4].try_into().unwrap()),
            throttle: f32::from_le_bytes(l[4..8].try_into().unwrap()),
            source,
            timestamp: f64::from_le_bytes(l[9..17].try_into().unwrap()),
        })
    }

    /// Streams every sample in append order to `visit(global_index, sample)`.
    pub fn for_each(&self, mut visit: impl FnMut(usize, Sample) -> Result<()>) -> Result<()> {
        let mut buf = vec![0u8; self.record_len()];
        let mut global = 0;
        for shard in 0..self.manifest.shards.len() {
            let (mut r, count) = self.open_shard(shard)?;
            for rec in 0..count {
                let s = self.read_record(&mut r, &mut buf, shard, rec, true)?;
                visit(global, s)?;
                global += 1;
            }
        }
        Ok(())
    }

    pub fn read_all(&self) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|_, s| {
            out.push(s);
            Ok(())
        })?;
        Ok(out)
    }

    /// Labels of every sample, verifying checksums, without keeping frames.
    pub fn labels(&self) -> Result<Vec<SampleMeta>> {
        let mut out = Vec::with_capacity(self.len());
        let mut buf = vec![0u8; self.record_len()];
        for shard in 0..self.manifest.shards.len() {
            let (mut r, count) = self.open_shard(shard)?;
            for rec in 0..count {
                let s = self.read_record(&mut r, &mut buf, shard, rec, false)?;
                out.push(SampleMeta {
                    steering: s.steering,
                    throttle: s.throttle,
                    source: s.source,
                    timestamp: s.timestamp,
                });
            }
        }
        Ok(out)
    }

    /// CRC32 over every record body, in shard order. The per-record CRCs are
    /// left out: a CRC over `data | crc(data)` is a constant residue.
    pub fn checksum(&self) -> Result<u32> {
        let mut hasher = crc32fast::Hasher::new();
        let rec = self.record_len();
        for entry in &self.manifest.shards {
            let path = self.dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            for chunk in bytes.chunks(rec) {
                hasher.update(&chunk[..chunk.len().saturating_sub(4)]);
            }
        }
        Ok(hasher.finalize())
    }

    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<Split> {
        let sources: Vec<_> = self.labels()?.into_iter().map(|m| m.source).collect();
        split_indices(&sources, val_fraction, seed)
    }
}

impl Drop for SampleStore {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = self.flush();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// False when some source had too few samples and the split fell back
    /// to a plain random split.
    pub stratified: bool,
}

fn val_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Seeded random split, stratified by source so every source appears in
/// both halves. Output index lists are sorted.
pub fn split_indices(sources: &[Source], val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(val_fraction));
    }
    if sources.len() < 2 {
        return Err(DatasetError::TooSmallToSplit(sources.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Source, Vec<usize>> = BTreeMap::new();
    for (i, &s) in sources.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let stratified = groups.values().all(|g| g.len() >= 2);
    let mut train = Vec::with_capacity(sources.len());
    let mut val = Vec::new();
    let mut take = |mut ids: Vec<usize>, rng: &mut ChaCha8Rng| {
        ids.shuffle(rng);
        let n_val = val_count(ids.len(), val_fraction);
        val.extend_from_slice(&ids[..n_val]);
        train.extend_from_slice(&ids[n_val..]);
    };
    if stratified {
        for ids in groups.into_values() {
            take(ids, &mut rng);
        }
    } else {
        take((0..sources.len()).collect(), &mut rng);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split {
        train,
        val,
        stratified,
    })
}

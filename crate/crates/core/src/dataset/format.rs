//! Dataset directories: `manifest.json` plus `samples.bin`.
//!
//! Each record in `samples.bin` is `[record length: u64]` followed by
//! `[metadata length: u64][metadata JSON][inputs tensor][targets tensor]`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::generate::GenConfig;
use crate::dataset::{HeadInfo, SampleMeta, TaskKind, TrainingSample};
use crate::error::{Error, Result};
use crate::tensor::{Reader, Tensor};

pub const DATASET_FORMAT: &str = "latmap-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: u64,
    pub attempts: u32,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub task: TaskKind,
    pub channels: Vec<String>,
    pub heads: Vec<HeadInfo>,
    pub seed: u64,
    /// Samples actually stored.
    pub count: usize,
    pub config: GenConfig,
    /// Indices whose every draw failed; they are absent from the file.
    pub failures: Vec<FailureRecord>,
    /// Total discarded draws over all stored samples.
    pub retries: u64,
}

impl Manifest {
    pub fn new(config: &GenConfig) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            task: config.task,
            channels: config.task.input_channels(),
            heads: config.task.heads(),
            seed: config.seed,
            count: 0,
            config: config.clone(),
            failures: Vec::new(),
            retries: 0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Format(format!("not a dataset manifest: {}", self.format)));
        }
        if self.version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: DATASET_VERSION,
            });
        }
        if self.channels != self.task.input_channels() || self.heads != self.task.heads() {
            return Err(Error::Format("manifest channels/heads do not match the task".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes manifest and samples to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = DatasetWriter::create(dir, self.manifest.clone())?;
        for s in &self.samples {
            w.push(s)?;
        }
        w.finish()?;
        Ok(())
    }
}

pub fn encode_sample(sample: &TrainingSample, out: &mut Vec<u8>) -> Result<()> {
    let meta = serde_json::to_vec(&sample.meta)?;
    let len = 8 + meta.len() + sample.inputs.encoded_len() + sample.targets.encoded_len();
    out.extend_from_slice(&(len as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    sample.inputs.encode(out);
    sample.targets.encode(out);
    Ok(())
}

fn decode_record(body: &[u8]) -> Result<TrainingSample> {
    let mut r = Reader::new(body);
    let meta_len = r.u64()? as usize;
    let meta: SampleMeta = serde_json::from_slice(r.take(meta_len)?)?;
    let (inputs, used) = Tensor::decode(&body[r.pos..])?;
    r.take(used)?;
    let (targets, used) = Tensor::decode(&body[r.pos..])?;
    r.take(used)?;
    if !r.is_done() {
        return Err(Error::Format(format!(
            "record for sample {} has {} trailing bytes",
            meta.index,
            body.len() - r.pos
        )));
    }
    Ok(TrainingSample {
        meta,
        inputs,
        targets,
    })
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<TrainingSample>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::new();
    while !r.is_done() {
        let len = r.u64()? as usize;
        out.push(decode_record(r.take(len)?)?);
    }
    Ok(out)
}

/// Reads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    manifest.check()?;
    let samples = decode_samples(&fs::read(dir.join(SAMPLES_FILE))?)?;
    if samples.len() != manifest.count {
        return Err(Error::Format(format!(
            "manifest lists {} samples, file holds {}",
            manifest.count,
            samples.len()
        )));
    }
    for s in &samples {
        if s.meta.task != manifest.task {
            return Err(Error::Format(format!("sample {} has the wrong task", s.meta.index)));
        }
        s.validate()?;
    }
    Ok(Dataset { manifest, samples })
}

/// Streams records to `samples.bin`; the manifest is written by
/// [`finish`](Self::finish) with the final count.
pub struct DatasetWriter {
    dir: PathBuf,
    manifest: Manifest,
    out: BufWriter<File>,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(dir: &Path, mut manifest: Manifest) -> Result<Self> {
        fs::create_dir_all(dir)?;
        manifest.count = 0;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            out: BufWriter::new(File::create(dir.join(SAMPLES_FILE))?),
            buf: Vec::new(),
        })
    }

    pub fn push(&mut self, sample: &TrainingSample) -> Result<()> {
        self.buf.clear();
        encode_sample(sample, &mut self.buf)?;
        self.out.write_all(&self.buf)?;
        self.manifest.count += 1;
        Ok(())
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.out.flush()?;
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        fs::write(self.dir.join(MANIFEST_FILE), json)?;
        Ok(self.manifest)
    }
}

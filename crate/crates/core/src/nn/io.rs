//! Binary model files: a length-prefixed JSON header followed by one
//! length-prefixed little-endian `f32` payload per parameter entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TaskKind;
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::spec::NetworkSpec;
use crate::nn::store::{AdamState, ParamEntry, ParamRole, ParameterStore};
use crate::tensor::Reader;

pub const MODEL_FORMAT: &str = "latmap-model";
pub const OPTIMIZER_FORMAT: &str = "latmap-optimizer";
pub const MODEL_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

/// Free-form description stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub channels: Vec<String>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    dims: Vec<usize>,
    role: ParamRole,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    spec: NetworkSpec,
    info: ModelInfo,
    init: String,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    format: String,
    version: u32,
    step: u64,
    entries: Vec<(String, usize)>,
}

fn push_f32s<'a>(out: &mut Vec<u8>, values: impl ExactSizeIterator<Item = &'a f32>) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn with_header(header: &impl Serialize) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_header<T: for<'de> Deserialize<'de>>(r: &mut Reader) -> Result<T> {
    let len = r.u64()?;
    if len > MAX_HEADER {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    Ok(serde_json::from_slice(r.take(len as usize)?)?)
}

fn check_version(format: &str, want: &str, version: u32) -> Result<()> {
    if format != want {
        return Err(Error::Format(format!("expected a {want} file, found {format:?}")));
    }
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    Ok(())
}

fn read_payload(r: &mut Reader, expect: usize, what: &str) -> Result<Vec<f32>> {
    let n = r.u64()? as usize;
    if n != expect {
        return Err(Error::ShapeMismatch(format!("{what}: payload has {n} values, expected {expect}")));
    }
    Ok(r.f32s(n)?.into_iter().map(|v| v as f32).collect())
}

pub fn encode_model(net: &Network, store: &ParameterStore, info: &ModelInfo) -> Result<Vec<u8>> {
    net.check_store(store)?;
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        spec: net.spec().clone(),
        info: info.clone(),
        init: "kaiming_normal_fan_in".into(),
        entries: store
            .entries()
            .iter()
            .map(|e| EntryHeader {
                name: e.name.clone(),
                dims: e.dims.clone(),
                role: e.role,
            })
            .collect(),
    };
    let mut out = with_header(&header)?;
    for e in store.entries() {
        push_f32s(&mut out, e.values.iter());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(Network, ParameterStore, ModelInfo)> {
    let mut r = Reader::new(bytes);
    let header: ModelHeader = read_header(&mut r)?;
    check_version(&header.format, MODEL_FORMAT, header.version)?;
    let net = Network::new(header.spec)?;
    let mut entries = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let n = e.dims.iter().product();
        let values = read_payload(&mut r, n, &e.name)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("stored parameter {}", e.name)));
        }
        entries.push(ParamEntry {
            name: e.name,
            dims: e.dims,
            role: e.role,
            values,
        });
    }
    if !r.is_done() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let store = ParameterStore::new(entries)?;
    net.check_store(&store)?;
    Ok((net, store, header.info))
}

pub fn save_model(path: &Path, net: &Network, store: &ParameterStore, info: &ModelInfo) -> Result<()> {
    write_atomic(path, &encode_model(net, store, info)?)
}

pub fn load_model(path: &Path) -> Result<(Network, ParameterStore, ModelInfo)> {
    decode_model(&fs::read(path)?)
}

/// Writes the Adam moments of `store`.
pub fn save_optimizer(path: &Path, store: &ParameterStore) -> Result<()> {
    let adam = store.adam();
    let header = OptimizerHeader {
        format: OPTIMIZER_FORMAT.into(),
        version: MODEL_VERSION,
        step: adam.step,
        entries: store.entries().iter().zip(&adam.m).map(|(e, m)| (e.name.clone(), m.len())).collect(),
    };
    let mut out = with_header(&header)?;
    for (m, v) in adam.m.iter().zip(&adam.v) {
        push_f32s(&mut out, m.iter());
        push_f32s(&mut out, v.iter());
    }
    write_atomic(path, &out)
}

/// Restores Adam moments saved for a store with the same entries.
pub fn load_optimizer(path: &Path, store: &mut ParameterStore) -> Result<()> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let header: OptimizerHeader = read_header(&mut r)?;
    check_version(&header.format, OPTIMIZER_FORMAT, header.version)?;
    if header.entries.len() != store.entries().len() {
        return Err(Error::ShapeMismatch("optimizer state has a different entry count".into()));
    }
    let mut m = Vec::new();
    let mut v = Vec::new();
    for ((name, n), e) in header.entries.iter().zip(store.entries()) {
        if name != &e.name {
            return Err(Error::ShapeMismatch(format!("optimizer entry {name} vs {}", e.name)));
        }
        m.push(read_payload(&mut r, *n, name)?);
        v.push(read_payload(&mut r, *n, name)?);
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes in optimizer state".into()));
    }
    store.set_adam(AdamState {
        step: header.step,
        m,
        v,
    })
}

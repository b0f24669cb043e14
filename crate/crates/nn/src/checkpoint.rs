//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `TUBERCK1`, a little-endian `u32` header length, a JSON
//! header, then every tensor's values as little-endian `f32` in header order. The JSON
//! header is readable without touching the tensor payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::param::Tensor;
use crate::zoo::{build_classifier, BackboneId, FreezePolicy, HeadConfig, ModelHandle, ModelSpec, Network, ZooError};

const MAGIC: &[u8; 8] = b"TUBERCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub backbone: BackboneId,
    pub pretrained: bool,
    pub head: Option<HeadConfig>,
    pub n_classes: Option<usize>,
    pub seed: Option<u64>,
    pub freeze: Option<FreezePolicy>,
    pub input_size: usize,
    pub trainable_params: Option<usize>,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ZooError + '_ {
    move |source| ZooError::Io { path: path.to_path_buf(), source }
}

fn write_container(path: &Path, header: &CheckpointHeader, tensors: &[&Tensor]) -> Result<(), ZooError> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    write(MAGIC)?;
    write(&(json.len() as u32).to_le_bytes())?;
    write(&json)?;
    for t in tensors {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write(&buf)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_header_from(r: &mut impl Read) -> Result<CheckpointHeader, ZooError> {
    let corrupt = |what: &str| ZooError::CorruptCheckpoint(what.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| corrupt("truncated header length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 64 << 20 {
        return Err(corrupt("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| corrupt("truncated header"))?;
    serde_json::from_slice(&json).map_err(|e| ZooError::CorruptCheckpoint(format!("header: {e}")))
}

fn read_container(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor>), ZooError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let header = read_header_from(&mut r)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| ZooError::CorruptCheckpoint(format!("truncated tensor {}", entry.name)))?;
        let values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push(Tensor::from_shape_vec(IxDyn(&entry.shape), values).expect("length matches shape"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(ZooError::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok((header, tensors))
}

/// Metadata of a checkpoint without loading its tensors.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader, ZooError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    read_header_from(&mut r)
}

pub fn save_model(handle: &ModelHandle, path: &Path) -> Result<(), ZooError> {
    let params = handle.net.params();
    let header = CheckpointHeader {
        backbone: handle.spec.backbone,
        pretrained: handle.spec.pretrained,
        head: Some(handle.spec.head.clone()),
        n_classes: Some(handle.spec.head.n_classes),
        seed: Some(handle.metadata.created_from_seed),
        freeze: Some(handle.spec.freeze),
        input_size: handle.spec.input_size,
        trainable_params: Some(handle.metadata.trainable_params),
        tensors: params.iter().map(|(n, p)| TensorEntry { name: n.clone(), shape: p.value.shape().to_vec() }).collect(),
    };
    let tensors: Vec<&Tensor> = params.iter().map(|(_, p)| &p.value).collect();
    write_container(path, &header, &tensors)
}

pub fn load_model(path: &Path) -> Result<ModelHandle, ZooError> {
    let (header, tensors) = read_container(path)?;
    let head = header.head.clone().ok_or_else(|| ZooError::CorruptCheckpoint("weights file, not a model".into()))?;
    let spec = ModelSpec {
        backbone: header.backbone,
        pretrained: false,
        head,
        freeze: header.freeze.unwrap_or(FreezePolicy::default_for(header.backbone)),
        input_size: header.input_size,
    };
    let mut handle = build_classifier(&spec, header.seed.unwrap_or(0))?;
    handle.spec.pretrained = header.pretrained;
    {
        let mut params = handle.net.params_mut();
        if params.len() != header.tensors.len() {
            return Err(ZooError::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                params.len(),
                header.tensors.len()
            )));
        }
        for ((name, p), (entry, t)) in params.iter_mut().zip(header.tensors.iter().zip(tensors)) {
            if *name != entry.name || p.value.shape() != t.shape() {
                return Err(ZooError::CorruptCheckpoint(format!("tensor {} does not match {name}", entry.name)));
            }
            p.value = t;
        }
    }
    Ok(handle)
}

/// Loads a checkpoint that must hold the given backbone.
pub fn load_model_for(path: &Path, backbone: BackboneId) -> Result<ModelHandle, ZooError> {
    let header = read_checkpoint_header(path)?;
    if header.backbone != backbone {
        return Err(ZooError::CorruptCheckpoint(format!(
            "checkpoint holds {}, expected {backbone}",
            header.backbone
        )));
    }
    load_model(path)
}

/// Writes the backbone tensors of `handle` as a cache weights file.
pub fn save_backbone_weights(handle: &ModelHandle, path: &Path) -> Result<(), ZooError> {
    let params: Vec<_> = handle.net.params().into_iter().filter(|(n, _)| !n.starts_with("head")).collect();
    let header = CheckpointHeader {
        backbone: handle.spec.backbone,
        pretrained: true,
        head: None,
        n_classes: None,
        seed: None,
        freeze: None,
        input_size: handle.spec.input_size,
        trainable_params: None,
        tensors: params.iter().map(|(n, p)| TensorEntry { name: n.clone(), shape: p.value.shape().to_vec() }).collect(),
    };
    let tensors: Vec<&Tensor> = params.iter().map(|(_, p)| &p.value).collect();
    write_container(path, &header, &tensors)
}

pub(crate) fn load_backbone_weights(net: &mut Network, path: &Path) -> Result<(), ZooError> {
    let (header, tensors) = read_container(path)?;
    let by_name: std::collections::HashMap<&str, &Tensor> =
        header.tensors.iter().map(|e| e.name.as_str()).zip(tensors.iter()).collect();
    for (name, p) in net.params_mut() {
        if name.starts_with("head") {
            continue;
        }
        let t = by_name
            .get(name.as_str())
            .ok_or_else(|| ZooError::CorruptCheckpoint(format!("weights file lacks {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(ZooError::CorruptCheckpoint(format!("weights for {name} have shape {:?}", t.shape())));
        }
        p.value.assign(*t);
    }
    Ok(())
}

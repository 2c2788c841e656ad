//! Model persistence: a JSON manifest (config, skeleton, creation seed,
//! tensor names/shapes/offsets) plus one flat sidecar binary of little-endian
//! f32 values in manifest order. Parameters are kept at f32 precision in
//! memory, so the round trip is exactly lossless. Writes go through a temp
//! file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LiftingModel, ModelConfig};
use crate::skeleton::SkeletonSpec;

pub const FORMAT_VERSION: &str = "ckpt/1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the binary, in floats.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryRef {
    file: String,
    total_floats: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    config: ModelConfig,
    skeleton: SkeletonSpec,
    seed: u64,
    binary: BinaryRef,
    tensors: Vec<TensorEntry>,
}

fn binary_path(manifest_path: &Path) -> PathBuf {
    let mut name = manifest_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    name.push_str(".bin");
    manifest_path.with_file_name(name)
}

/// Collect (name, shape, values) for every state tensor: trainable
/// parameters first, then the batch-norm running statistics.
fn state_tensors(model: &LiftingModel) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit_params(&mut |name, view| {
        out.push((name, view.shape().to_vec(), view.iter().cloned().collect()));
    });
    model.visit_buffers(&mut |name, view| {
        out.push((name, view.shape().to_vec(), view.iter().cloned().collect()));
    });
    out
}

pub fn save_checkpoint(model: &LiftingModel, path: &Path) -> Result<()> {
    let tensors = state_tensors(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, shape, values) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += values.len();
    }
    let bin_path = binary_path(path);
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        config: model.config().clone(),
        skeleton: model.graph().spec(),
        seed: model.seed(),
        binary: BinaryRef {
            file: bin_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            total_floats: offset,
        },
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    // Write-temp-then-rename so a crash never leaves a half checkpoint.
    let tmp_manifest = path.with_extension("tmp.manifest");
    let tmp_bin = path.with_extension("tmp.bin");
    fs::write(&tmp_bin, &blob)?;
    fs::write(&tmp_manifest, text)?;
    fs::rename(&tmp_bin, &bin_path)?;
    fs::rename(&tmp_manifest, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LiftingModel> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            format!("{}:{}:{}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            "format_version",
            format!(
                "expected {FORMAT_VERSION:?}, got {:?}",
                manifest.format_version
            ),
        ));
    }
    let graph = manifest.skeleton.build()?;
    let mut model = LiftingModel::build(manifest.config.clone(), graph, manifest.seed)?;

    let bin_path = path.with_file_name(&manifest.binary.file);
    let blob = fs::read(&bin_path)?;
    if blob.len() != manifest.binary.total_floats * 4 {
        return Err(Error::parse(
            bin_path.display().to_string(),
            format!(
                "binary holds {} bytes but the manifest expects {}",
                blob.len(),
                manifest.binary.total_floats * 4
            ),
        ));
    }
    let mut values: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> =
        std::collections::BTreeMap::new();
    for entry in &manifest.tensors {
        let len: usize = entry.shape.iter().product();
        if entry.offset + len > manifest.binary.total_floats {
            return Err(Error::parse(
                format!("tensors.{}", entry.name),
                "tensor extends past the end of the binary".to_string(),
            ));
        }
        let mut v = Vec::with_capacity(len);
        for i in 0..len {
            let at = (entry.offset + i) * 4;
            v.push(f32::from_le_bytes([
                blob[at],
                blob[at + 1],
                blob[at + 2],
                blob[at + 3],
            ]) as f64);
        }
        if values.insert(entry.name.clone(), (entry.shape.clone(), v)).is_some() {
            return Err(Error::parse(
                format!("tensors.{}", entry.name),
                "duplicate tensor name".to_string(),
            ));
        }
    }
    // Every tensor the freshly built model expects must be present with the
    // right shape; anything left over is unknown.
    let mut missing = Vec::new();
    let mut fill = |name: String, mut view: ndarray::ArrayViewMutD<'_, f64>| {
        match values.remove(&name) {
            Some((shape, flat)) => {
                if shape != view.shape() {
                    missing.push(format!(
                        "{name}: shape {:?} in checkpoint, {:?} in model",
                        shape,
                        view.shape()
                    ));
                    return;
                }
                for (dst, src) in view.iter_mut().zip(flat.iter()) {
                    *dst = *src;
                }
            }
            None => missing.push(format!("{name}: absent from checkpoint")),
        }
    };
    model.visit_params_mut(&mut fill);
    model.visit_buffers_mut(&mut fill);
    if !missing.is_empty() {
        return Err(Error::parse("tensors", missing.join("; ")));
    }
    if let Some((name, _)) = values.into_iter().next() {
        return Err(Error::parse(
            format!("tensors.{name}"),
            "unknown tensor name for this configuration".to_string(),
        ));
    }
    Ok(model)
}

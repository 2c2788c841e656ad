//! The `pseq/1` pose-sequence container: a JSON manifest carrying the
//! skeleton (preset name or full definition), labels, and base64-encoded
//! little-endian f32 array payloads in row-major frame→joint→coordinate
//! order. Human-inspectable header, exact payload.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonGraph, SkeletonSpec};

pub const FORMAT_VERSION: &str = "pseq/1";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayBlock {
    shape: Vec<usize>,
    dtype: String,
    encoding: String,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArraysDoc {
    pose2d: ArrayBlock,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pose3d: Option<ArrayBlock>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFileDoc {
    format_version: String,
    skeleton: SkeletonSpec,
    subject: String,
    action: String,
    frames: usize,
    joints: usize,
    units: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    image_size: Option<(u32, u32)>,
    arrays: ArraysDoc,
}

/// A loaded pose sequence. 2D is always present; 3D is optional (inference
/// inputs have none). Arrays are (frames, joints, coords) in f64; payloads
/// are stored at f32 precision on disk.
#[derive(Debug, Clone)]
pub struct PoseSequenceFile {
    pub skeleton: SkeletonGraph,
    pub subject: String,
    pub action: String,
    pub units: String,
    pub image_size: Option<(u32, u32)>,
    pub pose2d: Array3<f64>,
    pub pose3d: Option<Array3<f64>>,
}

fn encode_array(data: &Array3<f64>) -> ArrayBlock {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    ArrayBlock {
        shape: data.shape().to_vec(),
        dtype: "f32".into(),
        encoding: "base64".into(),
        data: BASE64.encode(&bytes),
    }
}

fn decode_array(block: &ArrayBlock, field: &str) -> Result<Array3<f64>> {
    if block.dtype != "f32" {
        return Err(Error::parse(
            format!("arrays.{field}.dtype"),
            format!("unsupported dtype {:?}, expected \"f32\"", block.dtype),
        ));
    }
    if block.encoding != "base64" {
        return Err(Error::parse(
            format!("arrays.{field}.encoding"),
            format!("unsupported encoding {:?}, expected \"base64\"", block.encoding),
        ));
    }
    if block.shape.len() != 3 {
        return Err(Error::parse(
            format!("arrays.{field}.shape"),
            format!("expected 3 dimensions, got {}", block.shape.len()),
        ));
    }
    let bytes = BASE64.decode(&block.data).map_err(|e| {
        Error::parse(format!("arrays.{field}.data"), format!("invalid base64: {e}"))
    })?;
    let expected = block.shape.iter().product::<usize>();
    if bytes.len() != expected * 4 {
        return Err(Error::parse(
            format!("arrays.{field}.data"),
            format!(
                "payload holds {} bytes but shape {:?} needs {}",
                bytes.len(),
                block.shape,
                expected * 4
            ),
        ));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() {
            return Err(Error::parse(
                format!("arrays.{field}.data"),
                "payload contains a non-finite value".to_string(),
            ));
        }
        values.push(v);
    }
    Array3::from_shape_vec(
        (block.shape[0], block.shape[1], block.shape[2]),
        values,
    )
    .map_err(|e| Error::parse(format!("arrays.{field}.shape"), e.to_string()))
}

impl PoseSequenceFile {
    /// Validate internal consistency (dimensions against the skeleton,
    /// finiteness of payloads).
    pub fn validate(&self) -> Result<()> {
        let n = self.skeleton.joint_count();
        let (t2, n2, c2) = self.pose2d.dim();
        if n2 != n {
            return Err(Error::validation(
                "pose2d",
                format!("has {n2} joints but the skeleton defines {n}"),
            ));
        }
        if c2 != 2 {
            return Err(Error::validation(
                "pose2d",
                format!("expected 2 coordinates per joint, got {c2}"),
            ));
        }
        if self.pose2d.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("pose2d", "contains non-finite values"));
        }
        if let Some(p3) = &self.pose3d {
            let (t3, n3, c3) = p3.dim();
            if n3 != n {
                return Err(Error::validation(
                    "pose3d",
                    format!("has {n3} joints but the skeleton defines {n}"),
                ));
            }
            if c3 != 3 {
                return Err(Error::validation(
                    "pose3d",
                    format!("expected 3 coordinates per joint, got {c3}"),
                ));
            }
            if t3 != t2 {
                return Err(Error::validation(
                    "pose3d",
                    format!("has {t3} frames but pose2d has {t2}"),
                ));
            }
            if p3.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("pose3d", "contains non-finite values"));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.pose2d.dim().0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let doc = PoseFileDoc {
            format_version: FORMAT_VERSION.into(),
            skeleton: self.skeleton.spec(),
            subject: self.subject.clone(),
            action: self.action.clone(),
            frames: self.frames(),
            joints: self.skeleton.joint_count(),
            units: self.units.clone(),
            image_size: self.image_size,
            arrays: ArraysDoc {
                pose2d: encode_array(&self.pose2d),
                pose3d: self.pose3d.as_ref().map(encode_array),
            },
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let doc: PoseFileDoc = serde_json::from_str(&text).map_err(|e| {
            Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string())
        })?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "format_version",
                format!("expected {FORMAT_VERSION:?}, got {:?}", doc.format_version),
            ));
        }
        let skeleton = doc.skeleton.build()?;
        let pose2d = decode_array(&doc.arrays.pose2d, "pose2d")?;
        let pose3d = doc
            .arrays
            .pose3d
            .as_ref()
            .map(|b| decode_array(b, "pose3d"))
            .transpose()?;
        if doc.joints != skeleton.joint_count() {
            return Err(Error::parse(
                "joints",
                format!(
                    "manifest says {} joints but the skeleton defines {}",
                    doc.joints,
                    skeleton.joint_count()
                ),
            ));
        }
        if doc.frames != pose2d.dim().0 {
            return Err(Error::parse(
                "frames",
                format!(
                    "manifest says {} frames but pose2d holds {}",
                    doc.frames,
                    pose2d.dim().0
                ),
            ));
        }
        let file = Self {
            skeleton,
            subject: doc.subject,
            action: doc.action,
            units: doc.units,
            image_size: doc.image_size,
            pose2d,
            pose3d,
        };
        file.validate()?;
        Ok(file)
    }
}

/// Map pixel coordinates into [−1, 1] horizontally, preserving aspect ratio
/// vertically: x' = 2x/w − 1, y' = 2y/w − h/w.
pub fn normalize_2d(seq: &Array3<f64>, image_size: (u32, u32)) -> Array3<f64> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = seq.clone();
    for mut joint in out.rows_mut() {
        joint[0] = 2.0 * joint[0] / w - 1.0;
        joint[1] = 2.0 * joint[1] / w - h / w;
    }
    out
}

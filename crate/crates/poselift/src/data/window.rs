//! Windowing: one training/eval sample per source frame. The 2D sequence is
//! edge-replicated by (T−1)/2 at both ends so every frame can sit at the
//! window center; 3D targets are root-centered per frame.

use ndarray::{Array2, Array3, Array4};

use super::pseq::PoseSequenceFile;
use crate::error::{Error, Result};

/// One sample: a 2D input window, the root-centered 3D pose of its center
/// frame, and the root-centered 3D sequence covering the same frames.
#[derive(Debug, Clone)]
pub struct PoseWindow {
    /// (T, N, 2)
    pub input2d: Array3<f64>,
    /// (N, 3), root at the origin.
    pub target3d: Array2<f64>,
    /// (T, N, 3), root at the origin in every frame.
    pub seq3d: Array3<f64>,
    pub subject: String,
    pub action: String,
    pub center_frame: usize,
}

fn clamp_frame(center: isize, offset: isize, total: usize) -> usize {
    (center + offset).clamp(0, total as isize - 1) as usize
}

/// Build one window per source frame. Requires ground-truth 3D.
pub fn make_windows(file: &PoseSequenceFile, frames: usize) -> Result<Vec<PoseWindow>> {
    let pose3d = file.pose3d.as_ref().ok_or_else(|| {
        Error::Usage("training windows need ground-truth 3D; this file has none".into())
    })?;
    if frames == 0 || frames % 2 == 0 {
        return Err(Error::Config(format!(
            "window length must be odd and positive, got {frames}"
        )));
    }
    file.validate()?;
    let total = file.frames();
    let n = file.skeleton.joint_count();
    let root = file.skeleton.root();
    let pad = (frames as isize - 1) / 2;
    let mut windows = Vec::with_capacity(total);
    for center in 0..total {
        let mut input2d = Array3::zeros((frames, n, 2));
        let mut seq3d = Array3::zeros((frames, n, 3));
        for (w, offset) in (-pad..=pad).enumerate() {
            let src = clamp_frame(center as isize, offset, total);
            for j in 0..n {
                input2d[[w, j, 0]] = file.pose2d[[src, j, 0]];
                input2d[[w, j, 1]] = file.pose2d[[src, j, 1]];
                let rx = pose3d[[src, root, 0]];
                let ry = pose3d[[src, root, 1]];
                let rz = pose3d[[src, root, 2]];
                seq3d[[w, j, 0]] = pose3d[[src, j, 0]] - rx;
                seq3d[[w, j, 1]] = pose3d[[src, j, 1]] - ry;
                seq3d[[w, j, 2]] = pose3d[[src, j, 2]] - rz;
            }
        }
        let mut target3d = Array2::zeros((n, 3));
        target3d.assign(&seq3d.index_axis(ndarray::Axis(0), pad as usize));
        windows.push(PoseWindow {
            input2d,
            target3d,
            seq3d,
            subject: file.subject.clone(),
            action: file.action.clone(),
            center_frame: center,
        });
    }
    Ok(windows)
}

/// Inference-side windowing: 2D inputs only, same edge replication.
pub fn make_input_windows(pose2d: &Array3<f64>, frames: usize) -> Result<Vec<Array3<f64>>> {
    if frames == 0 || frames % 2 == 0 {
        return Err(Error::Config(format!(
            "window length must be odd and positive, got {frames}"
        )));
    }
    let (total, n, _) = pose2d.dim();
    let pad = (frames as isize - 1) / 2;
    let mut windows = Vec::with_capacity(total);
    for center in 0..total {
        let mut input2d = Array3::zeros((frames, n, 2));
        for (w, offset) in (-pad..=pad).enumerate() {
            let src = clamp_frame(center as isize, offset, total);
            for j in 0..n {
                input2d[[w, j, 0]] = pose2d[[src, j, 0]];
                input2d[[w, j, 1]] = pose2d[[src, j, 1]];
            }
        }
        windows.push(input2d);
    }
    Ok(windows)
}

/// A training mini-batch in network layout.
#[derive(Debug, Clone)]
pub struct Batch {
    /// (B, 2, T, N)
    pub input: Array4<f64>,
    /// (B, N, 3)
    pub target_center: Array3<f64>,
    /// (B, 3, T, N)
    pub target_seq: Array4<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.input.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stack windows into a batch, transposing into channel-first layout.
pub fn make_batch(windows: &[&PoseWindow]) -> Batch {
    assert!(!windows.is_empty(), "batch needs at least one window");
    let (t, n, _) = windows[0].input2d.dim();
    let b = windows.len();
    let mut input = Array4::zeros((b, 2, t, n));
    let mut target_center = Array3::zeros((b, n, 3));
    let mut target_seq = Array4::zeros((b, 3, t, n));
    for (bi, w) in windows.iter().enumerate() {
        for ti in 0..t {
            for j in 0..n {
                input[[bi, 0, ti, j]] = w.input2d[[ti, j, 0]];
                input[[bi, 1, ti, j]] = w.input2d[[ti, j, 1]];
                for d in 0..3 {
                    target_seq[[bi, d, ti, j]] = w.seq3d[[ti, j, d]];
                }
            }
        }
        for j in 0..n {
            for d in 0..3 {
                target_center[[bi, j, d]] = w.target3d[[j, d]];
            }
        }
    }
    Batch {
        input,
        target_center,
        target_seq,
    }
}

/// Stack bare 2D windows for inference: (B, 2, T, N).
pub fn input_batch(windows: &[Array3<f64>]) -> Array4<f64> {
    assert!(!windows.is_empty());
    let (t, n, _) = windows[0].dim();
    let mut input = Array4::zeros((windows.len(), 2, t, n));
    for (bi, w) in windows.iter().enumerate() {
        for ti in 0..t {
            for j in 0..n {
                input[[bi, 0, ti, j]] = w[[ti, j, 0]];
                input[[bi, 1, ti, j]] = w[[ti, j, 1]];
            }
        }
    }
    input
}

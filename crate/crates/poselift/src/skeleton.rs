//! Pose graph construction: joint topology, the three-way spatial partition
//! (self / centripetal / centrifugal), degree-normalized adjacency matrices,
//! and the left/right flip permutation.
//!
//! The partition labels each directed neighbor pair once. For a node `i` and
//! neighbor `j`, the subset is decided by comparing their reference-pose
//! distances to the gravity center (the mean 2D coordinate of all joints):
//! closer neighbors are centripetal (subset 1), farther ones centrifugal
//! (subset 2), ties and the node itself land in subset 0.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of spatial subsets used by the partitioning scheme.
pub const KERNEL_SIZE: usize = 3;

/// Default degree regularizer keeping empty adjacency rows invertible.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// A connected tree of pose joints plus the metadata needed for
/// partitioning and horizontal flipping.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    left_right_pairs: Vec<(usize, usize)>,
    joint_names: Vec<String>,
    reference_pose: Array2<f64>,
}

/// Serializable skeleton description: either a preset name or a full
/// custom definition. This is the `skeleton` block of pose files and
/// checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SkeletonSpec {
    Preset(String),
    Custom(CustomSkeleton),
}

/// Explicit skeleton definition as carried in structured-text documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomSkeleton {
    pub joint_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
    #[serde(default)]
    pub left_right_pairs: Vec<(usize, usize)>,
    pub joint_names: Vec<String>,
    /// N rows of (x, y) template coordinates used for partitioning.
    pub reference_pose: Vec<(f64, f64)>,
}

impl SkeletonSpec {
    pub fn build(&self) -> Result<SkeletonGraph> {
        match self {
            SkeletonSpec::Preset(name) => SkeletonGraph::preset(name),
            SkeletonSpec::Custom(def) => SkeletonGraph::custom(def.clone()),
        }
    }
}

impl SkeletonGraph {
    /// Build one of the built-in skeletons: `h36m17` or `humaneva15`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "h36m17" => Ok(Self::h36m17()),
            "humaneva15" => Ok(Self::humaneva15()),
            other => Err(Error::validation(
                "preset",
                format!("unknown skeleton preset {other:?}; expected h36m17 or humaneva15"),
            )),
        }
    }

    /// The 17-joint skeleton (pelvis root, spine chain, two arms, two legs).
    /// Reference pose is a front-facing T-pose in millimeters, y up.
    pub fn h36m17() -> Self {
        let names = [
            "hip", "rhip", "rknee", "rfoot", "lhip", "lknee", "lfoot", "spine", "thorax", "neck",
            "head", "lshoulder", "lelbow", "lwrist", "rshoulder", "relbow", "rwrist",
        ];
        let reference = [
            (0.0, 0.0),
            (130.0, 0.0),
            (140.0, -450.0),
            (150.0, -900.0),
            (-130.0, 0.0),
            (-140.0, -450.0),
            (-150.0, -900.0),
            (0.0, 230.0),
            (0.0, 460.0),
            (0.0, 560.0),
            (0.0, 670.0),
            (-180.0, 450.0),
            (-430.0, 450.0),
            (-680.0, 450.0),
            (180.0, 450.0),
            (430.0, 450.0),
            (680.0, 450.0),
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 4),
            (4, 5),
            (5, 6),
            (0, 7),
            (7, 8),
            (8, 9),
            (9, 10),
            (8, 11),
            (11, 12),
            (12, 13),
            (8, 14),
            (14, 15),
            (15, 16),
        ];
        let pairs = vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)];
        Self::custom(CustomSkeleton {
            joint_count: 17,
            edges,
            root: 0,
            left_right_pairs: pairs,
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            reference_pose: reference.to_vec(),
        })
        .expect("h36m17 preset is valid")
    }

    /// The 15-joint skeleton matching two-arm/two-leg detections.
    pub fn humaneva15() -> Self {
        let names = [
            "pelvis",
            "thorax",
            "lshoulder",
            "lelbow",
            "lwrist",
            "rshoulder",
            "relbow",
            "rwrist",
            "lhip",
            "lknee",
            "lankle",
            "rhip",
            "rknee",
            "rankle",
            "head",
        ];
        let reference = [
            (0.0, 0.0),
            (0.0, 430.0),
            (-180.0, 430.0),
            (-430.0, 430.0),
            (-680.0, 430.0),
            (180.0, 430.0),
            (430.0, 430.0),
            (680.0, 430.0),
            (-130.0, 0.0),
            (-140.0, -450.0),
            (-150.0, -900.0),
            (130.0, 0.0),
            (140.0, -450.0),
            (150.0, -900.0),
            (0.0, 640.0),
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (1, 5),
            (5, 6),
            (6, 7),
            (0, 8),
            (8, 9),
            (9, 10),
            (0, 11),
            (11, 12),
            (12, 13),
            (1, 14),
        ];
        let pairs = vec![(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13)];
        Self::custom(CustomSkeleton {
            joint_count: 15,
            edges,
            root: 0,
            left_right_pairs: pairs,
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            reference_pose: reference.to_vec(),
        })
        .expect("humaneva15 preset is valid")
    }

    /// Validate and build a skeleton from an explicit definition.
    pub fn custom(def: CustomSkeleton) -> Result<Self> {
        let n = def.joint_count;
        if n == 0 {
            return Err(Error::validation("joint_count", "must be at least 1"));
        }
        if def.edges.len() != n - 1 {
            return Err(Error::validation(
                "edges",
                format!("a tree over {n} joints needs {} edges, got {}", n - 1, def.edges.len()),
            ));
        }
        for &(a, b) in &def.edges {
            if a >= n || b >= n {
                return Err(Error::validation(
                    "edges",
                    format!("edge ({a},{b}) references a joint outside [0,{n})"),
                ));
            }
            if a == b {
                return Err(Error::validation("edges", format!("self-loop at joint {a}")));
            }
        }
        // Connectivity: N-1 edges + connected ⇒ tree (no cycles).
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &def.edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::validation(
                "edges",
                format!("edge set is disconnected: joint {orphan} is unreachable (cycle elsewhere)"),
            ));
        }
        if def.root >= n {
            return Err(Error::validation(
                "root",
                format!("root {} outside [0,{n})", def.root),
            ));
        }
        let mut used = vec![false; n];
        for &(l, r) in &def.left_right_pairs {
            if l >= n || r >= n {
                return Err(Error::validation(
                    "left_right_pairs",
                    format!("pair ({l},{r}) references a joint outside [0,{n})"),
                ));
            }
            if l == r {
                return Err(Error::validation(
                    "left_right_pairs",
                    format!("pair ({l},{r}) must have distinct joints"),
                ));
            }
            for idx in [l, r] {
                if used[idx] {
                    return Err(Error::validation(
                        "left_right_pairs",
                        format!("joint {idx} appears in more than one pair"),
                    ));
                }
                used[idx] = true;
            }
        }
        if def.joint_names.len() != n {
            return Err(Error::validation(
                "joint_names",
                format!("expected {n} names, got {}", def.joint_names.len()),
            ));
        }
        if def.reference_pose.len() != n {
            return Err(Error::validation(
                "reference_pose",
                format!("expected {n} rows, got {}", def.reference_pose.len()),
            ));
        }
        let mut reference = Array2::zeros((n, 2));
        for (i, &(x, y)) in def.reference_pose.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::validation(
                    "reference_pose",
                    format!("row {i} is not finite"),
                ));
            }
            reference[[i, 0]] = x;
            reference[[i, 1]] = y;
        }
        Ok(Self {
            joint_count: n,
            edges: def.edges,
            root: def.root,
            left_right_pairs: def.left_right_pairs,
            joint_names: def.joint_names,
            reference_pose: reference,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn left_right_pairs(&self) -> &[(usize, usize)] {
        &self.left_right_pairs
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn reference_pose(&self) -> &Array2<f64> {
        &self.reference_pose
    }

    /// Round-trippable definition of this skeleton.
    pub fn to_custom(&self) -> CustomSkeleton {
        CustomSkeleton {
            joint_count: self.joint_count,
            edges: self.edges.clone(),
            root: self.root,
            left_right_pairs: self.left_right_pairs.clone(),
            joint_names: self.joint_names.clone(),
            reference_pose: self
                .reference_pose
                .rows()
                .into_iter()
                .map(|r| (r[0], r[1]))
                .collect(),
        }
    }

    /// Identify this skeleton as a preset when it matches one exactly.
    pub fn spec(&self) -> SkeletonSpec {
        for name in ["h36m17", "humaneva15"] {
            if let Ok(preset) = SkeletonGraph::preset(name) {
                if preset == *self {
                    return SkeletonSpec::Preset(name.to_string());
                }
            }
        }
        SkeletonSpec::Custom(self.to_custom())
    }

    /// Joint permutation that swaps each left/right pair and fixes the rest.
    /// An involution; the root is never part of a pair, so it maps to itself.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.joint_count).collect();
        for &(l, r) in &self.left_right_pairs {
            perm[l] = r;
            perm[r] = l;
        }
        perm
    }

    /// Partition neighbor pairs into K=3 subsets against the reference pose.
    ///
    /// Raw matrices only; call [`AdjacencyStack::normalize`] to fill the
    /// degree-normalized stack.
    pub fn spatial_partitions(&self, kernel_size: usize) -> Result<AdjacencyStack> {
        if kernel_size != KERNEL_SIZE {
            return Err(Error::UnsupportedKernel(kernel_size));
        }
        let n = self.joint_count;
        let center = self
            .reference_pose
            .mean_axis(ndarray::Axis(0))
            .expect("non-empty reference pose");
        let dist = |i: usize| -> f64 {
            let dx = self.reference_pose[[i, 0]] - center[0];
            let dy = self.reference_pose[[i, 1]] - center[1];
            (dx * dx + dy * dy).sqrt()
        };
        let mut raw = vec![Array2::<f64>::zeros((n, n)); KERNEL_SIZE];
        for i in 0..n {
            raw[0][[i, i]] = 1.0;
        }
        for &(a, b) in &self.edges {
            for (i, j) in [(a, b), (b, a)] {
                // From i's viewpoint: is neighbor j closer to the gravity
                // center than i itself?
                let (di, dj) = (dist(i), dist(j));
                let subset = if dj < di {
                    1
                } else if dj > di {
                    2
                } else {
                    0
                };
                raw[subset][[i, j]] = 1.0;
            }
        }
        Ok(AdjacencyStack {
            subset_count: KERNEL_SIZE,
            raw,
            normalized: Vec::new(),
            alpha: DEFAULT_ALPHA,
        })
    }

    /// Convenience: partition and normalize in one call.
    pub fn adjacency(&self) -> Result<AdjacencyStack> {
        Ok(self.spatial_partitions(KERNEL_SIZE)?.normalize())
    }
}

/// Per-subset adjacency matrices: the raw 0/1 pattern and its
/// symmetrically degree-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyStack {
    subset_count: usize,
    raw: Vec<Array2<f64>>,
    normalized: Vec<Array2<f64>>,
    alpha: f64,
}

impl AdjacencyStack {
    /// Assemble a stack directly from raw matrices (mainly for tests and
    /// ablations; `spatial_partitions` is the normal constructor).
    pub fn from_raw(raw: Vec<Array2<f64>>, alpha: f64) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::validation("raw", "at least one subset required"));
        }
        let n = raw[0].nrows();
        for (k, m) in raw.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::shape(
                    format!("raw adjacency subset {k}"),
                    format!("{n}x{n}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
        }
        if alpha <= 0.0 {
            return Err(Error::validation("alpha", "must be positive"));
        }
        Ok(Self {
            subset_count: raw.len(),
            raw,
            normalized: Vec::new(),
            alpha,
        })
    }

    pub fn subset_count(&self) -> usize {
        self.subset_count
    }

    pub fn joint_count(&self) -> usize {
        self.raw[0].nrows()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn raw(&self) -> &[Array2<f64>] {
        &self.raw
    }

    /// Normalized matrices; empty until [`AdjacencyStack::normalize`] runs.
    pub fn normalized(&self) -> &[Array2<f64>] {
        &self.normalized
    }

    /// Fill the normalized stack: `Λ_k^{-1/2} Ā_k Λ_k^{-1/2}` with
    /// `Λ_k^{ii} = Σ_j Ā_k^{ij} + α`. The α term keeps rows with no
    /// neighbors finite, so this never fails.
    pub fn normalize(mut self) -> Self {
        let n = self.joint_count();
        self.normalized = self
            .raw
            .iter()
            .map(|a| {
                let mut inv_sqrt = vec![0.0; n];
                for i in 0..n {
                    let degree: f64 = a.row(i).sum() + self.alpha;
                    inv_sqrt[i] = 1.0 / degree.sqrt();
                }
                let mut out = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        out[[i, j]] = inv_sqrt[i] * a[[i, j]] * inv_sqrt[j];
                    }
                }
                out
            })
            .collect();
        self
    }
}

//! Synthetic motion generation: a forward-kinematics random walk over a
//! preset skeleton. Bone lengths come from a 3D rest pose and stay exactly
//! rigid; joint angles drift as band-limited sums of a few sinusoids, so the
//! motion is smooth and fully determined by the seed. 2D observations are
//! the orthographic x–y projection of the 3D joints plus optional noise.

use nalgebra::{Rotation3, Vector3};
use ndarray::Array3;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pseq::PoseSequenceFile;
use crate::error::Result;
use crate::skeleton::SkeletonGraph;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sequences: usize,
    pub frames: usize,
    /// Skeleton preset name (h36m17 or humaneva15).
    pub skeleton: String,
    pub seed: u64,
    /// Standard deviation of the 2D observation noise, in data units.
    pub noise: f64,
}

const ACTIONS: [&str; 4] = ["walk", "jog", "wave", "stretch"];

/// A small band-limited signal: two harmonics with random amplitude,
/// frequency and phase.
#[derive(Debug, Clone)]
struct Wobble {
    amp: [f64; 2],
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Wobble {
    fn sample(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        Self {
            amp: [
                rng.random_range(0.0..amplitude),
                rng.random_range(0.0..amplitude * 0.35),
            ],
            freq: [rng.random_range(0.5..2.0), rng.random_range(2.0..5.0)],
            phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
        }
    }

    fn at(&self, phase01: f64) -> f64 {
        (0..2)
            .map(|h| {
                self.amp[h] * (std::f64::consts::TAU * self.freq[h] * phase01 + self.phase[h]).sin()
            })
            .sum()
    }
}

/// 3D rest pose: the 2D reference template placed in the z = 0 plane.
fn rest_pose_3d(graph: &SkeletonGraph) -> Vec<Vector3<f64>> {
    (0..graph.joint_count())
        .map(|j| {
            Vector3::new(
                graph.reference_pose()[[j, 0]],
                graph.reference_pose()[[j, 1]],
                0.0,
            )
        })
        .collect()
}

/// Children of each joint, walking the tree away from the root.
fn topological_edges(graph: &SkeletonGraph) -> Vec<(usize, usize)> {
    let n = graph.joint_count();
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in graph.edges() {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let mut order = Vec::with_capacity(n - 1);
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([graph.root()]);
    seen[graph.root()] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                order.push((v, w));
                queue.push_back(w);
            }
        }
    }
    order
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<PoseSequenceFile>> {
    let graph = SkeletonGraph::preset(&spec.skeleton)?;
    let rest = rest_pose_3d(&graph);
    let edges = topological_edges(&graph);
    let n = graph.joint_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).unwrap());
    let mut files = Vec::with_capacity(spec.sequences);
    for s in 0..spec.sequences {
        // Per-bone rotation trajectories around the three axes.
        let bone_wobbles: Vec<[Wobble; 3]> = edges
            .iter()
            .map(|_| {
                [
                    Wobble::sample(&mut rng, 0.30),
                    Wobble::sample(&mut rng, 0.30),
                    Wobble::sample(&mut rng, 0.30),
                ]
            })
            .collect();
        // Global trajectory: root translation (data units) and slow yaw.
        let root_walk = [
            Wobble::sample(&mut rng, 120.0),
            Wobble::sample(&mut rng, 60.0),
            Wobble::sample(&mut rng, 120.0),
        ];
        let yaw = Wobble::sample(&mut rng, 0.6);

        let mut pose3d = Array3::zeros((spec.frames, n, 3));
        let mut pose2d = Array3::zeros((spec.frames, n, 2));
        for t in 0..spec.frames {
            let phase = t as f64 / spec.frames.max(1) as f64;
            let mut positions = vec![Vector3::zeros(); n];
            let mut rotations = vec![Rotation3::identity(); n];
            positions[graph.root()] = Vector3::new(
                root_walk[0].at(phase),
                root_walk[1].at(phase),
                root_walk[2].at(phase),
            );
            rotations[graph.root()] = Rotation3::from_euler_angles(0.0, yaw.at(phase), 0.0);
            for (e, &(parent, child)) in edges.iter().enumerate() {
                let local = Rotation3::from_euler_angles(
                    bone_wobbles[e][0].at(phase),
                    bone_wobbles[e][1].at(phase),
                    bone_wobbles[e][2].at(phase),
                );
                rotations[child] = rotations[parent] * local;
                let bone = rest[child] - rest[parent];
                positions[child] = positions[parent] + rotations[child] * bone;
            }
            for j in 0..n {
                pose3d[[t, j, 0]] = positions[j].x;
                pose3d[[t, j, 1]] = positions[j].y;
                pose3d[[t, j, 2]] = positions[j].z;
                // Orthographic projection onto x–y.
                pose2d[[t, j, 0]] = positions[j].x;
                pose2d[[t, j, 1]] = positions[j].y;
                if let Some(dist) = &noise {
                    pose2d[[t, j, 0]] += dist.sample(&mut rng);
                    pose2d[[t, j, 1]] += dist.sample(&mut rng);
                }
            }
        }
        files.push(PoseSequenceFile {
            skeleton: graph.clone(),
            subject: format!("synth{s:02}"),
            action: ACTIONS[s % ACTIONS.len()].to_string(),
            units: "millimeters".into(),
            image_size: None,
            pose2d,
            pose3d: Some(pose3d),
        });
    }
    Ok(files)
}

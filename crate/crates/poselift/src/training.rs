//! Training: the sequence-reconstruction and center-pose losses, flip
//! augmentation, an adaptive-moment optimizer with decoupled weight decay,
//! the two-stage fit loop, and the finite-difference gradient checker.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batch, Batch, PoseWindow};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{AblationVariant, LiftingModel, ModelConfig};
use crate::skeleton::{CustomSkeleton, SkeletonGraph};
use crate::tensor::{round_f32, Gradients};

/// Mean over batch, frames and joints of the per-joint Euclidean distance
/// between the reconstructed and target 3D sequences (both (B,3,T,N)).
pub fn loss_global(recon: &Array4<f64>, target: &Array4<f64>) -> Result<f64> {
    Ok(loss_global_grad(recon, target)?.0)
}

pub fn loss_global_grad(recon: &Array4<f64>, target: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
    if recon.dim() != target.dim() {
        return Err(Error::shape(
            "sequence loss",
            format!("{:?}", target.dim()),
            format!("{:?}", recon.dim()),
        ));
    }
    let (b, c, t, n) = recon.dim();
    debug_assert_eq!(c, 3);
    let count = (b * t * n) as f64;
    let mut total = 0.0;
    let mut grad = Array4::zeros(recon.dim());
    for bi in 0..b {
        for ti in 0..t {
            for j in 0..n {
                let mut sq = 0.0;
                for d in 0..3 {
                    let diff = recon[[bi, d, ti, j]] - target[[bi, d, ti, j]];
                    sq += diff * diff;
                }
                let norm = sq.sqrt();
                total += norm;
                if norm > 0.0 {
                    for d in 0..3 {
                        let diff = recon[[bi, d, ti, j]] - target[[bi, d, ti, j]];
                        grad[[bi, d, ti, j]] = diff / (norm * count);
                    }
                }
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean over batch and joints of the per-joint Euclidean distance between
/// predicted and target center poses (both (B,N,3)).
pub fn loss_local(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    Ok(loss_local_grad(pred, target)?.0)
}

pub fn loss_local_grad(pred: &Array3<f64>, target: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(
            "pose loss",
            format!("{:?}", target.dim()),
            format!("{:?}", pred.dim()),
        ));
    }
    let (b, n, _c) = pred.dim();
    let count = (b * n) as f64;
    let mut total = 0.0;
    let mut grad = Array3::zeros(pred.dim());
    for bi in 0..b {
        for j in 0..n {
            let mut sq = 0.0;
            for d in 0..3 {
                let diff = pred[[bi, j, d]] - target[[bi, j, d]];
                sq += diff * diff;
            }
            let norm = sq.sqrt();
            total += norm;
            if norm > 0.0 {
                for d in 0..3 {
                    let diff = pred[[bi, j, d]] - target[[bi, j, d]];
                    grad[[bi, j, d]] = diff / (norm * count);
                }
            }
        }
    }
    Ok((total / count, grad))
}

/// Horizontal flip of a whole window: x negated and joints permuted in the
/// 2D input, the 3D sequence and the center target.
pub fn augment_flip(window: &PoseWindow, perm: &[usize]) -> PoseWindow {
    let (t, n, _) = window.input2d.dim();
    let mut out = window.clone();
    for ti in 0..t {
        for j in 0..n {
            out.input2d[[ti, perm[j], 0]] = -window.input2d[[ti, j, 0]];
            out.input2d[[ti, perm[j], 1]] = window.input2d[[ti, j, 1]];
            out.seq3d[[ti, perm[j], 0]] = -window.seq3d[[ti, j, 0]];
            out.seq3d[[ti, perm[j], 1]] = window.seq3d[[ti, j, 1]];
            out.seq3d[[ti, perm[j], 2]] = window.seq3d[[ti, j, 2]];
        }
    }
    for j in 0..n {
        out.target3d[[perm[j], 0]] = -window.target3d[[j, 0]];
        out.target3d[[perm[j], 1]] = window.target3d[[j, 1]];
        out.target3d[[perm[j], 2]] = window.target3d[[j, 2]];
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// A parameter update rule; state is keyed by tensor name.
pub trait UpdateRule {
    fn update(&mut self, name: &str, step: usize, lr: f64, param: &mut [f64], grad: &[f64]);
}

/// Adaptive moments with bias correction and decoupled weight decay.
pub struct AdamRule {
    cfg: OptimizerConfig,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl UpdateRule for AdamRule {
    fn update(&mut self, name: &str, step: usize, lr: f64, param: &mut [f64], grad: &[f64]) {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for i in 0..param.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * (m_hat / (v_hat.sqrt() + self.cfg.epsilon)
                + self.cfg.weight_decay * param[i]);
        }
    }
}

/// Plain gradient descent, mainly for tests.
pub struct SgdRule;

impl UpdateRule for SgdRule {
    fn update(&mut self, _name: &str, _step: usize, lr: f64, param: &mut [f64], grad: &[f64]) {
        for i in 0..param.len() {
            param[i] -= lr * grad[i];
        }
    }
}

/// Drives an update rule over every parameter that received a gradient,
/// rounding parameters back to f32 precision after each update.
pub struct Optimizer {
    step: usize,
    rule: Box<dyn UpdateRule>,
}

impl Optimizer {
    pub fn adam(cfg: OptimizerConfig) -> Self {
        Self {
            step: 0,
            rule: Box::new(AdamRule {
                cfg,
                moments: BTreeMap::new(),
            }),
        }
    }

    pub fn sgd() -> Self {
        Self {
            step: 0,
            rule: Box::new(SgdRule),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn apply(&mut self, model: &mut LiftingModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let step = self.step;
        let rule = &mut self.rule;
        model.visit_params_mut(&mut |name, mut view| {
            if let Some(grad) = grads.get(&name) {
                let p = view
                    .as_slice_memory_order_mut()
                    .expect("parameters are contiguous");
                let g = grad.as_slice_memory_order().expect("gradients are contiguous");
                rule.update(&name, step, lr, p, g);
                for v in p.iter_mut() {
                    *v = round_f32(*v);
                }
            }
        });
    }
}

/// Stage 1 optimizes the sum of both losses; stage 2 only the center-pose
/// loss (the reconstruction head is still evaluated for reporting but gets
/// no gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepMetrics {
    pub loss_global: f64,
    pub loss_local: f64,
    /// The loss actually backpropagated for this stage.
    pub objective: f64,
}

pub fn train_step(
    model: &mut LiftingModel,
    batch: &Batch,
    stage: Stage,
    optimizer: &mut Optimizer,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepMetrics> {
    let out = model.forward(&batch.input, Mode::Train, Some(rng))?;
    let (lg, g_recon) = loss_global_grad(&out.recon_seq, &batch.target_seq)?;
    let (ll, g_center) = loss_local_grad(&out.center_pose, &batch.target_center)?;
    let objective = match stage {
        Stage::One => lg + ll,
        Stage::Two => ll,
    };
    if !objective.is_finite() {
        let tensor = model
            .first_non_finite_param()
            .or_else(|| {
                out.recon_seq
                    .iter()
                    .any(|v| !v.is_finite())
                    .then(|| "recon_seq".to_string())
            })
            .unwrap_or_else(|| "center_pose".to_string());
        return Err(Error::NonFinite { tensor });
    }
    let mut grads = Gradients::new();
    let recon_grad = match stage {
        Stage::One => Some(&g_recon),
        Stage::Two => None,
    };
    model.backward(&out.cache, recon_grad, &g_center, &mut grads);
    optimizer.apply(model, &grads, lr);
    model.apply_bn_updates(&out.cache);
    Ok(StepMetrics {
        loss_global: lg,
        loss_local: ll,
        objective,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epoch at which stage 2 starts; defaults to epochs/2.
    pub stage_boundary_epoch: Option<usize>,
    pub seed: u64,
    pub flip_augment: bool,
    /// Optional per-epoch exponential decay factor; constant rate when None.
    pub lr_decay: Option<f64>,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.01,
            epochs: 10,
            stage_boundary_epoch: None,
            seed: 0,
            flip_augment: true,
            lr_decay: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn boundary(&self) -> usize {
        self.stage_boundary_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.boundary() > self.epochs {
            return Err(Error::Config(format!(
                "stage boundary {} exceeds epochs {}",
                self.boundary(),
                self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: u8,
    pub loss_global: f64,
    pub loss_local: f64,
    pub objective: f64,
    pub val_mpjpe: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub entries: Vec<EpochStats>,
}

impl TrainHistory {
    /// Delimiter-separated table (one line per epoch) for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,loss_global,loss_local,objective,val_mpjpe,seconds\n");
        for e in &self.entries {
            let val = e
                .val_mpjpe
                .map(|v| format!("{v}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.stage, e.loss_global, e.loss_local, e.objective, val, e.seconds
            ));
        }
        out
    }
}

#[derive(Debug)]
pub struct FitResult {
    /// The best-validation model (the final model when there is no
    /// validation set).
    pub model: LiftingModel,
    pub history: TrainHistory,
    pub best_epoch: Option<usize>,
}

/// Validation MPJPE with plain (non-flip) inference, batched.
pub fn validation_mpjpe(model: &LiftingModel, windows: &[PoseWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Usage("validation needs at least one window".into()));
    }
    let root = model.graph().root();
    let mut total = 0.0;
    for chunk in windows.chunks(64) {
        let inputs: Vec<Array3<f64>> = chunk.iter().map(|w| w.input2d.clone()).collect();
        let preds = model.infer(&crate::data::input_batch(&inputs))?;
        for (bi, w) in chunk.iter().enumerate() {
            let pred = preds.index_axis(ndarray::Axis(0), bi);
            total += crate::evaluation::mpjpe(pred, w.target3d.view(), root)?;
        }
    }
    Ok(total / windows.len() as f64)
}

/// The two-stage training loop: shuffled mini-batches per epoch, stage
/// switch at the boundary epoch, per-epoch history, best-validation model
/// retained.
pub fn fit(
    model: LiftingModel,
    train: &[PoseWindow],
    val: &[PoseWindow],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    cfg.validate()?;
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::adam(cfg.optimizer.clone());
    let boundary = cfg.boundary();
    let flip_perm = model.graph().flip_permutation();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, LiftingModel)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let stage = if epoch < boundary { Stage::One } else { Stage::Two };
        let lr = cfg.learning_rate
            * cfg.lr_decay.map_or(1.0, |d| d.powi(epoch as i32));
        let mut indices: Vec<usize> = (0..train.len()).collect();
        indices.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let selected: Vec<PoseWindow> = chunk
                .iter()
                .map(|&i| {
                    if cfg.flip_augment && rng.random_range(0.0..1.0) < 0.5 {
                        augment_flip(&train[i], &flip_perm)
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&PoseWindow> = selected.iter().collect();
            let batch = make_batch(&refs);
            let m = train_step(&mut model, &batch, stage, &mut optimizer, lr, &mut rng)?;
            let w = chunk.len() as f64;
            sums.0 += m.loss_global * w;
            sums.1 += m.loss_local * w;
            sums.2 += m.objective * w;
            seen += chunk.len();
        }
        let val_mpjpe = if val.is_empty() {
            None
        } else {
            Some(validation_mpjpe(&model, val)?)
        };
        if let Some(v) = val_mpjpe {
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
        history.entries.push(EpochStats {
            epoch,
            stage: if stage == Stage::One { 1 } else { 2 },
            loss_global: sums.0 / seen as f64,
            loss_local: sums.1 / seen as f64,
            objective: sums.2 / seen as f64,
            val_mpjpe,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    let final_model = match best {
        Some((_, _, m)) => m,
        None => model,
    };
    Ok(FitResult {
        model: final_model,
        history,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub variant: AblationVariant,
    pub joints: usize,
    pub frames: usize,
    pub channels: usize,
    pub batch: usize,
    pub recon_depth: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub epsilon: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            variant: AblationVariant::Full,
            joints: 5,
            frames: 9,
            channels: 8,
            batch: 2,
            recon_depth: 2,
            seed: 42,
            tolerance: 1e-4,
            epsilon: 1e-5,
        }
    }
}

/// A small chain skeleton with pairwise-distinct gravity distances, used by
/// the gradient checker (the check is topology-agnostic).
fn chain_skeleton(joints: usize) -> Result<SkeletonGraph> {
    SkeletonGraph::custom(CustomSkeleton {
        joint_count: joints,
        edges: (1..joints).map(|i| (i - 1, i)).collect(),
        root: 0,
        left_right_pairs: vec![],
        joint_names: (0..joints).map(|i| format!("j{i}")).collect(),
        reference_pose: (0..joints)
            .map(|i| (1.1 * i as f64, 0.37 * (i * i) as f64))
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub variant: String,
    pub tolerance: f64,
    pub epsilon: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error >= self.tolerance)
            .map(|e| e.tensor.as_str())
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0f64, |m, e| m.max(e.max_rel_error))
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "gradient check: variant {}, tolerance {:.1e}, fd epsilon {:.1e}\n",
            self.variant, self.tolerance, self.epsilon
        );
        let name_width = self
            .entries
            .iter()
            .map(|e| e.tensor.len())
            .max()
            .unwrap_or(6)
            .max(6);
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>12}  {:>12}  status\n",
            "tensor",
            "elems",
            "max rel err",
            "max abs diff",
            width = name_width
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>12.3e}  {:>12.3e}  {}\n",
                e.tensor,
                e.elements,
                e.max_rel_error,
                e.max_abs_diff,
                if e.max_rel_error < self.tolerance { "ok" } else { "FAIL" },
                width = name_width
            ));
        }
        out.push_str(&format!(
            "result: {} ({} tensors, max rel error {:.3e})\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.entries.len(),
            self.max_rel_error()
        ));
        out
    }
}

/// Build the tiny model, nudge every parameter away from the degenerate
/// zero initialization, fix an input/target batch, and calibrate the
/// batch-norm running statistics to that batch — all deterministically from
/// the seed. Calibration matters: with fresh running statistics the check
/// would differentiate the network at a wildly ill-conditioned point (the
/// α-regularized adjacency normalization amplifies unnormalized activations
/// by up to 1/√α per block), drowning the finite differences in curvature.
fn grad_check_setup(cfg: &GradCheckConfig) -> Result<(LiftingModel, Batch)> {
    let mut model_cfg = ModelConfig {
        joints: cfg.joints,
        frames: cfg.frames,
        channels: cfg.channels,
        recon_depth: cfg.recon_depth,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    model_cfg.apply_variant(cfg.variant);
    let graph = chain_skeleton(cfg.joints)?;
    let mut model = LiftingModel::build(model_cfg, graph, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    model.visit_params_mut(&mut |_, mut view| {
        view.mapv_inplace(|v| round_f32(v + rng.random_range(-0.1..0.1)));
    });
    let input = Array4::from_shape_fn((cfg.batch, 2, cfg.frames, cfg.joints), |_| {
        rng.random_range(-1.0..1.0)
    });
    let target_seq = Array4::from_shape_fn((cfg.batch, 3, cfg.frames, cfg.joints), |_| {
        rng.random_range(-1.0..1.0)
    });
    let target_center = Array3::from_shape_fn((cfg.batch, cfg.joints, 3), |_| {
        rng.random_range(-1.0..1.0)
    });
    let calibration = model.forward(&input, Mode::Train, None)?;
    model.calibrate_batch_norm(&calibration.cache);
    Ok((
        model,
        Batch {
            input,
            target_center,
            target_seq,
        },
    ))
}

fn check_loss(model: &LiftingModel, batch: &Batch) -> Result<f64> {
    let out = model.forward(&batch.input, Mode::Eval, None)?;
    let lg = loss_global(&out.recon_seq, &batch.target_seq)?;
    let ll = loss_local(&out.center_pose, &batch.target_center)?;
    Ok(lg + ll)
}

/// Analytic and central-difference gradients of the combined loss for every
/// parameter tensor, on the checker's fixed batch. Runs in eval mode
/// (dropout off, running statistics as constants) so repeated runs are
/// identical.
pub fn grad_check_gradients(cfg: &GradCheckConfig) -> Result<(Gradients, Gradients)> {
    let (mut model, batch) = grad_check_setup(cfg)?;
    // Analytic.
    let out = model.forward(&batch.input, Mode::Eval, None)?;
    let (_, g_recon) = loss_global_grad(&out.recon_seq, &batch.target_seq)?;
    let (_, g_center) = loss_local_grad(&out.center_pose, &batch.target_center)?;
    let mut analytic = Gradients::new();
    model.backward(&out.cache, Some(&g_recon), &g_center, &mut analytic);
    // Numeric, element by element.
    let mut names: Vec<(String, Vec<usize>)> = Vec::new();
    model.visit_params(&mut |name, view| names.push((name, view.shape().to_vec())));
    let mut numeric = Gradients::new();
    for (name, shape) in &names {
        let len: usize = shape.iter().product();
        let mut grad = vec![0.0; len];
        for flat in 0..len {
            let mut original = 0.0;
            model.visit_params_mut(&mut |n, mut v| {
                if n == *name {
                    let s = v.as_slice_memory_order_mut().unwrap();
                    original = s[flat];
                    s[flat] = original + cfg.epsilon;
                }
            });
            let plus = check_loss(&model, &batch)?;
            model.visit_params_mut(&mut |n, mut v| {
                if n == *name {
                    v.as_slice_memory_order_mut().unwrap()[flat] = original - cfg.epsilon;
                }
            });
            let minus = check_loss(&model, &batch)?;
            model.visit_params_mut(&mut |n, mut v| {
                if n == *name {
                    v.as_slice_memory_order_mut().unwrap()[flat] = original;
                }
            });
            grad[flat] = (plus - minus) / (2.0 * cfg.epsilon);
        }
        numeric.accumulate(
            name,
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(shape), grad)
                .expect("numeric gradient shape"),
        );
    }
    Ok((analytic, numeric))
}

/// Per-tensor comparison. The relative error uses a small magnitude floor so
/// that finite-difference noise (~1e-8 absolute here) on near-zero gradients
/// is compared absolutely rather than blowing up the ratio.
pub fn compare_gradients(
    analytic: &Gradients,
    numeric: &Gradients,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    const FLOOR: f64 = 1e-3;
    let mut entries = Vec::new();
    for (name, num) in numeric.iter() {
        let zeros;
        let ana = match analytic.get(name) {
            Some(a) => a,
            None => {
                zeros = ndarray::ArrayD::zeros(num.raw_dim());
                &zeros
            }
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for (&a, &n) in ana.iter().zip(num.iter()) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(FLOOR);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        entries.push(GradCheckEntry {
            tensor: name.clone(),
            elements: num.len(),
            max_rel_error: max_rel,
            max_abs_diff: max_abs,
        });
    }
    GradCheckReport {
        variant: cfg.variant.to_string(),
        tolerance: cfg.tolerance,
        epsilon: cfg.epsilon,
        entries,
    }
}

/// Full gradient check: every parameter tensor of the configured variant,
/// against central finite differences at 64-bit precision.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (analytic, numeric) = grad_check_gradients(cfg)?;
    Ok(compare_gradients(&analytic, &numeric, cfg))
}

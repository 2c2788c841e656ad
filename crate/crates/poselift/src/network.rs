//! Full model assembly: a reconstruction branch that lifts the 2D sequence
//! into feature space (supervised by an intermediate 3D sequence), a stack of
//! strided modules that shrinks the sequence to one frame, and per-joint
//! estimation heads that read each joint's 3D position off its own feature
//! vector.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AgcnBlock, BlockCache, FeatureMap, Mode, Residual};
use crate::skeleton::{AdjacencyStack, SkeletonGraph};
use crate::tensor::{copy2, flatten2, matmul, round_f32, Gradients};

fn default_joints() -> usize {
    17
}
fn default_frames() -> usize {
    243
}
fn default_channels() -> usize {
    96
}
fn default_recon_depth() -> usize {
    2
}
fn default_temporal_kernel() -> usize {
    9
}
fn default_kernel_size() -> usize {
    3
}
fn default_stride() -> usize {
    3
}
fn default_dropout() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    0.5
}

/// Architecture hyperparameters. `frames` must be a power of `stride` so the
/// strided stack lands exactly on a single frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_joints")]
    pub joints: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Number of middle (C→C) blocks in the reconstruction branch.
    #[serde(default = "default_recon_depth")]
    pub recon_depth: usize,
    #[serde(default = "default_temporal_kernel")]
    pub temporal_kernel: usize,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Head mix: 1 uses only the per-joint (unshared) head, 0 only the
    /// shared one.
    #[serde(default = "default_lambda")]
    pub lambda_mix: f64,
    /// Drop the learned-adjacency and attention terms (static partition only).
    #[serde(default)]
    pub no_adaptive: bool,
    /// Run all temporal convolutions at stride 1 and average-pool time
    /// before the head.
    #[serde(default)]
    pub no_strided: bool,
    /// Replace the per-joint heads with one affine map over the flattened
    /// feature map.
    #[serde(default)]
    pub fc_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: default_joints(),
            frames: default_frames(),
            channels: default_channels(),
            recon_depth: default_recon_depth(),
            temporal_kernel: default_temporal_kernel(),
            kernel_size: default_kernel_size(),
            stride: default_stride(),
            dropout: default_dropout(),
            lambda_mix: default_lambda(),
            no_adaptive: false,
            no_strided: false,
            fc_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::Config("joints must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.kernel_size != 3 {
            return Err(Error::Config(format!(
                "kernel_size must be 3, got {}",
                self.kernel_size
            )));
        }
        if self.stride < 2 {
            return Err(Error::Config("stride must be at least 2".into()));
        }
        if self.temporal_kernel % 2 == 0 || self.temporal_kernel == 0 {
            return Err(Error::Config(format!(
                "temporal_kernel must be odd, got {}",
                self.temporal_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(Error::Config(format!(
                "lambda_mix must lie in [0,1], got {}",
                self.lambda_mix
            )));
        }
        self.strided_module_count()?;
        Ok(())
    }

    /// How many strided modules it takes to shrink `frames` to 1; errors
    /// unless `frames` is an exact power of `stride` (at least `stride`).
    pub fn strided_module_count(&self) -> Result<usize> {
        let mut t = self.frames;
        let mut m = 0;
        while t > 1 {
            if t % self.stride != 0 {
                return Err(Error::Config(format!(
                    "frames {} is not a power of stride {}",
                    self.frames, self.stride
                )));
            }
            t /= self.stride;
            m += 1;
        }
        if m == 0 {
            return Err(Error::Config(format!(
                "frames {} must be at least stride {}",
                self.frames, self.stride
            )));
        }
        Ok(m)
    }

    /// Temporal sizes seen entering each strided module and by the head.
    /// For the default 243/3 configuration: 243 81 27 9 3 1.
    pub fn temporal_schedule(&self) -> Result<Vec<usize>> {
        let m = self.strided_module_count()?;
        let mut out = vec![self.frames];
        let mut t = self.frames;
        for _ in 0..m {
            if !self.no_strided {
                t /= self.stride;
            }
            out.push(t);
        }
        if self.no_strided {
            // Average pooling collapses whatever is left.
            *out.last_mut().unwrap() = 1;
        }
        Ok(out)
    }

    pub fn apply_variant(&mut self, variant: AblationVariant) {
        match variant {
            AblationVariant::Full => {}
            AblationVariant::NoAdaptive => self.no_adaptive = true,
            AblationVariant::NoStrided => self.no_strided = true,
            AblationVariant::FcHead => self.fc_head = true,
        }
    }
}

/// The structural ablations of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoAdaptive,
    NoStrided,
    FcHead,
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no-adaptive" => Ok(Self::NoAdaptive),
            "no-strided" => Ok(Self::NoStrided),
            "fc-head" => Ok(Self::FcHead),
            other => Err(Error::Usage(format!(
                "unknown variant {other:?}; expected full, no-adaptive, no-strided or fc-head"
            ))),
        }
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Full => "full",
            Self::NoAdaptive => "no-adaptive",
            Self::NoStrided => "no-strided",
            Self::FcHead => "fc-head",
        };
        write!(f, "{s}")
    }
}

/// Estimation head reading 3D joint positions off the (C,1,N) feature map.
#[derive(Debug, Clone)]
pub enum Head {
    Individual(IndividualHead),
    Fully(FcHead),
}

/// Per-joint affine maps (unshared) blended with one joint-agnostic affine
/// map (shared) by a fixed mixing weight λ.
#[derive(Debug, Clone)]
pub struct IndividualHead {
    /// per joint: (channels, 3)
    pub unshared_w: Vec<Array2<f64>>,
    /// per joint: (3)
    pub unshared_b: Vec<Array1<f64>>,
    pub shared_w: Array2<f64>,
    pub shared_b: Array1<f64>,
    pub lambda: f64,
}

/// One affine map from the flattened (channels·joints) feature vector to all
/// 3·joints outputs.
#[derive(Debug, Clone)]
pub struct FcHead {
    /// (channels·joints, 3·joints)
    pub weight: Array2<f64>,
    /// (3·joints)
    pub bias: Array1<f64>,
}

fn uniform2(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| round_f32(rng.random_range(-bound..bound)))
}

impl Head {
    fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c, n) = (config.channels, config.joints);
        if config.fc_head {
            Head::Fully(FcHead {
                weight: uniform2(rng, (c * n, 3 * n), c * n),
                bias: Array1::zeros(3 * n),
            })
        } else {
            Head::Individual(IndividualHead {
                unshared_w: (0..n).map(|_| uniform2(rng, (c, 3), c)).collect(),
                unshared_b: (0..n).map(|_| Array1::zeros(3)).collect(),
                shared_w: uniform2(rng, (c, 3), c),
                shared_b: Array1::zeros(3),
                lambda: config.lambda_mix,
            })
        }
    }

    /// features: (B, C, 1, N) → poses (B, N, 3).
    pub fn forward(&self, features: &FeatureMap) -> Result<Array3<f64>> {
        let (b, c, t, n) = features.dim();
        if t != 1 {
            return Err(Error::Usage(format!(
                "head expects a single-frame feature map, got {t} frames"
            )));
        }
        let mut out = Array3::zeros((b, n, 3));
        match self {
            Head::Individual(h) => {
                for batch in 0..b {
                    for joint in 0..n {
                        let v = features.slice(s![batch, .., 0, joint]);
                        for d in 0..3 {
                            let mut unshared = h.unshared_b[joint][d];
                            let mut shared = h.shared_b[d];
                            for ch in 0..c {
                                unshared += v[ch] * h.unshared_w[joint][[ch, d]];
                                shared += v[ch] * h.shared_w[[ch, d]];
                            }
                            out[[batch, joint, d]] =
                                h.lambda * unshared + (1.0 - h.lambda) * shared;
                        }
                    }
                }
            }
            Head::Fully(h) => {
                for batch in 0..b {
                    // Flatten (C,1,N) channel-major: index = ch·N + joint.
                    let flat = flatten2(features.index_axis(Axis(0), batch), 1, c * n);
                    let y = matmul(flat, h.weight.view());
                    for joint in 0..n {
                        for d in 0..3 {
                            out[[batch, joint, d]] = y[[0, 3 * joint + d]] + h.bias[3 * joint + d];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns the gradient w.r.t. the feature map.
    fn backward(
        &self,
        features: &FeatureMap,
        grad_out: &Array3<f64>,
        grads: &mut Gradients,
    ) -> FeatureMap {
        let (b, c, _t, n) = features.dim();
        let mut dfeat = FeatureMap::zeros((b, c, 1, n));
        match self {
            Head::Individual(h) => {
                let mut d_shared_w = Array2::zeros((c, 3));
                let mut d_shared_b = Array1::zeros(3);
                for joint in 0..n {
                    let mut d_w = Array2::zeros((c, 3));
                    let mut d_b = Array1::zeros(3);
                    for batch in 0..b {
                        let v = features.slice(s![batch, .., 0, joint]);
                        for d in 0..3 {
                            let g = grad_out[[batch, joint, d]];
                            d_b[d] += h.lambda * g;
                            d_shared_b[d] += (1.0 - h.lambda) * g;
                            for ch in 0..c {
                                d_w[[ch, d]] += h.lambda * g * v[ch];
                                d_shared_w[[ch, d]] += (1.0 - h.lambda) * g * v[ch];
                                dfeat[[batch, ch, 0, joint]] += g
                                    * (h.lambda * h.unshared_w[joint][[ch, d]]
                                        + (1.0 - h.lambda) * h.shared_w[[ch, d]]);
                            }
                        }
                    }
                    grads.accumulate(&format!("head.joint{joint}.w"), d_w);
                    grads.accumulate(&format!("head.joint{joint}.b"), d_b);
                }
                grads.accumulate("head.shared.w", d_shared_w);
                grads.accumulate("head.shared.b", d_shared_b);
            }
            Head::Fully(h) => {
                let mut d_w = Array2::zeros(h.weight.dim());
                let mut d_b = Array1::zeros(h.bias.len());
                for batch in 0..b {
                    let flat = flatten2(features.index_axis(Axis(0), batch), 1, c * n);
                    let mut g_flat = Array2::zeros((1, 3 * n));
                    for joint in 0..n {
                        for d in 0..3 {
                            g_flat[[0, 3 * joint + d]] = grad_out[[batch, joint, d]];
                            d_b[3 * joint + d] += grad_out[[batch, joint, d]];
                        }
                    }
                    d_w += &matmul(flat.t(), g_flat.view());
                    let dx = matmul(g_flat.view(), h.weight.t()); // (1, c·n)
                    let dst = dfeat.index_axis_mut(Axis(0), batch);
                    let mut dst2 = dst
                        .into_shape_with_order((1, c * n))
                        .expect("contiguous head grad");
                    dst2 += &dx;
                }
                grads.accumulate("head.fc.w", d_w);
                grads.accumulate("head.fc.b", d_b);
            }
        }
        dfeat
    }

    fn visit_params(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        match self {
            Head::Individual(h) => {
                for j in 0..h.unshared_w.len() {
                    f(format!("head.joint{j}.w"), h.unshared_w[j].view().into_dyn());
                    f(format!("head.joint{j}.b"), h.unshared_b[j].view().into_dyn());
                }
                f("head.shared.w".into(), h.shared_w.view().into_dyn());
                f("head.shared.b".into(), h.shared_b.view().into_dyn());
            }
            Head::Fully(h) => {
                f("head.fc.w".into(), h.weight.view().into_dyn());
                f("head.fc.b".into(), h.bias.view().into_dyn());
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        match self {
            Head::Individual(h) => {
                for (j, w) in h.unshared_w.iter_mut().enumerate() {
                    f(format!("head.joint{j}.w"), w.view_mut().into_dyn());
                }
                for (j, b) in h.unshared_b.iter_mut().enumerate() {
                    f(format!("head.joint{j}.b"), b.view_mut().into_dyn());
                }
                f("head.shared.w".into(), h.shared_w.view_mut().into_dyn());
                f("head.shared.b".into(), h.shared_b.view_mut().into_dyn());
            }
            Head::Fully(h) => {
                f("head.fc.w".into(), h.weight.view_mut().into_dyn());
                f("head.fc.b".into(), h.bias.view_mut().into_dyn());
            }
        }
    }
}

/// Two consecutive blocks (second one strided) wrapped by an outer residual.
#[derive(Debug, Clone)]
pub struct StridedModule {
    name: String,
    pub first: AgcnBlock,
    pub second: AgcnBlock,
    pub wrap: Residual,
    stride: usize,
}

impl StridedModule {
    fn wrap_forward(&self, x: &FeatureMap, main: &mut FeatureMap) {
        match &self.wrap {
            Residual::Identity => *main += x,
            Residual::Projection(p) => {
                let (b, c, _t, n) = x.dim();
                let t_out = main.dim().2;
                for batch in 0..b {
                    let sub = x
                        .index_axis(Axis(0), batch)
                        .slice_move(s![.., ..;self.stride, ..]);
                    let sub2 = copy2(sub, c, t_out * n);
                    let proj = matmul(p.t(), sub2.view());
                    let dst = main.index_axis_mut(Axis(0), batch);
                    let mut dst2 = dst
                        .into_shape_with_order((proj.nrows(), t_out * n))
                        .expect("contiguous wrap sum");
                    dst2 += &proj;
                }
            }
        }
    }

    fn wrap_backward(
        &self,
        x: &FeatureMap,
        grad_out: &FeatureMap,
        grads: &mut Gradients,
    ) -> FeatureMap {
        match &self.wrap {
            Residual::Identity => grad_out.clone(),
            Residual::Projection(p) => {
                let (b, c, t_in, n) = x.dim();
                let t_out = grad_out.dim().2;
                let c_out = grad_out.dim().1;
                let mut dx = Array4::zeros((b, c, t_in, n));
                let mut dp = Array2::zeros(p.dim());
                for batch in 0..b {
                    let g2 = flatten2(grad_out.index_axis(Axis(0), batch), c_out, t_out * n);
                    let sub = x
                        .index_axis(Axis(0), batch)
                        .slice_move(s![.., ..;self.stride, ..]);
                    let sub2 = copy2(sub, c, t_out * n);
                    dp += &matmul(sub2.view(), g2.t());
                    let dsub = matmul(p.view(), g2)
                        .into_shape_with_order((c, t_out, n))
                        .expect("wrap grad shape");
                    let dst = dx.index_axis_mut(Axis(0), batch);
                    let strided = dst.slice_move(s![.., ..;self.stride, ..]);
                    ndarray::Zip::from(strided).and(&dsub).for_each(|o, &v| *o += v);
                }
                grads.accumulate(&format!("{}.res", self.name), dp);
                dx
            }
        }
    }
}

/// The assembled model with all parameter tensors.
#[derive(Debug, Clone)]
pub struct LiftingModel {
    config: ModelConfig,
    seed: u64,
    graph: SkeletonGraph,
    stack: AdjacencyStack,
    input_block: AgcnBlock,
    middle: Vec<AgcnBlock>,
    recon_head: AgcnBlock,
    strided: Vec<StridedModule>,
    pub head: Head,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    input_block: BlockCache,
    middle: Vec<BlockCache>,
    recon: BlockCache,
    strided: Vec<(BlockCache, BlockCache)>,
    /// Frames entering the average pooling, when the strided design is off.
    pooled_from: Option<usize>,
    head_input: FeatureMap,
}

impl ModelCache {
    /// Temporal sizes actually seen by the strided stack during this forward
    /// pass: the input length of each module, then the head's frame count.
    pub fn observed_schedule(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .strided
            .iter()
            .map(|(a, _)| a.graph.input.dim().2)
            .collect();
        out.push(self.head_input.dim().2);
        out
    }
}

/// Forward results: the reconstructed 3D sequence (B,3,T,N), the center-frame
/// pose estimate (B,N,3), and the cache.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub recon_seq: Array4<f64>,
    pub center_pose: Array3<f64>,
    pub cache: ModelCache,
}

/// Scalar parameter totals per branch.
#[derive(Debug, Clone, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub reconstruction: usize,
    pub strided: usize,
    pub head: usize,
}

impl LiftingModel {
    pub fn build(config: ModelConfig, graph: SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        if graph.joint_count() != config.joints {
            return Err(Error::Config(format!(
                "config expects {} joints but the skeleton has {}",
                config.joints,
                graph.joint_count()
            )));
        }
        let stack = graph.adjacency()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adaptive = !config.no_adaptive;
        let (c, n, k) = (config.channels, config.joints, config.kernel_size);
        let taps = config.temporal_kernel;
        let drop = config.dropout;
        let input_block =
            AgcnBlock::new("recon.in", 2, c, n, k, 1, taps, drop, adaptive, &mut rng)?;
        let middle = (0..config.recon_depth)
            .map(|i| {
                AgcnBlock::new(format!("recon.mid{i}"), c, c, n, k, 1, taps, drop, adaptive, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let recon_head =
            AgcnBlock::new("recon.out", c, 3, n, k, 1, taps, drop, adaptive, &mut rng)?;
        let module_count = config.strided_module_count()?;
        let stride = if config.no_strided { 1 } else { config.stride };
        let strided = (0..module_count)
            .map(|i| {
                let first = AgcnBlock::new(
                    format!("strided{i}.a"),
                    c,
                    c,
                    n,
                    k,
                    1,
                    taps,
                    drop,
                    adaptive,
                    &mut rng,
                )?;
                let second = AgcnBlock::new(
                    format!("strided{i}.b"),
                    c,
                    c,
                    n,
                    k,
                    stride,
                    taps,
                    drop,
                    adaptive,
                    &mut rng,
                )?;
                let wrap = if stride == 1 {
                    Residual::Identity
                } else {
                    Residual::Projection(uniform2(&mut rng, (c, c), c))
                };
                Ok(StridedModule {
                    name: format!("strided{i}"),
                    first,
                    second,
                    wrap,
                    stride,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Head::new(&config, &mut rng);
        Ok(Self {
            config,
            seed,
            graph,
            stack,
            input_block,
            middle,
            recon_head,
            strided,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn stack(&self) -> &AdjacencyStack {
        &self.stack
    }

    pub fn strided_modules(&self) -> &[StridedModule] {
        &self.strided
    }

    pub fn forward(
        &self,
        input: &Array4<f64>,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelOutput> {
        let (_b, c_in, t, n) = input.dim();
        if c_in != 2 || t != self.config.frames || n != self.config.joints {
            return Err(Error::shape(
                "model input",
                format!("(B, 2, {}, {})", self.config.frames, self.config.joints),
                format!("(B, {c_in}, {t}, {n})"),
            ));
        }
        let (mut h, input_cache) =
            self.input_block
                .forward(&self.stack, input, mode, rng.as_deref_mut())?;
        let mut middle_caches = Vec::with_capacity(self.middle.len());
        for blk in &self.middle {
            let (next, cache) = blk.forward(&self.stack, &h, mode, rng.as_deref_mut())?;
            middle_caches.push(cache);
            h = next;
        }
        let (recon_seq, recon_cache) =
            self.recon_head
                .forward(&self.stack, &h, mode, rng.as_deref_mut())?;
        let mut s = h;
        let mut strided_caches = Vec::with_capacity(self.strided.len());
        for module in &self.strided {
            let (a_out, a_cache) = module
                .first
                .forward(&self.stack, &s, mode, rng.as_deref_mut())?;
            let (mut b_out, b_cache) =
                module
                    .second
                    .forward(&self.stack, &a_out, mode, rng.as_deref_mut())?;
            module.wrap_forward(&s, &mut b_out);
            strided_caches.push((a_cache, b_cache));
            s = b_out;
        }
        let (head_input, pooled_from) = if self.config.no_strided {
            let (b, c, t_s, n) = s.dim();
            let mut pooled = Array4::zeros((b, c, 1, n));
            for ti in 0..t_s {
                let frame = s.slice(s![.., .., ti, ..]);
                let mut dst = pooled.slice_mut(s![.., .., 0, ..]);
                dst += &frame;
            }
            pooled /= t_s as f64;
            (pooled, Some(t_s))
        } else {
            (s, None)
        };
        let center_pose = self.head.forward(&head_input)?;
        Ok(ModelOutput {
            recon_seq,
            center_pose,
            cache: ModelCache {
                input_block: input_cache,
                middle: middle_caches,
                recon: recon_cache,
                strided: strided_caches,
                pooled_from,
                head_input,
            },
        })
    }

    /// Estimation head as a standalone operation on a (B,C,1,N) feature map.
    pub fn head_forward(&self, features: &FeatureMap) -> Result<Array3<f64>> {
        self.head.forward(features)
    }

    /// Reverse-mode pass. `grad_recon` may be omitted (e.g. when only the
    /// center loss is optimized); the reconstruction head then receives no
    /// gradient at all.
    pub fn backward(
        &self,
        cache: &ModelCache,
        grad_recon: Option<&Array4<f64>>,
        grad_center: &Array3<f64>,
        grads: &mut Gradients,
    ) {
        let d_head = self.head.backward(&cache.head_input, grad_center, grads);
        let mut ds = match cache.pooled_from {
            Some(t) => {
                let (b, c, _one, n) = d_head.dim();
                let mut expanded = Array4::zeros((b, c, t, n));
                let scale = 1.0 / t as f64;
                for ti in 0..t {
                    let mut dst = expanded.slice_mut(s![.., .., ti, ..]);
                    ndarray::Zip::from(&mut dst)
                        .and(&d_head.slice(s![.., .., 0, ..]))
                        .for_each(|o, &v| *o = v * scale);
                }
                expanded
            }
            None => d_head,
        };
        for (module, (a_cache, b_cache)) in
            self.strided.iter().zip(cache.strided.iter()).rev()
        {
            let module_input = &a_cache.graph.input;
            let d_wrap = module.wrap_backward(module_input, &ds, grads);
            let d_a = module.second.backward(&self.stack, b_cache, &ds, grads);
            let d_main = module.first.backward(&self.stack, a_cache, &d_a, grads);
            ds = d_main + d_wrap;
        }
        let mut d_trunk = ds;
        if let Some(g) = grad_recon {
            d_trunk += &self.recon_head.backward(&self.stack, &cache.recon, g, grads);
        }
        for (blk, blk_cache) in self.middle.iter().zip(cache.middle.iter()).rev() {
            d_trunk = blk.backward(&self.stack, blk_cache, &d_trunk, grads);
        }
        let _ = self
            .input_block
            .backward(&self.stack, &cache.input_block, &d_trunk, grads);
    }

    /// Fold all cached batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, cache: &ModelCache) {
        self.input_block.apply_bn_updates(&cache.input_block);
        for (blk, c) in self.middle.iter_mut().zip(cache.middle.iter()) {
            blk.apply_bn_updates(c);
        }
        self.recon_head.apply_bn_updates(&cache.recon);
        for (module, (ca, cb)) in self.strided.iter_mut().zip(cache.strided.iter()) {
            module.first.apply_bn_updates(ca);
            module.second.apply_bn_updates(cb);
        }
    }

    /// Set every running statistic to the batch statistics of a train-mode
    /// cache, so an eval-mode forward on the same batch reproduces its
    /// activations exactly.
    pub fn calibrate_batch_norm(&mut self, cache: &ModelCache) {
        self.input_block.calibrate_bn(&cache.input_block);
        for (blk, c) in self.middle.iter_mut().zip(cache.middle.iter()) {
            blk.calibrate_bn(c);
        }
        self.recon_head.calibrate_bn(&cache.recon);
        for (module, (ca, cb)) in self.strided.iter_mut().zip(cache.strided.iter()) {
            module.first.calibrate_bn(ca);
            module.second.calibrate_bn(cb);
        }
    }

    /// Test-time inference averaging the plain prediction with the
    /// unflipped prediction of the horizontally flipped input.
    pub fn infer_with_flip(
        &self,
        input: &Array4<f64>,
        flip_perm: &[usize],
    ) -> Result<Array3<f64>> {
        let plain = self.forward(input, Mode::Eval, None)?.center_pose;
        let flipped_in = flip_input_2d(input, flip_perm);
        let flipped_out = self.forward(&flipped_in, Mode::Eval, None)?.center_pose;
        let restored = flip_pose_3d(&flipped_out, flip_perm);
        Ok((&plain + &restored) * 0.5)
    }

    /// Plain eval-mode center-pose prediction.
    pub fn infer(&self, input: &Array4<f64>) -> Result<Array3<f64>> {
        Ok(self.forward(input, Mode::Eval, None)?.center_pose)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        self.input_block.visit_params(f);
        for blk in &self.middle {
            blk.visit_params(f);
        }
        self.recon_head.visit_params(f);
        for module in &self.strided {
            module.first.visit_params(f);
            module.second.visit_params(f);
            if let Residual::Projection(p) = &module.wrap {
                f(format!("{}.res", module.name), p.view().into_dyn());
            }
        }
        self.head.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.input_block.visit_params_mut(f);
        for blk in &mut self.middle {
            blk.visit_params_mut(f);
        }
        self.recon_head.visit_params_mut(f);
        for module in &mut self.strided {
            module.first.visit_params_mut(f);
            module.second.visit_params_mut(f);
            if let Residual::Projection(p) = &mut module.wrap {
                f(format!("{}.res", module.name), p.view_mut().into_dyn());
            }
        }
        self.head.visit_params_mut(f);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        self.input_block.visit_buffers(f);
        for blk in &self.middle {
            blk.visit_buffers(f);
        }
        self.recon_head.visit_buffers(f);
        for module in &self.strided {
            module.first.visit_buffers(f);
            module.second.visit_buffers(f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.input_block.visit_buffers_mut(f);
        for blk in &mut self.middle {
            blk.visit_buffers_mut(f);
        }
        self.recon_head.visit_buffers_mut(f);
        for module in &mut self.strided {
            module.first.visit_buffers_mut(f);
            module.second.visit_buffers_mut(f);
        }
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount {
            total: 0,
            reconstruction: 0,
            strided: 0,
            head: 0,
        };
        self.visit_params(&mut |name, view| {
            let len = view.len();
            count.total += len;
            if name.starts_with("recon") {
                count.reconstruction += len;
            } else if name.starts_with("strided") {
                count.strided += len;
            } else {
                count.head += len;
            }
        });
        count
    }

    /// First parameter tensor containing a non-finite value, if any.
    pub fn first_non_finite_param(&self) -> Option<String> {
        let mut found = None;
        self.visit_params(&mut |name, view| {
            if found.is_none() && view.iter().any(|v| !v.is_finite()) {
                found = Some(name);
            }
        });
        found
    }
}

/// Horizontal flip of a 2D input sequence (B,2,T,N): the x channel is
/// negated and joints are permuted.
pub fn flip_input_2d(input: &Array4<f64>, perm: &[usize]) -> Array4<f64> {
    let (b, c, t, n) = input.dim();
    debug_assert_eq!(c, 2);
    let mut out = Array4::zeros((b, c, t, n));
    for batch in 0..b {
        for ti in 0..t {
            for j in 0..n {
                out[[batch, 0, ti, perm[j]]] = -input[[batch, 0, ti, j]];
                out[[batch, 1, ti, perm[j]]] = input[[batch, 1, ti, j]];
            }
        }
    }
    out
}

/// Horizontal flip of predicted poses (B,N,3): x negated, joints permuted.
/// The permutation is an involution, so this both applies and undoes a flip.
pub fn flip_pose_3d(pose: &Array3<f64>, perm: &[usize]) -> Array3<f64> {
    let (b, n, _) = pose.dim();
    let mut out = Array3::zeros((b, n, 3));
    for batch in 0..b {
        for j in 0..n {
            out[[batch, perm[j], 0]] = -pose[[batch, j, 0]];
            out[[batch, perm[j], 1]] = pose[[batch, j, 1]];
            out[[batch, perm[j], 2]] = pose[[batch, j, 2]];
        }
    }
    out
}

//! The AGCN block: adaptive graph convolution → batch norm → ReLU → dropout
//! → strided temporal convolution → batch norm → residual add → ReLU.
//!
//! The residual is the identity when shapes allow it, otherwise a 1×1
//! projection with the block's temporal stride.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

use super::batchnorm::{BatchNorm, BatchNormCache};
use super::graph_conv::{AdaptiveParams, GraphConv, GraphConvCache};
use super::temporal::{temporal_output_len, TemporalConv};
use super::{FeatureMap, Mode};
use crate::error::{Error, Result};
use crate::skeleton::AdjacencyStack;
use crate::tensor::{copy2, matmul, round_f32, Gradients};

#[derive(Debug, Clone)]
pub enum Residual {
    Identity,
    /// (c_in, c_out) map applied to every S-th input frame.
    Projection(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct AgcnBlock {
    pub name: String,
    pub stride: usize,
    pub dropout_rate: f64,
    pub graph: GraphConv,
    pub bn_graph: BatchNorm,
    pub temporal: TemporalConv,
    pub bn_temporal: BatchNorm,
    pub residual: Residual,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub mode: Mode,
    pub graph: GraphConvCache,
    pub bn_graph: BatchNormCache,
    relu_mid: FeatureMap,
    dropout_mask: Option<FeatureMap>,
    temporal_input: FeatureMap,
    pub bn_temporal: BatchNormCache,
    output: FeatureMap,
}

fn uniform_init(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    fan_in: usize,
) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| round_f32(rng.random_range(-bound..bound)))
}

impl AgcnBlock {
    /// Build a block with fresh parameters. `adaptive = false` removes the
    /// learned-adjacency and attention terms entirely.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        joints: usize,
        subsets: usize,
        stride: usize,
        temporal_taps: usize,
        dropout_rate: f64,
        adaptive: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if temporal_taps % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel size must be odd, got {temporal_taps}"
            )));
        }
        let weight = (0..subsets)
            .map(|_| uniform_init(rng, (c_in, c_out), c_in))
            .collect();
        let adaptive = adaptive.then(|| {
            let e = (c_out / 4).max(1);
            AdaptiveParams {
                adj: (0..subsets).map(|_| Array2::zeros((joints, joints))).collect(),
                theta: (0..subsets).map(|_| Array2::zeros((c_in, e))).collect(),
                phi: (0..subsets).map(|_| Array2::zeros((c_in, e))).collect(),
            }
        });
        let fan = c_out * temporal_taps;
        let bound = 1.0 / (fan as f64).sqrt();
        let kernel = Array3::from_shape_fn((c_out, c_out, temporal_taps), |_| {
            round_f32(rng.random_range(-bound..bound))
        });
        let residual = if c_in == c_out && stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection(uniform_init(rng, (c_in, c_out), c_in))
        };
        Ok(Self {
            name: name.into(),
            stride,
            dropout_rate,
            graph: GraphConv {
                weight,
                adaptive,
            },
            bn_graph: BatchNorm::new(c_out),
            temporal: TemporalConv::new(kernel, Array1::zeros(c_out), stride)?,
            bn_temporal: BatchNorm::new(c_out),
            residual,
        })
    }

    pub fn c_in(&self) -> usize {
        self.graph.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.graph.c_out()
    }

    pub fn output_frames(&self, t_in: usize) -> usize {
        temporal_output_len(t_in, self.stride)
    }

    pub fn forward(
        &self,
        stack: &AdjacencyStack,
        x: &FeatureMap,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(FeatureMap, BlockCache)> {
        let (gc_out, graph_cache) = self.graph.forward(stack, x)?;
        let (bn1_out, bn1_cache) = self.bn_graph.forward(&gc_out, mode);
        let relu_mid = bn1_out.mapv(|v| v.max(0.0));
        let (temporal_input, dropout_mask) = if mode.is_train() && self.dropout_rate > 0.0 {
            let rng = rng.ok_or_else(|| {
                Error::Usage("train-mode forward with dropout needs a seeded rng".into())
            })?;
            let keep = 1.0 - self.dropout_rate;
            let mask = FeatureMap::from_shape_fn(relu_mid.dim(), |_| {
                if rng.random_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            (&relu_mid * &mask, Some(mask))
        } else {
            (relu_mid.clone(), None)
        };
        let tc_out = self.temporal.forward(&temporal_input)?;
        let (bn2_out, bn2_cache) = self.bn_temporal.forward(&tc_out, mode);
        let with_res = match &self.residual {
            Residual::Identity => &bn2_out + x,
            Residual::Projection(p) => {
                let mut sum = bn2_out;
                let (b, _c_in, _t_in, n) = x.dim();
                let t_out = sum.dim().2;
                let c_out = self.c_out();
                for batch in 0..b {
                    let sub = x
                        .index_axis(Axis(0), batch)
                        .slice_move(s![.., ..;self.stride, ..]);
                    let sub2 = copy2(sub, self.c_in(), t_out * n);
                    let proj = matmul(p.t(), sub2.view());
                    let dst = sum.index_axis_mut(Axis(0), batch);
                    let mut dst2 = dst
                        .into_shape_with_order((c_out, t_out * n))
                        .expect("contiguous sum");
                    dst2 += &proj;
                }
                sum
            }
        };
        let output = with_res.mapv(|v| v.max(0.0));
        let cache = BlockCache {
            mode,
            graph: graph_cache,
            bn_graph: bn1_cache,
            relu_mid,
            dropout_mask,
            temporal_input,
            bn_temporal: bn2_cache,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Reverse the block. Parameter gradients are accumulated under this
    /// block's name; the return value is the gradient w.r.t. the input.
    pub fn backward(
        &self,
        stack: &AdjacencyStack,
        cache: &BlockCache,
        grad_out: &FeatureMap,
        grads: &mut Gradients,
    ) -> FeatureMap {
        // Final ReLU.
        let mut d_sum = grad_out.clone();
        ndarray::Zip::from(&mut d_sum)
            .and(&cache.output)
            .for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        // Residual branch.
        let (b, c_in, t_in, n) = cache.graph.input.dim();
        let mut dx_res = Array4::zeros((b, c_in, t_in, n));
        match &self.residual {
            Residual::Identity => dx_res += &d_sum,
            Residual::Projection(p) => {
                let t_out = d_sum.dim().2;
                let c_out = self.c_out();
                let mut dp = Array2::zeros(p.dim());
                for batch in 0..b {
                    let g2 = crate::tensor::flatten2(
                        d_sum.index_axis(Axis(0), batch),
                        c_out,
                        t_out * n,
                    );
                    let sub = cache
                        .graph
                        .input
                        .index_axis(Axis(0), batch)
                        .slice_move(s![.., ..;self.stride, ..]);
                    let sub2 = copy2(sub, c_in, t_out * n);
                    // dP += X_sub · Gᵀ ; dX_sub = P · G
                    dp += &matmul(sub2.view(), g2.t());
                    let dsub = matmul(p.view(), g2)
                        .into_shape_with_order((c_in, t_out, n))
                        .expect("residual grad shape");
                    let dst = dx_res.index_axis_mut(Axis(0), batch);
                    let strided = dst.slice_move(s![.., ..;self.stride, ..]);
                    ndarray::Zip::from(strided).and(&dsub).for_each(|o, &v| *o += v);
                }
                grads.accumulate(&format!("{}.res", self.name), dp);
            }
        }
        // Main branch.
        let (d_tc, dg2, db2) = self.bn_temporal.backward(&cache.bn_temporal, &d_sum);
        grads.accumulate(&format!("{}.bn2.gamma", self.name), dg2);
        grads.accumulate(&format!("{}.bn2.beta", self.name), db2);
        let (mut d_drop, dk, dkb) = self.temporal.backward(&cache.temporal_input, &d_tc);
        grads.accumulate(&format!("{}.tk.weight", self.name), dk);
        grads.accumulate(&format!("{}.tk.bias", self.name), dkb);
        if let Some(mask) = &cache.dropout_mask {
            d_drop *= mask;
        }
        ndarray::Zip::from(&mut d_drop)
            .and(&cache.relu_mid)
            .for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        let (d_gc, dg1, db1) = self.bn_graph.backward(&cache.bn_graph, &d_drop);
        grads.accumulate(&format!("{}.bn1.gamma", self.name), dg1);
        grads.accumulate(&format!("{}.bn1.beta", self.name), db1);
        let dx_main = self
            .graph
            .backward(stack, &cache.graph, &d_gc, &self.name, grads);
        dx_main + dx_res
    }

    /// Fold the cached batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, cache: &BlockCache) {
        self.bn_graph.update_running(&cache.bn_graph);
        self.bn_temporal.update_running(&cache.bn_temporal);
    }

    /// Set the running estimates to the cached batch statistics exactly.
    pub fn calibrate_bn(&mut self, cache: &BlockCache) {
        self.bn_graph.calibrate(&cache.bn_graph);
        self.bn_temporal.calibrate(&cache.bn_temporal);
    }

    /// Visit every trainable tensor as (name, view), in a fixed order that
    /// matches the names used by `backward`.
    pub fn visit_params(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        for (k, w) in self.graph.weight.iter().enumerate() {
            f(format!("{}.w{k}", self.name), w.view().into_dyn());
        }
        if let Some(a) = &self.graph.adaptive {
            for k in 0..a.adj.len() {
                f(format!("{}.adj{k}", self.name), a.adj[k].view().into_dyn());
                f(format!("{}.theta{k}", self.name), a.theta[k].view().into_dyn());
                f(format!("{}.phi{k}", self.name), a.phi[k].view().into_dyn());
            }
        }
        f(format!("{}.tk.weight", self.name), self.temporal.weight.view().into_dyn());
        f(format!("{}.tk.bias", self.name), self.temporal.bias.view().into_dyn());
        f(format!("{}.bn1.gamma", self.name), self.bn_graph.gamma.view().into_dyn());
        f(format!("{}.bn1.beta", self.name), self.bn_graph.beta.view().into_dyn());
        f(format!("{}.bn2.gamma", self.name), self.bn_temporal.gamma.view().into_dyn());
        f(format!("{}.bn2.beta", self.name), self.bn_temporal.beta.view().into_dyn());
        if let Residual::Projection(p) = &self.residual {
            f(format!("{}.res", self.name), p.view().into_dyn());
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        for (k, w) in self.graph.weight.iter_mut().enumerate() {
            f(format!("{}.w{k}", self.name), w.view_mut().into_dyn());
        }
        if let Some(a) = &mut self.graph.adaptive {
            for (k, m) in a.adj.iter_mut().enumerate() {
                f(format!("{}.adj{k}", self.name), m.view_mut().into_dyn());
            }
            for (k, m) in a.theta.iter_mut().enumerate() {
                f(format!("{}.theta{k}", self.name), m.view_mut().into_dyn());
            }
            for (k, m) in a.phi.iter_mut().enumerate() {
                f(format!("{}.phi{k}", self.name), m.view_mut().into_dyn());
            }
        }
        f(format!("{}.tk.weight", self.name), self.temporal.weight.view_mut().into_dyn());
        f(format!("{}.tk.bias", self.name), self.temporal.bias.view_mut().into_dyn());
        f(format!("{}.bn1.gamma", self.name), self.bn_graph.gamma.view_mut().into_dyn());
        f(format!("{}.bn1.beta", self.name), self.bn_graph.beta.view_mut().into_dyn());
        f(format!("{}.bn2.gamma", self.name), self.bn_temporal.gamma.view_mut().into_dyn());
        f(format!("{}.bn2.beta", self.name), self.bn_temporal.beta.view_mut().into_dyn());
        if let Residual::Projection(p) = &mut self.residual {
            f(format!("{}.res", self.name), p.view_mut().into_dyn());
        }
    }

    /// Non-trainable state: batch-norm running statistics.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        f(format!("{}.bn1.running_mean", self.name), self.bn_graph.running_mean.view().into_dyn());
        f(format!("{}.bn1.running_var", self.name), self.bn_graph.running_var.view().into_dyn());
        f(format!("{}.bn2.running_mean", self.name), self.bn_temporal.running_mean.view().into_dyn());
        f(format!("{}.bn2.running_var", self.name), self.bn_temporal.running_var.view().into_dyn());
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        f(format!("{}.bn1.running_mean", self.name), self.bn_graph.running_mean.view_mut().into_dyn());
        f(format!("{}.bn1.running_var", self.name), self.bn_graph.running_var.view_mut().into_dyn());
        f(format!("{}.bn2.running_mean", self.name), self.bn_temporal.running_mean.view_mut().into_dyn());
        f(format!("{}.bn2.running_var", self.name), self.bn_temporal.running_var.view_mut().into_dyn());
    }
}

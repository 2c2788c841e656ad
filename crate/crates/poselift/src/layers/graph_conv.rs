//! Adaptive graph convolution.
//!
//! Joints are mixed along the joint axis by, per subset k, the sum of three
//! N×N matrices: the static degree-normalized partition matrix, a freely
//! learned adjacency (zero at initialization), and an input-dependent
//! attention matrix obtained by embedding the input twice and row-softmaxing
//! the N×N similarity of the embeddings. Each subset then projects channels
//! with its own 1×1 weight; subset contributions are summed. There is no
//! bias in this stage.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::skeleton::AdjacencyStack;
use crate::tensor::{flatten2, matmul, matmul_into, Gradients};

/// Learned pieces of the adaptive term: per-subset free adjacency and the
/// two embedding projections behind the attention matrix. All start at zero,
/// which makes every attention row exactly uniform.
#[derive(Debug, Clone)]
pub struct AdaptiveParams {
    /// per subset: (n, n)
    pub adj: Vec<Array2<f64>>,
    /// per subset: (c_in, c_e)
    pub theta: Vec<Array2<f64>>,
    /// per subset: (c_in, c_e)
    pub phi: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct GraphConv {
    /// per subset: (c_in, c_out)
    pub weight: Vec<Array2<f64>>,
    pub adaptive: Option<AdaptiveParams>,
}

#[derive(Debug, Clone)]
pub struct GraphConvCache {
    pub input: FeatureMap,
    /// per subset: input projected by W_k, (b, c_out, t, n)
    projected: Vec<FeatureMap>,
    /// per subset: attention matrices, (b, n, n)
    attention: Vec<Array3<f64>>,
    /// per subset: θ / φ embeddings of the input, (b, c_e, t, n)
    theta_emb: Vec<FeatureMap>,
    phi_emb: Vec<FeatureMap>,
}

/// Numerically safe softmax along each row.
pub fn row_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Project channels: x (b, c_in, t, n) through w (c_in, e) → (b, e, t, n).
fn project_channels(x: &FeatureMap, w: ArrayView2<f64>) -> FeatureMap {
    let (b, c_in, t, n) = x.dim();
    let e = w.ncols();
    let mut out = Array4::zeros((b, e, t, n));
    for batch in 0..b {
        let x2 = flatten2(x.index_axis(Axis(0), batch), c_in, t * n);
        let out_b = out.index_axis_mut(Axis(0), batch);
        let mut out2 = out_b
            .into_shape_with_order((e, t * n))
            .expect("contiguous output");
        matmul_into(1.0, w.t(), x2, 0.0, &mut out2);
    }
    out
}

/// Input-dependent joint-affinity matrix for one subset.
///
/// The input is embedded twice ((c_in → c_e) channel projections), each
/// embedding is viewed per sample as an N×(c_e·T) matrix, and their N×N
/// product is row-softmaxed, so every row sums to one.
pub fn attention_matrix(
    x: &FeatureMap,
    theta: &Array2<f64>,
    phi: &Array2<f64>,
) -> Array3<f64> {
    attention_with_embeddings(x, theta, phi).0
}

fn attention_with_embeddings(
    x: &FeatureMap,
    theta: &Array2<f64>,
    phi: &Array2<f64>,
) -> (Array3<f64>, FeatureMap, FeatureMap) {
    let (b, _c_in, t, n) = x.dim();
    let e = theta.ncols();
    let theta_emb = project_channels(x, theta.view());
    let phi_emb = project_channels(x, phi.view());
    let mut attn = Array3::zeros((b, n, n));
    for batch in 0..b {
        // (c_e, t, n) reinterpreted as (c_e·t, n): column i is joint i's
        // flattened embedding.
        let tm = flatten2(theta_emb.index_axis(Axis(0), batch), e * t, n);
        let pm = flatten2(phi_emb.index_axis(Axis(0), batch), e * t, n);
        let logits = matmul(tm.t(), pm);
        attn.index_axis_mut(Axis(0), batch)
            .assign(&row_softmax(logits.view()));
    }
    (attn, theta_emb, phi_emb)
}

impl GraphConv {
    pub fn subset_count(&self) -> usize {
        self.weight.len()
    }

    pub fn c_in(&self) -> usize {
        self.weight[0].nrows()
    }

    pub fn c_out(&self) -> usize {
        self.weight[0].ncols()
    }

    pub fn forward(
        &self,
        stack: &AdjacencyStack,
        x: &FeatureMap,
    ) -> Result<(FeatureMap, GraphConvCache)> {
        let (b, c_in, t, n) = x.dim();
        if stack.normalized().is_empty() {
            return Err(Error::Usage(
                "adjacency stack must be normalized before use".into(),
            ));
        }
        if stack.subset_count() != self.subset_count() {
            return Err(Error::shape(
                "graph conv subsets",
                format!("{}", self.subset_count()),
                format!("{}", stack.subset_count()),
            ));
        }
        if stack.joint_count() != n {
            return Err(Error::shape(
                "graph conv joint axis",
                format!("{}", stack.joint_count()),
                format!("{n}"),
            ));
        }
        if c_in != self.c_in() {
            return Err(Error::shape(
                "graph conv channel axis",
                format!("{}", self.c_in()),
                format!("{c_in}"),
            ));
        }
        let c_out = self.c_out();
        let mut out = Array4::zeros((b, c_out, t, n));
        let mut projected = Vec::with_capacity(self.subset_count());
        let mut attention = Vec::with_capacity(self.subset_count());
        let mut theta_embs = Vec::with_capacity(self.subset_count());
        let mut phi_embs = Vec::with_capacity(self.subset_count());
        for k in 0..self.subset_count() {
            let h = project_channels(x, self.weight[k].view());
            let (attn, theta_emb, phi_emb) = match &self.adaptive {
                Some(params) => {
                    attention_with_embeddings(x, &params.theta[k], &params.phi[k])
                }
                None => (
                    Array3::zeros((b, 0, 0)),
                    Array4::zeros((b, 0, 0, 0)),
                    Array4::zeros((b, 0, 0, 0)),
                ),
            };
            let mut m_static = stack.normalized()[k].clone();
            if let Some(params) = &self.adaptive {
                m_static += &params.adj[k];
            }
            for batch in 0..b {
                let mixing = match &self.adaptive {
                    Some(_) => &m_static + &attn.index_axis(Axis(0), batch),
                    None => m_static.clone(),
                };
                let h2 = flatten2(h.index_axis(Axis(0), batch), c_out * t, n);
                let out_b = out.index_axis_mut(Axis(0), batch);
                let mut out2 = out_b
                    .into_shape_with_order((c_out * t, n))
                    .expect("contiguous output");
                // out[.., n] += Σ_m mixing[n, m] · h[.., m]
                matmul_into(1.0, h2, mixing.t(), 1.0, &mut out2);
            }
            projected.push(h);
            attention.push(attn);
            theta_embs.push(theta_emb);
            phi_embs.push(phi_emb);
        }
        Ok((
            out,
            GraphConvCache {
                input: x.clone(),
                projected,
                attention,
                theta_emb: theta_embs,
                phi_emb: phi_embs,
            },
        ))
    }

    /// Accumulates parameter gradients under `prefix` and returns the input
    /// gradient. The input enters through the joint mixing and, when the
    /// adaptive term is present, again through both attention embeddings.
    pub fn backward(
        &self,
        stack: &AdjacencyStack,
        cache: &GraphConvCache,
        grad_out: &FeatureMap,
        prefix: &str,
        grads: &mut Gradients,
    ) -> FeatureMap {
        let (b, c_in, t, n) = cache.input.dim();
        let c_out = self.c_out();
        let mut dx = Array4::zeros((b, c_in, t, n));
        for k in 0..self.subset_count() {
            let mut m_static = stack.normalized()[k].clone();
            if let Some(params) = &self.adaptive {
                m_static += &params.adj[k];
            }
            let mut dw = Array2::zeros((c_in, c_out));
            let mut dadj = Array2::zeros((n, n));
            let e = self.adaptive.as_ref().map(|p| p.theta[k].ncols()).unwrap_or(0);
            let mut dtheta = Array2::zeros((c_in, e));
            let mut dphi = Array2::zeros((c_in, e));
            for batch in 0..b {
                let g2 = flatten2(grad_out.index_axis(Axis(0), batch), c_out * t, n);
                let h2 = flatten2(cache.projected[k].index_axis(Axis(0), batch), c_out * t, n);
                let x2 = flatten2(cache.input.index_axis(Axis(0), batch), c_in, t * n);
                // Gradient through the joint mixing.
                let mixing = match &self.adaptive {
                    Some(_) => &m_static + &cache.attention[k].index_axis(Axis(0), batch),
                    None => m_static.clone(),
                };
                let dh2 = matmul(g2, mixing.view()); // (c_out·t, n)
                let dm = matmul(g2.t(), h2); // (n, n)
                if self.adaptive.is_some() {
                    dadj += &dm;
                    // Softmax rows: dz = C ∘ (dm − rowsum(dm ∘ C)).
                    let attn = cache.attention[k].index_axis(Axis(0), batch);
                    let mut dz = Array2::zeros((n, n));
                    for i in 0..n {
                        let dot: f64 = (0..n).map(|j| dm[[i, j]] * attn[[i, j]]).sum();
                        for j in 0..n {
                            dz[[i, j]] = attn[[i, j]] * (dm[[i, j]] - dot);
                        }
                    }
                    let tm = flatten2(cache.theta_emb[k].index_axis(Axis(0), batch), e * t, n);
                    let pm = flatten2(cache.phi_emb[k].index_axis(Axis(0), batch), e * t, n);
                    // logits = tmᵀ·pm ⇒ d(tm) = pm·dzᵀ, d(pm) = tm·dz.
                    let dtm = matmul(pm, dz.t()); // (e·t, n)
                    let dpm = matmul(tm, dz.view()); // (e·t, n)
                    // Same memory viewed as (e, t·n) for the channel maps.
                    let dtm2 = dtm
                        .into_shape_with_order((e, t * n))
                        .expect("contiguous embedding grad");
                    let dpm2 = dpm
                        .into_shape_with_order((e, t * n))
                        .expect("contiguous embedding grad");
                    dtheta += &matmul(x2, dtm2.t());
                    dphi += &matmul(x2, dpm2.t());
                    let params = self.adaptive.as_ref().unwrap();
                    let dx_b = dx.index_axis_mut(Axis(0), batch);
                    let mut dx2 = dx_b
                        .into_shape_with_order((c_in, t * n))
                        .expect("contiguous input grad");
                    matmul_into(1.0, params.theta[k].view(), dtm2.view(), 1.0, &mut dx2);
                    matmul_into(1.0, params.phi[k].view(), dpm2.view(), 1.0, &mut dx2);
                }
                // Gradient through the channel projection.
                let dh = dh2
                    .into_shape_with_order((c_out, t * n))
                    .expect("contiguous projection grad");
                dw += &matmul(x2, dh.t());
                let dx_b = dx.index_axis_mut(Axis(0), batch);
                let mut dx2 = dx_b
                    .into_shape_with_order((c_in, t * n))
                    .expect("contiguous input grad");
                matmul_into(1.0, self.weight[k].view(), dh.view(), 1.0, &mut dx2);
            }
            grads.accumulate(&format!("{prefix}.w{k}"), dw);
            if self.adaptive.is_some() {
                grads.accumulate(&format!("{prefix}.adj{k}"), dadj);
                grads.accumulate(&format!("{prefix}.theta{k}"), dtheta);
                grads.accumulate(&format!("{prefix}.phi{k}"), dphi);
            }
        }
        dx
    }
}

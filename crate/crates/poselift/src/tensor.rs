//! Small tensor utilities shared by the layer implementations: thin matmul
//! wrappers over `ndarray`, f32 quantization for the checkpoint contract, and
//! the named-gradient container used by the manual backward passes.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayView3, ArrayViewMut2, Dimension};

/// `a @ b` into a fresh array.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

/// `out = beta*out + alpha * a @ b`.
pub fn matmul_into(
    alpha: f64,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    beta: f64,
    out: &mut ArrayViewMut2<f64>,
) {
    general_mat_mul(alpha, &a, &b, beta, out);
}

/// Reinterpret a contiguous (A,B,C) view as (rows, cols) without copying.
pub fn flatten2(a: ArrayView3<'_, f64>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    a.into_shape_with_order((rows, cols))
        .expect("flatten2 requires a contiguous standard-layout view")
}

/// Copy a (possibly strided) (A,B,C) view into a fresh (rows, cols) matrix.
pub fn copy2(a: ArrayView3<f64>, rows: usize, cols: usize) -> Array2<f64> {
    a.to_owned()
        .into_shape_with_order((rows, cols))
        .expect("copy2 shape must match element count")
}

/// Round to the nearest f32 value.
///
/// Model parameters are maintained at f32 precision (while all arithmetic
/// runs in f64) so that the 32-bit checkpoint format is exactly lossless.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Gradient tensors keyed by parameter name.
///
/// Backward passes accumulate into this container; the optimizer and the
/// gradient checker look tensors up by the same names the model's parameter
/// visitor reports. BTreeMap keeps iteration order deterministic.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `grad` to the tensor stored under `name` (inserting if absent).
    pub fn accumulate<D: Dimension>(&mut self, name: &str, grad: ndarray::Array<f64, D>) {
        let grad = grad.into_dyn();
        match self.map.get_mut(name) {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), grad.shape(), "gradient shape for {name}");
                *existing += &grad;
            }
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Largest absolute entry across all tensors (0 when empty).
    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

//! Per-joint temporal convolution: a 1×Γ kernel slid along the frame axis
//! with symmetric zero padding of (Γ−1)/2 and an optional stride, mixing
//! channels but never joints.

use ndarray::{s, Array1, Array3, Array4, Axis};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::tensor::{copy2, matmul_into};

/// Output length of a strided convolution with symmetric (Γ−1)/2 padding.
pub fn temporal_output_len(t_in: usize, stride: usize) -> usize {
    (t_in - 1) / stride + 1
}

#[derive(Debug, Clone)]
pub struct TemporalConv {
    /// (c_out, c_in, taps)
    pub weight: Array3<f64>,
    /// (c_out)
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl TemporalConv {
    pub fn new(weight: Array3<f64>, bias: Array1<f64>, stride: usize) -> Result<Self> {
        let (c_out, _c_in, taps) = weight.dim();
        if taps % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel size must be odd, got {taps}"
            )));
        }
        if bias.len() != c_out {
            return Err(Error::shape(
                "temporal bias",
                format!("{c_out}"),
                format!("{}", bias.len()),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("temporal stride must be at least 1".into()));
        }
        Ok(Self { weight, bias, stride })
    }

    pub fn taps(&self) -> usize {
        self.weight.dim().2
    }

    /// For each tap offset, the valid output range and the matching input
    /// start: output step τ reads input frame S·τ + γ − pad.
    fn tap_ranges(&self, t_in: usize, t_out: usize) -> Vec<Option<(usize, usize, usize)>> {
        let pad = (self.taps() - 1) / 2;
        let s = self.stride as i64;
        (0..self.taps())
            .map(|tap| {
                let shift = tap as i64 - pad as i64;
                // S*τ + shift in [0, t_in)  ⇒  τ in [ceil(-shift/S), floor((t_in-1-shift)/S)]
                let lo = ((-shift).max(0) + s - 1) / s;
                let hi = (t_in as i64 - 1 - shift).div_euclid(s).min(t_out as i64 - 1);
                if lo > hi {
                    return None;
                }
                let t_start = (s * lo + shift) as usize;
                Some((lo as usize, hi as usize, t_start))
            })
            .collect()
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let (b, c_in, t_in, n) = x.dim();
        let (c_out, c_in_w, _taps) = self.weight.dim();
        if c_in != c_in_w {
            return Err(Error::shape(
                "temporal conv channels",
                format!("{c_in_w}"),
                format!("{c_in}"),
            ));
        }
        if t_in < 1 {
            return Err(Error::shape("temporal conv frames", ">= 1", "0"));
        }
        let t_out = temporal_output_len(t_in, self.stride);
        let mut out = Array4::zeros((b, c_out, t_out, n));
        for (ch, &bias) in self.bias.iter().enumerate() {
            out.index_axis_mut(Axis(1), ch).fill(bias);
        }
        let ranges = self.tap_ranges(t_in, t_out);
        for batch in 0..b {
            let x_b = x.index_axis(Axis(0), batch);
            let mut out_b = out.index_axis_mut(Axis(0), batch);
            for (tap, range) in ranges.iter().enumerate() {
                let Some((lo, hi, t_start)) = *range else { continue };
                let count = hi - lo + 1;
                let t_end = t_start + (count - 1) * self.stride + 1;
                let gathered = copy2(
                    x_b.slice(s![.., t_start..t_end;self.stride, ..]),
                    c_in,
                    count * n,
                );
                let kernel = self.weight.index_axis(Axis(2), tap);
                let contribution = crate::tensor::matmul(kernel, gathered.view())
                    .into_shape_with_order((c_out, count, n))
                    .expect("contribution shape");
                let segment = out_b.slice_mut(s![.., lo..=hi, ..]);
                ndarray::Zip::from(segment)
                    .and(&contribution)
                    .for_each(|o, &v| *o += v);
            }
        }
        Ok(out)
    }

    /// Returns (d_input, d_weight, d_bias). `x` is the forward input.
    pub fn backward(
        &self,
        x: &FeatureMap,
        grad_out: &FeatureMap,
    ) -> (FeatureMap, Array3<f64>, Array1<f64>) {
        let (b, c_in, t_in, n) = x.dim();
        let (c_out, _, taps) = self.weight.dim();
        let t_out = grad_out.dim().2;
        let mut dx = Array4::zeros((b, c_in, t_in, n));
        let mut dw = Array3::zeros((c_out, c_in, taps));
        let mut dbias = Array1::zeros(c_out);
        for ch in 0..c_out {
            dbias[ch] = grad_out.index_axis(Axis(1), ch).sum();
        }
        let ranges = self.tap_ranges(t_in, t_out);
        for batch in 0..b {
            let x_b = x.index_axis(Axis(0), batch);
            let g_b = grad_out.index_axis(Axis(0), batch);
            let mut dx_b = dx.index_axis_mut(Axis(0), batch);
            for (tap, range) in ranges.iter().enumerate() {
                let Some((lo, hi, t_start)) = *range else { continue };
                let count = hi - lo + 1;
                let t_end = t_start + (count - 1) * self.stride + 1;
                let g_seg = copy2(g_b.slice(s![.., lo..=hi, ..]), c_out, count * n);
                let x_seg = copy2(
                    x_b.slice(s![.., t_start..t_end;self.stride, ..]),
                    c_in,
                    count * n,
                );
                // dW_tap += G · Xᵀ
                let mut dw_tap = dw.index_axis_mut(Axis(2), tap);
                matmul_into(1.0, g_seg.view(), x_seg.t(), 1.0, &mut dw_tap);
                // dX_seg = Kᵀ · G, scattered back onto the strided frames.
                let kernel = self.weight.index_axis(Axis(2), tap);
                let dx_seg = crate::tensor::matmul(kernel.t(), g_seg.view());
                let dx_view = dx_b.slice_mut(s![.., t_start..t_end;self.stride, ..]);
                let dx_seg3 = dx_seg
                    .into_shape_with_order((c_in, count, n))
                    .expect("segment shape");
                ndarray::Zip::from(dx_view)
                    .and(&dx_seg3)
                    .for_each(|o, &v| *o += v);
            }
        }
        (dx, dw, dbias)
    }
}

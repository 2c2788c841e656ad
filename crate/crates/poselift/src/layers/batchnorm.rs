//! Per-channel batch normalization over the (batch, frames, joints) axes.

use ndarray::{Array1, Array4, Axis};

use super::{FeatureMap, Mode};
use crate::tensor::round_f32;

/// Learnable scale/shift plus running statistics. Normalization uses batch
/// statistics in train mode and the running estimates in eval mode; running
/// estimates only change when [`BatchNorm::update_running`] is called.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    /// Normalized input before scale/shift.
    xhat: Array4<f64>,
    /// Per-channel 1/sqrt(var + eps) actually used.
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &FeatureMap, mode: Mode) -> (FeatureMap, BatchNormCache) {
        let (b, c, t, n) = x.dim();
        let count = (b * t * n) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ch in 0..c {
                    let slice = x.index_axis(Axis(1), ch);
                    let m = slice.sum() / count;
                    let v = slice.iter().map(|&e| (e - m) * (e - m)).sum::<f64>() / count;
                    mean[ch] = m;
                    var[ch] = v;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let mut xhat = x.clone();
        for ch in 0..c {
            let m = mean[ch];
            let is = inv_std[ch];
            xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|e| (e - m) * is);
        }
        let mut y = xhat.clone();
        for ch in 0..c {
            let g = self.gamma[ch];
            let be = self.beta[ch];
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|e| g * e + be);
        }
        (
            y,
            BatchNormCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Returns (d_input, d_gamma, d_beta).
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        grad_out: &FeatureMap,
    ) -> (FeatureMap, Array1<f64>, Array1<f64>) {
        let (b, c, t, n) = grad_out.dim();
        let count = (b * t * n) as f64;
        let mut d_gamma = Array1::zeros(c);
        let mut d_beta = Array1::zeros(c);
        for ch in 0..c {
            let g = grad_out.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            d_beta[ch] = g.sum();
            d_gamma[ch] = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
        }
        let mut dx = FeatureMap::zeros((b, c, t, n));
        match cache.mode {
            // Batch statistics depend on the input, so the gradient couples
            // all positions within a channel.
            Mode::Train => {
                for ch in 0..c {
                    let g = grad_out.index_axis(Axis(1), ch);
                    let xh = cache.xhat.index_axis(Axis(1), ch);
                    let gamma = self.gamma[ch];
                    let inv_std = cache.inv_std[ch];
                    let sum_dxhat = g.sum() * gamma;
                    let sum_dxhat_xhat: f64 =
                        g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<f64>() * gamma;
                    let mut out = dx.index_axis_mut(Axis(1), ch);
                    ndarray::Zip::from(&mut out).and(&g).and(&xh).for_each(
                        |o, &gi, &xhi| {
                            let dxhat = gi * gamma;
                            *o = inv_std
                                * (dxhat - (sum_dxhat + xhi * sum_dxhat_xhat) / count);
                        },
                    );
                }
            }
            // Running statistics are constants: purely affine.
            Mode::Eval => {
                for ch in 0..c {
                    let scale = self.gamma[ch] * cache.inv_std[ch];
                    let g = grad_out.index_axis(Axis(1), ch);
                    let mut out = dx.index_axis_mut(Axis(1), ch);
                    ndarray::Zip::from(&mut out).and(&g).for_each(|o, &gi| *o = gi * scale);
                }
            }
        }
        (dx, d_gamma, d_beta)
    }

    /// Fold the batch statistics recorded in a train-mode cache into the
    /// running estimates. No-op for eval caches.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for ch in 0..self.channels() {
            self.running_mean[ch] =
                round_f32((1.0 - m) * self.running_mean[ch] + m * cache.batch_mean[ch]);
            self.running_var[ch] =
                round_f32((1.0 - m) * self.running_var[ch] + m * cache.batch_var[ch]);
        }
    }

    /// Overwrite the running estimates with the batch statistics of a
    /// train-mode cache, so a subsequent eval-mode forward reproduces that
    /// batch's normalization exactly.
    pub fn calibrate(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for ch in 0..self.channels() {
            self.running_mean[ch] = round_f32(cache.batch_mean[ch]);
            self.running_var[ch] = round_f32(cache.batch_var[ch]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> FeatureMap {
        Array::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, (3, 4, 5, 2));
        let bn = BatchNorm::new(4);
        let (y, _) = bn.forward(&x, Mode::Train);
        for ch in 0..4 {
            let s = y.index_axis(Axis(1), ch);
            let count = s.len() as f64;
            let mean = s.sum() / count;
            let var = s.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / count;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn eval_mode_is_affine_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_map(&mut rng, (2, 3, 4, 5));
        let mut bn = BatchNorm::new(3);
        bn.running_mean = ndarray::array![0.2, -0.5, 1.0];
        bn.running_var = ndarray::array![1.5, 0.7, 2.0];
        let (y1, _) = bn.forward(&x, Mode::Eval);
        let (y2, _) = bn.forward(&(&x * 2.0), Mode::Eval);
        // Affine: f(2x) - f(x) = scale * x.
        for ch in 0..3 {
            let scale = 1.0 / (bn.running_var[ch] + bn.epsilon).sqrt();
            let d = &y2.index_axis(Axis(1), ch) - &y1.index_axis(Axis(1), ch);
            let expected = x.index_axis(Axis(1), ch).mapv(|e| e * scale);
            assert_abs_diff_eq!(
                d.iter().cloned().fold(0.0, |a: f64, v| a.max(v.abs())),
                expected.iter().cloned().fold(0.0, |a: f64, v| a.max(v.abs())),
                epsilon = 1e-12
            );
        }
    }

    /// Central-difference check of the train-mode input gradient, which is
    /// the nontrivial one (batch statistics couple every position).
    #[test]
    fn train_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(&mut rng, (2, 2, 3, 2));
        let mut bn = BatchNorm::new(2);
        bn.gamma = ndarray::array![1.3, 0.8];
        bn.beta = ndarray::array![0.1, -0.2];
        let target = random_map(&mut rng, (2, 2, 3, 2));
        let loss = |input: &FeatureMap| -> f64 {
            let (y, _) = bn.forward(input, Mode::Train);
            (&y - &target).mapv(|e| e * e).sum()
        };
        let (y, cache) = bn.forward(&x, Mode::Train);
        let grad_out = (&y - &target) * 2.0;
        let (dx, d_gamma, d_beta) = bn.backward(&cache, &grad_out);

        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 1), (0, 1, 1, 0)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let numeric = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert_abs_diff_eq!(dx[idx], numeric, epsilon = 1e-6);
        }
        // gamma / beta via finite differences.
        for ch in 0..2 {
            let mut bn_p = bn.clone();
            bn_p.gamma[ch] += eps;
            let mut bn_m = bn.clone();
            bn_m.gamma[ch] -= eps;
            let lp = {
                let (y, _) = bn_p.forward(&x, Mode::Train);
                (&y - &target).mapv(|e| e * e).sum()
            };
            let lm = {
                let (y, _) = bn_m.forward(&x, Mode::Train);
                (&y - &target).mapv(|e| e * e).sum()
            };
            assert_abs_diff_eq!(d_gamma[ch], (lp - lm) / (2.0 * eps), epsilon = 1e-6);

            let mut bn_p = bn.clone();
            bn_p.beta[ch] += eps;
            let mut bn_m = bn.clone();
            bn_m.beta[ch] -= eps;
            let lp = {
                let (y, _) = bn_p.forward(&x, Mode::Train);
                (&y - &target).mapv(|e| e * e).sum()
            };
            let lm = {
                let (y, _) = bn_m.forward(&x, Mode::Train);
                (&y - &target).mapv(|e| e * e).sum()
            };
            assert_abs_diff_eq!(d_beta[ch], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
    }

    #[test]
    fn running_updates_only_apply_from_train_caches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_map(&mut rng, (2, 2, 3, 2)) + 5.0;
        let mut bn = BatchNorm::new(2);
        let (_, eval_cache) = bn.forward(&x, Mode::Eval);
        bn.update_running(&eval_cache);
        assert_eq!(bn.running_mean[0], 0.0);

        let (_, train_cache) = bn.forward(&x, Mode::Train);
        bn.update_running(&train_cache);
        assert!(bn.running_mean[0] > 0.0);
    }
}

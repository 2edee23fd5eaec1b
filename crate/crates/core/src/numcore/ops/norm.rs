//! Batch and layer normalization.

use crate::error::{Error, Result};
use crate::numcore::graph::{Backward, BackwardCtx, Graph, Var};
use crate::numcore::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LN_EPS: f64 = 1e-5;

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            updates: 0,
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        let m = momentum;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (m * *r as f64 + (1.0 - m) * b) as f32;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = (m * *r as f64 + (1.0 - m) * b) as f32;
        }
        self.updates += 1;
    }

    pub fn ensure_ready(&self) -> Result<()> {
        if self.updates == 0 {
            Err(Error::MissingStats)
        } else {
            Ok(())
        }
    }
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

/// How a batch-norm node normalizes.
pub enum BatchNormMode<'a> {
    /// Batch statistics; returned to the caller for the running update.
    Train,
    /// Frozen running statistics.
    Eval(&'a RunningStats),
}

/// Layout helper: tensor `[B, C, rest...]` viewed as `B x C x inner`.
fn bn_layout<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    if x.rank() < 2 || x.dim(1) != channels {
        return Err(Error::shape(format!(
            "batch norm over {channels} channels cannot take shape {:?}",
            x.shape()
        )));
    }
    let inner: usize = x.shape()[2..].iter().product();
    Ok((x.dim(0), inner))
}

const LANES: usize = 8;

/// `(Σ v, Σ v²)` accumulated in f64 over independent lanes.
fn moments<T: Scalar>(x: &[T]) -> (f64, f64) {
    let mut s1 = [0.0f64; LANES];
    let mut s2 = [0.0f64; LANES];
    let mut it = x.chunks_exact(LANES);
    for c in &mut it {
        for l in 0..LANES {
            let v = c[l].as_f64();
            s1[l] += v;
            s2[l] += v * v;
        }
    }
    for (l, &v) in it.remainder().iter().enumerate() {
        let v = v.as_f64();
        s1[l] += v;
        s2[l] += v * v;
    }
    (s1.iter().sum(), s2.iter().sum())
}

/// `(Σ g, Σ g·h)` over independent lanes.
fn grad_sums<T: Scalar>(g: &[T], h: &[T]) -> (T, T) {
    let mut s1 = [T::zero(); LANES];
    let mut s2 = [T::zero(); LANES];
    let mut gi = g.chunks_exact(LANES);
    let mut hi = h.chunks_exact(LANES);
    for (gc, hc) in (&mut gi).zip(&mut hi) {
        for l in 0..LANES {
            s1[l] += gc[l];
            s2[l] += gc[l] * hc[l];
        }
    }
    for (l, (&gv, &hv)) in gi.remainder().iter().zip(hi.remainder()).enumerate() {
        s1[l] += gv;
        s2[l] += gv * hv;
    }
    (s1.iter().copied().sum(), s2.iter().copied().sum())
}

struct BnTrainBack<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> Backward<T> for BnTrainBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let gamma = ctx.inputs[1].data();
        let c = gamma.len();
        let (b, inner) = bn_layout(ctx.inputs[0], c).expect("validated");
        let dy = ctx.grad.data();
        let count = T::from_usize(b * inner).unwrap();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (k, (g, xh)) in dy.chunks(inner).zip(self.xhat.chunks(inner)).enumerate() {
            let ch = k % c;
            let (s1, s2) = grad_sums(g, xh);
            sum_dy[ch] += s1;
            sum_dy_xhat[ch] += s2;
        }
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); dy.len()];
            for (k, ((d, g), xh)) in dx.chunks_mut(inner).zip(dy.chunks(inner)).zip(self.xhat.chunks(inner)).enumerate() {
                let ch = k % c;
                let scale = gamma[ch] * self.inv_std[ch] / count;
                let (s1, s2) = (sum_dy[ch], sum_dy_xhat[ch]);
                for ((dv, &gv), &hv) in d.iter_mut().zip(g).zip(xh) {
                    *dv = scale * (count * gv - s1 - hv * s2);
                }
            }
            Tensor::new(ctx.inputs[0].shape(), dx).expect("shape")
        });
        let _ = b;
        vec![
            dx,
            ctx.needs[1].then(|| Tensor::new(&[c], sum_dy_xhat).expect("shape")),
            ctx.needs[2].then(|| Tensor::new(&[c], sum_dy).expect("shape")),
        ]
    }
}

struct BnEvalBack<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> Backward<T> for BnEvalBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let gamma = ctx.inputs[1].data();
        let c = gamma.len();
        let (b, inner) = bn_layout(ctx.inputs[0], c).expect("validated");
        let dy = ctx.grad.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = vec![T::zero(); dy.len()];
        for (k, ((d, g), xh)) in dx.chunks_mut(inner).zip(dy.chunks(inner)).zip(self.xhat.chunks(inner)).enumerate() {
            let ch = k % c;
            let scale = gamma[ch] * self.inv_std[ch];
            let (s1, s2) = grad_sums(g, xh);
            for (dv, &gv) in d.iter_mut().zip(g) {
                *dv = scale * gv;
            }
            dbeta[ch] += s1;
            dgamma[ch] += s2;
        }
        let _ = b;
        vec![
            ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape(), dx).expect("shape")),
            ctx.needs[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
            ctx.needs[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
        ]
    }
}

struct LayerNormBack<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> Backward<T> for LayerNormBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let gamma = ctx.inputs[1].data();
        let d = gamma.len();
        let dy = ctx.grad.data();
        let rows = dy.len() / d;
        let nd = T::from_usize(d).unwrap();
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut dx = vec![T::zero(); dy.len()];
        for r in 0..rows {
            let row = r * d..(r + 1) * d;
            let (dyr, xh) = (&dy[row.clone()], &self.xhat[row.clone()]);
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for j in 0..d {
                dgamma[j] += dyr[j] * xh[j];
                dbeta[j] += dyr[j];
                let g = dyr[j] * gamma[j];
                s1 += g;
                s2 += g * xh[j];
            }
            let k = self.inv_std[r] / nd;
            for j in 0..d {
                dx[r * d + j] = k * (nd * dyr[j] * gamma[j] - s1 - xh[j] * s2);
            }
        }
        vec![
            ctx.needs[0].then(|| Tensor::new(ctx.inputs[0].shape(), dx).expect("shape")),
            ctx.needs[1].then(|| Tensor::new(&[d], dgamma).expect("shape")),
            ctx.needs[2].then(|| Tensor::new(&[d], dbeta).expect("shape")),
        ]
    }
}

impl<T: Scalar> Graph<T> {
    /// Normalizes axis 1 of `[B, C, ...]`. In training mode the batch
    /// statistics are returned so the caller can fold them into its
    /// [`RunningStats`].
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let c = self.value(gamma).len();
        if self.value(beta).len() != c {
            return Err(Error::shape("batch norm gamma/beta length mismatch"));
        }
        let xt = self.value(x);
        let (b, inner) = bn_layout(xt, c)?;
        let eps = BN_EPS;
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                let count = (b * inner) as f64;
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for (k, chunk) in xt.data().chunks(inner).enumerate() {
                    let (s1, s2) = moments(chunk);
                    mean[k % c] += s1;
                    sq[k % c] += s2;
                }
                let mut var = vec![0.0f64; c];
                let mut unbiased = vec![0.0f64; c];
                for ch in 0..c {
                    mean[ch] /= count;
                    var[ch] = (sq[ch] / count - mean[ch] * mean[ch]).max(0.0);
                    unbiased[ch] = if count > 1.0 { var[ch] * count / (count - 1.0) } else { var[ch] };
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    unbiased_var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval(rs) => {
                rs.ensure_ready()?;
                if rs.mean.len() != c {
                    return Err(Error::shape("running statistics channel mismatch"));
                }
                (
                    rs.mean.iter().map(|&v| v as f64).collect(),
                    rs.var.iter().map(|&v| v as f64).collect(),
                    None,
                )
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + eps).sqrt())).collect();
        let mean: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xt.len()];
        let mut out = vec![T::zero(); xt.len()];
        for (k, ((src, h), o)) in xt.data().chunks(inner).zip(xhat.chunks_mut(inner)).zip(out.chunks_mut(inner)).enumerate() {
            let ch = k % c;
            let (m, is, gv, bv) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
            for ((&x, hv), ov) in src.iter().zip(h.iter_mut()).zip(o.iter_mut()) {
                let v = (x - m) * is;
                *hv = v;
                *ov = gv * v + bv;
            }
        }
        let _ = b;
        let out = Tensor::new(xt.shape(), out)?;
        let train = stats.is_some();
        let v = if train {
            self.push(out, &[x, gamma, beta], BnTrainBack { xhat, inv_std })
        } else {
            self.push(out, &[x, gamma, beta], BnEvalBack { xhat, inv_std })
        };
        Ok((v, stats))
    }

    /// Normalizes the trailing axis, then applies the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(gamma).len();
        let xt = self.value(x);
        if xt.shape().last() != Some(&d) || self.value(beta).len() != d {
            return Err(Error::shape(format!(
                "layer norm over {d} features cannot take shape {:?}",
                xt.shape()
            )));
        }
        let rows = xt.len() / d;
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xt.len()];
        let mut out = vec![T::zero(); xt.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xt.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let is = T::lit(1.0 / (var + LN_EPS).sqrt());
            let m = T::lit(mean);
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - m) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + bt[j];
            }
        }
        let out = Tensor::new(xt.shape(), out)?;
        Ok(self.push(out, &[x, gamma, beta], LayerNormBack { xhat, inv_std }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[2, 8], 3.5));
        let gamma = g.constant(Tensor::full(&[8], 1.0));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[4, 2, 3], |i| (i as f64 * 1.7).sin() * 5.0 + 2.0));
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (y, stats) = g.batch_norm(x, gamma, beta, BatchNormMode::Train).unwrap();
        assert!(stats.is_some());
        let y = g.value(y);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 2 + ch) * 3..(n * 2 + ch + 1) * 3].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 12.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 12.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_without_stats_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 3]));
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let rs = RunningStats::new(2);
        let r = g.batch_norm(x, gamma, beta, BatchNormMode::Eval(&rs));
        assert!(matches!(r, Err(Error::MissingStats)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut rs = RunningStats::new(1);
        let b = BatchStats {
            mean: vec![1.0],
            unbiased_var: vec![3.0],
        };
        rs.update(&b, BN_MOMENTUM);
        assert!((rs.mean[0] - 0.1).abs() < 1e-7);
        assert!((rs.var[0] - (0.9 + 0.3)).abs() < 1e-6);
        assert_eq!(rs.updates, 1);
    }
}

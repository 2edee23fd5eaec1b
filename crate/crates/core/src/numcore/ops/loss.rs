//! Softmax and the two classification losses.

use crate::error::{Error, Result};
use crate::numcore::graph::{Backward, BackwardCtx, Graph, Var};
use crate::numcore::{Scalar, Tensor};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax over the trailing axis.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let k = logits.shape().last().copied().unwrap_or(1).max(1);
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.as_f64();
        }
        let inv = T::lit(1.0 / sum);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

fn check_targets<T: Scalar>(x: &Tensor<T>, targets: &[usize], what: &str) -> Result<(usize, usize)> {
    x.expect_rank(2, what)?;
    let (b, k) = (x.dim(0), x.dim(1));
    if targets.len() != b {
        return Err(Error::shape(format!(
            "{what}: {} targets for batch of {b}",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::shape(format!("{what}: target {t} outside {k} classes")));
    }
    Ok((b, k))
}

/// Mean over the batch of `-ln max(p_target, 1e-12)`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let (_, k) = check_targets(probs, targets, "cross_entropy")?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs.data()[i * k + t].as_f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / targets.len().max(1) as f64)
}

/// Weston–Watkins multi-class hinge: per row
/// `Σ_{y≠t} max(0, 1 + s_y - s_t)`, averaged over the batch.
pub fn hinge_loss<T: Scalar>(scores: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let (_, k) = check_targets(scores, targets, "hinge_loss")?;
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let row = &scores.data()[i * k..(i + 1) * k];
        let st = row[t].as_f64();
        for (y, &s) in row.iter().enumerate() {
            if y != t {
                total += (1.0 + s.as_f64() - st).max(0.0);
            }
        }
    }
    Ok(total / targets.len().max(1) as f64)
}

struct SoftmaxBack;

impl<T: Scalar> Backward<T> for SoftmaxBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let y = ctx.output;
        let k = y.shape().last().copied().unwrap_or(1).max(1);
        let mut dx = vec![T::zero(); y.len()];
        for ((yr, gr), dr) in y
            .data()
            .chunks(k)
            .zip(ctx.grad.data().chunks(k))
            .zip(dx.chunks_mut(k))
        {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..k {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
        vec![Some(Tensor::new(y.shape(), dx).expect("shape"))]
    }
}

struct CrossEntropyBack {
    targets: Vec<usize>,
}

impl<T: Scalar> Backward<T> for CrossEntropyBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let p = ctx.inputs[0];
        let k = p.dim(1);
        let scale = ctx.grad.item() / T::from_usize(self.targets.len().max(1)).unwrap();
        let mut dp = vec![T::zero(); p.len()];
        for (i, &t) in self.targets.iter().enumerate() {
            let v = p.data()[i * k + t];
            if v.as_f64() > PROB_FLOOR {
                dp[i * k + t] = -scale / v;
            }
        }
        vec![Some(Tensor::new(p.shape(), dp).expect("shape"))]
    }
}

struct HingeBack {
    targets: Vec<usize>,
}

impl<T: Scalar> Backward<T> for HingeBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let s = ctx.inputs[0];
        let k = s.dim(1);
        let scale = ctx.grad.item() / T::from_usize(self.targets.len().max(1)).unwrap();
        let mut ds = vec![T::zero(); s.len()];
        for (i, &t) in self.targets.iter().enumerate() {
            let row = &s.data()[i * k..(i + 1) * k];
            for y in 0..k {
                if y != t && T::one() + row[y] - row[t] > T::zero() {
                    ds[i * k + y] += scale;
                    ds[i * k + t] -= scale;
                }
            }
        }
        vec![Some(Tensor::new(s.shape(), ds).expect("shape"))]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn softmax(&mut self, logits: Var) -> Var {
        let out = softmax(self.value(logits));
        self.push(out, &[logits], SoftmaxBack)
    }

    /// Scalar cross-entropy node over probability rows.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let v = cross_entropy(self.value(probs), targets)?;
        Ok(self.push(
            Tensor::scalar(T::lit(v)),
            &[probs],
            CrossEntropyBack {
                targets: targets.to_vec(),
            },
        ))
    }

    /// Scalar hinge node over raw scores.
    pub fn hinge_loss(&mut self, scores: Var, targets: &[usize]) -> Result<Var> {
        let v = hinge_loss(self.value(scores), targets)?;
        Ok(self.push(
            Tensor::scalar(T::lit(v)),
            &[scores],
            HingeBack {
                targets: targets.to_vec(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&Tensor::<f64>::zeros(&[1, 4]));
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let p = softmax(&Tensor::new(&[3], vec![1.0f64, 2.0, 3.0]).unwrap());
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for (i, &v) in p.data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = Tensor::new(&[2, 3], vec![0.3f32, -1.2, 2.0, 5.0, 5.5, 4.0]).unwrap();
        let a = softmax(&x);
        let b = softmax(&x.map(|v| v + 17.0));
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let p = Tensor::new(&[1, 3], vec![0.0f32, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&p, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_forty() {
        let p = Tensor::full(&[2, 40], 1.0f32 / 40.0);
        let l = cross_entropy(&p, &[0, 39]).unwrap();
        assert!((l - 40f64.ln()).abs() < 1e-5);
        assert!((l - 3.68888).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_mixed_batch() {
        let p = Tensor::new(&[2, 2], vec![0.7f64, 0.3, 0.4, 0.6]).unwrap();
        let want = (-(0.7f64).ln() - (0.6f64).ln()) / 2.0;
        assert!((cross_entropy(&p, &[0, 1]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Tensor::new(&[1, 2], vec![1.0f32, 0.0]).unwrap();
        let l = cross_entropy(&p, &[1]).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn class_count_mismatch_errors() {
        let p = Tensor::full(&[1, 3], 1.0f32 / 3.0);
        assert!(cross_entropy(&p, &[3]).is_err());
        assert!(hinge_loss(&p, &[0, 1]).is_err());
    }

    #[test]
    fn hinge_margin_cases() {
        let s = Tensor::new(&[1, 2], vec![0.0f32, 0.0]).unwrap();
        assert_eq!(hinge_loss(&s, &[0]).unwrap(), 1.0);
        let s = Tensor::new(&[1, 3], vec![0.0f32, 2.5, 1.5]).unwrap();
        assert_eq!(hinge_loss(&s, &[1]).unwrap(), 0.0);
    }
}

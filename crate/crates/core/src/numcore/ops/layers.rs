//! Pooling, activations, dropout, dense and embedding layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::graph::{Backward, BackwardCtx, Graph, Var};
use crate::numcore::{Scalar, Tensor};

struct ReshapeBack;

impl<T: Scalar> Backward<T> for ReshapeBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(
            ctx.grad.clone().reshape(ctx.inputs[0].shape()).expect("same size"),
        )]
    }
}

struct AvgPoolBack {
    kh: usize,
    kw: usize,
}

impl<T: Scalar> Backward<T> for AvgPoolBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.inputs[0];
        let (bc, h, w) = (x.dim(0) * x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (h / self.kh, w / self.kw);
        let scale = T::one() / T::from_usize(self.kh * self.kw).unwrap();
        let dy = ctx.grad.data();
        let mut dx = vec![T::zero(); x.len()];
        for m in 0..bc {
            for y in 0..ho {
                for z in 0..wo {
                    let g = dy[(m * ho + y) * wo + z] * scale;
                    for i in 0..self.kh {
                        let row = (m * h + y * self.kh + i) * w + z * self.kw;
                        dx[row..row + self.kw].iter_mut().for_each(|d| *d += g);
                    }
                }
            }
        }
        vec![Some(Tensor::new(x.shape(), dx).expect("shape"))]
    }
}

struct EluBack;

impl<T: Scalar> Backward<T> for EluBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        // d/dx elu = 1 for x > 0, elu(x) + 1 otherwise
        let data = ctx
            .inputs[0]
            .data()
            .iter()
            .zip(ctx.output.data())
            .zip(ctx.grad.data())
            .map(|((&x, &y), &g)| if x > T::zero() { g } else { g * (y + T::one()) })
            .collect();
        vec![Some(Tensor::new(ctx.output.shape(), data).expect("shape"))]
    }
}

struct MaskBack<T> {
    mask: Vec<T>,
}

impl<T: Scalar> Backward<T> for MaskBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let data = ctx.grad.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        vec![Some(Tensor::new(ctx.grad.shape(), data).expect("shape"))]
    }
}

struct LinearBack;

impl<T: Scalar> Backward<T> for LinearBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let (n, din) = (x.dim(0), x.dim(1));
        let dout = w.dim(0);
        let dy = ctx.grad.data();
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); n * din];
            T::gemm(n, dout, din, dy, false, w.data(), false, T::zero(), &mut dx);
            Tensor::new(&[n, din], dx).expect("shape")
        });
        let dw = ctx.needs[1].then(|| {
            let mut dw = vec![T::zero(); dout * din];
            T::gemm(dout, n, din, dy, true, x.data(), false, T::zero(), &mut dw);
            Tensor::new(&[dout, din], dw).expect("shape")
        });
        let db = ctx.needs.get(2).copied().unwrap_or(false).then(|| {
            let mut db = vec![T::zero(); dout];
            for row in dy.chunks(dout) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            Tensor::new(&[dout], db).expect("shape")
        });
        let mut out = vec![dx, dw];
        if ctx.inputs.len() == 3 {
            out.push(db);
        }
        out
    }
}

struct EmbeddingBack {
    indices: Vec<usize>,
}

impl<T: Scalar> Backward<T> for EmbeddingBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let table = ctx.inputs[0];
        let e = table.dim(1);
        let mut dt = vec![T::zero(); table.len()];
        for (pos, &idx) in self.indices.iter().enumerate() {
            let g = &ctx.grad.data()[pos * e..(pos + 1) * e];
            for (d, &v) in dt[idx * e..(idx + 1) * e].iter_mut().zip(g) {
                *d += v;
            }
        }
        vec![Some(Tensor::new(table.shape(), dt).expect("shape"))]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, &[x], ReshapeBack))
    }

    /// Non-overlapping average pool over the last two axes of `[B, C, H, W]`;
    /// trailing remainders are dropped.
    pub fn avg_pool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let xt = self.value(x);
        xt.expect_rank(4, "avg_pool2d")?;
        if kh == 0 || kw == 0 || kh > xt.dim(2) || kw > xt.dim(3) {
            return Err(Error::shape(format!(
                "pool window {kh}x{kw} does not fit {:?}",
                xt.shape()
            )));
        }
        let (b, c, h, w) = (xt.dim(0), xt.dim(1), xt.dim(2), xt.dim(3));
        let (ho, wo) = (h / kh, w / kw);
        let scale = T::one() / T::from_usize(kh * kw).unwrap();
        let mut out = vec![T::zero(); b * c * ho * wo];
        for m in 0..b * c {
            for y in 0..ho {
                for z in 0..wo {
                    let mut s = T::zero();
                    for i in 0..kh {
                        let row = (m * h + y * kh + i) * w + z * kw;
                        s += xt.data()[row..row + kw].iter().copied().sum::<T>();
                    }
                    out[(m * ho + y) * wo + z] = s * scale;
                }
            }
        }
        let out = Tensor::new(&[b, c, ho, wo], out)?;
        Ok(self.push(out, &[x], AvgPoolBack { kh, kw }))
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        self.push(out, &[x], EluBack)
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.apply_mask(x, mask)
    }

    /// Elementwise product with a fixed mask (dropout with a given mask).
    pub fn apply_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xt = self.value(x);
        if mask.len() != xt.len() {
            return Err(Error::shape("mask length differs from input"));
        }
        let data = xt.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xt.shape(), data)?;
        Ok(self.push(out, &[x], MaskBack { mask }))
    }

    /// `x [N, in] · Wᵀ + b` with `W: [out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(weight));
        xt.expect_rank(2, "linear input")?;
        wt.expect_rank(2, "linear weight")?;
        let (n, din, dout) = (xt.dim(0), xt.dim(1), wt.dim(0));
        if wt.dim(1) != din {
            return Err(Error::shape(format!(
                "linear: weight {:?} cannot take {din} input features",
                wt.shape()
            )));
        }
        let mut out = vec![T::zero(); n * dout];
        T::gemm(n, din, dout, xt.data(), false, wt.data(), true, T::zero(), &mut out);
        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            let bt = self.value(b);
            if bt.len() != dout {
                return Err(Error::shape("linear bias length mismatch"));
            }
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(bt.data()) {
                    *o += bv;
                }
            }
            inputs.push(b);
        }
        let out = Tensor::new(&[n, dout], out)?;
        Ok(self.push(out, &inputs, LinearBack))
    }

    /// Row lookup into `table [V, E]`; output shape `shape ++ [E]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        tt.expect_rank(2, "embedding table")?;
        let (v, e) = (tt.dim(0), tt.dim(1));
        if shape.iter().product::<usize>() != indices.len() {
            return Err(Error::shape("embedding index shape mismatch"));
        }
        let mut out = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            if i >= v {
                return Err(Error::param(format!("embedding index {i} out of range {v}")));
            }
            out.extend_from_slice(&tt.data()[i * e..(i + 1) * e]);
        }
        let mut oshape = shape.to_vec();
        oshape.push(e);
        let out = Tensor::new(&oshape, out)?;
        Ok(self.push(
            out,
            &[table],
            EmbeddingBack {
                indices: indices.to_vec(),
            },
        ))
    }
}

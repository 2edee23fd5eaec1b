//! Single-layer LSTM with PyTorch gate layout `(input, forget, cell, output)`
//! and two bias vectors (`b_ih`, `b_hh`).

use crate::error::{Error, Result};
use crate::numcore::graph::{Backward, BackwardCtx, Graph, Var};
use crate::numcore::{Scalar, Tensor};

/// Parameter count of a stacked LSTM with dual biases.
pub fn lstm_param_count(input: usize, hidden: usize, layers: usize) -> usize {
    (0..layers)
        .map(|l| {
            let inp = if l == 0 { input } else { hidden };
            4 * hidden * (inp + hidden) + 2 * 4 * hidden
        })
        .sum()
}

/// Borrowed weights of one layer.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a, T> {
    /// `[4H, In]`
    pub w_ih: &'a [T],
    /// `[4H, H]`
    pub w_hh: &'a [T],
    pub b_ih: &'a [T],
    pub b_hh: &'a [T],
    pub input: usize,
    pub hidden: usize,
}

impl<'a, T: Scalar> LstmWeights<'a, T> {
    pub fn from_tensors(
        w_ih: &'a Tensor<T>,
        w_hh: &'a Tensor<T>,
        b_ih: &'a Tensor<T>,
        b_hh: &'a Tensor<T>,
    ) -> Result<Self> {
        if w_hh.rank() != 2 || w_ih.rank() != 2 {
            return Err(Error::shape("lstm weights must be rank 2"));
        }
        let hidden = w_hh.dim(1);
        if w_hh.dim(0) != 4 * hidden
            || w_ih.dim(0) != 4 * hidden
            || b_ih.len() != 4 * hidden
            || b_hh.len() != 4 * hidden
        {
            return Err(Error::shape(format!(
                "lstm hidden-size mismatch: w_ih {:?}, w_hh {:?}, biases {}/{}",
                w_ih.shape(),
                w_hh.shape(),
                b_ih.len(),
                b_hh.len()
            )));
        }
        Ok(LstmWeights {
            w_ih: w_ih.data(),
            w_hh: w_hh.data(),
            b_ih: b_ih.data(),
            b_hh: b_hh.data(),
            input: w_ih.dim(1),
            hidden,
        })
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Apply gate nonlinearities in place and advance the cell state.
fn gates_step<T: Scalar>(act: &mut [T], c: &mut [T], h: &mut [T], tanh_c: &mut [T], hidden: usize) {
    let (i_g, rest) = act.split_at_mut(hidden);
    let (f_g, rest) = rest.split_at_mut(hidden);
    let (g_g, o_g) = rest.split_at_mut(hidden);
    for j in 0..hidden {
        i_g[j] = sigmoid(i_g[j]);
        f_g[j] = sigmoid(f_g[j]);
        g_g[j] = g_g[j].tanh();
        o_g[j] = sigmoid(o_g[j]);
        c[j] = f_g[j] * c[j] + i_g[j] * g_g[j];
        tanh_c[j] = c[j].tanh();
        h[j] = o_g[j] * tanh_c[j];
    }
}

/// One time step for a batch: `x [B, In]`, `h`, `c` `[B, H]` updated in place.
pub fn lstm_cell<T: Scalar>(w: &LstmWeights<'_, T>, x: &[T], h: &mut [T], c: &mut [T]) -> Result<()> {
    let hd = w.hidden;
    if x.len() % w.input.max(1) != 0 || h.len() != c.len() || h.len() % hd != 0 {
        return Err(Error::shape("lstm_cell buffer sizes inconsistent"));
    }
    let b = h.len() / hd;
    if x.len() != b * w.input {
        return Err(Error::shape("lstm_cell input batch differs from state batch"));
    }
    let mut act = vec![T::zero(); b * 4 * hd];
    T::gemm(b, w.input, 4 * hd, x, false, w.w_ih, true, T::zero(), &mut act);
    T::gemm(b, hd, 4 * hd, h, false, w.w_hh, true, T::one(), &mut act);
    let mut tanh_c = vec![T::zero(); hd];
    for n in 0..b {
        let a = &mut act[n * 4 * hd..(n + 1) * 4 * hd];
        for j in 0..4 * hd {
            a[j] += w.b_ih[j] + w.b_hh[j];
        }
        gates_step(a, &mut c[n * hd..(n + 1) * hd], &mut h[n * hd..(n + 1) * hd], &mut tanh_c, hd);
    }
    Ok(())
}

struct SeqCache<T> {
    /// per step `[B, 4H]` activated gates
    gates: Vec<Vec<T>>,
    /// per step `[B, H]` cell state
    cells: Vec<Vec<T>>,
    tanh_c: Vec<Vec<T>>,
}

/// Full-sequence forward from a zero state. `x: [B, T, In]` → `[B, T, H]`.
fn sequence_forward<T: Scalar>(w: &LstmWeights<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, SeqCache<T>)> {
    x.expect_rank(3, "lstm input")?;
    let (b, t, inp) = (x.dim(0), x.dim(1), x.dim(2));
    if inp != w.input {
        return Err(Error::shape(format!(
            "lstm expects {} input features, got {inp}",
            w.input
        )));
    }
    let hd = w.hidden;
    let g4 = 4 * hd;
    let mut pre = vec![T::zero(); b * t * g4];
    T::gemm(b * t, inp, g4, x.data(), false, w.w_ih, true, T::zero(), &mut pre);
    let mut out = vec![T::zero(); b * t * hd];
    let mut h = vec![T::zero(); b * hd];
    let mut c = vec![T::zero(); b * hd];
    let mut cache = SeqCache {
        gates: Vec::with_capacity(t),
        cells: Vec::with_capacity(t),
        tanh_c: Vec::with_capacity(t),
    };
    for step in 0..t {
        let mut act = vec![T::zero(); b * g4];
        T::gemm(b, hd, g4, &h, false, w.w_hh, true, T::zero(), &mut act);
        let mut tc = vec![T::zero(); b * hd];
        for n in 0..b {
            let a = &mut act[n * g4..(n + 1) * g4];
            let p = &pre[(n * t + step) * g4..(n * t + step + 1) * g4];
            for j in 0..g4 {
                a[j] += p[j] + w.b_ih[j] + w.b_hh[j];
            }
            gates_step(
                a,
                &mut c[n * hd..(n + 1) * hd],
                &mut h[n * hd..(n + 1) * hd],
                &mut tc[n * hd..(n + 1) * hd],
                hd,
            );
            out[(n * t + step) * hd..(n * t + step + 1) * hd].copy_from_slice(&h[n * hd..(n + 1) * hd]);
        }
        cache.gates.push(act);
        cache.cells.push(c.clone());
        cache.tanh_c.push(tc);
    }
    Ok((Tensor::new(&[b, t, hd], out)?, cache))
}

/// Inference-only sequence forward.
pub fn lstm_sequence<T: Scalar>(w: &LstmWeights<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    sequence_forward(w, x).map(|(y, _)| y)
}

struct LstmBack<T> {
    cache: SeqCache<T>,
}

impl<T: Scalar> Backward<T> for LstmBack<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (x, w_ih, w_hh) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let (b, t, inp) = (x.dim(0), x.dim(1), x.dim(2));
        let hd = w_hh.dim(1);
        let g4 = 4 * hd;
        let out = ctx.output.data();
        let dy = ctx.grad.data();
        let mut da_all = vec![T::zero(); b * t * g4];
        let mut dw_hh = vec![T::zero(); g4 * hd];
        let mut dh_next = vec![T::zero(); b * hd];
        let mut dc_next = vec![T::zero(); b * hd];
        let mut da = vec![T::zero(); b * g4];
        let mut h_prev = vec![T::zero(); b * hd];
        let one = T::one();
        for step in (0..t).rev() {
            let gates = &self.cache.gates[step];
            let tc = &self.cache.tanh_c[step];
            for n in 0..b {
                let gr = &gates[n * g4..(n + 1) * g4];
                let (ig, fg, gg, og) = (&gr[..hd], &gr[hd..2 * hd], &gr[2 * hd..3 * hd], &gr[3 * hd..]);
                let dar = &mut da[n * g4..(n + 1) * g4];
                for j in 0..hd {
                    let k = n * hd + j;
                    let dh = dy[(n * t + step) * hd + j] + dh_next[k];
                    let c_prev = if step > 0 { self.cache.cells[step - 1][k] } else { T::zero() };
                    let d_o = dh * tc[k];
                    let dc = dh * og[j] * (one - tc[k] * tc[k]) + dc_next[k];
                    let di = dc * gg[j];
                    let dg = dc * ig[j];
                    let df = dc * c_prev;
                    dc_next[k] = dc * fg[j];
                    dar[j] = di * ig[j] * (one - ig[j]);
                    dar[hd + j] = df * fg[j] * (one - fg[j]);
                    dar[2 * hd + j] = dg * (one - gg[j] * gg[j]);
                    dar[3 * hd + j] = d_o * og[j] * (one - og[j]);
                }
                da_all[(n * t + step) * g4..(n * t + step + 1) * g4].copy_from_slice(dar);
                if step > 0 {
                    h_prev[n * hd..(n + 1) * hd]
                        .copy_from_slice(&out[(n * t + step - 1) * hd..(n * t + step) * hd]);
                } else {
                    h_prev[n * hd..(n + 1) * hd].iter_mut().for_each(|v| *v = T::zero());
                }
            }
            T::gemm(g4, b, hd, &da, true, &h_prev, false, T::one(), &mut dw_hh);
            T::gemm(b, g4, hd, &da, false, w_hh.data(), false, T::zero(), &mut dh_next);
        }
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); b * t * inp];
            T::gemm(b * t, g4, inp, &da_all, false, w_ih.data(), false, T::zero(), &mut dx);
            Tensor::new(x.shape(), dx).expect("shape")
        });
        let dw_ih = ctx.needs[1].then(|| {
            let mut d = vec![T::zero(); g4 * inp];
            T::gemm(g4, b * t, inp, &da_all, true, x.data(), false, T::zero(), &mut d);
            Tensor::new(w_ih.shape(), d).expect("shape")
        });
        let mut db = vec![T::zero(); g4];
        for row in da_all.chunks(g4) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let db = Tensor::new(&[g4], db).expect("shape");
        vec![
            dx,
            dw_ih,
            ctx.needs[2].then(|| Tensor::new(w_hh.shape(), dw_hh).expect("shape")),
            ctx.needs[3].then(|| db.clone()),
            ctx.needs[4].then_some(db),
        ]
    }
}

impl<T: Scalar> Graph<T> {
    /// One LSTM layer over `x: [B, T, In]` from a zero state.
    pub fn lstm_layer(&mut self, x: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let w = LstmWeights::from_tensors(
            self.value(w_ih),
            self.value(w_hh),
            self.value(b_ih),
            self.value(b_hh),
        )?;
        let (out, cache) = sequence_forward(&w, self.value(x))?;
        Ok(self.push(out, &[x, w_ih, w_hh, b_ih, b_hh], LstmBack { cache }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * seed).sin() * 0.3)
    }

    #[test]
    fn full_size_parameter_count() {
        assert_eq!(lstm_param_count(128, 256, 2), 921_600);
    }

    #[test]
    fn zero_weights_zero_input_zero_output() {
        let (e, h) = (4, 3);
        let w_ih = Tensor::<f32>::zeros(&[4 * h, e]);
        let w_hh = Tensor::<f32>::zeros(&[4 * h, h]);
        let b = Tensor::<f32>::zeros(&[4 * h]);
        let w = LstmWeights::from_tensors(&w_ih, &w_hh, &b, &b).unwrap();
        let y = lstm_sequence(&w, &Tensor::zeros(&[2, 5, e])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_mismatch_is_rejected() {
        let w_ih = Tensor::<f32>::zeros(&[12, 4]);
        let w_hh = Tensor::<f32>::zeros(&[16, 4]);
        let b = Tensor::<f32>::zeros(&[12]);
        assert!(LstmWeights::from_tensors(&w_ih, &w_hh, &b, &b).is_err());
    }

    #[test]
    fn stepwise_cells_match_sequence_call() {
        let (bsz, t, e, h) = (2, 6, 5, 4);
        let w_ih = pseudo(&[4 * h, e], 0.7);
        let w_hh = pseudo(&[4 * h, h], 1.3);
        let b_ih = pseudo(&[4 * h], 2.1);
        let b_hh = pseudo(&[4 * h], 0.4);
        let x = pseudo(&[bsz, t, e], 0.9).map(|v| v * 3.0);
        let w = LstmWeights::from_tensors(&w_ih, &w_hh, &b_ih, &b_hh).unwrap();
        let seq = lstm_sequence(&w, &x).unwrap();
        let mut hs = vec![0.0; bsz * h];
        let mut cs = vec![0.0; bsz * h];
        for step in 0..t {
            let xt: Vec<f64> = (0..bsz)
                .flat_map(|n| x.data()[(n * t + step) * e..(n * t + step + 1) * e].to_vec())
                .collect();
            lstm_cell(&w, &xt, &mut hs, &mut cs).unwrap();
            for n in 0..bsz {
                for j in 0..h {
                    let want = seq.data()[(n * t + step) * h + j];
                    assert!((hs[n * h + j] - want).abs() < 1e-6);
                }
            }
        }
    }
}

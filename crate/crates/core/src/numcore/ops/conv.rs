//! 2-D cross-correlation kernels (stride 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::graph::{Backward, BackwardCtx, Graph, Var};
use crate::numcore::{Scalar, Tensor};

/// Spatial padding mode. `Same` follows the TensorFlow convention: total
/// padding `k - 1`, with the odd extra element placed after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// `(before, after)` padding for a kernel extent.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = k.saturating_sub(1);
                (total / 2, total - total / 2)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pt: usize,
    pl: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, padding: Padding) -> Result<Self> {
        let (pt, pb) = padding.amounts(kh);
        let (pl, pr) = padding.amounts(kw);
        if kh == 0 || kw == 0 || kh > h + pt + pb || kw > w + pl + pr {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + pt + pb,
                w + pl + pr
            )));
        }
        Ok(Geometry {
            c,
            h,
            w,
            kh,
            kw,
            pt,
            pl,
            ho: h + pt + pb - kh + 1,
            wo: w + pl + pr - kw + 1,
        })
    }

    /// Output rows `ho` whose source row `ho + i - pt` is inside the input.
    fn rows(&self, i: usize) -> std::ops::Range<usize> {
        span(self.h, self.ho, i, self.pt)
    }

    fn cols(&self, j: usize) -> std::ops::Range<usize> {
        span(self.w, self.wo, j, self.pl)
    }
}

fn span(len: usize, out_len: usize, offset: usize, pad: usize) -> std::ops::Range<usize> {
    // valid o satisfies 0 <= o + offset - pad < len
    let lo = pad.saturating_sub(offset);
    let hi = (len + pad).saturating_sub(offset).min(out_len);
    lo..hi.max(lo)
}

/// Output columns per im2col block; keeps the block cache-resident.
const BLOCK_COLS: usize = 2048;

fn row_blocks(g: &Geometry) -> impl Iterator<Item = std::ops::Range<usize>> {
    let step = (BLOCK_COLS / g.wo.max(1)).max(1);
    let ho = g.ho;
    (0..ho).step_by(step).map(move |r| r..(r + step).min(ho))
}

/// Patch matrix `[C * kh * kw, rows.len() * wo]` for output rows `rows`.
fn im2col_rows<T: Scalar>(x: &[T], g: &Geometry, rows: std::ops::Range<usize>, cols: &mut [T]) {
    let pb = rows.len() * g.wo;
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            let valid = g.rows(i);
            for j in 0..g.kw {
                let r = ((c * g.kh + i) * g.kw + j) * pb;
                let cr = g.cols(j);
                for ho in rows.clone() {
                    let dst = &mut cols[r + (ho - rows.start) * g.wo..][..g.wo];
                    if !valid.contains(&ho) || cr.is_empty() {
                        dst.fill(T::zero());
                        continue;
                    }
                    let s = &src[(ho + i - g.pt) * g.w..][..g.w];
                    dst[..cr.start].fill(T::zero());
                    dst[cr.end..].fill(T::zero());
                    dst[cr.clone()].copy_from_slice(&s[cr.start + j - g.pl..cr.end + j - g.pl]);
                }
            }
        }
    }
}

fn col2im_rows<T: Scalar>(cols: &[T], g: &Geometry, rows: std::ops::Range<usize>, dx: &mut [T]) {
    let pb = rows.len() * g.wo;
    for c in 0..g.c {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            let valid = g.rows(i);
            for j in 0..g.kw {
                let r = ((c * g.kh + i) * g.kw + j) * pb;
                let cr = g.cols(j);
                if cr.is_empty() {
                    continue;
                }
                for ho in rows.clone() {
                    if !valid.contains(&ho) {
                        continue;
                    }
                    let s = &cols[r + (ho - rows.start) * g.wo..][cr.clone()];
                    let d = &mut dst[(ho + i - g.pt) * g.w + cr.start + j - g.pl..][..cr.len()];
                    for (dv, &sv) in d.iter_mut().zip(s) {
                        *dv += sv;
                    }
                }
            }
        }
    }
}

fn conv_geometry<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, padding: Padding) -> Result<Geometry> {
    input.expect_rank(4, "conv2d input")?;
    kernel.expect_rank(4, "conv2d kernel")?;
    let (c, h, w) = (input.dim(1), input.dim(2), input.dim(3));
    if kernel.dim(1) != c {
        return Err(Error::shape(format!(
            "conv2d: kernel expects {} input channels, input has {c}",
            kernel.dim(1)
        )));
    }
    Geometry::new(c, h, w, kernel.dim(2), kernel.dim(3), padding)
}

/// Cross-correlation of `[B, C, H, W]` with `[F, C, kh, kw]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, padding: Padding) -> Result<Tensor<T>> {
    let g = conv_geometry(input, kernel, padding)?;
    let (b, f) = (input.dim(0), kernel.dim(0));
    let ckk = g.c * g.kh * g.kw;
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); b * f * plane];
    let mut cols = vec![T::zero(); ckk * BLOCK_COLS.max(g.wo)];
    let in_stride = g.c * g.h * g.w;
    for n in 0..b {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        for rows in row_blocks(&g) {
            let pb = rows.len() * g.wo;
            im2col_rows(x, &g, rows.clone(), &mut cols);
            let o = &mut out[n * f * plane + rows.start * g.wo..];
            T::gemm_strided(f, ckk, pb, kernel.data(), (ckk, 1), &cols, (pb, 1), T::zero(), o, plane);
        }
    }
    Tensor::new(&[b, f, g.ho, g.wo], out)
}

struct Conv2dBack {
    padding: Padding,
}

impl<T: Scalar> Backward<T> for Conv2dBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (input, kernel) = (ctx.inputs[0], ctx.inputs[1]);
        let g = conv_geometry(input, kernel, self.padding).expect("validated in forward");
        let (b, f) = (input.dim(0), kernel.dim(0));
        let ckk = g.c * g.kh * g.kw;
        let plane = g.ho * g.wo;
        let in_stride = g.c * g.h * g.w;
        let dy = ctx.grad.data();
        let mut cols = vec![T::zero(); ckk * BLOCK_COLS.max(g.wo)];
        let mut dk = ctx.needs[1].then(|| vec![T::zero(); f * ckk]);
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); input.len()]);
        for n in 0..b {
            let x = &input.data()[n * in_stride..(n + 1) * in_stride];
            for rows in row_blocks(&g) {
                let pb = rows.len() * g.wo;
                let dyb = &dy[n * f * plane + rows.start * g.wo..];
                if let Some(dk) = dk.as_mut() {
                    im2col_rows(x, &g, rows.clone(), &mut cols);
                    T::gemm_strided(f, pb, ckk, dyb, (plane, 1), &cols, (1, pb), T::one(), dk, ckk);
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm_strided(ckk, f, pb, kernel.data(), (1, ckk), dyb, (plane, 1), T::zero(), &mut cols, pb);
                    col2im_rows(&cols, &g, rows, &mut dx[n * in_stride..(n + 1) * in_stride]);
                }
            }
        }
        vec![
            dx.map(|d| Tensor::new(input.shape(), d).expect("shape")),
            dk.map(|d| Tensor::new(kernel.shape(), d).expect("shape")),
        ]
    }
}

fn depthwise_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    depth_multiplier: usize,
    padding: Padding,
) -> Result<Geometry> {
    if depth_multiplier < 1 {
        return Err(Error::param("depth multiplier must be at least 1"));
    }
    input.expect_rank(4, "depthwise input")?;
    kernel.expect_rank(4, "depthwise kernel")?;
    let c = input.dim(1);
    if kernel.dim(0) != c * depth_multiplier || kernel.dim(1) != 1 {
        return Err(Error::shape(format!(
            "depthwise kernel {:?} incompatible with {c} maps x D={depth_multiplier}",
            kernel.shape()
        )));
    }
    Geometry::new(c, input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), padding)
}

/// Per-map convolution: output map `c * D + d` filters input map `c` with
/// kernel `c * D + d`. Kernel shape `[C * D, 1, kh, kw]`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    depth_multiplier: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = depthwise_geometry(input, kernel, depth_multiplier, padding)?;
    let b = input.dim(0);
    let maps = g.c * depth_multiplier;
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); b * maps * plane];
    let kd = kernel.data();
    for n in 0..b {
        for o in 0..maps {
            let c = o / depth_multiplier;
            let src = &input.data()[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            let dst = &mut out[(n * maps + o) * plane..(n * maps + o + 1) * plane];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let k = kd[(o * g.kh + i) * g.kw + j];
                    let cr = g.cols(j);
                    if cr.is_empty() {
                        continue;
                    }
                    let shift = cr.start + j - g.pl;
                    for ho in g.rows(i) {
                        let s = &src[(ho + i - g.pt) * g.w + shift..][..cr.len()];
                        let d = &mut dst[ho * g.wo + cr.start..][..cr.len()];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += k * sv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, maps, g.ho, g.wo], out)
}

struct DepthwiseBack {
    depth_multiplier: usize,
    padding: Padding,
}

impl<T: Scalar> Backward<T> for DepthwiseBack {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (input, kernel) = (ctx.inputs[0], ctx.inputs[1]);
        let dm = self.depth_multiplier;
        let g = depthwise_geometry(input, kernel, dm, self.padding).expect("validated in forward");
        let b = input.dim(0);
        let maps = g.c * dm;
        let plane = g.ho * g.wo;
        let dy = ctx.grad.data();
        let kd = kernel.data();
        let mut dk = ctx.needs[1].then(|| vec![T::zero(); kernel.len()]);
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); input.len()]);
        for n in 0..b {
            for o in 0..maps {
                let c = o / dm;
                let base = (n * g.c + c) * g.h * g.w;
                let src = &input.data()[base..base + g.h * g.w];
                let gy = &dy[(n * maps + o) * plane..(n * maps + o + 1) * plane];
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let kidx = (o * g.kh + i) * g.kw + j;
                        let cr = g.cols(j);
                        if cr.is_empty() {
                            continue;
                        }
                        let shift = cr.start + j - g.pl;
                        let mut acc = T::zero();
                        for ho in g.rows(i) {
                            let row = (ho + i - g.pt) * g.w + shift;
                            let gyr = &gy[ho * g.wo + cr.start..][..cr.len()];
                            if dk.is_some() {
                                let s = &src[row..][..cr.len()];
                                let mut part = [T::zero(); 8];
                                let mut gc = gyr.chunks_exact(8);
                                let mut sc = s.chunks_exact(8);
                                for (a, b) in (&mut gc).zip(&mut sc) {
                                    for l in 0..8 {
                                        part[l] += a[l] * b[l];
                                    }
                                }
                                for (a, b) in gc.remainder().iter().zip(sc.remainder()) {
                                    acc += *a * *b;
                                }
                                acc += part.iter().copied().sum::<T>();
                            }
                            if let Some(dx) = dx.as_mut() {
                                let k = kd[kidx];
                                let d = &mut dx[base + row..][..cr.len()];
                                for (dv, &gv) in d.iter_mut().zip(gyr) {
                                    *dv += k * gv;
                                }
                            }
                        }
                        if let Some(dk) = dk.as_mut() {
                            dk[kidx] += acc;
                        }
                    }
                }
            }
        }
        vec![
            dx.map(|d| Tensor::new(input.shape(), d).expect("shape")),
            dk.map(|d| Tensor::new(kernel.shape(), d).expect("shape")),
        ]
    }
}

/// Number of weights in a separable conv (depthwise `kh x kw` per map, then
/// `1 x 1` mixing to `filters`) versus a full conv of the same extent.
pub fn separable_param_counts(in_maps: usize, filters: usize, kh: usize, kw: usize) -> (usize, usize) {
    (in_maps * kh * kw + in_maps * filters, filters * in_maps * kh * kw)
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let out = conv2d(self.value(input), self.value(kernel), padding)?;
        Ok(self.push(out, &[input, kernel], Conv2dBack { padding }))
    }

    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        depth_multiplier: usize,
        padding: Padding,
    ) -> Result<Var> {
        let out = depthwise_conv2d(self.value(input), self.value(kernel), depth_multiplier, padding)?;
        Ok(self.push(
            out,
            &[input, kernel],
            DepthwiseBack {
                depth_multiplier,
                padding,
            },
        ))
    }

    /// Depthwise pass (multiplier 1) followed by a `1 x 1` pointwise conv.
    /// `point_kernel` has shape `[F, C, 1, 1]`.
    pub fn separable_conv2d(
        &mut self,
        input: Var,
        depth_kernel: Var,
        point_kernel: Var,
        padding: Padding,
    ) -> Result<Var> {
        let pk = self.value(point_kernel);
        if pk.rank() != 4 || pk.dim(2) != 1 || pk.dim(3) != 1 {
            return Err(Error::shape(format!(
                "pointwise kernel must be [F, C, 1, 1], got {:?}",
                pk.shape()
            )));
        }
        let depth = self.depthwise_conv2d(input, depth_kernel, 1, padding)?;
        self.conv2d(depth, point_kernel, Padding::Valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window reference.
    pub(crate) fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, padding: Padding) -> Tensor<f64> {
        let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (f, kh, kw) = (k.dim(0), k.dim(2), k.dim(3));
        let (pt, pb) = padding.amounts(kh);
        let (pl, pr) = padding.amounts(kw);
        let (ho, wo) = (h + pt + pb - kh + 1, w + pl + pr - kw + 1);
        let mut out = Tensor::zeros(&[b, f, ho, wo]);
        for n in 0..b {
            for o in 0..f {
                for y in 0..ho {
                    for z in 0..wo {
                        let mut s = 0.0;
                        for ch in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let (sy, sz) = (y as isize + i as isize - pt as isize, z as isize + j as isize - pl as isize);
                                    if sy < 0 || sz < 0 || sy >= h as isize || sz >= w as isize {
                                        continue;
                                    }
                                    s += k.data()[((o * c + ch) * kh + i) * kw + j]
                                        * x.data()[((n * c + ch) * h + sy as usize) * w + sz as usize];
                                }
                            }
                        }
                        out.data_mut()[((n * f + o) * ho + y) * wo + z] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * (seed as f64 + 0.618)).sin())
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f32>::zeros(&[2, 3, 4, 5]);
        let k = pseudo(&[2, 3, 2, 3], 1).cast::<f32>();
        let y = conv2d(&x, &k, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_shift_example() {
        let x = Tensor::new(&[1, 1, 1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 3], vec![1.0f32, 0.0, 0.0]).unwrap();
        let y = conv2d(&x, &k, Padding::Same).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn temporal_conv_output_shape() {
        let x = Tensor::<f32>::zeros(&[2, 16, 1, 250]);
        let k = Tensor::<f32>::zeros(&[16, 16, 1, 64]);
        for (pad, wo) in [(Padding::Same, 250), (Padding::Valid, 250 - 64 + 1)] {
            let y = conv2d(&x, &k, pad).unwrap();
            assert_eq!(y.shape(), &[2, 16, 1, wo]);
        }
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        for (shape, kshape, pad) in [
            ([2, 3, 5, 7], [4, 3, 2, 3], Padding::Same),
            ([1, 2, 6, 4], [3, 2, 3, 2], Padding::Valid),
            ([2, 1, 1, 9], [2, 1, 1, 4], Padding::Same),
        ] {
            let x = pseudo(&shape, 3);
            let k = pseudo(&kshape, 7);
            let got = conv2d(&x, &k, pad).unwrap();
            let want = conv_oracle(&x, &k, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &k, Padding::Valid), Err(Error::Shape(_))));
        let bad_c = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert!(conv2d(&x, &bad_c, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = pseudo(&[2, 3, 4, 5], 2);
        let mut k = Tensor::<f64>::zeros(&[3, 1, 3, 3]);
        for o in 0..3 {
            k.data_mut()[o * 9 + 4] = 1.0;
        }
        let y = depthwise_conv2d(&x, &k, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn depthwise_multiplier_two_doubles_maps() {
        let x = Tensor::<f32>::zeros(&[1, 16, 64, 250]);
        let k = Tensor::<f32>::zeros(&[32, 1, 64, 1]);
        let y = depthwise_conv2d(&x, &k, 2, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 32, 1, 250]);
        assert!(depthwise_conv2d(&x, &k, 0, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_matches_grouped_conv_oracle() {
        let (c, d) = (3, 2);
        let x = pseudo(&[2, c, 5, 6], 4);
        let k = pseudo(&[c * d, 1, 2, 3], 5);
        let got = depthwise_conv2d(&x, &k, d, Padding::Same).unwrap();
        // grouped conv: a full conv whose kernel is zero outside each group
        let mut full = Tensor::<f64>::zeros(&[c * d, c, 2, 3]);
        for o in 0..c * d {
            let src = o / d;
            for t in 0..6 {
                full.data_mut()[(o * c + src) * 6 + t] = k.data()[o * 6 + t];
            }
        }
        let want = conv_oracle(&x, &full, Padding::Same);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_with_identity_pointwise_equals_depthwise() {
        let x = pseudo(&[1, 4, 1, 10], 6);
        let dk = pseudo(&[4, 1, 1, 3], 8);
        let mut pk = Tensor::<f64>::zeros(&[4, 4, 1, 1]);
        for i in 0..4 {
            pk.data_mut()[i * 4 + i] = 1.0;
        }
        let mut g = Graph::<f64>::new();
        let (xv, dv, pv) = (g.constant(x.clone()), g.constant(dk.clone()), g.constant(pk));
        let y = g.separable_conv2d(xv, dv, pv, Padding::Same).unwrap();
        let want = depthwise_conv2d(&x, &dk, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), want.data());
    }

    #[test]
    fn separable_matches_two_stage_oracle() {
        let x = pseudo(&[2, 3, 1, 12], 9);
        let dk = pseudo(&[3, 1, 1, 4], 10);
        let pk = pseudo(&[5, 3, 1, 1], 11);
        let mut g = Graph::<f64>::new();
        let (xv, dv, pv) = (g.constant(x.clone()), g.constant(dk.clone()), g.constant(pk.clone()));
        let y = g.separable_conv2d(xv, dv, pv, Padding::Same).unwrap();
        let mut grouped = Tensor::<f64>::zeros(&[3, 3, 1, 4]);
        for o in 0..3 {
            for t in 0..4 {
                grouped.data_mut()[(o * 3 + o) * 4 + t] = dk.data()[o * 4 + t];
            }
        }
        let stage1 = conv_oracle(&x, &grouped, Padding::Same);
        let want = conv_oracle(&stage1, &pk, Padding::Valid);
        for (a, b) in g.value(y).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_is_cheaper_than_full_conv() {
        let (sep, full) = separable_param_counts(32, 32, 1, 16);
        assert_eq!(sep, 32 * 16 + 32 * 32);
        assert_eq!(full, 32 * 32 * 16);
        assert!(sep < full);
    }
}

//! Central finite-difference gradient checking.

use rand::Rng;

use super::graph::{Graph, Var};
use super::rng::rng_from;
use super::Tensor;
use crate::error::Result;

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` for
/// every input of `build`, using central differences with step `h`.
///
/// The scalar probed is `r · y` for a fixed random cotangent `r`, so all
/// output elements contribute.
pub fn relative_errors<F>(inputs: &[Tensor<f64>], build: F, h: f64, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = rng_from(seed);
    let shape = g.value(out).shape().to_vec();
    let cot = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let grads = g.backward_with(out, cot.clone())?;

    let probe = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(cot.data()).map(|(a, b)| a * b).sum())
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut work = inputs.to_vec();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = probe(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = probe(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        errors.push(if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale });
    }
    Ok(errors)
}

/// Finite-difference step used by [`standard_suite`].
pub const FD_STEP: f64 = 1e-3;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub op: &'static str,
    pub shape: Vec<usize>,
    pub max_rel_error: f64,
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Checks every differentiable op on three random small shapes each.
pub fn standard_suite(seed: u64) -> Result<Vec<CheckResult>> {
    use super::ops::conv::Padding;
    use super::ops::norm::{BatchNormMode, BatchStats, RunningStats};

    let mut rng = rng_from(seed);
    let mut results = Vec::new();
    let mut record = |op: &'static str, shape: &[usize], errs: Vec<f64>| {
        results.push(CheckResult {
            op,
            shape: shape.to_vec(),
            max_rel_error: errs.into_iter().fold(0.0, f64::max),
        });
    };

    for case in 0..3u64 {
        let b = rng.random_range(1..=2usize);
        let c = rng.random_range(1..=3usize);
        let h = rng.random_range(1..=3usize);
        let w = rng.random_range(4..=7usize);
        let f = rng.random_range(1..=3usize);
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=3usize));
        let shape = [b, c, h, w];
        let pad = if case % 2 == 0 { Padding::Same } else { Padding::Valid };

        let x = rand_tensor(&shape, &mut rng, 1.0);
        let k = rand_tensor(&[f, c, kh, kw], &mut rng, 1.0);
        record(
            "conv2d",
            &shape,
            relative_errors(&[x.clone(), k], |g, v| g.conv2d(v[0], v[1], pad), FD_STEP, seed + case)?,
        );

        let d = 1 + case as usize % 2;
        let dk = rand_tensor(&[c * d, 1, kh, kw], &mut rng, 1.0);
        record(
            "depthwise_conv2d",
            &shape,
            relative_errors(&[x.clone(), dk], |g, v| g.depthwise_conv2d(v[0], v[1], d, pad), FD_STEP, seed + case)?,
        );

        let sk = rand_tensor(&[c, 1, 1, kw], &mut rng, 1.0);
        let pk = rand_tensor(&[f, c, 1, 1], &mut rng, 1.0);
        record(
            "separable_conv2d",
            &shape,
            relative_errors(
                &[x.clone(), sk, pk],
                |g, v| g.separable_conv2d(v[0], v[1], v[2], Padding::Same),
                FD_STEP,
                seed + case,
            )?,
        );

        let gamma = rand_tensor(&[c], &mut rng, 1.0).map(|v| v + 1.5);
        let beta = rand_tensor(&[c], &mut rng, 1.0);
        let xb = rand_tensor(&[b + 1, c, h, w], &mut rng, 2.0);
        record(
            "batch_norm_train",
            &xb.shape().to_vec(),
            relative_errors(
                &[xb.clone(), gamma.clone(), beta.clone()],
                |g, v| g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train).map(|r| r.0),
                FD_STEP,
                seed + case,
            )?,
        );
        let mut rs = RunningStats::new(c);
        rs.update(
            &BatchStats {
                mean: (0..c).map(|i| 0.1 * i as f64).collect(),
                unbiased_var: (0..c).map(|i| 0.5 + i as f64).collect(),
            },
            0.0,
        );
        record(
            "batch_norm_eval",
            &xb.shape().to_vec(),
            relative_errors(
                &[xb.clone(), gamma, beta],
                |g, v| g.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval(&rs)).map(|r| r.0),
                FD_STEP,
                seed + case,
            )?,
        );

        let dim = w + 1;
        let xl = rand_tensor(&[b, h, dim], &mut rng, 2.0);
        let lg = rand_tensor(&[dim], &mut rng, 1.0).map(|v| v + 1.5);
        let lb = rand_tensor(&[dim], &mut rng, 1.0);
        record(
            "layer_norm",
            &xl.shape().to_vec(),
            relative_errors(&[xl, lg, lb], |g, v| g.layer_norm(v[0], v[1], v[2]), FD_STEP, seed + case)?,
        );

        let pw = rng.random_range(1..=3usize);
        record(
            "avg_pool2d",
            &shape,
            relative_errors(&[x.clone()], |g, v| g.avg_pool2d(v[0], 1, pw), FD_STEP, seed + case)?,
        );

        record(
            "elu",
            &shape,
            relative_errors(&[x.clone()], |g, v| Ok(g.elu(v[0])), FD_STEP, seed + case)?,
        );

        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { 1.0 / 0.7 })
            .collect();
        record(
            "dropout",
            &shape,
            relative_errors(&[x.clone()], |g, v| g.apply_mask(v[0], mask.clone()), FD_STEP, seed + case)?,
        );

        record(
            "reshape",
            &shape,
            relative_errors(&[x.clone()], |g, v| g.reshape(v[0], &[b, c * h * w]), FD_STEP, seed + case)?,
        );

        let (n, din, dout) = (b + 1, c + 2, f + 1);
        let xin = rand_tensor(&[n, din], &mut rng, 1.0);
        let wt = rand_tensor(&[dout, din], &mut rng, 1.0);
        let bias = rand_tensor(&[dout], &mut rng, 1.0);
        record(
            "linear",
            &xin.shape().to_vec(),
            relative_errors(&[xin, wt, bias], |g, v| g.linear(v[0], v[1], Some(v[2])), FD_STEP, seed + case)?,
        );

        let (vocab, emb) = (c + 3, w);
        let idx: Vec<usize> = (0..b * h).map(|_| rng.random_range(0..vocab)).collect();
        let table = rand_tensor(&[vocab, emb], &mut rng, 1.0);
        record(
            "embedding",
            &[vocab, emb],
            relative_errors(&[table], |g, v| g.embedding(v[0], &idx, &[b, h]), FD_STEP, seed + case)?,
        );

        let (t, inp, hid) = (h + 2, c + 1, f + 1);
        let xs = rand_tensor(&[b, t, inp], &mut rng, 1.0);
        let w_ih = rand_tensor(&[4 * hid, inp], &mut rng, 0.7);
        let w_hh = rand_tensor(&[4 * hid, hid], &mut rng, 0.7);
        let b_ih = rand_tensor(&[4 * hid], &mut rng, 0.5);
        let b_hh = rand_tensor(&[4 * hid], &mut rng, 0.5);
        record(
            "lstm_layer",
            &xs.shape().to_vec(),
            relative_errors(
                &[xs, w_ih, w_hh, b_ih, b_hh],
                |g, v| g.lstm_layer(v[0], v[1], v[2], v[3], v[4]),
                FD_STEP,
                seed + case,
            )?,
        );

        let classes = f + 2;
        let logits = rand_tensor(&[n, classes], &mut rng, 2.0);
        record(
            "softmax",
            &logits.shape().to_vec(),
            relative_errors(&[logits.clone()], |g, v| Ok(g.softmax(v[0])), FD_STEP, seed + case)?,
        );
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        record(
            "cross_entropy",
            &logits.shape().to_vec(),
            relative_errors(
                &[logits.clone()],
                |g, v| {
                    let p = g.softmax(v[0]);
                    g.cross_entropy(p, &targets)
                },
                FD_STEP,
                seed + case,
            )?,
        );
        // keep every hinge term away from its kink
        let mut scores = logits.clone();
        for row in scores.data_mut().chunks_mut(classes) {
            for v in row.iter_mut() {
                *v = (*v * 4.0).round() / 4.0 + 0.1;
            }
        }
        for (i, &t) in targets.iter().enumerate() {
            scores.data_mut()[i * classes + t] += 0.37;
        }
        record(
            "hinge_loss",
            &scores.shape().to_vec(),
            relative_errors(&[scores], |g, v| g.hinge_loss(v[0], &targets), FD_STEP, seed + case)?,
        );
    }
    Ok(results)
}

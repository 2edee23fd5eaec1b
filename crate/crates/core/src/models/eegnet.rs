//! Compact convolutional classifier for multi-channel segments.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::weights::{ModelWeights, NamedTensor};
use super::{argmax, check_finite, EpochRecord, History, LrSchedule};
use crate::augment::{augment_tensor, AugSpec, Mode};
use crate::error::{Error, Result};
use crate::numcore::init::glorot_uniform;
use crate::numcore::ops::loss::{cross_entropy, hinge_loss, softmax};
use crate::numcore::rng::{derive_seed, derived_rng, SeededRng};
use crate::numcore::{
    Adam, BatchNormMode, BatchStats, Graph, LossKind, Padding, RunningStats, Tensor, TrainConfig, Var,
    BN_MOMENTUM,
};
use crate::sigproc::SegmentSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegnetConfig {
    pub nb_classes: usize,
    pub chans: usize,
    pub samples: usize,
    pub dropout_rate: f64,
    pub kern_length: usize,
    pub f1: usize,
    pub d: usize,
    pub f2: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub separable_kernel: usize,
}

impl Default for EegnetConfig {
    fn default() -> Self {
        EegnetConfig {
            nb_classes: 40,
            chans: 64,
            samples: 250,
            dropout_rate: 0.2,
            kern_length: 64,
            f1: 16,
            d: 2,
            f2: 32,
            pool1: 4,
            pool2: 8,
            separable_kernel: 16,
        }
    }
}

impl EegnetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("eegnet: {m}")));
        if self.f2 != self.f1 * self.d {
            return fail("f2 must equal f1 * d");
        }
        if self.kern_length == 0 || self.kern_length > self.samples {
            return fail("kern_length must be in 1..=samples");
        }
        if [self.nb_classes, self.chans, self.f1, self.d, self.pool1, self.pool2, self.separable_kernel]
            .contains(&0)
        {
            return fail("sizes must be positive");
        }
        if self.pooled_width() == 0 {
            return fail("pooling leaves no time steps");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }

    pub fn depth_maps(&self) -> usize {
        self.f1 * self.d
    }

    pub fn pooled_width(&self) -> usize {
        self.samples / self.pool1 / self.pool2
    }

    /// Trainable parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let maps = self.depth_maps();
        self.f1 * self.kern_length
            + 2 * self.f1
            + maps * self.chans
            + 2 * maps
            + maps * self.separable_kernel
            + maps * self.f2
            + 2 * self.f2
            + self.f2 * self.pooled_width() * self.nb_classes
            + self.nb_classes
    }
}

/// `[B, 1, chans, samples]` batch from segments.
pub fn samples_to_batch(cfg: &EegnetConfig, segs: &[&SegmentSample]) -> Result<Tensor> {
    let per = cfg.chans * cfg.samples;
    let mut data = Vec::with_capacity(segs.len() * per);
    for s in segs {
        if s.data.shape() != [cfg.chans, cfg.samples] {
            return Err(Error::shape(format!(
                "segment {:?} does not match [{}, {}]",
                s.data.shape(),
                cfg.chans,
                cfg.samples
            )));
        }
        data.extend_from_slice(s.data.data());
    }
    Tensor::new(&[segs.len(), 1, cfg.chans, cfg.samples], data)
}

const BN_LAYERS: [&str; 3] = ["bn1", "bn2", "bn3"];

#[derive(Clone, Debug, PartialEq)]
pub struct Eegnet {
    pub config: EegnetConfig,
    pub weights: ModelWeights,
}

struct Params {
    conv1: Var,
    bn1: (Var, Var),
    depthwise: Var,
    bn2: (Var, Var),
    sep_depth: Var,
    sep_point: Var,
    bn3: (Var, Var),
    dense_w: Var,
    dense_b: Var,
}

impl Params {
    fn record(g: &mut Graph, w: &ModelWeights, trainable: bool) -> Result<(Self, Vec<Var>)> {
        let mut vars = Vec::new();
        let mut take = |name: &str| -> Result<Var> {
            let t = w.get(name)?.clone();
            let v = if trainable { g.param(t) } else { g.constant(t) };
            vars.push(v);
            Ok(v)
        };
        let p = Params {
            conv1: take("conv1.weight")?,
            bn1: (take("bn1.gamma")?, take("bn1.beta")?),
            depthwise: take("depthwise.weight")?,
            bn2: (take("bn2.gamma")?, take("bn2.beta")?),
            sep_depth: take("separable.depthwise")?,
            sep_point: take("separable.pointwise")?,
            bn3: (take("bn3.gamma")?, take("bn3.beta")?),
            dense_w: take("dense.weight")?,
            dense_b: take("dense.bias")?,
        };
        Ok((p, vars))
    }
}

impl Eegnet {
    /// Glorot-uniform kernels, unit/zero batch-norm affine parameters.
    pub fn init(config: EegnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let maps = c.depth_maps();
        let mut rng = derived_rng(&[seed, 0xEE6]);
        let flat = c.f2 * c.pooled_width();
        let mut params = Vec::new();
        let mut add = |name: &str, t: Tensor| params.push(NamedTensor { name: name.into(), tensor: t });
        add("conv1.weight", glorot_uniform(&[c.f1, 1, 1, c.kern_length], c.kern_length, c.f1 * c.kern_length, &mut rng));
        add("bn1.gamma", Tensor::full(&[c.f1], 1.0));
        add("bn1.beta", Tensor::zeros(&[c.f1]));
        add("depthwise.weight", glorot_uniform(&[maps, 1, c.chans, 1], c.chans, c.d * c.chans, &mut rng));
        add("bn2.gamma", Tensor::full(&[maps], 1.0));
        add("bn2.beta", Tensor::zeros(&[maps]));
        add(
            "separable.depthwise",
            glorot_uniform(&[maps, 1, 1, c.separable_kernel], c.separable_kernel, c.separable_kernel, &mut rng),
        );
        add("separable.pointwise", glorot_uniform(&[c.f2, maps, 1, 1], maps, c.f2, &mut rng));
        add("bn3.gamma", Tensor::full(&[c.f2], 1.0));
        add("bn3.beta", Tensor::zeros(&[c.f2]));
        add("dense.weight", glorot_uniform(&[c.nb_classes, flat], flat, c.nb_classes, &mut rng));
        add("dense.bias", Tensor::zeros(&[c.nb_classes]));
        let running = vec![
            ("bn1".to_string(), RunningStats::new(c.f1)),
            ("bn2".to_string(), RunningStats::new(maps)),
            ("bn3".to_string(), RunningStats::new(c.f2)),
        ];
        Ok(Eegnet { config, weights: ModelWeights::new(params, running) })
    }

    /// Wraps loaded weights after checking their layout against `config`.
    pub fn from_weights(config: EegnetConfig, weights: ModelWeights) -> Result<Self> {
        let reference = Eegnet::init(config.clone(), 0)?;
        weights.check_layout(&reference.weights)?;
        Ok(Eegnet { config, weights })
    }

    fn graph_forward(
        &self,
        g: &mut Graph,
        p: &Params,
        x: Var,
        mut train: Option<&mut SeededRng>,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let c = &self.config;
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != c.chans || xs[3] != c.samples {
            return Err(Error::shape(format!("eegnet input must be [B, 1, {}, {}], got {xs:?}", c.chans, c.samples)));
        }
        let b = xs[0];
        let mut stats = Vec::new();
        let mut bn = |g: &mut Graph, v: Var, (gamma, beta): (Var, Var), layer: &str, train: bool| -> Result<Var> {
            let mode = if train {
                BatchNormMode::Train
            } else {
                BatchNormMode::Eval(self.weights.running(layer)?)
            };
            let (out, s) = g.batch_norm(v, gamma, beta, mode)?;
            stats.extend(s);
            Ok(out)
        };
        let is_train = train.is_some();
        let h = g.conv2d(x, p.conv1, Padding::Same)?;
        let h = bn(g, h, p.bn1, "bn1", is_train)?;
        let h = g.depthwise_conv2d(h, p.depthwise, c.d, Padding::Valid)?;
        let h = bn(g, h, p.bn2, "bn2", is_train)?;
        let h = g.elu(h);
        let h = g.avg_pool2d(h, 1, c.pool1)?;
        let h = match train.as_deref_mut() {
            Some(rng) => g.dropout(h, c.dropout_rate, rng)?,
            None => h,
        };
        let h = g.separable_conv2d(h, p.sep_depth, p.sep_point, Padding::Same)?;
        let h = bn(g, h, p.bn3, "bn3", is_train)?;
        let h = g.elu(h);
        let h = g.avg_pool2d(h, 1, c.pool2)?;
        let h = match train {
            Some(rng) => g.dropout(h, c.dropout_rate, rng)?,
            None => h,
        };
        let h = g.reshape(h, &[b, c.f2 * c.pooled_width()])?;
        let logits = g.linear(h, p.dense_w, Some(p.dense_b))?;
        Ok((logits, stats))
    }

    /// Evaluation-mode logits `[B, classes]` for `[B, 1, chans, samples]`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (p, _) = Params::record(&mut g, &self.weights, false)?;
        let x = g.constant(batch.clone());
        let (out, _) = self.graph_forward(&mut g, &p, x, None)?;
        Ok(g.value(out).clone())
    }

    /// Evaluation-mode class probabilities, rows summing to one.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.logits(batch)?))
    }

    /// Depthwise-stage output for inspection, `[B, f1 * d, 1, samples]`.
    pub fn depthwise_maps(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (p, _) = Params::record(&mut g, &self.weights, false)?;
        let x = g.constant(batch.clone());
        let h = g.conv2d(x, p.conv1, Padding::Same)?;
        let (h, _) = g.batch_norm(h, p.bn1.0, p.bn1.1, BatchNormMode::Eval(self.weights.running("bn1")?))?;
        let h = g.depthwise_conv2d(h, p.depthwise, self.config.d, Padding::Valid)?;
        Ok(g.value(h).clone())
    }

    /// Probabilities for many segments, evaluated in chunks.
    pub fn predict_segments(&self, segs: &[&SegmentSample], chunk: usize) -> Result<Tensor> {
        let k = self.config.nb_classes;
        let mut out = Vec::with_capacity(segs.len() * k);
        for part in segs.chunks(chunk.max(1)) {
            let batch = samples_to_batch(&self.config, part)?;
            out.extend_from_slice(self.predict_proba(&batch)?.data());
        }
        Tensor::new(&[segs.len(), k], out)
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        batch: &Tensor,
        labels: &[usize],
        loss: LossKind,
        rng: &mut SeededRng,
    ) -> Result<(Var, Vec<Var>, Vec<BatchStats>, Var)> {
        let (p, vars) = Params::record(g, &self.weights, true)?;
        let x = g.constant(batch.clone());
        let (logits, stats) = self.graph_forward(g, &p, x, Some(rng))?;
        let l = match loss {
            LossKind::CrossEntropy => {
                let probs = g.softmax(logits);
                g.cross_entropy(probs, labels)?
            }
            LossKind::Hinge => g.hinge_loss(logits, labels)?,
        };
        Ok((l, vars, stats, logits))
    }

    /// Training-mode loss of one batch with dropout drawn from `seed`.
    pub fn batch_loss(&self, batch: &Tensor, labels: &[usize], loss: LossKind, seed: u64) -> Result<f64> {
        let mut g = Graph::new();
        let (l, ..) = self.loss_graph(&mut g, batch, labels, loss, &mut derived_rng(&[seed]))?;
        Ok(g.value(l).item() as f64)
    }

    /// One Adam step on `batch`; returns the pre-step loss and the number of
    /// correct training-mode predictions.
    pub fn train_step(
        &mut self,
        adam: &mut Adam,
        batch: &Tensor,
        labels: &[usize],
        loss: LossKind,
        lr: f64,
        seed: u64,
    ) -> Result<(f64, usize)> {
        let mut g = Graph::new();
        let (l, vars, stats, logits) = self.loss_graph(&mut g, batch, labels, loss, &mut derived_rng(&[seed]))?;
        let value = g.value(l).item() as f64;
        let correct = g.value(logits).rows().zip(labels).filter(|(r, &y)| argmax(r) == y).count();
        if !value.is_finite() {
            return Ok((value, correct));
        }
        let mut grads = g.backward(l)?;
        let grads: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
        drop(g);
        let mut tensors = self.weights.tensors();
        adam.step(&mut tensors, &grads, lr)?;
        self.weights.set_tensors(tensors);
        for (layer, s) in BN_LAYERS.iter().zip(&stats) {
            self.weights.running_mut(layer)?.update(s, BN_MOMENTUM);
        }
        Ok((value, correct))
    }

    /// Evaluation-mode (loss, accuracy) over `segs`.
    pub fn evaluate(&self, segs: &[SegmentSample], loss: LossKind) -> Result<(f64, f64)> {
        if segs.is_empty() {
            return Err(Error::param("cannot evaluate an empty set"));
        }
        let refs: Vec<&SegmentSample> = segs.iter().collect();
        let mut total = 0.0;
        let mut hits = 0;
        for part in refs.chunks(64) {
            let batch = samples_to_batch(&self.config, part)?;
            let logits = self.logits(&batch)?;
            let labels: Vec<usize> = part.iter().map(|s| s.label).collect();
            let l = match loss {
                LossKind::CrossEntropy => cross_entropy(&softmax(&logits), &labels)?,
                LossKind::Hinge => hinge_loss(&logits, &labels)?,
            };
            total += l * part.len() as f64;
            hits += logits.rows().zip(&labels).filter(|(r, &y)| argmax(r) == y).count();
        }
        Ok((total / segs.len() as f64, hits as f64 / segs.len() as f64))
    }
}

/// Trains from a fresh initialization; deterministic in `tc.seed`.
pub fn train_eegnet(
    cfg: &EegnetConfig,
    train: &[SegmentSample],
    val: &[SegmentSample],
    tc: &TrainConfig,
    aug: &[AugSpec],
) -> Result<(Eegnet, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::param("training and validation sets must be non-empty"));
    }
    for a in aug {
        a.validate()?;
    }
    let mut model = Eegnet::init(cfg.clone(), tc.seed)?;
    let mut sched = LrSchedule::new(tc)?;
    let mut adam = Adam::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tc.epochs {
        let lr = sched.lr(epoch)?;
        order.shuffle(&mut derived_rng(&[tc.seed, 0x5AFF1E, epoch as u64]));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let batch = if aug.is_empty() {
                let segs: Vec<&SegmentSample> = idx.iter().map(|&i| &train[i]).collect();
                samples_to_batch(cfg, &segs)?
            } else {
                let mut segs = Vec::with_capacity(idx.len());
                for &i in idx {
                    let mut s = train[i].clone();
                    let seed = derive_seed(&[tc.seed, 0xA06, epoch as u64, i as u64]);
                    augment_tensor(&mut s.data, aug, seed, Mode::Train)?;
                    segs.push(s);
                }
                let refs: Vec<&SegmentSample> = segs.iter().collect();
                samples_to_batch(cfg, &refs)?
            };
            let seed = derive_seed(&[tc.seed, 0xD50, epoch as u64, bi as u64]);
            let (l, c) = model.train_step(&mut adam, &batch, &labels, tc.loss, lr, seed)?;
            check_finite(l, epoch + 1, "training")?;
            loss_sum += l * idx.len() as f64;
            hits += c;
        }
        let (val_loss, val_acc) = model.evaluate(val, tc.loss)?;
        check_finite(val_loss, epoch + 1, "validation")?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss,
            val_acc,
            lr,
        });
        log::info!(
            "eegnet epoch {}: train {:.4} / {:.3}, val {:.4} / {:.3}, lr {lr:.2e}",
            epoch + 1,
            loss_sum / train.len() as f64,
            hits as f64 / train.len() as f64,
            val_loss,
            val_acc
        );
        sched.end_epoch(val_loss);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> EegnetConfig {
        EegnetConfig { nb_classes: 4, chans: 6, samples: 64, kern_length: 16, f1: 4, d: 2, f2: 8, ..Default::default() }
    }

    fn noise(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::from_fn(shape, |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
    }

    #[test]
    fn parameter_count_fixture() {
        let cfg = EegnetConfig::default();
        // conv 16*64, bn 2*16, depthwise 32*64, bn 2*32, separable 32*16 + 32*32,
        // bn 2*32, dense 224*40 + 40
        assert_eq!(cfg.param_count(), 13_768);
        let m = Eegnet::init(cfg, 1).unwrap();
        assert_eq!(m.weights.param_count(), 13_768);
        let small = small();
        assert_eq!(Eegnet::init(small.clone(), 1).unwrap().weights.param_count(), small.param_count());
    }

    #[test]
    fn config_invariants() {
        assert!(EegnetConfig { f2: 31, ..Default::default() }.validate().is_err());
        assert!(EegnetConfig { kern_length: 251, ..Default::default() }.validate().is_err());
        assert!(EegnetConfig::default().validate().is_ok());
    }

    #[test]
    fn output_shapes_and_probabilities() {
        let mut m = Eegnet::init(EegnetConfig::default(), 2).unwrap();
        for (_, s) in &mut m.weights.running {
            s.updates = 1;
        }
        let x = noise(&[2, 1, 64, 250], 3);
        let p = m.predict_proba(&x).unwrap();
        assert_eq!(p.shape(), &[2, 40]);
        for row in p.rows() {
            assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
        assert_eq!(m.depthwise_maps(&x).unwrap().shape(), &[2, 32, 1, 250]);
        assert!(m.logits(&noise(&[2, 1, 63, 250], 3)).is_err());
        assert_eq!(m.logits(&x).unwrap(), m.logits(&x).unwrap());
    }

    #[test]
    fn eval_before_training_needs_running_stats() {
        let m = Eegnet::init(small(), 2).unwrap();
        assert!(matches!(m.logits(&noise(&[1, 1, 6, 64], 1)), Err(Error::MissingStats)));
    }

    #[test]
    fn single_step_descends_for_small_lr() {
        let cfg = small();
        for seed in 0..5 {
            let mut m = Eegnet::init(cfg.clone(), seed).unwrap();
            let x = noise(&[8, 1, 6, 64], 100 + seed);
            let y: Vec<usize> = (0..8).map(|i| (i + seed as usize) % 4).collect();
            for loss in [LossKind::CrossEntropy, LossKind::Hinge] {
                let before = m.batch_loss(&x, &y, loss, 9).unwrap();
                let mut probe = m.clone();
                let (l0, _) = probe.train_step(&mut Adam::new(), &x, &y, loss, 1e-4, 9).unwrap();
                assert_eq!(l0, before);
                let after = probe.batch_loss(&x, &y, loss, 9).unwrap();
                assert!(after < before, "seed {seed} {loss:?}: {after} !< {before}");
            }
            m.train_step(&mut Adam::new(), &x, &y, LossKind::CrossEntropy, 1e-4, 9).unwrap();
        }
    }

    fn toy_set(n: usize, seed: u64) -> Vec<SegmentSample> {
        // class k puts a sinusoid of period 4 + 4k on channel k
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| {
                let label = i % 4;
                let data = Tensor::from_fn(&[6, 64], |j| {
                    let (c, t) = (j / 64, j % 64);
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let s = if c == label { (t as f64 * std::f64::consts::TAU / (4.0 + 4.0 * label as f64)).sin() } else { 0.0 };
                    (2.0 * s + 0.3 * e) as f32
                });
                SegmentSample { data, label, subject: 1, block: 1, flat_channel: false }
            })
            .collect()
    }

    #[test]
    fn learns_a_toy_problem_deterministically() {
        let cfg = small();
        let train = toy_set(96, 1);
        let val = toy_set(32, 2);
        let tc = TrainConfig { batch_size: 16, epochs: 8, learning_rate: 1e-2, ..TrainConfig::eegnet_default() };
        let (m, h) = train_eegnet(&cfg, &train, &val, &tc, &[]).unwrap();
        assert_eq!(h.len(), 8);
        assert!(h.last().unwrap().val_acc >= 0.9, "{h:?}");
        let (m2, h2) = train_eegnet(&cfg, &train, &val, &tc, &[]).unwrap();
        assert_eq!(h, h2);
        assert_eq!(m, m2);
    }

    #[test]
    fn weights_roundtrip_through_files() {
        let cfg = small();
        let mut m = Eegnet::init(cfg.clone(), 4).unwrap();
        m.weights.running[1].1.mean[0] = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        m.weights.save(&stem, "eegnet", &cfg).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("model.manifest")).unwrap();
        assert!(manifest.starts_with("conv1.weight,4x1x1x16,0\n"), "{manifest}");
        let (w, back): (ModelWeights, EegnetConfig) = ModelWeights::load(&stem, "eegnet").unwrap();
        assert_eq!(back, cfg);
        let loaded = Eegnet::from_weights(back, w).unwrap();
        assert_eq!(loaded.weights.params, m.weights.params);
        assert_eq!(loaded.weights.running("bn2").unwrap().mean[0], 0.5);
        assert!(ModelWeights::load::<EegnetConfig>(&stem, "charrnn").is_err());
        let other = EegnetConfig { f1: 8, f2: 16, ..cfg };
        let (w, _): (ModelWeights, EegnetConfig) = ModelWeights::load(&stem, "eegnet").unwrap();
        assert!(Eegnet::from_weights(other, w).is_err());
    }
}

//! Character-level LSTM language model over `A`-`Z` and space.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weights::{ModelWeights, NamedTensor};
use super::{argmax, check_finite, EpochRecord, History, LrSchedule};
use crate::error::{Error, Result};
use crate::numcore::init::{normal, uniform};
use crate::numcore::ops::loss::softmax;
use crate::numcore::rng::{derive_seed, derived_rng, SeededRng};
use crate::numcore::{lstm_param_count, Adam, Graph, Tensor, TrainConfig, Var};

pub const VOCAB: usize = 27;
pub const SPACE: usize = 26;
pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ ";

pub fn symbol_index(ch: char) -> Result<usize> {
    match ch {
        'A'..='Z' => Ok(ch as usize - 'A' as usize),
        ' ' => Ok(SPACE),
        _ => Err(Error::param(format!("'{ch}' is outside the 27-symbol alphabet"))),
    }
}

pub fn index_symbol(i: usize) -> Result<char> {
    ALPHABET.chars().nth(i).ok_or_else(|| Error::param(format!("symbol index {i} out of range")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharRnnConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    pub context_len: usize,
    /// Share of training windows that start at a word boundary behind
    /// space padding, matching how short contexts are presented at
    /// inference.
    pub padded_windows: f64,
    /// Share of the corpus tail held out for validation.
    pub val_fraction: f64,
}

impl Default for CharRnnConfig {
    fn default() -> Self {
        CharRnnConfig {
            vocab: VOCAB,
            embed_dim: 128,
            hidden: 256,
            lstm_layers: 2,
            dropout: 0.3,
            context_len: 20,
            padded_windows: 0.25,
            val_fraction: 0.05,
        }
    }
}

impl CharRnnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("charrnn: {m}")));
        if self.vocab != VOCAB {
            return fail("vocab must be 27 (A-Z and space)");
        }
        if self.embed_dim == 0 || self.hidden == 0 || self.lstm_layers == 0 || self.context_len == 0 {
            return fail("sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.padded_windows) || !(0.0..0.5).contains(&self.val_fraction) {
            return fail("padded_windows in [0, 1) and val_fraction in [0, 0.5) required");
        }
        Ok(())
    }

    /// `(layer, count)` for embedding, LSTM stack, layer norm and output.
    pub fn layer_param_counts(&self) -> [(&'static str, usize); 4] {
        [
            ("embedding", self.vocab * self.embed_dim),
            ("lstm", lstm_param_count(self.embed_dim, self.hidden, self.lstm_layers)),
            ("layernorm", 2 * self.hidden),
            ("linear", self.hidden * self.vocab + self.vocab),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().map(|(_, n)| n).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharRnn {
    pub config: CharRnnConfig,
    pub weights: ModelWeights,
}

fn lstm_names(layer: usize) -> [String; 4] {
    ["w_ih", "w_hh", "b_ih", "b_hh"].map(|s| format!("lstm.{layer}.{s}"))
}

/// One training window: `inputs`/`targets` of length `context_len`, with the
/// first `pad` positions being padding that carries no loss.
#[derive(Clone, Debug, PartialEq)]
struct Window {
    inputs: Vec<usize>,
    targets: Vec<usize>,
    pad: usize,
}

fn windows(text: &[usize], ctx: usize, padded_share: f64, rng: &mut SeededRng) -> Vec<Window> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + ctx < text.len() {
        out.push(Window {
            inputs: text[start..start + ctx].to_vec(),
            targets: text[start + 1..start + ctx + 1].to_vec(),
            pad: 0,
        });
        start += ctx;
    }
    let word_starts: Vec<usize> = (0..text.len().saturating_sub(1))
        .filter(|&p| text[p] != SPACE && (p == 0 || text[p - 1] == SPACE))
        .collect();
    if padded_share > 0.0 && !word_starts.is_empty() && ctx > 1 {
        let extra = ((out.len() as f64) * padded_share / (1.0 - padded_share)).round() as usize;
        for _ in 0..extra {
            let p = word_starts[rng.random_range(0..word_starts.len())];
            let keep = rng.random_range(1..ctx).min(text.len() - 1 - p);
            let pad = ctx - keep;
            let mut inputs = vec![SPACE; pad];
            inputs.extend_from_slice(&text[p..p + keep]);
            let mut targets = vec![SPACE; pad];
            targets.extend_from_slice(&text[p + 1..p + keep + 1]);
            out.push(Window { inputs, targets, pad });
        }
    }
    out
}

impl CharRnn {
    /// Embedding `N(0, 1)`; LSTM and output layer `U(-1/sqrt(fan), 1/sqrt(fan))`.
    pub fn init(config: CharRnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = derived_rng(&[seed, 0xC4A2]);
        let mut params = Vec::new();
        let mut add = |name: String, t: Tensor| params.push(NamedTensor { name, tensor: t });
        add("embedding.weight".into(), normal(&[c.vocab, c.embed_dim], 1.0, &mut rng));
        let k = 1.0 / (c.hidden as f64).sqrt();
        for layer in 0..c.lstm_layers {
            let input = if layer == 0 { c.embed_dim } else { c.hidden };
            let [wi, wh, bi, bh] = lstm_names(layer);
            add(wi, uniform(&[4 * c.hidden, input], k, &mut rng));
            add(wh, uniform(&[4 * c.hidden, c.hidden], k, &mut rng));
            add(bi, uniform(&[4 * c.hidden], k, &mut rng));
            add(bh, uniform(&[4 * c.hidden], k, &mut rng));
        }
        add("layernorm.gamma".into(), Tensor::full(&[c.hidden], 1.0));
        add("layernorm.beta".into(), Tensor::zeros(&[c.hidden]));
        add("output.weight".into(), uniform(&[c.vocab, c.hidden], k, &mut rng));
        add("output.bias".into(), uniform(&[c.vocab], k, &mut rng));
        Ok(CharRnn { config, weights: ModelWeights::new(params, vec![]) })
    }

    pub fn from_weights(config: CharRnnConfig, weights: ModelWeights) -> Result<Self> {
        let reference = CharRnn::init(config.clone(), 0)?;
        weights.check_layout(&reference.weights)?;
        Ok(CharRnn { config, weights })
    }

    fn record(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.weights
            .params
            .iter()
            .map(|p| if trainable { g.param(p.tensor.clone()) } else { g.constant(p.tensor.clone()) })
            .collect()
    }

    /// Hidden features `[B, T, hidden]` after the LSTM stack, layer norm and
    /// (training only) dropout.
    fn features(&self, g: &mut Graph, p: &[Var], idx: &[usize], b: usize, t: usize, rng: Option<&mut SeededRng>) -> Result<Var> {
        let mut h = g.embedding(p[0], idx, &[b, t])?;
        for layer in 0..self.config.lstm_layers {
            let o = 1 + 4 * layer;
            h = g.lstm_layer(h, p[o], p[o + 1], p[o + 2], p[o + 3])?;
        }
        let n = p.len();
        h = g.layer_norm(h, p[n - 4], p[n - 3])?;
        if let Some(rng) = rng {
            h = g.dropout(h, self.config.dropout, rng)?;
        }
        Ok(h)
    }

    fn output(&self, g: &mut Graph, p: &[Var], h: Var) -> Result<Var> {
        let n = p.len();
        g.linear(h, p[n - 2], Some(p[n - 1]))
    }

    /// Evaluation-mode logits `[B, T, 27]` for index batches `[B, T]`.
    pub fn sequence_logits(&self, batch: &[Vec<usize>]) -> Result<Tensor> {
        let b = batch.len();
        let t = batch.first().map_or(0, Vec::len);
        if b == 0 || t == 0 || batch.iter().any(|r| r.len() != t) {
            return Err(Error::shape("index batch must be a non-empty rectangle"));
        }
        let idx: Vec<usize> = batch.concat();
        let mut g = Graph::new();
        let p = self.record(&mut g, false);
        let h = self.features(&mut g, &p, &idx, b, t, None)?;
        let h = g.reshape(h, &[b * t, self.config.hidden])?;
        let out = self.output(&mut g, &p, h)?;
        g.value(out).clone().reshape(&[b, t, self.config.vocab])
    }

    /// Indices for `context` left-padded with spaces to `context_len`,
    /// keeping the most recent characters when it is longer.
    pub fn encode_context(&self, context: &str) -> Result<Vec<usize>> {
        let ctx = self.config.context_len;
        let chars: Vec<usize> = context.chars().map(symbol_index).collect::<Result<_>>()?;
        let tail = &chars[chars.len().saturating_sub(ctx)..];
        let mut out = vec![SPACE; ctx - tail.len()];
        out.extend_from_slice(tail);
        Ok(out)
    }

    /// Next-symbol distributions, one per context, each of length 27.
    pub fn next_distributions(&self, contexts: &[&str]) -> Result<Vec<Vec<f64>>> {
        if contexts.is_empty() {
            return Ok(vec![]);
        }
        let batch: Vec<Vec<usize>> = contexts.iter().map(|c| self.encode_context(c)).collect::<Result<_>>()?;
        let (b, t) = (batch.len(), self.config.context_len);
        let idx = batch.concat();
        let mut g = Graph::new();
        let p = self.record(&mut g, false);
        let h = self.features(&mut g, &p, &idx, b, t, None)?;
        let hd = self.config.hidden;
        let hv = g.value(h).data();
        let last: Vec<f32> = (0..b).flat_map(|n| hv[(n * t + t - 1) * hd..(n * t + t) * hd].to_vec()).collect();
        let last = g.constant(Tensor::new(&[b, hd], last)?);
        let logits = self.output(&mut g, &p, last)?;
        let probs = softmax(&g.value(logits).cast::<f64>());
        Ok(probs.rows().map(|r| r.to_vec()).collect())
    }

    pub fn next_distribution(&self, context: &str) -> Result<Vec<f64>> {
        Ok(self.next_distributions(&[context])?.remove(0))
    }

    fn window_loss(&self, g: &mut Graph, batch: &[&Window], rng: Option<&mut SeededRng>) -> Result<(Var, Vec<Var>, Vec<usize>, Var)> {
        let (b, t) = (batch.len(), self.config.context_len);
        let idx: Vec<usize> = batch.iter().flat_map(|w| w.inputs.iter().copied()).collect();
        let p = self.record(g, rng.is_some());
        let h = self.features(g, &p, &idx, b, t, rng)?;
        let h = g.reshape(h, &[b * t, self.config.hidden])?;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (n, w) in batch.iter().enumerate() {
            for j in w.pad..t {
                rows.push(n * t + j);
                targets.push(w.targets[j]);
            }
        }
        let picked = g.embedding(h, &rows, &[rows.len()])?;
        let logits = self.output(g, &p, picked)?;
        let probs = g.softmax(logits);
        let loss = g.cross_entropy(probs, &targets)?;
        Ok((loss, p, targets, logits))
    }

    fn step(&mut self, adam: &mut Adam, batch: &[&Window], lr: f64, seed: u64) -> Result<(f64, usize, usize)> {
        let mut g = Graph::new();
        let mut rng = derived_rng(&[seed]);
        let (l, vars, targets, logits) = self.window_loss(&mut g, batch, Some(&mut rng))?;
        let value = g.value(l).item() as f64;
        let hits = g.value(logits).rows().zip(&targets).filter(|(r, &y)| argmax(r) == y).count();
        if value.is_finite() {
            let mut grads = g.backward(l)?;
            let grads: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            drop(g);
            let mut tensors = self.weights.tensors();
            adam.step(&mut tensors, &grads, lr)?;
            self.weights.set_tensors(tensors);
        }
        Ok((value, hits, targets.len()))
    }

    /// Training-mode loss for explicit index windows (no padding), with the
    /// dropout mask drawn from `seed`.
    pub fn batch_loss(&self, inputs: &[Vec<usize>], targets: &[Vec<usize>], seed: u64) -> Result<f64> {
        let ws = self.explicit_windows(inputs, targets)?;
        let refs: Vec<&Window> = ws.iter().collect();
        let mut g = Graph::new();
        let (l, ..) = self.window_loss(&mut g, &refs, Some(&mut derived_rng(&[seed])))?;
        Ok(g.value(l).item() as f64)
    }

    /// One Adam step on explicit windows; returns the pre-step loss.
    pub fn train_step(&mut self, adam: &mut Adam, inputs: &[Vec<usize>], targets: &[Vec<usize>], lr: f64, seed: u64) -> Result<f64> {
        let ws = self.explicit_windows(inputs, targets)?;
        let refs: Vec<&Window> = ws.iter().collect();
        Ok(self.step(adam, &refs, lr, seed)?.0)
    }

    fn explicit_windows(&self, inputs: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Vec<Window>> {
        let t = self.config.context_len;
        if inputs.is_empty() || inputs.len() != targets.len() || inputs.iter().chain(targets).any(|r| r.len() != t) {
            return Err(Error::shape(format!("windows must be non-empty, paired and {t} long")));
        }
        Ok(inputs
            .iter()
            .zip(targets)
            .map(|(i, t)| Window { inputs: i.clone(), targets: t.clone(), pad: 0 })
            .collect())
    }

    fn evaluate(&self, windows: &[Window], batch: usize) -> Result<(f64, f64)> {
        let (mut loss, mut hits, mut count) = (0.0, 0usize, 0usize);
        for part in windows.chunks(batch) {
            let refs: Vec<&Window> = part.iter().collect();
            let mut g = Graph::new();
            let (l, _, targets, logits) = self.window_loss(&mut g, &refs, None)?;
            loss += g.value(l).item() as f64 * targets.len() as f64;
            hits += g.value(logits).rows().zip(&targets).filter(|(r, &y)| argmax(r) == y).count();
            count += targets.len();
        }
        Ok((loss / count as f64, hits as f64 / count as f64))
    }
}

/// Next-character training on a normalized corpus over the 27 symbols.
/// The corpus tail (`val_fraction`) is held out for the validation columns.
pub fn train_charrnn(cfg: &CharRnnConfig, corpus: &str, tc: &TrainConfig) -> Result<(CharRnn, History)> {
    cfg.validate()?;
    let text: Vec<usize> = corpus.chars().map(symbol_index).collect::<Result<_>>()?;
    let ctx = cfg.context_len;
    let split = ((text.len() as f64) * (1.0 - cfg.val_fraction)) as usize;
    let (train_text, val_text) = if cfg.val_fraction > 0.0 && text.len() - split > ctx {
        (&text[..split], &text[split..])
    } else {
        (&text[..], &text[..])
    };
    if train_text.len() <= ctx {
        return Err(Error::Corpus(format!(
            "corpus of {} symbols is shorter than the {ctx}-symbol context window plus one",
            train_text.len()
        )));
    }
    let train = windows(train_text, ctx, cfg.padded_windows, &mut derived_rng(&[tc.seed, 0x717]));
    let val = windows(val_text, ctx, cfg.padded_windows, &mut derived_rng(&[tc.seed, 0x7A1]));
    let mut model = CharRnn::init(cfg.clone(), tc.seed)?;
    let mut sched = LrSchedule::new(tc)?;
    let mut adam = Adam::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tc.epochs {
        let lr = sched.lr(epoch)?;
        order.shuffle(&mut derived_rng(&[tc.seed, 0x5AFF1E, epoch as u64]));
        let (mut loss_sum, mut hits, mut count) = (0.0, 0usize, 0usize);
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&Window> = idx.iter().map(|&i| &train[i]).collect();
            let seed = derive_seed(&[tc.seed, 0xD50, epoch as u64, bi as u64]);
            let (l, h, n) = model.step(&mut adam, &batch, lr, seed)?;
            check_finite(l, epoch + 1, "training")?;
            loss_sum += l * n as f64;
            hits += h;
            count += n;
        }
        let (val_loss, val_acc) = model.evaluate(&val, tc.batch_size)?;
        check_finite(val_loss, epoch + 1, "validation")?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / count as f64,
            train_acc: hits as f64 / count as f64,
            val_loss,
            val_acc,
            lr,
        });
        log::info!("charrnn epoch {}: train {:.4}, val {:.4}, lr {lr:.2e}", epoch + 1, loss_sum / count as f64, val_loss);
        sched.end_epoch(val_loss);
    }
    Ok((model, history))
}

//! Probability fusion of the segment classifier with the character model,
//! and the sequential word decoder built on it.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{target_to_letter, WordSample, LETTERS};
use crate::error::{Error, Result};
use crate::models::{CharRnn, Eegnet, SPACE, VOCAB};
use crate::numcore::rng::derived_rng;
use crate::Tensor;

/// Minimum retained mass before renormalizing a restricted distribution.
pub const MIN_MASS: f64 = 1e-12;

/// Segments per classifier call.
const CLASSIFY_CHUNK: usize = 64;

fn renormalize(mut p: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Degenerate(format!("{what}: entries must be finite and non-negative")));
    }
    let mass: f64 = p.iter().sum();
    if mass < MIN_MASS {
        return Err(Error::Degenerate(format!("{what}: only {mass:e} mass on letters")));
    }
    p.iter_mut().for_each(|v| *v /= mass);
    Ok(p)
}

/// First 26 classes of a 40-target distribution, renormalized.
pub fn restrict_to_letters(dist: &[f64]) -> Result<Vec<f64>> {
    if dist.len() < LETTERS {
        return Err(Error::shape(format!("need at least {LETTERS} classes, got {}", dist.len())));
    }
    renormalize(dist[..LETTERS].to_vec(), "classifier distribution")
}

/// Character-model distribution without the space symbol, renormalized.
pub fn restrict_charrnn(dist: &[f64]) -> Result<Vec<f64>> {
    if dist.len() != VOCAB {
        return Err(Error::shape(format!("need {VOCAB} symbols, got {}", dist.len())));
    }
    let letters: Vec<f64> = dist.iter().enumerate().filter(|&(i, _)| i != SPACE).map(|(_, &v)| v).collect();
    renormalize(letters, "character distribution")
}

/// `alpha * e + (1 - alpha) * c`.
pub fn fuse(e: &[f64], c: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if e.len() != c.len() {
        return Err(Error::shape(format!("fusing {} with {} classes", e.len(), c.len())));
    }
    Ok(e.iter().zip(c).map(|(&a, &b)| alpha * a + (1.0 - alpha) * b).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Anything producing a class distribution per `[C, T]` segment.
pub trait SegmentClassifier {
    fn classify(&self, segments: &[Tensor]) -> Result<Vec<Vec<f64>>>;
}

/// Anything producing a 27-symbol next-character distribution per context.
pub trait NextCharModel {
    fn next(&self, contexts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

impl SegmentClassifier for Eegnet {
    fn classify(&self, segments: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let (c, t) = (self.config.chans, self.config.samples);
        let mut out = Vec::with_capacity(segments.len());
        for part in segments.chunks(CLASSIFY_CHUNK) {
            let mut data = Vec::with_capacity(part.len() * c * t);
            for s in part {
                if s.shape() != [c, t] {
                    return Err(Error::shape(format!("segment {:?} does not match [{c}, {t}]", s.shape())));
                }
                data.extend_from_slice(s.data());
            }
            let probs = self.predict_proba(&Tensor::new(&[part.len(), 1, c, t], data)?)?;
            out.extend(probs.rows().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
        }
        Ok(out)
    }
}

impl NextCharModel for CharRnn {
    fn next(&self, contexts: &[&str]) -> Result<Vec<Vec<f64>>> {
        self.next_distributions(contexts)
    }
}

/// Perturbs another classifier's log-probabilities with Gaussian noise of
/// scale `sigma`. The noise is a function of the segment contents and
/// `seed`, so a segment is always degraded the same way.
pub struct NoisyClassifier<C> {
    pub inner: C,
    pub sigma: f64,
    pub seed: u64,
}

fn fingerprint(t: &Tensor) -> u64 {
    t.data()
        .iter()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, v| (h ^ v.to_bits() as u64).wrapping_mul(0x0100_0000_01B3))
}

impl<C: SegmentClassifier> SegmentClassifier for NoisyClassifier<C> {
    fn classify(&self, segments: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        use rand_distr::{Distribution, StandardNormal};
        let clean = self.inner.classify(segments)?;
        Ok(clean
            .into_iter()
            .zip(segments)
            .map(|(p, s)| {
                let mut rng = derived_rng(&[self.seed, fingerprint(s)]);
                let logits: Vec<f64> = p
                    .iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v.max(MIN_MASS).ln() + self.sigma * z
                    })
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha: f64,
    /// Condition the character model on the true prefix instead of the
    /// decoded one. For analysis only.
    pub teacher_forcing: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            teacher_forcing: false,
        }
    }
}

/// One decoded position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub eegnet: Vec<f64>,
    /// `None` at position 0, where the classifier decides alone.
    pub charrnn: Option<Vec<f64>>,
    pub fused: Vec<f64>,
    pub chosen: char,
    pub truth: char,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub word: String,
    pub subject: u32,
    pub alpha: f64,
    pub teacher_forcing: bool,
    pub steps: Vec<StepRecord>,
}

impl DecodeTrace {
    pub fn decoded(&self) -> String {
        self.steps.iter().map(|s| s.chosen).collect()
    }

    pub fn correct(&self) -> usize {
        self.steps.iter().filter(|s| s.chosen == s.truth).count()
    }

    /// One line per position: `word subject pos truth chosen p_eegnet p_charrnn p_fused`,
    /// where the probabilities are those of the chosen letter.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (k, s) in self.steps.iter().enumerate() {
            let i = (s.chosen as u8 - b'A') as usize;
            let c = s.charrnn.as_ref().map_or("-".to_string(), |c| format!("{:.6}", c[i]));
            let _ = writeln!(
                out,
                "word={} subject={} alpha={} pos={k} truth={} chosen={} p_eegnet={:.6} p_charrnn={c} p_fused={:.6}",
                self.word, self.subject, self.alpha, s.truth, s.chosen, s.eegnet[i], s.fused[i]
            );
        }
        out
    }
}

/// Restricted classifier distributions for every letter of every word,
/// computed in one pass so they can be reused across alpha values.
pub fn classify_words(words: &[WordSample], clf: &impl SegmentClassifier) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut segs = Vec::new();
    for w in words {
        w.check()?;
        for k in 0..w.len() {
            segs.push(w.segment(k)?);
        }
    }
    let mut dists = clf.classify(&segs)?.into_iter();
    words
        .iter()
        .map(|w| (0..w.len()).map(|_| restrict_to_letters(&dists.next().expect("one per segment"))).collect())
        .collect()
}

/// Memoizes character-model queries by context.
pub struct LmCache<'a, M: NextCharModel> {
    model: &'a M,
    memo: HashMap<String, Vec<f64>>,
}

impl<'a, M: NextCharModel> LmCache<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self {
            model,
            memo: HashMap::new(),
        }
    }

    /// Restricted distributions for `contexts`, querying only unseen ones.
    pub fn get(&mut self, contexts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut missing: Vec<&str> = contexts.iter().filter(|c| !self.memo.contains_key(*c)).map(String::as_str).collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let dists = self.model.next(&missing)?;
            for (c, d) in missing.iter().zip(dists) {
                self.memo.insert(c.to_string(), restrict_charrnn(&d)?);
            }
        }
        Ok(contexts.iter().map(|c| self.memo[c].clone()).collect())
    }
}

/// Decodes many words at once from precomputed classifier distributions,
/// batching character-model queries by position.
pub fn decode_classified<M: NextCharModel>(
    words: &[WordSample],
    eeg: &[Vec<Vec<f64>>],
    lm: &mut LmCache<'_, M>,
    cfg: &FusionConfig,
) -> Result<Vec<DecodeTrace>> {
    check_alpha(cfg.alpha)?;
    if words.len() != eeg.len() {
        return Err(Error::shape("one classifier row set per word required"));
    }
    let mut traces: Vec<DecodeTrace> = words
        .iter()
        .map(|w| DecodeTrace {
            word: w.word.clone(),
            subject: w.subject,
            alpha: cfg.alpha,
            teacher_forcing: cfg.teacher_forcing,
            steps: Vec::with_capacity(w.len()),
        })
        .collect();
    let longest = words.iter().map(WordSample::len).max().unwrap_or(0);
    for k in 0..longest {
        let active: Vec<usize> = (0..words.len()).filter(|&i| words[i].len() > k).collect();
        let lm_dists = if k == 0 {
            vec![None; active.len()]
        } else {
            let contexts: Vec<String> = active
                .iter()
                .map(|&i| {
                    if cfg.teacher_forcing {
                        words[i].word[..k].to_string()
                    } else {
                        traces[i].decoded()
                    }
                })
                .collect();
            lm.get(&contexts)?.into_iter().map(Some).collect()
        };
        for (&i, c) in active.iter().zip(lm_dists) {
            let e = &eeg[i][k];
            if e.len() != LETTERS {
                return Err(Error::shape(format!("classifier rows must have {LETTERS} letters")));
            }
            let fused = match &c {
                Some(c) => fuse(e, c, cfg.alpha)?,
                None => e.clone(),
            };
            let chosen = target_to_letter(argmax(&fused))?;
            let truth = words[i].word.as_bytes()[k] as char;
            traces[i].steps.push(StepRecord {
                eegnet: e.clone(),
                charrnn: c,
                fused,
                chosen,
                truth,
            });
        }
    }
    Ok(traces)
}

/// Decodes one stitched word: the classifier alone picks the first letter,
/// then each later letter fuses the classifier with the character model
/// conditioned on the letters decoded so far.
pub fn decode_word(
    sample: &WordSample,
    clf: &impl SegmentClassifier,
    lm: &impl NextCharModel,
    cfg: &FusionConfig,
) -> Result<DecodeTrace> {
    if sample.is_empty() {
        return Err(Error::param("cannot decode an empty word"));
    }
    let words = std::slice::from_ref(sample);
    let eeg = classify_words(words, clf)?;
    Ok(decode_classified(words, &eeg, &mut LmCache::new(lm), cfg)?.remove(0))
}

/// Correct letters over total letters.
pub fn per_char_accuracy(traces: &[DecodeTrace]) -> Result<f64> {
    let total: usize = traces.iter().map(|t| t.steps.len()).sum();
    if total == 0 {
        return Err(Error::param("no decoded characters to score"));
    }
    Ok(traces.iter().map(DecodeTrace::correct).sum::<usize>() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub dataset: String,
    pub alpha: f64,
    pub accuracy: f64,
    pub n_chars: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn dataset(&self, name: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.dataset == name).collect()
    }

    pub fn accuracy(&self, name: &str, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.dataset == name && r.alpha == alpha)
            .map(|r| r.accuracy)
    }

    /// Row with the highest accuracy for `name`; ties keep the larger alpha.
    pub fn peak(&self, name: &str) -> Option<&SweepRow> {
        self.dataset(name)
            .into_iter()
            .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.alpha.total_cmp(&b.alpha)))
    }
}

/// A named set of stitched words.
pub struct WordDataset<'a> {
    pub name: String,
    pub words: &'a [WordSample],
}

/// Per-character accuracy for every `(dataset, alpha)` pair. Classifier
/// outputs and character-model queries are shared across alphas.
pub fn alpha_sweep(
    datasets: &[WordDataset<'_>],
    clf: &impl SegmentClassifier,
    lm: &impl NextCharModel,
    alphas: &[f64],
    teacher_forcing: bool,
) -> Result<SweepTable> {
    for &a in alphas {
        check_alpha(a)?;
    }
    let mut cache = LmCache::new(lm);
    let mut rows = Vec::new();
    for ds in datasets {
        let eeg = classify_words(ds.words, clf)?;
        for &alpha in alphas {
            let cfg = FusionConfig { alpha, teacher_forcing };
            let traces = decode_classified(ds.words, &eeg, &mut cache, &cfg)?;
            rows.push(SweepRow {
                dataset: ds.name.clone(),
                alpha,
                accuracy: per_char_accuracy(&traces)?,
                n_chars: traces.iter().map(|t| t.steps.len()).sum(),
            });
        }
    }
    Ok(SweepTable { rows })
}

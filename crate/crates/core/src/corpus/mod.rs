//! Dataset partitioning, word stitching, LM text normalization and word lists.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::read_text;
use crate::numcore::rng::derived_rng;
use crate::sigproc::SegmentSample;
use crate::Tensor;

/// Letters of the speller alphabet, in target order.
pub const LETTERS: usize = 26;

/// Plain-text corpus bundled for language-model training.
pub const BUNDLED_CORPUS: &str = include_str!("../../resources/corpus.txt");

const TOP100_COMMON: &str = include_str!("../../resources/top100_common.txt");
const TOP100_LONG: &str = include_str!("../../resources/top100_long.txt");
const TOP1000_COMMON: &str = include_str!("../../resources/top1000_common.txt");

/// Names of the built-in word lists.
pub const BUILTIN_LISTS: [&str; 3] = ["top100_common", "top100_long", "top1000_common"];

/// Minimum word length of the `top100_long` list.
pub const LONG_WORD_MIN: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub hidden_subjects: Vec<u32>,
    /// train : val : visible test
    pub ratio: [u32; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            hidden_subjects: vec![1, 9],
            ratio: [8, 1, 1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratio.contains(&0) {
            return Err(Error::Config(format!("split ratio parts must be positive, got {:?}", self.ratio)));
        }
        Ok(())
    }

    /// `(train, val)` sizes for a pool of `n`; the visible test set gets the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize) {
        let total: u64 = self.ratio.iter().map(|&r| r as u64).sum();
        let part = |r: u32| ((n as u64 * r as u64 + total / 2) / total) as usize;
        let train = part(self.ratio[0]).min(n);
        let val = part(self.ratio[1]).min(n - train);
        (train, val)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Partition {
    pub train: Vec<SegmentSample>,
    pub val: Vec<SegmentSample>,
    pub test_visible: Vec<SegmentSample>,
    pub test_hidden: Vec<SegmentSample>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test_visible.len() + self.test_hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hidden subjects go to `test_hidden` whole; the rest is shuffled and split
/// by count.
pub fn partition(segments: Vec<SegmentSample>, spec: &SplitSpec) -> Result<Partition> {
    spec.validate()?;
    for &s in &spec.hidden_subjects {
        if !segments.iter().any(|seg| seg.subject == s) {
            log::warn!("hidden subject {s} has no segments; continuing without it");
        }
    }
    let (mut hidden, mut pool): (Vec<_>, Vec<_>) = segments
        .into_iter()
        .partition(|s| spec.hidden_subjects.contains(&s.subject));
    pool.shuffle(&mut derived_rng(&[spec.seed, 0x5B117]));
    hidden.sort_by_key(|s| (s.subject, s.block, s.label));
    let (n_train, n_val) = spec.sizes(pool.len());
    let test_visible = pool.split_off(n_train + n_val);
    let val = pool.split_off(n_train);
    Ok(Partition {
        train: pool,
        val,
        test_visible,
        test_hidden: hidden,
    })
}

pub fn letter_to_target(ch: char) -> Result<usize> {
    if ch.is_ascii_uppercase() {
        Ok((ch as u8 - b'A') as usize)
    } else {
        Err(Error::param(format!("'{ch}' is not a speller letter A-Z")))
    }
}

pub fn target_to_letter(t: usize) -> Result<char> {
    if t < LETTERS {
        Ok((b'A' + t as u8) as char)
    } else {
        Err(Error::param(format!("target {t} is not a letter (0-25)")))
    }
}

/// Where one stitched letter came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LetterSource {
    pub target: usize,
    pub subject: u32,
    pub block: u32,
}

/// A word-length pseudo-recording built from single-letter segments.
#[derive(Clone, Debug)]
pub struct WordSample {
    pub word: String,
    pub subject: u32,
    /// `[channels, segment_len * word.len()]`
    pub signal: Tensor,
    pub segment_len: usize,
    pub provenance: Vec<LetterSource>,
}

impl WordSample {
    /// Wraps a loaded signal; provenance is rebuilt from the word alone.
    pub fn from_signal(word: &str, subject: u32, signal: Tensor, segment_len: usize) -> Result<Self> {
        let provenance = word
            .chars()
            .map(|c| {
                Ok(LetterSource {
                    target: letter_to_target(c)?,
                    subject,
                    block: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sample = Self {
            word: word.to_string(),
            subject,
            signal,
            segment_len,
            provenance,
        };
        sample.check()?;
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.word.chars().count();
        if self.signal.rank() != 2 || self.segment_len == 0 || self.signal.dim(1) != self.segment_len * n {
            return Err(Error::shape(format!(
                "word '{}' of {n} letters needs [C, {}] signal, got {:?}",
                self.word,
                self.segment_len * n,
                self.signal.shape()
            )));
        }
        Ok(())
    }

    /// The `k`-th letter's `[C, segment_len]` slice.
    pub fn segment(&self, k: usize) -> Result<Tensor> {
        self.check()?;
        if k >= self.len() {
            return Err(Error::param(format!("letter {k} outside word '{}'", self.word)));
        }
        let (c, w, s) = (self.signal.dim(0), self.signal.dim(1), self.segment_len);
        let mut out = Vec::with_capacity(c * s);
        for row in self.signal.data().chunks(w) {
            out.extend_from_slice(&row[k * s..(k + 1) * s]);
        }
        Tensor::new(&[c, s], out)
    }
}

/// Segments indexed by `(subject, target)` for stitching.
pub struct TrialPool<'a> {
    segments: &'a [SegmentSample],
    index: BTreeMap<(u32, usize), Vec<usize>>,
}

impl<'a> TrialPool<'a> {
    pub fn new(segments: &'a [SegmentSample]) -> Self {
        let mut index: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            index.entry((s.subject, s.label)).or_default().push(i);
        }
        Self { segments, index }
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.index.keys().map(|&(s, _)| s).collect();
        s.dedup();
        s
    }

    pub fn candidates(&self, subject: u32, target: usize) -> &[usize] {
        self.index.get(&(subject, target)).map_or(&[], Vec::as_slice)
    }

    /// True when the subject has at least one segment for every letter of `word`.
    pub fn covers(&self, subject: u32, word: &str) -> bool {
        word.chars()
            .all(|c| letter_to_target(c).is_ok_and(|t| !self.candidates(subject, t).is_empty()))
    }
}

/// Concatenates one uniformly chosen segment per letter, all from `subject`.
pub fn stitch_word(word: &str, subject: u32, pool: &TrialPool<'_>, rng: &mut impl Rng) -> Result<WordSample> {
    if word.is_empty() {
        return Err(Error::param("cannot stitch an empty word"));
    }
    let mut picks = Vec::with_capacity(word.len());
    for ch in word.chars() {
        let t = letter_to_target(ch)?;
        let &i = pool
            .candidates(subject, t)
            .choose(rng)
            .ok_or(Error::MissingLetter { letter: ch, subject })?;
        picks.push(&pool.segments[i]);
    }
    let first = &picks[0].data;
    let (c, s) = (first.dim(0), first.dim(1));
    if picks.iter().any(|p| p.data.shape() != [c, s]) {
        return Err(Error::shape("stitched segments differ in shape"));
    }
    let width = s * picks.len();
    let mut data = vec![0.0f32; c * width];
    for (k, p) in picks.iter().enumerate() {
        for (ch, row) in p.data.data().chunks(s).enumerate() {
            data[ch * width + k * s..ch * width + (k + 1) * s].copy_from_slice(row);
        }
    }
    Ok(WordSample {
        word: word.to_string(),
        subject,
        signal: Tensor::new(&[c, width], data)?,
        segment_len: s,
        provenance: picks
            .iter()
            .map(|p| LetterSource {
                target: p.label,
                subject: p.subject,
                block: p.block,
            })
            .collect(),
    })
}

/// Stitches every word of `list`, cycling through the pool's subjects that
/// cover the word. Word `i` draws from `derived_rng([seed, i])`.
pub fn stitch_words(list: &WordList, pool: &TrialPool<'_>, seed: u64) -> Result<Vec<WordSample>> {
    let subjects = pool.subjects();
    if subjects.is_empty() {
        return Err(Error::Corpus("no segments to stitch from".into()));
    }
    list.words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let start = i % subjects.len();
            let subject = (0..subjects.len())
                .map(|k| subjects[(start + k) % subjects.len()])
                .find(|&s| pool.covers(s, w))
                .unwrap_or(subjects[start]);
            stitch_word(w, subject, pool, &mut derived_rng(&[seed, i as u64]))
        })
        .collect()
}

/// Uppercases letters and collapses every run of anything else to one space.
pub fn normalize_corpus(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut gap = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphabetic() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(ch.to_ascii_uppercase());
        } else {
            gap = true;
        }
    }
    if out.is_empty() {
        return Err(Error::Corpus("text contains no letters".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordList {
    pub name: String,
    pub words: Vec<String>,
}

impl WordList {
    /// One word per line; blank lines are skipped, case is folded.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() {
                continue;
            }
            let w = w.to_ascii_uppercase();
            if !w.bytes().all(|b| b.is_ascii_uppercase()) {
                return Err(Error::Corpus(format!("{name}: line {}: '{line}' is not A-Z only", n + 1)));
            }
            words.push(w);
        }
        if words.is_empty() {
            return Err(Error::Corpus(format!("{name}: no words")));
        }
        Ok(Self {
            name: name.to_string(),
            words,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("words");
        Self::parse(name, &read_text(path)?)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "top100_common" => TOP100_COMMON,
            "top100_long" => TOP100_LONG,
            "top1000_common" => TOP1000_COMMON,
            _ => return Err(Error::Config(format!("unknown word list '{name}'"))),
        };
        let list = Self::parse(name, text)?;
        if name == "top100_long" {
            if let Some(w) = list.words.iter().find(|w| w.len() < LONG_WORD_MIN) {
                return Err(Error::Corpus(format!("{name}: '{w}' is shorter than {LONG_WORD_MIN}")));
            }
        }
        Ok(list)
    }

    pub fn total_letters(&self) -> usize {
        self.words.iter().map(String::len).sum()
    }
}

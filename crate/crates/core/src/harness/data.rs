//! Generating, writing and reading segment and word datasets.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{WordList, WordSample};
use crate::error::{Error, Result};
use crate::io::eft;
use crate::io::manifest::{self, SegmentEntry, WordEntry};
use crate::numcore::rng::{derive_seed, rng_from};
use crate::sigproc::{synth_trial, PreprocessConfig, Preprocessor, SegmentSample, SubjectProfile, SynthConfig};

pub const SEGMENT_MANIFEST: &str = "segments.manifest";

/// Synthesizes and preprocesses `subjects x targets x blocks` trials.
/// Blocks are numbered from 1. Output order is subject, target, block.
pub fn synth_segments(
    synth: &SynthConfig,
    pre: &PreprocessConfig,
    subjects: &[u32],
    blocks: u32,
    seed: u64,
) -> Result<Vec<SegmentSample>> {
    synth.validate()?;
    let pre = Preprocessor::new(pre.clone())?;
    let per_subject: Vec<Result<Vec<SegmentSample>>> = subjects
        .par_iter()
        .map(|&s| {
            let profile = SubjectProfile::generate(synth, s, seed);
            let mut out = Vec::with_capacity(synth.targets * blocks as usize);
            for target in 0..synth.targets {
                for block in 1..=blocks {
                    let mut rng = rng_from(derive_seed(&[seed, s as u64, target as u64, block as u64]));
                    let trial = synth_trial(synth, &profile, target, block, &mut rng)?;
                    out.push(pre.process(&trial)?);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_subject {
        all.extend(r?);
    }
    Ok(all)
}

fn segment_path(s: &SegmentSample) -> PathBuf {
    PathBuf::from(format!("segments/s{:02}/t{:02}_b{:02}.eft", s.subject, s.label, s.block))
}

/// Writes one EFT1 file per segment plus the manifest under `dir`.
pub fn write_segments(dir: &Path, segments: &[SegmentSample]) -> Result<()> {
    let entries: Vec<SegmentEntry> = segments
        .iter()
        .map(|s| SegmentEntry {
            subject: s.subject,
            target: s.label,
            block: s.block,
            path: segment_path(s),
        })
        .collect();
    segments
        .par_iter()
        .zip(&entries)
        .try_for_each(|(s, e)| eft::write(&dir.join(&e.path), &s.data))?;
    manifest::write_text(&dir.join(SEGMENT_MANIFEST), &manifest::format_segments(&entries))
}

pub fn read_segments(dir: &Path) -> Result<Vec<SegmentSample>> {
    let entries = manifest::parse_segments(&manifest::read_text(&dir.join(SEGMENT_MANIFEST))?)?;
    if entries.is_empty() {
        return Err(Error::Format(format!("{}: empty manifest", dir.display())));
    }
    entries
        .par_iter()
        .map(|e| {
            let data = eft::read(&dir.join(&e.path))?;
            if data.rank() != 2 {
                return Err(Error::Format(format!("{}: segment must be rank 2", e.path.display())));
            }
            Ok(SegmentSample {
                data,
                label: e.target,
                subject: e.subject,
                block: e.block,
                flat_channel: false,
            })
        })
        .collect()
}

/// Resolves a list name: a built-in name or a path to a word file.
pub fn word_list(spec: &str) -> Result<WordList> {
    if crate::corpus::BUILTIN_LISTS.contains(&spec) {
        WordList::builtin(spec)
    } else {
        WordList::load(Path::new(spec))
    }
}

pub fn word_set_name(pool: &str, list: &WordList) -> String {
    format!("{pool}_{}", list.name)
}

/// Writes `<name>.manifest` and one signal file per word under `dir/<name>/`.
pub fn write_words(dir: &Path, name: &str, words: &[WordSample]) -> Result<()> {
    let entries: Vec<WordEntry> = words
        .iter()
        .enumerate()
        .map(|(i, w)| WordEntry {
            word: w.word.clone(),
            subject: w.subject,
            path: PathBuf::from(format!("{name}/{i:04}_{}.eft", w.word)),
        })
        .collect();
    words
        .par_iter()
        .zip(&entries)
        .try_for_each(|(w, e)| eft::write(&dir.join(&e.path), &w.signal))?;
    manifest::write_text(&dir.join(format!("{name}.manifest")), &manifest::format_words(&entries))
}

pub fn read_words(dir: &Path, name: &str, segment_len: usize) -> Result<Vec<WordSample>> {
    let entries = manifest::parse_words(&manifest::read_text(&dir.join(format!("{name}.manifest")))?)?;
    entries
        .par_iter()
        .map(|e| WordSample::from_signal(&e.word, e.subject, eft::read(&dir.join(&e.path))?, segment_len))
        .collect()
}

//! Commands behind the `speller` CLI and the reports they write.
//!
//! Every command writes `config.toml` into its output directory; passing it
//! back through `--config` reproduces the run's files byte for byte.

pub mod config;
pub mod data;
pub mod report;

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{normalize_corpus, partition, stitch_words, TrialPool, BUNDLED_CORPUS};
use crate::error::{Error, Result};
use crate::fusion::{alpha_sweep, classify_words, decode_classified, LmCache, NoisyClassifier, SegmentClassifier, WordDataset};
use crate::fusion::{FusionConfig, SweepTable};
use crate::io::manifest::{read_text, write_text};
use crate::models::{train_charrnn, train_eegnet, CharRnn, CharRnnConfig, Eegnet, EegnetConfig, History, ModelWeights};
use crate::numcore::rng::derive_seed;
use crate::sigproc::SegmentSample;

pub use config::{Pool, RunConfig, SeedMode, SortKey};
pub use report::{AblationRow, AblationTable};

pub const CONFIG_ECHO: &str = "config.toml";

/// The six CLI commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    TrainEegnet,
    TrainCharrnn,
    Ablate,
    StitchWords,
    FuseEval,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Synth,
        Command::TrainEegnet,
        Command::TrainCharrnn,
        Command::Ablate,
        Command::StitchWords,
        Command::FuseEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainEegnet => "train-eegnet",
            Command::TrainCharrnn => "train-charrnn",
            Command::Ablate => "ablate",
            Command::StitchWords => "stitch-words",
            Command::FuseEval => "fuse-eval",
        }
    }

    pub fn run(self, cfg: &RunConfig, out: &Path) -> Result<()> {
        match self {
            Command::Synth => cmd_synth(cfg, out),
            Command::TrainEegnet => cmd_train_eegnet(cfg, out).map(drop),
            Command::TrainCharrnn => cmd_train_charrnn(cfg, out).map(drop),
            Command::Ablate => cmd_ablate(cfg, out).map(drop),
            Command::StitchWords => cmd_stitch_words(cfg, out),
            Command::FuseEval => cmd_fuse_eval(cfg, out).map(drop),
        }
    }
}

/// Runs `cmd` on a rayon pool of `threads` workers (0 = rayon's default).
pub fn run_with_threads(cmd: Command, cfg: &RunConfig, out: &Path, threads: usize) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| cmd.run(cfg, out))
}

fn echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join(CONFIG_ECHO), &cfg.echo()?)
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let segs = data::synth_segments(&cfg.synth, &cfg.preprocess, &cfg.data.subjects, cfg.data.blocks, cfg.seed)?;
    let flat = segs.iter().filter(|s| s.flat_channel).count();
    if flat > 0 {
        log::warn!("{flat} segments had a zero-variance channel");
    }
    data::write_segments(out, &segs)?;
    log::info!("wrote {} segments to {}", segs.len(), out.display());
    echo(cfg, out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub set: String,
    pub loss: f64,
    pub accuracy: f64,
    pub n: usize,
}

fn evaluate_sets(model: &Eegnet, sets: &[(&str, &[SegmentSample])], cfg: &RunConfig) -> Result<Vec<EvalRecord>> {
    let loss = cfg.eegnet_train().loss;
    sets.iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(name, s)| {
            let (l, a) = model.evaluate(s, loss)?;
            Ok(EvalRecord {
                set: name.to_string(),
                loss: l,
                accuracy: a,
                n: s.len(),
            })
        })
        .collect()
}

pub struct TrainedEegnet {
    pub model: Eegnet,
    pub history: History,
    pub metrics: Vec<EvalRecord>,
}

pub fn cmd_train_eegnet(cfg: &RunConfig, out: &Path) -> Result<TrainedEegnet> {
    cfg.validate()?;
    let p = partition(data::read_segments(&cfg.data.dir)?, &cfg.split_spec())?;
    let (model, history) = train_eegnet(&cfg.eegnet.model, &p.train, &p.val, &cfg.eegnet_train(), &cfg.eegnet.augment)?;
    let metrics = evaluate_sets(
        &model,
        &[("val", &p.val), ("test_visible", &p.test_visible), ("test_hidden", &p.test_hidden)],
        cfg,
    )?;
    model.weights.save(&out.join("eegnet"), "eegnet", &model.config)?;
    history.write_csv(&out.join("history.csv"))?;
    write_text(&out.join("metrics.csv"), &csv_string(&metrics)?)?;
    echo(cfg, out)?;
    Ok(TrainedEegnet { model, history, metrics })
}

fn lm_corpus(cfg: &RunConfig) -> Result<String> {
    match &cfg.charrnn.corpus {
        Some(p) => normalize_corpus(&read_text(p)?),
        None => normalize_corpus(BUNDLED_CORPUS),
    }
}

pub fn cmd_train_charrnn(cfg: &RunConfig, out: &Path) -> Result<(CharRnn, History)> {
    cfg.validate()?;
    let text = lm_corpus(cfg)?;
    let (model, history) = train_charrnn(&cfg.charrnn.model, &text, &cfg.charrnn_train())?;
    model.weights.save(&out.join("charrnn"), "charrnn", &model.config)?;
    history.write_csv(&out.join("history.csv"))?;
    echo(cfg, out)?;
    Ok((model, history))
}

/// Trains the baseline plus every configured row. A failing row is
/// recorded with its error and the others carry on.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationTable> {
    cfg.validate()?;
    let p = partition(data::read_segments(&cfg.data.dir)?, &cfg.split_spec())?;
    let base_tc = cfg.eegnet_train();
    let mut specs = vec![config::AblationRowSpec {
        label: Some("Baseline".into()),
        augment: Vec::new(),
        epochs: Some(cfg.ablation.baseline_epochs.unwrap_or(base_tc.epochs)),
    }];
    specs.extend(cfg.ablation.rows.iter().cloned());
    let results: Vec<(AblationRow, Option<History>)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let seed = match cfg.ablation.seed_mode {
                SeedMode::Paired => cfg.seed,
                SeedMode::PerRow => derive_seed(&[cfg.seed, i as u64]),
            };
            let tc = crate::numcore::TrainConfig {
                epochs: spec.epochs.unwrap_or(base_tc.epochs),
                seed,
                ..base_tc.clone()
            };
            let run = || -> Result<(AblationRow, History)> {
                let (model, history) = train_eegnet(&cfg.eegnet.model, &p.train, &p.val, &tc, &spec.augment)?;
                let last = history.last().ok_or_else(|| Error::Config("row trains for zero epochs".into()))?;
                let acc = |s: &[SegmentSample]| -> Result<Option<f64>> {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        Ok(Some(model.evaluate(s, tc.loss)?.1))
                    }
                };
                Ok((
                    AblationRow {
                        row: i,
                        label: spec.display_label(),
                        epochs: tc.epochs,
                        train_acc: Some(last.train_acc),
                        val_acc: Some(last.val_acc),
                        val_loss: Some(last.val_loss),
                        test_acc_1: acc(&p.test_visible)?,
                        test_acc_2: acc(&p.test_hidden)?,
                        status: "ok".into(),
                    },
                    history,
                ))
            };
            match run() {
                Ok((row, h)) => (row, Some(h)),
                Err(e) => {
                    log::error!("ablation row {i} ({}) failed: {e}", spec.display_label());
                    (AblationRow::failed(i, spec.display_label(), tc.epochs, &e), None)
                }
            }
        })
        .collect();
    let mut table = AblationTable {
        rows: results.iter().map(|(r, _)| r.clone()).collect(),
    };
    table.sort(cfg.ablation.sort);
    for (row, h) in &results {
        if let Some(h) = h {
            h.write_csv(&out.join(format!("histories/row_{:02}.csv", row.row)))?;
        }
    }
    write_text(&out.join("ablation.csv"), &table.to_csv()?)?;
    echo(cfg, out)?;
    Ok(table)
}

/// Stitches every configured word list for every pool.
pub fn cmd_stitch_words(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let p = partition(data::read_segments(&cfg.data.dir)?, &cfg.split_spec())?;
    let everything: Vec<SegmentSample> = p
        .train
        .iter()
        .chain(&p.val)
        .chain(&p.test_visible)
        .chain(&p.test_hidden)
        .cloned()
        .collect();
    for pool in &cfg.words.pools {
        let segs: &[SegmentSample] = match pool {
            Pool::All => &everything,
            Pool::Hidden => &p.test_hidden,
        };
        if segs.is_empty() {
            return Err(Error::Corpus(format!("pool '{}' has no segments", pool.name())));
        }
        let trials = TrialPool::new(segs);
        for (li, spec) in cfg.words.lists.iter().enumerate() {
            let list = data::word_list(spec)?;
            let name = data::word_set_name(pool.name(), &list);
            let words = stitch_words(&list, &trials, derive_seed(&[cfg.seed, li as u64]))?;
            data::write_words(out, &name, &words)?;
            log::info!("stitched {} words into {name}", words.len());
        }
    }
    echo(cfg, out)
}

pub struct FuseEvalOutput {
    pub table: SweepTable,
    pub summary: String,
}

fn load_eegnet(stem: &Path) -> Result<Eegnet> {
    let (w, c) = ModelWeights::load::<EegnetConfig>(stem, "eegnet")?;
    Eegnet::from_weights(c, w)
}

fn load_charrnn(stem: &Path) -> Result<CharRnn> {
    let (w, c) = ModelWeights::load::<CharRnnConfig>(stem, "charrnn")?;
    CharRnn::from_weights(c, w)
}

pub fn cmd_fuse_eval(cfg: &RunConfig, out: &Path) -> Result<FuseEvalOutput> {
    cfg.validate()?;
    let eeg = load_eegnet(&cfg.eegnet.weights)?;
    let lm = load_charrnn(&cfg.charrnn.weights)?;
    let mut sets = Vec::new();
    for pool in &cfg.words.pools {
        for spec in &cfg.words.lists {
            let list = data::word_list(spec)?;
            let name = data::word_set_name(pool.name(), &list);
            sets.push((name.clone(), data::read_words(&cfg.words.dir, &name, eeg.config.samples)?));
        }
    }
    let datasets: Vec<WordDataset<'_>> = sets
        .iter()
        .map(|(n, w)| WordDataset {
            name: n.clone(),
            words: w,
        })
        .collect();
    let f = &cfg.fusion;
    let result = if f.logit_noise > 0.0 {
        let clf = NoisyClassifier {
            inner: eeg,
            sigma: f.logit_noise,
            seed: cfg.seed,
        };
        fuse_outputs(&datasets, &clf, &lm, cfg, out)
    } else {
        fuse_outputs(&datasets, &eeg, &lm, cfg, out)
    }?;
    echo(cfg, out)?;
    Ok(result)
}

fn fuse_outputs(
    datasets: &[WordDataset<'_>],
    clf: &impl SegmentClassifier,
    lm: &CharRnn,
    cfg: &RunConfig,
    out: &Path,
) -> Result<FuseEvalOutput> {
    let f = &cfg.fusion;
    let table = alpha_sweep(datasets, clf, lm, &f.alphas, f.teacher_forcing)?;
    let fc = FusionConfig {
        alpha: f.trace_alpha,
        teacher_forcing: f.teacher_forcing,
    };
    let mut cache = LmCache::new(lm);
    for ds in datasets {
        let eeg = classify_words(ds.words, clf)?;
        let traces = decode_classified(ds.words, &eeg, &mut cache, &fc)?;
        let text: String = traces.iter().map(|t| t.to_lines()).collect();
        write_text(&out.join(format!("traces/{}.txt", ds.name)), &text)?;
    }
    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    let summary = report::sweep_summary(&table, &names);
    write_text(&out.join("alpha_sweep.csv"), &table.to_csv()?)?;
    write_text(&out.join("alpha_sweep.gp"), &report::gnuplot_script("alpha_sweep.csv", &names))?;
    write_text(&out.join("summary.txt"), &summary)?;
    Ok(FuseEvalOutput { table, summary })
}

#[cfg(test)]
mod tests;

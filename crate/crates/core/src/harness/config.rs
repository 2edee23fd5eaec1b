//! Run configuration: one TOML document shared by every command.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! dir = "runs/synth"        # input of train-eegnet, ablate, stitch-words
//! subjects = [1, 2, 3, 4, 5, 6, 7, 8]
//! blocks = 6
//!
//! [synth]                   # SynthConfig fields
//! snr_range = [0.5, 0.9]
//!
//! [preprocess]              # PreprocessConfig fields
//!
//! [split]
//! hidden_subjects = [1, 9]
//! ratio = [8, 1, 1]
//!
//! [eegnet]
//! weights = "runs/train-eegnet/eegnet"
//! [eegnet.model]            # EegnetConfig fields
//! [eegnet.train]            # any of batch_size, learning_rate, epochs, scheduler, loss
//! epochs = 20
//! [[eegnet.augment]]
//! kind = "time_mask"
//! max_width = 25
//! max_count = 2
//!
//! [charrnn]
//! weights = "runs/train-charrnn/charrnn"
//! corpus = "text.txt"       # omit for the bundled corpus
//!
//! [ablation]
//! sort = "config"           # or "val_acc", "test_acc_1"
//! [[ablation.rows]]
//! epochs = 20
//! augment = [{ kind = "salt_pepper", sigma = 0.5 }]
//!
//! [words]
//! dir = "runs/stitch-words"
//! lists = ["top100_common", "top100_long", "top1000_common"]
//! pools = ["all", "hidden"]
//!
//! [fusion]
//! alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
//! ```
//!
//! Every section and field is optional. Relative paths are resolved against
//! the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugSpec;
use crate::corpus::SplitSpec;
use crate::error::{Error, Result};
use crate::io::manifest::read_text;
use crate::models::{CharRnnConfig, EegnetConfig};
use crate::numcore::{LossKind, SchedulerKind, TrainConfig};
use crate::sigproc::{PreprocessConfig, SynthConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitSection,
    pub eegnet: EegnetSection,
    pub charrnn: CharRnnSection,
    pub ablation: AblationSection,
    pub words: WordsSection,
    pub fusion: FusionSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    pub subjects: Vec<u32>,
    pub blocks: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/synth"),
            subjects: (1..=8).collect(),
            blocks: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub hidden_subjects: Vec<u32>,
    pub ratio: [u32; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            hidden_subjects: s.hidden_subjects,
            ratio: s.ratio,
        }
    }
}

/// Partial [`TrainConfig`]; unset fields fall back to the model's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub scheduler: Option<SchedulerKind>,
    pub loss: Option<LossKind>,
}

impl TrainOverrides {
    pub fn apply(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            scheduler: self.scheduler.clone().unwrap_or(base.scheduler),
            loss: self.loss.unwrap_or(base.loss),
            seed,
        }
    }

    fn filled(tc: &TrainConfig) -> Self {
        Self {
            batch_size: Some(tc.batch_size),
            learning_rate: Some(tc.learning_rate),
            epochs: Some(tc.epochs),
            scheduler: Some(tc.scheduler.clone()),
            loss: Some(tc.loss),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegnetSection {
    /// Weight-file stem read by `fuse-eval`.
    pub weights: PathBuf,
    pub model: EegnetConfig,
    pub train: TrainOverrides,
    pub augment: Vec<AugSpec>,
}

impl Default for EegnetSection {
    fn default() -> Self {
        Self {
            weights: PathBuf::from("runs/train-eegnet/eegnet"),
            model: EegnetConfig::default(),
            train: TrainOverrides::default(),
            augment: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharRnnSection {
    pub weights: PathBuf,
    /// Plain-text training corpus; the bundled text when absent.
    pub corpus: Option<PathBuf>,
    pub model: CharRnnConfig,
    pub train: TrainOverrides,
}

impl Default for CharRnnSection {
    fn default() -> Self {
        Self {
            weights: PathBuf::from("runs/train-charrnn/charrnn"),
            corpus: None,
            model: CharRnnConfig::default(),
            train: TrainOverrides::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    /// Baseline first, then rows in config order.
    #[default]
    Config,
    ValAcc,
    TestAcc1,
}

/// How ablation rows seed their training runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Every row trains from the global seed, so rows differ only in
    /// their augmentation.
    #[default]
    Paired,
    /// Row `i` trains from `derive_seed([seed, i])`.
    PerRow,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationRowSpec {
    /// Defaults to the augmentation labels joined by ` + `.
    pub label: Option<String>,
    pub augment: Vec<AugSpec>,
    pub epochs: Option<usize>,
}

impl AblationRowSpec {
    pub fn display_label(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None if self.augment.is_empty() => "Baseline".to_string(),
            None => self.augment.iter().map(AugSpec::label).collect::<Vec<_>>().join(" + "),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub sort: SortKey,
    pub seed_mode: SeedMode,
    /// Epochs of the baseline row; the eegnet train setting when absent.
    pub baseline_epochs: Option<usize>,
    pub rows: Vec<AblationRowSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    /// Every subject in the dataset.
    All,
    /// Only the subjects excluded from training.
    Hidden,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::All => "all",
            Pool::Hidden => "hidden",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordsSection {
    /// Output of `stitch-words`, read by `fuse-eval`.
    pub dir: PathBuf,
    /// Built-in list names or paths to one-word-per-line files.
    pub lists: Vec<String>,
    pub pools: Vec<Pool>,
}

impl Default for WordsSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/stitch-words"),
            lists: crate::corpus::BUILTIN_LISTS.iter().map(|s| s.to_string()).collect(),
            pools: vec![Pool::All, Pool::Hidden],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub alphas: Vec<f64>,
    pub teacher_forcing: bool,
    /// Gaussian noise added to classifier log-probabilities; 0 disables.
    pub logit_noise: f64,
    /// Alpha whose per-letter traces are written.
    pub trace_alpha: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            alphas: (0..=20).map(|i| i as f64 / 20.0).collect(),
            teacher_forcing: false,
            logit_noise: 0.0,
            trace_alpha: 0.75,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        if self.data.subjects.is_empty() || self.data.blocks == 0 {
            return Err(Error::Config("data needs at least one subject and one block".into()));
        }
        self.synth.validate().map_err(cfg_err)?;
        self.split_spec().validate()?;
        self.eegnet.model.validate().map_err(cfg_err)?;
        self.eegnet_train().validate()?;
        self.charrnn.model.validate().map_err(cfg_err)?;
        self.charrnn_train().validate()?;
        for a in self
            .eegnet
            .augment
            .iter()
            .chain(self.ablation.rows.iter().flat_map(|r| r.augment.iter()))
        {
            a.validate().map_err(cfg_err)?;
        }
        if self.fusion.alphas.is_empty() {
            return Err(Error::Config("fusion.alphas is empty".into()));
        }
        for &a in self.fusion.alphas.iter().chain([&self.fusion.trace_alpha]) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("alpha {a} outside [0, 1]")));
            }
        }
        if !(self.fusion.logit_noise >= 0.0) || !self.fusion.logit_noise.is_finite() {
            return Err(Error::Config("fusion.logit_noise must be finite and >= 0".into()));
        }
        if self.words.lists.is_empty() || self.words.pools.is_empty() {
            return Err(Error::Config("words needs at least one list and one pool".into()));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            hidden_subjects: self.split.hidden_subjects.clone(),
            ratio: self.split.ratio,
            seed: self.seed,
        }
    }

    pub fn eegnet_train(&self) -> TrainConfig {
        self.eegnet.train.apply(TrainConfig::eegnet_default(), self.seed)
    }

    pub fn charrnn_train(&self) -> TrainConfig {
        self.charrnn.train.apply(TrainConfig::charrnn_default(), self.seed)
    }

    /// Fully resolved copy, with every default written out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.eegnet.train = TrainOverrides::filled(&self.eegnet_train());
        out.charrnn.train = TrainOverrides::filled(&self.charrnn_train());
        out
    }

    /// TOML text that reproduces this run when passed back via `--config`.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(&self.resolved()).map_err(|e| Error::Config(e.to_string()))
    }
}

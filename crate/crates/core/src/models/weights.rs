//! Named parameter sets and their on-disk form.
//!
//! A model saved under stem `p` produces three files:
//!
//! - `p.eft`: every tensor concatenated into one rank-1 `EFT1` tensor;
//! - `p.manifest`: one `name,dims,offset` line per tensor, dims joined by
//!   `x` (e.g. `16x1x1x64`), offset counted in elements;
//! - `p.config`: `key = value` lines naming the version, the model kind and
//!   its configuration.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{eft, manifest};
use crate::numcore::{RunningStats, Tensor};

pub const WEIGHTS_VERSION: &str = "speller-weights/1";

const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub version: String,
    /// Trainable tensors in a fixed order.
    pub params: Vec<NamedTensor>,
    /// Batch-norm running statistics keyed by layer name.
    pub running: Vec<(String, RunningStats)>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

impl ModelWeights {
    pub fn new(params: Vec<NamedTensor>, running: Vec<(String, RunningStats)>) -> Self {
        ModelWeights { version: WEIGHTS_VERSION.to_string(), params, running }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    pub fn running(&self, layer: &str) -> Result<&RunningStats> {
        self.running
            .iter()
            .find(|(n, _)| n == layer)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("missing running statistics for '{layer}'")))
    }

    pub(crate) fn running_mut(&mut self, layer: &str) -> Result<&mut RunningStats> {
        self.running
            .iter_mut()
            .find(|(n, _)| n == layer)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("missing running statistics for '{layer}'")))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub(crate) fn set_tensors(&mut self, tensors: Vec<Tensor>) {
        for (p, t) in self.params.iter_mut().zip(tensors) {
            p.tensor = t;
        }
    }

    /// Checks that names and shapes equal `expected` exactly.
    pub fn check_layout(&self, expected: &ModelWeights) -> Result<()> {
        let got: Vec<(&str, &[usize])> = self.params.iter().map(|p| (p.name.as_str(), p.tensor.shape())).collect();
        let want: Vec<(&str, &[usize])> =
            expected.params.iter().map(|p| (p.name.as_str(), p.tensor.shape())).collect();
        if got != want {
            return Err(Error::Format(format!("weight layout {got:?} does not match config {want:?}")));
        }
        for (name, stats) in &expected.running {
            if self.running(name)?.mean.len() != stats.mean.len() {
                return Err(Error::Format(format!("running statistics for '{name}' have the wrong size")));
            }
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> =
            self.params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        for (name, s) in &self.running {
            let n = s.mean.len();
            out.push((format!("{name}{MEAN_SUFFIX}"), Tensor::new(&[n], s.mean.clone()).expect("shape")));
            out.push((format!("{name}{VAR_SUFFIX}"), Tensor::new(&[n], s.var.clone()).expect("shape")));
        }
        out
    }

    /// Writes `<stem>.eft`, `<stem>.manifest` and `<stem>.config`.
    pub fn save<C: Serialize>(&self, stem: &Path, kind: &str, config: &C) -> Result<()> {
        let mut flat = Vec::new();
        let mut lines = String::new();
        for (name, t) in self.entries() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            lines.push_str(&format!("{name},{},{}\n", dims.join("x"), flat.len()));
            flat.extend_from_slice(t.data());
        }
        let n = flat.len();
        eft::write(&with_ext(stem, "eft"), &Tensor::new(&[n], flat)?)?;
        manifest::write_text(&with_ext(stem, "manifest"), &lines)?;
        let body = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
        let sidecar = format!("version = \"{}\"\nmodel = \"{kind}\"\n{body}", self.version);
        manifest::write_text(&with_ext(stem, "config"), &sidecar)
    }

    /// Reads the three files written by [`ModelWeights::save`].
    pub fn load<C: DeserializeOwned>(stem: &Path, kind: &str) -> Result<(Self, C)> {
        let sidecar = manifest::read_text(&with_ext(stem, "config"))?;
        let mut table: toml::Table = toml::from_str(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
        let version = table.remove("version").and_then(|v| v.as_str().map(str::to_string));
        if version.as_deref() != Some(WEIGHTS_VERSION) {
            return Err(Error::Format(format!("unsupported weights version {version:?}")));
        }
        let model = table.remove("model").and_then(|v| v.as_str().map(str::to_string));
        if model.as_deref() != Some(kind) {
            return Err(Error::Format(format!("expected {kind} weights, found {model:?}")));
        }
        let config: C = toml::Value::Table(table).try_into().map_err(|e| Error::Format(e.to_string()))?;

        let flat = eft::read(&with_ext(stem, "eft"))?;
        if flat.rank() != 1 {
            return Err(Error::Format("weights payload must be rank 1".into()));
        }
        let mut params = Vec::new();
        let mut means: Vec<(String, Vec<f32>)> = Vec::new();
        let mut vars: Vec<(String, Vec<f32>)> = Vec::new();
        for (i, line) in manifest::read_text(&with_ext(stem, "manifest"))?.lines().enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("weights manifest line {}: '{line}'", i + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let dims: Vec<usize> = if parts[1].is_empty() {
                vec![]
            } else {
                parts[1].split('x').map(|d| d.parse().map_err(|_| bad())).collect::<Result<_>>()?
            };
            let offset: usize = parts[2].parse().map_err(|_| bad())?;
            let len: usize = dims.iter().product();
            let data = flat.data().get(offset..offset + len).ok_or_else(bad)?.to_vec();
            let name = parts[0];
            if let Some(layer) = name.strip_suffix(MEAN_SUFFIX) {
                means.push((layer.to_string(), data));
            } else if let Some(layer) = name.strip_suffix(VAR_SUFFIX) {
                vars.push((layer.to_string(), data));
            } else {
                params.push(NamedTensor { name: name.to_string(), tensor: Tensor::new(&dims, data)? });
            }
        }
        let mut running = Vec::new();
        for (layer, mean) in means {
            let var = vars
                .iter()
                .find(|(n, _)| *n == layer)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("running variance for '{layer}' missing")))?;
            running.push((layer, RunningStats { mean, var, updates: 1 }));
        }
        Ok((ModelWeights { version: WEIGHTS_VERSION.to_string(), params, running }, config))
    }
}

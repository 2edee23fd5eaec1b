//! Bandpass, decimation and segmentation of multi-channel trials.

use serde::{Deserialize, Serialize};

use super::filter::{cheby1_lowpass, design_cheby1, filtfilt, FilterSpec, Sos};
use super::{SignalTensor, TrialRecord};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Floor applied to a channel's standard deviation before z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub filter: FilterSpec,
    pub decimation: usize,
    pub antialias_order: usize,
    pub antialias_ripple_db: f64,
    /// Lowpass edge as a fraction of the post-decimation Nyquist.
    pub antialias_fraction: f64,
    pub segment_samples: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            filter: FilterSpec::default(),
            decimation: 4,
            antialias_order: 9,
            antialias_ripple_db: 0.01,
            antialias_fraction: 0.8,
            segment_samples: 250,
        }
    }
}

/// A decimated, z-scored window labelled with its trial target.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSample {
    /// `[channels, segment_samples]`
    pub data: Tensor,
    pub label: usize,
    pub subject: u32,
    pub block: u32,
    /// Set when some channel had zero variance and the std floor was used.
    pub flat_channel: bool,
}

fn check_signal(x: &SignalTensor) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::shape(format!("signal must be [channels, samples], got {:?}", x.shape())));
    }
    Ok((x.dim(0), x.dim(1)))
}

fn per_channel(x: &SignalTensor, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<SignalTensor> {
    let (c, _) = check_signal(x)?;
    let mut out = Vec::new();
    let mut width = 0;
    for row in x.rows() {
        let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let y = f(&row)?;
        width = y.len();
        out.extend(y.into_iter().map(|v| v as f32));
    }
    Tensor::new(&[c, width], out)
}

/// Forward-backward filtering of every channel.
pub fn apply_filter_zero_phase(x: &SignalTensor, sos: &Sos) -> Result<SignalTensor> {
    per_channel(x, |row| filtfilt(sos, row))
}

/// Anti-alias lowpass matching `factor` under `cfg`.
pub fn antialias_filter(cfg: &PreprocessConfig, sample_rate: f64) -> Result<Sos> {
    let cutoff = cfg.antialias_fraction * sample_rate / (2.0 * cfg.decimation as f64);
    cheby1_lowpass(cfg.antialias_order, cfg.antialias_ripple_db, cutoff, sample_rate)
}

/// Zero-phase lowpass then keep every `factor`-th sample starting at 0.
pub fn decimate(x: &SignalTensor, factor: usize, antialias: &Sos) -> Result<SignalTensor> {
    let (_, n) = check_signal(x)?;
    if factor == 0 {
        return Err(Error::param("decimation factor must be positive"));
    }
    if n < factor {
        return Err(Error::TooShort { len: n, required: factor });
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    per_channel(x, |row| Ok(filtfilt(antialias, row)?.into_iter().step_by(factor).collect()))
}

/// First `samples` columns, each channel z-scored.
pub fn segment_and_normalize(
    x: &SignalTensor,
    samples: usize,
    label: usize,
    subject: u32,
    block: u32,
) -> Result<SegmentSample> {
    let (c, n) = check_signal(x)?;
    if n < samples || samples == 0 {
        return Err(Error::TooShort { len: n, required: samples.max(1) });
    }
    let mut data = Vec::with_capacity(c * samples);
    let mut flat = false;
    for row in x.rows() {
        let w = &row[..samples];
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / samples as f64;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / samples as f64;
        let mut std = var.sqrt();
        if std < STD_FLOOR {
            std = STD_FLOOR;
            flat = true;
        }
        data.extend(w.iter().map(|&v| ((v as f64 - mean) / std) as f32));
    }
    if flat {
        log::warn!("subject {subject} block {block} target {label}: zero-variance channel");
    }
    Ok(SegmentSample {
        data: Tensor::new(&[c, samples], data)?,
        label,
        subject,
        block,
        flat_channel: flat,
    })
}

/// Designed filters for a fixed configuration, applied per trial.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub bandpass: Sos,
    pub antialias: Sos,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        let bandpass = design_cheby1(&config.filter)?;
        let antialias = antialias_filter(&config, config.filter.sample_rate)?;
        Ok(Preprocessor { config, bandpass, antialias })
    }

    pub fn output_rate(&self) -> f64 {
        self.config.filter.sample_rate / self.config.decimation as f64
    }

    pub fn process(&self, trial: &TrialRecord) -> Result<SegmentSample> {
        let band = apply_filter_zero_phase(&trial.signal, &self.bandpass)?;
        let low = decimate(&band, self.config.decimation, &self.antialias)?;
        segment_and_normalize(&low, self.config.segment_samples, trial.target, trial.subject, trial.block)
    }
}

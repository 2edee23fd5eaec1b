//! Synthetic SSVEP trials: pink background noise plus a harmonic response
//! projected onto an occipital channel group.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::TrialRecord;
use crate::error::{Error, Result};
use crate::numcore::rng::{derived_rng, SeededRng};
use crate::numcore::Tensor;

/// 0-based indices of Pz, PO5, PO3, POz, PO4, PO6, O1, Oz, O2 in a 64-channel
/// 10-20 montage.
pub const OCCIPITAL: [usize; 9] = [47, 53, 54, 55, 56, 57, 60, 61, 62];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub channels: usize,
    pub sample_rate: f64,
    pub trial_samples: usize,
    pub rest_samples: usize,
    pub targets: usize,
    pub base_freq: f64,
    pub freq_step: f64,
    /// Relative amplitudes of the fundamental and its harmonics.
    pub harmonics: Vec<f64>,
    pub occipital: Vec<usize>,
    /// Per-subject fundamental amplitude relative to unit-RMS background.
    pub snr_range: [f64; 2],
    /// Per-subject response latency in seconds.
    pub latency_range: [f64; 2],
    /// Mixing weight scale on channels outside the occipital group.
    pub leakage: f64,
    /// Standard deviation of the per-subject deviation from the shared
    /// occipital pattern.
    pub mixing_spread: f64,
    /// Trial-to-trial amplitude spread (uniform, relative).
    pub amplitude_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            channels: 64,
            sample_rate: 250.0,
            trial_samples: 1500,
            rest_samples: 125,
            targets: 40,
            base_freq: 8.0,
            freq_step: 0.2,
            harmonics: vec![1.0, 0.4, 0.2],
            occipital: OCCIPITAL.to_vec(),
            snr_range: [0.5, 0.9],
            latency_range: [0.05, 0.15],
            leakage: 0.05,
            mixing_spread: 0.8,
            amplitude_jitter: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.targets == 0 || self.harmonics.is_empty() {
            return bad("synth: channels, targets and harmonics must be non-empty".into());
        }
        if self.rest_samples >= self.trial_samples {
            return bad("synth: rest period must be shorter than the trial".into());
        }
        if let Some(&c) = self.occipital.iter().find(|&&c| c >= self.channels) {
            return bad(format!("synth: occipital channel {c} out of range"));
        }
        let top = self.frequency(self.targets - 1) * self.harmonics.len() as f64;
        if top >= self.sample_rate / 2.0 {
            return bad(format!("synth: harmonic at {top} Hz exceeds Nyquist"));
        }
        for (name, r) in [("snr_range", self.snr_range), ("latency_range", self.latency_range)] {
            if !(r[0] >= 0.0 && r[0] <= r[1]) {
                return bad(format!("synth: {name} must satisfy 0 <= lo <= hi"));
            }
        }
        Ok(())
    }

    pub fn frequency(&self, target: usize) -> f64 {
        self.base_freq + self.freq_step * target as f64
    }
}

/// Fixed per-subject response characteristics.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectProfile {
    pub subject: u32,
    pub snr: f64,
    pub latency: f64,
    /// Channel weights of the response, length `channels`.
    pub mixing: Vec<f64>,
}

impl SubjectProfile {
    /// Draws a profile from `cfg` for `subject`, deterministic in `seed`.
    pub fn generate(cfg: &SynthConfig, subject: u32, seed: u64) -> Self {
        let mut rng = derived_rng(&[seed, 0x5_0b1ec7, subject as u64]);
        let snr = rng.random_range(cfg.snr_range[0]..=cfg.snr_range[1]);
        let latency = rng.random_range(cfg.latency_range[0]..=cfg.latency_range[1]);
        let mut mixing: Vec<f64> = (0..cfg.channels)
            .map(|_| cfg.leakage * rng.random_range(-1.0..=1.0))
            .collect();
        // a montage-wide pattern shared by everyone plus an individual deviation
        let mut common = derived_rng(&[seed, 0xC0_44_0A]);
        for &c in &cfg.occipital {
            let base: f64 = common.random_range(0.5..=1.0);
            let dev: f64 = StandardNormal.sample(&mut rng);
            mixing[c] = base + cfg.mixing_spread * dev;
        }
        SubjectProfile { subject, snr, latency, mixing }
    }

    /// High-SNR, zero-latency profile used for sanity checks.
    pub fn clean(cfg: &SynthConfig, subject: u32) -> Self {
        let mut mixing = vec![0.0; cfg.channels];
        for &c in &cfg.occipital {
            mixing[c] = 1.0;
        }
        SubjectProfile { subject, snr: 1.0, latency: 0.0, mixing }
    }
}

/// Unit-RMS 1/f noise of length `n` via spectral shaping.
pub fn pink_noise(n: usize, planner: &mut FftPlanner<f64>, rng: &mut SeededRng) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let scale = 1.0 / (k as f64).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if 2 * k == n { 0.0 } else { StandardNormal.sample(rng) };
        spec[k] = Complex::new(re * scale, im * scale);
        spec[n - k] = spec[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let rms = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in &mut x {
        *v = if rms > 0.0 { (*v - mean) / rms } else { 0.0 };
    }
    x
}

/// One trial for `profile` and `target`; equal arguments give equal output.
pub fn synth_trial(
    cfg: &SynthConfig,
    profile: &SubjectProfile,
    target: usize,
    block: u32,
    rng: &mut SeededRng,
) -> Result<TrialRecord> {
    if target >= cfg.targets {
        return Err(Error::param(format!("target {target} outside 0..{}", cfg.targets)));
    }
    if profile.mixing.len() != cfg.channels {
        return Err(Error::shape(format!(
            "mixing has {} weights for {} channels",
            profile.mixing.len(),
            cfg.channels
        )));
    }
    let n = cfg.trial_samples;
    let fs = cfg.sample_rate;
    let freq = cfg.frequency(target);
    let gain = profile.snr * (1.0 + cfg.amplitude_jitter * rng.random_range(-1.0..=1.0));
    let onset = cfg.rest_samples as f64 / fs + profile.latency;
    let response: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            if i < cfg.rest_samples || t < onset {
                return 0.0;
            }
            let tau = t - cfg.rest_samples as f64 / fs;
            // the response lags the stimulus by the subject latency
            cfg.harmonics
                .iter()
                .enumerate()
                .map(|(h, r)| r * (2.0 * PI * (h + 1) as f64 * freq * (tau - profile.latency)).sin())
                .sum::<f64>()
                * gain
        })
        .collect();
    let mut planner = FftPlanner::new();
    let mut data = Vec::with_capacity(cfg.channels * n);
    for &w in &profile.mixing {
        let noise = pink_noise(n, &mut planner, rng);
        data.extend(noise.iter().zip(&response).map(|(e, s)| (e + w * s) as f32));
    }
    Ok(TrialRecord {
        subject: profile.subject,
        target,
        block,
        signal: Tensor::new(&[cfg.channels, n], data)?,
        stimulus_freq: freq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use crate::sigproc::{PreprocessConfig, Preprocessor};

    // direct DFT power at frequency f
    fn power(x: &[f64], f: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * f * i as f64 / fs;
            re += v * w.cos();
            im -= v * w.sin();
        }
        re * re + im * im
    }

    fn occipital_mean(sig: &Tensor, cfg: &SynthConfig, from: usize) -> Vec<f64> {
        let n = sig.dim(1);
        (from..n)
            .map(|i| cfg.occipital.iter().map(|&c| sig.data()[c * n + i] as f64).sum::<f64>())
            .collect()
    }

    fn peak(x: &[f64], fs: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let mut best = (lo, f64::MIN);
        let mut f = lo;
        while f <= hi {
            let p = power(x, f, fs);
            if p > best.1 {
                best = (f, p);
            }
            f += step;
        }
        best.0
    }

    #[test]
    fn target_zero_peaks_at_eight_hz() {
        let cfg = SynthConfig::default();
        let prof = SubjectProfile::clean(&cfg, 1);
        let t = synth_trial(&cfg, &prof, 0, 1, &mut rng_from(7)).unwrap();
        assert_eq!(t.signal.shape(), &[64, 1500]);
        assert_eq!(t.stimulus_freq, 8.0);
        let x = occipital_mean(&t.signal, &cfg, 125);
        let f = peak(&x, 250.0, 6.0, 20.0, 0.05);
        assert!((f - 8.0).abs() <= 0.1, "{f}");
    }

    #[test]
    fn rest_period_is_noise_only() {
        let cfg = SynthConfig::default();
        let prof = SubjectProfile::clean(&cfg, 1);
        let a = synth_trial(&cfg, &prof, 10, 1, &mut rng_from(3)).unwrap();
        let mut silent = prof.clone();
        silent.snr = 0.0;
        let b = synth_trial(&cfg, &silent, 10, 1, &mut rng_from(3)).unwrap();
        for c in 0..64 {
            assert_eq!(a.signal.data()[c * 1500..c * 1500 + 125], b.signal.data()[c * 1500..c * 1500 + 125]);
        }
        assert_ne!(a.signal, b.signal);
    }

    #[test]
    fn deterministic_and_range_checked() {
        let cfg = SynthConfig::default();
        let prof = SubjectProfile::generate(&cfg, 4, 99);
        assert_eq!(prof, SubjectProfile::generate(&cfg, 4, 99));
        let a = synth_trial(&cfg, &prof, 39, 6, &mut rng_from(5)).unwrap();
        let b = synth_trial(&cfg, &prof, 39, 6, &mut rng_from(5)).unwrap();
        assert_eq!(a, b);
        assert!((a.stimulus_freq - 15.8).abs() < 1e-12);
        assert!(synth_trial(&cfg, &prof, 40, 1, &mut rng_from(5)).is_err());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn pink_noise_is_unit_rms_and_red() {
        let mut rng = rng_from(1);
        let x = pink_noise(4096, &mut FftPlanner::new(), &mut rng);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / 4096.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        let low: f64 = (1..20).map(|k| power(&x, k as f64 * 250.0 / 4096.0, 250.0)).sum();
        let high: f64 = (1000..1019).map(|k| power(&x, k as f64 * 250.0 / 4096.0, 250.0)).sum();
        assert!(low > 10.0 * high);
    }

    #[test]
    fn preprocessed_segment_peaks_at_target() {
        let cfg = SynthConfig::default();
        let pre = Preprocessor::new(PreprocessConfig::default()).unwrap();
        let prof = SubjectProfile::clean(&cfg, 1);
        for target in [0, 13, 27, 39] {
            let t = synth_trial(&cfg, &prof, target, 1, &mut rng_from(target as u64)).unwrap();
            let s = pre.process(&t).unwrap();
            let x = occipital_mean(&s.data, &cfg, 0);
            let f = peak(&x, 62.5, 7.0, 17.0, 0.05);
            assert!((f - cfg.frequency(target)).abs() <= 0.25, "target {target}: {f}");
        }
    }
}

//! Training-time augmentation of segments.
//!
//! Every operator maps a `[channels, samples]` segment to one of the same
//! shape and leaves the label/subject/block metadata alone. Parameter values
//! that make an operator a no-op short-circuit to an exact copy.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::{derived_rng, SeededRng};
use crate::numcore::Tensor;
use crate::sigproc::SegmentSample;

/// Probability with which `phase_noise` perturbs each bin.
pub const PHASE_BIN_PROB: f64 = 0.5;

/// Whether a code path is training or evaluating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One operator with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugKind {
    FreqMask { max_width: usize, max_count: usize },
    TimeMask { max_width: usize, max_count: usize },
    PhaseNoise { sigma: f64 },
    MagNoise { sigma: f64 },
    SaltPepper { sigma: f64 },
    RandImpulse { max_scale: f64, max_delay: usize, max_count: usize },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    #[serde(flatten)]
    pub kind: AugKind,
    /// Per-sample application probability.
    #[serde(default = "one")]
    pub p: f64,
}

impl AugSpec {
    pub fn new(kind: AugKind) -> Self {
        AugSpec { kind, p: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::param(format!("probability {} outside [0, 1]", self.p)));
        }
        match self.kind {
            AugKind::PhaseNoise { sigma } | AugKind::MagNoise { sigma } | AugKind::SaltPepper { sigma } => {
                check_sigma(sigma)
            }
            AugKind::RandImpulse { max_scale, max_delay, max_count } => {
                if !(max_scale >= 0.0) || !max_scale.is_finite() {
                    return Err(Error::param(format!("echo scale {max_scale} must be >= 0")));
                }
                if max_count > 0 && max_delay == 0 {
                    return Err(Error::param("echo delay range is empty (max_delay = 0)"));
                }
                Ok(())
            }
            AugKind::FreqMask { .. } | AugKind::TimeMask { .. } => Ok(()),
        }
    }

    /// Row label in the ablation key grammar, e.g. `Freq mask; 10, 2`.
    pub fn label(&self) -> String {
        match self.kind {
            AugKind::FreqMask { max_width, max_count } => format!("Freq mask; {max_width}, {max_count}"),
            AugKind::TimeMask { max_width, max_count } => format!("Time mask; {max_width}, {max_count}"),
            AugKind::PhaseNoise { sigma } => format!("Phase noise; {sigma}"),
            AugKind::MagNoise { sigma } => format!("Mag noise; {sigma}"),
            AugKind::SaltPepper { sigma } => format!("Salt pepper; {sigma}"),
            AugKind::RandImpulse { max_scale, max_delay, max_count } => {
                format!("Rand imp; {max_scale}, {max_delay}, {max_count}")
            }
        }
    }

    /// Applies the operator in place (subject to `p`).
    pub fn apply(&self, data: &mut Tensor, rng: &mut SeededRng) -> Result<()> {
        self.validate()?;
        if self.p == 0.0 || (self.p < 1.0 && !rng.random_bool(self.p)) {
            return Ok(());
        }
        match self.kind {
            AugKind::FreqMask { max_width, max_count } => {
                freq_mask_in_place(data, max_width, max_count, rng).map(drop)
            }
            AugKind::TimeMask { max_width, max_count } => time_mask_in_place(data, max_width, max_count, rng),
            AugKind::PhaseNoise { sigma } => phase_noise_in_place(data, sigma, rng).map(drop),
            AugKind::MagNoise { sigma } => mag_noise_in_place(data, sigma, rng).map(drop),
            AugKind::SaltPepper { sigma } => salt_pepper_in_place(data, sigma, rng),
            AugKind::RandImpulse { max_scale, max_delay, max_count } => {
                rand_impulse_in_place(data, max_scale, max_delay, max_count, rng)
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("sigma {sigma} must be finite and >= 0")))
    }
}

fn dims(data: &Tensor) -> Result<(usize, usize)> {
    if data.rank() != 2 || data.dim(1) == 0 {
        return Err(Error::shape(format!("segment must be [channels, samples], got {:?}", data.shape())));
    }
    Ok((data.dim(0), data.dim(1)))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Runs `edit` on the full complex spectrum of every channel.
fn spectral_edit(
    data: &mut Tensor,
    mut edit: impl FnMut(&mut [Complex64], &mut SeededRng),
    rng: &mut SeededRng,
) -> Result<f64> {
    let (_, n) = dims(data)?;
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    });
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut residue = 0.0f64;
    for row in data.data_mut().chunks_mut(n) {
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex64::new(v as f64, 0.0);
        }
        fwd.process(&mut buf);
        edit(&mut buf, rng);
        inv.process(&mut buf);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = (b.re / n as f64) as f32;
            residue = residue.max((b.im / n as f64).abs());
        }
    }
    Ok(residue)
}

/// Draws `1..=max_count` windows `(start, width)` with width in `1..=max_width`
/// and start uniform over `lo..=hi - width + 1`.
fn draw_windows(
    max_width: usize,
    max_count: usize,
    lo: usize,
    hi: usize,
    rng: &mut SeededRng,
) -> Vec<(usize, usize)> {
    let count = rng.random_range(1..=max_count);
    (0..count)
        .map(|_| {
            let w = rng.random_range(1..=max_width);
            let start = rng.random_range(lo..=hi + 1 - w);
            (start, w)
        })
        .collect()
}

fn freq_mask_in_place(data: &mut Tensor, x: usize, y: usize, rng: &mut SeededRng) -> Result<f64> {
    let (_, n) = dims(data)?;
    let positive = n / 2;
    if x > positive {
        return Err(Error::param(format!("mask width {x} exceeds {positive} positive-frequency bins")));
    }
    if x == 0 || y == 0 {
        return Ok(0.0);
    }
    // bands are shared by all channels
    let bands = draw_windows(x, y, 1, positive, rng);
    spectral_edit(
        data,
        |spec, _| {
            for &(start, w) in &bands {
                for k in start..start + w {
                    spec[k] = Complex64::new(0.0, 0.0);
                    spec[n - k] = Complex64::new(0.0, 0.0);
                }
            }
        },
        rng,
    )
}

fn time_mask_in_place(data: &mut Tensor, x: usize, y: usize, rng: &mut SeededRng) -> Result<()> {
    let (_, n) = dims(data)?;
    if x > n {
        return Err(Error::param(format!("mask width {x} exceeds {n} samples")));
    }
    if x == 0 || y == 0 {
        return Ok(());
    }
    let windows = draw_windows(x, y, 0, n - 1, rng);
    for row in data.data_mut().chunks_mut(n) {
        for &(start, w) in &windows {
            row[start..start + w].fill(0.0);
        }
    }
    Ok(())
}

fn phase_noise_in_place(data: &mut Tensor, sigma: f64, rng: &mut SeededRng) -> Result<f64> {
    check_sigma(sigma)?;
    let (_, n) = dims(data)?;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    // DC and Nyquist must stay real, so only strictly interior bins move
    let top = (n - 1) / 2;
    spectral_edit(
        data,
        |spec, rng| {
            for k in 1..=top {
                if rng.random_bool(PHASE_BIN_PROB) {
                    let rot = Complex64::from_polar(1.0, normal.sample(rng));
                    spec[k] *= rot;
                    spec[n - k] = spec[k].conj();
                }
            }
        },
        rng,
    )
}

fn mag_noise_in_place(data: &mut Tensor, sigma: f64, rng: &mut SeededRng) -> Result<f64> {
    check_sigma(sigma)?;
    let (_, n) = dims(data)?;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    spectral_edit(
        data,
        |spec, rng| {
            for k in 0..=n / 2 {
                let g = (1.0 + normal.sample(rng)).max(0.0);
                spec[k] *= g;
                if k != 0 && 2 * k != n {
                    spec[n - k] = spec[k].conj();
                }
            }
        },
        rng,
    )
}

fn salt_pepper_in_place(data: &mut Tensor, sigma: f64, rng: &mut SeededRng) -> Result<()> {
    check_sigma(sigma)?;
    dims(data)?;
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    for v in data.data_mut() {
        *v = (*v as f64 + normal.sample(rng)) as f32;
    }
    Ok(())
}

fn rand_impulse_in_place(
    data: &mut Tensor,
    max_scale: f64,
    max_delay: usize,
    max_count: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    let (_, n) = dims(data)?;
    AugSpec::new(AugKind::RandImpulse { max_scale, max_delay, max_count }).validate()?;
    if max_delay >= n {
        return Err(Error::param(format!("echo delay {max_delay} must be below {n} samples")));
    }
    if max_count == 0 {
        return Ok(());
    }
    let k = rng.random_range(1..=max_count);
    let echoes: Vec<(f64, usize)> = (0..k)
        .map(|_| (rng.random_range(0.0..=max_scale), rng.random_range(1..=max_delay)))
        .collect();
    for row in data.data_mut().chunks_mut(n) {
        let src: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let mut out = src.clone();
        for &(a, d) in &echoes {
            for t in d..n {
                out[t] += a * src[t - d];
            }
        }
        for (v, o) in row.iter_mut().zip(out) {
            *v = o as f32;
        }
    }
    Ok(())
}

fn with_data(
    seg: &SegmentSample,
    f: impl FnOnce(&mut Tensor) -> Result<()>,
) -> Result<SegmentSample> {
    let mut out = seg.clone();
    f(&mut out.data)?;
    Ok(out)
}

pub fn freq_mask(seg: &SegmentSample, x: usize, y: usize, rng: &mut SeededRng) -> Result<SegmentSample> {
    with_data(seg, |d| freq_mask_in_place(d, x, y, rng).map(drop))
}

pub fn time_mask(seg: &SegmentSample, x: usize, y: usize, rng: &mut SeededRng) -> Result<SegmentSample> {
    with_data(seg, |d| time_mask_in_place(d, x, y, rng))
}

pub fn phase_noise(seg: &SegmentSample, sigma: f64, rng: &mut SeededRng) -> Result<SegmentSample> {
    with_data(seg, |d| phase_noise_in_place(d, sigma, rng).map(drop))
}

pub fn mag_noise(seg: &SegmentSample, sigma: f64, rng: &mut SeededRng) -> Result<SegmentSample> {
    with_data(seg, |d| mag_noise_in_place(d, sigma, rng).map(drop))
}

pub fn salt_pepper(seg: &SegmentSample, sigma: f64, rng: &mut SeededRng) -> Result<SegmentSample> {
    with_data(seg, |d| salt_pepper_in_place(d, sigma, rng))
}

pub fn rand_impulse(
    seg: &SegmentSample,
    max_scale: f64,
    max_delay: usize,
    max_count: usize,
    rng: &mut SeededRng,
) -> Result<SegmentSample> {
    with_data(seg, |d| rand_impulse_in_place(d, max_scale, max_delay, max_count, rng))
}

/// Applies `specs` in order to a copy of `data`; operator `i` draws from a
/// stream derived from `(seed, i)`.
pub fn augment_tensor(data: &mut Tensor, specs: &[AugSpec], seed: u64, mode: Mode) -> Result<()> {
    if mode == Mode::Eval {
        return Err(Error::EvalAugmentation);
    }
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = derived_rng(&[seed, i as u64]);
        spec.apply(data, &mut rng)?;
    }
    Ok(())
}

/// Segment-level wrapper around [`augment_tensor`].
pub fn apply_pipeline(seg: &SegmentSample, specs: &[AugSpec], seed: u64, mode: Mode) -> Result<SegmentSample> {
    with_data(seg, |d| augment_tensor(d, specs, seed, mode))
}

#[cfg(test)]
mod tests;

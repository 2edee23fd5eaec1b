//! Chebyshev type I design in second-order sections, and filtering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Bandpass specification in Hz and dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub passband: [f64; 2],
    pub stopband_corners: [f64; 2],
    pub passband_ripple_db: f64,
    pub stopband_atten_db: f64,
    pub sample_rate: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            passband: [6.0, 90.0],
            stopband_corners: [4.0, 100.0],
            passband_ripple_db: 1.0,
            stopband_atten_db: 40.0,
            sample_rate: 250.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        let [sl, sh] = self.stopband_corners;
        let [pl, ph] = self.passband;
        let nyq = self.sample_rate / 2.0;
        let ordered = 0.0 < sl && sl < pl && pl < ph && ph < sh && sh < nyq;
        if !ordered {
            return Err(Error::Design(format!(
                "need 0 < {sl} < {pl} < {ph} < {sh} < {nyq} (Nyquist)"
            )));
        }
        if !(self.passband_ripple_db > 0.0) || !(self.stopband_atten_db > self.passband_ripple_db) {
            return Err(Error::Design(format!(
                "need 0 < ripple ({}) < attenuation ({})",
                self.passband_ripple_db, self.stopband_atten_db
            )));
        }
        Ok(())
    }
}

/// One biquad, `a[0]` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z1: Complex64) -> Complex64 {
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Steady-state transposed-form state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// Cascade of biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    /// Number of poles of the full filter.
    pub order: usize,
}

impl Sos {
    /// Complex response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z1)).product()
    }

    pub fn gain_db(&self, freq: f64, sample_rate: f64) -> f64 {
        20.0 * self.response(freq, sample_rate).norm().log10()
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Initial conditions that put the cascade in steady state for a unit step.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [a, b] = s.step_state();
                let zi = [a * scale, b * scale];
                scale *= s.dc_gain();
                zi
            })
            .collect()
    }
}

/// Prototype order from the analytic Chebyshev formula with the
/// bandpass-to-lowpass frequency mapping (bilinear prewarped).
pub fn cheby1_order(spec: &FilterSpec) -> Result<usize> {
    spec.validate()?;
    let warp = |f: f64| (PI * f / spec.sample_rate).tan();
    let (p1, p2) = (warp(spec.passband[0]), warp(spec.passband[1]));
    let (s1, s2) = (warp(spec.stopband_corners[0]), warp(spec.stopband_corners[1]));
    let bw = p2 - p1;
    let w0sq = p1 * p2;
    let map = |s: f64| ((s * s - w0sq) / (s * bw)).abs();
    let ws = map(s1).min(map(s2));
    let gs = 10f64.powf(spec.stopband_atten_db / 10.0) - 1.0;
    let gp = 10f64.powf(spec.passband_ripple_db / 10.0) - 1.0;
    let n = (gs / gp).sqrt().acosh() / ws.acosh();
    Ok(n.ceil() as usize)
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

fn cheby1_prototype(n: usize, ripple_db: f64) -> Zpk {
    let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / n as f64;
    let poles: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = PI * (2 * k + 1) as f64 / (2 * n) as f64;
            Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos())
        })
        .collect();
    let mut gain = poles.iter().map(|p| -p).product::<Complex64>().re;
    if n % 2 == 0 {
        gain /= (1.0 + eps * eps).sqrt();
    }
    Zpk { zeros: vec![], poles, gain }
}

fn bilinear(analog: Zpk, sample_rate: f64) -> Zpk {
    let fs2 = 2.0 * sample_rate;
    let map = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let num: Complex64 = analog.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = analog.poles.iter().map(|p| fs2 - p).product();
    let mut zeros: Vec<Complex64> = analog.zeros.iter().map(map).collect();
    zeros.resize(analog.poles.len(), Complex64::new(-1.0, 0.0));
    Zpk {
        zeros,
        poles: analog.poles.iter().map(map).collect(),
        gain: analog.gain * (num / den).re,
    }
}

/// Splits roots into real-coefficient quadratics. Conjugate pairs stay
/// together; real roots are paired in order; an odd leftover gets a linear
/// factor.
fn quadratics(roots: &[Complex64]) -> Vec<[f64; 3]> {
    const TOL: f64 = 1e-9;
    let mut out = Vec::new();
    let mut reals = Vec::new();
    for r in roots {
        if r.im.abs() <= TOL * r.norm().max(1.0) {
            reals.push(r.re);
        } else if r.im > 0.0 {
            out.push([1.0, -2.0 * r.re, r.norm_sqr()]);
        }
    }
    reals.sort_by(|a, b| a.total_cmp(b));
    let mut it = reals.chunks(2);
    for pair in &mut it {
        match pair {
            [a, b] => out.push([1.0, -(a + b), a * b]),
            [a] => out.push([1.0, -a, 0.0]),
            _ => unreachable!(),
        }
    }
    out
}

fn zpk_to_sos(zpk: Zpk) -> Result<Sos> {
    let order = zpk.poles.len();
    let mut den = quadratics(&zpk.poles);
    let mut num = if zpk.zeros.iter().all(|z| z.im == 0.0) && !zpk.zeros.is_empty() {
        let mut pos: Vec<f64> = zpk.zeros.iter().filter(|z| z.re > 0.0).map(|z| z.re).collect();
        let mut neg: Vec<f64> = zpk.zeros.iter().filter(|z| z.re <= 0.0).map(|z| z.re).collect();
        // mixed-sign zeros (bandpass) pair one of each so every section is [1, 0, -1]
        let mut q = Vec::new();
        while let (Some(a), Some(b)) = (pos.last().copied(), neg.last().copied()) {
            pos.pop();
            neg.pop();
            q.push([1.0, -(a + b), a * b]);
        }
        let rest: Vec<Complex64> = pos.iter().chain(&neg).map(|&r| Complex64::new(r, 0.0)).collect();
        q.extend(quadratics(&rest));
        q
    } else {
        quadratics(&zpk.zeros)
    };
    let n = den.len().max(num.len());
    den.resize(n, [1.0, 0.0, 0.0]);
    num.resize(n, [1.0, 0.0, 0.0]);
    if n == 0 {
        return Err(Error::Design("empty filter".into()));
    }
    let mut sections: Vec<Biquad> = num.into_iter().zip(den).map(|(b, a)| Biquad { b, a }).collect();
    for c in &mut sections[0].b {
        *c *= zpk.gain;
    }
    if !sections.iter().flat_map(|s| s.b.iter().chain(&s.a)).all(|c| c.is_finite()) {
        return Err(Error::Design("non-finite coefficients".into()));
    }
    Ok(Sos { sections, order })
}

/// Bandpass Chebyshev type I at the minimal order meeting `spec`.
pub fn design_cheby1(spec: &FilterSpec) -> Result<Sos> {
    let n = cheby1_order(spec)?;
    let warp = |f: f64| 2.0 * spec.sample_rate * (PI * f / spec.sample_rate).tan();
    let (w1, w2) = (warp(spec.passband[0]), warp(spec.passband[1]));
    let bw = w2 - w1;
    let w0sq = w1 * w2;
    let proto = cheby1_prototype(n, spec.passband_ripple_db);
    let mut poles = Vec::with_capacity(2 * n);
    for p in &proto.poles {
        let half = p * bw / 2.0;
        let root = (half * half - w0sq).sqrt();
        poles.push(half + root);
        poles.push(half - root);
    }
    let analog = Zpk {
        zeros: vec![Complex64::new(0.0, 0.0); n],
        poles,
        gain: proto.gain * bw.powi(n as i32),
    };
    zpk_to_sos(bilinear(analog, spec.sample_rate))
}

/// Lowpass Chebyshev type I of a fixed order with passband edge `cutoff` Hz.
pub fn cheby1_lowpass(order: usize, ripple_db: f64, cutoff: f64, sample_rate: f64) -> Result<Sos> {
    if order == 0 || !(cutoff > 0.0 && cutoff < sample_rate / 2.0) || !(ripple_db > 0.0) {
        return Err(Error::Design(format!(
            "lowpass order {order}, ripple {ripple_db} dB, cutoff {cutoff} Hz at {sample_rate} Hz"
        )));
    }
    let wc = 2.0 * sample_rate * (PI * cutoff / sample_rate).tan();
    let proto = cheby1_prototype(order, ripple_db);
    let analog = Zpk {
        zeros: vec![],
        poles: proto.poles.iter().map(|p| p * wc).collect(),
        gain: proto.gain * wc.powi(order as i32),
    };
    zpk_to_sos(bilinear(analog, sample_rate))
}

fn run(sos: &Sos, x: &mut [f64], init: Option<f64>) {
    let states = sos.step_states();
    for (s, zi) in sos.sections.iter().zip(states) {
        let (mut z1, mut z2) = match init {
            Some(x0) => (zi[0] * x0, zi[1] * x0),
            None => (0.0, 0.0),
        };
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

/// Causal filtering from rest.
pub fn sosfilt(sos: &Sos, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    run(sos, &mut y, None);
    y
}

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions. Output length equals input length.
pub fn filtfilt(sos: &Sos, x: &[f64]) -> Result<Vec<f64>> {
    let pad = sos.pad_len();
    let n = x.len();
    if n <= pad {
        return Err(Error::TooShort { len: n, required: pad });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let first = ext[0];
    run(sos, &mut ext, Some(first));
    ext.reverse();
    let first = ext[0];
    run(sos, &mut ext, Some(first));
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

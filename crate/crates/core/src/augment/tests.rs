use super::*;
use crate::numcore::rng::rng_from;
use proptest::prelude::*;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

fn white(c: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(&[c, n], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

fn seg(data: Tensor) -> SegmentSample {
    SegmentSample { data, label: 7, subject: 3, block: 2, flat_channel: false }
}

// direct O(n^2) DFT of one channel
fn dft(x: &[f32]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| Complex64::from_polar(v as f64, -2.0 * PI * (k * t) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64).powi(2)).sum()
}

#[test]
fn identity_parameters_are_exact() {
    let s = seg(white(4, 250, 1));
    let mut rng = rng_from(2);
    assert_eq!(freq_mask(&s, 10, 0, &mut rng).unwrap(), s);
    assert_eq!(freq_mask(&s, 0, 3, &mut rng).unwrap(), s);
    assert_eq!(time_mask(&s, 30, 0, &mut rng).unwrap(), s);
    assert_eq!(phase_noise(&s, 0.0, &mut rng).unwrap(), s);
    assert_eq!(mag_noise(&s, 0.0, &mut rng).unwrap(), s);
    assert_eq!(salt_pepper(&s, 0.0, &mut rng).unwrap(), s);
    assert_eq!(rand_impulse(&s, 0.5, 20, 0, &mut rng).unwrap(), s);
    let never = AugSpec { kind: AugKind::SaltPepper { sigma: 5.0 }, p: 0.0 };
    assert_eq!(apply_pipeline(&s, &[never], 3, Mode::Train).unwrap(), s);
}

#[test]
fn freq_mask_zeroes_exactly_one_band() {
    let s = white(2, 250, 4);
    let before: Vec<Vec<Complex64>> = s.rows().map(dft).collect();
    for seed in 0..5 {
        let mut out = s.clone();
        let residue = freq_mask_in_place(&mut out, 12, 1, &mut rng_from(seed)).unwrap();
        assert!(residue < 1e-6, "{residue}");
        let mut zero_bins = Vec::new();
        for (c, row) in out.rows().enumerate() {
            let after = dft(row);
            for k in 1..=125 {
                let d = (after[k] - before[c][k]).norm();
                if after[k].norm() < 1e-5 {
                    if c == 0 {
                        zero_bins.push(k);
                    }
                } else {
                    assert!(d < 1e-5, "bin {k} moved by {d}");
                }
            }
            assert!(after[0].norm() > 1e-5 || before[c][0].norm() < 1e-5);
        }
        assert!(!zero_bins.is_empty() && zero_bins.len() <= 12);
        let w = zero_bins.len();
        assert_eq!(zero_bins[w - 1] - zero_bins[0] + 1, w, "band not contiguous: {zero_bins:?}");
    }
    let mut t = s.clone();
    assert!(freq_mask_in_place(&mut t, 126, 1, &mut rng_from(0)).is_err());
}

#[test]
fn time_mask_window_and_count_bound() {
    let s = Tensor::from_fn(&[3, 250], |i| 1.0 + i as f32);
    let mut out = s.clone();
    time_mask_in_place(&mut out, 40, 1, &mut rng_from(9)).unwrap();
    let zeros: Vec<usize> = (0..250).filter(|&t| out.data()[t] == 0.0).collect();
    let (t0, w) = (zeros[0], zeros.len());
    assert!((1..=40).contains(&w));
    for c in 0..3 {
        for t in 0..250 {
            let (a, b) = (out.data()[c * 250 + t], s.data()[c * 250 + t]);
            if (t0..t0 + w).contains(&t) {
                assert_eq!(a, 0.0);
            } else {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
    for seed in 0..500 {
        let (x, y) = (1 + seed as usize % 30, 1 + seed as usize % 4);
        let mut out = s.clone();
        time_mask_in_place(&mut out, x, y, &mut rng_from(seed)).unwrap();
        let masked = out.data()[..250].iter().filter(|&&v| v == 0.0).count();
        assert!(masked <= x * y);
    }
}

#[test]
fn phase_noise_keeps_magnitudes_and_energy() {
    let s = white(3, 250, 11);
    let mut out = s.clone();
    let residue = phase_noise_in_place(&mut out, 1.0, &mut rng_from(5)).unwrap();
    assert!(residue < 1e-6);
    assert_ne!(out, s);
    for (a, b) in s.rows().zip(out.rows()) {
        let (fa, fb) = (dft(a), dft(b));
        for k in 0..250 {
            let rel = (fa[k].norm() - fb[k].norm()).abs() / fa[k].norm();
            assert!(rel < 1e-5, "bin {k}: {rel}");
        }
        let (ea, eb) = (energy(a), energy(b));
        assert!(((ea - eb) / ea).abs() < 1e-5);
    }
}

#[test]
fn mag_noise_keeps_phases_and_scales_energy() {
    let s = white(2, 250, 12);
    let mut out = s.clone();
    mag_noise_in_place(&mut out, 0.3, &mut rng_from(6)).unwrap();
    for (a, b) in s.rows().zip(out.rows()) {
        let (fa, fb) = (dft(a), dft(b));
        for k in 0..250 {
            if fb[k].norm() > 1e-3 {
                let d = (fa[k] / fa[k].norm() - fb[k] / fb[k].norm()).norm();
                assert!(d < 1e-5, "bin {k}: {d}");
            }
        }
    }
    let x = white(1, 250, 13);
    let e0 = energy(x.data());
    let trials = 10_000;
    let mut total = 0.0;
    for seed in 0..trials {
        let mut out = x.clone();
        mag_noise_in_place(&mut out, 0.1, &mut rng_from(seed)).unwrap();
        total += energy(out.data()) / e0;
    }
    let mean = total / trials as f64;
    assert!((mean - 1.01).abs() / 1.01 < 0.01, "{mean}");
}

#[test]
fn salt_pepper_moments() {
    let s = seg(Tensor::zeros(&[64, 250]));
    let sigma = 0.7;
    let out = salt_pepper(&s, sigma, &mut rng_from(14)).unwrap();
    let n = 16_000.0;
    let d: Vec<f64> = out.data.data().iter().map(|&v| v as f64).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sigma / n.sqrt());
    assert!((sd - sigma).abs() / sigma < 0.02);
    assert_ne!(salt_pepper(&s, sigma, &mut rng_from(15)).unwrap(), out);
}

#[test]
fn single_echo_on_impulse() {
    for seed in 0..20 {
        let mut x = Tensor::zeros(&[1, 250]);
        x.data_mut()[30] = 1.0;
        rand_impulse_in_place(&mut x, 0.8, 40, 1, &mut rng_from(seed)).unwrap();
        assert_eq!(x.data()[30], 1.0);
        let rest: Vec<(usize, f32)> =
            x.data().iter().copied().enumerate().filter(|&(t, v)| v != 0.0 && t != 30).collect();
        assert!(rest.len() <= 1);
        if let [(t, a)] = rest[..] {
            let d = t - 30;
            assert!((1..=40).contains(&d) && a > 0.0 && a <= 0.8);
        }
    }
}

#[test]
fn echo_is_a_fixed_linear_operator() {
    let n = 60;
    let apply = |x: &Tensor| {
        let mut y = x.clone();
        rand_impulse_in_place(&mut y, 0.9, 25, 3, &mut rng_from(77)).unwrap();
        y
    };
    let cols: Vec<Tensor> = (0..n)
        .map(|i| apply(&Tensor::from_fn(&[1, n], |j| if i == j { 1.0 } else { 0.0 })))
        .collect();
    let r = white(1, n, 78);
    let got = apply(&r);
    for t in 0..n {
        let want: f64 = (0..n).map(|i| cols[i].data()[t] as f64 * r.data()[i] as f64).sum();
        assert!((got.data()[t] as f64 - want).abs() < 1e-5);
    }
    let mut x = Tensor::zeros(&[1, 250]);
    assert!(rand_impulse_in_place(&mut x, 0.5, 250, 1, &mut rng_from(0)).is_err());
    assert!(rand_impulse_in_place(&mut x, -0.5, 20, 1, &mut rng_from(0)).is_err());
}

#[test]
fn pipeline_contract() {
    let s = seg(white(2, 250, 20));
    assert_eq!(apply_pipeline(&s, &[], 1, Mode::Train).unwrap(), s);
    let ids = [
        AugSpec::new(AugKind::TimeMask { max_width: 20, max_count: 0 }),
        AugSpec::new(AugKind::PhaseNoise { sigma: 0.0 }),
    ];
    assert_eq!(apply_pipeline(&s, &ids, 1, Mode::Train).unwrap(), s);
    let specs = [
        AugSpec::new(AugKind::FreqMask { max_width: 10, max_count: 2 }),
        AugSpec::new(AugKind::RandImpulse { max_scale: 0.5, max_delay: 20, max_count: 2 }),
    ];
    let a = apply_pipeline(&s, &specs, 8, Mode::Train).unwrap();
    assert_eq!(a, apply_pipeline(&s, &specs, 8, Mode::Train).unwrap());
    assert_ne!(a.data, s.data);
    assert_eq!((a.label, a.subject, a.block), (7, 3, 2));
    assert!(matches!(apply_pipeline(&s, &specs, 8, Mode::Eval), Err(Error::EvalAugmentation)));
}

#[test]
fn specs_parse_from_toml_and_label() {
    #[derive(Deserialize)]
    struct Wrap {
        aug: Vec<AugSpec>,
    }
    let text = r#"
        [[aug]]
        kind = "freq_mask"
        max_width = 10
        max_count = 2

        [[aug]]
        kind = "rand_impulse"
        max_scale = 0.5
        max_delay = 20
        max_count = 3
        p = 0.5
    "#;
    let w: Wrap = toml::from_str(text).unwrap();
    assert_eq!(w.aug[0].label(), "Freq mask; 10, 2");
    assert_eq!(w.aug[1].label(), "Rand imp; 0.5, 20, 3");
    assert_eq!(w.aug[0].p, 1.0);
    assert!(toml::from_str::<Wrap>("[[aug]]\nkind = \"time_mask\"\nmax_width = -1\nmax_count = 1\n").is_err());
    assert!(AugSpec { kind: AugKind::SaltPepper { sigma: 1.0 }, p: 1.5 }.validate().is_err());
    assert!(AugSpec::new(AugKind::PhaseNoise { sigma: -0.1 }).validate().is_err());
}

fn any_spec() -> impl Strategy<Value = AugSpec> {
    prop_oneof![
        (0usize..=125, 0usize..4).prop_map(|(x, y)| AugKind::FreqMask { max_width: x, max_count: y }),
        (0usize..=250, 0usize..4).prop_map(|(x, y)| AugKind::TimeMask { max_width: x, max_count: y }),
        (0.0f64..3.0).prop_map(|s| AugKind::PhaseNoise { sigma: s }),
        (0.0f64..1.0).prop_map(|s| AugKind::MagNoise { sigma: s }),
        (0.0f64..2.0).prop_map(|s| AugKind::SaltPepper { sigma: s }),
        (0.0f64..1.0, 1usize..250, 0usize..4)
            .prop_map(|(a, d, k)| AugKind::RandImpulse { max_scale: a, max_delay: d, max_count: k }),
    ]
    .prop_map(AugSpec::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_operator_preserves_shape_and_metadata(spec in any_spec(), seed in any::<u64>()) {
        let s = seg(white(4, 250, seed));
        let out = apply_pipeline(&s, std::slice::from_ref(&spec), seed, Mode::Train).unwrap();
        prop_assert_eq!(out.data.shape(), &[4, 250]);
        prop_assert_eq!((out.label, out.subject, out.block), (7, 3, 2));
        prop_assert!(out.data.all_finite());
    }
}

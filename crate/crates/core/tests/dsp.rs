//! Feature extraction against direct, naive re-computations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressnas::dataset::Channel;
use stressnas::featbank::{
    channel_stats, compute_filterbank, frame_and_window, hamming, power_spectrum, triangular_filterbank,
    FeatureError, FilterBankConfig,
};

fn naive_power(frame: &[f64], nfft: usize) -> Vec<f64> {
    (0..=nfft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / nfft as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            (re * re + im * im) / nfft as f64
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn power_spectrum_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let nfft = 1usize << rng.random_range(3..=9);
        let len = rng.random_range(nfft / 2..=nfft);
        let frame: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = power_spectrum(&frame, nfft).unwrap();
        let slow = naive_power(&frame, nfft);
        assert_eq!(fast.len(), nfft / 2 + 1);
        assert!(rel(&fast, &slow) < 1e-9, "nfft {nfft}: {}", rel(&fast, &slow));
    }
}

#[test]
fn parseval_on_one_sided_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for nfft in [8, 64, 512] {
        let x: Vec<f64> = (0..nfft).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = power_spectrum(&x, nfft).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let h = nfft / 2;
        let spec = p[0] + p[h] + 2.0 * p[1..h].iter().sum::<f64>();
        assert!((spec - energy).abs() < 1e-9 * energy);
    }
}

#[test]
fn spectrum_rejects_bad_sizes() {
    assert!(matches!(power_spectrum(&[1.0; 4], 12), Err(FeatureError::NotPowerOfTwo(12))));
    assert!(matches!(
        power_spectrum(&[1.0; 9], 8),
        Err(FeatureError::FrameTooLong { frame: 9, nfft: 8 })
    ));
}

#[test]
fn filterbank_partition_of_unity_on_interior_bins() {
    for (nfft, m) in [(32, 16), (64, 10), (512, 16), (512, 40), (256, 7)] {
        let f = triangular_filterbank(nfft, m).unwrap();
        let half = nfft / 2;
        let first = half as f64 / (m + 1) as f64;
        let last = m as f64 * first;
        for k in 0..=half {
            let s: f64 = f.iter().map(|row| row[k]).sum();
            let kf = k as f64;
            if kf >= first && kf <= last {
                assert!((s - 1.0).abs() < 1e-9, "nfft {nfft} m {m} bin {k}: {s}");
            }
            assert!(s <= 1.0 + 1e-12);
        }
        assert!(f.iter().flatten().all(|&w| (0.0..=1.0).contains(&w)));
    }
    assert!(triangular_filterbank(8, 5).is_err());
}

#[test]
fn framing_matches_direct_indexing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let rate = [4.0, 32.0, 64.0][rng.random_range(0..3)];
        let len_s = rng.random_range(1..=8) as f64;
        let shift_s = rng.random_range(1..=4) as f64 * 0.5;
        let n = rng.random_range((len_s * rate) as usize..(len_s * rate) as usize + 300);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = frame_and_window(&x, rate, len_s, shift_s).unwrap();
        let len = (len_s * rate) as usize;
        let shift = (shift_s * rate) as usize;
        let mut expected = 0;
        while expected * shift + len <= n {
            expected += 1;
        }
        assert_eq!(frames.len(), expected);
        for (f, frame) in frames.iter().enumerate() {
            for (i, v) in frame.iter().enumerate() {
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                assert!((v - x[f * shift + i] * w).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn hamming_is_symmetric_with_fixed_ends() {
    for n in [2, 5, 32, 512] {
        let w = hamming(n);
        assert!((w[0] - 0.08).abs() < 1e-15 && (w[n - 1] - 0.08).abs() < 1e-15);
        for i in 0..n {
            assert!((w[i] - w[n - 1 - i]).abs() < 1e-12);
        }
    }
}

#[test]
fn sinusoid_peaks_on_its_filter() {
    let rate = 64.0;
    let cfg = FilterBankConfig {
        mean_normalize: false,
        ..Default::default()
    };
    for target in [2usize, 7, 12] {
        // filter centres sit at (target + 1)/17 of Nyquist
        let f = (target + 1) as f64 / 17.0 * rate / 2.0;
        let x: Vec<f64> = (0..3840).map(|i| (2.0 * PI * f * i as f64 / rate).sin()).collect();
        let img = compute_filterbank(&x, rate, Channel::Bvp, &cfg).unwrap();
        assert_eq!((img.rows, img.cols), (27, 16));
        for r in 0..img.rows {
            let best = (0..img.cols)
                .max_by(|&a, &b| img.at(r, a).total_cmp(&img.at(r, b)))
                .unwrap();
            assert_eq!(best, target);
        }
    }
}

#[test]
fn constant_windows_normalize_to_zero_and_shift_invariance() {
    let cfg = FilterBankConfig::default();
    let img = compute_filterbank(&[4.2; 240], 4.0, Channel::Eda, &cfg).unwrap();
    assert!(img.values.iter().all(|v| v.abs() < 1e-12));

    // column-mean normalization removes any per-filter gain, so scaling the
    // input changes nothing once log energies are far above the floor
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..240).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 10.0 * v).collect();
    let a = compute_filterbank(&x, 4.0, Channel::Eda, &cfg).unwrap();
    let b = compute_filterbank(&y, 4.0, Channel::Eda, &cfg).unwrap();
    assert!(rel(&a.values, &b.values) < 1e-6);
    for c in 0..a.cols {
        let mean: f64 = (0..a.rows).map(|r| a.at(r, c)).sum::<f64>() / a.rows as f64;
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn filterbank_rejects_short_and_nonfinite_input() {
    let cfg = FilterBankConfig::default();
    assert!(matches!(
        compute_filterbank(&[0.0; 31], 4.0, Channel::Eda, &cfg),
        Err(FeatureError::TooShort { needed: 32, .. })
    ));
    let mut x = vec![0.0; 64];
    x[10] = f64::INFINITY;
    assert!(compute_filterbank(&x, 4.0, Channel::Eda, &cfg).is_err());
}

#[test]
fn channel_statistics_match_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let n = rng.random_range(2..500);
        let rate = [4.0, 32.0, 64.0][rng.random_range(0..3)];
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = channel_stats(&x, rate);

        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        // least squares via the normal equations on raw sums
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let (st, sx, stt, stx) = t.iter().zip(&x).fold((0.0, 0.0, 0.0, 0.0), |a, (ti, xi)| {
            (a.0 + ti, a.1 + xi, a.2 + ti * ti, a.3 + ti * xi)
        });
        let nf = n as f64;
        let slope = (nf * stx - st * sx) / (nf * stt - st * st);
        let expected = [mean, sd, sorted[0], sorted[n - 1], sorted[n - 1] - sorted[0], slope];
        for (a, b) in s.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{s:?} vs {expected:?}");
        }
    }
}

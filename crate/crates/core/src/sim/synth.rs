//! Synthetic speech-like and noise sources for corpus generation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Vowel formant frequencies and bandwidths (Hz).
const VOWELS: [[(f64, f64); 3]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0)],
    [(270.0, 60.0), (2290.0, 100.0), (3010.0, 120.0)],
    [(300.0, 60.0), (870.0, 90.0), (2240.0, 150.0)],
    [(530.0, 70.0), (1840.0, 100.0), (2480.0, 160.0)],
    [(570.0, 80.0), (840.0, 90.0), (2410.0, 160.0)],
];

fn formant_gain(f: f64, vowel: &[(f64, f64); 3]) -> f64 {
    vowel
        .iter()
        .enumerate()
        .map(|(i, &(fc, bw))| {
            let r = (f - fc) / bw;
            0.5f64.powi(i as i32) / (1.0 + r * r)
        })
        .sum()
}

/// Level of the broadband recording floor relative to the clip peak.
const FLOOR_REL: f64 = 1e-3;
/// Aspiration noise amplitude relative to the voiced amplitude.
const ASPIRATION_REL: f64 = 0.03;

/// Speech-like signal: voiced syllables with a gliding pitch, formant
/// envelope and aspiration noise, separated by pauses and occasional
/// fricative bursts, over a white recording floor. Peak amplitude 0.5.
pub fn synth_speech(num_samples: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let mut out = vec![0.0; num_samples];
    let base_f0: f64 = rng.random_range(90.0..220.0);
    let mut pos = (rng.random_range(0.0..0.1) * fs) as usize;
    while pos < num_samples {
        let len = (rng.random_range(0.12..0.32) * fs) as usize;
        let end = (pos + len).min(num_samples);
        if rng.random_bool(0.2) {
            // fricative: high-passed noise burst
            let mut prev = 0.0;
            for n in pos..end {
                let w: f64 = StandardNormal.sample(&mut rng);
                let env = (PI * (n - pos) as f64 / len as f64).sin();
                out[n] += 0.15 * env * (w - prev);
                prev = w;
            }
        } else {
            let vowel = &VOWELS[rng.random_range(0..VOWELS.len())];
            let f0a = base_f0 * rng.random_range(0.85..1.15);
            let f0b = base_f0 * rng.random_range(0.85..1.15);
            let amp = rng.random_range(0.4..1.0);
            let mut phase = 0.0;
            let n_harm = ((0.45 * fs / f0a.max(f0b)) as usize).max(1);
            let gains: Vec<f64> = (1..=n_harm)
                .map(|h| formant_gain(h as f64 * 0.5 * (f0a + f0b), vowel) / (h as f64).sqrt())
                .collect();
            for n in pos..end {
                let u = (n - pos) as f64 / len as f64;
                let f0 = f0a + (f0b - f0a) * u;
                phase += 2.0 * PI * f0 / fs;
                let env = (PI * u).sin().powf(0.7);
                let v: f64 = gains
                    .iter()
                    .enumerate()
                    .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
                    .sum();
                let w: f64 = StandardNormal.sample(&mut rng);
                out[n] += amp * env * (v + ASPIRATION_REL * w);
            }
        }
        pos = end + (rng.random_range(0.03..0.25) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in out.iter_mut() {
        let w: f64 = StandardNormal.sample(&mut rng);
        *v += FLOOR_REL * peak * w;
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// Colored Gaussian noise: white noise through a random one-pole
/// low-pass mixed with a pink component. Peak amplitude 0.5.
pub fn synth_noise(num_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole = rng.random_range(0.0..0.95);
    let pink_mix = rng.random_range(0.0..1.0);
    let mut lp = 0.0;
    let mut b = [0.0f64; 3];
    let mut out = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let w: f64 = StandardNormal.sample(&mut rng);
        lp = pole * lp + (1.0 - pole) * w;
        // three-pole pink approximation
        b[0] = 0.99765 * b[0] + w * 0.0990460;
        b[1] = 0.96300 * b[1] + w * 0.2965164;
        b[2] = 0.57000 * b[2] + w * 1.0526913;
        let pink = b[0] + b[1] + b[2] + w * 0.1848;
        out.push((1.0 - pink_mix) * lp + pink_mix * 0.25 * pink);
    }
    normalize_peak(&mut out, 0.5);
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

//! Reverberant dual-microphone mixture rendering.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{image_method_rir, Position, SceneSpec};
use crate::dsp::{irfft, rfft, AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Sources in the diffuse-noise ring.
pub const NOISE_SOURCES: usize = 8;
pub const NOISE_RING_RADIUS: f64 = 2.5;
const NOISE_RING_STREAM: u64 = 0x6e6f_6973_6572_696e;

/// Rendered scene. `target` is the speech image at mic 1 with the
/// same gain it carries inside `mix`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mix: AudioBuffer,
    pub target: AudioBuffer,
    /// Overall gain applied to every component.
    pub gain: f64,
    pub interferer_gain: f64,
    pub noise_gain: f64,
    pub clipped: bool,
}

/// Linear convolution via FFT, full length `x.len() + h.len() - 1`.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let len = x.len() + h.len() - 1;
    let n = len.next_power_of_two();
    let xf = rfft(x, n);
    let hf = rfft(h, n);
    let prod: Vec<_> = xf.iter().zip(&hf).map(|(a, b)| a * b).collect();
    let mut y = irfft(&prod, n);
    y.truncate(len);
    y
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// `clip` looped and circularly shifted by `shift` to `n` samples.
fn fit_clip(clip: &[f64], n: usize, shift: usize) -> Vec<f64> {
    (0..n).map(|i| clip[(i + shift) % clip.len()]).collect()
}

fn mono_clip<'a>(what: &str, a: &'a AudioBuffer) -> Result<&'a [f64]> {
    a.require_pipeline_rate()?;
    if a.num_channels() != 1 || a.num_samples() == 0 {
        return Err(Error::invalid(format!("{what} clip must be mono and non-empty")));
    }
    Ok(a.channel(0))
}

fn noise_ring(scene: &SceneSpec) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ NOISE_RING_STREAM);
    let offset = rng.random_range(0.0..2.0 * PI);
    let m = scene.mic1_pos;
    (0..NOISE_SOURCES)
        .map(|j| {
            let a = offset + 2.0 * PI * j as f64 / NOISE_SOURCES as f64;
            [m[0] + NOISE_RING_RADIUS * a.cos(), m[1] + NOISE_RING_RADIUS * a.sin(), m[2]]
        })
        .collect()
}

/// Reverberant images of `signal` emitted at `pos`, truncated to `n`.
fn images(scene: &SceneSpec, pos: Position, signal: &[f64], n: usize) -> Result<[Vec<f64>; 2]> {
    let mut out = [Vec::new(), Vec::new()];
    for (o, mic) in out.iter_mut().zip([scene.mic1_pos, scene.mic2_pos]) {
        let rir = image_method_rir(&scene.room, pos, mic, SAMPLE_RATE)?;
        let mut y = fft_convolve(signal, &rir.taps);
        y.resize(n, 0.0);
        *o = y;
    }
    Ok(out)
}

fn sum_images(parts: Vec<[Vec<f64>; 2]>, n: usize) -> [Vec<f64>; 2] {
    let mut acc = [vec![0.0; n], vec![0.0; n]];
    for p in parts {
        for (a, c) in acc.iter_mut().zip(p) {
            a.iter_mut().zip(c).for_each(|(x, y)| *x += y);
        }
    }
    acc
}

/// Spatializes speech, interferers and ring noise and mixes them at the
/// scene's SIR, SNR and level. Clip `k` of a pool is looped to the speech
/// length and circularly shifted by `k * N / count` samples.
pub fn render_mixture(
    scene: &SceneSpec,
    speech: &AudioBuffer,
    interferers: &[AudioBuffer],
    noise: &[AudioBuffer],
) -> Result<Mixture> {
    scene.validate()?;
    let s = mono_clip("speech", speech)?;
    let n = s.len();
    if s.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("speech clip is silent"));
    }
    let n_int = scene.interferer_positions.len();
    if n_int > 0 && interferers.is_empty() {
        return Err(Error::invalid(format!("{n_int} interferer positions but no interferer clips")));
    }
    let with_noise = scene.snr_db.is_finite();
    if with_noise && noise.is_empty() {
        return Err(Error::invalid("finite SNR requires at least one noise clip"));
    }
    let int_clips = interferers
        .iter()
        .map(|a| mono_clip("interferer", a))
        .collect::<Result<Vec<_>>>()?;
    let noise_clips = noise
        .iter()
        .map(|a| mono_clip("noise", a))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs: Vec<(Position, Vec<f64>)> = Vec::new();
    for (k, &p) in scene.interferer_positions.iter().enumerate() {
        jobs.push((p, fit_clip(int_clips[k % int_clips.len()], n, k * n / n_int)));
    }
    if with_noise {
        for (j, p) in noise_ring(scene).into_iter().enumerate() {
            let clip = noise_clips[j % noise_clips.len()];
            jobs.push((p, fit_clip(clip, n, j * n / NOISE_SOURCES)));
        }
    }
    let mut rendered = std::iter::once((scene.source_pos, s.to_vec()))
        .chain(jobs)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(p, sig)| images(scene, p, &sig, n))
        .collect::<Result<Vec<_>>>()?;
    let noise_parts = rendered.split_off(1 + n_int);
    let int_parts = rendered.split_off(1);
    let [s1, s2] = rendered.pop().expect("speech images");

    let ps = power(&s1);
    if !(ps > 0.0) {
        return Err(Error::invalid("speech image at mic 1 is silent"));
    }
    let mut mix = [s1.clone(), s2];
    let mut gi = 0.0;
    if n_int > 0 {
        let [i1, i2] = sum_images(int_parts, n);
        let pi = power(&i1);
        if pi > 0.0 {
            gi = (ps / (pi * 10f64.powf(scene.sir_db / 10.0))).sqrt();
            for (m, c) in mix.iter_mut().zip([i1, i2]) {
                m.iter_mut().zip(c).for_each(|(x, y)| *x += gi * y);
            }
        }
    }
    let mut gn = 0.0;
    if with_noise {
        let [n1, n2] = sum_images(noise_parts, n);
        let pn = power(&n1);
        if pn > 0.0 {
            gn = (ps / (pn * 10f64.powf(scene.snr_db / 10.0))).sqrt();
            for (m, c) in mix.iter_mut().zip([n1, n2]) {
                m.iter_mut().zip(c).for_each(|(x, y)| *x += gn * y);
            }
        }
    }
    let peak = mix.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let rms = (power(&mix[0]) / (peak * peak)).sqrt();
    let gain = 10f64.powf(scene.level_db / 20.0) / rms / peak;
    let mut clipped = false;
    for ch in mix.iter_mut() {
        for v in ch.iter_mut() {
            *v *= gain;
            if v.abs() > 1.0 {
                *v = v.clamp(-1.0, 1.0);
                clipped = true;
            }
        }
    }
    if clipped {
        log::warn!("scene {}: mixture clipped after level scaling", scene.seed);
    }
    let target: Vec<f64> = s1.iter().map(|v| v * gain).collect();
    Ok(Mixture {
        mix: AudioBuffer::new(mix.to_vec(), SAMPLE_RATE)?,
        target: AudioBuffer::mono(target, SAMPLE_RATE)?,
        gain,
        interferer_gain: gi,
        noise_gain: gn,
        clipped,
    })
}

//! STFT analysis/synthesis and the audio containers shared by every stage.
//!
//! Framing is causal: the signal is left-padded with `win_len - hop` zeros so
//! frame `l` only sees samples `< l * hop + hop` of the original signal.

mod fft;
pub mod wav;

pub use rustfft::num_complex::Complex64;

pub(crate) use fft::{irfft, irfft_adjoint, rfft, rfft_adjoint};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Multi-channel time-domain audio, `samples[channel][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("audio buffer needs at least one channel"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let n = samples[0].len();
        if samples.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channels have different lengths"));
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("audio contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.samples[ch]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// Pipeline entry points only accept 16 kHz material.
    pub fn require_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate {} Hz not supported, expected {} Hz",
                self.sample_rate, SAMPLE_RATE
            )));
        }
        Ok(())
    }
}

/// Square root of the periodic Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let h = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos();
            h.sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    win_len: usize,
    hop: usize,
    fft_size: usize,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    /// Constant value of `sum_m analysis[n + m*hop] * synthesis[n + m*hop]`.
    ola_gain: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::new(512, 256, 512).expect("default STFT config satisfies COLA")
    }
}

impl StftConfig {
    /// Square-root Hann analysis and synthesis windows.
    pub fn new(win_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        let w = sqrt_hann(win_len);
        Self::with_windows(hop, fft_size, w.clone(), w)
    }

    pub fn with_windows(
        hop: usize,
        fft_size: usize,
        analysis: Vec<f64>,
        synthesis: Vec<f64>,
    ) -> Result<Self> {
        let win_len = analysis.len();
        if win_len == 0 || hop == 0 {
            return Err(Error::config("window length and hop must be positive"));
        }
        if synthesis.len() != win_len {
            return Err(Error::config("analysis/synthesis windows differ in length"));
        }
        if hop > win_len {
            return Err(Error::config(format!("hop {hop} exceeds window {win_len}")));
        }
        if fft_size < win_len {
            return Err(Error::config(format!(
                "fft size {fft_size} smaller than window {win_len}"
            )));
        }
        let sums: Vec<f64> = (0..hop)
            .map(|n| {
                (n..win_len)
                    .step_by(hop)
                    .map(|i| analysis[i] * synthesis[i])
                    .sum()
            })
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        let mean = sums.iter().sum::<f64>() / hop as f64;
        if mean <= 0.0 || (max - min) > 1e-10 * mean.abs().max(1.0) {
            return Err(Error::config(format!(
                "window pair violates COLA at hop {hop} (spread {:e})",
                max - min
            )));
        }
        Ok(Self {
            win_len,
            hop,
            fft_size,
            analysis,
            synthesis,
            ola_gain: mean,
        })
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn analysis_window(&self) -> &[f64] {
        &self.analysis
    }

    pub fn synthesis_window(&self) -> &[f64] {
        &self.synthesis
    }

    /// Causal left padding applied before framing.
    pub fn left_pad(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        let padded = (num_samples + self.left_pad()).max(self.win_len);
        (padded - self.win_len) / self.hop + 1
    }

    /// Windowed one-sided spectrum of one `win_len` segment.
    pub fn analyze_frame(&self, segment: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(segment.len(), self.win_len);
        let windowed: Vec<f64> = segment
            .iter()
            .zip(&self.analysis)
            .map(|(x, w)| x * w)
            .collect();
        rfft(&windowed, self.fft_size)
    }

    /// Time-domain contribution of one frame before overlap-add, already
    /// multiplied by the synthesis window and divided by the OLA gain.
    pub fn synthesize_frame(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let time = irfft(spectrum, self.fft_size);
        let scale = 1.0 / self.ola_gain;
        time.iter()
            .zip(&self.synthesis)
            .map(|(x, w)| x * w * scale)
            .collect()
    }

    /// Adjoint of [`Self::synthesize_frame`].
    pub fn synthesize_frame_adjoint(&self, grad: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(grad.len(), self.win_len);
        let scale = 1.0 / self.ola_gain;
        let g: Vec<f64> = grad
            .iter()
            .zip(&self.synthesis)
            .map(|(g, w)| g * w * scale)
            .collect();
        irfft_adjoint(&g, self.fft_size)
    }
}

/// Complex T-F coefficients, logically `[channels x F x T]`.
///
/// Stored frame-major (`[channel][frame][bin]`) so per-frame processing works
/// on contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    channels: usize,
    bins: usize,
    frames: usize,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); channels * bins * frames],
            channels,
            bins,
            frames,
        }
    }

    pub fn from_frames(channels: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        let ch = channels.len();
        if ch == 0 {
            return Err(Error::invalid("spectrogram needs at least one channel"));
        }
        let frames = channels[0].len();
        let bins = channels[0].first().map_or(0, |f| f.len());
        let mut data = Vec::with_capacity(ch * frames * bins);
        for c in &channels {
            if c.len() != frames || c.iter().any(|f| f.len() != bins) {
                return Err(Error::shape("ragged spectrogram frames"));
            }
            for f in c {
                data.extend_from_slice(f);
            }
        }
        Ok(Self {
            data,
            channels: ch,
            bins,
            frames,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    fn offset(&self, ch: usize, frame: usize) -> usize {
        (ch * self.frames + frame) * self.bins
    }

    pub fn get(&self, ch: usize, bin: usize, frame: usize) -> Complex64 {
        self.data[self.offset(ch, frame) + bin]
    }

    pub fn set(&mut self, ch: usize, bin: usize, frame: usize, v: Complex64) {
        let o = self.offset(ch, frame);
        self.data[o + bin] = v;
    }

    pub fn frame(&self, ch: usize, frame: usize) -> &[Complex64] {
        let o = self.offset(ch, frame);
        &self.data[o..o + self.bins]
    }

    pub fn frame_mut(&mut self, ch: usize, frame: usize) -> &mut [Complex64] {
        let o = self.offset(ch, frame);
        &mut self.data[o..o + self.bins]
    }

    /// Single-channel copy of channel `ch`.
    pub fn channel(&self, ch: usize) -> ComplexSpectrogram {
        let o = self.offset(ch, 0);
        Self {
            data: self.data[o..o + self.frames * self.bins].to_vec(),
            channels: 1,
            bins: self.bins,
            frames: self.frames,
        }
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

/// Causal STFT of every channel.
pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if audio.num_samples() == 0 {
        return Err(Error::invalid("empty audio"));
    }
    let channels = audio
        .channels()
        .iter()
        .map(|x| stft_channel(x, cfg))
        .collect::<Result<Vec<_>>>()?;
    ComplexSpectrogram::from_frames(channels)
}

pub(crate) fn stft_channel(x: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<Complex64>>> {
    if x.is_empty() {
        return Err(Error::invalid("empty audio"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("audio contains non-finite samples"));
    }
    let pad = cfg.left_pad();
    let frames = cfg.num_frames(x.len());
    let mut segment = vec![0.0; cfg.win_len];
    Ok((0..frames)
        .map(|l| {
            let start = (l * cfg.hop) as isize - pad as isize;
            for (n, s) in segment.iter_mut().enumerate() {
                let i = start + n as isize;
                *s = if i >= 0 && (i as usize) < x.len() {
                    x[i as usize]
                } else {
                    0.0
                };
            }
            cfg.analyze_frame(&segment)
        })
        .collect())
}

/// Overlap-add synthesis of every channel, trimmed to `out_len` samples.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<AudioBuffer> {
    if spec.num_bins() != cfg.num_bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, config expects {}",
            spec.num_bins(),
            cfg.num_bins()
        )));
    }
    let channels = (0..spec.num_channels())
        .map(|ch| {
            let frames: Vec<&[Complex64]> =
                (0..spec.num_frames()).map(|l| spec.frame(ch, l)).collect();
            istft_channel(&frames, cfg, out_len)
        })
        .collect();
    AudioBuffer::new(channels, SAMPLE_RATE)
}

pub(crate) fn istft_channel(frames: &[&[Complex64]], cfg: &StftConfig, out_len: usize) -> Vec<f64> {
    let pad = cfg.left_pad();
    let mut out = vec![0.0; out_len];
    for (l, spectrum) in frames.iter().enumerate() {
        let seg = cfg.synthesize_frame(spectrum);
        let start = (l * cfg.hop) as isize - pad as isize;
        for (n, v) in seg.iter().enumerate() {
            let i = start + n as isize;
            if i >= 0 && (i as usize) < out_len {
                out[i as usize] += v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_config_dimensions() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.num_bins(), 257);
        assert_eq!(cfg.left_pad(), 256);
        assert!((cfg.ola_gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(StftConfig::new(512, 600, 512).is_err());
        assert!(StftConfig::new(512, 256, 256).is_err());
        // plain sqrt-hann at hop 384 is not COLA
        assert!(StftConfig::new(512, 384, 512).is_err());
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let cfg = StftConfig::default();
        let frame = cfg.analyze_frame(&vec![1.0; 512]);
        let wsum: f64 = cfg.analysis_window().iter().sum();
        assert!((frame[0].re - wsum).abs() < 1e-9);
        assert!(frame[0].im.abs() < 1e-9);
        // sqrt-hann leaks into a handful of low bins but nothing compares to DC
        let rest = frame[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(rest < 0.5 * wsum);
    }

    #[test]
    fn on_grid_cosine_peaks_at_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..8000)
            .map(|n| (2.0 * std::f64::consts::PI * 16.0 * n as f64 / 512.0).cos())
            .collect();
        let spec = stft(&AudioBuffer::mono(x, SAMPLE_RATE).unwrap(), &cfg).unwrap();
        for l in 2..spec.num_frames() - 2 {
            let argmax = (0..spec.num_bins())
                .max_by(|&a, &b| {
                    spec.get(0, a, l)
                        .norm()
                        .partial_cmp(&spec.get(0, b, l).norm())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(argmax, 16);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let x = noise(16000, 3);
        let frames = stft_channel(&x, &cfg).unwrap();
        let pad = cfg.left_pad() as isize;
        for (l, f) in frames.iter().enumerate() {
            let spec_energy: f64 = f
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let w = if k == 0 || k == 256 { 1.0 } else { 2.0 };
                    w * c.norm_sqr()
                })
                .sum::<f64>()
                / 512.0;
            let time_energy: f64 = (0..512)
                .map(|n| {
                    let i = (l * 256) as isize - pad + n as isize;
                    let s = if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { 0.0 };
                    (s * cfg.analysis_window()[n]).powi(2)
                })
                .sum();
            assert!((spec_energy - time_energy).abs() <= 1e-6 * time_energy.max(1e-300));
        }
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::default();
        let x = noise(16000, 11);
        let audio = AudioBuffer::mono(x.clone(), SAMPLE_RATE).unwrap();
        let y = istft(&stft(&audio, &cfg).unwrap(), &cfg, x.len()).unwrap();
        let (a, b) = (512, x.len() - 512);
        let err: f64 = (a..b).map(|i| (x[i] - y.channel(0)[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (a..b).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
        assert!(err / norm <= 1e-6, "relative error {}", err / norm);
    }

    #[test]
    fn zero_spectrogram_gives_zero_audio() {
        let cfg = StftConfig::default();
        let spec = ComplexSpectrogram::zeros(1, 257, 10);
        let y = istft(&spec, &cfg, 2000).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_impulse_is_window_squared() {
        // frame 1 spans original samples [0, 512); impulse at n0 inside it
        let cfg = StftConfig::default();
        let n0 = 100;
        let mut seg = vec![0.0; 512];
        seg[n0] = 1.0;
        let mut spec = ComplexSpectrogram::zeros(1, 257, 2);
        spec.frame_mut(0, 1).copy_from_slice(&cfg.analyze_frame(&seg));
        let y = istft(&spec, &cfg, 512).unwrap();
        let w = cfg.analysis_window()[n0];
        for (i, v) in y.channel(0).iter().enumerate() {
            let expect = if i == n0 { w * w } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "sample {i}: {v} vs {expect}");
        }
    }

    #[test]
    fn istft_rejects_mismatched_config() {
        let spec = ComplexSpectrogram::zeros(1, 129, 4);
        assert!(istft(&spec, &StftConfig::default(), 100).is_err());
    }

    #[test]
    fn stft_rejects_empty_and_non_finite() {
        let cfg = StftConfig::default();
        assert!(stft_channel(&[], &cfg).is_err());
        assert!(stft_channel(&[0.0, f64::NAN], &cfg).is_err());
        assert!(AudioBuffer::mono(vec![f64::INFINITY], SAMPLE_RATE).is_err());
    }

    #[test]
    fn causal_framing() {
        let cfg = StftConfig::default();
        let x = noise(4000, 5);
        let mut y = x.clone();
        let i = 2000;
        y[i] += 1.0;
        let a = stft_channel(&x, &cfg).unwrap();
        let b = stft_channel(&y, &cfg).unwrap();
        for l in 0..a.len() {
            let changed = a[l] != b[l];
            if changed {
                assert!(l * cfg.hop() + cfg.win_len() > i);
            }
            // frames ending before the perturbation must be untouched
            if l * cfg.hop() + cfg.hop() <= i {
                assert!(!changed, "frame {l} changed");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_any_signal(seed in any::<u64>(), len in 1500usize..6000) {
                let cfg = StftConfig::default();
                let x = noise(len, seed);
                let frames = stft_channel(&x, &cfg).unwrap();
                let refs: Vec<&[Complex64]> = frames.iter().map(|f| f.as_slice()).collect();
                let y = istft_channel(&refs, &cfg, len);
                let (a, b) = (512, len - 512);
                let err: f64 = (a..b).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = (a..b).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
                prop_assert!(err <= 1e-6 * norm);
            }

            #[test]
            fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let cfg = StftConfig::default();
                let x = noise(3000, seed);
                let y = noise(3000, seed.wrapping_add(1));
                let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let (fx, fy, fz) = (
                    stft_channel(&x, &cfg).unwrap(),
                    stft_channel(&y, &cfg).unwrap(),
                    stft_channel(&z, &cfg).unwrap(),
                );
                let mut diff = 0.0f64;
                let mut norm = 0.0f64;
                for l in 0..fz.len() {
                    for k in 0..257 {
                        let e = fx[l][k] * a + fy[l][k] * b;
                        diff += (fz[l][k] - e).norm_sqr();
                        norm += e.norm_sqr();
                    }
                }
                prop_assert!(diff.sqrt() <= 1e-9 * norm.sqrt().max(1e-12));
            }
        }
    }
}

//! RIFF WAV I/O restricted to the formats the pipeline understands:
//! 16-bit integer or 32-bit float PCM, mono or stereo, 16 kHz.

use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate),
        ));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(wav_err(
            path,
            format!("{} channels, expected mono or stereo", spec.channels),
        ));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported sample format {fmt:?} {bits}-bit, expected 16-bit int or 32-bit float"),
            ))
        }
    }
    .map_err(|e| wav_err(path, e.to_string()))?;
    let ch = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / ch); ch];
    for frame in interleaved.chunks_exact(ch) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    AudioBuffer::new(channels, spec.sample_rate).map_err(|e| wav_err(path, e.to_string()))
}

/// Writes 32-bit float PCM.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    if audio.num_channels() > 2 {
        return Err(wav_err(path, "only mono or stereo output is supported"));
    }
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for n in 0..audio.num_samples() {
        for c in audio.channels() {
            writer
                .write_sample(c[n] as f32)
                .map_err(|e| wav_err(path, e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

/// Writes 16-bit integer PCM, clamping to the representable range.
pub fn write_wav_pcm16(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for n in 0..audio.num_samples() {
        for c in audio.channels() {
            let v = (c[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(v)
                .map_err(|e| wav_err(path, e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let left: Vec<f64> = (0..100).map(|i| ((i as f32) * 0.01).sin() as f64).collect();
        let right: Vec<f64> = left.iter().map(|v| -v * 0.5).collect();
        let audio = AudioBuffer::new(vec![left, right], SAMPLE_RATE).unwrap();
        write_wav(&p, &audio).unwrap();
        assert_eq!(read_wav(&p).unwrap(), audio);
    }

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let x: Vec<f64> = (0..50).map(|i| (i as f64 - 25.0) / 32768.0).collect();
        let audio = AudioBuffer::mono(x, SAMPLE_RATE).unwrap();
        write_wav_pcm16(&p, &audio).unwrap();
        assert_eq!(read_wav(&p).unwrap(), audio);
    }

    #[test]
    fn rejects_wrong_rate_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("44100"), "{err}");

        let q = dir.path().join("d.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&q, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&q).unwrap_err().to_string();
        assert!(err.contains("24-bit"), "{err}");
    }
}

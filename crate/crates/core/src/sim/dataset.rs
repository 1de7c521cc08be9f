//! Corpus rendering and the scene manifest.
//!
//! Manifest columns (CSV with header):
//! `id,seed,rt60,snr_db,sir_db,level_db,mic_distance,zenith_deg,num_interferers,speech,interferers,noise,mix,target`.
//! `speech`, `interferers` and `noise` name source files relative to the
//! speech and noise directories (lists joined by `;`); `mix` and `target`
//! are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{render_mixture, sample_scene, synth_noise, synth_speech, SceneOverrides};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 14] = [
    "id",
    "seed",
    "rt60",
    "snr_db",
    "sir_db",
    "level_db",
    "mic_distance",
    "zenith_deg",
    "num_interferers",
    "speech",
    "interferers",
    "noise",
    "mix",
    "target",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub seed: u64,
    pub rt60: f64,
    pub snr_db: f64,
    pub sir_db: f64,
    pub level_db: f64,
    pub mic_distance: f64,
    pub zenith_deg: f64,
    pub num_interferers: usize,
    pub speech: String,
    pub interferers: Vec<String>,
    pub noise: Vec<String>,
    pub mix: String,
    pub target: String,
}

impl ManifestRow {
    /// Overrides that make `sample_scene(row.seed, ..)` reproduce the row.
    pub fn overrides(&self) -> SceneOverrides {
        SceneOverrides {
            rt60: Some(self.rt60),
            snr_db: Some(self.snr_db),
            sir_db: Some(self.sir_db),
            level_db: Some(self.level_db),
            mic_distance: Some(self.mic_distance),
            zenith_deg: Some(self.zenith_deg),
            num_interferers: Some(self.num_interferers),
        }
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.id.clone(),
            self.seed.to_string(),
            self.rt60.to_string(),
            self.snr_db.to_string(),
            self.sir_db.to_string(),
            self.level_db.to_string(),
            self.mic_distance.to_string(),
            self.zenith_deg.to_string(),
            self.num_interferers.to_string(),
            self.speech.clone(),
            self.interferers.join(";"),
            self.noise.join(";"),
            self.mix.clone(),
            self.target.clone(),
        ]
    }

    fn from_record(r: &csv::StringRecord, line: usize) -> Result<Self> {
        if r.len() != MANIFEST_HEADER.len() {
            return Err(Error::invalid(format!(
                "manifest line {line}: expected {} fields, got {}",
                MANIFEST_HEADER.len(),
                r.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            r[i].parse()
                .map_err(|_| Error::invalid(format!("manifest line {line}: bad {} '{}'", MANIFEST_HEADER[i], &r[i])))
        };
        let list = |s: &str| -> Vec<String> {
            s.split(';').filter(|x| !x.is_empty()).map(str::to_owned).collect()
        };
        Ok(Self {
            id: r[0].to_owned(),
            seed: r[1]
                .parse()
                .map_err(|_| Error::invalid(format!("manifest line {line}: bad seed '{}'", &r[1])))?,
            rt60: num(2)?,
            snr_db: num(3)?,
            sir_db: num(4)?,
            level_db: num(5)?,
            mic_distance: num(6)?,
            zenith_deg: num(7)?,
            num_interferers: num(8)? as usize,
            speech: r[9].to_owned(),
            interferers: list(&r[10]),
            noise: list(&r[11]),
            mix: r[12].to_owned(),
            target: r[13].to_owned(),
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.to_record()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::invalid(format!("{}: unexpected manifest header", path.display())));
    }
    rd.records()
        .enumerate()
        .map(|(i, r)| ManifestRow::from_record(&r.map_err(|e| csv_err(path, e))?, i + 2))
        .collect()
}

/// Sorted `*.wav` file names in `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!("{}: no WAV files", dir.display())));
    }
    Ok(names)
}

/// Writes `n_speech` speech-like and `n_noise` noise clips of `seconds`
/// each under `dir/speech` and `dir/noise`.
pub fn write_synthetic_corpus(dir: &Path, n_speech: usize, n_noise: usize, seconds: f64, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let len = (seconds * SAMPLE_RATE as f64).round() as usize;
    let sd = dir.join("speech");
    let nd = dir.join("noise");
    for d in [&sd, &nd] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for i in 0..n_speech {
        let x = synth_speech(len, SAMPLE_RATE, seed.wrapping_mul(1000).wrapping_add(i as u64));
        write_wav(sd.join(format!("speech_{i:03}.wav")), &AudioBuffer::mono(x, SAMPLE_RATE)?)?;
    }
    for i in 0..n_noise {
        let x = synth_noise(len, seed.wrapping_mul(1000).wrapping_add(500 + i as u64));
        write_wav(nd.join(format!("noise_{i:03}.wav")), &AudioBuffer::mono(x, SAMPLE_RATE)?)?;
    }
    Ok((sd, nd))
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub num_scenes: usize,
    pub speech_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub overrides: SceneOverrides,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

fn rotate(names: &[String], start: usize, count: usize) -> Vec<String> {
    (0..count).map(|k| names[(start + k) % names.len()].clone()).collect()
}

/// Renders scenes `seed, seed + 1, ...` into `out_dir/{mix,target}` and
/// writes `out_dir/manifest.csv`. Scene `i` uses speech file `i`, the next
/// speech files as interferers and the noise files starting at `i`.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Vec<ManifestRow>> {
    let out = &cfg.out_dir;
    for d in [out.join("mix"), out.join("target")] {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rows = if cfg.num_scenes == 0 {
        Vec::new()
    } else {
        let speech = list_wavs(&cfg.speech_dir)?;
        let noise = list_wavs(&cfg.noise_dir)?;
        (0..cfg.num_scenes)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.seed.wrapping_add(i as u64);
                let scene = sample_scene(seed, &cfg.overrides)?;
                let n_int = scene.interferer_positions.len();
                let sp_name = speech[i % speech.len()].clone();
                let int_names = if n_int == 0 {
                    Vec::new()
                } else {
                    rotate(&speech, i + 1, n_int.min(speech.len()))
                };
                let noise_names = if scene.snr_db.is_finite() {
                    rotate(&noise, i, noise.len())
                } else {
                    Vec::new()
                };
                let load = |dir: &Path, names: &[String]| -> Result<Vec<AudioBuffer>> {
                    names.iter().map(|n| read_wav(dir.join(n))).collect()
                };
                let sp = read_wav(cfg.speech_dir.join(&sp_name))?;
                let m = render_mixture(
                    &scene,
                    &sp,
                    &load(&cfg.speech_dir, &int_names)?,
                    &load(&cfg.noise_dir, &noise_names)?,
                )?;
                let id = format!("scene_{i:04}");
                let mix = format!("mix/{id}.wav");
                let target = format!("target/{id}.wav");
                write_wav(out.join(&mix), &m.mix)?;
                write_wav(out.join(&target), &m.target)?;
                Ok(ManifestRow {
                    id,
                    seed,
                    rt60: scene.room.rt60,
                    snr_db: scene.snr_db,
                    sir_db: scene.sir_db,
                    level_db: scene.level_db,
                    mic_distance: scene.mic_distance,
                    zenith_deg: scene.zenith_deg,
                    num_interferers: n_int,
                    speech: sp_name,
                    interferers: int_names,
                    noise: noise_names,
                    mix,
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    write_manifest(&out.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}

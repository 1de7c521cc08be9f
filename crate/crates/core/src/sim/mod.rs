//! Dual-microphone scene simulation: shoebox room, handset geometry,
//! interferer ring, diffuse-noise ring and calibrated mixing.

mod dataset;
mod render;
mod rir;
mod synth;

pub use dataset::{
    build_dataset, list_wavs, read_manifest, write_manifest, write_synthetic_corpus, DatasetConfig, ManifestRow,
    MANIFEST_HEADER, MANIFEST_NAME,
};
pub use render::{fft_convolve, render_mixture, Mixture, NOISE_RING_RADIUS, NOISE_SOURCES};
pub use rir::{energy_decay_db, image_method_rir, schroeder_rt60, Rir, FRAC_DELAY_HALF};
pub use synth::{synth_noise, synth_speech};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Position = [f64; 3];

pub const ROOM_DIMS: [f64; 3] = [10.0, 7.0, 3.0];
pub const SOURCE_POS: Position = [5.0, 3.5, 1.5];
pub const MIC_SPACING: f64 = 0.15;
pub const INTERFERER_RADIUS: f64 = 3.0;
pub const RT60_RANGE: (f64, f64) = (0.2, 0.5);
pub const DIST_RANGE: (f64, f64) = (0.02, 0.05);
pub const ZENITH_MAX_DEG: f64 = 15.0;
pub const SNR_RANGE: (f64, f64) = (0.0, 20.0);
pub const SIR_RANGE: (f64, f64) = (0.0, 20.0);
pub const LEVEL_RANGE: (f64, f64) = (-40.0, -10.0);
/// Interferer count used when none is requested.
pub const DEFAULT_INTERFERERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub rt60: f64,
    pub speed_of_sound: f64,
    pub max_image_order: usize,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dims: ROOM_DIMS,
            rt60: 0.3,
            speed_of_sound: 343.0,
            max_image_order: 12,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) || !(self.speed_of_sound > 0.0) {
            return Err(Error::config("room dimensions and speed of sound must be positive"));
        }
        if !(self.rt60 > 0.0) {
            return Err(Error::config(format!("rt60 must be positive, got {}", self.rt60)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform absorption from Sabine's formula `0.161 V / (S T60)`.
    pub fn absorption(&self) -> Result<f64> {
        let alpha = 0.161 * self.volume() / (self.surface() * self.rt60);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!(
                "absorption {alpha:.3} outside (0, 1) for rt60 {}",
                self.rt60
            )));
        }
        Ok(alpha)
    }

    /// RIR length: `1.2 * rt60 * fs` samples.
    pub fn rir_len(&self, sample_rate: u32) -> usize {
        (1.2 * self.rt60 * sample_rate as f64).ceil() as usize
    }

    pub fn contains(&self, p: Position) -> bool {
        p.iter().zip(&self.dims).all(|(&v, &d)| v > 0.0 && v < d)
    }
}

/// Fields pinned by the caller instead of drawn.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneOverrides {
    pub rt60: Option<f64>,
    pub snr_db: Option<f64>,
    pub sir_db: Option<f64>,
    pub level_db: Option<f64>,
    pub mic_distance: Option<f64>,
    pub zenith_deg: Option<f64>,
    pub num_interferers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub room: RoomSpec,
    pub source_pos: Position,
    pub mic1_pos: Position,
    pub mic2_pos: Position,
    /// Source-to-mic1 distance (m).
    pub mic_distance: f64,
    pub zenith_deg: f64,
    pub interferer_positions: Vec<Position>,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub sir_db: f64,
    pub level_db: f64,
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(v >= lo && v <= hi) {
        return Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Deterministic draw of one scene from `seed`; overrides pin fields.
pub fn sample_scene(seed: u64, ov: &SceneOverrides) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every draw is taken so overrides do not shift the remaining values
    let rt60 = rng.random_range(RT60_RANGE.0..=RT60_RANGE.1);
    let dist = rng.random_range(DIST_RANGE.0..=DIST_RANGE.1);
    let az1 = rng.random_range(0.0..2.0 * PI);
    let zen = rng.random_range(0.0..=ZENITH_MAX_DEG);
    let az2 = rng.random_range(0.0..2.0 * PI);
    let ring_offset = rng.random_range(0.0..2.0 * PI);
    let snr = rng.random_range(SNR_RANGE.0..=SNR_RANGE.1);
    let sir = rng.random_range(SIR_RANGE.0..=SIR_RANGE.1);
    let level = rng.random_range(LEVEL_RANGE.0..=LEVEL_RANGE.1);

    let rt60 = ov.rt60.unwrap_or(rt60);
    check_range("rt60", rt60, RT60_RANGE)?;
    let dist = ov.mic_distance.unwrap_or(dist);
    check_range("mic_distance", dist, DIST_RANGE)?;
    let zen = ov.zenith_deg.unwrap_or(zen);
    check_range("zenith_deg", zen, (0.0, ZENITH_MAX_DEG))?;
    let snr = ov.snr_db.unwrap_or(snr);
    if snr != f64::INFINITY {
        check_range("snr_db", snr, SNR_RANGE)?;
    }
    let sir = ov.sir_db.unwrap_or(sir);
    check_range("sir_db", sir, SIR_RANGE)?;
    let level = ov.level_db.unwrap_or(level);
    check_range("level_db", level, LEVEL_RANGE)?;
    let n_int = ov.num_interferers.unwrap_or(DEFAULT_INTERFERERS);

    let src = SOURCE_POS;
    let mic1 = [src[0] + dist * az1.cos(), src[1] + dist * az1.sin(), src[2]];
    let th = zen.to_radians();
    let mic2 = [
        mic1[0] + MIC_SPACING * th.sin() * az2.cos(),
        mic1[1] + MIC_SPACING * th.sin() * az2.sin(),
        mic1[2] + MIC_SPACING * th.cos(),
    ];
    let interferers = (0..n_int)
        .map(|i| {
            let a = ring_offset + 2.0 * PI * i as f64 / n_int as f64;
            [
                mic1[0] + INTERFERER_RADIUS * a.cos(),
                mic1[1] + INTERFERER_RADIUS * a.sin(),
                mic1[2],
            ]
        })
        .collect();
    let scene = SceneSpec {
        seed,
        room: RoomSpec {
            rt60,
            ..Default::default()
        },
        source_pos: src,
        mic1_pos: mic1,
        mic2_pos: mic2,
        mic_distance: dist,
        zenith_deg: zen,
        interferer_positions: interferers,
        snr_db: snr,
        sir_db: sir,
        level_db: level,
    };
    scene.validate()?;
    Ok(scene)
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        let all = [self.source_pos, self.mic1_pos, self.mic2_pos]
            .into_iter()
            .chain(self.interferer_positions.iter().copied());
        for p in all {
            if !self.room.contains(p) {
                return Err(Error::invalid(format!("position {p:?} outside the room")));
            }
        }
        Ok(())
    }
}

pub fn distance(a: Position, b: Position) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

//! Shoebox image-source room impulse responses.

use std::f64::consts::PI;

use super::{Position, RoomSpec};
use crate::error::{Error, Result};

/// Half-width of the fractional-delay kernel (81 taps in total).
pub const FRAC_DELAY_HALF: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

impl Rir {
    /// Index of the largest-magnitude tap.
    pub fn peak_index(&self) -> usize {
        self.taps
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
            .0
    }
}

/// Hann-windowed sinc kernel value at offset `x` from the delay.
fn frac_kernel(x: f64, sin_pi_x: f64) -> f64 {
    let half = FRAC_DELAY_HALF as f64 + 1.0;
    let w = 0.5 * (1.0 + (PI * x / half).cos());
    let s = if x.abs() < 1e-12 { 1.0 } else { sin_pi_x / (PI * x) };
    w * s
}

/// Adds an impulse of `amp` at fractional position `delay` (in samples).
fn add_fractional(taps: &mut [f64], delay: f64, amp: f64) {
    let center = delay.round() as i64;
    let lo = (center - FRAC_DELAY_HALF as i64).max(0);
    let hi = (center + FRAC_DELAY_HALF as i64).min(taps.len() as i64 - 1);
    if lo > hi {
        return;
    }
    // sin(pi (n - d)) alternates sign between consecutive n
    let mut sin_v = (PI * (lo as f64 - delay)).sin();
    for n in lo..=hi {
        let x = n as f64 - delay;
        if x.abs() <= FRAC_DELAY_HALF as f64 + 0.5 {
            taps[n as usize] += amp * frac_kernel(x, sin_v);
        }
        sin_v = -sin_v;
    }
}

/// Allen-Berkley image construction with a uniform wall reflection
/// coefficient `-sqrt(1 - alpha)`.
pub fn image_method_rir(room: &RoomSpec, src: Position, mic: Position, sample_rate: u32) -> Result<Rir> {
    room.validate()?;
    for (what, p) in [("source", src), ("microphone", mic)] {
        if !room.contains(p) {
            return Err(Error::invalid(format!("{what} at {p:?} is outside the room")));
        }
    }
    let alpha = room.absorption()?;
    let beta = -(1.0 - alpha).sqrt();
    let fs = sample_rate as f64;
    let len = room.rir_len(sample_rate);
    let mut taps = vec![0.0; len];
    let max_dist = (len + FRAC_DELAY_HALF) as f64 / fs * room.speed_of_sound;
    let order_cap = room.max_image_order as i64;
    let l = room.dims;
    let reach: Vec<i64> = (0..3).map(|a| (max_dist / (2.0 * l[a])).ceil() as i64 + 1).collect();
    for px in 0..2i64 {
        for py in 0..2i64 {
            for pz in 0..2i64 {
                let base = [
                    (1 - 2 * px) as f64 * src[0] - mic[0],
                    (1 - 2 * py) as f64 * src[1] - mic[1],
                    (1 - 2 * pz) as f64 * src[2] - mic[2],
                ];
                for mx in -reach[0]..=reach[0] {
                    let ox = (mx - px).abs() + mx.abs();
                    if ox > order_cap {
                        continue;
                    }
                    let dx = base[0] + 2.0 * mx as f64 * l[0];
                    for my in -reach[1]..=reach[1] {
                        let oy = (my - py).abs() + my.abs();
                        if ox + oy > order_cap {
                            continue;
                        }
                        let dy = base[1] + 2.0 * my as f64 * l[1];
                        for mz in -reach[2]..=reach[2] {
                            let oz = (mz - pz).abs() + mz.abs();
                            let order = ox + oy + oz;
                            if order > order_cap {
                                continue;
                            }
                            let dz = base[2] + 2.0 * mz as f64 * l[2];
                            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                            if dist > max_dist {
                                continue;
                            }
                            let amp = beta.powi(order as i32) / (4.0 * PI * dist.max(1e-3));
                            add_fractional(&mut taps, dist / room.speed_of_sound * fs, amp);
                        }
                    }
                }
            }
        }
    }
    if taps.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite RIR"));
    }
    Ok(Rir { taps, sample_rate })
}

/// Reverberation time from the Schroeder backward-integrated energy decay,
/// using a line fit between -5 dB and -35 dB extrapolated to -60 dB.
/// Returns `None` when the decay never reaches -35 dB.
pub fn schroeder_rt60(taps: &[f64], sample_rate: u32) -> Option<f64> {
    let edc = energy_decay_db(taps)?;
    let fs = sample_rate as f64;
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &db)| (-35.0..=-5.0).contains(&db))
        .map(|(i, &db)| (i as f64 / fs, db))
        .collect();
    if pts.len() < 2 || !edc.iter().any(|&d| d < -35.0) {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, md) = pts.iter().fold((0.0, 0.0), |(a, b), (t, d)| (a + t / n, b + d / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, d)| (a + (t - mt) * (d - md), b + (t - mt) * (t - mt)));
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Schroeder curve in dB relative to total energy.
pub fn energy_decay_db(taps: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = taps.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    let mut edc = vec![0.0; taps.len()];
    for (i, v) in taps.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = 10.0 * (acc / total).max(1e-300).log10();
    }
    Some(edc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(rt60: f64) -> RoomSpec {
        RoomSpec {
            rt60,
            ..Default::default()
        }
    }

    #[test]
    fn kernel_is_exact_on_integer_delay() {
        let mut t = vec![0.0; 200];
        add_fractional(&mut t, 100.0, 2.0);
        assert!((t[100] - 2.0).abs() < 1e-12);
        assert!(t.iter().enumerate().all(|(i, v)| i == 100 || v.abs() < 1e-12));
    }

    #[test]
    fn direct_path_delay_for_three_centimetres() {
        let r = room(0.3);
        let src = [5.0, 3.5, 1.5];
        let mic = [5.03, 3.5, 1.5];
        let rir = image_method_rir(&r, src, mic, 16000).unwrap();
        let expect: f64 = 0.03 / 343.0 * 16000.0;
        assert!((expect - 1.399).abs() < 1e-3);
        assert_eq!(rir.peak_index(), expect.round() as usize);
        // the interpolation kernel peaks between taps 1 and 2, closer to 1
        assert!(rir.taps[1] > rir.taps[2] && rir.taps[2] > rir.taps[0]);
        // and reproduces a sinc sampled at the fractional offset
        let amp = 1.0 / (4.0 * PI * 0.03);
        let sinc = |x: f64| (PI * x).sin() / (PI * x);
        let w = |x: f64| 0.5 * (1.0 + (PI * x / 41.0).cos());
        let want = amp * sinc(1.0 - expect) * w(1.0 - expect);
        assert!((rir.taps[1] - want).abs() < 0.02 * want);
    }

    #[test]
    fn nearly_anechoic_room_gives_a_single_spike() {
        // alpha = 0.9999
        let r = room(0.161 * 210.0 / (242.0 * 0.9999));
        let dist = 100.0 * 343.0 / 16000.0;
        let src = [5.0, 3.5, 1.5];
        let mic = [5.0 + dist, 3.5, 1.5];
        let rir = image_method_rir(&r, src, mic, 16000).unwrap();
        assert_eq!(rir.peak_index(), 100);
        let amp = 1.0 / (4.0 * PI * dist);
        assert!((rir.taps[100] - amp).abs() < 0.02 * amp);
        let rest: f64 = rir.taps.iter().enumerate().filter(|(i, _)| *i != 100).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(rest < 0.02 * amp);
    }

    #[test]
    fn nothing_arrives_before_the_direct_path() {
        let r = room(0.4);
        let src = [5.0, 3.5, 1.5];
        let mic = [3.0, 2.0, 1.2];
        let rir = image_method_rir(&r, src, mic, 16000).unwrap();
        let d = ((2.0f64).powi(2) + 1.5f64.powi(2) + 0.3f64.powi(2)).sqrt() / 343.0 * 16000.0;
        let first = rir.taps.iter().position(|v| v.abs() > 1e-9).unwrap();
        assert!(first as f64 >= d - FRAC_DELAY_HALF as f64 - 1.0);
        assert_eq!(rir.peak_index(), d.round() as usize);
        assert!(rir.taps.len() >= (0.4 * 16000.0) as usize);
    }

    #[test]
    fn rejects_positions_outside() {
        let r = room(0.3);
        assert!(matches!(
            image_method_rir(&r, [11.0, 1.0, 1.0], [1.0, 1.0, 1.0], 16000),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn schroeder_decay_tracks_requested_rt60() {
        let src = [5.0, 3.5, 1.5];
        let mic = [2.2, 2.4, 1.5];
        for rt60 in [0.2, 0.3, 0.4, 0.5] {
            let rir = image_method_rir(&room(rt60), src, mic, 16000).unwrap();
            let t = schroeder_rt60(&rir.taps, 16000).unwrap();
            assert!((t - rt60).abs() <= 0.3 * rt60, "rt60 {rt60}: measured {t}");
        }
    }

    #[test]
    fn schroeder_on_synthetic_exponential() {
        // energy decays 60 dB in 0.3 s
        let fs = 16000;
        let k = 6.0 * std::f64::consts::LN_10 / 0.3 / 2.0;
        let taps: Vec<f64> = (0..8000).map(|i| (-k * i as f64 / fs as f64).exp()).collect();
        let t = schroeder_rt60(&taps, fs).unwrap();
        assert!((t - 0.3).abs() < 0.01, "{t}");
    }
}

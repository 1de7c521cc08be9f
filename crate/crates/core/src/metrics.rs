//! Objective metrics and the manifest evaluator.

use std::path::Path;

use rayon::prelude::*;

use crate::dsp::wav::read_wav;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::sim::{read_manifest, ManifestRow};

/// Magnitude bound of [`si_sdr`] in dB.
pub const SI_SDR_CAP_DB: f64 = 60.0;
pub const SEG_SNR_RANGE: (f64, f64) = (-10.0, 35.0);
/// Reference frames quieter than this (mean-square dBFS) are skipped.
pub const SEG_SNR_VOICED_DB: f64 = -60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SDR in dB, clamped to `[-60, 60]`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid(format!(
            "length mismatch: estimate {} vs reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let rr = dot(reference, reference);
    if !(rr > 0.0) {
        return Err(Error::invalid("reference has zero energy"));
    }
    let a = dot(estimate, reference) / rr;
    let target = a * a * rr;
    let resid: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - a * r).powi(2))
        .sum();
    let db = if target == 0.0 {
        -SI_SDR_CAP_DB
    } else if resid <= target * 1e-12 {
        SI_SDR_CAP_DB
    } else {
        10.0 * (target / resid).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Mean per-frame SNR over voiced reference frames, each clamped to
/// [`SEG_SNR_RANGE`]. `None` when no frame is voiced.
pub fn segmental_snr(estimate: &[f64], reference: &[f64], frame: usize, hop: usize) -> Result<Option<f64>> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid("length mismatch"));
    }
    if frame == 0 || hop == 0 {
        return Err(Error::invalid("frame and hop must be positive"));
    }
    let n = reference.len();
    let gate = 10f64.powf(SEG_SNR_VOICED_DB / 10.0);
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + frame).min(n);
        let r = &reference[start..end];
        let e = &estimate[start..end];
        let sig = dot(r, r);
        if sig / frame as f64 > gate {
            let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
            let db = if err == 0.0 { SEG_SNR_RANGE.1 } else { 10.0 * (sig / err).log10() };
            acc += db.clamp(SEG_SNR_RANGE.0, SEG_SNR_RANGE.1);
            count += 1;
        }
        if end == n {
            break;
        }
        start += hop;
    }
    Ok((count > 0).then(|| acc / count as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub delta: f64,
    pub seg_snr_out: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(id, message)` for rows that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn mean_si_sdr_in(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.si_sdr_in))
    }

    pub fn mean_si_sdr_out(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.si_sdr_out))
    }

    pub fn mean_delta(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.delta))
    }

    pub fn mean_seg_snr_out(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.seg_snr_out))
    }

    /// Fraction of rows with a positive delta.
    pub fn improved_fraction(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| if r.delta > 0.0 { 1.0 } else { 0.0 }))
    }

    /// CSV with columns `id,si_sdr_in,si_sdr_out,delta,seg_snr_out,error`
    /// and a trailing `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{}: {other:?}", path.display())),
        };
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["id", "si_sdr_in", "si_sdr_out", "delta", "seg_snr_out", "error"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                f(Some(r.si_sdr_in)),
                f(Some(r.si_sdr_out)),
                f(Some(r.delta)),
                f(r.seg_snr_out),
                String::new(),
            ])
            .map_err(io)?;
        }
        for (id, msg) in &self.failures {
            w.write_record([id.as_str(), "", "", "", "", msg.as_str()]).map_err(io)?;
        }
        w.write_record([
            "mean".to_owned(),
            f(self.mean_si_sdr_in()),
            f(self.mean_si_sdr_out()),
            f(self.mean_delta()),
            f(self.mean_seg_snr_out()),
            String::new(),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn eval_row<F>(base: &Path, row: &ManifestRow, enhance: &F) -> Result<EvalRow>
where
    F: Fn(&AudioBuffer) -> Result<Vec<f64>> + Sync,
{
    let mix = read_wav(base.join(&row.mix))?;
    let target = read_wav(base.join(&row.target))?;
    let out = enhance(&mix)?;
    let reference = target.channel(0);
    let n = reference.len().min(out.len()).min(mix.num_samples());
    let si_in = si_sdr(&mix.channel(0)[..n], &reference[..n])?;
    let si_out = si_sdr(&out[..n], &reference[..n])?;
    Ok(EvalRow {
        id: row.id.clone(),
        si_sdr_in: si_in,
        si_sdr_out: si_out,
        delta: si_out - si_in,
        seg_snr_out: segmental_snr(&out[..n], &reference[..n], 512, 256)?,
    })
}

/// Enhances every manifest row (files resolved against the manifest's
/// directory) and scores it against the target. Row failures are
/// collected and do not stop the run.
pub fn evaluate_manifest<F>(manifest: &Path, enhance: F, out_csv: Option<&Path>) -> Result<EvalReport>
where
    F: Fn(&AudioBuffer) -> Result<Vec<f64>> + Sync,
{
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let results: Vec<_> = rows.par_iter().map(|r| eval_row(base, r, &enhance)).collect();
    let mut report = EvalReport::default();
    for (row, res) in rows.iter().zip(results) {
        match res {
            Ok(r) => report.rows.push(r),
            Err(e) => {
                log::warn!("{}: {e}", row.id);
                report.failures.push((row.id.clone(), e.to_string()));
            }
        }
    }
    if let Some(p) = out_csv {
        report.write_csv(p)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// `n` orthogonal to `x` with `|n|^2 = |x|^2 * ratio`.
    fn orthogonal_noise(x: &[f64], seed: u64, ratio: f64) -> Vec<f64> {
        let mut n = random(x.len(), seed);
        let a = dot(&n, x) / dot(x, x);
        n.iter_mut().zip(x).for_each(|(v, r)| *v -= a * r);
        let s = (ratio * dot(x, x) / dot(&n, &n)).sqrt();
        n.iter_mut().for_each(|v| *v *= s);
        n
    }

    #[test]
    fn si_sdr_examples() {
        let x = random(4000, 1);
        assert_eq!(si_sdr(&x, &x).unwrap(), 60.0);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&x2, &x).unwrap(), 60.0);
        let n = orthogonal_noise(&x, 2, 0.1);
        let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&y, &x).unwrap() - 10.0).abs() < 1e-9);
        assert!(matches!(si_sdr(&x, &vec![0.0; 4000]), Err(Error::InvalidInput(_))));
        assert!(si_sdr(&x[..10], &x).is_err());
        assert_eq!(si_sdr(&vec![0.0; 4000], &x).unwrap(), -60.0);
    }

    #[test]
    fn halving_orthogonal_noise_adds_3_0103_db() {
        let x = random(3000, 5);
        let n = orthogonal_noise(&x, 6, 0.5);
        let y1: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let y2: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + h * b).collect();
        let d = si_sdr(&y2, &x).unwrap() - si_sdr(&y1, &x).unwrap();
        assert!((d - 10.0 * 2f64.log10()).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn si_sdr_is_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let x = random(1024, seed);
            let y: Vec<f64> = x.iter().zip(random(1024, seed + 1)).map(|(a, b)| a + 0.3 * b).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let a = si_sdr(&y, &x).unwrap();
            prop_assert!((si_sdr(&ys, &x).unwrap() - a).abs() < 1e-9);
            prop_assert!(a <= SI_SDR_CAP_DB);
        }
    }

    #[test]
    fn segmental_snr_examples() {
        let x = random(4096, 3);
        assert_eq!(segmental_snr(&x, &x, 512, 256).unwrap(), Some(35.0));
        // anti-phase doubles the error: 10 log10(1/4)
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = segmental_snr(&neg, &x, 512, 256).unwrap().unwrap();
        assert!((s + 10.0 * 4f64.log10()).abs() < 1e-9);
        let far: Vec<f64> = x.iter().map(|v| -3.0 * v).collect();
        assert_eq!(segmental_snr(&far, &x, 512, 256).unwrap(), Some(-10.0));
        // every frame has error energy equal to signal energy
        let half: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let s = segmental_snr(&half, &x, 512, 256).unwrap().unwrap();
        assert!(s.abs() < 1e-9);
        assert_eq!(segmental_snr(&vec![0.0; 4096], &vec![1e-5; 4096], 512, 256).unwrap(), None);
    }

    #[test]
    fn missing_manifest_is_an_error() {
        assert!(evaluate_manifest(Path::new("/nonexistent/m.csv"), |a| Ok(a.channel(0).to_vec()), None).is_err());
    }
}

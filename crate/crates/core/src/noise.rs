//! Minima-controlled recursive averaging of the stationary noise PSD.
//!
//! Per bin the periodogram is smoothed recursively, its minimum is tracked
//! over `num_sub_windows` sub-windows of `sub_window_len` frames, and the
//! noise estimate is only updated in bins whose smoothed power stays below
//! `presence_ratio` times the bias-compensated minimum
//! (`bias_comp * running_min`). Bins carrying speech (or any transient) are
//! frozen.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrackerParams {
    pub alpha_s: f64,
    pub alpha_d: f64,
    pub sub_window_len: usize,
    pub num_sub_windows: usize,
    pub bias_comp: f64,
    /// Smoothed-power to noise-floor ratio above which a bin counts as
    /// speech-present.
    pub presence_ratio: f64,
    pub lambda_floor: f64,
}

impl Default for NoiseTrackerParams {
    fn default() -> Self {
        Self {
            alpha_s: 0.8,
            alpha_d: 0.95,
            sub_window_len: 15,
            num_sub_windows: 8,
            bias_comp: 1.5,
            presence_ratio: 3.0,
            lambda_floor: 1e-10,
        }
    }
}

impl NoiseTrackerParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha_s) || !unit(self.alpha_d) {
            return Err(Error::config("tracker smoothing factors must lie in (0, 1)"));
        }
        if self.sub_window_len == 0 || self.num_sub_windows == 0 {
            return Err(Error::config("tracker minimum window must be non-empty"));
        }
        if !(self.bias_comp >= 1.0) || !(self.presence_ratio >= 1.0) || !(self.lambda_floor > 0.0) {
            return Err(Error::config(
                "tracker bias factor and presence ratio must be >= 1, noise floor positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrackerState {
    params: NoiseTrackerParams,
    smoothed_psd: Vec<f64>,
    running_min: Vec<f64>,
    sub_min: Vec<f64>,
    min_buffer: VecDeque<Vec<f64>>,
    lambda: Vec<f64>,
    frame_count: u64,
}

/// Starts a tracker from the mean periodogram of `first_frames`.
pub fn init_tracker(first_frames: &[Vec<f64>], params: NoiseTrackerParams) -> Result<NoiseTrackerState> {
    params.validate()?;
    let Some(first) = first_frames.first() else {
        return Err(Error::invalid("noise tracker needs at least one frame"));
    };
    let bins = first.len();
    let mut mean = vec![0.0; bins];
    for f in first_frames {
        if f.len() != bins {
            return Err(Error::invalid("frames differ in bin count"));
        }
        check_power(f)?;
        for (m, p) in mean.iter_mut().zip(f) {
            *m += p;
        }
    }
    let n = first_frames.len() as f64;
    let lambda: Vec<f64> = mean
        .iter()
        .map(|m| (m / n).max(params.lambda_floor))
        .collect();
    Ok(NoiseTrackerState {
        smoothed_psd: lambda.clone(),
        running_min: lambda.clone(),
        sub_min: lambda.clone(),
        min_buffer: VecDeque::with_capacity(params.num_sub_windows),
        lambda,
        frame_count: 0,
        params,
    })
}

fn check_power(frame: &[f64]) -> Result<()> {
    if frame.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("frame power must be finite and non-negative"));
    }
    Ok(())
}

impl NoiseTrackerState {
    pub fn params(&self) -> &NoiseTrackerParams {
        &self.params
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn smoothed_psd(&self) -> &[f64] {
        &self.smoothed_psd
    }

    pub fn running_min(&self) -> &[f64] {
        &self.running_min
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    /// Consumes one periodogram frame and returns the updated noise estimate.
    pub fn update(&mut self, frame_power: &[f64]) -> Result<&[f64]> {
        if frame_power.len() != self.lambda.len() {
            return Err(Error::invalid(format!(
                "frame has {} bins, tracker has {}",
                frame_power.len(),
                self.lambda.len()
            )));
        }
        check_power(frame_power)?;
        let p = &self.params;
        let threshold = p.presence_ratio * p.bias_comp;
        for (k, &power) in frame_power.iter().enumerate() {
            let s = p.alpha_s * self.smoothed_psd[k] + (1.0 - p.alpha_s) * power;
            self.smoothed_psd[k] = s;
            self.sub_min[k] = self.sub_min[k].min(s);
        }
        self.frame_count += 1;
        if self.frame_count.is_multiple_of(p.sub_window_len as u64) {
            if self.min_buffer.len() == p.num_sub_windows {
                self.min_buffer.pop_front();
            }
            self.min_buffer.push_back(self.sub_min.clone());
            self.sub_min.copy_from_slice(&self.smoothed_psd);
        }
        for k in 0..self.lambda.len() {
            let m = self
                .min_buffer
                .iter()
                .fold(self.sub_min[k], |acc, w| acc.min(w[k]));
            self.running_min[k] = m;
            if self.smoothed_psd[k] <= threshold * m {
                self.lambda[k] = p.alpha_d * self.lambda[k] + (1.0 - p.alpha_d) * frame_power[k];
            }
            self.lambda[k] = self.lambda[k].max(p.lambda_floor);
        }
        Ok(&self.lambda)
    }
}

/// Functional form of [`NoiseTrackerState::update`].
pub fn update_tracker(
    mut state: NoiseTrackerState,
    frame_power: &[f64],
) -> Result<(NoiseTrackerState, Vec<f64>)> {
    let lambda = state.update(frame_power)?.to_vec();
    Ok((state, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Periodogram of white noise: exponential with mean `p` per bin.
    fn exp_frame(rng: &mut ChaCha8Rng, bins: usize, p: f64) -> Vec<f64> {
        (0..bins)
            .map(|_| -p * (1.0 - rng.random::<f64>()).ln())
            .collect()
    }

    #[test]
    fn zero_frame_initializes_to_floor() {
        let st = init_tracker(&[vec![0.0; 5]], NoiseTrackerParams::default()).unwrap();
        assert!(st.lambda().iter().all(|&l| l == 1e-10));
    }

    #[test]
    fn constant_frames_initialize_to_constant() {
        let frames = vec![vec![3.5; 8]; 10];
        let st = init_tracker(&frames, NoiseTrackerParams::default()).unwrap();
        assert!(st.lambda().iter().all(|&l| l == 3.5));
    }

    #[test]
    fn init_is_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Vec<f64>> = (0..10).map(|_| exp_frame(&mut rng, 16, 2.0)).collect();
        let st = init_tracker(&frames, NoiseTrackerParams::default()).unwrap();
        for k in 0..16 {
            let mut sum = 0.0;
            for f in &frames {
                sum += f[k];
            }
            assert_eq!(st.lambda()[k], (sum / 10.0).max(1e-10));
        }
    }

    #[test]
    fn rejects_empty_and_negative() {
        assert!(init_tracker(&[], NoiseTrackerParams::default()).is_err());
        let mut st = init_tracker(&[vec![1.0; 3]], NoiseTrackerParams::default()).unwrap();
        assert!(st.update(&[1.0, -0.1, 1.0]).is_err());
        assert!(st.update(&[1.0, f64::NAN, 1.0]).is_err());
        assert!(st.update(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn silence_stays_at_floor() {
        let mut st = init_tracker(&[vec![0.0; 4]], NoiseTrackerParams::default()).unwrap();
        for _ in 0..500 {
            st.update(&[0.0; 4]).unwrap();
        }
        assert!(st.lambda().iter().all(|&l| l == 1e-10));
    }

    #[test]
    fn converges_on_stationary_noise() {
        let bins = 257;
        let p = 0.7;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first = exp_frame(&mut rng, bins, p);
            let mut st = init_tracker(&[first], NoiseTrackerParams::default()).unwrap();
            for _ in 0..(8 * 15 + 60) {
                let f = exp_frame(&mut rng, bins, p);
                st.update(&f).unwrap();
            }
            let inside = st
                .lambda()
                .iter()
                .filter(|&&l| l >= 0.5 * p && l <= 2.0 * p)
                .count();
            assert!(
                inside as f64 >= 0.95 * bins as f64,
                "seed {seed}: only {inside}/{bins} bins in range"
            );
        }
    }

    #[test]
    fn tone_burst_does_not_leak_into_estimate() {
        let bins = 64;
        let p = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = init_tracker(&[exp_frame(&mut rng, bins, p)], NoiseTrackerParams::default()).unwrap();
        for _ in 0..200 {
            st.update(&exp_frame(&mut rng, bins, p)).unwrap();
        }
        let before = st.lambda()[40];
        // 0.2 s at 16 ms hop
        for _ in 0..13 {
            let mut f = exp_frame(&mut rng, bins, p);
            f[40] += 1000.0;
            st.update(&f).unwrap();
        }
        assert!(st.lambda()[40] <= 2.0 * before, "{} vs {}", st.lambda()[40], before);
    }

    #[test]
    fn invariants_hold_on_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut st = init_tracker(&[exp_frame(&mut rng, 32, 1.0)], NoiseTrackerParams::default()).unwrap();
        for i in 0..600 {
            let scale = if i % 50 < 10 { 100.0 } else { 1.0 };
            let f = exp_frame(&mut rng, 32, scale);
            st.update(&f).unwrap();
            for k in 0..32 {
                assert!(st.lambda()[k] >= 1e-10 && st.lambda()[k].is_finite());
                assert!(st.running_min()[k] <= st.smoothed_psd()[k]);
            }
        }
    }
}

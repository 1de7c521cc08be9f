//! Thread-local FFT plan cache.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// One-sided spectrum (`n/2 + 1` bins) of a real sequence zero-padded to `n`.
pub(crate) fn rfft(input: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &x) in buf.iter_mut().zip(input) {
        b.re = x;
    }
    forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Real inverse of a one-sided spectrum, normalized by `1/n`.
///
/// The imaginary parts of the DC and Nyquist bins are ignored.
pub(crate) fn irfft(spec: &[Complex64], n: usize) -> Vec<f64> {
    debug_assert_eq!(spec.len(), n / 2 + 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(spec[0].re, 0.0);
    for k in 1..spec.len() {
        if 2 * k == n {
            buf[k] = Complex64::new(spec[k].re, 0.0);
        } else {
            buf[k] = spec[k];
            buf[n - k] = spec[k].conj();
        }
    }
    inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Adjoint of [`irfft`] with respect to the real inner product on
/// (re, im) pairs of the one-sided spectrum.
pub(crate) fn irfft_adjoint(grad: &[f64], n: usize) -> Vec<Complex64> {
    let mut g = rfft(grad, n);
    let scale = 1.0 / n as f64;
    let last = g.len() - 1;
    for (k, v) in g.iter_mut().enumerate() {
        let edge = k == 0 || (k == last && n.is_multiple_of(2));
        let c = if edge { scale } else { 2.0 * scale };
        *v *= c;
        if edge {
            v.im = 0.0;
        }
    }
    g
}

/// Adjoint of [`rfft`]: maps one-sided spectrum cotangents back to the
/// (zero-padded) real input.
pub(crate) fn rfft_adjoint(grad: &[Complex64], n: usize, len: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..grad.len()].copy_from_slice(grad);
    inverse(n).process(&mut buf);
    buf.iter().take(len).map(|c| c.re).collect()
}

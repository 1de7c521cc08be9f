use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Result;

/// Central finite differences against the analytic gradient of a scalar
/// function. Checks `samples` coordinates drawn with `seed` (all of them when
/// `samples >= numel`) and returns the largest
/// `|fd - an| / max(|fd|, |an|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let base = x.data().to_vec();
    let shape = x.shape().to_vec();
    let xp = Tensor::param(base.clone(), &shape)?;
    f(&xp)?.backward()?;
    let analytic = xp.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let n = base.len();
    let coords: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, n, samples).into_vec()
    };
    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut d = base.clone();
        d[i] += delta;
        Ok(f(&Tensor::new(d, &shape)?)?.item())
    };
    let mut worst = 0.0f64;
    for i in coords {
        let fd = (eval(i, eps)? - eval(i, -eps)?) / (2.0 * eps);
        let an = analytic[i];
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

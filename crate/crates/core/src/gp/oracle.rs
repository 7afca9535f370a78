//! Reference posterior by dense Gaussian elimination.
//!
//! Shares no factorization code with [`PosteriorState`](super::PosteriorState);
//! tests compare the two.

use crate::error::{Error, Result};
use crate::gp::{Observations, Prediction};
use crate::kernel::KernelSpec;

/// Posterior mean and variance at `x` computed from scratch by solving
/// `C_T [a b] = [Y_T k_T(x)]` with partial pivoting.
pub fn naive_posterior_oracle(kernel: &KernelSpec, obs: &Observations, x: &[f64]) -> Result<Prediction> {
    kernel.validate()?;
    obs.validate()?;
    let prior = kernel.eval(x, x)?;
    let n = obs.len();
    if n == 0 {
        return Ok(Prediction {
            mean: 0.0,
            variance: prior,
        });
    }
    let mut kx = Vec::with_capacity(n);
    for p in &obs.points {
        kx.push(kernel.eval(p, x)?);
    }
    // Augmented system [C | y | k], n × (n + 2).
    let width = n + 2;
    let mut a = vec![0.0; n * width];
    for i in 0..n {
        for j in 0..n {
            a[i * width + j] = kernel.covariance(&obs.points[i], &obs.points[j]);
        }
        a[i * width + i] += obs.noise_var;
        a[i * width + n] = obs.values[i];
        a[i * width + n + 1] = kx[i];
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * width + col].abs().total_cmp(&a[s * width + col].abs()))
            .expect("nonempty range");
        let pivot = a[pivot_row * width + col];
        if pivot.abs() < 1e-300 {
            return Err(Error::numerical("singular covariance in oracle solve"));
        }
        if pivot_row != col {
            for j in 0..width {
                a.swap(pivot_row * width + j, col * width + j);
            }
        }
        for r in col + 1..n {
            let f = a[r * width + col] / pivot;
            if f != 0.0 {
                for j in col..width {
                    a[r * width + j] -= f * a[col * width + j];
                }
            }
        }
    }
    let mut sol = vec![[0.0f64; 2]; n];
    for i in (0..n).rev() {
        for (rhs, slot) in [n, n + 1].into_iter().zip(0..2) {
            let mut s = a[i * width + rhs];
            for j in i + 1..n {
                s -= a[i * width + j] * sol[j][slot];
            }
            sol[i][slot] = s / a[i * width + i];
        }
    }
    let mean: f64 = kx.iter().zip(&sol).map(|(k, s)| k * s[0]).sum();
    let quad: f64 = kx.iter().zip(&sol).map(|(k, s)| k * s[1]).sum();
    Ok(Prediction {
        mean,
        variance: (prior - quad).clamp(0.0, prior.max(0.0)),
    })
}

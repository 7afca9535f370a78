use crate::error::{Error, Result};
use crate::gp::PosteriorState;
use crate::kernel::{check_points, KernelSpec};
use crate::linalg::{dot, Cholesky};

/// Posterior mean and variance over a fixed candidate set, updated
/// incrementally.
///
/// For every candidate `c` the projection `v_c = L⁻¹ k_T(c)` is stored. When
/// a point `x` is appended the factor grows by one row `(l, d)` and every
/// projection grows by one entry `e_c = (k(c, x) − lᵀ v_c) / d`, so each
/// update costs `O(m n)` for `m` candidates and `n` conditioned points.
///
/// Observed points update both mean and variance. Hallucinated points update
/// the variance only. Once a point has been hallucinated, further observed
/// points are rejected: the mean would need the missing values.
#[derive(Debug, Clone)]
pub struct CandidatePosterior {
    kernel: KernelSpec,
    diagonal_noise: f64,
    candidates: Vec<Vec<f64>>,
    conditioned: Vec<Vec<f64>>,
    factor: Cholesky,
    whitened: Vec<f64>,
    hallucinated: usize,
    proj: Vec<Vec<f64>>,
    prior_var: Vec<f64>,
    raw_var: Vec<f64>,
    mean: Vec<f64>,
}

impl CandidatePosterior {
    /// Projects `candidates` onto the posterior in `state` in `O(m n²)`.
    pub fn from_state(state: &PosteriorState, candidates: Vec<Vec<f64>>) -> Result<Self> {
        check_points(&candidates)?;
        if let (Some(c), Some(d)) = (candidates.first(), state.observations().dim()) {
            if c.len() != d {
                return Err(Error::arg(format!(
                    "candidates have dimension {}, observations {d}",
                    c.len()
                )));
            }
        }
        let kernel = state.kernel().clone();
        let obs = state.observations();
        let factor = state.factor().clone();
        let whitened = state.whitened().to_vec();
        let mut proj = Vec::with_capacity(candidates.len());
        let mut prior_var = Vec::with_capacity(candidates.len());
        let mut raw_var = Vec::with_capacity(candidates.len());
        let mut mean = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let k: Vec<f64> = obs.points.iter().map(|p| kernel.covariance(p, c)).collect();
            let v = factor.solve_lower(&k);
            let prior = kernel.prior_variance(c);
            prior_var.push(prior);
            raw_var.push(prior - dot(&v, &v));
            mean.push(dot(&v, &whitened));
            proj.push(v);
        }
        Ok(CandidatePosterior {
            kernel,
            diagonal_noise: state.diagonal_noise(),
            candidates,
            conditioned: obs.points.clone(),
            factor,
            whitened,
            hallucinated: 0,
            proj,
            prior_var,
            raw_var,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn candidate(&self, i: usize) -> &[f64] {
        &self.candidates[i]
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Number of hallucinated (value-less) points conditioned on.
    pub fn hallucinated(&self) -> usize {
        self.hallucinated
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Posterior variance clamped to `[0, k(c, c)]`.
    pub fn variance(&self, i: usize) -> f64 {
        self.raw_var[i].clamp(0.0, self.prior_var[i].max(0.0))
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        self.variance(i).sqrt()
    }

    /// `μ(c) + √β σ(c)`
    pub fn upper(&self, i: usize, beta: f64) -> f64 {
        self.mean(i) + beta.sqrt() * self.std_dev(i)
    }

    /// `μ(c) − √β σ(c)`
    pub fn lower(&self, i: usize, beta: f64) -> f64 {
        self.mean(i) - beta.sqrt() * self.std_dev(i)
    }

    fn extend(&mut self, x: &[f64]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        if let Some(c) = self.candidates.first() {
            if c.len() != x.len() {
                return Err(Error::arg("conditioning point has the wrong dimension"));
            }
        }
        let k: Vec<f64> = self
            .conditioned
            .iter()
            .map(|p| self.kernel.covariance(p, x))
            .collect();
        let diag = self.kernel.prior_variance(x) + self.diagonal_noise;
        let (l, d) = self.factor.extension(&k, diag).map_err(|e| {
            Error::numerical(format!(
                "candidate posterior update lost positive definiteness (pivot {:.3e})",
                e.pivot
            ))
        })?;
        let mut entries = Vec::with_capacity(self.candidates.len());
        for (c, v) in self.candidates.iter().zip(self.proj.iter_mut()) {
            let e = (self.kernel.covariance(c, x) - dot(&l, v)) / d;
            v.push(e);
            entries.push(e);
        }
        for (r, e) in self.raw_var.iter_mut().zip(&entries) {
            *r -= e * e;
        }
        self.factor.push_solved_row(&l, d);
        self.conditioned.push(x.to_vec());
        Ok((l, d, entries))
    }

    /// Conditions on an observed value at `x`.
    pub fn observe(&mut self, x: &[f64], y: f64) -> Result<()> {
        if self.hallucinated > 0 {
            return Err(Error::arg(
                "cannot observe after hallucinating; start from the observed state",
            ));
        }
        if !y.is_finite() {
            return Err(Error::arg(format!("non-finite observation {y}")));
        }
        let (l, d, entries) = self.extend(x)?;
        let w = (y - dot(&l, &self.whitened)) / d;
        self.whitened.push(w);
        for (m, e) in self.mean.iter_mut().zip(&entries) {
            *m += e * w;
        }
        Ok(())
    }

    /// Conditions the variance on `x` without a value; the mean is frozen.
    pub fn hallucinate(&mut self, x: &[f64]) -> Result<()> {
        self.extend(x)?;
        self.hallucinated += 1;
        Ok(())
    }

    pub fn hallucinate_candidate(&mut self, i: usize) -> Result<()> {
        let x = self.candidates[i].clone();
        self.hallucinate(&x)
    }
}

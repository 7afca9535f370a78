//! Exact Gaussian-process posterior inference.
//!
//! [`PosteriorState`] holds the factor `L Lᵀ = K_T + σ²I` over the queried
//! points and answers mean/variance queries in `O(n²)`. Appends extend the
//! factor by one row in `O(n²)`. [`VarianceScratch`] conditions on extra
//! points without values; since the posterior variance never looks at the
//! observed values this is exact for variances, while means stay frozen.
//! [`CandidatePosterior`] keeps the posterior over a fixed candidate set up to
//! date incrementally, which is what the batch strategies iterate over.

mod candidates;
mod oracle;

pub use candidates::CandidatePosterior;
pub use oracle::naive_posterior_oracle;

use crate::error::{Error, Result};
use crate::kernel::{check_point, check_points, KernelSpec};
use crate::linalg::{dot, factor_with_jitter, Cholesky};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Noisy observations `y = f(x) + ε`, `ε ~ N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub noise_var: f64,
}

impl Observations {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>, noise_var: f64) -> Result<Self> {
        let obs = Observations {
            points,
            values,
            noise_var,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn empty(noise_var: f64) -> Self {
        Observations {
            points: Vec::new(),
            values: Vec::new(),
            noise_var,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::arg(format!(
                "noise variance must be positive, got {}",
                self.noise_var
            )));
        }
        if self.points.len() != self.values.len() {
            return Err(Error::arg(format!(
                "{} points but {} values",
                self.points.len(),
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite observation {v}")));
        }
        check_points(&self.points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }
}

/// Posterior mean and variance at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Factorized GP posterior over observed data.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    kernel: KernelSpec,
    obs: Observations,
    factor: Cholesky,
    /// `L⁻¹ y`
    whitened: Vec<f64>,
    /// `C⁻¹ y`
    weights: Vec<f64>,
    jitter: f64,
}

impl PosteriorState {
    /// Conditions the zero-mean prior on `obs`.
    pub fn fit(kernel: &KernelSpec, obs: Observations) -> Result<Self> {
        kernel.validate()?;
        obs.validate()?;
        let mut c = kernel.gram(&obs.points)?;
        c.add_diagonal(obs.noise_var);
        let (factor, jitter) = factor_with_jitter(&c)?;
        let whitened = factor.solve_lower(&obs.values);
        let weights = factor.solve_upper(&whitened);
        Ok(PosteriorState {
            kernel: kernel.clone(),
            obs,
            factor,
            whitened,
            weights,
            jitter,
        })
    }

    /// The prior, with no data.
    pub fn prior(kernel: &KernelSpec, noise_var: f64) -> Result<Self> {
        Self::fit(kernel, Observations::empty(noise_var))
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn noise_var(&self) -> f64 {
        self.obs.noise_var
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Diagonal regularization added on top of `σ²` to make `C_T` factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    /// `C_T⁻¹ Y_T`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn whitened(&self) -> &[f64] {
        &self.whitened
    }

    pub(crate) fn diagonal_noise(&self) -> f64 {
        self.obs.noise_var + self.jitter
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        check_point(x)?;
        match self.obs.dim() {
            Some(d) if d != x.len() => Err(Error::arg(format!(
                "query has dimension {}, training data has {d}",
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    fn cross_covariance(&self, x: &[f64]) -> Vec<f64> {
        self.obs
            .points
            .iter()
            .map(|p| self.kernel.covariance(p, x))
            .collect()
    }

    /// Posterior mean `k_T(x)ᵀ C_T⁻¹ Y_T` and variance
    /// `k(x,x) − k_T(x)ᵀ C_T⁻¹ k_T(x)`, the latter clamped to `[0, k(x,x)]`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_query(x)?;
        let prior = self.kernel.prior_variance(x);
        let v = self.factor.solve_lower(&self.cross_covariance(x));
        let mean = dot(&v, &self.whitened);
        let variance = (prior - dot(&v, &v)).clamp(0.0, prior.max(0.0));
        Ok(Prediction { mean, variance })
    }

    /// Returns a new state conditioned on one more observation.
    pub fn append(&self, x: &[f64], y: f64) -> Result<Self> {
        let mut next = self.clone();
        next.push(x, y)?;
        Ok(next)
    }

    /// In-place variant of [`append`](Self::append).
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.check_query(x)?;
        if !y.is_finite() {
            return Err(Error::arg(format!("non-finite observation {y}")));
        }
        let k = self.cross_covariance(x);
        let diag = self.kernel.prior_variance(x) + self.diagonal_noise();
        match self.factor.extension(&k, diag) {
            Ok((l, d)) => {
                self.whitened.push((y - dot(&l, &self.whitened)) / d);
                self.factor.push_solved_row(&l, d);
                self.obs.points.push(x.to_vec());
                self.obs.values.push(y);
                self.weights = self.factor.solve_upper(&self.whitened);
            }
            Err(_) => {
                let mut obs = self.obs.clone();
                obs.points.push(x.to_vec());
                obs.values.push(y);
                *self = Self::fit(&self.kernel, obs)?;
            }
        }
        Ok(())
    }

    /// `log N(y; 0, C_T)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        -0.5 * dot(&self.whitened, &self.whitened) - 0.5 * self.factor.log_det() - 0.5 * n * LN_2PI
    }

    /// Starts a variance-only scratch pad on top of this state.
    pub fn scratch(&self) -> VarianceScratch<'_> {
        VarianceScratch {
            base: self,
            hallucinated: Vec::new(),
            factor: self.factor.clone(),
        }
    }
}

/// Posterior variance after conditioning on points whose values are unknown.
#[derive(Debug, Clone)]
pub struct VarianceScratch<'a> {
    base: &'a PosteriorState,
    hallucinated: Vec<Vec<f64>>,
    factor: Cholesky,
}

impl<'a> VarianceScratch<'a> {
    pub fn base(&self) -> &'a PosteriorState {
        self.base
    }

    pub fn hallucinated(&self) -> &[Vec<f64>] {
        &self.hallucinated
    }

    fn cross_covariance(&self, x: &[f64]) -> Vec<f64> {
        let kernel = &self.base.kernel;
        self.base
            .obs
            .points
            .iter()
            .chain(&self.hallucinated)
            .map(|p| kernel.covariance(p, x))
            .collect()
    }

    /// Returns a scratch pad additionally conditioned on `x`.
    pub fn hallucinate(&self, x: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.push(x)?;
        Ok(next)
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        self.base.check_query(x)?;
        if let Some(h) = self.hallucinated.first() {
            if h.len() != x.len() {
                return Err(Error::arg("hallucinated points must share one dimension"));
            }
        }
        let k = self.cross_covariance(x);
        let diag = self.base.kernel.prior_variance(x) + self.base.diagonal_noise();
        self.factor.push_row(&k, diag).map_err(|e| {
            Error::numerical(format!(
                "hallucinated update lost positive definiteness (pivot {:.3e})",
                e.pivot
            ))
        })?;
        self.hallucinated.push(x.to_vec());
        Ok(())
    }

    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        self.base.check_query(x)?;
        let prior = self.base.kernel.prior_variance(x);
        let v = self.factor.solve_lower(&self.cross_covariance(x));
        Ok((prior - dot(&v, &v)).clamp(0.0, prior.max(0.0)))
    }

    /// Mean of the base posterior; hallucinated points do not move it.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.base.predict(x).map(|p| p.mean)
    }
}

/// `log N(y; 0, K_T + σ²I)`.
pub fn log_marginal_likelihood(kernel: &KernelSpec, obs: &Observations) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::arg("marginal likelihood needs at least one observation"));
    }
    Ok(PosteriorState::fit(kernel, obs.clone())?.log_marginal_likelihood())
}

/// Information gain `½ log det(I + σ⁻² Σ)` about `f` from noisy observations
/// at `points`, where `Σ` is their posterior covariance given `conditioned_on`
/// (the prior covariance when `None`).
pub fn information_gain(
    kernel: &KernelSpec,
    noise_var: f64,
    points: &[Vec<f64>],
    conditioned_on: Option<&PosteriorState>,
) -> Result<f64> {
    kernel.validate()?;
    check_points(points)?;
    if !(noise_var > 0.0) {
        return Err(Error::arg("noise variance must be positive"));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let prior;
    let state = match conditioned_on {
        Some(s) => {
            if s.kernel() != kernel {
                return Err(Error::arg("conditioning state uses a different kernel"));
            }
            s
        }
        None => {
            prior = PosteriorState::prior(kernel, noise_var)?;
            &prior
        }
    };
    for p in points {
        state.check_query(p)?;
    }
    // Σ_ij = k(x_i, x_j) − v_iᵀ v_j with v_i = L⁻¹ k_T(x_i).
    let proj: Vec<Vec<f64>> = points
        .iter()
        .map(|p| state.factor.solve_lower(&state.cross_covariance(p)))
        .collect();
    let n = points.len();
    let mut m = crate::linalg::Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let cov = kernel.covariance(&points[i], &points[j]) - dot(&proj[i], &proj[j]);
            let v = cov / noise_var + if i == j { 1.0 } else { 0.0 };
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let (factor, _) = factor_with_jitter(&m)?;
    Ok(0.5 * factor.log_det())
}

/// The same quantity as [`information_gain`] expressed through sequential
/// posterior variances: `½ Σᵢ log(1 + σ⁻² sᵢ²)`.
pub fn information_gain_telescoping(
    kernel: &KernelSpec,
    noise_var: f64,
    points: &[Vec<f64>],
    conditioned_on: Option<&PosteriorState>,
) -> Result<f64> {
    let prior;
    let state = match conditioned_on {
        Some(s) => s,
        None => {
            prior = PosteriorState::prior(kernel, noise_var)?;
            &prior
        }
    };
    let mut scratch = state.scratch();
    let mut gain = 0.0;
    for p in points {
        let s2 = scratch.variance(p)?;
        gain += 0.5 * (s2 / noise_var).ln_1p();
        scratch.push(p)?;
    }
    Ok(gain)
}

/// Result of greedy information-gain maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyGain {
    /// Candidate indices in selection order.
    pub selected: Vec<usize>,
    /// Information gain of the selected set.
    pub gain: f64,
}

/// Greedily picks `budget` distinct candidates, each maximizing the current
/// posterior variance (ties to the lowest index). By submodularity the
/// returned gain is at least `(1 − 1/e)` of the best size-`budget` subset.
pub fn greedy_max_info_gain(
    kernel: &KernelSpec,
    noise_var: f64,
    candidates: &[Vec<f64>],
    budget: usize,
) -> Result<GreedyGain> {
    if budget == 0 {
        return Ok(GreedyGain {
            selected: Vec::new(),
            gain: 0.0,
        });
    }
    if candidates.is_empty() {
        return Err(Error::arg("greedy selection needs candidates"));
    }
    if budget > candidates.len() {
        return Err(Error::arg(format!(
            "budget {budget} exceeds {} candidates",
            candidates.len()
        )));
    }
    let prior = PosteriorState::prior(kernel, noise_var)?;
    let mut post = CandidatePosterior::from_state(&prior, candidates.to_vec())?;
    let mut taken = vec![false; candidates.len()];
    let mut selected = Vec::with_capacity(budget);
    let mut gain = 0.0;
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..candidates.len()).filter(|&i| !taken[i]) {
            let v = post.variance(i);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (i, v) = best.expect("budget <= candidate count");
        gain += 0.5 * (v / noise_var).ln_1p();
        taken[i] = true;
        selected.push(i);
        post.hallucinate_candidate(i)?;
    }
    Ok(GreedyGain { selected, gain })
}

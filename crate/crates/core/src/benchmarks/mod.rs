//! Benchmark objectives, noisy observation and regret bookkeeping.

mod dataset;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{point_key, Refresh, SearchDomain};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{dot, factor_with_jitter, Cholesky};

pub use dataset::{load_dataset_objective, CategoricalMode};

/// Tilted, negated Himmelblau function on `[−6, 6]²`.
pub fn eval_himmelblau(x: &[f64], tilt: f64) -> f64 {
    let (a, b) = (x[0], x[1]);
    -((a * a + b - 11.0).powi(2) + (a + b * b - 7.0).powi(2) + tilt * a)
}

pub const HIMMELBLAU_TILT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

/// Smooth perturbation: the kernel interpolant of a Gaussian-process draw on
/// a 6×6 anchor lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    kernel: KernelSpec,
    anchors: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Perturbation {
    pub fn sample(amplitude: f64, seed: u64) -> Result<Self> {
        let kernel = KernelSpec::matern(2.5, 0.3);
        let anchors: Vec<Vec<f64>> = (0..6)
            .flat_map(|i| (0..6).map(move |j| vec![i as f64 / 5.0, j as f64 / 5.0]))
            .collect();
        let (factor, _) = factor_with_jitter(&kernel.gram(&anchors)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..anchors.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let values: Vec<f64> = (0..anchors.len())
            .map(|i| amplitude * dot(factor.row(i), &z[..=i]))
            .collect();
        let weights = factor.solve(&values);
        Ok(Perturbation {
            kernel,
            anchors,
            weights,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * self.kernel.covariance(a, x))
            .sum()
    }
}

/// Three isotropic Gaussian bumps on `[0, 1]²`, the highest one the
/// narrowest, plus an optional smooth perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub bumps: Vec<Bump>,
    pub perturbation: Option<Perturbation>,
}

pub const MIXTURE_PERTURBATION: f64 = 0.05;
pub const MIXTURE_PERTURBATION_SEED: u64 = 2012;

impl GaussianMixture {
    pub fn exact() -> Self {
        let bump = |c: [f64; 2], height, width| Bump {
            center: c.to_vec(),
            height,
            width,
        };
        GaussianMixture {
            bumps: vec![
                bump([0.2, 0.5], 0.7, 0.10),
                bump([0.9, 0.9], 0.8, 0.10),
                bump([0.6, 0.1], 1.0, 0.05),
            ],
            perturbation: None,
        }
    }

    pub fn perturbed(amplitude: f64, seed: u64) -> Result<Self> {
        let mut m = Self::exact();
        if amplitude != 0.0 {
            m.perturbation = Some(Perturbation::sample(amplitude, seed)?);
        }
        Ok(m)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let base: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let d2: f64 = b.center.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
                b.height * (-d2 / (2.0 * b.width * b.width)).exp()
            })
            .sum();
        base + self.perturbation.as_ref().map_or(0.0, |p| p.eval(x))
    }
}

pub fn eval_gaussian_mixture(x: &[f64]) -> f64 {
    GaussianMixture::exact().eval(x)
}

/// Function values tabulated on a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    index: HashMap<Vec<u64>, usize>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(points: &[Vec<f64>], values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::arg("table needs one value per point"));
        }
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if index.insert(point_key(p), i).is_some() {
                return Err(Error::arg("table points must be distinct"));
            }
        }
        Ok(Table { index, values })
    }

    pub fn get(&self, x: &[f64]) -> Option<f64> {
        self.index.get(&point_key(x)).map(|&i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Himmelblau { tilt: f64 },
    Mixture(GaussianMixture),
    Table(Table),
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Objective::Himmelblau { tilt } => Ok(eval_himmelblau(x, *tilt)),
            Objective::Mixture(m) => Ok(m.eval(x)),
            Objective::Table(t) => t
                .get(x)
                .ok_or_else(|| Error::arg("point is not in the tabulated domain")),
        }
    }
}

/// A black-box maximization problem with known optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub domain: SearchDomain,
    pub objective: Objective,
    pub noise_std: f64,
    pub optimum_value: f64,
    pub optimum_point: Option<Vec<f64>>,
}

impl Task {
    /// Builds a task, certifying the optimum over the candidate set when it is
    /// fixed, or over a dense lattice refined by pattern search otherwise.
    pub fn new(name: impl Into<String>, domain: SearchDomain, objective: Objective, noise_std: f64) -> Result<Self> {
        domain.validate()?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::arg(format!("noise std must be finite and nonnegative, got {noise_std}")));
        }
        let (optimum_point, optimum_value) = match &domain {
            SearchDomain::Box {
                lower,
                upper,
                refresh: Refresh::Resampled,
                ..
            } => {
                let per_axis = dense_resolution(lower.len());
                let (p, _) = certify_grid_max(|x| objective.eval(x), lower, upper, per_axis)?;
                refine_max(|x| objective.eval(x), p, lower, upper, per_axis)?
            }
            _ => {
                let cands = domain.candidates(&mut ChaCha8Rng::seed_from_u64(0));
                let mut best: Option<(usize, f64)> = None;
                for (i, c) in cands.iter().enumerate() {
                    let v = objective.eval(c)?;
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                let (i, v) = best.expect("domains are nonempty");
                (cands[i].clone(), v)
            }
        };
        Ok(Task {
            name: name.into(),
            domain,
            objective,
            noise_std,
            optimum_value,
            optimum_point: Some(optimum_point),
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if let (SearchDomain::Finite { .. }, Objective::Table(t)) = (&self.domain, &self.objective) {
            // Hash lookup doubles as the membership test.
            return t
                .get(x)
                .ok_or_else(|| Error::arg(format!("point {x:?} lies outside the task domain")));
        }
        if !self.domain.contains(x) {
            return Err(Error::arg(format!("point {x:?} lies outside the task domain")));
        }
        self.objective.eval(x)
    }

    /// `f(x★) − f(x)`
    pub fn regret(&self, x: &[f64]) -> Result<f64> {
        Ok(self.optimum_value - self.value(x)?)
    }
}

/// `f(x) + ε`, `ε ~ N(0, noise_std²)` drawn from `rng`.
pub fn observe<R: Rng + ?Sized>(task: &Task, x: &[f64], rng: &mut R) -> Result<f64> {
    let f = task.value(x)?;
    if task.noise_std == 0.0 {
        return Ok(f);
    }
    let noise = Normal::new(0.0, task.noise_std).map_err(|e| Error::arg(e.to_string()))?;
    Ok(f + noise.sample(rng))
}

fn dense_resolution(dim: usize) -> usize {
    ((1e6f64).powf(1.0 / dim as f64).floor() as usize).clamp(2, 2001)
}

/// Maximum of `f` over the full `per_axis^d` lattice on a box; ties go to the
/// first point in lexicographic order.
pub fn certify_grid_max(
    f: impl Fn(&[f64]) -> Result<f64>,
    lower: &[f64],
    upper: &[f64],
    per_axis: usize,
) -> Result<(Vec<f64>, f64)> {
    if per_axis < 2 || lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::arg("certification grid needs at least two points per axis"));
    }
    let d = lower.len();
    let total = (per_axis as u64).checked_pow(d as u32).filter(|t| *t <= 1 << 32);
    let total = total.ok_or_else(|| Error::arg("certification grid too large"))?;
    let mut x = vec![0.0; d];
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..d).rev() {
            let i = (rem % per_axis as u64) as f64;
            rem /= per_axis as u64;
            x[k] = lower[k] + (upper[k] - lower[k]) * i / (per_axis - 1) as f64;
        }
        let v = f(&x)?;
        if v > best.1 {
            best = (x.clone(), v);
        }
    }
    Ok(best)
}

/// Compass search from a lattice maximizer, starting at one lattice step and
/// halving down to 1e-12.
fn refine_max(
    f: impl Fn(&[f64]) -> Result<f64>,
    start: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    per_axis: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut x = start;
    let mut fx = f(&x)?;
    let mut step: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| (u - l) / (per_axis - 1) as f64)
        .collect();
    while step.iter().any(|s| *s > 1e-12) {
        let mut improved = false;
        for k in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step[k]).clamp(lower[k], upper[k]);
                let fy = f(&y)?;
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Ok((x, fx))
}

/// Draws Gaussian-process sample paths on a fixed point set; the Gram
/// factorization is shared by all draws.
#[derive(Debug, Clone)]
pub struct GpSampler {
    kernel: KernelSpec,
    points: Vec<Vec<f64>>,
    factor: Cholesky,
    jitter: f64,
}

impl GpSampler {
    pub fn new(kernel: &KernelSpec, points: Vec<Vec<f64>>) -> Result<Self> {
        kernel.validate()?;
        let (factor, jitter) = factor_with_jitter(&kernel.gram(&points)?)?;
        Ok(GpSampler {
            kernel: kernel.clone(),
            points,
            factor,
            jitter,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..self.points.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        (0..self.points.len())
            .map(|i| dot(self.factor.row(i), &z[..=i]))
            .collect()
    }

    /// A task whose objective is one draw, tabulated on the sampler's points.
    pub fn task(&self, seed: u64, noise_std: f64) -> Result<Task> {
        let values = self.sample(seed);
        let table = Table::new(&self.points, values)?;
        let domain = SearchDomain::finite(self.points.clone())?;
        Task::new("gp_sample", domain, Objective::Table(table), noise_std)
    }
}

/// One draw from a zero-mean GP on the points of `grid` (finite or fixed
/// lattice) with unit observation noise.
pub fn sample_gp_objective(kernel: &KernelSpec, seed: u64, grid: &SearchDomain) -> Result<Task> {
    if !grid.is_fixed() {
        return Err(Error::arg("sampling needs a finite domain or a fixed lattice"));
    }
    let points = grid.candidates(&mut ChaCha8Rng::seed_from_u64(0));
    GpSampler::new(kernel, points)?.task(seed, 1.0)
}

fn default_tilt() -> f64 {
    HIMMELBLAU_TILT
}
fn default_count() -> usize {
    1024
}
fn default_himmelblau_noise() -> f64 {
    0.1
}
fn default_mixture_noise() -> f64 {
    0.01
}
fn default_perturbation() -> f64 {
    MIXTURE_PERTURBATION
}
fn default_perturbation_seed() -> u64 {
    MIXTURE_PERTURBATION_SEED
}
fn default_gp_kernel() -> KernelSpec {
    KernelSpec::matern(3.0, 0.25)
}
fn default_dim() -> usize {
    2
}
fn default_unit_noise() -> f64 {
    1.0
}
fn default_dataset_noise() -> f64 {
    0.1
}

/// Benchmark selection as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Himmelblau {
        #[serde(default = "default_tilt")]
        tilt: f64,
        #[serde(default = "default_himmelblau_noise")]
        noise_std: f64,
        #[serde(default = "default_count")]
        candidate_count: usize,
        #[serde(default)]
        refresh: Refresh,
    },
    GaussianMixture {
        #[serde(default = "default_perturbation")]
        perturbation: f64,
        #[serde(default = "default_perturbation_seed")]
        perturbation_seed: u64,
        #[serde(default = "default_mixture_noise")]
        noise_std: f64,
        #[serde(default = "default_count")]
        candidate_count: usize,
        #[serde(default)]
        refresh: Refresh,
    },
    GpSample {
        #[serde(default = "default_gp_kernel")]
        kernel: KernelSpec,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_count")]
        candidate_count: usize,
        #[serde(default = "default_unit_noise")]
        noise_std: f64,
    },
    Dataset {
        path: PathBuf,
        target: String,
        #[serde(default)]
        categorical: CategoricalMode,
        #[serde(default = "default_dataset_noise")]
        noise_std: f64,
    },
}

/// Built-in task names with one-line descriptions.
pub const TASKS: [(&str, &str); 4] = [
    ("himmelblau", "negated Himmelblau function with a linear tilt on [-6, 6]^2"),
    ("gaussian_mixture", "three Gaussian bumps on [0, 1]^2, maximum at (0.6, 0.1)"),
    ("gp_sample", "a fresh Gaussian-process draw per repetition on a lattice"),
    ("dataset", "rows of a CSV file as a finite domain, one column as the objective"),
];

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Himmelblau { .. } => "himmelblau",
            TaskSpec::GaussianMixture { .. } => "gaussian_mixture",
            TaskSpec::GpSample { .. } => "gp_sample",
            TaskSpec::Dataset { .. } => "dataset",
        }
    }

    pub fn himmelblau() -> Self {
        TaskSpec::Himmelblau {
            tilt: default_tilt(),
            noise_std: default_himmelblau_noise(),
            candidate_count: default_count(),
            refresh: Refresh::FixedGrid,
        }
    }

    pub fn gaussian_mixture() -> Self {
        TaskSpec::GaussianMixture {
            perturbation: default_perturbation(),
            perturbation_seed: default_perturbation_seed(),
            noise_std: default_mixture_noise(),
            candidate_count: default_count(),
            refresh: Refresh::FixedGrid,
        }
    }

    pub fn gp_sample() -> Self {
        TaskSpec::GpSample {
            kernel: default_gp_kernel(),
            dim: default_dim(),
            candidate_count: default_count(),
            noise_std: default_unit_noise(),
        }
    }

    /// Does the expensive once-per-sweep work.
    pub fn prepare(&self) -> Result<TaskFactory> {
        Ok(match self {
            TaskSpec::Himmelblau {
                tilt,
                noise_std,
                candidate_count,
                refresh,
            } => {
                let domain = SearchDomain::boxed(vec![-6.0; 2], vec![6.0; 2], *candidate_count, *refresh)?;
                let task = Task::new("himmelblau", domain, Objective::Himmelblau { tilt: *tilt }, *noise_std)?;
                TaskFactory::Fixed(Arc::new(task))
            }
            TaskSpec::GaussianMixture {
                perturbation,
                perturbation_seed,
                noise_std,
                candidate_count,
                refresh,
            } => {
                let domain = SearchDomain::unit_box(2, *candidate_count, *refresh)?;
                let mix = GaussianMixture::perturbed(*perturbation, *perturbation_seed)?;
                let task = Task::new("gaussian_mixture", domain, Objective::Mixture(mix), *noise_std)?;
                TaskFactory::Fixed(Arc::new(task))
            }
            TaskSpec::GpSample {
                kernel,
                dim,
                candidate_count,
                noise_std,
            } => {
                let grid = SearchDomain::unit_box(*dim, *candidate_count, Refresh::FixedGrid)?;
                let points = grid.candidates(&mut ChaCha8Rng::seed_from_u64(0));
                TaskFactory::Sampled {
                    sampler: Arc::new(GpSampler::new(kernel, points)?),
                    noise_std: *noise_std,
                }
            }
            TaskSpec::Dataset {
                path,
                target,
                categorical,
                noise_std,
            } => TaskFactory::Fixed(Arc::new(load_dataset_objective(path, target, *noise_std, *categorical)?)),
        })
    }
}

/// A prepared task source: one shared task, or a fresh draw per seed.
#[derive(Debug, Clone)]
pub enum TaskFactory {
    Fixed(Arc<Task>),
    Sampled { sampler: Arc<GpSampler>, noise_std: f64 },
}

impl TaskFactory {
    pub fn dim(&self) -> usize {
        match self {
            TaskFactory::Fixed(t) => t.domain.dim(),
            TaskFactory::Sampled { sampler, .. } => sampler.points()[0].len(),
        }
    }

    pub fn instance(&self, seed: u64) -> Result<Arc<Task>> {
        match self {
            TaskFactory::Fixed(t) => Ok(Arc::clone(t)),
            TaskFactory::Sampled { sampler, noise_std } => Ok(Arc::new(sampler.task(seed, *noise_std)?)),
        }
    }
}

/// Per-iteration regrets of queried batches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    /// `r_t^(k)` for every batch.
    pub per_point: Vec<Vec<f64>>,
    /// `r_t^K = min_k r_t^(k)`
    pub batch_min: Vec<f64>,
    /// Smallest regret queried up to and including iteration `t`.
    pub best_so_far: Vec<f64>,
    /// `R_t^K`, running sum of `batch_min`.
    pub cumulative_batch: Vec<f64>,
    /// `R_tK`, running sum of every point regret.
    pub cumulative_full: Vec<f64>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.batch_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch_min.is_empty()
    }

    /// Evaluates the regret of every point and records the batch.
    pub fn record_batch(&mut self, task: &Task, points: &[Vec<f64>]) -> Result<f64> {
        let regrets = points.iter().map(|p| task.regret(p)).collect::<Result<Vec<_>>>()?;
        self.record_regrets(regrets)
    }

    /// Records precomputed point regrets; returns `r_t^K`.
    pub fn record_regrets(&mut self, regrets: Vec<f64>) -> Result<f64> {
        if regrets.is_empty() {
            return Err(Error::arg("cannot record an empty batch"));
        }
        let min = regrets.iter().copied().fold(f64::INFINITY, f64::min);
        let sum: f64 = regrets.iter().sum();
        let best = self.best_so_far.last().map_or(min, |b| b.min(min));
        let rk = self.cumulative_batch.last().copied().unwrap_or(0.0) + min;
        let rtk = self.cumulative_full.last().copied().unwrap_or(0.0) + sum;
        self.per_point.push(regrets);
        self.batch_min.push(min);
        self.best_so_far.push(best);
        self.cumulative_batch.push(rk);
        self.cumulative_full.push(rtk);
        Ok(min)
    }

    /// `R_T^K`
    pub fn batch_regret(&self) -> f64 {
        self.cumulative_batch.last().copied().unwrap_or(0.0)
    }

    /// `R_TK`
    pub fn full_regret(&self) -> f64 {
        self.cumulative_full.last().copied().unwrap_or(0.0)
    }
}

//! Experiment runner: configuration, hyperparameter selection, repeated
//! seeded runs, bound and invariant checks, and CSV output.

mod report;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{observe, RegretLedger, Task, TaskFactory, TaskSpec};
use crate::domain::{BetaSchedule, SearchDomain};
use crate::error::{Error, Result};
use crate::gp::{
    greedy_max_info_gain, information_gain, log_marginal_likelihood, CandidatePosterior, Observations, PosteriorState,
};
use crate::kernel::KernelSpec;
use crate::strategy::{
    random_trace, select_batch_gpbucb, select_batch_random, select_batch_ucbpe, ucb_point, verify_ucbpe_trace, Pick,
    Policy, Role, SelectionTrace, StrategyConfig,
};

pub use report::*;

fn default_delta() -> f64 {
    0.1
}

/// Confidence-width schedule as configured; the domain supplies `|X|` or `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaConfig {
    /// Finite-domain schedule with the candidate-set size as `|X|`.
    Finite {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Compact-domain schedule. `a` and `b` default to 1 and `r` to the
    /// widest box edge.
    Compact {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "unit")]
        a: f64,
        #[serde(default = "unit")]
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<f64>,
    },
}

fn unit() -> f64 {
    1.0
}

/// Widest box edge, or the widest coordinate spread of a finite point set.
fn domain_edge(domain: &SearchDomain) -> f64 {
    match domain {
        SearchDomain::Box { lower, upper, .. } => lower.iter().zip(upper).map(|(l, u)| u - l).fold(0.0, f64::max),
        SearchDomain::Finite { points } => (0..domain.dim())
            .map(|k| {
                let (lo, hi) = points
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
                hi - lo
            })
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE),
    }
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig::Finite { delta: default_delta() }
    }
}

impl BetaConfig {
    pub fn schedule(&self, domain: &SearchDomain) -> BetaSchedule {
        match *self {
            BetaConfig::Finite { delta } => BetaSchedule::Finite {
                cardinality: domain.candidate_count(),
                delta,
            },
            BetaConfig::Compact { delta, a, b, r } => BetaSchedule::Compact {
                dim: domain.dim(),
                a,
                b,
                r: r.unwrap_or_else(|| domain_edge(domain)),
                delta,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Kernels tried by marginal likelihood; empty means the task's default.
    #[serde(default)]
    pub kernel_grid: Vec<KernelSpec>,
    /// Noise variances tried; empty means the task's default.
    #[serde(default)]
    pub noise_grid: Vec<f64>,
    /// Re-run selection on all data after every iteration. Defaults to on
    /// whenever the grids hold more than one pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reselect: Option<bool>,
    /// Standardize observations with the initial sample's mean and deviation.
    /// Defaults to on for every task except `gp_sample`.
    #[serde(default)]
    pub standardize: Option<bool>,
}

fn default_iterations() -> usize {
    30
}
fn default_init() -> usize {
    20
}
fn default_reps() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_init")]
    pub init_count: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: default_iterations(),
            init_count: default_init(),
            repetitions: default_reps(),
            base_seed: 0,
            output_dir: None,
        }
    }
}

fn default_slack() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Re-derive every batch from a fresh posterior and count violated
    /// argmax and region properties.
    #[serde(default)]
    pub invariants: bool,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            invariants: false,
            slack: default_slack(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub beta: BetaConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
}

impl ExperimentConfig {
    pub fn new(task: TaskSpec, strategy: StrategyConfig) -> Self {
        ExperimentConfig {
            task,
            strategy,
            beta: BetaConfig::default(),
            model: ModelConfig::default(),
            run: RunConfig::default(),
            checks: ChecksConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.run.iterations == 0 && self.run.repetitions == 0 {
            return Err(Error::Config("nothing to run".into()));
        }
        if self.run.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.run.init_count == 0 {
            return Err(Error::Config("init_count must be at least 1".into()));
        }
        let delta = match self.beta {
            BetaConfig::Finite { delta } | BetaConfig::Compact { delta, .. } => delta,
        };
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        for k in &self.model.kernel_grid {
            k.validate()?;
        }
        if self.model.noise_grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("noise variances must be positive".into()));
        }
        Ok(())
    }
}

/// Independent generator streams per repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Task instance (the sampled function for `gp_sample`).
    Task = 1,
    /// Initial design.
    Init = 2,
    /// Observation noise.
    Noise = 3,
    /// Random picks and resampled candidate sets.
    Policy = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one stream of one repetition. Strategies sharing a base seed see
/// the same tasks and initial designs.
pub fn derive_seed(base_seed: u64, repetition: usize, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ repetition as u64) ^ stream as u64)
}

/// The grid pair with the largest log marginal likelihood; the first pair in
/// grid order wins ties. Pairs whose factorization fails are skipped.
pub fn select_hyperparams(obs: &Observations, kernel_grid: &[KernelSpec], noise_grid: &[f64]) -> Result<(KernelSpec, f64)> {
    if kernel_grid.is_empty() || noise_grid.is_empty() {
        return Err(Error::arg("hyperparameter grids must be nonempty"));
    }
    if obs.len() < 2 {
        return Err(Error::arg("hyperparameter selection needs at least two observations"));
    }
    let mut best: Option<(KernelSpec, f64, f64)> = None;
    for kernel in kernel_grid {
        for &noise in noise_grid {
            let trial = Observations {
                noise_var: noise,
                ..obs.clone()
            };
            match log_marginal_likelihood(kernel, &trial) {
                Ok(lml) => {
                    if best.as_ref().is_none_or(|(_, _, b)| lml > *b) {
                        best = Some((kernel.clone(), noise, lml));
                    }
                }
                Err(e) => log::debug!("skipping {} with noise {noise}: {e}", kernel.label()),
            }
        }
    }
    best.map(|(k, n, _)| (k, n))
        .ok_or_else(|| Error::numerical("every hyperparameter pair failed to factorize"))
}

/// Wall-clock time per phase of one repetition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub setup: Duration,
    pub selection: Duration,
    pub checks: Duration,
    pub total: Duration,
}

/// Everything one repetition produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRow>,
    pub ledger: RegretLedger,
    pub timings: Timings,
}

impl RunRecord {
    pub fn curve(&self) -> RunCurve {
        RunCurve {
            repetition: self.metrics.repetition,
            batch_min: self.ledger.batch_min.clone(),
            best_so_far: self.ledger.best_so_far.clone(),
        }
    }
}

/// A sweep's records plus their aggregate.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub dim: usize,
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl SweepResult {
    pub fn metrics(&self) -> Vec<RunMetrics> {
        self.records.iter().map(|r| r.metrics.clone()).collect()
    }

    pub fn bound_report(&self) -> BoundReport {
        BoundReport::from_runs(&self.metrics())
    }

    /// Writes `trace.csv`, `summary.csv` and `runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows: Vec<TraceRow> = self.records.iter().flat_map(|r| r.trace.iter().cloned()).collect();
        write_trace(&dir.join("trace.csv"), self.dim, &rows)?;
        write_summary(&dir.join("summary.csv"), &self.summary)?;
        write_runs(&dir.join("runs.csv"), &self.metrics())
    }
}

/// A validated configuration with its task prepared.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    factory: TaskFactory,
    kernel_grid: Vec<KernelSpec>,
    noise_grid: Vec<f64>,
    standardize: bool,
    reselect: bool,
}

fn default_kernel_grid(task: &TaskSpec) -> Vec<KernelSpec> {
    let scales: &[f64] = match task {
        TaskSpec::GpSample { kernel, .. } => return vec![kernel.clone()],
        // No longer than the bump widths, so the thin peak stays representable.
        TaskSpec::GaussianMixture { .. } => &[0.05, 0.1],
        TaskSpec::Himmelblau { .. } | TaskSpec::Dataset { .. } => &[1.0, 2.0, 4.0],
    };
    scales.iter().map(|&l| KernelSpec::matern(2.5, l)).collect()
}

fn default_noise_grid(task: &TaskSpec) -> Vec<f64> {
    match task {
        TaskSpec::GpSample { noise_std, .. } => vec![noise_std * noise_std],
        _ => vec![1e-4, 1e-3, 1e-2, 1e-1],
    }
}

/// Stored view of the previous iteration for the deviation-chain checks.
struct PrevIteration {
    mask: Vec<bool>,
    state: Option<PosteriorState>,
    y_bullet: f64,
    beta_t_plus_1: f64,
    sigma_last: f64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let factory = config.task.prepare()?;
        let kernel_grid = if config.model.kernel_grid.is_empty() {
            default_kernel_grid(&config.task)
        } else {
            config.model.kernel_grid.clone()
        };
        let noise_grid = if config.model.noise_grid.is_empty() {
            default_noise_grid(&config.task)
        } else {
            config.model.noise_grid.clone()
        };
        let standardize = config
            .model
            .standardize
            .unwrap_or(!matches!(config.task, TaskSpec::GpSample { .. }));
        let reselect = config
            .model
            .reselect
            .unwrap_or(kernel_grid.len() * noise_grid.len() > 1);
        Ok(Experiment {
            config,
            factory,
            kernel_grid,
            noise_grid,
            standardize,
            reselect,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.factory.dim()
    }

    /// Runs every configured repetition; repetitions execute in parallel and
    /// come back in index order.
    pub fn sweep(&self) -> SweepResult {
        let records: Vec<RunRecord> = (0..self.config.run.repetitions)
            .into_par_iter()
            .map(|rep| self.run(rep))
            .collect();
        let curves: Vec<RunCurve> = records.iter().map(RunRecord::curve).collect();
        SweepResult {
            dim: self.dim(),
            summary: aggregate_runs(&curves),
            records,
        }
    }

    /// One repetition. Errors end the run early and are recorded in its
    /// status; completed iterations are kept.
    pub fn run(&self, repetition: usize) -> RunRecord {
        let start = Instant::now();
        let mut rec = RunRecord {
            metrics: RunMetrics {
                repetition,
                status: "ok".into(),
                batch_size: self.config.strategy.batch_size,
                scale: 1.0,
                deviation_sum_condition: true,
                contained: true,
                ..Default::default()
            },
            trace: Vec::new(),
            ledger: RegretLedger::new(),
            timings: Timings::default(),
        };
        if let Err(e) = self.run_into(repetition, &mut rec) {
            log::warn!("repetition {repetition} failed: {e}");
            rec.metrics.status = format!("failed: {e}");
        }
        rec.metrics.iterations = rec.ledger.len();
        rec.timings.total = start.elapsed();
        log::info!(
            "repetition {repetition}: {} iterations in {:.2?} (setup {:.2?}, selection {:.2?}, checks {:.2?})",
            rec.metrics.iterations,
            rec.timings.total,
            rec.timings.setup,
            rec.timings.selection,
            rec.timings.checks
        );
        rec
    }

    fn fit_hyperparams(&self, obs: &Observations) -> Result<(KernelSpec, f64)> {
        if self.kernel_grid.len() == 1 && self.noise_grid.len() == 1 {
            return Ok((self.kernel_grid[0].clone(), self.noise_grid[0]));
        }
        select_hyperparams(obs, &self.kernel_grid, &self.noise_grid)
    }

    fn run_into(&self, rep: usize, rec: &mut RunRecord) -> Result<()> {
        let phase = Instant::now();
        let cfg = &self.config;
        let batch = cfg.strategy.batch_size;
        let horizon = cfg.run.iterations;
        let seed = |s| derive_seed(cfg.run.base_seed, rep, s);
        let task = self.factory.instance(seed(Stream::Task))?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed(Stream::Init));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed(Stream::Noise));
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed(Stream::Policy));
        let fixed = task.domain.is_fixed();
        let fixed_cands = fixed.then(|| task.domain.candidates(&mut init_rng));

        // Initial design: distinct random candidates.
        let pool = match &fixed_cands {
            Some(c) => c.clone(),
            None => task.domain.candidates(&mut init_rng),
        };
        if cfg.run.init_count > pool.len() {
            return Err(Error::Config(format!(
                "init_count {} exceeds the {} available candidates",
                cfg.run.init_count,
                pool.len()
            )));
        }
        let picks = rand::seq::index::sample(&mut init_rng, pool.len(), cfg.run.init_count).into_vec();
        let mut xs = Vec::with_capacity(picks.len());
        let mut raw = Vec::with_capacity(picks.len());
        for (k, &i) in picks.iter().enumerate() {
            let x = pool[i].clone();
            let y = observe(&task, &x, &mut noise_rng)?;
            rec.trace.push(TraceRow {
                repetition: rep,
                t: -1,
                k,
                role: Role::Init,
                x: x.clone(),
                y,
                r: task.regret(&x)?,
                r_batch_min: None,
                best_so_far: None,
                beta_t: None,
                sigma: None,
                y_bullet: None,
            });
            xs.push(x);
            raw.push(y);
        }
        let (shift, scale) = if self.standardize { standardizer(&raw) } else { (0.0, 1.0) };
        rec.metrics.scale = scale;
        let to_model = |y: f64| (y - shift) / scale;

        let obs = Observations::new(xs, raw.iter().map(|&y| to_model(y)).collect(), 1.0)?;
        let (mut kernel, mut noise) = self.fit_hyperparams(&obs)?;
        let mut state = PosteriorState::fit(&kernel, Observations { noise_var: noise, ..obs })?;
        let init_state = state.clone();
        rec.metrics.kernel = kernel.label();
        rec.metrics.noise_var = noise;
        let schedule = cfg.beta.schedule(&task.domain);
        rec.timings.setup = phase.elapsed();

        let policy = cfg.strategy.policy;
        let mut post: Option<CandidatePosterior> = None;
        let mut queried: Vec<Vec<f64>> = Vec::new();
        let mut sigmas: Vec<Vec<f64>> = Vec::new();
        let mut prev: Option<PrevIteration> = None;
        let mut last_cands = fixed_cands.clone().unwrap_or_default();
        let mut reselected = false;

        for t in 0..horizon {
            let cands = match &fixed_cands {
                Some(c) => c.clone(),
                None => task.domain.candidates(&mut policy_rng),
            };
            let mut cp = match post.take() {
                Some(p) => p,
                None => CandidatePosterior::from_state(&state, cands.clone())?,
            };
            let beta_t = schedule.beta(t as u64 + 1)?;
            let beta_t1 = schedule.beta(t as u64 + 2)?;

            let check_start = Instant::now();
            if rec.metrics.contained {
                rec.metrics.contained = contained(&task, &cp, beta_t, &to_model)?;
            }
            let fresh = if cfg.checks.invariants {
                let fresh = CandidatePosterior::from_state(&state, cands.clone())?;
                rec.metrics.invariant_violations += drift(&cp, &fresh, 1e-8);
                Some(fresh)
            } else {
                None
            };
            rec.timings.checks += check_start.elapsed();

            let sel_start = Instant::now();
            let jitter = state.jitter();
            let mut rows = Vec::with_capacity(batch);
            let mut regrets = Vec::with_capacity(batch);
            let trace;
            if policy == Policy::SequentialUcb {
                // One real observation per pick; the width follows the query count.
                let mut picks = Vec::with_capacity(batch);
                for k in 0..batch {
                    let beta = schedule.beta((t * batch + k) as u64 + 1)?;
                    let idx = ucb_point(&cp, beta)?;
                    let x = cp.candidate(idx).to_vec();
                    let sigma = cp.std_dev(idx);
                    let y = observe(&task, &x, &mut noise_rng)?;
                    cp.observe(&x, to_model(y))?;
                    state.push(&x, to_model(y))?;
                    let r = task.regret(&x)?;
                    regrets.push(r);
                    rows.push(row(rep, t, k, Role::Ucb, &x, y, r, Some(beta), Some(sigma), None));
                    picks.push(Pick {
                        index: idx,
                        point: x,
                        role: Role::Ucb,
                        sigma,
                    });
                }
                trace = SelectionTrace {
                    picks,
                    beta_t,
                    beta_t_plus_1: None,
                    region: None,
                };
            } else {
                trace = match policy {
                    Policy::UcbPe => select_batch_ucbpe(&cp, batch, beta_t, beta_t1, cfg.strategy.pe_rule)?,
                    Policy::GpBucb => select_batch_gpbucb(&cp, batch, beta_t)?,
                    Policy::Random => {
                        let idx = select_batch_random(
                            cp.len(),
                            batch,
                            cfg.strategy.random_with_replacement,
                            &mut policy_rng,
                        )?;
                        random_trace(&cp, &idx)?
                    }
                    Policy::SequentialUcb => unreachable!(),
                };
                let beta_col = (policy != Policy::Random).then_some(beta_t);
                for (k, p) in trace.picks.iter().enumerate() {
                    let y = observe(&task, &p.point, &mut noise_rng)?;
                    let r = task.regret(&p.point)?;
                    regrets.push(r);
                    rows.push(row(rep, t, k, p.role, &p.point, y, r, beta_col, Some(p.sigma), trace.y_bullet()));
                    cp.observe(&p.point, to_model(y))?;
                    state.push(&p.point, to_model(y))?;
                }
            }
            rec.timings.selection += sel_start.elapsed();

            let check_start = Instant::now();
            if policy == Policy::UcbPe {
                if let Some(fresh) = &fresh {
                    let issues = verify_ucbpe_trace(fresh, &trace, cfg.strategy.pe_rule, cfg.checks.slack)?;
                    for issue in &issues {
                        log::warn!("repetition {rep}, iteration {t}: {issue}");
                    }
                    rec.metrics.invariant_violations += issues.len();
                }
                let x0 = &trace.picks[0];
                if let Some(p) = &prev {
                    let member = match &p.state {
                        None => p.mask[x0.index],
                        Some(s) => {
                            let pr = s.predict(&x0.point)?;
                            pr.mean + 2.0 * p.beta_t_plus_1.sqrt() * pr.std_dev() >= p.y_bullet
                        }
                    };
                    if member {
                        rec.metrics.ucb_step_checked += 1;
                        if x0.sigma > p.sigma_last + 1e-8 {
                            rec.metrics.ucb_step_violations += 1;
                            log::warn!(
                                "repetition {rep}, iteration {t}: ucb deviation {:.6e} exceeds previous last deviation {:.6e}",
                                x0.sigma,
                                p.sigma_last
                            );
                        }
                    } else {
                        rec.metrics.deviation_sum_condition = false;
                    }
                }
                let region = trace.region.as_ref().expect("ucb-pe traces carry a region");
                prev = Some(PrevIteration {
                    mask: region.mask.clone(),
                    state: if fixed { None } else { Some(pre_batch_state(&state, batch)?) },
                    y_bullet: region.y_bullet,
                    beta_t_plus_1: beta_t1,
                    sigma_last: trace.sigma_last().expect("nonempty batch"),
                });
            }
            rec.metrics.fallbacks += trace.fallback_count();
            rec.timings.checks += check_start.elapsed();

            rec.ledger.record_regrets(regrets)?;
            let (bmin, best) = (rec.ledger.batch_min[t], rec.ledger.best_so_far[t]);
            for mut r in rows {
                r.r_batch_min = Some(bmin);
                r.best_so_far = Some(best);
                rec.trace.push(r);
            }
            queried.extend(trace.points());
            sigmas.push(trace.picks.iter().map(|p| p.sigma).collect());
            last_cands = cands;

            if self.reselect {
                let (k, n) = self.fit_hyperparams(state.observations())?;
                if k != kernel || n != noise {
                    reselected = true;
                    log::debug!("repetition {rep}, iteration {t}: reselected {} noise {n}", k.label());
                    kernel = k;
                    noise = n;
                    let obs = Observations {
                        noise_var: noise,
                        ..state.observations().clone()
                    };
                    state = PosteriorState::fit(&kernel, obs)?;
                }
                rec.metrics.kernel = kernel.label();
                rec.metrics.noise_var = noise;
            } else if fixed && state.jitter() == jitter {
                post = Some(cp);
            }
        }

        let check_start = Instant::now();
        // After a reselection the deviations come from several models.
        let gain_state = (!reselected).then_some(&init_state);
        self.finish_metrics(rec, &kernel, noise, gain_state, &schedule, &queried, &sigmas, &last_cands)?;
        rec.timings.checks += check_start.elapsed();
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_metrics(
        &self,
        rec: &mut RunRecord,
        kernel: &KernelSpec,
        noise: f64,
        init_state: Option<&PosteriorState>,
        schedule: &BetaSchedule,
        queried: &[Vec<f64>],
        sigmas: &[Vec<f64>],
        cands: &[Vec<f64>],
    ) -> Result<()> {
        let m = &mut rec.metrics;
        let horizon = sigmas.len();
        let batch = self.config.strategy.batch_size;
        m.batch_regret = rec.ledger.batch_regret();
        m.full_regret = rec.ledger.full_regret();
        if horizon == 0 {
            m.deviation_sum_lhs = 0.0;
            m.deviation_sum_rhs = 0.0;
            return Ok(());
        }
        m.beta_final = schedule.beta(horizon as u64)?;
        let budget = (horizon * batch).min(cands.len());
        m.gamma_hat = greedy_max_info_gain(kernel, noise, cands, budget)?.gain;
        m.bound_batch = theorem_bound(horizon, batch, m.beta_final, m.gamma_hat, noise, RegretKind::Batch);
        m.bound_full = theorem_bound(horizon, batch, m.beta_final, m.gamma_hat, noise, RegretKind::Full);

        if self.config.strategy.policy == Policy::UcbPe {
            let k = batch as f64;
            m.deviation_sum_lhs = sigmas.iter().map(|s| s[0]).sum();
            m.deviation_sum_rhs = sigmas.iter().flatten().sum::<f64>() / k + horizon as f64 * 1e-6;
            let tail: f64 = sigmas[horizon - 1][1..].iter().sum();
            m.deviation_sum_boundary = ((k - 1.0) * sigmas[0][0] - tail) / k;
        } else {
            m.deviation_sum_condition = false;
            m.deviation_sum_lhs = f64::NAN;
            m.deviation_sum_rhs = f64::NAN;
            m.deviation_sum_boundary = f64::NAN;
        }
        if let Some(init_state) = init_state {
            m.variance_sum_lhs = sigmas.iter().flatten().map(|s| s * s).sum();
            m.variance_sum_rhs = variance_gain_constant(noise) * information_gain(kernel, noise, queried, Some(init_state))?;
        } else {
            m.variance_sum_lhs = f64::NAN;
            m.variance_sum_rhs = f64::NAN;
        }
        Ok(())
    }
}

/// Posterior before the last `batch` observations, refit from scratch.
fn pre_batch_state(state: &PosteriorState, batch: usize) -> Result<PosteriorState> {
    let obs = state.observations();
    let keep = obs.len() - batch;
    let trimmed = Observations::new(obs.points[..keep].to_vec(), obs.values[..keep].to_vec(), obs.noise_var)?;
    PosteriorState::fit(state.kernel(), trimmed)
}

/// Mean and sample deviation of the initial observations; a degenerate
/// sample keeps unit scale.
fn standardizer(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 1.0);
    }
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Whether `f` lies within `μ ± √β σ` at every candidate.
fn contained(task: &Task, post: &CandidatePosterior, beta: f64, to_model: &impl Fn(f64) -> f64) -> Result<bool> {
    let width = beta.sqrt();
    for i in 0..post.len() {
        let f = to_model(task.value(post.candidate(i))?);
        if (f - post.mean(i)).abs() > width * post.std_dev(i) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Number of candidates where the incremental and refit posteriors differ.
fn drift(a: &CandidatePosterior, b: &CandidatePosterior, tol: f64) -> usize {
    (0..a.len())
        .filter(|&i| (a.mean(i) - b.mean(i)).abs() > tol || (a.variance(i) - b.variance(i)).abs() > tol)
        .count()
}

#[allow(clippy::too_many_arguments)]
fn row(
    rep: usize,
    t: usize,
    k: usize,
    role: Role,
    x: &[f64],
    y: f64,
    r: f64,
    beta: Option<f64>,
    sigma: Option<f64>,
    y_bullet: Option<f64>,
) -> TraceRow {
    TraceRow {
        repetition: rep,
        t: t as i64,
        k,
        role,
        x: x.to_vec(),
        y,
        r,
        r_batch_min: None,
        best_so_far: None,
        beta_t: beta,
        sigma,
        y_bullet,
    }
}

/// Builds and runs a single repetition.
pub fn run_experiment(config: &ExperimentConfig, repetition: usize) -> Result<RunRecord> {
    Ok(Experiment::new(config.clone())?.run(repetition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::PeRule;

    fn small(policy: Policy) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            TaskSpec::GaussianMixture {
                perturbation: 0.0,
                perturbation_seed: 1,
                noise_std: 0.01,
                candidate_count: 64,
                refresh: crate::domain::Refresh::FixedGrid,
            },
            StrategyConfig::new(policy, 3),
        );
        c.run.iterations = 4;
        c.run.init_count = 5;
        c.run.repetitions = 2;
        c.checks.invariants = true;
        c
    }

    #[test]
    fn seeds_differ_by_stream_and_rep() {
        let a = derive_seed(1, 0, Stream::Init);
        assert_ne!(a, derive_seed(1, 0, Stream::Noise));
        assert_ne!(a, derive_seed(1, 1, Stream::Init));
        assert_ne!(a, derive_seed(2, 0, Stream::Init));
        assert_eq!(a, derive_seed(1, 0, Stream::Init));
    }

    #[test]
    fn hyperparams_single_and_argmax() {
        let obs = Observations::new(vec![vec![0.0], vec![0.5], vec![1.0]], vec![0.1, 0.9, 0.2], 1.0).unwrap();
        let k = KernelSpec::rbf(0.3);
        assert_eq!(select_hyperparams(&obs, &[k.clone()], &[0.2]).unwrap(), (k, 0.2));
        let grid = [KernelSpec::rbf(0.05), KernelSpec::rbf(0.3), KernelSpec::matern(1.5, 1.0)];
        let noises = [1e-3, 1e-1, 1.0];
        let (bk, bn) = select_hyperparams(&obs, &grid, &noises).unwrap();
        let best = log_marginal_likelihood(&bk, &Observations { noise_var: bn, ..obs.clone() }).unwrap();
        for k in &grid {
            for &n in &noises {
                let l = log_marginal_likelihood(k, &Observations { noise_var: n, ..obs.clone() }).unwrap();
                assert!(best >= l);
            }
        }
        assert!(select_hyperparams(&obs, &[], &noises).is_err());
    }

    #[test]
    fn every_policy_runs_clean() {
        for policy in Policy::ALL {
            let mut c = small(policy);
            c.model.reselect = Some(false);
            let exp = Experiment::new(c).unwrap();
            let rec = exp.run(0);
            assert_eq!(rec.metrics.status, "ok", "{policy}");
            assert_eq!(rec.ledger.len(), 4);
            assert_eq!(rec.trace.len(), 5 + 12);
            assert_eq!(rec.metrics.invariant_violations, 0, "{policy}");
            assert!(rec.metrics.variance_sum_holds(), "{policy}");
            assert!(rec.ledger.per_point.iter().flatten().all(|r| *r >= 0.0));
            assert!(rec.ledger.best_so_far.windows(2).all(|w| w[1] <= w[0]));

            // Reselection skips the variance sum only when the model moved.
            let rec = Experiment::new(small(policy)).unwrap().run(0);
            assert_eq!(rec.metrics.status, "ok", "{policy}");
            assert_eq!(rec.metrics.invariant_violations, 0, "{policy}");
            let m = &rec.metrics;
            assert!(m.variance_sum_lhs.is_nan() || m.variance_sum_holds(), "{policy}");
        }
    }

    #[test]
    fn zero_iterations_logs_init_only() {
        let mut c = small(Policy::UcbPe);
        c.run.iterations = 0;
        let rec = Experiment::new(c).unwrap().run(0);
        assert_eq!(rec.metrics.status, "ok");
        assert!(rec.ledger.is_empty());
        assert_eq!(rec.trace.len(), 5);
        assert!(rec.trace.iter().all(|r| r.t == -1 && r.role == Role::Init));
    }

    #[test]
    fn runs_are_reproducible() {
        let exp = Experiment::new(small(Policy::UcbPe)).unwrap();
        assert_eq!(exp.run(1).trace, exp.run(1).trace);
        assert_ne!(exp.run(0).trace, exp.run(1).trace);
    }

    #[test]
    fn failure_is_recorded() {
        let mut c = small(Policy::Random);
        c.run.init_count = 1000;
        let rec = Experiment::new(c).unwrap().run(0);
        assert!(rec.metrics.status.starts_with("failed"));
    }

    #[test]
    fn resampled_and_distinct_paths() {
        let mut c = small(Policy::UcbPe);
        c.task = TaskSpec::Himmelblau {
            tilt: 0.5,
            noise_std: 0.1,
            candidate_count: 50,
            refresh: crate::domain::Refresh::Resampled,
        };
        c.strategy.pe_rule = PeRule::Distinct;
        c.model.reselect = Some(true);
        let rec = Experiment::new(c).unwrap().run(0);
        assert_eq!(rec.metrics.status, "ok");
        assert_eq!(rec.metrics.invariant_violations, 0);
    }

    #[test]
    fn config_round_trip() {
        let text = r#"
[task]
name = "gp_sample"
candidate_count = 100

[strategy]
policy = "ucb_pe"
batch_size = 5

[beta]
kind = "compact"
a = 1.0
b = 1.0
r = 1.0

[model]
noise_grid = [1.0]

[run]
iterations = 3
repetitions = 2
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.run.init_count, 20);
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert!(matches!(
            ExperimentConfig::from_toml_str("[task]\nname = \"nope\"\n"),
            Err(Error::Config(_))
        ));
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucbpe::benchmarks::{certify_grid_max, eval_himmelblau, GaussianMixture, TaskSpec, HIMMELBLAU_TILT};
use ucbpe::benchmarks::{MIXTURE_PERTURBATION, MIXTURE_PERTURBATION_SEED};
use ucbpe::domain::{beta_compact, beta_finite};
use ucbpe::gp::{
    greedy_max_info_gain, information_gain, information_gain_telescoping, naive_posterior_oracle, Observations,
    PosteriorState,
};
use ucbpe::harness::{bound_c1, bound_c2, Experiment, ExperimentConfig, RegretKind, RunRecord};
use ucbpe::strategy::{Policy, StrategyConfig};
use ucbpe::KernelSpec;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> (bool, String) {
    let ok = elapsed <= Duration::from_secs(limit_secs);
    (ok, format!("{:.1}s of {limit_secs}s", elapsed.as_secs_f64()))
}

fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    match rng.random_range(0..3) {
        0 => KernelSpec::rbf(rng.random_range(0.1..2.0)),
        1 => {
            let nu = [0.5, 1.5, 2.5, 3.0, 0.8][rng.random_range(0..5)];
            KernelSpec::matern(nu, rng.random_range(0.1..2.0))
        }
        _ => KernelSpec::polynomial(rng.random_range(1..=3), rng.random_range(0.1..1.0)),
    }
    .with_amplitude(rng.random_range(0.5..2.0))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

fn random_state(rng: &mut ChaCha8Rng, max_n: usize) -> PosteriorState {
    let d = rng.random_range(1..=4);
    let n = rng.random_range(1..=max_n);
    let kernel = random_kernel(rng);
    let points = random_points(rng, n, d);
    let values = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let noise = rng.random_range(0.01..1.0);
    PosteriorState::fit(&kernel, Observations::new(points, values, noise).unwrap()).unwrap()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let state = random_state(&mut rng, 60);
        let d = state.observations().dim().unwrap();
        for x in random_points(&mut rng, 5, d) {
            let fast = state.predict(&x).unwrap();
            let slow = naive_posterior_oracle(state.kernel(), state.observations(), &x).unwrap();
            worst = worst.max((fast.mean - slow.mean).abs()).max((fast.variance - slow.variance).abs());
        }
    }
    let (timely, time) = within(start.elapsed(), 10);
    Verdict::new(worst <= 1e-8 && timely, format!("max abs error {worst:.2e}; {time}"))
}

fn hallucination() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let state = random_state(&mut rng, 40);
        let d = state.observations().dim().unwrap();
        let count = rng.random_range(1..=5);
        let added = random_points(&mut rng, count, d);
        let mut scratch = state.scratch();
        let mut real = state.clone();
        for x in &added {
            scratch.push(x).unwrap();
            real.push(x, rng.random_range(-10.0..10.0)).unwrap();
        }
        for p in random_points(&mut rng, 50, d) {
            let a = scratch.variance(&p).unwrap();
            let b = real.predict(&p).unwrap().variance;
            worst = worst.max((a - b).abs());
        }
    }
    let (timely, time) = within(start.elapsed(), 10);
    Verdict::new(worst <= 1e-8 && timely, format!("max abs error {worst:.2e}; {time}"))
}

fn subsets(m: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for last in size - 1..m {
        for mut s in subsets(last, size - 1) {
            s.push(last);
            out.push(s);
        }
    }
    out
}

fn information_identities() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let kernel = random_kernel(&mut rng);
        let d = rng.random_range(1..=4);
        let noise = rng.random_range(0.05..1.0);
        let count = rng.random_range(1..=20);
        let pts = random_points(&mut rng, count, d);
        let base = if rng.random_bool(0.5) {
            let obs = Observations::new(random_points(&mut rng, 5, d), vec![0.0; 5], noise).unwrap();
            Some(PosteriorState::fit(&kernel, obs).unwrap())
        } else {
            None
        };
        let det = information_gain(&kernel, noise, &pts, base.as_ref()).unwrap();
        let tel = information_gain_telescoping(&kernel, noise, &pts, base.as_ref()).unwrap();
        worst = worst.max((det - tel).abs());
    }

    let mut worst_ratio = f64::INFINITY;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let kernel = random_kernel(&mut rng);
        let noise = rng.random_range(0.05..1.0);
        let m = rng.random_range(4..=12);
        let d = rng.random_range(1..=3);
        let cands = random_points(&mut rng, m, d);
        for budget in 1..=4 {
            let greedy = greedy_max_info_gain(&kernel, noise, &cands, budget).unwrap().gain;
            let best = subsets(m, budget)
                .iter()
                .map(|s| {
                    let pts: Vec<Vec<f64>> = s.iter().map(|&i| cands[i].clone()).collect();
                    information_gain(&kernel, noise, &pts, None).unwrap()
                })
                .fold(0.0, f64::max);
            if best > 0.0 {
                worst_ratio = worst_ratio.min(greedy / best);
            }
        }
    }
    let bound = 1.0 - (-1.0f64).exp();
    let (timely, time) = within(start.elapsed(), 60);
    Verdict::new(
        worst <= 1e-8 && worst_ratio >= bound && timely,
        format!("determinant vs telescoping {worst:.2e}; worst greedy/optimum {worst_ratio:.4} (need {bound:.4}); {time}"),
    )
}

fn live_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(TaskSpec::gp_sample(), StrategyConfig::new(Policy::UcbPe, 10));
    c.model.noise_grid = vec![1.0];
    c.run.iterations = 20;
    c.run.init_count = 20;
    c.run.repetitions = 16;
    c.checks.invariants = true;
    c
}

fn live_invariants(records: &[RunRecord], elapsed: Duration) -> Verdict {
    let runs: Vec<_> = records.iter().map(|r| &r.metrics).collect();
    let failed = runs.iter().filter(|m| !m.is_ok()).count();
    let invariants: usize = runs.iter().map(|m| m.invariant_violations).sum();
    let var_sum = runs.iter().filter(|m| m.variance_sum_holds()).count();
    let step_checked: usize = runs.iter().map(|m| m.ucb_step_checked).sum();
    let step_bad: usize = runs.iter().map(|m| m.ucb_step_violations).sum();
    let sum_cond: Vec<_> = runs.iter().filter(|m| m.deviation_sum_condition).collect();
    let sum_held = sum_cond.iter().filter(|m| m.deviation_sum_holds()).count();
    let sum_corrected = sum_cond.iter().filter(|m| m.deviation_sum_corrected_holds()).count();
    let (timely, time) = within(elapsed, 15 * 60);
    let pass = failed == 0 && invariants == 0 && var_sum == runs.len() && step_bad == 0 && sum_held == sum_cond.len() && timely;
    Verdict::new(
        pass,
        format!(
            "{failed} failed runs; {invariants} selection violations; squared-deviation bound {var_sum}/{}; \
             next-UCB deviation {step_bad} violations in {step_checked} steps; deviation sum {sum_held}/{} \
             (with boundary term {sum_corrected}/{}); {time}",
            runs.len(),
            sum_cond.len(),
            sum_cond.len()
        ),
    )
}

fn regret_bounds(records: &[RunRecord]) -> Verdict {
    let n = records.len();
    let need = (0.9 * n as f64).ceil() as usize;
    let batch = records.iter().filter(|r| r.metrics.batch_bound_holds()).count();
    let full = records.iter().filter(|r| r.metrics.full_bound_holds()).count();
    Verdict::new(
        batch >= need && full >= need,
        format!("batch {batch}/{n}, full {full}/{n} (need {need})"),
    )
}

const POLICIES: [Policy; 4] = [Policy::UcbPe, Policy::Random, Policy::GpBucb, Policy::SequentialUcb];

struct TaskOutcome {
    task: &'static str,
    final_regret: [f64; 4],
    min_regret: f64,
}

fn decay_sweeps() -> (Vec<TaskOutcome>, Duration) {
    let start = Instant::now();
    let mut out = Vec::new();
    for spec in [TaskSpec::himmelblau(), TaskSpec::gaussian_mixture(), TaskSpec::gp_sample()] {
        let name = spec.name();
        let mut final_regret = [0.0; 4];
        let mut min_regret = f64::INFINITY;
        for (slot, policy) in POLICIES.iter().enumerate() {
            let mut c = ExperimentConfig::new(spec.clone(), StrategyConfig::new(*policy, 10));
            c.run.iterations = 30;
            c.run.repetitions = 32;
            let result = Experiment::new(c).unwrap().sweep();
            if let Some(bad) = result.records.iter().find(|r| !r.metrics.is_ok()) {
                panic!("{name}/{policy} repetition {}: {}", bad.metrics.repetition, bad.metrics.status);
            }
            final_regret[slot] = result.summary.at(29).unwrap().mean_best_so_far;
            for r in &result.records {
                for v in r.ledger.per_point.iter().flatten() {
                    min_regret = min_regret.min(*v);
                }
            }
        }
        out.push(TaskOutcome {
            task: name,
            final_regret,
            min_regret,
        });
    }
    (out, start.elapsed())
}

fn regret_ordering(outcomes: &[TaskOutcome], elapsed: Duration) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for o in outcomes {
        let [pe, random, bucb, seq] = o.final_regret;
        let better = bucb.min(seq);
        let a = pe * 3.0 <= random;
        let b = pe <= 2.0 * better;
        pass &= a && b;
        parts.push(format!(
            "{}: ucb_pe {pe:.3e} random {random:.3e} gp_bucb {bucb:.3e} sequential {seq:.3e} [vs random {}, vs best {}]",
            o.task,
            if a { "ok" } else { "FAIL" },
            if b { "ok" } else { "FAIL" }
        ));
    }
    let (timely, time) = within(elapsed, 30 * 60);
    parts.push(time);
    Verdict::new(pass && timely, parts.join("; "))
}

fn four_digits(x: f64) -> f64 {
    let scale = 10f64.powi(3 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn constants() -> Verdict {
    let ln2 = 2f64.ln();
    let checks = [
        ("beta_finite(10, 1000, 0.05)", beta_finite(10, 1000, 0.05).unwrap(), 30.01),
        ("beta_finite(1, 1, 0.9)", beta_finite(1, 1, 0.9).unwrap(), 1.206),
        ("beta_compact(1, 2, 1, 1, 1, 0.1)", beta_compact(1, 2, 1.0, 1.0, 1.0, 0.1).unwrap(), 14.10),
        ("C1 batch", bound_c1(1.0, RegretKind::Batch), 5.7708),
        ("C1 full", bound_c1(1.0, RegretKind::Full), 51.937),
        ("C2", bound_c2(), 1.2825),
        ("C1 batch formula", 4.0 / ln2, 5.7708),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| four_digits(*got) != four_digits(*want))
        .map(|(name, got, want)| format!("{name} = {got} (want {want})"))
        .collect();
    let detail = if bad.is_empty() {
        format!("{} values agree to 4 significant digits", checks.len())
    } else {
        bad.join("; ")
    };
    Verdict::new(bad.is_empty(), detail)
}

fn run_cli(config: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ucbpe"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        "[task]\nname = \"gaussian_mixture\"\n\n[strategy]\npolicy = \"ucb_pe\"\n\n\
         [run]\niterations = 6\nrepetitions = 6\nbase_seed = 7\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_cli(&config, &a) && run_cli(&config, &b)) {
        return Verdict::new(false, "cli run failed");
    }
    let mut same = Vec::new();
    for file in ["trace.csv", "summary.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        same.push((file, x == y, x.len()));
    }
    let pass = same.iter().all(|(_, eq, _)| *eq);
    let detail = same
        .iter()
        .map(|(f, eq, len)| format!("{f} {} ({len} bytes)", if *eq { "identical" } else { "differs" }))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(pass, detail)
}

fn certification(outcomes: &[TaskOutcome], live: &[RunRecord]) -> Verdict {
    let mix = GaussianMixture::perturbed(MIXTURE_PERTURBATION, MIXTURE_PERTURBATION_SEED).unwrap();
    let (mx, _) = certify_grid_max(|x| Ok(mix.eval(x)), &[0.0, 0.0], &[1.0, 1.0], 501).unwrap();
    let step = 1.0 / 500.0;
    let mix_ok = (mx[0] - 0.6).abs() <= step + 1e-12 && (mx[1] - 0.1).abs() <= step + 1e-12;

    let (hx, _) =
        certify_grid_max(|x| Ok(eval_himmelblau(x, HIMMELBLAU_TILT)), &[-6.0, -6.0], &[6.0, 6.0], 2001).unwrap();
    let dist = ((hx[0] + 3.7793).powi(2) + (hx[1] + 3.2832).powi(2)).sqrt();
    let him_ok = dist <= 0.05;

    let live_min = live
        .iter()
        .flat_map(|r| r.ledger.per_point.iter().flatten())
        .fold(f64::INFINITY, |a, b| a.min(*b));
    let min_regret = outcomes.iter().map(|o| o.min_regret).fold(live_min, f64::min);
    let reg_ok = min_regret >= 0.0;
    Verdict::new(
        mix_ok && him_ok && reg_ok,
        format!(
            "mixture argmax ({:.3}, {:.3}); himmelblau argmax ({:.4}, {:.4}) at distance {dist:.4}; \
             smallest recorded regret {min_regret:.3e}",
            mx[0], mx[1], hx[0], hx[1]
        ),
    )
}

fn main() {
    let mut verdicts: Vec<(&str, Verdict)> = Vec::new();
    let mut report = |name: &'static str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((name, v));
    };

    report("1 posterior oracle equivalence", oracle_equivalence());
    report("2 variance-only hallucination", hallucination());
    report("3 information-gain identities", information_identities());

    let start = Instant::now();
    let live = Experiment::new(live_config()).unwrap().sweep();
    let live_elapsed = start.elapsed();
    report("4 invariants on live runs", live_invariants(&live.records, live_elapsed));
    report("5 regret bound", regret_bounds(&live.records));

    let (outcomes, elapsed) = decay_sweeps();
    report("6 regret-decay ordering", regret_ordering(&outcomes, elapsed));
    report("7 schedule and constant arithmetic", constants());
    report("8 determinism", determinism());
    report("9 task certification", certification(&outcomes, &live.records));

    let failed = verdicts.iter().filter(|(_, v)| !v.pass).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

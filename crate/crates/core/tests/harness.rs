use std::io::Write;

use ucbpe::benchmarks::{CategoricalMode, TaskSpec};
use ucbpe::harness::{
    aggregate_runs, curves_from_trace, derive_seed, read_runs, read_summary, read_trace, Experiment, ExperimentConfig,
    Stream,
};
use ucbpe::strategy::{Policy, Role, StrategyConfig};

fn small(policy: Policy) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        TaskSpec::Himmelblau {
            tilt: 0.5,
            noise_std: 0.1,
            candidate_count: 100,
            refresh: Default::default(),
        },
        StrategyConfig::new(policy, 4),
    );
    c.run.iterations = 5;
    c.run.init_count = 8;
    c.run.repetitions = 3;
    c.run.base_seed = 11;
    c
}

#[test]
fn written_files_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        Experiment::new(small(Policy::UcbPe)).unwrap().sweep().write(dir).unwrap();
    }
    for file in ["trace.csv", "summary.csv", "runs.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs");
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let result = Experiment::new(small(Policy::GpBucb)).unwrap().sweep();
    result.write(dir.path()).unwrap();

    let rows = read_trace(&dir.path().join("trace.csv")).unwrap();
    let all: Vec<_> = result.records.iter().flat_map(|r| r.trace.iter().cloned()).collect();
    assert_eq!(rows, all);
    assert_eq!(read_summary(&dir.path().join("summary.csv")).unwrap(), result.summary);
    assert_eq!(aggregate_runs(&curves_from_trace(&rows)), result.summary);

    let runs = read_runs(&dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.len(), 3);
    for (r, m) in runs.iter().zip(result.metrics()) {
        assert_eq!(r.repetition, m.repetition);
        assert_eq!(r.batch_regret, m.batch_regret);
        assert_eq!(r.kernel, m.kernel);
    }
}

#[test]
fn trace_shape_and_regret_bookkeeping() {
    let c = small(Policy::UcbPe);
    let rec = Experiment::new(c.clone()).unwrap().run(0);
    assert_eq!(rec.metrics.status, "ok");
    let init = rec.trace.iter().filter(|r| r.role == Role::Init).count();
    assert_eq!(init, c.run.init_count);
    assert_eq!(rec.trace.len(), c.run.init_count + c.run.iterations * 4);
    for t in 0..c.run.iterations {
        let batch: Vec<_> = rec.trace.iter().filter(|r| r.t == t as i64).collect();
        assert_eq!(batch.len(), 4);
        assert_eq!(batch[0].role, Role::Ucb);
        let min = batch.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
        assert_eq!(batch[0].r_batch_min, Some(min));
        assert!(batch.iter().all(|r| r.r >= 0.0));
    }
    let ledger = &rec.ledger;
    assert!(ledger.best_so_far.windows(2).all(|w| w[1] <= w[0]));
    assert!(ledger.cumulative_batch.windows(2).all(|w| w[1] >= w[0]));
    assert!(ledger.batch_min.iter().zip(&ledger.per_point).all(|(m, b)| *m <= b[0]));
}

#[test]
fn strategies_share_tasks_and_initial_designs() {
    let pe = Experiment::new(small(Policy::UcbPe)).unwrap().run(1);
    let rnd = Experiment::new(small(Policy::Random)).unwrap().run(1);
    let init = |r: &ucbpe::harness::RunRecord| -> Vec<_> {
        r.trace.iter().filter(|x| x.role == Role::Init).map(|x| (x.x.clone(), x.y)).collect()
    };
    assert_eq!(init(&pe), init(&rnd));
    assert_ne!(derive_seed(11, 1, Stream::Init), derive_seed(11, 2, Stream::Init));
    assert_ne!(derive_seed(11, 1, Stream::Init), derive_seed(11, 1, Stream::Noise));
}

#[test]
fn config_file_round_trip() {
    let mut c = small(Policy::SequentialUcb);
    c.checks.invariants = true;
    let text = c.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);

    let parsed = ExperimentConfig::from_toml_str(
        "[task]\nname = \"gp_sample\"\n[strategy]\npolicy = \"gp_bucb\"\nbatch_size = 5\n",
    )
    .unwrap();
    assert_eq!(parsed.strategy.batch_size, 5);
    assert_eq!(parsed.run.repetitions, 64);
    assert!(ExperimentConfig::from_toml_str("[task]\nname = \"nope\"\n[strategy]\npolicy = \"ucb_pe\"\n").is_err());
    assert!(ExperimentConfig::from_toml_str("[task]\nname = \"himmelblau\"\n[strategy]\npolicy = \"ucb_pe\"\nbatch_size = 0\n").is_err());
}

#[test]
fn dataset_task_runs_end_to_end() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "sex,length,weight,rings").unwrap();
    for i in 0..60 {
        let sex = ["M", "F", "I"][i % 3];
        let length = 0.2 + 0.01 * i as f64;
        let weight = (i as f64 * 0.37).sin().abs();
        let rings = (10.0 * length + 3.0 * weight).round();
        writeln!(file, "{sex},{length},{weight},{rings}").unwrap();
    }
    let mut c = ExperimentConfig::new(
        TaskSpec::Dataset {
            path: file.path().to_path_buf(),
            target: "rings".into(),
            categorical: CategoricalMode::OneHot,
            noise_std: 0.1,
        },
        StrategyConfig::new(Policy::UcbPe, 3),
    );
    c.run.iterations = 4;
    c.run.init_count = 6;
    c.run.repetitions = 2;
    c.checks.invariants = true;
    let result = Experiment::new(c).unwrap().sweep();
    for r in &result.records {
        assert_eq!(r.metrics.status, "ok");
        assert_eq!(r.metrics.invariant_violations, 0);
        assert!(r.ledger.per_point.iter().flatten().all(|v| *v >= 0.0));
    }
    assert_eq!(result.dim, 5);
}

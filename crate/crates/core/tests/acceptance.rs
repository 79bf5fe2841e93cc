//! Acceptance suite. Runs every acceptance criterion, prints one PASS/FAIL
//! line per criterion and exits nonzero if any failed.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng;
use taskdistill::config::PipelineConfig;
use taskdistill::distill::{
    aux_head, multi_distill_loss, single_source_loss, train_baseline_supervised, train_target, DistillConfig,
    PseudoLabelCache, TargetArch,
};
use taskdistill::eval::{self, RankingEval};
use taskdistill::experiment::{self, ExperimentConfig, TaskOutcome, RANDOM_SELECTION_EXPECTED};
use taskdistill::model::{init_mlp, Activation, HeadSpec, LossTerm, TrainHyper, TARGET_HEAD};
use taskdistill::numerics;
use taskdistill::similarity::{self, Metric, RepresentationKind};
use taskdistill::taskgen::{build_universe, sample_split, SplitSizes, TaskSpec};
use taskdistill::weighting::{self, Scheme, SourceWeights, WeightingSpec};
use taskdistill::{io, pipeline, Error, Matrix};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn cka_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(3..=20);
        let dx = r.random_range(1..=8);
        let dy = r.random_range(1..=8);
        let x = common::random_matrix(&mut r, n, dx);
        let y = common::random_matrix(&mut r, n, dy);
        let closed = similarity::cka_linear_matrices(&x, &y).map_err(|e| e.to_string())?.value;
        worst = worst.max((closed - common::cka_oracle(&x, &y)).abs());
    }
    check(worst < 1e-8, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(5), start.elapsed())?;
    Ok(format!("100 pairs, max deviation {worst:.1e}"))
}

fn rank_oracles() -> Outcome {
    let mut r = common::rng(102);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = r.random_range(2..=50);
        let tied = case % 2 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| if tied { r.random_range(0..5) as f64 } else { r.random_range(-1.0..1.0) }).collect()
        };
        let x = draw(&mut r);
        let y = draw(&mut r);
        let s = numerics::spearman(&x, &y).map_err(|e| e.to_string())?.value;
        let k = numerics::kendall_tau(&x, &y).map_err(|e| e.to_string())?.value;
        worst = worst.max((s - common::spearman_oracle(&x, &y)).abs());
        worst = worst.max((k - common::kendall_oracle(&x, &y)).abs());
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("200 vector pairs, max deviation {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(103);
    let activations = [Activation::Tanh, Activation::Identity, Activation::Relu];
    let mut worst = 0.0f64;
    let cases = 12;
    for case in 0..cases {
        let input = r.random_range(1..6);
        let depth = r.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..7)).collect();
        let classes = [r.random_range(2..5), r.random_range(2..4)];
        let aux = aux_head("s");
        let heads = [HeadSpec::new(TARGET_HEAD, classes[0]), HeadSpec::new(aux.clone(), classes[1])];
        let model = init_mlp(input, &hidden, activations[case % 3], &heads, case as u64).map_err(|e| e.to_string())?;
        let (n0, n1) = (r.random_range(1..6), r.random_range(1..6));
        let x0 = common::random_matrix(&mut r, n0, input);
        let x1 = common::random_matrix(&mut r, n1, input);
        let t0 = common::random_distributions(&mut r, n0, classes[0]);
        let t1 = common::random_distributions(&mut r, n1, classes[1]);
        let terms = [
            LossTerm { head: TARGET_HEAD, batch: 0, targets: &t0, coeff: 0.6 },
            LossTerm { head: &aux, batch: 1, targets: &t1, coeff: 0.4 },
        ];
        let analytic = model.backward(&[&x0, &x1], &terms).map_err(|e| e.to_string())?.grads.flatten();
        let numeric = common::finite_difference(&model.params(), 1e-6, |p| {
            let mut m = model.clone();
            for (i, v) in p.iter().enumerate() {
                *m.param_mut(i).expect("index in range") = *v;
            }
            m.backward(&[&x0, &x1], &terms).expect("same shapes").loss
        });
        worst = worst.max(common::max_relative_error(&analytic, &numeric));
    }
    check(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(Duration::from_secs(30), start.elapsed())?;
    Ok(format!("{cases} architectures, max relative error {worst:.1e}"))
}

fn weighting_invariants() -> Outcome {
    let schemes: Vec<WeightingSpec> =
        ["power:p=12", "softmax:T=0.2", "nearest", "equal", "inverse", "random-weights:seed=1", "random-selection:seed=2"]
            .iter()
            .map(|s| s.parse().expect("valid scheme"))
            .collect();
    let config = Config { cases: 1000, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (
        prop::collection::vec(-1.0..1.0f64, 1..12),
        1e-3..40.0f64,
        -50.0..50.0f64,
        0.01..5.0f64,
        any::<u64>(),
    );
    runner
        .run(&strategy, |(raw, p, shift, t, seed)| {
            for spec in &schemes {
                match spec.weights(&raw, None, seed) {
                    Ok(w) => {
                        let sum: f64 = w.alphas().iter().sum();
                        prop_assert!(w.alphas().iter().all(|&a| a >= 0.0) && (sum - 1.0).abs() < 1e-9, "{spec}");
                    }
                    Err(Error::InverseUndefined) => prop_assert_eq!(*spec, WeightingSpec::Inverse),
                    Err(e) => prop_assert!(false, "{spec}: {e}"),
                }
            }
            let e = weighting::normalize_scores(&raw).expect("finite scores");
            let w = weighting::power_weights(&e, p).expect("valid power");
            prop_assert_eq!(numerics::argmax(w.alphas()), numerics::argmax(&e));
            let flat = weighting::power_weights(&e, 0.0).expect("p = 0");
            let equal = 1.0 / raw.len() as f64;
            prop_assert!(flat.alphas().iter().all(|&a| (a - equal).abs() < 1e-15));
            let a = weighting::softmax_weights(&raw, t).expect("valid temperature");
            let shifted: Vec<f64> = raw.iter().map(|v| v + shift).collect();
            let b = weighting::softmax_weights(&shifted, t).expect("valid temperature");
            for (x, y) in a.alphas().iter().zip(b.alphas()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 cases: simplex, argmax, p=0 and shift invariance".into())
}

fn objective_identities() -> Outcome {
    let universe = build_universe(7, 6, 4, 0.3).map_err(|e| e.to_string())?;
    let task = TaskSpec::new(vec![vec![0], vec![1, 2], vec![3]]).map_err(|e| e.to_string())?;
    let sizes = SplitSizes { n_total: 120, labeled_fraction: 0.25, probe_size: None, n_test: 60 };
    let split = sample_split(&universe, &task, &sizes, 7).map_err(|e| e.to_string())?;
    let unlabeled = split.unlabeled.as_ref().ok_or("no unlabeled data")?;
    let mut r = common::rng(104);
    let ids = ["s0", "s1", "s2"];
    let entries = ids
        .iter()
        .zip([2, 3, 4])
        .map(|(id, k)| (id.to_string(), common::random_distributions(&mut r, unlabeled.rows(), k)))
        .collect();
    let cache = PseudoLabelCache::new(entries).map_err(|e| e.to_string())?;

    let mut model = init_mlp(4, &[5], Activation::Tanh, &[HeadSpec::new(TARGET_HEAD, 3)], 1).map_err(|e| e.to_string())?;
    for (i, id) in ids.iter().enumerate() {
        model.add_head(&aux_head(id), cache.num_classes(i), 2 + i as u64).map_err(|e| e.to_string())?;
    }
    let y = split.labeled.onehot(3).map_err(|e| e.to_string())?;
    let l_rows: Vec<usize> = (0..10).collect();
    let u_rows: Vec<usize> = (5..17).collect();
    let (x_l, y_l) = (split.labeled.inputs.select_rows(&l_rows), y.select_rows(&l_rows));
    let x_u = unlabeled.select_rows(&u_rows);
    for lambda in [0.0, 0.5, 0.8] {
        for (s, id) in ids.iter().enumerate() {
            let w = SourceWeights::one_hot(3, s, Scheme::Nearest);
            let (multi, _) = multi_distill_loss(&model, (&x_l, &y_l), Some((&x_u, &u_rows)), &cache, lambda, &w)
                .map_err(|e| e.to_string())?;
            let pseudo = cache.matrix(s).select_rows(&u_rows);
            let single = single_source_loss(&model, (&x_l, &y_l), &x_u, &pseudo, id, lambda).map_err(|e| e.to_string())?;
            check(multi.total.to_bits() == single.to_bits(), || {
                format!("one-hot loss {} vs single-source {single} (lambda {lambda}, {id})", multi.total)
            })?;
        }
    }

    let cfg = DistillConfig {
        lambda: 1.0,
        weights: SourceWeights::new(vec![0.2, 0.3, 0.5], Scheme::Equal).map_err(|e| e.to_string())?,
        hyper: TrainHyper { learning_rate: 0.05, weight_decay: 1e-4, batch_size: 16, epochs: 5, seed: 42 },
        arch: TargetArch::default(),
        batch_ratio: (1, 1),
    };
    let (m1, h1) = train_target(&split, &cache, &cfg).map_err(|e| e.to_string())?;
    let (m2, h2) = train_baseline_supervised(&split, &cfg.hyper, &cfg.arch).map_err(|e| e.to_string())?;
    let bits = |m: &taskdistill::model::Mlp| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&m1) == bits(&m2) && h1 == h2, || "lambda = 1 diverged from the supervised baseline".into())?;
    Ok(format!("bitwise on 9 loss pairs and a {}-step trajectory", h1.steps.len()))
}

/// Synthetic benchmark runs shared by the correlation, ordering and top-k
/// criteria.
struct Benchmark {
    /// `(seed, task index, outcome)`.
    outcomes: Vec<(u64, usize, TaskOutcome)>,
    first_tasks_time: Duration,
    total_time: Duration,
}

const SEEDS: u64 = 5;
const TASKS_PER_SEED: usize = 3;

fn run_benchmark() -> Result<Benchmark, String> {
    let cfg = ExperimentConfig::benchmark();
    let schemes: Vec<WeightingSpec> =
        ["weighted:p=12", "equal", "nearest", "inverse"].iter().map(|s| s.parse().expect("valid scheme")).collect();
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let universes = (0..SEEDS)
        .map(|seed| experiment::make_universe(&cfg.universe, seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut first_tasks_time = Duration::ZERO;
    for task in 0..TASKS_PER_SEED {
        for (seed, universe) in (0..SEEDS).zip(&universes) {
            let outcome = experiment::run_task(universe, &cfg, &schemes, experiment::task_seed(seed, task))
                .map_err(|e| e.to_string())?;
            outcomes.push((seed, task, outcome));
        }
        if task == 0 {
            first_tasks_time = start.elapsed();
        }
    }
    Ok(Benchmark { outcomes, first_tasks_time, total_time: start.elapsed() })
}

fn parc_feature(o: &TaskOutcome) -> &[f64] {
    o.scores_for(Metric::Parc, RepresentationKind::Feature).expect("every cell is scored")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn score_accuracy_correlation(bench: &Result<Benchmark, String>) -> Outcome {
    let bench = bench.as_ref().map_err(Clone::clone)?;
    let spearman = |o: &TaskOutcome| eval::correlate(parc_feature(o), &o.single_source).map(|c| c.spearman.value);
    let mut per_seed = Vec::new();
    let mut all = Vec::new();
    for (_, task, o) in &bench.outcomes {
        let s = spearman(o).map_err(|e| e.to_string())?;
        if *task == 0 {
            per_seed.push(s);
        }
        all.push(s);
    }
    let m = mean(&per_seed);
    let shown: Vec<String> = per_seed.iter().map(|s| format!("{s:.3}")).collect();
    let detail = format!(
        "mean Spearman {m:.3} over {SEEDS} seeds [{}]; all {} tasks {:.3} ({:.0?})",
        shown.join(", "),
        all.len(),
        mean(&all),
        bench.first_tasks_time
    );
    check(m >= 0.5, || format!("{detail}; need >= 0.5"))?;
    within(Duration::from_secs(300), bench.first_tasks_time)?;
    Ok(detail)
}

fn scheme_ordering(bench: &Result<Benchmark, String>) -> Outcome {
    let bench = bench.as_ref().map_err(Clone::clone)?;
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, _, o) in &bench.outcomes {
        for (k, v) in &o.schemes {
            *sums.entry(k.as_str()).or_default() += v;
        }
    }
    let n = bench.outcomes.len() as f64;
    let acc = |k: &str| sums.get(k).copied().unwrap_or(f64::NAN) / n;
    let (weighted, equal, nearest, random, inverse) =
        (acc("weighted:p=12"), acc("equal"), acc("nearest"), acc(RANDOM_SELECTION_EXPECTED), acc("inverse"));
    let slack = 0.005;
    let detail = format!(
        "weighted {weighted:.4}, equal {equal:.4}, nearest {nearest:.4}, random-selection {random:.4}, inverse {inverse:.4} over {} tasks",
        bench.outcomes.len()
    );
    check(weighted >= equal - slack, || format!("weighted < equal: {detail}"))?;
    check(nearest >= random - slack, || format!("nearest < random-selection: {detail}"))?;
    check(inverse <= equal + slack, || format!("inverse > equal: {detail}"))?;
    within(Duration::from_secs(900), bench.total_time)?;
    Ok(format!("{detail} ({:.0?})", bench.total_time))
}

fn topk_beats_random(bench: &Result<Benchmark, String>) -> Outcome {
    let bench = bench.as_ref().map_err(Clone::clone)?;
    let mut parc = Vec::new();
    let mut random = Vec::new();
    for (_, _, o) in &bench.outcomes {
        let ranking = RankingEval::from_scores(parc_feature(o), &o.single_source).map_err(|e| e.to_string())?;
        parc.push(eval::mean_relative_accuracy(&ranking).map_err(|e| e.to_string())?);
        let oracle = common::random_mra_oracle(&o.single_source, o.single_source.len());
        let closed = eval::random_mean_relative_accuracy(&o.single_source, false).map_err(|e| e.to_string())?;
        check((oracle - closed).abs() < 1e-12, || format!("random expectation {closed} vs oracle {oracle}"))?;
        random.push(oracle);
    }
    let (p, r) = (mean(&parc), mean(&random));
    check(p >= r, || format!("PARC-feature {p:.4} < random {r:.4}"))?;
    Ok(format!("PARC-feature {p:.4} vs random expectation {r:.4}"))
}

fn pipeline_determinism() -> Outcome {
    let mut cfg = PipelineConfig { seed: 2024, num_targets: 2, ..PipelineConfig::default() };
    let mut trees = Vec::new();
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        cfg.output_dir = dir.path().join("run");
        pipeline::cmd_pipeline(&cfg).map_err(|e| e.to_string())?;
        trees.push(common::read_tree(&cfg.output_dir));
    }
    check(trees[0] == trees[1], || "pipeline runs differ".into())?;
    let reports = trees[0].iter().filter(|(p, _)| p.starts_with(pipeline::REPORT_DIR)).count();
    check(reports == pipeline::REPORT_FILES.len(), || format!("{reports} report files"))?;
    Ok(format!("{} files identical across two runs", trees[0].len()))
}

fn format_conformance() -> Outcome {
    let m = Matrix::new(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-3, 7.0]).map_err(|e| e.to_string())?;
    let bytes = io::encode_fmat(&m).map_err(|e| e.to_string())?;
    check(bytes.len() == 36, || format!("2x3 matrix took {} bytes", bytes.len()))?;
    check(bytes[..12] == [0x46, 0x4D, 0x41, 0x54, 2, 0, 0, 0, 3, 0, 0, 0], || "header bytes".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.fmat");
    io::write_fmat(&path, &m).map_err(|e| e.to_string())?;
    let back = io::read_fmat(&path).map_err(|e| e.to_string())?;
    check(back == io::round_f32(&m), || "roundtrip changed values".into())?;
    let p = Path::new("m.fmat");
    check(matches!(io::decode_fmat(&bytes[..30], p), Err(Error::TruncatedPayload { .. })), || "truncated file accepted".into())?;
    let mut bad = bytes.clone();
    bad[3] = b'X';
    check(matches!(io::decode_fmat(&bad, p), Err(Error::BadMagic(_))), || "bad magic accepted".into())?;
    Ok("roundtrip, 36-byte 2x3 file, truncation and bad magic rejected".into())
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |index: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS [{index:2}] {name}: {detail} ({elapsed:.1?})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{index:2}] {name}: {detail} ({elapsed:.1?})");
            }
        }
    };
    report(1, "metric oracle equivalence", &mut cka_oracle_equivalence);
    report(2, "rank-statistics oracles", &mut rank_oracles);
    report(3, "gradient checks", &mut gradient_checks);
    report(4, "weighting invariants", &mut weighting_invariants);
    report(5, "objective identities", &mut objective_identities);
    println!("running the synthetic benchmark ({SEEDS} seeds x {TASKS_PER_SEED} targets)...");
    let bench = run_benchmark();
    report(6, "similarity predicts single-source accuracy", &mut || score_accuracy_correlation(&bench));
    report(7, "weighting scheme ordering", &mut || scheme_ordering(&bench));
    report(8, "top-k relative accuracy above random", &mut || topk_beats_random(&bench));
    report(9, "pipeline determinism", &mut pipeline_determinism);
    report(10, "format conformance", &mut format_conformance);
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}

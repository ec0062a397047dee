//! Acceptance suite: one test per top-level correctness criterion, each
//! printing a `[PASS]` line on success (run with `-- --nocapture` to see
//! them). The checks pit the implementation against independent oracles
//! (finite differences, brute-force scans, all-pairs metrics) and
//! close with a scaled end-to-end run on synthetic data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dplan_core::agent::{self, TrainConfig};
use dplan_core::data::{self, Cell, Class, ColumnKind, ColumnSpec, Partition, RawTable, ScenarioSpec, Schema};
use dplan_core::environment::{external_reward, Action, Environment, Sampling};
use dplan_core::eval::{self, LabeledScores};
use dplan_core::iforest::IsolationForest;
use dplan_core::nn::{init_network, Arch, HiddenSpec, Mode};
use dplan_core::reward::{combined_reward, IntrinsicScorer};

// ---------------------------------------------------------------------------
// Shared synthetic-data helpers
// ---------------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn numeric_schema(dim: usize) -> Schema {
    Schema {
        columns: (0..dim)
            .map(|i| ColumnSpec {
                name: format!("f{i}"),
                kind: ColumnKind::Numeric,
            })
            .collect(),
        label_column: "label".into(),
        normal_class: "normal".into(),
        anomaly_classes: vec!["a".into(), "b".into()],
    }
}

/// One Gaussian cluster of normals plus two anomaly clusters displaced in
/// the first two dimensions only; the remaining dimensions are shared noise.
fn clustered_table(n_normal: usize, n_a: usize, n_b: usize, dim: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let push = |rng: &mut ChaCha8Rng, center: f64, spread: f64, label: &str,
                    rows: &mut Vec<Vec<Cell>>, labels: &mut Vec<String>| {
        let mut row = Vec::with_capacity(dim);
        for d in 0..dim {
            let v = if d < 2 {
                center + spread * gaussian(rng)
            } else {
                0.5 + 0.15 * gaussian(rng)
            };
            row.push(Cell::Number(v));
        }
        rows.push(row);
        labels.push(label.to_string());
    };
    for _ in 0..n_normal {
        push(&mut rng, 0.5, 0.08, "normal", &mut rows, &mut labels);
    }
    for _ in 0..n_a {
        push(&mut rng, 0.92, 0.04, "a", &mut rows, &mut labels);
    }
    for _ in 0..n_b {
        push(&mut rng, 0.8, 0.04, "b", &mut rows, &mut labels);
    }
    RawTable {
        schema: numeric_schema(dim),
        rows,
        labels,
    }
}

// ---------------------------------------------------------------------------
// Criterion: reward truth table and combined-reward range
// ---------------------------------------------------------------------------

#[test]
fn reward_truth_table_and_range() {
    // The four supervised combinations.
    assert_eq!(external_reward(Partition::LabeledAnomaly, Action::Anomalous), 1.0);
    assert_eq!(external_reward(Partition::Unlabeled, Action::Normal), 0.0);
    assert_eq!(external_reward(Partition::Unlabeled, Action::Anomalous), -1.0);
    assert_eq!(external_reward(Partition::LabeledAnomaly, Action::Normal), -1.0);

    // Combined reward stays in [-1, 2] with a real intrinsic scorer.
    let table = clustered_table(300, 80, 0, 4, 11);
    let mut spec = ScenarioSpec::new(vec!["a".into()], 11);
    spec.labeled_budget = 20;
    let dataset = data::make_scenario(&table, &spec).unwrap();
    let net = init_network(&Arch::default_for(dataset.dim()), 11).unwrap();
    let unlabeled: Vec<Vec<f64>> = dataset
        .unlabeled_indices()
        .iter()
        .map(|&i| dataset.features[i].clone())
        .collect();
    let scorer = IntrinsicScorer::with_defaults(&net, &unlabeled, 11).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let partitions = [Partition::LabeledAnomaly, Partition::Unlabeled];
    for _ in 0..100_000 {
        let p = partitions[rng.random_range(0..2)];
        let a = Action::from_index(rng.random_range(0..2));
        let row = rng.random_range(0..dataset.n_rows());
        let r_i = scorer.intrinsic_reward(&dataset.features[row]).unwrap();
        let r = combined_reward(external_reward(p, a), r_i);
        assert!((-1.0..=2.0).contains(&r), "combined reward {r} out of range");
    }
    println!("[PASS] reward truth table exact; combined reward in [-1,2] over 1e5 steps");
}

// ---------------------------------------------------------------------------
// Criterion: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

fn gradient_cases(arch: &Arch, seed: u64, cases: usize, params_per_layer: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for case in 0..cases {
        let mut net = init_network(arch, seed + 1 + case as u64).unwrap();
        let s: Vec<f64> = (0..arch.input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let action = rng.random_range(0..2usize);
        let y: f64 = rng.random_range(-2.0..2.0);

        let cache = net.forward(&s, Mode::Train, None).unwrap();
        let err = y - cache.output[action];
        let analytic = net.backward(&cache, action, err).unwrap();

        let h = 1e-5;
        let n_layers = net.layers.len();
        for li in 0..n_layers {
            let rows = net.layers[li].weights.len();
            let cols = net.layers[li].weights[0].len();
            for _ in 0..params_per_layer.min(rows * cols) {
                let o = rng.random_range(0..rows);
                let i = rng.random_range(0..cols);
                let orig = net.layers[li].weights[o][i];
                net.layers[li].weights[o][i] = orig + h;
                let qp = net.q_values(&s).unwrap()[action];
                net.layers[li].weights[o][i] = orig - h;
                let qm = net.q_values(&s).unwrap()[action];
                net.layers[li].weights[o][i] = orig;
                let numeric = ((y - qp).powi(2) - (y - qm).powi(2)) / (2.0 * h);
                let a = analytic.weights[li][o][i];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max((a - numeric).abs() / denom);
            }
        }
    }
    max_rel
}

#[test]
fn gradient_finite_difference_oracle() {
    let shallow = gradient_cases(&Arch::default_for(6), 1001, 10, usize::MAX);
    assert!(shallow < 1e-4, "default arch max relative error {shallow}");

    let deep = Arch {
        input_dim: 6,
        hidden: vec![
            HiddenSpec { width: 500, dropout: None },
            HiddenSpec { width: 100, dropout: None },
            HiddenSpec { width: 20, dropout: None },
        ],
    };
    let deep_rel = gradient_cases(&deep, 2002, 10, 120);
    assert!(deep_rel < 1e-4, "deep arch max relative error {deep_rel}");
    println!(
        "[PASS] gradient check: max relative error {:.2e} (default), {:.2e} (deep)",
        shallow, deep_rel
    );
}

// ---------------------------------------------------------------------------
// Criterion: g_u sampler vs brute-force nearest/farthest scan
// ---------------------------------------------------------------------------

#[test]
fn proximity_sampler_matches_brute_force() {
    let table = clustered_table(90, 30, 0, 3, 21);
    let mut spec = ScenarioSpec::new(vec!["a".into()], 21);
    spec.labeled_budget = 10;
    let dataset = data::make_scenario(&table, &spec).unwrap();
    let unlabeled = dataset.unlabeled_indices();

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..1000u64 {
        let net = init_network(&Arch::default_for(dataset.dim()), 1000 + case).unwrap();
        let embed = |x: &[f64]| net.embed(x).unwrap();
        // p = 0 forces g_u; a subsample covering the whole pool makes the
        // draw comparable to a deterministic full scan.
        let mut env = Environment::new(
            &dataset,
            Sampling::AnomalyBiased,
            0.0,
            unlabeled.len(),
            100,
            case,
        )
        .unwrap();
        let current = env.reset();
        let action = Action::from_index(rng.random_range(0..2));
        let got = env.sample_next(action, &embed).unwrap();

        let anchor = embed(&dataset.features[current]);
        let mut best = usize::MAX;
        let mut best_d = match action {
            Action::Anomalous => f64::INFINITY,
            Action::Normal => f64::NEG_INFINITY,
        };
        for &row in &unlabeled {
            if row == current {
                continue;
            }
            let e = embed(&dataset.features[row]);
            let d: f64 = anchor.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match action {
                Action::Anomalous => d < best_d || (d == best_d && row < best),
                Action::Normal => d > best_d || (d == best_d && row < best),
            };
            if better {
                best_d = d;
                best = row;
            }
        }
        assert_eq!(got, best, "case {case}: sampler disagrees with brute force");
    }
    println!("[PASS] g_u sampler matches brute-force nearest/farthest on 1000 cases");
}

// ---------------------------------------------------------------------------
// Criterion: isolation forest ranks planted outliers on top
// ---------------------------------------------------------------------------

#[test]
fn iforest_planted_outliers() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let mut data: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![gaussian(&mut rng), gaussian(&mut rng)])
            .collect();
        for k in 0..5 {
            let angle = k as f64 * 1.3;
            data.push(vec![10.0 * angle.cos(), 10.0 * angle.sin()]);
        }
        let forest = IsolationForest::fit_default(&data, seed).unwrap();
        let scores = forest.score_all(&data).unwrap();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let top10 = &order[..10];
        for outlier in 200..205 {
            assert!(
                top10.contains(&outlier),
                "seed {seed}: outlier {outlier} not in top 10"
            );
        }
    }
    println!("[PASS] isolation forest puts all 5 planted outliers in the top 10 for 5 seeds");
}

// ---------------------------------------------------------------------------
// Criterion: metrics vs all-pairs brute force and hand values
// ---------------------------------------------------------------------------

/// All-pairs AUC-ROC: P(anomaly ranked above normal), ties counted 1/2.
fn auc_roc_all_pairs(ls: &LabeledScores) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &pos) in ls.is_anomaly.iter().enumerate() {
        if !pos {
            continue;
        }
        for (j, &neg) in ls.is_anomaly.iter().enumerate() {
            if neg {
                continue;
            }
            pairs += 1.0;
            if ls.scores[i] > ls.scores[j] {
                wins += 1.0;
            } else if ls.scores[i] == ls.scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let n = rng.random_range(10..=2000);
        // A coarse grid on half the cases exercises tie handling.
        let coarse = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..8) as f64 / 7.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        if !labels.contains(&true) {
            labels[0] = true;
        }
        if !labels.contains(&false) {
            labels[n - 1] = false;
        }
        let ls = LabeledScores::new(scores, labels).unwrap();
        let fast = eval::auc_roc(&ls).unwrap();
        let brute = auc_roc_all_pairs(&ls);
        assert!(
            (fast - brute).abs() < 1e-9,
            "case {case}: {fast} vs brute {brute}"
        );
    }

    // Hand-computed average precision: anomalies at ranks 2 and 3 give
    // precision 1/2 then 2/3.
    let ls = LabeledScores::new(
        vec![0.9, 0.8, 0.7, 0.6],
        vec![false, true, true, false],
    )
    .unwrap();
    let ap = eval::auc_pr(&ls).unwrap();
    assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "{ap}");

    // All-tied scores resolve pessimistically: with 2 anomalies among 10,
    // precision 1/9 at the first hit and 2/10 at the second.
    let ls = LabeledScores::new(vec![0.5; 10], {
        let mut l = vec![false; 10];
        l[3] = true;
        l[7] = true;
        l
    })
    .unwrap();
    let ap = eval::auc_pr(&ls).unwrap();
    assert!((ap - (1.0 / 9.0 + 0.2) / 2.0).abs() < 1e-12, "{ap}");

    println!("[PASS] auc_roc matches all-pairs brute force (100 cases); auc_pr matches hand values");
}

// ---------------------------------------------------------------------------
// Criterion: bit-identical training determinism
// ---------------------------------------------------------------------------

#[test]
fn training_is_bit_deterministic() {
    let table = clustered_table(1872, 180, 120, 4, 41);
    let mut spec = ScenarioSpec::new(vec!["a".into()], 41);
    spec.labeled_budget = 40;
    let dataset = data::make_scenario(&table, &spec).unwrap();
    // Roughly 2,000 retained rows after the split drops surplus anomalies.
    assert!((1950..=2050).contains(&dataset.n_rows()), "{}", dataset.n_rows());

    let cfg = TrainConfig {
        n_episodes: 2,
        steps_per_episode: 500,
        warmup_steps: 200,
        target_update_interval: 400,
        embedding_refresh_interval: 250,
        epsilon_anneal_steps: 600,
        subsample_size: 200,
        seed: 41,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut model_bytes = Vec::new();
    let mut score_runs = Vec::new();
    for run in 0..2 {
        let (net, _log) = agent::train(&dataset, &cfg).unwrap();
        let path = dir.path().join(format!("model{run}.json"));
        dplan_core::nn::save_model(&path, &net, &dataset.stats).unwrap();
        model_bytes.push(std::fs::read(&path).unwrap());
        score_runs.push(agent::score_dataset(&net, &dataset, Partition::Test).unwrap());
    }
    assert_eq!(model_bytes[0], model_bytes[1], "model files differ");
    assert_eq!(score_runs[0], score_runs[1], "scores differ");
    println!("[PASS] identical seeds give bit-identical model files and scores");
}

// ---------------------------------------------------------------------------
// Criteria: end-to-end synthetic performance and ablation direction
// ---------------------------------------------------------------------------

struct RunOutcome {
    auc_pr: f64,
    auc_roc: f64,
    mean_known: f64,
    mean_unknown: f64,
    mean_normal: f64,
}

fn run_detector(dataset: &data::Dataset, cfg: &TrainConfig) -> RunOutcome {
    let (net, _log) = agent::train(dataset, cfg).unwrap();
    let scored = agent::score_dataset(&net, dataset, Partition::Test).unwrap();
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    let mut groups: [(f64, usize); 3] = [(0.0, 0); 3];
    for &(row, score) in &scored {
        scores.push(score);
        truth.push(dataset.class_of[row].is_anomaly());
        let g = match dataset.class_of[row] {
            Class::Normal => 2,
            c if dataset.is_known_class(c) => 0,
            _ => 1,
        };
        groups[g].0 += score;
        groups[g].1 += 1;
    }
    let ls = LabeledScores::new(scores, truth).unwrap();
    RunOutcome {
        auc_pr: eval::auc_pr(&ls).unwrap(),
        auc_roc: eval::auc_roc(&ls).unwrap(),
        mean_known: groups[0].0 / groups[0].1 as f64,
        mean_unknown: groups[1].0 / groups[1].1 as f64,
        mean_normal: groups[2].0 / groups[2].1 as f64,
    }
}

fn iforest_baseline_pr(dataset: &data::Dataset, seed: u64) -> f64 {
    let train_rows: Vec<Vec<f64>> = dataset
        .partition
        .iter()
        .enumerate()
        .filter(|(_, p)| **p != Partition::Test)
        .map(|(i, _)| dataset.features[i].clone())
        .collect();
    let forest = IsolationForest::fit_default(&train_rows, seed).unwrap();
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for i in dataset.test_indices() {
        scores.push(forest.score(&dataset.features[i]).unwrap());
        truth.push(dataset.class_of[i].is_anomaly());
    }
    eval::auc_pr(&LabeledScores::new(scores, truth).unwrap()).unwrap()
}

#[test]
fn end_to_end_synthetic_and_ablation() {
    // 5,000 normals; class "a" is the known anomaly class, class "b" stays
    // entirely unlabeled (contamination and test only).
    let table = clustered_table(5000, 160, 120, 6, 51);
    let spec = ScenarioSpec::new(vec!["a".into()], 51);
    let dataset = data::make_scenario(&table, &spec).unwrap();
    assert_eq!(dataset.labeled_indices().len(), 60);

    let seeds = [1u64, 2, 3];
    let mut full = Vec::new();
    let mut renv_pr = Vec::new();
    let mut baseline_pr = Vec::new();
    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        full.push(run_detector(&dataset, &cfg));
        let renv_cfg = TrainConfig {
            random_environment: true,
            ..cfg
        };
        renv_pr.push(run_detector(&dataset, &renv_cfg).auc_pr);
        baseline_pr.push(iforest_baseline_pr(&dataset, seed));
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let roc = mean(&full.iter().map(|r| r.auc_roc).collect::<Vec<_>>());
    let pr = mean(&full.iter().map(|r| r.auc_pr).collect::<Vec<_>>());
    let base = mean(&baseline_pr);
    assert!(roc >= 0.85, "mean AUC-ROC {roc} below 0.85");
    assert!(pr > base, "AUC-PR {pr} not above iForest baseline {base}");
    for r in &full {
        assert!(
            r.mean_known >= r.mean_unknown && r.mean_unknown >= r.mean_normal,
            "score ordering violated: known {} unknown {} normal {}",
            r.mean_known,
            r.mean_unknown,
            r.mean_normal
        );
    }
    println!(
        "[PASS] end-to-end synthetic: AUC-ROC {roc:.3} >= 0.85, AUC-PR {pr:.3} > iForest {base:.3}, score ordering holds"
    );

    let renv = mean(&renv_pr);
    assert!(
        pr > renv,
        "full AUC-PR {pr} not above random-environment variant {renv}"
    );
    println!("[PASS] ablation: full mean AUC-PR {pr:.3} > random-environment {renv:.3}");
}

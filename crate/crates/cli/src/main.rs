//! Command-line surface for the DPLAN pipeline: scenario preparation,
//! training, scoring, evaluation, the isolation-forest baseline, and
//! benchmark matrices.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use dplan_core::agent::{self, TrainConfig};
use dplan_core::data::{
    self, Class, Dataset, Partition, RawTable, ScenarioSpec, Schema,
};
use dplan_core::eval::{self, LabeledScores, ResultRow};
use dplan_core::iforest::IsolationForest;
use dplan_core::nn;
use dplan_core::{Error, Result};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "dplan", about = "Weakly-supervised anomaly detection with deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a training/test scenario from a raw CSV and persist it.
    Prep(PrepArgs),
    /// Train a detector on a prepared scenario.
    Train(TrainArgs),
    /// Score the test partition of a scenario with a trained model.
    Score(ScoreArgs),
    /// Join scores with ground truth and report AUC-PR / AUC-ROC.
    Eval(EvalArgs),
    /// Unsupervised isolation-forest baseline over the raw feature space.
    Iforest(IforestArgs),
    /// Expand a benchmark matrix (scenarios x pollution x seeds) and
    /// aggregate the results.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PrepArgs {
    /// Input data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Column schema JSON.
    #[arg(long)]
    schema: PathBuf,
    /// Scenario spec JSON (known_classes, labeled_budget, ...).
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Contamination pollution factor n (rate becomes n x 2%).
    #[arg(long)]
    pollution: Option<u32>,
    /// Output directory for the scenario files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding a prepared scenario.
    #[arg(long)]
    scenario: PathBuf,
    /// Training config JSON; omitted fields use the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation: external reward only (intrinsic reward disabled).
    #[arg(long)]
    erew: bool,
    /// Ablation: uniform random environment instead of anomaly-biased
    /// sampling.
    #[arg(long)]
    renv: bool,
    /// Use the deeper 500-100-20 architecture with dropout.
    #[arg(long)]
    deep: bool,
    /// Output directory for model.json and train_log.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Trained model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Partition to score.
    #[arg(long, default_value = "test")]
    partition: String,
    /// Output directory for scores.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// scores.csv produced by `score` or `iforest`.
    #[arg(long)]
    scores: PathBuf,
    /// Optional directory for metrics.csv; metrics always print to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IforestArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 256)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for scores.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Benchmark matrix JSON.
    #[arg(long)]
    config: PathBuf,
    /// Run cells concurrently (capped by DPLAN_THREADS).
    #[arg(long)]
    parallel: bool,
    /// Output directory for results.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Benchmark matrix: each named scenario is crossed with every pollution
/// factor and every seed; each cell trains DPLAN and fits the baseline.
#[derive(Debug, Clone, Deserialize)]
struct BenchSpec {
    scenarios: Vec<BenchScenario>,
    #[serde(default = "default_factors")]
    pollution_factors: Vec<u32>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default = "default_budget")]
    labeled_budget: usize,
    #[serde(default = "default_train_fraction")]
    train_fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct BenchScenario {
    name: String,
    known_classes: Vec<String>,
}

fn default_factors() -> Vec<u32> {
    vec![1]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_budget() -> usize {
    60
}
fn default_train_fraction() -> f64 {
    0.8
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prep(args) => cmd_prep(args),
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Iforest(args) => cmd_iforest(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_scenario_checked(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "scenario directory {} does not exist",
            dir.display()
        )));
    }
    data::load_scenario(dir)
}

fn load_table(data: &Path, schema: &Path) -> Result<RawTable> {
    let schema = Schema::from_json_file(schema)?;
    data::load_csv(data, &schema)
}

fn partition_counts(dataset: &Dataset) -> String {
    let count = |p| dataset.indices_of(p).len();
    let mut out = format!(
        "rows: {}  labeled_anomaly: {}  unlabeled: {}  test: {}\n",
        dataset.n_rows(),
        count(Partition::LabeledAnomaly),
        count(Partition::Unlabeled),
        count(Partition::Test),
    );
    let normals = dataset
        .class_of
        .iter()
        .filter(|c| !c.is_anomaly())
        .count();
    out.push_str(&format!("class normal: {normals}\n"));
    for (i, name) in dataset.class_names.iter().enumerate() {
        let n = dataset
            .class_of
            .iter()
            .filter(|c| **c == Class::Anomaly(i))
            .count();
        out.push_str(&format!("class {name}: {n}\n"));
    }
    out
}

fn cmd_prep(args: PrepArgs) -> Result<()> {
    let table = load_table(&args.data, &args.schema)?;
    let mut spec: ScenarioSpec = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dataset = match args.pollution {
        Some(n) => data::apply_pollution(&table, &spec, n)?,
        None => data::make_scenario(&table, &spec)?,
    };
    fs::create_dir_all(&args.out)?;
    data::save_scenario(&args.out, &dataset)?;
    print!("{}", partition_counts(&dataset));
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    // Flags win over file values but never un-set them.
    cfg.disable_intrinsic |= args.erew;
    cfg.random_environment |= args.renv;
    cfg.deep_arch |= args.deep;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = load_scenario_checked(&args.scenario)?;
    let cfg = resolve_train_config(&args)?;
    let (net, log) = agent::train(&dataset, &cfg)?;
    fs::create_dir_all(&args.out)?;
    nn::save_model(&args.out.join("model.json"), &net, &dataset.stats)?;
    fs::write(args.out.join("train_log.csv"), log.to_csv(false))?;
    println!(
        "trained {} episodes, {} gradient updates; model at {}",
        log.episodes.len(),
        log.gradient_updates,
        args.out.join("model.json").display()
    );
    Ok(())
}

fn parse_partition(name: &str) -> Result<Partition> {
    match name {
        "labeled_anomaly" => Ok(Partition::LabeledAnomaly),
        "unlabeled" => Ok(Partition::Unlabeled),
        "test" => Ok(Partition::Test),
        other => Err(Error::Config(format!("unknown partition '{other}'"))),
    }
}

fn write_scores(path: &Path, scores: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("row,score\n");
    for (row, score) in scores {
        out.push_str(&format!("{row},{score}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |field: Option<&str>, what: &str| -> Result<String> {
            field.map(str::to_owned).ok_or_else(|| Error::Parse {
                row: i + 2,
                message: format!("missing {what} column"),
            })
        };
        let row = parse(record.get(0), "row")?
            .parse::<usize>()
            .map_err(|e| Error::Parse {
                row: i + 2,
                message: format!("bad row index: {e}"),
            })?;
        let score = parse(record.get(1), "score")?
            .parse::<f64>()
            .map_err(|e| Error::Parse {
                row: i + 2,
                message: format!("bad score: {e}"),
            })?;
        out.push((row, score));
    }
    Ok(out)
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let dataset = load_scenario_checked(&args.scenario)?;
    let (net, _stats) = nn::load_model(&args.model)?;
    let partition = parse_partition(&args.partition)?;
    if net.input_dim() != dataset.dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: dataset.dim(),
        });
    }
    let scores = agent::score_dataset(&net, &dataset, partition)?;
    fs::create_dir_all(&args.out)?;
    write_scores(&args.out.join("scores.csv"), &scores)?;
    println!("scored {} rows of partition {partition}", scores.len());
    Ok(())
}

/// Join row-indexed scores with the scenario's ground truth.
fn labeled_scores(dataset: &Dataset, scores: &[(usize, f64)]) -> Result<LabeledScores> {
    let mut values = Vec::with_capacity(scores.len());
    let mut truth = Vec::with_capacity(scores.len());
    for &(row, score) in scores {
        let class = dataset.class_of.get(row).ok_or_else(|| {
            Error::Schema(format!(
                "score row {row} out of range for a {}-row scenario",
                dataset.n_rows()
            ))
        })?;
        values.push(score);
        truth.push(class.is_anomaly());
    }
    LabeledScores::new(values, truth)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_scenario_checked(&args.scenario)?;
    let scores = read_scores(&args.scores)?;
    let ls = labeled_scores(&dataset, &scores)?;
    let pr = eval::auc_pr(&ls)?;
    let roc = eval::auc_roc(&ls)?;
    let report = format!("auc_pr,{pr:.6}\nauc_roc,{roc:.6}\n");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), &report)?;
    }
    print!("{report}");
    Ok(())
}

/// Fit the baseline on the raw training features (labeled + unlabeled) and
/// score the test partition.
fn iforest_scores(
    dataset: &Dataset,
    trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut train_rows: Vec<Vec<f64>> = Vec::new();
    for (i, p) in dataset.partition.iter().enumerate() {
        if *p != Partition::Test {
            train_rows.push(dataset.features[i].clone());
        }
    }
    let forest = IsolationForest::fit(&train_rows, trees, subsample, seed)?;
    dataset
        .test_indices()
        .into_iter()
        .map(|i| Ok((i, forest.score(&dataset.features[i])?)))
        .collect()
}

fn cmd_iforest(args: IforestArgs) -> Result<()> {
    let dataset = load_scenario_checked(&args.scenario)?;
    let scores = iforest_scores(&dataset, args.trees, args.subsample, args.seed)?;
    fs::create_dir_all(&args.out)?;
    write_scores(&args.out.join("scores.csv"), &scores)?;
    println!("scored {} test rows with the isolation-forest baseline", scores.len());
    Ok(())
}

/// One benchmark cell: a named scenario at a pollution factor and seed.
#[derive(Debug, Clone)]
struct BenchCell {
    label: String,
    known_classes: Vec<String>,
    factor: u32,
    seed: u64,
}

/// Per-cell (AUC-PR, AUC-ROC) for both methods.
struct CellResult {
    label: String,
    dplan: (f64, f64),
    iforest: (f64, f64),
}

fn run_cell(
    table: &RawTable,
    spec: &BenchSpec,
    cell: &BenchCell,
) -> Result<CellResult> {
    let mut scenario = ScenarioSpec::new(cell.known_classes.clone(), cell.seed);
    scenario.labeled_budget = spec.labeled_budget;
    scenario.train_fraction = spec.train_fraction;
    let dataset = data::apply_pollution(table, &scenario, cell.factor)?;

    let mut cfg = spec.train.clone().unwrap_or_default();
    cfg.seed = cell.seed;
    let (net, _log) = agent::train(&dataset, &cfg)?;
    let dplan_scores = agent::score_dataset(&net, &dataset, Partition::Test)?;
    let dplan_ls = labeled_scores(&dataset, &dplan_scores)?;
    let dplan = (eval::auc_pr(&dplan_ls)?, eval::auc_roc(&dplan_ls)?);

    let baseline_scores = iforest_scores(&dataset, 100, 256, cell.seed)?;
    let baseline_ls = labeled_scores(&dataset, &baseline_scores)?;
    let iforest = (eval::auc_pr(&baseline_ls)?, eval::auc_roc(&baseline_ls)?);

    Ok(CellResult {
        label: cell.label.clone(),
        dplan,
        iforest,
    })
}

fn bench_thread_count(parallel: bool, n_cells: usize) -> usize {
    if !parallel {
        return 1;
    }
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("DPLAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(available);
    cap.min(available).min(n_cells).max(1)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let table = load_table(&args.data, &args.schema)?;
    let spec: BenchSpec = read_json(&args.config)?;
    if spec.scenarios.is_empty() || spec.seeds.is_empty() || spec.pollution_factors.is_empty() {
        return Err(Error::Config(
            "bench spec needs scenarios, seeds, and pollution_factors".into(),
        ));
    }

    let mut cells = Vec::new();
    for scenario in &spec.scenarios {
        for &factor in &spec.pollution_factors {
            for &seed in &spec.seeds {
                cells.push(BenchCell {
                    label: format!("{}/x{}", scenario.name, factor),
                    known_classes: scenario.known_classes.clone(),
                    factor,
                    seed,
                });
            }
        }
    }

    let n_threads = bench_thread_count(args.parallel, cells.len());
    let queue = Mutex::new(cells.iter().cloned().collect::<VecDeque<_>>());
    let results: Mutex<Vec<CellResult>> = Mutex::new(Vec::with_capacity(cells.len()));
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..n_threads {
            scope.spawn(|| loop {
                let cell = match queue.lock().unwrap().pop_front() {
                    Some(cell) => cell,
                    None => break,
                };
                match run_cell(&table, &spec, &cell) {
                    Ok(result) => results.lock().unwrap().push(result),
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let results = results.into_inner().unwrap();

    // Aggregate over seeds: one row per (scenario label, method).
    let mut rows = Vec::new();
    for scenario in &spec.scenarios {
        for &factor in &spec.pollution_factors {
            let label = format!("{}/x{}", scenario.name, factor);
            let of_label: Vec<&CellResult> =
                results.iter().filter(|r| r.label == label).collect();
            for (method, pick) in [
                ("dplan", (|r: &CellResult| r.dplan) as fn(&CellResult) -> (f64, f64)),
                ("iforest", |r: &CellResult| r.iforest),
            ] {
                let per_run: Vec<(f64, f64)> = of_label.iter().map(|r| pick(r)).collect();
                let ((pr_mean, pr_std), (roc_mean, roc_std)) =
                    eval::aggregate_runs(&per_run)?;
                rows.push(ResultRow {
                    scenario: label.clone(),
                    method: method.into(),
                    auc_pr_mean: pr_mean,
                    auc_pr_std: pr_std,
                    auc_roc_mean: roc_mean,
                    auc_roc_std: roc_std,
                });
            }
        }
    }

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("results.csv"), eval::results_csv(&rows))?;
    print!("{}", eval::results_table(&rows));
    Ok(())
}

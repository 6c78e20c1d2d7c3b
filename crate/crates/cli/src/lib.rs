//! Command-line pipeline: train, convert, prune, shrink, infer and report.

pub mod config;
pub mod data;
pub mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mofhei::arch::Arch;
use mofhei::hesim::PackingConfig;
use mofhei::nncore::{
    evaluate, load_model, predicted_classes, save_model, train, Loss, Metric, TrainConfig,
    TrainOptions,
};
use mofhei::pi::{analyze_cost, infer};
use mofhei::prune::{iterative_block_prune, shrink, PruneState, PruningSchedule};
use mofhei::transform::{make_he_friendly, ActivationMode};
use mofhei::{Error, Model64, Tensor64};
use serde_json::json;

use config::{parse_block_shape, Config};
use data::{DatasetSpec, Task};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_ARGS: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_DEPTH: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

impl CliError {
    pub fn args(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ARGS,
            message: msg.into(),
        }
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_PARSE,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::EmptyDataset | Error::ShapeMismatch { .. } => EXIT_ARGS,
            Error::Parse { .. } | Error::Csv { .. } | Error::Version { .. } => EXIT_PARSE,
            Error::DepthBudget { .. } | Error::DepthExhausted { .. } => EXIT_DEPTH,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mofhei",
    version,
    about = "HE-friendly conversion, block pruning and simulated private inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file with [train], [hef], [prune] and [crypto] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice this invocation makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// mnist, egss or synthetic:<kind>; defaults to the dataset recorded in the model.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// Size of generated synthetic datasets.
    #[arg(long, global = true, default_value_t = 1000)]
    pub samples: usize,
    /// Caps every split at this many samples.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a reference architecture from scratch.
    Train(TrainArgs),
    /// Replace pooling and activations with HE-friendly layers.
    MakeHefriendly(HefArgs),
    /// Iterative block pruning; writes the model and its frozen masks.
    Prune(PruneArgs),
    /// Remove dead units and filters, then fine-tune.
    Shrink(ShrinkArgs),
    /// Plaintext inference on the test split.
    InferPlain(InferArgs),
    /// Simulated encrypted inference on the test split.
    InferHe(InferHeArgs),
    /// Static HE operation counts, depth and memory.
    AnalyzeCost(CostArgs),
    /// Side-by-side comparison of an HE-friendly model and its pruned versions.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "lenet")]
    pub arch: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Start from the HE-friendly topology instead of the original.
    #[arg(long)]
    pub he_friendly: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Poly,
    Square,
}

#[derive(Debug, Args)]
pub struct HefArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub poly_degree: Option<usize>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// RxC, or `columns` for whole weight columns.
    #[arg(long)]
    pub block_shape: Option<String>,
    /// Number of pruning events.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Training steps between pruning events.
    #[arg(long)]
    pub delta_t: Option<usize>,
    /// Pruning epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prune state; defaults to `<model>.state.json`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-tuning epochs after shrinking.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prediction CSV; a JSON summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferHeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Model whose unit counts and totals the reduction columns compare against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// JSON cost report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// The unpruned HE-friendly model.
    #[arg(long)]
    pub hef: PathBuf,
    /// Pruned (and usually shrunk) models.
    #[arg(long, num_args = 1..)]
    pub pruned: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    fs::write(
        path,
        serde_json::to_string_pretty(value).expect("json serializes") + "\n",
    )?;
    Ok(())
}

pub(crate) fn read_model(path: &Path) -> Result<Model64, CliError> {
    load_model(path).map_err(|e| match e {
        Error::Io(io) => CliError::args(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

pub(crate) fn task_of(model: &Model64) -> Task {
    model
        .metadata
        .get("task")
        .and_then(|t| Task::parse(t))
        .unwrap_or(Task::Classification)
}

fn loss_for(task: Task) -> Loss {
    match task {
        Task::Classification => Loss::CrossEntropy,
        Task::Reconstruction => Loss::Mse,
    }
}

pub(crate) fn metric_for(task: Task) -> Metric {
    loss_for(task).metric()
}

/// Packing parameters from the config, defaulting to the model's architecture.
pub(crate) fn packing_for(cfg: &Config, model: &Model64) -> Result<PackingConfig, CliError> {
    let defaults = model
        .metadata
        .get("arch")
        .and_then(|a| Arch::parse(a))
        .map_or((32768, 860), |a| {
            let (pmd, cm) = a.crypto_params();
            (pmd, cm as u32)
        });
    cfg.crypto.packing(defaults)
}

struct Ctx {
    cli_seed: u64,
    cfg: Config,
    dataset: Option<DatasetSpec>,
    samples: usize,
    limit: Option<usize>,
}

impl Ctx {
    fn dataset_for(&self, model: Option<&Model64>) -> Result<DatasetSpec, CliError> {
        if let Some(d) = self.dataset {
            return Ok(d);
        }
        model
            .and_then(|m| m.metadata.get("dataset"))
            .ok_or_else(|| CliError::args("--dataset is required"))?
            .parse()
    }

    fn splits(
        &self,
        spec: DatasetSpec,
        task: Task,
    ) -> Result<mofhei::datasets::Splits<f64>, CliError> {
        data::load(spec, task, self.cli_seed, self.samples, self.limit)
    }

    fn train_config(&self, task: Task) -> TrainConfig {
        TrainConfig {
            seed: self.cli_seed,
            loss: loss_for(task),
            ..self.cfg.train.clone()
        }
    }

    fn stamp(&self, model: &mut Model64, stage: &str, spec: DatasetSpec) {
        let m = &mut model.metadata;
        m.insert("stage".into(), stage.into());
        m.insert("seed".into(), self.cli_seed.to_string());
        m.insert(format!("seed.{stage}"), self.cli_seed.to_string());
        m.insert("dataset".into(), spec.to_string());
    }
}

/// Runs one subcommand. Human-readable results go to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        cli_seed: cli.seed,
        cfg: Config::load(cli.config.as_deref())?,
        dataset: cli.dataset.as_deref().map(str::parse).transpose()?,
        samples: cli.samples,
        limit: cli.limit,
    };
    match cli.command {
        Command::Train(a) => cmd_train(&ctx, a),
        Command::MakeHefriendly(a) => cmd_hef(&ctx, a),
        Command::Prune(a) => cmd_prune(&ctx, a),
        Command::Shrink(a) => cmd_shrink(&ctx, a),
        Command::InferPlain(a) => cmd_infer_plain(&ctx, a),
        Command::InferHe(a) => cmd_infer_he(&ctx, a),
        Command::AnalyzeCost(a) => cmd_cost(&ctx, a),
        Command::Report(a) => report::cmd_report(
            ctx.cli_seed,
            &ctx.cfg,
            ctx.dataset,
            ctx.samples,
            ctx.limit,
            a,
        ),
    }
}

fn summary(
    ctx: &Ctx,
    stage: &str,
    out: &Path,
    task: Task,
    metric: f64,
    extra: serde_json::Value,
) -> serde_json::Value {
    let mut v = json!({
        "stage": stage,
        "seed": ctx.cli_seed,
        "model": out.display().to_string(),
        "metric": metric_for(task),
        "test_metric": metric,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let arch = Arch::parse(&a.arch)
        .ok_or_else(|| CliError::args(format!("unknown architecture {:?}", a.arch)))?;
    let task = match arch {
        Arch::Ae1 | Arch::Ae2 | Arch::Ae3 => Task::Reconstruction,
        _ => Task::Classification,
    };
    let spec = ctx.dataset_for(None)?;
    let mut model: Model64 = if a.he_friendly {
        arch.he_friendly(ctx.cli_seed)?
    } else {
        arch.original(ctx.cli_seed)?
    };
    let mut tc = ctx.train_config(task);
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let (history, metric) = if tc.epochs == 0 {
        (None, None)
    } else {
        let s = ctx.splits(spec, task)?;
        let h = train(&mut model, &s.train, &s.val, &tc, TrainOptions::default())?;
        (Some(h), Some(evaluate(&model, &s.test, metric_for(task))?))
    };
    model.metadata.insert("arch".into(), arch.name().into());
    model.metadata.insert("task".into(), task.name().into());
    let stage = if a.he_friendly {
        "he_friendly"
    } else {
        "original"
    };
    ctx.stamp(&mut model, stage, spec);
    save_model(&model, &a.out)?;
    let v = summary(
        ctx,
        stage,
        &a.out,
        task,
        metric.unwrap_or(f64::NAN),
        json!({ "epochs": history.as_ref().map_or(0, |h| h.epochs.len()) }),
    );
    write_json(&sidecar(&a.out, ".train.json"), &v)?;
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn cmd_hef(ctx: &Ctx, a: HefArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let task = task_of(&model);
    let spec = ctx.dataset_for(Some(&model))?;
    let mut hc = ctx.cfg.hef.clone();
    hc.seed = ctx.cli_seed;
    hc.loss = loss_for(task);
    if let Some(d) = a.poly_degree {
        hc.poly_degree = d;
    }
    if let Some(act) = a.activation {
        hc.activation_mode = match act {
            ActivationArg::Poly => ActivationMode::Poly,
            ActivationArg::Square => ActivationMode::Square,
        };
    }
    let s = ctx.splits(spec, task)?;
    let (mut hef, log) = make_he_friendly(&model, &s.train, &s.val, &hc)?;
    let metric = evaluate(&hef, &s.test, metric_for(task))?;
    ctx.stamp(&mut hef, "he_friendly", spec);
    save_model(&hef, &a.out)?;
    let v = summary(
        ctx,
        "he_friendly",
        &a.out,
        task,
        metric,
        json!({ "conversions": log.entries }),
    );
    write_json(&sidecar(&a.out, ".conversion.json"), &v)?;
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn cmd_prune(ctx: &Ctx, a: PruneArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let task = task_of(&model);
    let spec = ctx.dataset_for(Some(&model))?;
    let p = &ctx.cfg.prune;
    let shapes = parse_block_shape(a.block_shape.as_deref().unwrap_or(&p.block_shape))?;
    let s = ctx.splits(spec, task)?;
    let tc = TrainConfig {
        learning_rate: p.learning_rate,
        ..ctx.train_config(task)
    };
    let steps_per_epoch = s.train.len().div_ceil(tc.batch_size.max(1));
    let epochs = a.epochs.unwrap_or(p.epochs);
    let mut schedule =
        PruningSchedule::new(a.sparsity.unwrap_or(p.sparsity), epochs, steps_per_epoch);
    schedule.initial = p.initial_sparsity;
    schedule.start = p.start_step;
    if let Some(n) = a.steps.or(p.steps) {
        schedule.steps = n;
    }
    if let Some(dt) = a.delta_t.or(p.delta_t) {
        schedule.frequency = dt;
    }
    let (mut pruned, state, history) =
        iterative_block_prune(&model, &schedule, &s.train, &s.val, &tc, &shapes)?;
    let metric = evaluate(&pruned, &s.test, metric_for(task))?;
    ctx.stamp(&mut pruned, "pruned", spec);
    pruned
        .metadata
        .insert("sparsity".into(), schedule.target.to_string());
    save_model(&pruned, &a.out)?;
    let mut state_json: serde_json::Value =
        serde_json::from_str(&state.to_json()).expect("state json");
    state_json["seed"] = json!(ctx.cli_seed);
    write_json(&sidecar(&a.out, ".state.json"), &state_json)?;
    let v = summary(
        ctx,
        "pruned",
        &a.out,
        task,
        metric,
        json!({ "sparsity": schedule.target, "freeze_step": state.freeze_step, "epochs": history.epochs.len() }),
    );
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn cmd_shrink(ctx: &Ctx, a: ShrinkArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let task = task_of(&model);
    let spec = ctx.dataset_for(Some(&model))?;
    let state_path = a.state.unwrap_or_else(|| sidecar(&a.model, ".state.json"));
    let text = fs::read_to_string(&state_path)
        .map_err(|e| CliError::args(format!("{}: {e}", state_path.display())))?;
    let state = PruneState::from_json(&text)?;
    let p = &ctx.cfg.prune;
    let tc = TrainConfig {
        learning_rate: p.finetune_lr,
        epochs: a.epochs.unwrap_or(p.finetune_epochs),
        ..ctx.train_config(task)
    };
    let s = ctx.splits(spec, task)?;
    let (mut shrunk, _) = shrink(&model, &state, &s.train, &s.val, &tc)?;
    let metric = evaluate(&shrunk, &s.test, metric_for(task))?;
    if let Some(sp) = model.metadata.get("sparsity") {
        shrunk.metadata.insert("sparsity".into(), sp.clone());
    }
    ctx.stamp(&mut shrunk, "shrunk", spec);
    save_model(&shrunk, &a.out)?;
    let units: Vec<_> = shrunk
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            l.weight_matrix_dims()
                .map(|(_, c)| json!({ "layer": i, "kind": l.kind.name(), "units": c }))
        })
        .collect();
    let v = summary(
        ctx,
        "shrunk",
        &a.out,
        task,
        metric,
        json!({ "units": units }),
    );
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn predictions_csv(seed: u64, out: &Tensor64, task: Task) -> String {
    let width = out.row_len();
    let mut s = format!("# seed={seed}\n");
    s.push_str("index");
    if task == Task::Classification {
        s.push_str(",predicted");
    }
    for j in 0..width {
        s.push_str(&format!(",y{j}"));
    }
    s.push('\n');
    let classes = predicted_classes(out);
    for i in 0..out.rows() {
        s.push_str(&i.to_string());
        if task == Task::Classification {
            s.push_str(&format!(",{}", classes[i]));
        }
        for v in out.row(i) {
            s.push_str(&format!(",{v:e}"));
        }
        s.push('\n');
    }
    s
}

fn score(task: Task, out: &Tensor64, y: &Tensor64) -> f64 {
    match task {
        Task::Classification => {
            let (p, t) = (predicted_classes(out), predicted_classes(y));
            p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / p.len().max(1) as f64
        }
        Task::Reconstruction => {
            out.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / out.len().max(1) as f64
        }
    }
}

fn cmd_infer_plain(ctx: &Ctx, a: InferArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let task = task_of(&model);
    let spec = ctx.dataset_for(Some(&model))?;
    let s = ctx.splits(spec, task)?;
    let out = model.forward(&s.test.x)?;
    fs::write(&a.out, predictions_csv(ctx.cli_seed, &out, task))?;
    let v = summary(
        ctx,
        "infer_plain",
        &a.model,
        task,
        score(task, &out, &s.test.y),
        json!({ "samples": out.rows() }),
    );
    write_json(&sidecar(&a.out, ".json"), &v)?;
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    Ok(())
}

fn cmd_infer_he(ctx: &Ctx, a: InferHeArgs) -> Result<(), CliError> {
    if a.workers == 0 {
        return Err(CliError::args("--workers must be at least 1"));
    }
    let model = read_model(&a.model)?;
    let task = task_of(&model);
    let spec = ctx.dataset_for(Some(&model))?;
    let pc = packing_for(&ctx.cfg, &model)?;
    let s = ctx.splits(spec, task)?;
    let (out, cost) = infer(&model, &s.test.x, &pc, a.workers)?;
    fs::write(&a.out, predictions_csv(ctx.cli_seed, &out, task))?;
    let plain = model.forward(&s.test.x)?;
    let v = summary(
        ctx,
        "infer_he",
        &a.model,
        task,
        score(task, &out, &s.test.y),
        json!({
            "samples": out.rows(),
            "workers": a.workers,
            "max_abs_error_vs_plaintext": out.max_abs_diff(&plain),
            "cost": cost,
        }),
    );
    write_json(&sidecar(&a.out, ".json"), &v)?;
    println!("{}", cost.to_csv(None));
    Ok(())
}

fn cmd_cost(ctx: &Ctx, a: CostArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let pc = packing_for(&ctx.cfg, &model)?;
    let report = analyze_cost(&model, &pc)?;
    let baseline = a.baseline.as_deref().map(read_model).transpose()?;
    let base_report = baseline
        .as_ref()
        .map(|b| analyze_cost(b, &pc))
        .transpose()?;
    let csv = report.to_csv(base_report.as_ref());
    if let Some(path) = &a.csv {
        fs::write(path, &csv)?;
    }
    if let Some(path) = &a.out {
        let mut v = serde_json::to_value(&report).expect("report json");
        v["seed"] = json!(ctx.cli_seed);
        if let Some(b) = &base_report {
            v["reduction_vs_baseline"] = json!(report.reduction_vs(b));
        }
        write_json(path, &v)?;
    }
    print!("{csv}");
    println!(
        "depth {}/{} peak_memory_gb {:.1}",
        report.static_depth,
        report.max_depth,
        report.peak_memory_bytes as f64 / 1e9
    );
    if !report.depth_ok {
        return Err(Error::DepthBudget {
            depth: report.static_depth,
            budget: report.max_depth,
        }
        .into());
    }
    Ok(())
}

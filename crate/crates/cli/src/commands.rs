use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use surrogate_core::evaluation::{evaluate_predictions, evaluate_sensitivity, per_output_r2, EvalReport, MetricRow};
use surrogate_core::sampling::{
    blocks_from_rows, build_dgsm_blocks, build_scenarios, scenarios_to_matrix, split_dataset, InputSchema,
};
use surrogate_core::sensitivity::{
    aggregate_columns, dgsm_autodiff, dgsm_closed_form, dgsm_from_evaluations, stack_blocks, SensitivityMatrix,
};
use surrogate_core::training::{random_search_hpo, train, Trial};
use surrogate_core::{
    Dataset, Emulator, MlpConfig, OracleCoefficients, OracleDescriptor, OutputAxis, OutputSchema, Split,
    SplitRatios, Tensor, TrainConfig,
};

use crate::config::{OutputPreset, PipelineConfig};
use crate::dataset_io::{
    read_dataset, read_json, write_dataset, write_json, DatasetFile, DatasetMeta, DgsmMeta, SplitMeta, Strategy,
    FORMAT_VERSION,
};
use crate::error::{CliError, CliResult};
use crate::report::{heatmap_pair_svg, read_matrix_csv, write_matrix_csv, Panel};

#[derive(Parser, Debug)]
#[command(name = "surrogate", version, about = "Sample, simulate, train and audit a neural emulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw input scenarios (Latin hypercube or finite-difference blocks)
    Sample(SampleArgs),
    /// Evaluate the oracle simulator on a dataset's inputs
    Simulate(SimulateArgs),
    /// Reassign train/val/test labels
    Split(SplitArgs),
    /// Fit an emulator to the train split
    Train(TrainArgs),
    /// Write emulator predictions for a dataset
    Predict(PredictArgs),
    /// Prediction fidelity on the test split
    Evaluate(EvaluateArgs),
    /// Emulator and oracle sensitivity matrices on a DGSM dataset
    Sensitivity(SensitivityArgs),
    /// Summary table and heatmaps
    Report(ReportArgs),
    /// Every step above in one working directory
    Run(RunArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArg {
    /// JSON pipeline config; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: ConfigArg,
    #[arg(long, value_enum, default_value = "lhs")]
    pub strategy: Strategy,
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario count for the lhs strategy
    #[arg(long)]
    pub n: Option<usize>,
    /// Base points for the dgsm strategy
    #[arg(long)]
    pub n_base: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub oracle_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub outputs: Option<OutputPreset>,
    /// Replace outputs produced by a different oracle
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; losses and report land next to it
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Hidden widths, e.g. 256,256,256,256
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Random-search trials before the final fit
    #[arg(long)]
    pub hpo: Option<usize>,
    #[arg(long)]
    pub hpo_epochs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A simulated dataset from `sample --strategy dgsm`
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    ClosedForm,
    FiniteDiff,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Output of `evaluate`
    #[arg(long)]
    pub evaluation: PathBuf,
    /// Output directory of `sensitivity`
    #[arg(long)]
    pub sensitivity: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Oracle sensitivities the emulator is scored against
    #[arg(long, value_enum, default_value = "closed-form")]
    pub reference: Reference,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ConfigArg,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_base: Option<usize>,
    #[arg(long, value_enum)]
    pub outputs: Option<OutputPreset>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Sample(a) => sample(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sensitivity(a) => sensitivity(&a),
        Command::Report(a) => report(&a),
        Command::Run(a) => run_all(&a),
    }
}

/// The `--config` file when given, otherwise the config recorded by the step
/// that produced the input artifact, otherwise the defaults.
fn base_config(flag: Option<&Path>, recorded: Option<&PipelineConfig>) -> CliResult<PipelineConfig> {
    match (flag, recorded) {
        (Some(path), _) => PipelineConfig::load(Some(path)),
        (None, Some(cfg)) => Ok(cfg.clone()),
        (None, None) => Ok(PipelineConfig::default()),
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(CliError::io(dir)),
        _ => Ok(()),
    }
}

fn load_model(path: &Path) -> CliResult<Emulator<f64>> {
    if !path.is_file() {
        return Err(CliError::Missing(format!(
            "model checkpoint {} not found; run `surrogate train` first",
            path.display()
        )));
    }
    Ok(Emulator::load_checkpoint(path)?)
}

fn require_outputs<'a>(file: &'a DatasetFile, path: &Path) -> CliResult<(&'a Tensor<f64>, &'a OracleDescriptor)> {
    match (&file.data.outputs, &file.meta.oracle) {
        (Some(y), Some(o)) => Ok((y, o)),
        _ => Err(CliError::Missing(format!(
            "{} has no simulator outputs; run `surrogate simulate` first",
            path.display()
        ))),
    }
}

fn check_model_fits(em: &Emulator<f64>, file: &DatasetFile) -> CliResult<()> {
    let (i, o) = (file.data.inputs.cols(), file.meta.output_dim());
    if em.config.input_dim != i || (o > 0 && em.config.output_dim != o) {
        return Err(CliError::Integrity(format!(
            "model maps {} inputs to {} outputs, dataset has {i} inputs and {o} outputs",
            em.config.input_dim, em.config.output_dim
        )));
    }
    Ok(())
}

pub fn sample(args: &SampleArgs) -> CliResult<()> {
    let mut cfg = base_config(args.common.config.as_deref(), None)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n {
        cfg.sampler.n_lhs = n;
    }
    if let Some(n) = args.n_base {
        cfg.sampler.n_base = n;
    }
    if let Some(d) = args.delta {
        cfg.sampler.delta = d;
    }
    cfg.validate()?;
    let schema = InputSchema::default();
    let (x, splits, split_meta, dgsm_meta) = match args.strategy {
        Strategy::Lhs => {
            let n = cfg.sampler.n_lhs;
            if n < surrogate_core::sampling::MIN_SPLIT_ROWS {
                return Err(CliError::Usage(format!(
                    "lhs sampling needs at least {} scenarios to form splits, got {n}",
                    surrogate_core::sampling::MIN_SPLIT_ROWS
                )));
            }
            let x = scenarios_to_matrix(&build_scenarios(n, &schema, cfg.seed)?)?;
            let splits = split_dataset(n, cfg.split, cfg.split_seed())?;
            let meta = SplitMeta {
                seed: cfg.split_seed(),
                ratios: cfg.split,
            };
            (x, splits, Some(meta), None)
        }
        Strategy::Dgsm => {
            let blocks = build_dgsm_blocks(cfg.sampler.n_base, cfg.sampler.delta, &schema, cfg.dgsm_seed())?;
            let x = stack_blocks(&blocks)?;
            let block_size = 1 + schema.continuous_indices().len();
            // evaluation-only rows; `train` and `split` refuse this strategy
            let splits = vec![Split::Test; x.rows()];
            let meta = DgsmMeta {
                n_base: cfg.sampler.n_base,
                delta: cfg.sampler.delta,
                block_size,
                layout: "base row, then one row per continuous input with only that input moved".into(),
            };
            (x, splits, None, Some(meta))
        }
    };
    let rows = x.rows();
    let file = DatasetFile {
        meta: DatasetMeta {
            format_version: FORMAT_VERSION,
            strategy: args.strategy,
            rows,
            sample_seed: match args.strategy {
                Strategy::Lhs => cfg.seed,
                Strategy::Dgsm => cfg.dgsm_seed(),
            },
            inputs: schema,
            split: split_meta,
            dgsm: dgsm_meta,
            oracle: None,
            config: cfg,
        },
        ids: (0..rows as u64).collect(),
        data: Dataset::new(x, None, splits)?,
    };
    ensure_parent(&args.out)?;
    write_dataset(&args.out, &file)?;
    log::info!("wrote {rows} scenarios to {}", args.out.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut file = read_dataset(&args.data)?;
    let mut cfg = base_config(args.common.config.as_deref(), Some(&file.meta.config))?;
    if let Some(s) = args.oracle_seed {
        cfg.oracle_seed = s;
    }
    if let Some(o) = args.outputs {
        cfg.outputs = o;
    }
    let desc = cfg.oracle();
    if let Some(existing) = &file.meta.oracle {
        if *existing == desc {
            log::info!("{} already holds outputs of this oracle; nothing to do", args.data.display());
            return Ok(());
        }
        if !args.force {
            return Err(CliError::Integrity(format!(
                "{} already holds outputs from a different oracle (seed {}, {} outputs); pass --force to replace them",
                args.data.display(),
                existing.seed,
                existing.outputs.dim()
            )));
        }
    }
    let oracle = OracleCoefficients::<f64>::from_descriptor(&desc, &file.meta.inputs)?;
    let started = Instant::now();
    let y = oracle.eval_batch(&file.data.inputs)?;
    log::info!(
        "simulated {} scenarios × {} outputs in {:.2}s",
        y.rows(),
        y.cols(),
        started.elapsed().as_secs_f64()
    );
    file.data.outputs = Some(y);
    file.meta.oracle = Some(desc);
    file.meta.config = cfg;
    write_dataset(&args.data, &file)
}

pub fn split(args: &SplitArgs) -> CliResult<()> {
    let mut file = read_dataset(&args.data)?;
    if file.meta.strategy == Strategy::Dgsm {
        return Err(CliError::Integrity(
            "DGSM datasets are reserved for sensitivity analysis and cannot be split for training".into(),
        ));
    }
    let mut cfg = base_config(args.common.config.as_deref(), Some(&file.meta.config))?;
    let mut ratios: SplitRatios = cfg.split;
    if let Some(v) = args.train {
        ratios.train = v;
    }
    if let Some(v) = args.val {
        ratios.val = v;
    }
    if let Some(v) = args.test {
        ratios.test = v;
    }
    let seed = args.seed.unwrap_or_else(|| cfg.split_seed());
    let labels = split_dataset(file.data.len(), ratios, seed)?;
    cfg.split = ratios;
    file.data.splits = labels;
    file.meta.split = Some(SplitMeta { seed, ratios });
    file.meta.config = cfg;
    write_dataset(&args.data, &file)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainReportFile {
    pub config: PipelineConfig,
    pub model: MlpConfig,
    pub train: TrainConfig,
    pub param_count: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub best_epoch: usize,
    pub seconds: f64,
    pub hpo_trials: usize,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_leaderboard(path: &Path, trials: &[Trial]) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(path))?);
    let io = CliError::io(path);
    let text = leaderboard_csv(trials);
    out.write_all(text.as_bytes()).map_err(io)?;
    out.flush().map_err(CliError::io(path))
}

fn leaderboard_csv(trials: &[Trial]) -> String {
    let mut s = String::from("rank,val_mse,learning_rate,batch_size,weight_decay,hidden_layers,epochs\n");
    for (i, t) in trials.iter().enumerate() {
        let hidden: Vec<String> = t.model.hidden_layers.iter().map(usize::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            t.val_mse,
            t.train.learning_rate,
            t.train.batch_size,
            t.train.weight_decay,
            hidden.join("x"),
            t.train.epochs
        ));
    }
    s
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let file = read_dataset(&args.data)?;
    if file.meta.strategy == Strategy::Dgsm {
        return Err(CliError::Integrity(format!(
            "{} is a DGSM dataset; it is reserved for sensitivity analysis and never used for training",
            args.data.display()
        )));
    }
    let (y, _) = require_outputs(&file, &args.data)?;
    if file.data.count(Split::Train) == 0 || file.data.count(Split::Val) == 0 {
        return Err(CliError::Missing(format!(
            "{} has no train/val split; run `surrogate split` first",
            args.data.display()
        )));
    }
    let mut cfg = base_config(args.common.config.as_deref(), Some(&file.meta.config))?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = &args.hidden {
        cfg.model.hidden_layers = v.clone();
    }
    if let Some(v) = args.model_seed {
        cfg.model.seed = v;
    }
    if let Some(v) = args.train_seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.hpo {
        cfg.hpo.budget = v;
    }
    if let Some(v) = args.hpo_epochs {
        cfg.hpo.space.epochs = v;
    }
    cfg.validate()?;

    let mut model = cfg.mlp(file.data.inputs.cols(), y.cols());
    let mut train_cfg = cfg.train.clone();
    let started = Instant::now();
    ensure_parent(&args.out)?;
    if cfg.hpo.budget > 0 {
        let search = random_search_hpo(&cfg.hpo.space, cfg.hpo.budget, cfg.hpo.seed, &model, &train_cfg, &file.data)?;
        let path = sibling(&args.out, "leaderboard.csv");
        write_leaderboard(&path, &search.leaderboard)?;
        log::info!("search best val mse {:.4e}; leaderboard in {}", search.best.val_mse, path.display());
        model = search.best.model;
        train_cfg = TrainConfig {
            epochs: cfg.train.epochs,
            ..search.best.train
        };
    }
    let outcome = train(&model, &train_cfg, &file.data)?;
    outcome.emulator.save_checkpoint(&args.out)?;

    let losses = sibling(&args.out, "losses.csv");
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for (e, (t, v)) in outcome.report.train_loss.iter().zip(&outcome.report.val_loss).enumerate() {
        text.push_str(&format!("{},{t},{v}\n", e + 1));
    }
    std::fs::write(&losses, text).map_err(CliError::io(&losses))?;

    let r = &outcome.report;
    let report = TrainReportFile {
        param_count: model.param_count(),
        model,
        train: train_cfg,
        final_train_loss: r.train_loss.last().copied().unwrap_or(f64::NAN),
        final_val_loss: r.final_val_loss(),
        best_epoch: r.best_epoch + 1,
        seconds: started.elapsed().as_secs_f64(),
        hpo_trials: cfg.hpo.budget,
        config: cfg,
    };
    write_json(&sibling(&args.out, "report.json"), &report)?;
    log::info!(
        "trained {} parameters in {:.1}s; final val mse {:.4e}",
        report.param_count,
        report.seconds,
        report.final_val_loss
    );
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let em = load_model(&args.model)?;
    let file = read_dataset(&args.data)?;
    check_model_fits(&em, &file)?;
    let y = em.predict(&file.data.inputs)?;
    ensure_parent(&args.out)?;
    let io = |e: csv::Error| CliError::io(&args.out)(e.into());
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(&args.out).map_err(CliError::io(&args.out))?,
    ));
    let mut header = vec!["scenario_id".to_string()];
    header.extend((0..y.cols()).map(|j| format!("y_{j}")));
    w.write_record(&header).map_err(io)?;
    for (r, id) in file.ids.iter().enumerate() {
        w.write_field(id.to_string()).map_err(io)?;
        for v in y.row(r) {
            w.write_field(v.to_string()).map_err(io)?;
        }
        w.write_record(None::<&[u8]>).map_err(io)?;
    }
    w.flush().map_err(CliError::io(&args.out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Throughput {
    pub scenarios: usize,
    pub seconds: f64,
    pub scenarios_per_second: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub config: PipelineConfig,
    pub outputs: OutputSchema,
    pub report: EvalReport,
    pub per_output_r2: Vec<Option<f64>>,
    pub throughput: Throughput,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let em = load_model(&args.model)?;
    let file = read_dataset(&args.data)?;
    let (_, oracle) = require_outputs(&file, &args.data)?;
    check_model_fits(&em, &file)?;
    if file.data.count(Split::Test) < 2 {
        return Err(CliError::Missing(format!(
            "{} needs at least two test scenarios; run `surrogate split` first",
            args.data.display()
        )));
    }
    let (x, y) = file.data.subset(Split::Test)?;
    let started = Instant::now();
    let pred = em.predict(&x)?;
    let seconds = started.elapsed().as_secs_f64();
    let report = evaluate_predictions(&y, &pred, &oracle.outputs)?;
    let per = per_output_r2(&y, &pred)?;
    print!("{}", report.render_table());
    let out = EvaluationFile {
        config: file.meta.config.clone(),
        outputs: oracle.outputs.clone(),
        report,
        per_output_r2: per.values,
        throughput: Throughput {
            scenarios: x.rows(),
            seconds,
            scenarios_per_second: x.rows() as f64 / seconds.max(1e-9),
        },
    };
    ensure_parent(&args.out)?;
    write_json(&args.out, &out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub file: String,
    pub provenance: surrogate_core::Provenance,
    pub sample_count: usize,
    pub defined_outputs: usize,
    pub sigma_x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agreement {
    pub emulator_vs_closed_form: MetricRow,
    pub emulator_vs_finite_diff: MetricRow,
    pub finite_diff_vs_closed_form: MetricRow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityFile {
    pub config: PipelineConfig,
    pub outputs: OutputSchema,
    pub inputs: Vec<String>,
    pub blocks: usize,
    pub delta: f64,
    pub emulator: MatrixSummary,
    pub finite_diff: MatrixSummary,
    pub closed_form: MatrixSummary,
    pub agreement: Agreement,
}

fn write_sensitivity(
    dir: &Path,
    name: &str,
    m: &SensitivityMatrix<f64>,
    keys: &[&str],
    outputs: &OutputSchema,
) -> CliResult<MatrixSummary> {
    let labels: Vec<String> = (0..outputs.dim()).map(|j| outputs.output_label(j)).collect();
    let file = format!("{name}.csv");
    write_matrix_csv(&dir.join(&file), keys, &labels, &m.normalized, &m.defined)?;
    Ok(MatrixSummary {
        file,
        provenance: m.provenance,
        sample_count: m.sample_count,
        defined_outputs: m.defined_count(),
        sigma_x: m.sigma_x.clone(),
    })
}

pub fn sensitivity(args: &SensitivityArgs) -> CliResult<()> {
    let em = load_model(&args.model)?;
    let file = read_dataset(&args.data)?;
    let Some(dgsm) = &file.meta.dgsm else {
        return Err(CliError::Integrity(format!(
            "{} was not sampled with --strategy dgsm",
            args.data.display()
        )));
    };
    let (y, oracle_desc) = require_outputs(&file, &args.data)?;
    check_model_fits(&em, &file)?;
    let schema = &file.meta.inputs;
    let outputs = &oracle_desc.outputs;
    let blocks = blocks_from_rows(&file.data.inputs, schema, dgsm.delta)?;
    let base_rows: Vec<usize> = (0..blocks.len()).map(|b| b * dgsm.block_size).collect();
    let base = file.data.inputs.select_rows(&base_rows);

    let started = Instant::now();
    let emulator = dgsm_autodiff(&em, &base, schema)?;
    log::info!("emulator gradients at {} points in {:.2}s", base.rows(), started.elapsed().as_secs_f64());
    let fd = dgsm_from_evaluations(&blocks, schema, y)?;
    let oracle = OracleCoefficients::<f64>::from_descriptor(oracle_desc, schema)?;
    let closed = dgsm_closed_form(&oracle, &base, schema)?;

    std::fs::create_dir_all(&args.out_dir).map_err(CliError::io(&args.out_dir))?;
    let keys = schema.continuous_keys();
    let out = SensitivityFile {
        config: file.meta.config.clone(),
        outputs: outputs.clone(),
        inputs: keys.iter().map(|k| k.to_string()).collect(),
        blocks: blocks.len(),
        delta: dgsm.delta,
        emulator: write_sensitivity(&args.out_dir, "emulator", &emulator, &keys, outputs)?,
        finite_diff: write_sensitivity(&args.out_dir, "oracle_finite_diff", &fd, &keys, outputs)?,
        closed_form: write_sensitivity(&args.out_dir, "oracle_closed_form", &closed, &keys, outputs)?,
        agreement: Agreement {
            emulator_vs_closed_form: evaluate_sensitivity(&emulator, &closed, outputs)?,
            emulator_vs_finite_diff: evaluate_sensitivity(&emulator, &fd, outputs)?,
            finite_diff_vs_closed_form: evaluate_sensitivity(&fd, &closed, outputs)?,
        },
    };
    write_json(&args.out_dir.join("sensitivity.json"), &out)?;
    let a = &out.agreement.emulator_vs_closed_form;
    log::info!("sensitivity agreement vs closed form: overall {:?}", a.overall);
    Ok(())
}

/// Everything in `metrics.json`: deterministic, no timings, no paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub predictions: MetricRow,
    pub sensitivity: MetricRow,
    pub sensitivity_reference: Reference,
    pub sensitivity_vs_finite_diff: MetricRow,
    pub finite_diff_vs_closed_form: MetricRow,
    pub test_scenarios: usize,
    pub evaluated_outputs: usize,
    pub excluded_outputs: usize,
    pub mean_r2: Option<f64>,
    pub sensitivity_defined_outputs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: PipelineConfig,
    pub table: EvalReport,
    pub metrics: Metrics,
    pub throughput: Throughput,
    pub heatmaps: Vec<String>,
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let eval: EvaluationFile = read_json(&args.evaluation, "run `surrogate evaluate` first")?;
    let sens: SensitivityFile = read_json(
        &args.sensitivity.join("sensitivity.json"),
        "run `surrogate sensitivity` first",
    )?;
    if sens.outputs != eval.outputs {
        return Err(CliError::Integrity(
            "evaluation and sensitivity were produced for different output schemas".into(),
        ));
    }
    let (reference_summary, headline) = match args.reference {
        Reference::ClosedForm => (&sens.closed_form, &sens.agreement.emulator_vs_closed_form),
        Reference::FiniteDiff => (&sens.finite_diff, &sens.agreement.emulator_vs_finite_diff),
    };
    let mut table = eval.report.clone();
    table.sensitivity = Some(headline.clone());

    std::fs::create_dir_all(&args.out_dir).map_err(CliError::io(&args.out_dir))?;
    let (_, ref_values, ref_defined) = read_matrix_csv(&args.sensitivity.join(&reference_summary.file))?;
    let (_, em_values, em_defined) = read_matrix_csv(&args.sensitivity.join(&sens.emulator.file))?;
    let rows: Vec<&str> = sens.inputs.iter().map(String::as_str).collect();
    let ref_title = match args.reference {
        Reference::ClosedForm => "Oracle (closed form)",
        Reference::FiniteDiff => "Oracle (finite differences)",
    };
    let mut heatmaps = Vec::new();
    for axis in OutputAxis::ALL {
        let (rv, rd) = aggregate_columns(&ref_values, &ref_defined, &sens.outputs, axis)?;
        let (ev, ed) = aggregate_columns(&em_values, &em_defined, &sens.outputs, axis)?;
        let cols = sens.outputs.axis_labels(axis);
        let name = axis.as_str();
        write_matrix_csv(&args.out_dir.join(format!("sensitivity_{name}_oracle.csv")), &rows, &cols, &rv, &rd)?;
        write_matrix_csv(&args.out_dir.join(format!("sensitivity_{name}_emulator.csv")), &rows, &cols, &ev, &ed)?;
        let svg = heatmap_pair_svg(
            &format!("S^sigma averaged by {name}"),
            &rows,
            &cols,
            &Panel {
                title: ref_title,
                values: &rv,
                defined: &rd,
            },
            &Panel {
                title: "Emulator (autodiff)",
                values: &ev,
                defined: &ed,
            },
        );
        let file = format!("heatmap_{name}.svg");
        let path = args.out_dir.join(&file);
        std::fs::write(&path, svg).map_err(CliError::io(&path))?;
        heatmaps.push(file);
    }

    let metrics = Metrics {
        predictions: table.predictions.clone(),
        sensitivity: headline.clone(),
        sensitivity_reference: args.reference,
        sensitivity_vs_finite_diff: sens.agreement.emulator_vs_finite_diff.clone(),
        finite_diff_vs_closed_form: sens.agreement.finite_diff_vs_closed_form.clone(),
        test_scenarios: table.test_scenarios,
        evaluated_outputs: table.evaluated_outputs,
        excluded_outputs: table.excluded_outputs,
        mean_r2: table.mean_r2,
        sensitivity_defined_outputs: sens.emulator.defined_outputs.min(reference_summary.defined_outputs),
    };
    write_json(&args.out_dir.join("metrics.json"), &metrics)?;

    let mut text = table.render_table();
    text.push_str(&format!(
        "\nPredictions: median R² over {} test scenarios; {} outputs evaluated, {} excluded as constant.\n",
        table.test_scenarios, table.evaluated_outputs, table.excluded_outputs
    ));
    text.push_str(&format!(
        "Sensitivity: S^sigma agreement of emulator vs {} over {} DGSM blocks.\n",
        ref_title.to_lowercase(),
        sens.blocks
    ));
    text.push_str(&format!(
        "Emulator throughput: {:.0} scenarios/s.\n",
        eval.throughput.scenarios_per_second
    ));
    let txt = args.out_dir.join("report.txt");
    std::fs::write(&txt, &text).map_err(CliError::io(&txt))?;
    print!("{text}");

    write_json(
        &args.out_dir.join("report.json"),
        &ReportFile {
            config: eval.config,
            table,
            metrics,
            throughput: eval.throughput,
            heatmaps,
        },
    )
}

pub fn run_all(args: &RunArgs) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(args.common.config.as_deref())?;
    if let Some(v) = &args.workdir {
        cfg.workdir = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.n {
        cfg.sampler.n_lhs = v;
    }
    if let Some(v) = args.n_base {
        cfg.sampler.n_base = v;
    }
    if let Some(v) = args.outputs {
        cfg.outputs = v;
    }
    cfg.validate()?;
    let dir = cfg.workdir.clone();
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let config_path = dir.join("config.json");
    write_json(&config_path, &cfg)?;
    let common = ConfigArg {
        config: Some(config_path),
    };
    let data = dir.join("data.csv");
    let dgsm = dir.join("dgsm.csv");
    let model = dir.join("model.json");
    let eval = dir.join("evaluation.json");
    let sens = dir.join("sensitivity");

    for (strategy, out) in [(Strategy::Lhs, &data), (Strategy::Dgsm, &dgsm)] {
        sample(&SampleArgs {
            common: common.clone(),
            strategy,
            out: out.clone(),
            n: None,
            n_base: None,
            delta: None,
            seed: None,
        })?;
        simulate(&SimulateArgs {
            common: common.clone(),
            data: out.clone(),
            oracle_seed: None,
            outputs: None,
            force: false,
        })?;
    }
    train_cmd(&TrainArgs {
        common,
        data: data.clone(),
        out: model.clone(),
        epochs: None,
        learning_rate: None,
        batch_size: None,
        weight_decay: None,
        hidden: None,
        model_seed: None,
        train_seed: None,
        hpo: None,
        hpo_epochs: None,
    })?;
    evaluate(&EvaluateArgs {
        model: model.clone(),
        data,
        out: eval.clone(),
    })?;
    sensitivity(&SensitivityArgs {
        model,
        data: dgsm,
        out_dir: sens.clone(),
    })?;
    report(&ReportArgs {
        evaluation: eval,
        sensitivity: sens,
        out_dir: dir.join("report"),
        reference: Reference::ClosedForm,
    })
}

//! `camsel`: command-line front end for camera selection.

mod manifest;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use camsel_core::eval::{self, ImputationCurve};
use camsel_core::heatmap::{self, FrameFeature, HeatmapConfig, Pooling};
use camsel_core::impute::{self, imputation_error, Method, SurvivalConfig};
use camsel_core::model::{load_dataset, save_dataset};
use camsel_core::pipeline::{self, PipelineConfig, SelectionTimeline, TimelineFrame};
use camsel_core::seed::derive_seed;
use camsel_core::synth::{self, SynthConfig};
use camsel_core::{Dataset, DatasetConfig, Exec, Forest, ForestConfig, MultiViewSample};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use manifest::{FileDigest, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "camsel", version, about = "Camera selection with imputed auxiliary views")]
struct Cli {
    /// Root seed for every random stream. Random (and recorded) when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "CAMSEL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn detection boxes into pooled heatmap features.
    Featurize(FeaturizeArgs),
    /// Generate a synthetic multi-view dataset and its ground truth.
    GenSynth(GenSynthArgs),
    /// Fill missing views.
    Impute(ImputeArgs),
    /// Train a forest on complete data.
    Train(TrainArgs),
    /// Per-frame predictions for every sequence of a dataset.
    Predict(PredictArgs),
    /// Impute, verify and train on main plus auxiliary data.
    Pipeline(PipelineArgs),
    /// Selection timeline of one sequence.
    Select(SelectArgs),
    /// Cross-validate the training pipeline.
    Eval(EvalArgs),
    /// Enforce a minimum shot length on a timeline.
    Smooth(SmoothArgs),
}

#[derive(Args, Debug)]
struct DataSchema {
    /// Dataset sidecar (`{"K", "F", "camera_names"}`). Inferred from the first record when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolingArg {
    Average,
    Max,
    Flatten,
    AverageMax,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Average => Pooling::Average,
            PoolingArg::Max => Pooling::Max,
            PoolingArg::Flatten => Pooling::Flatten,
            PoolingArg::AverageMax => Pooling::AverageMax,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Rsf,
    Nn,
    Mean,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rsf => Method::Rsf,
            MethodArg::Nn => Method::Nn,
            MethodArg::Mean => Method::Mean,
        }
    }
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Heatmap config JSON. Defaults to a 16x9 grid over 1280x720.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "average-max")]
    pooling: PoolingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_visible: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
    /// Where to write the dataset sidecar.
    #[arg(long)]
    out_schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[arg(long, value_enum, default_value = "rsf")]
    method: MethodArg,
    /// Complete reference data. When omitted, the complete rows of `--incomplete` are used.
    #[arg(long)]
    complete: Option<PathBuf>,
    #[arg(long)]
    incomplete: PathBuf,
    /// Survival forest config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth aligned with `--incomplete`, for the diagnostics report.
    #[arg(long, requires = "report")]
    truth: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Forest config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    main: PathBuf,
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Frames of a single sequence.
    #[arg(long)]
    frames: PathBuf,
    /// Minimum shot length in frames; 1 disables smoothing.
    #[arg(long, default_value_t = 1)]
    smooth: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Complete rows are cross-validated; incomplete rows join every training set as auxiliary data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Ground truth aligned with `--data`; adds the imputation error curve of its incomplete rows.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
    #[command(flatten)]
    schema: DataSchema,
}

#[derive(Args, Debug)]
struct SmoothArgs {
    /// Timeline JSON as written by `select`.
    #[arg(long)]
    timeline: PathBuf,
    #[arg(long)]
    min_duration: usize,
    #[arg(long)]
    out: PathBuf,
}

struct Run {
    command: &'static str,
    seed: u64,
    threads: Option<usize>,
    exec: Exec,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
}

impl Run {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn config<T: Serialize>(&mut self, c: &T) -> Result<()> {
        self.config = serde_json::to_value(c)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let digests = |ps: &[PathBuf]| ps.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>();
        RunManifest {
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: self.config,
            seed: self.seed,
            threads: self.threads,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
        .write_all()
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn infer_schema(path: &Path) -> Result<DatasetConfig> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: MultiViewSample =
            serde_json::from_str(&line).with_context(|| format!("parsing first record of {}", path.display()))?;
        let f = s
            .blocks
            .iter()
            .find_map(|b| b.values().map(<[f64]>::len))
            .context("first record has no views")?;
        return Ok(DatasetConfig::new(s.blocks.len(), f));
    }
    bail!("{}: no records", path.display())
}

fn load(run: &mut Run, path: &Path, schema: &DataSchema) -> Result<Dataset> {
    let config = match &schema.schema {
        Some(p) => {
            run.input(p);
            DatasetConfig::load(p).with_context(|| format!("loading schema {}", p.display()))?
        }
        None => infer_schema(path)?,
    };
    run.input(path);
    Ok(load_dataset(path, &config)?)
}

fn load_forest(run: &mut Run, path: &Path) -> Result<Forest> {
    run.input(path);
    Forest::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn forest_config(cfg: ForestConfig, run: &Run) -> ForestConfig {
    ForestConfig {
        seed: derive_seed(run.seed, "forest", 0),
        exec: run.exec,
        ..cfg
    }
}

fn featurize(run: &mut Run, a: &FeaturizeArgs) -> Result<()> {
    run.input(&a.detections);
    let records = heatmap::read_detections(&a.detections)?;
    let config = match &a.config {
        Some(p) => {
            run.input(p);
            read_json::<HeatmapConfig>(p)?
        }
        None => {
            let dim = records
                .iter()
                .flat_map(|r| &r.boxes)
                .map(|b| b.appearance.len())
                .next()
                .context("no detection boxes to infer the appearance dimension from")?;
            HeatmapConfig::new(dim)
        }
    };
    let pooling = Pooling::from(a.pooling);
    run.config(&serde_json::json!({ "heatmap": config, "pooling": pooling }))?;
    let features: Vec<FrameFeature> = heatmap::featurize(&records, &config, pooling, run.exec)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for f in &features {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    run.output(&a.out);
    Ok(())
}

fn gen_synth(run: &mut Run, a: &GenSynthArgs) -> Result<()> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => SynthConfig::default(),
    };
    config.seed = run.seed;
    run.config(&config)?;
    let (visible, truth) = synth::generate(&config)?;
    save_dataset(&a.out_visible, &visible)?;
    save_dataset(&a.out_truth, &truth)?;
    run.output(&a.out_visible);
    run.output(&a.out_truth);
    if let Some(p) = &a.out_schema {
        write_json(p, visible.config())?;
        run.output(p);
    }
    Ok(())
}

#[derive(Serialize)]
struct DimError {
    dim: usize,
    scored: usize,
    mean_error: f64,
    max_error: f64,
}

#[derive(Serialize)]
struct ImputeReport {
    curve: ImputationCurve,
    per_dimension: Vec<DimError>,
}

fn impute(run: &mut Run, a: &ImputeArgs) -> Result<()> {
    let mut config: SurvivalConfig = read_json_or_default(a.config.as_deref())?;
    if let Some(p) = &a.config {
        run.input(p);
    }
    config.seed = derive_seed(run.seed, "rsf", 0);
    config.exec = run.exec;
    let method = Method::from(a.method);
    run.config(&serde_json::json!({ "method": method, "survival": config }))?;

    let input = load(run, &a.incomplete, &a.schema)?;
    let (complete, rows) = match &a.complete {
        Some(p) => (load(run, p, &a.schema)?, (0..input.len()).collect::<Vec<_>>()),
        None => {
            let (c, i): (Vec<usize>, Vec<usize>) = (0..input.len()).partition(|&r| input.samples()[r].is_complete());
            ensure!(!c.is_empty(), "{} has no complete rows to learn from", a.incomplete.display());
            (input.subset(&c), i)
        }
    };
    let incomplete = input.subset(&rows);
    let result = impute::impute(method, &complete, &incomplete, &config)?;

    let mut samples = input.samples().to_vec();
    for (j, &r) in rows.iter().enumerate() {
        samples[r] = result.dataset().samples()[j].clone();
    }
    save_dataset(&a.out, &Dataset::new(input.config().clone(), samples)?)?;
    run.output(&a.out);

    if let (Some(t), Some(report)) = (&a.truth, &a.report) {
        let truth = load(run, t, &a.schema)?;
        ensure!(
            truth.len() == input.len(),
            "truth has {} rows, input {}",
            truth.len(),
            input.len()
        );
        let e = imputation_error(&result, &truth.subset(&rows))?;
        let dims = truth.dims();
        let mut sum = vec![0.0; dims];
        let mut max = vec![0.0f64; dims];
        let mut n = vec![0usize; dims];
        for s in &e.errors {
            sum[s.dim] += s.error;
            max[s.dim] = max[s.dim].max(s.error);
            n[s.dim] += 1;
        }
        let per_dimension = (0..dims)
            .filter(|&d| n[d] > 0)
            .map(|d| DimError {
                dim: d,
                scored: n[d],
                mean_error: sum[d] / n[d] as f64,
                max_error: max[d],
            })
            .collect();
        write_json(
            report,
            &ImputeReport {
                curve: ImputationCurve::new(method, &e),
                per_dimension,
            },
        )?;
        run.output(report);
    }
    Ok(())
}

fn train(run: &mut Run, a: &TrainArgs) -> Result<()> {
    let cfg: ForestConfig = read_json_or_default(a.config.as_deref())?;
    if let Some(p) = &a.config {
        run.input(p);
    }
    let cfg = forest_config(cfg, run);
    run.config(&cfg)?;
    let data = load(run, &a.data, &a.schema)?;
    ensure!(data.is_complete(), "training data has missing views; run impute first");
    Forest::fit(&data, &cfg)?.save(&a.out)?;
    run.output(&a.out);
    Ok(())
}

fn predict(run: &mut Run, a: &PredictArgs) -> Result<()> {
    let model = load_forest(run, &a.model)?;
    let data = load(run, &a.data, &a.schema)?;
    let timelines = pipeline::predict_sequences(&model, &data)?;
    write_json(&a.out, &timelines)?;
    run.output(&a.out);
    Ok(())
}

fn pipeline_config(run: &mut Run, path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = read_json_or_default(path)?;
    if let Some(p) = path {
        run.input(p);
    }
    let cfg = cfg.with_root_seed(run.seed).with_exec(run.exec);
    cfg.validate()?;
    run.config(&cfg)?;
    Ok(cfg)
}

fn run_pipeline(run: &mut Run, a: &PipelineArgs) -> Result<()> {
    let cfg = pipeline_config(run, a.config.as_deref())?;
    let main = load(run, &a.main, &a.schema)?;
    let aux = match &a.aux {
        Some(p) => load(run, p, &a.schema)?,
        None => Dataset::empty(main.config().clone()),
    };
    let (forest, report) = pipeline::train_full(&main, &aux, &cfg)?;
    forest.save(&a.out)?;
    run.output(&a.out);
    if let Some(p) = &a.report {
        write_json(p, &report)?;
        run.output(p);
    }
    Ok(())
}

fn select(run: &mut Run, a: &SelectArgs) -> Result<()> {
    ensure!(a.smooth >= 1, "--smooth must be at least 1");
    run.config(&serde_json::json!({ "smooth": a.smooth }))?;
    let model = load_forest(run, &a.model)?;
    let data = load(run, &a.frames, &a.schema)?;
    let first = &data.samples()[0].sequence_id;
    if let Some(other) = data.samples().iter().find(|s| &s.sequence_id != first) {
        bail!(
            "{} holds more than one sequence ({first}, {}); use predict",
            a.frames.display(),
            other.sequence_id
        );
    }
    let t = pipeline::predict_sequence(&model, data.samples(), data.f())?;
    let t = pipeline::smooth_timeline(&t, a.smooth);
    write_json(&a.out, &t.frames)?;
    run.output(&a.out);
    Ok(())
}

fn evaluate(run: &mut Run, a: &EvalArgs) -> Result<()> {
    let cfg = pipeline_config(run, a.config.as_deref())?;
    let data = load(run, &a.data, &a.schema)?;
    let (main_rows, aux_rows): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&r| data.samples()[r].is_complete());
    ensure!(!main_rows.is_empty(), "{} has no complete rows", a.data.display());
    let main = data.subset(&main_rows);
    let mut aux = data.subset(&aux_rows);
    if let Some(p) = &a.aux {
        aux = aux.concat(&load(run, p, &a.schema)?)?;
    }
    let folds = eval::cv_splits(&main, a.folds, derive_seed(run.seed, "eval.folds", 0))?;
    let mut report = eval::evaluate_pipeline(&cfg, &main, &aux, &folds)?;

    if let Some(t) = &a.truth {
        let truth = load(run, t, &a.schema)?;
        ensure!(
            truth.len() == data.len(),
            "truth has {} rows, data {}",
            truth.len(),
            data.len()
        );
        ensure!(!aux_rows.is_empty(), "{} has no incomplete rows to score", a.data.display());
        let result = impute::impute(cfg.imputation, &main, &data.subset(&aux_rows), &cfg.survival)?;
        let e = imputation_error(&result, &truth.subset(&aux_rows))?;
        report.imputation = Some(ImputationCurve::new(cfg.imputation, &e));
    }
    write_json(&a.out, &report)?;
    run.output(&a.out);
    if let Some(p) = &a.confusion_csv {
        std::fs::write(p, report.confusion_csv())?;
        run.output(p);
    }
    Ok(())
}

fn smooth(run: &mut Run, a: &SmoothArgs) -> Result<()> {
    ensure!(a.min_duration >= 1, "--min-duration must be at least 1");
    run.config(&serde_json::json!({ "min_duration": a.min_duration }))?;
    run.input(&a.timeline);
    let frames: Vec<TimelineFrame> = read_json(&a.timeline)?;
    let t = SelectionTimeline {
        sequence_id: String::new(),
        frames,
    };
    if let Some(f) = t.frames.iter().find(|f| f.camera.index() >= f.proba.len()) {
        bail!("frame {} selects camera {} of {}", f.frame, f.camera.index(), f.proba.len());
    }
    let out = pipeline::smooth_timeline(&t, a.min_duration);
    write_json(&a.out, &out.frames)?;
    run.output(&a.out);
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(1) => Ok(Exec::Serial),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("starting worker pool")?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Serial),
        None => Ok(Exec::default()),
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let exec = configure_threads(cli.threads)?;
    let mut run = Run {
        command: "",
        seed: cli.seed.unwrap_or_else(rand::random),
        threads: cli.threads,
        exec,
        inputs: Vec::new(),
        outputs: Vec::new(),
        config: serde_json::Value::Null,
    };
    match &cli.command {
        Command::Featurize(a) => {
            run.command = "featurize";
            featurize(&mut run, a)?
        }
        Command::GenSynth(a) => {
            run.command = "gen-synth";
            gen_synth(&mut run, a)?
        }
        Command::Impute(a) => {
            run.command = "impute";
            impute(&mut run, a)?
        }
        Command::Train(a) => {
            run.command = "train";
            train(&mut run, a)?
        }
        Command::Predict(a) => {
            run.command = "predict";
            predict(&mut run, a)?
        }
        Command::Pipeline(a) => {
            run.command = "pipeline";
            run_pipeline(&mut run, a)?
        }
        Command::Select(a) => {
            run.command = "select";
            select(&mut run, a)?
        }
        Command::Eval(a) => {
            run.command = "eval";
            evaluate(&mut run, a)?
        }
        Command::Smooth(a) => {
            run.command = "smooth";
            smooth(&mut run, a)?
        }
    }
    run.finish()
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! The `graphfit` command line: normal estimation, training, evaluation,
//! denoising and synthetic data.

use std::error::Error as StdError;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graphfit_core::data::{add_gaussian_noise, add_outliers, load_shape_list, read_normals, read_xyz, save_shape};
use graphfit_core::data::{synth_shape, write_normals, write_xyz, AugmentationSpec, ShapeKind};
use graphfit_core::eval::{
    compare_methods, denoise, export_error_heatmap, pgp, rmse_angles, Augmentation, CompareOptions, DenoiseConfig,
    Method,
};
use graphfit_core::training::{load_checkpoint, save_checkpoint, lr_at_epoch, Trainer, TrainingData};
use graphfit_core::{Error, GraphFitModel, JetOrder, LossWeights, ModelConfig, PointCloud, TrainConfig};

type CliResult<T = ()> = std::result::Result<T, Box<dyn StdError>>;

#[derive(Debug, Parser)]
#[command(name = "graphfit", version, about = "Point-cloud normal estimation by weighted jet fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a normal for every point of a cloud.
    Estimate(EstimateArgs),
    /// Train a model on a list of shapes.
    Train(TrainArgs),
    /// Compare methods on a list of shapes under the benchmark augmentations.
    Eval(EvalArgs),
    /// Move points toward the surface described by their normals.
    Denoise(DenoiseArgs),
    /// Sample a synthetic shape with exact normals.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodName {
    Pca,
    Jet,
    Model,
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// Neighborhood size of the PCA and jet baselines.
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Polynomial order of the jet baseline.
    #[arg(long, default_value_t = 3)]
    jet_order: usize,
    /// Trained model, required by the `model` method.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Input points, one `x y z` per line.
    input: PathBuf,
    /// Output normals, one `nx ny nz` per line.
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodName::Jet)]
    method: MethodName,
    #[command(flatten)]
    methods: MethodArgs,
    /// Reference normals; prints RMSE and PGP against them.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write an `x y z r g b` error heatmap (needs --reference).
    #[arg(long, requires = "reference")]
    heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Shape-list file; shapes are read from its directory.
    shapes: PathBuf,
    /// TOML file with `[model]`, `[train]`, `[loss]` and `[data]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint written after training.
    #[arg(short, long)]
    output: PathBuf,
    /// Continue from this checkpoint; its model replaces `[model]`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Shape-list file; every shape needs ground-truth normals.
    shapes: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pca,jet")]
    methods: Vec<MethodName>,
    #[command(flatten)]
    method_args: MethodArgs,
    /// Augmentations to evaluate; all six by default.
    #[arg(long, value_delimiter = ',')]
    augmentations: Vec<String>,
    /// Evaluate at most this many points per shape.
    #[arg(long)]
    max_queries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Text report; records go next to it with a `.jsonl` extension.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// Input points.
    input: PathBuf,
    /// Output points.
    output: PathBuf,
    /// Normals of the input; defaults to the `.normals` file beside it.
    #[arg(long)]
    normals: Option<PathBuf>,
    #[arg(long, default_value_t = DenoiseConfig::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = DenoiseConfig::default().iterations)]
    iters: usize,
    #[arg(long, default_value_t = DenoiseConfig::default().k)]
    k: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// One of plane, sphere, quadric, cube.
    kind: String,
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `<name>.xyz` and `<name>.normals`.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
    /// Base file name; defaults to the kind.
    #[arg(long)]
    name: Option<String>,
    /// Gaussian noise relative to the bounding-box diagonal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of points replaced by uniform outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
}

/// Everything a training run reads from its config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Patches drawn from every shape in each epoch.
    pub patches_per_shape: usize,
    /// Gaussian noise added once to every training shape.
    pub noise_sigma_rel: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            patches_per_shape: 1000,
            noise_sigma_rel: 0.0,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("graphfit: error: {e}");
            1
        }
    }
}

fn print_config<T: Serialize>(title: &str, config: &T) -> CliResult {
    println!("# {title}");
    print!("{}", toml::to_string(config)?);
    println!();
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_model(checkpoint: Option<&Path>) -> CliResult<GraphFitModel> {
    let path = checkpoint.ok_or_else(|| Error::Config("the model method needs --checkpoint".into()))?;
    Ok(load_checkpoint(path)?.model)
}

fn build_method(name: MethodName, args: &MethodArgs) -> CliResult<Method> {
    Ok(match name {
        MethodName::Pca => Method::Pca { k: args.k },
        MethodName::Jet => Method::Jet {
            k: args.k,
            order: JetOrder::new(args.jet_order)?,
        },
        MethodName::Model => Method::Model(Arc::new(load_model(args.checkpoint.as_deref())?)),
    })
}

#[derive(Serialize)]
struct EstimateConfig<'a> {
    input: &'a Path,
    output: &'a Path,
    method: MethodName,
    k: usize,
    jet_order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<&'a Path>,
}

fn estimate(a: EstimateArgs) -> CliResult {
    print_config(
        "estimate",
        &EstimateConfig {
            input: &a.input,
            output: &a.output,
            method: a.method,
            k: a.methods.k,
            jet_order: a.methods.jet_order,
            checkpoint: a.methods.checkpoint.as_deref(),
        },
    )?;
    let method = build_method(a.method, &a.methods)?;
    if let Method::Model(m) = &method {
        print_config("model", m.config())?;
    }
    let cloud = PointCloud::new(read_xyz(&a.input)?, None)?;
    let normals: Vec<_> = method
        .estimate_all(&cloud)?
        .into_iter()
        .map(|n| n.into_vector())
        .collect();
    write_normals(&a.output, &normals)?;
    println!("wrote {} normals to {}", normals.len(), a.output.display());

    if let Some(reference) = &a.reference {
        let gt = read_normals(reference)?;
        println!("rmse_deg = {:.4}", rmse_angles(&normals, &gt)?);
        println!("pgp5 = {:.4}", pgp(&normals, &gt, 5.0)?);
        println!("pgp10 = {:.4}", pgp(&normals, &gt, 10.0)?);
        if let Some(path) = &a.heatmap {
            export_error_heatmap(path, cloud.points(), &normals, &gt)?;
            println!("wrote heatmap to {}", path.display());
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let mut file: TrainFile = match &a.config {
        Some(path) => toml::from_str(&read_text(path)?).map_err(|e| format!("{}: {e}", path.display()))?,
        None => TrainFile::default(),
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            file.model = ckpt.model.config().clone();
            Trainer::resume(ckpt.model, ckpt.state, file.train.clone(), file.loss)?
        }
        None => {
            let model = GraphFitModel::new(file.model.clone(), file.train.seed)?;
            Trainer::new(model, file.train.clone(), file.loss)?
        }
    };
    print_config("train", &file)?;

    let shapes = load_shape_list(&a.shapes)?;
    let augmentation = AugmentationSpec {
        gaussian_sigma_rel: file.data.noise_sigma_rel,
        seed: file.train.seed,
        ..AugmentationSpec::default()
    };
    let data = TrainingData::from_shapes(&shapes, file.data.patches_per_shape, augmentation)?;
    println!("{} shapes, {} patches per shape per epoch", shapes.len(), file.data.patches_per_shape);
    while trainer.state.epoch < trainer.config.epochs {
        let epoch = trainer.state.epoch;
        let lr = lr_at_epoch(&trainer.config, epoch);
        let loss = trainer.train_epoch(&data)?;
        println!("epoch {epoch:>4}  lr {lr:.1e}  loss {loss:.6}");
    }
    save_checkpoint(&a.output, &trainer.model, &trainer.state)?;
    println!("wrote checkpoint to {}", a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    shapes: &'a Path,
    methods: &'a [MethodName],
    k: usize,
    jet_order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<&'a Path>,
    augmentations: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_queries: Option<usize>,
    seed: u64,
    output: &'a Path,
}

fn eval(a: EvalArgs) -> CliResult {
    let augmentations = if a.augmentations.is_empty() {
        Augmentation::ALL.to_vec()
    } else {
        a.augmentations
            .iter()
            .map(|s| Augmentation::from_name(s))
            .collect::<Result<_, _>>()?
    };
    print_config(
        "eval",
        &EvalConfig {
            shapes: &a.shapes,
            methods: &a.methods,
            k: a.method_args.k,
            jet_order: a.method_args.jet_order,
            checkpoint: a.method_args.checkpoint.as_deref(),
            augmentations: augmentations.iter().map(|g| g.name()).collect(),
            max_queries: a.max_queries,
            seed: a.seed,
            output: &a.output,
        },
    )?;
    let methods = a
        .methods
        .iter()
        .map(|&m| build_method(m, &a.method_args))
        .collect::<CliResult<Vec<_>>>()?;
    let shapes = load_shape_list(&a.shapes)?;
    let options = CompareOptions {
        seed: a.seed,
        max_queries: a.max_queries,
    };
    let report = compare_methods(&shapes, &methods, &augmentations, &options)?;
    let table = report.to_table();
    print!("{table}");
    write_text(&a.output, &table)?;
    let records = a.output.with_extension("jsonl");
    write_text(&records, &report.to_jsonl())?;
    println!("wrote {} and {}", a.output.display(), records.display());
    Ok(())
}

#[derive(Serialize)]
struct DenoiseRun<'a> {
    input: &'a Path,
    normals: &'a Path,
    output: &'a Path,
    #[serde(flatten)]
    config: DenoiseConfig,
}

fn denoise_cmd(a: DenoiseArgs) -> CliResult {
    let normals = a.normals.clone().unwrap_or_else(|| a.input.with_extension("normals"));
    let config = DenoiseConfig {
        gamma: a.gamma,
        iterations: a.iters,
        k: a.k,
    };
    print_config(
        "denoise",
        &DenoiseRun {
            input: &a.input,
            normals: &normals,
            output: &a.output,
            config,
        },
    )?;
    let cloud = PointCloud::new(read_xyz(&a.input)?, Some(read_normals(&normals)?))?;
    let out = denoise(&cloud, &config)?;
    write_xyz(&a.output, out.points())?;
    println!("wrote {} points to {}", out.len(), a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthConfig<'a> {
    kind: ShapeKind,
    count: usize,
    seed: u64,
    noise: f64,
    outliers: f64,
    output: &'a Path,
    name: &'a str,
}

fn synth(a: SynthArgs) -> CliResult {
    let kind = ShapeKind::from_name(&a.kind)?;
    let name = a.name.clone().unwrap_or_else(|| a.kind.clone());
    print_config(
        "synth",
        &SynthConfig {
            kind,
            count: a.count,
            seed: a.seed,
            noise: a.noise,
            outliers: a.outliers,
            output: &a.output,
            name: &name,
        },
    )?;
    let mut shape = synth_shape(kind, a.count, a.seed)?;
    shape.cloud = add_gaussian_noise(&shape.cloud, a.noise, a.seed.wrapping_add(1))?;
    if a.outliers > 0.0 {
        shape = add_outliers(&shape, a.outliers, a.seed.wrapping_add(2))?;
    }
    shape.name = name;
    fs::create_dir_all(&a.output).map_err(|e| format!("{}: {e}", a.output.display()))?;
    save_shape(&a.output, &shape)?;
    println!("wrote {} points to {}", shape.cloud.len(), a.output.join(&shape.name).display());
    Ok(())
}

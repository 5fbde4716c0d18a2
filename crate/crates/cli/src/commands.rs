use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand_distr::{Distribution, StandardNormal};

use usflow::beamformer::{angle_set, beamform_compound, RfImage};
use usflow::flow::{derived_rng, interpolate, sample_reverse, split_dataset, train, FlowSchedule};
use usflow::metrics::{qq_gaussian, MetricsReport};
use usflow::pipeline::checkpoint::{load_checkpoint, save_checkpoint, TrainingInfo};
use usflow::pipeline::config::RunConfig;
use usflow::pipeline::dataset::{build_dataset, load_dataset, plan_sample};
use usflow::pipeline::report::{
    emit_report, evaluate_image, load_roi_file, qq_to_csv, render_bmode, save_png, save_roi_file,
    test_phantom_rois, Panel, RoiPair,
};
use usflow::pipeline::store::{load_channel_data, load_rf_image, save_channel_data, save_phantom, save_rf_image, write_json};
use usflow::pipeline::tensor_file::write_atomic;
use usflow::simulator::{generate_phantom_with_density, make_test_phantom_on, procedural_mask, simulate_planewaves};
use usflow::{Error, Result};

const TAG_QQ: u64 = 0x9a9a;

/// Plane-wave ultrasound simulation, beamforming and flow-based denoising.
#[derive(Parser, Debug)]
#[command(name = "usflow", version)]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice; overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom and its plane-wave channel data.
    Simulate(SimulateArgs),
    /// Delay-and-sum beamform channel files and compound them.
    Beamform(BeamformArgs),
    /// Build the paired training dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train the velocity network on a dataset.
    Train(TrainArgs),
    /// Run the reverse flow on an RF image.
    Denoise(DenoiseArgs),
    /// Compute image metrics and render B-mode panels.
    Evaluate(EvaluateArgs),
    /// Write the interpolation sequence between two images.
    ForwardDemo(ForwardDemoArgs),
    /// Gaussian quantile-quantile data of a pixel difference.
    Qqplot(QqplotArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Speckle with the two anechoic test cysts.
    Test,
    /// The procedural phantom of dataset sample `--index`.
    Procedural,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_enum, default_value = "test")]
    pub phantom: PhantomKind,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Number of steering angles (default: the scenario's K).
    #[arg(long)]
    pub angles: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BeamformArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output RF image.
    #[arg(long)]
    pub out: PathBuf,
    /// Channel data files, compounded together.
    #[arg(required = true)]
    pub channels: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Dataset directory (default: `<output_dir>/dataset`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Overrides network, optimizer and seed; the dataset fixes grid and scenario.
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reverse steps (default: the scenario the checkpoint was trained for).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Images to evaluate; one CSV row each.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Ground truth for NRMSE and SSIM.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Image whose B-mode statistics the KS test compares against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// JSON list of regions, each `roi` followed by its `background`.
    #[arg(long)]
    pub roi_file: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ForwardDemoArgs {
    #[arg(long)]
    pub x0: PathBuf,
    #[arg(long)]
    pub x1: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct QqplotArgs {
    /// Image `a` of the difference `a − b`.
    #[arg(long, requires = "b", conflicts_with = "synthetic")]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// Use this many standard-normal draws instead of images.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Beamform(a) => beamform(a),
        Command::MakeDataset(a) => make_dataset(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Denoise(a) => denoise(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ForwardDemo(a) => forward_demo(a),
        Command::Qqplot(a) => qqplot(a, cli.seed),
    }
}

fn load_config(arg: &ConfigArg, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn simulate(a: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let k = a.angles.unwrap_or(cfg.scenario.k);
    let angles = angle_set(k)?;
    let phantom = match a.phantom {
        PhantomKind::Test => {
            make_test_phantom_on(&cfg.geometry, &cfg.probe, cfg.seed, cfg.dataset.density_per_cell)?
        }
        PhantomKind::Procedural => {
            let entry = plan_sample(cfg.seed, a.index);
            let mask = procedural_mask(&cfg.geometry, entry.mask_seed, entry.mask_shape, entry.region_kind)?;
            generate_phantom_with_density(
                &cfg.geometry,
                &mask,
                &cfg.probe,
                entry.phantom_seed,
                cfg.dataset.density_per_cell,
            )?
        }
    };
    info!("{} scatterers, {k} angles", phantom.len());
    create_dir(&a.out)?;
    save_phantom(&a.out.join("phantom.ustf"), &phantom)?;
    let channels = simulate_planewaves(&phantom, &cfg.probe, &angles)?;
    for (i, c) in channels.iter().enumerate() {
        save_channel_data(&a.out.join(format!("channel_{i:02}.ustf")), c, &cfg.probe, cfg.seed)?;
    }
    if a.phantom == PhantomKind::Test {
        save_roi_file(&a.out.join("rois.json"), &test_phantom_rois())?;
    }
    write_json(&a.out.join("config.json"), &cfg)
}

fn beamform(a: &BeamformArgs) -> Result<()> {
    let cfg = load_config(&a.config, None)?;
    let mut emissions = Vec::with_capacity(a.channels.len());
    for p in &a.channels {
        let (data, meta) = load_channel_data(p)?;
        if meta.probe != cfg.probe {
            return Err(Error::invalid(format!(
                "{} was simulated with a different probe than the config",
                p.display()
            )));
        }
        emissions.push(data);
    }
    let image = beamform_compound(&emissions, &cfg.probe, &cfg.image_grid()?)?;
    save_rf_image(&a.out, &image)
}

fn make_dataset(a: &MakeDatasetArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("dataset"));
    let manifest = build_dataset(&cfg, &dir)?;
    info!("{} samples in {}", manifest.samples.len(), dir.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let (manifest, samples) = load_dataset(&a.dataset)?;
    let mut cfg = match &a.config.config {
        Some(p) => {
            let mut c = RunConfig::load(p)?;
            c.grid = manifest.config.grid;
            c.scenario = manifest.config.scenario;
            c
        }
        None => manifest.config.clone(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.hyper.epochs = e;
    }
    cfg.validate()?;
    let dataset = split_dataset(samples, cfg.seed)?;
    let outcome = train(&dataset, &cfg.scenario, &cfg.net_config(), &cfg.hyper, &cfg.train, cfg.seed)?;
    let best = outcome
        .best_epoch
        .and_then(|e| outcome.history.iter().find(|r| r.epoch == e));
    save_checkpoint(
        &a.out,
        &outcome.model,
        &TrainingInfo {
            scenario: cfg.scenario,
            hyper: cfg.hyper,
            seed: cfg.seed,
            epoch: outcome.best_epoch,
            val_loss: best.map(|r| r.val_loss),
        },
    )?;
    let history = a.out.with_file_name(format!(
        "{}_history.json",
        a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint")
    ));
    write_json(&history, &outcome.history)
}

fn denoise(a: &DenoiseArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let steps = a.steps.unwrap_or(meta.training.scenario.steps);
    let input = load_rf_image(&a.input)?;
    let (nz, nx) = input.data.dim();
    if (nz, nx) != (model.config.nz, model.config.nx) {
        return Err(Error::ShapeMismatch {
            expected: vec![model.config.nz, model.config.nx],
            actual: vec![nz, nx],
        });
    }
    let out = sample_reverse(&model, &input, steps)?;
    save_rf_image(&a.out, &out)
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let pairs: Vec<RoiPair> = match &a.roi_file {
        Some(p) => load_roi_file(p)?,
        None => Vec::new(),
    };
    let target = a.target.as_deref().map(load_rf_image).transpose()?;
    let reference = a.reference.as_deref().map(load_rf_image).transpose()?;
    let mut entries: Vec<(MetricsReport, Panel)> = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let image = load_rf_image(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let mut report = evaluate_image(&name, &image, target.as_ref(), reference.as_ref(), &pairs)?;
        report.scenario = a.scenario.clone();
        report.iterations = a.iterations;
        entries.push((report, Panel::from_rf(&image, &pairs)?));
    }
    emit_report(&entries, &a.out)?;
    Ok(())
}

fn forward_demo(a: &ForwardDemoArgs) -> Result<()> {
    let x0 = load_rf_image(&a.x0)?;
    let x1 = load_rf_image(&a.x1)?;
    let schedule = FlowSchedule::new(a.steps)?;
    create_dir(&a.out)?;
    for k in 0..=schedule.steps() {
        let t = schedule.t(k);
        let x = interpolate(&x0, &x1, t)?;
        save_rf_image(&a.out.join(format!("t_{k:03}.ustf")), &x)?;
        save_png(&a.out.join(format!("t_{k:03}.png")), &render_bmode(&Panel::from_rf(&x, &[])?))?;
    }
    Ok(())
}

fn qqplot(a: &QqplotArgs, seed: Option<u64>) -> Result<()> {
    let data: Vec<f64> = match (&a.a, &a.b, a.synthetic) {
        (Some(pa), Some(pb), None) => {
            let ia: RfImage = load_rf_image(pa)?;
            let ib: RfImage = load_rf_image(pb)?;
            if ia.grid != ib.grid {
                return Err(Error::invalid("qqplot images live on different grids"));
            }
            ia.data.iter().zip(ib.data.iter()).map(|(x, y)| x - y).collect()
        }
        (None, None, Some(n)) => {
            let mut rng = derived_rng(seed.unwrap_or(0), &[TAG_QQ]);
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        _ => return Err(Error::invalid("qqplot needs either --a and --b or --synthetic")),
    };
    let points = qq_gaussian(&data)?;
    write_atomic(&a.out, qq_to_csv(&points).as_bytes())
}

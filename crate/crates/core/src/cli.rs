//! Command-line interface. The binary only parses arguments and calls [`run`].

use crate::dataset::{generate_dataset_to, Dataset, GenerationSpec};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, GrayImage, RunConfig};
use crate::model::{RadioNet, Variant};
use crate::oracle::trace_radio_map;
use crate::scene::{generate_scene, rasterize_scene, split_dataset, SceneSpec};
use crate::tensor::RngState;
use crate::train::{
    benchmark_inference, compute_metrics, curve_csv, evaluate, l1_to_db, BenchReport, MapAggregation, Metrics,
    Trainer, RELIABILITY_THRESHOLD_DB,
};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "radionet", version, about = "Radio map prediction: dataset generation, training and evaluation")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run config file with `section.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenes, trace radio maps and write a dataset file.
    GenDataset(GenDatasetArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Train every variant with the same data and seeds and tabulate the results.
    Ablate(AblateArgs),
    /// Predict the radio map of one scene file.
    Predict(PredictArgs),
    /// Time model inference against the oracle and report metrics.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 4096)]
    pub count: usize,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each sample's scene as `scene_NNNNN.toml` into this directory.
    #[arg(long)]
    pub scene_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
    /// Model variant; overrides `model.variant`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Loss curve CSV. Defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the report, curves and checkpoints.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene file (TOML).
    #[arg(long)]
    pub scene: PathBuf,
    /// Output image (binary PGM).
    #[arg(long)]
    pub out: PathBuf,
    /// Trace the oracle map, write the |error| image and print the L1.
    #[arg(long)]
    pub truth: bool,
    /// Error image path. Defaults to `<out>_error.pgm`.
    #[arg(long)]
    pub error_out: Option<PathBuf>,
    /// Also write color-ramp PPM versions.
    #[arg(long)]
    pub color: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file for the metric part of the report.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of freshly generated scenes to time.
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file plus `--set` overrides, applied in order. Overriding
/// `model.variant` switches the variant flags but keeps the model shape.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        match k.trim() {
            "model.variant" => cfg = cfg.with_variant(v.trim().parse()?),
            k => cfg.set(k, v.trim())?,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenDataset(a) => {
            let sum = cmd_gen_dataset(&cfg, cli.seed, a.count, &a.out, a.scene_dir.as_deref())?;
            println!("checksum = {sum}");
        }
        Command::Train(a) => {
            let cfg = match &a.variant {
                Some(v) => cfg.with_variant(v.parse()?),
                None => cfg,
            };
            let curve = a.curve.clone().unwrap_or_else(|| a.out.with_extension("csv"));
            let m = cmd_train(&cfg, cli.seed, &a.data, &a.out, &curve, a.resume.as_deref())?;
            println!("{}", metrics_line(cfg.model.variant, &m));
        }
        Command::Ablate(a) => {
            let table = cmd_ablate(&cfg, cli.seed, &a.data, &a.out_dir)?;
            print!("{table}");
        }
        Command::Predict(a) => {
            let err_path = a.error_out.clone().unwrap_or_else(|| suffixed(&a.out, "_error"));
            let l1 = cmd_predict(&cfg, &a.checkpoint, &a.scene, &a.out, a.truth.then_some(&err_path), a.color)?;
            if let Some(l1) = l1 {
                println!("l1 = {l1:.4} ({:.2} dB)", l1_to_db(l1));
            }
        }
        Command::Bench(a) => {
            let report = cmd_bench(&cfg, cli.seed, &a.checkpoint, &a.data, a.scenes, &a.out)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "pgm".into());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn metrics_line(v: Variant, m: &Metrics) -> String {
    format!(
        "{v}: val l1 = {:.4}, e = {:.2} dB, reliability = {:.1}%",
        m.l1,
        m.e_db,
        100.0 * m.reliability
    )
}

/// Generate `count` samples with `seed` and write them to `out`. Returns the
/// file checksum.
pub fn cmd_gen_dataset(cfg: &RunConfig, seed: u64, count: usize, out: &Path, scene_dir: Option<&Path>) -> Result<String> {
    let spec = GenerationSpec {
        count,
        seed,
        input_res: cfg.model.input_res,
        output_res: cfg.model.output_res,
        scene: cfg.scene.clone(),
        oracle: cfg.oracle.clone(),
    };
    let step = (count / 20).max(1);
    let progress = |done: usize| {
        if done % step == 0 || done == count {
            eprintln!("generated {done}/{count}");
        }
    };
    let file = BufWriter::new(File::create(out)?);
    let sum = generate_dataset_to(&spec, file, 256, &progress)?;
    if let Some(dir) = scene_dir {
        std::fs::create_dir_all(dir)?;
        for i in 0..count {
            let scene = generate_scene(&mut RngState::with_stream(seed, i as u64), &cfg.scene)?;
            std::fs::write(dir.join(format!("scene_{i:05}.toml")), scene.to_toml()?)?;
        }
    }
    Ok(sum)
}

fn check_resolution(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let m = &cfg.model;
    if (data.h_in, data.w_in, data.h_out, data.w_out) != (m.input_res, m.input_res, m.output_res, m.output_res) {
        return Err(Error::Config(format!(
            "dataset is {}x{} -> {}x{}, model expects {r}x{r} -> {o}x{o}",
            data.h_in,
            data.w_in,
            data.h_out,
            data.w_out,
            r = m.input_res,
            o = m.output_res
        )));
    }
    Ok(())
}

fn train_on(
    cfg: &RunConfig,
    seed: u64,
    data: &Dataset,
    resume: Option<&Path>,
) -> Result<(Trainer, Vec<crate::train::CurvePoint>, Vec<usize>)> {
    check_resolution(cfg, data)?;
    let tc = crate::train::TrainConfig { seed, ..cfg.train.clone() };
    let (train_idx, val_idx) = split_dataset(data.len(), tc.split, seed)?;
    let mut trainer = match resume {
        Some(p) => Checkpoint::read(p)?.restore_trainer(Some(&cfg.model), tc, train_idx)?,
        None => Trainer::new(RadioNet::new(cfg.model.clone(), &mut RngState::new(seed))?, tc, train_idx)?,
    };
    let name = cfg.model.variant;
    let curve = trainer.run(data, Some(&val_idx), &mut |p| {
        eprintln!(
            "{name} iter {}: train l1 {:.4}, val l1 {:.4}",
            p.iteration,
            p.train_l1,
            p.val_l1.unwrap_or(f64::NAN)
        );
    })?;
    Ok((trainer, curve, val_idx))
}

/// Train `cfg.model` on the dataset, write the checkpoint and curve CSV and
/// return validation metrics. With `resume` the run continues from that
/// checkpoint's iteration up to `train.iterations`.
pub fn cmd_train(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    out: &Path,
    curve_path: &Path,
    resume: Option<&Path>,
) -> Result<Metrics> {
    let data = Dataset::read(data)?;
    let (trainer, curve, val_idx) = train_on(cfg, seed, &data, resume)?;
    Checkpoint::from_trainer(&trainer).write(out)?;
    std::fs::write(curve_path, curve_csv(&curve))?;
    evaluate(&trainer.model, &data, &val_idx, cfg.train.map_error)
}

/// Train all six variants with identical seeds, budget and data order and
/// write `ablation.md`, one curve CSV and one checkpoint per variant to
/// `out_dir`. Returns the report text.
pub fn cmd_ablate(cfg: &RunConfig, seed: u64, data: &Path, out_dir: &Path) -> Result<String> {
    let data = Dataset::read(data)?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let vc = cfg.with_variant(v);
        let (trainer, curve, val_idx) = train_on(&vc, seed, &data, None)?;
        Checkpoint::from_trainer(&trainer).write(&out_dir.join(format!("{v}.rnck")))?;
        std::fs::write(out_dir.join(format!("{v}.csv")), curve_csv(&curve))?;
        let m = evaluate(&trainer.model, &data, &val_idx, cfg.train.map_error)?;
        eprintln!("{}", metrics_line(v, &m));
        rows.push((v, trainer.model.params.numel(), m));
    }
    let report = ablation_table(&rows, cfg.train.iterations, seed);
    std::fs::write(out_dir.join("ablation.md"), &report)?;
    Ok(report)
}

/// Markdown table with one row per variant.
pub fn ablation_table(rows: &[(Variant, usize, Metrics)], iterations: usize, seed: u64) -> String {
    let mut s = String::new();
    writeln!(s, "| model | params | val L1 | e (dB) | reliability (<{RELIABILITY_THRESHOLD_DB} dB) |").unwrap();
    writeln!(s, "|---|---|---|---|---|").unwrap();
    for (v, n, m) in rows {
        writeln!(
            s,
            "| {v} | {n} | {:.4} | {:.2} | {:.1}% |",
            m.l1,
            m.e_db,
            100.0 * m.reliability
        )
        .unwrap();
    }
    writeln!(s, "\niterations = {iterations}, seed = {seed}").unwrap();
    s
}

/// Predict the scene's radio map and write it as an image. With `error_out`
/// the oracle map is traced too, the |error| image is written there and the
/// L1 is returned.
pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene: &Path,
    out: &Path,
    error_out: Option<&PathBuf>,
    color: bool,
) -> Result<Option<f64>> {
    let model = Checkpoint::read(checkpoint)?.restore_model(None)?;
    let scene = SceneSpec::from_toml(&std::fs::read_to_string(scene)?)?;
    let (ri, ro) = (model.cfg.input_res, model.cfg.output_res);
    let maps = rasterize_scene(&scene, ri, ri)?;
    let pred = model.predict(&model.input_batch(&[&maps])?)?.into_data();
    let (lo, hi) = (cfg.oracle.power_min_db, cfg.oracle.power_max_db);
    let db: Vec<f32> = pred.iter().map(|&x| (lo + x as f64 * (hi - lo)) as f32).collect();
    let img = GrayImage::from_power_db(&db, ro, ro, lo, hi)?;
    img.write_pgm(out)?;
    if color {
        img.write_ppm(&out.with_extension("ppm"))?;
    }
    let Some(err_path) = error_out else { return Ok(None) };
    let truth = trace_radio_map(&scene, &cfg.oracle, ro, ro)?;
    let err = GrayImage::error_map(&pred, &truth.normalized, ro, ro)?;
    err.write_pgm(err_path)?;
    if color {
        err.write_ppm(&err_path.with_extension("ppm"))?;
    }
    let m = compute_metrics(&pred, &truth.normalized, pred.len(), MapAggregation::Mean, RELIABILITY_THRESHOLD_DB)?;
    Ok(Some(m.l1))
}

/// Time the model against the oracle on `scenes` generated scenes, evaluate
/// it on the whole dataset and write the combined report.
pub fn cmd_bench(cfg: &RunConfig, seed: u64, checkpoint: &Path, data: &Path, scenes: usize, out: &Path) -> Result<String> {
    let model = Checkpoint::read(checkpoint)?.restore_model(None)?;
    let data = Dataset::read(data)?;
    let cfg = RunConfig { model: model.cfg.clone(), ..cfg.clone() };
    check_resolution(&cfg, &data)?;
    let specs = (0..scenes)
        .map(|i| generate_scene(&mut RngState::with_stream(seed, i as u64), &cfg.scene))
        .collect::<Result<Vec<_>>>()?;
    let report: BenchReport = benchmark_inference(&model, &specs, &cfg.oracle)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let m = evaluate(&model, &data, &all, cfg.train.map_error)?;
    let mut text = format!("variant = {}\n", model.cfg.variant);
    text.push_str(&report.to_text());
    writeln!(text, "samples = {}", data.len()).unwrap();
    writeln!(text, "l1 = {:.6}", m.l1).unwrap();
    writeln!(text, "e_db = {:.4}", m.e_db).unwrap();
    writeln!(text, "reliability = {:.6}", m.reliability).unwrap();
    std::fs::write(out, &text)?;
    Ok(text)
}

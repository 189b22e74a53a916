use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use latmap::compare::{compare, Filling};
use latmap::dataset::generate::generate_dataset_with;
use latmap::dataset::potentials::{flat_potential, harmonic_trap, potential_from_json, step_well};
use latmap::dataset::{read_dataset, GenConfig, Interval, TaskKind, TrainingSample};
use latmap::ed::SolverConfig;
use latmap::predict::{
    benchmark, invert, phase_scan, predict, BenchConfig, InversionConfig, JointBounds, Model, ScanConfig,
};
use latmap::train::{evaluate_files, learning_curve, train, CurveConfig, TrainConfig, BEST_MODEL, LAST_MODEL};
use latmap::{LatticeGeometry, ModelParams, PotentialField, Statistics};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{read_file, resolve, Flags};
use crate::output::{nest, opt, write_csv, write_json, write_snapshot};
use crate::{CliError, Command, Global};

pub fn run(global: &Global, command: &Command) -> Result<Value, CliError> {
    let file = global.config.as_deref().map(read_file).transpose()?;
    match command {
        Command::GenData(a) => gen_data(global, file, a),
        Command::Train(a) => train_cmd(global, file, a),
        Command::Eval(a) => eval_cmd(file, a),
        Command::LearningCurve(a) => curve_cmd(global, file, a),
        Command::Predict(a) => predict_cmd(file, a),
        Command::PhaseScan(a) => scan_cmd(file, a),
        Command::Invert(a) => invert_cmd(global, file, a),
        Command::Bench(a) => bench_cmd(global, file, a),
        Command::Compare(a) => compare_cmd(file, a),
    }
}

/// Comma-separated extents: `12`, `5-12` (a range of chain lengths) or `4x4`.
pub fn parse_extents_list(s: &str) -> Result<Vec<Vec<usize>>, CliError> {
    let bad = || CliError::usage("usage", format!("cannot parse extents {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.parse().map_err(|_| bad())?;
            out.extend((a..=b).map(|l| vec![l]));
        } else {
            out.push(parse_extents(part)?);
        }
    }
    Ok(out)
}

/// `16` or `4x4`.
pub fn parse_extents(s: &str) -> Result<Vec<usize>, CliError> {
    s.split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage("usage", format!("cannot parse extents {s:?}")))
}

/// Comma list of numbers, or `start:stop:count` for an inclusive linspace.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::usage("usage", format!("cannot parse grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].parse().map_err(|_| bad())?;
        let b: f64 = parts[1].parse().map_err(|_| bad())?;
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        return Ok(match n {
            0 => vec![],
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        });
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn parse_usizes(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage("usage", format!("cannot parse list {s:?}")))
}

fn list<T, F>(s: &Option<String>, f: F) -> Result<Option<T>, CliError>
where
    F: Fn(&str) -> Result<T, CliError>,
{
    s.as_deref().map(f).transpose()
}

/// `fermions1d`, `fermions_1d` and `fermions-1d` all name the same task.
fn parse_task(name: &str) -> Result<TaskKind, CliError> {
    let key: String = name.chars().filter(|c| *c != '_' && *c != '-').collect();
    serde_json::from_value(json!(key.to_lowercase()))
        .map_err(|_| CliError::usage("config", format!("unknown task {name:?}, expected fermions1d or bosons2d")))
}

// gen-data

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// fermions1d or bosons2d.
    #[arg(long)]
    task: Option<String>,
    /// Number of samples.
    #[arg(long)]
    count: Option<usize>,
    /// Candidate extents, e.g. `5-12` or `4x4,6x6`.
    #[arg(long)]
    extents: Option<String>,
    /// White-noise potential amplitude.
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Hopping of the fermion chain.
    #[arg(long)]
    j: Option<f64>,
    /// Interaction of the fermion chain.
    #[arg(long, alias = "U")]
    u: Option<f64>,
    /// Occupation cap for bosons.
    #[arg(long)]
    n_max: Option<u8>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GenDataConfig {
    out: PathBuf,
    #[serde(flatten)]
    generator: GenConfig,
}

fn gen_data(global: &Global, file: Option<Value>, a: &GenDataArgs) -> Result<Value, CliError> {
    let task_name = a
        .task
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.get("task")).and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_else(|| "fermions1d".into());
    let task = parse_task(&task_name)?;
    let defaults = GenDataConfig {
        out: "data".into(),
        generator: match task {
            TaskKind::Fermions1d => GenConfig::fermions_1d(),
            TaskKind::Bosons2d => GenConfig::bosons_2d(),
        },
    };
    let mut flags = Flags::default();
    flags
        .set("task", Some(task))
        .set("count", a.count)
        .set("seed", global.seed)
        .set("extents", list(&a.extents, parse_extents_list)?)
        .set("max_retries", a.max_retries)
        .set("j", a.j)
        .set("u", a.u)
        .set("n_max", a.n_max)
        .set("out", a.out.as_ref());
    if let Some(v) = a.v_max {
        flags.set("potential", Some(json!({ "kind": "white", "v_max": v })));
    }
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "gen-data", &snapshot)?;
    let manifest = generate_dataset_with(&cfg.generator, &cfg.out, |done, total| {
        log::info!("generated {done}/{total}");
    })?;
    let record = json!({
        "dir": cfg.out,
        "count": manifest.count,
        "failures": manifest.failures.len(),
        "retries": manifest.retries,
    });
    log::info!("wrote {} samples to {}", manifest.count, cfg.out.display());
    Ok(record)
}

// train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// tiny or reference.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// mae or mse.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Step size reached in the last epoch by cosine annealing.
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Training batches used to re-estimate batch-norm statistics each epoch (0: moving average only).
    #[arg(long)]
    bn_calibration_batches: Option<usize>,
    /// Train on the stored samples only, without random symmetry transforms.
    #[arg(long)]
    no_augment: bool,
    /// Comma-separated head names.
    #[arg(long)]
    heads: Option<String>,
    /// Continue from a model file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn train_flags(global: &Global, a: &TrainArgs, prefix: &str) -> Flags {
    let k = |s: &str| format!("{prefix}{s}");
    let mut flags = Flags::default();
    flags
        .set(&k("dataset"), a.data.as_ref())
        .set(&k("out_dir"), a.out.as_ref())
        .set(&k("preset"), a.preset.as_ref())
        .set(&k("channels"), a.channels)
        .set(&k("blocks"), a.blocks)
        .set(&k("loss"), a.loss.as_ref())
        .set(&k("lr"), a.lr)
        .set(&k("lr_final"), a.lr_final)
        .set(&k("batch_size"), a.batch_size)
        .set(&k("epochs"), a.epochs)
        .set(&k("validation_fraction"), a.validation_fraction)
        .set(&k("checkpoint_every"), a.checkpoint_every)
        .set(&k("bn_calibration_batches"), a.bn_calibration_batches)
        .set(&k("augment"), a.no_augment.then_some(false))
        .set(
            &k("heads"),
            a.heads
                .as_ref()
                .map(|h| h.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
        )
        .set(&k("resume"), a.resume.as_ref())
        .set(&k("seed"), global.seed);
    flags
}

fn train_cmd(global: &Global, file: Option<Value>, a: &TrainArgs) -> Result<Value, CliError> {
    let defaults = TrainConfig {
        dataset: "data".into(),
        out_dir: "run".into(),
        ..Default::default()
    };
    let (cfg, snapshot) = resolve(&defaults, file, train_flags(global, a, ""))?;
    cfg.validate()?;
    write_snapshot(&cfg.out_dir, "train", &snapshot)?;
    let out = train(&cfg)?;
    let record = json!({
        "run": cfg.out_dir,
        "epochs": out.metrics.len(),
        "best_val_loss": out.best_val_loss,
        "best_density_mae": out.best_density_mae,
        "unbatched": out.unbatched,
        "best_model": cfg.out_dir.join(BEST_MODEL),
        "last_model": cfg.out_dir.join(LAST_MODEL),
    });
    write_json(&cfg.out_dir.join("summary.json"), &record)?;
    Ok(record)
}

// eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// mae or mse (default: the loss the model was trained with).
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EvalConfig {
    model: PathBuf,
    data: PathBuf,
    loss: Option<latmap::nn::Loss>,
    out: PathBuf,
}

fn eval_cmd(file: Option<Value>, a: &EvalArgs) -> Result<Value, CliError> {
    let defaults = EvalConfig {
        model: PathBuf::from("run").join(BEST_MODEL),
        data: "data".into(),
        loss: None,
        out: "eval".into(),
    };
    let mut flags = Flags::default();
    flags
        .set("model", a.model.as_ref())
        .set("data", a.data.as_ref())
        .set("loss", a.loss.as_ref())
        .set("out", a.out.as_ref());
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "eval", &snapshot)?;
    let report = evaluate_files(&cfg.model, &cfg.data, cfg.loss)?;
    write_json(&cfg.out.join("eval.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .heads
        .iter()
        .map(|h| vec![h.name.clone(), h.mae.to_string(), h.mse.to_string()])
        .collect();
    write_csv(&cfg.out.join("heads.csv"), &["head", "mae", "mse"], &rows)?;
    serde_json::to_value(&report).map_err(|e| CliError::runtime("json", e.to_string()))
}

// learning-curve

#[derive(Args, Debug)]
pub struct LearningCurveArgs {
    /// Training-set sizes, comma-separated.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Give smaller sizes proportionally more epochs.
    #[arg(long)]
    equal_steps: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CurveFileConfig {
    sizes: Vec<usize>,
    repeats: usize,
    test_fraction: f64,
    #[serde(default)]
    equal_steps: bool,
    train: TrainConfig,
}

fn curve_cmd(global: &Global, file: Option<Value>, a: &LearningCurveArgs) -> Result<Value, CliError> {
    let defaults = CurveFileConfig {
        sizes: vec![500, 1000, 2000, 4000, 8000, 16000],
        repeats: 3,
        test_fraction: 0.1,
        equal_steps: false,
        train: TrainConfig {
            dataset: "data".into(),
            out_dir: "curve".into(),
            ..Default::default()
        },
    };
    let mut flags = train_flags(global, &a.train, "train.");
    flags
        .set("sizes", list(&a.sizes, parse_usizes)?)
        .set("repeats", a.repeats)
        .set("test_fraction", a.test_fraction)
        .set("equal_steps", a.equal_steps.then_some(true));
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    let out = cfg.train.out_dir.clone();
    write_snapshot(&out, "learning-curve", &snapshot)?;
    let data = read_dataset(&cfg.train.dataset)?;
    let refs: Vec<&TrainingSample> = data.samples.iter().collect();
    let curve_cfg = CurveConfig {
        train: cfg.train.clone(),
        sizes: cfg.sizes.clone(),
        repeats: cfg.repeats,
        test_fraction: cfg.test_fraction,
        equal_steps: cfg.equal_steps,
    };
    let points = learning_curve(&curve_cfg, &refs)?;
    write_json(&out.join("curve.json"), &points)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.size.to_string(), p.mean.to_string(), p.std.to_string(), p.errors.len().to_string()])
        .collect();
    write_csv(&out.join("curve.csv"), &["size", "mean_mse", "std", "repeats"], &rows)?;
    Ok(json!({ "dir": out, "points": points }))
}

// Potentials shared by predict and compare.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PotentialKind {
    Flat,
    #[serde(alias = "step")]
    StepWell,
    Harmonic,
    #[serde(alias = "file")]
    FromFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PotentialSpec {
    kind: PotentialKind,
    extents: Vec<usize>,
    /// Flat value.
    value: f64,
    /// Step-well depth.
    depth: f64,
    /// Step-well width; half the extent when absent.
    width: Option<usize>,
    curvature: f64,
    file: Option<PathBuf>,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            kind: PotentialKind::StepWell,
            extents: vec![16],
            value: 0.0,
            depth: 2.0,
            width: None,
            curvature: 0.1,
            file: None,
        }
    }
}

impl PotentialSpec {
    fn build(&self) -> Result<PotentialField, CliError> {
        let geom = || LatticeGeometry::new(self.extents.len(), &self.extents);
        Ok(match self.kind {
            PotentialKind::Flat => flat_potential(&geom()?, self.value)?,
            PotentialKind::StepWell => {
                let width = self.width.unwrap_or(self.extents.iter().copied().min().unwrap_or(0) / 2);
                step_well(&geom()?, self.depth, width)?
            }
            PotentialKind::Harmonic => harmonic_trap(&geom()?, self.curvature)?,
            PotentialKind::FromFile => {
                let path = self
                    .file
                    .as_ref()
                    .ok_or_else(|| CliError::usage("config", "from-file potentials need a file".into()))?;
                read_map(path)?
            }
        })
    }
}

fn read_map(path: &Path) -> Result<PotentialField, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?;
    Ok(potential_from_json(&text)?)
}

#[derive(Args, Debug)]
pub struct PotentialArgs {
    /// flat, step-well, harmonic or from-file.
    #[arg(long)]
    potential: Option<String>,
    /// `16` or `4x4`.
    #[arg(long)]
    extents: Option<String>,
    #[arg(long)]
    value: Option<f64>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    curvature: Option<f64>,
    /// JSON potential: an array, or rows of a square lattice.
    #[arg(long)]
    potential_file: Option<PathBuf>,
}

impl PotentialArgs {
    fn flags(&self, flags: &mut Flags) -> Result<(), CliError> {
        flags
            .set("potential.kind", self.potential.as_ref())
            .set("potential.extents", list(&self.extents, parse_extents)?)
            .set("potential.value", self.value)
            .set("potential.depth", self.depth)
            .set("potential.width", self.width)
            .set("potential.curvature", self.curvature)
            .set("potential.file", self.potential_file.as_ref());
        if self.potential_file.is_some() && self.potential.is_none() {
            flags.set("potential.kind", Some("from-file"));
        }
        Ok(())
    }
}

fn map_rows(extents: &[usize], potential: &[f64], columns: &[(&str, Option<&[f64]>)]) -> Vec<Vec<String>> {
    let geom = LatticeGeometry::new(extents.len(), extents).ok();
    (0..potential.len())
        .map(|s| {
            let mut row = vec![s.to_string()];
            if let Some(g) = &geom {
                row.extend(g.coords(s).iter().map(|c| c.to_string()));
            }
            row.push(potential[s].to_string());
            for (_, col) in columns {
                row.push(col.map(|c| c[s].to_string()).unwrap_or_default());
            }
            row
        })
        .collect()
}

fn map_header<'a>(dim: usize, columns: &[(&'a str, Option<&[f64]>)]) -> Vec<&'a str> {
    let mut h = vec!["site"];
    h.extend(["x", "y"].iter().take(dim));
    h.push("potential");
    h.extend(columns.iter().map(|c| c.0));
    h
}

fn params_for(task: TaskKind, j: f64, u: Option<f64>, u_prime: Option<f64>) -> ModelParams {
    match task {
        TaskKind::Fermions1d => ModelParams::fermions(j, u.unwrap_or(1.5)),
        TaskKind::Bosons2d => ModelParams::bosons(j, u.unwrap_or(20.0), u_prime.unwrap_or(6.25), 1),
    }
}

// predict

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    potential: PotentialArgs,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long, alias = "U")]
    u: Option<f64>,
    #[arg(long, alias = "U-prime")]
    u_prime: Option<f64>,
    /// Checkerboard sector of 2D inputs, +1 or -1.
    #[arg(long, allow_hyphen_values = true)]
    sector: Option<i8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PredictConfig {
    model: PathBuf,
    potential: PotentialSpec,
    mu: f64,
    j: f64,
    u: Option<f64>,
    u_prime: Option<f64>,
    sector: i8,
    out: PathBuf,
}

fn predict_cmd(file: Option<Value>, a: &PredictArgs) -> Result<Value, CliError> {
    let defaults = PredictConfig {
        model: PathBuf::from("run").join(BEST_MODEL),
        potential: PotentialSpec::default(),
        mu: 0.0,
        j: 1.0,
        u: None,
        u_prime: None,
        sector: 1,
        out: "predict".into(),
    };
    let mut flags = Flags::default();
    flags
        .set("model", a.model.as_ref())
        .set("mu", a.mu)
        .set("j", a.j)
        .set("u", a.u)
        .set("u_prime", a.u_prime)
        .set("sector", a.sector)
        .set("out", a.out.as_ref());
    a.potential.flags(&mut flags)?;
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "predict", &snapshot)?;
    let model = Model::load(&cfg.model)?;
    let v = cfg.potential.build()?;
    let params = params_for(model.task, cfg.j, cfg.u, cfg.u_prime);
    let obs = predict(&model, &v, cfg.mu, &params, cfg.sector)?;
    let ext = v.geometry().extents().to_vec();
    let record = json!({
        "extents": ext,
        "mu": cfg.mu,
        "params": params,
        "potential": nest(&ext, v.values()),
        "density": nest(&ext, &obs.density),
        "nn_density_corr": obs.nn_density_corr.iter().map(|m| nest(&ext, m)).collect::<Vec<_>>(),
        "current": obs.current.iter().map(|m| nest(&ext, m)).collect::<Vec<_>>(),
        "nn_current_corr": obs.nn_current_corr.iter().map(|m| nest(&ext, m)).collect::<Vec<_>>(),
    });
    write_json(&cfg.out.join("prediction.json"), &record)?;
    let cols = [("density", Some(obs.density.as_slice()))];
    write_csv(
        &cfg.out.join("prediction.csv"),
        &map_header(ext.len(), &cols),
        &map_rows(&ext, v.values(), &cols),
    )?;
    Ok(record)
}

// phase-scan

#[derive(Args, Debug)]
pub struct PhaseScanArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// e.g. `8x8`.
    #[arg(long)]
    extents: Option<String>,
    /// `start:stop:count` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    mu_over_u: Option<String>,
    /// 4J/U grid, `start:stop:count` or a comma list.
    #[arg(long)]
    hopping_ratio: Option<String>,
    /// 4U'/U.
    #[arg(long)]
    u_prime_ratio: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PhaseScanConfig {
    model: PathBuf,
    extents: Vec<usize>,
    mu_over_u: Vec<f64>,
    hopping_ratio: Vec<f64>,
    u_prime_ratio: f64,
    out: PathBuf,
}

fn scan_cmd(file: Option<Value>, a: &PhaseScanArgs) -> Result<Value, CliError> {
    let defaults = PhaseScanConfig {
        model: PathBuf::from("run").join(BEST_MODEL),
        extents: vec![8, 8],
        mu_over_u: parse_grid("0:3:31")?,
        hopping_ratio: parse_grid("0.05:1:20")?,
        u_prime_ratio: 1.25,
        out: "scan".into(),
    };
    let mut flags = Flags::default();
    flags
        .set("model", a.model.as_ref())
        .set("extents", list(&a.extents, parse_extents)?)
        .set("mu_over_u", list(&a.mu_over_u, parse_grid)?)
        .set("hopping_ratio", list(&a.hopping_ratio, parse_grid)?)
        .set("u_prime_ratio", a.u_prime_ratio)
        .set("out", a.out.as_ref());
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "phase-scan", &snapshot)?;
    let model = Model::load(&cfg.model)?;
    let result = phase_scan(
        &model,
        &ScanConfig {
            extents: cfg.extents.clone(),
            mu_over_u: cfg.mu_over_u.clone(),
            hopping_ratio: cfg.hopping_ratio.clone(),
            u_prime_ratio: cfg.u_prime_ratio,
        },
    )?;
    let flagged = result.points.iter().filter(|p| p.out_of_range).count();
    if flagged > 0 {
        log::warn!("{flagged} grid points lie outside the training ranges");
    }
    write_json(&cfg.out.join("scan.json"), &result)?;
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .map(|p| {
            vec![
                p.mu_over_u.to_string(),
                p.hopping_ratio.to_string(),
                p.order.to_string(),
                p.sector.to_string(),
                p.order_plus.to_string(),
                p.order_minus.to_string(),
                p.overlap_plus.to_string(),
                p.overlap_minus.to_string(),
                p.out_of_range.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.out.join("scan.csv"),
        &[
            "mu_over_u",
            "hopping_ratio",
            "order",
            "sector",
            "order_plus",
            "order_minus",
            "overlap_plus",
            "overlap_minus",
            "out_of_range",
        ],
        &rows,
    )?;
    Ok(json!({ "dir": cfg.out, "points": result.points.len(), "out_of_range": flagged }))
}

// invert

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON target density: an array, or rows of a square lattice.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long, alias = "U")]
    u: Option<f64>,
    #[arg(long, alias = "U-prime")]
    u_prime: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sector: Option<i8>,
    /// Lower potential bound (default: training range).
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    init_noise: Option<f64>,
    /// Also optimize U and U' within the trained ranges.
    #[arg(long)]
    joint: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InvertConfig {
    model: PathBuf,
    target: PathBuf,
    mu: f64,
    j: f64,
    u: Option<f64>,
    u_prime: Option<f64>,
    sector: i8,
    lo: Option<f64>,
    hi: Option<f64>,
    steps: usize,
    lr: f64,
    restarts: usize,
    seed: u64,
    init_noise: f64,
    joint: bool,
    out: PathBuf,
}

fn invert_cmd(global: &Global, file: Option<Value>, a: &InvertArgs) -> Result<Value, CliError> {
    let base = InversionConfig::new(vec![], vec![], 0.0, ModelParams::fermions(1.0, 1.5));
    let defaults = InvertConfig {
        model: PathBuf::from("run").join(BEST_MODEL),
        target: "target.json".into(),
        mu: 0.0,
        j: 1.0,
        u: None,
        u_prime: None,
        sector: base.sector,
        lo: None,
        hi: None,
        steps: base.steps,
        lr: base.lr,
        restarts: base.restarts,
        seed: base.seed,
        init_noise: base.init_noise,
        joint: false,
        out: "invert".into(),
    };
    let mut flags = Flags::default();
    flags
        .set("model", a.model.as_ref())
        .set("target", a.target.as_ref())
        .set("mu", a.mu)
        .set("j", a.j)
        .set("u", a.u)
        .set("u_prime", a.u_prime)
        .set("sector", a.sector)
        .set("lo", a.lo)
        .set("hi", a.hi)
        .set("steps", a.steps)
        .set("lr", a.lr)
        .set("restarts", a.restarts)
        .set("seed", global.seed)
        .set("init_noise", a.init_noise)
        .set("joint", a.joint.then_some(true))
        .set("out", a.out.as_ref());
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "invert", &snapshot)?;
    let model = Model::load(&cfg.model)?;
    let target = read_map(&cfg.target)?;
    let ext = target.geometry().extents().to_vec();
    let params = params_for(model.task, cfg.j, cfg.u, cfg.u_prime);
    let ranges = model.ranges();
    let bounds = match (cfg.lo, cfg.hi) {
        (None, None) => None,
        (lo, hi) => {
            let r = ranges.get("potential").copied().unwrap_or([f64::NAN, f64::NAN]);
            Some(Interval {
                lo: lo.unwrap_or(r[0]),
                hi: hi.unwrap_or(r[1]),
            })
        }
    };
    let joint = if cfg.joint {
        let get = |k: &str| {
            ranges
                .get(k)
                .map(|r| Interval { lo: r[0], hi: r[1] })
                .ok_or_else(|| CliError::usage("config", format!("model records no {k} range for joint inversion")))
        };
        Some(JointBounds {
            u: get("u")?,
            u_prime: get("u_prime")?,
        })
    } else {
        None
    };
    let inv = InversionConfig {
        sector: cfg.sector,
        bounds,
        steps: cfg.steps,
        lr: cfg.lr,
        restarts: cfg.restarts,
        seed: cfg.seed,
        init_noise: cfg.init_noise,
        joint,
        ..InversionConfig::new(ext.clone(), target.values().to_vec(), cfg.mu, params)
    };
    let r = invert(&model, &inv)?;
    let record = json!({
        "extents": ext,
        "loss": r.loss,
        "restart": r.restart,
        "restart_losses": r.restart_losses,
        "bounds": r.bounds,
        "init_noise": r.init_noise,
        "params": r.params,
        "potential": nest(&ext, &r.potential),
        "density": nest(&ext, &r.density),
        "target": nest(&ext, target.values()),
    });
    write_json(&cfg.out.join("inversion.json"), &record)?;
    write_json(&cfg.out.join("potential.json"), &nest(&ext, &r.potential))?;
    let rows: Vec<Vec<String>> = r
        .trace
        .iter()
        .zip(&r.best_trace)
        .enumerate()
        .map(|(i, (l, b))| vec![i.to_string(), l.to_string(), b.to_string()])
        .collect();
    write_csv(&cfg.out.join("trace.csv"), &["step", "loss", "best"], &rows)?;
    Ok(json!({ "dir": cfg.out, "loss": r.loss, "restart": r.restart }))
}

// bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Chain lengths timed with both the exact solver and the network.
    #[arg(long)]
    extents: Option<String>,
    /// Chain lengths timed with the network only.
    #[arg(long)]
    nn_only: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long, alias = "U")]
    u: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    sector_cap: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BenchFileConfig {
    model: PathBuf,
    extents: Vec<usize>,
    nn_only: Vec<usize>,
    repeats: usize,
    mu: f64,
    j: f64,
    u: f64,
    v_max: f64,
    seed: u64,
    sector_cap: usize,
    out: PathBuf,
}

fn bench_cmd(global: &Global, file: Option<Value>, a: &BenchArgs) -> Result<Value, CliError> {
    let defaults = BenchFileConfig {
        model: PathBuf::from("run").join(BEST_MODEL),
        extents: vec![8, 10, 12, 14, 16],
        nn_only: vec![20, 40, 80],
        repeats: 5,
        mu: 0.0,
        j: 1.0,
        u: 1.5,
        v_max: 12.0,
        seed: 0,
        sector_cap: SolverConfig::default().sector_cap,
        out: "bench".into(),
    };
    let mut flags = Flags::default();
    flags
        .set("model", a.model.as_ref())
        .set("extents", list(&a.extents, parse_usizes)?)
        .set("nn_only", list(&a.nn_only, parse_usizes)?)
        .set("repeats", a.repeats)
        .set("mu", a.mu)
        .set("u", a.u)
        .set("v_max", a.v_max)
        .set("seed", global.seed)
        .set("sector_cap", a.sector_cap)
        .set("out", a.out.as_ref());
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "bench", &snapshot)?;
    let model = Model::load(&cfg.model)?;
    let report = benchmark(
        &model,
        &BenchConfig {
            extents: cfg.extents.clone(),
            nn_only: cfg.nn_only.clone(),
            repeats: cfg.repeats,
            params: ModelParams::fermions(cfg.j, cfg.u),
            mu: cfg.mu,
            v_max: cfg.v_max,
            seed: cfg.seed,
            sector_cap: cfg.sector_cap,
        },
    )?;
    write_json(&cfg.out.join("bench.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.extent.to_string(),
                opt(r.oracle_seconds),
                opt(r.nn_seconds),
                opt(r.ratio),
                r.repeats.to_string(),
                r.low_confidence.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.out.join("bench.csv"),
        &["extent", "oracle_seconds", "nn_seconds", "ratio", "repeats", "low_confidence"],
        &rows,
    )?;
    serde_json::to_value(&report).map_err(|e| CliError::runtime("json", e.to_string()))
}

// compare

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    potential: PotentialArgs,
    /// fermion or boson.
    #[arg(long)]
    statistics: Option<String>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long, alias = "U")]
    u: Option<f64>,
    #[arg(long, alias = "U-prime")]
    u_prime: Option<f64>,
    #[arg(long)]
    n_max: Option<u8>,
    /// Particle number (default: half filling).
    #[arg(long)]
    particles: Option<usize>,
    /// Chemical potential; switches to the grand-canonical ground state.
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Trained model to include in the comparison.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CompareConfig {
    potential: PotentialSpec,
    statistics: Statistics,
    j: f64,
    u: f64,
    u_prime: Option<f64>,
    n_max: u8,
    particles: Option<usize>,
    mu: Option<f64>,
    model: Option<PathBuf>,
    out: PathBuf,
}

fn compare_cmd(file: Option<Value>, a: &CompareArgs) -> Result<Value, CliError> {
    let defaults = CompareConfig {
        potential: PotentialSpec::default(),
        statistics: Statistics::Fermion,
        j: 1.0,
        u: 1.5,
        u_prime: None,
        n_max: 1,
        particles: None,
        mu: None,
        model: None,
        out: "compare".into(),
    };
    let mut flags = Flags::default();
    a.potential.flags(&mut flags)?;
    flags
        .set("statistics", a.statistics.as_ref())
        .set("j", a.j)
        .set("u", a.u)
        .set("u_prime", a.u_prime)
        .set("n_max", a.n_max)
        .set("particles", a.particles)
        .set("mu", a.mu)
        .set("model", a.model.as_ref())
        .set("out", a.out.as_ref());
    let (cfg, snapshot) = resolve(&defaults, file, flags)?;
    write_snapshot(&cfg.out, "compare", &snapshot)?;
    let v = cfg.potential.build()?;
    let ext = v.geometry().extents().to_vec();
    let params = ModelParams {
        j: cfg.j,
        u: cfg.u,
        u_prime: cfg.u_prime,
        statistics: cfg.statistics,
        n_max: cfg.n_max,
    };
    let filling = match (cfg.particles, cfg.mu) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("config", "give either particles or mu, not both".into()))
        }
        (Some(n), None) => Filling::Canonical(n),
        (None, Some(mu)) => Filling::Grand(mu),
        (None, None) => Filling::Canonical(v.geometry().site_count() / 2),
    };
    let model = cfg.model.as_deref().map(Model::load).transpose()?;
    let report = compare(model.as_ref(), &v, &params, filling, &SolverConfig::default())?;
    let mut record = serde_json::to_value(&report).map_err(|e| CliError::runtime("json", e.to_string()))?;
    record["potential"] = json!(v.values());
    record["params"] = json!(params);
    write_json(&cfg.out.join("compare.json"), &record)?;
    let cols = [
        ("ed", Some(report.ed_density.as_slice())),
        ("hf", report.hf_density.as_deref()),
        ("nn", report.nn_density.as_deref()),
    ];
    write_csv(
        &cfg.out.join("compare.csv"),
        &map_header(ext.len(), &cols),
        &map_rows(&ext, v.values(), &cols),
    )?;
    if let Some(e) = report.hf_max_abs {
        log::info!("Hartree-Fock max |Δρ| = {e:.3e}");
    }
    if let Some(e) = report.nn_max_abs {
        log::info!("network max |Δρ| = {e:.3e}");
    }
    Ok(record)
}

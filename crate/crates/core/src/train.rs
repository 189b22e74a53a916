//! Training loop, held-out evaluation and the learning-curve experiment.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::augment::augment_all;
use crate::dataset::{read_dataset, SymmetryOp, TaskKind, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::{
    load_model, load_optimizer, loss_and_grads, save_model, save_optimizer, AdamConfig, HeadSpec,
    Loss, Mode, ModelInfo, Network, NetworkSpec, ParameterStore,
};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const BEST_MODEL: &str = "best.model";
pub const LAST_MODEL: &str = "last.model";
const EVAL_CHUNK: usize = 64;

fn default_preset() -> String {
    "tiny".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// `tiny` or `reference`.
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Overrides the preset width.
    pub channels: Option<usize>,
    /// Overrides the preset depth.
    pub blocks: Option<usize>,
    /// Defaults to MAE for 1D data and MSE for 2D data.
    pub loss: Option<Loss>,
    pub lr: f64,
    /// Cosine-anneal the step size per epoch down to this value in the last one.
    pub lr_final: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Write the last checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Before each validation pass, reset the batch-norm running statistics
    /// to their average over this many training batches (0: keep the moving average).
    #[serde(default = "default_calibration")]
    pub bn_calibration_batches: usize,
    /// Apply a random lattice symmetry (reflections, and rotations on square
    /// lattices) to every training sample each epoch.
    #[serde(default = "default_augment")]
    pub augment: bool,
    /// Train only these heads.
    pub heads: Option<Vec<String>>,
    /// Continue from this model file (and its `.opt` sidecar when present).
    pub resume: Option<PathBuf>,
}

fn default_calibration() -> usize {
    50
}

fn default_augment() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            preset: default_preset(),
            channels: None,
            blocks: None,
            loss: None,
            lr: 1e-3,
            lr_final: None,
            batch_size: 32,
            epochs: 10,
            validation_fraction: 0.1,
            seed: 0,
            checkpoint_every: 0,
            bn_calibration_batches: default_calibration(),
            augment: default_augment(),
            heads: None,
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("lr_final must be positive, got {f}"));
            }
        }
        if self.channels == Some(0) {
            return bad("channels must be positive".into());
        }
        Ok(())
    }

    /// Step size used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(f) if self.epochs > 1 => {
                let t = (epoch.clamp(1, self.epochs) - 1) as f64 / (self.epochs - 1) as f64;
                f + 0.5 * (self.lr - f) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.lr,
        }
    }

    pub fn loss_for(&self, task: TaskKind) -> Loss {
        self.loss.unwrap_or(match task {
            TaskKind::Fermions1d => Loss::Mae,
            TaskKind::Bosons2d => Loss::Mse,
        })
    }

    pub fn head_names(&self, task: TaskKind) -> Result<Vec<String>> {
        let all: Vec<String> = task.heads().into_iter().map(|h| h.name).collect();
        match &self.heads {
            None => Ok(all),
            Some(sel) => {
                if sel.is_empty() {
                    return Err(Error::Config("head selection is empty".into()));
                }
                for h in sel {
                    if !all.contains(h) {
                        return Err(Error::Config(format!("task {task:?} has no head {h:?}")));
                    }
                }
                Ok(all.into_iter().filter(|h| sel.contains(h)).collect())
            }
        }
    }

    pub fn network_spec(&self, task: TaskKind) -> Result<NetworkSpec> {
        let heads = task
            .heads()
            .into_iter()
            .filter(|h| self.head_names(task).map(|s| s.contains(&h.name)).unwrap_or(false))
            .map(|h| HeadSpec {
                name: h.name,
                channels: h.channels,
            })
            .collect();
        let mut spec = NetworkSpec::preset(&self.preset, task.dim(), task.input_channels().len(), heads)?;
        if let Some(c) = self.channels {
            spec.stem_channels = c;
            for b in &mut spec.body {
                b.channels = c;
            }
        }
        if let Some(n) = self.blocks {
            let template = spec.body.first().cloned();
            spec.body = match template {
                Some(t) => vec![t; n],
                None => Vec::new(),
            };
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One record of the metrics log. Wall-clock time lives in a separate file
/// so that identical runs produce identical logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_heads: BTreeMap<String, f64>,
    pub val_density_mae: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadError {
    pub name: String,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss_kind: Loss,
    /// Sum over heads of the per-head mean loss.
    pub loss: f64,
    pub heads: Vec<HeadError>,
    pub density_mae: Option<f64>,
}

impl EvalReport {
    pub fn head(&self, name: &str) -> Option<&HeadError> {
        self.heads.iter().find(|h| h.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub struct TrainOutcome {
    pub network: Network,
    pub best: ParameterStore,
    pub last: ParameterStore,
    pub best_val_loss: Option<f64>,
    pub best_density_mae: Option<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub seconds: Vec<f64>,
    pub split: Split,
    pub info: ModelInfo,
    /// Training samples left out because their extent occurs only once.
    pub unbatched: usize,
}

/// Seeded train/validation split: a shuffle followed by a prefix cut.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
    Split {
        validation: order[..n_val].to_vec(),
        train: order[n_val..].to_vec(),
    }
}

fn head_offsets(task: TaskKind, names: &[String]) -> Vec<(String, usize, usize)> {
    let mut off = 0;
    let mut out = Vec::new();
    for h in task.heads() {
        if names.contains(&h.name) {
            out.push((h.name.clone(), off, h.channels));
        }
        off += h.channels;
    }
    out
}

struct Batch {
    input: Tensor,
    targets: Vec<Tensor>,
}

fn assemble(samples: &[&TrainingSample], heads: &[(String, usize, usize)]) -> Result<Batch> {
    let inputs: Vec<&Tensor> = samples.iter().map(|s| &s.inputs).collect();
    let input = Tensor::stack(&inputs)?;
    let ext = samples[0].meta.extents.clone();
    let sites: usize = ext.iter().product();
    let mut targets = Vec::with_capacity(heads.len());
    for (_, off, ch) in heads {
        let mut data = Vec::with_capacity(samples.len() * ch * sites);
        for s in samples {
            data.extend_from_slice(&s.targets.data()[off * sites..(off + ch) * sites]);
        }
        let mut dims = vec![samples.len(), *ch];
        dims.extend(&ext);
        targets.push(Tensor::new(dims, data)?);
    }
    Ok(Batch { input, targets })
}

fn buckets(samples: &[&TrainingSample], idx: &[usize]) -> BTreeMap<Vec<usize>, Vec<usize>> {
    let mut map: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        map.entry(samples[i].meta.extents.clone()).or_default().push(i);
    }
    map
}

/// Error of `store` on `samples`, per head, as means over every predicted
/// value. Batches are formed by extent; eval mode makes each item
/// independent of its batch mates.
pub fn evaluate(
    net: &Network,
    store: &ParameterStore,
    samples: &[&TrainingSample],
    loss: Loss,
) -> Result<EvalReport> {
    let task = match samples.first() {
        Some(s) => s.meta.task,
        None => {
            return Ok(EvalReport {
                samples: 0,
                loss_kind: loss,
                loss: 0.0,
                heads: Vec::new(),
                density_mae: None,
            })
        }
    };
    let names: Vec<String> = net.spec().heads.iter().map(|h| h.name.clone()).collect();
    let heads = head_offsets(task, &names);
    if heads.len() != names.len() {
        return Err(Error::ShapeMismatch(format!("network heads {names:?} are not all {task:?} heads")));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    let mut abs = vec![0.0; heads.len()];
    let mut sq = vec![0.0; heads.len()];
    let mut count = vec![0usize; heads.len()];
    for idx in buckets(samples, &all).values() {
        for chunk in idx.chunks(EVAL_CHUNK) {
            let items: Vec<&TrainingSample> = chunk.iter().map(|&i| samples[i]).collect();
            let batch = assemble(&items, &heads)?;
            let out = net.infer(store, &batch.input)?;
            for (h, (p, t)) in out.iter().zip(&batch.targets).enumerate() {
                if p.dims() != t.dims() {
                    return Err(Error::ShapeMismatch(format!("head {} output {:?} vs {:?}", names[h], p.dims(), t.dims())));
                }
                for (a, b) in p.data().iter().zip(t.data()) {
                    abs[h] += (a - b).abs();
                    sq[h] += (a - b) * (a - b);
                }
                count[h] += p.len();
            }
        }
    }
    let head_errors: Vec<HeadError> = heads
        .iter()
        .enumerate()
        .map(|(h, (name, _, _))| HeadError {
            name: name.clone(),
            mae: abs[h] / count[h] as f64,
            mse: sq[h] / count[h] as f64,
        })
        .collect();
    let total = head_errors
        .iter()
        .map(|e| match loss {
            Loss::Mae => e.mae,
            Loss::Mse => e.mse,
        })
        .sum();
    let density_mae = head_errors.iter().find(|h| h.name == "density").map(|h| h.mae);
    Ok(EvalReport {
        samples: samples.len(),
        loss_kind: loss,
        loss: total,
        heads: head_errors,
        density_mae,
    })
}

/// Observed range of every input channel and sample parameter.
pub fn training_ranges(samples: &[&TrainingSample]) -> BTreeMap<String, [f64; 2]> {
    let mut out: BTreeMap<String, [f64; 2]> = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        let e = out.entry(k.to_string()).or_insert([v, v]);
        e[0] = e[0].min(v);
        e[1] = e[1].max(v);
    };
    for s in samples {
        let names = s.meta.task.input_channels();
        for (c, name) in names.iter().enumerate() {
            for &v in s.inputs.outer(c) {
                put(name, v);
            }
        }
        for &v in &s.meta.potential {
            put("potential", v);
        }
        put("mu", s.meta.mu);
        put("j", s.meta.params.j);
        put("extent", *s.meta.extents.iter().max().unwrap_or(&0) as f64);
        put("extent_min", *s.meta.extents.iter().min().unwrap_or(&0) as f64);
        if let Some(up) = s.meta.params.u_prime {
            put("u_prime_param", up);
        }
        put("u_param", s.meta.params.u);
    }
    out
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(row)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

fn optimizer_path(model: &Path) -> PathBuf {
    model.with_extension("opt")
}

fn checkpoint(dir: &Path, name: &str, net: &Network, store: &ParameterStore, info: &ModelInfo) -> Result<()> {
    let path = dir.join(name);
    save_model(&path, net, store, info)?;
    save_optimizer(&optimizer_path(&path), store)
}

/// Trains on `samples`, holding out a seeded validation split. When `out`
/// is given, checkpoints and logs are written there as training proceeds.
pub fn fit(cfg: &TrainConfig, samples: &[&TrainingSample], out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = samples
        .first()
        .map(|s| s.meta.task)
        .ok_or_else(|| Error::Config("cannot train on an empty dataset".into()))?;
    if samples.iter().any(|s| s.meta.task != task) {
        return Err(Error::Config("dataset mixes tasks".into()));
    }
    let loss = cfg.loss_for(task);
    let (net, mut store) = match &cfg.resume {
        Some(path) => {
            let (net, mut store, _) = load_model(path)?;
            let opt = optimizer_path(path);
            if opt.exists() {
                load_optimizer(&opt, &mut store)?;
            }
            (net, store)
        }
        None => {
            let net = Network::new(cfg.network_spec(task)?)?;
            let store = net.init(cfg.seed);
            (net, store)
        }
    };
    if net.spec().input_channels != task.input_channels().len() {
        return Err(Error::ChannelMismatch {
            expected: net.spec().input_channels,
            got: task.input_channels().len(),
        });
    }
    let names: Vec<String> = net.spec().heads.iter().map(|h| h.name.clone()).collect();
    let heads = head_offsets(task, &names);
    if heads.len() != names.len() {
        return Err(Error::Config(format!("model heads {names:?} do not match task {task:?}")));
    }

    let split = split_indices(samples.len(), cfg.validation_fraction, cfg.seed);
    if cfg.epochs > 0 && (split.train.len() < 2 || split.validation.is_empty()) {
        return Err(Error::Config(format!("{} samples are too few to train", samples.len())));
    }
    let train_set: Vec<&TrainingSample> = split.train.iter().map(|&i| samples[i]).collect();
    let val_set: Vec<&TrainingSample> = split.validation.iter().map(|&i| samples[i]).collect();
    let mut info = ModelInfo {
        task: Some(task),
        channels: task.input_channels(),
        epochs: 0,
        extra: serde_json::json!({
            "loss": loss,
            "seed": cfg.seed,
            "ranges": training_ranges(&train_set),
            "train_samples": train_set.len(),
            "validation_samples": val_set.len(),
        }),
    };

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(METRICS_FILE), b"")?;
        fs::write(dir.join(TIMING_FILE), b"")?;
    }

    let by_extent = buckets(&train_set, &(0..train_set.len()).collect::<Vec<_>>());
    let unbatched: usize = by_extent.values().filter(|v| v.len() < 2).map(|v| v.len()).sum();
    if unbatched > 0 {
        log::warn!("{unbatched} training samples have a unique extent and are skipped");
    }
    let adam = AdamConfig::default();
    let mut best = store.clone();
    let mut best_val = None::<f64>;
    let mut best_mae = None;
    let mut metrics = Vec::new();
    let mut seconds = Vec::new();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for idx in by_extent.values() {
            if idx.len() < 2 {
                continue;
            }
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            let mut chunks: Vec<Vec<usize>> = idx.chunks(cfg.batch_size).map(|c| c.to_vec()).collect();
            if chunks.len() > 1 && chunks.last().unwrap().len() < 2 {
                let tail = chunks.pop().unwrap();
                chunks.last_mut().unwrap().extend(tail);
            }
            batches.extend(chunks);
        }
        batches.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);

        let mut weighted = 0.0;
        let mut seen = 0usize;
        for (b, batch_idx) in batches.iter().enumerate() {
            let mut items: Vec<&TrainingSample> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let transformed;
            if cfg.augment {
                transformed = items
                    .iter()
                    .map(|s| {
                        let group = SymmetryOp::point_group(&s.geometry()?);
                        augment_all(s, group.choose(&mut rng).expect("identity is always present"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                items = transformed.iter().collect();
            }
            let batch = assemble(&items, &heads)?;
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch: b,
                detail,
            };
            let (outs, tape) = net.forward(&mut store, &batch.input, Mode::Train).map_err(|e| match e {
                Error::NonFinite(m) => diverged(m),
                e => e,
            })?;
            let (l, grads) = loss_and_grads(loss, &outs, &batch.targets)?;
            if !l.is_finite() {
                return Err(diverged(format!("loss {l}")));
            }
            let g = net.backward(&store, &tape, &grads).map_err(|e| diverged(e.to_string()))?;
            store.adam_step(&g.params, lr, &adam).map_err(|e| diverged(e.to_string()))?;
            weighted += l * items.len() as f64;
            seen += items.len();
        }
        let train_loss = weighted / seen.max(1) as f64;
        if cfg.bn_calibration_batches > 0 {
            let inputs = batches
                .iter()
                .take(cfg.bn_calibration_batches)
                .map(|idx| {
                    let items: Vec<&TrainingSample> = idx.iter().map(|&i| train_set[i]).collect();
                    assemble(&items, &heads).map(|b| b.input)
                })
                .collect::<Result<Vec<_>>>()?;
            net.recalibrate(&mut store, &inputs)?;
        }
        let report = evaluate(&net, &store, &val_set, loss)?;
        let improved = best_val.is_none_or(|b| report.loss < b);
        info.epochs = epoch;
        if improved {
            best = store.clone();
            best_val = Some(report.loss);
            best_mae = report.density_mae;
        }
        let row = EpochMetrics {
            epoch,
            train_loss,
            val_loss: report.loss,
            val_heads: report
                .heads
                .iter()
                .map(|h| {
                    (
                        h.name.clone(),
                        match loss {
                            Loss::Mae => h.mae,
                            Loss::Mse => h.mse,
                        },
                    )
                })
                .collect(),
            val_density_mae: report.density_mae,
            best: improved,
        };
        let secs = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train {train_loss:.3e}, validation {:.3e}{} ({secs:.1} s)",
            report.loss,
            if improved { " *" } else { "" }
        );
        if let Some(dir) = out {
            append_jsonl(&dir.join(METRICS_FILE), &row)?;
            append_jsonl(&dir.join(TIMING_FILE), &serde_json::json!({ "epoch": epoch, "seconds": secs }))?;
            if improved {
                checkpoint(dir, BEST_MODEL, &net, &best, &best_info(&info, best_val, best_mae))?;
            }
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint(dir, LAST_MODEL, &net, &store, &info)?;
            }
        }
        metrics.push(row);
        seconds.push(secs);
    }
    if let (None, Some(_)) = (best_val, val_set.first()) {
        let report = evaluate(&net, &store, &val_set, loss)?;
        best_val = Some(report.loss);
        best_mae = report.density_mae;
    }
    let info = best_info(&info, best_val, best_mae);
    if let Some(dir) = out {
        checkpoint(dir, LAST_MODEL, &net, &store, &info)?;
        if cfg.epochs == 0 {
            checkpoint(dir, BEST_MODEL, &net, &best, &info)?;
        }
    }
    Ok(TrainOutcome {
        network: net,
        best,
        last: store,
        best_val_loss: best_val,
        best_density_mae: best_mae,
        metrics,
        seconds,
        split,
        info,
        unbatched,
    })
}

fn best_info(info: &ModelInfo, val: Option<f64>, mae: Option<f64>) -> ModelInfo {
    let mut info = info.clone();
    if let Some(obj) = info.extra.as_object_mut() {
        obj.insert("validation_loss".into(), serde_json::json!(val));
        obj.insert("validation_density_mae".into(), serde_json::json!(mae));
    }
    info
}

/// Reads `cfg.dataset`, trains, and writes checkpoints, `metrics.jsonl`
/// and `timing.jsonl` into `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = read_dataset(&cfg.dataset)?;
    let refs: Vec<&TrainingSample> = data.samples.iter().collect();
    fit(cfg, &refs, Some(&cfg.out_dir))
}

/// Reads a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    write_jsonl(path, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub train: TrainConfig,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    /// Share of the data held out as the fixed test set.
    pub test_fraction: f64,
    /// Scale the epoch count of smaller sizes so every run takes about as many
    /// optimizer steps as the largest one.
    #[serde(default)]
    pub equal_steps: bool,
}

impl CurveConfig {
    /// Epochs used for a training set of `size` when the largest is `largest`.
    pub fn epochs_for(&self, size: usize, largest: usize) -> usize {
        if !self.equal_steps || size == 0 {
            return self.train.epochs;
        }
        (self.train.epochs * largest).div_ceil(size)
    }
}

/// Density test MSE against training-set size. One seeded shuffle fixes a
/// test set and the order of the remaining pool; every size trains on a
/// prefix of that pool, `repeats` times with different seeds.
pub fn learning_curve(cfg: &CurveConfig, samples: &[&TrainingSample]) -> Result<Vec<CurvePoint>> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let split = split_indices(samples.len(), cfg.test_fraction, cfg.train.seed ^ 0x5eed);
    let test: Vec<&TrainingSample> = split.validation.iter().map(|&i| samples[i]).collect();
    let pool: Vec<&TrainingSample> = split.train.iter().map(|&i| samples[i]).collect();
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    if let Some(&s) = sizes.iter().find(|&&s| s > pool.len()) {
        return Err(Error::Config(format!(
            "size {s} exceeds the {} samples left after holding out the test set",
            pool.len()
        )));
    }
    let largest = sizes.last().copied().unwrap_or(0);
    let mut out = Vec::new();
    for &size in &sizes {
        let mut errors = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let mut c = cfg.train.clone();
            c.seed = cfg.train.seed.wrapping_add(r as u64);
            c.epochs = cfg.epochs_for(size, largest);
            let fitted = fit(&c, &pool[..size], None)?;
            let report = evaluate(&fitted.network, &fitted.best, &test, Loss::Mse)?;
            let e = report
                .head("density")
                .map(|h| h.mse)
                .ok_or_else(|| Error::Config("learning curve needs a density head".into()))?;
            log::info!("size {size}, repeat {r}: test density MSE {e:.3e}");
            errors.push(e);
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let std = if errors.len() > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errors.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(CurvePoint { size, mean, std, errors });
    }
    Ok(out)
}

/// Mean test loss of a stored model on a dataset directory.
pub fn evaluate_files(model: &Path, dataset: &Path, loss: Option<Loss>) -> Result<EvalReport> {
    let (net, store, info) = load_model(model)?;
    let data = read_dataset(dataset)?;
    let task = data.manifest.task;
    if let Some(t) = info.task {
        if t != task {
            return Err(Error::Config(format!("model was trained for {t:?}, dataset holds {task:?}")));
        }
    }
    if net.spec().input_channels != task.input_channels().len() {
        return Err(Error::ChannelMismatch {
            expected: net.spec().input_channels,
            got: task.input_channels().len(),
        });
    }
    let refs: Vec<&TrainingSample> = data.samples.iter().collect();
    let default = match task {
        TaskKind::Fermions1d => Loss::Mae,
        TaskKind::Bosons2d => Loss::Mse,
    };
    evaluate(&net, &store, &refs, loss.unwrap_or(default))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let a = split_indices(50, 0.1, 3);
        let b = split_indices(50, 0.1, 3);
        assert_eq!(a, b);
        assert_eq!(a.validation.len(), 5);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_ne!(split_indices(50, 0.1, 4), a);
    }

    #[test]
    fn config_checks() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.validation_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.heads = Some(vec!["density".into(), "nope".into()]);
        assert!(c.head_names(TaskKind::Fermions1d).is_err());
        c.heads = Some(vec!["density".into()]);
        assert_eq!(c.network_spec(TaskKind::Fermions1d).unwrap().heads.len(), 1);
        let mut c = TrainConfig::default();
        c.channels = Some(8);
        c.blocks = Some(2);
        let s = c.network_spec(TaskKind::Bosons2d).unwrap();
        assert_eq!((s.stem_channels, s.body.len(), s.input_channels), (8, 2, 4));
    }
}

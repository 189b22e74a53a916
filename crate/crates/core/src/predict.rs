//! Inference on arbitrary extents, flat-potential phase scans, inversion of
//! target densities and oracle-vs-network timing.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::sampling::boson_params_from_ratios;
use crate::dataset::{white_noise_potential, Interval, TaskKind};
use crate::ed::{grand_canonical_ground, measure_observables, ObservableSet, SolverConfig};
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams, PotentialField};
use crate::nn::{load_model, Mode, ModelInfo, Network, ParameterStore};
use crate::par;
use crate::tensor::Tensor;

/// A trained network with the metadata needed to assemble its inputs.
pub struct Model {
    pub network: Network,
    pub store: ParameterStore,
    pub info: ModelInfo,
    pub task: TaskKind,
}

impl Model {
    pub fn load(path: &Path) -> Result<Model> {
        let (network, store, info) = load_model(path)?;
        Model::new(network, store, info)
    }

    pub fn new(network: Network, store: ParameterStore, info: ModelInfo) -> Result<Model> {
        let task = info
            .task
            .ok_or_else(|| Error::Format("model header does not name its task".into()))?;
        if network.spec().input_channels != task.input_channels().len() || network.spec().dim != task.dim() {
            return Err(Error::ChannelMismatch {
                expected: task.input_channels().len(),
                got: network.spec().input_channels,
            });
        }
        network.check_store(&store)?;
        Ok(Model {
            network,
            store,
            info,
            task,
        })
    }

    /// Value ranges seen in training, keyed by input channel or parameter.
    pub fn ranges(&self) -> BTreeMap<String, [f64; 2]> {
        self.info
            .extra
            .get("ranges")
            .and_then(|r| serde_json::from_value(r.clone()).ok())
            .unwrap_or_default()
    }

    pub fn validation_density_mae(&self) -> Option<f64> {
        self.info.extra.get("validation_density_mae").and_then(|v| v.as_f64())
    }

    fn head_index(&self, name: &str) -> Option<usize> {
        self.network.spec().heads.iter().position(|h| h.name == name)
    }
}

/// Input maps `[channels, extents…]`: `V − μ`, and for 2D also constant `U`,
/// `U′` and the signed checkerboard pattern of `sector`.
pub fn assemble_input(
    task: TaskKind,
    potential: &PotentialField,
    mu: f64,
    params: &ModelParams,
    sector: i8,
) -> Result<Tensor> {
    let geom = potential.geometry();
    if geom.dim() != task.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{}D potential for a {}D model",
            geom.dim(),
            task.dim()
        )));
    }
    let sites = geom.site_count();
    let mut data: Vec<f64> = potential.values().iter().map(|v| v - mu).collect();
    if task == TaskKind::Bosons2d {
        if sector != 1 && sector != -1 {
            return Err(Error::InvalidParams(format!("sector must be ±1, got {sector}")));
        }
        data.extend(std::iter::repeat_n(params.u, sites));
        data.extend(std::iter::repeat_n(params.u_prime.unwrap_or(0.0), sites));
        data.extend(geom.checkerboard_pattern()?.iter().map(|&p| (sector * p) as f64));
    }
    let mut dims = vec![task.input_channels().len()];
    dims.extend(geom.extents());
    Tensor::new(dims, data)
}

fn to_observables(model: &Model, geom: &LatticeGeometry, outs: &[Tensor], item: usize) -> ObservableSet {
    let sites = geom.site_count();
    let head = |name: &str| -> Vec<Vec<f64>> {
        match model.head_index(name) {
            Some(h) => outs[h].outer(item).chunks(sites).map(|c| c.to_vec()).collect(),
            None => Vec::new(),
        }
    };
    ObservableSet {
        geometry: geom.clone(),
        density: head("density").into_iter().next().unwrap_or_default(),
        nn_density_corr: head("nn_density_corr"),
        current: head("current"),
        nn_current_corr: head("nn_current_corr"),
    }
}

/// Network prediction of every head for one potential. Heads the model
/// lacks come back empty.
pub fn predict(
    model: &Model,
    potential: &PotentialField,
    mu: f64,
    params: &ModelParams,
    sector: i8,
) -> Result<ObservableSet> {
    let x = assemble_input(model.task, potential, mu, params, sector)?;
    let mut dims = vec![1];
    dims.extend(x.dims());
    let outs = model.network.infer(&model.store, &Tensor::new(dims, x.into_data())?)?;
    Ok(to_observables(model, potential.geometry(), &outs, 0))
}

fn outside(ranges: &BTreeMap<String, [f64; 2]>, key: &str, v: f64) -> bool {
    ranges
        .get(key)
        .is_some_and(|[lo, hi]| v < lo - 1e-9 * lo.abs().max(1.0) || v > hi + 1e-9 * hi.abs().max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub extents: Vec<usize>,
    pub mu_over_u: Vec<f64>,
    /// Values of `4J/U`.
    pub hopping_ratio: Vec<f64>,
    /// Fixed `4U′/U`.
    pub u_prime_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub mu_over_u: f64,
    pub hopping_ratio: f64,
    /// `max − min` of the retained density map.
    pub order: f64,
    pub sector: i8,
    pub density: Vec<f64>,
    pub order_plus: f64,
    pub order_minus: f64,
    /// Staggered overlap `s·Σ pattern·ρ / sites` of each sector variant.
    pub overlap_plus: f64,
    pub overlap_minus: f64,
    pub out_of_range: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScanResult {
    pub extents: Vec<usize>,
    pub u_prime_ratio: f64,
    pub points: Vec<ScanPoint>,
}

fn spread(d: &[f64]) -> f64 {
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Flat-potential density over a grid of `(μ/U, 4J/U)`. Both sector
/// variants are evaluated; the one with the larger staggered overlap is
/// kept as the scan value.
pub fn phase_scan(model: &Model, cfg: &ScanConfig) -> Result<PhaseScanResult> {
    if model.task != TaskKind::Bosons2d {
        return Err(Error::Config("phase scans need a 2D boson model".into()));
    }
    let geom = LatticeGeometry::new(2, &cfg.extents)?;
    let pattern = geom.checkerboard_pattern()?;
    let sites = geom.site_count() as f64;
    let ranges = model.ranges();
    let grid: Vec<(f64, f64)> = cfg
        .mu_over_u
        .iter()
        .flat_map(|&m| cfg.hopping_ratio.iter().map(move |&h| (m, h)))
        .collect();
    let flat = PotentialField::zeros(geom.clone());
    let points: Vec<Result<ScanPoint>> = par::map_slice(&grid, |&(m, h)| {
        if !(h > 0.0) {
            return Err(Error::InvalidParams(format!("4J/U must be positive, got {h}")));
        }
        let params = boson_params_from_ratios(h, cfg.u_prime_ratio, 1);
        let mu = m * params.u;
        let mut maps = Vec::with_capacity(2);
        for s in [1i8, -1] {
            let obs = predict(model, &flat, mu, &params, s)?;
            let overlap = s as f64 * obs.density.iter().zip(&pattern).map(|(d, &p)| d * p as f64).sum::<f64>() / sites;
            maps.push((obs.density, overlap));
        }
        let (plus, minus) = (&maps[0], &maps[1]);
        let keep_minus = minus.1 > plus.1;
        let (density, sector) = if keep_minus { (minus.0.clone(), -1) } else { (plus.0.clone(), 1) };
        let out_of_range = outside(&ranges, "u", params.u)
            || outside(&ranges, "u_prime", params.u_prime.unwrap_or(0.0))
            || outside(&ranges, "v_minus_mu", -mu);
        Ok(ScanPoint {
            mu_over_u: m,
            hopping_ratio: h,
            order: spread(&density),
            sector,
            density,
            order_plus: spread(&plus.0),
            order_minus: spread(&minus.0),
            overlap_plus: plus.1,
            overlap_minus: minus.1,
            out_of_range,
        })
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    for p in points.iter().filter(|p| p.out_of_range) {
        log::warn!(
            "scan point μ/U = {}, 4J/U = {} lies outside the training ranges",
            p.mu_over_u,
            p.hopping_ratio
        );
    }
    Ok(PhaseScanResult {
        extents: cfg.extents.clone(),
        u_prime_ratio: cfg.u_prime_ratio,
        points,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// `lo + (hi − lo)·σ(z)`.
pub fn latent_to_value(z: f64, bounds: Interval) -> f64 {
    bounds.lo + (bounds.hi - bounds.lo) * sigmoid(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub extents: Vec<usize>,
    /// Target density, row-major over the extents.
    pub target: Vec<f64>,
    pub mu: f64,
    pub params: ModelParams,
    pub sector: i8,
    /// Range of every potential value; defaults to the training range.
    pub bounds: Option<Interval>,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Initial spread around the bound midpoint, as a fraction of the range.
    pub init_noise: f64,
    /// Also optimize `U` and `U′` (2D models) within these bounds.
    pub joint: Option<JointBounds>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointBounds {
    pub u: Interval,
    pub u_prime: Interval,
}

impl InversionConfig {
    pub fn new(extents: Vec<usize>, target: Vec<f64>, mu: f64, params: ModelParams) -> Self {
        Self {
            extents,
            target,
            mu,
            params,
            sector: 1,
            bounds: None,
            steps: 400,
            lr: 0.05,
            restarts: 4,
            seed: 0,
            init_noise: 0.01,
            joint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub potential: Vec<f64>,
    pub density: Vec<f64>,
    pub params: ModelParams,
    pub loss: f64,
    /// Loss of every iterate of the winning restart (entry 0 is the start).
    pub trace: Vec<f64>,
    /// Running minimum of `trace`.
    pub best_trace: Vec<f64>,
    pub restart: usize,
    pub bounds: Interval,
    pub init_noise: f64,
    pub restart_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let c1 = 1.0 - f64::powi(b1, self.t);
        let c2 = 1.0 - f64::powi(b2, self.t);
        for i in 0..x.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

fn check_within(ranges: &BTreeMap<String, [f64; 2]>, key: &str, b: Interval) -> Result<()> {
    if let Some(&[lo, hi]) = ranges.get(key) {
        let slack = 1e-9 * (hi - lo).abs().max(1.0);
        if b.lo < lo - slack || b.hi > hi + slack {
            return Err(Error::Config(format!(
                "{key} bounds [{}, {}] leave the training range [{lo}, {hi}]",
                b.lo, b.hi
            )));
        }
    }
    Ok(())
}

struct Trajectory {
    potential: Vec<f64>,
    params: ModelParams,
    density: Vec<f64>,
    loss: f64,
    trace: Vec<f64>,
}

/// Loss `mean((ρ − target)²)` with its gradient with respect to every input
/// channel, for one potential.
fn density_loss(model: &Model, x: &Tensor, target: &[f64]) -> Result<(f64, Vec<f64>, Tensor)> {
    let h = model
        .head_index("density")
        .ok_or_else(|| Error::Config("model has no density head".into()))?;
    let (outs, tape) = model.network.forward_frozen(&model.store, x, Mode::Eval)?;
    let pred = outs[h].data().to_vec();
    let n = target.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("inversion loss {loss}")));
    }
    let grads: Vec<Tensor> = outs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if i == h {
                let g = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
                Tensor::new(o.dims().to_vec(), g)
            } else {
                Ok(Tensor::zeros(o.dims().to_vec()))
            }
        })
        .collect::<Result<_>>()?;
    let g = model.network.backward(&model.store, &tape, &grads)?;
    Ok((loss, pred, g.input))
}

fn run_restart(model: &Model, cfg: &InversionConfig, geom: &LatticeGeometry, bounds: Interval, r: usize) -> Result<Trajectory> {
    let sites = geom.site_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64);
    let span = bounds.hi - bounds.lo;
    let noise = Normal::new(0.0, (cfg.init_noise * span).max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mid = 0.5 * (bounds.lo + bounds.hi);
    let mut z: Vec<f64> = (0..sites)
        .map(|_| {
            let v = if cfg.init_noise > 0.0 { mid + noise.sample(&mut rng) } else { mid };
            logit((v - bounds.lo) / span)
        })
        .collect();
    let joint = if model.task == TaskKind::Bosons2d { cfg.joint } else { None };
    if joint.is_some() {
        for _ in 0..2 {
            let jitter = if cfg.init_noise > 0.0 { rng.random_range(-cfg.init_noise..cfg.init_noise) } else { 0.0 };
            z.push(logit(0.5 + jitter));
        }
    }
    let decode = |z: &[f64]| {
        let v: Vec<f64> = z[..sites].iter().map(|&zi| latent_to_value(zi, bounds)).collect();
        let mut p = cfg.params;
        if let Some(j) = joint {
            p.u = latent_to_value(z[sites], j.u);
            p.u_prime = Some(latent_to_value(z[sites + 1], j.u_prime));
        }
        (v, p)
    };
    let mut adam = Adam::new(z.len());
    let mut best: Option<Trajectory> = None;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (v, p) = decode(&z);
        debug_assert!(v.iter().all(|x| *x >= bounds.lo && *x <= bounds.hi));
        let field = PotentialField::new(geom.clone(), v.clone())?;
        let x = assemble_input(model.task, &field, cfg.mu, &p, cfg.sector)?;
        let mut dims = vec![1];
        dims.extend(x.dims());
        let x = Tensor::new(dims, x.into_data())?;
        let (loss, pred, gin) = density_loss(model, &x, &cfg.target)?;
        trace.push(loss);
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            best = Some(Trajectory {
                potential: v,
                params: p,
                density: pred,
                loss,
                trace: Vec::new(),
            });
        }
        if step == cfg.steps {
            break;
        }
        let gi = gin.data();
        let mut gz: Vec<f64> = (0..sites)
            .map(|i| {
                let s = sigmoid(z[i]);
                gi[i] * span * s * (1.0 - s)
            })
            .collect();
        if let Some(j) = joint {
            for (k, b) in [j.u, j.u_prime].into_iter().enumerate() {
                let s = sigmoid(z[sites + k]);
                let ch: f64 = gi[(k + 1) * sites..(k + 2) * sites].iter().sum();
                gz.push(ch * (b.hi - b.lo) * s * (1.0 - s));
            }
        }
        adam.step(&mut z, &gz, cfg.lr);
    }
    let mut best = best.expect("at least the initial iterate");
    best.trace = trace;
    Ok(best)
}

/// Gradient descent on sigmoid latents `V = lo + (hi − lo)·σ(z)` so that the
/// predicted density approaches `cfg.target`. Restarts run from seeded
/// perturbations of the bound midpoint; the lowest-loss iterate wins.
pub fn invert(model: &Model, cfg: &InversionConfig) -> Result<InversionResult> {
    let geom = LatticeGeometry::new(model.task.dim(), &cfg.extents)?;
    if cfg.target.len() != geom.site_count() {
        return Err(Error::DimensionMismatch {
            expected: geom.site_count(),
            got: cfg.target.len(),
        });
    }
    if cfg.target.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("target density".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.init_noise >= 0.0) {
        return Err(Error::Config("lr must be positive and init_noise non-negative".into()));
    }
    let ranges = model.ranges();
    let bounds = match cfg.bounds {
        Some(b) => b,
        None => {
            let [lo, hi] = ranges
                .get("potential")
                .copied()
                .ok_or_else(|| Error::Config("model records no potential range; give bounds".into()))?;
            Interval { lo, hi }
        }
    };
    bounds.validate("potential bounds")?;
    check_within(&ranges, "potential", bounds)?;
    if let Some(j) = cfg.joint {
        j.u.validate("U bounds")?;
        j.u_prime.validate("U' bounds")?;
        check_within(&ranges, "u", j.u)?;
        check_within(&ranges, "u_prime", j.u_prime)?;
    }
    let runs: Vec<Result<Trajectory>> = par::map_indexed(cfg.restarts, |r| run_restart(model, cfg, &geom, bounds, r));
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let restart_losses: Vec<f64> = runs.iter().map(|t| t.loss).collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let mut running = f64::INFINITY;
    let best_trace = best
        .trace
        .iter()
        .map(|&l| {
            running = running.min(l);
            running
        })
        .collect();
    Ok(InversionResult {
        potential: best.potential,
        density: best.density,
        params: best.params,
        loss: best.loss,
        trace: best.trace,
        best_trace,
        restart,
        bounds,
        init_noise: cfg.init_noise,
        restart_losses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Extents timed for both the oracle and the network.
    pub extents: Vec<usize>,
    /// Extra extents timed for the network only.
    pub nn_only: Vec<usize>,
    pub repeats: usize,
    pub params: ModelParams,
    pub mu: f64,
    pub v_max: f64,
    pub seed: u64,
    /// Oracle sectors above this size are reported as absent.
    pub sector_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub extent: usize,
    pub oracle_seconds: Option<f64>,
    pub nn_seconds: Option<f64>,
    pub ratio: Option<f64>,
    pub repeats: usize,
    pub low_confidence: bool,
    pub oracle_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub workers: usize,
    pub parallel: bool,
    pub network: String,
    pub protocol: String,
}

impl BenchReport {
    pub fn row(&self, extent: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.extent == extent)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn timed<T>(warmup: bool, repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    if warmup {
        f()?;
    }
    let mut ts = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        ts.push(t.elapsed().as_secs_f64());
    }
    Ok(median(ts))
}

fn bench_geometry(task: TaskKind, l: usize) -> Result<LatticeGeometry> {
    match task {
        TaskKind::Fermions1d => LatticeGeometry::chain(l),
        TaskKind::Bosons2d => LatticeGeometry::square(l, l),
    }
}

/// Median wall-clock of the grand-canonical ED oracle and of single-item
/// network inference on the same random potential, per extent. One warm-up
/// call precedes the measured repeats.
pub fn benchmark(model: &Model, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let solver = SolverConfig {
        sector_cap: cfg.sector_cap,
        ..SolverConfig::default()
    };
    let mut all: Vec<(usize, bool)> = cfg.extents.iter().map(|&l| (l, true)).collect();
    all.extend(cfg.nn_only.iter().filter(|l| !cfg.extents.contains(l)).map(|&l| (l, false)));
    let mut rows = Vec::new();
    for (l, with_oracle) in all {
        let geom = bench_geometry(model.task, l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ l as u64);
        let v = white_noise_potential(&mut rng, &geom, cfg.v_max)?;
        let (oracle, oracle_error) = if with_oracle {
            match timed(true, cfg.repeats, || {
                let gc = grand_canonical_ground(&cfg.params, &v, cfg.mu, &solver)?;
                measure_observables(&gc.state, &gc.basis, &cfg.params)
            }) {
                Ok(t) => (Some(t), None),
                Err(e) => {
                    log::warn!("oracle at extent {l} unavailable: {e}");
                    (None, Some(e.to_string()))
                }
            }
        } else {
            (None, None)
        };
        let nn = timed(true, cfg.repeats, || predict(model, &v, cfg.mu, &cfg.params, 1))?;
        rows.push(BenchRow {
            extent: l,
            oracle_seconds: oracle,
            nn_seconds: Some(nn),
            ratio: oracle.map(|o| o / nn),
            repeats: cfg.repeats,
            low_confidence: cfg.repeats < 5,
            oracle_error,
        });
    }
    rows.sort_by_key(|r| r.extent);
    let spec = model.network.spec();
    Ok(BenchReport {
        rows,
        workers: par::workers(),
        parallel: par::is_parallel(),
        network: format!(
            "{}D, {} blocks of {} channels",
            spec.dim,
            spec.body.len(),
            spec.trunk_channels()
        ),
        protocol: format!("median of {} repeats after 1 warm-up, batch 1", cfg.repeats),
    })
}

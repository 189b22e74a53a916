//! Seeded, index-addressable sample generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::format::{DatasetWriter, FailureRecord, Manifest};
use crate::dataset::potentials::{colored_noise_potential, white_noise_potential, ColoredNoiseConfig};
use crate::dataset::sampling::{checkerboard_channel, sample_model_params, BosonRanges};
use crate::dataset::{round_preserving_sum, targets_from_observables, SampleMeta, TaskKind, TrainingSample};
use crate::ed::{
    build_basis, energy_scan, grand_canonical_ground, ground_state, measure_observables,
    sample_chemical_potential, EnergyTable, SolverConfig, DEFAULT_SECTOR_CAP,
};
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams, PotentialField};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PotentialConfig {
    /// Uniform i.i.d. values on `[-v_max, v_max]`.
    White { v_max: f64 },
    /// Colored noise with amplitude `A` drawn uniformly from
    /// `[0, amplitude_per_mu·|μ|]`.
    Colored { k_c: f64, amplitude_per_mu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub task: TaskKind,
    pub count: usize,
    pub seed: u64,
    /// Candidate lattice extents, drawn uniformly per sample.
    pub extents: Vec<Vec<usize>>,
    /// Occupation cap for bosons.
    pub n_max: u8,
    /// Fixed couplings of the fermion chain.
    pub j: f64,
    pub u: f64,
    pub boson_ranges: BosonRanges,
    pub potential: PotentialConfig,
    /// Redraws allowed per index after a degenerate or failed solve.
    pub max_retries: u32,
    pub sector_cap: usize,
}

impl GenConfig {
    pub fn fermions_1d() -> Self {
        Self {
            task: TaskKind::Fermions1d,
            count: 1000,
            seed: 0,
            extents: (5..=12).map(|l| vec![l]).collect(),
            n_max: 1,
            j: 1.0,
            u: 1.5,
            boson_ranges: BosonRanges::default(),
            potential: PotentialConfig::White { v_max: 12.0 },
            max_retries: 20,
            sector_cap: DEFAULT_SECTOR_CAP,
        }
    }

    pub fn bosons_2d() -> Self {
        Self {
            task: TaskKind::Bosons2d,
            count: 1000,
            seed: 0,
            extents: vec![vec![4, 4]],
            n_max: 1,
            j: 1.0,
            u: 0.0,
            boson_ranges: BosonRanges::default(),
            potential: PotentialConfig::Colored {
                k_c: ColoredNoiseConfig::DEFAULT_K_C,
                amplitude_per_mu: 0.5,
            },
            max_retries: 20,
            sector_cap: DEFAULT_SECTOR_CAP,
        }
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Fermions1d => Self::fermions_1d(),
            TaskKind::Bosons2d => Self::bosons_2d(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.is_empty() {
            return Err(Error::Config("no lattice extents given".into()));
        }
        for ext in &self.extents {
            let g = LatticeGeometry::new(self.task.dim(), ext)?;
            if self.task == TaskKind::Fermions1d && g.site_count() < 3 {
                return Err(Error::Config(format!(
                    "chains need at least 3 sites for N-1, N, N+1 sectors, got {ext:?}"
                )));
            }
            if self.task == TaskKind::Bosons2d && !g.has_even_extents() {
                return Err(Error::OddExtent(ext.clone()));
            }
        }
        match (self.task, &self.potential) {
            (TaskKind::Fermions1d, PotentialConfig::White { v_max }) if *v_max > 0.0 => {}
            (TaskKind::Bosons2d, PotentialConfig::Colored { k_c, amplitude_per_mu })
                if *k_c > 0.0 && *amplitude_per_mu >= 0.0 => {}
            (TaskKind::Bosons2d, PotentialConfig::White { v_max }) if *v_max > 0.0 => {}
            (_, p) => {
                return Err(Error::Config(format!(
                    "potential {p:?} is not valid for task {:?}",
                    self.task
                )))
            }
        }
        match self.task {
            TaskKind::Fermions1d => ModelParams::fermions(self.j, self.u)
                .validate(&LatticeGeometry::chain(self.extents[0][0])?)?,
            TaskKind::Bosons2d => {
                self.boson_ranges.validate()?;
                if self.n_max == 0 {
                    return Err(Error::Config("n_max must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            sector_cap: self.sector_cap,
            ..SolverConfig::default()
        }
    }

    /// Generator for sample `index`: seeded by `seed`, one stream per index.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

fn pick_geometry<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<LatticeGeometry> {
    let ext = &cfg.extents[rng.random_range(0..cfg.extents.len())];
    LatticeGeometry::new(cfg.task.dim(), ext)
}

fn shifted_channel(v: &PotentialField, mu: f64) -> Vec<f64> {
    v.values().iter().map(|x| (x - mu) as f32 as f64).collect()
}

fn finish_targets(task: TaskKind, obs: &crate::ed::ObservableSet, n: usize) -> Result<Tensor> {
    let mut t = targets_from_observables(task, obs)?;
    t.round_to_f32();
    let sites = obs.density.len();
    let density = round_preserving_sum(&obs.density, n as f64);
    t.data_mut()[..sites].copy_from_slice(&density);
    Ok(t)
}

fn draw_fermions(cfg: &GenConfig, rng: &mut ChaCha8Rng, index: u64, retries: u32) -> Result<TrainingSample> {
    let geom = pick_geometry(cfg, rng)?;
    let l = geom.site_count();
    let PotentialConfig::White { v_max } = cfg.potential else {
        return Err(Error::Config("fermion data uses white noise".into()));
    };
    let v = white_noise_potential(rng, &geom, v_max)?;
    let n = rng.random_range(1..l);
    let params = ModelParams::fermions(cfg.j, cfg.u);
    let solver = cfg.solver();
    let basis = build_basis(&geom, n, params.statistics, params.n_max, solver.sector_cap)?;
    let gs = ground_state(&params, &v, &basis, &solver)?;
    if gs.degenerate {
        return Err(Error::DegenerateGroundState { gap: gs.gap });
    }
    let below = energy_scan(&params, &v, n - 1..=n - 1, &solver)?.energies[0];
    let above = energy_scan(&params, &v, n + 1..=n + 1, &solver)?.energies[0];
    let table = EnergyTable {
        n_min: n - 1,
        energies: vec![below, gs.energy, above],
    };
    let mu = sample_chemical_potential(&table, n, rng)?;
    let obs = measure_observables(&gs, &basis, &params)?;
    Ok(TrainingSample {
        inputs: Tensor::new(vec![1, l], shifted_channel(&v, mu.mu))?,
        targets: finish_targets(cfg.task, &obs, n)?,
        meta: SampleMeta {
            task: cfg.task,
            index,
            seed: cfg.seed,
            extents: geom.extents().to_vec(),
            params,
            mu: mu.mu,
            particles: n,
            potential: v.into_values(),
            sector: None,
            retries,
            mu_flagged: mu.flagged,
        },
    })
}

fn draw_bosons(cfg: &GenConfig, rng: &mut ChaCha8Rng, index: u64, retries: u32) -> Result<TrainingSample> {
    let geom = pick_geometry(cfg, rng)?;
    let (params, mu) = sample_model_params(rng, &cfg.boson_ranges, cfg.n_max)?;
    let v = match cfg.potential {
        PotentialConfig::Colored { k_c, amplitude_per_mu } => {
            let top = amplitude_per_mu * mu.abs();
            let a = if top > 0.0 { rng.random_range(0.0..=top) } else { 0.0 };
            colored_noise_potential(rng, &geom, &ColoredNoiseConfig::new(k_c, a)?)?
        }
        PotentialConfig::White { v_max } => white_noise_potential(rng, &geom, v_max)?,
    };
    let gc = grand_canonical_ground(&params, &v, mu, &cfg.solver())?;
    if gc.tie {
        return Err(Error::DegenerateGroundState { gap: 0.0 });
    }
    if gc.state.degenerate {
        return Err(Error::DegenerateGroundState { gap: gc.state.gap });
    }
    let obs = measure_observables(&gc.state, &gc.basis, &params)?;
    let (sector, pattern) = checkerboard_channel(&obs.density, &geom)?;
    let sites = geom.site_count();
    let mut inputs = shifted_channel(&v, mu);
    inputs.extend(std::iter::repeat_n(params.u as f32 as f64, sites));
    inputs.extend(std::iter::repeat_n(params.u_prime.unwrap_or(0.0) as f32 as f64, sites));
    inputs.extend(pattern);
    let mut dims = vec![4];
    dims.extend(geom.extents());
    Ok(TrainingSample {
        inputs: Tensor::new(dims, inputs)?,
        targets: finish_targets(cfg.task, &obs, gc.particles)?,
        meta: SampleMeta {
            task: cfg.task,
            index,
            seed: cfg.seed,
            extents: geom.extents().to_vec(),
            params,
            mu,
            particles: gc.particles,
            potential: v.into_values(),
            sector: Some(sector),
            retries,
            mu_flagged: false,
        },
    })
}

/// Generates sample `index`: a pure function of `(cfg, index)`. Degenerate
/// or failed draws are redrawn from the same stream up to `max_retries`.
pub fn generate_sample(cfg: &GenConfig, index: u64) -> std::result::Result<TrainingSample, FailureRecord> {
    let mut rng = cfg.rng_for(index);
    let mut reason = String::new();
    for attempt in 0..=cfg.max_retries {
        let drawn = match cfg.task {
            TaskKind::Fermions1d => draw_fermions(cfg, &mut rng, index, attempt),
            TaskKind::Bosons2d => draw_bosons(cfg, &mut rng, index, attempt),
        };
        match drawn {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::debug!("sample {index}, attempt {attempt}: {e}");
                reason = e.to_string();
            }
        }
    }
    Err(FailureRecord {
        index,
        attempts: cfg.max_retries + 1,
        reason,
    })
}

const BLOCK: usize = 64;

/// Generates `cfg.count` samples into `dir`, in index order.
pub fn generate_dataset(cfg: &GenConfig, dir: &Path) -> Result<Manifest> {
    generate_dataset_with(cfg, dir, |_, _| {})
}

/// As [`generate_dataset`], calling `progress(done, total)` after each block.
pub fn generate_dataset_with(
    cfg: &GenConfig,
    dir: &Path,
    mut progress: impl FnMut(usize, usize),
) -> Result<Manifest> {
    cfg.validate()?;
    let mut writer = DatasetWriter::create(dir, Manifest::new(cfg))?;
    let mut start = 0;
    while start < cfg.count {
        let n = BLOCK.min(cfg.count - start);
        let block = par::map_indexed(n, |i| generate_sample(cfg, (start + i) as u64));
        for r in block {
            match r {
                Ok(s) => {
                    writer.manifest_mut().retries += s.meta.retries as u64;
                    writer.push(&s)?;
                }
                Err(f) => {
                    log::warn!("sample {} skipped after {} attempts: {}", f.index, f.attempts, f.reason);
                    writer.manifest_mut().failures.push(f);
                }
            }
        }
        start += n;
        progress(start, cfg.count);
    }
    writer.finish()
}

//! Training data: random potentials, parameter draws, symmetry augmentation
//! and the on-disk dataset format.

pub mod augment;
pub mod format;
pub mod generate;
pub mod potentials;
pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::ed::ObservableSet;
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams};
use crate::tensor::Tensor;

pub use augment::{augment, SymmetryOp};
pub use format::{read_dataset, Dataset, DatasetWriter, Manifest};
pub use generate::{generate_dataset, generate_sample, GenConfig, PotentialConfig};
pub use potentials::{colored_noise_potential, white_noise_potential, ColoredNoiseConfig};
pub use sampling::{checkerboard_channel, sample_model_params, BosonRanges, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Spinless fermion chains, canonical ensemble.
    Fermions1d,
    /// Extended Bose-Hubbard model on square lattices, grand canonical.
    Bosons2d,
}

/// How a map transforms under lattice symmetries. Direction-resolved kinds
/// carry one channel per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Lives on sites.
    Site,
    /// Undirected quantity on the bond `x -> x + e_a`.
    Bond,
    /// Directed flow on the bond `x - e_a -> x`.
    Current,
    /// Product of the two directed bonds meeting at `x` along `a`.
    CurrentPair,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub name: String,
    pub kind: MapKind,
    pub channels: usize,
}

impl TaskKind {
    pub fn dim(self) -> usize {
        match self {
            TaskKind::Fermions1d => 1,
            TaskKind::Bosons2d => 2,
        }
    }

    pub fn input_channels(self) -> Vec<String> {
        let names: &[&str] = match self {
            TaskKind::Fermions1d => &["v_minus_mu"],
            TaskKind::Bosons2d => &["v_minus_mu", "u", "u_prime", "sector"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn heads(self) -> Vec<HeadInfo> {
        let d = self.dim();
        let head = |name: &str, kind, channels| HeadInfo {
            name: name.into(),
            kind,
            channels,
        };
        match self {
            TaskKind::Fermions1d => vec![
                head("density", MapKind::Site, 1),
                head("nn_density_corr", MapKind::Bond, d),
                head("current", MapKind::Current, d),
                head("nn_current_corr", MapKind::CurrentPair, d),
            ],
            TaskKind::Bosons2d => vec![head("density", MapKind::Site, 1)],
        }
    }

    pub fn target_channels(self) -> usize {
        self.heads().iter().map(|h| h.channels).sum()
    }
}

/// Everything needed to reproduce and audit one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub task: TaskKind,
    pub index: u64,
    pub seed: u64,
    pub extents: Vec<usize>,
    pub params: ModelParams,
    pub mu: f64,
    pub particles: usize,
    pub potential: Vec<f64>,
    /// Sign `s` of the checkerboard channel (2D only).
    pub sector: Option<i8>,
    /// Draws discarded before this one (degenerate or failed solves).
    pub retries: u32,
    /// The μ interval was empty and its midpoint was used.
    pub mu_flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub meta: SampleMeta,
    /// `[channels, extents…]`.
    pub inputs: Tensor,
    /// Head maps stacked along the leading axis in head order.
    pub targets: Tensor,
}

impl TrainingSample {
    pub fn geometry(&self) -> Result<LatticeGeometry> {
        LatticeGeometry::new(self.meta.extents.len(), &self.meta.extents)
    }

    /// Slice of the target tensor holding the named head.
    pub fn head(&self, name: &str) -> Option<Vec<f64>> {
        let sites: usize = self.meta.extents.iter().product();
        let mut offset = 0;
        for h in self.meta.task.heads() {
            if h.name == name {
                return Some(self.targets.data()[offset * sites..(offset + h.channels) * sites].to_vec());
            }
            offset += h.channels;
        }
        None
    }

    /// Checks the structural invariants: shared extents, constant parameter
    /// channels, ±1 sector channel and the exact `V − μ` channel.
    pub fn validate(&self) -> Result<()> {
        let task = self.meta.task;
        let sites: usize = self.meta.extents.iter().product();
        let mut want_in = vec![task.input_channels().len()];
        want_in.extend(&self.meta.extents);
        let mut want_out = vec![task.target_channels()];
        want_out.extend(&self.meta.extents);
        if self.inputs.dims() != want_in.as_slice() || self.targets.dims() != want_out.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has inputs {:?} and targets {:?} for extents {:?}",
                self.meta.index,
                self.inputs.dims(),
                self.targets.dims(),
                self.meta.extents
            )));
        }
        if self.meta.potential.len() != sites {
            return Err(Error::ShapeMismatch("potential length differs from extents".into()));
        }
        let shifted = self.inputs.outer(0);
        for (x, (&c, &v)) in shifted.iter().zip(&self.meta.potential).enumerate() {
            if c != (v - self.meta.mu) as f32 as f64 {
                return Err(Error::Format(format!(
                    "sample {}: V - mu channel differs at site {x}",
                    self.meta.index
                )));
            }
        }
        if task == TaskKind::Bosons2d {
            for ch in 1..3 {
                let m = self.inputs.outer(ch);
                if m.iter().any(|&x| x != m[0]) {
                    return Err(Error::Format(format!(
                        "sample {}: parameter channel {ch} is not constant",
                        self.meta.index
                    )));
                }
            }
            if self.inputs.outer(3).iter().any(|&x| x != 1.0 && x != -1.0) {
                return Err(Error::Format(format!(
                    "sample {}: sector channel outside {{-1, +1}}",
                    self.meta.index
                )));
            }
        }
        self.inputs.check_finite("inputs")?;
        self.targets.check_finite("targets")
    }
}

/// Stacks observable maps into the task's target layout.
pub fn targets_from_observables(task: TaskKind, obs: &ObservableSet) -> Result<Tensor> {
    let mut dims = vec![task.target_channels()];
    dims.extend(obs.geometry.extents());
    let mut data = obs.density.clone();
    if task == TaskKind::Fermions1d {
        for maps in [&obs.nn_density_corr, &obs.current, &obs.nn_current_corr] {
            for m in maps {
                data.extend_from_slice(m);
            }
        }
    }
    Tensor::new(dims, data)
}

/// Rounds `values` to `f32` while keeping their sum as close to `total` as
/// the rounding grid allows. Values start on one of the two `f32` neighbors
/// bracketing them; a residual finer than those choices is then absorbed by
/// the values with the coarsest grid that still resolves it.
pub fn round_preserving_sum(values: &[f64], total: f64) -> Vec<f64> {
    let floors: Vec<f64> = values
        .iter()
        .map(|&x| {
            let r = x as f32;
            if (r as f64) <= x { r as f64 } else { r.next_down() as f64 }
        })
        .collect();
    let steps: Vec<f64> = floors
        .iter()
        .zip(values)
        .map(|(&f, &x)| if f == x { 0.0 } else { (f as f32).next_up() as f64 - f })
        .collect();
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| steps[i] > 0.0).collect();
    order.sort_by(|&a, &b| steps[b].total_cmp(&steps[a]).then(a.cmp(&b)));
    let mut out = floors;
    let mut deficit = total - out.iter().sum::<f64>();
    for i in order {
        if steps[i] <= deficit {
            out[i] += steps[i];
            deficit -= steps[i];
        }
    }
    let mut used = vec![false; out.len()];
    for _ in 0..out.len() {
        let residual = total - out.iter().sum::<f64>();
        if residual == 0.0 {
            break;
        }
        let ulp = |v: f64| {
            let f = v as f32;
            if residual > 0.0 { f.next_up() as f64 - v } else { v - f.next_down() as f64 }
        };
        let pick = (0..out.len())
            .filter(|&i| !used[i] && ulp(out[i]) <= residual.abs())
            .max_by(|&a, &b| ulp(out[a]).total_cmp(&ulp(out[b])).then(b.cmp(&a)));
        let Some(i) = pick else { break };
        let target = out[i] + residual;
        let mut r = target as f32;
        if (r as f64 - target) * residual.signum() > 0.0 {
            r = if residual > 0.0 { r.next_down() } else { r.next_up() };
        }
        out[i] = r as f64;
        used[i] = true;
    }
    out
}

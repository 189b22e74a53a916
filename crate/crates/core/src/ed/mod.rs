//! Exact diagonalization of the spinless-fermion chain with nearest-neighbor
//! interaction and of the occupancy-capped extended Bose–Hubbard model.
//!
//! [`SectorHamiltonian`] keeps the hopping part in compressed rows when it
//! fits, and otherwise enumerates hops from each basis configuration on every
//! application. [`lanczos`] extracts the lowest eigenpair.

mod basis;
mod hamiltonian;
pub mod lanczos;
mod observables;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use basis::{sector_dimension, SectorBasis};
pub use hamiltonian::{apply_hamiltonian, hop, LinearOperator, SectorHamiltonian};
pub use lanczos::{Eigenpair, LanczosConfig};
pub use observables::{measure_observables, ObservableSet};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams, PotentialField, Statistics};
use crate::par;

/// Default cap on the number of configurations in one sector.
pub const DEFAULT_SECTOR_CAP: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lanczos: LanczosConfig,
    pub sector_cap: usize,
    /// Ground states whose gap to the next level is below this are flagged.
    pub degeneracy_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lanczos: LanczosConfig::default(),
            sector_cap: DEFAULT_SECTOR_CAP,
            degeneracy_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub amplitudes: Vec<f64>,
    pub degenerate: bool,
    /// Distance to the next eigenvalue in the sector (infinite for 1-dim sectors).
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn build_basis(
    geom: &LatticeGeometry,
    particles: usize,
    statistics: Statistics,
    n_max: u8,
    cap: usize,
) -> Result<SectorBasis> {
    SectorBasis::new(geom, particles, statistics, n_max, cap)
}

fn basis_for(params: &ModelParams, geom: &LatticeGeometry, n: usize, cfg: &SolverConfig) -> Result<SectorBasis> {
    SectorBasis::new(geom, n, params.statistics, params.n_max, cfg.sector_cap)
}

/// Lowest eigenpair of the sector Hamiltonian, without the degeneracy check.
pub fn ground_pair(
    params: &ModelParams,
    potential: &PotentialField,
    basis: &SectorBasis,
    cfg: &SolverConfig,
) -> Result<Eigenpair> {
    if basis.is_empty() {
        return Err(Error::InvalidParams("empty sector".into()));
    }
    let h = SectorHamiltonian::new(params, potential, basis)?;
    lanczos::lowest_eigenpair(&h, &cfg.lanczos, &[])
}

fn with_gap(
    params: &ModelParams,
    potential: &PotentialField,
    basis: &SectorBasis,
    pair: Eigenpair,
    cfg: &SolverConfig,
) -> Result<GroundState> {
    let gap = if basis.len() == 1 {
        f64::INFINITY
    } else {
        let h = SectorHamiltonian::new(params, potential, basis)?;
        let tol = cfg.lanczos.tol.max(1e-7);
        let (e1, _) = lanczos::lowest_ritz_value(&h, tol, cfg.lanczos.max_iter, &[&pair.vector])?;
        e1 - pair.value
    };
    Ok(GroundState {
        energy: pair.value,
        amplitudes: pair.vector,
        degenerate: gap < cfg.degeneracy_tol,
        gap,
        residual: pair.residual,
        iterations: pair.iterations,
    })
}

/// Ground state of one sector, with the second level computed by a deflated
/// Lanczos run to detect degeneracy.
pub fn ground_state(
    params: &ModelParams,
    potential: &PotentialField,
    basis: &SectorBasis,
    cfg: &SolverConfig,
) -> Result<GroundState> {
    let pair = ground_pair(params, potential, basis, cfg)?;
    with_gap(params, potential, basis, pair, cfg)
}

/// Ground energies `E(N)` over a contiguous range of particle numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub n_min: usize,
    pub energies: Vec<f64>,
}

impl EnergyTable {
    pub fn get(&self, n: usize) -> Option<f64> {
        n.checked_sub(self.n_min)
            .and_then(|i| self.energies.get(i).copied())
    }

    pub fn n_max(&self) -> usize {
        self.n_min + self.energies.len() - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.energies
            .iter()
            .enumerate()
            .map(move |(i, &e)| (self.n_min + i, e))
    }
}

pub fn energy_scan(
    params: &ModelParams,
    potential: &PotentialField,
    n_range: std::ops::RangeInclusive<usize>,
    cfg: &SolverConfig,
) -> Result<EnergyTable> {
    let geom = potential.geometry();
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if hi < lo {
        return Err(Error::InvalidParams(format!("empty particle-number range {lo}..={hi}")));
    }
    let energies: Vec<Result<f64>> = par::map_indexed(hi - lo + 1, |i| {
        let n = lo + i;
        basis_for(params, geom, n, cfg)
            .and_then(|b| ground_pair(params, potential, &b, cfg))
            .map(|p| p.value)
            .map_err(|e| Error::Sector { n, source: Box::new(e) })
    });
    Ok(EnergyTable {
        n_min: lo,
        energies: energies.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSample {
    pub mu: f64,
    pub lower: f64,
    pub upper: f64,
    /// Set when `E(N)` is locally non-convex and the midpoint was used.
    pub flagged: bool,
}

/// Draws μ uniformly from `[E(N) − E(N−1), E(N+1) − E(N)]`.
pub fn sample_chemical_potential<R: Rng + ?Sized>(
    table: &EnergyTable,
    n: usize,
    rng: &mut R,
) -> Result<MuSample> {
    let below = n.checked_sub(1).ok_or(Error::MissingEnergy(0))?;
    let e_lo = table.get(below).ok_or(Error::MissingEnergy(below))?;
    let e = table.get(n).ok_or(Error::MissingEnergy(n))?;
    let e_hi = table.get(n + 1).ok_or(Error::MissingEnergy(n + 1))?;
    let lower = e - e_lo;
    let upper = e_hi - e;
    let (mu, flagged) = if lower < upper {
        (rng.random_range(lower..upper), false)
    } else if lower == upper {
        (lower, false)
    } else {
        (0.5 * (lower + upper), true)
    };
    Ok(MuSample {
        mu,
        lower,
        upper,
        flagged,
    })
}

#[derive(Clone, Debug)]
pub struct GrandCanonical {
    pub particles: usize,
    pub state: GroundState,
    pub basis: SectorBasis,
    pub energies: EnergyTable,
    /// `E(N*) − μN*`.
    pub grand_energy: f64,
    /// Another sector reached the same grand energy; the smaller N was kept.
    pub tie: bool,
}

/// Zero-temperature grand-canonical ground state: scans every particle
/// number `0..=n_max·sites` and keeps the one minimizing `E(N) − μN`.
pub fn grand_canonical_ground(
    params: &ModelParams,
    potential: &PotentialField,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<GrandCanonical> {
    if !mu.is_finite() {
        return Err(Error::NonFinite(format!("chemical potential {mu}")));
    }
    let geom = potential.geometry();
    params.validate(geom)?;
    let n_top = params.n_max as usize * geom.site_count();
    for n in 0..=n_top {
        let size = sector_dimension(geom.site_count(), n, params.n_max);
        if size > cfg.sector_cap as u128 {
            return Err(Error::SectorTooLarge {
                size,
                cap: cfg.sector_cap,
            });
        }
    }
    let sectors: Vec<Result<(SectorBasis, Eigenpair)>> = par::map_indexed(n_top + 1, |n| {
        let b = basis_for(params, geom, n, cfg)?;
        let p = ground_pair(params, potential, &b, cfg)?;
        Ok((b, p))
    })
    .into_iter()
    .enumerate()
    .map(|(n, r)| r.map_err(|e| Error::Sector { n, source: Box::new(e) }))
    .collect();
    let mut sectors: Vec<(SectorBasis, Eigenpair)> = sectors.into_iter().collect::<Result<_>>()?;

    let omega: Vec<f64> = sectors
        .iter()
        .enumerate()
        .map(|(n, (_, p))| p.value - mu * n as f64)
        .collect();
    let best = omega
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(n, _)| n)
        .expect("at least the vacuum sector");
    let scale = omega.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tie = omega
        .iter()
        .enumerate()
        .any(|(n, &w)| n != best && (w - omega[best]).abs() <= 1e-12 * scale);

    let energies = EnergyTable {
        n_min: 0,
        energies: sectors.iter().map(|(_, p)| p.value).collect(),
    };
    let (basis, pair) = sectors.swap_remove(best);
    let state = with_gap(params, potential, &basis, pair, cfg)?;
    Ok(GrandCanonical {
        particles: best,
        grand_energy: omega[best],
        state,
        basis,
        energies,
        tie,
    })
}

/// Canonical solve at fixed N: ground state plus observables.
pub fn solve_sector(
    params: &ModelParams,
    potential: &PotentialField,
    n: usize,
    cfg: &SolverConfig,
) -> Result<(GroundState, ObservableSet)> {
    let basis = basis_for(params, potential.geometry(), n, cfg)?;
    let state = ground_state(params, potential, &basis, cfg)?;
    let obs = measure_observables(&state, &basis, params)?;
    Ok((state, obs))
}

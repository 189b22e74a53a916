//! Side-by-side densities from exact diagonalization, Hartree-Fock and a
//! trained network on one potential.

use serde::{Deserialize, Serialize};

use crate::ed::{energy_scan, grand_canonical_ground, measure_observables, solve_sector, SolverConfig};
use crate::error::{Error, Result};
use crate::hf::{hf_solve, HfConfig};
use crate::lattice::{ModelParams, PotentialField, Statistics};
use crate::predict::{predict, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filling {
    /// Fixed particle number; the network gets μ at the middle of the
    /// addition/removal gap.
    Canonical(usize),
    /// Fixed chemical potential, grand-canonical ED.
    Grand(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub extents: Vec<usize>,
    pub particles: usize,
    pub mu: Option<f64>,
    pub mu_interval: Option<[f64; 2]>,
    pub ed_energy: f64,
    pub ed_density: Vec<f64>,
    pub hf_energy: Option<f64>,
    pub hf_density: Option<Vec<f64>>,
    pub nn_density: Option<Vec<f64>>,
    pub hf_mae: Option<f64>,
    pub hf_max_abs: Option<f64>,
    pub nn_mae: Option<f64>,
    pub nn_max_abs: Option<f64>,
}

fn errors(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mae = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64;
    let max = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (mae, max)
}

pub fn compare(
    model: Option<&Model>,
    potential: &PotentialField,
    params: &ModelParams,
    filling: Filling,
    solver: &SolverConfig,
) -> Result<CompareReport> {
    let geom = potential.geometry();
    params.validate(geom)?;
    let sites = geom.site_count();
    let (particles, ed_energy, ed_density, mu, interval) = match filling {
        Filling::Canonical(n) => {
            let (gs, obs) = solve_sector(params, potential, n, solver)?;
            let (mu, interval) = if n >= 1 && n < params.n_max as usize * sites {
                let table = energy_scan(params, potential, n - 1..=n + 1, solver)?;
                let lower = gs.energy - table.energies[0];
                let upper = table.energies[2] - gs.energy;
                (Some(0.5 * (lower + upper)), Some([lower, upper]))
            } else {
                (None, None)
            };
            (n, gs.energy, obs.density, mu, interval)
        }
        Filling::Grand(mu) => {
            let gc = grand_canonical_ground(params, potential, mu, solver)?;
            let obs = measure_observables(&gc.state, &gc.basis, params)?;
            (gc.particles, gc.state.energy, obs.density, Some(mu), None)
        }
    };
    let hf = if params.statistics == Statistics::Fermion && geom.dim() == 1 {
        Some(hf_solve(params, potential, particles, &HfConfig::default())?)
    } else {
        None
    };
    let nn_density = match (model, mu) {
        (Some(m), Some(mu)) => Some(predict(m, potential, mu, params, 1)?.density),
        (Some(_), None) => {
            return Err(Error::InvalidParams(
                "the network needs a chemical potential; use 0 < N < capacity".into(),
            ))
        }
        _ => None,
    };
    let hf_err = hf.as_ref().map(|h| errors(&h.observables.density, &ed_density));
    let nn_err = nn_density.as_ref().map(|d| errors(d, &ed_density));
    Ok(CompareReport {
        extents: geom.extents().to_vec(),
        particles,
        mu,
        mu_interval: interval,
        ed_energy,
        hf_energy: hf.as_ref().map(|h| h.energy),
        hf_density: hf.map(|h| h.observables.density),
        ed_density,
        nn_density,
        hf_mae: hf_err.map(|e| e.0),
        hf_max_abs: hf_err.map(|e| e.1),
        nn_mae: nn_err.map(|e| e.0),
        nn_max_abs: nn_err.map(|e| e.1),
    })
}

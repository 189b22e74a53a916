use serde::{Deserialize, Serialize};

use crate::ed::basis::SectorBasis;
use crate::ed::hamiltonian::hop;
use crate::ed::GroundState;
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams};
use crate::par;

/// Spatial observable maps. Direction-resolved maps are indexed
/// `[axis][site]`:
///
/// * `nn_density_corr[a][x] = <n(x) n(x + e_a)>`
/// * `current[a][x] = <I(x)>` for the bond `x - e_a -> x`
/// * `nn_current_corr[a][x] = <I(x) I(x + e_a)>`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    pub geometry: LatticeGeometry,
    pub density: Vec<f64>,
    pub nn_density_corr: Vec<Vec<f64>>,
    pub current: Vec<Vec<f64>>,
    pub nn_current_corr: Vec<Vec<f64>>,
}

impl ObservableSet {
    pub fn total_density(&self) -> f64 {
        self.density.iter().sum()
    }
}

/// Evaluates every observable map as an exact expectation value in `state`.
pub fn measure_observables(
    state: &GroundState,
    basis: &SectorBasis,
    params: &ModelParams,
) -> Result<ObservableSet> {
    if state.degenerate {
        return Err(Error::DegenerateGroundState { gap: state.gap });
    }
    let psi = &state.amplitudes;
    if psi.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: psi.len(),
        });
    }
    let geom = basis.geometry().clone();
    let sites = geom.site_count();
    let dim = geom.dim();

    let mut density = vec![0.0; sites];
    let mut nn_density_corr = vec![vec![0.0; sites]; dim];
    for (&c, &amp) in basis.configs().iter().zip(psi) {
        let w = amp * amp;
        if w == 0.0 {
            continue;
        }
        for x in 0..sites {
            let nx = basis.occupation(c, x) as f64;
            if nx == 0.0 {
                continue;
            }
            density[x] += w * nx;
            for (a, corr) in nn_density_corr.iter_mut().enumerate() {
                let y = geom.shift(x, a, 1);
                corr[x] += w * nx * basis.occupation(c, y) as f64;
            }
        }
    }

    // The amplitudes are real, so <a†(x - e_a) a(x)> is real and
    // <I(x)> = -2J Im<a†(x - e_a) a(x)> vanishes identically.
    let current = vec![vec![0.0; sites]; dim];

    // I(x)ψ = iJ χ_x with χ_x = (B_x - B_x†)ψ and B_x = a†(x - e_a) a(x), hence
    // <I(x) I(y)> = J² <χ_x, χ_y>.
    let mut nn_current_corr = Vec::with_capacity(dim);
    for a in 0..dim {
        let chis: Vec<Vec<f64>> = par::map_indexed(sites, |x| {
            let prev = geom.shift(x, a, -1);
            let mut chi = vec![0.0; basis.len()];
            for (&c, &amp) in basis.configs().iter().zip(psi) {
                if amp == 0.0 {
                    continue;
                }
                if let Some((s, m)) = hop(basis, c, prev, x) {
                    chi[basis.rank(s)] += m * amp;
                }
                if let Some((s, m)) = hop(basis, c, x, prev) {
                    chi[basis.rank(s)] -= m * amp;
                }
            }
            chi
        });
        let j2 = params.j * params.j;
        let corr = (0..sites)
            .map(|x| {
                let y = geom.shift(x, a, 1);
                j2 * chis[x].iter().zip(&chis[y]).map(|(p, q)| p * q).sum::<f64>()
            })
            .collect();
        nn_current_corr.push(corr);
    }

    Ok(ObservableSet {
        geometry: geom,
        density,
        nn_density_corr,
        current,
        nn_current_corr,
    })
}

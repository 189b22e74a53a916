//! Restricted Hartree–Fock for the spinless-fermion chain.
//!
//! The interaction `U n(x) n(x+1)` is decoupled into Hartree terms
//! `U <n(x±1)> n(x)` and the Fock exchange `-U <a†(x+1) a(x)> a†(x) a(x+1) + h.c.`.
//! Self-consistency is reached by linear mixing of the one-body density
//! matrix `ρ_ij = <a†(j) a(i)>`. The reported energy is the expectation value
//! of the full Hamiltonian in the Slater determinant, so it is an upper bound
//! on the exact ground energy whenever the Fermi level is non-degenerate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ed::ObservableSet;
use crate::error::{Error, Result};
use crate::lattice::{ModelParams, PotentialField, Statistics};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HfConfig {
    pub mixing: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HfConfig {
    fn default() -> Self {
        Self {
            mixing: 0.3,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFields {
    pub density: Vec<f64>,
    /// `<a†(x) a(x+1)>` for every bond `x -> x+1`.
    pub bond_coherence: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HfSolution {
    pub fields: MeanFields,
    pub observables: ObservableSet,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest density-matrix change in the last iteration.
    pub residual: f64,
    /// The Fermi level was degenerate; the shell was filled fractionally.
    pub degenerate_fermi_level: bool,
    /// Eigenvalues of the final one-body density matrix.
    pub occupations: Vec<f64>,
}

struct Chain {
    len: usize,
    j: f64,
    u: f64,
    v: Vec<f64>,
    bonds: Vec<(usize, usize)>,
}

impl Chain {
    fn one_body(&self, rho: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let mut h = DMatrix::<f64>::zeros(self.len, self.len);
        for (i, &v) in self.v.iter().enumerate() {
            h[(i, i)] = v;
        }
        for &(a, b) in &self.bonds {
            h[(a, b)] -= self.j;
            h[(b, a)] -= self.j;
            if let Some(rho) = rho {
                h[(a, a)] += self.u * rho[(b, b)];
                h[(b, b)] += self.u * rho[(a, a)];
                h[(a, b)] -= self.u * rho[(a, b)];
                h[(b, a)] -= self.u * rho[(b, a)];
            }
        }
        h
    }

    /// `<H>` in the state with one-body density matrix `rho` (Wick's theorem).
    fn energy(&self, rho: &DMatrix<f64>) -> f64 {
        let h0 = self.one_body(None);
        let kinetic: f64 = h0.component_mul(rho).sum();
        let interaction: f64 = self
            .bonds
            .iter()
            .map(|&(a, b)| rho[(a, a)] * rho[(b, b)] - rho[(a, b)] * rho[(b, a)])
            .sum();
        kinetic + self.u * interaction
    }
}

/// Fills the `n` lowest orbitals of `h`. A degenerate Fermi shell is filled
/// with equal fractional occupation.
fn fill(h: DMatrix<f64>, n: usize) -> (DMatrix<f64>, bool) {
    let len = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let e = |k: usize| eig.eigenvalues[order[k]];
    let mut occ = vec![0.0; len];
    let mut degenerate = false;
    if n > 0 && n < len {
        let fermi = e(n - 1);
        let tol = 1e-9 * fermi.abs().max(1.0);
        if (e(n) - fermi).abs() <= tol {
            degenerate = true;
            let first = (0..len).find(|&k| (e(k) - fermi).abs() <= tol).unwrap();
            let last = (0..len).rev().find(|&k| (e(k) - fermi).abs() <= tol).unwrap();
            let frac = (n - first) as f64 / (last - first + 1) as f64;
            for (k, o) in occ.iter_mut().enumerate() {
                *o = if k < first {
                    1.0
                } else if k <= last {
                    frac
                } else {
                    0.0
                };
            }
        }
    }
    if !degenerate {
        occ.iter_mut().take(n).for_each(|o| *o = 1.0);
    }
    let mut rho = DMatrix::<f64>::zeros(len, len);
    for (k, &o) in occ.iter().enumerate() {
        if o == 0.0 {
            continue;
        }
        let phi = eig.eigenvectors.column(order[k]);
        rho += o * phi * phi.transpose();
    }
    (rho, degenerate)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// <a†(a) a(b) a†(c) a(d)> for a Slater determinant with rho_ij = <a†(j) a(i)>.
fn wick4(rho: &DMatrix<f64>, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let delta = if b == c { 1.0 } else { 0.0 };
    rho[(b, a)] * rho[(d, c)] + rho[(d, a)] * (delta - rho[(b, c)])
}

fn observables(chain: &Chain, rho: &DMatrix<f64>, geom: &crate::lattice::LatticeGeometry) -> ObservableSet {
    let l = chain.len;
    let density: Vec<f64> = (0..l).map(|x| rho[(x, x)]).collect();
    let nn: Vec<f64> = (0..l)
        .map(|x| {
            let y = (x + 1) % l;
            rho[(x, x)] * rho[(y, y)] - rho[(x, y)] * rho[(y, x)]
        })
        .collect();
    // Real density matrix: <I(x)> = -2J Im<a†(x-1) a(x)> = 0.
    let current = vec![0.0; l];
    let cc: Vec<f64> = (0..l)
        .map(|x| {
            let xm = (x + l - 1) % l;
            let xp = (x + 1) % l;
            // I(x) = iJ (B_x - B_x†), B_x = a†(x-1) a(x); expand the product.
            let terms = [
                ((xm, x), (x, xp), 1.0),
                ((xm, x), (xp, x), -1.0),
                ((x, xm), (x, xp), -1.0),
                ((x, xm), (xp, x), 1.0),
            ];
            -chain.j
                * chain.j
                * terms
                    .iter()
                    .map(|&((a, b), (c, d), s)| s * wick4(rho, a, b, c, d))
                    .sum::<f64>()
        })
        .collect();
    ObservableSet {
        geometry: geom.clone(),
        density,
        nn_density_corr: vec![nn],
        current: vec![current],
        nn_current_corr: vec![cc],
    }
}

pub fn hf_solve(
    params: &ModelParams,
    potential: &PotentialField,
    n: usize,
    cfg: &HfConfig,
) -> Result<HfSolution> {
    let geom = potential.geometry();
    params.validate(geom)?;
    if geom.dim() != 1 || params.statistics != Statistics::Fermion {
        return Err(Error::InvalidParams(
            "Hartree-Fock is implemented for the 1D fermion chain only".into(),
        ));
    }
    if !(cfg.mixing > 0.0 && cfg.mixing <= 1.0) {
        return Err(Error::Config(format!("mixing must lie in (0, 1], got {}", cfg.mixing)));
    }
    let len = geom.site_count();
    if n > len {
        return Err(Error::InvalidParams(format!("{n} fermions on {len} sites")));
    }
    let chain = Chain {
        len,
        j: params.j,
        u: params.u,
        v: potential.values().to_vec(),
        bonds: geom.bonds().iter().map(|&(a, b, _)| (a, b)).collect(),
    };

    let (mut rho, mut degenerate) = fill(chain.one_body(None), n);
    let mut best: Option<(f64, DMatrix<f64>, bool)> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let (out, deg) = fill(chain.one_body(Some(&rho)), n);
        residual = max_abs_diff(&out, &rho);
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, out.clone(), deg));
        }
        if residual < cfg.tol {
            rho = out;
            degenerate = deg;
            converged = true;
            break;
        }
        rho = (1.0 - cfg.mixing) * rho + cfg.mixing * out;
    }
    if !converged {
        if let Some((r, out, deg)) = best {
            residual = r;
            rho = out;
            degenerate = deg;
        }
    }

    let mut occupations: Vec<f64> = rho.clone().symmetric_eigenvalues().iter().copied().collect();
    occupations.sort_by(f64::total_cmp);
    let fields = MeanFields {
        density: (0..len).map(|x| rho[(x, x)]).collect(),
        bond_coherence: (0..len).map(|x| rho[((x + 1) % len, x)]).collect(),
    };
    Ok(HfSolution {
        observables: observables(&chain, &rho, geom),
        energy: chain.energy(&rho),
        fields,
        converged,
        iterations,
        residual,
        degenerate_fermi_level: degenerate,
        occupations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ed::{solve_sector, SolverConfig};
    use crate::lattice::LatticeGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(l: usize, seed: u64) -> PotentialField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = LatticeGeometry::chain(l).unwrap();
        PotentialField::new(g, (0..l).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn exact_without_interaction() {
        let v = random_chain(8, 1);
        let p = ModelParams::fermions(1.0, 0.0);
        let hf = hf_solve(&p, &v, 3, &HfConfig::default()).unwrap();
        let (gs, ed) = solve_sector(&p, &v, 3, &SolverConfig::default()).unwrap();
        assert!(hf.converged);
        assert!((hf.energy - gs.energy).abs() < 1e-9);
        for (a, b) in hf.observables.density.iter().zip(&ed.density) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in hf.observables.nn_current_corr[0].iter().zip(&ed.nn_current_corr[0]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for (a, b) in hf.observables.nn_density_corr[0].iter().zip(&ed.nn_density_corr[0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_fixed_point_on_clean_ring() {
        let g = LatticeGeometry::chain(8).unwrap();
        let v = PotentialField::zeros(g);
        let p = ModelParams::fermions(1.0, 1.0);
        let hf = hf_solve(&p, &v, 4, &HfConfig::default()).unwrap();
        assert!(hf.converged);
        for d in &hf.observables.density {
            assert!((d - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn variational_and_idempotent() {
        for seed in 0..5 {
            let v = random_chain(8, 100 + seed);
            let p = ModelParams::fermions(1.0, 2.0);
            let hf = hf_solve(&p, &v, 3, &HfConfig::default()).unwrap();
            let (gs, _) = solve_sector(&p, &v, 3, &SolverConfig::default()).unwrap();
            assert!(hf.energy >= gs.energy - 1e-9);
            assert!(!hf.degenerate_fermi_level);
            if hf.converged {
                assert!(hf.residual <= 1e-8);
                for o in &hf.occupations {
                    assert!(o.abs() < 1e-10 || (o - 1.0).abs() < 1e-10);
                }
                let total: f64 = hf.fields.density.iter().sum();
                assert!((total - 3.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = random_chain(6, 0);
        let p = ModelParams::fermions(1.0, 1.0);
        let bad = HfConfig {
            mixing: 0.0,
            ..Default::default()
        };
        assert!(hf_solve(&p, &v, 2, &bad).is_err());
        assert!(hf_solve(&p, &v, 7, &HfConfig::default()).is_err());
        let sq = PotentialField::zeros(LatticeGeometry::square(2, 2).unwrap());
        assert!(hf_solve(&ModelParams::bosons(1.0, 1.0, 1.0, 1), &sq, 1, &HfConfig::default()).is_err());
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        let v = random_chain(10, 4);
        let p = ModelParams::fermions(1.0, 2.0);
        let cfg = HfConfig {
            max_iter: 2,
            ..Default::default()
        };
        let hf = hf_solve(&p, &v, 5, &cfg).unwrap();
        assert!(!hf.converged);
        assert_eq!(hf.iterations, 2);
    }
}

use crate::ed::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::lattice::{ModelParams, PotentialField, Statistics};
use crate::par;

/// A real symmetric operator applied without storing its matrix.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Applies `a†(to) a(from)` to a basis configuration. Returns the resulting
/// configuration and its matrix element, including the fermionic sign from
/// site-ordered modes, or `None` when the term annihilates the state.
#[inline]
pub fn hop(basis: &SectorBasis, config: u64, to: usize, from: usize) -> Option<(u64, f64)> {
    let bits = basis.bits();
    let n_from = basis.occupation(config, from);
    let n_to = basis.occupation(config, to);
    if n_from == 0 || n_to >= basis.n_max() {
        return None;
    }
    let moved = config - (1u64 << (from as u32 * bits)) + (1u64 << (to as u32 * bits));
    let amp = match basis.statistics() {
        Statistics::Fermion => {
            let (lo, hi) = if to < from { (to, from) } else { (from, to) };
            let between = ((1u64 << hi) - 1) & !((1u64 << (lo + 1)) - 1);
            if (config & between).count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        }
        Statistics::Boson => ((n_from as f64) * (n_to as f64 + 1.0)).sqrt(),
    };
    Some((moved, amp))
}

/// Hamiltonian restricted to one particle-number sector:
/// `-J Σ_bonds (a†a + h.c.) + interactions + Σ_x V(x) n(x)`.
pub struct SectorHamiltonian<'a> {
    basis: &'a SectorBasis,
    j: f64,
    bonds: Vec<(usize, usize)>,
    diag: Vec<f64>,
    sparse: Option<Sparse>,
}

/// Off-diagonal part in compressed row form, already scaled by `-J`.
struct Sparse {
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

/// Upper bound on stored off-diagonal entries before falling back to
/// on-the-fly application.
const SPARSE_LIMIT: usize = 1 << 26;
const CHUNK: usize = 2048;

impl<'a> SectorHamiltonian<'a> {
    pub fn new(params: &ModelParams, potential: &PotentialField, basis: &'a SectorBasis) -> Result<Self> {
        let geom = basis.geometry();
        if potential.geometry() != geom {
            return Err(Error::DimensionMismatch {
                expected: geom.site_count(),
                got: potential.values().len(),
            });
        }
        params.validate(geom)?;
        if params.statistics != basis.statistics() || params.n_max != basis.n_max() {
            return Err(Error::InvalidParams(
                "model statistics/n_max differ from the basis".into(),
            ));
        }
        let bonds: Vec<(usize, usize)> = geom.bonds().iter().map(|&(a, b, _)| (a, b)).collect();
        let v = potential.values();
        let sites = geom.site_count();
        let diag = basis
            .configs()
            .iter()
            .map(|&c| {
                let occ: Vec<f64> = (0..sites).map(|s| basis.occupation(c, s) as f64).collect();
                let mut e: f64 = occ.iter().zip(v).map(|(n, v)| n * v).sum();
                let bond_nn: f64 = bonds.iter().map(|&(a, b)| occ[a] * occ[b]).sum();
                match params.statistics {
                    Statistics::Fermion => e += params.u * bond_nn,
                    Statistics::Boson => {
                        e += 0.5 * params.u * occ.iter().map(|n| n * (n - 1.0)).sum::<f64>();
                        e += params.u_prime.unwrap_or(0.0) * bond_nn;
                    }
                }
                e
            })
            .collect();
        let mut h = Self {
            basis,
            j: params.j,
            bonds,
            diag,
            sparse: None,
        };
        if basis.len() * 2 * h.bonds.len() <= SPARSE_LIMIT && basis.len() <= u32::MAX as usize {
            h.sparse = Some(h.assemble());
        }
        Ok(h)
    }

    fn row(&self, c: u64, mut emit: impl FnMut(usize, f64)) {
        for &(a, b) in &self.bonds {
            if let Some((s, m)) = hop(self.basis, c, a, b) {
                emit(self.basis.rank(s), -self.j * m);
            }
            if let Some((s, m)) = hop(self.basis, c, b, a) {
                emit(self.basis.rank(s), -self.j * m);
            }
        }
    }

    fn assemble(&self) -> Sparse {
        let configs = self.basis.configs();
        let chunks = configs.len().div_ceil(CHUNK);
        let parts: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = par::map_indexed(chunks, |ci| {
            let rows = &configs[ci * CHUNK..((ci + 1) * CHUNK).min(configs.len())];
            let mut lens = Vec::with_capacity(rows.len());
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for &c in rows {
                let before = cols.len();
                self.row(c, |r, v| {
                    cols.push(r as u32);
                    vals.push(v);
                });
                lens.push(cols.len() - before);
            }
            (lens, cols, vals)
        });
        let nnz = parts.iter().map(|p| p.1.len()).sum();
        let mut row_start = Vec::with_capacity(configs.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_start.push(0);
        for (lens, c, v) in parts {
            for l in lens {
                row_start.push(row_start.last().unwrap() + l);
            }
            cols.extend(c);
            vals.extend(v);
        }
        Sparse {
            row_start,
            cols,
            vals,
        }
    }

    pub fn basis(&self) -> &SectorBasis {
        self.basis
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Checked application: `Hψ` with a dimension check.
    pub fn apply_checked(&self, psi: &[f64]) -> Result<Vec<f64>> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.len(),
            });
        }
        let mut out = vec![0.0; psi.len()];
        self.apply(psi, &mut out);
        Ok(out)
    }
}

impl LinearOperator for SectorHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let configs = self.basis.configs();
        // (Hx)_r = Σ_s H_rs x_s with H_rs = <s|h|r> for the real symmetric H.
        par::for_each_chunk_mut(y, CHUNK, |ci, out| {
            let start = ci * CHUNK;
            for (k, slot) in out.iter_mut().enumerate() {
                let r = start + k;
                let mut acc = self.diag[r] * x[r];
                match &self.sparse {
                    Some(sp) => {
                        let range = sp.row_start[r]..sp.row_start[r + 1];
                        for (&c, &v) in sp.cols[range.clone()].iter().zip(&sp.vals[range]) {
                            acc += v * x[c as usize];
                        }
                    }
                    None => self.row(configs[r], |s, v| acc += v * x[s]),
                }
                *slot = acc;
            }
        });
    }
}

/// Convenience wrapper: `Hψ` for the given model, potential and sector.
pub fn apply_hamiltonian(
    params: &ModelParams,
    potential: &PotentialField,
    basis: &SectorBasis,
    psi: &[f64],
) -> Result<Vec<f64>> {
    SectorHamiltonian::new(params, potential, basis)?.apply_checked(psi)
}

//! Dense full-Fock-sector reference Hamiltonians, built from occupation
//! vectors with no shared code from the library solver.

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Clone, Debug)]
pub struct Model {
    pub extents: Vec<usize>,
    pub v: Vec<f64>,
    pub j: f64,
    pub u: f64,
    pub u_prime: f64,
    pub fermion: bool,
    pub n_max: u8,
}

impl Model {
    pub fn fermions(v: Vec<f64>, j: f64, u: f64) -> Self {
        Self {
            extents: vec![v.len()],
            v,
            j,
            u,
            u_prime: 0.0,
            fermion: true,
            n_max: 1,
        }
    }

    pub fn bosons(extents: Vec<usize>, v: Vec<f64>, j: f64, u: f64, u_prime: f64, n_max: u8) -> Self {
        Self {
            extents,
            v,
            j,
            u,
            u_prime,
            fermion: false,
            n_max,
        }
    }

    pub fn sites(&self) -> usize {
        self.extents.iter().product()
    }

    /// `(site, site + e_axis, axis)` for every site and axis, periodic.
    pub fn bonds(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.sites() {
            let c = self.coords(s);
            for a in 0..self.extents.len() {
                let mut d = c.clone();
                d[a] = (d[a] + 1) % self.extents[a];
                out.push((s, self.site(&d), a));
            }
        }
        out
    }

    pub fn coords(&self, s: usize) -> Vec<usize> {
        match self.extents.len() {
            1 => vec![s],
            _ => vec![s / self.extents[1], s % self.extents[1]],
        }
    }

    pub fn site(&self, c: &[usize]) -> usize {
        match self.extents.len() {
            1 => c[0],
            _ => c[0] * self.extents[1] + c[1],
        }
    }

    pub fn shift(&self, s: usize, axis: usize, step: isize) -> usize {
        let mut c = self.coords(s);
        let l = self.extents[axis] as isize;
        c[axis] = ((c[axis] as isize + step).rem_euclid(l)) as usize;
        self.site(&c)
    }
}

pub fn enumerate(sites: usize, n: usize, n_max: u8) -> Vec<Vec<u8>> {
    fn rec(i: usize, left: usize, cur: &mut Vec<u8>, n_max: u8, out: &mut Vec<Vec<u8>>) {
        if i == cur.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for k in 0..=(n_max as usize).min(left) {
            cur[i] = k as u8;
            rec(i + 1, left - k, cur, n_max, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    rec(0, n, &mut vec![0; sites], n_max, &mut out);
    out
}

/// `a†(to) a(from)` applied to an occupation vector.
pub fn hop(m: &Model, occ: &[u8], to: usize, from: usize) -> Option<(Vec<u8>, f64)> {
    if occ[from] == 0 {
        return None;
    }
    let mut next = occ.to_vec();
    if m.fermion {
        let before_from = occ[..from].iter().filter(|&&o| o == 1).count();
        next[from] = 0;
        if next[to] == 1 {
            return None;
        }
        let before_to = next[..to].iter().filter(|&&o| o == 1).count();
        next[to] = 1;
        let sign = if (before_from + before_to) % 2 == 0 { 1.0 } else { -1.0 };
        Some((next, sign))
    } else {
        let a = (occ[from] as f64).sqrt();
        next[from] -= 1;
        if next[to] == m.n_max {
            return None;
        }
        let b = (next[to] as f64 + 1.0).sqrt();
        next[to] += 1;
        Some((next, a * b))
    }
}

pub struct Sector {
    pub model: Model,
    pub configs: Vec<Vec<u8>>,
    pub index: HashMap<Vec<u8>, usize>,
}

impl Sector {
    pub fn new(model: &Model, n: usize) -> Self {
        let configs = enumerate(model.sites(), n, model.n_max);
        let index = configs.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self {
            model: model.clone(),
            configs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    /// Matrix of `a†(to) a(from)` in this sector.
    pub fn hop_matrix(&self, to: usize, from: usize) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for (i, c) in self.configs.iter().enumerate() {
            if let Some((d, amp)) = hop(&self.model, c, to, from) {
                out[(self.index[&d], i)] += amp;
            }
        }
        out
    }

    pub fn hamiltonian(&self) -> DMatrix<f64> {
        let m = &self.model;
        let n = self.len();
        let bonds = m.bonds();
        let mut h = DMatrix::zeros(n, n);
        for (i, c) in self.configs.iter().enumerate() {
            let occ = |s: usize| c[s] as f64;
            let mut diag = (0..m.sites()).map(|s| m.v[s] * occ(s)).sum::<f64>();
            if m.fermion {
                diag += bonds.iter().map(|&(a, b, _)| m.u * occ(a) * occ(b)).sum::<f64>();
            } else {
                diag += (0..m.sites()).map(|s| 0.5 * m.u * occ(s) * (occ(s) - 1.0)).sum::<f64>();
                diag += bonds.iter().map(|&(a, b, _)| m.u_prime * occ(a) * occ(b)).sum::<f64>();
            }
            h[(i, i)] += diag;
            for &(a, b, _) in &bonds {
                for (to, from) in [(a, b), (b, a)] {
                    if let Some((d, amp)) = hop(m, c, to, from) {
                        h[(self.index[&d], i)] -= m.j * amp;
                    }
                }
            }
        }
        h
    }
}

pub struct Eigen {
    pub values: Vec<f64>,
    pub ground: Vec<f64>,
}

pub fn diagonalize(h: DMatrix<f64>) -> Eigen {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let ground = eig.eigenvectors.column(order[0]).iter().copied().collect();
    Eigen { values, ground }
}

pub struct Reference {
    pub energy: f64,
    pub gap: f64,
    pub density: Vec<f64>,
    pub nn_density_corr: Vec<Vec<f64>>,
    pub nn_current_corr: Vec<Vec<f64>>,
}

/// Ground energy and observable maps of one sector by dense diagonalization.
pub fn reference(model: &Model, n: usize) -> Reference {
    let sector = Sector::new(model, n);
    let eig = diagonalize(sector.hamiltonian());
    let psi = DVector::from_vec(eig.ground.clone());
    let sites = model.sites();
    let dim = model.extents.len();
    let mut density = vec![0.0; sites];
    let mut nn = vec![vec![0.0; sites]; dim];
    for (c, &amp) in sector.configs.iter().zip(&eig.ground) {
        let w = amp * amp;
        for x in 0..sites {
            density[x] += w * c[x] as f64;
            for (a, row) in nn.iter_mut().enumerate() {
                row[x] += w * (c[x] as f64) * c[model.shift(x, a, 1)] as f64;
            }
        }
    }
    // I(x) = iJ A(x) with A(x) = a†(x-e)a(x) - a†(x)a(x-e), so
    // <I(x) I(y)> = -J² <ψ|A(x) A(y)|ψ>.
    let mut cc = vec![vec![0.0; sites]; dim];
    for (a, row) in cc.iter_mut().enumerate() {
        let ops: Vec<DMatrix<f64>> = (0..sites)
            .map(|x| {
                let p = model.shift(x, a, -1);
                sector.hop_matrix(p, x) - sector.hop_matrix(x, p)
            })
            .collect();
        for x in 0..sites {
            let y = model.shift(x, a, 1);
            let v = &ops[x] * (&ops[y] * &psi);
            row[x] = -model.j * model.j * psi.dot(&v);
        }
    }
    Reference {
        energy: eig.values[0],
        gap: eig.values.get(1).map_or(f64::INFINITY, |e| e - eig.values[0]),
        density,
        nn_density_corr: nn,
        nn_current_corr: cc,
    }
}

/// Single-particle hopping matrix plus potential.
pub fn one_body(model: &Model) -> DMatrix<f64> {
    let n = model.sites();
    let mut h = DMatrix::zeros(n, n);
    for s in 0..n {
        h[(s, s)] = model.v[s];
    }
    for (a, b, _) in model.bonds() {
        h[(a, b)] -= model.j;
        h[(b, a)] -= model.j;
    }
    h
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

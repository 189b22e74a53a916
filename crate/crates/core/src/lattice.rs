//! Periodic hypercubic lattices (1D chains and 2D square lattices), model
//! parameters and potential fields.
//!
//! Sites are indexed row-major with axis 0 slowest. Every axis wraps
//! periodically. On an axis of extent 2 the `+` and `-` neighbors coincide;
//! the duplicate is kept so that each directed bond `(x, x + e_a)` is
//! enumerated exactly once per site and axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeGeometry {
    extents: Vec<usize>,
}

impl LatticeGeometry {
    pub fn new(dim: usize, extents: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGeometry(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if extents.len() != dim {
            return Err(Error::InvalidGeometry(format!(
                "expected {dim} extents, got {}",
                extents.len()
            )));
        }
        if let Some(&e) = extents.iter().find(|&&e| e < 2) {
            return Err(Error::InvalidGeometry(format!(
                "every extent must be at least 2, got {e}"
            )));
        }
        Ok(Self {
            extents: extents.to_vec(),
        })
    }

    pub fn chain(len: usize) -> Result<Self> {
        Self::new(1, &[len])
    }

    pub fn square(l0: usize, l1: usize) -> Result<Self> {
        Self::new(2, &[l0, l1])
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn site_count(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_square(&self) -> bool {
        self.extents.iter().all(|&e| e == self.extents[0])
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.extents[axis + 1..].iter().product()
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rem = site;
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = rem % self.extents[a];
            rem /= self.extents[a];
        }
        out
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.extents)
            .fold(0, |acc, (&c, &e)| acc * e + c % e)
    }

    /// Site reached from `site` by moving `step` sites along `axis` (wrapping).
    pub fn shift(&self, site: usize, axis: usize, step: isize) -> usize {
        let e = self.extents[axis] as isize;
        let stride = self.stride(axis);
        let c = ((site / stride) % self.extents[axis]) as isize;
        let nc = (c + step).rem_euclid(e);
        (site as isize + (nc - c) * stride as isize) as usize
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.site_count() {
            return Err(Error::SiteOutOfRange {
                site,
                count: self.site_count(),
            });
        }
        Ok(())
    }

    /// Sorted nearest neighbors, `2 * dim` entries with multiplicity.
    pub fn neighbors(&self, site: usize) -> Result<Vec<usize>> {
        self.check_site(site)?;
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            out.push(self.shift(site, a, 1));
            out.push(self.shift(site, a, -1));
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Directed bonds `(x, x + e_a, a)`, one per site and axis.
    pub fn bonds(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.site_count() * self.dim());
        for s in 0..self.site_count() {
            for a in 0..self.dim() {
                out.push((s, self.shift(s, a, 1), a));
            }
        }
        out
    }

    pub fn has_even_extents(&self) -> bool {
        self.extents.iter().all(|e| e % 2 == 0)
    }

    /// `(-1)^(x0 + x1)` on a 2D lattice with even extents.
    pub fn checkerboard_parity(&self, site: usize) -> Result<i8> {
        self.check_site(site)?;
        if self.dim() != 2 || !self.has_even_extents() {
            return Err(Error::OddExtent(self.extents.clone()));
        }
        let s: usize = self.coords(site).iter().sum();
        Ok(if s.is_multiple_of(2) { 1 } else { -1 })
    }

    /// Parity of every site; see [`checkerboard_parity`](Self::checkerboard_parity).
    pub fn checkerboard_pattern(&self) -> Result<Vec<i8>> {
        (0..self.site_count())
            .map(|s| self.checkerboard_parity(s))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Fermion,
    Boson,
}

/// Hamiltonian couplings. For fermion chains `u` is the nearest-neighbor
/// interaction; for bosons it is the onsite interaction and `u_prime` the
/// nearest-neighbor one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub j: f64,
    pub u: f64,
    pub u_prime: Option<f64>,
    pub statistics: Statistics,
    pub n_max: u8,
}

impl ModelParams {
    pub fn fermions(j: f64, u: f64) -> Self {
        Self {
            j,
            u,
            u_prime: None,
            statistics: Statistics::Fermion,
            n_max: 1,
        }
    }

    pub fn bosons(j: f64, u: f64, u_prime: f64, n_max: u8) -> Self {
        Self {
            j,
            u,
            u_prime: Some(u_prime),
            statistics: Statistics::Boson,
            n_max,
        }
    }

    pub fn validate(&self, geom: &LatticeGeometry) -> Result<()> {
        if !(self.j > 0.0 && self.j.is_finite()) {
            return Err(Error::InvalidParams(format!("J must be positive, got {}", self.j)));
        }
        if !self.u.is_finite() || !self.u_prime.unwrap_or(0.0).is_finite() {
            return Err(Error::InvalidParams("interactions must be finite".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidParams("n_max must be at least 1".into()));
        }
        match self.statistics {
            Statistics::Fermion if self.n_max != 1 => {
                return Err(Error::InvalidParams("fermions require n_max = 1".into()))
            }
            _ => {}
        }
        let wants_uprime = geom.dim() == 2 && self.statistics == Statistics::Boson;
        if wants_uprime != self.u_prime.is_some() {
            return Err(Error::InvalidParams(
                "U' must be given exactly for the 2D boson model".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    geometry: LatticeGeometry,
    values: Vec<f64>,
}

impl PotentialField {
    pub fn new(geometry: LatticeGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.site_count() {
            return Err(Error::DimensionMismatch {
                expected: geometry.site_count(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("potential value {v}")));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        let n = geometry.site_count();
        Self {
            geometry,
            values: vec![0.0; n],
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

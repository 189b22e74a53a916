use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, Statistics};

/// Fixed particle-number sector of a lattice with capped occupations.
///
/// Configurations are packed into a `u64`, `bits` bits per site with site 0
/// in the lowest bits, and listed in lexicographic order of the occupation
/// vector (site 0 most significant). The position of a configuration in that
/// order is computed directly by combinatorial ranking, so no hash table is
/// needed.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    geometry: LatticeGeometry,
    particles: usize,
    statistics: Statistics,
    n_max: u8,
    bits: u32,
    configs: Vec<u64>,
    // rank_offset[(site * (N + 1) + remaining) * (n_max + 1) + n]
    rank_offset: Vec<u64>,
}

/// Number of configurations of `particles` on `sites` sites with at most
/// `n_max` per site, saturating at `u128::MAX`.
pub fn sector_dimension(sites: usize, particles: usize, n_max: u8) -> u128 {
    ways_table(sites, particles, n_max)[0][particles]
}

// ways[i][m]: configurations of m particles on sites i..sites.
fn ways_table(sites: usize, particles: usize, n_max: u8) -> Vec<Vec<u128>> {
    let mut ways = vec![vec![0u128; particles + 1]; sites + 1];
    ways[sites][0] = 1;
    for i in (0..sites).rev() {
        for m in 0..=particles {
            let mut acc = 0u128;
            for k in 0..=(n_max as usize).min(m) {
                acc = acc.saturating_add(ways[i + 1][m - k]);
            }
            ways[i][m] = acc;
        }
    }
    ways
}

impl SectorBasis {
    pub fn new(
        geometry: &LatticeGeometry,
        particles: usize,
        statistics: Statistics,
        n_max: u8,
        cap: usize,
    ) -> Result<Self> {
        let sites = geometry.site_count();
        if statistics == Statistics::Fermion && n_max != 1 {
            return Err(Error::InvalidParams("fermions require n_max = 1".into()));
        }
        if n_max == 0 {
            return Err(Error::InvalidParams("n_max must be at least 1".into()));
        }
        if particles > n_max as usize * sites {
            return Err(Error::InvalidParams(format!(
                "{particles} particles do not fit on {sites} sites with n_max = {n_max}"
            )));
        }
        let bits = u8::BITS - n_max.leading_zeros();
        if bits as usize * sites > 64 {
            return Err(Error::InvalidParams(format!(
                "{sites} sites with n_max = {n_max} do not fit the 64-bit configuration encoding"
            )));
        }
        let ways = ways_table(sites, particles, n_max);
        let size = ways[0][particles];
        if size > cap as u128 {
            return Err(Error::SectorTooLarge { size, cap });
        }

        let nm = n_max as usize + 1;
        let mut rank_offset = vec![0u64; sites * (particles + 1) * nm];
        for i in 0..sites {
            for rem in 0..=particles {
                let mut acc = 0u64;
                for n in 0..nm {
                    rank_offset[(i * (particles + 1) + rem) * nm + n] = acc;
                    if n <= rem {
                        acc += ways[i + 1][rem - n] as u64;
                    }
                }
            }
        }

        let mut configs = Vec::with_capacity(size as usize);
        enumerate(0, sites, particles, n_max, bits, 0, &ways, &mut configs);
        debug_assert_eq!(configs.len() as u128, size);

        Ok(Self {
            geometry: geometry.clone(),
            particles,
            statistics,
            n_max,
            bits,
            configs,
            rank_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn configs(&self) -> &[u64] {
        &self.configs
    }

    pub fn config(&self, index: usize) -> u64 {
        self.configs[index]
    }

    #[inline]
    pub fn occupation(&self, config: u64, site: usize) -> u8 {
        ((config >> (site as u32 * self.bits)) & ((1u64 << self.bits) - 1)) as u8
    }

    pub fn occupations(&self, config: u64) -> Vec<u8> {
        (0..self.geometry.site_count())
            .map(|s| self.occupation(config, s))
            .collect()
    }

    pub fn pack(&self, occupations: &[u8]) -> u64 {
        occupations
            .iter()
            .enumerate()
            .fold(0u64, |acc, (s, &n)| acc | ((n as u64) << (s as u32 * self.bits)))
    }

    /// Index of `config` in this basis. The caller guarantees that `config`
    /// holds the sector's particle number and respects the cap.
    #[inline]
    pub fn rank(&self, config: u64) -> usize {
        let nm = self.n_max as usize + 1;
        let stride = self.particles + 1;
        let mut rem = self.particles;
        let mut r = 0u64;
        for i in 0..self.geometry.site_count() {
            if rem == 0 {
                break;
            }
            let n = self.occupation(config, i) as usize;
            r += self.rank_offset[(i * stride + rem) * nm + n];
            rem -= n;
        }
        r as usize
    }

    /// Checked lookup: `None` when `config` is not a member of this sector.
    pub fn lookup(&self, config: u64) -> Option<usize> {
        let occ = self.occupations(config);
        if occ.iter().map(|&n| n as usize).sum::<usize>() != self.particles
            || occ.iter().any(|&n| n > self.n_max)
            || self.pack(&occ) != config
        {
            return None;
        }
        let r = self.rank(config);
        (self.configs.get(r) == Some(&config)).then_some(r)
    }

    #[inline]
    pub(crate) fn bits(&self) -> u32 {
        self.bits
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    site: usize,
    sites: usize,
    rem: usize,
    n_max: u8,
    bits: u32,
    prefix: u64,
    ways: &[Vec<u128>],
    out: &mut Vec<u64>,
) {
    if site == sites {
        if rem == 0 {
            out.push(prefix);
        }
        return;
    }
    for n in 0..=(n_max as usize).min(rem) {
        if ways[site + 1][rem - n] == 0 {
            continue;
        }
        enumerate(
            site + 1,
            sites,
            rem - n,
            n_max,
            bits,
            prefix | ((n as u64) << (site as u32 * bits)),
            ways,
            out,
        );
    }
}

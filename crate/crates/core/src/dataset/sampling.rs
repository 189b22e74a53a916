//! Model-parameter draws and the checkerboard sector channel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, ModelParams};

/// Closed sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!(
                "{what} range [{}, {}] is not well-ordered",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Parameter ranges of the 2D extended Bose-Hubbard model, with J = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BosonRanges {
    /// `4J/U`.
    pub hopping_ratio: Interval,
    /// `4U'/U`.
    pub u_prime_ratio: Interval,
    /// `μ/U`.
    pub mu_over_u: Interval,
}

impl Default for BosonRanges {
    fn default() -> Self {
        Self {
            hopping_ratio: Interval::new(0.05, 1.0),
            u_prime_ratio: Interval::new(0.75, 1.75),
            mu_over_u: Interval::new(-0.5, 3.0),
        }
    }
}

impl BosonRanges {
    pub fn validate(&self) -> Result<()> {
        self.hopping_ratio.validate("4J/U")?;
        self.u_prime_ratio.validate("4U'/U")?;
        self.mu_over_u.validate("mu/U")?;
        if self.hopping_ratio.lo <= 0.0 {
            return Err(Error::Config("4J/U must be positive".into()));
        }
        Ok(())
    }
}

/// Couplings for given `4J/U` and `4U'/U` at J = 1.
pub fn boson_params_from_ratios(hopping_ratio: f64, u_prime_ratio: f64, n_max: u8) -> ModelParams {
    let u = 4.0 / hopping_ratio;
    ModelParams::bosons(1.0, u, u_prime_ratio * u / 4.0, n_max)
}

/// Draws `4J/U`, `4U'/U` and `μ/U` uniformly from their ranges and returns
/// the couplings together with μ.
pub fn sample_model_params<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &BosonRanges,
    n_max: u8,
) -> Result<(ModelParams, f64)> {
    ranges.validate()?;
    let params = boson_params_from_ratios(
        ranges.hopping_ratio.sample(rng),
        ranges.u_prime_ratio.sample(rng),
        n_max,
    );
    let mu = ranges.mu_over_u.sample(rng) * params.u;
    Ok((params, mu))
}

/// `s·(-1)^(x0+x1)` where `s` is the sign of the density's overlap with the
/// `+1`-on-even-sites pattern. Overlaps within rounding of zero count as a
/// tie and give `s = +1`.
pub fn checkerboard_channel(density: &[f64], geom: &LatticeGeometry) -> Result<(i8, Vec<f64>)> {
    let pattern = geom.checkerboard_pattern()?;
    if density.len() != pattern.len() {
        return Err(Error::DimensionMismatch {
            expected: pattern.len(),
            got: density.len(),
        });
    }
    let overlap: f64 = density.iter().zip(&pattern).map(|(d, &p)| d * p as f64).sum();
    let scale: f64 = density.iter().map(|d| d.abs()).sum();
    let s: i8 = if overlap < -1e-10 * scale { -1 } else { 1 };
    Ok((s, pattern.iter().map(|&p| (s * p) as f64).collect()))
}

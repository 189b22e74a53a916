//! Random and built-in potential landscapes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, PotentialField};

/// Spatially correlated noise with a Gaussian spectral envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoredNoiseConfig {
    /// Cutoff wavenumber in inverse lattice spacings.
    pub k_c: f64,
    /// Half the peak-to-peak range of the field.
    pub amplitude: f64,
}

impl ColoredNoiseConfig {
    pub const DEFAULT_K_C: f64 = 2.0 * PI / 4.0;

    pub fn new(k_c: f64, amplitude: f64) -> Result<Self> {
        let cfg = Self { k_c, amplitude };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_c > 0.0 && self.k_c.is_finite()) {
            return Err(Error::Config(format!("k_c must be positive, got {}", self.k_c)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// I.i.d. uniform values on `[-v_max, v_max]`.
pub fn white_noise_potential<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &LatticeGeometry,
    v_max: f64,
) -> Result<PotentialField> {
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(Error::Config(format!("v_max must be positive, got {v_max}")));
    }
    let values = (0..geom.site_count())
        .map(|_| rng.random_range(-v_max..=v_max))
        .collect();
    PotentialField::new(geom.clone(), values)
}

fn signed_mode(m: usize, l: usize) -> f64 {
    if m > l / 2 {
        m as f64 - l as f64
    } else {
        m as f64
    }
}

fn fft_axis(data: &mut [Complex64], geom: &LatticeGeometry, axis: usize, planner: &mut FftPlanner<f64>) {
    let l = geom.extents()[axis];
    let stride = geom.stride(axis);
    let fft = planner.plan_fft_inverse(l);
    let mut line = vec![Complex64::new(0.0, 0.0); l];
    for start in 0..data.len() {
        if !(start / stride).is_multiple_of(l) {
            continue;
        }
        for (i, c) in line.iter_mut().enumerate() {
            *c = data[start + i * stride];
        }
        fft.process(&mut line);
        for (i, c) in line.iter().enumerate() {
            data[start + i * stride] = *c;
        }
    }
}

/// Builds the raw real-space field and returns it with the largest imaginary
/// part discarded by the final projection.
pub(crate) fn colored_field<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &LatticeGeometry,
    k_c: f64,
) -> (Vec<f64>, f64) {
    let n = geom.site_count();
    let ext = geom.extents();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let partner = |s: usize| {
        let c: Vec<usize> = geom
            .coords(s)
            .iter()
            .zip(ext)
            .map(|(&m, &l)| (l - m) % l)
            .collect();
        geom.site(&c)
    };
    for s in 1..n {
        let p = partner(s);
        if p < s {
            continue;
        }
        let k2: f64 = geom
            .coords(s)
            .iter()
            .zip(ext)
            .map(|(&m, &l)| (2.0 * PI * signed_mode(m, l) / l as f64).powi(2))
            .sum();
        let env = (-k2 / (2.0 * k_c * k_c)).exp();
        let re: f64 = StandardNormal.sample(rng);
        if p == s {
            spec[s] = Complex64::new(env * re, 0.0);
        } else {
            let im: f64 = StandardNormal.sample(rng);
            spec[s] = Complex64::new(env * re, env * im) / 2f64.sqrt();
            spec[p] = spec[s].conj();
        }
    }
    let mut planner = FftPlanner::new();
    for axis in 0..geom.dim() {
        fft_axis(&mut spec, geom, axis, &mut planner);
    }
    let residue = spec.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    (spec.iter().map(|c| c.re).collect(), residue)
}

/// Correlated noise from conjugate-symmetric random Fourier amplitudes,
/// shifted to zero mean and scaled to a peak-to-peak range of `2A`.
pub fn colored_noise_potential<R: Rng + ?Sized>(
    rng: &mut R,
    geom: &LatticeGeometry,
    cfg: &ColoredNoiseConfig,
) -> Result<PotentialField> {
    cfg.validate()?;
    let (mut v, _) = colored_field(rng, geom, cfg.k_c);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = hi - lo;
    if cfg.amplitude == 0.0 || range <= f64::EPSILON * (hi.abs() + lo.abs()) {
        return Ok(PotentialField::zeros(geom.clone()));
    }
    let scale = 2.0 * cfg.amplitude / range;
    for x in &mut v {
        *x = (*x - mean) * scale;
    }
    PotentialField::new(geom.clone(), v)
}

/// Minimal-image squared distance from `site` to the lattice center.
fn center_distance2(geom: &LatticeGeometry, site: usize) -> f64 {
    geom.coords(site)
        .iter()
        .zip(geom.extents())
        .map(|(&x, &l)| {
            let d = (x as f64 - (l as f64 - 1.0) / 2.0).abs();
            d.min(l as f64 - d).powi(2)
        })
        .sum()
}

pub fn flat_potential(geom: &LatticeGeometry, value: f64) -> Result<PotentialField> {
    PotentialField::new(geom.clone(), vec![value; geom.site_count()])
}

/// `-depth` on a centered block of `width` sites per axis, zero elsewhere.
pub fn step_well(geom: &LatticeGeometry, depth: f64, width: usize) -> Result<PotentialField> {
    if let Some(&l) = geom.extents().iter().find(|&&l| width > l) {
        return Err(Error::Config(format!("well width {width} exceeds extent {l}")));
    }
    let values = (0..geom.site_count())
        .map(|s| {
            let inside = geom
                .coords(s)
                .iter()
                .zip(geom.extents())
                .all(|(&x, &l)| {
                    let start = (l - width) / 2;
                    x >= start && x < start + width
                });
            if inside {
                -depth
            } else {
                0.0
            }
        })
        .collect();
    PotentialField::new(geom.clone(), values)
}

/// `curvature · r²` around the lattice center, with periodic distances.
pub fn harmonic_trap(geom: &LatticeGeometry, curvature: f64) -> Result<PotentialField> {
    let values = (0..geom.site_count())
        .map(|s| curvature * center_distance2(geom, s))
        .collect();
    PotentialField::new(geom.clone(), values)
}

/// Parses a potential from JSON: a flat array for a chain, or an array of
/// equal-length rows for a square lattice.
pub fn potential_from_json(text: &str) -> Result<PotentialField> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let rows = value
        .as_array()
        .ok_or_else(|| Error::Format("potential must be a JSON array".into()))?;
    let num = |v: &serde_json::Value| {
        v.as_f64()
            .ok_or_else(|| Error::Format(format!("expected a number, got {v}")))
    };
    if rows.iter().all(|r| r.is_array()) && !rows.is_empty() {
        let width = rows[0].as_array().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_array().unwrap();
            if r.len() != width {
                return Err(Error::Format("potential rows differ in length".into()));
            }
            for v in r {
                values.push(num(v)?);
            }
        }
        PotentialField::new(LatticeGeometry::square(rows.len(), width)?, values)
    } else {
        let values = rows.iter().map(num).collect::<Result<Vec<_>>>()?;
        PotentialField::new(LatticeGeometry::chain(values.len())?, values)
    }
}

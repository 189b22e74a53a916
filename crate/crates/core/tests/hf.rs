mod common;

use common::{max_abs_diff, reference, Model};
use latmap::hf::{hf_solve, HfConfig};
use latmap::lattice::{LatticeGeometry, ModelParams, PotentialField};
use proptest::prelude::*;

fn chain(v: &[f64]) -> PotentialField {
    PotentialField::new(LatticeGeometry::chain(v.len()).unwrap(), v.to_vec()).unwrap()
}

fn case() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (4usize..=10).prop_flat_map(|l| (prop::collection::vec(-3.0..3.0f64, l), 1..l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_at_zero_interaction((v, n) in case()) {
        let hf = hf_solve(&ModelParams::fermions(1.0, 0.0), &chain(&v), n, &HfConfig::default()).unwrap();
        let r = reference(&Model::fermions(v.clone(), 1.0, 0.0), n);
        prop_assert!((hf.energy - r.energy).abs() < 1e-9);
        if r.gap > 1e-6 {
            prop_assert!(max_abs_diff(&hf.observables.density, &r.density) < 1e-8);
        }
    }

    #[test]
    fn energy_bounds_the_exact_ground_state_from_above((v, n) in case(), u in 0.0..4.0f64) {
        let hf = hf_solve(&ModelParams::fermions(1.0, u), &chain(&v), n, &HfConfig::default()).unwrap();
        let r = reference(&Model::fermions(v.clone(), 1.0, u), n);
        prop_assert!(hf.energy >= r.energy - 1e-9, "hf {} exact {}", hf.energy, r.energy);
        if hf.converged {
            prop_assert!(hf.residual <= 1e-8);
            let total: f64 = hf.fields.density.iter().sum();
            prop_assert!((total - n as f64).abs() < 1e-8);
            prop_assert!(hf.fields.density.iter().all(|&d| (-1e-12..=1.0 + 1e-12).contains(&d)));
            if !hf.degenerate_fermi_level {
                for o in &hf.occupations {
                    prop_assert!(o.abs() < 1e-10 || (o - 1.0).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn seeded_random_instance() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let v: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let hf = hf_solve(&ModelParams::fermions(1.0, 2.0), &chain(&v), 3, &HfConfig::default()).unwrap();
    let exact = reference(&Model::fermions(v, 1.0, 2.0), 3).energy;
    assert!(hf.converged);
    assert!(hf.energy >= exact);
    // Mean field misses correlation energy at finite U.
    assert!(hf.energy - exact > 1e-6);
}

//! Deterministic desk-scale verification suites: seeded random compact
//! densities and the standard sandwich settings the CLI and the acceptance
//! tests share.

use crate::bounds::Ensemble;
use crate::density::GridDensity;
use crate::geometry::Grid;
use crate::potential::PotentialSpec;
use crate::{cast, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random nonnegative density with the given total mass on a unit-origin
/// grid. Values are bounded away from zero so the support is the whole box,
/// which keeps local radii moderate on coarse grids.
pub fn random_compact_density<S: Scalar>(
    dim: usize,
    cells_per_axis: usize,
    box_side: f64,
    seed: u64,
    mass: f64,
) -> GridDensity<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::<S>::uniform(dim, cells_per_axis, cast(box_side / cells_per_axis as f64));
    let mut values: Vec<f64> = (0..grid.cell_count()).map(|_| 0.25 + rng.gen::<f64>()).collect();
    let vol = box_side.powi(dim as i32) / grid.cell_count() as f64;
    let total: f64 = values.iter().sum::<f64>() * vol;
    for v in &mut values {
        *v *= mass / total;
    }
    GridDensity { grid, values: values.into_iter().map(cast).collect() }
}

/// One sandwich setting: a density, an interaction and a temperature.
pub struct SandwichCase<S> {
    pub label: String,
    pub rho: GridDensity<S>,
    pub w: PotentialSpec<S>,
    pub temperature: S,
    pub ensemble: Ensemble,
}

/// The 1D desk suite: random densities for alpha in {1, 2}, mass in {2, 3}
/// and T in {0, 1}, `per_setting` seeds each.
pub fn desk_1d<S: Scalar>(per_setting: usize) -> Vec<SandwichCase<S>> {
    let mut cases = Vec::new();
    for &alpha in &[1.0, 2.0] {
        for &mass in &[2.0, 3.0] {
            for &temperature in &[0.0, 1.0] {
                for seed in 0..per_setting as u64 {
                    let rho = random_compact_density(1, 16, 4.0, 1000 + seed, mass);
                    let w = PotentialSpec::power_law(S::one(), cast(0.5), cast(alpha), cast(3.0))
                        .expect("valid power law");
                    cases.push(SandwichCase {
                        label: format!("d1-alpha{alpha}-m{mass}-T{temperature}-s{seed}"),
                        rho,
                        w,
                        temperature: cast(temperature),
                        ensemble: Ensemble::Canonical,
                    });
                }
            }
        }
    }
    cases
}

/// The 2D desk suite: alpha = 2, mass 2, T = 0.
pub fn desk_2d<S: Scalar>(per_setting: usize) -> Vec<SandwichCase<S>> {
    (0..per_setting as u64)
        .map(|seed| {
            let rho = random_compact_density(2, 6, 6.0, 2000 + seed, 2.0);
            let w = PotentialSpec::power_law(S::one(), cast(0.5), cast(2.0), cast(3.0))
                .expect("valid power law");
            SandwichCase {
                label: format!("d2-alpha2-m2-T0-s{seed}"),
                rho,
                w,
                temperature: S::zero(),
                ensemble: Ensemble::Canonical,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_densities_have_requested_mass() {
        let rho: GridDensity<f64> = random_compact_density(1, 16, 4.0, 3, 2.0);
        assert!((rho.mass() - 2.0).abs() < 1e-12);
        let rho: GridDensity<f64> = random_compact_density(2, 6, 6.0, 3, 2.0);
        assert!((rho.mass() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn suite_is_deterministic() {
        let a: GridDensity<f64> = random_compact_density(1, 16, 4.0, 7, 2.0);
        let b: GridDensity<f64> = random_compact_density(1, 16, 4.0, 7, 2.0);
        assert_eq!(a.values, b.values);
    }
}

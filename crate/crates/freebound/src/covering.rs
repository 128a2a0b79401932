//! Besicovitch covers of a density's support: cubes with family-wise minimal
//! distance (at most 3^d (4^d + 1) families, multiplicity at most 2^d) and
//! greedily maximized balls.

use crate::density::GridDensity;
use crate::geometry::{cube_distance, distance};
use crate::{cast, Error, Result, Scalar};

#[derive(Debug, Clone)]
pub struct Cube<S> {
    pub center: Vec<S>,
    pub side: S,
    pub family: usize,
}

#[derive(Debug, Clone)]
pub struct CubeCover<S> {
    pub cubes: Vec<Cube<S>>,
    pub family_count: usize,
    /// Multiplicity eta(cell) = number of cubes containing the cell center,
    /// for every grid cell (zero off the covered region).
    pub multiplicity: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Ball<S> {
    pub center: Vec<S>,
    pub radius: S,
    /// Local radius R at the center, before scaling by epsilon.
    pub local_radius: S,
}

#[derive(Debug, Clone)]
pub struct BallCover<S> {
    pub balls: Vec<Ball<S>>,
    pub epsilon: S,
    /// Largest number of balls covering one support cell center.
    pub max_multiplicity: usize,
    /// Multiplicity phi(cell) for every grid cell.
    pub multiplicity: Vec<usize>,
}

/// Partition of unity subordinate to a cover: per block, the list of
/// (cell, weight) pairs; weights over each support cell sum to one.
#[derive(Debug, Clone)]
pub struct Partition<S> {
    pub blocks: Vec<Vec<(usize, S)>>,
}

fn point_in_cube<S: Scalar>(p: &[S], center: &[S], side: S) -> bool {
    let half = side * cast::<S>(0.5);
    p.iter().zip(center).all(|(x, c)| (*x - *c).abs() <= half)
}

/// Besicovitch cube cover with minimal distance. Greedy over support cells
/// in decreasing cube length, then greedy coloring of the "too close"
/// conflict graph in the same order; the post-hoc validator enforces every
/// stated invariant.
pub fn besicovitch_cubes<S: Scalar>(rho: &GridDensity<S>) -> Result<CubeCover<S>> {
    let mass = rho.mass();
    if mass <= S::one() {
        return Err(Error::MassTooSmall { mass: mass.to_f64().unwrap_or(f64::NAN), needed: 1.0 });
    }
    let support = rho.support_cells();
    let lengths: Vec<S> = support
        .iter()
        .map(|&c| rho.local_cube_length(&rho.grid.center(c)))
        .collect::<Result<_>>()?;

    // Greedy selection: largest cube length first, ties by cell index.
    let mut covered = vec![false; support.len()];
    let mut chosen: Vec<(Vec<S>, S)> = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for (i, &cell) in support.iter().enumerate() {
            if covered[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if lengths[i] > lengths[b] || (lengths[i] == lengths[b] && cell < support[b]) {
                        best = Some(i);
                    }
                }
            }
        }
        let Some(pick) = best else { break };
        let center = rho.grid.center(support[pick]);
        let side = lengths[pick];
        for (i, &cell) in support.iter().enumerate() {
            if !covered[i] && point_in_cube(&rho.grid.center(cell), &center, side) {
                covered[i] = true;
            }
        }
        chosen.push((center, side));
    }

    // Conflict graph: cubes closer than half the smaller side length.
    let m = chosen.len();
    let half = cast::<S>(0.5);
    let mut family = vec![usize::MAX; m];
    let mut family_count = 0usize;
    for i in 0..m {
        let mut used = vec![false; family_count + 1];
        for j in 0..i {
            let gap = cube_distance(&chosen[i].0, chosen[i].1, &chosen[j].0, chosen[j].1);
            if gap < half * chosen[i].1.min(chosen[j].1) && family[j] < used.len() {
                used[family[j]] = true;
            }
        }
        let color = (0..).find(|&c| c >= used.len() || !used[c]).unwrap();
        family[i] = color;
        if color + 1 > family_count {
            family_count = color + 1;
        }
    }

    let cubes: Vec<Cube<S>> = chosen
        .into_iter()
        .zip(family)
        .map(|((center, side), family)| Cube { center, side, family })
        .collect();

    let mut multiplicity = vec![0usize; rho.grid.cell_count()];
    for &cell in &support {
        let p = rho.grid.center(cell);
        multiplicity[cell] = cubes.iter().filter(|q| point_in_cube(&p, &q.center, q.side)).count();
    }

    let cover = CubeCover { cubes, family_count, multiplicity };
    validate_cube_cover(&cover, rho)?;
    Ok(cover)
}

/// Asserts every CubeCover invariant; failure indicates an algorithmic bug.
pub fn validate_cube_cover<S: Scalar>(cover: &CubeCover<S>, rho: &GridDensity<S>) -> Result<()> {
    let d = rho.dim();
    let k_max = (3f64.powi(d as i32) * (4f64.powi(d as i32) + 1.0)) as usize;
    if cover.family_count > k_max {
        return Err(Error::CoverInvariantViolated(format!(
            "{} families exceed the bound {}",
            cover.family_count, k_max
        )));
    }
    let mult_max = 2usize.pow(d as u32);
    for &cell in &rho.support_cells() {
        let eta = cover.multiplicity[cell];
        if eta == 0 {
            return Err(Error::CoverInvariantViolated(format!("support cell {cell} is uncovered")));
        }
        if eta > mult_max {
            return Err(Error::CoverInvariantViolated(format!(
                "multiplicity {eta} at cell {cell} exceeds 2^d = {mult_max}"
            )));
        }
    }
    // Family separation, with one cell diagonal of slack for the grid snap.
    let half = cast::<S>(0.5);
    let slack = rho.grid.cell_diagonal();
    for i in 0..cover.cubes.len() {
        for j in (i + 1)..cover.cubes.len() {
            let (a, b) = (&cover.cubes[i], &cover.cubes[j]);
            if a.family != b.family {
                continue;
            }
            let gap = cube_distance(&a.center, a.side, &b.center, b.side);
            if gap + slack < half * a.side.min(b.side) {
                return Err(Error::CoverInvariantViolated(format!(
                    "family {} cubes {i} and {j} at distance {} below half the minimal side {}",
                    a.family,
                    gap.to_f64().unwrap_or(f64::NAN),
                    (half * a.side.min(b.side)).to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
    }
    Ok(())
}

/// Partition of unity chi = 1_Q / eta over support cells.
pub fn partition_of_unity<S: Scalar>(cover: &CubeCover<S>, rho: &GridDensity<S>) -> Partition<S> {
    let blocks = cover
        .cubes
        .iter()
        .map(|q| {
            rho.support_cells()
                .into_iter()
                .filter(|&cell| point_in_cube(&rho.grid.center(cell), &q.center, q.side))
                .map(|cell| (cell, S::one() / cast::<S>(cover.multiplicity[cell] as f64)))
                .collect()
        })
        .collect();
    Partition { blocks }
}

impl<S: Scalar> Partition<S> {
    /// Per-cell sum of weights over all blocks.
    pub fn weight_sums(&self, cell_count: usize) -> Vec<S> {
        let mut sums = vec![S::zero(); cell_count];
        for block in &self.blocks {
            for &(cell, w) in block {
                sums[cell] += w;
            }
        }
        sums
    }
}

/// Ball cover from the inductive greedy construction: repeatedly pick the
/// uncovered support cell with the largest local radius R and add the ball
/// of radius epsilon R around it. Requires 0 < epsilon < 1/9.
pub fn besicovitch_balls<S: Scalar>(rho: &GridDensity<S>, epsilon: S) -> Result<BallCover<S>> {
    if epsilon <= S::zero() || epsilon >= S::one() / cast(9.0) {
        return Err(Error::EpsilonOutOfRange(epsilon.to_f64().unwrap_or(f64::NAN)));
    }
    let mass = rho.mass();
    if mass <= S::one() {
        return Err(Error::MassTooSmall { mass: mass.to_f64().unwrap_or(f64::NAN), needed: 1.0 });
    }
    let support = rho.support_cells();
    let radii: Vec<S> = support
        .iter()
        .map(|&c| rho.local_radius(&rho.grid.center(c)))
        .collect::<Result<_>>()?;

    let mut covered = vec![false; support.len()];
    let mut balls: Vec<Ball<S>> = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for (i, &cell) in support.iter().enumerate() {
            if covered[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if radii[i] > radii[b] || (radii[i] == radii[b] && cell < support[b]) {
                        best = Some(i);
                    }
                }
            }
        }
        let Some(pick) = best else { break };
        let center = rho.grid.center(support[pick]);
        let radius = epsilon * radii[pick];
        for (i, &cell) in support.iter().enumerate() {
            if !covered[i] && distance(&rho.grid.center(cell), &center) <= radius {
                covered[i] = true;
            }
        }
        balls.push(Ball { center, radius, local_radius: radii[pick] });
    }

    let mut multiplicity = vec![0usize; rho.grid.cell_count()];
    let mut max_multiplicity = 0usize;
    for &cell in &support {
        let p = rho.grid.center(cell);
        let m = balls.iter().filter(|b| distance(&p, &b.center) <= b.radius).count();
        multiplicity[cell] = m;
        if m > max_multiplicity {
            max_multiplicity = m;
        }
    }

    let cover = BallCover { balls, epsilon, max_multiplicity, multiplicity };
    validate_ball_cover(&cover, rho)?;
    Ok(cover)
}

/// Asserts the pairwise distance bound |y_j - y_k| >= max(eps R_j, eps R_k)
/// and full coverage of the support.
pub fn validate_ball_cover<S: Scalar>(cover: &BallCover<S>, rho: &GridDensity<S>) -> Result<()> {
    for &cell in &rho.support_cells() {
        if cover.multiplicity[cell] == 0 {
            return Err(Error::CoverInvariantViolated(format!("support cell {cell} uncovered by balls")));
        }
    }
    let slack = cast::<S>(1e-12);
    for i in 0..cover.balls.len() {
        for j in (i + 1)..cover.balls.len() {
            let (a, b) = (&cover.balls[i], &cover.balls[j]);
            let dist = distance(&a.center, &b.center);
            if dist + slack < a.radius.max(b.radius) {
                return Err(Error::CoverInvariantViolated(format!(
                    "ball centers {i}, {j} at distance {} violate the max(eps R) separation {}",
                    dist.to_f64().unwrap_or(f64::NAN),
                    a.radius.max(b.radius).to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
    }
    Ok(())
}

/// Partition of unity chi_j = 1_{B_j} / phi over support cells.
pub fn ball_partition<S: Scalar>(cover: &BallCover<S>, rho: &GridDensity<S>) -> Partition<S> {
    let blocks = cover
        .balls
        .iter()
        .map(|b| {
            rho.support_cells()
                .into_iter()
                .filter(|&cell| distance(&rho.grid.center(cell), &b.center) <= b.radius)
                .map(|cell| (cell, S::one() / cast::<S>(cover.multiplicity[cell] as f64)))
                .collect()
        })
        .collect();
    Partition { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_1d(value: f64, len: f64, cells: usize) -> GridDensity<f64> {
        let grid = Grid::new(vec![cells], vec![len / cells as f64], vec![0.0]).unwrap();
        GridDensity::uniform(grid, value)
    }

    fn random_density(dim: usize, cells: usize, seed: u64, target_mass: f64) -> GridDensity<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::uniform(dim, cells, 4.0 / cells as f64);
        let mut values: Vec<f64> = (0..grid.cell_count()).map(|_| rng.gen::<f64>()).collect();
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        for v in &mut values {
            *v *= target_mass / mass;
        }
        GridDensity::new(grid, values).unwrap()
    }

    #[test]
    fn uniform_interval_cover() {
        let rho = uniform_1d(0.5, 8.0, 256);
        let cover = besicovitch_cubes(&rho).unwrap();
        assert!(cover.family_count <= 15);
        for &cell in &rho.support_cells() {
            assert!(cover.multiplicity[cell] <= 2);
        }
        // Interior cubes have the forced side length 1/(15 rho0).
        let interior: Vec<&Cube<f64>> = cover
            .cubes
            .iter()
            .filter(|q| q.center[0] > 1.0 && q.center[0] < 7.0)
            .collect();
        assert!(!interior.is_empty());
        for q in interior {
            assert!((q.side - 1.0 / 7.5).abs() < 2.0 * rho.grid.spacing[0], "side = {}", q.side);
        }
    }

    #[test]
    fn single_cell_mass_two() {
        let grid = Grid::new(vec![9], vec![0.5], vec![0.0]).unwrap();
        let mut values = vec![0.0; 9];
        values[4] = 4.0; // mass 2 in one cell
        let rho = GridDensity::new(grid, values).unwrap();
        let cover = besicovitch_cubes(&rho).unwrap();
        assert_eq!(cover.cubes.len(), 1);
        assert_eq!(cover.family_count, 1);
    }

    #[test]
    fn small_mass_is_rejected() {
        let rho = uniform_1d(0.125, 4.0, 16);
        assert!(matches!(besicovitch_cubes(&rho), Err(Error::MassTooSmall { .. })));
        assert!(matches!(besicovitch_balls(&rho, 0.05), Err(Error::MassTooSmall { .. })));
    }

    #[test]
    fn partition_weights_sum_to_one() {
        let rho = random_density(1, 64, 11, 2.5);
        let cover = besicovitch_cubes(&rho).unwrap();
        let partition = partition_of_unity(&cover, &rho);
        let sums = partition.weight_sums(rho.grid.cell_count());
        for &cell in &rho.support_cells() {
            assert!((sums[cell] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_cover_separation_and_coverage() {
        let rho = uniform_1d(0.5, 8.0, 128);
        let cover = besicovitch_balls(&rho, 0.05).unwrap();
        assert!(cover.balls.len() > 1);
        // Pairwise check is inside the validator; rerun it explicitly.
        validate_ball_cover(&cover, &rho).unwrap();

        // Two far-apart bumps: at least one ball per bump.
        let grid = Grid::new(vec![64], vec![0.25], vec![0.0]).unwrap();
        let mut values = vec![0.0; 64];
        for k in 4..12 {
            values[k] = 1.0;
        }
        for k in 52..60 {
            values[k] = 1.0;
        }
        let rho = GridDensity::new(grid, values).unwrap();
        let cover = besicovitch_balls(&rho, 0.08).unwrap();
        let left = cover.balls.iter().any(|b| b.center[0] < 4.0);
        let right = cover.balls.iter().any(|b| b.center[0] > 12.0);
        assert!(left && right);
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let rho = uniform_1d(0.5, 8.0, 64);
        assert!(matches!(besicovitch_balls(&rho, 0.2), Err(Error::EpsilonOutOfRange(_))));
        assert!(matches!(besicovitch_balls(&rho, 0.0), Err(Error::EpsilonOutOfRange(_))));
    }

    #[test]
    fn validator_passes_on_random_densities() {
        for seed in 0..20 {
            let rho = random_density(1, 48, seed, 2.0 + (seed % 3) as f64);
            besicovitch_cubes(&rho).unwrap();
            besicovitch_balls(&rho, 0.05).unwrap();
        }
        for seed in 0..10 {
            let rho = random_density(2, 10, 100 + seed, 2.0);
            besicovitch_cubes(&rho).unwrap();
            besicovitch_balls(&rho, 0.05).unwrap();
        }
    }
}

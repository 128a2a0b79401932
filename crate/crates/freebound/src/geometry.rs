//! Rectangular grids and the handful of Euclidean constants the bounds use.

use crate::{cast, Error, Result, Scalar};
use serde::{Deserialize, Serialize};

/// Rectangular d-dimensional cell grid. Cells are indexed row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<S> {
    pub shape: Vec<usize>,
    pub spacing: Vec<S>,
    pub origin: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn new(shape: Vec<usize>, spacing: Vec<S>, origin: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.len() != spacing.len() || shape.len() != origin.len() {
            return Err(Error::InvalidInput(
                "shape, spacing and origin must have equal nonzero length".into(),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidInput("grid axes must have at least one cell".into()));
        }
        if spacing.iter().any(|h| *h <= S::zero()) {
            return Err(Error::InvalidInput("cell spacing must be positive".into()));
        }
        Ok(Self { shape, spacing, origin })
    }

    /// Uniform grid on a box, same spacing on every axis.
    pub fn uniform(dim: usize, cells_per_axis: usize, spacing: S) -> Self {
        Self {
            shape: vec![cells_per_axis; dim],
            spacing: vec![spacing; dim],
            origin: vec![S::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn cell_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> S {
        self.spacing.iter().fold(S::one(), |acc, h| acc * *h)
    }

    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        let mut rest = cell;
        let mut idx = vec![0; self.dim()];
        for ax in (0..self.dim()).rev() {
            idx[ax] = rest % self.shape[ax];
            rest /= self.shape[ax];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for ax in 0..self.dim() {
            flat = flat * self.shape[ax] + idx[ax];
        }
        flat
    }

    /// Coordinates of a cell center.
    pub fn center(&self, cell: usize) -> Vec<S> {
        let idx = self.multi_index(cell);
        (0..self.dim())
            .map(|ax| self.origin[ax] + self.spacing[ax] * (cast::<S>(idx[ax] as f64) + cast(0.5)))
            .collect()
    }

    /// Euclidean distance between two cell centers.
    pub fn center_distance(&self, a: usize, b: usize) -> S {
        let ca = self.center(a);
        let cb = self.center(b);
        distance(&ca, &cb)
    }

    /// Length of the diagonal of a single cell.
    pub fn cell_diagonal(&self) -> S {
        self.spacing.iter().map(|h| *h * *h).sum::<S>().sqrt()
    }

    /// Diameter of the whole grid box.
    pub fn diameter(&self) -> S {
        (0..self.dim())
            .map(|ax| {
                let len = self.spacing[ax] * cast::<S>(self.shape[ax] as f64);
                len * len
            })
            .sum::<S>()
            .sqrt()
    }

    pub fn min_spacing(&self) -> S {
        self.spacing.iter().fold(S::infinity(), |m, h| m.min(*h))
    }
}

pub fn distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<S>()
        .sqrt()
}

/// Volume of the unit ball in dimension d.
pub fn unit_ball_volume<S: Scalar>(d: usize) -> S {
    // |B_d| = pi^(d/2) / Gamma(d/2 + 1), evaluated by the integer/half-integer
    // Gamma recursion.
    cast(std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d + 2))
}

/// Area of the unit sphere S^{d-1} in dimension d.
pub fn unit_sphere_area<S: Scalar>(d: usize) -> S {
    unit_ball_volume::<S>(d) * cast(d as f64)
}

/// Gamma(n/2) for integer n >= 1.
fn gamma_half(n: usize) -> f64 {
    match n {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        _ => (n as f64 / 2.0 - 1.0) * gamma_half(n - 2),
    }
}

/// Euclidean distance between two axis-aligned cubes given by center and side.
pub fn cube_distance<S: Scalar>(ca: &[S], la: S, cb: &[S], lb: S) -> S {
    let half = cast::<S>(0.5);
    let mut sq = S::zero();
    for ax in 0..ca.len() {
        let gap = (ca[ax] - cb[ax]).abs() - half * (la + lb);
        if gap > S::zero() {
            sq += gap * gap;
        }
    }
    sq.sqrt()
}

/// ln(n!) without overflow.
pub fn ln_factorial<S: Scalar>(n: usize) -> S {
    let mut acc = 0.0f64;
    for k in 2..=n {
        acc += (k as f64).ln();
    }
    cast(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes_match_closed_forms() {
        assert!((unit_ball_volume::<f64>(1) - 2.0).abs() < 1e-14);
        assert!((unit_ball_volume::<f64>(2) - std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_ball_volume::<f64>(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14);
        assert!((unit_sphere_area::<f64>(1) - 2.0).abs() < 1e-14);
        assert!((unit_sphere_area::<f64>(2) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_sphere_area::<f64>(3) - 4.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn flat_and_multi_index_round_trip() {
        let g = Grid::<f64>::uniform(2, 5, 0.5);
        for cell in 0..g.cell_count() {
            assert_eq!(g.flat_index(&g.multi_index(cell)), cell);
        }
    }

    #[test]
    fn cube_distance_of_touching_cubes_is_zero() {
        let d = cube_distance(&[0.0f64], 1.0, &[1.0], 1.0);
        assert_eq!(d, 0.0);
        let d = cube_distance(&[0.0f64, 0.0], 1.0, &[2.0, 0.0], 1.0);
        assert!((d - 1.0).abs() < 1e-14);
    }
}

//! Grid densities and their local geometry: the radius R(x) carrying unit
//! mass, the cube length l(x) carrying the Besicovitch threshold mass, the
//! Hardy-Littlewood maximal function and the 1D quantile function.

use crate::geometry::{distance, Grid};
use crate::{cast, Error, Result, Scalar};

/// Nonnegative density sampled as piecewise-constant values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<S> {
    pub grid: Grid<S>,
    /// Density value (mass per volume) of each cell, row-major.
    pub values: Vec<S>,
}

/// How a cell meets a ball or cube: fully inside, fully outside, or cut by
/// the boundary. Boundary cells are weighted by a fixed deterministic 3^d
/// point subsample.
enum CellCoverage<S> {
    Inside,
    Outside,
    Fraction(S),
}

impl<S: Scalar> GridDensity<S> {
    pub fn new(grid: Grid<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} cell values, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < S::zero()) {
            return Err(Error::InvalidInput("density values must be finite and nonnegative".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: Grid<S>, value: S) -> Self {
        let n = grid.cell_count();
        Self { grid, values: vec![value; n] }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Total mass of a single cell.
    pub fn cell_mass(&self, cell: usize) -> S {
        self.values[cell] * self.grid.cell_volume()
    }

    /// N = integral of the density.
    pub fn mass(&self) -> S {
        self.values.iter().copied().sum::<S>() * self.grid.cell_volume()
    }

    /// Integral of rho^p.
    pub fn integral_power(&self, p: S) -> S {
        self.values
            .iter()
            .map(|v| if *v > S::zero() { v.powf(p) } else { S::zero() })
            .sum::<S>()
            * self.grid.cell_volume()
    }

    /// Integral of rho^2 (log(c rho))_+ , the log-variant weight used by the
    /// alpha = d branches.
    pub fn integral_sq_log_plus(&self, c: S) -> S {
        self.values
            .iter()
            .map(|v| {
                if *v > S::zero() {
                    let l = (c * *v).ln();
                    if l > S::zero() {
                        *v * *v * l
                    } else {
                        S::zero()
                    }
                } else {
                    S::zero()
                }
            })
            .sum::<S>()
            * self.grid.cell_volume()
    }

    /// Integral of rho log rho with the 0 log 0 = 0 convention.
    pub fn entropy_integral(&self) -> S {
        self.values
            .iter()
            .map(|v| if *v > S::zero() { *v * v.ln() } else { S::zero() })
            .sum::<S>()
            * self.grid.cell_volume()
    }

    /// Cells with nonzero value.
    pub fn support_cells(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&c| self.values[c] > S::zero()).collect()
    }

    fn ball_coverage(&self, cell: usize, x: &[S], r: S) -> CellCoverage<S> {
        let idx = self.grid.multi_index(cell);
        // Nearest and farthest point of the cell box from x, per axis.
        let mut near_sq = S::zero();
        let mut far_sq = S::zero();
        for ax in 0..self.dim() {
            let h = self.grid.spacing[ax];
            let lo = self.grid.origin[ax] + h * cast::<S>(idx[ax] as f64);
            let hi = lo + h;
            let c = x[ax];
            let near = if c < lo {
                lo - c
            } else if c > hi {
                c - hi
            } else {
                S::zero()
            };
            let far = (c - lo).abs().max((hi - c).abs());
            near_sq += near * near;
            far_sq += far * far;
        }
        if far_sq.sqrt() <= r {
            CellCoverage::Inside
        } else if near_sq.sqrt() > r {
            CellCoverage::Outside
        } else {
            // 3^d deterministic subsample at center offsets {-h/3, 0, h/3}.
            let d = self.dim();
            let total = 3usize.pow(d as u32);
            let center = self.grid.center(cell);
            let mut inside = 0usize;
            for code in 0..total {
                let mut rest = code;
                let mut p = center.clone();
                for ax in 0..d {
                    let o = rest % 3;
                    rest /= 3;
                    let off = cast::<S>(o as f64 - 1.0) * self.grid.spacing[ax] / cast(3.0);
                    p[ax] += off;
                }
                if distance(&p, x) <= r {
                    inside += 1;
                }
            }
            CellCoverage::Fraction(cast::<S>(inside as f64 / total as f64))
        }
    }

    fn cube_coverage(&self, cell: usize, x: &[S], side: S) -> CellCoverage<S> {
        let idx = self.grid.multi_index(cell);
        let half = cast::<S>(0.5) * side;
        let mut all_inside = true;
        let mut any_inside = true;
        for ax in 0..self.dim() {
            let h = self.grid.spacing[ax];
            let lo = self.grid.origin[ax] + h * cast::<S>(idx[ax] as f64);
            let hi = lo + h;
            let near = if x[ax] < lo {
                lo - x[ax]
            } else if x[ax] > hi {
                x[ax] - hi
            } else {
                S::zero()
            };
            let far = (x[ax] - lo).abs().max((hi - x[ax]).abs());
            if far > half {
                all_inside = false;
            }
            if near > half {
                any_inside = false;
            }
        }
        if all_inside {
            CellCoverage::Inside
        } else if !any_inside {
            CellCoverage::Outside
        } else {
            let d = self.dim();
            let total = 3usize.pow(d as u32);
            let center = self.grid.center(cell);
            let mut inside = 0usize;
            for code in 0..total {
                let mut rest = code;
                let mut ok = true;
                for ax in 0..d {
                    let o = rest % 3;
                    rest /= 3;
                    let off = cast::<S>(o as f64 - 1.0) * self.grid.spacing[ax] / cast(3.0);
                    if (center[ax] + off - x[ax]).abs() > half {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    inside += 1;
                }
            }
            CellCoverage::Fraction(cast::<S>(inside as f64 / total as f64))
        }
    }

    /// Mass of rho in the ball B(x, r); boundary cells enter fractionally.
    pub fn ball_mass(&self, x: &[S], r: S) -> S {
        self.ball_integral_power(x, r, S::one())
    }

    /// Volume of B(x, r) clipped to the grid box, with the same fractional
    /// boundary-cell estimate as `ball_mass`. Ball averages formed as
    /// mass/volume with this estimate are exact for uniform densities.
    pub fn ball_clipped_volume(&self, x: &[S], r: S) -> S {
        let vol = self.grid.cell_volume();
        let mut acc = S::zero();
        for cell in 0..self.values.len() {
            match self.ball_coverage(cell, x, r) {
                CellCoverage::Inside => acc += vol,
                CellCoverage::Outside => {}
                CellCoverage::Fraction(f) => acc += vol * f,
            }
        }
        acc
    }

    /// Integral of rho^p over the ball B(x, r).
    pub fn ball_integral_power(&self, x: &[S], r: S, p: S) -> S {
        let vol = self.grid.cell_volume();
        let mut acc = S::zero();
        for cell in 0..self.values.len() {
            let v = self.values[cell];
            if v <= S::zero() {
                continue;
            }
            let vp = if p == S::one() { v } else { v.powf(p) };
            match self.ball_coverage(cell, x, r) {
                CellCoverage::Inside => acc += vp * vol,
                CellCoverage::Outside => {}
                CellCoverage::Fraction(f) => acc += vp * vol * f,
            }
        }
        acc
    }

    /// Mass of rho in the axis-aligned cube of side length `side` centered at x.
    pub fn cube_mass(&self, x: &[S], side: S) -> S {
        self.cube_integral_power(x, side, S::one())
    }

    /// Volume of the cube of side `side` at x clipped to the grid box, with
    /// the same fractional boundary-cell estimate as `cube_mass`.
    pub fn cube_clipped_volume(&self, x: &[S], side: S) -> S {
        let vol = self.grid.cell_volume();
        let mut acc = S::zero();
        for cell in 0..self.values.len() {
            match self.cube_coverage(cell, x, side) {
                CellCoverage::Inside => acc += vol,
                CellCoverage::Outside => {}
                CellCoverage::Fraction(f) => acc += vol * f,
            }
        }
        acc
    }

    /// Integral of rho^p over the cube of side `side` centered at x.
    pub fn cube_integral_power(&self, x: &[S], side: S, p: S) -> S {
        let vol = self.grid.cell_volume();
        let mut acc = S::zero();
        for cell in 0..self.values.len() {
            let v = self.values[cell];
            if v <= S::zero() {
                continue;
            }
            let vp = if p == S::one() { v } else { v.powf(p) };
            match self.cube_coverage(cell, x, side) {
                CellCoverage::Inside => acc += vp * vol,
                CellCoverage::Outside => {}
                CellCoverage::Fraction(f) => acc += vp * vol * f,
            }
        }
        acc
    }

    /// Largest R with ball mass one at x, by bisection on the monotone mass
    /// function; returns the upper end of the final bracket.
    pub fn local_radius(&self, x: &[S]) -> Result<S> {
        let mass = self.mass();
        if mass <= S::one() {
            return Err(Error::MassTooSmall { mass: mass.to_f64().unwrap_or(f64::NAN), needed: 1.0 });
        }
        let target = S::one();
        self.bisect_largest(target, |r| self.ball_mass(x, r), x)
    }

    /// Largest l with cube mass 1/(3^d (4^d + 1)) at x.
    pub fn local_cube_length(&self, x: &[S]) -> Result<S> {
        let d = self.dim();
        let threshold = besicovitch_threshold::<S>(d);
        let mass = self.mass();
        if mass <= threshold {
            return Err(Error::MassTooSmall {
                mass: mass.to_f64().unwrap_or(f64::NAN),
                needed: threshold.to_f64().unwrap_or(f64::NAN),
            });
        }
        self.bisect_largest(threshold, |side| self.cube_mass(x, side), x)
    }

    /// Bisection for the largest size at which the (nondecreasing) mass
    /// function still does not exceed `target`.
    fn bisect_largest<F: Fn(S) -> S>(&self, target: S, mass_at: F, x: &[S]) -> Result<S> {
        // Upper bracket: the grid box seen from x is contained in a ball of
        // this radius, so mass saturates there.
        let mut far = S::zero();
        for ax in 0..self.dim() {
            let lo = self.grid.origin[ax];
            let hi = lo + self.grid.spacing[ax] * cast::<S>(self.grid.shape[ax] as f64);
            let f = (x[ax] - lo).abs().max((x[ax] - hi).abs());
            far += f * f;
        }
        // Factor 2 covers the cube case where `size` is a side length.
        let mut hi = far.sqrt() * cast::<S>(2.0) + self.grid.cell_diagonal();
        if mass_at(hi) <= target {
            return Err(Error::OutOfRange(format!(
                "mass never exceeds the target within the grid box around {:?}",
                x.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>()
            )));
        }
        let mut lo = S::zero();
        // Relative tolerance 1e-10, floored at a few machine epsilons so the
        // loop terminates for narrower scalar types.
        let tol = cast::<S>(1e-10).max(S::epsilon() * cast(8.0));
        while hi - lo > tol * hi.max(S::one()) {
            let mid = (lo + hi) * cast(0.5);
            if mass_at(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Hardy-Littlewood maximal function at x, scanned over 64 geometrically
    /// spaced radii from half the minimal spacing to the grid diameter. A
    /// finite scan can only under-resolve the true supremum over radii, so
    /// callers use it on the large side of inequalities like
    /// 1/R <= (|B_1| M)^{1/d}. Each average divides the subsampled ball mass
    /// by the equally subsampled clipped ball volume, which keeps the value
    /// exact on uniform densities and at worst inflates it where the ball
    /// leaves the grid box.
    pub fn maximal_function(&self, x: &[S]) -> S {
        let r_min = self.grid.min_spacing() * cast::<S>(0.5);
        let r_max = self.grid.diameter() + self.grid.cell_diagonal();
        let steps = 64usize;
        let ratio = (r_max / r_min).powf(S::one() / cast::<S>((steps - 1) as f64));
        let mut best = S::zero();
        let mut r = r_min;
        for _ in 0..steps {
            let vol = self.ball_clipped_volume(x, r);
            if vol > S::zero() {
                let avg = self.ball_mass(x, r) / vol;
                if avg > best {
                    best = avg;
                }
            }
            r = r * ratio;
        }
        best
    }

    /// Cumulative mass strictly left of coordinate x (1D only).
    pub fn cumulative_1d(&self, x: S) -> Result<S> {
        if self.dim() != 1 {
            return Err(Error::InvalidInput("cumulative_1d requires d = 1".into()));
        }
        let h = self.grid.spacing[0];
        let mut acc = S::zero();
        for cell in 0..self.values.len() {
            let lo = self.grid.origin[0] + h * cast::<S>(cell as f64);
            let hi = lo + h;
            if x >= hi {
                acc += self.values[cell] * h;
            } else if x > lo {
                acc += self.values[cell] * (x - lo);
                break;
            } else {
                break;
            }
        }
        Ok(acc)
    }

    /// Largest x(t) with cumulative mass t (1D only). At plateaus of the
    /// cumulative function the right edge is returned.
    pub fn quantile_1d(&self, t: S) -> Result<S> {
        if self.dim() != 1 {
            return Err(Error::InvalidInput("quantile_1d requires d = 1".into()));
        }
        let total = self.mass();
        if t <= S::zero() || t >= total {
            return Err(Error::OutOfRange(format!("t = {t} outside (0, {total})")));
        }
        let h = self.grid.spacing[0];
        let n = self.values.len();
        // prefix[k] = mass of the first k cells
        let mut prefix = vec![S::zero(); n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] + self.values[k] * h;
        }
        // Largest k with prefix[k] <= t; zero cells after an exact hit push
        // the quantile to the right edge of the plateau.
        let mut k = 0usize;
        for j in 0..=n {
            if prefix[j] <= t {
                k = j;
            } else {
                break;
            }
        }
        let left = self.grid.origin[0] + h * cast::<S>(k as f64);
        if prefix[k] == t || k == n {
            Ok(left)
        } else {
            Ok(left + (t - prefix[k]) / self.values[k])
        }
    }
}

/// The Besicovitch cube-mass threshold 1/(3^d (4^d + 1)).
pub fn besicovitch_threshold<S: Scalar>(d: usize) -> S {
    let three_d = 3f64.powi(d as i32);
    let four_d = 4f64.powi(d as i32);
    cast(1.0 / (three_d * (four_d + 1.0)))
}

/// Local geometry of a density: per-cell local radius, cube length and
/// maximal function, plus the global minimal radius R_rho over the support.
#[derive(Debug, Clone)]
pub struct LocalGeometry<S> {
    /// Local radius R at each support cell center, indexed like `cells`.
    pub radius: Vec<S>,
    /// Local cube length l at each support cell center.
    pub cube_length: Vec<S>,
    /// Maximal function at each support cell center.
    pub maximal: Vec<S>,
    /// Support cell indices the vectors above refer to.
    pub cells: Vec<usize>,
    /// min over the support of R(x).
    pub min_radius: S,
}

impl<S: Scalar> LocalGeometry<S> {
    pub fn of(rho: &GridDensity<S>) -> Result<Self> {
        let cells = rho.support_cells();
        if cells.is_empty() {
            return Err(Error::MassTooSmall { mass: 0.0, needed: 1.0 });
        }
        let mut radius = Vec::with_capacity(cells.len());
        let mut cube_length = Vec::with_capacity(cells.len());
        let mut maximal = Vec::with_capacity(cells.len());
        let mut min_radius = S::infinity();
        for &cell in &cells {
            let x = rho.grid.center(cell);
            let r = rho.local_radius(&x)?;
            let l = rho.local_cube_length(&x)?;
            radius.push(r);
            cube_length.push(l);
            maximal.push(rho.maximal_function(&x));
            if r < min_radius {
                min_radius = r;
            }
        }
        Ok(Self { radius, cube_length, maximal, cells, min_radius })
    }
}

/// Minimal local radius R_rho = min over the support of R(x).
pub fn min_local_radius<S: Scalar>(rho: &GridDensity<S>) -> Result<S> {
    let mut min = S::infinity();
    for cell in rho.support_cells() {
        let x = rho.grid.center(cell);
        let r = rho.local_radius(&x)?;
        if r < min {
            min = r;
        }
    }
    if min.is_finite() {
        Ok(min)
    } else {
        Err(Error::MassTooSmall { mass: 0.0, needed: 1.0 })
    }
}

//! Trial states behind the upper bounds: the 1D interval-splitting state,
//! the Monge quantile state, the Besicovitch occupied-or-vacuum trial, the
//! optimal-transport state with its block regularization, and the smeared
//! floating crystal for hard cores.

use crate::bounds::PackingConstants;
use crate::covering::{ball_partition, besicovitch_balls, BallCover, CubeCover};
use crate::density::GridDensity;
use crate::geometry::Grid;
use crate::oracle::simplex::{self, Column, Lp};
use crate::states::{
    block_approximation, geometric_localization, CanonicalState, GcConvexCombination,
    GrandCanonicalState, Mixture, MixtureTerm, OneBody, OneBodyEntry, SparseJoint,
};
use crate::{cast, Error, Result, Scalar};
use std::collections::BTreeMap;

/// Alternating 1D intervals carrying density mass 1/2 each.
#[derive(Debug, Clone)]
pub struct IntervalSplit<S> {
    /// 2N interval endpoints pairs (lo, hi), in order; odd-indexed intervals
    /// (0, 2, ...) form one family, even-indexed the other.
    pub intervals: Vec<(S, S)>,
}

impl<S: Scalar> IntervalSplit<S> {
    pub fn odd(&self) -> Vec<(S, S)> {
        self.intervals.iter().copied().step_by(2).collect()
    }

    pub fn even(&self) -> Vec<(S, S)> {
        self.intervals.iter().copied().skip(1).step_by(2).collect()
    }
}

fn integer_mass<S: Scalar>(rho: &GridDensity<S>) -> Result<usize> {
    let mass = rho.mass();
    let n = mass.round();
    if (mass - n).abs() > cast(1e-9) || n < S::one() {
        return Err(Error::NonIntegerMass(mass.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(n.to_f64().unwrap_or(0.0) as usize)
}

/// Split the support into 2N consecutive intervals of mass 1/2 via the
/// quantile function.
pub fn split_1d<S: Scalar>(rho: &GridDensity<S>) -> Result<IntervalSplit<S>> {
    if rho.dim() != 1 {
        return Err(Error::InvalidInput("interval splitting requires d = 1".into()));
    }
    let n = integer_mass(rho)?;
    let mass = rho.mass();
    let mut cuts = Vec::with_capacity(2 * n + 1);
    // Left edge of the support.
    let h = rho.grid.spacing[0];
    let first = rho
        .support_cells()
        .first()
        .map(|&c| rho.grid.origin[0] + h * cast::<S>(c as f64))
        .ok_or(Error::MassTooSmall { mass: 0.0, needed: 1.0 })?;
    cuts.push(first);
    for k in 1..(2 * n) {
        let t = mass * cast::<S>(k as f64) / cast(2.0 * n as f64);
        cuts.push(rho.quantile_1d(t)?);
    }
    let last_cell = *rho.support_cells().last().unwrap();
    cuts.push(rho.grid.origin[0] + h * cast::<S>((last_cell + 1) as f64));
    let intervals = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(IntervalSplit { intervals })
}

/// Density restricted to [lo, hi), rescaled to a probability. Straddling
/// cells keep their exact sub-interval geometry.
fn one_body_from_interval<S: Scalar>(rho: &GridDensity<S>, lo: S, hi: S) -> Option<OneBody<S>> {
    let h = rho.grid.spacing[0];
    let mut entries = Vec::new();
    let mut total = S::zero();
    for cell in 0..rho.values.len() {
        let v = rho.values[cell];
        if v <= S::zero() {
            continue;
        }
        let c_lo = rho.grid.origin[0] + h * cast::<S>(cell as f64);
        let c_hi = c_lo + h;
        let a = c_lo.max(lo);
        let b = c_hi.min(hi);
        if b <= a {
            continue;
        }
        let len = b - a;
        let mass = v * len;
        total += mass;
        entries.push(OneBodyEntry {
            cell,
            mass,
            volume: len,
            lo: vec![a],
            hi: vec![b],
            position: vec![(a + b) * cast::<S>(0.5)],
        });
    }
    if total <= S::zero() {
        return None;
    }
    for e in &mut entries {
        e.mass = e.mass / total;
    }
    Some(OneBody { entries })
}

/// The two-family interval trial state: one particle per odd interval at
/// density 2 rho, averaged with the even-interval copy.
pub fn trial_1d<S: Scalar>(rho: &GridDensity<S>, split: &IntervalSplit<S>) -> Result<CanonicalState<S>> {
    let n = integer_mass(rho)?;
    let make = |family: Vec<(S, S)>| -> Result<Vec<OneBody<S>>> {
        family
            .into_iter()
            .map(|(lo, hi)| {
                one_body_from_interval(rho, lo, hi)
                    .ok_or_else(|| Error::InvalidInput("empty split interval".into()))
            })
            .collect()
    };
    let odd = make(split.odd())?;
    let even = make(split.even())?;
    if odd.len() != n || even.len() != n {
        return Err(Error::InvalidInput("split does not carry N intervals per family".into()));
    }
    let half = cast::<S>(0.5);
    Ok(CanonicalState::Mixture(Mixture {
        grid: rho.grid.clone(),
        n,
        terms: vec![
            MixtureTerm { weight: half, factors: odd },
            MixtureTerm { weight: half, factors: even },
        ],
    }))
}

/// Monge state from the quantile map: particles at x(t), x(t+1), ...,
/// discretized with midpoint t-samples. Singular (zero entropy volume), so
/// meaningful at T = 0.
pub fn monge_state_1d<S: Scalar>(rho: &GridDensity<S>, t_samples: usize) -> Result<CanonicalState<S>> {
    if rho.dim() != 1 {
        return Err(Error::InvalidInput("the Monge state requires d = 1".into()));
    }
    let n = integer_mass(rho)?;
    let m = t_samples.max(1);
    let weight = S::one() / cast::<S>(m as f64);
    let mut terms = Vec::with_capacity(m);
    for i in 0..m {
        let t = (cast::<S>(i as f64) + cast(0.5)) / cast(m as f64);
        let mut factors = Vec::with_capacity(n);
        for k in 0..n {
            let x = rho.quantile_1d(t + cast(k as f64))?;
            factors.push(OneBody::point(&rho.grid, vec![x]));
        }
        terms.push(MixtureTerm { weight, factors });
    }
    Ok(CanonicalState::Mixture(Mixture { grid: rho.grid.clone(), n, terms }))
}

/// Occupied-or-vacuum product over disjoint blocks: block j holds one
/// particle with probability m_j (distributed as q_j) and is empty
/// otherwise. Sector expansion enumerates occupancy subsets.
pub fn occupancy_product<S: Scalar>(
    grid: &Grid<S>,
    blocks: &[(S, OneBody<S>)],
) -> Result<GrandCanonicalState<S>> {
    let k = blocks.len();
    if k > 22 {
        return Err(Error::TooLarge(format!("{k} occupancy blocks exceed the subset cap")));
    }
    let mut sector_terms: BTreeMap<usize, Vec<(S, Vec<usize>)>> = BTreeMap::new();
    for mask in 0usize..(1usize << k) {
        let mut weight = S::one();
        let mut subset = Vec::new();
        for (j, (mass, _)) in blocks.iter().enumerate() {
            if mask & (1 << j) != 0 {
                weight = weight * *mass;
                subset.push(j);
            } else {
                weight = weight * (S::one() - *mass);
            }
        }
        if weight > S::zero() {
            sector_terms.entry(subset.len()).or_default().push((weight, subset));
        }
    }
    let mut p0 = S::zero();
    let mut sectors = Vec::new();
    for (n, terms) in sector_terms {
        let total: S = terms.iter().map(|(w, _)| *w).sum();
        if n == 0 {
            p0 = total;
            continue;
        }
        let mixture_terms = terms
            .into_iter()
            .map(|(w, subset)| MixtureTerm {
                weight: w / total,
                factors: subset.iter().map(|&j| blocks[j].1.clone()).collect(),
            })
            .collect();
        sectors.push((
            total,
            CanonicalState::Mixture(Mixture { grid: grid.clone(), n, terms: mixture_terms }),
        ));
    }
    Ok(GrandCanonicalState { grid: grid.clone(), p0, sectors })
}

/// Grand-canonical Besicovitch trial: a uniform convex combination over the
/// cube families of occupied-or-vacuum products on the family's blocks.
pub fn gc_besicovitch_trial<S: Scalar>(
    rho: &GridDensity<S>,
    cover: &CubeCover<S>,
) -> Result<GcConvexCombination<S>> {
    let k_count = cover.family_count;
    let vol = rho.grid.cell_volume();
    let kf = cast::<S>(k_count as f64);
    let mut parts = Vec::with_capacity(k_count);
    for family in 0..k_count {
        let mut blocks = Vec::new();
        for cube in cover.cubes.iter().filter(|c| c.family == family) {
            // rho_j = K rho 1_Q / eta on the block's cells.
            let mut entries = Vec::new();
            let mut mass = S::zero();
            for &cell in &rho.support_cells() {
                let center = rho.grid.center(cell);
                let inside = center
                    .iter()
                    .zip(&cube.center)
                    .all(|(x, c)| (*x - *c).abs() <= cube.side * cast(0.5));
                if !inside {
                    continue;
                }
                let eta = cast::<S>(cover.multiplicity[cell] as f64);
                let m = kf * rho.values[cell] * vol / eta;
                if m > S::zero() {
                    mass += m;
                    let (lo, hi) = cell_bounds(&rho.grid, cell);
                    entries.push(OneBodyEntry {
                        cell,
                        mass: m,
                        volume: vol,
                        position: rho.grid.center(cell),
                        lo,
                        hi,
                    });
                }
            }
            if entries.is_empty() {
                continue;
            }
            if mass > S::one() + cast(1e-9) {
                return Err(Error::CubeMassExceedsOne(mass.to_f64().unwrap_or(f64::NAN)));
            }
            let mass = mass.min(S::one());
            for e in &mut entries {
                e.mass = e.mass / mass;
            }
            blocks.push((mass, OneBody { entries }));
        }
        parts.push((S::one() / kf, occupancy_product(&rho.grid, &blocks)?));
    }
    Ok(GcConvexCombination { parts })
}

fn cell_bounds<S: Scalar>(grid: &Grid<S>, cell: usize) -> (Vec<S>, Vec<S>) {
    let idx = grid.multi_index(cell);
    let mut lo = Vec::with_capacity(grid.dim());
    let mut hi = Vec::with_capacity(grid.dim());
    for ax in 0..grid.dim() {
        let l = grid.origin[ax] + grid.spacing[ax] * cast::<S>(idx[ax] as f64);
        lo.push(l);
        hi.push(l + grid.spacing[ax]);
    }
    (lo, hi)
}

/// Pairwise separation rule for the optimal-transport state support.
#[derive(Debug, Clone, Copy)]
pub enum SeparationRule<S> {
    /// |x_i - x_j| >= delta.
    FixedDelta(S),
    /// |x_i - x_j| >= max(R_rho, (R(x_i) + R(x_j)) / 3).
    LocalRadius,
}

/// Feasibility outcome of the transport solve.
#[derive(Debug)]
pub enum OtOutcome<S> {
    Feasible(CanonicalState<S>),
    /// The admissible set on this grid carries no coupling with marginal
    /// rho; refining the grid may recover the continuum guarantee.
    Infeasible { detail: String },
}

/// Optimal-transport state at desk scale: a sparse N-body coupling with
/// marginal rho supported on the admissible pair set, found by linear
/// feasibility over the admissible tuples (the transport cost is zero on
/// the admissible set and one off it, so feasibility is optimality).
pub fn ot_state_small<S: Scalar>(
    rho: &GridDensity<S>,
    rule: SeparationRule<S>,
) -> Result<OtOutcome<S>> {
    let n = integer_mass(rho)?;
    if n > 3 {
        return Err(Error::TooLarge(format!("ot_state_small is desk scale (N <= 3), got N = {n}")));
    }
    let support = rho.support_cells();
    let m = support.len();
    let vol = rho.grid.cell_volume();

    // Pairwise admissibility.
    let thresholds: Vec<Vec<S>> = match rule {
        SeparationRule::FixedDelta(delta) => vec![vec![delta; m]; m],
        SeparationRule::LocalRadius => {
            let radii: Vec<S> = support
                .iter()
                .map(|&c| rho.local_radius(&rho.grid.center(c)))
                .collect::<Result<_>>()?;
            let r_min = radii.iter().fold(S::infinity(), |a, b| a.min(*b));
            let third = S::one() / cast::<S>(3.0);
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| r_min.max((radii[i] + radii[j]) * third))
                        .collect()
                })
                .collect()
        }
    };
    let admissible = |i: usize, j: usize| -> bool {
        rho.grid.center_distance(support[i], support[j]) >= thresholds[i][j]
    };

    if n == 1 {
        let cells: Vec<(usize, S)> = support.iter().map(|&c| (c, S::one())).collect();
        let q = OneBody::from_weighted_cells(rho, &cells).unwrap();
        return Ok(OtOutcome::Feasible(CanonicalState::Mixture(Mixture {
            grid: rho.grid.clone(),
            n: 1,
            terms: vec![MixtureTerm { weight: S::one(), factors: vec![q] }],
        })));
    }

    // Admissible unordered tuples without repetition.
    let mut tuples: Vec<Vec<usize>> = Vec::new();
    match n {
        2 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    if admissible(i, j) {
                        tuples.push(vec![i, j]);
                    }
                }
            }
        }
        3 => {
            for i in 0..m {
                for j in (i + 1)..m {
                    if !admissible(i, j) {
                        continue;
                    }
                    for k in (j + 1)..m {
                        if admissible(i, k) && admissible(j, k) {
                            tuples.push(vec![i, j, k]);
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    if tuples.is_empty() {
        return Ok(OtOutcome::Infeasible {
            detail: format!("no admissible {n}-tuples at spacing {:?}", rho.grid.spacing),
        });
    }
    let costs = vec![S::zero(); tuples.len()];
    let columns: Vec<Column<S>> = tuples
        .iter()
        .map(|t| t.iter().map(|&i| (i, S::one())).collect())
        .collect();
    let rhs: Vec<S> = support.iter().map(|&c| rho.values[c] * vol).collect();
    match simplex::solve(Lp { costs: &costs, columns: &columns, rhs: &rhs }) {
        Ok(solution) => {
            let mut entries: BTreeMap<Vec<usize>, S> = BTreeMap::new();
            let perms = crate::states::permutation_count(n);
            for (t, weight) in tuples.iter().zip(solution.x.iter()) {
                if *weight <= cast(1e-15) {
                    continue;
                }
                let cells: Vec<usize> = t.iter().map(|&i| support[i]).collect();
                let share = *weight / cast::<S>(perms as f64);
                for perm in crate::states::all_permutations(n) {
                    let tuple: Vec<usize> = perm.iter().map(|&k| cells[k]).collect();
                    *entries.entry(tuple).or_insert_with(S::zero) += share;
                }
            }
            Ok(OtOutcome::Feasible(CanonicalState::SparseJoint(SparseJoint {
                grid: rho.grid.clone(),
                n,
                entries,
                symmetric: true,
            })))
        }
        Err(Error::Infeasible(detail)) => Ok(OtOutcome::Infeasible { detail }),
        Err(e) => Err(e),
    }
}

/// Block approximation of the optimal-transport state over the greedy ball
/// cover: regularizes the OT state at T > 0 while keeping the density and a
/// slightly weakened pair separation.
pub fn block_ot_trial<S: Scalar>(
    rho: &GridDensity<S>,
    epsilon: S,
) -> Result<(CanonicalState<S>, BallCover<S>)> {
    let outcome = ot_state_small(rho, SeparationRule::LocalRadius)?;
    let state = match outcome {
        OtOutcome::Feasible(st) => st,
        OtOutcome::Infeasible { detail } => return Err(Error::Infeasible(detail)),
    };
    let cover = besicovitch_balls(rho, epsilon)?;
    let partition = ball_partition(&cover, rho);
    let approx = block_approximation(&state, &partition, rho)?;
    Ok((approx, cover))
}

/// Floating-crystal trial for hard cores: a periodic packing smeared to
/// finite entropy, averaged over one period of translations, and then
/// geometrically localized to the target density.
#[derive(Debug)]
pub struct CrystalTrial<S> {
    pub combination: GcConvexCombination<S>,
    /// Constant density of the translation-averaged crystal.
    pub uniform_density: S,
    /// Guaranteed minimal gap between smeared supports.
    pub min_gap: S,
    /// Side length of the smearing box.
    pub smear_width: S,
}

pub fn floating_crystal_localized<S: Scalar>(
    rho: &GridDensity<S>,
    r0: S,
    epsilon: S,
    packing: &PackingConstants<S>,
) -> Result<CrystalTrial<S>> {
    let d = rho.dim();
    if d > 2 {
        return Err(Error::TooLarge("floating crystal is desk scale (d <= 2)".into()));
    }
    if epsilon <= S::zero() || epsilon >= S::one() {
        return Err(Error::OutOfRange("epsilon must lie in (0, 1)".into()));
    }
    let sup_rho = rho.values.iter().fold(S::zero(), |m, v| m.max(*v));
    let cap = (S::one() - epsilon).powi(d as i32) * packing.rho_c(d) / r0.powi(d as i32);
    if sup_rho > cap {
        return Err(Error::DensityExceedsPacking {
            max: sup_rho.to_f64().unwrap_or(f64::NAN),
            threshold: cap.to_f64().unwrap_or(f64::NAN),
        });
    }
    match d {
        1 => crystal_1d(rho, r0, epsilon, sup_rho),
        2 => crystal_2d(rho, r0, epsilon, sup_rho, packing),
        _ => unreachable!(),
    }
}

fn crystal_1d<S: Scalar>(
    rho: &GridDensity<S>,
    r0: S,
    epsilon: S,
    sup_rho: S,
) -> Result<CrystalTrial<S>> {
    let h = rho.grid.spacing[0];
    let eta = epsilon / (cast::<S>(2.0) * (S::one() - epsilon));
    let a_true = (S::one() + cast::<S>(2.0) * eta) * r0;
    // Lattice spacing and smear width snapped to whole cells. The snapping
    // must keep three constraints: theta <= 1 (a <= 1/sup rho), hard-core
    // gaps (a - sigma >= r0), and the entropy margin (sigma >= eps a / 2).
    let na = (a_true / h).to_f64().unwrap_or(0.0).floor() as usize;
    if na == 0 {
        return Err(Error::InvalidInput("grid too coarse for the crystal period".into()));
    }
    let a = h * cast::<S>(na as f64);
    let ns = ((epsilon * a / (cast::<S>(2.0) * h)).to_f64().unwrap_or(0.0).ceil() as usize).max(1);
    let sigma = h * cast::<S>(ns as f64);
    let c_tilde = S::one() / a;
    if sup_rho * a > S::one() + cast(1e-12) {
        return Err(Error::InvalidInput(
            "snapped crystal period too long for theta <= 1; refine the grid".into(),
        ));
    }
    if a - sigma < r0 - cast(1e-12) {
        return Err(Error::InvalidInput(
            "snapped smearing too wide for the hard core; refine the grid".into(),
        ));
    }
    let theta: Vec<S> = rho.values.iter().map(|v| (*v / c_tilde).min(S::one())).collect();

    // Sites covering the grid box, padded so every support cell sees a full
    // crystal period.
    let lo = rho.grid.origin[0] - a - sigma;
    let hi = rho.grid.origin[0] + h * cast::<S>(rho.grid.shape[0] as f64) + a + sigma;
    let n_cells = rho.grid.shape[0];
    let mut parts = Vec::with_capacity(na);
    let weight = S::one() / cast::<S>(na as f64);
    for shift in 0..na {
        // Factor supports are whole-cell intervals [site, site + sigma).
        let mut factors = Vec::new();
        let mut site = lo + h * cast::<S>(shift as f64);
        // Align the site to the cell lattice.
        let offset = ((site - rho.grid.origin[0]) / h).floor();
        site = rho.grid.origin[0] + h * offset;
        while site < hi {
            let cell_first = ((site - rho.grid.origin[0]) / h)
                .round()
                .to_f64()
                .unwrap_or(0.0) as i64;
            let mut entries = Vec::new();
            for k in 0..ns {
                let cell = cell_first + k as i64;
                if cell < 0 || cell as usize >= n_cells {
                    continue;
                }
                let cell = cell as usize;
                if rho.values[cell] <= S::zero() {
                    continue;
                }
                let c_lo = rho.grid.origin[0] + h * cast::<S>(cell as f64);
                entries.push(OneBodyEntry {
                    cell,
                    mass: S::one() / cast::<S>(ns as f64),
                    volume: h,
                    lo: vec![c_lo],
                    hi: vec![c_lo + h],
                    position: vec![c_lo + h * cast::<S>(0.5)],
                });
            }
            if !entries.is_empty() {
                factors.push(OneBody { entries });
            }
            site += a;
        }
        let localized = geometric_localization(&rho.grid, &factors, &theta)?;
        parts.push((weight, localized));
    }
    Ok(CrystalTrial {
        combination: GcConvexCombination { parts },
        uniform_density: c_tilde,
        min_gap: a - sigma,
        smear_width: sigma,
    })
}

fn crystal_2d<S: Scalar>(
    rho: &GridDensity<S>,
    r0: S,
    epsilon: S,
    sup_rho: S,
    packing: &PackingConstants<S>,
) -> Result<CrystalTrial<S>> {
    let h = rho.grid.spacing[0];
    if (rho.grid.spacing[1] - h).abs() > h * cast(1e-12) {
        return Err(Error::InvalidInput("the 2D crystal needs square cells".into()));
    }
    // Near-triangular lattice v1 = (n1 h, 0), v2 = (n1 h / 2, n2 h), snapped
    // to the grid. Search the smallest feasible supercell.
    let hf = h.to_f64().unwrap_or(1.0);
    let r0f = r0.to_f64().unwrap_or(1.0);
    let epsf = epsilon.to_f64().unwrap_or(0.1);
    let sup_f = sup_rho.to_f64().unwrap_or(0.0);
    let v_c = packing.v_c(2).to_f64().unwrap_or(0.9);

    let mut best: Option<(usize, usize, usize, usize)> = None;
    'outer: for n1 in 1..=(12.0 * r0f / hf).ceil() as usize {
        for n2 in 1..=n1 * 2 {
            let shift = n1 / 2;
            let v1 = n1 as f64 * hf;
            let v2 = ((shift as f64 * hf).powi(2) + (n2 as f64 * hf).powi(2)).sqrt();
            let v3 = (((n1 - shift) as f64 * hf).powi(2) + (n2 as f64 * hf).powi(2)).sqrt();
            let min_dist = v1.min(v2).min(v3);
            let area = v1 * n2 as f64 * hf;
            if sup_f * area > 1.0 {
                continue;
            }
            for ns in 1..=n1 {
                let sigma = ns as f64 * hf;
                let gap = min_dist - sigma * 2f64.sqrt();
                let entropy_ok = sigma * sigma / area >= epsf * epsf * v_c / 4.0;
                if gap >= r0f && entropy_ok {
                    best = Some((n1, n2, shift, ns));
                    break 'outer;
                }
            }
        }
    }
    let Some((n1, n2, shift, ns)) = best else {
        return Err(Error::InvalidInput(
            "no grid-snapped crystal satisfies packing, gap and entropy margins; refine the grid"
                .into(),
        ));
    };
    let area = cast::<S>((n1 * n2) as f64) * h * h;
    let c_tilde = S::one() / area;
    let sigma = h * cast::<S>(ns as f64);
    let min_gap = {
        let v1 = n1 as f64 * hf;
        let v2 = ((shift as f64 * hf).powi(2) + (n2 as f64 * hf).powi(2)).sqrt();
        let v3 = (((n1 - shift) as f64 * hf).powi(2) + (n2 as f64 * hf).powi(2)).sqrt();
        cast::<S>(v1.min(v2).min(v3) - (ns as f64 * hf) * 2f64.sqrt())
    };
    let theta: Vec<S> = rho.values.iter().map(|v| (*v / c_tilde).min(S::one())).collect();

    // Enumerate lattice sites over the padded box and average tau over the
    // n1 x n2 fundamental cell of grid offsets.
    let pad = cast::<S>((n1 + n2 + ns) as f64) * h;
    let lo_x = rho.grid.origin[0] - pad;
    let hi_x = rho.grid.origin[0] + h * cast::<S>(rho.grid.shape[0] as f64) + pad;
    let lo_y = rho.grid.origin[1] - pad;
    let hi_y = rho.grid.origin[1] + h * cast::<S>(rho.grid.shape[1] as f64) + pad;
    let weight = S::one() / cast::<S>((n1 * n2) as f64);
    let mut parts = Vec::new();
    for tx in 0..n1 {
        for ty in 0..n2 {
            let mut factors = Vec::new();
            // Lattice points i v1 + j v2 + tau.
            let j_min = ((lo_y - rho.grid.origin[1]) / (h * cast::<S>(n2 as f64)))
                .floor()
                .to_f64()
                .unwrap_or(0.0) as i64
                - 1;
            let j_max = ((hi_y - rho.grid.origin[1]) / (h * cast::<S>(n2 as f64)))
                .ceil()
                .to_f64()
                .unwrap_or(0.0) as i64
                + 1;
            for j in j_min..=j_max {
                let y = rho.grid.origin[1] + h * cast::<S>((j * n2 as i64 + ty as i64) as f64);
                if y < lo_y || y > hi_y {
                    continue;
                }
                let x_shift = (j * shift as i64).rem_euclid(n1 as i64) as usize;
                let i_min = ((lo_x - rho.grid.origin[0]) / (h * cast::<S>(n1 as f64)))
                    .floor()
                    .to_f64()
                    .unwrap_or(0.0) as i64
                    - 1;
                let i_max = ((hi_x - rho.grid.origin[0]) / (h * cast::<S>(n1 as f64)))
                    .ceil()
                    .to_f64()
                    .unwrap_or(0.0) as i64
                    + 1;
                for i in i_min..=i_max {
                    let x = rho.grid.origin[0]
                        + h * cast::<S>((i * n1 as i64 + x_shift as i64 + tx as i64) as f64);
                    if x < lo_x || x > hi_x {
                        continue;
                    }
                    if let Some(f) = square_smear(rho, x, y, ns) {
                        factors.push(f);
                    }
                }
            }
            let localized = geometric_localization(&rho.grid, &factors, &theta)?;
            parts.push((weight, localized));
        }
    }
    Ok(CrystalTrial {
        combination: GcConvexCombination { parts },
        uniform_density: c_tilde,
        min_gap,
        smear_width: sigma,
    })
}

/// Uniform distribution over an ns x ns block of whole cells with lower-left
/// corner at (x, y); cells outside the grid or off the support are dropped
/// (the localization weight vanishes there anyway).
fn square_smear<S: Scalar>(rho: &GridDensity<S>, x: S, y: S, ns: usize) -> Option<OneBody<S>> {
    let h = rho.grid.spacing[0];
    let i0 = ((x - rho.grid.origin[0]) / h).round().to_f64().unwrap_or(0.0) as i64;
    let j0 = ((y - rho.grid.origin[1]) / h).round().to_f64().unwrap_or(0.0) as i64;
    let mut entries = Vec::new();
    let mass = S::one() / cast::<S>((ns * ns) as f64);
    for di in 0..ns as i64 {
        for dj in 0..ns as i64 {
            let i = i0 + di;
            let j = j0 + dj;
            if i < 0 || j < 0 || i as usize >= rho.grid.shape[0] || j as usize >= rho.grid.shape[1] {
                continue;
            }
            let cell = rho.grid.flat_index(&[i as usize, j as usize]);
            if rho.values[cell] <= S::zero() {
                continue;
            }
            let lo = vec![
                rho.grid.origin[0] + h * cast::<S>(i as f64),
                rho.grid.origin[1] + h * cast::<S>(j as f64),
            ];
            let hi = vec![lo[0] + h, lo[1] + h];
            entries.push(OneBodyEntry {
                cell,
                mass,
                volume: h * h,
                position: vec![lo[0] + h * cast::<S>(0.5), lo[1] + h * cast::<S>(0.5)],
                lo,
                hi,
            });
        }
    }
    if entries.is_empty() {
        None
    } else {
        Some(OneBody { entries })
    }
}

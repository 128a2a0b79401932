//! Grand-canonical free energy at T > 0 by concave dual maximization over
//! cell potentials. The inner log-partition function is evaluated exactly:
//! in closed form for non-interacting systems, by a transfer recursion for
//! pure hard rods in 1D, and by pruned multiset enumeration otherwise.

use crate::density::GridDensity;
use crate::potential::{PotentialKind, PotentialSpec};
use crate::{cast, Error, Result, Scalar};

/// Dual potential with convergence data. The physical external potential is
/// V = Vtilde - T log rho.
#[derive(Debug, Clone)]
pub struct DualPotential<S> {
    pub values: Vec<S>,
    pub converged: bool,
    /// Sup-norm of the dual gradient rho - rho_Gibbs (in cell masses).
    pub gap: S,
}

#[derive(Debug, Clone)]
pub struct GcSolve<S> {
    pub value: S,
    pub dual: DualPotential<S>,
    pub iterations: usize,
    /// Largest sector that can carry weight in the evaluation.
    pub n_max: usize,
}

enum ZPath {
    Free,
    HardRodDp { gap: usize },
    Enumerate { n_max: usize },
}

struct Positions<S> {
    /// Mass of rho attached to each evaluation position.
    masses: Vec<S>,
    /// Cell owning each position (potentials are piecewise constant per cell).
    cell_of: Vec<usize>,
    count: usize,
}

const ENUM_NODE_CAP: usize = 80_000_000;

/// Exact grand-canonical free energy G_T[rho] at T > 0.
///
/// `n_max` caps the sector enumeration (ignored by the closed-form and
/// hard-rod paths, which sum all sectors); `refine` subdivides 1D cells for
/// the hard-rod recursion so the rod length is resolved well below the cell
/// size.
pub fn exact_grand_canonical<S: Scalar>(
    rho: &GridDensity<S>,
    w: &PotentialSpec<S>,
    temperature: S,
    n_max: Option<usize>,
    refine: Option<usize>,
) -> Result<GcSolve<S>> {
    if temperature <= S::zero() {
        return Err(Error::OutOfRange("grand-canonical oracle needs T > 0".into()));
    }
    let mass = rho.mass();
    let mf = mass.to_f64().unwrap_or(0.0);
    // Smallest sector count with Poisson-dominated tail below 1e-9.
    let auto_nmax = {
        let mut term = (-mf).exp();
        let mut cum = term;
        let mut n = 0usize;
        while 1.0 - cum > 1e-9 && n < 200 {
            n += 1;
            term *= mf / n as f64;
            cum += term;
        }
        n
    };
    let n_max = n_max.unwrap_or(auto_nmax).max(1);

    let pure_hard_rods = rho.dim() == 1
        && matches!(w.kind, PotentialKind::HardCore)
        && w.kappa == S::zero()
        && w.r0 > S::zero();

    let (path, positions) = if w.is_zero() {
        (ZPath::Free, cell_positions(rho, 1))
    } else if pure_hard_rods {
        let h = rho.grid.spacing[0].to_f64().unwrap_or(1.0);
        let r0 = w.r0.to_f64().unwrap_or(1.0);
        // Subdivide cells by a fixed factor so the rod quantization error
        // shrinks with the grid spacing; the exclusion gap is rounded to
        // center the residual bias.
        let q = refine.unwrap_or(32).max(1);
        let pos = cell_positions(rho, q);
        if pos.count > 16_384 {
            return Err(Error::TooLarge(format!("{} hard-rod positions", pos.count)));
        }
        let h_eff = h / q as f64;
        let gap = (r0 / h_eff).round().max(1.0) as usize;
        (ZPath::HardRodDp { gap }, pos)
    } else {
        let pos = cell_positions(rho, 1);
        let m = pos.count as f64;
        let states: f64 = (0..=n_max as u32).map(|n| binom(m, n)).sum();
        if states > ENUM_NODE_CAP as f64 && !w.alpha.is_infinite() {
            return Err(Error::TooLarge(format!(
                "~{states:.2e} enumeration states; shrink the grid or n_max"
            )));
        }
        (ZPath::Enumerate { n_max }, pos)
    };

    // Pairwise interaction between positions (enumeration path only).
    let pair_w: Option<Vec<Vec<S>>> = match path {
        ZPath::Enumerate { .. } => {
            let mut table = vec![vec![S::zero(); positions.count]; positions.count];
            for i in 0..positions.count {
                for j in 0..positions.count {
                    let r = rho.grid.center_distance(
                        position_cell(&positions, i),
                        position_cell(&positions, j),
                    );
                    table[i][j] = if i == j { w.evaluate(S::zero()) } else { w.evaluate(r) };
                }
            }
            Some(table)
        }
        _ => None,
    };

    let cell_count = rho.grid.cell_count();
    let cell_masses: Vec<S> = (0..cell_count).map(|c| rho.cell_mass(c)).collect();

    // Purely repulsive pair tables admit aggressive subtree pruning.
    let nonneg_pairs = pair_w
        .as_ref()
        .map(|table| {
            table
                .iter()
                .all(|row| row.iter().all(|v| v.is_infinite() || *v >= S::zero()))
        })
        .unwrap_or(false);

    let fugacities = |v: &[S]| -> Vec<S> {
        (0..positions.count)
            .map(|i| positions.masses[i] * (-v[positions.cell_of[i]] / temperature).exp())
            .collect()
    };

    // ln Z, the per-cell expected counts, and (on the enumeration path) the
    // second moments E[n_a n_b] that make Newton steps possible.
    let eval = |v: &[S], want_hessian: bool| -> Result<(S, Vec<S>, Option<Vec<Vec<S>>>)> {
        let z = fugacities(v);
        match &path {
            ZPath::Free => {
                let lnz: S = z.iter().copied().sum();
                let mut counts = vec![S::zero(); cell_count];
                for i in 0..positions.count {
                    counts[positions.cell_of[i]] += z[i];
                }
                // Independent cells: the count covariance is diagonal.
                let second = if want_hessian {
                    let mut sec = vec![vec![S::zero(); cell_count]; cell_count];
                    for a in 0..cell_count {
                        for b in 0..cell_count {
                            sec[a][b] = counts[a] * counts[b];
                        }
                        sec[a][a] += counts[a];
                    }
                    Some(sec)
                } else {
                    None
                };
                Ok((lnz, counts, second))
            }
            ZPath::HardRodDp { gap } => {
                let (lnz, pos_counts) = hard_rod_dp(&z, *gap);
                let mut counts = vec![S::zero(); cell_count];
                for i in 0..positions.count {
                    counts[positions.cell_of[i]] += pos_counts[i];
                }
                Ok((lnz, counts, None))
            }
            ZPath::Enumerate { n_max } => {
                let table = pair_w.as_ref().unwrap();
                let (zval, pos_counts, second) =
                    enumerate_z(&z, table, *n_max, temperature, true, want_hessian, nonneg_pairs)?;
                let pos_counts = pos_counts.unwrap();
                let mut counts = vec![S::zero(); cell_count];
                for i in 0..positions.count {
                    counts[positions.cell_of[i]] += pos_counts[i] / zval;
                }
                let second = second.map(|sec| {
                    let mut out = vec![vec![S::zero(); cell_count]; cell_count];
                    for i in 0..positions.count {
                        for j in 0..positions.count {
                            out[positions.cell_of[i]][positions.cell_of[j]] += sec[i][j] / zval;
                        }
                    }
                    out
                });
                Ok((zval.ln(), counts, second))
            }
        }
    };
    // Value-only evaluation for line searches, skipping the moment sums.
    let eval_value = |v: &[S]| -> Result<S> {
        let z = fugacities(v);
        match &path {
            ZPath::Free => Ok(z.iter().copied().sum()),
            ZPath::HardRodDp { gap } => Ok(hard_rod_dp(&z, *gap).0),
            ZPath::Enumerate { n_max } => {
                let table = pair_w.as_ref().unwrap();
                let (zval, _, _) =
                    enumerate_z(&z, table, *n_max, temperature, false, false, nonneg_pairs)?;
                Ok(zval.ln())
            }
        }
    };
    let use_newton = matches!(path, ZPath::Enumerate { .. });

    // Concave maximization of J(V) = -<m, V> - T ln Z(V). The enumeration
    // path takes damped Newton steps on the support cells (the Hessian is
    // -Cov(n)/T); the cheap closed-form paths use gradient ascent with
    // backtracking.
    let support: Vec<usize> = (0..cell_count).filter(|&c| cell_masses[c] > S::zero()).collect();
    let mut v = vec![S::zero(); cell_count];
    let (lnz0, mut counts, mut second) = eval(&v, use_newton)?;
    let objective = |v: &[S], lnz: S| -> S {
        let dot: S = v.iter().zip(&cell_masses).map(|(a, b)| *a * *b).sum();
        -dot - temperature * lnz
    };
    let mut j_cur = objective(&v, lnz0);
    let gtol = cast::<S>(1e-6);
    let mut step = S::one();
    let mut iterations = 0usize;
    let max_iter = if use_newton { 300 } else { 50_000 };
    let mut converged = false;
    let gap = loop {
        iterations += 1;
        let grad: Vec<S> = (0..cell_count).map(|c| counts[c] - cell_masses[c]).collect();
        let gap = grad.iter().fold(S::zero(), |m, g| m.max(g.abs()));
        if gap < gtol {
            converged = true;
            break gap;
        }
        if iterations > max_iter {
            break gap;
        }
        // Direction: Newton on the support block when moments are present.
        let mut direction: Option<Vec<S>> = None;
        if let Some(sec) = &second {
            let k = support.len();
            let mut cov = vec![vec![S::zero(); k]; k];
            for (i, &a) in support.iter().enumerate() {
                for (j, &b) in support.iter().enumerate() {
                    cov[i][j] = sec[a][b] - counts[a] * counts[b];
                }
            }
            let damping = cast::<S>(1e-10)
                + cast::<S>(1e-9) * (0..k).map(|i| cov[i][i]).fold(S::zero(), |m, d| m.max(d));
            for (i, row) in cov.iter_mut().enumerate() {
                row[i] += damping;
            }
            let rhs: Vec<S> = support.iter().map(|&a| temperature * grad[a]).collect();
            if let Some(delta) = solve_dense(&cov, &rhs) {
                let mut dir = vec![S::zero(); cell_count];
                let mut ascent = S::zero();
                for (i, &a) in support.iter().enumerate() {
                    dir[a] = delta[i];
                    ascent += delta[i] * grad[a];
                }
                if ascent > S::zero() {
                    direction = Some(dir);
                    step = S::one();
                }
            }
        }
        let direction = direction.unwrap_or_else(|| grad.clone());
        let slope: S = direction.iter().zip(&grad).map(|(d, g)| *d * *g).sum();
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<S> = v.iter().zip(&direction).map(|(a, d)| *a + step * *d).collect();
            let lnz_t = eval_value(&trial)?;
            let j_t = objective(&trial, lnz_t);
            if j_t >= j_cur + cast::<S>(0.3) * step * slope {
                v = trial;
                j_cur = j_t;
                if !use_newton {
                    step = step * cast(1.5);
                }
                accepted = true;
                break;
            }
            step = step * cast(0.5);
        }
        if !accepted {
            // Step floor reached: accept the best gradient norm we have.
            break gap;
        }
        let (_, counts_t, second_t) = eval(&v, use_newton)?;
        counts = counts_t;
        second = second_t;
    };

    let entropy_ref = rho.entropy_integral();
    let value = temperature * entropy_ref + j_cur;
    if !converged && gap > cast(1e-4) {
        return Err(Error::NotConverged(format!(
            "dual gradient norm {} after {} iterations",
            gap.to_f64().unwrap_or(f64::NAN),
            iterations
        )));
    }
    Ok(GcSolve {
        value,
        dual: DualPotential { values: v, converged, gap },
        iterations,
        n_max,
    })
}

fn cell_positions<S: Scalar>(rho: &GridDensity<S>, refine: usize) -> Positions<S> {
    let mut masses = Vec::new();
    let mut cell_of = Vec::new();
    let q = refine.max(1);
    if rho.dim() == 1 && q > 1 {
        for cell in 0..rho.values.len() {
            let m = rho.cell_mass(cell) / cast::<S>(q as f64);
            for _ in 0..q {
                masses.push(m);
                cell_of.push(cell);
            }
        }
    } else {
        for cell in 0..rho.values.len() {
            masses.push(rho.cell_mass(cell));
            cell_of.push(cell);
        }
    }
    let count = masses.len();
    Positions { masses, cell_of, count }
}

fn position_cell<S>(positions: &Positions<S>, i: usize) -> usize {
    positions.cell_of[i]
}

/// Transfer recursion for hard rods: partition function over subsets of
/// positions with pairwise index gap >= `gap`, and per-position occupation
/// expectations. Works in linear space; desk scales keep Z in range.
fn hard_rod_dp<S: Scalar>(z: &[S], gap: usize) -> (S, Vec<S>) {
    let m = z.len();
    // prefix[j] = Z over positions < j
    let mut prefix = vec![S::one(); m + 1];
    for j in 1..=m {
        let skip = if j >= gap { prefix[j - gap] } else { S::one() };
        prefix[j] = prefix[j - 1] + z[j - 1] * skip;
    }
    // suffix[j] = Z over positions >= j
    let mut suffix = vec![S::one(); m + 2];
    for j in (0..m).rev() {
        let skip = if j + gap <= m { suffix[j + gap] } else { S::one() };
        suffix[j] = suffix[j + 1] + z[j] * skip;
    }
    let zf = prefix[m];
    let mut counts = vec![S::zero(); m];
    for i in 0..m {
        let left = if i >= gap { prefix[i - gap + 1] } else { S::one() };
        let right = if i + gap <= m { suffix[i + gap] } else { S::one() };
        counts[i] = z[i] * left * right / zf;
    }
    (zf.ln(), counts)
}

/// Exact Z = sum over multisets of positions (with the 1/prod r_i!
/// symmetry factor) of prod z * exp(-W/T), plus, on request, unnormalized
/// occupation sums and second moments sum w n_i n_j. Hard-core conflicts
/// prune subtrees exactly; for purely repulsive tables, subtrees whose
/// total weight bound falls below 1e-16 of the running sum are dropped.
#[allow(clippy::type_complexity)]
fn enumerate_z<S: Scalar>(
    z: &[S],
    pair_w: &[Vec<S>],
    n_max: usize,
    temperature: S,
    want_counts: bool,
    want_second: bool,
    prune_repulsive: bool,
) -> Result<(S, Option<Vec<S>>, Option<Vec<Vec<S>>>)> {
    let m = z.len();
    let mut total = S::one(); // empty configuration
    let mut counts = if want_counts { Some(vec![S::zero(); m]) } else { None };
    let mut second = if want_second { Some(vec![vec![S::zero(); m]; m]) } else { None };
    let mut stack: Vec<usize> = Vec::new();
    let mut nodes = 0usize;
    // suffix[a] = exp(sum_{b >= a} z_b) - 1 bounds any repulsive subtree
    // that may still choose positions >= a.
    let suffix: Vec<S> = {
        let mut out = vec![S::zero(); m + 1];
        for a in (0..m).rev() {
            out[a] = out[a + 1] + z[a];
        }
        out.into_iter().map(|s| s.exp() - S::one()).collect()
    };

    struct Ctx<'a, S> {
        z: &'a [S],
        pair_w: &'a [Vec<S>],
        n_max: usize,
        temperature: S,
        m: usize,
        prune: bool,
        suffix: &'a [S],
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<S: Scalar>(
        ctx: &Ctx<'_, S>,
        start: usize,
        weight: S,
        stack: &mut Vec<usize>,
        total: &mut S,
        counts: &mut Option<Vec<S>>,
        second: &mut Option<Vec<Vec<S>>>,
        nodes: &mut usize,
    ) -> Result<()> {
        if stack.len() >= ctx.n_max {
            return Ok(());
        }
        if ctx.prune && weight * ctx.suffix[start] < cast::<S>(1e-16) * *total {
            return Ok(());
        }
        for a in start..ctx.m {
            if ctx.z[a] <= S::zero() {
                continue;
            }
            // Pair energy of the new particle against the current stack,
            // including the repeat factor for multiset symmetry.
            let mut dw = S::zero();
            let mut conflict = false;
            let mut run = 1usize;
            for &b in stack.iter() {
                let wv = ctx.pair_w[a][b];
                if wv.is_infinite() {
                    conflict = true;
                    break;
                }
                dw += wv;
                if b == a {
                    run += 1;
                }
            }
            if conflict {
                continue;
            }
            let w_new = weight * ctx.z[a] * (-dw / ctx.temperature).exp() / cast::<S>(run as f64);
            if w_new <= S::zero() {
                continue;
            }
            *nodes += 1;
            if *nodes > ENUM_NODE_CAP {
                return Err(Error::TooLarge("grand-canonical enumeration node cap".into()));
            }
            stack.push(a);
            *total += w_new;
            if let Some(cs) = counts.as_mut() {
                for &b in stack.iter() {
                    cs[b] += w_new;
                }
            }
            // The second moments only precondition the Newton step, so
            // negligible-weight nodes can skip the quadratic accumulation.
            if w_new >= cast::<S>(1e-9) * *total {
                if let Some(sec) = second.as_mut() {
                    for &p in stack.iter() {
                        for &q in stack.iter() {
                            sec[p][q] += w_new;
                        }
                    }
                }
            }
            recurse(ctx, a, w_new, stack, total, counts, second, nodes)?;
            stack.pop();
        }
        Ok(())
    }

    let ctx = Ctx { z, pair_w, n_max, temperature, m, prune: prune_repulsive, suffix: &suffix };
    recurse(&ctx, 0, S::one(), &mut stack, &mut total, &mut counts, &mut second, &mut nodes)?;
    Ok((total, counts, second))
}

/// Dense linear solve by Gaussian elimination with partial pivoting.
fn solve_dense<S: Scalar>(matrix: &[Vec<S>], rhs: &[S]) -> Option<Vec<S>> {
    let n = rhs.len();
    let mut a: Vec<Vec<S>> = matrix.to_vec();
    let mut b: Vec<S> = rhs.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < cast(1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        for k in col..n {
            a[col][k] = a[col][k] / p;
        }
        b[col] = b[col] / p;
        for r in 0..n {
            if r != col && a[r][col] != S::zero() {
                let f = a[r][col];
                for k in col..n {
                    a[r][k] = a[r][k] - f * a[col][k];
                }
                b[r] = b[r] - f * b[col];
            }
        }
    }
    Some(b)
}

fn binom(m: f64, n: u32) -> f64 {
    let mut acc = 1.0f64;
    for k in 0..n {
        acc *= (m + k as f64) / (k as f64 + 1.0);
    }
    acc
}

/// Largest number of r0-separated points that fit on the support cells, by
/// branch and bound over cell centers. Decides grid-level hard-core
/// representability: a density whose mass exceeds this count admits no
/// finite-energy grid state.
pub fn max_packing<S: Scalar>(rho: &GridDensity<S>, r0: S) -> usize {
    let cells = rho.support_cells();
    let n = cells.len();
    let mut conflict = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rho.grid.center_distance(cells[i], cells[j]) < r0 {
                conflict[i][j] = true;
                conflict[j][i] = true;
            }
        }
    }
    let mut best = 0usize;
    let mut chosen: Vec<usize> = Vec::new();
    fn branch(
        start: usize,
        n: usize,
        conflict: &[Vec<bool>],
        chosen: &mut Vec<usize>,
        best: &mut usize,
    ) {
        if chosen.len() > *best {
            *best = chosen.len();
        }
        if chosen.len() + (n - start) <= *best {
            return;
        }
        for i in start..n {
            if chosen.iter().all(|&j| !conflict[i][j]) {
                chosen.push(i);
                branch(i + 1, n, conflict, chosen, best);
                chosen.pop();
            }
        }
    }
    branch(0, n, &conflict, &mut chosen, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    #[test]
    fn free_gas_matches_poisson_value() {
        // w == 0, rho == 1 on [0,1]: G_T = T int rho (log rho - 1) = -1.
        let grid = Grid::<f64>::new(vec![64], vec![1.0 / 64.0], vec![0.0]).unwrap();
        let rho = GridDensity::uniform(grid, 1.0);
        let w = PotentialSpec::zero();
        let sol = exact_grand_canonical(&rho, &w, 1.0, None, None).unwrap();
        assert!((sol.value + 1.0).abs() < 1e-9, "value {}", sol.value);
        assert!(sol.dual.converged);
    }

    #[test]
    fn hard_rod_dp_matches_enumeration() {
        // Cross-check the transfer recursion against brute-force subsets.
        let z = vec![0.3, 0.5, 0.2, 0.4, 0.1];
        let gap = 2usize;
        let (lnz, counts) = hard_rod_dp(&z, gap);
        let mut brute = 0.0f64;
        let mut brute_counts = vec![0.0f64; z.len()];
        for mask in 0usize..32 {
            let picks: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).collect();
            let ok = picks.windows(2).all(|p| p[1] - p[0] >= gap);
            if ok {
                let w: f64 = picks.iter().map(|&i| z[i]).product();
                brute += w;
                for &i in &picks {
                    brute_counts[i] += w;
                }
            }
        }
        assert!((lnz - brute.ln()).abs() < 1e-12);
        for i in 0..z.len() {
            assert!((counts[i] - brute_counts[i] / brute).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_agrees_with_free_gas() {
        let grid = Grid::<f64>::new(vec![6], vec![0.25], vec![0.0]).unwrap();
        let rho = GridDensity::uniform(grid, 0.8);
        // A tabulated near-zero potential (finite at the origin, unlike any
        // power-law core) exercises the enumeration path against the
        // closed-form free gas.
        let tiny = 1e-10;
        let w_eps = PotentialSpec::new(
            crate::potential::PotentialKind::Tabulated { table: vec![(0.0, tiny), (4.0, tiny)] },
            1e-6,
            0.1,
            crate::potential::CoreExponent::Finite(1.5),
            3.0,
        )
        .unwrap();
        let sol = exact_grand_canonical(&rho, &w_eps, 1.0, Some(14), None).unwrap();
        let free = exact_grand_canonical(&rho, &PotentialSpec::zero(), 1.0, None, None).unwrap();
        assert!((sol.value - free.value).abs() < 1e-5, "{} vs {}", sol.value, free.value);
    }

    #[test]
    fn max_packing_counts_separated_cells() {
        let grid = Grid::<f64>::new(vec![8], vec![0.5], vec![0.0]).unwrap();
        let rho = GridDensity::uniform(grid, 1.0);
        // Cells at spacing 0.5 on [0,4]; r0 = 1.0 needs index gap 2.
        assert_eq!(max_packing(&rho, 1.0), 4);
        assert_eq!(max_packing(&rho, 0.4), 8);
    }
}

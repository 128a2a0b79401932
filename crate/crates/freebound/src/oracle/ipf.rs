//! Entropic multi-marginal transport by iterative proportional fitting, for
//! the canonical free energy at T > 0. The dual value certifies a lower
//! bound; an exactly-feasible plan (capped iterate plus an LP-completed
//! deficit supported on finite-cost tuples) certifies the upper, and the
//! run stops when the gap closes below tolerance.

use crate::geometry::{ln_factorial, Grid};
use crate::oracle::simplex::{self, Column, Lp};
use crate::{cast, Error, Result, Scalar};

pub struct IpfSolve<S> {
    pub value: S,
    pub gap: S,
    pub iterations: usize,
    /// Exactly-feasible plan over ordered support-cell tuples.
    pub plan: Vec<S>,
    pub support_cells: Vec<usize>,
    pub n: usize,
}

/// Minimize  sum W p + T sum p log(N! p / vol^N)  over probabilities on
/// ordered tuples of the support cells with every coordinate marginal equal
/// to `marginal`.
pub fn solve<S: Scalar>(
    grid: &Grid<S>,
    support_cells: &[usize],
    marginal: &[S],
    cost: &[S],
    n: usize,
    temperature: S,
    gap_tol: S,
) -> Result<IpfSolve<S>> {
    let m = support_cells.len();
    let size = m
        .checked_pow(n as u32)
        .ok_or_else(|| Error::TooLarge("tuple space overflow".into()))?;
    if size != cost.len() {
        return Err(Error::InvalidInput("cost array size mismatch".into()));
    }
    let vol = grid.cell_volume();
    let log_ref = cast::<S>(n as f64) * vol.ln() - ln_factorial::<S>(n);
    let helper = Rounding::new(m, n, cost, marginal);

    // The restricted problem may be infeasible outright (hard cores denser
    // than the grid allows); then no finite-free-energy state exists.
    if !helper.marginals_reachable(marginal) {
        return Ok(IpfSolve {
            value: S::infinity(),
            gap: S::zero(),
            iterations: 0,
            plan: vec![S::zero(); size],
            support_cells: support_cells.to_vec(),
            n,
        });
    }

    // pi(t) = (vol^N / N!) exp((sum_j u_j(t_j) - W(t))/T - 1)
    let mut u = vec![vec![S::zero(); m]; n];
    let mut plan: Vec<S> = vec![S::zero(); size];
    for (t, p) in plan.iter_mut().enumerate() {
        let w = cost[t];
        if w.is_infinite() {
            *p = S::zero();
            continue;
        }
        *p = (-w / temperature - S::one() + log_ref).exp();
    }

    let marginal_of = |plan: &[S], coord: usize| -> Vec<S> {
        let mut out = vec![S::zero(); m];
        let stride = m.pow((n - 1 - coord) as u32);
        for (t, p) in plan.iter().enumerate() {
            out[(t / stride) % m] += *p;
        }
        out
    };

    let dual_value = |plan: &[S], u: &Vec<Vec<S>>| -> S {
        let mut d = S::zero();
        for uj in u {
            for (a, ua) in uj.iter().enumerate() {
                d += *ua * marginal[a];
            }
        }
        d - temperature * plan.iter().copied().sum::<S>()
    };

    let primal_value = |plan: &[S]| -> S {
        let mut v = S::zero();
        for (t, p) in plan.iter().enumerate() {
            if *p > S::zero() {
                v = v + *p * cost[t] + temperature * *p * (p.ln() - log_ref);
            }
        }
        v
    };

    let max_cycles = 50_000usize;
    let mut best: Option<(S, S, usize, Vec<S>)> = None;
    for cycle in 1..=max_cycles {
        for coord in 0..n {
            let mj = marginal_of(&plan, coord);
            let stride = m.pow((n - 1 - coord) as u32);
            let mut ratio = vec![S::zero(); m];
            for a in 0..m {
                if marginal[a] <= S::zero() {
                    ratio[a] = S::zero();
                    continue;
                }
                if mj[a] <= S::zero() {
                    // No finite-cost tuple passes through a supported cell.
                    return Ok(IpfSolve {
                        value: S::infinity(),
                        gap: S::zero(),
                        iterations: cycle,
                        plan,
                        support_cells: support_cells.to_vec(),
                        n,
                    });
                }
                ratio[a] = marginal[a] / mj[a];
                u[coord][a] += temperature * ratio[a].ln();
            }
            for (t, p) in plan.iter_mut().enumerate() {
                *p = *p * ratio[(t / stride) % m];
            }
        }
        if cycle % 4 == 0 || cycle == 1 {
            let rounded = helper.round(&plan)?;
            let upper = primal_value(&rounded);
            let lower = dual_value(&plan, &u);
            let gap = upper - lower;
            if best.as_ref().is_none_or(|(g, ..)| gap < *g) {
                best = Some((gap, upper, cycle, rounded));
            }
            if gap.abs() < gap_tol {
                let (gap, upper, iterations, rounded) = best.unwrap();
                return Ok(IpfSolve {
                    value: upper,
                    gap,
                    iterations,
                    plan: rounded,
                    support_cells: support_cells.to_vec(),
                    n,
                });
            }
        }
    }
    Err(Error::NotConverged(format!(
        "IPF gap {} after {} cycles",
        best.map(|(g, ..)| g.to_f64().unwrap_or(f64::NAN)).unwrap_or(f64::NAN),
        max_cycles
    )))
}

/// Builds exactly-feasible plans out of near-feasible iterates: symmetrize,
/// cap each coordinate marginal at the target, and complete the remaining
/// deficit with a transport plan over finite-cost multisets.
struct Rounding<'a, S> {
    m: usize,
    n: usize,
    cost: &'a [S],
    marginal: &'a [S],
    /// Finite-cost multisets (nondecreasing index tuples) and their columns.
    tuples: Vec<Vec<usize>>,
    columns: Vec<Column<S>>,
    lp_costs: Vec<S>,
    permutations: Vec<Vec<usize>>,
}

impl<'a, S: Scalar> Rounding<'a, S> {
    fn new(m: usize, n: usize, cost: &'a [S], marginal: &'a [S]) -> Self {
        let mut tuples = Vec::new();
        let mut columns = Vec::new();
        let mut lp_costs = Vec::new();
        let mut current = Vec::with_capacity(n);
        #[allow(clippy::too_many_arguments)]
        fn rec<S: Scalar>(
            m: usize,
            n: usize,
            start: usize,
            current: &mut Vec<usize>,
            cost: &[S],
            tuples: &mut Vec<Vec<usize>>,
            columns: &mut Vec<Column<S>>,
            lp_costs: &mut Vec<S>,
        ) {
            if current.len() == n {
                let flat = current.iter().fold(0usize, |acc, &i| acc * m + i);
                let w = cost[flat];
                if w.is_finite() {
                    tuples.push(current.clone());
                    let mut col: Column<S> = Vec::new();
                    for &i in current.iter() {
                        match col.iter_mut().find(|(r, _)| *r == i) {
                            Some((_, v)) => *v += S::one(),
                            None => col.push((i, S::one())),
                        }
                    }
                    col.sort_by_key(|(r, _)| *r);
                    columns.push(col);
                    lp_costs.push(w);
                }
                return;
            }
            for i in start..m {
                current.push(i);
                rec(m, n, i, current, cost, tuples, columns, lp_costs);
                current.pop();
            }
        }
        rec(m, n, 0, &mut current, cost, &mut tuples, &mut columns, &mut lp_costs);
        Self {
            m,
            n,
            cost,
            marginal,
            tuples,
            columns,
            lp_costs,
            permutations: crate::states::all_permutations(n),
        }
    }

    /// Whether a plan with the full target marginals exists at all on the
    /// finite-cost tuples.
    fn marginals_reachable(&self, marginal: &[S]) -> bool {
        if self.tuples.is_empty() {
            return false;
        }
        let nf = cast::<S>(self.n as f64);
        let rhs: Vec<S> = marginal.iter().map(|p| *p * nf).collect();
        let zero = vec![S::zero(); self.lp_costs.len()];
        simplex::solve(Lp { costs: &zero, columns: &self.columns, rhs: &rhs }).is_ok()
    }

    /// Deficit completion: a plan over finite multisets with coordinate
    /// marginals `deficit`, spread over ordered tuples.
    fn completion(&self, deficit: &[S]) -> Result<Vec<(usize, S)>> {
        let nf = cast::<S>(self.n as f64);
        let rhs: Vec<S> = deficit.iter().map(|d| *d * nf).collect();
        let zero = vec![S::zero(); self.lp_costs.len()];
        let solution = simplex::solve(Lp { costs: &zero, columns: &self.columns, rhs: &rhs })?;
        let mut out = Vec::new();
        let perm_count = cast::<S>(self.permutations.len() as f64);
        for (tuple, weight) in self.tuples.iter().zip(solution.x.iter()) {
            if *weight <= S::zero() {
                continue;
            }
            let share = *weight / perm_count;
            for perm in &self.permutations {
                let flat = perm.iter().fold(0usize, |acc, &k| acc * self.m + tuple[k]);
                out.push((flat, share));
            }
        }
        Ok(out)
    }

    fn round(&self, plan: &[S]) -> Result<Vec<S>> {
        let m = self.m;
        let n = self.n;
        // Symmetrize; coordinate marginals become equal.
        let mut sym = vec![S::zero(); plan.len()];
        let perm_count = cast::<S>(self.permutations.len() as f64);
        for (t, p) in plan.iter().enumerate() {
            if *p <= S::zero() {
                continue;
            }
            let mut idx = Vec::with_capacity(n);
            let mut rest = t;
            for _ in 0..n {
                idx.push(rest % m);
                rest /= m;
            }
            idx.reverse();
            for perm in &self.permutations {
                let flat = perm.iter().fold(0usize, |acc, &k| acc * m + idx[k]);
                sym[flat] += *p / perm_count;
            }
        }
        // Cap every coordinate marginal at the target.
        for coord in 0..n {
            let stride = m.pow((n - 1 - coord) as u32);
            let mut mj = vec![S::zero(); m];
            for (t, p) in sym.iter().enumerate() {
                mj[(t / stride) % m] += *p;
            }
            let scale: Vec<S> = (0..m)
                .map(|a| {
                    if mj[a] > self.marginal[a] && mj[a] > S::zero() {
                        self.marginal[a] / mj[a]
                    } else {
                        S::one()
                    }
                })
                .collect();
            for (t, p) in sym.iter_mut().enumerate() {
                *p = *p * scale[(t / stride) % m];
            }
        }
        // Re-symmetrize dropping any capping asymmetry, then complete the
        // deficit. If the deficit alone is not completable, release mass by
        // scaling the capped plan down until it is; the full marginal is
        // completable by the constructor's reachability check.
        let capped = sym.clone();
        let mut release = S::zero();
        loop {
            let mut scaled: Vec<S> = capped.iter().map(|p| *p * (S::one() - release)).collect();
            let stride0 = m.pow((n - 1) as u32);
            let mut mu = vec![S::zero(); m];
            for (t, p) in scaled.iter().enumerate() {
                mu[(t / stride0) % m] += *p;
            }
            let deficit: Vec<S> = (0..m)
                .map(|a| (self.marginal[a] - mu[a]).max(S::zero()))
                .collect();
            match self.completion(&deficit) {
                Ok(entries) => {
                    for (flat, v) in entries {
                        debug_assert!(self.cost[flat].is_finite());
                        scaled[flat] += v;
                    }
                    return Ok(scaled);
                }
                Err(Error::Infeasible(_)) if release < S::one() => {
                    release = if release == S::zero() {
                        cast(1e-4)
                    } else {
                        (release * cast(20.0)).min(S::one())
                    };
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    #[test]
    fn zero_cost_recovers_product_entropy() {
        // W == 0: the optimum is the i.i.d. product; for a uniform marginal
        // the value is computable by hand.
        let grid = Grid::<f64>::new(vec![8], vec![0.5], vec![0.0]).unwrap();
        let n = 2usize;
        let m = 8usize;
        let marginal = vec![1.0 / m as f64; m];
        let cost = vec![0.0; m.pow(n as u32)];
        let sol = solve(&grid, &(0..m).collect::<Vec<_>>(), &marginal, &cost, n, 1.0, 1e-7).unwrap();
        let p: f64 = 1.0 / 64.0;
        let expected = 64.0 * (p * (2.0 * p / 0.25).ln());
        assert!((sol.value - expected).abs() < 1e-6, "{} vs {expected}", sol.value);
    }

    #[test]
    fn forbidden_diagonal_is_respected() {
        let grid = Grid::<f64>::new(vec![4], vec![1.0], vec![0.0]).unwrap();
        let m = 4usize;
        let marginal = vec![0.25; m];
        let mut cost = vec![0.0; 16];
        for a in 0..4 {
            cost[a * 4 + a] = f64::INFINITY;
        }
        let sol = solve(&grid, &[0, 1, 2, 3], &marginal, &cost, 2, 0.5, 1e-6).unwrap();
        assert!(sol.value.is_finite());
        for a in 0..4 {
            assert_eq!(sol.plan[a * 4 + a], 0.0);
        }
        // The feasible plan has exact marginals.
        for a in 0..4 {
            let row: f64 = (0..4).map(|b| sol.plan[a * 4 + b]).sum();
            let col: f64 = (0..4).map(|b| sol.plan[b * 4 + a]).sum();
            assert!((row - 0.25).abs() < 1e-9, "row marginal {row}");
            assert!((col - 0.25).abs() < 1e-9, "column marginal {col}");
        }
        let total: f64 = sol.plan.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fully_excluded_problem_reports_infinity() {
        let grid = Grid::<f64>::new(vec![3], vec![1.0], vec![0.0]).unwrap();
        let m = 3usize;
        let marginal = vec![1.0 / 3.0; m];
        // Every pair is forbidden: no two-particle state exists.
        let cost = vec![f64::INFINITY; 9];
        let sol = solve(&grid, &[0, 1, 2], &marginal, &cost, 2, 1.0, 1e-6).unwrap();
        assert!(sol.value.is_infinite());
    }
}

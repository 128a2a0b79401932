//! Two-phase revised simplex for small dense-basis linear programs
//!   min c.x  s.t.  A x = b,  x >= 0,
//! with sparse columns and Bland's anti-cycling rule. Problem sizes here are
//! desk scale (tens of rows, up to a few tens of thousands of columns), so a
//! dense basis inverse refreshed periodically is plenty.

use crate::{cast, Error, Result, Scalar};

/// Sparse column: list of (row, coefficient).
pub type Column<S> = Vec<(usize, S)>;

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub value: S,
    pub x: Vec<S>,
    /// Dual multipliers of the equality constraints.
    pub dual: Vec<S>,
    pub iterations: usize,
}

struct Basis<S> {
    inv: Vec<Vec<S>>, // B^{-1}, m x m
    cols: Vec<usize>, // basic column index per row (artificials get n + row)
}

pub struct Lp<'a, S> {
    pub costs: &'a [S],
    pub columns: &'a [Column<S>],
    pub rhs: &'a [S],
}

const MAX_ITER: usize = 200_000;
const REFRESH_EVERY: usize = 64;

pub fn solve<S: Scalar>(lp: Lp<'_, S>) -> Result<LpSolution<S>> {
    let m = lp.rhs.len();
    let n = lp.columns.len();
    let eps = cast::<S>(1e-9);

    // Normalize to b >= 0 by flipping rows.
    let mut flip = vec![false; m];
    let mut rhs: Vec<S> = lp.rhs.to_vec();
    for (i, b) in rhs.iter_mut().enumerate() {
        if *b < S::zero() {
            *b = -*b;
            flip[i] = true;
        }
    }
    let column = |j: usize| -> Column<S> {
        lp.columns[j]
            .iter()
            .map(|&(i, v)| (i, if flip[i] { -v } else { v }))
            .collect()
    };

    let mut basis = Basis {
        inv: identity::<S>(m),
        cols: (0..m).map(|i| n + i).collect(),
    };
    let mut x_basic: Vec<S> = rhs.clone();
    let mut iterations = 0usize;

    // Phase 1: minimize the sum of artificials.
    let phase1_cost = |j: usize| if j >= n { S::one() } else { S::zero() };
    run_phase(
        &mut basis,
        &mut x_basic,
        &rhs,
        n,
        m,
        &phase1_cost,
        &column,
        eps,
        &mut iterations,
    )?;
    let infeas: S = (0..m)
        .map(|i| if basis.cols[i] >= n { x_basic[i] } else { S::zero() })
        .sum();
    if infeas > cast(1e-7) {
        return Err(Error::Infeasible(format!(
            "phase-1 residual {}",
            infeas.to_f64().unwrap_or(f64::NAN)
        )));
    }

    // Drive zero-level artificials out of the basis where a structural pivot
    // exists; rows where none exists are redundant constraints and their
    // artificial can stay at level zero for good.
    purge_artificials(&mut basis, &rhs, &mut x_basic, n, m, &column)?;

    // Phase 2 with the true costs. Artificials never enter; any that remain
    // basic sit on redundant rows at level zero and are costed at zero so
    // they cannot pollute the duals.
    let phase2_cost = |j: usize| if j >= n { S::zero() } else { lp.costs[j] };
    run_phase(
        &mut basis,
        &mut x_basic,
        &rhs,
        n,
        m,
        &phase2_cost,
        &column,
        eps,
        &mut iterations,
    )?;

    let mut x = vec![S::zero(); n];
    let mut value = S::zero();
    for i in 0..m {
        if basis.cols[i] < n {
            x[basis.cols[i]] = x_basic[i];
            value += lp.costs[basis.cols[i]] * x_basic[i];
        }
    }
    // Dual y = c_B B^{-1}, mapped back through the row flips.
    let mut dual = vec![S::zero(); m];
    for (row, &col_idx) in basis.inv.iter().zip(&basis.cols) {
        let cb = phase2_cost(col_idx);
        for k in 0..m {
            dual[k] += cb * row[k];
        }
    }
    for (k, f) in flip.iter().enumerate() {
        if *f {
            dual[k] = -dual[k];
        }
    }
    Ok(LpSolution { value, x, dual, iterations })
}

#[allow(clippy::too_many_arguments)]
fn run_phase<S: Scalar>(
    basis: &mut Basis<S>,
    x_basic: &mut [S],
    rhs: &[S],
    n: usize,
    m: usize,
    cost: &dyn Fn(usize) -> S,
    column: &dyn Fn(usize) -> Column<S>,
    eps: S,
    iterations: &mut usize,
) -> Result<()> {
    let mut since_refresh = 0usize;
    loop {
        *iterations += 1;
        if *iterations > MAX_ITER {
            return Err(Error::NotConverged("simplex iteration limit".into()));
        }
        // y = c_B B^{-1}
        let mut y = vec![S::zero(); m];
        for i in 0..m {
            let cb = cost(basis.cols[i]);
            if cb != S::zero() {
                for k in 0..m {
                    y[k] += cb * basis.inv[i][k];
                }
            }
        }
        // Entering column: Bland's rule (smallest index with negative
        // reduced cost).
        let in_basis = {
            let mut flags = vec![false; n + m];
            for &c in &basis.cols {
                flags[c] = true;
            }
            flags
        };
        let mut entering = None;
        for j in 0..n {
            if in_basis[j] {
                continue;
            }
            let mut reduced = cost(j);
            for &(i, v) in &column(j) {
                reduced = reduced - y[i] * v;
            }
            if reduced < -eps {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else { return Ok(()) };

        // Direction d = B^{-1} A_j.
        let col = column(j);
        let mut d = vec![S::zero(); m];
        for (i, row) in basis.inv.iter().enumerate() {
            let mut acc = S::zero();
            for &(r, v) in &col {
                acc += row[r] * v;
            }
            d[i] = acc;
        }
        // Ratio test, Bland's tie-break on the leaving column index.
        let mut leave: Option<(usize, S)> = None;
        for i in 0..m {
            if d[i] > eps {
                let ratio = x_basic[i] / d[i];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - eps
                            || ((ratio - lr).abs() <= eps && basis.cols[i] < basis.cols[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, step)) = leave else {
            return Err(Error::NotConverged("unbounded linear program".into()));
        };

        // Pivot: update the basic solution and B^{-1}.
        for i in 0..m {
            if i != row {
                x_basic[i] = x_basic[i] - step * d[i];
                if x_basic[i] < S::zero() {
                    x_basic[i] = S::zero();
                }
            }
        }
        x_basic[row] = step;
        basis.cols[row] = j;
        let pivot = d[row];
        for k in 0..m {
            basis.inv[row][k] = basis.inv[row][k] / pivot;
        }
        for i in 0..m {
            if i != row && d[i] != S::zero() {
                let f = d[i];
                for k in 0..m {
                    basis.inv[i][k] = basis.inv[i][k] - f * basis.inv[row][k];
                }
            }
        }
        since_refresh += 1;
        if since_refresh >= REFRESH_EVERY {
            since_refresh = 0;
            refresh(basis, rhs, x_basic, n, column, m)?;
        }
    }
}

/// Pivot structural columns into rows still held by artificials. Works at
/// step zero, so the basic solution is unchanged.
fn purge_artificials<S: Scalar>(
    basis: &mut Basis<S>,
    rhs: &[S],
    x_basic: &mut [S],
    n: usize,
    m: usize,
    column: &dyn Fn(usize) -> Column<S>,
) -> Result<()> {
    let eps = cast::<S>(1e-9);
    for row in 0..m {
        if basis.cols[row] < n {
            continue;
        }
        let in_basis: Vec<bool> = {
            let mut flags = vec![false; n];
            for &c in &basis.cols {
                if c < n {
                    flags[c] = true;
                }
            }
            flags
        };
        for j in 0..n {
            if in_basis[j] {
                continue;
            }
            // d_row = (B^{-1} A_j)_row
            let col = column(j);
            let mut d_row = S::zero();
            for &(r, v) in &col {
                d_row += basis.inv[row][r] * v;
            }
            if d_row.abs() > eps {
                // Full direction for the basis-inverse update.
                let mut d = vec![S::zero(); m];
                for (i, inv_row) in basis.inv.iter().enumerate() {
                    let mut acc = S::zero();
                    for &(r, v) in &col {
                        acc += inv_row[r] * v;
                    }
                    d[i] = acc;
                }
                basis.cols[row] = j;
                let pivot = d[row];
                for k in 0..m {
                    basis.inv[row][k] = basis.inv[row][k] / pivot;
                }
                for i in 0..m {
                    if i != row && d[i] != S::zero() {
                        let f = d[i];
                        for k in 0..m {
                            basis.inv[i][k] = basis.inv[i][k] - f * basis.inv[row][k];
                        }
                    }
                }
                break;
            }
        }
    }
    refresh(basis, rhs, x_basic, n, column, m)
}

/// Recompute B^{-1} and the basic solution from scratch to shed pivot drift.
fn refresh<S: Scalar>(
    basis: &mut Basis<S>,
    rhs: &[S],
    x_basic: &mut [S],
    n: usize,
    column: &dyn Fn(usize) -> Column<S>,
    m: usize,
) -> Result<()> {
    // Assemble B column-wise.
    let mut mat = vec![vec![S::zero(); m]; m];
    for (pos, &cidx) in basis.cols.iter().enumerate() {
        if cidx >= n {
            mat[cidx - n][pos] = S::one();
        } else {
            for &(r, v) in &column(cidx) {
                mat[r][pos] = v;
            }
        }
    }
    let inv = invert(&mat).ok_or_else(|| Error::NotConverged("singular simplex basis".into()))?;
    // x_B = B^{-1} b
    for i in 0..m {
        let mut acc = S::zero();
        for k in 0..m {
            acc += inv[i][k] * rhs[k];
        }
        x_basic[i] = acc.max(S::zero());
    }
    basis.inv = inv;
    Ok(())
}

fn identity<S: Scalar>(m: usize) -> Vec<Vec<S>> {
    let mut out = vec![vec![S::zero(); m]; m];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = S::one();
    }
    out
}

fn invert<S: Scalar>(mat: &[Vec<S>]) -> Option<Vec<Vec<S>>> {
    let m = mat.len();
    let mut a: Vec<Vec<S>> = mat.to_vec();
    let mut inv = identity::<S>(m);
    for col in 0..m {
        let mut piv = col;
        for r in (col + 1)..m {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < cast(1e-13) {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for k in 0..m {
            a[col][k] = a[col][k] / p;
            inv[col][k] = inv[col][k] / p;
        }
        for r in 0..m {
            if r != col && a[r][col] != S::zero() {
                let f = a[r][col];
                for k in 0..m {
                    a[r][k] = a[r][k] - f * a[col][k];
                    inv[r][k] = inv[r][k] - f * inv[col][k];
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_textbook_lp() {
        // min -x - y s.t. x + y + s1 = 4, x + 3y + s2 = 6, all >= 0
        let costs = vec![-1.0, -1.0, 0.0, 0.0];
        let columns: Vec<Column<f64>> = vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, 1.0), (1, 3.0)],
            vec![(0, 1.0)],
            vec![(1, 1.0)],
        ];
        let rhs = vec![4.0, 6.0];
        let sol = solve(Lp { costs: &costs, columns: &columns, rhs: &rhs }).unwrap();
        assert!((sol.value + 4.0).abs() < 1e-9, "value {}", sol.value);
    }

    #[test]
    fn detects_infeasibility() {
        // x = 1 and x = 2 simultaneously.
        let costs = vec![0.0];
        let columns: Vec<Column<f64>> = vec![vec![(0, 1.0), (1, 1.0)]];
        let rhs = vec![1.0, 2.0];
        assert!(matches!(
            solve(Lp { costs: &costs, columns: &columns, rhs: &rhs }),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn transportation_duality_gap_vanishes() {
        // 3 x 3 transportation problem; primal optimum equals b . y.
        let supplies = [0.3, 0.5, 0.2];
        let demands = [0.4, 0.4, 0.2];
        let cost = |i: usize, j: usize| ((i as f64) - (j as f64)).abs() + 0.1 * (i + j) as f64;
        let mut costs = Vec::new();
        let mut columns: Vec<Column<f64>> = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                costs.push(cost(i, j));
                columns.push(vec![(i, 1.0), (3 + j, 1.0)]);
            }
        }
        let mut rhs = supplies.to_vec();
        rhs.extend_from_slice(&demands);
        let sol = solve(Lp { costs: &costs, columns: &columns, rhs: &rhs }).unwrap();
        let dual_value: f64 = rhs.iter().zip(&sol.dual).map(|(b, y)| b * y).sum();
        assert!((sol.value - dual_value).abs() < 1e-9);
        // Dual feasibility: reduced costs nonnegative.
        for (k, col) in columns.iter().enumerate() {
            let slack: f64 = costs[k] - col.iter().map(|&(i, v)| sol.dual[i] * v).sum::<f64>();
            assert!(slack > -1e-9);
        }
    }
}

//! Transportation problems by successive shortest paths with potentials.
//! Serves as the independent cross-check of the simplex route for twoable
//! particles: F_0 at N = 2 is the optimal transport cost between rho/2 and
//! itself.

use crate::{cast, Error, Result, Scalar};

/// min sum c[i][j] f[i][j] with row sums `supply`, column sums `demand`
/// (balanced), f >= 0. Costs must be bounded below; they are shifted to be
/// nonnegative internally so Dijkstra applies.
pub fn transport<S: Scalar>(supply: &[S], demand: &[S], cost: &[Vec<S>]) -> Result<S> {
    let n = supply.len();
    let m = demand.len();
    let total_supply: S = supply.iter().copied().sum();
    let total_demand: S = demand.iter().copied().sum();
    if (total_supply - total_demand).abs() > cast(1e-9) {
        return Err(Error::InvalidInput("unbalanced transportation problem".into()));
    }
    // Shift costs to be nonnegative; restore by -shift * total at the end.
    let mut min_cost = S::infinity();
    for row in cost {
        for &c in row {
            if c.is_finite() && c < min_cost {
                min_cost = c;
            }
        }
    }
    if !min_cost.is_finite() {
        return Err(Error::Infeasible("all arcs are forbidden".into()));
    }
    let shift = if min_cost < S::zero() { -min_cost } else { S::zero() };

    let mut flow = vec![vec![S::zero(); m]; n];
    let mut residual_supply: Vec<S> = supply.to_vec();
    let mut residual_demand: Vec<S> = demand.to_vec();
    // Johnson potentials for reduced costs.
    let mut pot_left = vec![S::zero(); n];
    let mut pot_right = vec![S::zero(); m];
    let eps = cast::<S>(1e-15);

    loop {
        let remaining: S = residual_supply.iter().copied().sum();
        if remaining <= cast(1e-12) {
            break;
        }
        // Dijkstra with "row i reachable" distances over left/right nodes.
        let inf = S::infinity();
        let mut dist_l = vec![inf; n];
        let mut dist_r = vec![inf; m];
        let mut parent_r: Vec<Option<usize>> = vec![None; m]; // left node feeding j
        let mut parent_l: Vec<Option<usize>> = vec![None; n]; // right node feeding i
        let mut done_l = vec![false; n];
        let mut done_r = vec![false; m];
        for i in 0..n {
            if residual_supply[i] > eps {
                dist_l[i] = S::zero();
            }
        }
        loop {
            // Pick the unsettled node with the smallest distance.
            let mut best: Option<(bool, usize, S)> = None;
            for i in 0..n {
                if !done_l[i] && dist_l[i] < inf
                    && best.is_none_or(|(_, _, d)| dist_l[i] < d) {
                        best = Some((true, i, dist_l[i]));
                    }
            }
            for j in 0..m {
                if !done_r[j] && dist_r[j] < inf
                    && best.is_none_or(|(_, _, d)| dist_r[j] < d) {
                        best = Some((false, j, dist_r[j]));
                    }
            }
            let Some((is_left, idx, _)) = best else { break };
            if is_left {
                done_l[idx] = true;
                for j in 0..m {
                    let c = cost[idx][j];
                    if !c.is_finite() {
                        continue;
                    }
                    let reduced = c + shift + pot_left[idx] - pot_right[j];
                    let nd = dist_l[idx] + reduced.max(S::zero());
                    if nd < dist_r[j] {
                        dist_r[j] = nd;
                        parent_r[j] = Some(idx);
                    }
                }
            } else {
                done_r[idx] = true;
                for i in 0..n {
                    if flow[i][idx] > eps {
                        let c = cost[i][idx];
                        let reduced = -(c + shift + pot_left[i] - pot_right[idx]);
                        let nd = dist_r[idx] + reduced.max(S::zero());
                        if nd < dist_l[i] {
                            dist_l[i] = nd;
                            parent_l[i] = Some(idx);
                        }
                    }
                }
            }
        }
        // Cheapest reachable demand node with residual demand.
        let mut target: Option<usize> = None;
        for j in 0..m {
            if residual_demand[j] > eps && dist_r[j] < inf
                && target.is_none_or(|t| dist_r[j] < dist_r[t]) {
                    target = Some(j);
                }
        }
        let Some(t) = target else {
            return Err(Error::Infeasible("demand unreachable in the residual network".into()));
        };
        // Update potentials.
        for i in 0..n {
            if dist_l[i] < inf {
                pot_left[i] += dist_l[i];
            }
        }
        for j in 0..m {
            if dist_r[j] < inf {
                pot_right[j] += dist_r[j];
            }
        }
        // Trace the augmenting path back to a supply node.
        let mut path: Vec<(usize, usize, bool)> = Vec::new(); // (i, j, forward)
        let mut j = t;
        loop {
            let i = parent_r[j].expect("path must reach a supply node");
            path.push((i, j, true));
            match parent_l[i] {
                None => break,
                Some(back_j) => {
                    path.push((i, back_j, false));
                    j = back_j;
                }
            }
        }
        // Bottleneck.
        let source = path.last().unwrap().0;
        let mut delta = residual_supply[source].min(residual_demand[t]);
        for &(i, j2, forward) in &path {
            if !forward {
                delta = delta.min(flow[i][j2]);
            }
        }
        if delta <= eps {
            return Err(Error::NotConverged("vanishing augmentation step".into()));
        }
        for &(i, j2, forward) in &path {
            if forward {
                flow[i][j2] += delta;
            } else {
                flow[i][j2] = flow[i][j2] - delta;
            }
        }
        residual_supply[source] = residual_supply[source] - delta;
        residual_demand[t] = residual_demand[t] - delta;
    }

    let mut value = S::zero();
    for i in 0..n {
        for j in 0..m {
            if flow[i][j] > S::zero() {
                value += flow[i][j] * cost[i][j];
            }
        }
    }
    Ok(value)
}

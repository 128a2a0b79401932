//! Discrete canonical and grand-canonical states with exact density,
//! entropy, interaction-energy and free-energy evaluation, plus the block
//! approximation and geometric localization transforms.
//!
//! Entropies are differential entropies of piecewise-constant densities: a
//! region of volume v carrying probability p contributes p log(p/v). A
//! symmetric N-body state pays the indistinguishability factor N! inside the
//! logarithm; for symmetrized tensor products of factors with disjoint
//! supports the permutation count cancels that factor exactly, which is what
//! the closed-form mixture path below exploits.

use crate::covering::Partition;
use crate::density::GridDensity;
use crate::geometry::{distance, ln_factorial, Grid};
use crate::potential::PotentialSpec;
use crate::{cast, Error, Result, Scalar};
use std::collections::BTreeMap;

/// Hard cap on sparse-joint sizes; operations beyond it fail loudly.
pub const SPARSE_JOINT_CAP: usize = 10_000_000;

/// One entry of a one-body distribution: probability mass sitting on an
/// axis-aligned box inside a grid cell (the whole cell, a sub-box left by an
/// interval split, or a single point for Monge states).
#[derive(Debug, Clone, PartialEq)]
pub struct OneBodyEntry<S> {
    pub cell: usize,
    pub mass: S,
    /// Volume of the support box; zero for a point mass.
    pub volume: S,
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    /// Representative point used for interaction distances.
    pub position: Vec<S>,
}

/// Sparse one-body probability distribution on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBody<S> {
    pub entries: Vec<OneBodyEntry<S>>,
}

impl<S: Scalar> OneBody<S> {
    /// Distribution proportional to the density restricted to a set of
    /// cells with per-cell weights; masses are normalized to one.
    pub fn from_weighted_cells(rho: &GridDensity<S>, cells: &[(usize, S)]) -> Option<Self> {
        let vol = rho.grid.cell_volume();
        let mut entries = Vec::new();
        let mut total = S::zero();
        for &(cell, weight) in cells {
            let mass = rho.values[cell] * vol * weight;
            if mass > S::zero() {
                total += mass;
                let (lo, hi) = cell_box(&rho.grid, cell);
                entries.push(OneBodyEntry {
                    cell,
                    mass,
                    volume: vol,
                    position: rho.grid.center(cell),
                    lo,
                    hi,
                });
            }
        }
        if total <= S::zero() {
            return None;
        }
        for e in &mut entries {
            e.mass = e.mass / total;
        }
        Some(Self { entries })
    }

    pub fn point(grid: &Grid<S>, position: Vec<S>) -> Self {
        let cell = cell_of_point(grid, &position);
        Self {
            entries: vec![OneBodyEntry {
                cell,
                mass: S::one(),
                volume: S::zero(),
                lo: position.clone(),
                hi: position.clone(),
                position,
            }],
        }
    }

    pub fn mass(&self) -> S {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// int q log q; +infinity when a point mass is present.
    pub fn q_log_q(&self) -> S {
        let mut acc = S::zero();
        for e in &self.entries {
            if e.mass <= S::zero() {
                continue;
            }
            if e.volume <= S::zero() {
                return S::infinity();
            }
            acc += e.mass * (e.mass / e.volume).ln();
        }
        acc
    }

    fn boxes_overlap(a: &OneBodyEntry<S>, b: &OneBodyEntry<S>) -> bool {
        let dim = a.lo.len();
        let mut positive = true;
        let mut touching = true;
        for ax in 0..dim {
            let lo = a.lo[ax].max(b.lo[ax]);
            let hi = a.hi[ax].min(b.hi[ax]);
            if hi - lo <= S::zero() {
                positive = false;
            }
            if hi < lo {
                touching = false;
            }
        }
        // Positive-volume overlap always counts. Degenerate (point) entries
        // overlap only when they coincide with another support set.
        if positive {
            return true;
        }
        let degenerate = a.volume <= S::zero() || b.volume <= S::zero();
        degenerate && touching
    }

    pub fn overlaps(&self, other: &OneBody<S>) -> bool {
        self.entries
            .iter()
            .any(|a| other.entries.iter().any(|b| Self::boxes_overlap(a, b)))
    }
}

fn cell_box<S: Scalar>(grid: &Grid<S>, cell: usize) -> (Vec<S>, Vec<S>) {
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

fn cell_of_point<S: Scalar>(grid: &Grid<S>, p: &[S]) -> usize {
    let mut idx = Vec::with_capacity(grid.dim());
    for ax in 0..grid.dim() {
        let rel = ((p[ax] - grid.origin[ax]) / grid.spacing[ax]).floor();
        let k = rel.to_f64().unwrap_or(0.0).max(0.0) as usize;
        idx.push(k.min(grid.shape[ax] - 1));
    }
    grid.flat_index(&idx)
}

/// Symmetric N-body probability as explicit masses on ordered cell tuples.
#[derive(Debug, Clone)]
pub struct SparseJoint<S> {
    pub grid: Grid<S>,
    pub n: usize,
    pub entries: BTreeMap<Vec<usize>, S>,
    pub symmetric: bool,
}

/// Weighted symmetrized tensor product.
#[derive(Debug, Clone)]
pub struct MixtureTerm<S> {
    pub weight: S,
    pub factors: Vec<OneBody<S>>,
}

/// Convex combination of symmetrized tensor products.
#[derive(Debug, Clone)]
pub struct Mixture<S> {
    pub grid: Grid<S>,
    pub n: usize,
    pub terms: Vec<MixtureTerm<S>>,
}

/// N-particle state in one of the two supported representations.
#[derive(Debug, Clone)]
pub enum CanonicalState<S> {
    SparseJoint(SparseJoint<S>),
    Mixture(Mixture<S>),
}

impl<S: Scalar> CanonicalState<S> {
    pub fn n(&self) -> usize {
        match self {
            CanonicalState::SparseJoint(j) => j.n,
            CanonicalState::Mixture(m) => m.n,
        }
    }

    pub fn grid(&self) -> &Grid<S> {
        match self {
            CanonicalState::SparseJoint(j) => &j.grid,
            CanonicalState::Mixture(m) => &m.grid,
        }
    }

    pub fn total_probability(&self) -> S {
        match self {
            CanonicalState::SparseJoint(j) => j.entries.values().copied().sum(),
            CanonicalState::Mixture(m) => m.terms.iter().map(|t| t.weight).sum(),
        }
    }

    /// One-body density (the sum of the N marginals) as a grid density.
    pub fn density(&self) -> GridDensity<S> {
        let grid = self.grid().clone();
        let vol = grid.cell_volume();
        let mut masses = vec![S::zero(); grid.cell_count()];
        match self {
            CanonicalState::SparseJoint(j) => {
                for (tuple, p) in &j.entries {
                    for &cell in tuple {
                        masses[cell] += *p;
                    }
                }
            }
            CanonicalState::Mixture(m) => {
                for term in &m.terms {
                    for factor in &term.factors {
                        for e in &factor.entries {
                            masses[e.cell] += term.weight * e.mass;
                        }
                    }
                }
            }
        }
        let values = masses.into_iter().map(|m| m / vol).collect();
        GridDensity { grid, values }
    }

    /// Interaction energy sum over pairs, short-circuiting to +infinity on
    /// any supported hard-core violation.
    pub fn interaction_energy(&self, w: &PotentialSpec<S>) -> S {
        match self {
            CanonicalState::SparseJoint(j) => {
                let mut acc = S::zero();
                for (tuple, p) in &j.entries {
                    if *p <= S::zero() {
                        continue;
                    }
                    let mut cost = S::zero();
                    for i in 0..tuple.len() {
                        for k in (i + 1)..tuple.len() {
                            let r = j.grid.center_distance(tuple[i], tuple[k]);
                            let v = w.evaluate(r);
                            if v.is_infinite() {
                                return S::infinity();
                            }
                            cost += v;
                        }
                    }
                    acc += *p * cost;
                }
                acc
            }
            CanonicalState::Mixture(m) => {
                let mut acc = S::zero();
                for term in &m.terms {
                    if term.weight <= S::zero() {
                        continue;
                    }
                    for i in 0..term.factors.len() {
                        for k in (i + 1)..term.factors.len() {
                            let pair = pair_energy(&term.factors[i], &term.factors[k], w);
                            if pair.is_infinite() {
                                return S::infinity();
                            }
                            acc += term.weight * pair;
                        }
                    }
                }
                acc
            }
        }
    }

    /// Entropy -int P log(N! P). Mixtures take the exact disjoint-support
    /// route when available, otherwise expand to a sparse joint.
    pub fn entropy(&self) -> Result<S> {
        match self {
            CanonicalState::SparseJoint(j) => Ok(j.entropy()),
            CanonicalState::Mixture(m) => {
                if let Some(s) = m.entropy_disjoint() {
                    Ok(s)
                } else {
                    let joint = m.expand(SPARSE_JOINT_CAP)?;
                    Ok(joint.entropy())
                }
            }
        }
    }

    pub fn free_energy(&self, w: &PotentialSpec<S>, temperature: S) -> Result<S> {
        let u = self.interaction_energy(w);
        if u.is_infinite() {
            return Ok(S::infinity());
        }
        if temperature == S::zero() {
            return Ok(u);
        }
        let s = self.entropy()?;
        if s == S::neg_infinity() {
            return Ok(S::infinity());
        }
        Ok(u - temperature * s)
    }

    /// Symmetrized copy (sparse joints only; mixtures are symmetric by
    /// construction).
    pub fn symmetrize(&self) -> CanonicalState<S> {
        match self {
            CanonicalState::Mixture(_) => self.clone(),
            CanonicalState::SparseJoint(j) => {
                let mut out: BTreeMap<Vec<usize>, S> = BTreeMap::new();
                let perms = permutations(j.n);
                let factor = S::one() / cast::<S>(perms.len() as f64);
                for (tuple, p) in &j.entries {
                    for perm in &perms {
                        let t: Vec<usize> = perm.iter().map(|&i| tuple[i]).collect();
                        *out.entry(t).or_insert_with(S::zero) += *p * factor;
                    }
                }
                CanonicalState::SparseJoint(SparseJoint {
                    grid: j.grid.clone(),
                    n: j.n,
                    entries: out,
                    symmetric: true,
                })
            }
        }
    }
}

fn pair_energy<S: Scalar>(a: &OneBody<S>, b: &OneBody<S>, w: &PotentialSpec<S>) -> S {
    let mut acc = S::zero();
    for ea in &a.entries {
        if ea.mass <= S::zero() {
            continue;
        }
        for eb in &b.entries {
            if eb.mass <= S::zero() {
                continue;
            }
            let v = w.evaluate(distance(&ea.position, &eb.position));
            if v.is_infinite() {
                return S::infinity();
            }
            acc += ea.mass * eb.mass * v;
        }
    }
    acc
}

impl<S: Scalar> SparseJoint<S> {
    fn entropy(&self) -> S {
        let vol = self.grid.cell_volume().powi(self.n as i32);
        let lnf = ln_factorial::<S>(self.n);
        let mut acc = S::zero();
        for p in self.entries.values() {
            if *p > S::zero() {
                acc = acc - *p * (lnf + (*p / vol).ln());
            }
        }
        acc
    }
}

impl<S: Scalar> Mixture<S> {
    /// Exact entropy when the distinct factors have pairwise disjoint
    /// supports. Terms are grouped by factor multiset; repeated factors
    /// within a term (tensor powers) are handled through their permutation
    /// count. Returns None when factor supports overlap.
    fn entropy_disjoint(&self) -> Option<S> {
        // Classify factors by exact content.
        let mut classes: Vec<&OneBody<S>> = Vec::new();
        let mut term_sigs: Vec<(S, Vec<usize>)> = Vec::new();
        for term in &self.terms {
            if term.weight <= S::zero() {
                continue;
            }
            let mut sig = Vec::with_capacity(term.factors.len());
            for f in &term.factors {
                let id = match classes.iter().position(|c| *c == f) {
                    Some(id) => id,
                    None => {
                        classes.push(f);
                        classes.len() - 1
                    }
                };
                sig.push(id);
            }
            sig.sort_unstable();
            term_sigs.push((term.weight, sig));
        }
        for i in 0..classes.len() {
            for j in (i + 1)..classes.len() {
                if classes[i].overlaps(classes[j]) {
                    return None;
                }
            }
        }
        // Merge terms with identical factor multisets.
        let mut merged: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        for (w, sig) in term_sigs {
            *merged.entry(sig).or_insert_with(S::zero) += w;
        }
        let mut entropy = S::zero();
        for (sig, w) in &merged {
            // - S(Q_m) = sum_i n_i int q_i log q_i + sum_i ln(n_i!)
            let mut neg = S::zero();
            let mut run = 0usize;
            for (k, &id) in sig.iter().enumerate() {
                run += 1;
                let end_of_run = k + 1 == sig.len() || sig[k + 1] != id;
                if end_of_run {
                    let qlq = classes[id].q_log_q();
                    if qlq.is_infinite() {
                        return Some(S::neg_infinity());
                    }
                    neg = neg + cast::<S>(run as f64) * qlq + ln_factorial::<S>(run);
                    run = 0;
                }
            }
            entropy = entropy - *w * neg - *w * w.ln();
        }
        Some(entropy)
    }

    /// Expansion into an explicit sparse joint. Requires full-cell factors;
    /// partial-cell or point supports would lose their sub-cell geometry.
    pub fn expand(&self, cap: usize) -> Result<SparseJoint<S>> {
        let vol = self.grid.cell_volume();
        for term in &self.terms {
            for f in &term.factors {
                for e in &f.entries {
                    if (e.volume - vol).abs() > vol * cast(1e-9) {
                        return Err(Error::SupportOverlap(
                            "cannot expand a mixture with sub-cell factor supports".into(),
                        ));
                    }
                }
            }
        }
        let mut entries: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        let perms = permutations(self.n);
        let inv_nf = S::one() / cast::<S>(perms.len() as f64);
        for term in &self.terms {
            if term.weight <= S::zero() {
                continue;
            }
            for perm in &perms {
                let ordered: Vec<&OneBody<S>> = perm.iter().map(|&i| &term.factors[i]).collect();
                let mut stack: Vec<(usize, Vec<usize>, S)> = vec![(0, Vec::new(), term.weight * inv_nf)];
                while let Some((depth, tuple, value)) = stack.pop() {
                    if depth == self.n {
                        *entries.entry(tuple).or_insert_with(S::zero) += value;
                        if entries.len() > cap {
                            return Err(Error::TooLarge(format!(
                                "sparse joint expansion exceeds the {cap}-entry cap"
                            )));
                        }
                        continue;
                    }
                    for e in &ordered[depth].entries {
                        if e.mass <= S::zero() {
                            continue;
                        }
                        let mut t = tuple.clone();
                        t.push(e.cell);
                        stack.push((depth + 1, t, value * e.mass));
                    }
                }
            }
        }
        Ok(SparseJoint { grid: self.grid.clone(), n: self.n, entries, symmetric: true })
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    heap_permute(&mut idx, n, &mut out);
    out
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    permutations(n)
}

pub fn permutation_count(n: usize) -> usize {
    (1..=n).product()
}

fn heap_permute(idx: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(idx.clone());
        return;
    }
    for i in 0..k {
        heap_permute(idx, k - 1, out);
        if k.is_multiple_of(2) {
            idx.swap(i, k - 1);
        } else {
            idx.swap(0, k - 1);
        }
    }
}

/// Grand-canonical state: vacuum weight plus weighted canonical sectors.
#[derive(Debug, Clone)]
pub struct GrandCanonicalState<S> {
    pub grid: Grid<S>,
    pub p0: S,
    /// (weight, normalized n-particle state); the sector index is the
    /// state's particle number.
    pub sectors: Vec<(S, CanonicalState<S>)>,
}

impl<S: Scalar> GrandCanonicalState<S> {
    pub fn total_probability(&self) -> S {
        self.p0 + self.sectors.iter().map(|(w, _)| *w).sum::<S>()
    }

    pub fn expected_particles(&self) -> S {
        self.sectors
            .iter()
            .map(|(w, st)| *w * cast::<S>(st.n() as f64))
            .sum()
    }

    pub fn density(&self) -> GridDensity<S> {
        let mut values = vec![S::zero(); self.grid.cell_count()];
        for (w, st) in &self.sectors {
            let d = st.density();
            for (v, dv) in values.iter_mut().zip(d.values.iter()) {
                *v += *w * *dv;
            }
        }
        GridDensity { grid: self.grid.clone(), values }
    }

    pub fn interaction_energy(&self, w: &PotentialSpec<S>) -> S {
        let mut acc = S::zero();
        for (weight, st) in &self.sectors {
            if *weight <= S::zero() || st.n() < 2 {
                continue;
            }
            let u = st.interaction_energy(w);
            if u.is_infinite() {
                return S::infinity();
            }
            acc += *weight * u;
        }
        acc
    }

    /// S(P) = sum of sector entropies, including the vacuum term.
    pub fn entropy(&self) -> Result<S> {
        let mut acc = S::zero();
        if self.p0 > S::zero() {
            acc = acc - self.p0 * self.p0.ln();
        }
        for (w, st) in &self.sectors {
            if *w <= S::zero() {
                continue;
            }
            let s = st.entropy()?;
            if s == S::neg_infinity() {
                return Ok(S::neg_infinity());
            }
            acc = acc + *w * s - *w * w.ln();
        }
        Ok(acc)
    }

    pub fn free_energy(&self, w: &PotentialSpec<S>, temperature: S) -> Result<S> {
        let u = self.interaction_energy(w);
        if u.is_infinite() {
            return Ok(S::infinity());
        }
        if temperature == S::zero() {
            return Ok(u);
        }
        let s = self.entropy()?;
        if s == S::neg_infinity() {
            return Ok(S::infinity());
        }
        Ok(u - temperature * s)
    }
}

/// Convex combination of grand-canonical states. The mixture itself is a
/// valid state with the averaged density; by concavity of the entropy the
/// weighted free-energy average is an upper bound for the mixture's free
/// energy, which is what the sandwich checks use when the merged state is
/// too entangled for an exact entropy.
#[derive(Debug, Clone)]
pub struct GcConvexCombination<S> {
    pub parts: Vec<(S, GrandCanonicalState<S>)>,
}

impl<S: Scalar> GcConvexCombination<S> {
    pub fn density(&self) -> GridDensity<S> {
        let grid = self.parts[0].1.grid.clone();
        let mut values = vec![S::zero(); grid.cell_count()];
        for (w, part) in &self.parts {
            let d = part.density();
            for (v, dv) in values.iter_mut().zip(d.values.iter()) {
                *v += *w * *dv;
            }
        }
        GridDensity { grid, values }
    }

    /// sum_k w_k G_T(P_k) >= G_T(sum_k w_k P_k).
    pub fn free_energy_upper(&self, w: &PotentialSpec<S>, temperature: S) -> Result<S> {
        let mut acc = S::zero();
        for (weight, part) in &self.parts {
            let f = part.free_energy(w, temperature)?;
            if f.is_infinite() {
                return Ok(S::infinity());
            }
            acc += *weight * f;
        }
        Ok(acc)
    }

    /// Sector-wise merge into a single grand-canonical state.
    pub fn merged(&self) -> Result<GrandCanonicalState<S>> {
        let grid = self.parts[0].1.grid.clone();
        let mut p0 = S::zero();
        let mut sectors: BTreeMap<usize, (S, Vec<MixtureTerm<S>>)> = BTreeMap::new();
        for (w, part) in &self.parts {
            p0 += *w * part.p0;
            for (sw, st) in &part.sectors {
                let m = match st {
                    CanonicalState::Mixture(m) => m,
                    CanonicalState::SparseJoint(_) => {
                        return Err(Error::InvalidInput(
                            "merging requires mixture-represented sectors".into(),
                        ))
                    }
                };
                let slot = sectors.entry(st.n()).or_insert_with(|| (S::zero(), Vec::new()));
                slot.0 += *w * *sw;
                for term in &m.terms {
                    slot.1.push(MixtureTerm {
                        weight: *w * *sw * term.weight,
                        factors: term.factors.clone(),
                    });
                }
            }
        }
        let sectors = sectors
            .into_iter()
            .map(|(n, (weight, mut terms))| {
                for t in &mut terms {
                    t.weight = t.weight / weight;
                }
                (weight, CanonicalState::Mixture(Mixture { grid: grid.clone(), n, terms }))
            })
            .collect();
        Ok(GrandCanonicalState { grid, p0, sectors })
    }
}

/// Grand-canonical Poisson state of a density, truncated at `n_max` with the
/// remainder folded into a renormalization.
pub fn poisson_state<S: Scalar>(rho: &GridDensity<S>, n_max: usize) -> Result<GrandCanonicalState<S>> {
    let m = rho.mass();
    if m <= S::zero() {
        return Err(Error::MassTooSmall { mass: 0.0, needed: 0.0 });
    }
    let mf = m.to_f64().unwrap_or(f64::NAN);
    let required = (mf + 6.0 * mf.sqrt()).ceil() as usize;
    if n_max < required {
        return Err(Error::TruncationTooSevere { remainder: f64::NAN, n_max });
    }
    let mut weights = Vec::with_capacity(n_max + 1);
    let mut total = S::zero();
    for n in 0..=n_max {
        let ln_w = cast::<S>(n as f64) * m.ln() - m - ln_factorial::<S>(n);
        let w = ln_w.exp();
        weights.push(w);
        total += w;
    }
    let remainder = (S::one() - total).max(S::zero());
    if remainder > cast(1e-9) {
        return Err(Error::TruncationTooSevere {
            remainder: remainder.to_f64().unwrap_or(f64::NAN),
            n_max,
        });
    }
    let cells: Vec<(usize, S)> = rho.support_cells().into_iter().map(|c| (c, S::one())).collect();
    let q = OneBody::from_weighted_cells(rho, &cells)
        .ok_or(Error::MassTooSmall { mass: 0.0, needed: 0.0 })?;
    let mut sectors = Vec::new();
    for (n, w) in weights.iter().enumerate().skip(1) {
        let term = MixtureTerm { weight: S::one(), factors: vec![q.clone(); n] };
        sectors.push((
            *w / total,
            CanonicalState::Mixture(Mixture { grid: rho.grid.clone(), n, terms: vec![term] }),
        ));
    }
    Ok(GrandCanonicalState { grid: rho.grid.clone(), p0: weights[0] / total, sectors })
}

/// Block approximation of a state over a partition of unity: a convex
/// combination of per-block tensor products with the same one-body density.
pub fn block_approximation<S: Scalar>(
    state: &CanonicalState<S>,
    partition: &Partition<S>,
    rho: &GridDensity<S>,
) -> Result<CanonicalState<S>> {
    let grid = state.grid().clone();
    let n = state.n();

    // Per-block normalized densities rho chi_b / m_b.
    let mut block_factors: Vec<Option<OneBody<S>>> = Vec::new();
    for block in &partition.blocks {
        block_factors.push(OneBody::from_weighted_cells(rho, block));
    }
    // chi_b(cell) lookup.
    let mut chi: Vec<BTreeMap<usize, S>> = Vec::new();
    for block in &partition.blocks {
        chi.push(block.iter().copied().collect());
    }

    let mut weights: BTreeMap<Vec<usize>, S> = BTreeMap::new();
    match state {
        CanonicalState::SparseJoint(j) => {
            for (tuple, p) in &j.entries {
                if *p <= S::zero() {
                    continue;
                }
                // Distribute p over all block assignments of the tuple.
                let mut assignments: Vec<(Vec<usize>, S)> = vec![(Vec::new(), *p)];
                for &cell in tuple {
                    let mut next = Vec::new();
                    for (blocks, value) in &assignments {
                        for (b, weights_map) in chi.iter().enumerate() {
                            if let Some(w) = weights_map.get(&cell) {
                                let mut bs = blocks.clone();
                                bs.push(b);
                                next.push((bs, *value * *w));
                            }
                        }
                    }
                    assignments = next;
                }
                for (mut blocks, value) in assignments {
                    blocks.sort_unstable();
                    *weights.entry(blocks).or_insert_with(S::zero) += value;
                }
            }
        }
        CanonicalState::Mixture(m) => {
            // <q, chi_b> per factor, then P(chi_{b1} x ... x chi_{bN}) for the
            // symmetrized product averaged over factor orders.
            for term in &m.terms {
                if term.weight <= S::zero() {
                    continue;
                }
                let overlaps: Vec<Vec<(usize, S)>> = term
                    .factors
                    .iter()
                    .map(|q| {
                        chi.iter()
                            .enumerate()
                            .filter_map(|(b, weights_map)| {
                                let v: S = q
                                    .entries
                                    .iter()
                                    .filter_map(|e| weights_map.get(&e.cell).map(|w| *w * e.mass))
                                    .sum();
                                if v > S::zero() {
                                    Some((b, v))
                                } else {
                                    None
                                }
                            })
                            .collect()
                    })
                    .collect();
                let mut assignments: Vec<(Vec<usize>, S)> = vec![(Vec::new(), term.weight)];
                for row in &overlaps {
                    let mut next = Vec::new();
                    for (blocks, value) in &assignments {
                        for &(b, v) in row {
                            let mut bs = blocks.clone();
                            bs.push(b);
                            next.push((bs, *value * v));
                        }
                    }
                    assignments = next;
                }
                for (mut blocks, value) in assignments {
                    blocks.sort_unstable();
                    *weights.entry(blocks).or_insert_with(S::zero) += value;
                }
            }
        }
    }

    let terms: Vec<MixtureTerm<S>> = weights
        .into_iter()
        .filter(|(_, w)| *w > S::zero())
        .map(|(blocks, weight)| {
            let factors = blocks
                .iter()
                .map(|&b| {
                    block_factors[b]
                        .clone()
                        .ok_or_else(|| Error::InvalidInput(format!("block {b} carries no density mass")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MixtureTerm { weight, factors })
        })
        .collect::<Result<_>>()?;

    Ok(CanonicalState::Mixture(Mixture { grid, n, terms }))
}

/// Geometric localization of a tensor product of disjoint-support factors by
/// a cellwise weight theta in [0, 1]. The result is grand-canonical with
/// one sector per occupancy count and density theta times the original.
pub fn geometric_localization<S: Scalar>(
    grid: &Grid<S>,
    factors: &[OneBody<S>],
    theta: &[S],
) -> Result<GrandCanonicalState<S>> {
    if theta.len() != grid.cell_count() {
        return Err(Error::InvalidInput("theta must assign a weight to every cell".into()));
    }
    if theta.iter().any(|t| *t < -cast::<S>(1e-12) || *t > S::one() + cast(1e-12)) {
        return Err(Error::OutOfRange("theta weights must lie in [0, 1]".into()));
    }
    for i in 0..factors.len() {
        for j in (i + 1)..factors.len() {
            if factors[i].overlaps(&factors[j]) {
                return Err(Error::SupportOverlap(format!(
                    "localization factors {i} and {j} overlap"
                )));
            }
        }
    }
    // Localized factors theta q_j and their masses.
    let mut kept: Vec<(S, OneBody<S>)> = Vec::new();
    for q in factors {
        let mut entries = Vec::new();
        let mut mass = S::zero();
        for e in &q.entries {
            let t = theta[e.cell].max(S::zero()).min(S::one());
            let m = e.mass * t;
            if m > S::zero() {
                mass += m;
                let mut e2 = e.clone();
                e2.mass = m;
                entries.push(e2);
            }
        }
        if mass > S::zero() {
            let mut q2 = OneBody { entries };
            for e in &mut q2.entries {
                e.mass = e.mass / mass;
            }
            kept.push((mass, q2));
        }
        // A fully vacuum particle contributes the factor (1 - 0) = 1.
    }

    // Enumerate occupancy subsets of the kept factors.
    let k = kept.len();
    if k > 30 {
        return Err(Error::TooLarge(format!("{k} active localization factors exceed the subset cap")));
    }
    let mut sector_terms: BTreeMap<usize, Vec<(S, Vec<usize>)>> = BTreeMap::new();
    for mask in 0usize..(1usize << k) {
        let mut weight = S::one();
        let mut subset = Vec::new();
        for (j, (mass, _)) in kept.iter().enumerate() {
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
                factors: subset.iter().map(|&j| kept[j].1.clone()).collect(),
            })
            .collect();
        sectors.push((
            total,
            CanonicalState::Mixture(Mixture { grid: grid.clone(), n, terms: mixture_terms }),
        ));
    }
    Ok(GrandCanonicalState { grid: grid.clone(), p0, sectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    fn grid_1d(cells: usize, h: f64) -> Grid<f64> {
        Grid::new(vec![cells], vec![h], vec![0.0]).unwrap()
    }

    fn uniform_density(grid: &Grid<f64>, value: f64) -> GridDensity<f64> {
        GridDensity::uniform(grid.clone(), value)
    }

    fn cell_factor(grid: &Grid<f64>, cell: usize) -> OneBody<f64> {
        let rho = GridDensity::uniform(grid.clone(), 1.0);
        OneBody::from_weighted_cells(&rho, &[(cell, 1.0)]).unwrap()
    }

    #[test]
    fn single_particle_uniform_entropy_is_log_volume() {
        // One particle uniform on volume V has entropy log V.
        let grid = grid_1d(8, 0.5); // V = 4
        let rho = uniform_density(&grid, 0.25);
        let cells: Vec<(usize, f64)> = (0..8).map(|c| (c, 1.0)).collect();
        let q = OneBody::from_weighted_cells(&rho, &cells).unwrap();
        let st = CanonicalState::Mixture(Mixture {
            grid,
            n: 1,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q] }],
        });
        assert!((st.entropy().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_product_entropy_matches_expansion() {
        // Symmetrized q1 (x) q2 with disjoint single-cell supports of volume
        // v: the permutation count cancels the N! and S = 2 log v. The exact
        // mixture path and the brute-force expansion must agree.
        let grid = grid_1d(8, 0.5);
        let q1 = cell_factor(&grid, 1);
        let q2 = cell_factor(&grid, 5);
        let m = Mixture {
            grid: grid.clone(),
            n: 2,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q1, q2] }],
        };
        let exact = m.entropy_disjoint().unwrap();
        let expanded = m.expand(SPARSE_JOINT_CAP).unwrap().entropy();
        assert!((exact - expanded).abs() < 1e-12);
        assert!((exact - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tensor_power_entropy_matches_expansion() {
        let grid = grid_1d(6, 0.5);
        let rho = uniform_density(&grid, 1.0);
        let cells: Vec<(usize, f64)> = (0..6).map(|c| (c, 1.0)).collect();
        let q = OneBody::from_weighted_cells(&rho, &cells).unwrap();
        for n in 2..=3 {
            let m = Mixture {
                grid: grid.clone(),
                n,
                terms: vec![MixtureTerm { weight: 1.0, factors: vec![q.clone(); n] }],
            };
            let exact = m.entropy_disjoint().unwrap();
            let expanded = m.expand(SPARSE_JOINT_CAP).unwrap().entropy();
            assert!((exact - expanded).abs() < 1e-10, "n = {n}: {exact} vs {expanded}");
        }
    }

    #[test]
    fn product_state_density_is_rho() {
        let grid = grid_1d(16, 0.25);
        let mut values: Vec<f64> = (0..16).map(|k| 0.1 + 0.02 * (k % 5) as f64).collect();
        let mass: f64 = values.iter().sum::<f64>() * 0.25;
        for v in &mut values {
            *v *= 2.0 / mass;
        }
        let rho = GridDensity::new(grid.clone(), values).unwrap();
        let cells: Vec<(usize, f64)> = (0..16).map(|c| (c, 1.0)).collect();
        let q = OneBody::from_weighted_cells(&rho, &cells).unwrap();
        let st = CanonicalState::Mixture(Mixture {
            grid,
            n: 2,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q.clone(), q] }],
        });
        let d = st.density();
        for (a, b) in d.values.iter().zip(rho.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_state_entropy_and_density() {
        let grid = grid_1d(16, 1.0 / 16.0); // box [0, 1]
        let rho = uniform_density(&grid, 1.0); // mass 1
        let p = poisson_state(&rho, 16).unwrap();
        // Sector weights follow the Poisson law.
        let w1 = p.sectors[0].0;
        assert!((w1 - (-1.0f64).exp()).abs() < 1e-9);
        // Density preserved.
        let d = p.density();
        for v in d.values {
            assert!((v - 1.0).abs() < 1e-9);
        }
        // Entropy equals -int rho (log rho - 1) = 1 for rho = 1 on [0, 1].
        let s = p.entropy().unwrap();
        assert!((s - 1.0).abs() < 1e-6, "entropy {s}");
    }

    #[test]
    fn poisson_truncation_guard() {
        let grid = grid_1d(16, 1.0 / 8.0);
        let rho = uniform_density(&grid, 1.0); // mass 2
        assert!(matches!(poisson_state(&rho, 5), Err(Error::TruncationTooSevere { .. })));
        let p = poisson_state(&rho, 20).unwrap();
        let remainder: f64 = 1.0 - p.total_probability();
        assert!(remainder.abs() < 1e-12);
    }

    #[test]
    fn interaction_energy_forced_pair() {
        let grid = grid_1d(16, 0.25);
        let q1 = cell_factor(&grid, 2);
        let q2 = cell_factor(&grid, 10);
        let st = CanonicalState::Mixture(Mixture {
            grid: grid.clone(),
            n: 2,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q1, q2] }],
        });
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
        let r = grid.center_distance(2, 10);
        assert!((st.interaction_energy(&w) - w.evaluate(r)).abs() < 1e-12);

        let zero = PotentialSpec::<f64>::zero();
        assert_eq!(st.interaction_energy(&zero), 0.0);

        let hc = PotentialSpec::<f64>::pure_hard_core(3.0).unwrap();
        assert!(st.interaction_energy(&hc).is_infinite());
    }

    #[test]
    fn free_energy_with_one_particle_is_entropy_term() {
        let grid = grid_1d(8, 0.5);
        let rho = uniform_density(&grid, 0.25); // mass 1
        let cells: Vec<(usize, f64)> = (0..8).map(|c| (c, 1.0)).collect();
        let q = OneBody::from_weighted_cells(&rho, &cells).unwrap();
        let st = CanonicalState::Mixture(Mixture {
            grid,
            n: 1,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q] }],
        });
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
        let f = st.free_energy(&w, 1.0).unwrap();
        assert!((f - rho.entropy_integral()).abs() < 1e-12);
    }

    #[test]
    fn symmetrization_is_idempotent() {
        let grid = grid_1d(6, 0.5);
        let mut entries = BTreeMap::new();
        entries.insert(vec![0, 3], 0.6);
        entries.insert(vec![2, 5], 0.4);
        let st = CanonicalState::SparseJoint(SparseJoint { grid, n: 2, entries, symmetric: false });
        let s1 = st.symmetrize();
        let s2 = s1.symmetrize();
        if let (CanonicalState::SparseJoint(a), CanonicalState::SparseJoint(b)) = (&s1, &s2) {
            assert_eq!(a.entries.len(), b.entries.len());
            for (k, v) in &a.entries {
                assert!((b.entries[k] - v).abs() < 1e-12);
            }
        } else {
            panic!("expected sparse joints");
        }
    }

    #[test]
    fn block_approximation_preserves_density() {
        let grid = grid_1d(12, 0.25);
        let mut values: Vec<f64> = (0..12).map(|k| 0.4 + 0.1 * (k % 3) as f64).collect();
        let mass: f64 = values.iter().sum::<f64>() * 0.25;
        for v in &mut values {
            *v *= 2.0 / mass;
        }
        let rho = GridDensity::new(grid.clone(), values).unwrap();
        // A two-particle sparse joint with marginal rho: product of the two
        // halves of the density.
        let left: Vec<(usize, f64)> = (0..6).map(|c| (c, 1.0)).collect();
        let right: Vec<(usize, f64)> = (6..12).map(|c| (c, 1.0)).collect();
        let ql = OneBody::from_weighted_cells(&rho, &left).unwrap();
        let qr = OneBody::from_weighted_cells(&rho, &right).unwrap();
        // Masses of halves must both be one for the marginal to equal rho.
        let ml: f64 = (0..6).map(|c| rho.cell_mass(c)).sum();
        assert!((ml - 1.0).abs() < 1e-9, "density split mass {ml}");
        let st = CanonicalState::Mixture(Mixture {
            grid: grid.clone(),
            n: 2,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![ql, qr] }],
        });
        // Partition into three blocks of four cells.
        let partition = Partition {
            blocks: (0..3)
                .map(|b| (4 * b..4 * (b + 1)).map(|c| (c, 1.0)).collect())
                .collect(),
        };
        let approx = block_approximation(&st, &partition, &rho).unwrap();
        let d = approx.density();
        for (a, b) in d.values.iter().zip(rho.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Fixed point: a state that is already a per-block tensor product.
        let b0: Vec<(usize, f64)> = (0..4).map(|c| (c, 1.0)).collect();
        let b2: Vec<(usize, f64)> = (8..12).map(|c| (c, 1.0)).collect();
        let q0 = OneBody::from_weighted_cells(&rho, &b0).unwrap();
        let q2 = OneBody::from_weighted_cells(&rho, &b2).unwrap();
        let fixed = CanonicalState::Mixture(Mixture {
            grid: grid.clone(),
            n: 2,
            terms: vec![MixtureTerm { weight: 1.0, factors: vec![q0.clone(), q2.clone()] }],
        });
        let rho_fixed = fixed.density();
        let again = block_approximation(&fixed, &partition, &rho_fixed).unwrap();
        if let CanonicalState::Mixture(m) = &again {
            assert_eq!(m.terms.len(), 1);
            assert!((m.terms[0].weight - 1.0).abs() < 1e-12);
        } else {
            panic!("expected mixture");
        }
        let e_fixed = fixed.entropy().unwrap();
        let e_again = again.entropy().unwrap();
        assert!((e_fixed - e_again).abs() < 1e-10);
    }

    #[test]
    fn localization_limits() {
        let grid = grid_1d(8, 0.5);
        let q1 = cell_factor(&grid, 1);
        let q2 = cell_factor(&grid, 6);
        // theta == 1 returns the original state with vacuum weight zero.
        let theta = vec![1.0; 8];
        let loc = geometric_localization(&grid, &[q1.clone(), q2.clone()], &theta).unwrap();
        assert_eq!(loc.p0, 0.0);
        assert_eq!(loc.sectors.len(), 1);
        assert_eq!(loc.sectors[0].1.n(), 2);
        // theta == 0 is pure vacuum with zero entropy.
        let theta = vec![0.0; 8];
        let loc = geometric_localization(&grid, &[q1, q2], &theta).unwrap();
        assert_eq!(loc.p0, 1.0);
        assert!(loc.sectors.is_empty());
        assert_eq!(loc.entropy().unwrap(), 0.0);
    }

    #[test]
    fn localization_entropy_matches_sector_enumeration() {
        // N = 2 disjoint uniform factors, theta = 1/2 on one support and 1 on
        // the other; compare the closed-form sector expression against the
        // state's own entropy and against the lemma's formula.
        let grid = grid_1d(8, 0.5);
        let q1 = cell_factor(&grid, 1);
        let q2 = cell_factor(&grid, 6);
        let mut theta = vec![1.0; 8];
        theta[1] = 0.5;
        let loc = geometric_localization(&grid, &[q1.clone(), q2.clone()], &theta).unwrap();
        let s = loc.entropy().unwrap();

        // Closed form: -sum int (theta q) log(theta q)
        //              -sum (1 - int theta q) log(1 - int theta q)
        let v: f64 = 0.5;
        let m1: f64 = 0.5;
        let term1 = -(m1 * (m1 / v).ln()) - (1.0 - m1) * (1.0 - m1).ln();
        let term2 = -(1.0 * (1.0f64 / v).ln());
        assert!((s - (term1 + term2)).abs() < 1e-12, "{s} vs {}", term1 + term2);

        // Density is theta times the original: factor values are 1/v = 2.0
        // on their cells, scaled by theta.
        let d = loc.density();
        assert!((d.values[1] - 1.0).abs() < 1e-12);
        assert!((d.values[6] - 2.0).abs() < 1e-12);
        let expected_mass = 0.5 * 1.0 + 1.0;
        assert!((d.mass() - expected_mass).abs() < 1e-12);
    }

    #[test]
    fn entropy_upper_bounds_on_random_states() {
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grid = grid_1d(10, 0.4);
        for _ in 0..50 {
            let n = 2 + (rng.gen::<usize>() % 2);
            let mut entries: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for _ in 0..12 {
                let tuple: Vec<usize> = (0..n).map(|_| rng.gen::<usize>() % 10).collect();
                *entries.entry(tuple).or_insert(0.0) += rng.gen::<f64>();
            }
            let total: f64 = entries.values().sum();
            for v in entries.values_mut() {
                *v /= total;
            }
            let st = CanonicalState::SparseJoint(SparseJoint {
                grid: grid.clone(),
                n,
                entries,
                symmetric: false,
            })
            .symmetrize();
            let s = st.entropy().unwrap();
            let rho = st.density();
            // Eq. (2.7)-style bound: S_N <= -int rho log rho + N.
            let bound = -rho.entropy_integral() + n as f64;
            assert!(s <= bound + 1e-9, "canonical entropy bound violated: {s} > {bound}");
        }
        // Grand-canonical bound with Poisson equality.
        let rho = uniform_density(&grid, 0.5);
        let p = poisson_state(&rho, 22).unwrap();
        let s = p.entropy().unwrap();
        let bound = -(rho.entropy_integral() - rho.mass());
        assert!(s <= bound + 1e-9);
        assert!((s - bound).abs() < 1e-6, "Poisson should saturate the bound");
    }
}

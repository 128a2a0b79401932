//! Short-range pair interactions: stable potentials dominated by a power-law
//! core inside r0 plus an integrable tail 1/(1 + r^s) with s > d.

use crate::geometry::unit_sphere_area;
use crate::{cast, Error, Result, Scalar};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Core exponent alpha; `Infinite` encodes a hard core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoreExponent<S> {
    Finite(S),
    Infinite,
}

impl<S: Scalar> CoreExponent<S> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, CoreExponent::Infinite)
    }

    pub fn finite(&self) -> Option<S> {
        match self {
            CoreExponent::Finite(a) => Some(*a),
            CoreExponent::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind<S> {
    /// w equals the envelope itself: kappa ((r0/r)^alpha 1_{r<r0} + 1/(1+r^s)).
    Envelope,
    /// +infinity inside r0, kappa/(1+r^s) outside. kappa = 0 gives the pure
    /// hard core.
    HardCore,
    /// kappa (r0/r)^alpha 1_{r<r0} + kappa/(1+r^s).
    PowerLaw,
    /// Radial table, piecewise-linear in r, with a fitted envelope validated
    /// at load time.
    Tabulated { table: Vec<(S, S)> },
}

/// Interaction satisfying the stability and upper-regularity assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec<S> {
    pub kind: PotentialKind<S>,
    /// Stability/envelope constant kappa >= 0.
    pub kappa: S,
    /// Core range r0 >= 0.
    pub r0: S,
    /// Core exponent alpha in (0, infinity].
    pub alpha: CoreExponent<S>,
    /// Tail exponent s > d.
    pub s: S,
}

impl<S: Scalar> PotentialSpec<S> {
    pub fn new(kind: PotentialKind<S>, kappa: S, r0: S, alpha: CoreExponent<S>, s: S) -> Result<Self> {
        if kappa < S::zero() || !kappa.is_finite() {
            return Err(Error::InvalidInput("kappa must be finite and nonnegative".into()));
        }
        if r0 < S::zero() {
            return Err(Error::InvalidInput("r0 must be nonnegative".into()));
        }
        if let CoreExponent::Finite(a) = alpha {
            if a <= S::zero() || !a.is_finite() {
                return Err(Error::InvalidInput("finite alpha must be positive".into()));
            }
        }
        if s <= S::zero() || !s.is_finite() {
            return Err(Error::InvalidInput("tail exponent s must be positive and finite".into()));
        }
        let spec = Self { kind, kappa, r0, alpha, s };
        if let PotentialKind::Tabulated { .. } = &spec.kind {
            spec.validate_table()?;
        }
        Ok(spec)
    }

    pub fn power_law(kappa: S, r0: S, alpha: S, s: S) -> Result<Self> {
        Self::new(PotentialKind::PowerLaw, kappa, r0, CoreExponent::Finite(alpha), s)
    }

    pub fn hard_core(kappa: S, r0: S, s: S) -> Result<Self> {
        if r0 <= S::zero() {
            return Err(Error::InvalidInput("hard core needs r0 > 0".into()));
        }
        Self::new(PotentialKind::HardCore, kappa, r0, CoreExponent::Infinite, s)
    }

    /// Pure hard rods/spheres: infinite inside r0, zero outside.
    pub fn pure_hard_core(r0: S) -> Result<Self> {
        Self::hard_core(S::zero(), r0, cast(2.0))
    }

    pub fn zero() -> Self {
        Self {
            kind: PotentialKind::PowerLaw,
            kappa: S::zero(),
            r0: S::zero(),
            alpha: CoreExponent::Finite(S::one()),
            s: cast(2.0),
        }
    }

    /// True when w vanishes identically.
    pub fn is_zero(&self) -> bool {
        match &self.kind {
            PotentialKind::Tabulated { table } => table.iter().all(|(_, w)| *w == S::zero()),
            PotentialKind::HardCore => false,
            _ => self.kappa == S::zero() || (self.r0 == S::zero() && self.kappa == S::zero()),
        }
    }

    /// w(r). The only infinite values occur below a hard-core radius.
    pub fn evaluate(&self, r: S) -> S {
        debug_assert!(r >= S::zero());
        match &self.kind {
            PotentialKind::Envelope | PotentialKind::PowerLaw => {
                let core = match self.alpha {
                    CoreExponent::Infinite => {
                        if r < self.r0 {
                            return S::infinity();
                        }
                        S::zero()
                    }
                    CoreExponent::Finite(a) => {
                        if r < self.r0 && self.r0 > S::zero() {
                            if r == S::zero() {
                                return S::infinity();
                            }
                            (self.r0 / r).powf(a)
                        } else {
                            S::zero()
                        }
                    }
                };
                self.kappa * (core + S::one() / (S::one() + r.powf(self.s)))
            }
            PotentialKind::HardCore => {
                if r < self.r0 {
                    S::infinity()
                } else {
                    self.kappa / (S::one() + r.powf(self.s))
                }
            }
            PotentialKind::Tabulated { table } => {
                if table.is_empty() {
                    return S::zero();
                }
                let (r_first, w_first) = table[0];
                if r <= r_first {
                    return w_first;
                }
                let (r_last, _) = table[table.len() - 1];
                if r >= r_last {
                    // Beyond the table we fall back to the tail envelope,
                    // which keeps the envelope domination exact.
                    return self.kappa / (S::one() + r.powf(self.s));
                }
                for win in table.windows(2) {
                    let (ra, wa) = win[0];
                    let (rb, wb) = win[1];
                    if r >= ra && r <= rb {
                        let t = (r - ra) / (rb - ra);
                        return wa + (wb - wa) * t;
                    }
                }
                table[table.len() - 1].1
            }
        }
    }

    /// Envelope value kappa ((r0/r)^alpha 1_{r<r0} + 1/(1+r^s)).
    pub fn envelope(&self, r: S) -> S {
        self.core_part(r) + self.tail_part(r)
    }

    /// w1(r) = kappa (r0/r)^alpha 1_{r<r0}.
    pub fn core_part(&self, r: S) -> S {
        if self.r0 <= S::zero() || r >= self.r0 {
            return S::zero();
        }
        match self.alpha {
            CoreExponent::Infinite => S::infinity(),
            CoreExponent::Finite(a) => {
                if r == S::zero() {
                    if self.kappa == S::zero() {
                        S::zero()
                    } else {
                        S::infinity()
                    }
                } else {
                    self.kappa * (self.r0 / r).powf(a)
                }
            }
        }
    }

    /// w2(r) = kappa / (1 + r^s).
    pub fn tail_part(&self, r: S) -> S {
        self.kappa / (S::one() + r.powf(self.s))
    }

    /// Closed-form bound on the tail integral:
    /// int w2 <= kappa |S^{d-1}| s / (d (s - d)).
    pub fn tail_l1_bound(&self, d: usize) -> Result<S> {
        let dd = cast::<S>(d as f64);
        if self.s <= dd {
            return Err(Error::TailNotIntegrable { s: self.s.to_f64().unwrap_or(f64::NAN), d });
        }
        Ok(self.kappa * unit_sphere_area::<S>(d) * self.s / (dd * (self.s - dd)))
    }

    /// Checks envelope domination w(r) <= envelope(r) on a dense radius
    /// sample; tabulated potentials must pass this at load time.
    pub fn check_envelope_domination(&self, samples: usize) -> Result<()> {
        let r_max = (self.r0 + S::one()) * cast::<S>(8.0);
        for i in 1..=samples {
            let r = r_max * cast::<S>(i as f64 / samples as f64);
            let w = self.evaluate(r);
            let env = self.envelope(r);
            if w > env + cast(1e-12) && !(w.is_infinite() && env.is_infinite()) {
                return Err(Error::InvalidInput(format!(
                    "envelope domination fails at r = {}: w = {}, envelope = {}",
                    r.to_f64().unwrap_or(f64::NAN),
                    w.to_f64().unwrap_or(f64::NAN),
                    env.to_f64().unwrap_or(f64::NAN)
                )));
            }
        }
        Ok(())
    }

    fn validate_table(&self) -> Result<()> {
        if let PotentialKind::Tabulated { table } = &self.kind {
            if table.is_empty() {
                return Err(Error::InvalidInput("tabulated potential needs at least one row".into()));
            }
            for win in table.windows(2) {
                if win[1].0 <= win[0].0 {
                    return Err(Error::InvalidInput("table radii must be strictly increasing".into()));
                }
            }
            self.check_envelope_domination(1000)?;
        }
        Ok(())
    }

    /// Randomized search for a configuration violating the stability bound
    /// sum_{j<k} w(x_j - x_k) >= -kappa N. Returns a violating configuration
    /// if one is found; absence of a counterexample is not a proof.
    pub fn stability_falsify(
        &self,
        d: usize,
        n: usize,
        trials: usize,
        box_side: S,
        seed: u64,
    ) -> Option<Vec<Vec<S>>> {
        assert!(n >= 2, "stability needs at least two particles");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let config: Vec<Vec<S>> = (0..n)
                .map(|_| (0..d).map(|_| cast::<S>(rng.gen::<f64>()) * box_side).collect())
                .collect();
            let mut total = S::zero();
            let mut infinite = false;
            'pairs: for j in 0..n {
                for k in (j + 1)..n {
                    let r = crate::geometry::distance(&config[j], &config[k]);
                    let w = self.evaluate(r);
                    if w.is_infinite() {
                        infinite = true;
                        break 'pairs;
                    }
                    total += w;
                }
            }
            if !infinite && total < -self.kappa * cast::<S>(n as f64) {
                return Some(config);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_matches_plugin_formulas() {
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
        assert!((w.evaluate(2.0) - 1.0 / 9.0).abs() < 1e-12);
        assert!((w.evaluate(0.5) - (4.0 + 1.0 / 1.125)).abs() < 1e-12);

        let hc = PotentialSpec::<f64>::hard_core(1.0, 1.0, 3.0).unwrap();
        assert!(hc.evaluate(0.5).is_infinite());
        assert!((hc.evaluate(2.0) - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_parts_cover_evaluate() {
        let w = PotentialSpec::<f64>::power_law(2.0, 1.5, 3.0, 4.0).unwrap();
        assert_eq!(w.core_part(2.0), 0.0);
        assert!((w.tail_part(1.0) - 1.0).abs() < 1e-12);
        for i in 1..200 {
            let r = 0.05 * i as f64;
            assert!(w.evaluate(r) <= w.envelope(r) + 1e-12);
        }
    }

    #[test]
    fn tail_l1_bound_closed_forms() {
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
        assert!((w.tail_l1_bound(1).unwrap() - 3.0).abs() < 1e-12);
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.5, 4.0).unwrap();
        assert!((w.tail_l1_bound(2).unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let w = PotentialSpec::<f64>::power_law(2.0, 1.0, 4.0, 6.0).unwrap();
        assert!((w.tail_l1_bound(3).unwrap() - 16.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 1.5).unwrap();
        assert!(w.tail_l1_bound(2).is_err());
    }

    #[test]
    fn tabulated_requires_envelope_domination() {
        // A table that pokes above the envelope must fail to load.
        let bad = PotentialSpec::new(
            PotentialKind::Tabulated { table: vec![(0.5, 100.0), (2.0, 0.0)] },
            1.0,
            1.0,
            CoreExponent::Finite(2.0),
            3.0,
        );
        assert!(bad.is_err());

        // A Lennard-Jones-like table below its fitted envelope loads fine.
        let mut table = Vec::new();
        for i in 1..200 {
            let r = 0.8 + 0.02 * i as f64;
            let w = 4.0 * ((1.0 / r).powi(12) - (1.0 / r).powi(6));
            table.push((r, w));
        }
        let lj = PotentialSpec::new(
            PotentialKind::Tabulated { table },
            40.0,
            1.1,
            CoreExponent::Finite(12.0),
            6.0,
        );
        assert!(lj.is_ok());
    }

    #[test]
    fn stability_falsify_behaviour() {
        let repulsive = PotentialSpec::<f64>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
        assert!(repulsive.stability_falsify(1, 5, 10_000, 4.0, 7).is_none());

        // w == -1 everywhere with kappa = 0.1: any 4-particle configuration
        // gives -6 < -0.4.
        let attractive = PotentialSpec {
            kind: PotentialKind::Tabulated { table: vec![(0.0, -1.0), (100.0, -1.0)] },
            kappa: 0.1,
            r0: 1.0,
            alpha: CoreExponent::Finite(1.0),
            s: 3.0,
        };
        assert!(attractive.stability_falsify(1, 4, 10, 2.0, 7).is_some());

        let rods_with_tail = PotentialSpec::<f64>::hard_core(1.0, 0.5, 3.0).unwrap();
        assert!(rods_with_tail.stability_falsify(1, 5, 10_000, 6.0, 7).is_none());
    }
}

//! Direct comparisons between trial states, closed-form bounds and the
//! oracles that the acceptance suite does not already cover: the
//! grand-canonical chain, three-particle transport, the block trial's
//! support geometry, and the hard-core reports against the rod oracle.

use freebound::bounds::{self, Ensemble, PackingConstants};
use freebound::constructions::{self, OtOutcome, SeparationRule};
use freebound::density::{GridDensity, LocalGeometry};
use freebound::geometry::Grid;
use freebound::oracle;
use freebound::potential::{CoreExponent, PotentialKind, PotentialSpec};
use freebound::states::CanonicalState;
use freebound::suite::random_compact_density;

fn uniform_1d(value: f64, len: f64, cells: usize) -> GridDensity<f64> {
    let grid = Grid::new(vec![cells], vec![len / cells as f64], vec![0.0]).unwrap();
    GridDensity::uniform(grid, value)
}

/// Full grand-canonical chain on a small grid: lower <= oracle <= trial
/// (by concavity) <= closed form.
#[test]
fn grand_canonical_sandwich() {
    for seed in 0..3u64 {
        let rho: GridDensity<f64> = random_compact_density(1, 10, 4.0, 5100 + seed, 2.0);
        let w = PotentialSpec::<f64>::power_law(1.0, 0.5, 2.0, 3.0).unwrap();
        let report = oracle::verify_sandwich(&rho, &w, 1.0, Ensemble::GrandCanonical).unwrap();
        assert!(
            report.passed(),
            "gc sandwich failed: {:?}",
            report.worst().map(|l| (l.lower_name.clone(), l.upper_name.clone(), l.slack))
        );
    }
}

/// Three-particle transport state: density preserved, support separated,
/// and the interaction below the eta = 1/3 zero-temperature bound.
#[test]
fn three_particle_ot_chain() {
    let rho = uniform_1d(0.5, 6.0, 24); // mass 3
    let st = match constructions::ot_state_small(&rho, SeparationRule::LocalRadius).unwrap() {
        OtOutcome::Feasible(st) => st,
        OtOutcome::Infeasible { detail } => panic!("infeasible: {detail}"),
    };
    let d = st.density();
    for (a, b) in d.values.iter().zip(rho.values.iter()) {
        assert!((a - b).abs() < 1e-8);
    }
    let w = PotentialSpec::<f64>::power_law(1.0, 0.5, 2.0, 3.0).unwrap();
    let u = st.interaction_energy(&w);
    let oracle_value = oracle::exact_canonical(&rho, &w, 0.0).unwrap().value;
    assert!(oracle_value <= u + 1e-8, "oracle {oracle_value} vs trial {u}");
    let bound = bounds::canonical_t0_upper(&rho, &w, 1.0 / 3.0).unwrap();
    assert!(u <= bound.value, "trial {u} above the closed-form {}", bound.value);
}

/// Block trial support scan: supported pairs keep the weakened separation
/// (1/3)(1 - 8 eps/(1 - eps))(R_i + R_j) minus one cell diagonal, and the
/// free energy stays under the OT-block closed form in 2D.
#[test]
fn block_ot_support_and_bound() {
    // 1D support scan with the measured local radii.
    let rho = uniform_1d(0.5, 4.0, 32);
    let eps = 0.05;
    let (trial, _) = constructions::block_ot_trial(&rho, eps).unwrap();
    let geometry = LocalGeometry::of(&rho).unwrap();
    let radius_of = |cell: usize| -> f64 {
        let idx = geometry.cells.iter().position(|&c| c == cell).unwrap();
        geometry.radius[idx]
    };
    let factor = (1.0 - 8.0 * eps / (1.0 - eps)) / 3.0;
    let slack = rho.grid.cell_diagonal();
    if let CanonicalState::Mixture(m) = &trial {
        for term in &m.terms {
            if term.weight <= 0.0 {
                continue;
            }
            for i in 0..term.factors.len() {
                for j in (i + 1)..term.factors.len() {
                    for ea in &term.factors[i].entries {
                        for eb in &term.factors[j].entries {
                            let dist = (ea.position[0] - eb.position[0]).abs();
                            let need = factor * (radius_of(ea.cell) + radius_of(eb.cell)) - slack;
                            assert!(
                                dist >= need - 1e-9,
                                "supported pair at {dist} below the weakened rule {need}"
                            );
                        }
                    }
                }
            }
        }
    } else {
        panic!("expected a mixture");
    }

    // 2D: trial free energy below the closed-form OT-block bound.
    let grid = Grid::new(vec![6, 6], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let rho2 = GridDensity::uniform(grid, 2.0 / 36.0);
    let w = PotentialSpec::<f64>::power_law(1.0, 0.5, 2.0, 3.0).unwrap();
    let t = 1.0;
    let (trial2, _) = constructions::block_ot_trial(&rho2, eps).unwrap();
    let f_trial = trial2.free_energy(&w, t).unwrap();
    let geometry2 = LocalGeometry::of(&rho2).unwrap();
    let bound = bounds::ot_block_upper(&rho2, &w, t, eps, &geometry2).unwrap();
    assert!(
        f_trial <= bound.value,
        "block trial {f_trial} above the closed form {}",
        bound.value
    );
    let oracle_value = oracle::exact_canonical(&rho2, &w, t).unwrap().value;
    assert!(oracle_value <= f_trial + 1e-6);
}

/// Hard-core reports: the 1D window bound and the packing bound both
/// dominate the exact rod oracle where their conditions hold.
#[test]
fn hard_core_reports_dominate_rod_oracle() {
    let rho = uniform_1d(0.3, 10.0, 64);
    let w = PotentialSpec::<f64>::pure_hard_core(1.0).unwrap();
    let t = 1.0;
    let packing = PackingConstants::default();
    let hc = bounds::hard_core_bounds(&rho, &w, t, &packing).unwrap();
    let names: Vec<&str> = hc.reports.iter().map(|r| r.name.as_str()).collect();
    assert!(names.contains(&"hard_core_1d_window"), "window condition 0.3 <= 1/2 applies");
    assert!(names.contains(&"hard_core_packing"));
    let g = oracle::exact_grand_canonical(&rho, &w, t, None, None).unwrap().value;
    let f_percus = bounds::percus_exact_1d(&rho, 1.0, t).unwrap().value;
    for report in &hc.reports {
        if report.name == "hard_core_1d_window" || report.name == "hard_core_packing" {
            assert!(
                report.value >= g - 1e-6,
                "{} = {} below the oracle {g}",
                report.name,
                report.value
            );
        }
    }
    // The Percus value is exact, so it matches the oracle far more tightly
    // than any one-sided bound.
    assert!((f_percus - g).abs() < 5e-3 * g.abs());
}

/// Weak-coupling mean-field bound dominates the canonical oracle for
/// alpha < d.
#[test]
fn mean_field_dominates_oracle() {
    for seed in 0..3u64 {
        let rho: GridDensity<f64> = random_compact_density(1, 16, 4.0, 5300 + seed, 2.0);
        let w = PotentialSpec::<f64>::power_law(1.0, 1.0, 0.5, 3.0).unwrap();
        for t in [0.0, 1.0] {
            let bound = bounds::mean_field_upper(&rho, &w, t, Ensemble::Canonical).unwrap();
            let oracle_value = oracle::exact_canonical(&rho, &w, t).unwrap().value;
            assert!(
                oracle_value <= bound.value + 1e-8,
                "T = {t}: oracle {oracle_value} above mean-field {}",
                bound.value
            );
            // The Kirkwood-Monroe line sits between them.
            let kirkwood = bound.constants.iter().find(|(n, _)| n == "kirkwood_line").unwrap().1;
            assert!(oracle_value <= kirkwood + 1e-8);
            assert!(kirkwood <= bound.value + 1e-8);
        }
    }
}

/// Poisson-state interaction matches the mean-field double sum for a
/// smooth tabulated interaction.
#[test]
fn poisson_interaction_matches_double_sum() {
    let rho = uniform_1d(0.5, 4.0, 24);
    // Smooth bump: w(r) = 0.3 exp(-r^2) tabulated densely, finite at 0.
    let table: Vec<(f64, f64)> = (0..200)
        .map(|k| {
            let r = 0.05 * k as f64;
            (r, 0.3 * (-r * r).exp())
        })
        .collect();
    let w = PotentialSpec::new(
        PotentialKind::Tabulated { table },
        0.5,
        1.0,
        CoreExponent::Finite(0.5),
        3.0,
    )
    .unwrap();
    let p = freebound::states::poisson_state(&rho, 20).unwrap();
    let u = p.interaction_energy(&w);
    // Direct double sum over cells, including the diagonal at w(0).
    let vol = rho.grid.cell_volume();
    let mut double = 0.0;
    for a in rho.support_cells() {
        for b in rho.support_cells() {
            double += rho.values[a] * rho.values[b] * vol * vol
                * w.evaluate(rho.grid.center_distance(a, b));
        }
    }
    let expected = 0.5 * double;
    assert!(
        (u - expected).abs() < 1e-6 + 1e-6 * expected.abs(),
        "Poisson interaction {u} vs half double sum {expected}"
    );
}

/// d = 2 uniform density between rho_c and rho_c / v_c: the necessary flag
/// holds while the sufficient one fails.
#[test]
fn representability_gap_in_2d() {
    let packing = PackingConstants::<f64>::default();
    let rho0 = 1.2;
    assert!(rho0 > packing.rho_c(2));
    assert!(rho0 < packing.rho_c(2) / packing.v_c(2));
    let grid = Grid::new(vec![10, 10], vec![0.4, 0.4], vec![0.0, 0.0]).unwrap();
    let rho = GridDensity::uniform(grid, rho0);
    let rep = bounds::representability(&rho, 1.0);
    assert!(rep.necessary, "ball(r0/2) mass {} stays below 1", rho0 * 0.25 * std::f64::consts::PI);
    assert!(!rep.sufficient, "R_rho >= r0 must fail between rho_c and rho_c/v_c");
}

/// Localization subadditivity: S(Q) <= S(Q_theta) + S(Q_{1-theta}) for
/// tensor products of disjoint factors.
#[test]
fn localization_subadditivity() {
    use freebound::states::{geometric_localization, Mixture, MixtureTerm, OneBody};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5400);
    let grid = Grid::<f64>::new(vec![12], vec![0.4], vec![0.0]).unwrap();
    let rho_ref = GridDensity::uniform(grid.clone(), 1.0);
    for _ in 0..20 {
        let factors: Vec<OneBody<f64>> = [1usize, 5, 9]
            .iter()
            .map(|&c| OneBody::from_weighted_cells(&rho_ref, &[(c, 1.0)]).unwrap())
            .collect();
        let theta: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
        let complement: Vec<f64> = theta.iter().map(|t| 1.0 - t).collect();
        let full = CanonicalState::Mixture(Mixture {
            grid: grid.clone(),
            n: 3,
            terms: vec![MixtureTerm { weight: 1.0, factors: factors.clone() }],
        });
        let s_full = full.entropy().unwrap();
        let s_theta = geometric_localization(&grid, &factors, &theta)
            .unwrap()
            .entropy()
            .unwrap();
        let s_comp = geometric_localization(&grid, &factors, &complement)
            .unwrap()
            .entropy()
            .unwrap();
        assert!(
            s_full <= s_theta + s_comp + 1e-9,
            "subadditivity violated: {s_full} > {s_theta} + {s_comp}"
        );
    }
}

/// The floating crystal's translation-averaged entropy estimate dominates
/// the packing-bound entropy expression.
#[test]
fn crystal_entropy_bound() {
    let grid = Grid::<f64>::new(vec![128], vec![0.0625], vec![0.0]).unwrap();
    let mut values = vec![0.0; 128];
    for v in values.iter_mut().take(104).skip(24) {
        *v = 0.4;
    }
    let rho = GridDensity::new(grid, values).unwrap();
    let packing = PackingConstants::default();
    let eps = 0.5;
    let trial = constructions::floating_crystal_localized(&rho, 1.0, eps, &packing).unwrap();
    // Average of the per-translate entropies; each part is exact, and the
    // average is exactly what the closed-form chain controls.
    let mut s_avg = 0.0;
    for (w, part) in &trial.combination.parts {
        s_avg += w * part.entropy().unwrap();
    }
    let bound = -(2.0f64 / (eps * packing.v_c(1))).ln() * rho.mass() - rho.entropy_integral();
    assert!(
        s_avg >= bound - 1e-9,
        "crystal entropy {s_avg} below the packing expression {bound}"
    );
}

/// The generic scalar surface instantiates at f32 as well.
#[test]
fn f32_instantiation_smoke() {
    let grid = Grid::<f32>::new(vec![16], vec![0.25f32], vec![0.0f32]).unwrap();
    let rho = GridDensity::uniform(grid, 0.5f32);
    assert!((rho.mass() - 2.0).abs() < 1e-5);
    let r = rho.local_radius(&[2.0f32]).unwrap();
    assert!((r - 1.0).abs() < 0.1, "f32 local radius {r}");
    let w = PotentialSpec::<f32>::power_law(1.0, 1.0, 2.0, 3.0).unwrap();
    assert!((w.evaluate(2.0) - 1.0 / 9.0).abs() < 1e-6);
    let split = constructions::split_1d(&rho).unwrap();
    let st = constructions::trial_1d(&rho, &split).unwrap();
    let f = st.free_energy(&w, 1.0f32).unwrap();
    assert!(f.is_finite());
}

//! Command-line front end: load densities and potentials, evaluate bounds,
//! build trial states, run the exact oracles and verify the sandwich chains.

use clap::{Parser, Subcommand, ValueEnum};
use freebound::bounds::{self, Ensemble, PackingConstants};
use freebound::constructions::{self, OtOutcome, SeparationRule};
use freebound::covering;
use freebound::density::LocalGeometry;
use freebound::io;
use freebound::oracle;
use freebound::suite;
use freebound::{Error, GridDensity64, PotentialSpec64};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freebound",
    about = "Bounds on classical free energies at fixed one-particle density",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnsembleArg {
    Canonical,
    Gc,
}

impl From<EnsembleArg> for Ensemble {
    fn from(e: EnsembleArg) -> Self {
        match e {
            EnsembleArg::Canonical => Ensemble::Canonical,
            EnsembleArg::Gc => Ensemble::GrandCanonical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstructionKind {
    Trial1d,
    Monge,
    GcBesicovitch,
    Ot,
    BlockOt,
    Crystal,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoverKind {
    Cubes,
    Balls,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteName {
    Desk1d,
    Desk2d,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every applicable closed-form bound.
    Bounds {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        potential: PathBuf,
        #[arg(long = "T", alias = "t", default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, value_enum, default_value = "gc")]
        ensemble: EnsembleArg,
        /// Separation parameter for the zero-temperature bound.
        #[arg(long, default_value_t = 1.0 / 3.0)]
        eta: f64,
        /// Ball-cover parameter for the OT-block bound.
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a one-row-per-bound CSV summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// JSON overrides, e.g. '{"rho_c": [1.0, 1.1547, 1.4142]}'.
        #[arg(long)]
        constants: Option<String>,
    },
    /// Build a trial state and report its density error.
    Construct {
        #[arg(long, value_enum)]
        kind: ConstructionKind,
        #[arg(long)]
        density: PathBuf,
        /// Potential file; required by crystal (hard core) runs.
        #[arg(long)]
        potential: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 256)]
        t_samples: usize,
        /// Fixed separation for the OT state; the local-radius rule is used
        /// when absent.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        constants: Option<String>,
    },
    /// Exact desk-scale free energy.
    Oracle {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        potential: PathBuf,
        #[arg(long = "T", alias = "t", default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, value_enum, default_value = "canonical")]
        ensemble: EnsembleArg,
        /// Grand-canonical sector cap (chosen automatically when absent).
        #[arg(long)]
        nmax: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify lower <= oracle <= trial <= closed-form on a suite or a file.
    Verify {
        #[arg(long, value_enum)]
        suite: Option<SuiteName>,
        /// Cases per setting when running a named suite.
        #[arg(long, default_value_t = 3)]
        cases: usize,
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long)]
        potential: Option<PathBuf>,
        #[arg(long = "T", alias = "t", default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, value_enum, default_value = "canonical")]
        ensemble: EnsembleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact 1D hard-rod free energy by the Percus formula.
    Percus {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        r0: f64,
        #[arg(long = "T", alias = "t", default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a Besicovitch cover.
    Cover {
        #[arg(long, value_enum)]
        kind: CoverKind,
        #[arg(long)]
        density: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hard-core representability flags.
    Represent {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        r0: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_density(path: &PathBuf) -> Result<GridDensity64, Error> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().map(|e| e == "csv").unwrap_or(false) {
        io::density_from_csv(&text)
    } else {
        io::density_from_json(&text)
    }
}

fn load_potential(path: &PathBuf) -> Result<PotentialSpec64, Error> {
    let text = std::fs::read_to_string(path)?;
    io::potential_from_json(&text)
}

fn packing_from(constants: &Option<String>) -> Result<PackingConstants<f64>, Error> {
    let mut packing = PackingConstants::default();
    if let Some(text) = constants {
        let v: Value = serde_json::from_str(text)?;
        if let Some(arr) = v.get("rho_c").and_then(Value::as_array) {
            let parsed: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
            packing.rho_c = parsed
                .ok_or_else(|| Error::InvalidInput("rho_c must be an array of numbers".into()))?;
        }
    }
    Ok(packing)
}

fn emit(out: &Option<PathBuf>, value: &Value) -> Result<(), Error> {
    let text = format!("{value:#}");
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Bounds { density, potential, t, ensemble, eta, epsilon, out, csv, constants } => {
            let rho = load_density(&density)?;
            let w = load_potential(&potential)?;
            let packing = packing_from(&constants)?;
            let ensemble: Ensemble = ensemble.into();
            let mut reports = vec![bounds::lower_bound(&rho, &w, t, ensemble)];
            let mut not_applicable: Vec<(String, String)> = Vec::new();
            {
                let mut track = |name: &str, result: Result<bounds::BoundReport<f64>, Error>| {
                    match result {
                        Ok(r) => reports.push(r),
                        Err(e) => not_applicable.push((name.to_string(), e.to_string())),
                    }
                };
                track("mean_field", bounds::mean_field_upper(&rho, &w, t, ensemble));
                track("gc_strong_upper", bounds::gc_strong_upper(&rho, &w, t));
                track("canonical_1d_upper", bounds::canonical_1d_upper(&rho, &w, t));
                track("canonical_t0_upper", bounds::canonical_t0_upper(&rho, &w, eta));
                if rho.dim() >= 2 && t > 0.0 {
                    if let Ok(geometry) = LocalGeometry::of(&rho) {
                        track(
                            "ot_block_upper",
                            bounds::ot_block_upper(&rho, &w, t, epsilon, &geometry),
                        );
                    }
                }
                if w.alpha.is_infinite() {
                    track("percus_exact", bounds::percus_exact_1d(&rho, w.r0, t));
                    let hc = bounds::hard_core_bounds(&rho, &w, t, &packing)?;
                    reports.extend(hc.reports);
                    for pair in hc.skipped {
                        not_applicable.push(pair);
                    }
                }
            }
            let value = json!({
                "reports": reports.iter().map(io::bound_report_to_json).collect::<Vec<_>>(),
                "not_applicable": not_applicable.iter()
                    .map(|(n, r)| json!({"name": n, "reason": r}))
                    .collect::<Vec<_>>(),
            });
            emit(&out, &value)?;
            if let Some(path) = csv {
                std::fs::write(path, io::bound_reports_to_csv(&reports))?;
            }
            // Exit 2 when only the unconditional lower bound could be formed.
            Ok(if reports.len() <= 1 { 2 } else { 0 })
        }
        Command::Construct {
            kind,
            density,
            potential,
            epsilon,
            t_samples,
            delta,
            out,
            constants,
        } => {
            let rho = load_density(&density)?;
            let state_json: Value;
            let produced: GridDensity64;
            match kind {
                ConstructionKind::Trial1d => {
                    let split = constructions::split_1d(&rho)?;
                    let st = constructions::trial_1d(&rho, &split)?;
                    produced = st.density();
                    state_json = io::canonical_state_to_json(&st);
                }
                ConstructionKind::Monge => {
                    let st = constructions::monge_state_1d(&rho, t_samples)?;
                    produced = st.density();
                    state_json = io::canonical_state_to_json(&st);
                }
                ConstructionKind::GcBesicovitch => {
                    let cover = covering::besicovitch_cubes(&rho)?;
                    let trial = constructions::gc_besicovitch_trial(&rho, &cover)?;
                    produced = trial.density();
                    state_json = io::gc_state_to_json(&trial.merged()?);
                }
                ConstructionKind::Ot => {
                    let rule = match delta {
                        Some(d) => SeparationRule::FixedDelta(d),
                        None => SeparationRule::LocalRadius,
                    };
                    match constructions::ot_state_small(&rho, rule)? {
                        OtOutcome::Feasible(st) => {
                            produced = st.density();
                            state_json = io::canonical_state_to_json(&st);
                        }
                        OtOutcome::Infeasible { detail } => {
                            let value = json!({"feasible": false, "detail": detail});
                            emit(&out, &value)?;
                            return Ok(2);
                        }
                    }
                }
                ConstructionKind::BlockOt => {
                    let (st, _) = constructions::block_ot_trial(&rho, epsilon)?;
                    produced = st.density();
                    state_json = io::canonical_state_to_json(&st);
                }
                ConstructionKind::Crystal => {
                    let pot_path = potential.ok_or_else(|| {
                        Error::InvalidInput("crystal construction needs --potential".into())
                    })?;
                    let w = load_potential(&pot_path)?;
                    if !w.alpha.is_infinite() {
                        return Err(Error::InvalidInput(
                            "crystal needs a hard-core potential".into(),
                        ));
                    }
                    let packing = packing_from(&constants)?;
                    let trial =
                        constructions::floating_crystal_localized(&rho, w.r0, epsilon, &packing)?;
                    produced = trial.combination.density();
                    state_json = io::gc_state_to_json(&trial.combination.merged()?);
                }
            }
            let mut sup_err: f64 = 0.0;
            for (a, b) in produced.values.iter().zip(rho.values.iter()) {
                sup_err = sup_err.max((a - b).abs());
            }
            let value = json!({
                "density_sup_error": io::json_number(sup_err),
                "state": state_json,
            });
            emit(&out, &value)?;
            Ok(0)
        }
        Command::Oracle { density, potential, t, ensemble, nmax, out } => {
            let rho = load_density(&density)?;
            let w = load_potential(&potential)?;
            let ensemble: Ensemble = ensemble.into();
            let label = match ensemble {
                Ensemble::Canonical => "canonical",
                Ensemble::GrandCanonical => "gc",
            };
            let key = oracle::cache::key(&rho, &w, t, label);
            if let Some(value) = oracle::cache::load(&key) {
                emit(&out, &json!({"value": io::json_number(value), "cached": true}))?;
                return Ok(0);
            }
            let value = match ensemble {
                Ensemble::Canonical => {
                    let sol = oracle::exact_canonical(&rho, &w, t)?;
                    json!({
                        "value": io::json_number(sol.value),
                        "gap": io::json_number(sol.gap),
                        "iterations": sol.iterations,
                        "cached": false,
                    })
                }
                Ensemble::GrandCanonical => {
                    let sol = oracle::exact_grand_canonical(&rho, &w, t, nmax, None)?;
                    json!({
                        "value": io::json_number(sol.value),
                        "gradient_norm": io::json_number(sol.dual.gap),
                        "converged": sol.dual.converged,
                        "iterations": sol.iterations,
                        "n_max": sol.n_max,
                        "cached": false,
                    })
                }
            };
            if let Some(v) = value.get("value").and_then(Value::as_f64) {
                oracle::cache::store(&key, v);
            }
            emit(&out, &value)?;
            Ok(0)
        }
        Command::Verify { suite: suite_name, cases, density, potential, t, ensemble, out } => {
            let mut runs: Vec<(String, GridDensity64, PotentialSpec64, f64, Ensemble)> = Vec::new();
            match (suite_name, density, potential) {
                (Some(name), _, _) => {
                    let cs = match name {
                        SuiteName::Desk1d => suite::desk_1d::<f64>(cases),
                        SuiteName::Desk2d => suite::desk_2d::<f64>(cases),
                    };
                    for c in cs {
                        runs.push((c.label, c.rho, c.w, c.temperature, c.ensemble));
                    }
                }
                (None, Some(d), Some(p)) => {
                    let rho = load_density(&d)?;
                    let w = load_potential(&p)?;
                    runs.push(("file".into(), rho, w, t, ensemble.into()));
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "verify needs either --suite or both --density and --potential".into(),
                    ))
                }
            }
            let mut all = Vec::new();
            let mut failures = 0usize;
            for (label, rho, w, temperature, ens) in runs {
                let report = oracle::verify_sandwich(&rho, &w, temperature, ens)?;
                if !report.passed() {
                    failures += 1;
                }
                all.push(json!({
                    "case": label,
                    "report": io::sandwich_report_to_json(&report),
                }));
            }
            emit(&out, &json!({"cases": all, "failures": failures}))?;
            Ok(if failures > 0 { 1 } else { 0 })
        }
        Command::Percus { density, r0, t, out } => {
            let rho = load_density(&density)?;
            let report = bounds::percus_exact_1d(&rho, r0, t)?;
            emit(&out, &io::bound_report_to_json(&report))?;
            Ok(0)
        }
        Command::Cover { kind, density, epsilon, out } => {
            let rho = load_density(&density)?;
            let value = match kind {
                CoverKind::Cubes => io::cube_cover_to_json(&covering::besicovitch_cubes(&rho)?),
                CoverKind::Balls => {
                    io::ball_cover_to_json(&covering::besicovitch_balls(&rho, epsilon)?)
                }
            };
            emit(&out, &value)?;
            Ok(0)
        }
        Command::Represent { density, r0, out } => {
            let rho = load_density(&density)?;
            let rep = bounds::representability(&rho, r0);
            let value = json!({
                "necessary": rep.necessary,
                "sufficient": rep.sufficient,
                "exact_1d": rep.exact_1d,
                "min_radius": rep.min_radius.map(io::json_number),
            });
            emit(&out, &value)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

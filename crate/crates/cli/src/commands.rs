//! Subcommand implementations. Each returns a process exit code so the
//! binary can distinguish outcome classes:
//!
//! 0 converged / verified, 1 error or failed verification, 2 time horizon
//! reached without convergence, 3 gridlock.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use formkit_core::{
    build_basis, run, solve, verify_gains, FormationSpec, GainBlock, GainSet, SdpProblem,
    Termination,
};

use crate::gains_io;
use crate::scenario::{GainsMode, Scenario};
use crate::trajectory::{write_trajectory, RunMeta, RunMetrics};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_MAX_TIME: u8 = 2;
pub const EXIT_GRIDLOCK: u8 = 3;

#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub sweep: Option<usize>,
}

/// Resolves the gain set a scenario asks for: synthesized, from a file, or
/// inline. Synthesized gains must verify; file and inline gains are taken as
/// given (use the verify subcommand to check them).
pub fn resolve_gains(
    scenario: &Scenario,
    spec: &FormationSpec,
    scenario_dir: &Path,
) -> anyhow::Result<GainSet> {
    match scenario.gains.mode {
        GainsMode::Synthesize => {
            let basis = build_basis(spec)?;
            let rho = scenario
                .synthesis
                .rho
                .unwrap_or_else(|| SdpProblem::default_rho(spec));
            let problem = SdpProblem::new(spec.clone(), basis.clone(), rho)?;
            let solution = solve(&problem, &scenario.solve_options())?;
            let report = verify_gains(spec, &basis, &solution.gains)?;
            if !report.passed() {
                bail!("synthesized gains failed verification:\n{report}");
            }
            Ok(solution.gains)
        }
        GainsMode::File => {
            let rel = scenario
                .gains
                .path
                .as_ref()
                .context("gains.mode = \"file\" requires gains.path")?;
            let path = scenario_dir.join(rel);
            let (graph, gains) = gains_io::read_gains(&path)?;
            if &graph != spec.graph() {
                bail!(
                    "gains file {} describes a different sensing graph than the scenario",
                    path.display()
                );
            }
            Ok(gains)
        }
        GainsMode::Inline => {
            let blocks = scenario
                .gains
                .blocks
                .as_ref()
                .context("gains.mode = \"inline\" requires gains.blocks")?;
            let n = spec.agent_count();
            let mut map = BTreeMap::new();
            for b in blocks {
                if b.i == 0 || b.j == 0 || b.i > n || b.j > n {
                    bail!(
                        "inline gain block ({}, {}) out of range: agent ids are 1..={n}",
                        b.i,
                        b.j
                    );
                }
                if map
                    .insert((b.i - 1, b.j - 1), GainBlock::new(b.a, b.b, b.c))
                    .is_some()
                {
                    bail!("duplicate inline gain block ({}, {})", b.i, b.j);
                }
            }
            Ok(GainSet::new(spec.graph(), map)?)
        }
    }
}

/// Synthesizes gains for a scenario's formation, writes them, and prints a
/// verification report. Exit is nonzero iff verification fails.
pub fn cmd_synth(scenario_path: &Path, out_path: &Path) -> anyhow::Result<u8> {
    let scenario = Scenario::load(scenario_path)?;
    let spec = scenario.formation_spec()?;
    let basis = build_basis(&spec)?;
    let rho = scenario
        .synthesis
        .rho
        .unwrap_or_else(|| SdpProblem::default_rho(&spec));
    let problem = SdpProblem::new(spec.clone(), basis.clone(), rho)?;

    let started = Instant::now();
    let solution = solve(&problem, &scenario.solve_options())?;
    let elapsed = started.elapsed().as_secs_f64();
    let report = verify_gains(&spec, &basis, &solution.gains)?;

    gains_io::write_gains(out_path, spec.graph(), &solution.gains)?;
    println!(
        "synthesized {} directed-edge blocks in {:.3} s ({} iterations{})",
        solution.gains.len(),
        elapsed,
        solution.iterations,
        if solution.hit_iteration_cap {
            ", iteration cap hit"
        } else {
            ""
        }
    );
    println!("objective (lambda_1): {:.6e}", solution.objective);
    println!("{report}");
    println!("gains written to {}", out_path.display());
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
}

/// Checks a gains file against a scenario's formation.
pub fn cmd_verify(gains_path: &Path, scenario_path: &Path) -> anyhow::Result<u8> {
    let scenario = Scenario::load(scenario_path)?;
    let spec = scenario.formation_spec()?;
    let (graph, gains) = gains_io::read_gains(gains_path)?;
    if &graph != spec.graph() {
        bail!(
            "gains file {} describes a different sensing graph than the scenario",
            gains_path.display()
        );
    }
    let basis = build_basis(&spec)?;
    let report = verify_gains(&spec, &basis, &gains)?;
    println!("{report}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
}

/// Runs a scenario (or a sweep of derived-seed scenarios) and writes the
/// artifacts into the output directory.
pub fn cmd_sim(
    scenario_path: &Path,
    out_dir: &Path,
    overrides: &SimOverrides,
) -> anyhow::Result<u8> {
    let scenario = Scenario::load(scenario_path)?;
    let spec = scenario.formation_spec()?;
    let scenario_dir = scenario_path.parent().unwrap_or_else(|| Path::new("."));
    let gains = resolve_gains(&scenario, &spec, scenario_dir)?;
    let base_seed = overrides.seed.unwrap_or(scenario.perturbation.seed);

    match overrides.sweep {
        None => {
            let code = run_one(
                &scenario,
                &spec,
                &gains,
                scenario_path,
                out_dir,
                base_seed,
                overrides,
            )?;
            Ok(code)
        }
        Some(count) => {
            if count == 0 {
                bail!("--sweep requires at least 1 run");
            }
            let mut codes = Vec::with_capacity(count);
            for k in 0..count {
                let seed = base_seed.wrapping_add(k as u64);
                let dir = out_dir.join(format!("run_{k:03}"));
                let code = run_one(
                    &scenario,
                    &spec,
                    &gains,
                    scenario_path,
                    &dir,
                    seed,
                    overrides,
                )?;
                codes.push(code);
            }
            let converged = codes.iter().filter(|&&c| c == EXIT_OK).count();
            println!("sweep: {converged}/{count} runs converged");
            Ok(if converged == count {
                EXIT_OK
            } else {
                EXIT_FAIL
            })
        }
    }
}

fn run_one(
    scenario: &Scenario,
    spec: &FormationSpec,
    gains: &GainSet,
    scenario_path: &Path,
    out_dir: &Path,
    seed: u64,
    overrides: &SimOverrides,
) -> anyhow::Result<u8> {
    let cfg = scenario.sim_config(spec, seed, overrides.dt, overrides.t_max)?;
    let world = scenario.initial_world(spec, seed)?;

    let started = Instant::now();
    let result = run(spec, gains, world, &cfg)?;
    let wall = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    write_trajectory(&out_dir.join("trajectory.csv"), &result)?;
    let metrics = RunMetrics::collect(spec, &cfg, &result, seed, wall)?;
    metrics.write(&out_dir.join("metrics.json"))?;
    std::fs::copy(scenario_path, out_dir.join("scenario.toml"))
        .with_context(|| format!("copying scenario into {}", out_dir.display()))?;
    gains_io::write_gains(&out_dir.join("gains.txt"), spec.graph(), gains)?;
    RunMeta::new(&scenario_path.display().to_string(), &cfg, seed)
        .write(&out_dir.join("run_meta.json"))?;

    println!(
        "{}: {} after {:.2} s simulated ({} steps, final error {:.3e}, min separation {:.3})",
        out_dir.display(),
        result.termination.label(),
        result.duration(),
        metrics.steps,
        metrics.final_error,
        metrics.min_separation
    );
    Ok(match result.termination {
        Termination::Converged => EXIT_OK,
        Termination::MaxTime => EXIT_MAX_TIME,
        Termination::Gridlock => EXIT_GRIDLOCK,
    })
}

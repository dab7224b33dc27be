//! Dynamics-level integration tests: integrator accuracy against a matrix
//! exponential oracle, frame invariances, nominal and perturbed convergence,
//! scale fixing, and gridlock handling.

use std::collections::BTreeMap;

use formkit_core::sim::{
    apply_perturbations, local_measurement, PerturbationModel, ScaleShape, SimConfig,
};
use formkit_core::*;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Matrix exponential by scaling and squaring with a Taylor series; accurate
/// far beyond the tolerances used here for the small matrices involved.
fn expm(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let a = m * t;
    let norm = a.amax().max(1e-300);
    let s = norm.log2().ceil().max(0.0) as u32 + 4;
    let scaled = &a / 2f64.powi(s as i32);
    let dim = a.nrows();
    let mut result = DMatrix::identity(dim, dim);
    let mut term = DMatrix::identity(dim, dim);
    for k in 1..=24 {
        term = &term * &scaled / (k as f64);
        result += &term;
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

fn pyramid() -> FormationSpec {
    FormationSpec::new(
        vec![
            Vector3::new(0.5, 0.5, 0.0),
            Vector3::new(0.5, -0.5, 0.0),
            Vector3::new(-0.5, -0.5, 0.0),
            Vector3::new(-0.5, 0.5, 0.0),
            Vector3::new(0.0, 0.0, 0.7),
        ],
        SensingGraph::complete(5),
    )
    .unwrap()
}

fn pyramid_gains(spec: &FormationSpec) -> GainSet {
    let basis = build_basis(spec).unwrap();
    let problem = SdpProblem::new(spec.clone(), basis, SdpProblem::default_rho(spec)).unwrap();
    solve(&problem, &SolveOptions::default()).unwrap().gains
}

fn random_positions(n: usize, half_extent: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
            )
        })
        .collect()
}

/// Explicit Euler against the exact linear flow e^{At} for a hand-built
/// two-agent gain matrix: global error stays below 1e-6 over one second at
/// dt = 1e-3.
#[test]
fn euler_matches_matrix_exponential() {
    let spec = FormationSpec::new(
        vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.2)],
        SensingGraph::complete(2),
    )
    .unwrap();
    // Small gains keep the first-order integrator inside the tolerance.
    let gains = GainSet::uniform(spec.graph(), GainBlock::new(0.01, 0.005, 0.01));
    let agg = assemble_aggregate(&spec, &gains).unwrap();

    let start = vec![Vector3::new(0.3, -0.2, 0.1), Vector3::new(-0.5, 0.4, 0.6)];
    let mut q0 = DVector::zeros(6);
    for (i, p) in start.iter().enumerate() {
        q0[3 * i] = p.x;
        q0[3 * i + 1] = p.y;
        q0[3 * i + 2] = p.z;
    }

    let cfg = SimConfig {
        dt: 1e-3,
        t_max: 1.0,
        tol: 0.0,
        ..SimConfig::default()
    };
    let result = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
    assert_eq!(result.termination, Termination::MaxTime);

    let exact = expm(agg.matrix(), 1.0) * &q0;
    let last = result.records.last().unwrap();
    let mut worst = 0.0f64;
    for (i, p) in last.positions.iter().enumerate() {
        worst = worst.max((p.x - exact[3 * i]).abs());
        worst = worst.max((p.y - exact[3 * i + 1]).abs());
        worst = worst.max((p.z - exact[3 * i + 2]).abs());
    }
    assert!(worst <= 1e-6, "integration error {worst}");
}

/// World-frame trajectories are unchanged by the agents' yaw offsets.
#[test]
fn yaw_offsets_do_not_change_trajectories() {
    let spec = pyramid();
    let gains = pyramid_gains(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = random_positions(5, 1.0, &mut rng);
    let cfg = SimConfig {
        t_max: 10.0,
        tol: 0.0,
        ..SimConfig::default()
    };

    let base = run(
        &spec,
        &gains,
        WorldState::from_positions(start.clone()),
        &cfg,
    )
    .unwrap();
    let yaws = [0.4, -2.0, 1.3, 3.0, -0.7];
    let world = WorldState::from_positions(start).with_yaws(&yaws);
    let turned = run(&spec, &gains, world, &cfg).unwrap();

    assert_eq!(base.records.len(), turned.records.len());
    for (ra, rb) in base.records.iter().zip(&turned.records) {
        for (pa, pb) in ra.positions.iter().zip(&rb.positions) {
            assert!((pa - pb).norm() <= 1e-9, "diverged at t={}", ra.time);
        }
    }
}

/// Translating the start translates the whole trajectory.
#[test]
fn translation_equivariance() {
    let spec = pyramid();
    let gains = pyramid_gains(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = random_positions(5, 1.0, &mut rng);
    let shift = Vector3::new(3.0, -2.0, 1.5);
    let shifted: Vec<Vector3<f64>> = start.iter().map(|p| p + shift).collect();
    let cfg = SimConfig {
        t_max: 5.0,
        tol: 0.0,
        ..SimConfig::default()
    };

    let base = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
    let moved = run(&spec, &gains, WorldState::from_positions(shifted), &cfg).unwrap();
    for (ra, rb) in base.records.iter().zip(&moved.records) {
        for (pa, pb) in ra.positions.iter().zip(&rb.positions) {
            assert!(
                (pa + shift - pb).norm() <= 1e-9,
                "diverged at t={}",
                ra.time
            );
        }
    }
}

/// Nominal convergence: error collapses by three orders of magnitude and
/// decreases monotonically past the initial transient.
#[test]
fn nominal_runs_converge_monotonically() {
    let spec = pyramid();
    let gains = pyramid_gains(&spec);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = random_positions(5, 1.0, &mut rng);
        let cfg = SimConfig {
            t_max: 60.0,
            tol: 0.0,
            ..SimConfig::default()
        };
        let result = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
        let initial = result.initial_error();
        let fin = result.final_error();
        assert!(
            fin < 1e-3 * initial,
            "seed {seed}: {fin} vs initial {initial}"
        );
        for (k, pair) in result.errors.windows(2).enumerate() {
            if result.records[k].time >= 1.0 {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "seed {seed}: error rose at t={}",
                    result.records[k].time
                );
            }
        }
    }
}

/// Convergence survives aggressive positive scaling and sub-90-degree
/// rotations of the control vector.
#[test]
fn perturbed_runs_still_converge() {
    let spec = pyramid();
    let gains = pyramid_gains(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let start = random_positions(5, 1.0, &mut rng);
    let cfg = SimConfig {
        t_max: 300.0,
        tol: 0.0,
        perturb: PerturbationModel {
            scale_range: (0.1, 10.0),
            rot_max: 80.0f64.to_radians(),
            rng_seed: 5,
            ..PerturbationModel::default()
        },
        ..SimConfig::default()
    };
    let result = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
    assert!(
        result.final_error() < 1e-2 * result.initial_error(),
        "{} vs {}",
        result.final_error(),
        result.initial_error()
    );
}

/// The scale-fixing term pins the formation to the desired edge lengths.
#[test]
fn scale_control_fixes_edge_lengths() {
    let spec = pyramid();
    let gains = pyramid_gains(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let start = random_positions(5, 1.0, &mut rng);
    let cfg = SimConfig {
        t_max: 120.0,
        tol: 0.0,
        error_mode: ErrorMode::FixedScale,
        scale: ScaleControl::from_formation(&spec, 1.0, ScaleShape::Tanh).unwrap(),
        ..SimConfig::default()
    };
    let result = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
    let last = result.records.last().unwrap();
    let err = scale_error(&spec, &last.positions).unwrap();
    assert!(err <= 0.02, "scale error {err}");
}

/// Two agents closing head-on along the vertical axis can neither rotate
/// (horizontal steering is useless) nor proceed: the run must end in
/// gridlock without an exception or a safety violation.
#[test]
fn vertical_head_on_gridlocks() {
    let spec = FormationSpec::new(
        vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.5)],
        SensingGraph::complete(2),
    )
    .unwrap();
    let gains = GainSet::uniform(spec.graph(), GainBlock::new(1.0, 0.0, 1.0));
    let start = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 2.0)];
    let cfg = SimConfig {
        t_max: 30.0,
        tol: 1e-3,
        error_mode: ErrorMode::FixedScale,
        avoidance: AvoidanceConfig {
            enabled: true,
            radius: 0.2,
            half_height: 0.3,
        },
        ..SimConfig::default()
    };
    let result = run(&spec, &gains, WorldState::from_positions(start), &cfg).unwrap();
    assert_eq!(result.termination, Termination::Gridlock);
    assert_eq!(result.violations, 0);
    assert!(result.min_separation(0.2, 0.3) >= 1.0);
}

/// Measurement noise is unbiased: the empirical mean over many draws matches
/// the noiseless measurement within 3 sigma of the mean estimator.
#[test]
fn measurement_noise_is_unbiased() {
    let graph = SensingGraph::complete(2);
    let world = WorldState::from_positions(vec![Vector3::zeros(), Vector3::new(1.0, -0.5, 0.25)]);
    let sigma = 0.05;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut sum = Vector3::zeros();
    for _ in 0..n {
        sum += local_measurement(&world, &graph, 0, 1, sigma, &mut rng).unwrap();
    }
    let mean = sum / n as f64;
    let truth = Vector3::new(1.0, -0.5, 0.25);
    let bound = 3.0 * sigma / (n as f64).sqrt();
    for c in 0..3 {
        assert!(
            (mean[c] - truth[c]).abs() <= bound,
            "component {c}: mean {} vs {}",
            mean[c],
            truth[c]
        );
    }
}

/// Perturbed controls always keep a positive projection on the commanded
/// direction below the 90-degree boundary.
#[test]
fn perturbation_projection_stays_positive() {
    let perturb = PerturbationModel {
        scale_range: (0.1, 10.0),
        rot_max: 80.0f64.to_radians(),
        sat: 3.0,
        ..PerturbationModel::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let u = Vector3::new(0.6, -1.1, 0.4);
    for _ in 0..100_000 {
        let out = apply_perturbations(&u, &perturb, &mut rng);
        assert!(out.dot(&u) > 0.0);
    }
}

/// Disabled perturbation features draw nothing from the random stream: a
/// noisy run is unchanged by switching the other features off explicitly.
#[test]
fn inactive_features_do_not_consume_randomness() {
    let graph = SensingGraph::complete(3);
    let world = WorldState::from_positions(vec![
        Vector3::zeros(),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ]);
    let sigma = 0.01;
    let mut rng1 = ChaCha8Rng::seed_from_u64(5);
    let mut rng2 = ChaCha8Rng::seed_from_u64(5);

    let m1 = local_measurement(&world, &graph, 0, 1, sigma, &mut rng1).unwrap();
    // Identity perturbations in between must not advance the second stream.
    let identity = PerturbationModel::default();
    let _ = apply_perturbations(&Vector3::new(1.0, 2.0, 3.0), &identity, &mut rng2);
    let m2 = local_measurement(&world, &graph, 0, 1, sigma, &mut rng2).unwrap();
    assert_eq!(m1, m2);
}

/// Scale-term bookkeeping: control_direction consumes exactly the desired
/// distances on the sensing edges.
#[test]
fn scale_control_requires_all_edges() {
    let spec = pyramid();
    let graph = spec.graph();
    let mut scale =
        formkit_core::sim::ScaleControl::from_formation(&spec, 1.0, ScaleShape::Arctan).unwrap();
    scale.desired.remove(&(0, 1));
    assert!(scale.validate(graph).is_err());

    let gains = GainSet::uniform(graph, GainBlock::new(1.0, 0.0, 1.0));
    let mut meas = BTreeMap::new();
    for j in graph.neighbors(0) {
        meas.insert(j, spec.coords()[j] - spec.coords()[0]);
    }
    let err = formkit_core::sim::control_direction(graph, 0, &meas, &gains, &scale);
    assert!(err.is_err());
}

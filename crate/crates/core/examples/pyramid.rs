//! End-to-end: synthesize gains for a square pyramid, verify them, then fly
//! five agents from a line start into the formation.

use formkit_core::*;
use nalgebra::Vector3;

fn main() {
    let spec = FormationSpec::new(
        vec![
            Vector3::new(0.5, 0.5, 0.0),
            Vector3::new(0.5, -0.5, 0.0),
            Vector3::new(-0.5, -0.5, 0.0),
            Vector3::new(-0.5, 0.5, 0.0),
            Vector3::new(0.0, 0.0, 0.7),
        ],
        SensingGraph::complete(5),
    )
    .unwrap();

    let basis = build_basis(&spec).unwrap();
    let problem =
        SdpProblem::new(spec.clone(), basis.clone(), SdpProblem::default_rho(&spec)).unwrap();
    let solution = solve(&problem, &SolveOptions::default()).unwrap();
    let report = verify_gains(&spec, &basis, &solution.gains).unwrap();
    println!("{report}\n");

    let start: Vec<Vector3<f64>> = (0..5)
        .map(|i| Vector3::new(0.6 * i as f64 - 1.2, 0.0, 0.7))
        .collect();
    let cfg = SimConfig {
        t_max: 60.0,
        tol: 1e-3,
        avoidance: AvoidanceConfig {
            enabled: true,
            radius: 0.12,
            half_height: 0.15,
        },
        ..SimConfig::default()
    };
    let result = run(
        &spec,
        &solution.gains,
        WorldState::from_positions(start),
        &cfg,
    )
    .unwrap();
    println!(
        "termination: {}  t = {:.2} s  error {:.3e} -> {:.3e}  min separation {:.2}",
        result.termination.label(),
        result.duration(),
        result.initial_error(),
        result.final_error(),
        result.min_separation(cfg.avoidance.radius, cfg.avoidance.half_height),
    );
}

//! Shared fixtures for the criterion benchmarks.

use formkit_core::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five-agent square pyramid on a complete sensing graph.
pub fn pyramid() -> FormationSpec {
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
    .expect("pyramid is a valid formation")
}

/// Random complete-graph formation with agents spread over a unit box.
pub fn random_formation(n: usize, seed: u64) -> FormationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let coords: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let min_dist = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (coords[i] - coords[j]).norm())
            .fold(f64::INFINITY, f64::min);
        if min_dist < 0.4 {
            continue;
        }
        if let Ok(spec) = FormationSpec::new(coords, SensingGraph::complete(n)) {
            return spec;
        }
    }
}

pub fn synthesize(spec: &FormationSpec) -> GainSet {
    let basis = build_basis(spec).expect("basis");
    let problem =
        SdpProblem::new(spec.clone(), basis, SdpProblem::default_rho(spec)).expect("problem");
    solve(&problem, &SolveOptions::default())
        .expect("solve")
        .gains
}

pub fn random_world(spec: &FormationSpec, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..spec.agent_count())
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    WorldState::from_positions(positions)
}

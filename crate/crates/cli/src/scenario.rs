//! Scenario files: a TOML description of a formation task that maps onto the
//! core types. Unknown fields are rejected so typos surface as parse errors
//! with a line and field name.
//!
//! Agent and edge indices are 1-based in scenario files and converted at this
//! boundary.

use std::path::Path;

use anyhow::{bail, Context};
use formkit_core::{
    AvoidanceConfig, ErrorMode, FormationSpec, PerturbationModel, ScaleControl, ScaleShape,
    SensingGraph, SimConfig, SolveOptions, WorldState,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Offset separating the setup stream (initial placement, yaw draws) from the
/// in-run perturbation stream derived from the same user seed.
const SETUP_STREAM_OFFSET: u64 = 0x9E3779B97F4A7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub formation: Formation,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub avoidance: AvoidanceSection,
    #[serde(default)]
    pub scale_control: ScaleControlSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub termination: TerminationSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formation {
    pub kind: FormationKind,
    /// Edge length of the named shapes (base edge for the pyramid).
    #[serde(default = "default_size")]
    pub size: f64,
    /// Apex height of the square pyramid.
    #[serde(default = "default_height")]
    pub height: f64,
    /// Agent count for the line shape.
    #[serde(default = "default_line_agents")]
    pub agents: usize,
    /// Target coordinates, required iff kind = "explicit".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationKind {
    SquarePyramid,
    Cube,
    Line,
    Triangle,
    Tetrahedron,
    Explicit,
}

fn default_size() -> f64 {
    1.0
}

fn default_height() -> f64 {
    0.7
}

fn default_line_agents() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub kind: GraphKind,
    /// 1-based node pairs, required iff kind = "explicit".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Complete,
    Explicit,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            kind: GraphKind::Complete,
            edges: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub mode: GainsMode,
    /// Gains file, relative to the scenario file; required iff mode = "file".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Per-directed-edge blocks; required iff mode = "inline".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<InlineBlock>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainsMode {
    Synthesize,
    File,
    Inline,
}

/// One directed-edge gain block, 1-based agent ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineBlock {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        Self {
            mode: GainsMode::Synthesize,
            path: None,
            blocks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    /// Start coordinates, required iff kind = "explicit".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 3]>>,
    /// Box center for kind = "box".
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default = "default_half_extent")]
    pub half_extent: f64,
    /// First agent position for kind = "line".
    #[serde(default)]
    pub start: [f64; 3],
    /// Per-agent increment for kind = "line".
    #[serde(default = "default_line_step")]
    pub step: [f64; 3],
    /// Uniform position jitter half-width applied to explicit and line
    /// starts, drawn from the setup stream.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub yaw: YawMode,
    /// Yaw offsets in radians, required iff yaw = "explicit".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaws: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Explicit,
    Box,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    #[default]
    Zero,
    Random,
    Explicit,
}

fn default_half_extent() -> f64 {
    1.0
}

fn default_line_step() -> [f64; 3] {
    [0.7, 0.0, 0.0]
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::Box,
            coords: None,
            center: [0.0; 3],
            half_extent: default_half_extent(),
            start: [0.0; 3],
            step: default_line_step(),
            jitter: 0.0,
            yaw: YawMode::Zero,
            yaws: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSection {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Max control rotation angle, degrees, in [0, 90).
    pub rot_max_deg: f64,
    pub meas_noise_sigma: f64,
    /// Control saturation; omit for unsaturated (TOML has no infinity).
    pub sat: Option<f64>,
    pub seed: u64,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        Self {
            scale_min: 1.0,
            scale_max: 1.0,
            rot_max_deg: 0.0,
            meas_noise_sigma: 0.0,
            sat: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AvoidanceSection {
    pub enabled: bool,
    pub radius: f64,
    pub half_height: f64,
}

impl Default for AvoidanceSection {
    fn default() -> Self {
        let d = AvoidanceConfig::default();
        Self {
            enabled: false,
            radius: d.radius,
            half_height: d.half_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleControlSection {
    pub enabled: bool,
    pub k: f64,
    pub shape: ShapeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    #[default]
    Arctan,
    Tanh,
}

impl Default for ScaleControlSection {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 1.0,
            shape: ShapeName::Arctan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub dt: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self { dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminationSection {
    pub t_max: f64,
    /// Absolute RMS formation-error threshold.
    pub tol: f64,
    pub error_mode: ErrorModeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModeName {
    #[default]
    FullInvariance,
    FixedScale,
}

impl Default for TerminationSection {
    fn default() -> Self {
        Self {
            t_max: 60.0,
            tol: 1e-4,
            error_mode: ErrorModeName::FullInvariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    /// Gain-vector norm radius; omit for sqrt(edge count).
    pub rho: Option<f64>,
    pub restarts: usize,
    pub max_iterations: usize,
    pub gap_tol: f64,
    pub seed: u64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            rho: None,
            restarts: d.restarts,
            max_iterations: d.max_iterations,
            gap_tol: d.gap_tol,
            seed: d.seed,
        }
    }
}

impl Scenario {
    /// Parses a scenario file; syntax and unknown-field errors carry the TOML
    /// line and field.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        let scenario: Scenario = toml::from_str(&text)
            .with_context(|| format!("parsing scenario {}", path.display()))?;
        Ok(scenario)
    }

    /// Target formation and sensing graph.
    pub fn formation_spec(&self) -> anyhow::Result<FormationSpec> {
        let coords = self.target_coords()?;
        let n = coords.len();
        let graph = match self.graph.kind {
            GraphKind::Complete => SensingGraph::complete(n),
            GraphKind::Explicit => {
                let edges = self
                    .graph
                    .edges
                    .as_ref()
                    .context("graph.kind = \"explicit\" requires graph.edges")?;
                let pairs: Vec<(usize, usize)> = edges
                    .iter()
                    .map(|&[i, j]| to_zero_based(i, j, n))
                    .collect::<anyhow::Result<_>>()?;
                SensingGraph::new(n, pairs)?
            }
        };
        Ok(FormationSpec::new(coords, graph)?)
    }

    fn target_coords(&self) -> anyhow::Result<Vec<Vector3<f64>>> {
        let f = &self.formation;
        let s = f.size;
        if !s.is_finite() || s <= 0.0 {
            bail!("formation.size must be positive, got {s}");
        }
        let coords = match f.kind {
            FormationKind::SquarePyramid => {
                let h = f.height;
                if !h.is_finite() || h <= 0.0 {
                    bail!("formation.height must be positive, got {h}");
                }
                let r = s / 2.0;
                vec![
                    Vector3::new(r, r, 0.0),
                    Vector3::new(r, -r, 0.0),
                    Vector3::new(-r, -r, 0.0),
                    Vector3::new(-r, r, 0.0),
                    Vector3::new(0.0, 0.0, h),
                ]
            }
            FormationKind::Cube => {
                let r = s / 2.0;
                let mut v = Vec::with_capacity(8);
                for &z in &[-r, r] {
                    v.push(Vector3::new(r, r, z));
                    v.push(Vector3::new(r, -r, z));
                    v.push(Vector3::new(-r, -r, z));
                    v.push(Vector3::new(-r, r, z));
                }
                v
            }
            FormationKind::Line => {
                let n = f.agents;
                if n < 2 {
                    bail!("formation.agents must be at least 2, got {n}");
                }
                (0..n)
                    .map(|i| Vector3::new((i as f64 - (n as f64 - 1.0) / 2.0) * s, 0.0, 0.0))
                    .collect()
            }
            FormationKind::Triangle => {
                let r = s / 3f64.sqrt();
                vec![
                    Vector3::new(r, 0.0, 0.0),
                    Vector3::new(-r / 2.0, s / 2.0, 0.0),
                    Vector3::new(-r / 2.0, -s / 2.0, 0.0),
                ]
            }
            FormationKind::Tetrahedron => {
                let r = s / 3f64.sqrt();
                let h = s * (2f64 / 3.0).sqrt();
                vec![
                    Vector3::new(r, 0.0, 0.0),
                    Vector3::new(-r / 2.0, s / 2.0, 0.0),
                    Vector3::new(-r / 2.0, -s / 2.0, 0.0),
                    Vector3::new(0.0, 0.0, h),
                ]
            }
            FormationKind::Explicit => {
                let coords = f
                    .coords
                    .as_ref()
                    .context("formation.kind = \"explicit\" requires formation.coords")?;
                coords
                    .iter()
                    .map(|&[x, y, z]| Vector3::new(x, y, z))
                    .collect()
            }
        };
        Ok(coords)
    }

    /// Initial world state. Random placement and yaw draws come from the
    /// setup stream derived from `seed`, so runs are reproducible from the
    /// scenario file plus the seed alone.
    pub fn initial_world(&self, spec: &FormationSpec, seed: u64) -> anyhow::Result<WorldState> {
        let n = spec.agent_count();
        let init = &self.initial;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(SETUP_STREAM_OFFSET));

        let mut positions: Vec<Vector3<f64>> = match init.kind {
            InitialKind::Explicit => {
                let coords = init
                    .coords
                    .as_ref()
                    .context("initial.kind = \"explicit\" requires initial.coords")?;
                if coords.len() != n {
                    bail!(
                        "initial.coords lists {} agents, formation has {n}",
                        coords.len()
                    );
                }
                coords
                    .iter()
                    .map(|&[x, y, z]| Vector3::new(x, y, z))
                    .collect()
            }
            InitialKind::Box => {
                let he = init.half_extent;
                if !he.is_finite() || he <= 0.0 {
                    bail!("initial.half_extent must be positive, got {he}");
                }
                let c = Vector3::new(init.center[0], init.center[1], init.center[2]);
                (0..n)
                    .map(|_| {
                        c + Vector3::new(
                            rng.random_range(-he..he),
                            rng.random_range(-he..he),
                            rng.random_range(-he..he),
                        )
                    })
                    .collect()
            }
            InitialKind::Line => {
                let start = Vector3::new(init.start[0], init.start[1], init.start[2]);
                let step = Vector3::new(init.step[0], init.step[1], init.step[2]);
                (0..n).map(|i| start + step * i as f64).collect()
            }
        };

        if init.jitter != 0.0 {
            if !init.jitter.is_finite() || init.jitter <= 0.0 {
                bail!("initial.jitter must be nonnegative, got {}", init.jitter);
            }
            let j = init.jitter;
            for p in &mut positions {
                *p += Vector3::new(
                    rng.random_range(-j..j),
                    rng.random_range(-j..j),
                    rng.random_range(-j..j),
                );
            }
        }

        let world = WorldState::from_positions(positions);
        let world = match init.yaw {
            YawMode::Zero => world,
            YawMode::Random => {
                let yaws: Vec<f64> = (0..n)
                    .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                    .collect();
                world.with_yaws(&yaws)
            }
            YawMode::Explicit => {
                let yaws = init
                    .yaws
                    .as_ref()
                    .context("initial.yaw = \"explicit\" requires initial.yaws")?;
                if yaws.len() != n {
                    bail!(
                        "initial.yaws lists {} agents, formation has {n}",
                        yaws.len()
                    );
                }
                world.with_yaws(yaws)
            }
        };
        Ok(world)
    }

    /// Simulator configuration with the CLI overrides applied. `seed` is the
    /// effective seed (already resolved against the --seed flag).
    pub fn sim_config(
        &self,
        spec: &FormationSpec,
        seed: u64,
        dt: Option<f64>,
        t_max: Option<f64>,
    ) -> anyhow::Result<SimConfig> {
        let p = &self.perturbation;
        if !(0.0..90.0).contains(&p.rot_max_deg) {
            bail!(
                "perturbation.rot_max_deg must be in [0, 90), got {}",
                p.rot_max_deg
            );
        }
        let perturb = PerturbationModel {
            scale_range: (p.scale_min, p.scale_max),
            rot_max: p.rot_max_deg.to_radians(),
            meas_noise_sigma: p.meas_noise_sigma,
            sat: p.sat.unwrap_or(f64::INFINITY),
            rng_seed: seed,
        };
        let avoidance = AvoidanceConfig {
            enabled: self.avoidance.enabled,
            radius: self.avoidance.radius,
            half_height: self.avoidance.half_height,
        };
        let scale = if self.scale_control.enabled {
            let shape = match self.scale_control.shape {
                ShapeName::Arctan => ScaleShape::Arctan,
                ShapeName::Tanh => ScaleShape::Tanh,
            };
            ScaleControl::from_formation(spec, self.scale_control.k, shape)?
        } else {
            ScaleControl::default()
        };
        let error_mode = match self.termination.error_mode {
            ErrorModeName::FullInvariance => ErrorMode::FullInvariance,
            ErrorModeName::FixedScale => ErrorMode::FixedScale,
        };
        let cfg = SimConfig {
            dt: dt.unwrap_or(self.integrator.dt),
            t_max: t_max.unwrap_or(self.termination.t_max),
            tol: self.termination.tol,
            error_mode,
            perturb,
            avoidance,
            scale,
        };
        cfg.validate(spec.graph())?;
        Ok(cfg)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            restarts: self.synthesis.restarts,
            max_iterations: self.synthesis.max_iterations,
            gap_tol: self.synthesis.gap_tol,
            seed: self.synthesis.seed,
        }
    }
}

fn to_zero_based(i: usize, j: usize, n: usize) -> anyhow::Result<(usize, usize)> {
    if i == 0 || j == 0 || i > n || j > n {
        bail!("edge [{i}, {j}] out of range: agent ids are 1..={n}");
    }
    Ok((i - 1, j - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str) -> String {
        format!("[formation]\nkind = \"{kind}\"\n")
    }

    #[test]
    fn defaults_fill_every_section() {
        let s: Scenario = toml::from_str(&minimal("square_pyramid")).unwrap();
        assert_eq!(s.graph.kind, GraphKind::Complete);
        assert_eq!(s.gains.mode, GainsMode::Synthesize);
        assert_eq!(s.integrator.dt, 0.01);
        assert_eq!(s.termination.t_max, 60.0);
        assert_eq!(s.termination.tol, 1e-4);
        assert!(!s.avoidance.enabled);
        assert!(!s.scale_control.enabled);
        let spec = s.formation_spec().unwrap();
        assert_eq!(spec.agent_count(), 5);
        assert_eq!(spec.graph().edge_count(), 10);
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let text = "[formation]\nkind = \"cube\"\nsped = 2.0\n";
        let err = toml::from_str::<Scenario>(text).unwrap_err().to_string();
        assert!(err.contains("sped"), "{err}");
    }

    #[test]
    fn named_shapes_have_advertised_sizes() {
        let s: Scenario = toml::from_str(&minimal("tetrahedron")).unwrap();
        let spec = s.formation_spec().unwrap();
        assert_eq!(spec.agent_count(), 4);
        for (i, j) in spec.graph().edges() {
            let d = (spec.coords()[i] - spec.coords()[j]).norm();
            assert!((d - 1.0).abs() <= 1e-12, "edge ({i}, {j}) length {d}");
        }

        let s: Scenario = toml::from_str(&minimal("cube")).unwrap();
        let spec = s.formation_spec().unwrap();
        assert_eq!(spec.agent_count(), 8);

        let s: Scenario = toml::from_str(&minimal("triangle")).unwrap();
        let spec = s.formation_spec().unwrap();
        for (i, j) in spec.graph().edges() {
            let d = (spec.coords()[i] - spec.coords()[j]).norm();
            assert!((d - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn explicit_graph_is_one_based() {
        let text = "\
[formation]
kind = \"triangle\"

[graph]
kind = \"explicit\"
edges = [[1, 2], [2, 3]]
";
        let s: Scenario = toml::from_str(text).unwrap();
        let spec = s.formation_spec().unwrap();
        assert!(spec.graph().contains(0, 1));
        assert!(spec.graph().contains(1, 2));
        assert!(!spec.graph().contains(0, 2));

        let bad = "\
[formation]
kind = \"triangle\"

[graph]
kind = \"explicit\"
edges = [[0, 1]]
";
        let s: Scenario = toml::from_str(bad).unwrap();
        let err = s.formation_spec().unwrap_err().to_string();
        assert!(err.contains("1..=3"), "{err}");
    }

    #[test]
    fn box_placement_is_seed_deterministic() {
        let s: Scenario = toml::from_str(&minimal("square_pyramid")).unwrap();
        let spec = s.formation_spec().unwrap();
        let a = s.initial_world(&spec, 7).unwrap();
        let b = s.initial_world(&spec, 7).unwrap();
        let c = s.initial_world(&spec, 8).unwrap();
        assert_eq!(a.positions(), b.positions());
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn line_start_with_jitter_and_random_yaw() {
        let text = "\
[formation]
kind = \"square_pyramid\"

[initial]
kind = \"line\"
start = [-1.4, 0.0, 0.7]
step = [0.7, 0.0, 0.0]
jitter = 0.02
yaw = \"random\"
";
        let s: Scenario = toml::from_str(text).unwrap();
        let spec = s.formation_spec().unwrap();
        let world = s.initial_world(&spec, 3).unwrap();
        for (i, p) in world.positions().iter().enumerate() {
            let nominal = Vector3::new(-1.4 + 0.7 * i as f64, 0.0, 0.7);
            assert!((p - nominal).amax() <= 0.02);
        }
        assert!(world.agents.iter().any(|a| a.yaw != 0.0));
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let text = "\
[formation]
kind = \"explicit\"
coords = [[0.1, -0.2, 0.3], [1.0, 2.0, 3.0], [0.5, 0.25, 0.125]]

[perturbation]
scale_min = 0.1
scale_max = 10.0
rot_max_deg = 80.0
seed = 42

[termination]
t_max = 12.5
tol = 1e-6
";
        let s: Scenario = toml::from_str(text).unwrap();
        let written = toml::to_string(&s).unwrap();
        let back: Scenario = toml::from_str(&written).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn sim_config_applies_overrides() {
        let s: Scenario = toml::from_str(&minimal("square_pyramid")).unwrap();
        let spec = s.formation_spec().unwrap();
        let cfg = s.sim_config(&spec, 9, Some(0.002), Some(5.0)).unwrap();
        assert_eq!(cfg.dt, 0.002);
        assert_eq!(cfg.t_max, 5.0);
        assert_eq!(cfg.perturb.rng_seed, 9);
        assert_eq!(cfg.perturb.sat, f64::INFINITY);
    }
}

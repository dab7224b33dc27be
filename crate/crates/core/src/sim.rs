//! Deterministic kinematic multi-agent simulator: local measurements, the
//! distributed control law with optional scale fixing, perturbation models,
//! safety-cylinder avoidance, and synchronous explicit Euler integration.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::avoidance::{avoid_collisions, AvoidFlag, AvoidanceConfig};
use crate::error::{CoreError, Result};
use crate::metrics::{formation_error, ErrorMode};
use crate::model::{FormationSpec, GainSet, SensingGraph};

/// Speed below which an agent counts as idle for gridlock detection, m/s.
pub const GRIDLOCK_SPEED_EPS: f64 = 1e-6;

/// Consecutive all-idle steps before a run is declared gridlocked.
pub const GRIDLOCK_WINDOW: usize = 100;

/// Rotation by `theta` about the world z-axis.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn wrap_yaw(yaw: f64) -> f64 {
    (yaw + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// One agent: world position plus the fixed yaw offset of its local frame.
/// The controller never sees the yaw; it only ever works on local
/// measurements.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub position: Vector3<f64>,
    pub yaw: f64,
    /// Set while collision avoidance holds the agent in place.
    pub stopped: bool,
}

impl AgentState {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_yaw(yaw),
            stopped: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub agents: Vec<AgentState>,
}

impl WorldState {
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Self {
        Self {
            time: 0.0,
            agents: positions
                .into_iter()
                .map(|p| AgentState::new(p, 0.0))
                .collect(),
        }
    }

    pub fn with_yaws(mut self, yaws: &[f64]) -> Self {
        assert_eq!(yaws.len(), self.agents.len());
        for (agent, &yaw) in self.agents.iter_mut().zip(yaws) {
            agent.yaw = wrap_yaw(yaw);
        }
        self
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.agents.iter().map(|a| a.position).collect()
    }
}

/// Disturbances applied to measurements and controls each step. The defaults
/// are the identity model; a field only consumes random draws when it is
/// active, so disabling one perturbation does not shift the others' streams
/// across configurations.
#[derive(Debug, Clone)]
pub struct PerturbationModel {
    /// Per-agent per-step positive scaling of the control, uniform in range.
    pub scale_range: (f64, f64),
    /// Per-agent per-step rotation of the control about a uniformly random
    /// axis, with angle uniform in [0, rot_max]. Must stay below 90 degrees.
    pub rot_max: f64,
    /// Standard deviation of additive Gaussian noise on each component of
    /// each relative measurement, meters.
    pub meas_noise_sigma: f64,
    /// Speed saturation, m/s; infinity disables it.
    pub sat: f64,
    pub rng_seed: u64,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        Self {
            scale_range: (1.0, 1.0),
            rot_max: 0.0,
            meas_noise_sigma: 0.0,
            sat: f64::INFINITY,
            rng_seed: 0,
        }
    }
}

impl PerturbationModel {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) || !hi.is_finite() {
            return Err(CoreError::InvalidConfig(format!(
                "scale_range must satisfy 0 < lo <= hi < inf, got [{lo}, {hi}]"
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.rot_max) {
            return Err(CoreError::InvalidConfig(format!(
                "rot_max must lie in [0, pi/2), got {}",
                self.rot_max
            )));
        }
        if !self.meas_noise_sigma.is_finite() || self.meas_noise_sigma < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "meas_noise_sigma must be a finite nonnegative value, got {}",
                self.meas_noise_sigma
            )));
        }
        if self.sat.is_nan() || self.sat <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "sat must be positive (infinity allowed), got {}",
                self.sat
            )));
        }
        Ok(())
    }

    fn scaling_active(&self) -> bool {
        self.scale_range != (1.0, 1.0)
    }
}

/// Shape of the bounded odd map used by the scale-fixing term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleShape {
    Arctan,
    Tanh,
}

impl ScaleShape {
    pub fn apply(self, x: f64, k: f64) -> f64 {
        match self {
            ScaleShape::Arctan => x.atan() / k,
            ScaleShape::Tanh => x.tanh() / k,
        }
    }
}

/// Scale-fixing term configuration: per-edge desired distances fed through a
/// bounded odd map.
#[derive(Debug, Clone)]
pub struct ScaleControl {
    pub enabled: bool,
    pub k: f64,
    pub shape: ScaleShape,
    /// Desired inter-agent distances, keyed by the undirected edge (i < j).
    pub desired: BTreeMap<(usize, usize), f64>,
}

impl Default for ScaleControl {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 1.0,
            shape: ScaleShape::Arctan,
            desired: BTreeMap::new(),
        }
    }
}

impl ScaleControl {
    /// Enabled scale control with desired distances read off the target
    /// formation.
    pub fn from_formation(spec: &FormationSpec, k: f64, shape: ScaleShape) -> Result<Self> {
        let mut desired = BTreeMap::new();
        for (i, j) in spec.graph().edges() {
            let d = (spec.coords()[i] - spec.coords()[j]).norm();
            if d <= 1e-12 {
                return Err(CoreError::InvalidFormation(format!(
                    "edge ({i}, {j}) joins coincident target points"
                )));
            }
            desired.insert((i, j), d);
        }
        let ctl = Self {
            enabled: true,
            k,
            shape,
            desired,
        };
        if !k.is_finite() || k <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "scale-control k must be positive, got {k}"
            )));
        }
        Ok(ctl)
    }

    pub fn validate(&self, graph: &SensingGraph) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !self.k.is_finite() || self.k <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "scale-control k must be positive, got {}",
                self.k
            )));
        }
        for (i, j) in graph.edges() {
            match self.desired.get(&(i, j)) {
                Some(&d) if d > 0.0 && d.is_finite() => {}
                Some(&d) => {
                    return Err(CoreError::InvalidConfig(format!(
                        "desired distance for edge ({i}, {j}) must be positive, got {d}"
                    )))
                }
                None => {
                    return Err(CoreError::InvalidConfig(format!(
                        "scale control enabled but edge ({i}, {j}) has no desired distance"
                    )))
                }
            }
        }
        Ok(())
    }

    fn desired_distance(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.desired.get(&key).copied()
    }
}

/// Full run configuration for the simulator.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Absolute RMS formation-error threshold for convergence.
    pub tol: f64,
    /// Error mode used for the convergence check; fixed-scale when scale
    /// drift must count as error.
    pub error_mode: ErrorMode,
    pub perturb: PerturbationModel,
    pub avoidance: AvoidanceConfig,
    pub scale: ScaleControl,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 60.0,
            tol: 1e-4,
            error_mode: ErrorMode::FullInvariance,
            perturb: PerturbationModel::default(),
            avoidance: AvoidanceConfig::default(),
            scale: ScaleControl::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self, graph: &SensingGraph) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !self.t_max.is_finite() || self.t_max < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "t_max must be a finite nonnegative value, got {}",
                self.t_max
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "tol must be nonnegative, got {}",
                self.tol
            )));
        }
        self.perturb.validate()?;
        self.avoidance.validate()?;
        self.scale.validate(graph)?;
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxTime,
    Gridlock,
}

impl Termination {
    pub fn label(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxTime => "max_time",
            Termination::Gridlock => "gridlock",
        }
    }
}

/// One logged step: the state at `time` and the controls applied from it.
/// The final record of a run carries zero controls.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time: f64,
    pub positions: Vec<Vector3<f64>>,
    pub controls: Vec<Vector3<f64>>,
    pub flags: Vec<AvoidFlag>,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub records: Vec<StepRecord>,
    /// RMS formation error at each record time.
    pub errors: Vec<f64>,
    pub termination: Termination,
    /// Count of (step, agent) events where an agent was already inside
    /// another's inflated cylinder.
    pub violations: usize,
}

impl SimResult {
    pub fn initial_error(&self) -> f64 {
        self.errors.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(f64::NAN)
    }

    pub fn duration(&self) -> f64 {
        self.records.last().map(|r| r.time).unwrap_or(0.0)
    }

    /// Worst pairwise separation score over the whole trajectory; at least
    /// one means no two safety cylinders ever intersected.
    pub fn min_separation(&self, radius: f64, half_height: f64) -> f64 {
        self.records
            .iter()
            .map(|r| crate::metrics::min_separation_snapshot(&r.positions, radius, half_height))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Relative position of agent j in agent i's local frame, plus measurement
/// noise when enabled.
pub fn local_measurement(
    world: &WorldState,
    graph: &SensingGraph,
    i: usize,
    j: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vector3<f64>> {
    if !graph.contains(i, j) {
        return Err(CoreError::NotAnEdge { i, j });
    }
    let rel = world.agents[j].position - world.agents[i].position;
    let mut m = rot_z(-world.agents[i].yaw) * rel;
    if sigma > 0.0 {
        for c in 0..3 {
            let eta: f64 = StandardNormal.sample(rng);
            m[c] += sigma * eta;
        }
    }
    Ok(m)
}

/// Control in agent i's local frame: the gain-weighted sum of neighbor
/// measurements, plus the scale-fixing term when enabled.
pub fn control_direction(
    graph: &SensingGraph,
    i: usize,
    measurements: &BTreeMap<usize, Vector3<f64>>,
    gains: &GainSet,
    scale: &ScaleControl,
) -> Result<Vector3<f64>> {
    let mut u = Vector3::zeros();
    for j in graph.neighbors(i) {
        let m = measurements
            .get(&j)
            .ok_or(CoreError::MissingMeasurement { i, j })?;
        let block = gains.block(i, j).ok_or_else(|| {
            CoreError::GainDomainMismatch(format!("no gain block for edge ({i}, {j})"))
        })?;
        u += block.materialize() * m;
        if scale.enabled {
            let d_star = scale.desired_distance(i, j).ok_or_else(|| {
                CoreError::InvalidConfig(format!("no desired distance for edge ({i}, {j})"))
            })?;
            let d = m.norm();
            u += m * scale.shape.apply(d - d_star, scale.k);
        }
    }
    Ok(u)
}

fn rotate_about_axis(u: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    u * c + axis.cross(u) * s + axis * (axis.dot(u)) * (1.0 - c)
}

/// Random positive scaling, random small rotation, then saturation. Inactive
/// features draw nothing from the stream.
pub fn apply_perturbations(
    u: &Vector3<f64>,
    perturb: &PerturbationModel,
    rng: &mut ChaCha8Rng,
) -> Vector3<f64> {
    let mut out = *u;
    if perturb.scaling_active() {
        let s: f64 = rng.random_range(perturb.scale_range.0..=perturb.scale_range.1);
        out *= s;
    }
    if perturb.rot_max > 0.0 {
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let axis = Vector3::new(axis[0], axis[1], axis[2]);
        let angle: f64 = rng.random_range(0.0..=perturb.rot_max);
        out = rotate_about_axis(&out, &axis, angle);
    }
    if perturb.sat.is_finite() {
        let norm = out.norm();
        if norm > perturb.sat {
            out *= perturb.sat / norm;
        }
    }
    out
}

/// Result of a synchronous step: the updated world plus the controls and
/// avoidance flags that produced it.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub world: WorldState,
    pub controls: Vec<Vector3<f64>>,
    pub flags: Vec<AvoidFlag>,
    pub violations: usize,
}

/// Advances the world by one Euler step. All agents sense and decide against
/// the same pre-step snapshot.
pub fn step(
    world: &WorldState,
    graph: &SensingGraph,
    gains: &GainSet,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    let n = world.agents.len();
    let positions = world.positions();
    let mut controls = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut violations = 0usize;

    for i in 0..n {
        let mut measurements = BTreeMap::new();
        for j in graph.neighbors(i) {
            let m = local_measurement(world, graph, i, j, cfg.perturb.meas_noise_sigma, rng)?;
            measurements.insert(j, m);
        }
        let u_local = control_direction(graph, i, &measurements, gains, &cfg.scale)?;
        let u_world = rot_z(world.agents[i].yaw) * u_local;
        let u_pert = apply_perturbations(&u_world, &cfg.perturb, rng);

        let (u_final, flag, violation) = if cfg.avoidance.enabled {
            let obstacles: Vec<Vector3<f64>> = positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| *p)
                .collect();
            let out = avoid_collisions(&positions[i], &u_pert, &obstacles, &cfg.avoidance);
            (out.control, out.flag, out.violation)
        } else {
            (u_pert, AvoidFlag::Clear, false)
        };

        if !u_final.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NumericalDivergence { time: world.time });
        }
        controls.push(u_final);
        flags.push(flag);
        violations += violation as usize;
    }

    let mut agents = world.agents.clone();
    for i in 0..n {
        agents[i].position += controls[i] * cfg.dt;
        agents[i].stopped = flags[i] == AvoidFlag::Stopped;
        if !agents[i].position.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NumericalDivergence { time: world.time });
        }
    }

    Ok(StepOutput {
        world: WorldState {
            time: world.time + cfg.dt,
            agents,
        },
        controls,
        flags,
        violations,
    })
}

/// Runs the simulator until convergence, the time horizon, or gridlock.
pub fn run(
    spec: &FormationSpec,
    gains: &GainSet,
    world0: WorldState,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate(spec.graph())?;
    if world0.agents.len() != spec.agent_count() {
        return Err(CoreError::InvalidConfig(format!(
            "world has {} agents, formation has {}",
            world0.agents.len(),
            spec.agent_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.perturb.rng_seed);
    let mut world = world0;
    world.time = 0.0;

    let k_max = (cfg.t_max / cfg.dt).round() as usize;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut violations = 0usize;
    let mut idle_streak = 0usize;

    let terminal =
        |records: &mut Vec<StepRecord>, errors: &mut Vec<f64>, world: &WorldState, err: f64| {
            let n = world.agents.len();
            records.push(StepRecord {
                time: world.time,
                positions: world.positions(),
                controls: vec![Vector3::zeros(); n],
                flags: vec![AvoidFlag::Clear; n],
            });
            errors.push(err);
        };

    for k in 0..=k_max {
        let positions = world.positions();
        let err = formation_error(spec, &positions, cfg.error_mode)?.rms_error;
        if !err.is_finite() {
            return Err(CoreError::NumericalDivergence { time: world.time });
        }
        if err < cfg.tol {
            terminal(&mut records, &mut errors, &world, err);
            return Ok(SimResult {
                records,
                errors,
                termination: Termination::Converged,
                violations,
            });
        }
        if k == k_max {
            terminal(&mut records, &mut errors, &world, err);
            return Ok(SimResult {
                records,
                errors,
                termination: Termination::MaxTime,
                violations,
            });
        }

        let out = step(&world, spec.graph(), gains, cfg, &mut rng)?;
        records.push(StepRecord {
            time: world.time,
            positions,
            controls: out.controls.clone(),
            flags: out.flags.clone(),
        });
        errors.push(err);
        violations += out.violations;

        let all_idle = out
            .flags
            .iter()
            .zip(&out.controls)
            .all(|(f, u)| *f == AvoidFlag::Stopped || u.norm() < GRIDLOCK_SPEED_EPS);
        idle_streak = if all_idle { idle_streak + 1 } else { 0 };

        world = out.world;
        world.time = (k + 1) as f64 * cfg.dt;

        if idle_streak >= GRIDLOCK_WINDOW {
            let positions = world.positions();
            let err = formation_error(spec, &positions, cfg.error_mode)?.rms_error;
            terminal(&mut records, &mut errors, &world, err);
            return Ok(SimResult {
                records,
                errors,
                termination: Termination::Gridlock,
                violations,
            });
        }
    }
    unreachable!("loop always returns at k_max");
}

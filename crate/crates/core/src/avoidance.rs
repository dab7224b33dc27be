//! Safety-cylinder collision avoidance: rotate the control about the
//! vertical axis by the minimal angle that clears every inflated cylinder,
//! or stop when no rotation up to 90 degrees clears them.

use nalgebra::Vector3;

use crate::error::{CoreError, Result};

/// Safety-cylinder parameters. Each agent carries a cylinder of this radius
/// and half-height; pairwise safety therefore inflates the obstacle cylinder
/// by the ego dimensions (radius 2r, half-height 2h).
#[derive(Debug, Clone, Copy)]
pub struct AvoidanceConfig {
    pub enabled: bool,
    pub radius: f64,
    pub half_height: f64,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            radius: 0.15,
            half_height: 0.3,
        }
    }
}

impl AvoidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            if !self.radius.is_finite() || self.radius <= 0.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "avoidance radius must be positive, got {}",
                    self.radius
                )));
            }
            if !self.half_height.is_finite() || self.half_height <= 0.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "avoidance half_height must be positive, got {}",
                    self.half_height
                )));
            }
        }
        Ok(())
    }
}

/// What the avoidance rule did to an agent's control this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvoidFlag {
    Clear,
    Rotated,
    Stopped,
}

impl AvoidFlag {
    pub fn label(self) -> &'static str {
        match self {
            AvoidFlag::Clear => "clear",
            AvoidFlag::Rotated => "rotated",
            AvoidFlag::Stopped => "stopped",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "clear" => Some(AvoidFlag::Clear),
            "rotated" => Some(AvoidFlag::Rotated),
            "stopped" => Some(AvoidFlag::Stopped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AvoidanceOutcome {
    pub control: Vector3<f64>,
    pub flag: AvoidFlag,
    /// The agent was already inside another agent's inflated cylinder.
    pub violation: bool,
}

/// True when the open ray p + t*dir, t in (0, inf), enters the open inflated
/// cylinder centered at p + w (radius big_r, half-height big_h). Tangency
/// does not count as entering.
fn ray_enters(w: &Vector3<f64>, dir: &Vector3<f64>, big_r: f64, big_h: f64) -> bool {
    // Open parameter interval (t_lo, t_hi) of points inside the cylinder.
    let mut t_lo = 0.0_f64;
    let mut t_hi = f64::INFINITY;

    let dx = dir.x;
    let dy = dir.y;
    let a = dx * dx + dy * dy;
    if a > 0.0 {
        let b = dx * w.x + dy * w.y;
        let c = w.x * w.x + w.y * w.y - big_r * big_r;
        let disc = b * b - a * c;
        if disc <= 0.0 {
            return false;
        }
        let sq = disc.sqrt();
        t_lo = t_lo.max((b - sq) / a);
        t_hi = t_hi.min((b + sq) / a);
    } else if w.x * w.x + w.y * w.y >= big_r * big_r {
        return false;
    }

    if dir.z != 0.0 {
        let z1 = (w.z - big_h) / dir.z;
        let z2 = (w.z + big_h) / dir.z;
        t_lo = t_lo.max(z1.min(z2));
        t_hi = t_hi.min(z1.max(z2));
    } else if w.z.abs() >= big_h {
        return false;
    }

    t_hi > t_lo
}

fn inside(w: &Vector3<f64>, big_r: f64, big_h: f64) -> bool {
    w.x * w.x + w.y * w.y < big_r * big_r && w.z.abs() < big_h
}

fn rotate_xy(u: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    Vector3::new(c * u.x - s * u.y, s * u.x + c * u.y, u.z)
}

fn wrap_to_pi(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Blocked-heading set contributed by a single obstacle: empty, one arc of
/// headings centered on the obstacle bearing, or the whole circle.
enum BlockedSet {
    Empty,
    Arc { center: f64, half_width: f64 },
    Full,
}

/// Classifies the blocked headings for one obstacle, for a control with
/// horizontal speed `m` and vertical rate `uz`.
///
/// As the heading rotates away from the obstacle bearing, the horizontal
/// chord through the disk shrinks nestedly, so the blocked set is a single
/// arc and bisection on the offset is valid.
fn blocked_set(w: &Vector3<f64>, m: f64, uz: f64, big_r: f64, big_h: f64) -> BlockedSet {
    let wxy = (w.x * w.x + w.y * w.y).sqrt();
    let dir_at = |psi: f64| -> Vector3<f64> {
        let (s, c) = psi.sin_cos();
        Vector3::new(m * c, m * s, uz)
    };
    if wxy < 1e-12 {
        // Coaxial obstacle: heading cannot change the outcome.
        return if ray_enters(w, &dir_at(0.0), big_r, big_h) {
            BlockedSet::Full
        } else {
            BlockedSet::Empty
        };
    }
    let center = w.y.atan2(w.x);
    if !ray_enters(w, &dir_at(center), big_r, big_h) {
        return BlockedSet::Empty;
    }
    if ray_enters(w, &dir_at(center + std::f64::consts::PI), big_r, big_h) {
        return BlockedSet::Full;
    }
    // Invariant: blocked at lo, clear at hi; returns the clear side.
    let mut lo = 0.0_f64;
    let mut hi = std::f64::consts::PI;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ray_enters(w, &dir_at(center + mid), big_r, big_h) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BlockedSet::Arc {
        center,
        half_width: hi,
    }
}

/// Applies the rotate-or-stop rule for one agent against a snapshot of the
/// other agents' positions.
pub fn avoid_collisions(
    position: &Vector3<f64>,
    control: &Vector3<f64>,
    obstacles: &[Vector3<f64>],
    cfg: &AvoidanceConfig,
) -> AvoidanceOutcome {
    let big_r = 2.0 * cfg.radius;
    let big_h = 2.0 * cfg.half_height;
    let rel: Vec<Vector3<f64>> = obstacles.iter().map(|p| p - position).collect();

    if rel.iter().any(|w| inside(w, big_r, big_h)) {
        return AvoidanceOutcome {
            control: Vector3::zeros(),
            flag: AvoidFlag::Stopped,
            violation: true,
        };
    }
    if *control == Vector3::zeros() {
        return AvoidanceOutcome {
            control: *control,
            flag: AvoidFlag::Clear,
            violation: false,
        };
    }
    if !rel.iter().any(|w| ray_enters(w, control, big_r, big_h)) {
        return AvoidanceOutcome {
            control: *control,
            flag: AvoidFlag::Clear,
            violation: false,
        };
    }

    let stopped = AvoidanceOutcome {
        control: Vector3::zeros(),
        flag: AvoidFlag::Stopped,
        violation: false,
    };

    let m = (control.x * control.x + control.y * control.y).sqrt();
    if m < 1e-12 {
        // Purely vertical control: a rotation about z is a no-op.
        return stopped;
    }
    let psi0 = control.y.atan2(control.x);

    let mut arcs = Vec::with_capacity(rel.len());
    for w in &rel {
        match blocked_set(w, m, control.z, big_r, big_h) {
            BlockedSet::Empty => {}
            BlockedSet::Full => return stopped,
            BlockedSet::Arc { center, half_width } => arcs.push((center, half_width)),
        }
    }

    // The minimal escape heading lies on the boundary of the blocked union,
    // hence at some arc endpoint; candidates still blocked by another
    // obstacle are rejected by the exact ray test. The margin keeps a
    // candidate strictly clear of its own obstacle under rounding.
    const ANGLE_MARGIN: f64 = 1e-12;
    let mut best: Option<f64> = None;
    for &(center, half) in &arcs {
        let half = half + ANGLE_MARGIN;
        for endpoint in [center + half, center - half] {
            let delta = wrap_to_pi(endpoint - psi0);
            let candidate = rotate_xy(control, delta);
            if rel.iter().any(|w| ray_enters(w, &candidate, big_r, big_h)) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    if (delta.abs() - b.abs()).abs() <= 1e-12 {
                        delta > 0.0 && b < 0.0
                    } else {
                        delta.abs() < b.abs()
                    }
                }
            };
            if better {
                best = Some(delta);
            }
        }
    }

    match best {
        Some(delta) if delta.abs() <= std::f64::consts::FRAC_PI_2 => AvoidanceOutcome {
            control: rotate_xy(control, delta),
            flag: AvoidFlag::Rotated,
            violation: false,
        },
        _ => stopped,
    }
}

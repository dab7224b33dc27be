//! Formation-quality metrics: alignment error modulo the invariance group,
//! edge-length scale error, and pairwise safety separation.

use nalgebra::Vector3;

use crate::error::{CoreError, Result};
use crate::model::FormationSpec;

/// Which transform family the alignment fit may use to explain the positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    /// Translation, rotation about the vertical axis, horizontal scale, and
    /// vertical scale.
    FullInvariance,
    /// Translation and rotation about the vertical axis only; scales pinned
    /// to one. Use this when scale drift must count as error.
    FixedScale,
}

/// Best-fit transform parameters and the residual error they leave.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Root-mean-square per-agent residual after the best fit.
    pub rms_error: f64,
    /// Largest per-agent residual after the best fit.
    pub max_error: f64,
    pub translation: Vector3<f64>,
    /// Fitted rotation angle about the vertical axis, radians.
    pub z_rotation: f64,
    /// Fitted horizontal scale (one in fixed-scale mode).
    pub scale: f64,
    /// Fitted vertical scale (one in fixed-scale mode).
    pub z_scale: f64,
    /// True when some fitted parameter is unidentifiable for this target
    /// (for example a planar target leaves the vertical scale free). The
    /// residual error is still valid; the flagged parameters default to the
    /// identity.
    pub degenerate: bool,
}

fn check_lengths(target: &FormationSpec, positions: &[Vector3<f64>]) -> Result<()> {
    if positions.len() != target.agent_count() {
        return Err(CoreError::InvalidConfig(format!(
            "{} positions for a {}-agent target",
            positions.len(),
            target.agent_count()
        )));
    }
    Ok(())
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += p;
    }
    c / points.len() as f64
}

/// Residual of the best transform in `mode` mapping the target onto the
/// positions. The horizontal fit is linear in (scale x rotation) coordinates,
/// so the minimum is exact, not iterative.
pub fn formation_error(
    target: &FormationSpec,
    positions: &[Vector3<f64>],
    mode: ErrorMode,
) -> Result<AlignmentReport> {
    check_lengths(target, positions)?;
    let n = positions.len();
    let q_bar = centroid(target.coords());
    let p_bar = centroid(positions);

    // Centered sums for the separable horizontal / vertical fits.
    let mut s_alpha = 0.0; // sum(px qx + py qy)
    let mut s_beta = 0.0; // sum(py qx - px qy)
    let mut s_qxy = 0.0; // sum |q_xy|^2
    let mut s_zz = 0.0; // sum pz qz
    let mut s_qz = 0.0; // sum qz^2
    let mut total_q = 0.0;
    for (qi, pi) in target.coords().iter().zip(positions) {
        let q = qi - q_bar;
        let p = pi - p_bar;
        s_alpha += p.x * q.x + p.y * q.y;
        s_beta += p.y * q.x - p.x * q.y;
        s_qxy += q.x * q.x + q.y * q.y;
        s_zz += p.z * q.z;
        s_qz += q.z * q.z;
        total_q += q.norm_squared();
    }
    let tiny = 1e-16 * total_q.max(1e-300);

    let mut degenerate = false;
    let (alpha, beta, gamma) = match mode {
        ErrorMode::FullInvariance => {
            let (a, b) = if s_qxy > tiny {
                (s_alpha / s_qxy, s_beta / s_qxy)
            } else {
                degenerate = true;
                (1.0, 0.0)
            };
            let g = if s_qz > tiny {
                s_zz / s_qz
            } else {
                degenerate = true;
                1.0
            };
            (a, b, g)
        }
        ErrorMode::FixedScale => {
            let norm = (s_alpha * s_alpha + s_beta * s_beta).sqrt();
            let (a, b) = if norm > tiny {
                (s_alpha / norm, s_beta / norm)
            } else {
                degenerate = true;
                (1.0, 0.0)
            };
            (a, b, 1.0)
        }
    };

    let apply = |q: &Vector3<f64>| -> Vector3<f64> {
        let qc = q - q_bar;
        Vector3::new(
            alpha * qc.x - beta * qc.y,
            beta * qc.x + alpha * qc.y,
            gamma * qc.z,
        ) + p_bar
    };

    let mut sum_sq = 0.0;
    let mut max_error: f64 = 0.0;
    for (pi, qi) in positions.iter().zip(target.coords()) {
        let r = (pi - apply(qi)).norm();
        sum_sq += r * r;
        max_error = max_error.max(r);
    }

    let scale = (alpha * alpha + beta * beta).sqrt();
    let z_rotation = if scale > 0.0 { beta.atan2(alpha) } else { 0.0 };
    if mode == ErrorMode::FullInvariance && scale == 0.0 {
        degenerate = true;
    }
    // apply(q) = L (q - q_bar) + p_bar = L q + (p_bar - L q_bar).
    let l_qbar = Vector3::new(
        alpha * q_bar.x - beta * q_bar.y,
        beta * q_bar.x + alpha * q_bar.y,
        gamma * q_bar.z,
    );
    let translation = p_bar - l_qbar;

    Ok(AlignmentReport {
        rms_error: (sum_sq / n as f64).sqrt(),
        max_error,
        translation,
        z_rotation,
        scale: match mode {
            ErrorMode::FullInvariance => scale,
            ErrorMode::FixedScale => 1.0,
        },
        z_scale: gamma,
        degenerate,
    })
}

/// Largest relative deviation of the measured edge lengths from the target
/// edge lengths, over the sensing graph. Errors if some target edge has
/// near-zero length.
pub fn scale_error(target: &FormationSpec, positions: &[Vector3<f64>]) -> Result<f64> {
    check_lengths(target, positions)?;
    let mut worst: f64 = 0.0;
    for (i, j) in target.graph().edges() {
        let d_star = (target.coords()[i] - target.coords()[j]).norm();
        if d_star < 1e-12 {
            return Err(CoreError::InvalidFormation(format!(
                "target edge ({i}, {j}) has near-zero length"
            )));
        }
        let d = (positions[i] - positions[j]).norm();
        worst = worst.max((d - d_star).abs() / d_star);
    }
    Ok(worst)
}

/// Pairwise separation score for one snapshot: the smallest, over agent
/// pairs, of the larger of the horizontal and vertical gaps normalized by the
/// safety-cylinder diameter and height. A value of at least one means no two
/// safety cylinders intersect.
pub fn min_separation_snapshot(positions: &[Vector3<f64>], radius: f64, half_height: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = positions[i] - positions[j];
            let horiz = d.xy().norm() / (2.0 * radius);
            let vert = d.z.abs() / (2.0 * half_height);
            worst = worst.min(horiz.max(vert));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::model::SensingGraph;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

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

    fn transform(q: &Vector3<f64>, t: Vector3<f64>, phi: f64, s: f64, sz: f64) -> Vector3<f64> {
        Vector3::new(
            s * (phi.cos() * q.x - phi.sin() * q.y),
            s * (phi.sin() * q.x + phi.cos() * q.y),
            sz * q.z,
        ) + t
    }

    #[test]
    fn exact_transform_recovered() {
        let spec = pyramid();
        let t = Vector3::new(1.0, -2.0, 0.5);
        let phi = 0.6;
        let s = 1.7;
        let sz = 0.9;
        let positions: Vec<_> = spec
            .coords()
            .iter()
            .map(|q| transform(q, t, phi, s, sz))
            .collect();
        let rep = formation_error(&spec, &positions, ErrorMode::FullInvariance).unwrap();
        assert!(rep.rms_error <= 1e-12, "rms {}", rep.rms_error);
        assert!(rep.max_error <= 1e-12);
        assert_abs_diff_eq!(rep.z_rotation, phi, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.scale, s, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.z_scale, sz, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.translation.x, t.x, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.translation.y, t.y, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.translation.z, t.z, epsilon = 1e-10);
        assert!(!rep.degenerate);
    }

    #[test]
    fn full_error_equals_complement_projection() {
        // The orbit of the target under the invariance group spans the same
        // subspace as the invariant directions, so the fit residual must
        // equal the norm of the complement projection.
        let spec = FormationSpec::new(
            vec![
                Vector3::new(0.4, 0.1, 0.3),
                Vector3::new(-0.2, 0.5, -0.1),
                Vector3::new(0.3, -0.4, 0.2),
                Vector3::new(-0.5, -0.2, 0.6),
            ],
            SensingGraph::complete(4),
        )
        .unwrap();
        let basis = build_basis(&spec).unwrap();
        let positions = vec![
            Vector3::new(1.3, 0.2, -0.4),
            Vector3::new(-0.7, 1.1, 0.9),
            Vector3::new(0.5, -1.2, 0.3),
            Vector3::new(-0.1, 0.4, -0.8),
        ];
        let mut p = DVector::zeros(12);
        for (i, v) in positions.iter().enumerate() {
            p[3 * i] = v.x;
            p[3 * i + 1] = v.y;
            p[3 * i + 2] = v.z;
        }
        let expected = (basis.complement().transpose() * p).norm() / (4.0f64).sqrt();
        let rep = formation_error(&spec, &positions, ErrorMode::FullInvariance).unwrap();
        assert_abs_diff_eq!(rep.rms_error, expected, epsilon = 1e-10);
    }

    #[test]
    fn fixed_scale_sees_what_full_forgives() {
        let spec = pyramid();
        let positions: Vec<_> = spec.coords().iter().map(|q| q * 2.0).collect();
        let full = formation_error(&spec, &positions, ErrorMode::FullInvariance).unwrap();
        let fixed = formation_error(&spec, &positions, ErrorMode::FixedScale).unwrap();
        assert!(full.rms_error <= 1e-12);
        assert!(fixed.rms_error > 0.3, "fixed {}", fixed.rms_error);
        assert_eq!(fixed.scale, 1.0);
        assert_eq!(fixed.z_scale, 1.0);
    }

    #[test]
    fn fixed_never_beats_full() {
        let spec = pyramid();
        let positions = vec![
            Vector3::new(0.9, 0.4, 0.1),
            Vector3::new(0.4, -0.6, -0.2),
            Vector3::new(-0.6, -0.5, 0.05),
            Vector3::new(-0.4, 0.6, -0.1),
            Vector3::new(0.1, 0.0, 0.9),
        ];
        let full = formation_error(&spec, &positions, ErrorMode::FullInvariance).unwrap();
        let fixed = formation_error(&spec, &positions, ErrorMode::FixedScale).unwrap();
        assert!(fixed.rms_error >= full.rms_error - 1e-12);
    }

    #[test]
    fn planar_target_flags_degenerate_vertical_fit() {
        let spec = FormationSpec::new(
            vec![
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(-0.5, 0.75_f64.sqrt(), 0.0),
                Vector3::new(-0.5, -(0.75_f64.sqrt()), 0.0),
            ],
            SensingGraph::complete(3),
        )
        .unwrap();
        let positions = spec.coords().to_vec();
        let rep = formation_error(&spec, &positions, ErrorMode::FullInvariance).unwrap();
        assert!(rep.rms_error <= 1e-12);
        assert!(rep.degenerate);
        assert_eq!(rep.z_scale, 1.0);
    }

    #[test]
    fn vertical_line_flags_degenerate_horizontal_fit() {
        let spec = FormationSpec::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 2.0),
            ],
            SensingGraph::complete(3),
        )
        .unwrap();
        let rep = formation_error(&spec, spec.coords(), ErrorMode::FullInvariance).unwrap();
        assert!(rep.rms_error <= 1e-12);
        assert!(rep.degenerate);
        assert_eq!(rep.scale, 1.0);
        assert_eq!(rep.z_rotation, 0.0);
    }

    #[test]
    fn scale_error_on_uniformly_scaled_square() {
        let spec = FormationSpec::new(
            vec![
                Vector3::new(0.5, 0.5, 0.0),
                Vector3::new(0.5, -0.5, 0.0),
                Vector3::new(-0.5, -0.5, 0.0),
                Vector3::new(-0.5, 0.5, 0.0),
            ],
            SensingGraph::complete(4),
        )
        .unwrap();
        let positions: Vec<_> = spec.coords().iter().map(|q| q * 1.25).collect();
        let err = scale_error(&spec, &positions).unwrap();
        assert_abs_diff_eq!(err, 0.25, epsilon = 1e-12);
        let exact = scale_error(&spec, spec.coords()).unwrap();
        assert_eq!(exact, 0.0);
    }

    #[test]
    fn separation_score_examples() {
        let r = 0.1;
        let h = 0.3;
        // Horizontal gap dominates: 0.3 / 0.2 = 1.5.
        let p1 = vec![Vector3::zeros(), Vector3::new(0.3, 0.0, 0.0)];
        assert_abs_diff_eq!(min_separation_snapshot(&p1, r, h), 1.5, epsilon = 1e-12);
        // Vertical stack: gap 0.5 / 0.6 < 1, cylinders intersect.
        let p2 = vec![Vector3::zeros(), Vector3::new(0.0, 0.0, 0.5)];
        let s2 = min_separation_snapshot(&p2, r, h);
        assert_abs_diff_eq!(s2, 0.5 / 0.6, epsilon = 1e-12);
        assert!(s2 < 1.0);
        // Separated in height even though coaxial.
        let p3 = vec![Vector3::zeros(), Vector3::new(0.0, 0.0, 0.7)];
        assert!(min_separation_snapshot(&p3, r, h) > 1.0);
        // Single agent: nothing to collide with.
        assert_eq!(
            min_separation_snapshot(&[Vector3::zeros()], r, h),
            f64::INFINITY
        );
    }

    #[test]
    fn length_mismatch_rejected() {
        let spec = pyramid();
        let positions = vec![Vector3::zeros(); 3];
        assert!(formation_error(&spec, &positions, ErrorMode::FullInvariance).is_err());
        assert!(scale_error(&spec, &positions).is_err());
    }
}

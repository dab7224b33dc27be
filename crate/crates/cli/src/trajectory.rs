//! Trajectory CSV and metrics JSON artifacts.
//!
//! The CSV is one row per agent per recorded step, with shortest
//! round-trip float formatting: the same run always produces the same bytes.

use std::path::Path;

use anyhow::Context;
use formkit_core::{formation_error, scale_error, ErrorMode, FormationSpec, SimConfig, SimResult};
use serde::Serialize;

pub const CSV_HEADER: &str = "t,agent_id,x,y,z,ux,uy,uz,avoid_flag";

pub fn format_trajectory(result: &SimResult) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in &result.records {
        for (idx, pos) in record.positions.iter().enumerate() {
            let u = &record.controls[idx];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                record.time,
                idx + 1,
                pos.x,
                pos.y,
                pos.z,
                u.x,
                u.y,
                u.z,
                record.flags[idx].label()
            ));
        }
    }
    out
}

pub fn write_trajectory(path: &Path, result: &SimResult) -> anyhow::Result<()> {
    std::fs::write(path, format_trajectory(result))
        .with_context(|| format!("writing trajectory {}", path.display()))?;
    Ok(())
}

/// Summary of one run, serialized as metrics.json.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub termination: String,
    pub steps: usize,
    pub duration_s: f64,
    pub initial_error: f64,
    pub final_error: f64,
    pub final_error_fixed_scale: f64,
    pub scale_error: f64,
    pub min_separation: f64,
    pub violations: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl RunMetrics {
    pub fn collect(
        spec: &FormationSpec,
        cfg: &SimConfig,
        result: &SimResult,
        seed: u64,
        wall_time_s: f64,
    ) -> anyhow::Result<Self> {
        let last = result.records.last().context("run produced no records")?;
        let fixed = formation_error(spec, &last.positions, ErrorMode::FixedScale)?.rms_error;
        Ok(Self {
            termination: result.termination.label().to_string(),
            steps: result.records.len().saturating_sub(1),
            duration_s: result.duration(),
            initial_error: result.initial_error(),
            final_error: result.final_error(),
            final_error_fixed_scale: fixed,
            scale_error: scale_error(spec, &last.positions)?,
            min_separation: result.min_separation(cfg.avoidance.radius, cfg.avoidance.half_height),
            violations: result.violations,
            seed,
            wall_time_s,
        })
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .with_context(|| format!("writing metrics {}", path.display()))?;
        Ok(())
    }
}

/// Everything needed to reproduce a run bit-exactly, next to the scenario
/// copy itself.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    pub scenario_file: String,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub tol: f64,
    pub error_mode: String,
}

impl RunMeta {
    pub fn new(scenario_file: &str, cfg: &SimConfig, seed: u64) -> Self {
        Self {
            tool: "formkit".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_file: scenario_file.to_string(),
            seed,
            dt: cfg.dt,
            t_max: cfg.t_max,
            tol: cfg.tol,
            error_mode: match cfg.error_mode {
                ErrorMode::FullInvariance => "full_invariance".to_string(),
                ErrorMode::FixedScale => "fixed_scale".to_string(),
            },
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
            .with_context(|| format!("writing run metadata {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use formkit_core::{run, GainBlock, GainSet, SensingGraph, WorldState};
    use nalgebra::Vector3;

    fn tiny_result() -> (FormationSpec, SimConfig, SimResult) {
        let spec = FormationSpec::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.5),
            ],
            SensingGraph::complete(3),
        )
        .unwrap();
        let gains = GainSet::uniform(spec.graph(), GainBlock::new(0.5, 0.0, 0.5));
        let world = WorldState::from_positions(vec![
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.9, 0.1, 0.0),
            Vector3::new(0.0, 1.1, 0.4),
        ]);
        let cfg = SimConfig {
            t_max: 0.05,
            tol: 0.0,
            ..SimConfig::default()
        };
        let result = run(&spec, &gains, world, &cfg).unwrap();
        (spec, cfg, result)
    }

    #[test]
    fn csv_shape_and_header() {
        let (_, _, result) = tiny_result();
        let text = format_trajectory(&result);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), result.records.len() * 3);
        // 6 steps: t = 0.00 .. 0.05, last row is the terminal state.
        assert_eq!(result.records.len(), 6);
        let first: Vec<&str> = rows[0].split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "1");
        assert_eq!(first[8], "clear");
        let last: Vec<&str> = rows.last().unwrap().split(',').collect();
        assert_eq!(last[0], "0.05");
        assert_eq!(last[1], "3");
        assert_eq!(last[5], "0");
        assert_eq!(last[6], "0");
        assert_eq!(last[7], "0");
    }

    #[test]
    fn formatting_is_reproducible() {
        let (_, _, r1) = tiny_result();
        let (_, _, r2) = tiny_result();
        assert_eq!(format_trajectory(&r1), format_trajectory(&r2));
    }

    #[test]
    fn metrics_fields_are_consistent() {
        let (spec, cfg, result) = tiny_result();
        let m = RunMetrics::collect(&spec, &cfg, &result, 5, 0.01).unwrap();
        assert_eq!(m.termination, "max_time");
        assert_eq!(m.steps, 5);
        assert_eq!(m.duration_s, 0.05);
        assert_eq!(m.seed, 5);
        assert!(m.final_error <= m.initial_error);
        assert!(m.min_separation >= 1.0);
    }
}

//! Run statistics, multiprogram metrics and CSV/JSON reports.
//!
//! Energy figures are simulator-internal: they cover DRAM activations and
//! data movement only, in the units of the configured activation energy,
//! and exclude any host CPU cost.

use std::fmt::Write as _;

use mimdram_core::uprog::UprogStats;
use serde::{Deserialize, Serialize};

use crate::machine::{AppOutcome, LaneSample};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandCounts {
    pub aap: usize,
    pub ap: usize,
    pub gbmov: usize,
    pub lcmov: usize,
}

impl From<UprogStats> for CommandCounts {
    fn from(s: UprogStats) -> Self {
        Self { aap: s.aap_count, ap: s.ap_count, gbmov: s.gbmov_count, lcmov: s.lcmov_count }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_time: f64,
    pub energy: f64,
    pub commands: CommandCounts,
    /// (active lanes, provisioned lanes) per executed compute bbop.
    pub lane_samples: Vec<LaneSample>,
}

impl RunStats {
    pub fn from_outcome(a: &AppOutcome) -> Self {
        Self {
            wall_time: a.wall_time,
            energy: a.energy,
            commands: a.commands.into(),
            lane_samples: a.lane_samples.clone(),
        }
    }

    /// Active over provisioned lanes, summed across compute bbops.
    pub fn utilization(&self) -> f64 {
        let (a, p) = self.lane_samples.iter().fold((0usize, 0usize), |(a, p), s| (a + s.0, p + s.1));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixMetrics {
    pub weighted_speedup: f64,
    pub harmonic_speedup: f64,
    pub max_slowdown: f64,
}

/// Metrics from per-app alone and shared wall times.
pub fn mix_metrics(alone: &[f64], shared: &[f64]) -> MixMetrics {
    assert_eq!(alone.len(), shared.len());
    let n = alone.len() as f64;
    let slow: Vec<f64> = alone.iter().zip(shared).map(|(a, s)| s / a).collect();
    MixMetrics {
        weighted_speedup: slow.iter().map(|s| 1.0 / s).sum(),
        harmonic_speedup: n / slow.iter().sum::<f64>(),
        max_slowdown: slow.iter().copied().fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub app: String,
    pub mode: String,
    pub wall_time: f64,
    pub energy: f64,
    pub utilization: f64,
    pub commands: CommandCounts,
}

impl AppReport {
    pub fn new(app: &str, mode: &str, s: &RunStats) -> Self {
        Self {
            app: app.to_string(),
            mode: mode.to_string(),
            wall_time: s.wall_time,
            energy: s.energy,
            utilization: s.utilization(),
            commands: s.commands,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Always "simulator-internal": DRAM command energy only.
    pub energy_scope: String,
    pub runs: Vec<AppReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixes: Vec<MixReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub mix: String,
    pub class: String,
    pub system: String,
    pub metrics: MixMetrics,
}

pub const ENERGY_SCOPE: &str = "simulator-internal";
pub const CSV_HEADER: &str = "app,mode,wall_time,energy,utilization,aap,ap,gbmov,lcmov";

impl Report {
    pub fn new(runs: Vec<AppReport>) -> Self {
        Self { energy_scope: ENERGY_SCOPE.to_string(), runs, mixes: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.runs {
            let c = r.commands;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.app, r.mode, r.wall_time, r.energy, r.utilization, c.aap, c.ap, c.gbmov, c.lcmov
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_app_mix_is_neutral() {
        let m = mix_metrics(&[5.0], &[5.0]);
        assert_eq!((m.weighted_speedup, m.harmonic_speedup, m.max_slowdown), (1.0, 1.0, 1.0));
    }

    #[test]
    fn perfect_overlap_gives_n() {
        let m = mix_metrics(&[3.0; 4], &[3.0; 4]);
        assert_eq!(m.weighted_speedup, 4.0);
        assert_eq!(m.max_slowdown, 1.0);
    }

    #[test]
    fn metrics_by_hand() {
        // slowdowns 2 and 4
        let m = mix_metrics(&[1.0, 1.0], &[2.0, 4.0]);
        assert_eq!(m.weighted_speedup, 0.75);
        assert_eq!(m.harmonic_speedup, 2.0 / 6.0);
        assert_eq!(m.max_slowdown, 4.0);
    }

    #[test]
    fn utilization_sums_lanes() {
        let s = RunStats { lane_samples: vec![(512, 8192), (1000, 1024)], ..Default::default() };
        assert_eq!(s.utilization(), 1512.0 / 9216.0);
    }

    #[test]
    fn csv_and_json() {
        let s = RunStats {
            wall_time: 84.4,
            energy: 2.5,
            commands: CommandCounts { aap: 1, ..Default::default() },
            lane_samples: vec![(4, 8)],
        };
        let r = Report::new(vec![AppReport::new("k", "mimdram", &s)]);
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\nk,mimdram,84.4,2.5,0.5,1,0,0,0\n"));
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }
}

//! Cooperative versus signalized comparison over one spawn sequence.

use crossway_core::sim::metrics::Summary;
use crossway_core::sim::{Mode, RunResult, ScenarioConfig, SimError, Simulation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: Mode,
    pub completed: usize,
    pub mean_travel_time: f64,
    pub mean_energy: f64,
    pub total_stops: u32,
}

/// Means are over vehicles that completed their trip in both runs, so both
/// modes are judged on the same trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub paired_trips: usize,
    pub baseline: ModeStats,
    pub candidate: ModeStats,
    /// (candidate − baseline) / baseline · 100; negative is a reduction.
    pub delta_travel_time_pct: f64,
    pub delta_energy_pct: f64,
}

pub struct CompareRun {
    pub comparison: Comparison,
    pub baseline: RunResult,
    pub candidate: RunResult,
}

fn pct(candidate: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (candidate - baseline) / baseline * 100.0
    }
}

/// Per-trip (travel time, energy) of completed trips keyed by vehicle id.
fn trips(s: &Summary) -> BTreeMap<u32, (f64, f64)> {
    s.completed()
        .map(|r| (r.id.0, (r.travel_time.unwrap_or(0.0), r.energy)))
        .collect()
}

pub fn compare_summaries(seed: u64, baseline: &Summary, candidate: &Summary, modes: (Mode, Mode)) -> Comparison {
    let b = trips(baseline);
    let c = trips(candidate);
    let paired: Vec<u32> = b.keys().filter(|id| c.contains_key(id)).copied().collect();
    let stats = |m: &BTreeMap<u32, (f64, f64)>, s: &Summary, mode: Mode| {
        let n = paired.len().max(1) as f64;
        ModeStats {
            mode,
            completed: m.len(),
            mean_travel_time: paired.iter().map(|id| m[id].0).sum::<f64>() / n,
            mean_energy: paired.iter().map(|id| m[id].1).sum::<f64>() / n,
            total_stops: s.aggregates.total_stops,
        }
    };
    let bs = stats(&b, baseline, modes.0);
    let cs = stats(&c, candidate, modes.1);
    Comparison {
        seed,
        paired_trips: paired.len(),
        delta_travel_time_pct: pct(cs.mean_travel_time, bs.mean_travel_time),
        delta_energy_pct: pct(cs.mean_energy, bs.mean_energy),
        baseline: bs,
        candidate: cs,
    }
}

/// Runs `cfg` in both modes with the same seed and spawn sequence.
pub fn compare_modes(cfg: &ScenarioConfig, baseline: Mode, candidate: Mode) -> Result<CompareRun, SimError> {
    let run = |mode: Mode| -> Result<RunResult, SimError> {
        let c = ScenarioConfig { mode, ..cfg.clone() };
        Ok(Simulation::new(c)?.with_series().run())
    };
    let b = run(baseline)?;
    let c = run(candidate)?;
    Ok(CompareRun {
        comparison: compare_summaries(cfg.seed, &b.summary, &c.summary, (baseline, candidate)),
        baseline: b,
        candidate: c,
    })
}

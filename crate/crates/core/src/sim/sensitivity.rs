//! Prediction-step sensitivity of the motion estimator on a single-lane platoon.
//!
//! The leader accelerates from a reduced speed under the free-flow law while
//! its followers track it through the consensus law over an impaired channel.
//! Every follower compares its delay-compensated estimate of the vehicle ahead
//! with that vehicle's true position each tick.

use super::mix_seed;
use super::scenario::ControlConfig;
use crate::channel::{Channel, ChannelConfig};
use crate::control::{consensus_accel, free_flow_accel, lookup_gains, AxisState, ControlGains, TimeGapPolicy};
use crate::estimation::{
    compensate_estimate, estimate_follower, estimate_leader, query_estimate, EstimateSample, EstimatorConfig,
    TrajectoryEstimate,
};
use crate::plant::{actuate, step_plant, PlantParams, PlantState};
use crate::VehicleId;
use serde::{Deserialize, Serialize};

pub const DT_PRED_GRID: [f64; 5] = [1.0, 0.5, 0.1, 0.05, 0.01];

pub const CSV_HEADER: &str = "dt_pred,max_error_mean,max_error_worst,calls_per_second";

#[derive(Debug, thiserror::Error)]
pub enum SensitivityError {
    #[error("sensitivity JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid sensitivity scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityScenario {
    /// Platoon size including the leader.
    pub vehicles: usize,
    /// s
    pub duration: f64,
    /// s
    pub dt_sim: f64,
    /// m/s
    pub speed_limit: f64,
    /// Initial speed of every vehicle as a fraction of the speed limit.
    pub initial_speed_ratio: f64,
    pub channel: ChannelConfig,
    /// `dt_pred` is overridden per sweep point.
    pub estimator: EstimatorConfig,
    pub control: ControlConfig,
    pub plant: PlantParams,
    pub seeds: Vec<u64>,
}

impl Default for SensitivityScenario {
    fn default() -> Self {
        let speed_limit = crate::world::CorridorParams::default().speed_limit;
        Self {
            vehicles: 4,
            duration: 20.0,
            dt_sim: 0.01,
            speed_limit,
            initial_speed_ratio: 0.6,
            channel: ChannelConfig {
                burst_windows: vec![[2.0, 5.0]],
                ..ChannelConfig::default()
            },
            estimator: EstimatorConfig {
                v_target: speed_limit,
                ..EstimatorConfig::default()
            },
            control: ControlConfig::default(),
            plant: PlantParams::default(),
            seeds: (1..=10).collect(),
        }
    }
}

impl SensitivityScenario {
    pub fn from_json(text: &str) -> Result<Self, SensitivityError> {
        let sc: Self = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), SensitivityError> {
        let bad = |m: &str| Err(SensitivityError::Invalid(m.into()));
        if self.vehicles < 2 {
            return bad("a platoon needs at least two vehicles");
        }
        if !(self.dt_sim > 0.0 && self.duration > 0.0) {
            return bad("dt_sim and duration must be positive");
        }
        if !(self.speed_limit > 0.0 && (0.0..=1.0).contains(&self.initial_speed_ratio)) {
            return bad("speed limit must be positive and the initial ratio in [0, 1]");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        self.channel.validate().map_err(|e| SensitivityError::Invalid(e.to_string()))?;
        self.plant
            .validate(self.speed_limit)
            .map_err(|e| SensitivityError::Invalid(e.to_string()))?;
        Ok(())
    }

    fn check_step(&self, dt_pred: f64) -> Result<EstimatorConfig, SensitivityError> {
        let cfg = EstimatorConfig { dt_pred, ..self.estimator };
        let ratio_ok = |a: f64, b: f64| {
            let r = a / b;
            r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-6
        };
        if !(dt_pred > 0.0 && (ratio_ok(dt_pred, self.dt_sim) || ratio_ok(self.dt_sim, dt_pred))) {
            return Err(SensitivityError::Invalid(format!(
                "dt_pred {dt_pred} is not commensurate with dt_sim {}",
                self.dt_sim
            )));
        }
        if !ratio_ok(self.duration, dt_pred) {
            return Err(SensitivityError::Invalid(format!(
                "duration is not a whole number of dt_pred {dt_pred} steps"
            )));
        }
        cfg.validate(self.channel.fail_safe_threshold)
            .map_err(|e| SensitivityError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

/// Outcome of one seeded platoon run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlatoonRun {
    /// Largest |estimated − true| position over all links and ticks, m.
    pub max_error: f64,
    pub estimator_calls: u64,
    /// Refresh instants in the run.
    pub refreshes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub dt_pred: f64,
    /// Per-seed maximum error averaged over seeds, m.
    pub max_error_mean: f64,
    pub max_error_worst: f64,
    pub calls_per_second: f64,
}

#[derive(Clone, Debug)]
struct Beacon {
    state: PlantState,
    sent_at: f64,
    estimate: Option<TrajectoryEstimate>,
}

/// Follower side of the link to the vehicle ahead.
struct Link {
    fresh: Option<Beacon>,
    compensated: Option<TrajectoryEstimate>,
    gains: ControlGains,
    policy: TimeGapPolicy,
}

/// Refresh instants `j · dt_pred` in `(t − dt_sim, t]`.
fn refresh_instants(t: f64, dt_sim: f64, dt_pred: f64) -> impl Iterator<Item = f64> {
    let hi = (t / dt_pred + 1e-9).floor() as i64;
    let lo = ((t - dt_sim) / dt_pred + 1e-9).floor() as i64 + 1;
    (lo.max(0)..=hi).map(move |j| j as f64 * dt_pred)
}

/// One seeded run at a single prediction step.
pub fn run_platoon(sc: &SensitivityScenario, dt_pred: f64, seed: u64) -> Result<PlatoonRun, SensitivityError> {
    sc.validate()?;
    let est_cfg = sc.check_step(dt_pred)?;
    let limits = sc.control.limits;
    let n = sc.vehicles;
    let ids: Vec<VehicleId> = (0..n).map(|i| VehicleId(i as u32 + 1)).collect();
    let mut channel: Channel<Beacon> = Channel::new(ChannelConfig {
        rng_seed: mix_seed(seed, sc.channel.rng_seed),
        ..sc.channel.clone()
    })
    .map_err(|e| SensitivityError::Invalid(e.to_string()))?;

    let v0 = sc.initial_speed_ratio * sc.speed_limit;
    let policy = TimeGapPolicy {
        t_gap: sc.control.t_gap,
        l_target: sc.plant.length + sc.control.clearance,
    };
    let spacing = policy.l_target + policy.t_gap * v0;
    let mut states: Vec<PlantState> = (0..n)
        .map(|i| PlantState {
            s: (n - 1 - i) as f64 * spacing,
            v: v0,
            a: 0.0,
        })
        .collect();
    let gains = lookup_gains(v0, v0, spacing - sc.plant.length, &sc.control.gains);
    let mut links: Vec<Option<Link>> = (0..n)
        .map(|i| {
            (i > 0).then(|| Link {
                fresh: None,
                compensated: None,
                gains,
                policy,
            })
        })
        .collect();
    for i in 1..n {
        channel.open_link(ids[i - 1], ids[i], 0.0);
    }
    let mut own: Vec<Option<TrajectoryEstimate>> = vec![None; n];
    let mut a_ref = vec![0.0; n];
    a_ref[0] = limits.clamp(free_flow_accel(v0, sc.speed_limit, est_cfg.a_max, est_cfg.sigma));

    let broadcast = |channel: &mut Channel<Beacon>, states: &[PlantState], own: &[Option<TrajectoryEstimate>], t: f64| {
        for i in 1..n {
            let beacon = Beacon {
                state: states[i - 1],
                sent_at: t,
                estimate: own[i - 1].clone(),
            };
            channel.send(ids[i - 1], ids[i], t, beacon);
        }
    };
    broadcast(&mut channel, &states, &own, 0.0);

    let ticks = (sc.duration / sc.dt_sim).round() as u64;
    let mut max_error: f64 = 0.0;
    let mut calls = 0u64;
    let mut refreshes = 0u64;
    for k in 1..=ticks {
        let t = k as f64 * sc.dt_sim;
        for i in 0..n {
            let (f, tb) = actuate(a_ref[i], states[i].v, &sc.plant);
            states[i] = step_plant(states[i], f, tb, sc.dt_sim, &sc.plant)
                .map_err(|e| SensitivityError::Invalid(e.to_string()))?;
        }
        for i in 1..n {
            if let Some(m) = channel.poll(ids[i], t).pop() {
                links[i].as_mut().expect("followers have links").fresh = Some(m.payload);
            }
        }
        for r in refresh_instants(t, sc.dt_sim, dt_pred) {
            refreshes += 1;
            for i in 0..n {
                let dtr = r - t;
                let seed = EstimateSample {
                    v: (states[i].v + states[i].a * dtr).max(0.0),
                    d: states[i].s + states[i].v * dtr,
                };
                let mut target = None;
                if let Some(link) = links[i].as_mut() {
                    if let Some(b) = link.fresh.take() {
                        let est = b
                            .estimate
                            .unwrap_or_else(|| estimate_leader(ids[i - 1], b.sent_at, b.state.v, b.state.s, &est_cfg));
                        let tau = (r - est.origin_time).max(0.0);
                        link.compensated = Some(compensate_estimate(&est, tau, r, &est_cfg));
                    }
                    target = link
                        .compensated
                        .as_ref()
                        .and_then(|c| c.rebased(r).ok())
                        .map(|c| (c, link.gains, link.policy));
                }
                own[i] = Some(match target {
                    Some((c, g, p)) => estimate_follower(ids[i], seed, &c, &g, &p, Some(&limits), &est_cfg),
                    None => estimate_leader(ids[i], r, seed.v, seed.d, &est_cfg),
                });
                calls += 1;
            }
        }
        for i in 0..n {
            let ff = free_flow_accel(states[i].v, sc.speed_limit, est_cfg.a_max, est_cfg.sigma);
            let mut a = ff;
            if let Some(link) = &links[i] {
                if let Some(sm) = link.compensated.as_ref().and_then(|c| query_estimate(c, t).ok()) {
                    max_error = max_error.max((sm.d - states[i - 1].s).abs());
                    let ego = AxisState { s: states[i].s, v: states[i].v };
                    let tgt = AxisState { s: sm.d, v: sm.v };
                    if let Ok(c) = consensus_accel(ego, tgt, &link.gains, &link.policy, &limits) {
                        a = a.min(c);
                    }
                } else {
                    a = a.min(0.0);
                }
            }
            a_ref[i] = limits.clamp(a);
        }
        broadcast(&mut channel, &states, &own, t);
    }
    Ok(PlatoonRun {
        max_error,
        estimator_calls: calls,
        refreshes,
    })
}

/// Sweeps `dt_preds` over every seed of the scenario.
pub fn run_sensitivity(sc: &SensitivityScenario, dt_preds: &[f64]) -> Result<Vec<SensitivityRow>, SensitivityError> {
    let mut rows = Vec::with_capacity(dt_preds.len());
    for &dt_pred in dt_preds {
        let mut sum = 0.0;
        let mut worst: f64 = 0.0;
        let mut calls = 0u64;
        for &seed in &sc.seeds {
            let run = run_platoon(sc, dt_pred, seed)?;
            sum += run.max_error;
            worst = worst.max(run.max_error);
            calls += run.estimator_calls;
        }
        let seeds = sc.seeds.len() as f64;
        rows.push(SensitivityRow {
            dt_pred,
            max_error_mean: sum / seeds,
            max_error_worst: worst,
            calls_per_second: calls as f64 / (seeds * sc.duration),
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.dt_pred, r.max_error_mean, r.max_error_worst, r.calls_per_second
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(channel: ChannelConfig) -> SensitivityScenario {
        SensitivityScenario {
            duration: 10.0,
            channel,
            seeds: vec![1, 2],
            ..SensitivityScenario::default()
        }
    }

    #[test]
    fn instants_tile_the_run() {
        for dp in [0.01, 0.05, 0.1, 1.0] {
            let n: usize = (1..=1000).map(|k| refresh_instants(k as f64 * 0.01, 0.01, dp).count()).sum();
            assert_eq!(n, (10.0 / dp).round() as usize, "{dp}");
        }
        let r: Vec<f64> = refresh_instants(0.02, 0.02, 0.01).collect();
        assert_eq!(r, vec![0.01, 0.02]);
    }

    #[test]
    fn perfect_channel_at_cruise_is_exact() {
        let sc = SensitivityScenario {
            initial_speed_ratio: 1.0,
            ..short(ChannelConfig::perfect())
        };
        for row in run_sensitivity(&sc, &[1.0, 0.1, 0.01]).unwrap() {
            assert!(row.max_error_worst < 0.05, "{row:?}");
        }
    }

    #[test]
    fn perfect_channel_fine_step_tracks_acceleration() {
        let sc = short(ChannelConfig::perfect());
        let rows = run_sensitivity(&sc, &[0.01]).unwrap();
        assert!(rows[0].max_error_worst < 0.05, "{:?}", rows[0]);
    }

    #[test]
    fn calls_scale_inversely_with_step() {
        let sc = short(ChannelConfig::delay_only());
        for row in run_sensitivity(&sc, &[1.0, 0.5, 0.1]).unwrap() {
            assert!((row.calls_per_second * row.dt_pred - sc.vehicles as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn burst_hurts_coarse_steps_more() {
        let sc = short(SensitivityScenario::default().channel);
        let rows = run_sensitivity(&sc, &[1.0, 0.01]).unwrap();
        assert!(rows[1].max_error_mean < rows[0].max_error_mean);
    }

    #[test]
    fn incommensurate_step_rejected() {
        let sc = SensitivityScenario {
            dt_sim: 0.02,
            ..SensitivityScenario::default()
        };
        assert!(matches!(run_platoon(&sc, 0.05, 1), Err(SensitivityError::Invalid(_))));
    }
}

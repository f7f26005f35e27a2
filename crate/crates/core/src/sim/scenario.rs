//! Scenario file: everything a run needs, loaded from JSON.

use crate::channel::ChannelConfig;
use crate::control::{AccelLimits, GainTable, IdmParams};
use crate::estimation::EstimatorConfig;
use crate::hmi::CameraConfig;
use crate::plant::PlantParams;
use crate::reservation::ReservationConfig;
use crate::world::CorridorParams;
use crate::world::{Leg, Turn};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cooperative,
    Signalized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cooperative => "cooperative",
            Mode::Signalized => "signalized",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cooperative" => Ok(Mode::Cooperative),
            "signalized" => Ok(Mode::Signalized),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// An external leg where vehicles enter the corridor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryPoint {
    pub intersection: usize,
    pub leg: Leg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSpawn {
    /// s
    pub time: f64,
    pub entry: EntryPoint,
    pub turn: Turn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    /// Poisson arrival rate on every external leg, veh/s.
    pub rate_per_leg: f64,
    pub explicit: Vec<ExplicitSpawn>,
    /// Clear distance required at the lane start, m.
    pub min_headway: f64,
    /// Initial speed as a fraction of the speed limit.
    pub initial_speed_ratio: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            rate_per_leg: 0.08,
            explicit: Vec::new(),
            min_headway: 10.0,
            initial_speed_ratio: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalPlan {
    /// s
    pub green: f64,
    /// s
    pub yellow: f64,
    /// Cycle offset per intersection, s; missing entries are 0.
    pub offsets: Vec<f64>,
}

impl Default for SignalPlan {
    fn default() -> Self {
        Self {
            green: 30.0,
            yellow: 3.0,
            offsets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// s
    pub t_gap: f64,
    /// Standstill clearance added to the target length in the spacing policy, m.
    pub clearance: f64,
    pub limits: AccelLimits,
    pub idm: IdmParams,
    pub gains: GainTable,
    /// Slot length multiplier on `v · t_gap`.
    pub redundancy: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            t_gap: 1.2,
            clearance: 2.0,
            limits: AccelLimits::default(),
            idm: IdmParams::default(),
            gains: GainTable::default(),
            redundancy: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailSafeConfig {
    /// Minimum time between releases at an all-way stop, s.
    pub service_gap: f64,
    /// Stopped vehicles within this distance of the bar may be released, m.
    pub release_distance: f64,
}

impl Default for FailSafeConfig {
    fn default() -> Self {
        Self {
            service_gap: 2.0,
            release_distance: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitlConfig {
    pub entry: EntryPoint,
    pub turn: Turn,
    /// s
    #[serde(default)]
    pub spawn_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub corridor: CorridorParams,
    pub mode: Mode,
    /// s
    pub dt_sim: f64,
    /// s
    pub duration: f64,
    pub seed: u64,
    pub spawn: SpawnConfig,
    pub signal: Option<SignalPlan>,
    pub channel: ChannelConfig,
    pub estimator: EstimatorConfig,
    pub control: ControlConfig,
    pub reservation: ReservationConfig,
    pub plant: PlantParams,
    pub fail_safe: FailSafeConfig,
    pub camera: CameraConfig,
    pub hitl: Option<HitlConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let corridor = CorridorParams::default();
        let estimator = EstimatorConfig {
            v_target: corridor.speed_limit,
            ..EstimatorConfig::default()
        };
        Self {
            name: "corridor".into(),
            corridor,
            mode: Mode::Cooperative,
            dt_sim: 0.02,
            duration: 300.0,
            seed: 1,
            spawn: SpawnConfig::default(),
            signal: Some(SignalPlan::default()),
            channel: ChannelConfig::delay_only(),
            estimator,
            control: ControlConfig::default(),
            reservation: ReservationConfig::default(),
            plant: PlantParams::default(),
            fail_safe: FailSafeConfig::default(),
            camera: CameraConfig::default(),
            hitl: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// True when `a / b` is within rounding of a positive integer.
fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-6
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt_sim > 0.0 && self.dt_sim.is_finite()) {
            return Err(invalid("dt_sim must be positive"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be nonnegative"));
        }
        let dt_pred = self.estimator.dt_pred;
        if !(is_multiple(dt_pred, self.dt_sim) || is_multiple(self.dt_sim, dt_pred)) {
            return Err(invalid("dt_pred and dt_sim must be integer multiples of one another"));
        }
        self.corridor.validate().map_err(|e| invalid(e.to_string()))?;
        self.channel.validate().map_err(|e| invalid(e.to_string()))?;
        self.estimator
            .validate(self.channel.fail_safe_threshold)
            .map_err(|e| invalid(e.to_string()))?;
        self.reservation.validate().map_err(|e| invalid(e.to_string()))?;
        self.plant
            .validate(self.corridor.speed_limit)
            .map_err(|e| invalid(e.to_string()))?;
        self.control.gains.validate().map_err(|e| invalid(e.to_string()))?;
        let c = &self.control;
        if !(c.t_gap > 0.0 && c.clearance >= 0.0 && c.redundancy >= 0.0) {
            return Err(invalid("t_gap must be positive, clearance and redundancy nonnegative"));
        }
        if !(c.limits.a_min < 0.0 && c.limits.a_max > 0.0) {
            return Err(invalid("acceleration limits must bracket zero"));
        }
        let s = &self.spawn;
        if !(s.rate_per_leg >= 0.0 && s.min_headway >= 0.0) {
            return Err(invalid("spawn rate and headway must be nonnegative"));
        }
        if !(s.initial_speed_ratio >= 0.0 && s.initial_speed_ratio <= 1.0) {
            return Err(invalid("initial speed ratio outside [0, 1]"));
        }
        for e in &s.explicit {
            self.check_entry(&e.entry)?;
            if !(e.time >= 0.0) {
                return Err(invalid("explicit spawn time must be nonnegative"));
            }
        }
        if let Some(h) = &self.hitl {
            self.check_entry(&h.entry)?;
        }
        match (&self.signal, self.mode) {
            (None, Mode::Signalized) => return Err(invalid("signalized mode requires a signal plan")),
            (Some(p), _) if !(p.green > 0.0 && p.yellow >= 0.0) => {
                return Err(invalid("signal green must be positive and yellow nonnegative"))
            }
            _ => {}
        }
        let f = &self.fail_safe;
        if !(f.service_gap >= 0.0 && f.release_distance > 0.0) {
            return Err(invalid("fail-safe service gap and release distance must be positive"));
        }
        Ok(())
    }

    fn check_entry(&self, e: &EntryPoint) -> Result<(), ScenarioError> {
        let n = self.corridor.intersections;
        let external = match e.leg {
            Leg::North | Leg::South => true,
            Leg::West => e.intersection == 0,
            Leg::East => e.intersection + 1 == n,
        };
        if e.intersection >= n || !external {
            return Err(invalid(format!(
                "no external {:?} leg at intersection {}",
                e.leg, e.intersection
            )));
        }
        Ok(())
    }

    /// Total simulation ticks.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt_sim - 1e-9).ceil().max(0.0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.ticks(), 15_000);
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ScenarioConfig::from_json("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(matches!(
            ScenarioConfig::from_json(r#"{"dt_sim": 0.02, "bogus": 1}"#),
            Err(ScenarioError::Json(_))
        ));
    }

    #[test]
    fn step_ratio_enforced() {
        let mut cfg = ScenarioConfig::default();
        cfg.estimator.dt_pred = 0.03;
        assert!(cfg.validate().is_err());
        cfg.estimator.dt_pred = 0.01;
        cfg.validate().unwrap();
        cfg.estimator.dt_pred = 1.0;
        cfg.validate().unwrap();
    }

    #[test]
    fn signalized_needs_plan() {
        let text = r#"{"mode": "signalized", "signal": null}"#;
        assert!(matches!(ScenarioConfig::from_json(text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn entry_must_be_external() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.explicit.push(ExplicitSpawn {
            time: 0.0,
            entry: EntryPoint { intersection: 1, leg: Leg::West },
            turn: Turn::Through,
        });
        assert!(cfg.validate().is_err());
        cfg.spawn.explicit[0].entry = EntryPoint { intersection: 3, leg: Leg::East };
        cfg.validate().unwrap();
    }
}

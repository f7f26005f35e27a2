//! Longitudinal reference acceleration: consensus slot following, free-flow
//! cruise and an intelligent-driver style interaction term.

use crate::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("communication link inactive")]
    InactiveLink,
    #[error("no estimate for target {0}")]
    MissingEstimate(VehicleId),
    #[error("invalid control config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// 1/s²
    pub k: f64,
    /// s
    pub gamma: f64,
    /// Adjacency: 1 when the link is active.
    pub alpha: u8,
}

impl ControlGains {
    pub const DEFAULT: ControlGains = ControlGains {
        k: 0.45,
        gamma: 2.2,
        alpha: 1,
    };
}

impl Default for ControlGains {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGapPolicy {
    /// s
    pub t_gap: f64,
    /// Target vehicle length, m.
    pub l_target: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainCell {
    pub v_i0: f64,
    pub v_j0: f64,
    pub gap0: f64,
    pub k: f64,
    pub gamma: f64,
}

/// Gains indexed by initial speeds and gap, queried by nearest cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainTable {
    pub default_k: f64,
    pub default_gamma: f64,
    pub cells: Vec<GainCell>,
}

impl Default for GainTable {
    fn default() -> Self {
        Self {
            default_k: ControlGains::DEFAULT.k,
            default_gamma: ControlGains::DEFAULT.gamma,
            cells: Vec::new(),
        }
    }
}

impl GainTable {
    pub fn from_json(text: &str) -> Result<Self, ControlError> {
        let t: GainTable =
            serde_json::from_str(text).map_err(|e| ControlError::InvalidConfig(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = |k: f64, g: f64| k > 0.0 && g > 0.0 && k.is_finite() && g.is_finite();
        if !ok(self.default_k, self.default_gamma) || !self.cells.iter().all(|c| ok(c.k, c.gamma)) {
            return Err(ControlError::InvalidConfig("gains must be positive".into()));
        }
        Ok(())
    }
}

pub fn lookup_gains(v_i0: f64, v_j0: f64, gap0: f64, table: &GainTable) -> ControlGains {
    let nearest = table.cells.iter().min_by(|a, b| {
        let da = (a.v_i0 - v_i0).powi(2) + (a.v_j0 - v_j0).powi(2) + (a.gap0 - gap0).powi(2);
        let db = (b.v_i0 - v_i0).powi(2) + (b.v_j0 - v_j0).powi(2) + (b.gap0 - gap0).powi(2);
        da.total_cmp(&db)
    });
    match nearest {
        Some(c) => ControlGains {
            k: c.k,
            gamma: c.gamma,
            alpha: 1,
        },
        None => ControlGains {
            k: table.default_k,
            gamma: table.default_gamma,
            alpha: 1,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccelLimits {
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for AccelLimits {
    fn default() -> Self {
        Self {
            a_min: -5.0,
            a_max: 2.0,
        }
    }
}

impl AccelLimits {
    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.a_min, self.a_max)
    }
}

/// Position on a common axis (increasing with travel, 0 at the shared point) and speed.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisState {
    pub s: f64,
    pub v: f64,
}

/// Bracket of the consensus law: spacing error plus damped speed error.
pub fn consensus_bracket(
    ego: AxisState,
    target: AxisState,
    gamma: f64,
    policy: &TimeGapPolicy,
) -> f64 {
    (ego.s - target.s + policy.l_target + ego.v * policy.t_gap) + gamma * (ego.v - target.v)
}

pub fn consensus_accel(
    ego: AxisState,
    target: AxisState,
    gains: &ControlGains,
    policy: &TimeGapPolicy,
    limits: &AccelLimits,
) -> Result<f64, ControlError> {
    if gains.alpha == 0 {
        return Err(ControlError::InactiveLink);
    }
    let raw = -gains.k * consensus_bracket(ego, target, gains.gamma, policy);
    Ok(limits.clamp(raw))
}

pub fn free_flow_accel(v: f64, v_target: f64, a_max: f64, sigma: f64) -> f64 {
    a_max * (1.0 - (v / v_target).powf(sigma))
}

/// One target as seen by the ego on their common axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetView {
    pub id: VehicleId,
    pub ego: AxisState,
    /// `None` when no estimate is available.
    pub target: Option<AxisState>,
    pub gains: ControlGains,
    pub policy: TimeGapPolicy,
}

/// Free flow without targets; otherwise the most conservative consensus command.
pub fn select_control(
    free_flow: f64,
    targets: &[TargetView],
    limits: &AccelLimits,
) -> Result<f64, ControlError> {
    let mut best: Option<f64> = None;
    for t in targets {
        let est = t.target.ok_or(ControlError::MissingEstimate(t.id))?;
        let a = consensus_accel(t.ego, est, &t.gains, &t.policy, limits)?;
        best = Some(best.map_or(a, |b: f64| b.min(a)));
    }
    Ok(best.unwrap_or_else(|| limits.clamp(free_flow)))
}

/// Car-following interaction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// m/s²
    pub a_max: f64,
    /// Comfortable deceleration, m/s².
    pub b: f64,
    /// Standstill gap, m.
    pub s0: f64,
    /// s
    pub time_headway: f64,
    pub sigma: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 2.0,
            b: 3.0,
            s0: 2.0,
            time_headway: 0.6,
            sigma: 4.0,
        }
    }
}

/// Desired dynamic gap toward an object ahead closing at `dv = v - v_ahead`.
pub fn desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    p.s0 + (v * p.time_headway + v * dv / (2.0 * (p.a_max * p.b).sqrt())).max(0.0)
}

/// Interaction-only deceleration term (no free-road part) against an object `gap` metres ahead.
pub fn interaction_accel(v: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    let s_star = desired_gap(v, dv, p);
    p.a_max * (1.0 - (s_star / gap.max(0.01)).powi(2))
}

/// Full intelligent-driver acceleration toward `v_target` with an object ahead.
pub fn idm_accel(v: f64, v_target: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    let s_star = desired_gap(v, dv, p);
    p.a_max * (1.0 - (v / v_target).powf(p.sigma) - (s_star / gap.max(0.01)).powi(2))
}

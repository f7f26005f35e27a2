//! Horizon estimates of target motion under delayed and lossy communication.
//!
//! A leader without targets is predicted with the free-acceleration law. A
//! follower is predicted by rolling the consensus law forward against the
//! delay-compensated estimate of its own target, so estimates chain along the
//! communication topology.

use crate::control::{
    consensus_bracket, free_flow_accel, AccelLimits, AxisState, ControlGains, TimeGapPolicy,
};
use crate::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error("query time {t:.3} outside estimate horizon [{start:.3}, {end:.3}]")]
    HorizonExceeded { t: f64, start: f64, end: f64 },
    #[error("link blackout {blackout:.3} s exceeds the fail-safe threshold")]
    FailSafe { blackout: f64 },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(&'static str),
    #[error("chain link {0} has no previous estimate to carry forward")]
    NoPrevious(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Prediction step, s.
    pub dt_pred: f64,
    /// Steps per horizon; `None` spans five seconds.
    pub horizon_n: Option<usize>,
    /// m/s²
    pub a_max: f64,
    pub sigma: f64,
    /// Free-flow target speed, m/s.
    pub v_target: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            dt_pred: 0.1,
            horizon_n: None,
            a_max: 2.0,
            sigma: 4.0,
            v_target: 13.4,
        }
    }
}

pub const DEFAULT_HORIZON_S: f64 = 5.0;

impl EstimatorConfig {
    pub fn steps(&self) -> usize {
        self.horizon_n
            .unwrap_or_else(|| ((DEFAULT_HORIZON_S / self.dt_pred) - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt_pred
    }

    pub fn validate(&self, fail_safe_threshold: f64) -> Result<(), EstimationError> {
        if !(self.dt_pred > 0.0 && self.dt_pred.is_finite()) {
            return Err(EstimationError::InvalidConfig("dt_pred must be positive"));
        }
        if self.steps() == 0 {
            return Err(EstimationError::InvalidConfig(
                "horizon needs at least one step",
            ));
        }
        if !(self.a_max > 0.0 && self.sigma > 0.0 && self.v_target > 0.0) {
            return Err(EstimationError::InvalidConfig(
                "a_max, sigma and v_target must be positive",
            ));
        }
        if self.horizon() + 1e-9 < fail_safe_threshold {
            return Err(EstimationError::InvalidConfig(
                "horizon shorter than the fail-safe threshold",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateSample {
    pub v: f64,
    pub d: f64,
}

/// Speeds and positions at `origin_time + k·dt` for `k = 0..=N`; index 0 is the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub vehicle_id: VehicleId,
    pub origin_time: f64,
    pub dt: f64,
    pub v_est: Vec<f64>,
    pub d_est: Vec<f64>,
}

impl TrajectoryEstimate {
    pub fn horizon_end(&self) -> f64 {
        self.origin_time + (self.v_est.len() - 1) as f64 * self.dt
    }

    pub fn sample(&self, k: usize) -> EstimateSample {
        EstimateSample {
            v: self.v_est[k],
            d: self.d_est[k],
        }
    }

    /// Same trajectory with every position offset by `ds`.
    pub fn shifted(&self, ds: f64) -> Self {
        Self {
            d_est: self.d_est.iter().map(|d| d + ds).collect(),
            ..self.clone()
        }
    }

    /// The remaining horizon re-anchored at `t`, which must lie inside it.
    /// Whole-step offsets keep the original samples.
    pub fn rebased(&self, t: f64) -> Result<Self, EstimationError> {
        let first = query_estimate(self, t)?;
        let x = ((t - self.origin_time) / self.dt).max(0.0);
        let m = x.round();
        if (x - m).abs() < 1e-6 {
            let m = (m as usize).min(self.v_est.len() - 1);
            return Ok(Self {
                origin_time: t,
                v_est: self.v_est[m..].to_vec(),
                d_est: self.d_est[m..].to_vec(),
                ..self.clone()
            });
        }
        let n = ((self.horizon_end() - t) / self.dt + 1e-9).floor() as usize;
        let mut out = Self::from_seed(self.vehicle_id, t, self.dt, first.v, first.d, n);
        for k in 1..=n {
            out.push(query_estimate(self, t + k as f64 * self.dt)?.v);
        }
        Ok(out)
    }

    fn from_seed(
        vehicle_id: VehicleId,
        origin_time: f64,
        dt: f64,
        v0: f64,
        d0: f64,
        n: usize,
    ) -> Self {
        let mut v_est = Vec::with_capacity(n + 1);
        let mut d_est = Vec::with_capacity(n + 1);
        v_est.push(v0);
        d_est.push(d0);
        Self {
            vehicle_id,
            origin_time,
            dt,
            v_est,
            d_est,
        }
    }

    /// Appends a speed and integrates position from the previous speed.
    fn push(&mut self, v: f64) {
        let k = self.v_est.len() - 1;
        self.d_est.push(self.d_est[k] + self.v_est[k] * self.dt);
        self.v_est.push(v);
    }
}

/// Linearly interpolated horizon sample at `t_query`.
pub fn query_estimate(
    est: &TrajectoryEstimate,
    t_query: f64,
) -> Result<EstimateSample, EstimationError> {
    let end = est.horizon_end();
    let eps = 1e-9 * est.dt.max(1.0);
    if t_query < est.origin_time - eps || t_query > end + eps {
        return Err(EstimationError::HorizonExceeded {
            t: t_query,
            start: est.origin_time,
            end,
        });
    }
    let x = ((t_query - est.origin_time) / est.dt).max(0.0);
    let last = est.v_est.len() - 1;
    let k = (x.floor() as usize).min(last);
    if k == last {
        return Ok(est.sample(last));
    }
    let f = x - k as f64;
    Ok(EstimateSample {
        v: est.v_est[k] + f * (est.v_est[k + 1] - est.v_est[k]),
        d: est.d_est[k] + f * (est.d_est[k + 1] - est.d_est[k]),
    })
}

/// Free-acceleration prediction of a vehicle with no target.
pub fn estimate_leader(
    vehicle_id: VehicleId,
    origin_time: f64,
    v_now: f64,
    d_now: f64,
    cfg: &EstimatorConfig,
) -> TrajectoryEstimate {
    let n = cfg.steps();
    let mut est =
        TrajectoryEstimate::from_seed(vehicle_id, origin_time, cfg.dt_pred, v_now, d_now, n);
    let mut v = v_now;
    for _ in 0..n {
        v = (v + free_flow_accel(v, cfg.v_target, cfg.a_max, cfg.sigma) * cfg.dt_pred).max(0.0);
        est.push(v);
    }
    est
}

/// One received sample with the per-step speed increment that follows it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelaySample {
    pub v: f64,
    pub v_step_delta: f64,
    pub d: f64,
}

/// Advances a sample by the delay `tau`: speed held for short delays and
/// extrapolated by whole-step increments otherwise; position moved by `v_adj·tau`.
pub fn compensate_delay(sample: DelaySample, tau: f64, cfg: &EstimatorConfig) -> EstimateSample {
    let v_adj = if tau < cfg.dt_pred {
        sample.v
    } else {
        (sample.v + (tau / cfg.dt_pred) * sample.v_step_delta).max(0.0)
    };
    EstimateSample {
        v: v_adj,
        d: sample.d + v_adj * tau,
    }
}

/// Re-anchors a received estimate at `origin_time`, `tau` seconds after it was
/// produced. Speeds are compensated per sample and positions re-integrated
/// from the compensated seed.
pub fn compensate_estimate(
    est: &TrajectoryEstimate,
    tau: f64,
    origin_time: f64,
    cfg: &EstimatorConfig,
) -> TrajectoryEstimate {
    let n = est.v_est.len() - 1;
    let delta = |k: usize| {
        if n == 0 {
            0.0
        } else if k < n {
            est.v_est[k + 1] - est.v_est[k]
        } else {
            est.v_est[n] - est.v_est[n - 1]
        }
    };
    let seed = compensate_delay(
        DelaySample {
            v: est.v_est[0],
            v_step_delta: delta(0),
            d: est.d_est[0],
        },
        tau,
        cfg,
    );
    let mut out =
        TrajectoryEstimate::from_seed(est.vehicle_id, origin_time, est.dt, seed.v, seed.d, n);
    for k in 1..=n {
        let s = compensate_delay(
            DelaySample {
                v: est.v_est[k],
                v_step_delta: delta(k),
                d: est.d_est[k],
            },
            tau,
            cfg,
        );
        out.push(s.v);
    }
    out
}

/// One explicit consensus step of a follower against the compensated target sample.
pub fn propagate_follower(
    follower_prev: EstimateSample,
    target_adj: EstimateSample,
    gains: &ControlGains,
    policy: &TimeGapPolicy,
    cfg: &EstimatorConfig,
) -> EstimateSample {
    let bracket = consensus_bracket(
        AxisState {
            s: follower_prev.d,
            v: follower_prev.v,
        },
        AxisState {
            s: target_adj.d,
            v: target_adj.v,
        },
        gains.gamma,
        policy,
    );
    EstimateSample {
        v: (follower_prev.v - gains.k * bracket * cfg.dt_pred).max(0.0),
        d: follower_prev.d + follower_prev.v * cfg.dt_pred,
    }
}

/// Horizon of a follower seeded at `seed` against `target`, which must share
/// its origin and step. With `limits`, each step's implied acceleration is
/// bounded by the actuator limits and the free-flow law as in closed loop.
pub fn estimate_follower(
    vehicle_id: VehicleId,
    seed: EstimateSample,
    target: &TrajectoryEstimate,
    gains: &ControlGains,
    policy: &TimeGapPolicy,
    limits: Option<&AccelLimits>,
    cfg: &EstimatorConfig,
) -> TrajectoryEstimate {
    let n = cfg.steps().min(target.v_est.len() - 1);
    let mut est = TrajectoryEstimate::from_seed(
        vehicle_id,
        target.origin_time,
        cfg.dt_pred,
        seed.v,
        seed.d,
        n,
    );
    let mut cur = seed;
    for k in 0..n {
        let mut next = propagate_follower(cur, target.sample(k), gains, policy, cfg);
        if let Some(lim) = limits {
            let ff = free_flow_accel(cur.v, cfg.v_target, cfg.a_max, cfg.sigma);
            let hi = cur.v + lim.a_max.min(ff).max(lim.a_min) * cfg.dt_pred;
            let lo = cur.v + lim.a_min * cfg.dt_pred;
            next.v = next.v.clamp(lo, hi).max(0.0);
        }
        est.push(next.v);
        cur = EstimateSample {
            v: next.v,
            d: est.d_est[k + 1],
        };
    }
    est
}

/// State of one chain member as known at the estimation instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainMember {
    pub id: VehicleId,
    /// Own current state on the common axis.
    pub state: EstimateSample,
    /// Delay of the latest delivery from the predecessor, s.
    pub tau: f64,
    /// Whether the predecessor's message arrived this step.
    pub delivered: bool,
    /// Time since the last delivery from the predecessor, s.
    pub blackout: f64,
    pub gains: ControlGains,
    pub policy: TimeGapPolicy,
}

/// Estimates along an ordered chain whose first member is the topology leader.
///
/// Followers whose link delivered are re-estimated against the
/// delay-compensated predecessor estimate; the others keep `previous[n]`.
pub fn estimate_chain(
    origin_time: f64,
    members: &[ChainMember],
    previous: Option<&[TrajectoryEstimate]>,
    fail_safe_threshold: f64,
    cfg: &EstimatorConfig,
) -> Result<Vec<TrajectoryEstimate>, EstimationError> {
    let mut out: Vec<TrajectoryEstimate> = Vec::with_capacity(members.len());
    for (n, m) in members.iter().enumerate() {
        if n == 0 {
            out.push(estimate_leader(
                m.id,
                origin_time,
                m.state.v,
                m.state.d,
                cfg,
            ));
            continue;
        }
        if m.blackout > fail_safe_threshold {
            return Err(EstimationError::FailSafe {
                blackout: m.blackout,
            });
        }
        if m.delivered {
            let upstream = compensate_estimate(&out[n - 1], m.tau, origin_time, cfg);
            out.push(estimate_follower(
                m.id, m.state, &upstream, &m.gains, &m.policy, None, cfg,
            ));
        } else {
            let prev = previous
                .and_then(|p| p.get(n))
                .ok_or(EstimationError::NoPrevious(n))?;
            out.push(prev.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ID: VehicleId = VehicleId(1);

    fn cfg(dt: f64) -> EstimatorConfig {
        EstimatorConfig {
            dt_pred: dt,
            v_target: 10.0,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn default_horizon_is_five_seconds() {
        assert_eq!(cfg(0.1).steps(), 50);
        assert_eq!(cfg(1.0).steps(), 5);
        assert_eq!(cfg(0.01).steps(), 500);
        assert!(cfg(0.1).validate(2.0).is_ok());
        let short = EstimatorConfig {
            horizon_n: Some(3),
            ..cfg(0.1)
        };
        assert!(short.validate(2.0).is_err());
    }

    #[test]
    fn rebase_on_grid_drops_leading_samples() {
        let e = estimate_leader(ID, 2.0, 5.0, 0.0, &cfg(0.5));
        let r = e.rebased(3.0).unwrap();
        assert_eq!(r.origin_time, 3.0);
        assert_eq!(r.v_est, e.v_est[2..]);
        assert_eq!(r.d_est, e.d_est[2..]);
        assert_eq!(r.horizon_end(), e.horizon_end());
        assert!(e.rebased(e.horizon_end() + 0.1).is_err());
    }

    #[test]
    fn rebase_off_grid_interpolates() {
        let e = estimate_leader(ID, 0.0, 5.0, 0.0, &cfg(0.5));
        let r = e.rebased(0.25).unwrap();
        let q = query_estimate(&e, 0.25).unwrap();
        assert_eq!((r.v_est[0], r.d_est[0]), (q.v, q.d));
        assert_eq!(r.v_est[1], query_estimate(&e, 0.75).unwrap().v);
        assert!(r.horizon_end() <= e.horizon_end() + 1e-12);
        for k in 0..r.v_est.len() - 1 {
            assert!((r.d_est[k + 1] - r.d_est[k] - r.v_est[k] * 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn leader_at_target_speed_is_constant() {
        let e = estimate_leader(ID, 0.0, 10.0, 5.0, &cfg(0.1));
        assert!(e.v_est.iter().all(|v| *v == 10.0));
        for k in 0..e.d_est.len() {
            assert!((e.d_est[k] - (5.0 + k as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn leader_one_step() {
        let e = estimate_leader(ID, 0.0, 0.0, 0.0, &cfg(0.1));
        assert!((e.v_est[1] - 0.2).abs() < 1e-12);
        let c = EstimatorConfig {
            sigma: 1.0,
            ..cfg(0.1)
        };
        let e = estimate_leader(ID, 0.0, 5.0, 0.0, &c);
        assert!((e.v_est[1] - 5.1).abs() < 1e-12);
    }

    #[test]
    fn compensation_branches() {
        let c = cfg(0.1);
        let s = DelaySample {
            v: 10.0,
            v_step_delta: 0.1,
            d: 3.0,
        };
        let short = compensate_delay(s, 0.04, &c);
        assert_eq!(short.v, 10.0);
        assert!((short.d - 3.4).abs() < 1e-12);
        let long = compensate_delay(s, 0.2, &c);
        assert!((long.v - 10.2).abs() < 1e-12);
        let zero = compensate_delay(s, 0.0, &c);
        assert_eq!((zero.v, zero.d), (10.0, 3.0));
    }

    #[test]
    fn follower_step_cases() {
        let c = cfg(0.1);
        let gains = ControlGains {
            k: 0.1,
            gamma: 2.0,
            alpha: 1,
        };
        let policy = TimeGapPolicy {
            t_gap: 1.0,
            l_target: 5.0,
        };
        let next = propagate_follower(
            EstimateSample { v: 10.0, d: -55.0 },
            EstimateSample { v: 8.0, d: -30.0 },
            &gains,
            &policy,
            &c,
        );
        assert!((next.v - 10.06).abs() < 1e-12);
        assert!((next.d - (-54.0)).abs() < 1e-12);

        let eq = propagate_follower(
            EstimateSample {
                v: 8.0,
                d: -30.0 - 5.0 - 8.0,
            },
            EstimateSample { v: 8.0, d: -30.0 },
            &gains,
            &policy,
            &c,
        );
        assert!((eq.v - 8.0).abs() < 1e-12);

        let stop = propagate_follower(
            EstimateSample { v: 0.01, d: -1.0 },
            EstimateSample { v: 0.0, d: 0.0 },
            &gains,
            &policy,
            &c,
        );
        assert_eq!(stop.v, 0.0);
    }

    #[test]
    fn query_cases() {
        let mut e = TrajectoryEstimate::from_seed(ID, 2.0, 0.1, 10.0, 0.0, 2);
        e.push(11.0);
        e.push(12.0);
        assert_eq!(
            query_estimate(&e, 2.0).unwrap(),
            EstimateSample { v: 10.0, d: 0.0 }
        );
        assert_eq!(query_estimate(&e, 2.1).unwrap().v, 11.0);
        assert!((query_estimate(&e, 2.05).unwrap().v - 10.5).abs() < 1e-12);
        assert!(matches!(
            query_estimate(&e, 2.3),
            Err(EstimationError::HorizonExceeded { .. })
        ));
    }

    fn member(id: u32, v: f64, d: f64, delivered: bool) -> ChainMember {
        ChainMember {
            id: VehicleId(id),
            state: EstimateSample { v, d },
            tau: 0.0,
            delivered,
            blackout: 0.0,
            gains: ControlGains::DEFAULT,
            policy: TimeGapPolicy {
                t_gap: 1.2,
                l_target: 5.0,
            },
        }
    }

    #[test]
    fn chain_of_one_is_leader() {
        let c = cfg(0.1);
        let out = estimate_chain(1.0, &[member(0, 6.0, 0.0, true)], None, 2.0, &c).unwrap();
        assert_eq!(out[0], estimate_leader(VehicleId(0), 1.0, 6.0, 0.0, &c));
    }

    #[test]
    fn chain_of_two_composes() {
        let c = cfg(0.1);
        let m = [member(0, 6.0, 0.0, true), member(1, 6.0, -15.0, true)];
        let out = estimate_chain(0.0, &m, None, 2.0, &c).unwrap();
        let lead = estimate_leader(VehicleId(0), 0.0, 6.0, 0.0, &c);
        let direct = estimate_follower(
            VehicleId(1),
            m[1].state,
            &lead,
            &m[1].gains,
            &m[1].policy,
            None,
            &c,
        );
        assert_eq!(out[1], direct);
    }

    #[test]
    fn lost_link_carries_forward() {
        let c = cfg(0.1);
        let m = [member(0, 6.0, 0.0, true), member(1, 6.0, -15.0, true)];
        let first = estimate_chain(0.0, &m, None, 2.0, &c).unwrap();
        let later = [member(0, 6.5, 0.6, true), member(1, 6.2, -14.4, false)];
        let second = estimate_chain(0.1, &later, Some(&first), 2.0, &c).unwrap();
        assert_eq!(second[1], first[1]);
        let mut dark = later;
        dark[1].blackout = 2.5;
        assert!(matches!(
            estimate_chain(0.2, &dark, Some(&first), 2.0, &c),
            Err(EstimationError::FailSafe { .. })
        ));
    }

    #[test]
    fn leader_matches_truth_on_perfect_channel() {
        // truth: leader driving the free-acceleration law at 0.01 s steps for 30 s
        let c = EstimatorConfig {
            dt_pred: 0.01,
            v_target: 13.4,
            ..EstimatorConfig::default()
        };
        let (mut v, mut d) = (0.0f64, 0.0f64);
        let mut max_err = 0.0f64;
        let mut t = 0.0;
        let mut est = estimate_leader(ID, 0.0, v, d, &c);
        for step in 0..3000 {
            if step % 10 == 0 {
                est = estimate_leader(ID, t, v, d, &c);
            }
            let e = query_estimate(&est, t).unwrap();
            max_err = max_err.max((e.d - d).abs());
            let a = free_flow_accel(v, 13.4, 2.0, 4.0);
            d += v * 0.01;
            v += a * 0.01;
            t = (step + 1) as f64 * 0.01;
        }
        assert!(max_err < 0.05, "{max_err}");
    }

    proptest! {
        #[test]
        fn estimates_consistent(v0 in 0.0f64..15.0, d0 in -100.0f64..100.0, dt in 0.01f64..1.0,
                                fv in 0.0f64..15.0, gap in 5.0f64..60.0) {
            let c = EstimatorConfig { dt_pred: dt, ..EstimatorConfig::default() };
            let lead = estimate_leader(ID, 0.0, v0, d0, &c);
            let fol = estimate_follower(VehicleId(2), EstimateSample { v: fv, d: d0 - gap }, &lead,
                &ControlGains::DEFAULT, &TimeGapPolicy { t_gap: 1.2, l_target: 5.0 }, None, &c);
            for e in [&lead, &fol] {
                prop_assert_eq!(e.v_est.len(), e.d_est.len());
                for k in 1..e.v_est.len() {
                    prop_assert!(e.v_est[k] >= 0.0);
                    prop_assert!((e.d_est[k] - e.d_est[k - 1] - e.v_est[k - 1] * dt).abs() < 1e-12);
                    prop_assert!(e.d_est[k] >= e.d_est[k - 1]);
                }
            }
            let comp = compensate_estimate(&lead, 0.3, 0.3, &c);
            for k in 1..comp.v_est.len() {
                prop_assert!((comp.d_est[k] - comp.d_est[k - 1] - comp.v_est[k - 1] * dt).abs() < 1e-9);
            }
        }
    }
}

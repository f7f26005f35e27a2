//! Fixed-timing signals for the baseline and the stop-at-bar law shared with the all-way stop.

use super::scenario::SignalPlan;
use crate::control::{free_flow_accel, interaction_accel, IdmParams};
use crate::world::Leg;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Green,
    Yellow,
    Red,
}

/// Two-phase cycle per intersection: east-west first, then north-south.
/// Each phase shows green then yellow; the other phase is red meanwhile.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalController {
    plan: SignalPlan,
}

impl SignalController {
    pub fn new(plan: SignalPlan) -> Self {
        Self { plan }
    }

    pub fn cycle(&self) -> f64 {
        2.0 * (self.plan.green + self.plan.yellow)
    }

    pub fn aspect(&self, intersection: usize, leg: Leg, t: f64) -> Aspect {
        let offset = self.plan.offsets.get(intersection).copied().unwrap_or(0.0);
        let half = self.plan.green + self.plan.yellow;
        let phase_t = (t - offset).rem_euclid(self.cycle());
        let ew = matches!(leg, Leg::East | Leg::West);
        let local = if ew { phase_t } else { phase_t - half };
        if !(0.0..half).contains(&local) {
            Aspect::Red
        } else if local < self.plan.green {
            Aspect::Green
        } else {
            Aspect::Yellow
        }
    }
}

/// Distance kept between the virtual standing object and the bar, so that the
/// standstill gap leaves the front just short of the bar.
pub const BAR_SETBACK: f64 = 0.5;

/// Braking toward a standing object at the stop bar `d_bar` metres ahead.
///
/// The interaction term is tightened to a constant-deceleration stop when it
/// alone would overrun the bar. Never negative at rest.
pub fn stop_at_bar_accel(v: f64, d_bar: f64, idm: &IdmParams) -> f64 {
    let gap = d_bar + idm.s0 - BAR_SETBACK;
    let mut a = interaction_accel(v, gap, v, idm);
    let room = d_bar - 0.3;
    if v > 0.0 {
        let needed = v * v / (2.0 * room.max(0.05));
        if needed > idm.b {
            a = a.min(-needed);
        }
    }
    if v <= 0.0 {
        a = a.max(0.0);
    }
    a
}

/// Signal law: free flow on green or past the bar; stop on red, and on yellow
/// when the stop needs no more than the comfortable deceleration.
pub fn signal_stop_accel(v: f64, v_target: f64, d_bar: f64, aspect: Aspect, idm: &IdmParams) -> f64 {
    let free = free_flow_accel(v, v_target, idm.a_max, idm.sigma);
    if d_bar < 0.0 || must_go(v, d_bar, aspect, idm) {
        return free;
    }
    free.min(stop_at_bar_accel(v, d_bar, idm))
}

/// True when the vehicle proceeds through the bar under `aspect`.
pub fn must_go(v: f64, d_bar: f64, aspect: Aspect, idm: &IdmParams) -> bool {
    match aspect {
        Aspect::Green => true,
        Aspect::Red => false,
        Aspect::Yellow => d_bar <= 0.0 || v * v / (2.0 * d_bar) > idm.b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctl() -> SignalController {
        SignalController::new(SignalPlan::default())
    }

    #[test]
    fn phase_timing() {
        let c = ctl();
        assert_eq!(c.cycle(), 66.0);
        assert_eq!(c.aspect(0, Leg::East, 0.0), Aspect::Green);
        assert_eq!(c.aspect(0, Leg::West, 31.0), Aspect::Yellow);
        assert_eq!(c.aspect(0, Leg::East, 33.0), Aspect::Red);
        assert_eq!(c.aspect(0, Leg::North, 0.0), Aspect::Red);
        assert_eq!(c.aspect(0, Leg::South, 33.0), Aspect::Green);
        assert_eq!(c.aspect(0, Leg::South, 64.0), Aspect::Yellow);
        assert_eq!(c.aspect(0, Leg::South, 66.0), Aspect::Red);
    }

    #[test]
    fn every_instant_has_one_green_pair_at_most() {
        let c = ctl();
        for k in 0..660 {
            let t = k as f64 * 0.1;
            let ew = c.aspect(2, Leg::East, t);
            let ns = c.aspect(2, Leg::North, t);
            assert!(ew == Aspect::Red || ns == Aspect::Red, "t={t}");
        }
    }

    #[test]
    fn red_time_is_other_phase() {
        let c = ctl();
        let red = (0..6600)
            .filter(|k| c.aspect(1, Leg::North, *k as f64 * 0.01) == Aspect::Red)
            .count();
        assert_eq!(red, 3300);
    }

    #[test]
    fn green_is_free_flow() {
        let p = IdmParams::default();
        let a = signal_stop_accel(8.0, 13.4, 20.0, Aspect::Green, &p);
        assert_eq!(a, free_flow_accel(8.0, 13.4, p.a_max, p.sigma));
    }

    #[test]
    fn at_rest_at_bar() {
        let p = IdmParams::default();
        assert_eq!(signal_stop_accel(0.0, 13.4, 0.4, Aspect::Red, &p), 0.0);
    }

    /// Closed-loop integration of the stop law from 30 m at 10 m/s.
    #[test]
    fn red_stops_before_bar() {
        let p = IdmParams::default();
        let (mut s, mut v) = (0.0, 10.0);
        let dt = 0.02;
        for _ in 0..2000 {
            let a = signal_stop_accel(v, 13.4, 30.0 - s, Aspect::Red, &p).max(-5.0);
            s += v * dt;
            v = (v + a * dt).max(0.0);
        }
        assert!(v < 0.1);
        assert!(s < 30.0 && s > 28.0, "s={s}");
    }

    #[test]
    fn yellow_decision() {
        let p = IdmParams::default();
        assert!(must_go(13.0, 10.0, Aspect::Yellow, &p));
        assert!(!must_go(13.0, 60.0, Aspect::Yellow, &p));
    }
}

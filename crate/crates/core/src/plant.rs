//! Longitudinal vehicle dynamics with an ideal saturating force actuator and brake.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("engine force and brake torque both nonzero")]
    ModeConflict,
    #[error("time step must be positive")]
    BadStep,
    #[error("invalid plant params: {0}")]
    InvalidParams(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// kg
    pub m: f64,
    /// Effective gear ratio from brake torque to force.
    pub g: f64,
    /// Aerodynamic coefficient, kg/m.
    pub c_v: f64,
    /// Rolling friction coefficient, kg/s.
    pub c_f: f64,
    /// N
    pub f_drag: f64,
    /// N
    pub engine_force_max: f64,
    /// N·m
    pub brake_torque_max: f64,
    /// m
    pub wheel_radius: f64,
    /// m
    pub length: f64,
    /// m
    pub width: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            m: 1500.0,
            g: 10.0,
            c_v: 0.4,
            c_f: 10.0,
            f_drag: 100.0,
            engine_force_max: 6000.0,
            brake_torque_max: 1500.0,
            wheel_radius: 0.3,
            length: 5.0,
            width: 1.8,
        }
    }
}

impl PlantParams {
    pub fn resistance(&self, v: f64) -> f64 {
        self.c_v * v * v + self.c_f * v + self.f_drag
    }

    pub fn validate(&self, v_lim: f64) -> Result<(), PlantError> {
        let all = [
            self.m,
            self.g,
            self.c_v,
            self.c_f,
            self.f_drag,
            self.engine_force_max,
            self.brake_torque_max,
            self.wheel_radius,
            self.length,
            self.width,
        ];
        if !all.iter().all(|x| *x > 0.0 && x.is_finite()) {
            return Err(PlantError::InvalidParams(
                "all plant parameters must be positive",
            ));
        }
        if self.engine_force_max <= self.resistance(v_lim) {
            return Err(PlantError::InvalidParams(
                "engine cannot hold the speed limit",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Front-bumper arc-length along the path, m.
    pub s: f64,
    /// m/s
    pub v: f64,
    /// m/s²
    pub a: f64,
}

/// Net engine force realising `a_ref` with braking off.
pub fn required_net_force(a_ref: f64, v: f64, p: &PlantParams) -> f64 {
    (a_ref * p.m + p.resistance(v)).clamp(0.0, p.engine_force_max)
}

/// Brake torque realising `a_ref` when the resistive forces alone are not enough.
pub fn required_brake_torque(a_ref: f64, v: f64, p: &PlantParams) -> f64 {
    (-(a_ref * p.m + p.resistance(v)) / p.g).clamp(0.0, p.brake_torque_max)
}

/// Actuator commands for `a_ref`; at most one of the pair is nonzero.
pub fn actuate(a_ref: f64, v: f64, p: &PlantParams) -> (f64, f64) {
    if a_ref * p.m + p.resistance(v) >= 0.0 {
        (required_net_force(a_ref, v, p), 0.0)
    } else {
        (0.0, required_brake_torque(a_ref, v, p))
    }
}

/// Explicit Euler step: position advances with the speed at the start of the step.
pub fn step_plant(
    state: PlantState,
    f_net: f64,
    t_br: f64,
    dt: f64,
    p: &PlantParams,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0) {
        return Err(PlantError::BadStep);
    }
    if f_net != 0.0 && t_br != 0.0 {
        return Err(PlantError::ModeConflict);
    }
    let v = state.v;
    if v == 0.0 && f_net <= p.f_drag {
        // static friction holds a vehicle at rest
        return Ok(PlantState { a: 0.0, ..state });
    }
    let a = (f_net - p.g * t_br - p.resistance(v)) / p.m;
    let v_next = (v + a * dt).max(0.0);
    Ok(PlantState {
        s: state.s + v * dt,
        v: v_next,
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn net_force_cases() {
        let mut p = PlantParams::default();
        assert_eq!(required_net_force(1.0, 10.0, &p), 1740.0);
        assert_eq!(required_net_force(10.0, 10.0, &p), p.engine_force_max);
        p.f_drag = 0.0;
        assert_eq!(required_net_force(0.0, 0.0, &p), 0.0);
    }

    #[test]
    fn brake_torque_cases() {
        let p = PlantParams::default();
        assert_eq!(required_brake_torque(-2.0, 10.0, &p), 276.0);
        assert_eq!(required_brake_torque(-0.1, 10.0, &p), 0.0);
        assert_eq!(required_brake_torque(-20.0, 10.0, &p), p.brake_torque_max);
    }

    #[test]
    fn rest_stays_at_rest() {
        let p = PlantParams::default();
        let s = PlantState {
            s: 3.0,
            v: 0.0,
            a: 0.0,
        };
        assert_eq!(step_plant(s, 0.0, 0.0, 0.02, &p).unwrap(), s);
    }

    #[test]
    fn coasting_decelerates() {
        let p = PlantParams::default();
        let next = step_plant(
            PlantState {
                s: 0.0,
                v: 10.0,
                a: 0.0,
            },
            0.0,
            0.0,
            0.1,
            &p,
        )
        .unwrap();
        assert!((next.a + 0.16).abs() < 1e-12);
    }

    #[test]
    fn speed_floored() {
        let p = PlantParams::default();
        let next = step_plant(
            PlantState {
                s: 0.0,
                v: 0.01,
                a: 0.0,
            },
            0.0,
            1500.0,
            0.1,
            &p,
        )
        .unwrap();
        assert_eq!(next.v, 0.0);
    }

    #[test]
    fn mode_conflict() {
        let p = PlantParams::default();
        assert_eq!(
            step_plant(PlantState::default(), 10.0, 10.0, 0.1, &p),
            Err(PlantError::ModeConflict)
        );
    }

    proptest! {
        #[test]
        fn force_round_trip(a_ref in -4.0f64..2.0, v in 0.1f64..20.0) {
            let p = PlantParams::default();
            let (f, t) = actuate(a_ref, v, &p);
            prop_assert!(f == 0.0 || t == 0.0);
            let next = step_plant(PlantState { s: 0.0, v, a: 0.0 }, f, t, 0.02, &p).unwrap();
            let saturated = f >= p.engine_force_max || t >= p.brake_torque_max;
            if !saturated {
                prop_assert!((next.a - a_ref).abs() < 1e-9);
            }
        }

        #[test]
        fn kinetic_energy_non_increasing_without_engine(v in 0.0f64..25.0, t in 0.0f64..1500.0) {
            let p = PlantParams::default();
            let next = step_plant(PlantState { s: 0.0, v, a: 0.0 }, 0.0, t, 0.02, &p).unwrap();
            prop_assert!(next.v <= v);
        }
    }
}

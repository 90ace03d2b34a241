//! Waypoint-to-velocity control: the normalized waypoint is scaled to a
//! per-period displacement, then a two-channel PID maps range and bearing
//! to (v, ω).

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::world::ContinuousAction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kd_v: f64,
    pub kp_w: f64,
    pub ki_w: f64,
    pub kd_w: f64,
    /// Symmetric bound on each integrator.
    pub integral_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        // kp_v converts a per-period displacement (meters per 1/f_c seconds,
        // shrunk by the waypoint normalization) into m/s.
        Self {
            kp_v: 150.0,
            ki_v: 0.0,
            kd_v: 0.05,
            kp_w: 2.0,
            ki_w: 0.0,
            kd_w: 0.1,
            integral_clamp: 1.0,
        }
    }
}

impl PidGains {
    /// Proportional-only gains.
    pub fn proportional(kp_v: f64, kp_w: f64) -> Self {
        Self {
            kp_v,
            ki_v: 0.0,
            kd_v: 0.0,
            kp_w,
            ki_w: 0.0,
            kd_w: 0.0,
            integral_clamp: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub v_max: f64,
    pub omega_max: f64,
    /// Control frequency, Hz.
    pub f_c: f64,
    pub gains: PidGains,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 2.0,
            f_c: 15.0,
            gains: PidGains::default(),
        }
    }
}

impl ControllerConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.f_c
    }

    /// Distance covered in one control period at full speed.
    pub fn step_length(&self) -> f64 {
        self.v_max / self.f_c
    }

    pub fn validate(&self) -> Result<(), String> {
        let g = &self.gains;
        if !(self.v_max > 0.0 && self.omega_max > 0.0 && self.f_c > 0.0) {
            return Err("v_max, omega_max and f_c must be positive".into());
        }
        let all = [g.kp_v, g.ki_v, g.kd_v, g.kp_w, g.ki_w, g.kd_w];
        if all.iter().any(|v| !v.is_finite()) || !(g.integral_clamp > 0.0) {
            return Err("gains must be finite with a positive integrator clamp".into());
        }
        Ok(())
    }
}

/// Integrators and previous errors for both channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral_v: f64,
    pub integral_w: f64,
    pub prev_v: f64,
    pub prev_w: f64,
    /// False until the first step; the derivative term is skipped then.
    pub primed: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}

/// Scales a normalized waypoint by `v_max / f_c`.
pub fn scale_waypoint(wp: Vec2, v_max: f64, f_c: f64) -> Vec2 {
    let k = v_max / f_c;
    Vec2::new(wp.x * k, wp.y * k)
}

/// One PID update on a body-frame displacement.
///
/// The angular channel tracks the bearing `atan2(y, x)`; the linear channel
/// tracks the range, saturated to `[0, v_max]` and then gated by
/// `max(0, cos bearing)` so the vehicle turns before it moves sideways.
pub fn pid_step(disp: Vec2, cfg: &ControllerConfig, state: &mut PidState, dt: f64) -> ContinuousAction {
    let g = &cfg.gains;
    let bearing = disp.y.atan2(disp.x);
    let range = disp.norm();

    let clamp = g.integral_clamp;
    state.integral_v = (state.integral_v + range * dt).clamp(-clamp, clamp);
    state.integral_w = (state.integral_w + bearing * dt).clamp(-clamp, clamp);
    let (dv, dw) = if state.primed {
        ((range - state.prev_v) / dt, (bearing - state.prev_w) / dt)
    } else {
        (0.0, 0.0)
    };
    state.prev_v = range;
    state.prev_w = bearing;
    state.primed = true;

    let omega = g.kp_w * bearing + g.ki_w * state.integral_w + g.kd_w * dw;
    let v = g.kp_v * range + g.ki_v * state.integral_v + g.kd_v * dv;
    ContinuousAction {
        v: v.clamp(0.0, cfg.v_max) * bearing.cos().max(0.0),
        omega: omega.clamp(-cfg.omega_max, cfg.omega_max),
    }
}

//! Agent motion models: a saturated single integrator and a unicycle that
//! tracks the integrator's next waypoint.

use serde::{Deserialize, Serialize};

use crate::coverage::AgentState;
use crate::grid::{MissionGrid, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caps {
    /// Speed limit.
    pub v_max: f64,
    /// Acceleration limit.
    pub accel_max: f64,
}

#[inline]
fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Scales `v` down to at most `limit` in norm.
pub fn saturate(v: Point, limit: f64) -> Point {
    let n = norm(v);
    if n > limit && n > 0.0 {
        [v[0] * limit / n, v[1] * limit / n]
    } else {
        v
    }
}

/// Applies speed and acceleration limits to `u`, moves the agent and clamps it
/// into the mission space. Returns the new state and the applied velocity.
pub fn step_integrator(
    agent: &AgentState,
    u: Point,
    u_prev: Point,
    caps: &Caps,
    dt: f64,
    grid: &MissionGrid,
) -> (AgentState, Point) {
    let u = saturate(u, caps.v_max);
    let du = saturate([u[0] - u_prev[0], u[1] - u_prev[1]], caps.accel_max * dt);
    let applied = [u_prev[0] + du[0], u_prev[1] + du[1]];
    let p = grid.clamp([agent.p[0] + dt * applied[0], agent.p[1] + dt * applied[1]]);
    (AgentState { p, ..*agent }, applied)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnicycleParams {
    pub kp: f64,
    pub kw: f64,
    /// Linear speed limit (m/s).
    pub v_max: f64,
    /// Linear acceleration limit (m/s²).
    pub accel_max: f64,
    /// Control period of the inner loop (s).
    pub dt: f64,
    /// Inner iterations per planning step.
    pub steps: usize,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self { kp: 0.8, kw: 1.0, v_max: 0.15, accel_max: 0.1, dt: 0.1, steps: 80 }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

/// Tracks `target` with the proportional waypoint law for `params.steps`
/// inner iterations. Targets behind the robot are approached in reverse with
/// the rear aligned to the target. `v_prev` is the linear speed carried over
/// from the previous call; the final speed is returned alongside the state.
pub fn step_unicycle(agent: &AgentState, target: Point, params: &UnicycleParams, v_prev: f64) -> (AgentState, f64) {
    let mut p = agent.p;
    let mut theta = agent.theta;
    let mut v_last = v_prev;
    for _ in 0..params.steps {
        let pr = [target[0] - p[0], target[1] - p[1]];
        let dist = norm(pr);
        let (v_cmd, omega) = if dist < 1e-9 {
            (0.0, 0.0)
        } else {
            let heading_err = wrap_angle(pr[1].atan2(pr[0]) - theta);
            let speed = (params.kp * dist).min(params.v_max);
            if heading_err.cos() >= 0.0 {
                (speed, params.kw * heading_err)
            } else {
                (-speed, params.kw * wrap_angle(heading_err - std::f64::consts::PI))
            }
        };
        let dv = (v_cmd - v_last).clamp(-params.accel_max * params.dt, params.accel_max * params.dt);
        let v = v_last + dv;
        p[0] += params.dt * v * theta.cos();
        p[1] += params.dt * v * theta.sin();
        theta = wrap_angle(theta + params.dt * omega);
        v_last = v;
    }
    (AgentState { p, theta, ..*agent }, v_last)
}

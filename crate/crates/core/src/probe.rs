//! The stirring stick: a rigid rod hanging from a moving grip, and the star-shaped
//! grip trajectory it is dragged along.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::geometry::{MovingSegment, Vec2};

/// One cyclic stirring motion: the grip visits `m` points of a circle in
/// star-polygon order at constant speed for `duration` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StirAction {
    pub m: u32,
    pub radius: f64,
    /// Grip speed along the path (m/s). Zero holds the grip still.
    pub cycle_speed: f64,
    /// Duration `T` of the action (s).
    pub duration: f64,
    pub center: Vec2,
    pub sample_rate: f64,
}

impl Default for StirAction {
    fn default() -> Self {
        Self {
            m: 9,
            radius: 0.015,
            cycle_speed: 0.1,
            duration: 4.0,
            center: Vec2::new(0.08, 0.33),
            sample_rate: default_sample_rate(),
        }
    }
}

pub fn default_sample_rate() -> f64 {
    30.0
}

impl StirAction {
    pub fn validate(&self) -> Result<()> {
        if self.m < 5 || self.m.is_multiple_of(2) {
            return Err(Error::config(format!(
                "star needs an odd number of points >= 5, got {}",
                self.m
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::config("star radius must be positive"));
        }
        if !(self.cycle_speed >= 0.0 && self.cycle_speed.is_finite()) {
            return Err(Error::config("cycle speed must be finite and non-negative"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config("stir duration must be positive"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(())
    }

    /// Star vertex indices in visiting order, closing back on vertex 0.
    pub fn visit_order(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let m = self.m as usize;
        let step = m / 2;
        Ok((0..=m).map(|k| (k * step) % m).collect())
    }

    /// Total length of one closed cycle.
    pub fn path_length(&self) -> Result<f64> {
        let pts = star_waypoints(self)?;
        Ok(pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum())
    }

    /// Seconds per cycle, or `None` for a stationary grip.
    pub fn period(&self) -> Result<Option<f64>> {
        let len = self.path_length()?;
        Ok((self.cycle_speed > 0.0).then(|| len / self.cycle_speed))
    }
}

/// Waypoints of the closed star path, first point repeated at the end.
pub fn star_waypoints(action: &StirAction) -> Result<Vec<Vec2>> {
    let order = action.visit_order()?;
    let m = action.m as f64;
    Ok(order
        .into_iter()
        .map(|v| {
            let phi = 2.0 * PI * v as f64 / m;
            action.center + Vec2::new(phi.cos(), phi.sin()) * action.radius
        })
        .collect())
}

/// Grip position and velocity at time `t` in `[0, T]`.
pub fn pivot_at(action: &StirAction, t: f64) -> Result<(Vec2, Vec2)> {
    if !(0.0..=action.duration).contains(&t) {
        return Err(Error::domain(format!(
            "time {t} outside the action span [0, {}]",
            action.duration
        )));
    }
    let pts = star_waypoints(action)?;
    if action.cycle_speed == 0.0 {
        return Ok((pts[0], Vec2::zeros()));
    }
    let lengths: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    let mut s = (t * action.cycle_speed) % total;
    for (k, len) in lengths.iter().enumerate() {
        if s < *len || k == lengths.len() - 1 {
            let dir = (pts[k + 1] - pts[k]) / *len;
            let s = s.min(*len);
            return Ok((pts[k] + dir * s, dir * action.cycle_speed));
        }
        s -= len;
    }
    unreachable!("path has at least one segment")
}

/// Physical properties of the stirring rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StickModel {
    pub length: f64,
    pub mass: f64,
    /// Linear angular damping (N m s).
    pub damping: f64,
}

impl Default for StickModel {
    fn default() -> Self {
        Self {
            length: 0.3,
            mass: 0.05,
            damping: 0.02,
        }
    }
}

impl StickModel {
    /// Moment of inertia of a uniform rod about its end.
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length / 3.0
    }

    /// Small-angle period of the free rod pendulum.
    pub fn small_angle_period(&self, gravity: f64) -> f64 {
        2.0 * PI * (2.0 * self.length / (3.0 * gravity)).sqrt()
    }
}

/// Inclination is signed, measured from the downward vertical; positive swings
/// the tip toward +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StickState {
    pub inclination: f64,
    pub angular_velocity: f64,
    pub pivot: Vec2,
    pub pivot_velocity: Vec2,
    pub length: f64,
    pub submerged_length: f64,
}

impl StickState {
    pub fn hanging(pivot: Vec2, length: f64) -> Self {
        Self {
            inclination: 0.0,
            angular_velocity: 0.0,
            pivot,
            pivot_velocity: Vec2::zeros(),
            length,
            submerged_length: 0.0,
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.inclination.sin(), -self.inclination.cos())
    }

    pub fn tip(&self) -> Vec2 {
        self.pivot + self.direction() * self.length
    }

    /// The rod as a collider segment, pivot first, with endpoint velocities.
    pub fn segment(&self) -> MovingSegment {
        let arm = self.direction() * self.length;
        let tip_velocity = self.pivot_velocity + Vec2::new(-arm.y, arm.x) * self.angular_velocity;
        MovingSegment {
            a: self.pivot,
            b: self.pivot + arm,
            va: self.pivot_velocity,
            vb: tip_velocity,
        }
    }
}

/// One semi-implicit Euler step of the rod, driven by grip acceleration,
/// gravity, the fluid force at the submerged midpoint and linear damping.
pub fn stick_step(
    state: &StickState,
    model: &StickModel,
    gravity: f64,
    pivot_motion: (Vec2, Vec2),
    fluid_force: Vec2,
    dt: f64,
) -> Result<StickState> {
    if !(dt > 0.0) {
        return Err(Error::domain("stick step needs dt > 0"));
    }
    if state.inclination.abs() >= FRAC_PI_2 {
        return Err(Error::Capsize {
            inclination: state.inclination,
        });
    }
    let (pivot, pivot_velocity) = pivot_motion;
    let accel = (pivot_velocity - state.pivot_velocity) / dt;
    let (sin, cos) = state.inclination.sin_cos();
    let half = 0.5 * model.length;

    let inertial = -model.mass * half * ((gravity + accel.y) * sin + accel.x * cos);
    let lever = (state.length - 0.5 * state.submerged_length).max(0.0);
    let fluid = lever * (sin * fluid_force.y + cos * fluid_force.x);
    let damping = -model.damping * state.angular_velocity;
    let alpha = (inertial + fluid + damping) / model.inertia();

    let angular_velocity = state.angular_velocity + alpha * dt;
    let inclination = state.inclination + angular_velocity * dt;
    if !inclination.is_finite() || inclination.abs() >= FRAC_PI_2 {
        return Err(Error::Capsize { inclination });
    }
    Ok(StickState {
        inclination,
        angular_velocity,
        pivot,
        pivot_velocity,
        length: state.length,
        submerged_length: state.submerged_length,
    })
}

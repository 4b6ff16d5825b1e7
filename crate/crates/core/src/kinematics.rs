//! Kinematic rollout over (acceleration, yaw rate) controls.
//!
//! With yaw rate as the steering input the bicycle model collapses to the
//! unicycle update, integrated with explicit Euler at the data rate:
//!
//! ```text
//! x' = x + v cos(psi) dt    y' = y + v sin(psi) dt
//! psi' = psi + yaw_rate dt  v' = max(0, v + accel dt)
//! ```
//!
//! [`rollout_vjp`] is the matching reverse-mode pass used for gradients of
//! trajectory costs with respect to the controls.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
    pub speed: T,
}

impl<T: Scalar> State<T> {
    pub fn new(x: T, y: T, heading: T, speed: T) -> Self {
        Self {
            x,
            y,
            heading,
            speed,
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    #[inline]
    pub fn velocity(&self) -> Vec2<T> {
        Vec2::from_angle(self.heading) * self.speed
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
    }

    #[inline]
    pub fn step(&self, u: Control<T>, dt: T) -> Self {
        let (s, c) = self.heading.sin_cos();
        Self {
            x: self.x + self.speed * c * dt,
            y: self.y + self.speed * s * dt,
            heading: self.heading + u.yaw_rate * dt,
            speed: (self.speed + u.accel * dt).max(T::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control<T> {
    pub accel: T,
    pub yaw_rate: T,
}

impl<T: Scalar> Control<T> {
    pub fn new(accel: T, yaw_rate: T) -> Self {
        Self { accel, yaw_rate }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits<T> {
    pub accel_max: T,
    pub yaw_rate_max: T,
}

impl<T: Scalar> Default for ControlLimits<T> {
    fn default() -> Self {
        Self {
            accel_max: T::of(6.0),
            yaw_rate_max: T::of(1.0),
        }
    }
}

impl<T: Scalar> ControlLimits<T> {
    pub fn clamp(&self, u: Control<T>) -> Control<T> {
        Control {
            accel: u.accel.max(-self.accel_max).min(self.accel_max),
            yaw_rate: u.yaw_rate.max(-self.yaw_rate_max).min(self.yaw_rate_max),
        }
    }

    pub fn admits(&self, u: Control<T>) -> bool {
        u.accel.abs() <= self.accel_max && u.yaw_rate.abs() <= self.yaw_rate_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence<T> {
    pub controls: Vec<Control<T>>,
    pub dt: T,
}

impl<T: Scalar> ControlSequence<T> {
    pub fn new(controls: Vec<Control<T>>, dt: T) -> Self {
        Self { controls, dt }
    }

    pub fn zeros(steps: usize, dt: T) -> Self {
        Self::new(vec![Control::zero(); steps], dt)
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn clamped(&self, limits: &ControlLimits<T>) -> Self {
        Self::new(
            self.controls.iter().map(|u| limits.clamp(*u)).collect(),
            self.dt,
        )
    }

    /// Max absolute control coordinate.
    pub fn max_abs(&self) -> T {
        self.controls
            .iter()
            .fold(T::zero(), |m, u| m.max(u.accel.abs()).max(u.yaw_rate.abs()))
    }

    /// Flatten to `[a0, w0, a1, w1, ...]`.
    pub fn to_flat(&self) -> Vec<T> {
        self.controls
            .iter()
            .flat_map(|u| [u.accel, u.yaw_rate])
            .collect()
    }

    pub fn from_flat(flat: &[T], dt: T) -> Self {
        Self::new(
            flat.chunks_exact(2)
                .map(|c| Control::new(c[0], c[1]))
                .collect(),
            dt,
        )
    }
}

/// States of one agent on a uniform time grid, tagged with agent and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub agent_id: String,
    pub mode_id: usize,
    pub dt: T,
    pub states: Vec<State<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn positions(&self) -> impl Iterator<Item = Vec2<T>> + '_ {
        self.states.iter().map(State::position)
    }

    pub fn final_state(&self) -> &State<T> {
        self.states.last().expect("trajectory has states")
    }

    pub fn tagged(mut self, agent_id: impl Into<String>, mode_id: usize) -> Self {
        self.agent_id = agent_id.into();
        self.mode_id = mode_id;
        self
    }
}

/// Integrate `controls` from `init`; returns `controls.len() + 1` states.
pub fn rollout_states<T: Scalar>(init: State<T>, controls: &[Control<T>], dt: T) -> Vec<State<T>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut s = init;
    states.push(s);
    for u in controls {
        s = s.step(*u, dt);
        states.push(s);
    }
    states
}

pub fn rollout<T: Scalar>(init: State<T>, controls: &ControlSequence<T>) -> Trajectory<T> {
    Trajectory {
        agent_id: String::new(),
        mode_id: 0,
        dt: controls.dt,
        states: rollout_states(init, &controls.controls, controls.dt),
    }
}

/// Reverse-mode pass through [`rollout_states`]. `state_grads[t]` is the
/// gradient of a scalar cost with respect to `states[t]`; returns the gradient
/// with respect to each control.
pub fn rollout_vjp<T: Scalar>(
    states: &[State<T>],
    controls: &[Control<T>],
    dt: T,
    state_grads: &[State<T>],
) -> Vec<Control<T>> {
    let n = controls.len();
    assert_eq!(states.len(), n + 1);
    assert_eq!(state_grads.len(), n + 1);
    let mut out = vec![Control::zero(); n];
    let mut adj = state_grads[n];
    for t in (0..n).rev() {
        let s = states[t];
        let u = controls[t];
        let active = s.speed + u.accel * dt > T::zero();
        let gate = if active { T::one() } else { T::zero() };
        out[t] = Control::new(adj.speed * dt * gate, adj.heading * dt);
        let (sn, cs) = s.heading.sin_cos();
        let g = state_grads[t];
        adj = State {
            x: g.x + adj.x,
            y: g.y + adj.y,
            heading: g.heading + adj.heading + (adj.y * cs - adj.x * sn) * s.speed * dt,
            speed: g.speed + (adj.x * cs + adj.y * sn) * dt + adj.speed * gate,
        };
    }
    out
}

//! Trajectory knots shared by the search, optimizer, follower and file I/O.

use crate::kinematics::{self, WheelLayout};
use crate::world::Limits;
use crate::{BodyControl, BodyState};
use std::collections::HashMap;

/// One trajectory sample.
///
/// `dt` is the duration of the step leaving this knot (zero on the last
/// knot), `control` the body acceleration held over that step. Wheel fields
/// run parallel to the layout's wheel list: `steer` is the body-frame
/// steering angle after rolling-direction resolution and `speed` the signed
/// rolling speed (`flags[i] = -1` rolls backward at negated speed).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryKnot {
    pub state: BodyState,
    pub control: BodyControl,
    pub dt: f64,
    /// Maneuver phase id; increments when any wheel's rolling direction flips.
    pub phase: u32,
    /// Phase-boundary knot: the body must be at translational rest here.
    pub keyframe: bool,
    pub flags: Vec<i8>,
    pub steer: Vec<f64>,
    pub speed: Vec<f64>,
}

impl TrajectoryKnot {
    pub fn resting(state: BodyState, wheel_count: usize) -> TrajectoryKnot {
        TrajectoryKnot {
            state,
            control: BodyControl::default(),
            dt: 0.0,
            phase: 0,
            keyframe: true,
            flags: vec![1; wheel_count],
            steer: vec![0.0; wheel_count],
            speed: vec![0.0; wheel_count],
        }
    }
}

/// Cumulative start times of each knot (same length as `knots`).
pub fn knot_times(knots: &[TrajectoryKnot]) -> Vec<f64> {
    let mut t = 0.0;
    knots
        .iter()
        .map(|k| {
            let now = t;
            t += k.dt;
            now
        })
        .collect()
}

pub fn total_time(knots: &[TrajectoryKnot]) -> f64 {
    knots.iter().map(|k| k.dt).sum()
}

/// Recompute per-wheel steering and signed speed from the body states.
///
/// Wheels below the steering-definition threshold hold the previous knot's
/// steering (neutral zero before any is defined) at zero speed.
pub fn refresh_wheel_states(knots: &mut [TrajectoryKnot], layout: &WheelLayout) {
    let w = layout.wheel_count();
    let mut held = vec![0.0f64; w];
    for knot in knots.iter_mut() {
        knot.steer.resize(w, 0.0);
        knot.speed.resize(w, 0.0);
        for i in 0..w {
            let m = kinematics::wheel_velocity(&knot.state, layout.wheels[i]);
            if m.steer_defined {
                let flag = *knot.flags.get(i).unwrap_or(&1);
                let (steer, speed) = kinematics::directed(m.steer_body, m.speed, flag);
                knot.steer[i] = steer;
                knot.speed[i] = speed;
                held[i] = steer;
            } else {
                knot.steer[i] = held[i];
                knot.speed[i] = 0.0;
            }
        }
    }
}

/// Mark phase-boundary knots (and the trajectory endpoints) as keyframes.
///
/// A knot's `phase` belongs to the step arriving at it, and the step leaving
/// knot `i` carries knot `i + 1`'s phase, so a rolling-direction flip
/// happens exactly at the knot whose successor differs.
pub fn mark_keyframes(knots: &mut [TrajectoryKnot]) {
    let n = knots.len();
    for i in 0..n {
        let next = if i + 1 < n { knots[i + 1].phase } else { knots[i].phase };
        knots[i].keyframe = i == 0 || i + 1 == n || knots[i].phase != next;
    }
}

/// Interior knots where the rolling direction flips: the body must be at
/// translational rest there for the flip to be physical.
pub fn transition_keyframes(knots: &[TrajectoryKnot]) -> Vec<usize> {
    let n = knots.len();
    (1..n.saturating_sub(1)).filter(|&i| knots[i + 1].phase != knots[i].phase).collect()
}

/// Time needed to cover `d` from rest to rest under speed cap `v` and
/// acceleration cap `a` (trapezoidal, or triangular when `d` is short).
fn ramp_time(d: f64, v: f64, a: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if d * a <= v * v {
        2.0 * (d / a).sqrt()
    } else {
        d / v + v / a
    }
}

/// Subdivide every step into at least two pieces of at most `dt_max`
/// (and at least `dt_min` where the duration allows it) ready for
/// refinement with bounded step lengths.
///
/// The search chains constant twists with instantaneous velocity jumps, so
/// its timing is unreachable under the acceleration box: each phase must
/// ramp from rest and back. Steps are therefore first dilated per phase so
/// the segment's total duration covers a trapezoidal-profile lower bound
/// (velocities slow down by the same factor), then split along the exact
/// constant-twist motion between their endpoints, so inserted states lie on
/// the original path. Controls are re-derived by finite differences and
/// wheel states are refreshed.
pub fn densify(
    knots: &[TrajectoryKnot],
    layout: &WheelLayout,
    limits: &Limits,
) -> Vec<TrajectoryKnot> {
    // Path length, heading change and duration per phase segment.
    let mut seg: HashMap<u32, [f64; 3]> = HashMap::new();
    for i in 0..knots.len().saturating_sub(1) {
        if knots[i].dt <= 0.0 {
            continue;
        }
        let (a, b) = (knots[i].state, knots[i + 1].state);
        let chord = (b.x - a.x).hypot(b.y - a.y);
        let turn = (b.theta - a.theta).abs();
        // Exact chord-to-arc factor for a circular arc.
        let half = 0.5 * turn;
        let arc = if half > 1e-9 { chord * half / half.sin() } else { chord };
        let e = seg.entry(knots[i + 1].phase).or_insert([0.0; 3]);
        e[0] += arc;
        e[1] += turn;
        e[2] += knots[i].dt;
    }
    let a_xy = limits.accel_max[0].min(limits.accel_max[1]);
    let gamma_of = |phase: u32| -> f64 {
        let Some([dist, turn, dur]) = seg.get(&phase) else { return 1.0 };
        let need = ramp_time(*dist, limits.v_max, a_xy)
            .max(ramp_time(*turn, limits.yaw_rate_max, limits.accel_max[2]));
        // Headroom for motions that translate and rotate at once.
        (1.4 * need / dur).max(1.0)
    };

    let mut scaled = knots.to_vec();
    for i in 0..scaled.len() {
        // A knot's velocity belongs to the step arriving at it; the start
        // stays exact.
        let g = gamma_of(scaled[i].phase);
        if i > 0 && g > 1.0 {
            scaled[i].state.vx /= g;
            scaled[i].state.vy /= g;
            scaled[i].state.omega /= g;
        }
        if i + 1 < scaled.len() {
            scaled[i].dt = knots[i].dt * gamma_of(knots[i + 1].phase);
        }
    }

    let (dt_min, dt_max) = (limits.dt_min, limits.dt_max);
    let mut out: Vec<TrajectoryKnot> = Vec::with_capacity(scaled.len() * 2);
    for i in 0..scaled.len() {
        let k = &scaled[i];
        if i + 1 >= scaled.len() || k.dt <= 0.0 {
            out.push(k.clone());
            continue;
        }
        let next = &scaled[i + 1];
        let dur = k.dt;
        let mut n = ((dur / dt_max).ceil() as usize).max(2);
        n = n.min(((dur / dt_min).floor() as usize).max(2));
        let mut head = k.clone();
        head.dt = dur / n as f64;
        out.push(head);
        // Reconstruct the constant-twist motion joining the two poses.
        let p0 = k.state.pose();
        let p1 = next.state.pose();
        let dtheta = p1[2] - p0[2];
        let rot0 = kinematics::rotation(p0[2]);
        let d_world = [p1[0] - p0[0], p1[1] - p0[1]];
        let d_body = kinematics::mat_vec(kinematics::mat_t(rot0), d_world);
        let omega = next.state.omega;
        let arc = omega.abs() >= kinematics::OMEGA_SINGULAR && dtheta.abs() > 1e-9;
        // For arcs, solve (R(dtheta) - I) r = d for the radius vector.
        let r = if arc {
            let (s, c) = dtheta.sin_cos();
            let det = 2.0 * (1.0 - c);
            [
                ((c - 1.0) * d_body[0] + s * d_body[1]) / det,
                (-s * d_body[0] + (c - 1.0) * d_body[1]) / det,
            ]
        } else {
            [0.0, 0.0]
        };
        for j in 1..n {
            let tau = j as f64 / n as f64;
            let state = if arc {
                let a = dtheta * tau;
                let rot_a = kinematics::rotation(a);
                let moved = kinematics::mat_vec(rot_a, r);
                let dj = [moved[0] - r[0], moved[1] - r[1]];
                let w = kinematics::mat_vec(rot0, dj);
                let theta = p0[2] + a;
                let v = kinematics::body_velocity_from_icm(r, omega, theta);
                BodyState::new(p0[0] + w[0], p0[1] + w[1], theta, v[0], v[1], omega)
            } else {
                BodyState::new(
                    p0[0] + d_world[0] * tau,
                    p0[1] + d_world[1] * tau,
                    p0[2] + dtheta * tau,
                    d_world[0] / dur,
                    d_world[1] / dur,
                    omega,
                )
            };
            out.push(TrajectoryKnot {
                state,
                control: BodyControl::default(),
                dt: dur / n as f64,
                phase: next.phase,
                keyframe: false,
                flags: next.flags.clone(),
                steer: Vec::new(),
                speed: Vec::new(),
            });
        }
    }
    for i in 0..out.len().saturating_sub(1) {
        let dt = out[i].dt.max(1e-9);
        let (a, b) = (out[i].state, out[i + 1].state);
        out[i].control =
            BodyControl::new((b.vx - a.vx) / dt, (b.vy - a.vy) / dt, (b.omega - a.omega) / dt);
    }
    if let Some(last) = out.last_mut() {
        last.control = BodyControl::default();
    }
    refresh_wheel_states(&mut out, layout);
    mark_keyframes(&mut out);
    out
}

//! Trajectory rollout under wheel actuation limits, plus quality metrics.
//!
//! The follower replays a trajectory at a fixed sample period. At every tick
//! it reads the commanded body state off the knot sequence, converts it to
//! per-wheel steering and rolling-speed commands, and moves the achieved
//! wheel states toward those commands under steering-rate and
//! wheel-acceleration clamps. The achieved body motion is whatever
//! least-squares rigid twist best explains the achieved wheel velocities,
//! integrated exactly. Feasible trajectories therefore track perfectly;
//! infeasible ones expose their slip through the metrics rather than through
//! a physics engine.

use crate::kinematics::{self, rotation, wrap_angle, WheelLayout};
use crate::trajectory::{self, TrajectoryKnot};
use crate::BodyState;

/// Per-wheel caps the follower enforces between ticks.
#[derive(Clone, Debug)]
pub struct ActuationLimits {
    /// Max steering-angle rate per wheel, rad/s.
    pub steer_rate: Vec<f64>,
    /// Max rolling-speed change rate per wheel, m/s^2.
    pub accel: Vec<f64>,
}

impl ActuationLimits {
    /// The caps the layout itself declares.
    pub fn from_layout(layout: &WheelLayout) -> ActuationLimits {
        ActuationLimits {
            steer_rate: layout.steer_rate_cap.clone(),
            accel: layout.accel_cap.clone(),
        }
    }
}

/// One follower sample.
#[derive(Clone, Debug)]
pub struct FollowTick {
    pub time: f64,
    /// Body state the trajectory commands at this time.
    pub commanded: BodyState,
    /// Body state reconstructed from the achieved wheel velocities.
    pub achieved: BodyState,
    pub cmd_steer: Vec<f64>,
    pub cmd_speed: Vec<f64>,
    pub ach_steer: Vec<f64>,
    pub ach_speed: Vec<f64>,
}

/// Uniformly sampled follower run.
#[derive(Clone, Debug, Default)]
pub struct FollowRecord {
    /// Actual sample period used (at most the requested one).
    pub period: f64,
    pub ticks: Vec<FollowTick>,
}

/// Slide-ratio series, one entry per tick, max over wheels.
///
/// `literal` is the rolling-aligned speed component
/// `max_w(v_w cos(delta_real - delta_ref))`; under perfect tracking it
/// equals the wheel speed, not zero. `lateral` is the cross component
/// `max_w |v_w sin(delta_real - delta_ref)|`, which vanishes exactly when
/// the wheels agree on a rigid motion. Both are reported because the two
/// answer different questions about the same misalignment.
#[derive(Clone, Debug, Default)]
pub struct SlideSeries {
    pub literal: Vec<f64>,
    pub lateral: Vec<f64>,
}

/// Mean and population standard deviation of a series.
#[derive(Clone, Copy, Debug, Default)]
pub struct SlideStats {
    pub mean: f64,
    pub std: f64,
}

/// Aggregate rollout quality. Velocity, acceleration and jerk triples are
/// body-frame `[longitudinal, lateral, yaw]` means of absolute values,
/// finite-differenced at the sample period.
#[derive(Clone, Copy, Debug, Default)]
pub struct Metrics {
    pub mean_position_error: f64,
    pub mean_heading_error: f64,
    pub slide_literal: SlideStats,
    pub slide_lateral: SlideStats,
    pub mean_velocity: [f64; 3],
    pub mean_accel: [f64; 3],
    pub mean_jerk: [f64; 3],
}

/// Commanded body state at time `t` along the knot sequence: the knot's
/// constant acceleration integrated over the elapsed fraction of its step.
fn command_at(knots: &[TrajectoryKnot], times: &[f64], t: f64) -> (BodyState, usize) {
    let n = knots.len();
    let mut s = match times[..n - 1].binary_search_by(|v| v.total_cmp(&t)) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    // Skip zero-length steps so tau stays within a real step.
    while s + 1 < n - 1 && t >= times[s + 1] {
        s += 1;
    }
    let k = &knots[s];
    let tau = (t - times[s]).clamp(0.0, k.dt);
    let st = k.state;
    let u = k.control;
    let cmd = BodyState::new(
        st.x + st.vx * tau + 0.5 * u.ax * tau * tau,
        st.y + st.vy * tau + 0.5 * u.ay * tau * tau,
        st.theta + st.omega * tau + 0.5 * u.alpha * tau * tau,
        st.vx + u.ax * tau,
        st.vy + u.ay * tau,
        st.omega + u.alpha * tau,
    );
    (cmd, s)
}

/// Least-squares rigid twist `(vx, vy, omega)` in the body frame explaining
/// the body-frame wheel velocities `u` at mount points `w`.
fn rigid_fit(w: &[[f64; 2]], u: &[[f64; 2]]) -> [f64; 3] {
    let n = w.len() as f64;
    let (mut sx, mut sy, mut q) = (0.0, 0.0, 0.0);
    let (mut bx, mut by, mut bw) = (0.0, 0.0, 0.0);
    for (wi, ui) in w.iter().zip(u) {
        sx += wi[0];
        sy += wi[1];
        q += wi[0] * wi[0] + wi[1] * wi[1];
        bx += ui[0];
        by += ui[1];
        bw += wi[0] * ui[1] - wi[1] * ui[0];
    }
    // Normal equations of u_i = v + omega * perp(w_i).
    let a = [[n, 0.0, -sy], [0.0, n, sx], [-sy, sx, q]];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-12 {
        return [bx / n.max(1.0), by / n.max(1.0), 0.0];
    }
    let b = [bx, by, bw];
    let mut x = [0.0; 3];
    for c in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        let dc = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        x[c] = dc / det;
    }
    x
}

/// Advance a pose by a constant body-frame twist held for `h` seconds.
fn advance_pose(pose: [f64; 3], vb: [f64; 2], omega: f64, h: f64) -> [f64; 3] {
    let dth = omega * h;
    let (dx, dy) = if dth.abs() > 1e-9 {
        let (s, c) = dth.sin_cos();
        ((s * vb[0] - (1.0 - c) * vb[1]) / omega, ((1.0 - c) * vb[0] + s * vb[1]) / omega)
    } else {
        (vb[0] * h, vb[1] * h)
    };
    let r = rotation(pose[2]);
    [
        pose[0] + r[0][0] * dx + r[0][1] * dy,
        pose[1] + r[1][0] * dx + r[1][1] * dy,
        pose[2] + dth,
    ]
}

/// Replay a trajectory through the rate-limited follower.
///
/// The effective period divides the total duration exactly and never
/// exceeds half the shortest step, so every knot is bracketed by samples.
/// A trajectory without a positive-duration step yields an empty record.
pub fn rollout(
    knots: &[TrajectoryKnot],
    layout: &WheelLayout,
    limits: &ActuationLimits,
    period: f64,
) -> FollowRecord {
    let total = trajectory::total_time(knots);
    if knots.len() < 2 || total <= 0.0 {
        return FollowRecord { period, ticks: Vec::new() };
    }
    let min_dt = knots[..knots.len() - 1]
        .iter()
        .filter(|k| k.dt > 0.0)
        .fold(f64::INFINITY, |a, k| a.min(k.dt));
    let h_req = period.min(0.5 * min_dt);
    let m = (total / h_req).ceil().max(1.0) as usize;
    let h = total / m as f64;
    let times = trajectory::knot_times(knots);
    let nw = layout.wheel_count();

    let mut ticks = Vec::with_capacity(m + 1);
    // Commanded steering holds its last defined value through rest.
    let mut held_cmd = knots[0].steer.clone();
    held_cmd.resize(nw, 0.0);
    let mut ach_steer = vec![0.0; nw];
    let mut ach_speed = vec![0.0; nw];
    let mut pose = [0.0; 3];

    for i in 0..=m {
        let t = h * i as f64;
        let (cmd, step) = command_at(knots, &times, t);
        let flags = &knots[(step + 1).min(knots.len() - 1)].flags;
        let mut cmd_steer = vec![0.0; nw];
        let mut cmd_speed = vec![0.0; nw];
        for wi in 0..nw {
            let m = kinematics::wheel_velocity(&cmd, layout.wheels[wi]);
            if m.steer_defined {
                let flag = *flags.get(wi).unwrap_or(&1);
                let (steer, speed) = kinematics::directed(m.steer_body, m.speed, flag);
                cmd_steer[wi] = steer;
                cmd_speed[wi] = speed;
                held_cmd[wi] = steer;
            } else {
                cmd_steer[wi] = held_cmd[wi];
                cmd_speed[wi] = 0.0;
            }
        }

        if i == 0 {
            pose = cmd.pose();
            ach_steer.copy_from_slice(&cmd_steer);
            ach_speed.copy_from_slice(&cmd_speed);
        } else {
            for wi in 0..nw {
                let dsteer = wrap_angle(cmd_steer[wi] - ach_steer[wi]);
                let cap = limits.steer_rate[wi] * h;
                ach_steer[wi] = wrap_angle(ach_steer[wi] + dsteer.clamp(-cap, cap));
                let dspeed = cmd_speed[wi] - ach_speed[wi];
                let cap = limits.accel[wi] * h;
                ach_speed[wi] += dspeed.clamp(-cap, cap);
            }
        }

        let u: Vec<[f64; 2]> = (0..nw)
            .map(|wi| {
                let (s, c) = ach_steer[wi].sin_cos();
                [ach_speed[wi] * c, ach_speed[wi] * s]
            })
            .collect();
        let [vbx, vby, om] = rigid_fit(&layout.wheels, &u);
        if i > 0 {
            pose = advance_pose(pose, [vbx, vby], om, h);
        }
        let r = rotation(pose[2]);
        let achieved = BodyState::new(
            pose[0],
            pose[1],
            pose[2],
            r[0][0] * vbx + r[0][1] * vby,
            r[1][0] * vbx + r[1][1] * vby,
            om,
        );
        ticks.push(FollowTick {
            time: t,
            commanded: cmd,
            achieved,
            cmd_steer: cmd_steer.clone(),
            cmd_speed: cmd_speed.clone(),
            ach_steer: ach_steer.clone(),
            ach_speed: ach_speed.clone(),
        });
    }
    FollowRecord { period: h, ticks }
}

/// Per-tick slide ratios of a rollout.
///
/// The reference direction for each wheel is the velocity the achieved body
/// twist implies at its mount point; the ratio compares the achieved wheel
/// velocity against it. Wheels whose reference motion is negligible
/// contribute their full achieved speed as lateral slide.
pub fn slide_ratio(record: &FollowRecord, layout: &WheelLayout) -> SlideSeries {
    let nw = layout.wheel_count();
    let mut out = SlideSeries {
        literal: Vec::with_capacity(record.ticks.len()),
        lateral: Vec::with_capacity(record.ticks.len()),
    };
    for tick in &record.ticks {
        let st = &tick.achieved;
        let rt = rotation(st.theta);
        let vb = [
            rt[0][0] * st.vx + rt[1][0] * st.vy,
            rt[0][1] * st.vx + rt[1][1] * st.vy,
        ];
        let mut lit = 0.0f64;
        let mut lat = 0.0f64;
        for wi in 0..nw {
            let w = layout.wheels[wi];
            let vref = [vb[0] - st.omega * w[1], vb[1] + st.omega * w[0]];
            let (s, c) = tick.ach_steer[wi].sin_cos();
            let u = [tick.ach_speed[wi] * c, tick.ach_speed[wi] * s];
            let nref = (vref[0] * vref[0] + vref[1] * vref[1]).sqrt();
            if nref > 1e-9 {
                lit = lit.max((u[0] * vref[0] + u[1] * vref[1]) / nref);
                lat = lat.max((u[0] * vref[1] - u[1] * vref[0]).abs() / nref);
            } else {
                lat = lat.max((u[0] * u[0] + u[1] * u[1]).sqrt());
            }
        }
        out.literal.push(lit);
        out.lateral.push(lat);
    }
    out
}

fn stats(series: &[f64]) -> SlideStats {
    if series.is_empty() {
        return SlideStats::default();
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SlideStats { mean, std: var.max(0.0).sqrt() }
}

fn mean_abs_triples(series: &[[f64; 3]]) -> [f64; 3] {
    if series.is_empty() {
        return [0.0; 3];
    }
    let n = series.len() as f64;
    let mut acc = [0.0; 3];
    for v in series {
        for c in 0..3 {
            acc[c] += v[c].abs();
        }
    }
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// Summarize a rollout against the trajectory it followed.
///
/// The reference path is sampled at the record's tick times; position and
/// heading errors are measured at the sample nearest each achieved pose,
/// so a perfectly tracked run scores zero. Smoothness statistics
/// finite-difference the achieved body-frame velocities at the sample
/// period.
pub fn metrics(
    record: &FollowRecord,
    reference: &[TrajectoryKnot],
    layout: &WheelLayout,
) -> Metrics {
    let mut out = Metrics::default();
    if record.ticks.is_empty() || reference.is_empty() {
        return out;
    }
    let times = trajectory::knot_times(reference);
    let ref_poses: Vec<[f64; 3]> = if reference.len() < 2 {
        vec![reference[0].state.pose()]
    } else {
        record
            .ticks
            .iter()
            .map(|tick| command_at(reference, &times, tick.time).0.pose())
            .collect()
    };
    let n = record.ticks.len() as f64;
    let mut dsum = 0.0;
    let mut hsum = 0.0;
    for tick in &record.ticks {
        let st = &tick.achieved;
        let mut best = f64::INFINITY;
        let mut best_dh = 0.0;
        for p in &ref_poses {
            let d = (st.x - p[0]).hypot(st.y - p[1]);
            if d < best {
                best = d;
                best_dh = wrap_angle(st.theta - p[2]).abs();
            }
        }
        dsum += best;
        hsum += best_dh;
    }
    out.mean_position_error = dsum / n;
    out.mean_heading_error = hsum / n;

    let slide = slide_ratio(record, layout);
    out.slide_literal = stats(&slide.literal);
    out.slide_lateral = stats(&slide.lateral);

    let vel: Vec<[f64; 3]> = record
        .ticks
        .iter()
        .map(|tick| {
            let st = &tick.achieved;
            let rt = rotation(st.theta);
            [
                rt[0][0] * st.vx + rt[1][0] * st.vy,
                rt[0][1] * st.vx + rt[1][1] * st.vy,
                st.omega,
            ]
        })
        .collect();
    let h = record.period;
    let diff = |s: &[[f64; 3]]| -> Vec<[f64; 3]> {
        s.windows(2)
            .map(|w| [(w[1][0] - w[0][0]) / h, (w[1][1] - w[0][1]) / h, (w[1][2] - w[0][2]) / h])
            .collect()
    };
    let acc = diff(&vel);
    let jerk = diff(&acc);
    out.mean_velocity = mean_abs_triples(&vel);
    out.mean_accel = mean_abs_triples(&acc);
    out.mean_jerk = mean_abs_triples(&jerk);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::refresh_wheel_states;
    use crate::BodyControl;
    use proptest::prelude::*;

    fn layout() -> WheelLayout {
        let lim = std::f64::consts::FRAC_PI_2;
        WheelLayout::uniform(
            vec![[0.3, 0.25], [0.3, -0.25], [-0.3, 0.25], [-0.3, -0.25]],
            -lim,
            lim,
            2.0,
            2.0,
            1.0,
        )
    }

    /// Constant-velocity straight run: every limit has margin.
    fn straight_knots(layout: &WheelLayout, steps: usize, v: f64, dt: f64) -> Vec<TrajectoryKnot> {
        let mut knots: Vec<TrajectoryKnot> = (0..=steps)
            .map(|i| {
                let t = i as f64 * dt;
                let mut k = TrajectoryKnot::resting(
                    BodyState::new(v * t, 0.0, 0.0, v, 0.0, 0.0),
                    layout.wheel_count(),
                );
                k.dt = if i < steps { dt } else { 0.0 };
                k.control = BodyControl::default();
                k
            })
            .collect();
        refresh_wheel_states(&mut knots, layout);
        knots
    }

    /// Two straight phases joined by an instantaneous 90 degree steer step:
    /// x-translation for one second, then y-translation for `dt2` seconds.
    fn elbow_knots(layout: &WheelLayout, v: f64, dt2: f64) -> Vec<TrajectoryKnot> {
        let states = [
            BodyState::new(0.0, 0.0, 0.0, v, 0.0, 0.0),
            BodyState::new(v, 0.0, 0.0, 0.0, v, 0.0),
            BodyState::new(v, v * dt2, 0.0, 0.0, v, 0.0),
        ];
        let durations = [1.0, dt2, 0.0];
        let mut knots: Vec<TrajectoryKnot> = states
            .iter()
            .zip(durations)
            .map(|(st, dt)| {
                let mut k = TrajectoryKnot::resting(*st, layout.wheel_count());
                k.dt = dt;
                k
            })
            .collect();
        refresh_wheel_states(&mut knots, layout);
        knots
    }

    /// Straight lead-in, then a constant-twist arc. The turn makes the
    /// per-wheel steering commands differ, so actuation lag shows up as
    /// wheel disagreement rather than a mere time shift.
    fn arc_knots(layout: &WheelLayout) -> Vec<TrajectoryKnot> {
        let (v, om, dt) = (0.5, 0.5, 0.1);
        let radius = v / om;
        let mut knots: Vec<TrajectoryKnot> = Vec::new();
        for i in 0..=10 {
            let t = dt * i as f64;
            knots.push(TrajectoryKnot::resting(
                BodyState::new(v * t, 0.0, 0.0, v, 0.0, 0.0),
                layout.wheel_count(),
            ));
        }
        for i in 1..=20 {
            let th = om * dt * i as f64;
            knots.push(TrajectoryKnot::resting(
                BodyState::new(
                    0.5 + radius * th.sin(),
                    radius * (1.0 - th.cos()),
                    th,
                    v * th.cos(),
                    v * th.sin(),
                    om,
                ),
                layout.wheel_count(),
            ));
        }
        let n = knots.len();
        for i in 0..n - 1 {
            knots[i].dt = dt;
            let (a, b) = (knots[i].state, knots[i + 1].state);
            knots[i].control =
                BodyControl::new((b.vx - a.vx) / dt, (b.vy - a.vy) / dt, (b.omega - a.omega) / dt);
        }
        refresh_wheel_states(&mut knots, layout);
        knots
    }

    #[test]
    fn feasible_run_tracks_exactly() {
        let lay = layout();
        let knots = straight_knots(&lay, 20, 0.5, 0.1);
        let rec = rollout(&knots, &lay, &ActuationLimits::from_layout(&lay), 0.02);
        assert!(!rec.ticks.is_empty());
        for tick in &rec.ticks {
            for wi in 0..lay.wheel_count() {
                assert!((tick.ach_steer[wi] - tick.cmd_steer[wi]).abs() < 1e-9);
                assert!((tick.ach_speed[wi] - tick.cmd_speed[wi]).abs() < 1e-9);
            }
            let (c, a) = (&tick.commanded, &tick.achieved);
            assert!((c.x - a.x).hypot(c.y - a.y) < 1e-9, "{c:?} vs {a:?}");
            assert!(wrap_angle(c.theta - a.theta).abs() < 1e-9);
        }
        let m = metrics(&rec, &knots, &lay);
        assert!(m.mean_position_error < 1e-9);
        assert!(m.mean_heading_error < 1e-9);
        // Aligned rolling: the literal ratio is the speed, the lateral zero.
        assert!((m.slide_literal.mean - 0.5).abs() < 1e-9);
        assert!(m.slide_lateral.mean < 1e-12);
        assert!(m.mean_jerk.iter().all(|j| j.abs() < 1e-9));
    }

    #[test]
    fn steer_step_advances_at_the_rate_cap() {
        let lay = layout();
        let knots = elbow_knots(&lay, 0.5, 2.5);
        let limits = ActuationLimits { steer_rate: vec![1.0; 4], accel: vec![50.0; 4] };
        let rec = rollout(&knots, &lay, &limits, 0.1);
        assert!((rec.period - 0.1).abs() < 1e-12);
        // Before the elbow the command is steer 0; afterwards pi/2. Each
        // tick may advance steering by at most rate * period = 0.1 rad.
        let mut prev = rec.ticks[0].ach_steer[0];
        let mut full = 0;
        for tick in &rec.ticks[1..] {
            let d = wrap_angle(tick.ach_steer[0] - prev).abs();
            assert!(d <= 0.1 + 1e-12, "step {d}");
            if (d - 0.1).abs() < 1e-9 {
                full += 1;
            }
            prev = tick.ach_steer[0];
        }
        // pi/2 of travel: fifteen saturated ticks and one fractional one.
        assert_eq!(full, 15);
        let last = rec.ticks.last().unwrap();
        assert!((last.ach_steer[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn empty_and_zero_length_trajectories_give_empty_records() {
        let lay = layout();
        let rec = rollout(&[], &lay, &ActuationLimits::from_layout(&lay), 0.02);
        assert!(rec.ticks.is_empty());
        let single = vec![TrajectoryKnot::resting(BodyState::default(), 4)];
        let rec = rollout(&single, &lay, &ActuationLimits::from_layout(&lay), 0.02);
        assert!(rec.ticks.is_empty());
    }

    #[test]
    fn slide_ratio_known_misalignments() {
        let lay = layout();
        let mk = |steer: f64, speed: f64, vb: [f64; 3]| -> FollowRecord {
            let achieved = BodyState::new(0.0, 0.0, 0.0, vb[0], vb[1], vb[2]);
            FollowRecord {
                period: 0.02,
                ticks: vec![FollowTick {
                    time: 0.0,
                    commanded: achieved,
                    achieved,
                    cmd_steer: vec![steer; 4],
                    cmd_speed: vec![speed; 4],
                    ach_steer: vec![steer; 4],
                    ach_speed: vec![speed; 4],
                }],
            }
        };
        // Perfect alignment at unit speed: literal 1, lateral 0.
        let s = slide_ratio(&mk(0.0, 1.0, [1.0, 0.0, 0.0]), &lay);
        assert!((s.literal[0] - 1.0).abs() < 1e-12);
        assert!(s.lateral[0] < 1e-12);
        // Ten degrees of misalignment at unit speed.
        let ten = 10f64.to_radians();
        let s = slide_ratio(&mk(ten, 1.0, [1.0, 0.0, 0.0]), &lay);
        assert!((s.literal[0] - ten.cos()).abs() < 1e-12);
        assert!((s.lateral[0] - ten.sin()).abs() < 1e-12);
        // Everything at rest.
        let s = slide_ratio(&mk(0.3, 0.0, [0.0, 0.0, 0.0]), &lay);
        assert!(s.literal[0].abs() < 1e-12);
        assert!(s.lateral[0].abs() < 1e-12);
    }

    #[test]
    fn tightening_steer_rate_increases_peak_lateral_slide() {
        let lay = layout();
        let knots = arc_knots(&lay);
        let peak = |rate: f64| -> f64 {
            let limits = ActuationLimits { steer_rate: vec![rate; 4], accel: vec![50.0; 4] };
            let rec = rollout(&knots, &lay, &limits, 0.02);
            slide_ratio(&rec, &lay).lateral.iter().fold(0.0f64, |a, v| a.max(*v))
        };
        let loose = peak(20.0);
        let mid = peak(1.0);
        let tight = peak(0.4);
        assert!(mid > loose + 1e-6, "mid {mid} loose {loose}");
        assert!(tight > mid + 1e-6, "tight {tight} mid {mid}");
    }

    #[test]
    fn reversed_trajectory_keeps_tracking_statistics() {
        let lay = layout();
        let knots = elbow_knots(&lay, 0.5, 1.0);
        // Same path walked backwards: positions in reverse order, and the
        // step leaving reversed knot i retraces forward step n-2-i, so it
        // takes that step's duration and negated velocity.
        let n = knots.len();
        let mut rev: Vec<TrajectoryKnot> = (0..n)
            .map(|i| {
                let src = &knots[n - 1 - i];
                let step = &knots[(n - 2).saturating_sub(i)];
                let mut k = src.clone();
                k.state = BodyState::new(
                    src.state.x,
                    src.state.y,
                    src.state.theta,
                    -step.state.vx,
                    -step.state.vy,
                    -step.state.omega,
                );
                k.dt = if i + 1 < n { step.dt } else { 0.0 };
                k
            })
            .collect();
        refresh_wheel_states(&mut rev, &lay);
        let limits = ActuationLimits { steer_rate: vec![1.0; 4], accel: vec![50.0; 4] };
        let fwd_rec = rollout(&knots, &lay, &limits, 0.02);
        let rev_rec = rollout(&rev, &lay, &limits, 0.02);
        let fwd = metrics(&fwd_rec, &knots, &lay);
        let bwd = metrics(&rev_rec, &rev, &lay);
        assert!(
            (fwd.mean_position_error - bwd.mean_position_error).abs() < 1e-9,
            "fwd {} bwd {}",
            fwd.mean_position_error,
            bwd.mean_position_error
        );
    }

    #[test]
    fn rigid_fit_recovers_exact_twists() {
        let wheels = [[0.3, 0.25], [0.3, -0.25], [-0.3, 0.25], [-0.3, -0.25]];
        for (vx, vy, om) in [(1.0, 0.0, 0.0), (0.2, -0.4, 0.0), (0.0, 0.0, 1.3), (0.7, 0.1, -0.9)]
        {
            let u: Vec<[f64; 2]> =
                wheels.iter().map(|w| [vx - om * w[1], vy + om * w[0]]).collect();
            let fit = rigid_fit(&wheels, &u);
            assert!((fit[0] - vx).abs() < 1e-12, "{fit:?}");
            assert!((fit[1] - vy).abs() < 1e-12);
            assert!((fit[2] - om).abs() < 1e-12);
        }
    }

    proptest! {
        /// The clamps themselves are invariants of the record, whatever
        /// the trajectory does.
        #[test]
        fn achieved_rates_never_exceed_caps(
            v in 0.1f64..1.2,
            rate in 0.2f64..2.0,
            accel in 0.2f64..3.0,
        ) {
            let lay = layout();
            let knots = elbow_knots(&lay, v, 1.0);
            let limits = ActuationLimits { steer_rate: vec![rate; 4], accel: vec![accel; 4] };
            let rec = rollout(&knots, &lay, &limits, 0.05);
            for pair in rec.ticks.windows(2) {
                let h = pair[1].time - pair[0].time;
                for wi in 0..4 {
                    let ds = wrap_angle(pair[1].ach_steer[wi] - pair[0].ach_steer[wi]).abs();
                    prop_assert!(ds <= rate * h + 1e-9);
                    let dv = (pair[1].ach_speed[wi] - pair[0].ach_speed[wi]).abs();
                    prop_assert!(dv <= accel * h + 1e-9);
                }
            }
        }
    }
}

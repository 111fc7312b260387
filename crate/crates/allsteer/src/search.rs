//! Initial trajectory search over sampled instantaneous centers of motion.
//!
//! Candidate motions are arcs about ICM positions drawn from a spherical
//! grid: elevation `eps` (with `tan(eps)` the ICM distance) and azimuth
//! `psi`, paired with sampled yaw rates. Each candidate is screened once
//! against the steering limits; survivors become pose-independent maneuver
//! primitives. An A* over quantized (pose, velocity direction, rolling
//! direction) states then assembles a collision-free trajectory whose edge
//! cost is the time the wheels and the body need for the transition.

use crate::kinematics::{
    self, wrap_angle, WheelLayout, OMEGA_SINGULAR,
};
use crate::trajectory::{self, TrajectoryKnot};
use crate::world::{CollisionChecker, Limits, Scenario, SearchConfig, Weights};
use crate::{BodyControl, BodyState};
use ordered_float::NotNan;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};

/// Spherical ICM sample grid plus yaw-rate samples.
#[derive(Clone, Debug)]
pub struct IcmSampleSet {
    /// Elevations in `[~0, ~pi/2)`; `tan` gives the ICM distance.
    pub eps: Vec<f64>,
    /// Azimuths covering `[-pi, pi]` (both ends present, same direction).
    pub psi: Vec<f64>,
    /// Yaw rates, uniform over `[-pi/2, pi/2]`.
    pub omega: Vec<f64>,
}

/// Build the sample grid: `eps_i = (pi*i + off) / (2N + off)` for
/// `i = 0..=N`, `psi_i = -pi + 2*pi*i/N`, and `n_omega` uniform yaw rates.
pub fn sample_set(n_eps: usize, n_psi: usize, n_omega: usize, eps_offset: f64) -> IcmSampleSet {
    let eps = (0..=n_eps)
        .map(|i| (PI * i as f64 + eps_offset) / (2.0 * n_eps as f64 + eps_offset))
        .collect();
    let psi = (0..=n_psi).map(|i| -PI + 2.0 * PI * i as f64 / n_psi as f64).collect();
    let omega = (0..n_omega)
        .map(|i| -FRAC_PI_2 + PI * i as f64 / (n_omega - 1) as f64)
        .collect();
    IcmSampleSet { eps, psi, omega }
}

/// Radius vector (ICM to body origin, body frame) for a spherical sample.
pub fn icm_vector(eps: f64, psi: f64) -> [f64; 2] {
    let t = eps.tan();
    [-t * psi.cos(), -t * psi.sin()]
}

/// Steering angle and rolling direction realizing a wheel velocity along
/// `dir` within `[lo, hi]`, preferring the smaller |angle| (tie: forward).
fn steer_for_dir(dir: [f64; 2], lo: f64, hi: f64) -> Option<(f64, i8)> {
    let raw = wrap_angle(dir[1].atan2(dir[0]));
    let back = wrap_angle(raw + PI);
    let tol = 1e-12;
    let ok = |a: f64| lo - tol <= a && a <= hi + tol;
    match (ok(raw), ok(back)) {
        (true, true) => {
            if back.abs() < raw.abs() {
                Some((back, -1))
            } else {
                Some((raw, 1))
            }
        }
        (true, false) => Some((raw, 1)),
        (false, true) => Some((back, -1)),
        (false, false) => None,
    }
}

/// Steering feasibility of an ICM radius vector under a positive yaw rate:
/// every wheel's velocity (perpendicular to its ray from the ICM) must be
/// realizable within that wheel's steering range in one rolling direction.
/// Returns the chosen steering angle and direction flag per wheel.
pub fn feasible_with_steer(r: [f64; 2], layout: &WheelLayout) -> Option<(Vec<f64>, Vec<i8>)> {
    let n = layout.wheel_count();
    let mut steer = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let w = layout.wheels[i];
        let rw = [r[0] + w[0], r[1] + w[1]];
        let (lo, hi) = (layout.steer_lower[i], layout.steer_upper[i]);
        if rw[0].hypot(rw[1]) < 1e-12 {
            // Wheel sits on the ICM: zero speed, steering free.
            steer.push(0.0f64.clamp(lo, hi));
            flags.push(1);
            continue;
        }
        let dir = [-rw[1], rw[0]];
        let (s, f) = steer_for_dir(dir, lo, hi)?;
        steer.push(s);
        flags.push(f);
    }
    Some((steer, flags))
}

/// Direction flags of a feasible ICM radius vector, or `None`.
pub fn feasible(r: [f64; 2], layout: &WheelLayout) -> Option<Vec<i8>> {
    feasible_with_steer(r, layout).map(|(_, f)| f)
}

/// A pose-independent motion primitive, expressed in the frame of the node
/// it expands.
#[derive(Clone, Debug)]
pub struct Maneuver {
    /// Sample identity `(i_eps, i_psi, i_omega, branch)`; branch is 0 for
    /// arcs and +-1 for the translations replacing a zero yaw-rate sample.
    pub key: (u16, u16, u16, i8),
    /// ICM radius vector (meaningless for translations).
    pub r: [f64; 2],
    /// Yaw rate during the maneuver; exactly zero for translations.
    pub omega: f64,
    pub translation: bool,
    /// Body-frame velocity, constant along the maneuver.
    pub v_body: [f64; 2],
    pub duration: f64,
    /// Path length of the body origin.
    pub arc: f64,
    /// End pose relative to the start pose (body frame): `[dx, dy, dtheta]`.
    pub delta: [f64; 3],
    /// Straight-line displacement length (norm of `delta` position).
    pub chord: f64,
    pub steer: Vec<f64>,
    pub speed: Vec<f64>,
    pub flags: Vec<i8>,
    /// Rolling-direction signature for phase bookkeeping.
    pub flags_sig: u32,
    /// Velocity-direction octant of `v_body` (8 when at rest).
    pub oct: u8,
    /// Intermediate body-frame poses for the collision sweep (includes the
    /// end pose).
    pub sub: Vec<[f64; 3]>,
}

fn flags_signature(flags: &[i8]) -> u32 {
    flags.iter().enumerate().fold(0, |acc, (i, &f)| acc | (u32::from(f > 0) << i))
}

fn velocity_octant(v: [f64; 2]) -> u8 {
    if v[0].hypot(v[1]) < 1e-9 {
        return 8;
    }
    let a = v[1].atan2(v[0]) + PI;
    (((a / (PI / 4.0)).floor() as i64).rem_euclid(8)) as u8
}

fn arc_delta(r: [f64; 2], dtheta: f64) -> [f64; 2] {
    let rot = kinematics::rotation(dtheta);
    let moved = kinematics::mat_vec(rot, r);
    [moved[0] - r[0], moved[1] - r[1]]
}

fn sub_poses_rotation(r: [f64; 2], omega: f64, duration: f64, count: usize) -> Vec<[f64; 3]> {
    (1..=count)
        .map(|j| {
            let dth = omega * duration * j as f64 / count as f64;
            let d = arc_delta(r, dth);
            [d[0], d[1], dth]
        })
        .collect()
}

/// Generate the retained maneuver set for a layout.
///
/// Yaw rates are scaled down where needed so the body speed, yaw rate and
/// every wheel speed stay within their limits; this keeps the search's
/// accumulated time an upper bound of the admissible heuristic. Zero
/// yaw-rate samples become pure translations along the two directions
/// perpendicular to the radius vector.
pub fn build_maneuvers(
    layout: &WheelLayout,
    limits: &Limits,
    cfg: &SearchConfig,
    sweep_spacing: f64,
    sweep_radius: f64,
) -> Vec<Maneuver> {
    let set = sample_set(cfg.n_eps, cfg.n_psi, cfg.n_omega, cfg.eps_offset);
    let mut out = Vec::new();
    let min_speed_cap =
        layout.speed_cap.iter().cloned().fold(f64::INFINITY, f64::min).min(limits.v_max);
    for (ie, &eps) in set.eps.iter().enumerate() {
        for (ip, &psi) in set.psi.iter().enumerate() {
            let r = icm_vector(eps, psi);
            let Some((steer, flags)) = feasible_with_steer(r, layout) else {
                continue;
            };
            let rn = kinematics::norm(r);
            for (io, &om_raw) in set.omega.iter().enumerate() {
                if om_raw.abs() < OMEGA_SINGULAR {
                    // Null rotation: substitute translations along the two
                    // tangents, reusing the same per-wheel steering.
                    if rn < 1e-9 {
                        continue;
                    }
                    for branch in [1i8, -1] {
                        let dir =
                            [-r[1] / rn * f64::from(branch), r[0] / rn * f64::from(branch)];
                        let Some(m) = translation_maneuver(
                            (ie as u16, ip as u16, io as u16, branch),
                            dir,
                            layout,
                            min_speed_cap,
                            cfg,
                            sweep_spacing,
                        ) else {
                            continue;
                        };
                        out.push(m);
                    }
                    continue;
                }
                // Scale the yaw rate so body, yaw and wheel speeds respect
                // their caps; the ICM (and thus the geometry) is unchanged.
                let mut scale = (limits.yaw_rate_max / om_raw.abs()).min(1.0);
                if rn > 1e-12 {
                    scale = scale.min(limits.v_max / (om_raw.abs() * rn));
                }
                for (i, w) in layout.wheels.iter().enumerate() {
                    let rw = [r[0] + w[0], r[1] + w[1]];
                    let d = kinematics::norm(rw);
                    if d > 1e-12 {
                        scale = scale.min(layout.speed_cap[i] / (om_raw.abs() * d));
                    }
                }
                let omega = om_raw * scale;
                if omega.abs() < OMEGA_SINGULAR {
                    continue;
                }
                let body_speed = omega.abs() * rn;
                let duration = if body_speed > 1e-12 {
                    (cfg.arc_cap / body_speed).min(cfg.duration_max)
                } else {
                    cfg.duration_max
                };
                let dtheta = omega * duration;
                let d = arc_delta(r, dtheta);
                let arc = body_speed * duration;
                let n_sub = ((arc + dtheta.abs() * sweep_radius) / sweep_spacing).ceil() as usize;
                let n_sub = n_sub.max(1);
                let mut speed = Vec::with_capacity(layout.wheel_count());
                let mut mflags = Vec::with_capacity(layout.wheel_count());
                for (i, w) in layout.wheels.iter().enumerate() {
                    let rw = [r[0] + w[0], r[1] + w[1]];
                    let f = if omega > 0.0 { flags[i] } else { -flags[i] };
                    speed.push(f64::from(f) * omega.abs() * kinematics::norm(rw));
                    mflags.push(f);
                }
                let flags_sig = flags_signature(&mflags);
                let v_body = [-r[1] * omega, r[0] * omega];
                out.push(Maneuver {
                    key: (ie as u16, ip as u16, io as u16, 0),
                    r,
                    omega,
                    translation: false,
                    v_body,
                    duration,
                    arc,
                    delta: [d[0], d[1], dtheta],
                    chord: d[0].hypot(d[1]),
                    steer: steer.clone(),
                    speed,
                    flags: mflags,
                    flags_sig,
                    oct: velocity_octant(v_body),
                    sub: sub_poses_rotation(r, omega, duration, n_sub),
                });
            }
        }
    }
    out
}

fn translation_maneuver(
    key: (u16, u16, u16, i8),
    dir: [f64; 2],
    layout: &WheelLayout,
    speed_cap: f64,
    cfg: &SearchConfig,
    sweep_spacing: f64,
) -> Option<Maneuver> {
    let n = layout.wheel_count();
    let mut steer = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    for i in 0..n {
        let (s, f) = steer_for_dir(dir, layout.steer_lower[i], layout.steer_upper[i])?;
        steer.push(s);
        flags.push(f);
        speed.push(f64::from(f) * speed_cap);
    }
    let duration = (cfg.arc_cap / speed_cap).min(cfg.duration_max);
    let arc = speed_cap * duration;
    let n_sub = (arc / sweep_spacing).ceil().max(1.0) as usize;
    let v_body = [dir[0] * speed_cap, dir[1] * speed_cap];
    let flags_sig = flags_signature(&flags);
    Some(Maneuver {
        key,
        r: [0.0, 0.0],
        omega: 0.0,
        translation: true,
        v_body,
        duration,
        arc,
        delta: [v_body[0] * duration, v_body[1] * duration, 0.0],
        chord: arc,
        steer,
        speed,
        flags,
        flags_sig,
        oct: velocity_octant(v_body),
        sub: (1..=n_sub)
            .map(|j| {
                let f = j as f64 / n_sub as f64;
                [v_body[0] * duration * f, v_body[1] * duration * f, 0.0]
            })
            .collect(),
    })
}

/// Advance a pose by rotating for `duration` at `omega` about the ICM given
/// by the body-frame radius vector `r`. Returns the successor pose and its
/// world-frame velocity.
pub fn forward_simulate(
    pose: [f64; 3],
    r: [f64; 2],
    omega: f64,
    duration: f64,
) -> ([f64; 3], [f64; 2]) {
    let dtheta = omega * duration;
    let d_body = arc_delta(r, dtheta);
    let rot = kinematics::rotation(pose[2]);
    let d_world = kinematics::mat_vec(rot, d_body);
    let next = [pose[0] + d_world[0], pose[1] + d_world[1], pose[2] + dtheta];
    let v = kinematics::body_velocity_from_icm(r, omega, next[2]);
    (next, v)
}

/// Time cost of a lattice step: the wheels need `t_w` to re-aim and re-speed
/// (blended quadratically), the body needs `t_body` to cover the
/// displacement; the step costs the larger of the two.
#[allow(clippy::too_many_arguments)]
pub fn step_cost(
    prev_steer: &[f64],
    prev_speed: &[f64],
    next_steer: &[f64],
    next_speed: &[f64],
    dpos: f64,
    dtheta: f64,
    layout: &WheelLayout,
    limits: &Limits,
    weights: &Weights,
) -> f64 {
    let mut t_vw = 0.0f64;
    let mut t_dw = 0.0f64;
    for i in 0..layout.wheel_count() {
        t_vw = t_vw.max((next_speed[i] - prev_speed[i]).abs() / layout.accel_cap[i]);
        t_dw = t_dw
            .max(wrap_angle(next_steer[i] - prev_steer[i]).abs() / layout.steer_rate_cap[i]);
    }
    let t_w = (weights.k_vw * t_vw * t_vw + weights.k_dw * t_dw * t_dw).sqrt();
    let t_body = (dpos / limits.v_max).max(dtheta.abs() / limits.yaw_rate_max);
    t_w.max(t_body)
}

/// Admissible arrival-time estimate: the larger of the translation and the
/// (wrapped) rotation time at full speed, scaled by `k_h`.
pub fn heuristic(pose: [f64; 3], goal: [f64; 3], limits: &Limits, k_h: f64) -> f64 {
    let d = (goal[0] - pose[0]).hypot(goal[1] - pose[1]);
    let dth = wrap_angle(goal[2] - pose[2]).abs();
    k_h * (d / limits.v_max).max(dth / limits.yaw_rate_max)
}

/// Search output: knots plus bookkeeping.
#[derive(Clone, Debug)]
pub struct InitialTrajectory {
    pub knots: Vec<TrajectoryKnot>,
    pub total_time: f64,
    pub nodes_expanded: usize,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum SearchError {
    #[error("no path: {} after {expanded} expansions",
            if *.budget_exhausted { "expansion budget exhausted" } else { "frontier empty" })]
    NoPath { expanded: usize, budget_exhausted: bool },
}

struct Node {
    pose: [f64; 3],
    v_body: [f64; 2],
    g: f64,
    parent: i32,
    /// Index into the maneuver table; -1 for the root.
    maneuver: i32,
    phase: u32,
}

type Key = (i64, i64, i64, u8, u32);

fn quantize(pose: [f64; 3], oct: u8, sig: u32, pos_res: f64, heading_res: f64) -> Key {
    let qx = (pose[0] / pos_res).round() as i64;
    let qy = (pose[1] / pos_res).round() as i64;
    let wrapped = wrap_angle(pose[2]) + PI; // [0, 2*pi)
    let buckets = (2.0 * PI / heading_res).round().max(1.0) as i64;
    let qt = ((wrapped / heading_res).floor() as i64).rem_euclid(buckets);
    (qx, qy, qt, oct, sig)
}

/// Root wheel state from the start velocity: forward-rolling flags,
/// steering held at zero where undefined.
fn root_wheel_state(state: &BodyState, layout: &WheelLayout) -> (Vec<f64>, Vec<f64>, Vec<i8>) {
    let n = layout.wheel_count();
    let mut steer = vec![0.0; n];
    let mut speed = vec![0.0; n];
    for i in 0..n {
        let m = kinematics::wheel_velocity(state, layout.wheels[i]);
        if m.steer_defined {
            steer[i] = m.steer_body;
            speed[i] = m.speed;
        }
    }
    (steer, speed, vec![1; n])
}

/// Plan an initial trajectory for a scenario.
pub fn plan(scenario: &Scenario) -> Result<InitialTrajectory, SearchError> {
    let cfg = &scenario.search;
    let limits = &scenario.limits;
    let layout = scenario.search_layout();
    let checker = CollisionChecker::new(scenario.grid.clone(), scenario.footprint);
    let sweep_spacing = 0.5 * scenario.grid.resolution();
    let maneuvers = build_maneuvers(
        &layout,
        limits,
        cfg,
        sweep_spacing,
        scenario.footprint.circumradius(),
    );

    let start = scenario.start;
    let goal = scenario.goal;
    let goal_pose = goal.pose();
    let in_goal = |pose: [f64; 3]| {
        (pose[0] - goal_pose[0]).hypot(pose[1] - goal_pose[1]) <= cfg.goal_pos_tol
            && wrap_angle(pose[2] - goal_pose[2]).abs() <= cfg.goal_heading_tol
    };

    let (root_steer, root_speed, root_flags) = root_wheel_state(&start, &scenario.layout);

    if in_goal(start.pose()) {
        let mut knot = TrajectoryKnot::resting(start, scenario.layout.wheel_count());
        knot.steer = root_steer;
        knot.speed = root_speed;
        knot.flags = root_flags;
        return Ok(InitialTrajectory { knots: vec![knot], total_time: 0.0, nodes_expanded: 0 });
    }

    let pos_res = scenario.pos_resolution();
    let heading_res = cfg.heading_resolution;
    let rot_t0 = kinematics::mat_t(kinematics::rotation(start.theta));
    let root_vb = kinematics::mat_vec(rot_t0, [start.vx, start.vy]);

    let mut arena = vec![Node {
        pose: start.pose(),
        v_body: root_vb,
        g: 0.0,
        parent: -1,
        maneuver: -1,
        phase: 0,
    }];
    let root_oct = velocity_octant(root_vb);
    let root_sig = flags_signature(&root_flags);
    let mut best: HashMap<Key, f64> = HashMap::new();
    let root_key = quantize(start.pose(), root_oct, root_sig, pos_res, heading_res);
    best.insert(root_key, 0.0);

    type Entry = Reverse<(NotNan<f64>, NotNan<f64>, u64, u32)>;
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let h0 = heuristic(start.pose(), goal_pose, limits, scenario.weights.k_h);
    let nn = |v: f64| NotNan::new(v).expect("cost is NaN");
    let mut seq = 0u64;
    heap.push(Reverse((nn(h0), nn(h0), seq, 0)));

    let mut expanded = 0usize;
    let mut found: Option<u32> = None;
    while let Some(Reverse((_, _, _, idx))) = heap.pop() {
        let (pose, g, phase, maneuver_idx) = {
            let n = &arena[idx as usize];
            (n.pose, n.g, n.phase, n.maneuver)
        };
        let (oct, sig) = if maneuver_idx < 0 {
            (root_oct, root_sig)
        } else {
            let m = &maneuvers[maneuver_idx as usize];
            (m.oct, m.flags_sig)
        };
        let key = quantize(pose, oct, sig, pos_res, heading_res);
        if g > best.get(&key).copied().unwrap_or(f64::INFINITY) + 1e-12 {
            continue;
        }
        if in_goal(pose) {
            found = Some(idx);
            break;
        }
        if expanded >= cfg.expansion_budget {
            return Err(SearchError::NoPath { expanded, budget_exhausted: true });
        }
        expanded += 1;

        let (psteer, pspeed): (&[f64], &[f64]) = if maneuver_idx < 0 {
            (&root_steer, &root_speed)
        } else {
            let m = &maneuvers[maneuver_idx as usize];
            (&m.steer, &m.speed)
        };
        let rot = kinematics::rotation(pose[2]);
        // Sweeps are skipped when the whole arc fits in known-free space.
        let clear = checker.clear_radius([pose[0], pose[1]]);
        for (mi, m) in maneuvers.iter().enumerate() {
            if m.arc > clear {
                let mut blocked = false;
                for sp in &m.sub {
                    let off = kinematics::mat_vec(rot, [sp[0], sp[1]]);
                    if checker.pose_collides([
                        pose[0] + off[0],
                        pose[1] + off[1],
                        pose[2] + sp[2],
                    ]) {
                        blocked = true;
                        break;
                    }
                }
                if blocked {
                    continue;
                }
            }
            let off = kinematics::mat_vec(rot, [m.delta[0], m.delta[1]]);
            let npose = [pose[0] + off[0], pose[1] + off[1], pose[2] + m.delta[2]];
            let dg = step_cost(
                psteer,
                pspeed,
                &m.steer,
                &m.speed,
                m.chord,
                m.delta[2],
                &layout,
                limits,
                &scenario.weights,
            );
            let ng = g + dg;
            let nkey = quantize(npose, m.oct, m.flags_sig, pos_res, heading_res);
            let entry = best.entry(nkey).or_insert(f64::INFINITY);
            if ng >= *entry - 1e-12 {
                continue;
            }
            *entry = ng;
            let nphase = if maneuver_idx < 0 {
                0
            } else if maneuvers[maneuver_idx as usize].flags_sig != m.flags_sig {
                phase + 1
            } else {
                phase
            };
            let nidx = arena.len() as u32;
            arena.push(Node {
                pose: npose,
                v_body: m.v_body,
                g: ng,
                parent: idx as i32,
                maneuver: mi as i32,
                phase: nphase,
            });
            let h = heuristic(npose, goal_pose, limits, scenario.weights.k_h);
            seq += 1;
            heap.push(Reverse((nn(ng + h), nn(h), seq, nidx)));
        }
    }

    let Some(goal_idx) = found else {
        return Err(SearchError::NoPath { expanded, budget_exhausted: false });
    };

    // Walk the parent chain; build knots root-first.
    let mut chain = Vec::new();
    let mut at = goal_idx as i32;
    while at >= 0 {
        chain.push(at as usize);
        at = arena[at as usize].parent;
    }
    chain.reverse();

    let wheel_count = scenario.layout.wheel_count();
    let mut knots: Vec<TrajectoryKnot> = Vec::with_capacity(chain.len());
    for (ci, &ni) in chain.iter().enumerate() {
        let node = &arena[ni];
        let rot = kinematics::rotation(node.pose[2]);
        let vw = kinematics::mat_vec(rot, node.v_body);
        let omega = if node.maneuver < 0 {
            start.omega
        } else {
            maneuvers[node.maneuver as usize].omega
        };
        let state = BodyState::new(node.pose[0], node.pose[1], node.pose[2], vw[0], vw[1], omega);
        let (steer, speed, flags) = if node.maneuver < 0 {
            // Root: wheel state from the start velocity; rolling directions
            // of the first maneuver so phase 0 covers the first step.
            let flags = chain
                .get(1)
                .map(|&c1| maneuvers[arena[c1].maneuver as usize].flags.clone())
                .unwrap_or_else(|| root_flags.clone());
            (root_steer.clone(), root_speed.clone(), flags)
        } else {
            let m = &maneuvers[node.maneuver as usize];
            (m.steer.clone(), m.speed.clone(), m.flags.clone())
        };
        let dt = chain
            .get(ci + 1)
            .map(|&next| maneuvers[arena[next].maneuver as usize].duration)
            .unwrap_or(0.0);
        knots.push(TrajectoryKnot {
            state,
            control: BodyControl::default(),
            dt,
            phase: node.phase,
            keyframe: false,
            flags,
            steer,
            speed,
        });
        let _ = wheel_count;
    }

    // Controls: finite-differenced accelerations, clipped to the body box.
    for i in 0..knots.len().saturating_sub(1) {
        let dt = knots[i].dt.max(1e-9);
        let (s0, s1) = (knots[i].state, knots[i + 1].state);
        let cap = limits.accel_max;
        knots[i].control = BodyControl::new(
            ((s1.vx - s0.vx) / dt).clamp(-cap[0], cap[0]),
            ((s1.vy - s0.vy) / dt).clamp(-cap[1], cap[1]),
            ((s1.omega - s0.omega) / dt).clamp(-cap[2], cap[2]),
        );
    }
    trajectory::mark_keyframes(&mut knots);
    let total_time = trajectory::total_time(&knots);
    Ok(InitialTrajectory { knots, total_time, nodes_expanded: expanded })
}

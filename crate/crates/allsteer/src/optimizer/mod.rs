//! Trajectory refinement by direct transcription.
//!
//! The initial trajectory is densified, then knot states, per-step controls
//! and per-step durations become decision variables. Dynamics enter as
//! equality defects between consecutive knots; steering cones, steering
//! rates and wheel speed/acceleration caps enter as inequalities; controls
//! and durations live in boxes. Rolling directions stay exactly as the
//! search chose them: knots where they flip are pinned to translational
//! rest, which is what makes an instantaneous flip physical. An augmented
//! Lagrangian method with a projected quasi-Newton inner loop solves the
//! problem; derivatives come from dual numbers, row by row.

mod residual;
mod solve;

use crate::kinematics::wrap_angle;
use crate::trajectory::{self, TrajectoryKnot};
use crate::world::{CollisionChecker, Scenario};
use crate::{scalar, BodyControl, BodyState};
use solve::{AlProblem, BoxBounds, SolveConfig};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    /// Total inner-iteration budget across all penalty stages.
    pub max_iter: usize,
    /// Max tolerated constraint violation (infinity norm).
    pub feas_tol: f64,
    /// Stationarity tolerance (projected-gradient infinity norm).
    pub opt_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> OptimizeOptions {
        OptimizeOptions { max_iter: 20000, feas_tol: 1e-6, opt_tol: 1e-3 }
    }
}

/// Worst-case residual per constraint family, plus solve diagnostics.
/// Inequality families are clamped at zero, so every field is a violation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstraintReport {
    pub continuity: f64,
    pub steer_limit: f64,
    pub steer_rate: f64,
    pub wheel_speed: f64,
    pub wheel_accel: f64,
    pub transition: f64,
    pub dt_bounds: f64,
    pub control_bounds: f64,
    pub objective: f64,
    pub initial_objective: f64,
    pub first_order: f64,
    pub iterations: usize,
}

impl ConstraintReport {
    pub fn families(&self) -> [(&'static str, f64); 8] {
        [
            ("continuity", self.continuity),
            ("steer_limit", self.steer_limit),
            ("steer_rate", self.steer_rate),
            ("wheel_speed", self.wheel_speed),
            ("wheel_accel", self.wheel_accel),
            ("transition", self.transition),
            ("dt_bounds", self.dt_bounds),
            ("control_bounds", self.control_bounds),
        ]
    }

    pub fn max_violation(&self) -> f64 {
        self.families().iter().fold(0.0, |a, (_, v)| a.max(*v))
    }

    pub fn worst_family(&self) -> (&'static str, f64) {
        self.families()
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct OptimizedTrajectory {
    pub knots: Vec<TrajectoryKnot>,
    pub report: ConstraintReport,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("initial guess rejected: {0}")]
    BadInitialGuess(String),
    #[error("iteration budget exhausted before convergence")]
    MaxIterations(Box<OptimizedTrajectory>),
    #[error("no feasible trajectory: worst family {} at {:.3e}", .0.worst_family().0, .0.worst_family().1)]
    Infeasible(Box<ConstraintReport>),
}

/// Variable layout: `[states 6K | controls 3S | durations S]` with S = K-1.
struct Transcription {
    k: usize,
    s: usize,
    nz: usize,
    fixed: Vec<Option<f64>>,
    free_of_z: Vec<i32>,
    z_of_free: Vec<usize>,
}

impl Transcription {
    fn state_ix(knot: usize, comp: usize) -> usize {
        6 * knot + comp
    }
    fn u_ix(&self, step: usize, comp: usize) -> usize {
        6 * self.k + 3 * step + comp
    }
    fn dt_ix(&self, step: usize) -> usize {
        6 * self.k + 3 * self.s + step
    }

    fn new(dense: &[TrajectoryKnot], scenario: &Scenario) -> Transcription {
        let k = dense.len();
        let s = k - 1;
        let nz = 6 * k + 4 * s;
        let mut tr = Transcription {
            k,
            s,
            nz,
            fixed: vec![None; nz],
            free_of_z: vec![-1; nz],
            z_of_free: Vec::new(),
        };
        let start = dense[0].state;
        for (c, v) in [start.x, start.y, start.theta, start.vx, start.vy, start.omega]
            .into_iter()
            .enumerate()
        {
            tr.fixed[Self::state_ix(0, c)] = Some(v);
        }
        // Pin the final knot to the exact goal, heading unwrapped to the
        // branch the trajectory arrives on.
        let goal = scenario.goal;
        let theta_end = dense[k - 1].state.theta;
        let goal_theta = goal.theta + 2.0 * PI * ((theta_end - goal.theta) / (2.0 * PI)).round();
        for (c, v) in [goal.x, goal.y, goal_theta, goal.vx, goal.vy, goal.omega]
            .into_iter()
            .enumerate()
        {
            tr.fixed[Self::state_ix(k - 1, c)] = Some(v);
        }
        for t in trajectory::transition_keyframes(dense) {
            tr.fixed[Self::state_ix(t, 3)] = Some(0.0);
            tr.fixed[Self::state_ix(t, 4)] = Some(0.0);
        }
        for z in 0..nz {
            if tr.fixed[z].is_none() {
                tr.free_of_z[z] = tr.z_of_free.len() as i32;
                tr.z_of_free.push(z);
            }
        }
        tr
    }

    fn merge(&self, zf: &[f64]) -> Vec<f64> {
        (0..self.nz)
            .map(|z| self.fixed[z].unwrap_or_else(|| zf[self.free_of_z[z] as usize]))
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Con {
    SteerLimit { knot: usize, wheel: usize },
    SteerRate { step: usize, wheel: usize },
    WheelSpeed { knot: usize, wheel: usize },
    WheelAccel { knot: usize, wheel: usize },
}

struct Nlp<'a> {
    tr: Transcription,
    scenario: &'a Scenario,
    /// Tracked positions and headings, one per knot.
    reference: Vec<[f64; 3]>,
    cons: Vec<Con>,
    bounds: BoxBounds,
}

impl<'a> Nlp<'a> {
    fn new(scenario: &'a Scenario, dense: &[TrajectoryKnot]) -> Nlp<'a> {
        let tr = Transcription::new(dense, scenario);
        let layout = &scenario.layout;
        let nw = layout.wheel_count();
        let mut cons = Vec::new();
        for knot in 1..tr.k - 1 {
            for wheel in 0..nw {
                // A span reaching pi admits every direction in one of the
                // two rolling senses, so the cone test is vacuous.
                if layout.steer_upper[wheel] - layout.steer_lower[wheel] < PI - 1e-9 {
                    cons.push(Con::SteerLimit { knot, wheel });
                }
                cons.push(Con::WheelSpeed { knot, wheel });
            }
        }
        for step in 0..tr.s {
            for wheel in 0..nw {
                cons.push(Con::SteerRate { step, wheel });
            }
        }
        for knot in 0..tr.k - 1 {
            for wheel in 0..nw {
                cons.push(Con::WheelAccel { knot, wheel });
            }
        }
        let nf = tr.z_of_free.len();
        let mut bounds = BoxBounds::unbounded(nf);
        let lim = &scenario.limits;
        for step in 0..tr.s {
            for c in 0..3 {
                let f = tr.free_of_z[tr.u_ix(step, c)];
                if f >= 0 {
                    bounds.lo[f as usize] = -lim.accel_max[c];
                    bounds.hi[f as usize] = lim.accel_max[c];
                }
            }
            let f = tr.free_of_z[tr.dt_ix(step)];
            if f >= 0 {
                bounds.lo[f as usize] = lim.dt_min;
                bounds.hi[f as usize] = lim.dt_max;
            }
        }
        let mut reference: Vec<[f64; 3]> =
            dense.iter().map(|k| [k.state.x, k.state.y, k.state.theta]).collect();
        let last = reference.len() - 1;
        reference[last] = [
            tr.fixed[Transcription::state_ix(tr.k - 1, 0)].unwrap(),
            tr.fixed[Transcription::state_ix(tr.k - 1, 1)].unwrap(),
            tr.fixed[Transcription::state_ix(tr.k - 1, 2)].unwrap(),
        ];
        Nlp { tr, scenario, reference, cons, bounds }
    }

    fn warm_start(&self, dense: &[TrajectoryKnot]) -> Vec<f64> {
        let tr = &self.tr;
        let lim = &self.scenario.limits;
        let mut full = vec![0.0; tr.nz];
        for (k, knot) in dense.iter().enumerate() {
            let st = knot.state;
            for (c, v) in [st.x, st.y, st.theta, st.vx, st.vy, st.omega].into_iter().enumerate()
            {
                full[Transcription::state_ix(k, c)] = v;
            }
        }
        for s in 0..tr.s {
            let dt = dense[s].dt.clamp(lim.dt_min, lim.dt_max);
            full[tr.dt_ix(s)] = dt;
            let (a, b) = (dense[s].state, dense[s + 1].state);
            let u = [
                ((b.vx - a.vx) / dt).clamp(-lim.accel_max[0], lim.accel_max[0]),
                ((b.vy - a.vy) / dt).clamp(-lim.accel_max[1], lim.accel_max[1]),
                ((b.omega - a.omega) / dt).clamp(-lim.accel_max[2], lim.accel_max[2]),
            ];
            for c in 0..3 {
                full[tr.u_ix(s, c)] = u[c];
            }
        }
        tr.z_of_free.iter().map(|&z| full[z]).collect()
    }

    /// Input z-indices of one scalar constraint; returns the count.
    fn con_inputs(&self, con: Con, buf: &mut [usize; 16]) -> usize {
        let tr = &self.tr;
        match con {
            Con::SteerLimit { knot, .. } | Con::WheelSpeed { knot, .. } => {
                for c in 0..4 {
                    buf[c] = Transcription::state_ix(knot, 2 + c);
                }
                4
            }
            Con::SteerRate { step, .. } => {
                for c in 0..4 {
                    buf[c] = Transcription::state_ix(step, 2 + c);
                    buf[4 + c] = Transcription::state_ix(step + 1, 2 + c);
                }
                buf[8] = tr.dt_ix(step);
                9
            }
            Con::WheelAccel { knot, .. } => {
                buf[0] = Transcription::state_ix(knot, 2);
                buf[1] = Transcription::state_ix(knot, 5);
                for c in 0..3 {
                    buf[2 + c] = tr.u_ix(knot, c);
                }
                5
            }
        }
    }

    fn con_eval<R: scalar::Real>(&self, con: Con, v: &[R]) -> R {
        let layout = &self.scenario.layout;
        match con {
            Con::SteerLimit { wheel, .. } => residual::steer_limit(
                v[0],
                v[1],
                v[2],
                v[3],
                layout.wheels[wheel],
                layout.steer_lower[wheel],
                layout.steer_upper[wheel],
            ),
            Con::WheelSpeed { wheel, .. } => residual::wheel_speed(
                v[0],
                v[1],
                v[2],
                v[3],
                layout.wheels[wheel],
                layout.speed_cap[wheel],
            ),
            Con::SteerRate { wheel, .. } => residual::steer_rate(
                v[0],
                v[1],
                v[2],
                v[3],
                v[4],
                v[5],
                v[6],
                v[7],
                v[8],
                layout.wheels[wheel],
                layout.steer_rate_cap[wheel],
            ),
            Con::WheelAccel { wheel, .. } => residual::wheel_accel(
                v[0],
                v[1],
                &[v[2], v[3], v[4]],
                layout.wheels[wheel],
                layout.accel_cap[wheel],
            ),
        }
    }

    fn continuity_inputs(&self, step: usize, buf: &mut [usize; 16]) {
        for c in 0..6 {
            buf[c] = Transcription::state_ix(step, c);
            buf[6 + c] = Transcription::state_ix(step + 1, c);
        }
        for c in 0..3 {
            buf[12 + c] = self.tr.u_ix(step, c);
        }
        buf[15] = self.tr.dt_ix(step);
    }
}

impl<'a> AlProblem for Nlp<'a> {
    fn dim(&self) -> usize {
        self.tr.z_of_free.len()
    }
    fn n_eq(&self) -> usize {
        6 * self.tr.s
    }
    fn n_ineq(&self) -> usize {
        self.cons.len()
    }
    fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    fn objective(&self, zf: &[f64]) -> f64 {
        let full = self.tr.merge(zf);
        let w = &self.scenario.weights;
        let mut j = 0.0;
        for k in 0..self.tr.k {
            let dx = full[Transcription::state_ix(k, 0)] - self.reference[k][0];
            let dy = full[Transcription::state_ix(k, 1)] - self.reference[k][1];
            let dth = full[Transcription::state_ix(k, 2)] - self.reference[k][2];
            j += w.task_weight * (dx * dx + dy * dy + w.heading_weight * dth * dth);
        }
        for s in 0..self.tr.s {
            let dt = full[self.tr.dt_ix(s)];
            let mut effort = 0.0;
            for c in 0..3 {
                let u = full[self.tr.u_ix(s, c)];
                effort += w.effort_diag[c] * u * u;
            }
            j += effort * dt + dt;
        }
        j
    }

    fn objective_grad(&self, zf: &[f64], g: &mut [f64]) {
        let full = self.tr.merge(zf);
        let w = &self.scenario.weights;
        g.fill(0.0);
        let mut add = |z: usize, v: f64| {
            let f = self.tr.free_of_z[z];
            if f >= 0 {
                g[f as usize] += v;
            }
        };
        for k in 0..self.tr.k {
            let zx = Transcription::state_ix(k, 0);
            add(zx, 2.0 * w.task_weight * (full[zx] - self.reference[k][0]));
            add(zx + 1, 2.0 * w.task_weight * (full[zx + 1] - self.reference[k][1]));
            add(
                zx + 2,
                2.0 * w.task_weight * w.heading_weight * (full[zx + 2] - self.reference[k][2]),
            );
        }
        for s in 0..self.tr.s {
            let dt = full[self.tr.dt_ix(s)];
            let mut effort = 0.0;
            for c in 0..3 {
                let u = full[self.tr.u_ix(s, c)];
                effort += w.effort_diag[c] * u * u;
                add(self.tr.u_ix(s, c), 2.0 * w.effort_diag[c] * u * dt);
            }
            add(self.tr.dt_ix(s), effort + 1.0);
        }
    }

    fn eval_eq(&self, zf: &[f64], out: &mut [f64]) {
        let full = self.tr.merge(zf);
        for s in 0..self.tr.s {
            let mut ix = [0usize; 16];
            self.continuity_inputs(s, &mut ix);
            let x0 = std::array::from_fn(|i| full[ix[i]]);
            let x1 = std::array::from_fn(|i| full[ix[6 + i]]);
            let u = std::array::from_fn(|i| full[ix[12 + i]]);
            let c = residual::continuity(&x0, &x1, &u, full[ix[15]]);
            out[6 * s..6 * s + 6].copy_from_slice(&c);
        }
    }

    fn eval_ineq(&self, zf: &[f64], out: &mut [f64]) {
        let full = self.tr.merge(zf);
        let mut ix = [0usize; 16];
        for (i, &con) in self.cons.iter().enumerate() {
            let n = self.con_inputs(con, &mut ix);
            let mut vals = [0.0f64; 16];
            for j in 0..n {
                vals[j] = full[ix[j]];
            }
            out[i] = self.con_eval(con, &vals[..n]);
        }
    }

    fn accumulate_eq_grad(&self, zf: &[f64], coeff: &[f64], g: &mut [f64]) {
        let full = self.tr.merge(zf);
        let mut jac = [0.0f64; 6 * 16];
        for s in 0..self.tr.s {
            let rows = &coeff[6 * s..6 * s + 6];
            if rows.iter().all(|&c| c == 0.0) {
                continue;
            }
            let mut ix = [0usize; 16];
            self.continuity_inputs(s, &mut ix);
            let vals: Vec<f64> = ix.iter().map(|&z| full[z]).collect();
            scalar::jacobian(
                |d, out| {
                    let x0 = std::array::from_fn(|i| d[i]);
                    let x1 = std::array::from_fn(|i| d[6 + i]);
                    let u = std::array::from_fn(|i| d[12 + i]);
                    let c = residual::continuity(&x0, &x1, &u, d[15]);
                    out.copy_from_slice(&c);
                },
                &vals,
                6,
                &mut jac,
            );
            for (j, &z) in ix.iter().enumerate() {
                let f = self.tr.free_of_z[z];
                if f < 0 {
                    continue;
                }
                let mut acc = 0.0;
                for r in 0..6 {
                    acc += rows[r] * jac[r * 16 + j];
                }
                g[f as usize] += acc;
            }
        }
    }

    fn accumulate_ineq_grad(&self, zf: &[f64], coeff: &[f64], g: &mut [f64]) {
        let full = self.tr.merge(zf);
        let mut ix = [0usize; 16];
        for (i, &con) in self.cons.iter().enumerate() {
            if coeff[i] == 0.0 {
                continue;
            }
            let n = self.con_inputs(con, &mut ix);
            let vals: Vec<f64> = ix[..n].iter().map(|&z| full[z]).collect();
            let mut grad = vec![0.0; n];
            scalar::gradient(|d| self.con_eval(con, d), &vals, &mut grad);
            for j in 0..n {
                let f = self.tr.free_of_z[ix[j]];
                if f >= 0 {
                    g[f as usize] += coeff[i] * grad[j];
                }
            }
        }
    }
}

/// Recompute the per-family worst residuals of a trajectory against a
/// scenario's limits. Solve diagnostics (objective, first_order,
/// iterations) are left at their defaults.
pub fn residual_report(scenario: &Scenario, knots: &[TrajectoryKnot]) -> ConstraintReport {
    let layout = &scenario.layout;
    let lim = &scenario.limits;
    let nw = layout.wheel_count();
    let mut rep = ConstraintReport::default();
    let n = knots.len();
    for (i, k) in knots.iter().enumerate() {
        let st = k.state;
        for wheel in 0..nw {
            if layout.steer_upper[wheel] - layout.steer_lower[wheel] < PI - 1e-9 {
                let r: f64 = residual::steer_limit(
                    st.theta,
                    st.vx,
                    st.vy,
                    st.omega,
                    layout.wheels[wheel],
                    layout.steer_lower[wheel],
                    layout.steer_upper[wheel],
                );
                rep.steer_limit = rep.steer_limit.max(r);
            }
            let r: f64 = residual::wheel_speed(
                st.theta,
                st.vx,
                st.vy,
                st.omega,
                layout.wheels[wheel],
                layout.speed_cap[wheel],
            );
            rep.wheel_speed = rep.wheel_speed.max(r);
        }
        if i + 1 < n {
            let next = knots[i + 1].state;
            let u = [k.control.ax, k.control.ay, k.control.alpha];
            let x0 = [st.x, st.y, st.theta, st.vx, st.vy, st.omega];
            let x1 = [next.x, next.y, next.theta, next.vx, next.vy, next.omega];
            let c = residual::continuity(&x0, &x1, &u, k.dt);
            for v in c {
                rep.continuity = rep.continuity.max(v.abs());
            }
            for wheel in 0..nw {
                let r: f64 = residual::steer_rate(
                    st.theta,
                    st.vx,
                    st.vy,
                    st.omega,
                    next.theta,
                    next.vx,
                    next.vy,
                    next.omega,
                    k.dt,
                    layout.wheels[wheel],
                    layout.steer_rate_cap[wheel],
                );
                rep.steer_rate = rep.steer_rate.max(r);
                let r: f64 = residual::wheel_accel(
                    st.theta,
                    st.omega,
                    &u,
                    layout.wheels[wheel],
                    layout.accel_cap[wheel],
                );
                rep.wheel_accel = rep.wheel_accel.max(r);
            }
            rep.dt_bounds = rep
                .dt_bounds
                .max(lim.dt_min - k.dt)
                .max(k.dt - lim.dt_max);
            for c in 0..3 {
                rep.control_bounds = rep.control_bounds.max(u[c].abs() - lim.accel_max[c]);
            }
        }
    }
    for t in trajectory::transition_keyframes(knots) {
        rep.transition = rep.transition.max(residual::mode_transition(knots[t].state.speed(), 1));
    }
    // Inequality families report violation only.
    rep.steer_limit = rep.steer_limit.max(0.0);
    rep.steer_rate = rep.steer_rate.max(0.0);
    rep.wheel_speed = rep.wheel_speed.max(0.0);
    rep.wheel_accel = rep.wheel_accel.max(0.0);
    rep.dt_bounds = rep.dt_bounds.max(0.0);
    rep.control_bounds = rep.control_bounds.max(0.0);
    rep
}

/// Collision sweep of the continuous motion the knots describe.
fn trajectory_collides(scenario: &Scenario, knots: &[TrajectoryKnot]) -> bool {
    let checker = CollisionChecker::new(scenario.grid.clone(), scenario.footprint);
    let spacing = 0.5 * scenario.grid.resolution();
    let circum = scenario.footprint.circumradius();
    for (i, k) in knots.iter().enumerate() {
        if checker.pose_collides(k.state.pose()) {
            return true;
        }
        if i + 1 >= knots.len() || k.dt <= 0.0 {
            continue;
        }
        let st = k.state;
        let u = k.control;
        let next = knots[i + 1].state;
        let chord = (next.x - st.x).hypot(next.y - st.y);
        let dtheta = (next.theta - st.theta).abs();
        let steps = ((chord + dtheta * circum) / spacing).ceil().max(1.0) as usize;
        for j in 1..steps {
            let tau = k.dt * j as f64 / steps as f64;
            let pose = [
                st.x + st.vx * tau + 0.5 * u.ax * tau * tau,
                st.y + st.vy * tau + 0.5 * u.ay * tau * tau,
                st.theta + st.omega * tau + 0.5 * u.alpha * tau * tau,
            ];
            if checker.pose_collides(pose) {
                return true;
            }
        }
    }
    false
}

/// Worst relative error between the transcription's analytic derivatives
/// and central finite differences, measured at `probes` jittered copies of
/// the warm start built from `initial`.
///
/// Each probe checks the objective gradient and the gradient of a weighted
/// sum over every constraint row, drawing fresh random +-1 weights per
/// probe so no single row's error can cancel against another. The jitter
/// stays small enough that durations remain positive and wheel speeds stay
/// away from zero, where the rate rows lose smoothness. Deterministic in
/// `seed`.
pub fn derivative_probe(
    scenario: &Scenario,
    initial: &[TrajectoryKnot],
    probes: usize,
    seed: u64,
) -> f64 {
    let dense = trajectory::densify(initial, &scenario.layout, &scenario.limits);
    let nlp = Nlp::new(scenario, &dense);
    let z0 = nlp.warm_start(&dense);
    let dim = z0.len();
    let mut state = seed;
    let mut unit = move || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut x = state;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut eqv = vec![0.0; nlp.n_eq()];
    let mut iqv = vec![0.0; nlp.n_ineq()];
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut z = z0.clone();
        for v in z.iter_mut() {
            *v += (unit() - 0.5) * 2.0e-2;
        }
        let mut ga = vec![0.0; dim];
        nlp.objective_grad(&z, &mut ga);
        worst = worst.max(gradient_error(&mut |p| nlp.objective(p), &mut z, &ga));

        let we: Vec<f64> =
            (0..nlp.n_eq()).map(|_| if unit() < 0.5 { -1.0 } else { 1.0 }).collect();
        let wi: Vec<f64> =
            (0..nlp.n_ineq()).map(|_| if unit() < 0.5 { -1.0 } else { 1.0 }).collect();
        let mut gc = vec![0.0; dim];
        nlp.accumulate_eq_grad(&z, &we, &mut gc);
        nlp.accumulate_ineq_grad(&z, &wi, &mut gc);
        let mut weighted = |p: &[f64]| {
            nlp.eval_eq(p, &mut eqv);
            nlp.eval_ineq(p, &mut iqv);
            let e: f64 = we.iter().zip(&eqv).map(|(a, b)| a * b).sum();
            let i: f64 = wi.iter().zip(&iqv).map(|(a, b)| a * b).sum();
            e + i
        };
        worst = worst.max(gradient_error(&mut weighted, &mut z, &gc));
    }
    worst
}

/// Max over coordinates of the guarded relative gap between `analytic`
/// and a central difference of `f`, with steps scaled to the coordinate.
fn gradient_error(f: &mut dyn FnMut(&[f64]) -> f64, z: &mut [f64], analytic: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..z.len() {
        let zi = z[i];
        let h = 1e-6 * zi.abs().max(1.0);
        z[i] = zi + h;
        let fp = f(z);
        z[i] = zi - h;
        let fm = f(z);
        z[i] = zi;
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
    }
    worst
}

/// Refine an initial trajectory for a scenario.
pub fn optimize(
    scenario: &Scenario,
    initial: &[TrajectoryKnot],
    opts: &OptimizeOptions,
) -> Result<OptimizedTrajectory, OptimizeError> {
    if initial.len() < 2 {
        return Err(OptimizeError::BadInitialGuess(
            "need at least two knots to refine".into(),
        ));
    }
    let start = initial[0].state;
    let s0 = scenario.start;
    if (start.x - s0.x).hypot(start.y - s0.y) > 1e-9
        || wrap_angle(start.theta - s0.theta).abs() > 1e-9
        || (start.vx - s0.vx).abs().max((start.vy - s0.vy).abs()) > 1e-9
    {
        return Err(OptimizeError::BadInitialGuess(
            "first knot does not match the scenario start".into(),
        ));
    }
    let last = initial.last().unwrap().state;
    let goal = scenario.goal;
    let cfg = &scenario.search;
    if (last.x - goal.x).hypot(last.y - goal.y) > cfg.goal_pos_tol + 1e-9
        || wrap_angle(last.theta - goal.theta).abs() > cfg.goal_heading_tol + 1e-9
    {
        return Err(OptimizeError::BadInitialGuess(
            "last knot is not within goal tolerance".into(),
        ));
    }

    let dense = trajectory::densify(initial, &scenario.layout, &scenario.limits);
    let nlp = Nlp::new(scenario, &dense);
    let z0 = nlp.warm_start(&dense);
    let initial_objective = nlp.objective(&z0);
    let res = solve::solve(
        &nlp,
        z0,
        &SolveConfig { max_iter: opts.max_iter, feas_tol: opts.feas_tol, opt_tol: opts.opt_tol },
    );

    let full = nlp.tr.merge(&res.z);
    let mut knots = dense.clone();
    for (k, knot) in knots.iter_mut().enumerate() {
        let zx = Transcription::state_ix(k, 0);
        knot.state = BodyState::new(
            full[zx],
            full[zx + 1],
            full[zx + 2],
            full[zx + 3],
            full[zx + 4],
            full[zx + 5],
        );
        if k < nlp.tr.s {
            knot.control = BodyControl::new(
                full[nlp.tr.u_ix(k, 0)],
                full[nlp.tr.u_ix(k, 1)],
                full[nlp.tr.u_ix(k, 2)],
            );
            knot.dt = full[nlp.tr.dt_ix(k)];
        } else {
            knot.control = BodyControl::default();
            knot.dt = 0.0;
        }
    }
    trajectory::refresh_wheel_states(&mut knots, &scenario.layout);
    trajectory::mark_keyframes(&mut knots);

    let mut report = residual_report(scenario, &knots);
    report.objective = nlp.objective(&res.z);
    report.initial_objective = initial_objective;
    report.first_order = res.first_order;
    report.iterations = res.iterations;

    let out = OptimizedTrajectory { knots, report };
    if trajectory_collides(scenario, &out.knots) {
        return Err(OptimizeError::Infeasible(Box::new(out.report)));
    }
    if res.converged && report.max_violation() <= opts.feas_tol {
        Ok(out)
    } else if res.out_of_iterations || report.max_violation() <= opts.feas_tol {
        // Budget ran out, or the result is feasible but stationarity was
        // not certified: either way the best iterate is worth returning.
        Err(OptimizeError::MaxIterations(Box::new(out)))
    } else {
        Err(OptimizeError::Infeasible(Box::new(out.report)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search;
    use crate::world::{Footprint, Limits, OccupancyGrid, SearchConfig, Weights};
    use crate::WheelLayout;

    fn scenario(goal: [f64; 3]) -> Scenario {
        let lim = std::f64::consts::FRAC_PI_2;
        Scenario {
            grid: OccupancyGrid::new(120, 120, 0.1, [-3.0, -3.0]),
            layout: WheelLayout::uniform(
                vec![[0.3, 0.25], [0.3, -0.25], [-0.3, 0.25], [-0.3, -0.25]],
                -lim,
                lim,
                2.0,
                6.0,
                1.0,
            ),
            footprint: Footprint::new(0.4, 0.3, 0.0),
            limits: Limits {
                v_max: 1.5,
                yaw_rate_max: 1.0,
                accel_max: [1.0, 1.0, 1.0],
                dt_min: 0.02,
                dt_max: 0.5,
            },
            weights: Weights::default(),
            search: SearchConfig { n_omega: 9, ..SearchConfig::default() },
            start: BodyState::default(),
            goal: BodyState::from_pose(goal),
        }
    }

    /// Tight goal tolerances keep the searched plan on the axis, which
    /// gives the refinement a clean symmetric reference.
    fn straight_scenario(goal: [f64; 3]) -> Scenario {
        let mut sc = scenario(goal);
        sc.search.goal_pos_tol = 0.05;
        sc.search.goal_heading_tol = 0.02;
        sc.search.pos_resolution = Some(0.05);
        sc
    }

    #[test]
    fn straight_line_refines_to_feasibility() {
        let sc = straight_scenario([3.0, 0.0, 0.0]);
        let initial = search::plan(&sc).unwrap();
        let out = optimize(&sc, &initial.knots, &OptimizeOptions::default()).unwrap();
        let rep = &out.report;
        assert!(rep.max_violation() <= 1e-6, "{rep:?}");
        // Endpoints are pinned exactly.
        let first = out.knots.first().unwrap().state;
        let last = out.knots.last().unwrap().state;
        assert_eq!((first.x, first.y), (0.0, 0.0));
        assert!((last.x - 3.0).abs() < 1e-12);
        assert!(last.y.abs() < 1e-12);
        assert!(wrap_angle(last.theta).abs() < 1e-12);
        assert!((last.vx.abs()).max(last.vy.abs()) < 1e-12);
        // Refinement does not worsen the objective.
        assert!(rep.objective <= rep.initial_objective + 1e-6, "{rep:?}");
    }

    #[test]
    fn rejects_initial_guess_from_other_scenario() {
        let sc = scenario([3.0, 0.0, 0.0]);
        let initial = search::plan(&sc).unwrap();
        let mut other = scenario([3.0, 0.0, 0.0]);
        other.start = BodyState::from_pose([0.5, 0.0, 0.0]);
        match optimize(&other, &initial.knots, &OptimizeOptions::default()) {
            Err(OptimizeError::BadInitialGuess(_)) => {}
            other => panic!("expected BadInitialGuess, got {other:?}"),
        }
        let mut far_goal = scenario([3.0, 0.0, 0.0]);
        far_goal.goal = BodyState::from_pose([4.0, 2.0, 0.0]);
        match optimize(&far_goal, &initial.knots, &OptimizeOptions::default()) {
            Err(OptimizeError::BadInitialGuess(_)) => {}
            other => panic!("expected BadInitialGuess, got {other:?}"),
        }
    }

    #[test]
    fn iteration_budget_returns_best_effort() {
        let sc = scenario([2.0, 1.0, 0.0]);
        let initial = search::plan(&sc).unwrap();
        let opts = OptimizeOptions { max_iter: 5, ..Default::default() };
        match optimize(&sc, &initial.knots, &opts) {
            Err(OptimizeError::MaxIterations(best)) => {
                assert_eq!(best.knots.first().unwrap().state, sc.start);
                assert_eq!(best.report.iterations, 5);
            }
            other => panic!("expected MaxIterations, got {other:?}"),
        }
    }

    #[test]
    fn dt_bounds_hold_exactly() {
        let sc = straight_scenario([3.0, 0.0, 0.0]);
        let initial = search::plan(&sc).unwrap();
        let out = optimize(&sc, &initial.knots, &OptimizeOptions::default()).unwrap();
        for k in &out.knots[..out.knots.len() - 1] {
            assert!(k.dt >= sc.limits.dt_min - 1e-15);
            assert!(k.dt <= sc.limits.dt_max + 1e-15);
        }
    }

    #[test]
    fn transition_knots_are_at_rest() {
        let sc = scenario([1.0, 1.5, 0.0]);
        let initial = search::plan(&sc).unwrap();
        match optimize(&sc, &initial.knots, &OptimizeOptions::default()) {
            Ok(out) => {
                for t in trajectory::transition_keyframes(&out.knots) {
                    let st = out.knots[t].state;
                    assert_eq!((st.vx, st.vy), (0.0, 0.0));
                }
            }
            Err(e) => panic!("optimize failed: {e}"),
        }
    }
}

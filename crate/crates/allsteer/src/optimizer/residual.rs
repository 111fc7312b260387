//! Constraint and dynamics residuals for the trajectory refinement stage.
//!
//! Everything here is generic over the scalar so the same expressions
//! produce values (f64) and exact derivatives (dual numbers). A body state
//! is packed as `[x, y, theta, vx, vy, omega]` and a control as
//! `[ax, ay, alpha]`. Inequality residuals are feasible when nonpositive.

use crate::scalar::{lit, Real};

/// Body dynamics: a double integrator in (x, y, theta).
fn deriv<R: Real>(x: &[R; 6], u: &[R; 3]) -> [R; 6] {
    [x[3], x[4], x[5], u[0], u[1], u[2]]
}

/// One fourth-order Runge-Kutta step. For this linear system the update is
/// exact, so knot states sampled from the continuous motion satisfy it to
/// rounding error.
pub fn rk4_step<R: Real>(x: &[R; 6], u: &[R; 3], dt: R) -> [R; 6] {
    let half = dt * lit(0.5);
    let k1 = deriv(x, u);
    let mut x2 = *x;
    for i in 0..6 {
        x2[i] = x[i] + half * k1[i];
    }
    let k2 = deriv(&x2, u);
    for i in 0..6 {
        x2[i] = x[i] + half * k2[i];
    }
    let k3 = deriv(&x2, u);
    for i in 0..6 {
        x2[i] = x[i] + dt * k3[i];
    }
    let k4 = deriv(&x2, u);
    let sixth = dt / lit(6.0);
    let mut out = *x;
    for i in 0..6 {
        out[i] = x[i] + sixth * (k1[i] + lit::<R>(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
    out
}

/// Defect between a knot and the integrated image of its predecessor.
pub fn continuity<R: Real>(x0: &[R; 6], x1: &[R; 6], u: &[R; 3], dt: R) -> [R; 6] {
    let pred = rk4_step(x0, u, dt);
    let mut out = *x0;
    for i in 0..6 {
        out[i] = x1[i] - pred[i];
    }
    out
}

/// Body-frame velocity of a wheel at mount point `w`.
pub fn wheel_velocity_body<R: Real>(theta: R, vx: R, vy: R, omega: R, w: [f64; 2]) -> [R; 2] {
    let (s, c) = theta.sin_cos();
    // Rotate the world velocity into the body, add the spin term.
    [
        c * vx + s * vy - omega * lit(w[1]),
        -s * vx + c * vy + omega * lit(w[0]),
    ]
}

fn cross2<R: Real>(a: [R; 2], b: [R; 2]) -> R {
    a[0] * b[1] - a[1] * b[0]
}

/// Steering-cone residual: nonpositive exactly when the wheel velocity
/// direction lies in the cone spanned by the limit edges or in its mirror
/// through the origin (the wheel rolling backward). Zero velocity is
/// feasible. Callers skip wheels whose span reaches pi, where the cone and
/// its mirror cover every direction.
pub fn steer_limit<R: Real>(
    theta: R,
    vx: R,
    vy: R,
    omega: R,
    w: [f64; 2],
    lo: f64,
    hi: f64,
) -> R {
    let b = wheel_velocity_body(theta, vx, vy, omega, w);
    let e_hi = [lit(hi.cos()), lit(hi.sin())];
    let e_lo = [lit(lo.cos()), lit(lo.sin())];
    cross2(b, e_hi) * cross2(b, e_lo)
}

/// Steering-rate residual between consecutive knots: nonpositive when the
/// angle between the body-frame wheel velocities stays within `rate * dt`.
/// Either velocity vanishing makes the residual zero (feasible), so rest
/// knots never fight direction reversals.
#[allow(clippy::too_many_arguments)]
pub fn steer_rate<R: Real>(
    theta0: R,
    vx0: R,
    vy0: R,
    omega0: R,
    theta1: R,
    vx1: R,
    vy1: R,
    omega1: R,
    dt: R,
    w: [f64; 2],
    rate: f64,
) -> R {
    let b0 = wheel_velocity_body(theta0, vx0, vy0, omega0, w);
    let b1 = wheel_velocity_body(theta1, vx1, vy1, omega1, w);
    let n0 = (b0[0] * b0[0] + b0[1] * b0[1]).sqrt();
    let n1 = (b1[0] * b1[0] + b1[1] * b1[1]).sqrt();
    n0 * n1 * (lit::<R>(rate) * dt).cos() - (b0[0] * b1[0] + b0[1] * b1[1])
}

/// Wheel speed residual: squared speed past the squared cap.
pub fn wheel_speed<R: Real>(theta: R, vx: R, vy: R, omega: R, w: [f64; 2], cap: f64) -> R {
    let b = wheel_velocity_body(theta, vx, vy, omega, w);
    b[0] * b[0] + b[1] * b[1] - lit(cap * cap)
}

/// Wheel acceleration residual: squared magnitude of the wheel contact
/// acceleration past the squared cap. The wheel sees the body acceleration
/// plus the centripetal and Euler terms of the spin.
pub fn wheel_accel<R: Real>(theta: R, omega: R, u: &[R; 3], w: [f64; 2], cap: f64) -> R {
    let (s, c) = theta.sin_cos();
    let (wx, wy) = (lit::<R>(w[0]), lit::<R>(w[1]));
    let om2 = omega * omega;
    // R(theta) * w and K(theta) * w.
    let rw = [c * wx - s * wy, s * wx + c * wy];
    let kw = [-s * wx - c * wy, c * wx - s * wy];
    let ax = u[0] - om2 * rw[0] + u[2] * kw[0];
    let ay = u[1] - om2 * rw[1] + u[2] * kw[1];
    ax * ax + ay * ay - lit(cap * cap)
}

/// Rolling-pattern transition residual, reported at phase boundaries: body
/// speed weighted by how many neighboring segments disagree on the rolling
/// directions. Zero exactly when direction changes happen at rest.
pub fn mode_transition(speed: f64, changed_sides: usize) -> f64 {
    speed * changed_sides as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{gradient, Dual};
    use std::f64::consts::PI;

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    #[test]
    fn rk4_constant_push_from_rest() {
        let x = [0.0f64; 6];
        let u = [2.0, 0.0, 0.0];
        let n = rk4_step(&x, &u, 0.5);
        assert!((n[0] - 0.25).abs() < 1e-15);
        assert!((n[3] - 1.0).abs() < 1e-15);
        assert_eq!(n[1], 0.0);
        assert_eq!(n[4], 0.0);
    }

    #[test]
    fn rk4_matches_closed_form() {
        let mut s = 7u64;
        for _ in 0..200 {
            let x: [f64; 6] = std::array::from_fn(|_| splitmix(&mut s) * 3.0);
            let u: [f64; 3] = std::array::from_fn(|_| splitmix(&mut s) * 2.0);
            let dt = splitmix(&mut s).abs() * 0.5 + 0.01;
            let n = rk4_step(&x, &u, dt);
            for i in 0..3 {
                let exact = x[i] + x[i + 3] * dt + 0.5 * u[i] * dt * dt;
                assert!((n[i] - exact).abs() < 1e-12);
                assert!((n[i + 3] - (x[i + 3] + u[i] * dt)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn continuity_zero_on_integrated_pair() {
        let x0 = [1.0, -2.0, 0.3, 0.5, 0.1, -0.2];
        let u = [0.4, -0.3, 0.1];
        let x1 = rk4_step(&x0, &u, 0.25);
        let c = continuity(&x0, &x1, &u, 0.25);
        for v in c {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn steer_limit_known_cases() {
        let lim = 75.0f64.to_radians();
        let w = [0.3, 0.25];
        // Pure forward motion: wheel velocity at 0 degrees, inside the cone.
        let r = steer_limit(0.0, 1.0, 0.0, 0.0, w, -lim, lim);
        assert!(r < 0.0, "{r}");
        // Velocity at 80 degrees: outside.
        let (vx, vy) = (80f64.to_radians().cos(), 80f64.to_radians().sin());
        let r = steer_limit(0.0, vx, vy, 0.0, w, -lim, lim);
        assert!(r > 0.0, "{r}");
        // Exactly on the edge: zero up to rounding.
        let (vx, vy) = (lim.cos(), lim.sin());
        let r = steer_limit(0.0, vx, vy, 0.0, w, -lim, lim);
        assert!(r.abs() < 1e-12, "{r}");
        // Antipode of a feasible direction is feasible: backward rolling.
        let r = steer_limit(0.0, -1.0, 0.0, 0.0, w, -lim, lim);
        assert!(r < 0.0, "{r}");
        // Zero velocity sits on the boundary of feasibility.
        let r = steer_limit(0.0, 0.0, 0.0, 0.0, w, -lim, lim);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn steer_limit_ignores_world_heading() {
        // Rotating both the body and the velocity leaves the residual alone.
        let lim = 40.0f64.to_radians();
        let w = [0.2, -0.1];
        let base: f64 = steer_limit(0.0, 0.9, 0.3, 0.4, w, -lim, lim);
        let th: f64 = 1.1;
        let (s, c) = th.sin_cos();
        let r = steer_limit(th, c * 0.9 - s * 0.3, s * 0.9 + c * 0.3, 0.4, w, -lim, lim);
        assert!((base - r).abs() < 1e-12);
    }

    #[test]
    fn steer_rate_known_cases() {
        let w = [0.0, 0.0];
        let rate = 15.0f64.to_radians();
        let turn = |deg: f64| {
            let a = deg.to_radians();
            (a.cos(), a.sin())
        };
        // 10 degree swing against a 15 degree budget: feasible.
        let (vx, vy) = turn(10.0);
        let r = steer_rate(0.0, 1.0, 0.0, 0.0, 0.0, vx, vy, 0.0, 1.0, w, rate);
        assert!(r < 0.0, "{r}");
        // 20 degree swing: violated.
        let (vx, vy) = turn(20.0);
        let r = steer_rate(0.0, 1.0, 0.0, 0.0, 0.0, vx, vy, 0.0, 1.0, w, rate);
        assert!(r > 0.0, "{r}");
        // A resting endpoint makes the residual vanish.
        let r = steer_rate(0.0, 0.0, 0.0, 0.0, 0.0, vx, vy, 0.0, 1.0, w, rate);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn wheel_speed_matches_kinematics() {
        use crate::kinematics::wheel_velocity;
        use crate::BodyState;
        let mut s = 11u64;
        for _ in 0..100 {
            let st = BodyState::new(
                0.0,
                0.0,
                splitmix(&mut s) * 3.0,
                splitmix(&mut s),
                splitmix(&mut s),
                splitmix(&mut s),
            );
            let w = [splitmix(&mut s) * 0.4, splitmix(&mut s) * 0.4];
            let cap = 1.3;
            let m = wheel_velocity(&st, w);
            let r = wheel_speed(st.theta, st.vx, st.vy, st.omega, w, cap);
            assert!((r - (m.speed * m.speed - cap * cap)).abs() < 1e-12);
        }
    }

    #[test]
    fn wheel_accel_matches_kinematics() {
        use crate::kinematics::wheel_acceleration;
        use crate::{BodyControl, BodyState};
        let mut s = 13u64;
        for _ in 0..100 {
            let st = BodyState::new(
                0.0,
                0.0,
                splitmix(&mut s) * 3.0,
                splitmix(&mut s),
                splitmix(&mut s),
                splitmix(&mut s),
            );
            let u = [splitmix(&mut s), splitmix(&mut s), splitmix(&mut s)];
            let w = [splitmix(&mut s) * 0.4, splitmix(&mut s) * 0.4];
            let a = wheel_acceleration(&st, &BodyControl::new(u[0], u[1], u[2]), w);
            let r = wheel_accel(st.theta, st.omega, &u, w, 0.0);
            assert!((r - (a[0] * a[0] + a[1] * a[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_transition_scales_with_speed_and_sides() {
        assert_eq!(mode_transition(0.25, 2), 0.5);
        assert_eq!(mode_transition(0.0, 2), 0.0);
        assert_eq!(mode_transition(1.0, 0), 0.0);
    }

    /// Central-difference check of every residual's dual-number gradient.
    #[test]
    fn gradients_match_finite_differences() {
        let w = [0.31, -0.22];
        let cases: Vec<(usize, Box<dyn Fn(&[Dual]) -> Dual>)> = vec![
            (4, Box::new(move |z: &[Dual]| steer_limit(z[0], z[1], z[2], z[3], w, -1.1, 0.9))),
            (4, Box::new(move |z: &[Dual]| wheel_speed(z[0], z[1], z[2], z[3], w, 1.2))),
            (6, Box::new(move |z: &[Dual]| {
                wheel_accel(z[0], z[1], &[z[2], z[3], z[4]], w, 1.5) * z[5]
            })),
            (9, Box::new(move |z: &[Dual]| {
                steer_rate(z[0], z[1], z[2], z[3], z[4], z[5], z[6], z[7], z[8], w, 0.4)
            })),
            (16, Box::new(move |z: &[Dual]| {
                let x0 = [z[0], z[1], z[2], z[3], z[4], z[5]];
                let x1 = [z[6], z[7], z[8], z[9], z[10], z[11]];
                let u = [z[12], z[13], z[14]];
                let c = continuity(&x0, &x1, &u, z[15]);
                c.iter().fold(Dual::constant(0.0), |acc, v| acc + *v * *v)
            })),
        ];
        let mut s = 17u64;
        for (dim, f) in &cases {
            for _ in 0..20 {
                let x: Vec<f64> = (0..*dim)
                    .map(|i| {
                        let v = splitmix(&mut s);
                        // Keep dt-like trailing inputs positive.
                        if i == dim - 1 {
                            v.abs() * 0.4 + 0.05
                        } else {
                            v
                        }
                    })
                    .collect();
                let mut grad = vec![0.0; *dim];
                gradient(|z| f(z), &x, &mut grad);
                let h = 1e-6;
                for i in 0..*dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fp = f(&xp.iter().map(|&v| Dual::constant(v)).collect::<Vec<_>>()).val;
                    let fm = f(&xm.iter().map(|&v| Dual::constant(v)).collect::<Vec<_>>()).val;
                    let fd = (fp - fm) / (2.0 * h);
                    let scale = 1.0 + grad[i].abs().max(fd.abs());
                    assert!(
                        (grad[i] - fd).abs() / scale < 1e-5,
                        "input {i}: ad {} vs fd {fd}",
                        grad[i]
                    );
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(128))]

        /// The cone test agrees with direct angle membership away from the
        /// edges, counting the mirrored cone as feasible.
        #[test]
        fn steer_limit_matches_angle_membership(
            lo in -1.3f64..0.0, hi in 0.0f64..1.3, phi in -PI..PI,
        ) {
            let in_cone = |a: f64| lo <= a && a <= hi;
            let mirrored = crate::kinematics::wrap_angle(phi + PI);
            let expect = in_cone(phi) || in_cone(mirrored);
            let margin = (phi - lo).abs().min((phi - hi).abs())
                .min((mirrored - lo).abs()).min((mirrored - hi).abs());
            proptest::prop_assume!(margin > 1e-6);
            let r: f64 = steer_limit(0.0, phi.cos(), phi.sin(), 0.0, [0.0, 0.0], lo, hi);
            proptest::prop_assert_eq!(r <= 0.0, expect);
        }
    }
}

//! Rigid-body kinematics of an all-wheel-steering vehicle.
//!
//! The body moves in the plane with pose `(x, y, theta)` and world-frame
//! velocity `(vx, vy, omega)`. Whenever `omega` is nonzero the motion is
//! instantaneously a pure rotation about a ground point, the instantaneous
//! center of motion (ICM). Steerable wheels mounted at fixed body positions
//! must roll perpendicular to their ray from the ICM; everything in this
//! module follows from that constraint.
//!
//! All functions are generic over [`Real`] so the same formulas serve both
//! numeric evaluation and forward-mode differentiation.

use crate::scalar::{lit, Real};

/// Angular speeds below this leave the ICM undefined (radius diverges).
pub const OMEGA_SINGULAR: f64 = 1e-6;

/// Wheel speeds below this leave the steering direction undefined.
pub const V_STEER_EPS: f64 = 1e-9;

/// Planar state: world pose and world-frame velocity.
///
/// `theta` is stored unwrapped (accumulated, not reduced mod 2pi) so that
/// finite differences and continuity constraints see a smooth signal.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyState<R: Real> {
    pub x: R,
    pub y: R,
    pub theta: R,
    pub vx: R,
    pub vy: R,
    pub omega: R,
}

impl<R: Real> BodyState<R> {
    pub fn new(x: R, y: R, theta: R, vx: R, vy: R, omega: R) -> Self {
        BodyState { x, y, theta, vx, vy, omega }
    }

    pub fn from_pose(pose: [R; 3]) -> Self {
        BodyState { x: pose[0], y: pose[1], theta: pose[2], ..Default::default() }
    }

    pub fn pose(&self) -> [R; 3] {
        [self.x, self.y, self.theta]
    }

    /// Translational speed, frame independent.
    pub fn speed(&self) -> R {
        self.vx.hypot(self.vy)
    }
}

/// World-frame body acceleration `(ax, ay, alpha)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyControl<R: Real> {
    pub ax: R,
    pub ay: R,
    pub alpha: R,
}

impl<R: Real> BodyControl<R> {
    pub fn new(ax: R, ay: R, alpha: R) -> Self {
        BodyControl { ax, ay, alpha }
    }
}

/// Vector from the ICM to the body origin, expressed in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcmRadius<R: Real> {
    pub r: [R; 2],
}

impl<R: Real> IcmRadius<R> {
    /// ICM position in the body frame (the origin minus the radius vector).
    pub fn icm_body(&self) -> [R; 2] {
        [-self.r[0], -self.r[1]]
    }

    /// Spherical chart `(eps, psi)` with `tan(eps) = |r|` and `psi` the
    /// bearing of the ICM as seen from the body origin. `r = 0` maps to
    /// `(0, 0)` by convention.
    pub fn spherical(&self) -> (R, R) {
        let n = self.r[0].hypot(self.r[1]);
        if n == R::zero() {
            (R::zero(), R::zero())
        } else {
            (n.atan(), (-self.r[1]).atan2(-self.r[0]))
        }
    }
}

/// Velocity state of one wheel.
#[derive(Clone, Copy, Debug)]
pub struct WheelMotion<R: Real> {
    pub v_world: [R; 2],
    pub v_body: [R; 2],
    /// Heading of the wheel velocity in the world frame, in `(-pi, pi]`.
    pub steer_world: R,
    /// Steering angle relative to the body, in `(-pi, pi]`.
    pub steer_body: R,
    /// Wheel speed (unsigned; see [`directed`] for rolling-direction sign).
    pub speed: R,
    /// False when the speed is below [`V_STEER_EPS`] and the steering
    /// angles are meaningless placeholders (zero).
    pub steer_defined: bool,
}

/// Wheel mounting positions and per-wheel actuation limits.
///
/// Steering limits are body-frame angles in `(-pi, pi]` with
/// `steer_lower < steer_upper` per wheel.
#[derive(Clone, Debug, PartialEq)]
pub struct WheelLayout {
    pub wheels: Vec<[f64; 2]>,
    pub steer_lower: Vec<f64>,
    pub steer_upper: Vec<f64>,
    pub speed_cap: Vec<f64>,
    pub accel_cap: Vec<f64>,
    pub steer_rate_cap: Vec<f64>,
}

impl WheelLayout {
    /// Layout with identical limits on every wheel.
    pub fn uniform(
        wheels: Vec<[f64; 2]>,
        steer_lower: f64,
        steer_upper: f64,
        speed_cap: f64,
        accel_cap: f64,
        steer_rate_cap: f64,
    ) -> Self {
        let n = wheels.len();
        WheelLayout {
            wheels,
            steer_lower: vec![steer_lower; n],
            steer_upper: vec![steer_upper; n],
            speed_cap: vec![speed_cap; n],
            accel_cap: vec![accel_cap; n],
            steer_rate_cap: vec![steer_rate_cap; n],
        }
    }

    pub fn wheel_count(&self) -> usize {
        self.wheels.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.wheels.len();
        if n == 0 {
            return Err("layout has no wheels".into());
        }
        for (name, v) in [
            ("steer_lower", &self.steer_lower),
            ("steer_upper", &self.steer_upper),
            ("wheel_speed_max", &self.speed_cap),
            ("wheel_accel_max", &self.accel_cap),
            ("steer_rate_max", &self.steer_rate_cap),
        ] {
            if v.len() != n {
                return Err(format!("{name} has {} entries for {n} wheels", v.len()));
            }
        }
        for i in 0..n {
            let (lo, hi) = (self.steer_lower[i], self.steer_upper[i]);
            if !(-std::f64::consts::PI < lo && lo < hi && hi <= std::f64::consts::PI) {
                return Err(format!("wheel {i}: steering limits [{lo}, {hi}] out of order"));
            }
            if self.speed_cap[i] <= 0.0 || self.accel_cap[i] <= 0.0 || self.steer_rate_cap[i] <= 0.0
            {
                return Err(format!("wheel {i}: actuation limits must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    /// |omega| below the singular threshold: the ICM radius diverges.
    #[error("angular speed {omega:.3e} is below the ICM singularity threshold")]
    SingularIcm { omega: f64 },
    /// Velocity points along the negative steering axis where the
    /// half-angle form of the steering angle is undefined.
    #[error("velocity is antiparallel to the steering axis; half-angle form undefined")]
    DegenerateBackward,
}

// Small fixed-size helpers; the planar algebra never needs more.

pub fn mat_vec<R: Real>(m: [[R; 2]; 2], v: [R; 2]) -> [R; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn mat_t<R: Real>(m: [[R; 2]; 2]) -> [[R; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn dot<R: Real>(a: [R; 2], b: [R; 2]) -> R {
    a[0] * b[0] + a[1] * b[1]
}

/// Planar cross product (z component of the 3-D cross).
pub fn cross<R: Real>(a: [R; 2], b: [R; 2]) -> R {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm<R: Real>(a: [R; 2]) -> R {
    a[0].hypot(a[1])
}

/// Rotation by `theta`: maps body coordinates to world coordinates.
pub fn rotation<R: Real>(theta: R) -> [[R; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// `K(theta)`: rotation by `theta + pi/2`. Satisfies `d/dtheta R = K` and
/// maps a radius vector to the velocity it induces under unit spin.
pub fn kappa<R: Real>(theta: R) -> [[R; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[-s, -c], [c, -s]]
}

/// Angular-velocity matrix `omega(theta) = K(theta) * thetadot`.
pub fn omega_matrix<R: Real>(theta: R, omega: R) -> [[R; 2]; 2] {
    let k = kappa(theta);
    [[k[0][0] * omega, k[0][1] * omega], [k[1][0] * omega, k[1][1] * omega]]
}

/// Normalize an angle into `(-pi, pi]`.
pub fn wrap_angle<R: Real>(a: R) -> R {
    let two_pi = R::PI() + R::PI();
    let mut a = a % two_pi;
    if a > R::PI() {
        a = a - two_pi;
    } else if a <= -R::PI() {
        a = a + two_pi;
    }
    a
}

/// ICM radius vector from a body state: `r = K(theta)^T [vx/omega, vy/omega]`.
///
/// `r` points from the ICM to the body origin, in body coordinates.
/// Fails when `|omega| < OMEGA_SINGULAR`.
pub fn icm_radius<R: Real>(s: &BodyState<R>) -> Result<IcmRadius<R>, KinematicsError> {
    icm_radius_with(s, lit(OMEGA_SINGULAR))
}

/// [`icm_radius`] with an explicit singularity threshold.
pub fn icm_radius_with<R: Real>(
    s: &BodyState<R>,
    omega_eps: R,
) -> Result<IcmRadius<R>, KinematicsError> {
    if s.omega.abs() < omega_eps {
        return Err(KinematicsError::SingularIcm {
            omega: num_traits::ToPrimitive::to_f64(&s.omega).unwrap_or(f64::NAN),
        });
    }
    let kt = mat_t(kappa(s.theta));
    let r = mat_vec(kt, [s.vx / s.omega, s.vy / s.omega]);
    Ok(IcmRadius { r })
}

/// World-frame body velocity induced by spinning at `omega` about the ICM
/// described by `r` (body frame): `v = K(theta) * omega * r`.
pub fn body_velocity_from_icm<R: Real>(r: [R; 2], omega: R, theta: R) -> [R; 2] {
    let v = mat_vec(kappa(theta), r);
    [v[0] * omega, v[1] * omega]
}

/// Velocity of the wheel mounted at body position `w`.
///
/// `v_w = v + K(theta) * omega * w`; the steering angle is the heading of
/// that velocity, in the world frame and relative to the body.
pub fn wheel_velocity<R: Real>(s: &BodyState<R>, w: [R; 2]) -> WheelMotion<R> {
    wheel_velocity_with(s, w, lit(V_STEER_EPS))
}

/// [`wheel_velocity`] with an explicit steering-definition threshold.
pub fn wheel_velocity_with<R: Real>(s: &BodyState<R>, w: [R; 2], steer_eps: R) -> WheelMotion<R> {
    let spin = mat_vec(kappa(s.theta), w);
    let v_world = [s.vx + spin[0] * s.omega, s.vy + spin[1] * s.omega];
    let v_body = mat_vec(mat_t(rotation(s.theta)), v_world);
    let speed = norm(v_world);
    if speed <= steer_eps {
        WheelMotion {
            v_world,
            v_body,
            steer_world: R::zero(),
            steer_body: R::zero(),
            speed,
            steer_defined: false,
        }
    } else {
        let steer_world = wrap_angle(v_world[1].atan2(v_world[0]));
        WheelMotion {
            v_world,
            v_body,
            steer_world,
            steer_body: wrap_angle(steer_world - s.theta),
            speed,
            steer_defined: true,
        }
    }
}

/// Steering angle of a velocity via the half-angle form
/// `2*atan(vy / (|v| + vx))`, which avoids the atan2 branch cut everywhere
/// except exactly backward along the axis.
pub fn steering_halfangle<R: Real>(v: [R; 2]) -> Result<R, KinematicsError> {
    let denom = norm(v) + v[0];
    if denom <= R::zero() {
        return Err(KinematicsError::DegenerateBackward);
    }
    Ok(lit::<R>(2.0) * (v[1] / denom).atan())
}

/// Acceleration of the wheel at body position `w` under body acceleration
/// `c`, including centripetal and Euler terms:
/// `a_w = a - R(theta)*omega^2*w + K(theta)*alpha*w`.
pub fn wheel_acceleration<R: Real>(
    s: &BodyState<R>,
    c: &BodyControl<R>,
    w: [R; 2],
) -> [R; 2] {
    let centripetal = mat_vec(rotation(s.theta), w);
    let euler = mat_vec(kappa(s.theta), w);
    let om2 = s.omega * s.omega;
    [
        c.ax - centripetal[0] * om2 + euler[0] * c.alpha,
        c.ay - centripetal[1] * om2 + euler[1] * c.alpha,
    ]
}

/// Resolve a raw velocity heading into a steering angle and signed speed for
/// a given rolling direction. `flag = +1` steers along the velocity;
/// `flag = -1` steers opposite and rolls backward.
pub fn directed<R: Real>(steer_raw: R, speed: R, flag: i8) -> (R, R) {
    if flag >= 0 {
        (steer_raw, speed)
    } else {
        (wrap_angle(steer_raw + R::PI()), -speed)
    }
}

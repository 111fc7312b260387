//! Scalar abstraction for the geometric core.
//!
//! Every kinematic formula and every optimizer residual in this crate is
//! written once, generically over [`Real`]. Instantiated with `f64`/`f32` it
//! evaluates values; instantiated with [`Dual`] it evaluates exact first
//! derivatives, which is how the solver obtains its gradients.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};

/// Floating-point scalar usable by the kinematics and residual functions.
///
/// Blanket-implemented for anything with the required `num-traits`
/// capabilities, which covers `f32`, `f64` and [`Dual`].
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssignOps + std::fmt::Debug + Default + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + NumAssignOps + std::fmt::Debug + Default + 'static
{
}

/// Shorthand for lifting an `f64` literal into a generic scalar.
#[inline]
pub fn lit<R: Real>(v: f64) -> R {
    R::from_f64(v).expect("literal out of range for scalar type")
}

/// Forward-mode dual number: value plus derivative along one seed direction.
///
/// `Dual` implements `Float`, so any function written over [`Real`] can be
/// differentiated by seeding `dot = 1` on the input of interest. Non-smooth
/// points (`abs` at 0, `max` ties) take a one-sided subderivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    #[inline]
    pub fn new(val: f64, dot: f64) -> Self {
        Dual { val, dot }
    }

    /// Constant: derivative zero.
    #[inline]
    pub fn constant(val: f64) -> Self {
        Dual { val, dot: 0.0 }
    }

    /// Seeded variable: derivative one.
    #[inline]
    pub fn var(val: f64) -> Self {
        Dual { val, dot: 1.0 }
    }

    #[inline]
    fn chain(self, val: f64, dval: f64) -> Self {
        Dual { val, dot: self.dot * dval }
    }
}

impl From<f64> for Dual {
    fn from(v: f64) -> Self {
        Dual::constant(v)
    }
}

impl std::ops::Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual { val: -self.val, dot: -self.dot }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual { val: self.val + o.val, dot: self.dot + o.dot }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual { val: self.val - o.val, dot: self.dot - o.dot }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual { val: self.val * o.val, dot: self.dot * o.val + self.val * o.dot }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        Dual {
            val: self.val / o.val,
            dot: (self.dot * o.val - self.val * o.dot) / (o.val * o.val),
        }
    }
}

impl std::ops::Rem for Dual {
    type Output = Dual;
    #[inline]
    fn rem(self, o: Dual) -> Dual {
        // d/dx (x mod y) = 1 a.e.; the quotient is locally constant.
        let q = (self.val / o.val).trunc();
        Dual { val: self.val % o.val, dot: self.dot - q * o.dot }
    }
}

impl std::ops::AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}
impl std::ops::SubAssign for Dual {
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}
impl std::ops::MulAssign for Dual {
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}
impl std::ops::DivAssign for Dual {
    fn div_assign(&mut self, o: Dual) {
        *self = *self / o;
    }
}
impl std::ops::RemAssign for Dual {
    fn rem_assign(&mut self, o: Dual) {
        *self = *self % o;
    }
}

impl num_traits::Zero for Dual {
    fn zero() -> Self {
        Dual::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.val == 0.0 && self.dot == 0.0
    }
}

impl num_traits::One for Dual {
    fn one() -> Self {
        Dual::constant(1.0)
    }
}

impl num_traits::Num for Dual {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dual::constant)
    }
}

impl num_traits::ToPrimitive for Dual {
    fn to_i64(&self) -> Option<i64> {
        self.val.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.val.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.val)
    }
}

impl num_traits::NumCast for Dual {
    fn from<T: num_traits::ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Dual::constant)
    }
}

impl num_traits::FromPrimitive for Dual {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Dual::constant(n as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Dual::constant(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Dual::constant(n))
    }
}

macro_rules! dual_consts {
    ($($name:ident),* $(,)?) => {
        $( fn $name() -> Self { Dual::constant(f64::$name()) } )*
    };
}

impl FloatConst for Dual {
    dual_consts!(
        E,
        FRAC_1_PI,
        FRAC_1_SQRT_2,
        FRAC_2_PI,
        FRAC_2_SQRT_PI,
        FRAC_PI_2,
        FRAC_PI_3,
        FRAC_PI_4,
        FRAC_PI_6,
        FRAC_PI_8,
        LN_10,
        LN_2,
        LOG10_E,
        LOG2_E,
        PI,
        SQRT_2,
    );
}

impl Float for Dual {
    fn nan() -> Self {
        Dual::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Dual::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Dual::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Dual::constant(-0.0)
    }
    fn min_value() -> Self {
        Dual::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Dual::constant(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Dual::constant(f64::MAX)
    }
    fn epsilon() -> Self {
        Dual::constant(f64::EPSILON)
    }

    fn is_nan(self) -> bool {
        self.val.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.val.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.val.is_finite()
    }
    fn is_normal(self) -> bool {
        self.val.is_normal()
    }
    fn classify(self) -> std::num::FpCategory {
        self.val.classify()
    }
    fn is_sign_positive(self) -> bool {
        self.val.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.val.is_sign_negative()
    }

    fn floor(self) -> Self {
        Dual::constant(self.val.floor())
    }
    fn ceil(self) -> Self {
        Dual::constant(self.val.ceil())
    }
    fn round(self) -> Self {
        Dual::constant(self.val.round())
    }
    fn trunc(self) -> Self {
        Dual::constant(self.val.trunc())
    }
    fn fract(self) -> Self {
        Dual { val: self.val.fract(), dot: self.dot }
    }

    fn abs(self) -> Self {
        self.chain(self.val.abs(), if self.val == 0.0 { 0.0 } else { self.val.signum() })
    }
    fn signum(self) -> Self {
        Dual::constant(self.val.signum())
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        Dual {
            val: self.val.mul_add(a.val, b.val),
            dot: self.dot * a.val + self.val * a.dot + b.dot,
        }
    }
    fn recip(self) -> Self {
        self.chain(self.val.recip(), -1.0 / (self.val * self.val))
    }
    fn powi(self, n: i32) -> Self {
        self.chain(self.val.powi(n), f64::from(n) * self.val.powi(n - 1))
    }
    fn powf(self, p: Self) -> Self {
        let val = self.val.powf(p.val);
        let dself = p.val * self.val.powf(p.val - 1.0) * self.dot;
        let dp = if p.dot == 0.0 { 0.0 } else { val * self.val.ln() * p.dot };
        Dual { val, dot: dself + dp }
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn cbrt(self) -> Self {
        let c = self.val.cbrt();
        self.chain(c, 1.0 / (3.0 * c * c))
    }
    fn hypot(self, o: Self) -> Self {
        let h = self.val.hypot(o.val);
        if h == 0.0 {
            Dual { val: 0.0, dot: 0.0 }
        } else {
            Dual { val: h, dot: (self.val * self.dot + o.val * o.dot) / h }
        }
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.val.exp2();
        self.chain(e, e * std::f64::consts::LN_2)
    }
    fn exp_m1(self) -> Self {
        self.chain(self.val.exp_m1(), self.val.exp())
    }
    fn ln(self) -> Self {
        self.chain(self.val.ln(), 1.0 / self.val)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.chain(self.val.log2(), 1.0 / (self.val * std::f64::consts::LN_2))
    }
    fn log10(self) -> Self {
        self.chain(self.val.log10(), 1.0 / (self.val * std::f64::consts::LN_10))
    }

    fn max(self, o: Self) -> Self {
        if self.val >= o.val {
            self
        } else {
            o
        }
    }
    fn min(self, o: Self) -> Self {
        if self.val <= o.val {
            self
        } else {
            o
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, o: Self) -> Self {
        (self - o).max(Dual::constant(0.0))
    }

    fn sin(self) -> Self {
        self.chain(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.val.cos(), -self.val.sin())
    }
    fn tan(self) -> Self {
        let c = self.val.cos();
        self.chain(self.val.tan(), 1.0 / (c * c))
    }
    fn asin(self) -> Self {
        self.chain(self.val.asin(), 1.0 / (1.0 - self.val * self.val).sqrt())
    }
    fn acos(self) -> Self {
        self.chain(self.val.acos(), -1.0 / (1.0 - self.val * self.val).sqrt())
    }
    fn atan(self) -> Self {
        self.chain(self.val.atan(), 1.0 / (1.0 + self.val * self.val))
    }
    fn atan2(self, x: Self) -> Self {
        let d = self.val * self.val + x.val * x.val;
        Dual {
            val: self.val.atan2(x.val),
            dot: if d == 0.0 { 0.0 } else { (x.val * self.dot - self.val * x.dot) / d },
        }
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn sinh(self) -> Self {
        self.chain(self.val.sinh(), self.val.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.val.cosh(), self.val.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn asinh(self) -> Self {
        self.chain(self.val.asinh(), 1.0 / (self.val * self.val + 1.0).sqrt())
    }
    fn acosh(self) -> Self {
        self.chain(self.val.acosh(), 1.0 / (self.val * self.val - 1.0).sqrt())
    }
    fn atanh(self) -> Self {
        self.chain(self.val.atanh(), 1.0 / (1.0 - self.val * self.val))
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.val.integer_decode()
    }
    fn to_degrees(self) -> Self {
        self.chain(self.val.to_degrees(), 180.0 / std::f64::consts::PI)
    }
    fn to_radians(self) -> Self {
        self.chain(self.val.to_radians(), std::f64::consts::PI / 180.0)
    }
}

/// Maximum number of inputs a single differentiated function may take.
pub const MAX_ARITY: usize = 24;

/// Gradient of a scalar-valued function of `x.len()` inputs (forward mode,
/// one pass per input). Panics if `x.len() > MAX_ARITY`.
pub fn gradient<F>(f: F, x: &[f64], grad: &mut [f64])
where
    F: Fn(&[Dual]) -> Dual,
{
    assert!(x.len() <= MAX_ARITY && grad.len() == x.len());
    let mut buf = [Dual::constant(0.0); MAX_ARITY];
    for (b, &v) in buf.iter_mut().zip(x.iter()) {
        *b = Dual::constant(v);
    }
    for i in 0..x.len() {
        buf[i].dot = 1.0;
        grad[i] = f(&buf[..x.len()]).dot;
        buf[i].dot = 0.0;
    }
}

/// Dense Jacobian of a vector-valued function, row-major `out_dim x x.len()`.
pub fn jacobian<F>(f: F, x: &[f64], out_dim: usize, jac: &mut [f64])
where
    F: Fn(&[Dual], &mut [Dual]),
{
    assert!(x.len() <= MAX_ARITY && jac.len() == out_dim * x.len());
    let mut buf = [Dual::constant(0.0); MAX_ARITY];
    let mut out = [Dual::constant(0.0); MAX_ARITY];
    assert!(out_dim <= MAX_ARITY);
    for (b, &v) in buf.iter_mut().zip(x.iter()) {
        *b = Dual::constant(v);
    }
    for i in 0..x.len() {
        buf[i].dot = 1.0;
        f(&buf[..x.len()], &mut out[..out_dim]);
        for r in 0..out_dim {
            jac[r * x.len() + i] = out[r].dot;
        }
        buf[i].dot = 0.0;
    }
}

//! Forward-mode dual numbers `a + b·ε` with `ε² = 0`.
//!
//! Only the real part takes part in comparisons, so control flow (step-size
//! selection, branch tests) is decided by the real part alone and the `eps`
//! part carries the directional derivative of whatever was computed. The real
//! part matches a plain `f64` run to rounding, not bit for bit: libm may
//! evaluate a fused `sin_cos` differently from separate calls.

use std::cmp::Ordering;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Float> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    /// A constant (zero derivative).
    pub fn constant(re: S) -> Self {
        Self { re, eps: S::zero() }
    }

    /// An independent variable (unit derivative).
    pub fn variable(re: S) -> Self {
        Self { re, eps: S::one() }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Self { re: f, eps: df * self.eps }
    }
}

impl<S: Float> PartialOrd for Dual<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<S: Float> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Float> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Float> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<S: Float> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<S: Float> Rem for Dual<S> {
    type Output = Self;
    fn rem(self, o: Self) -> Self {
        // a % b = a - b*trunc(a/b); trunc is locally constant
        let n = (self.re / o.re).trunc();
        Self::new(self.re % o.re, self.eps - o.eps * n)
    }
}

impl<S: Float> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<S: Float> $tr for Dual<S> {
            #[inline]
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl<S: Float> Zero for Dual<S> {
    fn zero() -> Self {
        Self::constant(S::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<S: Float> One for Dual<S> {
    fn one() -> Self {
        Self::constant(S::one())
    }
}

impl<S: Float> Num for Dual<S> {
    type FromStrRadixErr = S::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        S::from_str_radix(s, radix).map(Self::constant)
    }
}

impl<S: Float> ToPrimitive for Dual<S> {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        self.re.to_f64()
    }
    fn to_f32(&self) -> Option<f32> {
        self.re.to_f32()
    }
}

impl<S: Float> NumCast for Dual<S> {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        <S as NumCast>::from(n).map(Self::constant)
    }
}

impl<S: Float + FromPrimitive> FromPrimitive for Dual<S> {
    fn from_i64(n: i64) -> Option<Self> {
        S::from_i64(n).map(Self::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        S::from_u64(n).map(Self::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        S::from_f64(n).map(Self::constant)
    }
}

macro_rules! const_fn {
    ($($name:ident),*) => {
        $(fn $name() -> Self { Self::constant(S::$name()) })*
    };
}

impl<S: Float + FloatConst> FloatConst for Dual<S> {
    const_fn!(
        E, FRAC_1_PI, FRAC_1_SQRT_2, FRAC_2_PI, FRAC_2_SQRT_PI, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4,
        FRAC_PI_6, FRAC_PI_8, LN_10, LN_2, LOG10_E, LOG2_E, PI, SQRT_2
    );
}

impl<S: Float> Float for Dual<S> {
    const_fn!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value, epsilon);

    fn is_nan(self) -> bool {
        self.re.is_nan() || self.eps.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.re.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
    fn is_normal(self) -> bool {
        self.re.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.re.classify()
    }
    fn floor(self) -> Self {
        Self::constant(self.re.floor())
    }
    fn ceil(self) -> Self {
        Self::constant(self.re.ceil())
    }
    fn round(self) -> Self {
        Self::constant(self.re.round())
    }
    fn trunc(self) -> Self {
        Self::constant(self.re.trunc())
    }
    fn fract(self) -> Self {
        Self::new(self.re.fract(), self.eps)
    }
    fn abs(self) -> Self {
        if self.re < S::zero() {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::constant(self.re.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.re.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.re.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let r = self.re.recip();
        self.chain(r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let p = self.re.powi(n - 1);
        self.chain(p * self.re, S::from(n).unwrap() * p)
    }
    fn powf(self, n: Self) -> Self {
        if n.eps.is_zero() {
            let p = self.re.powf(n.re - S::one());
            return self.chain(p * self.re, n.re * p);
        }
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, S::one() / (s + s))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.re.exp2();
        self.chain(e, e * S::from(std::f64::consts::LN_2).unwrap())
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / Self::constant(S::from(std::f64::consts::LN_2).unwrap())
    }
    fn log10(self) -> Self {
        self.ln() / Self::constant(S::from(std::f64::consts::LN_10).unwrap())
    }
    fn max(self, o: Self) -> Self {
        if o.re > self.re {
            o
        } else {
            self
        }
    }
    fn min(self, o: Self) -> Self {
        if o.re < self.re {
            o
        } else {
            self
        }
    }
    fn abs_sub(self, o: Self) -> Self {
        if self.re > o.re {
            self - o
        } else {
            Self::zero()
        }
    }
    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        self.chain(c, S::one() / (S::from(3.0).unwrap() * c * c))
    }
    fn hypot(self, o: Self) -> Self {
        let h = self.re.hypot(o.re);
        if h.is_zero() {
            return Self::constant(h);
        }
        Self::new(h, (self.re * self.eps + o.re * o.eps) / h)
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, S::one() + t * t)
    }
    fn asin(self) -> Self {
        self.chain(self.re.asin(), (S::one() - self.re * self.re).sqrt().recip())
    }
    fn acos(self) -> Self {
        self.chain(self.re.acos(), -(S::one() - self.re * self.re).sqrt().recip())
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), (S::one() + self.re * self.re).recip())
    }
    fn atan2(self, x: Self) -> Self {
        let d = self.re * self.re + x.re * x.re;
        Self::new(self.re.atan2(x.re), (x.re * self.eps - self.re * x.eps) / d)
    }
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.re.sin_cos();
        (self.chain(s, c), self.chain(c, -s))
    }
    fn exp_m1(self) -> Self {
        self.chain(self.re.exp_m1(), self.re.exp())
    }
    fn ln_1p(self) -> Self {
        self.chain(self.re.ln_1p(), (S::one() + self.re).recip())
    }
    fn sinh(self) -> Self {
        self.chain(self.re.sinh(), self.re.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.re.cosh(), self.re.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, S::one() - t * t)
    }
    fn asinh(self) -> Self {
        self.chain(self.re.asinh(), (self.re * self.re + S::one()).sqrt().recip())
    }
    fn acosh(self) -> Self {
        self.chain(self.re.acosh(), (self.re * self.re - S::one()).sqrt().recip())
    }
    fn atanh(self) -> Self {
        self.chain(self.re.atanh(), (S::one() - self.re * self.re).recip())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.re.integer_decode()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(x: f64) -> Dual<f64> {
        Dual::variable(x)
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let x = 0.37;
        let cases: Vec<(Box<dyn Fn(Dual<f64>) -> Dual<f64>>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|v| v.sin() * v.cos()), Box::new(|v| v.sin() * v.cos())),
            (Box::new(|v| v.sqrt() / (v + Dual::constant(1.0))), Box::new(|v| v.sqrt() / (v + 1.0))),
            (Box::new(|v| v.exp().ln_1p()), Box::new(|v| v.exp().ln_1p())),
            (Box::new(|v| v.powi(3) - v.tanh()), Box::new(|v| v.powi(3) - v.tanh())),
            (Box::new(|v| v.atan2(Dual::constant(0.8))), Box::new(|v| v.atan2(0.8))),
            (Box::new(|v| v.powf(Dual::constant(2.5))), Box::new(|v| v.powf(2.5))),
            (Box::new(|v| v.asin() + v.acos().cbrt()), Box::new(|v| v.asin() + v.acos().cbrt())),
        ];
        for (i, (fdual, fre)) in cases.iter().enumerate() {
            let got = fdual(d(x));
            assert!((got.re - fre(x)).abs() < 1e-15, "case {i} value");
            assert!((got.eps - fd(fre, x)).abs() < 1e-8, "case {i} derivative {} vs {}", got.eps, fd(fre, x));
        }
    }

    #[test]
    fn comparisons_use_real_part_only() {
        let a = Dual::new(1.0, 5.0);
        let b = Dual::new(2.0, -5.0);
        assert!(a < b);
        assert_eq!(a.max(b), b);
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // f(x) = x^3 at x=2: f'' = 12
        let x = Dual::new(Dual::variable(2.0), Dual::constant(1.0));
        let y = x * x * x;
        assert_eq!(y.re.re, 8.0);
        assert_eq!(y.eps.eps, 12.0);
    }
}

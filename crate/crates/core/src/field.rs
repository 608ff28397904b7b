//! Exact arithmetic in a real quadratic field `Q(λ)` with `λ² = t·λ + n`.
//!
//! Substrate coordinates live in the lattice `Z[λ]/D` ([`Coord`], integer pairs over a
//! common denominator fixed per chain); measures, frequencies and rotation numbers are
//! general field elements ([`Quad`], rational pairs).

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub type Rational = Ratio<i128>;

/// The field `Q(λ)` where `λ` is the larger root of `x² − trace·x − norm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadField {
    pub trace: i64,
    pub norm: i64,
}

impl QuadField {
    /// `λ = φ`, the golden mean (`φ² = φ + 1`).
    pub const GOLDEN: QuadField = QuadField { trace: 1, norm: 1 };

    pub fn new(trace: i64, norm: i64) -> Result<Self> {
        let f = QuadField { trace, norm };
        let d = f.discriminant();
        if d <= 0 {
            return domain(format!("x^2 - {trace}x - {norm} has no real irrational root"));
        }
        let r = (d as f64).sqrt().round() as i128;
        if (r - 1..=r + 1).any(|s| s >= 0 && s * s == d) {
            return domain(format!(
                "x^2 - {trace}x - {norm} is reducible over Q; pick an irreducible field"
            ));
        }
        Ok(f)
    }

    pub fn discriminant(&self) -> i128 {
        let t = self.trace as i128;
        t * t + 4 * self.norm as i128
    }

    pub fn lambda(&self) -> f64 {
        (self.trace as f64 + (self.discriminant() as f64).sqrt()) / 2.0
    }

    /// Sign of `x + y·√D`.
    fn sign_surd<T>(&self, x: T, y: T) -> Ordering
    where
        T: Copy + Signed + PartialOrd + Mul<Output = T> + From<i64>,
    {
        let zero = T::zero();
        let d: T = T::from(self.discriminant() as i64);
        match (x.partial_cmp(&zero).unwrap(), y.partial_cmp(&zero).unwrap()) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (Ordering::Greater, Ordering::Greater) => Ordering::Greater,
            (Ordering::Less, Ordering::Less) => Ordering::Less,
            (Ordering::Greater, Ordering::Less) => (x * x).partial_cmp(&(y * y * d)).unwrap(),
            (Ordering::Less, Ordering::Greater) => (y * y * d).partial_cmp(&(x * x)).unwrap(),
        }
    }

    /// Exact sign of `a + b·λ` for integers.
    pub fn sign_int(&self, a: i64, b: i64) -> Ordering {
        let x = 2 * a as i128 + b as i128 * self.trace as i128;
        let y = b as i128;
        self.sign_surd(I128(x), I128(y))
    }

    pub fn zero(&self) -> Quad {
        Quad::rational(*self, Rational::zero())
    }

    pub fn one(&self) -> Quad {
        Quad::rational(*self, Rational::from_integer(1))
    }

    pub fn int(&self, v: i64) -> Quad {
        Quad::rational(*self, Rational::from_integer(v as i128))
    }

    /// The generator `λ` itself.
    pub fn generator(&self) -> Quad {
        Quad { a: Rational::zero(), b: Rational::from_integer(1), field: *self }
    }
}

impl Default for QuadField {
    fn default() -> Self {
        QuadField::GOLDEN
    }
}

// Small wrapper so `sign_surd` can be shared between i128 and rationals.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct I128(i128);

impl From<i64> for I128 {
    fn from(v: i64) -> Self {
        I128(v as i128)
    }
}

impl Mul for I128 {
    type Output = I128;
    fn mul(self, o: I128) -> I128 {
        I128(self.0.checked_mul(o.0).expect("coordinate overflow in exact comparison"))
    }
}

impl Add for I128 {
    type Output = I128;
    fn add(self, o: I128) -> I128 {
        I128(self.0 + o.0)
    }
}
impl Sub for I128 {
    type Output = I128;
    fn sub(self, o: I128) -> I128 {
        I128(self.0 - o.0)
    }
}
impl Div for I128 {
    type Output = I128;
    fn div(self, o: I128) -> I128 {
        I128(self.0 / o.0)
    }
}
impl std::ops::Rem for I128 {
    type Output = I128;
    fn rem(self, o: I128) -> I128 {
        I128(self.0 % o.0)
    }
}
impl Neg for I128 {
    type Output = I128;
    fn neg(self) -> I128 {
        I128(-self.0)
    }
}
impl Zero for I128 {
    fn zero() -> Self {
        I128(0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}
impl num_traits::One for I128 {
    fn one() -> Self {
        I128(1)
    }
}
impl num_traits::Num for I128 {
    type FromStrRadixErr = std::num::ParseIntError;
    fn from_str_radix(s: &str, r: u32) -> std::result::Result<Self, Self::FromStrRadixErr> {
        i128::from_str_radix(s, r).map(I128)
    }
}
impl Signed for I128 {
    fn abs(&self) -> Self {
        I128(self.0.abs())
    }
    fn abs_sub(&self, o: &Self) -> Self {
        if self.0 <= o.0 {
            I128(0)
        } else {
            I128(self.0 - o.0)
        }
    }
    fn signum(&self) -> Self {
        I128(self.0.signum())
    }
    fn is_positive(&self) -> bool {
        self.0 > 0
    }
    fn is_negative(&self) -> bool {
        self.0 < 0
    }
}

/// A lattice point `(a + b·λ) / D` where the denominator `D` is owned by the chain.
///
/// Arithmetic is integer arithmetic on the pair; comparison needs the field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub a: i64,
    pub b: i64,
}

impl Coord {
    pub const ZERO: Coord = Coord { a: 0, b: 0 };

    pub const fn new(a: i64, b: i64) -> Self {
        Coord { a, b }
    }

    pub fn scale(self, k: i64) -> Coord {
        Coord { a: self.a * k, b: self.b * k }
    }

    pub fn to_f64(self, field: &QuadField, denom: i64) -> f64 {
        (self.a as f64 + self.b as f64 * field.lambda()) / denom as f64
    }

    pub fn cmp_in(self, other: Coord, field: &QuadField) -> Ordering {
        let d = self - other;
        field.sign_int(d.a, d.b)
    }

    pub fn to_quad(self, field: QuadField, denom: i64) -> Quad {
        let d = denom as i128;
        Quad {
            a: Rational::new(self.a as i128, d),
            b: Rational::new(self.b as i128, d),
            field,
        }
    }
}

impl Add for Coord {
    type Output = Coord;
    fn add(self, o: Coord) -> Coord {
        Coord { a: self.a + o.a, b: self.b + o.b }
    }
}

impl AddAssign for Coord {
    fn add_assign(&mut self, o: Coord) {
        self.a += o.a;
        self.b += o.b;
    }
}

impl Sub for Coord {
    type Output = Coord;
    fn sub(self, o: Coord) -> Coord {
        Coord { a: self.a - o.a, b: self.b - o.b }
    }
}

impl SubAssign for Coord {
    fn sub_assign(&mut self, o: Coord) {
        self.a -= o.a;
        self.b -= o.b;
    }
}

impl Neg for Coord {
    type Output = Coord;
    fn neg(self) -> Coord {
        Coord { a: -self.a, b: -self.b }
    }
}

/// An element `a + b·λ` of `Q(λ)` with rational coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Quad {
    pub a: Rational,
    pub b: Rational,
    pub field: QuadField,
}

impl Quad {
    pub fn rational(field: QuadField, a: Rational) -> Self {
        Quad { a, b: Rational::zero(), field }
    }

    pub fn new(field: QuadField, a: Rational, b: Rational) -> Self {
        Quad { a, b, field }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.b.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        let a = ratio_f64(&self.a);
        let b = ratio_f64(&self.b);
        let lambda = self.field.lambda();
        let direct = a + b * lambda;
        // when a and bλ nearly cancel, divide the exact norm by the conjugate instead
        let conj = a - b * self.field.norm as f64 / lambda;
        if direct.abs() * 4.0 < conj.abs() {
            if let Some(norm) = self.norm_checked() {
                return norm / conj;
            }
        }
        direct
    }

    /// `(a + bλ)(a + bλ')` as a float, computed exactly before rounding; `None` on overflow.
    fn norm_checked(&self) -> Option<f64> {
        let (an, ad) = (*self.a.numer(), *self.a.denom());
        let (bn, bd) = (*self.b.numer(), *self.b.denom());
        let t = self.field.trace as i128;
        let n = self.field.norm as i128;
        // N = (an² bd² + t an bn ad bd − n bn² ad²) / (ad² bd²)
        let x = an.checked_mul(an)?.checked_mul(bd)?.checked_mul(bd)?;
        let y = t.checked_mul(an)?.checked_mul(bn)?.checked_mul(ad)?.checked_mul(bd)?;
        let z = n.checked_mul(bn)?.checked_mul(bn)?.checked_mul(ad)?.checked_mul(ad)?;
        let num = x.checked_add(y)?.checked_sub(z)?;
        let den = ad.checked_mul(ad)?.checked_mul(bd)?.checked_mul(bd)?;
        Some(ratio_f64(&Rational::new(num, den)))
    }

    pub fn signum(&self) -> Ordering {
        let t = Rational::from_integer(self.field.trace as i128);
        let x = self.a * Rational::from_integer(2) + self.b * t;
        self.field.sign_surd(RatWrap(x), RatWrap(self.b))
    }

    pub fn is_positive(&self) -> bool {
        self.signum() == Ordering::Greater
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Quad> {
        if self.is_zero() {
            return None;
        }
        let t = Rational::from_integer(self.field.trace as i128);
        let n = Rational::from_integer(self.field.norm as i128);
        let norm = self.a * self.a + self.a * self.b * t - self.b * self.b * n;
        Some(Quad {
            a: (self.a + self.b * t) / norm,
            b: -self.b / norm,
            field: self.field,
        })
    }

    pub fn pow(&self, e: u32) -> Quad {
        let mut acc = self.field.one();
        for _ in 0..e {
            acc = acc * *self;
        }
        acc
    }

    pub fn from_int(field: QuadField, v: i64) -> Quad {
        field.int(v)
    }
}

impl PartialOrd for Quad {
    fn partial_cmp(&self, other: &Quad) -> Option<Ordering> {
        Some((*self - *other).signum())
    }
}

fn ratio_f64(r: &Rational) -> f64 {
    // i128 -> f64 may round; the quotient of the two roundings is within 2 ulp.
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) => n / d,
        _ => f64::NAN,
    }
}

// Rational wrapper implementing the `From<i64>` bound used by `sign_surd`.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct RatWrap(Rational);

impl From<i64> for RatWrap {
    fn from(v: i64) -> Self {
        RatWrap(Rational::from_integer(v as i128))
    }
}
impl Mul for RatWrap {
    type Output = RatWrap;
    fn mul(self, o: RatWrap) -> RatWrap {
        RatWrap(self.0 * o.0)
    }
}
impl Add for RatWrap {
    type Output = RatWrap;
    fn add(self, o: RatWrap) -> RatWrap {
        RatWrap(self.0 + o.0)
    }
}
impl Sub for RatWrap {
    type Output = RatWrap;
    fn sub(self, o: RatWrap) -> RatWrap {
        RatWrap(self.0 - o.0)
    }
}
impl Div for RatWrap {
    type Output = RatWrap;
    fn div(self, o: RatWrap) -> RatWrap {
        RatWrap(self.0 / o.0)
    }
}
impl std::ops::Rem for RatWrap {
    type Output = RatWrap;
    fn rem(self, o: RatWrap) -> RatWrap {
        RatWrap(self.0 % o.0)
    }
}
impl Neg for RatWrap {
    type Output = RatWrap;
    fn neg(self) -> RatWrap {
        RatWrap(-self.0)
    }
}
impl Zero for RatWrap {
    fn zero() -> Self {
        RatWrap(Rational::zero())
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}
impl num_traits::One for RatWrap {
    fn one() -> Self {
        RatWrap(Rational::from_integer(1))
    }
}
impl num_traits::Num for RatWrap {
    type FromStrRadixErr = num_rational::ParseRatioError;
    fn from_str_radix(s: &str, r: u32) -> std::result::Result<Self, Self::FromStrRadixErr> {
        Rational::from_str_radix(s, r).map(RatWrap)
    }
}
impl Signed for RatWrap {
    fn abs(&self) -> Self {
        RatWrap(self.0.abs())
    }
    fn abs_sub(&self, o: &Self) -> Self {
        RatWrap(self.0.abs_sub(&o.0))
    }
    fn signum(&self) -> Self {
        RatWrap(self.0.signum())
    }
    fn is_positive(&self) -> bool {
        self.0.is_positive()
    }
    fn is_negative(&self) -> bool {
        self.0.is_negative()
    }
}

impl Add for Quad {
    type Output = Quad;
    fn add(self, o: Quad) -> Quad {
        debug_assert_eq!(self.field, o.field);
        Quad { a: self.a + o.a, b: self.b + o.b, field: self.field }
    }
}

impl AddAssign for Quad {
    fn add_assign(&mut self, o: Quad) {
        *self = *self + o;
    }
}

impl Sub for Quad {
    type Output = Quad;
    fn sub(self, o: Quad) -> Quad {
        debug_assert_eq!(self.field, o.field);
        Quad { a: self.a - o.a, b: self.b - o.b, field: self.field }
    }
}

impl Neg for Quad {
    type Output = Quad;
    fn neg(self) -> Quad {
        Quad { a: -self.a, b: -self.b, field: self.field }
    }
}

impl Mul for Quad {
    type Output = Quad;
    fn mul(self, o: Quad) -> Quad {
        debug_assert_eq!(self.field, o.field);
        let t = Rational::from_integer(self.field.trace as i128);
        let n = Rational::from_integer(self.field.norm as i128);
        let bd = self.b * o.b;
        Quad {
            a: self.a * o.a + n * bd,
            b: self.a * o.b + self.b * o.a + t * bd,
            field: self.field,
        }
    }
}

impl Mul<i64> for Quad {
    type Output = Quad;
    fn mul(self, k: i64) -> Quad {
        let k = Rational::from_integer(k as i128);
        Quad { a: self.a * k, b: self.b * k, field: self.field }
    }
}

impl Div for Quad {
    type Output = Quad;
    fn div(self, o: Quad) -> Quad {
        self * o.inv().expect("division by zero in Q(λ)")
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}·λ", self.a, self.b)
    }
}

/// Wire form of a field element: both coefficients as `p/q` strings plus the float value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadRepr {
    pub a: String,
    pub b: String,
    pub value: f64,
}

impl From<&Quad> for QuadRepr {
    fn from(q: &Quad) -> Self {
        QuadRepr { a: q.a.to_string(), b: q.b.to_string(), value: q.to_f64() }
    }
}

impl QuadRepr {
    pub fn parse(&self, field: QuadField) -> Result<Quad> {
        let p = |s: &str| {
            s.parse::<Rational>()
                .map_err(|e| crate::error::FkError::Parse(format!("bad rational {s:?}: {e}")))
        };
        Ok(Quad::new(field, p(&self.a)?, p(&self.b)?))
    }
}

//! Prime-field arithmetic, polynomials and Lagrange interpolation.
//!
//! Every share, split part, renewal coefficient and evaluation point lives in a
//! single prime field. In curve mode that field is the scalar field of the
//! base-point subgroup; in no-curve mode it is a standalone prime chosen small
//! enough for exhaustive checks.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("modulus {0} must be a prime greater than 2")]
    InvalidModulus(BigUint),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("operands belong to different fields")]
    FieldMismatch,
    #[error("a polynomial needs at least one coefficient")]
    EmptyPolynomial,
    #[error("interpolation needs at least one point")]
    NoPoints,
    #[error("abscissa {0} appears more than once")]
    DuplicateAbscissa(BigUint),
    #[error("abscissa zero is not a valid evaluation point")]
    ZeroAbscissa,
}

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Primality test: exact trial division below 2^32, Miller-Rabin with a fixed
/// base set above.
///
/// The fixed bases make the answer deterministic; they are a proof of
/// primality for every n < 3.3 * 10^24 and a probabilistic answer beyond.
pub fn is_prime(n: &BigUint) -> bool {
    if let Some(small) = n.to_u64() {
        if small < 2 {
            return false;
        }
        if small < (1 << 32) {
            return trial_division(small);
        }
    }
    for p in SMALL_PRIMES {
        if (n % p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let mut d = n_minus_one.clone();
    let mut s = 0u32;
    while d.is_even() {
        d >>= 1;
        s += 1;
    }
    'bases: for base in SMALL_PRIMES.iter().take(20) {
        let mut x = BigUint::from(*base).modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

fn trial_division(n: u64) -> bool {
    if n < 4 {
        return n >= 2;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Inverse of `a` modulo `m` via the extended Euclidean algorithm.
pub(crate) fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from_biguint(Sign::Plus, a % m);
    let m = BigInt::from_biguint(Sign::Plus, m.clone());
    let egcd = a.extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return None;
    }
    egcd.x.mod_floor(&m).to_biguint()
}

/// Uniform integer in `[0, bound)` by rejection sampling over the bit length.
pub(crate) fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "empty sampling range");
    let bits = bound.bits();
    let len = bits.div_ceil(8) as usize;
    let excess = (len as u64 * 8 - bits) as u32;
    let mut bytes = vec![0u8; len];
    loop {
        rng.fill_bytes(&mut bytes);
        bytes[len - 1] &= 0xff >> excess;
        let candidate = BigUint::from_bytes_le(&bytes);
        if &candidate < bound {
            return candidate;
        }
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub struct FieldParams {
    modulus: BigUint,
}

impl FieldParams {
    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }
}

/// Handle to a prime field. Clones share one [`FieldParams`] instance.
#[derive(Clone, Debug)]
pub struct Field(Arc<FieldParams>);

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.modulus == other.0.modulus
    }
}

impl Eq for Field {}

impl Field {
    pub fn new(modulus: BigUint) -> Result<Self, AlgebraError> {
        if modulus <= BigUint::from(2u8) || !is_prime(&modulus) {
            return Err(AlgebraError::InvalidModulus(modulus));
        }
        Ok(Self(Arc::new(FieldParams { modulus })))
    }

    pub fn modulus(&self) -> &BigUint {
        &self.0.modulus
    }

    pub fn params(&self) -> &FieldParams {
        &self.0
    }

    /// True when both handles point at the very same parameter instance.
    pub fn same_instance(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Element with value `value mod p`.
    pub fn element(&self, value: impl Into<BigUint>) -> FieldElement {
        FieldElement {
            value: value.into() % self.modulus(),
            field: self.clone(),
        }
    }

    pub fn zero(&self) -> FieldElement {
        self.element(0u8)
    }

    pub fn one(&self) -> FieldElement {
        self.element(1u8)
    }

    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement {
            value: random_below(rng, self.modulus()),
            field: self.clone(),
        }
    }

    pub fn random_nonzero<R: RngCore + ?Sized>(&self, rng: &mut R) -> FieldElement {
        let bound = self.modulus() - 1u8;
        FieldElement {
            value: random_below(rng, &bound) + 1u8,
            field: self.clone(),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct FieldElement {
    value: BigUint,
    field: Field,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.field.modulus())
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    pub fn inverse(&self) -> Result<FieldElement, AlgebraError> {
        if self.is_zero() {
            return Err(AlgebraError::ZeroInverse);
        }
        let value =
            mod_inverse(&self.value, self.field.modulus()).ok_or(AlgebraError::ZeroInverse)?;
        Ok(FieldElement {
            value,
            field: self.field.clone(),
        })
    }

    pub fn pow(&self, exponent: u64) -> FieldElement {
        FieldElement {
            value: self
                .value
                .modpow(&BigUint::from(exponent), self.field.modulus()),
            field: self.field.clone(),
        }
    }

    fn check(&self, other: &FieldElement) {
        assert!(self.field == other.field, "{}", AlgebraError::FieldMismatch);
    }
}

impl Add for &FieldElement {
    type Output = FieldElement;

    fn add(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        let mut value = &self.value + &rhs.value;
        if &value >= self.field.modulus() {
            value -= self.field.modulus();
        }
        FieldElement {
            value,
            field: self.field.clone(),
        }
    }
}

impl Sub for &FieldElement {
    type Output = FieldElement;

    fn sub(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        let value = if self.value >= rhs.value {
            &self.value - &rhs.value
        } else {
            self.field.modulus() - (&rhs.value - &self.value)
        };
        FieldElement {
            value,
            field: self.field.clone(),
        }
    }
}

impl Mul for &FieldElement {
    type Output = FieldElement;

    fn mul(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        FieldElement {
            value: (&self.value * &rhs.value) % self.field.modulus(),
            field: self.field.clone(),
        }
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;

    fn neg(self) -> FieldElement {
        &self.field.zero() - self
    }
}

macro_rules! forward_owned {
    ($($tr:ident $method:ident),*) => {$(
        impl $tr for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: FieldElement) -> FieldElement {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&FieldElement> for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: &FieldElement) -> FieldElement {
                (&self).$method(rhs)
            }
        }
    )*};
}

forward_owned!(Add add, Sub sub, Mul mul);

impl Neg for FieldElement {
    type Output = FieldElement;

    fn neg(self) -> FieldElement {
        -&self
    }
}

impl AddAssign<&FieldElement> for FieldElement {
    fn add_assign(&mut self, rhs: &FieldElement) {
        *self = &*self + rhs;
    }
}

/// How the leading coefficient of a sampled polynomial is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LeadingCoefficient {
    /// Uniform over the whole field, like every other random coefficient.
    #[default]
    Uniform,
    /// Resampled until nonzero so the degree is exactly the requested one.
    ///
    /// This leaks: a holder of `degree` shares can rule out the one secret
    /// value that would force the leading coefficient to zero.
    NonZero,
}

/// Polynomial over a prime field; `coefficients[h]` multiplies `x^h`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    coefficients: Vec<FieldElement>,
}

impl Polynomial {
    pub fn new(coefficients: Vec<FieldElement>) -> Result<Self, AlgebraError> {
        let first = coefficients.first().ok_or(AlgebraError::EmptyPolynomial)?;
        if coefficients.iter().any(|c| c.field != first.field) {
            return Err(AlgebraError::FieldMismatch);
        }
        Ok(Self { coefficients })
    }

    pub fn constant(value: FieldElement) -> Self {
        Self {
            coefficients: vec![value],
        }
    }

    /// Random polynomial of the given declared degree with a fixed free
    /// coefficient; the remaining coefficients are uniform.
    pub fn sample<R: RngCore + ?Sized>(
        rng: &mut R,
        degree: usize,
        free_coefficient: FieldElement,
    ) -> Self {
        Self::sample_with(rng, degree, free_coefficient, LeadingCoefficient::Uniform)
    }

    pub fn sample_with<R: RngCore + ?Sized>(
        rng: &mut R,
        degree: usize,
        free_coefficient: FieldElement,
        leading: LeadingCoefficient,
    ) -> Self {
        let field = free_coefficient.field.clone();
        let mut coefficients = Vec::with_capacity(degree + 1);
        coefficients.push(free_coefficient);
        for h in 1..=degree {
            let c = if h == degree && leading == LeadingCoefficient::NonZero {
                field.random_nonzero(rng)
            } else {
                field.random(rng)
            };
            coefficients.push(c);
        }
        Self { coefficients }
    }

    /// Declared degree (number of coefficients minus one).
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    pub fn free_coefficient(&self) -> &FieldElement {
        &self.coefficients[0]
    }

    pub fn field(&self) -> &Field {
        &self.coefficients[0].field
    }

    pub fn eval(&self, x: &FieldElement) -> Result<FieldElement, AlgebraError> {
        if x.field != *self.field() {
            return Err(AlgebraError::FieldMismatch);
        }
        let mut acc = self.field().zero();
        for c in self.coefficients.iter().rev() {
            acc = &(&acc * x) + c;
        }
        Ok(acc)
    }
}

/// Value at zero of the unique polynomial of degree `points.len() - 1` through
/// `points`.
pub fn lagrange_at_zero(
    points: &[(FieldElement, FieldElement)],
) -> Result<FieldElement, AlgebraError> {
    let (first_x, _) = points.first().ok_or(AlgebraError::NoPoints)?;
    let field = first_x.field().clone();
    for (i, (x, y)) in points.iter().enumerate() {
        if x.field != field || y.field != field {
            return Err(AlgebraError::FieldMismatch);
        }
        if x.is_zero() {
            return Err(AlgebraError::ZeroAbscissa);
        }
        if points[..i].iter().any(|(other, _)| other == x) {
            return Err(AlgebraError::DuplicateAbscissa(x.value.clone()));
        }
    }

    let mut acc = field.zero();
    for (i, (xi, yi)) in points.iter().enumerate() {
        // L_i(0) = prod_{j != i} x_j / (x_j - x_i)
        let mut num = field.one();
        let mut den = field.one();
        for (j, (xj, _)) in points.iter().enumerate() {
            if i != j {
                num = &num * xj;
                den = &den * &(xj - xi);
            }
        }
        let basis = &num * &den.inverse()?;
        acc = &acc + &(yi * &basis);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn f(p: u64) -> Field {
        Field::new(BigUint::from(p)).unwrap()
    }

    #[test]
    fn rejects_bad_moduli() {
        for m in [0u64, 1, 2, 4, 15, 91] {
            assert!(Field::new(BigUint::from(m)).is_err(), "{m}");
        }
        assert!(Field::new(BigUint::from(3u8)).is_ok());
    }

    #[test]
    fn primality_matches_trial_division() {
        for n in 0u64..5000 {
            assert_eq!(is_prime(&BigUint::from(n)), trial_division(n), "{n}");
        }
        // 2^61 - 1 is prime; 2^61 + 1 is divisible by 3.
        assert!(is_prime(&((BigUint::one() << 61) - 1u8)));
        assert!(!is_prime(&((BigUint::one() << 61) + 1u8)));
        // Carmichael-style composite above the trial-division range.
        let n = BigUint::from(4_294_967_297u64) * BigUint::from(4_294_967_311u64);
        assert!(!is_prime(&n));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(f(19).element(2u8).inverse().unwrap(), f(19).element(10u8));
        assert_eq!(f(31).element(7u8).inverse().unwrap(), f(31).element(9u8));
        let p = f(1_000_003);
        assert_eq!(p.one().inverse().unwrap(), p.one());
        assert_eq!(f(19).zero().inverse(), Err(AlgebraError::ZeroInverse));
    }

    #[test]
    fn inverse_is_exhaustively_correct_mod_19() {
        let field = f(19);
        for a in 1u8..19 {
            let a = field.element(a);
            assert_eq!(&a * &a.inverse().unwrap(), field.one());
        }
    }

    #[test]
    fn arithmetic_wraps() {
        let field = f(19);
        assert_eq!(field.element(15u8) + field.element(7u8), field.element(3u8));
        assert_eq!(field.element(3u8) - field.element(7u8), field.element(15u8));
        assert_eq!(-field.element(1u8), field.element(18u8));
        assert_eq!(-field.zero(), field.zero());
        assert_eq!(field.element(5u8) * field.element(4u8), field.element(1u8));
        assert_eq!(field.element(40u8), field.element(2u8));
    }

    #[test]
    #[should_panic(expected = "different fields")]
    fn mixing_fields_panics() {
        let _ = f(19).one() + f(31).one();
    }

    #[test]
    fn eval_examples() {
        let field = f(19);
        let q = Polynomial::new(vec![field.element(5u8), field.element(3u8)]).unwrap();
        assert_eq!(q.eval(&field.element(2u8)).unwrap(), field.element(11u8));
        assert_eq!(q.eval(&field.element(7u8)).unwrap(), field.element(7u8));
        assert_eq!(q.eval(&field.zero()).unwrap(), field.element(5u8));
        assert_eq!(q.eval(&f(31).one()), Err(AlgebraError::FieldMismatch));
    }

    #[test]
    fn polynomial_construction_errors() {
        assert_eq!(Polynomial::new(vec![]), Err(AlgebraError::EmptyPolynomial));
        assert_eq!(
            Polynomial::new(vec![f(19).one(), f(31).one()]),
            Err(AlgebraError::FieldMismatch)
        );
    }

    #[test]
    fn sample_fixes_free_coefficient_and_degree() {
        let field = f(19);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = field.element(7u8);
        let q = Polynomial::sample(&mut rng, 0, d.clone());
        assert_eq!(q.coefficients(), std::slice::from_ref(&d));
        for degree in 0..6 {
            let q = Polynomial::sample(&mut rng, degree, field.element(5u8));
            assert_eq!(q.degree(), degree);
            assert_eq!(q.eval(&field.zero()).unwrap(), field.element(5u8));
        }
        for _ in 0..200 {
            let q = Polynomial::sample_with(&mut rng, 2, d.clone(), LeadingCoefficient::NonZero);
            assert!(!q.coefficients()[2].is_zero());
        }
    }

    #[test]
    fn sample_is_deterministic_under_seed() {
        let field = f(1_000_003);
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(99);
            Polynomial::sample(&mut rng, 2, field.element(5u8))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lagrange_examples() {
        let field = f(19);
        let pts = [
            (field.element(1u8), field.element(8u8)),
            (field.element(2u8), field.element(11u8)),
        ];
        assert_eq!(lagrange_at_zero(&pts).unwrap(), field.element(5u8));
        let single = [(field.element(4u8), field.element(13u8))];
        assert_eq!(lagrange_at_zero(&single).unwrap(), field.element(13u8));
    }

    #[test]
    fn lagrange_errors() {
        let field = f(19);
        assert_eq!(lagrange_at_zero(&[]), Err(AlgebraError::NoPoints));
        let dup = [
            (field.element(3u8), field.element(1u8)),
            (field.element(3u8), field.element(2u8)),
        ];
        assert_eq!(
            lagrange_at_zero(&dup),
            Err(AlgebraError::DuplicateAbscissa(BigUint::from(3u8)))
        );
        let zero = [(field.zero(), field.element(2u8))];
        assert_eq!(lagrange_at_zero(&zero), Err(AlgebraError::ZeroAbscissa));
    }

    #[test]
    fn random_nonzero_never_zero() {
        let field = f(3);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..500 {
            assert!(!field.random_nonzero(&mut rng).is_zero());
        }
    }
}

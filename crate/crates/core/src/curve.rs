//! Short-Weierstrass elliptic curves `y^2 = x^3 + ax + b` over a prime field.
//!
//! Points use affine coordinates with an explicit identity. Scalar
//! multiplication is plain double-and-add; nothing here is constant time.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{is_prime, mod_inverse, Field, FieldElement};
use crate::decimal;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CurveError {
    #[error("point is not on the curve")]
    OffCurve,
    #[error("scalar does not belong to the curve's scalar field")]
    ScalarFieldMismatch,
    #[error("invalid curve parameters: {0}")]
    Invalid(ValidationReport),
    #[error("unknown curve profile {0:?}")]
    UnknownProfile(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvePoint {
    Identity,
    Affine {
        #[serde(with = "decimal")]
        x: BigUint,
        #[serde(with = "decimal")]
        y: BigUint,
    },
}

impl CurvePoint {
    pub fn affine(x: impl Into<BigUint>, y: impl Into<BigUint>) -> Self {
        CurvePoint::Affine {
            x: x.into(),
            y: y.into(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CurvePoint::Identity)
    }

    pub fn x(&self) -> Option<&BigUint> {
        match self {
            CurvePoint::Identity => None,
            CurvePoint::Affine { x, .. } => Some(x),
        }
    }
}

impl fmt::Display for CurvePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurvePoint::Identity => f.write_str("O"),
            CurvePoint::Affine { x, y } => write!(f, "({x}, {y})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveParams {
    #[serde(with = "decimal")]
    pub p: BigUint,
    #[serde(with = "decimal")]
    pub a: BigUint,
    #[serde(with = "decimal")]
    pub b: BigUint,
    pub g: CurvePoint,
    #[serde(with = "decimal")]
    pub order: BigUint,
}

impl CurveParams {
    /// `y^2 = x^3 + 2x + 2` over F_17 with G = (5, 1) of order 19.
    pub fn toy() -> Self {
        Self {
            p: 17u8.into(),
            a: 2u8.into(),
            b: 2u8.into(),
            g: CurvePoint::affine(5u8, 1u8),
            order: 19u8.into(),
        }
    }

    /// `y^2 = x^3 + 2x + 13` over F_65521; the whole group has prime order
    /// 65171. Large enough for trees of a few thousand users.
    pub fn small() -> Self {
        Self {
            p: 65521u32.into(),
            a: 2u8.into(),
            b: 13u8.into(),
            g: CurvePoint::affine(0u8, 1828u32),
            order: 65171u32.into(),
        }
    }

    /// secp256k1.
    pub fn standard() -> Self {
        let hex = |s: &str| BigUint::parse_bytes(s.as_bytes(), 16).expect("constant");
        Self {
            p: hex("FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F"),
            a: BigUint::zero(),
            b: 7u8.into(),
            g: CurvePoint::affine(
                hex("79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798"),
                hex("483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8"),
            ),
            order: hex("FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141"),
        }
    }

    /// Built-in profile by name: `toy`, `small` or `standard`.
    pub fn named(name: &str) -> Result<Self, CurveError> {
        match name {
            "toy" => Ok(Self::toy()),
            "small" => Ok(Self::small()),
            "standard" | "secp256k1" => Ok(Self::standard()),
            other => Err(CurveError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Itemized result of [`validate_curve`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(ValidationCheck {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failed: Vec<_> = self
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        if failed.is_empty() {
            f.write_str("valid")
        } else {
            f.write_str(&failed.join("; "))
        }
    }
}

/// Checks every structural requirement on a parameter set without raising.
pub fn validate_curve(params: &CurveParams) -> ValidationReport {
    let mut report = ValidationReport { checks: Vec::new() };
    let p = &params.p;

    let p_prime = p > &BigUint::from(3u8) && is_prime(p);
    report.push("field-prime", p_prime, format!("p = {p}"));
    if !p_prime {
        report.push("discriminant", false, "skipped: p is not a usable prime");
        report.push(
            "generator-on-curve",
            false,
            "skipped: p is not a usable prime",
        );
        report.push(
            "order-prime",
            is_prime(&params.order),
            format!("order = {}", params.order),
        );
        report.push(
            "order-annihilates-generator",
            false,
            "skipped: p is not a usable prime",
        );
        return report;
    }

    let arith = FpArith {
        p: p.clone(),
        a: &params.a % p,
        b: &params.b % p,
    };
    let coeffs_reduced = &params.a < p && &params.b < p;
    let disc = arith.add(
        &arith.mul(
            &BigUint::from(4u8),
            &arith.mul(&arith.a, &arith.mul(&arith.a, &arith.a)),
        ),
        &arith.mul(&BigUint::from(27u8), &arith.mul(&arith.b, &arith.b)),
    );
    report.push(
        "discriminant",
        !disc.is_zero() && coeffs_reduced,
        if coeffs_reduced {
            format!("4a^3 + 27b^2 = {disc} (mod p)")
        } else {
            "a and b must be reduced mod p".to_string()
        },
    );

    let g_ok = !params.g.is_identity() && arith.on_curve(&params.g);
    report.push(
        "generator-on-curve",
        g_ok,
        if params.g.is_identity() {
            "G is the identity".to_string()
        } else if g_ok {
            format!("G = {}", params.g)
        } else {
            format!("G = {} does not satisfy the curve equation", params.g)
        },
    );

    let order_prime = is_prime(&params.order) && params.order > BigUint::from(2u8);
    report.push(
        "order-prime",
        order_prime,
        format!("order = {}", params.order),
    );

    if g_ok {
        let nq = arith.scalar_mul(&params.order, &params.g);
        report.push(
            "order-annihilates-generator",
            nq.is_identity(),
            if nq.is_identity() {
                "order * G = O".to_string()
            } else {
                format!("order * G = {nq}")
            },
        );
    } else {
        report.push(
            "order-annihilates-generator",
            false,
            "skipped: G not on curve",
        );
    }
    report
}

/// Arithmetic in E(F_p) independent of any scalar field.
#[derive(Debug)]
struct FpArith {
    p: BigUint,
    a: BigUint,
    b: BigUint,
}

impl FpArith {
    fn add(&self, x: &BigUint, y: &BigUint) -> BigUint {
        (x + y) % &self.p
    }

    fn sub(&self, x: &BigUint, y: &BigUint) -> BigUint {
        ((x + &self.p) - (y % &self.p)) % &self.p
    }

    fn mul(&self, x: &BigUint, y: &BigUint) -> BigUint {
        (x * y) % &self.p
    }

    fn inv(&self, x: &BigUint) -> BigUint {
        mod_inverse(x, &self.p).expect("nonzero element of a prime field")
    }

    fn on_curve(&self, point: &CurvePoint) -> bool {
        match point {
            CurvePoint::Identity => true,
            CurvePoint::Affine { x, y } => {
                if x >= &self.p || y >= &self.p {
                    return false;
                }
                let lhs = self.mul(y, y);
                let rhs = self.add(
                    &self.add(&self.mul(x, &self.mul(x, x)), &self.mul(&self.a, x)),
                    &self.b,
                );
                lhs == rhs
            }
        }
    }

    fn neg(&self, point: &CurvePoint) -> CurvePoint {
        match point {
            CurvePoint::Identity => CurvePoint::Identity,
            CurvePoint::Affine { x, y } => CurvePoint::Affine {
                x: x.clone(),
                y: self.sub(&BigUint::zero(), y),
            },
        }
    }

    fn point_add(&self, lhs: &CurvePoint, rhs: &CurvePoint) -> CurvePoint {
        let (x1, y1, x2, y2) = match (lhs, rhs) {
            (CurvePoint::Identity, q) => return q.clone(),
            (q, CurvePoint::Identity) => return q.clone(),
            (CurvePoint::Affine { x: x1, y: y1 }, CurvePoint::Affine { x: x2, y: y2 }) => {
                (x1, y1, x2, y2)
            }
        };
        let slope = if x1 == x2 {
            if self.add(y1, y2).is_zero() {
                return CurvePoint::Identity;
            }
            // tangent: (3x^2 + a) / 2y
            let num = self.add(&self.mul(&BigUint::from(3u8), &self.mul(x1, x1)), &self.a);
            let den = self.mul(&BigUint::from(2u8), y1);
            self.mul(&num, &self.inv(&den))
        } else {
            self.mul(&self.sub(y2, y1), &self.inv(&self.sub(x2, x1)))
        };
        let x3 = self.sub(&self.sub(&self.mul(&slope, &slope), x1), x2);
        let y3 = self.sub(&self.mul(&slope, &self.sub(x1, &x3)), y1);
        CurvePoint::Affine { x: x3, y: y3 }
    }

    fn scalar_mul(&self, k: &BigUint, point: &CurvePoint) -> CurvePoint {
        let mut acc = CurvePoint::Identity;
        for i in (0..k.bits()).rev() {
            acc = self.point_add(&acc, &acc);
            if k.bit(i) {
                acc = self.point_add(&acc, point);
            }
        }
        acc
    }
}

#[derive(Debug)]
struct CurveInner {
    params: CurveParams,
    arith: FpArith,
    scalars: Field,
}

/// A validated curve together with the scalar field of its base point.
#[derive(Clone, Debug)]
pub struct Curve(Arc<CurveInner>);

impl PartialEq for Curve {
    fn eq(&self, other: &Self) -> bool {
        self.0.params == other.0.params
    }
}

impl Eq for Curve {}

impl Curve {
    pub fn new(params: CurveParams) -> Result<Self, CurveError> {
        let report = validate_curve(&params);
        if !report.is_valid() {
            return Err(CurveError::Invalid(report));
        }
        let scalars = Field::new(params.order.clone()).expect("validated prime order");
        let arith = FpArith {
            p: params.p.clone(),
            a: params.a.clone(),
            b: params.b.clone(),
        };
        Ok(Self(Arc::new(CurveInner {
            params,
            arith,
            scalars,
        })))
    }

    pub fn toy() -> Self {
        Self::new(CurveParams::toy()).expect("toy profile is valid")
    }

    pub fn small() -> Self {
        Self::new(CurveParams::small()).expect("small profile is valid")
    }

    pub fn standard() -> Self {
        Self::new(CurveParams::standard()).expect("standard profile is valid")
    }

    pub fn params(&self) -> &CurveParams {
        &self.0.params
    }

    pub fn generator(&self) -> &CurvePoint {
        &self.0.params.g
    }

    pub fn order(&self) -> &BigUint {
        &self.0.params.order
    }

    /// The prime field of scalars mod ord(G).
    pub fn scalar_field(&self) -> &Field {
        &self.0.scalars
    }

    pub fn contains(&self, point: &CurvePoint) -> bool {
        self.0.arith.on_curve(point)
    }

    fn check(&self, point: &CurvePoint) -> Result<(), CurveError> {
        if self.contains(point) {
            Ok(())
        } else {
            Err(CurveError::OffCurve)
        }
    }

    pub fn add(&self, lhs: &CurvePoint, rhs: &CurvePoint) -> Result<CurvePoint, CurveError> {
        self.check(lhs)?;
        self.check(rhs)?;
        Ok(self.0.arith.point_add(lhs, rhs))
    }

    pub fn neg(&self, point: &CurvePoint) -> Result<CurvePoint, CurveError> {
        self.check(point)?;
        Ok(self.0.arith.neg(point))
    }

    /// `k * point` for an arbitrary nonnegative integer `k`.
    pub fn mul_int(&self, k: &BigUint, point: &CurvePoint) -> Result<CurvePoint, CurveError> {
        self.check(point)?;
        Ok(self.0.arith.scalar_mul(k, point))
    }

    /// `s * point` for a scalar mod ord(G).
    pub fn mul(&self, s: &FieldElement, point: &CurvePoint) -> Result<CurvePoint, CurveError> {
        if s.field() != self.scalar_field() {
            return Err(CurveError::ScalarFieldMismatch);
        }
        self.mul_int(s.value(), point)
    }

    /// `s * G`.
    pub fn mul_generator(&self, s: &FieldElement) -> Result<CurvePoint, CurveError> {
        self.mul(s, self.generator())
    }

    /// Sum of a list of points.
    pub fn sum<'a>(
        &self,
        points: impl IntoIterator<Item = &'a CurvePoint>,
    ) -> Result<CurvePoint, CurveError> {
        let mut acc = CurvePoint::Identity;
        for p in points {
            acc = self.add(&acc, p)?;
        }
        Ok(acc)
    }

    /// The x-coordinate of `point` reduced into the scalar field.
    pub fn x_scalar(&self, point: &CurvePoint) -> Option<FieldElement> {
        point.x().map(|x| self.scalar_field().element(x.clone()))
    }

    /// Number of distinct x-coordinates among non-identity points of the
    /// base-point subgroup: for odd prime order every x carries exactly two
    /// points `(x, y)` and `(x, -y)`.
    pub fn distinct_x_capacity(&self) -> BigUint {
        (self.order() - BigUint::one()) >> 1
    }
}

//! Two-component vectors in the (r, z) generating half-plane.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// A vector in the generating plane: `r` is radial (e₁), `z` is axial (e₂).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaneVector {
    pub r: f64,
    pub z: f64,
}

impl PlaneVector {
    pub const ZERO: PlaneVector = PlaneVector { r: 0.0, z: 0.0 };
    pub const E1: PlaneVector = PlaneVector { r: 1.0, z: 0.0 };
    pub const E2: PlaneVector = PlaneVector { r: 0.0, z: 1.0 };

    #[inline]
    pub const fn new(r: f64, z: f64) -> Self {
        Self { r, z }
    }

    /// Unit vector at inclination `theta` measured from e₁.
    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { r: c, z: s }
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.r * o.r + self.z * o.z
    }

    /// Scalar cross product `self.r * o.z - self.z * o.r`.
    #[inline]
    pub fn cross(self, o: Self) -> f64 {
        self.r * o.z - self.z * o.r
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.r.hypot(self.z)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Clockwise quarter turn, `(a, b)^⊥ = (b, -a)`. With this convention the
    /// outward film normal is `n = -τ^⊥`.
    #[inline]
    pub fn perp(self) -> Self {
        Self { r: self.z, z: -self.r }
    }

    /// Counter-clockwise quarter turn, equal to `-perp()`.
    #[inline]
    pub fn rot90(self) -> Self {
        Self { r: -self.z, z: self.r }
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.z.atan2(self.r)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Self {
        self / self.norm()
    }

    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }
}

impl Add for PlaneVector {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.r + o.r, self.z + o.z)
    }
}

impl AddAssign for PlaneVector {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.r += o.r;
        self.z += o.z;
    }
}

impl Sub for PlaneVector {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.r - o.r, self.z - o.z)
    }
}

impl SubAssign for PlaneVector {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.r -= o.r;
        self.z -= o.z;
    }
}

impl Mul<f64> for PlaneVector {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        Self::new(self.r * s, self.z * s)
    }
}

impl Mul<PlaneVector> for f64 {
    type Output = PlaneVector;
    #[inline]
    fn mul(self, v: PlaneVector) -> PlaneVector {
        v * self
    }
}

impl Div<f64> for PlaneVector {
    type Output = Self;
    #[inline]
    fn div(self, s: f64) -> Self {
        Self::new(self.r / s, self.z / s)
    }
}

impl Neg for PlaneVector {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.r, -self.z)
    }
}

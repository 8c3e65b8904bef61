//! Small fixed-size planar vector and matrix types.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };
    pub const X: Vec2 = Vec2 { x: 1.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rescales `self` onto the disk of radius `max_norm`; vectors inside are returned unchanged.
    pub fn cap_norm(self, max_norm: f64) -> Vec2 {
        let n = self.norm();
        if n > max_norm {
            self * (max_norm / n)
        } else {
            self
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// 2x2 matrix stored by columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub cols: [Vec2; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        cols: [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
    };

    pub fn from_cols(c0: Vec2, c1: Vec2) -> Self {
        Self { cols: [c0, c1] }
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_cols(Vec2::new(c, s), Vec2::new(-s, c))
    }

    /// Reflection across the world x-axis.
    pub fn reflect_x() -> Self {
        Self::from_cols(Vec2::new(1.0, 0.0), Vec2::new(0.0, -1.0))
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        self.cols[0] * v.x + self.cols[1] * v.y
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::from_cols(
            Vec2::new(self.cols[0].x, self.cols[1].x),
            Vec2::new(self.cols[0].y, self.cols[1].y),
        )
    }

    /// `selfᵀ · v` without materialising the transpose.
    pub fn tmul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.cols[0].dot(v), self.cols[1].dot(v))
    }

    pub fn mul_mat(&self, other: &Mat2) -> Mat2 {
        Mat2::from_cols(self.mul_vec(other.cols[0]), self.mul_vec(other.cols[1]))
    }

    pub fn det(&self) -> f64 {
        self.cols[0].x * self.cols[1].y - self.cols[1].x * self.cols[0].y
    }

    /// Largest absolute entry of `other - self`.
    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let d = [self.cols[0] - other.cols[0], self.cols[1] - other.cols[1]];
        d.iter().flat_map(|c| [c.x.abs(), c.y.abs()]).fold(0.0, f64::max)
    }
}

/// Element of E(2) acting as `p ↦ Q p + t` on positions and `v ↦ Q v` on velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Isometry2 {
    pub linear: Mat2,
    pub translation: Vec2,
}

impl Isometry2 {
    pub fn new(linear: Mat2, translation: Vec2) -> Self {
        Self { linear, translation }
    }

    pub fn apply_point(&self, p: Vec2) -> Vec2 {
        self.linear.mul_vec(p) + self.translation
    }

    pub fn apply_vector(&self, v: Vec2) -> Vec2 {
        self.linear.mul_vec(v)
    }
}

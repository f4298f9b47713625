//! Small fixed-size vector helpers and the axis-aligned domain box.
//!
//! Points are stored as `[f64; 3]` throughout the crate; two-dimensional
//! data keeps `z = 0` and ignores it.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm(&sub(a, b))
}

/// Pads a 2- or 3-component slice into a `Vec3`.
pub fn to_vec3(x: &[f64]) -> Vec3 {
    let mut p = [0.0; 3];
    for (dst, src) in p.iter_mut().zip(x) {
        *dst = *src;
    }
    p
}

/// Axis-aligned box in 2 or 3 dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub dim: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: &[f64], max: &[f64]) -> Option<Self> {
        if min.len() != max.len() || !(2..=3).contains(&min.len()) {
            return None;
        }
        let b = Aabb {
            dim: min.len(),
            min: to_vec3(min),
            max: to_vec3(max),
        };
        let ok = (0..b.dim).all(|i| b.min[i].is_finite() && b.max[i].is_finite() && b.max[i] > b.min[i]);
        ok.then_some(b)
    }

    /// The cube `[-1, 1]^dim`.
    pub fn symmetric_unit(dim: usize) -> Self {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..dim {
            min[i] = -1.0;
            max[i] = 1.0;
        }
        Aabb { dim, min, max }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Longest edge; used as the characteristic dimension of the box.
    pub fn characteristic_length(&self) -> f64 {
        (0..self.dim).map(|i| self.extent(i)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for i in 0..self.dim {
            c[i] = 0.5 * (self.min[i] + self.max[i]);
        }
        c
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..self.dim).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_cube(&self) -> bool {
        let e0 = self.extent(0);
        (1..self.dim).all(|i| (self.extent(i) - e0).abs() <= 1e-12 * e0)
    }
}

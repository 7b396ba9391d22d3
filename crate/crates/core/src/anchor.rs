//! Rigid-body pose math for the tracked proxy and the hologram mounted on it.
//!
//! Frames are right-handed, meters, `y` up. Orientations are unit quaternions stored
//! `(w, x, y, z)`.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("orientation norm {0} is not 1")]
    NonUnitQuaternion(String),
    #[error("pose has a non-finite component")]
    NonFinite,
    #[error("jitter sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let half = angle * T::lit(0.5);
        let a = axis.scale(T::one() / axis.norm());
        let s = half.sin();
        Self::new(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    pub fn vector(self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        // v' = v + 2w(q × v) + 2 q × (q × v)
        let q = self.vector();
        let two = T::lit(2.0);
        let t = q.cross(v).scale(two);
        v + t.scale(self.w) + q.cross(t)
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

impl<T: Scalar> Mul for Quat<T> {
    type Output = Self;

    /// Hamilton product; `a * b` applies `b` first.
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Position plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub orientation: Quat<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn new(position: Vec3<T>, orientation: Quat<T>) -> Result<Self, AnchorError> {
        let pose = Self { position, orientation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { position: Vec3::zero(), orientation: Quat::identity() }
    }

    pub fn translation(x: T, y: T, z: T) -> Self {
        Self { position: Vec3::new(x, y, z), orientation: Quat::identity() }
    }

    pub fn rotation(orientation: Quat<T>) -> Self {
        Self { position: Vec3::zero(), orientation: orientation.normalized() }
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        if !self.position.is_finite() || !self.orientation.is_finite() {
            return Err(AnchorError::NonFinite);
        }
        let n = self.orientation.norm();
        if (n - T::one()).abs() > T::NORM_TOLERANCE {
            return Err(AnchorError::NonUnitQuaternion(n.to_string()));
        }
        Ok(())
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.position + self.orientation.rotate(p)
    }

    pub fn inverse(&self) -> Self {
        let q = self.orientation.conjugate();
        Self { position: -q.rotate(self.position), orientation: q }
    }
}

/// `parent ∘ child`: the child pose expressed in the parent's parent frame.
///
/// The orientation product is renormalized whenever its norm has drifted more than a few
/// ulps from 1, so long chains of compositions stay unit length.
pub fn compose<T: Scalar>(parent: &Pose<T>, child: &Pose<T>) -> Pose<T> {
    let q = parent.orientation * child.orientation;
    let drift = (q.norm() - T::one()).abs();
    Pose {
        position: parent.transform_point(child.position),
        orientation: if drift > T::lit(4.0) * T::epsilon() { q.normalized() } else { q },
    }
}

/// Hologram frame relative to the proxy frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountOffset<T> {
    pub offset_pose: Pose<T>,
}

/// Long edge of the reference handset (landscape width), meters.
pub const PROXY_WIDTH_M: f64 = 0.1626;

impl<T: Scalar> MountOffset<T> {
    pub fn new(offset_pose: Pose<T>) -> Result<Self, AnchorError> {
        offset_pose.validate()?;
        Ok(Self { offset_pose })
    }

    /// Centered over the left half of a landscape handset, flush with the screen.
    pub fn over_selection_area(proxy_width_m: T) -> Self {
        Self { offset_pose: Pose::translation(-proxy_width_m * T::lit(0.25), T::zero(), T::zero()) }
    }
}

impl<T: Scalar> Default for MountOffset<T> {
    fn default() -> Self {
        Self::over_selection_area(T::lit(PROXY_WIDTH_M))
    }
}

/// Where the hologram sits given the tracked proxy pose; it moves rigidly with the proxy.
pub fn hologram_pose<T: Scalar>(proxy: &Pose<T>, mount: &MountOffset<T>) -> Pose<T> {
    compose(proxy, &mount.offset_pose)
}

/// Zero-mean Gaussian position noise emulating marker-tracking jitter. `sigma` in meters.
#[derive(Debug, Clone, Copy)]
pub struct PoseJitter {
    normal: Option<Normal<f64>>,
}

impl PoseJitter {
    pub fn new(sigma: f64) -> Result<Self, AnchorError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(AnchorError::InvalidSigma(sigma));
        }
        let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("validated sigma"));
        Ok(Self { normal })
    }

    pub fn off() -> Self {
        Self { normal: None }
    }

    pub fn is_off(&self) -> bool {
        self.normal.is_none()
    }

    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, pose: &Pose<T>, rng: &mut R) -> Pose<T> {
        let Some(normal) = self.normal else { return *pose };
        let mut noise = || T::lit(normal.sample(rng));
        let delta = Vec3::new(noise(), noise(), noise());
        Pose { position: pose.position + delta, orientation: pose.orientation }
    }
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self::off()
    }
}

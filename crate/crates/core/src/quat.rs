//! Quaternion rotation math: exponential maps, Euler angles, sign
//! continuity, and the y-z-plane reflection used for data mirroring.
//!
//! Quaternions are scalar-first `(w, x, y, z)`. `q` and `-q` encode the
//! same rotation; comparisons that must respect that go through the
//! rotation matrix.

use crate::error::{Error, Result};
use crate::num::{lit, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Intrinsic Tait-Bryan axis orders for Euler conversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EulerOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    #[default]
    Zyx,
}

impl EulerOrder {
    /// Rotation axes applied first-to-last (intrinsic).
    pub fn axes(self) -> [usize; 3] {
        match self {
            EulerOrder::Xyz => [0, 1, 2],
            EulerOrder::Xzy => [0, 2, 1],
            EulerOrder::Yxz => [1, 0, 2],
            EulerOrder::Yzx => [1, 2, 0],
            EulerOrder::Zxy => [2, 0, 1],
            EulerOrder::Zyx => [2, 1, 0],
        }
    }

    /// +1 for even permutations of (x, y, z), -1 for odd.
    fn parity(self) -> i32 {
        match self {
            EulerOrder::Xyz | EulerOrder::Yzx | EulerOrder::Zxy => 1,
            EulerOrder::Xzy | EulerOrder::Yxz | EulerOrder::Zyx => -1,
        }
    }
}

impl std::str::FromStr for EulerOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(EulerOrder::Xyz),
            "xzy" => Ok(EulerOrder::Xzy),
            "yxz" => Ok(EulerOrder::Yxz),
            "yzx" => Ok(EulerOrder::Yzx),
            "zxy" => Ok(EulerOrder::Zxy),
            "zyx" => Ok(EulerOrder::Zyx),
            other => Err(Error::Config(format!("unknown euler order '{other}'"))),
        }
    }
}

impl<T: Scalar> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn identity() -> Self {
        Quaternion::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(self, other: Self) -> T {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Project onto the unit sphere, preserving direction.
    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if n < lit::<T>(1e-12) {
            return Err(Error::DegenerateRotation(
                "cannot normalize near-zero quaternion".into(),
            ));
        }
        Ok(Quaternion::new(
            self.w / n,
            self.x / n,
            self.y / n,
            self.z / n,
        ))
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product, renormalized.
    pub fn multiply(self, rhs: Self) -> Result<Self> {
        let a = self;
        let b = rhs;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
        .normalize()
    }

    /// Axis-angle 3-vector (magnitude = angle in radians) to quaternion.
    /// Uses the Taylor branch of sin(t/2)/t for tiny angles.
    pub fn from_expmap(r: [T; 3]) -> Self {
        let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let half = theta / lit::<T>(2.0);
        let k = if theta < lit::<T>(1e-6) {
            // sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
            lit::<T>(0.5) - theta * theta / lit::<T>(48.0)
        } else {
            half.sin() / theta
        };
        Quaternion::new(half.cos(), r[0] * k, r[1] * k, r[2] * k)
    }

    /// 3x3 rotation matrix (column-vector convention).
    pub fn rotation_matrix(self) -> [[T; 3]; 3] {
        let two = lit::<T>(2.0);
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                T::one() - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                T::one() - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                T::one() - two * (x * x + y * y),
            ],
        ]
    }

    /// Single-axis rotation quaternion.
    pub fn about_axis(axis: usize, angle: T) -> Self {
        let half = angle / lit::<T>(2.0);
        let (s, c) = (half.sin(), half.cos());
        let mut v = [T::zero(); 3];
        v[axis] = s;
        Quaternion::new(c, v[0], v[1], v[2])
    }

    pub fn from_euler(angles: [T; 3], order: EulerOrder) -> Result<Self> {
        let ax = order.axes();
        let q = Quaternion::about_axis(ax[0], angles[0])
            .multiply(Quaternion::about_axis(ax[1], angles[1]))?;
        q.multiply(Quaternion::about_axis(ax[2], angles[2]))
    }

    /// Intrinsic Euler angles in the given order, first-to-last axis.
    ///
    /// Returns the angles plus a gimbal-lock flag: when the middle-axis
    /// sine exceeds 1 - 1e-7 in magnitude, it is clamped, the last angle
    /// is fixed to zero, and the first recovered from the residual.
    pub fn to_euler(self, order: EulerOrder) -> ([T; 3], bool) {
        let r = self.rotation_matrix();
        let [i, j, k] = order.axes();
        let eps: T = lit(1e-7);
        let parity: T = lit(order.parity() as f64);
        let sin_beta = parity * r[i][k];
        if sin_beta.abs() > T::one() - eps {
            // Gimbal lock: fix gamma = 0, solve R = R_i(alpha) R_j(beta).
            let clamped = if sin_beta > T::zero() { T::one() } else { -T::one() };
            let beta = clamped.asin();
            let rj = axis_matrix(j, -beta);
            let m = mat_mul(&r, &rj);
            let alpha = extract_axis_angle(&m, i);
            return ([alpha, beta, T::zero()], true);
        }
        let beta = sin_beta.asin();
        let alpha = (-parity * r[j][k]).atan2(r[k][k]);
        let gamma = (-parity * r[i][j]).atan2(r[i][i]);
        ([alpha, beta, gamma], false)
    }

    /// Conjugation by the x-negating reflection diag(-1, 1, 1): the
    /// rotation mirrored across the y-z plane.
    pub fn mirror_yz(self) -> Self {
        Quaternion::new(self.w, self.x, -self.y, -self.z)
    }
}

fn axis_matrix<T: Scalar>(axis: usize, angle: T) -> [[T; 3]; 3] {
    let (s, c) = (angle.sin(), angle.cos());
    let mut m = [[T::zero(); 3]; 3];
    let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
    m[axis][axis] = T::one();
    m[p][p] = c;
    m[q][q] = c;
    m[q][p] = s;
    m[p][q] = -s;
    m
}

fn mat_mul<T: Scalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

/// Angle of a (near-)single-axis rotation matrix about `axis`.
fn extract_axis_angle<T: Scalar>(m: &[[T; 3]; 3], axis: usize) -> T {
    let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
    m[q][p].atan2(m[p][p])
}

/// Enforce temporal sign continuity on one joint track: flip each frame so
/// consecutive dot products are non-negative. Rotations are unchanged.
pub fn sign_align<T: Scalar>(track: &mut [Quaternion<T>]) {
    for i in 1..track.len() {
        if track[i].dot(track[i - 1]) < T::zero() {
            track[i] = track[i].neg();
        }
    }
}

pub fn max_matrix_diff<T: Scalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> T {
    let mut m = T::zero();
    for r in 0..3 {
        for c in 0..3 {
            m = m.max((a[r][c] - b[r][c]).abs());
        }
    }
    m
}

//! Discretized action space.
//!
//! Positions are binned into a 100-cell grid per axis with the floor rule
//! `v = floor((p - min) / (max - min) * 99)`, orientations into 5 degree
//! bins of intrinsic xyz Euler angles, and the gripper into a single bit
//! (1 = open, 0 = closed). Both arms share one [`WorkspaceBounds`].
//!
//! The floor rule maps only the exact upper bound to index 99, so the top
//! cell is degenerate: indices `0..=98` cover cells of width `span / 99` and
//! index 99 is the single point `max`. [`devoxelize`] returns the centre of
//! the cell for `0..=98` and `max` itself for 99, which keeps
//! `voxelize(devoxelize(v)) == v` for every index.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest voxel index on any axis.
pub const VOXEL_MAX: u8 = 99;
/// Number of rotation bins per Euler axis.
pub const ROT_BINS: u8 = 72;
/// Width of a rotation bin in degrees.
pub const ROT_BIN_DEG: f64 = 5.0;
/// Gripper apertures at or above this value discretize to open (1).
pub const GRIPPER_OPEN_THRESHOLD: f64 = 0.5;

const GIMBAL_TOL_RAD: f64 = 1e-3;
// Absorbs atan2 round-off for angles that sit exactly on a bin edge.
const BIN_EDGE_EPS: f64 = 1e-9;
const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("position {value} on axis {axis} is outside the workspace [{min}, {max}]")]
    OutOfWorkspace {
        axis: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{what} index {value} out of range 0..={max}")]
    Range { what: &'static str, value: i64, max: i64 },
    #[error("invalid workspace bounds: min {min:?} must be below max {max:?} on every axis")]
    InvalidBounds { min: [f64; 3], max: [f64; 3] },
    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),
    #[error("gripper aperture {0} outside [0, 1]")]
    InvalidGripper(f64),
    #[error("expected {expected} integers, got {got}")]
    Arity { expected: usize, got: usize },
}

/// Axis-aligned box the end-effectors operate in, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for WorkspaceBounds {
    fn default() -> Self {
        Self {
            min: [-0.3, -0.5, 0.6],
            max: [0.7, 0.5, 1.6],
        }
    }
}

impl WorkspaceBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, CodecError> {
        let ok = (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] < max[i]);
        if ok {
            Ok(Self { min, max })
        } else {
            Err(CodecError::InvalidBounds { min, max })
        }
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Edge length of one grid cell along `axis`, in meters.
    pub fn voxel_edge(&self, axis: usize) -> f64 {
        self.span(axis) / f64::from(VOXEL_MAX)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Maps a position to its voxel index. Out-of-bounds positions are rejected.
pub fn voxelize(position: [f64; 3], bounds: &WorkspaceBounds) -> Result<[u8; 3], CodecError> {
    let mut out = [0u8; 3];
    for axis in 0..3 {
        let p = position[axis];
        let (lo, hi) = (bounds.min[axis], bounds.max[axis]);
        if !(p >= lo && p <= hi) {
            return Err(CodecError::OutOfWorkspace {
                axis,
                value: p,
                min: lo,
                max: hi,
            });
        }
        let v = ((p - lo) / (hi - lo) * f64::from(VOXEL_MAX)).floor();
        out[axis] = v.clamp(0.0, f64::from(VOXEL_MAX)) as u8;
    }
    Ok(out)
}

/// Centre of the grid cell `voxel`; index 99 maps to the upper bound.
pub fn devoxelize(voxel: [u8; 3], bounds: &WorkspaceBounds) -> Result<[f64; 3], CodecError> {
    let mut out = [0.0; 3];
    for axis in 0..3 {
        let v = voxel[axis];
        check_range("voxel", i64::from(v), i64::from(VOXEL_MAX))?;
        out[axis] = if v == VOXEL_MAX {
            bounds.max[axis]
        } else {
            bounds.min[axis] + (f64::from(v) + 0.5) / f64::from(VOXEL_MAX) * bounds.span(axis)
        };
    }
    Ok(out)
}

/// Continuous voxel-space coordinate of a metric position (no flooring).
pub fn to_grid_units(position: [f64; 3], bounds: &WorkspaceBounds) -> [f64; 3] {
    let mut out = [0.0; 3];
    for axis in 0..3 {
        out[axis] = (position[axis] - bounds.min[axis]) / bounds.voxel_edge(axis);
    }
    out
}

/// Inverse of [`to_grid_units`].
pub fn from_grid_units(grid: [f64; 3], bounds: &WorkspaceBounds) -> [f64; 3] {
    let mut out = [0.0; 3];
    for axis in 0..3 {
        out[axis] = bounds.min[axis] + grid[axis] * bounds.voxel_edge(axis);
    }
    out
}

fn check_range(what: &'static str, value: i64, max: i64) -> Result<(), CodecError> {
    if (0..=max).contains(&value) {
        Ok(())
    } else {
        Err(CodecError::Range { what, value, max })
    }
}

/// Unit quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle_rad` about the (normalized) `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle_rad / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= QUAT_NORM_TOL
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// Intrinsic xyz Euler angles (radians): `R = Rx(a) * Ry(b) * Rz(c)`.
    pub fn from_euler_xyz(angles: [f64; 3]) -> Self {
        let qx = Self::from_axis_angle([1.0, 0.0, 0.0], angles[0]);
        let qy = Self::from_axis_angle([0.0, 1.0, 0.0], angles[1]);
        let qz = Self::from_axis_angle([0.0, 0.0, 1.0], angles[2]);
        qx.mul(&qy).mul(&qz)
    }

    fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let n = self.norm();
        let (w, x, y, z) = (self.w / n, self.x / n, self.y / n, self.z / n);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Intrinsic xyz Euler angles in radians, pitch in `[-pi/2, pi/2]`.
    ///
    /// The second value is true when the pitch is within 1e-3 rad of
    /// `+-pi/2`; the yaw is then fixed to zero and the roll absorbs the
    /// remaining rotation.
    pub fn to_euler_xyz(&self) -> ([f64; 3], bool) {
        let r = self.rotation_matrix();
        let pitch = r[0][2].clamp(-1.0, 1.0).asin();
        let gimbal = (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_TOL_RAD;
        if gimbal {
            let roll = if pitch > 0.0 {
                r[1][0].atan2(r[1][1])
            } else {
                (-r[1][0]).atan2(r[1][1])
            };
            ([roll, pitch, 0.0], true)
        } else {
            let roll = (-r[1][2]).atan2(r[2][2]);
            let yaw = (-r[0][1]).atan2(r[0][0]);
            ([roll, pitch, yaw], false)
        }
    }

    /// True when both quaternions describe the same rotation.
    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        let dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        (dot.abs() - 1.0).abs() <= tol
    }
}

/// Rotation bins plus the gimbal flag raised by the Euler decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinnedRotation {
    pub bins: [u8; 3],
    pub gimbal_warning: bool,
}

pub fn bin_rotation(q: &Quaternion) -> Result<BinnedRotation, CodecError> {
    if !q.is_unit() {
        return Err(CodecError::NonUnitQuaternion(q.norm()));
    }
    let (angles, gimbal_warning) = q.to_euler_xyz();
    let mut bins = [0u8; 3];
    for (bin, angle) in bins.iter_mut().zip(angles) {
        let deg = angle.to_degrees().rem_euclid(360.0);
        let idx = (deg / ROT_BIN_DEG + BIN_EDGE_EPS).floor() as i64;
        *bin = idx.rem_euclid(i64::from(ROT_BINS)) as u8;
    }
    Ok(BinnedRotation {
        bins,
        gimbal_warning,
    })
}

/// Quaternion at the centre of each rotation bin.
pub fn unbin_rotation(rot: [u8; 3]) -> Result<Quaternion, CodecError> {
    let mut angles = [0.0; 3];
    for axis in 0..3 {
        check_range("rotation", i64::from(rot[axis]), i64::from(ROT_BINS - 1))?;
        angles[axis] = ((f64::from(rot[axis]) + 0.5) * ROT_BIN_DEG).to_radians();
    }
    Ok(Quaternion::from_euler_xyz(angles))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPose {
    pub position: [f64; 3],
    pub orientation: Quaternion,
    /// Normalized aperture, 0 = closed, 1 = fully open.
    pub gripper: f64,
}

impl ContinuousPose {
    pub fn new(position: [f64; 3], orientation: Quaternion, gripper: f64) -> Self {
        Self {
            position,
            orientation,
            gripper,
        }
    }
}

pub fn gripper_bit(aperture: f64) -> Result<u8, CodecError> {
    if !(0.0..=1.0).contains(&aperture) {
        return Err(CodecError::InvalidGripper(aperture));
    }
    Ok(u8::from(aperture >= GRIPPER_OPEN_THRESHOLD))
}

pub fn discretize_pose(
    pose: &ContinuousPose,
    bounds: &WorkspaceBounds,
) -> Result<DiscreteAction, CodecError> {
    let voxel = voxelize(pose.position, bounds)?;
    let rot = bin_rotation(&pose.orientation)?.bins;
    let gripper = gripper_bit(pose.gripper)?;
    Ok(DiscreteAction {
        voxel,
        rot,
        gripper,
    })
}

/// One arm's keyframe command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<u8>")]
pub struct DiscreteAction {
    pub voxel: [u8; 3],
    pub rot: [u8; 3],
    pub gripper: u8,
}

impl DiscreteAction {
    pub const ARITY: usize = 7;

    pub fn new(voxel: [u8; 3], rot: [u8; 3], gripper: u8) -> Result<Self, CodecError> {
        Self::from_ints(&[
            voxel[0].into(),
            voxel[1].into(),
            voxel[2].into(),
            rot[0].into(),
            rot[1].into(),
            rot[2].into(),
            gripper.into(),
        ])
    }

    pub fn from_ints(values: &[i64]) -> Result<Self, CodecError> {
        if values.len() != Self::ARITY {
            return Err(CodecError::Arity {
                expected: Self::ARITY,
                got: values.len(),
            });
        }
        for &v in &values[0..3] {
            check_range("voxel", v, i64::from(VOXEL_MAX))?;
        }
        for &v in &values[3..6] {
            check_range("rotation", v, i64::from(ROT_BINS - 1))?;
        }
        check_range("gripper", values[6], 1)?;
        let b = |i: usize| values[i] as u8;
        Ok(Self {
            voxel: [b(0), b(1), b(2)],
            rot: [b(3), b(4), b(5)],
            gripper: b(6),
        })
    }

    pub fn to_array(&self) -> [u8; 7] {
        let [x, y, z] = self.voxel;
        let [a, b, c] = self.rot;
        [x, y, z, a, b, c, self.gripper]
    }

    pub fn is_open(&self) -> bool {
        self.gripper == 1
    }
}

impl TryFrom<Vec<i64>> for DiscreteAction {
    type Error = CodecError;
    fn try_from(v: Vec<i64>) -> Result<Self, Self::Error> {
        Self::from_ints(&v)
    }
}

impl From<DiscreteAction> for Vec<u8> {
    fn from(a: DiscreteAction) -> Self {
        a.to_array().to_vec()
    }
}

/// The joint command `[right, left]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<u8>")]
pub struct BimanualAction {
    pub right: DiscreteAction,
    pub left: DiscreteAction,
}

impl BimanualAction {
    pub const ARITY: usize = 14;

    pub fn new(right: DiscreteAction, left: DiscreteAction) -> Self {
        Self { right, left }
    }

    pub fn from_ints(values: &[i64]) -> Result<Self, CodecError> {
        if values.len() != Self::ARITY {
            return Err(CodecError::Arity {
                expected: Self::ARITY,
                got: values.len(),
            });
        }
        Ok(Self {
            right: DiscreteAction::from_ints(&values[..7])?,
            left: DiscreteAction::from_ints(&values[7..])?,
        })
    }

    pub fn to_array(&self) -> [u8; 14] {
        let mut out = [0u8; 14];
        out[..7].copy_from_slice(&self.right.to_array());
        out[7..].copy_from_slice(&self.left.to_array());
        out
    }

    pub fn arm(&self, arm: Arm) -> DiscreteAction {
        match arm {
            Arm::Right => self.right,
            Arm::Left => self.left,
        }
    }

    /// Left and right swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            right: self.left,
            left: self.right,
        }
    }
}

impl TryFrom<Vec<i64>> for BimanualAction {
    type Error = CodecError;
    fn try_from(v: Vec<i64>) -> Result<Self, Self::Error> {
        Self::from_ints(&v)
    }
}

impl From<BimanualAction> for Vec<u8> {
    fn from(a: BimanualAction) -> Self {
        a.to_array().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    #[default]
    Right,
    Left,
}

impl Arm {
    pub fn other(self) -> Self {
        match self {
            Arm::Right => Arm::Left,
            Arm::Left => Arm::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Right => "right",
            Arm::Left => "left",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "right" => Ok(Arm::Right),
            "left" => Ok(Arm::Left),
            other => Err(format!("unknown arm '{other}' (expected right or left)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn voxelize_bounds_and_midpoint() {
        let b = WorkspaceBounds::default();
        assert_eq!(voxelize([-0.3, -0.5, 0.6], &b).unwrap(), [0, 0, 0]);
        assert_eq!(voxelize([0.7, 0.5, 1.6], &b).unwrap(), [99, 99, 99]);
        assert_eq!(voxelize([0.2, 0.0, 1.1], &b).unwrap(), [49, 49, 49]);
    }

    #[test]
    fn voxelize_rejects_out_of_bounds() {
        let b = WorkspaceBounds::default();
        let err = voxelize([0.2, 0.51, 1.1], &b).unwrap_err();
        assert!(matches!(err, CodecError::OutOfWorkspace { axis: 1, .. }));
        assert!(voxelize([f64::NAN, 0.0, 1.0], &b).is_err());
    }

    #[test]
    fn devoxelize_cell_centres() {
        let b = WorkspaceBounds::default();
        let p = devoxelize([0, 0, 0], &b).unwrap();
        let half = 0.5 / 99.0;
        for (got, want) in p.iter().zip([-0.3 + half, -0.5 + half, 0.6 + half]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(devoxelize([99, 99, 99], &b).unwrap(), [0.7, 0.5, 1.6]);
        assert!(matches!(
            devoxelize([100, 0, 0], &b),
            Err(CodecError::Range { .. })
        ));
    }

    #[test]
    fn invalid_bounds() {
        assert!(WorkspaceBounds::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn bin_rotation_examples() {
        assert_eq!(bin_rotation(&Quaternion::IDENTITY).unwrap().bins, [0, 0, 0]);
        let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], deg(5.0));
        assert_eq!(bin_rotation(&q).unwrap().bins, [1, 0, 0]);
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], deg(-2.5));
        assert_eq!(bin_rotation(&q).unwrap().bins[2], 71);
    }

    #[test]
    fn gimbal_flag_is_a_warning() {
        let q = Quaternion::from_axis_angle([0.0, 1.0, 0.0], deg(90.0));
        let r = bin_rotation(&q).unwrap();
        assert!(r.gimbal_warning);
        assert_eq!(r.bins[1], 18);
        let q = Quaternion::from_axis_angle([0.0, 1.0, 0.0], deg(80.0));
        assert!(!bin_rotation(&q).unwrap().gimbal_warning);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(
            bin_rotation(&q),
            Err(CodecError::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn unbin_rotation_centres() {
        let q = unbin_rotation([0, 0, 0]).unwrap();
        let want = Quaternion::from_euler_xyz([deg(2.5), deg(2.5), deg(2.5)]);
        assert!(q.same_rotation(&want, 1e-12));
        let q = unbin_rotation([71, 71, 71]).unwrap();
        let want = Quaternion::from_euler_xyz([deg(357.5), deg(357.5), deg(357.5)]);
        assert!(q.same_rotation(&want, 1e-12));
        assert_eq!(bin_rotation(&q).unwrap().bins, [71, 71, 71]);
        assert!(unbin_rotation([0, 72, 0]).is_err());
    }

    #[test]
    fn discretize_pose_examples() {
        let b = WorkspaceBounds::default();
        let pose = ContinuousPose::new([-0.3, -0.5, 0.6], Quaternion::IDENTITY, 1.0);
        let a = discretize_pose(&pose, &b).unwrap();
        assert_eq!(a.to_array(), [0, 0, 0, 0, 0, 0, 1]);

        let pose = ContinuousPose::new([0.2, 0.0, 1.1], Quaternion::IDENTITY, 0.49);
        assert_eq!(discretize_pose(&pose, &b).unwrap().gripper, 0);

        let yaw = Quaternion::from_axis_angle([0.0, 0.0, 1.0], deg(5.0));
        let pose = ContinuousPose::new([0.2, 0.0, 1.1], yaw, 0.0);
        let a = discretize_pose(&pose, &b).unwrap();
        assert_eq!(a.to_array(), [49, 49, 49, 0, 0, 1, 0]);

        let pose = ContinuousPose::new([0.8, 0.0, 1.1], yaw, 0.0);
        assert!(matches!(
            discretize_pose(&pose, &b),
            Err(CodecError::OutOfWorkspace { axis: 0, .. })
        ));
    }

    #[test]
    fn action_arrays_validate() {
        assert!(DiscreteAction::from_ints(&[0, 0, 0, 0, 0, 72, 1]).is_err());
        assert!(DiscreteAction::from_ints(&[0, 0, 0, 0, 0, 0, 2]).is_err());
        assert!(DiscreteAction::from_ints(&[0, 0, -1, 0, 0, 0, 1]).is_err());
        let a: BimanualAction =
            serde_json::from_str("[1,2,3,4,5,6,1,7,8,9,10,11,12,0]").unwrap();
        assert_eq!(a.left.voxel, [7, 8, 9]);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            "[1,2,3,4,5,6,1,7,8,9,10,11,12,0]"
        );
        assert!(serde_json::from_str::<BimanualAction>("[1,2,3]").is_err());
    }
}

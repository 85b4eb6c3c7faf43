//! Rigid-body poses, frame transforms and the sidescan range/bearing model.
//!
//! World frame is ENU (x east, y north, z up). Body and sensor frames are
//! x forward, y to port, z up; orientation is built from roll-pitch-yaw in
//! the ZYX order, so yaw is heading measured counter-clockwise from east.
//! The starboard swath therefore lies on negative sensor y.

use nalgebra::{Matrix2, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Which side of the vehicle a sidescan transducer looks to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Port,
    Starboard,
}

impl Side {
    /// Sign of the sensor-frame y axis on this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Port => 1.0,
            Side::Starboard => -1.0,
        }
    }

    pub fn of_lateral(y: f64) -> Side {
        if y >= 0.0 {
            Side::Port
        } else {
            Side::Starboard
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Rotation3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    pub fn new(position: Vec3, rotation: Rotation3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn from_xyz_rpy(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw),
        }
    }

    /// (roll, pitch, yaw) in the ZYX convention.
    pub fn rpy(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn yaw(&self) -> f64 {
        self.rpy().2
    }

    /// `self ∘ other`: maps points of `other`'s child frame into `self`'s parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation * other.position,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose {
            position: -(rinv * self.position),
            rotation: rinv,
        }
    }

    /// Pose of `other` expressed in this pose's frame, `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation * p
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.position)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite())
    }

    /// Right-perturbation retraction: `t + δt`, `R·Exp(δθ)`.
    pub fn retract(&self, delta: &[f64]) -> Pose {
        Pose {
            position: self.position + Vec3::new(delta[0], delta[1], delta[2]),
            rotation: self.rotation * so3_exp(&Vec3::new(delta[3], delta[4], delta[5])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub position: [f64; 3],
}

impl Landmark {
    pub fn new(id: u32, position: Vec3) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("landmark position"));
        }
        Ok(Self {
            id,
            position: [position.x, position.y, position.z],
        })
    }

    pub fn point(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

/// One paired range/bearing observation `z = (r, 0)` with its noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SonarMeasurement {
    pub slant_range: f64,
    pub bearing_residual: f64,
    pub noise_cov: Matrix2<f64>,
}

impl SonarMeasurement {
    pub fn new(slant_range: f64, bearing_residual: f64, noise_cov: Matrix2<f64>) -> Result<Self> {
        if !(slant_range > 0.0) || !slant_range.is_finite() {
            return Err(Error::InvalidData(format!(
                "slant range must be positive, got {slant_range}"
            )));
        }
        let symmetric = (noise_cov[(0, 1)] - noise_cov[(1, 0)]).abs() <= 1e-12;
        if !symmetric || noise_cov.cholesky().is_none() {
            return Err(Error::InvalidData(
                "measurement covariance is not symmetric positive definite".into(),
            ));
        }
        Ok(Self {
            slant_range,
            bearing_residual,
            noise_cov,
        })
    }

    pub fn diagonal(slant_range: f64, sigma_range: f64, sigma_bearing: f64) -> Result<Self> {
        Self::new(
            slant_range,
            0.0,
            Matrix2::new(sigma_range * sigma_range, 0.0, 0.0, sigma_bearing * sigma_bearing),
        )
    }
}

/// One sidescan ping: sensor pose plus both intensity vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Ping {
    pub index: usize,
    pub pose: Pose,
    pub altimeter: Option<f64>,
    pub port_bins: Vec<f64>,
    pub starboard_bins: Vec<f64>,
    pub slant_range_max: f64,
}

impl Ping {
    pub fn n_bins(&self) -> usize {
        self.port_bins.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.slant_range_max / self.n_bins() as f64
    }

    /// Slant range at the centre of bin `n`.
    pub fn bin_range(&self, n: usize) -> f64 {
        bin_center_range(n, self.n_bins(), self.slant_range_max)
    }

    pub fn bins(&self, side: Side) -> &[f64] {
        match side {
            Side::Port => &self.port_bins,
            Side::Starboard => &self.starboard_bins,
        }
    }
}

pub fn bin_center_range(n: usize, n_bins: usize, slant_range_max: f64) -> f64 {
    (n as f64 + 0.5) * slant_range_max / n_bins as f64
}

/// A contiguous block of pings treated as rigid around its centre ping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submap {
    pub first: usize,
    pub last: usize,
    pub center: usize,
}

impl Submap {
    pub fn new(first: usize, last: usize) -> Self {
        assert!(first <= last, "submap range reversed");
        Self {
            first,
            last,
            center: first + (last - first) / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ping: usize) -> bool {
        (self.first..=self.last).contains(&ping)
    }
}

/// Splits `n_pings` into disjoint consecutive submaps of `size` pings; a short
/// tail is merged into the previous submap.
pub fn partition_submaps(n_pings: usize, size: usize) -> Vec<Submap> {
    assert!(size > 0);
    let mut out = Vec::new();
    let mut first = 0;
    while first < n_pings {
        let mut last = (first + size).min(n_pings) - 1;
        if n_pings - last - 1 < size / 2 {
            last = n_pings - 1;
        }
        out.push(Submap::new(first, last));
        first = last + 1;
    }
    out
}

/// Waterfall column convention used by association files: a ping row is laid
/// out port far-range first, then starboard near-range first, so column
/// `c < n_bins` is port bin `n_bins - 1 - c` and `c >= n_bins` is starboard
/// bin `c - n_bins`.
pub fn column_to_bin(column: u32, n_bins: usize) -> (Side, usize) {
    let c = column as usize;
    if c < n_bins {
        (Side::Port, n_bins - 1 - c)
    } else {
        (Side::Starboard, c - n_bins)
    }
}

pub fn bin_to_column(side: Side, bin: usize, n_bins: usize) -> u32 {
    match side {
        Side::Port => (n_bins - 1 - bin) as u32,
        Side::Starboard => (n_bins + bin) as u32,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationEntry {
    pub alpha_ping: usize,
    pub beta_ping: usize,
    pub landmark_id: u32,
    pub alpha_bin: u32,
    pub beta_bin: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataAssociation {
    pub entries: Vec<AssociationEntry>,
}

impl DataAssociation {
    pub fn new(entries: Vec<AssociationEntry>) -> Result<Self> {
        let da = Self { entries };
        da.validate()?;
        Ok(da)
    }

    pub fn validate(&self) -> Result<()> {
        use std::collections::HashMap;
        // (ping, landmark) -> bin; the same observation may appear in several
        // entries but must always carry the same bin.
        let mut seen: HashMap<(usize, u32), u32> = HashMap::new();
        for e in &self.entries {
            if e.alpha_ping == e.beta_ping {
                return Err(Error::InvalidData(format!(
                    "association for landmark {} pairs ping {} with itself",
                    e.landmark_id, e.alpha_ping
                )));
            }
            for (ping, bin) in [(e.alpha_ping, e.alpha_bin), (e.beta_ping, e.beta_bin)] {
                if let Some(prev) = seen.insert((ping, e.landmark_id), bin) {
                    if prev != bin {
                        return Err(Error::InvalidData(format!(
                            "landmark {} observed twice from ping {ping}",
                            e.landmark_id
                        )));
                    }
                }
            }
        }
        let mut pairs: Vec<_> = self
            .entries
            .iter()
            .map(|e| (e.alpha_ping, e.beta_ping, e.landmark_id))
            .collect();
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidData("duplicate association entry".into()));
        }
        Ok(())
    }
}

/// Landmark in the sensor frame of a ping that belongs to a submap:
/// `(ᶜT_s)⁻¹ (ᵖT_c)⁻¹ (T_p)⁻¹ l`.
///
/// `center_pose` is the world pose of the submap centre, `ping_pose` the pose
/// of the ping relative to that centre, and `sensor_offset` the
/// body-to-sensor transform.
pub fn world_to_sensor(landmark: &Vec3, ping_pose: &Pose, center_pose: &Pose, sensor_offset: &Pose) -> Vec3 {
    let world_from_sensor = center_pose.compose(ping_pose).compose(sensor_offset);
    world_from_sensor.inverse_transform_point(landmark)
}

/// Range and along-track residual of a sensor-frame point.
pub fn measure(landmark_sensor: &Vec3) -> Result<(f64, f64)> {
    let r = landmark_sensor.norm();
    if !r.is_finite() {
        return Err(Error::NonFinite("sensor-frame landmark"));
    }
    if r == 0.0 {
        return Err(Error::DegenerateLandmark);
    }
    Ok((r, landmark_sensor.x))
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(w: &Vec3) -> Rotation3<f64> {
    Rotation3::new(*w)
}

/// Rotation vector of `r`. Goes through the quaternion, which stays finite
/// where the trace-based angle hits `acos` of a value just above one.
pub fn so3_log(r: &Rotation3<f64>) -> Vec3 {
    UnitQuaternion::from_rotation_matrix(r).scaled_axis()
}

/// Inverse right Jacobian of SO(3): `Log(Exp(φ)·Exp(δ)) ≈ φ + J_r⁻¹(φ)·δ`.
pub fn so3_right_jacobian_inv(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coef * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rand_pose(v: &[f64]) -> Pose {
        Pose::from_xyz_rpy(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    #[test]
    fn log_of_near_identity_stays_finite() {
        for k in 0..2000 {
            let a = Rotation3::from_euler_angles(0.0, 0.0, 0.00314 * k as f64);
            let d = Rotation3::from_euler_angles(0.0, 0.0, 0.0666);
            let r = a.inverse() * (a * d) * d.inverse();
            let w = so3_log(&r);
            assert!(w.iter().all(|v| v.is_finite()) && w.norm() < 1e-12);
        }
    }

    #[test]
    fn identity_transform_is_passthrough() {
        let l = Vec3::new(1.0, 2.0, 3.0);
        let id = Pose::identity();
        assert_eq!(world_to_sensor(&l, &id, &id, &id), l);
    }

    #[test]
    fn pure_translation() {
        let ping = Pose::from_xyz_rpy(10.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let id = Pose::identity();
        let s = world_to_sensor(&Vec3::new(11.0, 2.0, 3.0), &ping, &id, &id);
        assert_relative_eq!(s, Vec3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn yawed_ping_matches_homogeneous_product() {
        // Independent route: explicit 4x4 matrices written out by hand.
        let ping = Pose::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2);
        let id = Pose::identity();
        let s = world_to_sensor(&Vec3::new(0.0, 1.0, 0.0), &ping, &id, &id);
        let t = nalgebra::Matrix4::new(
            0.0, -1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let inv = t.try_inverse().unwrap();
        let expected = inv * nalgebra::Vector4::new(0.0, 1.0, 0.0, 1.0);
        assert_relative_eq!(s, expected.xyz(), epsilon = 1e-12);
        assert_relative_eq!(s, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn measure_examples() {
        assert_eq!(measure(&Vec3::new(0.0, 3.0, -4.0)).unwrap(), (5.0, 0.0));
        let (r, b) = measure(&Vec3::new(0.1, 3.0, -4.0)).unwrap();
        assert_relative_eq!(r, (0.01f64 + 25.0).sqrt(), epsilon = 1e-15);
        assert_eq!(b, 0.1);
        assert!(matches!(measure(&Vec3::zeros()), Err(Error::DegenerateLandmark)));
    }

    #[test]
    fn measurement_covariance_must_be_spd() {
        assert!(SonarMeasurement::diagonal(10.0, 0.5, 0.2).is_ok());
        assert!(SonarMeasurement::new(10.0, 0.0, Matrix2::new(1.0, 0.0, 0.0, -1.0)).is_err());
        assert!(SonarMeasurement::new(10.0, 0.0, Matrix2::new(1.0, 0.5, 0.0, 1.0)).is_err());
        assert!(SonarMeasurement::diagonal(0.0, 0.5, 0.2).is_err());
    }

    #[test]
    fn association_rejects_self_pairs_and_duplicates() {
        let e = AssociationEntry {
            alpha_ping: 1,
            beta_ping: 1,
            landmark_id: 0,
            alpha_bin: 0,
            beta_bin: 0,
        };
        assert!(DataAssociation::new(vec![e]).is_err());
        let e = AssociationEntry { beta_ping: 2, ..e };
        assert!(DataAssociation::new(vec![e, e]).is_err());
        assert!(DataAssociation::new(vec![e]).is_ok());
    }

    #[test]
    fn submap_partition_covers_all_pings() {
        let maps = partition_submaps(1050, 200);
        assert_eq!(maps.first().unwrap().first, 0);
        assert_eq!(maps.last().unwrap().last, 1049);
        for w in maps.windows(2) {
            assert_eq!(w[0].last + 1, w[1].first);
        }
        for m in &maps {
            assert!(m.first <= m.center && m.center <= m.last);
        }
        assert_eq!(maps.len(), 5);
    }

    #[test]
    fn column_convention_roundtrip() {
        for side in [Side::Port, Side::Starboard] {
            for bin in [0, 7, 63] {
                let c = bin_to_column(side, bin, 64);
                assert_eq!(column_to_bin(c, 64), (side, bin));
            }
        }
    }

    proptest! {
        #[test]
        fn pose_inverse_composes_to_identity(v in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let p = rand_pose(&v);
            let id = p.compose(&p.inverse());
            prop_assert!(id.position.norm() < 1e-9);
            prop_assert!((id.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
            let m = p.rotation.matrix();
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-9);
        }

        #[test]
        fn sensor_chain_inverts(a in proptest::collection::vec(-3.0f64..3.0, 6),
                                b in proptest::collection::vec(-3.0f64..3.0, 6),
                                c in proptest::collection::vec(-1.0f64..1.0, 6),
                                l in proptest::collection::vec(-50.0f64..50.0, 3)) {
            let (ping, center, offset) = (rand_pose(&a), rand_pose(&b), rand_pose(&c));
            let l = Vec3::new(l[0], l[1], l[2]);
            let s = world_to_sensor(&l, &ping, &center, &offset);
            let back = center.compose(&ping).compose(&offset).transform_point(&s);
            prop_assert!((back - l).norm() < 1e-9);
        }

        #[test]
        fn range_invariant_to_roll_about_x(p in proptest::collection::vec(-20.0f64..20.0, 3), ang in -3.0f64..3.0) {
            let v = Vec3::new(p[0], p[1], p[2]);
            prop_assume!(v.norm() > 1e-6);
            let rotated = Rotation3::from_euler_angles(ang, 0.0, 0.0) * v;
            let (r0, b0) = measure(&v).unwrap();
            let (r1, b1) = measure(&rotated).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-12 * r0.max(1.0));
            prop_assert!((b0 - b1).abs() <= 1e-12);
            // Brute-force recomputation.
            let brute = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            prop_assert!((r0 - brute).abs() <= 1e-12 * brute);
            prop_assert_eq!(b0, p[0]);
        }

        #[test]
        fn in_plane_landmarks_have_zero_bearing(y in -40.0f64..40.0, z in -40.0f64..40.0) {
            prop_assume!(y.abs() + z.abs() > 1e-6);
            let (_, b) = measure(&Vec3::new(0.0, y, z)).unwrap();
            prop_assert_eq!(b, 0.0);
        }

        #[test]
        fn right_jacobian_inverse_matches_finite_difference(w in proptest::collection::vec(-1.5f64..1.5, 3),
                                                           d in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let phi = Vec3::new(w[0], w[1], w[2]);
            let dir = Vec3::new(d[0], d[1], d[2]);
            let h = 1e-6;
            let plus = so3_log(&(so3_exp(&phi) * so3_exp(&(dir * h))));
            let minus = so3_log(&(so3_exp(&phi) * so3_exp(&(-dir * h))));
            let fd = (plus - minus) / (2.0 * h);
            let an = so3_right_jacobian_inv(&phi) * dir;
            prop_assert!((fd - an).norm() <= 1e-6 * (1.0 + an.norm()));
        }
    }
}

//! Coordinate frames, rotations, angles and path-delay primitives.
//!
//! Everything lives in one local Cartesian frame (meters). Angles are stored
//! in radians; conversion to degrees only happens at the CLI boundary.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Speed of light in vacuum, m/s. Exact by definition of the meter.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;

/// Proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Builds a rotation from a matrix, rejecting anything that is not a
    /// proper rotation to within 1e-10.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-10 || (m.determinant() - 1.0).abs() > 1e-10 {
            return Err(Error::DegenerateGeometry(format!(
                "matrix is not a proper rotation (orthonormality error {err:.3e})"
            )));
        }
        Ok(Self(m))
    }

    /// Z-Y-X intrinsic Euler angles: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        Self(rz * ry * rx)
    }

    /// Rotation about the global z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_euler(yaw, 0.0, 0.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.transpose() * v
    }

    /// Local x axis expressed in the global frame.
    pub fn axis_x(&self) -> Vec3 {
        self.0.column(0).into_owned()
    }

    pub fn axis_y(&self) -> Vec3 {
        self.0.column(1).into_owned()
    }

    pub fn axis_z(&self) -> Vec3 {
        self.0.column(2).into_owned()
    }

    /// Re-orthonormalizes accumulated floating point drift.
    pub fn renormalized(&self) -> Rotation {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        Rotation(u * vt)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Rotation,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Rotation) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn at(position: Vec3) -> Self {
        Self::new(position, Rotation::identity())
    }

    /// Global point to local coordinates.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.orientation.apply_inverse(&(p - self.position))
    }

    pub fn to_global(&self, p: &Vec3) -> Vec3 {
        self.orientation.apply(p) + self.position
    }
}

/// Azimuth in (-pi, pi], elevation in [-pi/2, pi/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularDirection {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AngularDirection {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    pub fn boresight() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn unit(&self) -> Vec3 {
        unit_from_angles(self)
    }
}

/// Unit vector pointing from `from` to `to`.
pub fn direction_between(from: &Vec3, to: &Vec3) -> Result<Vec3> {
    let d = to - from;
    let n = d.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateGeometry(
            "direction between coincident points".into(),
        ));
    }
    Ok(d / n)
}

pub fn angles_from_unit(u: &Vec3) -> Result<AngularDirection> {
    let n = u.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidUnitVector(n));
    }
    let elevation = u.z.clamp(-1.0, 1.0).asin();
    // At the poles azimuth is undefined; pin it to zero.
    let azimuth = if u.x == 0.0 && u.y == 0.0 {
        0.0
    } else {
        let a = u.y.atan2(u.x);
        if a == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    };
    Ok(AngularDirection { azimuth, elevation })
}

pub fn unit_from_angles(a: &AngularDirection) -> Vec3 {
    let (se, ce) = a.elevation.sin_cos();
    let (sa, ca) = a.azimuth.sin_cos();
    Vec3::new(ce * ca, ce * sa, se)
}

/// Total propagation delay along a polyline, in seconds.
pub fn path_delay(waypoints: &[Vec3]) -> Result<f64> {
    if waypoints.len() < 2 {
        return Err(Error::DegenerateGeometry(
            "a path needs at least two waypoints".into(),
        ));
    }
    let mut length = 0.0;
    for w in waypoints.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if seg == 0.0 {
            return Err(Error::DegenerateGeometry(
                "consecutive waypoints coincide".into(),
            ));
        }
        length += seg;
    }
    Ok(length / SPEED_OF_LIGHT)
}

/// Jacobian of `(p - q)/|p - q|` with respect to `p`.
pub(crate) fn unit_jacobian(p: &Vec3, q: &Vec3) -> Matrix3<f64> {
    let d = p - q;
    let n = d.norm();
    let u = d / n;
    (Matrix3::identity() - u * u.transpose()) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn direction_examples() {
        let o = Vec3::zeros();
        assert_eq!(
            direction_between(&o, &Vec3::new(1.0, 0.0, 0.0)).unwrap(),
            Vec3::new(1.0, 0.0, 0.0)
        );
        let d = direction_between(&o, &Vec3::new(3.0, 4.0, 0.0)).unwrap();
        assert!((d - Vec3::new(0.6, 0.8, 0.0)).norm() < 1e-15);
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert!(matches!(
            direction_between(&p, &p),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn angle_examples() {
        let a = angles_from_unit(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((a.azimuth, a.elevation), (0.0, 0.0));
        let pole = angles_from_unit(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(pole.azimuth, 0.0);
        assert!((pole.elevation - FRAC_PI_2).abs() < 1e-15);
        let south = angles_from_unit(&Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(south.azimuth, 0.0);
        let b = angles_from_unit(&Vec3::new(0.6, 0.8, 0.0)).unwrap();
        assert!((b.azimuth - 0.927_295_218_001_612_2).abs() < 1e-12);
        assert_eq!(b.elevation, 0.0);
        assert!(matches!(
            angles_from_unit(&Vec3::new(1.0, 1.0, 0.0)),
            Err(Error::InvalidUnitVector(_))
        ));
        let back = angles_from_unit(&Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(back.azimuth, PI);
    }

    #[test]
    fn delay_examples() {
        let c = SPEED_OF_LIGHT;
        let d = path_delay(&[Vec3::zeros(), Vec3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d, 5.0 / c);
        assert!((d - 1.66782e-8).abs() < 1e-13);
        let d2 = path_delay(&[Vec3::zeros(), Vec3::new(0.0, 0.0, 0.001), Vec3::zeros()]).unwrap();
        assert!((d2 - 0.002 / c).abs() < 1e-24);
        assert!(path_delay(&[Vec3::zeros()]).is_err());
    }

    #[test]
    fn delay_matches_segment_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: Vec<Vec3> = (0..4)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-9.0..9.0),
                        rng.random_range(-9.0..9.0),
                        rng.random_range(-9.0..9.0),
                    )
                })
                .collect();
            let mut oracle = 0.0;
            for i in 0..3 {
                let (a, b) = (pts[i], pts[i + 1]);
                oracle += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
            }
            let d = path_delay(&pts).unwrap();
            assert!((d * SPEED_OF_LIGHT - oracle).abs() < 1e-12 * oracle);
        }
    }

    #[test]
    fn rotation_composition_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = Rotation::identity();
        for _ in 0..1000 {
            let q = Rotation::from_euler(
                rng.random_range(-PI..PI),
                rng.random_range(-1.5..1.5),
                rng.random_range(-PI..PI),
            );
            r = r.compose(&q);
        }
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
        assert!(Rotation::from_matrix(*r.renormalized().matrix()).is_ok());
    }

    #[test]
    fn rejects_improper_rotation() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn unit_jacobian_matches_finite_difference() {
        let p = Vec3::new(1.0, -2.0, 0.5);
        let q = Vec3::new(-0.3, 0.7, 2.0);
        let j = unit_jacobian(&p, &q);
        let h = 1e-6;
        for k in 0..3 {
            let mut dp = Vec3::zeros();
            dp[k] = h;
            let fd = ((p + dp - q).normalize() - (p - dp - q).normalize()) / (2.0 * h);
            assert!((j.column(k) - fd).norm() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn angles_round_trip(az in -PI..PI, el in (-FRAC_PI_2 + 1e-6)..(FRAC_PI_2 - 1e-6)) {
            let u = unit_from_angles(&AngularDirection::new(az, el));
            let back = unit_from_angles(&angles_from_unit(&u).unwrap());
            prop_assert!((u - back).norm() < 1e-9);
        }

        #[test]
        fn delay_invariant_under_rigid_motion(
            yaw in -PI..PI, pitch in -1.5f64..1.5, roll in -PI..PI,
            tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0,
            coords in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let pts: Vec<Vec3> = coords.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let pose = Pose::new(Vec3::new(tx, ty, tz), Rotation::from_euler(yaw, pitch, roll));
            let moved: Vec<Vec3> = pts.iter().map(|p| pose.to_global(p)).collect();
            let a = path_delay(&pts).unwrap();
            let b = path_delay(&moved).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-9));
        }
    }
}

//! World description: entity catalog, blockage geometry, line-of-sight and
//! coverage classification.
//!
//! Obstacles are infinitely tall vertical walls, tested in the horizontal
//! projection. An RIS reflects only into its front half-space (local +x).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3, SPEED_OF_LIGHT};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisSpec {
    pub id: String,
    pub pose: Pose,
    /// Element count along the local y axis.
    pub nx: usize,
    /// Element count along the local z axis.
    pub ny: usize,
    /// Element spacing in meters.
    pub spacing: f64,
}

impl RisSpec {
    pub fn new(id: impl Into<String>, pose: Pose, nx: usize, ny: usize, spacing: f64) -> Self {
        Self {
            id: id.into(),
            pose,
            nx,
            ny,
            spacing,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    /// Centered grid indices `(i, j)` of every element; element `m` sits at
    /// local `(0, i*spacing, j*spacing)`. Ordering is `m = a*ny + b`.
    pub fn element_indices(&self) -> Vec<(f64, f64)> {
        grid_indices(self.nx, self.ny)
    }

    pub fn local_element_positions(&self) -> Vec<Vec3> {
        self.element_indices()
            .into_iter()
            .map(|(i, j)| Vec3::new(0.0, i * self.spacing, j * self.spacing))
            .collect()
    }

    pub fn boresight(&self) -> Vec3 {
        self.pose.orientation.axis_x()
    }

    /// True when `p` lies strictly in front of the reflecting surface.
    pub fn faces(&self, p: &Vec3) -> bool {
        self.boresight().dot(&(p - self.pose.position)) > 0.0
    }
}

pub(crate) fn grid_indices(nx: usize, ny: usize) -> Vec<(f64, f64)> {
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(nx * ny);
    for a in 0..nx {
        for b in 0..ny {
            out.push((a as f64 - cx, b as f64 - cy));
        }
    }
    out
}

/// Global positions of every RIS element.
pub fn ris_element_positions(ris: &RisSpec) -> Vec<Vec3> {
    ris.local_element_positions()
        .iter()
        .map(|p| ris.pose.to_global(p))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconSpec {
    pub id: String,
    pub pose: Pose,
    pub array_nx: usize,
    pub array_ny: usize,
    /// Antenna spacing in meters (only meaningful for arrays).
    pub spacing: f64,
    /// Overrides the scenario transmit power for this beacon.
    pub tx_power_w: Option<f64>,
}

impl BeaconSpec {
    pub fn single(id: impl Into<String>, position: Vec3) -> Self {
        Self {
            id: id.into(),
            pose: Pose::at(position),
            array_nx: 1,
            array_ny: 1,
            spacing: 0.0,
            tx_power_w: None,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.array_nx * self.array_ny
    }

    pub fn is_array(&self) -> bool {
        self.n_antennas() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSpec {
    pub id: String,
    /// Ground truth. Estimators never read it.
    pub pose: Pose,
    /// Antennas of a uniform linear array along the local y axis at half
    /// wavelength spacing.
    pub n_antennas: usize,
    pub full_duplex: bool,
    pub sidelink: bool,
    /// Clock offset in seconds, unknown to estimators.
    pub clock_bias: f64,
    pub compute_capability: u32,
    /// Whether the device has the resources to act as a task coordinator.
    pub can_coordinate: bool,
}

impl UeSpec {
    pub fn new(id: impl Into<String>, position: Vec3) -> Self {
        Self {
            id: id.into(),
            pose: Pose::at(position),
            n_antennas: 1,
            full_duplex: false,
            sidelink: true,
            clock_bias: 0.0,
            compute_capability: 1,
            can_coordinate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSpec {
    pub id: String,
    pub pose: Pose,
    pub range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Obstacle {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverageClass {
    InCoverage,
    PartialCoverage,
    OutOfCoverage,
}

#[derive(Debug, Clone, Copy)]
pub enum EntityRef<'a> {
    Ris(&'a RisSpec),
    Beacon(&'a BeaconSpec),
    Ue(&'a UeSpec),
    Ap(&'a ApSpec),
}

impl EntityRef<'_> {
    pub fn id(&self) -> &str {
        match self {
            EntityRef::Ris(r) => &r.id,
            EntityRef::Beacon(b) => &b.id,
            EntityRef::Ue(u) => &u.id,
            EntityRef::Ap(a) => &a.id,
        }
    }

    pub fn pose(&self) -> &Pose {
        match self {
            EntityRef::Ris(r) => &r.pose,
            EntityRef::Beacon(b) => &b.pose,
            EntityRef::Ue(u) => &u.pose,
            EntityRef::Ap(a) => &a.pose,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.pose().position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subcarriers: usize,
    /// Transmit power per subcarrier sample, W.
    pub tx_power_w: f64,
    pub noise_psd_w_per_hz: f64,
    pub ris: Vec<RisSpec>,
    pub beacons: Vec<BeaconSpec>,
    pub ues: Vec<UeSpec>,
    pub aps: Vec<ApSpec>,
    pub obstacles: Vec<Obstacle>,
    pub sidelink_range: f64,
    pub seed: u64,
}

impl Scenario {
    /// An empty world with the given radio configuration.
    pub fn empty(carrier_hz: f64, bandwidth_hz: f64, n_subcarriers: usize) -> Self {
        Self {
            carrier_hz,
            bandwidth_hz,
            n_subcarriers,
            tx_power_w: 1e-3,
            noise_psd_w_per_hz: 4e-21,
            ris: Vec::new(),
            beacons: Vec::new(),
            ues: Vec::new(),
            aps: Vec::new(),
            obstacles: Vec::new(),
            sidelink_range: 50.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.carrier_hz > 0.0) {
            return bad("carrier_hz must be positive".into());
        }
        if !(self.bandwidth_hz >= 0.0) {
            return bad("bandwidth_hz must be non-negative".into());
        }
        if self.n_subcarriers == 0 {
            return bad("n_subcarriers must be at least 1".into());
        }
        if !(self.tx_power_w >= 0.0) || !(self.noise_psd_w_per_hz >= 0.0) {
            return bad("powers must be non-negative".into());
        }
        let mut ids = BTreeSet::new();
        for e in self.entities() {
            if !ids.insert(e.id().to_string()) {
                return bad(format!("duplicate id `{}`", e.id()));
            }
        }
        for r in &self.ris {
            if r.n_elements() == 0 || !(r.spacing > 0.0) {
                return bad(format!("ris `{}` needs nx*ny >= 1 and spacing > 0", r.id));
            }
        }
        for b in &self.beacons {
            if b.n_antennas() == 0 {
                return bad(format!("beacon `{}` needs at least one antenna", b.id));
            }
            if b.is_array() && !(b.spacing > 0.0) {
                return bad(format!("beacon `{}` array spacing must be positive", b.id));
            }
        }
        for u in &self.ues {
            if u.n_antennas == 0 {
                return bad(format!("ue `{}` needs at least one antenna", u.id));
            }
            if u.full_duplex && !u.sidelink {
                return bad(format!("ue `{}`: full_duplex requires sidelink", u.id));
            }
        }
        for a in &self.aps {
            if !(a.range > 0.0) {
                return bad(format!("ap `{}` range must be positive", a.id));
            }
        }
        for o in &self.obstacles {
            if o.a == o.b {
                return bad("obstacle endpoints must differ".into());
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// Per-sample noise variance `N0 * df`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_psd_w_per_hz * self.subcarrier_spacing()
    }

    pub fn is_wideband(&self) -> bool {
        self.n_subcarriers > 1
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityRef<'_>> {
        self.ris
            .iter()
            .map(EntityRef::Ris)
            .chain(self.beacons.iter().map(EntityRef::Beacon))
            .chain(self.ues.iter().map(EntityRef::Ue))
            .chain(self.aps.iter().map(EntityRef::Ap))
    }

    pub fn entity(&self, id: &str) -> Result<EntityRef<'_>> {
        self.entities()
            .find(|e| e.id() == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn position(&self, id: &str) -> Result<Vec3> {
        Ok(self.entity(id)?.position())
    }

    pub fn ris(&self, id: &str) -> Result<&RisSpec> {
        self.ris
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn ue(&self, id: &str) -> Result<&UeSpec> {
        self.ues
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn ue_mut(&mut self, id: &str) -> Result<&mut UeSpec> {
        self.ues
            .iter_mut()
            .find(|u| u.id == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn beacon(&self, id: &str) -> Result<&BeaconSpec> {
        self.beacons
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    /// Line of sight between two arbitrary points.
    pub fn clear_between(&self, p: &Vec3, q: &Vec3) -> bool {
        let (a, b) = ([p.x, p.y], [q.x, q.y]);
        !self
            .obstacles
            .iter()
            .any(|o| segments_intersect(a, b, o.a, o.b))
    }

    pub fn line_of_sight(&self, a: &str, b: &str) -> Result<bool> {
        let pa = self.position(a)?;
        let pb = self.position(b)?;
        Ok(self.clear_between(&pa, &pb))
    }

    /// An RIS can serve a point when the point is in front of it and not
    /// blocked.
    pub fn ris_serves(&self, ris: &RisSpec, p: &Vec3) -> bool {
        ris.faces(p) && self.clear_between(&ris.pose.position, p)
    }

    fn ap_covers(&self, p: &Vec3) -> bool {
        self.aps.iter().any(|ap| {
            (ap.pose.position - p).norm() <= ap.range && self.clear_between(&ap.pose.position, p)
        })
    }

    /// Sidelink-capable devices (UEs with a sidelink radio, beacons).
    fn sidelink_devices(&self) -> impl Iterator<Item = EntityRef<'_>> {
        self.ues
            .iter()
            .filter(|u| u.sidelink)
            .map(EntityRef::Ue)
            .chain(self.beacons.iter().map(EntityRef::Beacon))
    }

    /// In-coverage sidelink neighbor that can relay for `ue_id`, nearest
    /// first, ties broken by lowest id.
    pub fn coverage_relay(&self, ue_id: &str) -> Result<Option<String>> {
        let ue = self.ue(ue_id)?;
        if !ue.sidelink {
            return Ok(None);
        }
        let p = ue.pose.position;
        let mut best: Option<(f64, String)> = None;
        for dev in self.sidelink_devices() {
            if dev.id() == ue_id {
                continue;
            }
            let q = dev.position();
            let d = (q - p).norm();
            if d <= self.sidelink_range && self.clear_between(&p, &q) && self.ap_covers(&q) {
                let better = match &best {
                    None => true,
                    Some((bd, bid)) => d < *bd || (d == *bd && dev.id() < bid.as_str()),
                };
                if better {
                    best = Some((d, dev.id().to_string()));
                }
            }
        }
        Ok(best.map(|(_, id)| id))
    }

    pub fn coverage_class(&self, ue_id: &str) -> Result<CoverageClass> {
        let p = self.ue(ue_id)?.pose.position;
        if self.ap_covers(&p) {
            return Ok(CoverageClass::InCoverage);
        }
        if self.coverage_relay(ue_id)?.is_some() {
            return Ok(CoverageClass::PartialCoverage);
        }
        Ok(CoverageClass::OutOfCoverage)
    }

    /// Returns a copy with the UE moved to `position`.
    pub fn with_ue_position(&self, ue_id: &str, position: Vec3) -> Result<Scenario> {
        let mut s = self.clone();
        s.ue_mut(ue_id)?.pose.position = position;
        Ok(s)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test; touching counts as intersecting.
pub(crate) fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base() -> Scenario {
        Scenario::empty(28e9, 100e6, 64)
    }

    fn ap(id: &str, p: Vec3, range: f64) -> ApSpec {
        ApSpec {
            id: id.into(),
            pose: Pose::at(p),
            range,
        }
    }

    #[test]
    fn los_without_obstacles() {
        let mut s = base();
        s.ues.push(UeSpec::new("a", Vec3::new(0.0, 0.0, 0.0)));
        s.ues.push(UeSpec::new("b", Vec3::new(5.0, 3.0, 1.0)));
        assert!(s.line_of_sight("a", "b").unwrap());
        assert!(matches!(
            s.line_of_sight("a", "zz"),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn los_blocked_by_midpoint_wall() {
        let mut s = base();
        s.ues.push(UeSpec::new("a", Vec3::new(0.0, 0.0, 0.0)));
        s.ues.push(UeSpec::new("b", Vec3::new(4.0, 0.0, 0.0)));
        s.obstacles.push(Obstacle::new([2.0, -1.0], [2.0, 1.0]));
        assert!(!s.line_of_sight("a", "b").unwrap());
        assert!(!s.line_of_sight("b", "a").unwrap());
    }

    // Independent oracle: parametric solve of p1 + t(p2-p1) = q1 + s(q2-q1).
    fn oracle_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
        let r = [p2[0] - p1[0], p2[1] - p1[1]];
        let s = [q2[0] - q1[0], q2[1] - q1[1]];
        let den = r[0] * s[1] - r[1] * s[0];
        let qp = [q1[0] - p1[0], q1[1] - p1[1]];
        if den.abs() < 1e-15 {
            return false; // random inputs are never collinear
        }
        let t = (qp[0] * s[1] - qp[1] * s[0]) / den;
        let u = (qp[0] * r[1] - qp[1] * r[0]) / den;
        (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
    }

    #[test]
    fn los_matches_parametric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pt = || [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
        for _ in 0..100 {
            let mut s = base();
            let a = pt();
            let b = pt();
            s.ues.push(UeSpec::new("a", Vec3::new(a[0], a[1], 1.0)));
            s.ues.push(UeSpec::new("b", Vec3::new(b[0], b[1], 1.5)));
            let walls: Vec<Obstacle> = (0..3).map(|_| Obstacle::new(pt(), pt())).collect();
            let expected = !walls.iter().any(|w| oracle_intersect(a, b, w.a, w.b));
            s.obstacles = walls;
            assert_eq!(s.line_of_sight("a", "b").unwrap(), expected);
        }
    }

    #[test]
    fn coverage_examples() {
        let mut s = base();
        s.aps.push(ap("ap", Vec3::new(0.0, 0.0, 0.0), 100.0));
        s.ues.push(UeSpec::new("u1", Vec3::new(10.0, 0.0, 0.0)));
        assert_eq!(s.coverage_class("u1").unwrap(), CoverageClass::InCoverage);

        // u2 is walled off from the AP but sees u1 20 m away.
        s.ues.push(UeSpec::new("u2", Vec3::new(10.0, 20.0, 0.0)));
        s.obstacles.push(Obstacle::new([1.0, 1.0], [1.0, 10.0]));
        s.sidelink_range = 50.0;
        assert!(!s.clear_between(&Vec3::zeros(), &Vec3::new(10.0, 20.0, 0.0)));
        assert_eq!(
            s.coverage_class("u2").unwrap(),
            CoverageClass::PartialCoverage
        );
        assert_eq!(s.coverage_relay("u2").unwrap().as_deref(), Some("u1"));
        s.sidelink_range = 10.0;
        assert_eq!(
            s.coverage_class("u2").unwrap(),
            CoverageClass::OutOfCoverage
        );

        let mut lonely = base();
        lonely.ues.push(UeSpec::new("t", Vec3::new(1.0, 2.0, 0.0)));
        assert_eq!(
            lonely.coverage_class("t").unwrap(),
            CoverageClass::OutOfCoverage
        );
        assert!(lonely.coverage_class("x").is_err());
    }

    #[test]
    fn coverage_is_monotone_in_aps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut s = base();
            s.sidelink_range = 15.0;
            for k in 0..4 {
                s.ues.push(UeSpec::new(
                    format!("u{k}"),
                    Vec3::new(
                        rng.random_range(0.0..40.0),
                        rng.random_range(0.0..40.0),
                        1.5,
                    ),
                ));
            }
            s.aps.push(ap(
                "ap0",
                Vec3::new(
                    rng.random_range(0.0..40.0),
                    rng.random_range(0.0..40.0),
                    10.0,
                ),
                20.0,
            ));
            for _ in 0..3 {
                s.obstacles.push(Obstacle::new(
                    [rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)],
                    [rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)],
                ));
            }
            let before: Vec<_> = s
                .ues
                .iter()
                .map(|u| s.coverage_class(&u.id).unwrap())
                .collect();
            s.aps.push(ap(
                "ap1",
                Vec3::new(
                    rng.random_range(0.0..40.0),
                    rng.random_range(0.0..40.0),
                    10.0,
                ),
                25.0,
            ));
            for (u, b) in s.ues.iter().zip(before) {
                let after = s.coverage_class(&u.id).unwrap();
                if b == CoverageClass::InCoverage {
                    assert_eq!(after, CoverageClass::InCoverage);
                }
                if b == CoverageClass::PartialCoverage {
                    assert_ne!(after, CoverageClass::OutOfCoverage);
                }
            }
        }
    }

    #[test]
    fn element_grid_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let single = RisSpec::new("r", Pose::at(p), 1, 1, 0.01);
        assert_eq!(ris_element_positions(&single), vec![p]);

        let d = 0.2;
        let quad = RisSpec::new("r", Pose::default(), 2, 2, d);
        let pts = ris_element_positions(&quad);
        for (y, z) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let target = Vec3::new(0.0, y * d / 2.0, z * d / 2.0);
            assert!(pts.iter().any(|q| (q - target).norm() < 1e-15));
        }

        let pose = Pose::new(p, Rotation::from_euler(0.4, -0.2, 1.1));
        let r35 = RisSpec::new("r", pose, 3, 5, 0.005);
        let pts = ris_element_positions(&r35);
        assert_eq!(pts.len(), 15);
        let mean = pts.iter().fold(Vec3::zeros(), |acc, q| acc + q) / 15.0;
        assert!((mean - p).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn element_spacing_is_exact(nx in 1usize..6, ny in 1usize..6, yaw in -3.0f64..3.0, pitch in -1.0f64..1.0, d in 0.001f64..0.1) {
            prop_assume!(nx * ny >= 2);
            let r = RisSpec::new("r", Pose::new(Vec3::new(1.0, -2.0, 0.5), Rotation::from_euler(yaw, pitch, 0.3)), nx, ny, d);
            let pts = ris_element_positions(&r);
            prop_assert_eq!(pts.len(), nx * ny);
            let mut min = f64::INFINITY;
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    min = min.min((pts[i] - pts[j]).norm());
                }
            }
            prop_assert!((min - d).abs() < 1e-12);
        }

        #[test]
        fn los_is_symmetric(coords in proptest::collection::vec(0.0f64..10.0, 8)) {
            let mut s = base();
            s.ues.push(UeSpec::new("a", Vec3::new(coords[0], coords[1], 0.0)));
            s.ues.push(UeSpec::new("b", Vec3::new(coords[2], coords[3], 0.0)));
            s.obstacles.push(Obstacle::new([coords[4], coords[5]], [coords[6], coords[7]]));
            prop_assert_eq!(s.line_of_sight("a", "b").unwrap(), s.line_of_sight("b", "a").unwrap());
        }
    }
}

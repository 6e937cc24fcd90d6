//! RIS phase profiles and slot schedules.
//!
//! Multiple RISs share the air by multiplying their per-block base profile
//! with a Walsh-Hadamard code across the slots of the block (phase flips of
//! 0 or pi). Code row 0 is never handed out, so static paths such as the
//! direct link stay separable from every RIS.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ris_steering;
use crate::geometry::AngularDirection;
use crate::scene::RisSpec;
use crate::util::{sub_rng, wrap_phase};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile(Vec<f64>);

impl PhaseProfile {
    /// Wraps every phase into [0, 2pi).
    pub fn new(phases: Vec<f64>) -> Self {
        Self(phases.into_iter().map(wrap_phase).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn phases(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `shift` to every phase.
    pub fn rotated(&self, shift: f64) -> Self {
        Self::new(self.0.iter().map(|p| p + shift).collect())
    }
}

/// How slots are grouped into code blocks and which Hadamard row each
/// coded aperture uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeLayout {
    pub code_len: usize,
    pub n_blocks: usize,
    pub rows: BTreeMap<String, usize>,
}

impl CodeLayout {
    /// +1 or -1 for `row` at `slot`.
    pub fn code(&self, row: usize, slot: usize) -> f64 {
        hadamard_entry(row, slot % self.code_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSchedule {
    n_slots: usize,
    profiles: BTreeMap<String, Vec<PhaseProfile>>,
    layout: Option<CodeLayout>,
}

impl ProfileSchedule {
    /// A schedule with `n_slots` slots and no configurable apertures.
    pub fn static_slots(n_slots: usize) -> Self {
        Self {
            n_slots,
            profiles: BTreeMap::new(),
            layout: None,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn layout(&self) -> Option<&CodeLayout> {
        self.layout.as_ref()
    }

    pub fn profiles(&self, id: &str) -> Option<&[PhaseProfile]> {
        self.profiles.get(id).map(|v| v.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(|k| k.as_str())
    }

    pub fn insert(&mut self, id: &str, profiles: Vec<PhaseProfile>) -> Result<()> {
        if profiles.len() != self.n_slots {
            return Err(Error::ScheduleMismatch(format!(
                "{} profiles given for `{id}`, schedule has {} slots",
                profiles.len(),
                self.n_slots
            )));
        }
        self.profiles.insert(id.to_string(), profiles);
        Ok(())
    }

    /// Per-block base profile of `id` (the profile with its code removed).
    pub fn base_profile(&self, id: &str, block: usize) -> Option<PhaseProfile> {
        let layout = self.layout.as_ref()?;
        let slot = block * layout.code_len;
        let p = self.profiles.get(id)?.get(slot)?;
        match layout.rows.get(id) {
            Some(&row) if layout.code(row, slot) < 0.0 => Some(p.rotated(PI)),
            _ => Some(p.clone()),
        }
    }

    /// Adds an uncoded aperture (e.g. a transmit array precoder) with a fresh
    /// random profile per block, held constant within the block.
    pub fn add_block_random(&mut self, id: &str, n_elements: usize, seed: u64) -> Result<()> {
        let (code_len, n_blocks) = match &self.layout {
            Some(l) => (l.code_len, l.n_blocks),
            None => (1, self.n_slots),
        };
        let mut seq = Vec::with_capacity(self.n_slots);
        for b in 0..n_blocks {
            let p = random_profile_n(n_elements, seed, &format!("block|{id}|{b}"));
            seq.extend(std::iter::repeat_n(p, code_len));
        }
        self.insert(id, seq)
    }

    /// Order-independent digest of every phase in the schedule.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(self.n_slots as u64).to_le_bytes());
        for (id, seq) in &self.profiles {
            bytes.extend_from_slice(id.as_bytes());
            for p in seq {
                for v in p.phases() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        format!("{:016x}", crate::util::fnv1a(&bytes))
    }
}

/// `H[row][col]` of the Sylvester Walsh-Hadamard matrix.
pub fn hadamard_entry(row: usize, col: usize) -> f64 {
    if (row & col).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Code-multiplexes the given base profiles over one block of `n_slots`
/// slots. The k-th entry gets Hadamard row k+1.
pub fn orthogonal_schedule(
    bases: &[(&str, PhaseProfile)],
    n_slots: usize,
) -> Result<ProfileSchedule> {
    let blocks: Vec<Vec<(&str, PhaseProfile)>> = vec![bases.to_vec()];
    coded_schedule(&blocks, n_slots)
}

/// Code-multiplexed schedule over several blocks; `blocks[b]` lists the base
/// profile of every RIS in block `b`, in the same order for every block.
pub fn coded_schedule(
    blocks: &[Vec<(&str, PhaseProfile)>],
    code_len: usize,
) -> Result<ProfileSchedule> {
    let n_ris = blocks.first().map_or(0, |b| b.len());
    if code_len < n_ris + 1 || !code_len.is_power_of_two() {
        return Err(Error::TooFewSlots {
            needed: (n_ris + 1).next_power_of_two(),
            got: code_len,
        });
    }
    let n_blocks = blocks.len();
    let mut sched = ProfileSchedule::static_slots(code_len * n_blocks);
    let mut rows = BTreeMap::new();
    for (k, (id, _)) in blocks[0].iter().enumerate() {
        rows.insert(id.to_string(), k + 1);
    }
    for (k, (id, _)) in blocks[0].iter().enumerate() {
        let mut seq = Vec::with_capacity(code_len * n_blocks);
        for block in blocks {
            let (bid, base) = &block[k];
            if bid != id {
                return Err(Error::ScheduleMismatch("block RIS order differs".into()));
            }
            for slot in 0..code_len {
                let flip = if hadamard_entry(k + 1, slot) < 0.0 {
                    PI
                } else {
                    0.0
                };
                seq.push(base.rotated(flip));
            }
        }
        sched.insert(id, seq)?;
    }
    sched.layout = Some(CodeLayout {
        code_len,
        n_blocks,
        rows,
    });
    Ok(sched)
}

/// Probing schedule: `n_blocks` blocks, each with a fresh random base profile
/// per RIS, code-multiplexed with `code_len` slots per block.
pub fn probing_schedule(
    ris: &[&RisSpec],
    code_len: usize,
    n_blocks: usize,
    seed: u64,
) -> Result<ProfileSchedule> {
    let blocks: Vec<Vec<(&str, PhaseProfile)>> = (0..n_blocks)
        .map(|b| {
            ris.iter()
                .map(|r| {
                    (
                        r.id.as_str(),
                        random_profile_n(r.n_elements(), seed, &format!("probe|{}|{b}", r.id)),
                    )
                })
                .collect()
        })
        .collect();
    if blocks.is_empty() || ris.is_empty() {
        let mut s = coded_schedule(&[vec![]], code_len)?;
        s.n_slots = code_len * n_blocks.max(1);
        if let Some(l) = s.layout.as_mut() {
            l.n_blocks = n_blocks.max(1);
        }
        return Ok(s);
    }
    coded_schedule(&blocks, code_len)
}

fn random_profile_n(n: usize, seed: u64, label: &str) -> PhaseProfile {
    let mut rng = sub_rng(seed, label);
    PhaseProfile((0..n).map(|_| rng.random_range(0.0..TAU)).collect())
}

/// I.i.d. uniform phases, reproducible from `seed`.
pub fn random_profile(ris: &RisSpec, seed: u64) -> PhaseProfile {
    random_profile_n(ris.n_elements(), seed, "random-profile")
}

/// Phases that coherently steer energy arriving from `incident` towards
/// `target` (both RIS-local).
pub fn directional_profile(
    ris: &RisSpec,
    wavelength: f64,
    incident: &AngularDirection,
    target: &AngularDirection,
) -> PhaseProfile {
    let a = ris_steering(ris, wavelength, incident);
    let b = ris_steering(ris, wavelength, target);
    PhaseProfile::new(a.iter().zip(&b).map(|(x, y)| -(x * y).arg()).collect())
}

fn cascade(
    ris: &RisSpec,
    wavelength: f64,
    incident: &AngularDirection,
    out: &AngularDirection,
) -> Vec<Complex64> {
    let a = ris_steering(ris, wavelength, incident);
    let b = ris_steering(ris, wavelength, out);
    a.iter().zip(&b).map(|(x, y)| x * y).collect()
}

fn linear_gain(profile: &PhaseProfile, coef: &[Complex64]) -> f64 {
    profile
        .phases()
        .iter()
        .zip(coef)
        .map(|(p, c)| Complex64::from_polar(1.0, *p) * c)
        .sum::<Complex64>()
        .norm_sqr()
}

/// Reflective beamforming gain in dB for every direction of `grid`.
pub fn beampattern_gain(
    ris: &RisSpec,
    wavelength: f64,
    profile: &PhaseProfile,
    incident: &AngularDirection,
    grid: &[AngularDirection],
) -> Vec<f64> {
    grid.iter()
        .map(|d| 10.0 * linear_gain(profile, &cascade(ris, wavelength, incident, d)).log10())
        .collect()
}

/// Azimuth x elevation rectangle in the RIS-local frame, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularRegion {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl AngularRegion {
    pub fn centered(center: AngularDirection, az_width: f64, el_width: f64) -> Self {
        Self {
            az_min: center.azimuth - az_width / 2.0,
            az_max: center.azimuth + az_width / 2.0,
            el_min: center.elevation - el_width / 2.0,
            el_max: center.elevation + el_width / 2.0,
        }
    }

    pub fn center(&self) -> AngularDirection {
        AngularDirection::new(
            (self.az_min + self.az_max) / 2.0,
            (self.el_min + self.el_max) / 2.0,
        )
    }

    /// Evenly spaced grid including both edges, with spacing at most `step`.
    pub fn grid(&self, step: f64) -> Vec<AngularDirection> {
        let axis = |lo: f64, hi: f64| -> Vec<f64> {
            if hi <= lo {
                return vec![lo];
            }
            let n = ((hi - lo) / step - 1e-9).ceil().max(1.0) as usize;
            (0..=n)
                .map(|k| lo + (hi - lo) * k as f64 / n as f64)
                .collect()
        };
        let mut out = Vec::new();
        for el in axis(self.el_min, self.el_max) {
            for az in axis(self.az_min, self.az_max) {
                out.push(AngularDirection::new(az, el));
            }
        }
        out
    }
}

/// Stopping rule and search grid of [`uncertainty_profile`].
#[derive(Debug, Clone, Copy)]
pub struct CoverageOptions {
    pub phase_levels: usize,
    pub min_improvement_db: f64,
    pub max_sweeps: usize,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        Self {
            phase_levels: 16,
            min_improvement_db: 0.01,
            max_sweeps: 50,
        }
    }
}

/// Max-min coverage design for an angular uncertainty region.
///
/// Starts from the directional profile at the region center and runs cyclic
/// coordinate ascent over elements. Each element is moved to whichever of the
/// `phase_levels` candidate phases (or its current phase) gives the largest
/// minimum gain over the region grid.
pub fn uncertainty_profile(
    ris: &RisSpec,
    wavelength: f64,
    incident: &AngularDirection,
    region: &AngularRegion,
    resolution: f64,
    options: CoverageOptions,
) -> PhaseProfile {
    let grid = region.grid(resolution);
    let mut phases = directional_profile(ris, wavelength, incident, &region.center()).0;
    let coef: Vec<Vec<Complex64>> = grid
        .iter()
        .map(|d| cascade(ris, wavelength, incident, d))
        .collect();
    let mut sums: Vec<Complex64> = coef
        .iter()
        .map(|c| {
            phases
                .iter()
                .zip(c)
                .map(|(p, x)| Complex64::from_polar(1.0, *p) * x)
                .sum()
        })
        .collect();
    let min_gain = |s: &[Complex64]| s.iter().map(|v| v.norm_sqr()).fold(f64::INFINITY, f64::min);
    let candidates: Vec<f64> = (0..options.phase_levels)
        .map(|k| TAU * k as f64 / options.phase_levels as f64)
        .collect();
    let mut current = min_gain(&sums);
    for _ in 0..options.max_sweeps {
        let start = current;
        for m in 0..phases.len() {
            let old = Complex64::from_polar(1.0, phases[m]);
            let mut best = (current, phases[m]);
            for &theta in &candidates {
                let delta = Complex64::from_polar(1.0, theta) - old;
                let mut worst = f64::INFINITY;
                for (g, s) in sums.iter().enumerate() {
                    let v = (s + delta * coef[g][m]).norm_sqr();
                    if v < worst {
                        worst = v;
                        if worst <= best.0 {
                            break;
                        }
                    }
                }
                if worst > best.0 {
                    best = (worst, theta);
                }
            }
            if best.1 != phases[m] {
                let delta = Complex64::from_polar(1.0, best.1) - old;
                for (g, s) in sums.iter_mut().enumerate() {
                    *s += delta * coef[g][m];
                }
                phases[m] = best.1;
                current = best.0;
            }
        }
        let gain_db = 10.0 * (current / start).log10();
        if !(gain_db >= options.min_improvement_db) {
            break;
        }
    }
    PhaseProfile::new(phases)
}

/// Minimum of [`beampattern_gain`] over a region grid, dB.
pub fn min_gain_over(
    ris: &RisSpec,
    wavelength: f64,
    profile: &PhaseProfile,
    incident: &AngularDirection,
    grid: &[AngularDirection],
) -> f64 {
    beampattern_gain(ris, wavelength, profile, incident, grid)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use crate::SPEED_OF_LIGHT;

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / 28e9
    }

    fn ris(n: usize) -> RisSpec {
        RisSpec::new("r", Pose::at(Vec3::zeros()), n, n, lambda() / 2.0)
    }

    #[test]
    fn directional_boresight_is_zero() {
        let r = ris(4);
        let p = directional_profile(
            &r,
            lambda(),
            &AngularDirection::boresight(),
            &AngularDirection::boresight(),
        );
        assert!(p.phases().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn directional_gain_is_coherent_and_maximal() {
        let r = ris(6);
        let inc = AngularDirection::from_degrees(-20.0, 5.0);
        let tgt = AngularDirection::from_degrees(30.0, -10.0);
        let p = directional_profile(&r, lambda(), &inc, &tgt);
        let g = beampattern_gain(&r, lambda(), &p, &inc, &[tgt])[0];
        assert!((g - 10.0 * (36.0f64 * 36.0).log10()).abs() < 1e-9);
        let grid = AngularRegion {
            az_min: -1.2,
            az_max: 1.2,
            el_min: -0.8,
            el_max: 0.8,
        }
        .grid(0.05);
        let all = beampattern_gain(&r, lambda(), &p, &inc, &grid);
        assert!(all.iter().all(|v| *v <= g + 1e-9));
    }

    #[test]
    fn random_profile_statistics() {
        let r = ris(4);
        assert_eq!(random_profile(&r, 1), random_profile(&r, 1));
        assert_ne!(random_profile(&r, 1), random_profile(&r, 2));
        let big = RisSpec::new("big", Pose::default(), 100, 100, 0.005);
        let p = random_profile(&big, 3);
        let mean: Complex64 = p
            .phases()
            .iter()
            .map(|v| Complex64::from_polar(1.0, *v))
            .sum::<Complex64>()
            / 1e4;
        assert!(mean.norm() < 0.05);
        assert!(p.phases().iter().all(|v| (0.0..TAU).contains(v)));
    }

    #[test]
    fn one_ris_two_slots() {
        let s = orthogonal_schedule(&[("r", PhaseProfile::zeros(4))], 2).unwrap();
        let seq = s.profiles("r").unwrap();
        assert_eq!(seq[0].phases()[0], 0.0);
        assert!((seq[1].phases()[0] - PI).abs() < 1e-15);
        assert_eq!(s.layout().unwrap().code(0, 1), 1.0);
    }

    #[test]
    fn three_ris_codes_are_orthogonal() {
        let bases = [
            ("a", PhaseProfile::zeros(1)),
            ("b", PhaseProfile::zeros(1)),
            ("c", PhaseProfile::zeros(1)),
        ];
        let s = orthogonal_schedule(&bases, 4).unwrap();
        let l = s.layout().unwrap();
        let rows: Vec<usize> = ["a", "b", "c"].iter().map(|k| l.rows[*k]).collect();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..4)
                    .map(|t| hadamard_entry(i, t) * hadamard_entry(j, t))
                    .sum();
                assert_eq!(dot, if i == j { 4.0 } else { 0.0 });
            }
        }
        assert_eq!(rows, vec![1, 2, 3]);
        assert!(matches!(
            orthogonal_schedule(&bases, 3),
            Err(Error::TooFewSlots { .. })
        ));
        assert!(matches!(
            orthogonal_schedule(&bases, 2),
            Err(Error::TooFewSlots { .. })
        ));
    }

    #[test]
    fn base_profile_round_trip() {
        let r = ris(3);
        let s = probing_schedule(&[&r], 2, 5, 9).unwrap();
        for b in 0..5 {
            let base = s.base_profile("r", b).unwrap();
            let odd = &s.profiles("r").unwrap()[2 * b + 1];
            for (x, y) in base.phases().iter().zip(odd.phases()) {
                let d = wrap_phase(x + PI - y);
                assert!(d < 1e-12 || TAU - d < 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_boresight_gain() {
        let r = ris(5);
        let g = beampattern_gain(
            &r,
            lambda(),
            &PhaseProfile::zeros(25),
            &AngularDirection::boresight(),
            &[AngularDirection::boresight()],
        );
        assert!((g[0] - 20.0 * 25f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn incoherent_average_over_random_profiles() {
        let r = ris(8);
        let inc = AngularDirection::from_degrees(10.0, 0.0);
        let out = AngularDirection::from_degrees(-25.0, 8.0);
        let mean: f64 = (0..100)
            .map(|s| {
                let p = random_profile(&r, s);
                10f64.powf(beampattern_gain(&r, lambda(), &p, &inc, &[out])[0] / 10.0)
            })
            .sum::<f64>()
            / 100.0;
        let db = 10.0 * mean.log10();
        assert!((db - 10.0 * 64f64.log10()).abs() < 1.0, "{db}");
    }

    #[test]
    fn gain_invariant_to_global_phase_and_bounded() {
        let r = ris(5);
        let inc = AngularDirection::from_degrees(15.0, -5.0);
        let grid = AngularRegion {
            az_min: -0.5,
            az_max: 0.5,
            el_min: -0.3,
            el_max: 0.3,
        }
        .grid(0.1);
        for seed in 0..20 {
            let p = random_profile(&r, seed);
            let a = beampattern_gain(&r, lambda(), &p, &inc, &grid);
            let b = beampattern_gain(&r, lambda(), &p.rotated(1.234), &inc, &grid);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
                assert!(*x <= 20.0 * 25f64.log10() + 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_region_keeps_directional_optimum() {
        let r = ris(6);
        let inc = AngularDirection::from_degrees(-10.0, 0.0);
        let center = AngularDirection::from_degrees(20.0, 5.0);
        let region = AngularRegion::centered(center, 0.0, 0.0);
        let p = uncertainty_profile(
            &r,
            lambda(),
            &inc,
            &region,
            0.01,
            CoverageOptions::default(),
        );
        let d = directional_profile(&r, lambda(), &inc, &center);
        let gp = beampattern_gain(&r, lambda(), &p, &inc, &[center])[0];
        let gd = beampattern_gain(&r, lambda(), &d, &inc, &[center])[0];
        assert!((gp - gd).abs() < 0.1);
    }

    #[test]
    fn coverage_design_dominates_directional() {
        let r = ris(20);
        let inc = AngularDirection::from_degrees(-30.0, 0.0);
        let region = AngularRegion::centered(
            AngularDirection::from_degrees(25.0, 10.0),
            10f64.to_radians(),
            10f64.to_radians(),
        );
        let step = 1f64.to_radians();
        let grid = region.grid(step);
        let opt = uncertainty_profile(
            &r,
            lambda(),
            &inc,
            &region,
            step,
            CoverageOptions::default(),
        );
        let dir = directional_profile(&r, lambda(), &inc, &region.center());
        let a = min_gain_over(&r, lambda(), &opt, &inc, &grid);
        let b = min_gain_over(&r, lambda(), &dir, &inc, &grid);
        assert!(a >= b, "{a} vs {b}");
        assert!(opt.phases().iter().all(|v| (0.0..TAU).contains(v)));
    }
}

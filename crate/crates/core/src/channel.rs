//! Geometric path parameterization and pilot-observation synthesis.
//!
//! The observation model is OFDM-style and far-field: for subcarrier `n`,
//! slot `t` and receive antenna `a`,
//!
//! ```text
//! y[a,n,t] = sqrt(P) * sum_p g_p * beta_p(t) * alpha_p(a) * exp(-j 2 pi n df tau_p) + w
//! ```
//!
//! where `beta_p(t)` collects the transmit-array and RIS responses for the
//! slot's phase profile and `alpha_p(a)` is the receive-array response. Both
//! apertures are written in terms of spatial frequencies (cycles per element)
//! so the Fisher information can be taken directly in that parameterization.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{angles_from_unit, direction_between, path_delay, AngularDirection, Vec3};
use crate::profiles::ProfileSchedule;
use crate::scene::{grid_indices, EntityRef, RisSpec, Scenario};
use crate::util::sub_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathKind {
    Los,
    Ris(String),
}

impl PathKind {
    pub fn label(&self) -> String {
        match self {
            PathKind::Los => "los".into(),
            PathKind::Ris(id) => format!("ris:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub kind: PathKind,
    /// Geometric propagation delay, seconds (clock offsets excluded).
    pub delay: f64,
    pub gain: Complex64,
    /// Departure direction at the RIS (towards the receiver), RIS-local.
    pub aod_at_ris: Option<AngularDirection>,
    /// Arrival direction at the RIS (towards the transmitter), RIS-local.
    pub aoa_at_ris: Option<AngularDirection>,
    pub spatial_freq: Option<[f64; 2]>,
    /// Departure direction at an arrayed transmitter, transmitter-local.
    pub aod_at_tx: Option<AngularDirection>,
    pub tx_spatial_freq: Option<[f64; 2]>,
    /// Arrival direction at a receiver with more than one antenna.
    pub aoa_at_rx: Option<AngularDirection>,
    pub rx_spatial_freq: Option<f64>,
    /// Waypoints tx, [ris], rx in the global frame.
    pub waypoints: Vec<Vec3>,
}

/// Per-element response `exp(+j 2 pi/lambda u . p_m)` for a direction given
/// in the RIS-local frame.
pub fn ris_steering(ris: &RisSpec, wavelength: f64, dir: &AngularDirection) -> Vec<Complex64> {
    let u = dir.unit();
    let k = TAU / wavelength;
    ris.local_element_positions()
        .iter()
        .map(|p| Complex64::from_polar(1.0, k * u.dot(p)))
        .collect()
}

/// Spatial frequency (cycles per element) seen across the RIS for a wave
/// arriving from `u_in` and leaving towards `u_out` (both RIS-local).
pub fn spatial_frequency(ris: &RisSpec, wavelength: f64, u_in: &Vec3, u_out: &Vec3) -> [f64; 2] {
    let s = ris.spacing / wavelength;
    let sum = u_in + u_out;
    [s * sum.y, s * sum.z]
}

/// Aperture response `sum_m exp(j(phi_m + 2 pi nu . idx_m))` and its
/// derivatives with respect to both spatial-frequency components.
pub(crate) fn aperture_response(
    indices: &[(f64, f64)],
    phases: &[f64],
    nu: [f64; 2],
) -> (Complex64, [Complex64; 2]) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut dy = Complex64::new(0.0, 0.0);
    let mut dz = Complex64::new(0.0, 0.0);
    for (&(i, j), &phi) in indices.iter().zip(phases) {
        let e = Complex64::from_polar(1.0, phi + TAU * (nu[0] * i + nu[1] * j));
        v += e;
        dy += e * i;
        dz += e * j;
    }
    let jt = Complex64::new(0.0, TAU);
    (v, [dy * jt, dz * jt])
}

fn transmit_array(tx: &EntityRef<'_>) -> Option<(String, usize, usize, f64)> {
    match tx {
        EntityRef::Beacon(b) if b.is_array() => {
            Some((b.id.clone(), b.array_nx, b.array_ny, b.spacing))
        }
        _ => None,
    }
}

fn clock_of(e: &EntityRef<'_>) -> f64 {
    match e {
        EntityRef::Ue(u) => u.clock_bias,
        _ => 0.0,
    }
}

/// All propagation paths from `tx` to `rx`: the direct path when it is not
/// blocked and one reflected path per RIS that serves both endpoints. A
/// full-duplex UE may be both `tx` and `rx` (monostatic), in which case only
/// RIS paths exist.
pub fn enumerate_paths(scene: &Scenario, tx: &str, rx: &str) -> Result<Vec<PathParams>> {
    let tx_e = scene.entity(tx)?;
    let rx_e = scene.entity(rx)?;
    let monostatic = tx == rx;
    if monostatic {
        match rx_e {
            EntityRef::Ue(u) if u.full_duplex => {}
            _ => {
                return Err(Error::InvalidScenario(format!(
                    "`{tx}` cannot receive its own signal without a full-duplex radio"
                )))
            }
        }
    }
    let lambda = scene.wavelength();
    let p_tx = tx_e.position();
    let p_rx = rx_e.position();
    let tx_array = transmit_array(&tx_e);
    let rx_array = match rx_e {
        EntityRef::Ue(u) if u.n_antennas > 1 => Some(u.pose),
        _ => None,
    };

    let tx_side = |next: &Vec3| -> Result<(Option<AngularDirection>, Option<[f64; 2]>)> {
        match &tx_array {
            Some((_, _, _, spacing)) => {
                let u = tx_e
                    .pose()
                    .orientation
                    .apply_inverse(&direction_between(&p_tx, next)?);
                let s = spacing / lambda;
                Ok((Some(angles_from_unit(&u)?), Some([s * u.y, s * u.z])))
            }
            None => Ok((None, None)),
        }
    };
    let rx_side = |prev: &Vec3| -> Result<(Option<AngularDirection>, Option<f64>)> {
        match &rx_array {
            Some(pose) => {
                let u = pose
                    .orientation
                    .apply_inverse(&direction_between(&p_rx, prev)?);
                Ok((Some(angles_from_unit(&u)?), Some(0.5 * u.y)))
            }
            None => Ok((None, None)),
        }
    };
    let random_phase = |kind: &PathKind| -> f64 {
        let mut rng = sub_rng(scene.seed, &format!("gain|{tx}|{rx}|{}", kind.label()));
        rng.random_range(0.0..TAU)
    };

    let mut out = Vec::new();
    if !monostatic && scene.clear_between(&p_tx, &p_rx) {
        let tau = path_delay(&[p_tx, p_rx])?;
        let d = (p_rx - p_tx).norm();
        let amp = lambda / (4.0 * PI * d);
        let (aod_tx, nu_tx) = tx_side(&p_rx)?;
        let (aoa_rx, nu_rx) = rx_side(&p_tx)?;
        let kind = PathKind::Los;
        let phase = -TAU * scene.carrier_hz * tau + random_phase(&kind);
        out.push(PathParams {
            kind,
            delay: tau,
            gain: Complex64::from_polar(amp, phase),
            aod_at_ris: None,
            aoa_at_ris: None,
            spatial_freq: None,
            aod_at_tx: aod_tx,
            tx_spatial_freq: nu_tx,
            aoa_at_rx: aoa_rx,
            rx_spatial_freq: nu_rx,
            waypoints: vec![p_tx, p_rx],
        });
    }
    for ris in &scene.ris {
        let c = ris.pose.position;
        if !(scene.ris_serves(ris, &p_tx) && scene.ris_serves(ris, &p_rx)) {
            continue;
        }
        let tau = path_delay(&[p_tx, c, p_rx])?;
        let d1 = (c - p_tx).norm();
        let d2 = (p_rx - c).norm();
        let amp = (lambda / (4.0 * PI * d1)) * (lambda / (4.0 * PI * d2));
        let u_in = ris
            .pose
            .orientation
            .apply_inverse(&direction_between(&c, &p_tx)?);
        let u_out = ris
            .pose
            .orientation
            .apply_inverse(&direction_between(&c, &p_rx)?);
        let (aod_tx, nu_tx) = tx_side(&c)?;
        let (aoa_rx, nu_rx) = rx_side(&c)?;
        let kind = PathKind::Ris(ris.id.clone());
        let phase = -TAU * scene.carrier_hz * tau + random_phase(&kind);
        out.push(PathParams {
            kind,
            delay: tau,
            gain: Complex64::from_polar(amp, phase),
            aod_at_ris: Some(angles_from_unit(&u_out)?),
            aoa_at_ris: Some(angles_from_unit(&u_in)?),
            spatial_freq: Some(spatial_frequency(ris, lambda, &u_in, &u_out)),
            aod_at_tx: aod_tx,
            tx_spatial_freq: nu_tx,
            aoa_at_rx: aoa_rx,
            rx_spatial_freq: nu_rx,
            waypoints: vec![p_tx, c, p_rx],
        });
    }
    Ok(out)
}

/// Aperture geometry plus the per-slot phase profile applied to it.
#[derive(Debug, Clone)]
pub(crate) struct Aperture {
    indices: Vec<(f64, f64)>,
    /// `[slot][element]`
    phases: Vec<Vec<f64>>,
}

/// Which channel parameters a path carries, in order:
/// `tau, [nu_tx(2)], [nu_ris(2)], [nu_rx(1)], Re g, Im g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathLayout {
    pub offset: usize,
    pub has_tx: bool,
    pub has_ris: bool,
    pub has_rx: bool,
}

impl PathLayout {
    pub fn len(&self) -> usize {
        3 + 2 * self.has_tx as usize + 2 * self.has_ris as usize + self.has_rx as usize
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn delay(&self) -> usize {
        self.offset
    }
    pub fn nu_tx(&self) -> Option<usize> {
        self.has_tx.then_some(self.offset + 1)
    }
    pub fn nu_ris(&self) -> Option<usize> {
        self.has_ris
            .then_some(self.offset + 1 + 2 * self.has_tx as usize)
    }
    pub fn nu_rx(&self) -> Option<usize> {
        self.has_rx
            .then_some(self.offset + 1 + 2 * self.has_tx as usize + 2 * self.has_ris as usize)
    }
    pub fn gain(&self) -> usize {
        self.offset + self.len() - 2
    }
}

/// Channel parameters of one path as seen by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Apparent delay: geometric delay plus the link clock offset.
    pub delay: f64,
    pub gain: Complex64,
    pub nu_tx: Option<[f64; 2]>,
    pub nu_ris: Option<[f64; 2]>,
    pub nu_rx: Option<f64>,
}

#[derive(Debug, Clone)]
struct ModelPath {
    params: ChannelParams,
    tx_aperture: Option<Aperture>,
    ris_aperture: Option<Aperture>,
    ris_id: Option<String>,
}

/// Noiseless forward model of one transmitter/receiver link.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub tx: String,
    pub rx: String,
    pub paths: Vec<PathParams>,
    pub clock_offset: f64,
    n_subcarriers: usize,
    subcarrier_spacing: f64,
    n_slots: usize,
    n_rx: usize,
    amplitude: f64,
    model: Vec<ModelPath>,
}

impl LinkModel {
    pub fn build(scene: &Scenario, tx: &str, rx: &str, schedule: &ProfileSchedule) -> Result<Self> {
        let paths = enumerate_paths(scene, tx, rx)?;
        Self::from_paths(scene, tx, rx, paths, schedule)
    }

    pub fn from_paths(
        scene: &Scenario,
        tx: &str,
        rx: &str,
        paths: Vec<PathParams>,
        schedule: &ProfileSchedule,
    ) -> Result<Self> {
        let tx_e = scene.entity(tx)?;
        let rx_e = scene.entity(rx)?;
        let clock_offset = clock_of(&rx_e) - clock_of(&tx_e);
        let n_rx = match rx_e {
            EntityRef::Ue(u) => u.n_antennas,
            _ => 1,
        };
        let n_slots = schedule.n_slots();
        let tx_aperture = match transmit_array(&tx_e) {
            Some((id, nx, ny, _)) => {
                let profiles = schedule.profiles(&id).ok_or_else(|| {
                    Error::ScheduleMismatch(format!(
                        "no precoder sequence for arrayed transmitter `{id}`"
                    ))
                })?;
                Some(aperture_from(&id, nx * ny, grid_indices(nx, ny), profiles)?)
            }
            None => None,
        };
        let mut model = Vec::with_capacity(paths.len());
        for p in &paths {
            let (ris_aperture, ris_id) = match &p.kind {
                PathKind::Los => (None, None),
                PathKind::Ris(id) => {
                    let ris = scene.ris(id)?;
                    let profiles = schedule.profiles(id).ok_or_else(|| {
                        Error::ScheduleMismatch(format!("schedule has no profiles for RIS `{id}`"))
                    })?;
                    (
                        Some(aperture_from(
                            id,
                            ris.n_elements(),
                            ris.element_indices(),
                            profiles,
                        )?),
                        Some(id.clone()),
                    )
                }
            };
            let tx_ap = if p.tx_spatial_freq.is_some() {
                tx_aperture.clone()
            } else {
                None
            };
            model.push(ModelPath {
                params: ChannelParams {
                    delay: p.delay + clock_offset,
                    gain: p.gain,
                    nu_tx: p.tx_spatial_freq,
                    nu_ris: p.spatial_freq,
                    nu_rx: p.rx_spatial_freq,
                },
                tx_aperture: tx_ap,
                ris_aperture,
                ris_id,
            });
        }
        Ok(Self {
            tx: tx.to_string(),
            rx: rx.to_string(),
            paths,
            clock_offset,
            n_subcarriers: scene.n_subcarriers,
            subcarrier_spacing: scene.subcarrier_spacing(),
            n_slots,
            n_rx,
            amplitude: match tx_e {
                EntityRef::Beacon(b) => b.tx_power_w.unwrap_or(scene.tx_power_w),
                _ => scene.tx_power_w,
            }
            .sqrt(),
            model,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.subcarrier_spacing
    }

    pub fn ris_of_path(&self, p: usize) -> Option<&str> {
        self.model[p].ris_id.as_deref()
    }

    pub fn layouts(&self) -> Vec<PathLayout> {
        let mut offset = 0;
        self.model
            .iter()
            .map(|m| {
                let l = PathLayout {
                    offset,
                    has_tx: m.params.nu_tx.is_some(),
                    has_ris: m.params.nu_ris.is_some(),
                    has_rx: m.params.nu_rx.is_some(),
                };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layouts().iter().map(|l| l.len()).sum()
    }

    pub fn channel_params(&self) -> Vec<ChannelParams> {
        self.model.iter().map(|m| m.params.clone()).collect()
    }

    /// Flattened channel parameter vector in layout order.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for m in &self.model {
            let p = &m.params;
            v.push(p.delay);
            if let Some(n) = p.nu_tx {
                v.extend_from_slice(&n);
            }
            if let Some(n) = p.nu_ris {
                v.extend_from_slice(&n);
            }
            if let Some(n) = p.nu_rx {
                v.push(n);
            }
            v.push(p.gain.re);
            v.push(p.gain.im);
        }
        v
    }

    pub fn set_param_vector(&mut self, v: &[f64]) {
        let layouts = self.layouts();
        for (m, l) in self.model.iter_mut().zip(layouts) {
            let p = &mut m.params;
            p.delay = v[l.delay()];
            if let Some(k) = l.nu_tx() {
                p.nu_tx = Some([v[k], v[k + 1]]);
            }
            if let Some(k) = l.nu_ris() {
                p.nu_ris = Some([v[k], v[k + 1]]);
            }
            if let Some(k) = l.nu_rx() {
                p.nu_rx = Some(v[k]);
            }
            p.gain = Complex64::new(v[l.gain()], v[l.gain() + 1]);
        }
    }

    /// Slot response `beta(t)` of path `p` and its derivatives with respect
    /// to the transmit and RIS spatial frequencies.
    fn slot_factors(&self, p: usize) -> (Vec<Complex64>, Vec<[Complex64; 2]>, Vec<[Complex64; 2]>) {
        let m = &self.model[p];
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut beta = Vec::with_capacity(self.n_slots);
        let mut d_tx = Vec::with_capacity(self.n_slots);
        let mut d_ris = Vec::with_capacity(self.n_slots);
        for t in 0..self.n_slots {
            let (bt, dbt) = match (&m.tx_aperture, m.params.nu_tx) {
                (Some(a), Some(nu)) => aperture_response(&a.indices, &a.phases[t], nu),
                _ => (one, [zero, zero]),
            };
            let (br, dbr) = match (&m.ris_aperture, m.params.nu_ris) {
                (Some(a), Some(nu)) => aperture_response(&a.indices, &a.phases[t], nu),
                _ => (one, [zero, zero]),
            };
            beta.push(bt * br);
            d_tx.push([dbt[0] * br, dbt[1] * br]);
            d_ris.push([bt * dbr[0], bt * dbr[1]]);
        }
        (beta, d_tx, d_ris)
    }

    fn freq_factor(&self, delay: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let df = self.subcarrier_spacing;
        let d: Vec<Complex64> = (0..self.n_subcarriers)
            .map(|n| Complex64::from_polar(1.0, -TAU * n as f64 * df * delay))
            .collect();
        let dd = d
            .iter()
            .enumerate()
            .map(|(n, v)| v * Complex64::new(0.0, -TAU * n as f64 * df))
            .collect();
        (d, dd)
    }

    fn antenna_factor(&self, nu_rx: Option<f64>) -> (Vec<Complex64>, Vec<Complex64>) {
        match nu_rx {
            None => (
                vec![Complex64::new(1.0, 0.0)],
                vec![Complex64::new(0.0, 0.0)],
            ),
            Some(nu) => {
                let c = (self.n_rx as f64 - 1.0) / 2.0;
                let a: Vec<Complex64> = (0..self.n_rx)
                    .map(|k| Complex64::from_polar(1.0, TAU * nu * (k as f64 - c)))
                    .collect();
                let da = a
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::new(0.0, TAU * (k as f64 - c)))
                    .collect();
                (a, da)
            }
        }
    }

    /// Noiseless samples, one `[n_subcarriers x n_slots]` matrix per receive
    /// antenna.
    pub fn mean(&self) -> Vec<DMatrix<Complex64>> {
        let mut out = vec![DMatrix::zeros(self.n_subcarriers, self.n_slots); self.n_rx];
        for (p, m) in self.model.iter().enumerate() {
            self.accumulate_path(&mut out, p, m.params.gain);
        }
        out
    }

    /// Noiseless contribution of a single path.
    pub fn path_mean(&self, p: usize) -> Vec<DMatrix<Complex64>> {
        let mut out = vec![DMatrix::zeros(self.n_subcarriers, self.n_slots); self.n_rx];
        self.accumulate_path(&mut out, p, self.model[p].params.gain);
        out
    }

    fn accumulate_path(&self, out: &mut [DMatrix<Complex64>], p: usize, gain: Complex64) {
        let m = &self.model[p];
        let (beta, _, _) = self.slot_factors(p);
        let (d, _) = self.freq_factor(m.params.delay);
        let (alpha, _) = self.antenna_factor(m.params.nu_rx);
        let s = gain * self.amplitude;
        let n_ant = if m.params.nu_rx.is_some() {
            self.n_rx
        } else {
            1
        };
        for (a, mat) in out.iter_mut().enumerate() {
            let al = if n_ant == 1 { alpha[0] } else { alpha[a] };
            for t in 0..self.n_slots {
                let st = s * al * beta[t];
                for n in 0..self.n_subcarriers {
                    mat[(n, t)] += st * d[n];
                }
            }
        }
    }

    /// Separable factors of every derivative `d mu / d eta_i`, returned as
    /// `(scalar, antenna, subcarrier, slot)` with
    /// `d mu[a,n,t] = scalar * A[a] * B[n] * C[t]`.
    pub(crate) fn derivative_factors(&self) -> Vec<DerivativeFactor> {
        let mut out = Vec::with_capacity(self.n_params());
        for (p, m) in self.model.iter().enumerate() {
            let (beta, d_tx, d_ris) = self.slot_factors(p);
            let (d, dd) = self.freq_factor(m.params.delay);
            let (alpha, dalpha) = self.antenna_factor(m.params.nu_rx);
            let alpha = self.broadcast(alpha);
            let s = m.params.gain * self.amplitude;
            out.push(DerivativeFactor::new(s, alpha.clone(), dd, beta.clone()));
            if m.params.nu_tx.is_some() {
                for k in 0..2 {
                    let c = d_tx.iter().map(|v| v[k]).collect();
                    out.push(DerivativeFactor::new(s, alpha.clone(), d.clone(), c));
                }
            }
            if m.params.nu_ris.is_some() {
                for k in 0..2 {
                    let c = d_ris.iter().map(|v| v[k]).collect();
                    out.push(DerivativeFactor::new(s, alpha.clone(), d.clone(), c));
                }
            }
            if m.params.nu_rx.is_some() {
                out.push(DerivativeFactor::new(s, dalpha, d.clone(), beta.clone()));
            }
            let a = Complex64::new(self.amplitude, 0.0);
            out.push(DerivativeFactor::new(
                a,
                alpha.clone(),
                d.clone(),
                beta.clone(),
            ));
            out.push(DerivativeFactor::new(a * Complex64::i(), alpha, d, beta));
        }
        out
    }

    fn broadcast(&self, alpha: Vec<Complex64>) -> Vec<Complex64> {
        if alpha.len() == self.n_rx {
            alpha
        } else {
            vec![alpha[0]; self.n_rx]
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DerivativeFactor {
    pub scalar: Complex64,
    pub antenna: Vec<Complex64>,
    pub subcarrier: Vec<Complex64>,
    pub slot: Vec<Complex64>,
}

impl DerivativeFactor {
    fn new(
        scalar: Complex64,
        antenna: Vec<Complex64>,
        subcarrier: Vec<Complex64>,
        slot: Vec<Complex64>,
    ) -> Self {
        Self {
            scalar,
            antenna,
            subcarrier,
            slot,
        }
    }
}

fn aperture_from(
    id: &str,
    n_elements: usize,
    indices: Vec<(f64, f64)>,
    profiles: &[crate::profiles::PhaseProfile],
) -> Result<Aperture> {
    let mut phases = Vec::with_capacity(profiles.len());
    for p in profiles {
        if p.len() != n_elements {
            return Err(Error::ScheduleMismatch(format!(
                "profile for `{id}` has {} phases, aperture has {n_elements} elements",
                p.len()
            )));
        }
        phases.push(p.phases().to_vec());
    }
    Ok(Aperture { indices, phases })
}

/// Noisy pilot observation of one link.
#[derive(Debug, Clone)]
pub struct Observation {
    pub tx: String,
    pub rx: String,
    /// One `[n_subcarriers x n_slots]` matrix per receive antenna.
    pub samples: Vec<DMatrix<Complex64>>,
    pub schedule: ProfileSchedule,
    pub noise_variance: f64,
    pub subcarrier_spacing: f64,
}

impl Observation {
    pub fn n_subcarriers(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn n_slots(&self) -> usize {
        self.samples[0].ncols()
    }
}

/// Draws circular complex Gaussian noise of variance `variance` per sample.
pub(crate) fn add_noise(samples: &mut [DMatrix<Complex64>], variance: f64, seed: u64) {
    if variance <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    for m in samples.iter_mut() {
        // column-major iteration keeps the draw order fixed
        for v in m.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
}

/// Synthesizes the pilot observation of link `tx -> rx` under `schedule`.
pub fn observe(
    scene: &Scenario,
    tx: &str,
    rx: &str,
    schedule: &ProfileSchedule,
    seed: u64,
) -> Result<Observation> {
    let model = LinkModel::build(scene, tx, rx, schedule)?;
    observe_model(&model, scene.noise_variance(), schedule, seed)
}

pub fn observe_model(
    model: &LinkModel,
    noise_variance: f64,
    schedule: &ProfileSchedule,
    seed: u64,
) -> Result<Observation> {
    let mut samples = model.mean();
    add_noise(&mut samples, noise_variance, seed);
    Ok(Observation {
        tx: model.tx.clone(),
        rx: model.rx.clone(),
        samples,
        schedule: schedule.clone(),
        noise_variance,
        subcarrier_spacing: model.subcarrier_spacing(),
    })
}

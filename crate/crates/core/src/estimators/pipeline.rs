//! End-to-end runs: observe, separate, estimate channel parameters, locate.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aod_from_spatial_freq, estimate_delays, estimate_spatial_freq, locate_a1, locate_a2, locate_b1,
    locate_c1, separate_paths, Estimate, PairMeasurement, PathStream, Ray, SolverOptions,
};
use crate::channel::{observe_model, LinkModel, PathKind};
use crate::error::{Error, Result};
use crate::fim::{cooperative_links, evaluate, Bound, ClockModel, Dims, LinkSpec, Unknowns};
use crate::geometry::{direction_between, Vec3};
use crate::profiles::{probing_schedule, ProfileSchedule};
use crate::scene::{EntityRef, RisSpec, Scenario};
use crate::util::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioTag {
    A1,
    A2,
    B1,
    C1,
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioTag::A1 => "A1",
            ScenarioTag::A2 => "A2",
            ScenarioTag::B1 => "B1",
            ScenarioTag::C1 => "C1",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(ScenarioTag::A1),
            "A2" => Ok(ScenarioTag::A2),
            "B1" => Ok(ScenarioTag::B1),
            "C1" => Ok(ScenarioTag::C1),
            other => Err(format!(
                "unknown scenario tag `{other}` (expected A1, A2, B1 or C1)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tag: ScenarioTag,
    /// Target UE for A1/A2/C1; defaults to the first (full-duplex for C1) UE.
    pub target: Option<String>,
    /// Probing blocks, each with fresh random RIS profiles.
    pub n_blocks: usize,
    pub seed: u64,
    /// Per-sample SNR of the weakest path used; `None` keeps the scene's
    /// noise density.
    pub snr_db: Option<f64>,
    /// Half-width of the cooperative multistart box around the RIS.
    pub search_radius: f64,
    pub options: SolverOptions,
}

impl PipelineConfig {
    pub fn new(tag: ScenarioTag) -> Self {
        Self {
            tag,
            target: None,
            n_blocks: 16,
            seed: 0,
            snr_db: None,
            search_radius: 10.0,
            options: SolverOptions::default(),
        }
    }
}

/// Everything a run needs, built once per scene.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tag: ScenarioTag,
    pub scene: Scenario,
    pub links: Vec<LinkSpec>,
    pub unknowns: Unknowns,
    pub schedule: ProfileSchedule,
    pub dims: Dims,
    models: Vec<LinkModel>,
    ris: Vec<String>,
    search_radius: f64,
    options: SolverOptions,
}

/// All anchors and UEs share one height and every RIS only yaws.
pub fn is_planar(scene: &Scenario) -> bool {
    let mut z = scene
        .ris
        .iter()
        .map(|r| r.pose.position.z)
        .chain(scene.beacons.iter().map(|b| b.pose.position.z))
        .chain(scene.ues.iter().map(|u| u.pose.position.z));
    let Some(z0) = z.next() else { return false };
    z.all(|v| (v - z0).abs() < 1e-9)
        && scene
            .ris
            .iter()
            .all(|r| (r.pose.orientation.axis_z() - Vec3::z()).norm() < 1e-9)
}

/// Copy of `scene` whose noise density puts the weakest path of `links` at
/// `snr_db` per sample.
pub fn scene_at_snr(
    scene: &Scenario,
    links: &[LinkSpec],
    schedule: &ProfileSchedule,
    snr_db: f64,
) -> Result<Scenario> {
    let mut weakest = f64::INFINITY;
    for l in links {
        let m = LinkModel::build(scene, &l.tx, &l.rx, schedule)?;
        for p in 0..m.paths.len() {
            let mats = m.path_mean(p);
            let count: usize = mats.iter().map(|x| x.len()).sum();
            let power: f64 = mats
                .iter()
                .flat_map(|x| x.iter())
                .map(|v| v.norm_sqr())
                .sum::<f64>()
                / count as f64;
            weakest = weakest.min(power);
        }
    }
    if !weakest.is_finite() || weakest <= 0.0 {
        return Err(Error::InvalidScenario(
            "no propagation path to calibrate the SNR on".into(),
        ));
    }
    let mut s = scene.clone();
    s.noise_psd_w_per_hz = weakest / 10f64.powf(snr_db / 10.0) / scene.subcarrier_spacing();
    Ok(s)
}

fn serving_ris(model: &LinkModel) -> Vec<String> {
    model
        .paths
        .iter()
        .filter_map(|p| match &p.kind {
            PathKind::Ris(id) => Some(id.clone()),
            PathKind::Los => None,
        })
        .collect()
}

fn has_los(model: &LinkModel) -> bool {
    model.paths.iter().any(|p| p.kind == PathKind::Los)
}

/// Resolves the roles of a scenario tag and builds the matching schedule,
/// links and unknowns.
pub fn prepare(scene: &Scenario, cfg: &PipelineConfig) -> Result<Prepared> {
    scene.validate()?;
    let first_ue = || -> Result<String> {
        scene
            .ues
            .first()
            .map(|u| u.id.clone())
            .ok_or_else(|| Error::InvalidScenario("scene has no UE".into()))
    };
    let all_ris: Vec<&RisSpec> = scene.ris.iter().collect();
    let (links, unknowns, schedule_ris, dims): (Vec<LinkSpec>, Unknowns, Vec<&RisSpec>, Dims) =
        match cfg.tag {
            ScenarioTag::A1 | ScenarioTag::A2 => {
                let target = match &cfg.target {
                    Some(t) => t.clone(),
                    None => first_ue()?,
                };
                scene.ue(&target)?;
                let beacon = scene
                    .beacons
                    .first()
                    .ok_or_else(|| Error::InvalidScenario(format!("{} needs a beacon", cfg.tag)))?;
                let dims = if is_planar(scene) {
                    Dims::Planar
                } else {
                    Dims::Spatial
                };
                (
                    vec![LinkSpec::new(&beacon.id, &target, ClockModel::Free)],
                    Unknowns::positions(&[target.as_str()], dims),
                    all_ris,
                    dims,
                )
            }
            ScenarioTag::B1 => {
                let ids: Vec<&str> = scene.ues.iter().map(|u| u.id.as_str()).collect();
                let ris = scene
                    .ris
                    .first()
                    .ok_or_else(|| Error::InvalidScenario("B1 needs a RIS".into()))?;
                (
                    cooperative_links(&ids),
                    Unknowns::positions(&ids, Dims::Spatial),
                    vec![ris],
                    Dims::Spatial,
                )
            }
            ScenarioTag::C1 => {
                let target = match &cfg.target {
                    Some(t) => t.clone(),
                    None => scene
                        .ues
                        .iter()
                        .find(|u| u.full_duplex)
                        .map(|u| u.id.clone())
                        .ok_or_else(|| {
                            Error::InvalidScenario("C1 needs a full-duplex UE".into())
                        })?,
                };
                if !scene.ue(&target)?.full_duplex {
                    return Err(Error::InvalidScenario(format!(
                        "C1 target `{target}` is not full duplex"
                    )));
                }
                let ris = scene
                    .ris
                    .first()
                    .ok_or_else(|| Error::InvalidScenario("C1 needs a RIS".into()))?;
                (
                    vec![LinkSpec::new(&target, &target, ClockModel::Known)],
                    Unknowns::positions(&[target.as_str()], Dims::Spatial),
                    vec![ris],
                    Dims::Spatial,
                )
            }
        };
    let code_len = (schedule_ris.len() + 1).next_power_of_two();
    let mut schedule = probing_schedule(&schedule_ris, code_len, cfg.n_blocks, cfg.seed)?;
    for l in &links {
        if let EntityRef::Beacon(b) = scene.entity(&l.tx)? {
            if b.is_array() && schedule.profiles(&b.id).is_none() {
                schedule.add_block_random(&b.id, b.n_antennas(), cfg.seed)?;
            }
        }
    }
    let scene = match cfg.snr_db {
        Some(snr) => scene_at_snr(scene, &links, &schedule, snr)?,
        None => scene.clone(),
    };
    let models = links
        .iter()
        .map(|l| LinkModel::build(&scene, &l.tx, &l.rx, &schedule))
        .collect::<Result<Vec<_>>>()?;

    let ris = match cfg.tag {
        ScenarioTag::A1 => {
            if !scene.is_wideband() {
                return Err(Error::NeedsWideband);
            }
            if !has_los(&models[0]) {
                return Err(Error::InvalidScenario(
                    "A1 needs a direct beacon-UE path".into(),
                ));
            }
            let r = serving_ris(&models[0]);
            if r.is_empty() {
                return Err(Error::InvalidScenario(
                    "A1 needs a RIS serving beacon and UE".into(),
                ));
            }
            vec![r[0].clone()]
        }
        ScenarioTag::A2 => {
            let r = serving_ris(&models[0]);
            if r.len() < 2 {
                return Err(Error::Underdetermined(format!(
                    "A2 needs two RISs serving beacon and UE, found {}",
                    r.len()
                )));
            }
            r
        }
        ScenarioTag::B1 => {
            if !scene.is_wideband() {
                return Err(Error::NeedsWideband);
            }
            let id = schedule_ris[0].id.clone();
            for m in &models {
                if !has_los(m) || !serving_ris(m).contains(&id) {
                    return Err(Error::InvalidScenario(format!(
                        "B1 pair {}-{} needs both a direct path and a path through `{id}`",
                        m.tx, m.rx
                    )));
                }
            }
            vec![id]
        }
        ScenarioTag::C1 => {
            if !scene.is_wideband() {
                return Err(Error::NeedsWideband);
            }
            let r = serving_ris(&models[0]);
            if r.is_empty() {
                return Err(Error::InvalidScenario(
                    "C1 target is not served by the RIS".into(),
                ));
            }
            vec![r[0].clone()]
        }
    };
    Ok(Prepared {
        tag: cfg.tag,
        scene,
        links,
        unknowns,
        schedule,
        dims,
        models,
        ris,
        search_radius: cfg.search_radius,
        options: cfg.options,
    })
}

fn link_seed(seed: u64, link: usize) -> u64 {
    let mut b = seed.to_le_bytes().to_vec();
    b.extend_from_slice(b"observation");
    b.extend_from_slice(&(link as u64).to_le_bytes());
    fnv1a(&b)
}

fn stream<'a>(streams: &'a [PathStream], kind: &PathKind) -> Result<&'a PathStream> {
    streams
        .iter()
        .find(|s| s.kind == *kind)
        .ok_or_else(|| Error::ScheduleMismatch(format!("no stream for {}", kind.label())))
}

/// Wraps a delay difference into `(-T/2, T/2]` for the ambiguity period `T`.
fn wrap_delay(d: f64, period: f64) -> f64 {
    let w = d.rem_euclid(period);
    if w > period / 2.0 {
        w - period
    } else {
        w
    }
}

/// One observation draw per link followed by estimation. `noiseless`
/// suppresses the noise draw.
pub fn localize_once(p: &Prepared, seed: u64, noiseless: bool) -> Result<Vec<Estimate>> {
    let var = if noiseless {
        0.0
    } else {
        p.scene.noise_variance()
    };
    let lambda = p.scene.wavelength();
    let period = 1.0 / p.scene.subcarrier_spacing();
    let fixed_z = (p.dims == Dims::Planar).then_some(0.0);
    let mut streams = Vec::with_capacity(p.models.len());
    for (k, m) in p.models.iter().enumerate() {
        let obs = observe_model(m, var, &p.schedule, link_seed(seed, k))?;
        streams.push(separate_paths(&obs, &p.schedule)?);
    }
    let mut out = match p.tag {
        ScenarioTag::A1 => {
            let link = &p.links[0];
            let ris = p.scene.ris(&p.ris[0])?;
            let beacon = p.scene.position(&link.tx)?;
            let s = &streams[0];
            let los = estimate_delays(stream(s, &PathKind::Los)?)?;
            let rs = stream(s, &PathKind::Ris(ris.id.clone()))?;
            let rd = estimate_delays(rs)?;
            let nu = estimate_spatial_freq(rs, &p.schedule, ris, Some(rd.delay), fixed_z)?;
            let u_in = direction_between(&ris.pose.position, &beacon)?;
            let aod = aod_from_spatial_freq(ris, lambda, &u_in, nu.nu)?;
            let tdoa = wrap_delay(rd.delay - los.delay, period);
            let mut e = locate_a1(tdoa, &aod, &beacon, &ris.pose.position)?;
            e.id = link.rx.clone();
            vec![e]
        }
        ScenarioTag::A2 => {
            let link = &p.links[0];
            let beacon = p.scene.position(&link.tx)?;
            let mut rays = Vec::new();
            for id in &p.ris {
                let ris = p.scene.ris(id)?;
                let rs = stream(&streams[0], &PathKind::Ris(id.clone()))?;
                let delay = if p.scene.is_wideband() {
                    Some(estimate_delays(rs)?.delay)
                } else {
                    None
                };
                let nu = estimate_spatial_freq(rs, &p.schedule, ris, delay, fixed_z)?;
                let u_in = direction_between(&ris.pose.position, &beacon)?;
                rays.push(Ray {
                    origin: ris.pose.position,
                    direction: aod_from_spatial_freq(ris, lambda, &u_in, nu.nu)?,
                });
            }
            let mut e = locate_a2(&rays, p.dims)?;
            e.id = link.rx.clone();
            vec![e]
        }
        ScenarioTag::B1 => {
            let ris = p.scene.ris(&p.ris[0])?;
            let mut meas = Vec::new();
            for (l, s) in p.links.iter().zip(&streams) {
                let los = estimate_delays(stream(s, &PathKind::Los)?)?;
                let rs = stream(s, &PathKind::Ris(ris.id.clone()))?;
                let rd = estimate_delays(rs)?;
                let nu = estimate_spatial_freq(rs, &p.schedule, ris, Some(rd.delay), None)?;
                meas.push(PairMeasurement {
                    tx: l.tx.clone(),
                    rx: l.rx.clone(),
                    delay_diff: wrap_delay(rd.delay - los.delay, period),
                    delay_diff_var: rd.variance + los.variance,
                    nu: nu.nu,
                    nu_cov: nu.covariance,
                });
            }
            let c = ris.pose.position;
            let r = Vec3::repeat(p.search_radius);
            locate_b1(&meas, ris, lambda, (c - r, c + r), None, &p.options)?
        }
        ScenarioTag::C1 => {
            let link = &p.links[0];
            let ris = p.scene.ris(&p.ris[0])?;
            let rs = stream(&streams[0], &PathKind::Ris(ris.id.clone()))?;
            let d = estimate_delays(rs)?;
            let nu = estimate_spatial_freq(rs, &p.schedule, ris, Some(d.delay), None)?;
            let mut e = locate_c1(d.delay, nu.nu, ris, lambda)?;
            e.id = link.rx.clone();
            vec![e]
        }
    };
    // Keep unknowns order.
    out.sort_by_key(|e| p.unknowns.entities.iter().position(|id| *id == e.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeResult {
    pub id: String,
    pub truth: Vec3,
    pub estimate: Vec3,
    pub error: f64,
    pub peb: Bound,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRun {
    pub tag: ScenarioTag,
    pub noise_variance: f64,
    pub ues: Vec<UeResult>,
    /// `sqrt(trace(EFIM^-1))` over every unknown position.
    pub peb: Bound,
}

/// A single run with its bounds.
pub fn run_localization(p: &Prepared, seed: u64, noiseless: bool) -> Result<LocalizationRun> {
    let est = localize_once(p, seed, noiseless)?;
    let fim = evaluate(&p.scene, &p.links, &p.unknowns, &p.schedule)?;
    let mut ues = Vec::new();
    for (e, b) in est.iter().zip(&fim.entities) {
        let truth = p.scene.position(&e.id)?;
        ues.push(UeResult {
            id: e.id.clone(),
            truth,
            estimate: e.position,
            error: (e.position - truth).norm(),
            peb: b.peb,
            residual_norm: e.residual_norm,
            iterations: e.iterations,
            converged: e.converged,
        });
    }
    Ok(LocalizationRun {
        tag: p.tag,
        noise_variance: if noiseless {
            0.0
        } else {
            p.scene.noise_variance()
        },
        ues,
        peb: fim.peb,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub failures: usize,
    /// `sqrt(mean over trials of the summed squared UE errors)`.
    pub rmse: f64,
    pub peb: Bound,
    pub ratio: Option<f64>,
}

/// Independent noisy trials, run in parallel; trial `k` uses a seed derived
/// from `(seed, k)`.
pub fn monte_carlo(p: &Prepared, trials: usize, seed: u64) -> Result<MonteCarloSummary> {
    let fim = evaluate(&p.scene, &p.links, &p.unknowns, &p.schedule)?;
    let truth: Vec<Vec3> = p
        .unknowns
        .entities
        .iter()
        .map(|id| p.scene.position(id))
        .collect::<Result<_>>()?;
    let errs: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut b = seed.to_le_bytes().to_vec();
            b.extend_from_slice(&(k as u64).to_le_bytes());
            let est = localize_once(p, fnv1a(&b), false).ok()?;
            Some(
                est.iter()
                    .zip(&truth)
                    .map(|(e, t)| (e.position - t).norm_squared())
                    .sum(),
            )
        })
        .collect();
    let ok: Vec<f64> = errs.iter().flatten().copied().collect();
    let failures = trials - ok.len();
    let rmse = if ok.is_empty() {
        f64::NAN
    } else {
        (ok.iter().sum::<f64>() / ok.len() as f64).sqrt()
    };
    Ok(MonteCarloSummary {
        trials,
        failures,
        rmse,
        peb: fim.peb,
        ratio: fim.peb.value().map(|v| rmse / v),
    })
}

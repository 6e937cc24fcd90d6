use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rislas_core::estimators::{
    monte_carlo, prepare, run_localization, PipelineConfig, ScenarioTag,
};
use rislas_core::fim::{peb_heatmap, peb_vs_elements, Bound, CurveSpec, Dims};
use rislas_core::profiles::{
    beampattern_gain, directional_profile, min_gain_over, probing_schedule, uncertainty_profile,
    AngularRegion, CoverageOptions, ProfileSchedule,
};
use rislas_core::protocol::{
    run_protocol, validate_transcript, LatencyModel, Outage, Outcome, ProtocolConfig,
};
use rislas_core::scenario_file::{self, ScenarioFile};
use rislas_core::{AngularDirection, Error, Pose, RisSpec, Scenario, Vec3};
use serde::Serialize;

use crate::format::sig6;
use crate::{
    BeampatternArgs, CliError, Common, LocalizeArgs, PebCurveArgs, PebMapArgs, ProtocolArgs,
};

fn load(common: &Common) -> Result<(ScenarioFile, u64), CliError> {
    if !common.scenario.exists() {
        return Err(CliError::config(
            "scenario",
            format!("{} does not exist", common.scenario.display()),
        ));
    }
    let file = scenario_file::load(&common.scenario)?;
    let seed = common.seed.unwrap_or(file.scenario.seed);
    Ok((file, seed))
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::Run(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
            {
                // A closed pipe (`| head`) is the reader's choice, not a failure.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Run(
                    format!("cannot write to standard output: {e}"),
                )),
                _ => Ok(()),
            }
        }
    }
}

/// Maps scenario/capability problems to config errors under `key`; anything
/// else is a run failure.
fn classify(key: &str, e: Error) -> CliError {
    match e {
        Error::InvalidScenario(_)
        | Error::UnknownEntity(_)
        | Error::NeedsWideband
        | Error::Underdetermined(_)
        | Error::NeedsProbes { .. }
        | Error::TooFewSlots { .. } => CliError::config(key, e.to_string()),
        other => CliError::Run(other.to_string()),
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(range[0] + range[1]) / 2.0];
    }
    (0..n)
        .map(|k| range[0] + (range[1] - range[0]) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Probing schedule over every RIS plus random precoders for arrayed
/// beacons.
pub fn scene_schedule(
    scene: &Scenario,
    n_blocks: usize,
    seed: u64,
) -> rislas_core::Result<ProfileSchedule> {
    let ris: Vec<&RisSpec> = scene.ris.iter().collect();
    let code_len = (ris.len() + 1).next_power_of_two();
    let mut s = probing_schedule(&ris, code_len, n_blocks, seed)?;
    for b in scene.beacons.iter().filter(|b| b.is_array()) {
        s.add_block_random(&b.id, b.n_antennas(), seed)?;
    }
    Ok(s)
}

pub fn peb_map(args: &PebMapArgs) -> Result<(), CliError> {
    let (file, seed) = load(&args.common)?;
    let cfg = file
        .peb_map
        .ok_or_else(|| CliError::config("peb_map", "scenario file has no [peb_map] section"))?;
    let scene = &file.scenario;
    let target = args.target.clone().unwrap_or(cfg.target);
    scene
        .ue(&target)
        .map_err(|e| CliError::config("peb_map.target", e.to_string()))?;
    let nx = args.nx.unwrap_or(cfg.nx);
    let ny = args.ny.unwrap_or(cfg.ny);
    if nx == 0 {
        return Err(CliError::config("peb_map.nx", "must be at least 1"));
    }
    if ny == 0 {
        return Err(CliError::config("peb_map.ny", "must be at least 1"));
    }
    let dims = match cfg.dims.as_str() {
        "planar" => Dims::Planar,
        "spatial" => Dims::Spatial,
        other => {
            return Err(CliError::config(
                "peb_map.dims",
                format!("`{other}` is neither `planar` nor `spatial`"),
            ))
        }
    };
    let schedule =
        scene_schedule(scene, cfg.n_blocks, seed).map_err(|e| classify("peb_map.n_blocks", e))?;
    let xs = linspace(cfg.x_range, nx);
    let ys = linspace(cfg.y_range, ny);
    let cells = peb_heatmap(scene, &target, &xs, &ys, dims, &schedule)
        .map_err(|e| classify("peb_map", e))?;
    let mut csv = String::from("x,y,peb\n");
    for c in cells {
        writeln!(csv, "{},{},{}", sig6(c.x), sig6(c.y), sig6(c.peb.or_inf()))
            .expect("string write");
    }
    emit(args.common.out.as_deref(), &csv)
}

pub fn peb_curve(args: &PebCurveArgs) -> Result<(), CliError> {
    let (file, seed) = load(&args.common)?;
    let cfg = file
        .peb_curve
        .ok_or_else(|| CliError::config("peb_curve", "scenario file has no [peb_curve] section"))?;
    let counts = args.counts.clone().unwrap_or(cfg.counts);
    for &n in &counts {
        let r = (n as f64).sqrt().round() as usize;
        if n == 0 || r * r != n {
            return Err(CliError::config(
                "peb_curve.counts",
                format!("{n} is not a positive perfect square"),
            ));
        }
    }
    let scene = &file.scenario;
    scene
        .ris(&cfg.ris)
        .map_err(|e| CliError::config("peb_curve.ris", e.to_string()))?;
    scene
        .beacon(&cfg.beacon)
        .map_err(|e| CliError::config("peb_curve.beacon", e.to_string()))?;
    let spec = CurveSpec {
        ris: cfg.ris,
        beacon: cfg.beacon,
        counts,
        n_blocks: cfg.n_blocks,
        seed,
    };
    let rows = peb_vs_elements(scene, &spec).map_err(|e| classify("peb_curve", e))?;
    let mut csv = String::from("n_elements,ue_id,peb_ris,peb_beacon\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.n_elements,
            r.ue_id,
            sig6(r.peb_ris.or_inf()),
            sig6(r.peb_beacon.or_inf())
        )
        .expect("string write");
    }
    emit(args.common.out.as_deref(), &csv)
}

fn deg_dir(d: [f64; 2]) -> AngularDirection {
    AngularDirection::new(d[0].to_radians(), d[1].to_radians())
}

/// `<out>_directional.csv` and `<out>_optimized.csv`, with any `.csv`
/// extension on `out` dropped first.
pub fn beampattern_paths(out: &Path) -> (PathBuf, PathBuf) {
    let base = if out.extension().is_some_and(|e| e == "csv") {
        out.with_extension("")
    } else {
        out.to_path_buf()
    };
    let with = |suffix: &str| {
        let mut s = base.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with("_directional.csv"), with("_optimized.csv"))
}

pub fn beampattern(args: &BeampatternArgs) -> Result<(), CliError> {
    let (file, _) = load(&args.common)?;
    let cfg = file.beampattern.ok_or_else(|| {
        CliError::config("beampattern", "scenario file has no [beampattern] section")
    })?;
    let out =
        args.common.out.as_deref().ok_or_else(|| {
            CliError::config("out", "beampattern writes two files and needs --out")
        })?;
    if cfg.nx == 0 || cfg.ny == 0 {
        return Err(CliError::config(
            "beampattern.nx",
            "element counts must be positive",
        ));
    }
    if !(cfg.spacing_wavelengths > 0.0) {
        return Err(CliError::config(
            "beampattern.spacing_wavelengths",
            "must be positive",
        ));
    }
    let step = args.step_deg.unwrap_or(cfg.step_deg);
    if !(step > 0.0) {
        return Err(CliError::config("beampattern.step_deg", "must be positive"));
    }
    if !(cfg.region_step_deg > 0.0) {
        return Err(CliError::config(
            "beampattern.region_step_deg",
            "must be positive",
        ));
    }
    if cfg.phase_levels < 2 {
        return Err(CliError::config(
            "beampattern.phase_levels",
            "needs at least two levels",
        ));
    }
    let lambda = file.scenario.wavelength();
    let ris = RisSpec::new(
        "beampattern",
        Pose::at(Vec3::zeros()),
        cfg.nx,
        cfg.ny,
        cfg.spacing_wavelengths * lambda,
    );
    let incident = deg_dir(cfg.incident_deg);
    let region = AngularRegion::centered(
        deg_dir(cfg.region_center_deg),
        cfg.region_width_deg[0].to_radians(),
        cfg.region_width_deg[1].to_radians(),
    );
    let region_grid = region.grid(cfg.region_step_deg.to_radians());
    let plot = AngularRegion {
        az_min: cfg.az_range_deg[0].to_radians(),
        az_max: cfg.az_range_deg[1].to_radians(),
        el_min: cfg.el_range_deg[0].to_radians(),
        el_max: cfg.el_range_deg[1].to_radians(),
    }
    .grid(step.to_radians());
    let directional = directional_profile(&ris, lambda, &incident, &region.center());
    let options = CoverageOptions {
        phase_levels: cfg.phase_levels,
        ..Default::default()
    };
    let optimized = uncertainty_profile(
        &ris,
        lambda,
        &incident,
        &region,
        cfg.region_step_deg.to_radians(),
        options,
    );
    let (p_dir, p_opt) = beampattern_paths(out);
    for (path, name, profile) in [
        (p_dir, "directional", &directional),
        (p_opt, "optimized", &optimized),
    ] {
        let min = min_gain_over(&ris, lambda, profile, &incident, &region_grid);
        let gains = beampattern_gain(&ris, lambda, profile, &incident, &plot);
        let mut csv = format!(
            "# profile={name} region_az_deg=[{},{}] region_el_deg=[{},{}] region_min_gain_db={}\naz_deg,el_deg,gain_db\n",
            sig6(region.az_min.to_degrees()),
            sig6(region.az_max.to_degrees()),
            sig6(region.el_min.to_degrees()),
            sig6(region.el_max.to_degrees()),
            sig6(min),
        );
        for (d, g) in plot.iter().zip(gains) {
            writeln!(
                csv,
                "{},{},{}",
                sig6(d.azimuth.to_degrees()),
                sig6(d.elevation.to_degrees()),
                sig6(g)
            )
            .expect("string write");
        }
        emit(Some(&path), &csv)?;
    }
    Ok(())
}

fn bound_json(b: Bound) -> Option<f64> {
    b.value()
}

#[derive(Serialize)]
struct UeReport {
    id: String,
    truth: [f64; 3],
    estimate: [f64; 3],
    error: f64,
    peb: Option<f64>,
    converged: bool,
    iterations: usize,
    residual_norm: f64,
}

#[derive(Serialize)]
struct McReport {
    trials: usize,
    failures: usize,
    rmse: f64,
    peb: Option<f64>,
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct LocalizeReport {
    tag: String,
    seed: u64,
    noiseless: bool,
    snr_db: Option<f64>,
    noise_variance: f64,
    peb: Option<f64>,
    ues: Vec<UeReport>,
    monte_carlo: Option<McReport>,
}

pub fn localize(args: &LocalizeArgs) -> Result<(), CliError> {
    let (file, seed) = load(&args.common)?;
    let section = file.localize.clone();
    let tag_text = match (&args.tag, &section) {
        (Some(t), _) => t.clone(),
        (None, Some(s)) => s.tag.clone(),
        (None, None) => {
            return Err(CliError::config(
                "localize.tag",
                "give --tag or a [localize] section",
            ))
        }
    };
    let tag: ScenarioTag = tag_text
        .parse()
        .map_err(|e: String| CliError::config("localize.tag", e))?;
    let mut cfg = PipelineConfig::new(tag);
    cfg.seed = seed;
    cfg.options.seed = seed;
    let trials;
    let noiseless;
    if let Some(s) = &section {
        cfg.target = s.target.clone();
        cfg.n_blocks = s.n_blocks;
        cfg.snr_db = s.snr_db;
        cfg.search_radius = s.search_radius_m;
        trials = args.monte_carlo.unwrap_or(s.monte_carlo);
        noiseless = args.noiseless || s.noiseless;
    } else {
        trials = args.monte_carlo.unwrap_or(1);
        noiseless = args.noiseless;
    }
    if args.snr_db.is_some() {
        cfg.snr_db = args.snr_db;
    }
    if trials == 0 {
        return Err(CliError::config(
            "localize.monte_carlo",
            "must be at least 1",
        ));
    }
    if tag == ScenarioTag::C1 {
        let ues = &file.scenario.ues;
        let idx = match &cfg.target {
            Some(t) => ues.iter().position(|u| &u.id == t),
            None if !ues.iter().any(|u| u.full_duplex) && !ues.is_empty() => Some(0),
            None => None,
        };
        if let Some(i) = idx.filter(|&i| !ues[i].full_duplex) {
            return Err(CliError::config(
                format!("ue[{i}].full_duplex"),
                format!(
                    "C1 measures its own echo, so `{}` must be full duplex",
                    ues[i].id
                ),
            ));
        }
    }
    let prepared = prepare(&file.scenario, &cfg).map_err(|e| classify("localize.tag", e))?;
    let run =
        run_localization(&prepared, seed, noiseless).map_err(|e| CliError::Run(e.to_string()))?;
    let mc = if trials > 1 {
        let s = monte_carlo(&prepared, trials, seed).map_err(|e| CliError::Run(e.to_string()))?;
        Some(McReport {
            trials: s.trials,
            failures: s.failures,
            rmse: s.rmse,
            peb: bound_json(s.peb),
            ratio: s.ratio,
        })
    } else {
        None
    };
    let report = LocalizeReport {
        tag: tag.to_string(),
        seed,
        noiseless,
        snr_db: cfg.snr_db,
        noise_variance: run.noise_variance,
        peb: bound_json(run.peb),
        ues: run
            .ues
            .iter()
            .map(|u| UeReport {
                id: u.id.clone(),
                truth: u.truth.into(),
                estimate: u.estimate.into(),
                error: u.error,
                peb: bound_json(u.peb),
                converged: u.converged,
                iterations: u.iterations,
                residual_norm: u.residual_norm,
            })
            .collect(),
        monte_carlo: mc,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(args.common.out.as_deref(), &text)
}

#[derive(Serialize)]
struct Summary<'a> {
    summary: SummaryBody<'a>,
}

#[derive(Serialize)]
struct SummaryBody<'a> {
    mode: String,
    target: &'a str,
    coordinator: Option<&'a str>,
    outcome: Outcome,
    end_time: f64,
    violations: Vec<rislas_core::protocol::Violation>,
}

pub fn protocol_sim(args: &ProtocolArgs) -> Result<(), CliError> {
    let (file, seed) = load(&args.common)?;
    let section = file.protocol.clone();
    let target = match (&args.target, &section) {
        (Some(t), _) => t.clone(),
        (None, Some(s)) => s.target.clone(),
        (None, None) => {
            return Err(CliError::config(
                "protocol.target",
                "give --target or a [protocol] section",
            ))
        }
    };
    let scene = &file.scenario;
    scene
        .ue(&target)
        .map_err(|e| CliError::config("protocol.target", e.to_string()))?;
    let mut cfg = ProtocolConfig {
        seed,
        offload: args.offload,
        ..Default::default()
    };
    if let Some(s) = &section {
        cfg.offload |= s.offload;
        cfg.report_result = s.report_result;
        cfg.latency = LatencyModel {
            hop_s: s.hop_ms * 1e-3,
            jitter_s: s.jitter_ms * 1e-3,
            core_round_trip_s: s.core_round_trip_ms * 1e-3,
            timeout_s: s.timeout_ms * 1e-3,
            loss_probability: s.loss_probability,
            ..LatencyModel::default()
        };
        if !(0.0..=1.0).contains(&s.loss_probability) {
            return Err(CliError::config(
                "protocol.loss_probability",
                "must lie in [0, 1]",
            ));
        }
        cfg.outage = match (&s.outage_node, s.outage_after_step) {
            (Some(node), Some(step)) => Some(Outage {
                node: node.clone(),
                after_step: step,
            }),
            (None, None) => None,
            (Some(_), None) => {
                return Err(CliError::config(
                    "protocol.outage_after_step",
                    "needed with outage_node",
                ));
            }
            (None, Some(_)) => {
                return Err(CliError::config(
                    "protocol.outage_node",
                    "needed with outage_after_step",
                ))
            }
        };
    }
    let t = run_protocol(scene, &target, &cfg).map_err(|e| classify("protocol.target", e))?;
    let violations = validate_transcript(&t, t.mode);
    let mut text = t.to_json_lines();
    let summary = Summary {
        summary: SummaryBody {
            mode: t.mode.to_string(),
            target: &t.target,
            coordinator: t.coordinator.as_deref(),
            outcome: t.outcome,
            end_time: t.end_time,
            violations: violations.clone(),
        },
    };
    text.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
    text.push('\n');
    emit(args.common.out.as_deref(), &text)?;
    if let Outcome::Failed(r) = t.outcome {
        return Err(CliError::Run(format!("protocol failed: {r:?}")));
    }
    if !violations.is_empty() {
        return Err(CliError::Run(format!(
            "{} transcript violations",
            violations.len()
        )));
    }
    Ok(())
}

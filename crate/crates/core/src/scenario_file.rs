//! TOML scenario files.
//!
//! Angles are in degrees, powers in dBm, lengths in meters. Element spacing
//! can be given in meters (`spacing_m`) or wavelengths
//! (`spacing_wavelengths`); the default is half a wavelength.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::scene::{ApSpec, BeaconSpec, Obstacle, RisSpec, Scenario, UeSpec};

/// Problem with a configuration file. `key` always names the offending
/// entry, e.g. `ris[1].nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    radio: RadioDoc,
    #[serde(default)]
    ris: Vec<RisDoc>,
    #[serde(default)]
    beacon: Vec<BeaconDoc>,
    #[serde(default)]
    ue: Vec<UeDoc>,
    #[serde(default)]
    ap: Vec<ApDoc>,
    #[serde(default)]
    obstacle: Vec<ObstacleDoc>,
    peb_map: Option<PebMapConfig>,
    peb_curve: Option<PebCurveConfig>,
    beampattern: Option<BeampatternConfig>,
    localize: Option<LocalizeConfig>,
    protocol: Option<ProtocolSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioDoc {
    carrier_hz: f64,
    bandwidth_hz: f64,
    n_subcarriers: usize,
    tx_power_dbm: f64,
    #[serde(default = "default_noise_psd")]
    noise_psd_dbm_per_hz: f64,
    #[serde(default = "default_sidelink_range")]
    sidelink_range_m: f64,
    seed: u64,
}

fn default_noise_psd() -> f64 {
    -174.0
}

fn default_sidelink_range() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RisDoc {
    id: String,
    position: [f64; 3],
    /// Yaw, pitch, roll.
    #[serde(default)]
    orientation_deg: [f64; 3],
    nx: usize,
    ny: usize,
    spacing_m: Option<f64>,
    spacing_wavelengths: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeaconDoc {
    id: String,
    position: [f64; 3],
    #[serde(default)]
    orientation_deg: [f64; 3],
    #[serde(default = "single_array")]
    array: [usize; 2],
    spacing_m: Option<f64>,
    spacing_wavelengths: Option<f64>,
    tx_power_dbm: Option<f64>,
}

fn single_array() -> [usize; 2] {
    [1, 1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UeDoc {
    id: String,
    position: [f64; 3],
    #[serde(default)]
    orientation_deg: [f64; 3],
    #[serde(default = "one")]
    n_antennas: usize,
    #[serde(default)]
    full_duplex: bool,
    #[serde(default = "yes")]
    sidelink: bool,
    #[serde(default)]
    clock_bias_s: f64,
    #[serde(default = "one_u32")]
    compute_capability: u32,
    #[serde(default = "yes")]
    can_coordinate: bool,
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApDoc {
    id: String,
    position: [f64; 3],
    range_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleDoc {
    a: [f64; 2],
    b: [f64; 2],
}

/// `[peb_map]`: heatmap grid over the horizontal plane at the target height.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PebMapConfig {
    pub target: String,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "planar")]
    pub dims: String,
    #[serde(default = "sixteen")]
    pub n_blocks: usize,
}

fn planar() -> String {
    "planar".into()
}
fn sixteen() -> usize {
    16
}

/// `[peb_curve]`: PEB against RIS size with a beacon-array baseline.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PebCurveConfig {
    pub ris: String,
    pub beacon: String,
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "sixteen")]
    pub n_blocks: usize,
}

pub fn default_counts() -> Vec<usize> {
    vec![9, 25, 49, 81, 121, 169]
}

/// `[beampattern]`: a standalone RIS at the scenario carrier, RIS-local
/// angles in degrees as `[azimuth, elevation]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeampatternConfig {
    #[serde(default = "fifty")]
    pub nx: usize,
    #[serde(default = "fifty")]
    pub ny: usize,
    #[serde(default = "half")]
    pub spacing_wavelengths: f64,
    pub incident_deg: [f64; 2],
    pub region_center_deg: [f64; 2],
    #[serde(default = "ten_by_ten")]
    pub region_width_deg: [f64; 2],
    #[serde(default = "one_deg")]
    pub region_step_deg: f64,
    #[serde(default = "wide")]
    pub az_range_deg: [f64; 2],
    #[serde(default = "wide")]
    pub el_range_deg: [f64; 2],
    #[serde(default = "one_deg")]
    pub step_deg: f64,
    #[serde(default = "sixteen")]
    pub phase_levels: usize,
}

fn fifty() -> usize {
    50
}
fn half() -> f64 {
    0.5
}
fn ten_by_ten() -> [f64; 2] {
    [10.0, 10.0]
}
fn one_deg() -> f64 {
    1.0
}
fn wide() -> [f64; 2] {
    [-60.0, 60.0]
}

/// `[localize]`: end-to-end estimation run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeConfig {
    pub tag: String,
    pub target: Option<String>,
    #[serde(default = "sixteen")]
    pub n_blocks: usize,
    /// Rescales the noise so the weakest path has this per-sample SNR.
    pub snr_db: Option<f64>,
    #[serde(default = "one")]
    pub monte_carlo: usize,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "ten")]
    pub search_radius_m: f64,
}

fn ten() -> f64 {
    10.0
}

/// `[protocol]`: coordination protocol run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub target: String,
    #[serde(default)]
    pub offload: bool,
    #[serde(default = "yes")]
    pub report_result: bool,
    #[serde(default = "hop_ms")]
    pub hop_ms: f64,
    #[serde(default = "jitter_ms")]
    pub jitter_ms: f64,
    #[serde(default = "core_ms")]
    pub core_round_trip_ms: f64,
    #[serde(default = "timeout_ms")]
    pub timeout_ms: f64,
    #[serde(default)]
    pub loss_probability: f64,
    pub outage_node: Option<String>,
    pub outage_after_step: Option<u8>,
}

fn hop_ms() -> f64 {
    1.0
}
fn jitter_ms() -> f64 {
    0.2
}
fn core_ms() -> f64 {
    5.0
}
fn timeout_ms() -> f64 {
    100.0
}

/// A parsed scenario plus whichever experiment sections the file carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub peb_map: Option<PebMapConfig>,
    pub peb_curve: Option<PebCurveConfig>,
    pub beampattern: Option<BeampatternConfig>,
    pub localize: Option<LocalizeConfig>,
    pub protocol: Option<ProtocolSection>,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn load(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::new("scenario", format!("cannot read {}: {e}", path.display()))
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ScenarioFile, ConfigError> {
    let doc: FileDoc = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let lambda_of = |carrier: f64| crate::geometry::SPEED_OF_LIGHT / carrier;
    let r = &doc.radio;
    let mut s = Scenario::empty(r.carrier_hz, r.bandwidth_hz, r.n_subcarriers);
    s.tx_power_w = dbm_to_watts(r.tx_power_dbm);
    s.noise_psd_w_per_hz = dbm_to_watts(r.noise_psd_dbm_per_hz);
    s.sidelink_range = r.sidelink_range_m;
    s.seed = r.seed;
    if !(r.carrier_hz > 0.0) {
        return Err(ConfigError::new("radio.carrier_hz", "must be positive"));
    }
    let lambda = lambda_of(r.carrier_hz);
    let spacing = |key: String, m: Option<f64>, w: Option<f64>| -> Result<f64, ConfigError> {
        let v = match (m, w) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new(
                    key,
                    "give spacing_m or spacing_wavelengths, not both",
                ));
            }
            (Some(m), None) => m,
            (None, Some(w)) => w * lambda,
            (None, None) => lambda / 2.0,
        };
        if !(v > 0.0) {
            return Err(ConfigError::new(key, "spacing must be positive"));
        }
        Ok(v)
    };
    for (i, d) in doc.ris.iter().enumerate() {
        if d.nx == 0 || d.ny == 0 {
            return Err(ConfigError::new(
                format!("ris[{i}].nx"),
                "element counts must be positive",
            ));
        }
        let sp = spacing(
            format!("ris[{i}].spacing_m"),
            d.spacing_m,
            d.spacing_wavelengths,
        )?;
        s.ris.push(RisSpec::new(
            &d.id,
            pose(d.position, d.orientation_deg),
            d.nx,
            d.ny,
            sp,
        ));
    }
    for (i, d) in doc.beacon.iter().enumerate() {
        if d.array[0] == 0 || d.array[1] == 0 {
            return Err(ConfigError::new(
                format!("beacon[{i}].array"),
                "antenna counts must be positive",
            ));
        }
        let sp = spacing(
            format!("beacon[{i}].spacing_m"),
            d.spacing_m,
            d.spacing_wavelengths,
        )?;
        s.beacons.push(BeaconSpec {
            id: d.id.clone(),
            pose: pose(d.position, d.orientation_deg),
            array_nx: d.array[0],
            array_ny: d.array[1],
            spacing: sp,
            tx_power_w: d.tx_power_dbm.map(dbm_to_watts),
        });
    }
    for (i, d) in doc.ue.iter().enumerate() {
        if d.n_antennas == 0 {
            return Err(ConfigError::new(
                format!("ue[{i}].n_antennas"),
                "must be at least 1",
            ));
        }
        if d.full_duplex && !d.sidelink {
            return Err(ConfigError::new(
                format!("ue[{i}].full_duplex"),
                "full duplex requires sidelink = true",
            ));
        }
        let mut u = UeSpec::new(&d.id, Vec3::from(d.position));
        u.pose = pose(d.position, d.orientation_deg);
        u.n_antennas = d.n_antennas;
        u.full_duplex = d.full_duplex;
        u.sidelink = d.sidelink;
        u.clock_bias = d.clock_bias_s;
        u.compute_capability = d.compute_capability;
        u.can_coordinate = d.can_coordinate;
        s.ues.push(u);
    }
    for (i, d) in doc.ap.iter().enumerate() {
        if !(d.range_m > 0.0) {
            return Err(ConfigError::new(
                format!("ap[{i}].range_m"),
                "must be positive",
            ));
        }
        s.aps.push(ApSpec {
            id: d.id.clone(),
            pose: Pose::at(Vec3::from(d.position)),
            range: d.range_m,
        });
    }
    for (i, d) in doc.obstacle.iter().enumerate() {
        if d.a == d.b {
            return Err(ConfigError::new(
                format!("obstacle[{i}].b"),
                "endpoints must differ",
            ));
        }
        s.obstacles.push(Obstacle::new(d.a, d.b));
    }
    s.validate()
        .map_err(|e| ConfigError::new(validation_key(&e.to_string()), e.to_string()))?;
    Ok(ScenarioFile {
        scenario: s,
        peb_map: doc.peb_map,
        peb_curve: doc.peb_curve,
        beampattern: doc.beampattern,
        localize: doc.localize,
        protocol: doc.protocol,
    })
}

fn pose(position: [f64; 3], deg: [f64; 3]) -> Pose {
    let [y, p, r] = deg.map(f64::to_radians);
    Pose::new(Vec3::from(position), Rotation::from_euler(y, p, r))
}

fn validation_key(msg: &str) -> String {
    match between_backticks(msg) {
        Some(id) => format!("id `{id}`"),
        None => "radio".into(),
    }
}

fn between_backticks(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let message = e.message().to_string();
    let key = if message.starts_with("unknown field") || message.starts_with("missing field") {
        between_backticks(&message).map(str::to_string)
    } else {
        None
    };
    let key = key.or_else(|| {
        let l = text.lines().nth(line? - 1)?.trim();
        if let Some(h) = l.strip_prefix('[') {
            return Some(h.trim_matches(|c| c == '[' || c == ']').trim().to_string());
        }
        l.split_once('=').map(|(k, _)| k.trim().to_string())
    });
    ConfigError {
        key: key.unwrap_or_else(|| "document".into()),
        line,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[radio]
carrier_hz = 28e9
bandwidth_hz = 100e6
n_subcarriers = 32
tx_power_dbm = 20
seed = 7

[[ris]]
id = "r"
position = [0, 6, 1.5]
orientation_deg = [-90, 0, 0]
nx = 8
ny = 8
spacing_wavelengths = 0.25

[[beacon]]
id = "b"
position = [0, 0, 1.5]

[[ue]]
id = "u"
position = [3, 2.5, 1.5]
"#;

    #[test]
    fn minimal_file_parses() {
        let f = parse(MINIMAL).unwrap();
        let s = &f.scenario;
        assert_eq!(s.seed, 7);
        assert!((s.tx_power_w - 0.1).abs() < 1e-15);
        let lambda = s.wavelength();
        assert!((s.ris[0].spacing - lambda / 4.0).abs() < 1e-15);
        let b = s.ris[0].boresight();
        assert!((b - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert_eq!(s.beacons[0].spacing, lambda / 2.0);
        assert!(f.peb_map.is_none());
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let text = MINIMAL.replace("nx = 8", "nz = 8");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "nz");
        assert!(e.line.is_some());
        assert!(e.to_string().contains("nz"));
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("seed = 7\n", "");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "seed");
    }

    #[test]
    fn wrong_type_names_the_key() {
        let text = MINIMAL.replace("nx = 8", "nx = \"eight\"");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "nx");
        let text = MINIMAL.replace("n_subcarriers = 32", "n_subcarriers = -1");
        assert_eq!(parse(&text).unwrap_err().key, "n_subcarriers");
    }

    #[test]
    fn semantic_errors_name_the_entry() {
        let text = MINIMAL.replace("nx = 8", "nx = 0");
        assert_eq!(parse(&text).unwrap_err().key, "ris[0].nx");
        let text = MINIMAL.replace(
            "spacing_wavelengths = 0.25",
            "spacing_wavelengths = 0.25\nspacing_m = 0.001",
        );
        assert_eq!(parse(&text).unwrap_err().key, "ris[0].spacing_m");
        let text = format!("{MINIMAL}\n[[ue]]\nid = \"u\"\nposition = [1, 1, 1]\n");
        assert!(parse(&text).unwrap_err().key.contains('u'));
    }

    #[test]
    fn experiment_sections_parse_with_defaults() {
        let text = format!(
            "{MINIMAL}\n[peb_curve]\nris = \"r\"\nbeacon = \"b\"\n\n[localize]\ntag = \"A1\"\n"
        );
        let f = parse(&text).unwrap();
        assert_eq!(f.peb_curve.unwrap().counts, default_counts());
        let l = f.localize.unwrap();
        assert_eq!((l.monte_carlo, l.n_blocks), (1, 16));
    }
}

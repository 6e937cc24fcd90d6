use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scene(name: &str) -> String {
    root()
        .join("scenes")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn rislas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rislas"))
        .args(args)
        .output()
        .expect("rislas runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scene(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &[u8]) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let want =
        std::fs::read(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert!(
        want == actual,
        "{name} differs from its golden copy:\n{}",
        String::from_utf8_lossy(actual)
    );
}

#[test]
fn help_exits_zero() {
    let o = rislas(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("peb-map"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rislas(&["peb-map"]).status.code(), Some(1));
    assert_eq!(rislas(&["no-such-command"]).status.code(), Some(1));
    let o = rislas(&["peb-map", "--scenario", &scene("fig3.toml"), "--nx", "many"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let o = rislas(&["peb-map", "--scenario", "/nonexistent/scene.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`scenario`"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let a1 = std::fs::read_to_string(scene("a1.toml")).unwrap();

    let p = write_scene(&dir, "typo.toml", &a1.replace("nx = 8", "nxx = 8"));
    let o = rislas(&["localize", "--scenario", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`nxx`"), "{}", stderr(&o));

    let p = write_scene(&dir, "noseed.toml", &a1.replace("seed = 1\n", ""));
    let o = rislas(&["localize", "--scenario", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`seed`"), "{}", stderr(&o));

    let p = write_scene(&dir, "empty_ris.toml", &a1.replace("nx = 8", "nx = 0"));
    let o = rislas(&["localize", "--scenario", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ris[0].nx"), "{}", stderr(&o));

    let o = rislas(&["localize", "--scenario", &scene("a1.toml"), "--tag", "Z9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("localize.tag"), "{}", stderr(&o));
}

#[test]
fn c1_without_full_duplex_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = std::fs::read_to_string(scene("c1.toml")).unwrap();
    let p = write_scene(
        &dir,
        "c1.toml",
        &c1.replace("full_duplex = true", "full_duplex = false"),
    );
    let o = rislas(&["localize", "--scenario", &p, "--noiseless"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ue[0].full_duplex"), "{}", stderr(&o));
}

#[test]
fn beampattern_needs_an_output_path() {
    let o = rislas(&["beampattern", "--scenario", &scene("fig5.toml")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`out`"), "{}", stderr(&o));
}

#[test]
fn protocol_failure_exits_two() {
    // The target sees the AP but nothing that could send it a reference.
    let dir = tempfile::tempdir().unwrap();
    let p = write_scene(
        &dir,
        "lonely.toml",
        r#"
[radio]
carrier_hz = 28e9
bandwidth_hz = 100e6
n_subcarriers = 8
tx_power_dbm = 20
seed = 1

[[ue]]
id = "ue1"
position = [5.0, 3.0, 1.5]

[[ap]]
id = "ap1"
position = [0.0, 0.0, 10.0]
range_m = 100

[protocol]
target = "ue1"
"#,
    );
    let o = rislas(&["protocol-sim", "--scenario", &p]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().last().unwrap().contains("NoAnchors"), "{out}");
}

#[test]
fn single_cell_grid_is_one_row() {
    let o = rislas(&[
        "peb-map",
        "--scenario",
        &scene("fig3.toml"),
        "--nx",
        "1",
        "--ny",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert_eq!(lines[0], "x,y,peb");
    // The middle of x in [0.05, 4.95] and y in [0.05, 9.95].
    assert!(lines[1].starts_with("2.5,5,"), "{text}");
}

#[test]
fn zero_grid_is_a_config_error() {
    let o = rislas(&["peb-map", "--scenario", &scene("fig3.toml"), "--nx", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("peb_map.nx"), "{}", stderr(&o));
}

#[test]
fn reruns_are_byte_identical() {
    let runs: [&[&str]; 3] = [
        &[
            "localize",
            "--scenario",
            &scene("a1.toml"),
            "--monte-carlo",
            "20",
            "--snr-db",
            "30",
        ],
        &[
            "protocol-sim",
            "--scenario",
            &scene("protocol_partial.toml"),
        ],
        &[
            "peb-map",
            "--scenario",
            &scene("fig3.toml"),
            "--nx",
            "7",
            "--ny",
            "9",
        ],
    ];
    for args in runs {
        let (a, b) = (rislas(args), rislas(args));
        assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
        assert!(a.stdout == b.stdout, "{args:?} differs between runs");
    }
}

#[test]
fn seed_flag_overrides_the_file() {
    let base = [
        "localize",
        "--scenario",
        &scene("a1.toml"),
        "--monte-carlo",
        "5",
        "--snr-db",
        "20",
    ];
    let a = rislas(&base);
    let b = rislas(&[&base[..], &["--seed", "99"]].concat());
    assert_eq!(b.status.code(), Some(0));
    assert_ne!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(v["seed"], 99);
}

#[test]
fn out_flag_writes_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("map.csv");
    let o = rislas(&[
        "peb-map",
        "--scenario",
        &scene("fig3.toml"),
        "--nx",
        "2",
        "--ny",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 5);
}

#[test]
fn golden_peb_map() {
    let o = rislas(&[
        "peb-map",
        "--scenario",
        &scene("fig3.toml"),
        "--nx",
        "5",
        "--ny",
        "4",
    ]);
    golden("peb_map_fig3_5x4.csv", &o.stdout);
}

#[test]
fn golden_peb_curve() {
    let o = rislas(&[
        "peb-curve",
        "--scenario",
        &scene("b1.toml"),
        "--counts",
        "9,25,49",
    ]);
    golden("peb_curve_b1.csv", &o.stdout);
}

#[test]
fn golden_protocol_transcripts() {
    for (name, file) in [
        ("protocol_in.toml", "protocol_in.jsonl"),
        ("protocol_out.toml", "protocol_out.jsonl"),
    ] {
        let o = rislas(&["protocol-sim", "--scenario", &scene(name)]);
        assert_eq!(o.status.code(), Some(0));
        golden(file, &o.stdout);
    }
}

#[test]
fn golden_noiseless_localization() {
    let o = rislas(&["localize", "--scenario", &scene("a2.toml"), "--noiseless"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // Estimates carry rounding noise, so only the stable parts are pinned.
    let pinned = serde_json::json!({
        "tag": v["tag"],
        "noiseless": v["noiseless"],
        "peb": v["peb"],
        "truth": v["ues"][0]["truth"],
    });
    golden(
        "localize_a2.json",
        serde_json::to_string_pretty(&pinned).unwrap().as_bytes(),
    );
    assert!(v["ues"][0]["error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn beampattern_files_carry_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bp");
    let o = rislas(&[
        "beampattern",
        "--scenario",
        &scene("fig5.toml"),
        "--step-deg",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for kind in ["directional", "optimized"] {
        let text = std::fs::read_to_string(dir.path().join(format!("bp_{kind}.csv"))).unwrap();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with(&format!("# profile={kind} ")));
        assert_eq!(lines.next().unwrap(), "az_deg,el_deg,gain_db");
        // 13 azimuths by 13 elevations over [-60, 60] at 10 degrees.
        assert_eq!(lines.count(), 169);
    }
}

//! Fixtures shared by the benchmarks under `benches/`.

use std::path::Path;

use rislas_core::profiles::{probing_schedule, ProfileSchedule};
use rislas_core::scenario_file::{self, ScenarioFile};
use rislas_core::{RisSpec, Scenario};

/// A scene from the repository's `scenes/` directory.
pub fn shipped(name: &str) -> ScenarioFile {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes")
        .join(name);
    scenario_file::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Probing over every RIS with `n_blocks` random blocks.
pub fn schedule(scene: &Scenario, n_blocks: usize) -> ProfileSchedule {
    let ris: Vec<&RisSpec> = scene.ris.iter().collect();
    probing_schedule(
        &ris,
        (ris.len() + 1).next_power_of_two(),
        n_blocks,
        scene.seed,
    )
    .expect("valid schedule")
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rislas_bench::{schedule, shipped};
use rislas_core::estimators::{localize_once, prepare, PipelineConfig, ScenarioTag};
use rislas_core::fim::{channel_fim, peb_heatmap, Dims};
use rislas_core::profiles::{uncertainty_profile, AngularRegion, CoverageOptions};
use rislas_core::protocol::{run_protocol, ProtocolConfig};
use rislas_core::{AngularDirection, Pose, RisSpec, Vec3};

fn fim(c: &mut Criterion) {
    let file = shipped("fig3.toml");
    let s = &file.scenario;
    let sched = schedule(s, 16);
    c.bench_function("channel_fim/fig3 bs1->ue1", |b| {
        b.iter(|| channel_fim(black_box(s), "bs1", "ue1", &sched).unwrap())
    });
    let xs: Vec<f64> = (0..10).map(|i| 0.25 + 0.5 * i as f64).collect();
    let ys: Vec<f64> = (0..10).map(|i| 0.5 + i as f64).collect();
    c.bench_function("peb_heatmap/fig3 10x10", |b| {
        b.iter(|| peb_heatmap(black_box(s), "ue1", &xs, &ys, Dims::Planar, &sched).unwrap())
    });
}

fn estimators(c: &mut Criterion) {
    for (name, tag) in [
        ("a1.toml", ScenarioTag::A1),
        ("b1.toml", ScenarioTag::B1),
        ("c1.toml", ScenarioTag::C1),
    ] {
        let file = shipped(name);
        let mut cfg = PipelineConfig::new(tag);
        cfg.snr_db = Some(40.0);
        let p = prepare(&file.scenario, &cfg).unwrap();
        let mut seed = 0;
        c.bench_function(&format!("localize_once/{tag}"), |b| {
            b.iter(|| {
                seed += 1;
                localize_once(&p, seed, false).unwrap()
            })
        });
    }
}

fn profiles(c: &mut Criterion) {
    let lambda = 3e8 / 28e9;
    let ris = RisSpec::new("r", Pose::at(Vec3::zeros()), 20, 20, lambda / 2.0);
    let incident = AngularDirection::new((-30f64).to_radians(), 10f64.to_radians());
    let region = AngularRegion::centered(
        AngularDirection::new(20f64.to_radians(), 5f64.to_radians()),
        10f64.to_radians(),
        10f64.to_radians(),
    );
    c.bench_function("uncertainty_profile/20x20", |b| {
        b.iter(|| {
            uncertainty_profile(
                &ris,
                lambda,
                &incident,
                &region,
                1f64.to_radians(),
                CoverageOptions::default(),
            )
        })
    });
}

fn protocol(c: &mut Criterion) {
    for name in ["protocol_in.toml", "protocol_out.toml"] {
        let file = shipped(name);
        let target = file.protocol.as_ref().unwrap().target.clone();
        let cfg = ProtocolConfig::default();
        c.bench_function(&format!("run_protocol/{name}"), |b| {
            b.iter(|| run_protocol(black_box(&file.scenario), &target, &cfg).unwrap())
        });
    }
}

criterion_group!(benches, fim, estimators, profiles, protocol);
criterion_main!(benches);

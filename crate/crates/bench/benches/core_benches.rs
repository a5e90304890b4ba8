//! Benchmarks of the hot numerical kernels: the per-zone band solve, the
//! split-step propagation loop, and the measurement-pipeline fits.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use blochdyn_core::analysis::{fit_diffraction, fit_two_sine, DiffractionHints, TwoSineGuess};
use blochdyn_core::bandstructure::{solve_bands_depth, KGrid};
use blochdyn_core::propagator::{
    evolve, prepare_ground_state, tof_expand, EvolveOptions, ForceSchedule, GridSpec,
};
use blochdyn_core::units::LatticeConfig;
use blochdyn_core::VelocityTrace;

fn bench_band_solve(c: &mut Criterion) {
    c.bench_function("solve_bands s=9.4 257k 8b L32", |b| {
        let grid = KGrid::uniform(257);
        b.iter(|| black_box(solve_bands_depth(9.4, &grid, 8, 32).unwrap()));
    });
}

fn bench_split_step(c: &mut Criterion) {
    let grid = GridSpec::new(256, 16).unwrap();
    let psi = prepare_ground_state(9.4, &grid, 25.0, 0.0).unwrap();
    let schedule = ForceSchedule::instant(0.2128);
    c.bench_function("split_step 500 steps 4096pts", |b| {
        b.iter(|| {
            let opts = EvolveOptions {
                dt: 1.0 / 500.0,
                t_final: 1.0,
                sample_interval: 1.0,
                ..Default::default()
            };
            black_box(evolve(&psi, 9.4, &schedule, &opts).unwrap())
        });
    });
}

fn bench_two_sine_fit(c: &mut Criterion) {
    let times: Vec<f64> = (0..76).map(|i| i as f64 * 0.05).collect();
    let velocity: Vec<f64> = times
        .iter()
        .map(|&t| 0.03 * (4.9 * t + 0.2).sin() + 0.2 * (0.67 * t).sin())
        .collect();
    let trace = VelocityTrace::new(times, velocity);
    let guess = TwoSineGuess { omega_fast: Some(4.9), omega_slow: Some(0.67) };
    c.bench_function("two_sine_fit 76 samples", |b| {
        b.iter(|| black_box(fit_two_sine(&trace, None, &guess).unwrap()));
    });
}

fn bench_diffraction_fit(c: &mut Criterion) {
    let cfg = LatticeConfig::rb87_1064nm(9.4).unwrap();
    let grid = GridSpec::new(256, 16).unwrap();
    let psi = prepare_ground_state(9.4, &grid, 25.0, 0.0).unwrap();
    let scale = cfg.recoil_velocity() * 20e-3;
    let profile = tof_expand(&psi, &cfg, 20e-3, (-5.15 * scale, 3.45 * scale), 768);
    let hints = DiffractionHints { spacing: Some(2.0 * scale), ..Default::default() };
    c.bench_function("diffraction_fit 4 peaks 768pts", |b| {
        b.iter_batched(
            || profile.clone(),
            |p| black_box(fit_diffraction(&p, 4, &hints).unwrap()),
            BatchSize::SmallInput,
        );
    });
}

criterion_group!(
    benches,
    bench_band_solve,
    bench_split_step,
    bench_two_sine_fit,
    bench_diffraction_fit
);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use drift_forge_core::em::{assemble_system, solve_m_step};
use drift_forge_core::{
    model_zoo, observe, simulate, smc_filter, DMatrix, DVector, DriftFunction, EmConfig, Kernel, ModelName,
    ModelParams, NoiseCovariance, ObservationSet, SmcConfig, TimeGrid, VectorField, ZeroField,
};
use std::hint::black_box;

fn double_well(horizon: f64) -> (drift_forge_core::DiffusionModel, ObservationSet) {
    let model = model_zoo(ModelName::DoubleWell, &ModelParams::default()).unwrap();
    let grid = TimeGrid::from_horizon(0.025, horizon).unwrap();
    let path = simulate(&model, &grid, &DVector::from_element(1, 1.0), 1).unwrap();
    let noise = NoiseCovariance::isotropic(1, 1e-4).unwrap();
    let obs = observe(&path, 10, &DMatrix::identity(1, 1), &noise, 2).unwrap();
    (model, obs)
}

fn kernel_eval(c: &mut Criterion) {
    let kernel = Kernel::new(1.0, 0.25, 1).unwrap();
    let centers: Vec<DVector<f64>> = (0..600).map(|i| DVector::from_element(1, -2.5 + 5.0 * i as f64 / 600.0)).collect();
    let coefs: Vec<DVector<f64>> = (0..600).map(|i| DVector::from_element(1, (i as f64).sin())).collect();
    let drift = DriftFunction::new(kernel, &centers, &coefs).unwrap();
    let x = DVector::from_element(1, 0.3);
    c.bench_function("drift_eval_600_centers", |b| b.iter(|| drift.eval(black_box(&x))));
}

fn smc(c: &mut Criterion) {
    let (model, obs) = double_well(10.0);
    let config = SmcConfig::default();
    c.bench_function("smc_filter_t10_6_particles", |b| {
        b.iter(|| smc_filter(&ZeroField { dim: 1 }, &model, black_box(&obs), &config, 3).unwrap())
    });
}

fn m_step(c: &mut Criterion) {
    let (model, obs) = double_well(10.0);
    let ensemble = smc_filter(&ZeroField { dim: 1 }, &model, &obs, &SmcConfig::default(), 3).unwrap();
    let config = EmConfig { center_stride: 8, ..EmConfig::default() };
    let kernel = config.kernel(1).unwrap();
    c.bench_function("m_step_assemble_and_solve", |b| {
        b.iter_batched(
            || (),
            |_| {
                let system = assemble_system(&ensemble, model.diffusion.as_ref(), &kernel, &config).unwrap();
                solve_m_step(&system).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernel_eval, smc, m_step
}
criterion_main!(benches);

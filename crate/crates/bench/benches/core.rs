use criterion::{black_box, criterion_group, criterion_main, Criterion};

use qss_bench::{grid, synthetic_peaks};
use qss_core::dynamics::{propagate_full, PulseSegment, PulseSequence};
use qss_core::fit::{fit_parameters, FitParam, FitSpec};
use qss_core::spectrum::{track_field, FieldEigensystem, StrengthFloor};
use qss_core::{build_hamiltonian, clock_transitions, eigh, odmr_line_map, FieldPoint, SpinSystemParams, StateLabel};

fn spectrum(c: &mut Criterion) {
    let p = SpinSystemParams::default();
    let h = build_hamiltonian(&p, FieldPoint::new(29.0).unwrap()).unwrap();
    c.bench_function("eigh_16", |b| b.iter(|| eigh(black_box(&h)).unwrap()));
    let g = grid(0.0, 50.0, 201);
    c.bench_function("track_field_201", |b| b.iter(|| track_field(&p, black_box(&g)).unwrap()));
    c.bench_function("line_map_201", |b| {
        b.iter(|| odmr_line_map(&p, black_box(&g), 2000.0, StrengthFloor::default()).unwrap())
    });
    let (i, f) = (StateLabel::down(-3.5), StateLabel::up(-2.5));
    c.bench_function("clock_window_20_40", |b| b.iter(|| clock_transitions(&p, &i, &f, (20.0, 40.0)).unwrap()));
}

fn dynamics(c: &mut Criterion) {
    let p = SpinSystemParams::default();
    let fe = FieldEigensystem::new(&p, 29.0).unwrap();
    let seq = PulseSequence::new(vec![PulseSegment::new(0.2, 0.25, 428.85, 0.0).unwrap()]).unwrap();
    let psi = fe.eigen.vector(0);
    c.bench_function("propagate_full_200ns", |b| b.iter(|| propagate_full(&p, 29.0, &seq, black_box(&psi)).unwrap()));
}

fn fit(c: &mut Criterion) {
    let truth = SpinSystemParams::default();
    let peaks = synthetic_peaks(&truth, &[10.0, 20.0, 30.0, 40.0], 4);
    let mut start = truth;
    start.hyperfine.a_zz *= 1.01;
    start.g_z *= 0.998;
    let mut spec = FitSpec::with_free(start, &[FitParam::AZz, FitParam::GZ]).unwrap();
    spec.multistart = false;
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("a_zz_g_z_16_peaks", |b| b.iter(|| fit_parameters(black_box(&peaks), &spec).unwrap()));
    group.finish();
}

criterion_group!(benches, spectrum, dynamics, fit);
criterion_main!(benches);

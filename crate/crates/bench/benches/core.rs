use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use xrsim_bench::{cqi_rows, desk_scenario};
use xrsim_core::bsr::{build_table, RApiAssistance};
use xrsim_core::radio::McsTable;
use xrsim_core::scheduler::{pf_schedule, PfCandidate};
use xrsim_core::{run, BsrScheme};

fn bsr_encode(c: &mut Criterion) {
    let assist = RApiAssistance::new(10e6, 5e6);
    let mut g = c.benchmark_group("bsr_encode");
    for scheme in [
        BsrScheme::Legacy8,
        BsrScheme::Adaptive8,
        BsrScheme::Uniform10,
    ] {
        let t = build_table(scheme, Some(&assist)).unwrap();
        g.bench_function(scheme.as_str(), |b| {
            let mut v = 1u64;
            b.iter(|| {
                v = v
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407)
                    % 81_300_000;
                black_box(t.encode(black_box(v)))
            })
        });
    }
    g.finish();
}

fn pf(c: &mut Criterion) {
    let mcs = McsTable::pinned();
    let rows = cqi_rows(10, 14);
    let cands: Vec<PfCandidate> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| PfCandidate {
            ue: i,
            demand_bytes: 20_000 + i as u64 * 1_000,
            avg_bytes: 100.0 + i as f64 * 10.0,
            cqi: r,
        })
        .collect();
    let free = vec![true; 106];
    c.bench_function("pf_schedule_10_ues", |b| {
        b.iter(|| black_box(pf_schedule(black_box(&cands), &free, 8, &mcs, 7)))
    });
}

fn engine(c: &mut Criterion) {
    let cfg = desk_scenario(10, 0.05);
    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    g.bench_function("7_cells_70_ues_200_ttis", |b| {
        b.iter(|| black_box(run(&cfg).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bsr_encode, pf, engine);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use lifemine::preprocess::{extend_checkins, VenueGrid};
use lifemine_bench::{extension_config, venueless_dataset};

fn bench_extension(c: &mut Criterion) {
    let mut group = c.benchmark_group("extension");
    let cfg = extension_config();
    for users in [100, 1000] {
        let ds = venueless_dataset(users);
        group.throughput(Throughput::Elements(ds.checkins.len() as u64));
        group.bench_with_input(BenchmarkId::new("extend", users), &ds, |b, ds| {
            b.iter(|| extend_checkins(ds, &cfg).unwrap())
        });
    }
    group.finish();

    let ds = venueless_dataset(100);
    c.bench_function("venue_grid_build", |b| {
        b.iter(|| VenueGrid::new(ds.venues.as_slice(), cfg.radius_m))
    });
}

criterion_group!(benches, bench_extension);
criterion_main!(benches);

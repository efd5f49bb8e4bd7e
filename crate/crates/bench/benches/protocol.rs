use std::hint::black_box;

use basecagg_core::masking::generate_mask_package;
use basecagg_core::{
    FieldVector, MdsCode, PrimeField, ProtocolParams, QuantParams, Server, SharingParams, StalenessFn, User, UserId,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field_ops(c: &mut Criterion) {
    let f = PrimeField::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = f.random_vector(4096, &mut rng);
    let b = f.random_vector(4096, &mut rng);
    let w = f.random(&mut rng);
    c.bench_function("field/axpy_4096", |bench| {
        bench.iter(|| {
            let mut acc = a.clone();
            f.axpy(&mut acc, w, &b).unwrap();
            black_box(acc)
        })
    });
    c.bench_function("field/inv", |bench| bench.iter(|| f.inv(black_box(w))));
}

fn mds(c: &mut Criterion) {
    let f = PrimeField::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("mds");
    for &(n, u) in &[(20usize, 10usize), (100, 40)] {
        let code = MdsCode::new(f, n, u).unwrap();
        let parts: Vec<FieldVector> = (0..u).map(|_| f.random_vector(64, &mut rng)).collect();
        let shares = code.encode_all(&parts).unwrap();
        let picked: Vec<(u64, FieldVector)> = (0..u).map(|j| (j as u64 + 1, shares[j].clone())).collect();
        group.bench_with_input(BenchmarkId::new("encode_all", format!("{n}x{u}")), &parts, |bench, p| {
            bench.iter(|| code.encode_all(p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decode", format!("{n}x{u}")), &picked, |bench, s| {
            bench.iter(|| code.decode(s).unwrap())
        });
    }
    group.finish();
}

fn sharing_params() -> SharingParams {
    SharingParams {
        users: 100,
        dropouts: 10,
        privacy: 10,
        survivors: 50,
    }
}

fn mask_package(c: &mut Criterion) {
    let f = PrimeField::default();
    let sp = sharing_params();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    c.bench_function("mask/package_d1000_n100", |bench| {
        bench.iter(|| generate_mask_package(&f, UserId(0), 0, 1000, &sp, &mut rng).unwrap())
    });
}

fn protocol_round(c: &mut Criterion) {
    let f = PrimeField::default();
    let params = ProtocolParams {
        field: f,
        sharing: sharing_params(),
        buffer_size: 10,
        eta_l: 0.01,
        eta_g: 1.0,
        local_steps: 1,
        quant: QuantParams::default(),
        staleness: StalenessFn::default(),
        tau_max: 10,
        wrap_guard: true,
    };
    let dim = 200;
    let delta: Vec<f64> = (0..dim).map(|i| ((i as f64) * 0.37).sin() * 0.01).collect();
    c.bench_function("protocol/round_n100_k10_d200", |bench| {
        bench.iter(|| {
            let mut server = Server::new(params, vec![0.0; dim], 7).unwrap();
            let mut users: Vec<User> = (0..100).map(|i| User::new(UserId(i), f, 7)).collect();
            for i in 0..10usize {
                let shares = users[i].download(0, dim, &params).unwrap().shares().to_vec();
                for (j, s) in shares.into_iter().enumerate() {
                    users[j].receive_share(UserId(i as u32), 0, s).unwrap();
                    server.record_share(UserId(i as u32), 0, UserId(j as u32));
                }
                let up = users[i].upload(0, &delta, &params).unwrap();
                server.receive(up.update).unwrap();
            }
            let req = server.pending_request().unwrap().clone();
            let responses: Vec<(UserId, FieldVector)> =
                users[..50].iter().map(|u| (u.id(), u.respond_recovery(&req).unwrap())).collect();
            black_box(server.finalize(&responses).unwrap())
        })
    });
}

criterion_group!(benches, field_ops, mds, mask_package, protocol_round);
criterion_main!(benches);

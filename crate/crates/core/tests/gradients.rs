use basecagg_core::sim::{grad_oracle, Model, Samples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn samples(n: usize, features: usize, seed: u64) -> Samples {
    Samples::gaussian_mixture(n, features, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_params(model: &Model, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..model.num_params()).map(|_| rng.gen_range(-0.8..0.8)).collect()
}

fn check_finite_differences(model: Model) {
    let data = samples(30, 4, 1);
    let rows: Vec<usize> = (0..data.len()).collect();
    let lambda = 0.01;
    for seed in 0..5 {
        let p = random_params(&model, seed);
        let (_, g) = model.loss_grad(&p, &data, &rows, lambda);
        let h = 1e-5;
        for k in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (model.loss_grad(&hi, &data, &rows, lambda).0 - model.loss_grad(&lo, &data, &rows, lambda).0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (g[k].abs() + 1e-3), "coordinate {k}: fd {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn logreg_gradient_matches_finite_differences() {
    check_finite_differences(Model::Logreg { features: 4 });
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    check_finite_differences(Model::Mlp { features: 4, hidden: 3 });
}

#[test]
fn regularizer_alone_gives_lambda_x() {
    let data = samples(5, 3, 2);
    for model in [Model::Logreg { features: 3 }, Model::Mlp { features: 3, hidden: 2 }] {
        let p = random_params(&model, 9);
        let (loss, g) = model.loss_grad(&p, &data, &[], 0.3);
        for (gi, pi) in g.iter().zip(&p) {
            assert!((gi - 0.3 * pi).abs() < 1e-15);
        }
        let sq: f64 = p.iter().map(|x| x * x).sum();
        assert!((loss - 0.15 * sq).abs() < 1e-12);
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

#[test]
fn minibatch_gradient_is_unbiased_over_all_batches() {
    let data = samples(12, 3, 3);
    let model = Model::Logreg { features: 3 };
    let p = random_params(&model, 4);
    let rows: Vec<usize> = (0..12).collect();
    let (_, full) = model.loss_grad(&p, &data, &rows, 0.05);
    for b in [1, 4, 7] {
        let all = subsets(12, b);
        let mut mean = vec![0.0; full.len()];
        for s in &all {
            let (_, g) = model.loss_grad(&p, &data, s, 0.05);
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / all.len() as f64;
            }
        }
        for (m, f) in mean.iter().zip(&full) {
            assert!((m - f).abs() < 1e-12, "batch {b}: {m} vs {f}");
        }
    }

    // The oracle only ever returns the gradient of one of those batches.
    let batches: Vec<Vec<f64>> = subsets(12, 4).iter().map(|s| model.loss_grad(&p, &data, s, 0.05).1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let g = grad_oracle(&model, &p, &data, &rows, 4, 0.05, &mut rng);
        assert!(batches.iter().any(|b| b.iter().zip(&g).all(|(x, y)| (x - y).abs() < 1e-12)));
    }
}

#[test]
fn trained_logreg_beats_chance() {
    let data = samples(2000, 5, 6);
    let model = Model::Logreg { features: 5 };
    let mut p = vec![0.0; model.num_params()];
    let rows: Vec<usize> = (0..data.len()).collect();
    for _ in 0..200 {
        let (_, g) = model.loss_grad(&p, &data, &rows, 0.0);
        for (x, gi) in p.iter_mut().zip(&g) {
            *x -= 0.5 * gi;
        }
    }
    // Bayes accuracy for unit-variance classes two apart is Phi(1) ~ 0.841.
    assert!(model.accuracy(&p, &data) > 0.8);
}

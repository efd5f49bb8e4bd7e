//! Differentiable models over flat parameter vectors.
//!
//! The objective on a set of rows is the mean cross-entropy plus
//! `lambda / 2 * ||params||^2`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ModelKind, ModelSection};
use super::data::Samples;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    /// Weights then bias.
    Logreg { features: usize },
    /// `tanh` hidden layer, sigmoid output. Layout: `W1` (hidden x features,
    /// row-major), `b1`, `w2`, `b2`.
    Mlp { features: usize, hidden: usize },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Model {
    pub fn from_section(section: &ModelSection, features: usize) -> Self {
        match section.kind {
            ModelKind::Logreg => Model::Logreg { features },
            ModelKind::Mlp => Model::Mlp {
                features,
                hidden: section.hidden,
            },
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Model::Logreg { features } => features + 1,
            Model::Mlp { features, hidden } => hidden * features + 2 * hidden + 1,
        }
    }

    /// Logistic regression starts at zero; the MLP needs broken symmetry.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            Model::Logreg { .. } => vec![0.0; self.num_params()],
            Model::Mlp { features, hidden } => {
                let mut p = vec![0.0; self.num_params()];
                let s1 = 1.0 / (features as f64).sqrt();
                for w in &mut p[..hidden * features] {
                    *w = s1 * rng.sample::<f64, _>(StandardNormal);
                }
                let s2 = 1.0 / (hidden as f64).sqrt();
                let off = hidden * features + hidden;
                for w in &mut p[off..off + hidden] {
                    *w = s2 * rng.sample::<f64, _>(StandardNormal);
                }
                p
            }
        }
    }

    /// Pre-sigmoid output for one row. `hidden_out` receives the hidden
    /// activations for the MLP.
    fn logit(&self, params: &[f64], x: &[f64], hidden_out: &mut Vec<f64>) -> f64 {
        match *self {
            Model::Logreg { features } => {
                params[..features].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[features]
            }
            Model::Mlp { features, hidden } => {
                let (w1, rest) = params.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                hidden_out.clear();
                let mut z = b2[0];
                for h in 0..hidden {
                    let row = &w1[h * features..(h + 1) * features];
                    let a = (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[h]).tanh();
                    hidden_out.push(a);
                    z += w2[h] * a;
                }
                z
            }
        }
    }

    pub fn predict_prob(&self, params: &[f64], x: &[f64]) -> f64 {
        sigmoid(self.logit(params, x, &mut Vec::new()))
    }

    /// Objective and gradient over `rows` of `data`.
    pub fn loss_grad(&self, params: &[f64], data: &Samples, rows: &[usize], lambda: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut hidden_act = Vec::new();
        for &i in rows {
            let x = data.row(i);
            let y = data.label(i) as f64;
            let z = self.logit(params, x, &mut hidden_act);
            // Cross-entropy in logit form: softplus(z) - y z.
            loss += softplus(z) - y * z;
            let dz = sigmoid(z) - y;
            match *self {
                Model::Logreg { features } => {
                    for (g, v) in grad[..features].iter_mut().zip(x) {
                        *g += dz * v;
                    }
                    grad[features] += dz;
                }
                Model::Mlp { features, hidden } => {
                    let off_b1 = hidden * features;
                    let off_w2 = off_b1 + hidden;
                    let off_b2 = off_w2 + hidden;
                    for h in 0..hidden {
                        let a = hidden_act[h];
                        grad[off_w2 + h] += dz * a;
                        let dpre = dz * params[off_w2 + h] * (1.0 - a * a);
                        grad[off_b1 + h] += dpre;
                        for (g, v) in grad[h * features..(h + 1) * features].iter_mut().zip(x) {
                            *g += dpre * v;
                        }
                    }
                    grad[off_b2] += dz;
                }
            }
        }
        let n = rows.len().max(1) as f64;
        let mut sq = 0.0;
        for (g, p) in grad.iter_mut().zip(params) {
            *g = *g / n + lambda * p;
            sq += p * p;
        }
        (loss / n + 0.5 * lambda * sq, grad)
    }

    pub fn loss(&self, params: &[f64], data: &Samples, lambda: f64) -> f64 {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.loss_grad(params, data, &rows, lambda).0
    }

    pub fn accuracy(&self, params: &[f64], data: &Samples) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut hidden_act = Vec::new();
        let correct = (0..data.len())
            .filter(|&i| {
                let z = self.logit(params, data.row(i), &mut hidden_act);
                (z > 0.0) == (data.label(i) == 1)
            })
            .count();
        correct as f64 / data.len() as f64
    }
}

/// Minibatch gradient: `batch` rows drawn without replacement from `rows`
/// (all of them when `rows` is no larger than `batch`).
pub fn grad_oracle<R: Rng + ?Sized>(
    model: &Model,
    params: &[f64],
    data: &Samples,
    rows: &[usize],
    batch: usize,
    lambda: f64,
    rng: &mut R,
) -> Vec<f64> {
    if rows.len() <= batch {
        return model.loss_grad(params, data, rows, lambda).1;
    }
    let picked: Vec<usize> = rand::seq::index::sample(rng, rows.len(), batch).iter().map(|k| rows[k]).collect();
    model.loss_grad(params, data, &picked, lambda).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn data() -> Samples {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        Samples::gaussian_mixture(12, 3, 2.0, &mut rng)
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(softplus(800.0).is_finite() && softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logreg_zero_params_loss_is_ln2() {
        let d = data();
        let m = Model::Logreg { features: 3 };
        let p = vec![0.0; 4];
        assert!((m.loss(&p, &d, 0.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mlp_param_count() {
        let m = Model::Mlp { features: 3, hidden: 4 };
        assert_eq!(m.num_params(), 12 + 8 + 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(m.init(&mut rng).len(), 21);
    }

    #[test]
    fn oracle_uses_everything_when_batch_covers_rows() {
        let d = data();
        let m = Model::Logreg { features: 3 };
        let p = vec![0.1, -0.2, 0.3, 0.05];
        let rows: Vec<usize> = (0..d.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(grad_oracle(&m, &p, &d, &rows, 50, 0.01, &mut rng), m.loss_grad(&p, &d, &rows, 0.01).1);
    }
}

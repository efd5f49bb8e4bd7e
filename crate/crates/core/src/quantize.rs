//! Moving real-valued updates and staleness weights in and out of `F_q`.
//!
//! A real `x` is stochastically rounded to a multiple of `1/c`, scaled to the
//! integer `c * Q_c(x)`, and embedded with the two's-complement map
//! `x -> x` (x >= 0), `x -> q + x` (x < 0). The inverse map splits the field at
//! `(q-1)/2`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldVector, PrimeField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("non-finite input at coordinate {index}")]
    NonFinite { index: usize },
    #[error("quantized value {value} at coordinate {index} would wrap around the field")]
    OutOfRange { index: usize, value: i128 },
    #[error("quantization level must be at least 1")]
    InvalidLevel,
    #[error("aggregate staleness weight is zero")]
    ZeroWeightSum,
}

/// Quantization levels for local updates (`c_l`) and staleness weights (`c_g`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantParams {
    pub c_l: u64,
    pub c_g: u64,
}

impl Default for QuantParams {
    fn default() -> Self {
        Self {
            c_l: 1 << 16,
            c_g: 1 << 6,
        }
    }
}

impl QuantParams {
    pub fn new(c_l: u64, c_g: u64) -> Result<Self, QuantError> {
        let p = Self { c_l, c_g };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if self.c_l == 0 || self.c_g == 0 {
            return Err(QuantError::InvalidLevel);
        }
        Ok(())
    }
}

/// Staleness compensation `s(tau)` with `s(0) = 1`, nonincreasing in `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StalenessFn {
    Constant,
    /// `(1 + tau)^(-alpha)`
    Poly { alpha: f64 },
}

impl Default for StalenessFn {
    fn default() -> Self {
        StalenessFn::Poly { alpha: 1.0 }
    }
}

impl StalenessFn {
    pub fn weight(&self, tau: u64) -> f64 {
        match *self {
            StalenessFn::Constant => 1.0,
            StalenessFn::Poly { alpha } => {
                if tau == 0 {
                    1.0
                } else {
                    (1.0 + tau as f64).powf(-alpha)
                }
            }
        }
    }
}

pub fn staleness_weight(s: &StalenessFn, tau: u64) -> f64 {
    s.weight(tau)
}

const SCALED_LIMIT: f64 = (1u64 << 62) as f64;

/// Returns the integer `c * Q_c(x)`: `floor(cx)` or `floor(cx) + 1`, the latter
/// with probability `cx - floor(cx)`. Exactly one uniform draw is consumed.
pub fn stochastic_round_scaled<R: Rng + ?Sized>(x: f64, c: u64, rng: &mut R) -> Result<i64, QuantError> {
    if c == 0 {
        return Err(QuantError::InvalidLevel);
    }
    if !x.is_finite() {
        return Err(QuantError::NonFinite { index: 0 });
    }
    let cx = c as f64 * x;
    let lo = cx.floor();
    if lo.abs() >= SCALED_LIMIT {
        return Err(QuantError::OutOfRange {
            index: 0,
            value: lo as i128,
        });
    }
    let frac = cx - lo;
    let u: f64 = rng.gen();
    Ok(lo as i64 + i64::from(u < frac))
}

/// `Q_c(x)`: an unbiased rounding of `x` onto the grid `Z / c`.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, c: u64, rng: &mut R) -> Result<f64, QuantError> {
    Ok(stochastic_round_scaled(x, c, rng)? as f64 / c as f64)
}

/// `(q - 1) / 2`, the split point of the two's-complement embedding.
#[inline]
pub fn half_range(field: &PrimeField) -> u64 {
    (field.modulus() - 1) / 2
}

/// Two's-complement embedding; rejects `|x| >= (q-1)/2`.
pub fn map_to_field(field: &PrimeField, x: i64) -> Result<FieldElement, QuantError> {
    if x.unsigned_abs() >= half_range(field) {
        return Err(QuantError::OutOfRange {
            index: 0,
            value: x as i128,
        });
    }
    Ok(field.elem_i128(x as i128))
}

/// Embedding without the range check; out-of-range values wrap mod `q`.
pub fn map_to_field_wrapping(field: &PrimeField, x: i64) -> FieldElement {
    field.elem_i128(x as i128)
}

pub fn demap_from_field(field: &PrimeField, y: FieldElement) -> i64 {
    if y.value() < half_range(field) {
        y.value() as i64
    } else {
        y.value() as i64 - field.modulus() as i64
    }
}

/// Elementwise `c * Q_c(delta_k)` as integers.
pub fn quantize_scaled<R: Rng + ?Sized>(delta: &[f64], c: u64, rng: &mut R) -> Result<Vec<i64>, QuantError> {
    delta
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            stochastic_round_scaled(x, c, rng).map_err(|e| match e {
                QuantError::NonFinite { .. } => QuantError::NonFinite { index },
                QuantError::OutOfRange { value, .. } => QuantError::OutOfRange { index, value },
                other => other,
            })
        })
        .collect()
}

pub fn ints_to_field(field: &PrimeField, ints: &[i64]) -> Result<FieldVector, QuantError> {
    ints.iter()
        .enumerate()
        .map(|(index, &v)| {
            map_to_field(field, v).map_err(|_| QuantError::OutOfRange {
                index,
                value: v as i128,
            })
        })
        .collect()
}

pub fn ints_to_field_wrapping(field: &PrimeField, ints: &[i64]) -> FieldVector {
    ints.iter().map(|&v| map_to_field_wrapping(field, v)).collect()
}

/// `phi(c_l * Q_{c_l}(delta))`, elementwise.
pub fn quantize_update<R: Rng + ?Sized>(
    field: &PrimeField,
    delta: &[f64],
    params: &QuantParams,
    rng: &mut R,
) -> Result<FieldVector, QuantError> {
    let ints = quantize_scaled(delta, params.c_l, rng)?;
    ints_to_field(field, &ints)
}

/// Checks that a weighted sum of `buffer_size` vectors with weights at most
/// `c_g` cannot leave `(-(q-1)/2, (q-1)/2)`, given this vector's entries.
pub fn check_wrap_guard(field: &PrimeField, ints: &[i64], buffer_size: usize, c_g: u64) -> Result<(), QuantError> {
    let half = half_range(field) as u128;
    let factor = buffer_size as u128 * c_g as u128;
    for (index, &v) in ints.iter().enumerate() {
        if v.unsigned_abs() as u128 * factor >= half {
            return Err(QuantError::OutOfRange {
                index,
                value: v as i128,
            });
        }
    }
    Ok(())
}

/// `s_bar(tau) = c_g * Q_{c_g}(s(tau))` as a field element in `[0, c_g]`.
pub fn quantized_staleness<R: Rng + ?Sized>(
    field: &PrimeField,
    s: &StalenessFn,
    tau: u64,
    c_g: u64,
    rng: &mut R,
) -> Result<FieldElement, QuantError> {
    let v = stochastic_round_scaled(s.weight(tau), c_g, rng)?;
    map_to_field(field, v)
}

/// Divides the demapped aggregate by `c_l * demap(weight_sum)`.
///
/// `weight_sum` is the field sum of the quantized staleness weights, so it
/// already carries the `c_g` factor that the numerator picked up.
pub fn dequantize_aggregate(
    field: &PrimeField,
    agg: &[FieldElement],
    weight_sum: FieldElement,
    params: &QuantParams,
) -> Result<Vec<f64>, QuantError> {
    let w = demap_from_field(field, weight_sum);
    if w == 0 {
        return Err(QuantError::ZeroWeightSum);
    }
    let denom = params.c_l as f64 * w as f64;
    Ok(agg.iter().map(|&y| demap_from_field(field, y) as f64 / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DEFAULT_MODULUS;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn round_exact_multiple_is_deterministic() {
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(stochastic_round(0.25, 4, &mut r).unwrap(), 0.25);
        }
    }

    fn tally(x: f64, c: u64, m: usize) -> std::collections::BTreeMap<i64, usize> {
        let mut r = rng(2);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..m {
            *counts.entry(stochastic_round_scaled(x, c, &mut r).unwrap()).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn round_positive_bracketing_probabilities() {
        let m = 100_000;
        let counts = tally(0.3, 4, m);
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        let p_up = counts[&2] as f64 / m as f64;
        // 5 sigma on a Bernoulli(0.2)
        assert!((p_up - 0.2).abs() < 5.0 * (0.2f64 * 0.8 / m as f64).sqrt(), "{p_up}");
        let mean = (counts[&1] + 2 * counts[&2]) as f64 / (4 * m) as f64;
        assert!((mean - 0.3).abs() < 3.0 * (0.16f64 / 16.0 / m as f64).sqrt());
    }

    #[test]
    fn round_negative_uses_mathematical_floor() {
        let m = 100_000;
        let counts = tally(-0.3, 4, m);
        // floor(-1.2) = -2: -0.5 w.p. 0.2, -0.25 w.p. 0.8
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![-2, -1]);
        let p_low = counts[&-2] as f64 / m as f64;
        assert!((p_low - 0.2).abs() < 5.0 * (0.16f64 / m as f64).sqrt(), "{p_low}");
        let mean = (-2 * counts[&-2] as i64 - counts[&-1] as i64) as f64 / (4 * m) as f64;
        assert!((mean + 0.3).abs() < 3.0 * (0.16f64 / 16.0 / m as f64).sqrt());
    }

    #[test]
    fn round_rejects_non_finite() {
        let mut r = rng(3);
        assert_eq!(stochastic_round(f64::NAN, 4, &mut r), Err(QuantError::NonFinite { index: 0 }));
        assert_eq!(stochastic_round(f64::INFINITY, 4, &mut r), Err(QuantError::NonFinite { index: 0 }));
        assert_eq!(stochastic_round(1.0, 0, &mut r), Err(QuantError::InvalidLevel));
        let err = quantize_scaled(&[0.0, f64::NAN], 4, &mut r).unwrap_err();
        assert_eq!(err, QuantError::NonFinite { index: 1 });
    }

    #[test]
    fn map_examples() {
        let f = PrimeField::default();
        assert_eq!(map_to_field(&f, 0).unwrap().value(), 0);
        assert_eq!(map_to_field(&f, -3).unwrap().value(), 4_294_967_288);
        assert_eq!(map_to_field(&f, 5).unwrap().value(), 5);
        assert_eq!(demap_from_field(&f, FieldElement::ZERO), 0);
        assert_eq!(demap_from_field(&f, f.elem(4_294_967_288)), -3);
        let half = half_range(&f) as i64;
        assert!(map_to_field(&f, half).is_err());
        assert!(map_to_field(&f, -half).is_err());
        assert!(map_to_field(&f, half - 1).is_ok());
    }

    #[test]
    fn quantize_update_examples() {
        let f = PrimeField::default();
        let params = QuantParams { c_l: 4, c_g: 64 };
        let mut r = rng(4);
        assert!(quantize_update(&f, &[0.0; 5], &params, &mut r).unwrap().is_zero());
        let v = quantize_update(&f, &[0.25, -0.25], &params, &mut r).unwrap();
        assert_eq!(v.values().collect::<Vec<_>>(), vec![1, DEFAULT_MODULUS - 1]);
    }

    #[test]
    fn quantize_update_reports_offending_coordinate() {
        let f = PrimeField::new(11).unwrap();
        let params = QuantParams { c_l: 4, c_g: 1 };
        let err = quantize_update(&f, &[0.25, 3.0], &params, &mut rng(5)).unwrap_err();
        assert_eq!(err, QuantError::OutOfRange { index: 1, value: 12 });
    }

    #[test]
    fn quantize_update_is_unbiased() {
        let f = PrimeField::default();
        let params = QuantParams { c_l: 16, c_g: 64 };
        let delta = [0.013, -0.4471, 0.5, -0.031_25 * 0.7];
        let trials = 10_000;
        let mut r = rng(6);
        let mut sums = [0i64; 4];
        for _ in 0..trials {
            let v = quantize_update(&f, &delta, &params, &mut r).unwrap();
            for (s, &e) in sums.iter_mut().zip(v.iter()) {
                *s += demap_from_field(&f, e);
            }
        }
        for (k, &d) in delta.iter().enumerate() {
            let mean = sums[k] as f64 / 16.0 / trials as f64;
            let sigma = (0.25 / 256.0 / trials as f64).sqrt();
            assert!((mean - d).abs() <= 3.0 * sigma, "coord {k}: {mean} vs {d}");
        }
    }

    #[test]
    fn staleness_examples() {
        let poly = StalenessFn::Poly { alpha: 1.0 };
        for s in [StalenessFn::Constant, poly, StalenessFn::Poly { alpha: 2.5 }] {
            assert_eq!(s.weight(0), 1.0);
        }
        assert_eq!(poly.weight(1), 0.5);
        assert_eq!(poly.weight(3), 0.25);
        assert_eq!(StalenessFn::Constant.weight(7), 1.0);
        let mut prev = 1.0;
        for tau in 1..50 {
            let w = StalenessFn::Poly { alpha: 0.5 }.weight(tau);
            assert!(w <= prev);
            prev = w;
        }
    }

    #[test]
    fn quantized_staleness_examples() {
        let f = PrimeField::default();
        let poly = StalenessFn::Poly { alpha: 1.0 };
        let mut r = rng(7);
        assert_eq!(quantized_staleness(&f, &poly, 0, 64, &mut r).unwrap().value(), 64);
        assert_eq!(quantized_staleness(&f, &StalenessFn::Constant, 9, 64, &mut r).unwrap().value(), 64);
        assert_eq!(quantized_staleness(&f, &poly, 1, 64, &mut r).unwrap().value(), 32);
        let m = 60_000;
        let mut hi = 0;
        for _ in 0..m {
            match quantized_staleness(&f, &poly, 2, 64, &mut r).unwrap().value() {
                21 => {}
                22 => hi += 1,
                other => panic!("unexpected {other}"),
            }
        }
        let p = hi as f64 / m as f64;
        assert!((p - 1.0 / 3.0).abs() < 5.0 * (2.0f64 / 9.0 / m as f64).sqrt(), "{p}");
    }

    #[test]
    fn dequantize_examples() {
        let f = PrimeField::default();
        let params = QuantParams { c_l: 4, c_g: 64 };
        let out = dequantize_aggregate(&f, &FieldVector::zeros(3), f.elem(64), &params).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        // single member at tau = 0: weight 64 times quantized value 1
        let agg = [f.elem(64)];
        assert_eq!(dequantize_aggregate(&f, &agg, f.elem(64), &params).unwrap(), vec![0.25]);
        assert_eq!(
            dequantize_aggregate(&f, &agg, FieldElement::ZERO, &params),
            Err(QuantError::ZeroWeightSum)
        );
    }

    #[test]
    fn wrap_guard_bound() {
        let f = PrimeField::new(16_777_213).unwrap();
        let half = half_range(&f) as i64;
        let limit = (half - 1) / (10 * 64);
        assert!(check_wrap_guard(&f, &[limit, -limit], 10, 64).is_ok());
        assert_eq!(
            check_wrap_guard(&f, &[0, limit + 1], 10, 64),
            Err(QuantError::OutOfRange { index: 1, value: (limit + 1) as i128 })
        );
    }

    proptest! {
        #[test]
        fn demap_inverts_map(x in -(DEFAULT_MODULUS as i64 - 1) / 2 + 1..(DEFAULT_MODULUS as i64 - 1) / 2) {
            let f = PrimeField::default();
            prop_assert_eq!(demap_from_field(&f, map_to_field(&f, x).unwrap()), x);
        }

        #[test]
        fn round_hits_a_bracketing_grid_point(x in -1.0e3f64..1.0e3, c in 1u64..(1 << 20), seed in any::<u64>()) {
            let mut r = rng(seed);
            let v = stochastic_round_scaled(x, c, &mut r).unwrap();
            let lo = (c as f64 * x).floor() as i64;
            prop_assert!(v == lo || v == lo + 1);
        }

        /// Field-domain weighted sums demap to the integer-domain sum whenever
        /// the wrap guard holds; i128 is the reference.
        #[test]
        fn field_sum_matches_integer_sum(
            vals in proptest::collection::vec(-3_000_000i64..3_000_000, 1..10),
            weights in proptest::collection::vec(0u64..=64, 10),
        ) {
            let f = PrimeField::default();
            prop_assume!(check_wrap_guard(&f, &vals, vals.len(), 64).is_ok());
            let mut acc = FieldElement::ZERO;
            let mut reference: i128 = 0;
            for (&v, &w) in vals.iter().zip(&weights) {
                acc = f.add(acc, f.mul(f.elem(w), map_to_field(&f, v).unwrap()));
                reference += w as i128 * v as i128;
            }
            prop_assert_eq!(demap_from_field(&f, acc) as i128, reference);
        }
    }
}

//! Self-check batteries behind `basecagg verify`.
//!
//! Each battery returns named properties with a pass flag and a short detail
//! line. The exactness battery replays the users' and server's rounding
//! streams with an independent integer oracle and can be asked to corrupt one
//! stored share, which must make it fail.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::field::{FieldElement, FieldVector, MdsCode, PrimeField};
use crate::masking::pairwise::PairwiseMasker;
use crate::masking::{
    aggregate_encoded_shares, generate_mask_package, recover_aggregate_mask, RecoveryMember, RecoveryRequest,
    SharingParams, ShareStore, UserId,
};
use crate::protocol::{ProtocolError, ProtocolParams, Server, User};
use crate::quantize::{QuantParams, StalenessFn};
use crate::rng::{self, Stream, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub exactness_rounds: usize,
    pub quant_samples: usize,
    pub negative_cases: usize,
    /// Corrupt one stored share during the exactness battery.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            exactness_rounds: 1000,
            quant_samples: 100_000,
            negative_cases: 100,
            inject_fault: false,
        }
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyResult> {
    let mut out = exactness_battery(opts.seed, opts.exactness_rounds, opts.inject_fault);
    out.extend(privacy_battery());
    out.extend(quantization_battery(opts.seed, opts.quant_samples));
    out.extend(mds_battery(opts.seed));
    out.push(negative_control(opts.seed, opts.negative_cases));
    out
}

/// Independent rounding: `floor(cx) + [u < frac]`, one uniform per value.
fn oracle_round(x: f64, c: u64, rng: &mut StreamRng) -> i64 {
    let cx = c as f64 * x;
    let lo = cx.floor();
    let u: f64 = rng.gen();
    lo as i64 + i64::from(u < cx - lo)
}

fn i128_to_field(field: &PrimeField, v: i128) -> FieldElement {
    field.elem(v.rem_euclid(field.modulus() as i128) as u64)
}

#[derive(Default)]
struct ExactStats {
    rounds: usize,
    field_mismatch: usize,
    max_rel: f64,
    first_mismatch: Option<String>,
}

fn exactness_trial(trial: u64, rng: &mut StreamRng, fault: &mut bool, stats: &mut ExactStats) -> Result<(), ProtocolError> {
    let n = rng.gen_range(1..=20usize);
    let dropouts = rng.gen_range(0..n);
    let survivors = rng.gen_range(1..=n - dropouts);
    let privacy = rng.gen_range(0..survivors);
    let k = rng.gen_range(1..=n);
    let dim = rng.gen_range(1..=12usize);
    let tau_max = rng.gen_range(0..=4u64);
    let c_l = *[1u64 << 4, 1 << 8, 1 << 16].choose(rng).expect("nonempty");
    let c_g = *[1u64, 1 << 2, 1 << 6].choose(rng).expect("nonempty");
    let staleness = match rng.gen_range(0..3) {
        0 => StalenessFn::Constant,
        1 => StalenessFn::Poly { alpha: 0.5 },
        _ => StalenessFn::Poly { alpha: 1.0 },
    };
    let field = PrimeField::default();
    let params = ProtocolParams {
        field,
        sharing: SharingParams {
            users: n,
            dropouts,
            privacy,
            survivors,
        },
        buffer_size: k,
        eta_l: 0.01,
        eta_g: 1.0,
        local_steps: 1,
        quant: QuantParams { c_l, c_g },
        staleness,
        tau_max,
        wrap_guard: true,
    };
    let mut server = Server::new(params, vec![0.0; dim], trial)?;
    let mut users: Vec<User> = (0..n).map(|u| User::new(UserId(u as u32), field, trial)).collect();
    let mut quant_oracle: Vec<StreamRng> = (0..n).map(|u| rng::stream(trial, Stream::Quantize, &[u as u64])).collect();
    let mut weight_oracle = rng::stream(trial, Stream::ServerStaleness, &[]);
    let mut used: BTreeSet<(usize, u64)> = BTreeSet::new();

    for round in 0..rng.gen_range(1..=3u64) {
        let lo = round.saturating_sub(tau_max);
        let pairs: Vec<(usize, u64)> = (0..n)
            .flat_map(|u| (lo..=round).map(move |t| (u, t)))
            .filter(|p| !used.contains(p))
            .collect();
        let picked = rand::seq::index::sample(rng, pairs.len(), k);
        let mut ints: Vec<Vec<i64>> = Vec::with_capacity(k);
        let mut req = None;
        for idx in picked.iter() {
            let (u, t_i) = pairs[idx];
            used.insert((u, t_i));
            let delta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let owner = UserId(u as u32);
            let shares = users[u].download(t_i, dim, &params)?.shares().to_vec();
            for (j, s) in shares.into_iter().enumerate() {
                users[j].receive_share(owner, t_i, s)?;
                server.record_share(owner, t_i, UserId(j as u32));
            }
            let out = users[u].upload(t_i, &delta, &params)?;
            ints.push(delta.iter().map(|&x| oracle_round(x, c_l, &mut quant_oracle[u])).collect());
            req = server.receive(out.update)?;
        }
        let req = req.ok_or(ProtocolError::NoPendingRequest)?;

        let weights: Vec<i64> = req
            .members
            .iter()
            .map(|m| oracle_round(staleness.weight(round - m.download_round), c_g, &mut weight_oracle))
            .collect();
        let expected: FieldVector = (0..dim)
            .map(|c| {
                let s: i128 = weights.iter().zip(&ints).map(|(&w, v)| w as i128 * v[c] as i128).sum();
                i128_to_field(&field, s)
            })
            .collect();
        let wsum: f64 = weights.iter().map(|&w| w as f64 / c_g as f64).sum();
        let expected_real: Vec<f64> = (0..dim)
            .map(|c| {
                if wsum == 0.0 {
                    return 0.0;
                }
                let num: f64 = weights
                    .iter()
                    .zip(&ints)
                    .map(|(&w, v)| (w as f64 / c_g as f64) * (v[c] as f64 / c_l as f64))
                    .sum();
                num / wsum
            })
            .collect();

        let mut responders: Vec<usize> = (0..n).collect();
        responders.shuffle(rng);
        responders.truncate(n - rng.gen_range(0..=dropouts));
        if *fault {
            if let Some((m, _)) = req.members.iter().zip(&weights).find(|(_, &w)| w != 0) {
                let j = responders[0];
                if let Some(share) = users[j].store_mut().get_mut(m.owner, m.download_round) {
                    share[0] = field.add(share[0], FieldElement::ONE);
                    *fault = false;
                }
            }
        }
        let responses: Vec<(UserId, FieldVector)> = responders
            .iter()
            .map(|&j| Ok((UserId(j as u32), users[j].respond_recovery(&req)?)))
            .collect::<Result<_, ProtocolError>>()?;
        let summary = server.finalize(&responses)?;

        stats.rounds += 1;
        if summary.field_aggregate != expected {
            stats.field_mismatch += 1;
            stats.first_mismatch.get_or_insert_with(|| format!("trial seed {trial:#x}, round {round}"));
        }
        let scale = expected_real.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let err = summary
            .gradient
            .iter()
            .zip(&expected_real)
            .fold(0.0f64, |a, (g, e)| a.max((g - e).abs()));
        let rel = if scale == 0.0 { err } else { err / scale };
        stats.max_rel = stats.max_rel.max(rel);
        for user in &mut users {
            user.evict(server.round(), tau_max);
        }
    }
    Ok(())
}

/// Randomized protocol rounds (N <= 20, random D, U, T, K, staleness and
/// responders) compared with a big-integer plaintext oracle.
pub fn exactness_battery(seed: u64, min_rounds: usize, inject_fault: bool) -> Vec<PropertyResult> {
    let mut rng = rng::stream(seed, Stream::Mask, &[0xE4AC]);
    let mut stats = ExactStats::default();
    let mut fault = inject_fault;
    let mut error = None;
    let mut trial = 0u64;
    while stats.rounds < min_rounds {
        if let Err(e) = exactness_trial(rng::derive_seed(seed, &[trial]), &mut rng, &mut fault, &mut stats) {
            error = Some(format!("trial {trial}: {e}"));
            break;
        }
        trial += 1;
    }
    let field_ok = error.is_none() && stats.field_mismatch == 0 && stats.rounds >= min_rounds;
    let field_detail = match (&error, &stats.first_mismatch) {
        (Some(e), _) => format!("protocol error: {e}"),
        (None, Some(m)) => format!("{} of {} rounds differ, first at {m}", stats.field_mismatch, stats.rounds),
        (None, None) => format!("{} rounds bit-exact", stats.rounds),
    };
    let real_ok = error.is_none() && stats.max_rel <= 1e-12;
    vec![
        PropertyResult::new("exact-field-aggregate", field_ok, field_detail),
        PropertyResult::new(
            "real-domain-gradient",
            real_ok,
            format!("max relative error {:.3e} over {} rounds", stats.max_rel, stats.rounds),
        ),
    ]
}

/// Exhaustive enumeration in `F_11` with N=4, U=3, T=1, d=1. A single
/// colluder together with the server sees the masked upload and its own
/// share; that joint view must not depend on the honest update, and the share
/// alone must not depend on the mask.
pub fn privacy_battery() -> Vec<PropertyResult> {
    let field = PrimeField::new(11).expect("11 is prime");
    let code = MdsCode::new(field, 4, 3).expect("valid code");
    let q = field.modulus();
    let mut independent = true;
    let mut mask_independent = true;
    let mut mi_max = 0.0f64;
    for colluder in 1..=4u64 {
        let mut joint: BTreeMap<(u64, (u64, u64)), u64> = BTreeMap::new();
        let mut by_mask: BTreeMap<(u64, u64), BTreeMap<u64, u64>> = BTreeMap::new();
        for delta in 0..q {
            for z0 in 0..q {
                for z1 in 0..q {
                    for noise in 0..q {
                        let blocks: Vec<FieldVector> = [z0, z1, noise].iter().map(|&v| vec![field.elem(v)].into()).collect();
                        let share = code.encode(&blocks, colluder).expect("valid point")[0].value();
                        let upload = field.add(field.elem(delta), field.elem(z0)).value();
                        *joint.entry((delta, (upload, share))).or_default() += 1;
                        if delta == 0 {
                            *by_mask.entry((z0, z1)).or_default().entry(share).or_default() += 1;
                        }
                    }
                }
            }
        }
        let mut per_delta: BTreeMap<u64, BTreeMap<(u64, u64), u64>> = BTreeMap::new();
        let mut marginal: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        for (&(d, v), &c) in &joint {
            per_delta.entry(d).or_default().insert(v, c);
            *marginal.entry(v).or_default() += c;
        }
        let first = per_delta.values().next().cloned().unwrap_or_default();
        independent &= per_delta.values().all(|h| *h == first);
        let first_mask = by_mask.values().next().cloned().unwrap_or_default();
        mask_independent &= by_mask.values().all(|h| *h == first_mask);

        // Delta uniform: p(d) = 1/q, each d contributes q^3 outcomes.
        let total: u64 = joint.values().sum();
        let per_d = total / q;
        let mut mi = 0.0f64;
        for (&(_, v), &c) in &joint {
            let ratio = (c as u128 * total as u128) as f64 / (per_d as u128 * marginal[&v] as u128) as f64;
            mi += c as f64 / total as f64 * ratio.log2();
        }
        mi_max = mi_max.max(mi.abs());
    }
    vec![
        PropertyResult::new(
            "t-privacy-view-independence",
            independent,
            "F_11, N=4, U=3, T=1: joint view of server and each single colluder enumerated".into(),
        ),
        PropertyResult::new(
            "t-privacy-share-uniform",
            mask_independent,
            "single share distribution identical for all 121 masks".into(),
        ),
        PropertyResult::new("mutual-information-zero", mi_max == 0.0, format!("{mi_max:.1} bits")),
    ]
}

/// Empirical moments of the stochastic rounding at 20 points per level.
pub fn quantization_battery(seed: u64, samples: usize) -> Vec<PropertyResult> {
    let mut unbiased = true;
    let mut bounded = true;
    let mut matches = true;
    let mut worst = String::new();
    let m = samples as f64;
    for (li, &c) in [4u64, 1 << 6, 1 << 16].iter().enumerate() {
        let mut spot = rng::stream(seed, Stream::Quantize, &[0x5B07, li as u64]);
        for p in 0..20u64 {
            let x: f64 = spot.gen_range(-3.0..3.0);
            let mut r = rng::stream(seed, Stream::Quantize, &[0x5A3E, li as u64, p]);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..samples {
                let v = crate::quantize::stochastic_round(x, c, &mut r).expect("finite input");
                sum += v - x;
                sq += (v - x) * (v - x);
            }
            let mean_err = sum / m;
            let var = sq / m - mean_err * mean_err;
            let cf = c as f64;
            let frac = cf * x - (cf * x).floor();
            let exact = (0.25 - (frac - 0.5) * (frac - 0.5)) / (cf * cf);
            let mu4 = exact * (1.0 - 3.0 * frac + 3.0 * frac * frac) / (cf * cf);
            let var_tol = 5.0 * ((mu4 - exact * exact).max(0.0) / m).sqrt() + 1e-15 / (cf * cf);
            let ok_mean = mean_err.abs() <= 4.0 * (exact / m).sqrt() + f64::EPSILON * x.abs().max(1.0);
            let ok_bound = var <= 0.25 / (cf * cf) * 1.05;
            let ok_match = (var - exact).abs() <= var_tol;
            if !(ok_mean && ok_bound && ok_match) && worst.is_empty() {
                worst = format!("c={c} x={x:.6}: mean err {mean_err:.3e}, var {var:.3e}, exact {exact:.3e}");
            }
            unbiased &= ok_mean;
            bounded &= ok_bound;
            matches &= ok_match;
        }
    }
    let detail = |ok: bool| {
        if ok {
            format!("60 points x {samples} draws")
        } else {
            worst.clone()
        }
    };
    vec![
        PropertyResult::new("quantizer-unbiased", unbiased, detail(unbiased)),
        PropertyResult::new("quantizer-variance-bound", bounded, detail(bounded)),
        PropertyResult::new("quantizer-conditional-variance", matches, detail(matches)),
    ]
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn mds_battery(seed: u64) -> Vec<PropertyResult> {
    let field = PrimeField::default();
    let mut rng = rng::stream(seed, Stream::Mask, &[0x3D5]);
    let mut exhaustive_ok = true;
    let mut checked = 0usize;
    for n in 1..=6 {
        for u in 1..=n {
            let code = MdsCode::new(field, n, u).expect("valid");
            let parts: Vec<FieldVector> = (0..u).map(|_| field.random_vector(2, &mut rng)).collect();
            let shares = code.encode_all(&parts).expect("encode");
            for s in subsets(n, u) {
                let picked: Vec<(u64, FieldVector)> = s.iter().map(|&j| (j as u64 + 1, shares[j].clone())).collect();
                exhaustive_ok &= code.decode(&picked).map(|p| p == parts).unwrap_or(false);
                checked += 1;
            }
        }
    }

    let code = MdsCode::new(field, 100, 40).expect("valid");
    let parts: Vec<FieldVector> = (0..40).map(|_| field.random_vector(3, &mut rng)).collect();
    let shares = code.encode_all(&parts).expect("encode");
    let mut sampled_ok = true;
    for _ in 0..20 {
        let idx = rand::seq::index::sample(&mut rng, 100, 40);
        let picked: Vec<(u64, FieldVector)> = idx.iter().map(|j| (j as u64 + 1, shares[j].clone())).collect();
        sampled_ok &= code.decode(&picked).map(|p| p == parts).unwrap_or(false);
    }

    let mut weighted_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..=12usize);
        let u = rng.gen_range(1..=n);
        let t = rng.gen_range(0..u);
        let sp = SharingParams {
            users: n,
            dropouts: n - u,
            privacy: t,
            survivors: u,
        };
        let dim = rng.gen_range(1..=9usize);
        let mut stores: Vec<ShareStore> = (0..n).map(|_| ShareStore::new()).collect();
        let mut members = Vec::new();
        let mut expected = FieldVector::zeros(dim);
        for _ in 0..rng.gen_range(1..=6) {
            let owner = UserId(rng.gen_range(0..n as u32));
            let round = rng.gen_range(0..5u64);
            if stores[0].contains(owner, round) {
                continue;
            }
            let pkg = generate_mask_package(&field, owner, round, dim, &sp, &mut rng).expect("valid");
            for (j, store) in stores.iter_mut().enumerate() {
                store.insert(owner, round, pkg.share_for(UserId(j as u32)).clone()).expect("fresh");
            }
            let weight = field.random(&mut rng);
            let masked: Vec<FieldElement> = pkg.mask()[..dim].to_vec();
            field.axpy(&mut expected, weight, &masked).expect("same length");
            members.push(RecoveryMember {
                owner,
                download_round: round,
                weight,
            });
        }
        let req = RecoveryRequest {
            round: 5,
            c_g: 64,
            members,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let responses: Vec<(u64, FieldVector)> = order[..u]
            .iter()
            .map(|&j| (j as u64 + 1, aggregate_encoded_shares(&field, &stores[j], &req).expect("held")))
            .collect();
        let got = recover_aggregate_mask(&field, &responses, &sp, dim);
        weighted_ok &= got.as_ref() == Ok(&expected);
    }

    vec![
        PropertyResult::new("mds-any-subset", exhaustive_ok, format!("{checked} subsets, N <= 6")),
        PropertyResult::new("mds-sampled-large", sampled_ok, "N=100, U=40, 20 random subsets".into()),
        PropertyResult::new("mds-weighted-share-aggregation", weighted_ok, "50 cross-round buffers".into()),
    ]
}

/// Round-stamped pairwise masks must leave a residue whenever the buffered
/// download rounds differ.
pub fn negative_control(seed: u64, cases: usize) -> PropertyResult {
    let field = PrimeField::default();
    let mut rng = rng::stream(seed, Stream::Pairwise, &[0x9E6]);
    let mut residues = 0;
    for case in 0..cases {
        let masker = PairwiseMasker::new(field, rng::derive_seed(seed, &[case as u64]));
        let k = rng.gen_range(2..=10u32);
        let mut members: Vec<(UserId, u64)> = (0..k).map(|i| (UserId(i), rng.gen_range(0..6u64))).collect();
        if members.iter().all(|m| m.1 == members[0].1) {
            members[0].1 += 1;
        }
        if !masker.residue(&members, 4).is_zero() {
            residues += 1;
        }
    }
    PropertyResult::new(
        "pairwise-mask-residue",
        residues == cases,
        format!("{residues}/{cases} mixed-round buffers left a nonzero residue"),
    )
}

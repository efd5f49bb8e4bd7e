//! Round-stamped pairwise masking, kept only as a negative control.
//!
//! Each pair `(i, j)` with `i < j` derives a vector from a seed bound to a
//! round; `i` adds it and `j` subtracts it. The vectors cancel in a sum only
//! when both members stamped them with the same round, which a buffer mixing
//! download rounds cannot guarantee.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::UserId;
use crate::field::{FieldVector, PrimeField};
use crate::rng::{derive_seed, Stream};

#[derive(Clone, Copy, Debug)]
pub struct PairwiseMasker {
    field: PrimeField,
    seed: u64,
}

impl PairwiseMasker {
    pub fn new(field: PrimeField, seed: u64) -> Self {
        Self { field, seed }
    }

    /// PRG output for the pair seed `a_{lo,hi}^{(round)}`.
    fn pair_vector(&self, lo: UserId, hi: UserId, round: u64, dim: usize) -> FieldVector {
        let s = derive_seed(self.seed, &[Stream::Pairwise as u64, lo.0 as u64, hi.0 as u64, round]);
        self.field.random_vector(dim, &mut ChaCha12Rng::seed_from_u64(s))
    }

    /// `sum_{j > i} PRG(a_ij) - sum_{j < i} PRG(a_ji)`, all seeds stamped `round`.
    pub fn mask(&self, owner: UserId, round: u64, peers: &[UserId], dim: usize) -> FieldVector {
        let f = &self.field;
        let mut acc = FieldVector::zeros(dim);
        for &p in peers {
            if p == owner {
                continue;
            }
            let (lo, hi) = if owner < p { (owner, p) } else { (p, owner) };
            let v = self.pair_vector(lo, hi, round, dim);
            for (a, &x) in acc.iter_mut().zip(v.iter()) {
                *a = if owner < p { f.add(*a, x) } else { f.sub(*a, x) };
            }
        }
        acc
    }

    /// What remains after summing every member's pairwise mask, each member
    /// using its own download round. Zero iff the masks cancelled.
    pub fn residue(&self, members: &[(UserId, u64)], dim: usize) -> FieldVector {
        let peers: Vec<UserId> = members.iter().map(|&(o, _)| o).collect();
        let mut acc = FieldVector::zeros(dim);
        for &(owner, round) in members {
            let m = self.mask(owner, round, &peers, dim);
            for (a, &x) in acc.iter_mut().zip(m.iter()) {
                *a = self.field.add(*a, x);
            }
        }
        acc
    }
}

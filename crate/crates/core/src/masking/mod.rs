//! Mask lifecycle: generation, T-private MDS sharing, per-round share
//! bookkeeping, staleness-weighted share aggregation and one-shot recovery of
//! the aggregate mask.
//!
//! A user downloading the model at round `t_i` draws a uniform mask `z` of
//! padded length `d_pad`, splits it into `U - T` sub-masks, appends `T`
//! uniform noise blocks and hands user `j` the encoding of those `U` blocks at
//! point `j`. Any `T` shares are uniform and independent of `z`; any `U`
//! (weighted-summed) shares decode to the weighted sum of the sub-masks.

pub mod pairwise;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldVector, MdsCode, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("invalid sharing parameters: {0}")]
    InvalidParams(String),
    #[error("no share held for owner {owner} at round {round}")]
    MissingShare { owner: UserId, round: u64 },
    #[error("share for owner {owner} at round {round} already stored")]
    DuplicateShare { owner: UserId, round: u64 },
    #[error("recovery needs {need} distinct responses, got {got}")]
    InsufficientResponses { got: usize, need: usize },
    #[error("recovery request has no members")]
    EmptyRequest,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Zero-based user identity. User `i` evaluates the code at point `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl UserId {
    #[inline]
    pub fn eval_point(self) -> u64 {
        self.0 as u64 + 1
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// `N` users, at most `D` dropouts, `T`-privacy, `U` targeted survivors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingParams {
    pub users: usize,
    pub dropouts: usize,
    pub privacy: usize,
    pub survivors: usize,
}

impl SharingParams {
    /// Requires `N - D >= U > T` and `q > N`.
    pub fn validate(&self, field: &PrimeField) -> Result<(), MaskError> {
        let Self {
            users: n,
            dropouts: d,
            privacy: t,
            survivors: u,
        } = *self;
        if n == 0 {
            return Err(MaskError::InvalidParams("N must be positive".into()));
        }
        if d > n || n - d < u {
            return Err(MaskError::InvalidParams(format!("need N - D >= U, got N={n} D={d} U={u}")));
        }
        if u <= t {
            return Err(MaskError::InvalidParams(format!(
                "need U > T so at least one sub-mask carries data, got U={u} T={t}"
            )));
        }
        if n as u64 >= field.modulus() {
            return Err(MaskError::InvalidParams(format!("field size {} must exceed N={n}", field.modulus())));
        }
        Ok(())
    }

    pub fn data_parts(&self) -> usize {
        self.survivors - self.privacy
    }

    pub fn layout(&self, dim: usize) -> MaskLayout {
        let data_parts = self.data_parts();
        MaskLayout {
            dim,
            data_parts,
            part_len: dim.div_ceil(data_parts),
        }
    }
}

/// How a `dim`-long mask is padded and cut into `U - T` equal sub-masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskLayout {
    pub dim: usize,
    pub data_parts: usize,
    pub part_len: usize,
}

impl MaskLayout {
    pub fn padded_dim(&self) -> usize {
        self.data_parts * self.part_len
    }
}

/// A user's mask for one download round together with its encoded shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPackage {
    pub owner: UserId,
    pub round: u64,
    dim: usize,
    mask: FieldVector,
    partitions: Vec<FieldVector>,
    shares: Vec<FieldVector>,
}

impl MaskPackage {
    /// The full padded mask `z`.
    pub fn mask(&self) -> &FieldVector {
        &self.mask
    }

    /// The first `dim` coordinates of `z`, the part added to an upload.
    pub fn upload_mask(&self) -> &[FieldElement] {
        &self.mask[..self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `U - T` sub-masks followed by `T` noise blocks.
    pub fn partitions(&self) -> &[FieldVector] {
        &self.partitions
    }

    /// `shares()[j]` is destined for the user with evaluation point `j + 1`.
    pub fn shares(&self) -> &[FieldVector] {
        &self.shares
    }

    pub fn share_for(&self, user: UserId) -> &FieldVector {
        &self.shares[user.index()]
    }
}

pub fn generate_mask_package<R: Rng + ?Sized>(
    field: &PrimeField,
    owner: UserId,
    round: u64,
    dim: usize,
    params: &SharingParams,
    rng: &mut R,
) -> Result<MaskPackage, MaskError> {
    params.validate(field)?;
    if dim == 0 {
        return Err(MaskError::InvalidParams("model dimension must be positive".into()));
    }
    if owner.index() >= params.users {
        return Err(MaskError::InvalidParams(format!("owner {owner} outside [0, {})", params.users)));
    }
    let layout = params.layout(dim);
    // Padding coordinates are drawn uniformly like the rest of z.
    let mask = field.random_vector(layout.padded_dim(), rng);
    let mut partitions: Vec<FieldVector> = mask.chunks(layout.part_len).map(|c| c.to_vec().into()).collect();
    for _ in 0..params.privacy {
        partitions.push(field.random_vector(layout.part_len, rng));
    }
    let code = MdsCode::new(*field, params.users, params.survivors)?;
    let shares = code.encode_all(&partitions)?;
    Ok(MaskPackage {
        owner,
        round,
        dim,
        mask,
        partitions,
        shares,
    })
}

/// Shares held by one user, keyed by `(owner, download round)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShareStore {
    entries: BTreeMap<(UserId, u64), FieldVector>,
}

impl ShareStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, owner: UserId, round: u64, share: FieldVector) -> Result<(), MaskError> {
        use std::collections::btree_map::Entry;
        match self.entries.entry((owner, round)) {
            Entry::Occupied(_) => Err(MaskError::DuplicateShare { owner, round }),
            Entry::Vacant(v) => {
                v.insert(share);
                Ok(())
            }
        }
    }

    pub fn get(&self, owner: UserId, round: u64) -> Option<&FieldVector> {
        self.entries.get(&(owner, round))
    }

    pub fn get_mut(&mut self, owner: UserId, round: u64) -> Option<&mut FieldVector> {
        self.entries.get_mut(&(owner, round))
    }

    pub fn contains(&self, owner: UserId, round: u64) -> bool {
        self.entries.contains_key(&(owner, round))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops every share stamped with a round below `cutoff`.
    pub fn evict_before(&mut self, cutoff: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|&(_, round), _| round >= cutoff);
        before - self.entries.len()
    }
}

/// One buffered update: whose mask, which round, and its quantized weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryMember {
    pub owner: UserId,
    pub download_round: u64,
    pub weight: FieldElement,
}

/// Broadcast when the buffer fills. The realized weights travel with the
/// request so every responder combines shares with the server's draws.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryRequest {
    pub round: u64,
    pub c_g: u64,
    pub members: Vec<RecoveryMember>,
}

impl RecoveryRequest {
    pub fn staleness(&self, member: &RecoveryMember) -> u64 {
        self.round - member.download_round
    }

    pub fn weight_sum(&self, field: &PrimeField) -> FieldElement {
        self.members.iter().fold(FieldElement::ZERO, |acc, m| field.add(acc, m.weight))
    }
}

/// `sum_{(i, t_i) in S} w_i * [z~_i^(t_i)]_j` over the shares this user holds.
pub fn aggregate_encoded_shares(
    field: &PrimeField,
    store: &ShareStore,
    req: &RecoveryRequest,
) -> Result<FieldVector, MaskError> {
    let mut acc: Option<FieldVector> = None;
    for m in &req.members {
        let share = store.get(m.owner, m.download_round).ok_or(MaskError::MissingShare {
            owner: m.owner,
            round: m.download_round,
        })?;
        let acc = acc.get_or_insert_with(|| FieldVector::zeros(share.len()));
        field.axpy(acc, m.weight, share)?;
    }
    acc.ok_or(MaskError::EmptyRequest)
}

/// Decodes the first `U` distinct responses, keeps the `U - T` data blocks and
/// truncates the padding, yielding `sum_i w_i * z_i` of length `dim`.
pub fn recover_aggregate_mask(
    field: &PrimeField,
    responses: &[(u64, FieldVector)],
    params: &SharingParams,
    dim: usize,
) -> Result<FieldVector, MaskError> {
    let u = params.survivors;
    let mut seen = BTreeSet::new();
    let picked: Vec<(u64, FieldVector)> = responses
        .iter()
        .filter(|(j, _)| seen.insert(*j))
        .take(u)
        .cloned()
        .collect();
    if picked.len() < u {
        return Err(MaskError::InsufficientResponses {
            got: picked.len(),
            need: u,
        });
    }
    let code = MdsCode::new(*field, params.users, u)?;
    let blocks = code.decode(&picked)?;
    let mut out: Vec<FieldElement> = blocks
        .into_iter()
        .take(params.data_parts())
        .flat_map(FieldVector::into_inner)
        .collect();
    if out.len() < dim {
        return Err(FieldError::DimensionMismatch {
            expected: dim,
            actual: out.len(),
        }
        .into());
    }
    out.truncate(dim);
    Ok(out.into())
}

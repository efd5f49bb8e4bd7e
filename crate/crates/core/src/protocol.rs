//! User and server state machines for buffered asynchronous secure
//! aggregation.
//!
//! Users download the model at some round `t_i`, share a fresh mask for that
//! round, train locally, then upload `phi(c_l * Q(delta)) + z` stamped with
//! `t_i`. The server buffers uploads; once `K` are held it draws quantized
//! staleness weights, asks surviving users for their weighted share sums,
//! decodes the aggregate mask in one shot and applies the global step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldVector, PrimeField};
use crate::masking::{
    aggregate_encoded_shares, generate_mask_package, recover_aggregate_mask, MaskError, MaskPackage,
    RecoveryMember, RecoveryRequest, SharingParams, ShareStore, UserId,
};
use crate::quantize::{
    check_wrap_guard, demap_from_field, dequantize_aggregate, ints_to_field_wrapping, quantize_scaled,
    quantized_staleness, QuantError, QuantParams, StalenessFn,
};
use crate::rng::{self, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),
    #[error("update from {owner} has staleness {staleness} > tau_max {tau_max}")]
    StaleUpdate { owner: UserId, staleness: u64, tau_max: u64 },
    #[error("update from {owner} claims future round {claimed} (server at {current})")]
    FutureRound { owner: UserId, claimed: u64, current: u64 },
    #[error("{owner} has no mask package for round {round}")]
    NoPackage { owner: UserId, round: u64 },
    #[error("{owner} already uploaded for round {round}")]
    AlreadyUploaded { owner: UserId, round: u64 },
    #[error("buffer is frozen awaiting recovery")]
    BufferFrozen,
    #[error("no recovery request is pending")]
    NoPendingRequest,
    #[error("payload length {actual} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub field: PrimeField,
    pub sharing: SharingParams,
    /// `K`
    pub buffer_size: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    /// `E`
    pub local_steps: usize,
    pub quant: QuantParams,
    pub staleness: StalenessFn,
    pub tau_max: u64,
    /// Reject uploads whose weighted buffer sum could wrap around `q`.
    pub wrap_guard: bool,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.sharing.validate(&self.field)?;
        self.quant.validate()?;
        let bad = |m: String| Err(ProtocolError::InvalidParams(m));
        if self.buffer_size == 0 || self.buffer_size > self.sharing.users {
            return bad(format!("buffer size K={} must be in [1, N={}]", self.buffer_size, self.sharing.users));
        }
        if !(self.eta_l > 0.0 && self.eta_l.is_finite() && self.eta_g > 0.0 && self.eta_g.is_finite()) {
            return bad("learning rates must be positive and finite".into());
        }
        if self.local_steps == 0 {
            return bad("local steps E must be at least 1".into());
        }
        if let StalenessFn::Poly { alpha } = self.staleness {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return bad(format!("staleness exponent {alpha} must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Step-size condition `eta_l * eta_g * K * E <= 1 / L`.
    pub fn satisfies_step_condition(&self, smoothness: f64) -> bool {
        self.eta_l * self.eta_g * self.buffer_size as f64 * self.local_steps as f64 <= 1.0 / smoothness
    }
}

/// `{payload, t_i}` as sent to the server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedUpdate {
    pub owner: UserId,
    pub download_round: u64,
    pub payload: FieldVector,
}

pub const MESSAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    DownloadModel { round: u64, model: Vec<f64> },
    Share { owner: UserId, round: u64, share: FieldVector },
    Upload(MaskedUpdate),
    RecoveryRequest(RecoveryRequest),
    RecoveryResponse { responder: UserId, aggregate: FieldVector },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    pub message: Message,
}

impl From<Message> for Envelope {
    fn from(message: Message) -> Self {
        Self {
            version: MESSAGE_SCHEMA_VERSION,
            message,
        }
    }
}

/// Runs `steps` SGD steps from `start` and returns `start - x_E`.
pub fn local_train<G>(start: &[f64], steps: usize, eta_l: f64, mut grad: G) -> Vec<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = start.to_vec();
    for _ in 0..steps {
        let g = grad(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta_l * gi;
        }
    }
    start.iter().zip(&x).map(|(a, b)| a - b).collect()
}

/// Result of [`User::upload`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UploadOutcome {
    pub update: MaskedUpdate,
    /// The wrap guard tripped but was disabled, so the payload wrapped.
    pub wrapped: bool,
}

#[derive(Clone, Debug)]
pub struct User {
    id: UserId,
    field: PrimeField,
    store: ShareStore,
    packages: BTreeMap<u64, MaskPackage>,
    uploaded: BTreeSet<u64>,
    mask_rng: StreamRng,
    quant_rng: StreamRng,
}

impl User {
    pub fn new(id: UserId, field: PrimeField, seed: u64) -> Self {
        Self {
            id,
            field,
            store: ShareStore::new(),
            packages: BTreeMap::new(),
            uploaded: BTreeSet::new(),
            mask_rng: rng::stream(seed, Stream::Mask, &[id.0 as u64]),
            quant_rng: rng::stream(seed, Stream::Quantize, &[id.0 as u64]),
        }
    }

    pub fn id(&self) -> UserId {
        self.id
    }

    pub fn store(&self) -> &ShareStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ShareStore {
        &mut self.store
    }

    pub fn package(&self, round: u64) -> Option<&MaskPackage> {
        self.packages.get(&round)
    }

    pub fn has_downloaded(&self, round: u64) -> bool {
        self.packages.contains_key(&round)
    }

    /// Model download at `round`: draws and encodes this round's mask. The
    /// returned package's shares must be delivered to every user.
    pub fn download(&mut self, round: u64, dim: usize, params: &ProtocolParams) -> Result<&MaskPackage, ProtocolError> {
        if self.packages.contains_key(&round) {
            return Err(ProtocolError::AlreadyUploaded { owner: self.id, round });
        }
        let pkg = generate_mask_package(&self.field, self.id, round, dim, &params.sharing, &mut self.mask_rng)?;
        Ok(self.packages.entry(round).or_insert(pkg))
    }

    pub fn receive_share(&mut self, owner: UserId, round: u64, share: FieldVector) -> Result<(), ProtocolError> {
        Ok(self.store.insert(owner, round, share)?)
    }

    /// Quantizes `delta`, masks it with the round-`round` mask and stamps it.
    pub fn upload(&mut self, round: u64, delta: &[f64], params: &ProtocolParams) -> Result<UploadOutcome, ProtocolError> {
        let pkg = self.packages.get(&round).ok_or(ProtocolError::NoPackage { owner: self.id, round })?;
        if self.uploaded.contains(&round) {
            return Err(ProtocolError::AlreadyUploaded { owner: self.id, round });
        }
        if delta.len() != pkg.dim() {
            return Err(ProtocolError::DimensionMismatch {
                expected: pkg.dim(),
                actual: delta.len(),
            });
        }
        let ints = quantize_scaled(delta, params.quant.c_l, &mut self.quant_rng)?;
        let wrapped = match check_wrap_guard(&self.field, &ints, params.buffer_size, params.quant.c_g) {
            Ok(()) => false,
            Err(e) if params.wrap_guard => return Err(e.into()),
            Err(_) => true,
        };
        let quantized = ints_to_field_wrapping(&self.field, &ints);
        let payload = self.field.add_vec(&quantized, pkg.upload_mask())?;
        self.uploaded.insert(round);
        Ok(UploadOutcome {
            update: MaskedUpdate {
                owner: self.id,
                download_round: round,
                payload,
            },
            wrapped,
        })
    }

    pub fn respond_recovery(&self, req: &RecoveryRequest) -> Result<FieldVector, ProtocolError> {
        Ok(aggregate_encoded_shares(&self.field, &self.store, req)?)
    }

    /// Forgets shares and own masks that can no longer be requested at `current_round`.
    pub fn evict(&mut self, current_round: u64, tau_max: u64) {
        let cutoff = current_round.saturating_sub(tau_max);
        self.store.evict_before(cutoff);
        self.packages.retain(|&r, _| r >= cutoff);
        self.uploaded.retain(|&r| r >= cutoff);
    }
}

/// What the server learned when closing a round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    /// The round that was closed.
    pub round: u64,
    pub members: Vec<RecoveryMember>,
    /// `sum_i s_bar_i * Delta_bar_i` in the field, after mask removal.
    pub field_aggregate: FieldVector,
    /// `sum_i s_bar_i`, demapped.
    pub weight_sum: i64,
    /// `g^(t)`; zero when every weight rounded to zero.
    pub gradient: Vec<f64>,
    pub responders_used: usize,
}

#[derive(Clone, Debug)]
pub struct Server {
    params: ProtocolParams,
    round: u64,
    model: Vec<f64>,
    buffer: Vec<MaskedUpdate>,
    pending: Option<RecoveryRequest>,
    registry: BTreeMap<(UserId, u64), BTreeSet<UserId>>,
    rng: StreamRng,
}

impl Server {
    pub fn new(params: ProtocolParams, model: Vec<f64>, seed: u64) -> Result<Self, ProtocolError> {
        params.validate()?;
        Ok(Self {
            params,
            round: 0,
            model,
            buffer: Vec::new(),
            pending: None,
            registry: BTreeMap::new(),
            rng: rng::stream(seed, Stream::ServerStaleness, &[]),
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn buffer(&self) -> &[MaskedUpdate] {
        &self.buffer
    }

    pub fn pending_request(&self) -> Option<&RecoveryRequest> {
        self.pending.as_ref()
    }

    /// Registry entry: `holder` received the share of `(owner, round)`.
    pub fn record_share(&mut self, owner: UserId, round: u64, holder: UserId) {
        self.registry.entry((owner, round)).or_default().insert(holder);
    }

    /// Users known to hold a share for every member of `req`.
    pub fn eligible_responders(&self, req: &RecoveryRequest) -> BTreeSet<UserId> {
        let mut sets = req
            .members
            .iter()
            .map(|m| self.registry.get(&(m.owner, m.download_round)).cloned().unwrap_or_default());
        let Some(first) = sets.next() else {
            return BTreeSet::new();
        };
        sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
    }

    /// Buffers an upload; returns the recovery request once `K` are held.
    pub fn receive(&mut self, update: MaskedUpdate) -> Result<Option<RecoveryRequest>, ProtocolError> {
        if self.pending.is_some() {
            return Err(ProtocolError::BufferFrozen);
        }
        if update.download_round > self.round {
            return Err(ProtocolError::FutureRound {
                owner: update.owner,
                claimed: update.download_round,
                current: self.round,
            });
        }
        let staleness = self.round - update.download_round;
        if staleness > self.params.tau_max {
            return Err(ProtocolError::StaleUpdate {
                owner: update.owner,
                staleness,
                tau_max: self.params.tau_max,
            });
        }
        if update.payload.len() != self.model.len() {
            return Err(ProtocolError::DimensionMismatch {
                expected: self.model.len(),
                actual: update.payload.len(),
            });
        }
        self.buffer.push(update);
        if self.buffer.len() < self.params.buffer_size {
            return Ok(None);
        }
        let p = self.params;
        let members = self
            .buffer
            .iter()
            .map(|u| {
                let tau = self.round - u.download_round;
                let weight = quantized_staleness(&p.field, &p.staleness, tau, p.quant.c_g, &mut self.rng)?;
                Ok(RecoveryMember {
                    owner: u.owner,
                    download_round: u.download_round,
                    weight,
                })
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        let req = RecoveryRequest {
            round: self.round,
            c_g: p.quant.c_g,
            members,
        };
        self.pending = Some(req.clone());
        Ok(Some(req))
    }

    /// Unmasks the buffered aggregate and takes the global step. With fewer
    /// than `U` responses the round aborts and the buffer stays frozen, so the
    /// caller may solicit more responders and retry.
    pub fn finalize(&mut self, responses: &[(UserId, FieldVector)]) -> Result<RoundSummary, ProtocolError> {
        let req = self.pending.as_ref().ok_or(ProtocolError::NoPendingRequest)?;
        let f = self.params.field;
        let dim = self.model.len();

        let mut masked = FieldVector::zeros(dim);
        for (u, m) in self.buffer.iter().zip(&req.members) {
            f.axpy(&mut masked, m.weight, &u.payload)?;
        }
        let coded: Vec<(u64, FieldVector)> = responses.iter().map(|(j, v)| (j.eval_point(), v.clone())).collect();
        let mask = recover_aggregate_mask(&f, &coded, &self.params.sharing, dim)?;
        let field_aggregate = f.sub_vec(&masked, &mask)?;

        let weight_sum_elem = req.weight_sum(&f);
        let gradient = match dequantize_aggregate(&f, &field_aggregate, weight_sum_elem, &self.params.quant) {
            Ok(g) => g,
            Err(QuantError::ZeroWeightSum) => vec![0.0; dim],
            Err(e) => return Err(e.into()),
        };
        for (x, g) in self.model.iter_mut().zip(&gradient) {
            *x -= self.params.eta_g * g;
        }

        let summary = RoundSummary {
            round: self.round,
            members: req.members.clone(),
            field_aggregate,
            weight_sum: demap_from_field(&f, weight_sum_elem),
            gradient,
            responders_used: self.params.sharing.survivors,
        };
        self.round += 1;
        self.buffer.clear();
        self.pending = None;
        let cutoff = self.round.saturating_sub(self.params.tau_max);
        self.registry.retain(|&(_, r), _| r >= cutoff);
        Ok(summary)
    }
}

/// Real-domain buffered update:
/// `x <- x - eta_g / sum s(tau_i) * sum s(tau_i) * delta_i`.
pub fn fedbuff_global_update(model: &mut [f64], updates: &[(Vec<f64>, u64)], staleness: &StalenessFn, eta_g: f64) {
    let weights: Vec<f64> = updates.iter().map(|&(_, tau)| staleness.weight(tau)).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return;
    }
    for (k, x) in model.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ((delta, _), w) in updates.iter().zip(&weights) {
            acc += w * delta[k];
        }
        *x -= eta_g * acc / total;
    }
}

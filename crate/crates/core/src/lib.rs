//! Buffered asynchronous secure aggregation (BASecAgg) for federated learning.
//!
//! The crate is layered bottom-up:
//!
//! - [`field`]: arithmetic over `F_q` and the Vandermonde `(N, U)` MDS code.
//! - [`quantize`]: stochastic rounding, the two's-complement field embedding,
//!   staleness functions and dequantization.
//! - [`masking`]: mask generation, T-private share encoding, per-round share
//!   stores and one-shot recovery of a weighted mask sum.
//! - [`protocol`]: user and server state machines plus the message schema.
//! - [`sim`]: a deterministic discrete-event simulator with an in-repo
//!   trainer, the float FedBuff baseline and CSV metrics.
//! - [`verify`]: property batteries (exactness, privacy by enumeration,
//!   quantization statistics, MDS round trips).

pub mod field;
pub mod masking;
pub mod protocol;
pub mod quantize;
pub mod rng;
pub mod sim;
pub mod verify;

pub use field::{FieldElement, FieldError, FieldVector, MdsCode, PrimeField, Vandermonde, DEFAULT_MODULUS};
pub use masking::{
    MaskError, MaskPackage, RecoveryMember, RecoveryRequest, SharingParams, ShareStore, UserId,
};
pub use protocol::{MaskedUpdate, Message, ProtocolError, ProtocolParams, Server, User};
pub use quantize::{QuantError, QuantParams, StalenessFn};
pub use sim::{RunMetrics, Scheme, SimConfig, SimError};

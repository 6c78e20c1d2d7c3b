//! Batch packing and a slot-exact simulated CKKS backend with operation accounting.

mod backend;
mod config;
mod packed;

pub use backend::{HeBackend, SimBackend};
pub use config::PackingConfig;
pub use packed::{
    batch_pack, batch_unpack, encode_scalar, memory_snapshot, simd_op, OpCounters, OpKind,
    PackedKind, PackedVec,
};

use std::fmt;
use std::ops::AddAssign;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::PackingConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackedKind {
    Ciphertext,
    Plaintext,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    CtPtMul,
    CtCtMul,
    CtAdd,
    CtPtAdd,
}

impl OpKind {
    pub fn is_mul(self) -> bool {
        matches!(self, OpKind::CtPtMul | OpKind::CtCtMul)
    }

    fn operands(self) -> (PackedKind, PackedKind) {
        match self {
            OpKind::CtPtMul | OpKind::CtPtAdd => (PackedKind::Ciphertext, PackedKind::Plaintext),
            OpKind::CtCtMul | OpKind::CtAdd => (PackedKind::Ciphertext, PackedKind::Ciphertext),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::CtPtMul => "ct_pt_mul",
            OpKind::CtCtMul => "ct_ct_mul",
            OpKind::CtAdd => "ct_add",
            OpKind::CtPtAdd => "ct_pt_add",
        })
    }
}

/// One simulated ciphertext or plaintext of `len` slots.
///
/// Slots are stored as an explicit prefix followed by one value repeated to the end,
/// which keeps a mostly empty 16K-slot ciphertext as cheap as its used prefix.
/// Values are immutable; operations return new vectors.
#[derive(Clone, Debug)]
pub struct PackedVec<T = f64> {
    kind: PackedKind,
    level: u32,
    id: u64,
    head: Arc<Vec<T>>,
    tail: T,
    len: usize,
    is_zero: bool,
}

impl<T: Scalar> PackedVec<T> {
    fn build(kind: PackedKind, level: u32, mut head: Vec<T>, tail: T, len: usize) -> Self {
        while head.last() == Some(&tail) {
            head.pop();
        }
        let is_zero = tail == T::zero() && head.is_empty();
        PackedVec {
            kind,
            level,
            id: fresh_id(),
            head: Arc::new(head),
            tail,
            len,
            is_zero,
        }
    }

    /// Ciphertext holding `values` in its first slots and zeros after.
    pub fn encrypt(values: &[T], len: usize, level: u32) -> Result<Self> {
        if values.len() > len {
            return Err(Error::Capacity {
                requested: values.len(),
                capacity: len,
            });
        }
        Ok(Self::build(
            PackedKind::Ciphertext,
            level,
            values.to_vec(),
            T::zero(),
            len,
        ))
    }

    /// Ciphertext with every slot zero.
    pub fn zero_ciphertext(len: usize, level: u32) -> Self {
        Self::build(PackedKind::Ciphertext, level, Vec::new(), T::zero(), len)
    }

    /// Plaintext with `value` repeated in every slot.
    pub fn repeated(value: T, len: usize, level: u32) -> Self {
        Self::build(PackedKind::Plaintext, level, Vec::new(), value, len)
    }

    pub fn kind(&self) -> PackedKind {
        self.kind
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// True when every slot is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    pub fn slot(&self, i: usize) -> T {
        assert!(i < self.len, "slot {i} out of {}", self.len);
        self.head.get(i).copied().unwrap_or(self.tail)
    }

    /// The first `n` slots.
    pub fn prefix(&self, n: usize) -> Vec<T> {
        (0..n.min(self.len)).map(|i| self.slot(i)).collect()
    }

    /// All slots, materialized.
    pub fn slots(&self) -> Vec<T> {
        self.prefix(self.len)
    }

    pub(crate) fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> (Vec<T>, T) {
        let n = self.head.len().max(other.head.len());
        let head = (0..n)
            .map(|i| {
                let a = self.head.get(i).copied().unwrap_or(self.tail);
                let b = other.head.get(i).copied().unwrap_or(other.tail);
                f(a, b)
            })
            .collect();
        (head, f(self.tail, other.tail))
    }

    pub(crate) fn with_slots(
        kind: PackedKind,
        level: u32,
        head: Vec<T>,
        tail: T,
        len: usize,
    ) -> Self {
        Self::build(kind, level, head, tail, len)
    }

    pub(crate) fn head_and_tail(&self) -> (&[T], T) {
        (&self.head, self.tail)
    }
}

/// HE operation counts of one execution; merge by summation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub ct_pt_mul: u64,
    pub ct_ct_mul: u64,
    pub ct_add: u64,
    pub ct_pt_add: u64,
    pub skipped_mul: u64,
    pub skipped_add: u64,
    /// Merged by maximum.
    pub peak_live_bytes: u64,
}

impl OpCounters {
    pub fn record(&mut self, kind: OpKind) {
        match kind {
            OpKind::CtPtMul => self.ct_pt_mul += 1,
            OpKind::CtCtMul => self.ct_ct_mul += 1,
            OpKind::CtAdd => self.ct_add += 1,
            OpKind::CtPtAdd => self.ct_pt_add += 1,
        }
    }

    /// Operations actually performed.
    pub fn executed(&self) -> u64 {
        self.ct_pt_mul + self.ct_ct_mul + self.ct_add + self.ct_pt_add
    }

    pub fn skipped(&self) -> u64 {
        self.skipped_mul + self.skipped_add
    }

    pub fn observe_live_bytes(&mut self, bytes: u64) {
        self.peak_live_bytes = self.peak_live_bytes.max(bytes);
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.ct_pt_mul += o.ct_pt_mul;
        self.ct_ct_mul += o.ct_ct_mul;
        self.ct_add += o.ct_add;
        self.ct_pt_add += o.ct_pt_add;
        self.skipped_mul += o.skipped_mul;
        self.skipped_add += o.skipped_add;
        self.peak_live_bytes = self.peak_live_bytes.max(o.peak_live_bytes);
    }
}

/// Slot-wise operation with level tracking; bumps the matching counter by one.
pub fn simd_op<T: Scalar>(
    kind: OpKind,
    a: &PackedVec<T>,
    c: &PackedVec<T>,
    counters: &mut OpCounters,
) -> Result<PackedVec<T>> {
    let (ka, kc) = kind.operands();
    if a.kind != ka || c.kind != kc {
        return Err(Error::Operand(format!(
            "{kind} expects ({ka:?}, {kc:?}) operands, got ({:?}, {:?})",
            a.kind, c.kind
        )));
    }
    if a.len != c.len {
        return Err(Error::Operand(format!(
            "{kind} on {} and {} slots",
            a.len, c.len
        )));
    }
    let level = if kc == PackedKind::Ciphertext {
        a.level.min(c.level)
    } else {
        a.level
    };
    let level = if kind.is_mul() {
        if level < 1 {
            return Err(Error::DepthExhausted {
                context: kind.to_string(),
                level,
            });
        }
        level - 1
    } else {
        level
    };
    let (head, tail) = if kind.is_mul() {
        a.zip_with(c, |x, y| x * y)
    } else {
        a.zip_with(c, |x, y| x + y)
    };
    counters.record(kind);
    Ok(PackedVec::build(
        PackedKind::Ciphertext,
        level,
        head,
        tail,
        a.len,
    ))
}

/// Plaintext with `w` repeated across all slots, at the configuration's top level.
pub fn encode_scalar<T: Scalar>(w: T, cfg: &PackingConfig) -> PackedVec<T> {
    PackedVec::repeated(w, cfg.slots, cfg.max_depth)
}

/// Bytes held by a set of live vectors under the limb-count memory model.
pub fn memory_snapshot<'a, T: Scalar>(
    live: impl IntoIterator<Item = &'a PackedVec<T>>,
    cfg: &PackingConfig,
) -> u64 {
    live.into_iter()
        .map(|v| match v.kind {
            PackedKind::Ciphertext => cfg.ciphertext_bytes(v.level),
            PackedKind::Plaintext => cfg.plaintext_bytes(v.level),
        })
        .sum()
}

/// Packs feature `i` of every instance into ciphertext `i`: one ciphertext per
/// feature, instance `j` in slot `j`.
pub fn batch_pack<T: Scalar>(batch: &Tensor<T>, cfg: &PackingConfig) -> Result<Vec<PackedVec<T>>> {
    let n = batch.rows();
    if n > cfg.slots {
        return Err(Error::Capacity {
            requested: n,
            capacity: cfg.slots,
        });
    }
    let m = batch.row_len();
    let data = batch.data();
    Ok((0..m)
        .map(|i| {
            let column: Vec<T> = (0..n).map(|j| data[j * m + i]).collect();
            PackedVec::build(
                PackedKind::Ciphertext,
                cfg.max_depth,
                column,
                T::zero(),
                cfg.slots,
            )
        })
        .collect())
}

/// Inverse of [`batch_pack`] for the first `n` slots.
pub fn batch_unpack<T: Scalar>(cts: &[PackedVec<T>], n: usize) -> Tensor<T> {
    let m = cts.len();
    let mut data = vec![T::zero(); n * m];
    for (i, ct) in cts.iter().enumerate() {
        for j in 0..n {
            data[j * m + i] = ct.slot(j);
        }
    }
    Tensor::new(vec![n, m], data).expect("n * m values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(slots: usize) -> PackingConfig {
        PackingConfig::new(8192, 200)
            .unwrap()
            .with_slots(slots)
            .unwrap()
    }

    #[test]
    fn pack_places_features_in_ciphertexts() {
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let cts = batch_pack(&x, &cfg(4)).unwrap();
        assert_eq!(cts.len(), 3);
        assert_eq!(cts[0].slots(), vec![1., 4., 0., 0.]);
        assert_eq!(cts[1].slots(), vec![2., 5., 0., 0.]);
        assert_eq!(cts[2].slots(), vec![3., 6., 0., 0.]);
        assert!(cts
            .iter()
            .all(|c| c.level() == 4 && c.kind() == PackedKind::Ciphertext));
        assert_eq!(batch_unpack(&cts, 2), x);
        let big = Tensor::<f64>::zeros(&[5, 1]);
        assert!(matches!(
            batch_pack(&big, &cfg(4)),
            Err(Error::Capacity {
                requested: 5,
                capacity: 4
            })
        ));
    }

    #[test]
    fn single_instance_is_zero_padded() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[7., 8.]).unwrap();
        let cts = batch_pack(&x, &cfg(3)).unwrap();
        assert_eq!(cts[1].slots(), vec![8., 0., 0.]);
    }

    #[test]
    fn scalar_encoding_repeats_value() {
        let c = cfg(4);
        assert_eq!(encode_scalar(2.5, &c).slots(), vec![2.5; 4]);
        assert!(encode_scalar(0.0, &c).is_zero());
        assert!(!encode_scalar(1e-300, &c).is_zero());
    }

    #[test]
    fn adding_zeros_is_identity() {
        let mut k = OpCounters::default();
        let x = PackedVec::encrypt(&[1.0, -2.0, 3.0], 4, 3).unwrap();
        let z = PackedVec::zero_ciphertext(4, 3);
        let y = simd_op(OpKind::CtAdd, &x, &z, &mut k).unwrap();
        assert_eq!(y.slots(), x.slots());
        assert_eq!(y.level(), 3);
        assert_eq!(k.ct_add, 1);
        assert_ne!(y.id(), x.id());
    }

    #[test]
    fn squaring_consumes_the_last_level() {
        let mut k = OpCounters::default();
        let x = PackedVec::encrypt(&[3.0, -2.0], 2, 1).unwrap();
        let y = simd_op(OpKind::CtCtMul, &x, &x, &mut k).unwrap();
        assert_eq!(y.slots(), vec![9.0, 4.0]);
        assert_eq!(y.level(), 0);
        assert!(matches!(
            simd_op(OpKind::CtCtMul, &y, &y, &mut k),
            Err(Error::DepthExhausted { level: 0, .. })
        ));
        assert_eq!(k.ct_ct_mul, 1);
    }

    #[test]
    fn multiplication_chain_decrements_once_per_op() {
        for depth in 1..=6u32 {
            let mut k = OpCounters::default();
            let mut x = PackedVec::encrypt(&[1.5], 1, depth).unwrap();
            let two = PackedVec::repeated(2.0, 1, depth);
            for step in 1..=depth {
                x = simd_op(OpKind::CtPtMul, &x, &two, &mut k).unwrap();
                assert_eq!(x.level(), depth - step);
            }
            assert_eq!(x.slot(0), 1.5 * f64::powi(2.0, depth as i32));
            assert!(simd_op(OpKind::CtPtMul, &x, &two, &mut k).is_err());
        }
    }

    #[test]
    fn plaintext_bias_reaches_padding_slots() {
        let mut k = OpCounters::default();
        let x = PackedVec::encrypt(&[1.0], 3, 2).unwrap();
        let b = PackedVec::repeated(0.5, 3, 2);
        assert_eq!(
            simd_op(OpKind::CtPtAdd, &x, &b, &mut k).unwrap().slots(),
            vec![1.5, 0.5, 0.5]
        );
    }

    #[test]
    fn operand_kinds_are_checked() {
        let mut k = OpCounters::default();
        let x = PackedVec::encrypt(&[1.0], 2, 2).unwrap();
        let p = PackedVec::repeated(1.0, 2, 2);
        assert!(matches!(
            simd_op(OpKind::CtAdd, &x, &p, &mut k),
            Err(Error::Operand(_))
        ));
        assert!(matches!(
            simd_op(OpKind::CtPtMul, &p, &x, &mut k),
            Err(Error::Operand(_))
        ));
        assert_eq!(k, OpCounters::default());
    }

    #[test]
    fn memory_snapshot_sums_limb_sizes() {
        let c = PackingConfig::default();
        assert_eq!(memory_snapshot::<f64>([], &c), 0);
        let ct = PackedVec::<f64>::zero_ciphertext(4, 13);
        assert_eq!(memory_snapshot([&ct], &c), 7_864_320);
        let pt = PackedVec::<f64>::repeated(1.0, 4, 13);
        assert_eq!(memory_snapshot([&ct, &pt], &c), 7_864_320 + 3_932_160);
    }
}

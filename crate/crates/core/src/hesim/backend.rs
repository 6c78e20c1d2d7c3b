use super::config::PackingConfig;
use super::packed::{simd_op, OpCounters, OpKind, PackedKind, PackedVec};
use crate::error::Result;
use crate::scalar::Scalar;

/// The boundary a real HE library would implement.
pub trait HeBackend<T: Scalar>: Sync {
    fn config(&self) -> &PackingConfig;

    /// Encrypts `values` into the leading slots of a fresh ciphertext.
    fn encrypt(&self, values: &[T]) -> Result<PackedVec<T>>;

    /// Plaintext repeating `w` in every slot, encoded at `level`.
    fn encode_scalar(&self, w: T, level: u32) -> PackedVec<T>;

    /// Ciphertext of all zeros at `level`, used for padding and fully skipped outputs.
    fn zero(&self, level: u32) -> PackedVec<T>;

    fn op(
        &self,
        kind: OpKind,
        a: &PackedVec<T>,
        c: &PackedVec<T>,
        counters: &mut OpCounters,
    ) -> Result<PackedVec<T>>;

    /// Leading `n` slots of a ciphertext.
    fn decrypt(&self, ct: &PackedVec<T>, n: usize) -> Vec<T>;
}

/// Exact slot arithmetic without encryption.
#[derive(Clone, Debug)]
pub struct SimBackend {
    cfg: PackingConfig,
    noise: Option<f64>,
}

impl SimBackend {
    pub fn new(cfg: PackingConfig) -> Self {
        SimBackend { cfg, noise: None }
    }

    /// Perturbs each operation's result slots by a relative `rel`, alternating sign by
    /// slot index so runs stay reproducible.
    pub fn with_relative_noise(mut self, rel: f64) -> Self {
        self.noise = (rel != 0.0).then_some(rel);
        self
    }
}

impl<T: Scalar> HeBackend<T> for SimBackend {
    fn config(&self) -> &PackingConfig {
        &self.cfg
    }

    fn encrypt(&self, values: &[T]) -> Result<PackedVec<T>> {
        PackedVec::encrypt(values, self.cfg.slots, self.cfg.max_depth)
    }

    fn encode_scalar(&self, w: T, level: u32) -> PackedVec<T> {
        PackedVec::repeated(w, self.cfg.slots, level)
    }

    fn zero(&self, level: u32) -> PackedVec<T> {
        PackedVec::zero_ciphertext(self.cfg.slots, level)
    }

    fn op(
        &self,
        kind: OpKind,
        a: &PackedVec<T>,
        c: &PackedVec<T>,
        counters: &mut OpCounters,
    ) -> Result<PackedVec<T>> {
        let out = simd_op(kind, a, c, counters)?;
        let Some(rel) = self.noise else {
            return Ok(out);
        };
        let (head, tail) = out.head_and_tail();
        let rel = T::of(rel);
        let head = head
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 2 == 0 { v + v * rel } else { v - v * rel })
            .collect();
        Ok(PackedVec::with_slots(
            PackedKind::Ciphertext,
            out.level(),
            head,
            tail + tail * rel,
            out.len(),
        ))
    }

    fn decrypt(&self, ct: &PackedVec<T>, n: usize) -> Vec<T> {
        ct.prefix(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_off_by_default_and_reproducible_when_on() {
        let cfg = PackingConfig::new(8192, 200)
            .unwrap()
            .with_slots(4)
            .unwrap();
        let exact = SimBackend::new(cfg.clone());
        let noisy = SimBackend::new(cfg).with_relative_noise(1e-3);
        let mut k = OpCounters::default();
        let x: PackedVec<f64> = exact.encrypt(&[1.0, 2.0]).unwrap();
        let w = exact.encode_scalar(3.0, 4);
        assert_eq!(
            exact.op(OpKind::CtPtMul, &x, &w, &mut k).unwrap().slots(),
            vec![3.0, 6.0, 0.0, 0.0]
        );
        let a = noisy.op(OpKind::CtPtMul, &x, &w, &mut k).unwrap();
        let b = noisy.op(OpKind::CtPtMul, &x, &w, &mut k).unwrap();
        assert_eq!(a.slots(), b.slots());
        assert!((a.slot(0) - 3.003).abs() < 1e-12 && (a.slot(1) - 5.994).abs() < 1e-12);
        assert_eq!(k.ct_pt_mul, 3);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CKKS-style parameters that bound slot capacity, multiplicative depth and memory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingConfig {
    /// Batch capacity of one ciphertext.
    pub slots: usize,
    pub poly_modulus_degree: usize,
    pub coeff_modulus_bits: u32,
    /// Levels available to a fresh ciphertext.
    pub max_depth: u32,
    /// Width of the two special primes (first and last modulus).
    pub limb_bits: u32,
    /// Bits consumed per rescale, i.e. per multiplicative level.
    pub scale_bits: u32,
}

impl PackingConfig {
    pub const DEFAULT_LIMB_BITS: u32 = 60;
    pub const DEFAULT_SCALE_BITS: u32 = 20;

    /// Derives the slot count (`pmd / 2`) and the level budget from the modulus size.
    pub fn new(poly_modulus_degree: usize, coeff_modulus_bits: u32) -> Result<Self> {
        let cfg = PackingConfig {
            slots: poly_modulus_degree / 2,
            poly_modulus_degree,
            coeff_modulus_bits,
            max_depth: Self::derived_depth(
                coeff_modulus_bits,
                Self::DEFAULT_LIMB_BITS,
                Self::DEFAULT_SCALE_BITS,
            ),
            limb_bits: Self::DEFAULT_LIMB_BITS,
            scale_bits: Self::DEFAULT_SCALE_BITS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `floor((cm - 2 * limb_bits) / scale_bits)`: two special primes, then one
    /// rescale prime per level.
    pub fn derived_depth(coeff_modulus_bits: u32, limb_bits: u32, scale_bits: u32) -> u32 {
        coeff_modulus_bits.saturating_sub(2 * limb_bits) / scale_bits.max(1)
    }

    pub fn with_slots(mut self, slots: usize) -> Result<Self> {
        self.slots = slots;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_depth(mut self, depth: u32) -> Result<Self> {
        self.max_depth = depth;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.slots > self.poly_modulus_degree / 2 {
            return Err(Error::config(format!(
                "slot count {} must lie in 1..={}",
                self.slots,
                self.poly_modulus_degree / 2
            )));
        }
        if self.max_depth < 1 {
            return Err(Error::config("max_depth must be at least 1"));
        }
        let needed =
            u64::from(self.max_depth) * u64::from(self.scale_bits) + 2 * u64::from(self.limb_bits);
        if u64::from(self.coeff_modulus_bits) < needed {
            return Err(Error::config(format!(
                "{} levels need {needed} modulus bits, only {} configured",
                self.max_depth, self.coeff_modulus_bits
            )));
        }
        Ok(())
    }

    /// RNS limbs held by a ciphertext at `level`.
    pub fn limbs(&self, level: u32) -> u64 {
        u64::from(level) + 2
    }

    pub fn ciphertext_bytes(&self, level: u32) -> u64 {
        2 * self.poly_modulus_degree as u64 * self.limbs(level) * 8
    }

    pub fn plaintext_bytes(&self, level: u32) -> u64 {
        self.poly_modulus_degree as u64 * self.limbs(level) * 8
    }
}

impl Default for PackingConfig {
    fn default() -> Self {
        PackingConfig::new(32768, 860).expect("default parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_for_the_three_parameter_sets() {
        assert_eq!(PackingConfig::new(32768, 860).unwrap().max_depth, 37);
        assert_eq!(PackingConfig::new(16384, 290).unwrap().max_depth, 8);
        assert_eq!(PackingConfig::new(8192, 200).unwrap().max_depth, 4);
        assert_eq!(PackingConfig::default().slots, 16384);
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        let cfg = PackingConfig::new(8192, 200).unwrap();
        assert!(cfg.clone().with_slots(4097).is_err());
        assert!(cfg.clone().with_max_depth(5).is_err());
        assert!(cfg.with_max_depth(0).is_err());
        assert!(PackingConfig::new(8192, 120).is_err());
    }

    #[test]
    fn fresh_ciphertext_size() {
        let cfg = PackingConfig::default();
        // 15 limbs is level 13
        assert_eq!(cfg.ciphertext_bytes(13), 2 * 32768 * 15 * 8);
        assert_eq!(cfg.ciphertext_bytes(13), 7_864_320);
        assert_eq!(cfg.plaintext_bytes(13), 3_932_160);
    }
}

//! Reference model architectures used by the experiments and the CLI.

use crate::error::Result;
use crate::nncore::{LayerKind, Model, ModelBuilder, Padding};
use crate::scalar::Scalar;

/// Named reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Lenet,
    Fcnet,
    Ae1,
    Ae2,
    Ae3,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Lenet, Arch::Fcnet, Arch::Ae1, Arch::Ae2, Arch::Ae3];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lenet => "lenet",
            Arch::Fcnet => "fcnet",
            Arch::Ae1 => "ae1",
            Arch::Ae2 => "ae2",
            Arch::Ae3 => "ae3",
        }
    }

    pub fn parse(name: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == name)
    }

    /// The trainable original with ReLU, max pooling and a softmax head where applicable.
    pub fn original<T: Scalar>(self, seed: u64) -> Result<Model<T>> {
        match self {
            Arch::Lenet => lenet(seed),
            Arch::Fcnet => fcnet(seed),
            Arch::Ae1 => autoencoder(&[32], seed),
            Arch::Ae2 => autoencoder(&[64], seed),
            Arch::Ae3 => autoencoder(&[64, 32, 64], seed),
        }
    }

    /// The same topology already in HE-friendly form, freshly initialized.
    pub fn he_friendly<T: Scalar>(self, seed: u64) -> Result<Model<T>> {
        match self {
            Arch::Lenet => lenet_hef_with_units([6, 16, 120, 84], 2, seed),
            Arch::Fcnet => fcnet_hef_with_units([64, 128, 256], seed),
            Arch::Ae1 => autoencoder_hef(&[32], 2, seed),
            Arch::Ae2 => autoencoder_hef(&[64], 2, seed),
            Arch::Ae3 => autoencoder_hef(&[64, 32, 64], 2, seed),
        }
    }

    /// Crypto parameters `(poly_modulus_degree, coeff_modulus_bits)` for this experiment.
    pub fn crypto_params(self) -> (usize, usize) {
        match self {
            Arch::Lenet => (32768, 860),
            Arch::Fcnet => (16384, 290),
            Arch::Ae1 | Arch::Ae2 => (8192, 200),
            Arch::Ae3 => (16384, 200),
        }
    }
}

/// LeNet for 28x28 grayscale digits.
pub fn lenet<T: Scalar>(seed: u64) -> Result<Model<T>> {
    ModelBuilder::new(&[28, 28, 1])
        .conv(6, 5, 1, Padding::Same)
        .relu()
        .max_pool(2)
        .conv(16, 5, 1, Padding::Valid)
        .relu()
        .max_pool(2)
        .conv(120, 5, 1, Padding::Valid)
        .relu()
        .flatten()
        .dense(84)
        .relu()
        .dense(10)
        .softmax()
        .build(seed)
}

/// HE-friendly LeNet with the given `(conv0, conv1, conv2, dense0)` widths, degree
/// `degree` polynomial activations and average pooling.
pub fn lenet_hef_with_units<T: Scalar>(
    units: [usize; 4],
    degree: usize,
    seed: u64,
) -> Result<Model<T>> {
    ModelBuilder::new(&[28, 28, 1])
        .conv(units[0], 5, 1, Padding::Same)
        .poly(degree)
        .avg_pool(2)
        .conv(units[1], 5, 1, Padding::Valid)
        .poly(degree)
        .avg_pool(2)
        .conv(units[2], 5, 1, Padding::Valid)
        .poly(degree)
        .flatten()
        .dense(units[3])
        .poly(degree)
        .dense(10)
        .build(seed)
}

/// Fully connected classifier for the 12 grid-stability features.
pub fn fcnet<T: Scalar>(seed: u64) -> Result<Model<T>> {
    ModelBuilder::new(&[12])
        .dense(64)
        .relu()
        .dense(128)
        .relu()
        .dense(256)
        .relu()
        .dense(2)
        .softmax()
        .build(seed)
}

/// HE-friendly FcNet with square activations.
pub fn fcnet_hef_with_units<T: Scalar>(units: [usize; 3], seed: u64) -> Result<Model<T>> {
    ModelBuilder::new(&[12])
        .dense(units[0])
        .square()
        .dense(units[1])
        .square()
        .dense(units[2])
        .square()
        .dense(2)
        .build(seed)
}

/// Fully connected autoencoder on flattened 784-pixel images with a linear output.
pub fn autoencoder<T: Scalar>(hidden: &[usize], seed: u64) -> Result<Model<T>> {
    hidden
        .iter()
        .fold(ModelBuilder::new(&[784]), |b, &u| b.dense(u).relu())
        .dense(784)
        .build(seed)
}

pub fn autoencoder_hef<T: Scalar>(hidden: &[usize], degree: usize, seed: u64) -> Result<Model<T>> {
    hidden
        .iter()
        .fold(ModelBuilder::new(&[784]), |b, &u| {
            b.layer(LayerKind::Dense { units: u }).poly(degree)
        })
        .dense(784)
        .build(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Arch::ALL {
            assert_eq!(Arch::parse(a.name()), Some(a));
        }
        assert_eq!(Arch::parse("vgg"), None);
    }

    #[test]
    fn original_and_friendly_shapes_agree() {
        for a in Arch::ALL {
            let o: Model<f64> = a.original(1).unwrap();
            let h: Model<f64> = a.he_friendly(1).unwrap();
            assert!(h.is_he_friendly());
            assert_eq!(o.input_shape(), h.input_shape());
            assert_eq!(o.output_shape(), h.output_shape());
        }
    }

    #[test]
    fn lenet_flattens_120_features() {
        let m: Model<f64> = lenet(0).unwrap();
        assert_eq!(m.layers()[8].output_shape(), &[120]);
        assert_eq!(m.param_count(), 156 + 2416 + 48120 + 10164 + 850);
    }
}

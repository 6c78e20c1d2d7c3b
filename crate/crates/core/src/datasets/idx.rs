use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, transparently gunzipping `*.gz`.
fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let mut f = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(f).read_to_end(&mut bytes)?;
    } else {
        f.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::parse(at as u64, "unexpected end of IDX header"))
}

/// Parses IDX3 image bytes into `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::parse(
            0,
            format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() != need {
        return Err(Error::parse(
            bytes.len().min(need) as u64,
            format!(
                "image payload holds {} bytes, header declares {need}",
                bytes.len()
            ),
        ));
    }
    Ok((n, rows, cols, &bytes[16..]))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::parse(
            0,
            format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::parse(
            bytes.len().min(8 + n) as u64,
            format!(
                "label payload holds {} bytes, header declares {}",
                bytes.len(),
                8 + n
            ),
        ));
    }
    Ok(&bytes[8..])
}

/// Loads MNIST-format IDX files as `(n, rows, cols, 1)` images scaled into `[0, 1]`
/// with one-hot labels over 10 classes.
pub fn load_mnist_idx<T: Scalar>(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<Dataset<T>> {
    let image_bytes = read_all(images.as_ref())?;
    let label_bytes = read_all(labels.as_ref())?;
    let (n, rows, cols, pixels) = read_idx_images(&image_bytes)?;
    let labels = read_idx_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(Error::parse(
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::parse(
            8 + pos as u64,
            format!("label {} out of range", labels[pos]),
        ));
    }
    let raw: Vec<T> = pixels.iter().map(|&p| T::of(f64::from(p))).collect();
    let x = normalize_pixels(Tensor::new(vec![n, rows, cols, 1], raw)?);
    let y = one_hot(
        &labels.iter().map(|&l| usize::from(l)).collect::<Vec<_>>(),
        10,
    );
    Dataset::new(x, y)
}

/// Maps 8-bit pixel magnitudes into `[0, 1]` by dividing by 255. Data already inside
/// `[0, 1]` is returned unchanged, so the operation is idempotent.
pub fn normalize_pixels<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    let max = x.data().iter().copied().fold(T::zero(), T::max);
    if max <= T::one() {
        return x;
    }
    let inv = T::one() / T::of(255.0);
    x.map(|v| v * inv)
}

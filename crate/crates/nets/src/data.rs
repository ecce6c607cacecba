//! Conversions between images and network tensors, plus seeded ordering.

use egoface_core::render::Image;
use egoface_nn::{Gradients, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NetsError, Result};

/// Planar `[3, H, W]` tensor of an interleaved RGB image.
pub fn image_tensor(img: &Image) -> Tensor<f32> {
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut out = vec![0.0f32; 3 * w * h];
    for p in 0..w * h {
        for c in 0..3 {
            out[c * w * h + p] = src[3 * p + c] as f32;
        }
    }
    Tensor::new(vec![3, h, w], out).expect("planar layout")
}

/// Interleaved image of a `[3, H, W]` tensor; values are clamped to [0, 1].
pub fn tensor_image(t: &Tensor<f32>) -> Result<Image> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(NetsError::Size(format!("expected a [3, H, W] tensor, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let src = t.data();
    let mut out = vec![0.0; 3 * w * h];
    for p in 0..w * h {
        for c in 0..3 {
            out[3 * p + c] = src[c * w * h + p] as f64;
        }
    }
    Ok(Image::from_data(w, h, out)?)
}

/// Area-averages a square image down to `size`.
pub fn resized(img: &Image, size: usize) -> Result<Image> {
    if img.width() == size && img.height() == size {
        return Ok(img.clone());
    }
    Ok(img.resize_area(size, size)?)
}

/// Stacks `[C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = parts.first().ok_or_else(|| NetsError::Empty("channel stack".into()))?;
    let (h, w) = (first.shape()[1], first.shape()[2]);
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.shape().len() != 3 || p.shape()[1] != h || p.shape()[2] != w {
            return Err(NetsError::Size(format!(
                "cannot stack {:?} onto {h}x{w} planes",
                p.shape()
            )));
        }
        channels += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::new(vec![channels, h, w], data)?)
}

/// SplitMix64 of `seed` combined with two counters.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded permutation of `0..n` for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, 0x5eed)));
    order
}

/// Averages per-sample gradients, summing in sample order so the result does
/// not depend on how the samples were scheduled.
pub(crate) fn mean_gradients(parts: Vec<Gradients<f32>>) -> Option<Gradients<f32>> {
    let n = parts.len();
    let mut iter = parts.into_iter();
    let mut total = iter.next()?;
    for g in iter {
        total.accumulate(&g);
    }
    total.scale(1.0 / n as f32);
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_exact_for_8bit_values() {
        let data: Vec<f64> = (0..3 * 4 * 2).map(|i| (i * 10 % 256) as f64 / 255.0).collect();
        let img = Image::from_data(4, 2, data).unwrap();
        let t = image_tensor(&img);
        assert_eq!(t.shape(), &[3, 2, 4]);
        assert_eq!(t.data()[8], img.data()[1] as f32);
        let back = tensor_image(&t).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 3, 1);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 3, 1));
        assert_ne!(a, epoch_order(50, 3, 2));
    }
}

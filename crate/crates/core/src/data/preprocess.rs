//! White balance, downsizing and center cropping of image pairs.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{slice_patch, Shape, Tensor, Window};

/// A loaded, aligned RAW/sRGB pair, each `(1, h, w, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    /// Linear values, normalized to max 1 after white balance.
    pub raw: Tensor<f32>,
    pub srgb: Tensor<f32>,
    pub wb_gains: [f64; 3],
}

impl ImagePair {
    pub fn new(
        id: impl Into<String>,
        raw: Tensor<f32>,
        srgb: Tensor<f32>,
        wb_gains: [f64; 3],
    ) -> Result<Self> {
        let id = id.into();
        if raw.shape() != srgb.shape() || raw.shape().n != 1 || raw.shape().c != 3 {
            return Err(Error::InvalidInput(format!(
                "{id}: RAW {} and sRGB {} are not one aligned RGB pair",
                raw.shape(),
                srgb.shape()
            )));
        }
        if wb_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{id}: white-balance gains {wb_gains:?} must be positive"
            )));
        }
        Ok(ImagePair {
            id,
            raw,
            srgb,
            wb_gains,
        })
    }
}

/// Channelwise gains followed by division by the maximum, so the result
/// peaks at exactly 1 (an all-zero image stays zero).
pub fn apply_white_balance(raw: &Tensor<f32>, gains: [f64; 3]) -> Tensor<f32> {
    let mut out = raw.clone();
    for px in out.data_mut().chunks_mut(3) {
        for (v, g) in px.iter_mut().zip(gains) {
            *v = (*v as f64 * g) as f32;
        }
    }
    let max = out.data().iter().fold(0.0f32, |m, &v| m.max(v));
    if max > 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v /= max);
    }
    out
}

/// Size after scaling the short side to `target`, or `None` when the image
/// would have to be enlarged.
pub fn resized_dims(h: usize, w: usize, target: usize) -> Option<(usize, usize)> {
    let short = h.min(w);
    if short < target {
        return None;
    }
    let scale = |v: usize| ((v * target) as f64 / short as f64).round() as usize;
    Some(if h <= w {
        (target, scale(w).max(target))
    } else {
        (scale(h).max(target), target)
    })
}

/// Filtered resize of one `(1, h, w, 3)` image.
pub fn resize(image: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if (s.h, s.w) == (h, w) {
        return Ok(image.clone());
    }
    let buf = ImageBuffer::<Rgb<f32>, _>::from_raw(s.w as u32, s.h as u32, image.data().to_vec())
        .ok_or_else(|| Error::config(format!("cannot resize a batch of shape {s}")))?;
    let out = imageops::resize(&buf, w as u32, h as u32, FilterType::Triangle);
    Tensor::from_vec(Shape::new(1, h, w, 3)?, out.into_raw())
}

fn center_crop(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    slice_patch(image, Window::new((s.h - size) / 2, (s.w - size) / 2, size, size))
}

/// Downsizes the short side to `target` and center-crops to
/// `target x target`, identically for RAW and sRGB. Returns `None` (with a
/// warning) for images smaller than `target`.
pub fn preprocess(pair: ImagePair, target: usize) -> Result<Option<ImagePair>> {
    let s = pair.raw.shape();
    let Some((h, w)) = resized_dims(s.h, s.w, target) else {
        log::warn!(
            "skipping {}: {}x{} is smaller than {target}x{target}",
            pair.id,
            s.h,
            s.w
        );
        return Ok(None);
    };
    let raw = center_crop(&resize(&pair.raw, h, w)?, target)?;
    let srgb = center_crop(&resize(&pair.srgb, h, w)?, target)?;
    Ok(Some(ImagePair { raw, srgb, ..pair }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> Tensor<f32> {
        let mut t = Tensor::zeros(Shape::new(1, h, w, 3).unwrap());
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    *t.at_mut(0, y, x, c) = f(y, x, c);
                }
            }
        }
        t
    }

    #[test]
    fn unit_gains_only_renormalize() {
        let t = img(2, 2, |y, x, c| 0.1 * (y + x + c) as f32);
        let out = apply_white_balance(&t, [1.0, 1.0, 1.0]);
        let max = 0.1 * 4.0;
        for (a, b) in out.data().iter().zip(t.data()) {
            assert!((a - b / max).abs() < 1e-6);
        }
        assert_eq!(out.data().iter().cloned().fold(0.0, f32::max), 1.0);
    }

    #[test]
    fn red_gain_saturates_red() {
        // A pure-red 0.5 pixel next to a gray 0.5 pixel.
        let t = img(1, 2, |_, x, c| if x == 0 && c > 0 { 0.0 } else { 0.5 });
        let out = apply_white_balance(&t, [2.0, 1.0, 1.0]);
        assert_eq!(out.pixel(0, 0, 0), &[1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(0, 0, 1), &[1.0, 0.5, 0.5]);
    }

    #[test]
    fn resize_arithmetic() {
        assert_eq!(resized_dims(1024, 1536, 512), Some((512, 768)));
        assert_eq!(resized_dims(1536, 1024, 512), Some((768, 512)));
        assert_eq!(resized_dims(512, 512, 512), Some((512, 512)));
        assert_eq!(resized_dims(400, 900, 512), None);
    }

    #[test]
    fn preprocess_crops_center_and_keeps_alignment() {
        let raw = img(64, 96, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0);
        let srgb = raw.clone();
        let pair = ImagePair::new("p", raw, srgb, [1.0; 3]).unwrap();
        let out = preprocess(pair, 32).unwrap().unwrap();
        assert_eq!(out.raw.shape(), Shape::new(1, 32, 32, 3).unwrap());
        assert_eq!(out.raw, out.srgb);
    }

    #[test]
    fn target_sized_image_is_unchanged() {
        let raw = img(16, 16, |y, x, c| (y * 16 + x + c) as f32 / 300.0);
        let pair = ImagePair::new("p", raw.clone(), raw.clone(), [1.0; 3]).unwrap();
        assert_eq!(preprocess(pair, 16).unwrap().unwrap().raw, raw);
    }

    #[test]
    fn crop_offset_matches_center() {
        // Already at target height: only the crop acts.
        let raw = img(8, 12, |_, x, _| x as f32 / 12.0);
        let pair = ImagePair::new("p", raw.clone(), raw, [1.0; 3]).unwrap();
        let out = preprocess(pair, 8).unwrap().unwrap();
        assert_eq!(out.raw.at(0, 0, 0, 0), 2.0 / 12.0);
    }

    #[test]
    fn small_images_are_skipped() {
        let raw = img(8, 8, |_, _, _| 0.5);
        let pair = ImagePair::new("p", raw.clone(), raw, [1.0; 3]).unwrap();
        assert!(preprocess(pair, 16).unwrap().is_none());
    }

    #[test]
    fn pair_validation() {
        let a = img(4, 4, |_, _, _| 0.5);
        let b = img(4, 5, |_, _, _| 0.5);
        assert!(ImagePair::new("x", a.clone(), b, [1.0; 3]).is_err());
        assert!(ImagePair::new("x", a.clone(), a, [1.0, 0.0, 1.0]).is_err());
    }
}

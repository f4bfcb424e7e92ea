//! PNG reading and writing: 16-bit for linear RAW, 8-bit for sRGB and
//! heatmaps.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

/// Reads an RGB image as `(1, h, w, 3)` in `[0, 1]`, reporting the stored
/// bit depth. Gray and alpha layouts are converted to RGB.
pub fn read_rgb(path: &Path) -> Result<(Tensor<f32>, BitDepth)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = Shape::new(1, h, w, 3)?;
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    if sixteen {
        let buf = img.into_rgb16();
        let data = buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
        Ok((Tensor::from_vec(shape, data)?, BitDepth::Sixteen))
    } else {
        let buf = img.into_rgb8();
        let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok((Tensor::from_vec(shape, data)?, BitDepth::Eight))
    }
}

/// Reads an image that must be stored at `depth`.
pub fn read_rgb_expect(path: &Path, depth: BitDepth) -> Result<Tensor<f32>> {
    let (t, found) = read_rgb(path)?;
    if found != depth {
        return Err(Error::InvalidInput(format!(
            "{} is {found:?}-bit, expected {depth:?}-bit",
            path.display()
        )));
    }
    Ok(t)
}

/// Nearest code for `v` clamped to `[0, 1]`.
pub fn quantize(v: f32, depth: BitDepth) -> u16 {
    let max = depth.max_value();
    (v.clamp(0.0, 1.0) as f64 * max).round() as u16
}

fn single_item(image: &Tensor<f32>, path: &Path) -> Result<Shape> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(image_err(path, format!("can only write one RGB image, got {s}")));
    }
    Ok(s)
}

/// Writes `(1, h, w, 3)` after clamping to `[0, 1]`.
pub fn write_rgb(path: &Path, image: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    let s = single_item(image, path)?;
    let (w, h) = (s.w as u32, s.h as u32);
    let res = match depth {
        BitDepth::Eight => {
            let data: Vec<u8> = image.data().iter().map(|&v| quantize(v, depth) as u8).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, data)
                .expect("length matches")
                .save_with_format(path, image::ImageFormat::Png)
        }
        BitDepth::Sixteen => {
            let data: Vec<u16> = image.data().iter().map(|&v| quantize(v, depth)).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, data)
                .expect("length matches")
                .save_with_format(path, image::ImageFormat::Png)
        }
    };
    res.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_err(path, other),
    })
}

/// Writes an 8-bit grayscale image from `(h, w)` values in `[0, 1]`.
pub fn write_gray8(path: &Path, values: &[f32], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w {
        return Err(image_err(
            path,
            format!("{} values for a {h}x{w} image", values.len()),
        ));
    }
    let data: Vec<u8> = values
        .iter()
        .map(|&v| quantize(v, BitDepth::Eight) as u8)
        .collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data)
        .expect("length matches")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => image_err(path, other),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        random_tensor(Shape::new(1, 9, 13, 3).unwrap(), 0.0, 1.0, &mut rng).cast()
    }

    #[test]
    fn sixteen_bit_round_trip_error_is_half_a_code() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.png");
        let img = sample();
        write_rgb(&p, &img, BitDepth::Sixteen).unwrap();
        let (back, depth) = read_rgb(&p).unwrap();
        assert_eq!(depth, BitDepth::Sixteen);
        let err = back.max_abs_diff(&img).unwrap();
        assert!((err as f64) <= 0.5 / 65535.0 + 1e-7, "{err}");
        // A second trip through the file is exact.
        write_rgb(&p, &back, BitDepth::Sixteen).unwrap();
        assert_eq!(read_rgb(&p).unwrap().0, back);
    }

    #[test]
    fn eight_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("srgb.png");
        let img = sample();
        write_rgb(&p, &img, BitDepth::Eight).unwrap();
        let back = read_rgb_expect(&p, BitDepth::Eight).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-6);
        assert!(read_rgb_expect(&p, BitDepth::Sixteen).is_err());
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        assert_eq!(quantize(-0.2, BitDepth::Eight), 0);
        assert_eq!(quantize(1.7, BitDepth::Sixteen), 65535);
        assert_eq!(quantize(0.5, BitDepth::Eight), 128);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_rgb(Path::new("/definitely/not/here.png")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/definitely/not/here.png"));
    }

    #[test]
    fn gray_heatmap() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        write_gray8(&p, &[0.0, 1.0, 0.5, 0.25], 2, 2).unwrap();
        let img = image::open(&p).unwrap().into_luma8();
        assert_eq!(img.into_raw(), vec![0, 255, 128, 64]);
        assert!(write_gray8(&p, &[0.0], 2, 2).is_err());
    }
}

//! Datasets: manifests, image files, preprocessing, the synthetic pair
//! generator and the histogram-swap analysis.

mod io;
mod manifest;
mod preprocess;
mod swap;
pub mod synth;

pub use io::{quantize, read_rgb, read_rgb_expect, write_gray8, write_rgb, BitDepth};
pub use manifest::{load_manifest, parse_manifest, save_manifest, ManifestEntry, HEADER};
pub use preprocess::{apply_white_balance, preprocess, resize, resized_dims, ImagePair};
pub use swap::{swap_global_histogram, swapped_context, SwapChannels, SwapOptions, SwapResult};
pub use synth::{synth_generate, SynthConfig};

use crate::error::Result;
use crate::model::Direction;
use crate::trainer::Example;

/// Reads one manifest entry: 16-bit RAW (white balanced and normalized) and
/// 8-bit sRGB.
pub fn load_pair(entry: &ManifestEntry) -> Result<ImagePair> {
    let raw = read_rgb_expect(&entry.raw_path, BitDepth::Sixteen)?;
    let srgb = read_rgb_expect(&entry.srgb_path, BitDepth::Eight)?;
    ImagePair::new(
        entry.id.clone(),
        apply_white_balance(&raw, entry.wb_gains),
        srgb,
        entry.wb_gains,
    )
}

/// Loads every entry, resized and cropped to `size` when given. Images
/// smaller than `size` are skipped with a warning.
pub fn load_pairs(entries: &[ManifestEntry], size: Option<usize>) -> Result<Vec<ImagePair>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let pair = load_pair(e)?;
        match size {
            Some(s) => out.extend(preprocess(pair, s)?),
            None => out.push(pair),
        }
    }
    Ok(out)
}

/// Orients a pair for training: RAW in and sRGB out, or the reverse.
pub fn to_example(pair: &ImagePair, direction: Direction) -> Result<Example> {
    let (input, target) = match direction {
        Direction::RawToSrgb => (pair.raw.clone(), pair.srgb.clone()),
        Direction::SrgbToRaw => (pair.srgb.clone(), pair.raw.clone()),
    };
    Example::new(pair.id.clone(), input, target)
}

/// Bit depth an image of the given role is stored at.
pub fn input_depth(direction: Direction) -> BitDepth {
    match direction {
        Direction::RawToSrgb => BitDepth::Sixteen,
        Direction::SrgbToRaw => BitDepth::Eight,
    }
}

pub fn output_depth(direction: Direction) -> BitDepth {
    match direction {
        Direction::RawToSrgb => BitDepth::Eight,
        Direction::SrgbToRaw => BitDepth::Sixteen,
    }
}

//! Replacing an image's global histogram context with another image's.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::pyramid::PyramidFeatures;
use crate::tensor::{Shape, Tensor};

/// Which histogram channels are taken from the source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapChannels {
    /// Lightness bins only; chromaticity bins stay the target's.
    Luminance,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwapOptions {
    pub channels: SwapChannels,
    /// Also replace the three local scales (source and target must then
    /// share a size).
    pub all_scales: bool,
}

impl Default for SwapOptions {
    fn default() -> Self {
        SwapOptions {
            channels: SwapChannels::Luminance,
            all_scales: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SwapResult {
    /// Target rendered under the source's context.
    pub manipulated: Tensor<f32>,
    /// Target rendered under its own context.
    pub baseline: Tensor<f32>,
    /// Per-pixel mean absolute channel difference, `(1, h, w, 1)`.
    pub difference: Tensor<f32>,
}

impl SwapResult {
    pub fn max_difference(&self) -> f32 {
        self.difference.data().iter().cloned().fold(0.0, f32::max)
    }
}

fn replace_channels(dst: &mut Tensor<f32>, src: &Tensor<f32>, channels: std::ops::Range<usize>) {
    let c = dst.shape().c;
    for (d, s) in dst.data_mut().chunks_mut(c).zip(src.data().chunks(c)) {
        d[channels.clone()].copy_from_slice(&s[channels.clone()]);
    }
}

/// Context of `target` with the global (and optionally local) histogram
/// features taken from `source`.
pub fn swapped_context(
    source: &PyramidFeatures<f32>,
    target: &PyramidFeatures<f32>,
    bins: usize,
    opts: SwapOptions,
) -> Result<PyramidFeatures<f32>> {
    let hc = target.channels();
    let range = match opts.channels {
        SwapChannels::Luminance => 0..bins,
        SwapChannels::All => 0..hc,
    };
    let mut out = target.clone();
    let scales: Vec<usize> = if opts.all_scales {
        (0..out.scales.len()).collect()
    } else {
        vec![out.scales.len() - 1]
    };
    for k in scales {
        let (src, dst) = (&source.scales[k], &mut out.scales[k]);
        if src.shape() != dst.shape() {
            return Err(Error::config(format!(
                "cannot swap scale {k}: source {} and target {} differ; swap the global scale only",
                src.shape(),
                dst.shape()
            )));
        }
        replace_channels(dst, src, range.clone());
    }
    Ok(out)
}

/// Renders `target` with `source`'s global histogram features. For models
/// without histogram context both predictions are the same.
pub fn swap_global_histogram(
    params: &ModelParams<f32>,
    source: &Tensor<f32>,
    target: &Tensor<f32>,
    opts: SwapOptions,
) -> Result<SwapResult> {
    for (what, t) in [("source", source), ("target", target)] {
        if t.shape().n != 1 {
            return Err(Error::config(format!(
                "{what} must be a single image, got {}",
                t.shape()
            )));
        }
    }
    let target_ctx = params.context(target)?;
    let baseline = params.forward_with_context(target, target_ctx.as_ref())?;
    let manipulated = match (&target_ctx, params.context(source)?) {
        (Some(t), Some(s)) => {
            let ctx = swapped_context(&s, t, params.config.bins, opts)?;
            params.forward_with_context(target, Some(&ctx))?
        }
        _ => params.forward_with_context(target, None)?,
    };
    let s = baseline.shape();
    let diff = manipulated
        .data()
        .chunks(3)
        .zip(baseline.data().chunks(3))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f32>() / 3.0)
        .collect();
    Ok(SwapResult {
        manipulated,
        baseline,
        difference: Tensor::from_vec(Shape::new(1, s.h, s.w, 1)?, diff)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Direction, NetworkConfig};
    use crate::tensor::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(arch: Architecture) -> ModelParams<f32> {
        let cfg = NetworkConfig::new(Direction::RawToSrgb, arch).with_hidden(6);
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn img(seed: u64, h: usize, lo: f64, hi: f64) -> Tensor<f32> {
        random_tensor(
            Shape::new(1, h, h, 3).unwrap(),
            lo,
            hi,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .cast()
    }

    #[test]
    fn identity_swap_is_exactly_zero() {
        let p = model(Architecture::Scene);
        let a = img(2, 16, 0.0, 1.0);
        let r = swap_global_histogram(&p, &a, &a, SwapOptions::default()).unwrap();
        assert!(r.difference.data().iter().all(|&d| d == 0.0));
        assert_eq!(r.manipulated, r.baseline);
    }

    #[test]
    fn luminance_swap_keeps_chroma_bins() {
        let p = model(Architecture::Scene);
        let a = p.context(&img(3, 16, 0.0, 0.3)).unwrap().unwrap();
        let b = p.context(&img(4, 16, 0.5, 1.0)).unwrap().unwrap();
        let s = swapped_context(&a, &b, 6, SwapOptions::default()).unwrap();
        let (g, ga, gb) = (s.global().data(), a.global().data(), b.global().data());
        assert_eq!(&g[..6], &ga[..6]);
        assert_eq!(&g[6..], &gb[6..]);
        assert_ne!(&ga[..6], &gb[..6]);
        assert_eq!(s.scales[..3], b.scales[..3]);
        let all = swapped_context(
            &a,
            &b,
            6,
            SwapOptions {
                channels: SwapChannels::All,
                all_scales: true,
            },
        )
        .unwrap();
        assert_eq!(all.scales, a.scales);
    }

    #[test]
    fn different_sizes_swap_globally_only() {
        let p = model(Architecture::Scene);
        let a = img(5, 24, 0.0, 0.4);
        let b = img(6, 16, 0.3, 1.0);
        let r = swap_global_histogram(&p, &a, &b, SwapOptions::default()).unwrap();
        assert!(r.max_difference() > 0.0);
        assert_eq!(r.difference.shape(), Shape::new(1, 16, 16, 1).unwrap());
        let opts = SwapOptions {
            all_scales: true,
            ..Default::default()
        };
        assert!(swap_global_histogram(&p, &a, &b, opts).is_err());
    }

    #[test]
    fn baseline_models_ignore_the_swap() {
        let p = model(Architecture::Mlp);
        let r = swap_global_histogram(
            &p,
            &img(7, 16, 0.0, 0.4),
            &img(8, 16, 0.3, 1.0),
            SwapOptions::default(),
        )
        .unwrap();
        assert_eq!(r.manipulated, r.baseline);
        assert_eq!(r.max_difference(), 0.0);
    }
}

//! Four-scale pyramid of pooled histogram maps and per-pixel context
//! assembly.
//!
//! Scales are produced by cascading 3x3 average pools with strides 1, 2, 2
//! and a final global average. A pixel `(y, x)` reads scale one at `(y, x)`,
//! scale two at `(y/2, x/2)`, scale three at `(y/4, x/4)` (integer division)
//! and the global vector. Its feature vector is
//! `[rgb, scale1, scale2, scale3, global]`.

use crate::error::{Error, Result};
use crate::tensor::{
    avgpool_backward, avgpool_forward, global_avgpool_backward, global_avgpool_forward, PoolGeometry, Real,
    Shape, Tensor,
};

pub const SCALES: usize = 4;
/// Side length of training patches.
pub const PATCH_SIZE: usize = 32;
const MIN_SIDE: usize = 4;

/// Number of assembled feature channels for `hist_channels` histogram maps.
pub fn feature_channels(hist_channels: usize) -> usize {
    3 + SCALES * hist_channels
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures<T = f32> {
    /// Local scales at strides 1, 2, 4, then the `(n, 1, 1, c)` global scale.
    pub scales: [Tensor<T>; SCALES],
}

impl<T: Real> PyramidFeatures<T> {
    pub fn global(&self) -> &Tensor<T> {
        &self.scales[SCALES - 1]
    }

    pub fn global_mut(&mut self) -> &mut Tensor<T> {
        &mut self.scales[SCALES - 1]
    }

    pub fn channels(&self) -> usize {
        self.scales[0].shape().c
    }

    pub fn shapes(&self) -> [Shape; SCALES] {
        [0, 1, 2, 3].map(|i| self.scales[i].shape())
    }

    pub fn zeros(shapes: [Shape; SCALES]) -> Self {
        PyramidFeatures {
            scales: shapes.map(Tensor::zeros),
        }
    }
}

/// Square crop of one batch item in full-resolution coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub item: usize,
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

impl PatchRect {
    pub fn new(item: usize, y: usize, x: usize) -> Self {
        PatchRect {
            item,
            y,
            x,
            size: PATCH_SIZE,
        }
    }

    pub fn with_size(item: usize, y: usize, x: usize, size: usize) -> Self {
        PatchRect { item, y, x, size }
    }

    pub fn check(&self, image: Shape) -> Result<()> {
        if self.item >= image.n
            || self.size == 0
            || self.y + self.size > image.h
            || self.x + self.size > image.w
        {
            return Err(Error::Index(format!(
                "patch {}x{} at ({}, {}) of item {} is outside image batch {image}",
                self.size, self.size, self.y, self.x, self.item
            )));
        }
        Ok(())
    }
}

/// Builds the pyramid from a `(n, h, w, c)` histogram map.
pub fn build_pyramid<T: Real>(hist: &Tensor<T>) -> Result<PyramidFeatures<T>> {
    let s = hist.shape();
    if s.h < MIN_SIDE || s.w < MIN_SIDE {
        return Err(Error::config(format!(
            "pyramid needs images of at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            s.h, s.w
        )));
    }
    let s1 = avgpool_forward(hist, 1)?;
    let s2 = avgpool_forward(&s1, 2)?;
    let s3 = avgpool_forward(&s2, 2)?;
    let global = global_avgpool_forward(&s3);
    Ok(PyramidFeatures {
        scales: [s1, s2, s3, global],
    })
}

/// Propagates per-scale gradients back to the histogram map.
pub fn pyramid_backward<T: Real>(hist_shape: Shape, grads: &PyramidFeatures<T>) -> Result<Tensor<T>> {
    let g1 = PoolGeometry::new(hist_shape, 1)?;
    let g2 = PoolGeometry::new(g1.output(), 2)?;
    let g3 = PoolGeometry::new(g2.output(), 2)?;
    let mut d3 = global_avgpool_backward(&grads.scales[3], g3.output())?;
    add_into(&mut d3, &grads.scales[2])?;
    let mut d2 = avgpool_backward(&d3, &g3)?;
    add_into(&mut d2, &grads.scales[1])?;
    let mut d1 = avgpool_backward(&d2, &g2)?;
    add_into(&mut d1, &grads.scales[0])?;
    avgpool_backward(&d1, &g1)
}

fn add_into<T: Real>(acc: &mut Tensor<T>, other: &Tensor<T>) -> Result<()> {
    other.expect_shape(acc.shape(), "pyramid gradient")?;
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
    Ok(())
}

fn check_pairing<T: Real>(pyr: &PyramidFeatures<T>, rgb: &Tensor<T>) -> Result<()> {
    let s = rgb.shape();
    let p = pyr.scales[0].shape();
    if s.c != 3 || (s.n, s.h, s.w) != (p.n, p.h, p.w) {
        return Err(Error::config(format!(
            "rgb image {s} does not match pyramid base {p}"
        )));
    }
    Ok(())
}

/// Features of the `h x w` region at `(y0, x0)` of item `n`; positions outside
/// the image are left untouched (zero) in `out`.
fn assemble_region<T: Real>(
    pyr: &PyramidFeatures<T>,
    rgb: &Tensor<T>,
    n: usize,
    (y0, x0): (isize, isize),
    (h, w): (usize, usize),
    out: &mut [T],
) {
    let s = rgb.shape();
    let hc = pyr.channels();
    let c = feature_channels(hc);
    let global = pyr.global().pixel(n, 0, 0);
    for py in 0..h {
        let y = y0 + py as isize;
        if y < 0 || y >= s.h as isize {
            continue;
        }
        let y = y as usize;
        for px in 0..w {
            let x = x0 + px as isize;
            if x < 0 || x >= s.w as isize {
                continue;
            }
            let x = x as usize;
            let dst = &mut out[(py * w + px) * c..(py * w + px + 1) * c];
            dst[..3].copy_from_slice(rgb.pixel(n, y, x));
            dst[3..3 + hc].copy_from_slice(pyr.scales[0].pixel(n, y, x));
            dst[3 + hc..3 + 2 * hc].copy_from_slice(pyr.scales[1].pixel(n, y / 2, x / 2));
            dst[3 + 2 * hc..3 + 3 * hc].copy_from_slice(pyr.scales[2].pixel(n, y / 4, x / 4));
            dst[3 + 3 * hc..].copy_from_slice(global);
        }
    }
}

fn assemble_region_backward<T: Real>(
    grad: &[T],
    n: usize,
    (y0, x0): (isize, isize),
    (h, w): (usize, usize),
    pyr: &mut PyramidFeatures<T>,
    rgb: &mut Tensor<T>,
) {
    let s = rgb.shape();
    let hc = pyr.channels();
    let c = feature_channels(hc);
    for py in 0..h {
        let y = y0 + py as isize;
        if y < 0 || y >= s.h as isize {
            continue;
        }
        let y = y as usize;
        for px in 0..w {
            let x = x0 + px as isize;
            if x < 0 || x >= s.w as isize {
                continue;
            }
            let x = x as usize;
            let g = &grad[(py * w + px) * c..(py * w + px + 1) * c];
            accumulate(rgb.pixel_mut(n, y, x), &g[..3]);
            accumulate(pyr.scales[0].pixel_mut(n, y, x), &g[3..3 + hc]);
            accumulate(pyr.scales[1].pixel_mut(n, y / 2, x / 2), &g[3 + hc..3 + 2 * hc]);
            accumulate(
                pyr.scales[2].pixel_mut(n, y / 4, x / 4),
                &g[3 + 2 * hc..3 + 3 * hc],
            );
            accumulate(pyr.scales[3].pixel_mut(n, 0, 0), &g[3 + 3 * hc..]);
        }
    }
}

#[inline]
fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Per-pixel features of one patch, `(1, size, size, 3 + 4c)`.
pub fn assemble_features<T: Real>(
    pyr: &PyramidFeatures<T>,
    rgb: &Tensor<T>,
    rect: PatchRect,
) -> Result<Tensor<T>> {
    assemble_patches(pyr, rgb, &[rect], 0)
}

/// Features for every pixel of every image, `(n, h, w, 3 + 4c)`.
pub fn assemble_full<T: Real>(pyr: &PyramidFeatures<T>, rgb: &Tensor<T>) -> Result<Tensor<T>> {
    check_pairing(pyr, rgb)?;
    let s = rgb.shape();
    let out_shape = s.with_channels(feature_channels(pyr.channels()));
    let mut out = Tensor::zeros(out_shape);
    let len = out_shape.item_len();
    for n in 0..s.n {
        assemble_region(
            pyr,
            rgb,
            n,
            (0, 0),
            (s.h, s.w),
            &mut out.data_mut()[n * len..(n + 1) * len],
        );
    }
    Ok(out)
}

/// Features for each patch grown by `halo` pixels on every side,
/// `(patches, size + 2 halo, size + 2 halo, 3 + 4c)`. Halo positions outside
/// the image are zero.
pub fn assemble_patches<T: Real>(
    pyr: &PyramidFeatures<T>,
    rgb: &Tensor<T>,
    rects: &[PatchRect],
    halo: usize,
) -> Result<Tensor<T>> {
    check_pairing(pyr, rgb)?;
    let size = common_size(rects)?;
    for r in rects {
        r.check(rgb.shape())?;
    }
    let ext = size + 2 * halo;
    let out_shape = Shape::new(rects.len(), ext, ext, feature_channels(pyr.channels()))?;
    let mut out = Tensor::zeros(out_shape);
    let len = out_shape.item_len();
    for (i, r) in rects.iter().enumerate() {
        let origin = (r.y as isize - halo as isize, r.x as isize - halo as isize);
        assemble_region(
            pyr,
            rgb,
            r.item,
            origin,
            (ext, ext),
            &mut out.data_mut()[i * len..(i + 1) * len],
        );
    }
    Ok(out)
}

/// Scatters patch-feature gradients into per-scale and rgb gradients, in
/// patch order. Every pyramid cell read by several patch pixels receives the
/// sum of their gradients.
pub fn assemble_backward<T: Real>(
    grad: &Tensor<T>,
    rects: &[PatchRect],
    halo: usize,
    pyramid_shapes: [Shape; SCALES],
    rgb_shape: Shape,
) -> Result<(PyramidFeatures<T>, Tensor<T>)> {
    let size = common_size(rects)?;
    let ext = size + 2 * halo;
    let hc = pyramid_shapes[0].c;
    grad.expect_shape(
        Shape::new(rects.len(), ext, ext, feature_channels(hc))?,
        "assemble_backward grad",
    )?;
    let mut gp = PyramidFeatures::zeros(pyramid_shapes);
    let mut grgb = Tensor::zeros(rgb_shape);
    let len = grad.shape().item_len();
    for (i, r) in rects.iter().enumerate() {
        r.check(rgb_shape)?;
        let origin = (r.y as isize - halo as isize, r.x as isize - halo as isize);
        assemble_region_backward(
            &grad.data()[i * len..(i + 1) * len],
            r.item,
            origin,
            (ext, ext),
            &mut gp,
            &mut grgb,
        );
    }
    Ok((gp, grgb))
}

/// Backward of [`assemble_full`].
pub fn assemble_full_backward<T: Real>(
    grad: &Tensor<T>,
    pyramid_shapes: [Shape; SCALES],
    rgb_shape: Shape,
) -> Result<(PyramidFeatures<T>, Tensor<T>)> {
    let hc = pyramid_shapes[0].c;
    grad.expect_shape(
        rgb_shape.with_channels(feature_channels(hc)),
        "assemble_full_backward grad",
    )?;
    let mut gp = PyramidFeatures::zeros(pyramid_shapes);
    let mut grgb = Tensor::zeros(rgb_shape);
    let len = grad.shape().item_len();
    for n in 0..rgb_shape.n {
        assemble_region_backward(
            &grad.data()[n * len..(n + 1) * len],
            n,
            (0, 0),
            (rgb_shape.h, rgb_shape.w),
            &mut gp,
            &mut grgb,
        );
    }
    Ok((gp, grgb))
}

fn common_size(rects: &[PatchRect]) -> Result<usize> {
    let first = rects.first().ok_or_else(|| Error::config("patch set is empty"))?;
    if rects.iter().any(|r| r.size != first.size) {
        return Err(Error::config("all patches in a set must share one size"));
    }
    Ok(first.size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, h: usize, w: usize, c: usize) -> Shape {
        Shape::new(n, h, w, c).unwrap()
    }

    fn random_inputs(seed: u64, h: usize, w: usize) -> (PyramidFeatures<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hist = random_tensor(shape(2, h, w, 18), 0.0, 1.0, &mut rng);
        let rgb = random_tensor(shape(2, h, w, 3), 0.0, 1.0, &mut rng);
        (build_pyramid(&hist).unwrap(), rgb)
    }

    #[test]
    fn scale_shapes_follow_stride_chain() {
        let hist = Tensor::<f32>::zeros(shape(1, 512, 512, 18));
        let p = build_pyramid(&hist).unwrap();
        let sides: Vec<_> = p.scales.iter().map(|t| t.shape().h).collect();
        assert_eq!(sides, vec![512, 256, 128, 1]);
        assert!(p.scales.iter().all(|t| t.shape().c == 18));
        assert!(build_pyramid(&Tensor::<f32>::zeros(shape(1, 3, 8, 18))).is_err());
    }

    #[test]
    fn constant_map_stays_constant_and_global_is_mean() {
        let p = build_pyramid(&Tensor::filled(shape(1, 9, 13, 18), 0.25f64)).unwrap();
        for s in &p.scales {
            assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
        let (q, _) = random_inputs(3, 10, 12);
        assert_eq!(q.global(), &global_avgpool_forward(&q.scales[2]));
    }

    #[test]
    fn feature_channel_count() {
        assert_eq!(feature_channels(18), 75);
        let (p, rgb) = random_inputs(1, 40, 36);
        let f = assemble_features(&p, &rgb, PatchRect::new(1, 4, 2)).unwrap();
        assert_eq!(f.shape(), shape(1, 32, 32, 75));
        assert!(assemble_features(&p, &rgb, PatchRect::new(1, 9, 0)).is_err());
        assert!(assemble_features(&p, &rgb, PatchRect::new(2, 0, 0)).is_err());
    }

    #[test]
    fn constant_pyramid_gives_constant_context() {
        let p = build_pyramid(&Tensor::filled(shape(1, 34, 34, 18), 0.5f64)).unwrap();
        let rgb = Tensor::filled(shape(1, 34, 34, 3), 0.1);
        let f = assemble_features(&p, &rgb, PatchRect::new(0, 1, 2)).unwrap();
        for px in f.data().chunks(75) {
            assert!(px[..3].iter().all(|&v| v == 0.1));
            assert!(px[3..].iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn coarse_features_shared_within_stride_cell() {
        let (p, rgb) = random_inputs(5, 16, 16);
        let f = assemble_full(&p, &rgb).unwrap();
        // x = 4 and x = 5 share floor(x/2) and floor(x/4)
        let a = f.pixel(0, 6, 4);
        let b = f.pixel(0, 6, 5);
        assert_eq!(&a[21..], &b[21..]);
        assert_ne!(&a[3..21], &b[3..21]);
    }

    #[test]
    fn global_gradient_accumulates_over_patch() {
        let (p, rgb) = random_inputs(2, 32, 32);
        let rect = PatchRect::new(0, 0, 0);
        let mut g = Tensor::<f64>::zeros(shape(1, 32, 32, 75));
        for px in g.data_mut().chunks_mut(75) {
            px[57..].iter_mut().for_each(|v| *v = 1.0);
        }
        let (gp, grgb) = assemble_backward(&g, &[rect], 0, p.shapes(), rgb.shape()).unwrap();
        assert!(gp.global().pixel(0, 0, 0).iter().all(|&v| v == 1024.0));
        assert!(gp.global().pixel(1, 0, 0).iter().all(|&v| v == 0.0));
        assert!(grgb.data().iter().all(|&v| v == 0.0));

        let zero = Tensor::<f64>::zeros(g.shape());
        let (gz, _) = assemble_backward(&zero, &[rect], 0, p.shapes(), rgb.shape()).unwrap();
        assert!(gz.scales.iter().all(|s| s.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn halo_outside_image_is_zero() {
        let (p, rgb) = random_inputs(4, 8, 8);
        let f = assemble_patches(&p, &rgb, &[PatchRect::with_size(0, 0, 0, 4)], 2).unwrap();
        assert_eq!(f.shape(), shape(1, 8, 8, 75));
        assert!(f.pixel(0, 0, 3).iter().all(|&v| v == 0.0));
        assert!(f.pixel(0, 3, 1).iter().all(|&v| v == 0.0));
        assert_eq!(f.pixel(0, 2, 2), assemble_full(&p, &rgb).unwrap().pixel(0, 0, 0));
    }

    #[test]
    fn assemble_backward_is_adjoint_of_forward() {
        // <assemble(P), G> == <P, assemble_backward(G)> for linear assembly
        let (p, rgb) = random_inputs(9, 12, 10);
        let rects = [
            PatchRect::with_size(0, 1, 2, 5),
            PatchRect::with_size(1, 7, 5, 5),
            PatchRect::with_size(0, 1, 3, 5),
        ];
        let f = assemble_patches(&p, &rgb, &rects, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_tensor(f.shape(), -1.0, 1.0, &mut rng);
        let (gp, grgb) = assemble_backward(&g, &rects, 1, p.shapes(), rgb.shape()).unwrap();
        let lhs: f64 = f.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let mut rhs: f64 = rgb.data().iter().zip(grgb.data()).map(|(a, b)| a * b).sum();
        for (s, gs) in p.scales.iter().zip(&gp.scales) {
            rhs += s.data().iter().zip(gs.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        assert!((lhs - rhs).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn full_assembly_equals_tiled_patches(tile in 1usize..5, seed in 0u64..50) {
            let side = tile * 4;
            let (p, rgb) = random_inputs(seed, side, side);
            let full = assemble_full(&p, &rgb).unwrap();
            for ty in 0..4 {
                for tx in 0..4 {
                    let rect = PatchRect::with_size(1, ty * tile, tx * tile, tile);
                    let patch = assemble_patches(&p, &rgb, &[rect], 0).unwrap();
                    for y in 0..tile {
                        for x in 0..tile {
                            prop_assert_eq!(patch.pixel(0, y, x), full.pixel(1, rect.y + y, rect.x + x));
                        }
                    }
                }
            }
        }
    }
}

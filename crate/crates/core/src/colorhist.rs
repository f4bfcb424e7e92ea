//! Lightness/chromaticity decoupling and the learnable histogram layer.
//!
//! Each input channel `k` of the `(L, r, g)` image votes into `B` soft bins
//! with a triangular kernel centred at `centers[k][b]`:
//!
//! ```text
//! vote = max(0, 1 - |x - center| / half_width)     (WidthMode::HalfWidth)
//! vote = max(0, 1 - |x - center| * width)          (WidthMode::Multiplicative)
//! ```
//!
//! Output channel `k * B + b` holds the vote of channel `k` for bin `b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Real, Shape, Tensor};

/// Histogrammed channels: lightness L and chromaticities r, g.
pub const HIST_CHANNELS: usize = 3;
/// Guard added to the chromaticity denominator so black pixels stay finite.
pub const CHROMA_EPSILON: f64 = 1e-8;
/// Smallest width kept after an optimizer step.
pub const MIN_WIDTH: f64 = 1e-3;

/// How the stored width enters the voting kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WidthMode {
    /// Width is the triangle half-width; slope `1 / w`.
    #[default]
    HalfWidth,
    /// Width multiplies the distance; slope `w`.
    Multiplicative,
}

/// Trainable bin centers and widths, each laid out `[channel][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramParams<T = f32> {
    pub bins: usize,
    pub mode: WidthMode,
    pub centers: Vec<T>,
    pub widths: Vec<T>,
}

impl<T: Real> HistogramParams<T> {
    /// Centers evenly spaced on `[0, 1]` with width equal to the spacing, so
    /// that the default half-width kernels tile `[0, 1]` exactly.
    ///
    /// For six bins: centers `0, 0.2, .., 1.0`, widths `0.2`.
    pub fn init_default(bins: usize, mode: WidthMode) -> Result<Self> {
        if bins < 2 {
            return Err(Error::config(format!("histogram needs >= 2 bins, got {bins}")));
        }
        let spacing = 1.0 / (bins - 1) as f64;
        let centers: Vec<T> = (0..HIST_CHANNELS)
            .flat_map(|_| (0..bins).map(move |b| T::from_f64(b as f64 * spacing)))
            .collect();
        let widths = vec![T::from_f64(spacing); HIST_CHANNELS * bins];
        Ok(HistogramParams {
            bins,
            mode,
            centers,
            widths,
        })
    }

    pub fn channels_out(&self) -> usize {
        HIST_CHANNELS * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        let n = HIST_CHANNELS * self.bins;
        if self.centers.len() != n || self.widths.len() != n {
            return Err(Error::config(format!(
                "histogram arrays must have {n} entries, got {} centers / {} widths",
                self.centers.len(),
                self.widths.len()
            )));
        }
        if let Some(w) = self.widths.iter().find(|w| **w <= T::zero() || !w.is_finite()) {
            return Err(Error::config(format!(
                "histogram width must be positive, got {w}"
            )));
        }
        Ok(())
    }

    /// Floors every width at [`MIN_WIDTH`].
    pub fn clamp_widths(&mut self) {
        let floor = T::from_f64(MIN_WIDTH);
        for w in &mut self.widths {
            if *w < floor {
                *w = floor;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> HistogramParams<U> {
        HistogramParams {
            bins: self.bins,
            mode: self.mode,
            centers: self.centers.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            widths: self.widths.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Vote of value `x` for bin `i = k * B + b`.
    #[inline]
    pub fn vote(&self, i: usize, x: T) -> T {
        let d = (x - self.centers[i]).abs();
        let v = match self.mode {
            WidthMode::HalfWidth => T::one() - d / self.widths[i],
            WidthMode::Multiplicative => T::one() - d * self.widths[i],
        };
        v.max(T::zero())
    }

    /// Partial derivatives of one vote w.r.t. `(x, center, width)`.
    ///
    /// Zero outside the support and exactly on the kinks (peak and support
    /// boundary).
    #[inline]
    fn vote_grad(&self, i: usize, x: T) -> (T, T, T) {
        let zero = T::zero();
        let d = x - self.centers[i];
        let ad = d.abs();
        if d == zero {
            return (zero, zero, zero);
        }
        let w = self.widths[i];
        let sign = d.signum();
        match self.mode {
            WidthMode::HalfWidth => {
                if ad >= w {
                    return (zero, zero, zero);
                }
                (-sign / w, sign / w, ad / (w * w))
            }
            WidthMode::Multiplicative => {
                if ad * w >= T::one() {
                    return (zero, zero, zero);
                }
                (-sign * w, sign * w, -ad)
            }
        }
    }
}

/// Gradients of [`hist_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct HistGrads<T = f32> {
    pub input: Tensor<T>,
    pub centers: Vec<T>,
    pub widths: Vec<T>,
}

fn expect_three_channels(s: Shape, what: &str) -> Result<()> {
    if s.c != 3 {
        return Err(Error::config(format!(
            "{what}: expected 3 channels, got shape {s}"
        )));
    }
    Ok(())
}

/// `L = (R+G+B)/3`, `r = R/(R+G+B+eps)`, `g = G/(R+G+B+eps)`.
pub fn rgb_to_lrg<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    expect_three_channels(image.shape(), "rgb_to_lrg")?;
    let eps = T::from_f64(CHROMA_EPSILON);
    let third = T::from_f64(1.0 / 3.0);
    let mut out = Tensor::zeros(image.shape());
    for (dst, src) in out.data_mut().chunks_mut(3).zip(image.data().chunks(3)) {
        let sum = src[0] + src[1] + src[2];
        let d = sum + eps;
        dst[0] = sum * third;
        dst[1] = src[0] / d;
        dst[2] = src[1] / d;
    }
    Ok(out)
}

pub fn rgb_to_lrg_backward<T: Real>(image: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    expect_three_channels(image.shape(), "rgb_to_lrg_backward")?;
    grad_out.expect_shape(image.shape(), "rgb_to_lrg_backward grad_out")?;
    let eps = T::from_f64(CHROMA_EPSILON);
    let third = T::from_f64(1.0 / 3.0);
    let mut grad = Tensor::zeros(image.shape());
    for ((dst, src), g) in grad
        .data_mut()
        .chunks_mut(3)
        .zip(image.data().chunks(3))
        .zip(grad_out.data().chunks(3))
    {
        let (r, gr) = (src[0], src[1]);
        let d = src[0] + src[1] + src[2] + eps;
        let d2 = d * d;
        // dr/dR = (d - R)/d^2, dr/dG = dr/dB = -R/d^2; g likewise.
        let common = -(g[1] * r + g[2] * gr) / d2;
        let lightness = g[0] * third;
        dst[0] = lightness + g[1] / d + common;
        dst[1] = lightness + g[2] / d + common;
        dst[2] = lightness + common;
    }
    Ok(grad)
}

/// Soft histogram votes, `(n, h, w, 3 * bins)`.
pub fn hist_forward<T: Real>(lrg: &Tensor<T>, params: &HistogramParams<T>) -> Result<Tensor<T>> {
    expect_three_channels(lrg.shape(), "hist_forward")?;
    params.validate()?;
    let b = params.bins;
    let mut out = Tensor::zeros(lrg.shape().with_channels(HIST_CHANNELS * b));
    for (dst, px) in out
        .data_mut()
        .chunks_mut(HIST_CHANNELS * b)
        .zip(lrg.data().chunks(3))
    {
        for (k, &x) in px.iter().enumerate() {
            for bin in 0..b {
                let i = k * b + bin;
                dst[i] = params.vote(i, x);
            }
        }
    }
    Ok(out)
}

/// Gradients w.r.t. the `(L, r, g)` input, bin centers and widths.
///
/// Parameter gradients are accumulated per batch item in pixel order, then
/// combined across items by pairwise summation.
pub fn hist_backward<T: Real>(
    lrg: &Tensor<T>,
    params: &HistogramParams<T>,
    grad_out: &Tensor<T>,
) -> Result<HistGrads<T>> {
    expect_three_channels(lrg.shape(), "hist_backward")?;
    params.validate()?;
    let s = lrg.shape();
    let b = params.bins;
    let nb = HIST_CHANNELS * b;
    grad_out.expect_shape(s.with_channels(nb), "hist_backward grad_out")?;

    let mut input = Tensor::zeros(s);
    let mut center_parts = vec![vec![0.0f64; s.n]; nb];
    let mut width_parts = vec![vec![0.0f64; s.n]; nb];
    let pixels = s.pixels();
    for n in 0..s.n {
        let mut gc = vec![0.0f64; nb];
        let mut gw = vec![0.0f64; nb];
        for p in n * pixels..(n + 1) * pixels {
            let px = &lrg.data()[p * 3..p * 3 + 3];
            let go = &grad_out.data()[p * nb..(p + 1) * nb];
            let gi = &mut input.data_mut()[p * 3..p * 3 + 3];
            for k in 0..HIST_CHANNELS {
                for bin in 0..b {
                    let i = k * b + bin;
                    let g = go[i];
                    if g == T::zero() {
                        continue;
                    }
                    let (dx, dc, dw) = params.vote_grad(i, px[k]);
                    gi[k] += g * dx;
                    gc[i] += (g * dc).as_f64();
                    gw[i] += (g * dw).as_f64();
                }
            }
        }
        for i in 0..nb {
            center_parts[i][n] = gc[i];
            width_parts[i][n] = gw[i];
        }
    }
    let centers = center_parts
        .iter()
        .map(|v| T::from_f64(pairwise_sum(v)))
        .collect();
    let widths = width_parts.iter().map(|v| T::from_f64(pairwise_sum(v))).collect();
    Ok(HistGrads {
        input,
        centers,
        widths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_tensor_op, gradient_check, random_tensor, GradCheckConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn px(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, values.len() / 3, 3).unwrap(), values.to_vec()).unwrap()
    }

    fn single_bin(center: f64, width: f64, mode: WidthMode) -> HistogramParams<f64> {
        let mut p = HistogramParams::<f64>::init_default(2, mode).unwrap();
        p.centers[0] = center;
        p.widths[0] = width;
        p
    }

    #[test]
    fn lrg_examples() {
        let out = rgb_to_lrg(&px(&[0.3, 0.3, 0.3, 0.2, 0.3, 0.5, 0.0, 0.0, 0.0])).unwrap();
        let d = out.data();
        assert!((d[0] - 0.3).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-7 && (d[2] - 1.0 / 3.0).abs() < 1e-7);
        assert!((d[3] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[4] - 0.2).abs() < 1e-7 && (d[5] - 0.3).abs() < 1e-7);
        assert_eq!(&d[6..9], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lrg_backward_hand_values() {
        let x = px(&[0.3, 0.3, 0.3]);
        let on_l = rgb_to_lrg_backward(&x, &px(&[1.0, 0.0, 0.0])).unwrap();
        for v in on_l.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let on_r = rgb_to_lrg_backward(&x, &px(&[0.0, 1.0, 0.0])).unwrap();
        let s = 0.9 + CHROMA_EPSILON;
        assert!((on_r.data()[0] - (s - 0.3) / (s * s)).abs() < 1e-12);
        assert!((on_r.data()[0] - 0.6 / 0.81).abs() < 1e-7);
        assert!((on_r.data()[1] + 0.3 / (s * s)).abs() < 1e-12);
    }

    #[test]
    fn lrg_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(Shape::new(2, 3, 3, 3).unwrap(), 0.05, 1.0, &mut rng);
        let r = check_tensor_op(
            "rgb_to_lrg",
            &x,
            |t| rgb_to_lrg(t).unwrap(),
            |t, g| rgb_to_lrg_backward(t, g).unwrap(),
            &GradCheckConfig::smooth(),
            &mut rng,
        );
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn vote_examples() {
        let p = single_bin(0.4, 0.2, WidthMode::HalfWidth);
        assert_eq!(p.vote(0, 0.4), 1.0);
        assert!((p.vote(0, 0.5) - 0.5).abs() < 1e-12);
        assert!(p.vote(0, 0.6) < 1e-12);
        assert_eq!(p.vote(0, 0.7), 0.0);
        let (dx, dc, dw) = p.vote_grad(0, 0.5);
        assert!((dx + 5.0).abs() < 1e-9 && (dc - 5.0).abs() < 1e-9 && (dw - 2.5).abs() < 1e-9);
        assert_eq!(p.vote_grad(0, 0.4), (0.0, 0.0, 0.0));
        // exact support boundary in binary: |0.75 - 0.5| == 0.25
        let q = single_bin(0.5, 0.25, WidthMode::HalfWidth);
        assert_eq!(q.vote(0, 0.75), 0.0);
        assert_eq!(q.vote_grad(0, 0.75), (0.0, 0.0, 0.0));
        assert_eq!(q.vote_grad(0, 0.9), (0.0, 0.0, 0.0));
    }

    #[test]
    fn multiplicative_reading() {
        let p = single_bin(0.4, 2.0, WidthMode::Multiplicative);
        assert!((p.vote(0, 0.5) - 0.8).abs() < 1e-12);
        assert_eq!(p.vote(0, 1.0), 0.0);
        let (dx, dc, dw) = p.vote_grad(0, 0.5);
        assert_eq!((dx, dc), (-2.0, 2.0));
        assert!((dw + 0.1).abs() < 1e-12);
    }

    #[test]
    fn default_init_values() {
        let p = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).unwrap();
        for k in 0..3 {
            for b in 0..6 {
                assert!((p.centers[k * 6 + b] - 0.2 * b as f64).abs() < 1e-15);
                assert!((p.widths[k * 6 + b] - 0.2).abs() < 1e-15);
            }
        }
        let votes: Vec<f64> = (0..6).map(|b| p.vote(b, 0.1)).collect();
        for (b, v) in votes.iter().enumerate() {
            let expected = if b < 2 { 0.5 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "bin {b}: {v}");
        }
        assert_eq!(p.vote(5, 1.0), 1.0);
    }

    #[test]
    fn partition_of_unity_on_grid() {
        let p = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).unwrap();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            for k in 0..3 {
                let s: f64 = (0..6).map(|b| p.vote(k * 6 + b, x)).sum();
                assert!((s - 1.0).abs() < 1e-6, "x={x} k={k} sum={s}");
            }
        }
    }

    #[test]
    fn clamp_and_validate_widths() {
        let mut p = HistogramParams::<f32>::init_default(6, WidthMode::HalfWidth).unwrap();
        p.widths[3] = -0.5;
        assert!(p.validate().is_err());
        p.clamp_widths();
        assert_eq!(p.widths[3], MIN_WIDTH as f32);
        assert!(p.validate().is_ok());
    }

    /// Random params and inputs with every (value, center) pair at least
    /// `margin` away from a kink.
    fn kink_free_instance(rng: &mut ChaCha8Rng, margin: f64) -> (Tensor<f64>, HistogramParams<f64>) {
        let mut p = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).unwrap();
        for c in &mut p.centers {
            *c += rng.random_range(-0.05..0.05);
        }
        for w in &mut p.widths {
            *w = rng.random_range(0.15..0.3);
        }
        let s = Shape::new(1, 3, 4, 3).unwrap();
        let mut data = Vec::new();
        for i in 0..s.len() {
            let k = i % 3;
            loop {
                let x: f64 = rng.random_range(0.0..1.0);
                let clear = (0..6).all(|b| {
                    let d = (x - p.centers[k * 6 + b]).abs();
                    d > margin && (d - p.widths[k * 6 + b]).abs() > margin
                });
                if clear {
                    data.push(x);
                    break;
                }
            }
        }
        (Tensor::from_vec(s, data).unwrap(), p)
    }

    #[test]
    fn hist_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = GradCheckConfig {
            tolerance: 1e-4,
            ..GradCheckConfig::smooth()
        };
        let (x, p) = kink_free_instance(&mut rng, 10.0 * cfg.epsilon);
        let pc = p.clone();
        let r = check_tensor_op(
            "hist input",
            &x,
            |t| hist_forward(t, &pc).unwrap(),
            |t, g| hist_backward(t, &pc, g).unwrap().input,
            &cfg,
            &mut rng,
        );
        assert!(r.passed(), "{r}");

        let out_shape = x.shape().with_channels(18);
        let proj = random_tensor(out_shape, -1.0, 1.0, &mut rng);
        let grads = hist_backward(&x, &p, &proj).unwrap();
        let loss_with = |centers: &[f64], widths: &[f64]| {
            let mut q = p.clone();
            q.centers = centers.to_vec();
            q.widths = widths.to_vec();
            hist_forward(&x, &q)
                .unwrap()
                .data()
                .iter()
                .zip(proj.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let rc = gradient_check(
            "hist centers",
            &p.centers,
            |c| loss_with(c, &p.widths),
            &grads.centers,
            &cfg,
        );
        assert!(rc.passed(), "{rc}");
        let rw = gradient_check(
            "hist widths",
            &p.widths,
            |w| loss_with(&p.centers, w),
            &grads.widths,
            &cfg,
        );
        assert!(rw.passed(), "{rw}");
    }

    #[test]
    fn duplicated_batch_doubles_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = HistogramParams::<f32>::init_default(6, WidthMode::HalfWidth).unwrap();
        let img = random_tensor(Shape::new(1, 8, 8, 3).unwrap(), 0.0, 1.0, &mut rng).cast::<f32>();
        let lrg = rgb_to_lrg(&img).unwrap();
        let g = random_tensor(lrg.shape().with_channels(18), -1.0, 1.0, &mut rng).cast::<f32>();
        let single = hist_backward(&lrg, &p, &g).unwrap();
        let double = hist_backward(
            &Tensor::stack(&[&lrg, &lrg]).unwrap(),
            &p,
            &Tensor::stack(&[&g, &g]).unwrap(),
        )
        .unwrap();
        for (a, b) in single.centers.iter().zip(&double.centers) {
            assert_eq!(2.0 * a, *b);
        }
        for (a, b) in single.widths.iter().zip(&double.widths) {
            assert_eq!(2.0 * a, *b);
        }
    }

    proptest! {
        #[test]
        fn votes_stay_in_unit_interval(x in -2.0f64..3.0, c in -1.0f64..2.0, w in 1e-3f64..5.0) {
            for mode in [WidthMode::HalfWidth, WidthMode::Multiplicative] {
                let p = single_bin(c, w, mode);
                let v = p.vote(0, x);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn pointwise_under_pixel_permutation(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = HistogramParams::<f64>::init_default(6, WidthMode::HalfWidth).unwrap();
            let x = random_tensor(Shape::new(1, 1, 6, 3).unwrap(), 0.0, 1.0, &mut rng);
            let perm = [3usize, 0, 5, 1, 4, 2];
            let mut permuted = Vec::new();
            for &i in &perm {
                permuted.extend_from_slice(&x.data()[i * 3..i * 3 + 3]);
            }
            let xp = Tensor::from_vec(x.shape(), permuted).unwrap();
            let out = hist_forward(&x, &p).unwrap();
            let outp = hist_forward(&xp, &p).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(&outp.data()[j * 18..(j + 1) * 18], &out.data()[i * 18..(i + 1) * 18]);
            }
        }
    }
}

use super::{pairwise_sum, Real, Shape, Tensor};
use crate::error::{Error, Result};

const WINDOW: usize = 3;

/// Shapes of one 3x3 average pooling call, kept for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub input: Shape,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(input: Shape, stride: usize) -> Result<Self> {
        if !matches!(stride, 1 | 2) {
            return Err(Error::config(format!("pool stride must be 1 or 2, got {stride}")));
        }
        Ok(PoolGeometry { input, stride })
    }

    pub fn output(&self) -> Shape {
        Shape {
            h: self.input.h.div_ceil(self.stride),
            w: self.input.w.div_ceil(self.stride),
            ..self.input
        }
    }

    /// Source row/column for window tap `k` of output index `o`, clamped to
    /// the border (edge replication).
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> usize {
        let i = (o * self.stride + k) as isize - (WINDOW / 2) as isize;
        i.clamp(0, size as isize - 1) as usize
    }
}

/// 3x3 average pooling with edge-replicated borders.
///
/// Output index `o` is centred on input `o * stride`; stride 2 halves each
/// spatial size rounding up.
pub fn avgpool_forward<T: Real>(input: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let geom = PoolGeometry::new(input.shape(), stride)?;
    let s = geom.input;
    let os = geom.output();
    let scale = T::from_f64(1.0 / (WINDOW * WINDOW) as f64);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let o = out.pixel_mut(n, oy, ox);
                for ky in 0..WINDOW {
                    let iy = geom.source(oy, ky, s.h);
                    for kx in 0..WINDOW {
                        let ix = geom.source(ox, kx, s.w);
                        for (acc, &v) in o.iter_mut().zip(input.pixel(n, iy, ix)) {
                            *acc += v;
                        }
                    }
                }
                for v in o.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
    Ok(out)
}

/// Spreads each output gradient evenly over its window; replicated border
/// taps accumulate onto the edge pixel they copied.
pub fn avgpool_backward<T: Real>(grad_out: &Tensor<T>, geom: &PoolGeometry) -> Result<Tensor<T>> {
    grad_out.expect_shape(geom.output(), "avgpool_backward grad_out")?;
    let s = geom.input;
    let os = geom.output();
    let scale = T::from_f64(1.0 / (WINDOW * WINDOW) as f64);
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let g: Vec<T> = grad_out.pixel(n, oy, ox).iter().map(|&v| v * scale).collect();
                for ky in 0..WINDOW {
                    let iy = geom.source(oy, ky, s.h);
                    for kx in 0..WINDOW {
                        let ix = geom.source(ox, kx, s.w);
                        for (acc, &v) in grad.pixel_mut(n, iy, ix).iter_mut().zip(&g) {
                            *acc += v;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Per-channel spatial mean, `(n, 1, 1, c)`, using pairwise summation.
pub fn global_avgpool_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape { h: 1, w: 1, ..s });
    let count = T::from_f64(s.pixels() as f64);
    let mut column: Vec<T> = Vec::with_capacity(s.pixels());
    for n in 0..s.n {
        let item = input.item(n);
        for c in 0..s.c {
            column.clear();
            column.extend(item.iter().skip(c).step_by(s.c));
            *out.at_mut(n, 0, 0, c) = pairwise_sum(&column) / count;
        }
    }
    out
}

pub fn global_avgpool_backward<T: Real>(grad_out: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    grad_out.expect_shape(Shape { h: 1, w: 1, ..input }, "global_avgpool_backward grad_out")?;
    let count = T::from_f64(input.pixels() as f64);
    let mut grad = Tensor::zeros(input);
    for n in 0..input.n {
        let g: Vec<T> = grad_out.pixel(n, 0, 0).iter().map(|&v| v / count).collect();
        for px in grad.data_mut()[n * input.item_len()..(n + 1) * input.item_len()].chunks_mut(input.c) {
            px.copy_from_slice(&g);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_tensor_op, random_tensor, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, h: usize, w: usize, c: usize) -> Shape {
        Shape::new(n, h, w, c).unwrap()
    }

    /// Brute-force oracle: materialize the edge-replicated padded image and
    /// average explicit 3x3 blocks.
    fn padded_average(values: &[f64], h: usize, w: usize, stride: usize) -> Vec<f64> {
        let ph = h + 2;
        let pw = w + 2;
        let mut padded = vec![0.0; ph * pw];
        for y in 0..ph {
            for x in 0..pw {
                let sy = (y as isize - 1).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize - 1).clamp(0, w as isize - 1) as usize;
                padded[y * pw + x] = values[sy * w + sx];
            }
        }
        let mut out = Vec::new();
        for oy in (0..h).step_by(stride) {
            for ox in (0..w).step_by(stride) {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += padded[(oy + dy) * pw + ox + dx];
                    }
                }
                out.push(s / 9.0);
            }
        }
        out
    }

    #[test]
    fn constant_is_preserved() {
        for stride in [1, 2] {
            let t = Tensor::filled(shape(2, 5, 7, 3), 0.375f64);
            let out = avgpool_forward(&t, stride).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.375).abs() < 1e-15));
        }
    }

    #[test]
    fn two_by_two_stride_two_matches_replicated_window() {
        let t = Tensor::from_vec(shape(1, 2, 2, 1), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool_forward(&t, 2).unwrap();
        assert_eq!(out.shape(), shape(1, 1, 1, 1));
        let oracle = padded_average(&[1.0, 2.0, 3.0, 4.0], 2, 2, 2);
        // Replicated window rows/cols weight pixel (0,0) four times: 18 / 9.
        assert_eq!(oracle, vec![2.0]);
        assert!((out.data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_padded_oracle_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(5, 7), (6, 6), (1, 3)] {
            let t = random_tensor(shape(1, h, w, 1), 0.0, 1.0, &mut rng);
            for stride in [1, 2] {
                let out = avgpool_forward(&t, stride).unwrap();
                let oracle = padded_average(t.data(), h, w, stride);
                for (a, b) in out.data().iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn stride_chain_shapes() {
        let g1 = PoolGeometry::new(shape(1, 512, 512, 18), 1).unwrap();
        let g2 = PoolGeometry::new(g1.output(), 2).unwrap();
        let g3 = PoolGeometry::new(g2.output(), 2).unwrap();
        assert_eq!(g1.output().h, 512);
        assert_eq!(g2.output().h, 256);
        assert_eq!(g3.output().h, 128);
        assert!(PoolGeometry::new(shape(1, 4, 4, 1), 3).is_err());
    }

    #[test]
    fn ones_backward_gives_one_in_interior() {
        let geom = PoolGeometry::new(shape(1, 5, 5, 1), 1).unwrap();
        let g = avgpool_backward(&Tensor::filled(geom.output(), 1.0f64), &geom).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                assert!((g.at(0, y, x, 0) - 1.0).abs() < 1e-15);
            }
        }
        // Total mass is conserved.
        let total: f64 = g.data().iter().sum();
        assert!((total - 25.0).abs() < 1e-12);
        let zero = avgpool_backward(&Tensor::<f64>::zeros(geom.output()), &geom).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_geometry() {
        let geom = PoolGeometry::new(shape(1, 5, 5, 1), 2).unwrap();
        assert!(avgpool_backward(&Tensor::<f64>::zeros(shape(1, 5, 5, 1)), &geom).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for stride in [1, 2] {
            let x = random_tensor(shape(2, 5, 6, 2), -1.0, 1.0, &mut rng);
            let geom = PoolGeometry::new(x.shape(), stride).unwrap();
            let r = check_tensor_op(
                "avgpool",
                &x,
                |t| avgpool_forward(t, stride).unwrap(),
                |_, g| avgpool_backward(g, &geom).unwrap(),
                &GradCheckConfig::smooth(),
                &mut rng,
            );
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn global_pool_mean_and_spread() {
        let t = Tensor::from_vec(shape(1, 2, 2, 1), vec![0.0f64, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(global_avgpool_forward(&t).data(), &[0.5]);
        let c = Tensor::filled(shape(1, 3, 3, 2), 0.7f64);
        assert!(global_avgpool_forward(&c)
            .data()
            .iter()
            .all(|&v| (v - 0.7).abs() < 1e-15));

        let s = shape(1, 4, 4, 1);
        let g = global_avgpool_backward(&Tensor::filled(Shape { h: 1, w: 1, ..s }, 1.0f64), s).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0 / 16.0));
    }

    #[test]
    fn global_pool_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(shape(2, 4, 3, 3), -1.0, 1.0, &mut rng);
        let s = x.shape();
        let r = check_tensor_op(
            "global_avgpool",
            &x,
            global_avgpool_forward,
            |_, g| global_avgpool_backward(g, s).unwrap(),
            &GradCheckConfig::smooth(),
            &mut rng,
        );
        assert!(r.passed(), "{r}");
    }
}

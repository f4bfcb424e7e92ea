use rand::Rng;
use rayon::prelude::*;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that stride 1 preserves the spatial size.
    Same,
    /// No padding; only fully covered windows produce outputs.
    Valid,
}

/// Convolution weights with kernel layout `(kh, kw, c_in, c_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter<T = f32> {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: Padding,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvFilter<T> {
    /// Zero-initialized filter. Kernel sizes are restricted to 1 and 3.
    pub fn zeros(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if !matches!(kh, 1 | 3) || !matches!(kw, 1 | 3) {
            return Err(Error::config(format!(
                "kernel size must be 1 or 3, got {kh}x{kw}"
            )));
        }
        if c_in == 0 || c_out == 0 || stride == 0 {
            return Err(Error::config(format!(
                "invalid conv dims c_in={c_in} c_out={c_out} stride={stride}"
            )));
        }
        Ok(ConvFilter {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            padding,
            kernel: vec![T::zero(); kh * kw * c_in * c_out],
            bias: vec![T::zero(); c_out],
        })
    }

    /// Square stride-1 zero-pad-same filter with Kaiming-uniform weights
    /// (bound `sqrt(6 / fan_in)`) and zero bias.
    pub fn kaiming<R: Rng + ?Sized>(k: usize, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let mut f = Self::zeros(k, k, c_in, c_out, 1, Padding::Same)?;
        let bound = (6.0 / (k * k * c_in) as f64).sqrt();
        for w in &mut f.kernel {
            *w = T::from_f64(rng.random_range(-bound..bound));
        }
        Ok(f)
    }

    #[inline]
    pub fn kernel_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.c_in + ci) * self.c_out + co
    }

    /// Spatial output size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h.div_ceil(self.stride), w.div_ceil(self.stride))),
            Padding::Valid => {
                if h < self.kh || w < self.kw {
                    return Err(Error::config(format!(
                        "valid {}x{} conv needs input >= kernel, got {h}x{w}",
                        self.kh, self.kw
                    )));
                }
                Ok(((h - self.kh) / self.stride + 1, (w - self.kw) / self.stride + 1))
            }
        }
    }

    /// Pixels of context on each side that an output pixel reads.
    pub fn halo(&self) -> usize {
        self.kh.max(self.kw) / 2
    }

    fn offsets(&self) -> (isize, isize) {
        match self.padding {
            Padding::Same => ((self.kh / 2) as isize, (self.kw / 2) as isize),
            Padding::Valid => (0, 0),
        }
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.c_in {
            return Err(Error::config(format!(
                "conv expects {} input channels, input has shape {s}",
                self.c_in
            )));
        }
        if self.kernel.len() != self.kh * self.kw * self.c_in * self.c_out || self.bias.len() != self.c_out {
            return Err(Error::config(format!(
                "conv parameter arrays do not match {}x{}x{}x{}",
                self.kh, self.kw, self.c_in, self.c_out
            )));
        }
        Ok(())
    }

    /// Kernel re-laid out as `(kh, kw, c_out, c_in)` for the input-gradient pass.
    fn transposed_kernel(&self) -> Vec<T> {
        let mut t = vec![T::zero(); self.kernel.len()];
        for tap in 0..self.kh * self.kw {
            for ci in 0..self.c_in {
                for co in 0..self.c_out {
                    t[(tap * self.c_out + co) * self.c_in + ci] =
                        self.kernel[(tap * self.c_in + ci) * self.c_out + co];
                }
            }
        }
        t
    }
}

struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    off_y: isize,
    off_x: isize,
}

impl Geometry {
    fn new<T: Real>(f: &ConvFilter<T>, s: Shape) -> Result<Self> {
        let (oh, ow) = f.output_hw(s.h, s.w)?;
        let (off_y, off_x) = f.offsets();
        Ok(Geometry {
            h: s.h,
            w: s.w,
            oh,
            ow,
            off_y,
            off_x,
        })
    }

    #[inline]
    fn source(&self, o: usize, k: usize, stride: usize, off: isize, size: usize) -> Option<usize> {
        let i = (o * stride + k) as isize - off;
        (i >= 0 && (i as usize) < size).then_some(i as usize)
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, filter: &ConvFilter<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    filter.check_input(s)?;
    let g = Geometry::new(filter, s)?;
    let out_shape = Shape::new(s.n, g.oh, g.ow, filter.c_out)?;
    let mut out = vec![T::zero(); out_shape.len()];
    let item_len = out_shape.item_len();
    out.par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, out_item)| forward_item(input.item(n), filter, &g, out_item));
    Tensor::from_vec(out_shape, out)
}

fn forward_item<T: Real>(input: &[T], f: &ConvFilter<T>, g: &Geometry, out: &mut [T]) {
    let (cin, cout) = (f.c_in, f.c_out);
    let tap_len = cin * cout;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * cout..][..cout];
            o.copy_from_slice(&f.bias);
            for ky in 0..f.kh {
                let Some(iy) = g.source(oy, ky, f.stride, g.off_y, g.h) else {
                    continue;
                };
                for kx in 0..f.kw {
                    let Some(ix) = g.source(ox, kx, f.stride, g.off_x, g.w) else {
                        continue;
                    };
                    let px = &input[(iy * g.w + ix) * cin..][..cin];
                    let wtap = &f.kernel[(ky * f.kw + kx) * tap_len..][..tap_len];
                    for (ci, &v) in px.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let wrow = &wtap[ci * cout..(ci + 1) * cout];
                        for (acc, &wv) in o.iter_mut().zip(wrow) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    filter: &ConvFilter<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let (gi, grads) = backward_impl(input, filter, grad_out, true)?;
    Ok((gi.expect("input gradient requested"), grads))
}

pub(crate) fn backward_impl<T: Real>(
    input: &Tensor<T>,
    filter: &ConvFilter<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, ConvGrads<T>)> {
    let s = input.shape();
    filter.check_input(s)?;
    let g = Geometry::new(filter, s)?;
    let expected = Shape::new(s.n, g.oh, g.ow, filter.c_out)?;
    grad_out.expect_shape(expected, "conv2d_backward grad_out")?;

    let wt = if want_input {
        filter.transposed_kernel()
    } else {
        Vec::new()
    };
    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..s.n)
        .into_par_iter()
        .map(|n| backward_item(input.item(n), grad_out.item(n), filter, &wt, &g, want_input))
        .collect();

    let mut kernel = vec![T::zero(); filter.kernel.len()];
    let mut bias = vec![T::zero(); filter.c_out];
    let mut gin = Vec::with_capacity(if want_input { s.len() } else { 0 });
    for (gi, gk, gb) in parts {
        for (a, b) in kernel.iter_mut().zip(&gk) {
            *a += *b;
        }
        for (a, b) in bias.iter_mut().zip(&gb) {
            *a += *b;
        }
        gin.extend_from_slice(&gi);
    }
    let gin = if want_input {
        Some(Tensor::from_vec(s, gin)?)
    } else {
        None
    };
    Ok((gin, ConvGrads { kernel, bias }))
}

fn backward_item<T: Real>(
    input: &[T],
    grad_out: &[T],
    f: &ConvFilter<T>,
    wt: &[T],
    g: &Geometry,
    want_input: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (cin, cout) = (f.c_in, f.c_out);
    let tap_len = cin * cout;
    let mut gin = if want_input {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    let mut gk = vec![T::zero(); f.kernel.len()];
    let mut gb = vec![T::zero(); cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &grad_out[(oy * g.ow + ox) * cout..][..cout];
            if go.iter().all(|&v| v == T::zero()) {
                continue;
            }
            for (b, &v) in gb.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..f.kh {
                let Some(iy) = g.source(oy, ky, f.stride, g.off_y, g.h) else {
                    continue;
                };
                for kx in 0..f.kw {
                    let Some(ix) = g.source(ox, kx, f.stride, g.off_x, g.w) else {
                        continue;
                    };
                    let tap = ky * f.kw + kx;
                    let base = (iy * g.w + ix) * cin;
                    let px = &input[base..base + cin];
                    let gk_tap = &mut gk[tap * tap_len..(tap + 1) * tap_len];
                    for (ci, &v) in px.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        for (acc, &gv) in gk_tap[ci * cout..(ci + 1) * cout].iter_mut().zip(go) {
                            *acc += v * gv;
                        }
                    }
                    if want_input {
                        let gpx = &mut gin[base..base + cin];
                        let wt_tap = &wt[tap * tap_len..(tap + 1) * tap_len];
                        for (co, &gv) in go.iter().enumerate() {
                            if gv == T::zero() {
                                continue;
                            }
                            for (acc, &wv) in gpx.iter_mut().zip(&wt_tap[co * cin..(co + 1) * cin]) {
                                *acc += gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gin, gk, gb)
}

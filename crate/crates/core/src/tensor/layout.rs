use super::{Real, Shape, Tensor, Window};
use crate::error::{Error, Result};

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::config("concat_channels needs at least one tensor"))?
        .shape();
    let mut total = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::config(format!(
                "concat_channels: {s} does not share n,h,w with {first}"
            )));
        }
        total += s.c;
    }
    let out_shape = first.with_channels(total);
    let mut data = Vec::with_capacity(out_shape.len());
    for p in 0..first.n * first.h * first.w {
        for t in inputs {
            let c = t.shape().c;
            data.extend_from_slice(&t.data()[p * c..(p + 1) * c]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Splits an upstream gradient into per-input channel ranges.
pub fn concat_channels_backward<T: Real>(grad_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = grad_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::config(format!(
            "concat backward: channel split {channels:?} does not sum to {}",
            s.c
        )));
    }
    let mut outs: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * s.pixels() * c))
        .collect();
    for px in grad_out.data().chunks(s.c) {
        let mut start = 0;
        for (out, &c) in outs.iter_mut().zip(channels) {
            out.extend_from_slice(&px[start..start + c]);
            start += c;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(s.with_channels(c), d))
        .collect()
}

/// Copies the spatial window `rect` out of every batch item.
pub fn slice_patch<T: Real>(input: &Tensor<T>, rect: Window) -> Result<Tensor<T>> {
    let s = input.shape();
    if !rect.fits(s.h, s.w) {
        return Err(Error::Index(format!(
            "window {}x{} at ({}, {}) exceeds {}x{} input",
            rect.h, rect.w, rect.y, rect.x, s.h, s.w
        )));
    }
    let out_shape = Shape::new(s.n, rect.h, rect.w, s.c)?;
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for y in rect.y..rect.y + rect.h {
            let start = s.offset(n, y, rect.x, 0);
            data.extend_from_slice(&input.data()[start..start + rect.w * s.c]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Scatters a window gradient into a zero tensor of the source shape.
pub fn slice_patch_backward<T: Real>(grad_out: &Tensor<T>, source: Shape, rect: Window) -> Result<Tensor<T>> {
    if !rect.fits(source.h, source.w) {
        return Err(Error::Index(format!(
            "window {}x{} at ({}, {}) exceeds {}x{} source",
            rect.h, rect.w, rect.y, rect.x, source.h, source.w
        )));
    }
    grad_out.expect_shape(
        Shape {
            h: rect.h,
            w: rect.w,
            ..source
        },
        "slice_patch_backward grad_out",
    )?;
    let mut grad = Tensor::zeros(source);
    let row = rect.w * source.c;
    for n in 0..source.n {
        for (i, y) in (rect.y..rect.y + rect.h).enumerate() {
            let dst = source.offset(n, y, rect.x, 0);
            let src = (n * rect.h + i) * row;
            grad.data_mut()[dst..dst + row].copy_from_slice(&grad_out.data()[src..src + row]);
        }
    }
    Ok(grad)
}

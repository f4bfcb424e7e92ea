//! Convolution stack shared by the scene network and the baselines.

use crate::error::Result;
use crate::tensor::conv::backward_impl;
use crate::tensor::{conv2d_forward, Activation, ConvFilter, ConvGrads, Real, Tensor};

/// Layer inputs and pre-activations recorded by [`forward`].
#[derive(Clone, Debug)]
pub(crate) struct HeadTrace<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

/// Zeroes every pixel whose mask entry is false. `mask` has one entry per
/// spatial position across the batch.
fn apply_mask<T: Real>(t: &mut Tensor<T>, mask: &[bool]) {
    let c = t.shape().c;
    for (px, &keep) in t.data_mut().chunks_mut(c).zip(mask) {
        if !keep {
            px.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Runs the stack. Hidden activations outside `mask` are forced to zero, so
/// a patch grown by the stack's halo reproduces the zero padding that the
/// full-image pass sees at the image border.
pub(crate) fn forward<T: Real>(
    convs: &[ConvFilter<T>],
    acts: &[Activation],
    input: Tensor<T>,
    mask: Option<&[bool]>,
    keep_trace: bool,
) -> Result<(Tensor<T>, Option<HeadTrace<T>>)> {
    let mut trace = HeadTrace {
        inputs: Vec::new(),
        pre: Vec::new(),
    };
    let mut x = input;
    let last = convs.len() - 1;
    for (i, (f, act)) in convs.iter().zip(acts).enumerate() {
        let pre = conv2d_forward(&x, f)?;
        let mut y = act.forward(&pre);
        if i < last {
            if let Some(m) = mask {
                apply_mask(&mut y, m);
            }
        }
        if keep_trace {
            trace.inputs.push(x);
            trace.pre.push(pre);
        }
        x = y;
    }
    Ok((x, keep_trace.then_some(trace)))
}

/// Gradient w.r.t. the head input (when requested) and per-conv gradients.
pub(crate) type HeadGrads<T> = (Option<Tensor<T>>, Vec<ConvGrads<T>>);

pub(crate) fn backward<T: Real>(
    convs: &[ConvFilter<T>],
    acts: &[Activation],
    trace: &HeadTrace<T>,
    grad_out: &Tensor<T>,
    mask: Option<&[bool]>,
    want_input: bool,
) -> Result<HeadGrads<T>> {
    let last = convs.len() - 1;
    let mut grads = Vec::with_capacity(convs.len());
    let mut g = grad_out.clone();
    let mut input_grad = None;
    for i in (0..convs.len()).rev() {
        if i < last {
            if let Some(m) = mask {
                apply_mask(&mut g, m);
            }
        }
        let g_pre = acts[i].backward(&trace.pre[i], &g)?;
        let need_input = i > 0 || want_input;
        let (gin, cg) = backward_impl(&trace.inputs[i], &convs[i], &g_pre, need_input)?;
        grads.push(cg);
        match gin {
            Some(t) if i > 0 => g = t,
            other => input_grad = other,
        }
    }
    grads.reverse();
    Ok((input_grad, grads))
}

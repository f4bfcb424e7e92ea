//! The scene-dependent rendering network and the context-free baselines.
//!
//! Scene network, per image:
//!
//! ```text
//! rgb -> (L, r, g) -> learnable histogram -> pyramid (s1, s2, s3, global)
//!     -> per-pixel [rgb, s1, s2, s3, global] -> 1x1 conv -> ReLU
//!     -> 3x3 conv -> ReLU -> 3x3 conv -> prediction
//! ```
//!
//! Training evaluates the convolution head on patches only. Each patch is
//! grown by the head's halo and hidden activations outside the image are
//! zeroed, which makes patch predictions bit-identical to the matching crop
//! of a full-image prediction.

mod head;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colorhist::{
    hist_backward, hist_forward, rgb_to_lrg, rgb_to_lrg_backward, HistogramParams, WidthMode, HIST_CHANNELS,
};
use crate::error::{Error, Result};
use crate::pyramid::{
    assemble_backward, assemble_full, assemble_patches, build_pyramid, feature_channels, pyramid_backward,
    PatchRect, PyramidFeatures,
};
use crate::tensor::{
    slice_patch, slice_patch_backward, Activation, ConvFilter, ConvGrads, Padding, Real, Shape, Tensor,
    Window,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "raw2srgb")]
    RawToSrgb,
    #[serde(rename = "srgb2raw")]
    SrgbToRaw,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::RawToSrgb => "raw2srgb",
            Direction::SrgbToRaw => "srgb2raw",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw2srgb" => Ok(Direction::RawToSrgb),
            "srgb2raw" => Ok(Direction::SrgbToRaw),
            other => Err(Error::config(format!(
                "unknown direction {other:?}, expected raw2srgb or srgb2raw"
            ))),
        }
    }
}

/// Network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Histogram pyramid context plus 1x1, 3x3, 3x3 head.
    Scene,
    /// Pointwise RGB-to-RGB map: three 1x1 convolutions (two hidden layers).
    Mlp,
    /// Five 3x3 convolutions, 11x11 receptive field, no pooling.
    Srcnn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Scene => "scene",
            Architecture::Mlp => "mlp",
            Architecture::Srcnn => "srcnn",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene" => Ok(Architecture::Scene),
            "mlp" => Ok(Architecture::Mlp),
            "srcnn" => Ok(Architecture::Srcnn),
            other => Err(Error::config(format!(
                "unknown architecture {other:?}, expected scene, mlp or srcnn"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub direction: Direction,
    pub arch: Architecture,
    pub bins: usize,
    pub hidden: usize,
    /// Stop gradients at the context features (histogram stays at init).
    pub context_frozen: bool,
    pub width_mode: WidthMode,
    /// Nonlinearity after every hidden convolution.
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn new(direction: Direction, arch: Architecture) -> Self {
        NetworkConfig {
            direction,
            arch,
            bins: 6,
            hidden: 64,
            context_frozen: false,
            width_mode: WidthMode::HalfWidth,
            activation: Activation::Relu,
        }
    }

    pub fn scene(direction: Direction) -> Self {
        Self::new(direction, Architecture::Scene)
    }

    pub fn with_hidden(self, hidden: usize) -> Self {
        NetworkConfig { hidden, ..self }
    }

    /// Channels fed to the first convolution.
    pub fn input_channels(&self) -> usize {
        match self.arch {
            Architecture::Scene => feature_channels(HIST_CHANNELS * self.bins),
            Architecture::Mlp | Architecture::Srcnn => 3,
        }
    }

    /// `(kernel, c_in, c_out)` of each convolution.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let h = self.hidden;
        match self.arch {
            Architecture::Scene => vec![(1, self.input_channels(), h), (3, h, h), (3, h, 3)],
            Architecture::Mlp => vec![(1, 3, h), (1, h, h), (1, h, 3)],
            Architecture::Srcnn => vec![(3, 3, h), (3, h, h), (3, h, h), (3, h, h), (3, h, 3)],
        }
    }

    fn activations(&self) -> Vec<Activation> {
        let n = self.layer_shapes().len();
        (0..n)
            .map(|i| {
                if i + 1 < n {
                    self.activation
                } else {
                    Activation::Identity
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden channel count must be >= 1"));
        }
        if self.arch == Architecture::Scene && self.bins < 2 {
            return Err(Error::config("scene network needs >= 2 histogram bins"));
        }
        Ok(())
    }
}

/// First and second Adam moments per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

/// Named view of one trainable array.
#[derive(Clone, Debug)]
pub struct ParamBlock<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [T],
}

/// All trainable arrays of one network plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: NetworkConfig,
    /// Present for [`Architecture::Scene`] only.
    pub hist: Option<HistogramParams<T>>,
    pub convs: Vec<ConvFilter<T>>,
    pub adam: AdamState<T>,
}

/// Gradients aligned with [`ModelParams::blocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients<T = f32> {
    pub hist_centers: Vec<T>,
    pub hist_widths: Vec<T>,
    pub convs: Vec<ConvGrads<T>>,
}

impl<T: Real> ParamGradients<T> {
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        if !self.hist_centers.is_empty() {
            out.push(&self.hist_centers);
            out.push(&self.hist_widths);
        }
        for c in &self.convs {
            out.push(&c.kernel);
            out.push(&c.bias);
        }
        out
    }

    /// Concatenation matching [`ModelParams::flatten`]. Frozen histogram
    /// parameters contribute zeros.
    pub fn flatten(&self, params: &ModelParams<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(params.parameter_count());
        if let Some(h) = &params.hist {
            let n = h.centers.len();
            for block in [&self.hist_centers, &self.hist_widths] {
                if block.is_empty() {
                    out.extend(std::iter::repeat_n(T::zero(), n));
                } else {
                    out.extend_from_slice(block);
                }
            }
        }
        for c in &self.convs {
            out.extend_from_slice(&c.kernel);
            out.extend_from_slice(&c.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Everything [`ModelParams::backward`] needs from a patchwise forward pass.
#[derive(Clone, Debug)]
pub struct PatchTrace<T = f32> {
    image: Tensor<T>,
    rects: Vec<PatchRect>,
    halo: usize,
    ext_shape: Shape,
    mask: Option<Vec<bool>>,
    context: Option<ContextTrace<T>>,
    head: head::HeadTrace<T>,
}

impl<T: Real> PatchTrace<T> {
    pub fn rects(&self) -> &[PatchRect] {
        &self.rects
    }

    pub fn image_shape(&self) -> Shape {
        self.image.shape()
    }
}

#[derive(Clone, Debug)]
struct ContextTrace<T> {
    lrg: Tensor<T>,
    hist_shape: Shape,
    pyramid: PyramidFeatures<T>,
}

impl<T: Real> ModelParams<T> {
    /// Kaiming-uniform convolution weights, zero biases, default histogram.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for (conv, (k, cin, cout)) in params.convs.iter_mut().zip(config.layer_shapes()) {
            *conv = ConvFilter::kaiming(k, cin, cout, rng)?;
        }
        Ok(params)
    }

    /// The architecture of `config` with all convolution weights zero, the
    /// default histogram and fresh optimizer state.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let hist = match config.arch {
            Architecture::Scene => Some(HistogramParams::init_default(config.bins, config.width_mode)?),
            _ => None,
        };
        let convs = config
            .layer_shapes()
            .into_iter()
            .map(|(k, cin, cout)| ConvFilter::zeros(k, k, cin, cout, 1, Padding::Same))
            .collect::<Result<Vec<_>>>()?;
        let mut params = ModelParams {
            config,
            hist,
            convs,
            adam: AdamState {
                step: 0,
                first: Vec::new(),
                second: Vec::new(),
            },
        };
        params.reset_optimizer();
        Ok(params)
    }

    /// Zeroes the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        let zeros: Vec<Vec<T>> = self
            .blocks()
            .iter()
            .map(|b| vec![T::zero(); b.values.len()])
            .collect();
        self.adam = AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        };
    }

    pub fn blocks(&self) -> Vec<ParamBlock<'_, T>> {
        let mut out = Vec::new();
        if let Some(h) = &self.hist {
            out.push(ParamBlock {
                name: "hist.centers".into(),
                dims: vec![HIST_CHANNELS, h.bins],
                values: &h.centers,
            });
            out.push(ParamBlock {
                name: "hist.widths".into(),
                dims: vec![HIST_CHANNELS, h.bins],
                values: &h.widths,
            });
        }
        for (i, c) in self.convs.iter().enumerate() {
            out.push(ParamBlock {
                name: format!("conv{i}.kernel"),
                dims: vec![c.kh, c.kw, c.c_in, c.c_out],
                values: &c.kernel,
            });
            out.push(ParamBlock {
                name: format!("conv{i}.bias"),
                dims: vec![c.c_out],
                values: &c.bias,
            });
        }
        out
    }

    /// Mutable parameter arrays in [`blocks`](Self::blocks) order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        if let Some(h) = &mut self.hist {
            out.push(&mut h.centers);
            out.push(&mut h.widths);
        }
        for c in &mut self.convs {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        out
    }

    /// All parameters concatenated in block order.
    pub fn flatten(&self) -> Vec<T> {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let total = self.parameter_count();
        if flat.len() != total {
            return Err(Error::config(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut rest = flat;
        for b in self.blocks_mut() {
            let (head, tail) = rest.split_at(b.len());
            b.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn zero_gradients(&self) -> ParamGradients<T> {
        let (hc, hw) = match &self.hist {
            Some(h) => (vec![T::zero(); h.centers.len()], vec![T::zero(); h.widths.len()]),
            None => (Vec::new(), Vec::new()),
        };
        ParamGradients {
            hist_centers: hc,
            hist_widths: hw,
            convs: self
                .convs
                .iter()
                .map(|c| ConvGrads {
                    kernel: vec![T::zero(); c.kernel.len()],
                    bias: vec![T::zero(); c.bias.len()],
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |c: &ConvFilter<T>| ConvFilter {
            kh: c.kh,
            kw: c.kw,
            c_in: c.c_in,
            c_out: c.c_out,
            stride: c.stride,
            padding: c.padding,
            kernel: cast_vec(&c.kernel),
            bias: cast_vec(&c.bias),
        };
        ModelParams {
            config: self.config,
            hist: self.hist.as_ref().map(|h| h.cast()),
            convs: self.convs.iter().map(conv).collect(),
            adam: AdamState {
                step: self.adam.step,
                first: self.adam.first.iter().map(|v| cast_vec(v)).collect(),
                second: self.adam.second.iter().map(|v| cast_vec(v)).collect(),
            },
        }
    }

    /// Pixels of surrounding context one output pixel of the head reads.
    pub fn halo(&self) -> usize {
        self.convs.iter().map(|c| c.halo()).sum()
    }

    fn activations(&self) -> Vec<Activation> {
        self.config.activations()
    }

    fn validate_image(&self, image: &Tensor<T>) -> Result<()> {
        let s = image.shape();
        if s.c != 3 {
            return Err(Error::InvalidInput(format!(
                "expected an RGB image, got shape {s}"
            )));
        }
        if !image.is_finite() {
            return Err(Error::InvalidInput("image contains non-finite values".into()));
        }
        Ok(())
    }

    fn hist_params(&self) -> Result<&HistogramParams<T>> {
        self.hist
            .as_ref()
            .ok_or_else(|| Error::config(format!("{} network has no histogram context", self.config.arch)))
    }

    fn context_trace(&self, image: &Tensor<T>) -> Result<ContextTrace<T>> {
        let lrg = rgb_to_lrg(image)?;
        let hist = hist_forward(&lrg, self.hist_params()?)?;
        let pyramid = build_pyramid(&hist)?;
        Ok(ContextTrace {
            lrg,
            hist_shape: hist.shape(),
            pyramid,
        })
    }

    /// Histogram pyramid of `image`; `None` for context-free baselines.
    pub fn context(&self, image: &Tensor<T>) -> Result<Option<PyramidFeatures<T>>> {
        self.validate_image(image)?;
        match self.config.arch {
            Architecture::Scene => Ok(Some(self.context_trace(image)?.pyramid)),
            _ => Ok(None),
        }
    }

    /// Full-resolution prediction for a batch of images.
    pub fn forward_full(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.context(image)?;
        self.forward_with_context(image, ctx.as_ref())
    }

    /// Full-resolution prediction from an explicitly supplied pyramid (which
    /// may have been edited). Baselines ignore `context`.
    pub fn forward_with_context(
        &self,
        image: &Tensor<T>,
        context: Option<&PyramidFeatures<T>>,
    ) -> Result<Tensor<T>> {
        self.validate_image(image)?;
        let features = match self.config.arch {
            Architecture::Scene => {
                let pyr = context.ok_or_else(|| Error::config("scene network needs a context pyramid"))?;
                assemble_full(pyr, image)?
            }
            _ => image.clone(),
        };
        let (out, _) = head::forward(&self.convs, &self.activations(), features, None, false)?;
        Ok(out)
    }

    /// Predictions for the patches `rects`, `(rects, size, size, 3)`, plus the
    /// trace needed for [`backward`](Self::backward).
    pub fn forward_patchwise(
        &self,
        image: &Tensor<T>,
        rects: &[PatchRect],
    ) -> Result<(Tensor<T>, PatchTrace<T>)> {
        self.validate_image(image)?;
        let first = rects.first().ok_or_else(|| Error::config("patch set is empty"))?;
        let size = first.size;
        for r in rects {
            r.check(image.shape())?;
            if r.size != size {
                return Err(Error::config("all patches in a set must share one size"));
            }
        }
        let halo = self.halo();
        let ext = size + 2 * halo;
        let context = match self.config.arch {
            Architecture::Scene => Some(self.context_trace(image)?),
            _ => None,
        };
        let features = match &context {
            Some(ctx) => assemble_patches(&ctx.pyramid, image, rects, halo)?,
            None => crop_with_halo(image, rects, halo)?,
        };
        let mask = (halo > 0).then(|| inside_mask(image.shape(), rects, halo));
        let (out, trace) = head::forward(&self.convs, &self.activations(), features, mask.as_deref(), true)?;
        let ext_shape = out.shape();
        let pred = slice_patch(&out, Window::new(halo, halo, size, size))?;
        debug_assert_eq!(ext_shape.h, ext);
        Ok((
            pred,
            PatchTrace {
                image: image.clone(),
                rects: rects.to_vec(),
                halo,
                ext_shape,
                mask,
                context,
                head: trace.expect("trace requested"),
            },
        ))
    }

    /// Parameter gradients for upstream `grad_pred` on the patch predictions.
    pub fn backward(&self, trace: &PatchTrace<T>, grad_pred: &Tensor<T>) -> Result<ParamGradients<T>> {
        Ok(self.backward_impl(trace, grad_pred, false)?.0)
    }

    /// Like [`backward`](Self::backward), also returning the gradient with
    /// respect to the input image.
    pub fn backward_with_input(
        &self,
        trace: &PatchTrace<T>,
        grad_pred: &Tensor<T>,
    ) -> Result<(ParamGradients<T>, Tensor<T>)> {
        let (g, img) = self.backward_impl(trace, grad_pred, true)?;
        Ok((g, img.expect("input gradient requested")))
    }

    fn backward_impl(
        &self,
        trace: &PatchTrace<T>,
        grad_pred: &Tensor<T>,
        want_image: bool,
    ) -> Result<(ParamGradients<T>, Option<Tensor<T>>)> {
        let size = trace.rects[0].size;
        let s = trace.ext_shape;
        grad_pred
            .expect_shape(
                Shape {
                    h: size,
                    w: size,
                    ..s
                },
                "backward grad_pred",
            )
            .map_err(|e| Error::config(format!("stale patch geometry: {e}")))?;
        let window = Window::new(trace.halo, trace.halo, size, size);
        let g_ext = slice_patch_backward(grad_pred, s, window)?;

        let train_context = self.config.arch == Architecture::Scene && !self.config.context_frozen;
        let want_features = want_image || train_context;
        let (g_feat, conv_grads) = head::backward(
            &self.convs,
            &self.activations(),
            &trace.head,
            &g_ext,
            trace.mask.as_deref(),
            want_features,
        )?;
        let mut grads = self.zero_gradients();
        grads.convs = conv_grads;
        let Some(g_feat) = g_feat else {
            return Ok((grads, None));
        };

        let image_shape = trace.image.shape();
        match &trace.context {
            Some(ctx) => {
                let (gp, mut g_img) = assemble_backward(
                    &g_feat,
                    &trace.rects,
                    trace.halo,
                    ctx.pyramid.shapes(),
                    image_shape,
                )?;
                if train_context || want_image {
                    let g_hist = pyramid_backward(ctx.hist_shape, &gp)?;
                    let hg = hist_backward(&ctx.lrg, self.hist_params()?, &g_hist)?;
                    if train_context {
                        grads.hist_centers = hg.centers;
                        grads.hist_widths = hg.widths;
                    }
                    if want_image {
                        let g_rgb = rgb_to_lrg_backward(&trace.image, &hg.input)?;
                        for (a, &b) in g_img.data_mut().iter_mut().zip(g_rgb.data()) {
                            *a += b;
                        }
                    }
                }
                Ok((grads, want_image.then_some(g_img)))
            }
            None => {
                let g_img = crop_with_halo_backward(&g_feat, image_shape, &trace.rects, trace.halo)?;
                Ok((grads, want_image.then_some(g_img)))
            }
        }
    }
}

/// Context-free prediction of a baseline network.
pub fn forward_baseline<T: Real>(params: &ModelParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    if params.config.arch == Architecture::Scene {
        return Err(Error::config("forward_baseline called with a scene network"));
    }
    params.forward_full(image)
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.as_f64())).collect()
}

/// Per ext-patch position: does it fall inside the image?
fn inside_mask(image: Shape, rects: &[PatchRect], halo: usize) -> Vec<bool> {
    let mut mask = Vec::new();
    for r in rects {
        let ext = r.size + 2 * halo;
        for py in 0..ext {
            let y = r.y as isize + py as isize - halo as isize;
            for px in 0..ext {
                let x = r.x as isize + px as isize - halo as isize;
                mask.push(y >= 0 && x >= 0 && (y as usize) < image.h && (x as usize) < image.w);
            }
        }
    }
    mask
}

fn crop_with_halo<T: Real>(image: &Tensor<T>, rects: &[PatchRect], halo: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    let ext = rects[0].size + 2 * halo;
    let mut out = Tensor::zeros(Shape::new(rects.len(), ext, ext, s.c)?);
    for (i, r) in rects.iter().enumerate() {
        for py in 0..ext {
            let y = r.y as isize + py as isize - halo as isize;
            if y < 0 || y >= s.h as isize {
                continue;
            }
            for px in 0..ext {
                let x = r.x as isize + px as isize - halo as isize;
                if x < 0 || x >= s.w as isize {
                    continue;
                }
                out.pixel_mut(i, py, px)
                    .copy_from_slice(image.pixel(r.item, y as usize, x as usize));
            }
        }
    }
    Ok(out)
}

fn crop_with_halo_backward<T: Real>(
    grad: &Tensor<T>,
    image: Shape,
    rects: &[PatchRect],
    halo: usize,
) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(image);
    let ext = rects[0].size + 2 * halo;
    grad.expect_shape(Shape::new(rects.len(), ext, ext, image.c)?, "crop backward")?;
    for (i, r) in rects.iter().enumerate() {
        for py in 0..ext {
            let y = r.y as isize + py as isize - halo as isize;
            if y < 0 || y >= image.h as isize {
                continue;
            }
            for px in 0..ext {
                let x = r.x as isize + px as isize - halo as isize;
                if x < 0 || x >= image.w as isize {
                    continue;
                }
                for (a, &b) in out
                    .pixel_mut(r.item, y as usize, x as usize)
                    .iter_mut()
                    .zip(grad.pixel(i, py, px))
                {
                    *a += b;
                }
            }
        }
    }
    Ok(out)
}
